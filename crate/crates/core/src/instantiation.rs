//! Disciplined instantiation: equal-cardinality, sorted-unique instances for
//! every virtual element, drawn by seeded peer sampling with hash checking.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{ElementId, EntityType, NetworkSchema, Scope, VirtualElement};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstantiationError {
    #[error("`{0}` is not a global virtual element")]
    NotGlobal(String),
    #[error("`{0}` is not a local virtual element")]
    NotLocal(String),
    #[error("an instance needs at least one member")]
    EmptyInstance,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot draw instance {requested} of `{element}`: only {capacity} unique instances exist")]
    ExhaustedResampling {
        element: String,
        requested: u128,
        capacity: u128,
    },
    #[error("`{element}` has no instance for owner {owner}")]
    IncompletePool { element: String, owner: u32 },
    #[error("instantiation rule violated: {0}")]
    RuleViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DIConfig {
    pub n_global: usize,
    pub n_local: usize,
    pub rng_seed: u64,
    pub max_resample: usize,
}

impl Default for DIConfig {
    fn default() -> Self {
        DIConfig {
            n_global: 20,
            n_local: 10,
            rng_seed: 0,
            max_resample: 1000,
        }
    }
}

impl DIConfig {
    pub fn validate(&self) -> Result<(), InstantiationError> {
        if self.n_local == 0 || self.n_local > self.n_global {
            return Err(InstantiationError::InvalidConfig(format!(
                "need 0 < n_local ({}) <= n_global ({})",
                self.n_local, self.n_global
            )));
        }
        if self.max_resample == 0 {
            return Err(InstantiationError::InvalidConfig("max_resample must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of distinct local instances the configuration can produce.
    pub fn capacity(&self) -> u128 {
        binomial(self.n_global as u64, self.n_local as u64)
    }
}

pub fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub element: ElementId,
    pub owner: Option<u32>,
    /// Sorted ascending.
    pub members: Vec<u32>,
    pub hash_id: u64,
}

impl Instance {
    fn new(element: ElementId, owner: Option<u32>, mut members: Vec<u32>) -> Result<Self, InstantiationError> {
        members.sort_unstable();
        let hash_id = hash_id(&members)?;
        Ok(Instance {
            element,
            owner,
            members,
            hash_id,
        })
    }
}

/// Order-insensitive 64-bit digest of a member list.
pub fn hash_id(members: &[u32]) -> Result<u64, InstantiationError> {
    if members.is_empty() {
        return Err(InstantiationError::EmptyInstance);
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let joined = sorted.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    let mut h = FnvHasher::default();
    h.write(joined.as_bytes());
    Ok(h.finish())
}

/// Global instance: members `0..n_global`.
pub fn instantiate_global(element: &VirtualElement, config: &DIConfig) -> Result<Instance, InstantiationError> {
    if element.scope != Scope::Global {
        return Err(InstantiationError::NotGlobal(element.element.id.to_string()));
    }
    if config.n_global == 0 {
        return Err(InstantiationError::EmptyInstance);
    }
    Instance::new(element.element.id.clone(), None, (0..config.n_global as u32).collect())
}

#[derive(Debug, Clone)]
pub struct InstancePool {
    pub config: DIConfig,
    rng: ChaCha8Rng,
    global_instances: BTreeMap<ElementId, Instance>,
    local_instances: BTreeMap<(ElementId, u32), Instance>,
    /// Local elements whose instances were derived by inverting another element.
    derived: BTreeSet<ElementId>,
    hash_index: BTreeMap<u64, Vec<(ElementId, u32)>>,
}

impl PartialEq for InstancePool {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.global_instances == other.global_instances
            && self.local_instances == other.local_instances
            && self.derived == other.derived
    }
}

impl InstancePool {
    pub fn new(config: DIConfig) -> Result<Self, InstantiationError> {
        config.validate()?;
        Ok(InstancePool {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            config,
            global_instances: BTreeMap::new(),
            local_instances: BTreeMap::new(),
            derived: BTreeSet::new(),
            hash_index: BTreeMap::new(),
        })
    }

    pub fn insert_global(&mut self, inst: Instance) {
        self.global_instances.insert(inst.element.clone(), inst);
    }

    pub fn global(&self, element: &str) -> Option<&Instance> {
        self.global_instances.get(element)
    }

    pub fn local(&self, element: &str, owner: u32) -> Option<&Instance> {
        self.local_instances.get(&(ElementId::new(element), owner))
    }

    pub fn locals_of<'a>(&'a self, element: &'a str) -> impl Iterator<Item = &'a Instance> + 'a {
        self.local_instances
            .iter()
            .filter(move |((e, _), _)| e.as_str() == element)
            .map(|(_, i)| i)
    }

    pub fn local_elements(&self) -> BTreeSet<ElementId> {
        self.local_instances.keys().map(|(e, _)| e.clone()).collect()
    }

    pub fn is_derived(&self, element: &str) -> bool {
        self.derived.contains(element)
    }

    pub fn instances(&self) -> impl Iterator<Item = &Instance> {
        self.global_instances.values().chain(self.local_instances.values())
    }

    fn count(&self, element: &ElementId) -> usize {
        self.locals_of(element.as_str()).count()
    }

    /// Owner of the instance of `element` with exactly these members.
    pub fn lookup(&self, element: &str, members: &[u32]) -> Option<u32> {
        let mut sorted = members.to_vec();
        sorted.sort_unstable();
        let h = hash_id(&sorted).ok()?;
        self.hash_index.get(&h)?.iter().find_map(|(e, owner)| {
            let inst = &self.local_instances[&(e.clone(), *owner)];
            (e.as_str() == element && inst.members == sorted).then_some(*owner)
        })
    }

    fn contains_members(&self, element: &ElementId, members: &[u32], hash: u64) -> bool {
        self.hash_index.get(&hash).is_some_and(|v| {
            v.iter().any(|(e, o)| e == element && self.local_instances[&(e.clone(), *o)].members == members)
        })
    }

    fn insert_local(&mut self, inst: Instance) {
        let owner = inst.owner.expect("local instance has an owner");
        self.hash_index
            .entry(inst.hash_id)
            .or_default()
            .push((inst.element.clone(), owner));
        self.local_instances.insert((inst.element.clone(), owner), inst);
    }

    fn remove_element(&mut self, element: &ElementId) {
        self.local_instances.retain(|(e, _), _| e != element);
        for v in self.hash_index.values_mut() {
            v.retain(|(e, _)| e != element);
        }
        self.hash_index.retain(|_, v| !v.is_empty());
        self.derived.remove(element);
    }

    /// Draws the next instance of a local element (owner = number drawn so far).
    ///
    /// Uniform sampling without replacement from the mother set, redrawn on a
    /// hash hit with equal members. When every random draw collides the first
    /// unused subset in lexicographic order is taken, so exhaustion is reported
    /// exactly when the combinatorial capacity is used up.
    pub fn instantiate_local(&mut self, element: &VirtualElement, mother: &Instance) -> Result<Instance, InstantiationError> {
        if element.scope != Scope::Local {
            return Err(InstantiationError::NotLocal(element.element.id.to_string()));
        }
        let k = self.config.n_local;
        let n = mother.members.len();
        if k > n {
            return Err(InstantiationError::InvalidConfig(format!(
                "n_local {k} exceeds mother size {n}"
            )));
        }
        let id = element.element.id.clone();
        let existing = self.count(&id) as u128;
        let capacity = binomial(n as u64, k as u64);
        if existing >= capacity {
            return Err(InstantiationError::ExhaustedResampling {
                element: id.to_string(),
                requested: existing + 1,
                capacity,
            });
        }
        let owner = existing as u32;
        for _ in 0..self.config.max_resample {
            let picks = rand::seq::index::sample(&mut self.rng, n, k);
            let mut members: Vec<u32> = picks.iter().map(|i| mother.members[i]).collect();
            members.sort_unstable();
            let h = hash_id(&members)?;
            if !self.contains_members(&id, &members, h) {
                let inst = Instance::new(id.clone(), Some(owner), members)?;
                self.insert_local(inst.clone());
                return Ok(inst);
            }
        }
        log::debug!("random draws for `{id}` collided {} times; enumerating", self.config.max_resample);
        let mut combo: Vec<usize> = (0..k).collect();
        loop {
            let members: Vec<u32> = combo.iter().map(|&i| mother.members[i]).collect();
            let mut sorted = members.clone();
            sorted.sort_unstable();
            let h = hash_id(&sorted)?;
            if !self.contains_members(&id, &sorted, h) {
                let inst = Instance::new(id.clone(), Some(owner), sorted)?;
                self.insert_local(inst.clone());
                return Ok(inst);
            }
            if !next_combination(&mut combo, n) {
                break;
            }
        }
        Err(InstantiationError::ExhaustedResampling {
            element: id.to_string(),
            requested: existing + 1,
            capacity,
        })
    }

    /// Installs user-provided instances for one element (owners `0..len`).
    pub fn set_explicit(&mut self, element: &ElementId, sets: &[Vec<u32>], mother: &Instance) -> Result<(), InstantiationError> {
        self.remove_element(element);
        for (owner, set) in sets.iter().enumerate() {
            if let Some(bad) = set.iter().find(|m| !mother.members.contains(m)) {
                return Err(InstantiationError::RuleViolation(format!(
                    "member {bad} of `{element}`[{owner}] is outside the mother set"
                )));
            }
            let inst = Instance::new(element.clone(), Some(owner as u32), set.clone())?;
            if self.contains_members(element, &inst.members, inst.hash_id) {
                return Err(InstantiationError::RuleViolation(format!(
                    "`{element}` instances repeat the member set {:?}",
                    inst.members
                )));
            }
            self.insert_local(inst);
        }
        Ok(())
    }

    /// Installs instances derived by inverting another element.
    pub fn set_derived(&mut self, element: &ElementId, map: &BTreeMap<u32, Vec<u32>>) -> Result<(), InstantiationError> {
        self.remove_element(element);
        for (owner, members) in map {
            let inst = Instance::new(element.clone(), Some(*owner), members.clone()).map_err(|_| {
                InstantiationError::RuleViolation(format!("derived `{element}`[{owner}] is empty"))
            })?;
            if self.contains_members(element, &inst.members, inst.hash_id) {
                return Err(InstantiationError::RuleViolation(format!(
                    "derived `{element}` instances repeat the member set {:?}",
                    inst.members
                )));
            }
            self.insert_local(inst);
        }
        self.derived.insert(element.clone());
        Ok(())
    }

    /// Checks equal cardinality, sorted uniqueness, and the subset and hash-index properties.
    pub fn check_invariants(&self) -> Result<(), InstantiationError> {
        for el in self.local_elements() {
            let insts: Vec<&Instance> = self.locals_of(el.as_str()).collect();
            if !self.is_derived(el.as_str()) {
                if let Some(bad) = insts.iter().find(|i| i.members.len() != self.config.n_local) {
                    return Err(InstantiationError::RuleViolation(format!(
                        "`{el}`[{:?}] has {} members, expected {}",
                        bad.owner,
                        bad.members.len(),
                        self.config.n_local
                    )));
                }
            }
            for (i, a) in insts.iter().enumerate() {
                if hash_id(&a.members)? != a.hash_id {
                    return Err(InstantiationError::RuleViolation(format!("stale hash for `{el}`")));
                }
                for b in &insts[i + 1..] {
                    if a.members == b.members {
                        return Err(InstantiationError::RuleViolation(format!(
                            "`{el}` owners {:?} and {:?} share members",
                            a.owner, b.owner
                        )));
                    }
                    if !self.is_derived(el.as_str()) && (is_subset(&a.members, &b.members) || is_subset(&b.members, &a.members)) {
                        return Err(InstantiationError::RuleViolation(format!(
                            "`{el}` has nested instances"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Inspect dump: one line per instance, sorted by (element, owner).
    pub fn dump(&self) -> String {
        let mut lines: Vec<(String, Option<u32>, String)> = self
            .instances()
            .map(|i| {
                let owner = i.owner.map_or("-".to_string(), |o| o.to_string());
                let members = i.members.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
                (
                    i.element.to_string(),
                    i.owner,
                    format!("element={} owner={owner} members={members} hash={:016x}", i.element, i.hash_id),
                )
            })
            .collect();
        lines.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
        let mut out = String::new();
        for (_, _, l) in lines {
            out.push_str(&l);
            out.push('\n');
        }
        out
    }
}

fn is_subset(a: &[u32], b: &[u32]) -> bool {
    a.len() < b.len() && a.iter().all(|x| b.binary_search(x).is_ok())
}

fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Transposes `forward` (owner -> members) into member -> owners.
///
/// Every owner of the forward element's owner range must have an instance;
/// each member of the universe gets an entry, possibly empty.
pub fn invert_membership(
    pool: &InstancePool,
    forward: &str,
    inverse_owners: &Instance,
) -> Result<BTreeMap<u32, Vec<u32>>, InstantiationError> {
    let n_owner = pool.config.n_global as u32;
    let mut out: BTreeMap<u32, Vec<u32>> = inverse_owners.members.iter().map(|&m| (m, Vec::new())).collect();
    for o in 0..n_owner {
        let inst = pool.local(forward, o).ok_or_else(|| InstantiationError::IncompletePool {
            element: forward.to_string(),
            owner: o,
        })?;
        for m in &inst.members {
            out.entry(*m).or_default().push(o);
        }
    }
    Ok(out)
}

/// Pairs of local elements that are transposes of each other
/// (Sessions-of-Link and Links-of-Session), sampled element first.
pub fn inverse_pairs(schema: &NetworkSchema) -> Vec<(ElementId, ElementId)> {
    let locals: Vec<&VirtualElement> = schema
        .elements()
        .filter_map(|e| e.as_virtual())
        .filter(|v| v.scope == Scope::Local)
        .collect();
    let owner_type = |v: &VirtualElement| {
        v.owner
            .as_ref()
            .and_then(|o| schema.get(o.as_str()))
            .map(|e| e.element_ref().entity_type)
    };
    let mut out = Vec::new();
    for a in &locals {
        for b in &locals {
            let (Some(oa), Some(ob)) = (owner_type(a), owner_type(b)) else { continue };
            if oa != ob && oa == b.member_entity_type && ob == a.member_entity_type && oa == EntityType::Link {
                out.push((a.element.id.clone(), b.element.id.clone()));
            }
        }
    }
    out
}

fn owner_entity(schema: &NetworkSchema, v: &VirtualElement) -> Option<EntityType> {
    v.owner
        .as_ref()
        .and_then(|o| schema.get(o.as_str()))
        .map(|e| e.element_ref().entity_type)
}

/// Builds the pool for a program: every global element, every referenced
/// local element, and both halves of any inverse pair touched by the program.
/// `explicit` replaces random draws for the named elements.
pub fn build_pool(
    schema: &NetworkSchema,
    referenced: &BTreeSet<ElementId>,
    config: DIConfig,
    explicit: &BTreeMap<ElementId, Vec<Vec<u32>>>,
) -> Result<InstancePool, InstantiationError> {
    let mut pool = InstancePool::new(config)?;
    let mut globals: BTreeMap<EntityType, Instance> = BTreeMap::new();
    for el in schema.elements() {
        if let Some(v) = el.as_virtual() {
            if v.scope == Scope::Global {
                let inst = instantiate_global(v, &config)?;
                globals.insert(v.member_entity_type, inst.clone());
                pool.insert_global(inst);
            }
        }
    }
    let mother_of = |v: &VirtualElement| {
        globals
            .get(&v.member_entity_type)
            .cloned()
            .ok_or_else(|| InstantiationError::NotGlobal(format!("no global for {}", v.member_entity_type)))
    };
    let owners_of = |v: &VirtualElement| -> Result<Instance, InstantiationError> {
        let t = owner_entity(schema, v).ok_or_else(|| InstantiationError::NotLocal(v.element.id.to_string()))?;
        globals
            .get(&t)
            .cloned()
            .ok_or_else(|| InstantiationError::NotGlobal(format!("no global for {t}")))
    };

    let pairs = inverse_pairs(schema);
    let mut handled: BTreeSet<ElementId> = BTreeSet::new();
    for (fwd, inv) in &pairs {
        if !(referenced.contains(fwd) || referenced.contains(inv)) {
            continue;
        }
        handled.insert(fwd.clone());
        handled.insert(inv.clone());
        let fv = schema
            .virtual_element(fwd)
            .map_err(|_| InstantiationError::NotLocal(fwd.to_string()))?
            .clone();
        let mother = mother_of(&fv)?;
        let inv_owners = mother.clone();
        let attempts = if explicit.contains_key(fwd) { 1 } else { config.max_resample };
        let mut last_err = None;
        for _ in 0..attempts {
            match explicit.get(fwd) {
                Some(sets) => pool.set_explicit(fwd, sets, &mother)?,
                None => {
                    pool.remove_element(fwd);
                    let n_owners = owners_of(&fv)?.members.len();
                    for _ in 0..n_owners {
                        pool.instantiate_local(&fv, &mother)?;
                    }
                }
            }
            let map = invert_membership(&pool, fwd.as_str(), &inv_owners)?;
            match pool.set_derived(inv, &map) {
                Ok(()) => {
                    last_err = None;
                    break;
                }
                Err(e) => last_err = Some(e),
            }
        }
        if let Some(e) = last_err {
            return Err(match e {
                InstantiationError::RuleViolation(m) if attempts > 1 => InstantiationError::ExhaustedResampling {
                    element: format!("{inv} ({m})"),
                    requested: config.n_global as u128,
                    capacity: config.capacity(),
                },
                e => e,
            });
        }
    }

    for id in referenced {
        if handled.contains(id) {
            continue;
        }
        let Ok(v) = schema.virtual_element(id) else { continue };
        if v.scope != Scope::Local {
            continue;
        }
        let v = v.clone();
        let mother = mother_of(&v)?;
        match explicit.get(id) {
            Some(sets) => pool.set_explicit(id, sets, &mother)?,
            None => {
                let n_owners = owners_of(&v)?.members.len();
                for _ in 0..n_owners {
                    pool.instantiate_local(&v, &mother)?;
                }
            }
        }
    }
    pool.check_invariants()?;
    Ok(pool)
}

/// Parses `"0,1;0,2;1,2"` into one member list per owner.
pub fn parse_instance_sets(text: &str) -> Result<Vec<Vec<u32>>, InstantiationError> {
    text.split(';')
        .map(|set| {
            set.split(',')
                .map(|m| {
                    m.trim()
                        .parse::<u32>()
                        .map_err(|_| InstantiationError::InvalidConfig(format!("bad member `{m}` in `{text}`")))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::build_default_schema;

    fn cfg(n: usize, k: usize, seed: u64) -> DIConfig {
        DIConfig {
            n_global: n,
            n_local: k,
            rng_seed: seed,
            max_resample: 1000,
        }
    }

    fn virt(name: &str) -> VirtualElement {
        build_default_schema().virtual_element(&name.into()).unwrap().clone()
    }

    #[test]
    fn global_members_are_a_range() {
        let i = instantiate_global(&virt("netlnk"), &DIConfig::default()).unwrap();
        assert_eq!(i.members, (0..20).collect::<Vec<u32>>());
        let i = instantiate_global(&virt("netses"), &cfg(3, 2, 0)).unwrap();
        assert_eq!(i.members, vec![0, 1, 2]);
        let i = instantiate_global(&virt("netses"), &cfg(1, 1, 0)).unwrap();
        assert_eq!(i.members, vec![0]);
        assert!(matches!(
            instantiate_global(&virt("lnkses"), &cfg(3, 2, 0)),
            Err(InstantiationError::NotGlobal(_))
        ));
    }

    #[test]
    fn hash_is_order_insensitive() {
        assert_eq!(hash_id(&[2, 1, 3]).unwrap(), hash_id(&[1, 2, 3]).unwrap());
        assert_ne!(hash_id(&[1, 2]).unwrap(), hash_id(&[1, 2, 3]).unwrap());
        assert_eq!(hash_id(&[5]).unwrap(), hash_id(&[5]).unwrap());
        assert!(matches!(hash_id(&[]), Err(InstantiationError::EmptyInstance)));
    }

    #[test]
    fn exhaustion_at_capacity() {
        let c = cfg(4, 2, 7);
        let mut pool = InstancePool::new(c).unwrap();
        let mother = instantiate_global(&virt("netses"), &c).unwrap();
        let v = virt("lnkses");
        for _ in 0..6 {
            pool.instantiate_local(&v, &mother).unwrap();
        }
        assert!(matches!(
            pool.instantiate_local(&v, &mother),
            Err(InstantiationError::ExhaustedResampling { capacity: 6, .. })
        ));
        pool.check_invariants().unwrap();
    }

    #[test]
    fn default_capacity() {
        assert_eq!(DIConfig::default().capacity(), 184_756);
    }

    #[test]
    fn toy_pool_inverts() {
        let schema = build_default_schema();
        let referenced: BTreeSet<ElementId> = ["lnkses".into()].into_iter().collect();
        let explicit: BTreeMap<ElementId, Vec<Vec<u32>>> =
            [("lnkses".into(), parse_instance_sets("0,1;0,2;1,2").unwrap())].into_iter().collect();
        let pool = build_pool(&schema, &referenced, cfg(3, 2, 0), &explicit).unwrap();
        let l: Vec<Vec<u32>> = (0..3).map(|s| pool.local("seslnk", s).unwrap().members.clone()).collect();
        assert_eq!(l, vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(pool.lookup("seslnk", &[2, 0]), Some(1));
        assert!(pool.is_derived("seslnk"));
    }

    #[test]
    fn explicit_duplicates_rejected() {
        let schema = build_default_schema();
        let referenced: BTreeSet<ElementId> = ["lnkses".into()].into_iter().collect();
        let explicit: BTreeMap<ElementId, Vec<Vec<u32>>> =
            [("lnkses".into(), parse_instance_sets("0,1;1,0;1,2").unwrap())].into_iter().collect();
        assert!(matches!(
            build_pool(&schema, &referenced, cfg(3, 2, 0), &explicit),
            Err(InstantiationError::RuleViolation(_))
        ));
    }

    #[test]
    fn singleton_forward_transposes() {
        let c = cfg(3, 1, 0);
        let mut pool = InstancePool::new(c).unwrap();
        let mother = instantiate_global(&virt("netses"), &c).unwrap();
        pool.set_explicit(&"lnkses".into(), &[vec![2], vec![0], vec![1]], &mother).unwrap();
        let inv = invert_membership(&pool, "lnkses", &mother).unwrap();
        assert_eq!(inv[&0], vec![1]);
        assert_eq!(inv[&1], vec![2]);
        assert_eq!(inv[&2], vec![0]);
    }

    #[test]
    fn incomplete_forward_detected() {
        let c = cfg(3, 1, 0);
        let mut pool = InstancePool::new(c).unwrap();
        let mother = instantiate_global(&virt("netses"), &c).unwrap();
        pool.set_explicit(&"lnkses".into(), &[vec![2], vec![0]], &mother).unwrap();
        assert!(matches!(
            invert_membership(&pool, "lnkses", &mother),
            Err(InstantiationError::IncompletePool { owner: 2, .. })
        ));
    }

    #[test]
    fn reproducible() {
        let schema = build_default_schema();
        let referenced: BTreeSet<ElementId> = ["lnkses".into(), "nbrnd".into()].into_iter().collect();
        let a = build_pool(&schema, &referenced, cfg(20, 10, 42), &BTreeMap::new()).unwrap();
        let b = build_pool(&schema, &referenced, cfg(20, 10, 42), &BTreeMap::new()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dump(), b.dump());
        let c = build_pool(&schema, &referenced, cfg(20, 10, 43), &BTreeMap::new()).unwrap();
        assert_ne!(a.dump(), c.dump());
    }
}
