//! Expansion of an abstract problem over concrete index sets.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::poly::{Atom, AtomKind, Poly};
use super::DecomposeError;
use crate::abstraction::{
    Bounds, Constraint, ControlProblemSpec, ElementId, ElementPath, EntityType, Expr, Index,
    NetworkSchema, Relation, Sense,
};
use crate::instantiation::InstancePool;

/// Membership oracle for virtual elements: the pool at compile time, the
/// scenario topology at run time.
pub trait IndexSpace {
    fn members(&self, element: &ElementId, owner: Option<u32>) -> Result<Vec<u32>, DecomposeError>;

    /// Maps an explicit selector (`netses[1]`) to an index.
    fn select(&self, element: &ElementId, selector: u32) -> Result<u32, DecomposeError> {
        let _ = element;
        Ok(selector)
    }
}

impl IndexSpace for InstancePool {
    fn members(&self, element: &ElementId, owner: Option<u32>) -> Result<Vec<u32>, DecomposeError> {
        let inst = match owner {
            None => self.global(element.as_str()),
            Some(o) => self.local(element.as_str(), o),
        };
        inst.map(|i| i.members.clone()).ok_or_else(|| {
            DecomposeError::MissingInstance(match owner {
                None => element.to_string(),
                Some(o) => format!("{element}[{o}]"),
            })
        })
    }
}

/// Decides how an attribute instance appears in the canonical form.
#[derive(Debug, Clone)]
pub struct AtomClassifier {
    pub decision: BTreeSet<ElementId>,
    pub derived: BTreeSet<ElementId>,
}

impl AtomClassifier {
    pub fn new(schema: &NetworkSchema, decision: BTreeSet<ElementId>) -> Self {
        let derived = schema
            .elements()
            .filter(|e| e.is_parameter())
            .map(|e| e.id().clone())
            .filter(|id| !decision.contains(id) && schema.function_inputs(id).iter().any(|i| decision.contains(i)))
            .collect();
        AtomClassifier { decision, derived }
    }

    pub fn atom(&self, attr: &ElementId, index: Option<u32>) -> Atom {
        let kind = if self.decision.contains(attr) {
            AtomKind::Var
        } else if self.derived.contains(attr) {
            AtomKind::Derived
        } else {
            AtomKind::Param
        };
        Atom::new(kind, attr.as_str(), index)
    }
}

type Env = Vec<(ElementPath, u32)>;

fn bound(env: &Env, prefix: &ElementPath) -> Option<u32> {
    env.iter().rev().find(|(p, _)| p == prefix).map(|(_, i)| *i)
}

/// Index of the entity a path prefix denotes under `env`.
pub fn resolve_prefix(space: &dyn IndexSpace, prefix: &ElementPath, env: &Env) -> Result<u32, DecomposeError> {
    let mut owner = None;
    for i in 0..prefix.len() {
        let p = prefix.prefix(i + 1);
        let seg = &p.segments()[i];
        let idx = match (bound(env, &p), seg.index) {
            (Some(b), _) => b,
            (None, Index::At(k)) => {
                let k = space.select(&seg.name, k)?;
                let members = space.members(&seg.name, owner)?;
                if !members.contains(&k) {
                    return Err(DecomposeError::MissingInstance(format!("{p}")));
                }
                k
            }
            (None, Index::All) => return Err(DecomposeError::FreeIndex(p.to_string())),
        };
        owner = Some(idx);
    }
    owner.ok_or_else(|| DecomposeError::FreeIndex(prefix.to_string()))
}

/// Members of the set a free prefix ranges over.
pub fn prefix_members(space: &dyn IndexSpace, prefix: &ElementPath, env: &Env) -> Result<Vec<u32>, DecomposeError> {
    let owner = if prefix.len() > 1 {
        Some(resolve_prefix(space, &prefix.prefix(prefix.len() - 1), env)?)
    } else {
        None
    };
    space.members(prefix.last(), owner)
}

/// Expands an expression to canonical form with every index resolved.
pub fn expand(
    expr: &Expr,
    space: &dyn IndexSpace,
    env: &mut Env,
    leaf: &dyn Fn(&ElementId, Option<u32>) -> Poly,
) -> Result<Poly, DecomposeError> {
    Ok(match expr {
        Expr::Const(c) => Poly::constant(*c),
        Expr::Ref(path) => {
            let owner = if path.len() > 1 {
                Some(resolve_prefix(space, &path.prefix(path.len() - 1), env)?)
            } else {
                None
            };
            leaf(path.last(), owner)
        }
        Expr::Sum { over, body } => {
            let mut acc = Poly::zero();
            for m in prefix_members(space, over, env)? {
                env.push((over.clone(), m));
                let r = expand(body, space, env, leaf);
                env.pop();
                acc = acc.add(&r?);
            }
            acc
        }
        Expr::Add(v) => {
            let mut acc = Poly::zero();
            for e in v {
                acc = acc.add(&expand(e, space, env, leaf)?);
            }
            acc
        }
        Expr::Mul(v) => {
            let mut acc = Poly::constant(1.0);
            for e in v {
                acc = acc.mul(&expand(e, space, env, leaf)?);
            }
            acc
        }
        Expr::Div(a, b) => expand(a, space, env, leaf)?.mul(&expand(b, space, env, leaf)?.recip()),
        Expr::Neg(e) => expand(e, space, env, leaf)?.neg(),
        Expr::Log(e) => expand(e, space, env, leaf)?.log(),
        Expr::Sqrt(e) => expand(e, space, env, leaf)?.sqrt(),
    })
}

/// A dualized constraint statement, written as `lhs <= rhs` for each member of `quantifier`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualFamily {
    pub name: String,
    pub quantifier: Option<ElementPath>,
    pub member_entity: Option<EntityType>,
    pub lhs: Expr,
    pub rhs: Expr,
}

impl DualFamily {
    /// Constraint function `h = lhs - rhs` (feasible when `h <= 0`) at one member.
    pub fn expand_at(
        &self,
        space: &dyn IndexSpace,
        member: Option<u32>,
        leaf: &dyn Fn(&ElementId, Option<u32>) -> Poly,
    ) -> Result<Poly, DecomposeError> {
        let mut env = Env::new();
        if let (Some(q), Some(m)) = (&self.quantifier, member) {
            env.push((q.clone(), m));
        }
        let l = expand(&self.lhs, space, &mut env, leaf)?;
        let r = expand(&self.rhs, space, &mut env, leaf)?;
        Ok(l.sub(&r))
    }

    pub fn members(&self, space: &dyn IndexSpace) -> Result<Vec<u32>, DecomposeError> {
        match &self.quantifier {
            Some(q) => prefix_members(space, q, &Env::new()),
            None => Ok(vec![0]),
        }
    }
}

/// A constraint on a single decision variable against a constant, enforced by projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRule {
    pub attribute: ElementId,
    pub selector: ElementPath,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstConstraint {
    pub family: usize,
    pub index: u32,
    /// Feasible when `h <= 0`.
    pub h: Poly,
}

impl InstConstraint {
    pub fn dual_atom(&self, families: &[DualFamily]) -> Atom {
        Atom::dual(&families[self.family].name, self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub sense: Sense,
    /// Utility in maximization form (negated for minimization programs).
    pub utility: Poly,
    pub constraints: Vec<InstConstraint>,
    pub families: Vec<DualFamily>,
    pub bound_rules: Vec<BoundRule>,
    pub bounds: BTreeMap<Atom, Bounds>,
    pub decision: BTreeSet<ElementId>,
    pub derived: BTreeSet<ElementId>,
}

fn family_name(k: usize) -> String {
    if k == 0 {
        "lbd".to_string()
    } else {
        format!("lbd{k}")
    }
}

/// Splits a constraint into a bound rule or a dualized family.
pub fn classify_constraint(
    c: &Constraint,
    decision: &BTreeSet<ElementId>,
    schema: &NetworkSchema,
    family_idx: usize,
) -> Result<Result<BoundRule, DualFamily>, DecomposeError> {
    if c.strict {
        log::info!("strict constraint `{c}` compiled as non-strict");
    }
    let single = |e: &Expr| match e {
        Expr::Ref(p) if decision.contains(p.last()) => Some(p.clone()),
        _ => None,
    };
    let constant = |e: &Expr| match e {
        Expr::Const(v) => Some(*v),
        _ => None,
    };
    let as_bound = match (single(&c.lhs), constant(&c.rhs), single(&c.rhs), constant(&c.lhs)) {
        (Some(p), Some(v), _, _) => Some((p, c.rel, v)),
        (_, _, Some(p), Some(v)) => Some((
            p,
            match c.rel {
                Relation::Le => Relation::Ge,
                Relation::Ge => Relation::Le,
                Relation::Eq => Relation::Eq,
            },
            v,
        )),
        _ => None,
    };
    if let Some((path, rel, v)) = as_bound {
        let bounds = match rel {
            Relation::Le => Bounds::new(f64::NEG_INFINITY, v),
            Relation::Ge => Bounds::new(v, f64::INFINITY),
            Relation::Eq => Bounds::new(v, v),
        };
        return Ok(Ok(BoundRule {
            attribute: path.last().clone(),
            selector: path,
            bounds,
        }));
    }
    let (lhs, rhs) = match c.rel {
        Relation::Le => (c.lhs.clone(), c.rhs.clone()),
        Relation::Ge => (c.rhs.clone(), c.lhs.clone()),
        Relation::Eq => return Err(DecomposeError::UnsupportedConstraintSense(c.to_string())),
    };
    let mut free: Vec<ElementPath> = lhs.free_indices();
    for f in rhs.free_indices() {
        if !free.contains(&f) {
            free.push(f);
        }
    }
    if free.len() > 1 {
        return Err(DecomposeError::UnsupportedConstraintSense(format!(
            "`{c}` ranges over more than one index"
        )));
    }
    let quantifier = free.pop();
    let member_entity = match &quantifier {
        Some(q) => Some(schema.virtual_element(q.last())?.member_entity_type),
        None => None,
    };
    Ok(Err(DualFamily {
        name: family_name(family_idx),
        quantifier,
        member_entity,
        lhs,
        rhs,
    }))
}

/// Atoms a variable path covers.
fn var_atoms(space: &dyn IndexSpace, path: &ElementPath, env: &mut Env, at: usize, out: &mut Vec<u32>) -> Result<(), DecomposeError> {
    if at + 1 >= path.len() {
        out.push(resolve_prefix(space, &path.prefix(path.len() - 1), env)?);
        return Ok(());
    }
    let p = path.prefix(at + 1);
    if path.segments()[at].index == Index::All && bound(env, &p).is_none() {
        for m in prefix_members(space, &p, env)? {
            env.push((p.clone(), m));
            let r = var_atoms(space, path, env, at + 1, out);
            env.pop();
            r?;
        }
        Ok(())
    } else {
        var_atoms(space, path, env, at + 1, out)
    }
}

/// Entities selected by a path ending at an attribute.
pub fn path_entities(space: &dyn IndexSpace, path: &ElementPath) -> Result<Vec<u32>, DecomposeError> {
    let mut out = Vec::new();
    var_atoms(space, path, &mut Env::new(), 0, &mut out)?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

pub fn instantiate_problem(
    spec: &ControlProblemSpec,
    schema: &NetworkSchema,
    pool: &InstancePool,
) -> Result<ProblemInstance, DecomposeError> {
    let decision = spec.decision_attributes();
    let classifier = AtomClassifier::new(schema, decision.clone());
    let leaf = |attr: &ElementId, idx: Option<u32>| Poly::atom(classifier.atom(attr, idx));

    let mut utility = expand(&spec.utility, pool, &mut Env::new(), &leaf)?;
    if spec.sense == Sense::Minimize {
        utility = utility.neg();
    }

    let mut families = Vec::new();
    let mut bound_rules = Vec::new();
    for c in &spec.constraints {
        match classify_constraint(c, &decision, schema, families.len())? {
            Ok(rule) => bound_rules.push(rule),
            Err(fam) => families.push(fam),
        }
    }

    let mut constraints = Vec::new();
    for (k, fam) in families.iter().enumerate() {
        for m in fam.members(pool)? {
            let h = fam.expand_at(pool, fam.quantifier.as_ref().map(|_| m), &leaf)?;
            constraints.push(InstConstraint {
                family: k,
                index: m,
                h,
            });
        }
    }

    let mut bounds: BTreeMap<Atom, Bounds> = BTreeMap::new();
    for attr in &decision {
        let default = spec.attribute_bounds(schema, attr);
        let global = schema
            .holder_entity(attr)
            .and_then(|t| schema.global_of(t))
            .ok_or_else(|| DecomposeError::MissingInstance(format!("holder of {attr}")))?;
        for m in pool.members(&global.element.id, None)? {
            bounds.insert(classifier.atom(attr, Some(m)), default);
        }
    }
    for v in &spec.variables {
        if v.is_unrestricted() {
            continue;
        }
        for e in path_entities(pool, &v.path)? {
            let a = classifier.atom(v.attribute(), Some(e));
            let b = bounds.entry(a).or_insert(v.bounds);
            *b = b.intersect(&v.bounds);
        }
    }
    for r in &bound_rules {
        for e in path_entities(pool, &r.selector)? {
            let a = classifier.atom(&r.attribute, Some(e));
            let b = bounds.entry(a).or_insert(r.bounds);
            *b = b.intersect(&r.bounds);
        }
    }

    Ok(ProblemInstance {
        sense: spec.sense,
        utility,
        constraints,
        families,
        bound_rules,
        bounds,
        decision,
        derived: classifier.derived,
    })
}

/// Lagrangian `U - sum_j lbd_j * h_j`.
pub fn build_dual(instance: &ProblemInstance) -> Poly {
    let mut l = instance.utility.clone();
    for c in &instance.constraints {
        let lam = Poly::atom(c.dual_atom(&instance.families));
        l = l.sub(&lam.mul(&c.h));
    }
    l
}
