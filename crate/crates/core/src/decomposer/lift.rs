//! Lifting instantiated subproblems back to per-role templates.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::instance::DualFamily;
use super::poly::{Atom, AtomKind, Monomial, Poly};
use super::tree::{AtomContext, Subproblem};
use super::DecomposeError;
use crate::abstraction::{ElementId, EntityType, Layer, Scope};
use crate::instantiation::InstancePool;

/// The abstract subproblem shared by every entity of one type in one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleTemplate {
    pub layer: Layer,
    pub entity: EntityType,
    /// Decision attributes the role controls.
    pub variables: Vec<ElementId>,
    /// Objective with atoms relative to the owning entity.
    pub expression: Poly,
}

impl RoleTemplate {
    pub fn name(&self) -> String {
        format!("{}/{}", self.layer, self.entity)
    }
}

/// How one entity's dual coefficients were recognized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftMatch {
    pub entity: EntityType,
    pub index: u32,
    pub family: String,
    /// `None` when the coefficient is the entity's own.
    pub element: Option<ElementId>,
    pub members: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftResult {
    pub roles: Vec<RoleTemplate>,
    pub matches: Vec<LiftMatch>,
}

fn relative(m: &Monomial, own: (EntityType, u32), ctx: &AtomContext) -> Result<Poly, DecomposeError> {
    let mut err = None;
    let p = Poly::term(1.0, m.clone()).map_atoms(&|a: &Atom| {
        if a.kind == AtomKind::Dual || a.index.is_none() {
            return a.clone();
        }
        match ctx.entity(a) {
            Some(e) if e == own => Atom::new(a.kind, a.name.as_str(), None),
            _ => a.clone(),
        }
    });
    for a in p.atoms() {
        if a.index.is_some() && a.kind != AtomKind::Param {
            err = Some(DecomposeError::NonSeparable(format!(
                "`{a}` does not belong to {} {}",
                own.0, own.1
            )));
        }
    }
    match err {
        Some(e) => Err(e),
        None => Ok(p),
    }
}

fn match_dual_set(
    family: &DualFamily,
    members: &BTreeSet<u32>,
    own: (EntityType, u32),
    pool: &InstancePool,
    ctx: &AtomContext,
) -> Result<Option<ElementId>, DecomposeError> {
    if family.member_entity == Some(own.0) && members.len() == 1 && members.contains(&own.1) {
        return Ok(None);
    }
    let list: Vec<u32> = members.iter().copied().collect();
    let mut found = Vec::new();
    for el in pool.local_elements() {
        let Ok(v) = ctx.schema.virtual_element(&el) else {
            continue;
        };
        let owner_type = v
            .owner
            .as_ref()
            .and_then(|o| ctx.schema.get(o.as_str()))
            .map(|e| e.element_ref().entity_type);
        if v.scope != Scope::Local
            || owner_type != Some(own.0)
            || Some(v.member_entity_type) != family.member_entity
        {
            continue;
        }
        if pool.lookup(el.as_str(), &list) == Some(own.1) {
            found.push(el.clone());
        }
    }
    match found.len() {
        0 => Err(DecomposeError::NoMatchingInstance(format!(
            "{}{{{}}} at {} {}",
            family.name,
            list.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(","),
            own.0,
            own.1
        ))),
        1 => Ok(found.pop()),
        _ => Err(DecomposeError::AmbiguousMatch(format!(
            "{} at {} {} matches {}",
            family.name,
            own.0,
            own.1,
            found.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Lifts one subproblem to a template, recording how its duals matched.
pub fn lift_one(
    sub: &Subproblem,
    pool: &InstancePool,
    ctx: &AtomContext,
) -> Result<(Poly, Vec<LiftMatch>), DecomposeError> {
    let own = (sub.entity, sub.index);
    // primal monomial -> (plain coefficient, family -> (dual index -> coefficient))
    type Group = (f64, BTreeMap<String, BTreeMap<u32, f64>>);
    let mut groups: BTreeMap<Monomial, Group> = BTreeMap::new();
    for (m, c) in sub.expression.terms() {
        let g = groups.entry(m.primal_part()).or_default();
        let dual = m.dual_part();
        let first = dual.atoms().into_iter().next().cloned();
        match first {
            None => g.0 += c,
            Some(a) => {
                let idx = a.index.unwrap_or(0);
                *g.1.entry(a.name.clone()).or_default().entry(idx).or_default() += c;
            }
        }
    }
    let mut template = Poly::zero();
    let mut matches = Vec::new();
    for (primal, (plain, fams)) in groups {
        let base = relative(&primal, own, ctx)?;
        if plain != 0.0 {
            template = template.add(&base.scale(plain));
        }
        for (fname, coefs) in fams {
            let family = ctx
                .families
                .iter()
                .find(|f| f.name == fname)
                .ok_or_else(|| DecomposeError::MissingInstance(fname.clone()))?;
            let c0 = *coefs.values().next().unwrap();
            if coefs.values().any(|c| (c - c0).abs() > 1e-12 * c0.abs().max(1.0)) {
                return Err(DecomposeError::NonUniformTemplate(format!(
                    "{} {}: coefficients of {fname} differ",
                    own.0, own.1
                )));
            }
            let members: BTreeSet<u32> = coefs.keys().copied().collect();
            let element = match_dual_set(family, &members, own, pool, ctx)?;
            let mut atom = Atom::new(AtomKind::Dual, fname.as_str(), None);
            atom.over = element.clone();
            template = template.add(&base.mul(&Poly::atom(atom)).scale(c0));
            matches.push(LiftMatch {
                entity: own.0,
                index: own.1,
                family: fname,
                element,
                members: members.into_iter().collect(),
            });
        }
    }
    Ok((template, matches))
}

pub fn lift(subs: &[Subproblem], pool: &InstancePool, ctx: &AtomContext) -> Result<LiftResult, DecomposeError> {
    let mut roles: BTreeMap<(Layer, EntityType), (RoleTemplate, u32)> = BTreeMap::new();
    let mut matches = Vec::new();
    for sub in subs {
        let (tpl, m) = lift_one(sub, pool, ctx)?;
        matches.extend(m);
        let variables: Vec<ElementId> = sub
            .variables
            .iter()
            .map(|a| ElementId::new(a.name.as_str()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        match roles.get(&(sub.layer, sub.entity)) {
            None => {
                roles.insert(
                    (sub.layer, sub.entity),
                    (
                        RoleTemplate {
                            layer: sub.layer,
                            entity: sub.entity,
                            variables,
                            expression: tpl,
                        },
                        sub.index,
                    ),
                );
            }
            Some((existing, first)) => {
                if existing.expression != tpl || existing.variables != variables {
                    return Err(DecomposeError::NonUniformTemplate(format!(
                        "{} {} lifts to `{tpl}` but {} {first} lifts to `{}`",
                        sub.entity, sub.index, sub.entity, existing.expression
                    )));
                }
            }
        }
    }
    Ok(LiftResult {
        roles: roles.into_values().map(|(r, _)| r).collect(),
        matches,
    })
}
