//! Two-level expression tree and the layer and entity splits built on it.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::instance::DualFamily;
use super::poly::{Atom, AtomKind, Monomial, Poly};
use super::DecomposeError;
use crate::abstraction::{ElementId, EntityType, Layer, NetworkSchema};

/// Level 0 is the whole Lagrangian, level 1 its addends and level 2 the
/// (dual, primal) factorization of each addend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprTree {
    pub root: Poly,
    pub level1: Vec<Poly>,
    pub level2: Vec<Level2>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level2 {
    pub dual: Monomial,
    pub coefficient: f64,
    pub primal: Monomial,
}

impl Level2 {
    pub fn as_poly(&self) -> Poly {
        Poly::term(self.coefficient, self.dual.mul(&self.primal))
    }
}

pub fn build_tree(root: &Poly) -> Result<ExprTree, DecomposeError> {
    let mut level1 = Vec::new();
    let mut level2 = Vec::new();
    for (m, c) in root.terms() {
        if m.has_nested_dual() {
            return Err(DecomposeError::NotNormalized(format!(
                "dual coefficient inside a nonlinear factor in `{m}`"
            )));
        }
        let dual = m.dual_part();
        if dual.factors().len() > 1 {
            return Err(DecomposeError::NotNormalized(format!(
                "product of dual coefficients in `{m}`"
            )));
        }
        level1.push(Poly::term(c, m.clone()));
        level2.push(Level2 {
            dual,
            coefficient: c,
            primal: m.primal_part(),
        });
    }
    Ok(ExprTree {
        root: root.clone(),
        level1,
        level2,
    })
}

/// Maps atoms to their protocol layer and owning entity.
pub struct AtomContext<'a> {
    pub schema: &'a NetworkSchema,
    pub families: &'a [DualFamily],
}

impl AtomContext<'_> {
    pub fn layer(&self, a: &Atom) -> Layer {
        match a.kind {
            AtomKind::Dual => Layer::None,
            _ => self
                .schema
                .get(&a.name)
                .map(|e| e.element_ref().layer)
                .unwrap_or(Layer::None),
        }
    }

    pub fn entity_type(&self, a: &Atom) -> Option<EntityType> {
        match a.kind {
            AtomKind::Dual => self
                .families
                .iter()
                .find(|f| f.name == a.name)
                .and_then(|f| f.member_entity),
            _ => self.schema.holder_entity(&ElementId::new(a.name.as_str())),
        }
    }

    pub fn entity(&self, a: &Atom) -> Option<(EntityType, u32)> {
        Some((self.entity_type(a)?, a.index?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSplit {
    pub groups: BTreeMap<Layer, Poly>,
    /// Terms without a decision atom; they drive the dual update only.
    pub dual_group: Poly,
}

fn decision_atoms(m: &Monomial) -> Vec<&Atom> {
    m.atoms().into_iter().filter(|a| a.is_decision()).collect()
}

pub fn decompose_cross_layer(tree: &ExprTree, ctx: &AtomContext) -> Result<LayerSplit, DecomposeError> {
    let mut groups: BTreeMap<Layer, Poly> = BTreeMap::new();
    let mut dual_group = Poly::zero();
    for t in &tree.level2 {
        let layers: BTreeSet<Layer> = decision_atoms(&t.primal).iter().map(|a| ctx.layer(a)).collect();
        let term = t.as_poly();
        match layers.len() {
            0 => dual_group = dual_group.add(&term),
            1 => {
                let l = *layers.iter().next().unwrap();
                let g = groups.entry(l).or_insert_with(Poly::zero);
                *g = g.add(&term);
            }
            _ => {
                return Err(DecomposeError::UnattributableTerm(format!(
                    "`{term}` couples layers {}",
                    layers.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(", ")
                )))
            }
        }
    }
    Ok(LayerSplit { groups, dual_group })
}

/// One entity's share of a layer group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subproblem {
    pub layer: Layer,
    pub entity: EntityType,
    pub index: u32,
    pub expression: Poly,
    pub variables: BTreeSet<Atom>,
    pub duals: BTreeSet<Atom>,
}

pub fn decompose_per_entity(
    layer: Layer,
    group: &Poly,
    ctx: &AtomContext,
    decision: &BTreeSet<ElementId>,
) -> Result<Vec<Subproblem>, DecomposeError> {
    let mut subs: BTreeMap<(EntityType, u32), Subproblem> = BTreeMap::new();
    for (m, c) in group.terms() {
        let owners: BTreeSet<(EntityType, u32)> = decision_atoms(&m.primal_part())
            .iter()
            .map(|a| {
                ctx.entity(a).ok_or_else(|| {
                    DecomposeError::NonSeparable(format!("`{a}` has no owning entity"))
                })
            })
            .collect::<Result<_, _>>()?;
        if owners.len() != 1 {
            return Err(DecomposeError::NonSeparable(format!(
                "`{}` depends on {} entities",
                Poly::term(c, m.clone()),
                owners.len()
            )));
        }
        let (ty, idx) = *owners.iter().next().unwrap();
        let sub = subs.entry((ty, idx)).or_insert_with(|| Subproblem {
            layer,
            entity: ty,
            index: idx,
            expression: Poly::zero(),
            variables: BTreeSet::new(),
            duals: BTreeSet::new(),
        });
        sub.expression.add_term(c, m.clone());
        for a in m.atoms() {
            match a.kind {
                AtomKind::Var => {
                    sub.variables.insert(a.clone());
                }
                AtomKind::Derived => {
                    for input in ctx.schema.function_inputs(&ElementId::new(a.name.as_str())) {
                        if decision.contains(&input) {
                            sub.variables.insert(Atom::new(AtomKind::Var, input.as_str(), a.index));
                        }
                    }
                }
                AtomKind::Dual => {
                    sub.duals.insert(a.clone());
                }
                AtomKind::Param => {}
            }
        }
    }
    Ok(subs.into_values().collect())
}
