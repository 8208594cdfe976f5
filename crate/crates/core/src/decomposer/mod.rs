//! Automated decomposition: instantiate, dualize, split by layer and entity,
//! then lift back to per-role templates.

pub mod dump;
pub mod instance;
pub mod lift;
pub mod poly;
pub mod tree;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{
    AbstractionError, Bounds, ControlProblemSpec, ElementId, Expr, Layer, NetworkSchema, Sense,
};
use crate::instantiation::{build_pool, parse_instance_sets, DIConfig, InstancePool, InstantiationError};

pub use instance::{
    build_dual, instantiate_problem, AtomClassifier, BoundRule, DualFamily, IndexSpace, InstConstraint,
    ProblemInstance,
};
pub use lift::{lift, LiftMatch, LiftResult, RoleTemplate};
pub use poly::{Atom, AtomKind, Factor, Monomial, Poly};
pub use tree::{build_tree, decompose_cross_layer, decompose_per_entity, AtomContext, ExprTree, LayerSplit, Subproblem};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecomposeError {
    #[error("no instance for `{0}`")]
    MissingInstance(String),
    #[error("index `{0}` is neither summed nor quantified")]
    FreeIndex(String),
    #[error("unsupported constraint: {0}")]
    UnsupportedConstraintSense(String),
    #[error("not in normal form: {0}")]
    NotNormalized(String),
    #[error("term cannot be attributed to one layer: {0}")]
    UnattributableTerm(String),
    #[error("not separable per entity: {0}")]
    NonSeparable(String),
    #[error("no virtual element instance matches {0}")]
    NoMatchingInstance(String),
    #[error("ambiguous dual match: {0}")]
    AmbiguousMatch(String),
    #[error("templates differ across entities: {0}")]
    NonUniformTemplate(String),
    #[error(transparent)]
    Instantiation(#[from] InstantiationError),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
}

/// The compiled, entity-independent program handed to solver synthesis and the runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractProgram {
    pub sense: Sense,
    pub utility: Expr,
    pub roles: Vec<RoleTemplate>,
    pub families: Vec<DualFamily>,
    pub bound_rules: Vec<BoundRule>,
    pub decision: BTreeSet<ElementId>,
    pub derived: BTreeSet<ElementId>,
    pub var_bounds: BTreeMap<ElementId, Bounds>,
    pub settings: BTreeMap<String, String>,
}

impl AbstractProgram {
    pub fn role(&self, layer: Layer) -> Option<&RoleTemplate> {
        self.roles.iter().find(|r| r.layer == layer)
    }

    pub fn setting_f64(&self, key: &str) -> Option<f64> {
        self.settings.get(key).and_then(|v| v.trim().parse().ok())
    }
}

/// Every intermediate product of a compilation, kept for inspection.
#[derive(Debug, Clone)]
pub struct Compilation {
    pub pool: InstancePool,
    pub instance: ProblemInstance,
    pub dual: Poly,
    pub tree: ExprTree,
    pub layers: LayerSplit,
    pub subproblems: Vec<Subproblem>,
    pub lifted: LiftResult,
    pub program: AbstractProgram,
}

/// Virtual elements a program mentions.
pub fn referenced_elements(spec: &ControlProblemSpec, schema: &NetworkSchema) -> BTreeSet<ElementId> {
    let mut out = BTreeSet::new();
    let exprs = std::iter::once(&spec.utility).chain(spec.constraints.iter().flat_map(|c| [&c.lhs, &c.rhs]));
    let mut paths: Vec<_> = exprs.flat_map(|e| e.refs()).cloned().collect();
    paths.extend(spec.variables.iter().map(|v| v.path.clone()));
    for p in paths {
        for s in p.segments() {
            if schema.virtual_element(&s.name).is_ok() {
                out.insert(s.name.clone());
            }
        }
    }
    out
}

/// Instantiation settings taken from `nt.set`: `n_global`, `n_local`,
/// `max_resample` and explicit `pool.<element>` sets.
pub fn di_config(spec: &ControlProblemSpec, seed: u64) -> Result<(DIConfig, BTreeMap<ElementId, Vec<Vec<u32>>>), DecomposeError> {
    let mut cfg = DIConfig {
        rng_seed: seed,
        ..DIConfig::default()
    };
    let int = |k: &str| -> Result<Option<usize>, DecomposeError> {
        spec.setting(k)
            .map(|v| {
                v.trim().parse::<usize>().map_err(|_| {
                    DecomposeError::Instantiation(InstantiationError::InvalidConfig(format!("{k} = `{v}`")))
                })
            })
            .transpose()
    };
    if let Some(n) = int("n_global")? {
        cfg.n_global = n;
    }
    if let Some(n) = int("n_local")? {
        cfg.n_local = n;
    }
    if let Some(n) = int("max_resample")? {
        cfg.max_resample = n;
    }
    let mut explicit = BTreeMap::new();
    for (k, v) in &spec.settings {
        if let Some(el) = k.strip_prefix("pool.") {
            explicit.insert(ElementId::new(el), parse_instance_sets(v)?);
        }
    }
    Ok((cfg, explicit))
}

pub fn compile(spec: &ControlProblemSpec, schema: &NetworkSchema, seed: u64) -> Result<Compilation, DecomposeError> {
    spec.validate(schema)?;
    let (cfg, explicit) = di_config(spec, seed)?;
    let pool = build_pool(schema, &referenced_elements(spec, schema), cfg, &explicit)?;
    let instance = instantiate_problem(spec, schema, &pool)?;
    let dual = build_dual(&instance);
    let tree = build_tree(&dual)?;
    let ctx = AtomContext {
        schema,
        families: &instance.families,
    };
    let layers = decompose_cross_layer(&tree, &ctx)?;
    let mut subproblems = Vec::new();
    for (layer, group) in &layers.groups {
        subproblems.extend(decompose_per_entity(*layer, group, &ctx, &instance.decision)?);
    }
    let lifted = lift(&subproblems, &pool, &ctx)?;
    let var_bounds = instance
        .decision
        .iter()
        .map(|a| (a.clone(), spec.attribute_bounds(schema, a)))
        .collect();
    let program = AbstractProgram {
        sense: spec.sense,
        utility: spec.utility.clone(),
        roles: lifted.roles.clone(),
        families: instance.families.clone(),
        bound_rules: instance.bound_rules.clone(),
        decision: instance.decision.clone(),
        derived: instance.derived.clone(),
        var_bounds,
        settings: spec.settings.clone(),
    };
    Ok(Compilation {
        pool,
        instance,
        dual,
        tree,
        layers,
        subproblems,
        lifted,
        program,
    })
}
