//! Binding a compiled program to a concrete scenario.

use std::collections::BTreeMap;

use super::scenario::Scenario;
use super::NetsimError;
use crate::abstraction::{build_default_schema, Bounds, ElementId, EntityType, Layer};
use crate::algogen::{PlanSet, SolverPlan};
use crate::decomposer::instance::{expand, path_entities};
use crate::decomposer::{AbstractProgram, AtomClassifier, AtomKind, DecomposeError, IndexSpace, Poly};

pub const DEFAULT_RATE_CAP: f64 = 10.0;

/// Runtime membership of virtual elements, indexed by scenario positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub node_ids: Vec<u32>,
    pub link_ids: Vec<u32>,
    pub session_ids: Vec<u32>,
    /// (tx, rx) node positions.
    pub links: Vec<(usize, usize)>,
    pub paths: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(s: &Scenario) -> Topology {
        Topology {
            node_ids: s.nodes.iter().map(|n| n.id).collect(),
            link_ids: s.links.iter().map(|l| l.id).collect(),
            session_ids: s.sessions.iter().map(|x| x.id).collect(),
            links: s
                .links
                .iter()
                .map(|l| (s.node_pos(l.tx).unwrap(), s.node_pos(l.rx).unwrap()))
                .collect(),
            paths: (0..s.sessions.len()).map(|i| s.path(i)).collect(),
        }
    }

    pub fn sessions_of_link(&self, l: usize) -> Vec<usize> {
        (0..self.paths.len()).filter(|s| self.paths[*s].contains(&l)).collect()
    }
}

fn range(n: usize) -> Vec<u32> {
    (0..n as u32).collect()
}

impl IndexSpace for Topology {
    fn members(&self, element: &ElementId, owner: Option<u32>) -> Result<Vec<u32>, DecomposeError> {
        let missing = || DecomposeError::MissingInstance(format!("{element}[{owner:?}]"));
        let mut v: Vec<u32> = match (element.as_str(), owner) {
            ("netnd", None) => range(self.node_ids.len()),
            ("netlnk", None) => range(self.link_ids.len()),
            ("netses", None) => range(self.session_ids.len()),
            ("seslnk", Some(s)) => self.paths.get(s as usize).ok_or_else(missing)?.iter().map(|l| *l as u32).collect(),
            ("lnkses", Some(l)) => self.sessions_of_link(l as usize).into_iter().map(|s| s as u32).collect(),
            ("lnknd", Some(n)) => (0..self.links.len())
                .filter(|l| self.links[*l].0 == n as usize)
                .map(|l| l as u32)
                .collect(),
            ("nbrnd", Some(n)) => {
                let n = n as usize;
                let mut out: Vec<u32> = self
                    .links
                    .iter()
                    .filter_map(|&(a, b)| {
                        if a == n {
                            Some(b as u32)
                        } else if b == n {
                            Some(a as u32)
                        } else {
                            None
                        }
                    })
                    .collect();
                out.dedup();
                out
            }
            _ => return Err(missing()),
        };
        v.sort_unstable();
        v.dedup();
        Ok(v)
    }

    fn select(&self, element: &ElementId, selector: u32) -> Result<u32, DecomposeError> {
        let ids = match element.as_str() {
            "netses" => &self.session_ids,
            "netlnk" => &self.link_ids,
            "netnd" => &self.node_ids,
            _ => return Ok(selector),
        };
        ids.iter()
            .position(|i| *i == selector)
            .map(|p| p as u32)
            .ok_or_else(|| DecomposeError::MissingInstance(format!("{element}[{selector}]")))
    }
}

/// A program specialized to one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub topology: Topology,
    pub families: Vec<String>,
    /// (family, link) -> `h`, feasible when `<= 0`.
    pub h: BTreeMap<(usize, usize), Poly>,
    pub rate_bounds: Vec<Bounds>,
    pub power_bounds: Vec<Bounds>,
    /// Program utility as written (not negated), over scenario positions.
    pub utility: Poly,
    pub params: BTreeMap<String, f64>,
    pub transport: Option<SolverPlan>,
    pub physical: Option<SolverPlan>,
    /// Source rate used when no transport plan exists (`nt.set('sesrate', ...)`).
    pub fixed_rate: Option<f64>,
    pub rate_cap: f64,
}

fn incompatible(m: impl Into<String>) -> NetsimError {
    NetsimError::IncompatibleProgram(m.into())
}

fn check_plan(plan: &SolverPlan, entity: EntityType, over: Option<&str>) -> Result<(), NetsimError> {
    if plan.entity != entity {
        return Err(incompatible(format!("{} role has no runtime counterpart", plan.role)));
    }
    for a in plan.template.atoms() {
        if a.kind == AtomKind::Dual && a.over.as_ref().map(|e| e.as_str()) != over {
            return Err(incompatible(format!("{} collects `{a}`, which the stack cannot deliver", plan.role)));
        }
    }
    Ok(())
}

pub fn bind(scenario: &Scenario, program: &AbstractProgram, plans: &PlanSet) -> Result<Binding, NetsimError> {
    let topology = Topology::new(scenario);
    let schema = build_default_schema();
    let de = |e: DecomposeError| incompatible(e.to_string());

    for d in &program.decision {
        if d.as_str() != "sesrate" && d.as_str() != "lnkpwr" {
            return Err(incompatible(format!("decision variable `{d}` has no knob")));
        }
    }
    let mut transport = None;
    let mut physical = None;
    for p in &plans.plans {
        match p.layer {
            Layer::Transport => {
                check_plan(p, EntityType::Session, Some("seslnk"))?;
                transport = Some(p.clone());
            }
            Layer::Physical => {
                check_plan(p, EntityType::Link, None)?;
                physical = Some(p.clone());
            }
            other => return Err(incompatible(format!("no stack layer runs {other} plans"))),
        }
    }

    let classifier = AtomClassifier {
        decision: program.decision.clone(),
        derived: program.derived.clone(),
    };
    let _ = &schema;
    let leaf = |attr: &ElementId, idx: Option<u32>| Poly::atom(classifier.atom(attr, idx));
    let mut h = BTreeMap::new();
    let mut families = Vec::new();
    for (f, fam) in program.families.iter().enumerate() {
        if fam.member_entity != Some(EntityType::Link) {
            return Err(incompatible(format!(
                "constraint family {} is not quantified over links",
                fam.name
            )));
        }
        families.push(fam.name.clone());
        for l in fam.members(&topology).map_err(de)? {
            h.insert((f, l as usize), fam.expand_at(&topology, Some(l), &leaf).map_err(de)?);
        }
    }

    let mut params = BTreeMap::new();
    for (k, v) in &program.settings {
        if let Ok(x) = v.trim().parse::<f64>() {
            params.insert(k.clone(), x);
        }
    }
    let rate_cap = params.get("rate_cap").copied().unwrap_or(DEFAULT_RATE_CAP);
    let default_rate = program
        .var_bounds
        .get("sesrate")
        .copied()
        .unwrap_or_else(|| schema.default_bounds(&ElementId::new("sesrate")));
    let default_power = program
        .var_bounds
        .get("lnkpwr")
        .copied()
        .unwrap_or_else(|| schema.default_bounds(&ElementId::new("lnkpwr")));
    let cap = |b: Bounds| Bounds::new(b.lo, b.hi.min(rate_cap));
    let mut rate_bounds = vec![cap(default_rate); topology.session_ids.len()];
    let mut power_bounds = vec![default_power; topology.link_ids.len()];
    for r in &program.bound_rules {
        let targets = path_entities(&topology, &r.selector).map_err(de)?;
        for e in targets {
            match r.attribute.as_str() {
                "sesrate" => rate_bounds[e as usize] = rate_bounds[e as usize].intersect(&r.bounds),
                "lnkpwr" => power_bounds[e as usize] = power_bounds[e as usize].intersect(&r.bounds),
                other => return Err(incompatible(format!("bound on `{other}`"))),
            }
        }
    }
    for b in rate_bounds.iter().chain(&power_bounds) {
        if b.lo > b.hi {
            return Err(incompatible(format!("empty bounds [{}, {}]", b.lo, b.hi)));
        }
    }

    let mut env = Vec::new();
    let utility = expand(&program.utility, &topology, &mut env, &leaf).map_err(de)?;
    let fixed_rate = if program.decision.contains("sesrate") {
        None
    } else {
        params.get("sesrate").copied()
    };
    Ok(Binding {
        topology,
        families,
        h,
        rate_bounds,
        power_bounds,
        utility,
        params,
        transport,
        physical,
        fixed_rate,
        rate_cap,
    })
}
