//! The abstract network control problem and its validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::expr::{Constraint, ElementPath, Expr, Index};
use super::schema::{Bounds, ElementId, NetworkSchema};
use super::AbstractionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sense {
    Maximize,
    Minimize,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Maximize => "max",
            Sense::Minimize => "min",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub path: ElementPath,
    pub bounds: Bounds,
}

impl Variable {
    pub fn attribute(&self) -> &ElementId {
        self.path.last()
    }

    /// True when the variable selects every instance of its attribute.
    pub fn is_unrestricted(&self) -> bool {
        self.path.segments().iter().all(|s| s.index == Index::All)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlProblemSpec {
    pub sense: Sense,
    pub utility: Expr,
    pub constraints: Vec<Constraint>,
    pub variables: Vec<Variable>,
    /// Pass-through settings (`nt.set`), including parameter values and pool overrides.
    pub settings: BTreeMap<String, String>,
}

impl ControlProblemSpec {
    /// Attributes that are decision variables somewhere in the network.
    pub fn decision_attributes(&self) -> BTreeSet<ElementId> {
        self.variables.iter().map(|v| v.attribute().clone()).collect()
    }

    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn setting(&self, key: &str) -> Option<&str> {
        self.settings.get(key).map(String::as_str)
    }

    pub fn setting_f64(&self, key: &str) -> Option<f64> {
        self.setting(key).and_then(|v| v.trim().parse().ok())
    }

    /// Bounds for an attribute: the intersection over unrestricted declarations,
    /// falling back to any declaration, then to the schema default.
    pub fn attribute_bounds(&self, schema: &NetworkSchema, attr: &ElementId) -> Bounds {
        let decls: Vec<&Variable> = self
            .variables
            .iter()
            .filter(|v| v.attribute() == attr)
            .collect();
        let full: Vec<&&Variable> = decls.iter().filter(|v| v.is_unrestricted()).collect();
        let pick: Vec<&Variable> = if full.is_empty() {
            decls
        } else {
            full.into_iter().copied().collect()
        };
        pick.iter()
            .map(|v| v.bounds)
            .reduce(|a, b| a.intersect(&b))
            .unwrap_or_else(|| schema.default_bounds(attr))
    }

    fn appears(&self, schema: &NetworkSchema, attr: &ElementId) -> bool {
        let exprs = std::iter::once(&self.utility)
            .chain(self.constraints.iter().flat_map(|c| [&c.lhs, &c.rhs]));
        exprs.into_iter().any(|e| {
            e.refs().iter().any(|p| {
                p.last() == attr || schema.function_inputs(p.last()).contains(attr)
            })
        })
    }

    pub fn validate(&self, schema: &NetworkSchema) -> Result<(), AbstractionError> {
        let mut names = BTreeSet::new();
        let mut paths = BTreeSet::new();
        for v in &self.variables {
            if !names.insert(v.name.as_str()) {
                return Err(AbstractionError::Validation(format!(
                    "variable `{}` declared twice",
                    v.name
                )));
            }
            if !paths.insert(v.path.to_string()) {
                return Err(AbstractionError::Validation(format!(
                    "variable `{}` duplicates the path {}",
                    v.name, v.path
                )));
            }
            let el = schema.read(&v.path.to_string())?;
            if !el.is_parameter() {
                return Err(AbstractionError::Validation(format!(
                    "variable `{}` must end at a parameter, not `{}`",
                    v.name,
                    el.id()
                )));
            }
            if v.bounds.lo > v.bounds.hi {
                return Err(AbstractionError::Validation(format!(
                    "variable `{}` has empty bounds [{}, {}]",
                    v.name, v.bounds.lo, v.bounds.hi
                )));
            }
            if !self.appears(schema, v.attribute()) {
                return Err(AbstractionError::Validation(format!(
                    "variable `{}` appears in neither the utility nor any constraint",
                    v.name
                )));
            }
            if self.utility.is_linear_in(v.attribute()) && !v.bounds.is_finite() {
                return Err(AbstractionError::Validation(format!(
                    "utility is linear in `{}`; finite bounds are required",
                    v.name
                )));
            }
        }
        for e in std::iter::once(&self.utility)
            .chain(self.constraints.iter().flat_map(|c| [&c.lhs, &c.rhs]))
        {
            super::expr::check_expr(schema, e)?;
        }
        if !self.utility.free_indices().is_empty() {
            return Err(AbstractionError::Validation(format!(
                "utility `{}` has an unsummed index",
                self.utility
            )));
        }
        Ok(())
    }

    fn vars_in(&self, e: &[&Expr]) -> String {
        let mut out = Vec::new();
        for v in &self.variables {
            if e.iter().any(|x| x.mentions(v.attribute())) {
                out.push(v.name.clone());
            }
        }
        out.join(",")
    }
}

fn fmt_bound(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x}")
    }
}

/// Pretty-prints the problem as program text that parses back to an equal problem.
impl fmt::Display for ControlProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.settings {
            writeln!(f, "nt.set('{k}', '{v}')")?;
        }
        for v in &self.variables {
            let chain: Vec<String> = v.path.segments().iter().map(|s| s.name.to_string()).collect();
            let n = v.path.len();
            let idx: Vec<String> = v
                .path
                .segments()
                .iter()
                .enumerate()
                .map(|(i, s)| match (i + 1 == n, s.index) {
                    (true, _) => "None".to_string(),
                    (false, Index::All) => "all".to_string(),
                    (false, Index::At(k)) => k.to_string(),
                })
                .collect();
            writeln!(
                f,
                "nt.make_var('{}', [{}], [{}], [{}, {}])",
                v.name,
                chain.join(", "),
                idx.join(", "),
                fmt_bound(v.bounds.lo),
                fmt_bound(v.bounds.hi)
            )?;
        }
        writeln!(
            f,
            "expr = mkexpr('{}', '{}')",
            self.utility,
            self.vars_in(&[&self.utility])
        )?;
        for c in &self.constraints {
            writeln!(f, "nt.add_cstr('{c}', '{}')", self.vars_in(&[&c.lhs, &c.rhs]))?;
        }
        writeln!(f, "nt.objective({}, expr)", self.sense)
    }
}
