//! Solver synthesis for lifted subproblems and the dual update rule.

pub mod penalty;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Bounds, ElementId, EntityType, Layer};
use crate::decomposer::{AbstractProgram, Atom, AtomKind, Factor, Poly, RoleTemplate};

pub use penalty::{penalize, AgentUtilities, Case, PenalizedUtility, PowerSearch};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgogenError {
    #[error("no applicable method: {0}")]
    NoApplicableMethod(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("not differentiable: {0}")]
    NotDifferentiable(String),
    #[error("invalid setting {key} = `{value}`")]
    InvalidSetting { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    ClosedFormReciprocal,
    BoundProjection,
    ProjectedGradient,
    BestResponse,
    Dpl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ClosedFormReciprocal => "closed_form_reciprocal",
            Method::BoundProjection => "bound_projection",
            Method::ProjectedGradient => "projected_gradient",
            Method::BestResponse => "best_response",
            Method::Dpl => "dpl",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepSchedule {
    Constant(f64),
    /// `alpha0 / ceil(k / period)`.
    Diminishing { alpha0: f64, period: u64 },
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Diminishing {
            alpha0: 0.05,
            period: 10,
        }
    }
}

impl StepSchedule {
    /// Step at iteration `k >= 1`.
    pub fn alpha(&self, k: u64) -> f64 {
        match *self {
            StepSchedule::Constant(a) => a,
            StepSchedule::Diminishing { alpha0, period } => {
                let p = period.max(1);
                alpha0 / k.max(1).div_ceil(p) as f64
            }
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Constant(a) => write!(f, "constant({a})"),
            StepSchedule::Diminishing { alpha0, period } => write!(f, "diminishing({alpha0}/ceil(k/{period}))"),
        }
    }
}

/// Projected dual subgradient step.
pub fn dual_update(lambda: f64, slack: f64, alpha: f64) -> f64 {
    (lambda + alpha * slack).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualUpdateRule {
    pub family: String,
    pub step: StepSchedule,
}

impl DualUpdateRule {
    pub fn apply(&self, lambda: f64, slack: f64, k: u64) -> f64 {
        dual_update(lambda, slack, self.step.alpha(k))
    }
}

/// Coefficients of `a*log(x) + b*x + sum_k c_k * D_k * x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableShape {
    pub log_coef: f64,
    pub lin_coef: f64,
    pub couplings: Vec<(Atom, f64)>,
}

impl SeparableShape {
    /// Coefficient of `x` once the dual aggregates are known.
    pub fn slope(&self, duals: &dyn Fn(&Atom) -> Option<f64>) -> Result<f64, AlgogenError> {
        let mut k = self.lin_coef;
        for (a, c) in &self.couplings {
            k += c * duals(a).ok_or_else(|| AlgogenError::MissingParameter(a.to_string()))?;
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverPlan {
    pub role: String,
    pub layer: Layer,
    pub entity: EntityType,
    pub variable: ElementId,
    pub method: Method,
    pub step: StepSchedule,
    pub bounds: Bounds,
    pub iterations_per_tick: u32,
    pub template: Poly,
    pub shape: Option<SeparableShape>,
}

impl fmt::Display for SolverPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "entity={} method={} step={} bounds={},{}",
            self.role, self.method, self.step, self.bounds.lo, self.bounds.hi
        )
    }
}

fn setting_f64(settings: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>, AlgogenError> {
    settings
        .get(key)
        .map(|v| {
            v.trim().parse::<f64>().map_err(|_| AlgogenError::InvalidSetting {
                key: key.into(),
                value: v.clone(),
            })
        })
        .transpose()
}

/// Dual step schedule from `dual_step` / `dual_period` / `dual_schedule`.
pub fn dual_schedule(settings: &BTreeMap<String, String>) -> Result<StepSchedule, AlgogenError> {
    let alpha0 = setting_f64(settings, "dual_step")?.unwrap_or(0.05);
    let period = setting_f64(settings, "dual_period")?.unwrap_or(10.0).max(1.0) as u64;
    Ok(match settings.get("dual_schedule").map(String::as_str) {
        Some("constant") => StepSchedule::Constant(alpha0),
        None | Some("diminishing") => StepSchedule::Diminishing { alpha0, period },
        Some(v) => {
            return Err(AlgogenError::InvalidSetting {
                key: "dual_schedule".into(),
                value: v.into(),
            })
        }
    })
}

fn is_var(a: &Atom, var: &ElementId) -> bool {
    a.kind == AtomKind::Var && a.name == var.as_str() && a.index.is_none()
}

/// Recognizes `a*log(x) + b*x + sum c_k*D_k*x` (constants ignored).
pub fn match_separable(template: &Poly, var: &ElementId) -> Option<SeparableShape> {
    let mut shape = SeparableShape {
        log_coef: 0.0,
        lin_coef: 0.0,
        couplings: Vec::new(),
    };
    for (m, c) in template.terms() {
        match m.factors() {
            [] => {}
            [Factor::Atom(a)] if is_var(a, var) => shape.lin_coef += c,
            [Factor::Log(p)] => {
                let inner: Vec<_> = p.terms().collect();
                match inner.as_slice() {
                    [(im, 1.0)] if matches!(im.factors(), [Factor::Atom(a)] if is_var(a, var)) => shape.log_coef += c,
                    _ => return None,
                }
            }
            [Factor::Atom(a), Factor::Atom(d)] if is_var(a, var) && d.kind == AtomKind::Dual => {
                shape.couplings.push((d.clone(), c))
            }
            _ => return None,
        }
    }
    Some(shape)
}

fn smooth(p: &Poly) -> bool {
    // Every factor in the operator set is differentiable on its domain.
    p.terms().all(|(m, _)| {
        m.factors().iter().all(|f| match f {
            Factor::Atom(_) => true,
            Factor::Log(q) | Factor::Sqrt(q) | Factor::Recip(q) => smooth(q),
        })
    })
}

pub fn synthesize_plan(
    role: &RoleTemplate,
    bounds: Bounds,
    settings: &BTreeMap<String, String>,
) -> Result<SolverPlan, AlgogenError> {
    let [variable] = role.variables.as_slice() else {
        return Err(AlgogenError::NoApplicableMethod(format!(
            "role {} controls {} variables",
            role.name(),
            role.variables.len()
        )));
    };
    if !smooth(&role.expression) {
        return Err(AlgogenError::NoApplicableMethod(role.expression.to_string()));
    }
    let mut step = StepSchedule::Constant(setting_f64(settings, "primal_step")?.unwrap_or(0.05));
    let mut iterations = 1;
    let mut shape = None;
    let method = if role.layer == Layer::Physical {
        step = StepSchedule::Constant(setting_f64(settings, "power_step")?.unwrap_or(10.0));
        match settings.get("case").map(String::as_str) {
            None | Some("dpl") | Some("case3") => Method::Dpl,
            Some("best_response") | Some("case1") => Method::BestResponse,
            Some("gradient") | Some("projected_gradient") | Some("case2") => Method::ProjectedGradient,
            Some(v) => {
                return Err(AlgogenError::InvalidSetting {
                    key: "case".into(),
                    value: v.into(),
                })
            }
        }
    } else {
        match match_separable(&role.expression, variable) {
            Some(s) if s.log_coef > 0.0 => {
                shape = Some(s);
                Method::ClosedFormReciprocal
            }
            Some(s) if s.log_coef == 0.0 => {
                shape = Some(s);
                Method::BoundProjection
            }
            _ => {
                iterations = 10;
                Method::ProjectedGradient
            }
        }
    };
    Ok(SolverPlan {
        role: role.name(),
        layer: role.layer,
        entity: role.entity,
        variable: variable.clone(),
        method,
        step,
        bounds,
        iterations_per_tick: iterations,
        template: role.expression.clone(),
        shape,
    })
}

/// Solves a transport-style plan given the dual aggregates named in its template.
///
/// `value` supplies every non-variable atom; `current` is the present knob value.
pub fn solve_local(
    plan: &SolverPlan,
    value: &dyn Fn(&Atom) -> Option<f64>,
    current: f64,
) -> Result<f64, AlgogenError> {
    let b = plan.bounds;
    match (plan.method, &plan.shape) {
        (Method::ClosedFormReciprocal, Some(s)) => {
            let denom = -s.slope(value)?;
            Ok(if denom <= 0.0 {
                b.hi
            } else {
                b.clamp(s.log_coef / denom)
            })
        }
        (Method::BoundProjection, Some(s)) => Ok(if s.slope(value)? > 0.0 { b.hi } else { b.lo }),
        _ => {
            let mut x = b.clamp(current);
            for it in 1..=plan.iterations_per_tick {
                let missing = std::cell::RefCell::new(None);
                let (_, g) = plan.template.eval_dual(&|a: &Atom| {
                    if is_var(a, &plan.variable) {
                        (x, 1.0)
                    } else {
                        match value(a) {
                            Some(v) => (v, 0.0),
                            None => {
                                *missing.borrow_mut() = Some(a.to_string());
                                (0.0, 0.0)
                            }
                        }
                    }
                });
                if let Some(m) = missing.into_inner() {
                    return Err(AlgogenError::MissingParameter(m));
                }
                if !g.is_finite() {
                    return Err(AlgogenError::NotDifferentiable(format!("{} at {x}", plan.template)));
                }
                x = b.clamp(x + plan.step.alpha(it as u64) * g);
            }
            Ok(x)
        }
    }
}

/// Every plan and dual rule for a compiled program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    pub plans: Vec<SolverPlan>,
    pub duals: Vec<DualUpdateRule>,
}

impl PlanSet {
    pub fn plan(&self, layer: Layer) -> Option<&SolverPlan> {
        self.plans.iter().find(|p| p.layer == layer)
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        for p in &self.plans {
            s.push_str(&format!("{p}\n"));
        }
        for d in &self.duals {
            s.push_str(&format!(
                "entity={} method=dual_subgradient step={} bounds=0,inf\n",
                d.family, d.step
            ));
        }
        s
    }
}

pub fn synthesize(program: &AbstractProgram) -> Result<PlanSet, AlgogenError> {
    let mut plans = Vec::new();
    for role in &program.roles {
        let bounds = role
            .variables
            .first()
            .and_then(|v| program.var_bounds.get(v))
            .copied()
            .unwrap_or(Bounds::new(f64::NEG_INFINITY, f64::INFINITY));
        plans.push(synthesize_plan(role, bounds, &program.settings)?);
    }
    let step = dual_schedule(&program.settings)?;
    let duals = program
        .families
        .iter()
        .map(|f| DualUpdateRule {
            family: f.name.clone(),
            step,
        })
        .collect();
    Ok(PlanSet { plans, duals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::{build_default_schema, parse_program};
    use crate::decomposer::compile;

    fn plans(text: &str) -> PlanSet {
        let spec = parse_program(text).unwrap();
        let c = compile(&spec, &build_default_schema(), 0).unwrap();
        synthesize(&c.program).unwrap()
    }

    const CP1: &str = include_str!("../../../../programs/cp1.wnos");
    const CP2: &str = include_str!("../../../../programs/cp2.wnos");

    fn lam(v: f64) -> impl Fn(&Atom) -> Option<f64> {
        move |a: &Atom| (a.kind == AtomKind::Dual).then_some(v)
    }

    #[test]
    fn dual_update_examples() {
        assert!((dual_update(0.2, 1.0, 0.05) - 0.25).abs() < 1e-12);
        assert_eq!(dual_update(0.02, -1.0, 0.05), 0.0);
        let s = StepSchedule::Diminishing {
            alpha0: 0.1,
            period: 1,
        };
        assert!((dual_update(0.3, 0.5, s.alpha(10)) - 0.305).abs() < 1e-12);
        let d = StepSchedule::default();
        assert_eq!(d.alpha(1), 0.05);
        assert_eq!(d.alpha(10), 0.05);
        assert_eq!(d.alpha(11), 0.025);
        assert_eq!(dual_update(0.7, 0.0, 0.3), 0.7);
    }

    #[test]
    fn log_template_is_closed_form() {
        let ps = plans(CP1);
        let p = ps.plan(Layer::Transport).unwrap();
        assert_eq!(p.method, Method::ClosedFormReciprocal);
        let mut p = p.clone();
        p.bounds = Bounds::new(0.01, 10.0);
        assert!((solve_local(&p, &lam(0.5), 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(solve_local(&p, &lam(0.0), 1.0).unwrap(), 10.0);
        assert_eq!(ps.plan(Layer::Physical).unwrap().method, Method::Dpl);
    }

    #[test]
    fn linear_template_projects_to_bounds() {
        let ps = plans(CP2);
        let p = ps.plan(Layer::Transport).unwrap();
        assert_eq!(p.method, Method::BoundProjection);
        assert_eq!(solve_local(p, &lam(0.4), 3.0).unwrap(), p.bounds.hi);
        assert_eq!(solve_local(p, &lam(1.0), 3.0).unwrap(), p.bounds.lo);
        assert_eq!(solve_local(p, &lam(2.0), 3.0).unwrap(), p.bounds.lo);
    }

    #[test]
    fn closed_form_agrees_with_golden_section() {
        let ps = plans(CP1);
        let mut p = ps.plan(Layer::Transport).unwrap().clone();
        p.bounds = Bounds::new(0.01, 50.0);
        for v in [0.03, 0.1, 0.77, 2.5, 40.0] {
            let x = solve_local(&p, &lam(v), 1.0).unwrap();
            // The template aggregates one dual sum; its value is `v`.
            let f = |x: f64| x.ln() - x * v;
            let (mut lo, mut hi) = (p.bounds.lo, p.bounds.hi);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            for _ in 0..200 {
                let a = hi - g * (hi - lo);
                let b = lo + g * (hi - lo);
                if f(a) < f(b) {
                    lo = a;
                } else {
                    hi = b;
                }
            }
            assert!((x - (lo + hi) / 2.0).abs() < 1e-6, "v={v}: {x} vs {}", (lo + hi) / 2.0);
        }
    }

    #[test]
    fn physical_case_setting() {
        let ps = plans(&format!("nt.set('case', 'best_response')\n{CP1}"));
        assert_eq!(ps.plan(Layer::Physical).unwrap().method, Method::BestResponse);
        let dump = ps.dump();
        assert!(dump.contains("entity=transport/session method=closed_form_reciprocal"));
        assert!(dump.contains("entity=lbd method=dual_subgradient"));
    }

    #[test]
    fn general_template_uses_projected_gradient() {
        let text = "\
nt.make_var('x', [ntses, sesrate], [all, None], [0.1, 10])
nt.make_var('p', [ntlk, lkpwr], [all, None])
expr = mkexpr('sum(sqrt(x))', 'x')
nt.add_cstr('sum(ntlk.lkses.sesrate) <= ntlk.lkcap', 'x')
nt.objective(max, expr)
";
        let ps = plans(text);
        let p = ps.plan(Layer::Transport).unwrap();
        assert_eq!(p.method, Method::ProjectedGradient);
        // sqrt(x) - x*L has its maximum at 1/(4 L^2).
        let mut x = 1.0;
        for _ in 0..2000 {
            x = solve_local(p, &lam(0.25), x).unwrap();
        }
        assert!((x - 4.0).abs() < 1e-3, "{x}");
    }
}
