//! Penalized individual utilities for coupled agents (physical-layer power control).

use serde::{Deserialize, Serialize};

use super::AlgogenError;
use crate::abstraction::Bounds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// Own utility only, no signaling.
    BestResponse,
    /// Both terms linearized at the reference point.
    Gradient,
    /// Own nonlinearity kept, others' sensitivity linearized.
    Dpl,
}

/// Agent `i`'s view of a joint utility `U = U_i + sum_{j != i} U_j`.
pub trait AgentUtilities {
    /// `U_i(x_i, x_{-i}^0)`.
    fn own(&self, x: f64) -> f64;
    fn own_gradient(&self, x: f64) -> f64;
    /// `sum_{j != i} dU_j/dx_i` at the reference point.
    fn others_gradient(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedUtility {
    pub case: Case,
    pub reference: f64,
    pub own_gradient: f64,
    pub others_gradient: f64,
}

impl PenalizedUtility {
    pub fn theta(&self, agent: &dyn AgentUtilities, x: f64) -> f64 {
        match self.case {
            Case::BestResponse | Case::Dpl => agent.own(x),
            Case::Gradient => self.own_gradient * (x - self.reference),
        }
    }

    pub fn gamma(&self, x: f64) -> f64 {
        match self.case {
            Case::BestResponse => 0.0,
            Case::Gradient => self.others_gradient * (x - self.reference),
            Case::Dpl => self.others_gradient * x,
        }
    }

    pub fn value(&self, agent: &dyn AgentUtilities, x: f64) -> f64 {
        self.theta(agent, x) + self.gamma(x)
    }

    pub fn gradient(&self, agent: &dyn AgentUtilities, x: f64) -> f64 {
        match self.case {
            Case::BestResponse => agent.own_gradient(x),
            Case::Gradient => self.own_gradient + self.others_gradient,
            Case::Dpl => agent.own_gradient(x) + self.others_gradient,
        }
    }
}

pub fn penalize(case: Case, agent: &dyn AgentUtilities, reference: f64) -> Result<PenalizedUtility, AlgogenError> {
    let own_gradient = agent.own_gradient(reference);
    let others_gradient = if case == Case::BestResponse {
        0.0
    } else {
        agent.others_gradient()
    };
    if case != Case::BestResponse && !(own_gradient.is_finite() && others_gradient.is_finite()) {
        return Err(AlgogenError::NotDifferentiable(format!("gradient at {reference}")));
    }
    Ok(PenalizedUtility {
        case,
        reference,
        own_gradient,
        others_gradient,
    })
}

/// One improvement step on a penalized utility over a box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSearch {
    pub step: f64,
    pub max_step: f64,
    pub grid: usize,
}

impl Default for PowerSearch {
    fn default() -> Self {
        PowerSearch {
            step: 10.0,
            max_step: 2.0,
            grid: 61,
        }
    }
}

impl PowerSearch {
    pub fn improve(&self, pu: &PenalizedUtility, agent: &dyn AgentUtilities, bounds: Bounds) -> f64 {
        let x0 = bounds.clamp(pu.reference);
        match pu.case {
            Case::BestResponse => {
                let n = self.grid.max(2);
                let mut best = (bounds.lo, pu.value(agent, bounds.lo));
                for k in 1..n {
                    let x = bounds.lo + (bounds.hi - bounds.lo) * k as f64 / (n - 1) as f64;
                    let v = pu.value(agent, x);
                    if v > best.1 {
                        best = (x, v);
                    }
                }
                best.0
            }
            Case::Gradient => {
                let d = (self.step * pu.gradient(agent, x0)).clamp(-self.max_step, self.max_step);
                bounds.clamp(x0 + d)
            }
            Case::Dpl => {
                let g = pu.gradient(agent, x0);
                let d = (self.step * g).clamp(-self.max_step, self.max_step);
                let f0 = pu.value(agent, x0);
                let mut t = 1.0;
                for _ in 0..12 {
                    let x = bounds.clamp(x0 + t * d);
                    if pu.value(agent, x) >= f0 + 1e-4 * g * (x - x0) {
                        return x;
                    }
                    t *= 0.5;
                }
                x0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Own utility `-(x-3)^2`, others contribute slope 1 at the reference.
    struct Quad;

    impl AgentUtilities for Quad {
        fn own(&self, x: f64) -> f64 {
            -(x - 3.0).powi(2)
        }
        fn own_gradient(&self, x: f64) -> f64 {
            -2.0 * (x - 3.0)
        }
        fn others_gradient(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn case_terms() {
        let b = penalize(Case::BestResponse, &Quad, 1.0).unwrap();
        assert_eq!(b.gamma(7.0), 0.0);
        assert_eq!(b.theta(&Quad, 2.0), Quad.own(2.0));
        let g = penalize(Case::Gradient, &Quad, 1.0).unwrap();
        assert_eq!(g.theta(&Quad, 2.0), 4.0);
        assert_eq!(g.gamma(2.0), 1.0);
        let d = penalize(Case::Dpl, &Quad, 1.0).unwrap();
        assert_eq!(d.theta(&Quad, 2.0), -1.0);
        assert_eq!(d.gamma(2.0), 2.0);
    }

    #[test]
    fn steps_stay_in_bounds_and_ascend() {
        let bounds = Bounds::new(0.0, 30.0);
        let s = PowerSearch::default();
        for case in [Case::BestResponse, Case::Gradient, Case::Dpl] {
            let mut x = 20.0;
            for _ in 0..100 {
                let pu = penalize(case, &Quad, x).unwrap();
                let nx = s.improve(&pu, &Quad, bounds);
                assert!(bounds.contains(nx));
                if case == Case::Dpl {
                    assert!(pu.value(&Quad, nx) >= pu.value(&Quad, x) - 1e-12);
                }
                x = nx;
            }
            let want = if case == Case::BestResponse { 3.0 } else { 3.5 };
            assert!((x - want).abs() < 0.6, "{case:?}: {x}");
        }
    }
}
