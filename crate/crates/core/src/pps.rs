//! Per-node programmable protocol stack: register plane, decision plane and layer knobs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::{Bounds, Layer};
use crate::algogen::{
    penalize, solve_local, AgentUtilities, AlgogenError, Case, DualUpdateRule, Method, PowerSearch, SolverPlan,
};
use crate::decomposer::{Atom, AtomKind, Poly};
use crate::netsim::channel::LinkGeometry;
use crate::netsim::scenario::DEFAULT_PACKET_SIZE;

pub const MAX_GAIN_DB: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PpsError {
    #[error("node {node}: {message}")]
    RoleMismatch { node: u32, message: String },
    #[error("node {node}: register `{register}` is {age} slots old")]
    StaleRegisters { node: u32, register: String, age: u64 },
    #[error(transparent)]
    Solver(#[from] AlgogenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    DualReport,
    GradientReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalingMessage {
    pub kind: MessageKind,
    /// Link the payload describes (the reporting link).
    pub source: usize,
    /// Dual family for dual reports; for gradient reports, the interfering link addressed.
    pub key: usize,
    pub payload: f64,
    pub timestamp: u64,
    pub hop_budget: u32,
}

/// A message with its destination node (position in the node table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub to: usize,
    pub msg: SignalingMessage,
}

/// What a link receiver measured this slot.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RxMeasurement {
    pub signal_mw: f64,
    pub n_plus_i: f64,
    /// (interfering link, received power mW).
    pub interferers: Vec<(usize, f64)>,
    pub capacity: f64,
    pub tx_gain_db: f64,
    /// (session, arrival rate packets/s) into the link.
    pub arrivals: Vec<(usize, f64)>,
    pub backlog: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegisterPlane {
    /// Noise plus interference at each outgoing link's receiver, as fed back (mW).
    pub noise_plus_interference: BTreeMap<usize, f64>,
    pub queue_len: BTreeMap<usize, f64>,
    pub measured_link_rate: BTreeMap<usize, f64>,
    /// (family, link) -> (lambda, timestamp).
    pub received_duals: BTreeMap<(usize, usize), (f64, u64)>,
    /// (own link, victim link) -> (dU_victim/dg_own, timestamp).
    pub gradient_reports: BTreeMap<(usize, usize), (f64, u64)>,
    /// Received power from each interfering transmitter at this node's receivers (mW).
    pub neighbor_powers: BTreeMap<usize, f64>,
    pub rx: BTreeMap<usize, RxMeasurement>,
    pub rejected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPlane {
    pub transport: Option<SolverPlan>,
    pub physical: Option<SolverPlan>,
    pub transport_period: u64,
    pub physical_period: u64,
    pub case: Case,
    pub search: PowerSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modulation {
    Bpsk,
    Qpsk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportKnobs {
    pub rate: BTreeMap<usize, f64>,
    pub window: u32,
    pub packet_size: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkKnobs {
    pub next_hop: BTreeMap<usize, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatalinkKnobs {
    pub fec_rate: f64,
    pub max_retx: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalKnobs {
    pub tx_gain_db: BTreeMap<usize, f64>,
    pub band: BTreeMap<usize, usize>,
    pub modulation: Modulation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerKnobs {
    pub transport: TransportKnobs,
    pub network: NetworkKnobs,
    pub datalink: DatalinkKnobs,
    pub physical: PhysicalKnobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRole {
    pub session: usize,
    pub path: Vec<usize>,
    pub next_hop: u32,
    pub bounds: Bounds,
    pub initial: f64,
    /// Rate is fixed (no transport control for this scheme).
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxRole {
    pub link: usize,
    pub band: usize,
    pub bounds: Bounds,
    pub initial: f64,
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RxRole {
    pub link: usize,
    /// (node, hops) for every dual report recipient: the link transmitter and the session sources.
    pub report_to: Vec<(usize, u32)>,
    /// Same-band links whose transmitters receive gradient reports: (link, tx node).
    pub interferers: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roles {
    pub sources: Vec<SourceRole>,
    pub tx: Vec<TxRole>,
    pub rx: Vec<RxRole>,
}

/// Static knowledge shared by every stack.
pub struct StackEnv<'a> {
    pub geometry: &'a LinkGeometry,
    pub families: &'a [String],
    /// (family, link) -> constraint function `h` (feasible when `<= 0`).
    pub h: &'a BTreeMap<(usize, usize), Poly>,
    pub dual_rules: &'a [DualUpdateRule],
    pub params: &'a BTreeMap<String, f64>,
    pub overload_penalty: f64,
    pub staleness: u64,
    /// Receivers report gradients only when some transmitter optimizes power.
    pub gradients: bool,
    /// The physical-layer template, known network-wide once installed.
    pub physical_template: Option<&'a Poly>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TickReport {
    pub transport: bool,
    pub physical: bool,
    pub stale: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: u32,
    pub roles: Roles,
    pub registers: RegisterPlane,
    pub decision: DecisionPlane,
    pub knobs: LayerKnobs,
    /// (family, link) -> lambda, held at the link receiver.
    pub duals: BTreeMap<(usize, usize), f64>,
    seen: BTreeSet<(MessageKind, usize, usize, u64)>,
}

fn family_index(families: &[String], name: &str) -> Option<usize> {
    families.iter().position(|f| f == name)
}

/// Physical agent for one outgoing link: its own template term with interference frozen.
struct LinkAgent<'a> {
    template: &'a Poly,
    geometry: &'a LinkGeometry,
    link: usize,
    n_plus_i: f64,
    lambda: &'a dyn Fn(&str) -> Option<f64>,
    params: &'a BTreeMap<String, f64>,
    others: f64,
}

impl LinkAgent<'_> {
    fn eval(&self, g: f64) -> (f64, f64) {
        let (c, dc) = self.geometry.own_slope(self.link, g, self.n_plus_i);
        self.template.eval_dual(&|a: &Atom| match a.kind {
            AtomKind::Var if a.name == "lnkpwr" => (g, 1.0),
            AtomKind::Derived if a.name == "lnkcap" => (c, dc),
            AtomKind::Derived if a.name == "lnksinr" => {
                let s = crate::netsim::channel::db_to_mw(g) * self.geometry.gain[self.link][self.link] / self.n_plus_i;
                (s, s * std::f64::consts::LN_10 / 10.0)
            }
            AtomKind::Dual => ((self.lambda)(&a.name).unwrap_or(0.0), 0.0),
            _ => (self.params.get(&a.name).copied().unwrap_or(0.0), 0.0),
        })
    }
}

impl AgentUtilities for LinkAgent<'_> {
    fn own(&self, x: f64) -> f64 {
        self.eval(x).0
    }

    fn own_gradient(&self, x: f64) -> f64 {
        self.eval(x).1
    }

    fn others_gradient(&self) -> f64 {
        self.others
    }
}

pub fn case_of(method: Method) -> Case {
    match method {
        Method::BestResponse => Case::BestResponse,
        Method::ProjectedGradient => Case::Gradient,
        _ => Case::Dpl,
    }
}

impl Node {
    /// Installs plans for the roles this node plays; knobs start at each role's initial value.
    pub fn install(
        id: u32,
        roles: Roles,
        transport: Option<&SolverPlan>,
        physical: Option<&SolverPlan>,
        ratio: u64,
        search: PowerSearch,
    ) -> Result<Node, PpsError> {
        if let Some(p) = transport {
            if p.layer != Layer::Transport {
                return Err(PpsError::RoleMismatch {
                    node: id,
                    message: format!("{} installed as transport", p.role),
                });
            }
        }
        if let Some(p) = physical {
            if p.layer != Layer::Physical {
                return Err(PpsError::RoleMismatch {
                    node: id,
                    message: format!("{} installed as physical", p.role),
                });
            }
        }
        let controls_rate = roles.sources.iter().any(|s| !s.fixed);
        let controls_power = roles.tx.iter().any(|t| !t.fixed);
        if controls_rate && transport.is_none() {
            return Err(PpsError::RoleMismatch {
                node: id,
                message: "source role without a transport plan".into(),
            });
        }
        if controls_power && physical.is_none() {
            return Err(PpsError::RoleMismatch {
                node: id,
                message: "transmitter role without a physical plan".into(),
            });
        }
        let case = physical.map(|p| case_of(p.method)).unwrap_or(Case::Dpl);
        let knobs = LayerKnobs {
            transport: TransportKnobs {
                rate: roles.sources.iter().map(|s| (s.session, s.bounds.clamp(s.initial))).collect(),
                window: 64,
                packet_size: DEFAULT_PACKET_SIZE,
            },
            network: NetworkKnobs {
                next_hop: roles.sources.iter().map(|s| (s.session, s.next_hop)).collect(),
            },
            datalink: DatalinkKnobs {
                fec_rate: 0.2,
                max_retx: 0,
            },
            physical: PhysicalKnobs {
                tx_gain_db: roles.tx.iter().map(|t| (t.link, t.bounds.clamp(t.initial))).collect(),
                band: roles.tx.iter().map(|t| (t.link, t.band)).collect(),
                modulation: Modulation::Bpsk,
            },
        };
        Ok(Node {
            id,
            decision: DecisionPlane {
                transport: transport.filter(|_| controls_rate).cloned(),
                physical: physical.filter(|_| controls_power).cloned(),
                transport_period: ratio,
                physical_period: 1,
                case,
                search,
            },
            roles,
            registers: RegisterPlane::default(),
            knobs,
            duals: BTreeMap::new(),
            seen: BTreeSet::new(),
        })
    }

    /// Swaps in a new set of plans, keeping registers and knobs.
    pub fn reinstall(&mut self, transport: Option<&SolverPlan>, physical: Option<&SolverPlan>) {
        self.decision.transport = transport.filter(|_| self.roles.sources.iter().any(|s| !s.fixed)).cloned();
        self.decision.physical = physical.filter(|_| self.roles.tx.iter().any(|t| !t.fixed)).cloned();
        if let Some(p) = physical {
            self.decision.case = case_of(p.method);
        }
    }

    pub fn handle_signal(&mut self, msg: &SignalingMessage) {
        if !msg.payload.is_finite() || (msg.kind == MessageKind::DualReport && msg.payload < 0.0) {
            self.registers.rejected += 1;
            log::debug!("node {} rejected {:?}", self.id, msg);
            return;
        }
        if !self.seen.insert((msg.kind, msg.source, msg.key, msg.timestamp)) {
            return;
        }
        let slot = match msg.kind {
            MessageKind::DualReport => self.registers.received_duals.entry((msg.key, msg.source)),
            MessageKind::GradientReport => self.registers.gradient_reports.entry((msg.key, msg.source)),
        };
        let e = slot.or_insert((msg.payload, msg.timestamp));
        if msg.timestamp >= e.1 {
            *e = (msg.payload, msg.timestamp);
        }
    }

    fn eval_h(&self, h: &Poly, m: &RxMeasurement, env: &StackEnv) -> f64 {
        h.eval(&|a: &Atom| match a.name.as_str() {
            "sesrate" => m
                .arrivals
                .iter()
                .find(|(s, _)| Some(*s as u32) == a.index)
                .map(|(_, r)| *r)
                .unwrap_or(0.0),
            "lnkcap" => m.capacity,
            "lnkpwr" => m.tx_gain_db,
            "lnksinr" => m.signal_mw / m.n_plus_i,
            other => env.params.get(other).copied().unwrap_or(0.0),
        })
    }

    /// Receiver side: dual update for each incoming link, then dual and gradient reports.
    pub fn receive_step(&mut self, t: u64, k: u64, env: &StackEnv) -> Vec<Envelope> {
        let mut out = Vec::new();
        for rx in &self.roles.rx {
            let l = rx.link;
            let Some(m) = self.registers.rx.get(&l) else { continue };
            for (f, rule) in env.dual_rules.iter().enumerate() {
                let Some(h) = env.h.get(&(f, l)) else { continue };
                let slack = self.eval_h(h, m, env) + env.overload_penalty * m.backlog;
                let lam = self.duals.entry((f, l)).or_insert(0.0);
                *lam = rule.apply(*lam, slack, k);
                for &(to, hops) in &rx.report_to {
                    out.push(Envelope {
                        to,
                        msg: SignalingMessage {
                            kind: MessageKind::DualReport,
                            source: l,
                            key: f,
                            payload: *lam,
                            timestamp: t,
                            hop_budget: hops,
                        },
                    });
                }
            }
            if !env.gradients || rx.interferers.is_empty() {
                continue;
            }
            // dU_l/dc_l from the physical template at this link.
            let du_dc = self.decision_template_slope(l, m, env);
            let s = m.signal_mw / m.n_plus_i;
            let base = env.geometry.scale[l]
                * if env.geometry.model.high_snr_approx { 1.0 } else { s / (1.0 + s) }
                / std::f64::consts::LN_2
                * std::f64::consts::LN_10
                / 10.0;
            for &(i, to) in &rx.interferers {
                let r = m.interferers.iter().find(|(j, _)| *j == i).map(|(_, p)| *p).unwrap_or(0.0);
                let g = -du_dc * base * r / m.n_plus_i;
                out.push(Envelope {
                    to,
                    msg: SignalingMessage {
                        kind: MessageKind::GradientReport,
                        source: l,
                        key: i,
                        payload: g,
                        timestamp: t,
                        hop_budget: 1,
                    },
                });
            }
        }
        out
    }

    fn decision_template_slope(&self, l: usize, m: &RxMeasurement, env: &StackEnv) -> f64 {
        let lam = |name: &str| family_index(env.families, name).and_then(|f| self.duals.get(&(f, l)).copied());
        let Some(t) = env.physical_template else {
            return (0..env.families.len()).map(|f| self.duals.get(&(f, l)).copied().unwrap_or(0.0)).sum();
        };
        t.eval_dual(&|a: &Atom| match a.kind {
            AtomKind::Derived if a.name == "lnkcap" => (m.capacity, 1.0),
            AtomKind::Var if a.name == "lnkpwr" => (m.tx_gain_db, 0.0),
            AtomKind::Dual => (lam(&a.name).unwrap_or(0.0), 0.0),
            _ => (env.params.get(&a.name).copied().unwrap_or(0.0), 0.0),
        })
        .1
    }

    /// Runs the installed solvers due at slot `t` and writes their knobs.
    pub fn tick(&mut self, t: u64, env: &StackEnv) -> Result<TickReport, PpsError> {
        let mut report = TickReport::default();
        if self.decision.physical.is_some() && t.is_multiple_of(self.decision.physical_period) {
            report.physical = true;
            self.physical_step(t, env);
        }
        if self.decision.transport.is_some() && t.is_multiple_of(self.decision.transport_period) {
            report.transport = true;
            report.stale = self.transport_step(t, env)?;
        }
        Ok(report)
    }

    fn physical_step(&mut self, t: u64, env: &StackEnv) {
        let plan = self.decision.physical.as_ref().expect("physical plan");
        for tx in self.roles.tx.iter().filter(|x| !x.fixed) {
            let l = tx.link;
            let Some(&ni) = self.registers.noise_plus_interference.get(&l) else {
                continue;
            };
            let regs = &self.registers;
            let lambda = |name: &str| {
                family_index(env.families, name).and_then(|f| regs.received_duals.get(&(f, l)).map(|v| v.0))
            };
            let others: f64 = regs
                .gradient_reports
                .range((l, 0)..=(l, usize::MAX))
                .filter(|(_, (_, ts))| t.saturating_sub(*ts) <= env.staleness)
                .map(|(_, (g, _))| *g)
                .sum();
            let agent = LinkAgent {
                template: &plan.template,
                geometry: env.geometry,
                link: l,
                n_plus_i: ni,
                lambda: &lambda,
                params: env.params,
                others,
            };
            let g0 = self.knobs.physical.tx_gain_db[&l];
            let bounds = tx.bounds.intersect(&Bounds::new(0.0, MAX_GAIN_DB));
            let g = match penalize(self.decision.case, &agent, g0) {
                Ok(pu) => self.decision.search.improve(&pu, &agent, bounds),
                Err(e) => {
                    log::warn!("node {}: {e}", self.id);
                    g0
                }
            };
            self.knobs.physical.tx_gain_db.insert(l, bounds.clamp(g));
        }
    }

    fn transport_step(&mut self, t: u64, env: &StackEnv) -> Result<u32, PpsError> {
        let plan = self.decision.transport.as_ref().expect("transport plan");
        let mut stale = 0;
        for src in self.roles.sources.iter().filter(|s| !s.fixed) {
            let regs = &self.registers;
            let mut oldest = 0;
            let value = |a: &Atom| -> Option<f64> {
                match (a.kind, &a.over) {
                    (AtomKind::Dual, Some(_)) => {
                        let f = family_index(env.families, &a.name)?;
                        Some(
                            src.path
                                .iter()
                                .map(|l| regs.received_duals.get(&(f, *l)).map(|v| v.0).unwrap_or(0.0))
                                .sum(),
                        )
                    }
                    (AtomKind::Dual, None) => None,
                    _ => env.params.get(&a.name).copied(),
                }
            };
            for (&(_, l), &(_, ts)) in &regs.received_duals {
                if src.path.contains(&l) {
                    oldest = oldest.max(t.saturating_sub(ts));
                }
            }
            if oldest > env.staleness {
                let e = PpsError::StaleRegisters {
                    node: self.id,
                    register: format!("received_duals for session {}", src.session),
                    age: oldest,
                };
                log::warn!("{e}; holding previous rate");
                stale += 1;
                continue;
            }
            let cur = self.knobs.transport.rate[&src.session];
            let x = solve_local(plan, &value, cur)?;
            self.knobs.transport.rate.insert(src.session, src.bounds.clamp(x));
        }
        Ok(stale)
    }
}
