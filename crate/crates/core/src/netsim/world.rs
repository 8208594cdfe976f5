//! The slot loop: channel, fluid queues, signaling and installed stacks.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::binding::Binding;
use super::channel::{db_to_mw, LinkGeometry};
use super::metrics::{MetricsLog, SlotRecord};
use super::scenario::Scenario;
use super::{NetsimError, Scheme};
use crate::abstraction::Bounds;
use crate::algogen::{DualUpdateRule, PlanSet, PowerSearch, StepSchedule};
use crate::decomposer::{Atom, AtomKind, Poly};
use crate::pps::{Envelope, Node, Roles, RxMeasurement, RxRole, SourceRole, StackEnv, TxRole, MAX_GAIN_DB};

pub const TIMESCALE_RATIO: u64 = 30;
const INIT_STREAM: u64 = 0x005e_ed0f_1a17;
const THROUGHPUT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed: u64,
    /// Start controlled knobs at random points instead of mid-range.
    pub random_init: bool,
    /// Physical slots per transport period.
    pub ratio: u64,
    pub slot_seconds: f64,
    pub ewma_slots: f64,
    /// Register age (slots) past which a transport solver holds its rate.
    pub staleness: u64,
    pub duration: Option<u64>,
}

impl RunOptions {
    pub fn new(seed: u64) -> Self {
        RunOptions {
            seed,
            random_init: false,
            ratio: TIMESCALE_RATIO,
            slot_seconds: 0.01,
            ewma_slots: 100.0,
            staleness: 3 * TIMESCALE_RATIO,
            duration: None,
        }
    }
}

struct InFlight {
    remaining: u32,
    env: Envelope,
}

pub struct World {
    pub scheme: Scheme,
    pub binding: Binding,
    pub geometry: LinkGeometry,
    pub nodes: Vec<Node>,
    pub log: MetricsLog,
    opts: RunOptions,
    scenario: Scenario,
    t: u64,
    dual_rules: Vec<DualUpdateRule>,
    overload_penalty: f64,
    /// Node position of each link's transmitter and receiver.
    link_nodes: Vec<(usize, usize)>,
    tx_nodes: Vec<usize>,
    /// `[link][session]` fluid backlog and next-slot arrivals (packets).
    queue: Vec<Vec<f64>>,
    staged: Vec<Vec<f64>>,
    signaling: Vec<InFlight>,
    throughput: Vec<f64>,
    injected: Vec<f64>,
    delivered: Vec<f64>,
}

/// Initial knob values: (rates, gains, which are fixed).
struct Init {
    rate: Vec<f64>,
    gain: Vec<f64>,
    rate_fixed: bool,
    power_fixed: bool,
}

fn draw(rng: &mut ChaCha8Rng, b: Bounds) -> f64 {
    if b.hi > b.lo {
        rng.gen_range(b.lo..=b.hi)
    } else {
        b.lo
    }
}

fn power_box(b: Bounds) -> Bounds {
    b.intersect(&Bounds::new(0.0, MAX_GAIN_DB))
}

fn initial_values(b: &Binding, scheme: Scheme, opts: &RunOptions) -> Result<Init, NetsimError> {
    let incompatible = |m: &str| Err(NetsimError::IncompatibleProgram(format!("{scheme} needs {m}")));
    if scheme == Scheme::WnosT && b.transport.is_none() {
        return incompatible("a transport plan");
    }
    if scheme == Scheme::WnosP && b.physical.is_none() {
        return incompatible("a physical plan");
    }
    let full = Bounds::new(0.0, MAX_GAIN_DB);
    let rate_box: Vec<Bounds> = b
        .rate_bounds
        .iter()
        .map(|r| Bounds::new(r.lo.max(0.0), r.hi.min(b.rate_cap)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let nc_rate: Vec<f64> = rate_box.iter().map(|r| draw(&mut rng, *r)).collect();
    let nc_gain: Vec<f64> = b.power_bounds.iter().map(|_| draw(&mut rng, full)).collect();
    let (mid_rate, mid_gain) = if opts.random_init {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ INIT_STREAM);
        (
            rate_box.iter().map(|r| draw(&mut rng, *r)).collect::<Vec<_>>(),
            b.power_bounds.iter().map(|p| draw(&mut rng, power_box(*p))).collect::<Vec<_>>(),
        )
    } else {
        (
            rate_box.iter().map(|r| 0.5 * (r.lo + r.hi)).collect(),
            b.power_bounds.iter().map(|p| power_box(*p).clamp(15.0)).collect(),
        )
    };
    let has_t = b.transport.is_some();
    let has_p = b.physical.is_some();
    let mut init = match scheme {
        Scheme::WnosTP => Init {
            rate: if has_t { mid_rate } else { nc_rate },
            gain: if has_p { mid_gain } else { nc_gain },
            rate_fixed: !has_t,
            power_fixed: !has_p,
        },
        Scheme::WnosT => Init {
            rate: mid_rate,
            gain: nc_gain,
            rate_fixed: false,
            power_fixed: true,
        },
        Scheme::WnosP => Init {
            rate: nc_rate,
            gain: mid_gain,
            rate_fixed: true,
            power_fixed: false,
        },
        Scheme::NoControl => Init {
            rate: nc_rate,
            gain: nc_gain,
            rate_fixed: true,
            power_fixed: true,
        },
        Scheme::BestResponse => Init {
            rate: rate_box.iter().map(|r| r.hi).collect(),
            gain: vec![MAX_GAIN_DB; b.power_bounds.len()],
            rate_fixed: true,
            power_fixed: true,
        },
    };
    if let Some(r) = b.fixed_rate {
        init.rate = vec![r; init.rate.len()];
        init.rate_fixed = true;
    }
    Ok(init)
}

fn ordered_rules(families: &[String], plans: &PlanSet) -> Vec<DualUpdateRule> {
    families
        .iter()
        .map(|f| {
            plans
                .duals
                .iter()
                .find(|r| &r.family == f)
                .cloned()
                .unwrap_or(DualUpdateRule {
                    family: f.clone(),
                    step: StepSchedule::Constant(0.05),
                })
        })
        .collect()
}

/// Processor sharing of `budget` over backlogs: equal shares, with unused share redistributed.
fn share(backlog: &[f64], budget: f64) -> Vec<f64> {
    let mut served = vec![0.0; backlog.len()];
    let mut order: Vec<usize> = (0..backlog.len()).filter(|s| backlog[*s] > 0.0).collect();
    order.sort_by(|a, b| backlog[*a].total_cmp(&backlog[*b]).then(a.cmp(b)));
    let mut left = budget;
    let n = order.len();
    for (k, &s) in order.iter().enumerate() {
        let fair = left / (n - k) as f64;
        let x = backlog[s].min(fair);
        served[s] = x;
        left -= x;
    }
    served
}

impl World {
    pub fn new(
        scenario: &Scenario,
        binding: Binding,
        plans: &PlanSet,
        scheme: Scheme,
        opts: RunOptions,
    ) -> Result<World, NetsimError> {
        let init = initial_values(&binding, scheme, &opts)?;
        let geometry = scenario.geometry();
        let topo = &binding.topology;
        let n_nodes = topo.node_ids.len();
        let n_links = topo.link_ids.len();
        let n_sessions = topo.session_ids.len();
        let mut roles: Vec<Roles> = (0..n_nodes)
            .map(|_| Roles {
                sources: vec![],
                tx: vec![],
                rx: vec![],
            })
            .collect();
        for (s, path) in topo.paths.iter().enumerate() {
            let src = topo.links[path[0]].0;
            roles[src].sources.push(SourceRole {
                session: s,
                path: path.clone(),
                next_hop: topo.node_ids[topo.links[path[0]].1],
                bounds: binding.rate_bounds[s],
                initial: init.rate[s],
                fixed: init.rate_fixed,
            });
        }
        let fixed_box = Bounds::new(0.0, MAX_GAIN_DB);
        for l in 0..n_links {
            let (tx, rx) = topo.links[l];
            roles[tx].tx.push(TxRole {
                link: l,
                band: geometry.band[l],
                bounds: if init.power_fixed { fixed_box } else { binding.power_bounds[l] },
                initial: init.gain[l],
                fixed: init.power_fixed,
            });
            let mut report: BTreeMap<usize, u32> = BTreeMap::from([(tx, 1)]);
            for s in topo.sessions_of_link(l) {
                let pos = topo.paths[s].iter().position(|x| *x == l).unwrap() as u32;
                let src = topo.links[topo.paths[s][0]].0;
                let e = report.entry(src).or_insert(pos + 1);
                *e = (*e).min(pos + 1);
            }
            report.remove(&rx);
            let interferers = (0..n_links)
                .filter(|j| *j != l && geometry.band[*j] == geometry.band[l])
                .map(|j| (j, topo.links[j].0))
                .collect();
            roles[rx].rx.push(RxRole {
                link: l,
                report_to: report.into_iter().collect(),
                interferers,
            });
        }
        let mut search = PowerSearch::default();
        if let Some(p) = &binding.physical {
            search.step = p.step.alpha(1);
        }
        let mut nodes = Vec::with_capacity(n_nodes);
        for (i, r) in roles.into_iter().enumerate() {
            let node = Node::install(
                topo.node_ids[i],
                r,
                binding.transport.as_ref(),
                binding.physical.as_ref(),
                opts.ratio,
                search,
            )
            .map_err(|e| NetsimError::IncompatibleProgram(e.to_string()))?;
            nodes.push(node);
        }
        let tx_nodes: Vec<usize> = (0..n_nodes).filter(|n| !nodes[*n].roles.tx.is_empty()).collect();
        let log = MetricsLog {
            session_ids: topo.session_ids.clone(),
            node_ids: tx_nodes.iter().map(|n| topo.node_ids[*n]).collect(),
            link_ids: topo.link_ids.clone(),
            records: vec![],
        };
        let dual_rules = ordered_rules(&binding.families, plans);
        let overload_penalty = binding.params.get("overload_penalty").copied().unwrap_or(0.0);
        Ok(World {
            scheme,
            link_nodes: topo.links.clone(),
            tx_nodes,
            geometry,
            nodes,
            log,
            opts,
            scenario: scenario.clone(),
            t: 0,
            dual_rules,
            overload_penalty,
            queue: vec![vec![0.0; n_sessions]; n_links],
            staged: vec![vec![0.0; n_sessions]; n_links],
            signaling: vec![],
            throughput: vec![0.0; n_sessions],
            injected: vec![0.0; n_sessions],
            delivered: vec![0.0; n_sessions],
            binding,
        })
    }

    pub fn slot(&self) -> u64 {
        self.t
    }

    fn session_active(&self, s: usize) -> bool {
        let spec = &self.scenario.sessions[s];
        self.t >= spec.start_slot.max(1)
            && (spec.packet_count == 0 || self.delivered[s] < spec.packet_count as f64 - 1e-9)
    }

    fn rate(&self, s: usize) -> f64 {
        let src = self.link_nodes[self.binding.topology.paths[s][0]].0;
        self.nodes[src].knobs.transport.rate[&s]
    }

    fn gains(&self) -> Vec<f64> {
        (0..self.link_nodes.len())
            .map(|l| self.nodes[self.link_nodes[l].0].knobs.physical.tx_gain_db[&l])
            .collect()
    }

    pub fn duration(&self) -> u64 {
        self.opts.duration.unwrap_or(self.scenario.duration)
    }

    /// Advances one slot.
    pub fn step(&mut self) -> Result<(), NetsimError> {
        self.t += 1;
        let t = self.t;
        let dt = self.opts.slot_seconds;
        let n_links = self.link_nodes.len();
        let n_sessions = self.throughput.len();
        let topo = self.binding.topology.clone();

        // Sources inject into their first link; packets served last slot land downstream.
        let mut arrivals = std::mem::replace(&mut self.staged, vec![vec![0.0; n_sessions]; n_links]);
        for s in 0..n_sessions {
            if !self.session_active(s) {
                continue;
            }
            let spec = &self.scenario.sessions[s];
            let mut x = self.rate(s) * dt;
            if spec.packet_count > 0 {
                x = x.min((spec.packet_count as f64 - self.injected[s]).max(0.0));
            }
            self.injected[s] += x;
            arrivals[topo.paths[s][0]][s] += x;
        }
        for l in 0..n_links {
            for s in 0..n_sessions {
                self.queue[l][s] += arrivals[l][s];
            }
        }

        // (1) capacities.
        let gains = self.gains();
        let active: Vec<bool> = (0..n_links)
            .map(|l| topo.sessions_of_link(l).iter().any(|s| self.session_active(*s)))
            .collect();
        let mut capacity = vec![0.0; n_links];
        for l in 0..n_links {
            let (tx, rx) = self.link_nodes[l];
            let ni = self.geometry.noise_plus_interference(l, &gains, &active);
            let signal = self.geometry.received(l, l, &gains);
            capacity[l] = self.geometry.capacity_at(l, signal / ni);
            let interferers = (0..n_links)
                .filter(|j| *j != l && active[*j] && self.geometry.band[*j] == self.geometry.band[l])
                .map(|j| (j, self.geometry.received(j, l, &gains)))
                .collect();
            let backlog: f64 = self.queue[l].iter().sum();
            self.nodes[rx].registers.rx.insert(
                l,
                RxMeasurement {
                    signal_mw: signal,
                    n_plus_i: ni,
                    interferers,
                    capacity: capacity[l],
                    tx_gain_db: gains[l],
                    arrivals: topo.sessions_of_link(l).into_iter().map(|s| (s, arrivals[l][s] / dt)).collect(),
                    backlog,
                },
            );
            // Receiver feedback to the transmitter (link-layer acknowledgements).
            let regs = &mut self.nodes[tx].registers;
            regs.noise_plus_interference.insert(l, ni);
            regs.queue_len.insert(l, backlog);
            regs.measured_link_rate.insert(l, capacity[l]);
        }

        // (2) deliver.
        let mut delivered_now = vec![0.0; n_sessions];
        for l in 0..n_links {
            let served = share(&self.queue[l], capacity[l] * dt);
            for (s, x) in served.into_iter().enumerate() {
                if x <= 0.0 {
                    continue;
                }
                self.queue[l][s] -= x;
                let path = &topo.paths[s];
                let pos = path.iter().position(|y| *y == l).unwrap();
                if pos + 1 == path.len() {
                    delivered_now[s] += x;
                } else {
                    self.staged[path[pos + 1]][s] += x;
                }
            }
        }
        let a = 1.0 / self.opts.ewma_slots;
        for s in 0..n_sessions {
            self.delivered[s] += delivered_now[s];
            self.throughput[s] += a * (delivered_now[s] / dt - self.throughput[s]);
        }

        // (3) slack and dual update at receivers, (4) signaling one hop, (5) stacks.
        let k = 1 + (t - 1) / self.opts.ratio;
        let gradients = self.nodes.iter().any(|n| n.decision.physical.is_some());
        let env = StackEnv {
            geometry: &self.geometry,
            families: &self.binding.families,
            h: &self.binding.h,
            dual_rules: &self.dual_rules,
            params: &self.binding.params,
            overload_penalty: self.overload_penalty,
            staleness: self.opts.staleness,
            gradients,
            physical_template: self.binding.physical.as_ref().map(|p| &p.template),
        };
        for n in self.nodes.iter_mut() {
            for e in n.receive_step(t, k, &env) {
                self.signaling.push(InFlight {
                    remaining: e.msg.hop_budget,
                    env: e,
                });
            }
        }
        let mut still = Vec::with_capacity(self.signaling.len());
        for mut f in std::mem::take(&mut self.signaling) {
            f.remaining = f.remaining.saturating_sub(1);
            if f.remaining == 0 {
                self.nodes[f.env.to].handle_signal(&f.env.msg);
            } else {
                still.push(f);
            }
        }
        self.signaling = still;
        let mut transport_exec = false;
        let mut physical_exec = false;
        for n in self.nodes.iter_mut() {
            let r = n.tick(t, &env).map_err(|e| NetsimError::Invariant {
                slot: t,
                message: e.to_string(),
            })?;
            transport_exec |= r.transport;
            physical_exec |= r.physical;
        }

        let injected: f64 = self.injected.iter().sum();
        let delivered: f64 = self.delivered.iter().sum();
        let queued: f64 = self.queue.iter().flatten().sum();
        let in_flight: f64 = self.staged.iter().flatten().sum();
        if (delivered + queued + in_flight - injected).abs() > 1e-6 * injected.max(1.0) {
            return Err(NetsimError::Invariant {
                slot: t,
                message: format!("packets not conserved: {delivered} + {queued} + {in_flight} != {injected}"),
            });
        }

        let gains_after = self.gains();
        let lambda = (0..n_links)
            .map(|l| {
                let rx = &self.nodes[self.link_nodes[l].1];
                (0..self.binding.families.len())
                    .map(|f| rx.duals.get(&(f, l)).copied().unwrap_or(0.0))
                    .sum()
            })
            .collect();
        let record = SlotRecord {
            slot: t,
            throughput: self.throughput.clone(),
            source_rate: (0..n_sessions).map(|s| self.rate(s)).collect(),
            node_power_mw: self
                .tx_nodes
                .iter()
                .map(|n| self.nodes[*n].roles.tx.iter().map(|x| db_to_mw(gains_after[x.link])).sum())
                .collect(),
            gain_db: gains_after.clone(),
            capacity: capacity.clone(),
            arrival_rate: (0..n_links).map(|l| arrivals[l].iter().sum::<f64>() / dt).collect(),
            lambda,
            utility: self.utility(&gains_after, &capacity),
            transport_exec,
            physical_exec,
            injected,
            delivered,
            queued,
            in_flight,
        };
        self.log.records.push(record);
        Ok(())
    }

    /// Program utility on measured throughput; terms of inactive sessions are skipped.
    fn utility(&self, gains: &[f64], capacity: &[f64]) -> f64 {
        let value = |a: &Atom| -> f64 {
            let i = a.index.unwrap_or(0) as usize;
            match (a.kind, a.name.as_str()) {
                (_, "sesrate") => self.throughput[i].max(THROUGHPUT_FLOOR),
                (_, "lnkpwr") => gains[i],
                (_, "lnkcap") => capacity[i],
                (AtomKind::Param, other) => self.binding.params.get(other).copied().unwrap_or(0.0),
                _ => 0.0,
            }
        };
        let mut u = 0.0;
        for (m, c) in self.binding.utility.terms() {
            let skip = m
                .atoms()
                .iter()
                .any(|a| a.name == "sesrate" && !self.session_active(a.index.unwrap_or(0) as usize));
            if !skip {
                u += Poly::term(c, m.clone()).eval(&value);
            }
        }
        u
    }

    pub fn run_to_end(&mut self) -> Result<(), NetsimError> {
        while self.t < self.duration() {
            self.step()?;
        }
        Ok(())
    }
}

/// Runs one scheme for the scenario duration.
pub fn run(
    scenario: &Scenario,
    binding: &Binding,
    plans: &PlanSet,
    scheme: Scheme,
    opts: RunOptions,
) -> Result<MetricsLog, NetsimError> {
    let mut w = World::new(scenario, binding.clone(), plans, scheme, opts)?;
    w.run_to_end()?;
    Ok(w.log)
}

/// Percentage gain of `a` over `b`.
pub fn gain_pct(a: f64, b: f64) -> f64 {
    100.0 * (a - b) / b.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub scheme: Scheme,
    /// Steady-state utility, averaged over seeds.
    pub utility: f64,
    /// Utility difference to NoControl, computed per seed and averaged.
    pub gain: f64,
    /// Mean difference relative to the mean NoControl utility, in percent.
    pub gain_pct: f64,
}

/// Runs every scheme (and the NoControl baseline) for each seed.
pub fn compare(
    scenario: &Scenario,
    binding: &Binding,
    plans: &PlanSet,
    schemes: &[Scheme],
    seeds: &[u64],
    base: &RunOptions,
) -> Result<Vec<CompareRow>, NetsimError> {
    let steady = |scheme: Scheme, seed: u64| -> Result<f64, NetsimError> {
        let opts = RunOptions { seed, ..base.clone() };
        Ok(run(scenario, binding, plans, scheme, opts)?.steady_utility(super::STEADY_FRACTION))
    };
    let baseline: Vec<f64> = seeds
        .iter()
        .map(|s| steady(Scheme::NoControl, *s))
        .collect::<Result<_, _>>()?;
    let n = seeds.len().max(1) as f64;
    let base_mean = baseline.iter().sum::<f64>() / n;
    let mut rows = Vec::new();
    for &scheme in schemes {
        let (mut u, mut d) = (0.0, 0.0);
        for (i, &seed) in seeds.iter().enumerate() {
            let x = if scheme == Scheme::NoControl { baseline[i] } else { steady(scheme, seed)? };
            u += x;
            d += x - baseline[i];
        }
        rows.push(CompareRow {
            scheme,
            utility: u / n,
            gain: d / n,
            gain_pct: gain_pct(u / n, base_mean),
        });
    }
    Ok(rows)
}
