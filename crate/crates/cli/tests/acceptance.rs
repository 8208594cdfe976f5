//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p wnos-cli --test acceptance`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wnos_core::abstraction::{build_default_schema, parse_program, EntityType, Layer};
use wnos_core::algogen::{solve_local, PlanSet};
use wnos_core::compile_program;
use wnos_core::decomposer::{compile, Atom, AtomKind, Poly};
use wnos_core::instantiation::{hash_id, instantiate_global, DIConfig, InstancePool, InstantiationError};
use wnos_core::netsim::{
    bind, run, Binding, ChannelModel, LinkGeometry, MetricsLog, RunOptions, Scenario, Scheme, STEADY_FRACTION,
};

// Pinned tolerances and budgets.
const C1_BUDGET: Duration = Duration::from_secs(1);
const C2_SEEDS: u64 = 100;
const C2_BUDGET: Duration = Duration::from_secs(30);
const C3_CONFIGS: usize = 1000;
const C3_EXACT_MAX_N: usize = 6;
const C4_GRID: usize = 200;
const C4_REL_TOL: f64 = 0.02;
const C4_ITERATIONS: u64 = 50_000;
const C4_BUDGET: Duration = Duration::from_secs(10);
const C5_POINTS: usize = 100;
const C5_H: f64 = 1e-5;
const C5_REL_TOL: f64 = 1e-4;
const C6_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const C6_RUN_BUDGET: Duration = Duration::from_secs(60);
const C7_SEEDS: u64 = 10;
const C7_CAP_DB: f64 = 5.0;
const C8_TARGET: f64 = 1.5;
const C8_RATE_TOL: f64 = 0.10;
const C9_WINDOW: usize = 300;
const C9_RATIO: i64 = 30;

type Check = Result<String, String>;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn read(rel: &str) -> String {
    std::fs::read_to_string(root().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, budget: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    ensure(t < budget, || format!("took {t:?}, budget {budget:?}"))?;
    Ok(t)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let spec = parse_program(&read("programs/toy.wnos")).map_err(|e| e.to_string())?;
    let c = compile(&spec, &build_default_schema(), 0).map_err(|e| e.to_string())?;
    let sets = [[0u32, 1], [0, 2], [1, 2]];
    for (l, s) in sets.iter().enumerate() {
        let got = &c.pool.local("lnkses", l as u32).ok_or("missing S_l")?.members;
        ensure(got == s, || format!("S_{} = {got:?}", l + 1))?;
    }
    let transport: Vec<_> = c.subproblems.iter().filter(|s| s.layer == Layer::Transport).collect();
    ensure(transport.len() == 3, || format!("{} transport subproblems", transport.len()))?;
    // Session s uses the two links whose S_l contains it.
    for (s, sub) in transport.iter().enumerate() {
        let r = Poly::atom(Atom::var("sesrate", s as u32));
        let mut lam = Poly::zero();
        for (l, set) in sets.iter().enumerate() {
            if set.contains(&(s as u32)) {
                lam = lam.add(&Poly::atom(Atom::dual("lbd", l as u32)));
            }
        }
        let want = r.sub(&lam.mul(&r));
        ensure(sub.expression == want, || format!("session {s}: {} != {want}", sub.expression))?;
    }
    let mut phys = Poly::zero();
    for l in 0..3 {
        phys = phys.add(&Poly::atom(Atom::dual("lbd", l)).mul(&Poly::atom(Atom::derived("lnkcap", l))));
    }
    let got = c.layers.groups.get(&Layer::Physical).ok_or("no physical group")?;
    ensure(*got == phys, || format!("physical: {got} != {phys}"))?;
    let t = within(start, C1_BUDGET)?;
    Ok(format!("3 transport + 1 physical subproblem match, {t:.2?}"))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let text = read("programs/jocp.wnos");
    let spec = parse_program(&text).map_err(|e| e.to_string())?;
    let schema = build_default_schema();
    let mut checked = 0;
    for seed in 0..C2_SEEDS {
        let c = compile(&spec, &schema, seed).map_err(|e| format!("seed {seed}: {e}"))?;
        for sub in c.subproblems.iter().filter(|s| s.entity == EntityType::Session) {
            let got: BTreeSet<u32> = sub.duals.iter().filter_map(|a| a.index).collect();
            let inst = c.pool.local("seslnk", sub.index).ok_or("missing L_s")?;
            let want: BTreeSet<u32> = inst.members.iter().copied().collect();
            ensure(got == want, || format!("seed {seed} session {}: {got:?} != {want:?}", sub.index))?;
            let m = c
                .lifted
                .matches
                .iter()
                .find(|m| m.entity == EntityType::Session && m.index == sub.index)
                .ok_or("no lift match")?;
            ensure(
                m.element.as_ref().map(|e| e.as_str()) == Some("seslnk") && m.members == inst.members,
                || format!("seed {seed} session {}: lifted to {:?}", sub.index, m.element),
            )?;
            checked += 1;
        }
        let role = c.program.role(Layer::Transport).ok_or("no transport role")?;
        let atoms: Vec<&Atom> = role.expression.atoms().into_iter().filter(|a| a.is_dual()).collect();
        ensure(
            atoms.iter().all(|a| a.over.as_ref().map(|e| e.as_str()) == Some("seslnk") && a.index.is_none()),
            || format!("seed {seed}: template {}", role.expression),
        )?;
    }
    let t = within(start, C2_BUDGET)?;
    Ok(format!("{checked} session subproblems over {C2_SEEDS} seeds, {t:.2?}"))
}

fn binomial_oracle(n: usize, k: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = vec![1u128; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row.get(k).copied().unwrap_or(0)
}

fn criterion_3() -> Check {
    let schema = build_default_schema();
    let lnkses = schema.virtual_element(&"lnkses".into()).map_err(|e| e.to_string())?.clone();
    let netses = schema.virtual_element(&"netses".into()).map_err(|e| e.to_string())?.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut exact = 0;
    for case in 0..C3_CONFIGS {
        let n = rng.gen_range(1..=12usize);
        let k = rng.gen_range(1..=n);
        let cfg = DIConfig {
            n_global: n,
            n_local: k,
            rng_seed: rng.gen(),
            max_resample: rng.gen_range(1..=50),
        };
        let cap = binomial_oracle(n, k);
        let requests: u128 = if n <= C3_EXACT_MAX_N {
            exact += 1;
            cap + rng.gen_range(0..=2u128)
        } else {
            cap.min(rng.gen_range(1..=25))
        };
        let mut pool = InstancePool::new(cfg).map_err(|e| e.to_string())?;
        let mother = instantiate_global(&netses, &cfg).map_err(|e| e.to_string())?;
        let mut seen = BTreeSet::new();
        for r in 1..=requests {
            match pool.instantiate_local(&lnkses, &mother) {
                Ok(inst) => {
                    ensure(r <= cap, || format!("case {case}: request {r} succeeded past C({n},{k})={cap}"))?;
                    ensure(inst.members.len() == k, || format!("case {case}: rule 1, {:?}", inst.members))?;
                    ensure(inst.members.windows(2).all(|w| w[0] < w[1]), || {
                        format!("case {case}: unsorted {:?}", inst.members)
                    })?;
                    ensure(seen.insert(inst.members.clone()), || {
                        format!("case {case}: rule 2, repeated {:?}", inst.members)
                    })?;
                    let mut shuffled = inst.members.clone();
                    shuffled.shuffle(&mut rng);
                    ensure(hash_id(&shuffled).ok() == Some(inst.hash_id), || format!("case {case}: hash order"))?;
                    ensure(pool.lookup("lnkses", &shuffled) == inst.owner, || format!("case {case}: lookup"))?;
                }
                Err(InstantiationError::ExhaustedResampling { capacity, .. }) => {
                    ensure(r > cap && capacity == cap, || {
                        format!("case {case}: exhausted at request {r}, C({n},{k})={cap}, reported {capacity}")
                    })?;
                }
                Err(e) => return Err(format!("case {case}: {e}")),
            }
        }
    }
    Ok(format!("{C3_CONFIGS} configs, {exact} checked for exact exhaustion"))
}

fn criterion_4() -> Check {
    let start = Instant::now();
    let p = compile_program(&read("programs/toy.wnos"), 0).map_err(|e| e.to_string())?;
    let plan = p.plans.plan(Layer::Transport).ok_or("no transport plan")?;
    let rule = p.plans.duals.first().ok_or("no dual rule")?;
    let pool = &p.compilation.pool;
    let links_of: Vec<Vec<usize>> = (0..3)
        .map(|s| pool.local("seslnk", s).unwrap().members.iter().map(|l| *l as usize).collect())
        .collect();
    let sessions_of: Vec<Vec<usize>> = (0..3)
        .map(|l| pool.local("lnkses", l).unwrap().members.iter().map(|s| *s as usize).collect())
        .collect();
    let cap = [1.0f64; 3];

    // Centralized oracle: grid over [0, max capacity]^3.
    let pts: Vec<f64> = (0..C4_GRID).map(|i| i as f64 / (C4_GRID - 1) as f64).collect();
    let mut best = f64::NEG_INFINITY;
    for &a in &pts {
        for &b in &pts {
            for &c in &pts {
                let x = [a, b, c];
                if (0..3).all(|l| sessions_of[l].iter().map(|s| x[*s]).sum::<f64>() <= cap[l] + 1e-12) {
                    best = best.max(a + b + c);
                }
            }
        }
    }

    // Distributed: per-session closed-form solver plus per-link dual subgradient; running primal average.
    let mut lam = [0.0f64; 3];
    let mut x = [0.0f64; 3];
    let mut avg = [0.0f64; 3];
    for k in 1..=C4_ITERATIONS {
        for s in 0..3 {
            let sum: f64 = links_of[s].iter().map(|l| lam[*l]).sum();
            let value = |a: &Atom| -> Option<f64> { (a.kind == AtomKind::Dual).then_some(sum) };
            x[s] = solve_local(plan, &value, x[s]).map_err(|e| e.to_string())?;
        }
        for s in 0..3 {
            avg[s] += x[s];
        }
        for l in 0..3 {
            let slack = sessions_of[l].iter().map(|s| x[*s]).sum::<f64>() - cap[l];
            lam[l] = rule.apply(lam[l], slack, k);
        }
    }
    let avg: Vec<f64> = avg.iter().map(|v| v / C4_ITERATIONS as f64).collect();
    let value: f64 = avg.iter().sum();
    let violation = (0..3)
        .map(|l| sessions_of[l].iter().map(|s| avg[*s]).sum::<f64>() - cap[l])
        .fold(0.0f64, f64::max);
    let rel = (value - best).abs() / best.abs();
    ensure(rel <= C4_REL_TOL, || format!("distributed {value:.4} vs grid {best:.4} ({:.2}%)", 100.0 * rel))?;
    ensure(violation <= C4_REL_TOL, || format!("averaged rates violate capacity by {violation:.4}"))?;
    let t = within(start, C4_BUDGET)?;
    Ok(format!(
        "distributed {value:.4} vs grid {best:.4} ({:.3}%), violation {violation:.4}, {t:.2?}",
        100.0 * rel
    ))
}

fn random_geometry(rng: &mut ChaCha8Rng, n: usize) -> LinkGeometry {
    let model = ChannelModel::default();
    let tx: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0))).collect();
    let rx: Vec<(f64, f64)> = tx
        .iter()
        .map(|(x, y)| {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let d = rng.gen_range(5.0..20.0);
            (x + d * a.cos(), y + d * a.sin())
        })
        .collect();
    let gain = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| model.gain(((tx[i].0 - rx[j].0).powi(2) + (tx[i].1 - rx[j].1).powi(2)).sqrt()))
                .collect()
        })
        .collect();
    LinkGeometry {
        gain,
        band: (0..n).map(|_| rng.gen_range(0..3)).collect(),
        scale: (0..n).map(|_| rng.gen_range(0.5..1.0)).collect(),
        model,
    }
}

fn criterion_5() -> Check {
    let p = compile_program(&read("programs/jocp.wnos"), 0).map_err(|e| e.to_string())?;
    let objective = p.compilation.layers.groups.get(&Layer::Physical).ok_or("no physical group")?.clone();
    let n = p.compilation.pool.config.n_global;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for point in 0..C5_POINTS {
        let geo = random_geometry(&mut rng, n);
        let lam: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..30.0)).collect();
        let active = vec![true; n];
        let f = |g: &[f64]| {
            objective.eval(&|a: &Atom| {
                let i = a.index.unwrap() as usize;
                match a.kind {
                    AtomKind::Dual => lam[i],
                    _ => geo.capacity(i, g, &active),
                }
            })
        };
        let (mut num, mut den) = (0.0, 0.0);
        for j in 0..n {
            let (_, sym) = objective.eval_dual(&|a: &Atom| {
                let i = a.index.unwrap() as usize;
                match a.kind {
                    AtomKind::Dual => (lam[i], 0.0),
                    _ => (geo.capacity(i, &g, &active), geo.capacity_gradient(i, j, &g, &active)),
                }
            });
            let mut up = g.clone();
            up[j] += C5_H;
            let mut dn = g.clone();
            dn[j] -= C5_H;
            let fd = (f(&up) - f(&dn)) / (2.0 * C5_H);
            num += (sym - fd).powi(2);
            den += fd * fd;
        }
        let rel = (num / den).sqrt();
        worst = worst.max(rel);
        ensure(rel < C5_REL_TOL, || format!("point {point}: relative error {rel:.2e}"))?;
    }
    Ok(format!("{C5_POINTS} points x {n} coordinates, worst relative error {worst:.2e}"))
}

struct Setup {
    scenario: Scenario,
    binding: Binding,
    plans: PlanSet,
}

fn setup(program: &str, scenario: &str) -> Result<Setup, String> {
    let p = compile_program(&read(&format!("programs/{program}")), 0).map_err(|e| e.to_string())?;
    let scenario = Scenario::load(&root().join("scenarios").join(scenario)).map_err(|e| e.to_string())?;
    let binding = bind(&scenario, &p.compilation.program, &p.plans).map_err(|e| e.to_string())?;
    Ok(Setup {
        scenario,
        binding,
        plans: p.plans,
    })
}

fn simulate(s: &Setup, scheme: Scheme, seed: u64) -> Result<(MetricsLog, Duration), String> {
    let start = Instant::now();
    let log = run(&s.scenario, &s.binding, &s.plans, scheme, RunOptions::new(seed)).map_err(|e| e.to_string())?;
    Ok((log, start.elapsed()))
}

fn criterion_6() -> Check {
    let mut slowest = Duration::ZERO;
    let mut tp_gain = Vec::new();
    let mut lines = Vec::new();
    for i in 1..=3 {
        let s = setup("cp1.wnos", &format!("scenario-{i}.toml"))?;
        let mut gain = |scheme: Scheme| -> Result<f64, String> {
            let mut d = 0.0;
            for seed in C6_SEEDS {
                let (a, ta) = simulate(&s, scheme, seed)?;
                let (b, tb) = simulate(&s, Scheme::NoControl, seed)?;
                slowest = slowest.max(ta).max(tb);
                d += a.steady_utility(STEADY_FRACTION) - b.steady_utility(STEADY_FRACTION);
            }
            Ok(d / C6_SEEDS.len() as f64)
        };
        let (tp, t, p) = (gain(Scheme::WnosTP)?, gain(Scheme::WnosT)?, gain(Scheme::WnosP)?);
        ensure(tp > 0.0 && t > 0.0 && p > 0.0, || {
            format!("scenario-{i}: gains T-P {tp:.3}, T {t:.3}, P {p:.3}")
        })?;
        let (br, tb) = simulate(&s, Scheme::BestResponse, C6_SEEDS[0])?;
        slowest = slowest.max(tb);
        let links_per_node: Vec<f64> = br
            .node_ids
            .iter()
            .map(|id| s.scenario.links.iter().filter(|l| l.tx == *id).count() as f64)
            .collect();
        let max_power = br.records.iter().all(|r| {
            r.node_power_mw
                .iter()
                .zip(&links_per_node)
                .all(|(p, k)| (p - 1000.0 * k).abs() < 1e-9)
        });
        ensure(max_power, || format!("scenario-{i}: BestResponse below maximum power"))?;
        tp_gain.push(tp);
        lines.push(format!("s{i}: T-P {tp:.3} T {t:.3} P {p:.3}"));
    }
    ensure(tp_gain.windows(2).all(|w| w[0] < w[1]), || {
        format!("WNOS-T-P gain not increasing with interference: {tp_gain:?}")
    })?;
    ensure(slowest < C6_RUN_BUDGET, || format!("slowest run {slowest:?}"))?;
    Ok(format!("utility gain over NoControl {}; slowest run {slowest:.2?}", lines.join(", ")))
}

fn criterion_7() -> Check {
    let s = setup("cp3.wnos", "scenario-4.toml")?;
    let pos = s.scenario.session_pos(1).ok_or("no session 1")?;
    let links = s.scenario.path(pos);
    let mut peak = f64::NEG_INFINITY;
    for seed in 1..=C7_SEEDS {
        let (log, _) = simulate(&s, Scheme::WnosTP, seed)?;
        for r in log.tail(0.5) {
            for l in &links {
                peak = peak.max(r.gain_db[*l]);
                ensure(r.gain_db[*l] <= C7_CAP_DB, || {
                    format!("seed {seed} slot {}: link {l} at {:.3} dB", r.slot, r.gain_db[*l])
                })?;
            }
        }
    }
    Ok(format!("{C7_SEEDS} seeds, peak session-1 link power {peak:.3} <= {C7_CAP_DB}"))
}

fn criterion_8() -> Check {
    let pm = setup("power_min.wnos", "scenario-5.toml")?;
    let rm = setup("cp1.wnos", "scenario-5.toml")?;
    let seed = pm.scenario.seed;
    let (a, _) = simulate(&pm, Scheme::WnosTP, seed)?;
    let (b, _) = simulate(&rm, Scheme::WnosTP, seed)?;
    let mut rates = Vec::new();
    for s in 0..a.session_ids.len() {
        let th = a.steady_throughput(s, STEADY_FRACTION);
        ensure(th >= (1.0 - C8_RATE_TOL) * C8_TARGET, || format!("session {}: {th:.3} pkt/s", a.session_ids[s]))?;
        rates.push(format!("{th:.3}"));
    }
    let (pa, pb) = (a.steady_total_power_mw(STEADY_FRACTION), b.steady_total_power_mw(STEADY_FRACTION));
    ensure(pa < pb, || format!("power-min {pa:.1} mW vs rate-max {pb:.1} mW"))?;
    Ok(format!("rates [{}] pkt/s, power {pa:.1} mW vs {pb:.1} mW", rates.join(", ")))
}

fn criterion_9() -> Check {
    let s = setup("cp1.wnos", "scenario-1.toml")?;
    let (log, _) = simulate(&s, Scheme::WnosTP, 1)?;
    ensure(log.records.len() >= C9_WINDOW, || "run shorter than a window".into())?;
    let windows = log.records.len() - C9_WINDOW + 1;
    for from in 0..windows {
        let (t, p) = log.executions(from, C9_WINDOW);
        ensure((t as i64 * C9_RATIO - p as i64).abs() <= 1, || format!("window at {from}: {t} transport, {p} physical"))?;
    }
    Ok(format!("{windows} windows of {C9_WINDOW} slots"))
}

fn run_cli(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_wnos-kit"))
        .arg("run")
        .arg("--program")
        .arg(root().join("programs/cp1.wnos"))
        .arg("--scenario")
        .arg(root().join("scenarios/scenario-2.toml"))
        .args(["--scheme", "WNOS-T-P", "NoControl", "--seed", "11", "--duration", "1500", "--out"])
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())
}

fn criterion_10() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_cli(&a)?;
    run_cli(&b)?;
    let mut n = 0;
    for name in ["scenario-2_WNOS-T-P.csv", "scenario-2_NoControl.csv"] {
        let x = std::fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("{name} differs"))?;
        n += x.len();
    }
    Ok(format!("2 CSVs byte-identical ({n} bytes)"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("toy golden decomposition", criterion_1),
        ("lift round-trip", criterion_2),
        ("DI invariants", criterion_3),
        ("oracle equivalence", criterion_4),
        ("gradient checks", criterion_5),
        ("behavioral reproduction", criterion_6),
        ("constraint enforcement", criterion_7),
        ("objective contrast", criterion_8),
        ("timescale invariant", criterion_9),
        ("determinism", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
