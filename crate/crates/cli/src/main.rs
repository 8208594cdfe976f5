//! `wnos-kit`: compile, inspect, run and compare network-control programs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plotters::prelude::*;

use wnos_core::abstraction::build_default_schema;
use wnos_core::decomposer::dump::stage_files;
use wnos_core::netsim::{self, bind, MetricsLog, NetsimError, RunOptions, Scenario, Scheme};
use wnos_core::{compile_program, CompileError, CompiledProgram};

#[derive(Parser)]
#[command(name = "wnos-kit", version, about = "Compile abstract network-control programs and simulate them")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decompose a program and write every stage dump.
    Compile {
        file: PathBuf,
        /// Also write the synthesized solver plans.
        #[arg(long)]
        plans: bool,
        #[arg(long, env = "WNOS_KIT_SEED")]
        seed: Option<u64>,
        /// Directory for the dumps; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the instance pool, element graph and expression tree.
    Inspect {
        file: PathBuf,
        #[arg(long, env = "WNOS_KIT_SEED")]
        seed: Option<u64>,
    },
    /// Simulate a program under one or more schemes and write one CSV per scheme.
    Run(RunArgs),
    /// Steady-state utility per scheme and gain over NoControl, as TSV.
    Compare(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long = "scheme", required = true, num_args = 1..)]
    schemes: Vec<String>,
    /// Seeds every random draw; the scenario's own seed is used when absent.
    #[arg(long, env = "WNOS_KIT_SEED")]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    plot: bool,
    /// Override the scenario duration (slots).
    #[arg(long)]
    duration: Option<u64>,
    /// Number of consecutive seeds to pair over (compare only).
    #[arg(long, default_value_t = 1)]
    runs: u64,
    /// Start controlled knobs at random points.
    #[arg(long)]
    random_init: bool,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if let Some(c) = e.downcast_ref::<CompileError>() {
        return match c {
            CompileError::Parse(_) => 2,
            CompileError::Decompose(_) | CompileError::Plan(_) => 3,
        };
    }
    if let Some(NetsimError::IncompatibleProgram(_)) = e.downcast_ref::<NetsimError>() {
        return 4;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Compile { file, plans, seed, out } => cmd_compile(&file, plans, seed.unwrap_or(0), out.as_deref()),
        Cmd::Inspect { file, seed } => cmd_inspect(&file, seed.unwrap_or(0)),
        Cmd::Run(a) => cmd_run(&a),
        Cmd::Compare(a) => cmd_compare(&a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_program(file: &Path, seed: u64) -> Result<CompiledProgram> {
    let text = fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    Ok(compile_program(&text, seed)?)
}

/// Writes via a temporary file so readers never see a partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cmd_compile(file: &Path, plans: bool, seed: u64, out: Option<&Path>) -> Result<()> {
    let p = load_program(file, seed)?;
    let mut files = stage_files(&p.compilation);
    if plans {
        files.push(("plans.txt", p.plans.dump()));
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            for (name, text) in files {
                write_atomic(&dir.join(name), text.as_bytes())?;
            }
        }
        None => {
            for (name, text) in files {
                println!("== {name}\n{text}");
            }
        }
    }
    Ok(())
}

fn cmd_inspect(file: &Path, seed: u64) -> Result<()> {
    let p = load_program(file, seed)?;
    let c = &p.compilation;
    let cfg = c.pool.config;
    let mut s = String::new();
    writeln!(s, "instance pool: n_global={} n_local={} seed={}", cfg.n_global, cfg.n_local, cfg.rng_seed)?;
    writeln!(s, "pool capacity: C({},{}) = {}", cfg.n_global, cfg.n_local, cfg.capacity())?;
    for el in c.pool.local_elements() {
        let derived = if c.pool.is_derived(el.as_str()) { " (derived)" } else { "" };
        writeln!(s, "\n{el}{derived}")?;
        writeln!(s, "owner\tmembers")?;
        for inst in c.pool.locals_of(el.as_str()) {
            let m: Vec<String> = inst.members.iter().map(u32::to_string).collect();
            writeln!(s, "{}\t{{{}}}", inst.owner.unwrap_or(0), m.join(", "))?;
        }
    }
    writeln!(s, "\nelement graph")?;
    for e in build_default_schema().edges() {
        writeln!(s, "{} -{}-> {}", e.src, e.relation, e.dst)?;
    }
    writeln!(s, "\nexpression tree")?;
    s.push_str(&wnos_core::decomposer::dump::tree_text(c));
    print!("{s}");
    Ok(())
}

fn parse_schemes(names: &[String]) -> Result<Vec<Scheme>> {
    Ok(names.iter().map(|n| n.parse()).collect::<Result<_, NetsimError>>()?)
}

struct Prepared {
    scenario: Scenario,
    program: CompiledProgram,
    binding: netsim::Binding,
    schemes: Vec<Scheme>,
    opts: RunOptions,
}

fn prepare(a: &RunArgs) -> Result<Prepared> {
    let schemes = parse_schemes(&a.schemes)?;
    let scenario = Scenario::load(&a.scenario)?;
    let seed = a.seed.unwrap_or(scenario.seed);
    let program = load_program(&a.program, seed)?;
    let binding = bind(&scenario, &program.compilation.program, &program.plans)?;
    let mut opts = RunOptions::new(seed);
    opts.duration = a.duration;
    opts.random_init = a.random_init;
    Ok(Prepared {
        scenario,
        program,
        binding,
        schemes,
        opts,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let p = prepare(a)?;
    fs::create_dir_all(&a.out)?;
    let base = stem(&a.scenario);
    for scheme in &p.schemes {
        let log = netsim::run(&p.scenario, &p.binding, &p.program.plans, *scheme, p.opts.clone())?;
        let name = format!("{base}_{scheme}");
        let csv = a.out.join(format!("{name}.csv"));
        write_atomic(&csv, log.to_csv().as_bytes())?;
        println!("{}", csv.display());
        if a.plot {
            for f in plot(&log, &a.out, &name)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn cmd_compare(a: &RunArgs) -> Result<()> {
    let p = prepare(a)?;
    if p.schemes.len() < 2 {
        bail!("compare needs at least two schemes");
    }
    let seeds: Vec<u64> = (0..a.runs.max(1)).map(|i| p.opts.seed + i).collect();
    let rows = netsim::compare(&p.scenario, &p.binding, &p.program.plans, &p.schemes, &seeds, &p.opts)?;
    println!("scheme\tsteady_utility\tgain_vs_nocontrol\tgain_vs_nocontrol_pct");
    for r in rows {
        println!("{}\t{:.6}\t{:.6}\t{:.3}", r.scheme, r.utility, r.gain, r.gain_pct);
    }
    Ok(())
}

fn series_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let x_max = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).fold(1.0, f64::max);
    let y_max = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).fold(1e-9, f64::max) * 1.05;
    let root = SVGBackend::new(path, (900, 500)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max)?;
    chart.configure_mesh().x_desc("slot").y_desc(y_label).draw()?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn plot(log: &MetricsLog, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let thr: Vec<(String, Vec<(f64, f64)>)> = log
        .session_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                format!("session {id}"),
                log.records.iter().map(|r| (r.slot as f64, r.throughput[i])).collect(),
            )
        })
        .collect();
    let pwr: Vec<(String, Vec<(f64, f64)>)> = log
        .node_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            (
                format!("node {id}"),
                log.records.iter().map(|r| (r.slot as f64, r.node_power_mw[i])).collect(),
            )
        })
        .collect();
    let a = dir.join(format!("{name}_throughput.svg"));
    let b = dir.join(format!("{name}_power.svg"));
    series_chart(&a, &format!("{name}: end-to-end throughput"), "packets/s", &thr)?;
    series_chart(&b, &format!("{name}: transmit power"), "mW", &pwr)?;
    Ok(vec![a, b])
}
