use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn kit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wnos-kit"))
        .current_dir(root())
        .env_remove("WNOS_KIT_SEED")
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const EQUALITY: &str = "nt.make_var('x', [ntses, sesrate], [all, None])
expr = mkexpr('sum(log(x))', 'x')
nt.add_cstr('sum(ntlk.lkses.sesrate) == ntlk.lkcap', 'x')
nt.objective(max, expr)
";

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.wnos");
    std::fs::write(&bad, "nt.make_var('x', [ntses, sesrate], [all, None])\nexpr = mkexpr('sum(log(x)', 'x')\n").unwrap();
    let o = kit(&["compile", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let eq = dir.path().join("eq.wnos");
    std::fs::write(&eq, EQUALITY).unwrap();
    assert_eq!(kit(&["compile", eq.to_str().unwrap()]).status.code(), Some(3));

    let out = dir.path().join("o");
    let o = kit(&[
        "run",
        "--program",
        "programs/power_min.wnos",
        "--scenario",
        "scenarios/scenario-5.toml",
        "--scheme",
        "WNOS-T",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));

    assert_eq!(kit(&["compile", "programs/missing.wnos"]).status.code(), Some(1));
}

#[test]
fn compile_writes_every_dump() {
    let dir = tempfile::tempdir().unwrap();
    let o = kit(&["compile", "programs/cp1.wnos", "--plans", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    for f in ["pool.txt", "dual.txt", "tree.txt", "subproblems.txt", "templates.txt", "plans.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let t = std::fs::read_to_string(dir.path().join("templates.txt")).unwrap();
    assert!(t.contains("role=transport/session vars=[sesrate] max -sesrate*sum(lbd[seslnk]) + log(sesrate)"));
    let p = std::fs::read_to_string(dir.path().join("plans.txt")).unwrap();
    assert!(p.contains("method=closed_form_reciprocal"));
}

#[test]
fn inspect_reports_table_and_capacity() {
    let o = kit(&["inspect", "programs/jocp.wnos", "--seed", "3"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.contains("pool capacity: C(20,10) = 184756"));
    let table: Vec<&str> = s
        .split("\nlnkses\n")
        .nth(1)
        .unwrap()
        .lines()
        .skip(1)
        .take_while(|l| !l.is_empty())
        .collect();
    assert_eq!(table.len(), 20);
    assert!(table.iter().all(|r| r.split(", ").count() == 10));
    assert!(s.contains("element graph") && s.contains("level0:"));
}

#[test]
fn zero_duration_run_writes_header_only_and_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let base = [
        "run",
        "--program",
        "programs/cp1.wnos",
        "--scenario",
        "scenarios/scenario-1.toml",
        "--scheme",
        "WNOS-T-P",
        "--out",
        out,
    ];
    let mut args = base.to_vec();
    args.extend(["--duration", "0"]);
    assert!(kit(&args).status.success());
    let csv = std::fs::read_to_string(dir.path().join("scenario-1_WNOS-T-P.csv")).unwrap();
    assert_eq!(csv, "slot,session_id,throughput_pps,node_id,tx_power_mw,link_id,lambda,utility\n");

    let mut args = base.to_vec();
    args.extend(["--duration", "120", "--plot"]);
    assert!(kit(&args).status.success());
    let svg = std::fs::read_to_string(dir.path().join("scenario-1_WNOS-T-P_throughput.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(dir.path().join("scenario-1_WNOS-T-P_power.svg").exists());
}

#[test]
fn compare_prints_tsv() {
    let o = kit(&[
        "compare",
        "--program",
        "programs/cp1.wnos",
        "--scenario",
        "scenarios/scenario-2.toml",
        "--scheme",
        "NoControl",
        "NoControl",
        "--duration",
        "300",
    ]);
    assert!(o.status.success());
    let s = stdout(&o);
    let rows: Vec<Vec<&str>> = s.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows[0], ["scheme", "steady_utility", "gain_vs_nocontrol", "gain_vs_nocontrol_pct"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1], rows[2]);
    assert_eq!(rows[1][2].parse::<f64>().unwrap(), 0.0);

    let one = kit(&[
        "compare",
        "--program",
        "programs/cp1.wnos",
        "--scenario",
        "scenarios/scenario-2.toml",
        "--scheme",
        "NoControl",
    ]);
    assert_eq!(one.status.code(), Some(1));
}

#[test]
fn seed_falls_back_to_environment() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_wnos-kit"));
        c.current_dir(root()).env_remove("WNOS_KIT_SEED").args(args);
        if let Some(v) = env {
            c.env("WNOS_KIT_SEED", v);
        }
        stdout(&c.output().unwrap())
    };
    let by_env = run(Some("5"), &["inspect", "programs/jocp.wnos"]);
    let by_flag = run(None, &["inspect", "programs/jocp.wnos", "--seed", "5"]);
    let default = run(None, &["inspect", "programs/jocp.wnos"]);
    assert_eq!(by_env, by_flag);
    assert_ne!(by_env, default);
}
