use std::collections::BTreeSet;

use wnos_core::abstraction::{build_default_schema, parse_program, EntityType, Layer};
use wnos_core::decomposer::{compile, dump, Atom, AtomKind, Poly};

const TOY: &str = include_str!("../../../programs/toy.wnos");
const JOCP: &str = include_str!("../../../programs/jocp.wnos");

/// Links carrying each session, one row per link (Table I).
const TABLE_I: [[u32; 10]; 20] = [
    [3, 4, 6, 7, 8, 14, 15, 17, 18, 19],
    [0, 2, 3, 6, 8, 10, 11, 12, 16, 17],
    [0, 5, 6, 7, 11, 13, 14, 15, 18, 19],
    [0, 1, 4, 6, 10, 11, 13, 16, 17, 19],
    [0, 3, 4, 7, 8, 12, 13, 14, 18, 19],
    [1, 3, 6, 10, 11, 12, 13, 15, 18, 19],
    [0, 1, 3, 5, 6, 7, 11, 14, 15, 16],
    [1, 3, 4, 6, 12, 14, 15, 16, 17, 19],
    [1, 2, 5, 6, 7, 8, 9, 10, 12, 14],
    [0, 2, 3, 4, 5, 12, 13, 15, 16, 17],
    [0, 1, 4, 6, 7, 8, 9, 11, 16, 19],
    [4, 5, 6, 7, 14, 15, 16, 17, 18, 19],
    [2, 3, 4, 6, 7, 8, 12, 15, 17, 18],
    [4, 6, 8, 13, 14, 15, 16, 17, 18, 19],
    [0, 1, 3, 4, 5, 6, 8, 12, 16, 17],
    [2, 3, 6, 10, 11, 12, 13, 15, 16, 19],
    [1, 2, 3, 5, 6, 8, 9, 12, 15, 16],
    [1, 2, 7, 8, 12, 13, 14, 16, 18, 19],
    [0, 1, 3, 4, 6, 7, 12, 13, 18, 19],
    [0, 2, 4, 5, 8, 12, 14, 15, 16, 17],
];

fn table_i_pool() -> String {
    let rows: Vec<String> = TABLE_I
        .iter()
        .map(|r| r.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","))
        .collect();
    format!("nt.set('pool.lnkses', '{}')\n", rows.join(";"))
}

#[test]
fn toy_transport_and_physical_split() {
    let spec = parse_program(TOY).unwrap();
    let c = compile(&spec, &build_default_schema(), 0).unwrap();
    let transport: Vec<_> = c.subproblems.iter().filter(|s| s.layer == Layer::Transport).collect();
    assert_eq!(transport.len(), 3);
    for (s, (a, b)) in [(0u32, (0u32, 1u32)), (1, (0, 2)), (2, (1, 2))] {
        let r = Poly::atom(Atom::var("sesrate", s));
        let lam = Poly::atom(Atom::dual("lbd", a)).add(&Poly::atom(Atom::dual("lbd", b)));
        let want = r.sub(&lam.mul(&r));
        assert_eq!(transport[s as usize].expression, want, "session {s}");
    }
    let mut phys = Poly::zero();
    for l in 0..3 {
        phys = phys.add(&Poly::atom(Atom::dual("lbd", l)).mul(&Poly::atom(Atom::derived("lnkcap", l))));
    }
    assert_eq!(c.layers.groups[&Layer::Physical], phys);
    println!("{}", dump::templates_text(&c));
}

#[test]
fn table_i_session_4_lifts_to_links_of_session() {
    let text = format!("{}{JOCP}", table_i_pool());
    let spec = parse_program(&text).unwrap();
    let c = compile(&spec, &build_default_schema(), 7).unwrap();
    let s4 = c
        .subproblems
        .iter()
        .find(|s| s.entity == EntityType::Session && s.index == 4)
        .unwrap();
    let duals: BTreeSet<u32> = s4.duals.iter().filter_map(|a| a.index).collect();
    let want: BTreeSet<u32> = [0, 3, 4, 7, 9, 10, 11, 12, 13, 14, 18, 19].into_iter().collect();
    assert_eq!(duals, want);
    assert!(s4.duals.iter().all(|a| a.kind == AtomKind::Dual));
    let m = c
        .lifted
        .matches
        .iter()
        .find(|m| m.entity == EntityType::Session && m.index == 4)
        .unwrap();
    assert_eq!(m.element.as_ref().unwrap().as_str(), "seslnk");
    let role = c.program.role(Layer::Transport).unwrap();
    assert_eq!(role.expression.to_string(), "-sesrate*sum(lbd[seslnk]) + log(sesrate)");
    println!("{}", dump::templates_text(&c));
}

#[test]
fn bundled_programs_compile() {
    for (name, text) in [
        ("cp1", include_str!("../../../programs/cp1.wnos")),
        ("cp2", include_str!("../../../programs/cp2.wnos")),
        ("cp3", include_str!("../../../programs/cp3.wnos")),
        ("cp4", include_str!("../../../programs/cp4.wnos")),
        ("power_min", include_str!("../../../programs/power_min.wnos")),
    ] {
        let spec = parse_program(text).unwrap();
        let c = compile(&spec, &build_default_schema(), 3).unwrap_or_else(|e| panic!("{name}: {e}"));
        println!("== {name}\n{}", dump::templates_text(&c).lines().filter(|l| !l.starts_with("match")).collect::<Vec<_>>().join("\n"));
    }
}

fn compile_err(text: &str) -> wnos_core::decomposer::DecomposeError {
    let spec = parse_program(text).unwrap();
    compile(&spec, &build_default_schema(), 1).unwrap_err()
}

#[test]
fn coupled_terms_are_rejected() {
    use wnos_core::decomposer::DecomposeError as E;
    let vars = "nt.make_var('x', [ntses, sesrate], [all, None])\nnt.make_var('p', [ntlk, lkpwr], [all, None])\n";
    let e = compile_err(&format!(
        "{vars}expr = mkexpr('sum(log(netlnk.lnkcap * sum(netlnk.lnkses.sesrate)))', 'x')\nnt.objective(max, expr)\n"
    ));
    assert!(matches!(e, E::UnattributableTerm(_)), "{e:?}");
    let e = compile_err(&format!(
        "{vars}expr = mkexpr('sum(log(sum(netlnk.lnkses.sesrate)))', 'x')\nnt.add_cstr('netlnk.lnkpwr <= 3', 'p')\nnt.objective(max, expr)\n"
    ));
    assert!(matches!(e, E::NonSeparable(_)), "{e:?}");
    let e = compile_err(&format!(
        "{vars}expr = mkexpr('sum(log(netses.sesrate))', 'x')\nnt.add_cstr('sum(ntlk.lkses.sesrate) == ntlk.lkcap', 'x')\nnt.objective(max, expr)\n"
    ));
    assert!(matches!(e, E::UnsupportedConstraintSense(_)), "{e:?}");
}
