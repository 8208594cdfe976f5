//! Text renderings of each compilation stage.

use std::fmt::Write;

use super::Compilation;

pub fn dual_text(c: &Compilation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "U = {}", c.instance.utility);
    for k in &c.instance.constraints {
        let _ = writeln!(s, "h[{}] = {} <= 0", k.dual_atom(&c.instance.families), k.h);
    }
    let _ = writeln!(s, "L = {}", c.dual);
    s
}

pub fn tree_text(c: &Compilation) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "level0: {}", c.tree.root);
    for (i, t) in c.tree.level1.iter().enumerate() {
        let _ = writeln!(s, "level1[{i}]: {t}");
    }
    for (i, t) in c.tree.level2.iter().enumerate() {
        let _ = writeln!(s, "level2[{i}]: dual={} coef={} primal={}", t.dual, t.coefficient, t.primal);
    }
    for (layer, g) in &c.layers.groups {
        let _ = writeln!(s, "layer {layer}: {g}");
    }
    let _ = writeln!(s, "layer dual: {}", c.layers.dual_group);
    s
}

pub fn subproblems_text(c: &Compilation) -> String {
    let mut s = String::new();
    for p in &c.subproblems {
        let vars: Vec<String> = p.variables.iter().map(|a| a.to_string()).collect();
        let duals: Vec<String> = p.duals.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(
            s,
            "{} {} {}: max {} vars=[{}] duals=[{}]",
            p.layer,
            p.entity,
            p.index,
            p.expression,
            vars.join(","),
            duals.join(",")
        );
    }
    s
}

pub fn templates_text(c: &Compilation) -> String {
    let mut s = String::new();
    for r in &c.lifted.roles {
        let vars: Vec<String> = r.variables.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "role={} vars=[{}] max {}", r.name(), vars.join(","), r.expression);
    }
    for f in &c.program.families {
        let q = f.quantifier.as_ref().map(|q| q.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "dual={} over={q} cstr={} <= {}", f.name, f.lhs, f.rhs);
    }
    for b in &c.program.bound_rules {
        let _ = writeln!(s, "bound {} in [{}, {}]", b.selector, b.bounds.lo, b.bounds.hi);
    }
    for m in &c.lifted.matches {
        let el = m.element.as_ref().map(|e| e.to_string()).unwrap_or_else(|| "own".into());
        let members: Vec<String> = m.members.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "match {} {} {} -> {el} {{{}}}", m.entity, m.index, m.family, members.join(","));
    }
    s
}

/// (file name, contents) for every stage.
pub fn stage_files(c: &Compilation) -> Vec<(&'static str, String)> {
    vec![
        ("pool.txt", c.pool.dump()),
        ("dual.txt", dual_text(c)),
        ("tree.txt", tree_text(c)),
        ("subproblems.txt", subproblems_text(c)),
        ("templates.txt", templates_text(c)),
    ]
}
