//! Immutable expressions over element paths and the Compose/Compare operations.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::{ElementId, NetworkSchema};
use super::AbstractionError;

/// Index selector on a virtual path segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Index {
    All,
    At(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PathSeg {
    pub name: ElementId,
    pub index: Index,
}

/// Dot-separated chain of hops ending (for references) at a parameter.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ElementPath(pub Vec<PathSeg>);

impl ElementPath {
    pub fn new(segs: Vec<PathSeg>) -> Self {
        ElementPath(segs)
    }

    /// Parses `netses[1].seslnk.lnkpwr` without schema validation.
    pub fn parse(s: &str) -> Result<Self, AbstractionError> {
        let mut segs = Vec::new();
        for raw in s.split('.') {
            let raw = raw.trim();
            let (name, index) = match raw.find('[') {
                Some(p) => {
                    let inner = raw[p + 1..]
                        .strip_suffix(']')
                        .ok_or_else(|| AbstractionError::UnknownElement(s.to_string()))?;
                    let idx = match inner.trim() {
                        "all" | "" => Index::All,
                        n => Index::At(
                            n.parse()
                                .map_err(|_| AbstractionError::UnknownElement(s.to_string()))?,
                        ),
                    };
                    (&raw[..p], idx)
                }
                None => (raw, Index::All),
            };
            if name.is_empty() {
                return Err(AbstractionError::UnknownElement(s.to_string()));
            }
            segs.push(PathSeg {
                name: ElementId::new(name),
                index,
            });
        }
        Ok(ElementPath(segs))
    }

    pub fn segments(&self) -> &[PathSeg] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Final element of the path (the attribute for references).
    pub fn last(&self) -> &ElementId {
        &self.0.last().expect("non-empty path").name
    }

    pub fn prefix(&self, n: usize) -> ElementPath {
        ElementPath(self.0[..n].to_vec())
    }

    pub fn is_prefix_of(&self, other: &ElementPath) -> bool {
        self.0.len() <= other.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    /// Prefixes ending at an unselected virtual segment, outermost first.
    pub fn free_prefixes(&self) -> Vec<ElementPath> {
        (0..self.0.len().saturating_sub(1))
            .filter(|&i| self.0[i].index == Index::All)
            .map(|i| self.prefix(i + 1))
            .collect()
    }
}

impl fmt::Display for ElementPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{}", seg.name)?;
            if let Index::At(n) = seg.index {
                write!(f, "[{n}]")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Ref(ElementPath),
    Sum { over: ElementPath, body: Box<Expr> },
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MathOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Log,
    Sqrt,
    Sum,
}

impl MathOp {
    fn arity(self) -> (usize, Option<usize>) {
        match self {
            MathOp::Add | MathOp::Mul => (1, None),
            MathOp::Sub | MathOp::Div => (2, Some(2)),
            MathOp::Neg | MathOp::Log | MathOp::Sqrt | MathOp::Sum => (1, Some(1)),
        }
    }
}

/// Builds a normalized expression node.
pub fn compose(op: MathOp, args: Vec<Expr>) -> Result<Expr, AbstractionError> {
    let (lo, hi) = op.arity();
    if args.len() < lo || hi.is_some_and(|h| args.len() > h) {
        return Err(AbstractionError::ArityMismatch {
            op: format!("{op:?}").to_lowercase(),
            expected: lo,
            got: args.len(),
        });
    }
    let mut it = args.into_iter();
    Ok(match op {
        MathOp::Add => add(it.collect()),
        MathOp::Mul => mul(it.collect()),
        MathOp::Sub => {
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            add(vec![a, neg(b)])
        }
        MathOp::Div => {
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            div(a, b)
        }
        MathOp::Neg => neg(it.next().unwrap()),
        MathOp::Log => match it.next().unwrap() {
            Expr::Const(c) if c > 0.0 => Expr::Const(c.ln()),
            e => Expr::Log(Box::new(e)),
        },
        MathOp::Sqrt => match it.next().unwrap() {
            Expr::Const(c) if c >= 0.0 => Expr::Const(c.sqrt()),
            e => Expr::Sqrt(Box::new(e)),
        },
        MathOp::Sum => sum(it.next().unwrap())?,
    })
}

fn add(args: Vec<Expr>) -> Expr {
    let mut out = Vec::new();
    let mut constant = 0.0;
    let mut saw_const = false;
    for a in args {
        match a {
            Expr::Add(inner) => {
                for e in inner {
                    match e {
                        Expr::Const(c) => {
                            constant += c;
                            saw_const = true;
                        }
                        e => out.push(e),
                    }
                }
            }
            Expr::Const(c) => {
                constant += c;
                saw_const = true;
            }
            e => out.push(e),
        }
    }
    if saw_const && constant != 0.0 {
        out.push(Expr::Const(constant));
    }
    match out.len() {
        0 => Expr::Const(0.0),
        1 => out.pop().unwrap(),
        _ => Expr::Add(out),
    }
}

fn mul(args: Vec<Expr>) -> Expr {
    let mut out = Vec::new();
    let mut constant = 1.0;
    for a in args {
        match a {
            Expr::Mul(inner) => {
                for e in inner {
                    match e {
                        Expr::Const(c) => constant *= c,
                        e => out.push(e),
                    }
                }
            }
            Expr::Const(c) => constant *= c,
            e => out.push(e),
        }
    }
    if constant == 0.0 {
        return Expr::Const(0.0);
    }
    if constant != 1.0 {
        out.insert(0, Expr::Const(constant));
    }
    match out.len() {
        0 => Expr::Const(constant),
        1 => out.pop().unwrap(),
        _ => Expr::Mul(out),
    }
}

fn neg(e: Expr) -> Expr {
    match e {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        e => Expr::Neg(Box::new(e)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (a, Expr::Const(1.0)) => a,
        (Expr::Const(x), Expr::Const(y)) if y != 0.0 => Expr::Const(x / y),
        (Expr::Const(0.0), _) => Expr::Const(0.0),
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn sum(body: Expr) -> Result<Expr, AbstractionError> {
    if let Expr::Const(c) = body {
        if c == 0.0 {
            return Ok(Expr::Const(0.0));
        }
    }
    let over = innermost_free(&body)?.ok_or_else(|| {
        AbstractionError::Validation(format!("sum({body}) has no free index to sum over"))
    })?;
    Ok(Expr::Sum {
        over,
        body: Box::new(body),
    })
}

/// The deepest free index of an expression; all free indices must lie on one chain.
fn innermost_free(e: &Expr) -> Result<Option<ElementPath>, AbstractionError> {
    let free = e.free_indices();
    let Some(deepest) = free.iter().max_by_key(|p| p.len()).cloned() else {
        return Ok(None);
    };
    if let Some(bad) = free.iter().find(|p| !p.is_prefix_of(&deepest)) {
        return Err(AbstractionError::Validation(format!(
            "ambiguous summation: `{bad}` and `{deepest}` are independent indices"
        )));
    }
    Ok(Some(deepest))
}

impl Expr {
    /// Free (unsummed) index prefixes, deduplicated, outermost first.
    pub fn free_indices(&self) -> Vec<ElementPath> {
        let mut out: Vec<ElementPath> = Vec::new();
        self.collect_free(&mut out);
        out.sort_by_key(|p| p.len());
        out
    }

    fn collect_free(&self, out: &mut Vec<ElementPath>) {
        match self {
            Expr::Const(_) => {}
            Expr::Ref(p) => {
                for f in p.free_prefixes() {
                    if !out.contains(&f) {
                        out.push(f);
                    }
                }
            }
            Expr::Sum { over, body } => {
                let mut inner = Vec::new();
                body.collect_free(&mut inner);
                for f in inner {
                    if &f != over && !out.contains(&f) {
                        out.push(f);
                    }
                }
            }
            Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| e.collect_free(out)),
            Expr::Div(a, b) => {
                a.collect_free(out);
                b.collect_free(out);
            }
            Expr::Neg(e) | Expr::Log(e) | Expr::Sqrt(e) => e.collect_free(out),
        }
    }

    /// Every referenced path.
    pub fn refs(&self) -> Vec<&ElementPath> {
        let mut out = Vec::new();
        self.visit_refs(&mut |p| out.push(p));
        out
    }

    fn visit_refs<'a>(&'a self, f: &mut impl FnMut(&'a ElementPath)) {
        match self {
            Expr::Const(_) => {}
            Expr::Ref(p) => f(p),
            Expr::Sum { body, .. } => body.visit_refs(f),
            Expr::Add(v) | Expr::Mul(v) => v.iter().for_each(|e| e.visit_refs(f)),
            Expr::Div(a, b) => {
                a.visit_refs(f);
                b.visit_refs(f);
            }
            Expr::Neg(e) | Expr::Log(e) | Expr::Sqrt(e) => e.visit_refs(f),
        }
    }

    pub fn mentions(&self, attr: &ElementId) -> bool {
        self.refs().iter().any(|p| p.last() == attr)
    }

    /// True when the expression is affine in `attr` and depends on it.
    pub fn is_linear_in(&self, attr: &ElementId) -> bool {
        self.mentions(attr) && self.affine_in(attr)
    }

    fn affine_in(&self, attr: &ElementId) -> bool {
        match self {
            Expr::Const(_) | Expr::Ref(_) => true,
            Expr::Sum { body, .. } => body.affine_in(attr),
            Expr::Add(v) => v.iter().all(|e| e.affine_in(attr)),
            Expr::Mul(v) => {
                let dependent: Vec<_> = v.iter().filter(|e| e.mentions(attr)).collect();
                dependent.len() <= 1 && dependent.iter().all(|e| e.affine_in(attr))
            }
            Expr::Div(a, b) => !b.mentions(attr) && a.affine_in(attr),
            Expr::Neg(e) => e.affine_in(attr),
            Expr::Log(e) | Expr::Sqrt(e) => !e.mentions(attr),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(_) => 1,
            Expr::Mul(_) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            Expr::Const(c) if *c < 0.0 => 3,
            _ => 4,
        }
    }
}

fn fmt_const(c: f64) -> String {
    format!("{c}")
}

fn wrap(e: &Expr, min_prec: u8) -> String {
    if e.precedence() < min_prec {
        format!("({e})")
    } else {
        e.to_string()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => f.write_str(&fmt_const(*c)),
            Expr::Ref(p) => write!(f, "{p}"),
            Expr::Sum { body, .. } => write!(f, "sum({body})"),
            Expr::Add(v) => {
                for (i, e) in v.iter().enumerate() {
                    match (i, e) {
                        (0, e) => f.write_str(&wrap(e, 1))?,
                        (_, Expr::Neg(inner)) => write!(f, " - {}", wrap(inner, 2))?,
                        (_, Expr::Const(c)) if *c < 0.0 => write!(f, " - {}", fmt_const(-c))?,
                        (_, e) => write!(f, " + {}", wrap(e, 2))?,
                    }
                }
                Ok(())
            }
            Expr::Mul(v) => {
                for (i, e) in v.iter().enumerate() {
                    if i == 0 {
                        f.write_str(&wrap(e, 2))?;
                    } else {
                        // A right operand that is itself a quotient must keep its grouping.
                        write!(f, " * {}", wrap(e, 4))?;
                    }
                }
                Ok(())
            }
            Expr::Div(a, b) => write!(f, "{} / {}", wrap(a, 2), wrap(b, 4)),
            Expr::Neg(e) => write!(f, "-{}", wrap(e, 4)),
            Expr::Log(e) => write!(f, "log({e})"),
            Expr::Sqrt(e) => write!(f, "sqrt({e})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "==",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub lhs: Expr,
    pub rel: Relation,
    pub rhs: Expr,
    /// Written with `<` or `>`; compiled as the closed relation.
    pub strict: bool,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match (self.rel, self.strict) {
            (Relation::Le, true) => "<",
            (Relation::Ge, true) => ">",
            (r, _) => return write!(f, "{} {r} {}", self.lhs, self.rhs),
        };
        write!(f, "{} {op} {}", self.lhs, self.rhs)
    }
}

/// Every path must resolve and end at a parameter of `schema`.
pub fn check_expr(schema: &NetworkSchema, e: &Expr) -> Result<(), AbstractionError> {
    for p in e.refs() {
        let el = schema
            .read(&p.to_string())
            .map_err(|_| AbstractionError::SchemaMismatch(p.to_string()))?;
        if !el.is_parameter() {
            return Err(AbstractionError::SchemaMismatch(p.to_string()));
        }
    }
    Ok(())
}

/// Builds a constraint after checking both sides against the schema.
pub fn compare(
    schema: &NetworkSchema,
    lhs: Expr,
    rel: Relation,
    rhs: Expr,
) -> Result<Constraint, AbstractionError> {
    check_expr(schema, &lhs)?;
    check_expr(schema, &rhs)?;
    if lhs == rhs {
        log::warn!("constraint `{lhs} {rel} {rhs}` compares an expression with itself");
    }
    Ok(Constraint {
        lhs,
        rel,
        rhs,
        strict: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::schema::build_default_schema;

    fn r(s: &str) -> Expr {
        Expr::Ref(ElementPath::parse(s).unwrap())
    }

    #[test]
    fn additive_identity_dropped() {
        let e = compose(MathOp::Add, vec![Expr::Const(0.0), r("netses.sesrate")]).unwrap();
        assert_eq!(e, r("netses.sesrate"));
    }

    #[test]
    fn nested_sums_flatten() {
        let inner = compose(MathOp::Add, vec![r("netses.sesrate"), Expr::Const(1.0)]).unwrap();
        let e = compose(MathOp::Add, vec![inner, Expr::Const(2.0)]).unwrap();
        assert_eq!(e, Expr::Add(vec![r("netses.sesrate"), Expr::Const(3.0)]));
        let m = compose(MathOp::Mul, vec![Expr::Const(1.0), r("netlnk.lnkcap")]).unwrap();
        assert_eq!(m, r("netlnk.lnkcap"));
    }

    #[test]
    fn sum_binds_innermost_index() {
        let e = compose(MathOp::Sum, vec![r("netnd.lnknd.lnkpwr")]).unwrap();
        match &e {
            Expr::Sum { over, .. } => assert_eq!(over.to_string(), "netnd.lnknd"),
            other => panic!("{other:?}"),
        }
        assert_eq!(e.free_indices(), vec![ElementPath::parse("netnd").unwrap()]);

        let l = compose(MathOp::Log, vec![r("netses.sesrate")]).unwrap();
        let s = compose(MathOp::Sum, vec![l]).unwrap();
        assert!(s.free_indices().is_empty());
        assert_eq!(s.to_string(), "sum(log(netses.sesrate))");
    }

    #[test]
    fn arity_is_checked() {
        assert!(matches!(
            compose(MathOp::Div, vec![Expr::Const(1.0)]),
            Err(AbstractionError::ArityMismatch { .. })
        ));
        assert!(compose(MathOp::Add, vec![]).is_err());
        assert!(compose(MathOp::Sum, vec![Expr::Const(2.0)]).is_err());
    }

    #[test]
    fn linearity() {
        let x = ElementId::new("sesrate");
        let lin = compose(MathOp::Sum, vec![r("netses.sesrate")]).unwrap();
        assert!(lin.is_linear_in(&x));
        let lg = compose(
            MathOp::Sum,
            vec![compose(MathOp::Log, vec![r("netses.sesrate")]).unwrap()],
        )
        .unwrap();
        assert!(!lg.is_linear_in(&x));
        assert!(!lin.is_linear_in(&ElementId::new("lnkpwr")));
    }

    #[test]
    fn compare_checks_schema() {
        let s = build_default_schema();
        let c = compare(&s, r("netses[1].seslnk.lnkpwr"), Relation::Le, Expr::Const(5.0)).unwrap();
        assert_eq!(c.to_string(), "netses[1].seslnk.lnkpwr <= 5");
        assert!(matches!(
            compare(&s, r("netses.bogus"), Relation::Le, Expr::Const(1.0)),
            Err(AbstractionError::SchemaMismatch(_))
        ));
        let e = r("netlnk.lnkcap");
        assert!(compare(&s, e.clone(), Relation::Le, e).is_ok());
    }

    #[test]
    fn display_keeps_grouping() {
        let a = r("netses.sesrate");
        let b = r("netlnk.lnkcap");
        let q = compose(MathOp::Div, vec![b.clone(), Expr::Const(2.0)]).unwrap();
        let m = compose(MathOp::Mul, vec![a.clone(), q]).unwrap();
        assert_eq!(m.to_string(), "netses.sesrate * (netlnk.lnkcap / 2)");
        let s = compose(MathOp::Sub, vec![a, Expr::Const(3.0)]).unwrap();
        assert_eq!(s.to_string(), "netses.sesrate - 3");
    }
}
