//! Line-oriented program parser.
//!
//! ```text
//! nt.set('timescale_ratio', 30)
//! nt.make_var('wos_x', [ntses, sesrate], [all, None], [0, 20])
//! expr = mkexpr('sum(log(wos_x))', 'wos_x')
//! nt.add_cstr('sum(ntlk.lkses.sesrate) <= ntlk.lkcap', 'wos_x')
//! nt.objective(max, expr)
//! ```

use std::collections::BTreeMap;

use super::expr::{compose, Constraint, ElementPath, Expr, Index, MathOp, PathSeg, Relation};
use super::problem::{ControlProblemSpec, Sense, Variable};
use super::schema::{build_default_schema, Bounds, NetworkSchema};
use super::AbstractionError;

const QUOTES: [char; 7] = ['\'', '"', '`', '\u{2018}', '\u{2019}', '\u{201c}', '\u{201d}'];

fn perr(line: usize, column: usize, message: impl Into<String>) -> AbstractionError {
    AbstractionError::Parse {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    col: usize,
}

/// A statement: its line number, and tokens with 1-based columns.
struct Stmt {
    line: usize,
    toks: Vec<Spanned>,
}

fn lex_line(line_no: usize, text: &str) -> Result<Vec<Stmt>, AbstractionError> {
    let chars: Vec<char> = text.chars().collect();
    let mut stmts = Vec::new();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c == '#' {
            break;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == ';' {
            if !toks.is_empty() {
                stmts.push(Stmt {
                    line: line_no,
                    toks: std::mem::take(&mut toks),
                });
            }
            i += 1;
            continue;
        }
        if QUOTES.contains(&c) {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && !QUOTES.contains(&chars[j]) {
                j += 1;
            }
            if j >= chars.len() {
                return Err(perr(line_no, col, "unterminated string"));
            }
            toks.push(Spanned {
                tok: Tok::Str(chars[start..j].iter().collect()),
                col: start + 1,
            });
            i = j + 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            toks.push(Spanned {
                tok: Tok::Ident(chars[i..j].iter().collect()),
                col,
            });
            i = j;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()))
        {
            let j = scan_number(&chars, i);
            toks.push(Spanned {
                tok: Tok::Num(chars[i..j].iter().collect()),
                col,
            });
            i = j;
            continue;
        }
        if "()[],=.-".contains(c) {
            toks.push(Spanned {
                tok: Tok::Punct(c),
                col,
            });
            i += 1;
            continue;
        }
        return Err(perr(line_no, col, format!("unexpected character `{c}`")));
    }
    if !toks.is_empty() {
        stmts.push(Stmt {
            line: line_no,
            toks,
        });
    }
    Ok(stmts)
}

fn scan_number(chars: &[char], start: usize) -> usize {
    let mut j = start;
    while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
        j += 1;
    }
    if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
        let mut k = j + 1;
        if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
            k += 1;
        }
        if k < chars.len() && chars[k].is_ascii_digit() {
            while k < chars.len() && chars[k].is_ascii_digit() {
                k += 1;
            }
            j = k;
        }
    }
    j
}

struct Cursor<'a> {
    stmt: &'a Stmt,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Spanned> {
        self.stmt.toks.get(self.pos)
    }

    fn col(&self) -> usize {
        self.peek()
            .map(|t| t.col)
            .or_else(|| self.stmt.toks.last().map(|t| t.col + 1))
            .unwrap_or(1)
    }

    fn err(&self, msg: impl Into<String>) -> AbstractionError {
        perr(self.stmt.line, self.col(), msg)
    }

    fn next(&mut self) -> Option<&'a Spanned> {
        let t = self.stmt.toks.get(self.pos);
        self.pos += 1;
        t
    }

    fn punct(&mut self, c: char) -> Result<(), AbstractionError> {
        match self.peek() {
            Some(Spanned {
                tok: Tok::Punct(p), ..
            }) if *p == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{c}`"))),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Spanned { tok: Tok::Punct(p), .. }) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn ident(&mut self) -> Result<String, AbstractionError> {
        match self.peek() {
            Some(Spanned {
                tok: Tok::Ident(s), ..
            }) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.err("expected an identifier")),
        }
    }

    fn string(&mut self) -> Result<(String, usize), AbstractionError> {
        match self.peek() {
            Some(Spanned {
                tok: Tok::Str(s),
                col,
            }) => {
                self.pos += 1;
                Ok((s.clone(), *col))
            }
            _ => Err(self.err("expected a quoted string")),
        }
    }

    /// A bare word, number or string, as text.
    fn scalar(&mut self) -> Result<String, AbstractionError> {
        let neg = self.eat('-');
        let s = match self.next().map(|t| &t.tok) {
            Some(Tok::Ident(s)) | Some(Tok::Str(s)) | Some(Tok::Num(s)) => s.clone(),
            _ => {
                self.pos -= 1;
                return Err(self.err("expected a value"));
            }
        };
        Ok(if neg { format!("-{s}") } else { s })
    }

    fn list(&mut self) -> Result<Vec<String>, AbstractionError> {
        self.punct('[')?;
        let mut out = Vec::new();
        if self.eat(']') {
            return Ok(out);
        }
        loop {
            out.push(self.scalar()?);
            if self.eat(']') {
                return Ok(out);
            }
            self.punct(',')?;
        }
    }

    fn end(&mut self) -> Result<(), AbstractionError> {
        self.eat(',');
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.err("unexpected trailing input")),
        }
    }
}

struct Builder<'s> {
    schema: &'s NetworkSchema,
    variables: Vec<Variable>,
    exprs: BTreeMap<String, Expr>,
    last_expr: Option<String>,
    constraints: Vec<Constraint>,
    settings: BTreeMap<String, String>,
    objective: Option<(Sense, String, usize)>,
}

/// Parses program text against the built-in schema.
pub fn parse_program(text: &str) -> Result<ControlProblemSpec, AbstractionError> {
    parse_program_with(text, &build_default_schema())
}

pub fn parse_program_with(
    text: &str,
    schema: &NetworkSchema,
) -> Result<ControlProblemSpec, AbstractionError> {
    let mut b = Builder {
        schema,
        variables: Vec::new(),
        exprs: BTreeMap::new(),
        last_expr: None,
        constraints: Vec::new(),
        settings: BTreeMap::new(),
        objective: None,
    };
    for (i, line) in text.lines().enumerate() {
        for stmt in lex_line(i + 1, line)? {
            b.statement(&stmt)?;
        }
    }
    b.finish()
}

fn parse_bound(s: &str, line: usize) -> Result<f64, AbstractionError> {
    match s.to_ascii_lowercase().as_str() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        t => t
            .parse()
            .map_err(|_| AbstractionError::Validation(format!("line {line}: bad bound `{s}`"))),
    }
}

impl Builder<'_> {
    fn statement(&mut self, stmt: &Stmt) -> Result<(), AbstractionError> {
        let mut c = Cursor { stmt, pos: 0 };
        let head = c.ident()?;
        if c.eat('=') {
            let f = c.ident()?;
            if f != "mkexpr" {
                return Err(perr(stmt.line, stmt.toks[2].col, format!("unknown function `{f}`")));
            }
            c.punct('(')?;
            let (math, col) = c.string()?;
            let vars = if c.eat(',') { Some(c.string()?) } else { None };
            c.punct(')')?;
            c.end()?;
            if let Some((v, vcol)) = vars {
                self.check_var_list(&v, stmt.line, vcol)?;
            }
            let e = MathParser::new(self, &math, stmt.line, col).expr_only()?;
            self.exprs.insert(head.clone(), e);
            self.last_expr = Some(head);
            return Ok(());
        }
        if head != "nt" {
            return Err(perr(stmt.line, stmt.toks[0].col, format!("unknown statement `{head}`")));
        }
        c.punct('.')?;
        let method_col = c.col();
        let method = c.ident()?;
        c.punct('(')?;
        match method.as_str() {
            "set" => {
                let k = c.scalar()?;
                c.punct(',')?;
                let v = c.scalar()?;
                c.punct(')')?;
                c.end()?;
                self.settings.insert(k, v);
            }
            "make_var" => {
                let (name, _) = c.string()?;
                c.punct(',')?;
                let chain = c.list()?;
                c.punct(',')?;
                let idx = c.list()?;
                let bounds = if c.eat(',') { Some(c.list()?) } else { None };
                c.punct(')')?;
                c.end()?;
                self.make_var(stmt.line, name, chain, idx, bounds)?;
            }
            "add_cstr" => {
                let (math, col) = c.string()?;
                if c.eat(',') {
                    let (v, vcol) = c.string()?;
                    self.check_var_list(&v, stmt.line, vcol)?;
                }
                c.punct(')')?;
                c.end()?;
                let cst = MathParser::new(self, &math, stmt.line, col).constraint()?;
                self.constraints.push(cst);
            }
            "objective" => {
                let s = c.ident()?;
                let sense = match s.as_str() {
                    "max" | "maximize" => Sense::Maximize,
                    "min" | "minimize" => Sense::Minimize,
                    _ => return Err(c.err(format!("unknown objective sense `{s}`"))),
                };
                c.punct(',')?;
                let name = c.ident()?;
                c.punct(')')?;
                c.end()?;
                self.objective = Some((sense, name, stmt.line));
            }
            _ => return Err(perr(stmt.line, method_col, format!("unknown method `nt.{method}`"))),
        }
        Ok(())
    }

    fn check_var_list(&self, list: &str, line: usize, col: usize) -> Result<(), AbstractionError> {
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            if self.variables.iter().all(|v| v.name != name) {
                return Err(AbstractionError::Validation(format!(
                    "line {line}, column {col}: unbound variable `{name}`"
                )));
            }
        }
        Ok(())
    }

    fn make_var(
        &mut self,
        line: usize,
        name: String,
        chain: Vec<String>,
        idx: Vec<String>,
        bounds: Option<Vec<String>>,
    ) -> Result<(), AbstractionError> {
        if chain.is_empty() || chain.len() != idx.len() {
            return Err(AbstractionError::Validation(format!(
                "line {line}: `{name}` needs one index entry per path element"
            )));
        }
        let mut segs = Vec::new();
        for (i, (el, ix)) in chain.iter().zip(&idx).enumerate() {
            let id = self
                .schema
                .canonical(el)
                .ok_or_else(|| AbstractionError::Validation(format!("line {line}: unknown element `{el}`")))?;
            let last = i + 1 == chain.len();
            let index = match ix.as_str() {
                "all" | "None" | "none" => Index::All,
                n => match n.parse::<u32>() {
                    Ok(k) if !last => Index::At(k),
                    _ => {
                        return Err(AbstractionError::Validation(format!(
                            "line {line}: bad index `{n}` for `{el}`"
                        )))
                    }
                },
            };
            segs.push(PathSeg { name: id, index });
        }
        let path = ElementPath::new(segs);
        let el = self.schema.read(&path.to_string())?;
        if !el.is_parameter() {
            return Err(AbstractionError::Validation(format!(
                "line {line}: `{name}` must end at a parameter"
            )));
        }
        let bounds = match bounds {
            None => self.schema.default_bounds(path.last()),
            Some(b) if b.len() == 2 => Bounds::new(parse_bound(&b[0], line)?, parse_bound(&b[1], line)?),
            Some(_) => {
                return Err(AbstractionError::Validation(format!(
                    "line {line}: bounds must be [lo, hi]"
                )))
            }
        };
        self.variables.push(Variable { name, path, bounds });
        Ok(())
    }

    fn finish(self) -> Result<ControlProblemSpec, AbstractionError> {
        let (sense, name) = match self.objective {
            Some((s, n, line)) => {
                if !self.exprs.contains_key(&n) {
                    return Err(AbstractionError::Validation(format!(
                        "line {line}: unknown expression `{n}`"
                    )));
                }
                (s, n)
            }
            None => (
                Sense::Maximize,
                self.last_expr
                    .clone()
                    .ok_or_else(|| AbstractionError::Validation("program defines no utility (mkexpr)".into()))?,
            ),
        };
        let spec = ControlProblemSpec {
            sense,
            utility: self.exprs[&name].clone(),
            constraints: self.constraints,
            variables: self.variables,
            settings: self.settings,
        };
        spec.validate(self.schema)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum MTok {
    Num(f64),
    Ident(String),
    Rel(&'static str),
    Sym(char),
}

struct MathParser<'a, 'b> {
    b: &'a Builder<'b>,
    toks: Vec<(MTok, usize)>,
    pos: usize,
    line: usize,
    base_col: usize,
    lex_error: Option<AbstractionError>,
}

impl<'a, 'b> MathParser<'a, 'b> {
    fn new(b: &'a Builder<'b>, src: &str, line: usize, base_col: usize) -> Self {
        let mut p = MathParser {
            b,
            toks: Vec::new(),
            pos: 0,
            line,
            base_col,
            lex_error: None,
        };
        p.lex(src);
        p
    }

    fn lex(&mut self, src: &str) {
        let chars: Vec<char> = src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let j = scan_number(&chars, i);
                let s: String = chars[i..j].iter().collect();
                match s.parse() {
                    Ok(v) => self.toks.push((MTok::Num(v), i)),
                    Err(_) => {
                        self.lex_error = Some(self.err_at(i, format!("bad number `{s}`")));
                        return;
                    }
                }
                i = j;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '\\') {
                    j += 1;
                }
                let s: String = chars[i..j].iter().filter(|c| **c != '\\').collect();
                self.toks.push((MTok::Ident(s), i));
                i = j;
                continue;
            }
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let rel = match two.as_str() {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "==" => Some("=="),
                _ => None,
            };
            if let Some(r) = rel {
                self.toks.push((MTok::Rel(r), i));
                i += 2;
                continue;
            }
            match c {
                '<' => self.toks.push((MTok::Rel("<"), i)),
                '>' => self.toks.push((MTok::Rel(">"), i)),
                '+' | '-' | '*' | '/' | '(' | ')' | '[' | ']' | '.' => self.toks.push((MTok::Sym(c), i)),
                _ => {
                    self.lex_error = Some(self.err_at(i, format!("unexpected character `{c}`")));
                    return;
                }
            }
            i += 1;
        }
    }

    fn err_at(&self, offset: usize, msg: impl Into<String>) -> AbstractionError {
        perr(self.line, self.base_col + offset, msg)
    }

    fn err(&self, msg: impl Into<String>) -> AbstractionError {
        let off = self
            .toks
            .get(self.pos)
            .map(|t| t.1)
            .or_else(|| self.toks.last().map(|t| t.1 + 1))
            .unwrap_or(0);
        self.err_at(off, msg)
    }

    fn peek(&self) -> Option<&MTok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn eat_sym(&mut self, c: char) -> bool {
        if self.peek() == Some(&MTok::Sym(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<(), AbstractionError> {
        if self.eat_sym(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn expr_only(mut self) -> Result<Expr, AbstractionError> {
        if let Some(e) = self.lex_error.take() {
            return Err(e);
        }
        let e = self.sum_expr()?;
        if self.pos < self.toks.len() {
            return Err(self.err("unexpected trailing input"));
        }
        Ok(e)
    }

    fn constraint(mut self) -> Result<Constraint, AbstractionError> {
        if let Some(e) = self.lex_error.take() {
            return Err(e);
        }
        let lhs = self.sum_expr()?;
        let (rel, strict) = match self.peek() {
            Some(MTok::Rel(r)) => match *r {
                "<" => (Relation::Le, true),
                "<=" => (Relation::Le, false),
                ">" => (Relation::Ge, true),
                ">=" => (Relation::Ge, false),
                _ => (Relation::Eq, false),
            },
            _ => return Err(self.err("expected a comparison operator")),
        };
        self.pos += 1;
        let rhs = self.sum_expr()?;
        if self.pos < self.toks.len() {
            return Err(self.err("unexpected trailing input"));
        }
        let mut c = super::expr::compare(self.b.schema, lhs, rel, rhs)?;
        c.strict = strict;
        Ok(c)
    }

    fn sum_expr(&mut self) -> Result<Expr, AbstractionError> {
        let mut terms = vec![self.term()?];
        loop {
            if self.eat_sym('+') {
                terms.push(self.term()?);
            } else if self.eat_sym('-') {
                let t = self.term()?;
                terms.push(compose(MathOp::Neg, vec![t])?);
            } else {
                break;
            }
        }
        if terms.len() == 1 {
            Ok(terms.pop().unwrap())
        } else {
            compose(MathOp::Add, terms)
        }
    }

    fn term(&mut self) -> Result<Expr, AbstractionError> {
        let mut acc = self.unary()?;
        loop {
            if self.eat_sym('*') {
                let r = self.unary()?;
                acc = compose(MathOp::Mul, vec![acc, r])?;
            } else if self.eat_sym('/') {
                let r = self.unary()?;
                acc = compose(MathOp::Div, vec![acc, r])?;
            } else {
                return Ok(acc);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, AbstractionError> {
        if self.eat_sym('-') {
            let e = self.unary()?;
            return compose(MathOp::Neg, vec![e]);
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, AbstractionError> {
        let start = self.pos;
        match self.peek().cloned() {
            Some(MTok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Const(v))
            }
            Some(MTok::Sym('(')) => {
                self.pos += 1;
                let e = self.sum_expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Some(MTok::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&MTok::Sym('(')) {
                    let op = match name.as_str() {
                        "sum" => MathOp::Sum,
                        "log" => MathOp::Log,
                        "sqrt" => MathOp::Sqrt,
                        _ => {
                            self.pos = start;
                            return Err(self.err(format!("unknown function `{name}`")));
                        }
                    };
                    self.pos += 1;
                    let arg = self.sum_expr()?;
                    self.expect_sym(')')?;
                    return compose(op, vec![arg]).map_err(|e| match e {
                        AbstractionError::Validation(m) => {
                            AbstractionError::Validation(format!("line {}: {m}", self.line))
                        }
                        other => other,
                    });
                }
                self.pos = start;
                self.path()
            }
            _ => Err(self.err("expected a number, name or `(`")),
        }
    }

    fn path(&mut self) -> Result<Expr, AbstractionError> {
        let start_off = self.toks[self.pos].1;
        let mut raw: Vec<(String, Index)> = Vec::new();
        loop {
            let name = match self.peek().cloned() {
                Some(MTok::Ident(s)) => s,
                _ => return Err(self.err("expected a name")),
            };
            self.pos += 1;
            let mut index = Index::All;
            if self.eat_sym('[') {
                index = match self.peek().cloned() {
                    Some(MTok::Num(v)) if v >= 0.0 && v.fract() == 0.0 => Index::At(v as u32),
                    Some(MTok::Ident(s)) if s == "all" => Index::All,
                    _ => return Err(self.err("expected an index or `all`")),
                };
                self.pos += 1;
                self.expect_sym(']')?;
            }
            raw.push((name, index));
            if !self.eat_sym('.') {
                break;
            }
        }
        let text = raw.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join(".");
        let unbound = || {
            AbstractionError::Validation(format!(
                "line {}, column {}: unbound variable or unknown element `{text}`",
                self.line,
                self.base_col + start_off
            ))
        };
        if raw.len() == 1 && raw[0].1 == Index::All {
            if let Some(v) = self.b.variables.iter().find(|v| v.name == raw[0].0) {
                return Ok(Expr::Ref(v.path.clone()));
            }
        }
        let schema = self.b.schema;
        let mut segs = Vec::new();
        for (name, index) in &raw {
            let id = schema.canonical(name).ok_or_else(unbound)?;
            segs.push(PathSeg {
                name: id,
                index: *index,
            });
        }
        if segs.len() == 1 {
            // A bare attribute ranges over every holder in the network.
            let attr = segs[0].name.clone();
            let el = schema.get(attr.as_str()).ok_or_else(unbound)?;
            if !el.is_parameter() {
                return Err(unbound());
            }
            let holder_entity = schema.holder_entity(&attr).ok_or_else(unbound)?;
            let global = schema.global_of(holder_entity).ok_or_else(unbound)?;
            segs.insert(
                0,
                PathSeg {
                    name: global.element.id.clone(),
                    index: Index::All,
                },
            );
        }
        let path = ElementPath::new(segs);
        match schema.read(&path.to_string()) {
            Ok(el) if el.is_parameter() => Ok(Expr::Ref(path)),
            _ => Err(unbound()),
        }
    }
}
