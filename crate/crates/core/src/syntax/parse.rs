//! Parser for systems, attacker programs and directive sequences.
//!
//! A name inside an expression denotes an object identifier when the system
//! declares an array or procedure of that name, and a register otherwise.
//! Loads and branches without an explicit `@label` receive fresh labels in
//! preorder.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::lang::{Cmd, Directive, Expr, Instr, Label, Op, Reg, SyscallName, Value};
use crate::system::{label_check_with, Space, System};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

#[derive(Clone, PartialEq, Debug)]
enum Tok {
    Name(String),
    Int(i128),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    ":=", "<-", "->", "==", "!=", "<=", "&&", "||", "{", "}", "(", ")", "[", "]", ";", ",", "@",
    "+", "-", "*", "<", "!", "=",
];

const KEYWORDS: &[&str] = &[
    "skip", "fence", "load", "store", "call", "syscall", "if", "else", "while", "poison", "spec",
    "observe", "system", "array", "proc", "caps", "space", "true", "false", "null",
];

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = (line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let s: String = chars[i..]
                .iter()
                .take_while(|c| c.is_ascii_alphanumeric() || **c == '_')
                .collect();
            i += s.len();
            col += s.len();
            out.push(Token { tok: Tok::Name(s), line: start.0, col: start.1 });
            continue;
        }
        if c.is_ascii_digit() {
            let s: String = chars[i..].iter().take_while(|c| c.is_ascii_digit()).collect();
            i += s.len();
            col += s.len();
            let n = s.parse::<i128>().map_err(|_| ParseError {
                line: start.0,
                col: start.1,
                msg: format!("integer literal `{s}` is too large"),
            })?;
            out.push(Token { tok: Tok::Int(n), line: start.0, col: start.1 });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                out.push(Token { tok: Tok::Sym(s), line: start.0, col: start.1 });
            }
            None => {
                return Err(ParseError { line, col, msg: format!("unexpected character `{c}`") });
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Token>,
    pos: usize,
    objects: &'a BTreeSet<String>,
    explicit: BTreeSet<String>,
    attacker: bool,
    in_spec: bool,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    fn new(toks: Vec<Token>, objects: &'a BTreeSet<String>, attacker: bool) -> Self {
        Parser { toks, pos: 0, objects, explicit: BTreeSet::new(), attacker, in_spec: false }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(ParseError { line: t.line, col: t.col, msg: msg.into() })
    }

    fn describe(&self) -> String {
        match self.peek() {
            Tok::Name(n) => format!("`{n}`"),
            Tok::Int(n) => format!("`{n}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Name(x) if x == k)
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.describe()))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.is_kw(k) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected `{k}`, found {}", self.describe()))
        }
    }

    fn name(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.bump();
                Ok(n)
            }
            _ => self.err(format!("expected a name, found {}", self.describe())),
        }
    }

    fn usize_lit(&mut self) -> PResult<usize> {
        match *self.peek() {
            Tok::Int(n) if n >= 0 && n <= usize::MAX as i128 => {
                self.bump();
                Ok(n as usize)
            }
            _ => self.err(format!("expected a natural number, found {}", self.describe())),
        }
    }

    fn register(&mut self) -> PResult<Reg> {
        let n = self.name()?;
        if self.objects.contains(&n) {
            self.pos -= 1;
            return self.err(format!("`{n}` is an identifier, not a register"));
        }
        Ok(Reg::new(n))
    }

    fn value(&mut self) -> PResult<Value> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                self.int(n)
            }
            Tok::Sym("-") => match self.peek_at(1).clone() {
                Tok::Int(n) => {
                    self.bump();
                    self.bump();
                    self.int(-n)
                }
                _ => self.err("expected an integer after `-`"),
            },
            Tok::Name(n) if n == "true" || n == "false" => {
                self.bump();
                Ok(Value::Bool(n == "true"))
            }
            Tok::Name(n) if n == "null" => {
                self.bump();
                Ok(Value::Null)
            }
            _ => self.err(format!("expected a value, found {}", self.describe())),
        }
    }

    fn int(&self, n: i128) -> PResult<Value> {
        i64::try_from(n)
            .map(Value::Int)
            .or_else(|_| self.err(format!("integer {n} does not fit in 64 bits")))
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        const LEVELS: &[&[(&str, Op)]] = &[
            &[("||", Op::Or)],
            &[("&&", Op::And)],
            &[("==", Op::Eq), ("!=", Op::Neq)],
            &[("<", Op::Lt), ("<=", Op::Le)],
            &[("+", Op::Add), ("-", Op::Sub)],
            &[("*", Op::Mul)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        loop {
            let found = LEVELS[level].iter().find(|(s, _)| self.is_sym(s));
            let Some((_, op)) = found else { break };
            let op = *op;
            self.bump();
            let rhs = self.binary(level + 1)?;
            lhs = Expr::Op(op, vec![lhs, rhs]);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is_sym("!") {
            self.bump();
            return Ok(Expr::Op(Op::Not, vec![self.unary()?]));
        }
        match self.peek().clone() {
            Tok::Sym("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_sym(")")?;
                Ok(e)
            }
            Tok::Name(n) if !KEYWORDS.contains(&n.as_str()) => {
                self.bump();
                Ok(if self.objects.contains(&n) { Expr::Id(n.into()) } else { Expr::Reg(n.into()) })
            }
            _ => self.value().map(Expr::Const),
        }
    }

    fn label(&mut self) -> PResult<Label> {
        if !self.is_sym("@") {
            return Ok(Label::new(""));
        }
        self.bump();
        let n = self.name()?;
        if !self.explicit.insert(n.clone()) {
            self.pos -= 1;
            return self.err(format!("duplicate label `{n}`"));
        }
        Ok(Label::new(n))
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        self.expect_sym("(")?;
        let mut out = Vec::new();
        if !self.is_sym(")") {
            loop {
                out.push(self.expr()?);
                if !self.is_sym(",") {
                    break;
                }
                self.bump();
            }
        }
        self.expect_sym(")")?;
        Ok(out)
    }

    fn opt_semi(&mut self) {
        if self.is_sym(";") {
            self.bump();
        }
    }

    fn block(&mut self) -> PResult<Cmd> {
        self.expect_sym("{")?;
        let mut out = Vec::new();
        while !self.is_sym("}") {
            if *self.peek() == Tok::Eof {
                return self.err("unterminated block");
            }
            out.push(self.stmt()?);
        }
        self.bump();
        Ok(Cmd::new(out))
    }

    fn directive(&mut self) -> PResult<Directive> {
        let kw = match self.peek().clone() {
            Tok::Name(n) => n,
            _ => return self.err(format!("expected a directive, found {}", self.describe())),
        };
        self.bump();
        match kw.as_str() {
            "bt" => Ok(Directive::Bt),
            "step" => Ok(Directive::Step),
            "branch" => {
                self.expect_sym("(")?;
                let label = Label::new(self.name()?);
                self.expect_sym(",")?;
                let taken = match self.value()? {
                    Value::Bool(b) => b,
                    _ => return self.err("expected `true` or `false`"),
                };
                self.expect_sym(")")?;
                Ok(Directive::Branch { label, taken })
            }
            "load" => {
                self.expect_sym("(")?;
                let label = Label::new(self.name()?);
                self.expect_sym(",")?;
                let index = self.usize_lit()?;
                self.expect_sym(")")?;
                Ok(Directive::Load { label, index })
            }
            other => {
                self.pos -= 1;
                self.err(format!("unknown directive `{other}`"))
            }
        }
    }

    fn attacker_only(&self, what: &str) -> PResult<()> {
        if self.attacker && !self.in_spec {
            Ok(())
        } else if self.in_spec {
            self.err(format!("`{what}` is not allowed inside a spec block"))
        } else {
            self.err(format!("`{what}` is only allowed in attacker programs"))
        }
    }

    fn stmt(&mut self) -> PResult<Instr> {
        let kw = match self.peek().clone() {
            Tok::Name(n) => n,
            _ => return self.err(format!("expected a statement, found {}", self.describe())),
        };
        let instr = match kw.as_str() {
            "skip" => {
                self.bump();
                Instr::Skip
            }
            "fence" => {
                self.bump();
                Instr::Fence
            }
            "load" => {
                self.bump();
                let dst = self.register()?;
                self.expect_sym("<-")?;
                let addr = self.expr()?;
                let label = self.label()?;
                Instr::Load { label, dst, addr }
            }
            "store" => {
                self.bump();
                let addr = self.expr()?;
                self.expect_sym("->")?;
                let value = self.expr()?;
                Instr::Store { addr, value }
            }
            "call" => {
                self.bump();
                let target = self.unary()?;
                let args = self.args()?;
                Instr::Call { target, args }
            }
            "syscall" => {
                self.bump();
                let name = SyscallName::new(self.name()?);
                let args = self.args()?;
                Instr::Syscall { name, args }
            }
            "if" => {
                self.bump();
                let cond = self.expr()?;
                let label = self.label()?;
                let then = self.block()?;
                let els = if self.is_kw("else") {
                    self.bump();
                    self.block()?
                } else {
                    Cmd::nil()
                };
                self.opt_semi();
                return Ok(Instr::If { label, cond, then, els });
            }
            "while" => {
                self.bump();
                let cond = self.expr()?;
                let label = self.label()?;
                let body = self.block()?;
                self.opt_semi();
                return Ok(Instr::While { label, cond, body });
            }
            "poison" => {
                self.attacker_only("poison")?;
                self.bump();
                Instr::Poison(self.directive()?)
            }
            "spec" => {
                self.attacker_only("spec")?;
                self.bump();
                self.in_spec = true;
                let body = self.block();
                self.in_spec = false;
                let body = body?;
                self.opt_semi();
                return Ok(Instr::Spec(body));
            }
            _ => {
                let r = self.register()?;
                self.expect_sym(":=")?;
                if self.is_kw("observe") {
                    self.attacker_only("observe")?;
                    self.bump();
                    Instr::Observe(r)
                } else {
                    Instr::Assign(r, self.expr()?)
                }
            }
        };
        self.expect_sym(";")?;
        Ok(instr)
    }
}

struct Labeler {
    prefix: &'static str,
    next: usize,
    used: BTreeSet<String>,
}

impl Labeler {
    fn fix(&mut self, l: &Label) -> Label {
        if !l.as_str().is_empty() {
            return l.clone();
        }
        loop {
            self.next += 1;
            let cand = format!("{}{}", self.prefix, self.next);
            if self.used.insert(cand.clone()) {
                return Label::new(cand);
            }
        }
    }

    fn cmd(&mut self, c: &Cmd) -> Cmd {
        Cmd::new(
            c.instrs()
                .iter()
                .map(|i| match i {
                    Instr::Load { label, dst, addr } => Instr::Load {
                        label: self.fix(label),
                        dst: dst.clone(),
                        addr: addr.clone(),
                    },
                    Instr::If { label, cond, then, els } => {
                        let label = self.fix(label);
                        Instr::If { label, cond: cond.clone(), then: self.cmd(then), els: self.cmd(els) }
                    }
                    Instr::While { label, cond, body } => {
                        let label = self.fix(label);
                        Instr::While { label, cond: cond.clone(), body: self.cmd(body) }
                    }
                    Instr::Spec(b) => Instr::Spec(self.cmd(b)),
                    other => other.clone(),
                })
                .collect(),
        )
    }
}

/// Names following `array` or `proc`: the identifiers of the system.
fn declared_names(toks: &[Token]) -> BTreeSet<String> {
    toks.windows(2)
        .filter_map(|w| match (&w[0].tok, &w[1].tok) {
            (Tok::Name(k), Tok::Name(n)) if k == "array" || k == "proc" => Some(n.clone()),
            _ => None,
        })
        .collect()
}

enum Item {
    Array { space: Space, name: String, init: Vec<Value> },
    Proc { space: Space, name: String, body: Cmd },
    Syscall { name: String, arity: usize, caps: Vec<String>, body: Cmd },
}

pub fn parse_system(src: &str) -> Result<System, ParseError> {
    let toks = lex(src)?;
    let objects = declared_names(&toks);
    let mut p = Parser::new(toks, &objects, false);
    p.expect_kw("system")?;
    p.expect_sym("{")?;
    let mut items = Vec::new();
    let mut space: Option<(usize, usize)> = None;
    let mut seen = BTreeSet::new();
    let mut seen_syscalls = BTreeSet::new();
    while !p.is_sym("}") {
        if p.is_kw("space") {
            p.bump();
            p.expect_kw("user")?;
            let ku = p.usize_lit()?;
            p.expect_kw("kernel")?;
            let kk = p.usize_lit()?;
            p.expect_sym(";")?;
            if space.replace((ku, kk)).is_some() {
                return p.err("duplicate space declaration");
            }
            continue;
        }
        if p.is_kw("syscall") {
            p.bump();
            let name = p.name()?;
            if !seen_syscalls.insert(name.clone()) {
                p.pos -= 1;
                return p.err(format!("duplicate system call `{name}`"));
            }
            p.expect_sym("(")?;
            let mut arity = 0;
            while !p.is_sym(")") {
                if arity > 0 {
                    p.expect_sym(",")?;
                }
                let param = p.name()?;
                arity += 1;
                if param != format!("x{arity}") {
                    p.pos -= 1;
                    return p.err(format!("parameter {arity} must be named `x{arity}`"));
                }
            }
            p.bump();
            p.expect_kw("caps")?;
            p.expect_sym("{")?;
            let mut caps = Vec::new();
            while !p.is_sym("}") {
                if !caps.is_empty() {
                    p.expect_sym(",")?;
                }
                caps.push(p.name()?);
            }
            p.bump();
            let body = p.block()?;
            p.opt_semi();
            items.push(Item::Syscall { name, arity, caps, body });
            continue;
        }
        let sp = match p.peek() {
            Tok::Name(n) if n == "user" => Space::User,
            Tok::Name(n) if n == "kernel" => Space::Kernel,
            Tok::Eof => return p.err("unterminated system"),
            _ => return p.err(format!("expected a declaration, found {}", p.describe())),
        };
        p.bump();
        let is_array = p.is_kw("array");
        if !is_array && !p.is_kw("proc") {
            return p.err(format!("expected `array` or `proc`, found {}", p.describe()));
        }
        p.bump();
        let name = p.name()?;
        if !seen.insert(name.clone()) {
            p.pos -= 1;
            return p.err(format!("duplicate identifier `{name}`"));
        }
        if is_array {
            p.expect_sym("[")?;
            let size = p.usize_lit()?;
            p.expect_sym("]")?;
            let init = if p.is_sym("=") {
                p.bump();
                p.expect_sym("[")?;
                let mut vals = Vec::new();
                while !p.is_sym("]") {
                    if !vals.is_empty() {
                        p.expect_sym(",")?;
                    }
                    vals.push(p.value()?);
                }
                if vals.len() != size {
                    return p.err(format!("array `{name}` has size {size} but {} initial values", vals.len()));
                }
                p.bump();
                vals
            } else {
                vec![Value::Null; size]
            };
            p.expect_sym(";")?;
            items.push(Item::Array { space: sp, name, init });
        } else {
            p.expect_sym("(")?;
            p.expect_sym(")")?;
            let body = p.block()?;
            p.opt_semi();
            items.push(Item::Proc { space: sp, name, body });
        }
    }
    p.bump();
    if *p.peek() != Tok::Eof {
        return p.err(format!("unexpected {} after the system", p.describe()));
    }
    let Some((ku, kk)) = space else {
        return p.err("missing `space user N kernel M;` declaration");
    };
    let mut labeler = Labeler { prefix: "l", next: 0, used: p.explicit.clone() };
    let mut sys = System::new(ku, kk);
    for item in items {
        match item {
            Item::Array { space, name, init } => {
                sys.add_array(&name, space, init);
            }
            Item::Proc { space, name, body } => {
                let body = labeler.cmd(&body);
                sys.add_proc(&name, space, body);
            }
            Item::Syscall { name, arity, caps, body } => {
                let body = labeler.cmd(&body);
                let caps: Vec<&str> = caps.iter().map(|s| s.as_str()).collect();
                sys.add_syscall(&name, arity, &caps, body);
            }
        }
    }
    Ok(sys)
}

fn parse_program(src: &str, sys: &System, attacker: bool) -> Result<Cmd, ParseError> {
    let toks = lex(src)?;
    let objects: BTreeSet<String> = sys.objects().iter().map(|o| o.name.to_string()).collect();
    let mut p = Parser::new(toks, &objects, attacker);
    let mut out = Vec::new();
    while *p.peek() != Tok::Eof {
        out.push(p.stmt()?);
    }
    let mut used = p.explicit.clone();
    for (_, c) in sys.commands() {
        used.extend(c.labels().into_iter().map(|l| l.to_string()));
    }
    let mut labeler = Labeler { prefix: "a", next: 0, used };
    let cmd = labeler.cmd(&Cmd::new(out));
    if let Some(v) = label_check_with(sys, &[("attacker".to_string(), &cmd)]).into_iter().next() {
        return Err(ParseError { line: 1, col: 1, msg: v.to_string() });
    }
    Ok(cmd)
}

/// Parses an attacker program against `sys`.
pub fn parse_attacker(src: &str, sys: &System) -> Result<Cmd, ParseError> {
    parse_program(src, sys, true)
}

/// Parses a plain command (no attacker instructions) against `sys`.
pub fn parse_cmd(src: &str, sys: &System) -> Result<Cmd, ParseError> {
    parse_program(src, sys, false)
}

/// Parses `branch(l1,true); load(l2,0); bt; step`.
pub fn parse_directives(src: &str) -> Result<Vec<Directive>, ParseError> {
    let toks = lex(src)?;
    let empty = BTreeSet::new();
    let mut p = Parser::new(toks, &empty, false);
    let mut out = Vec::new();
    while *p.peek() != Tok::Eof {
        out.push(p.directive()?);
        if *p.peek() != Tok::Eof {
            p.expect_sym(";")?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::print;

    const SRC: &str = "system {
        user array a[2] = [1, -2];
        kernel array k[1];
        kernel proc f() { skip; }
        syscall s(x1) caps {k} {
            load y <- k;
            if x1 < 3 { ret := 1; } else { ret := 2; }
        }
        space user 4 kernel 4;
    }";

    #[test]
    fn parses_and_labels() {
        let sys = parse_system(SRC).unwrap();
        let body = &sys.syscalls[&SyscallName::new("s")].body;
        let labels: Vec<String> = body.labels().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, vec!["l1", "l2"]);
        assert_eq!(sys.kappa_user, 4);
        assert_eq!(sys.store.array(&"a".into()).unwrap(), &[Value::Int(1), Value::Int(-2)]);
        let again = parse_system(&print::system(&sys)).unwrap();
        assert_eq!(again, sys);
    }

    #[test]
    fn duplicate_explicit_label_is_rejected() {
        let src = "system { user array a[1]; syscall s() caps {} {
            load x <- a @l; load y <- a @l; } space user 1 kernel 0; }";
        let e = parse_system(src).unwrap_err();
        assert!(e.msg.contains("duplicate label"), "{e}");
        assert_eq!(e.line, 2);
    }

    #[test]
    fn auto_labels_avoid_explicit_ones() {
        let src = "system { user array a[1]; syscall s() caps {} {
            load x <- a @l1; load y <- a; } space user 1 kernel 0; }";
        let sys = parse_system(src).unwrap();
        let labels: Vec<String> =
            sys.syscalls[&SyscallName::new("s")].body.labels().iter().map(|l| l.to_string()).collect();
        assert_eq!(labels, vec!["l1", "l2"]);
    }

    #[test]
    fn attacker_forms() {
        let sys = parse_system(SRC).unwrap();
        let c = parse_attacker("poison branch(g, true); spec { if x1 @g { syscall s(a); } } x := observe;", &sys)
            .unwrap();
        assert!(matches!(c.instrs()[0], Instr::Poison(Directive::Branch { taken: true, .. })));
        assert!(matches!(c.instrs()[1], Instr::Spec(_)));
        assert!(matches!(c.instrs()[2], Instr::Observe(_)));
        let only = parse_attacker("x := observe;", &sys).unwrap();
        assert_eq!(only.len(), 1);
        assert!(parse_attacker("spec { spec { skip; } }", &sys).is_err());
        assert!(parse_cmd("x := observe;", &sys).is_err());
    }

    #[test]
    fn directives_round_trip() {
        let ds = parse_directives("branch(l1,true); load(l2,0); bt; step").unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(print::directives(&ds), "branch(l1,true); load(l2,0); bt; step");
        assert!(parse_directives("jump(l1)").is_err());
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_system("system {\n  user array a[2] = [1];\n space user 2 kernel 0; }").unwrap_err();
        assert_eq!(e.line, 2);
        let e = parse_system("system { user proc f() { x := ; } space user 1 kernel 0; }").unwrap_err();
        assert!(e.msg.contains("expected a value"), "{e}");
    }

    #[test]
    fn expression_precedence() {
        let sys = parse_system(SRC).unwrap();
        let c = parse_cmd("r := 1 + 2 * 3 == 7 && !false;", &sys).unwrap();
        let Instr::Assign(_, e) = &c.instrs()[0] else { panic!() };
        assert_eq!(print::expr(e), "(((1 + (2 * 3)) == 7) && !false)");
        let c = parse_cmd("r := a - -3;", &sys).unwrap();
        let Instr::Assign(_, e) = &c.instrs()[0] else { panic!() };
        assert_eq!(print::expr(e), "(a - -3)");
    }
}
