//! Pretty printer. Output is fully parenthesized, carries every label
//! explicitly and parses back to the same tree.

use std::fmt::Write;

use crate::lang::{Cmd, Directive, Expr, Instr, Value};
use crate::system::{Content, ObjKind, System};

pub fn value(v: &Value) -> String {
    match v {
        Value::Int(n) => n.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".to_string(),
        Value::Obs(o) => format!("obs({o})"),
    }
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Const(v) => value(v),
        Expr::Reg(r) => r.to_string(),
        Expr::Id(i) => i.to_string(),
        Expr::Op(op, args) if args.len() == 1 => format!("{}{}", op.symbol(), expr(&args[0])),
        Expr::Op(op, args) => {
            let parts: Vec<String> = args.iter().map(expr).collect();
            format!("({})", parts.join(&format!(" {} ", op.symbol())))
        }
    }
}

fn args(es: &[Expr]) -> String {
    es.iter().map(expr).collect::<Vec<_>>().join(", ")
}

pub fn directive(d: &Directive) -> String {
    match d {
        Directive::Branch { label, taken } => format!("branch({label},{taken})"),
        Directive::Load { label, index } => format!("load({label},{index})"),
        Directive::Bt => "bt".to_string(),
        Directive::Step => "step".to_string(),
    }
}

/// Directive sequence in the command-line syntax, e.g. `branch(l1,true); step`.
pub fn directives(ds: &[Directive]) -> String {
    ds.iter().map(directive).collect::<Vec<_>>().join("; ")
}

/// One-line rendering of an instruction without its nested blocks.
pub fn instr_head(i: &Instr) -> String {
    match i {
        Instr::If { label, cond, .. } => format!("if {} @{label} {{..}}", expr(cond)),
        Instr::While { label, cond, .. } => format!("while {} @{label} {{..}}", expr(cond)),
        Instr::Spec(_) => "spec {..}".to_string(),
        _ => {
            let mut s = String::new();
            instr(&mut s, i, 0);
            s.trim().to_string()
        }
    }
}

fn pad(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn block(out: &mut String, c: &Cmd, depth: usize) {
    if c.is_empty() {
        out.push_str("{}");
        return;
    }
    out.push_str("{\n");
    for i in c.instrs() {
        instr(out, i, depth + 1);
    }
    pad(out, depth);
    out.push('}');
}

fn instr(out: &mut String, i: &Instr, depth: usize) {
    pad(out, depth);
    match i {
        Instr::Skip => out.push_str("skip;"),
        Instr::Fence => out.push_str("fence;"),
        Instr::Assign(r, e) => {
            let _ = write!(out, "{r} := {};", expr(e));
        }
        Instr::Load { label, dst, addr } => {
            let _ = write!(out, "load {dst} <- {} @{label};", expr(addr));
        }
        Instr::Store { addr, value } => {
            let _ = write!(out, "store {} -> {};", expr(addr), expr(value));
        }
        Instr::Call { target, args: a } => {
            let _ = write!(out, "call {}({});", expr(target), args(a));
        }
        Instr::Syscall { name, args: a } => {
            let _ = write!(out, "syscall {name}({});", args(a));
        }
        Instr::If { label, cond, then, els } => {
            let _ = write!(out, "if {} @{label} ", expr(cond));
            block(out, then, depth);
            out.push_str(" else ");
            block(out, els, depth);
        }
        Instr::While { label, cond, body } => {
            let _ = write!(out, "while {} @{label} ", expr(cond));
            block(out, body, depth);
        }
        Instr::Spec(c) => {
            out.push_str("spec ");
            block(out, c, depth);
        }
        Instr::Poison(d) => {
            let _ = write!(out, "poison {};", directive(d));
        }
        Instr::Observe(r) => {
            let _ = write!(out, "{r} := observe;");
        }
    }
    out.push('\n');
}

/// Statements of `c`, one per line, at the given indentation depth.
pub fn cmd(c: &Cmd, depth: usize) -> String {
    let mut out = String::new();
    for i in c.instrs() {
        instr(&mut out, i, depth);
    }
    out
}

pub fn system(sys: &System) -> String {
    let mut out = String::from("system {\n");
    for o in sys.objects() {
        match (o.kind, sys.store.get(&o.name)) {
            (ObjKind::Array { size }, Some(Content::Array(vals))) => {
                let _ = write!(out, "  {} array {}[{size}]", o.space, o.name);
                if vals.iter().any(|v| *v != Value::Null) {
                    let vs: Vec<String> = vals.iter().map(value).collect();
                    let _ = write!(out, " = [{}]", vs.join(", "));
                }
                out.push_str(";\n");
            }
            (_, Some(Content::Proc(body))) => {
                let _ = write!(out, "  {} proc {}() ", o.space, o.name);
                block(&mut out, body, 1);
                out.push('\n');
            }
            _ => {}
        }
    }
    for (name, def) in &sys.syscalls {
        let params: Vec<String> = (1..=def.arity).map(|i| format!("x{i}")).collect();
        let caps: Vec<String> = sys.caps_of(name).iter().map(|c| c.to_string()).collect();
        let _ = write!(out, "  syscall {name}({}) caps {{{}}} ", params.join(", "), caps.join(", "));
        block(&mut out, &def.body, 1);
        out.push('\n');
    }
    let _ = writeln!(out, "  space user {} kernel {};", sys.kappa_user, sys.kappa_kernel);
    out.push_str("}\n");
    out
}
