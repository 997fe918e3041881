//! Abstract syntax, values and pure expression evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::StructuralError;
use crate::layout::Layout;

macro_rules! name_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(Arc<str>);

        impl $name {
            pub fn new(s: impl AsRef<str>) -> Self {
                $name(Arc::from(s.as_ref()))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name::new(s)
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(Arc::from(s))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

name_type!(
    /// Array or procedure identifier.
    Ident
);
name_type!(
    /// Register name.
    Reg
);
name_type!(
    /// Label attached to loads and branches; directives refer to it.
    Label
);
name_type!(
    /// System call name.
    SyscallName
);

/// Number of argument registers `x1..x8`.
pub const ARG_REGS: usize = 8;

impl Reg {
    /// The designated return register.
    pub fn ret() -> Reg {
        Reg::new("ret")
    }

    /// Argument register `x{i}`, 1-based.
    pub fn arg(i: usize) -> Reg {
        debug_assert!((1..=ARG_REGS).contains(&i));
        Reg::new(format!("x{i}"))
    }
}

/// Microarchitectural prediction chosen by the attacker.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Directive {
    Branch { label: Label, taken: bool },
    Load { label: Label, index: usize },
    Bt,
    Step,
}

/// Side-channel observation emitted by one speculative step.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    None,
    Branch { taken: bool },
    Mem { addr: usize },
    Jump { addr: usize },
    Bt { misspec: bool },
}

impl fmt::Display for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::None => f.write_str("none"),
            Observation::Branch { taken } => write!(f, "branch {taken}"),
            Observation::Mem { addr } => write!(f, "mem {addr}"),
            Observation::Jump { addr } => write!(f, "jmp {addr}"),
            Observation::Bt { misspec } => write!(f, "bt {misspec}"),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
#[derive(Default)]
pub enum Value {
    Int(i64),
    Bool(bool),
    #[default]
    Null,
    /// An observation read back by the attacker.
    Obs(Observation),
}


impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => f.write_str("null"),
            Value::Obs(o) => write!(f, "<{o}>"),
        }
    }
}

/// Result of casting a value to an address.
///
/// `Invalid` lies outside every layout's footprint, so accesses through it
/// always take the error rules.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Address {
    At(usize),
    Invalid,
}

impl Address {
    pub fn get(self) -> Option<usize> {
        match self {
            Address::At(a) => Some(a),
            Address::Invalid => None,
        }
    }
}

/// Casts a value to an address of a space holding `total` addresses.
pub fn to_addr(v: &Value, total: usize) -> Address {
    match v {
        Value::Int(n) if *n >= 0 && (*n as u64) < total as u64 => Address::At(*n as usize),
        _ => Address::Invalid,
    }
}

pub fn to_bool(v: &Value) -> bool {
    match v {
        Value::Bool(b) => *b,
        Value::Int(n) => *n != 0,
        Value::Null => false,
        Value::Obs(_) => true,
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Eq,
    Neq,
    Lt,
    Le,
    And,
    Or,
    Not,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Not => 1,
            _ => 2,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Eq => "==",
            Op::Neq => "!=",
            Op::Lt => "<",
            Op::Le => "<=",
            Op::And => "&&",
            Op::Or => "||",
            Op::Not => "!",
        }
    }
}

/// Total interpretation of the operator set.
///
/// Arithmetic on a non-integer operand yields `Null`; `lt`/`le` on
/// non-integers yield `false`; `eq`/`neq` compare structurally; the Boolean
/// connectives coerce through [`to_bool`].
pub fn apply_op(op: Op, args: &[Value]) -> Result<Value, StructuralError> {
    if args.len() != op.arity() {
        return Err(StructuralError::Arity {
            op: op.symbol(),
            expected: op.arity(),
            found: args.len(),
        });
    }
    let ints = || match (&args[0], &args[1]) {
        (Value::Int(a), Value::Int(b)) => Some((*a, *b)),
        _ => None,
    };
    Ok(match op {
        Op::Add => ints().map_or(Value::Null, |(a, b)| Value::Int(a.wrapping_add(b))),
        Op::Sub => ints().map_or(Value::Null, |(a, b)| Value::Int(a.wrapping_sub(b))),
        Op::Mul => ints().map_or(Value::Null, |(a, b)| Value::Int(a.wrapping_mul(b))),
        Op::Eq => Value::Bool(args[0] == args[1]),
        Op::Neq => Value::Bool(args[0] != args[1]),
        Op::Lt => Value::Bool(ints().is_some_and(|(a, b)| a < b)),
        Op::Le => Value::Bool(ints().is_some_and(|(a, b)| a <= b)),
        Op::And => Value::Bool(to_bool(&args[0]) && to_bool(&args[1])),
        Op::Or => Value::Bool(to_bool(&args[0]) || to_bool(&args[1])),
        Op::Not => Value::Bool(!to_bool(&args[0])),
    })
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Expr {
    Const(Value),
    Reg(Reg),
    /// Array or procedure identifier; evaluates to its base address.
    Id(Ident),
    Op(Op, Vec<Expr>),
}

impl Expr {
    pub fn int(n: i64) -> Expr {
        Expr::Const(Value::Int(n))
    }

    pub fn reg(r: &str) -> Expr {
        Expr::Reg(Reg::new(r))
    }

    pub fn id(i: &str) -> Expr {
        Expr::Id(Ident::new(i))
    }

    pub fn bin(op: Op, l: Expr, r: Expr) -> Expr {
        Expr::Op(op, vec![l, r])
    }

    pub fn collect_ids(&self, out: &mut BTreeSet<Ident>) {
        match self {
            Expr::Id(i) => {
                out.insert(i.clone());
            }
            Expr::Op(_, args) => args.iter().for_each(|a| a.collect_ids(out)),
            Expr::Const(_) | Expr::Reg(_) => {}
        }
    }
}

/// Register file. Unset registers read as `Null`.
#[derive(Clone, Default, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RegMap(BTreeMap<Reg, Value>);

impl RegMap {
    /// The initial map, sending every register to `Null`.
    pub fn new() -> Self {
        RegMap(BTreeMap::new())
    }

    pub fn get(&self, r: &Reg) -> Value {
        self.0.get(r).cloned().unwrap_or(Value::Null)
    }

    pub fn set(&mut self, r: Reg, v: Value) {
        if v == Value::Null {
            self.0.remove(&r);
        } else {
            self.0.insert(r, v);
        }
    }

    pub fn with(mut self, r: &str, v: Value) -> Self {
        self.set(Reg::new(r), v);
        self
    }

    /// `ρ0[x1..xn ↦ args]`.
    pub fn with_args(args: impl IntoIterator<Item = Value>) -> Self {
        let mut m = RegMap::new();
        for (i, v) in args.into_iter().enumerate() {
            m.set(Reg::arg(i + 1), v);
        }
        m
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Reg, &Value)> {
        self.0.iter()
    }
}

pub fn eval_expr(e: &Expr, regs: &RegMap, layout: &Layout) -> Result<Value, StructuralError> {
    match e {
        Expr::Const(v) => Ok(v.clone()),
        Expr::Reg(r) => Ok(regs.get(r)),
        Expr::Id(id) => layout
            .base(id)
            .map(|a| Value::Int(a as i64))
            .ok_or_else(|| StructuralError::UnknownIdent(id.clone())),
        Expr::Op(op, args) => {
            let vals = args
                .iter()
                .map(|a| eval_expr(a, regs, layout))
                .collect::<Result<Vec<_>, _>>()?;
            apply_op(*op, &vals)
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Instr {
    Skip,
    Assign(Reg, Expr),
    Load { label: Label, dst: Reg, addr: Expr },
    Store { addr: Expr, value: Expr },
    Call { target: Expr, args: Vec<Expr> },
    Syscall { name: SyscallName, args: Vec<Expr> },
    If { label: Label, cond: Expr, then: Cmd, els: Cmd },
    While { label: Label, cond: Expr, body: Cmd },
    Fence,
    /// Attacker only: run victim code under the speculative semantics.
    Spec(Cmd),
    /// Attacker only: push a directive.
    Poison(Directive),
    /// Attacker only: pop the newest observation into a register.
    Observe(Reg),
}

impl Instr {
    pub fn is_attacker_only(&self) -> bool {
        matches!(self, Instr::Spec(_) | Instr::Poison(_) | Instr::Observe(_))
    }

    pub fn label(&self) -> Option<&Label> {
        match self {
            Instr::Load { label, .. } | Instr::If { label, .. } | Instr::While { label, .. } => {
                Some(label)
            }
            _ => None,
        }
    }
}

/// A finite sequence of instructions. Cheap to clone.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Cmd(Arc<[Instr]>);

/// Attacker commands share the representation of victim commands; the
/// attacker-only instructions are rejected in victim positions by validation.
pub type SpCmd = Cmd;

impl Cmd {
    pub fn new(instrs: Vec<Instr>) -> Self {
        Cmd(Arc::from(instrs))
    }

    pub fn nil() -> Self {
        Cmd::new(Vec::new())
    }

    pub fn instrs(&self) -> &[Instr] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn same(&self, other: &Cmd) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Visits every instruction, including those nested in branches, loop
    /// bodies and spec blocks, in preorder.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Instr)) {
        for i in self.0.iter() {
            f(i);
            match i {
                Instr::If { then, els, .. } => {
                    then.walk(f);
                    els.walk(f);
                }
                Instr::While { body, .. } => body.walk(f),
                Instr::Spec(c) => c.walk(f),
                _ => {}
            }
        }
    }

    /// True when no attacker-only instruction occurs anywhere.
    pub fn is_victim_code(&self) -> bool {
        let mut ok = true;
        self.walk(&mut |i| ok &= !i.is_attacker_only());
        ok
    }

    pub fn labels(&self) -> Vec<Label> {
        let mut out = Vec::new();
        self.walk(&mut |i| {
            if let Some(l) = i.label() {
                out.push(l.clone());
            }
        });
        out
    }

    pub fn syscalls(&self) -> BTreeSet<SyscallName> {
        let mut out = BTreeSet::new();
        self.walk(&mut |i| {
            if let Instr::Syscall { name, .. } = i {
                out.insert(name.clone());
            }
        });
        out
    }
}

impl fmt::Debug for Cmd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl From<Vec<Instr>> for Cmd {
    fn from(v: Vec<Instr>) -> Self {
        Cmd::new(v)
    }
}

fn instr_ids(i: &Instr, out: &mut BTreeSet<Ident>) {
    match i {
        Instr::Skip | Instr::Fence | Instr::Poison(_) | Instr::Observe(_) => {}
        Instr::Assign(_, e) => e.collect_ids(out),
        Instr::Load { addr, .. } => addr.collect_ids(out),
        Instr::Store { addr, value } => {
            addr.collect_ids(out);
            value.collect_ids(out);
        }
        Instr::Call { target, args } => {
            target.collect_ids(out);
            args.iter().for_each(|a| a.collect_ids(out));
        }
        Instr::Syscall { args, .. } => args.iter().for_each(|a| a.collect_ids(out)),
        Instr::If { cond, .. } | Instr::While { cond, .. } => cond.collect_ids(out),
        Instr::Spec(_) => {}
    }
}

/// Identifiers literally occurring in `c`.
pub fn ids_of(c: &Cmd) -> BTreeSet<Ident> {
    let mut out = BTreeSet::new();
    c.walk(&mut |i| instr_ids(i, &mut out));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::Layout;
    use proptest::prelude::*;

    fn lay(pairs: &[(&str, usize)]) -> Layout {
        Layout::from_pairs(pairs.iter().map(|(i, a)| (Ident::new(i), *a)))
    }

    #[test]
    fn eval_examples() {
        let l = lay(&[("f", 12)]);
        let r = RegMap::new();
        assert_eq!(eval_expr(&Expr::int(7), &r, &l).unwrap(), Value::Int(7));
        assert_eq!(eval_expr(&Expr::id("f"), &r, &l).unwrap(), Value::Int(12));
        let e = Expr::bin(Op::Add, Expr::id("f"), Expr::int(1));
        assert_eq!(eval_expr(&e, &r, &l).unwrap(), Value::Int(13));
        assert!(matches!(
            eval_expr(&Expr::id("g"), &r, &l),
            Err(StructuralError::UnknownIdent(_))
        ));
    }

    #[test]
    fn casts() {
        assert_eq!(to_addr(&Value::Int(5), 16), Address::At(5));
        assert_eq!(to_addr(&Value::Int(-3), 16), Address::Invalid);
        assert_eq!(to_addr(&Value::Int(16), 16), Address::Invalid);
        assert_eq!(to_addr(&Value::Bool(true), 16), Address::Invalid);
        assert_eq!(to_addr(&Value::Null, 16), Address::Invalid);
        assert!(!to_bool(&Value::Bool(false)));
        assert!(to_bool(&Value::Int(3)));
        assert!(!to_bool(&Value::Int(0)));
        assert!(!to_bool(&Value::Null));
        assert!(to_bool(&Value::Obs(Observation::None)));
    }

    #[test]
    fn operators() {
        assert_eq!(
            apply_op(Op::Eq, &[Value::Int(4), Value::Int(4)]).unwrap(),
            Value::Bool(true)
        );
        assert_eq!(
            apply_op(Op::Add, &[Value::Int(2), Value::Int(3)]).unwrap(),
            Value::Int(5)
        );
        assert_eq!(
            apply_op(Op::Add, &[Value::Null, Value::Int(1)]).unwrap(),
            Value::Null
        );
        assert_eq!(
            apply_op(Op::Lt, &[Value::Null, Value::Int(1)]).unwrap(),
            Value::Bool(false)
        );
        assert_eq!(
            apply_op(Op::Eq, &[Value::Null, Value::Null]).unwrap(),
            Value::Bool(true)
        );
        assert!(apply_op(Op::Not, &[Value::Null, Value::Null]).is_err());
    }

    #[test]
    fn ids_examples() {
        assert!(ids_of(&Cmd::nil()).is_empty());
        let c = Cmd::new(vec![Instr::Store {
            addr: Expr::id("a"),
            value: Expr::id("f"),
        }]);
        assert_eq!(ids_of(&c).len(), 2);
        let nested = Cmd::new(vec![Instr::If {
            label: Label::new("l1"),
            cond: Expr::int(0),
            then: Cmd::new(vec![Instr::Load {
                label: Label::new("l2"),
                dst: Reg::new("x"),
                addr: Expr::id("a"),
            }]),
            els: Cmd::new(vec![Instr::Call {
                target: Expr::id("f"),
                args: vec![],
            }]),
        }]);
        let ids: Vec<_> = ids_of(&nested).into_iter().map(|i| i.to_string()).collect();
        assert_eq!(ids, vec!["a", "f"]);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<i64>().prop_map(Value::Int),
            (-40i64..40).prop_map(Value::Int),
            any::<bool>().prop_map(Value::Bool),
            Just(Value::Null),
            Just(Value::Obs(Observation::Mem { addr: 3 })),
        ]
    }

    proptest! {
        #[test]
        fn to_addr_is_identity_exactly_in_range(v in arb_value(), total in 1usize..64) {
            let a = to_addr(&v, total);
            match v {
                Value::Int(n) if n >= 0 && (n as usize) < total => prop_assert_eq!(a, Address::At(n as usize)),
                _ => prop_assert_eq!(a, Address::Invalid),
            }
        }

        #[test]
        fn apply_op_is_total(a in arb_value(), b in arb_value()) {
            for op in [Op::Add, Op::Sub, Op::Mul, Op::Eq, Op::Neq, Op::Lt, Op::Le, Op::And, Op::Or] {
                prop_assert!(apply_op(op, &[a.clone(), b.clone()]).is_ok());
            }
            prop_assert!(apply_op(Op::Not, &[a]).is_ok());
        }

        #[test]
        fn user_expressions_ignore_kernel_placement(k1 in 8usize..16, k2 in 8usize..16, x in -5i64..5) {
            let e = Expr::bin(Op::Add, Expr::id("u"), Expr::bin(Op::Mul, Expr::reg("r"), Expr::int(x)));
            let regs = RegMap::new().with("r", Value::Int(2));
            let l1 = lay(&[("u", 1), ("k", k1)]);
            let l2 = lay(&[("u", 1), ("k", k2)]);
            prop_assert_eq!(eval_expr(&e, &regs, &l1).unwrap(), eval_expr(&e, &regs, &l2).unwrap());
        }
    }
}
