//! Random systems and programs for property tests and fuzzing harnesses.
//!
//! Loops always follow the pattern `c := 0; while c < n { ..; c := c + 1; }`
//! with a counter the body cannot touch, and procedures only call procedures
//! declared before them, so generated code terminates unless it recurses
//! through a system call.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lang::{Cmd, Expr, Ident, Instr, Label, Op, Reg, SyscallName, Value};
use crate::system::{refs, Space, System};

const OPS: [Op; 9] = [Op::Add, Op::Sub, Op::Mul, Op::Eq, Op::Neq, Op::Lt, Op::Le, Op::And, Op::Or];

struct Scope {
    regs: Vec<Reg>,
    arrays: Vec<(Ident, usize)>,
    procs: Vec<Ident>,
    syscalls: Vec<(SyscallName, usize)>,
    /// Integer literals worth passing around, such as kernel addresses.
    interesting: Vec<i64>,
}

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    prefix: &'static str,
    labels: usize,
    counters: usize,
}

impl<'r, R: Rng> Gen<'r, R> {
    fn label(&mut self) -> Label {
        self.labels += 1;
        Label::new(format!("{}{}", self.prefix, self.labels))
    }

    fn value(&mut self) -> Value {
        match self.rng.gen_range(0..10) {
            0 => Value::Null,
            1 => Value::Bool(self.rng.gen()),
            _ => Value::Int(self.rng.gen_range(-3..10)),
        }
    }

    fn leaf(&mut self, sc: &Scope) -> Expr {
        match self.rng.gen_range(0..10) {
            0..=3 if !sc.regs.is_empty() => Expr::Reg(sc.regs.choose(self.rng).unwrap().clone()),
            4 | 5 if !sc.arrays.is_empty() => Expr::Id(sc.arrays.choose(self.rng).unwrap().0.clone()),
            6 if !sc.interesting.is_empty() => Expr::int(*sc.interesting.choose(self.rng).unwrap()),
            _ => Expr::Const(self.value()),
        }
    }

    fn expr(&mut self, sc: &Scope, depth: usize) -> Expr {
        if depth == 0 || self.rng.gen_bool(0.5) {
            return self.leaf(sc);
        }
        if self.rng.gen_bool(0.1) {
            return Expr::Op(Op::Not, vec![self.expr(sc, depth - 1)]);
        }
        let op = *OPS.choose(self.rng).unwrap();
        Expr::Op(op, vec![self.expr(sc, depth - 1), self.expr(sc, depth - 1)])
    }

    /// An address expression: usually an array base plus a small offset.
    fn addr(&mut self, sc: &Scope) -> Expr {
        match sc.arrays.choose(self.rng) {
            Some((id, size)) if self.rng.gen_bool(0.8) => {
                let k = self.rng.gen_range(0..=*size) as i64;
                if k == 0 {
                    Expr::Id(id.clone())
                } else {
                    Expr::bin(Op::Add, Expr::Id(id.clone()), Expr::int(k))
                }
            }
            _ => self.leaf(sc),
        }
    }

    fn args(&mut self, sc: &Scope, n: usize) -> Vec<Expr> {
        (0..n).map(|_| self.leaf(sc)).collect()
    }

    fn dst(&mut self, sc: &Scope) -> Reg {
        sc.regs.choose(self.rng).cloned().unwrap_or_else(Reg::ret)
    }

    fn block(&mut self, sc: &Scope, depth: usize, max: usize) -> Cmd {
        let n = self.rng.gen_range(0..=max);
        let mut out = Vec::new();
        for _ in 0..n {
            self.stmt(sc, depth, &mut out);
        }
        Cmd::new(out)
    }

    fn stmt(&mut self, sc: &Scope, depth: usize, out: &mut Vec<Instr>) {
        let nested = depth > 0;
        match self.rng.gen_range(0..20) {
            0 => out.push(Instr::Skip),
            1 => out.push(Instr::Fence),
            2..=4 => {
                let r = self.dst(sc);
                out.push(Instr::Assign(r, self.expr(sc, 2)));
            }
            5..=7 => {
                let label = self.label();
                let dst = self.dst(sc);
                out.push(Instr::Load { label, dst, addr: self.addr(sc) });
            }
            8..=10 => {
                let addr = self.addr(sc);
                out.push(Instr::Store { addr, value: self.expr(sc, 1) });
            }
            11 | 12 if !sc.procs.is_empty() => {
                let f = sc.procs.choose(self.rng).unwrap().clone();
                let n = self.rng.gen_range(0..=2);
                let target = if self.rng.gen_bool(0.85) { Expr::Id(f) } else { self.leaf(sc) };
                out.push(Instr::Call { target, args: self.args(sc, n) });
            }
            13 | 14 if !sc.syscalls.is_empty() => {
                let (name, arity) = sc.syscalls.choose(self.rng).unwrap().clone();
                out.push(Instr::Syscall { name, args: self.args(sc, arity) });
            }
            15 | 16 if nested => {
                let label = self.label();
                let cond = self.expr(sc, 2);
                let then = self.block(sc, depth - 1, 3);
                let els = self.block(sc, depth - 1, 2);
                out.push(Instr::If { label, cond, then, els });
            }
            17 if nested => {
                self.counters += 1;
                let c = Reg::new(format!("c{}", self.counters));
                let bound = self.rng.gen_range(0..4);
                out.push(Instr::Assign(c.clone(), Expr::int(0)));
                let label = self.label();
                let mut body = self.block(sc, depth - 1, 3).instrs().to_vec();
                body.push(Instr::Assign(c.clone(), Expr::bin(Op::Add, Expr::Reg(c.clone()), Expr::int(1))));
                out.push(Instr::While {
                    label,
                    cond: Expr::bin(Op::Lt, Expr::Reg(c), Expr::int(bound)),
                    body: Cmd::new(body),
                });
            }
            _ => {
                let r = self.dst(sc);
                out.push(Instr::Assign(r, self.leaf(sc)));
            }
        }
    }
}

fn regs(extra: &[&str]) -> Vec<Reg> {
    ["r0", "r1", "r2", "ret"].iter().chain(extra).map(|s| Reg::new(*s)).collect()
}

fn kernel_addresses(sys: &System) -> Vec<i64> {
    (sys.kappa_user..sys.total_addresses()).map(|a| a as i64).collect()
}

/// A valid random system. Labels are `g1`, `g2`, ...; syscall capabilities
/// are exactly the references of the body, sometimes plus one spare kernel
/// identifier.
pub fn random_system(rng: &mut impl Rng) -> System {
    let mut g = Gen { rng, prefix: "g", labels: 0, counters: 0 };
    let mut objs: Vec<(String, Space, Option<Vec<Value>>)> = Vec::new();
    for space in [Space::User, Space::Kernel] {
        let tag = if space == Space::User { "u" } else { "k" };
        let arrays = g.rng.gen_range(if space == Space::Kernel { 1 } else { 0 }..=3);
        for i in 0..arrays {
            let size = g.rng.gen_range(1..=3);
            let init = (0..size).map(|_| g.value()).collect();
            objs.push((format!("{tag}a{i}"), space, Some(init)));
        }
        for i in 0..g.rng.gen_range(0..=2) {
            objs.push((format!("{tag}p{i}"), space, None));
        }
    }
    let size_of = |o: &(String, Space, Option<Vec<Value>>)| o.2.as_ref().map_or(1, |v| v.len());
    let need = |sp: Space| objs.iter().filter(|o| o.1 == sp).map(size_of).sum::<usize>();
    let ku = need(Space::User) + g.rng.gen_range(0..3);
    let kk = need(Space::Kernel) + 1 + g.rng.gen_range(0..4);
    let mut sys = System::new(ku, kk);

    let syscalls: Vec<(SyscallName, usize)> = (0..g.rng.gen_range(1..=3))
        .map(|i| (SyscallName::new(format!("s{i}")), g.rng.gen_range(0..=2)))
        .collect();
    let scope = |sys: &System, space: Space, params: usize| Scope {
        regs: regs(&["x1", "x2"][..params]),
        arrays: sys
            .objects_in(space)
            .filter(|o| o.is_array())
            .map(|o| (o.name.clone(), o.size()))
            .collect(),
        procs: sys.objects_in(space).filter(|o| !o.is_array()).map(|o| o.name.clone()).collect(),
        syscalls: if space == Space::User { syscalls.clone() } else { Vec::new() },
        interesting: Vec::new(),
    };
    for (name, space, init) in objs {
        match init {
            Some(init) => {
                sys.add_array(&name, space, init);
            }
            None => {
                let sc = scope(&sys, space, 2);
                let body = g.block(&sc, 2, 4);
                sys.add_proc(&name, space, body);
            }
        }
    }
    let kernel_ids: Vec<Ident> = sys.objects_in(Space::Kernel).map(|o| o.name.clone()).collect();
    for (name, arity) in &syscalls {
        let sc = scope(&sys, Space::Kernel, *arity);
        let mut body = g.block(&sc, 2, 5).instrs().to_vec();
        if g.rng.gen_bool(0.7) {
            let e = g.expr(&sc, 1);
            body.push(Instr::Assign(Reg::ret(), e));
        }
        let body = Cmd::new(body);
        let mut caps: Vec<Ident> = refs(&sys, &body).map(|r| r.ids.into_iter().collect()).unwrap_or_default();
        if g.rng.gen_bool(0.3) {
            caps.push(kernel_ids.choose(g.rng).unwrap().clone());
        }
        let caps: Vec<&str> = caps.iter().map(|c| c.as_str()).collect();
        sys.add_syscall(name.as_str(), *arity, &caps, body);
    }
    sys
}

/// A random unprivileged program over `sys`: user objects, system calls
/// with small, index-like or kernel-address arguments, whose results are
/// sometimes saved to user memory, labels `u1`, `u2`, ...
pub fn random_user_program(sys: &System, rng: &mut impl Rng, max_stmts: usize) -> Cmd {
    let sc = Scope {
        regs: regs(&[]),
        arrays: sys.objects_in(Space::User).filter(|o| o.is_array()).map(|o| (o.name.clone(), o.size())).collect(),
        procs: sys.objects_in(Space::User).filter(|o| !o.is_array()).map(|o| o.name.clone()).collect(),
        syscalls: sys.syscalls.iter().map(|(n, d)| (n.clone(), d.arity)).collect(),
        interesting: kernel_addresses(sys),
    };
    let mut g = Gen { rng, prefix: "u", labels: 0, counters: 0 };
    let n = g.rng.gen_range(1..=max_stmts.max(1));
    let mut out = Vec::new();
    for _ in 0..n {
        if !sc.syscalls.is_empty() && g.rng.gen_bool(0.35) {
            let (name, arity) = sc.syscalls.choose(g.rng).unwrap().clone();
            let args = (0..arity)
                .map(|_| if g.rng.gen_bool(0.5) { Expr::int(g.rng.gen_range(0..4)) } else { g.leaf(&sc) })
                .collect();
            out.push(Instr::Syscall { name, args });
            if let Some((a, size)) = sc.arrays.choose(g.rng).cloned().filter(|_| g.rng.gen_bool(0.5)) {
                let k = g.rng.gen_range(0..size) as i64;
                let addr = Expr::bin(Op::Add, Expr::Id(a), Expr::int(k));
                out.push(Instr::Store { addr, value: Expr::Reg(Reg::ret()) });
            }
        } else {
            g.stmt(&sc, 2, &mut out);
        }
    }
    Cmd::new(out)
}

/// A random kernel-mode program over every kernel object of `sys`,
/// including ones outside any capability set. Labels `k1`, `k2`, ...
pub fn random_kernel_program(sys: &System, rng: &mut impl Rng, max_stmts: usize) -> Cmd {
    let sc = Scope {
        regs: regs(&["x1"]),
        arrays: sys.objects_in(Space::Kernel).filter(|o| o.is_array()).map(|o| (o.name.clone(), o.size())).collect(),
        procs: sys.objects_in(Space::Kernel).filter(|o| !o.is_array()).map(|o| o.name.clone()).collect(),
        syscalls: Vec::new(),
        interesting: (0..sys.total_addresses() as i64).collect(),
    };
    let mut g = Gen { rng, prefix: "k", labels: 0, counters: 0 };
    let n = g.rng.gen_range(1..=max_stmts.max(1));
    let mut out = Vec::new();
    for _ in 0..n {
        g.stmt(&sc, 2, &mut out);
    }
    Cmd::new(out)
}
