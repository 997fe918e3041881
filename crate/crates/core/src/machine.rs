//! Frames, modes and the single instruction step shared by the classic,
//! speculative and attacker interpreters.

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::StructuralError;
use crate::lang::{eval_expr, to_addr, to_bool, Address, Cmd, Expr, Instr, Observation, Reg, RegMap, SyscallName, Value, ARG_REGS};
use crate::layout::{place, validate_layout, Cell, Layout, Memory};
use crate::system::{Object, Space, Store, System};

/// Execution mode of a frame. Kernel mode remembers the system call that
/// entered it, which selects the capability set.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    User,
    Kernel(SyscallName),
}

impl Mode {
    pub fn space(&self) -> Space {
        match self {
            Mode::User => Space::User,
            Mode::Kernel(_) => Space::Kernel,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::User => f.write_str("user"),
            Mode::Kernel(s) => write!(f, "kernel[{s}]"),
        }
    }
}

/// The remaining code of a frame: a stack of command suffixes, innermost
/// last. Equality and hashing look only at the instruction stream.
#[derive(Clone, Debug, Default)]
pub struct Code(Vec<(Cmd, usize)>);

impl Code {
    pub fn new(c: Cmd) -> Code {
        let mut k = Code(vec![(c, 0)]);
        k.normalize();
        k
    }

    pub fn nil() -> Code {
        Code(Vec::new())
    }

    fn normalize(&mut self) {
        while let Some((c, pc)) = self.0.last() {
            if *pc >= c.len() {
                self.0.pop();
            } else {
                break;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn peek(&self) -> Option<&Instr> {
        self.0.last().map(|(c, pc)| &c.instrs()[*pc])
    }

    fn current(&self) -> Option<(Cmd, usize)> {
        self.0.last().cloned()
    }

    fn advance(&mut self) {
        if let Some(s) = self.0.last_mut() {
            s.1 += 1;
        }
        self.normalize();
    }

    fn push(&mut self, c: Cmd) {
        if !c.is_empty() {
            self.0.push((c, 0));
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Instr> {
        self.0.iter().rev().flat_map(|(c, pc)| c.instrs()[*pc..].iter())
    }

    pub fn to_cmd(&self) -> Cmd {
        Cmd::new(self.iter().cloned().collect())
    }
}

impl PartialEq for Code {
    fn eq(&self, other: &Self) -> bool {
        self.iter().eq(other.iter())
    }
}

impl Eq for Code {}

impl Hash for Code {
    fn hash<H: Hasher>(&self, state: &mut H) {
        for i in self.iter() {
            i.hash(state);
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Frame {
    pub code: Code,
    pub regs: RegMap,
    pub mode: Mode,
}

impl Frame {
    pub fn new(c: Cmd, regs: RegMap, mode: Mode) -> Frame {
        Frame { code: Code::new(c), regs, mode }
    }
}

/// What the top of a frame stack does next.
pub enum Next<'a> {
    Instr(&'a Instr),
    Pop,
    Terminal,
}

/// `frames` is bottom-first.
pub fn next<'a>(frames: &'a [Frame]) -> Next<'a> {
    match frames.last().and_then(|f| f.code.peek()) {
        Some(i) => Next::Instr(i),
        None if frames.len() > 1 => Next::Pop,
        None => Next::Terminal,
    }
}

/// True when the stack is a run of kernel frames, all under the same system
/// call, on top of a run of user frames.
pub fn stratified(frames: &[Frame]) -> bool {
    let mut kernel: Option<&SyscallName> = None;
    for f in frames {
        match (&f.mode, kernel) {
            (Mode::User, None) => {}
            (Mode::User, Some(_)) => return false,
            (Mode::Kernel(s), None) => kernel = Some(s),
            (Mode::Kernel(s), Some(k)) if s == k => {}
            _ => return false,
        }
    }
    true
}

/// A system and layout with an address-to-object index.
pub struct World<'a> {
    pub sys: &'a System,
    pub layout: &'a Layout,
    owner: Vec<Option<usize>>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Target {
    Data,
    Code,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Access {
    Ok(usize),
    Error,
    Unsafe(usize),
}

impl<'a> World<'a> {
    pub fn new(sys: &'a System, layout: &'a Layout) -> Result<World<'a>, StructuralError> {
        let violations = validate_layout(layout, sys);
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(StructuralError::Layout(msg.join("; ")));
        }
        let mut owner = vec![None; sys.total_addresses()];
        for (k, o) in sys.objects().iter().enumerate() {
            let b = layout.base(&o.name).unwrap_or(0);
            for slot in &mut owner[b..b + o.size()] {
                *slot = Some(k);
            }
        }
        Ok(World { sys, layout, owner })
    }

    pub fn total(&self) -> usize {
        self.owner.len()
    }

    pub fn owner(&self, a: usize) -> Option<&Object> {
        self.owner.get(a).copied().flatten().map(|k| &self.sys.objects()[k])
    }

    pub fn eval(&self, e: &Expr, regs: &RegMap) -> Result<Value, StructuralError> {
        eval_expr(e, regs, self.layout)
    }

    pub fn memory(&self, store: &Store) -> Result<Memory, StructuralError> {
        place(self.layout, store, self.total())
    }

    /// The instrumentation guards: the address must belong to an object of the
    /// right kind in the current mode's space, and in kernel mode the object
    /// must be among the capabilities of the active system call.
    pub fn classify(&self, v: &Value, mode: &Mode, target: Target) -> Access {
        let Address::At(a) = to_addr(v, self.total()) else {
            return Access::Error;
        };
        let Some(o) = self.owner(a) else {
            return Access::Error;
        };
        if o.space != mode.space() || o.is_array() != (target == Target::Data) {
            return Access::Error;
        }
        if let Mode::Kernel(s) = mode {
            if !self.sys.caps_of(s).contains(&o.name) {
                return Access::Unsafe(a);
            }
        }
        Access::Ok(a)
    }
}

/// Memory as seen by one interpreter: plain memory for the classic rules,
/// buffered memory for the speculative ones.
pub trait MemView {
    /// Value at `a`, read through the `index`-th matching buffered write, and
    /// whether the read skipped a newer write.
    fn read(&self, a: usize, index: usize) -> Result<(Value, bool), StructuralError>;
    fn write(&mut self, a: usize, v: Value) -> Result<(), StructuralError>;
    fn code(&self, a: usize) -> Result<Cmd, StructuralError>;
    fn fence(&mut self) -> Result<(), StructuralError>;
}

impl MemView for Memory {
    fn read(&self, a: usize, _index: usize) -> Result<(Value, bool), StructuralError> {
        self.value(a)
            .cloned()
            .map(|v| (v, false))
            .ok_or(StructuralError::NotAValue(a))
    }

    fn write(&mut self, a: usize, v: Value) -> Result<(), StructuralError> {
        self.update(a, v)
    }

    fn code(&self, a: usize) -> Result<Cmd, StructuralError> {
        match self.get(a) {
            Cell::Code(c) => Ok(c.clone()),
            _ => Err(StructuralError::NotAValue(a)),
        }
    }

    fn fence(&mut self) -> Result<(), StructuralError> {
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub enum Rule {
    Skip,
    Op,
    Load,
    LoadError,
    LoadUnsafe,
    Store,
    StoreError,
    StoreUnsafe,
    Call,
    CallError,
    CallUnsafe,
    SystemCall,
    Pop,
    IfTrue,
    IfFalse,
    WhileTrue,
    WhileFalse,
    Fence,
    BtTrue,
    BtFalse,
    Poison,
    Observe,
    ObserveEnd,
    SpecInit,
    SpecTerm,
    SpecError,
    SpecUnsafe,
}

impl Rule {
    pub fn name(self) -> &'static str {
        match self {
            Rule::Skip => "Skip",
            Rule::Op => "Op",
            Rule::Load => "Load",
            Rule::LoadError => "Load-Error",
            Rule::LoadUnsafe => "Load-Unsafe",
            Rule::Store => "Store",
            Rule::StoreError => "Store-Error",
            Rule::StoreUnsafe => "Store-Unsafe",
            Rule::Call => "Call",
            Rule::CallError => "Call-Error",
            Rule::CallUnsafe => "Call-Unsafe",
            Rule::SystemCall => "SystemCall",
            Rule::Pop => "Pop",
            Rule::IfTrue => "If-True",
            Rule::IfFalse => "If-False",
            Rule::WhileTrue => "While-True",
            Rule::WhileFalse => "While-False",
            Rule::Fence => "Fence",
            Rule::BtTrue => "Bt-True",
            Rule::BtFalse => "Bt-False",
            Rule::Poison => "Poison",
            Rule::Observe => "Observe",
            Rule::ObserveEnd => "Observe-End",
            Rule::SpecInit => "Spec-Init",
            Rule::SpecTerm => "Spec-Term",
            Rule::SpecError => "Spec-Error",
            Rule::SpecUnsafe => "Spec-Unsafe",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Effect {
    Continue,
    Err,
    Unsafe,
}

/// How a step resolves the choices left open by the instruction.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Choice {
    Step,
    Branch(bool),
    LoadIdx(usize),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Fired {
    pub rule: Rule,
    pub obs: Observation,
    pub effect: Effect,
    /// A load read past a newer buffered write.
    pub stale: bool,
    /// A branch went against its guard.
    pub mispredicted: bool,
}

impl Fired {
    fn new(rule: Rule, obs: Observation, effect: Effect) -> Fired {
        Fired { rule, obs, effect, stale: false, mispredicted: false }
    }
}

fn eval_args(w: &World, args: &[Expr], regs: &RegMap) -> Result<RegMap, StructuralError> {
    if args.len() > ARG_REGS {
        return Err(StructuralError::TooManyArgs);
    }
    let vals = args.iter().map(|a| w.eval(a, regs)).collect::<Result<Vec<_>, _>>()?;
    Ok(RegMap::with_args(vals))
}

/// Fires the rule for the top of `frames`. On `Err`/`Unsafe` the frames are
/// left untouched; the caller replaces the whole configuration.
pub fn exec<M: MemView>(
    w: &World,
    frames: &mut Vec<Frame>,
    mem: &mut M,
    choice: Choice,
) -> Result<Fired, StructuralError> {
    let top = frames
        .last_mut()
        .ok_or_else(|| StructuralError::Stuck("empty frame stack".into()))?;
    let Some((seg, pc)) = top.code.current() else {
        if frames.len() == 1 {
            return Err(StructuralError::Stuck("terminal configuration".into()));
        }
        let done = frames.pop().expect("non-empty");
        let caller = frames.last_mut().expect("caller frame");
        caller.regs.set(Reg::ret(), done.regs.get(&Reg::ret()));
        return Ok(Fired::new(Rule::Pop, Observation::None, Effect::Continue));
    };
    let instr = &seg.instrs()[pc];
    if !matches!(instr, Instr::If { .. } | Instr::While { .. }) && matches!(choice, Choice::Branch(_)) {
        return Err(StructuralError::Inapplicable("branch".into()));
    }
    if !matches!(instr, Instr::Load { .. }) && matches!(choice, Choice::LoadIdx(_)) {
        return Err(StructuralError::Inapplicable("load".into()));
    }
    let none = Observation::None;
    let fired = match instr {
        Instr::Skip => {
            top.code.advance();
            Fired::new(Rule::Skip, none, Effect::Continue)
        }
        Instr::Assign(r, e) => {
            let v = w.eval(e, &top.regs)?;
            top.regs.set(r.clone(), v);
            top.code.advance();
            Fired::new(Rule::Op, none, Effect::Continue)
        }
        Instr::Load { dst, addr, .. } => {
            let v = w.eval(addr, &top.regs)?;
            match w.classify(&v, &top.mode, Target::Data) {
                Access::Error => Fired::new(Rule::LoadError, none, Effect::Err),
                Access::Unsafe(a) => Fired::new(Rule::LoadUnsafe, Observation::Mem { addr: a }, Effect::Unsafe),
                Access::Ok(a) => {
                    let index = match choice {
                        Choice::LoadIdx(i) => i,
                        _ => 0,
                    };
                    let (val, stale) = mem.read(a, index)?;
                    top.regs.set(dst.clone(), val);
                    top.code.advance();
                    Fired { stale, ..Fired::new(Rule::Load, Observation::Mem { addr: a }, Effect::Continue) }
                }
            }
        }
        Instr::Store { addr, value } => {
            let v = w.eval(addr, &top.regs)?;
            match w.classify(&v, &top.mode, Target::Data) {
                Access::Error => Fired::new(Rule::StoreError, none, Effect::Err),
                Access::Unsafe(_) => Fired::new(Rule::StoreUnsafe, none, Effect::Unsafe),
                Access::Ok(a) => {
                    let x = w.eval(value, &top.regs)?;
                    mem.write(a, x)?;
                    top.code.advance();
                    Fired::new(Rule::Store, Observation::Mem { addr: a }, Effect::Continue)
                }
            }
        }
        Instr::Call { target, args } => {
            let v = w.eval(target, &top.regs)?;
            match w.classify(&v, &top.mode, Target::Code) {
                Access::Error => Fired::new(Rule::CallError, none, Effect::Err),
                Access::Unsafe(a) => Fired::new(Rule::CallUnsafe, Observation::Jump { addr: a }, Effect::Unsafe),
                Access::Ok(a) => {
                    let body = mem.code(a)?;
                    let regs = eval_args(w, args, &top.regs)?;
                    let mode = top.mode.clone();
                    top.code.advance();
                    frames.push(Frame::new(body, regs, mode));
                    Fired::new(Rule::Call, Observation::Jump { addr: a }, Effect::Continue)
                }
            }
        }
        Instr::Syscall { name, args } => {
            let body = w.sys.syscall_body(name)?.clone();
            let regs = eval_args(w, args, &top.regs)?;
            let mode = match &top.mode {
                Mode::User => Mode::Kernel(name.clone()),
                k => k.clone(),
            };
            top.code.advance();
            frames.push(Frame::new(body, regs, mode));
            Fired::new(Rule::SystemCall, none, Effect::Continue)
        }
        Instr::If { cond, then, els, .. } => {
            let actual = to_bool(&w.eval(cond, &top.regs)?);
            let taken = match choice {
                Choice::Branch(b) => b,
                _ => actual,
            };
            top.code.advance();
            top.code.push(if taken { then.clone() } else { els.clone() });
            let rule = if taken { Rule::IfTrue } else { Rule::IfFalse };
            Fired {
                mispredicted: taken != actual,
                ..Fired::new(rule, Observation::Branch { taken }, Effect::Continue)
            }
        }
        Instr::While { cond, body, .. } => {
            let actual = to_bool(&w.eval(cond, &top.regs)?);
            let taken = match choice {
                Choice::Branch(b) => b,
                _ => actual,
            };
            if taken {
                top.code.push(body.clone());
            } else {
                top.code.advance();
            }
            let rule = if taken { Rule::WhileTrue } else { Rule::WhileFalse };
            Fired {
                mispredicted: taken != actual,
                ..Fired::new(rule, Observation::Branch { taken }, Effect::Continue)
            }
        }
        Instr::Fence => {
            mem.fence()?;
            top.code.advance();
            Fired::new(Rule::Fence, none, Effect::Continue)
        }
        Instr::Spec(_) | Instr::Poison(_) | Instr::Observe(_) => {
            return Err(StructuralError::AttackerInstrInVictim)
        }
    };
    Ok(fired)
}

/// Advances past an attacker-only instruction handled outside [`exec`].
pub(crate) fn skip_top(frames: &mut [Frame]) {
    if let Some(f) = frames.last_mut() {
        f.code.advance();
    }
}
