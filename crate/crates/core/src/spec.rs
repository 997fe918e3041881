//! Buffered memories and the directive-driven speculative semantics.

use serde::{Deserialize, Serialize};

use crate::error::StructuralError;
use crate::lang::{Cmd, Directive, Instr, Observation, RegMap, Value};
use crate::layout::{Cell, Layout, Memory};
use crate::machine::{exec, next, Choice, Effect, Frame, MemView, Mode, Next, Rule, World};
use crate::system::{Store, System};

/// A write buffer over a memory. The buffer is kept oldest-first internally;
/// [`BufferedMemory::entries`] lists it newest-first.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct BufferedMemory {
    buf: Vec<(usize, Value)>,
    pub mem: Memory,
}

impl BufferedMemory {
    pub fn new(mem: Memory) -> Self {
        BufferedMemory { buf: Vec::new(), mem }
    }

    /// Builds a buffered memory from entries listed newest-first.
    pub fn with_entries(entries: impl IntoIterator<Item = (usize, Value)>, mem: Memory) -> Self {
        let mut buf: Vec<_> = entries.into_iter().collect();
        buf.reverse();
        BufferedMemory { buf, mem }
    }

    pub fn entries(&self) -> impl Iterator<Item = &(usize, Value)> {
        self.buf.iter().rev()
    }

    pub fn buffer_len(&self) -> usize {
        self.buf.len()
    }

    /// Number of buffered writes to `a`.
    pub fn matching(&self, a: usize) -> usize {
        self.buf.iter().filter(|(b, _)| *b == a).count()
    }

    /// The `i`-th newest buffered value for `a`, falling back to memory, and
    /// whether a newer write to `a` was skipped.
    pub fn buf_read(&self, a: usize, i: usize) -> Result<(Value, bool), StructuralError> {
        let mut i = i;
        let mut stale = false;
        for (b, v) in self.entries() {
            if *b != a {
                continue;
            }
            if i == 0 {
                return Ok((v.clone(), stale));
            }
            i -= 1;
            stale = true;
        }
        match self.mem.get(a) {
            Cell::Val(v) => Ok((v.clone(), stale)),
            _ => Err(StructuralError::NotAValue(a)),
        }
    }

    pub fn buf_write(&mut self, a: usize, v: Value) {
        self.buf.push((a, v));
    }

    /// Commits the buffer, oldest entry first, so the newest write wins.
    pub fn flush(&self) -> Result<Memory, StructuralError> {
        let mut m = self.mem.clone();
        for (a, v) in &self.buf {
            m.update(*a, v.clone())?;
        }
        Ok(m)
    }
}

pub fn buf_read(bm: &BufferedMemory, a: usize, i: usize) -> Result<(Value, bool), StructuralError> {
    bm.buf_read(a, i)
}

pub fn buf_write(bm: &BufferedMemory, a: usize, v: Value) -> BufferedMemory {
    let mut out = bm.clone();
    out.buf_write(a, v);
    out
}

pub fn flush(bm: &BufferedMemory) -> Result<Memory, StructuralError> {
    bm.flush()
}

impl MemView for BufferedMemory {
    fn read(&self, a: usize, index: usize) -> Result<(Value, bool), StructuralError> {
        self.buf_read(a, index)
    }

    fn write(&mut self, a: usize, v: Value) -> Result<(), StructuralError> {
        if matches!(self.mem.get(a), Cell::Code(_)) {
            return Err(StructuralError::WriteToCode(a));
        }
        self.buf_write(a, v);
        Ok(())
    }

    fn code(&self, a: usize) -> Result<Cmd, StructuralError> {
        self.mem.code(a)
    }

    fn fence(&mut self) -> Result<(), StructuralError> {
        self.mem = self.flush()?;
        self.buf.clear();
        Ok(())
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum SpecConfig {
    Running { frames: Vec<Frame>, bm: BufferedMemory, misspec: bool },
    Err { misspec: bool },
    Unsafe,
}

impl SpecConfig {
    pub fn initial(w: &World, c: Cmd, regs: RegMap, mode: Mode, store: &Store) -> Result<Self, StructuralError> {
        Ok(SpecConfig::Running {
            frames: vec![Frame::new(c, regs, mode)],
            bm: BufferedMemory::new(w.memory(store)?),
            misspec: false,
        })
    }

    pub fn misspec(&self) -> bool {
        match self {
            SpecConfig::Running { misspec, .. } | SpecConfig::Err { misspec } => *misspec,
            SpecConfig::Unsafe => false,
        }
    }

    pub fn is_unsafe(&self) -> bool {
        matches!(self, SpecConfig::Unsafe)
    }

    /// A single frame with no code left.
    pub fn is_terminal(&self) -> bool {
        matches!(self, SpecConfig::Running { frames, .. } if matches!(next(frames), Next::Terminal))
    }
}

/// Stack of speculative configurations; the top is the last element and
/// everything beneath it is a checkpoint.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct SpecStack(Vec<SpecConfig>);

impl SpecStack {
    pub fn singleton(c: SpecConfig) -> Self {
        SpecStack(vec![c])
    }

    pub fn top(&self) -> &SpecConfig {
        self.0.last().expect("spec stacks are never empty")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Bottom-first.
    pub fn configs(&self) -> &[SpecConfig] {
        &self.0
    }

    pub fn is_unsafe(&self) -> bool {
        self.top().is_unsafe()
    }

    /// A singleton stack always carries a cleared flag.
    pub fn misspec_invariant_holds(&self) -> bool {
        self.0.len() != 1 || !self.top().misspec()
    }
}

/// The instruction a directive would act on, if the top is running.
fn top_instr(k: &SpecStack) -> Option<(&[Frame], Next<'_>, bool)> {
    match k.top() {
        SpecConfig::Running { frames, misspec, .. } => Some((frames, next(frames), *misspec)),
        _ => None,
    }
}

/// Whether some rule fires on `k` under `d`.
pub fn reducible(k: &SpecStack, d: &Directive) -> bool {
    if k.is_unsafe() {
        return false;
    }
    match d {
        Directive::Bt => k.len() >= 2,
        Directive::Step => match top_instr(k) {
            Some((_, Next::Instr(Instr::Fence), ms)) => !ms,
            Some((_, Next::Instr(i), _)) => !i.is_attacker_only(),
            Some((_, Next::Pop, _)) => true,
            _ => false,
        },
        Directive::Branch { label, .. } => matches!(
            top_instr(k),
            Some((_, Next::Instr(Instr::If { label: l, .. } | Instr::While { label: l, .. }), _)) if l == label
        ),
        Directive::Load { label, .. } => matches!(
            top_instr(k),
            Some((_, Next::Instr(Instr::Load { label: l, .. }), _)) if l == label
        ),
    }
}

/// Fires the rule selected by `d` in place and returns its observation.
pub fn spec_step_mut(w: &World, k: &mut SpecStack, d: &Directive) -> Result<(Observation, Rule), StructuralError> {
    if !reducible(k, d) {
        return Err(StructuralError::Inapplicable(crate::syntax::print::directive(d)));
    }
    if let Directive::Bt = d {
        let top = k.0.pop().expect("non-empty");
        if top.misspec() {
            return Ok((Observation::Bt { misspec: true }, Rule::BtTrue));
        }
        k.0 = vec![top];
        return Ok((Observation::Bt { misspec: false }, Rule::BtFalse));
    }
    let SpecConfig::Running { frames, bm, misspec } = k.top() else {
        unreachable!("reducible checked the top is running")
    };
    let (choice, speculative) = match d {
        Directive::Step => (Choice::Step, false),
        Directive::Branch { taken, .. } => (Choice::Branch(*taken), true),
        Directive::Load { index, .. } => (Choice::LoadIdx(*index), true),
        Directive::Bt => unreachable!(),
    };
    let ms = *misspec;
    let mut frames = frames.clone();
    let mut bm = bm.clone();
    let fired = exec(w, &mut frames, &mut bm, choice)?;
    match fired.effect {
        Effect::Unsafe => k.0 = vec![SpecConfig::Unsafe],
        Effect::Err => *k.0.last_mut().expect("non-empty") = SpecConfig::Err { misspec: ms },
        Effect::Continue => {
            let new = SpecConfig::Running {
                frames,
                bm,
                misspec: ms || fired.mispredicted || fired.stale,
            };
            if speculative {
                k.0.push(new);
            } else {
                *k.0.last_mut().expect("non-empty") = new;
            }
        }
    }
    Ok((fired.obs, fired.rule))
}

pub fn spec_step(
    sys: &System,
    layout: &Layout,
    k: &SpecStack,
    d: &Directive,
) -> Result<(SpecStack, Observation), StructuralError> {
    let w = World::new(sys, layout)?;
    let mut out = k.clone();
    let (obs, _) = spec_step_mut(&w, &mut out, d)?;
    Ok((out, obs))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    /// Every directive was consumed.
    Completed,
    /// The directive at `offset` did not apply.
    Stuck { offset: usize },
    Unsafe,
    FuelExhausted,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SpecRun {
    pub stack: SpecStack,
    pub observations: Vec<Observation>,
    pub rules: Vec<Rule>,
    pub consumed: usize,
    pub status: RunStatus,
}

pub fn spec_run_in(w: &World, initial: SpecConfig, ds: &[Directive], fuel: u64) -> Result<SpecRun, StructuralError> {
    let mut k = SpecStack::singleton(initial);
    let mut run = SpecRun {
        stack: k.clone(),
        observations: Vec::new(),
        rules: Vec::new(),
        consumed: 0,
        status: RunStatus::Completed,
    };
    for (offset, d) in ds.iter().enumerate() {
        if k.is_unsafe() {
            break;
        }
        if offset as u64 >= fuel {
            run.status = RunStatus::FuelExhausted;
            break;
        }
        if !reducible(&k, d) {
            run.status = RunStatus::Stuck { offset };
            break;
        }
        let (obs, rule) = spec_step_mut(w, &mut k, d)?;
        run.observations.push(obs);
        run.rules.push(rule);
        run.consumed += 1;
    }
    if k.is_unsafe() {
        run.status = RunStatus::Unsafe;
    }
    run.stack = k;
    Ok(run)
}

pub fn spec_run(
    sys: &System,
    layout: &Layout,
    initial: SpecConfig,
    ds: &[Directive],
    fuel: u64,
) -> Result<SpecRun, StructuralError> {
    spec_run_in(&World::new(sys, layout)?, initial, ds, fuel)
}

/// Directives worth trying on `k`: step, backtrack, both predictions of a
/// labelled branch and every distinguishable index of a labelled load.
pub fn candidate_directives(w: &World, k: &SpecStack) -> Vec<Directive> {
    let mut out = vec![Directive::Step, Directive::Bt];
    if let SpecConfig::Running { frames, bm, .. } = k.top() {
        match next(frames) {
            Next::Instr(Instr::If { label, .. } | Instr::While { label, .. }) => {
                for taken in [true, false] {
                    out.push(Directive::Branch { label: label.clone(), taken });
                }
            }
            Next::Instr(Instr::Load { label, addr, .. }) => {
                let top = frames.last().expect("non-empty");
                let m = w
                    .eval(addr, &top.regs)
                    .ok()
                    .and_then(|v| crate::lang::to_addr(&v, w.total()).get())
                    .map_or(0, |a| bm.matching(a));
                for index in 0..=m {
                    out.push(Directive::Load { label: label.clone(), index });
                }
            }
            _ => {}
        }
    }
    out.retain(|d| reducible(k, d));
    out
}
