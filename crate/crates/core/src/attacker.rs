//! The attacker language: classic execution plus poisoning, observation reads
//! and spec blocks that run victim code speculatively.

use crate::classic::{describe_top, finish, Outcome, TraceStep};
use crate::error::StructuralError;
use crate::lang::{ids_of, Directive, Instr, Observation, RegMap, SpCmd, Value};
use crate::layout::{Layout, Memory};
use crate::machine::{exec, next, skip_top, Choice, Effect, Frame, Mode, Next, Rule, World};
use crate::spec::{reducible, spec_step_mut, BufferedMemory, SpecConfig, SpecStack};
use crate::system::{Space, System};

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum AttackerConfig {
    /// `ds` and `os` are stacks whose newest element is last.
    Running {
        frames: Vec<Frame>,
        mem: Memory,
        ds: Vec<Directive>,
        os: Vec<Observation>,
    },
    Hybrid {
        spec: SpecStack,
        saved: Vec<Frame>,
        ds: Vec<Directive>,
        os: Vec<Observation>,
    },
    Err,
    Unsafe,
}

impl AttackerConfig {
    pub fn initial(w: &World, prog: SpCmd, regs: RegMap) -> Result<Self, StructuralError> {
        Ok(AttackerConfig::Running {
            frames: vec![Frame::new(prog, regs, Mode::User)],
            mem: w.memory(&w.sys.store)?,
            ds: Vec::new(),
            os: Vec::new(),
        })
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            AttackerConfig::Running { frames, .. } => matches!(next(frames), Next::Terminal),
            AttackerConfig::Hybrid { .. } => false,
            _ => true,
        }
    }
}

/// One attacker step in place. Observations pushed onto `os` are also
/// appended to `log`. Returns `None` on a terminal configuration.
pub fn attacker_step(
    w: &World,
    ac: &mut AttackerConfig,
    log: &mut Vec<Observation>,
) -> Result<Option<Rule>, StructuralError> {
    if ac.is_terminal() {
        return Ok(None);
    }
    let rule = match ac {
        AttackerConfig::Running { frames, mem, ds, os } => match next(frames) {
            Next::Instr(Instr::Poison(d)) => {
                ds.push(d.clone());
                skip_top(frames);
                Rule::Poison
            }
            Next::Instr(Instr::Observe(r)) => {
                let r = r.clone();
                let (v, rule) = match os.pop() {
                    Some(o) => (Value::Obs(o), Rule::Observe),
                    None => (Value::Null, Rule::ObserveEnd),
                };
                skip_top(frames);
                frames.last_mut().expect("non-empty").regs.set(r, v);
                rule
            }
            Next::Instr(Instr::Spec(c)) => {
                if !c.is_victim_code() {
                    return Err(StructuralError::AttackerInstrInVictim);
                }
                let c = c.clone();
                skip_top(frames);
                let top = frames.last().expect("non-empty");
                let start = SpecConfig::Running {
                    frames: vec![Frame::new(c, top.regs.clone(), top.mode.clone())],
                    bm: BufferedMemory::new(mem.clone()),
                    misspec: false,
                };
                *ac = AttackerConfig::Hybrid {
                    spec: SpecStack::singleton(start),
                    saved: std::mem::take(frames),
                    ds: std::mem::take(ds),
                    os: std::mem::take(os),
                };
                Rule::SpecInit
            }
            _ => {
                let fired = exec(w, frames, mem, Choice::Step)?;
                match fired.effect {
                    Effect::Continue => {}
                    Effect::Err => *ac = AttackerConfig::Err,
                    Effect::Unsafe => *ac = AttackerConfig::Unsafe,
                }
                fired.rule
            }
        },
        AttackerConfig::Hybrid { spec, saved, ds, os } => {
            let top = spec.top();
            if top.is_unsafe() {
                *ac = AttackerConfig::Unsafe;
                return Ok(Some(Rule::SpecUnsafe));
            }
            if spec.len() == 1 {
                match top {
                    SpecConfig::Running { bm, misspec: false, .. } if top.is_terminal() => {
                        let mem = bm.flush()?;
                        *ac = AttackerConfig::Running {
                            frames: std::mem::take(saved),
                            mem,
                            ds: std::mem::take(ds),
                            os: std::mem::take(os),
                        };
                        return Ok(Some(Rule::SpecTerm));
                    }
                    SpecConfig::Err { misspec: false } => {
                        *ac = AttackerConfig::Err;
                        return Ok(Some(Rule::SpecError));
                    }
                    _ => {}
                }
            }
            let d = match ds.last() {
                Some(d) if reducible(spec, d) => ds.pop().expect("non-empty"),
                _ if reducible(spec, &Directive::Step) => Directive::Step,
                _ if reducible(spec, &Directive::Bt) => Directive::Bt,
                _ => return Err(StructuralError::Stuck("no speculative rule applies".into())),
            };
            let (obs, rule) = spec_step_mut(w, spec, &d)?;
            os.push(obs);
            log.push(obs);
            rule
        }
        AttackerConfig::Err | AttackerConfig::Unsafe => return Ok(None),
    };
    Ok(Some(rule))
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AttackerRun {
    pub outcome: Outcome,
    /// Every observation ever pushed, in emission order.
    pub log: Vec<Observation>,
    /// Directives still poisoned when the run ended, newest last.
    pub residual: Vec<Directive>,
    pub steps: u64,
    pub trace: Vec<TraceStep>,
    /// Whether a kernel frame was entered before the run turned unsafe.
    pub entered_kernel: bool,
}

/// Rejects attacker programs that name kernel objects.
pub fn check_unprivileged(sys: &System, prog: &SpCmd) -> Result<(), StructuralError> {
    for id in ids_of(prog) {
        match sys.object(&id) {
            None => return Err(StructuralError::UnknownIdent(id)),
            Some(o) if o.space == Space::Kernel => return Err(StructuralError::PrivilegedAttacker(id)),
            _ => {}
        }
    }
    let mut bad = false;
    prog.walk(&mut |i| {
        if let Instr::Spec(c) = i {
            bad |= !c.is_victim_code();
        }
    });
    if bad {
        return Err(StructuralError::AttackerInstrInVictim);
    }
    Ok(())
}

fn in_kernel(ac: &AttackerConfig) -> bool {
    let frames = match ac {
        AttackerConfig::Running { frames, .. } => frames.as_slice(),
        AttackerConfig::Hybrid { spec, .. } => match spec.top() {
            SpecConfig::Running { frames, .. } => frames.as_slice(),
            _ => return false,
        },
        _ => return false,
    };
    frames.last().is_some_and(|f| f.mode.space() == Space::Kernel)
}

pub fn attacker_run_in(
    w: &World,
    prog: &SpCmd,
    regs: RegMap,
    fuel: u64,
    with_trace: bool,
) -> Result<AttackerRun, StructuralError> {
    check_unprivileged(w.sys, prog)?;
    let mut ac = AttackerConfig::initial(w, prog.clone(), regs)?;
    let mut log = Vec::new();
    let mut trace = Vec::new();
    let mut steps = 0;
    let mut entered_kernel = false;
    while steps < fuel {
        entered_kernel |= in_kernel(&ac);
        let (mode, instr) = if with_trace {
            match &ac {
                AttackerConfig::Running { frames, .. } => describe_top(frames),
                AttackerConfig::Hybrid { spec, .. } => match spec.top() {
                    SpecConfig::Running { frames, .. } => describe_top(frames),
                    _ => Default::default(),
                },
                _ => Default::default(),
            }
        } else {
            Default::default()
        };
        match attacker_step(w, &mut ac, &mut log)? {
            Some(rule) => {
                if with_trace {
                    trace.push(TraceStep { step: steps, rule: rule.name().to_string(), mode, instr });
                }
                steps += 1;
            }
            None => break,
        }
    }
    let (outcome, residual) = match &ac {
        AttackerConfig::Running { frames, mem, ds, .. } if ac.is_terminal() => {
            (finish(w, frames, mem, &w.sys.store), ds.clone())
        }
        AttackerConfig::Running { ds, .. } | AttackerConfig::Hybrid { ds, .. } => {
            (Outcome::FuelExhausted, ds.clone())
        }
        AttackerConfig::Err => (Outcome::Err, Vec::new()),
        AttackerConfig::Unsafe => (Outcome::Unsafe, Vec::new()),
    };
    Ok(AttackerRun { outcome, log, residual, steps, trace, entered_kernel })
}

pub fn attacker_run(
    sys: &System,
    layout: &Layout,
    prog: &SpCmd,
    regs: RegMap,
    fuel: u64,
) -> Result<AttackerRun, StructuralError> {
    attacker_run_in(&World::new(sys, layout)?, prog, regs, fuel, false)
}

/// Runs the attacker until it enters its first spec block and returns the
/// speculative stack at that point, or the final outcome if it never does.
pub fn run_to_spec(
    w: &World,
    prog: &SpCmd,
    regs: RegMap,
    fuel: u64,
) -> Result<Result<SpecStack, Outcome>, StructuralError> {
    check_unprivileged(w.sys, prog)?;
    let mut ac = AttackerConfig::initial(w, prog.clone(), regs)?;
    let mut log = Vec::new();
    for _ in 0..fuel {
        if let AttackerConfig::Hybrid { spec, .. } = &ac {
            return Ok(Ok(spec.clone()));
        }
        if attacker_step(w, &mut ac, &mut log)?.is_none() {
            break;
        }
    }
    Ok(Err(match &ac {
        AttackerConfig::Running { frames, mem, .. } if ac.is_terminal() => finish(w, frames, mem, &w.sys.store),
        AttackerConfig::Err => Outcome::Err,
        AttackerConfig::Unsafe => Outcome::Unsafe,
        _ => Outcome::FuelExhausted,
    }))
}
