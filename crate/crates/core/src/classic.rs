//! The instrumented non-speculative semantics and the evaluation function.

use serde::{Deserialize, Serialize};

use crate::error::StructuralError;
use crate::lang::{Cmd, Reg, RegMap, Value};
use crate::layout::{Layout, Memory};
use crate::machine::{exec, next, Choice, Effect, Frame, Mode, Next, Rule, World};
use crate::syntax::print::instr_head;
use crate::system::{Space, Store, System};

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum ClassicConfig {
    /// Frames are bottom-first: the last frame is the top.
    Running { frames: Vec<Frame>, mem: Memory },
    Err,
    Unsafe,
}

impl ClassicConfig {
    pub fn initial(w: &World, c: Cmd, regs: RegMap, mode: Mode, store: &Store) -> Result<Self, StructuralError> {
        Ok(ClassicConfig::Running {
            frames: vec![Frame::new(c, regs, mode)],
            mem: w.memory(store)?,
        })
    }

    pub fn is_terminal(&self) -> bool {
        match self {
            ClassicConfig::Running { frames, .. } => matches!(next(frames), Next::Terminal),
            _ => true,
        }
    }

    /// One step in place. Returns the rule that fired, or `None` on a
    /// terminal configuration.
    pub fn step(&mut self, w: &World) -> Result<Option<Rule>, StructuralError> {
        if self.is_terminal() {
            return Ok(None);
        }
        let ClassicConfig::Running { frames, mem } = self else {
            unreachable!("terminal configurations return early")
        };
        let fired = exec(w, frames, mem, Choice::Step)?;
        match fired.effect {
            Effect::Continue => {}
            Effect::Err => *self = ClassicConfig::Err,
            Effect::Unsafe => *self = ClassicConfig::Unsafe,
        }
        Ok(Some(fired.rule))
    }
}

/// One step as a function; terminal configurations are fixpoints.
pub fn step(sys: &System, layout: &Layout, cfg: &ClassicConfig) -> Result<ClassicConfig, StructuralError> {
    let w = World::new(sys, layout)?;
    let mut next = cfg.clone();
    next.step(&w)?;
    Ok(next)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Outcome {
    Done { value: Value, store: Store },
    Err,
    Unsafe,
    FuelExhausted,
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::Done { .. } => "done",
            Outcome::Err => "err",
            Outcome::Unsafe => "unsafe",
            Outcome::FuelExhausted => "fuel_exhausted",
        }
    }

    pub fn summary(&self) -> String {
        match self {
            Outcome::Done { value, .. } => format!("done {value}"),
            o => o.kind().to_string(),
        }
    }
}

/// Equivalence used for layout non-interference: equality, except that an
/// error and an unsafe outcome are identified.
pub fn equiv_ni(a: &Outcome, b: &Outcome) -> bool {
    match (a, b) {
        (Outcome::Err | Outcome::Unsafe, Outcome::Err | Outcome::Unsafe) => true,
        _ => a == b,
    }
}

/// Equivalence used for semantics preservation: equal return values and
/// equal user-space stores; other outcomes must match exactly.
pub fn equiv_user(sys: &System, a: &Outcome, b: &Outcome) -> bool {
    match (a, b) {
        (Outcome::Done { value: v1, store: s1 }, Outcome::Done { value: v2, store: s2 }) => {
            v1 == v2 && s1.agrees_on(s2, &sys.ids_in(Space::User))
        }
        _ => a == b,
    }
}

pub(crate) fn finish(w: &World, frames: &[Frame], mem: &Memory, base: &Store) -> Outcome {
    Outcome::Done {
        value: frames[0].regs.get(&Reg::ret()),
        store: mem.to_store(w.layout, w.sys, base),
    }
}

fn outcome_of(w: &World, cfg: &ClassicConfig, base: &Store) -> Outcome {
    match cfg {
        ClassicConfig::Running { frames, mem } => finish(w, frames, mem, base),
        ClassicConfig::Err => Outcome::Err,
        ClassicConfig::Unsafe => Outcome::Unsafe,
    }
}

/// Runs `c` from `⟨c, regs, mode⟩` on the placed store for at most `fuel`
/// steps.
pub fn eval_in(
    w: &World,
    c: &Cmd,
    regs: RegMap,
    mode: Mode,
    store: &Store,
    fuel: u64,
) -> Result<Outcome, StructuralError> {
    let mut cfg = ClassicConfig::initial(w, c.clone(), regs, mode, store)?;
    for _ in 0..fuel {
        if cfg.step(w)?.is_none() {
            return Ok(outcome_of(w, &cfg, store));
        }
    }
    if cfg.is_terminal() {
        Ok(outcome_of(w, &cfg, store))
    } else {
        Ok(Outcome::FuelExhausted)
    }
}

pub fn eval(
    sys: &System,
    layout: &Layout,
    c: &Cmd,
    regs: RegMap,
    mode: Mode,
    store: &Store,
    fuel: u64,
) -> Result<Outcome, StructuralError> {
    eval_in(&World::new(sys, layout)?, c, regs, mode, store, fuel)
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: u64,
    pub rule: String,
    pub mode: String,
    pub instr: String,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub outcome: Outcome,
}

pub(crate) fn describe_top(frames: &[Frame]) -> (String, String) {
    let mode = frames.last().map(|f| f.mode.to_string()).unwrap_or_default();
    let instr = match next(frames) {
        Next::Instr(i) => instr_head(i),
        Next::Pop => "return".to_string(),
        Next::Terminal => String::new(),
    };
    (mode, instr)
}

pub fn trace(
    sys: &System,
    layout: &Layout,
    c: &Cmd,
    regs: RegMap,
    mode: Mode,
    store: &Store,
    fuel: u64,
) -> Result<Trace, StructuralError> {
    let w = World::new(sys, layout)?;
    let mut cfg = ClassicConfig::initial(&w, c.clone(), regs, mode, store)?;
    let mut steps = Vec::new();
    for n in 0..fuel {
        let (mode, instr) = match &cfg {
            ClassicConfig::Running { frames, .. } => describe_top(frames),
            _ => break,
        };
        match cfg.step(&w)? {
            Some(rule) => steps.push(TraceStep { step: n, rule: rule.name().to_string(), mode, instr }),
            None => break,
        }
    }
    let outcome = if cfg.is_terminal() {
        outcome_of(&w, &cfg, store)
    } else {
        Outcome::FuelExhausted
    };
    Ok(Trace { steps, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Expr, Instr, Op};

    fn user_only() -> System {
        let mut s = System::new(4, 4);
        s.add_null_array("a", Space::User, 2);
        s
    }

    #[test]
    fn arithmetic_program_is_done() {
        let s = user_only();
        let l = Layout::canonical(&s);
        let c = Cmd::new(vec![
            Instr::Assign(Reg::new("x"), Expr::bin(Op::Add, Expr::int(1), Expr::int(2))),
            Instr::Assign(Reg::ret(), Expr::reg("x")),
        ]);
        let o = eval(&s, &l, &c, RegMap::new(), Mode::User, &s.store, 100).unwrap();
        assert_eq!(o, Outcome::Done { value: Value::Int(3), store: s.store.clone() });
    }

    #[test]
    fn divergence_exhausts_fuel() {
        let s = user_only();
        let l = Layout::canonical(&s);
        let c = Cmd::new(vec![Instr::While {
            label: "w".into(),
            cond: Expr::int(1),
            body: Cmd::new(vec![Instr::Skip]),
        }]);
        assert_eq!(
            eval(&s, &l, &c, RegMap::new(), Mode::User, &s.store, 100).unwrap(),
            Outcome::FuelExhausted
        );
    }

    #[test]
    fn invalid_address_load_is_error() {
        let s = user_only();
        let l = Layout::canonical(&s);
        let c = Cmd::new(vec![Instr::Load { label: "l".into(), dst: Reg::new("x"), addr: Expr::int(-3) }]);
        let t = trace(&s, &l, &c, RegMap::new(), Mode::User, &s.store, 10).unwrap();
        assert_eq!(t.outcome, Outcome::Err);
        assert_eq!(t.steps.last().unwrap().rule, "Load-Error");
    }

    #[test]
    fn zero_fuel_gives_empty_trace() {
        let s = user_only();
        let l = Layout::canonical(&s);
        let t = trace(&s, &l, &Cmd::new(vec![Instr::Skip]), RegMap::new(), Mode::User, &s.store, 0).unwrap();
        assert!(t.steps.is_empty());
        assert_eq!(t.outcome, Outcome::FuelExhausted);
    }

    #[test]
    fn equivalences() {
        assert!(equiv_ni(&Outcome::Err, &Outcome::Unsafe));
        assert!(!equiv_ni(&Outcome::Err, &Outcome::FuelExhausted));
        assert!(equiv_ni(&Outcome::FuelExhausted, &Outcome::FuelExhausted));
        let s = user_only();
        let d = |v| Outcome::Done { value: Value::Int(v), store: s.store.clone() };
        assert!(!equiv_ni(&d(1), &d(2)));
        assert!(equiv_user(&s, &d(1), &d(1)));
        assert!(!equiv_user(&s, &Outcome::Err, &Outcome::Unsafe));
    }
}
