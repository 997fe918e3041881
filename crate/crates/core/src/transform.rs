//! The fence transformation, its coalesced variant, and differential checks
//! of semantics preservation and safety imposition.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    arg_sweep, buffer_seeds, check_sks_entry, search_values, TransformKind, Verdict, Witness,
};
use crate::classic::{equiv_user, eval_in, Outcome};
use crate::error::StructuralError;
use crate::gen::random_user_program;
use crate::lang::{Cmd, Expr, Instr, RegMap, SyscallName};
use crate::layout::{random_layout, Layout};
use crate::machine::{Mode, World};
use crate::par::{item_rng, map_range, map_slice, Exec};
use crate::syntax::{parse_attacker, print};
use crate::system::{ensure_valid, Content, Space, Store, System};
use crate::analysis::SearchEntry;

/// Prefixes every load, store and call with a fence, recursing into
/// branches and loop bodies.
pub fn fence_cmd(c: &Cmd) -> Cmd {
    let mut out = Vec::with_capacity(c.len() * 2);
    for i in c.instrs() {
        match i {
            Instr::Load { .. } | Instr::Store { .. } | Instr::Call { .. } => {
                out.push(Instr::Fence);
                out.push(i.clone());
            }
            Instr::If { label, cond, then, els } => out.push(Instr::If {
                label: label.clone(),
                cond: cond.clone(),
                then: fence_cmd(then),
                els: fence_cmd(els),
            }),
            Instr::While { label, cond, body } => out.push(Instr::While {
                label: label.clone(),
                cond: cond.clone(),
                body: fence_cmd(body),
            }),
            _ => out.push(i.clone()),
        }
    }
    Cmd::new(out)
}

/// One fence before each maximal run of loads and stores, none before calls
/// to a literal procedure.
pub fn fence_coalesced(c: &Cmd) -> Cmd {
    let mut out = Vec::with_capacity(c.len() * 2);
    let mut in_run = false;
    for i in c.instrs() {
        match i {
            Instr::Load { .. } | Instr::Store { .. } => {
                if !in_run {
                    out.push(Instr::Fence);
                }
                out.push(i.clone());
                in_run = true;
                continue;
            }
            Instr::Call { target: Expr::Id(_), .. } => out.push(i.clone()),
            Instr::Call { .. } => {
                out.push(Instr::Fence);
                out.push(i.clone());
            }
            Instr::If { label, cond, then, els } => out.push(Instr::If {
                label: label.clone(),
                cond: cond.clone(),
                then: fence_coalesced(then),
                els: fence_coalesced(els),
            }),
            Instr::While { label, cond, body } => out.push(Instr::While {
                label: label.clone(),
                cond: cond.clone(),
                body: fence_coalesced(body),
            }),
            _ => out.push(i.clone()),
        }
        in_run = false;
    }
    Cmd::new(out)
}

fn drop_stores(c: &Cmd) -> Cmd {
    Cmd::new(
        c.instrs()
            .iter()
            .filter(|i| !matches!(i, Instr::Store { .. }))
            .map(|i| match i {
                Instr::If { label, cond, then, els } => Instr::If {
                    label: label.clone(),
                    cond: cond.clone(),
                    then: drop_stores(then),
                    els: drop_stores(els),
                },
                Instr::While { label, cond, body } => {
                    Instr::While { label: label.clone(), cond: cond.clone(), body: drop_stores(body) }
                }
                other => other.clone(),
            })
            .collect(),
    )
}

pub fn apply(kind: TransformKind, c: &Cmd) -> Cmd {
    match kind {
        TransformKind::Fence => fence_cmd(c),
        TransformKind::Coalesced => fence_coalesced(c),
        TransformKind::DropKernelStores => drop_stores(c),
    }
}

/// Applies `kind` to every system call body not in `skip` and to every
/// kernel procedure. User objects and capabilities are left alone.
pub fn fence_system_with(sys: &System, kind: TransformKind, skip: &[SyscallName]) -> System {
    let mut out = sys.clone();
    let mut store = Store::new();
    for (id, content) in sys.store.iter() {
        let kernel = sys.object(id).is_some_and(|o| o.space == Space::Kernel);
        let content = match content {
            Content::Proc(body) if kernel => Content::Proc(apply(kind, body)),
            other => other.clone(),
        };
        store.insert(id.clone(), content);
    }
    out.store = store;
    for (name, def) in out.syscalls.iter_mut() {
        if !skip.contains(name) {
            def.body = apply(kind, &def.body);
        }
    }
    out
}

pub fn fence_system(sys: &System) -> System {
    fence_system_with(sys, TransformKind::Fence, &[])
}

/// Collapses adjacent fences into one.
pub fn normalize_fences(c: &Cmd) -> Cmd {
    let mut out: Vec<Instr> = Vec::new();
    for i in c.instrs() {
        let i = match i {
            Instr::If { label, cond, then, els } => Instr::If {
                label: label.clone(),
                cond: cond.clone(),
                then: normalize_fences(then),
                els: normalize_fences(els),
            },
            Instr::While { label, cond, body } => {
                Instr::While { label: label.clone(), cond: cond.clone(), body: normalize_fences(body) }
            }
            other => other.clone(),
        };
        if i == Instr::Fence && out.last() == Some(&Instr::Fence) {
            continue;
        }
        out.push(i);
    }
    Cmd::new(out)
}

/// Removes every fence.
pub fn erase_fences(c: &Cmd) -> Cmd {
    Cmd::new(
        c.instrs()
            .iter()
            .filter(|i| **i != Instr::Fence)
            .map(|i| match i {
                Instr::If { label, cond, then, els } => Instr::If {
                    label: label.clone(),
                    cond: cond.clone(),
                    then: erase_fences(then),
                    els: erase_fences(els),
                },
                Instr::While { label, cond, body } => {
                    Instr::While { label: label.clone(), cond: cond.clone(), body: erase_fences(body) }
                }
                other => other.clone(),
            })
            .collect(),
    )
}

pub fn count_fences(c: &Cmd) -> usize {
    let mut n = 0;
    c.walk(&mut |i| n += (*i == Instr::Fence) as usize);
    n
}

/// Fence counts per system call and kernel procedure.
pub fn fence_counts(sys: &System) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (name, def) in &sys.syscalls {
        out.insert(format!("syscall {name}"), count_fences(&def.body));
    }
    for o in sys.objects_in(Space::Kernel) {
        if let Some(body) = sys.store.proc_body(&o.name) {
            out.insert(format!("proc {}", o.name), count_fences(body));
        }
    }
    out
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct PreservationTally {
    pub trials: u64,
    pub matched: u64,
    pub mismatched: u64,
    /// Trials where either side ran out of fuel; compared like any outcome.
    pub fuel_exhausted: u64,
    pub seed: u64,
}

#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct SksTally {
    pub entries: u64,
    pub speculative_unsafe: u64,
    pub confirmed: u64,
    pub unconfirmed: u64,
    pub capped: u64,
    pub depth: usize,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct TransformReport {
    pub transform: TransformKind,
    pub fences: BTreeMap<String, usize>,
    pub preservation: Option<PreservationTally>,
    pub sks: Option<SksTally>,
}

fn user_outcome(sys: &System, layout: &Layout, prog: &Cmd, fuel: u64) -> Result<Outcome, StructuralError> {
    let w = World::new(sys, layout)?;
    eval_in(&w, prog, RegMap::new(), Mode::User, &sys.store, fuel)
}

/// Runs `program` under `sys` and its transformation; a witness if the
/// outcomes are told apart.
pub fn program_mismatch(
    sys: &System,
    kind: TransformKind,
    program: &str,
    layout: &Layout,
    fuel: u64,
) -> Result<Option<Witness>, StructuralError> {
    let prog = parse_attacker(program, sys).map_err(|e| StructuralError::Stuck(e.to_string()))?;
    let t = fence_system_with(sys, kind, &[]);
    let o1 = user_outcome(sys, layout, &prog, fuel)?;
    let o2 = user_outcome(&t, layout, &prog, fuel)?;
    Ok((!equiv_user(sys, &o1, &o2)).then(|| Witness::Program {
        transform: kind,
        program: program.to_string(),
        layout: layout.clone(),
        outcomes: [o1.summary(), o2.summary()],
    }))
}

/// Differential test of semantics preservation: `trials` random user
/// programs, each under a random layout, on `sys` and on its
/// transformation.
pub fn check_sem_preservation(
    sys: &System,
    kind: TransformKind,
    trials: u64,
    fuel: u64,
    seed: u64,
    exec: Exec,
) -> Result<(Verdict, PreservationTally), StructuralError> {
    ensure_valid(sys)?;
    let t = fence_system_with(sys, kind, &[]);
    let results = map_range(exec, trials as usize, |i| -> Result<(Outcome, Outcome, Cmd, Layout), StructuralError> {
        let mut rng = item_rng(seed, i as u64);
        let prog = random_user_program(sys, &mut rng, 8);
        let layout = random_layout(sys, &mut rng)?;
        let o1 = user_outcome(sys, &layout, &prog, fuel)?;
        let o2 = user_outcome(&t, &layout, &prog, fuel)?;
        Ok((o1, o2, prog, layout))
    });
    let mut tally = PreservationTally { trials, seed, ..Default::default() };
    let mut witness = None;
    for r in results {
        let (o1, o2, prog, layout) = r?;
        if o1 == Outcome::FuelExhausted || o2 == Outcome::FuelExhausted {
            tally.fuel_exhausted += 1;
        }
        if equiv_user(sys, &o1, &o2) {
            tally.matched += 1;
        } else {
            tally.mismatched += 1;
            if witness.is_none() {
                witness = Some(Witness::Program {
                    transform: kind,
                    program: print::cmd(&prog, 0),
                    layout,
                    outcomes: [o1.summary(), o2.summary()],
                });
            }
        }
    }
    let verdict = match witness {
        Some(w) => Verdict::Violated { witness: Box::new(w) },
        None => Verdict::Holds { evidence: format!("{} programs agree", tally.matched) },
    };
    Ok((verdict, tally))
}

/// Bounded check that speculative unsafety implies classic unsafety, from
/// every argument sweep and seeded buffer, for every system call, under
/// `layout`.
pub fn check_imposes_sks(
    sys: &System,
    layout: &Layout,
    depth: usize,
    node_cap: usize,
    fuel: u64,
    exec: Exec,
) -> Result<(Verdict, SksTally), StructuralError> {
    ensure_valid(sys)?;
    let w = World::new(sys, layout)?;
    let values = search_values(sys);
    let buffers = buffer_seeds(sys, layout);
    let mut entries = Vec::new();
    for (name, def) in &sys.syscalls {
        for regs in arg_sweep(def.arity, &values) {
            for buffer in &buffers {
                entries.push(SearchEntry::Syscall { name: name.clone(), regs: regs.clone(), buffer: buffer.clone() });
            }
        }
    }
    let results = map_slice(exec, &entries, |e| check_sks_entry(&w, e, depth, node_cap, fuel));
    let mut tally = SksTally { entries: entries.len() as u64, depth, ..Default::default() };
    let mut first = None;
    for r in results {
        let (v, found) = r?;
        tally.speculative_unsafe += found as u64;
        match v {
            Verdict::Violated { .. } => {
                tally.unconfirmed += 1;
                first = first.or(Some(v));
            }
            Verdict::Unknown { .. } => tally.capped += 1,
            Verdict::Holds { .. } => tally.confirmed += found as u64,
        }
    }
    let verdict = match first {
        Some(v) => v,
        None if tally.capped > 0 => Verdict::Unknown { reason: format!("{} searches hit the node cap", tally.capped) },
        None => Verdict::Holds {
            evidence: format!(
                "{} entry states, {} speculative unsafe states, all confirmed classically (depth {depth})",
                tally.entries, tally.speculative_unsafe
            ),
        },
    };
    Ok((verdict, tally))
}

/// System calls whose bodies differ between `a` and `b`.
pub fn changed_syscalls(a: &System, b: &System) -> BTreeSet<SyscallName> {
    a.syscalls
        .iter()
        .filter(|(n, d)| b.syscalls.get(*n).is_none_or(|e| e.body != d.body))
        .map(|(n, _)| n.clone())
        .collect()
}
