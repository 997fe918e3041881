//! Bounded checkers: layout non-interference, speculative layout
//! non-interference, Monte-Carlo safety experiments, δ estimation and
//! exhaustive directive search.
//!
//! Every `Violated` verdict carries a [`Witness`] that [`replay`] turns back
//! into the same verdict.

use std::collections::HashMap;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::attacker::{attacker_run_in, check_unprivileged, run_to_spec};
use crate::classic::{equiv_ni, eval_in, finish, ClassicConfig, Outcome};
use crate::error::StructuralError;
use crate::lang::{Cmd, Directive, Ident, Observation, Reg, RegMap, SyscallName, Value};
use crate::layout::{
    delta_bound_slots, enumerate_layouts, footprint_of, random_layout, sample_slot_layout, Layout, Memory,
    SlotScheme,
};
use crate::machine::{Frame, Mode, World};
use crate::par::{item_rng, map_range, map_slice, Exec};
use crate::spec::{candidate_directives, reducible, spec_run_in, spec_step_mut, BufferedMemory, SpecConfig, SpecStack};
use crate::syntax::{parse_attacker, parse_directives, print};
use crate::system::{ensure_valid, refs, store_update, Content, Space, Store, System};

pub const DEFAULT_NODE_CAP: usize = 1_000_000;

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Holds { evidence: String },
    Violated { witness: Box<Witness> },
    Unknown { reason: String },
}

impl Verdict {
    pub fn name(&self) -> &'static str {
        match self {
            Verdict::Holds { .. } => "holds",
            Verdict::Violated { .. } => "violated",
            Verdict::Unknown { .. } => "unknown",
        }
    }

    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds { .. })
    }

    pub fn violated(&self) -> bool {
        matches!(self, Verdict::Violated { .. })
    }

    pub fn witness(&self) -> Option<&Witness> {
        match self {
            Verdict::Violated { witness } => Some(witness),
            _ => None,
        }
    }

    fn violated_by(w: Witness) -> Verdict {
        Verdict::Violated { witness: Box::new(w) }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Holds { evidence } => write!(f, "holds ({evidence})"),
            Verdict::Violated { witness } => write!(f, "violated: {}", witness.summary()),
            Verdict::Unknown { reason } => write!(f, "unknown ({reason})"),
        }
    }
}

/// A write applied to the initial store before a run.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CellWrite {
    pub array: Ident,
    pub index: usize,
    pub value: Value,
}

/// One input to a system call: argument registers plus store edits.
#[derive(Clone, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct NiVector {
    pub regs: RegMap,
    pub cells: Vec<CellWrite>,
}

impl NiVector {
    pub fn store(&self, base: &Store) -> Result<Store, StructuralError> {
        let mut s = base.clone();
        for c in &self.cells {
            s = store_update(&s, &c.array, c.index, c.value.clone())?;
        }
        Ok(s)
    }
}

/// Where a directive search starts.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchEntry {
    /// The body of `name` in kernel mode; `buffer` lists pending writes
    /// newest first.
    Syscall {
        name: SyscallName,
        regs: RegMap,
        buffer: Vec<(usize, Value)>,
    },
    /// The speculative state at the attacker's first spec block.
    Attacker { source: String },
}

impl SearchEntry {
    pub fn syscall(name: &SyscallName, regs: RegMap) -> SearchEntry {
        SearchEntry::Syscall { name: name.clone(), regs, buffer: Vec::new() }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Fence,
    Coalesced,
    /// Deliberately wrong: drops every store in kernel code.
    DropKernelStores,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// Two layouts under which one input gives inequivalent outcomes.
    LayoutPair {
        syscall: SyscallName,
        layouts: [Layout; 2],
        vector: NiVector,
        outcomes: [String; 2],
    },
    /// One directive sequence, two layouts, different observations or a
    /// different number of consumed directives.
    ObservationMismatch {
        syscall: SyscallName,
        layouts: [Layout; 2],
        regs: RegMap,
        directives: String,
        observations: [Vec<Observation>; 2],
        consumed: [usize; 2],
    },
    /// A directive sequence driving the entry state to `unsafe`.
    UnsafeDirectives {
        entry: SearchEntry,
        layout: Layout,
        directives: String,
        observations: Vec<Observation>,
    },
    /// A speculative `unsafe` whose classic counterpart is not unsafe.
    UnconfirmedUnsafe {
        entry: SearchEntry,
        layout: Layout,
        directives: String,
        classic: String,
    },
    /// A user program telling a system and its transformation apart.
    Program {
        transform: TransformKind,
        program: String,
        layout: Layout,
        outcomes: [String; 2],
    },
}

impl Witness {
    pub fn summary(&self) -> String {
        match self {
            Witness::LayoutPair { outcomes, .. } => format!("outcomes {} vs {}", outcomes[0], outcomes[1]),
            Witness::ObservationMismatch { directives, observations, .. } => {
                let k = observations[0].iter().zip(&observations[1]).take_while(|(a, b)| a == b).count();
                let show = |os: &[Observation]| os.get(k).map_or("end".to_string(), |o| o.to_string());
                format!(
                    "directives `{directives}`: observation {k} is {} vs {}",
                    show(&observations[0]),
                    show(&observations[1])
                )
            }
            Witness::UnsafeDirectives { directives, .. } => format!("unsafe after `{directives}`"),
            Witness::UnconfirmedUnsafe { directives, classic, .. } => {
                format!("speculatively unsafe after `{directives}` but classically {classic}")
            }
            Witness::Program { outcomes, .. } => format!("program outcomes {} vs {}", outcomes[0], outcomes[1]),
        }
    }

    /// Directive sequence in command-line syntax, if the witness has one.
    pub fn directives(&self) -> Option<&str> {
        match self {
            Witness::ObservationMismatch { directives, .. }
            | Witness::UnsafeDirectives { directives, .. }
            | Witness::UnconfirmedUnsafe { directives, .. } => Some(directives),
            _ => None,
        }
    }
}

/// How the layouts of a check are chosen.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LayoutSet {
    Enumerate { bound: u128 },
    Sample { count: usize, seed: u64 },
}

pub fn layouts(sys: &System, set: LayoutSet) -> Result<Vec<Layout>, StructuralError> {
    match set {
        LayoutSet::Enumerate { bound } => enumerate_layouts(sys, bound),
        LayoutSet::Sample { count, seed } => {
            (0..count).map(|i| random_layout(sys, &mut item_rng(seed, i as u64))).collect()
        }
    }
}

fn kernel_addresses(sys: &System) -> Vec<i64> {
    (sys.kappa_user..sys.total_addresses()).map(|a| a as i64).collect()
}

fn arity(sys: &System, s: &SyscallName) -> Result<usize, StructuralError> {
    sys.syscalls.get(s).map(|d| d.arity).ok_or_else(|| StructuralError::UnknownSyscall(s.clone()))
}

/// `ρ0` plus each argument register set, one at a time, to each of `values`.
pub fn arg_sweep(arity: usize, values: &[Value]) -> Vec<RegMap> {
    let mut out = vec![RegMap::new()];
    for i in 1..=arity {
        for v in values {
            if *v != Value::Null {
                out.push(RegMap::new().with(Reg::arg(i).as_str(), v.clone()));
            }
        }
    }
    out
}

/// Argument values for the non-interference checks: null, 0, 1 and every
/// kernel address.
pub fn ni_values(sys: &System) -> Vec<Value> {
    let mut v = vec![Value::Null, Value::Int(0), Value::Int(1)];
    v.extend(kernel_addresses(sys).into_iter().filter(|a| *a > 1).map(Value::Int));
    v
}

/// Argument values for directive searches: every offset that can reach
/// across kernel space, and every address.
pub fn search_values(sys: &System) -> Vec<Value> {
    let t = sys.total_addresses() as i64;
    let k = sys.kappa_kernel as i64;
    let mut v = vec![Value::Null];
    v.extend((-k..t).map(Value::Int));
    v
}

/// The default input vectors for a layout non-interference check, at most
/// `cap` of them: argument sweeps over the unmodified store, then the empty
/// register map over stores with one array cell holding a kernel address.
pub fn default_vectors(sys: &System, s: &SyscallName, cap: usize) -> Result<Vec<NiVector>, StructuralError> {
    let mut out: Vec<NiVector> = arg_sweep(arity(sys, s)?, &ni_values(sys))
        .into_iter()
        .map(|regs| NiVector { regs, cells: Vec::new() })
        .collect();
    for o in sys.objects().iter().filter(|o| o.is_array()) {
        for index in 0..o.size() {
            for a in kernel_addresses(sys) {
                out.push(NiVector {
                    regs: RegMap::new(),
                    cells: vec![CellWrite { array: o.name.clone(), index, value: Value::Int(a) }],
                });
            }
        }
    }
    out.truncate(cap);
    Ok(out)
}

enum NiItem {
    Same,
    Fuel,
    Differs(Witness),
}

fn ni_outcome(
    sys: &System,
    layout: &Layout,
    s: &SyscallName,
    v: &NiVector,
    fuel: u64,
) -> Result<Outcome, StructuralError> {
    let w = World::new(sys, layout)?;
    let store = v.store(&sys.store)?;
    eval_in(&w, sys.syscall_body(s)?, v.regs.clone(), Mode::Kernel(s.clone()), &store, fuel)
}

fn ni_pair(
    sys: &System,
    s: &SyscallName,
    l1: &Layout,
    l2: &Layout,
    v: &NiVector,
    fuel: u64,
) -> Result<Option<Witness>, StructuralError> {
    let o1 = ni_outcome(sys, l1, s, v, fuel)?;
    let o2 = ni_outcome(sys, l2, s, v, fuel)?;
    Ok((!equiv_ni(&o1, &o2)).then(|| Witness::LayoutPair {
        syscall: s.clone(),
        layouts: [l1.clone(), l2.clone()],
        vector: v.clone(),
        outcomes: [o1.summary(), o2.summary()],
    }))
}

/// Layout non-interference of `s` over the given layouts and inputs.
pub fn check_layout_ni(
    sys: &System,
    s: &SyscallName,
    layouts: &[Layout],
    vectors: &[NiVector],
    fuel: u64,
    exec: Exec,
) -> Result<Verdict, StructuralError> {
    ensure_valid(sys)?;
    sys.syscall_body(s)?;
    let Some(first) = layouts.first() else {
        return Ok(Verdict::Unknown { reason: "no layouts".into() });
    };
    let items = map_slice(exec, vectors, |v| -> Result<NiItem, StructuralError> {
        let o1 = ni_outcome(sys, first, s, v, fuel)?;
        if o1 == Outcome::FuelExhausted {
            return Ok(NiItem::Fuel);
        }
        for l in &layouts[1..] {
            let o2 = ni_outcome(sys, l, s, v, fuel)?;
            if o2 == Outcome::FuelExhausted {
                return Ok(NiItem::Fuel);
            }
            if !equiv_ni(&o1, &o2) {
                return Ok(NiItem::Differs(Witness::LayoutPair {
                    syscall: s.clone(),
                    layouts: [first.clone(), l.clone()],
                    vector: v.clone(),
                    outcomes: [o1.summary(), o2.summary()],
                }));
            }
        }
        Ok(NiItem::Same)
    });
    let mut witness = None;
    for item in items {
        match item? {
            NiItem::Fuel => {
                return Ok(Verdict::Unknown { reason: format!("a run exhausted its fuel of {fuel} steps") })
            }
            NiItem::Differs(w) if witness.is_none() => witness = Some(w),
            _ => {}
        }
    }
    Ok(match witness {
        Some(w) => Verdict::violated_by(w),
        None => Verdict::Holds {
            evidence: format!("{} inputs agree across {} layouts", vectors.len(), layouts.len()),
        },
    })
}

fn syscall_root(
    w: &World,
    s: &SyscallName,
    regs: RegMap,
    buffer: &[(usize, Value)],
) -> Result<SpecStack, StructuralError> {
    let mem = w.memory(&w.sys.store)?;
    Ok(SpecStack::singleton(SpecConfig::Running {
        frames: vec![Frame::new(w.sys.syscall_body(s)?.clone(), regs, Mode::Kernel(s.clone()))],
        bm: BufferedMemory::with_entries(buffer.iter().cloned(), mem),
        misspec: false,
    }))
}

fn entry_root(w: &World, entry: &SearchEntry, fuel: u64) -> Result<Result<SpecStack, Outcome>, StructuralError> {
    match entry {
        SearchEntry::Syscall { name, regs, buffer } => syscall_root(w, name, regs.clone(), buffer).map(Ok),
        SearchEntry::Attacker { source } => {
            let prog = parse_attacker(source, w.sys).map_err(|e| StructuralError::Stuck(e.to_string()))?;
            run_to_spec(w, &prog, RegMap::new(), fuel)
        }
    }
}

fn mismatch_witness(
    w1: &World,
    w2: &World,
    s: &SyscallName,
    regs: &RegMap,
    ds: &[Directive],
    fuel: u64,
) -> Result<Option<Witness>, StructuralError> {
    let r1 = spec_run_in(w1, syscall_root(w1, s, regs.clone(), &[])?.top().clone(), ds, fuel)?;
    let r2 = spec_run_in(w2, syscall_root(w2, s, regs.clone(), &[])?.top().clone(), ds, fuel)?;
    if r1.observations == r2.observations && r1.consumed == r2.consumed {
        return Ok(None);
    }
    Ok(Some(Witness::ObservationMismatch {
        syscall: s.clone(),
        layouts: [w1.layout.clone(), w2.layout.clone()],
        regs: regs.clone(),
        directives: print::directives(ds),
        observations: [r1.observations, r2.observations],
        consumed: [r1.consumed, r2.consumed],
    }))
}

enum Flow {
    Continue,
    Found,
    Capped,
}

struct Lockstep<'a> {
    w1: &'a World<'a>,
    w2: &'a World<'a>,
    nodes: usize,
    cap: usize,
    path: Vec<Directive>,
}

impl Lockstep<'_> {
    fn go(&mut self, k1: &SpecStack, k2: &SpecStack, left: usize) -> Result<Flow, StructuralError> {
        if left == 0 {
            return Ok(Flow::Continue);
        }
        self.nodes += 1;
        if self.nodes > self.cap {
            return Ok(Flow::Capped);
        }
        let mut cands = candidate_directives(self.w1, k1);
        for d in candidate_directives(self.w2, k2) {
            if !cands.contains(&d) {
                cands.push(d);
            }
        }
        for d in cands {
            self.path.push(d.clone());
            if reducible(k1, &d) != reducible(k2, &d) {
                return Ok(Flow::Found);
            }
            let (mut n1, mut n2) = (k1.clone(), k2.clone());
            let (o1, _) = spec_step_mut(self.w1, &mut n1, &d)?;
            let (o2, _) = spec_step_mut(self.w2, &mut n2, &d)?;
            if o1 != o2 {
                return Ok(Flow::Found);
            }
            match self.go(&n1, &n2, left - 1)? {
                Flow::Continue => {}
                other => return Ok(other),
            }
            self.path.pop();
        }
        Ok(Flow::Continue)
    }
}

/// Speculative layout non-interference of `s`: every directive sequence of
/// length at most `depth` must produce the same observations under
/// `layouts[0]` and each other layout, for each register map in `inputs`.
pub fn check_slni(
    sys: &System,
    s: &SyscallName,
    layouts: &[Layout],
    inputs: &[RegMap],
    depth: usize,
    node_cap: usize,
    exec: Exec,
) -> Result<Verdict, StructuralError> {
    ensure_valid(sys)?;
    sys.syscall_body(s)?;
    if layouts.len() < 2 {
        return Ok(Verdict::Holds { evidence: "fewer than two layouts".into() });
    }
    let work: Vec<(usize, usize)> =
        (0..inputs.len()).flat_map(|i| (1..layouts.len()).map(move |j| (i, j))).collect();
    let results = map_slice(exec, &work, |&(i, j)| -> Result<(Flow, Option<Witness>, usize), StructuralError> {
        let w1 = World::new(sys, &layouts[0])?;
        let w2 = World::new(sys, &layouts[j])?;
        let k1 = syscall_root(&w1, s, inputs[i].clone(), &[])?;
        let k2 = syscall_root(&w2, s, inputs[i].clone(), &[])?;
        let mut ls = Lockstep { w1: &w1, w2: &w2, nodes: 0, cap: node_cap, path: Vec::new() };
        let flow = ls.go(&k1, &k2, depth)?;
        let witness = match flow {
            Flow::Found => mismatch_witness(&w1, &w2, s, &inputs[i], &ls.path, depth as u64 + 1)?,
            _ => None,
        };
        Ok((flow, witness, ls.nodes))
    });
    let mut nodes = 0;
    let mut capped = false;
    for r in results {
        let (flow, witness, n) = r?;
        nodes += n;
        match flow {
            Flow::Found => {
                let w = witness.ok_or_else(|| StructuralError::Stuck("lockstep mismatch did not replay".into()))?;
                return Ok(Verdict::violated_by(w));
            }
            Flow::Capped => capped = true,
            Flow::Continue => {}
        }
    }
    Ok(if capped {
        Verdict::Unknown { reason: format!("node cap {node_cap} reached") }
    } else {
        Verdict::Holds {
            evidence: format!(
                "{} inputs x {} layout pairs, all directive sequences up to length {depth} ({nodes} nodes)",
                inputs.len(),
                layouts.len() - 1
            ),
        }
    })
}

/// Tally of a Monte-Carlo safety experiment.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub trials: u64,
    pub unsafe_count: u64,
    pub err_count: u64,
    pub done_count: u64,
    pub fuel_exhausted: u64,
    pub empirical_rate: Option<f64>,
    /// `1 - δ` under the slot scheme.
    pub bound: f64,
    pub bound_exact: String,
    pub seed: u64,
}

impl ExperimentResult {
    /// Whether the empirical rate stays below the bound plus three binomial
    /// standard deviations.
    pub fn within_bound(&self) -> bool {
        match self.empirical_rate {
            None => true,
            Some(r) => r <= self.bound + 3.0 * (self.bound * (1.0 - self.bound) / self.trials as f64).sqrt(),
        }
    }
}

fn ratio_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn ratio_str(r: Ratio<u64>) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Runs `attacker` under `trials` slot layouts; trial `i` samples its
/// layout from stream `i` of `seed`.
pub fn estimate_unsafe_probability(
    sys: &System,
    attacker: &Cmd,
    scheme: &SlotScheme,
    trials: u64,
    fuel: u64,
    seed: u64,
    exec: Exec,
) -> Result<ExperimentResult, StructuralError> {
    ensure_valid(sys)?;
    check_unprivileged(sys, attacker)?;
    scheme.check(sys)?;
    let bound = Ratio::from_integer(1) - delta_bound_slots(sys, scheme)?;
    let outcomes = map_range(exec, trials as usize, |i| -> Result<Outcome, StructuralError> {
        let layout = sample_slot_layout(scheme, sys, &mut item_rng(seed, i as u64))?;
        let w = World::new(sys, &layout)?;
        Ok(attacker_run_in(&w, attacker, RegMap::new(), fuel, false)?.outcome)
    });
    let mut r = ExperimentResult {
        trials,
        unsafe_count: 0,
        err_count: 0,
        done_count: 0,
        fuel_exhausted: 0,
        empirical_rate: None,
        bound: ratio_f64(bound),
        bound_exact: ratio_str(bound),
        seed,
    };
    for o in outcomes {
        match o? {
            Outcome::Done { .. } => r.done_count += 1,
            Outcome::Err => r.err_count += 1,
            Outcome::Unsafe => r.unsafe_count += 1,
            Outcome::FuelExhausted => r.fuel_exhausted += 1,
        }
    }
    if trials > 0 {
        r.empirical_rate = Some(r.unsafe_count as f64 / trials as f64);
    }
    Ok(r)
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DeltaEstimate {
    pub trials: u64,
    pub probe: usize,
    /// The system call with the smallest empirical miss rate.
    pub syscall: Option<SyscallName>,
    /// Trials where the probe avoided that system call's references.
    pub conditioned: u64,
    pub misses: u64,
    pub empirical: Option<f64>,
    pub bound: f64,
    pub bound_exact: String,
    pub seed: u64,
}

/// Empirical probability that kernel address `probe` (default: the first
/// kernel address) is unallocated, conditioned on it not belonging to a
/// reference of the system call; the minimum over system calls.
pub fn estimate_delta(
    sys: &System,
    scheme: &SlotScheme,
    probe: Option<usize>,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<DeltaEstimate, StructuralError> {
    ensure_valid(sys)?;
    scheme.check(sys)?;
    let probe = probe.unwrap_or(sys.kappa_user);
    let bound = delta_bound_slots(sys, scheme)?;
    let calls: Vec<(SyscallName, Vec<Ident>)> = sys
        .syscalls
        .iter()
        .map(|(n, d)| Ok((n.clone(), refs(sys, &d.body)?.ids.into_iter().collect())))
        .collect::<Result<_, StructuralError>>()?;
    let samples = map_range(exec, trials as usize, |i| -> Result<Vec<(bool, bool)>, StructuralError> {
        let layout = sample_slot_layout(scheme, sys, &mut item_rng(seed, i as u64))?;
        let w = World::new(sys, &layout)?;
        let free = w.owner(probe).is_none();
        Ok(calls
            .iter()
            .map(|(_, ids)| (!footprint_of(&layout, sys, ids).contains(&probe), free))
            .collect())
    });
    let mut tally = vec![(0u64, 0u64); calls.len()];
    for s in samples {
        for (t, (cond, free)) in tally.iter_mut().zip(s?) {
            if cond {
                t.0 += 1;
                t.1 += free as u64;
            }
        }
    }
    let best = tally
        .iter()
        .enumerate()
        .filter(|(_, t)| t.0 > 0)
        .min_by(|a, b| (a.1 .1 as f64 / a.1 .0 as f64).total_cmp(&(b.1 .1 as f64 / b.1 .0 as f64)));
    let (syscall, conditioned, misses) = match best {
        Some((k, t)) => (Some(calls[k].0.clone()), t.0, t.1),
        None => (None, 0, 0),
    };
    Ok(DeltaEstimate {
        trials,
        probe,
        syscall,
        conditioned,
        misses,
        empirical: (conditioned > 0).then(|| misses as f64 / conditioned as f64),
        bound: ratio_f64(bound),
        bound_exact: ratio_str(bound),
        seed,
    })
}

pub(crate) enum SearchResult {
    Found { directives: Vec<Directive>, observations: Vec<Observation> },
    Exhausted { nodes: usize },
    Capped,
}

struct Search<'a> {
    w: &'a World<'a>,
    seen: HashMap<SpecStack, usize>,
    nodes: usize,
    cap: usize,
    path: Vec<Directive>,
    obs: Vec<Observation>,
}

impl Search<'_> {
    fn go(&mut self, k: &SpecStack, left: usize) -> Result<Flow, StructuralError> {
        if k.is_unsafe() {
            return Ok(Flow::Found);
        }
        if left == 0 || self.seen.get(k).is_some_and(|l| *l >= left) {
            return Ok(Flow::Continue);
        }
        self.seen.insert(k.clone(), left);
        self.nodes += 1;
        if self.nodes > self.cap {
            return Ok(Flow::Capped);
        }
        for d in candidate_directives(self.w, k) {
            let mut n = k.clone();
            let (o, _) = spec_step_mut(self.w, &mut n, &d)?;
            self.path.push(d);
            self.obs.push(o);
            match self.go(&n, left - 1)? {
                Flow::Continue => {}
                other => return Ok(other),
            }
            self.path.pop();
            self.obs.pop();
        }
        Ok(Flow::Continue)
    }
}

/// Exhaustive search for a directive sequence of length at most `depth`
/// that makes `root` unsafe.
pub(crate) fn search_unsafe(
    w: &World,
    root: &SpecStack,
    depth: usize,
    node_cap: usize,
) -> Result<SearchResult, StructuralError> {
    let mut s = Search { w, seen: HashMap::new(), nodes: 0, cap: node_cap, path: Vec::new(), obs: Vec::new() };
    Ok(match s.go(root, depth)? {
        Flow::Found => SearchResult::Found { directives: s.path, observations: s.obs },
        Flow::Capped => SearchResult::Capped,
        Flow::Continue => SearchResult::Exhausted { nodes: s.nodes },
    })
}

/// Bounded search for speculative unsafety from one entry state. `fuel`
/// bounds the attacker prefix for attacker entries.
pub fn directive_search(
    sys: &System,
    layout: &Layout,
    entry: &SearchEntry,
    depth: usize,
    node_cap: usize,
    fuel: u64,
) -> Result<Verdict, StructuralError> {
    ensure_valid(sys)?;
    let w = World::new(sys, layout)?;
    let root = match entry_root(&w, entry, fuel)? {
        Ok(k) => k,
        Err(o) => {
            return Ok(Verdict::Holds { evidence: format!("attacker never speculates (outcome {})", o.summary()) })
        }
    };
    Ok(match search_unsafe(&w, &root, depth, node_cap)? {
        SearchResult::Found { directives, observations } => Verdict::violated_by(Witness::UnsafeDirectives {
            entry: entry.clone(),
            layout: layout.clone(),
            directives: print::directives(&directives),
            observations,
        }),
        SearchResult::Capped => Verdict::Unknown { reason: format!("node cap {node_cap} reached") },
        SearchResult::Exhausted { nodes } => {
            Verdict::Holds { evidence: format!("no unsafe state within {depth} directives ({nodes} nodes)") }
        }
    })
}

/// Searches each entry in order and reports the first violation; any
/// capped search makes the overall verdict unknown when nothing is found.
pub fn search_entries(
    sys: &System,
    layout: &Layout,
    entries: &[SearchEntry],
    depth: usize,
    node_cap: usize,
    fuel: u64,
    exec: Exec,
) -> Result<Verdict, StructuralError> {
    let verdicts = map_slice(exec, entries, |e| directive_search(sys, layout, e, depth, node_cap, fuel));
    let mut unknown = None;
    for v in verdicts {
        match v? {
            v @ Verdict::Violated { .. } => return Ok(v),
            v @ Verdict::Unknown { .. } => unknown = unknown.or(Some(v)),
            Verdict::Holds { .. } => {}
        }
    }
    Ok(unknown.unwrap_or(Verdict::Holds {
        evidence: format!("no unsafe state within {depth} directives from {} entry states", entries.len()),
    }))
}

/// Entry states for a system call: the argument sweep of
/// [`search_values`] with an empty buffer.
pub fn syscall_entries(sys: &System, s: &SyscallName) -> Result<Vec<SearchEntry>, StructuralError> {
    Ok(arg_sweep(arity(sys, s)?, &search_values(sys))
        .into_iter()
        .map(|regs| SearchEntry::syscall(s, regs))
        .collect())
}

/// Buffers seeding the safety-imposition check: empty, and one pending write
/// of each kernel address into each array cell.
pub fn buffer_seeds(sys: &System, layout: &Layout) -> Vec<Vec<(usize, Value)>> {
    let mut out = vec![Vec::new()];
    for o in sys.objects().iter().filter(|o| o.is_array()) {
        let base = layout.base(&o.name).unwrap_or(0);
        for k in 0..o.size() {
            for a in kernel_addresses(sys) {
                out.push(vec![(base + k, Value::Int(a))]);
            }
        }
    }
    out
}

/// Classic run of `c` starting from an already placed memory.
pub fn eval_from_memory(
    w: &World,
    c: &Cmd,
    regs: RegMap,
    mode: Mode,
    mem: Memory,
    fuel: u64,
) -> Result<Outcome, StructuralError> {
    let mut cfg = ClassicConfig::Running { frames: vec![Frame::new(c.clone(), regs, mode)], mem };
    for _ in 0..fuel {
        if cfg.step(w)?.is_none() {
            break;
        }
    }
    Ok(match &cfg {
        ClassicConfig::Running { frames, mem } if cfg.is_terminal() => finish(w, frames, mem, &w.sys.store),
        ClassicConfig::Running { .. } => Outcome::FuelExhausted,
        ClassicConfig::Err => Outcome::Err,
        ClassicConfig::Unsafe => Outcome::Unsafe,
    })
}

/// Checks one entry for the safety-imposition property: if the search
/// reaches `unsafe`, the classic run from the flushed initial memory must be
/// unsafe too. Returns the verdict and whether a speculative unsafe state
/// was found.
pub fn check_sks_entry(
    w: &World,
    entry: &SearchEntry,
    depth: usize,
    node_cap: usize,
    fuel: u64,
) -> Result<(Verdict, bool), StructuralError> {
    let SearchEntry::Syscall { name, regs, buffer } = entry else {
        return Err(StructuralError::Stuck("safety imposition needs a system call entry".into()));
    };
    let root = syscall_root(w, name, regs.clone(), buffer)?;
    let (directives, _) = match search_unsafe(w, &root, depth, node_cap)? {
        SearchResult::Found { directives, observations } => (directives, observations),
        SearchResult::Capped => {
            return Ok((Verdict::Unknown { reason: format!("node cap {node_cap} reached") }, false))
        }
        SearchResult::Exhausted { nodes } => {
            return Ok((Verdict::Holds { evidence: format!("{nodes} nodes, no unsafe state") }, false))
        }
    };
    Ok(match unconfirmed(w, entry, &directives, fuel)? {
        Some(wit) => (Verdict::violated_by(wit), true),
        None => (Verdict::Holds { evidence: "speculative unsafe confirmed classically".into() }, true),
    })
}

fn unconfirmed(w: &World, entry: &SearchEntry, ds: &[Directive], fuel: u64) -> Result<Option<Witness>, StructuralError> {
    let SearchEntry::Syscall { name, regs, buffer } = entry else {
        return Err(StructuralError::Stuck("safety imposition needs a system call entry".into()));
    };
    let root = syscall_root(w, name, regs.clone(), buffer)?;
    let run = spec_run_in(w, root.top().clone(), ds, ds.len() as u64 + 1)?;
    if !run.stack.is_unsafe() {
        return Ok(None);
    }
    let SpecConfig::Running { bm, .. } = root.top() else { unreachable!("roots are running") };
    let body = w.sys.syscall_body(name)?;
    let classic = eval_from_memory(w, body, regs.clone(), Mode::Kernel(name.clone()), bm.flush()?, fuel)?;
    Ok((classic != Outcome::Unsafe).then(|| Witness::UnconfirmedUnsafe {
        entry: entry.clone(),
        layout: w.layout.clone(),
        directives: print::directives(ds),
        classic: classic.summary(),
    }))
}

/// Replays a witness and returns the verdict it reproduces: `Violated` with
/// an identical witness, or `Holds` if the violation no longer occurs.
pub fn replay(sys: &System, witness: &Witness, fuel: u64) -> Result<Verdict, StructuralError> {
    let parse_ds = |s: &str| parse_directives(s).map_err(|e| StructuralError::Stuck(e.to_string()));
    let found = match witness {
        Witness::LayoutPair { syscall, layouts, vector, .. } => {
            ni_pair(sys, syscall, &layouts[0], &layouts[1], vector, fuel)?
        }
        Witness::ObservationMismatch { syscall, layouts, regs, directives, .. } => {
            let w1 = World::new(sys, &layouts[0])?;
            let w2 = World::new(sys, &layouts[1])?;
            let ds = parse_ds(directives)?;
            mismatch_witness(&w1, &w2, syscall, regs, &ds, ds.len() as u64 + 1)?
        }
        Witness::UnsafeDirectives { entry, layout, directives, .. } => {
            let w = World::new(sys, layout)?;
            let ds = parse_ds(directives)?;
            match entry_root(&w, entry, fuel)? {
                Ok(root) => {
                    let run = spec_run_in(&w, root.top().clone(), &ds, ds.len() as u64 + 1)?;
                    run.stack.is_unsafe().then(|| Witness::UnsafeDirectives {
                        entry: entry.clone(),
                        layout: layout.clone(),
                        directives: directives.clone(),
                        observations: run.observations,
                    })
                }
                Err(_) => None,
            }
        }
        Witness::UnconfirmedUnsafe { entry, layout, directives, .. } => {
            let w = World::new(sys, layout)?;
            let ds = parse_ds(directives)?;
            unconfirmed(&w, entry, &ds, fuel)?
        }
        Witness::Program { transform, program, layout, .. } => {
            crate::transform::program_mismatch(sys, *transform, program, layout, fuel)?
        }
    };
    Ok(match found {
        Some(w) => Verdict::violated_by(w),
        None => Verdict::Holds { evidence: "witness did not reproduce".into() },
    })
}

/// Every kernel array cell's address under `layout`, for sweeps.
pub fn kernel_cells(sys: &System, layout: &Layout) -> Vec<usize> {
    sys.objects_in(Space::Kernel)
        .filter(|o| o.is_array())
        .flat_map(|o| {
            let b = layout.base(&o.name).unwrap_or(0);
            b..b + o.size()
        })
        .collect()
}

/// Whether `layout` places some data object at kernel address `a`.
pub fn holds_array(sys: &System, layout: &Layout, a: usize) -> bool {
    sys.objects().iter().any(|o| {
        matches!(sys.store.get(&o.name), Some(Content::Array(_)))
            && layout.base(&o.name).is_some_and(|b| (b..b + o.size()).contains(&a))
    })
}
