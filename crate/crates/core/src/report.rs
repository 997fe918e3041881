//! JSON reports. A report embeds the system source and everything needed to
//! rerun the command that produced it; [`replay`] does exactly that.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    self, check_layout_ni, check_slni, default_vectors, estimate_delta, estimate_unsafe_probability, layouts,
    search_entries, syscall_entries, DeltaEstimate, ExperimentResult, LayoutSet, SearchEntry, TransformKind,
    Verdict, DEFAULT_NODE_CAP,
};
use crate::attacker::attacker_run_in;
use crate::classic::{Outcome, TraceStep};
use crate::error::StructuralError;
use crate::lang::{Observation, SyscallName, Value};
use crate::layout::{Layout, SlotScheme};
use crate::machine::World;
use crate::par::Exec;
use crate::syntax::{parse_attacker, parse_system, print};
use crate::system::{Content, System};
use crate::transform::{check_imposes_sks, check_sem_preservation, fence_counts, fence_system_with, TransformReport};

pub const REPORT_VERSION: &str = "speckernel-report/1";

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct LayoutRecord {
    pub kappa_user: usize,
    pub kappa_kernel: usize,
    pub bases: Layout,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub kind: String,
    pub value: Option<Value>,
    /// Final array contents; absent unless the run finished.
    pub arrays: BTreeMap<String, Vec<Value>>,
}

impl OutcomeRecord {
    pub fn of(o: &Outcome) -> OutcomeRecord {
        let (value, arrays) = match o {
            Outcome::Done { value, store } => (
                Some(value.clone()),
                store
                    .iter()
                    .filter_map(|(id, c)| match c {
                        Content::Array(v) => Some((id.to_string(), v.clone())),
                        Content::Proc(_) => None,
                    })
                    .collect(),
            ),
            _ => (None, BTreeMap::new()),
        };
        OutcomeRecord { kind: o.kind().to_string(), value, arrays }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub check: String,
    pub verdict: Verdict,
}

/// How to rerun the command behind a report.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Replay {
    Run { attacker: String, layout: Layout, fuel: u64 },
    /// Replay every witness in the report's verdicts.
    Witnesses { fuel: u64 },
    Experiment { attacker: String, trials: u64, fuel: u64, seed: u64 },
    Delta { probe: usize, trials: u64, seed: u64 },
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub system_digest: String,
    pub system_source: String,
    pub layouts: Vec<LayoutRecord>,
    pub outcome: Option<OutcomeRecord>,
    pub observations: Vec<Observation>,
    pub directives: Option<String>,
    pub verdicts: Vec<VerdictRecord>,
    pub experiment: Option<ExperimentResult>,
    pub delta: Option<DeltaEstimate>,
    pub transform: Option<TransformReport>,
    pub trace: Vec<TraceStep>,
    pub replay: Option<Replay>,
    pub runtime_ms: u64,
}

pub fn digest(sys: &System) -> String {
    hex::encode(Sha256::digest(print::system(sys).as_bytes()))
}

impl Report {
    pub fn new(command: &str, sys: &System) -> Report {
        Report {
            version: REPORT_VERSION.to_string(),
            command: command.to_string(),
            seed: None,
            system_digest: digest(sys),
            system_source: print::system(sys),
            layouts: Vec::new(),
            outcome: None,
            observations: Vec::new(),
            directives: None,
            verdicts: Vec::new(),
            experiment: None,
            delta: None,
            transform: None,
            trace: Vec::new(),
            replay: None,
            runtime_ms: 0,
        }
    }

    fn layout(&mut self, sys: &System, l: &Layout) {
        self.layouts.push(LayoutRecord {
            kappa_user: sys.kappa_user,
            kappa_kernel: sys.kappa_kernel,
            bases: l.clone(),
        });
    }

    fn verdict(&mut self, check: String, v: Verdict) {
        if self.directives.is_none() {
            self.directives = v.witness().and_then(|w| w.directives()).map(str::to_string);
        }
        self.verdicts.push(VerdictRecord { check, verdict: v });
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(s: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Exit status: 1 for a violation, an unsafe outcome or an experiment
    /// above its bound; 2 for unknown verdicts or exhausted fuel; else 0.
    pub fn exit_code(&self) -> i32 {
        let violated = self.verdicts.iter().any(|v| v.verdict.violated())
            || self.outcome.as_ref().is_some_and(|o| o.kind == "unsafe")
            || self.experiment.as_ref().is_some_and(|e| !e.within_bound());
        let unknown = self.verdicts.iter().any(|v| matches!(v.verdict, Verdict::Unknown { .. }))
            || self.outcome.as_ref().is_some_and(|o| o.kind == "fuel_exhausted");
        if violated {
            1
        } else if unknown {
            2
        } else {
            0
        }
    }

    /// A short human-readable rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (system {})", self.command, &self.system_digest[..12]);
        if let Some(o) = &self.outcome {
            match &o.value {
                Some(v) => {
                    let _ = writeln!(out, "outcome: {} {v}", o.kind);
                }
                None => {
                    let _ = writeln!(out, "outcome: {}", o.kind);
                }
            }
        }
        for t in &self.trace {
            let _ = writeln!(out, "  {:>4}  {:<13} {:<12} {}", t.step, t.rule, t.mode, t.instr);
        }
        if !self.observations.is_empty() {
            let os: Vec<String> = self.observations.iter().map(|o| o.to_string()).collect();
            let _ = writeln!(out, "observations: {}", os.join(", "));
        }
        for v in &self.verdicts {
            let _ = writeln!(out, "{}: {}", v.check, v.verdict);
        }
        if let Some(d) = &self.directives {
            let _ = writeln!(out, "directives: {d}");
        }
        if let Some(e) = &self.experiment {
            let rate = e.empirical_rate.map_or("n/a".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(
                out,
                "trials {}: unsafe {}, err {}, done {}, fuel {}; rate {rate}, bound {} ({})",
                e.trials, e.unsafe_count, e.err_count, e.done_count, e.fuel_exhausted, e.bound_exact, e.bound
            );
        }
        if let Some(d) = &self.delta {
            let emp = d.empirical.map_or("n/a".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(
                out,
                "delta at {}: empirical {emp} over {} conditioned trials, bound {} ({})",
                d.probe, d.conditioned, d.bound_exact, d.bound
            );
        }
        if let Some(t) = &self.transform {
            for (k, n) in &t.fences {
                let _ = writeln!(out, "  {k}: {n} fences");
            }
        }
        out
    }
}

fn timed(start: Instant, mut r: Report) -> Report {
    r.runtime_ms = start.elapsed().as_millis() as u64;
    r
}

fn parse_err(e: impl ToString) -> StructuralError {
    StructuralError::Stuck(e.to_string())
}

/// Runs an attacker program under one layout.
pub fn run_report(
    sys: &System,
    attacker: &str,
    layout: &Layout,
    fuel: u64,
    with_trace: bool,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let prog = parse_attacker(attacker, sys).map_err(parse_err)?;
    let w = World::new(sys, layout)?;
    let run = attacker_run_in(&w, &prog, Default::default(), fuel, with_trace)?;
    let mut r = Report::new("run", sys);
    r.layout(sys, layout);
    r.outcome = Some(OutcomeRecord::of(&run.outcome));
    r.observations = run.log;
    r.trace = run.trace;
    r.replay = Some(Replay::Run { attacker: attacker.to_string(), layout: layout.clone(), fuel });
    Ok(timed(start, r))
}

pub fn ni_report(
    sys: &System,
    s: &SyscallName,
    set: LayoutSet,
    fuel: u64,
    exec: Exec,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let ls = layouts(sys, set)?;
    let vectors = default_vectors(sys, s, 4096)?;
    let v = check_layout_ni(sys, s, &ls, &vectors, fuel, exec)?;
    let mut r = Report::new("check-ni", sys);
    if let LayoutSet::Sample { seed, .. } = set {
        r.seed = Some(seed);
    }
    if let Some(analysis::Witness::LayoutPair { layouts, .. }) = v.witness() {
        for l in layouts {
            r.layout(sys, l);
        }
    }
    r.verdict(format!("layout-ni {s} over {} layouts", ls.len()), v);
    r.replay = Some(Replay::Witnesses { fuel });
    Ok(timed(start, r))
}

pub fn slni_report(
    sys: &System,
    s: &SyscallName,
    set: LayoutSet,
    depth: usize,
    exec: Exec,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let ls = layouts(sys, set)?;
    let inputs: Vec<_> = default_vectors(sys, s, 4096)?
        .into_iter()
        .filter(|v| v.cells.is_empty())
        .map(|v| v.regs)
        .collect();
    let v = check_slni(sys, s, &ls, &inputs, depth, DEFAULT_NODE_CAP, exec)?;
    let mut r = Report::new("check-slni", sys);
    if let LayoutSet::Sample { seed, .. } = set {
        r.seed = Some(seed);
    }
    if let Some(analysis::Witness::ObservationMismatch { layouts, observations, .. }) = v.witness() {
        for l in layouts {
            r.layout(sys, l);
        }
        r.observations = observations[0].clone();
    }
    r.verdict(format!("slni {s} over {} layouts, depth {depth}", ls.len()), v);
    r.replay = Some(Replay::Witnesses { fuel: depth as u64 + 1 });
    Ok(timed(start, r))
}

pub fn experiment_report(
    sys: &System,
    attacker: &str,
    scheme: &SlotScheme,
    trials: u64,
    fuel: u64,
    seed: u64,
    exec: Exec,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let prog = parse_attacker(attacker, sys).map_err(parse_err)?;
    let e = estimate_unsafe_probability(sys, &prog, scheme, trials, fuel, seed, exec)?;
    let mut r = Report::new("experiment", sys);
    r.seed = Some(seed);
    r.experiment = Some(e);
    r.replay = Some(Replay::Experiment { attacker: attacker.to_string(), trials, fuel, seed });
    Ok(timed(start, r))
}

pub fn delta_report(
    sys: &System,
    scheme: &SlotScheme,
    probe: Option<usize>,
    trials: u64,
    seed: u64,
    exec: Exec,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let d = estimate_delta(sys, scheme, probe, trials, seed, exec)?;
    let mut r = Report::new("estimate-delta", sys);
    r.seed = Some(seed);
    r.replay = Some(Replay::Delta { probe: d.probe, trials, seed });
    r.delta = Some(d);
    Ok(timed(start, r))
}

/// Directive search from every entry state of the named system call (all of
/// them if `None`), or from the attacker's first spec block.
pub fn search_report(
    sys: &System,
    syscall: Option<&SyscallName>,
    attacker: Option<&str>,
    layout: &Layout,
    depth: usize,
    fuel: u64,
    exec: Exec,
) -> Result<Report, StructuralError> {
    let start = Instant::now();
    let mut r = Report::new("search", sys);
    r.layout(sys, layout);
    let groups: Vec<(String, Vec<SearchEntry>)> = match (attacker, syscall) {
        (Some(src), _) => {
            parse_attacker(src, sys).map_err(parse_err)?;
            vec![("attacker".to_string(), vec![SearchEntry::Attacker { source: src.to_string() }])]
        }
        (None, Some(s)) => vec![(s.to_string(), syscall_entries(sys, s)?)],
        (None, None) => sys
            .syscalls
            .keys()
            .map(|s| Ok((s.to_string(), syscall_entries(sys, s)?)))
            .collect::<Result<_, StructuralError>>()?,
    };
    for (name, entries) in groups {
        let v = search_entries(sys, layout, &entries, depth, DEFAULT_NODE_CAP, fuel, exec)?;
        if let Some(analysis::Witness::UnsafeDirectives { observations, .. }) = v.witness() {
            if r.observations.is_empty() {
                r.observations = observations.clone();
            }
        }
        r.verdict(format!("search {name} depth {depth}"), v);
    }
    r.replay = Some(Replay::Witnesses { fuel });
    Ok(timed(start, r))
}

/// Transforms `sys` and checks the result; returns the report and the
/// transformed system.
pub fn transform_report(
    sys: &System,
    kind: TransformKind,
    trials: u64,
    fuel: u64,
    depth: usize,
    seed: u64,
    exec: Exec,
) -> Result<(Report, System), StructuralError> {
    let start = Instant::now();
    let t = fence_system_with(sys, kind, &[]);
    let (pv, tally) = check_sem_preservation(sys, kind, trials, fuel, seed, exec)?;
    let layout = Layout::canonical(&t);
    let (sv, sks) = check_imposes_sks(&t, &layout, depth, DEFAULT_NODE_CAP, fuel, exec)?;
    let mut r = Report::new("transform", sys);
    r.seed = Some(seed);
    r.layout(&t, &layout);
    r.verdict(format!("semantics preservation over {trials} programs"), pv);
    r.verdict(format!("safety imposition depth {depth}"), sv);
    r.transform = Some(TransformReport {
        transform: kind,
        fences: fence_counts(&t),
        preservation: Some(tally),
        sks: Some(sks),
    });
    r.replay = Some(Replay::Witnesses { fuel });
    Ok((timed(start, r), t))
}

/// Result of replaying a report.
#[derive(Clone, PartialEq, Debug)]
pub struct ReplayCheck {
    pub matches: bool,
    pub details: Vec<String>,
}

/// Reruns the command recorded in `report` and compares the result with the
/// recorded one. Witnesses of transform reports are replayed against the
/// transformed system.
pub fn replay(report: &Report, exec: Exec) -> Result<ReplayCheck, StructuralError> {
    let sys = parse_system(&report.system_source).map_err(parse_err)?;
    let mut details = Vec::new();
    if digest(&sys) != report.system_digest {
        details.push("system digest differs".to_string());
    }
    match &report.replay {
        None => details.push("report carries no replay information".to_string()),
        Some(Replay::Run { attacker, layout, fuel }) => {
            let again = run_report(&sys, attacker, layout, *fuel, !report.trace.is_empty())?;
            if again.outcome != report.outcome {
                details.push("outcome differs".to_string());
            }
            if again.observations != report.observations {
                details.push("observations differ".to_string());
            }
            if again.trace != report.trace {
                details.push("trace differs".to_string());
            }
        }
        Some(Replay::Witnesses { fuel }) => {
            let target = match &report.transform {
                Some(t) => fence_system_with(&sys, t.transform, &[]),
                None => sys.clone(),
            };
            for v in &report.verdicts {
                let Some(w) = v.verdict.witness() else { continue };
                let against = match w {
                    analysis::Witness::Program { .. } => &sys,
                    _ => &target,
                };
                let again = analysis::replay(against, w, *fuel)?;
                if again != v.verdict {
                    details.push(format!("{}: replayed to {}", v.check, again.name()));
                }
            }
        }
        Some(Replay::Experiment { attacker, trials, fuel, seed }) => {
            let scheme = SlotScheme::for_system(&sys)?;
            let again = experiment_report(&sys, attacker, &scheme, *trials, *fuel, *seed, exec)?;
            if again.experiment != report.experiment {
                details.push("experiment tallies differ".to_string());
            }
        }
        Some(Replay::Delta { probe, trials, seed }) => {
            let scheme = SlotScheme::for_system(&sys)?;
            let again = delta_report(&sys, &scheme, Some(*probe), *trials, *seed, exec)?;
            if again.delta != report.delta {
                details.push("delta estimate differs".to_string());
            }
        }
    }
    Ok(ReplayCheck { matches: details.is_empty(), details })
}
