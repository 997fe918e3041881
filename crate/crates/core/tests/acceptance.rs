//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::collections::{BTreeSet, HashSet, VecDeque};
use std::time::{Duration, Instant};

use rand::Rng;

use speckernel::analysis::{
    arg_sweep, check_layout_ni, check_slni, default_vectors, estimate_unsafe_probability, layouts, ni_values,
    search_entries, syscall_entries, LayoutSet, TransformKind, Verdict, Witness, DEFAULT_NODE_CAP,
};
use speckernel::attacker::attacker_run_in;
use speckernel::classic::{trace, ClassicConfig, Outcome};
use speckernel::gen::{random_kernel_program, random_system};
use speckernel::layout::{delta_bound_slots, enumerate_layouts, random_layout};
use speckernel::machine::{Mode, World};
use speckernel::par::{item_rng, Exec};
use speckernel::report::{self, Report};
use speckernel::scenarios::{self, fixture, spectre_attacker, SCENARIOS};
use speckernel::spec::{candidate_directives, reducible, spec_step_mut, BufferedMemory, SpecConfig, SpecStack};
use speckernel::syntax::parse_attacker;
use speckernel::transform::{check_imposes_sks, check_sem_preservation, fence_system};
use speckernel::{Directive, Layout, Memory, Observation, RegMap, Space, SyscallName, System, Value};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, format!("{what} took {t:?}, limit {limit:?}"))
}

fn sys(name: &str) -> System {
    fixture(name).expect("fixture")
}

// 1. Buffer laws, each against a plain list model of the buffer.
fn buffer_laws() -> Check {
    const ADDRS: usize = 16;
    let start = Instant::now();
    let mut rng = item_rng(1, 0);
    for trial in 0..10_000 {
        let mut mem = Memory::empty(ADDRS);
        let base: Vec<i64> = (0..ADDRS).map(|_| rng.gen_range(-5..5)).collect();
        for (a, v) in base.iter().enumerate() {
            mem.update(a, Value::Int(*v)).unwrap();
        }
        let n = rng.gen_range(0..=8);
        // Newest first.
        let entries: Vec<(usize, i64)> =
            (0..n).map(|_| (rng.gen_range(0..ADDRS), rng.gen_range(-50..50))).collect();
        let bm = BufferedMemory::with_entries(entries.iter().map(|(a, v)| (*a, Value::Int(*v))), mem);
        let flushed = bm.flush().map_err(|e| e.to_string())?;
        for (a, &old) in base.iter().enumerate() {
            let writes: Vec<i64> = entries.iter().filter(|(b, _)| *b == a).map(|(_, v)| *v).collect();
            for i in 0..=writes.len() + 1 {
                let expect = writes.get(i).copied().unwrap_or(old);
                let stale = i > 0 && !writes.is_empty();
                let got = bm.buf_read(a, i).map_err(|e| e.to_string())?;
                ensure(
                    got == (Value::Int(expect), stale),
                    format!("trial {trial}: buf_read({a}, {i}) = {got:?}, want {expect}"),
                )?;
            }
            let head = writes.first().copied().unwrap_or(old);
            ensure(
                flushed.value(a) == Some(&Value::Int(head)),
                format!("trial {trial}: flush at {a} is {:?}, want {head}", flushed.value(a)),
            )?;
            ensure(
                bm.buf_read(a, 0).unwrap().0 == *flushed.value(a).unwrap(),
                format!("trial {trial}: buf_read({a}, 0) differs from flush"),
            )?;
        }
    }
    within(start, Duration::from_secs(1), "buffer laws")?;
    Ok("10000 buffered memories".into())
}

// 2. Golden traces.
fn golden_traces() -> Check {
    fn rules(sys: &System, src: &str) -> Result<(Vec<String>, Outcome), String> {
        let c = parse_attacker(src, sys).map_err(|e| e.to_string())?;
        let t = trace(sys, &Layout::canonical(sys), &c, RegMap::new(), Mode::User, &sys.store, 100)
            .map_err(|e| e.to_string())?;
        Ok((t.steps.into_iter().map(|s| s.rule).collect(), t.outcome))
    }
    let scope = sys("s_scope");
    let (r, o) = rules(&scope, scenarios::SCOPE_ATTACK)?;
    ensure(
        r == ["SystemCall", "Store", "Pop", "SystemCall", "Load", "Call-Unsafe"],
        format!("scope trace {r:?}"),
    )?;
    ensure(o == Outcome::Unsafe, format!("scope outcome {o:?}"))?;

    let probe = sys("s_probe");
    let (r, o) = rules(&probe, &scenarios::probe_attacker(probe.total_addresses() - 1))?;
    ensure(r == ["SystemCall", "Call", "Store", "Pop", "Call-Error"], format!("probe trace {r:?}"))?;
    ensure(o == Outcome::Err, format!("probe outcome {o:?}"))?;

    // f is the only kernel object, so the canonical layout puts it at κ_u = 2.
    let ret = sys("ret_f");
    let (r, o) = rules(&ret, "syscall s(); y := (ret + 1); syscall z();")?;
    ensure(r == ["SystemCall", "Op", "Pop", "Op", "SystemCall", "Op", "Pop"], format!("ret trace {r:?}"))?;
    ensure(matches!(&o, Outcome::Done { value: Value::Int(0), .. }), format!("ret outcome {o:?}"))?;
    let (_, o) = rules(&ret, "syscall z(); syscall s();")?;
    ensure(matches!(&o, Outcome::Done { value: Value::Int(2), .. }), format!("ret outcome {o:?}"))?;
    let (_, o) = rules(&ret, "syscall s(); ret := (ret + 1);")?;
    ensure(matches!(&o, Outcome::Done { value: Value::Int(3), .. }), format!("ret outcome {o:?}"))?;
    Ok("scope, probe and return traces".into())
}

fn flag_free_match(k: &SpecConfig, c: &ClassicConfig) -> Result<bool, String> {
    Ok(match (k, c) {
        (SpecConfig::Running { frames: f1, bm, misspec: false }, ClassicConfig::Running { frames: f2, mem }) => {
            f1 == f2 && bm.flush().map_err(|e| e.to_string())? == *mem
        }
        (SpecConfig::Err { misspec: false }, ClassicConfig::Err) => true,
        (SpecConfig::Unsafe, ClassicConfig::Unsafe) => true,
        _ => false,
    })
}

// 3. Step-only speculative runs track the classic semantics.
fn dstep_equivalence() -> Check {
    let start = Instant::now();
    let mut steps = 0usize;
    let mut ends = [0; 3];
    for i in 0..500u64 {
        let mut rng = item_rng(3, i);
        let mut s = random_system(&mut rng);
        let c = random_kernel_program(&s, &mut rng, 20);
        let layout = random_layout(&s, &mut rng).map_err(|e| e.to_string())?;
        let name = s.syscalls.keys().next().cloned().unwrap_or_else(|| SyscallName::new("s0"));
        if i % 2 == 0 {
            // Half the runs may touch every kernel object.
            let all = s.objects_in(Space::Kernel).map(|o| o.name.clone()).collect();
            s.caps.insert(name.clone(), all);
        }
        let w = World::new(&s, &layout).map_err(|e| e.to_string())?;
        let mode = Mode::Kernel(name);
        let mut classic = ClassicConfig::initial(&w, c.clone(), RegMap::new(), mode.clone(), &s.store)
            .map_err(|e| e.to_string())?;
        let mut k = SpecStack::singleton(
            SpecConfig::initial(&w, c, RegMap::new(), mode, &s.store).map_err(|e| e.to_string())?,
        );
        for n in 0..200 {
            ensure(flag_free_match(k.top(), &classic)?, format!("program {i}: states differ after {n} steps"))?;
            let more = reducible(&k, &Directive::Step);
            ensure(more == !classic.is_terminal(), format!("program {i}: termination differs at step {n}"))?;
            if !more {
                break;
            }
            spec_step_mut(&w, &mut k, &Directive::Step).map_err(|e| e.to_string())?;
            classic.step(&w).map_err(|e| e.to_string())?;
            steps += 1;
        }
        match classic {
            ClassicConfig::Running { .. } => ends[0] += 1,
            ClassicConfig::Err => ends[1] += 1,
            ClassicConfig::Unsafe => ends[2] += 1,
        }
        ensure(k.len() == 1, format!("program {i}: step-only run grew the stack"))?;
    }
    within(start, Duration::from_secs(10), "step equivalence")?;
    Ok(format!("500 programs, {steps} steps; {} done, {} err, {} unsafe", ends[0], ends[1], ends[2]))
}

// 4. Monte Carlo against the slot bound for the probing attacker.
fn slot_bound_experiment() -> Check {
    let start = Instant::now();
    let s = sys("s_probe");
    let scheme = speckernel::SlotScheme::for_system(&s).map_err(|e| e.to_string())?;
    let slots = s.kappa_kernel / scheme.theta;
    let ids = s.objects_in(Space::Kernel).count();
    let refs = 2; // handler and table
    ensure((slots, ids) == (10, 4), format!("{slots} slots, {ids} kernel ids"))?;
    let delta = delta_bound_slots(&s, &scheme).map_err(|e| e.to_string())?;
    let expect = num_rational::Ratio::new((slots - ids) as u64, (slots - refs) as u64);
    ensure(delta == expect, format!("bound {delta}, want {expect}"))?;

    let trials = 10_000u64;
    let prog = parse_attacker(&scenarios::probe_attacker(s.kappa_user), &s).map_err(|e| e.to_string())?;
    let e = estimate_unsafe_probability(&s, &prog, &scheme, trials, 10_000, 4, Exec::default())
        .map_err(|e| e.to_string())?;
    let rate = e.empirical_rate.ok_or("no rate")?;
    let bound = 1.0 - 0.75;
    let limit = bound + 3.0 * (bound * (1.0 - bound) / trials as f64).sqrt();
    ensure((e.bound - bound).abs() < 1e-12, format!("reported bound {}", e.bound))?;
    ensure(rate <= limit, format!("empirical {rate} above {limit}"))?;
    // Exactly two of the ten slots hold a secret procedure.
    let exact = 2.0 / 10.0;
    let sigma = (exact * (1.0 - exact) / trials as f64).sqrt();
    ensure((rate - exact).abs() <= 4.0 * sigma, format!("empirical {rate} far from {exact}"))?;
    ensure(e.trials == trials && e.unsafe_count + e.err_count + e.done_count == trials, "tallies")?;
    within(start, Duration::from_secs(10), "experiment")?;
    Ok(format!("delta {delta}, empirical {rate:.4} <= {limit:.4}"))
}

// 5. Layout non-interference verdicts.
fn layout_ni() -> Check {
    let s = sys("ret_f");
    let all = enumerate_layouts(&s, 1000).map_err(|e| e.to_string())?;
    ensure(all.len() == s.kappa_kernel, format!("{} layouts", all.len()))?;
    let check = |name: &str| -> Result<Verdict, String> {
        let n = SyscallName::new(name);
        let vs = default_vectors(&s, &n, 4096).map_err(|e| e.to_string())?;
        check_layout_ni(&s, &n, &all, &vs, 1000, Exec::default()).map_err(|e| e.to_string())
    };
    let leak = check("s")?;
    ensure(leak.violated(), format!("ret := f gave {leak}"))?;
    let Some(Witness::LayoutPair { layouts, outcomes, .. }) = leak.witness() else {
        return Err("witness is not a layout pair".into());
    };
    let f = "f".into();
    ensure(
        outcomes[0] == format!("done {}", layouts[0].base(&f).unwrap())
            && outcomes[1] == format!("done {}", layouts[1].base(&f).unwrap()),
        format!("witness outcomes {outcomes:?}"),
    )?;
    let ok = check("z")?;
    ensure(ok.holds(), format!("ret := 0 gave {ok}"))?;
    Ok(format!("violated and holds over {} layouts", all.len()))
}

// 6. Speculative non-interference.
fn slni() -> Check {
    let ff = sys("s_ff");
    let s = SyscallName::new("s");
    let ls = layouts(&ff, LayoutSet::Enumerate { bound: 1000 }).map_err(|e| e.to_string())?;
    let v = check_slni(&ff, &s, &ls, &[RegMap::new()], 6, DEFAULT_NODE_CAP, Exec::default())
        .map_err(|e| e.to_string())?;
    let Some(Witness::ObservationMismatch { layouts: pair, observations, .. }) = v.witness() else {
        return Err(format!("s_ff gave {v}"));
    };
    let f = "f".into();
    let jumps: Vec<_> = (0..2)
        .map(|i| observations[i].iter().find(|o| matches!(o, Observation::Jump { .. })).copied())
        .collect();
    ensure(
        jumps[0] == Some(Observation::Jump { addr: pair[0].base(&f).unwrap() })
            && jumps[1] == Some(Observation::Jump { addr: pair[1].base(&f).unwrap() }),
        format!("jump observations {jumps:?}"),
    )?;

    let tiny = sys("slni_tiny");
    let kernel_size: usize = tiny.objects_in(Space::Kernel).map(|o| o.size()).sum();
    let max = tiny.objects_in(Space::Kernel).map(|o| o.size()).max().unwrap_or(0);
    ensure(tiny.kappa_kernel >= kernel_size + 2 * max, "size condition")?;
    let t = SyscallName::new("t");
    let ls = layouts(&tiny, LayoutSet::Enumerate { bound: 1000 }).map_err(|e| e.to_string())?;
    let inputs = arg_sweep(1, &ni_values(&tiny));
    let v = check_slni(&tiny, &t, &ls, &inputs, 6, DEFAULT_NODE_CAP, Exec::default()).map_err(|e| e.to_string())?;
    ensure(v.holds(), format!("tiny system gave {v}"))?;
    for l in &ls {
        let entries = syscall_entries(&tiny, &t).map_err(|e| e.to_string())?;
        let v = search_entries(&tiny, l, &entries, 6, DEFAULT_NODE_CAP, 1000, Exec::default())
            .map_err(|e| e.to_string())?;
        ensure(v.holds(), format!("search on tiny system gave {v}"))?;
    }
    Ok(format!("s_ff leaks through jumps; tiny system holds over {} layouts", ls.len()))
}

fn footprints(s: &System, l: &Layout) -> Vec<(String, bool, BTreeSet<usize>)> {
    s.objects()
        .iter()
        .map(|o| {
            let b = l.base(&o.name).unwrap();
            (o.name.to_string(), o.is_array(), (b..b + o.size()).collect())
        })
        .collect()
}

// 7. The poisoned probe reveals exactly the allocated data cells.
fn probing_sweep() -> Check {
    let s = sys("s_msg_vuln");
    let mut ls = vec![Layout::canonical(&s)];
    for i in 0..20 {
        ls.push(random_layout(&s, &mut item_rng(7, i)).map_err(|e| e.to_string())?);
    }
    let mut cases = 0;
    for l in &ls {
        let w = World::new(&s, l).map_err(|e| e.to_string())?;
        let fp = footprints(&s, l);
        let owner = |a: usize| fp.iter().find(|(_, _, cells)| cells.contains(&a));
        let sweep: Vec<usize> = (s.kappa_user..s.total_addresses())
            .filter(|a| owner(*a).is_none_or(|(n, _, _)| n != "secret"))
            .collect();
        ensure(sweep.len() == 10, format!("sweep of {} addresses", sweep.len()))?;
        let buf = l.base(&"buf".into()).unwrap() as i64;
        let mut outcome = None;
        for a in sweep {
            let prog = parse_attacker(&spectre_attacker(a as i64 - buf), &s).map_err(|e| e.to_string())?;
            let run = attacker_run_in(&w, &prog, RegMap::new(), 10_000, false).map_err(|e| e.to_string())?;
            let allocated = owner(a).is_some_and(|(n, _, _)| n == "buf" || n == "log");
            let seen = run.log.contains(&Observation::Mem { addr: a });
            ensure(seen == allocated, format!("address {a}: observed {seen}, allocated {allocated}"))?;
            match &outcome {
                None => outcome = Some(run.outcome),
                Some(o) => ensure(*o == run.outcome, format!("address {a}: outcome differs"))?,
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} probes over {} layouts", ls.len()))
}

// 8. Fencing the message system.
fn fence_pipeline() -> Check {
    let start = Instant::now();
    let s = sys("s_msg");
    let fenced = fence_system(&s);
    let (v, tally) = check_sem_preservation(&s, TransformKind::Fence, 1000, 500, 8, Exec::default())
        .map_err(|e| e.to_string())?;
    ensure(v.holds() && tally.mismatched == 0 && tally.trials == 1000, format!("preservation: {v}"))?;
    let l = Layout::canonical(&fenced);
    let (v, sks) = check_imposes_sks(&fenced, &l, 8, DEFAULT_NODE_CAP, 10_000, Exec::default())
        .map_err(|e| e.to_string())?;
    ensure(v.holds() && sks.unconfirmed == 0 && sks.capped == 0, format!("imposition: {v}"))?;

    let buf = l.base(&"buf".into()).unwrap();
    let probe = |sys: &System| -> Result<bool, String> {
        let w = World::new(sys, &l).map_err(|e| e.to_string())?;
        let prog = parse_attacker(&spectre_attacker(2), sys).map_err(|e| e.to_string())?;
        let run = attacker_run_in(&w, &prog, RegMap::new(), 10_000, false).map_err(|e| e.to_string())?;
        Ok(run.log.contains(&Observation::Mem { addr: buf + 2 }))
    };
    ensure(probe(&s)?, "the probe sees nothing on the original system")?;
    ensure(!probe(&fenced)?, "the probe still sees buf+2 after fencing")?;
    within(start, Duration::from_secs(60), "fence pipeline")?;
    Ok(format!("{} unsafe states confirmed, {} entries", sks.confirmed, sks.entries))
}

fn stack_key(k: &SpecStack) -> Option<SpecConfig> {
    match k.top() {
        c @ (SpecConfig::Running { misspec: false, .. } | SpecConfig::Err { misspec: false }) => Some(c.clone()),
        _ => None,
    }
}

// 9. Anything reachable with a clear flag is reachable by stepping alone.
fn backtrack_elimination() -> Check {
    const DEPTH: usize = 12;
    let mut roots = 0;
    let mut tops = 0;
    for name in ["s_msg", "s_msg_vuln", "s_scope", "s_probe", "s_leak", "s_ff"] {
        let s = sys(name);
        let l = Layout::canonical(&s);
        let w = World::new(&s, &l).map_err(|e| e.to_string())?;
        for (sc, def) in &s.syscalls {
            let mut values = vec![Value::Int(0), Value::Int(2)];
            values.extend(s.objects().iter().map(|o| Value::Int(l.base(&o.name).unwrap() as i64)));
            for regs in arg_sweep(def.arity, &values) {
                let init = SpecConfig::initial(&w, def.body.clone(), regs, Mode::Kernel(sc.clone()), &s.store)
                    .map_err(|e| e.to_string())?;
                let mut stepped = HashSet::new();
                let mut k = SpecStack::singleton(init.clone());
                stepped.insert(k.top().clone());
                for _ in 0..DEPTH {
                    if !reducible(&k, &Directive::Step) {
                        break;
                    }
                    spec_step_mut(&w, &mut k, &Directive::Step).map_err(|e| e.to_string())?;
                    stepped.insert(k.top().clone());
                }
                let root = SpecStack::singleton(init);
                let mut seen = HashSet::from([root.clone()]);
                let mut queue = VecDeque::from([(root, 0)]);
                while let Some((k, d)) = queue.pop_front() {
                    if let Some(top) = stack_key(&k) {
                        tops += 1;
                        ensure(stepped.contains(&top), format!("{name}/{sc}: flag-free state not reachable by steps"))?;
                    }
                    if d == DEPTH {
                        continue;
                    }
                    for dir in candidate_directives(&w, &k) {
                        if !reducible(&k, &dir) {
                            continue;
                        }
                        let mut n = k.clone();
                        spec_step_mut(&w, &mut n, &dir).map_err(|e| e.to_string())?;
                        if seen.insert(n.clone()) {
                            queue.push_back((n, d + 1));
                        }
                    }
                }
                roots += 1;
            }
        }
    }
    Ok(format!("{roots} entry states, {tops} flag-free tops"))
}

// 10. Reports of violations replay to identical verdicts.
fn replay_determinism() -> Check {
    let mut replayed = 0;
    for sc in SCENARIOS {
        let r = scenarios::run_scenario(sc.name, Exec::default()).map_err(|e| e.to_string())?;
        ensure(r.exit_code() == sc.expected_exit, format!("{}: exit {}", sc.name, r.exit_code()))?;
        if r.exit_code() != 1 {
            continue;
        }
        let back = Report::from_json(&r.to_json()).map_err(|e| e.to_string())?;
        ensure(back == r, format!("{}: json round trip", sc.name))?;
        let check = report::replay(&back, Exec::Sequential).map_err(|e| e.to_string())?;
        ensure(check.matches, format!("{}: {:?}", sc.name, check.details))?;
        let again = scenarios::run_scenario(sc.name, Exec::Sequential).map_err(|e| e.to_string())?;
        ensure(
            again.verdicts == r.verdicts && again.outcome == r.outcome && again.observations == r.observations,
            format!("{}: rerun differs", sc.name),
        )?;
        replayed += 1;
    }
    ensure(replayed >= 6, format!("only {replayed} violating scenarios"))?;
    Ok(format!("{replayed} violating scenarios replayed"))
}

fn main() {
    let checks: [Criterion; 10] = [
        ("buffer laws", buffer_laws),
        ("classic golden traces", golden_traces),
        ("step-only equivalence", dstep_equivalence),
        ("slot bound monte carlo", slot_bound_experiment),
        ("layout non-interference", layout_ni),
        ("speculative non-interference", slni),
        ("probing sweep", probing_sweep),
        ("fence pipeline", fence_pipeline),
        ("backtrack elimination", backtrack_elimination),
        ("replay determinism", replay_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({:.2?})", i + 1, start.elapsed()),
            Err(e) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {e}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
