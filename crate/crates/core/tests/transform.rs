use speckernel::analysis::{replay, TransformKind, Verdict};
use speckernel::gen::{random_kernel_program, random_system};
use speckernel::par::{item_rng, Exec};
use speckernel::scenarios::fixture;
use speckernel::transform::{
    changed_syscalls, check_imposes_sks, check_sem_preservation, count_fences, erase_fences, fence_cmd,
    fence_coalesced, fence_counts, fence_system, fence_system_with, normalize_fences,
};
use speckernel::{Cmd, Instr, Layout, SyscallName};

fn accesses(c: &Cmd) -> usize {
    let mut n = 0;
    c.walk(&mut |i| {
        if matches!(i, Instr::Load { .. } | Instr::Store { .. } | Instr::Call { .. }) {
            n += 1;
        }
    });
    n
}

#[test]
fn fence_count_matches_memory_accesses() {
    let sys = fixture("s_msg").unwrap();
    let counts = fence_counts(&fence_system(&sys));
    for (name, def) in &sys.syscalls {
        assert_eq!(counts[&format!("syscall {name}")], accesses(&def.body), "{name}");
    }
    assert_eq!(counts["syscall recv"], 2);
    assert_eq!(counts["syscall send"], 3);
}

#[test]
fn fences_erase_to_the_original() {
    for i in 0..300 {
        let mut rng = item_rng(21, i);
        let sys = random_system(&mut rng);
        let c = random_kernel_program(&sys, &mut rng, 12);
        let plain = erase_fences(&c);
        assert_eq!(erase_fences(&fence_cmd(&c)), plain, "program {i}");
        assert_eq!(erase_fences(&fence_coalesced(&c)), plain, "program {i}");
        assert!(count_fences(&fence_coalesced(&plain)) <= count_fences(&fence_cmd(&plain)));
        assert_eq!(count_fences(&fence_cmd(&plain)), accesses(&plain));
        let twice = fence_cmd(&fence_cmd(&plain));
        assert_eq!(normalize_fences(&twice), fence_cmd(&plain), "program {i}");
    }
}

#[test]
fn coalesced_fences_preserve_and_impose() {
    let sys = fixture("s_msg").unwrap();
    let t = fence_system_with(&sys, TransformKind::Coalesced, &[]);
    assert_eq!(changed_syscalls(&sys, &t).len(), 3);
    let (v, tally) = check_sem_preservation(&sys, TransformKind::Coalesced, 300, 500, 3, Exec::default()).unwrap();
    assert!(v.holds(), "{v}");
    assert_eq!(tally.matched, 300);
    let (v, _) = check_imposes_sks(&t, &Layout::canonical(&t), 8, 1_000_000, 10_000, Exec::default()).unwrap();
    assert!(v.holds(), "{v}");
}

#[test]
fn unfenced_system_fails_imposition() {
    let sys = fixture("s_msg").unwrap();
    let (v, tally) = check_imposes_sks(&sys, &Layout::canonical(&sys), 8, 1_000_000, 10_000, Exec::default()).unwrap();
    assert!(v.violated(), "{v}");
    assert!(tally.unconfirmed > 0);
    assert_eq!(replay(&sys, v.witness().unwrap(), 10_000).unwrap(), v);
}

#[test]
fn skipping_a_syscall_leaves_it_unsafe() {
    let sys = fixture("s_msg").unwrap();
    let t = fence_system_with(&sys, TransformKind::Fence, &[SyscallName::new("recv")]);
    assert_eq!(t.syscalls[&SyscallName::new("recv")], sys.syscalls[&SyscallName::new("recv")]);
    let (v, _) = check_imposes_sks(&t, &Layout::canonical(&t), 8, 1_000_000, 10_000, Exec::default()).unwrap();
    assert!(v.violated(), "{v}");
}

#[test]
fn dropping_stores_is_caught() {
    let sys = fixture("s_msg").unwrap();
    let (v, tally) =
        check_sem_preservation(&sys, TransformKind::DropKernelStores, 3000, 500, 3, Exec::default()).unwrap();
    let Verdict::Violated { witness } = &v else { panic!("{v}") };
    assert!(tally.mismatched > 0);
    assert_eq!(replay(&sys, witness, 500).unwrap(), v);
}
