//! Named fixture systems and attackers, and end-to-end scenarios built on
//! them.

use crate::analysis::LayoutSet;
use crate::error::StructuralError;
use crate::layout::{Layout, SlotScheme};
use crate::par::Exec;
use crate::report::{self, Report};
use crate::syntax::{parse_attacker, parse_system};
use crate::system::System;
use crate::{Cmd, SyscallName};

/// `s1` leaks the address of `f` into `a`; `s2` calls whatever `a` holds.
pub const S_SCOPE: &str = "\
system {
  kernel array a[1];
  kernel proc f() { skip; }
  syscall s1() caps {a, f} { store a -> f; }
  syscall s2() caps {a} { load x <- a @l1; call x(); }
  space user 2 kernel 4;
}
";

/// `probe` calls its argument after running a legitimate handler.
pub const S_PROBE: &str = "\
system {
  kernel proc handler() { store table -> 1; }
  kernel array table[1];
  kernel proc secret1() { skip; }
  kernel proc secret2() { skip; }
  syscall probe(x1) caps {handler, table} { call handler(); call x1(); }
  space user 2 kernel 10;
}
";

/// Message passing: `send` stores a message and runs the callback hook
/// in `buf[3]`, `recv` reads a message back.
pub const S_MSG: &str = "\
system {
  user array ubuf[2];
  kernel array buf[4];
  kernel array log[2];
  kernel array secret[2] = [41, 42];
  kernel proc notify() { skip; }
  kernel proc cr4() { skip; }
  syscall recv(x1) caps {buf, log} {
    if ((0 <= x1) && (x1 < 2)) @bound { load ret <- (buf + x1) @rd; } else { ret := 0; }
    store log -> ret;
  }
  syscall send(x1, x2) caps {buf, notify} {
    if ((0 <= x1) && (x1 < 3)) @check { store (buf + x1) -> x2; } else {}
    load h <- (buf + 3) @hk;
    if (h != null) @cb { call h(); } else {}
    ret := 0;
  }
  syscall init() caps {buf, notify} { store (buf + 3) -> notify; }
  space user 4 kernel 12;
}
";

/// [`S_MSG`] with the bounds check of `send` missing.
pub const S_MSG_VULN: &str = "\
system {
  user array ubuf[2];
  kernel array buf[4];
  kernel array log[2];
  kernel array secret[2] = [41, 42];
  kernel proc notify() { skip; }
  kernel proc cr4() { skip; }
  syscall recv(x1) caps {buf, log} {
    if ((0 <= x1) && (x1 < 2)) @bound { load ret <- (buf + x1) @rd; } else { ret := 0; }
    store log -> ret;
  }
  syscall send(x1, x2) caps {buf, notify} {
    store (buf + x1) -> x2;
    load h <- (buf + 3) @hk;
    if (h != null) @cb { call h(); } else {}
    ret := 0;
  }
  syscall init() caps {buf, notify} { store (buf + 3) -> notify; }
  space user 4 kernel 12;
}
";

/// A branch on whether the argument equals the address of `f`, with a
/// loop on one side only.
pub const S_LEAK: &str = "\
system {
  kernel proc f() { skip; }
  syscall leak(x1) caps {f} {
    if (x1 == f) @guess { c := 0; while (c < 3) @spin { c := (c + 1); } } else { skip; }
    ret := 0;
  }
  space user 2 kernel 3;
}
";

/// A system call that calls `f` directly.
pub const S_FF: &str = "\
system {
  kernel proc f() { skip; }
  syscall s() caps {f} { call f(); }
  space user 2 kernel 3;
}
";

/// `s` returns the address of `f`; `z` returns a constant.
pub const RET_F: &str = "\
system {
  kernel proc f() { skip; }
  syscall s() caps {f} { ret := f; }
  syscall z() caps {} { ret := 0; }
  space user 2 kernel 6;
}
";

/// Register-only system call over a small kernel space, speculatively
/// non-interfering by construction.
pub const SLNI_TINY: &str = "\
system {
  kernel array d[1];
  syscall t(x1) caps {} {
    if (x1 < 2) @small { ret := (x1 + 1); } else { ret := 0; }
  }
  space user 2 kernel 3;
}
";

pub const FIXTURES: &[(&str, &str)] = &[
    ("s_scope", S_SCOPE),
    ("s_probe", S_PROBE),
    ("s_msg", S_MSG),
    ("s_msg_vuln", S_MSG_VULN),
    ("s_leak", S_LEAK),
    ("s_ff", S_FF),
    ("ret_f", RET_F),
    ("slni_tiny", SLNI_TINY),
];

pub fn fixture_source(name: &str) -> Option<&'static str> {
    FIXTURES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn fixture(name: &str) -> Option<System> {
    fixture_source(name).map(|s| parse_system(s).expect("fixtures parse"))
}

/// The scope-extrusion attack: leak `f` through `s1`, call it through `s2`.
pub const SCOPE_ATTACK: &str = "syscall s1(); syscall s2();\n";

/// Probes kernel address `addr` through `probe`.
pub fn probe_attacker(addr: usize) -> String {
    format!("syscall probe({addr});\n")
}

/// Mis-trains both the attacker's own guard and the bounds check of `recv`,
/// then reads `buf + index` transiently.
pub fn spectre_attacker(index: i64) -> String {
    format!(
        "poison branch(bound, true);\npoison branch(p, true);\nspec {{\n  if false @p {{\n    syscall recv({index});\n  }} else {{}}\n}}\nx := observe;\n"
    )
}

pub fn attacker(sys: &System, src: &str) -> Result<Cmd, StructuralError> {
    parse_attacker(src, sys).map_err(|e| StructuralError::Stuck(e.to_string()))
}

pub struct Scenario {
    pub name: &'static str,
    pub about: &'static str,
    pub expected_exit: i32,
}

pub const SCENARIOS: &[Scenario] = &[
    Scenario { name: "scope-extrusion", about: "s1 leaks the address of f, s2 calls it outside its capabilities", expected_exit: 1 },
    Scenario { name: "failed-probe", about: "probing an unallocated kernel address crashes with an error", expected_exit: 0 },
    Scenario { name: "probe-unsafe", about: "probing the address of a secret procedure is unsafe", expected_exit: 1 },
    Scenario { name: "probe-experiment", about: "10000 slot layouts against a single-address probe stay within the bound", expected_exit: 0 },
    Scenario { name: "layout-leak", about: "returning the address of f breaks layout non-interference", expected_exit: 1 },
    Scenario { name: "slni-ff", about: "a direct call leaks the callee address through a jump observation", expected_exit: 1 },
    Scenario { name: "slni-leak", about: "branching on a guessed address leaks through the branch observation", expected_exit: 1 },
    Scenario { name: "spectre-probe", about: "a mis-trained bounds check reveals an allocated kernel address", expected_exit: 0 },
    Scenario { name: "spectre-search", about: "directive search finds a transient out-of-capability load in recv", expected_exit: 1 },
    Scenario { name: "fence-msg", about: "the fenced message system preserves user semantics and imposes speculative safety", expected_exit: 0 },
];

pub fn scenario(name: &str) -> Option<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.name == name)
}

fn fx(name: &str) -> System {
    fixture(name).expect("known fixture")
}

/// Runs a named scenario end to end.
pub fn run_scenario(name: &str, exec: Exec) -> Result<Report, StructuralError> {
    let fuel = 10_000;
    let mut r = match name {
        "scope-extrusion" => {
            let sys = fx("s_scope");
            report::run_report(&sys, SCOPE_ATTACK, &Layout::canonical(&sys), fuel, true)?
        }
        "failed-probe" => {
            let sys = fx("s_probe");
            let target = sys.total_addresses() - 1;
            report::run_report(&sys, &probe_attacker(target), &Layout::canonical(&sys), fuel, true)?
        }
        "probe-unsafe" => {
            let sys = fx("s_probe");
            let l = Layout::canonical(&sys);
            let target = l.base(&"secret1".into()).expect("placed");
            report::run_report(&sys, &probe_attacker(target), &l, fuel, true)?
        }
        "probe-experiment" => {
            let sys = fx("s_probe");
            let scheme = SlotScheme::for_system(&sys)?;
            report::experiment_report(&sys, &probe_attacker(sys.kappa_user), &scheme, 10_000, fuel, 7, exec)?
        }
        "layout-leak" => {
            let sys = fx("ret_f");
            report::ni_report(&sys, &SyscallName::new("s"), LayoutSet::Enumerate { bound: 10_000 }, fuel, exec)?
        }
        "slni-ff" => {
            let sys = fx("s_ff");
            report::slni_report(&sys, &SyscallName::new("s"), LayoutSet::Enumerate { bound: 10_000 }, 6, exec)?
        }
        "slni-leak" => {
            let sys = fx("s_leak");
            report::slni_report(&sys, &SyscallName::new("leak"), LayoutSet::Enumerate { bound: 10_000 }, 6, exec)?
        }
        "spectre-probe" => {
            let sys = fx("s_msg_vuln");
            report::run_report(&sys, &spectre_attacker(2), &Layout::canonical(&sys), fuel, true)?
        }
        "spectre-search" => {
            let sys = fx("s_msg_vuln");
            report::search_report(&sys, Some(&SyscallName::new("recv")), None, &Layout::canonical(&sys), 8, fuel, exec)?
        }
        "fence-msg" => {
            let sys = fx("s_msg");
            report::transform_report(&sys, crate::analysis::TransformKind::Fence, 1000, 500, 8, 7, exec)?.0
        }
        other => return Err(StructuralError::Stuck(format!("unknown scenario `{other}`"))),
    };
    r.command = format!("scenario {name}");
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::validate_system;

    #[test]
    fn fixtures_are_valid() {
        for (name, _) in FIXTURES {
            assert_eq!(validate_system(&fx(name)), vec![], "{name}");
        }
    }

    #[test]
    fn attackers_parse() {
        attacker(&fx("s_scope"), SCOPE_ATTACK).unwrap();
        attacker(&fx("s_probe"), &probe_attacker(3)).unwrap();
        attacker(&fx("s_msg_vuln"), &spectre_attacker(-2)).unwrap();
    }
}
