//! Stores, systems, capabilities and static well-formedness.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::StructuralError;
use crate::lang::{ids_of, Cmd, Ident, Instr, Label, SyscallName, Value, ARG_REGS};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub enum Space {
    User,
    Kernel,
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Space::User => "user",
            Space::Kernel => "kernel",
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum ObjKind {
    Array { size: usize },
    Proc,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Object {
    pub name: Ident,
    pub space: Space,
    pub kind: ObjKind,
}

impl Object {
    /// Number of addresses the object occupies; procedures take one.
    pub fn size(&self) -> usize {
        match self.kind {
            ObjKind::Array { size } => size,
            ObjKind::Proc => 1,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self.kind, ObjKind::Array { .. })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Content {
    Array(Vec<Value>),
    Proc(Cmd),
}

/// Identifier contents: arrays map to value vectors, procedures to code.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Store(BTreeMap<Ident, Content>);

impl Store {
    pub fn new() -> Self {
        Store(BTreeMap::new())
    }

    pub fn get(&self, id: &Ident) -> Option<&Content> {
        self.0.get(id)
    }

    pub fn insert(&mut self, id: Ident, c: Content) {
        self.0.insert(id, c);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, &Content)> {
        self.0.iter()
    }

    pub fn array(&self, id: &Ident) -> Option<&[Value]> {
        match self.0.get(id) {
            Some(Content::Array(v)) => Some(v),
            _ => None,
        }
    }

    pub fn proc_body(&self, id: &Ident) -> Option<&Cmd> {
        match self.0.get(id) {
            Some(Content::Proc(c)) => Some(c),
            _ => None,
        }
    }

    /// True when both stores agree on every identifier in `ids`.
    pub fn agrees_on<'a>(&self, other: &Store, ids: impl IntoIterator<Item = &'a Ident>) -> bool {
        ids.into_iter().all(|i| self.0.get(i) == other.0.get(i))
    }
}

/// `σ[(a, i) ↦ v]`.
pub fn store_update(store: &Store, a: &Ident, i: usize, v: Value) -> Result<Store, StructuralError> {
    let mut out = store.clone();
    match out.0.get_mut(a) {
        Some(Content::Array(cells)) => {
            let size = cells.len();
            let cell = cells.get_mut(i).ok_or_else(|| StructuralError::OutOfBounds {
                array: a.clone(),
                index: i,
                size,
            })?;
            *cell = v;
            Ok(out)
        }
        Some(Content::Proc(_)) => Err(StructuralError::NotAnArray(a.clone())),
        None => Err(StructuralError::UnknownIdent(a.clone())),
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct SyscallDef {
    /// Declared argument count, passed in `x1..xn`.
    pub arity: usize,
    pub body: Cmd,
}

/// A system: objects with their initial store, system calls and
/// capabilities, plus the sizes of both address spaces.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct System {
    objects: Vec<Object>,
    index: BTreeMap<Ident, usize>,
    pub store: Store,
    pub syscalls: BTreeMap<SyscallName, SyscallDef>,
    pub caps: BTreeMap<SyscallName, BTreeSet<Ident>>,
    pub kappa_user: usize,
    pub kappa_kernel: usize,
}

impl System {
    pub fn new(kappa_user: usize, kappa_kernel: usize) -> Self {
        System {
            objects: Vec::new(),
            index: BTreeMap::new(),
            store: Store::new(),
            syscalls: BTreeMap::new(),
            caps: BTreeMap::new(),
            kappa_user,
            kappa_kernel,
        }
    }

    pub fn total_addresses(&self) -> usize {
        self.kappa_user + self.kappa_kernel
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    pub fn object(&self, id: &Ident) -> Option<&Object> {
        self.index.get(id).map(|&i| &self.objects[i])
    }

    pub fn object_index(&self, id: &Ident) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn objects_in(&self, space: Space) -> impl Iterator<Item = &Object> {
        self.objects.iter().filter(move |o| o.space == space)
    }

    fn declare(&mut self, name: Ident, space: Space, kind: ObjKind, content: Content) {
        if let Some(&i) = self.index.get(&name) {
            self.objects[i] = Object { name: name.clone(), space, kind };
        } else {
            self.index.insert(name.clone(), self.objects.len());
            self.objects.push(Object { name: name.clone(), space, kind });
        }
        self.store.insert(name, content);
    }

    pub fn add_array(&mut self, name: &str, space: Space, init: Vec<Value>) -> &mut Self {
        let size = init.len();
        self.declare(Ident::new(name), space, ObjKind::Array { size }, Content::Array(init));
        self
    }

    pub fn add_null_array(&mut self, name: &str, space: Space, size: usize) -> &mut Self {
        self.add_array(name, space, vec![Value::Null; size])
    }

    pub fn add_proc(&mut self, name: &str, space: Space, body: Cmd) -> &mut Self {
        self.declare(Ident::new(name), space, ObjKind::Proc, Content::Proc(body));
        self
    }

    pub fn add_syscall(&mut self, name: &str, arity: usize, caps: &[&str], body: Cmd) -> &mut Self {
        let n = SyscallName::new(name);
        self.syscalls.insert(n.clone(), SyscallDef { arity, body });
        self.caps
            .insert(n, caps.iter().map(Ident::new).collect());
        self
    }

    pub fn syscall_body(&self, s: &SyscallName) -> Result<&Cmd, StructuralError> {
        self.syscalls
            .get(s)
            .map(|d| &d.body)
            .ok_or_else(|| StructuralError::UnknownSyscall(s.clone()))
    }

    pub fn caps_of(&self, s: &SyscallName) -> &BTreeSet<Ident> {
        static EMPTY: BTreeSet<Ident> = BTreeSet::new();
        self.caps.get(s).unwrap_or(&EMPTY)
    }

    pub fn ids_in(&self, space: Space) -> BTreeSet<Ident> {
        self.objects_in(space).map(|o| o.name.clone()).collect()
    }

    pub fn proc_ids(&self) -> BTreeSet<Ident> {
        self.objects
            .iter()
            .filter(|o| !o.is_array())
            .map(|o| o.name.clone())
            .collect()
    }

    /// Every command of the system: procedure bodies then syscall bodies.
    pub fn commands(&self) -> Vec<(String, &Cmd)> {
        let mut out = Vec::new();
        for o in &self.objects {
            if let Some(c) = self.store.proc_body(&o.name) {
                out.push((format!("proc {}", o.name), c));
            }
        }
        for (s, d) in &self.syscalls {
            out.push((format!("syscall {s}"), &d.body));
        }
        out
    }

    pub fn with_store(&self, store: Store) -> System {
        System { store, ..self.clone() }
    }
}

/// Result of [`refs`]: identifiers and system calls reachable from a command.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct Refs {
    pub ids: BTreeSet<Ident>,
    pub syscalls: BTreeSet<SyscallName>,
}

/// Least set containing the identifiers and system calls of `c`, closed
/// under the identifiers of referenced procedure and system call bodies.
pub fn refs(sys: &System, c: &Cmd) -> Result<Refs, StructuralError> {
    let mut out = Refs {
        ids: ids_of(c),
        syscalls: c.syscalls(),
    };
    let mut work: Vec<Cmd> = Vec::new();
    for s in &out.syscalls {
        work.push(sys.syscall_body(s)?.clone());
    }
    let mut pending: Vec<Ident> = out.ids.iter().cloned().collect();
    loop {
        while let Some(id) = pending.pop() {
            if sys.object(&id).is_none() {
                return Err(StructuralError::UnknownIdent(id));
            }
            if let Some(body) = sys.store.proc_body(&id) {
                work.push(body.clone());
            }
        }
        let Some(body) = work.pop() else { break };
        for id in ids_of(&body) {
            if out.ids.insert(id.clone()) {
                pending.push(id);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    CapsMissing { syscall: SyscallName, id: Ident },
    CapsNotKernel { syscall: SyscallName, id: Ident },
    PrivilegedUserCode { proc: Ident, id: Ident },
    SpaceTooSmall { space: Space, needed: usize, available: usize },
    UnknownIdent { context: String, id: Ident },
    UnknownSyscall { context: String, name: SyscallName },
    ArraySize { id: Ident },
    TooManyArgs { context: String },
    AttackerInstr { context: String },
    DuplicateLabel { label: Label, first: String, second: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CapsMissing { syscall, id } => write!(f, "caps-missing {id} (syscall {syscall})"),
            Violation::CapsNotKernel { syscall, id } => {
                write!(f, "caps-not-kernel {id} (syscall {syscall})")
            }
            Violation::PrivilegedUserCode { proc, id } => {
                write!(f, "privileged-user-code {proc} mentions {id}")
            }
            Violation::SpaceTooSmall { space, needed, available } => {
                write!(f, "space-too-small {space}: need {needed}, have {available}")
            }
            Violation::UnknownIdent { context, id } => write!(f, "unknown-identifier {id} in {context}"),
            Violation::UnknownSyscall { context, name } => {
                write!(f, "unknown-syscall {name} in {context}")
            }
            Violation::ArraySize { id } => write!(f, "array-size-mismatch {id}"),
            Violation::TooManyArgs { context } => write!(f, "too-many-args in {context}"),
            Violation::AttackerInstr { context } => write!(f, "attacker-instruction in {context}"),
            Violation::DuplicateLabel { label, first, second } => {
                write!(f, "duplicate-label {label} at {first} and {second}")
            }
        }
    }
}

fn too_many_args(c: &Cmd) -> bool {
    let mut bad = false;
    c.walk(&mut |i| match i {
        Instr::Call { args, .. } | Instr::Syscall { args, .. } => bad |= args.len() > ARG_REGS,
        _ => {}
    });
    bad
}

/// Reports every label occurring twice across the system's commands (and
/// `extra`, e.g. an attacker program), with both occurrence paths.
pub fn label_check_with(sys: &System, extra: &[(String, &Cmd)]) -> Vec<Violation> {
    let mut seen: BTreeMap<Label, String> = BTreeMap::new();
    let mut out = Vec::new();
    let cmds = sys.commands();
    for (ctx, c) in cmds.iter().map(|(s, c)| (s, *c)).chain(extra.iter().map(|(s, c)| (s, *c))) {
        for l in c.labels() {
            if let Some(first) = seen.get(&l) {
                out.push(Violation::DuplicateLabel {
                    label: l.clone(),
                    first: first.clone(),
                    second: ctx.clone(),
                });
            } else {
                seen.insert(l, ctx.clone());
            }
        }
    }
    out
}

pub fn label_check(sys: &System) -> Vec<Violation> {
    label_check_with(sys, &[])
}

/// Checks every static well-formedness condition of a system. An empty
/// report means the system is valid.
pub fn validate_system(sys: &System) -> Vec<Violation> {
    let mut out = Vec::new();
    for space in [Space::User, Space::Kernel] {
        let needed: usize = sys.objects_in(space).map(Object::size).sum();
        let available = match space {
            Space::User => sys.kappa_user,
            Space::Kernel => sys.kappa_kernel,
        };
        if needed > available {
            out.push(Violation::SpaceTooSmall { space, needed, available });
        }
    }
    for o in sys.objects() {
        match (o.kind, sys.store.get(&o.name)) {
            (ObjKind::Array { size }, Some(Content::Array(v))) if v.len() == size => {}
            (ObjKind::Proc, Some(Content::Proc(_))) => {}
            _ => out.push(Violation::ArraySize { id: o.name.clone() }),
        }
    }
    for (ctx, c) in sys.commands() {
        if !c.is_victim_code() {
            out.push(Violation::AttackerInstr { context: ctx.clone() });
        }
        if too_many_args(c) {
            out.push(Violation::TooManyArgs { context: ctx.clone() });
        }
        for id in ids_of(c) {
            if sys.object(&id).is_none() {
                out.push(Violation::UnknownIdent { context: ctx.clone(), id });
            }
        }
        for name in c.syscalls() {
            if !sys.syscalls.contains_key(&name) {
                out.push(Violation::UnknownSyscall { context: ctx.clone(), name });
            }
        }
    }
    for o in sys.objects_in(Space::User) {
        if let Some(body) = sys.store.proc_body(&o.name) {
            for id in ids_of(body) {
                if sys.object(&id).is_some_and(|x| x.space == Space::Kernel) {
                    out.push(Violation::PrivilegedUserCode { proc: o.name.clone(), id });
                }
            }
        }
    }
    let structurally_ok = out.is_empty();
    for (s, def) in &sys.syscalls {
        let caps = sys.caps_of(s);
        for id in caps {
            if sys.object(id).map(|o| o.space) != Some(Space::Kernel) {
                out.push(Violation::CapsNotKernel { syscall: s.clone(), id: id.clone() });
            }
        }
        if structurally_ok {
            if let Ok(r) = refs(sys, &def.body) {
                for id in r.ids.difference(caps) {
                    out.push(Violation::CapsMissing { syscall: s.clone(), id: id.clone() });
                }
            }
        }
    }
    out.extend(label_check(sys));
    out
}

/// Validates and turns a non-empty report into an error.
pub fn ensure_valid(sys: &System) -> Result<(), StructuralError> {
    let v = validate_system(sys);
    if v.is_empty() {
        Ok(())
    } else {
        Err(StructuralError::InvalidSystem(
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; "),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{Expr, Instr, Label, Reg};

    fn store_a_f() -> Cmd {
        Cmd::new(vec![Instr::Store {
            addr: Expr::id("a"),
            value: Expr::int(1),
        }])
    }

    fn call(f: &str) -> Cmd {
        Cmd::new(vec![Instr::Call {
            target: Expr::id(f),
            args: vec![],
        }])
    }

    #[test]
    fn refs_examples() {
        let mut sys = System::new(4, 8);
        sys.add_null_array("a", Space::Kernel, 1)
            .add_proc("f", Space::Kernel, store_a_f())
            .add_proc("g", Space::Kernel, call("g"));
        assert_eq!(refs(&sys, &Cmd::nil()).unwrap(), Refs::default());
        let r = refs(&sys, &call("f")).unwrap();
        assert_eq!(r.ids, ["a", "f"].iter().map(Ident::new).collect());
        let r = refs(&sys, &call("g")).unwrap();
        assert_eq!(r.ids, [Ident::new("g")].into_iter().collect());
        assert!(matches!(
            refs(&sys, &call("zz")),
            Err(StructuralError::UnknownIdent(_))
        ));
    }

    #[test]
    fn refs_follow_syscall_bodies() {
        let mut sys = System::new(4, 8);
        sys.add_null_array("a", Space::Kernel, 1)
            .add_syscall("s", 0, &["a"], store_a_f());
        let c = Cmd::new(vec![Instr::Syscall {
            name: SyscallName::new("s"),
            args: vec![],
        }]);
        let r = refs(&sys, &c).unwrap();
        assert!(r.ids.contains(&Ident::new("a")));
        assert!(r.syscalls.contains(&SyscallName::new("s")));
    }

    #[test]
    fn validation_reports() {
        let mut sys = System::new(4, 8);
        sys.add_null_array("a", Space::Kernel, 1)
            .add_syscall("s", 0, &[], Cmd::new(vec![Instr::Load {
                label: Label::new("l1"),
                dst: Reg::new("x"),
                addr: Expr::id("a"),
            }]));
        let v = validate_system(&sys);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "caps-missing a (syscall s)");

        let mut sys = System::new(4, 8);
        sys.add_null_array("k", Space::Kernel, 1)
            .add_proc("u", Space::User, Cmd::new(vec![Instr::Store {
                addr: Expr::id("k"),
                value: Expr::int(0),
            }]));
        let v = validate_system(&sys);
        assert!(matches!(v[0], Violation::PrivilegedUserCode { .. }));

        let mut sys = System::new(1, 1);
        sys.add_null_array("big", Space::Kernel, 3);
        assert!(matches!(validate_system(&sys)[0], Violation::SpaceTooSmall { .. }));
    }

    #[test]
    fn duplicate_labels_are_reported() {
        let load = |l: &str| Instr::Load {
            label: Label::new(l),
            dst: Reg::new("x"),
            addr: Expr::int(0),
        };
        let mut sys = System::new(4, 4);
        sys.add_proc("p", Space::User, Cmd::new(vec![load("l1")]))
            .add_proc("q", Space::User, Cmd::new(vec![load("l2")]));
        assert!(label_check(&sys).is_empty());
        sys.add_proc("q", Space::User, Cmd::new(vec![load("l1")]));
        let v = label_check(&sys);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "duplicate-label l1 at proc p and proc q");
    }

    #[test]
    fn store_update_frame_and_bounds() {
        let mut sys = System::new(4, 4);
        sys.add_array("a", Space::User, vec![Value::Int(0), Value::Int(0)]);
        let s = store_update(&sys.store, &Ident::new("a"), 1, Value::Int(9)).unwrap();
        assert_eq!(s.array(&Ident::new("a")).unwrap(), &[Value::Int(0), Value::Int(9)]);
        assert!(matches!(
            store_update(&sys.store, &Ident::new("a"), 2, Value::Int(1)),
            Err(StructuralError::OutOfBounds { .. })
        ));
        let a = Ident::new("a");
        let s1 = store_update(&store_update(&sys.store, &a, 0, Value::Int(1)).unwrap(), &a, 1, Value::Int(2)).unwrap();
        let s2 = store_update(&store_update(&sys.store, &a, 1, Value::Int(2)).unwrap(), &a, 0, Value::Int(1)).unwrap();
        assert_eq!(s1, s2);
    }
}
