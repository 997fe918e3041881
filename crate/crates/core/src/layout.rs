//! Layouts, placement of stores into memory, randomization schemes and the
//! slot-scheme bound on the probability that a probe misses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::StructuralError;
use crate::lang::{Cmd, Ident, Value};
use crate::system::{refs, Content, ObjKind, Space, Store, System};

/// Placement of identifiers at base addresses.
#[derive(Clone, PartialEq, Eq, Hash, Debug, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout(BTreeMap<Ident, usize>);

impl Layout {
    pub fn new() -> Self {
        Layout(BTreeMap::new())
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Ident, usize)>) -> Self {
        Layout(pairs.into_iter().collect())
    }

    pub fn base(&self, id: &Ident) -> Option<usize> {
        self.0.get(id).copied()
    }

    pub fn set(&mut self, id: Ident, base: usize) {
        self.0.insert(id, base);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ident, &usize)> {
        self.0.iter()
    }

    /// User objects packed from address 0, kernel objects packed from
    /// `kappa_user`, both in declaration order.
    pub fn canonical(sys: &System) -> Layout {
        let mut l = user_layout(sys);
        let mut next = sys.kappa_user;
        for o in sys.objects_in(Space::Kernel) {
            l.set(o.name.clone(), next);
            next += o.size();
        }
        l
    }
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(i, a)| format!("{i}@{a}")).collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

/// The fixed user-space part shared by every layout we generate.
pub fn user_layout(sys: &System) -> Layout {
    let mut l = Layout::new();
    let mut next = 0;
    for o in sys.objects_in(Space::User) {
        l.set(o.name.clone(), next);
        next += o.size();
    }
    l
}

/// Addresses occupied by `id` under `layout`.
pub fn footprint(layout: &Layout, sys: &System, id: &Ident) -> BTreeSet<usize> {
    match (layout.base(id), sys.object(id)) {
        (Some(b), Some(o)) => (b..b + o.size()).collect(),
        _ => BTreeSet::new(),
    }
}

pub fn footprint_of<'a>(
    layout: &Layout,
    sys: &System,
    ids: impl IntoIterator<Item = &'a Ident>,
) -> BTreeSet<usize> {
    ids.into_iter().flat_map(|i| footprint(layout, sys, i)).collect()
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub enum Cell {
    Empty,
    Val(Value),
    Code(Cmd),
}

/// Total map from addresses to contents.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Memory(Arc<Vec<Cell>>);

impl Memory {
    pub fn empty(total: usize) -> Self {
        Memory(Arc::new(vec![Cell::Empty; total]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, a: usize) -> &Cell {
        self.0.get(a).unwrap_or(&Cell::Empty)
    }

    pub fn value(&self, a: usize) -> Option<&Value> {
        match self.get(a) {
            Cell::Val(v) => Some(v),
            _ => None,
        }
    }

    /// `mem[a ↦ v]`. Writing over code is refused.
    pub fn update(&mut self, a: usize, v: Value) -> Result<(), StructuralError> {
        match self.0.get(a) {
            Some(Cell::Code(_)) | None => Err(StructuralError::WriteToCode(a)),
            _ => {
                Arc::make_mut(&mut self.0)[a] = Cell::Val(v);
                Ok(())
            }
        }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.0
    }

    /// Reads the store back through `layout`; procedures are taken from
    /// `base` since memory never changes them.
    pub fn to_store(&self, layout: &Layout, sys: &System, base: &Store) -> Store {
        let mut out = Store::new();
        for o in sys.objects() {
            let content = match o.kind {
                ObjKind::Array { size } => {
                    let b = layout.base(&o.name).unwrap_or(0);
                    Content::Array(
                        (0..size)
                            .map(|k| self.value(b + k).cloned().unwrap_or(Value::Null))
                            .collect(),
                    )
                }
                ObjKind::Proc => base
                    .get(&o.name)
                    .cloned()
                    .unwrap_or_else(|| Content::Proc(Cmd::nil())),
            };
            out.insert(o.name.clone(), content);
        }
        out
    }
}

/// `λ∘σ`: the memory holding `store` placed according to `layout`.
pub fn place(layout: &Layout, store: &Store, total: usize) -> Result<Memory, StructuralError> {
    let mut cells = vec![Cell::Empty; total];
    let mut claim = |a: usize, c: Cell, id: &Ident| -> Result<(), StructuralError> {
        match cells.get_mut(a) {
            Some(slot @ Cell::Empty) => {
                *slot = c;
                Ok(())
            }
            Some(_) => Err(StructuralError::Layout(format!("`{id}` overlaps at address {a}"))),
            None => Err(StructuralError::Layout(format!("`{id}` exceeds the address space at {a}"))),
        }
    };
    for (id, content) in store.iter() {
        let base = layout
            .base(id)
            .ok_or_else(|| StructuralError::Layout(format!("`{id}` is not placed")))?;
        match content {
            Content::Proc(c) => claim(base, Cell::Code(c.clone()), id)?,
            Content::Array(vals) => {
                for (k, v) in vals.iter().enumerate() {
                    claim(base + k, Cell::Val(v.clone()), id)?;
                }
            }
        }
    }
    Ok(Memory(Arc::new(cells)))
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum LayoutViolation {
    Overlap(Ident, Ident),
    Separation(Ident),
    Missing(Ident),
    Unknown(Ident),
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::Overlap(a, b) => write!(f, "overlap {a} {b}"),
            LayoutViolation::Separation(a) => write!(f, "separation {a}"),
            LayoutViolation::Missing(a) => write!(f, "missing {a}"),
            LayoutViolation::Unknown(a) => write!(f, "unknown {a}"),
        }
    }
}

pub fn validate_layout(layout: &Layout, sys: &System) -> Vec<LayoutViolation> {
    let mut out = Vec::new();
    for (id, _) in layout.iter() {
        if sys.object(id).is_none() {
            out.push(LayoutViolation::Unknown(id.clone()));
        }
    }
    let mut placed: Vec<(usize, usize, &Ident)> = Vec::new();
    for o in sys.objects() {
        let Some(b) = layout.base(&o.name) else {
            out.push(LayoutViolation::Missing(o.name.clone()));
            continue;
        };
        let (lo, hi) = match o.space {
            Space::User => (0, sys.kappa_user),
            Space::Kernel => (sys.kappa_user, sys.total_addresses()),
        };
        if b < lo || b + o.size() > hi {
            out.push(LayoutViolation::Separation(o.name.clone()));
        }
        placed.push((b, b + o.size(), &o.name));
    }
    for i in 0..placed.len() {
        for j in i + 1..placed.len() {
            let (a0, a1, ai) = placed[i];
            let (b0, b1, bi) = placed[j];
            if a0 < b1 && b0 < a1 {
                out.push(LayoutViolation::Overlap(ai.clone(), bi.clone()));
            }
        }
    }
    out
}

/// Estimated number of kernel placements (an upper bound).
pub fn estimate_layout_count(sys: &System) -> u128 {
    sys.objects_in(Space::Kernel)
        .map(|o| (sys.kappa_kernel + 1).saturating_sub(o.size()) as u128)
        .fold(1u128, |acc, n| acc.saturating_mul(n))
}

/// Every valid layout with the fixed user part, each exactly once.
pub fn enumerate_layouts(sys: &System, bound: u128) -> Result<Vec<Layout>, StructuralError> {
    let estimate = estimate_layout_count(sys);
    if estimate > bound {
        return Err(StructuralError::TooManyLayouts { estimate, bound });
    }
    let kernel: Vec<(Ident, usize)> = sys
        .objects_in(Space::Kernel)
        .map(|o| (o.name.clone(), o.size()))
        .collect();
    let total: usize = kernel.iter().map(|k| k.1).sum();
    if total > sys.kappa_kernel {
        return Err(StructuralError::Layout(format!(
            "kernel objects need {total} addresses, only {} available",
            sys.kappa_kernel
        )));
    }
    let mut out = Vec::new();
    let mut used = vec![false; sys.kappa_kernel];
    let mut current = user_layout(sys);
    fn go(
        k: usize,
        kernel: &[(Ident, usize)],
        used: &mut [bool],
        cur: &mut Layout,
        ku: usize,
        out: &mut Vec<Layout>,
    ) {
        let Some((id, size)) = kernel.get(k) else {
            out.push(cur.clone());
            return;
        };
        for base in 0..=used.len().saturating_sub(*size) {
            if *size > used.len() || used[base..base + size].iter().any(|u| *u) {
                continue;
            }
            used[base..base + size].iter_mut().for_each(|u| *u = true);
            cur.set(id.clone(), ku + base);
            go(k + 1, kernel, used, cur, ku, out);
            used[base..base + size].iter_mut().for_each(|u| *u = false);
        }
    }
    go(0, &kernel, &mut used, &mut current, sys.kappa_user, &mut out);
    Ok(out)
}

/// A uniformly random kernel placement with random gaps; user part fixed.
pub fn random_layout(sys: &System, rng: &mut impl Rng) -> Result<Layout, StructuralError> {
    let mut kernel: Vec<(Ident, usize)> = sys
        .objects_in(Space::Kernel)
        .map(|o| (o.name.clone(), o.size()))
        .collect();
    let used: usize = kernel.iter().map(|k| k.1).sum();
    let free = sys
        .kappa_kernel
        .checked_sub(used)
        .ok_or_else(|| StructuralError::Layout("kernel space too small".into()))?;
    kernel.shuffle(rng);
    let mut gaps = vec![0usize; kernel.len() + 1];
    for _ in 0..free {
        let g = rng.gen_range(0..gaps.len());
        gaps[g] += 1;
    }
    let mut l = user_layout(sys);
    let mut next = sys.kappa_user;
    for (k, (id, size)) in kernel.into_iter().enumerate() {
        next += gaps[k];
        l.set(id, next);
        next += size;
    }
    Ok(l)
}

/// Kernel space cut into equal slots, each large enough for any kernel
/// object; objects sit at slot bases.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SlotScheme {
    pub kappa_user: usize,
    pub kappa_kernel: usize,
    /// Slot width: the size of the largest kernel object.
    pub theta: usize,
}

impl SlotScheme {
    pub fn for_system(sys: &System) -> Result<SlotScheme, StructuralError> {
        let theta = sys.objects_in(Space::Kernel).map(|o| o.size()).max().unwrap_or(1);
        let scheme = SlotScheme {
            kappa_user: sys.kappa_user,
            kappa_kernel: sys.kappa_kernel,
            theta,
        };
        scheme.check(sys)?;
        Ok(scheme)
    }

    pub fn slots(&self) -> usize {
        self.kappa_kernel / self.theta
    }

    pub fn slot_base(&self, slot: usize) -> usize {
        self.kappa_user + slot * self.theta
    }

    pub fn check(&self, sys: &System) -> Result<(), StructuralError> {
        if self.theta == 0 || !self.kappa_kernel.is_multiple_of(self.theta) {
            return Err(StructuralError::Scheme(format!(
                "slot width {} does not divide kernel space {}",
                self.theta, self.kappa_kernel
            )));
        }
        let total: usize = sys.objects_in(Space::Kernel).map(|o| o.size()).sum();
        if self.kappa_kernel <= total {
            return Err(StructuralError::Scheme(format!(
                "kernel space {} must exceed the total object size {total}",
                self.kappa_kernel
            )));
        }
        if let Some(o) = sys.objects_in(Space::Kernel).find(|o| o.size() > self.theta) {
            return Err(StructuralError::Scheme(format!("`{}` does not fit a slot", o.name)));
        }
        Ok(())
    }
}

/// Uniform injective assignment of kernel objects to slots.
pub fn sample_slot_layout(
    scheme: &SlotScheme,
    sys: &System,
    rng: &mut impl Rng,
) -> Result<Layout, StructuralError> {
    let kernel: Vec<&Ident> = sys.objects_in(Space::Kernel).map(|o| &o.name).collect();
    let n = scheme.slots();
    if kernel.len() > n {
        return Err(StructuralError::Scheme(format!(
            "{} kernel objects but only {n} slots",
            kernel.len()
        )));
    }
    let mut slots: Vec<usize> = (0..n).collect();
    let (chosen, _) = slots.partial_shuffle(rng, kernel.len());
    let mut l = user_layout(sys);
    for (id, slot) in kernel.into_iter().zip(chosen.iter()) {
        l.set(id.clone(), scheme.slot_base(*slot));
    }
    Ok(l)
}

/// Lower bound on the probability that a probe of a kernel address outside
/// a syscall's references misses every object, under the slot scheme:
/// the minimum over syscalls of `(N - |Id_k|) / (N - |refs(s) \ Sys|)`.
pub fn delta_bound_slots(sys: &System, scheme: &SlotScheme) -> Result<Ratio<u64>, StructuralError> {
    if scheme.theta == 0 || !scheme.kappa_kernel.is_multiple_of(scheme.theta) {
        return Err(StructuralError::Scheme(format!(
            "slot width {} does not divide kernel space {}",
            scheme.theta, scheme.kappa_kernel
        )));
    }
    let n = scheme.slots() as i64;
    let kernel = sys.objects_in(Space::Kernel).count() as i64;
    if n < kernel {
        return Err(StructuralError::Scheme(format!("{kernel} kernel objects but only {n} slots")));
    }
    let mut best: Option<Ratio<u64>> = None;
    for def in sys.syscalls.values() {
        let r = refs(sys, &def.body)?.ids.len() as i64;
        let den = n - r;
        if den <= 0 {
            return Err(StructuralError::Scheme(format!(
                "denominator {den} is not positive"
            )));
        }
        let q = Ratio::new((n - kernel) as u64, den as u64);
        best = Some(best.map_or(q, |b| b.min(q)));
    }
    Ok(best.unwrap_or_else(|| Ratio::from_integer(1)))
}
