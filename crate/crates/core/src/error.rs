use thiserror::Error;

use crate::lang::{Ident, Label, SyscallName};

/// Errors signalling an ill-formed system, layout or program, as opposed to
/// the runtime `err`/`unsafe` outcomes of the semantics.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructuralError {
    #[error("unknown identifier `{0}`")]
    UnknownIdent(Ident),
    #[error("unknown system call `{0}`")]
    UnknownSyscall(SyscallName),
    #[error("operator `{op}` expects {expected} operands, got {found}")]
    Arity {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("index {index} out of bounds for array `{array}` of size {size}")]
    OutOfBounds {
        array: Ident,
        index: usize,
        size: usize,
    },
    #[error("`{0}` is not an array")]
    NotAnArray(Ident),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("slot scheme: {0}")]
    Scheme(String),
    #[error("layout enumeration refused: about {estimate} layouts exceed the bound {bound}")]
    TooManyLayouts { estimate: u128, bound: u128 },
    #[error("attacker program mentions kernel identifier `{0}`")]
    PrivilegedAttacker(Ident),
    #[error("attacker instruction in victim code")]
    AttackerInstrInVictim,
    #[error("more than 8 arguments passed to a call")]
    TooManyArgs,
    #[error("write of a non-value at address {0}")]
    WriteToCode(usize),
    #[error("address {0} does not hold a value")]
    NotAValue(usize),
    #[error("directive {0} does not apply")]
    Inapplicable(String),
    #[error("duplicate label `{0}`")]
    DuplicateLabel(Label),
    #[error("configuration is stuck: {0}")]
    Stuck(String),
    #[error("invalid system: {0}")]
    InvalidSystem(String),
}
