//! Kernel safety under layout randomization and speculative execution.
//!
//! A small while-language with labelled loads and branches runs under three
//! interpreters: the instrumented classic semantics ([`classic`]), a
//! directive-driven speculative semantics with write buffers and
//! mis-speculation stacks ([`spec`]), and an attacker semantics that mixes
//! both ([`attacker`]). On top sit layout randomization ([`layout`]), bounded
//! checkers for the non-interference and safety properties ([`analysis`]),
//! and the fence transformation ([`transform`]).

pub mod analysis;
pub mod attacker;
pub mod classic;
pub mod error;
pub mod gen;
pub mod lang;
pub mod layout;
pub mod machine;
pub mod par;
pub mod report;
pub mod scenarios;
pub mod spec;
pub mod syntax;
pub mod system;
pub mod transform;

pub use error::StructuralError;
pub use lang::{
    Cmd, Directive, Expr, Ident, Instr, Label, Observation, Op, Reg, RegMap, SpCmd, SyscallName,
    Value,
};
pub use layout::{Layout, Memory, SlotScheme};
pub use system::{Space, Store, System};
