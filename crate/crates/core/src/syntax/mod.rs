//! Text formats for systems, attacker programs and directive sequences.

pub mod parse;
pub mod print;

pub use parse::{parse_attacker, parse_cmd, parse_directives, parse_system, ParseError};
