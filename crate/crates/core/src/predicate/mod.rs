//! Predicate expressions and their portable bytecode form.
//!
//! Predicates exist in two executable forms that must agree everywhere:
//! a tree interpreter (used for residual evaluation on the compute node and
//! as the differential oracle) and a compiled stack-bytecode program (the
//! form shipped inside pushdown descriptors and executed on both sides).
//! SQL three-valued logic applies throughout; a row qualifies iff the
//! predicate evaluates to TRUE.

mod ast;
mod compile;
mod program;
mod vm;

pub use ast::{interpret, CmpOp, EvalError, PredExpr, Ternary};
pub use compile::{compile, CompileError};
pub use program::{
    decode_program, encode_program, OpCode, PredProgram, ProgramError, PROGRAM_VERSION,
};
pub use vm::{evaluate, evaluate_with_stats, EvalStats};
