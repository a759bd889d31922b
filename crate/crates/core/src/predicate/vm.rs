//! Bytecode evaluation. The same function runs on compute and page-store
//! nodes; determinism across the two sides is a correctness requirement,
//! not an optimization.

use super::ast::{compare_values, EvalError, Ternary};
use super::program::{OpCode, PredProgram};
use crate::record::RowView;
use crate::value::Value;

/// Execution counters for tests that need to observe short-circuiting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub load_col_ops: usize,
    pub executed_ops: usize,
}

#[derive(Debug, Clone, Copy)]
enum Slot<'a> {
    Val(&'a Value),
    Bool(Ternary),
}

/// Evaluates a program against one row.
pub fn evaluate(program: &PredProgram, row: &RowView) -> Result<Ternary, EvalError> {
    Ok(evaluate_with_stats(program, row)?.0)
}

/// Evaluates a program, also reporting instruction counts.
pub fn evaluate_with_stats(
    program: &PredProgram,
    row: &RowView,
) -> Result<(Ternary, EvalStats), EvalError> {
    let mut stack: Vec<Slot> = Vec::with_capacity(8);
    let mut stats = EvalStats::default();
    let mut pc = 0usize;
    // Validation bounds jump targets and guarantees termination through the
    // executed-ops budget below; a validated program cannot loop, but a
    // hostile stream that skipped validation must still not hang us.
    let budget = program.code.len().saturating_mul(4).max(1024);
    loop {
        stats.executed_ops += 1;
        if stats.executed_ops > budget {
            return Err(EvalError::NotBoolean);
        }
        let op = program.code[pc];
        pc += 1;
        match op {
            OpCode::LoadCol(i) => {
                stats.load_col_ops += 1;
                let v = row.get(i as usize).ok_or(EvalError::ColumnAbsent(i as usize))?;
                stack.push(Slot::Val(v));
            }
            OpCode::LoadConst(i) => {
                stack.push(Slot::Val(&program.consts[i as usize]));
            }
            OpCode::Cmp(cmp) => {
                let r = pop(&mut stack)?;
                let l = pop(&mut stack)?;
                let result = match (l, r) {
                    (Slot::Val(Value::Null), _) | (_, Slot::Val(Value::Null)) => Ternary::Null,
                    (Slot::Val(a), Slot::Val(b)) => {
                        Ternary::from_bool(cmp.apply(compare_values(a, b)?))
                    }
                    _ => return Err(EvalError::NotBoolean),
                };
                stack.push(Slot::Bool(result));
            }
            OpCode::Not => match pop(&mut stack)? {
                Slot::Bool(t) => stack.push(Slot::Bool(!t)),
                Slot::Val(_) => return Err(EvalError::NotBoolean),
            },
            OpCode::IsNull => {
                let is_null = match pop(&mut stack)? {
                    Slot::Val(v) => v.is_null(),
                    Slot::Bool(t) => t == Ternary::Null,
                };
                stack.push(Slot::Bool(Ternary::from_bool(is_null)));
            }
            OpCode::JmpIfFalse(t) => {
                if expect_bool(pop(&mut stack)?)? == Ternary::False {
                    pc = t as usize;
                }
            }
            OpCode::JmpIfTrue(t) => {
                if expect_bool(pop(&mut stack)?)? == Ternary::True {
                    pc = t as usize;
                }
            }
            OpCode::Jmp(t) => pc = t as usize,
            OpCode::PushTrue => stack.push(Slot::Bool(Ternary::True)),
            OpCode::PushFalse => stack.push(Slot::Bool(Ternary::False)),
            OpCode::PushNull => stack.push(Slot::Bool(Ternary::Null)),
            OpCode::Ret => {
                let result = expect_bool(pop(&mut stack)?)?;
                if !stack.is_empty() {
                    return Err(EvalError::NotBoolean);
                }
                return Ok((result, stats));
            }
        }
        if pc >= program.code.len() {
            return Err(EvalError::NotBoolean);
        }
    }
}

fn pop<'a>(stack: &mut Vec<Slot<'a>>) -> Result<Slot<'a>, EvalError> {
    stack.pop().ok_or(EvalError::NotBoolean)
}

fn expect_bool(slot: Slot) -> Result<Ternary, EvalError> {
    match slot {
        Slot::Bool(t) => Ok(t),
        Slot::Val(_) => Err(EvalError::NotBoolean),
    }
}
