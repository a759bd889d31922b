//! Compiled predicate programs: a small stack bytecode with a versioned,
//! deterministic serialization that travels inside pushdown descriptors.
//!
//! Machine model: a stack of slots holding either a column/constant value
//! or a three-valued boolean. Conditional jumps pop the tested boolean and
//! jump when it matches; `JmpIfTrue` to the next instruction is the idiom
//! for an unconditional pop. Execution ends at `Ret` with exactly one
//! boolean on the stack.

use super::ast::CmpOp;
use crate::util::fnv1a64;
use crate::value::Value;

pub const PROGRAM_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpCode {
    /// Push the value of the schema column with this index.
    LoadCol(u16),
    /// Push a constant from the pool.
    LoadConst(u16),
    /// Pop two values, push their comparison (NULL if either is NULL).
    Cmp(CmpOp),
    /// Pop a boolean, push its negation (NULL stays NULL).
    Not,
    /// Pop a slot, push TRUE iff it was NULL.
    IsNull,
    /// Pop a boolean, jump to the absolute target iff it was FALSE.
    JmpIfFalse(u16),
    /// Pop a boolean, jump to the absolute target iff it was TRUE.
    JmpIfTrue(u16),
    Jmp(u16),
    PushTrue,
    PushFalse,
    PushNull,
    Ret,
}

impl OpCode {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            OpCode::LoadCol(i) => {
                out.push(0);
                out.extend_from_slice(&i.to_le_bytes());
            }
            OpCode::LoadConst(i) => {
                out.push(1);
                out.extend_from_slice(&i.to_le_bytes());
            }
            OpCode::Cmp(op) => out.push(match op {
                CmpOp::Lt => 2,
                CmpOp::Le => 3,
                CmpOp::Gt => 4,
                CmpOp::Ge => 5,
                CmpOp::Eq => 6,
                CmpOp::Ne => 7,
            }),
            OpCode::Not => out.push(8),
            OpCode::IsNull => out.push(9),
            OpCode::JmpIfFalse(t) => {
                out.push(10);
                out.extend_from_slice(&t.to_le_bytes());
            }
            OpCode::JmpIfTrue(t) => {
                out.push(11);
                out.extend_from_slice(&t.to_le_bytes());
            }
            OpCode::Jmp(t) => {
                out.push(12);
                out.extend_from_slice(&t.to_le_bytes());
            }
            OpCode::PushTrue => out.push(13),
            OpCode::PushFalse => out.push(14),
            OpCode::PushNull => out.push(15),
            OpCode::Ret => out.push(16),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredProgram {
    pub version: u16,
    pub consts: Vec<Value>,
    pub code: Vec<OpCode>,
    pub fingerprint: u64,
}

impl PredProgram {
    /// Builds a program, validating it and computing the fingerprint over
    /// the serialized (version, const pool, code) bytes.
    pub fn new(consts: Vec<Value>, code: Vec<OpCode>) -> Result<PredProgram, ProgramError> {
        let mut p = PredProgram { version: PROGRAM_VERSION, consts, code, fingerprint: 0 };
        p.validate()?;
        p.fingerprint = fnv1a64(&encode_body(&p));
        Ok(p)
    }

    /// Structural validation: jump targets in bounds, constant indices in
    /// range, stack balanced with consistent depth and slot kinds at every
    /// instruction, exactly one boolean on the stack at every `Ret`, and no
    /// fall-through past the end of the code.
    pub fn validate(&self) -> Result<(), ProgramError> {
        #[derive(Clone, Copy, PartialEq, Eq, Debug)]
        enum Slot {
            Val,
            Bool,
        }
        let n = self.code.len();
        if n == 0 {
            return Err(ProgramError::Invalid("empty code".into()));
        }
        if n > u16::MAX as usize {
            return Err(ProgramError::Invalid(format!("{n} instructions exceed u16 range")));
        }
        let mut states: Vec<Option<Vec<Slot>>> = vec![None; n];
        let mut work = vec![(0usize, Vec::new())];
        let target = |t: u16| -> Result<usize, ProgramError> {
            if (t as usize) < n {
                Ok(t as usize)
            } else {
                Err(ProgramError::Invalid(format!("jump target {t} out of bounds ({n} ops)")))
            }
        };
        fn pop(stack: &mut Vec<Slot>, pc: usize) -> Result<Slot, ProgramError> {
            stack
                .pop()
                .ok_or_else(|| ProgramError::Invalid(format!("stack underflow at pc {pc}")))
        }
        while let Some((pc, stack)) = work.pop() {
            match &states[pc] {
                Some(seen) => {
                    if *seen != stack {
                        return Err(ProgramError::Invalid(format!(
                            "inconsistent stack at pc {pc}: {seen:?} vs {stack:?}"
                        )));
                    }
                    continue;
                }
                None => states[pc] = Some(stack.clone()),
            }
            let mut stack = stack;
            // Successors: `next` falls through, `jump` goes to a label.
            let mut next = false;
            let mut jump: Option<usize> = None;
            match self.code[pc] {
                OpCode::LoadCol(_) => {
                    stack.push(Slot::Val);
                    next = true;
                }
                OpCode::LoadConst(i) => {
                    if i as usize >= self.consts.len() {
                        return Err(ProgramError::Invalid(format!(
                            "constant index {i} out of range at pc {pc}"
                        )));
                    }
                    stack.push(Slot::Val);
                    next = true;
                }
                OpCode::Cmp(_) => {
                    for _ in 0..2 {
                        if pop(&mut stack, pc)? != Slot::Val {
                            return Err(ProgramError::Invalid(format!(
                                "compare on non-value slot at pc {pc}"
                            )));
                        }
                    }
                    stack.push(Slot::Bool);
                    next = true;
                }
                OpCode::Not => {
                    if pop(&mut stack, pc)? != Slot::Bool {
                        return Err(ProgramError::Invalid(format!("NOT on value slot at pc {pc}")));
                    }
                    stack.push(Slot::Bool);
                    next = true;
                }
                OpCode::IsNull => {
                    pop(&mut stack, pc)?;
                    stack.push(Slot::Bool);
                    next = true;
                }
                OpCode::JmpIfFalse(t) | OpCode::JmpIfTrue(t) => {
                    if pop(&mut stack, pc)? != Slot::Bool {
                        return Err(ProgramError::Invalid(format!(
                            "conditional jump on value slot at pc {pc}"
                        )));
                    }
                    next = true;
                    jump = Some(target(t)?);
                }
                OpCode::Jmp(t) => {
                    jump = Some(target(t)?);
                }
                OpCode::PushTrue | OpCode::PushFalse | OpCode::PushNull => {
                    stack.push(Slot::Bool);
                    next = true;
                }
                OpCode::Ret => {
                    if stack != [Slot::Bool] {
                        return Err(ProgramError::Invalid(format!(
                            "RET requires exactly one boolean on the stack, have {stack:?} at pc {pc}"
                        )));
                    }
                }
            }
            if let Some(t) = jump {
                work.push((t, stack.clone()));
            }
            if next {
                if pc + 1 >= n {
                    return Err(ProgramError::Invalid("fall through past end of code".into()));
                }
                work.push((pc + 1, stack));
            }
        }
        Ok(())
    }

    /// Human-readable listing for the CLI disassembler.
    pub fn disassemble(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "; predicate program v{} fingerprint {:016x}\n",
            self.version, self.fingerprint
        ));
        for (i, c) in self.consts.iter().enumerate() {
            out.push_str(&format!("const {i:>3}: {c:?}\n"));
        }
        for (pc, op) in self.code.iter().enumerate() {
            let text = match op {
                OpCode::LoadCol(i) => format!("LOAD_COL {i}"),
                OpCode::LoadConst(i) => format!("LOAD_CONST {i}"),
                OpCode::Cmp(op) => format!("CMP_{}", match op {
                    CmpOp::Lt => "LT",
                    CmpOp::Le => "LE",
                    CmpOp::Gt => "GT",
                    CmpOp::Ge => "GE",
                    CmpOp::Eq => "EQ",
                    CmpOp::Ne => "NE",
                }),
                OpCode::Not => "NOT".into(),
                OpCode::IsNull => "IS_NULL".into(),
                OpCode::JmpIfFalse(t) => format!("JMP_IF_FALSE {t}"),
                OpCode::JmpIfTrue(t) => format!("JMP_IF_TRUE {t}"),
                OpCode::Jmp(t) => format!("JMP {t}"),
                OpCode::PushTrue => "PUSH_TRUE".into(),
                OpCode::PushFalse => "PUSH_FALSE".into(),
                OpCode::PushNull => "PUSH_NULL".into(),
                OpCode::Ret => "RET".into(),
            };
            out.push_str(&format!("{pc:>5}: {text}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProgramError {
    #[error("invalid program: {0}")]
    Invalid(String),
    #[error("unsupported program version {0} (expected {PROGRAM_VERSION})")]
    Version(u16),
    #[error("malformed program stream: {0}")]
    Malformed(String),
}

fn encode_body(p: &PredProgram) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + p.code.len() * 3);
    out.extend_from_slice(&p.version.to_le_bytes());
    out.extend_from_slice(&(p.consts.len() as u16).to_le_bytes());
    for c in &p.consts {
        match c {
            Value::Null => out.push(0),
            Value::Int64(v) => {
                out.push(1);
                out.extend_from_slice(&v.to_le_bytes());
            }
            Value::Decimal(v) => {
                out.push(2);
                out.extend_from_slice(&v.to_le_bytes());
            }
            Value::Date(v) => {
                out.push(3);
                out.extend_from_slice(&v.to_le_bytes());
            }
            Value::Varchar(b) => {
                out.push(4);
                out.extend_from_slice(&(b.len() as u16).to_le_bytes());
                out.extend_from_slice(b);
            }
        }
    }
    out.extend_from_slice(&(p.code.len() as u16).to_le_bytes());
    for op in &p.code {
        op.encode(&mut out);
    }
    out
}

/// Serializes a program. Deterministic: equal programs yield equal bytes.
pub fn encode_program(p: &PredProgram) -> Vec<u8> {
    encode_body(p)
}

/// Decodes and re-validates a program. The fingerprint is recomputed, so it
/// is stable across encode/decode round trips.
pub fn decode_program(bytes: &[u8]) -> Result<PredProgram, ProgramError> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], ProgramError> {
        if *pos + n > bytes.len() {
            return Err(ProgramError::Malformed(format!(
                "need {n} bytes at offset {pos}, have {}",
                bytes.len() - *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != PROGRAM_VERSION {
        return Err(ProgramError::Version(version));
    }
    let n_consts = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
    let mut consts = Vec::with_capacity(n_consts);
    for _ in 0..n_consts {
        let tag = take(&mut pos, 1)?[0];
        consts.push(match tag {
            0 => Value::Null,
            1 => Value::Int64(i64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap())),
            2 => Value::Decimal(i64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap())),
            3 => Value::Date(i32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap())),
            4 => {
                let len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
                Value::Varchar(take(&mut pos, len)?.to_vec())
            }
            t => return Err(ProgramError::Malformed(format!("unknown constant tag {t}"))),
        });
    }
    let n_code = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
    let mut code = Vec::with_capacity(n_code);
    for _ in 0..n_code {
        let opcode = take(&mut pos, 1)?[0];
        let operand = |pos: &mut usize| -> Result<u16, ProgramError> {
            Ok(u16::from_le_bytes(take(pos, 2)?.try_into().unwrap()))
        };
        code.push(match opcode {
            0 => OpCode::LoadCol(operand(&mut pos)?),
            1 => OpCode::LoadConst(operand(&mut pos)?),
            2 => OpCode::Cmp(CmpOp::Lt),
            3 => OpCode::Cmp(CmpOp::Le),
            4 => OpCode::Cmp(CmpOp::Gt),
            5 => OpCode::Cmp(CmpOp::Ge),
            6 => OpCode::Cmp(CmpOp::Eq),
            7 => OpCode::Cmp(CmpOp::Ne),
            8 => OpCode::Not,
            9 => OpCode::IsNull,
            10 => OpCode::JmpIfFalse(operand(&mut pos)?),
            11 => OpCode::JmpIfTrue(operand(&mut pos)?),
            12 => OpCode::Jmp(operand(&mut pos)?),
            13 => OpCode::PushTrue,
            14 => OpCode::PushFalse,
            15 => OpCode::PushNull,
            16 => OpCode::Ret,
            b => return Err(ProgramError::Malformed(format!("unknown opcode byte {b}"))),
        });
    }
    if pos != bytes.len() {
        return Err(ProgramError::Malformed(format!(
            "{} trailing bytes after program",
            bytes.len() - pos
        )));
    }
    PredProgram::new(consts, code)
}
