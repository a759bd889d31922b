//! Compiles predicate trees into stack bytecode.
//!
//! Boolean structure compiles to control flow rather than stack arithmetic:
//! every boolean subexpression is emitted once and finishes by jumping to
//! one of three continuation labels (true/false/null). `And`/`Or` get their
//! SQL null semantics from a one-slot marker recording whether the left
//! operand was TRUE or NULL, consumed by small trampolines on each of the
//! right operand's outcomes. The left operand deciding the result on its
//! own (FALSE for AND, TRUE for OR) jumps straight past the right operand,
//! so short-circuiting is observable in the executed instruction stream.

use super::ast::PredExpr;
use super::program::{OpCode, PredProgram, ProgramError};
use crate::schema::Schema;
use crate::value::{TypeTag, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CompileError {
    #[error("column index {0} out of range for schema with {1} columns")]
    ColumnOutOfRange(usize, usize),
    #[error("type mismatch comparing {lhs} with {rhs}")]
    TypeMismatch { lhs: String, rhs: String },
    #[error("literal does not fit column type: {0}")]
    LiteralOutOfRange(String),
    #[error("operator or function not supported in compiled predicates: {0}")]
    Unsupported(String),
    #[error("expression is not boolean at this position")]
    NotBoolean,
    #[error(transparent)]
    Program(#[from] ProgramError),
}

/// Pending jump to a not-yet-placed label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Label(usize);

struct Compiler<'a> {
    schema: &'a Schema,
    consts: Vec<Value>,
    code: Vec<OpCode>,
    /// Resolved instruction index per label, once placed.
    labels: Vec<Option<usize>>,
    /// (instruction index, label) pairs to patch after layout.
    fixups: Vec<(usize, Label)>,
}

impl<'a> Compiler<'a> {
    fn new(schema: &'a Schema) -> Compiler<'a> {
        Compiler { schema, consts: Vec::new(), code: Vec::new(), labels: Vec::new(), fixups: Vec::new() }
    }

    fn fresh_label(&mut self) -> Label {
        self.labels.push(None);
        Label(self.labels.len() - 1)
    }

    fn place(&mut self, label: Label) {
        debug_assert!(self.labels[label.0].is_none(), "label placed twice");
        self.labels[label.0] = Some(self.code.len());
    }

    fn emit(&mut self, op: OpCode) {
        self.code.push(op);
    }

    fn emit_jump(&mut self, make: fn(u16) -> OpCode, to: Label) {
        self.fixups.push((self.code.len(), to));
        self.code.push(make(0));
    }

    /// Unconditional pop of the top boolean: a conditional jump whose target
    /// is the next instruction takes the same path either way.
    fn emit_pop(&mut self) {
        let next = (self.code.len() + 1) as u16;
        self.code.push(OpCode::JmpIfTrue(next));
    }

    fn add_const(&mut self, v: Value) -> u16 {
        if let Some(i) = self.consts.iter().position(|c| c == &v) {
            return i as u16;
        }
        self.consts.push(v);
        (self.consts.len() - 1) as u16
    }

    fn value_tag(&self, e: &PredExpr) -> Result<Option<TypeTag>, CompileError> {
        match e {
            PredExpr::ColumnRef(i) => {
                if *i >= self.schema.column_count() {
                    return Err(CompileError::ColumnOutOfRange(*i, self.schema.column_count()));
                }
                Ok(Some(self.schema.column_type(*i).tag))
            }
            PredExpr::Literal(Value::Null) => Ok(None),
            PredExpr::Literal(Value::Int64(_)) => Ok(Some(TypeTag::Int64)),
            PredExpr::Literal(Value::Date(_)) => Ok(Some(TypeTag::Date)),
            // Bare literals do not know their scale or length; comparability
            // against the other operand is checked at the variant level.
            PredExpr::Literal(Value::Decimal(_)) => Ok(None),
            PredExpr::Literal(Value::Varchar(_)) => Ok(None),
            _ => Err(CompileError::Unsupported(
                "comparison operands must be columns or literals".into(),
            )),
        }
    }

    /// Type-checks a comparison: identical type tags for column/column,
    /// literal-inhabits-column for column/literal (out-of-range literals are
    /// rejected here rather than coerced at runtime).
    fn check_compare(&self, l: &PredExpr, r: &PredExpr) -> Result<(), CompileError> {
        let lt = self.value_tag(l)?;
        let rt = self.value_tag(r)?;
        if let (Some(a), Some(b)) = (lt, rt) {
            if !a.comparable_with(&b) {
                return Err(CompileError::TypeMismatch { lhs: a.to_string(), rhs: b.to_string() });
            }
        }
        for (col, lit) in [(l, r), (r, l)] {
            if let (PredExpr::ColumnRef(i), PredExpr::Literal(v)) = (col, lit) {
                if !v.is_null() {
                    let mut ty = *self.schema.column_type(*i);
                    ty.nullable = true; // NULL literals are legal in comparisons
                    v.check_type(&ty)
                        .map_err(|e| CompileError::LiteralOutOfRange(e.to_string()))?;
                }
            }
        }
        if let (PredExpr::Literal(a), PredExpr::Literal(b)) = (l, r) {
            if !a.is_null() && !b.is_null() && std::mem::discriminant(a) != std::mem::discriminant(b) {
                return Err(CompileError::TypeMismatch {
                    lhs: format!("{a:?}"),
                    rhs: format!("{b:?}"),
                });
            }
        }
        Ok(())
    }

    /// Emits a value operand push.
    fn emit_value(&mut self, e: &PredExpr) -> Result<(), CompileError> {
        match e {
            PredExpr::ColumnRef(i) => {
                self.emit(OpCode::LoadCol(*i as u16));
                Ok(())
            }
            PredExpr::Literal(v) => {
                let ix = self.add_const(v.clone());
                self.emit(OpCode::LoadConst(ix));
                Ok(())
            }
            _ => Err(CompileError::Unsupported(
                "comparison operands must be columns or literals".into(),
            )),
        }
    }

    fn may_be_null(&self, e: &PredExpr) -> bool {
        match e {
            PredExpr::ColumnRef(i) => self.schema.column_type(*i).nullable,
            PredExpr::Literal(v) => v.is_null(),
            _ => true,
        }
    }

    /// Compiles a boolean expression so that control continues at exactly
    /// one of `kt`/`kf`/`kn` with the stack unchanged.
    fn compile_bool(
        &mut self,
        e: &PredExpr,
        kt: Label,
        kf: Label,
        kn: Label,
    ) -> Result<(), CompileError> {
        match e {
            PredExpr::Compare(op, l, r) => {
                self.check_compare(l, r)?;
                if matches!(l.as_ref(), PredExpr::Literal(Value::Null))
                    || matches!(r.as_ref(), PredExpr::Literal(Value::Null))
                {
                    // A NULL literal makes the comparison constant NULL.
                    self.emit_jump(OpCode::Jmp, kn);
                    return Ok(());
                }
                // Dispatch NULL operands before comparing, operand by operand,
                // so the comparison itself only ever sees concrete values.
                for side in [l, r] {
                    if self.may_be_null(side) {
                        self.emit_value(side)?;
                        self.emit(OpCode::IsNull);
                        self.emit_jump(OpCode::JmpIfTrue, kn);
                    }
                }
                self.emit_value(l)?;
                self.emit_value(r)?;
                self.emit(OpCode::Cmp(*op));
                self.emit_jump(OpCode::JmpIfTrue, kt);
                self.emit_jump(OpCode::Jmp, kf);
                Ok(())
            }
            PredExpr::And(l, r) => {
                let l_true = self.fresh_label();
                let l_null = self.fresh_label();
                let r_entry = self.fresh_label();
                let jt = self.fresh_label();
                let jf = self.fresh_label();
                let jn = self.fresh_label();

                // FALSE on the left decides: jump straight to kf, skipping r.
                self.compile_bool(l, l_true, kf, l_null)?;
                self.place(l_true);
                self.emit(OpCode::PushTrue); // marker: left was TRUE
                self.emit_jump(OpCode::Jmp, r_entry);
                self.place(l_null);
                self.emit(OpCode::PushNull); // marker: left was NULL
                self.place(r_entry);
                self.compile_bool(r, jt, jf, jn)?;

                // r TRUE: result is the marker (TRUE∧TRUE=TRUE, NULL∧TRUE=NULL).
                self.place(jt);
                self.emit_jump(OpCode::JmpIfTrue, kt);
                self.emit_jump(OpCode::Jmp, kn);
                // r FALSE: result FALSE regardless of the marker.
                self.place(jf);
                self.emit_pop();
                self.emit_jump(OpCode::Jmp, kf);
                // r NULL: TRUE∧NULL=NULL, NULL∧NULL=NULL.
                self.place(jn);
                self.emit_pop();
                self.emit_jump(OpCode::Jmp, kn);
                Ok(())
            }
            PredExpr::Or(l, r) => {
                let l_false = self.fresh_label();
                let l_null = self.fresh_label();
                let r_entry = self.fresh_label();
                let jt = self.fresh_label();
                let jf = self.fresh_label();
                let jn = self.fresh_label();

                // TRUE on the left decides: jump straight to kt, skipping r.
                self.compile_bool(l, kt, l_false, l_null)?;
                self.place(l_false);
                self.emit(OpCode::PushFalse); // marker: left was FALSE
                self.emit_jump(OpCode::Jmp, r_entry);
                self.place(l_null);
                self.emit(OpCode::PushNull); // marker: left was NULL
                self.place(r_entry);
                self.compile_bool(r, jt, jf, jn)?;

                // r TRUE: result TRUE regardless of the marker.
                self.place(jt);
                self.emit_pop();
                self.emit_jump(OpCode::Jmp, kt);
                // r FALSE: result is the marker (FALSE∨FALSE=FALSE, NULL∨FALSE=NULL).
                self.place(jf);
                self.emit_jump(OpCode::JmpIfFalse, kf);
                self.emit_jump(OpCode::Jmp, kn);
                // r NULL: FALSE∨NULL=NULL, NULL∨NULL=NULL.
                self.place(jn);
                self.emit_pop();
                self.emit_jump(OpCode::Jmp, kn);
                Ok(())
            }
            PredExpr::Not(inner) => self.compile_bool(inner, kf, kt, kn),
            PredExpr::IsNull(inner) => match inner.as_ref() {
                PredExpr::ColumnRef(_) | PredExpr::Literal(_) => {
                    self.value_tag(inner)?;
                    self.emit_value(inner)?;
                    self.emit(OpCode::IsNull);
                    self.emit_jump(OpCode::JmpIfTrue, kt);
                    self.emit_jump(OpCode::Jmp, kf);
                    Ok(())
                }
                // IS NULL over a boolean expression: TRUE iff it is NULL.
                _ => self.compile_bool(inner, kf, kf, kt),
            },
            PredExpr::Call { name, .. } => Err(CompileError::Unsupported(name.clone())),
            PredExpr::ColumnRef(_) | PredExpr::Literal(_) => Err(CompileError::NotBoolean),
        }
    }

    fn finish(mut self) -> Result<PredProgram, CompileError> {
        for (at, label) in std::mem::take(&mut self.fixups) {
            let target = self.labels[label.0].expect("unplaced label") as u16;
            self.code[at] = match self.code[at] {
                OpCode::Jmp(_) => OpCode::Jmp(target),
                OpCode::JmpIfTrue(_) => OpCode::JmpIfTrue(target),
                OpCode::JmpIfFalse(_) => OpCode::JmpIfFalse(target),
                other => other,
            };
        }
        Ok(PredProgram::new(self.consts, self.code)?)
    }
}

/// Compiles a well-typed predicate into a validated program whose
/// evaluation matches `interpret` on every row, NULL semantics included.
pub fn compile(expr: &PredExpr, schema: &Schema) -> Result<PredProgram, CompileError> {
    let mut c = Compiler::new(schema);
    let kt = c.fresh_label();
    let kf = c.fresh_label();
    let kn = c.fresh_label();
    c.compile_bool(expr, kt, kf, kn)?;
    c.place(kt);
    c.emit(OpCode::PushTrue);
    c.emit(OpCode::Ret);
    c.place(kf);
    c.emit(OpCode::PushFalse);
    c.emit(OpCode::Ret);
    c.place(kn);
    c.emit(OpCode::PushNull);
    c.emit(OpCode::Ret);
    if c.code.len() > u16::MAX as usize {
        return Err(CompileError::Unsupported(format!(
            "predicate too large: {} instructions",
            c.code.len()
        )));
    }
    c.finish()
}
