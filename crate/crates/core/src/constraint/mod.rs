//! OCL-style constraint DSL: parsing, evaluation against snapshots, and the
//! ledger that tracks total and unique violations per flight state.
//!
//! A constraint whose top-level conjunction starts with
//! `self.oclIsInState(S)` is a state invariant: the remaining conjuncts are
//! checked only while the vehicle is in `S` (or a substate of `S`, or a
//! state stereotyped `S`), and the constraint is simply not evaluated
//! elsewhere. Under literal OCL semantics the conjunction would be false, and
//! therefore violated, in every other state.

mod ledger;
mod parser;
mod program;

use std::fmt;

use thiserror::Error;

use crate::behavior::name_in_scope;
use crate::domain::Snapshot;

pub use ledger::ViolationLedger;
pub use parser::parse_constraints;
use program::Program;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstraintError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown field path `{path}`")]
    UnknownPath {
        line: usize,
        column: usize,
        path: String,
    },
    #[error("line {line}, column {column}: unknown state `{name}`")]
    UnknownState {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("line {line}: unknown context class `{name}`")]
    UnknownContext { line: usize, name: String },
    #[error("line {line}: duplicate constraint id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("constraint {id}: snapshot has no slot `{path}`")]
    MissingSlot { id: String, path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Num(f64),
    /// Slot path without the leading `self.`.
    Path(String),
}

/// A state named in `oclIsInState`, with the flat states it covers when the
/// constraint was parsed against a machine.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRef {
    pub name: String,
    pub members: Vec<String>,
}

impl StateRef {
    pub fn new(name: &str) -> Self {
        StateRef {
            name: name.to_string(),
            members: Vec::new(),
        }
    }

    pub fn contains(&self, flight_state: &str) -> bool {
        name_in_scope(flight_state, &self.name) || self.members.iter().any(|m| m == flight_state)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Bool(bool),
    Cmp {
        op: CmpOp,
        lhs: Operand,
        rhs: Operand,
    },
    InState(StateRef),
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Num(v) => write!(f, "{v}"),
            Operand::Path(p) => write!(f, "self.{p}"),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Bool(b) => write!(f, "{b}"),
            Expr::Cmp { op, lhs, rhs } => write!(f, "{lhs}{}{rhs}", op.symbol()),
            Expr::InState(s) => write!(f, "self.oclIsInState({})", s.name),
            Expr::Not(e) => write!(f, "not ({e})"),
            Expr::And(l, r) => write!(f, "({l}) and ({r})"),
            Expr::Or(l, r) => write!(f, "({l}) or ({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scope {
    General,
    State(StateRef),
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub id: String,
    pub context: String,
    pub scope: Scope,
    pub body: Expr,
    program: Program,
}

impl Constraint {
    pub fn new(id: String, context: String, scope: Scope, body: Expr) -> Self {
        let program = Program::compile(&body);
        Constraint {
            id,
            context,
            scope,
            body,
            program,
        }
    }

    pub fn is_general(&self) -> bool {
        matches!(self.scope, Scope::General)
    }

    pub fn applies_in(&self, flight_state: &str) -> bool {
        match &self.scope {
            Scope::General => true,
            Scope::State(s) => s.contains(flight_state),
        }
    }

    /// Body truth value on `snapshot`, ignoring scope.
    pub fn holds(&self, snapshot: &Snapshot) -> Result<bool, ConstraintError> {
        self.program.run(snapshot).map_err(|path| ConstraintError::MissingSlot {
            id: self.id.clone(),
            path,
        })
    }
}

impl PartialEq for Constraint {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.context == other.context
            && self.scope == other.scope
            && self.body == other.body
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EvalResult {
    pub evaluated: Vec<String>,
    pub failed: Vec<String>,
}

impl EvalResult {
    /// Number of failed constraints; each id counts once.
    pub fn m(&self) -> usize {
        self.failed.len()
    }
}

/// Evaluates every constraint in scope for the snapshot's flight state.
pub fn evaluate(constraints: &[Constraint], snapshot: &Snapshot) -> Result<EvalResult, ConstraintError> {
    let mut result = EvalResult::default();
    for c in constraints {
        if !c.applies_in(&snapshot.flight_state) {
            continue;
        }
        result.evaluated.push(c.id.clone());
        if !c.holds(snapshot)? {
            result.failed.push(c.id.clone());
        }
    }
    Ok(result)
}
