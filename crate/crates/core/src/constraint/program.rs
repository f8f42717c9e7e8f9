use super::{CmpOp, Expr, Operand, StateRef};
use crate::domain::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Arg {
    Const(f64),
    Slot(usize),
}

#[derive(Debug, Clone, PartialEq)]
enum Op {
    Push(bool),
    Cmp(CmpOp, Arg, Arg),
    InState(usize),
    Not,
    And,
    Or,
}

/// Postfix form of a constraint body.
#[derive(Debug, Clone, PartialEq, Default)]
pub(super) struct Program {
    ops: Vec<Op>,
    paths: Vec<String>,
    states: Vec<StateRef>,
}

impl Program {
    pub(super) fn compile(expr: &Expr) -> Program {
        let mut p = Program::default();
        p.emit(expr);
        p
    }

    fn arg(&mut self, operand: &Operand) -> Arg {
        match operand {
            Operand::Num(v) => Arg::Const(*v),
            Operand::Path(path) => match self.paths.iter().position(|p| p == path) {
                Some(i) => Arg::Slot(i),
                None => {
                    self.paths.push(path.clone());
                    Arg::Slot(self.paths.len() - 1)
                }
            },
        }
    }

    fn emit(&mut self, expr: &Expr) {
        match expr {
            Expr::Bool(b) => self.ops.push(Op::Push(*b)),
            Expr::Cmp { op, lhs, rhs } => {
                let a = self.arg(lhs);
                let b = self.arg(rhs);
                self.ops.push(Op::Cmp(*op, a, b));
            }
            Expr::InState(s) => {
                self.states.push(s.clone());
                self.ops.push(Op::InState(self.states.len() - 1));
            }
            Expr::Not(e) => {
                self.emit(e);
                self.ops.push(Op::Not);
            }
            Expr::And(l, r) => {
                self.emit(l);
                self.emit(r);
                self.ops.push(Op::And);
            }
            Expr::Or(l, r) => {
                self.emit(l);
                self.emit(r);
                self.ops.push(Op::Or);
            }
        }
    }

    /// Runs the program; `Err` carries the first path missing from the snapshot.
    pub(super) fn run(&self, snapshot: &Snapshot) -> Result<bool, String> {
        let mut values = Vec::with_capacity(self.paths.len());
        for path in &self.paths {
            values.push(snapshot.get(path).ok_or_else(|| path.clone())?);
        }
        let fetch = |a: Arg| match a {
            Arg::Const(v) => v,
            Arg::Slot(i) => values[i],
        };
        let mut stack: Vec<bool> = Vec::with_capacity(8);
        for op in &self.ops {
            match *op {
                Op::Push(b) => stack.push(b),
                Op::Cmp(op, a, b) => stack.push(op.apply(fetch(a), fetch(b))),
                Op::InState(i) => stack.push(self.states[i].contains(&snapshot.flight_state)),
                Op::Not => {
                    let v = stack.pop().unwrap();
                    stack.push(!v);
                }
                Op::And | Op::Or => {
                    let r = stack.pop().unwrap();
                    let l = stack.pop().unwrap();
                    stack.push(if *op == Op::And { l && r } else { l || r });
                }
            }
        }
        Ok(stack.pop().unwrap_or(true))
    }
}
