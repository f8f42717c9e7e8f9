use std::collections::HashSet;

use super::{CmpOp, Constraint, ConstraintError, Expr, Operand, Scope, StateRef};
use crate::behavior::FlightStateMachine;
use crate::domain::{DomainSchema, FieldKind};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Op(CmpOp),
    LParen,
    RParen,
    Minus,
    And,
    Or,
    Not,
    True,
    False,
}

struct Lexed {
    tok: Tok,
    col: usize,
}

fn lex(src: &str, line: usize, offset: usize) -> Result<Vec<Lexed>, ConstraintError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let col = offset + i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => {
                i += 1;
                Tok::LParen
            }
            ')' => {
                i += 1;
                Tok::RParen
            }
            '-' => {
                i += 1;
                Tok::Minus
            }
            '=' => {
                i += 1;
                Tok::Op(CmpOp::Eq)
            }
            '<' | '>' => {
                let next = bytes.get(i + 1).copied().map(char::from);
                let (op, len) = match (c, next) {
                    ('<', Some('=')) => (CmpOp::Le, 2),
                    ('<', Some('>')) => (CmpOp::Ne, 2),
                    ('<', _) => (CmpOp::Lt, 1),
                    ('>', Some('=')) => (CmpOp::Ge, 2),
                    _ => (CmpOp::Gt, 1),
                };
                i += len;
                Tok::Op(op)
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text = &src[start..i];
                let value = text.parse::<f64>().map_err(|_| ConstraintError::Syntax {
                    line,
                    column: col,
                    message: format!("malformed number `{text}`"),
                })?;
                Tok::Num(value)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.')
                {
                    i += 1;
                }
                match &src[start..i] {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    word => Tok::Ident(word.to_string()),
                }
            }
            other => {
                return Err(ConstraintError::Syntax {
                    line,
                    column: col,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push(Lexed { tok, col });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Lexed>,
    pos: usize,
    line: usize,
    end_col: usize,
    schema: &'a DomainSchema,
    machine: Option<&'a FlightStateMachine>,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |l| l.col)
    }

    fn error(&self, message: impl Into<String>) -> ConstraintError {
        ConstraintError::Syntax {
            line: self.line,
            column: self.col(),
            message: message.into(),
        }
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|l| l.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ConstraintError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn or(&mut self) -> Result<Expr, ConstraintError> {
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            let rhs = self.and()?;
            lhs = Expr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ConstraintError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ConstraintError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ConstraintError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.or()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::True) => {
                self.pos += 1;
                Ok(Expr::Bool(true))
            }
            Some(Tok::False) => {
                self.pos += 1;
                Ok(Expr::Bool(false))
            }
            Some(Tok::Ident(name))
                if name == "self.oclIsInState" || name == "oclIsInState" =>
            {
                self.pos += 1;
                self.expect(Tok::LParen, "`(` after oclIsInState")?;
                let col = self.col();
                let state = match self.bump() {
                    Some(Tok::Ident(s)) => s,
                    _ => return Err(self.error("expected a state name")),
                };
                self.expect(Tok::RParen, "`)`")?;
                Ok(Expr::InState(self.state_ref(&state, col)?))
            }
            Some(_) => self.comparison(),
            None => Err(self.error("unexpected end of expression")),
        }
    }

    fn state_ref(&self, name: &str, column: usize) -> Result<StateRef, ConstraintError> {
        let Some(sm) = self.machine else {
            return Ok(StateRef::new(name));
        };
        let members: Vec<String> = sm
            .states
            .iter()
            .filter(|s| sm.state_in_scope(&s.name, name))
            .map(|s| s.name.clone())
            .collect();
        if members.is_empty() {
            return Err(ConstraintError::UnknownState {
                line: self.line,
                column,
                name: name.to_string(),
            });
        }
        Ok(StateRef {
            name: name.to_string(),
            members,
        })
    }

    fn comparison(&mut self) -> Result<Expr, ConstraintError> {
        let lhs_col = self.col();
        let lhs = self.raw_operand()?;
        let op = match self.bump() {
            Some(Tok::Op(op)) => op,
            _ => {
                self.pos -= 1;
                return Err(self.error("expected a comparison operator"));
            }
        };
        let rhs_col = self.col();
        let rhs = self.raw_operand()?;
        let lhs_enum = self.enum_values(&lhs);
        let rhs_enum = self.enum_values(&rhs);
        let lhs = self.resolve(lhs, rhs_enum, lhs_col)?;
        let rhs = self.resolve(rhs, lhs_enum, rhs_col)?;
        Ok(Expr::Cmp { op, lhs, rhs })
    }

    fn raw_operand(&mut self) -> Result<RawOperand, ConstraintError> {
        match self.bump() {
            Some(Tok::Num(v)) => Ok(RawOperand::Num(v)),
            Some(Tok::Minus) => match self.bump() {
                Some(Tok::Num(v)) => Ok(RawOperand::Num(-v)),
                _ => {
                    self.pos -= 1;
                    Err(self.error("expected a number after `-`"))
                }
            },
            Some(Tok::Ident(word)) => Ok(match word.strip_prefix("self.") {
                Some(path) => RawOperand::Path(path.to_string()),
                None => RawOperand::Word(word),
            }),
            _ => {
                self.pos -= 1;
                Err(self.error("expected a path or a number"))
            }
        }
    }

    fn enum_values(&self, op: &RawOperand) -> Option<&'a [String]> {
        match op {
            RawOperand::Path(p) => match &self.schema.field(p)?.kind {
                FieldKind::Enum(values) => Some(values.as_slice()),
                FieldKind::Numeric => None,
            },
            _ => None,
        }
    }

    fn resolve(
        &self,
        op: RawOperand,
        enum_ctx: Option<&[String]>,
        column: usize,
    ) -> Result<Operand, ConstraintError> {
        match op {
            RawOperand::Num(v) => Ok(Operand::Num(v)),
            RawOperand::Path(p) => {
                if self.schema.field(&p).is_none() {
                    return Err(ConstraintError::UnknownPath {
                        line: self.line,
                        column,
                        path: p,
                    });
                }
                Ok(Operand::Path(p))
            }
            RawOperand::Word(w) => match enum_ctx.and_then(|v| v.iter().position(|x| *x == w)) {
                Some(code) => Ok(Operand::Num(code as f64)),
                None => Err(ConstraintError::Syntax {
                    line: self.line,
                    column,
                    message: format!("`{w}` is neither a `self.` path nor a known enum literal"),
                }),
            },
        }
    }
}

enum RawOperand {
    Num(f64),
    Path(String),
    Word(String),
}

/// Splits a top-level `oclIsInState(S) and body` into a state scope and body.
fn extract_scope(expr: Expr) -> (Scope, Expr) {
    fn conjuncts(e: Expr, out: &mut Vec<Expr>) {
        match e {
            Expr::And(l, r) => {
                conjuncts(*l, out);
                conjuncts(*r, out);
            }
            other => out.push(other),
        }
    }
    let mut parts = Vec::new();
    conjuncts(expr, &mut parts);
    match parts.first() {
        Some(Expr::InState(_)) => {
            let Expr::InState(state) = parts.remove(0) else {
                unreachable!()
            };
            let body = parts
                .into_iter()
                .reduce(|l, r| Expr::And(Box::new(l), Box::new(r)))
                .unwrap_or(Expr::Bool(true));
            (Scope::State(state), body)
        }
        _ => {
            let body = parts
                .into_iter()
                .reduce(|l, r| Expr::And(Box::new(l), Box::new(r)))
                .unwrap();
            (Scope::General, body)
        }
    }
}

fn strip_comment(line: &str) -> &str {
    let cut = [line.find("--"), line.find('#')]
        .into_iter()
        .flatten()
        .min();
    match cut {
        Some(i) => &line[..i],
        None => line,
    }
}

/// Parses one constraint per line: `<id>: context <Class> inv: <expr>`.
///
/// State names inside `oclIsInState` are checked against `machine` when one
/// is given; scopes then also match every state carrying the named phase.
pub fn parse_constraints(
    text: &str,
    schema: &DomainSchema,
    machine: Option<&FlightStateMachine>,
) -> Result<Vec<Constraint>, ConstraintError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.trim().is_empty() {
            continue;
        }
        let syntax = |column: usize, message: &str| ConstraintError::Syntax {
            line,
            column,
            message: message.to_string(),
        };
        let lead = content.len() - content.trim_start().len();
        let colon = content
            .find(':')
            .ok_or_else(|| syntax(lead + 1, "expected `<id>: context <Class> inv: <expr>`"))?;
        let id = content[..colon].trim();
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(syntax(lead + 1, "invalid constraint id"));
        }
        if !ids.insert(id.to_string()) {
            return Err(ConstraintError::DuplicateId {
                line,
                id: id.to_string(),
            });
        }
        let rest = &content[colon + 1..];
        let rest_offset = colon + 1;
        let trimmed = rest.trim_start();
        let pos = rest_offset + (rest.len() - trimmed.len());
        let after_ctx = trimmed
            .strip_prefix("context")
            .filter(|r| r.starts_with(char::is_whitespace))
            .ok_or_else(|| syntax(pos + 1, "expected `context`"))?;
        let inv = after_ctx
            .find(':')
            .ok_or_else(|| syntax(pos + 1, "expected `inv:`"))?;
        let header: Vec<&str> = after_ctx[..inv].split_whitespace().collect();
        let (context, ok) = match header.as_slice() {
            [class, "inv"] | [class, "inv", _] => (*class, true),
            _ => ("", false),
        };
        if !ok {
            return Err(syntax(pos + 1, "expected `context <Class> inv:`"));
        }
        if !schema.has_class(context) {
            return Err(ConstraintError::UnknownContext {
                line,
                name: context.to_string(),
            });
        }
        let expr_offset = pos + "context".len() + inv + 1;
        let expr_src = &content[expr_offset..];
        let toks = lex(expr_src, line, expr_offset)?;
        let mut parser = Parser {
            toks,
            pos: 0,
            line,
            end_col: content.len() + 1,
            schema,
            machine,
        };
        let expr = parser.or()?;
        if parser.pos < parser.toks.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        let (scope, body) = extract_scope(expr);
        out.push(Constraint::new(id.to_string(), context.to_string(), scope, body));
    }
    Ok(out)
}
