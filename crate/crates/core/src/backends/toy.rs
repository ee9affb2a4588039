//! A tiny proof language for desk-scale runs.
//!
//! ```text
//! file      := statement*
//! statement := "lemma" NAME ":" expr "=" expr ":=" tactic
//! tactic    := "eval" | "by_lemma" NAME | "sorry"
//! expr      := term (("+" | "-") term)*
//! term      := factor ("*" factor)*
//! factor    := INT | "-" factor | "(" expr ")"
//! ```
//!
//! Comments (`--`, `/- -/`) are ignored, so sketch markers are transparent.
//! `eval` closes a statement whose sides evaluate to the same integer;
//! `by_lemma n` requires an earlier lemma `n` with a token-identical
//! statement; `sorry` leaves the statement as an open goal `⊢ lhs = rhs`.
//! Arithmetic is checked 64-bit; overflow is a compile error.

use std::collections::HashMap;

use super::{BackendError, Checker, DiagnosticError, Diagnostics};
use crate::lexical;

pub const TURNSTILE: &str = "⊢";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(i64),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self) -> Result<i64, String> {
        match self {
            Expr::Int(v) => Ok(*v),
            Expr::Neg(e) => e.eval()?.checked_neg().ok_or_else(overflow),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval()?, b.eval()?);
                match op {
                    BinOp::Add => a.checked_add(b),
                    BinOp::Sub => a.checked_sub(b),
                    BinOp::Mul => a.checked_mul(b),
                }
                .ok_or_else(overflow)
            }
        }
    }

    /// Number of operator nodes, i.e. reduction steps needed to evaluate.
    pub fn op_count(&self) -> usize {
        match self {
            Expr::Int(_) => 0,
            Expr::Neg(e) => 1 + e.op_count(),
            Expr::Bin(_, a, b) => 1 + a.op_count() + b.op_count(),
        }
    }
}

fn overflow() -> String {
    "arithmetic overflow".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(i64),
    Colon,
    Define,
    Eq,
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Turnstile,
    Bad(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    start: usize,
    end: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c.is_whitespace() {
            continue;
        }
        let single = |tok| Token {
            tok,
            start: i,
            end: i + c.len_utf8(),
        };
        let token = match c {
            ':' => {
                if let Some(&(_, '=')) = chars.peek() {
                    chars.next();
                    Token {
                        tok: Tok::Define,
                        start: i,
                        end: i + 2,
                    }
                } else {
                    single(Tok::Colon)
                }
            }
            '=' => single(Tok::Eq),
            '+' => single(Tok::Plus),
            '-' => single(Tok::Minus),
            '*' => single(Tok::Star),
            '(' => single(Tok::LParen),
            ')' => single(Tok::RParen),
            '⊢' => single(Tok::Turnstile),
            c if c.is_ascii_digit() => {
                let mut end = i + 1;
                while let Some(&(j, d)) = chars.peek() {
                    if d.is_ascii_digit() {
                        end = j + 1;
                        chars.next();
                    } else {
                        break;
                    }
                }
                match text[i..end].parse::<i64>() {
                    Ok(v) => Token {
                        tok: Tok::Int(v),
                        start: i,
                        end,
                    },
                    Err(_) => Token {
                        tok: Tok::Bad(c),
                        start: i,
                        end,
                    },
                }
            }
            c if lexical::is_ident_char(c) => {
                let mut end = i + c.len_utf8();
                while let Some(&(j, d)) = chars.peek() {
                    if lexical::is_ident_char(d) || d == '.' {
                        end = j + d.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                Token {
                    tok: Tok::Ident(text[i..end].to_string()),
                    start: i,
                    end,
                }
            }
            other => single(Tok::Bad(other)),
        };
        out.push(token);
    }
    out
}

#[derive(Debug)]
struct ParseError {
    at: usize,
    message: String,
}

struct Parser<'a> {
    text: &'a str,
    tokens: Vec<Token>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            text,
            tokens: tokenize(text),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.text.len(), |t| t.start)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            at: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(name)) => {
                let name = name.clone();
                self.pos += 1;
                Ok(name)
            }
            _ => self.err(format!("expected {what}")),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(Expr::Int(v))
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            _ => self.err("expected an integer expression"),
        }
    }

    /// Source text of tokens `from..self.pos`, whitespace-collapsed.
    fn source_since(&self, from: usize) -> String {
        if from >= self.pos {
            return String::new();
        }
        let start = self.tokens[from].start;
        let end = self.tokens[self.pos - 1].end;
        collapse_whitespace(&self.text[start..end])
    }

    fn tokens_since(&self, from: usize) -> Vec<Tok> {
        self.tokens[from..self.pos].iter().map(|t| t.tok.clone()).collect()
    }

    fn skip_to_next_lemma(&mut self) {
        self.pos += 1;
        while let Some(tok) = self.peek() {
            if matches!(tok, Tok::Ident(name) if name == "lemma") {
                return;
            }
            self.pos += 1;
        }
    }
}

pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A parsed `⊢ lhs = rhs` goal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub lhs: Expr,
    pub rhs: Expr,
}

impl Goal {
    pub fn op_count(&self) -> usize {
        self.lhs.op_count() + self.rhs.op_count()
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, String> {
    let mut p = Parser::new(text);
    let e = p.expr().map_err(|e| e.message)?;
    if p.peek().is_some() {
        return Err("trailing input after expression".into());
    }
    Ok(e)
}

/// Parses a goal, with or without the leading turnstile.
pub fn parse_goal(text: &str) -> Result<Goal, String> {
    let mut p = Parser::new(text);
    if p.peek() == Some(&Tok::Turnstile) {
        p.pos += 1;
    }
    let lhs = p.expr().map_err(|e| e.message)?;
    p.expect(Tok::Eq, "`=`").map_err(|e| e.message)?;
    let rhs = p.expr().map_err(|e| e.message)?;
    if p.peek().is_some() {
        return Err("trailing input after goal".into());
    }
    Ok(Goal { lhs, rhs })
}

pub fn goal_text(lhs: &str, rhs: &str) -> String {
    format!("{TURNSTILE} {lhs} = {rhs}")
}

enum Tactic {
    Eval,
    ByLemma(String),
    Sorry,
}

struct Statement {
    name: String,
    name_at: usize,
    lhs: Expr,
    rhs: Expr,
    lhs_src: String,
    rhs_src: String,
    shape: Vec<Tok>,
    tactic: Tactic,
}

fn parse_statement(p: &mut Parser<'_>) -> Result<Statement, ParseError> {
    match p.peek() {
        Some(Tok::Ident(k)) if k == "lemma" => p.pos += 1,
        _ => return p.err("expected `lemma`"),
    }
    let name_at = p.offset();
    let name = p.ident("lemma name")?;
    p.expect(Tok::Colon, "`:`")?;
    let shape_from = p.pos;
    let lhs = p.expr()?;
    let lhs_src = p.source_since(shape_from);
    p.expect(Tok::Eq, "`=`")?;
    let rhs_from = p.pos;
    let rhs = p.expr()?;
    let rhs_src = p.source_since(rhs_from);
    let shape = p.tokens_since(shape_from);
    p.expect(Tok::Define, "`:=`")?;
    let tactic = match p.ident("a tactic")?.as_str() {
        "eval" => Tactic::Eval,
        "sorry" => Tactic::Sorry,
        "by_lemma" => Tactic::ByLemma(p.ident("lemma name after by_lemma")?),
        other => {
            p.pos -= 1;
            return p.err(format!("unknown tactic `{other}`"));
        }
    };
    Ok(Statement {
        name,
        name_at,
        lhs,
        rhs,
        lhs_src,
        rhs_src,
        shape,
        tactic,
    })
}

/// Checks a toy-language file. Never fails; problems become diagnostics.
pub fn toy_check(sketch_text: &str) -> Diagnostics {
    let code = lexical::blank_comments(sketch_text);
    let mut p = Parser::new(&code);
    let mut errors = Vec::new();
    let mut open_goals = Vec::new();
    let mut seen: HashMap<String, Vec<Tok>> = HashMap::new();

    let mut report = |at: usize, message: String| {
        let (line, col) = lexical::line_col(&code, at);
        errors.push(DiagnosticError { line, col, message });
    };

    while p.peek().is_some() {
        let stmt = match parse_statement(&mut p) {
            Ok(stmt) => stmt,
            Err(e) => {
                report(e.at, e.message);
                p.skip_to_next_lemma();
                continue;
            }
        };
        if seen.contains_key(&stmt.name) {
            report(stmt.name_at, format!("lemma `{}` is already declared", stmt.name));
            continue;
        }
        match &stmt.tactic {
            Tactic::Eval => match (stmt.lhs.eval(), stmt.rhs.eval()) {
                (Ok(l), Ok(r)) if l == r => {}
                (Ok(l), Ok(r)) => report(stmt.name_at, format!("lemma `{}`: eval failed, {l} ≠ {r}", stmt.name)),
                (Err(e), _) | (_, Err(e)) => report(stmt.name_at, format!("lemma `{}`: {e}", stmt.name)),
            },
            Tactic::ByLemma(other) => match seen.get(other) {
                Some(shape) if *shape == stmt.shape => {}
                Some(_) => report(
                    stmt.name_at,
                    format!("lemma `{}`: by_lemma `{other}` has a different statement", stmt.name),
                ),
                None => report(stmt.name_at, format!("lemma `{}`: unknown lemma `{other}`", stmt.name)),
            },
            Tactic::Sorry => open_goals.push(goal_text(&stmt.lhs_src, &stmt.rhs_src)),
        }
        seen.insert(stmt.name.clone(), stmt.shape);
    }

    Diagnostics {
        compiles: errors.is_empty(),
        errors,
        open_goals,
    }
}

/// Checker backed by [`toy_check`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyChecker;

impl Checker for ToyChecker {
    fn check(&self, sketch_text: &str) -> Result<Diagnostics, BackendError> {
        Ok(toy_check(sketch_text))
    }
}
