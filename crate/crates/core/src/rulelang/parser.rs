//! Lexer and recursive-descent parser for rule text.

use std::fmt;

use crate::pstore::Value;

use super::ast::*;
use super::RuleError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Param(String),
    LParen,
    RParen,
    LBrack,
    RBrack,
    Comma,
    Dot,
    Semi,
    Arrow,
    Caret,
    Minus,
    Plus,
    Star,
    Bang,
    At,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(i) => write!(f, "`{i}`"),
            Tok::Str(s) => write!(f, "{s:?}"),
            Tok::Param(s) => write!(f, "`${s}`"),
            other => write!(f, "{other:?}"),
        }
    }
}

struct Lexed {
    tok: Tok,
    line: usize,
}

fn lex(src: &str) -> Result<Vec<Lexed>, RuleError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let err = |line: usize, msg: String| RuleError::Parse { line, msg };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') || c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let two = chars.get(i + 1).copied();
        let (tok, len) = match c {
            '(' => (Tok::LParen, 1),
            ')' => (Tok::RParen, 1),
            '[' => (Tok::LBrack, 1),
            ']' => (Tok::RBrack, 1),
            ',' => (Tok::Comma, 1),
            '.' => (Tok::Dot, 1),
            ';' => (Tok::Semi, 1),
            '^' => (Tok::Caret, 1),
            '+' => (Tok::Plus, 1),
            '*' => (Tok::Star, 1),
            '@' => (Tok::At, 1),
            '=' => (Tok::Eq, 1),
            '-' => (Tok::Minus, 1),
            '!' if two == Some('=') => (Tok::Ne, 2),
            '!' => (Tok::Bang, 1),
            '<' if two == Some('-') => (Tok::Arrow, 2),
            '<' if two == Some('=') => (Tok::Le, 2),
            '<' => (Tok::Lt, 1),
            '>' if two == Some('=') => (Tok::Ge, 2),
            '>' => (Tok::Gt, 1),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                loop {
                    match chars.get(j) {
                        None => return Err(err(line, "unterminated string".into())),
                        Some('"') => break,
                        Some('\\') => {
                            match chars.get(j + 1) {
                                Some('n') => s.push('\n'),
                                Some(c) => s.push(*c),
                                None => return Err(err(line, "unterminated string".into())),
                            }
                            j += 2;
                        }
                        Some(c) => {
                            s.push(*c);
                            j += 1;
                        }
                    }
                }
                (Tok::Str(s), j + 1 - i)
            }
            '$' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == i + 1 {
                    return Err(err(line, "empty parameter name".into()));
                }
                (Tok::Param(chars[i + 1..j].iter().collect()), j - i)
            }
            c if c.is_ascii_digit() => {
                let mut j = i;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v = s.parse::<i64>().map_err(|e| err(line, format!("bad integer {s}: {e}")))?;
                (Tok::Int(v), j - i)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                (Tok::Ident(chars[i..j].iter().collect()), j - i)
            }
            other => return Err(err(line, format!("unexpected character {other:?}"))),
        };
        out.push(Lexed { tok, line });
        i += len;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Lexed>,
    pos: usize,
    anon: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|l| &l.tok)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map_or(1, |l| l.line)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, RuleError> {
        Err(RuleError::Parse { line: self.line(), msg: msg.into() })
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|l| l.tok.clone());
        self.pos += 1;
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> Result<(), RuleError> {
        if self.eat(&t) {
            Ok(())
        } else {
            match self.peek() {
                Some(got) => self.err(format!("expected {t}, found {got}")),
                None => self.err(format!("expected {t}, found end of input")),
            }
        }
    }

    fn fresh_anon(&mut self) -> Term {
        self.anon += 1;
        Term::Var(format!("_#{}", self.anon))
    }

    /// An identifier followed by `(`, `[` or `@` names a predicate.
    fn at_pred(&self) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s != "true" && s != "false")
            && matches!(self.peek_at(1), Some(Tok::LParen | Tok::LBrack | Tok::At))
    }

    fn rule(&mut self) -> Result<Vec<Rule>, RuleError> {
        let mut heads = vec![self.head()?];
        while self.eat(&Tok::Comma) {
            heads.push(self.head()?);
        }
        let mut bodies = vec![vec![]];
        if self.eat(&Tok::Arrow) {
            bodies = vec![self.conj()?];
            while self.eat(&Tok::Semi) {
                bodies.push(self.conj()?);
            }
        }
        self.expect(Tok::Dot)?;
        Ok(bodies.into_iter().map(|body| Rule { heads: heads.clone(), body }).collect())
    }

    fn head(&mut self) -> Result<Head, RuleError> {
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "false") {
            self.bump();
            return Ok(Head::False);
        }
        if self.eat(&Tok::Caret) {
            return Ok(Head::Upsert(self.atom(true)?));
        }
        if self.eat(&Tok::Minus) {
            return Ok(Head::Retract(self.atom(true)?));
        }
        Ok(Head::Derive(self.atom(true)?))
    }

    fn version(&mut self) -> Result<Ver, RuleError> {
        if !self.eat(&Tok::At) {
            return Ok(Ver::Default);
        }
        match self.bump() {
            Some(Tok::Ident(s)) if s == "start" => Ok(Ver::Start),
            Some(Tok::Ident(s)) if s == "end" => Ok(Ver::End),
            _ => self.err("expected `start` or `end` after `@`"),
        }
    }

    fn terms(&mut self, close: Tok) -> Result<Vec<Term>, RuleError> {
        let mut out = vec![];
        if self.eat(&close) {
            return Ok(out);
        }
        loop {
            out.push(self.term()?);
            if self.eat(&close) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn term(&mut self) -> Result<Term, RuleError> {
        match self.bump() {
            Some(Tok::Int(i)) => Ok(Term::Const(Value::Int(i))),
            Some(Tok::Minus) => match self.bump() {
                Some(Tok::Int(i)) => Ok(Term::Const(Value::Int(-i))),
                _ => self.err("expected integer after `-`"),
            },
            Some(Tok::Str(s)) => Ok(Term::Const(Value::str(&s))),
            Some(Tok::Param(p)) => Ok(Term::Param(p)),
            Some(Tok::Ident(s)) if s == "true" => Ok(Term::Const(Value::Bool(true))),
            Some(Tok::Ident(s)) if s == "false" => Ok(Term::Const(Value::Bool(false))),
            Some(Tok::Ident(s)) if s == "_" => Ok(self.fresh_anon()),
            Some(Tok::Ident(s)) => Ok(Term::Var(s)),
            Some(t) => self.err(format!("expected a term, found {t}")),
            None => self.err("expected a term, found end of input"),
        }
    }

    /// `name[@v](args)` or `name[@v][keys] = value`. In heads the value may be
    /// omitted (retractions).
    fn atom(&mut self, in_head: bool) -> Result<Atom, RuleError> {
        let pred = match self.bump() {
            Some(Tok::Ident(s)) => s,
            _ => return self.err("expected a predicate name"),
        };
        let version = self.version()?;
        if self.eat(&Tok::LParen) {
            let args = self.terms(Tok::RParen)?;
            return Ok(Atom { pred, version, args, value: None, func: false });
        }
        self.expect(Tok::LBrack)?;
        let args = self.terms(Tok::RBrack)?;
        let value = if self.eat(&Tok::Eq) {
            Some(self.term()?)
        } else if in_head {
            None
        } else {
            return self.err(format!("function atom `{pred}[..]` needs `= value`"));
        };
        Ok(Atom { pred, version, args, value, func: true })
    }

    fn conj(&mut self) -> Result<Vec<Literal>, RuleError> {
        let mut out = vec![self.literal()?];
        while self.eat(&Tok::Comma) {
            out.push(self.literal()?);
        }
        Ok(out)
    }

    fn literal(&mut self) -> Result<Literal, RuleError> {
        if self.eat(&Tok::Bang) {
            return Ok(Literal::Neg(self.atom(false)?));
        }
        if self.at_pred() {
            // Relation atoms are literals on their own; function applications
            // may start a comparison.
            let save = self.pos;
            let _ = self.bump();
            let _ = self.version()?;
            let rel = self.peek() == Some(&Tok::LParen);
            self.pos = save;
            if rel {
                return Ok(Literal::Pos(self.atom(false)?));
            }
        }
        let lhs = self.expr()?;
        let op = match self.bump() {
            Some(Tok::Eq) => CmpOp::Eq,
            Some(Tok::Ne) => CmpOp::Ne,
            Some(Tok::Lt) => CmpOp::Lt,
            Some(Tok::Le) => CmpOp::Le,
            Some(Tok::Gt) => CmpOp::Gt,
            Some(Tok::Ge) => CmpOp::Ge,
            _ => return self.err("expected a comparison operator"),
        };
        let rhs = self.expr()?;
        Ok(Literal::Cmp(op, lhs, rhs))
    }

    fn expr(&mut self) -> Result<Expr, RuleError> {
        let mut e = self.mul()?;
        loop {
            let op = if self.eat(&Tok::Plus) {
                ArithOp::Add
            } else if self.eat(&Tok::Minus) {
                ArithOp::Sub
            } else {
                return Ok(e);
            };
            e = Expr::Bin(op, Box::new(e), Box::new(self.mul()?));
        }
    }

    fn mul(&mut self) -> Result<Expr, RuleError> {
        let mut e = self.unary()?;
        while self.eat(&Tok::Star) {
            e = Expr::Bin(ArithOp::Mul, Box::new(e), Box::new(self.unary()?));
        }
        Ok(e)
    }

    fn unary(&mut self) -> Result<Expr, RuleError> {
        if self.eat(&Tok::Minus) {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Term(Term::Const(Value::Int(i))) => Expr::Term(Term::Const(Value::Int(-i))),
                e => Expr::Bin(ArithOp::Sub, Box::new(Expr::Term(Term::Const(Value::Int(0)))), Box::new(e)),
            });
        }
        if self.eat(&Tok::LParen) {
            let e = self.expr()?;
            self.expect(Tok::RParen)?;
            return Ok(e);
        }
        if self.at_pred() {
            let pred = match self.bump() {
                Some(Tok::Ident(s)) => s,
                _ => unreachable!(),
            };
            let version = self.version()?;
            if self.peek() != Some(&Tok::LBrack) {
                return self.err(format!("relation `{pred}` cannot be used as a value"));
            }
            self.bump();
            let args = self.terms(Tok::RBrack)?;
            return Ok(Expr::App { pred, version, args });
        }
        Ok(Expr::Term(self.term()?))
    }
}

/// Parse rule text. Disjunctive bodies are split into one rule per branch.
pub fn parse(src: &str) -> Result<Vec<Rule>, RuleError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, anon: 0 };
    let mut rules = Vec::new();
    while p.peek().is_some() {
        rules.extend(p.rule()?);
    }
    Ok(rules)
}
