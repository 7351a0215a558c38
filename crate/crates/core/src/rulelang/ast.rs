//! Surface syntax of rules.

use std::fmt;

use crate::pstore::Value;

/// Which version of a stored predicate an atom reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ver {
    /// Undecorated: the end-of-transaction state for stored predicates.
    Default,
    Start,
    End,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String),
    Const(Value),
    Param(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub pred: String,
    pub version: Ver,
    /// Key columns (all columns for relations).
    pub args: Vec<Term>,
    /// The value column of a function atom.
    pub value: Option<Term>,
    pub func: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Term(Term),
    App { pred: String, version: Ver, args: Vec<Term> },
    Bin(ArithOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Pos(Atom),
    Neg(Atom),
    Cmp(CmpOp, Expr, Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// `false <- ...`: the transaction fails if the body holds.
    False,
    /// `^P(..)` / `^F[..]=v`.
    Upsert(Atom),
    /// `-P(..)` / `-F[..]`.
    Retract(Atom),
    /// A transaction-local predicate.
    Derive(Atom),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub heads: Vec<Head>,
    pub body: Vec<Literal>,
}

impl fmt::Display for Ver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ver::Default => Ok(()),
            Ver::Start => write!(f, "@start"),
            Ver::End => write!(f, "@end"),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) if v.starts_with("_#") => write!(f, "_"),
            Term::Var(v) => write!(f, "{v}"),
            Term::Const(c) => write!(f, "{c}"),
            Term::Param(p) => write!(f, "${p}"),
        }
    }
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.func {
            write!(f, "{}{}[{}]", self.pred, self.version, join(&self.args))?;
            if let Some(v) = &self.value {
                write!(f, "={v}")?;
            }
            Ok(())
        } else {
            write!(f, "{}{}({})", self.pred, self.version, join(&self.args))
        }
    }
}

impl fmt::Display for ArithOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
        })
    }
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        })
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Term(t) => write!(f, "{t}"),
            Expr::App { pred, version, args } => write!(f, "{pred}{version}[{}]", join(args)),
            Expr::Bin(op, a, b) => write!(f, "({a} {op} {b})"),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "!{a}"),
            Literal::Cmp(op, a, b) => write!(f, "{a} {op} {b}"),
        }
    }
}

impl fmt::Display for Head {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Head::False => write!(f, "false"),
            Head::Upsert(a) => write!(f, "^{a}"),
            Head::Retract(a) => write!(f, "-{a}"),
            Head::Derive(a) => write!(f, "{a}"),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", join(&self.heads))?;
        if !self.body.is_empty() {
            write!(f, " <- {}", join(&self.body))?;
        }
        write!(f, ".")
    }
}
