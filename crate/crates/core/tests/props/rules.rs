use proptest::prelude::*;
use txrepair::pstore::Value;
use txrepair::rulelang::{parse, ArithOp, Atom, CmpOp, Expr, Head, Literal, Rule, Term, Ver};

use super::{check, Outcome};

fn term() -> impl Strategy<Value = Term> {
    prop_oneof![
        4 => prop::sample::select(vec!["x", "y", "z", "w2"]).prop_map(|v| Term::Var(v.to_string())),
        2 => (-50..50i64).prop_map(|i| Term::Const(Value::Int(i))),
        1 => "[ -~]{0,4}".prop_map(|s| Term::Const(Value::str(&s))),
        1 => any::<bool>().prop_map(|b| Term::Const(Value::Bool(b))),
        1 => prop::sample::select(vec!["a", "m"]).prop_map(|p| Term::Param(p.to_string())),
    ]
}

fn ver() -> impl Strategy<Value = Ver> {
    prop::sample::select(vec![Ver::Default, Ver::Start, Ver::End])
}

fn terms(lo: usize, hi: usize) -> impl Strategy<Value = Vec<Term>> {
    prop::collection::vec(term(), lo..hi)
}

fn rel_atom(version: BoxedStrategy<Ver>) -> impl Strategy<Value = Atom> {
    (prop::sample::select(vec!["A", "B", "rich"]), version, terms(0, 4))
        .prop_map(|(p, version, args)| Atom { pred: p.to_string(), version, args, value: None, func: false })
}

fn func_atom(version: BoxedStrategy<Ver>) -> impl Strategy<Value = Atom> {
    (prop::sample::select(vec!["F", "bal"]), version, terms(0, 3), term()).prop_map(|(p, version, args, v)| Atom {
        pred: p.to_string(),
        version,
        args,
        value: Some(v),
        func: true,
    })
}

fn atom(head: bool) -> impl Strategy<Value = Atom> {
    let version = if head { Just(Ver::Default).boxed() } else { ver().boxed() };
    prop_oneof![rel_atom(version.clone()), func_atom(version)]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        3 => term().prop_map(Expr::Term),
        1 => (prop::sample::select(vec!["F", "bal"]), ver(), terms(0, 3))
            .prop_map(|(p, version, args)| Expr::App { pred: p.to_string(), version, args }),
    ];
    leaf.prop_recursive(2, 6, 2, |inner| {
        (prop::sample::select(vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul]), inner.clone(), inner)
            .prop_map(|(op, a, b)| Expr::Bin(op, Box::new(a), Box::new(b)))
    })
}

fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop::sample::select(vec![CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge])
}

fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        // A positive function atom in a body reads as the comparison
        // `F[k] = v`, which the generator covers below.
        3 => rel_atom(ver().boxed()).prop_map(Literal::Pos),
        1 => atom(false).prop_map(Literal::Neg),
        2 => (cmp_op(), expr(), expr()).prop_map(|(op, a, b)| Literal::Cmp(op, a, b)),
    ]
}

fn head() -> impl Strategy<Value = Head> {
    prop_oneof![
        atom(true).prop_map(Head::Upsert),
        atom(true).prop_map(Head::Derive),
        atom(true).prop_map(|mut a| {
            a.value = None;
            Head::Retract(a)
        }),
    ]
}

fn rule() -> impl Strategy<Value = Rule> {
    let heads = prop_oneof![1 => Just(vec![Head::False]), 4 => prop::collection::vec(head(), 1..3)];
    (heads, prop::collection::vec(literal(), 0..4)).prop_map(|(heads, body)| Rule { heads, body })
}

/// Printing a rule and parsing the text gives the rule back.
pub fn round_trip(cases: u32) -> Outcome {
    check(cases, prop::collection::vec(rule(), 1..4), |rules| {
        let text: String = rules.iter().map(|r| format!("{r}\n")).collect();
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &rules, "{}", text);
        let again: String = back.iter().map(|r| format!("{r}\n")).collect();
        prop_assert_eq!(again, text);
        Ok(())
    })
}
