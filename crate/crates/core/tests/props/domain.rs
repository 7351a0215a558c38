use proptest::prelude::*;
use txrepair::domain::{Decomposition, DomainPoint, Label};
use txrepair::pstore::{PredId, Value};

use super::{check, Outcome};

fn point() -> impl Strategy<Value = (PredId, i64)> {
    (0..3u32, -2..25i64)
}

/// Median splits over random samples; repeated samples give empty parts.
fn decomposition() -> impl Strategy<Value = (Decomposition, usize)> {
    (prop::collection::vec(point(), 0..40), 0..5usize).prop_map(|(s, h)| {
        let samples = s.into_iter().map(|(p, k)| DomainPoint::key(p, &[Value::Int(k)])).collect();
        (Decomposition::from_samples(samples, h), h)
    })
}

/// At every depth the intervals tile the domain in label order and every
/// point lies in exactly one of them: the one `locate` names.
pub fn partition(cases: u32) -> Outcome {
    let s = (decomposition(), prop::collection::vec(point(), 1..30));
    check(cases, s, |((d, h), probes)| {
        for depth in 0..=h + 1 {
            let labels: Vec<Label> = Label::all(depth).collect();
            let ivs: Vec<_> = labels.iter().map(|l| d.interval(*l)).collect();
            prop_assert_eq!(&ivs[0].0, &DomainPoint::NegInf);
            prop_assert_eq!(&ivs[ivs.len() - 1].1, &DomainPoint::PosInf);
            for iv in &ivs {
                prop_assert!(iv.0 <= iv.1);
            }
            for w in ivs.windows(2) {
                prop_assert_eq!(&w[0].1, &w[1].0);
            }
            for (p, k) in &probes {
                let key = [Value::Int(*k)];
                let holders: Vec<Label> = labels.iter().copied().filter(|l| d.contains(*l, *p, &key)).collect();
                prop_assert_eq!(holders, vec![d.locate(*p, &key, depth)]);
            }
        }
        let back = Decomposition::from_json(&d.to_json()).unwrap();
        prop_assert_eq!(back, d);
        Ok(())
    })
}

/// Lower labels hold lower points.
pub fn monotone_labels(cases: u32) -> Outcome {
    let s = (decomposition(), prop::collection::vec(point(), 2..30));
    check(cases, s, |((d, h), probes)| {
        for depth in 1..=h {
            for (p, k) in &probes {
                for (q, j) in &probes {
                    let (a, b) = (d.locate(*p, &[Value::Int(*k)], depth), d.locate(*q, &[Value::Int(*j)], depth));
                    if a < b {
                        let x = DomainPoint::key(*p, &[Value::Int(*k)]);
                        let y = DomainPoint::key(*q, &[Value::Int(*j)]);
                        prop_assert!(x < y, "{:?} in {:?}, {:?} in {:?}", x, a, y, b);
                    }
                }
            }
        }
        Ok(())
    })
}
