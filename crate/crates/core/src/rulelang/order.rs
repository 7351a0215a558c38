//! Variable ordering for join planning.

use std::collections::HashSet;

use super::{Arg, NRule, RuleError, VarId};

/// A global variable order for `rule`.
///
/// Within an atom, variables of earlier columns come before variables first
/// occurring in later columns, so every atom can be walked as a trie prefix.
/// Computed variables come after their inputs. Among the ready variables,
/// computed ones go first (they are single valued), then those occurring in
/// more atoms, then by first appearance.
pub fn variable_order(rule: &NRule) -> Result<Vec<VarId>, RuleError> {
    let n = rule.vars.len();
    let mut preds: Vec<HashSet<VarId>> = vec![HashSet::new(); n];
    let mut occurs = vec![0usize; n];
    let mut first_seen = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let mut pos = 0usize;
    let mut see = |v: VarId, first_seen: &mut Vec<usize>| {
        if first_seen[v] == usize::MAX {
            first_seen[v] = pos;
        }
        pos += 1;
    };
    for a in &rule.atoms {
        let mut earlier: Vec<VarId> = Vec::new();
        for arg in &a.args {
            if let Arg::Var(v) = arg {
                see(*v, &mut first_seen);
                used[*v] = true;
                if !earlier.contains(v) {
                    for w in &earlier {
                        preds[*v].insert(*w);
                    }
                    occurs[*v] += 1;
                    earlier.push(*v);
                }
            }
        }
    }
    let computed: HashSet<VarId> = rule.prims.iter().filter_map(|p| p.output()).collect();
    for p in &rule.prims {
        if let Some(out) = p.output() {
            used[out] = true;
            see(out, &mut first_seen);
            for i in p.inputs() {
                if i != out {
                    preds[out].insert(i);
                }
            }
            if p.inputs().contains(&out) {
                return Err(RuleError::NoVarOrder(rule.text.clone()));
            }
        }
    }
    let atom_bound = rule.atom_bound();
    let mut order = Vec::new();
    let mut placed = vec![false; n];
    let todo: Vec<VarId> = (0..n).filter(|v| used[*v]).collect();
    while order.len() < todo.len() {
        let next = todo
            .iter()
            .copied()
            .filter(|v| !placed[*v] && preds[*v].iter().all(|w| placed[*w]))
            .min_by_key(|v| {
                let comp = computed.contains(v) && !atom_bound.contains(v);
                (!comp, usize::MAX - occurs[*v], first_seen[*v])
            });
        match next {
            Some(v) => {
                placed[v] = true;
                order.push(v);
            }
            None => return Err(RuleError::NoVarOrder(rule.text.clone())),
        }
    }
    Ok(order)
}
