//! Joint score, query selection and the non-domination audit of a selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `j_i = s_i · u_i`.
pub fn joint_scores(s_binary: &[u8], u: &[f64]) -> Result<Vec<f64>> {
    if s_binary.len() != u.len() {
        return Err(Error::LengthMismatch(s_binary.len(), u.len()));
    }
    Ok(s_binary
        .iter()
        .zip(u)
        .map(|(&s, &u)| f64::from(s) * u)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Pool positions in selection order.
    pub indices: Vec<usize>,
    /// Selected samples whose joint score was zero.
    pub shortfall: usize,
}

/// Ranks by joint score, then binarized similarity, then uncertainty, then lowest index, and
/// keeps the first `t`.
///
/// When fewer than `t` joint scores are positive, the remaining slots go to the most uncertain
/// samples that passed the filter before anything the filter rejected.
pub fn select_queries(j: &[f64], s_binary: &[u8], u: &[f64], t: usize) -> Result<Selection> {
    if j.is_empty() {
        return Err(Error::EmptyPool);
    }
    if j.len() != s_binary.len() || j.len() != u.len() {
        return Err(Error::LengthMismatch(j.len(), s_binary.len().min(u.len())));
    }
    if t == 0 {
        return Err(Error::InvalidConfig(
            "query count must be at least 1".into(),
        ));
    }
    let mut order: Vec<usize> = (0..j.len()).collect();
    order.sort_by(|&a, &b| {
        j[b].total_cmp(&j[a])
            .then(s_binary[b].cmp(&s_binary[a]))
            .then(u[b].total_cmp(&u[a]))
            .then(a.cmp(&b))
    });
    order.truncate(t);
    let shortfall = order.iter().filter(|&&i| j[i] <= 0.0).count();
    if shortfall > 0 {
        tracing::warn!(
            shortfall,
            requested = t,
            "fewer positive joint scores than queries"
        );
    }
    Ok(Selection {
        indices: order,
        shortfall,
    })
}

/// Top `t` of `j` with ties to the lowest index.
pub fn top_t(j: &[f64], t: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..j.len()).collect();
    order.sort_by(|&a, &b| j[b].total_cmp(&j[a]).then(a.cmp(&b)));
    order.truncate(t);
    order
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domination {
    /// Unselected index.
    pub dominating: usize,
    /// Selected index it dominates.
    pub dominated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParetoAudit {
    pub passed: bool,
    pub counterexamples: Vec<Domination>,
}

/// Looks for an unselected `i` and a selected `q` with `s_i ≥ s_q`, `u_i ≥ u_q` and one of the
/// two strict. Pairs with equal `u` are not compared.
pub fn pareto_audit(s_binary: &[u8], u: &[f64], selected: &[usize]) -> ParetoAudit {
    let mut chosen = vec![false; u.len()];
    for &q in selected {
        chosen[q] = true;
    }
    let mut counterexamples = Vec::new();
    for &q in selected {
        for i in (0..u.len()).filter(|&i| !chosen[i]) {
            if u[i] == u[q] {
                continue;
            }
            let weakly = s_binary[i] >= s_binary[q] && u[i] >= u[q];
            let strictly = s_binary[i] > s_binary[q] || u[i] > u[q];
            if weakly && strictly {
                counterexamples.push(Domination {
                    dominating: i,
                    dominated: q,
                });
            }
        }
    }
    ParetoAudit {
        passed: counterexamples.is_empty(),
        counterexamples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn joint_examples() {
        assert_eq!(
            joint_scores(&[1, 0, 1], &[0.2, 0.9, 0.8]).unwrap(),
            vec![0.2, 0.0, 0.8]
        );
        assert_eq!(joint_scores(&[0, 0], &[0.4, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            joint_scores(&[1], &[0.1, 0.2]),
            Err(Error::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn selection_examples() {
        let j = [0.0, 0.3, 0.9, 0.3];
        assert_eq!(top_t(&j, 2), vec![2, 1]);
        let sel = select_queries(&j, &[1, 1, 1, 1], &j, 2).unwrap();
        assert_eq!(sel.indices, vec![2, 1]);
        assert_eq!(sel.shortfall, 0);
        let all = select_queries(&j, &[1; 4], &j, 10).unwrap();
        assert_eq!(all.indices.len(), 4);
        assert!(matches!(
            select_queries(&[], &[], &[], 1),
            Err(Error::EmptyPool)
        ));
    }

    #[test]
    fn shortfall_prefers_filtered_in_samples() {
        let s = [0, 1, 0, 1];
        let u = [0.9, 0.0, 0.8, 0.0];
        let j = joint_scores(&s, &u).unwrap();
        let sel = select_queries(&j, &s, &u, 3).unwrap();
        assert_eq!(sel.indices, vec![1, 3, 0]);
        assert_eq!(sel.shortfall, 3);
    }

    #[test]
    fn audit_catches_injected_violation() {
        let s = [1, 1, 0];
        let u = [0.1, 0.9, 0.5];
        let audit = pareto_audit(&s, &u, &[0]);
        assert!(!audit.passed);
        assert!(audit.counterexamples.contains(&Domination {
            dominating: 1,
            dominated: 0
        }));
        assert!(pareto_audit(&[1, 0, 1], &[0.5; 3], &[1]).passed);
    }

    fn scores() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
        (1usize..120).prop_flat_map(|n| {
            (
                prop::collection::vec(0u8..=1, n),
                prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), 0.0f64..=1.0], n),
            )
        })
    }

    proptest! {
        #[test]
        fn selection_matches_sort_oracle((s, u) in scores(), t in 1usize..130) {
            let j = joint_scores(&s, &u).unwrap();
            let sel = select_queries(&j, &s, &u, t).unwrap();
            let oracle = top_t(&j, t);
            let mut got: Vec<f64> = sel.indices.iter().map(|&i| j[i]).collect();
            let mut want: Vec<f64> = oracle.iter().map(|&i| j[i]).collect();
            got.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            prop_assert_eq!(got, want);
            prop_assert_eq!(sel.indices.len(), t.min(j.len()));
        }

        #[test]
        fn selection_is_non_dominated((s, u) in scores(), t in 1usize..130) {
            let j = joint_scores(&s, &u).unwrap();
            let sel = select_queries(&j, &s, &u, t).unwrap();
            prop_assert!(pareto_audit(&s, &u, &sel.indices).passed);
            let positives = j.iter().filter(|&&v| v > 0.0).count();
            let rejected = sel.indices.iter().filter(|&&i| s[i] == 0).count();
            if positives >= t { prop_assert_eq!(rejected, 0); }
        }

        #[test]
        fn joint_is_monotone((s, u) in scores(), k in 0usize..120, bump in 0.0f64..1.0) {
            let k = k % s.len();
            let base = joint_scores(&s, &u).unwrap();
            let mut u2 = u.clone();
            u2[k] = (u2[k] + bump).min(1.0);
            prop_assert!(joint_scores(&s, &u2).unwrap()[k] >= base[k]);
            let mut s2 = s.clone();
            s2[k] = 1;
            prop_assert!(joint_scores(&s2, &u).unwrap()[k] >= base[k]);
            prop_assert!(base.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
