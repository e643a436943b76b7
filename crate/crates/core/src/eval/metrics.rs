//! Ranking metrics over binary relevance vectors. Results are fractions in
//! [0, 1].

/// Relevant items among the first `k` positions, divided by `k` even when the
/// list is shorter.
pub fn precision_at_k(rel: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "precision needs k >= 1");
    rel.iter().take(k).filter(|&&r| r).count() as f64 / k as f64
}

/// 1 / rank of the first relevant item, or 0.
pub fn reciprocal_rank(rel: &[bool]) -> f64 {
    rel.iter()
        .position(|&r| r)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Mean of precision at each relevant position, over the relevant items in
/// the list.
pub fn average_precision(rel: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in rel.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

fn dcg(rel: impl Iterator<Item = bool>) -> f64 {
    rel.enumerate()
        .filter(|(_, r)| *r)
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum()
}

/// Binary-gain nDCG over the first `k` positions; 0 when nothing is relevant.
pub fn ndcg_at_k(rel: &[bool], k: usize) -> f64 {
    let relevant = rel.iter().filter(|&&r| r).count();
    let ideal = dcg((0..relevant).map(|_| true).take(k));
    if ideal == 0.0 {
        return 0.0;
    }
    dcg(rel.iter().copied().take(k)) / ideal
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn precision_examples() {
        assert_eq!(precision_at_k(&b(&[1, 0, 1, 1, 0]), 5), 0.6);
        assert_eq!(precision_at_k(&b(&[0, 0, 0]), 3), 0.0);
        assert_eq!(precision_at_k(&b(&[1, 1]), 5), 0.4);
    }

    #[test]
    fn reciprocal_rank_examples() {
        assert_eq!(reciprocal_rank(&b(&[0, 0, 1])), 1.0 / 3.0);
        assert_eq!(reciprocal_rank(&b(&[1, 0, 0])), 1.0);
        assert_eq!(reciprocal_rank(&b(&[0, 0])), 0.0);
    }

    #[test]
    fn average_precision_examples() {
        assert!((average_precision(&b(&[1, 0, 1])) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((oracle::ap(&[1, 0, 1]) - 0.833_333_333_333).abs() < 1e-9);
        assert_eq!(average_precision(&b(&[1, 1, 1])), 1.0);
        assert_eq!(average_precision(&b(&[0, 1])), 0.5);
        assert_eq!(oracle::ap(&[0, 1]), 0.5);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&b(&[1, 1]), 2), 1.0);
        assert!((ndcg_at_k(&b(&[0, 1]), 2) - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((oracle::ndcg(&[0, 1], 2) - 0.630_929_753_571).abs() < 1e-9);
        assert_eq!(ndcg_at_k(&b(&[0, 0]), 2), 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn agree_with_oracle(rel in proptest::collection::vec(0u8..2, 0..=20), k in 1usize..25) {
            let r = b(&rel);
            prop_assert!((precision_at_k(&r, k) - oracle::precision(&rel, k)).abs() < 1e-9);
            prop_assert!((reciprocal_rank(&r) - oracle::rr(&rel)).abs() < 1e-9);
            prop_assert!((average_precision(&r) - oracle::ap(&rel)).abs() < 1e-9);
            prop_assert!((ndcg_at_k(&r, k) - oracle::ndcg(&rel, k)).abs() < 1e-9);
            for m in [precision_at_k(&r, k), reciprocal_rank(&r), average_precision(&r), ndcg_at_k(&r, k)] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }

        #[test]
        fn precision_ignores_tail(rel in proptest::collection::vec(0u8..2, 0..=20), tail in proptest::collection::vec(0u8..2, 0..5), k in 1usize..10) {
            let mut longer = rel.clone();
            if rel.len() >= k {
                longer.extend(tail);
            }
            prop_assert_eq!(precision_at_k(&b(&rel), k), precision_at_k(&b(&longer), k));
        }
    }
}
