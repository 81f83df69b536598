//! Sorted index tuples in colexicographic order, and set partitions.
//!
//! A sorted tuple `c_1 ≤ … ≤ c_k` has rank `Σ_m C(c_m + m − 1, m)`. Tuples
//! whose entries are all below `L` occupy ranks `0..count(L, k)`, so storage
//! for a derivative of order k at a time with `L` live cells is a prefix.

/// Binomial coefficient; zero when `k > n`.
pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

/// Number of sorted k-tuples with entries below `live`.
pub fn count(live: usize, k: usize) -> usize {
    if k == 0 {
        return 1;
    }
    if live == 0 {
        return 0;
    }
    binomial(live + k - 1, k)
}

/// Rank of a sorted tuple.
pub fn rank(tuple: &[usize]) -> usize {
    tuple
        .iter()
        .enumerate()
        .map(|(m, &c)| binomial(c + m, m + 1))
        .sum()
}

/// Rank of the sorted tuple `tuple ∪ {extra}`.
pub fn rank_with(tuple: &[usize], extra: usize) -> usize {
    let mut buf = [0usize; 8];
    let k = tuple.len();
    let pos = tuple.partition_point(|&c| c <= extra);
    buf[..pos].copy_from_slice(&tuple[..pos]);
    buf[pos] = extra;
    buf[pos + 1..=k].copy_from_slice(&tuple[pos..]);
    rank(&buf[..=k])
}

/// All sorted k-tuples with entries below `live`, in rank order.
pub fn enumerate(live: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::with_capacity(count(live, k));
    for last in 0..live {
        for mut head in enumerate(last + 1, k - 1) {
            head.push(last);
            out.push(head);
        }
    }
    out
}

/// Set partitions of `{0, …, k−1}`; each block lists positions in order.
pub fn set_partitions(k: usize) -> Vec<Vec<Vec<usize>>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in set_partitions(k - 1) {
        for b in 0..p.len() {
            let mut q = p.clone();
            q[b].push(k - 1);
            out.push(q);
        }
        let mut q = p;
        q.push(vec![k - 1]);
        out.push(q);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_matches_rank_order() {
        for k in 0..=3 {
            for live in 0..7 {
                let all = enumerate(live, k);
                assert_eq!(all.len(), count(live, k), "live={live} k={k}");
                for (i, t) in all.iter().enumerate() {
                    assert_eq!(rank(t), i);
                    assert!(t.windows(2).all(|w| w[0] <= w[1]));
                }
            }
        }
    }

    #[test]
    fn insertion_rank() {
        assert_eq!(rank_with(&[1, 4], 2), rank(&[1, 2, 4]));
        assert_eq!(rank_with(&[], 5), 5);
        assert_eq!(rank_with(&[3], 3), rank(&[3, 3]));
        assert_eq!(rank_with(&[0, 2], 7), rank(&[0, 2, 7]));
    }

    #[test]
    fn bell_numbers() {
        let sizes: Vec<usize> = (0..=4).map(|k| set_partitions(k).len()).collect();
        assert_eq!(sizes, vec![1, 1, 2, 5, 15]);
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(5, 2), 10);
        assert_eq!(binomial(2, 5), 0);
        assert_eq!(binomial(40, 20), 137_846_528_820);
    }
}
