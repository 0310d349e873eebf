//! Small numeric helpers shared across modules.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};

use crate::rng::SimRng;

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Index of the smallest value; ties resolve to the lowest index.
pub fn argmin_tie_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

/// Mean squared deviation between two equal-length vectors.
pub fn msd(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().max(1) as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}

/// Round non-negative reals to integers that sum to `total`, each capped at
/// `cap`, using largest-remainder apportionment. Remainder ties go to the
/// lowest index, as do the floor(+1) picks.
pub fn largest_remainder(values: &[f64], total: u64, cap: u64) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|v| (v.max(0.0) as u64).min(cap)).collect();
    let mut assigned: u64 = out.iter().sum();
    // remainders, largest first, index ascending on ties
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = values[i].max(0.0) - values[i].max(0.0).floor();
        let rj = values[j].max(0.0) - values[j].max(0.0).floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    let mut k = 0;
    while assigned < total && k < order.len() * 2 {
        let i = order[k % order.len()];
        if out[i] < cap {
            out[i] += 1;
            assigned += 1;
        }
        k += 1;
    }
    // Overshoot can only come from values[i] > cap clamping upward never
    // happens (we clamp down), so trim any excess from the smallest
    // remainders backwards.
    let mut k = order.len();
    while assigned > total && k > 0 {
        k -= 1;
        let i = order[k];
        let take = (assigned - total).min(out[i]);
        out[i] -= take;
        assigned -= take;
    }
    out
}

/// Draw multinomial counts by sequential binomial conditioning.
pub fn multinomial_counts(rng: &mut SimRng, mut n: u64, probs: &[f64]) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut rest: f64 = probs.iter().sum();
    for (i, &p) in probs.iter().enumerate() {
        if n == 0 {
            break;
        }
        if i + 1 == probs.len() || rest <= p {
            out[i] = n;
            break;
        }
        let ratio = (p / rest).clamp(0.0, 1.0);
        let draw = if ratio <= 0.0 {
            0
        } else if ratio >= 1.0 {
            n
        } else {
            Binomial::new(n, ratio).expect("valid binomial").sample(rng)
        };
        out[i] = draw;
        n -= draw;
        rest -= p;
    }
    out
}

/// Multivariate hypergeometric draw: sample `draws` items without replacement
/// from classes with the given totals, returning per-class counts.
pub fn multivariate_hypergeometric(rng: &mut SimRng, totals: &[u64], draws: u64) -> Vec<u64> {
    let mut out = vec![0u64; totals.len()];
    let mut remaining_total: u64 = totals.iter().sum();
    let mut remaining_draws = draws.min(remaining_total);
    for (i, &k) in totals.iter().enumerate() {
        if remaining_draws == 0 {
            break;
        }
        remaining_total -= k;
        if remaining_total == 0 {
            out[i] = remaining_draws;
            break;
        }
        let d = Hypergeometric::new(remaining_total + k, k, remaining_draws)
            .expect("valid hypergeometric")
            .sample(rng);
        out[i] = d;
        remaining_draws -= d;
    }
    out
}

/// Sample `k` distinct indices from `0..n` (partial Fisher-Yates over a
/// scratch vector). Order of the result is the sampling order.
pub fn sample_indices(rng: &mut SimRng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{lane, substream};

    #[test]
    fn largest_remainder_matches_hand_examples() {
        // the documented fractional-OUE case: {2.5, 2.5}, total 5 -> {3, 2}
        assert_eq!(largest_remainder(&[2.5, 2.5], 5, 5), vec![3, 2]);
        assert_eq!(largest_remainder(&[1.2, 3.7, 0.1], 5, 5), vec![1, 4, 0]);
        // caps respected
        assert_eq!(largest_remainder(&[4.9, 0.1], 5, 3), vec![3, 2]);
    }

    #[test]
    fn largest_remainder_preserves_total() {
        let v = [0.3, 0.3, 0.4, 2.0];
        let out = largest_remainder(&v, 3, 3);
        assert_eq!(out.iter().sum::<u64>(), 3);
    }

    #[test]
    fn multinomial_counts_sum_to_n() {
        let mut rng = substream(1, lane::DATA);
        let c = multinomial_counts(&mut rng, 1000, &[0.2, 0.3, 0.5]);
        assert_eq!(c.iter().sum::<u64>(), 1000);
    }

    #[test]
    fn hypergeometric_split_is_exact_and_bounded() {
        let mut rng = substream(2, lane::DATA);
        let totals = [40u64, 10, 0, 50];
        for _ in 0..50 {
            let c = multivariate_hypergeometric(&mut rng, &totals, 30);
            assert_eq!(c.iter().sum::<u64>(), 30);
            for (got, cap) in c.iter().zip(totals.iter()) {
                assert!(got <= cap);
            }
        }
    }

    #[test]
    fn sample_indices_distinct() {
        let mut rng = substream(3, lane::DATA);
        let mut s = sample_indices(&mut rng, 100, 40);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 40);
    }
}
