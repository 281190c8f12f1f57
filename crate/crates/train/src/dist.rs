//! Factored categorical distribution over the action components.

use rand::Rng;

use crate::scalar::Scalar;

/// Per-component log-probabilities of one logits row.
pub fn log_softmax<T: Scalar>(logits: &[T], arities: &[usize]) -> Vec<T> {
    let mut out = Vec::with_capacity(logits.len());
    let mut start = 0;
    for &n in arities {
        let row = &logits[start..start + n];
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
        start += n;
    }
    out
}

/// Samples one index per component from log-probabilities.
pub fn sample<T: Scalar, R: Rng>(logp: &[T], arities: &[usize], rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(arities.len());
    let mut start = 0;
    for &n in arities {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut pick = n - 1;
        for (i, &lp) in logp[start..start + n].iter().enumerate() {
            cum += lp.to_f64().exp();
            if u < cum {
                pick = i;
                break;
            }
        }
        out.push(pick);
        start += n;
    }
    out
}

/// Most likely index per component; ties go to the lowest index.
pub fn argmax<T: Scalar>(logits: &[T], arities: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(arities.len());
    let mut start = 0;
    for &n in arities {
        let row = &logits[start..start + n];
        let mut best = 0;
        for i in 1..n {
            if row[i] > row[best] {
                best = i;
            }
        }
        out.push(best);
        start += n;
    }
    out
}

/// Joint log-probability of `actions`.
pub fn log_prob<T: Scalar>(logp: &[T], arities: &[usize], actions: &[usize]) -> T {
    let mut total = T::zero();
    let mut start = 0;
    for (&n, &a) in arities.iter().zip(actions) {
        total = total + logp[start + a];
        start += n;
    }
    total
}

/// Sum of the component entropies.
pub fn entropy<T: Scalar>(logp: &[T]) -> T {
    logp.iter().map(|&lp| -(lp.exp() * lp)).sum()
}
