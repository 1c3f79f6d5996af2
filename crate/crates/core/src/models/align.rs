//! Label alignment of estimated experts against true experts.

use crate::error::{Error, Result};

pub const MAX_ALIGN_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `permutation[k]` is the estimated expert matched to true expert `k`.
    pub permutation: Vec<usize>,
    /// Squared distance of each true expert to its match.
    pub errors: Vec<f64>,
    /// Mean of `errors`.
    pub mse: f64,
    /// Same quantity under the identity labelling.
    pub unaligned_mse: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(k), &mut vec![false; k], &mut out);
    out
}

/// Exhaustive search over all `K!` labellings; ties keep the lexicographically first.
pub fn align_experts(estimated: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Alignment> {
    let k = truth.len();
    if estimated.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: estimated.len() });
    }
    if k == 0 {
        return Err(Error::InvalidConfig("no experts to align".into()));
    }
    if k > MAX_ALIGN_K {
        return Err(Error::Unsupported(format!("alignment supports K <= {MAX_ALIGN_K}, got {k}")));
    }
    for (e, t) in estimated.iter().zip(truth) {
        crate::error::check_dim(t.len(), e.len())?;
    }
    let cost: Vec<Vec<f64>> = truth.iter().map(|t| estimated.iter().map(|e| sq_dist(e, t)).collect()).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for perm in permutations(k) {
        let total: f64 = perm.iter().enumerate().map(|(t, &e)| cost[t][e]).sum();
        if best.as_ref().is_none_or(|b| total < b.0) {
            best = Some((total, perm));
        }
    }
    let (total, permutation) = best.expect("k >= 1");
    let errors: Vec<f64> = permutation.iter().enumerate().map(|(t, &e)| cost[t][e]).collect();
    let unaligned: f64 = (0..k).map(|t| cost[t][t]).sum();
    Ok(Alignment { permutation, errors, mse: total / k as f64, unaligned_mse: unaligned / k as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recovers_a_shuffle() {
        let truth = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, -1.0]];
        let est = vec![truth[2].clone(), truth[0].clone(), truth[1].clone()];
        let a = align_experts(&est, &truth).unwrap();
        assert_eq!(a.permutation, vec![1, 2, 0]);
        assert_eq!(a.mse, 0.0);
    }

    #[test]
    fn single_expert_is_identity() {
        let a = align_experts(&[vec![1.0]], &[vec![3.0]]).unwrap();
        assert_eq!(a.permutation, vec![0]);
        assert_eq!(a.mse, 4.0);
    }

    #[test]
    fn rejects_large_k() {
        let v = vec![vec![0.0]; 9];
        assert!(matches!(align_experts(&v, &v), Err(Error::Unsupported(_))));
    }

    proptest! {
        #[test]
        fn aligned_never_worse(v in proptest::collection::vec(-5.0..5.0f64, 12)) {
            let est = vec![v[0..3].to_vec(), v[3..6].to_vec()];
            let truth = vec![v[6..9].to_vec(), v[9..12].to_vec()];
            let a = align_experts(&est, &truth).unwrap();
            let swapped = (sq_dist(&est[1], &truth[0]) + sq_dist(&est[0], &truth[1])) / 2.0;
            prop_assert!(a.mse <= a.unaligned_mse);
            prop_assert!(a.mse <= swapped + 1e-12);
        }
    }
}
