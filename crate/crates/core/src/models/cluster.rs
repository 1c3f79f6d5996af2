//! Hard clustering on raw context, then one pooled outcome model per cluster.

use rand::Rng;

use crate::benchgen::LoggedDataset;
use crate::error::{Error, Result};
use crate::rng::{child_seed, stream, StreamRng};

use super::pooled::{fit_pooled_coef, pooled_logit};
use super::{nearest_centroid, FitConfig, FitData, ModelParams, WeightModel};
use crate::logistic::mean_log_loss;

const KMEANS_RESTARTS: usize = 10;
const KMEANS_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..points.len())
        } else {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KMeansFit {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let c = nearest_centroid(&centroids, p);
            if *a != c {
                *a = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignment.iter().zip(points) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        sq_dist(&points[i], &centroids[assignment[i]])
                            .total_cmp(&sq_dist(&points[j], &centroids[assignment[j]]))
                    })
                    .expect("nonempty points");
                centroids[c] = points[far].clone();
                assignment[far] = c;
                changed = true;
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let inertia = assignment.iter().zip(points).map(|(a, p)| sq_dist(p, &centroids[*a])).sum();
    KMeansFit { centroids, assignment, inertia }
}

/// k-means++ seeding with Lloyd refinement; best inertia over `restarts`.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || points.len() < k {
        return Err(Error::InvalidConfig(format!("k-means needs 1 <= k <= n, got k={k}, n={}", points.len())));
    }
    let mut best: Option<KMeansFit> = None;
    for r in 0..restarts.max(1) {
        let mut rng = stream(seed, &format!("kmeans/{k}/{r}"));
        let fit = lloyd(points, plus_plus_init(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn fit_cluster_then_fit(train: &LoggedDataset, val: &LoggedDataset, cfg: &FitConfig) -> Result<WeightModel> {
    let train = FitData::new(train);
    let val = FitData::new(val);
    let points: Vec<Vec<f64>> = (0..train.n).map(|i| train.context(i).to_vec()).collect();
    let seed = child_seed(cfg.seed, "cluster");
    let dx1 = train.dx1();
    let mut best: Option<(f64, usize, f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> = None;
    for k in cfg.k_grid_or(&[2, 3, 4, 5, 6]) {
        if k > train.n {
            continue;
        }
        let km = kmeans(&points, k, KMEANS_RESTARTS, seed)?;
        let members: Vec<Vec<usize>> =
            (0..k).map(|c| (0..train.n).filter(|&i| km.assignment[i] == c).collect()).collect();
        let val_cluster: Vec<usize> = (0..val.n).map(|i| nearest_centroid(&km.centroids, val.context(i))).collect();
        for &ridge in &cfg.reg_grid {
            let coefs: Vec<Vec<f64>> =
                members.iter().map(|idx| fit_pooled_coef(&train.subset(idx), ridge, None, None).coef).collect();
            let loss = mean_log_loss((0..val.n).map(|i| pooled_logit(&val, i, &coefs[val_cluster[i]])), &val.y);
            if best.as_ref().is_none_or(|b| loss < b.0) {
                best = Some((loss, k, ridge, km.centroids.clone(), coefs));
            }
        }
    }
    let (val_loss, k, ridge, centroids, coefs) =
        best.ok_or_else(|| Error::InvalidConfig("no feasible cluster count".into()))?;
    let experts = coefs.iter().map(|c| c[dx1..].to_vec()).collect();
    let param_count = k * (train.d_x + dx1 + train.j);
    let mut model = WeightModel::new("cluster", &train, ModelParams::NearestCentroid { centroids, experts }, param_count);
    model.val_loss = val_loss;
    model.select("k", k);
    model.select("ridge", ridge);
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testutil::tiny;

    #[test]
    fn kmeans_separates_obvious_clusters() {
        let mut points = Vec::new();
        for i in 0..50 {
            let e = i as f64 * 1e-3;
            points.push(vec![-5.0 + e, 0.0]);
            points.push(vec![5.0 - e, 1.0]);
        }
        let fit = kmeans(&points, 2, 3, 7).unwrap();
        for pair in fit.assignment.chunks(2) {
            assert_ne!(pair[0], pair[1]);
        }
        assert!(fit.assignment.iter().step_by(2).all(|a| *a == fit.assignment[0]));
    }

    #[test]
    fn kmeans_handles_duplicate_points() {
        let points = vec![vec![1.0, 1.0]; 10];
        let fit = kmeans(&points, 3, 2, 1).unwrap();
        assert!(fit.inertia.abs() < 1e-12);
        assert!(kmeans(&points, 11, 1, 1).is_err());
    }

    #[test]
    fn cluster_model_routes_by_centroid() {
        let b = tiny(3);
        let cfg = FitConfig { k_grid: Some(vec![2]), reg_grid: vec![1e-2], ..Default::default() };
        let m = fit_cluster_then_fit(&b.train, &b.val, &cfg).unwrap();
        let ModelParams::NearestCentroid { centroids, experts } = &m.params else { panic!("wrong class") };
        assert_eq!(centroids.len(), 2);
        let x = &b.eval[0].context;
        assert_eq!(m.predict_w(x), experts[nearest_centroid(centroids, x.full())]);
        assert!(m.val_loss.is_finite());
    }
}
