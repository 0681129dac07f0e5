//! Contrastive loss, mask regularizer and their combination.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are replaced by it before normalizing.
pub const NORM_FLOOR: f64 = 1e-12;

/// Cosine similarities between two equally sized embedding batches.
#[derive(Debug, Clone)]
pub struct CosineSimilarity {
    pub values: Array2<f64>,
    anchors_unit: Array2<f64>,
    views_unit: Array2<f64>,
    anchor_norms: Array1<f64>,
    view_norms: Array1<f64>,
    /// Number of rows whose norm was below [`NORM_FLOOR`].
    pub floored: usize,
}

fn normalize_rows(x: &Array2<f64>) -> (Array2<f64>, Array1<f64>, usize) {
    let mut unit = x.clone();
    let mut norms = Array1::<f64>::zeros(x.nrows());
    let mut floored = 0;
    for (i, mut row) in unit.axis_iter_mut(Axis(0)).enumerate() {
        let mut n = row.dot(&row).sqrt();
        if n < NORM_FLOOR {
            n = NORM_FLOOR;
            floored += 1;
        }
        norms[i] = n;
        row /= n;
    }
    (unit, norms, floored)
}

/// Entry `(i, j)` is the cosine of anchor `i` with view `j`.
pub fn cosine_similarity_matrix(anchors: &Array2<f64>, views: &Array2<f64>) -> Result<CosineSimilarity> {
    if anchors.dim() != views.dim() {
        return Err(Error::shape(
            "similarity inputs",
            format!("{}x{}", anchors.nrows(), anchors.ncols()),
            format!("{}x{}", views.nrows(), views.ncols()),
        ));
    }
    let (anchors_unit, anchor_norms, fa) = normalize_rows(anchors);
    let (views_unit, view_norms, fv) = normalize_rows(views);
    let values = anchors_unit.dot(&views_unit.t());
    Ok(CosineSimilarity {
        values,
        anchors_unit,
        views_unit,
        anchor_norms,
        view_norms,
        floored: fa + fv,
    })
}

fn unit_backward(unit: &Array2<f64>, norms: &Array1<f64>, d_unit: &Array2<f64>) -> Array2<f64> {
    let mut out = d_unit.clone();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let u = unit.row(i);
        let n = norms[i];
        if n <= NORM_FLOOR {
            row /= n;
            continue;
        }
        let proj = u.dot(&row);
        row.zip_mut_with(&u, |g, &ui| *g = (*g - ui * proj) / n);
    }
    out
}

impl CosineSimilarity {
    /// Gradients with respect to the raw anchor and view embeddings.
    pub fn backward(&self, d_sim: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let d_anchor_unit = d_sim.dot(&self.views_unit);
        let d_view_unit = d_sim.t().dot(&self.anchors_unit);
        (
            unit_backward(&self.anchors_unit, &self.anchor_norms, &d_anchor_unit),
            unit_backward(&self.views_unit, &self.view_norms, &d_view_unit),
        )
    }
}

fn log_sum_exp(row: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = row.clone().fold(f64::NEG_INFINITY, f64::max);
    max + row.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_infonce(sim: &Array2<f64>, tau: f64) -> Result<()> {
    if sim.nrows() != sim.ncols() {
        return Err(Error::shape("similarity matrix", "square", format!("{:?}", sim.dim())));
    }
    if sim.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "InfoNCE needs a batch of at least 2 (no negatives otherwise)".into(),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

/// `-(1/B) sum_i log(exp(S_ii / tau) / sum_j exp(S_ij / tau))`. The
/// denominator includes the positive pair.
pub fn infonce_loss(sim: &Array2<f64>, tau: f64) -> Result<f64> {
    check_infonce(sim, tau)?;
    let b = sim.nrows();
    let total: f64 = sim
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| log_sum_exp(row.iter().map(|v| v / tau)) - row[i] / tau)
        .sum();
    Ok(total / b as f64)
}

/// `dL/dS` for [`infonce_loss`].
pub fn infonce_backward(sim: &Array2<f64>, tau: f64) -> Result<Array2<f64>> {
    check_infonce(sim, tau)?;
    let b = sim.nrows();
    let mut grad = Array2::<f64>::zeros(sim.raw_dim());
    let scale = 1.0 / (b as f64 * tau);
    for (i, row) in sim.axis_iter(Axis(0)).enumerate() {
        let lse = log_sum_exp(row.iter().map(|v| v / tau));
        for (j, &v) in row.iter().enumerate() {
            let p = (v / tau - lse).exp();
            grad[[i, j]] = scale * (p - if i == j { 1.0 } else { 0.0 });
        }
    }
    Ok(grad)
}

/// Mean absolute mask value, i.e. the proportion of components kept.
pub fn l1_regularizer(mask: &[f64]) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.iter().map(|w| w.abs()).sum::<f64>() / mask.len() as f64
}

/// Subgradient of [`l1_regularizer`].
pub fn l1_regularizer_grad(mask: &[f64]) -> Vec<f64> {
    let n = mask.len() as f64;
    mask.iter().map(|w| w.signum() / n).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub regularizer: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `contrastive + lambda * regularizer`.
pub fn total_loss(contrastive: f64, regularizer: f64, lambda: f64) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(LossBreakdown {
        contrastive,
        regularizer,
        total: contrastive + lambda * regularizer,
        lambda,
    })
}

/// `log B - L_CL`, the InfoNCE lower bound on the anchor/view mutual
/// information.
pub fn mi_lower_bound(batch: usize, contrastive: f64) -> f64 {
    (batch as f64).ln() - contrastive
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_unit_vectors_give_ones() {
        let a = Array2::from_shape_vec((3, 2), vec![0.6, 0.8, 0.6, 0.8, 0.6, 0.8]).unwrap();
        let s = cosine_similarity_matrix(&a, &a).unwrap();
        assert!(s.values.iter().all(|v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn orthonormal_rows_give_identity() {
        let a = Array2::<f64>::eye(4);
        let s = cosine_similarity_matrix(&a, &a).unwrap();
        assert_eq!(s.values, Array2::<f64>::eye(4));
    }

    #[test]
    fn matches_naive_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0));
        let v = Array2::from_shape_fn((6, 5), |_| rng.gen_range(-1.0..1.0));
        let s = cosine_similarity_matrix(&a, &v).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = (0..5).map(|k| a[[i, k]] * v[[j, k]]).sum();
                let na: f64 = (0..5).map(|k| a[[i, k]].powi(2)).sum::<f64>().sqrt();
                let nv: f64 = (0..5).map(|k| v[[j, k]].powi(2)).sum::<f64>().sqrt();
                assert!((s.values[[i, j]] - dot / (na * nv)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_embedding_is_flagged() {
        let a = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let s = cosine_similarity_matrix(&a, &a).unwrap();
        assert_eq!(s.floored, 2);
        assert!(s.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn uniform_similarities_give_log_b() {
        for c in [-0.7, 0.0, 0.9] {
            let sim = Array2::from_elem((5, 5), c);
            assert!((infonce_loss(&sim, 0.2).unwrap() - 5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_example() {
        let sim = Array2::<f64>::eye(2);
        let loss = infonce_loss(&sim, 0.2).unwrap();
        let expected = (1.0f64 + (-5.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 0.0067153).abs() < 1e-7);
    }

    #[test]
    fn matches_unstabilized_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sim = Array2::from_shape_fn((8, 8), |_| rng.gen_range(-1.0..1.0));
        let tau: f64 = 0.5;
        let mut naive = 0.0;
        for i in 0..8 {
            let denom: f64 = (0..8).map(|j| (sim[[i, j]] / tau).exp()).sum();
            naive -= ((sim[[i, i]] / tau).exp() / denom).ln();
        }
        naive /= 8.0;
        assert!((infonce_loss(&sim, tau).unwrap() - naive).abs() < 1e-10);
    }

    #[test]
    fn infonce_rejects_single_sample() {
        assert!(infonce_loss(&Array2::eye(1), 0.2).is_err());
        assert!(infonce_loss(&Array2::eye(2), 0.0).is_err());
    }

    #[test]
    fn infonce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sim = Array2::from_shape_fn((4, 4), |_| rng.gen_range(-1.0..1.0));
        let g = infonce_backward(&sim, 0.2).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in 0..4 {
                let mut p = sim.clone();
                p[[i, j]] += h;
                let mut m = sim.clone();
                m[[i, j]] -= h;
                let fd = (infonce_loss(&p, 0.2).unwrap() - infonce_loss(&m, 0.2).unwrap()) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let v = Array2::from_shape_fn((3, 4), |_| rng.gen_range(-1.0..1.0));
        let w = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        let f = |a: &Array2<f64>, v: &Array2<f64>| (cosine_similarity_matrix(a, v).unwrap().values * &w).sum();
        let (da, dv) = cosine_similarity_matrix(&a, &v).unwrap().backward(&w);
        let h = 1e-6;
        for idx in [(0usize, 0usize), (1, 2), (2, 3)] {
            let mut ap = a.clone();
            ap[idx] += h;
            let mut am = a.clone();
            am[idx] -= h;
            assert!(((f(&ap, &v) - f(&am, &v)) / (2.0 * h) - da[idx]).abs() < 1e-8);
            let mut vp = v.clone();
            vp[idx] += h;
            let mut vm = v.clone();
            vm[idx] -= h;
            assert!(((f(&a, &vp) - f(&a, &vm)) / (2.0 * h) - dv[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn regularizer_values() {
        assert_eq!(l1_regularizer(&[1.0; 6]), 1.0);
        assert_eq!(l1_regularizer(&[0.0; 6]), 0.0);
        assert_eq!(l1_regularizer(&[0.5, 0.25, 0.25, 1.0]), 0.5);
    }

    #[test]
    fn total_loss_combination() {
        let b = total_loss(2.0, 0.4, 3.0).unwrap();
        assert!((b.total - 3.2).abs() < 1e-15);
        assert_eq!(total_loss(1.7, 0.4, 0.0).unwrap().total, 1.7);
        assert_eq!(total_loss(1.7, 0.0, 10.0).unwrap().total, 1.7);
        assert!(total_loss(1.0, 1.0, -1.0).is_err());
    }
}
