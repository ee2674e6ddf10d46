//! Linear projection (PCA) with an optional seeded neighbor-refinement pass.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cosine_similarity, dot, l2_norm};

/// Eigenvalues below this fraction of the largest are treated as zero.
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTransform {
    pub mean: Vec<f64>,
    /// One row per output dimension. Zero rows pad a rank-deficient fit.
    pub basis: Vec<Vec<f64>>,
    pub padded_dims: usize,
}

impl ProjectionTransform {
    pub fn target_dim(&self) -> usize {
        self.basis.len()
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.basis.iter().map(|row| dot(&centered, row)).collect()
    }
}

/// Mean and top `target_dim` principal directions. Each direction's
/// largest-magnitude component is made positive.
pub fn project_fit(vectors: &[Vec<f64>], target_dim: usize) -> Result<ProjectionTransform> {
    let n = vectors.len();
    if target_dim == 0 || n < target_dim {
        return Err(Error::invalid(format!("need at least {target_dim} vectors to fit a projection, got {n}")));
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("vectors of mixed dimension"));
    }
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let x = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);

    // Eigen-decompose whichever of X^T X (d x d) and X X^T (n x n) is smaller.
    let (values, directions): (Vec<f64>, Vec<Vec<f64>>) = if d <= n {
        let eig = SymmetricEigen::new(x.transpose() * &x);
        let dirs = (0..d).map(|k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
        (eig.eigenvalues.iter().copied().collect(), dirs)
    } else {
        let eig = SymmetricEigen::new(&x * x.transpose());
        let dirs = (0..n)
            .map(|k| (x.transpose() * eig.eigenvectors.column(k)).iter().copied().collect())
            .collect();
        (eig.eigenvalues.iter().copied().collect(), dirs)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(target_dim);
    let mut padded = 0;
    for &k in order.iter().take(target_dim) {
        let mut dir = directions[k].clone();
        // re-orthogonalize against the accepted directions
        for b in &basis {
            let p = dot(&dir, b);
            for (x, y) in dir.iter_mut().zip(b) {
                *x -= p * y;
            }
        }
        let norm = l2_norm(&dir);
        if top <= 0.0 || values[k] <= RANK_TOLERANCE * top || norm < 1e-12 {
            break;
        }
        dir.iter_mut().for_each(|x| *x /= norm);
        let pivot = dir
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > dir[best].abs() { i } else { best });
        if dir[pivot] < 0.0 {
            dir.iter_mut().for_each(|x| *x = -*x);
        }
        basis.push(dir);
    }
    while basis.len() < target_dim {
        basis.push(vec![0.0; d]);
        padded += 1;
    }
    if padded > 0 {
        tracing::debug!(padded, "projection input is rank deficient; padding with zero directions");
    }
    Ok(ProjectionTransform { mean, basis, padded_dims: padded })
}

/// Seeded attraction/repulsion over the cosine k-NN graph of `vectors`,
/// moving `coords` in place. Bit-reproducible for a given seed.
#[allow(clippy::needless_range_loop)]
pub fn refine_layout(coords: &mut [[f64; 2]], vectors: &[Vec<f64>], k: usize, iterations: usize, seed: u64) {
    let n = coords.len();
    if n < 3 || k == 0 {
        return;
    }
    let k = k.min(n - 1);
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut sims: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine_similarity(&vectors[i], &vectors[j]).unwrap_or(0.0)))
                .collect();
            sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            sims.into_iter().take(k).map(|(j, _)| j).collect()
        })
        .collect();
    let spread = coords
        .iter()
        .map(|c| c[0].abs().max(c[1].abs()))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for it in 0..iterations {
        let rate = 0.1 * (1.0 - it as f64 / iterations as f64);
        for i in 0..n {
            for &j in &neighbors[i] {
                for a in 0..2 {
                    let delta = rate * (coords[j][a] - coords[i][a]);
                    coords[i][a] += delta * 0.5;
                }
            }
            let m = rng.gen_range(0..n);
            if m == i {
                continue;
            }
            let diff = [coords[i][0] - coords[m][0], coords[i][1] - coords[m][1]];
            let dist2 = (diff[0] * diff[0] + diff[1] * diff[1]) / (spread * spread);
            for a in 0..2 {
                coords[i][a] += rate * diff[a] / (1.0 + dist2);
            }
        }
    }
}
