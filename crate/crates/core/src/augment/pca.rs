use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::sampler::SeedPatch;

/// Principal directions of the pooled RGB pixel distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorPCABasis {
    /// Unit eigenvectors, one per row, ordered by descending eigenvalue.
    pub components: [[f64; 3]; 3],
    pub eigenvalues: [f64; 3],
    pub mean_rgb: [f64; 3],
}

impl ColorPCABasis {
    /// Standard basis around a given mean; useful when no corpus is available.
    pub fn identity(mean_rgb: [f64; 3]) -> Self {
        ColorPCABasis {
            components: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            eigenvalues: [0.0; 3],
            mean_rgb,
        }
    }

    pub fn covariance(&self) -> [[f64; 3]; 3] {
        let mut c = [[0.0; 3]; 3];
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    c[i][j] += self.eigenvalues[k] * self.components[k][i] * self.components[k][j];
                }
            }
        }
        c
    }
}

/// Cyclic Jacobi eigen-decomposition of a symmetric 3x3 matrix. Returns
/// eigenvalues and eigenvectors as columns of the rotation matrix.
pub(crate) fn jacobi_eigen(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A <- J^T A J
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in &mut v {
                let vkp = row[p];
                let vkq = row[q];
                row[p] = c * vkp - s * vkq;
                row[q] = s * vkp + c * vkq;
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2]], v)
}

/// Mean and 3x3 covariance of every pixel of every patch, followed by an
/// eigen-decomposition. Each component's largest-magnitude entry is made
/// positive; negative round-off eigenvalues are clamped to 0.
pub fn fit_color_pca(patches: &[SeedPatch]) -> Result<ColorPCABasis> {
    ensure!(patches.len() >= 2, "color PCA needs at least 2 patches, got {}", patches.len());
    let pixels = || patches.iter().flat_map(|p| p.pixels.data().chunks_exact(3));
    let mut mean = [0.0f64; 3];
    let mut n = 0usize;
    for px in pixels() {
        for c in 0..3 {
            mean[c] += f64::from(px[c]);
        }
        n += 1;
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = [[0.0f64; 3]; 3];
    for px in pixels() {
        let d = [f64::from(px[0]) - mean[0], f64::from(px[1]) - mean[1], f64::from(px[2]) - mean[2]];
        for i in 0..3 {
            for j in i..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for i in 0..3 {
        for j in i..3 {
            cov[i][j] /= n as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok(basis_from_covariance(cov, mean))
}

pub(crate) fn basis_from_covariance(cov: [[f64; 3]; 3], mean_rgb: [f64; 3]) -> ColorPCABasis {
    let (vals, vecs) = jacobi_eigen(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut components = [[0.0; 3]; 3];
    let mut eigenvalues = [0.0; 3];
    for (k, &i) in order.iter().enumerate() {
        let mut comp = [vecs[0][i], vecs[1][i], vecs[2][i]];
        let norm = (comp[0] * comp[0] + comp[1] * comp[1] + comp[2] * comp[2]).sqrt();
        let lead = comp.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if lead < 0.0 { -1.0 } else { 1.0 };
        for x in &mut comp {
            *x *= sign / norm;
        }
        components[k] = comp;
        eigenvalues[k] = vals[i].max(0.0);
    }
    ColorPCABasis {
        components,
        eigenvalues,
        mean_rgb,
    }
}
