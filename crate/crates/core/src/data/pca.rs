use super::{DataError, HsiCube, Result};

/// Principal-component scores of every pixel plus the projection that
/// produced them.
#[derive(Debug, Clone)]
pub struct ReducedCube {
    rows: usize,
    cols: usize,
    components: usize,
    scores: Vec<f64>,
    /// `bands x components`, row-major; column `j` is the `j`-th loading.
    loadings: Vec<f64>,
    means: Vec<f64>,
    /// All covariance eigenvalues, non-increasing.
    eigenvalues: Vec<f64>,
}

impl ReducedCube {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn bands(&self) -> usize {
        self.means.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn pixel_scores(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.cols + col) * self.components;
        &self.scores[start..start + self.components]
    }

    pub fn loadings(&self) -> &[f64] {
        &self.loadings
    }

    pub fn loading(&self, band: usize, component: usize) -> f64 {
        self.loadings[band * self.components + component]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Share of total variance carried by each retained component.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        self.eigenvalues[..self.components]
            .iter()
            .map(|&v| if total > 0.0 { v.max(0.0) / total } else { 0.0 })
            .collect()
    }

    /// Maps scores back to mean-centered band space.
    pub fn reconstruct_centered(&self, scores: &[f64]) -> Vec<f64> {
        let n = self.bands();
        (0..n)
            .map(|b| {
                (0..self.components)
                    .map(|j| self.loading(b, j) * scores[j])
                    .sum()
            })
            .collect()
    }
}

/// Projects every pixel onto the top `components` eigenvectors of the band
/// covariance matrix.
///
/// Each loading's sign is fixed so that its largest-magnitude entry is
/// positive.
pub fn pca_reduce(cube: &HsiCube, components: usize) -> Result<ReducedCube> {
    let n = cube.bands();
    let pixels = cube.pixels();
    if components == 0 || components > n {
        return Err(DataError::Param(format!(
            "number of components must lie in 1..={n}, got {components}"
        )));
    }
    if pixels < components + 1 {
        return Err(DataError::Param(format!(
            "PCA with {components} components needs at least {} pixels, got {pixels}",
            components + 1
        )));
    }

    let mut means = vec![0.0; n];
    for px in cube.values().chunks_exact(n) {
        for (m, &v) in means.iter_mut().zip(px) {
            *m += v as f64;
        }
    }
    means.iter_mut().for_each(|m| *m /= pixels as f64);

    let mut cov = vec![0.0; n * n];
    let mut centered = vec![0.0; n];
    for px in cube.values().chunks_exact(n) {
        for b in 0..n {
            centered[b] = px[b] as f64 - means[b];
        }
        for i in 0..n {
            let ci = centered[i];
            let row = &mut cov[i * n..i * n + i + 1];
            for (j, c) in row.iter_mut().enumerate() {
                *c += ci * centered[j];
            }
        }
    }
    let denom = (pixels - 1) as f64;
    for i in 0..n {
        for j in 0..=i {
            let v = cov[i * n + j] / denom;
            cov[i * n + j] = v;
            cov[j * n + i] = v;
        }
    }

    let (eigenvalues, vectors) = symmetric_eigen(&cov, n);
    let mut loadings = vec![0.0; n * components];
    for j in 0..components {
        let col: Vec<f64> = (0..n).map(|b| vectors[b * n + j]).collect();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for b in 0..n {
            loadings[b * components + j] = sign * col[b];
        }
    }

    let mut scores = Vec::with_capacity(pixels * components);
    for px in cube.values().chunks_exact(n) {
        for b in 0..n {
            centered[b] = px[b] as f64 - means[b];
        }
        for j in 0..components {
            scores.push((0..n).map(|b| centered[b] * loadings[b * components + j]).sum());
        }
    }

    Ok(ReducedCube {
        rows: cube.rows(),
        cols: cube.cols(),
        components,
        scores,
        loadings,
        means,
        eigenvalues,
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric `n x n` matrix.
///
/// Returns eigenvalues in non-increasing order and the matching
/// eigenvectors as columns of a row-major `n x n` matrix.
pub fn symmetric_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[k * n + dst] = v[k * n + src];
        }
    }
    (values, vectors)
}
