//! Deterministic 2-component PCA used for trajectory projection.

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns (eigenvalues, eigenvectors) sorted by descending eigenvalue;
/// eigenvectors are the columns, returned row-major as `vecs[i][k]` = the
/// i-th component of eigenvector k.
pub fn symmetric_eigen(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].partial_cmp(&a[i][i]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let vectors: Vec<Vec<f64>> = (0..n)
        .map(|row| order.iter().map(|&col| v[row][col]).collect())
        .collect();
    (values, vectors)
}

/// Result of fitting a 2-component PCA basis.
pub struct Pca2 {
    pub mean: Vec<f64>,
    /// Two unit loading vectors, sign-fixed so the first nonzero entry of
    /// each is positive.
    pub components: [Vec<f64>; 2],
    pub eigenvalues: Vec<f64>,
}

impl Pca2 {
    pub fn project_point(&self, point: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (k, comp) in self.components.iter().enumerate() {
            out[k] = point
                .iter()
                .zip(&self.mean)
                .zip(comp)
                .map(|((&x, &m), &c)| (x - m) * c)
                .sum();
        }
        out
    }
}

/// Fits the top-2 principal components of the mean-centered point set.
///
/// Points of dimension 1, or point sets with no variance at all, have no
/// 2-D projection and yield a degenerate-projection error. A rank-1 cloud is
/// fine: the second coordinate simply comes out zero.
pub fn fit_pca2(points: &[Vec<f64>]) -> Result<Pca2> {
    if points.len() < 2 {
        return Err(Error::Parameter(format!(
            "pca needs at least 2 points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::ShapeMismatch {
            expected: vec![dim],
            got: vec![points.iter().map(|p| p.len()).find(|&l| l != dim).unwrap()],
        });
    }
    if dim < 2 {
        return Err(Error::DegenerateProjection);
    }

    let n = points.len() as f64;
    let mean: Vec<f64> = (0..dim)
        .map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n)
        .collect();

    let mut cov = vec![vec![0.0; dim]; dim];
    for p in points {
        for i in 0..dim {
            let di = p[i] - mean[i];
            for j in i..dim {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }

    let (values, vectors) = symmetric_eigen(&cov);
    let scale = values[0].abs().max(1.0);
    if values[0] <= 1e-12 * scale {
        return Err(Error::DegenerateProjection);
    }

    let mut components: [Vec<f64>; 2] = [
        (0..dim).map(|i| vectors[i][0]).collect(),
        (0..dim).map(|i| vectors[i][1]).collect(),
    ];
    for comp in components.iter_mut() {
        if let Some(first) = comp.iter().find(|&&c| c.abs() > 1e-12) {
            if *first < 0.0 {
                for c in comp.iter_mut() {
                    *c = -*c;
                }
            }
        }
    }

    Ok(Pca2 {
        mean,
        components,
        eigenvalues: values,
    })
}

/// Projects a point set onto its own top-2 principal components.
pub fn pca_project(points: &[Tensor]) -> Result<Vec<[f64; 2]>> {
    if points.len() < 2 {
        return Err(Error::Parameter(format!(
            "pca needs at least 2 points, got {}",
            points.len()
        )));
    }
    for p in &points[1..] {
        points[0].check_same_shape(p)?;
    }
    let flat: Vec<Vec<f64>> = points.iter().map(|t| t.data().to_vec()).collect();
    let pca = fit_pca2(&flat)?;
    Ok(flat.iter().map(|p| pca.project_point(p)).collect())
}
