use super::{FieldError, FieldPrediction};
use crate::geometry::Ray;
use crate::vec3::Vec3;

/// Spread below which a neighborhood counts as collinear (m).
const COLLINEAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceIndex {
    First,
    Second,
}

/// Least-squares plane through a point set, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub centroid: Vec3,
    /// Ascending eigenvalues of the scatter matrix.
    pub eigenvalues: [f64; 3],
    /// Matching unit eigenvectors.
    pub eigenvectors: [Vec3; 3],
    /// +1 or -1; `normal = sign * eigenvectors[0]`.
    pub sign: f64,
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations; eigenvector `k` belongs to eigenvalue `k`, unsorted.
///
/// Jacobi keeps small eigenvalues accurate relative to their own size, which
/// matters for nearly planar scatter matrices with a tied pair of large
/// eigenvalues.
pub fn symmetric_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [Vec3; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let diag = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off == 0.0 || off <= f64::EPSILON * f64::EPSILON * diag * 1e-3 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for row in a.iter_mut().chain(v.iter_mut()) {
                let (kp, kq) = (row[p], row[q]);
                row[p] = c * kp - s * kq;
                row[q] = s * kp + c * kq;
            }
            let (rp, rq) = (a[p], a[q]);
            for k in 0..3 {
                a[p][k] = c * rp[k] - s * rq[k];
                a[q][k] = s * rp[k] + c * rq[k];
            }
            a[p][q] = 0.0;
            a[q][p] = 0.0;
        }
    }
    let vectors = [0, 1, 2].map(|k| Vec3::new(v[0][k], v[1][k], v[2][k]));
    ([a[0][0], a[1][1], a[2][2]], vectors)
}

/// Fits a plane to `points`; the normal is oriented toward `viewpoint`.
pub fn fit_plane(points: &[Vec3], viewpoint: Vec3) -> Result<PlaneFit, FieldError> {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vec3::ZERO, |a, p| a + *p) * (1.0 / n);
    let mut scatter = [[0.0; 3]; 3];
    for p in points {
        let y = (*p - centroid).to_array();
        for (r, row) in scatter.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += y[r] * y[c];
            }
        }
    }
    let (values, vectors) = symmetric_eigen3(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let eigenvalues = order.map(|i| values[i].max(0.0));
    if eigenvalues[1].sqrt() < COLLINEAR_TOLERANCE {
        return Err(FieldError::Degenerate);
    }
    let eigenvectors = order.map(|i| vectors[i].normalized());
    let sign = if eigenvectors[0].dot(viewpoint - centroid) >= 0.0 {
        1.0
    } else {
        -1.0
    };
    Ok(PlaneFit {
        normal: eigenvectors[0] * sign,
        centroid,
        eigenvalues,
        eigenvectors,
        sign,
    })
}

impl PlaneFit {
    /// Gradient of a loss with respect to each input point, given the
    /// gradient with respect to the fitted normal.
    ///
    /// Uses first-order eigenvector perturbation:
    /// `dv = sum_k v_k (v_k^T dC v) / (lambda_0 - lambda_k)`.
    pub fn backward(&self, points: &[Vec3], grad_normal: Vec3) -> Vec<Vec3> {
        let v = self.eigenvectors[0];
        let g = grad_normal * self.sign;
        let mut a = Vec3::ZERO;
        for k in 1..3 {
            let gap = self.eigenvalues[0] - self.eigenvalues[k];
            a += self.eigenvectors[k] * (g.dot(self.eigenvectors[k]) / gap);
        }
        points
            .iter()
            .map(|p| {
                let y = *p - self.centroid;
                a * y.dot(v) + v * a.dot(y)
            })
            .collect()
    }
}

/// Normal of the plane fitted through the nine predicted crossings of a 3x3
/// pixel neighborhood, oriented toward the center ray's origin.
pub fn fit_local_normals(
    predictions: &[FieldPrediction; 9],
    rays: &[Ray; 9],
    surface: SurfaceIndex,
) -> Result<Vec3, FieldError> {
    let points: Vec<Vec3> = predictions
        .iter()
        .map(|p| match surface {
            SurfaceIndex::First => p.x1,
            SurfaceIndex::Second => p.x2,
        })
        .collect();
    Ok(fit_plane(&points, rays[4].origin)?.normal)
}
