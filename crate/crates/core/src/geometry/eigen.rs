//! Cyclic Jacobi eigen-decomposition for symmetric 3x3 matrices.

use nalgebra::Matrix3;

const MAX_SWEEPS: usize = 64;

/// Eigenvalues (ascending) and the matching unit eigenvectors as columns.
#[derive(Debug, Clone, Copy)]
pub struct SymmetricEigen3 {
    pub values: [f64; 3],
    pub vectors: Matrix3<f64>,
}

impl SymmetricEigen3 {
    pub fn vector(&self, i: usize) -> nalgebra::Vector3<f64> {
        self.vectors.column(i).into_owned()
    }
}

/// Diagonalizes `m` with Jacobi rotations. Only the upper triangle is read.
pub fn symmetric_eigen3(m: &Matrix3<f64>) -> SymmetricEigen3 {
    let mut a = Matrix3::new(
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(0, 1)],
        m[(1, 1)],
        m[(1, 2)],
        m[(0, 2)],
        m[(1, 2)],
        m[(2, 2)],
    );
    let mut v = Matrix3::<f64>::identity();
    let scale = a.norm();

    for _ in 0..MAX_SWEEPS {
        let off = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
        if off <= (f64::EPSILON * scale).powi(2) || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[(p, q)];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            let mut rot = Matrix3::<f64>::identity();
            rot[(p, p)] = c;
            rot[(q, q)] = c;
            rot[(p, q)] = s;
            rot[(q, p)] = -s;
            a = rot.transpose() * a * rot;
            // Keep the annihilated entry exactly zero and the matrix symmetric.
            a[(p, q)] = 0.0;
            a[(q, p)] = 0.0;
            v *= rot;
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.map(|i| a[(i, i)]);
    let vectors = Matrix3::from_columns(&order.map(|i| v.column(i).normalize()));
    SymmetricEigen3 { values, vectors }
}
