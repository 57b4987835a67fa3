//! Symmetric 3x3 matrices and their eigendecomposition by cyclic Jacobi
//! rotations.

use serde::{Deserialize, Serialize};

use crate::vec3::Vec3;

/// Upper triangle of a symmetric 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SymMat3 {
    pub xx: f64,
    pub xy: f64,
    pub xz: f64,
    pub yy: f64,
    pub yz: f64,
    pub zz: f64,
}

impl SymMat3 {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: Self = Self::new(1.0, 0.0, 0.0, 1.0, 0.0, 1.0);

    pub const fn new(xx: f64, xy: f64, xz: f64, yy: f64, yz: f64, zz: f64) -> Self {
        Self {
            xx,
            xy,
            xz,
            yy,
            yz,
            zz,
        }
    }

    pub fn diagonal(d: Vec3) -> Self {
        Self::new(d[0], 0.0, 0.0, d[1], 0.0, d[2])
    }

    /// Adds `r rᵀ`.
    pub fn add_outer(&mut self, r: Vec3) {
        self.xx += r[0] * r[0];
        self.xy += r[0] * r[1];
        self.xz += r[0] * r[2];
        self.yy += r[1] * r[1];
        self.yz += r[1] * r[2];
        self.zz += r[2] * r[2];
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Self::new(m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = self.to_rows();
        [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    pub fn frobenius_norm(&self) -> f64 {
        let off = self.xy * self.xy + self.xz * self.xz + self.yz * self.yz;
        (self.xx * self.xx + self.yy * self.yy + self.zz * self.zz + 2.0 * off).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        [self.xx, self.xy, self.xz, self.yy, self.yz, self.zz]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Eigenvalues in ascending order with matching orthonormal eigenvectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomp3 {
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

impl EigenDecomp3 {
    /// `Σ λ_j e_j e_jᵀ`.
    pub fn reconstruct(&self) -> SymMat3 {
        let mut m = [[0.0; 3]; 3];
        for (l, e) in self.values.iter().zip(&self.vectors) {
            for (r, row) in m.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    *v += l * e[r] * e[c];
                }
            }
        }
        SymMat3::from_rows(m)
    }
}

/// Flips `v` so its largest-magnitude component is positive. When several
/// components share the largest magnitude the first nonzero one decides.
pub fn canonical_sign(v: Vec3) -> Vec3 {
    let max = v.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let ties = v.iter().filter(|c| c.abs() == max).count();
    let pivot = if ties == 1 {
        v.iter().position(|c| c.abs() == max)
    } else {
        v.iter().position(|&c| c != 0.0)
    };
    match pivot {
        Some(p) if v[p] < 0.0 => [-v[0], -v[1], -v[2]],
        _ => v,
    }
}

const MAX_SWEEPS: usize = 64;

/// Eigendecomposition of a symmetric 3x3 matrix.
///
/// Repeated eigenvalues get some orthonormal basis of their eigenspace; the
/// reported vectors are sign-canonical, so the output is deterministic.
pub fn eig_sym3(c: &SymMat3) -> EigenDecomp3 {
    let mut a = c.to_rows();
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale = c.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let off = (a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2]).sqrt();
        if off == 0.0 || off <= scale * 1e-18 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let apq = a[p][q];
            if apq == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
            let t = if theta.abs() > 1e150 {
                0.5 / theta
            } else {
                theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
            };
            let cs = 1.0 / (t * t + 1.0).sqrt();
            let sn = t * cs;
            a[p][p] -= t * apq;
            a[q][q] += t * apq;
            a[p][q] = 0.0;
            a[q][p] = 0.0;
            let r = 3 - p - q;
            let (arp, arq) = (a[r][p], a[r][q]);
            a[r][p] = cs * arp - sn * arq;
            a[p][r] = a[r][p];
            a[r][q] = sn * arp + cs * arq;
            a[q][r] = a[r][q];
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = cs * vp - sn * vq;
                row[q] = sn * vp + cs * vq;
            }
        }
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]).then(i.cmp(&j)));
    let values = order.map(|i| a[i][i]);
    let vectors = order.map(|i| canonical_sign([v[0][i], v[1][i], v[2][i]]));
    EigenDecomp3 { values, vectors }
}
