//! Dense linear algebra for m-symmetric operators.
//!
//! Every generator in this crate is similar to a symmetric matrix through
//! `D^{1/2} A D^{-1/2}` with `D = diag(m)`. Exponentials, spectral bounds and
//! time integrals are all evaluated from that one eigendecomposition.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Eigendecomposition of an m-symmetric matrix, carried in symmetrized form.
#[derive(Debug, Clone)]
pub struct SymSpectrum {
    /// Eigenvalues, sorted in decreasing order.
    values: DVector<f64>,
    /// Orthonormal eigenvectors of the symmetrized matrix (columns).
    vectors: DMatrix<f64>,
    sqrt_m: DVector<f64>,
}

impl SymSpectrum {
    /// Decompose `a`, which must satisfy `m(x) a(x,y) = m(y) a(y,x)`.
    pub fn new(a: &DMatrix<f64>, m: &[f64]) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || m.len() != n {
            return Err(Error::invalid("matrix and measure dimensions differ"));
        }
        let sqrt_m = DVector::from_iterator(n, m.iter().map(|v| v.sqrt()));
        let mut s = symmetrize(a, m);
        // Remove the O(eps) asymmetry left by the similarity transform.
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in operator"));
        }
        let eig = SymmetricEigen::try_new(s, EIGEN_EPS, EIGEN_MAX_ITER).ok_or(Error::EigenFailure)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Ok(Self {
            values,
            vectors,
            sqrt_m,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Eigenvalues in decreasing order.
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn top(&self) -> f64 {
        self.values[0]
    }

    /// Gap between the two largest eigenvalues (infinite for a 1x1 operator).
    pub fn gap(&self) -> f64 {
        if self.dim() < 2 {
            f64::INFINITY
        } else {
            self.values[0] - self.values[1]
        }
    }

    /// Top eigenvector mapped back to the original coordinates and
    /// normalized in `L^2(m)`; sign chosen so the largest entry is positive.
    pub fn top_eigenfunction(&self) -> DVector<f64> {
        let v = self.vectors.column(0);
        let mut f = DVector::from_iterator(self.dim(), v.iter().zip(self.sqrt_m.iter()).map(|(a, s)| a / s));
        let pivot = f.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            f.neg_mut();
        }
        f
    }

    /// `exp(t A)` as a kernel matrix. Negative roundoff is clamped to zero,
    /// valid for the Metzler matrices built in this crate.
    pub fn exp(&self, t: f64) -> DMatrix<f64> {
        self.kernel(|lambda| (t * lambda).exp(), true)
    }

    /// `exp(t (A - top I))`; keeps the kernel O(1) for large `t`.
    pub fn exp_shifted(&self, t: f64) -> DMatrix<f64> {
        let top = self.top();
        self.kernel(|lambda| (t * (lambda - top)).exp(), true)
    }

    /// `∫_0^t exp(sA) ds` as a kernel matrix.
    pub fn exp_integral(&self, t: f64) -> DMatrix<f64> {
        self.kernel(|lambda| integral_of_exp(lambda, t), true)
    }

    /// Apply a spectral function `phi(A)` to a kernel, in original coordinates.
    pub fn kernel(&self, phi: impl Fn(f64) -> f64, clamp: bool) -> DMatrix<f64> {
        let n = self.dim();
        let mut scaled = self.vectors.clone();
        for k in 0..n {
            let w = phi(self.values[k]);
            scaled.column_mut(k).scale_mut(w);
        }
        let mut out = scaled * self.vectors.transpose();
        for i in 0..n {
            for j in 0..n {
                let v = out[(i, j)] * self.sqrt_m[j] / self.sqrt_m[i];
                out[(i, j)] = if clamp && v < 0.0 { 0.0 } else { v };
            }
        }
        out
    }

    /// `exp(tA) f` in O(n^2).
    pub fn apply_exp(&self, t: f64, f: &[f64]) -> DVector<f64> {
        self.apply(|lambda| (t * lambda).exp(), f)
    }

    pub fn apply(&self, phi: impl Fn(f64) -> f64, f: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let g = DVector::from_iterator(n, f.iter().zip(self.sqrt_m.iter()).map(|(a, s)| a * s));
        let mut coeffs = self.vectors.tr_mul(&g);
        for k in 0..n {
            coeffs[k] *= phi(self.values[k]);
        }
        let h = &self.vectors * coeffs;
        DVector::from_iterator(n, h.iter().zip(self.sqrt_m.iter()).map(|(a, s)| a / s))
    }
}

/// `∫_0^t e^{sλ} ds`, stable for λ near zero.
pub fn integral_of_exp(lambda: f64, t: f64) -> f64 {
    let x = lambda * t;
    if x.abs() < 1e-8 {
        t * (1.0 + 0.5 * x + x * x / 6.0)
    } else {
        (x.exp_m1()) / lambda
    }
}

/// `D^{1/2} a D^{-1/2}`.
pub fn symmetrize(a: &DMatrix<f64>, m: &[f64]) -> DMatrix<f64> {
    let n = a.nrows();
    DMatrix::from_fn(n, n, |i, j| a[(i, j)] * (m[i] / m[j]).sqrt())
}

/// Largest `|m(x) a(x,y) - m(y) a(y,x)|`, relative to the largest weighted entry.
pub fn m_symmetry_residual(a: &DMatrix<f64>, m: &[f64]) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let w = m[i] * a[(i, j)];
            scale = scale.max(w.abs());
            worst = worst.max((w - m[j] * a[(j, i)]).abs());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

/// `⟨f, g⟩_m`.
pub fn m_inner(f: &[f64], g: &[f64], m: &[f64]) -> f64 {
    pairwise_sum(&f.iter().zip(g).zip(m).map(|((a, b), w)| a * b * w).collect::<Vec<_>>())
}

/// Pairwise summation; order is fixed by the slice, so results are
/// reproducible independent of how the terms were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn sup_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Least-squares line `y = a + b x`; returns `(slope, slope stderr, intercept)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let stderr = if x.len() > 2 {
        let ssr: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (ssr / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr, intercept)
}
