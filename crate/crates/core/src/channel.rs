//! Random channel realizations: the Rayleigh main channel with its singular
//! value decomposition, eavesdropper fading draws and Haar unitaries.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;
use crate::scenario::BetaProfile;

pub type CMatrix = DMatrix<Complex64>;

/// One standard circularly-symmetric complex Gaussian sample, `CN(0, 1)`.
pub fn standard_complex_normal(rng: &mut RandomSource) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Main channel `H = V0 diag(lambda)^{1/2} V1^H`.
#[derive(Debug, Clone)]
pub struct MainChannel {
    /// N x K channel matrix.
    pub h: CMatrix,
    /// Squared singular values, length K, descending, zero-padded.
    pub lambda: Vec<f64>,
    /// K x K right singular vectors.
    pub v1: CMatrix,
    /// N x K left factor matching `lambda`.
    pub v0: CMatrix,
}

impl MainChannel {
    /// Decomposes a fixed channel matrix.
    pub fn from_matrix(h: CMatrix) -> Result<Self> {
        let (n, k) = h.shape();
        if n == 0 || k == 0 {
            return Err(Error::Precondition("channel matrix must be non-empty".into()));
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numeric("channel matrix has non-finite entries".into()));
        }
        // Zero rows are appended when N < K so the factorization yields a
        // full K x K right basis.
        let rows = n.max(k);
        let padded = CMatrix::from_fn(rows, k, |r, c| if r < n { h[(r, c)] } else { Complex64::ZERO });
        let svd = padded.svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Numeric("SVD produced no left factor".into()))?;
        let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD produced no right factor".into()))?;
        let s = svd.singular_values;
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("SVD produced non-finite singular values".into()));
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
        let lambda = order.iter().map(|&i| s[i] * s[i]).collect();
        let v1 = CMatrix::from_fn(k, k, |r, c| v_t[(order[c], r)].conj());
        let v0 = CMatrix::from_fn(n, k, |r, c| u[(r, order[c])]);
        Ok(MainChannel { h, lambda, v1, v0 })
    }

    pub fn k_tx(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_rx(&self) -> usize {
        self.h.nrows()
    }

    /// `||H - V0 Lambda^{1/2} V1^H||_F / ||H||_F`.
    pub fn reconstruction_error(&self) -> f64 {
        let k = self.k_tx();
        let root = CMatrix::from_fn(k, k, |r, c| {
            if r == c {
                Complex64::new(self.lambda[r].sqrt(), 0.0)
            } else {
                Complex64::ZERO
            }
        });
        let rebuilt = &self.v0 * root * self.v1.adjoint();
        let norm = self.h.norm();
        if norm == 0.0 {
            rebuilt.norm()
        } else {
            (&self.h - rebuilt).norm() / norm
        }
    }
}

/// Draws `H` with entry `(n, k)` distributed as `CN(0, beta[(n, k)])`.
pub fn sample_main_channel(beta: &BetaProfile, rng: &mut RandomSource) -> Result<MainChannel> {
    let (n, k) = beta.beta.shape();
    let mut h = CMatrix::zeros(n, k);
    for r in 0..n {
        for c in 0..k {
            let b = beta.beta[(r, c)];
            if !(b > 0.0) || !b.is_finite() {
                return Err(Error::Precondition(format!("beta[({r}, {c})] = {b} is not positive")));
            }
            h[(r, c)] = standard_complex_normal(rng) * b.sqrt();
        }
    }
    MainChannel::from_matrix(h)
}

/// An eavesdropper fading matrix and its column scaling.
#[derive(Debug, Clone)]
pub struct FadingDraw {
    /// M x K i.i.d. `CN(0, 1)` entries.
    pub w: CMatrix,
    sigma: Vec<f64>,
}

impl FadingDraw {
    /// `W diag(sigma)^{1/2}`.
    pub fn scaled(&self) -> CMatrix {
        let mut f = self.w.clone();
        for (c, s) in self.sigma.iter().enumerate() {
            let root = s.sqrt();
            f.column_mut(c).iter_mut().for_each(|z| *z *= root);
        }
        f
    }
}

pub fn sample_fading(
    m: usize,
    k: usize,
    sigma_row: &[f64],
    rng: &mut RandomSource,
) -> Result<FadingDraw> {
    if m == 0 || k == 0 {
        return Err(Error::Precondition(format!("fading draw needs m, k >= 1, got {m}, {k}")));
    }
    if sigma_row.len() != k {
        return Err(Error::Precondition(format!(
            "sigma row has length {}, expected {k}",
            sigma_row.len()
        )));
    }
    if sigma_row.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Precondition("sigma entries must be positive".into()));
    }
    let mut w = CMatrix::zeros(m, k);
    for c in 0..k {
        for r in 0..m {
            w[(r, c)] = standard_complex_normal(rng);
        }
    }
    Ok(FadingDraw { w, sigma: sigma_row.to_vec() })
}

/// Haar-distributed `k x k` unitary: QR of a Ginibre matrix with the phases
/// of `R`'s diagonal moved into `Q`.
pub fn sample_haar_unitary(k: usize, rng: &mut RandomSource) -> Result<CMatrix> {
    if k == 0 {
        return Err(Error::Precondition("unitary dimension must be >= 1".into()));
    }
    let g = CMatrix::from_fn(k, k, |_, _| standard_complex_normal(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..k {
        let d = r[(c, c)];
        let mag = d.norm();
        let phase = if mag > 0.0 { d / mag } else { Complex64::ONE };
        q.column_mut(c).iter_mut().for_each(|z| *z *= phase);
    }
    Ok(q)
}

/// `||A^H A - I||` in the max-entry norm.
pub fn unitarity_error(a: &CMatrix) -> f64 {
    let g = a.adjoint() * a;
    let mut worst = 0.0f64;
    for r in 0..g.nrows() {
        for c in 0..g.ncols() {
            let target = if r == c { Complex64::ONE } else { Complex64::ZERO };
            worst = worst.max((g[(r, c)] - target).norm());
        }
    }
    worst
}

/// On-disk form of a complex matrix: row-major list of `[re, im]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl ComplexMatrixFile {
    pub fn to_matrix(&self) -> Result<CMatrix> {
        if self.rows == 0 || self.cols == 0 || self.data.len() != self.rows * self.cols {
            return Err(Error::Config(format!(
                "matrix file declares {}x{} but holds {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(CMatrix::from_fn(self.rows, self.cols, |r, c| {
            let [re, im] = self.data[r * self.cols + c];
            Complex64::new(re, im)
        }))
    }

    pub fn from_matrix(h: &CMatrix) -> Self {
        let (rows, cols) = h.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push([h[(r, c)].re, h[(r, c)].im]);
            }
        }
        ComplexMatrixFile { rows, cols, data }
    }
}

pub fn parse_matrix(text: &str) -> Result<CMatrix> {
    let file: ComplexMatrixFile = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("bad channel matrix: {e}")))?;
    file.to_matrix()
}

pub fn load_matrix(path: &Path) -> Result<CMatrix> {
    parse_matrix(&std::fs::read_to_string(path)?)
}

fn matrix_from_pairs(rows: usize, cols: usize, pairs: &[(f64, f64)]) -> CMatrix {
    CMatrix::from_fn(rows, cols, |r, c| {
        let (re, im) = pairs[r * cols + c];
        Complex64::new(re, im)
    })
}

/// The 2 x 2 sample channel used in the convergence study.
pub fn builtin_h1() -> CMatrix {
    matrix_from_pairs(
        2,
        2,
        &[(1.97, -0.92), (0.98, 0.47), (-0.63, -0.035), (0.019, -1.24)],
    )
}

/// The 3 x 3 sample channel used in the convergence study.
pub fn builtin_h2() -> CMatrix {
    matrix_from_pairs(
        3,
        3,
        &[
            (-1.06, -1.65),
            (3.01, 0.11),
            (-0.08, -0.60),
            (0.09, 0.72),
            (-0.72, -0.59),
            (-1.81, 0.46),
            (0.53, -0.66),
            (0.17, 0.28),
            (-0.35, 0.59),
        ],
    )
}

/// Resolves `"h1"` / `"h2"` to the built-in channels, anything else to a file.
pub fn named_or_file_matrix(name: &str) -> Result<CMatrix> {
    match name {
        "h1" | "H1" => Ok(builtin_h1()),
        "h2" | "H2" => Ok(builtin_h2()),
        path => load_matrix(Path::new(path)),
    }
}
