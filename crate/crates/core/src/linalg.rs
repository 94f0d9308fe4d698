//! Dense linear algebra: Householder QR, cyclic Jacobi for symmetric
//! matrices, Gram-based exact SVD and Halko-style randomized SVD.
//!
//! Everything is row-major `f64`. Products stream the left operand row by
//! row with a fixed summation order, so results do not depend on how the
//! caller schedules work.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{validate, Error, Result};
use crate::rng::{SeededRng, RNG_ALGORITHM};

/// Default oversampling for [`randomized_svd`].
pub const DEFAULT_OVERSAMPLE: usize = 10;
/// Default number of power iterations for [`randomized_svd`].
pub const DEFAULT_POWER_ITERS: usize = 2;
/// Singular values below this fraction of σ₁ are flagged as numerically zero.
pub const ZERO_SIGMA_RTOL: f64 = 1e-12;

const JACOBI_TOL: f64 = 1e-13;
/// Right operands narrower than this use the transposed product kernels.
const NARROW: usize = 32;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major values, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        validate(rows >= 1 && cols >= 1, || {
            format!("matrix must be at least 1x1, got {rows}x{cols}")
        })?;
        validate(values.len() == rows * cols, || {
            format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                values.len()
            )
        })?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite entry at ({}, {})",
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix must be at least 1x1");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Rectangular matrix with `diag` on the main diagonal.
    pub fn diag(rows: usize, cols: usize, diag: &[f64]) -> Self {
        let mut m = Self::zeros(rows, cols);
        for (i, &d) in diag.iter().enumerate().take(rows.min(cols)) {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        validate(!rows.is_empty(), || "no rows".into())?;
        let cols = rows[0].as_ref().len();
        validate(rows.iter().all(|r| r.as_ref().len() == cols), || {
            "ragged rows".into()
        })?;
        let values = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(rows.len(), cols, values)
    }

    /// Matrix with i.i.d. N(0, 1) entries drawn row by row.
    pub fn gaussian(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let mut m = Self::zeros(rows, cols);
        rng.fill_gaussian(&mut m.values, 1.0);
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, col: &[f64]) {
        for (r, &v) in col.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    /// `self · other`.
    pub fn matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        validate(self.cols == other.rows, || {
            format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        let mut out = Self::zeros(self.rows, other.cols);
        if other.cols < NARROW {
            let ot = other.transpose();
            for i in 0..self.rows {
                let a = self.row(i);
                for j in 0..other.cols {
                    out.values[i * other.cols + j] = dot(a, ot.row(j));
                }
            }
            return Ok(out);
        }
        for i in 0..self.rows {
            let out_row = &mut out.values[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in self.row(i).iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                axpy(aik, other.row(k), out_row);
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`, streaming both operands row by row.
    pub fn t_matmul(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        validate(self.rows == other.rows, || {
            format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )
        })?;
        if other.cols < NARROW && other.cols < self.cols {
            // accumulate (otherᵀ self) with long rows, then transpose
            let mut acc = Self::zeros(other.cols, self.cols);
            for r in 0..self.rows {
                let a = self.row(r);
                for (j, &orj) in other.row(r).iter().enumerate() {
                    if orj != 0.0 {
                        axpy(orj, a, &mut acc.values[j * self.cols..(j + 1) * self.cols]);
                    }
                }
            }
            return Ok(acc.transpose());
        }
        let mut out = Self::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b = other.row(r);
            for (i, &ari) in self.row(r).iter().enumerate() {
                if ari == 0.0 {
                    continue;
                }
                axpy(
                    ari,
                    b,
                    &mut out.values[i * other.cols..(i + 1) * other.cols],
                );
            }
        }
        Ok(out)
    }

    /// `selfᵀ · self`, exploiting symmetry.
    pub fn gram_cols(&self) -> DenseMatrix {
        let n = self.cols;
        let mut g = Self::zeros(n, n);
        for r in 0..self.rows {
            let row = self.row(r);
            for i in 0..n {
                let ai = row[i];
                if ai == 0.0 {
                    continue;
                }
                axpy(ai, &row[i..], &mut g.values[i * n + i..(i + 1) * n]);
            }
        }
        mirror_upper(&mut g);
        g
    }

    /// `self · selfᵀ`, exploiting symmetry.
    pub fn gram_rows(&self) -> DenseMatrix {
        let m = self.rows;
        let mut g = Self::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                g.values[i * m + j] = dot(self.row(i), self.row(j));
            }
        }
        mirror_upper(&mut g);
        g
    }

    pub fn scaled(&self, c: f64) -> DenseMatrix {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        validate(self.shape() == other.shape(), || "shape mismatch".into())?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Columns restricted to the first `k`.
    pub fn leading_columns(&self, k: usize) -> DenseMatrix {
        let mut out = Self::zeros(self.rows, k);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[..k]);
        }
        out
    }

    /// Max-norm distance of `selfᵀself` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.gram_cols();
        let mut err: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((g[(i, j)] - target).abs());
            }
        }
        err
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.values[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.values[r * self.cols + c]
    }
}

/// Dot product with four interleaved partial sums (fixed order).
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn mirror_upper(g: &mut DenseMatrix) {
    let n = g.rows;
    for i in 0..n {
        for j in 0..i {
            g.values[i * n + j] = g.values[j * n + i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvdMethod {
    Exact,
    Randomized,
}

impl std::str::FromStr for SvdMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "randomized" => Ok(Self::Randomized),
            other => Err(Error::Validation(format!("unknown SVD method {other:?}"))),
        }
    }
}

/// Truncated factorization `A ≈ U diag(sigma) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
    pub method: SvdMethod,
    pub seed: Option<u64>,
    pub rng_algorithm: Option<&'static str>,
    /// Per column: σ_j fell below `ZERO_SIGMA_RTOL·σ₁` and the singular
    /// vectors were completed from the canonical basis.
    pub degenerate: Vec<bool>,
    /// Estimate of σ_{k+1} when the computation produced one.
    pub next_sigma: Option<f64>,
}

impl SvdResult {
    pub fn k(&self) -> usize {
        self.sigma.len()
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (j, s) in self.sigma.iter().enumerate() {
                us[(r, j)] *= s;
            }
        }
        let vt = self.v.transpose();
        us.matmul(&vt).expect("factor shapes agree")
    }
}

/// Thin Householder QR of a tall matrix: `A = Q R` with `Q` m×n having
/// orthonormal columns and `R` n×n upper-triangular with a non-negative
/// diagonal. A column whose trailing part is exactly zero gets no reflector;
/// the corresponding column of `Q` is then a canonical direction carried
/// through the previous reflectors.
pub fn householder_qr(a: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = a.shape();
    validate(m >= n, || format!("QR needs rows >= cols, got {m}x{n}"))?;
    // columns of A, stored contiguously
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut reflectors: Vec<Option<Vec<f64>>> = Vec::with_capacity(n);

    for j in 0..n {
        let alpha = norm(&w[j][j..]);
        if alpha == 0.0 {
            reflectors.push(None);
            continue;
        }
        let beta = if w[j][j] >= 0.0 { -alpha } else { alpha };
        let mut v = w[j][j..].to_vec();
        v[0] -= beta;
        let vn = norm(&v);
        if vn == 0.0 {
            reflectors.push(None);
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vn);
        for col in w.iter_mut().skip(j) {
            reflect(&mut col[j..], &v);
        }
        reflectors.push(Some(v));
    }

    let mut r = DenseMatrix::zeros(n, n);
    for (c, col) in w.iter().enumerate() {
        for i in 0..=c {
            r[(i, c)] = col[i];
        }
    }

    let mut qcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            e
        })
        .collect();
    for (j, refl) in reflectors.iter().enumerate().rev() {
        if let Some(v) = refl {
            for col in qcols.iter_mut() {
                reflect(&mut col[j..], v);
            }
        }
    }

    let mut q = DenseMatrix::zeros(m, n);
    for i in 0..n {
        let flip = r[(i, i)] < 0.0;
        if flip {
            for c in i..n {
                r[(i, c)] = -r[(i, c)];
            }
            qcols[i].iter_mut().for_each(|x| *x = -*x);
        }
        q.set_column(i, &qcols[i]);
    }
    Ok((q, r))
}

/// `x ← (I − 2vvᵀ) x`.
fn reflect(x: &mut [f64], v: &[f64]) {
    let s = dot(v, x);
    if s != 0.0 {
        axpy(-2.0 * s, v, x);
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues in descending order (ties keep their diagonal order)
/// and the matching orthonormal eigenvectors as columns.
pub fn symmetric_eig_jacobi(s: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = s.rows();
    validate(s.cols() == n, || {
        format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            s.cols()
        )
    })?;
    let scale = s.max_abs();
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((s[(i, j)] - s[(j, i)]).abs());
        }
    }
    validate(asym <= 1e-10 * scale.max(f64::MIN_POSITIVE), || {
        format!("matrix is not symmetric (max asymmetry {asym:e})")
    })?;

    let mut a = s.clone();
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    // Rows of `vt` are the eigenvectors.
    let mut vt = DenseMatrix::identity(n);
    let tol = JACOBI_TOL * a.frobenius_norm();

    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    off += a[(i, j)] * a[(i, j)];
                }
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                rotate(&mut a, &mut vt, p, q, c, sn, t, apq);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigvals = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vecs = DenseMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vecs.set_column(col, vt.row(i));
    }
    Ok((eigvals, vecs))
}

#[allow(clippy::too_many_arguments)]
fn rotate(
    a: &mut DenseMatrix,
    vt: &mut DenseMatrix,
    p: usize,
    q: usize,
    c: f64,
    s: f64,
    t: f64,
    apq: f64,
) {
    let n = a.rows();
    for r in 0..n {
        if r == p || r == q {
            continue;
        }
        let arp = a[(p, r)];
        let arq = a[(q, r)];
        let np = c * arp - s * arq;
        let nq = s * arp + c * arq;
        a[(p, r)] = np;
        a[(r, p)] = np;
        a[(q, r)] = nq;
        a[(r, q)] = nq;
    }
    a[(p, p)] -= t * apq;
    a[(q, q)] += t * apq;
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for r in 0..n {
        let vp = vt[(p, r)];
        let vq = vt[(q, r)];
        vt[(p, r)] = c * vp - s * vq;
        vt[(q, r)] = s * vp + c * vq;
    }
}

/// Exact truncated SVD from the eigendecomposition of the Gram matrix on
/// the smaller side; the other factor is recovered as `A v / σ`.
pub fn full_svd(a: &DenseMatrix, k: usize) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let min_dim = m.min(n);
    validate(k >= 1 && k <= min_dim, || {
        format!("k={k} outside 1..={min_dim}")
    })?;

    let tall = n <= m;
    let gram = if tall { a.gram_cols() } else { a.gram_rows() };
    let (eigvals, eigvecs) = symmetric_eig_jacobi(&gram)?;
    let sigma_all: Vec<f64> = eigvals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let sigma1 = sigma_all[0];
    let degenerate: Vec<bool> = sigma_all[..k]
        .iter()
        .map(|&s| sigma1 == 0.0 || s < ZERO_SIGMA_RTOL * sigma1)
        .collect();

    let known = eigvecs.leading_columns(k);
    let other_dim = if tall { m } else { n };
    let mut other = DenseMatrix::zeros(other_dim, k);
    for j in 0..k {
        if degenerate[j] {
            continue;
        }
        let vj = known.column(j);
        let mut col = vec![0.0; other_dim];
        if tall {
            for (r, c) in col.iter_mut().enumerate() {
                *c = dot(a.row(r), &vj) / sigma_all[j];
            }
        } else {
            for (r, &vr) in vj.iter().enumerate() {
                axpy(vr / sigma_all[j], a.row(r), &mut col);
            }
        }
        other.set_column(j, &col);
    }
    orthonormalize_columns(&mut other, &degenerate);

    let (mut u, mut v) = if tall { (other, known) } else { (known, other) };
    apply_sign_convention(&mut u, &mut v);
    Ok(SvdResult {
        u,
        sigma: sigma_all[..k].to_vec(),
        v,
        method: SvdMethod::Exact,
        seed: None,
        rng_algorithm: None,
        degenerate,
        next_sigma: sigma_all.get(k).copied(),
    })
}

/// Two passes of modified Gram-Schmidt. Columns marked in `fill` (and any
/// column that collapses) are replaced by the first canonical direction
/// with a substantial component orthogonal to the previous columns.
fn orthonormalize_columns(m: &mut DenseMatrix, fill: &[bool]) {
    let (rows, k) = m.shape();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| m.column(j)).collect();
    let mut next_canonical = 0;
    for j in 0..k {
        let mut ok = !fill[j] && norm(&cols[j]) > 0.0;
        if ok {
            for _ in 0..2 {
                for i in 0..j {
                    let (prev, cur) = cols.split_at_mut(j);
                    let proj = dot(&prev[i], &cur[0]);
                    axpy(-proj, &prev[i], &mut cur[0]);
                }
            }
            let nrm = norm(&cols[j]);
            if nrm > 1e-8 {
                cols[j].iter_mut().for_each(|x| *x /= nrm);
            } else {
                ok = false;
            }
        }
        if !ok {
            while next_canonical < rows {
                let mut cand = vec![0.0; rows];
                cand[next_canonical] = 1.0;
                next_canonical += 1;
                for _ in 0..2 {
                    for prev in cols.iter().take(j) {
                        let proj = dot(prev, &cand);
                        axpy(-proj, prev, &mut cand);
                    }
                }
                let nrm = norm(&cand);
                if nrm > 0.5 {
                    cand.iter_mut().for_each(|x| *x /= nrm);
                    cols[j] = cand;
                    break;
                }
            }
        }
    }
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
}

/// Index of the largest-magnitude entry, lowest index on ties.
pub(crate) fn dominant_index(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

/// Flip each (u_j, v_j) pair so that u_j's dominant entry is positive.
fn apply_sign_convention(u: &mut DenseMatrix, v: &mut DenseMatrix) {
    for j in 0..u.cols() {
        let col = u.column(j);
        if col[dominant_index(&col)] < 0.0 {
            for r in 0..u.rows() {
                u[(r, j)] = -u[(r, j)];
            }
            for r in 0..v.rows() {
                v[(r, j)] = -v[(r, j)];
            }
        }
    }
}

/// Randomized truncated SVD: Gaussian sketch, optional power iterations
/// with QR re-orthonormalization after every product, then an exact SVD of
/// the projected `(k + oversample) × cols` matrix.
pub fn randomized_svd(
    a: &DenseMatrix,
    k: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let width = k + oversample;
    validate(k >= 1, || "k must be at least 1".into())?;
    validate(width <= m.min(n), || {
        format!(
            "sketch width k+oversample={width} exceeds min dimension {}",
            m.min(n)
        )
    })?;

    let mut rng = SeededRng::new(seed);
    let omega = DenseMatrix::gaussian(n, width, &mut rng);
    let mut q = householder_qr(&a.matmul(&omega)?)?.0;
    for _ in 0..power_iters {
        let z = householder_qr(&a.t_matmul(&q)?)?.0;
        q = householder_qr(&a.matmul(&z)?)?.0;
    }
    let b = q.t_matmul(a)?;
    let small = full_svd(&b, width)?;
    let mut u = q.matmul(&small.u.leading_columns(k))?;
    let mut v = small.v.leading_columns(k);
    apply_sign_convention(&mut u, &mut v);
    Ok(SvdResult {
        u,
        sigma: small.sigma[..k].to_vec(),
        v,
        method: SvdMethod::Randomized,
        seed: Some(seed),
        rng_algorithm: Some(RNG_ALGORITHM),
        degenerate: small.degenerate[..k].to_vec(),
        next_sigma: small.sigma.get(k).copied(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn rejects_bad_shapes_and_nan() {
        assert!(DenseMatrix::new(0, 3, vec![]).is_err());
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn qr_identity() {
        let (q, r) = householder_qr(&DenseMatrix::identity(3)).unwrap();
        assert_eq!(q, DenseMatrix::identity(3));
        assert_eq!(r, DenseMatrix::identity(3));
    }

    #[test]
    fn qr_column_norm() {
        let a = DenseMatrix::from_rows(&[[3.0, 0.0], [4.0, 1.0]]).unwrap();
        let (_, r) = householder_qr(&a).unwrap();
        assert!(close(r[(0, 0)], 5.0, 1e-14));
    }

    #[test]
    fn qr_rejects_wide() {
        assert!(householder_qr(&DenseMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn qr_rank_deficient_still_orthonormal() {
        // second column is a multiple of the first, third column zero
        let a = DenseMatrix::from_rows(&[
            [1.0, 2.0, 0.0],
            [2.0, 4.0, 0.0],
            [3.0, 6.0, 0.0],
            [4.0, 8.0, 0.0],
        ])
        .unwrap();
        let (q, r) = householder_qr(&a).unwrap();
        assert!(q.orthonormality_error() < 1e-12);
        let qr = q.matmul(&r).unwrap();
        assert!(qr.sub(&a).unwrap().frobenius_norm() <= 1e-12 * a.frobenius_norm());
    }

    #[test]
    fn jacobi_diag_and_2x2() {
        let d = DenseMatrix::diag(3, 3, &[5.0, 2.0, 1.0]);
        let (vals, vecs) = symmetric_eig_jacobi(&d).unwrap();
        assert_eq!(vals, vec![5.0, 2.0, 1.0]);
        assert_eq!(vecs, DenseMatrix::identity(3));

        let s = DenseMatrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let (vals, vecs) = symmetric_eig_jacobi(&s).unwrap();
        assert!(close(vals[0], 3.0, 1e-14) && close(vals[1], 1.0, 1e-14));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(vecs[(0, 0)].abs(), h, 1e-14));
        assert!(close(vecs[(0, 0)] * vecs[(1, 0)], 0.5, 1e-14));
        assert!(close(vecs[(0, 1)] * vecs[(1, 1)], -0.5, 1e-14));
    }

    #[test]
    fn jacobi_rejects_nonsquare_and_asymmetric() {
        assert!(symmetric_eig_jacobi(&DenseMatrix::zeros(2, 3)).is_err());
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(symmetric_eig_jacobi(&a).is_err());
    }

    #[test]
    fn full_svd_rank_one() {
        let u = [0.6, 0.8];
        let a = DenseMatrix::from_rows(&[[2.0 * u[0], 0.0], [2.0 * u[1], 0.0]]).unwrap();
        let svd = full_svd(&a, 1).unwrap();
        assert!(close(svd.sigma[0], 2.0, 1e-14));
        assert!(close(svd.u[(0, 0)], 0.6, 1e-14) && close(svd.u[(1, 0)], 0.8, 1e-14));
        assert!(close(svd.v[(0, 0)], 1.0, 1e-14) && close(svd.v[(1, 0)], 0.0, 1e-14));
        assert_eq!(svd.method, SvdMethod::Exact);
    }

    #[test]
    fn full_svd_diag() {
        let a = DenseMatrix::diag(2, 2, &[3.0, 1.0]);
        let svd = full_svd(&a, 2).unwrap();
        assert_eq!(svd.sigma, vec![3.0, 1.0]);
        assert_eq!(svd.u, DenseMatrix::identity(2));
        assert_eq!(svd.v, DenseMatrix::identity(2));
    }

    #[test]
    fn full_svd_k_range() {
        let a = DenseMatrix::identity(3);
        assert!(full_svd(&a, 0).is_err());
        assert!(full_svd(&a, 4).is_err());
    }

    #[test]
    fn full_svd_flags_zero_singular_values() {
        let a = DenseMatrix::from_rows(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]]).unwrap();
        let svd = full_svd(&a, 2).unwrap();
        assert_eq!(svd.degenerate, vec![false, true]);
        assert!(svd.u.orthonormality_error() < 1e-12);
        assert!(svd.v.orthonormality_error() < 1e-12);
    }

    #[test]
    fn wide_matrix_svd() {
        let mut rng = SeededRng::new(11);
        let a = DenseMatrix::gaussian(5, 9, &mut rng);
        let svd = full_svd(&a, 5).unwrap();
        let err = svd.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(err <= 1e-10 * a.frobenius_norm());
        assert!(svd.u.orthonormality_error() < 1e-10);
        assert!(svd.v.orthonormality_error() < 1e-10);
    }

    #[test]
    fn randomized_identity() {
        let a = DenseMatrix::identity(10);
        let svd = randomized_svd(&a, 1, 4, 2, 3).unwrap();
        assert!(close(svd.sigma[0], 1.0, 1e-12));
        assert!(close(norm(&svd.u.column(0)), 1.0, 1e-12));
    }

    #[test]
    fn randomized_width_checked() {
        let a = DenseMatrix::identity(10);
        assert!(randomized_svd(&a, 1, 10, 2, 3).is_err());
    }

    #[test]
    fn randomized_is_deterministic() {
        let mut rng = SeededRng::new(1);
        let a = DenseMatrix::gaussian(60, 20, &mut rng);
        let x = randomized_svd(&a, 3, 5, 2, 99).unwrap();
        let y = randomized_svd(&a, 3, 5, 2, 99).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.seed, Some(99));
        assert_eq!(x.rng_algorithm, Some(RNG_ALGORITHM));
    }

    #[test]
    fn dominant_index_prefers_lowest_on_tie() {
        assert_eq!(dominant_index(&[0.5, -0.5, 0.1]), 0);
        assert_eq!(dominant_index(&[0.1, -0.7, 0.7]), 1);
    }
}
