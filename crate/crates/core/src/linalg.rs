//! Dense symmetric linear algebra for `Q(a) = αI + βL(a)` and its inverse `Σ(a)`.
//!
//! Σ is generically dense even when Q is sparse, so everything here is dense
//! row-major storage. [`CovarianceState`] keeps Σ explicitly so that gap
//! variances `δ_ij = σ_ii + σ_jj − 2σ_ij` are O(1) reads, and applies single
//! edge flips as O(m²) rank-one corrections with a periodic Cholesky refresh.

use crate::error::{Result, RggmError};
use crate::graph::{EdgeConfig, Topology};
use crate::model::ModelParams;

/// Flips between full refreshes of a [`CovarianceState`] unless configured otherwise.
pub const DEFAULT_REFRESH_PERIOD: usize = 64;

/// Removal denominators `1 − βδ'` at or below this trigger refresh-and-retry.
pub const REMOVAL_GUARD: f64 = 1e-12;

/// Dense symmetric matrix, full row-major storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    /// `scale * I`.
    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut s = Self::zeros(dim);
        for i in 0..dim {
            s.data[i * dim + i] = scale;
        }
        s
    }

    /// Builds from nested rows; errors if not square or not symmetric to 1e-12 relative.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(RggmError::Config("matrix rows must form a square".into()));
            }
            data.extend_from_slice(r);
        }
        let s = Self { dim, data };
        let scale = s.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (s.get(i, j) - s.get(j, i)).abs() > 1e-12 * scale {
                    return Err(RggmError::Config(format!("matrix not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    #[inline]
    fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        if i == j {
            self.data[i * self.dim + i] += v;
        } else {
            self.data[i * self.dim + j] += v;
            self.data[j * self.dim + i] += v;
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn frobenius_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `‖self · other − I‖_max`.
    pub fn identity_residual(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            let ri = self.row(i);
            for j in 0..n {
                let v: f64 = ri.iter().enumerate().map(|(k, a)| a * other.get(k, j)).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((v - target).abs());
            }
        }
        worst
    }

    /// Quadratic form `xᵀ S x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| x[i] * self.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }

    /// Accumulates `weight * other` into `self`.
    pub fn add_scaled(&mut self, other: &SymMatrix, weight: f64) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += weight * b;
        }
    }
}

/// `Q(a) = αI + β Σ_{(i,j)∈E} a_ij (e_i − e_j)(e_i − e_j)ᵀ`.
pub fn build_precision(top: &Topology, a: &EdgeConfig, params: &ModelParams) -> Result<SymMatrix> {
    top.check_config(a)?;
    let mut q = SymMatrix::scaled_identity(top.num_nodes(), params.alpha());
    let beta = params.beta();
    if beta > 0.0 {
        for k in a.iter_ones() {
            let (i, j) = top.edge(k);
            q.add_sym(i, i, beta);
            q.add_sym(j, j, beta);
            q.add_sym(i, j, -beta);
        }
    }
    Ok(q)
}

/// Lower Cholesky factor `L` with `Q = L Lᵀ`, row-major.
#[derive(Clone, Debug)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn factor(q: &SymMatrix) -> Result<Self> {
        let n = q.dim;
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let (done, rest) = l.split_at_mut(j * n);
            let row_j = &mut rest[..n];
            // Row j below the diagonal, then the pivot.
            for k in 0..j {
                let row_k = &done[k * n..k * n + k + 1];
                let s: f64 = row_j[..k].iter().zip(&row_k[..k]).map(|(a, b)| a * b).sum();
                row_j[k] = (q.get(j, k) - s) / row_k[k];
            }
            let d = q.get(j, j) - row_j[..j].iter().map(|v| v * v).sum::<f64>();
            if !(d > 0.0) || !d.is_finite() {
                return Err(RggmError::Numerical(format!(
                    "Cholesky pivot {j} is {d:e}; matrix is not positive definite"
                )));
            }
            row_j[j] = d.sqrt();
        }
        Ok(Self { dim: n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn l(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    /// `log |Q|`.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.l(i, i).ln()).sum::<f64>()
    }

    /// `Q⁻¹ = L⁻ᵀ L⁻¹`.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        // Rows of L⁻¹: row_i = (e_i − Σ_{k<i} L_ik row_k) / L_ii.
        let mut inv = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = inv.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            let lii = self.l(i, i);
            row_i[i] = 1.0;
            for k in 0..i {
                let c = self.l(i, k);
                if c != 0.0 {
                    let row_k = &done[k * n..k * n + k + 1];
                    for (dst, src) in row_i[..=k].iter_mut().zip(row_k) {
                        *dst -= c * src;
                    }
                }
            }
            for v in &mut row_i[..=i] {
                *v /= lii;
            }
        }
        // Σ = Σ_k row_kᵀ row_k over the rows of L⁻¹ (upper triangle, then mirror).
        let mut sigma = SymMatrix::zeros(n);
        for k in 0..n {
            let row_k = &inv[k * n..k * n + k + 1];
            for i in 0..=k {
                let c = row_k[i];
                if c != 0.0 {
                    let dst = &mut sigma.data[i * n + i..i * n + k + 1];
                    for (d, s) in dst.iter_mut().zip(&row_k[i..]) {
                        *d += c * s;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                sigma.data[i * n + j] = sigma.data[j * n + i];
            }
        }
        sigma
    }

    /// Solves `Lᵀ x = z` in place; with `z ~ N(0, I)` the result is `N(0, Q⁻¹)`.
    pub fn solve_upper_in_place(&self, z: &mut [f64]) {
        let n = self.dim;
        assert_eq!(z.len(), n);
        for i in (0..n).rev() {
            let xi = z[i] / self.l(i, i);
            z[i] = xi;
            let row = &self.lower[i * n..i * n + i];
            for (zk, lik) in z[..i].iter_mut().zip(row) {
                *zk -= lik * xi;
            }
        }
    }
}

/// `Σ = Q⁻¹` and `log|Σ| = −log|Q|` via a fresh Cholesky factorisation.
pub fn invert_precision(q: &SymMatrix) -> Result<(SymMatrix, f64)> {
    let chol = Cholesky::factor(q)?;
    Ok((chol.inverse(), -chol.log_det()))
}

/// Cached `Σ(a)`, `log|Σ(a)|` and `Q(a)`, updated incrementally per edge flip.
#[derive(Clone, Debug)]
pub struct CovarianceState {
    precision: SymMatrix,
    sigma: SymMatrix,
    logdet_sigma: f64,
    flips_since_refresh: usize,
    refresh_period: usize,
    scratch: Vec<f64>,
}

impl CovarianceState {
    /// State for precision `q`, refreshed every [`DEFAULT_REFRESH_PERIOD`] flips.
    pub fn from_precision(q: SymMatrix) -> Result<Self> {
        let chol = Cholesky::factor(&q)?;
        Ok(Self::from_factor(q, &chol))
    }

    /// State for a precision matrix whose factor is already available.
    pub fn from_factor(q: SymMatrix, chol: &Cholesky) -> Self {
        let m = q.dim();
        Self {
            sigma: chol.inverse(),
            logdet_sigma: -chol.log_det(),
            precision: q,
            flips_since_refresh: 0,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            scratch: vec![0.0; m],
        }
    }

    /// State of the empty graph: `Q = αI`, `Σ = α⁻¹I` exactly.
    pub fn isotropic(m: usize, alpha: f64) -> Self {
        Self {
            precision: SymMatrix::scaled_identity(m, alpha),
            sigma: SymMatrix::scaled_identity(m, alpha.recip()),
            logdet_sigma: -(m as f64) * alpha.ln(),
            flips_since_refresh: 0,
            refresh_period: DEFAULT_REFRESH_PERIOD,
            scratch: vec![0.0; m],
        }
    }

    pub fn for_config(top: &Topology, a: &EdgeConfig, params: &ModelParams) -> Result<Self> {
        Self::from_precision(build_precision(top, a, params)?)
    }

    /// Sets the number of flips between full refreshes (at least 1).
    pub fn with_refresh_period(mut self, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(RggmError::Config("refresh period must be at least 1".into()));
        }
        self.refresh_period = period;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.sigma.dim()
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    pub fn precision(&self) -> &SymMatrix {
        &self.precision
    }

    pub fn logdet_sigma(&self) -> f64 {
        self.logdet_sigma
    }

    pub fn flips_since_refresh(&self) -> usize {
        self.flips_since_refresh
    }

    pub fn refresh_period(&self) -> usize {
        self.refresh_period
    }

    /// Recomputes Σ and log|Σ| from the tracked precision matrix.
    pub fn refresh(&mut self) -> Result<()> {
        let chol = Cholesky::factor(&self.precision)?;
        self.sigma = chol.inverse();
        self.logdet_sigma = -chol.log_det();
        self.flips_since_refresh = 0;
        Ok(())
    }

    /// Gap variance `δ_ij = σ_ii + σ_jj − 2σ_ij`, the conditional variance of `X_i − X_j`.
    pub fn delta(&self, i: usize, j: usize) -> Result<f64> {
        self.check_pair(i, j)?;
        Ok(self.gap(i, j))
    }

    #[inline]
    pub(crate) fn gap(&self, i: usize, j: usize) -> f64 {
        self.sigma.get(i, i) + self.sigma.get(j, j) - 2.0 * self.sigma.get(i, j)
    }

    /// Switches edge `(i, j)` on: `Σ' = Σ − β/(1+βδ) u uᵀ` with `u = Σ(e_i − e_j)`,
    /// and `log|Σ'| = log|Σ| − log(1+βδ)`.
    ///
    /// The caller guarantees the edge is currently off. Returns `δ_ij` before the update.
    pub fn rank_one_add(&mut self, i: usize, j: usize, beta: f64) -> Result<f64> {
        self.check_pair(i, j)?;
        check_beta(beta)?;
        let delta = self.gap(i, j);
        if beta == 0.0 {
            return Ok(delta);
        }
        let denom = 1.0 + beta * delta;
        self.apply_rank_one(i, j, -beta / denom);
        self.logdet_sigma -= (beta * delta).ln_1p();
        self.shift_precision(i, j, beta);
        self.count_flip()?;
        Ok(delta)
    }

    /// Switches edge `(i, j)` off, the exact inverse of [`CovarianceState::rank_one_add`]:
    /// `Σ = Σ' + β/(1−βδ') u' u'ᵀ`, `log|Σ| = log|Σ'| − log(1−βδ')`.
    ///
    /// The caller guarantees the edge is currently on. A denominator `1 − βδ'` at or
    /// below [`REMOVAL_GUARD`] forces a refresh and one retry.
    pub fn rank_one_remove(&mut self, i: usize, j: usize, beta: f64) -> Result<()> {
        self.check_pair(i, j)?;
        check_beta(beta)?;
        if beta == 0.0 {
            return Ok(());
        }
        let denom = self.removal_denominator(i, j, beta)?;
        self.apply_rank_one(i, j, beta / denom);
        self.logdet_sigma -= denom.ln();
        self.shift_precision(i, j, -beta);
        self.count_flip()
    }

    /// `1 − βδ'_ij` for a present edge, refreshing once if it falls under the guard.
    pub(crate) fn removal_denominator(&mut self, i: usize, j: usize, beta: f64) -> Result<f64> {
        let denom = 1.0 - beta * self.gap(i, j);
        if denom > REMOVAL_GUARD {
            return Ok(denom);
        }
        self.refresh()?;
        let denom = 1.0 - beta * self.gap(i, j);
        if denom > REMOVAL_GUARD {
            Ok(denom)
        } else {
            Err(RggmError::Numerical(format!(
                "removal of edge ({i},{j}) has denominator 1 - beta*delta' = {denom:e} after refresh"
            )))
        }
    }

    fn apply_rank_one(&mut self, i: usize, j: usize, coef: f64) {
        let m = self.dim();
        for (k, u) in self.scratch.iter_mut().enumerate() {
            *u = self.sigma.data[k * m + i] - self.sigma.data[k * m + j];
        }
        let u = &self.scratch;
        for (k, row) in self.sigma.data.chunks_exact_mut(m).enumerate() {
            let c = coef * u[k];
            if c != 0.0 {
                for (s, ul) in row.iter_mut().zip(u) {
                    *s += c * ul;
                }
            }
        }
    }

    fn shift_precision(&mut self, i: usize, j: usize, beta: f64) {
        self.precision.add_sym(i, i, beta);
        self.precision.add_sym(j, j, beta);
        self.precision.add_sym(i, j, -beta);
    }

    fn count_flip(&mut self) -> Result<()> {
        self.flips_since_refresh += 1;
        if self.flips_since_refresh >= self.refresh_period {
            self.refresh()?;
        }
        Ok(())
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<()> {
        let m = self.dim();
        if i == j {
            return Err(RggmError::Domain(format!("gap variance needs distinct nodes, got {i} twice")));
        }
        if i >= m || j >= m {
            return Err(RggmError::Domain(format!("node pair ({i},{j}) outside 0..{m}")));
        }
        Ok(())
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(RggmError::Domain(format!("coupling beta must be finite and >= 0, got {beta}")))
    }
}

/// `|(1 − βδ')(1 + βδ) − 1|`; zero in exact arithmetic when δ' is the gap after adding the edge.
pub fn delta_prime_identity_residual(delta: f64, delta_prime: f64, beta: f64) -> f64 {
    ((1.0 - beta * delta_prime) * (1.0 + beta * delta) - 1.0).abs()
}
