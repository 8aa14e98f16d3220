//! Pseudo-likelihood estimation of `(α, β)` from observed `(a, x)` snapshots.
//!
//! The joint normaliser sums over all `2^n` configurations, so the fitter
//! maximises the product of the two tractable conditionals instead,
//!
//! ```text
//! PL(α, β) = Σ_s w_s [ log μ(a_s | x_s) + log μ(x_s | a_s) ],
//! ```
//!
//! treating snapshots as independent draws. Dependence between snapshots taken
//! from one chain is ignored, which makes the reported standard errors optimistic
//! for strongly correlated streams.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RggmError};
use crate::graph::{EdgeConfig, Topology};
use crate::linalg::{build_precision, Cholesky};
use crate::model::{edge_log_probabilities, ModelParams, NodeVector};

/// Offset in the `log(β + ε)` coordinate so that `β = 0` is reachable.
pub const BETA_OFFSET: f64 = 1e-12;
/// Convergence threshold on the largest coordinate change in one iteration.
pub const PARAM_STEP_TOL: f64 = 1e-8;
/// Convergence threshold on the objective change in one iteration.
pub const OBJECTIVE_STEP_TOL: f64 = 1e-10;
/// Step of the central differences in the search coordinates.
pub const GRADIENT_STEP: f64 = 1e-5;

/// One observation of the edges and node values.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub config: EdgeConfig,
    pub x: NodeVector,
    pub weight: f64,
}

impl Snapshot {
    pub fn new(config: EdgeConfig, x: NodeVector, weight: f64) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(RggmError::Data(format!("snapshot weight must be positive, got {weight}")));
        }
        Ok(Self { config, x, weight })
    }

    pub fn unweighted(config: EdgeConfig, x: NodeVector) -> Self {
        Self {
            config,
            x,
            weight: 1.0,
        }
    }

    pub fn check(&self, top: &Topology) -> Result<()> {
        if self.config.len() != top.num_edges() {
            return Err(RggmError::Data(format!(
                "snapshot has {} edge bits but topology has {} edges",
                self.config.len(),
                top.num_edges()
            )));
        }
        if self.x.len() != top.num_nodes() {
            return Err(RggmError::Data(format!(
                "snapshot has {} node values but topology has {} nodes",
                self.x.len(),
                top.num_nodes()
            )));
        }
        if self.x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(RggmError::Data("snapshot node values must be finite".into()));
        }
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(RggmError::Data(format!("snapshot weight must be positive, got {}", self.weight)));
        }
        Ok(())
    }
}

fn check_all(top: &Topology, snaps: &[Snapshot]) -> Result<()> {
    snaps.iter().try_for_each(|s| s.check(top))
}

fn squared_gaps(top: &Topology, x: &[f64]) -> Vec<f64> {
    top.edges().iter().map(|&(i, j)| (x[i] - x[j]).powi(2)).collect()
}

/// `Σ_s w_s log μ(a_s | x_s)`: the logistic log-likelihood of the edges given node values.
pub fn edge_loglik(top: &Topology, snaps: &[Snapshot], beta: f64) -> Result<f64> {
    check_all(top, snaps)?;
    let terms: Vec<f64> = snaps
        .par_iter()
        .map(|s| {
            let d = squared_gaps(top, s.x.as_slice());
            let ll: f64 = d
                .iter()
                .enumerate()
                .map(|(k, &dk)| {
                    let (on, off) = edge_log_probabilities(dk, beta);
                    if s.config.get(k) {
                        on
                    } else {
                        off
                    }
                })
                .sum();
            s.weight * ll
        })
        .collect();
    Ok(terms.iter().sum())
}

/// `Σ_s w_s log μ(x_s | a_s)` with `log μ(x | a) = ½log|Q(a)| − ½xᵀQ(a)x − (m/2)log 2π`.
pub fn gaussian_loglik(top: &Topology, snaps: &[Snapshot], p: &ModelParams) -> Result<f64> {
    check_all(top, snaps)?;
    let m = top.num_nodes() as f64;
    let terms = snaps
        .par_iter()
        .map(|s| {
            let q = build_precision(top, &s.config, p)?;
            let chol = Cholesky::factor(&q)?;
            let ll = 0.5 * chol.log_det() - 0.5 * q.quad_form(s.x.as_slice()) - 0.5 * m * (2.0 * PI).ln();
            Ok(s.weight * ll)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum())
}

/// The pseudo-log-likelihood, evaluated directly with one Cholesky factorisation per snapshot.
pub fn pseudo_loglik(top: &Topology, snaps: &[Snapshot], alpha: f64, beta: f64) -> Result<f64> {
    let p = ModelParams::new(alpha, beta)?;
    Ok(edge_loglik(top, snaps, beta)? + gaussian_loglik(top, snaps, &p)?)
}

/// Per-snapshot sufficient statistics: `log|αI + βL(a)| = Σ_k log(α + βλ_k)` with the
/// Laplacian spectrum `λ`, plus `Σx²`, the active-edge energy and all squared gaps.
#[derive(Clone, Debug)]
struct SnapshotStats {
    weight: f64,
    laplacian_spectrum: Vec<f64>,
    sum_sq: f64,
    active_energy: f64,
    gaps: Vec<f64>,
    on: Vec<bool>,
}

fn component_count(top: &Topology, a: &EdgeConfig) -> usize {
    let mut parent: Vec<usize> = (0..top.num_nodes()).collect();
    fn root(parent: &mut [usize], mut v: usize) -> usize {
        while parent[v] != v {
            parent[v] = parent[parent[v]];
            v = parent[v];
        }
        v
    }
    let mut count = top.num_nodes();
    for k in a.iter_ones() {
        let (i, j) = top.edge(k);
        let (ri, rj) = (root(&mut parent, i), root(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            count -= 1;
        }
    }
    count
}

/// Precomputed objective for repeated evaluation at many `(α, β)`.
#[derive(Clone, Debug)]
pub struct PseudoLikelihood {
    m: usize,
    stats: Vec<SnapshotStats>,
    total_weight: f64,
}

impl PseudoLikelihood {
    pub fn new(top: &Topology, snaps: &[Snapshot]) -> Result<Self> {
        if snaps.is_empty() {
            return Err(RggmError::Config("fitting needs at least one snapshot".into()));
        }
        check_all(top, snaps)?;
        let m = top.num_nodes();
        let stats = snaps
            .par_iter()
            .map(|s| {
                let x = s.x.as_slice();
                let gaps = squared_gaps(top, x);
                let mut lap = DMatrix::<f64>::zeros(m, m);
                let mut active_energy = 0.0;
                for k in s.config.iter_ones() {
                    let (i, j) = top.edge(k);
                    lap[(i, i)] += 1.0;
                    lap[(j, j)] += 1.0;
                    lap[(i, j)] -= 1.0;
                    lap[(j, i)] -= 1.0;
                    active_energy += gaps[k];
                }
                let laplacian_spectrum = if s.config.count_ones() == 0 {
                    vec![0.0; m]
                } else {
                    let mut ev: Vec<f64> = SymmetricEigen::new(lap).eigenvalues.iter().copied().collect();
                    ev.sort_by(f64::total_cmp);
                    // The zero eigenvalue has multiplicity equal to the number of components.
                    let zeros = component_count(top, &s.config);
                    ev.iter_mut().take(zeros).for_each(|l| *l = 0.0);
                    ev
                };
                SnapshotStats {
                    weight: s.weight,
                    laplacian_spectrum,
                    sum_sq: x.iter().map(|v| v * v).sum(),
                    active_energy,
                    on: s.config.to_bools(),
                    gaps,
                }
            })
            .collect();
        Ok(Self {
            m,
            total_weight: snaps.iter().map(|s| s.weight).sum(),
            stats,
        })
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Objective at `(α, β)`. Slightly negative `β` is accepted so that finite
    /// differences can straddle the boundary; the value is NaN where `Q` is not positive definite.
    pub fn value(&self, alpha: f64, beta: f64) -> f64 {
        self.edge_part(beta) + self.gaussian_part(alpha, beta)
    }

    pub fn edge_part(&self, beta: f64) -> f64 {
        let terms: Vec<f64> = self
            .stats
            .par_iter()
            .map(|s| {
                let ll: f64 = s
                    .gaps
                    .iter()
                    .zip(&s.on)
                    .map(|(&d, &on)| {
                        let (l1, l0) = edge_log_probabilities(d, beta);
                        if on {
                            l1
                        } else {
                            l0
                        }
                    })
                    .sum();
                s.weight * ll
            })
            .collect();
        terms.iter().sum()
    }

    pub fn gaussian_part(&self, alpha: f64, beta: f64) -> f64 {
        let log_2pi = (2.0 * PI).ln();
        let m = self.m as f64;
        let terms: Vec<f64> = self
            .stats
            .par_iter()
            .map(|s| {
                let logdet: f64 = s
                    .laplacian_spectrum
                    .iter()
                    .map(|&l| {
                        let v = alpha + beta * l;
                        if v > 0.0 {
                            v.ln()
                        } else {
                            f64::NAN
                        }
                    })
                    .sum();
                let quad = alpha * s.sum_sq + beta * s.active_energy;
                s.weight * (0.5 * logdet - 0.5 * quad - 0.5 * m * log_2pi)
            })
            .collect();
        terms.iter().sum()
    }
}

/// Box constraints on the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitBounds {
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub beta_max: f64,
}

impl Default for FitBounds {
    fn default() -> Self {
        Self {
            alpha_min: 1e-6,
            alpha_max: 1e6,
            beta_max: 1e6,
        }
    }
}

impl FitBounds {
    fn validate(&self) -> Result<()> {
        let ok = self.alpha_min > 0.0
            && self.alpha_min < self.alpha_max
            && self.alpha_max.is_finite()
            && self.beta_max > 0.0
            && self.beta_max.is_finite();
        if !ok {
            return Err(RggmError::Config(format!("invalid fit bounds {self:?}")));
        }
        Ok(())
    }

    fn lower(&self) -> [f64; 2] {
        [self.alpha_min.ln(), BETA_OFFSET.ln()]
    }

    fn upper(&self) -> [f64; 2] {
        [self.alpha_max.ln(), (self.beta_max + BETA_OFFSET).ln()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub init: ModelParams,
    pub bounds: FitBounds,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            init: ModelParams::new(1.0, 1.0).expect("valid"),
            bounds: FitBounds::default(),
            max_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the central-difference gradient in `(log α, log(β + ε))`,
    /// with components pushing out of an active bound dropped.
    pub gradient_norm: f64,
    /// From the inverse observed information (finite-difference Hessian in `(α, β)`);
    /// `None` when that matrix is not positive definite.
    pub se_alpha: Option<f64>,
    pub se_beta: Option<f64>,
}

fn to_params(theta: [f64; 2]) -> (f64, f64) {
    (theta[0].exp(), (theta[1].exp() - BETA_OFFSET).max(0.0))
}

fn from_params(alpha: f64, beta: f64) -> [f64; 2] {
    [alpha.ln(), (beta + BETA_OFFSET).ln()]
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const LINE_TOL: f64 = 1e-11;

/// Maximises `g` on `[lo, hi]` (with `lo ≤ 0 ≤ hi`) starting from `s = 0`.
/// Never returns a point worse than `s = 0`.
fn line_search(g: &mut impl FnMut(f64) -> f64, lo: f64, hi: f64, h: f64) -> (f64, f64) {
    let g0 = g(0.0);
    let (mut a, mut b) = ((-h).max(lo), h.min(hi));
    'dirs: for dir in [1.0, -1.0] {
        let limit = if dir > 0.0 { hi } else { lo };
        if limit == 0.0 {
            continue;
        }
        let mut prev: f64 = 0.0;
        let mut cur = (dir * h).clamp(lo, hi);
        let mut gc = g(cur);
        if !(gc > g0) {
            continue;
        }
        loop {
            if cur == limit {
                (a, b) = (prev.min(cur), prev.max(cur));
                break 'dirs;
            }
            let next = (cur + 2.0 * (cur - prev)).clamp(lo, hi);
            let gn = g(next);
            if !(gn > gc) {
                (a, b) = (prev.min(next), prev.max(next));
                break 'dirs;
            }
            prev = cur;
            cur = next;
            gc = gn;
        }
    }
    let mut best = (0.0, g0);
    let consider = |s: f64, v: f64, best: &mut (f64, f64)| {
        if v > best.1 {
            *best = (s, v);
        }
    };
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    consider(c, gc, &mut best);
    consider(d, gd, &mut best);
    while (b - a).abs() > LINE_TOL * (1.0 + a.abs().max(b.abs())) {
        if gc.is_nan() || (!gd.is_nan() && gc < gd) {
            a = c;
            c = d;
            gc = gd;
            d = a + GOLDEN * (b - a);
            gd = g(d);
            consider(d, gd, &mut best);
        } else {
            b = d;
            d = c;
            gd = gc;
            c = b - GOLDEN * (b - a);
            gc = g(c);
            consider(c, gc, &mut best);
        }
    }
    best
}

/// Maximises the pseudo-likelihood over `(log α, log(β + ε))` by cyclic coordinate
/// search with golden-section line searches, followed each cycle by a line search
/// along the cycle's net displacement. Non-convergence is reported, not raised.
pub fn fit_params(top: &Topology, snaps: &[Snapshot], opts: &FitOptions) -> Result<FitResult> {
    opts.bounds.validate()?;
    let pl = PseudoLikelihood::new(top, snaps)?;
    let (lo, hi) = (opts.bounds.lower(), opts.bounds.upper());
    let f = |t: [f64; 2]| {
        let (a, b) = to_params(t);
        pl.value(a, b)
    };
    let mut theta = from_params(opts.init.alpha(), opts.init.beta());
    for c in 0..2 {
        theta[c] = theta[c].clamp(lo[c], hi[c]);
    }
    let mut value = f(theta);
    if !value.is_finite() {
        return Err(RggmError::Numerical(format!(
            "pseudo-likelihood is not finite at the initial point {:?}",
            to_params(theta)
        )));
    }
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let start = theta;
        let start_value = value;
        for c in 0..2 {
            let mut g = |s: f64| {
                let mut t = theta;
                t[c] += s;
                f(t)
            };
            let (s, v) = line_search(&mut g, lo[c] - theta[c], hi[c] - theta[c], 0.5);
            theta[c] += s;
            value = v;
        }
        let dir = [theta[0] - start[0], theta[1] - start[1]];
        if dir[0] != 0.0 && dir[1] != 0.0 {
            let (mut smin, mut smax) = (f64::NEG_INFINITY, f64::INFINITY);
            for c in 0..2 {
                let (r1, r2) = ((lo[c] - theta[c]) / dir[c], (hi[c] - theta[c]) / dir[c]);
                smin = smin.max(r1.min(r2));
                smax = smax.min(r1.max(r2));
            }
            let mut g = |s: f64| f([theta[0] + s * dir[0], theta[1] + s * dir[1]]);
            let (s, v) = line_search(&mut g, smin.min(0.0), smax.max(0.0), 1.0);
            if s != 0.0 {
                theta = [
                    (theta[0] + s * dir[0]).clamp(lo[0], hi[0]),
                    (theta[1] + s * dir[1]).clamp(lo[1], hi[1]),
                ];
                value = v.max(f(theta));
            }
        }
        let step = (theta[0] - start[0]).abs().max((theta[1] - start[1]).abs());
        if step < PARAM_STEP_TOL && (value - start_value).abs() < OBJECTIVE_STEP_TOL {
            converged = true;
            break;
        }
    }

    let gradient_norm = projected_gradient(&f, theta, lo, hi);
    let (alpha_hat, beta_hat) = to_params(theta);
    let (se_alpha, se_beta) = standard_errors(&pl, alpha_hat, beta_hat);
    Ok(FitResult {
        alpha_hat,
        beta_hat,
        objective: pl.value(alpha_hat, beta_hat),
        iterations,
        converged: converged && gradient_norm <= gradient_tolerance(pl.total_weight()),
        gradient_norm,
        se_alpha,
        se_beta,
    })
}

/// Gradient tolerance attached to a converged fit; scales with the amount of data.
pub fn gradient_tolerance(total_weight: f64) -> f64 {
    1e-4 * total_weight.max(1.0)
}

fn projected_gradient(f: &impl Fn([f64; 2]) -> f64, theta: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let mut norm2 = 0.0;
    for c in 0..2 {
        let (mut up, mut down) = (theta, theta);
        up[c] += GRADIENT_STEP;
        down[c] -= GRADIENT_STEP;
        let g = (f(up) - f(down)) / (2.0 * GRADIENT_STEP);
        let g = if !g.is_finite() {
            // One side lies outside the domain; fall back to a one-sided difference.
            let (fu, fd, f0) = (f(up), f(down), f(theta));
            if fu.is_finite() {
                (fu - f0) / GRADIENT_STEP
            } else {
                (f0 - fd) / GRADIENT_STEP
            }
        } else {
            g
        };
        let at_lo = theta[c] <= lo[c] + 1e-9;
        let at_hi = theta[c] >= hi[c] - 1e-9;
        if (at_lo && g < 0.0) || (at_hi && g > 0.0) {
            continue;
        }
        norm2 += g * g;
    }
    norm2.sqrt()
}

/// Square roots of the diagonal of the inverse negative Hessian in `(α, β)`.
pub fn standard_errors(pl: &PseudoLikelihood, alpha: f64, beta: f64) -> (Option<f64>, Option<f64>) {
    let ha = 1e-4 * alpha;
    let hb = 1e-4 * beta.max(1e-2);
    let f = |a: f64, b: f64| pl.value(a, b);
    let f0 = f(alpha, beta);
    let faa = (f(alpha + ha, beta) - 2.0 * f0 + f(alpha - ha, beta)) / (ha * ha);
    let fbb = (f(alpha, beta + hb) - 2.0 * f0 + f(alpha, beta - hb)) / (hb * hb);
    let fab = (f(alpha + ha, beta + hb) - f(alpha + ha, beta - hb) - f(alpha - ha, beta + hb)
        + f(alpha - ha, beta - hb))
        / (4.0 * ha * hb);
    // Observed information J = −H; its inverse is the covariance estimate.
    let (jaa, jbb, jab) = (-faa, -fbb, -fab);
    let det = jaa * jbb - jab * jab;
    if !(det.is_finite() && det > 0.0 && jaa > 0.0) {
        return (None, None);
    }
    ((jbb / det).sqrt().into(), (jaa / det).sqrt().into())
}
