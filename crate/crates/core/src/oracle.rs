//! Exact enumeration of the edge marginal `μ_A(a) ∝ |Σ(a)|^{1/2}` on small graphs.
//!
//! Every configuration's determinant is computed from its own Cholesky
//! factorisation, independent of the rank-one machinery, so the table can
//! serve as the reference for everything else. [`enumerate_gray`] is the
//! fast path: one rank-one update per Gray-code step.

use rayon::prelude::*;

use crate::error::{Result, RggmError};
use crate::graph::{EdgeConfig, Topology};
use crate::linalg::{build_precision, invert_precision, Cholesky, CovarianceState, SymMatrix};
use crate::model::ModelParams;

/// Hard cap on the number of ambient edges that may be enumerated (2^24 rows).
pub const MAX_ENUMERATION_EDGES: usize = 24;

/// Upper bound on the memory a table may claim.
pub const MAX_TABLE_BYTES: u64 = 1 << 30;

const BYTES_PER_ROW: u64 = 2 * std::mem::size_of::<f64>() as u64;

/// Exact `μ_A` over all `2^n` configurations, indexed by integer config code.
#[derive(Clone, Debug)]
pub struct MeasureTable {
    topology: Topology,
    params: ModelParams,
    half_logdet: Vec<f64>,
    prob: Vec<f64>,
    log_kappa: f64,
}

/// One materialised row of a [`MeasureTable`].
#[derive(Clone, Debug)]
pub struct TableRow {
    pub config: EdgeConfig,
    /// `log |Σ(a)|^{1/2}`.
    pub half_logdet: f64,
    pub prob: f64,
}

fn check_enumerable(top: &Topology) -> Result<()> {
    let n = top.num_edges();
    if n > MAX_ENUMERATION_EDGES {
        return Err(RggmError::Size {
            what: "edges to enumerate",
            requested: n as u64,
            cap: MAX_ENUMERATION_EDGES as u64,
        });
    }
    let bytes = (1u64 << n) * BYTES_PER_ROW;
    if bytes > MAX_TABLE_BYTES {
        return Err(RggmError::Size {
            what: "table bytes",
            requested: bytes,
            cap: MAX_TABLE_BYTES,
        });
    }
    Ok(())
}

/// Builds the exact table, one independent Cholesky factorisation per configuration.
pub fn enumerate(top: &Topology, params: &ModelParams) -> Result<MeasureTable> {
    check_enumerable(top)?;
    let n = top.num_edges();
    let half_logdet = (0..1u64 << n)
        .into_par_iter()
        .map(|code| {
            let a = EdgeConfig::from_code(n, code);
            let q = build_precision(top, &a, params)?;
            Ok(-0.5 * Cholesky::factor(&q)?.log_det())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(MeasureTable::from_half_logdets(top.clone(), *params, half_logdet))
}

/// Gray-code enumeration: walks configurations flipping one edge per step with
/// rank-one updates. Agrees with [`enumerate`] to about 1e-9.
pub fn enumerate_gray(top: &Topology, params: &ModelParams, refresh_period: usize) -> Result<MeasureTable> {
    check_enumerable(top)?;
    let n = top.num_edges();
    let beta = params.beta();
    let mut cs = CovarianceState::for_config(top, &top.empty_config(), params)?
        .with_refresh_period(refresh_period)?;
    let mut half_logdet = vec![0.0; 1usize << n];
    half_logdet[0] = 0.5 * cs.logdet_sigma();
    let mut code = 0u64;
    for step in 1..1u64 << n {
        let k = step.trailing_zeros() as usize;
        let (i, j) = top.edge(k);
        if code >> k & 1 == 0 {
            cs.rank_one_add(i, j, beta)?;
        } else {
            cs.rank_one_remove(i, j, beta)?;
        }
        code ^= 1 << k;
        half_logdet[code as usize] = 0.5 * cs.logdet_sigma();
    }
    Ok(MeasureTable::from_half_logdets(top.clone(), *params, half_logdet))
}

impl MeasureTable {
    fn from_half_logdets(topology: Topology, params: ModelParams, half_logdet: Vec<f64>) -> Self {
        let max = half_logdet.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = half_logdet.iter().map(|h| (h - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let prob = weights.into_iter().map(|w| w / total).collect();
        Self {
            topology,
            params,
            half_logdet,
            prob,
            log_kappa: max + total.ln(),
        }
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Number of rows, `2^n`.
    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    /// `log κ` with `κ = Σ_a |Σ(a)|^{1/2}`.
    pub fn log_kappa(&self) -> f64 {
        self.log_kappa
    }

    pub fn config(&self, code: u64) -> EdgeConfig {
        EdgeConfig::from_code(self.topology.num_edges(), code)
    }

    pub fn half_logdet(&self, code: u64) -> f64 {
        self.half_logdet[code as usize]
    }

    pub fn prob(&self, code: u64) -> f64 {
        self.prob[code as usize]
    }

    pub fn probs(&self) -> &[f64] {
        &self.prob
    }

    pub fn half_logdets(&self) -> &[f64] {
        &self.half_logdet
    }

    pub fn rows(&self) -> impl Iterator<Item = TableRow> + '_ {
        (0..self.len() as u64).map(|code| TableRow {
            config: self.config(code),
            half_logdet: self.half_logdet(code),
            prob: self.prob(code),
        })
    }

    /// `μ_A(B)` for the event `B = {a : pred(a)}`.
    pub fn event_probability(&self, pred: impl Fn(&EdgeConfig) -> bool) -> f64 {
        self.rows().filter(|r| pred(&r.config)).map(|r| r.prob).sum()
    }

    /// Same as [`MeasureTable::event_probability`] but on integer codes.
    pub fn event_probability_by_code(&self, pred: impl Fn(u64) -> bool) -> f64 {
        self.prob
            .iter()
            .enumerate()
            .filter(|(code, _)| pred(*code as u64))
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(A_k = 1)` for every edge.
    pub fn edge_marginals(&self) -> Vec<f64> {
        (0..self.topology.num_edges())
            .map(|k| self.event_probability_by_code(|c| c >> k & 1 == 1))
            .collect()
    }

    /// `Cov(X) = Σ_a μ_A(a) Σ(a)`, the covariance of the Gaussian mixture marginal of X.
    pub fn mixture_covariance(&self) -> Result<SymMatrix> {
        let m = self.topology.num_nodes();
        let len = self.len() as u64;
        let blocks = len.min(256);
        // Fixed blocks summed in order keep the result independent of thread scheduling.
        let partial = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let mut acc = SymMatrix::zeros(m);
                for code in (b * len / blocks)..((b + 1) * len / blocks) {
                    let q = build_precision(&self.topology, &self.config(code), &self.params)?;
                    let (sigma, _) = invert_precision(&q)?;
                    acc.add_scaled(&sigma, self.prob(code));
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut total = SymMatrix::zeros(m);
        for block in &partial {
            total.add_scaled(block, 1.0);
        }
        Ok(total)
    }

    /// `μ(A_e = 1 | A_{−e} = a_{−e})` as the ratio of the two table rows that
    /// differ only in edge `e`. The bit of `a` at `e` is ignored.
    pub fn conditional_from_table(&self, edge: usize, a: &EdgeConfig) -> Result<f64> {
        self.topology.check_config(a)?;
        if edge >= self.topology.num_edges() {
            return Err(RggmError::Domain(format!(
                "edge index {edge} outside 0..{}",
                self.topology.num_edges()
            )));
        }
        let code = a.code().expect("enumerable configs fit in a u64");
        let off = code & !(1 << edge);
        let on = code | (1 << edge);
        let (h0, h1) = (self.half_logdet(off), self.half_logdet(on));
        // |Σ₁|^{1/2} / (|Σ₀|^{1/2} + |Σ₁|^{1/2})
        Ok(1.0 / (1.0 + (h0 - h1).exp()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 1.0).unwrap()
    }

    // Hand-computed determinants of Q on P3 for codes 00, 10, 01, 11: 1, 3, 3, 8.
    fn p3_oracle() -> [f64; 4] {
        let w = [1.0, 1.0 / 3f64.sqrt(), 1.0 / 3f64.sqrt(), 1.0 / 8f64.sqrt()];
        let kappa: f64 = w.iter().sum();
        [w[0] / kappa, w[1] / kappa, w[2] / kappa, w[3] / kappa]
    }

    #[test]
    fn single_edge_table() {
        let t = enumerate(&Topology::path(2), &unit()).unwrap();
        assert_abs_diff_eq!(t.prob(0), 3f64.sqrt() / (1.0 + 3f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(t.prob(0), 0.633975, epsilon = 1e-6);
        assert_abs_diff_eq!(t.prob(1), 0.366025, epsilon = 1e-6);
    }

    #[test]
    fn path3_table() {
        let t = enumerate(&Topology::path(3), &unit()).unwrap();
        let expect = p3_oracle();
        for code in 0..4 {
            assert_abs_diff_eq!(t.prob(code), expect[code as usize], epsilon = 1e-14);
        }
        assert_abs_diff_eq!(t.prob(0), 0.398684, epsilon = 1e-6);
        assert_abs_diff_eq!(t.prob(1), 0.230181, epsilon = 1e-6);
        assert_abs_diff_eq!(t.prob(3), 0.140956, epsilon = 1e-6);
        let kappa = 1.0 + 2.0 / 3f64.sqrt() + 1.0 / 8f64.sqrt();
        assert_abs_diff_eq!(t.log_kappa(), kappa.ln(), epsilon = 1e-14);
        assert_abs_diff_eq!(t.probs().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_coupling_is_uniform() {
        let top = Topology::cycle(4).unwrap();
        let t = enumerate(&top, &ModelParams::new(2.0, 0.0).unwrap()).unwrap();
        for &p in t.probs() {
            assert_abs_diff_eq!(p, 1.0 / 16.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn event_probabilities() {
        let t = enumerate(&Topology::path(3), &unit()).unwrap();
        assert_abs_diff_eq!(t.event_probability(|_| true), 1.0, epsilon = 1e-14);
        let expect = (1.0 / 3f64.sqrt() + 1.0 / 8f64.sqrt())
            / (1.0 + 2.0 / 3f64.sqrt() + 1.0 / 8f64.sqrt());
        assert_abs_diff_eq!(t.event_probability(|a| a.get(0)), expect, epsilon = 1e-14);
        assert_abs_diff_eq!(t.event_probability(|a| a.get(0)), 0.371136, epsilon = 1e-6);
        assert_abs_diff_eq!(t.event_probability(|a| a.get(0) && a.get(1)), 0.140956, epsilon = 1e-6);
        let marg = t.edge_marginals();
        assert_abs_diff_eq!(marg[0], marg[1], epsilon = 1e-15);
    }

    #[test]
    fn mixture_covariance_examples() {
        let top = Topology::path(3);
        let t = enumerate(&top, &ModelParams::new(2.0, 0.0).unwrap()).unwrap();
        let cov = t.mixture_covariance().unwrap();
        assert!(cov.max_abs_diff(&SymMatrix::scaled_identity(3, 0.5)) < 1e-15);

        let w = p3_oracle();
        let t = enumerate(&top, &unit()).unwrap();
        let cov = t.mixture_covariance().unwrap();
        // Var(X_1) = 1, 2/3, 2/3, 1/2 across the four configurations.
        let expect = w[0] + (w[1] + w[2]) * 2.0 / 3.0 + w[3] * 0.5;
        assert_abs_diff_eq!(cov.get(1, 1), expect, epsilon = 1e-14);
        assert_abs_diff_eq!(cov.get(1, 1), 0.776069, epsilon = 1e-6);

        let t = enumerate(&Topology::path(2), &unit()).unwrap();
        let cov = t.mixture_covariance().unwrap();
        assert_abs_diff_eq!(cov.get(0, 0), 0.877992, epsilon = 1e-6);
    }

    #[test]
    fn conditional_from_rows() {
        let t = enumerate(&Topology::path(2), &unit()).unwrap();
        let q = t.conditional_from_table(0, &EdgeConfig::zeros(1)).unwrap();
        assert_abs_diff_eq!(q, 0.366025, epsilon = 1e-6);

        let t0 = enumerate(&Topology::path(3), &ModelParams::new(1.0, 0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(t0.conditional_from_table(1, &EdgeConfig::zeros(2)).unwrap(), 0.5, epsilon = 1e-15);

        let t = enumerate(&Topology::path(3), &unit()).unwrap();
        let a = EdgeConfig::from_bits(&[true, false]);
        let q = t.conditional_from_table(1, &a).unwrap();
        assert_abs_diff_eq!(q, 0.379796, epsilon = 1e-6);
        // The conditioned bit itself is ignored.
        let a_on = EdgeConfig::from_bits(&[true, true]);
        assert_eq!(t.conditional_from_table(1, &a_on).unwrap(), q);
    }

    #[test]
    fn gray_path_agrees_with_independent_factorisations() {
        let top = Topology::complete(5);
        let p = ModelParams::new(0.7, 2.5).unwrap();
        let exact = enumerate(&top, &p).unwrap();
        let fast = enumerate_gray(&top, &p, 64).unwrap();
        for (a, b) in exact.half_logdets().iter().zip(fast.half_logdets()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        for (a, b) in exact.probs().iter().zip(fast.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn cap_is_enforced() {
        let top = Topology::complete(8); // 28 edges
        assert!(matches!(enumerate(&top, &unit()), Err(RggmError::Size { .. })));
        assert!(matches!(enumerate_gray(&top, &unit(), 64), Err(RggmError::Size { .. })));
    }

    #[test]
    fn lemma1_holds_across_rows() {
        let top = Topology::cycle(5).unwrap();
        let p = ModelParams::new(1.3, 0.9).unwrap();
        let t = enumerate(&top, &p).unwrap();
        for code in 0..t.len() as u64 {
            let cs = CovarianceState::for_config(&top, &t.config(code), &p).unwrap();
            for k in 0..top.num_edges() {
                if code >> k & 1 == 1 {
                    continue;
                }
                let (i, j) = top.edge(k);
                let delta = cs.delta(i, j).unwrap();
                let predicted = t.half_logdet(code) - 0.5 * (p.beta() * delta).ln_1p();
                assert_abs_diff_eq!(t.half_logdet(code | 1 << k), predicted, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn lattice_condition_and_embedding() {
        let p = ModelParams::new(0.5, 4.0).unwrap();
        let top = Topology::star(5);
        let t = enumerate(&top, &p).unwrap();
        for a in 0..t.len() as u64 {
            for b in 0..t.len() as u64 {
                let margin = t.prob(a | b) * t.prob(a & b) - t.prob(a) * t.prob(b);
                assert!(margin >= -1e-12, "lattice condition fails at {a:b} {b:b}");
            }
        }

        // Restricting the larger star to its first three edges: μ_small(B) = μ_big(B | new edges off).
        let small = enumerate(&Topology::star(4), &p).unwrap();
        let mask = 0b111u64;
        let off = t.event_probability_by_code(|c| c & !mask == 0);
        for code in 0..8u64 {
            let joint = t.prob(code);
            assert_abs_diff_eq!(small.prob(code), joint / off, epsilon = 1e-12);
        }
    }
}
