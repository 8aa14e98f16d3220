//! Densities and conditionals of the joint edge/attribute model
//!
//! `μ(a, x) ∝ exp{−H(a, x)/2}` with `H(a, x) = α Σ x_i² + β Σ_{(i,j)∈E} a_ij (x_i − x_j)²`.

use serde::{Deserialize, Serialize};

use crate::error::{Result, RggmError};
use crate::graph::{EdgeConfig, Topology};
use crate::linalg::{build_precision, CovarianceState};

/// Smallest accepted node precision scale.
pub const MIN_ALPHA: f64 = 1e-8;

/// Logistic exponents above this are treated as the limit `P(edge) = 0`.
pub const LOGISTIC_EXPONENT_CAP: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    alpha: f64,
    beta: f64,
}

impl ModelParams {
    /// `alpha >= MIN_ALPHA`, `beta >= 0`, both finite.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= MIN_ALPHA) {
            return Err(RggmError::Config(format!(
                "alpha must be finite and >= {MIN_ALPHA:e}, got {alpha}"
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(RggmError::Config(format!("beta must be finite and >= 0, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Node attribute vector `x`, one finite value per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeVector(Vec<f64>);

impl NodeVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(RggmError::Data(format!("node value {k} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_shapes(top: &Topology, a: &EdgeConfig, x: &NodeVector) -> Result<()> {
    top.check_config(a)?;
    if x.len() != top.num_nodes() {
        return Err(RggmError::Config(format!(
            "node vector has {} entries but topology has {} nodes",
            x.len(),
            top.num_nodes()
        )));
    }
    Ok(())
}

/// `H(a, x)`, evaluated as the edge sum (equal to `xᵀQ(a)x`).
pub fn hamiltonian(top: &Topology, a: &EdgeConfig, x: &NodeVector, p: &ModelParams) -> Result<f64> {
    check_shapes(top, a, x)?;
    let x = x.as_slice();
    let node: f64 = x.iter().map(|v| v * v).sum();
    let edge: f64 = a
        .iter_ones()
        .map(|k| {
            let (i, j) = top.edge(k);
            (x[i] - x[j]).powi(2)
        })
        .sum();
    Ok(p.alpha() * node + p.beta() * edge)
}

/// `−H(a, x)/2`; the normaliser is never formed.
pub fn log_joint_unnormalized(
    top: &Topology,
    a: &EdgeConfig,
    x: &NodeVector,
    p: &ModelParams,
) -> Result<f64> {
    Ok(-0.5 * hamiltonian(top, a, x, p)?)
}

/// `P(a_ij = 1 | x)` from the squared gap `(x_i − x_j)²`.
///
/// Switching edge `(i, j)` on multiplies `exp{−H/2}` by `exp{−β(x_i − x_j)²/2}`,
/// so the conditional of the joint is `1 / (1 + exp{β(x_i − x_j)²/2})`.
pub fn edge_on_probability(sq_gap: f64, beta: f64) -> f64 {
    let t = 0.5 * beta * sq_gap;
    if t > LOGISTIC_EXPONENT_CAP {
        0.0
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `(log P(a_ij = 1 | x), log P(a_ij = 0 | x))`, stable for any exponent.
pub fn edge_log_probabilities(sq_gap: f64, beta: f64) -> (f64, f64) {
    let t = 0.5 * beta * sq_gap;
    // log(1 + e^t) = t + log1p(e^{-t})
    let tail = (-t).exp().ln_1p();
    (-(t + tail), -tail)
}

/// Logistic edge probability given node values; never exceeds 1/2.
pub fn edge_prob_given_x(x: &NodeVector, i: usize, j: usize, beta: f64) -> Result<f64> {
    if i == j {
        return Err(RggmError::Domain(format!("edge probability needs distinct nodes, got {i}")));
    }
    let xs = x.as_slice();
    if i >= xs.len() || j >= xs.len() {
        return Err(RggmError::Domain(format!("node pair ({i},{j}) outside 0..{}", xs.len())));
    }
    Ok(edge_on_probability((xs[i] - xs[j]).powi(2), beta))
}

/// Law of `X | A = a`: centred Gaussian with covariance `Σ(a) = Q(a)⁻¹`.
pub fn x_given_a_law(top: &Topology, a: &EdgeConfig, p: &ModelParams) -> Result<CovarianceState> {
    CovarianceState::from_precision(build_precision(top, a, p)?)
}

/// `1 / (1 + √(1 + βδ))`: probability an absent edge switches on given every other edge.
pub fn conditional_from_gap(delta: f64, beta: f64) -> f64 {
    1.0 / (1.0 + (1.0 + beta * delta).sqrt())
}

/// Equivalent form `√δ₁ / (√δ₀ + √δ₁)` using the gap without (`δ₀`) and with (`δ₁`) the edge.
pub fn conditional_from_gap_pair(delta_off: f64, delta_on: f64) -> f64 {
    let (s0, s1) = (delta_off.sqrt(), delta_on.sqrt());
    s1 / (s0 + s1)
}

/// One-edge conditional `μ(A_e = 1 | A_{−e} = a)` from the covariance state of `a`.
///
/// `cs` must describe `a`, and edge `edge` must be off in `a`.
pub fn one_edge_conditional(
    cs: &CovarianceState,
    top: &Topology,
    a: &EdgeConfig,
    edge: usize,
    beta: f64,
) -> Result<f64> {
    top.check_config(a)?;
    if edge >= top.num_edges() {
        return Err(RggmError::Domain(format!("edge index {edge} outside 0..{}", top.num_edges())));
    }
    if a.get(edge) {
        return Err(RggmError::Contract(format!(
            "edge {edge} is present; the one-edge conditional needs it absent"
        )));
    }
    let (i, j) = top.edge(edge);
    Ok(conditional_from_gap(cs.delta(i, j)?, beta))
}
