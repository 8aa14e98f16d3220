//! Executable checks of the model's identities and inequalities.
//!
//! Each check returns a [`CheckReport`]: a list of criteria, each either a
//! residual that must stay below its tolerance or a margin that must stay
//! above minus its tolerance, together with the worst instance seen. The
//! per-instance functions (`lemma1_residual`, `variance_margins`, ...) are
//! public so a witness can be re-evaluated on its own.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{connected_catalog, small_graphs, NamedTopology};
use crate::error::{Result, RggmError};
use crate::graph::{nested_sequence, EdgeConfig, NestedKind, Topology};
use crate::linalg::{delta_prime_identity_residual, invert_precision, build_precision, CovarianceState};
use crate::model::{conditional_from_gap, conditional_from_gap_pair, one_edge_conditional, ModelParams};
use crate::oracle::{enumerate, MeasureTable, MAX_ENUMERATION_EDGES};
use crate::sampler::{chain_rng, drive, BatchMeans, ChainKind, RunSettings};

/// Tolerance for algebraic identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Tolerance for agreement between two closed forms of the same quantity.
pub const FORMULA_TOL: f64 = 1e-12;
/// Allowed violation of an inequality, to absorb rounding at equality.
pub const MARGIN_TOL: f64 = 1e-12;
/// Sampled comparisons may fall short by this many standard errors.
pub const SAMPLED_SE_FACTOR: f64 = 3.0;

/// Largest edge count for the exhaustive one-edge conditional check.
pub const PROP2_MAX_EDGES: usize = 12;
/// Largest edge count for which every pair of configurations is tested for the lattice condition.
pub const LATTICE_EXHAUSTIVE_MAX_EDGES: usize = 4;
/// Largest edge count for the exact conditional-expectation (sub-martingale) check.
pub const MARTINGALE_EXACT_MAX_EDGES: usize = 6;

pub const FKG_ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];
pub const FKG_BETAS: [f64; 4] = [0.0, 0.5, 1.0, 4.0];

/// The `α × β` grid used for the association checks.
pub fn fkg_grid() -> Vec<ModelParams> {
    FKG_ALPHAS
        .iter()
        .flat_map(|&a| FKG_BETAS.iter().map(move |&b| ModelParams::new(a, b).expect("grid values are valid")))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bound {
    /// Passes when `value <= tolerance`.
    Residual,
    /// Passes when `value >= -tolerance`.
    Margin,
}

/// The instance that produced a criterion's worst value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub topology: Topology,
    pub params: ModelParams,
    pub config_hex: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub other_config_hex: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub edge: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nodes: Option<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

impl Witness {
    fn new(top: &Topology, p: &ModelParams, a: &EdgeConfig) -> Self {
        Self {
            topology: top.clone(),
            params: *p,
            config_hex: a.to_hex(),
            other_config_hex: None,
            edge: None,
            nodes: None,
            note: None,
        }
    }

    fn other(mut self, b: &EdgeConfig) -> Self {
        self.other_config_hex = Some(b.to_hex());
        self
    }

    fn edge(mut self, k: usize) -> Self {
        self.edge = Some(k);
        self
    }

    fn nodes(mut self, i: usize, j: usize) -> Self {
        self.nodes = Some((i, j));
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// The witness configuration, decoded against its topology.
    pub fn config(&self) -> Result<EdgeConfig> {
        EdgeConfig::from_hex(self.topology.num_edges(), &self.config_hex)
    }

    pub fn other_config(&self) -> Result<Option<EdgeConfig>> {
        self.other_config_hex
            .as_deref()
            .map(|h| EdgeConfig::from_hex(self.topology.num_edges(), h))
            .transpose()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub label: String,
    pub bound: Bound,
    /// Worst residual (largest) or margin (smallest); `None` if nothing was tested.
    pub value: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
    pub witness: Option<Witness>,
}

/// Values of one increasing event along a nested sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub event: String,
    /// Index in the sequence of the first topology the event is evaluated on.
    pub start: usize,
    pub edge_counts: Vec<usize>,
    pub values: Vec<f64>,
    /// Standard errors; zero for exact values.
    pub standard_errors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub instances: u64,
    pub passed: bool,
    pub criteria: Vec<Criterion>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectories: Vec<Trajectory>,
}

impl CheckReport {
    fn finish(name: impl Into<String>, instances: u64, trackers: Vec<Tracker>, trajectories: Vec<Trajectory>) -> Self {
        let criteria: Vec<Criterion> = trackers.into_iter().map(Tracker::into_criterion).collect();
        Self {
            name: name.into(),
            instances,
            passed: criteria.iter().all(|c| c.passed),
            criteria,
            trajectories,
        }
    }

    /// Largest residual over all residual criteria.
    pub fn max_residual(&self) -> Option<f64> {
        self.criteria
            .iter()
            .filter(|c| c.bound == Bound::Residual)
            .filter_map(|c| c.value)
            .reduce(f64::max)
    }

    /// Smallest margin over all margin criteria.
    pub fn worst_margin(&self) -> Option<f64> {
        self.criteria
            .iter()
            .filter(|c| c.bound == Bound::Margin)
            .filter_map(|c| c.value)
            .reduce(f64::min)
    }

    pub fn criterion(&self, label: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.label == label)
    }

    /// Pools reports of the same check over several instances: criteria with the
    /// same label keep the worst value and its witness.
    pub fn combine(name: impl Into<String>, reports: impl IntoIterator<Item = CheckReport>) -> Self {
        let mut instances = 0;
        let mut criteria: Vec<Criterion> = Vec::new();
        let mut trajectories = Vec::new();
        for r in reports {
            instances += r.instances;
            trajectories.extend(r.trajectories);
            for c in r.criteria {
                match criteria.iter_mut().find(|x| x.label == c.label) {
                    None => criteria.push(c),
                    Some(x) => {
                        let worse = match (x.value, c.value) {
                            (_, None) => false,
                            (None, Some(_)) => true,
                            (Some(old), Some(new)) => is_worse(x.bound, new, old),
                        };
                        if worse {
                            x.value = c.value;
                            x.witness = c.witness;
                        }
                        x.passed &= c.passed;
                    }
                }
            }
        }
        Self {
            name: name.into(),
            instances,
            passed: criteria.iter().all(|c| c.passed),
            criteria,
            trajectories,
        }
    }
}

fn is_worse(bound: Bound, new: f64, old: f64) -> bool {
    if new.is_nan() {
        return !old.is_nan();
    }
    match bound {
        Bound::Residual => new > old,
        Bound::Margin => new < old,
    }
}

struct Tracker {
    label: String,
    bound: Bound,
    tol: f64,
    worst: Option<(f64, Witness)>,
}

impl Tracker {
    fn residual(label: impl Into<String>, tol: f64) -> Self {
        Self {
            label: label.into(),
            bound: Bound::Residual,
            tol,
            worst: None,
        }
    }

    fn margin(label: impl Into<String>, tol: f64) -> Self {
        Self {
            label: label.into(),
            bound: Bound::Margin,
            tol,
            worst: None,
        }
    }

    fn observe(&mut self, value: f64, witness: impl FnOnce() -> Witness) {
        let replace = match &self.worst {
            None => true,
            Some((old, _)) => is_worse(self.bound, value, *old),
        };
        if replace {
            self.worst = Some((value, witness()));
        }
    }

    fn into_criterion(self) -> Criterion {
        let value = self.worst.as_ref().map(|(v, _)| *v);
        let passed = match value {
            None => true,
            Some(v) => match self.bound {
                Bound::Residual => v <= self.tol,
                Bound::Margin => v >= -self.tol,
            },
        };
        Criterion {
            label: self.label,
            bound: self.bound,
            value,
            tolerance: self.tol,
            passed,
            witness: self.worst.map(|(_, w)| w),
        }
    }
}

fn random_config(n: usize, rng: &mut impl Rng) -> EdgeConfig {
    let mut a = EdgeConfig::zeros(n);
    for k in 0..n {
        a.set(k, rng.random::<bool>());
    }
    a
}

/// A uniform configuration together with a uniformly chosen absent edge.
fn random_config_with_absent_edge(n: usize, rng: &mut impl Rng) -> (EdgeConfig, usize) {
    let mut a = random_config(n, rng);
    let absent: Vec<usize> = (0..n).filter(|&k| !a.get(k)).collect();
    let edge = if absent.is_empty() {
        let k = rng.random_range(0..n);
        a.set(k, false);
        k
    } else {
        absent[rng.random_range(0..absent.len())]
    };
    (a, edge)
}

fn with_edge(a: &EdgeConfig, k: usize) -> EdgeConfig {
    let mut b = a.clone();
    b.set(k, true);
    b
}

fn require_absent(a: &EdgeConfig, edge: usize) -> Result<()> {
    if a.get(edge) {
        return Err(RggmError::Contract(format!("edge {edge} must be absent")));
    }
    Ok(())
}

/// Residual of the determinant update `log|Σ'| = log|Σ| − log(1+βδ)` and of
/// `(1−βδ')(1+βδ) = 1`, for adding absent edge `edge` to `a`. Returns the larger.
pub fn lemma1_residual(top: &Topology, p: &ModelParams, a: &EdgeConfig, edge: usize) -> Result<f64> {
    top.check_config(a)?;
    require_absent(a, edge)?;
    let (i, j) = top.edge(edge);
    let before = CovarianceState::for_config(top, a, p)?;
    let after = CovarianceState::for_config(top, &with_edge(a, edge), p)?;
    let delta = before.delta(i, j)?;
    let delta_on = after.delta(i, j)?;
    let det = (after.logdet_sigma() - before.logdet_sigma() + (p.beta() * delta).ln_1p()).abs();
    Ok(det.max(delta_prime_identity_residual(delta, delta_on, p.beta())))
}

pub fn check_lemma1(top: &Topology, p: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut tracker = Tracker::residual("determinant and gap identities", IDENTITY_TOL);
    let n = top.num_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = 0;
    if n > 0 {
        for _ in 0..trials {
            let (a, edge) = random_config_with_absent_edge(n, &mut rng);
            let r = lemma1_residual(top, p, &a, edge)?;
            tracker.observe(r, || Witness::new(top, p, &a).edge(edge));
            instances += 1;
        }
    }
    Ok(CheckReport::finish("lemma1", instances, vec![tracker], Vec::new()))
}

/// Largest entrywise difference between the rank-one update of `Σ(a)` for
/// adding `edge` and an independent inverse of the new precision.
pub fn lemma2_sigma_residual(top: &Topology, p: &ModelParams, a: &EdgeConfig, edge: usize) -> Result<f64> {
    top.check_config(a)?;
    require_absent(a, edge)?;
    let (i, j) = top.edge(edge);
    let mut updated = CovarianceState::for_config(top, a, p)?;
    updated.rank_one_add(i, j, p.beta())?;
    let (fresh, _) = invert_precision(&build_precision(top, &with_edge(a, edge), p)?)?;
    Ok(updated.sigma().max_abs_diff(&fresh))
}

/// Residual of `δ'_kl = δ_kl − β/(1+βδ_ij) (σ_ki − σ_kj − σ_li + σ_lj)²` for adding `edge = (i, j)`.
pub fn gap_update_residual(
    top: &Topology,
    p: &ModelParams,
    a: &EdgeConfig,
    edge: usize,
    (k, l): (usize, usize),
) -> Result<f64> {
    top.check_config(a)?;
    require_absent(a, edge)?;
    let (i, j) = top.edge(edge);
    let before = CovarianceState::for_config(top, a, p)?;
    let after = CovarianceState::for_config(top, &with_edge(a, edge), p)?;
    let s = before.sigma();
    let coeff = p.beta() / (1.0 + p.beta() * before.delta(i, j)?);
    let w = s.get(k, i) - s.get(k, j) - s.get(l, i) + s.get(l, j);
    let predicted = before.delta(k, l)? - coeff * w * w;
    Ok((predicted - after.delta(k, l)?).abs())
}

/// Node pairs checked per trial for the gap update.
const GAP_PAIRS_PER_TRIAL: usize = 4;

pub fn check_lemma2(top: &Topology, p: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut sigma = Tracker::residual("covariance update", IDENTITY_TOL);
    let mut gaps = Tracker::residual("gap update", IDENTITY_TOL);
    let n = top.num_edges();
    let m = top.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = 0;
    if n > 0 {
        for _ in 0..trials {
            let (a, edge) = random_config_with_absent_edge(n, &mut rng);
            let r = lemma2_sigma_residual(top, p, &a, edge)?;
            sigma.observe(r, || Witness::new(top, p, &a).edge(edge));
            for _ in 0..GAP_PAIRS_PER_TRIAL {
                let k = rng.random_range(0..m);
                let l = (k + rng.random_range(1..m)) % m;
                let r = gap_update_residual(top, p, &a, edge, (k, l))?;
                gaps.observe(r, || Witness::new(top, p, &a).edge(edge).nodes(k, l));
            }
            instances += 1;
        }
    }
    Ok(CheckReport::finish("lemma2", instances, vec![sigma, gaps], Vec::new()))
}

/// `(|q − q_ratio|, |q − q_pair|)`: the closed-form one-edge conditional `q`
/// against the ratio of the two determinants, and against the two-gap form.
pub fn prop2_residuals(top: &Topology, p: &ModelParams, a: &EdgeConfig, edge: usize) -> Result<(f64, f64)> {
    top.check_config(a)?;
    require_absent(a, edge)?;
    let (i, j) = top.edge(edge);
    let off = CovarianceState::for_config(top, a, p)?;
    let on = CovarianceState::for_config(top, &with_edge(a, edge), p)?;
    let q = one_edge_conditional(&off, top, a, edge, p.beta())?;
    let ratio = 1.0 / (1.0 + (0.5 * (off.logdet_sigma() - on.logdet_sigma())).exp());
    let pair = conditional_from_gap_pair(off.delta(i, j)?, on.delta(i, j)?);
    Ok(((q - ratio).abs(), (q - pair).abs()))
}

/// Exhaustive check of the one-edge conditional over every configuration and absent edge.
pub fn check_prop2(top: &Topology, p: &ModelParams) -> Result<CheckReport> {
    let n = top.num_edges();
    if n > PROP2_MAX_EDGES {
        return Err(RggmError::Size {
            what: "edges for the exhaustive conditional check",
            requested: n as u64,
            cap: PROP2_MAX_EDGES as u64,
        });
    }
    let table = enumerate(top, p)?;
    let states = (0..1u64 << n)
        .into_par_iter()
        .map(|code| CovarianceState::for_config(top, &EdgeConfig::from_code(n, code), p))
        .collect::<Result<Vec<_>>>()?;
    let mut ratio = Tracker::residual("closed form vs enumeration", IDENTITY_TOL);
    let mut pair = Tracker::residual("gap form vs two-gap form", FORMULA_TOL);
    let mut instances = 0;
    for code in 0..1u64 << n {
        let a = EdgeConfig::from_code(n, code);
        let off = &states[code as usize];
        for k in (0..n).filter(|&k| !a.get(k)) {
            let (i, j) = top.edge(k);
            let q = one_edge_conditional(off, top, &a, k, p.beta())?;
            let exact = table.conditional_from_table(k, &a)?;
            let on = &states[(code | 1 << k) as usize];
            let two_gap = conditional_from_gap_pair(off.delta(i, j)?, on.delta(i, j)?);
            ratio.observe((q - exact).abs(), || Witness::new(top, p, &a).edge(k));
            pair.observe((q - two_gap).abs(), || Witness::new(top, p, &a).edge(k));
            instances += 1;
        }
    }
    Ok(CheckReport::finish("prop2", instances, vec![ratio, pair], Vec::new()))
}

/// Lattice margins for the pair `(a, b)`: `μ(a∨b)μ(a∧b) − μ(a)μ(b)` in
/// probability space and the same difference on the log-determinant scale.
pub fn lattice_margins(table: &MeasureTable, a: u64, b: u64) -> (f64, f64) {
    let (j, m) = (a | b, a & b);
    let prob = table.prob(j) * table.prob(m) - table.prob(a) * table.prob(b);
    let log = table.half_logdet(j) + table.half_logdet(m) - table.half_logdet(a) - table.half_logdet(b);
    (prob, log)
}

/// A monotone function of the configuration: the number of present edges
/// among `edges`, optionally thresholded into an event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncreasingEvent {
    pub label: String,
    pub edges: Vec<usize>,
    /// The event holds when at least this many of `edges` are present.
    pub threshold: usize,
}

impl IncreasingEvent {
    pub fn edge(k: usize) -> Self {
        Self {
            label: format!("edge {k}"),
            edges: vec![k],
            threshold: 1,
        }
    }

    pub fn at_least(edges: Vec<usize>, threshold: usize, label: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            edges,
            threshold,
        }
    }

    pub fn count(&self, a: &EdgeConfig) -> usize {
        self.edges.iter().filter(|&&k| a.get(k)).count()
    }

    pub fn holds(&self, a: &EdgeConfig) -> bool {
        self.count(a) >= self.threshold
    }

    pub fn holds_code(&self, code: u64) -> bool {
        self.edges.iter().filter(|&&k| code >> k & 1 == 1).count() >= self.threshold
    }

    fn max_edge(&self) -> Option<usize> {
        self.edges.iter().copied().max()
    }
}

/// Single-edge events, "any", "all" and count thresholds over the first `n` edges.
pub fn default_events(n: usize) -> Vec<IncreasingEvent> {
    let mut out: Vec<IncreasingEvent> = (0..n).map(IncreasingEvent::edge).collect();
    if n >= 2 {
        let all: Vec<usize> = (0..n).collect();
        out.push(IncreasingEvent::at_least(all.clone(), 1, format!("any of first {n}")));
        for t in 2..n {
            out.push(IncreasingEvent::at_least(all.clone(), t, format!("at least {t} of first {n}")));
        }
        out.push(IncreasingEvent::at_least(all, n, format!("all of first {n}")));
    }
    out
}

/// Increasing test functions on `n` edges, as values per configuration code:
/// edge indicators, pairwise "either" indicators (small `n`), count thresholds
/// and the raw edge count.
fn increasing_functions(n: usize) -> Vec<(String, Vec<f64>)> {
    let len = 1usize << n;
    let mut events = default_events(n);
    if n <= 6 {
        for k in 0..n {
            for l in k + 1..n {
                events.push(IncreasingEvent::at_least(vec![k, l], 1, format!("edge {k} or {l}")));
            }
        }
    }
    let mut out: Vec<(String, Vec<f64>)> = events
        .into_iter()
        .map(|e| {
            let v = (0..len as u64).map(|c| if e.holds_code(c) { 1.0 } else { 0.0 }).collect();
            (e.label, v)
        })
        .collect();
    out.push((
        "edge count".into(),
        (0..len as u64).map(|c| c.count_ones() as f64).collect(),
    ));
    out
}

/// Number of random pairs tested for the lattice condition above the exhaustive size.
pub const LATTICE_SAMPLED_PAIRS: usize = 20_000;

/// Association check on one topology over a parameter grid: the lattice condition
/// on configuration pairs (all pairs up to [`LATTICE_EXHAUSTIVE_MAX_EDGES`] edges,
/// random pairs above) and `E(fg) ≥ E(f)E(g)` for a library of increasing functions.
pub fn check_fkg(top: &Topology, grid: &[ModelParams], seed: u64) -> Result<CheckReport> {
    let n = top.num_edges();
    if n > 16 {
        return Err(RggmError::Size {
            what: "edges for the association check",
            requested: n as u64,
            cap: 16,
        });
    }
    let mut prob = Tracker::margin("lattice condition", MARGIN_TOL);
    let mut log = Tracker::margin("lattice condition (log scale)", IDENTITY_TOL);
    let mut assoc = Tracker::margin("positive association", MARGIN_TOL);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let functions = increasing_functions(n);
    let len = 1u64 << n;
    let mut instances = 0;
    for p in grid {
        let table = enumerate(top, p)?;
        let mut pair = |a: u64, b: u64| {
            let (mp, ml) = lattice_margins(&table, a, b);
            let w = || Witness::new(top, p, &EdgeConfig::from_code(n, a)).other(&EdgeConfig::from_code(n, b));
            prob.observe(mp, w);
            log.observe(ml, w);
        };
        if n <= LATTICE_EXHAUSTIVE_MAX_EDGES {
            for a in 0..len {
                for b in 0..len {
                    pair(a, b);
                    instances += 1;
                }
            }
        } else {
            for _ in 0..LATTICE_SAMPLED_PAIRS {
                pair(rng.random_range(0..len), rng.random_range(0..len));
                instances += 1;
            }
        }
        let probs = table.probs();
        let expect = |v: &[f64]| v.iter().zip(probs).map(|(x, q)| x * q).sum::<f64>();
        let means: Vec<f64> = functions.iter().map(|(_, v)| expect(v)).collect();
        for (fi, (fl, fv)) in functions.iter().enumerate() {
            for (gi, (gl, gv)) in functions.iter().enumerate().skip(fi) {
                let joint: f64 = fv.iter().zip(gv).zip(probs).map(|((x, y), q)| x * y * q).sum();
                let margin = joint - means[fi] * means[gi];
                assoc.observe(margin, || {
                    Witness::new(top, p, &top.empty_config()).note(format!("f = {fl}, g = {gl}"))
                });
                instances += 1;
            }
        }
    }
    Ok(CheckReport::finish("fkg", instances, vec![prob, log, assoc], Vec::new()))
}

fn probability_of(table: &MeasureTable, event: &IncreasingEvent) -> f64 {
    table.event_probability_by_code(|c| event.holds_code(c))
}

/// Monotonicity of increasing events along a nested sequence of topologies.
///
/// Graphs with at most `exact_max_edges` edges are enumerated; larger ones are
/// estimated with the edge-only sampler under `sampling` (chain `j` on stream `j`).
/// With `events = None`, every graph `G_i` contributes [`default_events`] over its
/// own edges, tracked along `G_i, G_{i+1}, ...`. Exactly evaluated neighbours are
/// also checked against the embedding relation `μ_m(B) = μ_n(B | new edges off)`.
pub fn check_monotone_nested(
    seq: &[Topology],
    p: &ModelParams,
    events: Option<&[IncreasingEvent]>,
    sampling: &RunSettings,
    exact_max_edges: usize,
) -> Result<CheckReport> {
    if seq.is_empty() {
        return Err(RggmError::Config("nested check needs at least one topology".into()));
    }
    if let Some(w) = seq.windows(2).find(|w| !w[0].is_prefix_of(&w[1])) {
        return Err(RggmError::Config(format!(
            "topologies are not nested: {} edges then {} edges",
            w[0].num_edges(),
            w[1].num_edges()
        )));
    }
    let exact_cap = exact_max_edges.min(MAX_ENUMERATION_EDGES);
    // (start index, event)
    let tracked: Vec<(usize, IncreasingEvent)> = match events {
        Some(list) => {
            let n0 = seq[0].num_edges();
            if let Some(e) = list.iter().find(|e| e.max_edge().is_some_and(|k| k >= n0)) {
                return Err(RggmError::Config(format!(
                    "event {:?} uses edges beyond the first topology",
                    e.label
                )));
            }
            list.iter().map(|e| (0, e.clone())).collect()
        }
        None => seq
            .iter()
            .enumerate()
            .flat_map(|(i, t)| default_events(t.num_edges()).into_iter().map(move |e| (i, e)))
            .collect(),
    };

    // values[j][e] and standard errors for every tracked event alive at j.
    let mut tables: Vec<Option<MeasureTable>> = Vec::with_capacity(seq.len());
    let mut values = vec![vec![f64::NAN; tracked.len()]; seq.len()];
    let mut errors = vec![vec![0.0; tracked.len()]; seq.len()];
    for (j, top) in seq.iter().enumerate() {
        let alive: Vec<usize> = (0..tracked.len()).filter(|&e| tracked[e].0 <= j).collect();
        if top.num_edges() <= exact_cap {
            let table = enumerate(top, p)?;
            for &e in &alive {
                values[j][e] = probability_of(&table, &tracked[e].1);
            }
            tables.push(Some(table));
        } else {
            let mut acc: Vec<BatchMeans> = alive
                .iter()
                .map(|_| BatchMeans::for_length(sampling.retained()))
                .collect();
            drive(top, p, sampling, ChainKind::EdgeOnly, j as u64, |chain| {
                for (slot, &e) in alive.iter().enumerate() {
                    acc[slot].push(if tracked[e].1.holds(&chain.config) { 1.0 } else { 0.0 });
                }
                Ok(())
            })?;
            for (slot, &e) in alive.iter().enumerate() {
                values[j][e] = acc[slot].mean();
                errors[j][e] = acc[slot].standard_error();
            }
            tables.push(None);
        }
    }

    let mut exact = Tracker::margin("nondecreasing (exact)", MARGIN_TOL);
    let mut sampled = Tracker::margin("nondecreasing (sampled, in standard errors)", SAMPLED_SE_FACTOR);
    let mut embedding = Tracker::residual("embedding relation", IDENTITY_TOL);
    let mut instances = 0;
    for j in 0..seq.len().saturating_sub(1) {
        let (small, large) = (&seq[j], &seq[j + 1]);
        for (e, (start, event)) in tracked.iter().enumerate() {
            if *start > j {
                continue;
            }
            let (v0, v1) = (values[j][e], values[j + 1][e]);
            let witness = || {
                Witness::new(large, p, &large.empty_config())
                    .note(format!("{} from graph {start}: step {j} -> {}", event.label, j + 1))
            };
            if tables[j].is_some() && tables[j + 1].is_some() {
                exact.observe(v1 - v0, witness);
            } else {
                let se = errors[j][e].hypot(errors[j + 1][e]);
                let z = if se > 0.0 { (v1 - v0) / se } else if v1 >= v0 { 0.0 } else { f64::NEG_INFINITY };
                sampled.observe(z, witness);
            }
            if let Some(t) = &tables[j + 1] {
                let new_edges = ((1u64 << large.num_edges()) - 1) & !((1u64 << small.num_edges()) - 1);
                let off = t.event_probability_by_code(|c| c & new_edges == 0);
                let both = t.event_probability_by_code(|c| c & new_edges == 0 && event.holds_code(c));
                if tables[j].is_some() {
                    embedding.observe((both / off - v0).abs(), witness);
                }
            }
            instances += 1;
        }
    }

    let trajectories = tracked
        .iter()
        .enumerate()
        .map(|(e, (start, event))| Trajectory {
            event: event.label.clone(),
            start: *start,
            edge_counts: seq[*start..].iter().map(Topology::num_edges).collect(),
            values: values[*start..].iter().map(|v| v[e]).collect(),
            standard_errors: errors[*start..].iter().map(|v| v[e]).collect(),
        })
        .collect();
    Ok(CheckReport::finish(
        "monotone-nested",
        instances,
        vec![exact, sampled, embedding],
        trajectories,
    ))
}

/// Worst decrease margins for `a ≤ b`: `min_k Σ(a)_kk − Σ(b)_kk` with its node,
/// and `min_{k<l} δ_kl(a) − δ_kl(b)` with its pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceMargins {
    pub variance: f64,
    pub variance_node: usize,
    pub gap: f64,
    pub gap_pair: (usize, usize),
}

pub fn variance_margins(top: &Topology, p: &ModelParams, a: &EdgeConfig, b: &EdgeConfig) -> Result<VarianceMargins> {
    top.check_config(a)?;
    top.check_config(b)?;
    if !a.leq(b)? {
        return Err(RggmError::Contract("variance margins need a <= b".into()));
    }
    let (sa, _) = invert_precision(&build_precision(top, a, p)?)?;
    let (sb, _) = invert_precision(&build_precision(top, b, p)?)?;
    let m = top.num_nodes();
    let mut out = VarianceMargins {
        variance: f64::INFINITY,
        variance_node: 0,
        gap: f64::INFINITY,
        gap_pair: (0, 0),
    };
    for k in 0..m {
        let d = sa.get(k, k) - sb.get(k, k);
        if d < out.variance {
            out.variance = d;
            out.variance_node = k;
        }
        for l in k + 1..m {
            let ga = sa.get(k, k) + sa.get(l, l) - 2.0 * sa.get(k, l);
            let gb = sb.get(k, k) + sb.get(l, l) - 2.0 * sb.get(k, l);
            if ga - gb < out.gap {
                out.gap = ga - gb;
                out.gap_pair = (k, l);
            }
        }
    }
    Ok(out)
}

pub fn check_variance_monotone(top: &Topology, p: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut var = Tracker::margin("variances decrease", MARGIN_TOL);
    let mut gap = Tracker::margin("gap variances decrease", MARGIN_TOL);
    let n = top.num_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        let a = random_config(n, &mut rng);
        let b = a.join(&random_config(n, &mut rng))?;
        let r = variance_margins(top, p, &a, &b)?;
        var.observe(r.variance, || Witness::new(top, p, &a).other(&b).nodes(r.variance_node, r.variance_node));
        if top.num_nodes() >= 2 {
            gap.observe(r.gap, || Witness::new(top, p, &a).other(&b).nodes(r.gap_pair.0, r.gap_pair.1));
        }
    }
    Ok(CheckReport::finish("variance-monotone", trials as u64, vec![var, gap], Vec::new()))
}

/// Edge-by-edge decomposition `−log|Σ(a)| = m ln α + Σ_l a_l ln(1 + βδ_l(a^(l−1)))`,
/// where `a^(l)` keeps the first `l` edges of `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct Telescoping {
    /// One summand per edge; zero for absent edges.
    pub summands: Vec<f64>,
    pub offset: f64,
    /// `−log|Σ(a)|` from a fresh factorisation.
    pub direct: f64,
}

impl Telescoping {
    pub fn residual(&self) -> f64 {
        (self.direct - self.offset - self.summands.iter().sum::<f64>()).abs()
    }

    pub fn min_summand(&self) -> Option<f64> {
        self.summands.iter().copied().reduce(f64::min)
    }
}

pub fn telescoping(top: &Topology, p: &ModelParams, a: &EdgeConfig) -> Result<Telescoping> {
    top.check_config(a)?;
    let m = top.num_nodes();
    let mut cs = CovarianceState::isotropic(m, p.alpha());
    let mut summands = vec![0.0; top.num_edges()];
    for k in a.iter_ones() {
        let (i, j) = top.edge(k);
        let delta = cs.rank_one_add(i, j, p.beta())?;
        summands[k] = (p.beta() * delta).ln_1p();
    }
    let direct = -CovarianceState::for_config(top, a, p)?.logdet_sigma();
    Ok(Telescoping {
        summands,
        offset: m as f64 * p.alpha().ln(),
        direct,
    })
}

/// Smallest `E[M_k | F_{k−1}] − M_{k−1}` over all `k` and all atoms of `F_{k−1}`,
/// where `M_k = −log|Σ(A^(k))|` under `μ_A`, with the prefix code that attains it.
pub fn submartingale_margin(table: &MeasureTable) -> (f64, usize, u64) {
    let n = table.topology().num_edges();
    let big_m = |code: u64| -2.0 * table.half_logdet(code);
    // marginal[k][pattern] = P(first k edges equal pattern)
    let mut marginal = vec![table.probs().to_vec()];
    for k in (0..n).rev() {
        let prev = marginal.last().expect("non-empty");
        let next: Vec<f64> = (0..1usize << k).map(|c| prev[c] + prev[c | 1 << k]).collect();
        marginal.push(next);
    }
    marginal.reverse();
    let mut worst = (f64::INFINITY, 0, 0);
    for k in 1..=n {
        let bit = 1u64 << (k - 1);
        for prefix in 0..1u64 << (k - 1) {
            let total = marginal[k - 1][prefix as usize];
            if total <= 0.0 {
                continue;
            }
            let p_on = marginal[k][(prefix | bit) as usize] / total;
            let expected = p_on * big_m(prefix | bit) + (1.0 - p_on) * big_m(prefix);
            let margin = expected - big_m(prefix);
            if margin < worst.0 {
                worst = (margin, k, prefix);
            }
        }
    }
    worst
}

pub fn check_martingale(top: &Topology, p: &ModelParams, trials: usize, seed: u64) -> Result<CheckReport> {
    let mut ident = Tracker::residual("telescoping identity", IDENTITY_TOL);
    let mut terms = Tracker::margin("summands nonnegative", MARGIN_TOL);
    let mut sub = Tracker::margin("sub-martingale (exact)", MARGIN_TOL);
    let n = top.num_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = 0;
    for _ in 0..trials {
        let a = random_config(n, &mut rng);
        let t = telescoping(top, p, &a)?;
        ident.observe(t.residual(), || Witness::new(top, p, &a));
        if let Some(s) = t.min_summand() {
            terms.observe(s, || Witness::new(top, p, &a));
        }
        instances += 1;
    }
    if n <= MARTINGALE_EXACT_MAX_EDGES {
        let table = enumerate(top, p)?;
        let (margin, k, prefix) = submartingale_margin(&table);
        if margin.is_finite() {
            sub.observe(margin, || {
                Witness::new(top, p, &EdgeConfig::from_code(n, prefix)).note(format!("step {k}"))
            });
        }
        instances += (1u64 << n) - 1;
    }
    Ok(CheckReport::finish("martingale", instances, vec![ident, terms, sub], Vec::new()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    All,
    Lemma1,
    Lemma2,
    Prop2,
    Fkg,
    Monotone,
    Variance,
    Martingale,
}

impl Suite {
    pub const NAMES: [&'static str; 8] = [
        "all", "lemma1", "lemma2", "prop2", "fkg", "monotone", "variance", "martingale",
    ];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = RggmError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "lemma1" => Suite::Lemma1,
            "lemma2" => Suite::Lemma2,
            "prop2" => Suite::Prop2,
            "fkg" => Suite::Fkg,
            "monotone" => Suite::Monotone,
            "variance" => Suite::Variance,
            "martingale" => Suite::Martingale,
            _ => {
                return Err(RggmError::Config(format!(
                    "unknown suite {s:?}; expected one of {}",
                    Suite::NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub suite: Suite,
    /// Catalog graphs with more edges than this are skipped.
    pub max_edges: usize,
    pub params: ModelParams,
    pub trials: usize,
    pub seed: u64,
}

impl SuiteOptions {
    pub fn new(suite: Suite, max_edges: usize, params: ModelParams, seed: u64) -> Self {
        Self {
            suite,
            max_edges,
            params,
            trials: 200,
            seed,
        }
    }
}

type Job = Box<dyn Fn(u64) -> Result<CheckReport> + Send + Sync>;

fn tagged(mut r: CheckReport, tag: &str) -> CheckReport {
    r.name = format!("{}[{tag}]", r.name);
    r
}

/// Runs the selected checks concurrently over the catalogs; each check owns an RNG stream.
///
/// Identity and inequality checks use the connected catalog at `params`; the
/// association check uses every small graph over [`fkg_grid`]; the nested check
/// walks paths and stars up to `max_edges` edges.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<CheckReport>> {
    let mut jobs: Vec<Job> = Vec::new();
    let p = opts.params;
    let trials = opts.trials;
    let catalog = connected_catalog(opts.max_edges);
    let add_per_graph = |jobs: &mut Vec<Job>,
                         graphs: &[NamedTopology],
                         f: fn(&Topology, &ModelParams, usize, u64) -> Result<CheckReport>| {
        for g in graphs {
            let g = g.clone();
            jobs.push(Box::new(move |seed| Ok(tagged(f(&g.topology, &p, trials, seed)?, &g.name))));
        }
    };
    if opts.suite.includes(Suite::Lemma1) {
        add_per_graph(&mut jobs, &catalog, check_lemma1);
    }
    if opts.suite.includes(Suite::Lemma2) {
        add_per_graph(&mut jobs, &catalog, check_lemma2);
    }
    if opts.suite.includes(Suite::Variance) {
        add_per_graph(&mut jobs, &catalog, check_variance_monotone);
    }
    if opts.suite.includes(Suite::Martingale) {
        add_per_graph(&mut jobs, &catalog, check_martingale);
    }
    if opts.suite.includes(Suite::Prop2) {
        for g in catalog.iter().filter(|g| g.topology.num_edges() <= PROP2_MAX_EDGES) {
            let g = g.clone();
            jobs.push(Box::new(move |_| Ok(tagged(check_prop2(&g.topology, &p)?, &g.name))));
        }
    }
    if opts.suite.includes(Suite::Fkg) {
        for g in small_graphs(opts.max_edges.min(LATTICE_EXHAUSTIVE_MAX_EDGES)) {
            jobs.push(Box::new(move |seed| Ok(tagged(check_fkg(&g.topology, &fkg_grid(), seed)?, &g.name))));
        }
    }
    if opts.suite.includes(Suite::Monotone) && opts.max_edges >= 1 {
        let top_size = opts.max_edges.min(MAX_ENUMERATION_EDGES).min(12) + 1;
        let sizes: Vec<usize> = (2..=top_size).collect();
        for (kind, label) in [(NestedKind::Path, "paths"), (NestedKind::Star, "stars")] {
            let seq = nested_sequence(kind, &sizes)?;
            jobs.push(Box::new(move |_| {
                let sampling = RunSettings::new(1000);
                Ok(tagged(
                    check_monotone_nested(&seq, &p, None, &sampling, MAX_ENUMERATION_EDGES)?,
                    label,
                ))
            }));
        }
    }
    let mut master = chain_rng(opts.seed, 0);
    let seeds: Vec<u64> = (0..jobs.len()).map(|_| master.next_u64()).collect();
    jobs.par_iter().zip(seeds).map(|(job, seed)| job(seed)).collect()
}

pub fn suite_passed(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
}

/// Human-readable summary, one line per criterion.
pub fn render_table(reports: &[CheckReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:<44} {:>9} {:>11} {:>9}  result",
        "check", "criterion", "instances", "worst", "tol"
    );
    for r in reports {
        for c in &r.criteria {
            let worst = fmt_value(c.value);
            let _ = writeln!(
                out,
                "{:<28} {:<44} {:>9} {:>11} {:>9.1e}  {}",
                r.name,
                c.label,
                r.instances,
                worst,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            );
        }
    }
    let passed = reports.iter().filter(|r| r.passed).count();
    let _ = writeln!(out, "{passed}/{} checks passed", reports.len());
    out
}

/// `1 / (1 + √(1 + βδ))` evaluated from a witness of the one-edge check, for reproduction.
pub fn witness_conditional(w: &Witness) -> Result<f64> {
    let a = w.config()?;
    let edge = w.edge.ok_or_else(|| RggmError::Config("witness has no edge".into()))?;
    let cs = CovarianceState::for_config(&w.topology, &a, &w.params)?;
    let (i, j) = w.topology.edge(edge);
    Ok(conditional_from_gap(cs.delta(i, j)?, w.params.beta()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn p(alpha: f64, beta: f64) -> ModelParams {
        ModelParams::new(alpha, beta).unwrap()
    }

    fn cfg(bits: &str) -> EdgeConfig {
        EdgeConfig::from_bits(&bits.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn lemma1_two_nodes() {
        let top = Topology::path(2);
        // |Q| goes from 1 to 3: log|Σ| drops by log 3 with δ = 2.
        let r = lemma1_residual(&top, &p(1.0, 1.0), &cfg("0"), 0).unwrap();
        assert!(r < 1e-15);
        let rep = check_lemma1(&top, &p(1.0, 1.0), 10, 1).unwrap();
        assert!(rep.passed && rep.instances == 10);
    }

    #[test]
    fn lemma1_beta_zero_is_trivial() {
        let rep = check_lemma1(&Topology::cycle(5).unwrap(), &p(0.7, 0.0), 50, 2).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_residual(), Some(0.0));
    }

    #[test]
    fn lemma1_rejects_present_edge() {
        let err = lemma1_residual(&Topology::path(3), &p(1.0, 1.0), &cfg("10"), 0).unwrap_err();
        assert!(matches!(err, RggmError::Contract(_)));
    }

    #[test]
    fn lemma_checks_on_random_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let top = Topology::random_gnp(12, 0.4, &mut rng);
        for params in [p(1.0, 1.0), p(0.5, 4.0)] {
            let r1 = check_lemma1(&top, &params, 100, 3).unwrap();
            let r2 = check_lemma2(&top, &params, 100, 4).unwrap();
            assert!(r1.passed, "{r1:?}");
            assert!(r2.passed, "{r2:?}");
        }
    }

    #[test]
    fn lemma2_path3_entry() {
        // Adding edge (0,1) to an empty P3 leaves σ'_00 = 2/3; adding (1,2) after gives 5/8.
        let top = Topology::path(3);
        let params = p(1.0, 1.0);
        let mut cs = CovarianceState::for_config(&top, &cfg("00"), &params).unwrap();
        cs.rank_one_add(0, 1, 1.0).unwrap();
        assert_abs_diff_eq!(cs.sigma().get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cs.sigma().get(1, 1), 2.0 / 3.0, epsilon = 1e-15);
        cs.rank_one_add(1, 2, 1.0).unwrap();
        assert_abs_diff_eq!(cs.sigma().get(1, 1), 0.5, epsilon = 1e-15);
        assert!(lemma2_sigma_residual(&top, &params, &cfg("10"), 1).unwrap() < 1e-15);
    }

    #[test]
    fn gap_update_zero_correction() {
        // Nodes 3,4 form a separate component from edge (0,1): the correction vanishes.
        let top = Topology::new(5, [(0, 1), (1, 2), (3, 4)]).unwrap();
        let params = p(1.0, 2.0);
        let a = cfg("011");
        let before = CovarianceState::for_config(&top, &a, &params).unwrap();
        let after = CovarianceState::for_config(&top, &cfg("111"), &params).unwrap();
        assert_abs_diff_eq!(before.delta(3, 4).unwrap(), after.delta(3, 4).unwrap(), epsilon = 1e-15);
        assert!(gap_update_residual(&top, &params, &a, 0, (3, 4)).unwrap() < 1e-15);
    }

    #[test]
    fn prop2_small_cases() {
        let r = check_prop2(&Topology::path(2), &p(1.0, 1.0)).unwrap();
        assert!(r.passed);
        assert_eq!(r.instances, 1);
        let r = check_prop2(&Topology::path(3), &p(1.0, 1.0)).unwrap();
        assert!(r.passed);
        assert_eq!(r.instances, 4);
        let r = check_prop2(&Topology::complete(4), &p(0.5, 4.0)).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn prop2_beta_zero_half() {
        let top = Topology::star(4);
        let params = p(1.0, 0.0);
        for code in 0..8u64 {
            let a = EdgeConfig::from_code(3, code);
            let cs = CovarianceState::for_config(&top, &a, &params).unwrap();
            for k in (0..3).filter(|&k| !a.get(k)) {
                assert_eq!(one_edge_conditional(&cs, &top, &a, k, 0.0).unwrap(), 0.5);
            }
        }
        assert!(check_prop2(&top, &params).unwrap().passed);
    }

    #[test]
    fn prop2_size_cap() {
        assert!(matches!(
            check_prop2(&Topology::path(14), &p(1.0, 1.0)),
            Err(RggmError::Size { .. })
        ));
    }

    #[test]
    fn prop2_witness_reproduces() {
        let top = Topology::cycle(5).unwrap();
        let params = p(2.0, 0.5);
        let rep = check_prop2(&top, &params).unwrap();
        let c = rep.criterion("closed form vs enumeration").unwrap();
        let w = c.witness.as_ref().unwrap();
        let (r, _) = prop2_residuals(&w.topology, &w.params, &w.config().unwrap(), w.edge.unwrap()).unwrap();
        assert_abs_diff_eq!(r, c.value.unwrap(), epsilon = 1e-14);
        let q = witness_conditional(w).unwrap();
        assert!(q > 0.0 && q < 0.5);
    }

    #[test]
    fn lattice_witness_path3() {
        let table = enumerate(&Topology::path(3), &p(1.0, 1.0)).unwrap();
        // |Σ(1,1)||Σ(0,0)| = 1/8 against |Σ(1,0)||Σ(0,1)| = 1/9.
        let (prob, log) = lattice_margins(&table, 0b01, 0b10);
        assert!(prob > 0.0);
        assert_abs_diff_eq!(2.0 * log, (9.0f64 / 8.0).ln(), epsilon = 1e-14);
        let (prob, log) = lattice_margins(&table, 0b01, 0b11);
        assert_eq!(prob, 0.0);
        assert_eq!(log, 0.0);
    }

    #[test]
    fn fkg_small_graph() {
        let rep = check_fkg(&Topology::path(3), &fkg_grid(), 0).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.instances >= 12 * 16);
        let lattice = rep.criterion("lattice condition").unwrap();
        assert!(lattice.value.unwrap() >= -MARGIN_TOL);
    }

    #[test]
    fn fkg_sampled_pairs() {
        let rep = check_fkg(&Topology::cycle(6).unwrap(), &[p(1.0, 4.0)], 5).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn increasing_event_semantics() {
        let e = IncreasingEvent::at_least(vec![0, 2], 2, "both");
        assert!(e.holds(&cfg("101")));
        assert!(!e.holds(&cfg("110")));
        assert!(e.holds_code(0b101));
        assert_eq!(default_events(1).len(), 1);
        assert_eq!(default_events(3).len(), 3 + 3);
    }

    #[test]
    fn nested_paths_edge0() {
        let seq = nested_sequence(NestedKind::Path, &[2, 3]).unwrap();
        let ev = [IncreasingEvent::edge(0)];
        let rep = check_monotone_nested(&seq, &p(1.0, 1.0), Some(&ev), &RunSettings::new(100), 24).unwrap();
        assert!(rep.passed);
        let t = &rep.trajectories[0];
        assert_abs_diff_eq!(t.values[0], 0.366025, epsilon = 1e-6);
        assert_abs_diff_eq!(t.values[1], 0.371136, epsilon = 1e-6);
        let emb = rep.criterion("embedding relation").unwrap();
        assert!(emb.value.unwrap() < 1e-12);
    }

    #[test]
    fn nested_beta_zero_constant() {
        let seq = nested_sequence(NestedKind::Star, &[2, 3, 4, 5]).unwrap();
        let ev = [IncreasingEvent::edge(0)];
        let rep = check_monotone_nested(&seq, &p(1.0, 0.0), Some(&ev), &RunSettings::new(100), 24).unwrap();
        for v in &rep.trajectories[0].values {
            assert_abs_diff_eq!(*v, 0.5, epsilon = 1e-14);
        }
    }

    #[test]
    fn nested_stars_default_events() {
        let seq = nested_sequence(NestedKind::Star, &[2, 3, 4, 5]).unwrap();
        let rep = check_monotone_nested(&seq, &p(1.0, 1.0), None, &RunSettings::new(100), 24).unwrap();
        assert!(rep.passed, "{rep:?}");
        let centre = &rep.trajectories[0];
        assert_eq!(centre.event, "edge 0");
        assert!(centre.values.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn nested_sampled_regime() {
        let seq = nested_sequence(NestedKind::Path, &[3, 4, 5]).unwrap();
        let ev = [IncreasingEvent::edge(0)];
        let settings = RunSettings::new(20_000).with_seed(3);
        let rep = check_monotone_nested(&seq, &p(1.0, 1.0), Some(&ev), &settings, 2).unwrap();
        assert!(rep.passed, "{rep:?}");
        let t = &rep.trajectories[0];
        assert_eq!(t.standard_errors[0], 0.0);
        assert!(t.standard_errors[1] > 0.0);
        assert!(rep.criterion("nondecreasing (sampled, in standard errors)").unwrap().value.is_some());
    }

    #[test]
    fn nested_rejects_non_nested() {
        let seq = vec![Topology::star(4), Topology::path(5)];
        assert!(check_monotone_nested(&seq, &p(1.0, 1.0), None, &RunSettings::new(10), 24).is_err());
    }

    #[test]
    fn variance_path3_empty_vs_full() {
        let top = Topology::path(3);
        let params = p(1.0, 1.0);
        let r = variance_margins(&top, &params, &cfg("00"), &cfg("11")).unwrap();
        // Node 1 drops from 1 to 1/2; node 0 from 1 to 5/8.
        assert_abs_diff_eq!(r.variance, 3.0 / 8.0, epsilon = 1e-14);
        let same = variance_margins(&top, &params, &cfg("10"), &cfg("10")).unwrap();
        assert_eq!(same.variance, 0.0);
        assert_eq!(same.gap, 0.0);
        assert!(variance_margins(&top, &params, &cfg("11"), &cfg("00")).is_err());
    }

    #[test]
    fn variance_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let top = Topology::random_gnp(10, 0.4, &mut rng);
        let rep = check_variance_monotone(&top, &p(1.0, 2.0), 200, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn telescoping_path3_full() {
        let t = telescoping(&Topology::path(3), &p(1.0, 1.0), &cfg("11")).unwrap();
        assert_abs_diff_eq!(t.summands[0], 3.0f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.summands[1], (8.0f64 / 3.0).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(t.direct, 8.0f64.ln(), epsilon = 1e-14);
        assert!(t.residual() < 1e-14);
        let empty = telescoping(&Topology::path(3), &p(1.0, 1.0), &cfg("00")).unwrap();
        assert_eq!(empty.direct, 0.0);
        assert_eq!(empty.residual(), 0.0);
    }

    #[test]
    fn telescoping_needs_offset_when_alpha_not_one() {
        let t = telescoping(&Topology::path(4), &p(2.0, 1.0), &cfg("101")).unwrap();
        assert!(t.residual() < 1e-13);
        assert_abs_diff_eq!(t.offset, 4.0 * 2.0f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn martingale_exhaustive() {
        let rep = check_martingale(&Topology::cycle(6).unwrap(), &p(0.5, 4.0), 100, 1).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.criterion("sub-martingale (exact)").unwrap().value.is_some());
    }

    #[test]
    fn suite_small() {
        let opts = SuiteOptions::new(Suite::All, 3, p(1.0, 1.0), 7);
        let reports = run_suite(&opts).unwrap();
        assert!(suite_passed(&reports), "{}", render_table(&reports));
        assert!(reports.iter().any(|r| r.name.starts_with("fkg[")));
        let again = run_suite(&opts).unwrap();
        assert_eq!(reports, again);
        let table = render_table(&reports);
        assert!(table.contains("PASS"));
    }

    #[test]
    fn suite_names_parse() {
        for name in Suite::NAMES {
            assert!(name.parse::<Suite>().is_ok());
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn combine_keeps_worst() {
        let top = Topology::path(4);
        let a = check_lemma1(&top, &p(1.0, 1.0), 20, 1).unwrap();
        let b = check_lemma1(&top, &p(1.0, 4.0), 20, 2).unwrap();
        let worst = a.max_residual().unwrap().max(b.max_residual().unwrap());
        let c = CheckReport::combine("lemma1", [a, b]);
        assert_eq!(c.instances, 40);
        assert_eq!(c.max_residual(), Some(worst));
    }

    #[test]
    fn failing_tracker_reports_fail() {
        let mut t = Tracker::residual("x", 1e-10);
        t.observe(1e-3, || Witness::new(&Topology::path(2), &p(1.0, 1.0), &cfg("0")));
        let c = t.into_criterion();
        assert!(!c.passed);
        let mut t = Tracker::margin("y", 1e-12);
        t.observe(f64::NAN, || Witness::new(&Topology::path(2), &p(1.0, 1.0), &cfg("0")));
        assert!(!t.into_criterion().passed);
    }
}
