//! MCMC samplers targeting the model.
//!
//! * [`ChainKind::Coupled`] alternates `A | x` (independent logistic edges)
//!   and `X | a ~ N(0, Σ(a))`: the network dynamics, i.e. a two-block Gibbs sampler
//!   on `μ(a, x)`.
//! * [`ChainKind::EdgeOnly`] is a single-site heat bath on the edge marginal
//!   `μ_A`, using the closed-form one-edge conditional and O(m²) rank-one
//!   maintenance of Σ.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RggmError};
use crate::graph::{EdgeConfig, Topology};
use crate::linalg::{build_precision, Cholesky, CovarianceState, DEFAULT_REFRESH_PERIOD};
use crate::model::{conditional_from_gap, edge_on_probability, ModelParams, NodeVector};

/// Largest edge count for which run summaries carry a full configuration histogram.
pub const HISTOGRAM_MAX_EDGES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainKind {
    Coupled,
    #[serde(rename = "edges")]
    EdgeOnly,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanOrder {
    /// Canonical edge order.
    #[default]
    Systematic,
    /// `n` uniformly random edge picks per sweep, with replacement.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSettings {
    pub sweeps: u64,
    pub burnin: u64,
    pub thin: u64,
    pub seed: u64,
    pub scan: ScanOrder,
    pub refresh_period: usize,
}

impl RunSettings {
    /// Defaults: burn-in 10% of sweeps, thin 1, seed 0, systematic scan, refresh every 64 flips.
    pub fn new(sweeps: u64) -> Self {
        Self {
            sweeps,
            burnin: sweeps / 10,
            thin: 1,
            seed: 0,
            scan: ScanOrder::Systematic,
            refresh_period: DEFAULT_REFRESH_PERIOD,
        }
    }

    /// Settings whose retained sample count is exactly `retained` after `burnin` sweeps.
    pub fn retaining(retained: u64, burnin: u64, thin: u64) -> Self {
        Self {
            sweeps: burnin + retained * thin,
            burnin,
            thin,
            ..Self::new(0)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_scan(mut self, scan: ScanOrder) -> Self {
        self.scan = scan;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.thin == 0 {
            return Err(RggmError::Config("sweeps and thin must be positive".into()));
        }
        if self.burnin >= self.sweeps {
            return Err(RggmError::Config(format!(
                "burn-in ({}) must be smaller than sweeps ({})",
                self.burnin, self.sweeps
            )));
        }
        if self.refresh_period == 0 {
            return Err(RggmError::Config("refresh period must be at least 1".into()));
        }
        if self.retained() == 0 {
            return Err(RggmError::Config("settings retain no samples".into()));
        }
        Ok(())
    }

    /// Number of post-burn-in steps that are kept.
    pub fn retained(&self) -> u64 {
        self.sweeps.saturating_sub(self.burnin) / self.thin.max(1)
    }
}

/// Independent generator for chain `stream` under a master seed.
pub fn chain_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// State of one chain: `(A^(t), X^(t))`, the covariance of `A^(t)` and the generator.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub config: EdgeConfig,
    /// Node attributes; `None` for edge-only chains.
    pub x: Option<NodeVector>,
    pub cov: CovarianceState,
    pub rng: ChaCha8Rng,
    pub t: u64,
}

/// Empty graph with `X^(0) ~ N(0, α⁻¹ I)`, on stream 0 of `seed`.
pub fn init_chain(top: &Topology, p: &ModelParams, seed: u64) -> Result<ChainState> {
    init_chain_on_stream(top, p, seed, 0)
}

pub fn init_chain_on_stream(top: &Topology, p: &ModelParams, seed: u64, stream: u64) -> Result<ChainState> {
    let mut rng = chain_rng(seed, stream);
    let sd = p.alpha().recip().sqrt();
    let x = (0..top.num_nodes())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(ChainState {
        config: top.empty_config(),
        x: Some(NodeVector::new(x)?),
        cov: CovarianceState::isotropic(top.num_nodes(), p.alpha()),
        rng,
        t: 0,
    })
}

/// One step of the coupled dynamics: every edge from `μ(a | x)`, then `x ~ N(0, Σ(a))`.
pub fn coupled_step(chain: &mut ChainState, top: &Topology, p: &ModelParams) -> Result<usize> {
    let x = chain
        .x
        .as_ref()
        .ok_or_else(|| RggmError::Config("coupled step needs node values".into()))?
        .as_slice();
    let mut changed = 0;
    for (k, &(i, j)) in top.edges().iter().enumerate() {
        let on = chain.rng.random::<f64>() < edge_on_probability((x[i] - x[j]).powi(2), p.beta());
        if on != chain.config.get(k) {
            chain.config.set(k, on);
            changed += 1;
        }
    }
    let q = build_precision(top, &chain.config, p)?;
    let chol = Cholesky::factor(&q)?;
    let mut z: Vec<f64> = (0..top.num_nodes())
        .map(|_| chain.rng.sample::<f64, _>(StandardNormal))
        .collect();
    chol.solve_upper_in_place(&mut z);
    let period = chain.cov.refresh_period();
    chain.cov = CovarianceState::from_factor(q, &chol).with_refresh_period(period)?;
    chain.x = Some(NodeVector::new(z)?);
    chain.t += 1;
    Ok(changed)
}

/// One heat-bath sweep over the edges of `μ_A`; returns the number of edges that changed.
///
/// For a present edge the gap without it follows from the gap with it,
/// `δ = δ' / (1 − βδ')`, so Σ is only touched when an edge actually flips.
pub fn edge_sweep(chain: &mut ChainState, top: &Topology, p: &ModelParams, scan: ScanOrder) -> Result<usize> {
    let n = top.num_edges();
    let mut changed = 0;
    for step in 0..n {
        let k = match scan {
            ScanOrder::Systematic => step,
            ScanOrder::Random => chain.rng.random_range(0..n),
        };
        if heat_bath_edge(chain, top, p, k)? {
            changed += 1;
        }
    }
    chain.t += 1;
    Ok(changed)
}

fn heat_bath_edge(chain: &mut ChainState, top: &Topology, p: &ModelParams, k: usize) -> Result<bool> {
    let (i, j) = top.edge(k);
    let beta = p.beta();
    let present = chain.config.get(k);
    let q = if beta == 0.0 {
        0.5
    } else {
        let delta_off = if present {
            let denom = chain.cov.removal_denominator(i, j, beta)?;
            chain.cov.gap(i, j) / denom
        } else {
            chain.cov.gap(i, j)
        };
        conditional_from_gap(delta_off, beta)
    };
    let on = chain.rng.random::<f64>() < q;
    if on == present {
        return Ok(false);
    }
    if on {
        chain.cov.rank_one_add(i, j, beta)?;
    } else {
        chain.cov.rank_one_remove(i, j, beta)?;
    }
    chain.config.set(k, on);
    Ok(true)
}

/// One retained row of a sample stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub t: u64,
    pub config_bits_hex: String,
    pub logdet_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
}

/// Online batch-means accumulator for one scalar series of known length.
#[derive(Clone, Debug)]
pub struct BatchMeans {
    batch_size: u64,
    current: f64,
    in_batch: u64,
    batch_means: Vec<f64>,
    count: u64,
    sum: f64,
    sum_sq: f64,
}

impl BatchMeans {
    /// Batches of `floor(sqrt(expected_len))` samples.
    pub fn for_length(expected_len: u64) -> Self {
        Self::with_batch_size(((expected_len as f64).sqrt().floor() as u64).max(1))
    }

    pub fn with_batch_size(batch_size: u64) -> Self {
        Self {
            batch_size: batch_size.max(1),
            current: 0.0,
            in_batch: 0,
            batch_means: Vec::new(),
            count: 0,
            sum: 0.0,
            sum_sq: 0.0,
        }
    }

    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
        self.current += v;
        self.in_batch += 1;
        if self.in_batch == self.batch_size {
            self.batch_means.push(self.current / self.batch_size as f64);
            self.current = 0.0;
            self.in_batch = 0;
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    /// Plain sample variance (divisor `count`).
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        (self.sum_sq / self.count as f64 - mean * mean).max(0.0)
    }

    /// Standard error of the mean from the spread of complete batch means.
    pub fn standard_error(&self) -> f64 {
        let b = self.batch_means.len();
        if b < 2 {
            return f64::NAN;
        }
        let mean = self.batch_means.iter().sum::<f64>() / b as f64;
        let var = self.batch_means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64;
        (var / b as f64).sqrt()
    }

    /// `variance / SE²`, capped at the sample count.
    pub fn effective_sample_size(&self) -> f64 {
        let se = self.standard_error();
        let n = self.count as f64;
        if !se.is_finite() {
            return f64::NAN;
        }
        if se == 0.0 {
            return n;
        }
        (self.variance() / (se * se)).min(n)
    }
}

/// Summary of one run (or several merged runs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub kind: ChainKind,
    pub settings: RunSettings,
    pub retained: u64,
    pub edge_marginals: Vec<f64>,
    pub edge_marginal_se: Vec<f64>,
    pub ess_per_edge: Vec<f64>,
    pub mean_logdet: f64,
    pub mean_logdet_se: f64,
    /// Per-node variance of X; coupled chains only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_variance_estimates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_variance_se: Option<Vec<f64>>,
    /// Empirical frequency of each configuration code, for `n <= HISTOGRAM_MAX_EDGES`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_frequencies: Option<Vec<f64>>,
    /// Fraction of single-edge updates that changed the edge.
    pub flip_rate: f64,
}

impl SampleSummary {
    /// Sample-count weighted merge; associative up to floating-point rounding.
    pub fn merge(&self, other: &SampleSummary) -> Result<SampleSummary> {
        if self.kind != other.kind || self.edge_marginals.len() != other.edge_marginals.len() {
            return Err(RggmError::Config("cannot merge summaries of different runs".into()));
        }
        let (n1, n2) = (self.retained as f64, other.retained as f64);
        let total = n1 + n2;
        let mean = |a: f64, b: f64| (n1 * a + n2 * b) / total;
        let se = |a: f64, b: f64| ((n1 * a).powi(2) + (n2 * b).powi(2)).sqrt() / total;
        let zip = |a: &[f64], b: &[f64], f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        };
        let zip_opt = |a: &Option<Vec<f64>>, b: &Option<Vec<f64>>, f: &dyn Fn(f64, f64) -> f64| match (a, b) {
            (Some(a), Some(b)) => Some(zip(a, b, f)),
            _ => None,
        };
        Ok(SampleSummary {
            kind: self.kind,
            settings: self.settings.clone(),
            retained: self.retained + other.retained,
            edge_marginals: zip(&self.edge_marginals, &other.edge_marginals, &mean),
            edge_marginal_se: zip(&self.edge_marginal_se, &other.edge_marginal_se, &se),
            ess_per_edge: zip(&self.ess_per_edge, &other.ess_per_edge, &|a, b| a + b),
            mean_logdet: mean(self.mean_logdet, other.mean_logdet),
            mean_logdet_se: se(self.mean_logdet_se, other.mean_logdet_se),
            x_variance_estimates: zip_opt(&self.x_variance_estimates, &other.x_variance_estimates, &mean),
            x_variance_se: zip_opt(&self.x_variance_se, &other.x_variance_se, &se),
            config_frequencies: zip_opt(&self.config_frequencies, &other.config_frequencies, &mean),
            flip_rate: mean(self.flip_rate, other.flip_rate),
        })
    }

    /// Total variation distance between the empirical histogram and `probs`.
    pub fn total_variation(&self, probs: &[f64]) -> Option<f64> {
        let freq = self.config_frequencies.as_ref()?;
        if freq.len() != probs.len() {
            return None;
        }
        Some(0.5 * freq.iter().zip(probs).map(|(a, b)| (a - b).abs()).sum::<f64>())
    }
}

struct Accumulator {
    edges: Vec<BatchMeans>,
    logdet: BatchMeans,
    x_var: Option<Vec<BatchMeans>>,
    x_mean: Option<Vec<f64>>,
    histogram: Option<Vec<u64>>,
}

impl Accumulator {
    fn new(top: &Topology, kind: ChainKind, retained: u64) -> Self {
        let n = top.num_edges();
        let m = top.num_nodes();
        let coupled = kind == ChainKind::Coupled;
        Self {
            edges: (0..n).map(|_| BatchMeans::for_length(retained)).collect(),
            logdet: BatchMeans::for_length(retained),
            x_var: coupled.then(|| (0..m).map(|_| BatchMeans::for_length(retained)).collect()),
            x_mean: coupled.then(|| vec![0.0; m]),
            histogram: (n <= HISTOGRAM_MAX_EDGES).then(|| vec![0; 1 << n]),
        }
    }

    fn record(&mut self, chain: &ChainState) {
        for (k, acc) in self.edges.iter_mut().enumerate() {
            acc.push(if chain.config.get(k) { 1.0 } else { 0.0 });
        }
        self.logdet.push(chain.cov.logdet_sigma());
        if let (Some(acc), Some(mean), Some(x)) = (&mut self.x_var, &mut self.x_mean, &chain.x) {
            for ((a, s), v) in acc.iter_mut().zip(mean.iter_mut()).zip(x.as_slice()) {
                a.push(v * v);
                *s += v;
            }
        }
        if let Some(h) = &mut self.histogram {
            h[chain.config.code().expect("small configs have codes") as usize] += 1;
        }
    }
}

/// Destination for retained rows, one JSON object per line.
pub struct RecordSink<'a> {
    pub writer: &'a mut dyn Write,
    /// Include node values (coupled chains only carry them).
    pub with_x: bool,
}

impl<'a> RecordSink<'a> {
    pub fn new(writer: &'a mut dyn Write) -> Self {
        Self { writer, with_x: true }
    }

    pub fn without_x(mut self) -> Self {
        self.with_x = false;
        self
    }
}

/// Runs one chain on stream 0 of `settings.seed`, optionally streaming retained rows as JSONL.
pub fn run(
    top: &Topology,
    p: &ModelParams,
    settings: &RunSettings,
    kind: ChainKind,
    sink: Option<RecordSink<'_>>,
) -> Result<SampleSummary> {
    run_on_stream(top, p, settings, kind, 0, sink)
}

pub fn run_on_stream(
    top: &Topology,
    p: &ModelParams,
    settings: &RunSettings,
    kind: ChainKind,
    stream: u64,
    mut sink: Option<RecordSink<'_>>,
) -> Result<SampleSummary> {
    settings.validate()?;
    let mut acc = Accumulator::new(top, kind, settings.retained());
    let counts = drive(top, p, settings, kind, stream, |chain| {
        acc.record(chain);
        if let Some(sink) = sink.as_mut() {
            let record = SampleRecord {
                t: chain.t,
                config_bits_hex: chain.config.to_hex(),
                logdet_sigma: chain.cov.logdet_sigma(),
                x: chain
                    .x
                    .as_ref()
                    .filter(|_| sink.with_x)
                    .map(|x| x.as_slice().to_vec()),
            };
            serde_json::to_writer(&mut *sink.writer, &record)?;
            sink.writer.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let kept = counts.retained;
    let x_variance = acc.x_var.as_ref().zip(acc.x_mean.as_ref()).map(|(v, mean)| {
        v.iter()
            .zip(mean)
            .map(|(a, s)| {
                let mu = s / kept as f64;
                a.mean() - mu * mu
            })
            .collect::<Vec<_>>()
    });
    Ok(SampleSummary {
        kind,
        settings: settings.clone(),
        retained: kept,
        edge_marginals: acc.edges.iter().map(BatchMeans::mean).collect(),
        edge_marginal_se: acc.edges.iter().map(BatchMeans::standard_error).collect(),
        ess_per_edge: acc.edges.iter().map(BatchMeans::effective_sample_size).collect(),
        mean_logdet: acc.logdet.mean(),
        mean_logdet_se: acc.logdet.standard_error(),
        x_variance_estimates: x_variance,
        x_variance_se: acc.x_var.as_ref().map(|v| v.iter().map(BatchMeans::standard_error).collect()),
        config_frequencies: acc
            .histogram
            .map(|h| h.into_iter().map(|c| c as f64 / kept as f64).collect()),
        flip_rate: counts.flip_rate(),
    })
}

/// Bookkeeping returned by [`drive`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DriveCounts {
    pub retained: u64,
    pub edge_updates: u64,
    pub edge_changes: u64,
}

impl DriveCounts {
    pub fn flip_rate(&self) -> f64 {
        if self.edge_updates == 0 {
            0.0
        } else {
            self.edge_changes as f64 / self.edge_updates as f64
        }
    }
}

/// Runs a chain under `settings`, handing every retained state to `observe`.
pub fn drive(
    top: &Topology,
    p: &ModelParams,
    settings: &RunSettings,
    kind: ChainKind,
    stream: u64,
    mut observe: impl FnMut(&ChainState) -> Result<()>,
) -> Result<DriveCounts> {
    settings.validate()?;
    let mut chain = init_chain_on_stream(top, p, settings.seed, stream)?;
    chain.cov = chain.cov.with_refresh_period(settings.refresh_period)?;
    if kind == ChainKind::EdgeOnly {
        chain.x = None;
    }
    let retained = settings.retained();
    let mut counts = DriveCounts::default();
    while chain.t < settings.sweeps {
        counts.edge_changes += match kind {
            ChainKind::Coupled => coupled_step(&mut chain, top, p)?,
            ChainKind::EdgeOnly => edge_sweep(&mut chain, top, p, settings.scan)?,
        } as u64;
        counts.edge_updates += top.num_edges() as u64;
        let past_burnin = chain.t > settings.burnin;
        if past_burnin && (chain.t - settings.burnin) % settings.thin == 0 && counts.retained < retained {
            counts.retained += 1;
            observe(&chain)?;
        }
    }
    Ok(counts)
}

/// Runs `chains` independent chains concurrently (stream `c` for chain `c`).
pub fn run_chains(
    top: &Topology,
    p: &ModelParams,
    settings: &RunSettings,
    kind: ChainKind,
    chains: usize,
) -> Result<Vec<SampleSummary>> {
    (0..chains as u64)
        .into_par_iter()
        .map(|c| run_on_stream(top, p, settings, kind, c, None))
        .collect()
}

/// Merges summaries in the given order.
pub fn merge_all(summaries: &[SampleSummary]) -> Result<SampleSummary> {
    let (first, rest) = summaries
        .split_first()
        .ok_or_else(|| RggmError::Config("no summaries to merge".into()))?;
    rest.iter().try_fold(first.clone(), |acc, s| acc.merge(s))
}
