//! Monte Carlo SIR sampler and estimators.
//!
//! `FastPath` samples the scheduled users' distances from their ordered law
//! and draws the interferers of every tier as an independent thinned PPP
//! beyond the serving distance, on the plane rescaled by the biases.
//! `FullNetwork` drops the whole network in a disk, associates every user and
//! reads the voids off the association.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{theta_eff, MetricKind, MetricResult, PowerAllocation, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{associate, derived_stats, sample_deployment, sample_scheduled_distances, served_by, NetworkConfig};
use crate::rng::{substream, user_lane, GEOMETRY_LANE};

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    FastPath,
    FullNetwork,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::FastPath => "fast_path",
            SimMode::FullNetwork => "full_network",
        }
    }
}

impl std::str::FromStr for SimMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast_path" => Ok(SimMode::FastPath),
            "full_network" => Ok(SimMode::FullNetwork),
            other => Err(Error::Spec(format!("unknown simulation mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserSample {
    /// Desired SIR, linear.
    pub gamma: f64,
    /// `S / I`; zero outside JT.
    pub boost_ratio: f64,
    /// Fading of the serving link.
    pub fading: f64,
    pub interference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub users: Vec<UserSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SirSampleBatch {
    pub tier: usize,
    pub scheme: Scheme,
    pub mode: SimMode,
    pub betas: Vec<f64>,
    pub sir_threshold: f64,
    pub records: Vec<TrialRecord>,
}

impl SirSampleBatch {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn group_size(&self) -> usize {
        self.betas.len()
    }

    /// Union of two batches of the same experiment, ordered by trial index.
    pub fn merge(mut self, other: SirSampleBatch) -> Result<SirSampleBatch> {
        if self.tier != other.tier
            || self.scheme != other.scheme
            || self.mode != other.mode
            || self.betas != other.betas
            || self.sir_threshold != other.sir_threshold
        {
            return Err(Error::InvalidConfig("cannot merge batches of different experiments".into()));
        }
        self.records.extend(other.records);
        self.records.sort_by_key(|r| r.trial);
        if let Some(w) = self.records.windows(2).find(|w| w[0].trial == w[1].trial) {
            return Err(Error::InvalidConfig(format!("trial {} appears twice", w[0].trial)));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Points drawn per interfering PPP before the mean tail correction.
    pub interferers: usize,
    /// FullNetwork disk radius; defaults to `15 / sqrt(pi lambda_min)`.
    pub window_radius: Option<f64>,
    /// FullNetwork redraws allowed to find a typical cell with K users.
    pub retry_budget: usize,
    /// Replaces the derived non-void probabilities in FastPath.
    pub nonvoid: Option<Vec<f64>>,
    /// Keep void BSs outside the serving distance as well (FastPath JT).
    pub void_exclusion: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            interferers: 128,
            window_radius: None,
            retry_budget: 10_000,
            nonvoid: None,
            void_exclusion: true,
        }
    }
}

pub fn simulate_sir_samples(
    config: &NetworkConfig,
    alloc: &PowerAllocation,
    m: usize,
    scheme: Scheme,
    mode: SimMode,
    trials: u64,
    seed: u64,
) -> Result<SirSampleBatch> {
    simulate_range(config, alloc, m, scheme, mode, 0..trials, seed, &SimOptions::default())
}

/// Simulates the trials with indices in `range`. Every trial reads only its
/// own substreams, so any partition of the range merges to the same batch.
#[allow(clippy::too_many_arguments)]
pub fn simulate_range(
    config: &NetworkConfig,
    alloc: &PowerAllocation,
    m: usize,
    scheme: Scheme,
    mode: SimMode,
    range: std::ops::Range<u64>,
    seed: u64,
    options: &SimOptions,
) -> Result<SirSampleBatch> {
    config.validate()?;
    config.check_tier(m)?;
    if alloc.len() != config.group_size {
        return Err(Error::InvalidAllocation(format!(
            "{} fractions for K = {}",
            alloc.len(),
            config.group_size
        )));
    }
    if range.is_empty() {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    let records = match mode {
        SimMode::FastPath => {
            let sampler = FastPath::new(config, alloc, m, scheme, options)?;
            range
                .into_par_iter()
                .map(|t| sampler.trial(seed, t))
                .collect::<Vec<_>>()
        }
        SimMode::FullNetwork => {
            let sampler = FullNetwork::new(config, alloc, m, scheme, options)?;
            range
                .into_par_iter()
                .map(|t| sampler.trial(seed, t))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(SirSampleBatch {
        tier: m,
        scheme,
        mode,
        betas: alloc.betas().to_vec(),
        sir_threshold: config.sir_threshold,
        records,
    })
}

/// One interfering PPP in squared scaled distance: points beyond the
/// exclusion radius with a linear density `rate`, received with `gain`.
#[derive(Debug, Clone, Copy)]
struct RadialField {
    rate: f64,
    gain: f64,
}

struct FastPath {
    betas: Vec<f64>,
    signal_gain: f64,
    scaled_total: f64,
    half_alpha: f64,
    active: Vec<RadialField>,
    idle: Vec<RadialField>,
    jt: bool,
    points: usize,
    void_exclusion: bool,
}

impl FastPath {
    fn new(config: &NetworkConfig, alloc: &PowerAllocation, m: usize, scheme: Scheme, options: &SimOptions) -> Result<Self> {
        let stats = derived_stats(config);
        let nonvoid = match &options.nonvoid {
            Some(nu) if nu.len() == config.num_tiers() => nu.clone(),
            Some(nu) => return Err(Error::InvalidConfig(format!("bad non-void override {nu:?}"))),
            None => stats.nonvoid_prob.clone(),
        };
        let delta = 2.0 / config.alpha;
        let field = |share: f64, l: usize| {
            let t = &config.tiers[l];
            RadialField {
                rate: PI * share * t.intensity * t.bias.powf(delta),
                gain: t.power / t.bias,
            }
        };
        let active = (0..config.num_tiers())
            .map(|l| field(nonvoid[l], l))
            .filter(|f| f.rate > 0.0)
            .collect();
        let idle = (0..config.num_tiers())
            .map(|l| field(1.0 - nonvoid[l], l))
            .filter(|f| f.rate > 0.0)
            .collect();
        if options.interferers == 0 {
            return Err(Error::InvalidConfig("need at least one interferer per field".into()));
        }
        Ok(Self {
            betas: alloc.betas().to_vec(),
            signal_gain: config.tiers[m].power / config.tiers[m].bias,
            scaled_total: stats.scaled_total_intensity,
            half_alpha: config.alpha / 2.0,
            active,
            idle,
            jt: scheme == Scheme::CoordinatedJt,
            points: options.interferers,
            void_exclusion: options.void_exclusion,
        })
    }

    fn path_loss(&self, v: f64) -> f64 {
        if self.half_alpha == 2.0 {
            1.0 / (v * v)
        } else {
            v.powf(-self.half_alpha)
        }
    }

    /// Faded power summed over a radial field beyond `start`.
    fn field_power(&self, field: &RadialField, start: f64, rng: &mut ChaCha8Rng) -> f64 {
        let mut v = start;
        let mut total = 0.0;
        for _ in 0..self.points {
            let gap: f64 = Exp1.sample(rng);
            v += gap / field.rate;
            let h: f64 = Exp1.sample(rng);
            total += h * self.path_loss(v);
        }
        // Mean of the points beyond the last one drawn.
        let tail = field.rate * v.powf(1.0 - self.half_alpha) / (self.half_alpha - 1.0);
        field.gain * (total + tail)
    }

    /// User `k` at squared scaled distance `v`; every draw comes from `rng`,
    /// which is the user's own lane.
    fn user_sample(&self, k: usize, v: f64, rng: &mut ChaCha8Rng) -> UserSample {
        let fading: f64 = Exp1.sample(rng);
        let interference: f64 = self.active.iter().map(|f| self.field_power(f, v, rng)).sum();
        let boost = if self.jt {
            let start = if self.void_exclusion { v } else { 0.0 };
            self.idle.iter().map(|f| self.field_power(f, start, rng)).sum()
        } else {
            0.0
        };
        let signal = self.signal_gain * fading * self.path_loss(v);
        UserSample {
            gamma: self.betas[k] * signal / interference,
            boost_ratio: boost / interference,
            fading,
            interference,
        }
    }

    fn trial(&self, seed: u64, trial: u64) -> TrialRecord {
        let mut geo = substream(seed, trial, GEOMETRY_LANE);
        let dist = sample_scheduled_distances(self.betas.len(), self.scaled_total, &mut geo);
        let users = dist
            .iter()
            .enumerate()
            .map(|(k, &v)| self.user_sample(k, v, &mut substream(seed, trial, user_lane(k))))
            .collect();
        TrialRecord { trial, users }
    }
}

struct FullNetwork {
    config: NetworkConfig,
    betas: Vec<f64>,
    tier: usize,
    jt: bool,
    window: f64,
    retries: usize,
}

impl FullNetwork {
    fn new(config: &NetworkConfig, alloc: &PowerAllocation, m: usize, scheme: Scheme, options: &SimOptions) -> Result<Self> {
        let window = options.window_radius.unwrap_or_else(|| config.default_window_radius());
        Ok(Self {
            config: config.clone(),
            betas: alloc.betas().to_vec(),
            tier: m,
            jt: scheme == Scheme::CoordinatedJt,
            window,
            retries: options.retry_budget.max(1),
        })
    }

    fn trial(&self, seed: u64, trial: u64) -> Result<TrialRecord> {
        let k_needed = self.betas.len();
        let mut geo = substream(seed, trial, GEOMETRY_LANE);
        for _ in 0..self.retries {
            let mut deployment = sample_deployment(&self.config, self.window, &mut geo)?;
            // Typical BS of the tier at the origin.
            deployment.bs_points[self.tier].insert(0, [0.0, 0.0]);
            if served_by(&deployment, &self.config, self.tier, 0)?.len() < k_needed {
                continue;
            }
            let map = associate(&deployment, &self.config)?;
            let members = &map.users_of[self.tier][0];
            let mut chosen: Vec<usize> = rand::seq::index::sample(&mut geo, members.len(), k_needed)
                .into_iter()
                .map(|i| members[i])
                .collect();
            let norm2 = |i: usize| {
                let p = deployment.user_points[i];
                p[0] * p[0] + p[1] * p[1]
            };
            chosen.sort_by(|&a, &b| norm2(a).total_cmp(&norm2(b)).then(a.cmp(&b)));
            let flags = map.nonvoid_flags();
            let alpha = self.config.alpha;
            let users = chosen
                .iter()
                .enumerate()
                .map(|(k, &u)| {
                    let mut rng = substream(seed, trial, user_lane(k));
                    let at = deployment.user_points[u];
                    let fading: f64 = Exp1.sample(&mut rng);
                    let mut interference = 0.0;
                    let mut boost = 0.0;
                    for (l, pts) in deployment.bs_points.iter().enumerate() {
                        let power = self.config.tiers[l].power;
                        for (i, p) in pts.iter().enumerate() {
                            if l == self.tier && i == 0 {
                                continue;
                            }
                            let h: f64 = Exp1.sample(&mut rng);
                            let d2 = (p[0] - at[0]).powi(2) + (p[1] - at[1]).powi(2);
                            let rx = power * h * path_loss(d2, alpha);
                            if flags[l][i] {
                                interference += rx;
                            } else if self.jt {
                                boost += rx;
                            }
                        }
                    }
                    let signal = self.config.tiers[self.tier].power * fading * path_loss(norm2(u), alpha);
                    if interference == 0.0 {
                        // An isolated cell: treat as interference-free but finite.
                        interference = f64::MIN_POSITIVE;
                    }
                    UserSample {
                        gamma: self.betas[k] * signal / interference,
                        boost_ratio: boost / interference,
                        fading,
                        interference,
                    }
                })
                .collect();
            return Ok(TrialRecord { trial, users });
        }
        Err(Error::RetryBudgetExhausted {
            needed: k_needed,
            attempts: self.retries,
        })
    }
}

/// `d^{-alpha}` from the squared distance.
fn path_loss(d2: f64, alpha: f64) -> f64 {
    if alpha == 4.0 {
        1.0 / (d2 * d2)
    } else {
        d2.powf(-alpha / 2.0)
    }
}

/// Decode condition `l` for user `k`; under JT the farthest user's
/// condition also collects the void-BS boost.
fn condition_holds(betas: &[f64], theta: f64, jt: bool, k: usize, l: usize, s: &UserSample) -> bool {
    let n = betas.len();
    let below: f64 = betas[..l].iter().sum();
    let g = s.gamma / betas[k];
    let boost = if jt && l == n - 1 { s.boost_ratio } else { 0.0 };
    betas[l] * g + boost >= theta * (below * g + 1.0)
}

fn check_batch(batch: &SirSampleBatch, alloc: &PowerAllocation) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty sample batch".into()));
    }
    if batch.betas != alloc.betas() {
        return Err(Error::InvalidAllocation(format!(
            "batch was drawn with {:?}, asked for {:?}",
            batch.betas,
            alloc.betas()
        )));
    }
    Ok(())
}

/// Wilson score interval at 95%: `(center, half-width)`.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let p = successes as f64 / n_f;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z95 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    (center, half)
}

/// Fraction of trials in which user `k` meets every decode condition
/// `l = k..K`, with 95% Wilson half-widths.
pub fn estimate_coverage(batch: &SirSampleBatch, alloc: &PowerAllocation, theta: f64, scheme: Scheme) -> Result<MetricResult> {
    check_batch(batch, alloc)?;
    let betas = alloc.betas();
    let n = betas.len();
    let jt = scheme == Scheme::CoordinatedJt;
    let mut values = Vec::with_capacity(n);
    let mut halves = Vec::with_capacity(n);
    for k in 0..n {
        let hits = batch
            .records
            .iter()
            .filter(|r| (k..n).all(|l| condition_holds(betas, theta, jt, k, l, &r.users[k])))
            .count();
        values.push(Some(hits as f64 / batch.len() as f64));
        halves.push(wilson_interval(hits, batch.len()).1);
    }
    Ok(MetricResult {
        per_user: values,
        kind: MetricKind::Simulated,
        ci_halfwidth: Some(halves),
    })
}

/// Mean link rate (nats/Hz) per user, conditioned on the user cancelling
/// the farther users' signals; `None` when that never happens.
pub fn estimate_throughput(batch: &SirSampleBatch, alloc: &PowerAllocation, scheme: Scheme) -> Result<MetricResult> {
    check_batch(batch, alloc)?;
    let betas = alloc.betas();
    let n = betas.len();
    let theta = batch.sir_threshold;
    let jt = scheme == Scheme::CoordinatedJt;
    let mut values = Vec::with_capacity(n);
    let mut halves = Vec::with_capacity(n);
    for k in 0..n {
        let rates: Vec<f64> = batch
            .records
            .iter()
            .map(|r| &r.users[k])
            .filter(|s| cancels_farther(betas, theta, jt, k, s))
            .map(|s| link_rate(betas, jt, k, s))
            .collect();
        match mean_and_half(&rates) {
            Some((mean, half)) => {
                values.push(Some(mean));
                halves.push(half);
            }
            None => {
                values.push(None);
                halves.push(f64::NAN);
            }
        }
    }
    Ok(MetricResult {
        per_user: values,
        kind: MetricKind::Simulated,
        ci_halfwidth: Some(halves),
    })
}

/// Whether user `k` cancels the signals its rate is conditioned on.
fn cancels_farther(betas: &[f64], theta: f64, jt: bool, k: usize, s: &UserSample) -> bool {
    let n = betas.len();
    if k + 1 == n {
        return true;
    }
    // Under JT the users below K-1 rely on the boost for the farthest
    // signal and only check the intermediate ones.
    let last = if jt && k + 2 < n { n - 1 } else { n };
    (k + 1..last).all(|l| condition_holds(betas, theta, jt, k, l, s))
}

fn link_rate(betas: &[f64], jt: bool, k: usize, s: &UserSample) -> f64 {
    let n = betas.len();
    let below: f64 = betas[..k].iter().sum();
    let g = s.gamma / betas[k];
    let boost = if jt && k + 1 == n { s.boost_ratio } else { 0.0 };
    ((s.gamma + boost) / (below * g + 1.0)).ln_1p()
}

/// Sample mean and 95% normal half-width.
fn mean_and_half(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let count = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / count;
    let var = if xs.len() > 1 {
        xs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (count - 1.0)
    } else {
        0.0
    };
    Some((mean, Z95 * (var / count).sqrt()))
}

/// Per-cell estimates: mean coverage over the K users and the sum of the
/// delivered rates (zero whenever SIC fails).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub coverage: f64,
    pub coverage_ci95: f64,
    pub throughput: f64,
    pub throughput_ci95: f64,
}

pub fn estimate_cell(batch: &SirSampleBatch, alloc: &PowerAllocation, theta: f64, scheme: Scheme) -> Result<CellEstimate> {
    check_batch(batch, alloc)?;
    let betas = alloc.betas();
    let n = betas.len();
    let jt = scheme == Scheme::CoordinatedJt;
    let mut covered = Vec::with_capacity(batch.len());
    let mut delivered = Vec::with_capacity(batch.len());
    for r in &batch.records {
        let hits = (0..n)
            .filter(|&k| (k..n).all(|l| condition_holds(betas, theta, jt, k, l, &r.users[k])))
            .count();
        covered.push(hits as f64 / n as f64);
        delivered.push(
            (0..n)
                .filter(|&k| cancels_farther(betas, theta, jt, k, &r.users[k]))
                .map(|k| link_rate(betas, jt, k, &r.users[k]))
                .sum(),
        );
    }
    let (coverage, coverage_ci95) = mean_and_half(&covered).expect("non-empty batch");
    let (throughput, throughput_ci95) = mean_and_half(&delivered).expect("non-empty batch");
    Ok(CellEstimate {
        coverage,
        coverage_ci95,
        throughput,
        throughput_ci95,
    })
}

/// Sample threshold that user `k` must clear to cancel the farther users,
/// per the non-coordinated chain; used by tests and diagnostics.
pub fn sic_gamma_threshold(alloc: &PowerAllocation, theta: f64, k: usize) -> Result<f64> {
    let n = alloc.len();
    if k + 1 >= n {
        return Ok(0.0);
    }
    Ok(alloc.beta(k) * theta_eff(alloc, theta, k + 1, n - 1)?)
}

/// Squared scaled distance from a user at the origin to its serving BS,
/// read off a full deployment with the user dropped at the origin.
pub fn serving_distance_from_deployment<R: Rng + ?Sized>(config: &NetworkConfig, window: f64, rng: &mut R) -> Result<f64> {
    let mut deployment = sample_deployment(config, window, rng)?;
    deployment.user_points.insert(0, [0.0, 0.0]);
    let map = associate(&deployment, config)?;
    let (l, i) = map.serving[0];
    let p = deployment.bs_points[l][i];
    let d2 = p[0] * p[0] + p[1] * p[1];
    Ok(d2 * config.tiers[l].bias.powf(-2.0 / config.alpha))
}

/// Ordered squared scaled distances of K independent users, each extracted
/// from its own full deployment.
pub fn extracted_scheduled_distances<R: Rng + ?Sized>(config: &NetworkConfig, window: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut d = (0..config.group_size)
        .map(|_| serving_distance_from_deployment(config, window, rng))
        .collect::<Result<Vec<_>>>()?;
    d.sort_by(f64::total_cmp);
    Ok(d)
}
