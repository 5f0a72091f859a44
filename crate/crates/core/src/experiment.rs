//! Declarative experiments: a TOML spec with one swept variable, executed
//! into a sorted result table with provenance.
//!
//! CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `sweep_variable` | swept quantity with its unit, e.g. `tier2_intensity_per_m2` |
//! | `sweep_value` | value of the swept quantity |
//! | `tier` | 1-based tier index |
//! | `user` | 1-based user index (nearest first); `0` is the cell aggregate |
//! | `scheme` | `non_coordinated` or `coordinated_jt` |
//! | `source` | `analytic` or `simulated` |
//! | `betas` | power fractions joined by `;` |
//! | `coverage_prob` | coverage probability (cell rows: mean over users) |
//! | `coverage_ci95` | 95% half-width, simulated rows only |
//! | `throughput_nats_per_hz` | link throughput (cell rows: delivered sum) |
//! | `throughput_ci95` | 95% half-width, simulated rows only |
//! | `trials` | Monte Carlo trials, 0 for analytic rows |
//! | `seed` | master seed |
//! | `config_hash` | SHA-256 of the resolved spec |
//! | `tool_version` | crate version |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{Analytics, PowerAllocation, Scheme};
use crate::error::{Error, Result};
use crate::geometry::{NetworkConfig, TierParams};
use crate::montecarlo::{estimate_cell, estimate_coverage, estimate_throughput, simulate_range, SimMode, SimOptions};
use crate::poweropt::{self, FeasibleRegion, Method, Objective};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const RECIPES: [&str; 4] = ["fig1", "fig2", "fig3", "fig4"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// One row per user.
    Link,
    /// One aggregate row per cell (`user = 0`).
    Cell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum AllocSpec {
    Fixed {
        betas: Vec<f64>,
    },
    Optimize {
        optimize: Objective,
        #[serde(default = "default_method")]
        method: Method,
        #[serde(default)]
        resolution: Option<f64>,
    },
}

fn default_method() -> Method {
    Method::PatternSearch
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// BS intensity of `tier` (per m²).
    TierIntensity,
    /// User intensity μ (per m²).
    UserIntensity,
    /// Linear SIR threshold θ.
    SirThreshold,
    /// Power fraction of the farthest user; the others keep their ratios.
    BetaLast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub variable: SweepVariable,
    /// 1-based tier for `tier_intensity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<Range>,
}

impl Sweep {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let values = match (&self.values, &self.range) {
            (Some(v), None) => v.clone(),
            (None, Some(r)) => {
                if r.points == 0 {
                    return Err(Error::Spec("sweep range needs at least one point".into()));
                }
                if r.points == 1 {
                    vec![r.start]
                } else {
                    (0..r.points)
                        .map(|i| r.start + (r.stop - r.start) * i as f64 / (r.points - 1) as f64)
                        .collect()
                }
            }
            _ => return Err(Error::Spec("sweep needs exactly one of `values` or `range`".into())),
        };
        if values.is_empty() {
            return Err(Error::Spec("sweep grid is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Spec("sweep grid has a non-finite value".into()));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Spec("sweep grid must be strictly increasing".into()));
        }
        Ok(values)
    }

    /// Name of the CSV `sweep_variable` value.
    pub fn label(&self) -> String {
        match self.variable {
            SweepVariable::TierIntensity => format!("tier{}_intensity_per_m2", self.tier.unwrap_or(0)),
            SweepVariable::UserIntensity => "user_intensity_per_m2".into(),
            SweepVariable::SirThreshold => "sir_threshold_linear".into(),
            SweepVariable::BetaLast => "beta_last".into(),
        }
    }
}

fn default_schemes() -> Vec<Scheme> {
    vec![Scheme::NonCoordinated]
}

fn default_sources() -> Vec<Source> {
    vec![Source::Analytic, Source::Simulated]
}

fn default_levels() -> Vec<Level> {
    vec![Level::Link]
}

fn default_trials() -> u64 {
    100_000
}

fn default_seed() -> u64 {
    1
}

fn default_mode() -> SimMode {
    SimMode::FastPath
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub network: NetworkConfig,
    pub alloc: AllocSpec,
    pub sweep: Sweep,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_sources")]
    pub sources: Vec<Source>,
    #[serde(default = "default_levels")]
    pub levels: Vec<Level>,
    /// 1-based tiers to report; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tiers: Option<Vec<usize>>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: SimMode,
    #[serde(default)]
    pub simulation: SimOptions,
    /// Output directory; the command line may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Spec(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Spec(format!("invalid experiment name '{}'", self.name)));
        }
        self.network.validate()?;
        let grid = self.sweep.grid()?;
        let k = self.network.group_size;
        match &self.alloc {
            AllocSpec::Fixed { betas } => {
                if betas.len() != k {
                    return Err(Error::Spec(format!("alloc has {} fractions, group_size is {k}", betas.len())));
                }
                PowerAllocation::new(betas.clone())?;
            }
            AllocSpec::Optimize { resolution, .. } => {
                if let Some(r) = resolution {
                    if !(*r > 0.0 && *r <= 0.5) {
                        return Err(Error::Spec(format!("optimizer resolution must be in (0, 0.5], got {r}")));
                    }
                }
                if self.sweep.variable == SweepVariable::BetaLast {
                    return Err(Error::Spec("cannot sweep beta_last while optimizing the allocation".into()));
                }
            }
        }
        match self.sweep.variable {
            SweepVariable::TierIntensity => match self.sweep.tier {
                Some(t) if t >= 1 && t <= self.network.num_tiers() => {}
                other => return Err(Error::Spec(format!("tier_intensity sweep needs a tier in 1..={}, got {other:?}", self.network.num_tiers()))),
            },
            SweepVariable::BetaLast => {
                if grid.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
                    return Err(Error::Spec("beta_last values must lie in (0, 1]".into()));
                }
                if k == 1 && grid.iter().any(|&b| b != 1.0) {
                    return Err(Error::Spec("with one user beta_last must be 1".into()));
                }
            }
            _ => {}
        }
        if self.sweep.tier.is_some() && self.sweep.variable != SweepVariable::TierIntensity {
            return Err(Error::Spec("`sweep.tier` only applies to tier_intensity".into()));
        }
        if self.schemes.is_empty() || self.sources.is_empty() || self.levels.is_empty() {
            return Err(Error::Spec("schemes, sources and levels must be non-empty".into()));
        }
        for t in self.report_tiers() {
            if t == 0 || t > self.network.num_tiers() {
                return Err(Error::Spec(format!("tier {t} outside 1..={}", self.network.num_tiers())));
            }
        }
        if self.sources.contains(&Source::Simulated) && self.trials == 0 {
            return Err(Error::Spec("simulated rows need trials > 0".into()));
        }
        Ok(())
    }

    pub fn report_tiers(&self) -> Vec<usize> {
        let mut t = self.tiers.clone().unwrap_or_else(|| (1..=self.network.num_tiers()).collect());
        t.sort_unstable();
        t.dedup();
        t
    }

    /// This experiment with its sweep grid spelled out, as hashed and recorded.
    pub fn resolved(&self) -> Result<Self> {
        let mut spec = self.clone();
        spec.sweep.values = Some(self.sweep.grid()?);
        spec.sweep.range = None;
        spec.tiers = Some(self.report_tiers());
        spec.schemes.sort();
        spec.schemes.dedup();
        spec.sources.sort();
        spec.sources.dedup();
        spec.output = None;
        Ok(spec)
    }

    /// SHA-256 over the canonical JSON of the resolved spec.
    pub fn config_hash(&self) -> Result<String> {
        let json = serde_json::to_string(&self.resolved()?).map_err(|e| Error::Spec(e.to_string()))?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

/// Network parameters used by all built-in recipes.
pub fn reference_network(lambda2: f64, mu: f64) -> Result<NetworkConfig> {
    NetworkConfig::new(
        vec![TierParams::new(20.0, 1e-6, 1.0)?, TierParams::new(5.0, lambda2, 1.0)?],
        mu,
        4.0,
        2,
        1.0,
    )
}

pub fn recipe(name: &str) -> Result<ExperimentSpec> {
    let mu = 5e-4;
    let intensity_sweep = |name: &str, schemes: Vec<Scheme>| -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            name: name.into(),
            network: reference_network(mu, mu)?,
            alloc: AllocSpec::Fixed { betas: vec![0.25, 0.75] },
            sweep: Sweep {
                variable: SweepVariable::TierIntensity,
                tier: Some(2),
                values: None,
                range: Some(Range {
                    start: mu / 3.0,
                    stop: 2.0 * mu,
                    points: 8,
                }),
            },
            schemes,
            sources: default_sources(),
            levels: vec![Level::Link],
            tiers: None,
            trials: default_trials(),
            seed: default_seed(),
            mode: SimMode::FastPath,
            simulation: SimOptions::default(),
            output: None,
        })
    };
    let beta_sweep = |name: &str, scheme: Scheme| -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            name: name.into(),
            network: reference_network(mu, mu)?,
            alloc: AllocSpec::Fixed { betas: vec![0.25, 0.75] },
            sweep: Sweep {
                variable: SweepVariable::BetaLast,
                tier: None,
                values: Some((50..100).map(|i| i as f64 / 100.0).collect()),
                range: None,
            },
            schemes: vec![scheme],
            sources: vec![Source::Analytic],
            levels: vec![Level::Cell],
            tiers: None,
            trials: default_trials(),
            seed: default_seed(),
            mode: SimMode::FastPath,
            simulation: SimOptions::default(),
            output: None,
        })
    };
    match name {
        "fig1" => intensity_sweep("fig1", vec![Scheme::NonCoordinated]),
        "fig2" => intensity_sweep("fig2", vec![Scheme::NonCoordinated, Scheme::CoordinatedJt]),
        "fig3" => beta_sweep("fig3", Scheme::NonCoordinated),
        "fig4" => beta_sweep("fig4", Scheme::CoordinatedJt),
        other => Err(Error::Spec(format!("unknown recipe '{other}', expected one of {RECIPES:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_variable: String,
    pub sweep_value: f64,
    pub tier: usize,
    pub user: usize,
    pub scheme: Scheme,
    pub source: Source,
    pub betas: String,
    pub coverage_prob: Option<f64>,
    pub coverage_ci95: Option<f64>,
    pub throughput_nats_per_hz: Option<f64>,
    pub throughput_ci95: Option<f64>,
    pub trials: u64,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

impl ResultRow {
    fn key(&self) -> (f64, usize, usize, Scheme, Source) {
        (self.sweep_value, self.tier, self.user, self.scheme, self.source)
    }

    pub fn betas_vec(&self) -> Result<Vec<f64>> {
        self.betas
            .split(';')
            .map(|b| b.parse::<f64>().map_err(|e| Error::Spec(format!("betas '{}': {e}", self.betas))))
            .collect()
    }
}

pub const CSV_COLUMNS: [&str; 15] = [
    "sweep_variable",
    "sweep_value",
    "tier",
    "user",
    "scheme",
    "source",
    "betas",
    "coverage_prob",
    "coverage_ci95",
    "throughput_nats_per_hz",
    "throughput_ci95",
    "trials",
    "seed",
    "config_hash",
    "tool_version",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Orders rows by (sweep value, tier, user, scheme, source) and rejects
    /// duplicate keys.
    pub fn sort(&mut self) -> Result<()> {
        self.rows.sort_by(|a, b| {
            let (ka, kb) = (a.key(), b.key());
            ka.0.total_cmp(&kb.0)
                .then(ka.1.cmp(&kb.1))
                .then(ka.2.cmp(&kb.2))
                .then(ka.3.cmp(&kb.3))
                .then(ka.4.cmp(&kb.4))
        });
        if let Some(w) = self.rows.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(Error::Spec(format!("duplicate result key {:?}", w[0].key())));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record(CSV_COLUMNS).map_err(csv_err)?;
        }
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
        if header != CSV_COLUMNS {
            return Err(Error::Spec(format!("unexpected CSV header {header:?}")));
        }
        // Parsed by hand so that a malformed field names its column.
        let mut rows = Vec::new();
        for record in r.records() {
            let rec = record.map_err(csv_err)?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |i: usize| Error::Spec(format!("row {}: bad {} '{}'", rows.len() + 1, CSV_COLUMNS[i], field(i)));
            let float = |i: usize| field(i).parse::<f64>().map_err(|_| bad(i));
            let opt = |i: usize| -> Result<Option<f64>> {
                if field(i).is_empty() {
                    Ok(None)
                } else {
                    float(i).map(Some)
                }
            };
            let int = |i: usize| field(i).parse::<u64>().map_err(|_| bad(i));
            rows.push(ResultRow {
                sweep_variable: field(0).to_string(),
                sweep_value: float(1)?,
                tier: int(2)? as usize,
                user: int(3)? as usize,
                scheme: field(4).parse()?,
                source: match field(5) {
                    "analytic" => Source::Analytic,
                    "simulated" => Source::Simulated,
                    _ => return Err(bad(5)),
                },
                betas: field(6).to_string(),
                coverage_prob: opt(7)?,
                coverage_ci95: opt(8)?,
                throughput_nats_per_hz: opt(9)?,
                throughput_ci95: opt(10)?,
                trials: int(11)?,
                seed: int(12)?,
                config_hash: field(13).to_string(),
                tool_version: field(14).to_string(),
            });
        }
        Ok(Self { rows })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.rows).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rows = serde_json::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        Ok(Self { rows })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub spec: ExperimentSpec,
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
    pub rows: usize,
    pub warnings: Vec<String>,
    /// Seconds since the Unix epoch; the only field that differs between
    /// identical runs.
    pub generated_unix_s: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub spec: ExperimentSpec,
    pub config_hash: String,
    pub table: ResultTable,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Spec(format!("unknown format '{other}'"))),
        }
    }
}

/// Seed of the Monte Carlo stream for one (sweep point, tier).
fn point_seed(seed: u64, point: usize, tier: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(((point as u64) << 16) | tier as u64))
}

/// `base` with the farthest user's share set to `last` and the other users
/// scaled to fill the rest.
pub fn with_last_beta(base: &[f64], last: f64) -> Result<PowerAllocation> {
    let k = base.len();
    if k == 1 {
        return PowerAllocation::new(vec![last]);
    }
    let rest: f64 = base[..k - 1].iter().sum();
    let mut betas: Vec<f64> = base[..k - 1].iter().map(|b| b * (1.0 - last) / rest).collect();
    betas.push(last);
    if k == 2 {
        betas[0] = 1.0 - last;
    }
    PowerAllocation::new(betas)
}

fn join_betas(a: &PowerAllocation) -> String {
    a.betas().iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";")
}

struct Point {
    index: usize,
    value: f64,
    config: NetworkConfig,
    base_alloc: Option<PowerAllocation>,
}

fn build_point(spec: &ExperimentSpec, index: usize, value: f64) -> Result<Point> {
    let mut config = spec.network.clone();
    let mut base_alloc = match &spec.alloc {
        AllocSpec::Fixed { betas } => Some(PowerAllocation::new(betas.clone())?),
        AllocSpec::Optimize { .. } => None,
    };
    match spec.sweep.variable {
        SweepVariable::TierIntensity => {
            let t = spec.sweep.tier.expect("validated") - 1;
            config.tiers[t].intensity = value;
        }
        SweepVariable::UserIntensity => config.user_intensity = value,
        SweepVariable::SirThreshold => config.sir_threshold = value,
        SweepVariable::BetaLast => {
            let base = base_alloc.as_ref().expect("validated");
            base_alloc = Some(with_last_beta(base.betas(), value)?);
        }
    }
    config.validate()?;
    Ok(Point {
        index,
        value,
        config,
        base_alloc,
    })
}

struct Ctx<'a> {
    spec: &'a ExperimentSpec,
    label: String,
    hash: String,
}

impl Ctx<'_> {
    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        value: f64,
        tier: usize,
        user: usize,
        scheme: Scheme,
        source: Source,
        alloc: &PowerAllocation,
        coverage: (Option<f64>, Option<f64>),
        throughput: (Option<f64>, Option<f64>),
    ) -> ResultRow {
        ResultRow {
            sweep_variable: self.label.clone(),
            sweep_value: value,
            tier: tier + 1,
            user,
            scheme,
            source,
            betas: join_betas(alloc),
            coverage_prob: coverage.0,
            coverage_ci95: coverage.1,
            throughput_nats_per_hz: throughput.0,
            throughput_ci95: throughput.1,
            trials: if source == Source::Simulated { self.spec.trials } else { 0 },
            seed: self.spec.seed,
            config_hash: self.hash.clone(),
            tool_version: TOOL_VERSION.into(),
        }
    }

    /// All rows of one (sweep point, tier).
    fn rows_for(&self, point: &Point, m: usize) -> Result<(Vec<ResultRow>, Vec<String>)> {
        let spec = self.spec;
        let analytics = Analytics::new(&point.config)?;
        let theta = point.config.sir_threshold;
        let k = point.config.group_size;
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        let levels = |l: Level| spec.levels.contains(&l);

        // Allocation per scheme; schemes sharing one also share samples.
        let mut allocs: Vec<(Scheme, PowerAllocation)> = Vec::new();
        for &scheme in &spec.schemes {
            let alloc = match (&spec.alloc, &point.base_alloc) {
                (_, Some(a)) => a.clone(),
                (AllocSpec::Optimize { optimize, method, resolution }, None) => {
                    poweropt::optimize(&analytics, m, scheme, *optimize, *method, *resolution)?.best_alloc
                }
                (AllocSpec::Fixed { .. }, None) => unreachable!("fixed allocations are always built"),
            };
            allocs.push((scheme, alloc));
        }

        let mut feasible_allocs: Vec<(Scheme, PowerAllocation)> = Vec::new();
        for (scheme, alloc) in &allocs {
            let check = FeasibleRegion::new(*scheme, theta, k).check(alloc);
            if check.feasible {
                feasible_allocs.push((*scheme, alloc.clone()));
                continue;
            }
            warnings.push(format!(
                "{} = {}, tier {}, {scheme}: allocation [{}] violates {}; reporting zeros",
                self.label,
                point.value,
                m + 1,
                join_betas(alloc),
                check.violated.unwrap_or_default()
            ));
            for &source in &spec.sources {
                let ci = if source == Source::Simulated { Some(0.0) } else { None };
                if levels(Level::Link) {
                    for user in 1..=k {
                        rows.push(self.row(point.value, m, user, *scheme, source, alloc, (Some(0.0), ci), (Some(0.0), ci)));
                    }
                }
                if levels(Level::Cell) {
                    rows.push(self.row(point.value, m, 0, *scheme, source, alloc, (Some(0.0), ci), (Some(0.0), ci)));
                }
            }
        }

        if spec.sources.contains(&Source::Analytic) {
            for (scheme, alloc) in &feasible_allocs {
                if levels(Level::Link) {
                    let cov = analytics.coverage_all(alloc, m, *scheme, true)?;
                    let thr = analytics.throughput_all(alloc, m, *scheme)?;
                    for user in 0..k {
                        rows.push(self.row(
                            point.value,
                            m,
                            user + 1,
                            *scheme,
                            Source::Analytic,
                            alloc,
                            (cov.per_user[user], None),
                            (thr.per_user[user], None),
                        ));
                    }
                }
                if levels(Level::Cell) {
                    let cov = analytics.cell_coverage(alloc, m, *scheme)?;
                    let thr = analytics.cell_throughput(alloc, m, *scheme)?;
                    rows.push(self.row(point.value, m, 0, *scheme, Source::Analytic, alloc, (Some(cov), None), (Some(thr), None)));
                }
            }
        }

        if spec.sources.contains(&Source::Simulated) {
            // Non-coordinated estimates ignore the boost, so one JT batch
            // serves both schemes when they share an allocation.
            let mut groups: BTreeMap<String, (PowerAllocation, Vec<Scheme>)> = BTreeMap::new();
            for (scheme, alloc) in &feasible_allocs {
                groups.entry(join_betas(alloc)).or_insert_with(|| (alloc.clone(), Vec::new())).1.push(*scheme);
            }
            let seed = point_seed(spec.seed, point.index, m);
            for (alloc, schemes) in groups.values() {
                let sim_scheme = if schemes.contains(&Scheme::CoordinatedJt) {
                    Scheme::CoordinatedJt
                } else {
                    Scheme::NonCoordinated
                };
                let batch = simulate_range(&point.config, alloc, m, sim_scheme, spec.mode, 0..spec.trials, seed, &spec.simulation)?;
                for &scheme in schemes {
                    if levels(Level::Link) {
                        let cov = estimate_coverage(&batch, alloc, theta, scheme)?;
                        let thr = estimate_throughput(&batch, alloc, scheme)?;
                        let cci = cov.ci_halfwidth.clone().unwrap_or_default();
                        let tci = thr.ci_halfwidth.clone().unwrap_or_default();
                        for user in 0..k {
                            let t = thr.per_user[user];
                            rows.push(self.row(
                                point.value,
                                m,
                                user + 1,
                                scheme,
                                Source::Simulated,
                                alloc,
                                (cov.per_user[user], cci.get(user).copied()),
                                (t, t.and(tci.get(user).copied())),
                            ));
                        }
                    }
                    if levels(Level::Cell) {
                        let cell = estimate_cell(&batch, alloc, theta, scheme)?;
                        rows.push(self.row(
                            point.value,
                            m,
                            0,
                            scheme,
                            Source::Simulated,
                            alloc,
                            (Some(cell.coverage), Some(cell.coverage_ci95)),
                            (Some(cell.throughput), Some(cell.throughput_ci95)),
                        ));
                    }
                }
            }
        }
        Ok((rows, warnings))
    }
}

/// Runs every sweep point. `jobs` bounds the worker threads; results do not
/// depend on it.
pub fn run_experiment(spec: &ExperimentSpec, jobs: Option<usize>) -> Result<ExperimentOutput> {
    spec.validate()?;
    let resolved = spec.resolved()?;
    let hash = spec.config_hash()?;
    let grid = resolved.sweep.values.clone().expect("resolved");
    let ctx = Ctx {
        spec: &resolved,
        label: resolved.sweep.label(),
        hash: hash.clone(),
    };
    let tiers: Vec<usize> = resolved.report_tiers().iter().map(|t| t - 1).collect();
    let work = || -> Result<Vec<(Vec<ResultRow>, Vec<String>)>> {
        let points = grid
            .iter()
            .enumerate()
            .map(|(i, &v)| build_point(&resolved, i, v))
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<(&Point, usize)> = points.iter().flat_map(|p| tiers.iter().map(move |&m| (p, m))).collect();
        items.into_par_iter().map(|(p, m)| ctx.rows_for(p, m)).collect()
    };
    let parts = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Io(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let mut table = ResultTable::default();
    let mut warnings = Vec::new();
    for (rows, w) in parts {
        table.rows.extend(rows);
        warnings.extend(w);
    }
    table.sort()?;
    Ok(ExperimentOutput {
        spec: resolved,
        config_hash: hash,
        table,
        warnings,
    })
}

/// Writes `<name>.csv` (or `<name>.json`) and the `<name>.meta.json`
/// sidecar into `dir`, returning the data file path.
pub fn write_outputs(output: &ExperimentOutput, dir: &Path, format: Format) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let name = &output.spec.name;
    let (path, body) = match format {
        Format::Csv => (dir.join(format!("{name}.csv")), output.table.to_csv()?),
        Format::Json => (dir.join(format!("{name}.json")), output.table.to_json()?),
    };
    fs::write(&path, body)?;
    let generated_unix_s = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let sidecar = Sidecar {
        spec: output.spec.clone(),
        seed: output.spec.seed,
        config_hash: output.config_hash.clone(),
        tool_version: TOOL_VERSION.into(),
        rows: output.table.rows.len(),
        warnings: output.warnings.clone(),
        generated_unix_s,
    };
    let meta = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join(format!("{name}.meta.json")), meta)?;
    Ok(path)
}

pub fn read_table(path: &Path) -> Result<ResultTable> {
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => ResultTable::from_json(&text),
        _ => ResultTable::from_csv(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
name = "small"
trials = 2000
seed = 9
schemes = ["non_coordinated", "coordinated_jt"]
levels = ["link", "cell"]

[network]
user_intensity = 5e-4
alpha = 4.0
group_size = 2
sir_threshold = 1.0

[[network.tiers]]
power = 20.0
intensity = 1e-6
bias = 1.0

[[network.tiers]]
power = 5.0
intensity = 5e-4
bias = 1.0

[alloc]
betas = [0.2, 0.8]

[sweep]
variable = "tier_intensity"
tier = 2
values = [3e-4, 6e-4]
"#;

    #[test]
    fn parses_and_runs() {
        let spec = ExperimentSpec::from_toml(SPEC).unwrap();
        let out = run_experiment(&spec, Some(1)).unwrap();
        // 2 points x 2 tiers x 2 schemes x 2 sources x (2 users + cell)
        assert_eq!(out.table.rows.len(), 48);
        assert!(out.warnings.is_empty());
        for r in &out.table.rows {
            assert!(r.tier >= 1 && r.tier <= 2 && r.user <= 2);
            assert_eq!(r.config_hash, out.config_hash);
            if let Some(c) = r.coverage_prob {
                assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut spec = ExperimentSpec::from_toml(SPEC).unwrap();
        spec.trials = 300;
        let out = run_experiment(&spec, None).unwrap();
        let csv = out.table.to_csv().unwrap();
        assert!(csv.starts_with(&CSV_COLUMNS.join(",")));
        assert_eq!(ResultTable::from_csv(&csv).unwrap(), out.table);
        assert_eq!(ResultTable::from_json(&out.table.to_json().unwrap()).unwrap(), out.table);
    }

    #[test]
    fn hash_ignores_output_and_range_spelling() {
        let a = ExperimentSpec::from_toml(SPEC).unwrap();
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        b.seed = 10;
        assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = a.clone();
        c.sweep.values = None;
        c.sweep.range = Some(Range {
            start: 3e-4,
            stop: 6e-4,
            points: 2,
        });
        assert_eq!(a.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn spec_errors() {
        let bad = SPEC.replace("values = [3e-4, 6e-4]", "values = [6e-4, 3e-4]");
        assert!(matches!(ExperimentSpec::from_toml(&bad), Err(Error::Spec(_))));
        let bad = SPEC.replace("values = [3e-4, 6e-4]", "values = []");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        let bad = SPEC.replace("tier = 2\n", "");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        let bad = SPEC.replace("betas = [0.2, 0.8]", "betas = [0.2, 0.3, 0.5]");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        let bad = SPEC.replace("seed = 9", "seed = 9\nbogus = 1");
        assert!(ExperimentSpec::from_toml(&bad).is_err());
        assert!(ExperimentSpec::from_toml("not toml [").is_err());
    }

    #[test]
    fn infeasible_allocation_reports_zeros() {
        let text = SPEC.replace("betas = [0.2, 0.8]", "betas = [0.5, 0.5]");
        let mut spec = ExperimentSpec::from_toml(&text).unwrap();
        spec.trials = 100;
        let out = run_experiment(&spec, None).unwrap();
        assert!(!out.warnings.is_empty());
        assert!(out.warnings[0].contains("theta * beta_1 < beta_2"));
        assert!(out.table.rows.iter().all(|r| r.coverage_prob == Some(0.0)));
    }

    #[test]
    fn recipes_validate() {
        for name in RECIPES {
            let r = recipe(name).unwrap();
            r.validate().unwrap();
            let toml = r.to_toml().unwrap();
            assert_eq!(ExperimentSpec::from_toml(&toml).unwrap(), r);
        }
        let fig1 = recipe("fig1").unwrap();
        let grid = fig1.sweep.grid().unwrap();
        assert_eq!(grid.len(), 8);
        assert!((grid[0] - 5e-4 / 3.0).abs() < 1e-18 && (grid[7] - 1e-3).abs() < 1e-18);
        assert!(recipe("fig9").is_err());
    }

    #[test]
    fn last_beta_rescales_the_rest() {
        let a = with_last_beta(&[0.1, 0.2, 0.7], 0.8).unwrap();
        assert!((a.beta(0) - 0.2 / 3.0).abs() < 1e-15);
        assert_eq!(with_last_beta(&[0.25, 0.75], 0.6).unwrap().betas(), &[0.4, 0.6]);
    }

    #[test]
    fn optimize_allocation_rows() {
        let text = SPEC
            .replace("betas = [0.2, 0.8]", "optimize = \"cell_coverage\"\nmethod = \"grid\"\nresolution = 0.05")
            .replace("levels = [\"link\", \"cell\"]", "levels = [\"cell\"]\nsources = [\"analytic\"]");
        let spec = ExperimentSpec::from_toml(&text).unwrap();
        let out = run_experiment(&spec, None).unwrap();
        assert_eq!(out.table.rows.len(), 8);
        for r in &out.table.rows {
            let b = r.betas_vec().unwrap();
            assert_eq!(b.len(), 2);
            assert!(b[1] > b[0]);
        }
    }
}
