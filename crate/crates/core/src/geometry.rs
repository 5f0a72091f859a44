//! Spatial model: Poisson base-station tiers and users, biased nearest-BS
//! association, cell-load statistics and the ordered scheduled-user distances.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest expected number of points a single deployment may hold.
pub const MAX_EXPECTED_POINTS: f64 = 1e8;

/// Shape constant of the cell-load pmf approximation.
const PMF_SHAPE: f64 = 3.5;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierParams {
    /// Transmit power in watts.
    pub power: f64,
    /// Base stations per m².
    pub intensity: f64,
    /// Association bias.
    pub bias: f64,
}

impl TierParams {
    pub fn new(power: f64, intensity: f64, bias: f64) -> Result<Self> {
        let tier = Self {
            power,
            intensity,
            bias,
        };
        tier.validate()?;
        Ok(tier)
    }

    /// A zero intensity is accepted so that a tier can be switched off.
    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::InvalidConfig(format!("tier power must be > 0, got {}", self.power)));
        }
        if !(self.intensity >= 0.0 && self.intensity.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tier intensity must be >= 0, got {}",
                self.intensity
            )));
        }
        if !(self.bias > 0.0 && self.bias.is_finite()) {
            return Err(Error::InvalidConfig(format!("tier bias must be > 0, got {}", self.bias)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub tiers: Vec<TierParams>,
    /// Users per m².
    pub user_intensity: f64,
    /// Pathloss exponent, strictly above 2.
    pub alpha: f64,
    /// Number of NOMA users scheduled per BS (K).
    pub group_size: usize,
    /// Linear SIR decoding threshold.
    pub sir_threshold: f64,
}

impl NetworkConfig {
    pub fn new(
        tiers: Vec<TierParams>,
        user_intensity: f64,
        alpha: f64,
        group_size: usize,
        sir_threshold: f64,
    ) -> Result<Self> {
        let config = Self {
            tiers,
            user_intensity,
            alpha,
            group_size,
            sir_threshold,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tiers.is_empty() {
            return Err(Error::InvalidConfig("at least one tier is required".into()));
        }
        for tier in &self.tiers {
            tier.validate()?;
        }
        if !self.tiers.iter().any(|t| t.intensity > 0.0) {
            return Err(Error::InvalidConfig("every tier has zero intensity".into()));
        }
        if !(self.user_intensity >= 0.0 && self.user_intensity.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "user intensity must be >= 0, got {}",
                self.user_intensity
            )));
        }
        if !(self.alpha > 2.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("pathloss exponent must exceed 2, got {}", self.alpha)));
        }
        if self.group_size == 0 {
            return Err(Error::InvalidConfig("group size K must be at least 1".into()));
        }
        if !(self.sir_threshold > 0.0 && self.sir_threshold.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "SIR threshold must be > 0, got {}",
                self.sir_threshold
            )));
        }
        Ok(())
    }

    pub fn num_tiers(&self) -> usize {
        self.tiers.len()
    }

    pub fn check_tier(&self, tier: usize) -> Result<()> {
        if tier < self.tiers.len() {
            Ok(())
        } else {
            Err(Error::Index(format!("tier {tier} with {} tiers", self.tiers.len())))
        }
    }

    /// `15 / sqrt(pi * lambda_min)` over the tiers with positive intensity.
    pub fn default_window_radius(&self) -> f64 {
        let min = self
            .tiers
            .iter()
            .map(|t| t.intensity)
            .filter(|&l| l > 0.0)
            .fold(f64::INFINITY, f64::min);
        15.0 / (PI * min).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedTierStats {
    /// Mean users per tier-m BS (xi_m).
    pub cell_load: Vec<f64>,
    /// Probability that a tier-m BS has at least one user (nu_m).
    pub nonvoid_prob: Vec<f64>,
    /// Probability that a user associates with tier l (phi_l).
    pub assoc_prob: Vec<f64>,
    /// `sum_m omega_m^{2/alpha} lambda_m`.
    pub scaled_total_intensity: f64,
}

pub fn derived_stats(config: &NetworkConfig) -> DerivedTierStats {
    let delta = 2.0 / config.alpha;
    let weights: Vec<f64> = config
        .tiers
        .iter()
        .map(|t| t.bias.powf(delta) * t.intensity)
        .collect();
    let total: f64 = weights.iter().sum();
    let cell_load: Vec<f64> = config
        .tiers
        .iter()
        .map(|t| config.user_intensity * t.bias.powf(delta) / total)
        .collect();
    let nonvoid_prob = cell_load.iter().map(|&xi| nonvoid_probability(xi)).collect();
    DerivedTierStats {
        cell_load,
        nonvoid_prob,
        assoc_prob: weights.iter().map(|w| w / total).collect(),
        scaled_total_intensity: total,
    }
}

/// `1 - (1 + 2 xi / 7)^{-7/2}`.
pub fn nonvoid_probability(cell_load: f64) -> f64 {
    // -expm1(-3.5 ln(1 + 2xi/7)) keeps precision for tiny loads.
    -(-PMF_SHAPE * (cell_load / PMF_SHAPE).ln_1p()).exp_m1()
}

/// Approximate probability that a tier-`tier` BS serves exactly `n` users.
pub fn user_count_pmf(config: &NetworkConfig, tier: usize, n: u64) -> Result<f64> {
    config.check_tier(tier)?;
    let xi = derived_stats(config).cell_load[tier];
    Ok(user_count_pmf_for_load(xi, n))
}

pub fn user_count_pmf_for_load(cell_load: f64, n: u64) -> f64 {
    let r = cell_load / PMF_SHAPE;
    if r == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let n_f = n as f64;
    let log_p = libm::lgamma(n_f + PMF_SHAPE) - libm::lgamma(n_f + 1.0) - libm::lgamma(PMF_SHAPE)
        + n_f * r.ln()
        - (n_f + PMF_SHAPE) * r.ln_1p();
    log_p.exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub window_radius: f64,
    /// `bs_points[tier][index]`.
    pub bs_points: Vec<Vec<Point>>,
    pub user_points: Vec<Point>,
}

impl Deployment {
    pub fn num_base_stations(&self) -> usize {
        self.bs_points.iter().map(Vec::len).sum()
    }
}

fn uniform_in_disk<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Point {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = 2.0 * PI * rng.random::<f64>();
    [r * phi.cos(), r * phi.sin()]
}

fn poisson_points<R: Rng + ?Sized>(rng: &mut R, intensity: f64, radius: f64) -> Vec<Point> {
    let mean = intensity * PI * radius * radius;
    if mean <= 0.0 {
        return Vec::new();
    }
    let count = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
    (0..count).map(|_| uniform_in_disk(rng, radius)).collect()
}

/// Draws every tier and the users as homogeneous PPPs on the disk of the
/// given radius (Poisson count, then uniform placement).
pub fn sample_deployment<R: Rng + ?Sized>(
    config: &NetworkConfig,
    window_radius: f64,
    rng: &mut R,
) -> Result<Deployment> {
    if !(window_radius > 0.0 && window_radius.is_finite()) {
        return Err(Error::InvalidConfig(format!("window radius must be > 0, got {window_radius}")));
    }
    let area = PI * window_radius * window_radius;
    let expected =
        area * (config.user_intensity + config.tiers.iter().map(|t| t.intensity).sum::<f64>());
    if expected > MAX_EXPECTED_POINTS {
        return Err(Error::DeploymentTooLarge {
            expected,
            limit: MAX_EXPECTED_POINTS,
        });
    }
    let bs_points = config
        .tiers
        .iter()
        .map(|t| poisson_points(rng, t.intensity, window_radius))
        .collect();
    let user_points = poisson_points(rng, config.user_intensity, window_radius);
    Ok(Deployment {
        window_radius,
        bs_points,
        user_points,
    })
}

/// Uniform bucket grid for nearest-neighbour queries within one tier.
struct GridIndex<'a> {
    points: &'a [Point],
    origin: f64,
    cell: f64,
    side: usize,
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl<'a> GridIndex<'a> {
    fn new(points: &'a [Point], half_width: f64) -> Self {
        let side = ((points.len() as f64 / 2.0).sqrt().ceil() as usize).max(1);
        let origin = -half_width;
        let cell = 2.0 * half_width / side as f64;
        let mut index = Self {
            points,
            origin,
            cell,
            side,
            starts: vec![0; side * side + 1],
            items: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|p| index.cell_of(p)).collect();
        for &c in &cells {
            index.starts[c + 1] += 1;
        }
        for i in 0..side * side {
            index.starts[i + 1] += index.starts[i];
        }
        let mut fill = index.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            index.items[fill[c]] = i;
            fill[c] += 1;
        }
        index
    }

    fn coord(&self, x: f64) -> usize {
        let c = ((x - self.origin) / self.cell).floor();
        (c.max(0.0) as usize).min(self.side - 1)
    }

    fn cell_of(&self, p: &Point) -> usize {
        self.coord(p[1]) * self.side + self.coord(p[0])
    }

    /// Nearest point as `(squared distance, index)`; ties go to the lower index.
    fn nearest(&self, q: &Point) -> Option<(f64, usize)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = (self.coord(q[0]) as isize, self.coord(q[1]) as isize);
        let side = self.side as isize;
        let mut best: Option<(f64, usize)> = None;
        for ring in 0..=side {
            for gy in (cy - ring)..=(cy + ring) {
                if gy < 0 || gy >= side {
                    continue;
                }
                let on_edge_row = gy == cy - ring || gy == cy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut gx = cx - ring;
                while gx <= cx + ring {
                    if gx >= 0 && gx < side {
                        let c = (gy * side + gx) as usize;
                        for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                            let p = self.points[i];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                            let better = match best {
                                None => true,
                                Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                            };
                            if better {
                                best = Some((d2, i));
                            }
                        }
                    }
                    gx += step;
                }
            }
            if let Some((bd, _)) = best {
                let reach = ring as f64 * self.cell;
                if bd < reach * reach {
                    break;
                }
            }
        }
        best
    }
}

impl GridIndex<'_> {
    /// True if some point other than `skip` lies within squared distance
    /// `r2` of `q` (inclusive when `inclusive`).
    fn any_within(&self, q: &Point, r2: f64, inclusive: bool, skip: Option<usize>) -> bool {
        if self.points.is_empty() {
            return false;
        }
        let (cx, cy) = (self.coord(q[0]) as isize, self.coord(q[1]) as isize);
        let side = self.side as isize;
        let reach = r2.sqrt();
        for ring in 0..=side {
            if (ring - 1).max(0) as f64 * self.cell > reach {
                break;
            }
            for gy in (cy - ring)..=(cy + ring) {
                if gy < 0 || gy >= side {
                    continue;
                }
                let on_edge_row = gy == cy - ring || gy == cy + ring;
                let step = if on_edge_row { 1 } else { (2 * ring).max(1) };
                let mut gx = cx - ring;
                while gx <= cx + ring {
                    if gx >= 0 && gx < side {
                        let c = (gy * side + gx) as usize;
                        for &i in &self.items[self.starts[c]..self.starts[c + 1]] {
                            if Some(i) == skip {
                                continue;
                            }
                            let p = self.points[i];
                            let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
                            if d2 < r2 || (inclusive && d2 == r2) {
                                return true;
                            }
                        }
                    }
                    gx += step;
                }
            }
        }
        false
    }
}

fn half_width_of(deployment: &Deployment) -> f64 {
    deployment
        .bs_points
        .iter()
        .flatten()
        .chain(deployment.user_points.iter())
        .fold(deployment.window_radius, |acc, p| acc.max(p[0].abs()).max(p[1].abs()))
}

/// Users associated with BS `(tier, bs)`, ascending; agrees with
/// [`associate`] but only tests whether a better BS exists.
pub fn served_by(deployment: &Deployment, config: &NetworkConfig, tier: usize, bs: usize) -> Result<Vec<usize>> {
    config.check_tier(tier)?;
    let site = *deployment
        .bs_points
        .get(tier)
        .and_then(|pts| pts.get(bs))
        .ok_or_else(|| Error::Index(format!("BS {bs} of tier {tier}")))?;
    let half_width = half_width_of(deployment);
    let grids: Vec<GridIndex> = deployment
        .bs_points
        .iter()
        .map(|pts| GridIndex::new(pts, half_width))
        .collect();
    let alpha = config.alpha;
    let own_bias = config.tiers[tier].bias;
    let mut members = Vec::new();
    for (u, q) in deployment.user_points.iter().enumerate() {
        let d2 = (site[0] - q[0]).powi(2) + (site[1] - q[1]).powi(2);
        let beaten = grids.iter().enumerate().any(|(l, grid)| {
            // omega_l d_l^{-alpha} > omega_m d^{-alpha}  <=>  d_l^2 < d^2 (omega_l/omega_m)^{2/alpha}
            let r2 = d2 * (config.tiers[l].bias / own_bias).powf(2.0 / alpha);
            if l == tier {
                // Same tier: lower indices win ties.
                grid.any_within(q, r2, false, Some(bs)) || lower_index_tie(grid, q, r2, bs)
            } else {
                grid.any_within(q, r2, l < tier, None)
            }
        });
        if !beaten {
            members.push(u);
        }
    }
    Ok(members)
}

fn lower_index_tie(grid: &GridIndex, q: &Point, r2: f64, bs: usize) -> bool {
    grid.points[..bs]
        .iter()
        .any(|p| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) == r2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociationMap {
    /// `users_of[tier][bs]`: indices of users served by that BS, ascending.
    pub users_of: Vec<Vec<Vec<usize>>>,
    /// `(tier, bs)` serving each user.
    pub serving: Vec<(usize, usize)>,
}

impl AssociationMap {
    /// True iff the BS serves at least one user.
    pub fn is_nonvoid(&self, tier: usize, bs: usize) -> bool {
        !self.users_of[tier][bs].is_empty()
    }

    pub fn nonvoid_flags(&self) -> Vec<Vec<bool>> {
        self.users_of
            .iter()
            .map(|tier| tier.iter().map(|u| !u.is_empty()).collect())
            .collect()
    }
}

/// Assigns every user to the arg-max of `omega_l |X - U|^{-alpha}` over all
/// BSs; ties go to the lowest `(tier, index)`.
pub fn associate(deployment: &Deployment, config: &NetworkConfig) -> Result<AssociationMap> {
    if deployment.num_base_stations() == 0 {
        return Err(Error::NoBaseStations);
    }
    if deployment.bs_points.len() != config.tiers.len() {
        return Err(Error::InvalidConfig(format!(
            "deployment has {} tiers, config has {}",
            deployment.bs_points.len(),
            config.tiers.len()
        )));
    }
    let half_width = half_width_of(deployment);
    let grids: Vec<GridIndex> = deployment
        .bs_points
        .iter()
        .map(|pts| GridIndex::new(pts, half_width))
        .collect();

    let half_alpha = config.alpha / 2.0;
    let mut users_of: Vec<Vec<Vec<usize>>> =
        deployment.bs_points.iter().map(|pts| vec![Vec::new(); pts.len()]).collect();
    let mut serving = Vec::with_capacity(deployment.user_points.len());
    for (u, q) in deployment.user_points.iter().enumerate() {
        let mut best: Option<(f64, usize, usize)> = None;
        for (tier, grid) in grids.iter().enumerate() {
            if let Some((d2, idx)) = grid.nearest(q) {
                let score = config.tiers[tier].bias * d2.powf(-half_alpha);
                if best.is_none_or(|(s, _, _)| score > s) {
                    best = Some((score, tier, idx));
                }
            }
        }
        let (_, tier, idx) = best.expect("at least one BS exists");
        users_of[tier][idx].push(u);
        serving.push((tier, idx));
    }
    Ok(AssociationMap { users_of, serving })
}

/// Squared scaled distances of the K scheduled users, nearest first, built
/// as cumulative sums of independent `Exp((K - j) pi lambda_sigma)` draws.
pub fn sample_scheduled_distances<R: Rng + ?Sized>(
    group_size: usize,
    scaled_total_intensity: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut acc = 0.0;
    (0..group_size)
        .map(|j| {
            let rate = (group_size - j) as f64 * PI * scaled_total_intensity;
            acc += Exp::new(rate).expect("positive rate").sample(rng);
            acc
        })
        .collect()
}
