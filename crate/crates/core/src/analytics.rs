//! Closed-form and integral expressions for coverage and link throughput of
//! downlink NOMA users in a biased multi-tier network.
//!
//! Indices are 0-based throughout: tier `m`, user `k` with `k = 0` the
//! nearest scheduled user and `k = K - 1` the farthest.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{derived_stats, DerivedTierStats, NetworkConfig};
use crate::quadrature::Quadrature;

const SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PowerAllocation {
    betas: Vec<f64>,
}

impl PowerAllocation {
    /// Fractions must lie in (0, 1], sum to one and be non-decreasing.
    /// Equal neighbours are accepted so that the boundary allocations of a
    /// sweep can be represented; they simply yield zero coverage.
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidAllocation("empty allocation".into()));
        }
        for (k, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::InvalidAllocation(format!("beta_{} = {b} is outside (0, 1]", k + 1)));
            }
        }
        let sum: f64 = betas.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidAllocation(format!("fractions sum to {sum}, not 1")));
        }
        if let Some(k) = betas.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidAllocation(format!(
                "beta_{} = {} exceeds beta_{} = {}",
                k + 1,
                betas[k],
                k + 2,
                betas[k + 1]
            )));
        }
        Ok(Self { betas })
    }

    /// `[1 - beta2, beta2]`.
    pub fn two_user(beta2: f64) -> Result<Self> {
        Self::new(vec![1.0 - beta2, beta2])
    }

    pub fn single() -> Self {
        Self { betas: vec![1.0] }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k]
    }

    /// `sum_{n < l} beta_n`.
    pub fn prefix(&self, l: usize) -> f64 {
        self.betas[..l].iter().sum()
    }
}

impl TryFrom<Vec<f64>> for PowerAllocation {
    type Error = Error;
    fn try_from(betas: Vec<f64>) -> Result<Self> {
        Self::new(betas)
    }
}

impl From<PowerAllocation> for Vec<f64> {
    fn from(a: PowerAllocation) -> Self {
        a.betas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    NonCoordinated,
    #[serde(rename = "coordinated_jt")]
    CoordinatedJt,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::NonCoordinated, Scheme::CoordinatedJt];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::NonCoordinated => "non_coordinated",
            Scheme::CoordinatedJt => "coordinated_jt",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "non_coordinated" | "noncoordinated" => Ok(Scheme::NonCoordinated),
            "coordinated_jt" | "jt" => Ok(Scheme::CoordinatedJt),
            other => Err(Error::Spec(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    AnalyticBound,
    AnalyticApprox,
    AnalyticLimit,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    /// One entry per user; `None` marks a conditional estimate whose
    /// conditioning event never occurred.
    pub per_user: Vec<Option<f64>>,
    pub kind: MetricKind,
    pub ci_halfwidth: Option<Vec<f64>>,
}

impl MetricResult {
    pub fn analytic(values: Vec<f64>, kind: MetricKind) -> Self {
        Self {
            per_user: values.into_iter().map(Some).collect(),
            kind,
            ci_halfwidth: None,
        }
    }

    pub fn value(&self, k: usize) -> Option<f64> {
        self.per_user.get(k).copied().flatten()
    }
}

/// How the void-BS boost term of the farthest JT user is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostForm {
    /// The moment generating function of the boost, `E[1 - e^{aH}]`. It is
    /// infinite whenever `a >= 1` at the exclusion radius, which sends the
    /// bracket to zero and the coverage factor to one.
    Mgf,
    /// Reciprocal Laplace transform, `1 / E[e^{-sS}]`: the boost enters as
    /// `-ell`, which agrees with the MGF to first order and stays finite.
    Reciprocal,
}

/// `max_{l in k..=j} theta / (beta_l - theta sum_{n<l} beta_n)`, or `+inf`
/// when some denominator is not positive.
pub fn theta_eff(alloc: &PowerAllocation, theta: f64, k: usize, j: usize) -> Result<f64> {
    if k > j || j >= alloc.len() {
        return Err(Error::Index(format!(
            "need k <= j < K, got k = {k}, j = {j}, K = {}",
            alloc.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for l in k..=j {
        let denom = alloc.beta(l) - theta * alloc.prefix(l);
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(theta / denom);
    }
    Ok(worst)
}

/// `1 / sinc(2/alpha) = int_0^inf dt / (1 + t^{alpha/2})`.
fn full_tail(p: f64) -> f64 {
    let z = PI / p;
    z / z.sin()
}

fn inner_quadrature() -> Quadrature {
    Quadrature {
        abs_tol: 1e-15,
        rel_tol: 1e-11,
        max_intervals: 500,
    }
}

/// `int_{t0}^inf dt / (1 + t^p)`.
fn tail_integral(t0: f64, p: f64) -> f64 {
    if t0 <= 0.0 {
        return full_tail(p);
    }
    if p == 2.0 {
        return (1.0 / t0).atan();
    }
    let q = inner_quadrature();
    let value = if t0 <= 1.0 {
        q.integrate(|t| 1.0 / (1.0 + t.powf(p)), 0.0, t0)
            .map(|e| full_tail(p) - e.value)
    } else {
        // t = t0 v^{-1/(p-1)} turns the tail into a smooth integral on (0, 1).
        let exponent = p / (p - 1.0);
        let t0p = t0.powf(p);
        q.integrate(|v| 1.0 / (v.powf(exponent) + t0p), 0.0, 1.0)
            .map(|e| t0 / (p - 1.0) * e.value)
    };
    value.unwrap_or(f64::NAN)
}

/// `int_{t0}^inf dt / (t^p - 1)` for `t0 > 1`.
fn boost_tail_integral(t0: f64, p: f64) -> f64 {
    if p == 2.0 {
        return (1.0 / t0).atanh();
    }
    let exponent = p / (p - 1.0);
    let t0p = t0.powf(p);
    inner_quadrature()
        .integrate(|v| 1.0 / (t0p - v.powf(exponent)), 0.0, 1.0)
        .map(|e| t0 / (p - 1.0) * e.value)
        .unwrap_or(f64::NAN)
}

/// Analytic model bound to one network configuration.
#[derive(Debug, Clone)]
pub struct Analytics {
    config: NetworkConfig,
    stats: DerivedTierStats,
    nonvoid: Vec<f64>,
    boost: BoostForm,
    quad: Quadrature,
}

impl Analytics {
    pub fn new(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let stats = derived_stats(config);
        Ok(Self {
            nonvoid: stats.nonvoid_prob.clone(),
            config: config.clone(),
            stats,
            boost: BoostForm::Reciprocal,
            quad: Quadrature::default(),
        })
    }

    /// Replaces the non-void probabilities derived from the cell loads.
    pub fn with_nonvoid(mut self, nonvoid: Vec<f64>) -> Result<Self> {
        if nonvoid.len() != self.config.num_tiers() || nonvoid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(format!("bad non-void override {nonvoid:?}")));
        }
        self.nonvoid = nonvoid;
        Ok(self)
    }

    pub fn with_boost_form(mut self, boost: BoostForm) -> Self {
        self.boost = boost;
        self
    }

    pub fn with_quadrature(mut self, quad: Quadrature) -> Self {
        self.quad = quad;
        self
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stats(&self) -> &DerivedTierStats {
        &self.stats
    }

    pub fn nonvoid(&self) -> &[f64] {
        &self.nonvoid
    }

    pub fn boost_form(&self) -> BoostForm {
        self.boost
    }

    fn check_tiers(&self, m: usize, l: usize) -> Result<()> {
        self.config.check_tier(m)?;
        self.config.check_tier(l)
    }

    fn check_user(&self, alloc: &PowerAllocation, k: usize) -> Result<()> {
        if alloc.len() != self.config.group_size {
            return Err(Error::InvalidAllocation(format!(
                "{} fractions for K = {}",
                alloc.len(),
                self.config.group_size
            )));
        }
        if k >= alloc.len() {
            return Err(Error::Index(format!("user {k} with K = {}", alloc.len())));
        }
        Ok(())
    }

    fn nu(&self, l: usize, void_aware: bool) -> f64 {
        if void_aware {
            self.nonvoid[l]
        } else {
            1.0
        }
    }

    /// `omega_m P_l / (omega_l P_m)`.
    fn power_ratio(&self, m: usize, l: usize) -> f64 {
        let (tm, tl) = (&self.config.tiers[m], &self.config.tiers[l]);
        tm.bias * tl.power / (tl.bias * tm.power)
    }

    /// Lower limit `t0` of the interference integrals.
    fn lower_limit(&self, m: usize, l: usize, x: f64) -> f64 {
        (x * self.power_ratio(m, l)).powf(-2.0 / self.config.alpha)
    }

    fn ell_raw(&self, m: usize, l: usize, x: f64) -> f64 {
        let phi = self.stats.assoc_prob[l];
        if phi == 0.0 {
            return 0.0;
        }
        let t0 = self.lower_limit(m, l, x);
        phi * tail_integral(t0, self.config.alpha / 2.0) / t0
    }

    fn ell_tilde_raw(&self, m: usize, l: usize, x: f64) -> f64 {
        let phi = self.stats.assoc_prob[l];
        if phi == 0.0 {
            return 0.0;
        }
        let t0 = self.lower_limit(m, l, x);
        if t0 <= 1.0 {
            return f64::NEG_INFINITY;
        }
        -phi * boost_tail_integral(t0, self.config.alpha / 2.0) / t0
    }

    /// Interference functional `ell_{m,l}(x)`.
    pub fn ell(&self, m: usize, l: usize, x: f64) -> Result<f64> {
        self.check_tiers(m, l)?;
        if x.is_nan() || x <= 0.0 {
            return Err(Error::NonPositiveArgument(x));
        }
        finite_or_quadrature(self.ell_raw(m, l, x))
    }

    /// Void-BS boost functional; `-inf` where its expectation diverges.
    pub fn ell_tilde(&self, m: usize, l: usize, x: f64) -> Result<f64> {
        self.check_tiers(m, l)?;
        if x.is_nan() || x <= 0.0 {
            return Err(Error::NonPositiveArgument(x));
        }
        let v = self.ell_tilde_raw(m, l, x);
        if v.is_nan() {
            return Err(Error::Divergent(format!("boost integral at x = {x}")));
        }
        Ok(v)
    }

    /// `sum_l nu_l ell_{m,l}(x)`.
    fn load(&self, m: usize, x: f64, void_aware: bool) -> f64 {
        if x == f64::INFINITY {
            return f64::INFINITY;
        }
        if x <= 0.0 {
            return 0.0;
        }
        (0..self.config.num_tiers())
            .map(|l| self.nu(l, void_aware) * self.ell_raw(m, l, x))
            .sum()
    }

    /// `[sum_l nu_l ell(x) + (1 - nu_l) boost(x_boost)]^+`.
    fn boosted_load(&self, m: usize, x: f64, x_boost: f64, void_aware: bool) -> f64 {
        let mut total = 0.0;
        for l in 0..self.config.num_tiers() {
            let nu = self.nu(l, void_aware);
            total += nu * self.ell_raw(m, l, x);
            if nu < 1.0 {
                let boost = match self.boost {
                    BoostForm::Mgf => self.ell_tilde_raw(m, l, x_boost),
                    BoostForm::Reciprocal => -self.ell_raw(m, l, x_boost),
                };
                total += (1.0 - nu) * boost;
            }
        }
        if total.is_nan() {
            // inf - inf: the interference term dominates at infinite argument.
            return f64::INFINITY;
        }
        total.max(0.0)
    }

    /// `prod_{j=0}^{k} (n - j) / ((n - j) + load)`.
    fn ordered_product(n: usize, k: usize, load: f64) -> f64 {
        if load == f64::INFINITY {
            return 0.0;
        }
        (0..=k)
            .map(|j| {
                let c = (n - j) as f64;
                c / (c + load)
            })
            .product()
    }

    /// Lower bound on `P[gamma_{m,k} >= x]`.
    pub fn ccdf_desired_sir(
        &self,
        alloc: &PowerAllocation,
        m: usize,
        k: usize,
        x: f64,
        void_aware: bool,
    ) -> Result<f64> {
        self.config.check_tier(m)?;
        self.check_user(alloc, k)?;
        if x.is_nan() || x <= 0.0 {
            return Err(Error::NonPositiveArgument(x));
        }
        let load = self.load(m, x / alloc.beta(k), void_aware);
        finite_or_quadrature(Self::ordered_product(alloc.len(), k, load))
    }

    fn theta(&self) -> f64 {
        self.config.sir_threshold
    }

    fn no_voids(&self, void_aware: bool) -> bool {
        !void_aware || self.nonvoid.iter().all(|&v| v == 1.0)
    }

    pub fn coverage_noncoord(&self, alloc: &PowerAllocation, m: usize, k: usize, void_aware: bool) -> Result<f64> {
        self.config.check_tier(m)?;
        self.check_user(alloc, k)?;
        let n = alloc.len();
        let vartheta = theta_eff(alloc, self.theta(), k, n - 1)?;
        finite_or_quadrature(Self::ordered_product(n, k, self.load(m, vartheta, void_aware)))
    }

    /// Coverage under joint transmission by the void BSs. Without voids the
    /// scheme degenerates to the non-coordinated one.
    pub fn coverage_jt(&self, alloc: &PowerAllocation, m: usize, k: usize, void_aware: bool) -> Result<f64> {
        self.config.check_tier(m)?;
        self.check_user(alloc, k)?;
        let n = alloc.len();
        if self.no_voids(void_aware) {
            return self.coverage_noncoord(alloc, m, k, void_aware);
        }
        let value = if k + 1 < n {
            let vartheta = theta_eff(alloc, self.theta(), k, n - 2)?;
            Self::ordered_product(n, k, self.load(m, vartheta, void_aware))
        } else {
            let vartheta = theta_eff(alloc, self.theta(), n - 1, n - 1)?;
            if vartheta == f64::INFINITY {
                0.0
            } else {
                let load = self.boosted_load(m, vartheta, vartheta / self.theta(), void_aware);
                Self::ordered_product(n, k, load)
            }
        };
        finite_or_quadrature(value)
    }

    pub fn coverage(
        &self,
        alloc: &PowerAllocation,
        m: usize,
        k: usize,
        scheme: Scheme,
        void_aware: bool,
    ) -> Result<f64> {
        match scheme {
            Scheme::NonCoordinated => self.coverage_noncoord(alloc, m, k, void_aware),
            Scheme::CoordinatedJt => self.coverage_jt(alloc, m, k, void_aware),
        }
    }

    /// Conditional rate of a user that cancels the farther users' signals:
    /// `int_{v}^inf prod_{j<=k} [(n-j)+L(v)] / [(n-j)+L(y)] frac(y) dy
    /// + log(1 + beta_k v / (v sum_{<k} beta + 1))`.
    fn sic_rate(&self, alloc: &PowerAllocation, m: usize, k: usize, n: usize, vartheta: f64) -> Result<f64> {
        let beta = alloc.beta(k);
        let below = alloc.prefix(k);
        let upto = below + beta;
        let base = self.load(m, vartheta, true);
        let integral = self.quad.integrate_to_infinity(
            |y| {
                let ly = self.load(m, y, true);
                let ratio: f64 = (0..=k)
                    .map(|j| {
                        let c = (n - j) as f64;
                        (c + base) / (c + ly)
                    })
                    .product();
                ratio * beta / ((1.0 + y * upto) * (1.0 + y * below))
            },
            vartheta,
        )?;
        Ok(integral.value + (beta * vartheta / (vartheta * below + 1.0)).ln_1p())
    }

    /// Smallest `x` with `L(x) >= target`.
    fn invert_load(&self, m: usize, target: f64) -> f64 {
        if target <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (1.0, 1.0);
        while self.load(m, lo, true) > target && lo > 1e-300 {
            lo *= 1e-3;
        }
        while self.load(m, hi, true) < target {
            hi *= 1e3;
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if self.load(m, mid, true) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-14 {
                break;
            }
        }
        hi
    }

    /// `int_0^inf [P(y) - P(y / (1 - beta))] dy / (1 + y)` with
    /// `P(x) = prod_{j<n} (n-j) / ((n-j) + L(x))`.
    fn unconditional_rate(&self, m: usize, n: usize, beta: f64) -> Result<f64> {
        let rest = 1.0 - beta;
        let value = self.quad.integrate_to_infinity(
            |y| {
                let near = Self::ordered_product(n, n - 1, self.load(m, y, true));
                let far = if rest > 0.0 {
                    Self::ordered_product(n, n - 1, self.load(m, y / rest, true))
                } else {
                    0.0
                };
                (near - far) / (1.0 + y)
            },
            0.0,
        )?;
        Ok(value.value)
    }

    fn check_interference(&self, m: usize) -> Result<()> {
        let any = (0..self.config.num_tiers()).any(|l| self.nonvoid[l] * self.stats.assoc_prob[l] > 0.0);
        if any {
            Ok(())
        } else {
            Err(Error::Divergent(format!(
                "tier {m} sees no interference, the rate integral is unbounded"
            )))
        }
    }

    /// Link throughput (nats/Hz) under non-coordinated NOMA: the mean rate
    /// given that the user cancels every farther signal. Zero when the user
    /// cannot complete its decode chain.
    pub fn throughput_noncoord(&self, alloc: &PowerAllocation, m: usize, k: usize) -> Result<f64> {
        Ok(self.link_rate(alloc, m, k, Scheme::NonCoordinated)?.0)
    }

    /// Link throughput (nats/Hz) under JT-NOMA.
    pub fn throughput_jt(&self, alloc: &PowerAllocation, m: usize, k: usize) -> Result<f64> {
        Ok(self.link_rate(alloc, m, k, Scheme::CoordinatedJt)?.0)
    }

    /// Probability of the event the link throughput is conditioned on (one
    /// for users that cancel nothing).
    pub fn sic_success_probability(&self, alloc: &PowerAllocation, m: usize, k: usize, scheme: Scheme) -> Result<f64> {
        Ok(self.link_rate(alloc, m, k, scheme)?.1)
    }

    /// Rate actually delivered to user `k`: the link throughput times the
    /// probability that SIC succeeds.
    pub fn delivered_throughput(&self, alloc: &PowerAllocation, m: usize, k: usize, scheme: Scheme) -> Result<f64> {
        let (rate, weight) = self.link_rate(alloc, m, k, scheme)?;
        Ok(rate * weight)
    }

    /// `(conditional rate, probability of the conditioning event)`.
    fn link_rate(&self, alloc: &PowerAllocation, m: usize, k: usize, scheme: Scheme) -> Result<(f64, f64)> {
        self.config.check_tier(m)?;
        self.check_user(alloc, k)?;
        self.check_interference(m)?;
        let n = alloc.len();
        let theta = self.theta();
        let sic = |n: usize, vartheta: f64| -> Result<(f64, f64)> {
            let rate = self.sic_rate(alloc, m, k, n, vartheta)?;
            Ok((rate, Self::ordered_product(n, k, self.load(m, vartheta, true))))
        };
        match scheme {
            Scheme::NonCoordinated => {
                if theta_eff(alloc, theta, k, n - 1)? == f64::INFINITY {
                    return Ok((0.0, 0.0));
                }
                if k + 1 < n {
                    sic(n, theta_eff(alloc, theta, k + 1, n - 1)?)
                } else {
                    Ok((self.unconditional_rate(m, n, alloc.beta(k))?, 1.0))
                }
            }
            Scheme::CoordinatedJt => {
                if k + 1 == n {
                    if theta_eff(alloc, theta, k, k)? == f64::INFINITY {
                        return Ok((0.0, 0.0));
                    }
                    return Ok((self.farthest_jt_rate(alloc, m)?, 1.0));
                }
                if theta_eff(alloc, theta, k, n - 2)? == f64::INFINITY {
                    return Ok((0.0, 0.0));
                }
                if k + 2 < n {
                    sic(n - 1, theta_eff(alloc, theta, k + 1, n - 2)?)
                } else {
                    let last = theta_eff(alloc, theta, n - 1, n - 1)?;
                    if last == f64::INFINITY {
                        return Ok((0.0, 0.0));
                    }
                    // The farthest signal is cancelled once the boosted condition
                    // holds; that event is mapped onto a plain threshold on the
                    // desired SIR with the same probability.
                    let boosted = self.boosted_load(m, last, last / theta, true);
                    sic(n, self.invert_load(m, boosted))
                }
            }
        }
    }

    /// Integral of the farthest user's JT coverage, taken at threshold `y`,
    /// against `dy / (1 + y)` over `(0, beta_K / sum_{n<K} beta_n)`.
    fn farthest_jt_rate(&self, alloc: &PowerAllocation, m: usize) -> Result<f64> {
        let n = alloc.len();
        let last = alloc.beta(n - 1);
        let below = alloc.prefix(n - 1);
        let integrand = |y: f64| {
            let denom = last - y * below;
            if denom <= 0.0 {
                return 0.0;
            }
            let y_eff = y / denom;
            let load = self.boosted_load(m, y_eff, y_eff / y, true);
            Self::ordered_product(n, n - 1, load) / (1.0 + y)
        };
        let value = if below > 0.0 {
            self.quad.integrate(integrand, 0.0, last / below)?
        } else {
            self.quad.integrate_to_infinity(integrand, 0.0)?
        };
        Ok(value.value)
    }

    pub fn throughput(&self, alloc: &PowerAllocation, m: usize, k: usize, scheme: Scheme) -> Result<f64> {
        match scheme {
            Scheme::NonCoordinated => self.throughput_noncoord(alloc, m, k),
            Scheme::CoordinatedJt => self.throughput_jt(alloc, m, k),
        }
    }

    /// Rate of a BS serving a single user with full power.
    pub fn single_user_throughput(&self, m: usize) -> Result<f64> {
        self.config.check_tier(m)?;
        self.check_interference(m)?;
        let value = self
            .quad
            .integrate_to_infinity(|y| 1.0 / ((1.0 + y) * (1.0 + self.load(m, y, true))), 0.0)?;
        Ok(value.value)
    }

    /// Mean coverage over the K users.
    pub fn cell_coverage(&self, alloc: &PowerAllocation, m: usize, scheme: Scheme) -> Result<f64> {
        let n = alloc.len();
        let mut total = 0.0;
        for k in 0..n {
            total += self.coverage(alloc, m, k, scheme, true)?;
        }
        Ok(total / n as f64)
    }

    /// Sum of the K link throughputs.
    pub fn sum_link_throughput(&self, alloc: &PowerAllocation, m: usize, scheme: Scheme) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..alloc.len() {
            total += self.throughput(alloc, m, k, scheme)?;
        }
        Ok(total)
    }

    /// Sum of the delivered rates. Unlike the sum of link throughputs this
    /// vanishes as the allocation approaches the feasibility boundary.
    pub fn cell_throughput(&self, alloc: &PowerAllocation, m: usize, scheme: Scheme) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..alloc.len() {
            total += self.delivered_throughput(alloc, m, k, scheme)?;
        }
        Ok(total)
    }

    /// All users' coverage as a metric record.
    pub fn coverage_all(&self, alloc: &PowerAllocation, m: usize, scheme: Scheme, void_aware: bool) -> Result<MetricResult> {
        let values = (0..alloc.len())
            .map(|k| self.coverage(alloc, m, k, scheme, void_aware))
            .collect::<Result<Vec<_>>>()?;
        let kind = if !void_aware {
            MetricKind::AnalyticLimit
        } else if scheme == Scheme::CoordinatedJt {
            MetricKind::AnalyticApprox
        } else {
            MetricKind::AnalyticBound
        };
        Ok(MetricResult::analytic(values, kind))
    }

    pub fn throughput_all(&self, alloc: &PowerAllocation, m: usize, scheme: Scheme) -> Result<MetricResult> {
        let values = (0..alloc.len())
            .map(|k| self.throughput(alloc, m, k, scheme))
            .collect::<Result<Vec<_>>>()?;
        let kind = match scheme {
            Scheme::NonCoordinated => MetricKind::AnalyticBound,
            Scheme::CoordinatedJt => MetricKind::AnalyticApprox,
        };
        Ok(MetricResult::analytic(values, kind))
    }
}

fn finite_or_quadrature(v: f64) -> Result<f64> {
    if v.is_nan() {
        Err(Error::Quadrature(crate::quadrature::QuadratureError::NonFinite(v)))
    } else {
        Ok(v)
    }
}
