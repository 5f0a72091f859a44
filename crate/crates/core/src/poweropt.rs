//! Feasible power allocations and the cell-level optimizers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{Analytics, PowerAllocation, Scheme};
use crate::error::{Error, Result};

/// Slack applied to strict inequalities when screening lattice points.
pub const MARGIN: f64 = 1e-9;

/// `coeffs . beta < 0` (strict) or `<= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub strict: bool,
}

impl Constraint {
    fn slack(&self, betas: &[f64]) -> f64 {
        -self.coeffs.iter().zip(betas).map(|(c, b)| c * b).sum::<f64>()
    }

    fn holds(&self, betas: &[f64], margin: f64) -> bool {
        let s = self.slack(betas);
        if self.strict {
            s > margin
        } else {
            s >= -margin
        }
    }
}

/// Readable `beta_{from+1} + .. + beta_{to}` (0-based half-open range).
fn beta_sum(from: usize, to: usize) -> String {
    match to - from {
        0 => "0".into(),
        1 => format!("beta_{}", from + 1),
        2 => format!("(beta_{} + beta_{})", from + 1, to),
        _ => format!("(beta_{} + .. + beta_{})", from + 1, to),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibleRegion {
    pub scheme: Scheme,
    pub theta: f64,
    pub group_size: usize,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// First violated constraint.
    pub violated: Option<String>,
}

impl FeasibleRegion {
    pub fn new(scheme: Scheme, theta: f64, group_size: usize) -> Self {
        let k = group_size;
        let mut constraints = Vec::new();
        // theta sum_{n<l} beta_n < beta_l
        let decode = |l: usize| {
            let mut c = vec![0.0; k];
            c[..l].iter_mut().for_each(|x| *x = theta);
            c[l] -= 1.0;
            Constraint {
                name: format!("theta * {} < beta_{}", beta_sum(0, l), l + 1),
                coeffs: c,
                strict: true,
            }
        };
        match scheme {
            Scheme::NonCoordinated => constraints.extend((0..k).map(decode)),
            Scheme::CoordinatedJt => {
                constraints.extend((0..k).map(decode));
                // beta_l + theta sum_{n=l}^{K-1} beta_n < beta_K
                for l in 0..k.saturating_sub(1) {
                    let mut c = vec![0.0; k];
                    c[l] += 1.0;
                    c[l..k - 1].iter_mut().for_each(|x| *x += theta);
                    c[k - 1] -= 1.0;
                    constraints.push(Constraint {
                        name: format!("beta_{} + theta * {} < beta_{k}", l + 1, beta_sum(l, k - 1)),
                        coeffs: c,
                        strict: true,
                    });
                }
            }
        }
        Self {
            scheme,
            theta,
            group_size,
            constraints,
        }
    }

    pub fn check_with_margin(&self, alloc: &PowerAllocation, margin: f64) -> Feasibility {
        if alloc.len() != self.group_size {
            return Feasibility {
                feasible: false,
                violated: Some(format!("{} fractions for K = {}", alloc.len(), self.group_size)),
            };
        }
        let betas = alloc.betas();
        match self.constraints.iter().find(|c| !c.holds(betas, margin)) {
            Some(c) => Feasibility {
                feasible: false,
                violated: Some(c.name.clone()),
            },
            None => Feasibility {
                feasible: true,
                violated: None,
            },
        }
    }

    pub fn check(&self, alloc: &PowerAllocation) -> Feasibility {
        self.check_with_margin(alloc, 0.0)
    }
}

pub fn feasible(alloc: &PowerAllocation, theta: f64, scheme: Scheme) -> Feasibility {
    FeasibleRegion::new(scheme, theta, alloc.len()).check(alloc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Grid,
    PatternSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    CellCoverage,
    CellThroughput,
}

impl Objective {
    pub fn evaluate(self, analytics: &Analytics, alloc: &PowerAllocation, m: usize, scheme: Scheme) -> Result<f64> {
        match self {
            Objective::CellCoverage => analytics.cell_coverage(alloc, m, scheme),
            Objective::CellThroughput => analytics.cell_throughput(alloc, m, scheme),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_alloc: PowerAllocation,
    pub best_value: f64,
    pub evaluations: usize,
    pub method: Method,
}

/// Lattice step used when none is given.
pub fn default_resolution(group_size: usize) -> f64 {
    match group_size {
        0..=2 => 0.01,
        3 => 0.02,
        _ => 0.05,
    }
}

/// Strictly increasing allocations `n_i / N` with positive integers `n_i`
/// summing to `N = round(1 / step)`.
pub fn simplex_lattice(group_size: usize, step: f64) -> Result<Vec<PowerAllocation>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("lattice step must be in (0, 1], got {step}")));
    }
    let total = (1.0 / step).round() as usize;
    let mut out = Vec::new();
    let mut parts = Vec::with_capacity(group_size);
    fn walk(k: usize, remaining: usize, min: usize, total: usize, parts: &mut Vec<usize>, out: &mut Vec<PowerAllocation>) {
        if k == 1 {
            if remaining >= min {
                parts.push(remaining);
                let betas = parts.iter().map(|&n| n as f64 / total as f64).collect();
                if let Ok(a) = PowerAllocation::new(betas) {
                    out.push(a);
                }
                parts.pop();
            }
            return;
        }
        // Every later part exceeds this one.
        let mut n = min;
        while n * k + k * (k - 1) / 2 <= remaining {
            parts.push(n);
            walk(k - 1, remaining - n, n + 1, total, parts, out);
            parts.pop();
            n += 1;
        }
    }
    if group_size == 0 {
        return Ok(out);
    }
    walk(group_size, total, 1, total, &mut parts, &mut out);
    Ok(out)
}

fn lexicographic_better(a: (&[f64], f64), b: (&[f64], f64)) -> bool {
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    a.0.iter().zip(b.0).find(|(x, y)| x != y).is_some_and(|(x, y)| x < y)
}

fn argmax(points: Vec<(PowerAllocation, f64)>) -> Option<(PowerAllocation, f64)> {
    points.into_iter().fold(None, |best, (a, v)| match best {
        None => Some((a, v)),
        Some((ba, bv)) => {
            if lexicographic_better((a.betas(), v), (ba.betas(), bv)) {
                Some((a, v))
            } else {
                Some((ba, bv))
            }
        }
    })
}

/// Maximizes `objective` for tier `m` over the feasible allocations.
pub fn optimize(
    analytics: &Analytics,
    m: usize,
    scheme: Scheme,
    objective: Objective,
    method: Method,
    resolution: Option<f64>,
) -> Result<OptResult> {
    let config = analytics.config();
    config.check_tier(m)?;
    let k = config.group_size;
    let theta = config.sir_threshold;
    let region = FeasibleRegion::new(scheme, theta, k);
    if k == 1 {
        let alloc = PowerAllocation::single();
        if !region.check(&alloc).feasible {
            return Err(Error::EmptyFeasibleRegion("single user".into()));
        }
        let value = objective.evaluate(analytics, &alloc, m, scheme)?;
        return Ok(OptResult {
            best_alloc: alloc,
            best_value: value,
            evaluations: 1,
            method,
        });
    }
    let step = resolution.unwrap_or_else(|| default_resolution(k));
    let candidates: Vec<PowerAllocation> = simplex_lattice(k, step)?
        .into_iter()
        .filter(|a| region.check_with_margin(a, MARGIN).feasible)
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyFeasibleRegion(format!(
            "no lattice point at step {step} satisfies the {scheme} constraints for theta = {theta}"
        )));
    }
    let mut evaluations = candidates.len();
    let scored = candidates
        .into_par_iter()
        .map(|a| objective.evaluate(analytics, &a, m, scheme).map(|v| (a, v)))
        .collect::<Result<Vec<_>>>()?;
    let (mut best, mut best_value) = argmax(scored).expect("non-empty");

    if method == Method::PatternSearch {
        let mut s = step / 2.0;
        let floor = step * 1e-4;
        while s >= floor {
            let moves: Vec<PowerAllocation> = pattern_moves(best.betas(), s)
                .into_iter()
                .filter(|a| region.check_with_margin(a, MARGIN).feasible)
                .collect();
            evaluations += moves.len();
            let scored = moves
                .into_par_iter()
                .map(|a| objective.evaluate(analytics, &a, m, scheme).map(|v| (a, v)))
                .collect::<Result<Vec<_>>>()?;
            match argmax(scored) {
                Some((a, v)) if v > best_value => {
                    best = a;
                    best_value = v;
                }
                _ => s /= 2.0,
            }
        }
    }
    Ok(OptResult {
        best_alloc: best,
        best_value,
        evaluations,
        method,
    })
}

/// Moves `s` of power from one user to another, keeping the sum at one.
fn pattern_moves(betas: &[f64], s: f64) -> Vec<PowerAllocation> {
    let k = betas.len();
    let mut out = Vec::new();
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let mut b = betas.to_vec();
            b[i] += s;
            b[j] -= s;
            let rest: f64 = b[..k - 1].iter().sum();
            b[k - 1] = 1.0 - rest;
            if let Ok(a) = PowerAllocation::new(b) {
                out.push(a);
            }
        }
    }
    out
}

pub fn optimize_cell_coverage(
    analytics: &Analytics,
    m: usize,
    scheme: Scheme,
    method: Method,
    resolution: Option<f64>,
) -> Result<OptResult> {
    optimize(analytics, m, scheme, Objective::CellCoverage, method, resolution)
}

pub fn optimize_cell_throughput(
    analytics: &Analytics,
    m: usize,
    scheme: Scheme,
    method: Method,
    resolution: Option<f64>,
) -> Result<OptResult> {
    optimize(analytics, m, scheme, Objective::CellThroughput, method, resolution)
}
