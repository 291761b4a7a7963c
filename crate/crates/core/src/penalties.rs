//! MCP, group MCP and sparse group MCP: penalty values and the exact
//! single-group minimizers used by coordinate descent.
//!
//! Every update below minimizes `½‖z − β‖² + P(β)` for an orthonormalized group.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    Mcp,
    GroupMcp,
    SparseGroupMcp,
}

impl PenaltyKind {
    pub fn default_gamma(self) -> f64 {
        match self {
            PenaltyKind::Mcp | PenaltyKind::GroupMcp => 3.0,
            PenaltyKind::SparseGroupMcp => 6.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mcp" => Ok(PenaltyKind::Mcp),
            "group_mcp" => Ok(PenaltyKind::GroupMcp),
            "sparse_group_mcp" => Ok(PenaltyKind::SparseGroupMcp),
            other => Err(Error::Config(format!("unknown penalty `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::Mcp => "mcp",
            PenaltyKind::GroupMcp => "group_mcp",
            PenaltyKind::SparseGroupMcp => "sparse_group_mcp",
        }
    }
}

/// Penalty family and its shape parameters; λ itself is supplied per path point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub gamma: f64,
    /// λ₂ = ratio · λ₁ for the sparse group penalty.
    pub lambda2_ratio: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind) -> Self {
        Self { kind, gamma: kind.default_gamma(), lambda2_ratio: 1.0 }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::Config(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.lambda2_ratio >= 0.0) || !self.lambda2_ratio.is_finite() {
            return Err(Error::Config(format!("lambda2_ratio must be finite and >= 0, got {}", self.lambda2_ratio)));
        }
        Ok(())
    }

    /// Penalty of one group's coefficients at level λ.
    pub fn value(&self, beta: &DVector<f64>, lambda: f64) -> f64 {
        let m = beta.len() as f64;
        match self.kind {
            PenaltyKind::Mcp => beta.iter().map(|&b| mcp_value(b, lambda, self.gamma)).sum(),
            PenaltyKind::GroupMcp => mcp_value(beta.norm(), m.sqrt() * lambda, self.gamma),
            PenaltyKind::SparseGroupMcp => {
                let l2 = self.lambda2_ratio * lambda;
                mcp_value(beta.norm(), m.sqrt() * lambda, self.gamma)
                    + beta.iter().map(|&b| mcp_value(b, l2, self.gamma)).sum::<f64>()
            }
        }
    }

    /// Exact minimizer of `½‖z − β‖² + P(β)`; `current` seeds the inner fixed point.
    pub fn update(&self, z: &DVector<f64>, current: &DVector<f64>, lambda: f64) -> DVector<f64> {
        match self.kind {
            PenaltyKind::Mcp => z.map(|v| firm_threshold(v, lambda, self.gamma)),
            PenaltyKind::GroupMcp => group_threshold(z, lambda, self.gamma),
            PenaltyKind::SparseGroupMcp => {
                sparse_group_update(z, current, lambda, self.lambda2_ratio * lambda, self.gamma).beta
            }
        }
    }

    /// True when β = 0 is the minimizer for this z.
    pub fn zero_at(&self, z: &DVector<f64>, lambda: f64) -> bool {
        let m = z.len() as f64;
        match self.kind {
            PenaltyKind::Mcp => z.iter().all(|v| v.abs() <= lambda),
            PenaltyKind::GroupMcp => z.norm() <= m.sqrt() * lambda,
            PenaltyKind::SparseGroupMcp => {
                let l2 = self.lambda2_ratio * lambda;
                z.map(|v| soft_threshold(v, l2)).norm() <= m.sqrt() * lambda
            }
        }
    }
}

/// `ρ(t; λ, γ) = ∫₀^|t| (λ − x/γ)₊ dx`.
pub fn mcp_value(t: f64, lambda: f64, gamma: f64) -> f64 {
    let a = t.abs();
    if a <= gamma * lambda {
        lambda * a - a * a / (2.0 * gamma)
    } else {
        gamma * lambda * lambda / 2.0
    }
}

pub fn mcp_derivative(t: f64, lambda: f64, gamma: f64) -> f64 {
    if t == 0.0 || lambda <= 0.0 {
        return 0.0;
    }
    lambda * (1.0 - t.abs() / (gamma * lambda)).max(0.0) * t.signum()
}

/// `S₂(z, λ) = sgn(z)(|z| − λ)₊`.
pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z.abs() <= lambda {
        0.0
    } else {
        z.signum() * (z.abs() - lambda)
    }
}

/// Scalar MCP minimizer.
pub fn firm_threshold(z: f64, lambda: f64, gamma: f64) -> f64 {
    if z.abs() > gamma * lambda {
        z
    } else {
        gamma / (gamma - 1.0) * soft_threshold(z, lambda)
    }
}

/// Group MCP minimizer with `τ = √m λ`; ties at `‖z‖ = τ` resolve to zero.
pub fn group_threshold(z: &DVector<f64>, lambda: f64, gamma: f64) -> DVector<f64> {
    let tau = (z.len() as f64).sqrt() * lambda;
    let norm = z.norm();
    if norm <= tau {
        DVector::zeros(z.len())
    } else if norm > gamma * tau {
        z.clone()
    } else {
        z * (gamma / (gamma - 1.0) * (1.0 - tau / norm))
    }
}

#[derive(Debug, Clone)]
pub struct SparseGroupUpdate {
    pub beta: DVector<f64>,
    pub iterations: usize,
    /// γ ≤ 2: the single-group objective may have several stationary points.
    pub nonconvex: bool,
}

/// Sparse group MCP minimizer.
///
/// Stationarity reads `g β_k + ρ'(β_k; λ₂) = z_k` with group multiplier
/// `g = 1 + (√m λ₁ − ‖β‖/γ)₊ / ‖β‖`. For fixed g each coordinate has a closed
/// form, so the update iterates on `r = ‖β‖` until it stops moving (1e-10),
/// falling back to bisection if the plain iteration does not settle.
///
/// For γ > 2 the objective is strictly convex and that stationary point is the
/// minimizer. For γ ≤ 2 it may be one of several, so every stationary point is
/// enumerated and the lowest objective wins.
pub fn sparse_group_update(
    z: &DVector<f64>,
    current: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    gamma: f64,
) -> SparseGroupUpdate {
    let nonconvex = gamma <= 2.0;
    let (beta, iterations) = sparse_group_fixed_point(z, current, lambda1, lambda2, gamma);
    if !nonconvex {
        return SparseGroupUpdate { beta, iterations, nonconvex };
    }
    let beta = sparse_group_global(z, beta, lambda1, lambda2, gamma);
    SparseGroupUpdate { beta, iterations, nonconvex }
}

fn sparse_group_objective(z: &DVector<f64>, beta: &DVector<f64>, lambda1: f64, lambda2: f64, gamma: f64) -> f64 {
    let tau = (z.len() as f64).sqrt() * lambda1;
    0.5 * (z - beta).norm_squared()
        + mcp_value(beta.norm(), tau, gamma)
        + beta.iter().map(|&b| mcp_value(b, lambda2, gamma)).sum::<f64>()
}

/// Best of all stationary points. Inside the group-MCP region (‖β‖ < γτ) a
/// coordinate is either zero, in its own MCP region with
/// `β_k = (z_k − λ₂ sgn z_k) r / ((1 − 2/γ) r + τ)`, or saturated with
/// `β_k = z_k r / ((1 − 1/γ) r + τ)`; each pattern leaves one equation
/// `Σ β_k(r)² = r²` whose roots are bracketed on a grid and bisected. Beyond
/// γτ the group penalty is flat and the coordinates decouple into firm
/// thresholds. Ties keep the sparser candidate.
fn sparse_group_global(z: &DVector<f64>, fixed_point: DVector<f64>, lambda1: f64, lambda2: f64, gamma: f64) -> DVector<f64> {
    let m = z.len();
    let tau = (m as f64).sqrt() * lambda1;
    let f = |b: &DVector<f64>| sparse_group_objective(z, b, lambda1, lambda2, gamma);
    let mut candidates = vec![DVector::zeros(m), fixed_point, z.map(|v| firm_threshold(v, lambda2, gamma))];
    if tau > 0.0 {
        let (a_mcp, a_flat) = (1.0 - 2.0 / gamma, 1.0 - 1.0 / gamma);
        let r_max = gamma * tau;
        let grid = 2000;
        let mut pattern = vec![0u8; m];
        loop {
            let mut k = 0;
            while k < m {
                pattern[k] += 1;
                if pattern[k] < 3 {
                    break;
                }
                pattern[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
            let terms: Vec<(usize, f64, f64)> = (0..m)
                .filter_map(|k| match pattern[k] {
                    1 if z[k].abs() > lambda2 => Some((k, z[k] - lambda2 * z[k].signum(), a_mcp)),
                    2 => Some((k, z[k], a_flat)),
                    _ => None,
                })
                .collect();
            if terms.len() != pattern.iter().filter(|&&p| p != 0).count() {
                continue;
            }
            let psi = |r: f64| terms.iter().map(|&(_, a, c)| (a / (c * r + tau)).powi(2)).sum::<f64>() - 1.0;
            let build = |r: f64| {
                let mut b = DVector::zeros(m);
                for &(k, a, c) in &terms {
                    b[k] = a * r / (c * r + tau);
                }
                b
            };
            let mut prev = (0.0, psi(0.0));
            for i in 1..=grid {
                let r = r_max * i as f64 / grid as f64;
                let cur = (r, psi(r));
                if prev.1.is_finite() && cur.1.is_finite() && prev.1.signum() != cur.1.signum() {
                    let (mut lo, mut hi) = (prev.0, cur.0);
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if mid <= lo || mid >= hi {
                            break;
                        }
                        if psi(mid).signum() == prev.1.signum() {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    candidates.push(build(0.5 * (lo + hi)));
                }
                prev = cur;
            }
        }
    }
    let nnz = |b: &DVector<f64>| b.iter().filter(|&&v| v != 0.0).count();
    let mut best = candidates.swap_remove(0);
    let mut best_f = f(&best);
    for c in candidates {
        let fc = f(&c);
        let tie = 1e-14 * best_f.abs().max(1.0);
        if fc < best_f - tie || (fc <= best_f + tie && nnz(&c) < nnz(&best)) {
            best_f = fc;
            best = c;
        }
    }
    best
}

/// Stationary point from the fixed point in `r = ‖β‖`.
fn sparse_group_fixed_point(
    z: &DVector<f64>,
    current: &DVector<f64>,
    lambda1: f64,
    lambda2: f64,
    gamma: f64,
) -> (DVector<f64>, usize) {
    let m = z.len();
    let tau = (m as f64).sqrt() * lambda1;
    let s2_norm = z.map(|v| soft_threshold(v, lambda2)).norm();
    if s2_norm <= tau {
        return (DVector::zeros(m), 0);
    }
    let beta_at = |r: f64| -> DVector<f64> {
        let g = if r > 0.0 { 1.0 + (tau - r / gamma).max(0.0) / r } else { f64::INFINITY };
        z.map(|zk| {
            if zk.abs() <= gamma * lambda2 * g {
                soft_threshold(zk, lambda2) / (g - 1.0 / gamma)
            } else {
                zk / g
            }
        })
    };
    let phi = |r: f64| beta_at(r).norm() - r;

    let mut r = current.norm();
    if !(r > 0.0) {
        r = z.norm();
    }
    let mut iterations = 0;
    let mut settled = false;
    while iterations < 200 {
        iterations += 1;
        let next = beta_at(r).norm();
        let done = (next - r).abs() < 1e-10 * (1.0 + r) * 1e-2;
        r = next;
        if done && r > 0.0 {
            settled = true;
            break;
        }
        if !(r > 0.0) {
            break;
        }
    }
    if !settled || phi(r).abs() > 1e-10 {
        // φ(r) > 0 near zero whenever β = 0 is not optimal, and φ < 0 for large r
        let mut lo = 0.0;
        let mut hi = z.norm().max(1e-300);
        while phi(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if phi(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            iterations += 1;
        }
        r = if phi(hi).abs() < phi(lo).abs() || lo == 0.0 { hi } else { lo };
    }
    (beta_at(r), iterations)
}
