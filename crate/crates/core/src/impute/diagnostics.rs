//! Rank-normalized split-chain R-hat and effective sample sizes.
//!
//! Chains are split in half, pooled draws are replaced by normal scores of
//! their ranks, and R-hat is the larger of the values for the normalized draws
//! and for their folded distances from the median. Effective sample sizes use
//! Geyer's initial monotone sequence on the averaged autocorrelations.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::stats::{average_ranks, mean, quantile, variance};

fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let ranks = average_ranks(&pooled);
    let mut k = 0;
    chains
        .iter()
        .map(|c| {
            c.iter()
                .map(|_| {
                    let z = normal.inverse_cdf((ranks[k] - 0.375) / (s + 0.25));
                    k += 1;
                    z
                })
                .collect()
        })
        .collect()
}

fn reshape_like(values: impl Iterator<Item = f64>, chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut it = values;
    chains
        .iter()
        .map(|c| c.iter().map(|_| it.next().unwrap()).collect())
        .collect()
}

/// Classic potential scale reduction factor over (already split) chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * variance(&means);
    let w = mean(&chains.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return if b > 0.0 || m < 2.0 { f64::INFINITY } else { 1.0 };
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

/// Rank-normalized split R-hat; needs at least two chains of at least four draws.
pub fn rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.len() < 2 || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let sp = split(chains);
    let bulk = basic_rhat(&rank_normalize(&sp));
    let pooled: Vec<f64> = sp.iter().flatten().copied().collect();
    let med = quantile(&pooled, 0.5);
    let folded = reshape_like(pooled.iter().map(|x| (x - med).abs()), &sp);
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    let c: Vec<f64> = x.iter().map(|v| v - m).collect();
    (0..n)
        .map(|lag| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64)
        .collect()
}

/// Effective sample size of the given chains (no splitting or normalization).
pub fn ess_raw(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return f64::NAN;
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let acov: Vec<Vec<f64>> = chains.iter().map(|c| autocovariance(c)).collect();
    let nf = n as f64;
    let chain_mean: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let mean_var = acov.iter().map(|a| a[0] * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += variance(&chain_mean);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let mean_acov = |t: usize| acov.iter().map(|a| a[t]).sum::<f64>() / m as f64;
    let rho = |t: usize| 1.0 - (mean_var - mean_acov(t)) / var_plus;

    let mut rho_hat = vec![0.0; n];
    rho_hat[0] = 1.0;
    let mut even = 1.0;
    let mut odd = rho(1);
    rho_hat[1] = odd;
    let mut t = 1;
    while t < n - 3 && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat[t + 1] = even;
            rho_hat[t + 2] = odd;
        }
        t += 2;
    }
    let max_t = t - 2;
    if even > 0.0 {
        rho_hat[max_t + 1] = even;
    }
    // Enforce a monotone sequence of paired sums.
    let mut t = 1;
    while t + 2 <= max_t {
        if rho_hat[t + 1] + rho_hat[t + 2] > rho_hat[t - 1] + rho_hat[t] {
            rho_hat[t + 1] = (rho_hat[t - 1] + rho_hat[t]) / 2.0;
            rho_hat[t + 2] = rho_hat[t + 1];
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let tau = -1.0 + 2.0 * rho_hat[..=max_t].iter().sum::<f64>() + rho_hat[max_t + 1];
    total / tau.max(1.0 / total.log10())
}

/// Bulk effective sample size: ESS of the rank-normalized split chains.
pub fn bulk_ess(chains: &[Vec<f64>]) -> f64 {
    ess_raw(&rank_normalize(&split(chains)))
}

/// Tail effective sample size: the smaller ESS of the 5% and 95% quantile indicators.
pub fn tail_ess(chains: &[Vec<f64>]) -> f64 {
    let sp = split(chains);
    let pooled: Vec<f64> = sp.iter().flatten().copied().collect();
    let ess_at = |q: f64| {
        let cut = quantile(&pooled, q);
        ess_raw(&reshape_like(pooled.iter().map(|&x| f64::from(u8::from(x <= cut))), &sp))
    };
    ess_at(0.05).min(ess_at(0.95))
}

/// Effective sample size for the mean (split chains, no rank normalization).
pub fn mean_ess(chains: &[Vec<f64>]) -> f64 {
    ess_raw(&split(chains))
}

/// Monte Carlo standard error of the posterior mean.
pub fn mcse_mean(chains: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = chains.iter().flatten().copied().collect();
    (variance(&pooled) / mean_ess(chains)).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcDiagnostics {
    pub parameters: Vec<String>,
    pub rhat: Vec<f64>,
    pub bulk_ess: Vec<f64>,
    pub tail_ess: Vec<f64>,
    /// Parameters whose R-hat exceeds the warning level.
    pub warnings: Vec<String>,
}

/// R-hat above which a parameter is flagged in [`McmcDiagnostics::warnings`].
pub const RHAT_WARNING: f64 = 1.05;

impl McmcDiagnostics {
    /// Diagnostics for each parameter; `draws[param][chain]` holds one chain.
    pub fn compute(parameters: Vec<String>, draws: &[Vec<Vec<f64>>]) -> Self {
        let rhat: Vec<f64> = draws.iter().map(|c| rhat(c)).collect();
        let warnings = parameters
            .iter()
            .zip(&rhat)
            .filter(|(_, &r)| !(r <= RHAT_WARNING))
            .map(|(p, r)| format!("{p}: rhat {r:.3}"))
            .collect();
        McmcDiagnostics {
            bulk_ess: draws.iter().map(|c| bulk_ess(c)).collect(),
            tail_ess: draws.iter().map(|c| tail_ess(c)).collect(),
            rhat,
            warnings,
            parameters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub passed: bool,
    /// One entry per violated threshold, naming the parameter.
    pub offenders: Vec<String>,
}

/// Passes when every R-hat is at most `rhat_max` and every ESS at least `ess_min`.
pub fn diagnostics_gate(diag: &McmcDiagnostics, rhat_max: f64, ess_min: f64) -> GateReport {
    let mut offenders = Vec::new();
    for (k, name) in diag.parameters.iter().enumerate() {
        if !(diag.rhat[k] <= rhat_max) {
            offenders.push(format!("{name}: rhat {} > {rhat_max}", diag.rhat[k]));
        }
        if !(diag.bulk_ess[k] >= ess_min) {
            offenders.push(format!("{name}: bulk ESS {} < {ess_min}", diag.bulk_ess[k]));
        }
        if !(diag.tail_ess[k] >= ess_min) {
            offenders.push(format!("{name}: tail ESS {} < {ess_min}", diag.tail_ess[k]));
        }
    }
    GateReport { passed: offenders.is_empty(), offenders }
}
