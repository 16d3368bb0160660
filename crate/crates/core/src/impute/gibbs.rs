//! Gibbs sampler for Bayesian linear regression with Student-t coefficient
//! priors and a half-t prior on the residual SD.
//!
//! Both heavy-tailed priors are written as scale mixtures of conjugate
//! distributions: a t prior on a coefficient is a normal with an
//! inverse-gamma variance multiplier, and a half-t on sigma is an inverse-gamma
//! on sigma² whose scale has its own inverse-gamma prior. Every full conditional
//! is then normal or inverse-gamma, and each sweep only needs X'X, X'y and y'y.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub(crate) struct SufficientStats {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
}

impl SufficientStats {
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Self {
        let p = rows.first().map_or(0, Vec::len);
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        for (x, &yi) in rows.iter().zip(y) {
            for a in 0..p {
                xty[a] += x[a] * yi;
                for b in 0..=a {
                    xtx[(a, b)] += x[a] * x[b];
                }
            }
            yty += yi * yi;
        }
        for a in 0..p {
            for b in 0..a {
                xtx[(b, a)] = xtx[(a, b)];
            }
        }
        SufficientStats { xtx, xty, yty, n: y.len() }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Prior {
    /// Prior location of each coefficient.
    pub location: DVector<f64>,
    pub scale: f64,
    pub df: f64,
    /// Scale of the half-t prior on sigma.
    pub sigma_scale: f64,
}

fn inv_gamma(rng: &mut StreamRng, shape: f64, rate: f64) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
    rate / g
}

/// Runs one chain for `iterations` sweeps; each returned row holds the
/// coefficients followed by sigma.
pub(crate) fn run_chain(
    stats: &SufficientStats,
    prior: &Prior,
    iterations: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    let p = stats.xty.len();
    let n = stats.n as f64;
    // Work with unit-scaled columns so the precision matrix is well conditioned.
    let d: DVector<f64> = stats.xtx.diagonal().map(|v| (v / n).sqrt().max(f64::MIN_POSITIVE));
    let xtx = DMatrix::from_fn(p, p, |a, b| stats.xtx[(a, b)] / (d[a] * d[b]));
    let xty = DVector::from_fn(p, |a, _| stats.xty[a] / d[a]);
    let mu = prior.location.component_mul(&d);
    let s2: DVector<f64> = d.map(|v| (v * prior.scale).powi(2));
    let nu = prior.df;

    let mut lambda = DVector::from_element(p, 1.0);
    let mut a = 1.0;
    // Start sigma² at the least-squares residual variance, perturbed by up to
    // a factor of e either way so that chains start apart.
    let ols = Cholesky::new(xtx.clone()).ok_or(Error::SingularCovariance)?.solve(&xty);
    let rss_ols = (stats.yty - ols.dot(&xty)).max(f64::MIN_POSITIVE);
    let mut sigma2 = rss_ols / (n - p as f64).max(1.0) * rng.random_range(-1.0f64..1.0).exp();
    let mut out = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        let mut precision = &xtx / sigma2;
        let mut rhs = &xty / sigma2;
        for k in 0..p {
            let w = 1.0 / (lambda[k] * s2[k]);
            precision[(k, k)] += w;
            rhs[k] += w * mu[k];
        }
        let chol = Cholesky::new(precision).ok_or(Error::SingularCovariance)?;
        let mean = chol.solve(&rhs);
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let noise = chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("cholesky factor has a positive diagonal");
        let beta = mean + noise;

        for k in 0..p {
            let dev = (beta[k] - mu[k]).powi(2) / s2[k];
            lambda[k] = inv_gamma(rng, (nu + 1.0) / 2.0, (nu + dev) / 2.0);
        }
        let rss = (stats.yty - 2.0 * beta.dot(&xty) + beta.dot(&(&xtx * &beta))).max(0.0);
        sigma2 = inv_gamma(rng, (n + nu) / 2.0, rss / 2.0 + nu / a);
        a = inv_gamma(rng, (nu + 1.0) / 2.0, nu / sigma2 + 1.0 / prior.sigma_scale.powi(2));

        let mut row: Vec<f64> = (0..p).map(|k| beta[k] / d[k]).collect();
        row.push(sigma2.sqrt());
        out.push(row);
    }
    Ok(out)
}
