//! State-density estimation and the density-reciprocal weight.
//!
//! A Gaussian product kernel with diagonal bandwidth stands in for a learned
//! flow at desk scale: it is closed-form, strictly positive everywhere (the
//! weighting divides by the density), and adequate for the 2-4 dimensional
//! toy states used here. The weighting interface takes plain density values,
//! so any other estimator can be plugged in upstream.

use thiserror::Error;

/// Bandwidth floor substituted on zero-variance dimensions.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
/// Density floor applied by the weight before exponentiation; guards
/// far-query underflow.
pub const DENSITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("nonpositive density {0}")]
    NonPositiveDensity(f64),
    #[error("domain violation: {0}")]
    Domain(String),
}

/// Bandwidth selection rule for [`fit_kde`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// `h_j = sigma_j * n^(-1/(d+4))`
    Scott,
    /// `h_j = sigma_j * (4/(d+2))^(1/(d+4)) * n^(-1/(d+4))`
    Silverman,
    /// The same bandwidth on every dimension.
    Fixed(f64),
}

/// Gaussian product-kernel density model with per-dimension bandwidths.
#[derive(Debug, Clone)]
pub struct KdeModel {
    samples: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    dim: usize,
    fallback_dims: Vec<usize>,
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    /// Dimensions whose data variance was zero and whose bandwidth fell back
    /// to [`BANDWIDTH_FLOOR`].
    pub fn fallback_dims(&self) -> &[usize] {
        &self.fallback_dims
    }

    pub fn has_fallback(&self) -> bool {
        !self.fallback_dims.is_empty()
    }
}

/// Fit a KDE on `states` with the given bandwidth rule. Data-driven rules
/// need at least two samples; zero-variance dimensions fall back to
/// [`BANDWIDTH_FLOOR`] and are flagged on the model.
pub fn fit_kde(states: &[Vec<f64>], rule: BandwidthRule) -> Result<KdeModel, DensityError> {
    if states.is_empty() {
        return Err(DensityError::TooFewSamples(1));
    }
    let dim = states[0].len();
    if dim == 0 || states.iter().any(|s| s.len() != dim) {
        return Err(DensityError::Dimension("inconsistent state dimensions".into()));
    }
    let n = states.len();
    let mut fallback_dims = Vec::new();
    let bandwidth = match rule {
        BandwidthRule::Fixed(h) => {
            if h <= 0.0 {
                return Err(DensityError::Domain(format!("fixed bandwidth {h} <= 0")));
            }
            vec![h; dim]
        }
        data_driven => {
            if n < 2 {
                return Err(DensityError::TooFewSamples(2));
            }
            let factor = match data_driven {
                BandwidthRule::Scott => (n as f64).powf(-1.0 / (dim as f64 + 4.0)),
                BandwidthRule::Silverman => {
                    (4.0 / (dim as f64 + 2.0)).powf(1.0 / (dim as f64 + 4.0))
                        * (n as f64).powf(-1.0 / (dim as f64 + 4.0))
                }
                BandwidthRule::Fixed(_) => unreachable!(),
            };
            (0..dim)
                .map(|j| {
                    let mean = states.iter().map(|s| s[j]).sum::<f64>() / n as f64;
                    let var = states.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>()
                        / (n - 1) as f64;
                    let sigma = var.sqrt();
                    if sigma < 1e-300 {
                        fallback_dims.push(j);
                        BANDWIDTH_FLOOR
                    } else {
                        sigma * factor
                    }
                })
                .collect()
        }
    };
    Ok(KdeModel { samples: states.to_vec(), bandwidth, dim, fallback_dims })
}

/// Log-density at `s`: numerically stable log-sum-exp over kernels.
pub fn log_density(model: &KdeModel, s: &[f64]) -> Result<f64, DensityError> {
    if s.len() != model.dim {
        return Err(DensityError::Dimension(format!(
            "query dim {} vs model dim {}",
            s.len(),
            model.dim
        )));
    }
    // per-kernel log contribution: -0.5 sum_j z_j^2 + const
    let log_norm: f64 = model
        .bandwidth
        .iter()
        .map(|h| -(h * (2.0 * std::f64::consts::PI).sqrt()).ln())
        .sum();
    let mut exponents = Vec::with_capacity(model.samples.len());
    let mut max_e = f64::NEG_INFINITY;
    for x in &model.samples {
        let e: f64 = s
            .iter()
            .zip(x)
            .zip(&model.bandwidth)
            .map(|((&sj, &xj), &h)| {
                let z = (sj - xj) / h;
                -0.5 * z * z
            })
            .sum();
        max_e = max_e.max(e);
        exponents.push(e);
    }
    let sum: f64 = exponents.iter().map(|e| (e - max_e).exp()).sum();
    Ok(max_e + sum.ln() + log_norm - (model.samples.len() as f64).ln())
}

/// Density `d(s) = (1/n) sum_i prod_j K((s_j - x_ij)/h_j)/h_j` with the
/// standard normal kernel.
pub fn density(model: &KdeModel, s: &[f64]) -> Result<f64, DensityError> {
    Ok(log_density(model, s)?.exp())
}

/// Unit-area histogram of `log d(s)` over the given states.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// Per-bin `(left, right, density)`.
    pub bins: Vec<(f64, f64, f64)>,
}

impl Histogram {
    pub fn total_area(&self) -> f64 {
        self.bins.iter().map(|(l, r, d)| (r - l) * d).sum()
    }

    pub fn occupied_bins(&self) -> usize {
        self.bins.iter().filter(|(_, _, d)| *d > 0.0).count()
    }
}

/// Histogram the log-densities of `states` under `model` into `n_bins`
/// equal-width bins, normalized to unit area. A degenerate value range is
/// widened to unit width around the common value.
pub fn log_density_histogram(
    model: &KdeModel,
    states: &[Vec<f64>],
    n_bins: usize,
) -> Result<Histogram, DensityError> {
    if n_bins == 0 {
        return Err(DensityError::Domain("n_bins must be >= 1".into()));
    }
    if states.is_empty() {
        return Err(DensityError::TooFewSamples(1));
    }
    let values: Vec<f64> =
        states.iter().map(|s| log_density(model, s)).collect::<Result<_, _>>()?;
    let mut lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for &v in &values {
        let idx = (((v - lo) / width) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    let bins = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let left = lo + i as f64 * width;
            (left, left + width, c as f64 / (n * width))
        })
        .collect();
    Ok(Histogram { bins })
}

/// Density-reciprocal weight `q / d^tau`, with the density floored at
/// [`DENSITY_FLOOR`] before exponentiation. `tau = 0` disables the weighting.
pub fn sdw_weight(q_value: f64, d_s: f64, tau: f64) -> Result<f64, DensityError> {
    if d_s <= 0.0 {
        return Err(DensityError::NonPositiveDensity(d_s));
    }
    if tau < 0.0 {
        return Err(DensityError::Domain(format!("tau {tau} < 0")));
    }
    Ok(q_value / d_s.max(DENSITY_FLOOR).powf(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded_rng(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn identical_samples_engage_fallback() {
        let states = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        assert!(model.has_fallback());
        assert_eq!(model.fallback_dims(), &[0, 1]);
        assert_eq!(model.bandwidth(), &[BANDWIDTH_FLOOR, BANDWIDTH_FLOOR]);
    }

    #[test]
    fn scott_bandwidth_on_standard_normal() {
        let states = normal_sample(10_000, 1, 1);
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        // sigma_hat ~ 1, factor = 10000^(-1/5) ~ 0.158
        assert!(model.bandwidth()[0] > 0.1 && model.bandwidth()[0] < 0.2);
    }

    #[test]
    fn scott_bandwidth_scales_with_the_data() {
        let states = normal_sample(500, 2, 2);
        let c = 3.7;
        let scaled: Vec<Vec<f64>> =
            states.iter().map(|s| s.iter().map(|&v| c * v).collect()).collect();
        let base = fit_kde(&states, BandwidthRule::Scott).unwrap();
        let big = fit_kde(&scaled, BandwidthRule::Scott).unwrap();
        for (hb, hs) in base.bandwidth().iter().zip(big.bandwidth()) {
            assert_abs_diff_eq!(hs / hb, c, epsilon = 1e-9);
        }
    }

    #[test]
    fn silverman_differs_from_scott_by_a_constant() {
        let states = normal_sample(500, 2, 3);
        let scott = fit_kde(&states, BandwidthRule::Scott).unwrap();
        let silverman = fit_kde(&states, BandwidthRule::Silverman).unwrap();
        let want = (4.0f64 / 4.0).powf(1.0 / 6.0); // d = 2
        for (hs, hv) in scott.bandwidth().iter().zip(silverman.bandwidth()) {
            assert_abs_diff_eq!(hv / hs, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_peak_value_is_exact() {
        let model = fit_kde(&[vec![0.5, -1.0]], BandwidthRule::Fixed(0.2)).unwrap();
        let want = (2.0 * std::f64::consts::PI).powf(-1.0) / (0.2 * 0.2);
        assert_abs_diff_eq!(density(&model, &[0.5, -1.0]).unwrap(), want, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pair_gives_symmetric_density() {
        let model = fit_kde(&[vec![-1.0], vec![1.0]], BandwidthRule::Fixed(0.5)).unwrap();
        let single = fit_kde(&[vec![1.0]], BandwidthRule::Fixed(0.5)).unwrap();
        let at_origin = density(&model, &[0.0]).unwrap();
        // twice either one-sided contribution, halved by the mixture weight
        assert_abs_diff_eq!(at_origin, density(&single, &[0.0]).unwrap(), epsilon = 1e-12);
        let left = density(&model, &[-0.3]).unwrap();
        let right = density(&model, &[0.3]).unwrap();
        assert_abs_diff_eq!(left, right, epsilon = 1e-12);
    }

    #[test]
    fn density_is_strictly_positive() {
        let states = normal_sample(100, 2, 4);
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        for q in [[0.0, 0.0], [3.0, -3.0], [8.0, 8.0]] {
            assert!(density(&model, &q).unwrap() > 0.0);
        }
        assert!(density(&model, &[0.0]).is_err());
    }

    #[test]
    fn one_dimensional_grid_integral_is_one() {
        let states = normal_sample(2000, 1, 5);
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        let mean = states.iter().map(|s| s[0]).sum::<f64>() / states.len() as f64;
        let sigma = (states.iter().map(|s| (s[0] - mean).powi(2)).sum::<f64>()
            / (states.len() - 1) as f64)
            .sqrt();
        let (lo, hi) = (mean - 5.0 * sigma, mean + 5.0 * sigma);
        let n = 4000;
        let w = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for i in 0..n {
            let x = lo + (i as f64 + 0.5) * w;
            integral += density(&model, &[x]).unwrap() * w;
        }
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn two_dimensional_grid_integral_is_one() {
        let states = normal_sample(300, 2, 6);
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        let stats = |j: usize| {
            let mean = states.iter().map(|s| s[j]).sum::<f64>() / states.len() as f64;
            let sigma = (states.iter().map(|s| (s[j] - mean).powi(2)).sum::<f64>()
                / (states.len() - 1) as f64)
                .sqrt();
            (mean, sigma)
        };
        let (mx, sx) = stats(0);
        let (my, sy) = stats(1);
        let n = 160;
        let (wx, wy) = (10.0 * sx / n as f64, 10.0 * sy / n as f64);
        let mut integral = 0.0;
        for i in 0..n {
            let x = mx - 5.0 * sx + (i as f64 + 0.5) * wx;
            for j in 0..n {
                let y = my - 5.0 * sy + (j as f64 + 0.5) * wy;
                integral += density(&model, &[x, y]).unwrap() * wx * wy;
            }
        }
        assert!((integral - 1.0).abs() < 0.01, "integral {integral}");
    }

    #[test]
    fn histogram_normalizes_and_handles_degenerate_input() {
        let states = normal_sample(400, 2, 7);
        let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
        let hist = log_density_histogram(&model, &states, 24).unwrap();
        assert_eq!(hist.bins.len(), 24);
        assert_abs_diff_eq!(hist.total_area(), 1.0, epsilon = 1e-9);

        // all states identical: single occupied bin, still unit area
        let same = vec![vec![0.3, 0.3]; 50];
        let hist = log_density_histogram(&model, &same, 8).unwrap();
        assert_eq!(hist.occupied_bins(), 1);
        assert_abs_diff_eq!(hist.total_area(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sdw_weight_cases() {
        // tau = 0: weight equals q for any density
        assert_eq!(sdw_weight(3.5, 0.01, 0.0).unwrap(), 3.5);
        // d = 1: weight equals q for any tau
        assert_eq!(sdw_weight(3.5, 1.0, 2.0).unwrap(), 3.5);
        assert_abs_diff_eq!(sdw_weight(2.0, 4.0, 0.5).unwrap(), 1.0, epsilon = 1e-15);
        assert!(sdw_weight(1.0, 0.0, 0.5).is_err());
        assert!(sdw_weight(1.0, -1.0, 0.5).is_err());
        assert!(sdw_weight(1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn weight_identity_and_monotone_emphasis() {
        let mut rng = seeded_rng(8);
        for _ in 0..200 {
            let q: f64 = rng.gen_range(0.0..5.0);
            let d: f64 = rng.gen_range(1e-6..10.0);
            let tau: f64 = rng.gen_range(0.0..1.0);
            let w = sdw_weight(q, d, tau).unwrap();
            if d >= DENSITY_FLOOR {
                assert_abs_diff_eq!(w * d.powf(tau), q, epsilon = 1e-12 * (1.0 + q.abs()));
            }
        }
        // larger tau increases the weight ratio between rare and common states
        let (d_rare, d_common, q) = (0.05, 2.0, 1.0);
        let mut prev_ratio = 0.0;
        for tau in [0.0, 0.05, 0.1, 0.2, 0.5] {
            let ratio =
                sdw_weight(q, d_rare, tau).unwrap() / sdw_weight(q, d_common, tau).unwrap();
            assert!(ratio > prev_ratio || tau == 0.0);
            prev_ratio = ratio;
        }
    }
}
