//! Pivotal/surrounding state partition, imitation-error functionals, and
//! calculators plus fuzz verification for the policy-gap bounds.
//!
//! Conventions, fixed here and relied on by the verifier:
//! - a state is pivotal when its average occupancy under the reference policy
//!   exceeds `OCCUPANCY_ETA` (below DP accumulation noise);
//! - the per-step surrounding transition probability is 0 whenever the
//!   conditioning event has probability 0, and the surrounding error averages
//!   the per-step values over `t = 1..T-1` (no transition leaves step `T`);
//! - the occupancy-assumption check tolerates `-1e-10` of accumulated
//!   rounding in the per-step sums.

use thiserror::Error;

use crate::mdp::{
    exact_return, state_distributions, value_iteration, MdpError, StateDistSeq, TabularMdp,
    TabularPolicy,
};
use crate::rng::{seeded_rng, split_seed};
use rand::Rng;

/// Occupancy-support threshold defining "visited" under floating point.
pub const OCCUPANCY_ETA: f64 = 1e-12;
/// Sign tolerance for the occupancy assumption check.
pub const ASSUMPTION_TOL: f64 = -1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum BoundsError {
    #[error("negative input: {0} = {1}")]
    Negative(&'static str, f64),
    #[error("domain violation: {0}")]
    Domain(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// Disjoint split of the state space by reference-policy occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePartition {
    pivotal: Vec<usize>,
    surrounding: Vec<usize>,
    mask: Vec<bool>,
}

impl StatePartition {
    pub fn pivotal(&self) -> &[usize] {
        &self.pivotal
    }

    pub fn surrounding(&self) -> &[usize] {
        &self.surrounding
    }

    pub fn is_pivotal(&self, s: usize) -> bool {
        self.mask[s]
    }
}

/// Split states into pivotal (average occupancy of `pi_star` above
/// [`OCCUPANCY_ETA`]) and surrounding (the rest).
pub fn partition_states(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
) -> Result<StatePartition, BoundsError> {
    let avg = state_distributions(mdp, pi_star)?.average();
    Ok(partition_from_occupancy(&avg))
}

fn partition_from_occupancy(avg: &[f64]) -> StatePartition {
    let mask: Vec<bool> = avg.iter().map(|&d| d > OCCUPANCY_ETA).collect();
    let pivotal = mask.iter().enumerate().filter(|(_, &m)| m).map(|(s, _)| s).collect();
    let surrounding = mask.iter().enumerate().filter(|(_, &m)| !m).map(|(s, _)| s).collect();
    StatePartition { pivotal, surrounding, mask }
}

/// Pivotal error: per-step `eps_t = sum_s d*^t(s) sum_a |pi_hat - pi_star|`
/// and the average `eps = (1/T) sum_t eps_t`.
pub fn pivotal_error(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> Result<(f64, Vec<f64>), BoundsError> {
    let d_star = state_distributions(mdp, pi_star)?;
    Ok(pivotal_error_from_dists(&d_star, pi_star, pi_hat))
}

fn pivotal_error_from_dists(
    d_star: &StateDistSeq,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> (f64, Vec<f64>) {
    let eps_t: Vec<f64> = d_star
        .iter()
        .map(|d| {
            d.iter()
                .enumerate()
                .map(|(s, &occ)| {
                    if occ == 0.0 {
                        return 0.0;
                    }
                    let l1: f64 = pi_star
                        .row(s)
                        .iter()
                        .zip(pi_hat.row(s))
                        .map(|(&p, &q)| (p - q).abs())
                        .sum();
                    occ * l1
                })
                .sum()
        })
        .collect();
    let eps = eps_t.iter().sum::<f64>() / eps_t.len() as f64;
    (eps, eps_t)
}

/// Surrounding error: for each `t < T`,
/// `eps_mu_t = P_hat(s_{t+1} in S_mu | s_t in S_mu)` from the exact step-`t`
/// occupancy of `pi_hat` restricted to the surrounding set, with the
/// zero-conditioning convention; `eps_mu` averages over `t = 1..T-1`.
pub fn surrounding_error(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> Result<(f64, Vec<f64>), BoundsError> {
    let partition = partition_states(mdp, pi_star)?;
    let d_hat = state_distributions(mdp, pi_hat)?;
    Ok(surrounding_error_from_parts(mdp, &partition, &d_hat, pi_hat))
}

fn surrounding_error_from_parts(
    mdp: &TabularMdp,
    partition: &StatePartition,
    d_hat: &StateDistSeq,
    pi_hat: &TabularPolicy,
) -> (f64, Vec<f64>) {
    let t_len = mdp.horizon();
    let mut eps_mu_t = Vec::with_capacity(t_len.saturating_sub(1));
    for t in 1..t_len {
        let d = d_hat.at_step(t);
        let mut denom = 0.0;
        let mut num = 0.0;
        for &s in partition.surrounding() {
            let occ = d[s];
            if occ == 0.0 {
                continue;
            }
            denom += occ;
            for a in 0..mdp.n_actions() {
                let w = occ * pi_hat.prob(s, a);
                if w == 0.0 {
                    continue;
                }
                let to_mu: f64 =
                    partition.surrounding().iter().map(|&s2| mdp.transition_row(s, a)[s2]).sum();
                num += w * to_mu;
            }
        }
        eps_mu_t.push(if denom <= 0.0 { 0.0 } else { (num / denom).clamp(0.0, 1.0) });
    }
    let eps_mu = if eps_mu_t.is_empty() {
        0.0
    } else {
        eps_mu_t.iter().sum::<f64>() / eps_mu_t.len() as f64
    };
    (eps_mu, eps_mu_t)
}

/// Per-step occupancy assumption: at every step the pivotal-state sum
/// `sum_{s in S_e} (d*^t(s) - d_hat^t(s)) (r_max - E_{a~pi_hat} r(s,a))`
/// is nonnegative (within [`ASSUMPTION_TOL`]).
pub fn check_assumption1(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> Result<Vec<bool>, BoundsError> {
    let partition = partition_states(mdp, pi_star)?;
    let d_star = state_distributions(mdp, pi_star)?;
    let d_hat = state_distributions(mdp, pi_hat)?;
    Ok(assumption1_from_parts(mdp, &partition, &d_star, &d_hat, pi_hat))
}

fn assumption1_from_parts(
    mdp: &TabularMdp,
    partition: &StatePartition,
    d_star: &StateDistSeq,
    d_hat: &StateDistSeq,
    pi_hat: &TabularPolicy,
) -> Vec<bool> {
    let exp_r: Vec<f64> = (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| pi_hat.prob(s, a) * mdp.reward(s, a)).sum())
        .collect();
    (1..=mdp.horizon())
        .map(|t| {
            let sum: f64 = partition
                .pivotal()
                .iter()
                .map(|&s| (d_star.at_step(t)[s] - d_hat.at_step(t)[s]) * (mdp.r_max() - exp_r[s]))
                .sum();
            sum >= ASSUMPTION_TOL
        })
        .collect()
}

fn check_nonneg(name: &'static str, v: f64) -> Result<(), BoundsError> {
    if v < 0.0 || !v.is_finite() {
        return Err(BoundsError::Negative(name, v));
    }
    Ok(())
}

/// Policy-gap bound from pivotal error alone: `eps * T^2 * r_max`.
pub fn theorem1_bound(eps: f64, horizon: usize, r_max: f64) -> Result<f64, BoundsError> {
    check_nonneg("eps", eps)?;
    check_nonneg("r_max", r_max)?;
    if horizon == 0 {
        return Err(BoundsError::Domain("horizon must be >= 1".into()));
    }
    let t = horizon as f64;
    Ok(eps * t * t * r_max)
}

/// Policy-gap bound with the surrounding error: `(eps_mu * T + 3) * eps * T * r_max`.
pub fn theorem3_bound(
    eps: f64,
    eps_mu: f64,
    horizon: usize,
    r_max: f64,
) -> Result<f64, BoundsError> {
    check_nonneg("eps", eps)?;
    check_nonneg("eps_mu", eps_mu)?;
    check_nonneg("r_max", r_max)?;
    if horizon == 0 {
        return Err(BoundsError::Domain("horizon must be >= 1".into()));
    }
    let t = horizon as f64;
    Ok((eps_mu * t + 3.0) * eps * t * r_max)
}

/// High-probability form over a size-`m` sample from a finite policy class:
/// `(eps_mu*T + 3) * (eps_hat + sqrt((ln|Pi| + ln(2/delta)) / (2m))) * T * r_max`.
pub fn corollary1_bound(
    eps_hat: f64,
    eps_mu: f64,
    horizon: usize,
    r_max: f64,
    m: u64,
    pi_class_size: u64,
    delta: f64,
) -> Result<f64, BoundsError> {
    check_nonneg("eps_hat", eps_hat)?;
    check_nonneg("eps_mu", eps_mu)?;
    check_nonneg("r_max", r_max)?;
    if horizon == 0 {
        return Err(BoundsError::Domain("horizon must be >= 1".into()));
    }
    if m == 0 {
        return Err(BoundsError::Domain("m must be >= 1".into()));
    }
    if pi_class_size == 0 {
        return Err(BoundsError::Domain("|Pi| must be >= 1".into()));
    }
    if delta <= 0.0 || delta >= 1.0 {
        return Err(BoundsError::Domain(format!("delta {delta} outside (0,1)")));
    }
    let t = horizon as f64;
    let slack = (((pi_class_size as f64).ln() + (2.0 / delta).ln()) / (2.0 * m as f64)).sqrt();
    Ok((eps_mu * t + 3.0) * (eps_hat + slack) * t * r_max)
}

/// Everything the bounds know about one `(mdp, pi_star, pi_hat)` triple.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    pub eps_t: Vec<f64>,
    pub eps: f64,
    pub eps_mu_t: Vec<f64>,
    pub eps_mu: f64,
    pub assumption1_per_t: Vec<bool>,
    pub delta_j: f64,
    pub thm1_bound: f64,
    pub thm3_bound: f64,
}

impl ErrorReport {
    pub fn compute(
        mdp: &TabularMdp,
        pi_star: &TabularPolicy,
        pi_hat: &TabularPolicy,
    ) -> Result<Self, BoundsError> {
        let d_star = state_distributions(mdp, pi_star)?;
        let d_hat = state_distributions(mdp, pi_hat)?;
        let partition = partition_from_occupancy(&d_star.average());
        let (eps, eps_t) = pivotal_error_from_dists(&d_star, pi_star, pi_hat);
        let (eps_mu, eps_mu_t) = surrounding_error_from_parts(mdp, &partition, &d_hat, pi_hat);
        let assumption1_per_t = assumption1_from_parts(mdp, &partition, &d_star, &d_hat, pi_hat);
        let delta_j = (exact_return(mdp, pi_star)? - exact_return(mdp, pi_hat)?).abs();
        let thm1_bound = theorem1_bound(eps, mdp.horizon(), mdp.r_max())?;
        let thm3_bound = theorem3_bound(eps, eps_mu, mdp.horizon(), mdp.r_max())?;
        Ok(Self { eps_t, eps, eps_mu_t, eps_mu, assumption1_per_t, delta_j, thm1_bound, thm3_bound })
    }

    pub fn assumption1_all(&self) -> bool {
        self.assumption1_per_t.iter().all(|&b| b)
    }

    /// The surrounding-error bound only applies under the occupancy
    /// assumption and for horizons of at least 3.
    pub fn thm3_applicable(&self) -> bool {
        self.assumption1_all() && self.eps_t.len() >= 3
    }
}

/// Size caps for the fuzz verifier; kept small enough for exact DP.
#[derive(Debug, Clone, Copy)]
pub struct FuzzCaps {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
}

impl Default for FuzzCaps {
    fn default() -> Self {
        Self { max_states: 8, max_actions: 4, max_horizon: 10 }
    }
}

/// One fuzz trial of [`verify_bounds`].
#[derive(Debug, Clone)]
pub struct FuzzTrial {
    pub trial: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    pub report: ErrorReport,
    pub violated: bool,
}

/// Outcome of a fuzz run. A violation of either bound on its applicable
/// subset, or of the distribution-gap recursion, signals an implementation
/// bug; the first offending instance is serialized in `counterexample`.
#[derive(Debug, Clone)]
pub struct FuzzReport {
    pub trials: Vec<FuzzTrial>,
    pub thm1_violations: usize,
    pub thm3_violations: usize,
    pub chain_violations: usize,
    pub thm3_applicable: usize,
    pub counterexample: Option<String>,
}

impl FuzzReport {
    pub fn clean(&self) -> bool {
        self.thm1_violations == 0 && self.thm3_violations == 0 && self.chain_violations == 0
    }
}

const BOUND_SLACK: f64 = 1e-9;

/// Run `n_trials` random `(mdp, pi_star, pi_hat)` instances and check, per
/// trial: the pivotal-error bound (unconditionally), the surrounding-error
/// bound on its applicable subset, and the per-step recursion
/// `C(t) <= C(t-1) + eps_{t-1}` on the distribution gap
/// `C(t) = sum_s |d*^t(s) - d_hat^t(s)|` with `C(1) = 0`.
///
/// `pi_star` is the stationary greedy policy of exact value iteration;
/// `pi_hat` mixes it with the uniform policy at a per-trial random strength.
/// A purely random `pi_hat` rarely satisfies the occupancy assumption, so the
/// mixture keeps both small- and large-error instances in the stream; every
/// 50th trial uses strength 0 so the identical-policy edge stays covered.
pub fn verify_bounds(seed: u64, n_trials: usize, caps: FuzzCaps) -> FuzzReport {
    let mut trials = Vec::with_capacity(n_trials);
    let mut thm1_violations = 0;
    let mut thm3_violations = 0;
    let mut chain_violations = 0;
    let mut thm3_applicable = 0;
    let mut counterexample = None;
    for trial in 0..n_trials {
        let trial_seed = split_seed(seed, trial as u64);
        let mdp =
            crate::mdp::random_mdp(caps.max_states, caps.max_actions, caps.max_horizon, trial_seed);
        let pi_star = value_iteration(&mdp).policy;
        let strength = if trial % 50 == 0 {
            0.0
        } else {
            seeded_rng(split_seed(trial_seed, 1)).gen::<f64>()
        };
        let pi_hat = pi_star.mix_with_uniform(strength);
        let report = ErrorReport::compute(&mdp, &pi_star, &pi_hat).expect("valid fuzz instance");

        let mut violated = false;
        if report.delta_j > report.thm1_bound + BOUND_SLACK {
            thm1_violations += 1;
            violated = true;
        }
        if report.thm3_applicable() {
            thm3_applicable += 1;
            if report.delta_j > report.thm3_bound + BOUND_SLACK {
                thm3_violations += 1;
                violated = true;
            }
        }
        if !chain_holds(&mdp, &pi_star, &pi_hat, &report.eps_t) {
            chain_violations += 1;
            violated = true;
        }
        if violated && counterexample.is_none() {
            counterexample =
                Some(format!("trial {trial} strength {strength}\n{}", mdp.to_text()));
        }
        trials.push(FuzzTrial {
            trial,
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            horizon: mdp.horizon(),
            report,
            violated,
        });
    }
    FuzzReport {
        trials,
        thm1_violations,
        thm3_violations,
        chain_violations,
        thm3_applicable,
        counterexample,
    }
}

fn chain_holds(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
    eps_t: &[f64],
) -> bool {
    let c = distribution_gap(mdp, pi_star, pi_hat);
    if c[0] > 1e-12 {
        return false;
    }
    (1..c.len()).all(|t| c[t] <= c[t - 1] + eps_t[t - 1] + 1e-10)
}

/// `C(t) = sum_s |d*^t(s) - d_hat^t(s)|` for `t = 1..=T` (index `t - 1`).
pub fn distribution_gap(
    mdp: &TabularMdp,
    pi_star: &TabularPolicy,
    pi_hat: &TabularPolicy,
) -> Vec<f64> {
    let d_star = state_distributions(mdp, pi_star).expect("shapes checked upstream");
    let d_hat = state_distributions(mdp, pi_hat).expect("shapes checked upstream");
    (1..=mdp.horizon())
        .map(|t| {
            d_star.at_step(t).iter().zip(d_hat.at_step(t)).map(|(&a, &b)| (a - b).abs()).sum()
        })
        .collect()
}

/// One point of a bound-vs-distillation-loss curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub mu: f64,
    pub bound: f64,
}

/// Bound sweep over the extra distillation loss `mu`: emits
/// `theorem3_bound(eps0 + mu, eps_mu0 + mu, horizon, r_max)` per grid value.
pub fn figure4_sweep(
    eps0: f64,
    eps_mu0: f64,
    mu_grid: &[f64],
    horizon: usize,
    r_max: f64,
) -> Result<Vec<SweepPoint>, BoundsError> {
    mu_grid
        .iter()
        .map(|&mu| {
            check_nonneg("mu", mu)?;
            Ok(SweepPoint { mu, bound: theorem3_bound(eps0 + mu, eps_mu0 + mu, horizon, r_max)? })
        })
        .collect()
}

/// Inclusive grid `0, step, 2*step, .., max`.
pub fn mu_grid(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).filter(|&m| m <= max * (1.0 + 1e-9)).collect()
}
