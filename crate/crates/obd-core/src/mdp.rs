//! Finite episodic MDPs with explicit tables and exact dynamic-programming
//! evaluation.
//!
//! Everything here is undiscounted and finite-horizon: an episode is exactly
//! `horizon` steps. Probability and reward arithmetic is double precision;
//! stochastic-row validation uses a 1e-12 tolerance at construction and 1e-10
//! after propagation.

use rand::Rng;
use thiserror::Error;

use crate::rng::{seeded_rng, split_seed};

/// Construction tolerance for probability rows.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance on propagated state distributions.
pub const DIST_SUM_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("probability row {0} sums to {1}, expected 1 within 1e-12")]
    RowSum(String, f64),
    #[error("negative probability {1} at {0}")]
    NegativeProb(String, f64),
    #[error("reward {0} exceeds bound r_max = {1}")]
    RewardBound(f64, f64),
    #[error("horizon must be at least 1")]
    EmptyHorizon,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Finite episodic MDP: transition table `P[s][a][s']`, reward table
/// `r[s][a]`, horizon `T`, initial distribution `d1`, and the reward bound
/// `r_max` with `|r[s][a]| <= r_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    horizon: usize,
    init_dist: Vec<f64>,
    r_max: f64,
}

fn check_prob_row(row: &[f64], what: &str) -> Result<(), MdpError> {
    for &p in row {
        if p < 0.0 {
            return Err(MdpError::NegativeProb(what.to_string(), p));
        }
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(MdpError::RowSum(what.to_string(), sum));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        horizon: usize,
        init_dist: Vec<f64>,
        r_max: f64,
    ) -> Result<Self, MdpError> {
        let n_states = transition.len();
        if n_states == 0 {
            return Err(MdpError::Dimension("no states".into()));
        }
        if horizon == 0 {
            return Err(MdpError::EmptyHorizon);
        }
        let n_actions = transition[0].len();
        if n_actions == 0 {
            return Err(MdpError::Dimension("no actions".into()));
        }
        if reward.len() != n_states || init_dist.len() != n_states {
            return Err(MdpError::Dimension("reward/init_dist length".into()));
        }
        for (s, rows) in transition.iter().enumerate() {
            if rows.len() != n_actions {
                return Err(MdpError::Dimension(format!("transition[{s}] arity")));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != n_states {
                    return Err(MdpError::Dimension(format!("transition[{s}][{a}] length")));
                }
                check_prob_row(row, &format!("P[{s}][{a}]"))?;
            }
        }
        check_prob_row(&init_dist, "d1")?;
        for row in &reward {
            if row.len() != n_actions {
                return Err(MdpError::Dimension("reward row length".into()));
            }
            for &r in row {
                if r.abs() > r_max {
                    return Err(MdpError::RewardBound(r, r_max));
                }
            }
        }
        Ok(Self { n_states, n_actions, transition, reward, horizon, init_dist, r_max })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }

    /// Serialize to the `tabular-mdp v1` text format: a header line, then
    /// `n_states n_actions horizon r_max`, the initial distribution, the
    /// reward table (one row per state), and the transition table (one row
    /// per `(s, a)` pair), all whitespace-separated decimal values.
    pub fn to_text(&self) -> String {
        let mut out = String::from("tabular-mdp v1\n");
        out.push_str(&format!(
            "{} {} {} {}\n",
            self.n_states, self.n_actions, self.horizon, self.r_max
        ));
        push_row(&mut out, &self.init_dist);
        for row in &self.reward {
            push_row(&mut out, row);
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                push_row(&mut out, &self.transition[s][a]);
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, MdpError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| MdpError::Parse("empty input".into()))?;
        if header.trim() != "tabular-mdp v1" {
            return Err(MdpError::Parse(format!("bad header {header:?}")));
        }
        let dims = parse_row(lines.next().ok_or_else(|| MdpError::Parse("missing dims".into()))?)?;
        if dims.len() != 4 {
            return Err(MdpError::Parse("dims line needs 4 fields".into()));
        }
        let (n_states, n_actions, horizon) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
        let r_max = dims[3];
        let init_dist = parse_fixed_row(lines.next(), n_states, "init_dist")?;
        let mut reward = Vec::with_capacity(n_states);
        for s in 0..n_states {
            reward.push(parse_fixed_row(lines.next(), n_actions, &format!("reward[{s}]"))?);
        }
        let mut transition = vec![vec![Vec::new(); n_actions]; n_states];
        for (s, rows) in transition.iter_mut().enumerate() {
            for (a, row) in rows.iter_mut().enumerate() {
                *row = parse_fixed_row(lines.next(), n_states, &format!("P[{s}][{a}]"))?;
            }
        }
        Self::new(transition, reward, horizon, init_dist, r_max)
    }
}

fn push_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&format!("{v}"));
    }
    out.push('\n');
}

fn parse_row(line: &str) -> Result<Vec<f64>, MdpError> {
    line.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| MdpError::Parse(format!("{tok:?}: {e}"))))
        .collect()
}

fn parse_fixed_row(line: Option<&str>, len: usize, what: &str) -> Result<Vec<f64>, MdpError> {
    let row = parse_row(line.ok_or_else(|| MdpError::Parse(format!("missing {what}")))?)?;
    if row.len() != len {
        return Err(MdpError::Parse(format!("{what}: expected {len} values, got {}", row.len())));
    }
    Ok(row)
}

/// Stochastic policy table `pi[s][a]`; deterministic policies are rows with a
/// single 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        if probs.is_empty() {
            return Err(MdpError::Dimension("empty policy".into()));
        }
        let n_actions = probs[0].len();
        for (s, row) in probs.iter().enumerate() {
            if row.len() != n_actions {
                return Err(MdpError::Dimension(format!("policy row {s} length")));
            }
            check_prob_row(row, &format!("pi[{s}]"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self { probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states] }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Self {
        let probs = actions
            .iter()
            .map(|&a| {
                let mut row = vec![0.0; n_actions];
                row[a] = 1.0;
                row
            })
            .collect();
        Self { probs }
    }

    /// Convex mixture `(1 - weight) * self + weight * uniform`.
    pub fn mix_with_uniform(&self, weight: f64) -> Self {
        let n_actions = self.n_actions();
        let u = 1.0 / n_actions as f64;
        let probs = self
            .probs
            .iter()
            .map(|row| row.iter().map(|&p| (1.0 - weight) * p + weight * u).collect())
            .collect();
        Self { probs }
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }
}

/// Per-step state distributions `d^t` for `t = 1..=T` (index `t - 1`).
#[derive(Debug, Clone)]
pub struct StateDistSeq {
    dists: Vec<Vec<f64>>,
}

impl StateDistSeq {
    /// Distribution at step `t` (1-based).
    pub fn at_step(&self, t: usize) -> &[f64] {
        &self.dists[t - 1]
    }

    pub fn horizon(&self) -> usize {
        self.dists.len()
    }

    /// Average occupancy over steps: `(1/T) * sum_t d^t(s)`.
    pub fn average(&self) -> Vec<f64> {
        let n = self.dists[0].len();
        let mut avg = vec![0.0; n];
        for d in &self.dists {
            for (acc, &v) in avg.iter_mut().zip(d) {
                *acc += v;
            }
        }
        let t = self.dists.len() as f64;
        avg.iter_mut().for_each(|v| *v /= t);
        avg
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.dists.iter()
    }
}

fn check_shapes(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<(), MdpError> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::Dimension(format!(
            "policy {}x{} vs mdp {}x{}",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    Ok(())
}

/// Exact per-step state distributions of `policy` on `mdp`:
/// `d^1 = d1`, `d^t(s) = sum_{s',a'} d^{t-1}(s') pi(a'|s') P[s'][a'][s]`.
pub fn state_distributions(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<StateDistSeq, MdpError> {
    check_shapes(mdp, policy)?;
    let n = mdp.n_states();
    let mut dists = Vec::with_capacity(mdp.horizon());
    dists.push(mdp.init_dist.clone());
    for _ in 1..mdp.horizon() {
        let prev = dists.last().unwrap();
        let mut next = vec![0.0; n];
        for s_prev in 0..n {
            let occ = prev[s_prev];
            if occ == 0.0 {
                continue;
            }
            for a in 0..mdp.n_actions() {
                let w = occ * policy.prob(s_prev, a);
                if w == 0.0 {
                    continue;
                }
                for (s_next, &p) in mdp.transition[s_prev][a].iter().enumerate() {
                    next[s_next] += w * p;
                }
            }
        }
        dists.push(next);
    }
    Ok(StateDistSeq { dists })
}

/// Exact expected return `J = sum_t sum_{s,a} d^t(s) pi(a|s) r[s][a]`.
pub fn exact_return(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<f64, MdpError> {
    let dists = state_distributions(mdp, policy)?;
    let mut total = 0.0;
    for d in dists.iter() {
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                total += d[s] * policy.prob(s, a) * mdp.reward[s][a];
            }
        }
    }
    Ok(total)
}

/// Per-step action values of `policy`: `q[t-1][s][a]` with
/// `q_T[s][a] = r[s][a]` and
/// `q_t[s][a] = r[s][a] + sum_{s'} P[s][a][s'] sum_{a'} pi(a'|s') q_{t+1}[s'][a']`.
pub fn action_value(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<Vec<Vec<Vec<f64>>>, MdpError> {
    check_shapes(mdp, policy)?;
    let (n, m, t_len) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut q = vec![vec![vec![0.0; m]; n]; t_len];
    for t in (0..t_len).rev() {
        for s in 0..n {
            for a in 0..m {
                let mut value = mdp.reward[s][a];
                if t + 1 < t_len {
                    for (s_next, &p) in mdp.transition[s][a].iter().enumerate() {
                        if p == 0.0 {
                            continue;
                        }
                        let v_next: f64 = (0..m)
                            .map(|a_next| policy.prob(s_next, a_next) * q[t + 1][s_next][a_next])
                            .sum();
                        value += p * v_next;
                    }
                }
                q[t][s][a] = value;
            }
        }
    }
    Ok(q)
}

/// Result of finite-horizon backward induction.
pub struct ValueIteration {
    /// Stationary deterministic policy, greedy with respect to the step-1
    /// optimal action values (ties broken toward the lowest action index).
    pub policy: TabularPolicy,
    /// Optimal action-value tables `q*[t-1][s][a]`.
    pub q: Vec<Vec<Vec<f64>>>,
}

impl ValueIteration {
    /// The dynamic-programming optimum `sum_s d1(s) max_a q*_1[s][a]`.
    /// No policy — stationary or not — exceeds this value.
    pub fn optimal_return(&self, mdp: &TabularMdp) -> f64 {
        mdp.init_dist
            .iter()
            .zip(&self.q[0])
            .map(|(&d, row)| d * row.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .sum()
    }
}

/// Finite-horizon backward induction (undiscounted). Returns the optimal q
/// tables and the stationary greedy policy extracted from the step-1 table.
pub fn value_iteration(mdp: &TabularMdp) -> ValueIteration {
    let (n, m, t_len) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut q = vec![vec![vec![0.0; m]; n]; t_len];
    let mut v_next = vec![0.0; n];
    for t in (0..t_len).rev() {
        for s in 0..n {
            for a in 0..m {
                let mut value = mdp.reward[s][a];
                if t + 1 < t_len {
                    for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                        value += p * v_next[s2];
                    }
                }
                q[t][s][a] = value;
            }
        }
        if t > 0 {
            for s in 0..n {
                v_next[s] = q[t][s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
        }
    }
    let actions: Vec<usize> = (0..n).map(|s| argmax_lowest(&q[0][s])).collect();
    ValueIteration { policy: TabularPolicy::deterministic(&actions, m), q }
}

/// Index of the maximum value, lowest index on ties.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// One environment step of a sampled trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutStep {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Sample one `T`-step trajectory of `policy` on `mdp`. Reproducible: the
/// same seed yields the identical trajectory.
pub fn sample_rollout(mdp: &TabularMdp, policy: &TabularPolicy, seed: u64) -> Vec<RolloutStep> {
    let mut rng = seeded_rng(seed);
    let mut steps = Vec::with_capacity(mdp.horizon());
    let mut state = sample_index(&mdp.init_dist, &mut rng);
    for _ in 0..mdp.horizon() {
        let action = sample_index(policy.row(state), &mut rng);
        let next_state = sample_index(&mdp.transition[state][action], &mut rng);
        steps.push(RolloutStep { state, action, reward: mdp.reward[state][action], next_state });
        state = next_state;
    }
    steps
}

/// Mean empirical return over `n` seeded rollouts, with its standard error.
pub fn monte_carlo_return(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    n: usize,
    seed: u64,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..n {
        let ret: f64 = sample_rollout(mdp, policy, split_seed(seed, i as u64))
            .iter()
            .map(|s| s.reward)
            .sum();
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    (mean, (var / n as f64).sqrt())
}

fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &p) in probs.iter().enumerate() {
        u -= p;
        if u < 0.0 {
            return i;
        }
    }
    probs.len() - 1
}

/// Random dense-or-sparse MDP for fuzz suites: row supports are sampled,
/// probabilities are normalized exponentials, rewards are uniform in
/// `[-1, 1]` with `r_max = 1`.
pub fn random_mdp(
    max_states: usize,
    max_actions: usize,
    max_horizon: usize,
    seed: u64,
) -> TabularMdp {
    let mut rng = seeded_rng(seed);
    let n = rng.gen_range(2..=max_states.max(2));
    let m = rng.gen_range(1..=max_actions.max(1));
    let horizon = rng.gen_range(1..=max_horizon.max(1));
    let sparse = rng.gen_bool(0.5);
    let mut transition = vec![vec![vec![0.0; n]; m]; n];
    for rows in transition.iter_mut() {
        for row in rows.iter_mut() {
            let support: Vec<usize> = if sparse {
                let k = rng.gen_range(1..=3.min(n));
                rand::seq::index::sample(&mut rng, n, k).into_vec()
            } else {
                (0..n).collect()
            };
            let mut total = 0.0;
            let weights: Vec<f64> = support
                .iter()
                .map(|_| {
                    let w = -(rng.gen::<f64>().max(f64::MIN_POSITIVE)).ln();
                    total += w;
                    w
                })
                .collect();
            for (&s2, w) in support.iter().zip(weights) {
                row[s2] = w / total;
            }
            // exact renormalization so construction passes the 1e-12 gate
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= sum);
        }
    }
    let reward: Vec<Vec<f64>> =
        (0..n).map(|_| (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    let init_dist = if rng.gen_bool(0.5) {
        let mut d = vec![0.0; n];
        d[rng.gen_range(0..n)] = 1.0;
        d
    } else {
        let mut d: Vec<f64> =
            (0..n).map(|_| -(rng.gen::<f64>().max(f64::MIN_POSITIVE)).ln()).collect();
        let sum: f64 = d.iter().sum();
        d.iter_mut().for_each(|v| *v /= sum);
        d
    };
    TabularMdp::new(transition, reward, horizon, init_dist, 1.0).expect("generator invariants")
}
