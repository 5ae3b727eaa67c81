//! Desk-scale environments and offline dataset construction.
//!
//! The continuous substrate is a 2-d point-navigation task: the agent nudges
//! its position toward a goal under Gaussian dynamics noise, with reward
//! equal to the negative goal distance. Collection profiles mimic the
//! spread of behavior quality found in offline RL suites: a replay-like mix
//! annealing from pure noise to a medium controller, a fixed medium
//! controller, and a medium/near-expert mixture. A scripted high-gain
//! controller stands in for the offline-RL-extracted reference policy, and
//! its action values are estimated by Monte-Carlo rollouts.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::mdp::TabularMdp;
use crate::policy::ContinuousPolicy;
use crate::rng::{seeded_rng, split_seed, split_seed2};

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("selection of {0} from {1} items")]
    SelectionTooLarge(usize, usize),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("empty dataset")]
    Empty,
}

/// Point-navigation environment config. Episodes run exactly `horizon`
/// steps; states are clipped to the box, actions to `[-1, 1]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct PointNavEnv {
    /// Position units moved per unit action.
    pub kappa: f64,
    /// Isotropic Gaussian dynamics noise.
    pub sigma: f64,
    pub horizon: usize,
    pub goal: [f64; 2],
    pub start_lo: [f64; 2],
    pub start_hi: [f64; 2],
    /// Reward clip: `r = max(-||s - goal||, -r_max)`, so `|r| <= r_max`.
    pub r_max: f64,
    pub box_lo: [f64; 2],
    pub box_hi: [f64; 2],
}

impl Default for PointNavEnv {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            sigma: 0.01,
            horizon: 50,
            goal: [0.8, 0.8],
            start_lo: [-1.0, -1.0],
            start_hi: [1.0, 1.0],
            r_max: 4.0,
            box_lo: [-1.0, -1.0],
            box_hi: [1.0, 1.0],
        }
    }
}

pub const STATE_DIM: usize = 2;
pub const ACTION_DIM: usize = 2;

impl PointNavEnv {
    pub fn reward(&self, state: &[f64]) -> f64 {
        let dist =
            ((state[0] - self.goal[0]).powi(2) + (state[1] - self.goal[1]).powi(2)).sqrt();
        (-dist).max(-self.r_max)
    }

    pub fn reset(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..STATE_DIM)
            .map(|j| {
                if self.start_hi[j] > self.start_lo[j] {
                    rng.gen_range(self.start_lo[j]..=self.start_hi[j])
                } else {
                    self.start_lo[j]
                }
            })
            .collect()
    }

    /// One dynamics step: clip the action, add scaled motion and Gaussian
    /// noise, clip back into the box. Returns `(next_state, reward(state))`.
    pub fn step(&self, state: &[f64], action: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
        let r = self.reward(state);
        let next = (0..STATE_DIM)
            .map(|j| {
                let a = action[j].clamp(-1.0, 1.0);
                let noise: f64 = if self.sigma > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    self.sigma * z
                } else {
                    0.0
                };
                (state[j] + self.kappa * a + noise).clamp(self.box_lo[j], self.box_hi[j])
            })
            .collect();
        (next, r)
    }
}

/// One environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
}

/// Behavior-collection profiles mirroring offline-RL dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// A range of policies from pure noise to medium level.
    ReplayLike,
    /// A fixed medium controller.
    Medium,
    /// Alternating medium and near-expert episodes.
    ExpertMix,
}

impl Profile {
    pub fn tag(self) -> &'static str {
        match self {
            Profile::ReplayLike => "replay_like",
            Profile::Medium => "medium",
            Profile::ExpertMix => "expert_mix",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, DataError> {
        match tag {
            "replay_like" => Ok(Profile::ReplayLike),
            "medium" => Ok(Profile::Medium),
            "expert_mix" => Ok(Profile::ExpertMix),
            other => Err(DataError::Parse(format!("unknown profile {other:?}"))),
        }
    }

    /// Proportional gain and action-noise level for the given episode index.
    fn controller(self, episode: usize) -> (f64, f64) {
        match self {
            Profile::ReplayLike => {
                let frac = (episode as f64 / 40.0).min(1.0);
                (frac, 1.0 - 0.7 * frac)
            }
            Profile::Medium => (1.0, 0.3),
            Profile::ExpertMix => {
                if episode % 2 == 0 {
                    (1.0, 0.3)
                } else {
                    (4.0, 0.05)
                }
            }
        }
    }
}

/// Raw offline transitions plus provenance (profile tag and seed).
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub transitions: Vec<Transition>,
    pub profile: String,
    pub seed: u64,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Returns of the complete episodes contained in the dataset.
    pub fn episode_returns(&self, horizon: usize) -> Vec<f64> {
        self.transitions
            .chunks_exact(horizon)
            .map(|ep| ep.iter().map(|t| t.reward).sum())
            .collect()
    }

    /// Drop the q column and view the raw `(state, action)` pairs.
    pub fn as_behavior_set(&self) -> BehaviorSet {
        BehaviorSet {
            states: self.transitions.iter().map(|t| t.state.clone()).collect(),
            actions: self.transitions.iter().map(|t| t.action.clone()).collect(),
            q_values: None,
        }
    }

    /// `obd-dataset v1` text format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("obd-dataset v1\n");
        out.push_str(&format!("{STATE_DIM} {ACTION_DIM} {}\n", self.transitions.len()));
        for t in &self.transitions {
            let mut fields: Vec<String> = Vec::new();
            fields.extend(t.state.iter().map(|v| format!("{v}")));
            fields.extend(t.action.iter().map(|v| format!("{v}")));
            fields.extend(t.next_state.iter().map(|v| format!("{v}")));
            fields.push(format!("{}", t.reward));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| DataError::Parse("empty input".into()))?;
        if header.trim() != "obd-dataset v1" {
            return Err(DataError::Parse(format!("bad header {header:?}")));
        }
        let dims = parse_usizes(
            lines.next().ok_or_else(|| DataError::Parse("missing dims".into()))?,
            3,
        )?;
        let (sd, ad, n) = (dims[0], dims[1], dims[2]);
        let mut transitions = Vec::with_capacity(n);
        for _ in 0..n {
            let row = parse_f64s(
                lines.next().ok_or_else(|| DataError::Parse("missing transition".into()))?,
            )?;
            if row.len() != 2 * sd + ad + 1 {
                return Err(DataError::Parse(format!("transition arity {}", row.len())));
            }
            transitions.push(Transition {
                state: row[0..sd].to_vec(),
                action: row[sd..sd + ad].to_vec(),
                next_state: row[sd + ad..2 * sd + ad].to_vec(),
                reward: row[2 * sd + ad],
            });
        }
        Ok(Self { transitions, profile: String::new(), seed: 0 })
    }
}

/// `(state, action)` pairs with an optional per-pair action value.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorSet {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub q_values: Option<Vec<f64>>,
}

impl BehaviorSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Affinely rescale the q column to `[0, 1]`; a constant column maps to
    /// all ones. Distillation weights must be nonnegative, and on reward
    /// scales where every action value is negative the raw column would flip
    /// the objective's descent direction.
    pub fn with_normalized_q(mut self) -> Self {
        if let Some(q) = &self.q_values {
            let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            self.q_values = Some(if span <= 0.0 {
                vec![1.0; q.len()]
            } else {
                q.iter().map(|&v| (v - lo) / span).collect()
            });
        }
        self
    }

    /// `obd-behavior v1` text format, q column optional.
    pub fn to_text(&self) -> String {
        let has_q = usize::from(self.q_values.is_some());
        let mut out = String::from("obd-behavior v1\n");
        out.push_str(&format!("{STATE_DIM} {ACTION_DIM} {} {has_q}\n", self.len()));
        for i in 0..self.len() {
            let mut fields: Vec<String> = Vec::new();
            fields.extend(self.states[i].iter().map(|v| format!("{v}")));
            fields.extend(self.actions[i].iter().map(|v| format!("{v}")));
            if let Some(q) = &self.q_values {
                fields.push(format!("{}", q[i]));
            }
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| DataError::Parse("empty input".into()))?;
        if header.trim() != "obd-behavior v1" {
            return Err(DataError::Parse(format!("bad header {header:?}")));
        }
        let dims = parse_usizes(
            lines.next().ok_or_else(|| DataError::Parse("missing dims".into()))?,
            4,
        )?;
        let (sd, ad, n, has_q) = (dims[0], dims[1], dims[2], dims[3] != 0);
        let mut states = Vec::with_capacity(n);
        let mut actions = Vec::with_capacity(n);
        let mut q_values = if has_q { Some(Vec::with_capacity(n)) } else { None };
        for _ in 0..n {
            let row =
                parse_f64s(lines.next().ok_or_else(|| DataError::Parse("missing pair".into()))?)?;
            let want = sd + ad + usize::from(has_q);
            if row.len() != want {
                return Err(DataError::Parse(format!("pair arity {} vs {want}", row.len())));
            }
            states.push(row[0..sd].to_vec());
            actions.push(row[sd..sd + ad].to_vec());
            if let Some(q) = &mut q_values {
                q.push(row[sd + ad]);
            }
        }
        Ok(Self { states, actions, q_values })
    }
}

fn parse_usizes(line: &str, want: usize) -> Result<Vec<usize>, DataError> {
    let vals: Vec<usize> = line
        .split_whitespace()
        .map(|t| t.parse().map_err(|e| DataError::Parse(format!("{t:?}: {e}"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != want {
        return Err(DataError::Parse(format!("expected {want} fields, got {}", vals.len())));
    }
    Ok(vals)
}

fn parse_f64s(line: &str) -> Result<Vec<f64>, DataError> {
    line.split_whitespace()
        .map(|t| t.parse().map_err(|e| DataError::Parse(format!("{t:?}: {e}"))))
        .collect()
}

/// Proportional controller `a = clip(gain * (goal - s))` plus Gaussian
/// action noise; the collection-time counterpart of a deterministic policy.
#[derive(Debug, Clone, Copy)]
pub struct ProportionalController {
    pub gain: f64,
    pub noise_std: f64,
    pub goal: [f64; 2],
}

impl ProportionalController {
    pub fn act(&self, state: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..ACTION_DIM)
            .map(|j| {
                let a = (self.gain * (self.goal[j] - state[j])).clamp(-1.0, 1.0);
                if self.noise_std > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    a + self.noise_std * z
                } else {
                    a
                }
            })
            .collect()
    }
}

/// Deterministic high-gain goal-seeking controller; the desk-scale stand-in
/// for a reference policy extracted by offline RL.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedExpert {
    pub gain: f64,
    pub goal: [f64; 2],
}

impl ContinuousPolicy for ScriptedExpert {
    fn act(&self, state: &[f64]) -> Vec<f64> {
        (0..ACTION_DIM)
            .map(|j| (self.gain * (self.goal[j] - state[j])).clamp(-1.0, 1.0))
            .collect()
    }
}

/// The scripted expert for this environment.
pub fn make_expert(env: &PointNavEnv) -> ScriptedExpert {
    ScriptedExpert { gain: 10.0, goal: env.goal }
}

/// Collect `n_transitions` transitions with the profile's episode-indexed
/// controllers. Deterministic in `(env, profile, n, seed)`.
pub fn collect_dataset(
    env: &PointNavEnv,
    profile: Profile,
    n_transitions: usize,
    seed: u64,
) -> OfflineDataset {
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut episode = 0;
    while transitions.len() < n_transitions {
        let (gain, noise) = profile.controller(episode);
        let controller = ProportionalController { gain, noise_std: noise, goal: env.goal };
        let mut rng = seeded_rng(split_seed2(seed, 0x45505349, episode as u64));
        let mut state = env.reset(&mut rng);
        for _ in 0..env.horizon {
            let action = controller.act(&state, &mut rng);
            let (next, reward) = env.step(&state, &action, &mut rng);
            transitions.push(Transition {
                state: state.clone(),
                action: action.iter().map(|a| a.clamp(-1.0, 1.0)).collect(),
                next_state: next.clone(),
                reward,
            });
            state = next;
        }
        episode += 1;
    }
    transitions.truncate(n_transitions);
    OfflineDataset { transitions, profile: profile.tag().to_string(), seed }
}

/// Roll one evaluation episode of a deterministic policy (environment noise
/// only) and return the episode return.
pub fn rollout_return(env: &PointNavEnv, policy: &impl ContinuousPolicy, seed: u64) -> f64 {
    let mut rng = seeded_rng(seed);
    let mut state = env.reset(&mut rng);
    let mut total = 0.0;
    for _ in 0..env.horizon {
        let action = policy.act(&state);
        let (next, reward) = env.step(&state, &action, &mut rng);
        total += reward;
        state = next;
    }
    total
}

/// Mean and standard error of episode returns over `episodes` seeded
/// rollouts.
pub fn mean_return(
    env: &PointNavEnv,
    policy: &impl ContinuousPolicy,
    episodes: usize,
    seed: u64,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..episodes {
        let r = rollout_return(env, policy, split_seed(seed, i as u64));
        sum += r;
        sum_sq += r * r;
    }
    let mean = sum / episodes as f64;
    let var = (sum_sq / episodes as f64 - mean * mean).max(0.0);
    (mean, (var / episodes as f64).sqrt())
}

/// Mean return of a uniform-random-action policy; the low anchor of
/// normalized returns.
pub fn random_policy_return(env: &PointNavEnv, episodes: usize, seed: u64) -> f64 {
    let mut total = 0.0;
    for i in 0..episodes {
        let mut rng = seeded_rng(split_seed(seed, i as u64));
        let mut state = env.reset(&mut rng);
        for _ in 0..env.horizon {
            let action: Vec<f64> =
                (0..ACTION_DIM).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let (next, reward) = env.step(&state, &action, &mut rng);
            total += reward;
            state = next;
        }
    }
    total / episodes as f64
}

/// Replace every action with the reference policy's action on the same
/// state; states and pair count are untouched.
pub fn relabel(dataset: &OfflineDataset, pi_star: &impl ContinuousPolicy) -> BehaviorSet {
    BehaviorSet {
        states: dataset.transitions.iter().map(|t| t.state.clone()).collect(),
        actions: dataset.transitions.iter().map(|t| pi_star.act(&t.state)).collect(),
        q_values: None,
    }
}

/// Monte-Carlo action value: average over `n_rollouts` of
/// `r(s, a) + sum of rewards following pi_star from the sampled successor`,
/// over the full episode horizon. Returns `(estimate, standard error)`.
pub fn estimate_q_star(
    env: &PointNavEnv,
    pi_star: &impl ContinuousPolicy,
    state: &[f64],
    action: &[f64],
    n_rollouts: usize,
    seed: u64,
) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..n_rollouts {
        let mut rng = seeded_rng(split_seed(seed, k as u64));
        let (mut s, r0) = env.step(state, action, &mut rng);
        let mut ret = r0;
        for _ in 1..env.horizon {
            let a = pi_star.act(&s);
            let (next, r) = env.step(&s, &a, &mut rng);
            ret += r;
            s = next;
        }
        sum += ret;
        sum_sq += ret * ret;
    }
    let mean = sum / n_rollouts as f64;
    let var = (sum_sq / n_rollouts as f64 - mean * mean).max(0.0);
    (mean, (var / n_rollouts as f64).sqrt())
}

/// Relabel the dataset and attach Monte-Carlo q estimates for every pair.
/// The per-pair seeds split from `seed`, so the result is independent of
/// evaluation order.
pub fn relabel_with_q(
    env: &PointNavEnv,
    dataset: &OfflineDataset,
    pi_star: &impl ContinuousPolicy,
    n_rollouts: usize,
    seed: u64,
) -> BehaviorSet {
    let mut set = relabel(dataset, pi_star);
    let q = set
        .states
        .iter()
        .zip(&set.actions)
        .enumerate()
        .map(|(i, (s, a))| {
            estimate_q_star(env, pi_star, s, a, n_rollouts, split_seed2(seed, 0x71, i as u64)).0
        })
        .collect();
    set.q_values = Some(q);
    set
}

/// Uniform selection of `n` pairs without replacement, seeded.
pub fn random_select(set: &BehaviorSet, n: usize, seed: u64) -> Result<BehaviorSet, DataError> {
    if n > set.len() {
        return Err(DataError::SelectionTooLarge(n, set.len()));
    }
    let mut rng = seeded_rng(seed);
    let idx = rand::seq::index::sample(&mut rng, set.len(), n).into_vec();
    Ok(BehaviorSet {
        states: idx.iter().map(|&i| set.states[i].clone()).collect(),
        actions: idx.iter().map(|&i| set.actions[i].clone()).collect(),
        q_values: set.q_values.as_ref().map(|q| idx.iter().map(|&i| q[i]).collect()),
    })
}

/// The `n` pairs with the largest transition reward, ties resolved by
/// dataset order.
pub fn top_reward_select(dataset: &OfflineDataset, n: usize) -> Result<BehaviorSet, DataError> {
    let scores: Vec<f64> = dataset.transitions.iter().map(|t| t.reward).collect();
    top_by_score(dataset, &scores, n)
}

/// The `n` pairs with the largest provided q value, ties by dataset order.
pub fn top_q_select(
    dataset: &OfflineDataset,
    q_values: &[f64],
    n: usize,
) -> Result<BehaviorSet, DataError> {
    if q_values.len() != dataset.len() {
        return Err(DataError::Dimension("q column length".into()));
    }
    let mut set = top_by_score(dataset, q_values, n)?;
    // carry the selected q values along
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&i, &j| q_values[j].partial_cmp(&q_values[i]).unwrap().then(i.cmp(&j)));
    set.q_values = Some(order[..n].iter().map(|&i| q_values[i]).collect());
    Ok(set)
}

fn top_by_score(
    dataset: &OfflineDataset,
    scores: &[f64],
    n: usize,
) -> Result<BehaviorSet, DataError> {
    if n > dataset.len() {
        return Err(DataError::SelectionTooLarge(n, dataset.len()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap().then(i.cmp(&j)));
    let idx = &order[..n];
    Ok(BehaviorSet {
        states: idx.iter().map(|&i| dataset.transitions[i].state.clone()).collect(),
        actions: idx.iter().map(|&i| dataset.transitions[i].action.clone()).collect(),
        q_values: None,
    })
}

/// Grid-world MDP on a `width x height` board with four move actions, slip
/// noise, reward 1 for being at the goal cell, and an optional fixed start.
pub fn gridworld(
    width: usize,
    height: usize,
    goal: (usize, usize),
    slip_prob: f64,
    horizon: usize,
    start: Option<(usize, usize)>,
) -> Result<TabularMdp, DataError> {
    if width == 0 || height == 0 || goal.0 >= width || goal.1 >= height {
        return Err(DataError::Geometry(format!("goal {goal:?} outside {width}x{height}")));
    }
    if !(0.0..1.0).contains(&slip_prob) {
        return Err(DataError::Geometry(format!("slip_prob {slip_prob} outside [0,1)")));
    }
    let n = width * height;
    let id = |x: usize, y: usize| y * width + x;
    // moves: up, down, left, right; walls block (stay in place)
    let dest = |x: usize, y: usize, dir: usize| -> usize {
        let (nx, ny) = match dir {
            0 => (x, y.saturating_sub(1)),
            1 => (x, if y + 1 < height { y + 1 } else { y }),
            2 => (x.saturating_sub(1), y),
            _ => (if x + 1 < width { x + 1 } else { x }, y),
        };
        id(nx, ny)
    };
    let mut transition = vec![vec![vec![0.0; n]; 4]; n];
    let mut reward = vec![vec![0.0; 4]; n];
    for y in 0..height {
        for x in 0..width {
            let s = id(x, y);
            for a in 0..4 {
                transition[s][a][dest(x, y, a)] += 1.0 - slip_prob;
                for d in 0..4 {
                    transition[s][a][dest(x, y, d)] += slip_prob / 4.0;
                }
                if (x, y) == goal {
                    reward[s][a] = 1.0;
                }
            }
        }
    }
    let init_dist = match start {
        Some((sx, sy)) => {
            if sx >= width || sy >= height {
                return Err(DataError::Geometry(format!("start outside {width}x{height}")));
            }
            let mut d = vec![0.0; n];
            d[id(sx, sy)] = 1.0;
            d
        }
        None => vec![1.0 / n as f64; n],
    };
    TabularMdp::new(transition, reward, horizon, init_dist, 1.0)
        .map_err(|e| DataError::Geometry(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_return, value_iteration};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gridworld_rows_sum_to_one_and_hand_dp_matches() {
        let mdp = gridworld(3, 3, (0, 0), 0.0, 9, Some((2, 2))).unwrap();
        for s in 0..mdp.n_states() {
            for a in 0..mdp.n_actions() {
                let sum: f64 = mdp.transition_row(s, a).iter().sum();
                assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            }
        }
        // shortest path from the opposite corner is 4 moves, so the agent
        // sits on the goal for horizon - 4 steps.
        let vi = value_iteration(&mdp);
        let j = exact_return(&mdp, &vi.policy).unwrap();
        assert_abs_diff_eq!(j, (9 - 4) as f64, epsilon = 1e-9);
        // greedy actions trace a shortest path: from (2,2) both left and up
        // decrease distance; tie-breaking picks the lowest action index (up).
        assert_eq!(vi.policy.prob(8, 0), 1.0);
    }

    #[test]
    fn gridworld_slip_hurts() {
        let horizon = 9;
        let clean = gridworld(3, 3, (0, 0), 0.0, horizon, Some((2, 2))).unwrap();
        let noisy = gridworld(3, 3, (0, 0), 0.99, horizon, Some((2, 2))).unwrap();
        let j_clean = exact_return(&clean, &value_iteration(&clean).policy).unwrap();
        let j_noisy = exact_return(&noisy, &value_iteration(&noisy).policy).unwrap();
        assert!(j_noisy <= j_clean + 1e-9);
        assert!(gridworld(3, 3, (5, 0), 0.0, 9, None).is_err());
        assert!(gridworld(3, 3, (0, 0), 1.0, 9, None).is_err());
    }

    #[test]
    fn collection_is_seed_deterministic() {
        let env = PointNavEnv::default();
        let a = collect_dataset(&env, Profile::Medium, 500, 3);
        let b = collect_dataset(&env, Profile::Medium, 500, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 500);
        assert_eq!(a.to_text(), b.to_text());
        // rewards are bounded and actions clipped
        for t in &a.transitions {
            assert!(t.reward <= 0.0 && t.reward >= -env.r_max);
            assert!(t.action.iter().all(|v| (-1.0..=1.0).contains(v)));
            assert!(t.state.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn profile_return_and_diversity_orderings() {
        let env = PointNavEnv::default();
        let mut means = [0.0f64; 3];
        let mut cov_dets = [0.0f64; 3];
        let n = 3000;
        for (k, profile) in
            [Profile::ReplayLike, Profile::Medium, Profile::ExpertMix].into_iter().enumerate()
        {
            let mut mean_over_seeds = 0.0;
            let mut det_over_seeds = 0.0;
            for seed in 0..5 {
                let ds = collect_dataset(&env, profile, n, seed);
                let rets = ds.episode_returns(env.horizon);
                mean_over_seeds += rets.iter().sum::<f64>() / rets.len() as f64;
                // 2x2 covariance determinant of the visited states
                let m = ds.len() as f64;
                let mx = ds.transitions.iter().map(|t| t.state[0]).sum::<f64>() / m;
                let my = ds.transitions.iter().map(|t| t.state[1]).sum::<f64>() / m;
                let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
                for t in &ds.transitions {
                    let (dx, dy) = (t.state[0] - mx, t.state[1] - my);
                    sxx += dx * dx;
                    syy += dy * dy;
                    sxy += dx * dy;
                }
                let (sxx, syy, sxy) = (sxx / (m - 1.0), syy / (m - 1.0), sxy / (m - 1.0));
                det_over_seeds += sxx * syy - sxy * sxy;
            }
            means[k] = mean_over_seeds / 5.0;
            cov_dets[k] = det_over_seeds / 5.0;
        }
        let [replay, medium, expert_mix] = means;
        assert!(
            expert_mix > medium && medium > replay,
            "return ordering violated: {means:?}"
        );
        assert!(cov_dets[0] > cov_dets[2], "diversity ordering violated: {cov_dets:?}");
    }

    #[test]
    fn expert_behaviour() {
        let env = PointNavEnv { sigma: 0.0, ..Default::default() };
        let expert = make_expert(&env);
        // distance to goal is non-increasing without noise
        let mut rng = seeded_rng(11);
        let mut state = env.reset(&mut rng);
        let dist = |s: &[f64]| {
            ((s[0] - env.goal[0]).powi(2) + (s[1] - env.goal[1]).powi(2)).sqrt()
        };
        let mut last = dist(&state);
        for _ in 0..env.horizon {
            let (next, _) = env.step(&state, &expert.act(&state), &mut rng);
            let d = dist(&next);
            assert!(d <= last + 1e-12);
            last = d;
            state = next;
        }
        // starting at the goal it stays within one step size of it
        let env_at_goal = PointNavEnv {
            sigma: 0.0,
            start_lo: env.goal,
            start_hi: env.goal,
            ..Default::default()
        };
        let mut state = vec![env.goal[0], env.goal[1]];
        for _ in 0..100 {
            let (next, _) = env_at_goal.step(&state, &expert.act(&state), &mut rng);
            assert!(dist(&next) <= env.kappa * (2.0f64).sqrt() + 1e-12);
            state = next;
        }
        // expert beats the medium-profile controller
        let noisy_env = PointNavEnv::default();
        let (expert_mean, _) = mean_return(&noisy_env, &expert, 100, 5);
        let medium_ds = collect_dataset(&noisy_env, Profile::Medium, 5000, 5);
        let medium_rets = medium_ds.episode_returns(noisy_env.horizon);
        let medium_mean = medium_rets.iter().sum::<f64>() / medium_rets.len() as f64;
        assert!(expert_mean > medium_mean);
    }

    #[test]
    fn relabel_preserves_states_and_clips_actions() {
        let env = PointNavEnv::default();
        let ds = collect_dataset(&env, Profile::ReplayLike, 400, 9);
        let expert = make_expert(&env);
        let set = relabel(&ds, &expert);
        assert_eq!(set.len(), ds.len());
        for (i, t) in ds.transitions.iter().enumerate() {
            assert_eq!(set.states[i], t.state);
            assert!(set.actions[i].iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        // identity-preserving stub returns the original pairs
        struct Stub<'d>(&'d OfflineDataset);
        impl ContinuousPolicy for Stub<'_> {
            fn act(&self, state: &[f64]) -> Vec<f64> {
                let i = self
                    .0
                    .transitions
                    .iter()
                    .position(|t| t.state == state)
                    .expect("state from this dataset");
                self.0.transitions[i].action.clone()
            }
        }
        let echoed = relabel(&ds, &Stub(&ds));
        assert_eq!(echoed.actions, ds.as_behavior_set().actions);
    }

    #[test]
    fn q_estimates_behave() {
        let det_env = PointNavEnv { sigma: 0.0, ..Default::default() };
        let expert = make_expert(&det_env);
        let s = [-0.5, -0.5];
        let toward = expert.act(&s);
        let away: Vec<f64> = toward.iter().map(|v| -v).collect();
        // deterministic env: estimate is seed-independent
        let (q1, se1) = estimate_q_star(&det_env, &expert, &s, &toward, 4, 1);
        let (q2, _) = estimate_q_star(&det_env, &expert, &s, &toward, 4, 999);
        assert_eq!(q1, q2);
        assert_eq!(se1, 0.0);
        let (q_away, _) = estimate_q_star(&det_env, &expert, &s, &away, 4, 1);
        assert!(q1 > q_away);
        // horizon 1: q equals the immediate reward exactly
        let short = PointNavEnv { horizon: 1, sigma: 0.0, ..Default::default() };
        let (q, _) = estimate_q_star(&short, &expert, &s, &toward, 3, 7);
        assert_abs_diff_eq!(q, short.reward(&s), epsilon = 1e-15);
    }

    #[test]
    fn q_normalization_maps_to_unit_interval() {
        let env = PointNavEnv::default();
        let ds = collect_dataset(&env, Profile::Medium, 60, 21);
        let expert = make_expert(&env);
        let set = relabel_with_q(&env, &ds, &expert, 2, 5).with_normalized_q();
        let q = set.q_values.as_ref().unwrap();
        let lo = q.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(lo, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hi, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn random_select_contracts() {
        let env = PointNavEnv::default();
        let set = collect_dataset(&env, Profile::Medium, 40, 2).as_behavior_set();
        // n = size: a permutation of the input
        let all = random_select(&set, 40, 7).unwrap();
        let mut sorted_in: Vec<_> = set.states.clone();
        let mut sorted_out: Vec<_> = all.states.clone();
        sorted_in.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted_out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sorted_in, sorted_out);
        // seeded repeatability and bounds
        assert_eq!(random_select(&set, 5, 3).unwrap(), random_select(&set, 5, 3).unwrap());
        assert!(random_select(&set, 41, 3).is_err());
    }

    #[test]
    fn random_select_is_uniform() {
        // chi-square over 10^4 single-item selections from 8 items
        let set = BehaviorSet {
            states: (0..8).map(|i| vec![i as f64, 0.0]).collect(),
            actions: vec![vec![0.0, 0.0]; 8],
            q_values: None,
        };
        let repeats = 10_000;
        let mut counts = [0usize; 8];
        for i in 0..repeats {
            let pick = random_select(&set, 1, split_seed(100, i)).unwrap();
            counts[pick.states[0][0] as usize] += 1;
        }
        let expected = repeats as f64 / 8.0;
        let chi2: f64 =
            counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 7 degrees of freedom; 3-sigma-ish cutoff
        assert!(chi2 < 24.3, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn top_selection_contracts() {
        let env = PointNavEnv::default();
        let ds = collect_dataset(&env, Profile::ReplayLike, 500, 13);
        let top1 = top_reward_select(&ds, 1).unwrap();
        let best = ds
            .transitions
            .iter()
            .map(|t| t.reward)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(-((top1.states[0][0] - env.goal[0]).powi(2)
            + (top1.states[0][1] - env.goal[1]).powi(2))
        .sqrt(), best, epsilon = 1e-12);

        let top = top_reward_select(&ds, 50).unwrap();
        let kept: f64 = top
            .states
            .iter()
            .map(|s| env.reward(s))
            .fold(f64::INFINITY, f64::min);
        let mut rewards: Vec<f64> = ds.transitions.iter().map(|t| t.reward).collect();
        rewards.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for &excluded in &rewards[50..] {
            assert!(kept >= excluded - 1e-12);
        }
        // top-reward states cluster near the goal
        let mean_dist_top = top
            .states
            .iter()
            .map(|s| ((s[0] - env.goal[0]).powi(2) + (s[1] - env.goal[1]).powi(2)).sqrt())
            .sum::<f64>()
            / top.len() as f64;
        let mean_dist_all = ds
            .transitions
            .iter()
            .map(|t| {
                ((t.state[0] - env.goal[0]).powi(2) + (t.state[1] - env.goal[1]).powi(2)).sqrt()
            })
            .sum::<f64>()
            / ds.len() as f64;
        assert!(mean_dist_top < mean_dist_all);
        // q-based selection with ties resolved by dataset order
        let q: Vec<f64> = (0..ds.len()).map(|i| (i % 7) as f64).collect();
        let picked = top_q_select(&ds, &q, 3).unwrap();
        assert_eq!(picked.q_values, Some(vec![6.0, 6.0, 6.0]));
        assert_eq!(picked.states[0], ds.transitions[6].state);
        assert_eq!(picked.states[1], ds.transitions[13].state);
        assert!(top_q_select(&ds, &q[..10], 3).is_err());
    }

    #[test]
    fn dataset_and_behavior_round_trips() {
        let env = PointNavEnv::default();
        let ds = collect_dataset(&env, Profile::ExpertMix, 64, 17);
        let back = OfflineDataset::from_text(&ds.to_text()).unwrap();
        assert_eq!(back.transitions, ds.transitions);

        let expert = make_expert(&env);
        let set = relabel_with_q(&env, &ds, &expert, 2, 3);
        let back = BehaviorSet::from_text(&set.to_text()).unwrap();
        assert_eq!(back, set);
        assert!(BehaviorSet::from_text("garbage").is_err());
    }
}
