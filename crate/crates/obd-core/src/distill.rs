//! Distillation objectives and the outer loop producing a synthetic
//! behavioral dataset.
//!
//! Every objective is the same weighted squared-error form
//! `mean_i w_i ||pi(s_i) - a_i||^2`; the variants differ only in the weight
//! column and in which pool the outer minibatch is drawn from:
//!
//! | kind   | pool            | weight           |
//! |--------|-----------------|------------------|
//! | DBC    | raw offline     | 1                |
//! | PBC    | relabeled       | 1                |
//! | Av-PBC | relabeled       | q_i              |
//! | SDW    | relabeled       | q_i / d(s_i)^tau |
//!
//! The outer loop follows the density-weighted recipe: initialize the
//! synthetic set by sampling the offline data, re-initialize the policy
//! every outer step, run the inner cloning loop, and descend the sampled
//! minibatch objective through the unroll with momentum.

use thiserror::Error;

use crate::datagen::{random_select, BehaviorSet, DataError, OfflineDataset};
use crate::density::{sdw_weight, DensityError, KdeModel};
use crate::policy::{MlpArch, MlpPolicy, PolicyError, SgdConfig};
use crate::rng::{seeded_rng, split_seed2};
use crate::unroll::{unrolled_grad, UnrollSpec, WeightedSquaredLoss};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("objective {0:?} needs q values on the batch")]
    MissingQ(ObjectiveKind),
    #[error("SDW needs a density model")]
    MissingDensity,
    #[error("non-finite objective or gradient at outer step {0}")]
    NonFinite(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    Dbc,
    Pbc,
    AvPbc,
    Sdw,
}

impl ObjectiveKind {
    pub fn tag(self) -> &'static str {
        match self {
            ObjectiveKind::Dbc => "dbc",
            ObjectiveKind::Pbc => "pbc",
            ObjectiveKind::AvPbc => "avpbc",
            ObjectiveKind::Sdw => "sdw",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self, DistillError> {
        match tag {
            "dbc" => Ok(ObjectiveKind::Dbc),
            "pbc" => Ok(ObjectiveKind::Pbc),
            "avpbc" => Ok(ObjectiveKind::AvPbc),
            "sdw" => Ok(ObjectiveKind::Sdw),
            other => Err(DistillError::Config(format!("unknown objective {other:?}"))),
        }
    }
}

/// Per-pair objective weights for a batch: ones, the q column, or the
/// density-discounted q column.
pub fn objective_weights(
    kind: ObjectiveKind,
    batch: &BehaviorSet,
    density_model: Option<&KdeModel>,
    tau: f64,
) -> Result<Vec<f64>, DistillError> {
    match kind {
        ObjectiveKind::Dbc | ObjectiveKind::Pbc => Ok(vec![1.0; batch.len()]),
        ObjectiveKind::AvPbc => {
            let q = batch.q_values.as_ref().ok_or(DistillError::MissingQ(kind))?;
            Ok(q.clone())
        }
        ObjectiveKind::Sdw => {
            let q = batch.q_values.as_ref().ok_or(DistillError::MissingQ(kind))?;
            let model = density_model.ok_or(DistillError::MissingDensity)?;
            batch
                .states
                .iter()
                .zip(q)
                .map(|(s, &qi)| {
                    let d = crate::density::density(model, s)?;
                    Ok(sdw_weight(qi, d.max(f64::MIN_POSITIVE), tau)?)
                })
                .collect()
        }
    }
}

/// Weighted cloning objective of `policy` on a batch.
pub fn objective_loss(
    kind: ObjectiveKind,
    policy: &MlpPolicy,
    batch: &BehaviorSet,
    density_model: Option<&KdeModel>,
    tau: f64,
) -> Result<f64, DistillError> {
    if batch.is_empty() {
        return Err(DistillError::Config("empty batch".into()));
    }
    let weights = objective_weights(kind, batch, density_model, tau)?;
    let mut total = 0.0;
    for i in 0..batch.len() {
        let out = policy.forward(&batch.states[i])?;
        let err: f64 = out
            .iter()
            .zip(&batch.actions[i])
            .map(|(&y, &a)| (y - a) * (y - a))
            .sum();
        total += weights[i] * err;
    }
    Ok(total / batch.len() as f64)
}

/// The learnable synthetic set: every state and action coordinate is an
/// optimization variable of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SynSet {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl SynSet {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn from_behavior_set(set: &BehaviorSet) -> Self {
        Self { states: set.states.clone(), actions: set.actions.clone() }
    }

    pub fn to_behavior_set(&self) -> BehaviorSet {
        BehaviorSet { states: self.states.clone(), actions: self.actions.clone(), q_values: None }
    }

    pub fn is_finite(&self) -> bool {
        self.states.iter().chain(&self.actions).flatten().all(|v| v.is_finite())
    }
}

/// Outer-loop configuration.
#[derive(Debug, Clone)]
pub struct DistillConfig {
    pub objective: ObjectiveKind,
    pub arch: MlpArch,
    pub n_syn: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    /// Inner loop (cloning) step size and momentum.
    pub inner_sgd: SgdConfig,
    /// Outer loop (synthetic data) step size and momentum.
    pub outer_sgd: SgdConfig,
    pub tau: f64,
    pub outer_batch: usize,
    /// Evaluation cadence in outer steps; 0 picks `max(1, outer_steps / 20)`.
    pub eval_every: usize,
}

impl DistillConfig {
    fn validate(&self, pool_len: usize, d_off_len: usize) -> Result<(), DistillError> {
        if self.n_syn == 0 || self.n_syn > d_off_len {
            return Err(DistillError::Config(format!(
                "n_syn {} outside 1..={d_off_len}",
                self.n_syn
            )));
        }
        if self.outer_batch == 0 || self.outer_batch > pool_len {
            return Err(DistillError::Config(format!(
                "outer_batch {} outside 1..={pool_len}",
                self.outer_batch
            )));
        }
        if self.tau < 0.0 {
            return Err(DistillError::Config(format!("tau {} < 0", self.tau)));
        }
        Ok(())
    }

    fn cadence(&self) -> usize {
        if self.eval_every > 0 {
            self.eval_every
        } else {
            (self.outer_steps / 20).max(1)
        }
    }
}

/// Objective trace and periodic evaluation returns of one run.
#[derive(Debug, Clone, Default)]
pub struct DistillHistory {
    /// Minibatch objective at each outer step (`outer_steps` entries).
    pub objective: Vec<f64>,
    /// `(outer_step, eval_return)` at the evaluation cadence.
    pub evals: Vec<(usize, f64)>,
}

// seed stream tags
const TAG_INIT: u64 = 0x494e4954;
const TAG_THETA: u64 = 0x54484554;
const TAG_BATCH: u64 = 0x42415443;

/// Run the full outer loop. The synthetic set starts as a seeded random
/// subset of the raw offline pairs; each outer step re-initializes the
/// policy, unrolls `inner_steps` cloning steps on the synthetic set, samples
/// a minibatch from the objective pool, and descends the weighted objective
/// through the unroll with the outer momentum. `eval_hook`, when given, is
/// called at the evaluation cadence with the current synthetic set and its
/// return value is recorded in the history.
pub fn distill(
    config: &DistillConfig,
    d_off: &OfflineDataset,
    d_real: &BehaviorSet,
    density_model: Option<&KdeModel>,
    seed: u64,
    mut eval_hook: Option<&mut dyn FnMut(usize, &SynSet) -> f64>,
) -> Result<(SynSet, DistillHistory), DistillError> {
    let pool = match config.objective {
        ObjectiveKind::Dbc => &d_off.as_behavior_set(),
        _ => d_real,
    };
    config.validate(pool.len(), d_off.len())?;
    // static pool: weights are computable once up front
    let weights = objective_weights(config.objective, pool, density_model, config.tau)?;

    let init = random_select(&d_off.as_behavior_set(), config.n_syn, split_seed2(seed, TAG_INIT, 0))?;
    let mut syn = SynSet::from_behavior_set(&init);
    let mut vel_states = vec![vec![0.0; crate::datagen::STATE_DIM]; config.n_syn];
    let mut vel_actions = vec![vec![0.0; crate::datagen::ACTION_DIM]; config.n_syn];
    let mut history = DistillHistory::default();
    let cadence = config.cadence();

    for step in 0..config.outer_steps {
        let unroll = UnrollSpec {
            inner_steps: config.inner_steps,
            inner_sgd: config.inner_sgd,
            init_seed: split_seed2(seed, TAG_THETA, step as u64),
        };
        let mut rng = seeded_rng(split_seed2(seed, TAG_BATCH, step as u64));
        let idx = rand::seq::index::sample(&mut rng, pool.len(), config.outer_batch).into_vec();
        let outer = WeightedSquaredLoss {
            states: idx.iter().map(|&i| pool.states[i].clone()).collect(),
            actions: idx.iter().map(|&i| pool.actions[i].clone()).collect(),
            weights: idx.iter().map(|&i| weights[i]).collect(),
        };
        let grads = unrolled_grad(&config.arch, &unroll, &syn.states, &syn.actions, &outer)
            .map_err(|_| DistillError::NonFinite(step))?;
        if !grads.outer_loss.is_finite() {
            return Err(DistillError::NonFinite(step));
        }
        history.objective.push(grads.outer_loss);
        let beta = config.outer_sgd.momentum;
        let alpha = config.outer_sgd.learning_rate;
        for ((s, v), g) in syn.states.iter_mut().zip(&mut vel_states).zip(&grads.states) {
            for ((sv, vv), &gv) in s.iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = beta * *vv + gv;
                *sv -= alpha * *vv;
            }
        }
        for ((a, v), g) in syn.actions.iter_mut().zip(&mut vel_actions).zip(&grads.actions) {
            for ((av, vv), &gv) in a.iter_mut().zip(v.iter_mut()).zip(g) {
                *vv = beta * *vv + gv;
                *av -= alpha * *vv;
            }
        }
        if !syn.is_finite() {
            return Err(DistillError::NonFinite(step));
        }
        if (step + 1) % cadence == 0 {
            if let Some(hook) = eval_hook.as_mut() {
                let ret = hook(step + 1, &syn);
                history.evals.push((step + 1, ret));
            }
        }
    }
    Ok((syn, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{collect_dataset, make_expert, relabel_with_q, PointNavEnv, Profile};
    use crate::density::{fit_kde, BandwidthRule};
    use crate::policy::Activation;
    use crate::rng::seeded_rng;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn small_arch() -> MlpArch {
        MlpArch::new(vec![2, 8, 8, 2], Activation::Tanh)
    }

    fn random_batch_with_q(n: usize, seed: u64) -> BehaviorSet {
        let mut rng = seeded_rng(seed);
        BehaviorSet {
            states: (0..n)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            actions: (0..n)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            q_values: Some((0..n).map(|_| rng.gen_range(0.0..3.0)).collect()),
        }
    }

    #[test]
    fn objective_identities_hold_exactly() {
        let arch = small_arch();
        let policy = MlpPolicy::init(&arch, 1);
        for seed in 0..20 {
            let batch = random_batch_with_q(16, seed);
            let states: Vec<Vec<f64>> = batch.states.clone();
            let model = fit_kde(&states, BandwidthRule::Scott).unwrap();
            // SDW at tau = 0 is Av-PBC
            let sdw = objective_loss(ObjectiveKind::Sdw, &policy, &batch, Some(&model), 0.0)
                .unwrap();
            let avpbc =
                objective_loss(ObjectiveKind::AvPbc, &policy, &batch, None, 0.0).unwrap();
            assert!((sdw - avpbc).abs() < 1e-12);
            // Av-PBC with unit q is PBC
            let mut unit = batch.clone();
            unit.q_values = Some(vec![1.0; unit.len()]);
            let av1 = objective_loss(ObjectiveKind::AvPbc, &policy, &unit, None, 0.0).unwrap();
            let pbc = objective_loss(ObjectiveKind::Pbc, &policy, &unit, None, 0.0).unwrap();
            assert!((av1 - pbc).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_weighted_batch() {
        // zero policy, residual norms 1 and 0.25, weights 2 and 4:
        // H = (2*1 + 4*0.25) / 2 = 1.5
        let arch = MlpArch::new(vec![2, 2], Activation::Tanh);
        let zero = MlpPolicy::new(arch.clone(), vec![0.0; arch.param_count()]).unwrap();
        let batch = BehaviorSet {
            states: vec![vec![0.3, 0.3], vec![-0.2, 0.4]],
            actions: vec![vec![1.0, 0.0], vec![0.5, 0.0]],
            q_values: Some(vec![2.0, 4.0]),
        };
        let h = objective_loss(ObjectiveKind::AvPbc, &zero, &batch, None, 0.0).unwrap();
        assert_abs_diff_eq!(h, 1.5, epsilon = 1e-15);
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let arch = small_arch();
        let policy = MlpPolicy::init(&arch, 2);
        let mut batch = random_batch_with_q(4, 3);
        batch.q_values = None;
        assert!(matches!(
            objective_loss(ObjectiveKind::AvPbc, &policy, &batch, None, 0.0),
            Err(DistillError::MissingQ(_))
        ));
        let batch = random_batch_with_q(4, 4);
        assert!(matches!(
            objective_loss(ObjectiveKind::Sdw, &policy, &batch, None, 0.1),
            Err(DistillError::MissingDensity)
        ));
    }

    fn tiny_setup() -> (PointNavEnv, OfflineDataset, BehaviorSet, KdeModel) {
        let env = PointNavEnv::default();
        let d_off = collect_dataset(&env, Profile::Medium, 300, 7);
        let expert = make_expert(&env);
        let d_real = relabel_with_q(&env, &d_off, &expert, 2, 11).with_normalized_q();
        let model = fit_kde(&d_real.states, BandwidthRule::Scott).unwrap();
        (env, d_off, d_real, model)
    }

    fn tiny_config(objective: ObjectiveKind, outer_steps: usize) -> DistillConfig {
        DistillConfig {
            objective,
            arch: small_arch(),
            n_syn: 8,
            inner_steps: 10,
            outer_steps,
            inner_sgd: SgdConfig::plain(0.1),
            outer_sgd: SgdConfig { learning_rate: 0.1, momentum: 0.9 },
            tau: 0.1,
            outer_batch: 64,
            eval_every: 0,
        }
    }

    #[test]
    fn zero_outer_steps_returns_the_seeded_selection() {
        let (_, d_off, d_real, model) = tiny_setup();
        let config = tiny_config(ObjectiveKind::Sdw, 0);
        let (syn, history) =
            distill(&config, &d_off, &d_real, Some(&model), 5, None).unwrap();
        let expected =
            random_select(&d_off.as_behavior_set(), config.n_syn, split_seed2(5, TAG_INIT, 0))
                .unwrap();
        assert_eq!(syn.states, expected.states);
        assert_eq!(syn.actions, expected.actions);
        assert!(history.objective.is_empty());
        // initialization is a verbatim subset of the offline data
        for (s, a) in syn.states.iter().zip(&syn.actions) {
            assert!(d_off
                .transitions
                .iter()
                .any(|t| &t.state == s && &t.action == a));
        }
    }

    #[test]
    fn zero_outer_rate_keeps_the_initialization() {
        let (_, d_off, d_real, model) = tiny_setup();
        let mut config = tiny_config(ObjectiveKind::Sdw, 5);
        config.outer_sgd.learning_rate = 0.0;
        let (syn, history) = distill(&config, &d_off, &d_real, Some(&model), 5, None).unwrap();
        let (syn0, _) =
            distill(&tiny_config(ObjectiveKind::Sdw, 0), &d_off, &d_real, Some(&model), 5, None)
                .unwrap();
        assert_eq!(syn, syn0);
        assert_eq!(history.objective.len(), 5);
    }

    #[test]
    fn gradients_reach_the_synthetic_set() {
        let (_, d_off, d_real, model) = tiny_setup();
        let config = tiny_config(ObjectiveKind::AvPbc, 1);
        let (syn, history) = distill(&config, &d_off, &d_real, Some(&model), 5, None).unwrap();
        let (syn0, _) =
            distill(&tiny_config(ObjectiveKind::AvPbc, 0), &d_off, &d_real, Some(&model), 5, None)
                .unwrap();
        assert!(history.objective[0] > 0.0);
        assert_ne!(syn, syn0, "one outer step must move at least one coordinate");
    }

    #[test]
    fn objective_trends_down_at_small_scale() {
        let (_, d_off, d_real, model) = tiny_setup();
        let config = tiny_config(ObjectiveKind::AvPbc, 60);
        let (_, history) = distill(&config, &d_off, &d_real, Some(&model), 9, None).unwrap();
        let head: f64 = history.objective[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = history.objective[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "objective did not decrease: head {head} tail {tail}");
    }

    #[test]
    fn runs_are_deterministic_and_hooks_fire_on_cadence() {
        let (_, d_off, d_real, model) = tiny_setup();
        let mut config = tiny_config(ObjectiveKind::Sdw, 12);
        config.eval_every = 4;
        let mut calls = Vec::new();
        let mut hook = |step: usize, syn: &SynSet| {
            calls.push((step, syn.states[0][0]));
            42.0
        };
        let (syn_a, hist_a) =
            distill(&config, &d_off, &d_real, Some(&model), 77, Some(&mut hook)).unwrap();
        assert_eq!(calls.iter().map(|c| c.0).collect::<Vec<_>>(), vec![4, 8, 12]);
        assert_eq!(hist_a.evals, vec![(4, 42.0), (8, 42.0), (12, 42.0)]);
        let (syn_b, hist_b) =
            distill(&config, &d_off, &d_real, Some(&model), 77, None).unwrap();
        assert_eq!(syn_a, syn_b);
        assert_eq!(hist_a.objective, hist_b.objective);
    }

    #[test]
    fn sdw_tau_zero_run_equals_avpbc_run_exactly() {
        let (_, d_off, d_real, model) = tiny_setup();
        let mut sdw_config = tiny_config(ObjectiveKind::Sdw, 8);
        sdw_config.tau = 0.0;
        let avpbc_config = tiny_config(ObjectiveKind::AvPbc, 8);
        let (syn_sdw, hist_sdw) =
            distill(&sdw_config, &d_off, &d_real, Some(&model), 123, None).unwrap();
        let (syn_av, hist_av) =
            distill(&avpbc_config, &d_off, &d_real, Some(&model), 123, None).unwrap();
        assert_eq!(syn_sdw, syn_av);
        assert_eq!(hist_sdw.objective, hist_av.objective);
    }

    #[test]
    fn config_validation() {
        let (_, d_off, d_real, model) = tiny_setup();
        let mut config = tiny_config(ObjectiveKind::Pbc, 1);
        config.n_syn = d_off.len() + 1;
        assert!(matches!(
            distill(&config, &d_off, &d_real, Some(&model), 1, None),
            Err(DistillError::Config(_))
        ));
        let mut config = tiny_config(ObjectiveKind::Pbc, 1);
        config.outer_batch = d_real.len() + 1;
        assert!(matches!(
            distill(&config, &d_off, &d_real, Some(&model), 1, None),
            Err(DistillError::Config(_))
        ));
    }
}
