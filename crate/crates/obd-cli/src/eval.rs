//! Seeded evaluation pipeline: dataset construction, return anchors, and
//! normalized-return evaluation of policies and behavioral sets.

use obd_core::datagen::{
    collect_dataset, make_expert, mean_return, random_policy_return, relabel_with_q, BehaviorSet,
    OfflineDataset, PointNavEnv, Profile, ScriptedExpert,
};
use obd_core::density::{fit_kde, BandwidthRule, KdeModel};
use obd_core::policy::{train_bc, ContinuousPolicy, MlpArch, MlpPolicy, SgdConfig};
use obd_core::rng::{split_seed, split_seed2};

use crate::{Config, HarnessError};

// seed stream tags
pub const TAG_DATA: u64 = 0x44415441;
pub const TAG_QEST: u64 = 0x51455354;
pub const TAG_ANCHOR: u64 = 0x414e4348;
pub const TAG_RUN: u64 = 0x52554e00;
pub const TAG_SELECT: u64 = 0x53454c00;
pub const TAG_EVAL_TRAIN: u64 = 0x45545200;
pub const TAG_EVAL_ROLL: u64 = 0x45524c00;

/// Return anchors of one environment configuration, measured once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchors {
    pub random_return: f64,
    pub expert_return: f64,
}

impl Anchors {
    pub fn measure(env: &PointNavEnv, expert: &ScriptedExpert, episodes: usize, seed: u64) -> Self {
        let random_return = random_policy_return(env, episodes, split_seed(seed, 0));
        let expert_return = mean_return(env, expert, episodes, split_seed(seed, 1)).0;
        Self { random_return, expert_return }
    }

    pub fn normalize(&self, ret: f64) -> Result<f64, HarnessError> {
        normalized_return(ret, self.random_return, self.expert_return)
    }
}

/// Affine map sending the random anchor to 0 and the expert anchor to 100.
pub fn normalized_return(ret: f64, random_ret: f64, expert_ret: f64) -> Result<f64, HarnessError> {
    if !(expert_ret > random_ret) {
        return Err(HarnessError::Config(format!(
            "degenerate anchors: expert {expert_ret} vs random {random_ret}"
        )));
    }
    Ok(100.0 * (ret - random_ret) / (expert_ret - random_ret))
}

/// Everything a PointNav experiment needs, derived deterministically from
/// `(config, profile, seed)`.
pub struct Pipeline {
    pub env: PointNavEnv,
    pub expert: ScriptedExpert,
    pub d_off: OfflineDataset,
    /// Relabeled pairs with the raw Monte-Carlo q column.
    pub d_real: BehaviorSet,
    /// The same pairs with the q column affinely rescaled to `[0, 1]`;
    /// distillation weights use this set.
    pub d_real_norm: BehaviorSet,
    pub density: KdeModel,
    pub anchors: Anchors,
    pub arch: MlpArch,
}

pub fn env_from(cfg: &Config) -> PointNavEnv {
    PointNavEnv {
        kappa: cfg.kappa,
        sigma: cfg.sigma,
        horizon: cfg.horizon,
        goal: cfg.goal,
        start_lo: cfg.start_lo,
        start_hi: cfg.start_hi,
        r_max: cfg.r_max,
        ..Default::default()
    }
}

/// Default network shape: `n_layers` weight layers of width `hidden_dim`
/// between the 2-d state and 2-d action.
pub fn arch_from(cfg: &Config) -> MlpArch {
    let mut dims = vec![obd_core::datagen::STATE_DIM];
    dims.extend(std::iter::repeat(cfg.hidden_dim).take(cfg.n_layers.saturating_sub(1)));
    dims.push(obd_core::datagen::ACTION_DIM);
    let mut arch = MlpArch::new(dims, cfg.activation);
    arch.residual = cfg.residual;
    arch
}

pub fn build_pipeline(cfg: &Config, profile: Profile, seed: u64) -> Result<Pipeline, HarnessError> {
    let env = env_from(cfg);
    let expert = make_expert(&env);
    let d_off = collect_dataset(&env, profile, cfg.n_transitions, split_seed(seed, TAG_DATA));
    let d_real =
        relabel_with_q(&env, &d_off, &expert, cfg.q_rollouts, split_seed(seed, TAG_QEST));
    let d_real_norm = d_real.clone().with_normalized_q();
    let density = fit_kde(&d_real.states, BandwidthRule::Scott)?;
    let anchors =
        Anchors::measure(&env, &expert, cfg.anchor_episodes, split_seed(seed, TAG_ANCHOR));
    Ok(Pipeline { env, expert, d_off, d_real, d_real_norm, density, anchors, arch: arch_from(cfg) })
}

/// Mean return and standard error of a deterministic policy over seeded
/// episodes.
pub fn eval_policy(
    env: &PointNavEnv,
    policy: &impl ContinuousPolicy,
    episodes: usize,
    seed: u64,
) -> (f64, f64) {
    mean_return(env, policy, episodes, seed)
}

/// Train a fresh seeded policy on the pairs for `steps` full-batch steps and
/// roll it out; returns the raw mean return.
pub fn evaluate_pairs(
    env: &PointNavEnv,
    arch: &MlpArch,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    cfg: &Config,
    steps: usize,
    seed: u64,
) -> Result<f64, HarnessError> {
    let init = MlpPolicy::init(arch, split_seed(seed, TAG_EVAL_TRAIN));
    let sgd = SgdConfig { learning_rate: cfg.train_lr, momentum: cfg.train_momentum };
    let (trained, _) = train_bc(&init, states, actions, steps, sgd)?;
    Ok(mean_return(env, &trained, cfg.episodes, split_seed(seed, TAG_EVAL_ROLL)).0)
}

/// Normalized-return evaluation of a behavioral set under the pipeline's
/// anchors.
pub fn evaluate_set(
    pipe: &Pipeline,
    cfg: &Config,
    set: &BehaviorSet,
    seed: u64,
) -> Result<f64, HarnessError> {
    let raw =
        evaluate_pairs(&pipe.env, &pipe.arch, &set.states, &set.actions, cfg, cfg.train_steps, seed)?;
    pipe.anchors.normalize(raw)
}

/// Per-run seed for seed index `i`; shared by every method so that runs
/// differing only in the objective see identical random streams.
pub fn run_seed(master: u64, seed_idx: usize) -> u64 {
    split_seed2(master, TAG_RUN, seed_idx as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_is_affine() {
        assert_eq!(normalized_return(2.0, 0.0, 2.0).unwrap(), 100.0);
        assert_eq!(normalized_return(0.0, 0.0, 2.0).unwrap(), 0.0);
        assert_eq!(normalized_return(1.0, 0.0, 2.0).unwrap(), 50.0);
        // invariant under a common shift of all three inputs
        let a = normalized_return(1.3, 0.2, 2.9).unwrap();
        let b = normalized_return(1.3 + 10.0, 0.2 + 10.0, 2.9 + 10.0).unwrap();
        assert!((a - b).abs() < 1e-9);
        assert!(normalized_return(1.0, 2.0, 2.0).is_err());
    }

    #[test]
    fn deterministic_env_and_policy_have_zero_stderr() {
        let cfg = Config::default();
        let mut env = env_from(&cfg);
        env.sigma = 0.0;
        env.start_lo = [-0.5, -0.5];
        env.start_hi = [-0.5, -0.5];
        let expert = make_expert(&env);
        let (_, stderr) = eval_policy(&env, &expert, 5, 3);
        assert_eq!(stderr, 0.0);
    }

    #[test]
    fn expert_scores_near_one_hundred() {
        let mut cfg = Config::default();
        cfg.anchor_episodes = 300;
        let env = env_from(&cfg);
        let expert = make_expert(&env);
        let anchors = Anchors::measure(&env, &expert, cfg.anchor_episodes, 99);
        let (ret, _) = eval_policy(&env, &expert, 10, 12345);
        let norm = anchors.normalize(ret).unwrap();
        assert!(norm >= 95.0, "expert normalized return {norm}");
    }

    #[test]
    fn untrained_zero_policy_sits_near_the_random_anchor() {
        let mut cfg = Config::default();
        cfg.anchor_episodes = 300;
        let env = env_from(&cfg);
        let expert = make_expert(&env);
        let anchors = Anchors::measure(&env, &expert, cfg.anchor_episodes, 99);
        let arch = arch_from(&cfg);
        let zero =
            MlpPolicy::new(arch.clone(), vec![0.0; arch.param_count()]).unwrap();
        let (ret, _) = eval_policy(&env, &zero, 50, 5);
        let norm = anchors.normalize(ret).unwrap();
        // a frozen zero policy drifts with the noise only; far below expert
        assert!(norm < 60.0, "zero policy normalized return {norm}");
    }
}
