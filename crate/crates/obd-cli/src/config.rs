//! Flat key-value configuration with section headers.
//!
//! Every command reads the same schema; unknown sections or keys are
//! configuration errors (exit code 2). Values are whitespace-separated
//! tokens. See the README for the full key list and defaults.

use std::fmt::Write as _;

use obd_core::datagen::Profile;
use obd_core::distill::ObjectiveKind;
use obd_core::policy::Activation;

use crate::HarnessError;

/// Effective settings for a run; field groups mirror the config sections.
#[derive(Debug, Clone)]
pub struct Config {
    // [env]
    pub kappa: f64,
    pub sigma: f64,
    pub horizon: usize,
    pub goal: [f64; 2],
    pub start_lo: [f64; 2],
    pub start_hi: [f64; 2],
    pub r_max: f64,
    // [data]
    pub profile: Profile,
    pub n_transitions: usize,
    pub q_rollouts: usize,
    // [arch]
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub activation: Activation,
    pub residual: bool,
    // [distill]
    pub objective: ObjectiveKind,
    pub n_syn: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub tau: f64,
    pub outer_batch: usize,
    // [eval]
    pub episodes: usize,
    pub train_steps: usize,
    pub train_lr: f64,
    pub train_momentum: f64,
    pub n_seeds: usize,
    pub anchor_episodes: usize,
    pub real_train_steps: usize,
    // [bounds]
    pub bound_trials: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_horizon: usize,
    // [sweep]
    pub taus: Vec<f64>,
    pub mu_max: f64,
    pub mu_step: f64,
    pub eps0_piv: f64,
    pub eps_mu0_piv: f64,
    pub eps0_surr: f64,
    pub eps_mu0_surr: f64,
    pub bound_horizon: usize,
    pub hist_bins: usize,
    pub sweep_cadence: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            kappa: 0.1,
            sigma: 0.01,
            horizon: 50,
            goal: [0.8, 0.8],
            start_lo: [-1.0, -1.0],
            start_hi: [1.0, 1.0],
            r_max: 4.0,
            profile: Profile::Medium,
            n_transitions: 4000,
            q_rollouts: 16,
            hidden_dim: 16,
            n_layers: 4,
            activation: Activation::Tanh,
            residual: false,
            objective: ObjectiveKind::Sdw,
            n_syn: 32,
            t_in: 20,
            t_out: 500,
            alpha0: 0.1,
            alpha1: 0.1,
            beta0: 0.0,
            beta1: 0.9,
            tau: 0.1,
            outer_batch: 256,
            episodes: 10,
            train_steps: 30,
            train_lr: 0.1,
            train_momentum: 0.9,
            n_seeds: 5,
            anchor_episodes: 1000,
            real_train_steps: 300,
            bound_trials: 1000,
            max_states: 8,
            max_actions: 4,
            max_horizon: 10,
            taus: vec![0.0, 0.05, 0.1, 0.15],
            mu_max: 0.5,
            mu_step: 1e-3,
            eps0_piv: 0.01,
            eps_mu0_piv: 0.5,
            eps0_surr: 0.1,
            eps_mu0_surr: 0.2,
            bound_horizon: 1000,
            hist_bins: 40,
            sweep_cadence: 20,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| HarnessError::Config(format!("key {key}: bad value {value:?}: {e}")))
}

fn parse_pair(key: &str, value: &str) -> Result<[f64; 2], HarnessError> {
    let parts: Vec<&str> = value.split_whitespace().collect();
    if parts.len() != 2 {
        return Err(HarnessError::Config(format!("key {key}: expected two values")));
    }
    Ok([parse(key, parts[0])?, parse(key, parts[1])?])
}

impl Config {
    /// Parse the section/key-value text, starting from defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Config::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| {
                        HarnessError::Config(format!("line {}: unterminated section", lineno + 1))
                    })?
                    .trim();
                if !["env", "data", "arch", "distill", "eval", "bounds", "sweep"]
                    .contains(&name)
                {
                    return Err(HarnessError::Config(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), HarnessError> {
        let full = format!("[{section}] {key}");
        match (section, key) {
            ("env", "kappa") => self.kappa = parse(&full, value)?,
            ("env", "sigma") => self.sigma = parse(&full, value)?,
            ("env", "horizon") => self.horizon = parse(&full, value)?,
            ("env", "goal") => self.goal = parse_pair(&full, value)?,
            ("env", "start_lo") => self.start_lo = parse_pair(&full, value)?,
            ("env", "start_hi") => self.start_hi = parse_pair(&full, value)?,
            ("env", "r_max") => self.r_max = parse(&full, value)?,
            ("data", "profile") => {
                self.profile = Profile::from_tag(value)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
            ("data", "n_transitions") => self.n_transitions = parse(&full, value)?,
            ("data", "q_rollouts") => self.q_rollouts = parse(&full, value)?,
            ("arch", "hidden_dim") => self.hidden_dim = parse(&full, value)?,
            ("arch", "n_layers") => self.n_layers = parse(&full, value)?,
            ("arch", "activation") => {
                self.activation = Activation::from_tag(value)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
            ("arch", "residual") => self.residual = parse(&full, value)?,
            ("distill", "objective") => {
                self.objective = ObjectiveKind::from_tag(value)
                    .map_err(|e| HarnessError::Config(e.to_string()))?
            }
            ("distill", "n_syn") => self.n_syn = parse(&full, value)?,
            ("distill", "t_in") => self.t_in = parse(&full, value)?,
            ("distill", "t_out") => self.t_out = parse(&full, value)?,
            ("distill", "alpha0") => self.alpha0 = parse(&full, value)?,
            ("distill", "alpha1") => self.alpha1 = parse(&full, value)?,
            ("distill", "beta0") => self.beta0 = parse(&full, value)?,
            ("distill", "beta1") => self.beta1 = parse(&full, value)?,
            ("distill", "tau") => self.tau = parse(&full, value)?,
            ("distill", "outer_batch") => self.outer_batch = parse(&full, value)?,
            ("eval", "episodes") => self.episodes = parse(&full, value)?,
            ("eval", "train_steps") => self.train_steps = parse(&full, value)?,
            ("eval", "train_lr") => self.train_lr = parse(&full, value)?,
            ("eval", "train_momentum") => self.train_momentum = parse(&full, value)?,
            ("eval", "n_seeds") => self.n_seeds = parse(&full, value)?,
            ("eval", "anchor_episodes") => self.anchor_episodes = parse(&full, value)?,
            ("eval", "real_train_steps") => self.real_train_steps = parse(&full, value)?,
            ("bounds", "trials") => self.bound_trials = parse(&full, value)?,
            ("bounds", "max_states") => self.max_states = parse(&full, value)?,
            ("bounds", "max_actions") => self.max_actions = parse(&full, value)?,
            ("bounds", "max_horizon") => self.max_horizon = parse(&full, value)?,
            ("sweep", "taus") => {
                self.taus = value
                    .split_whitespace()
                    .map(|t| parse(&full, t))
                    .collect::<Result<_, _>>()?
            }
            ("sweep", "mu_max") => self.mu_max = parse(&full, value)?,
            ("sweep", "mu_step") => self.mu_step = parse(&full, value)?,
            ("sweep", "eps0_piv") => self.eps0_piv = parse(&full, value)?,
            ("sweep", "eps_mu0_piv") => self.eps_mu0_piv = parse(&full, value)?,
            ("sweep", "eps0_surr") => self.eps0_surr = parse(&full, value)?,
            ("sweep", "eps_mu0_surr") => self.eps_mu0_surr = parse(&full, value)?,
            ("sweep", "bound_horizon") => self.bound_horizon = parse(&full, value)?,
            ("sweep", "hist_bins") => self.hist_bins = parse(&full, value)?,
            ("sweep", "cadence") => self.sweep_cadence = parse(&full, value)?,
            _ => return Err(HarnessError::Config(format!("unknown key {full}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let positive = [
            ("env horizon", self.horizon),
            ("data n_transitions", self.n_transitions),
            ("data q_rollouts", self.q_rollouts),
            ("arch hidden_dim", self.hidden_dim),
            ("distill n_syn", self.n_syn),
            ("distill outer_batch", self.outer_batch),
            ("eval episodes", self.episodes),
            ("eval n_seeds", self.n_seeds),
            ("eval anchor_episodes", self.anchor_episodes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(HarnessError::Config(format!("{name} must be positive")));
            }
        }
        if self.n_layers < 1 {
            return Err(HarnessError::Config("arch n_layers must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta0) || !(0.0..1.0).contains(&self.beta1) {
            return Err(HarnessError::Config("momentum rates must lie in [0, 1)".into()));
        }
        if self.tau < 0.0 || self.taus.iter().any(|&t| t < 0.0) {
            return Err(HarnessError::Config("tau values must be nonnegative".into()));
        }
        if self.alpha0 <= 0.0 || self.alpha1 < 0.0 || self.train_lr <= 0.0 {
            return Err(HarnessError::Config("learning rates must be positive".into()));
        }
        if self.n_syn > self.n_transitions || self.outer_batch > self.n_transitions {
            return Err(HarnessError::Config(
                "n_syn and outer_batch must not exceed n_transitions".into(),
            ));
        }
        Ok(())
    }

    /// Canonical text rendering of the effective configuration; the config
    /// hash in CSV provenance lines is computed over this string.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "env kappa={} sigma={} horizon={} goal={},{} start_lo={},{} start_hi={},{} r_max={}\n\
             data profile={} n_transitions={} q_rollouts={}\n\
             arch hidden_dim={} n_layers={} activation={} residual={}\n\
             distill objective={} n_syn={} t_in={} t_out={} alpha0={} alpha1={} beta0={} beta1={} tau={} outer_batch={}\n\
             eval episodes={} train_steps={} train_lr={} train_momentum={} n_seeds={} anchor_episodes={} real_train_steps={}\n\
             bounds trials={} max_states={} max_actions={} max_horizon={}\n\
             sweep taus={:?} mu_max={} mu_step={} piv={},{} surr={},{} bound_horizon={} hist_bins={} cadence={}",
            self.kappa, self.sigma, self.horizon, self.goal[0], self.goal[1],
            self.start_lo[0], self.start_lo[1], self.start_hi[0], self.start_hi[1], self.r_max,
            self.profile.tag(), self.n_transitions, self.q_rollouts,
            self.hidden_dim, self.n_layers, self.activation.tag(), self.residual,
            self.objective.tag(), self.n_syn, self.t_in, self.t_out,
            self.alpha0, self.alpha1, self.beta0, self.beta1, self.tau, self.outer_batch,
            self.episodes, self.train_steps, self.train_lr, self.train_momentum,
            self.n_seeds, self.anchor_episodes, self.real_train_steps,
            self.bound_trials, self.max_states, self.max_actions, self.max_horizon,
            self.taus, self.mu_max, self.mu_step,
            self.eps0_piv, self.eps_mu0_piv, self.eps0_surr, self.eps_mu0_surr,
            self.bound_horizon, self.hist_bins, self.sweep_cadence,
        );
        s
    }

    /// FNV-1a hash of the canonical rendering.
    pub fn hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_hash_stably() {
        let cfg = Config::parse("").unwrap();
        assert_eq!(cfg.n_syn, 32);
        assert_eq!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn overrides_and_comments() {
        let text = "
# a comment
[distill]
objective = avpbc
t_out = 40   # trailing comment
[env]
goal = 0.5 -0.25
";
        let cfg = Config::parse(text).unwrap();
        assert_eq!(cfg.objective, ObjectiveKind::AvPbc);
        assert_eq!(cfg.t_out, 40);
        assert_eq!(cfg.goal, [0.5, -0.25]);
        assert_ne!(cfg.hash(), Config::default().hash());
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(Config::parse("[nope]\n").is_err());
        assert!(Config::parse("[distill]\nwhat = 3\n").is_err());
        assert!(Config::parse("[distill]\nt_out = soon\n").is_err());
        assert!(Config::parse("[distill]\nbeta1 = 1.5\n").is_err());
        assert!(Config::parse("[eval]\nn_seeds = 0\n").is_err());
        assert!(Config::parse("no equals sign\n").is_err());
    }
}
