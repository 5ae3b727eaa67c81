//! Experiment runners: method comparison, tau sweep, misalignment table,
//! loss-vs-return sweeps, density histograms, bound sweeps, and the bound
//! fuzz verifier, all emitting seeded CSV tables.

use obd_core::bounds::{figure4_sweep, mu_grid, verify_bounds, FuzzCaps, FuzzReport};
use obd_core::datagen::{
    collect_dataset, estimate_q_star, random_select, top_q_select, top_reward_select, BehaviorSet,
    Profile,
};
use obd_core::density::{fit_kde, log_density, log_density_histogram, BandwidthRule};
use obd_core::distill::{distill, DistillConfig, ObjectiveKind, SynSet};
use obd_core::policy::{bc_loss, BcTrainer, MlpArch, MlpPolicy, SgdConfig};
use obd_core::rng::{split_seed, split_seed2};

use crate::csvout::{fmt, Csv};
use crate::eval::{
    build_pipeline, env_from, eval_policy, evaluate_pairs, evaluate_set, run_seed, Pipeline,
    TAG_SELECT,
};
use crate::{Config, HarnessError};

const TAG_EVAL_STEP: u64 = 0x45565354;
const TAG_SWEEP: u64 = 0x53575045;
const TAG_RAWQ: u64 = 0x52415751;

/// One experiment row: a label with per-seed normalized returns.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub name: String,
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

impl MethodRow {
    fn new(name: impl Into<String>, per_seed: Vec<f64>) -> Self {
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        Self { name: name.into(), per_seed, mean }
    }
}

fn rows_to_csv(cfg: &Config, seed: u64, label: &str, rows: &[MethodRow]) -> Csv {
    let mut header = vec![label.to_string(), "mean_normalized_return".to_string()];
    header.extend((0..cfg.n_seeds).map(|i| format!("seed{i}")));
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(cfg.hash(), seed, &header_refs);
    for row in rows {
        let mut fields = vec![row.name.clone(), fmt(row.mean)];
        fields.extend(row.per_seed.iter().map(|&v| fmt(v)));
        csv.row(&fields);
    }
    csv
}

fn distill_config(cfg: &Config, pipe: &Pipeline, objective: ObjectiveKind, tau: f64) -> DistillConfig {
    DistillConfig {
        objective,
        arch: pipe.arch.clone(),
        n_syn: cfg.n_syn,
        inner_steps: cfg.t_in,
        outer_steps: cfg.t_out,
        inner_sgd: SgdConfig { learning_rate: cfg.alpha0, momentum: cfg.beta0 },
        outer_sgd: SgdConfig { learning_rate: cfg.alpha1, momentum: cfg.beta1 },
        tau,
        outer_batch: cfg.outer_batch,
        eval_every: 0,
    }
}

/// Run one distillation and score it as the mean normalized return over the
/// last (up to) five periodic evaluations.
pub fn distill_score(
    pipe: &Pipeline,
    cfg: &Config,
    objective: ObjectiveKind,
    tau: f64,
    seed: u64,
) -> Result<(f64, SynSet), HarnessError> {
    let dconfig = distill_config(cfg, pipe, objective, tau);
    let mut hook_err: Option<HarnessError> = None;
    let mut hook = |step: usize, syn: &SynSet| -> f64 {
        match evaluate_set(pipe, cfg, &syn.to_behavior_set(), split_seed2(seed, TAG_EVAL_STEP, step as u64))
        {
            Ok(v) => v,
            Err(e) => {
                hook_err = Some(e);
                f64::NAN
            }
        }
    };
    let (syn, history) = distill(
        &dconfig,
        &pipe.d_off,
        &pipe.d_real_norm,
        Some(&pipe.density),
        seed,
        Some(&mut hook),
    )?;
    if let Some(e) = hook_err {
        return Err(e);
    }
    let evals = &history.evals;
    if evals.is_empty() {
        return Err(HarnessError::Config("no evaluations recorded; t_out too small".into()));
    }
    let tail = &evals[evals.len().saturating_sub(5)..];
    let score = tail.iter().map(|(_, v)| v).sum::<f64>() / tail.len() as f64;
    if !score.is_finite() {
        return Err(HarnessError::Numerical("non-finite evaluation score".into()));
    }
    Ok((score, syn))
}

/// Monte-Carlo q for the raw offline pairs (used by the top-q baseline).
fn raw_q(pipe: &Pipeline, cfg: &Config, seed: u64) -> Vec<f64> {
    pipe.d_off
        .transitions
        .iter()
        .enumerate()
        .map(|(i, t)| {
            estimate_q_star(
                &pipe.env,
                &pipe.expert,
                &t.state,
                &t.action,
                cfg.q_rollouts,
                split_seed2(seed, TAG_RAWQ, i as u64),
            )
            .0
        })
        .collect()
}

pub const COMPARE_METHODS: [&str; 8] =
    ["rand_off", "rand_real", "top_reward", "top_q", "dbc", "pbc", "avpbc", "sdw"];

/// Table-3-style comparison of the selection baselines and the four
/// distillation objectives, mean over seeds (and over the last five
/// evaluations for distillation runs).
pub fn compare_methods(
    cfg: &Config,
    seed: u64,
    jobs: usize,
    methods: &[&str],
) -> Result<(Vec<MethodRow>, Csv), HarnessError> {
    let pipe = build_pipeline(cfg, cfg.profile, seed)?;
    let q_raw = if methods.contains(&"top_q") { raw_q(&pipe, cfg, seed) } else { Vec::new() };
    let mut cells: Vec<Box<dyn FnOnce() -> Result<f64, HarnessError> + Send>> = Vec::new();
    for &method in methods {
        for idx in 0..cfg.n_seeds {
            let rs = run_seed(seed, idx);
            let pipe = &pipe;
            let q_raw = &q_raw;
            cells.push(Box::new(move || -> Result<f64, HarnessError> {
                let eval_seed = split_seed2(rs, TAG_EVAL_STEP, 0);
                match method {
                    "rand_off" => {
                        let set = random_select(
                            &pipe.d_off.as_behavior_set(),
                            cfg.n_syn,
                            split_seed(rs, TAG_SELECT),
                        )?;
                        evaluate_set(pipe, cfg, &set, eval_seed)
                    }
                    "rand_real" => {
                        let set =
                            random_select(&pipe.d_real, cfg.n_syn, split_seed(rs, TAG_SELECT))?;
                        evaluate_set(pipe, cfg, &set, eval_seed)
                    }
                    "top_reward" => {
                        let set = top_reward_select(&pipe.d_off, cfg.n_syn)?;
                        evaluate_set(pipe, cfg, &set, eval_seed)
                    }
                    "top_q" => {
                        let set = top_q_select(&pipe.d_off, q_raw, cfg.n_syn)?;
                        evaluate_set(pipe, cfg, &set, eval_seed)
                    }
                    "dbc" => Ok(distill_score(pipe, cfg, ObjectiveKind::Dbc, cfg.tau, rs)?.0),
                    "pbc" => Ok(distill_score(pipe, cfg, ObjectiveKind::Pbc, cfg.tau, rs)?.0),
                    "avpbc" => Ok(distill_score(pipe, cfg, ObjectiveKind::AvPbc, cfg.tau, rs)?.0),
                    "sdw" => Ok(distill_score(pipe, cfg, ObjectiveKind::Sdw, cfg.tau, rs)?.0),
                    other => Err(HarnessError::Config(format!("unknown method {other:?}"))),
                }
            }));
        }
    }
    let results = crate::run_cells(jobs, cells);
    let mut rows = Vec::new();
    let mut it = results.into_iter();
    for &method in methods {
        let per_seed: Vec<f64> =
            (0..cfg.n_seeds).map(|_| it.next().unwrap()).collect::<Result<_, _>>()?;
        rows.push(MethodRow::new(method, per_seed));
    }
    let csv = rows_to_csv(cfg, seed, "method", &rows);
    Ok((rows, csv))
}

/// Density-weighting intensity sweep; every run uses the SDW objective with
/// the given tau and the same per-seed streams as `compare_methods`.
pub fn tau_sweep(
    cfg: &Config,
    seed: u64,
    jobs: usize,
) -> Result<(Vec<MethodRow>, Csv), HarnessError> {
    let pipe = build_pipeline(cfg, cfg.profile, seed)?;
    let mut cells: Vec<Box<dyn FnOnce() -> Result<f64, HarnessError> + Send>> = Vec::new();
    for &tau in &cfg.taus {
        for idx in 0..cfg.n_seeds {
            let rs = run_seed(seed, idx);
            let pipe = &pipe;
            cells.push(Box::new(move || {
                Ok(distill_score(pipe, cfg, ObjectiveKind::Sdw, tau, rs)?.0)
            }));
        }
    }
    let results = crate::run_cells(jobs, cells);
    let mut rows = Vec::new();
    let mut it = results.into_iter();
    for &tau in &cfg.taus {
        let per_seed: Vec<f64> =
            (0..cfg.n_seeds).map(|_| it.next().unwrap()).collect::<Result<_, _>>()?;
        rows.push(MethodRow::new(fmt(tau), per_seed));
    }
    let csv = rows_to_csv(cfg, seed, "tau", &rows);
    Ok((rows, csv))
}

/// Dataset-quality misalignment table: per collection profile, the
/// normalized return of cloning on the full relabeled data versus cloning on
/// data distilled from it.
pub fn misalignment_experiment(
    cfg: &Config,
    seed: u64,
    jobs: usize,
) -> Result<(Vec<MethodRow>, Csv), HarnessError> {
    let profiles = [Profile::ReplayLike, Profile::Medium, Profile::ExpertMix];
    let mut rows = Vec::new();
    for profile in profiles {
        let pipe = build_pipeline(cfg, profile, seed)?;
        let mut cells: Vec<Box<dyn FnOnce() -> Result<f64, HarnessError> + Send>> = Vec::new();
        for idx in 0..cfg.n_seeds {
            let rs = run_seed(seed, idx);
            let pipe = &pipe;
            cells.push(Box::new(move || {
                let raw = evaluate_pairs(
                    &pipe.env,
                    &pipe.arch,
                    &pipe.d_real.states,
                    &pipe.d_real.actions,
                    cfg,
                    cfg.real_train_steps,
                    split_seed2(rs, TAG_EVAL_STEP, 0),
                )?;
                pipe.anchors.normalize(raw)
            }));
        }
        for idx in 0..cfg.n_seeds {
            let rs = run_seed(seed, idx);
            let pipe = &pipe;
            cells.push(Box::new(move || {
                Ok(distill_score(pipe, cfg, ObjectiveKind::AvPbc, cfg.tau, rs)?.0)
            }));
        }
        let results: Vec<Result<f64, HarnessError>> = crate::run_cells(jobs, cells);
        let mut it = results.into_iter();
        let real: Vec<f64> =
            (0..cfg.n_seeds).map(|_| it.next().unwrap()).collect::<Result<_, _>>()?;
        let syn: Vec<f64> =
            (0..cfg.n_seeds).map(|_| it.next().unwrap()).collect::<Result<_, _>>()?;
        rows.push(MethodRow::new(format!("d_real/{}", profile.tag()), real));
        rows.push(MethodRow::new(format!("d_syn/{}", profile.tag()), syn));
    }
    let csv = rows_to_csv(cfg, seed, "dataset", &rows);
    Ok((rows, csv))
}

/// One training curve of the loss-vs-return sweep.
#[derive(Debug, Clone)]
pub struct LossReturnCurve {
    pub seed_idx: usize,
    /// `(step, loss, normalized_return)`; the loss column is later shifted
    /// by its run minimum.
    pub points: Vec<(usize, f64, f64)>,
}

impl LossReturnCurve {
    pub fn min_loss(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    /// Linear interpolation of the return at a given normalized loss.
    pub fn return_at_normalized_loss(&self, target: f64) -> f64 {
        let min = self.min_loss();
        let mut pts: Vec<(f64, f64)> =
            self.points.iter().map(|&(_, l, r)| (l - min, r)).collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if target <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            if target <= w[1].0 {
                let t = (target - w[0].0) / (w[1].0 - w[0].0).max(1e-300);
                return w[0].1 + t * (w[1].1 - w[0].1);
            }
        }
        pts.last().unwrap().1
    }
}

/// Train cloning on the full relabeled dataset, logging `(loss, normalized
/// return)` at a fixed cadence.
pub fn loss_return_sweep(
    cfg: &Config,
    profile: Profile,
    seed: u64,
) -> Result<(Vec<LossReturnCurve>, Csv), HarnessError> {
    let pipe = build_pipeline(cfg, profile, seed)?;
    let cadence = (cfg.real_train_steps / cfg.sweep_cadence).max(1);
    let sgd = SgdConfig { learning_rate: cfg.train_lr, momentum: cfg.train_momentum };
    let mut curves = Vec::new();
    for idx in 0..cfg.n_seeds {
        let rs = run_seed(seed, idx);
        let init = MlpPolicy::init(&pipe.arch, split_seed(rs, TAG_SWEEP));
        let mut trainer = BcTrainer::new(&init, sgd);
        let mut points = Vec::new();
        for step in 1..=cfg.real_train_steps {
            let loss = trainer.step(&pipe.d_real.states, &pipe.d_real.actions)?;
            let _ = loss;
            if step % cadence == 0 {
                let policy = trainer.policy();
                let current = bc_loss(&policy, &pipe.d_real.states, &pipe.d_real.actions)?;
                let (ret, _) = eval_policy(
                    &pipe.env,
                    &policy,
                    cfg.episodes,
                    split_seed2(rs, TAG_EVAL_STEP, step as u64),
                );
                points.push((step, current, pipe.anchors.normalize(ret)?));
            }
        }
        curves.push(LossReturnCurve { seed_idx: idx, points });
    }
    let mut csv = Csv::new(
        cfg.hash(),
        seed,
        &["profile", "seed", "step", "loss", "normalized_loss", "normalized_return"],
    );
    for curve in &curves {
        let min = curve.min_loss();
        for &(step, loss, ret) in &curve.points {
            csv.row(&[
                profile.tag().to_string(),
                curve.seed_idx.to_string(),
                step.to_string(),
                fmt(loss),
                fmt(loss - min),
                fmt(ret),
            ]);
        }
    }
    Ok((curves, csv))
}

/// Per-seed win counts of the diverse profile versus the concentrated one at
/// matched high loss, and the reverse near zero loss.
pub fn loss_return_report(cfg: &Config, seed: u64) -> Result<Csv, HarnessError> {
    let (replay, _) = loss_return_sweep(cfg, Profile::ReplayLike, seed)?;
    let (expert, _) = loss_return_sweep(cfg, Profile::ExpertMix, seed)?;
    let mut replay_high = 0;
    let mut expert_low = 0;
    let n = replay.len().min(expert.len());
    for i in 0..n {
        let max_r = replay[i].points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
            - replay[i].min_loss();
        let max_e = expert[i].points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
            - expert[i].min_loss();
        let target = 0.75 * max_r.min(max_e);
        if replay[i].return_at_normalized_loss(target)
            >= expert[i].return_at_normalized_loss(target)
        {
            replay_high += 1;
        }
        if expert[i].return_at_normalized_loss(0.0) >= replay[i].return_at_normalized_loss(0.0) {
            expert_low += 1;
        }
    }
    let mut csv = Csv::new(cfg.hash(), seed, &["comparison", "replay_like_wins", "expert_mix_wins", "n_seeds"]);
    csv.row(&[
        "high_loss".into(),
        replay_high.to_string(),
        (n - replay_high).to_string(),
        n.to_string(),
    ]);
    csv.row(&[
        "near_zero_loss".into(),
        (n - expert_low).to_string(),
        expert_low.to_string(),
        n.to_string(),
    ]);
    Ok(csv)
}

/// Log-density histograms of the three collection profiles, one CSV each,
/// plus a summary of mean log densities.
pub fn density_histograms(
    cfg: &Config,
    seed: u64,
) -> Result<(Vec<(Profile, Csv)>, Csv), HarnessError> {
    let env = env_from(cfg);
    let mut outputs = Vec::new();
    let mut summary = Csv::new(cfg.hash(), seed, &["profile", "mean_log_density"]);
    for profile in [Profile::ReplayLike, Profile::Medium, Profile::ExpertMix] {
        let ds = collect_dataset(&env, profile, cfg.n_transitions, split_seed(seed, crate::eval::TAG_DATA));
        let states: Vec<Vec<f64>> = ds.transitions.iter().map(|t| t.state.clone()).collect();
        let model = fit_kde(&states, BandwidthRule::Scott)?;
        let hist = log_density_histogram(&model, &states, cfg.hist_bins)?;
        let mut csv = Csv::new(cfg.hash(), seed, &["bin_left", "bin_right", "density"]);
        for &(l, r, d) in &hist.bins {
            csv.row(&[fmt(l), fmt(r), fmt(d)]);
        }
        let mean_logd = states
            .iter()
            .map(|s| log_density(&model, s))
            .sum::<Result<f64, _>>()?
            / states.len() as f64;
        summary.row(&[profile.tag().to_string(), fmt(mean_logd)]);
        outputs.push((profile, csv));
    }
    Ok((outputs, summary))
}

/// Bound curves over the extra distillation loss for the two dataset
/// profiles of the theory sweep.
pub fn figure4_csv(cfg: &Config, seed: u64) -> Result<Csv, HarnessError> {
    let grid = mu_grid(cfg.mu_max, cfg.mu_step);
    let piv = figure4_sweep(cfg.eps0_piv, cfg.eps_mu0_piv, &grid, cfg.bound_horizon, 1.0)?;
    let surr = figure4_sweep(cfg.eps0_surr, cfg.eps_mu0_surr, &grid, cfg.bound_horizon, 1.0)?;
    let mut csv = Csv::new(cfg.hash(), seed, &["mu", "bound_piv", "bound_surr"]);
    for (p, s) in piv.iter().zip(&surr) {
        csv.row(&[fmt(p.mu), fmt(p.bound), fmt(s.bound)]);
    }
    Ok(csv)
}

/// Run the bound fuzz verifier and render its per-trial table.
pub fn verify_bounds_csv(cfg: &Config, seed: u64) -> (FuzzReport, Csv) {
    let caps = FuzzCaps {
        max_states: cfg.max_states,
        max_actions: cfg.max_actions,
        max_horizon: cfg.max_horizon,
    };
    let report = verify_bounds(seed, cfg.bound_trials, caps);
    let mut csv = Csv::new(
        cfg.hash(),
        seed,
        &[
            "trial",
            "n_states",
            "n_actions",
            "T",
            "eps",
            "eps_mu",
            "delta_J",
            "thm1",
            "thm3",
            "assumption1",
            "thm3_applicable",
            "violated",
        ],
    );
    for t in &report.trials {
        csv.row(&[
            t.trial.to_string(),
            t.n_states.to_string(),
            t.n_actions.to_string(),
            t.horizon.to_string(),
            fmt(t.report.eps),
            fmt(t.report.eps_mu),
            fmt(t.report.delta_j),
            fmt(t.report.thm1_bound),
            fmt(t.report.thm3_bound),
            (t.report.assumption1_all() as u8).to_string(),
            (t.report.thm3_applicable() as u8).to_string(),
            (t.violated as u8).to_string(),
        ]);
    }
    (report, csv)
}

/// Architecture and optimizer variants for the cross-evaluation table.
pub fn cross_arch_variants(cfg: &Config) -> Vec<(String, String, MlpArch, f64)> {
    let h = cfg.hidden_dim;
    let layers = |n: usize| -> MlpArch {
        let mut dims = vec![obd_core::datagen::STATE_DIM];
        dims.extend(std::iter::repeat(h).take(n - 1));
        dims.push(obd_core::datagen::ACTION_DIM);
        MlpArch::new(dims, cfg.activation)
    };
    let mut variants = Vec::new();
    for n in [2usize, 3, 4, 5, 6] {
        variants.push((
            "arch".to_string(),
            format!("{n}-layer"),
            layers(n),
            cfg.train_momentum,
        ));
    }
    variants.push(("arch".to_string(), "residual".to_string(), layers(4).with_residual(), cfg.train_momentum));
    variants.push(("optimizer".to_string(), "sgd".to_string(), layers(cfg.n_layers), 0.0));
    variants.push(("optimizer".to_string(), "sgdm".to_string(), layers(cfg.n_layers), 0.9));
    variants
}

/// Distill once per seed with the configured objective, then retrain and
/// evaluate the synthetic set under every architecture/optimizer variant.
pub fn cross_arch_eval(
    cfg: &Config,
    seed: u64,
    jobs: usize,
) -> Result<(Vec<MethodRow>, Csv), HarnessError> {
    let pipe = build_pipeline(cfg, cfg.profile, seed)?;
    let synsets: Vec<Result<SynSet, HarnessError>> = crate::run_cells(
        jobs,
        (0..cfg.n_seeds)
            .map(|idx| {
                let pipe = &pipe;
                let rs = run_seed(seed, idx);
                move || Ok(distill_score(pipe, cfg, cfg.objective, cfg.tau, rs)?.1)
            })
            .collect(),
    );
    let synsets: Vec<SynSet> = synsets.into_iter().collect::<Result<_, _>>()?;
    let variants = cross_arch_variants(cfg);
    let mut cells: Vec<Box<dyn FnOnce() -> Result<f64, HarnessError> + Send>> = Vec::new();
    for (_, _, arch, momentum) in &variants {
        for (idx, syn) in synsets.iter().enumerate() {
            let rs = run_seed(seed, idx);
            let pipe = &pipe;
            let arch = arch.clone();
            let momentum = *momentum;
            cells.push(Box::new(move || {
                let mut local = cfg.clone();
                local.train_momentum = momentum;
                let raw = evaluate_pairs(
                    &pipe.env,
                    &arch,
                    &syn.states,
                    &syn.actions,
                    &local,
                    local.train_steps,
                    split_seed2(rs, TAG_EVAL_STEP, 1),
                )?;
                pipe.anchors.normalize(raw)
            }));
        }
    }
    let results = crate::run_cells(jobs, cells);
    let mut rows = Vec::new();
    let mut it = results.into_iter();
    for (kind, name, _, _) in &variants {
        let per_seed: Vec<f64> =
            (0..cfg.n_seeds).map(|_| it.next().unwrap()).collect::<Result<_, _>>()?;
        rows.push(MethodRow::new(format!("{kind}/{name}"), per_seed));
    }
    let csv = rows_to_csv(cfg, seed, "variant", &rows);
    Ok((rows, csv))
}

/// Run one distillation with the configured objective; returns the synthetic
/// set and the history CSV (`outer_step, objective, eval_return`).
pub fn distill_run(
    cfg: &Config,
    seed: u64,
) -> Result<(SynSet, BehaviorSet, Csv), HarnessError> {
    let pipe = build_pipeline(cfg, cfg.profile, seed)?;
    let rs = run_seed(seed, 0);
    let dconfig = distill_config(cfg, &pipe, cfg.objective, cfg.tau);
    let mut hook_err: Option<HarnessError> = None;
    let mut hook = |step: usize, syn: &SynSet| -> f64 {
        match evaluate_set(
            &pipe,
            cfg,
            &syn.to_behavior_set(),
            split_seed2(rs, TAG_EVAL_STEP, step as u64),
        ) {
            Ok(v) => v,
            Err(e) => {
                hook_err = Some(e);
                f64::NAN
            }
        }
    };
    let (syn, history) = distill(
        &dconfig,
        &pipe.d_off,
        &pipe.d_real_norm,
        Some(&pipe.density),
        rs,
        Some(&mut hook),
    )?;
    if let Some(e) = hook_err {
        return Err(e);
    }
    let mut csv = Csv::new(cfg.hash(), seed, &["outer_step", "objective", "eval_return"]);
    let mut evals = history.evals.iter().peekable();
    for (i, &obj) in history.objective.iter().enumerate() {
        let step = i + 1;
        let eval = match evals.peek() {
            Some(&&(s, v)) if s == step => {
                evals.next();
                fmt(v)
            }
            _ => String::new(),
        };
        csv.row(&[step.to_string(), fmt(obj), eval]);
    }
    Ok((syn, pipe.d_real.clone(), csv))
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_pairs_cfg(
    pipe: &Pipeline,
    cfg: &Config,
    states: &[Vec<f64>],
    actions: &[Vec<f64>],
    seed: u64,
) -> Result<f64, HarnessError> {
    let raw = evaluate_pairs(&pipe.env, &pipe.arch, states, actions, cfg, cfg.train_steps, seed)?;
    pipe.anchors.normalize(raw)
}
