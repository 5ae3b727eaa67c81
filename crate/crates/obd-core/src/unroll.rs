//! Reverse-mode differentiation of an outer loss through an unrolled inner
//! training loop.
//!
//! The inner loop runs `inner_steps` full-batch gradient steps (with
//! momentum) of the behavioral-cloning loss on the synthetic set, starting
//! from a seeded constant initialization. The outer loss is evaluated at the
//! final parameters, and its gradient with respect to every synthetic state
//! and action is accumulated backwards through the chain
//!
//! ```text
//!   v_t = beta0 * v_{t-1} + g(theta_{t-1}, D)
//!   theta_t = theta_{t-1} - alpha0 * v_t
//! ```
//!
//! The adjoint recursion needs one Hessian-vector product and one mixed
//! second-derivative product per step; both come out of a single backward
//! pass run on dual numbers with the parameter tangent set to the adjoint
//! direction. All `inner_steps + 1` parameter snapshots are stored during the
//! forward sweep, so peak memory grows linearly in the unroll length.

use crate::policy::{
    forward_cached, weighted_sq_loss_grads, Dual, MlpArch, MlpPolicy, PolicyError, Scalar,
    SgdConfig,
};

/// Inner-loop specification: step count, SGD settings, and the seed of the
/// constant initialization `theta_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnrollSpec {
    pub inner_steps: usize,
    pub inner_sgd: SgdConfig,
    pub init_seed: u64,
}

/// Outer objective evaluated on policy outputs over a fixed batch of states.
pub trait OuterLoss {
    fn states(&self) -> &[Vec<f64>];
    /// Objective value and its gradient with respect to each output vector.
    fn loss_and_grad(&self, outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>);
}

/// `(1/N) sum_i w_i ||out_i - a_i||^2` over a fixed batch.
#[derive(Debug, Clone)]
pub struct WeightedSquaredLoss {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl OuterLoss for WeightedSquaredLoss {
    fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    fn loss_and_grad(&self, outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
        let n = outputs.len();
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(n);
        for ((out, act), &w) in outputs.iter().zip(&self.actions).zip(&self.weights) {
            let mut g = Vec::with_capacity(out.len());
            for (&y, &a) in out.iter().zip(act) {
                let e = y - a;
                loss += w * e * e * inv_n;
                g.push(2.0 * w * e * inv_n);
            }
            grads.push(g);
        }
        (loss, grads)
    }
}

/// Gradients of the outer loss with respect to the synthetic set, plus the
/// outer loss value and the final inner policy.
#[derive(Debug, Clone)]
pub struct SynGrads {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub outer_loss: f64,
    pub final_policy: MlpPolicy,
}

fn check_finite(vals: &[f64], what: &'static str, step: usize) -> Result<(), PolicyError> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(PolicyError::NonFinite { what, step });
    }
    Ok(())
}

/// Run the inner loop forward only, returning the trained policy.
pub fn unroll_forward(
    arch: &MlpArch,
    spec: &UnrollSpec,
    syn_states: &[Vec<f64>],
    syn_actions: &[Vec<f64>],
) -> Result<MlpPolicy, PolicyError> {
    if syn_states.is_empty() {
        return Err(PolicyError::EmptyData);
    }
    let mut params = MlpPolicy::init(arch, spec.init_seed).params().to_vec();
    let mut velocity = vec![0.0; params.len()];
    for step in 0..spec.inner_steps {
        let grads = weighted_sq_loss_grads::<f64>(arch, &params, syn_states, syn_actions, None);
        check_finite(&[grads.loss], "inner loss", step)?;
        for ((p, v), g) in params.iter_mut().zip(&mut velocity).zip(&grads.grad_params) {
            *v = spec.inner_sgd.momentum * *v + g;
            *p -= spec.inner_sgd.learning_rate * *v;
        }
    }
    MlpPolicy::new(arch.clone(), params)
}

/// Differentiate `outer` through the unrolled inner loop: returns the exact
/// reverse-accumulation gradient with respect to every synthetic state and
/// action. `theta_0` (from `spec.init_seed`) is treated as a constant, so
/// `inner_steps = 0` yields identically zero gradients.
pub fn unrolled_grad(
    arch: &MlpArch,
    spec: &UnrollSpec,
    syn_states: &[Vec<f64>],
    syn_actions: &[Vec<f64>],
    outer: &impl OuterLoss,
) -> Result<SynGrads, PolicyError> {
    if syn_states.is_empty() {
        return Err(PolicyError::EmptyData);
    }
    let n_params = arch.param_count();
    let t_in = spec.inner_steps;
    let alpha = spec.inner_sgd.learning_rate;
    let beta = spec.inner_sgd.momentum;

    // forward sweep: keep every parameter snapshot
    let mut snapshots = Vec::with_capacity(t_in + 1);
    snapshots.push(MlpPolicy::init(arch, spec.init_seed).params().to_vec());
    let mut velocity = vec![0.0; n_params];
    for step in 0..t_in {
        let params = snapshots.last().unwrap();
        let grads = weighted_sq_loss_grads::<f64>(arch, params, syn_states, syn_actions, None);
        check_finite(&[grads.loss], "inner loss", step)?;
        let mut next = params.clone();
        for ((p, v), g) in next.iter_mut().zip(&mut velocity).zip(&grads.grad_params) {
            *v = beta * *v + g;
            *p -= alpha * *v;
        }
        check_finite(&next, "inner parameters", step)?;
        snapshots.push(next);
    }

    // outer loss and its parameter adjoint at theta_T
    let theta_final = snapshots.last().unwrap();
    let outputs: Vec<Vec<f64>> = outer
        .states()
        .iter()
        .map(|s| {
            let cache = forward_cached::<f64>(arch, theta_final, s);
            cache.layers.into_iter().last().unwrap()
        })
        .collect();
    let (outer_loss, out_grads) = outer.loss_and_grad(&outputs);
    check_finite(&[outer_loss], "outer loss", t_in)?;
    let mut theta_bar = vec![0.0; n_params];
    for (s, og) in outer.states().iter().zip(&out_grads) {
        let cache = forward_cached::<f64>(arch, theta_final, s);
        crate::policy::backward_into(arch, theta_final, &cache, og, &mut theta_bar);
    }

    let mut grad_states = vec![vec![0.0; syn_states[0].len()]; syn_states.len()];
    let mut grad_actions = vec![vec![0.0; syn_actions[0].len()]; syn_actions.len()];
    let mut v_bar = vec![0.0; n_params];

    // adjoint sweep through the stored snapshots
    for step in (0..t_in).rev() {
        // direction hitting the inner gradient at this step
        let u: Vec<f64> =
            v_bar.iter().zip(&theta_bar).map(|(&vb, &tb)| vb - alpha * tb).collect();
        let params_dual: Vec<Dual> = snapshots[step]
            .iter()
            .zip(&u)
            .map(|(&p, &du)| Dual::new(p, du))
            .collect();
        let states_dual: Vec<Vec<Dual>> = syn_states
            .iter()
            .map(|s| s.iter().map(|&v| Dual::from_f64(v)).collect())
            .collect();
        let actions_dual: Vec<Vec<Dual>> = syn_actions
            .iter()
            .map(|a| a.iter().map(|&v| Dual::from_f64(v)).collect())
            .collect();
        let dual = weighted_sq_loss_grads::<Dual>(
            arch,
            &params_dual,
            &states_dual,
            &actions_dual,
            None,
        );
        // eps parts: Hessian-vector product (params) and mixed products (data)
        for (tb, hg) in theta_bar.iter_mut().zip(&dual.grad_params) {
            *tb += hg.eps;
        }
        for (gs, ds) in grad_states.iter_mut().zip(&dual.grad_states) {
            for (g, d) in gs.iter_mut().zip(ds) {
                *g += d.eps;
            }
        }
        for (ga, da) in grad_actions.iter_mut().zip(&dual.grad_actions) {
            for (g, d) in ga.iter_mut().zip(da) {
                *g += d.eps;
            }
        }
        for (vb, &du) in v_bar.iter_mut().zip(&u) {
            *vb = beta * du;
        }
        check_finite(&theta_bar, "adjoint", step)?;
    }

    Ok(SynGrads {
        states: grad_states,
        actions: grad_actions,
        outer_loss,
        final_policy: MlpPolicy::new(arch.clone(), theta_final.clone())?,
    })
}

/// Central finite differences over every synthetic coordinate; the oracle
/// counterpart of [`unrolled_grad`].
pub fn finite_diff_grad(
    arch: &MlpArch,
    spec: &UnrollSpec,
    syn_states: &[Vec<f64>],
    syn_actions: &[Vec<f64>],
    outer: &impl OuterLoss,
    h: f64,
) -> Result<SynGrads, PolicyError> {
    assert!(h > 0.0, "step size must be positive");
    let eval = |states: &[Vec<f64>], actions: &[Vec<f64>]| -> Result<f64, PolicyError> {
        let policy = unroll_forward(arch, spec, states, actions)?;
        let outputs: Vec<Vec<f64>> = outer
            .states()
            .iter()
            .map(|s| policy.forward(s))
            .collect::<Result<_, _>>()?;
        Ok(outer.loss_and_grad(&outputs).0)
    };
    let base = eval(syn_states, syn_actions)?;
    let mut grad_states = vec![vec![0.0; syn_states[0].len()]; syn_states.len()];
    let mut grad_actions = vec![vec![0.0; syn_actions[0].len()]; syn_actions.len()];
    for i in 0..syn_states.len() {
        for j in 0..syn_states[i].len() {
            let mut plus = syn_states.to_vec();
            plus[i][j] += h;
            let mut minus = syn_states.to_vec();
            minus[i][j] -= h;
            grad_states[i][j] =
                (eval(&plus, syn_actions)? - eval(&minus, syn_actions)?) / (2.0 * h);
        }
    }
    for i in 0..syn_actions.len() {
        for j in 0..syn_actions[i].len() {
            let mut plus = syn_actions.to_vec();
            plus[i][j] += h;
            let mut minus = syn_actions.to_vec();
            minus[i][j] -= h;
            grad_actions[i][j] =
                (eval(syn_states, &plus)? - eval(syn_states, &minus)?) / (2.0 * h);
        }
    }
    Ok(SynGrads {
        states: grad_states,
        actions: grad_actions,
        outer_loss: base,
        final_policy: unroll_forward(arch, spec, syn_states, syn_actions)?,
    })
}

/// Relative L2 distance between two gradient sets, used by the correctness
/// suites: `||g1 - g2|| / max(||g1||, ||g2||, 1e-12)`.
pub fn relative_l2_error(a: &SynGrads, b: &SynGrads) -> f64 {
    let mut diff_sq = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    let mut accumulate = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        for (xr, yr) in x.iter().zip(y) {
            for (&xv, &yv) in xr.iter().zip(yr) {
                diff_sq += (xv - yv) * (xv - yv);
                norm_a += xv * xv;
                norm_b += yv * yv;
            }
        }
    };
    accumulate(&a.states, &b.states);
    accumulate(&a.actions, &b.actions);
    diff_sq.sqrt() / norm_a.sqrt().max(norm_b.sqrt()).max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Activation;
    use crate::rng::{seeded_rng, split_seed};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn vecs(rows: &[&[f64]]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn zero_inner_steps_gives_zero_gradients() {
        let arch = MlpArch::new(vec![2, 4, 2], Activation::Tanh);
        let spec = UnrollSpec { inner_steps: 0, inner_sgd: SgdConfig::plain(0.1), init_seed: 3 };
        let outer = WeightedSquaredLoss {
            states: vecs(&[&[0.2, 0.3]]),
            actions: vecs(&[&[0.5, -0.5]]),
            weights: vec![1.0],
        };
        let g = unrolled_grad(
            &arch,
            &spec,
            &vecs(&[&[0.1, 0.1]]),
            &vecs(&[&[0.0, 0.0]]),
            &outer,
        )
        .unwrap();
        assert!(g.states.iter().flatten().all(|&v| v == 0.0));
        assert!(g.actions.iter().flatten().all(|&v| v == 0.0));
        assert!(g.outer_loss > 0.0);
    }

    #[test]
    fn one_step_scalar_case_matches_hand_chain_rule() {
        // model out = w*s + b, one synthetic pair, one outer pair, beta0 = 0.
        // Oracle below is plain scalar arithmetic, independent of the engine.
        let arch = MlpArch::new(vec![1, 1], Activation::Tanh);
        let spec = UnrollSpec { inner_steps: 1, inner_sgd: SgdConfig::plain(0.1), init_seed: 8 };
        let theta0 = MlpPolicy::init(&arch, 8).params().to_vec();
        let (w0, b0) = (theta0[0], theta0[1]);
        let (ss, sa) = (0.8, 0.3);
        let (bs, ba, alpha) = (1.2, 0.9, 0.1);

        // inner loss l = (w s + b - a)^2; one gradient step
        let e0 = w0 * ss + b0 - sa;
        let w1 = w0 - alpha * 2.0 * e0 * ss;
        let b1 = b0 - alpha * 2.0 * e0;
        // outer loss H = (w1 bs + b1 - ba)^2
        let e1 = w1 * bs + b1 - ba;
        // dw1/ds = -2 alpha (2 w0 ss + b0 - sa) ; db1/ds = -2 alpha w0
        let dw1_ds = -2.0 * alpha * (2.0 * w0 * ss + b0 - sa);
        let db1_ds = -2.0 * alpha * w0;
        // dw1/da = 2 alpha ss ; db1/da = 2 alpha
        let dh_ds = 2.0 * e1 * (bs * dw1_ds + db1_ds);
        let dh_da = 2.0 * e1 * (bs * 2.0 * alpha * ss + 2.0 * alpha);

        let outer = WeightedSquaredLoss {
            states: vecs(&[&[bs]]),
            actions: vecs(&[&[ba]]),
            weights: vec![1.0],
        };
        let g =
            unrolled_grad(&arch, &spec, &vecs(&[&[ss]]), &vecs(&[&[sa]]), &outer).unwrap();
        assert_abs_diff_eq!(g.states[0][0], dh_ds, epsilon = 1e-12);
        assert_abs_diff_eq!(g.actions[0][0], dh_da, epsilon = 1e-12);
        assert_abs_diff_eq!(g.outer_loss, e1 * e1, epsilon = 1e-12);
    }

    #[test]
    fn constant_outer_loss_has_zero_gradient() {
        struct Constant {
            states: Vec<Vec<f64>>,
        }
        impl OuterLoss for Constant {
            fn states(&self) -> &[Vec<f64>] {
                &self.states
            }
            fn loss_and_grad(&self, outputs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
                (7.5, outputs.iter().map(|o| vec![0.0; o.len()]).collect())
            }
        }
        let arch = MlpArch::new(vec![2, 3, 2], Activation::Tanh);
        let spec = UnrollSpec { inner_steps: 3, inner_sgd: SgdConfig::plain(0.1), init_seed: 1 };
        let outer = Constant { states: vecs(&[&[0.2, 0.1]]) };
        let syn_s = vecs(&[&[0.4, -0.1], &[0.2, 0.6]]);
        let syn_a = vecs(&[&[0.1, 0.0], &[-0.2, 0.3]]);
        let g = unrolled_grad(&arch, &spec, &syn_s, &syn_a, &outer).unwrap();
        let fd = finite_diff_grad(&arch, &spec, &syn_s, &syn_a, &outer, 1e-5).unwrap();
        assert!(g.states.iter().flatten().all(|&v| v.abs() < 1e-9));
        assert!(g.actions.iter().flatten().all(|&v| v.abs() < 1e-9));
        assert!(fd.states.iter().flatten().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn finite_difference_is_exact_on_a_quadratic() {
        // with zero inner steps the outer map is quadratic in nothing (zero
        // gradient); with a 1-layer linear net and 1 step it is polynomial,
        // so central differences at h = 1e-4 are accurate to ~1e-8.
        let arch = MlpArch::new(vec![1, 1], Activation::Tanh);
        let spec = UnrollSpec { inner_steps: 1, inner_sgd: SgdConfig::plain(0.05), init_seed: 2 };
        let outer = WeightedSquaredLoss {
            states: vecs(&[&[0.7]]),
            actions: vecs(&[&[0.1]]),
            weights: vec![1.0],
        };
        let syn_s = vecs(&[&[0.5]]);
        let syn_a = vecs(&[&[0.2]]);
        let exact = unrolled_grad(&arch, &spec, &syn_s, &syn_a, &outer).unwrap();
        let fd = finite_diff_grad(&arch, &spec, &syn_s, &syn_a, &outer, 1e-4).unwrap();
        assert!(relative_l2_error(&exact, &fd) < 1e-8);
    }

    #[test]
    fn matches_finite_differences_across_random_configs() {
        // smaller in-module version of the acceptance fuzz: random widths,
        // unroll lengths, and momentum values.
        let mut rng = seeded_rng(1000);
        for trial in 0..6u64 {
            let state_dim = rng.gen_range(1..=3);
            let action_dim = rng.gen_range(1..=2);
            let hidden: Vec<usize> =
                (0..rng.gen_range(0..=2)).map(|_| rng.gen_range(2..=8)).collect();
            let mut dims = vec![state_dim];
            dims.extend(&hidden);
            dims.push(action_dim);
            let arch = MlpArch::new(dims, Activation::Tanh);
            let beta = if trial % 2 == 0 { 0.0 } else { 0.5 };
            let spec = UnrollSpec {
                inner_steps: rng.gen_range(1..=5),
                inner_sgd: SgdConfig { learning_rate: 0.1, momentum: beta },
                init_seed: split_seed(50, trial),
            };
            let n_syn = rng.gen_range(1..=4);
            let n_outer = rng.gen_range(1..=4);
            let mut mk = |n: usize, d: usize| -> Vec<Vec<f64>> {
                (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
            };
            let syn_s = mk(n_syn, state_dim);
            let syn_a = mk(n_syn, action_dim);
            let outer = WeightedSquaredLoss {
                states: mk(n_outer, state_dim),
                actions: mk(n_outer, action_dim),
                weights: (0..n_outer).map(|_| rng.gen_range(0.1..2.0)).collect(),
            };
            let exact = unrolled_grad(&arch, &spec, &syn_s, &syn_a, &outer).unwrap();
            let fd = finite_diff_grad(&arch, &spec, &syn_s, &syn_a, &outer, 1e-5).unwrap();
            let err = relative_l2_error(&exact, &fd);
            assert!(err < 1e-4, "trial {trial}: relative error {err}");
        }
    }

    #[test]
    fn gradients_are_deterministic() {
        let arch = MlpArch::new(vec![2, 4, 2], Activation::Tanh);
        let spec = UnrollSpec {
            inner_steps: 4,
            inner_sgd: SgdConfig { learning_rate: 0.1, momentum: 0.3 },
            init_seed: 11,
        };
        let outer = WeightedSquaredLoss {
            states: vecs(&[&[0.2, 0.3], &[-0.4, 0.6]]),
            actions: vecs(&[&[0.5, -0.5], &[0.2, 0.2]]),
            weights: vec![1.0, 0.7],
        };
        let syn_s = vecs(&[&[0.4, -0.1], &[0.2, 0.6]]);
        let syn_a = vecs(&[&[0.1, 0.0], &[-0.2, 0.3]]);
        let a = unrolled_grad(&arch, &spec, &syn_s, &syn_a, &outer).unwrap();
        let b = unrolled_grad(&arch, &spec, &syn_s, &syn_a, &outer).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.actions, b.actions);
        assert_eq!(a.final_policy.params(), b.final_policy.params());
    }
}
