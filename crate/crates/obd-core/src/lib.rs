//! Desk-scale laboratory for offline behavior distillation (OBD).
//!
//! The crate compresses a large offline RL dataset into a tiny synthetic
//! behavioral set by differentiating an evaluation loss through an unrolled
//! behavioral-cloning inner loop, and verifies the imitation-error theory
//! that motivates the state-density-weighted variant exactly on small
//! tabular MDPs.
//!
//! Module map:
//! - [`mdp`]: finite episodic MDPs with exact dynamic-programming evaluation
//!   and seeded sampling rollouts.
//! - [`bounds`]: pivotal/surrounding state partition, per-step error
//!   functionals, and calculators plus fuzz verification for the
//!   imitation-error bounds.
//! - [`policy`]: small deterministic MLP policies over continuous states and
//!   full-batch behavioral-cloning training.
//! - [`unroll`]: reverse-mode differentiation of an outer loss through the
//!   unrolled inner training loop, with a finite-difference oracle.
//! - [`density`]: Gaussian-product KDE state densities and the
//!   density-reciprocal weight.
//! - [`datagen`]: the point-navigation environment, behavior-policy
//!   collection profiles, action relabeling, Monte-Carlo q estimation, and
//!   subset selection baselines.
//! - [`distill`]: the four distillation objectives and the full outer loop
//!   producing a synthetic behavioral dataset.

pub mod bounds;
pub mod datagen;
pub mod density;
pub mod distill;
pub mod mdp;
pub mod policy;
pub mod rng;
pub mod unroll;
