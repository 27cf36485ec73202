//! Bag-of-frames models: Gaussian mixtures of feature frames, fitted by EM
//! and compared by Kullback-Leibler divergence.

mod divergence;
mod gmm;
mod kmeans;

pub use divergence::{kl_marginal, kl_mc, DistanceConfig, DistanceMethod, DEFAULT_MC_SAMPLES};
pub use gmm::{
    fit_gmm, fit_gmm_traced, loglik, sample, FitInfo, FitOptions, GmmFit, GmmModel,
    ABSOLUTE_VARIANCE_FLOOR, DEAD_MASS, DEFAULT_COMPONENTS, KMEANS_ITERATIONS, MAX_ITERATIONS,
    RELATIVE_VARIANCE_FLOOR, TOLERANCE,
};
