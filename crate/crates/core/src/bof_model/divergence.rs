use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::gmm::{loglik, sample, GmmModel};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

pub const DEFAULT_MC_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMethod {
    MonteCarlo,
    Marginalization,
    EuclideanMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceConfig {
    pub method: DistanceMethod,
    pub mc_samples: usize,
    pub rng_seed: u64,
}

impl DistanceConfig {
    pub fn monte_carlo(mc_samples: usize, rng_seed: u64) -> Self {
        Self {
            method: DistanceMethod::MonteCarlo,
            mc_samples,
            rng_seed,
        }
    }
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self::monte_carlo(DEFAULT_MC_SAMPLES, 0)
    }
}

fn same_dim(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        });
    }
    Ok(())
}

/// Sampling seed for draws from `model`. Depends on the model's content, not
/// on its argument position, so the symmetrized estimate is symmetric.
fn sub_seed(seed: u64, model: &GmmModel) -> u64 {
    let mut h = Sha256::new();
    h.update(b"kl-mc");
    h.update(seed.to_le_bytes());
    h.update(model.content_hash());
    let digest: [u8; 32] = h.finalize().into();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `E_p[ln p(x) − ln q(x)]` over `n` draws from `p`.
fn one_way(p: &GmmModel, q: &GmmModel, n: usize, seed: u64) -> Result<f64> {
    let draws = sample(p, n, sub_seed(seed, p))?;
    let total: f64 = draws
        .frames()
        .map(|x| p.log_density(x) - q.log_density(x))
        .sum();
    Ok(total / n as f64)
}

/// Symmetrized Monte-Carlo KL divergence `KL(p‖q) + KL(q‖p)`.
pub fn kl_mc(p: &GmmModel, q: &GmmModel, cfg: &DistanceConfig) -> Result<f64> {
    if cfg.method != DistanceMethod::MonteCarlo {
        return Err(Error::Config(format!(
            "kl_mc called with method {:?}",
            cfg.method
        )));
    }
    if cfg.mc_samples == 0 {
        return Err(Error::Config("mc_samples must be at least 1".into()));
    }
    same_dim(p.dim(), q.dim())?;
    Ok(one_way(p, q, cfg.mc_samples, cfg.rng_seed)? + one_way(q, p, cfg.mc_samples, cfg.rng_seed)?)
}

/// Cross-likelihood distance from each model's own training features:
/// self-likelihoods minus cross-likelihoods, each normalized per frame.
pub fn kl_marginal(
    p_model: &GmmModel,
    q_model: &GmmModel,
    p_feats: &FeatureSequence,
    q_feats: &FeatureSequence,
) -> Result<f64> {
    same_dim(p_model.dim(), q_model.dim())?;
    let per_frame = |model: &GmmModel, feats: &FeatureSequence| -> Result<f64> {
        if feats.is_empty() {
            return Err(Error::EmptyFeatures);
        }
        Ok(loglik(model, feats)? / feats.len() as f64)
    };
    let cross = per_frame(q_model, p_feats)? + per_frame(p_model, q_feats)?;
    let own = per_frame(p_model, p_feats)? + per_frame(q_model, q_feats)?;
    Ok(own - cross)
}
