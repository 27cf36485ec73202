use std::io::{Read, Write};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::kmeans;
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

pub const DEFAULT_COMPONENTS: usize = 50;
pub const MAX_ITERATIONS: usize = 200;
/// Stop once the per-frame log-likelihood improves by less than this.
pub const TOLERANCE: f64 = 1e-5;
pub const KMEANS_ITERATIONS: usize = 10;
pub const RELATIVE_VARIANCE_FLOOR: f64 = 1e-4;
pub const ABSOLUTE_VARIANCE_FLOOR: f64 = 1e-8;
/// Responsibility mass below which a component is considered dead.
pub const DEAD_MASS: f64 = 1e-10;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAGIC: &[u8; 6] = b"BOFGMM";
const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub requested_components: usize,
    pub iterations: usize,
    /// Mean per-frame log-likelihood of the returned parameters.
    pub final_loglik: f64,
    pub converged: bool,
    pub seed: u64,
}

/// Diagonal-covariance Gaussian mixture.
///
/// Components are kept in a canonical order (by mean, then variance, then
/// weight) so relabelled mixtures compare and evaluate bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
    info: Option<FitInfo>,
    // log π_k − ½ Σ_j ln(2π σ²_kj)
    log_norm: Vec<f64>,
    inv_var: Vec<f64>,
}

impl GmmModel {
    pub fn new(
        dim: usize,
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
    ) -> Result<Self> {
        let m = weights.len();
        if dim == 0 || m == 0 {
            return Err(Error::InvalidModel("need d >= 1 and M >= 1".into()));
        }
        if means.len() != m * dim || variances.len() != m * dim {
            return Err(Error::InvalidModel(format!(
                "expected {} mean and variance entries for M={m}, d={dim}",
                m * dim
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidModel(
                "weights must be finite and >= 0".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("weights sum to {total}")));
        }
        if means.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite mean".into()));
        }
        if variances.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidModel(
                "variances must be finite and positive".into(),
            ));
        }

        let mut order: Vec<usize> = (0..m).collect();
        let key = |k: usize| {
            (
                &means[k * dim..(k + 1) * dim],
                &variances[k * dim..(k + 1) * dim],
                weights[k],
            )
        };
        order.sort_by(|&a, &b| {
            let (ma, va, wa) = key(a);
            let (mb, vb, wb) = key(b);
            cmp_slices(ma, mb)
                .then_with(|| cmp_slices(va, vb))
                .then_with(|| wa.total_cmp(&wb))
        });
        let gather = |src: &[f64]| -> Vec<f64> {
            order
                .iter()
                .flat_map(|&k| src[k * dim..(k + 1) * dim].iter().copied())
                .collect()
        };
        let means = gather(&means);
        let variances = gather(&variances);
        let weights: Vec<f64> = order.iter().map(|&k| weights[k]).collect();
        Ok(Self::assemble(dim, weights, means, variances, None))
    }

    fn assemble(
        dim: usize,
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        info: Option<FitInfo>,
    ) -> Self {
        let inv_var = variances.iter().map(|v| 1.0 / v).collect();
        let log_norm = weights
            .iter()
            .zip(variances.chunks_exact(dim))
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        Self {
            dim,
            weights,
            means,
            variances,
            info,
            log_norm,
            inv_var,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self, k: usize) -> &[f64] {
        &self.means[k * self.dim..(k + 1) * self.dim]
    }

    pub fn variance(&self, k: usize) -> &[f64] {
        &self.variances[k * self.dim..(k + 1) * self.dim]
    }

    pub fn fit_info(&self) -> Option<&FitInfo> {
        self.info.as_ref()
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let d = self.dim;
        let quad: f64 = x
            .iter()
            .zip(&self.means[k * d..(k + 1) * d])
            .zip(&self.inv_var[k * d..(k + 1) * d])
            .map(|((x, m), iv)| (x - m) * (x - m) * iv)
            .sum();
        self.log_norm[k] - 0.5 * quad
    }

    /// `ln P(x)` for one frame, stabilized by log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let mut terms = [0.0f64; 64];
        let mut heap;
        let buf: &mut [f64] = if self.components() <= terms.len() {
            &mut terms[..self.components()]
        } else {
            heap = vec![0.0; self.components()];
            &mut heap
        };
        for (k, t) in buf.iter_mut().enumerate() {
            *t = self.component_log_density(k, x);
        }
        log_sum_exp(buf)
    }

    /// SHA-256 over the parameters (not the fit metadata).
    pub fn content_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.components() as u64).to_le_bytes());
        for v in self
            .weights
            .iter()
            .chain(&self.means)
            .chain(&self.variances)
        {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let info = self.info.unwrap_or(FitInfo {
            requested_components: self.components(),
            iterations: 0,
            final_loglik: f64::NAN,
            converged: false,
            seed: 0,
        });
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for v in [
            self.dim as u64,
            self.components() as u64,
            info.seed,
            info.requested_components as u64,
            info.iterations as u64,
            u64::from(info.converged),
            u64::from(self.info.is_some()),
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&info.final_loglik.to_le_bytes())?;
        for v in self
            .weights
            .iter()
            .chain(&self.means)
            .chain(&self.variances)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            what: "model file",
            reason,
        };
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let mut version = [0u8; 2];
        r.read_exact(&mut version).map_err(|e| bad(e.to_string()))?;
        if u16::from_le_bytes(version) != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported version {}",
                u16::from_le_bytes(version)
            )));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word).map_err(|e| bad(e.to_string()))?;
            Ok(word)
        };
        let mut header = [0u64; 7];
        for h in header.iter_mut() {
            *h = u64::from_le_bytes(next(&mut r)?);
        }
        let [dim, m, seed, requested, iterations, converged, has_info] = header;
        let final_loglik = f64::from_le_bytes(next(&mut r)?);
        let (dim, m) = (dim as usize, m as usize);
        if dim == 0 || m == 0 || dim.saturating_mul(m) > 1 << 24 {
            return Err(bad(format!("implausible shape d={dim} M={m}")));
        }
        let mut read_vec = |len: usize| -> Result<Vec<f64>> {
            (0..len)
                .map(|_| next(&mut r).map(f64::from_le_bytes))
                .collect()
        };
        let weights = read_vec(m)?;
        let means = read_vec(m * dim)?;
        let variances = read_vec(m * dim)?;
        let mut model = Self::new(dim, weights, means, variances)?;
        if has_info != 0 {
            model.info = Some(FitInfo {
                requested_components: requested as usize,
                iterations: iterations as usize,
                final_loglik,
                converged: converged != 0,
                seed,
            });
        }
        Ok(model)
    }
}

fn cmp_slices(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_dim(model: &GmmModel, features: &FeatureSequence) -> Result<()> {
    if model.dim != features.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: features.dim(),
        });
    }
    Ok(())
}

/// Total log-likelihood `Σ_t ln P(x_t)` of a feature sequence.
pub fn loglik(model: &GmmModel, features: &FeatureSequence) -> Result<f64> {
    check_dim(model, features)?;
    Ok(features.frames().map(|x| model.log_density(x)).sum())
}

/// Draw `n` frames: a component from the weights, then a diagonal Gaussian.
pub fn sample(model: &GmmModel, n: usize, rng_seed: u64) -> Result<FeatureSequence> {
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let pick =
        WeightedIndex::new(&model.weights).map_err(|e| Error::InvalidModel(e.to_string()))?;
    let d = model.dim;
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        let k = pick.sample(&mut rng);
        for (m, v) in model.mean(k).iter().zip(model.variance(k)) {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(m + v.sqrt() * z);
        }
    }
    FeatureSequence::new(data, d, "gmm-sample")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub components: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl FitOptions {
    pub fn new(components: usize, seed: u64) -> Self {
        Self {
            components,
            seed,
            max_iterations: MAX_ITERATIONS,
            tolerance: TOLERANCE,
        }
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self::new(DEFAULT_COMPONENTS, 0)
    }
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Mean per-frame log-likelihood at every E-step, in order.
    pub trace: Vec<f64>,
}

/// Working parameters in fitting order (not canonicalized).
struct Params {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl Params {
    fn components(&self) -> usize {
        self.weights.len()
    }

    fn freeze(&self) -> GmmModel {
        GmmModel::assemble(
            self.dim,
            self.weights.clone(),
            self.means.clone(),
            self.variances.clone(),
            None,
        )
    }
}

/// Fit a mixture with `components` components; see [`fit_gmm_traced`].
pub fn fit_gmm(features: &FeatureSequence, components: usize, rng_seed: u64) -> Result<GmmModel> {
    fit_gmm_traced(features, &FitOptions::new(components, rng_seed)).map(|f| f.model)
}

/// EM for a diagonal-covariance mixture, initialized by k-means++ and ten
/// Lloyd iterations. If the sequence has fewer frames than requested
/// components, the component count is reduced to the frame count.
pub fn fit_gmm_traced(features: &FeatureSequence, opts: &FitOptions) -> Result<GmmFit> {
    let n = features.len();
    let dim = features.dim();
    if n == 0 {
        return Err(Error::EmptyFeatures);
    }
    if features.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature sequence"));
    }
    if opts.components == 0 {
        return Err(Error::Config("component count must be at least 1".into()));
    }
    let m = if n < opts.components {
        log::warn!(
            "{}: {n} frames cannot support {} components; fitting {n}",
            features.source_id(),
            opts.components
        );
        n
    } else {
        opts.components
    };

    let global = global_variance(features);
    let floor: Vec<f64> = global
        .iter()
        .map(|v| (RELATIVE_VARIANCE_FLOOR * v).max(ABSOLUTE_VARIANCE_FLOOR))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut centres = kmeans::plus_plus(features, m, &mut rng);
    let labels = kmeans::lloyd(features, &mut centres, KMEANS_ITERATIONS);

    let mut resp = vec![0.0; n * m];
    for (t, &l) in labels.iter().enumerate() {
        resp[t * m + l] = 1.0;
    }
    let mut params = Params {
        dim,
        weights: vec![0.0; m],
        means: centres,
        variances: vec![0.0; m * dim],
    };
    m_step(features, &resp, &mut params, &floor, &global);
    reseed_dead(features, &mut params, &global, &floor);

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let ll = e_step(features, &params.freeze(), &mut resp) / n as f64;
        let improved = trace.last().map(|prev: &f64| ll - prev);
        trace.push(ll);
        if improved.is_some_and(|d| d < opts.tolerance) {
            converged = true;
            break;
        }
        if trace.len() >= opts.max_iterations {
            break;
        }
        m_step(features, &resp, &mut params, &floor, &global);
        reseed_dead(features, &mut params, &global, &floor);
        iterations += 1;
    }

    let final_loglik = *trace.last().expect("at least one E-step");
    let mut model = GmmModel::new(dim, params.weights, params.means, params.variances)?;
    model.info = Some(FitInfo {
        requested_components: opts.components,
        iterations,
        final_loglik,
        converged,
        seed: opts.seed,
    });
    Ok(GmmFit { model, trace })
}

/// Per-dimension population variance of the whole sequence.
fn global_variance(features: &FeatureSequence) -> Vec<f64> {
    let n = features.len() as f64;
    let dim = features.dim();
    let mut mean = vec![0.0; dim];
    for x in features.frames() {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for x in features.frames() {
        for ((s, v), m) in var.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    var
}

/// Fill `resp` with posteriors and return the total log-likelihood.
fn e_step(features: &FeatureSequence, model: &GmmModel, resp: &mut [f64]) -> f64 {
    let m = model.components();
    let mut total = 0.0;
    for (x, r) in features.frames().zip(resp.chunks_exact_mut(m)) {
        for (k, v) in r.iter_mut().enumerate() {
            *v = model.component_log_density(k, x);
        }
        let lse = log_sum_exp(r);
        for v in r.iter_mut() {
            *v = (*v - lse).exp();
        }
        total += lse;
    }
    total
}

fn m_step(
    features: &FeatureSequence,
    resp: &[f64],
    params: &mut Params,
    floor: &[f64],
    global: &[f64],
) {
    let m = params.components();
    let dim = params.dim;
    let n = features.len() as f64;
    let mut mass = vec![0.0; m];
    for r in resp.chunks_exact(m) {
        for (s, v) in mass.iter_mut().zip(r) {
            *s += v;
        }
    }
    let mut sums = vec![0.0; m * dim];
    for (x, r) in features.frames().zip(resp.chunks_exact(m)) {
        for (k, &w) in r.iter().enumerate() {
            if w > 0.0 {
                for (s, v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                    *s += w * v;
                }
            }
        }
    }
    for k in 0..m {
        if mass[k] > 0.0 {
            for j in 0..dim {
                params.means[k * dim + j] = sums[k * dim + j] / mass[k];
            }
        }
    }
    let mut sq = vec![0.0; m * dim];
    for (x, r) in features.frames().zip(resp.chunks_exact(m)) {
        for (k, &w) in r.iter().enumerate() {
            if w > 0.0 {
                let mu = &params.means[k * dim..(k + 1) * dim];
                for ((s, v), c) in sq[k * dim..(k + 1) * dim].iter_mut().zip(x).zip(mu) {
                    *s += w * (v - c) * (v - c);
                }
            }
        }
    }
    for (k, &mk) in mass.iter().enumerate() {
        params.weights[k] = mk / n;
        for j in 0..dim {
            let i = k * dim + j;
            params.variances[i] = if mk > 0.0 {
                (sq[i] / mk).max(floor[j])
            } else {
                global[j].max(floor[j])
            };
        }
    }
    let total: f64 = params.weights.iter().sum();
    params.weights.iter_mut().for_each(|w| *w /= total);
}

/// Move each component whose mass fell below [`DEAD_MASS`] onto the frame
/// that the current mixture explains worst. The move is kept only if it does
/// not lower the log-likelihood.
fn reseed_dead(features: &FeatureSequence, params: &mut Params, global: &[f64], floor: &[f64]) {
    let n = features.len() as f64;
    let dim = params.dim;
    let dead: Vec<usize> = (0..params.components())
        .filter(|&k| params.weights[k] * n < DEAD_MASS)
        .collect();
    if dead.is_empty() || params.components() == 1 {
        return;
    }
    let before = params.freeze();
    let before_ll: f64 = features.frames().map(|x| before.log_density(x)).sum();

    let mut candidate = Params {
        dim,
        weights: params.weights.clone(),
        means: params.means.clone(),
        variances: params.variances.clone(),
    };
    let mut density: Vec<(usize, f64)> = features
        .frames()
        .map(|x| before.log_density(x))
        .enumerate()
        .collect();
    density.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let share = 1.0 / n;
    for (&k, &(t, _)) in dead.iter().zip(&density) {
        candidate.means[k * dim..(k + 1) * dim].copy_from_slice(features.frame(t));
        for j in 0..dim {
            candidate.variances[k * dim + j] = global[j].max(floor[j]);
        }
        candidate.weights[k] = share;
    }
    let total: f64 = candidate.weights.iter().sum();
    candidate.weights.iter_mut().for_each(|w| *w /= total);

    let after = candidate.freeze();
    let after_ll: f64 = features.frames().map(|x| after.log_density(x)).sum();
    if after_ll >= before_ll {
        *params = candidate;
    }
}
