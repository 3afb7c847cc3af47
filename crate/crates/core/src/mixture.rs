//! Full-covariance Gaussian mixtures over standardized sample rows: EM with
//! seeded restarts, BIC order selection, density evaluation and JSON
//! persistence.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, normal_log_pdf, Cholesky, LN_2PI};

/// Per-dimension z-score parameters estimated from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population mean and standard deviation of each column.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::Empty);
        }
        let dim = rows[0].len();
        let mut mean = vec![0.0; dim];
        for row in rows {
            for (acc, v) in mean.iter_mut().zip(row) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((acc, v), mu) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / m as f64).sqrt()).collect();
        if let Some(col) = std.iter().position(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::ZeroVarianceColumn(col));
        }
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, s))| (v - mu) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (mu, s))| v * s + mu)
            .collect()
    }

    /// Σ ln std, the log-Jacobian from standardized to original units.
    pub fn log_scale(&self) -> f64 {
        self.std.iter().map(|s| s.ln()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl GaussianComponent {
    pub fn cholesky(&self) -> Option<Cholesky> {
        Cholesky::new(&self.covariance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    pub standardizer: Standardizer,
    pub components: Vec<GaussianComponent>,
}

impl GmmModel {
    /// Assembles a model, checking shapes, weights and positive definiteness.
    pub fn new(standardizer: Standardizer, components: Vec<GaussianComponent>) -> Result<Self> {
        let dim = standardizer.mean.len();
        if components.is_empty() || dim == 0 {
            return Err(Error::InvalidConfig("a mixture needs at least one component".into()));
        }
        if standardizer.std.len() != dim || standardizer.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidConfig("standardizer std must be positive".into()));
        }
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.covariance.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.weight > 0.0) {
                return Err(Error::InvalidConfig(format!("component {j} has non-positive weight")));
            }
            if c.cholesky().is_none() {
                return Err(Error::SingularBlock(j));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}, not 1")));
        }
        Ok(Self {
            dim,
            standardizer,
            components,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: GmmModel = serde_json::from_str(text)?;
        if raw.dim != raw.standardizer.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: raw.dim,
                got: raw.standardizer.mean.len(),
            });
        }
        Self::new(raw.standardizer, raw.components)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Log density in original units.
pub fn log_density(model: &GmmModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let z = model.standardizer.apply(x);
    let terms = model
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let chol = c.cholesky().ok_or(Error::SingularBlock(j))?;
            Ok(c.weight.ln() + normal_log_pdf(&chol, &c.mean, &z))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(log_sum_exp(&terms) - model.standardizer.log_scale())
}

pub fn bic(loglik: f64, n_params: usize, m: usize) -> f64 {
    -2.0 * loglik + n_params as f64 * (m as f64).ln()
}

/// Free parameters of a K-component full-covariance mixture in D dimensions.
pub fn n_free_params(k: usize, dim: usize) -> usize {
    k - 1 + k * dim + k * dim * (dim + 1) / 2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Inclusive range of component counts to try.
    pub k_range: (usize, usize),
    pub restarts: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal loading, scaled by the mean variance of each component.
    pub reg_eps: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k_range: (1, 8),
            restarts: 5,
            tol: 1e-6,
            max_iter: 500,
            reg_eps: 1e-6,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.k_range.0 < 1 || self.k_range.0 > self.k_range.1 {
            return bad("k_range must satisfy 1 <= lo <= hi");
        }
        if self.restarts == 0 || self.max_iter == 0 {
            return bad("restarts and max_iter must be positive");
        }
        if !(self.tol > 0.0) || !(self.reg_eps > 0.0) {
            return bad("tol and reg_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub chosen_k: usize,
    pub final_loglik: f64,
    pub bic: f64,
    /// Log-likelihood (original units) per iteration of the winning run.
    pub loglik_trace: Vec<f64>,
    pub n_iter: usize,
    pub converged: bool,
    /// Best BIC reached for each tried K; `None` when every run degenerated.
    pub bic_by_k: Vec<(usize, Option<f64>)>,
}

#[derive(Clone)]
struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
}

struct RunOutcome {
    params: Params,
    trace: Vec<f64>,
    converged: bool,
}

/// Standardized sample matrix, row-major.
struct Samples {
    data: Vec<f64>,
    m: usize,
    dim: usize,
}

impl Samples {
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Fits mixtures for every K in `cfg.k_range` and keeps the one with the
/// smallest BIC.
pub fn fit_gmm(rows: &[Vec<f64>], cfg: &FitConfig) -> Result<(GmmModel, FitReport)> {
    cfg.validate()?;
    let m = rows.len();
    let needed = 2 * cfg.k_range.1;
    if m < needed {
        return Err(Error::TooFewSamples { needed, got: m });
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(Error::DimensionMismatch { expected: 1, got: 0 });
    }
    for row in rows {
        if row.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
    }
    let standardizer = Standardizer::fit(rows)?;
    let samples = Samples {
        data: rows.iter().flat_map(|r| standardizer.apply(r)).collect(),
        m,
        dim,
    };
    let pooled = covariance_of(&samples);
    let ll_shift = -(m as f64) * standardizer.log_scale();

    let mut best: Option<(usize, f64, RunOutcome)> = None;
    let mut bic_by_k = Vec::new();
    for k in cfg.k_range.0..=cfg.k_range.1 {
        let mut best_run: Option<RunOutcome> = None;
        for restart in 0..cfg.restarts {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(((k as u64) << 32) | restart as u64);
            let Some(run) = em_run(&samples, &pooled, k, cfg, &mut rng) else {
                continue;
            };
            let better = best_run
                .as_ref()
                .is_none_or(|b| run.trace.last() > b.trace.last());
            if better {
                best_run = Some(run);
            }
        }
        let Some(run) = best_run else {
            bic_by_k.push((k, None));
            continue;
        };
        let loglik = run.trace.last().copied().unwrap_or(f64::NEG_INFINITY) + ll_shift;
        let score = bic(loglik, n_free_params(k, dim), m);
        bic_by_k.push((k, Some(score)));
        if best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            best = Some((k, score, run));
        }
    }

    let (chosen_k, score, run) = best.ok_or(Error::DegenerateFit)?;
    let trace: Vec<f64> = run.trace.iter().map(|ll| ll + ll_shift).collect();
    let components = (0..chosen_k)
        .map(|j| GaussianComponent {
            weight: run.params.weights[j],
            mean: run.params.means[j].clone(),
            covariance: run.params.covs[j].clone(),
        })
        .collect();
    let model = GmmModel::new(standardizer, components)?;
    let report = FitReport {
        chosen_k,
        final_loglik: *trace.last().expect("non-empty trace"),
        bic: score,
        n_iter: trace.len(),
        loglik_trace: trace,
        converged: run.converged,
        bic_by_k,
    };
    Ok((model, report))
}

fn covariance_of(samples: &Samples) -> Vec<Vec<f64>> {
    let dim = samples.dim;
    let mut mean = vec![0.0; dim];
    for i in 0..samples.m {
        for (acc, v) in mean.iter_mut().zip(samples.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= samples.m as f64);
    let mut cov = vec![vec![0.0; dim]; dim];
    for i in 0..samples.m {
        let row = samples.row(i);
        for a in 0..dim {
            for b in 0..=a {
                cov[a][b] += (row[a] - mean[a]) * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in 0..=a {
            cov[a][b] /= samples.m as f64;
            cov[b][a] = cov[a][b];
        }
    }
    cov
}

/// D²-weighted seeding of initial means.
fn seed_means(samples: &Samples, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut means = vec![samples.row(rng.random_range(0..samples.m)).to_vec()];
    let mut dist: Vec<f64> = (0..samples.m)
        .map(|i| sq_dist(samples.row(i), &means[0]))
        .collect();
    while means.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = samples.m - 1;
            for (i, d) in dist.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..samples.m)
        };
        let mean = samples.row(pick).to_vec();
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(samples.row(i), &mean));
        }
        means.push(mean);
    }
    means
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Responsibility-weighted sums for one component, centred on that
/// component's current mean so the covariance needs no second pass.
struct Moments {
    total: f64,
    first: Vec<f64>,
    /// Lower triangle, row-major.
    second: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            total: 0.0,
            first: vec![0.0; dim],
            second: vec![0.0; dim * (dim + 1) / 2],
        }
    }
}

/// Current parameters in the form the E-step needs: means, packed inverse
/// Cholesky factors and per-component log-normalizers (with log-weights).
struct Pass<'a> {
    means: &'a [Vec<f64>],
    inverses: &'a [Vec<f64>],
    offsets: &'a [f64],
}

impl Pass<'_> {
    /// E-step over all rows; returns the log-likelihood and fills `moments`.
    fn run(&self, samples: &Samples, moments: &mut [Moments]) -> f64 {
        let (k, dim) = (self.means.len(), samples.dim);
        let mut diffs = vec![0.0; k * dim];
        let mut terms = vec![0.0; k];
        let mut loglik = 0.0;
        for x in samples.data.chunks_exact(dim) {
            for j in 0..k {
                let diff = &mut diffs[j * dim..(j + 1) * dim];
                for ((d, xv), mu) in diff.iter_mut().zip(x).zip(&self.means[j]) {
                    *d = xv - mu;
                }
                let inv = &self.inverses[j];
                let mut maha = 0.0;
                let mut start = 0;
                for a in 0..dim {
                    let s: f64 = inv[start..=start + a].iter().zip(&*diff).map(|(l, v)| l * v).sum();
                    maha += s * s;
                    start += a + 1;
                }
                terms[j] = self.offsets[j] - 0.5 * maha;
            }
            loglik += normalize_log_terms(&mut terms);
            for (j, acc) in moments.iter_mut().enumerate() {
                let r = terms[j];
                let diff = &diffs[j * dim..(j + 1) * dim];
                acc.total += r;
                let mut start = 0;
                for (a, (first, da)) in acc.first.iter_mut().zip(diff).enumerate() {
                    let ra = r * da;
                    *first += ra;
                    for (s, db) in acc.second[start..=start + a].iter_mut().zip(diff) {
                        *s += ra * db;
                    }
                    start += a + 1;
                }
            }
        }
        loglik
    }

    /// Same arithmetic as [`Pass::run`] with the dimension fixed at compile time.
    fn run_fixed<const D: usize>(&self, samples: &Samples, moments: &mut [Moments]) -> f64 {
        let k = self.means.len();
        let means: Vec<[f64; D]> = self
            .means
            .iter()
            .map(|m| m.as_slice().try_into().expect("mean has dimension D"))
            .collect();
        let inverses: Vec<[[f64; D]; D]> = self
            .inverses
            .iter()
            .map(|packed| {
                let mut full = [[0.0; D]; D];
                let mut idx = 0;
                for (a, row) in full.iter_mut().enumerate() {
                    for v in row.iter_mut().take(a + 1) {
                        *v = packed[idx];
                        idx += 1;
                    }
                }
                full
            })
            .collect();
        let mut first = vec![[0.0; D]; k];
        let mut second = vec![[[0.0; D]; D]; k];
        let mut totals = vec![0.0; k];
        let mut diffs = vec![[0.0; D]; k];
        let mut terms = vec![0.0; k];
        let mut loglik = 0.0;

        for row in samples.data.chunks_exact(D) {
            let x: &[f64; D] = row.try_into().expect("row has dimension D");
            for j in 0..k {
                let mut diff = [0.0; D];
                for a in 0..D {
                    diff[a] = x[a] - means[j][a];
                }
                let inv = &inverses[j];
                let mut maha = 0.0;
                for a in 0..D {
                    let mut s = 0.0;
                    for b in 0..=a {
                        s += inv[a][b] * diff[b];
                    }
                    maha += s * s;
                }
                diffs[j] = diff;
                terms[j] = self.offsets[j] - 0.5 * maha;
            }
            loglik += normalize_log_terms(&mut terms);
            for j in 0..k {
                let r = terms[j];
                let diff = &diffs[j];
                totals[j] += r;
                for a in 0..D {
                    let ra = r * diff[a];
                    first[j][a] += ra;
                    for b in 0..=a {
                        second[j][a][b] += ra * diff[b];
                    }
                }
            }
        }

        for (j, acc) in moments.iter_mut().enumerate() {
            acc.total = totals[j];
            acc.first.copy_from_slice(&first[j]);
            let mut idx = 0;
            for a in 0..D {
                for b in 0..=a {
                    acc.second[idx] = second[j][a][b];
                    idx += 1;
                }
            }
        }
        loglik
    }
}

/// Turns per-component log terms into responsibilities in place and returns
/// their log-sum-exp.
fn normalize_log_terms(terms: &mut [f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for t in terms.iter_mut() {
        *t = (*t - max).exp();
        total += *t;
    }
    let scale = 1.0 / total;
    terms.iter_mut().for_each(|t| *t *= scale);
    max + total.ln()
}

/// One EM run; `None` if it degenerates (singular covariance, emptied
/// component or non-finite likelihood). Log-likelihoods are in standardized
/// units.
fn em_run(
    samples: &Samples,
    pooled: &[Vec<f64>],
    k: usize,
    cfg: &FitConfig,
    rng: &mut ChaCha8Rng,
) -> Option<RunOutcome> {
    let (m, dim) = (samples.m, samples.dim);
    let mut params = Params {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(samples, k, rng),
        covs: vec![regularize(pooled.to_vec(), cfg.reg_eps); k],
    };
    let mut previous: Option<Params> = None;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for iter in 0..cfg.max_iter {
        let factors: Vec<Cholesky> = params
            .covs
            .iter()
            .map(|c| Cholesky::new(c))
            .collect::<Option<_>>()?;
        let offsets: Vec<f64> = params
            .weights
            .iter()
            .zip(&factors)
            .map(|(w, f)| w.ln() - 0.5 * (dim as f64 * LN_2PI + f.log_det()))
            .collect();
        let inverses: Vec<Vec<f64>> = factors.iter().map(Cholesky::packed_inverse).collect();

        // E-step, accumulating the next M-step's statistics on the way.
        let mut moments: Vec<Moments> = (0..k).map(|_| Moments::new(dim)).collect();
        let pass = Pass {
            means: &params.means,
            inverses: &inverses,
            offsets: &offsets,
        };
        let loglik = match dim {
            1 => pass.run_fixed::<1>(samples, &mut moments),
            2 => pass.run_fixed::<2>(samples, &mut moments),
            3 => pass.run_fixed::<3>(samples, &mut moments),
            4 => pass.run_fixed::<4>(samples, &mut moments),
            5 => pass.run_fixed::<5>(samples, &mut moments),
            6 => pass.run_fixed::<6>(samples, &mut moments),
            7 => pass.run_fixed::<7>(samples, &mut moments),
            8 => pass.run_fixed::<8>(samples, &mut moments),
            _ => pass.run(samples, &mut moments),
        };
        if !loglik.is_finite() {
            return None;
        }

        if let Some(&last) = trace.last() {
            if loglik < last {
                // regularization can cost a hair of likelihood at the fixed point
                params = previous.take().expect("previous params exist after first step");
                converged = true;
                break;
            }
            trace.push(loglik);
            if (loglik - last) / last.abs().max(f64::MIN_POSITIVE) < cfg.tol {
                converged = true;
                break;
            }
        } else {
            trace.push(loglik);
        }
        if iter + 1 == cfg.max_iter {
            break;
        }

        let next = m_step(&params, &moments, m, cfg.reg_eps)?;
        previous = Some(std::mem::replace(&mut params, next));
    }
    Some(RunOutcome {
        params,
        trace,
        converged,
    })
}

fn m_step(current: &Params, moments: &[Moments], m: usize, reg_eps: f64) -> Option<Params> {
    // an emptied component cannot be re-estimated
    if moments.iter().any(|acc| !(acc.total > 1e-8 * m as f64)) {
        return None;
    }
    let dim = current.means[0].len();
    let mut next = Params {
        weights: Vec::with_capacity(moments.len()),
        means: Vec::with_capacity(moments.len()),
        covs: Vec::with_capacity(moments.len()),
    };
    for (acc, centre) in moments.iter().zip(&current.means) {
        let n = acc.total;
        let shift: Vec<f64> = acc.first.iter().map(|v| v / n).collect();
        let mut cov = vec![vec![0.0; dim]; dim];
        let mut idx = 0;
        for a in 0..dim {
            for b in 0..=a {
                cov[a][b] = acc.second[idx] / n - shift[a] * shift[b];
                cov[b][a] = cov[a][b];
                idx += 1;
            }
        }
        next.weights.push(n / m as f64);
        next.means.push(centre.iter().zip(&shift).map(|(c, s)| c + s).collect());
        next.covs.push(regularize(cov, reg_eps));
    }
    Some(next)
}

/// Adds `reg_eps * (trace / D)` to the diagonal.
fn regularize(mut cov: Vec<Vec<f64>>, reg_eps: f64) -> Vec<Vec<f64>> {
    let dim = cov.len();
    let load = reg_eps * (0..dim).map(|i| cov[i][i]).sum::<f64>() / dim as f64;
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += load;
    }
    cov
}
