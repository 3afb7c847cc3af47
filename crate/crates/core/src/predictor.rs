//! MMSE forecasting over a fitted joint mixture, the spatio-temporal
//! predictor built on ranked cause nodes, and the two baselines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, normal_log_pdf, Cholesky};
use crate::mixture::{fit_gmm, FitConfig, FitReport, GmmModel};
use crate::panel::FlowPanel;
use crate::ranking::{
    build_training_rows, rank_lagged_variables, select_cause_nodes, CauseNodeSet, LagConfig,
    LaggedVariable,
};

/// Per-component pieces of the conditional distribution of the last
/// coordinate given the others, all in standardized units.
struct ConditionalTerm {
    log_weight: f64,
    mean_y: f64,
    regression: f64,
}

fn conditional_terms(model: &GmmModel, x: &[f64]) -> Result<Vec<ConditionalTerm>> {
    let q = model.dim.checked_sub(1).filter(|q| *q >= 1).ok_or(Error::DimensionMismatch {
        expected: 2,
        got: model.dim,
    })?;
    if x.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let s = &model.standardizer;
    let zx = crate::mixture::Standardizer {
        mean: s.mean[..q].to_vec(),
        std: s.std[..q].to_vec(),
    }
    .apply(x);

    model
        .components
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let block: Vec<Vec<f64>> = c.covariance[..q].iter().map(|r| r[..q].to_vec()).collect();
            let chol = Cholesky::new(&block).ok_or(Error::SingularBlock(j))?;
            let mean_x = &c.mean[..q];
            let centered: Vec<f64> = zx.iter().zip(mean_x).map(|(a, b)| a - b).collect();
            let coef = chol.solve(&centered);
            let cross = &c.covariance[q][..q];
            let regression: f64 = cross.iter().zip(&coef).map(|(a, b)| a * b).sum();
            Ok(ConditionalTerm {
                log_weight: c.weight.ln() + normal_log_pdf(&chol, mean_x, &zx),
                mean_y: c.mean[q],
                regression,
            })
        })
        .collect()
}

/// Posterior component probabilities given the inputs `x` (all but the last
/// coordinate).
pub fn responsibilities(model: &GmmModel, x: &[f64]) -> Result<Vec<f64>> {
    let terms = conditional_terms(model, x)?;
    let logs: Vec<f64> = terms.iter().map(|t| t.log_weight).collect();
    let norm = log_sum_exp(&logs);
    Ok(logs.iter().map(|l| (l - norm).exp()).collect())
}

/// E[Y | X = x] under the mixture, where Y is the last coordinate, in
/// original units.
pub fn conditional_mean(model: &GmmModel, x: &[f64]) -> Result<f64> {
    let terms = conditional_terms(model, x)?;
    let logs: Vec<f64> = terms.iter().map(|t| t.log_weight).collect();
    let norm = log_sum_exp(&logs);
    if !norm.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let y_std: f64 = terms
        .iter()
        .map(|t| (t.log_weight - norm).exp() * (t.mean_y + t.regression))
        .sum();
    let q = model.dim - 1;
    Ok(y_std * model.standardizer.std[q] + model.standardizer.mean[q])
}

/// Assembles the lagged inputs for prediction instant `t` (absolute index)
/// and returns the clamped conditional mean.
fn forecast_at(
    model: &GmmModel,
    inputs: &[LaggedVariable],
    panel: &FlowPanel,
    t: i64,
) -> Result<f64> {
    let start = panel.origin_index();
    let end = start + panel.len() as i64;
    if t > end {
        return Err(Error::OutOfRange {
            t: (t - start).max(0) as usize,
            len: panel.len(),
        });
    }
    let max_lag = inputs.iter().map(|v| v.lag).max().unwrap_or(0) as i64;
    if t - max_lag < start {
        return Err(Error::InsufficientHistory {
            t,
            needed: t - max_lag,
            start,
        });
    }
    let x = inputs
        .iter()
        .map(|v| {
            let series = panel.series(&v.site_id)?;
            Ok(series[(t - v.lag as i64 - start) as usize])
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(conditional_mean(model, &x)?.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StbnPredictor {
    pub target_site: String,
    pub cause_nodes: CauseNodeSet,
    /// Joint model over (causes..., effect), effect last.
    pub model: GmmModel,
}

impl StbnPredictor {
    pub fn new(cause_nodes: CauseNodeSet, model: GmmModel) -> Result<Self> {
        if model.dim != cause_nodes.variables.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: cause_nodes.variables.len() + 1,
                got: model.dim,
            });
        }
        Ok(Self {
            target_site: cause_nodes.target_site.clone(),
            cause_nodes,
            model,
        })
    }
}

/// Ranks lagged candidates, keeps the top `k`, and fits the joint mixture.
pub fn train_stbn(
    train: &FlowPanel,
    target: &str,
    lag_cfg: &LagConfig,
    fit_cfg: &FitConfig,
) -> Result<(StbnPredictor, FitReport)> {
    let ranking = rank_lagged_variables(train, target, lag_cfg)?;
    let cause_nodes = select_cause_nodes(&ranking.entries, target, lag_cfg.k)?;
    let rows = build_training_rows(train, target, &cause_nodes.variables)?;
    let (model, report) = fit_gmm(&rows, fit_cfg)?;
    Ok((StbnPredictor::new(cause_nodes, model)?, report))
}

pub fn forecast_stbn(p: &StbnPredictor, panel: &FlowPanel, t: i64) -> Result<f64> {
    forecast_at(&p.model, &p.cause_nodes.variables, panel, t)
}

/// Fixed-memory baseline: the target's own lags `1..=order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovChainPredictor {
    pub target_site: String,
    pub order: usize,
    pub model: GmmModel,
}

impl MarkovChainPredictor {
    pub fn inputs(&self) -> Vec<LaggedVariable> {
        own_lags(&self.target_site, self.order)
    }
}

fn own_lags(target: &str, order: usize) -> Vec<LaggedVariable> {
    (1..=order).map(|lag| LaggedVariable::new(target, lag)).collect()
}

pub const DEFAULT_MARKOV_ORDER: usize = 4;

pub fn train_markov_chain(
    train: &FlowPanel,
    target: &str,
    order: usize,
    fit_cfg: &FitConfig,
) -> Result<(MarkovChainPredictor, FitReport)> {
    if order == 0 {
        return Err(Error::InvalidConfig("order must be at least 1".into()));
    }
    train.site_position(target)?;
    if train.len() <= order + 1 {
        return Err(Error::PanelTooShort {
            len: train.len(),
            needed: order + 1,
        });
    }
    let rows = build_training_rows(train, target, &own_lags(target, order))?;
    let (model, report) = fit_gmm(&rows, fit_cfg)?;
    Ok((
        MarkovChainPredictor {
            target_site: target.to_string(),
            order,
            model,
        },
        report,
    ))
}

pub fn forecast_markov_chain(p: &MarkovChainPredictor, panel: &FlowPanel, t: i64) -> Result<f64> {
    forecast_at(&p.model, &p.inputs(), panel, t)
}

/// x̂(t) = x(t-1): `series[t - 1]` for `1 <= t <= len`.
pub fn random_walk_forecast(series: &[f64], t: usize) -> Result<f64> {
    if t == 0 || t > series.len() {
        return Err(Error::OutOfRange {
            t,
            len: series.len(),
        });
    }
    Ok(series[t - 1])
}

/// On-disk form of a trained predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedPredictor {
    Stbn(StbnPredictor),
    MarkovChain(MarkovChainPredictor),
}

impl SavedPredictor {
    pub fn target_site(&self) -> &str {
        match self {
            Self::Stbn(p) => &p.target_site,
            Self::MarkovChain(p) => &p.target_site,
        }
    }

    pub fn forecast(&self, panel: &FlowPanel, t: i64) -> Result<f64> {
        match self {
            Self::Stbn(p) => forecast_stbn(p, panel, t),
            Self::MarkovChain(p) => forecast_markov_chain(p, panel, t),
        }
    }

    /// Largest lag the predictor reads.
    pub fn max_lag(&self) -> usize {
        match self {
            Self::Stbn(p) => p.cause_nodes.max_lag(),
            Self::MarkovChain(p) => p.order,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let saved: Self = serde_json::from_str(text)?;
        // re-run model validation on whatever came off disk
        let model = match &saved {
            Self::Stbn(p) => &p.model,
            Self::MarkovChain(p) => &p.model,
        };
        GmmModel::from_json(&model.to_json()?)?;
        match &saved {
            Self::Stbn(p) => {
                StbnPredictor::new(p.cause_nodes.clone(), p.model.clone())?;
            }
            Self::MarkovChain(p) if p.model.dim != p.order + 1 => {
                return Err(Error::DimensionMismatch {
                    expected: p.order + 1,
                    got: p.model.dim,
                })
            }
            Self::MarkovChain(_) => {}
        }
        Ok(saved)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
