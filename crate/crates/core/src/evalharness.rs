//! RMSE and the three-method comparison on a chronological split.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::FitConfig;
use crate::panel::{split_chronological, FlowPanel};
use crate::predictor::{
    forecast_markov_chain, forecast_stbn, random_walk_forecast, train_markov_chain, train_stbn,
    DEFAULT_MARKOV_ORDER,
};
use crate::ranking::LagConfig;

pub fn rmse(predictions: &[f64], truth: &[f64]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Empty);
    }
    let sq: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sq / predictions.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    RandomWalk,
    MarkovChain,
    #[serde(rename = "STBN")]
    Stbn,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::RandomWalk, Method::MarkovChain, Method::Stbn];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::RandomWalk => "RandomWalk",
            Method::MarkovChain => "MarkovChain",
            Method::Stbn => "STBN",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::RandomWalk => "Random Walk",
            Method::MarkovChain => "Markov Chain",
            Method::Stbn => "Spatio-Temporal Bayesian Network",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lag: LagConfig,
    pub fit: FitConfig,
    pub markov_order: usize,
    /// Rows used for ranking and fitting; the rest is the test set.
    pub train_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            lag: LagConfig::default(),
            fit: FitConfig::default(),
            markov_order: DEFAULT_MARKOV_ORDER,
            train_len: 2112,
        }
    }
}

/// One-step forecasts of every method over the test rows of one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastTrace {
    pub target: String,
    pub t: Vec<i64>,
    pub truth: Vec<f64>,
    pub random_walk: Vec<f64>,
    pub markov_chain: Vec<f64>,
    pub stbn: Vec<f64>,
}

impl ForecastTrace {
    pub fn predictions(&self, method: Method) -> &[f64] {
        match method {
            Method::RandomWalk => &self.random_walk,
            Method::MarkovChain => &self.markov_chain,
            Method::Stbn => &self.stbn,
        }
    }

    /// `t,truth,rw,mc,stbn`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,truth,rw,mc,stbn")?;
        for i in 0..self.t.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.t[i], self.truth[i], self.random_walk[i], self.markov_chain[i], self.stbn[i]
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub targets: Vec<String>,
    pub methods: Vec<Method>,
    /// `rmse[method][target]` in veh/hr.
    pub rmse: Vec<Vec<f64>>,
    pub config: ExperimentConfig,
    pub n_test: usize,
    /// Chosen component counts per target: (Markov chain, STBN).
    pub chosen_components: Vec<(usize, usize)>,
    #[serde(skip)]
    pub forecasts: Vec<ForecastTrace>,
}

impl EvaluationReport {
    pub fn rmse_of(&self, method: Method, target: &str) -> Option<f64> {
        let m = self.methods.iter().position(|x| *x == method)?;
        let t = self.targets.iter().position(|x| x == target)?;
        Some(self.rmse[m][t])
    }

    /// `method,target,rmse`
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "method,target,rmse")?;
        for (method, row) in self.methods.iter().zip(&self.rmse) {
            for (target, value) in self.targets.iter().zip(row) {
                writeln!(out, "{},{},{}", method.as_str(), target, value)?;
            }
        }
        Ok(())
    }

    /// Methods down, targets across, two decimals.
    pub fn format_table(&self) -> String {
        let label_width = self.methods.iter().map(|m| m.label().len()).max().unwrap_or(7).max(7);
        let col_width = self.targets.iter().map(String::len).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = write!(out, "{:<label_width$} |", "Methods");
        for t in &self.targets {
            let _ = write!(out, " {t:>col_width$}");
        }
        out.push('\n');
        out.push_str(&"-".repeat(label_width + 2 + self.targets.len() * (col_width + 1)));
        out.push('\n');
        for (method, row) in self.methods.iter().zip(&self.rmse) {
            let _ = write!(out, "{:<label_width$} |", method.label());
            for v in row {
                let _ = write!(out, " {:>col_width$}", format!("{v:.2}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Random Walk RMSE over rows `[train_len, T)` of one site. Needs no
/// training, so it applies to any panel, constant ones included.
pub fn random_walk_rmse(panel: &FlowPanel, target: &str, train_len: usize) -> Result<f64> {
    split_chronological(panel, train_len)?;
    let series = panel.series(target)?;
    let predictions = (train_len..panel.len())
        .map(|row| random_walk_forecast(series, row))
        .collect::<Result<Vec<f64>>>()?;
    rmse(&predictions, &series[train_len..])
}

struct TargetResult {
    trace: ForecastTrace,
    components: (usize, usize),
}

fn stage<'a>(target: &'a str, name: &'static str) -> impl FnOnce(Error) -> Error + 'a {
    move |e| Error::Stage {
        target: target.to_string(),
        stage: name,
        source: Box::new(e),
    }
}

fn evaluate_target(
    panel: &FlowPanel,
    train: &FlowPanel,
    target: &str,
    cfg: &ExperimentConfig,
) -> Result<TargetResult> {
    let series = panel.series(target).map_err(stage(target, "lookup"))?;
    let (markov, mc_report) = train_markov_chain(train, target, cfg.markov_order, &cfg.fit)
        .map_err(stage(target, "markov chain training"))?;
    let (stbn, stbn_report) =
        train_stbn(train, target, &cfg.lag, &cfg.fit).map_err(stage(target, "stbn training"))?;

    let origin = panel.origin_index();
    let rows = cfg.train_len..panel.len();
    let mut trace = ForecastTrace {
        target: target.to_string(),
        t: Vec::with_capacity(rows.len()),
        truth: Vec::with_capacity(rows.len()),
        random_walk: Vec::with_capacity(rows.len()),
        markov_chain: Vec::with_capacity(rows.len()),
        stbn: Vec::with_capacity(rows.len()),
    };
    for row in rows {
        let t = origin + row as i64;
        trace.t.push(t);
        trace.truth.push(series[row]);
        trace
            .random_walk
            .push(random_walk_forecast(series, row).map_err(stage(target, "random walk"))?);
        trace.markov_chain.push(
            forecast_markov_chain(&markov, panel, t).map_err(stage(target, "markov chain forecast"))?,
        );
        trace
            .stbn
            .push(forecast_stbn(&stbn, panel, t).map_err(stage(target, "stbn forecast"))?);
    }
    Ok(TargetResult {
        trace,
        components: (mc_report.chosen_k, stbn_report.chosen_k),
    })
}

/// Trains both model-based predictors per target on the first `train_len`
/// rows and scores one-step forecasts, conditioned on observed history, over
/// the remaining rows.
pub fn run_experiment(
    panel: &FlowPanel,
    targets: &[String],
    cfg: &ExperimentConfig,
) -> Result<EvaluationReport> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig("no target sites given".into()));
    }
    let (train, test) = split_chronological(panel, cfg.train_len)?;
    let results = targets
        .iter()
        .map(|target| evaluate_target(panel, &train, target, cfg))
        .collect::<Result<Vec<_>>>()?;

    let rmse = Method::ALL
        .iter()
        .map(|&method| {
            results
                .iter()
                .map(|r| rmse(r.trace.predictions(method), &r.trace.truth))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        targets: targets.to_vec(),
        methods: Method::ALL.to_vec(),
        rmse,
        config: cfg.clone(),
        n_test: test.len(),
        chosen_components: results.iter().map(|r| r.components).collect(),
        forecasts: results.into_iter().map(|r| r.trace).collect(),
    })
}
