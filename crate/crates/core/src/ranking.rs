//! Lagged candidate variables, Pearson scoring and best-first cause-node
//! selection.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::FlowPanel;

/// A site's flow `lag` steps before the prediction instant.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LaggedVariable {
    pub site_id: String,
    pub lag: usize,
}

impl LaggedVariable {
    pub fn new(site_id: impl Into<String>, lag: usize) -> Self {
        Self {
            site_id: site_id.into(),
            lag,
        }
    }
}

impl std::fmt::Display for LaggedVariable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}(t-{})", self.site_id, self.lag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub variable: LaggedVariable,
    pub r_signed: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseNodeSet {
    pub target_site: String,
    pub variables: Vec<LaggedVariable>,
    pub scores: Vec<f64>,
}

impl CauseNodeSet {
    pub fn max_lag(&self) -> usize {
        self.variables.iter().map(|v| v.lag).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagConfig {
    /// Largest lag considered.
    pub d: usize,
    /// Number of cause nodes kept.
    pub k: usize,
}

impl Default for LagConfig {
    fn default() -> Self {
        Self { d: 100, k: 4 }
    }
}

impl LagConfig {
    pub fn validate(&self, n_sites: usize) -> Result<()> {
        if self.d == 0 || self.k == 0 {
            return Err(Error::InvalidConfig("d and k must be at least 1".into()));
        }
        if self.k > n_sites * self.d {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds the {} available candidates",
                self.k,
                n_sites * self.d
            )));
        }
        Ok(())
    }
}

/// Sample Pearson correlation, clamped to [-1, 1].
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let m = xs.len();
    if m < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: m });
    }
    let mean_x = xs.iter().sum::<f64>() / m as f64;
    let mean_y = ys.iter().sum::<f64>() / m as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Aligned sample rows `[x_1 .. x_k, y]`, one per prediction instant
/// `t in [max_lag, T)`, with `x_i = site_i(t - lag_i)` and `y = target(t)`.
pub fn build_training_rows(
    panel: &FlowPanel,
    target: &str,
    variables: &[LaggedVariable],
) -> Result<Vec<Vec<f64>>> {
    let y = panel.series(target)?;
    let inputs = variables
        .iter()
        .map(|v| panel.series(&v.site_id).map(|s| (s, v.lag)))
        .collect::<Result<Vec<_>>>()?;
    let max_lag = variables.iter().map(|v| v.lag).max().unwrap_or(0);
    let len = panel.len();
    if len <= max_lag {
        return Err(Error::PanelTooShort {
            len,
            needed: max_lag,
        });
    }
    Ok((max_lag..len)
        .map(|t| {
            let mut row: Vec<f64> = inputs.iter().map(|(s, lag)| s[t - lag]).collect();
            row.push(y[t]);
            row
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub entries: Vec<RankingEntry>,
    /// Candidates dropped because their aligned series was constant.
    pub skipped: Vec<LaggedVariable>,
}

/// Scores every `(site, lag)` with `1 <= lag <= d` against the target over
/// the common window `t in [d, T)` and sorts by |R| descending, breaking ties
/// by smaller lag and then site id.
pub fn rank_lagged_variables(train: &FlowPanel, target: &str, cfg: &LagConfig) -> Result<Ranking> {
    cfg.validate(train.n_sites())?;
    let y = train.series(target)?;
    let len = train.len();
    if len <= cfg.d + 1 {
        return Err(Error::PanelTooShort {
            len,
            needed: cfg.d + 1,
        });
    }
    let window = &y[cfg.d..];
    let mut entries = Vec::with_capacity(train.n_sites() * cfg.d);
    let mut skipped = Vec::new();
    for (pos, site) in train.site_ids().iter().enumerate() {
        let xs = train.column(pos);
        for lag in 1..=cfg.d {
            let variable = LaggedVariable::new(site.clone(), lag);
            match pearson(&xs[cfg.d - lag..len - lag], window) {
                Ok(r) => entries.push(RankingEntry {
                    variable,
                    r_signed: r,
                    score: r.abs(),
                }),
                Err(Error::ZeroVariance) => skipped.push(variable),
                Err(e) => return Err(e),
            }
        }
    }
    entries.sort_by(compare_entries);
    Ok(Ranking { entries, skipped })
}

fn compare_entries(a: &RankingEntry, b: &RankingEntry) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.variable.lag.cmp(&b.variable.lag))
        .then_with(|| a.variable.site_id.cmp(&b.variable.site_id))
}

/// Best-first selection: the first `k` entries of the ranking.
pub fn select_cause_nodes(ranking: &[RankingEntry], target: &str, k: usize) -> Result<CauseNodeSet> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if ranking.len() < k {
        return Err(Error::NotEnoughCandidates {
            requested: k,
            available: ranking.len(),
        });
    }
    let top = &ranking[..k];
    Ok(CauseNodeSet {
        target_site: target.to_string(),
        variables: top.iter().map(|e| e.variable.clone()).collect(),
        scores: top.iter().map(|e| e.score).collect(),
    })
}

/// `rank,site,lag,r_signed,score`, one line per entry.
pub fn write_ranking_csv<W: Write>(entries: &[RankingEntry], mut out: W) -> Result<()> {
    writeln!(out, "rank,site,lag,r_signed,score")?;
    for (i, e) in entries.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            e.variable.site_id,
            e.variable.lag,
            e.r_signed,
            e.score
        )?;
    }
    Ok(())
}

/// Two-line block: the target followed by its cause nodes, then the scores
/// underneath each variable.
pub fn format_cause_block(nodes: &CauseNodeSet) -> String {
    let names: Vec<String> = nodes.variables.iter().map(|v| v.to_string()).collect();
    let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
    let head = format!("{}(t)", nodes.target_site);
    let mut top = format!("{head:<12}");
    let mut bottom = format!("{:<12}", "");
    for (name, score) in names.iter().zip(&nodes.scores) {
        top.push_str(&format!(" {name:<width$}"));
        bottom.push_str(&format!(" {:<width$}", format!("{score:.3}")));
    }
    format!("{}\n{}\n", top.trim_end(), bottom.trim_end())
}
