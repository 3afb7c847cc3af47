//! Multi-site flow series: the panel type, CSV ingestion, chronological
//! splitting and a synthetic hidden-source network generator.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_INTERVAL_MINUTES: u32 = 15;

/// Rectangular T×S matrix of flow rates (veh/hr), stored column-wise so that a
/// site's series is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPanel {
    site_ids: Vec<String>,
    interval_minutes: u32,
    columns: Vec<Vec<f64>>,
    origin_index: i64,
}

impl FlowPanel {
    /// Builds a panel from per-site columns, checking every panel invariant.
    pub fn from_columns(
        site_ids: Vec<String>,
        columns: Vec<Vec<f64>>,
        interval_minutes: u32,
        origin_index: i64,
    ) -> Result<Self> {
        if site_ids.is_empty() {
            return Err(Error::InvalidPanel("panel has no sites".into()));
        }
        if interval_minutes == 0 {
            return Err(Error::InvalidPanel("interval_minutes must be positive".into()));
        }
        if site_ids.len() != columns.len() {
            return Err(Error::InvalidPanel(format!(
                "{} site ids but {} columns",
                site_ids.len(),
                columns.len()
            )));
        }
        let mut seen = HashSet::new();
        for id in &site_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateSiteId(id.clone()));
            }
        }
        let len = columns[0].len();
        if len == 0 {
            return Err(Error::InvalidPanel("panel has no rows".into()));
        }
        for (id, col) in site_ids.iter().zip(&columns) {
            if col.len() != len {
                return Err(Error::InvalidPanel(format!(
                    "site `{id}` has {} rows, expected {len}",
                    col.len()
                )));
            }
            if let Some(v) = col.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidPanel(format!(
                    "site `{id}` holds invalid flow {v}"
                )));
            }
        }
        Ok(Self {
            site_ids,
            interval_minutes,
            columns,
            origin_index,
        })
    }

    /// Row-major constructor, mostly for tests and small hand-built panels.
    pub fn from_rows(site_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let s = site_ids.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != s) {
            return Err(Error::InvalidPanel(format!(
                "row has {} values, expected {s}",
                bad.len()
            )));
        }
        let columns = (0..s).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(site_ids, columns, DEFAULT_INTERVAL_MINUTES, 0)
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn interval_minutes(&self) -> u32 {
        self.interval_minutes
    }

    pub fn origin_index(&self) -> i64 {
        self.origin_index
    }

    /// Number of rows (time steps).
    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn site_position(&self, site: &str) -> Result<usize> {
        self.site_ids
            .iter()
            .position(|s| s == site)
            .ok_or_else(|| Error::UnknownSite(site.to_string()))
    }

    /// Series for one site, indexed by row (row 0 is `origin_index`).
    pub fn series(&self, site: &str) -> Result<&[f64]> {
        Ok(&self.columns[self.site_position(site)?])
    }

    pub fn column(&self, position: usize) -> &[f64] {
        &self.columns[position]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Panel restricted to rows `[start, end)`, keeping absolute indices.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidPanel(format!(
                "row range {start}..{end} invalid for {} rows",
                self.len()
            )));
        }
        Ok(Self {
            site_ids: self.site_ids.clone(),
            interval_minutes: self.interval_minutes,
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
            origin_index: self.origin_index + start as i64,
        })
    }

    pub fn with_interval_minutes(mut self, minutes: u32) -> Result<Self> {
        if minutes == 0 {
            return Err(Error::InvalidPanel("interval_minutes must be positive".into()));
        }
        self.interval_minutes = minutes;
        Ok(self)
    }

    /// Serializes as `t,<id>,...` with shortest round-trip decimals and LF endings.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t")?;
        for id in &self.site_ids {
            write!(out, ",{id}")?;
        }
        writeln!(out)?;
        for r in 0..self.len() {
            write!(out, "{}", self.origin_index + r as i64)?;
            for col in &self.columns {
                write!(out, ",{}", col[r])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

pub fn load_panel_csv(path: &Path) -> Result<FlowPanel> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingFile(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    read_panel_csv(file)
}

pub fn read_panel_csv<R: std::io::Read>(input: R) -> Result<FlowPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();

    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::InvalidPanel("file is empty".into())),
    };
    if header.get(0) != Some("t") {
        return Err(Error::InvalidPanel(
            "header must start with the `t` index column".into(),
        ));
    }
    let site_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    if site_ids.is_empty() {
        return Err(Error::InvalidPanel("header names no sites".into()));
    }
    let mut seen = HashSet::new();
    for id in &site_ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateSiteId(id.clone()));
        }
    }

    let width = site_ids.len() + 1;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); site_ids.len()];
    let mut origin = None;
    for (i, record) in records.enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != width {
            return Err(Error::RaggedRow {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let index: i64 = record[0].trim().parse().map_err(|_| Error::NonNumeric {
            line,
            field: record[0].to_string(),
        })?;
        let expected = origin.map_or(index, |o: i64| o + i as i64);
        if index != expected {
            return Err(Error::NonConsecutiveIndex {
                line,
                expected,
                found: index,
            });
        }
        origin.get_or_insert(index);
        for (j, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumeric {
                    line,
                    field: field.to_string(),
                })?;
            if value < 0.0 {
                return Err(Error::NegativeFlow {
                    line,
                    site: site_ids[j].clone(),
                    value,
                });
            }
            columns[j].push(value);
        }
    }
    let origin = origin.ok_or_else(|| Error::InvalidPanel("file has no data rows".into()))?;
    FlowPanel::from_columns(site_ids, columns, DEFAULT_INTERVAL_MINUTES, origin)
}

/// Splits into rows `[0, train_len)` and `[train_len, T)` without reordering.
pub fn split_chronological(panel: &FlowPanel, train_len: usize) -> Result<(FlowPanel, FlowPanel)> {
    let len = panel.len();
    if train_len == 0 || train_len >= len {
        return Err(Error::BadSplit { train_len, len });
    }
    Ok((panel.slice_rows(0, train_len)?, panel.slice_rows(train_len, len)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_sites: usize,
    pub n_sources: usize,
    pub length: usize,
    pub steps_per_day: usize,
    /// Inclusive range of per-(site, source) delays in steps.
    pub delay_range: (usize, usize),
    pub gain_range: (f64, f64),
    pub noise_std: f64,
    pub base_level: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_sites: 10,
            n_sources: 3,
            length: 2400,
            steps_per_day: 96,
            delay_range: (1, 8),
            gain_range: (0.5, 2.0),
            noise_std: 15.0,
            base_level: 200.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_sites == 0 || self.n_sources == 0 || self.length == 0 || self.steps_per_day == 0 {
            return bad("n_sites, n_sources, length and steps_per_day must be positive");
        }
        if self.delay_range.0 > self.delay_range.1 {
            return bad("delay_range lower bound exceeds upper bound");
        }
        let (g_lo, g_hi) = self.gain_range;
        if !(g_lo > 0.0 && g_lo.is_finite() && g_hi.is_finite() && g_lo <= g_hi) {
            return bad("gain_range must be a finite interval with a positive lower bound");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative");
        }
        if !(self.base_level >= 0.0 && self.base_level.is_finite()) {
            return bad("base_level must be finite and non-negative");
        }
        Ok(())
    }
}

// Latent source profile: level + daily harmonics + mean-reverting drift.
const SOURCE_LEVEL: f64 = 100.0;
const SOURCE_AMPLITUDE: (f64, f64) = (40.0, 80.0);
const DRIFT_PERSISTENCE: f64 = 0.9;
const DRIFT_STEP_STD: f64 = 8.0;

/// Sampled hidden-source network: latent sources plus each site's gain and
/// delay on every source. Rendering it yields a [`FlowPanel`].
#[derive(Debug, Clone)]
pub struct SyntheticNetwork {
    pub spec: SyntheticSpec,
    /// `sources[s][tau + max_delay]` is source `s` at step `tau`, for
    /// `tau` in `[-max_delay, length)`.
    pub sources: Vec<Vec<f64>>,
    pub gains: Vec<Vec<f64>>,
    pub delays: Vec<Vec<usize>>,
    noise: Vec<Vec<f64>>,
}

impl SyntheticNetwork {
    pub fn sample(spec: &SyntheticSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max_delay = spec.delay_range.1;
        let span = spec.length + max_delay;
        let drift_noise = Normal::new(0.0, DRIFT_STEP_STD).expect("valid std");
        let period = spec.steps_per_day as f64;

        let sources = (0..spec.n_sources)
            .map(|_| {
                let n_harmonics = rng.random_range(1..=3usize);
                let amplitude = rng.random_range(SOURCE_AMPLITUDE.0..SOURCE_AMPLITUDE.1);
                let harmonics: Vec<(f64, f64, f64)> = (1..=n_harmonics)
                    .map(|h| {
                        let a = amplitude * rng.random_range(0.3..1.0) / h as f64;
                        let phase = rng.random_range(0.0..TAU);
                        (h as f64, a, phase)
                    })
                    .collect();
                let mut drift = 0.0;
                (0..span)
                    .map(|i| {
                        let tau = i as f64 - max_delay as f64;
                        drift = DRIFT_PERSISTENCE * drift + drift_noise.sample(&mut rng);
                        let daily: f64 = harmonics
                            .iter()
                            .map(|(h, a, phase)| a * (TAU * h * tau / period + phase).sin())
                            .sum();
                        SOURCE_LEVEL + daily + drift
                    })
                    .collect()
            })
            .collect();

        let mut gains = Vec::with_capacity(spec.n_sites);
        let mut delays = Vec::with_capacity(spec.n_sites);
        for _ in 0..spec.n_sites {
            let (g, d): (Vec<f64>, Vec<usize>) = (0..spec.n_sources)
                .map(|_| {
                    let g = if spec.gain_range.0 == spec.gain_range.1 {
                        spec.gain_range.0
                    } else {
                        rng.random_range(spec.gain_range.0..spec.gain_range.1)
                    };
                    (g, rng.random_range(spec.delay_range.0..=spec.delay_range.1))
                })
                .unzip();
            gains.push(g);
            delays.push(d);
        }

        let noise = if spec.noise_std > 0.0 {
            let dist = Normal::new(0.0, spec.noise_std).expect("valid std");
            (0..spec.n_sites)
                .map(|_| (0..spec.length).map(|_| dist.sample(&mut rng)).collect())
                .collect()
        } else {
            vec![vec![0.0; spec.length]; spec.n_sites]
        };

        Ok(Self {
            spec: spec.clone(),
            sources,
            gains,
            delays,
            noise,
        })
    }

    /// Source `s` at step `tau`, `-max_delay <= tau < length`.
    pub fn source_at(&self, s: usize, tau: i64) -> f64 {
        self.sources[s][(tau + self.spec.delay_range.1 as i64) as usize]
    }

    pub fn site_ids(&self) -> Vec<String> {
        let width = self.spec.n_sites.saturating_sub(1).to_string().len().max(2);
        (0..self.spec.n_sites).map(|i| format!("S{i:0width$}")).collect()
    }

    pub fn render(&self) -> FlowPanel {
        let columns = (0..self.spec.n_sites)
            .map(|site| {
                (0..self.spec.length)
                    .map(|t| {
                        let signal: f64 = (0..self.spec.n_sources)
                            .map(|s| {
                                self.gains[site][s]
                                    * self.source_at(s, t as i64 - self.delays[site][s] as i64)
                            })
                            .sum();
                        (self.spec.base_level + signal + self.noise[site][t]).max(0.0)
                    })
                    .collect()
            })
            .collect();
        FlowPanel::from_columns(self.site_ids(), columns, DEFAULT_INTERVAL_MINUTES, 0)
            .expect("generator output satisfies panel invariants")
    }
}

pub fn generate_synthetic_network(spec: &SyntheticSpec, seed: u64) -> Result<FlowPanel> {
    Ok(SyntheticNetwork::sample(spec, seed)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_small_panel() {
        let p = read_panel_csv("t,A,B\n0,10,20\n1,12,18\n".as_bytes()).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.site_ids(), &ids(&["A", "B"])[..]);
        assert_eq!(p.row(0), vec![10.0, 20.0]);
        assert_eq!(p.row(1), vec![12.0, 18.0]);
        assert_eq!(p.origin_index(), 0);
    }

    #[test]
    fn rejects_malformed_files() {
        let err = read_panel_csv("t,A,B\n0,10,20\n1,12\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::RaggedRow { line: 3, expected: 3, found: 2 }));
        let err = read_panel_csv("t,A\n0,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));
        let err = read_panel_csv("t,A\n0,\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));
        let err = read_panel_csv("t,A\n0,-1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NegativeFlow { .. }));
        let err = read_panel_csv("t,A\n0,1\n2,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonConsecutiveIndex { expected: 1, found: 2, .. }));
        let err = read_panel_csv("t,A,A\n0,1,2\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::DuplicateSiteId(ref s) if s == "A"));
        let err = load_panel_csv(Path::new("/definitely/not/here.csv")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }

    #[test]
    fn origin_comes_from_first_row() {
        let p = read_panel_csv("t,A\n7,1\n8,2\n".as_bytes()).unwrap();
        assert_eq!(p.origin_index(), 7);
    }

    #[test]
    fn split_boundaries() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let p = FlowPanel::from_rows(ids(&["A"]), &rows).unwrap();
        assert!(matches!(split_chronological(&p, 10), Err(Error::BadSplit { .. })));
        assert!(matches!(split_chronological(&p, 0), Err(Error::BadSplit { .. })));
        let (train, test) = split_chronological(&p, 9).unwrap();
        assert_eq!(train.len(), 9);
        assert_eq!(test.len(), 1);
        assert_eq!(test.origin_index(), 9);
        assert_eq!(test.column(0), &[9.0]);
    }

    #[test]
    fn full_size_split() {
        let panel = generate_synthetic_network(&SyntheticSpec::default(), 0).unwrap();
        assert_eq!(panel.len(), 2400);
        assert_eq!(panel.len() / SyntheticSpec::default().steps_per_day, 25);
        let (train, test) = split_chronological(&panel, 2112).unwrap();
        assert_eq!((train.len(), test.len()), (2112, 288));
        assert_eq!(test.origin_index(), 2112);
    }

    #[test]
    fn generator_is_deterministic() {
        let spec = SyntheticSpec { length: 300, ..Default::default() };
        let a = generate_synthetic_network(&spec, 11).unwrap();
        let b = generate_synthetic_network(&spec, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_network(&spec, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_single_source_follows_recurrence() {
        let spec = SyntheticSpec {
            n_sites: 1,
            n_sources: 1,
            length: 500,
            noise_std: 0.0,
            ..Default::default()
        };
        let net = SyntheticNetwork::sample(&spec, 3).unwrap();
        let panel = net.render();
        let g = net.gains[0][0];
        let delay = net.delays[0][0] as i64;
        for t in 0..spec.length {
            let expected = (spec.base_level + g * net.source_at(0, t as i64 - delay)).max(0.0);
            assert_eq!(panel.column(0)[t], expected);
        }
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = SyntheticSpec { gain_range: (0.0, 1.0), ..Default::default() };
        assert!(matches!(spec.validate(), Err(Error::InvalidConfig(_))));
        let spec = SyntheticSpec { delay_range: (3, 1), ..Default::default() };
        assert!(spec.validate().is_err());
    }
}
