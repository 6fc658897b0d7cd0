//! Desk-scale reproductions of the practice and spacing phenomena.
//!
//! Both experiments drive a single chunk's usage history directly through
//! [`DeclarativeMemory`]; no productions are involved.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::association::{Context, NoAssociations};
use crate::declarative::{recall_probability_of, DecayMode, DeclarativeMemory};
use crate::params::Parameters;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("the regression needs at least 10 events, got {0}")]
    TooFewEvents(usize),
    #[error("spacing needs at least two schedules")]
    TooFewSchedules,
    #[error("schedules differ in event count ({0} vs {1})")]
    CountMismatch(usize, usize),
    #[error("bad schedule `{0}`: expected name:GAPxCOUNT with GAP > 0 and COUNT >= 1")]
    BadSchedule(String),
    #[error("{0} must be positive and finite")]
    NotPositive(&'static str),
    #[error(transparent)]
    Params(#[from] crate::params::ParamError),
    #[error(transparent)]
    Memory(#[from] crate::declarative::DeclarativeError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PracticeRow {
    /// Number of practice events so far.
    pub k: usize,
    /// Time since the first event at the probe.
    pub age: f64,
    pub latency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerLaw {
    pub rows: Vec<PracticeRow>,
    /// Least-squares slope of `ln(latency - C)` on `ln k` over `k >= 5`.
    pub slope: f64,
}

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `events` uses of one chunk spaced `dt` apart under constant decay `d`.
/// Latency after the k-th use is probed half an interval later, i.e. at
/// the midpoint before the next use would occur.
pub fn power_law(
    d: f64,
    dt: f64,
    events: usize,
    base: &Parameters,
) -> Result<PowerLaw, ExperimentError> {
    if events < 10 {
        return Err(ExperimentError::TooFewEvents(events));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(ExperimentError::NotPositive("dt"));
    }
    let mut params = base.clone();
    params.set("decay_mode", "constant")?;
    params.decay = d;
    params.validate()?;
    let mut memory = DeclarativeMemory::new(params.declarative());
    let id = memory.add_chunk("fact", BTreeMap::new(), 0.0)?;
    let ctx = Context::empty();
    let mut rows = Vec::with_capacity(events);
    for k in 1..=events {
        if k > 1 {
            memory.record_use(&id, (k - 1) as f64 * dt)?;
        }
        let probe = (k as f64 - 0.5) * dt;
        rows.push(PracticeRow {
            k,
            age: probe,
            latency: memory.retrieval_latency(&id, &ctx, &NoAssociations, probe),
        });
    }
    let fit: Vec<&PracticeRow> = rows.iter().filter(|r| r.k >= 5).collect();
    let xs: Vec<f64> = fit.iter().map(|r| (r.k as f64).ln()).collect();
    let ys: Vec<f64> = fit
        .iter()
        .map(|r| (r.latency - params.retrieval_c).ln())
        .collect();
    let slope = ols_slope(&xs, &ys);
    Ok(PowerLaw { rows, slope })
}

/// `count` events `gap` seconds apart.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub name: String,
    pub gap: f64,
    pub count: usize,
}

impl Schedule {
    pub fn new(name: impl Into<String>, gap: f64, count: usize) -> Self {
        Schedule {
            name: name.into(),
            gap,
            count,
        }
    }

    pub fn span(&self) -> f64 {
        (self.count - 1) as f64 * self.gap
    }
}

impl FromStr for Schedule {
    type Err = ExperimentError;

    /// `massed:1x10` is ten events one second apart.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::BadSchedule(s.to_string());
        let (name, body) = s.split_once(':').ok_or_else(bad)?;
        let (gap, count) = body.split_once('x').ok_or_else(bad)?;
        let gap: f64 = gap.parse().map_err(|_| bad())?;
        let count: usize = count.parse().map_err(|_| bad())?;
        if name.is_empty() || !(gap > 0.0 && gap.is_finite()) || count == 0 {
            return Err(bad());
        }
        Ok(Schedule::new(name, gap, count))
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}x{}", self.name, self.gap, self.count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpacingRow {
    pub schedule: String,
    pub activation: f64,
    pub recall_prob: f64,
}

/// Event times of each schedule, aligned so all final events coincide.
pub fn aligned_times(schedules: &[Schedule]) -> (Vec<Vec<f64>>, f64) {
    let end = schedules.iter().map(Schedule::span).fold(0.0, f64::max);
    let times = schedules
        .iter()
        .map(|s| {
            let start = end - s.span();
            (0..s.count).map(|j| start + j as f64 * s.gap).collect()
        })
        .collect();
    (times, end)
}

/// Activation of one chunk per schedule, `test_delay` seconds after the
/// shared final event.
pub fn spacing(
    mode: DecayMode,
    schedules: &[Schedule],
    test_delay: f64,
    base: &Parameters,
) -> Result<Vec<SpacingRow>, ExperimentError> {
    if schedules.len() < 2 {
        return Err(ExperimentError::TooFewSchedules);
    }
    for s in schedules {
        if s.count == 0 || !(s.gap > 0.0 && s.gap.is_finite()) {
            return Err(ExperimentError::BadSchedule(s.to_string()));
        }
        if s.count != schedules[0].count {
            return Err(ExperimentError::CountMismatch(schedules[0].count, s.count));
        }
    }
    if !(test_delay > 0.0 && test_delay.is_finite()) {
        return Err(ExperimentError::NotPositive("test time"));
    }
    let mut params = base.declarative();
    params.decay_mode = mode;
    let (times, end) = aligned_times(schedules);
    let test = end + test_delay;
    let mut rows = Vec::new();
    for (s, ts) in schedules.iter().zip(times) {
        let mut memory = DeclarativeMemory::new(params.clone());
        let id = memory.add_chunk("fact", BTreeMap::new(), ts[0])?;
        for &t in &ts[1..] {
            memory.record_use(&id, t)?;
        }
        let activation = memory.base_activation(&id, test);
        rows.push(SpacingRow {
            schedule: s.name.clone(),
            activation,
            recall_prob: recall_probability_of(
                activation,
                params.recall_threshold_tau,
                params.recall_noise_s,
            ),
        });
    }
    Ok(rows)
}
