//! Global constants of the theory, one field per model-file key.
//!
//! The model file's `[parameters]` section and the CLI's `--param key=value`
//! both go through [`Parameters::set`]; the per-module parameter views
//! ([`DeclarativeParams`], [`LatencyParams`], [`ConflictParams`]) are derived
//! from this flat table.

use std::fmt;

use thiserror::Error;

use crate::conflict::ConflictParams;
use crate::declarative::{DecayMode, DeclarativeParams};
use crate::procedural::LatencyParams;
use crate::utility::{RMode, UtilityStats};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid parameter `{key}`: {reason}")]
    Invalid {
        key: &'static str,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayKind {
    Constant,
    As91,
    Pa08,
}

impl DecayKind {
    fn name(self) -> &'static str {
        match self {
            DecayKind::Constant => "constant",
            DecayKind::As91 => "as91",
            DecayKind::Pa08 => "pa08",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RKind {
    Constant,
    CostDiscount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    // declarative memory
    pub decay_mode: DecayKind,
    pub decay: f64,
    pub as91_d1: f64,
    pub as91_b: f64,
    pub pa08_c: f64,
    pub pa08_alpha: f64,
    pub base_level: f64,
    pub retrieval_f: f64,
    pub retrieval_c: f64,
    pub recall_threshold: f64,
    pub recall_noise: f64,
    // procedural memory
    pub strength_b: f64,
    pub initial_strength: f64,
    pub latency_scale: f64,
    pub latency_exponent: f64,
    // conflict resolution
    pub goal_value: f64,
    pub waiting_cost: f64,
    // utility learning
    pub q_alpha: f64,
    pub q_beta: f64,
    pub cost_prior: f64,
    pub r_mode: RKind,
    pub r_value: f64,
    pub r_budget: f64,
    // associative learning
    pub assoc_prior_a: f64,
    pub assoc_prior_b: f64,
    // engine
    pub action_time: f64,
    pub start_time: f64,
    pub max_cycles: u64,
    pub strengthen_losers: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            decay_mode: DecayKind::Constant,
            decay: 0.5,
            as91_d1: 0.5,
            as91_b: 1.0,
            pa08_c: 0.217,
            pa08_alpha: 0.177,
            base_level: 0.0,
            retrieval_f: 1.0,
            retrieval_c: 0.05,
            recall_threshold: 0.0,
            recall_noise: 0.4,
            strength_b: 0.0,
            initial_strength: 0.0,
            latency_scale: 0.05,
            latency_exponent: 1.0,
            goal_value: 20.0,
            waiting_cost: 0.05,
            q_alpha: 1.0,
            q_beta: 1.0,
            cost_prior: 0.05,
            r_mode: RKind::Constant,
            r_value: 1.0,
            r_budget: 10.0,
            assoc_prior_a: 1.0,
            assoc_prior_b: 1.0,
            action_time: 0.05,
            start_time: 1.0,
            max_cycles: 1000,
            strengthen_losers: false,
        }
    }
}

/// Every recognised key, in the order the pretty-printer emits them.
pub const KEYS: &[&str] = &[
    "decay_mode",
    "decay",
    "as91_d1",
    "as91_b",
    "pa08_c",
    "pa08_alpha",
    "base_level",
    "retrieval_f",
    "retrieval_c",
    "recall_threshold",
    "recall_noise",
    "strength_b",
    "initial_strength",
    "latency_scale",
    "latency_exponent",
    "goal_value",
    "waiting_cost",
    "q_alpha",
    "q_beta",
    "cost_prior",
    "r_mode",
    "r_value",
    "r_budget",
    "assoc_prior_a",
    "assoc_prior_b",
    "action_time",
    "start_time",
    "max_cycles",
    "strengthen_losers",
];

fn bad(key: &str, value: &str, reason: impl Into<String>) -> ParamError {
    ParamError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn real(key: &str, value: &str) -> Result<f64, ParamError> {
    let v: f64 = value
        .parse()
        .map_err(|_| bad(key, value, "expected a number"))?;
    if !v.is_finite() {
        return Err(bad(key, value, "must be finite"));
    }
    Ok(v)
}

impl Parameters {
    /// Assign one key from its textual value. Range checks happen in
    /// [`Parameters::validate`] so that assignment order never matters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        let value = value.trim();
        match key {
            "decay_mode" => {
                self.decay_mode = match value {
                    "constant" => DecayKind::Constant,
                    "as91" => DecayKind::As91,
                    "pa08" => DecayKind::Pa08,
                    _ => return Err(bad(key, value, "expected constant, as91 or pa08")),
                }
            }
            "r_mode" => {
                self.r_mode = match value {
                    "constant" => RKind::Constant,
                    "cost-discount" => RKind::CostDiscount,
                    _ => return Err(bad(key, value, "expected constant or cost-discount")),
                }
            }
            "max_cycles" => {
                self.max_cycles = value
                    .parse()
                    .map_err(|_| bad(key, value, "expected a non-negative integer"))?
            }
            "strengthen_losers" => {
                self.strengthen_losers = value
                    .parse()
                    .map_err(|_| bad(key, value, "expected true or false"))?
            }
            _ => {
                let slot = self
                    .real_slot(key)
                    .ok_or_else(|| ParamError::UnknownKey(key.to_string()))?;
                *slot = real(key, value)?;
            }
        }
        Ok(())
    }

    /// Apply a `key=value` assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<(), ParamError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| bad(assignment, "", "expected key=value"))?;
        self.set(k.trim(), v)
    }

    fn real_slot(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "decay" => &mut self.decay,
            "as91_d1" => &mut self.as91_d1,
            "as91_b" => &mut self.as91_b,
            "pa08_c" => &mut self.pa08_c,
            "pa08_alpha" => &mut self.pa08_alpha,
            "base_level" => &mut self.base_level,
            "retrieval_f" => &mut self.retrieval_f,
            "retrieval_c" => &mut self.retrieval_c,
            "recall_threshold" => &mut self.recall_threshold,
            "recall_noise" => &mut self.recall_noise,
            "strength_b" => &mut self.strength_b,
            "initial_strength" => &mut self.initial_strength,
            "latency_scale" => &mut self.latency_scale,
            "latency_exponent" => &mut self.latency_exponent,
            "goal_value" => &mut self.goal_value,
            "waiting_cost" => &mut self.waiting_cost,
            "q_alpha" => &mut self.q_alpha,
            "q_beta" => &mut self.q_beta,
            "cost_prior" => &mut self.cost_prior,
            "r_value" => &mut self.r_value,
            "r_budget" => &mut self.r_budget,
            "assoc_prior_a" => &mut self.assoc_prior_a,
            "assoc_prior_b" => &mut self.assoc_prior_b,
            "action_time" => &mut self.action_time,
            "start_time" => &mut self.start_time,
            _ => return None,
        })
    }

    /// Textual value of a key, as accepted by [`Parameters::set`].
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "decay_mode" => self.decay_mode.name().to_string(),
            "r_mode" => match self.r_mode {
                RKind::Constant => "constant".to_string(),
                RKind::CostDiscount => "cost-discount".to_string(),
            },
            "max_cycles" => self.max_cycles.to_string(),
            "strengthen_losers" => self.strengthen_losers.to_string(),
            _ => {
                let mut copy = self.clone();
                let v = *copy.real_slot(key)?;
                format!("{v:?}")
            }
        })
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        fn check(ok: bool, key: &'static str, reason: &'static str) -> Result<(), ParamError> {
            if ok {
                Ok(())
            } else {
                Err(ParamError::Invalid { key, reason })
            }
        }
        let unit = |x: f64| x > 0.0 && x < 1.0;
        check(unit(self.decay), "decay", "must lie in (0, 1)")?;
        check(unit(self.as91_d1), "as91_d1", "must lie in (0, 1)")?;
        check(self.as91_b > 0.0, "as91_b", "must be positive")?;
        check(self.pa08_c >= 0.0, "pa08_c", "must be non-negative")?;
        check(unit(self.pa08_alpha), "pa08_alpha", "must lie in (0, 1)")?;
        check(self.retrieval_f > 0.0, "retrieval_f", "must be positive")?;
        check(
            self.retrieval_c >= 0.0,
            "retrieval_c",
            "must be non-negative",
        )?;
        check(self.recall_noise > 0.0, "recall_noise", "must be positive")?;
        check(
            self.latency_scale > 0.0,
            "latency_scale",
            "must be positive",
        )?;
        check(
            self.latency_exponent > 0.0,
            "latency_exponent",
            "must be positive",
        )?;
        check(self.goal_value > 0.0, "goal_value", "must be positive")?;
        check(
            self.waiting_cost >= 0.0,
            "waiting_cost",
            "must be non-negative",
        )?;
        check(self.q_alpha > 0.0, "q_alpha", "must be positive")?;
        check(self.q_beta > 0.0, "q_beta", "must be positive")?;
        check(self.cost_prior >= 0.0, "cost_prior", "must be non-negative")?;
        check(
            (0.0..=1.0).contains(&self.r_value),
            "r_value",
            "must lie in [0, 1]",
        )?;
        check(self.r_budget > 0.0, "r_budget", "must be positive")?;
        check(
            self.assoc_prior_a > 0.0,
            "assoc_prior_a",
            "must be positive",
        )?;
        check(
            self.assoc_prior_b > 0.0,
            "assoc_prior_b",
            "must be positive",
        )?;
        check(
            self.action_time >= 0.0,
            "action_time",
            "must be non-negative",
        )?;
        check(self.start_time >= 0.0, "start_time", "must be non-negative")?;
        check(self.max_cycles > 0, "max_cycles", "must be positive")?;
        Ok(())
    }

    pub fn decay_mode(&self) -> DecayMode {
        match self.decay_mode {
            DecayKind::Constant => DecayMode::Constant { d: self.decay },
            DecayKind::As91 => DecayMode::SpacingAs91 {
                d1: self.as91_d1,
                b: self.as91_b,
            },
            DecayKind::Pa08 => DecayMode::SpacingPa08 {
                c: self.pa08_c,
                alpha: self.pa08_alpha,
            },
        }
    }

    pub fn declarative(&self) -> DeclarativeParams {
        DeclarativeParams {
            decay_mode: self.decay_mode(),
            base_b: self.base_level,
            retrieval_f: self.retrieval_f,
            retrieval_c: self.retrieval_c,
            recall_threshold_tau: self.recall_threshold,
            recall_noise_s: self.recall_noise,
        }
    }

    pub fn latency(&self) -> LatencyParams {
        LatencyParams {
            latency_b: self.latency_scale,
            exponent_b: self.latency_exponent,
        }
    }

    pub fn conflict(&self) -> ConflictParams {
        ConflictParams {
            goal_value_g: self.goal_value,
            waiting_cost_tau: self.waiting_cost,
        }
    }

    pub fn fresh_utility(&self) -> UtilityStats {
        let r_mode = match self.r_mode {
            RKind::Constant => RMode::Constant(self.r_value),
            RKind::CostDiscount => RMode::CostDiscount {
                budget: self.r_budget,
            },
        };
        UtilityStats::new(self.q_alpha, self.q_beta, self.cost_prior, r_mode)
    }
}

/// `key = value` lines for every key, in [`KEYS`] order.
impl fmt::Display for Parameters {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for key in KEYS {
            writeln!(f, "{key} = {}", self.get(key).expect("known key"))?;
        }
        Ok(())
    }
}
