//! Declarative memory: chunks, their usage histories, and the activation
//! quantities derived from them.
//!
//! Base activation follows the power-law trace sum
//!
//! ```text
//! B(t) = ln Σ_k (t - t_k)^(-d_k) + B
//! ```
//!
//! where each usage event `k` carries its own decay `d_k`, fixed when the
//! event is recorded under the active [`DecayMode`]. Total activation adds
//! the context-weighted associative strengths, `A = B + Σ_j w_j s_ij`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::association::{Context, Strengths};
use crate::value::{ChunkId, Value};

/// How the decay of a new usage event is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecayMode {
    /// Every event decays at the same rate `d`.
    Constant { d: f64 },
    /// `d_k = max(d1, b * gap^(-d1))` where `gap` is the (positive) interval
    /// since the previous event; the first event decays at `d1`.
    SpacingAs91 { d1: f64, b: f64 },
    /// `d_k = c * e^(m) + alpha` where `m` is the chunk's activation just
    /// before the event (`-inf` for the first event, giving `alpha`).
    SpacingPa08 { c: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageEvent {
    /// Absolute simulation time in seconds.
    pub time: f64,
    pub decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeclarativeParams {
    pub decay_mode: DecayMode,
    pub base_b: f64,
    pub retrieval_f: f64,
    pub retrieval_c: f64,
    pub recall_threshold_tau: f64,
    pub recall_noise_s: f64,
}

impl Default for DeclarativeParams {
    fn default() -> Self {
        DeclarativeParams {
            decay_mode: DecayMode::Constant { d: 0.5 },
            base_b: 0.0,
            retrieval_f: 1.0,
            retrieval_c: 0.05,
            recall_threshold_tau: 0.0,
            recall_noise_s: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub id: ChunkId,
    pub kind: String,
    pub slots: BTreeMap<String, Value>,
    pub creation_time: f64,
    pub events: Vec<UsageEvent>,
}

impl Chunk {
    /// Chunks this chunk refers to through its slots.
    pub fn references(&self) -> impl Iterator<Item = &ChunkId> {
        self.slots.values().filter_map(Value::as_chunk)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeclarativeError {
    #[error("slot `{slot}` refers to unknown chunk `{target}`")]
    DanglingReference { slot: String, target: ChunkId },
    #[error("unknown chunk `{0}`")]
    UnknownChunk(ChunkId),
    #[error("chunk `{0}` already exists")]
    DuplicateChunk(ChunkId),
    #[error("use of `{chunk}` at t={now} precedes its last event at t={last}")]
    Ordering { chunk: ChunkId, last: f64, now: f64 },
    #[error("time must be finite and non-negative, got {0}")]
    BadTime(f64),
}

/// `ln Σ_k (now - t_k)^(-d_k) + base`, skipping events whose age is not
/// strictly positive. `-inf` when nothing contributes.
pub fn base_level(events: &[UsageEvent], now: f64, base: f64) -> f64 {
    let sum: f64 = events
        .iter()
        .filter(|e| now > e.time)
        .map(|e| (now - e.time).powf(-e.decay))
        .sum();
    if sum > 0.0 {
        sum.ln() + base
    } else {
        f64::NEG_INFINITY
    }
}

/// Logistic recall probability `1 / (1 + e^(-(A - tau)/s))`.
pub fn recall_probability_of(activation: f64, tau: f64, s: f64) -> f64 {
    if activation == f64::NEG_INFINITY {
        return 0.0;
    }
    1.0 / (1.0 + (-(activation - tau) / s).exp())
}

/// Retrieval latency `F e^(-A) + C`; infinite for an unrecallable chunk.
pub fn retrieval_latency_of(activation: f64, f: f64, c: f64) -> f64 {
    f * (-activation).exp() + c
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeclarativeMemory {
    params: DeclarativeParams,
    chunks: BTreeMap<ChunkId, Chunk>,
    serial: u64,
}

impl DeclarativeMemory {
    pub fn new(params: DeclarativeParams) -> Self {
        DeclarativeMemory {
            params,
            chunks: BTreeMap::new(),
            serial: 0,
        }
    }

    pub fn params(&self) -> &DeclarativeParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, id: &ChunkId) -> Option<&Chunk> {
        self.chunks.get(id)
    }

    pub fn contains(&self, id: &ChunkId) -> bool {
        self.chunks.contains_key(id)
    }

    fn chunk(&self, id: &ChunkId) -> Result<&Chunk, DeclarativeError> {
        self.chunks
            .get(id)
            .ok_or_else(|| DeclarativeError::UnknownChunk(id.clone()))
    }

    /// All chunks in id order.
    pub fn chunks(&self) -> impl Iterator<Item = &Chunk> {
        self.chunks.values()
    }

    pub fn chunks_of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a Chunk> + 'a {
        self.chunks.values().filter(move |c| c.kind == kind)
    }

    /// A chunk with exactly this kind and slot content, if one exists.
    pub fn find_identical(&self, kind: &str, slots: &BTreeMap<String, Value>) -> Option<&ChunkId> {
        self.chunks
            .values()
            .find(|c| c.kind == kind && &c.slots == slots)
            .map(|c| &c.id)
    }

    fn check_refs(&self, slots: &BTreeMap<String, Value>) -> Result<(), DeclarativeError> {
        for (slot, v) in slots {
            if let Value::Chunk(target) = v {
                if !self.chunks.contains_key(target) {
                    return Err(DeclarativeError::DanglingReference {
                        slot: slot.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    fn fresh_id(&mut self, kind: &str) -> ChunkId {
        loop {
            self.serial += 1;
            let id = ChunkId::new(format!("{kind}.{}", self.serial));
            if !self.chunks.contains_key(&id) {
                return id;
            }
        }
    }

    /// Store a new chunk under a generated `kind.N` id. Creation counts as
    /// the chunk's first usage event.
    pub fn add_chunk(
        &mut self,
        kind: &str,
        slots: BTreeMap<String, Value>,
        now: f64,
    ) -> Result<ChunkId, DeclarativeError> {
        let id = self.fresh_id(kind);
        self.insert_chunk(id, kind, slots, now)
    }

    /// Store a new chunk under a caller-chosen id.
    pub fn insert_chunk(
        &mut self,
        id: ChunkId,
        kind: &str,
        slots: BTreeMap<String, Value>,
        now: f64,
    ) -> Result<ChunkId, DeclarativeError> {
        if !(now.is_finite() && now >= 0.0) {
            return Err(DeclarativeError::BadTime(now));
        }
        if self.chunks.contains_key(&id) {
            return Err(DeclarativeError::DuplicateChunk(id));
        }
        self.check_refs(&slots)?;
        let decay = self.decay_for(&[], now);
        self.chunks.insert(
            id.clone(),
            Chunk {
                id: id.clone(),
                kind: kind.to_string(),
                slots,
                creation_time: now,
                events: vec![UsageEvent { time: now, decay }],
            },
        );
        Ok(id)
    }

    /// Insert several chunks that may refer to each other (model loading).
    pub fn insert_all(
        &mut self,
        chunks: impl IntoIterator<Item = (ChunkId, String, BTreeMap<String, Value>)>,
        now: f64,
    ) -> Result<(), DeclarativeError> {
        let chunks: Vec<_> = chunks.into_iter().collect();
        let names: BTreeSet<&ChunkId> = chunks.iter().map(|(id, _, _)| id).collect();
        for (_, _, slots) in &chunks {
            for (slot, v) in slots {
                if let Value::Chunk(t) = v {
                    if !names.contains(t) && !self.chunks.contains_key(t) {
                        return Err(DeclarativeError::DanglingReference {
                            slot: slot.clone(),
                            target: t.clone(),
                        });
                    }
                }
            }
        }
        for (id, kind, slots) in chunks {
            if self.chunks.contains_key(&id) {
                return Err(DeclarativeError::DuplicateChunk(id));
            }
            let decay = self.decay_for(&[], now);
            self.chunks.insert(
                id.clone(),
                Chunk {
                    id,
                    kind,
                    slots,
                    creation_time: now,
                    events: vec![UsageEvent { time: now, decay }],
                },
            );
        }
        Ok(())
    }

    fn decay_for(&self, history: &[UsageEvent], now: f64) -> f64 {
        match self.params.decay_mode {
            DecayMode::Constant { d } => d,
            DecayMode::SpacingAs91 { d1, b } => match history.last() {
                None => d1,
                Some(prev) => d1.max(b * (now - prev.time).powf(-d1)),
            },
            DecayMode::SpacingPa08 { c, alpha } => {
                let m = base_level(history, now, self.params.base_b);
                c * m.exp() + alpha
            }
        }
    }

    /// Append a usage event at `now`. A second use at the same instant as
    /// the last event is folded into that event, which is returned.
    pub fn record_use(&mut self, id: &ChunkId, now: f64) -> Result<UsageEvent, DeclarativeError> {
        let chunk = self.chunk(id)?;
        let last = *chunk
            .events
            .last()
            .expect("chunks always hold their creation event");
        if !now.is_finite() || now < last.time {
            return Err(DeclarativeError::Ordering {
                chunk: id.clone(),
                last: last.time,
                now,
            });
        }
        if now == last.time {
            return Ok(last);
        }
        let event = UsageEvent {
            time: now,
            decay: self.decay_for(&chunk.events, now),
        };
        self.chunks
            .get_mut(id)
            .expect("checked above")
            .events
            .push(event);
        Ok(event)
    }

    pub fn set_slot(
        &mut self,
        id: &ChunkId,
        slot: &str,
        value: Value,
    ) -> Result<(), DeclarativeError> {
        if let Value::Chunk(target) = &value {
            if !self.chunks.contains_key(target) {
                return Err(DeclarativeError::DanglingReference {
                    slot: slot.to_string(),
                    target: target.clone(),
                });
            }
        }
        let chunk = self
            .chunks
            .get_mut(id)
            .ok_or_else(|| DeclarativeError::UnknownChunk(id.clone()))?;
        chunk.slots.insert(slot.to_string(), value);
        Ok(())
    }

    /// `-inf` for unknown chunks and for chunks with no event strictly in the past.
    pub fn base_activation(&self, id: &ChunkId, now: f64) -> f64 {
        match self.chunks.get(id) {
            Some(c) => base_level(&c.events, now, self.params.base_b),
            None => f64::NEG_INFINITY,
        }
    }

    pub fn activation(
        &self,
        id: &ChunkId,
        context: &Context,
        strengths: &dyn Strengths,
        now: f64,
    ) -> f64 {
        let base = self.base_activation(id, now);
        let assoc: f64 = context
            .elements()
            .iter()
            .map(|(j, w)| w * strengths.strength(id, j))
            .sum();
        base + assoc
    }

    pub fn recall_probability(
        &self,
        id: &ChunkId,
        context: &Context,
        strengths: &dyn Strengths,
        now: f64,
    ) -> f64 {
        recall_probability_of(
            self.activation(id, context, strengths, now),
            self.params.recall_threshold_tau,
            self.params.recall_noise_s,
        )
    }

    pub fn retrieval_latency(
        &self,
        id: &ChunkId,
        context: &Context,
        strengths: &dyn Strengths,
        now: f64,
    ) -> f64 {
        retrieval_latency_of(
            self.activation(id, context, strengths, now),
            self.params.retrieval_f,
            self.params.retrieval_c,
        )
    }
}
