//! Context construction and learned associative strengths `s_ij`.
//!
//! `s_ij` is estimated as `ln p(N_i | C_j) - ln p(N_i)` where `N_i` is the
//! event "chunk i matched the production that fired" and `C_j` is "chunk j
//! was in the context of that firing". Both probabilities are smoothed with
//! pseudo-counts so the estimate is finite for every count state.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::declarative::DeclarativeMemory;
use crate::value::ChunkId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContextError {
    #[error("weight {weight} of `{chunk}` outside [0, 1]")]
    Weight { chunk: ChunkId, weight: f64 },
    #[error("`{0}` appears twice in the context")]
    Duplicate(ChunkId),
}

/// Context elements `j` with salience weights `w_j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Context {
    elements: Vec<(ChunkId, f64)>,
}

impl Context {
    pub fn empty() -> Self {
        Context::default()
    }

    pub fn new(elements: Vec<(ChunkId, f64)>) -> Result<Self, ContextError> {
        let mut seen = BTreeSet::new();
        for (id, w) in &elements {
            if !(0.0..=1.0).contains(w) {
                return Err(ContextError::Weight {
                    chunk: id.clone(),
                    weight: *w,
                });
            }
            if !seen.insert(id) {
                return Err(ContextError::Duplicate(id.clone()));
            }
        }
        Ok(Context { elements })
    }

    pub fn elements(&self) -> &[(ChunkId, f64)] {
        &self.elements
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, id: &ChunkId) -> bool {
        self.elements.iter().any(|(j, _)| j == id)
    }
}

/// Chunks referenced by the goal's slots plus the perceptual set, each with
/// weight `1/n`. Unknown goals yield an empty context.
pub fn build_context(
    memory: &DeclarativeMemory,
    goal: &ChunkId,
    perceptual: &BTreeSet<ChunkId>,
) -> Context {
    let mut ids: Vec<ChunkId> = Vec::new();
    if let Some(g) = memory.get(goal) {
        for r in g.references() {
            if !ids.contains(r) {
                ids.push(r.clone());
            }
        }
    }
    for p in perceptual {
        if !ids.contains(p) {
            ids.push(p.clone());
        }
    }
    let w = if ids.is_empty() {
        0.0
    } else {
        1.0 / ids.len() as f64
    };
    Context {
        elements: ids.into_iter().map(|id| (id, w)).collect(),
    }
}

/// Source of associative strengths `s_ij` (from context element j to chunk i).
pub trait Strengths {
    fn strength(&self, i: &ChunkId, j: &ChunkId) -> f64;
}

/// All strengths zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAssociations;

impl Strengths for NoAssociations {
    fn strength(&self, _: &ChunkId, _: &ChunkId) -> f64 {
        0.0
    }
}

/// Fixed table of strengths; missing pairs are 0.
#[derive(Debug, Clone, Default)]
pub struct PairStrengths(BTreeMap<(ChunkId, ChunkId), f64>);

impl PairStrengths {
    pub fn insert(&mut self, i: ChunkId, j: ChunkId, s: f64) {
        self.0.insert((i, j), s);
    }
}

impl Strengths for PairStrengths {
    fn strength(&self, i: &ChunkId, j: &ChunkId) -> f64 {
        self.0.get(&(i.clone(), j.clone())).copied().unwrap_or(0.0)
    }
}

/// Co-occurrence counts of firings, matched chunks and context elements.
#[derive(Debug, Clone, PartialEq)]
pub struct AssocStats {
    prior_a: f64,
    prior_b: f64,
    firings: u64,
    context_counts: BTreeMap<ChunkId, u64>,
    fire_totals: BTreeMap<ChunkId, u64>,
    pair_counts: BTreeMap<(ChunkId, ChunkId), u64>,
}

impl Default for AssocStats {
    fn default() -> Self {
        AssocStats::new(1.0, 1.0)
    }
}

impl AssocStats {
    /// Pseudo-counts `a` (successes) and `b` (failures) smooth both ratios.
    pub fn new(prior_a: f64, prior_b: f64) -> Self {
        AssocStats {
            prior_a,
            prior_b,
            firings: 0,
            context_counts: BTreeMap::new(),
            fire_totals: BTreeMap::new(),
            pair_counts: BTreeMap::new(),
        }
    }

    pub fn observe_firing(&mut self, matched: &BTreeSet<ChunkId>, context: &Context) {
        self.firings += 1;
        for (j, _) in context.elements() {
            *self.context_counts.entry(j.clone()).or_default() += 1;
        }
        for i in matched {
            *self.fire_totals.entry(i.clone()).or_default() += 1;
            for (j, _) in context.elements() {
                *self.pair_counts.entry((i.clone(), j.clone())).or_default() += 1;
            }
        }
    }

    pub fn firings(&self) -> u64 {
        self.firings
    }

    pub fn count_context(&self, j: &ChunkId) -> u64 {
        self.context_counts.get(j).copied().unwrap_or(0)
    }

    pub fn count_fire_total(&self, i: &ChunkId) -> u64 {
        self.fire_totals.get(i).copied().unwrap_or(0)
    }

    pub fn count_fire_with(&self, i: &ChunkId, j: &ChunkId) -> u64 {
        self.pair_counts
            .get(&(i.clone(), j.clone()))
            .copied()
            .unwrap_or(0)
    }

    pub fn strength_s(&self, i: &ChunkId, j: &ChunkId) -> f64 {
        let (a, b) = (self.prior_a, self.prior_b);
        let conditional =
            (self.count_fire_with(i, j) as f64 + a) / (self.count_context(j) as f64 + a + b);
        let marginal = (self.count_fire_total(i) as f64 + a) / (self.firings as f64 + a + b);
        conditional.ln() - marginal.ln()
    }
}

impl Strengths for AssocStats {
    fn strength(&self, i: &ChunkId, j: &ChunkId) -> f64 {
        self.strength_s(i, j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::declarative::DeclarativeParams;
    use crate::value::Value;

    fn id(s: &str) -> ChunkId {
        ChunkId::new(s)
    }

    #[test]
    fn context_from_goal_references() {
        let mut m = DeclarativeMemory::new(DeclarativeParams::default());
        let x = m.add_chunk("n", BTreeMap::new(), 0.0).unwrap();
        let y = m.add_chunk("n", BTreeMap::new(), 0.0).unwrap();
        let plain = m
            .add_chunk("goal", [("a".to_string(), Value::int(3))].into(), 0.0)
            .unwrap();
        assert!(build_context(&m, &plain, &BTreeSet::new()).is_empty());

        let g = m
            .add_chunk(
                "goal",
                [
                    ("l".to_string(), Value::Chunk(x.clone())),
                    ("r".to_string(), Value::Chunk(y.clone())),
                ]
                .into(),
                0.0,
            )
            .unwrap();
        let ctx = build_context(&m, &g, &BTreeSet::new());
        assert_eq!(ctx.elements(), &[(x.clone(), 0.5), (y.clone(), 0.5)]);

        let g1 = m
            .add_chunk(
                "goal",
                [("l".to_string(), Value::Chunk(x.clone()))].into(),
                0.0,
            )
            .unwrap();
        let ctx = build_context(&m, &g1, &[x.clone()].into());
        assert_eq!(ctx.elements(), &[(x, 1.0)]);
    }

    #[test]
    fn context_validation() {
        assert!(Context::new(vec![(id("a"), 1.5)]).is_err());
        assert!(Context::new(vec![(id("a"), 0.5), (id("a"), 0.5)]).is_err());
    }

    #[test]
    fn single_observation_counts() {
        let mut s = AssocStats::default();
        let ctx = Context::new(vec![(id("j"), 1.0)]).unwrap();
        s.observe_firing(&[id("i")].into(), &ctx);
        assert_eq!(s.firings(), 1);
        assert_eq!(s.count_context(&id("j")), 1);
        assert_eq!(s.count_fire_total(&id("i")), 1);
        assert_eq!(s.count_fire_with(&id("i"), &id("j")), 1);
    }

    #[test]
    fn ten_firings_eight_with_context() {
        let mut s = AssocStats::default();
        let with = Context::new(vec![(id("j"), 1.0)]).unwrap();
        for n in 0..10 {
            let ctx = if n < 8 {
                with.clone()
            } else {
                Context::empty()
            };
            s.observe_firing(&[id("i")].into(), &ctx);
        }
        assert_eq!(s.count_fire_with(&id("i"), &id("j")), 8);
        assert_eq!(s.count_fire_total(&id("i")), 10);
    }

    #[test]
    fn empty_context_only_touches_marginals() {
        let mut s = AssocStats::default();
        s.observe_firing(&[id("i")].into(), &Context::empty());
        assert_eq!(s.firings(), 1);
        assert_eq!(s.count_fire_total(&id("i")), 1);
        assert_eq!(s.count_context(&id("j")), 0);
        assert_eq!(s.count_fire_with(&id("i"), &id("j")), 0);
    }

    #[test]
    fn zero_observations_give_zero() {
        assert_eq!(AssocStats::default().strength_s(&id("i"), &id("j")), 0.0);
    }

    #[test]
    fn log_ratio_with_large_counts() {
        // j present in half the firings; i matched 80% of those, 0% otherwise
        let mut s = AssocStats::default();
        let with = Context::new(vec![(id("j"), 1.0)]).unwrap();
        for n in 0..100_000u32 {
            let present = n % 2 == 0;
            let i_matched = present && (n / 2) % 5 != 0;
            let matched: BTreeSet<ChunkId> = if i_matched {
                [id("i")].into()
            } else {
                [id("other")].into()
            };
            let ctx = if present {
                with.clone()
            } else {
                Context::empty()
            };
            s.observe_firing(&matched, &ctx);
        }
        // p(N_i|C_j) = 0.8, p(N_i) = 0.4
        assert!((s.strength_s(&id("i"), &id("j")) - 2f64.ln()).abs() < 1e-3);
    }
}
