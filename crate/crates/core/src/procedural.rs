//! Production rules and the matcher.
//!
//! A rule's conditions are evaluated in a fixed order:
//!
//! 1. positive patterns, the first one against the current goal chunk and
//!    the rest against every chunk in declarative memory (unification with
//!    variable bindings; a chunk may satisfy more than one pattern);
//! 2. guards, in order; `?v = expr` binds `?v` when it is still unbound;
//! 3. negated patterns (`unless`), which fail the instantiation if any chunk
//!    matches them under the final bindings.
//!
//! Matching is exhaustive every cycle. Results are sorted by production
//! index, then bindings, then the matched chunk tuple.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::association::{Context, Strengths};
use crate::declarative::{base_level, Chunk, DeclarativeMemory, UsageEvent};
use crate::utility::UtilityStats;
use crate::value::{compare, Bindings, ChunkId, CmpOp, Expr, Value, Var};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SlotTest {
    Const(Value),
    Var(Var),
    Wildcard,
}

impl fmt::Display for SlotTest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SlotTest::Const(v) => write!(f, "{v}"),
            SlotTest::Var(v) => write!(f, "?{v}"),
            SlotTest::Wildcard => f.write_str("_"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Pattern {
    /// Variable bound to the matched chunk itself.
    pub binder: Option<Var>,
    pub kind: String,
    pub slots: Vec<(String, SlotTest)>,
}

impl Pattern {
    pub fn new(kind: impl Into<String>) -> Self {
        Pattern {
            binder: None,
            kind: kind.into(),
            slots: Vec::new(),
        }
    }

    pub fn bind(mut self, var: impl Into<String>) -> Self {
        self.binder = Some(var.into());
        self
    }

    pub fn slot(mut self, name: impl Into<String>, test: SlotTest) -> Self {
        self.slots.push((name.into(), test));
        self
    }

    /// Variables mentioned, binder first.
    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.binder
            .as_deref()
            .into_iter()
            .chain(self.slots.iter().filter_map(|(_, t)| match t {
                SlotTest::Var(v) => Some(v.as_str()),
                _ => None,
            }))
    }

    /// Unify against one chunk, extending `bindings`. A missing slot fails
    /// every test, including the wildcard.
    pub fn unify(&self, chunk: &Chunk, bindings: &mut Bindings) -> bool {
        if chunk.kind != self.kind {
            return false;
        }
        if let Some(b) = &self.binder {
            if !bind(bindings, b, Value::Chunk(chunk.id.clone())) {
                return false;
            }
        }
        for (slot, test) in &self.slots {
            let Some(value) = chunk.slots.get(slot) else {
                return false;
            };
            let ok = match test {
                SlotTest::Wildcard => true,
                SlotTest::Const(c) => c == value,
                SlotTest::Var(v) => bind(bindings, v, value.clone()),
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

fn bind(bindings: &mut Bindings, var: &str, value: Value) -> bool {
    match bindings.get(var) {
        Some(existing) => *existing == value,
        None => {
            bindings.insert(var.to_string(), value);
            true
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(b) = &self.binder {
            write!(f, "?{b} ")?;
        }
        f.write_str(&self.kind)?;
        for (slot, test) in &self.slots {
            write!(f, " {slot}={test}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Guard {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

impl Guard {
    pub fn new(lhs: Expr, op: CmpOp, rhs: Expr) -> Self {
        Guard { lhs, op, rhs }
    }

    /// Evaluate under `bindings`; an `=` guard with an unbound left-hand
    /// variable binds it. Evaluation errors count as a failed guard.
    pub fn apply(&self, bindings: &mut Bindings) -> bool {
        if self.op == CmpOp::Assign {
            if let Expr::Var(v) = &self.lhs {
                if !bindings.contains_key(v) {
                    return match self.rhs.eval(bindings) {
                        Ok(value) => {
                            bindings.insert(v.clone(), value);
                            true
                        }
                        Err(_) => false,
                    };
                }
            }
        }
        match (self.lhs.eval(bindings), self.rhs.eval(bindings)) {
            (Ok(a), Ok(b)) => compare(self.op, &a, &b).unwrap_or(false),
            _ => false,
        }
    }

    /// The variable this guard may bind.
    pub fn assigned_var(&self) -> Option<&str> {
        match (&self.lhs, self.op) {
            (Expr::Var(v), CmpOp::Assign) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.lhs, self.op.symbol(), self.rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    /// Create a goal chunk and push it on the goal stack.
    Push {
        binder: Option<Var>,
        kind: String,
        slots: Vec<(String, Expr)>,
    },
    /// Pop the current goal, marking it achieved.
    Pop,
    /// Pop the current goal, marking it failed.
    Fail,
    /// Create a chunk, or reuse an identical existing one.
    Write {
        binder: Option<Var>,
        kind: String,
        slots: Vec<(String, Expr)>,
    },
    /// Overwrite slots of the chunk bound to `target`.
    Set {
        target: Var,
        slots: Vec<(String, Expr)>,
    },
    /// Act on the external environment.
    Emit {
        verb: String,
        args: Vec<(String, Expr)>,
    },
}

impl Action {
    pub fn pops(&self) -> bool {
        matches!(self, Action::Pop | Action::Fail)
    }

    pub fn binder(&self) -> Option<&str> {
        match self {
            Action::Push { binder, .. } | Action::Write { binder, .. } => binder.as_deref(),
            _ => None,
        }
    }

    pub fn templates(&self) -> &[(String, Expr)] {
        match self {
            Action::Push { slots, .. }
            | Action::Write { slots, .. }
            | Action::Set { slots, .. } => slots,
            Action::Emit { args, .. } => args,
            Action::Pop | Action::Fail => &[],
        }
    }
}

fn fmt_templates(f: &mut fmt::Formatter<'_>, slots: &[(String, Expr)]) -> fmt::Result {
    for (k, e) in slots {
        write!(f, " {k}={}", e.slot_form())?;
    }
    Ok(())
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Push {
                binder,
                kind,
                slots,
            }
            | Action::Write {
                binder,
                kind,
                slots,
            } => {
                let verb = if matches!(self, Action::Push { .. }) {
                    "push"
                } else {
                    "write"
                };
                f.write_str(verb)?;
                if let Some(b) = binder {
                    write!(f, " ?{b}")?;
                }
                write!(f, " {kind}")?;
                fmt_templates(f, slots)
            }
            Action::Pop => f.write_str("pop"),
            Action::Fail => f.write_str("fail"),
            Action::Set { target, slots } => {
                write!(f, "set ?{target}")?;
                fmt_templates(f, slots)
            }
            Action::Emit { verb, args } => {
                write!(f, "emit {verb}")?;
                fmt_templates(f, args)
            }
        }
    }
}

/// The static definition of a production, as written in a model file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Rule {
    pub name: String,
    /// Positive patterns; the first matches the goal chunk.
    pub conditions: Vec<Pattern>,
    pub guards: Vec<Guard>,
    pub negations: Vec<Pattern>,
    pub actions: Vec<Action>,
}

impl Rule {
    /// Candidate bindings for this rule with `goal` on top of the stack.
    pub fn instantiate(
        &self,
        goal: &ChunkId,
        memory: &DeclarativeMemory,
    ) -> Vec<(Bindings, Vec<ChunkId>)> {
        let mut out = Vec::new();
        let Some(goal_chunk) = memory.get(goal) else {
            return out;
        };
        if self.conditions.is_empty() {
            return out;
        }
        let mut tuple = Vec::with_capacity(self.conditions.len());
        self.search(0, goal_chunk, memory, Bindings::new(), &mut tuple, &mut out);
        out
    }

    fn search(
        &self,
        idx: usize,
        goal: &Chunk,
        memory: &DeclarativeMemory,
        bindings: Bindings,
        tuple: &mut Vec<ChunkId>,
        out: &mut Vec<(Bindings, Vec<ChunkId>)>,
    ) {
        if idx == self.conditions.len() {
            let mut b = bindings;
            if self.guards.iter().all(|g| g.apply(&mut b)) && !self.negated(memory, &b) {
                out.push((b, tuple.clone()));
            }
            return;
        }
        let pattern = &self.conditions[idx];
        let candidates: Box<dyn Iterator<Item = &Chunk>> = if idx == 0 {
            Box::new(std::iter::once(goal))
        } else {
            Box::new(memory.chunks_of_kind(&pattern.kind))
        };
        for chunk in candidates {
            let mut b = bindings.clone();
            if pattern.unify(chunk, &mut b) {
                tuple.push(chunk.id.clone());
                self.search(idx + 1, goal, memory, b, tuple, out);
                tuple.pop();
            }
        }
    }

    fn negated(&self, memory: &DeclarativeMemory, bindings: &Bindings) -> bool {
        self.negations.iter().any(|n| {
            memory.chunks_of_kind(&n.kind).any(|c| {
                let mut b = bindings.clone();
                n.unify(c, &mut b)
            })
        })
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rule {}", self.name)?;
        for p in &self.conditions {
            writeln!(f, "  if {p}")?;
        }
        for g in &self.guards {
            writeln!(f, "  guard {g}")?;
        }
        for n in &self.negations {
            writeln!(f, "  unless {n}")?;
        }
        for a in &self.actions {
            writeln!(f, "  then {a}")?;
        }
        write!(f, "end")
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProceduralError {
    #[error("firing of `{name}` at t={now} precedes its last firing at t={last}")]
    Ordering { name: String, last: f64, now: f64 },
}

/// A rule together with its learned state.
#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub rule: Rule,
    pub fire_events: Vec<UsageEvent>,
    pub utility: UtilityStats,
    pub strength_b: f64,
    /// Strength used until the first firing.
    pub initial_strength: f64,
}

impl Production {
    pub fn new(rule: Rule, utility: UtilityStats, strength_b: f64, initial_strength: f64) -> Self {
        Production {
            rule,
            fire_events: Vec::new(),
            utility,
            strength_b,
            initial_strength,
        }
    }

    pub fn name(&self) -> &str {
        &self.rule.name
    }

    /// `S(t) = ln Σ_k (t - t_k)^(-d) + B` over firings; the initial strength
    /// while the production has never fired.
    pub fn strength(&self, now: f64) -> f64 {
        if self.fire_events.is_empty() {
            return self.initial_strength;
        }
        base_level(&self.fire_events, now, self.strength_b)
    }

    /// Same-instant repeats fold into one event.
    pub fn record_fire(&mut self, decay: f64, now: f64) -> Result<(), ProceduralError> {
        if let Some(last) = self.fire_events.last() {
            if now.is_nan() || now < last.time {
                return Err(ProceduralError::Ordering {
                    name: self.rule.name.clone(),
                    last: last.time,
                    now,
                });
            }
            if now == last.time {
                return Ok(());
            }
        }
        self.fire_events.push(UsageEvent { time: now, decay });
        Ok(())
    }
}

/// Constants of the match-latency sum `Σ_i B e^(-b (A_i + S))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyParams {
    /// Scale `B`, in seconds.
    pub latency_b: f64,
    /// Exponent `b`.
    pub exponent_b: f64,
}

impl Default for LatencyParams {
    fn default() -> Self {
        LatencyParams {
            latency_b: 0.05,
            exponent_b: 1.0,
        }
    }
}

/// A production matched with particular bindings.
#[derive(Debug, Clone, PartialEq)]
pub struct Instantiation {
    /// Index of the production in the engine's production list.
    pub production: usize,
    pub name: String,
    pub bindings: Bindings,
    /// Chunks matched by the positive patterns, in pattern order.
    pub matched: Vec<ChunkId>,
    pub available_time: f64,
    pub match_time: f64,
}

impl Instantiation {
    pub fn matched_set(&self) -> BTreeSet<ChunkId> {
        self.matched.iter().cloned().collect()
    }
}

/// `Σ_i B e^(-b (A_i + S))` over the distinct matched chunks; `+inf` when
/// any chunk is unreachable, `0` when nothing was matched.
pub fn match_latency(
    activations: impl IntoIterator<Item = f64>,
    strength: f64,
    params: &LatencyParams,
) -> f64 {
    activations
        .into_iter()
        .map(|a| params.latency_b * (-params.exponent_b * (a + strength)).exp())
        .sum()
}

/// Everything the matcher reads besides the rules themselves.
pub struct MatchEnv<'a> {
    pub memory: &'a DeclarativeMemory,
    pub context: &'a Context,
    pub strengths: &'a dyn Strengths,
    pub latency: LatencyParams,
}

/// Every instantiation of every production against `goal`, each stamped
/// with `match_time = now + latency`.
pub fn match_productions(
    goal: &ChunkId,
    productions: &[Production],
    env: &MatchEnv<'_>,
    now: f64,
) -> Vec<Instantiation> {
    let mut out = Vec::new();
    for (idx, prod) in productions.iter().enumerate() {
        let mut found = prod.rule.instantiate(goal, env.memory);
        found.sort();
        let strength = prod.strength(now);
        for (bindings, matched) in found {
            let distinct: BTreeSet<&ChunkId> = matched.iter().collect();
            let latency = match_latency(
                distinct
                    .iter()
                    .map(|c| env.memory.activation(c, env.context, env.strengths, now)),
                strength,
                &env.latency,
            );
            out.push(Instantiation {
                production: idx,
                name: prod.rule.name.clone(),
                bindings,
                matched,
                available_time: now,
                match_time: now + latency,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::NoAssociations;
    use crate::declarative::DeclarativeParams;
    use crate::value::{parse_comparison, BinOp};
    use std::collections::BTreeMap;

    fn var(v: &str) -> SlotTest {
        SlotTest::Var(v.into())
    }

    fn guard(text: &str) -> Guard {
        let (l, op, r) = parse_comparison(text).unwrap();
        Guard::new(l, op, r)
    }

    fn column_memory(top: i64, bottom: i64) -> (DeclarativeMemory, ChunkId) {
        let mut m = DeclarativeMemory::new(DeclarativeParams::default());
        let mut chunk = |id: &str, kind: &str, slots: Vec<(&str, Value)>| {
            let s: BTreeMap<String, Value> =
                slots.into_iter().map(|(k, v)| (k.into(), v)).collect();
            m.insert_chunk(ChunkId::new(id), kind, s, 0.0).unwrap()
        };
        chunk(
            "ctr",
            "counter",
            vec![("k", Value::int(1)), ("carry", Value::int(0))],
        );
        chunk(
            "col1",
            "column",
            vec![
                ("index", Value::int(1)),
                ("top", Value::int(top)),
                ("bottom", Value::int(bottom)),
            ],
        );
        let g = chunk(
            "pc1",
            "process-column",
            vec![("index", Value::int(1)), ("counter", Value::chunk("ctr"))],
        );
        (m, g)
    }

    fn column_rule(name: &str, test: &str) -> Rule {
        Rule {
            name: name.into(),
            conditions: vec![
                Pattern::new("process-column")
                    .slot("index", var("k"))
                    .slot("counter", var("ctr")),
                Pattern::new("counter").bind("ctr").slot("carry", var("c")),
                Pattern::new("column")
                    .slot("index", var("k"))
                    .slot("top", var("x"))
                    .slot("bottom", var("y")),
            ],
            guards: vec![guard("?z = ?x + ?y + ?c"), guard(test)],
            negations: vec![],
            actions: vec![Action::Pop],
        }
    }

    #[test]
    fn column_guard_split() {
        let (m, g) = column_memory(6, 3);
        let p4 = column_rule("P4", "?z < 10");
        let p5 = column_rule("P5", "?z >= 10");
        let found = p4.instantiate(&g, &m);
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].0["z"], Value::int(9));
        assert!(p5.instantiate(&g, &m).is_empty());
        let (m, g) = column_memory(6, 7);
        assert!(p4.instantiate(&g, &m).is_empty());
        assert_eq!(p5.instantiate(&g, &m)[0].0["z"], Value::int(13));
    }

    #[test]
    fn negation_blocks() {
        let (m, g) = column_memory(6, 3);
        let mut r = Rule {
            name: "last".into(),
            conditions: vec![Pattern::new("process-column").slot("index", var("k"))],
            guards: vec![guard("?n = ?k + 1")],
            negations: vec![Pattern::new("column").slot("index", var("n"))],
            actions: vec![],
        };
        assert_eq!(r.instantiate(&g, &m).len(), 1);
        r.guards = vec![guard("?n = ?k")];
        assert!(r.instantiate(&g, &m).is_empty());
    }

    #[test]
    fn empty_production_set() {
        let (m, g) = column_memory(6, 3);
        let env = MatchEnv {
            memory: &m,
            context: &Context::empty(),
            strengths: &NoAssociations,
            latency: LatencyParams::default(),
        };
        assert!(match_productions(&g, &[], &env, 1.0).is_empty());
    }

    #[test]
    fn repeated_variable_must_agree() {
        let (m, g) = column_memory(6, 6);
        let r = Rule {
            name: "same".into(),
            conditions: vec![
                Pattern::new("process-column"),
                Pattern::new("column")
                    .slot("top", var("x"))
                    .slot("bottom", var("x")),
            ],
            guards: vec![],
            negations: vec![],
            actions: vec![],
        };
        assert_eq!(r.instantiate(&g, &m).len(), 1);
        let (m, g) = column_memory(6, 3);
        assert!(r.instantiate(&g, &m).is_empty());
    }

    #[test]
    fn strength_points() {
        let mut p = Production::new(
            Rule {
                name: "p".into(),
                conditions: vec![],
                guards: vec![],
                negations: vec![],
                actions: vec![],
            },
            UtilityStats::default(),
            0.0,
            0.25,
        );
        assert_eq!(p.strength(3.0), 0.25);
        p.record_fire(0.5, 0.0).unwrap();
        assert_eq!(p.strength(1.0), 0.0);
        let one = p.strength(4.0);
        p.record_fire(0.5, 3.0).unwrap();
        let two = p.strength(4.0);
        assert!((two - 1.5f64.ln()).abs() < 1e-12);
        assert!(two > one);
        assert!(matches!(
            p.record_fire(0.5, 2.0),
            Err(ProceduralError::Ordering { .. })
        ));
    }

    #[test]
    fn latency_points() {
        let lp = LatencyParams {
            latency_b: 1.0,
            exponent_b: 1.0,
        };
        assert_eq!(match_latency([0.0], 0.0, &lp), 1.0);
        assert!((match_latency([0.0, 2f64.ln()], 0.0, &lp) - 1.5).abs() < 1e-12);
        assert_eq!(
            match_latency([0.0, f64::NEG_INFINITY], 0.0, &lp),
            f64::INFINITY
        );
        assert_eq!(match_latency([], 0.0, &lp), 0.0);
    }

    #[test]
    fn display_forms() {
        let r = Rule {
            name: "P".into(),
            conditions: vec![Pattern::new("goal")
                .bind("g")
                .slot("x", var("x"))
                .slot("y", SlotTest::Wildcard)],
            guards: vec![guard("?x >= 10")],
            negations: vec![],
            actions: vec![Action::Emit {
                verb: "write".into(),
                args: vec![(
                    "digit".into(),
                    Expr::bin(BinOp::Sub, Expr::var("x"), Expr::num(10)),
                )],
            }],
        };
        assert_eq!(
            r.to_string(),
            "rule P\n  if ?g goal x=?x y=_\n  guard ?x >= 10\n  then emit write digit=(?x - 10)\nend"
        );
    }
}
