//! The interpreter: goal stack, clock, and the match-resolve-fire-learn cycle.
//!
//! One [`Engine::step`]:
//!
//! 1. build the context from the current goal and the perceptual set;
//! 2. match every production at the cycle start, each instantiation
//!    arriving after its match latency;
//! 3. resolve the conflict set with the stopping rule;
//! 4. execute the winner's actions, stamped at the fire time;
//! 5. learn: production firing, chunk use, associative counts, utility;
//! 6. advance the clock past the actions (`action_time` each).
//!
//! The engine has no randomness; the same model always yields the same trace.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::association::{build_context, AssocStats, Context};
use crate::conflict::{expected_value, resolve, ConflictError, ValuedMatch};
use crate::declarative::{DeclarativeError, DeclarativeMemory};
use crate::model::Model;
use crate::params::{ParamError, Parameters};
use crate::procedural::{
    match_productions, Action, Instantiation, MatchEnv, ProceduralError, Production,
};
use crate::trace::{EventKind, Firing, HaltReason, Outcome, Trace, WriteMode};
use crate::value::{Bindings, ChunkId, EvalError, Expr, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("invalid model: {0}")]
    Model(String),
    #[error(transparent)]
    Memory(#[from] DeclarativeError),
    #[error(transparent)]
    Procedural(#[from] ProceduralError),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error("`{production}`: {source}")]
    Action {
        production: String,
        source: EvalError,
    },
    #[error("`{production}`: ?{var} is not bound to a chunk")]
    NotAChunk { production: String, var: String },
    #[error("`{0}` popped an empty goal stack")]
    EmptyStack(String),
    #[error("the goal stack is empty")]
    NoGoal,
    #[error("replay diverged at line {event}: {message}")]
    Replay { event: usize, message: String },
}

/// An action on the external environment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalAction {
    pub verb: String,
    pub args: Vec<(String, Value)>,
}

/// Result of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Fired { production: String, fire_time: f64 },
    Impasse,
}

#[derive(Debug, Clone)]
pub struct Engine {
    params: Parameters,
    memory: DeclarativeMemory,
    productions: Vec<Production>,
    assoc: AssocStats,
    goals: Vec<ChunkId>,
    perceptual: BTreeSet<ChunkId>,
    clock: f64,
    spent_cost: f64,
    environment: Vec<ExternalAction>,
    cycles: u64,
    trace: Trace,
}

fn eval_slots(
    slots: &[(String, Expr)],
    bindings: &Bindings,
    production: &str,
) -> Result<Vec<(String, Value)>, EngineError> {
    slots
        .iter()
        .map(|(k, e)| {
            e.eval(bindings)
                .map(|v| (k.clone(), v))
                .map_err(|source| EngineError::Action {
                    production: production.to_string(),
                    source,
                })
        })
        .collect()
}

impl Engine {
    /// Load a model: chunks are created at t = 0, the clock starts at
    /// `start_time`, and the model goal (if any) is pushed.
    pub fn new(model: &Model) -> Result<Engine, EngineError> {
        model.validate().map_err(EngineError::Model)?;
        let params = model.params.clone();
        let mut memory = DeclarativeMemory::new(params.declarative());
        memory.insert_all(
            model
                .chunks
                .iter()
                .map(|c| (c.id.clone(), c.kind.clone(), c.slots.clone())),
            0.0,
        )?;
        let productions = model
            .rules
            .iter()
            .map(|r| {
                Production::new(
                    r.clone(),
                    params.fresh_utility(),
                    params.strength_b,
                    params.initial_strength,
                )
            })
            .collect();
        let mut engine = Engine {
            assoc: AssocStats::new(params.assoc_prior_a, params.assoc_prior_b),
            clock: params.start_time,
            params,
            memory,
            productions,
            goals: Vec::new(),
            perceptual: BTreeSet::new(),
            spent_cost: 0.0,
            environment: Vec::new(),
            cycles: 0,
            trace: Trace::default(),
        };
        if let Some(g) = &model.goal {
            engine.push_goal(g.clone(), engine.clock);
        }
        Ok(engine)
    }

    fn push_goal(&mut self, id: ChunkId, time: f64) {
        let chunk = self.memory.get(&id).expect("goal chunk exists");
        self.trace.push(
            time,
            EventKind::GoalPushed {
                chunk: id.clone(),
                kind: chunk.kind.clone(),
                slots: chunk.slots.clone(),
            },
        );
        self.goals.push(id);
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn memory(&self) -> &DeclarativeMemory {
        &self.memory
    }

    pub fn productions(&self) -> &[Production] {
        &self.productions
    }

    pub fn assoc(&self) -> &AssocStats {
        &self.assoc
    }

    pub fn goals(&self) -> &[ChunkId] {
        &self.goals
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn spent_cost(&self) -> f64 {
        self.spent_cost
    }

    pub fn environment(&self) -> &[ExternalAction] {
        &self.environment
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    /// Chunks added to every context alongside the goal's references.
    pub fn set_perceptual(&mut self, chunks: BTreeSet<ChunkId>) {
        self.perceptual = chunks;
    }

    fn context(&self) -> Context {
        match self.goals.last() {
            Some(g) => build_context(&self.memory, g, &self.perceptual),
            None => Context::empty(),
        }
    }

    /// All instantiations for the current goal, with their values.
    pub fn conflict_set(&self) -> Result<Vec<ValuedMatch>, EngineError> {
        let goal = self.goals.last().ok_or(EngineError::NoGoal)?;
        let context = self.context();
        let env = MatchEnv {
            memory: &self.memory,
            context: &context,
            strengths: &self.assoc,
            latency: self.params.latency(),
        };
        let conflict = self.params.conflict();
        Ok(match_productions(goal, &self.productions, &env, self.clock)
            .into_iter()
            .filter(|i| i.match_time.is_finite())
            .map(|inst| {
                let value = expected_value(
                    &self.productions[inst.production].utility,
                    &conflict,
                    self.spent_cost,
                );
                ValuedMatch { inst, value }
            })
            .collect())
    }

    fn firing(m: &ValuedMatch) -> Firing {
        Firing {
            production: m.inst.name.clone(),
            value: m.value,
            chunks: m.inst.matched.clone(),
            bindings: m.inst.bindings.clone(),
        }
    }

    /// Run one cycle.
    pub fn step(&mut self) -> Result<StepOutcome, EngineError> {
        let matches = self.conflict_set()?;
        if matches.is_empty() {
            self.trace.push(
                self.clock,
                EventKind::Halted {
                    reason: HaltReason::Impasse,
                },
            );
            return Ok(StepOutcome::Impasse);
        }
        let context = self.context();
        let resolution = resolve(&matches, &self.params.conflict())?;
        for &i in &resolution.arrived {
            self.trace.push(
                matches[i].inst.match_time,
                EventKind::Matched(Self::firing(&matches[i])),
            );
        }
        let winner = &matches[resolution.winner];
        let losers: Vec<&Instantiation> = resolution
            .arrived
            .iter()
            .filter(|&&i| i != resolution.winner)
            .map(|&i| &matches[i].inst)
            .collect();
        self.fire(
            &winner.inst,
            winner.value,
            resolution.fire_time,
            &context,
            &losers,
        )?;
        Ok(StepOutcome::Fired {
            production: winner.inst.name.clone(),
            fire_time: resolution.fire_time,
        })
    }

    fn fire(
        &mut self,
        inst: &Instantiation,
        value: f64,
        fire_time: f64,
        context: &Context,
        losers: &[&Instantiation],
    ) -> Result<(), EngineError> {
        self.trace.push(
            fire_time,
            EventKind::Fired(Firing {
                production: inst.name.clone(),
                value,
                chunks: inst.matched.clone(),
                bindings: inst.bindings.clone(),
            }),
        );
        let actions = self.productions[inst.production].rule.actions.clone();
        let mut failed = false;
        let mut bindings = inst.bindings.clone();
        for action in &actions {
            failed |= matches!(action, Action::Fail);
            self.execute(action, &inst.name, &mut bindings, fire_time)?;
        }

        let cost = self.params.action_time * actions.len() as f64;
        let prod = &mut self.productions[inst.production];
        prod.record_fire(self.params.decay, fire_time)?;
        prod.utility.update_q(!failed);
        prod.utility.update_cost(cost);
        let matched = inst.matched_set();
        for id in &matched {
            self.memory.record_use(id, fire_time)?;
        }
        if self.params.strengthen_losers {
            for l in losers {
                for id in &l.matched {
                    self.memory.record_use(id, fire_time)?;
                }
            }
        }
        self.assoc.observe_firing(&matched, context);
        self.spent_cost += cost;
        self.clock = fire_time + cost;
        self.cycles += 1;
        Ok(())
    }

    fn chunk_var(bindings: &Bindings, var: &str, production: &str) -> Result<ChunkId, EngineError> {
        match bindings.get(var) {
            Some(Value::Chunk(id)) => Ok(id.clone()),
            _ => Err(EngineError::NotAChunk {
                production: production.to_string(),
                var: var.to_string(),
            }),
        }
    }

    fn execute(
        &mut self,
        action: &Action,
        production: &str,
        bindings: &mut Bindings,
        now: f64,
    ) -> Result<(), EngineError> {
        match action {
            Action::Push {
                binder,
                kind,
                slots,
            } => {
                let slots: BTreeMap<_, _> = eval_slots(slots, bindings, production)?
                    .into_iter()
                    .collect();
                let id = self.memory.add_chunk(kind, slots, now)?;
                if let Some(b) = binder {
                    bindings.insert(b.clone(), Value::Chunk(id.clone()));
                }
                self.push_goal(id, now);
            }
            Action::Pop | Action::Fail => {
                let id = self
                    .goals
                    .pop()
                    .ok_or_else(|| EngineError::EmptyStack(production.to_string()))?;
                let outcome = if matches!(action, Action::Pop) {
                    Outcome::Achieved
                } else {
                    Outcome::Failed
                };
                self.trace
                    .push(now, EventKind::GoalPopped { chunk: id, outcome });
            }
            Action::Write {
                binder,
                kind,
                slots,
            } => {
                let slots: BTreeMap<_, _> = eval_slots(slots, bindings, production)?
                    .into_iter()
                    .collect();
                let (id, mode) = match self.memory.find_identical(kind, &slots).cloned() {
                    Some(id) => {
                        self.memory.record_use(&id, now)?;
                        (id, WriteMode::Merge)
                    }
                    None => (
                        self.memory.add_chunk(kind, slots.clone(), now)?,
                        WriteMode::Create,
                    ),
                };
                if let Some(b) = binder {
                    bindings.insert(b.clone(), Value::Chunk(id.clone()));
                }
                self.trace.push(
                    now,
                    EventKind::ChunkWritten {
                        chunk: id,
                        mode,
                        kind: kind.clone(),
                        slots,
                    },
                );
            }
            Action::Set { target, slots } => {
                let id = Self::chunk_var(bindings, target, production)?;
                let values = eval_slots(slots, bindings, production)?;
                for (k, v) in &values {
                    self.memory.set_slot(&id, k, v.clone())?;
                }
                let kind = self
                    .memory
                    .get(&id)
                    .expect("bound chunk exists")
                    .kind
                    .clone();
                self.trace.push(
                    now,
                    EventKind::ChunkWritten {
                        chunk: id,
                        mode: WriteMode::Set,
                        kind,
                        slots: values.into_iter().collect(),
                    },
                );
            }
            Action::Emit { verb, args } => {
                let args = eval_slots(args, bindings, production)?;
                self.trace.push(
                    now,
                    EventKind::ExternalAction {
                        verb: verb.clone(),
                        args: args.clone(),
                    },
                );
                self.environment.push(ExternalAction {
                    verb: verb.clone(),
                    args,
                });
            }
        }
        Ok(())
    }

    /// Step until the goal stack empties, an impasse, or `max_cycles`
    /// cycles in total. An engine with no goal does nothing.
    pub fn run(&mut self) -> Result<HaltReason, EngineError> {
        if self.goals.is_empty() && self.trace.is_empty() {
            return Ok(HaltReason::Done);
        }
        let reason = loop {
            if self.goals.is_empty() {
                break HaltReason::Done;
            }
            if self.cycles >= self.params.max_cycles {
                break HaltReason::Cycles;
            }
            if self.step()? == StepOutcome::Impasse {
                return Ok(HaltReason::Impasse);
            }
        };
        self.trace.push(self.clock, EventKind::Halted { reason });
        Ok(reason)
    }

    /// Load `model` and re-fire the productions recorded in `trace`, with
    /// their recorded bindings, at their recorded times. Each recorded
    /// instantiation must be present in the conflict set at that point.
    pub fn replay(model: &Model, trace: &Trace) -> Result<Engine, EngineError> {
        let mut engine = Engine::new(model)?;
        for (line, event) in trace.events.iter().enumerate() {
            let EventKind::Fired(f) = &event.kind else {
                continue;
            };
            let diverged = |message: String| EngineError::Replay {
                event: line + 1,
                message,
            };
            let matches = engine.conflict_set().map_err(|e| diverged(e.to_string()))?;
            let m = matches
                .iter()
                .find(|m| {
                    m.inst.name == f.production
                        && m.inst.bindings == f.bindings
                        && m.inst.matched == f.chunks
                })
                .ok_or_else(|| {
                    diverged(format!(
                        "`{}` with the recorded bindings does not match",
                        f.production
                    ))
                })?;
            // Trace times carry six decimals.
            if event.time < engine.clock - 1e-6 {
                return Err(diverged(format!(
                    "fire time {} precedes the clock {}",
                    event.time, engine.clock
                )));
            }
            let context = engine.context();
            let m = m.clone();
            engine.fire(
                &m.inst,
                m.value,
                event.time.max(engine.clock),
                &context,
                &[],
            )?;
        }
        Ok(engine)
    }
}

/// Load and run a model.
pub fn run_model(model: &Model) -> Result<(Engine, HaltReason), EngineError> {
    let mut engine = Engine::new(model)?;
    let reason = engine.run()?;
    Ok((engine, reason))
}

#[cfg(test)]
mod tests {
    use super::*;

    const COUNTDOWN: &str = "
[chunks]
g task n=2

[productions]
rule dec
  if ?g task n=?n
  guard ?n > 0
  then set ?g n=(?n - 1)
  then emit tick n=?n
end

rule done
  if task n=0
  then pop
end

[goal]
g
";

    #[test]
    fn countdown_runs_to_completion() {
        let m = Model::parse(COUNTDOWN).unwrap();
        let (e, reason) = run_model(&m).unwrap();
        assert_eq!(reason, HaltReason::Done);
        assert_eq!(e.trace().fired(), vec!["dec", "dec", "done"]);
        assert_eq!(e.environment().len(), 2);
        assert!(e.goals().is_empty());
        let times: Vec<f64> = e.trace().events.iter().map(|ev| ev.time).collect();
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn empty_production_set_is_an_impasse() {
        let m = Model::parse("[chunks]\ng task n=1\n[goal]\ng\n").unwrap();
        let (e, reason) = run_model(&m).unwrap();
        assert_eq!(reason, HaltReason::Impasse);
        assert_eq!(e.trace().halt_reason(), Some(HaltReason::Impasse));
    }

    #[test]
    fn no_goal_gives_empty_trace() {
        let m = Model::parse("[chunks]\ng task n=1\n[goal]\n").unwrap();
        let (e, reason) = run_model(&m).unwrap();
        assert_eq!(reason, HaltReason::Done);
        assert!(e.trace().is_empty());
    }

    #[test]
    fn cycle_budget() {
        let mut m = Model::parse(COUNTDOWN).unwrap();
        m.params.max_cycles = 1;
        let (e, reason) = run_model(&m).unwrap();
        assert_eq!(reason, HaltReason::Cycles);
        assert_eq!(e.trace().fired(), vec!["dec"]);
    }

    #[test]
    fn double_pop_is_a_stack_error() {
        let text = COUNTDOWN.replace("  then pop\n", "  then pop\n  then pop\n");
        let m = Model::parse(&text).unwrap();
        assert!(matches!(run_model(&m), Err(EngineError::EmptyStack(_))));
    }

    #[test]
    fn replay_reproduces_memory() {
        let m = Model::parse(COUNTDOWN).unwrap();
        let (e, _) = run_model(&m).unwrap();
        let r = Engine::replay(&m, e.trace()).unwrap();
        assert_eq!(
            r.memory().get(&ChunkId::new("g")).unwrap().slots,
            e.memory().get(&ChunkId::new("g")).unwrap().slots
        );
        assert_eq!(r.environment(), e.environment());
    }
}
