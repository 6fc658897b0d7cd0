//! Production compilation from execution history.
//!
//! [`proceduralize`] turns one goal episode of a trace into a single rule
//! that matches the episode's initial goal by constants and performs the
//! episode's external actions directly. [`compose`] chains two rules into
//! one by evaluating the second rule's conditions symbolically against the
//! state the first rule leaves behind.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::model::check_rule;
use crate::procedural::{Action, Guard, Pattern, Rule, SlotTest};
use crate::trace::{EventKind, Outcome, Trace};
use crate::value::{compare, ChunkId, CmpOp, Expr, Value, Var};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error("episode error: {0}")]
    Episode(String),
    #[error("composition error: {0}")]
    Composition(String),
}

/// Build a rule from the episode of `goal` (default: the first goal pushed
/// in the trace). The rule matches the goal's slots at push time and emits
/// every external action of the episode, then pops (or fails) the goal.
pub fn proceduralize(
    trace: &Trace,
    goal: Option<&ChunkId>,
    name: &str,
) -> Result<Rule, CompileError> {
    let start = trace
        .events
        .iter()
        .position(|e| matches!(&e.kind, EventKind::GoalPushed { chunk, .. } if goal.is_none_or(|g| g == chunk)))
        .ok_or_else(|| {
            CompileError::Episode(match goal {
                Some(g) => format!("@{g} is never pushed"),
                None => "the trace pushes no goal".into(),
            })
        })?;
    let EventKind::GoalPushed { chunk, kind, slots } = &trace.events[start].kind else {
        unreachable!()
    };
    let mut actions = Vec::new();
    let mut outcome = None;
    for e in &trace.events[start + 1..] {
        match &e.kind {
            EventKind::ExternalAction { verb, args } => actions.push(Action::Emit {
                verb: verb.clone(),
                args: args
                    .iter()
                    .map(|(k, v)| (k.clone(), Expr::Const(v.clone())))
                    .collect(),
            }),
            EventKind::GoalPopped {
                chunk: c,
                outcome: o,
            } if c == chunk => {
                outcome = Some(*o);
                break;
            }
            _ => {}
        }
    }
    let outcome = outcome
        .ok_or_else(|| CompileError::Episode(format!("the episode of @{chunk} never ends")))?;
    actions.push(match outcome {
        Outcome::Achieved => Action::Pop,
        Outcome::Failed => Action::Fail,
    });
    let mut pattern = Pattern::new(kind.clone());
    pattern.slots = slots
        .iter()
        .map(|(k, v)| (k.clone(), SlotTest::Const(v.clone())))
        .collect();
    Ok(Rule {
        name: name.to_string(),
        conditions: vec![pattern],
        guards: Vec::new(),
        negations: Vec::new(),
        actions,
    })
}

/// Where a symbolic chunk of the first rule's post-state comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Origin {
    /// Matched by condition `i`.
    Matched(usize),
    /// Created by action `i`.
    Created(usize),
}

#[derive(Debug, Clone)]
struct SymChunk {
    id: Var,
    kind: String,
    slots: BTreeMap<String, Expr>,
    origin: Origin,
}

/// Placeholders introduced into the first rule's conditions; kept only if
/// the final rule refers to them.
#[derive(Debug, Clone)]
enum Pending {
    Binder(usize, Var),
    Slot(usize, String, Var),
}

#[derive(Debug, Clone)]
struct State {
    syms: Vec<SymChunk>,
    conditions: Vec<Pattern>,
    pending: Vec<Pending>,
    subst: BTreeMap<Var, Expr>,
    guards: Vec<Guard>,
    consumed: BTreeSet<usize>,
    carried: Vec<Pattern>,
}

struct Fresh {
    used: BTreeSet<Var>,
    n: usize,
}

impl Fresh {
    fn var(&mut self, stem: &str) -> Var {
        loop {
            self.n += 1;
            let v = format!("{stem}{}", self.n);
            if self.used.insert(v.clone()) {
                return v;
            }
        }
    }
}

fn rule_vars(rule: &Rule) -> BTreeSet<Var> {
    let mut out = BTreeSet::new();
    for p in rule.conditions.iter().chain(&rule.negations) {
        out.extend(p.vars().map(str::to_string));
    }
    for g in &rule.guards {
        out.extend(g.lhs.vars().into_iter().map(str::to_string));
        out.extend(g.rhs.vars().into_iter().map(str::to_string));
    }
    for a in &rule.actions {
        if let Some(b) = a.binder() {
            out.insert(b.to_string());
        }
        if let Action::Set { target, .. } = a {
            out.insert(target.clone());
        }
        for (_, e) in a.templates() {
            out.extend(e.vars().into_iter().map(str::to_string));
        }
    }
    out
}

fn rename_expr(e: &Expr, map: &BTreeMap<Var, Var>) -> Expr {
    let m: BTreeMap<Var, Expr> = map
        .iter()
        .map(|(k, v)| (k.clone(), Expr::Var(v.clone())))
        .collect();
    e.substitute(&m)
}

fn rename_pattern(p: &Pattern, map: &BTreeMap<Var, Var>) -> Pattern {
    Pattern {
        binder: p.binder.as_ref().map(|b| map[b].clone()),
        kind: p.kind.clone(),
        slots: p
            .slots
            .iter()
            .map(|(k, t)| {
                let t = match t {
                    SlotTest::Var(v) => SlotTest::Var(map[v].clone()),
                    other => other.clone(),
                };
                (k.clone(), t)
            })
            .collect(),
    }
}

fn map_templates(slots: &[(String, Expr)], f: impl Fn(&Expr) -> Expr) -> Vec<(String, Expr)> {
    slots.iter().map(|(k, e)| (k.clone(), f(e))).collect()
}

fn map_action(a: &Action, f: &dyn Fn(&Expr) -> Expr, var: &dyn Fn(&Var) -> Var) -> Action {
    match a {
        Action::Push {
            binder,
            kind,
            slots,
        } => Action::Push {
            binder: binder.as_ref().map(var),
            kind: kind.clone(),
            slots: map_templates(slots, f),
        },
        Action::Write {
            binder,
            kind,
            slots,
        } => Action::Write {
            binder: binder.as_ref().map(var),
            kind: kind.clone(),
            slots: map_templates(slots, f),
        },
        Action::Set { target, slots } => Action::Set {
            target: var(target),
            slots: map_templates(slots, f),
        },
        Action::Emit { verb, args } => Action::Emit {
            verb: verb.clone(),
            args: map_templates(args, f),
        },
        Action::Pop => Action::Pop,
        Action::Fail => Action::Fail,
    }
}

fn rename_rule(rule: &Rule, map: &BTreeMap<Var, Var>) -> Rule {
    Rule {
        name: rule.name.clone(),
        conditions: rule
            .conditions
            .iter()
            .map(|p| rename_pattern(p, map))
            .collect(),
        guards: rule
            .guards
            .iter()
            .map(|g| Guard::new(rename_expr(&g.lhs, map), g.op, rename_expr(&g.rhs, map)))
            .collect(),
        negations: rule
            .negations
            .iter()
            .map(|p| rename_pattern(p, map))
            .collect(),
        actions: rule
            .actions
            .iter()
            .map(|a| map_action(a, &|e| rename_expr(e, map), &|v| map[v].clone()))
            .collect(),
    }
}

fn is_var(e: &Expr) -> bool {
    matches!(e, Expr::Var(_))
}

impl State {
    /// Require `var` (of the second rule) to equal `expr` (over the first
    /// rule's variables).
    fn bind(&mut self, var: &Var, expr: Expr) -> bool {
        match self.subst.get(var) {
            None => {
                self.subst.insert(var.clone(), expr);
                true
            }
            Some(prev) => self.require_equal(prev.clone(), expr),
        }
    }

    fn require_equal(&mut self, a: Expr, b: Expr) -> bool {
        if a == b {
            return true;
        }
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return x == y;
        }
        self.guards.push(Guard::new(a, CmpOp::Eq, b));
        true
    }

    fn unify(&mut self, p: &Pattern, sym: usize, fresh: &mut Fresh) -> bool {
        if self.syms[sym].kind != p.kind {
            return false;
        }
        if let Some(b) = &p.binder {
            let id = Expr::Var(self.syms[sym].id.clone());
            if !self.bind(b, id) {
                return false;
            }
        }
        for (slot, test) in &p.slots {
            let known = match self.syms[sym].slots.get(slot) {
                Some(e) => e.clone(),
                None => match self.syms[sym].origin {
                    Origin::Created(_) => return false,
                    Origin::Matched(i) => {
                        let f = fresh.var("s");
                        self.conditions[i]
                            .slots
                            .push((slot.clone(), SlotTest::Var(f.clone())));
                        self.pending.push(Pending::Slot(i, slot.clone(), f.clone()));
                        self.syms[sym]
                            .slots
                            .insert(slot.clone(), Expr::Var(f.clone()));
                        Expr::Var(f)
                    }
                },
            };
            let ok = match test {
                SlotTest::Wildcard => true,
                SlotTest::Const(c) => self.require_equal(known, Expr::Const(c.clone())),
                SlotTest::Var(v) => self.bind(v, known),
            };
            if !ok {
                return false;
            }
        }
        self.consumed.insert(sym);
        true
    }

    /// Assign each remaining pattern to a symbolic chunk, or carry it over
    /// to be matched against memory. First consistent assignment wins.
    fn search(self, rest: &[Pattern], fresh: &mut Fresh) -> Option<State> {
        let Some((p, tail)) = rest.split_first() else {
            return Some(self);
        };
        for sym in 0..self.syms.len() {
            let mut next = self.clone();
            if next.unify(p, sym, fresh) {
                if let Some(done) = next.search(tail, fresh) {
                    return Some(done);
                }
            }
        }
        let mut next = self;
        next.carried.push(p.clone());
        next.search(tail, fresh)
    }

    /// Express a second-rule variable as a slot test, adding a guard when
    /// it stands for a compound expression.
    fn slot_test(&mut self, t: &SlotTest, fresh: &mut Fresh, op: CmpOp) -> SlotTest {
        match t {
            SlotTest::Var(v) => match self.subst.get(v).cloned() {
                None => t.clone(),
                Some(Expr::Var(w)) => SlotTest::Var(w),
                Some(Expr::Const(c)) => SlotTest::Const(c),
                Some(e) => {
                    let f = fresh.var("t");
                    self.guards.push(Guard::new(Expr::Var(f.clone()), op, e));
                    SlotTest::Var(f)
                }
            },
            other => other.clone(),
        }
    }
}

fn err(msg: impl Into<String>) -> CompileError {
    CompileError::Composition(msg.into())
}

/// Symbolic post-state of `a`: its matched chunks with `set`s applied,
/// plus the chunks it writes and pushes. Returns the chunks and the index
/// of the goal on top afterwards.
fn post_state(
    a: &Rule,
    fresh: &mut Fresh,
    pending: &mut Vec<Pending>,
) -> Result<(Vec<SymChunk>, usize), CompileError> {
    let mut syms = Vec::new();
    for (i, p) in a.conditions.iter().enumerate() {
        let id = match &p.binder {
            Some(b) => b.clone(),
            None => {
                let f = fresh.var("c");
                pending.push(Pending::Binder(i, f.clone()));
                f
            }
        };
        let mut slots = BTreeMap::new();
        for (k, t) in &p.slots {
            let e = match t {
                SlotTest::Const(c) => Expr::Const(c.clone()),
                SlotTest::Var(v) => Expr::Var(v.clone()),
                SlotTest::Wildcard => {
                    let f = fresh.var("s");
                    pending.push(Pending::Slot(i, k.clone(), f.clone()));
                    Expr::Var(f)
                }
            };
            slots.insert(k.clone(), e);
        }
        syms.push(SymChunk {
            id,
            kind: p.kind.clone(),
            slots,
            origin: Origin::Matched(i),
        });
    }
    let mut goal = 0;
    for (i, action) in a.actions.iter().enumerate() {
        match action {
            Action::Set { target, slots } => {
                let sym = syms
                    .iter_mut()
                    .rev()
                    .find(|s| &s.id == target)
                    .ok_or_else(|| {
                        err(format!(
                            "`{}` sets ?{target}, which is not a chunk it matched or made",
                            a.name
                        ))
                    })?;
                for (k, e) in slots {
                    sym.slots.insert(k.clone(), e.clone());
                }
            }
            Action::Write {
                binder,
                kind,
                slots,
            }
            | Action::Push {
                binder,
                kind,
                slots,
            } => {
                let id = binder.clone().expect("binders assigned before");
                syms.push(SymChunk {
                    id,
                    kind: kind.clone(),
                    slots: slots.iter().cloned().collect(),
                    origin: Origin::Created(i),
                });
                if matches!(action, Action::Push { .. }) {
                    goal = syms.len() - 1;
                }
            }
            Action::Pop | Action::Fail => {
                return Err(err(format!(
                    "`{}` ends its goal, so nothing can follow it",
                    a.name
                )));
            }
            Action::Emit { .. } => {}
        }
    }
    Ok((syms, goal))
}

fn count_vars(rule: &Rule) -> BTreeMap<Var, usize> {
    let mut counts: BTreeMap<Var, usize> = BTreeMap::new();
    let mut add = |v: &str| *counts.entry(v.to_string()).or_default() += 1;
    for p in rule.conditions.iter().chain(&rule.negations) {
        for v in p.vars() {
            add(v);
        }
    }
    for g in &rule.guards {
        for v in g.lhs.vars().into_iter().chain(g.rhs.vars()) {
            add(v);
        }
    }
    for a in &rule.actions {
        if let Some(b) = a.binder() {
            add(b);
        }
        if let Action::Set { target, .. } = a {
            add(target);
        }
        for (_, e) in a.templates() {
            for v in e.vars() {
                add(v);
            }
        }
    }
    counts
}

/// References to `var` outside `set` targets and creating binders.
fn referenced(actions: &[Action], guards: &[Guard], conditions: &[Pattern], var: &str) -> bool {
    let in_expr = |e: &Expr| e.vars().contains(&var);
    actions
        .iter()
        .any(|a| a.templates().iter().any(|(_, e)| in_expr(e)))
        || guards.iter().any(|g| in_expr(&g.lhs) || in_expr(&g.rhs))
        || conditions.iter().any(|p| {
            p.slots
                .iter()
                .any(|(_, t)| matches!(t, SlotTest::Var(v) if v == var))
        })
}

/// Merge all `set`s of one target into a single action at the position of
/// the last one; later values win.
fn merge_sets(actions: Vec<Action>) -> Vec<Action> {
    let mut last: BTreeMap<Var, usize> = BTreeMap::new();
    for (i, a) in actions.iter().enumerate() {
        if let Action::Set { target, .. } = a {
            last.insert(target.clone(), i);
        }
    }
    let mut merged: BTreeMap<Var, Vec<(String, Expr)>> = BTreeMap::new();
    for a in &actions {
        if let Action::Set { target, slots } = a {
            let entry = merged.entry(target.clone()).or_default();
            for (k, e) in slots {
                match entry.iter_mut().find(|(k2, _)| k2 == k) {
                    Some(slot) => slot.1 = e.clone(),
                    None => entry.push((k.clone(), e.clone())),
                }
            }
        }
    }
    actions
        .into_iter()
        .enumerate()
        .filter_map(|(i, a)| match a {
            Action::Set { target, .. } if last[&target] == i => Some(Action::Set {
                slots: merged.remove(&target).unwrap_or_default(),
                target,
            }),
            Action::Set { .. } => None,
            other => Some(other),
        })
        .collect()
}

/// Chain `a` then `b` into one rule named `name`.
///
/// `b`'s goal pattern must match the goal `a` leaves on top; its other
/// patterns match chunks `a` matched or made (after `a`'s `set`s) where
/// possible and are otherwise kept as conditions on memory. A push by `a`
/// that `b` pops is dropped, as are chunks written by `a` that only `b`
/// reads.
pub fn compose(a: &Rule, b: &Rule, name: &str) -> Result<Rule, CompileError> {
    let a_vars = rule_vars(a);
    let mut fresh = Fresh {
        used: a_vars.clone(),
        n: 0,
    };
    let mut rename = BTreeMap::new();
    for v in rule_vars(b) {
        let mut new = v.clone();
        let mut n = 1;
        while fresh.used.contains(&new) {
            n += 1;
            new = format!("{v}_{n}");
        }
        fresh.used.insert(new.clone());
        rename.insert(v, new);
    }
    let b = rename_rule(b, &rename);

    // name every chunk `a` creates so `b` can refer to it
    let mut fresh_binders = BTreeSet::new();
    let a = &Rule {
        actions: a
            .actions
            .iter()
            .map(|x| match x {
                Action::Write {
                    binder: None,
                    kind,
                    slots,
                }
                | Action::Push {
                    binder: None,
                    kind,
                    slots,
                } => {
                    let v = fresh.var("w");
                    fresh_binders.insert(v.clone());
                    let binder = Some(v);
                    let (kind, slots) = (kind.clone(), slots.clone());
                    if matches!(x, Action::Write { .. }) {
                        Action::Write {
                            binder,
                            kind,
                            slots,
                        }
                    } else {
                        Action::Push {
                            binder,
                            kind,
                            slots,
                        }
                    }
                }
                other => other.clone(),
            })
            .collect(),
        ..a.clone()
    };
    let mut pending = Vec::new();
    let (syms, goal) = post_state(a, &mut fresh, &mut pending)?;
    let mut state = State {
        syms,
        conditions: a.conditions.clone(),
        pending,
        subst: BTreeMap::new(),
        guards: a.guards.clone(),
        consumed: BTreeSet::new(),
        carried: Vec::new(),
    };
    let (b_goal, b_rest) = b
        .conditions
        .split_first()
        .ok_or_else(|| err(format!("`{}` has no goal pattern", b.name)))?;
    if !state.unify(b_goal, goal, &mut fresh) {
        return Err(err(format!(
            "the goal `{}` leaves on top does not satisfy `{}`",
            a.name, b.name
        )));
    }
    let mut state = state
        .search(b_rest, &mut fresh)
        .expect("carrying patterns over always succeeds");

    // positive patterns carried over
    let carried = std::mem::take(&mut state.carried);
    for p in &carried {
        let mut q = Pattern::new(p.kind.clone());
        q.binder = p.binder.clone();
        for (k, t) in &p.slots {
            let t = state.slot_test(t, &mut fresh, CmpOp::Eq);
            q.slots.push((k.clone(), t));
        }
        state.conditions.push(q);
    }

    for g in &b.guards {
        if let Some(v) = g.assigned_var() {
            if !state.subst.contains_key(v) && !carried.iter().any(|p| p.vars().any(|w| w == v)) {
                let e = g.rhs.substitute(&state.subst).simplify();
                state.subst.insert(v.to_string(), e);
                continue;
            }
        }
        let lhs = g.lhs.substitute(&state.subst).simplify();
        let rhs = g.rhs.substitute(&state.subst).simplify();
        if let (Some(x), Some(y)) = (lhs.as_const(), rhs.as_const()) {
            match compare(g.op, x, y) {
                Ok(true) => continue,
                _ => {
                    return Err(err(format!(
                        "`{}` can never satisfy `{g}` after `{}`",
                        b.name, a.name
                    )))
                }
            }
        }
        let op = if g.op == CmpOp::Assign && !is_var(&lhs) {
            CmpOp::Eq
        } else {
            g.op
        };
        state.guards.push(Guard::new(lhs, op, rhs));
    }

    let mut negations = Vec::new();
    for n in &b.negations {
        let mut q = Pattern::new(n.kind.clone());
        for (k, t) in &n.slots {
            let t = state.slot_test(t, &mut fresh, CmpOp::Assign);
            q.slots.push((k.clone(), t));
        }
        negations.push(q);
    }

    let subst = state.subst.clone();
    let mut b_actions = Vec::new();
    for act in &b.actions {
        if let Action::Set { target, .. } = act {
            match subst.get(target) {
                None | Some(Expr::Var(_)) => {}
                Some(_) => {
                    return Err(err(format!(
                        "`{}` sets ?{target}, which is not a chunk",
                        b.name
                    )))
                }
            }
        }
        b_actions.push(map_action(
            act,
            &|e| e.substitute(&subst).simplify(),
            &|v| match subst.get(v) {
                Some(Expr::Var(w)) => w.clone(),
                _ => v.clone(),
            },
        ));
    }

    let mut actions: Vec<Action> = a.actions.iter().cloned().chain(b_actions).collect();

    // a push by `a` immediately popped by `b`
    let pushed = &state.syms[goal];
    if let (Origin::Created(push_idx), Some(pop_idx)) = (
        pushed.origin,
        actions.iter().position(|x| matches!(x, Action::Pop)),
    ) {
        let id = pushed.id.clone();
        if pop_idx >= a.actions.len()
            && !referenced(&actions, &state.guards, &state.conditions, &id)
        {
            actions = actions
                .into_iter()
                .enumerate()
                .filter(|(i, x)| {
                    *i != push_idx
                        && *i != pop_idx
                        && !matches!(x, Action::Set { target, .. } if *target == id)
                })
                .map(|(_, x)| x)
                .collect();
        }
    }
    // chunks written by `a` and read only by `b`
    for (idx, sym) in state.syms.iter().enumerate() {
        if !state.consumed.contains(&idx) || idx == goal {
            continue;
        }
        let Origin::Created(_) = sym.origin else {
            continue;
        };
        let id = &sym.id;
        let writes = |x: &Action| matches!(x, Action::Write { binder: Some(bd), .. } if bd == id);
        if !actions.iter().any(writes) || referenced(&actions, &state.guards, &state.conditions, id)
        {
            continue;
        }
        actions.retain(|x| !writes(x) && !matches!(x, Action::Set { target, .. } if target == id));
    }
    let actions = merge_sets(actions);

    let mut rule = Rule {
        name: name.to_string(),
        conditions: state.conditions,
        guards: state.guards,
        negations,
        actions,
    };
    let counts = count_vars(&rule);
    for x in &mut rule.actions {
        if let Action::Write { binder, .. } | Action::Push { binder, .. } = x {
            if binder
                .as_ref()
                .is_some_and(|b| fresh_binders.contains(b) && counts[b] == 1)
            {
                *binder = None;
            }
        }
    }
    for p in &state.pending {
        match p {
            Pending::Binder(i, v) => {
                if counts.get(v).copied().unwrap_or(0) > 0 {
                    rule.conditions[*i].binder = Some(v.clone());
                }
            }
            Pending::Slot(i, slot, v) => {
                if counts.get(v).copied().unwrap_or(0) <= 1 {
                    if let Some(t) = rule.conditions[*i]
                        .slots
                        .iter_mut()
                        .find(|(k, _)| k == slot)
                    {
                        t.1 = SlotTest::Wildcard;
                    }
                }
            }
        }
    }

    let mut known = BTreeSet::new();
    collect_refs(a, &mut known);
    collect_refs(&b, &mut known);
    check_rule(&rule, &known)
        .map_err(|(_, m)| err(format!("the composed rule is not executable: {m}")))?;
    Ok(rule)
}

fn collect_refs(rule: &Rule, out: &mut BTreeSet<ChunkId>) {
    let mut add_expr = |e: &Expr| {
        fn walk(e: &Expr, out: &mut BTreeSet<ChunkId>) {
            match e {
                Expr::Const(Value::Chunk(id)) => {
                    out.insert(id.clone());
                }
                Expr::Bin(_, x, y) => {
                    walk(x, out);
                    walk(y, out);
                }
                _ => {}
            }
        }
        walk(e, out)
    };
    for g in &rule.guards {
        add_expr(&g.lhs);
        add_expr(&g.rhs);
    }
    for a in &rule.actions {
        for (_, e) in a.templates() {
            add_expr(e);
        }
    }
    for p in rule.conditions.iter().chain(&rule.negations) {
        for (_, t) in &p.slots {
            if let SlotTest::Const(Value::Chunk(id)) = t {
                out.insert(id.clone());
            }
        }
    }
}
