//! Model files: parsing, validation and pretty-printing.
//!
//! ```text
//! # comment
//! [parameters]
//! decay = 0.5
//!
//! [chunks]
//! goal1 add a=36 b=23 state=start
//!
//! [productions]
//! rule P1
//!   if ?g add state=start
//!   guard ?n = ?k + 1
//!   unless column index=?n
//!   then set ?g state=running
//!   then push process-columns counter=?ctr
//! end
//!
//! [goal]
//! goal1
//! ```
//!
//! Slot values are numbers (`36`, `0.8`, `5/4`), symbols, or `@id` chunk
//! references. In patterns `?x` is a variable and `_` a wildcard. Action
//! templates are arithmetic expressions; one containing spaces must be
//! parenthesised (`digit=(?z - 10)`). Operators need surrounding spaces
//! because identifiers may contain `-` and `.`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::params::{Parameters, KEYS};
use crate::procedural::{Action, Guard, Pattern, Rule, SlotTest};
use crate::value::{
    is_ident_char, is_ident_start, parse_comparison, parse_expr, parse_value, ChunkId, Expr, Value,
    Var,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ModelError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkDef {
    pub id: ChunkId,
    pub kind: String,
    pub slots: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: Parameters,
    pub chunks: Vec<ChunkDef>,
    pub rules: Vec<Rule>,
    /// Initial goal; `None` leaves the goal stack empty.
    pub goal: Option<ChunkId>,
}

/// Part of a rule a validation error points at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RulePart {
    Header,
    Condition(usize),
    Guard(usize),
    Negation(usize),
    Action(usize),
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_char)
}

fn expr_consts<'a>(e: &'a Expr, out: &mut Vec<&'a Value>) {
    match e {
        Expr::Const(v) => out.push(v),
        Expr::Var(_) => {}
        Expr::Bin(_, a, b) => {
            expr_consts(a, out);
            expr_consts(b, out);
        }
    }
}

/// Static checks on one rule: at least one pattern, every variable bound
/// before use, every `@id` constant defined.
pub fn check_rule(rule: &Rule, chunks: &BTreeSet<ChunkId>) -> Result<(), (RulePart, String)> {
    if rule.conditions.is_empty() {
        return Err((
            RulePart::Header,
            format!("rule `{}` has no `if` pattern", rule.name),
        ));
    }
    let unbound = |v: &str| format!("unbound variable ?{v}");
    let check_ref = |v: &Value| match v {
        Value::Chunk(id) if !chunks.contains(id) => Err(format!("unknown chunk @{id}")),
        _ => Ok(()),
    };
    let check_expr_refs = |e: &Expr| -> Result<(), String> {
        let mut consts = Vec::new();
        expr_consts(e, &mut consts);
        consts.into_iter().try_for_each(check_ref)
    };
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    for (i, p) in rule.conditions.iter().enumerate() {
        for (_, t) in &p.slots {
            if let SlotTest::Const(v) = t {
                check_ref(v).map_err(|m| (RulePart::Condition(i), m))?;
            }
        }
        bound.extend(p.vars());
    }
    for (i, g) in rule.guards.iter().enumerate() {
        let part = RulePart::Guard(i);
        check_expr_refs(&g.lhs).map_err(|m| (part, m))?;
        check_expr_refs(&g.rhs).map_err(|m| (part, m))?;
        if let Some(v) = g.rhs.vars().into_iter().find(|v| !bound.contains(v)) {
            return Err((part, unbound(v)));
        }
        match g.assigned_var() {
            Some(v) => {
                bound.insert(v);
            }
            None => {
                if let Some(v) = g.lhs.vars().into_iter().find(|v| !bound.contains(v)) {
                    return Err((part, unbound(v)));
                }
            }
        }
    }
    for (i, n) in rule.negations.iter().enumerate() {
        let part = RulePart::Negation(i);
        if n.binder.is_some() {
            return Err((part, "`unless` patterns cannot bind the chunk".into()));
        }
        for (_, t) in &n.slots {
            match t {
                SlotTest::Const(v) => check_ref(v).map_err(|m| (part, m))?,
                SlotTest::Var(v) if !bound.contains(v.as_str()) => return Err((part, unbound(v))),
                _ => {}
            }
        }
    }
    for (i, a) in rule.actions.iter().enumerate() {
        let part = RulePart::Action(i);
        if let Action::Set { target, .. } = a {
            if !bound.contains(target.as_str()) {
                return Err((part, unbound(target)));
            }
        }
        for (_, e) in a.templates() {
            check_expr_refs(e).map_err(|m| (part, m))?;
            if let Some(v) = e.vars().into_iter().find(|v| !bound.contains(v)) {
                return Err((part, unbound(v)));
            }
        }
        if let Some(b) = a.binder() {
            bound.insert(b);
        }
    }
    Ok(())
}

struct Token<'a> {
    text: &'a str,
    /// 0-based byte column in the line.
    col: usize,
}

fn tokenize(line: &str) -> Result<Vec<Token<'_>>, (usize, String)> {
    let mut out = Vec::new();
    let bytes = line.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let mut depth = 0i32;
        while i < bytes.len() && (depth > 0 || !bytes[i].is_ascii_whitespace()) {
            match bytes[i] {
                b'(' => depth += 1,
                b')' => {
                    depth -= 1;
                    if depth < 0 {
                        return Err((i, "unbalanced `)`".into()));
                    }
                }
                _ => {}
            }
            i += 1;
        }
        if depth > 0 {
            return Err((start, "unclosed `(`".into()));
        }
        out.push(Token {
            text: &line[start..i],
            col: start,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Parameters,
    Chunks,
    Productions,
    Goal,
}

struct Parser {
    model: Model,
    seen: BTreeSet<&'static str>,
    chunk_lines: Vec<(usize, usize)>,
    rule_positions: Vec<RulePositions>,
    goal_pos: (usize, usize),
}

#[derive(Default, Clone)]
struct RulePositions {
    header: (usize, usize),
    conditions: Vec<(usize, usize)>,
    guards: Vec<(usize, usize)>,
    negations: Vec<(usize, usize)>,
    actions: Vec<(usize, usize)>,
}

fn err(line: usize, col: usize, message: impl Into<String>) -> ModelError {
    ModelError {
        line,
        column: col + 1,
        message: message.into(),
    }
}

fn ident<'a>(tok: &Token<'a>, line: usize, what: &str) -> Result<&'a str, ModelError> {
    if is_ident(tok.text) {
        Ok(tok.text)
    } else {
        Err(err(
            line,
            tok.col,
            format!("expected {what}, found `{}`", tok.text),
        ))
    }
}

fn var_token<'a>(tok: &Token<'a>) -> Option<&'a str> {
    tok.text.strip_prefix('?').filter(|v| is_ident(v))
}

fn split_assignment<'a>(
    tok: &Token<'a>,
    line: usize,
) -> Result<(&'a str, &'a str, usize), ModelError> {
    let (k, v) = tok.text.split_once('=').ok_or_else(|| {
        err(
            line,
            tok.col,
            format!("expected slot=value, found `{}`", tok.text),
        )
    })?;
    if !is_ident(k) {
        return Err(err(line, tok.col, format!("bad slot name `{k}`")));
    }
    Ok((k, v, tok.col + k.len() + 1))
}

fn value_at(text: &str, line: usize, col: usize) -> Result<Value, ModelError> {
    parse_value(text).map_err(|e| err(line, col + e.column - 1, e.message))
}

fn expr_at(text: &str, line: usize, col: usize) -> Result<Expr, ModelError> {
    parse_expr(text).map_err(|e| err(line, col + e.column - 1, e.message))
}

fn slot_test(text: &str, line: usize, col: usize) -> Result<SlotTest, ModelError> {
    if text == "_" {
        return Ok(SlotTest::Wildcard);
    }
    if let Some(v) = text.strip_prefix('?') {
        if !is_ident(v) {
            return Err(err(line, col, format!("bad variable `{text}`")));
        }
        return Ok(SlotTest::Var(v.to_string()));
    }
    Ok(SlotTest::Const(value_at(text, line, col)?))
}

fn pattern(
    toks: &[Token<'_>],
    line: usize,
    allow_binder: bool,
    end_col: usize,
) -> Result<Pattern, ModelError> {
    let mut rest = toks;
    let mut binder = None;
    if let Some(first) = rest.first() {
        if first.text.starts_with('?') && !first.text.contains('=') {
            let v = var_token(first)
                .ok_or_else(|| err(line, first.col, format!("bad variable `{}`", first.text)))?;
            if !allow_binder {
                return Err(err(
                    line,
                    first.col,
                    "`unless` patterns cannot bind the chunk",
                ));
            }
            binder = Some(v.to_string());
            rest = &rest[1..];
        }
    }
    let kind_tok = rest
        .first()
        .ok_or_else(|| err(line, end_col, "expected a chunk kind"))?;
    let kind = ident(kind_tok, line, "a chunk kind")?;
    let mut p = Pattern::new(kind);
    p.binder = binder;
    let mut names = BTreeSet::new();
    for tok in &rest[1..] {
        let (k, v, col) = split_assignment(tok, line)?;
        if !names.insert(k) {
            return Err(err(line, tok.col, format!("slot `{k}` repeated")));
        }
        p.slots.push((k.to_string(), slot_test(v, line, col)?));
    }
    Ok(p)
}

fn templates(toks: &[Token<'_>], line: usize) -> Result<Vec<(String, Expr)>, ModelError> {
    let mut names = BTreeSet::new();
    let mut out = Vec::new();
    for tok in toks {
        let (k, v, col) = split_assignment(tok, line)?;
        if !names.insert(k) {
            return Err(err(line, tok.col, format!("slot `{k}` repeated")));
        }
        out.push((k.to_string(), expr_at(v, line, col)?));
    }
    Ok(out)
}

fn action(toks: &[Token<'_>], line: usize, end_col: usize) -> Result<Action, ModelError> {
    let verb = toks
        .first()
        .ok_or_else(|| err(line, end_col, "expected an action"))?;
    let rest = &toks[1..];
    let optional_binder = |rest: &[Token<'_>]| -> Result<(Option<Var>, usize), ModelError> {
        match rest.first() {
            Some(t) if t.text.starts_with('?') => {
                let v = var_token(t)
                    .ok_or_else(|| err(line, t.col, format!("bad variable `{}`", t.text)))?;
                Ok((Some(v.to_string()), 1))
            }
            _ => Ok((None, 0)),
        }
    };
    Ok(match verb.text {
        "push" | "write" => {
            let (binder, skip) = optional_binder(rest)?;
            let rest = &rest[skip..];
            let kind_tok = rest
                .first()
                .ok_or_else(|| err(line, end_col, "expected a chunk kind"))?;
            let kind = ident(kind_tok, line, "a chunk kind")?.to_string();
            let slots = templates(&rest[1..], line)?;
            if verb.text == "push" {
                Action::Push {
                    binder,
                    kind,
                    slots,
                }
            } else {
                Action::Write {
                    binder,
                    kind,
                    slots,
                }
            }
        }
        "pop" | "fail" => {
            if let Some(t) = rest.first() {
                return Err(err(
                    line,
                    t.col,
                    format!("`{}` takes no arguments", verb.text),
                ));
            }
            if verb.text == "pop" {
                Action::Pop
            } else {
                Action::Fail
            }
        }
        "set" => {
            let (binder, skip) = optional_binder(rest)?;
            let target =
                binder.ok_or_else(|| err(line, verb.col, "`set` needs a ?variable target"))?;
            Action::Set {
                target,
                slots: templates(&rest[skip..], line)?,
            }
        }
        "emit" => {
            let v = rest
                .first()
                .ok_or_else(|| err(line, end_col, "expected an action verb"))?;
            Action::Emit {
                verb: ident(v, line, "an action verb")?.to_string(),
                args: templates(&rest[1..], line)?,
            }
        }
        other => return Err(err(line, verb.col, format!("unknown action `{other}`"))),
    })
}

impl Parser {
    fn section(&mut self, name: &str, line: usize, col: usize) -> Result<Section, ModelError> {
        let (key, section) = match name {
            "parameters" => ("parameters", Section::Parameters),
            "chunks" => ("chunks", Section::Chunks),
            "productions" => ("productions", Section::Productions),
            "goal" => ("goal", Section::Goal),
            other => return Err(err(line, col, format!("unknown section [{other}]"))),
        };
        if !self.seen.insert(key) {
            return Err(err(line, col, format!("section [{key}] repeated")));
        }
        Ok(section)
    }

    fn parameter(&mut self, raw: &str, line: usize, indent: usize) -> Result<(), ModelError> {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| err(line, indent, "expected key = value"))?;
        self.model
            .params
            .set(k.trim(), v)
            .map_err(|e| err(line, indent, e.to_string()))
    }

    fn chunk(&mut self, toks: &[Token<'_>], line: usize) -> Result<(), ModelError> {
        let id = ident(&toks[0], line, "a chunk id")?;
        let kind_tok = toks
            .get(1)
            .ok_or_else(|| err(line, toks[0].col + id.len(), "expected a chunk kind"))?;
        let kind = ident(kind_tok, line, "a chunk kind")?;
        let mut slots = BTreeMap::new();
        for tok in &toks[2..] {
            let (k, v, col) = split_assignment(tok, line)?;
            if slots
                .insert(k.to_string(), value_at(v, line, col)?)
                .is_some()
            {
                return Err(err(line, tok.col, format!("slot `{k}` repeated")));
            }
        }
        let id = ChunkId::new(id);
        if self.model.chunks.iter().any(|c| c.id == id) {
            return Err(err(
                line,
                toks[0].col,
                format!("chunk `{id}` defined twice"),
            ));
        }
        self.model.chunks.push(ChunkDef {
            id,
            kind: kind.to_string(),
            slots,
        });
        self.chunk_lines.push((line, toks[0].col));
        Ok(())
    }

    fn validate(&self) -> Result<(), ModelError> {
        let ids: BTreeSet<ChunkId> = self.model.chunks.iter().map(|c| c.id.clone()).collect();
        for (c, &(line, col)) in self.model.chunks.iter().zip(&self.chunk_lines) {
            for (slot, v) in &c.slots {
                if let Value::Chunk(t) = v {
                    if !ids.contains(t) {
                        return Err(err(
                            line,
                            col,
                            format!("slot `{slot}` refers to unknown chunk @{t}"),
                        ));
                    }
                }
            }
        }
        let mut names = BTreeSet::new();
        for (rule, pos) in self.model.rules.iter().zip(&self.rule_positions) {
            if !names.insert(rule.name.as_str()) {
                return Err(err(
                    pos.header.0,
                    pos.header.1,
                    format!("rule `{}` defined twice", rule.name),
                ));
            }
            if let Err((part, message)) = check_rule(rule, &ids) {
                let (line, col) = match part {
                    RulePart::Header => pos.header,
                    RulePart::Condition(i) => pos.conditions[i],
                    RulePart::Guard(i) => pos.guards[i],
                    RulePart::Negation(i) => pos.negations[i],
                    RulePart::Action(i) => pos.actions[i],
                };
                return Err(err(line, col, format!("rule `{}`: {message}", rule.name)));
            }
        }
        if let Some(g) = &self.model.goal {
            if !ids.contains(g) {
                return Err(err(
                    self.goal_pos.0,
                    self.goal_pos.1,
                    format!("goal refers to unknown chunk @{g}"),
                ));
            }
        }
        self.model
            .params
            .validate()
            .map_err(|e| err(1, 0, e.to_string()))
    }
}

impl Model {
    pub fn parse(text: &str) -> Result<Model, ModelError> {
        let mut p = Parser {
            model: Model {
                params: Parameters::default(),
                chunks: Vec::new(),
                rules: Vec::new(),
                goal: None,
            },
            seen: BTreeSet::new(),
            chunk_lines: Vec::new(),
            rule_positions: Vec::new(),
            goal_pos: (0, 0),
        };
        let mut section: Option<Section> = None;
        let mut open_rule: Option<(Rule, RulePositions)> = None;
        let mut last_line = 0;
        for (idx, full) in text.lines().enumerate() {
            let line = idx + 1;
            last_line = line;
            let raw = full.split('#').next().unwrap_or_default();
            let trimmed = raw.trim();
            if trimmed.is_empty() {
                continue;
            }
            let indent = raw.len() - raw.trim_start().len();
            if trimmed.starts_with('[') {
                if let Some((rule, pos)) = &open_rule {
                    return Err(err(
                        pos.header.0,
                        pos.header.1,
                        format!("rule `{}` is missing `end`", rule.name),
                    ));
                }
                let name = trimmed
                    .strip_prefix('[')
                    .and_then(|s| s.strip_suffix(']'))
                    .ok_or_else(|| err(line, indent, "malformed section header"))?;
                section = Some(p.section(name.trim(), line, indent)?);
                continue;
            }
            if section == Some(Section::Parameters) {
                p.parameter(raw, line, indent)?;
                continue;
            }
            let toks = tokenize(raw).map_err(|(c, m)| err(line, c, m))?;
            match section {
                None => return Err(err(line, indent, "content before the first section")),
                Some(Section::Parameters) => unreachable!(),
                Some(Section::Chunks) => p.chunk(&toks, line)?,
                Some(Section::Goal) => {
                    if p.model.goal.is_some() || toks.len() > 1 {
                        return Err(err(line, indent, "[goal] holds a single chunk id"));
                    }
                    let name = toks[0].text.strip_prefix('@').unwrap_or(toks[0].text);
                    if !is_ident(name) {
                        return Err(err(line, indent, format!("bad goal `{}`", toks[0].text)));
                    }
                    p.model.goal = Some(ChunkId::new(name));
                    p.goal_pos = (line, indent);
                }
                Some(Section::Productions) => {
                    let head = &toks[0];
                    let end_col = raw.trim_end().len();
                    match (head.text, open_rule.as_mut()) {
                        ("rule", None) => {
                            let name_tok = toks
                                .get(1)
                                .ok_or_else(|| err(line, end_col, "expected a rule name"))?;
                            let name = ident(name_tok, line, "a rule name")?;
                            if let Some(t) = toks.get(2) {
                                return Err(err(line, t.col, "unexpected text after rule name"));
                            }
                            open_rule = Some((
                                Rule {
                                    name: name.to_string(),
                                    conditions: Vec::new(),
                                    guards: Vec::new(),
                                    negations: Vec::new(),
                                    actions: Vec::new(),
                                },
                                RulePositions {
                                    header: (line, name_tok.col),
                                    ..Default::default()
                                },
                            ));
                        }
                        ("rule", Some((rule, _))) => {
                            return Err(err(
                                line,
                                head.col,
                                format!("rule `{}` is missing `end`", rule.name),
                            ));
                        }
                        ("end", Some(_)) => {
                            if let Some(t) = toks.get(1) {
                                return Err(err(line, t.col, "unexpected text after `end`"));
                            }
                            let (rule, pos) = open_rule.take().expect("matched Some");
                            p.model.rules.push(rule);
                            p.rule_positions.push(pos);
                        }
                        ("if", Some((rule, pos))) => {
                            rule.conditions
                                .push(pattern(&toks[1..], line, true, end_col)?);
                            pos.conditions.push((line, head.col));
                        }
                        ("unless", Some((rule, pos))) => {
                            rule.negations
                                .push(pattern(&toks[1..], line, false, end_col)?);
                            pos.negations.push((line, head.col));
                        }
                        ("guard", Some((rule, pos))) => {
                            let start = head.col + head.text.len();
                            let body = &raw[start..];
                            let (l, op, r) = parse_comparison(body)
                                .map_err(|e| err(line, start + e.column - 1, e.message))?;
                            rule.guards.push(Guard::new(l, op, r));
                            pos.guards.push((line, head.col));
                        }
                        ("then", Some((rule, pos))) => {
                            rule.actions.push(action(&toks[1..], line, end_col)?);
                            pos.actions.push((line, head.col));
                        }
                        (_, None) => {
                            return Err(err(
                                line,
                                head.col,
                                format!("expected `rule`, found `{}`", head.text),
                            ))
                        }
                        (other, Some(_)) => {
                            return Err(err(
                                line,
                                head.col,
                                format!("expected if, unless, guard, then or end, found `{other}`"),
                            ))
                        }
                    }
                }
            }
        }
        if let Some((rule, pos)) = &open_rule {
            return Err(err(
                pos.header.0,
                pos.header.1,
                format!("rule `{}` is missing `end`", rule.name),
            ));
        }
        if !p.seen.contains("goal") {
            return Err(err(last_line.max(1), 0, "missing [goal] section"));
        }
        p.validate()?;
        Ok(p.model)
    }

    /// Static checks, as performed by [`Model::parse`], on a model built in code.
    pub fn validate(&self) -> Result<(), String> {
        let ids: BTreeSet<ChunkId> = self.chunks.iter().map(|c| c.id.clone()).collect();
        let mut names = BTreeSet::new();
        for c in &self.chunks {
            if let Some(t) = c
                .slots
                .values()
                .filter_map(Value::as_chunk)
                .find(|t| !ids.contains(*t))
            {
                return Err(format!("chunk `{}` refers to unknown chunk @{t}", c.id));
            }
        }
        if ids.len() != self.chunks.len() {
            return Err("duplicate chunk id".into());
        }
        for r in &self.rules {
            if !names.insert(r.name.as_str()) {
                return Err(format!("rule `{}` defined twice", r.name));
            }
            check_rule(r, &ids).map_err(|(_, m)| format!("rule `{}`: {m}", r.name))?;
        }
        if let Some(g) = &self.goal {
            if !ids.contains(g) {
                return Err(format!("goal refers to unknown chunk @{g}"));
            }
        }
        self.params.validate().map_err(|e| e.to_string())
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }

    pub fn chunk(&self, id: &ChunkId) -> Option<&ChunkDef> {
        self.chunks.iter().find(|c| &c.id == id)
    }
}

impl fmt::Display for ChunkDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.id, self.kind)?;
        for (k, v) in &self.slots {
            write!(f, " {k}={v}")?;
        }
        Ok(())
    }
}

/// Canonical form: parameters that differ from the defaults, then chunks,
/// rules (patterns, guards, negations, actions) and the goal.
impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let defaults = Parameters::default();
        writeln!(f, "[parameters]")?;
        for key in KEYS {
            let v = self.params.get(key).expect("known key");
            if defaults.get(key).as_deref() != Some(v.as_str()) {
                writeln!(f, "{key} = {v}")?;
            }
        }
        writeln!(f, "\n[chunks]")?;
        for c in &self.chunks {
            writeln!(f, "{c}")?;
        }
        writeln!(f, "\n[productions]")?;
        for (i, r) in self.rules.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "{r}")?;
        }
        writeln!(f, "\n[goal]")?;
        if let Some(g) = &self.goal {
            writeln!(f, "{g}")?;
        }
        Ok(())
    }
}
