//! Line-oriented simulation trace.
//!
//! One event per line: `time<TAB>Kind<TAB>key=value ...`, with a fixed field
//! order per kind. Values use the model-file literal syntax so every line
//! parses back to the event that produced it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::value::{parse_value, Bindings, ChunkId, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Achieved,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteMode {
    /// A new chunk was created.
    Create,
    /// The write matched an existing identical chunk, which was reused.
    Merge,
    /// Slots of an existing chunk were overwritten.
    Set,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltReason {
    /// The goal stack emptied.
    Done,
    /// No production matched the current goal.
    Impasse,
    /// The cycle budget ran out.
    Cycles,
}

/// Payload shared by `Matched` and `Fired`.
#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub production: String,
    pub value: f64,
    pub chunks: Vec<ChunkId>,
    pub bindings: Bindings,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    GoalPushed {
        chunk: ChunkId,
        kind: String,
        slots: BTreeMap<String, Value>,
    },
    GoalPopped {
        chunk: ChunkId,
        outcome: Outcome,
    },
    ChunkWritten {
        chunk: ChunkId,
        mode: WriteMode,
        kind: String,
        slots: BTreeMap<String, Value>,
    },
    Matched(Firing),
    Fired(Firing),
    ExternalAction {
        verb: String,
        args: Vec<(String, Value)>,
    },
    Halted {
        reason: HaltReason,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::GoalPushed { .. } => "GoalPushed",
            EventKind::GoalPopped { .. } => "GoalPopped",
            EventKind::ChunkWritten { .. } => "ChunkWritten",
            EventKind::Matched(_) => "Matched",
            EventKind::Fired(_) => "Fired",
            EventKind::ExternalAction { .. } => "ExternalAction",
            EventKind::Halted { .. } => "Halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub time: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {message}")]
pub struct TraceError {
    pub line: usize,
    pub message: String,
}

impl Outcome {
    fn as_str(self) -> &'static str {
        match self {
            Outcome::Achieved => "achieved",
            Outcome::Failed => "failed",
        }
    }
}

impl WriteMode {
    fn as_str(self) -> &'static str {
        match self {
            WriteMode::Create => "create",
            WriteMode::Merge => "merge",
            WriteMode::Set => "set",
        }
    }
}

impl HaltReason {
    pub fn as_str(self) -> &'static str {
        match self {
            HaltReason::Done => "done",
            HaltReason::Impasse => "impasse",
            HaltReason::Cycles => "cycles",
        }
    }
}

fn push_slots(
    out: &mut Vec<String>,
    prefix: &str,
    slots: impl IntoIterator<Item = (impl fmt::Display, impl fmt::Display)>,
) {
    for (k, v) in slots {
        out.push(format!("{prefix}{k}={v}"));
    }
}

fn firing_fields(f: &Firing) -> Vec<String> {
    let chunks: Vec<String> = f.chunks.iter().map(|c| format!("@{c}")).collect();
    let mut out = vec![
        format!("production={}", f.production),
        format!("value={:.6}", f.value),
        format!("chunks={}", chunks.join(",")),
    ];
    push_slots(&mut out, "bind.", &f.bindings);
    out
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut fields = Vec::new();
        match &self.kind {
            EventKind::GoalPushed { chunk, kind, slots } => {
                fields.push(format!("chunk=@{chunk}"));
                fields.push(format!("kind={kind}"));
                push_slots(&mut fields, "slot.", slots);
            }
            EventKind::GoalPopped { chunk, outcome } => {
                fields.push(format!("chunk=@{chunk}"));
                fields.push(format!("outcome={}", outcome.as_str()));
            }
            EventKind::ChunkWritten {
                chunk,
                mode,
                kind,
                slots,
            } => {
                fields.push(format!("chunk=@{chunk}"));
                fields.push(format!("mode={}", mode.as_str()));
                fields.push(format!("kind={kind}"));
                push_slots(&mut fields, "slot.", slots);
            }
            EventKind::Matched(x) | EventKind::Fired(x) => fields = firing_fields(x),
            EventKind::ExternalAction { verb, args } => {
                fields.push(format!("verb={verb}"));
                push_slots(&mut fields, "arg.", args.iter().map(|(k, v)| (k, v)));
            }
            EventKind::Halted { reason } => fields.push(format!("reason={}", reason.as_str())),
        }
        write!(
            f,
            "{:.6}\t{}\t{}",
            self.time,
            self.kind.name(),
            fields.join(" ")
        )
    }
}

impl fmt::Display for Trace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.events {
            writeln!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Ordered `key=value` fields of one line, consumed front to back.
struct Fields<'a> {
    items: Vec<(&'a str, &'a str)>,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn new(payload: &'a str) -> Result<Self, String> {
        let items = payload
            .split_whitespace()
            .map(|tok| {
                tok.split_once('=')
                    .ok_or_else(|| format!("field `{tok}` is not key=value"))
            })
            .collect::<Result<_, _>>()?;
        Ok(Fields { items, pos: 0 })
    }

    fn take(&mut self, key: &str) -> Result<&'a str, String> {
        match self.items.get(self.pos) {
            Some((k, v)) if *k == key => {
                self.pos += 1;
                Ok(v)
            }
            Some((k, _)) => Err(format!("expected field `{key}`, found `{k}`")),
            None => Err(format!("missing field `{key}`")),
        }
    }

    fn chunk(&mut self, key: &str) -> Result<ChunkId, String> {
        chunk_ref(self.take(key)?)
    }

    /// Remaining fields carrying `prefix`, in order.
    fn prefixed(&mut self, prefix: &str) -> Result<Vec<(String, Value)>, String> {
        let mut out = Vec::new();
        while let Some((k, v)) = self.items.get(self.pos) {
            let Some(name) = k.strip_prefix(prefix) else {
                break;
            };
            let value = parse_value(v).map_err(|e| format!("field `{k}`: {e}"))?;
            out.push((name.to_string(), value));
            self.pos += 1;
        }
        Ok(out)
    }

    fn finish(&self) -> Result<(), String> {
        match self.items.get(self.pos) {
            None => Ok(()),
            Some((k, _)) => Err(format!("unexpected field `{k}`")),
        }
    }
}

fn chunk_ref(text: &str) -> Result<ChunkId, String> {
    match parse_value(text) {
        Ok(Value::Chunk(id)) => Ok(id),
        _ => Err(format!("`{text}` is not a chunk reference")),
    }
}

fn parse_firing(fields: &mut Fields<'_>) -> Result<Firing, String> {
    let production = fields.take("production")?.to_string();
    let value = fields
        .take("value")?
        .parse::<f64>()
        .map_err(|e| format!("value: {e}"))?;
    let chunks_text = fields.take("chunks")?;
    let chunks = if chunks_text.is_empty() {
        Vec::new()
    } else {
        chunks_text
            .split(',')
            .map(chunk_ref)
            .collect::<Result<_, _>>()?
    };
    let bindings = fields.prefixed("bind.")?.into_iter().collect();
    Ok(Firing {
        production,
        value,
        chunks,
        bindings,
    })
}

impl FromStr for TraceEvent {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(3, '\t');
        let time_text = parts.next().unwrap_or_default();
        let kind = parts.next().ok_or("missing event kind")?;
        let payload = parts.next().unwrap_or_default();
        let time: f64 = time_text
            .trim()
            .parse()
            .map_err(|_| format!("bad time `{time_text}`"))?;
        if !time.is_finite() {
            return Err(format!("bad time `{time_text}`"));
        }
        let mut f = Fields::new(payload)?;
        let kind = match kind {
            "GoalPushed" => EventKind::GoalPushed {
                chunk: f.chunk("chunk")?,
                kind: f.take("kind")?.to_string(),
                slots: f.prefixed("slot.")?.into_iter().collect(),
            },
            "GoalPopped" => EventKind::GoalPopped {
                chunk: f.chunk("chunk")?,
                outcome: match f.take("outcome")? {
                    "achieved" => Outcome::Achieved,
                    "failed" => Outcome::Failed,
                    o => return Err(format!("bad outcome `{o}`")),
                },
            },
            "ChunkWritten" => EventKind::ChunkWritten {
                chunk: f.chunk("chunk")?,
                mode: match f.take("mode")? {
                    "create" => WriteMode::Create,
                    "merge" => WriteMode::Merge,
                    "set" => WriteMode::Set,
                    m => return Err(format!("bad mode `{m}`")),
                },
                kind: f.take("kind")?.to_string(),
                slots: f.prefixed("slot.")?.into_iter().collect(),
            },
            "Matched" => EventKind::Matched(parse_firing(&mut f)?),
            "Fired" => EventKind::Fired(parse_firing(&mut f)?),
            "ExternalAction" => EventKind::ExternalAction {
                verb: f.take("verb")?.to_string(),
                args: f.prefixed("arg.")?,
            },
            "Halted" => EventKind::Halted {
                reason: match f.take("reason")? {
                    "done" => HaltReason::Done,
                    "impasse" => HaltReason::Impasse,
                    "cycles" => HaltReason::Cycles,
                    r => return Err(format!("bad halt reason `{r}`")),
                },
            },
            other => return Err(format!("unknown event kind `{other}`")),
        };
        f.finish()?;
        Ok(TraceEvent { time, kind })
    }
}

impl Trace {
    /// Parse trace text. Blank lines are skipped; times must not decrease.
    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let mut events: Vec<TraceEvent> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| TraceError {
                line: i + 1,
                message,
            };
            let event: TraceEvent = line.parse().map_err(err)?;
            if let Some(prev) = events.last() {
                if event.time < prev.time {
                    return Err(err(format!("time {} precedes {}", event.time, prev.time)));
                }
            }
            events.push(event);
        }
        Ok(Trace { events })
    }

    pub fn push(&mut self, time: f64, kind: EventKind) {
        self.events.push(TraceEvent { time, kind });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Names of fired productions, in order.
    pub fn fired(&self) -> Vec<&str> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::Fired(f) => Some(f.production.as_str()),
                _ => None,
            })
            .collect()
    }

    /// External actions, in order.
    pub fn external_actions(&self) -> Vec<(&str, &[(String, Value)])> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::ExternalAction { verb, args } => Some((verb.as_str(), args.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn halt_reason(&self) -> Option<HaltReason> {
        self.events.iter().rev().find_map(|e| match e.kind {
            EventKind::Halted { reason } => Some(reason),
            _ => None,
        })
    }
}
