//! Shared oracles and generators for the integration tests.
//!
//! Everything here is written independently of the library's own numerics
//! and matcher so the tests compare two implementations, not one.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use actr_core::association::{Context, NoAssociations};
use actr_core::declarative::{Chunk, DeclarativeMemory, DeclarativeParams};
use actr_core::model::Model;
use actr_core::procedural::{
    match_productions, Action, Guard, LatencyParams, MatchEnv, Pattern, Production, Rule, SlotTest,
};
use actr_core::utility::UtilityStats;
use actr_core::value::{BinOp, Bindings, ChunkId, CmpOp, Expr, Number, Value};
use rand_chacha::ChaCha8Rng;

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name)
}

pub fn load_model(name: &str) -> Model {
    let text = std::fs::read_to_string(model_path(name)).expect("bundled model");
    Model::parse(&text).expect("bundled model parses")
}

pub const BUNDLED_MODELS: [&str; 3] = ["addition.actr", "addition-carry.actr", "equation.actr"];

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and the embedded 7-point Gauss estimate.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let pair = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * pair;
        if i % 2 == 1 {
            gauss += WG[i / 2] * pair;
        }
    }
    (kronrod * h, gauss * h)
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (k, g) = gk15(f, a, b);
    if (k - g).abs() <= tol || depth == 0 {
        return k;
    }
    let m = 0.5 * (a + b);
    adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
}

/// Adaptive Gauss-Kronrod quadrature of `f` over `[a, b]` to about
/// `rel_tol` relative accuracy.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let rough = gk15(&f, a, b).0.abs();
    let tol = (rel_tol * rough).max(1e-300);
    adapt(&f, a, b, tol, 50)
}

/// `Z_t(x; V)`, written out from its definition.
pub fn z_oracle(x: f64, v: f64, g: f64, t: f64) -> f64 {
    let s = t * (g - v);
    (-(g - x) / s).exp() / s
}

/// Expected gain by quadrature of `∫_V^G (x - V) Z_t(x; V) dx`.
pub fn gain_by_quadrature(v: f64, g: f64, t: f64) -> f64 {
    integrate(|x| (x - v) * z_oracle(x, v, g, t), v, g, 1e-13)
}

/// `n` log-spaced points from `lo` to `hi`.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

// ---------------------------------------------------------------------------
// Brute-force matcher
// ---------------------------------------------------------------------------

fn oracle_eval(e: &Expr, b: &Bindings) -> Option<Value> {
    match e {
        Expr::Const(v) => Some(v.clone()),
        Expr::Var(v) => b.get(v).cloned(),
        Expr::Bin(op, l, r) => {
            let (Value::Num(x), Value::Num(y)) = (oracle_eval(l, b)?, oracle_eval(r, b)?) else {
                return None;
            };
            // generated operands are tiny, so plain arithmetic cannot overflow
            let z: Number = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div if y == Number::from_integer(0) => return None,
                BinOp::Div => x / y,
            };
            Some(Value::Num(z))
        }
    }
}

fn oracle_guard(g: &Guard, b: &mut Bindings) -> bool {
    if g.op == CmpOp::Assign {
        if let Expr::Var(v) = &g.lhs {
            if !b.contains_key(v) {
                let Some(value) = oracle_eval(&g.rhs, b) else {
                    return false;
                };
                b.insert(v.clone(), value);
                return true;
            }
        }
    }
    let (Some(x), Some(y)) = (oracle_eval(&g.lhs, b), oracle_eval(&g.rhs, b)) else {
        return false;
    };
    match g.op {
        CmpOp::Assign | CmpOp::Eq => x == y,
        CmpOp::Ne => x != y,
        op => {
            let (Value::Num(x), Value::Num(y)) = (x, y) else {
                return false;
            };
            match op {
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                _ => x >= y,
            }
        }
    }
}

fn oracle_bind(b: &mut Bindings, var: &str, value: &Value) -> bool {
    match b.get(var) {
        Some(v) => v == value,
        None => {
            b.insert(var.to_string(), value.clone());
            true
        }
    }
}

fn oracle_unify(p: &Pattern, c: &Chunk, b: &mut Bindings) -> bool {
    if p.kind != c.kind {
        return false;
    }
    if let Some(v) = &p.binder {
        if !oracle_bind(b, v, &Value::Chunk(c.id.clone())) {
            return false;
        }
    }
    p.slots
        .iter()
        .all(|(slot, test)| match (c.slots.get(slot), test) {
            (None, _) => false,
            (Some(_), SlotTest::Wildcard) => true,
            (Some(v), SlotTest::Const(k)) => v == k,
            (Some(v), SlotTest::Var(x)) => oracle_bind(b, x, v),
        })
}

/// Every `(bindings, chunk tuple)` satisfying `rule` with `goal` on top of
/// the stack, found by trying every tuple of chunks in memory.
pub fn brute_force(
    rule: &Rule,
    goal: &ChunkId,
    memory: &DeclarativeMemory,
) -> Vec<(Bindings, Vec<ChunkId>)> {
    let all: Vec<&Chunk> = memory.chunks().collect();
    let Some(goal_chunk) = memory.get(goal) else {
        return vec![];
    };
    let n = rule.conditions.len();
    if n == 0 {
        return vec![];
    }
    let mut out = Vec::new();
    let total = all.len().pow((n - 1) as u32);
    for code in 0..total {
        let mut tuple = vec![goal_chunk];
        let mut rest = code;
        for _ in 1..n {
            tuple.push(all[rest % all.len()]);
            rest /= all.len();
        }
        let mut b = Bindings::new();
        if !rule
            .conditions
            .iter()
            .zip(&tuple)
            .all(|(p, c)| oracle_unify(p, c, &mut b))
        {
            continue;
        }
        if !rule.guards.iter().all(|g| oracle_guard(g, &mut b)) {
            continue;
        }
        let blocked = rule
            .negations
            .iter()
            .any(|neg| all.iter().any(|c| oracle_unify(neg, c, &mut b.clone())));
        if blocked {
            continue;
        }
        out.push((b, tuple.iter().map(|c| c.id.clone()).collect()));
    }
    out.sort();
    out
}

// ---------------------------------------------------------------------------
// Random small instances
// ---------------------------------------------------------------------------

pub struct Instance {
    pub memory: DeclarativeMemory,
    pub goal: ChunkId,
    pub productions: Vec<Production>,
}

const KINDS: [&str; 3] = ["a", "b", "c"];
const SLOTS: [&str; 3] = ["x", "y", "z"];
const VARS: [&str; 4] = ["u", "v", "w", "h"];

fn random_value(rng: &mut impl Rng, n_chunks: usize) -> Value {
    match rng.gen_range(0..10) {
        0..=5 => Value::int(rng.gen_range(0..4)),
        6 | 7 => Value::sym(*["p", "q"].choose(rng).unwrap()),
        _ => Value::chunk(format!("c{}", rng.gen_range(0..n_chunks))),
    }
}

fn random_pattern(rng: &mut impl Rng, kind: &str, n_chunks: usize, vars: &[&str]) -> Pattern {
    let mut p = Pattern::new(kind);
    if rng.gen_bool(0.4) {
        p = p.bind(*vars.choose(rng).unwrap());
    }
    let mut slots = SLOTS.to_vec();
    slots.shuffle(rng);
    for slot in slots.into_iter().take(rng.gen_range(0..=2)) {
        let test = match rng.gen_range(0..10) {
            0..=2 => SlotTest::Const(random_value(rng, n_chunks)),
            3..=7 => SlotTest::Var(vars.choose(rng).unwrap().to_string()),
            _ => SlotTest::Wildcard,
        };
        p = p.slot(slot, test);
    }
    p
}

fn random_operand(rng: &mut impl Rng, bound: &[String]) -> Expr {
    match rng.gen_range(0..3) {
        0 => Expr::num(rng.gen_range(0..4)),
        1 => Expr::var(bound.choose(rng).unwrap().clone()),
        _ => Expr::bin(
            BinOp::Add,
            Expr::var(bound.choose(rng).unwrap().clone()),
            Expr::num(1),
        ),
    }
}

fn random_rule(rng: &mut impl Rng, name: String, goal_kind: &str, n_chunks: usize) -> Rule {
    let n = rng.gen_range(1..=3);
    let mut conditions = Vec::new();
    for i in 0..n {
        let kind = if i == 0 && rng.gen_bool(0.8) {
            goal_kind
        } else {
            *KINDS.choose(rng).unwrap()
        };
        conditions.push(random_pattern(rng, kind, n_chunks, &VARS));
    }
    let mut bound: Vec<String> = Vec::new();
    for p in &conditions {
        for v in p.vars() {
            if !bound.iter().any(|b| b == v) {
                bound.push(v.to_string());
            }
        }
    }
    let mut guards = Vec::new();
    if !bound.is_empty() {
        for _ in 0..rng.gen_range(0..=2) {
            let ops = [
                CmpOp::Assign,
                CmpOp::Eq,
                CmpOp::Ne,
                CmpOp::Lt,
                CmpOp::Le,
                CmpOp::Gt,
                CmpOp::Ge,
            ];
            let op = *ops.choose(rng).unwrap();
            let lhs = if op == CmpOp::Assign && rng.gen_bool(0.6) && !bound.iter().any(|b| b == "n")
            {
                bound.push("n".into());
                Expr::var("n")
            } else {
                Expr::var(bound.choose(rng).unwrap().clone())
            };
            let rhs = random_operand(rng, &bound);
            guards.push(Guard::new(lhs, op, rhs));
        }
    }
    let mut negations = Vec::new();
    if rng.gen_bool(0.3) {
        let mut pool: Vec<&str> = bound.iter().map(String::as_str).collect();
        pool.push("free");
        let kind = *KINDS.choose(rng).unwrap();
        negations.push(random_pattern(rng, kind, n_chunks, &pool));
    }
    Rule {
        name,
        conditions,
        guards,
        negations,
        actions: vec![Action::Pop],
    }
}

/// A memory of at most 8 chunks and at most 5 productions of at most 3
/// positive patterns each.
pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n_chunks = rng.gen_range(1..=8);
    let mut defs = Vec::new();
    for i in 0..n_chunks {
        let kind = KINDS.choose(rng).unwrap().to_string();
        let mut slots = BTreeMap::new();
        for s in SLOTS {
            if rng.gen_bool(0.7) {
                slots.insert(s.to_string(), random_value(rng, n_chunks));
            }
        }
        defs.push((ChunkId::new(format!("c{i}")), kind, slots));
    }
    let goal_kind = defs[0].1.clone();
    let mut memory = DeclarativeMemory::new(DeclarativeParams::default());
    memory.insert_all(defs, 0.0).expect("references resolve");
    for i in 0..n_chunks {
        let id = ChunkId::new(format!("c{i}"));
        for k in 0..rng.gen_range(0..3) {
            memory
                .record_use(&id, 1.0 + k as f64 + rng.gen::<f64>())
                .unwrap();
        }
    }
    let productions = (0..rng.gen_range(1..=5))
        .map(|i| {
            let rule = random_rule(rng, format!("r{i}"), &goal_kind, n_chunks);
            Production::new(rule, UtilityStats::default(), 0.0, 0.0)
        })
        .collect();
    Instance {
        memory,
        goal: ChunkId::new("c0"),
        productions,
    }
}

/// Compare the library matcher with brute force on one instance. Returns
/// the number of instantiations on success.
pub fn check_matcher(inst: &Instance) -> Result<usize, String> {
    let ctx = Context::empty();
    let env = MatchEnv {
        memory: &inst.memory,
        context: &ctx,
        strengths: &NoAssociations,
        latency: LatencyParams::default(),
    };
    let now = 10.0;
    let found = match_productions(&inst.goal, &inst.productions, &env, now);
    let mut total = 0;
    for (idx, prod) in inst.productions.iter().enumerate() {
        let got: Vec<(Bindings, Vec<ChunkId>)> = found
            .iter()
            .filter(|m| m.production == idx)
            .map(|m| (m.bindings.clone(), m.matched.clone()))
            .collect();
        let want = brute_force(&prod.rule, &inst.goal, &inst.memory);
        if got != want {
            return Err(format!(
                "{}\nmatcher: {got:?}\noracle:  {want:?}",
                prod.rule
            ));
        }
        total += want.len();
    }
    for m in &found {
        if !(m.available_time == now && m.match_time >= now && m.match_time.is_finite()) {
            return Err(format!(
                "bad timing on {}: {:?}",
                m.name,
                (m.available_time, m.match_time)
            ));
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Association logs
// ---------------------------------------------------------------------------

/// One firing: the matched chunks and the context elements present.
pub type Firing = (BTreeSet<ChunkId>, Vec<ChunkId>);

/// Uniform-weight context over `ids`.
pub fn ctx(ids: &[ChunkId]) -> Context {
    let w = 1.0 / ids.len().max(1) as f64;
    Context::new(ids.iter().map(|id| (id.clone(), w)).collect()).unwrap()
}

pub fn ids(n: usize) -> Vec<ChunkId> {
    (0..n).map(|k| ChunkId::new(format!("k{k}"))).collect()
}

/// Firings in which every chunk is matched with probability 0.4 and in the
/// context with probability 0.3, independently.
pub fn random_log(rng: &mut ChaCha8Rng, pool: &[ChunkId], len: usize) -> Vec<Firing> {
    (0..len)
        .map(|_| {
            let matched = pool.iter().filter(|_| rng.gen_bool(0.4)).cloned().collect();
            let context = pool.iter().filter(|_| rng.gen_bool(0.3)).cloned().collect();
            (matched, context)
        })
        .collect()
}

/// `s_ij` recounted from the complete log with Laplace smoothing.
pub fn replay_strength(log: &[Firing], i: &ChunkId, j: &ChunkId) -> f64 {
    let (a, b) = (1.0, 1.0);
    let n = log.len() as f64;
    let with_j = log.iter().filter(|(_, c)| c.contains(j)).count() as f64;
    let fired_i = log.iter().filter(|(m, _)| m.contains(i)).count() as f64;
    let both = log
        .iter()
        .filter(|(m, c)| m.contains(i) && c.contains(j))
        .count() as f64;
    ((both + a) / (with_j + a + b)).ln() - ((fired_i + a) / (n + a + b)).ln()
}
