//! Compiled productions behave like the episodes they were built from.

mod common;

use actr_core::compile::{compose, proceduralize, CompileError};
use actr_core::trace::{HaltReason, Trace};
use actr_core::value::{Number, Value};
use actr_core::{run_model, Engine, Model};

use common::load_model;

fn only(model: &Model, rule: actr_core::procedural::Rule) -> Model {
    let mut m = model.clone();
    m.rules = vec![rule];
    m
}

#[test]
fn proceduralized_addition_fires_alone_to_the_same_answer() {
    for name in ["addition.actr", "addition-carry.actr"] {
        let model = load_model(name);
        let (original, _) = run_model(&model).unwrap();
        // go through the serialized trace, as the command line does
        let trace = Trace::parse(&original.trace().to_string()).unwrap();
        let rule = proceduralize(&trace, None, "add-all").unwrap();
        let (compiled, reason) = run_model(&only(&model, rule)).unwrap();
        assert_eq!(reason, HaltReason::Done, "{name}");
        assert_eq!(compiled.trace().fired(), ["add-all"], "{name}");
        assert_eq!(compiled.environment(), original.environment(), "{name}");
    }
}

#[test]
fn proceduralized_rule_is_specific_to_its_problem() {
    let (original, _) = run_model(&load_model("addition.actr")).unwrap();
    let rule = proceduralize(original.trace(), None, "add-all").unwrap();
    // on 36 + 27 the constant goal slots no longer match: impasse at once
    let (other, reason) = run_model(&only(&load_model("addition-carry.actr"), rule)).unwrap();
    assert_eq!(reason, HaltReason::Impasse);
    assert!(other.environment().is_empty());
}

#[test]
fn composed_equation_rule_matches_the_two_step_run() {
    let model = load_model("equation.actr");
    let (two_step, reason) = run_model(&model).unwrap();
    assert_eq!(reason, HaltReason::Done);
    assert_eq!(two_step.trace().fired(), ["Pmul5", "Pdiv4"]);

    let rule = compose(
        model.rule("Pmul5").unwrap(),
        model.rule("Pdiv4").unwrap(),
        "Pmul5/4",
    )
    .unwrap();
    let text = rule.to_string();
    assert!(
        text.contains("(?a * (5/4))") && text.contains("(?r * (5/4))"),
        "{text}"
    );

    let (one_step, reason) = run_model(&only(&model, rule)).unwrap();
    assert_eq!(reason, HaltReason::Done);
    assert_eq!(one_step.trace().fired(), ["Pmul5/4"]);
    assert_eq!(one_step.environment(), two_step.environment());
    let solution = &two_step.environment()[0];
    assert_eq!(solution.verb, "solution");
    assert_eq!(
        solution.args,
        [("x".to_string(), Value::Num(Number::new(5, 4)))]
    );
    for c in two_step.memory().chunks() {
        assert_eq!(
            one_step.memory().get(&c.id).unwrap().slots,
            c.slots,
            "{}",
            c.id
        );
    }
}

#[test]
fn compiled_rules_start_fresh() {
    let mut model = load_model("equation.actr");
    let rule = compose(
        model.rule("Pmul5").unwrap(),
        model.rule("Pdiv4").unwrap(),
        "fast",
    )
    .unwrap();
    model.rules.push(rule);
    let engine = Engine::new(&model).unwrap();
    let p = engine
        .productions()
        .iter()
        .find(|p| p.name() == "fast")
        .unwrap();
    assert!(p.fire_events.is_empty());
    assert_eq!(p.strength(5.0), model.params.initial_strength);
    assert_eq!(p.utility, model.params.fresh_utility());
}

#[test]
fn chaining_that_cannot_happen_is_refused() {
    let model = load_model("equation.actr");
    let mul = model.rule("Pmul5").unwrap();
    // after Pmul5 the goal says step=scaled, which Pmul5 itself rejects
    assert!(matches!(
        compose(mul, mul, "twice"),
        Err(CompileError::Composition(_))
    ));
    // Pdiv4 pops its goal, so nothing can follow it on the same goal
    let div = model.rule("Pdiv4").unwrap();
    assert!(matches!(
        compose(div, mul, "after-pop"),
        Err(CompileError::Composition(_))
    ));
}

#[test]
fn composing_with_identity_keeps_actions() {
    let model = load_model("equation.actr");
    let mul = model.rule("Pmul5").unwrap();
    let identity = Model::parse("[productions]\nrule id\n  if solve\nend\n[goal]\n")
        .unwrap()
        .rules
        .remove(0);
    let composed = compose(mul, &identity, "same").unwrap();
    assert_eq!(composed.actions, mul.actions);
    assert_eq!(composed.conditions, mul.conditions);
}

#[test]
fn empty_episode_is_refused() {
    let trace = Trace::parse("").unwrap();
    assert!(matches!(
        proceduralize(&trace, None, "x"),
        Err(CompileError::Episode(_))
    ));
}
