//! `actr`: run models, compile productions from traces, and run the
//! practice and spacing experiments.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use actr_core::compile::{compose, proceduralize};
use actr_core::declarative::DecayMode;
use actr_core::engine::Engine;
use actr_core::experiments::{power_law, spacing, Schedule};
use actr_core::model::Model;
use actr_core::params::Parameters;
use actr_core::trace::{HaltReason, Trace};

#[derive(Parser)]
#[command(name = "actr", version, about = "ACT-R style production-system engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a model until its goal stack empties, an impasse, or the cycle limit.
    Run {
        model: PathBuf,
        /// Print the full event trace instead of the external actions.
        #[arg(long)]
        trace: bool,
        #[arg(long, value_name = "N")]
        max_cycles: Option<u64>,
        /// Override a parameter (applied after the model file; last wins).
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Simulation experiments; CSV on stdout or to --out.
    #[command(subcommand)]
    Experiment(Experiment),
    /// Append a compiled production to a model and print the result.
    Compile {
        model: PathBuf,
        /// Trace written by `actr run --trace` on the same model.
        trace: PathBuf,
        #[arg(long, value_enum)]
        rule: RuleKind,
        /// For compose: the two productions, in firing order.
        productions: Vec<String>,
        /// Name of the new production.
        #[arg(long)]
        name: Option<String>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleKind {
    Proceduralize,
    Compose,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    As91,
    Pa08,
    Constant,
}

#[derive(Subcommand)]
enum Experiment {
    /// Retrieval latency over equally spaced practice under constant decay.
    Powerlaw {
        #[arg(long, default_value_t = 0.5)]
        d: f64,
        #[arg(long, default_value_t = 10.0)]
        dt: f64,
        #[arg(long, default_value_t = 100)]
        events: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Activation at test time for practice schedules with aligned final events.
    Spacing {
        #[arg(long, value_enum, default_value_t = Mode::As91)]
        mode: Mode,
        /// NAME:GAPxCOUNT, e.g. massed:1x10; at least two, equal counts.
        #[arg(long = "schedule", required = true)]
        schedules: Vec<String>,
        /// Delay between the final practice event and the test, in seconds.
        #[arg(long)]
        test_time: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
}

fn load_model(path: &Path) -> Result<Model> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Model::parse(&text).with_context(|| format!("{}", path.display()))
}

fn apply_params(params: &mut Parameters, overrides: &[String]) -> Result<()> {
    for o in overrides {
        params.apply_assignment(o)?;
    }
    params.validate()?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_run(
    model: &Path,
    trace: bool,
    max_cycles: Option<u64>,
    overrides: &[String],
) -> Result<ExitCode> {
    let mut model = load_model(model)?;
    apply_params(&mut model.params, overrides)?;
    if let Some(n) = max_cycles {
        model.params.max_cycles = n;
        model.params.validate()?;
    }
    let mut engine = Engine::new(&model)?;
    let reason = engine.run()?;
    let mut out = String::new();
    if trace {
        out = engine.trace().to_string();
    } else {
        for a in engine.environment() {
            out.push_str(&a.verb);
            for (k, v) in &a.args {
                out.push_str(&format!(" {k}={v}"));
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "halted: {} after {} cycles\n",
            reason.as_str(),
            engine.cycles()
        ));
    }
    emit(None, &out)?;
    Ok(match reason {
        HaltReason::Impasse => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

fn cmd_compile(
    model_path: &Path,
    trace_path: &Path,
    kind: RuleKind,
    prods: &[String],
    name: Option<String>,
) -> Result<()> {
    let mut model = load_model(model_path)?;
    let text = fs::read_to_string(trace_path)
        .with_context(|| format!("cannot read {}", trace_path.display()))?;
    let trace = Trace::parse(&text).with_context(|| format!("{}", trace_path.display()))?;
    let rule = match kind {
        RuleKind::Proceduralize => {
            if !prods.is_empty() {
                bail!("proceduralize takes no production names");
            }
            let name = name.unwrap_or_else(|| "proceduralized".into());
            proceduralize(&trace, None, &name)?
        }
        RuleKind::Compose => {
            let [a, b] = prods else {
                bail!("compose needs exactly two production names");
            };
            let fired = trace.fired();
            if !fired.windows(2).any(|w| w[0] == a && w[1] == b) {
                bail!("`{a}` never fires immediately before `{b}` in the trace");
            }
            let pa = model
                .rule(a)
                .ok_or_else(|| anyhow!("unknown production `{a}`"))?;
            let pb = model
                .rule(b)
                .ok_or_else(|| anyhow!("unknown production `{b}`"))?;
            let name = name.unwrap_or_else(|| format!("{a}-{b}"));
            compose(pa, pb, &name)?
        }
    };
    if model.rule(&rule.name).is_some() {
        bail!("a production named `{}` already exists", rule.name);
    }
    model.rules.push(rule);
    model
        .validate()
        .map_err(|e| anyhow!("compiled model is invalid: {e}"))?;
    emit(None, &model.to_string())
}

fn cmd_powerlaw(
    d: f64,
    dt: f64,
    events: usize,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    let mut params = Parameters::default();
    apply_params(&mut params, overrides)?;
    let result = power_law(d, dt, events, &params)?;
    let mut csv = String::from("k,age_profile,latency\n");
    for r in &result.rows {
        csv.push_str(&format!("{},{},{}\n", r.k, r.age, r.latency));
    }
    let slope = format!("slope={:.6}", result.slope);
    match out {
        Some(_) => {
            emit(out, &csv)?;
            println!("{slope}");
        }
        None => {
            emit(None, &csv)?;
            eprintln!("{slope}");
        }
    }
    Ok(())
}

fn cmd_spacing(
    mode: Mode,
    schedules: &[String],
    test_delay: f64,
    out: Option<&Path>,
    overrides: &[String],
) -> Result<()> {
    let mut params = Parameters::default();
    apply_params(&mut params, overrides)?;
    let decay = match mode {
        Mode::As91 => DecayMode::SpacingAs91 {
            d1: params.as91_d1,
            b: params.as91_b,
        },
        Mode::Pa08 => DecayMode::SpacingPa08 {
            c: params.pa08_c,
            alpha: params.pa08_alpha,
        },
        Mode::Constant => DecayMode::Constant { d: params.decay },
    };
    let schedules: Vec<Schedule> = schedules
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()?;
    let rows = spacing(decay, &schedules, test_delay, &params)?;
    let mut csv = String::from("schedule,activation,recall_prob\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            r.schedule, r.activation, r.recall_prob
        ));
    }
    emit(out, &csv)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            model,
            trace,
            max_cycles,
            params,
        } => cmd_run(&model, trace, max_cycles, &params),
        Command::Compile {
            model,
            trace,
            rule,
            productions,
            name,
        } => cmd_compile(&model, &trace, rule, &productions, name).map(|_| ExitCode::SUCCESS),
        Command::Experiment(Experiment::Powerlaw {
            d,
            dt,
            events,
            out,
            params,
        }) => cmd_powerlaw(d, dt, events, out.as_deref(), &params).map(|_| ExitCode::SUCCESS),
        Command::Experiment(Experiment::Spacing {
            mode,
            schedules,
            test_time,
            out,
            params,
        }) => cmd_spacing(mode, &schedules, test_time, out.as_deref(), &params)
            .map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
