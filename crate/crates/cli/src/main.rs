//! `ies-sched`: run, compare, sweep and check operator-user pricing schedules.

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use stackelberg_ies::game::{build_model, Mode};
use stackelberg_ies::lp_format::write_lp;
use stackelberg_ies::pipeline::{self, write_atomic, RunManifest, SweepParameter};
use stackelberg_ies::scenario::ScenarioConfig;
use stackelberg_ies::solve::{
    backend_by_name, enumerate_oracle, follower_deviation_test, leader_deviation_test, linear_program, solve_unchecked,
    validate_reserve, SolveOptions,
};
use stackelberg_ies::Error;
use std::path::PathBuf;
use std::process::ExitCode;

/// Exit codes, stable for scripting.
const EXIT_INTERNAL: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_TIME_LIMIT: u8 = 4;
const EXIT_VALIDATION: u8 = 5;

#[derive(Parser, Debug)]
#[command(
    name = "ies-sched",
    version,
    about = "Leader-follower pricing and dispatch for integrated heat and power systems"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

/// Options shared by every verb. Each can also be set through its `IES_*` variable.
#[derive(Args, Debug)]
struct Common {
    /// Scenario JSON file.
    #[arg(long, global = true, env = "IES_SCENARIO")]
    scenario: Option<PathBuf>,
    /// 1 operator alone, 2 operator with network, 3 joint game, 4 users alone.
    #[arg(long, global = true, env = "IES_MODE", default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=4))]
    mode: u8,
    /// Reserve confidence level, overriding the scenario.
    #[arg(long, global = true, env = "IES_CONFIDENCE")]
    confidence: Option<f64>,
    /// Seed of the Monte Carlo and deviation samplers.
    #[arg(long, global = true, env = "IES_SEED", default_value_t = 0)]
    seed: u64,
    /// Solver backend: highs (linked), highs-cli or cbc (LP files).
    #[arg(long, global = true, env = "IES_BACKEND", default_value = "highs")]
    backend: String,
    /// Output directory for tables and summaries.
    #[arg(long, global = true, env = "IES_OUT")]
    out: Option<PathBuf>,
    /// Relative MIP gap.
    #[arg(long, global = true, env = "IES_GAP", default_value_t = 1e-4)]
    gap: f64,
    /// Solver time limit in seconds.
    #[arg(long, global = true, env = "IES_TIME_LIMIT", default_value_t = 300.0)]
    time_limit: f64,
    /// Secant pieces per quadratic cost.
    #[arg(long, global = true, env = "IES_SEGMENTS", default_value_t = 8)]
    segments: usize,
    /// Monte Carlo samples per period for reserve validation.
    #[arg(long, global = true, env = "IES_SAMPLES", default_value_t = 100_000)]
    samples: usize,
}

#[derive(Subcommand, Debug)]
enum Verb {
    /// Solve one mode and write the report bundle.
    Run {
        /// Also write the linear program handed to the solver.
        #[arg(long, env = "IES_WRITE_LP")]
        write_lp: Option<PathBuf>,
    },
    /// Solve several modes and tabulate profits, costs and absorbed renewables.
    Compare {
        #[arg(long, value_delimiter = ',', default_values_t = [1u8, 2, 3, 4])]
        modes: Vec<u8>,
    },
    /// Re-solve for several values of θ or the confidence level.
    Sweep {
        #[arg(long)]
        parameter: SweepParameter,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Solve and run every check: constraints, reserve sampling and unilateral deviations.
    Validate {
        /// Random deviations per player.
        #[arg(long, default_value_t = 1000)]
        deviations: usize,
    },
    /// Enumerate the price grid of a tiny scenario and compare with the joint solution.
    Oracle {
        /// Electricity price step, in the scenario's price unit.
        #[arg(long)]
        mu_step: f64,
        /// Heat price step, in the scenario's price unit.
        #[arg(long)]
        gamma_step: f64,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    reason: &'static str,
    message: String,
    stage: Option<String>,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Schema(_) | Error::Json(_) | Error::InvalidParameter(_) | Error::GridTooLarge { .. } => EXIT_SCHEMA,
            Error::Infeasible { .. } => EXIT_INFEASIBLE,
            Error::TimeLimit => EXIT_TIME_LIMIT,
            Error::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_INTERNAL,
        };
        let stage = match &e {
            Error::Infeasible { stage, .. } => Some(stage.clone()),
            _ => None,
        };
        Failure { code, reason: e.reason(), message: e.to_string(), stage }
    }
}

fn validation_failure(message: String) -> Failure {
    Failure { code: EXIT_VALIDATION, reason: "validation", message, stage: None }
}

impl Common {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            time_limit_s: self.time_limit,
            mip_gap: self.gap,
            pwl_segments: self.segments,
            ..SolveOptions::default()
        }
    }

    fn mode(&self) -> Result<Mode, Failure> {
        Ok(Mode::from_number(self.mode)?)
    }

    fn scenario(&self) -> Result<PathBuf, Failure> {
        let schema = |message: String| Failure { code: EXIT_SCHEMA, reason: "schema", message, stage: None };
        let path = self
            .scenario
            .clone()
            .ok_or_else(|| schema("a scenario is required (--scenario or IES_SCENARIO)".into()))?;
        if !path.is_file() {
            return Err(schema(format!("scenario file {} does not exist", path.display())));
        }
        Ok(path)
    }

    fn manifest(&self) -> Result<RunManifest, Failure> {
        let mut m = RunManifest::new(self.scenario()?, self.mode()?);
        m.confidence = self.confidence;
        m.seed = self.seed;
        m.backend = self.backend.clone();
        m.out = self.out.clone();
        m.solve = self.options();
        m.mc_samples = self.samples;
        Ok(m)
    }

    fn config(&self) -> Result<ScenarioConfig, Failure> {
        let mut cfg = ScenarioConfig::from_path(&self.scenario()?)?;
        if let Some(g) = self.confidence {
            cfg.reserve.confidence = g;
        }
        Ok(cfg)
    }
}

fn emit(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

fn write_text(common: &Common, name: &str, text: &str) -> Result<(), Failure> {
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        write_atomic(&dir.join(name), text)?;
    }
    Ok(())
}

fn run_verb(cli: &Cli) -> Result<(), Failure> {
    let c = &cli.common;
    match &cli.verb {
        Verb::Run { write_lp: lp_path } => {
            let manifest = c.manifest()?;
            if let Some(path) = lp_path {
                let p = manifest.load_scenario()?;
                let built = build_model(&p, manifest.mode.spec(), p.cfg.reserve.encoding)?;
                write_atomic(path, &write_lp(&linear_program(&built.ir, c.segments)?)?)?;
            }
            let bundle = pipeline::run(&manifest)?;
            emit(&json!({ "summary": bundle.summary, "verification": bundle.verification }));
            if !bundle.accepted() {
                let mut msg = bundle.verification.summary();
                if !bundle.reserve.pass {
                    msg.push_str("\nreserve below the confidence level in sampled periods");
                }
                return Err(validation_failure(msg));
            }
            Ok(())
        }
        Verb::Compare { modes } => {
            let modes: Vec<Mode> = modes.iter().map(|&m| Mode::from_number(m)).collect::<Result<_, _>>()?;
            let p = c.manifest()?.load_scenario()?;
            let backend = backend_by_name(&c.backend)?;
            let table = pipeline::compare_modes(&p, &modes, backend.as_ref(), &c.options());
            let text = table.render();
            write_text(c, "comparison.csv", &text)?;
            print!("{text}");
            Ok(())
        }
        Verb::Sweep { parameter, values } => {
            let cfg = c.config()?;
            let backend = backend_by_name(&c.backend)?;
            let table = pipeline::sweep(&cfg, *parameter, values, c.mode()?, backend.as_ref(), &c.options())?;
            let text = table.render();
            write_text(c, "sweep.csv", &text)?;
            print!("{text}");
            Ok(())
        }
        Verb::Validate { deviations } => {
            let p = c.manifest()?.load_scenario()?;
            let backend = backend_by_name(&c.backend)?;
            let opts = c.options();
            let r = solve_unchecked(&p, c.mode()?.spec(), backend.as_ref(), &opts)?;
            let reserve = validate_reserve(&r.solution.reserve_total, &p, c.samples, c.seed);
            let users = r.solution.spec.idr.then(|| follower_deviation_test(&r.solution, &p, *deviations, c.seed));
            let leader = if r.solution.spec.leader_prices {
                Some(leader_deviation_test(&r.solution, &p, *deviations, c.seed, backend.as_ref(), &opts)?)
            } else {
                None
            };
            let complementarity = r.complementarity_residual();
            let ok = r.report.is_ok()
                && reserve.pass
                && complementarity <= 1e-6
                && users.as_ref().is_none_or(|d| d.pass)
                && leader.as_ref().is_none_or(|d| d.pass);
            let report = json!({
                "mode": c.mode,
                "f1": r.solution.f1,
                "f2": r.solution.f2,
                "verification": r.report,
                "reserve": reserve,
                "complementarity_residual": complementarity,
                "follower_deviations": users,
                "leader_deviations": leader,
                "pass": ok,
            });
            write_text(c, "validation.json", &serde_json::to_string_pretty(&report).map_err(Error::from)?)?;
            emit(&report);
            if ok {
                Ok(())
            } else {
                Err(validation_failure("one or more checks failed; see the report".into()))
            }
        }
        Verb::Oracle { mu_step, gamma_step } => {
            let f = c.config()?.power_unit.to_mw();
            let p = c.manifest()?.load_scenario()?;
            let backend = backend_by_name(&c.backend)?;
            let opts = c.options();
            let oracle = enumerate_oracle(&p, true, mu_step / f, gamma_step / f, backend.as_ref(), &opts)?;
            let joint = stackelberg_ies::solve::solve(&p, Mode::Joint.spec(), backend.as_ref(), &opts)?;
            let tolerance = oracle.pwl_error_bound + joint.solution.pwl_error_bound + oracle.grid_sensitivity;
            let difference = joint.solution.f1 - oracle.profit;
            let agree = difference.abs() <= tolerance + 1e-6;
            emit(&json!({
                "oracle": {
                    "mu": oracle.mu,
                    "gamma": oracle.gamma,
                    "response": oracle.response,
                    "profit": oracle.profit,
                    "evaluations": oracle.evaluations,
                    "infeasible_points": oracle.infeasible_points,
                    "grid_sensitivity": oracle.grid_sensitivity,
                    "pwl_error_bound": oracle.pwl_error_bound,
                },
                "joint": { "mu": joint.solution.mu, "gamma": joint.solution.gamma, "f1": joint.solution.f1 },
                "difference": difference,
                "tolerance": tolerance,
                "agree": agree,
            }));
            if agree {
                Ok(())
            } else {
                Err(validation_failure(format!("joint profit differs from the grid optimum by {difference}")))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("IES_LOG", "warn")).init();
    let cli = Cli::parse();
    match run_verb(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = json!({ "error": f.reason, "message": f.message, "stage": f.stage, "exit_code": f.code });
            eprintln!("{body}");
            ExitCode::from(f.code)
        }
    }
}
