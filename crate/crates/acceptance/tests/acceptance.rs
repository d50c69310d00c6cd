//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

use stackelberg_ies::game::{tie_groups, Mode};
use stackelberg_ies::pipeline::{compare_modes, sweep, SweepParameter};
use stackelberg_ies::scenario::{PreparedScenario, ScenarioConfig};
use stackelberg_ies::solve::{
    enumerate_oracle, follower_deviation_test, leader_deviation_test, solve, validate_reserve, SolveOptions,
    SolveResult,
};
use stackelberg_ies::thermal::{pipe_delay, pipe_loss, pmv, PipelineSpec};
use stackelberg_ies::HighsBackend;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

const MC_SAMPLES: usize = 100_000;
const DEVIATION_SAMPLES: usize = 1000;
const SEED: u64 = 20_240_611;

/// Length (km), inner diameter (m), mass flow (kg/s) and reported flow time (h).
const PIPELINES: [(&str, f64, f64, f64, f64); 6] = [
    ("DHS1:1-4", 6.0, 0.6, 300.0, 1.57),
    ("DHS1:1-5", 6.5, 0.7, 350.0, 1.98),
    ("DHS1:1-6", 7.5, 0.6, 300.0, 1.96),
    ("DHS2:1-4", 7.5, 0.5, 270.0, 1.51),
    ("DHS2:1-5", 7.0, 0.6, 300.0, 1.83),
    ("DHS2:1-6", 7.5, 0.7, 350.0, 2.29),
];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome { pass: false, detail: format!("error: {e}") }
    }
}

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    ScenarioConfig::from_path(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn prepare(cfg: &ScenarioConfig) -> PreparedScenario {
    PreparedScenario::new(cfg).expect("bundled scenarios prepare")
}

fn pipeline(length_km: f64, diameter_m: f64, mass_flow: f64) -> PipelineSpec<f64> {
    PipelineSpec { length_km, diameter_m, mass_flow, thermal_resistance: 20.0, ambient: 0.0 }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (_, l, d, g, reported) in PIPELINES {
        match pipe_delay(&pipeline(l, d, g), 1.0) {
            Ok(delay) => worst = worst.max((delay.flow_time - reported).abs()),
            Err(e) => return Outcome::error(e),
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst <= 0.01 && elapsed < Duration::from_millis(1),
        format!("max |flow time - reported| = {worst:.4} h, {elapsed:?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut outside = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (name, l, d, g, _) in PIPELINES {
        for t_sw in [90.0, 100.0] {
            let loss = match pipe_loss(&pipeline(l, d, g), t_sw) {
                Ok(x) => x,
                Err(e) => return Outcome::error(e),
            };
            lo = lo.min(loss);
            hi = hi.max(loss);
            if !(0.15..=0.20).contains(&loss) {
                outside.push(format!("{name}@{t_sw}={loss:.4}"));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        outside.is_empty() && elapsed < Duration::from_millis(1),
        format!("losses span [{lo:.4}, {hi:.4}] MW; outside [0.15, 0.20]: {outside:?}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut cfg = scenario("case1_like");
    let mut previous: Option<Vec<f64>> = None;
    let mut notes = Vec::new();
    let mut pass = true;
    for g in [0.85, 0.90, 0.95] {
        cfg.reserve.confidence = g;
        let p = prepare(&cfg);
        let reserve: Vec<f64> = p.reserve_rows.iter().map(|r| r.min_reserve()).collect();
        let check = validate_reserve(&reserve, &p, MC_SAMPLES, SEED);
        let worst = check.periods.iter().map(|c| c.estimate.probability).fold(f64::INFINITY, f64::min);
        let monotone = previous.as_ref().is_none_or(|prev| prev.iter().zip(&reserve).all(|(a, b)| b >= a));
        pass &= check.pass && monotone;
        notes.push(format!("G={g}: total {:.2} MW, worst MC {worst:.4}", reserve.iter().sum::<f64>()));
        previous = Some(reserve);
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    Outcome::new(pass, format!("{}; {elapsed:.1?}", notes.join("; ")))
}

/// Closed-form reaction of the users: heat cut `clamp(γ/2θ, 0, ub)` and the shiftable
/// total poured into the cheapest periods.
fn closed_form_response(p: &PreparedScenario, mu: &[f64], gamma: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cut = gamma.iter().zip(&p.cut_max).map(|(g, ub)| (g / (2.0 * p.theta())).max(0.0).min(*ub)).collect();
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[a].partial_cmp(&mu[b]).unwrap());
    let mut shift = p.shift_min.clone();
    let mut left = p.shift_total - p.shift_min.iter().sum::<f64>();
    for t in order {
        let add = (p.shift_max[t] - p.shift_min[t]).min(left.max(0.0));
        shift[t] += add;
        left -= add;
    }
    (shift, cut)
}

fn response_error(p: &PreparedScenario, r: &SolveResult) -> f64 {
    let s = &r.solution;
    let (shift, cut) = closed_form_response(p, &s.mu, &s.gamma);
    let cut_err = s.cut.iter().zip(&cut).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let shift_err = tie_groups(&s.mu)
        .iter()
        .map(|g| (g.iter().map(|&t| s.shiftable[t] - shift[t]).sum::<f64>()).abs())
        .fold(0.0, f64::max);
    cut_err.max(shift_err)
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let cfg = scenario("toy_t3");
    let p = prepare(&cfg);
    let opts = SolveOptions { pwl_segments: 32, ..SolveOptions::default() };
    let joint = match solve(&p, Mode::Joint.spec(), &HighsBackend, &opts) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    // Steps of 0.00185 and 0.00095 $/kWh, i.e. twenty steps across each price range.
    let oracle = match enumerate_oracle(&p, true, 1.85, 0.95, &HighsBackend, &opts) {
        Ok(o) => o,
        Err(e) => return Outcome::error(e),
    };
    let tolerance = joint.solution.pwl_error_bound + oracle.pwl_error_bound + oracle.grid_sensitivity;
    let gap = (joint.solution.f1 - oracle.profit).abs();
    let response = response_error(&p, &joint);
    let elapsed = start.elapsed();
    Outcome::new(
        gap <= tolerance && response <= 1e-5 && elapsed < Duration::from_secs(60),
        format!(
            "KKT F1 {:.4} vs grid {:.4} ({} points): |diff| {gap:.2e} <= {tolerance:.4}; response error {response:.2e} MW; {elapsed:.1?}",
            joint.solution.f1, oracle.profit, oracle.evaluations
        ),
    )
}

fn equilibrium_checks(name: &str) -> Result<(bool, String), stackelberg_ies::Error> {
    let p = prepare(&scenario(name));
    let opts = SolveOptions::default();
    let r = solve(&p, Mode::Joint.spec(), &HighsBackend, &opts)?;
    let s = &r.solution;
    let t = p.horizon() as f64;
    let pr = &p.cfg.prices;
    let avg_err =
        (s.mu.iter().sum::<f64>() - t * pr.mu_avg).abs().max((s.gamma.iter().sum::<f64>() - t * pr.gamma_avg).abs());
    let comp = r.complementarity_residual();
    let users = follower_deviation_test(s, &p, DEVIATION_SAMPLES, SEED);
    let leader = leader_deviation_test(s, &p, DEVIATION_SAMPLES, SEED, &HighsBackend, &opts)?;
    let pmv_ok = s.indoor_temperature(&p).iter().zip(&p.hours).all(|(&t_in, &h)| {
        let bound = p.cfg.pmv.bound_at(h);
        pmv(&p.cfg.pmv, t_in).abs() <= bound + 1e-9
    });
    let pass = avg_err <= 1e-6 && comp <= 1e-6 && users.pass && leader.pass && pmv_ok;
    Ok((
        pass,
        format!(
            "{name}: average error {avg_err:.1e}, complementarity {comp:.1e}, users gain {:.2e}, leader gain {:.3} <= {:.3} ({} infeasible), PMV {}",
            users.worst_gain,
            leader.worst_gain,
            leader.tolerance,
            leader.skipped,
            if pmv_ok { "ok" } else { "violated" }
        ),
    ))
}

fn criterion_5() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for name in ["toy_t3", "case2_real"] {
        match equilibrium_checks(name) {
            Ok((ok, note)) => {
                pass &= ok;
                notes.push(note);
            }
            Err(e) => return Outcome::error(format!("{name}: {e}")),
        }
    }
    Outcome::new(pass, notes.join("; "))
}

fn criterion_6() -> Outcome {
    let p = prepare(&scenario("case2_real"));
    let table = compare_modes(&p, &Mode::ALL, &HighsBackend, &SolveOptions::default());
    let mut f1 = [0.0; 4];
    let mut absorbed = [0.0; 4];
    for (i, mode) in Mode::ALL.iter().enumerate() {
        let row = table.row(*mode).expect("every mode is tabulated");
        match (row.f1, row.absorbed_renewables) {
            (Some(f), Some(a)) => {
                f1[i] = f;
                absorbed[i] = a;
            }
            _ => return Outcome::error(format!("mode {}: {}", mode.number(), row.error.clone().unwrap_or_default())),
        }
    }
    let tol = 1e-6;
    let absorbed_ok = absorbed[2] >= absorbed[1] - tol && absorbed[1] >= absorbed[0] - tol;
    let profit_ok = f1[3] <= f1[2] + tol && f1[2] <= f1[1] + tol;
    Outcome::new(
        absorbed_ok && profit_ok,
        format!(
            "absorbed MWh 1/2/3 = {:.3}/{:.3}/{:.3}; F1 $ 2/3/4 = {:.2}/{:.2}/{:.2}",
            absorbed[0], absorbed[1], absorbed[2], f1[1], f1[2], f1[3]
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let cfg = scenario("case1_like");
    let thetas = [0.6, 0.8, 1.0];
    let table = match sweep(&cfg, SweepParameter::Theta, &thetas, Mode::Joint, &HighsBackend, &SolveOptions::default())
    {
        Ok(t) => t,
        Err(e) => return Outcome::error(e),
    };
    if let Some(e) = table.rows.iter().find_map(|r| r.error.clone()) {
        return Outcome::error(e);
    }
    let cuts: Vec<&Vec<f64>> = table.rows.iter().map(|r| &r.heat_cut).collect();
    let tol = 1e-6;
    let nonincreasing = cuts.windows(2).all(|w| w[0].iter().zip(w[1]).all(|(a, b)| *b <= a + tol));
    let p = prepare(&cfg);
    let mut notes = Vec::new();
    let mut night_first = true;
    for (theta, cut) in thetas.iter().zip(&cuts) {
        let (mut day, mut night) = (Vec::new(), Vec::new());
        for (t, &h) in p.hours.iter().enumerate() {
            if p.cfg.pmv.is_day(h) {
                day.push(cut[t]);
            } else {
                night.push(cut[t]);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        night_first &= mean(&night) >= mean(&day) - tol;
        notes.push(format!("θ={theta}: night {:.2} / day {:.2} MW", mean(&night), mean(&day)));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        nonincreasing && night_first && elapsed < Duration::from_secs(300),
        format!("cuts nonincreasing: {nonincreasing}; {}; {elapsed:.1?}", notes.join(", ")),
    )
}

fn criterion_8() -> Outcome {
    let p = prepare(&scenario("case2_real"));
    let opts = SolveOptions { mip_gap: 1e-4, ..SolveOptions::default() };
    let start = Instant::now();
    let result = solve(&p, Mode::Joint.spec(), &HighsBackend, &opts);
    let elapsed = start.elapsed();
    match result {
        Ok(r) => Outcome::new(
            r.solution.mip_gap <= 1e-4 && elapsed < Duration::from_secs(60),
            format!("{} periods, gap {:.1e}, {elapsed:.2?}", p.horizon(), r.solution.mip_gap),
        ),
        Err(e) => Outcome::error(e),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("pipeline delays", criterion_1),
        ("pipeline heat losses", criterion_2),
        ("reserve chance constraint", criterion_3),
        ("single-level vs price-grid leader profit", criterion_4),
        ("equilibrium properties", criterion_5),
        ("mode ordering", criterion_6),
        ("penalty-factor sweep", criterion_7),
        ("runtime", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = check();
        failed += usize::from(!outcome.pass);
        println!("criterion {} {name}: {} ({})", i + 1, if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} of {} criteria failed", criteria.len());
        ExitCode::FAILURE
    }
}
