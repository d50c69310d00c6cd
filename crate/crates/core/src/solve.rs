//! Solving the assembled programs: the backend contract, an in-process HiGHS backend, a
//! file-based backend for any LP-format solver, infeasibility triage, and the oracles
//! used to check accepted solutions (price-grid enumeration, unilateral deviations and
//! Monte Carlo reserve adequacy).

use crate::error::{Error, Result};
use crate::game::{
    build_dispatch, build_model, extract_solution, follower_best_response, follower_cost, verify_solution, BuiltModel,
    EquilibriumSolution, FixedPlay, FollowerBounds, FollowerResponse, ModelSpec, ShiftPlay, ValidationReport,
};
use crate::ir::{ModelIr, ObjSense, RowSense, VarKind};
use crate::lp_format::{parse_solution, write_lp};
use crate::scenario::{PreparedScenario, ReserveEncoding};
use crate::sequences::{chance_satisfaction_mc, ChanceEstimate};
use highs::{HighsModelStatus, RowProblem, Sense};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::num::NonZeroU32;
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub binaries: bool,
    pub quadratic: bool,
}

/// What a backend returns for one program.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendSolution {
    pub status: SolveStatus,
    /// Values within the declared bounds, or `None` when no feasible point is known.
    pub values: Option<Vec<f64>>,
    pub objective: f64,
    /// Best proven bound on the objective.
    pub bound: f64,
}

impl BackendSolution {
    /// `|objective − bound| / |objective|`.
    pub fn gap(&self) -> f64 {
        let diff = (self.objective - self.bound).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.objective.abs()
        }
    }
}

pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn capabilities(&self) -> Capabilities;
    fn solve(&self, ir: &ModelIr, time_limit_s: f64, mip_gap: f64) -> Result<BackendSolution>;
}

/// Clamps values into the variable bounds and rounds binaries.
fn snap_to_bounds(ir: &ModelIr, values: &mut [f64]) {
    for (v, x) in ir.vars().iter().zip(values.iter_mut()) {
        *x = x.clamp(v.lower, v.upper);
        if v.kind == VarKind::Binary {
            *x = x.round();
        }
    }
}

fn check_linear(ir: &ModelIr, backend: &str) -> Result<()> {
    if ir.has_quadratic() || !ir.objective().pwl.is_empty() {
        return Err(Error::Solver(format!("{backend} takes linear objectives only; expand PWL terms first")));
    }
    Ok(())
}

/// HiGHS linked in-process, single-threaded for reproducible runs.
#[derive(Debug, Clone, Copy, Default)]
pub struct HighsBackend;

impl SolverBackend for HighsBackend {
    fn name(&self) -> &str {
        "highs"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { binaries: true, quadratic: false }
    }

    fn solve(&self, ir: &ModelIr, time_limit_s: f64, mip_gap: f64) -> Result<BackendSolution> {
        check_linear(ir, self.name())?;
        ir.validate()?;
        let mut cost = vec![0.0; ir.vars().len()];
        for (v, c) in &ir.objective().linear {
            cost[v.0] += c;
        }
        let mut pb = RowProblem::new();
        let cols: Vec<_> = ir
            .vars()
            .iter()
            .zip(&cost)
            .map(|(v, &c)| match v.kind {
                VarKind::Binary => pb.add_integer_column(c, v.lower.max(0.0)..=v.upper.min(1.0)),
                VarKind::Continuous => pb.add_column(c, v.lower..=v.upper),
            })
            .collect();
        for row in ir.rows() {
            let factors: Vec<_> = row.terms.iter().map(|(v, c)| (cols[v.0], *c)).collect();
            match row.sense {
                RowSense::Le => pb.add_row(..=row.rhs, &factors),
                RowSense::Ge => pb.add_row(row.rhs.., &factors),
                RowSense::Eq => pb.add_row(row.rhs..=row.rhs, &factors),
            }
        }
        let sense = match ir.objective().sense {
            ObjSense::Maximize => Sense::Maximise,
            ObjSense::Minimize => Sense::Minimise,
        };
        let mut model =
            pb.try_optimise(sense).map_err(|s| Error::Solver(format!("HiGHS rejected the model: {s:?}")))?;
        model.make_quiet();
        model.set_threads(NonZeroU32::MIN);
        model.set_option("time_limit", time_limit_s.max(0.01));
        model.set_option("mip_rel_gap", mip_gap);
        let solved = model.try_solve().map_err(|s| Error::Solver(format!("HiGHS failed: {s:?}")))?;
        let constant = ir.objective().constant;
        let has_point = matches!(solved.primal_solution_status(), highs::HighsSolutionStatus::Feasible);
        let status = match solved.status() {
            HighsModelStatus::Optimal => SolveStatus::Optimal,
            HighsModelStatus::Infeasible | HighsModelStatus::UnboundedOrInfeasible => SolveStatus::Infeasible,
            HighsModelStatus::Unbounded => SolveStatus::Unbounded,
            HighsModelStatus::ReachedTimeLimit => SolveStatus::TimeLimit,
            other => return Err(Error::Solver(format!("HiGHS stopped with status {other:?}"))),
        };
        let values = has_point.then(|| {
            let mut x = solved.get_solution().columns().to_vec();
            snap_to_bounds(ir, &mut x);
            x
        });
        let objective = values.as_ref().map_or(f64::NAN, |x| ir.eval_objective(x));
        let bound = if ir.num_binaries() > 0 {
            solved.double_info_value(c"mip_dual_bound").map_or(objective, |b| b + constant)
        } else {
            objective
        };
        Ok(BackendSolution { status, values, objective, bound })
    }
}

/// An external solver driven through LP files.
///
/// `args` may contain the placeholders `{lp}`, `{sol}`, `{time}` and `{gap}`. The
/// solution file is read with a tolerant parser, so any solver that writes variable
/// names next to their values works.
#[derive(Debug, Clone, PartialEq)]
pub struct LpFileBackend {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl LpFileBackend {
    pub fn new(name: &str, program: impl Into<PathBuf>, args: &[&str]) -> Self {
        Self { name: name.to_owned(), program: program.into(), args: args.iter().map(|a| (*a).to_owned()).collect() }
    }

    /// The `highs` command-line executable.
    pub fn highs_cli() -> Self {
        Self::new("highs-cli", "highs", &["--model_file", "{lp}", "--solution_file", "{sol}", "--time_limit", "{time}"])
    }

    /// COIN-OR CBC.
    pub fn cbc() -> Self {
        Self::new("cbc", "cbc", &["{lp}", "sec", "{time}", "ratio", "{gap}", "solve", "solu", "{sol}"])
    }
}

impl SolverBackend for LpFileBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities { binaries: true, quadratic: false }
    }

    fn solve(&self, ir: &ModelIr, time_limit_s: f64, mip_gap: f64) -> Result<BackendSolution> {
        check_linear(ir, &self.name)?;
        let dir = tempfile::tempdir()?;
        let lp = dir.path().join("model.lp");
        let sol = dir.path().join("model.sol");
        std::fs::write(&lp, write_lp(ir)?)?;
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{lp}", &lp.to_string_lossy())
                    .replace("{sol}", &sol.to_string_lossy())
                    .replace("{time}", &format!("{time_limit_s}"))
                    .replace("{gap}", &format!("{mip_gap}"))
            })
            .collect();
        let out = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| Error::Solver(format!("cannot run `{}`: {e}", self.program.display())))?;
        let text = match std::fs::read_to_string(&sol) {
            Ok(t) => t,
            Err(_) => {
                let stderr = String::from_utf8_lossy(&out.stderr);
                return Err(Error::Solver(format!(
                    "`{}` exited with {} and wrote no solution file: {}",
                    self.program.display(),
                    out.status,
                    stderr.trim()
                )));
            }
        };
        let parsed = parse_solution(ir, &text);
        let lower = text.to_ascii_lowercase();
        let status = if parsed.infeasible {
            SolveStatus::Infeasible
        } else if lower.contains("unbounded") {
            SolveStatus::Unbounded
        } else if lower.contains("time limit") || lower.contains("stopped on time") {
            SolveStatus::TimeLimit
        } else {
            SolveStatus::Optimal
        };
        let values = (status != SolveStatus::Infeasible && parsed.matched > 0).then(|| {
            let mut x = parsed.values;
            snap_to_bounds(ir, &mut x);
            x
        });
        let objective = values.as_ref().map_or(f64::NAN, |x| ir.eval_objective(x));
        Ok(BackendSolution { status, values, objective, bound: objective })
    }
}

/// Looks a backend up by its identifier.
pub fn backend_by_name(name: &str) -> Result<Box<dyn SolverBackend>> {
    match name {
        "highs" => Ok(Box::new(HighsBackend)),
        "highs-cli" => Ok(Box::new(LpFileBackend::highs_cli())),
        "cbc" => Ok(Box::new(LpFileBackend::cbc())),
        other => Err(Error::InvalidParameter(format!("unknown backend `{other}` (expected highs, highs-cli or cbc)"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub time_limit_s: f64,
    pub mip_gap: f64,
    /// Secant pieces per quadratic cost for linear backends.
    pub pwl_segments: usize,
    /// Re-solve the LP with binaries fixed to tighten feasibility.
    pub polish: bool,
    /// Overrides the scenario's reserve encoding.
    pub reserve_encoding: Option<ReserveEncoding>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { time_limit_s: 300.0, mip_gap: 1e-4, pwl_segments: 8, polish: true, reserve_encoding: None }
    }
}

/// Optimum of one program, with values indexed like the program's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct IrSolution {
    pub values: Vec<f64>,
    /// Objective of the (PWL-approximated) program.
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub pwl_error_bound: f64,
    pub runtime_s: f64,
}

/// Replaces quadratics by PWL terms when `caps` lacks them. Returns the approximated
/// model, the program handed to the backend (PWL terms expanded) and the error bound.
fn prepare_program(ir: &ModelIr, caps: Capabilities, segments: usize) -> Result<(ModelIr, ModelIr, f64)> {
    let mut working = ir.clone();
    let bound = if !caps.quadratic && working.has_quadratic() { working.apply_pwl(segments)? } else { 0.0 };
    let program = if working.objective().pwl.is_empty() { working.clone() } else { working.expand_pwl()? };
    Ok((working, program, bound))
}

/// The purely linear program a linear backend receives for `ir`.
pub fn linear_program(ir: &ModelIr, segments: usize) -> Result<ModelIr> {
    Ok(prepare_program(ir, Capabilities { binaries: true, quadratic: false }, segments)?.1)
}

/// Solves `ir` with `backend`, replacing quadratics by PWL terms when the backend is
/// linear and polishing the continuous part with the binaries fixed.
///
/// Infeasibility is reported at stage `full-model`; [`solve`] runs the full triage.
pub fn solve_ir(ir: &ModelIr, backend: &dyn SolverBackend, opts: &SolveOptions) -> Result<IrSolution> {
    let start = Instant::now();
    let caps = backend.capabilities();
    if !caps.binaries && ir.num_binaries() > 0 {
        return Err(Error::Solver(format!("backend `{}` cannot handle binary variables", backend.name())));
    }
    let (working, program, pwl_error_bound) = prepare_program(ir, caps, opts.pwl_segments)?;
    let raw = backend.solve(&program, opts.time_limit_s, opts.mip_gap)?;
    let mut values = match (raw.status, raw.values) {
        (SolveStatus::Optimal, Some(v)) => v,
        (SolveStatus::TimeLimit, _) => return Err(Error::TimeLimit),
        (SolveStatus::Infeasible, _) | (SolveStatus::Optimal, None) => {
            return Err(Error::Infeasible {
                stage: "full-model".into(),
                detail: format!("{} found no feasible point", backend.name()),
            })
        }
        (SolveStatus::Unbounded, _) => {
            return Err(Error::Solver(format!("{} reports an unbounded program", backend.name())))
        }
    };
    let gap = BackendSolution { status: raw.status, values: None, objective: raw.objective, bound: raw.bound }.gap();
    if opts.polish && program.num_binaries() > 0 {
        let fixed = program.fix_binaries(&values);
        let remaining = (opts.time_limit_s - start.elapsed().as_secs_f64()).max(1.0);
        if let Ok(BackendSolution { status: SolveStatus::Optimal, values: Some(v), .. }) =
            backend.solve(&fixed, remaining, opts.mip_gap)
        {
            values = v;
        }
    }
    values.truncate(ir.vars().len());
    let objective = working.eval_objective(&values);
    Ok(IrSolution {
        values,
        objective,
        bound: raw.bound,
        gap,
        pwl_error_bound,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// An accepted solution together with the program it came from.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub solution: EquilibriumSolution,
    pub built: BuiltModel,
    pub values: Vec<f64>,
    pub report: ValidationReport,
}

impl SolveResult {
    /// Largest complementarity product relative to its Big-M (0 without a KKT block).
    pub fn complementarity_residual(&self) -> f64 {
        self.built.kkt.as_ref().map_or(0.0, |k| k.max_scaled_product(&self.values))
    }
}

/// Builds, solves and verifies one mode on a scenario.
///
/// Infeasibility is triaged in a fixed order and reported with a stable stage name:
/// `static-bounds` (capacity checks before building), `balance-relaxed-reserve` (no
/// dispatch exists even without reserve rows) or `full-model` (the reserve requirement
/// makes the program infeasible). An optimal point that fails verification is rejected
/// with a validation error.
pub fn solve(
    p: &PreparedScenario,
    spec: ModelSpec,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let result = solve_unchecked(p, spec, backend, opts)?;
    if !result.report.is_ok() {
        return Err(Error::Validation(result.report.summary()));
    }
    Ok(result)
}

/// Like [`solve`] but returns solutions that fail verification together with the report.
pub fn solve_unchecked(
    p: &PreparedScenario,
    spec: ModelSpec,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let encoding = opts.reserve_encoding.unwrap_or(p.cfg.reserve.encoding);
    let built = build_model(p, spec, encoding)?;
    solve_built(p, built, backend, opts)
}

fn solve_built(
    p: &PreparedScenario,
    built: BuiltModel,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<SolveResult> {
    let out = match solve_ir(&built.ir, backend, opts) {
        Ok(out) => out,
        Err(Error::Infeasible { detail, .. }) => return Err(triage(&built.ir, backend, opts, detail)),
        Err(e) => return Err(e),
    };
    let mut solution = extract_solution(p, &built, &out.values);
    solution.objective = out.objective;
    solution.pwl_error_bound = out.pwl_error_bound;
    solution.mip_gap = out.gap;
    solution.runtime_s = out.runtime_s;
    solution.backend = backend.name().to_owned();
    let report = verify_solution(&solution, p);
    Ok(SolveResult { solution, built, values: out.values, report })
}

fn triage(ir: &ModelIr, backend: &dyn SolverBackend, opts: &SolveOptions, detail: String) -> Error {
    let relaxed = ir.without_rows(|name| name.starts_with("res_"));
    match solve_ir(&relaxed, backend, opts) {
        Err(Error::Infeasible { .. }) => Error::Infeasible {
            stage: "balance-relaxed-reserve".into(),
            detail: "no dispatch meets the energy balances even without reserve requirements".into(),
        },
        _ => Error::Infeasible { stage: "full-model".into(), detail },
    }
}

/// The operator's best dispatch and profit when the users answer `mu`, `gamma` with
/// their best response. Returns `None` when no dispatch serves that response.
///
/// Reserve uses the threshold encoding, and shiftable load within tied prices is split
/// by the operator.
pub fn leader_profit_at(
    p: &PreparedScenario,
    dhn: bool,
    mu: &[f64],
    gamma: &[f64],
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<Option<EquilibriumSolution>> {
    let response = follower_best_response(mu, gamma, &p.follower_bounds())?;
    dispatch_play(p, dhn, mu, gamma, &response, backend, opts)
}

fn dispatch_play(
    p: &PreparedScenario,
    dhn: bool,
    mu: &[f64],
    gamma: &[f64],
    response: &FollowerResponse,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<Option<EquilibriumSolution>> {
    let play = FixedPlay {
        mu: mu.to_vec(),
        gamma: gamma.to_vec(),
        shift: ShiftPlay::from_response(mu, &response.shiftable),
        cut: response.cut.clone(),
    };
    let built = build_dispatch(p, dhn, ReserveEncoding::MinimumThreshold, &play)?;
    match solve_ir(&built.ir, backend, opts) {
        Ok(out) => {
            let mut sol = extract_solution(p, &built, &out.values);
            sol.pwl_error_bound = out.pwl_error_bound;
            sol.objective = out.objective;
            Ok(Some(sol))
        }
        Err(Error::Infeasible { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Grid levels `lo, lo + step, …, hi` as integers, and the integer level sum that meets
/// the average.
fn grid_levels(lo: f64, hi: f64, avg: f64, horizon: usize, step: f64) -> Result<(usize, usize)> {
    if step <= 0.0 || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("grid step must be positive, got {step}")));
    }
    let levels = (hi - lo) / step;
    let target = horizon as f64 * (avg - lo) / step;
    let on_grid = |x: f64| (x - x.round()).abs() <= 1e-9 * x.abs().max(1.0);
    if !on_grid(levels) || !on_grid(target) {
        return Err(Error::InvalidParameter(format!(
            "step {step} does not divide the price range [{lo}, {hi}] and the average {avg}"
        )));
    }
    Ok((levels.round() as usize, target.round() as usize))
}

/// Number of integer vectors of `len` entries in `0..=levels` summing to `target`.
fn composition_count(len: usize, levels: usize, target: usize) -> f64 {
    let mut ways = vec![0.0f64; target + 1];
    ways[0] = 1.0;
    for _ in 0..len {
        let mut next = vec![0.0; target + 1];
        let mut window = 0.0;
        for s in 0..=target {
            window += ways[s];
            if s > levels {
                window -= ways[s - levels - 1];
            }
            next[s] = window;
        }
        ways = next;
    }
    ways[target]
}

fn compositions(len: usize, levels: usize, target: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, len: usize, levels: usize, left: usize, out: &mut Vec<Vec<usize>>) {
        let slots = len - prefix.len();
        if slots == 0 {
            if left == 0 {
                out.push(prefix.clone());
            }
            return;
        }
        if left > slots * levels {
            return;
        }
        for k in 0..=levels.min(left) {
            prefix.push(k);
            rec(prefix, len, levels, left - k, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(len), len, levels, target, &mut out);
    out
}

/// Number of price vectors on the grid `lo + k·step` whose mean is `avg`.
pub fn price_grid_size(lo: f64, hi: f64, avg: f64, horizon: usize, step: f64) -> Result<f64> {
    let (levels, target) = grid_levels(lo, hi, avg, horizon, step)?;
    Ok(composition_count(horizon, levels, target))
}

/// Every price vector on the grid `lo + k·step` (within `[lo, hi]`) whose mean is `avg`.
pub fn price_grid(lo: f64, hi: f64, avg: f64, horizon: usize, step: f64) -> Result<Vec<Vec<f64>>> {
    let (levels, target) = grid_levels(lo, hi, avg, horizon, step)?;
    Ok(compositions(horizon, levels, target)
        .into_iter()
        .map(|c| c.into_iter().map(|k| lo + k as f64 * step).collect())
        .collect())
}

/// Largest grid the oracle accepts.
pub const ORACLE_MAX_POINTS: f64 = 1e7;

/// Best grid prices found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub response: FollowerResponse,
    /// Operator profit at the best grid point, evaluated exactly at its dispatch.
    pub profit: f64,
    pub mu_step: f64,
    pub gamma_step: f64,
    pub evaluations: usize,
    /// Grid points whose response no dispatch can serve.
    pub infeasible_points: usize,
    /// Largest profit change between the best point and a grid neighbour (one step
    /// moved between two periods).
    pub grid_sensitivity: f64,
    pub pwl_error_bound: f64,
    /// Profit of every grid point, `None` where infeasible; μ-major order.
    pub profits: Vec<Option<f64>>,
}

fn response_key(mu: &[f64], r: &FollowerResponse) -> Vec<i64> {
    let q = |x: f64| (x * 1e9).round() as i64;
    let mut key = Vec::new();
    for g in crate::game::tie_groups(mu) {
        key.push(-1);
        key.extend(g.iter().map(|&t| t as i64));
        key.push(q(g.iter().map(|&t| r.shiftable[t]).sum()));
    }
    key.push(-2);
    key.extend(r.cut.iter().map(|&c| q(c)));
    key
}

/// Enumerates the leader's price grid on a tiny instance.
///
/// Every admissible (μ, γ) pair on the grid gets the users' closed-form best response
/// and the operator's re-dispatch; the dispatch cost only depends on the response, so
/// it is solved once per distinct response.
pub fn enumerate_oracle(
    p: &PreparedScenario,
    dhn: bool,
    mu_step: f64,
    gamma_step: f64,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<OracleResult> {
    let t_len = p.horizon();
    let pr = &p.cfg.prices;
    let n_mu = price_grid_size(pr.mu_min, pr.mu_max, pr.mu_avg, t_len, mu_step)?;
    let n_gamma = price_grid_size(pr.gamma_min, pr.gamma_max, pr.gamma_avg, t_len, gamma_step)?;
    let points = n_mu * n_gamma;
    if points > ORACLE_MAX_POINTS {
        let factor = (points / ORACLE_MAX_POINTS).powf(1.0 / (2.0 * (t_len.max(2) - 1) as f64));
        return Err(Error::GridTooLarge {
            points,
            hint: format!("multiply both price steps by at least {:.1} or shorten the horizon", factor.ceil()),
        });
    }
    let mus = price_grid(pr.mu_min, pr.mu_max, pr.mu_avg, t_len, mu_step)?;
    let gammas = price_grid(pr.gamma_min, pr.gamma_max, pr.gamma_avg, t_len, gamma_step)?;
    if mus.is_empty() || gammas.is_empty() {
        return Err(Error::InvalidParameter("price grid has no admissible point".into()));
    }
    let bounds: FollowerBounds = p.follower_bounds();

    let mut plays = Vec::with_capacity(mus.len() * gammas.len());
    let mut first_of_key: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut key_index = Vec::with_capacity(plays.capacity());
    for mu in &mus {
        for gamma in &gammas {
            let r = follower_best_response(mu, gamma, &bounds)?;
            let key = response_key(mu, &r);
            let next = first_of_key.len();
            let k = *first_of_key.entry(key).or_insert(next);
            key_index.push(k);
            plays.push((mu, gamma, r));
        }
    }
    let mut representative = vec![0; first_of_key.len()];
    for (i, &k) in key_index.iter().enumerate().rev() {
        representative[k] = i;
    }
    let dispatched: Vec<Option<EquilibriumSolution>> = representative
        .par_iter()
        .map(|&i| {
            let (mu, gamma, r) = &plays[i];
            dispatch_play(p, dhn, mu, gamma, r, backend, opts)
        })
        .collect::<Result<_>>()?;
    let pwl_error_bound = dispatched.iter().flatten().map(|s| s.pwl_error_bound).fold(0.0, f64::max);

    let mut profits = Vec::with_capacity(plays.len());
    let mut best: Option<(usize, f64, FollowerResponse)> = None;
    for (i, (mu, gamma, r)) in plays.iter().enumerate() {
        let profit = dispatched[key_index[i]].as_ref().map(|d| {
            let mut sol = d.clone();
            sol.mu = (*mu).clone();
            sol.gamma = (*gamma).clone();
            sol.recompute(p);
            (sol.f1, FollowerResponse { shiftable: sol.shiftable.clone(), cut: r.cut.clone() })
        });
        if let Some((f1, resp)) = &profit {
            if best.as_ref().is_none_or(|b| *f1 > b.1) {
                best = Some((i, *f1, resp.clone()));
            }
        }
        profits.push(profit.map(|(f1, _)| f1));
    }
    let (best_i, best_profit, response) = best.ok_or_else(|| Error::Infeasible {
        stage: "full-model".into(),
        detail: "no grid point can be dispatched".into(),
    })?;

    let n_gamma = gammas.len();
    let level =
        |v: &[f64], lo: f64, step: f64| v.iter().map(|x| ((x - lo) / step).round() as i64).collect::<Vec<i64>>();
    let mu_index: HashMap<Vec<i64>, usize> =
        mus.iter().enumerate().map(|(i, m)| (level(m, pr.mu_min, mu_step), i)).collect();
    let gamma_index: HashMap<Vec<i64>, usize> =
        gammas.iter().enumerate().map(|(i, g)| (level(g, pr.gamma_min, gamma_step), i)).collect();
    let (bm, bg) = (best_i / n_gamma, best_i % n_gamma);
    let mut sensitivity: f64 = 0.0;
    let mut probe = |mi: usize, gi: usize| {
        if let Some(v) = profits[mi * n_gamma + gi] {
            sensitivity = sensitivity.max((best_profit - v).abs());
        }
    };
    let neighbours = |base: Vec<i64>| {
        let mut out = Vec::new();
        for a in 0..t_len {
            for b in 0..t_len {
                if a != b {
                    let mut n = base.clone();
                    n[a] += 1;
                    n[b] -= 1;
                    out.push(n);
                }
            }
        }
        out
    };
    for n in neighbours(level(&mus[bm], pr.mu_min, mu_step)) {
        if let Some(&mi) = mu_index.get(&n) {
            probe(mi, bg);
        }
    }
    for n in neighbours(level(&gammas[bg], pr.gamma_min, gamma_step)) {
        if let Some(&gi) = gamma_index.get(&n) {
            probe(bm, gi);
        }
    }

    Ok(OracleResult {
        mu: mus[bm].clone(),
        gamma: gammas[bg].clone(),
        response,
        profit: best_profit,
        mu_step,
        gamma_step,
        evaluations: plays.len(),
        infeasible_points: profits.iter().filter(|v| v.is_none()).count(),
        grid_sensitivity: sensitivity,
        pwl_error_bound,
        profits,
    })
}

/// Monte Carlo check of one period's reserve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReserveCheck {
    pub period: usize,
    pub reserve: f64,
    pub estimate: ChanceEstimate,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveValidation {
    pub confidence: f64,
    /// Allowed shortfall of the estimate below the confidence level.
    pub slack: f64,
    pub periods: Vec<PeriodReserveCheck>,
    pub pass: bool,
}

/// Slack allowed between the sampled satisfaction rate and the confidence level.
pub const RESERVE_MC_SLACK: f64 = 0.02;

/// Samples renewable output per period and checks `Pr[R_t ≥ E_t − P_t] ≥ 𝒢 − 0.02`.
pub fn validate_reserve(reserve: &[f64], p: &PreparedScenario, n_samples: usize, seed: u64) -> ReserveValidation {
    let confidence = p.cfg.reserve.confidence;
    let periods: Vec<PeriodReserveCheck> = (0..p.horizon())
        .map(|t| {
            let estimate = chance_satisfaction_mc(
                &p.renewables[t],
                p.expected[t],
                reserve[t],
                n_samples,
                seed.wrapping_add(t as u64),
            );
            PeriodReserveCheck {
                period: t,
                reserve: reserve[t],
                estimate,
                pass: estimate.probability >= confidence - RESERVE_MC_SLACK,
            }
        })
        .collect();
    let pass = periods.iter().all(|c| c.pass);
    ReserveValidation { confidence, slack: RESERVE_MC_SLACK, periods, pass }
}

/// Outcome of a batch of random unilateral deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub samples: usize,
    /// Deviations that could not be evaluated (no dispatch serves them).
    pub skipped: usize,
    /// Largest gain a deviation achieved over the solution (positive means a gain).
    pub worst_gain: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// A shiftable profile drawn at random from `{min ≤ s ≤ max, Σ s = S}`.
fn random_shift<R: Rng>(b: &FollowerBounds, rng: &mut R) -> Vec<f64> {
    let mut s = b.shift_min.clone();
    let mut left = b.shift_total - s.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.shuffle(rng);
    for &t in &order {
        let take = rng.gen::<f64>() * (b.shift_max[t] - s[t]).min(left);
        s[t] += take;
        left -= take;
    }
    for &t in &order {
        let take = (b.shift_max[t] - s[t]).min(left);
        s[t] += take;
        left -= take;
    }
    s
}

/// Users' deviations: random feasible (shiftable, cut) points at the solution's prices
/// must not cost the users less than the solution's response, beyond 1e-5.
pub fn follower_deviation_test(
    sol: &EquilibriumSolution,
    p: &PreparedScenario,
    samples: usize,
    seed: u64,
) -> DeviationReport {
    let b = p.follower_bounds();
    let base = follower_cost(p, &sol.mu, &sol.gamma, &sol.shiftable, &sol.cut);
    let tolerance = crate::game::RESPONSE_TOL;
    let worst_gain = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let shift = random_shift(&b, &mut rng);
            let cut: Vec<f64> = b.cut_max.iter().map(|&ub| rng.gen::<f64>() * ub).collect();
            base - follower_cost(p, &sol.mu, &sol.gamma, &shift, &cut)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    DeviationReport { samples, skipped: 0, worst_gain, tolerance, pass: worst_gain <= tolerance }
}

/// Projects `y` onto `{lo ≤ x ≤ hi, Σ x = total}` by shifting every entry equally.
pub fn project_prices(y: &[f64], lo: f64, hi: f64, total: f64) -> Vec<f64> {
    let sum_at = |shift: f64| y.iter().map(|v| (v + shift).clamp(lo, hi)).sum::<f64>();
    let (mut a, mut b) = (lo - hi - 1.0, hi - lo + 1.0);
    let max_y = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_y = y.iter().cloned().fold(f64::INFINITY, f64::min);
    a = a.min(lo - max_y);
    b = b.max(hi - min_y);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if sum_at(m) < total {
            a = m;
        } else {
            b = m;
        }
    }
    let mut x: Vec<f64> = y.iter().map(|v| (v + 0.5 * (a + b)).clamp(lo, hi)).collect();
    let residual = total - x.iter().sum::<f64>();
    let interior: Vec<usize> = (0..x.len()).filter(|&t| x[t] > lo && x[t] < hi).collect();
    if !interior.is_empty() {
        let share = residual / interior.len() as f64;
        for t in interior {
            x[t] = (x[t] + share).clamp(lo, hi);
        }
    }
    x
}

/// Random admissible prices: half of the draws perturb `base` locally, the rest are
/// uniform over the price box, all projected onto the average constraint.
fn random_prices<R: Rng>(base: &[f64], lo: f64, hi: f64, avg: f64, local: bool, rng: &mut R) -> Vec<f64> {
    let span = hi - lo;
    let y: Vec<f64> = if local {
        let radius = rng.gen::<f64>() * 0.25 * span;
        base.iter().map(|b| b + radius * (2.0 * rng.gen::<f64>() - 1.0)).collect()
    } else {
        base.iter().map(|_| lo + span * rng.gen::<f64>()).collect()
    };
    project_prices(&y, lo, hi, avg * base.len() as f64)
}

/// Leader deviations: random admissible prices, answered by the users' best response
/// and re-dispatched, must not beat the solution's profit by more than the PWL bound
/// plus the solver gap.
pub fn leader_deviation_test(
    sol: &EquilibriumSolution,
    p: &PreparedScenario,
    samples: usize,
    seed: u64,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<DeviationReport> {
    let pr = &p.cfg.prices;
    let tolerance = sol.pwl_error_bound + sol.mip_gap.max(opts.mip_gap) * sol.f1.abs() + 1e-6 * sol.f1.abs().max(1.0);
    let gains: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let local = i % 2 == 0;
            let mu = random_prices(&sol.mu, pr.mu_min, pr.mu_max, pr.mu_avg, local, &mut rng);
            let gamma = random_prices(&sol.gamma, pr.gamma_min, pr.gamma_max, pr.gamma_avg, local, &mut rng);
            Ok(leader_profit_at(p, sol.spec.dhn, &mu, &gamma, backend, opts)?.map(|d| d.f1 - sol.f1))
        })
        .collect::<Result<_>>()?;
    let skipped = gains.iter().filter(|g| g.is_none()).count();
    let worst_gain = gains.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(DeviationReport { samples, skipped, worst_gain, tolerance, pass: worst_gain <= tolerance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::Mode;
    use crate::ir::ObjSense;
    use crate::scenario::tests::toy_json;
    use crate::scenario::ScenarioConfig;
    use approx::assert_relative_eq;

    fn toy() -> PreparedScenario {
        PreparedScenario::new(&ScenarioConfig::from_json_str(&toy_json()).unwrap()).unwrap()
    }

    fn knapsack() -> ModelIr {
        let mut m = ModelIr::new(ObjSense::Maximize);
        let x = m.add_var("x", 0.0, 4.0).unwrap();
        let b = m.add_binary("b").unwrap();
        m.add_row("link", vec![(x, 1.0), (b, -3.0)], RowSense::Le, 0.5).unwrap();
        m.add_objective_linear(x, 2.0).unwrap();
        m.add_objective_linear(b, -1.0).unwrap();
        m.add_objective_constant(7.0);
        m
    }

    #[test]
    fn highs_solves_small_milp() {
        let s = HighsBackend.solve(&knapsack(), 10.0, 1e-6).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        let x = s.values.clone().unwrap();
        assert_relative_eq!(x[0], 3.5, epsilon = 1e-9);
        assert_eq!(x[1], 1.0);
        assert_relative_eq!(s.objective, 7.0 + 7.0 - 1.0, epsilon = 1e-9);
        assert!(s.gap() <= 1e-6);
    }

    #[test]
    fn highs_reports_infeasible() {
        let mut m = ModelIr::new(ObjSense::Minimize);
        let x = m.add_var("x", 0.0, 1.0).unwrap();
        m.add_row("over", vec![(x, 1.0)], RowSense::Ge, 2.0).unwrap();
        assert_eq!(HighsBackend.solve(&m, 10.0, 1e-6).unwrap().status, SolveStatus::Infeasible);
        assert!(matches!(solve_ir(&m, &HighsBackend, &SolveOptions::default()), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn gap_definition() {
        let s = BackendSolution { status: SolveStatus::Optimal, values: None, objective: 200.0, bound: 201.0 };
        assert_relative_eq!(s.gap(), 0.005);
        let z = BackendSolution { status: SolveStatus::Optimal, values: None, objective: 0.0, bound: 0.0 };
        assert_eq!(z.gap(), 0.0);
    }

    #[test]
    fn highs_rejects_quadratic_but_engine_linearizes() {
        let mut m = ModelIr::new(ObjSense::Minimize);
        let x = m.add_var("x", 0.0, 4.0).unwrap();
        m.add_row("floor", vec![(x, 1.0)], RowSense::Ge, 1.0).unwrap();
        m.add_objective_quadratic(x, 1.0).unwrap();
        assert!(matches!(HighsBackend.solve(&m, 10.0, 1e-6), Err(Error::Solver(_))));
        let s = solve_ir(&m, &HighsBackend, &SolveOptions::default()).unwrap();
        assert_relative_eq!(s.values[0], 1.0, epsilon = 1e-9);
        assert_eq!(s.values.len(), 1);
        assert_relative_eq!(s.pwl_error_bound, 0.5 * 0.5 / 4.0, epsilon = 1e-12);
        assert!(s.objective >= 1.0 - 1e-9 && s.objective <= 1.0 + s.pwl_error_bound + 1e-9);
    }

    #[test]
    fn file_backend_round_trip_with_scripted_solver() {
        let script = "printf 'Optimal - objective value 13\\n 0 x 3.5 0\\n 1 b 1 0\\n' > \"$1\"";
        let backend = LpFileBackend::new("scripted", "sh", &["-c", script, "sh", "{sol}"]);
        let s = backend.solve(&knapsack(), 10.0, 1e-4).unwrap();
        assert_eq!(s.status, SolveStatus::Optimal);
        assert_eq!(s.values, Some(vec![3.5, 1.0]));
        assert_relative_eq!(s.objective, 13.0);
    }

    #[test]
    fn file_backend_reports_missing_program_and_infeasibility() {
        let missing = LpFileBackend::new("none", "/nonexistent/solver", &["{lp}"]);
        assert!(matches!(missing.solve(&knapsack(), 1.0, 1e-4), Err(Error::Solver(_))));
        let infeasible = LpFileBackend::new(
            "scripted",
            "sh",
            &["-c", "echo 'Infeasible - objective value 0' > \"$1\"", "sh", "{sol}"],
        );
        assert_eq!(infeasible.solve(&knapsack(), 1.0, 1e-4).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn backend_lookup() {
        assert_eq!(backend_by_name("highs").unwrap().name(), "highs");
        assert_eq!(backend_by_name("cbc").unwrap().name(), "cbc");
        assert!(backend_by_name("cplex").is_err());
    }

    #[test]
    fn grid_counts_and_points() {
        let pairs = price_grid(40.0, 90.0, 65.0, 2, 25.0).unwrap();
        assert_eq!(pairs, vec![vec![40.0, 90.0], vec![65.0, 65.0], vec![90.0, 40.0]]);
        assert_eq!(price_grid_size(40.0, 90.0, 65.0, 2, 25.0).unwrap(), 3.0);
        assert_eq!(
            price_grid_size(40.0, 90.0, 65.0, 3, 5.0).unwrap(),
            price_grid(40.0, 90.0, 65.0, 3, 5.0).unwrap().len() as f64
        );
        assert!(price_grid(40.0, 90.0, 65.0, 2, 7.0).is_err());
        assert_eq!(composition_count(3, 2, 3), 7.0);
        assert_eq!(composition_count(4, 10, 0), 1.0);
    }

    #[test]
    fn projection_hits_average_and_bounds() {
        let x = project_prices(&[100.0, 20.0, 70.0, 65.0], 40.0, 90.0, 260.0);
        assert_relative_eq!(x.iter().sum::<f64>(), 260.0, epsilon = 1e-9);
        assert!(x.iter().all(|v| (40.0..=90.0).contains(v)));
    }

    #[test]
    fn every_mode_solves_and_verifies_on_toy() {
        let p = toy();
        for mode in Mode::ALL {
            let r = solve(&p, mode.spec(), &HighsBackend, &SolveOptions::default())
                .unwrap_or_else(|e| panic!("mode {mode}: {e}"));
            assert!(r.report.is_ok());
            assert!(r.solution.mip_gap <= 1e-4);
            assert_eq!(r.solution.backend, "highs");
            assert!(r.complementarity_residual() <= 1e-6, "mode {mode}");
        }
    }

    #[test]
    fn repeated_solves_are_identical() {
        let p = toy();
        let a = solve(&p, Mode::Joint.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        let b = solve(&p, Mode::Joint.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        assert_eq!(a.values, b.values);
        assert!((a.solution.objective - b.solution.objective).abs() <= 1e-9);
    }

    #[test]
    fn reserve_shortfall_is_triaged_to_full_model() {
        let mut cfg = ScenarioConfig::from_json_str(&toy_json()).unwrap();
        cfg.fixed_load = vec![80.0, 70.0, 60.0];
        cfg.tp_units[0].ramp_up = 0.01;
        cfg.chp_units[0].ramp_up = 0.01;
        let p = PreparedScenario::new(&cfg).unwrap();
        match solve(&p, Mode::IndependentOperator.spec(), &HighsBackend, &SolveOptions::default()) {
            Err(Error::Infeasible { stage, .. }) => assert_eq!(stage, "full-model"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ramp_conflict_is_triaged_to_balance_stage() {
        let mut cfg = ScenarioConfig::from_json_str(&toy_json()).unwrap();
        cfg.fixed_load = vec![20.0, 130.0, 20.0];
        for u in &mut cfg.tp_units {
            u.ramp_up = 5.0;
            u.ramp_down = 5.0;
        }
        for u in &mut cfg.chp_units {
            u.ramp_up = 5.0;
            u.ramp_down = 5.0;
        }
        let p = PreparedScenario::new(&cfg).unwrap();
        match solve(&p, Mode::IndependentOperator.spec(), &HighsBackend, &SolveOptions::default()) {
            Err(Error::Infeasible { stage, .. }) => assert_eq!(stage, "balance-relaxed-reserve"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_unit_follows_flat_load() {
        let mut cfg = ScenarioConfig::from_json_str(&toy_json()).unwrap();
        cfg.tp_units.clear();
        cfg.fixed_load = vec![60.0; 3];
        cfg.renewables.wind = None;
        cfg.renewables.pv = None;
        cfg.demand_response.alpha = 0.0;
        let p = PreparedScenario::new(&cfg).unwrap();
        let r = solve(&p, Mode::IndependentOperator.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        for t in 0..3 {
            assert_relative_eq!(r.solution.chp[0].power[t], 60.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn rigid_users_pay_fixed_revenue() {
        let mut cfg = ScenarioConfig::from_json_str(&toy_json()).unwrap();
        cfg.demand_response.alpha = 0.0;
        cfg.demand_response.theta = 1e12;
        let p = PreparedScenario::new(&cfg).unwrap();
        let r = solve(&p, Mode::Joint.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        let s = &r.solution;
        assert!(s.shiftable.iter().chain(&s.cut).all(|v| v.abs() <= 1e-6), "{s:?}");
        let revenue: f64 = (0..3).map(|t| p.dt * (s.mu[t] * cfg.fixed_load[t] + s.gamma[t] * p.heat_demand[t])).sum();
        assert_relative_eq!(s.f1, revenue - crate::game::operating_cost(&p, s), max_relative = 1e-9);
    }

    #[test]
    fn oracle_agrees_with_joint_solution_on_toy() {
        let p = toy();
        let opts = SolveOptions { pwl_segments: 32, ..SolveOptions::default() };
        let joint = solve(&p, Mode::Joint.spec(), &HighsBackend, &opts).unwrap();
        let oracle = enumerate_oracle(&p, true, 5.0, 5.0, &HighsBackend, &opts).unwrap();
        let best = oracle.profits.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(best, oracle.profit);
        let tol = oracle.pwl_error_bound + joint.solution.pwl_error_bound + oracle.grid_sensitivity + 1e-6;
        assert!(
            joint.solution.f1 >= oracle.profit - oracle.pwl_error_bound - joint.solution.pwl_error_bound - 1e-6,
            "joint {} below oracle {}",
            joint.solution.f1,
            oracle.profit
        );
        assert!(
            (joint.solution.f1 - oracle.profit).abs() <= tol,
            "joint {} oracle {} tol {tol}",
            joint.solution.f1,
            oracle.profit
        );
    }

    #[test]
    fn oracle_refuses_huge_grids() {
        let p = toy();
        match enumerate_oracle(&p, true, 1e-3, 1e-3, &HighsBackend, &SolveOptions::default()) {
            Err(Error::GridTooLarge { points, .. }) => assert!(points > ORACLE_MAX_POINTS),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reserve_validation_passes_and_halving_fails() {
        let p = toy();
        let r = solve(&p, Mode::OperatorWithNetwork.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        let ok = validate_reserve(&r.solution.reserve_total, &p, 100_000, 11);
        assert!(ok.pass, "{ok:?}");
        let required: Vec<f64> = p.reserve_rows.iter().map(|r| r.min_reserve()).collect();
        assert!(validate_reserve(&required, &p, 100_000, 11).pass);
        let halved: Vec<f64> = required.iter().map(|r| r / 2.0).collect();
        assert!(!validate_reserve(&halved, &p, 100_000, 11).pass);
    }

    #[test]
    fn no_profitable_unilateral_deviation_on_toy() {
        let p = toy();
        let r = solve(&p, Mode::Joint.spec(), &HighsBackend, &SolveOptions::default()).unwrap();
        let users = follower_deviation_test(&r.solution, &p, 1000, 5);
        assert!(users.pass, "{users:?}");
        let leader = leader_deviation_test(&r.solution, &p, 200, 5, &HighsBackend, &SolveOptions::default()).unwrap();
        assert!(leader.pass, "{leader:?}");
    }

    #[test]
    fn random_shift_is_feasible() {
        let b = toy().follower_bounds();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = random_shift(&b, &mut rng);
            assert_relative_eq!(s.iter().sum::<f64>(), b.shift_total, epsilon = 1e-9);
            for t in 0..s.len() {
                assert!(s[t] >= b.shift_min[t] - 1e-12 && s[t] <= b.shift_max[t] + 1e-12);
            }
        }
    }
}
