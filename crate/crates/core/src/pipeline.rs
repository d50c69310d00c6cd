//! End-to-end runs: load a scenario, solve a mode, check the result and write the
//! per-period tables and a JSON summary.

use crate::error::{Error, Result};
use crate::game::{EquilibriumSolution, Mode, ModelSpec, ValidationReport};
use crate::scenario::{PreparedScenario, ScenarioConfig};
use crate::solve::{
    backend_by_name, solve_unchecked, validate_reserve, ReserveValidation, SolveOptions, SolverBackend,
};
use crate::thermal::pmv;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Version of the CSV column layout written by [`ReportBundle::write`].
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Default Monte Carlo sample count for reserve validation.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: PathBuf,
    pub mode: Mode,
    /// Overrides the scenario's confidence level.
    pub confidence: Option<f64>,
    pub seed: u64,
    pub backend: String,
    pub out: Option<PathBuf>,
    pub solve: SolveOptions,
    pub mc_samples: usize,
}

impl RunManifest {
    pub fn new(scenario: impl Into<PathBuf>, mode: Mode) -> Self {
        Self {
            scenario: scenario.into(),
            mode,
            confidence: None,
            seed: 0,
            backend: "highs".into(),
            out: None,
            solve: SolveOptions::default(),
            mc_samples: DEFAULT_MC_SAMPLES,
        }
    }

    /// Network and demand-response toggles implied by the mode.
    pub fn toggles(&self) -> ModelSpec {
        self.mode.spec()
    }

    pub fn load_scenario(&self) -> Result<PreparedScenario> {
        let mut cfg = ScenarioConfig::from_path(&self.scenario)?;
        if let Some(g) = self.confidence {
            cfg.reserve.confidence = g;
        }
        PreparedScenario::new(&cfg)
    }
}

/// A per-period table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    fn new(name: &str, header: Vec<String>) -> Self {
        Self { name: name.into(), header, rows: Vec::new() }
    }

    /// CSV text; numbers use the shortest representation that parses back to the same
    /// value, so totals recomputed from the file match the summary exactly.
    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Headline numbers of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub csv_schema_version: u32,
    pub scenario: String,
    pub mode: u8,
    pub power_unit: String,
    pub f1: f64,
    pub f2: f64,
    pub absorbed_renewables: f64,
    pub curtailed_renewables: f64,
    pub total_reserve: f64,
    pub objective: f64,
    pub mip_gap: f64,
    pub pwl_error_bound: f64,
    pub runtime_s: f64,
    pub backend: String,
    pub seed: u64,
    pub verified: bool,
    pub reserve_adequate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub manifest: RunManifest,
    pub summary: RunSummary,
    pub solution: EquilibriumSolution,
    pub verification: ValidationReport,
    pub reserve: ReserveValidation,
    pub tables: Vec<CsvTable>,
}

impl ReportBundle {
    /// True when the solution passed every check.
    pub fn accepted(&self) -> bool {
        self.verification.is_ok() && self.reserve.pass
    }

    pub fn table(&self, name: &str) -> Option<&CsvTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Writes `<name>.csv` per table, `summary.json` and `validation.json` into `dir`.
    /// Each file is written to a temporary name first and renamed into place.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for t in &self.tables {
            write_atomic(&dir.join(format!("{}.csv", t.name)), &t.render())?;
        }
        write_atomic(&dir.join("summary.json"), &serde_json::to_string_pretty(&self.summary)?)?;
        let validation = serde_json::json!({
            "verification": self.verification,
            "reserve": self.reserve,
        });
        write_atomic(&dir.join("validation.json"), &serde_json::to_string_pretty(&validation)?)?;
        Ok(())
    }
}

/// Writes `text` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, text.as_bytes())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn periods(p: &PreparedScenario) -> impl Iterator<Item = (usize, f64)> + '_ {
    p.hours.iter().enumerate().map(|(t, h)| (t, *h as f64))
}

/// Per-period tables of a solution.
pub fn solution_tables(sol: &EquilibriumSolution, p: &PreparedScenario) -> Vec<CsvTable> {
    let head =
        |cols: &[&str]| -> Vec<String> { ["period", "hour"].iter().chain(cols).map(|s| (*s).to_owned()).collect() };

    let mut prices = CsvTable::new("prices", head(&["mu", "gamma"]));
    for (t, h) in periods(p) {
        prices.rows.push(vec![t as f64, h, sol.mu[t], sol.gamma[t]]);
    }

    let t_in = sol.indoor_temperature(p);
    let mut loads = CsvTable::new(
        "loads",
        head(&[
            "fixed_load",
            "shiftable",
            "electric_load",
            "heat_demand",
            "heat_cut",
            "heat_load",
            "indoor_temperature",
            "pmv",
        ]),
    );
    for (t, h) in periods(p) {
        loads.rows.push(vec![
            t as f64,
            h,
            p.cfg.fixed_load[t],
            sol.shiftable[t],
            sol.electric_load[t],
            p.heat_demand[t],
            sol.cut[t],
            sol.heat_load[t],
            t_in[t],
            pmv(&p.cfg.pmv, t_in[t]),
        ]);
    }

    let mut cols: Vec<String> = Vec::new();
    for u in &sol.tp {
        cols.push(format!("{}_power", u.name));
    }
    for u in &sol.chp {
        cols.push(format!("{}_power", u.name));
        cols.push(format!("{}_heat", u.name));
    }
    if sol.bess.is_some() {
        cols.extend(["bess_charge", "bess_discharge", "bess_soc"].map(String::from));
    }
    let mut dispatch = CsvTable::new("dispatch", head(&cols.iter().map(String::as_str).collect::<Vec<_>>()));
    for (t, h) in periods(p) {
        let mut row = vec![t as f64, h];
        row.extend(sol.tp.iter().map(|u| u.power[t]));
        for u in &sol.chp {
            row.push(u.power[t]);
            row.push(u.heat[t]);
        }
        if let Some(b) = &sol.bess {
            row.extend([b.charge[t], b.discharge[t], b.soc[t]]);
        }
        dispatch.rows.push(row);
    }

    let mut cols: Vec<String> = sol.tp.iter().chain(&sol.chp).map(|u| format!("{}_reserve", u.name)).collect();
    if sol.bess.is_some() {
        cols.push("bess_reserve".into());
    }
    cols.extend(["total", "required"].map(String::from));
    let mut reserves = CsvTable::new("reserves", head(&cols.iter().map(String::as_str).collect::<Vec<_>>()));
    for (t, h) in periods(p) {
        let mut row = vec![t as f64, h];
        row.extend(sol.tp.iter().chain(&sol.chp).map(|u| u.reserve[t]));
        if let Some(b) = &sol.bess {
            row.push(b.reserve[t]);
        }
        row.extend([sol.reserve_total[t], sol.reserve_required[t]]);
        reserves.rows.push(row);
    }

    let cols: Vec<String> = p
        .pipelines
        .iter()
        .filter(|_| !sol.supply_temperature.is_empty())
        .flat_map(|k| [format!("{}_supply", k.name), format!("{}_return", k.name)])
        .collect();
    let mut temperatures = CsvTable::new("temperatures", head(&cols.iter().map(String::as_str).collect::<Vec<_>>()));
    for (t, h) in periods(p) {
        let mut row = vec![t as f64, h];
        for (sw, rw) in sol.supply_temperature.iter().zip(&sol.return_temperature) {
            row.extend([sw[t], rw[t]]);
        }
        temperatures.rows.push(row);
    }

    let mut renewables = CsvTable::new("renewables", head(&["expected", "used", "curtailed"]));
    for (t, h) in periods(p) {
        renewables.rows.push(vec![
            t as f64,
            h,
            sol.renewable_expected[t],
            sol.renewable_used[t],
            sol.renewable_expected[t] - sol.renewable_used[t],
        ]);
    }

    vec![prices, loads, dispatch, reserves, temperatures, renewables]
}

/// Solves one mode on a prepared scenario and assembles the report.
pub fn run_prepared(manifest: &RunManifest, p: &PreparedScenario, backend: &dyn SolverBackend) -> Result<ReportBundle> {
    let result = solve_unchecked(p, manifest.mode.spec(), backend, &manifest.solve)?;
    let sol = result.solution;
    let reserve = validate_reserve(&sol.reserve_total, p, manifest.mc_samples, manifest.seed);
    let summary = RunSummary {
        csv_schema_version: CSV_SCHEMA_VERSION,
        scenario: p.cfg.name.clone(),
        mode: manifest.mode.number(),
        power_unit: "MW".into(),
        f1: sol.f1,
        f2: sol.f2,
        absorbed_renewables: sol.absorbed_renewables,
        curtailed_renewables: sol.curtailed_renewables,
        total_reserve: sol.reserve_total.iter().sum(),
        objective: sol.objective,
        mip_gap: sol.mip_gap,
        pwl_error_bound: sol.pwl_error_bound,
        runtime_s: sol.runtime_s,
        backend: sol.backend.clone(),
        seed: manifest.seed,
        verified: result.report.is_ok(),
        reserve_adequate: reserve.pass,
    };
    Ok(ReportBundle {
        manifest: manifest.clone(),
        summary,
        tables: solution_tables(&sol, p),
        solution: sol,
        verification: result.report,
        reserve,
    })
}

/// Runs the manifest end to end and writes the bundle when an output directory is set.
pub fn run(manifest: &RunManifest) -> Result<ReportBundle> {
    let p = manifest.load_scenario()?;
    let backend = backend_by_name(&manifest.backend)?;
    log::info!("solving {} in mode {} with {}", p.cfg.name, manifest.mode, manifest.backend);
    let bundle = run_prepared(manifest, &p, backend.as_ref())?;
    if let Some(dir) = &manifest.out {
        bundle.write(dir)?;
    }
    Ok(bundle)
}

/// One line of a mode comparison; `error` holds the failure reason of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub mode: u8,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub absorbed_renewables: Option<f64>,
    pub runtime_s: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub rows: Vec<ComparisonRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "failed".into(), |x| format!("{x}"))
}

impl ComparisonTable {
    pub fn row(&self, mode: Mode) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.mode == mode.number())
    }

    /// CSV text; with two or more modes, profit and cost differences to the first mode
    /// are appended.
    pub fn render(&self) -> String {
        let compare = self.rows.len() > 1;
        let mut out = String::from("mode,f1,f2,absorbed_renewables,runtime_s");
        if compare {
            out.push_str(",f1_minus_first,f2_minus_first");
        }
        out.push_str(",error\n");
        let first = self.rows.first();
        for r in &self.rows {
            let _ = write!(
                out,
                "{},{},{},{},{}",
                r.mode,
                cell(r.f1),
                cell(r.f2),
                cell(r.absorbed_renewables),
                cell(r.runtime_s)
            );
            if compare {
                let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
                let f = first.expect("non-empty");
                let _ = write!(out, ",{},{}", cell(diff(r.f1, f.f1)), cell(diff(r.f2, f.f2)));
            }
            let _ = writeln!(out, ",{}", r.error.as_deref().unwrap_or(""));
        }
        out
    }
}

/// Solves several modes in parallel; failed runs stay in the table with their reason.
pub fn compare_modes(
    p: &PreparedScenario,
    modes: &[Mode],
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> ComparisonTable {
    let rows = modes
        .par_iter()
        .map(|&mode| match solve_unchecked(p, mode.spec(), backend, opts) {
            Ok(r) if r.report.is_ok() => ComparisonRow {
                mode: mode.number(),
                f1: Some(r.solution.f1),
                f2: Some(r.solution.f2),
                absorbed_renewables: Some(r.solution.absorbed_renewables),
                runtime_s: Some(r.solution.runtime_s),
                error: None,
            },
            Ok(r) => failed_row(mode, format!("validation: {}", r.report.summary().replace('\n', "; "))),
            Err(e) => failed_row(mode, format!("{}: {e}", e.reason())),
        })
        .collect();
    ComparisonTable { scenario: p.cfg.name.clone(), rows }
}

fn failed_row(mode: Mode, error: String) -> ComparisonRow {
    ComparisonRow {
        mode: mode.number(),
        f1: None,
        f2: None,
        absorbed_renewables: None,
        runtime_s: None,
        error: Some(error),
    }
}

/// Parameter varied by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParameter {
    /// Heat-curtailment penalty θ, in the scenario's units.
    Theta,
    /// Reserve confidence level 𝒢.
    Confidence,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theta" => Ok(Self::Theta),
            "confidence" => Ok(Self::Confidence),
            other => Err(Error::InvalidParameter(format!(
                "unknown sweep parameter `{other}` (expected theta or confidence)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub heat_cut: Vec<f64>,
    pub reserve: Vec<f64>,
    pub total_reserve: f64,
    pub f1: f64,
    pub f2: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParameter,
    pub mode: u8,
    pub hours: Vec<u32>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Long-format CSV: one line per value and period.
    pub fn render(&self) -> String {
        let mut out = String::from("value,period,hour,heat_cut,reserve,total_reserve,f1,f2,error\n");
        for r in &self.rows {
            if r.error.is_some() {
                let _ = writeln!(out, "{},,,,,,,,{}", r.value, r.error.as_deref().unwrap_or(""));
                continue;
            }
            for (t, h) in self.hours.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{t},{h},{},{},{},{},{},",
                    r.value, r.heat_cut[t], r.reserve[t], r.total_reserve, r.f1, r.f2
                );
            }
        }
        out
    }
}

/// Solves `mode` once per parameter value, in parallel.
pub fn sweep(
    cfg: &ScenarioConfig,
    parameter: SweepParameter,
    values: &[f64],
    mode: Mode,
    backend: &dyn SolverBackend,
    opts: &SolveOptions,
) -> Result<SweepTable> {
    let base = PreparedScenario::new(cfg)?;
    let rows = values
        .par_iter()
        .map(|&value| {
            let mut c = cfg.clone();
            match parameter {
                SweepParameter::Theta => c.demand_response.theta = value,
                SweepParameter::Confidence => c.reserve.confidence = value,
            }
            let outcome = PreparedScenario::new(&c).and_then(|p| crate::solve::solve(&p, mode.spec(), backend, opts));
            match outcome {
                Ok(r) => SweepRow {
                    value,
                    heat_cut: r.solution.cut.clone(),
                    reserve: r.solution.reserve_total.clone(),
                    total_reserve: r.solution.reserve_total.iter().sum(),
                    f1: r.solution.f1,
                    f2: r.solution.f2,
                    error: None,
                },
                Err(e) => SweepRow {
                    value,
                    heat_cut: vec![],
                    reserve: vec![],
                    total_reserve: f64::NAN,
                    f1: f64::NAN,
                    f2: f64::NAN,
                    error: Some(format!("{}: {e}", e.reason())),
                },
            }
        })
        .collect();
    Ok(SweepTable { parameter, mode: mode.number(), hours: base.hours.clone(), rows })
}
