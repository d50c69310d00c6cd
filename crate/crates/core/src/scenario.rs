//! Scenario files and the per-period data derived from them.
//!
//! A scenario is a JSON document. Powers, energies and cost coefficients are given in the
//! file's `power_unit`; [`PreparedScenario`] converts everything to MW before any model is
//! built, so downstream code only ever sees MW, MWh and $/MWh.

use crate::error::{Error, Result};
use crate::renewables::{BetaPvModel, PeriodRenewables, WeibullWtModel};
use crate::sequences::{ProbSequence, ReserveRequirementRows};
use crate::thermal::{
    building_heat_demand, min_heating_load, pipe_delay, temperature_for_pmv, BuildingSpec, PipeDelay, PipelineSpec,
    PmvSpec,
};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum PowerUnit {
    #[default]
    #[serde(rename = "MW")]
    Mw,
    #[serde(rename = "kW")]
    Kw,
}

impl PowerUnit {
    /// Multiplier taking a power in this unit to MW.
    pub fn to_mw(self) -> f64 {
        match self {
            PowerUnit::Mw => 1.0,
            PowerUnit::Kw => 1e-3,
        }
    }
}

/// Thermal power unit. Costs are `a·P² + b·P + c` in $/h, the reserve cost is per unit of
/// reserve and hour, ramps are per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpUnit {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub reserve_cost: f64,
}

/// Combined heat and power unit. The cost applies to the equivalent electric output
/// `P + c_v·H`; `c_m` is the back-pressure ratio bounding `P ≥ c_m·H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChpUnit {
    pub name: String,
    pub p_min: f64,
    pub p_max: f64,
    pub h_max: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c_v: f64,
    pub c_m: f64,
    pub reserve_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BessConfig {
    /// State-of-charge limits and initial (and final) state, in energy units.
    pub soc_min: f64,
    pub soc_max: f64,
    pub soc_init: f64,
    pub charge_max: f64,
    pub discharge_max: f64,
    pub efficiency: f64,
    pub discharge_cost: f64,
    pub charge_cost: f64,
    pub reserve_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub name: String,
    pub length_km: f64,
    pub diameter_m: f64,
    pub mass_flow_kg_s: f64,
    /// Number of identical buildings behind the heat exchanger.
    pub buildings: u32,
    /// Overrides the scenario-wide building for this pipeline.
    #[serde(default)]
    pub building: Option<BuildingSpec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhnConfig {
    /// Pipe thermal resistance (km·°C/kW).
    pub thermal_resistance: f64,
    pub ambient_c: f64,
    pub t_sw_min: f64,
    pub t_sw_max: f64,
    pub t_rw_min: f64,
    pub t_rw_max: f64,
}

/// Price limits and averages, in $ per energy unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    pub mu_min: f64,
    pub mu_max: f64,
    pub mu_avg: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_avg: f64,
}

fn default_shift_factor() -> f64 {
    2.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandResponseConfig {
    /// Share of the total electric load that is time-shiftable.
    pub alpha: f64,
    /// Comfort penalty θ in $/(unit²·h).
    pub theta: f64,
    /// Upper bound of the shiftable load in a period, as a multiple of its even share.
    #[serde(default = "default_shift_factor")]
    pub shiftable_max_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReserveEncoding {
    /// One binary per positive-threshold level, as in the deterministic equivalent.
    #[default]
    Indicators,
    /// A single row `R ≥ min_reserve`, equivalent because coverage is monotone in `R`.
    MinimumThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReserveConfig {
    pub confidence: f64,
    /// Discretization step q of the renewable sequences.
    pub step: f64,
    #[serde(default)]
    pub encoding: ReserveEncoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvConfig {
    pub p_max: f64,
    /// Beta shape parameters per period; `null` where there is no sun.
    pub beta: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindConfig {
    pub p_rated: f64,
    pub v_in: f64,
    pub v_rated: f64,
    pub v_out: f64,
    /// Weibull shape, shared by all periods.
    pub shape: f64,
    /// Weibull scale (m/s) per period.
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewablesConfig {
    #[serde(default)]
    pub pv: Option<PvConfig>,
    #[serde(default)]
    pub wind: Option<WindConfig>,
}

fn default_period_hours() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub power_unit: PowerUnit,
    pub horizon: usize,
    #[serde(default = "default_period_hours")]
    pub period_hours: f64,
    /// Clock hour at which period 0 starts.
    #[serde(default)]
    pub start_hour: u32,
    #[serde(default)]
    pub tp_units: Vec<TpUnit>,
    #[serde(default)]
    pub chp_units: Vec<ChpUnit>,
    #[serde(default)]
    pub bess: Option<BessConfig>,
    pub pipelines: Vec<PipelineConfig>,
    pub dhn: DhnConfig,
    pub building: BuildingSpec<f64>,
    #[serde(default)]
    pub pmv: PmvSpec<f64>,
    pub prices: PriceConfig,
    pub demand_response: DemandResponseConfig,
    pub reserve: ReserveConfig,
    pub fixed_load: Vec<f64>,
    pub outdoor_temperature: Vec<f64>,
    #[serde(default)]
    pub renewables: RenewablesConfig,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.horizon;
        if t == 0 {
            return Err(schema("horizon must be at least one period"));
        }
        if !(self.period_hours > 0.0 && self.period_hours.is_finite()) {
            return Err(schema("period_hours must be positive"));
        }
        if self.start_hour >= 24 {
            return Err(schema("start_hour must lie in 0..24"));
        }
        let check_len = |name: &str, len: usize| {
            if len == t {
                Ok(())
            } else {
                Err(schema(format!("{name} has {len} entries, horizon is {t}")))
            }
        };
        check_len("fixed_load", self.fixed_load.len())?;
        check_len("outdoor_temperature", self.outdoor_temperature.len())?;
        if self.fixed_load.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(schema("fixed_load entries must be finite and non-negative"));
        }
        if self.outdoor_temperature.iter().any(|x| !x.is_finite()) {
            return Err(schema("outdoor_temperature entries must be finite"));
        }
        if self.tp_units.is_empty() && self.chp_units.is_empty() {
            return Err(schema("at least one TP or CHP unit is required"));
        }
        for u in &self.tp_units {
            if !(0.0 <= u.p_min && u.p_min <= u.p_max && u.ramp_up >= 0.0 && u.ramp_down >= 0.0) {
                return Err(schema(format!("TP unit `{}` has inconsistent limits", u.name)));
            }
            if !(u.a >= 0.0 && u.reserve_cost >= 0.0) {
                return Err(schema(format!("TP unit `{}` needs a ≥ 0 and reserve cost ≥ 0", u.name)));
            }
        }
        for u in &self.chp_units {
            if !(0.0 <= u.p_min && u.p_min <= u.p_max && u.h_max >= 0.0 && u.ramp_up >= 0.0 && u.ramp_down >= 0.0) {
                return Err(schema(format!("CHP unit `{}` has inconsistent limits", u.name)));
            }
            if !(u.a >= 0.0 && u.c_v >= 0.0 && u.c_m >= 0.0 && u.reserve_cost >= 0.0) {
                return Err(schema(format!("CHP unit `{}` has negative coefficients", u.name)));
            }
        }
        if let Some(b) = &self.bess {
            if !(0.0 <= b.soc_min && b.soc_min <= b.soc_init && b.soc_init <= b.soc_max) {
                return Err(schema("BESS needs soc_min ≤ soc_init ≤ soc_max"));
            }
            if !(b.efficiency > 0.0 && b.efficiency <= 1.0) {
                return Err(schema("BESS efficiency must lie in (0, 1]"));
            }
            if !(b.charge_max >= 0.0 && b.discharge_max >= 0.0) {
                return Err(schema("BESS power limits must be non-negative"));
            }
        }
        if self.pipelines.is_empty() {
            return Err(schema("at least one pipeline is required"));
        }
        let d = &self.dhn;
        if !(d.t_sw_min <= d.t_sw_max && d.t_rw_min <= d.t_rw_max && d.t_rw_max < d.t_sw_min) {
            return Err(schema("DHN temperature limits must be ordered with return below supply"));
        }
        if d.t_sw_min < d.ambient_c {
            return Err(schema("supply temperature must not be below ambient"));
        }
        for p in &self.pipelines {
            self.pipeline_spec(p).validate().map_err(|e| schema(format!("pipeline `{}`: {e}", p.name)))?;
            p.building
                .unwrap_or(self.building)
                .validate()
                .map_err(|e| schema(format!("pipeline `{}`: {e}", p.name)))?;
        }
        self.building.validate().map_err(|e| schema(e.to_string()))?;
        self.pmv.validate().map_err(|e| schema(e.to_string()))?;
        let pr = &self.prices;
        if !(pr.mu_min <= pr.mu_avg && pr.mu_avg <= pr.mu_max) {
            return Err(schema("electricity prices need mu_min ≤ mu_avg ≤ mu_max"));
        }
        if !(pr.gamma_min <= pr.gamma_avg && pr.gamma_avg <= pr.gamma_max) {
            return Err(schema("heat prices need gamma_min ≤ gamma_avg ≤ gamma_max"));
        }
        if !(pr.mu_min > 0.0 && pr.gamma_min >= 0.0) {
            return Err(schema("price limits must be positive"));
        }
        let dr = &self.demand_response;
        if !(0.0..1.0).contains(&dr.alpha) {
            return Err(schema("alpha must lie in [0, 1)"));
        }
        if !(dr.theta > 0.0) {
            return Err(schema("theta must be positive"));
        }
        if !(dr.shiftable_max_factor >= 1.0) {
            return Err(schema("shiftable_max_factor must be at least 1"));
        }
        let r = &self.reserve;
        if !(r.confidence > 0.0 && r.confidence < 1.0) {
            return Err(schema("confidence must lie in (0, 1)"));
        }
        if !(r.step > 0.0) {
            return Err(schema("reserve step must be positive"));
        }
        if let Some(pv) = &self.renewables.pv {
            check_len("renewables.pv.beta", pv.beta.len())?;
            if !(pv.p_max > 0.0) {
                return Err(schema("PV p_max must be positive"));
            }
        }
        if let Some(w) = &self.renewables.wind {
            check_len("renewables.wind.scale", w.scale.len())?;
        }
        Ok(())
    }

    fn pipeline_spec(&self, p: &PipelineConfig) -> PipelineSpec<f64> {
        PipelineSpec {
            length_km: p.length_km,
            diameter_m: p.diameter_m,
            mass_flow: p.mass_flow_kg_s,
            thermal_resistance: self.dhn.thermal_resistance,
            ambient: self.dhn.ambient_c,
        }
    }

    /// A copy with every power-denominated quantity expressed in MW.
    pub fn normalized(&self) -> ScenarioConfig {
        let f = self.power_unit.to_mw();
        if f == 1.0 {
            return self.clone();
        }
        let mut c = self.clone();
        c.power_unit = PowerUnit::Mw;
        for u in &mut c.tp_units {
            u.p_min *= f;
            u.p_max *= f;
            u.ramp_up *= f;
            u.ramp_down *= f;
            u.a /= f * f;
            u.b /= f;
            u.reserve_cost /= f;
        }
        for u in &mut c.chp_units {
            u.p_min *= f;
            u.p_max *= f;
            u.h_max *= f;
            u.ramp_up *= f;
            u.ramp_down *= f;
            u.a /= f * f;
            u.b /= f;
            u.reserve_cost /= f;
        }
        if let Some(b) = &mut c.bess {
            b.soc_min *= f;
            b.soc_max *= f;
            b.soc_init *= f;
            b.charge_max *= f;
            b.discharge_max *= f;
            b.discharge_cost /= f;
            b.charge_cost /= f;
            b.reserve_cost /= f;
        }
        let p = &mut c.prices;
        for x in [&mut p.mu_min, &mut p.mu_max, &mut p.mu_avg, &mut p.gamma_min, &mut p.gamma_max, &mut p.gamma_avg] {
            *x /= f;
        }
        c.demand_response.theta /= f * f;
        c.reserve.step *= f;
        c.fixed_load.iter_mut().for_each(|x| *x *= f);
        if let Some(pv) = &mut c.renewables.pv {
            pv.p_max *= f;
        }
        if let Some(w) = &mut c.renewables.wind {
            w.p_rated *= f;
        }
        c
    }
}

/// Heat-network data for one pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPipeline {
    pub name: String,
    pub spec: PipelineSpec<f64>,
    pub delay: PipeDelay<f64>,
    /// c·G in MW/°C.
    pub heat_coef: f64,
    /// Loss per degree above ambient, MW/°C.
    pub loss_coef: f64,
    /// Building conductance behind the exchanger, MW/°C.
    pub conductance: f64,
    /// Fraction of the system's cuttable heat that falls on this pipeline.
    pub share: f64,
    /// Exchanger demand at PMV 0 per period (MW).
    pub demand: Vec<f64>,
    pub min_demand: Vec<f64>,
}

/// A validated scenario in MW with all per-period derived data.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub cfg: ScenarioConfig,
    pub dt: f64,
    pub hours: Vec<u32>,
    pub renewables: Vec<PeriodRenewables>,
    pub joint: Vec<ProbSequence<f64>>,
    pub reserve_rows: Vec<ReserveRequirementRows<f64>>,
    /// Expected renewable output E_t (MW).
    pub expected: Vec<f64>,
    pub pipelines: Vec<PreparedPipeline>,
    /// Total comfort-optimal heat demand H^OL_t (MW).
    pub heat_demand: Vec<f64>,
    /// Total minimum heat load H^L_min,t (MW).
    pub heat_min: Vec<f64>,
    /// Upper bound of the cuttable heat load, H^OL_t − H^L_min,t.
    pub cut_max: Vec<f64>,
    pub conductance_total: f64,
    /// Constant total of the shiftable load S (sum of per-period MW).
    pub shift_total: f64,
    pub shift_min: Vec<f64>,
    pub shift_max: Vec<f64>,
    /// Shiftable load when users do not respond to prices.
    pub shift_baseline: Vec<f64>,
    /// Prices used when the operator does not set them: proportional to the loads.
    pub fixed_mu: Vec<f64>,
    pub fixed_gamma: Vec<f64>,
}

impl PreparedScenario {
    pub fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    pub fn theta(&self) -> f64 {
        self.cfg.demand_response.theta
    }
}

/// Prices `clamp(k·load_t, lo, hi)` with `k` chosen so that their mean is `avg`.
pub fn proportional_prices(load: &[f64], lo: f64, hi: f64, avg: f64) -> Result<Vec<f64>> {
    if load.is_empty() {
        return Ok(Vec::new());
    }
    if lo == hi {
        return Ok(vec![lo; load.len()]);
    }
    let n = load.len() as f64;
    let mean = |k: f64| load.iter().map(|l| (k * l).clamp(lo, hi)).sum::<f64>() / n;
    let positive_min = load.iter().copied().filter(|l| *l > 0.0).fold(f64::INFINITY, f64::min);
    if !positive_min.is_finite() {
        return Err(Error::InvalidParameter("proportional prices need a positive load".into()));
    }
    let (mut a, mut b) = (0.0, hi / positive_min);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if mean(m) < avg {
            a = m;
        } else {
            b = m;
        }
    }
    let mut prices: Vec<f64> = load.iter().map(|l| (b * l).clamp(lo, hi)).collect();
    let residual = avg * n - prices.iter().sum::<f64>();
    if residual.abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "average price {avg} is not reachable by load-proportional prices in [{lo}, {hi}]"
        )));
    }
    // Spread the last rounding residue over the interior prices so the average is exact.
    let interior: Vec<usize> = (0..prices.len()).filter(|&i| prices[i] > lo && prices[i] < hi).collect();
    if !interior.is_empty() {
        let share = residual / interior.len() as f64;
        for i in interior {
            prices[i] += share;
        }
    }
    Ok(prices)
}

impl PreparedScenario {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.normalized();
        let t_len = cfg.horizon;
        let dt = cfg.period_hours;
        let hours: Vec<u32> =
            (0..t_len).map(|t| ((cfg.start_hour as f64 + t as f64 * dt).floor() as u64 % 24) as u32).collect();

        let q = cfg.reserve.step;
        let mut renewables = Vec::with_capacity(t_len);
        let mut joint = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let pv = match &cfg.renewables.pv {
                Some(pv) => match pv.beta[t] {
                    Some([l1, l2]) => {
                        Some(BetaPvModel::new(l1, l2, pv.p_max).map_err(|e| schema(format!("PV period {t}: {e}")))?)
                    }
                    None => None,
                },
                None => None,
            };
            let wind = match &cfg.renewables.wind {
                Some(w) => Some(
                    WeibullWtModel::new(w.scale[t], w.shape, w.v_in, w.v_rated, w.v_out, w.p_rated)
                        .map_err(|e| schema(format!("wind period {t}: {e}")))?,
                ),
                None => None,
            };
            let a = match &pv {
                Some(m) => ProbSequence::discretize(m, q)?,
                None => ProbSequence::zero(q),
            };
            let b = match &wind {
                Some(m) => ProbSequence::discretize(&m.output_distribution(), q)?,
                None => ProbSequence::zero(q),
            };
            joint.push(a.convolve(&b)?);
            renewables.push(PeriodRenewables { pv, wind });
        }
        let reserve_rows = joint.iter().map(|s| s.reserve_rows(cfg.reserve.confidence)).collect::<Result<Vec<_>>>()?;
        let expected = reserve_rows.iter().map(|r| r.expected).collect();

        let t_comfort = temperature_for_pmv(&cfg.pmv, 0.0);
        let mut pipelines = Vec::with_capacity(cfg.pipelines.len());
        for p in &cfg.pipelines {
            let spec = cfg.pipeline_spec(p);
            let building = p.building.unwrap_or(cfg.building);
            let n = p.buildings as f64;
            let demand: Vec<f64> = cfg
                .outdoor_temperature
                .iter()
                .map(|&t_out| n * building_heat_demand(&building, t_comfort, t_comfort, t_out, dt).max(0.0))
                .collect();
            let min_demand: Vec<f64> = cfg
                .outdoor_temperature
                .iter()
                .zip(&hours)
                .map(|(&t_out, &h)| n * min_heating_load(&building, &cfg.pmv, h, t_out))
                .collect();
            pipelines.push(PreparedPipeline {
                name: p.name.clone(),
                spec,
                delay: pipe_delay(&spec, dt)?,
                heat_coef: spec.heat_coefficient(),
                loss_coef: spec.loss_coefficient(),
                conductance: n * building.conductance(),
                share: 0.0,
                demand,
                min_demand,
            });
        }
        let conductance_total: f64 = pipelines.iter().map(|p| p.conductance).sum();
        if !(conductance_total > 0.0) {
            return Err(schema("pipelines serve no buildings"));
        }
        for p in &mut pipelines {
            p.share = p.conductance / conductance_total;
        }
        let heat_demand: Vec<f64> = (0..t_len).map(|t| pipelines.iter().map(|p| p.demand[t]).sum()).collect();
        let heat_min: Vec<f64> = (0..t_len).map(|t| pipelines.iter().map(|p| p.min_demand[t]).sum()).collect();
        for t in 0..t_len {
            if heat_min[t] > heat_demand[t] + 1e-9 {
                return Err(schema(format!(
                    "period {t}: minimum heat load {} exceeds the comfort-optimal demand {}",
                    heat_min[t], heat_demand[t]
                )));
            }
        }
        let cut_max: Vec<f64> = heat_demand.iter().zip(&heat_min).map(|(h, m)| (h - m).max(0.0)).collect();

        let dr = &cfg.demand_response;
        let ratio = dr.alpha / (1.0 - dr.alpha);
        let shift_total = ratio * cfg.fixed_load.iter().sum::<f64>();
        let shift_baseline: Vec<f64> = cfg.fixed_load.iter().map(|p| ratio * p).collect();
        let shift_min = vec![0.0; t_len];
        let shift_max: Vec<f64> = shift_baseline.iter().map(|b| dr.shiftable_max_factor * b).collect();

        let pr = &cfg.prices;
        let fixed_mu = proportional_prices(&cfg.fixed_load, pr.mu_min, pr.mu_max, pr.mu_avg)?;
        let fixed_gamma = proportional_prices(&heat_demand, pr.gamma_min, pr.gamma_max, pr.gamma_avg)?;

        Ok(Self {
            dt,
            hours,
            renewables,
            joint,
            reserve_rows,
            expected,
            pipelines,
            heat_demand,
            heat_min,
            cut_max,
            conductance_total,
            shift_total,
            shift_min,
            shift_max,
            shift_baseline,
            fixed_mu,
            fixed_gamma,
            cfg,
        })
    }

    /// Reads, validates and prepares a scenario file.
    pub fn from_path(path: &Path) -> Result<Self> {
        Self::new(&ScenarioConfig::from_path(path)?)
    }
}
