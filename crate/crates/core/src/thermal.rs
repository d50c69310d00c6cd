//! District heating transport, building heat demand and PMV comfort limits.
//!
//! Temperatures are in °C, pipeline lengths in km, powers returned in MW.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// Specific heat of water, kJ/(kg·°C).
pub const WATER_SPECIFIC_HEAT: f64 = 4.186;
/// Density of water, kg/m³.
pub const WATER_DENSITY: f64 = 1000.0;

const KW_PER_MW: f64 = 1000.0;
const SECONDS_PER_HOUR: f64 = 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec<S> {
    pub length_km: S,
    pub diameter_m: S,
    /// Constant mass flow under quality regulation (kg/s).
    pub mass_flow: S,
    /// Thermal resistance R_h (km·°C/kW).
    pub thermal_resistance: S,
    pub ambient: S,
}

impl<S: Scalar> PipelineSpec<S> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.length_km > S::zero()
            && self.diameter_m > S::zero()
            && self.mass_flow > S::zero()
            && self.thermal_resistance > S::zero()
            && self.ambient.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("pipeline parameters must be positive: {self:?}")))
        }
    }

    /// Transported heat per °C of supply/return difference, c^w·G in MW/°C.
    pub fn heat_coefficient(&self) -> S {
        S::lit(WATER_SPECIFIC_HEAT) * self.mass_flow / S::lit(KW_PER_MW)
    }

    /// Heat loss per °C above ambient, 2π·L/R_h in MW/°C.
    pub fn loss_coefficient(&self) -> S {
        S::lit(2.0 * std::f64::consts::PI) * self.length_km / self.thermal_resistance / S::lit(KW_PER_MW)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildingSpec<S> {
    /// Comprehensive heat transfer coefficient K (kW/(m²·°C)).
    pub k: S,
    /// Surface area F (m²).
    pub f: S,
    /// Volume V (m³).
    pub v: S,
    /// Air specific heat (kJ/(kg·°C)).
    pub c_air: S,
    /// Air density (kg/m³).
    pub rho_air: S,
}

impl<S: Scalar> BuildingSpec<S> {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.k, self.f, self.v, self.c_air, self.rho_air];
        if pos.iter().all(|x| *x > S::zero()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("building parameters must be positive: {self:?}")))
        }
    }

    /// K·F in MW/°C.
    pub fn conductance(&self) -> S {
        self.k * self.f / S::lit(KW_PER_MW)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PmvSpec<S> {
    /// Metabolic rate M (W/m²).
    pub metabolic_rate: S,
    /// Clothing resistance I_cl (m²·°C/W).
    pub clothing: S,
    /// Skin temperature T^s (°C).
    pub skin_temperature: S,
    pub day_bound: S,
    pub night_bound: S,
    /// First hour of the day window (inclusive).
    pub day_start_hour: u32,
    /// End of the day window (exclusive).
    pub day_end_hour: u32,
}

impl<S: Scalar> Default for PmvSpec<S> {
    fn default() -> Self {
        Self {
            metabolic_rate: S::lit(80.0),
            clothing: S::lit(0.261),
            skin_temperature: S::lit(33.5),
            day_bound: S::lit(0.5),
            night_bound: S::one(),
            day_start_hour: 7,
            day_end_hour: 20,
        }
    }
}

impl<S: Scalar> PmvSpec<S> {
    pub fn validate(&self) -> Result<()> {
        let ok = self.metabolic_rate > S::zero()
            && self.clothing > S::zero()
            && self.day_bound > S::zero()
            && self.night_bound > S::zero()
            && self.day_start_hour < self.day_end_hour
            && self.day_end_hour <= 24;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid PMV parameters: {self:?}")))
        }
    }

    fn slope(&self) -> S {
        S::lit(3.76) / (self.metabolic_rate * (self.clothing + S::lit(0.1)))
    }

    pub fn is_day(&self, hour_of_day: u32) -> bool {
        (self.day_start_hour..self.day_end_hour).contains(&(hour_of_day % 24))
    }

    /// Comfort bound |PMV| for the given hour.
    pub fn bound_at(&self, hour_of_day: u32) -> S {
        if self.is_day(hour_of_day) {
            self.day_bound
        } else {
            self.night_bound
        }
    }
}

/// Heat carried by a pipeline (MW) for supply and return temperatures.
pub fn pipe_heat<S: Scalar>(p: &PipelineSpec<S>, t_sw: S, t_rw: S) -> Result<S> {
    if !(t_sw > t_rw) {
        return Err(Error::Domain(format!("supply {t_sw} °C not above return {t_rw} °C")));
    }
    Ok(p.heat_coefficient() * (t_sw - t_rw))
}

/// Heat lost along a pipeline (MW) at supply temperature `t_sw`.
pub fn pipe_loss<S: Scalar>(p: &PipelineSpec<S>, t_sw: S) -> Result<S> {
    if t_sw < p.ambient {
        return Err(Error::Domain(format!("supply {t_sw} °C below ambient {} °C", p.ambient)));
    }
    Ok(p.loss_coefficient() * (t_sw - p.ambient))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipeDelay<S> {
    /// Flow time along the pipeline (h).
    pub flow_time: S,
    /// Flow time in whole scheduling periods, rounded half-up.
    pub delay_steps: usize,
}

/// Transport delay of a pipeline for periods of `dt_hours`.
pub fn pipe_delay<S: Scalar>(p: &PipelineSpec<S>, dt_hours: S) -> Result<PipeDelay<S>> {
    if !(dt_hours > S::zero()) {
        return Err(Error::Domain(format!("period length {dt_hours} h must be positive")));
    }
    let length_m = p.length_km * S::lit(1000.0);
    let area = S::lit(std::f64::consts::PI) * p.diameter_m * p.diameter_m / S::lit(4.0);
    let seconds = length_m * area * S::lit(WATER_DENSITY) / p.mass_flow;
    let flow_time = seconds / S::lit(SECONDS_PER_HOUR);
    // Ties are decided on the flow time rounded to 1e-9 periods so that an exact half
    // computed with rounding noise still goes up.
    let delay_steps = (flow_time / dt_hours + S::lit(0.5) + S::lit(1e-9).max(S::epsilon()))
        .floor()
        .to_usize()
        .ok_or_else(|| Error::Domain(format!("flow time {flow_time} h not representable")))?;
    Ok(PipeDelay { flow_time, delay_steps })
}

/// Building heat demand H^OL (MW) from the first-order thermal model.
///
/// ```text
///        (T_in − T_out) + a·Δt·(T_in,prev − T_out)
/// H  =  -------------------------------------------,   a = K·F / (c_air·ρ_air·V)
///          1/(K·F) + Δt / (c_air·ρ_air·V)
/// ```
///
/// with K·F in kW/°C, c_air·ρ_air·V in kJ/°C and Δt in seconds, which gives kW.
pub fn building_heat_demand<S: Scalar>(b: &BuildingSpec<S>, t_in: S, t_in_prev: S, t_out: S, dt_hours: S) -> S {
    let kf = b.k * b.f;
    let capacity = b.c_air * b.rho_air * b.v;
    let dt = dt_hours * S::lit(SECONDS_PER_HOUR);
    let num = (t_in - t_out) + kf / capacity * dt * (t_in_prev - t_out);
    let den = S::one() / kf + dt / capacity;
    num / den / S::lit(KW_PER_MW)
}

/// Steady-state demand K·F·(T_in − T_out) in MW.
pub fn steady_state_demand<S: Scalar>(b: &BuildingSpec<S>, t_in: S, t_out: S) -> S {
    b.conductance() * (t_in - t_out)
}

/// Predicted mean vote at indoor temperature `t_in`.
pub fn pmv<S: Scalar>(spec: &PmvSpec<S>, t_in: S) -> S {
    S::lit(2.43) - spec.slope() * (spec.skin_temperature - t_in)
}

/// Indoor temperature at which the PMV equals `index`.
pub fn temperature_for_pmv<S: Scalar>(spec: &PmvSpec<S>, index: S) -> S {
    spec.skin_temperature - (S::lit(2.43) - index) / spec.slope()
}

/// Lowest indoor temperature allowed at `hour_of_day`.
pub fn min_indoor_temperature<S: Scalar>(spec: &PmvSpec<S>, hour_of_day: u32) -> S {
    temperature_for_pmv(spec, -spec.bound_at(hour_of_day))
}

/// Minimum heating load H^L_min (MW) at `hour_of_day` for outdoor temperature `t_out`.
///
/// Uses the steady-state form at the lowest comfortable indoor temperature. When it is
/// warm enough outside the minimum is zero.
pub fn min_heating_load<S: Scalar>(b: &BuildingSpec<S>, spec: &PmvSpec<S>, hour_of_day: u32, t_out: S) -> S {
    steady_state_demand(b, min_indoor_temperature(spec, hour_of_day), t_out).max(S::zero())
}
