//! The operator–users Stackelberg game: model assembly, the users' closed-form best
//! response, solution extraction and independent verification.
//!
//! The operator (leader) sets the electricity and heat prices and dispatches the units,
//! the storage and the heat network. The users (follower) choose how much electric load to
//! shift between periods and how much heat to give up for a comfort penalty.

use crate::error::{Error, Result};
use crate::ir::{ModelIr, ObjSense, RowSense, VarId};
use crate::kkt::{assemble_single_level, FollowerFragment, KktBlock};
use crate::scenario::{PreparedScenario, ReserveEncoding};
use crate::thermal::pmv;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Feasibility tolerance of the solution checks (MW, °C and $/MWh alike).
pub const FEASIBILITY_TOL: f64 = 1e-6;
/// Tolerance of the best-response comparison (MW).
pub const RESPONSE_TOL: f64 = 1e-5;
/// Relative tolerance of the recomputed objectives.
pub const OBJECTIVE_RTOL: f64 = 1e-4;

/// Model switches. The four operating modes are fixed combinations of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Model the heat network (temperatures, delays, losses) instead of a lumped balance.
    pub dhn: bool,
    /// Prices are decision variables of the operator instead of load-proportional constants.
    pub leader_prices: bool,
    /// Users shift electric load and cut heat in response to prices.
    pub idr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Operator alone, fixed prices, lumped heat balance.
    IndependentOperator,
    /// Operator alone with the heat network.
    OperatorWithNetwork,
    /// Joint Stackelberg optimization with the heat network and demand response.
    Joint,
    /// Users respond to fixed prices, operator dispatches with the heat network.
    IndependentUsers,
}

impl Mode {
    pub const ALL: [Mode; 4] =
        [Mode::IndependentOperator, Mode::OperatorWithNetwork, Mode::Joint, Mode::IndependentUsers];

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Mode::IndependentOperator),
            2 => Ok(Mode::OperatorWithNetwork),
            3 => Ok(Mode::Joint),
            4 => Ok(Mode::IndependentUsers),
            _ => Err(Error::InvalidParameter(format!("mode must be 1, 2, 3 or 4, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Mode::IndependentOperator => 1,
            Mode::OperatorWithNetwork => 2,
            Mode::Joint => 3,
            Mode::IndependentUsers => 4,
        }
    }

    pub fn spec(self) -> ModelSpec {
        match self {
            Mode::IndependentOperator => ModelSpec { dhn: false, leader_prices: false, idr: false },
            Mode::OperatorWithNetwork => ModelSpec { dhn: true, leader_prices: false, idr: false },
            Mode::Joint => ModelSpec { dhn: true, leader_prices: true, idr: true },
            Mode::IndependentUsers => ModelSpec { dhn: true, leader_prices: false, idr: true },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// A model quantity that is either a decision variable or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quantity {
    Var(VarId),
    Fixed(f64),
}

impl Quantity {
    pub fn value(&self, x: &[f64]) -> f64 {
        match *self {
            Quantity::Var(v) => x[v.0],
            Quantity::Fixed(c) => c,
        }
    }
}

/// Adds `coef · q` to a row: a term for variables, a right-hand-side shift for constants.
fn push_quantity(terms: &mut Vec<(VarId, f64)>, rhs: &mut f64, coef: f64, q: Quantity) {
    match q {
        Quantity::Var(v) => terms.push((v, coef)),
        Quantity::Fixed(c) => *rhs -= coef * c,
    }
}

/// Bounds of the users' problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerBounds {
    pub shift_min: Vec<f64>,
    pub shift_max: Vec<f64>,
    pub shift_total: f64,
    pub cut_max: Vec<f64>,
    pub theta: f64,
}

impl PreparedScenario {
    pub fn follower_bounds(&self) -> FollowerBounds {
        FollowerBounds {
            shift_min: self.shift_min.clone(),
            shift_max: self.shift_max.clone(),
            shift_total: self.shift_total,
            cut_max: self.cut_max.clone(),
            theta: self.theta(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowerResponse {
    pub shiftable: Vec<f64>,
    pub cut: Vec<f64>,
}

/// Periods ordered by ascending price, ties broken by period index.
fn price_order(mu: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..mu.len()).collect();
    order.sort_by(|&a, &b| mu[a].total_cmp(&mu[b]).then(a.cmp(&b)));
    order
}

/// The users' optimal reaction to prices.
///
/// Heat: `H^CL_t = clamp(γ_t / 2θ, 0, ub_t)`. Electricity: the fixed shiftable total is
/// poured into the cheapest periods first, each up to its bound.
pub fn follower_best_response(mu: &[f64], gamma: &[f64], b: &FollowerBounds) -> Result<FollowerResponse> {
    let t_len = b.shift_min.len();
    if mu.len() != t_len || gamma.len() != t_len || b.shift_max.len() != t_len || b.cut_max.len() != t_len {
        return Err(Error::InvalidParameter("price and bound vectors must share the horizon".into()));
    }
    let floor: f64 = b.shift_min.iter().sum();
    let ceiling: f64 = b.shift_max.iter().sum();
    if b.shift_total > ceiling + FEASIBILITY_TOL || b.shift_total < floor - FEASIBILITY_TOL {
        return Err(Error::Infeasible {
            stage: "static-bounds".into(),
            detail: format!("shiftable total {} outside [{floor}, {ceiling}]", b.shift_total),
        });
    }
    let mut shiftable = b.shift_min.clone();
    let mut remaining = b.shift_total - floor;
    for t in price_order(mu) {
        if remaining <= 0.0 {
            break;
        }
        let add = (b.shift_max[t] - b.shift_min[t]).min(remaining);
        shiftable[t] += add;
        remaining -= add;
    }
    let cut = gamma.iter().zip(&b.cut_max).map(|(g, ub)| (g / (2.0 * b.theta)).clamp(0.0, *ub)).collect();
    Ok(FollowerResponse { shiftable, cut })
}

/// Users' cost `Σ Δt·[μ(P^FL + P^SL) + γ(H^OL − H^CL) + θ(H^CL)²]`.
pub fn follower_cost(p: &PreparedScenario, mu: &[f64], gamma: &[f64], shiftable: &[f64], cut: &[f64]) -> f64 {
    let theta = p.theta();
    (0..p.horizon())
        .map(|t| {
            let pl = p.cfg.fixed_load[t] + shiftable[t];
            let hl = p.heat_demand[t] - cut[t];
            p.dt * (mu[t] * pl + gamma[t] * hl + theta * cut[t] * cut[t])
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct TpHandles {
    pub p: Vec<VarId>,
    pub r: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct ChpHandles {
    pub p: Vec<VarId>,
    pub h: Vec<VarId>,
    /// Equivalent electric output `P + c_v·H`.
    pub e: Vec<VarId>,
    pub r: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct BessHandles {
    pub soc: Vec<VarId>,
    pub charge: Vec<VarId>,
    pub discharge: Vec<VarId>,
    pub reserve: Vec<VarId>,
    /// 1 while charging.
    pub charging: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct PipeHandles {
    pub t_sw: Vec<VarId>,
    pub t_rw: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct ModelHandles {
    pub tp: Vec<TpHandles>,
    pub chp: Vec<ChpHandles>,
    pub bess: Option<BessHandles>,
    pub renewable: Vec<VarId>,
    pub pipes: Vec<PipeHandles>,
    pub mu: Vec<Quantity>,
    pub gamma: Vec<Quantity>,
    pub shiftable: Vec<Quantity>,
    pub cut: Vec<Quantity>,
    /// Reserve indicators per period as (level, binary).
    pub reserve_levels: Vec<Vec<(usize, VarId)>>,
}

/// An assembled single-level program with everything needed to read its solution.
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub ir: ModelIr,
    pub spec: ModelSpec,
    pub encoding: ReserveEncoding,
    pub handles: ModelHandles,
    pub follower: Option<FollowerFragment>,
    pub kkt: Option<KktBlock>,
}

fn infeasible(detail: String) -> Error {
    Error::Infeasible { stage: "static-bounds".into(), detail }
}

/// Heat a CHP unit can deliver while respecting its electric limits.
fn chp_heat_capability(u: &crate::scenario::ChpUnit) -> f64 {
    let ratio = u.c_m + u.c_v;
    if ratio > 0.0 {
        u.h_max.min(u.p_max / ratio)
    } else {
        u.h_max
    }
}

/// Cheap necessary conditions for feasibility, checked before any model is built.
pub fn static_checks(p: &PreparedScenario, spec: ModelSpec) -> Result<()> {
    let c = &p.cfg;
    let bess_dh = c.bess.as_ref().map_or(0.0, |b| b.discharge_max);
    let bess_ch = c.bess.as_ref().map_or(0.0, |b| b.charge_max);
    let p_cap: f64 = c.tp_units.iter().map(|u| u.p_max).sum::<f64>() + c.chp_units.iter().map(|u| u.p_max).sum::<f64>();
    let p_floor: f64 = c.tp_units.iter().map(|u| u.p_min).sum();
    let h_cap: f64 = c.chp_units.iter().map(chp_heat_capability).sum();
    for t in 0..p.horizon() {
        let (shift_lo, shift_hi) =
            if spec.idr { (p.shift_min[t], p.shift_max[t]) } else { (p.shift_baseline[t], p.shift_baseline[t]) };
        let demand_lo = c.fixed_load[t] + shift_lo;
        if p_cap + bess_dh + p.expected[t] < demand_lo - FEASIBILITY_TOL {
            return Err(infeasible(format!(
                "period {t}: electric capacity {} is below the load {demand_lo}",
                p_cap + bess_dh + p.expected[t]
            )));
        }
        if p_floor - bess_ch > c.fixed_load[t] + shift_hi + FEASIBILITY_TOL {
            return Err(infeasible(format!("period {t}: TP minimum output exceeds the load")));
        }
        let mut heat_need = if spec.idr { p.heat_min[t] } else { p.heat_demand[t] };
        if spec.dhn {
            heat_need += p.pipelines.iter().map(|k| k.loss_coef * (c.dhn.t_sw_min - c.dhn.ambient_c)).sum::<f64>();
        }
        if h_cap < heat_need - FEASIBILITY_TOL {
            return Err(infeasible(format!("period {t}: CHP heat capability {h_cap} is below the demand {heat_need}")));
        }
    }
    Ok(())
}

/// Assembles the single-level program for `spec`.
///
/// With leader prices and demand response the users' problem enters through its KKT
/// conditions. With fixed prices the users' reaction is computed in closed form first and
/// enters as constants; without demand response the users consume their baseline.
pub fn build_model(p: &PreparedScenario, spec: ModelSpec, encoding: ReserveEncoding) -> Result<BuiltModel> {
    static_checks(p, spec)?;
    assemble(p, spec, encoding, None)
}

/// How the users' shiftable load enters a re-dispatch at given prices.
#[derive(Debug, Clone, PartialEq)]
pub enum ShiftPlay {
    Fixed(Vec<f64>),
    /// Groups of periods with tied prices and the load each group takes. Users are
    /// indifferent within a group, so the operator splits it (optimistic tie-breaking).
    Groups(Vec<(Vec<usize>, f64)>),
}

impl ShiftPlay {
    /// Groups the shiftable load of `response` by tied electricity prices.
    pub fn from_response(mu: &[f64], shiftable: &[f64]) -> Self {
        let groups = tie_groups(mu)
            .into_iter()
            .map(|g| {
                let total = g.iter().map(|&t| shiftable[t]).sum();
                (g, total)
            })
            .collect();
        ShiftPlay::Groups(groups)
    }
}

/// Prices and users' reaction imposed on the operator's dispatch.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPlay {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    pub shift: ShiftPlay,
    pub cut: Vec<f64>,
}

/// Periods grouped by equal electricity price (within the feasibility tolerance), in
/// ascending price order.
pub fn tie_groups(mu: &[f64]) -> Vec<Vec<usize>> {
    let order = price_order(mu);
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for t in order {
        match groups.last_mut() {
            Some(g) if mu[t] - mu[g[0]] <= FEASIBILITY_TOL => g.push(t),
            _ => groups.push(vec![t]),
        }
    }
    groups
}

/// The operator's dispatch problem at fixed prices and users' reaction, with or without
/// the heat network. Its optimum is the operator's profit for that play.
pub fn build_dispatch(
    p: &PreparedScenario,
    dhn: bool,
    encoding: ReserveEncoding,
    play: &FixedPlay,
) -> Result<BuiltModel> {
    let t_len = p.horizon();
    if play.mu.len() != t_len || play.gamma.len() != t_len || play.cut.len() != t_len {
        return Err(Error::InvalidParameter("play vectors must cover the horizon".into()));
    }
    assemble(p, ModelSpec { dhn, leader_prices: false, idr: true }, encoding, Some(play))
}

fn assemble(
    p: &PreparedScenario,
    spec: ModelSpec,
    encoding: ReserveEncoding,
    play: Option<&FixedPlay>,
) -> Result<BuiltModel> {
    let c = &p.cfg;
    let t_len = p.horizon();
    let dt = p.dt;
    let pr = &c.prices;
    let mut ir = ModelIr::new(ObjSense::Maximize);

    let (mu, gamma): (Vec<Quantity>, Vec<Quantity>) = if let Some(play) = play {
        (
            play.mu.iter().map(|v| Quantity::Fixed(*v)).collect(),
            play.gamma.iter().map(|v| Quantity::Fixed(*v)).collect(),
        )
    } else if spec.leader_prices {
        let mut mu = Vec::with_capacity(t_len);
        let mut gamma = Vec::with_capacity(t_len);
        for t in 0..t_len {
            mu.push(Quantity::Var(ir.add_var(&format!("mu_t{t}"), pr.mu_min, pr.mu_max)?));
            gamma.push(Quantity::Var(ir.add_var(&format!("gamma_t{t}"), pr.gamma_min, pr.gamma_max)?));
        }
        let vars = |q: &[Quantity]| {
            q.iter()
                .map(|x| match x {
                    Quantity::Var(v) => (*v, 1.0),
                    Quantity::Fixed(_) => unreachable!(),
                })
                .collect::<Vec<_>>()
        };
        ir.add_row("price_mu_avg", vars(&mu), RowSense::Eq, t_len as f64 * pr.mu_avg)?;
        ir.add_row("price_gamma_avg", vars(&gamma), RowSense::Eq, t_len as f64 * pr.gamma_avg)?;
        (mu, gamma)
    } else {
        (
            p.fixed_mu.iter().map(|v| Quantity::Fixed(*v)).collect(),
            p.fixed_gamma.iter().map(|v| Quantity::Fixed(*v)).collect(),
        )
    };

    let (shiftable, cut): (Vec<Quantity>, Vec<Quantity>) = match (spec.idr, spec.leader_prices) {
        _ if play.is_some() => {
            let play = play.expect("checked");
            let mut s = vec![Quantity::Fixed(0.0); t_len];
            match &play.shift {
                ShiftPlay::Fixed(v) => {
                    for t in 0..t_len {
                        s[t] = Quantity::Fixed(v[t]);
                    }
                }
                ShiftPlay::Groups(groups) => {
                    for (g, (members, total)) in groups.iter().enumerate() {
                        if let [only] = members.as_slice() {
                            s[*only] = Quantity::Fixed(*total);
                            continue;
                        }
                        let mut terms = Vec::with_capacity(members.len());
                        for &t in members {
                            let v = ir.add_var(&format!("psl_t{t}"), p.shift_min[t], p.shift_max[t])?;
                            s[t] = Quantity::Var(v);
                            terms.push((v, 1.0));
                        }
                        ir.add_row(&format!("shift_group_g{g}"), terms, RowSense::Eq, *total)?;
                    }
                }
            }
            (s, play.cut.iter().map(|v| Quantity::Fixed(*v)).collect())
        }
        (true, true) => {
            let mut s = Vec::with_capacity(t_len);
            let mut h = Vec::with_capacity(t_len);
            for t in 0..t_len {
                s.push(Quantity::Var(ir.add_var(&format!("psl_t{t}"), p.shift_min[t], p.shift_max[t])?));
                h.push(Quantity::Var(ir.add_var(&format!("hcl_t{t}"), 0.0, p.cut_max[t])?));
            }
            let terms = s
                .iter()
                .map(|q| match q {
                    Quantity::Var(v) => (*v, 1.0),
                    Quantity::Fixed(_) => unreachable!(),
                })
                .collect();
            ir.add_row("shift_total", terms, RowSense::Eq, p.shift_total)?;
            (s, h)
        }
        (true, false) => {
            let r = follower_best_response(&p.fixed_mu, &p.fixed_gamma, &p.follower_bounds())?;
            (r.shiftable.into_iter().map(Quantity::Fixed).collect(), r.cut.into_iter().map(Quantity::Fixed).collect())
        }
        (false, _) => {
            (p.shift_baseline.iter().map(|v| Quantity::Fixed(*v)).collect(), vec![Quantity::Fixed(0.0); t_len])
        }
    };

    let mut tp = Vec::with_capacity(c.tp_units.len());
    for (i, u) in c.tp_units.iter().enumerate() {
        let r_max = (u.ramp_up * dt).min(u.p_max - u.p_min);
        let mut h = TpHandles { p: vec![], r: vec![] };
        for t in 0..t_len {
            let pv = ir.add_var(&format!("tp{i}_p_t{t}"), u.p_min, u.p_max)?;
            let rv = ir.add_var(&format!("tp{i}_r_t{t}"), 0.0, r_max)?;
            ir.add_row(&format!("tp{i}_head_t{t}"), vec![(pv, 1.0), (rv, 1.0)], RowSense::Le, u.p_max)?;
            if t > 0 {
                let prev = h.p[t - 1];
                ir.add_row(&format!("tp{i}_ru_t{t}"), vec![(pv, 1.0), (prev, -1.0)], RowSense::Le, u.ramp_up * dt)?;
                ir.add_row(&format!("tp{i}_rd_t{t}"), vec![(pv, 1.0), (prev, -1.0)], RowSense::Ge, -u.ramp_down * dt)?;
            }
            ir.add_objective_quadratic(pv, -dt * u.a)?;
            ir.add_objective_linear(pv, -dt * u.b)?;
            ir.add_objective_linear(rv, -dt * u.reserve_cost)?;
            ir.add_objective_constant(-dt * u.c);
            h.p.push(pv);
            h.r.push(rv);
        }
        tp.push(h);
    }

    let mut chp = Vec::with_capacity(c.chp_units.len());
    for (i, u) in c.chp_units.iter().enumerate() {
        let r_max = (u.ramp_up * dt).min(u.p_max - u.p_min);
        let mut h = ChpHandles { p: vec![], h: vec![], e: vec![], r: vec![] };
        for t in 0..t_len {
            let pv = ir.add_var(&format!("chp{i}_p_t{t}"), 0.0, u.p_max)?;
            let hv = ir.add_var(&format!("chp{i}_h_t{t}"), 0.0, u.h_max)?;
            let ev = ir.add_var(&format!("chp{i}_e_t{t}"), u.p_min, u.p_max)?;
            let rv = ir.add_var(&format!("chp{i}_r_t{t}"), 0.0, r_max)?;
            ir.add_row(&format!("chp{i}_eq_t{t}"), vec![(ev, 1.0), (pv, -1.0), (hv, -u.c_v)], RowSense::Eq, 0.0)?;
            ir.add_row(&format!("chp{i}_bp_t{t}"), vec![(pv, 1.0), (hv, -u.c_m)], RowSense::Ge, 0.0)?;
            ir.add_row(&format!("chp{i}_head_t{t}"), vec![(ev, 1.0), (rv, 1.0)], RowSense::Le, u.p_max)?;
            if t > 0 {
                let prev = h.p[t - 1];
                ir.add_row(&format!("chp{i}_ru_t{t}"), vec![(pv, 1.0), (prev, -1.0)], RowSense::Le, u.ramp_up * dt)?;
                ir.add_row(&format!("chp{i}_rd_t{t}"), vec![(pv, 1.0), (prev, -1.0)], RowSense::Ge, -u.ramp_down * dt)?;
            }
            ir.add_objective_quadratic(ev, -dt * u.a)?;
            ir.add_objective_linear(ev, -dt * u.b)?;
            ir.add_objective_linear(rv, -dt * u.reserve_cost)?;
            ir.add_objective_constant(-dt * u.c);
            h.p.push(pv);
            h.h.push(hv);
            h.e.push(ev);
            h.r.push(rv);
        }
        chp.push(h);
    }

    let bess = match &c.bess {
        Some(b) => {
            let mut h =
                BessHandles { soc: vec![], charge: vec![], discharge: vec![], reserve: vec![], charging: vec![] };
            let eta = b.efficiency;
            for t in 0..t_len {
                let soc = ir.add_var(&format!("bess_soc_t{t}"), b.soc_min, b.soc_max)?;
                let ch = ir.add_var(&format!("bess_ch_t{t}"), 0.0, b.charge_max)?;
                let dh = ir.add_var(&format!("bess_dh_t{t}"), 0.0, b.discharge_max)?;
                let r = ir.add_var(&format!("bess_r_t{t}"), 0.0, b.discharge_max)?;
                let u = ir.add_binary(&format!("bess_u_t{t}"))?;
                ir.add_row(&format!("bess_chx_t{t}"), vec![(ch, 1.0), (u, -b.charge_max)], RowSense::Le, 0.0)?;
                ir.add_row(
                    &format!("bess_dhx_t{t}"),
                    vec![(dh, 1.0), (u, b.discharge_max)],
                    RowSense::Le,
                    b.discharge_max,
                )?;
                let mut terms = vec![(soc, 1.0), (ch, -eta * dt), (dh, dt / eta)];
                let rhs = if t == 0 {
                    b.soc_init
                } else {
                    terms.push((h.soc[t - 1], -1.0));
                    0.0
                };
                ir.add_row(&format!("bess_soc_t{t}"), terms, RowSense::Eq, rhs)?;
                ir.add_row(&format!("bess_rp_t{t}"), vec![(r, 1.0), (dh, 1.0)], RowSense::Le, b.discharge_max)?;
                ir.add_row(&format!("bess_re_t{t}"), vec![(r, dt), (soc, -eta)], RowSense::Le, -eta * b.soc_min)?;
                ir.add_objective_linear(dh, -dt * b.discharge_cost)?;
                ir.add_objective_linear(ch, -dt * b.charge_cost)?;
                ir.add_objective_linear(r, -dt * b.reserve_cost)?;
                h.soc.push(soc);
                h.charge.push(ch);
                h.discharge.push(dh);
                h.reserve.push(r);
                h.charging.push(u);
            }
            ir.add_row("bess_cyclic", vec![(h.soc[t_len - 1], 1.0)], RowSense::Eq, b.soc_init)?;
            Some(h)
        }
        None => None,
    };

    let mut renewable = Vec::with_capacity(t_len);
    for t in 0..t_len {
        renewable.push(ir.add_var(&format!("ren_t{t}"), 0.0, p.expected[t])?);
    }

    for t in 0..t_len {
        let mut terms: Vec<(VarId, f64)> = Vec::new();
        terms.extend(tp.iter().map(|h| (h.p[t], 1.0)));
        terms.extend(chp.iter().map(|h| (h.p[t], 1.0)));
        terms.push((renewable[t], 1.0));
        if let Some(b) = &bess {
            terms.push((b.discharge[t], 1.0));
            terms.push((b.charge[t], -1.0));
        }
        let mut rhs = c.fixed_load[t];
        push_quantity(&mut terms, &mut rhs, -1.0, shiftable[t]);
        ir.add_row(&format!("bal_e_t{t}"), terms, RowSense::Eq, rhs)?;
    }

    let mut pipes = Vec::new();
    if spec.dhn {
        let d = &c.dhn;
        for (k, pipe) in p.pipelines.iter().enumerate() {
            let mut h = PipeHandles { t_sw: vec![], t_rw: vec![] };
            for t in 0..t_len {
                let sw = ir.add_var(&format!("tsw_k{k}_t{t}"), d.t_sw_min, d.t_sw_max)?;
                let rw = ir.add_var(&format!("trw_k{k}_t{t}"), d.t_rw_min, d.t_rw_max)?;
                let mut terms = vec![(sw, pipe.heat_coef), (rw, -pipe.heat_coef)];
                let mut rhs = pipe.demand[t];
                push_quantity(&mut terms, &mut rhs, pipe.share, cut[t]);
                ir.add_row(&format!("hx_k{k}_t{t}"), terms, RowSense::Eq, rhs)?;
                h.t_sw.push(sw);
                h.t_rw.push(rw);
            }
            pipes.push(h);
        }
        // Heat leaving the source at t reaches the exchangers d_k periods later.
        for t in 0..t_len {
            let mut terms: Vec<(VarId, f64)> = chp.iter().map(|h| (h.h[t], 1.0)).collect();
            let mut rhs = 0.0;
            for (k, pipe) in p.pipelines.iter().enumerate() {
                let tau = (t + pipe.delay.delay_steps) % t_len;
                terms.push((pipes[k].t_sw[tau], -(pipe.heat_coef + pipe.loss_coef)));
                terms.push((pipes[k].t_rw[tau], pipe.heat_coef));
                rhs -= pipe.loss_coef * d.ambient_c;
            }
            ir.add_row(&format!("bal_h_t{t}"), terms, RowSense::Eq, rhs)?;
        }
    } else {
        for t in 0..t_len {
            let mut terms: Vec<(VarId, f64)> = chp.iter().map(|h| (h.h[t], 1.0)).collect();
            let mut rhs = p.heat_demand[t];
            push_quantity(&mut terms, &mut rhs, 1.0, cut[t]);
            ir.add_row(&format!("bal_h_t{t}"), terms, RowSense::Eq, rhs)?;
        }
    }

    let mut reserve_levels = vec![Vec::new(); t_len];
    for t in 0..t_len {
        let mut r_terms: Vec<(VarId, f64)> = Vec::new();
        r_terms.extend(tp.iter().map(|h| (h.r[t], 1.0)));
        r_terms.extend(chp.iter().map(|h| (h.r[t], 1.0)));
        if let Some(b) = &bess {
            r_terms.push((b.reserve[t], 1.0));
        }
        let rows = &p.reserve_rows[t];
        match encoding {
            ReserveEncoding::MinimumThreshold => {
                let need = rows.min_reserve();
                if need > 0.0 {
                    ir.add_row(&format!("res_min_t{t}"), r_terms, RowSense::Ge, need)?;
                }
            }
            ReserveEncoding::Indicators => {
                let covered: f64 =
                    rows.thresholds.iter().zip(&rows.probs).filter(|(th, _)| **th <= 0.0).map(|(_, d)| d).sum();
                let need = rows.confidence - covered;
                if need <= 1e-12 {
                    continue;
                }
                let mut cover = Vec::new();
                for (m, (&th, &d)) in rows.thresholds.iter().zip(&rows.probs).enumerate() {
                    if th <= 0.0 {
                        continue;
                    }
                    let w = ir.add_binary(&format!("res_w{m}_t{t}"))?;
                    let mut terms = r_terms.clone();
                    terms.push((w, -th));
                    ir.add_row(&format!("res_ind_m{m}_t{t}"), terms, RowSense::Ge, 0.0)?;
                    cover.push((w, d));
                    reserve_levels[t].push((m, w));
                }
                // Thresholds fall with m, so covering level m covers every later level.
                for pair in reserve_levels[t].windows(2) {
                    let (m, w) = pair[0];
                    ir.add_row(&format!("res_ord_m{m}_t{t}"), vec![(w, 1.0), (pair[1].1, -1.0)], RowSense::Le, 0.0)?;
                }
                ir.add_row(&format!("res_cov_t{t}"), cover, RowSense::Ge, need - 1e-12)?;
            }
        }
    }

    // Revenue. Quantities the users control enter through the KKT block when prices are
    // decisions; everything else is linear in the prices or constant.
    for t in 0..t_len {
        match (mu[t], gamma[t]) {
            (Quantity::Var(m), Quantity::Var(g)) => {
                let pl = c.fixed_load[t] + if spec.idr { 0.0 } else { p.shift_baseline[t] };
                ir.add_objective_linear(m, dt * pl)?;
                ir.add_objective_linear(g, dt * p.heat_demand[t])?;
            }
            (Quantity::Fixed(m), Quantity::Fixed(g)) => {
                let hl = p.heat_demand[t] - cut[t].value(&[]);
                ir.add_objective_constant(dt * (m * c.fixed_load[t] + g * hl));
                match shiftable[t] {
                    Quantity::Var(v) => ir.add_objective_linear(v, dt * m)?,
                    Quantity::Fixed(s) => ir.add_objective_constant(dt * m * s),
                }
            }
            _ => unreachable!("both prices are variables or both are fixed"),
        }
    }

    let follower = if spec.idr && spec.leader_prices && play.is_none() {
        let var = |q: &Quantity| match q {
            Quantity::Var(v) => *v,
            Quantity::Fixed(_) => unreachable!(),
        };
        Some(FollowerFragment {
            p_sl: shiftable.iter().map(var).collect(),
            h_cl: cut.iter().map(var).collect(),
            mu: mu.iter().map(var).collect(),
            gamma: gamma.iter().map(var).collect(),
            p_sl_min: p.shift_min.clone(),
            p_sl_max: p.shift_max.clone(),
            cut_max: p.cut_max.clone(),
            shift_total: p.shift_total,
            theta: p.theta(),
            mu_bounds: (pr.mu_min, pr.mu_max),
            gamma_bounds: (pr.gamma_min, pr.gamma_max),
        })
    } else {
        None
    };
    let kkt = assemble_single_level(&mut ir, follower.as_ref(), dt)?;
    ir.validate()?;

    Ok(BuiltModel {
        ir,
        spec,
        encoding,
        handles: ModelHandles { tp, chp, bess, renewable, pipes, mu, gamma, shiftable, cut, reserve_levels },
        follower,
        kkt,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDispatch {
    pub name: String,
    /// Electric output (MW).
    pub power: Vec<f64>,
    /// Heat output (MW); empty for TP units.
    pub heat: Vec<f64>,
    pub reserve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BessDispatch {
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    pub reserve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    pub xi: f64,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub d3: Vec<f64>,
    pub d4: Vec<f64>,
}

/// A scheduled day with prices, user reaction, dispatch and the two players' payoffs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub spec: ModelSpec,
    /// Electricity price μ_t ($/MWh).
    pub mu: Vec<f64>,
    /// Heat price γ_t ($/MWh).
    pub gamma: Vec<f64>,
    /// Shiftable load P^SL_t (MW).
    pub shiftable: Vec<f64>,
    /// Curtailed heat H^CL_t (MW).
    pub cut: Vec<f64>,
    /// Total electric load P^L_t = P^FL_t + P^SL_t.
    pub electric_load: Vec<f64>,
    /// Heat load H^L_t = H^OL_t − H^CL_t.
    pub heat_load: Vec<f64>,
    pub tp: Vec<UnitDispatch>,
    pub chp: Vec<UnitDispatch>,
    pub bess: Option<BessDispatch>,
    /// Renewable power taken P^R_t.
    pub renewable_used: Vec<f64>,
    /// Expected renewable power E_t.
    pub renewable_expected: Vec<f64>,
    pub reserve_total: Vec<f64>,
    /// Smallest reserve meeting the chance constraint.
    pub reserve_required: Vec<f64>,
    /// Supply and return temperatures per pipeline and period; empty without the network.
    pub supply_temperature: Vec<Vec<f64>>,
    pub return_temperature: Vec<Vec<f64>>,
    /// Operator profit F1 ($).
    pub f1: f64,
    /// Users' cost F2 ($).
    pub f2: f64,
    /// Σ P^R_t·Δt (MWh).
    pub absorbed_renewables: f64,
    /// Σ (E_t − P^R_t)·Δt (MWh).
    pub curtailed_renewables: f64,
    pub multipliers: Option<Multipliers>,
    /// Objective value reported by the solver, including PWL approximation.
    pub objective: f64,
    pub pwl_error_bound: f64,
    pub mip_gap: f64,
    pub runtime_s: f64,
    pub backend: String,
}

/// Operator cost of a dispatch: generation, reserve and storage terms ($).
pub fn operating_cost(p: &PreparedScenario, sol: &EquilibriumSolution) -> f64 {
    let c = &p.cfg;
    let dt = p.dt;
    let mut cost = 0.0;
    for (u, d) in c.tp_units.iter().zip(&sol.tp) {
        for t in 0..p.horizon() {
            let x = d.power[t];
            cost += dt * (u.a * x * x + u.b * x + u.c + u.reserve_cost * d.reserve[t]);
        }
    }
    for (u, d) in c.chp_units.iter().zip(&sol.chp) {
        for t in 0..p.horizon() {
            let e = d.power[t] + u.c_v * d.heat[t];
            cost += dt * (u.a * e * e + u.b * e + u.c + u.reserve_cost * d.reserve[t]);
        }
    }
    if let (Some(b), Some(d)) = (&c.bess, &sol.bess) {
        for t in 0..p.horizon() {
            cost +=
                dt * (b.discharge_cost * d.discharge[t] + b.charge_cost * d.charge[t] + b.reserve_cost * d.reserve[t]);
        }
    }
    cost
}

impl EquilibriumSolution {
    /// Recomputes loads, payoffs and renewable totals from the primitive quantities.
    pub fn recompute(&mut self, p: &PreparedScenario) {
        let t_len = p.horizon();
        self.electric_load = (0..t_len).map(|t| p.cfg.fixed_load[t] + self.shiftable[t]).collect();
        self.heat_load = (0..t_len).map(|t| p.heat_demand[t] - self.cut[t]).collect();
        let revenue: f64 =
            (0..t_len).map(|t| p.dt * (self.mu[t] * self.electric_load[t] + self.gamma[t] * self.heat_load[t])).sum();
        self.f1 = revenue - operating_cost(p, self);
        self.f2 = follower_cost(p, &self.mu, &self.gamma, &self.shiftable, &self.cut);
        self.absorbed_renewables = self.renewable_used.iter().sum::<f64>() * p.dt;
        self.curtailed_renewables = (0..t_len).map(|t| p.expected[t] - self.renewable_used[t]).sum::<f64>() * p.dt;
        self.reserve_total = (0..t_len)
            .map(|t| {
                self.tp.iter().map(|u| u.reserve[t]).sum::<f64>()
                    + self.chp.iter().map(|u| u.reserve[t]).sum::<f64>()
                    + self.bess.as_ref().map_or(0.0, |b| b.reserve[t])
            })
            .collect();
    }

    /// Indoor temperature implied by the delivered heat, per period.
    pub fn indoor_temperature(&self, p: &PreparedScenario) -> Vec<f64> {
        (0..p.horizon()).map(|t| p.cfg.outdoor_temperature[t] + self.heat_load[t] / p.conductance_total).collect()
    }
}

/// Reads a solution vector of `built.ir` into an [`EquilibriumSolution`].
pub fn extract_solution(p: &PreparedScenario, built: &BuiltModel, x: &[f64]) -> EquilibriumSolution {
    let h = &built.handles;
    let c = &p.cfg;
    let read = |ids: &[VarId]| ids.iter().map(|v| x[v.0]).collect::<Vec<f64>>();
    let quantities = |qs: &[Quantity]| qs.iter().map(|q| q.value(x)).collect::<Vec<f64>>();
    let tp = c
        .tp_units
        .iter()
        .zip(&h.tp)
        .map(|(u, hh)| UnitDispatch { name: u.name.clone(), power: read(&hh.p), heat: vec![], reserve: read(&hh.r) })
        .collect();
    let chp = c
        .chp_units
        .iter()
        .zip(&h.chp)
        .map(|(u, hh)| UnitDispatch {
            name: u.name.clone(),
            power: read(&hh.p),
            heat: read(&hh.h),
            reserve: read(&hh.r),
        })
        .collect();
    let bess = h.bess.as_ref().map(|b| BessDispatch {
        charge: read(&b.charge),
        discharge: read(&b.discharge),
        soc: read(&b.soc),
        reserve: read(&b.reserve),
    });
    let multipliers = built.kkt.as_ref().map(|k| Multipliers {
        xi: x[k.xi.0],
        d1: read(&k.d1),
        d2: read(&k.d2),
        d3: read(&k.d3),
        d4: read(&k.d4),
    });
    let mut sol = EquilibriumSolution {
        spec: built.spec,
        mu: quantities(&h.mu),
        gamma: quantities(&h.gamma),
        shiftable: quantities(&h.shiftable),
        cut: quantities(&h.cut),
        electric_load: vec![],
        heat_load: vec![],
        tp,
        chp,
        bess,
        renewable_used: read(&h.renewable),
        renewable_expected: p.expected.clone(),
        reserve_total: vec![],
        reserve_required: p.reserve_rows.iter().map(|r| r.min_reserve()).collect(),
        supply_temperature: h.pipes.iter().map(|k| read(&k.t_sw)).collect(),
        return_temperature: h.pipes.iter().map(|k| read(&k.t_rw)).collect(),
        f1: 0.0,
        f2: 0.0,
        absorbed_renewables: 0.0,
        curtailed_renewables: 0.0,
        multipliers,
        objective: built.ir.eval_objective(x),
        pwl_error_bound: 0.0,
        mip_gap: 0.0,
        runtime_s: 0.0,
        backend: String::new(),
    };
    sol.recompute(p);
    sol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Stable name of the failed check.
    pub check: String,
    pub period: Option<usize>,
    /// Size of the violation in the check's unit.
    pub amount: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, check: &str, period: Option<usize>, amount: f64, detail: String) {
        self.violations.push(Violation { check: check.to_owned(), period, amount, detail });
    }

    /// Flags `value` outside `[lo, hi]` beyond the feasibility tolerance.
    fn bound(&mut self, check: &str, t: usize, value: f64, lo: f64, hi: f64) {
        let excess = (lo - value).max(value - hi);
        if excess > FEASIBILITY_TOL {
            self.flag(check, Some(t), excess, format!("{value} outside [{lo}, {hi}]"));
        }
    }

    fn equal(&mut self, check: &str, t: Option<usize>, lhs: f64, rhs: f64, tol: f64) {
        let gap = (lhs - rhs).abs();
        if gap > tol {
            self.flag(check, t, gap, format!("{lhs} ≠ {rhs}"));
        }
    }

    /// One line per violation.
    pub fn summary(&self) -> String {
        self.violations
            .iter()
            .map(|v| match v.period {
                Some(t) => format!("{} (t={t}): {}", v.check, v.detail),
                None => format!("{}: {}", v.check, v.detail),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Checks every constraint of the game at a solution, independently of the model that
/// produced it, and recomputes both payoffs from the primitive quantities.
pub fn verify_solution(sol: &EquilibriumSolution, p: &PreparedScenario) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let c = &p.cfg;
    let t_len = p.horizon();
    let dt = p.dt;
    let tol = FEASIBILITY_TOL;
    let spec = sol.spec;

    for (u, d) in c.tp_units.iter().zip(&sol.tp) {
        for t in 0..t_len {
            rep.bound(&format!("tp_power:{}", u.name), t, d.power[t], u.p_min, u.p_max);
            rep.bound(&format!("tp_reserve:{}", u.name), t, d.reserve[t], 0.0, (u.ramp_up * dt).min(u.p_max - u.p_min));
            rep.bound(&format!("tp_headroom:{}", u.name), t, d.power[t] + d.reserve[t], f64::NEG_INFINITY, u.p_max);
            if t > 0 {
                rep.bound(
                    &format!("tp_ramp:{}", u.name),
                    t,
                    d.power[t] - d.power[t - 1],
                    -u.ramp_down * dt,
                    u.ramp_up * dt,
                );
            }
        }
    }
    for (u, d) in c.chp_units.iter().zip(&sol.chp) {
        for t in 0..t_len {
            let e = d.power[t] + u.c_v * d.heat[t];
            rep.bound(&format!("chp_power:{}", u.name), t, d.power[t], 0.0, u.p_max);
            rep.bound(&format!("chp_heat:{}", u.name), t, d.heat[t], 0.0, u.h_max);
            rep.bound(&format!("chp_equivalent:{}", u.name), t, e, u.p_min, u.p_max);
            rep.bound(&format!("chp_backpressure:{}", u.name), t, d.power[t] - u.c_m * d.heat[t], 0.0, f64::INFINITY);
            rep.bound(
                &format!("chp_reserve:{}", u.name),
                t,
                d.reserve[t],
                0.0,
                (u.ramp_up * dt).min(u.p_max - u.p_min),
            );
            rep.bound(&format!("chp_headroom:{}", u.name), t, e + d.reserve[t], f64::NEG_INFINITY, u.p_max);
            if t > 0 {
                rep.bound(
                    &format!("chp_ramp:{}", u.name),
                    t,
                    d.power[t] - d.power[t - 1],
                    -u.ramp_down * dt,
                    u.ramp_up * dt,
                );
            }
        }
    }
    if let (Some(b), Some(d)) = (&c.bess, &sol.bess) {
        let eta = b.efficiency;
        for t in 0..t_len {
            rep.bound("bess_soc", t, d.soc[t], b.soc_min, b.soc_max);
            rep.bound("bess_charge", t, d.charge[t], 0.0, b.charge_max);
            rep.bound("bess_discharge", t, d.discharge[t], 0.0, b.discharge_max);
            rep.bound("bess_reserve_power", t, d.reserve[t] + d.discharge[t], 0.0, b.discharge_max);
            rep.bound("bess_reserve_energy", t, d.reserve[t] * dt, f64::NEG_INFINITY, eta * (d.soc[t] - b.soc_min));
            if d.charge[t].min(d.discharge[t]) > tol {
                rep.flag(
                    "bess_exclusive",
                    Some(t),
                    d.charge[t].min(d.discharge[t]),
                    "charging and discharging together".into(),
                );
            }
            let prev = if t == 0 { b.soc_init } else { d.soc[t - 1] };
            let next = prev + eta * dt * d.charge[t] - dt / eta * d.discharge[t];
            rep.equal("bess_recursion", Some(t), d.soc[t], next, tol);
        }
        rep.equal("bess_cyclic", None, d.soc[t_len - 1], b.soc_init, tol);
    }
    for t in 0..t_len {
        rep.bound("renewable", t, sol.renewable_used[t], 0.0, p.expected[t]);
        let supply: f64 = sol.tp.iter().map(|u| u.power[t]).sum::<f64>()
            + sol.chp.iter().map(|u| u.power[t]).sum::<f64>()
            + sol.renewable_used[t]
            + sol.bess.as_ref().map_or(0.0, |b| b.discharge[t] - b.charge[t]);
        rep.equal("electric_balance", Some(t), supply, c.fixed_load[t] + sol.shiftable[t], tol);
    }

    let source: Vec<f64> = (0..t_len).map(|t| sol.chp.iter().map(|u| u.heat[t]).sum()).collect();
    if spec.dhn {
        let d = &c.dhn;
        if sol.supply_temperature.len() != p.pipelines.len() {
            rep.flag("network_temperatures", None, 1.0, "missing pipeline temperatures".into());
        } else {
            for (k, pipe) in p.pipelines.iter().enumerate() {
                let sw = &sol.supply_temperature[k];
                let rw = &sol.return_temperature[k];
                for t in 0..t_len {
                    rep.bound(&format!("supply_temperature:{}", pipe.name), t, sw[t], d.t_sw_min, d.t_sw_max);
                    rep.bound(&format!("return_temperature:{}", pipe.name), t, rw[t], d.t_rw_min, d.t_rw_max);
                    let delivered = pipe.heat_coef * (sw[t] - rw[t]);
                    rep.equal(
                        &format!("exchanger_balance:{}", pipe.name),
                        Some(t),
                        delivered,
                        pipe.demand[t] - pipe.share * sol.cut[t],
                        tol,
                    );
                }
            }
            for t in 0..t_len {
                let needed: f64 = p
                    .pipelines
                    .iter()
                    .enumerate()
                    .map(|(k, pipe)| {
                        let tau = (t + pipe.delay.delay_steps) % t_len;
                        let sw = sol.supply_temperature[k][tau];
                        let rw = sol.return_temperature[k][tau];
                        pipe.heat_coef * (sw - rw) + pipe.loss_coef * (sw - d.ambient_c)
                    })
                    .sum();
                rep.equal("heat_balance", Some(t), source[t], needed, tol);
            }
        }
    } else {
        for t in 0..t_len {
            rep.equal("heat_balance", Some(t), source[t], p.heat_demand[t] - sol.cut[t], tol);
        }
    }

    let pr = &c.prices;
    for t in 0..t_len {
        rep.bound("mu_bounds", t, sol.mu[t], pr.mu_min, pr.mu_max);
        rep.bound("gamma_bounds", t, sol.gamma[t], pr.gamma_min, pr.gamma_max);
    }
    rep.equal("mu_average", None, sol.mu.iter().sum(), t_len as f64 * pr.mu_avg, tol);
    rep.equal("gamma_average", None, sol.gamma.iter().sum(), t_len as f64 * pr.gamma_avg, tol);

    for t in 0..t_len {
        let rows = &p.reserve_rows[t];
        let covered = rows.satisfied_probability(sol.reserve_total[t] + tol);
        if covered < rows.confidence - 1e-9 {
            rep.flag(
                "reserve_chance",
                Some(t),
                rows.confidence - covered,
                format!("reserve {} covers {covered}", sol.reserve_total[t]),
            );
        }
    }

    for t in 0..t_len {
        rep.bound("shiftable_bounds", t, sol.shiftable[t], p.shift_min[t], p.shift_max[t]);
        rep.bound("cut_bounds", t, sol.cut[t], 0.0, p.cut_max[t]);
    }
    rep.equal("shift_total", None, sol.shiftable.iter().sum(), p.shift_total, tol);
    if !spec.idr {
        for t in 0..t_len {
            rep.equal("baseline_shiftable", Some(t), sol.shiftable[t], p.shift_baseline[t], tol);
            rep.equal("baseline_cut", Some(t), sol.cut[t], 0.0, tol);
        }
    } else {
        check_best_response(&mut rep, sol, p);
    }

    let t_in = sol.indoor_temperature(p);
    for t in 0..t_len {
        let index = pmv(&c.pmv, t_in[t]);
        let bound = c.pmv.bound_at(p.hours[t]);
        rep.bound("pmv_window", t, index, -bound, bound);
    }

    let mut fresh = sol.clone();
    fresh.recompute(p);
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    if rel(fresh.f1, sol.f1) > OBJECTIVE_RTOL {
        rep.flag(
            "f1_recompute",
            None,
            rel(fresh.f1, sol.f1),
            format!("reported {} vs recomputed {}", sol.f1, fresh.f1),
        );
    }
    if rel(fresh.f2, sol.f2) > OBJECTIVE_RTOL {
        rep.flag(
            "f2_recompute",
            None,
            rel(fresh.f2, sol.f2),
            format!("reported {} vs recomputed {}", sol.f2, fresh.f2),
        );
    }
    rep
}

/// The users' quantities must be a best response to the prices. Periods with equal
/// electricity price are interchangeable for the users, so the shiftable load is compared
/// per group of tied prices.
fn check_best_response(rep: &mut ValidationReport, sol: &EquilibriumSolution, p: &PreparedScenario) {
    let Ok(best) = follower_best_response(&sol.mu, &sol.gamma, &p.follower_bounds()) else {
        rep.flag("best_response", None, 1.0, "users' problem is infeasible at these prices".into());
        return;
    };
    for t in 0..p.horizon() {
        let gap = (sol.cut[t] - best.cut[t]).abs();
        if gap > RESPONSE_TOL {
            rep.flag(
                "best_response_cut",
                Some(t),
                gap,
                format!("H^CL {} vs best response {}", sol.cut[t], best.cut[t]),
            );
        }
    }
    for group in tie_groups(&sol.mu) {
        let got: f64 = group.iter().map(|&t| sol.shiftable[t]).sum();
        let want: f64 = group.iter().map(|&t| best.shiftable[t]).sum();
        if (got - want).abs() > RESPONSE_TOL {
            rep.flag(
                "best_response_shift",
                Some(group[0]),
                (got - want).abs(),
                format!("shiftable load {got} in periods {group:?} vs best response {want}"),
            );
        }
    }
}
