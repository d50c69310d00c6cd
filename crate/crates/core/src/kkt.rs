//! Single-level reformulation of the users' problem.
//!
//! The users' convex problem is replaced by its KKT system. Complementarity pairs are
//! linearized with per-pair Big-M constants, and the price × quantity revenue terms of
//! the operator are rewritten through the complementarity identities so that the
//! resulting objective is linear in prices and multipliers.

use crate::error::{Error, Result};
use crate::ir::{ModelIr, RowSense, VarId};
use serde::{Deserialize, Serialize};

/// Secant interpolation of a function on a breakpoint grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwlApprox {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Largest gap between the function and the interpolant on the range.
    pub max_error: f64,
}

impl PwlApprox {
    pub fn range(&self) -> (f64, f64) {
        (self.breakpoints[0], *self.breakpoints.last().expect("non-empty breakpoints"))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let bp = &self.breakpoints;
        if bp.len() == 1 || x <= bp[0] {
            return self.values[0] + self.slopes.first().map_or(0.0, |s| s * (x - bp[0]));
        }
        let k = bp.partition_point(|b| *b <= x).clamp(1, bp.len() - 1) - 1;
        self.values[k] + self.slopes[k] * (x - bp[k])
    }
}

/// Secant approximation of `a·x²` on `range` with `n_segments` equal pieces.
///
/// For `a ≥ 0` the secants overestimate the parabola, and the gap peaks at segment
/// midpoints with value `a·w²/4`.
pub fn pwl_quadratic(a: f64, range: (f64, f64), n_segments: usize) -> Result<PwlApprox> {
    let (lo, hi) = range;
    if n_segments == 0 {
        return Err(Error::InvalidParameter("PWL approximation needs at least one segment".into()));
    }
    if !(lo.is_finite() && hi.is_finite() && lo <= hi && a.is_finite()) {
        return Err(Error::InvalidParameter(format!("invalid PWL range [{lo}, {hi}] or coefficient {a}")));
    }
    if hi == lo {
        return Ok(PwlApprox { breakpoints: vec![lo], values: vec![a * lo * lo], slopes: vec![], max_error: 0.0 });
    }
    let n = if a == 0.0 { 1 } else { n_segments };
    let w = (hi - lo) / n as f64;
    let breakpoints: Vec<f64> = (0..=n).map(|i| if i == n { hi } else { lo + i as f64 * w }).collect();
    let values: Vec<f64> = breakpoints.iter().map(|b| a * b * b).collect();
    let slopes = breakpoints.windows(2).map(|p| a * (p[0] + p[1])).collect();
    Ok(PwlApprox { breakpoints, values, slopes, max_error: a.abs() * w * w / 4.0 })
}

/// Data of the users' problem needed to write its KKT system.
#[derive(Debug, Clone)]
pub struct FollowerFragment {
    /// Shiftable electric load per period.
    pub p_sl: Vec<VarId>,
    /// Curtailed heat per period.
    pub h_cl: Vec<VarId>,
    pub mu: Vec<VarId>,
    pub gamma: Vec<VarId>,
    pub p_sl_min: Vec<f64>,
    pub p_sl_max: Vec<f64>,
    /// Upper bound on curtailment, H^OL − H^L_min.
    pub cut_max: Vec<f64>,
    /// Total shiftable energy S (sum of P^SL over the horizon).
    pub shift_total: f64,
    pub theta: f64,
    pub mu_bounds: (f64, f64),
    pub gamma_bounds: (f64, f64),
}

impl FollowerFragment {
    pub fn horizon(&self) -> usize {
        self.p_sl.len()
    }
}

/// `0 ≤ g ⊥ δ ≥ 0` with `g = Σ c·x + constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityPair {
    pub name: String,
    pub primal: Vec<(VarId, f64)>,
    pub primal_constant: f64,
    pub dual: VarId,
    pub m_primal: f64,
    pub m_dual: f64,
    pub binary: Option<VarId>,
}

impl ComplementarityPair {
    pub fn primal_value(&self, x: &[f64]) -> f64 {
        self.primal_constant + self.primal.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// `g·δ` at `x`.
    pub fn product(&self, x: &[f64]) -> f64 {
        self.primal_value(x) * x[self.dual.0]
    }

    /// Larger of the two Big-M constants.
    pub fn big_m(&self) -> f64 {
        self.m_primal.max(self.m_dual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktBlock {
    /// Multiplier of the shift-total equality.
    pub xi: VarId,
    /// Lower/upper shiftable bound multipliers.
    pub d1: Vec<VarId>,
    pub d2: Vec<VarId>,
    /// Lower/upper curtailment bound multipliers.
    pub d3: Vec<VarId>,
    pub d4: Vec<VarId>,
    pub pairs: Vec<ComplementarityPair>,
}

impl KktBlock {
    pub fn num_binaries(&self) -> usize {
        self.pairs.iter().filter(|p| p.binary.is_some()).count()
    }

    /// Largest `g·δ / M` over all pairs.
    pub fn max_scaled_product(&self, x: &[f64]) -> f64 {
        self.pairs.iter().map(|p| p.product(x).abs() / p.big_m().max(1.0)).fold(0.0, f64::max)
    }
}

/// Adds multipliers, per-period stationarity rows and complementarity pairs.
///
/// Stationarity of the users' Lagrangian gives, for every period,
/// `μ_t − δ1 + δ2 + ξ = 0` and `−γ_t + 2θ·H^CL_t − δ3 + δ4 = 0`. The multiplier bounds
/// follow from these rows and the price bounds: some `ξ ∈ [−μ_max, −μ_min]` always
/// satisfies them, after which `δ1, δ2 ≤ μ_max − μ_min`.
pub fn emit_kkt(ir: &mut ModelIr, f: &FollowerFragment) -> Result<KktBlock> {
    let t_len = f.horizon();
    let (mu_min, mu_max) = f.mu_bounds;
    let (_, gamma_max) = f.gamma_bounds;
    let d12_max = (mu_max - mu_min).max(0.0);
    let xi = ir.add_var("kkt_xi", -mu_max, -mu_min)?;
    let mut block = KktBlock { xi, d1: vec![], d2: vec![], d3: vec![], d4: vec![], pairs: vec![] };
    for t in 0..t_len {
        let ub = f.cut_max[t];
        let d4_max = if ub > 0.0 { (gamma_max - 2.0 * f.theta * ub).max(0.0) } else { gamma_max.max(0.0) };
        let d1 = ir.add_var(&format!("kkt_d1_t{t}"), 0.0, d12_max)?;
        let d2 = ir.add_var(&format!("kkt_d2_t{t}"), 0.0, d12_max)?;
        let d3 = ir.add_var(&format!("kkt_d3_t{t}"), 0.0, gamma_max.max(0.0))?;
        let d4 = ir.add_var(&format!("kkt_d4_t{t}"), 0.0, d4_max)?;
        ir.add_row(
            &format!("kkt_stat_p_t{t}"),
            vec![(f.mu[t], 1.0), (d1, -1.0), (d2, 1.0), (xi, 1.0)],
            RowSense::Eq,
            0.0,
        )?;
        ir.add_row(
            &format!("kkt_stat_h_t{t}"),
            vec![(f.gamma[t], -1.0), (f.h_cl[t], 2.0 * f.theta), (d3, -1.0), (d4, 1.0)],
            RowSense::Eq,
            0.0,
        )?;
        let span = f.p_sl_max[t] - f.p_sl_min[t];
        block.pairs.extend([
            ComplementarityPair {
                name: format!("kkt_c1_t{t}"),
                primal: vec![(f.p_sl[t], 1.0)],
                primal_constant: -f.p_sl_min[t],
                dual: d1,
                m_primal: span,
                m_dual: d12_max,
                binary: None,
            },
            ComplementarityPair {
                name: format!("kkt_c2_t{t}"),
                primal: vec![(f.p_sl[t], -1.0)],
                primal_constant: f.p_sl_max[t],
                dual: d2,
                m_primal: span,
                m_dual: d12_max,
                binary: None,
            },
            ComplementarityPair {
                name: format!("kkt_c3_t{t}"),
                primal: vec![(f.h_cl[t], 1.0)],
                primal_constant: 0.0,
                dual: d3,
                m_primal: ub,
                m_dual: gamma_max.max(0.0),
                binary: None,
            },
            ComplementarityPair {
                name: format!("kkt_c4_t{t}"),
                primal: vec![(f.h_cl[t], -1.0)],
                primal_constant: ub,
                dual: d4,
                m_primal: ub,
                m_dual: d4_max,
                binary: None,
            },
        ]);
        block.d1.push(d1);
        block.d2.push(d2);
        block.d3.push(d3);
        block.d4.push(d4);
    }
    Ok(block)
}

/// Encodes one pair with a binary ϖ: `g ≤ ϖ·M_g` and `δ ≤ (1 − ϖ)·M_δ`.
pub fn big_m_linearize(ir: &mut ModelIr, pair: &mut ComplementarityPair) -> Result<VarId> {
    if !pair.m_primal.is_finite() || !pair.m_dual.is_finite() {
        return Err(Error::Build(format!("complementarity pair `{}` has an unbounded side", pair.name)));
    }
    let w = ir.add_binary(&format!("{}_w", pair.name))?;
    let mut primal = pair.primal.clone();
    primal.push((w, -pair.m_primal));
    ir.add_row(&format!("{}_p", pair.name), primal, RowSense::Le, -pair.primal_constant)?;
    ir.add_row(&format!("{}_d", pair.name), vec![(pair.dual, 1.0), (w, pair.m_dual)], RowSense::Le, pair.m_dual)?;
    pair.binary = Some(w);
    Ok(w)
}

/// Adds the operator's revenue from the users' flexible quantities, rewritten through
/// the complementarity identities and scaled by the period length `dt`:
///
/// ```text
/// Σ μ_t·P^SL_t = Σ (δ1_t·P^SL_min − δ2_t·P^SL_max) − ξ·S
///      γ_t·H^CL_t = 2θ·(H^CL_t)² + δ4_t·(H^OL_t − H^L_min)
/// ```
///
/// The shiftable revenue enters with a plus sign and the curtailed heat with a minus sign.
pub fn eliminate_bilinear(ir: &mut ModelIr, f: &FollowerFragment, k: &KktBlock, dt: f64) -> Result<()> {
    for t in 0..f.horizon() {
        ir.add_objective_linear(k.d1[t], dt * f.p_sl_min[t])?;
        ir.add_objective_linear(k.d2[t], -dt * f.p_sl_max[t])?;
        ir.add_objective_quadratic(f.h_cl[t], -dt * 2.0 * f.theta)?;
        ir.add_objective_linear(k.d4[t], -dt * f.cut_max[t])?;
    }
    ir.add_objective_linear(k.xi, -dt * f.shift_total)?;
    Ok(())
}

/// Residuals of the two substitutions at `x`, per period.
pub fn bilinear_identity_residuals(f: &FollowerFragment, k: &KktBlock, x: &[f64]) -> (f64, Vec<f64>) {
    let lhs: f64 = (0..f.horizon()).map(|t| x[f.mu[t].0] * x[f.p_sl[t].0]).sum();
    let rhs: f64 = (0..f.horizon()).map(|t| x[k.d1[t].0] * f.p_sl_min[t] - x[k.d2[t].0] * f.p_sl_max[t]).sum::<f64>()
        - x[k.xi.0] * f.shift_total;
    let heat = (0..f.horizon())
        .map(|t| {
            let h = x[f.h_cl[t].0];
            x[f.gamma[t].0] * h - (2.0 * f.theta * h * h + x[k.d4[t].0] * f.cut_max[t])
        })
        .collect();
    (lhs - rhs, heat)
}

/// Adds the KKT system of the users (when present) to the operator's model and
/// linearizes it. Returns the block, or `None` when the users do not play.
pub fn assemble_single_level(
    ir: &mut ModelIr,
    follower: Option<&FollowerFragment>,
    dt: f64,
) -> Result<Option<KktBlock>> {
    let Some(f) = follower else {
        return Ok(None);
    };
    let mut block = emit_kkt(ir, f)?;
    for pair in block.pairs.iter_mut() {
        big_m_linearize(ir, pair)?;
    }
    eliminate_bilinear(ir, f, &block, dt)?;
    ir.validate()?;
    Ok(Some(block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ObjSense;
    use proptest::prelude::*;

    #[test]
    fn pwl_examples() {
        let flat = pwl_quadratic(0.0, (0.0, 10.0), 8).unwrap();
        assert_eq!(flat.slopes.len(), 1);
        assert_eq!(flat.max_error, 0.0);
        let two = pwl_quadratic(1.0, (0.0, 4.0), 2).unwrap();
        assert_eq!(two.max_error, 1.0);
        // the gap at the midpoint of the first segment
        assert!((two.eval(1.0) - 1.0 - 1.0).abs() < 1e-12);
        let unit1 = pwl_quadratic(0.012e-3, (0.0, 450.0), 8).unwrap();
        assert!((unit1.max_error - 0.012e-3 * (450.0_f64 / 8.0).powi(2) / 4.0).abs() < 1e-15);
        assert!((unit1.max_error - 0.0095).abs() < 1e-4);
        assert!(pwl_quadratic(1.0, (0.0, 1.0), 0).is_err());
    }

    // Oracle: dense scan of the interpolation error.
    fn scanned_error(p: &PwlApprox, a: f64) -> f64 {
        let (lo, hi) = p.range();
        (0..=10_000)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / 10_000.0;
                (p.eval(x) - a * x * x).abs()
            })
            .fold(0.0, f64::max)
    }

    proptest! {
        #[test]
        fn pwl_error_bound_is_tight(a in 0.0f64..5.0, lo in -10.0f64..10.0, width in 0.1f64..50.0, n in 1usize..16) {
            let p = pwl_quadratic(a, (lo, lo + width), n).unwrap();
            prop_assert!(p.breakpoints.windows(2).all(|w| w[0] < w[1]));
            let err = scanned_error(&p, a);
            prop_assert!(err <= p.max_error + 1e-9 * (1.0 + p.max_error));
            prop_assert!(err >= p.max_error * 0.999 - 1e-12);
            for &b in &p.breakpoints {
                prop_assert!((p.eval(b) - a * b * b).abs() < 1e-9 * (1.0 + a * b * b));
            }
        }
    }

    fn one_period_fragment(ir: &mut ModelIr) -> FollowerFragment {
        let p = ir.add_var("psl", 0.0, 10.0).unwrap();
        let h = ir.add_var("hcl", 0.0, 40.0).unwrap();
        let mu = ir.add_var("mu", 40.0, 90.0).unwrap();
        let gamma = ir.add_var("gamma", 30.0, 70.0).unwrap();
        FollowerFragment {
            p_sl: vec![p],
            h_cl: vec![h],
            mu: vec![mu],
            gamma: vec![gamma],
            p_sl_min: vec![0.0],
            p_sl_max: vec![10.0],
            cut_max: vec![40.0],
            shift_total: 4.0,
            theta: 0.8,
            mu_bounds: (40.0, 90.0),
            gamma_bounds: (30.0, 70.0),
        }
    }

    #[test]
    fn mode_without_users_emits_nothing() {
        let mut ir = ModelIr::new(ObjSense::Maximize);
        ir.add_var("x", 0.0, 1.0).unwrap();
        let rows = ir.rows().len();
        assert!(assemble_single_level(&mut ir, None, 1.0).unwrap().is_none());
        assert_eq!(ir.rows().len(), rows);
        assert_eq!(ir.num_binaries(), 0);
    }

    #[test]
    fn assembled_counts() {
        let mut ir = ModelIr::new(ObjSense::Maximize);
        let f = one_period_fragment(&mut ir);
        let k = assemble_single_level(&mut ir, Some(&f), 1.0).unwrap().unwrap();
        assert_eq!(k.pairs.len(), 4);
        assert_eq!(ir.num_binaries(), 4);
        // 2 stationarity rows + 2 rows per pair
        assert_eq!(ir.rows().len(), 10);
    }

    #[test]
    fn unbounded_pair_rejected() {
        let mut ir = ModelIr::new(ObjSense::Maximize);
        let f = one_period_fragment(&mut ir);
        let mut k = emit_kkt(&mut ir, &f).unwrap();
        k.pairs[0].m_primal = f64::INFINITY;
        assert!(matches!(big_m_linearize(&mut ir, &mut k.pairs[0]), Err(Error::Build(_))));
    }

    // Fill a KKT point from the closed-form response at the given prices.
    fn kkt_point(ir: &ModelIr, f: &FollowerFragment, k: &KktBlock, mu: f64, gamma: f64) -> Vec<f64> {
        let mut x = vec![0.0; ir.vars().len()];
        x[f.mu[0].0] = mu;
        x[f.gamma[0].0] = gamma;
        x[f.p_sl[0].0] = f.shift_total;
        x[k.xi.0] = -mu;
        let h = (gamma / (2.0 * f.theta)).clamp(0.0, f.cut_max[0]);
        x[f.h_cl[0].0] = h;
        x[k.d4[0].0] = (gamma - 2.0 * f.theta * h).max(0.0);
        for pair in &k.pairs {
            if let Some(w) = pair.binary {
                x[w.0] = if x[pair.dual.0] > 0.0 { 0.0 } else { 1.0 };
            }
        }
        x
    }

    #[test]
    fn closed_form_response_satisfies_emitted_rows() {
        for &(mu, gamma) in &[(65.0, 50.0), (40.0, 70.0), (90.0, 30.0)] {
            let mut ir = ModelIr::new(ObjSense::Maximize);
            let f = one_period_fragment(&mut ir);
            let k = assemble_single_level(&mut ir, Some(&f), 1.0).unwrap().unwrap();
            let x = kkt_point(&ir, &f, &k, mu, gamma);
            let (viol, name) = ir.max_violation(&x);
            assert!(viol < 1e-9, "γ={gamma}: {name:?} violated by {viol}");
            assert!(k.max_scaled_product(&x) < 1e-12);
            let (p_res, h_res) = bilinear_identity_residuals(&f, &k, &x);
            assert!(p_res.abs() < 1e-9 && h_res[0].abs() < 1e-9);
        }
    }

    #[test]
    fn interior_cut_matches_stationarity() {
        let mut ir = ModelIr::new(ObjSense::Maximize);
        let f = one_period_fragment(&mut ir);
        let k = assemble_single_level(&mut ir, Some(&f), 1.0).unwrap().unwrap();
        let x = kkt_point(&ir, &f, &k, 65.0, 50.0);
        assert!((x[f.h_cl[0].0] - 31.25).abs() < 1e-12);
        assert!((x[f.gamma[0].0] - 2.0 * f.theta * x[f.h_cl[0].0]).abs() < 1e-12);
    }

    // Exhaustive check of both branches of a single pair on a grid of (g, δ).
    #[test]
    fn big_m_branches_reproduce_complementarity() {
        let mut ir = ModelIr::new(ObjSense::Minimize);
        let g = ir.add_var("g", 0.0, 5.0).unwrap();
        let d = ir.add_var("d", 0.0, 3.0).unwrap();
        let mut pair = ComplementarityPair {
            name: "pair".into(),
            primal: vec![(g, 1.0)],
            primal_constant: 0.0,
            dual: d,
            m_primal: 5.0,
            m_dual: 3.0,
            binary: None,
        };
        let w = big_m_linearize(&mut ir, &mut pair).unwrap();
        let grid = [0.0, 0.5, 1.0, 2.5, 3.0, 5.0];
        for &gv in &grid {
            for &dv in grid.iter().filter(|v| **v <= 3.0) {
                let feasible_some_branch = [0.0, 1.0].iter().any(|&wv| {
                    let mut x = vec![0.0; 3];
                    x[g.0] = gv;
                    x[d.0] = dv;
                    x[w.0] = wv;
                    ir.max_violation(&x).0 < 1e-12
                });
                assert_eq!(feasible_some_branch, gv * dv == 0.0, "g={gv}, δ={dv}");
            }
        }
        let mut x = vec![0.0; 3];
        x[w.0] = 1.0;
        x[d.0] = 1.0;
        assert!(ir.max_violation(&x).0 > 0.0, "ϖ = 1 must force δ = 0");
    }

    proptest! {
        #[test]
        fn identities_hold_at_random_kkt_points(mu in 40.0f64..90.0, gamma in 30.0f64..70.0, theta in 0.2f64..5.0, ub in 0.0f64..60.0) {
            let mut ir = ModelIr::new(ObjSense::Maximize);
            let mut f = one_period_fragment(&mut ir);
            f.theta = theta;
            f.cut_max = vec![ub];
            let k = emit_kkt(&mut ir, &f).unwrap();
            let x = kkt_point(&ir, &f, &k, mu, gamma);
            let (p_res, h_res) = bilinear_identity_residuals(&f, &k, &x);
            prop_assert!(p_res.abs() < 1e-8);
            prop_assert!(h_res[0].abs() < 1e-8 * (1.0 + gamma * ub));
        }
    }
}
