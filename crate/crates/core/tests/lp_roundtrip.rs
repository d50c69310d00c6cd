//! LP files written for external solvers describe the same program that is solved in
//! process: HiGHS reads each file back and must reach the same optimum.

use stackelberg_ies::game::{build_model, Mode};
use stackelberg_ies::ir::ModelIr;
use stackelberg_ies::lp_format::{parse_solution, write_lp};
use stackelberg_ies::scenario::{PreparedScenario, ScenarioConfig};
use stackelberg_ies::solve::{linear_program, SolveStatus, SolverBackend};
use stackelberg_ies::HighsBackend;
use std::ffi::CString;
use std::path::{Path, PathBuf};

/// Optimal objective of an LP file solved by the HiGHS library's own reader.
fn solve_file(path: &Path) -> f64 {
    let file = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let h = highs_sys::Highs_create();
        highs_sys::Highs_setBoolOptionValue(h, c"output_flag".as_ptr(), 0);
        highs_sys::Highs_setDoubleOptionValue(h, c"mip_rel_gap".as_ptr(), 1e-9);
        assert_eq!(highs_sys::Highs_readModel(h, file.as_ptr()), 0, "HiGHS rejected {}", path.display());
        assert_eq!(highs_sys::Highs_run(h), 0);
        assert_eq!(highs_sys::Highs_getModelStatus(h), highs_sys::MODEL_STATUS_OPTIMAL);
        let obj = highs_sys::Highs_getObjectiveValue(h);
        highs_sys::Highs_destroy(h);
        obj
    }
}

fn check(ir: &ModelIr) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.lp");
    let text = write_lp(ir).unwrap();
    std::fs::write(&path, &text).unwrap();
    assert_eq!(write_lp(ir).unwrap(), text, "writer output must be deterministic");

    let direct = HighsBackend.solve(ir, 60.0, 1e-9).unwrap();
    assert_eq!(direct.status, SolveStatus::Optimal);
    let from_file = solve_file(&path);
    let scale = direct.objective.abs().max(1.0);
    assert!(
        (from_file - direct.objective).abs() <= 1e-6 * scale,
        "file {from_file} vs in-process {}",
        direct.objective
    );

    let values = direct.values.unwrap();
    let dump: String = ir.vars().iter().zip(&values).map(|(v, x)| format!("{} {x}\n", v.name)).collect();
    let parsed = parse_solution(ir, &dump);
    assert_eq!(parsed.matched, ir.vars().len());
    assert_eq!(parsed.values, values);
}

fn scenario(name: &str) -> PreparedScenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"));
    PreparedScenario::new(&ScenarioConfig::from_path(&path).unwrap()).unwrap()
}

#[test]
fn toy_programs_round_trip_for_every_mode() {
    let p = scenario("toy_t3");
    for mode in Mode::ALL {
        let built = build_model(&p, mode.spec(), p.cfg.reserve.encoding).unwrap();
        check(&linear_program(&built.ir, 8).unwrap());
    }
}

#[test]
fn full_day_joint_program_round_trips() {
    let p = scenario("case2_real");
    let built = build_model(&p, Mode::Joint.spec(), p.cfg.reserve.encoding).unwrap();
    check(&linear_program(&built.ir, 8).unwrap());
}
