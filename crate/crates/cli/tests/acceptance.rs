//! Acceptance suite: one test per shipped guarantee. Each test prints a
//! single `criterion N PASS/FAIL` line with its elapsed wall-clock time
//! (visible under `cargo test --test acceptance -- --nocapture`) and
//! asserts both the numeric tolerance and the time budget.

use std::fs;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::time::Instant;

use gradhom::cell_spec::CellSpec;
use gradhom::commands::{self, Global, Load, LogLevel};
use gradhom_core::cell::{solve_all_hs1, solve_all_hs2, SolverParams};
use gradhom_core::effective::{assemble, verify_effective};
use gradhom_core::macro1d::{coercivity_probe, convergence_study, s_independence_probe};
use gradhom_core::microstructure::{
    chiral_S, laminate, CellGrid, CoefficientField, PhaseTensors,
};
use gradhom_core::scaling::{tensor_maxima, Regime};
use gradhom_core::tensor::{Tensor4, Tensor5, Tensor6};
use gradhom_oracle::cell1d;

/// Runs one criterion body, prints its pass/fail line, and enforces the
/// wall-clock budget. The body returns the detail text for the line.
fn run_criterion(n: usize, budget_s: f64, body: impl FnOnce() -> String) {
    let start = Instant::now();
    let result = std::panic::catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("criterion {n:2} PASS ({elapsed:8.3} s / budget {budget_s:3.0} s): {detail}");
            assert!(
                elapsed <= budget_s,
                "criterion {n} exceeded its {budget_s} s budget: took {elapsed:.2} s"
            );
        }
        Err(cause) => {
            println!("criterion {n:2} FAIL ({elapsed:8.3} s / budget {budget_s:3.0} s)");
            std::panic::resume_unwind(cause);
        }
    }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped_field(name: &str) -> CoefficientField {
    CellSpec::load(&configs_dir().join(name))
        .unwrap()
        .build()
        .unwrap()
}

fn quiet_global(out_dir: &Path) -> Global {
    Global {
        seed: 0,
        out_dir: out_dir.to_path_buf(),
        log: LogLevel::Quiet,
    }
}

fn scalar_phase(k: f64, a: f64) -> PhaseTensors {
    let mut kt = Tensor4::zeros(1).unwrap();
    kt.set(0, 0, 0, 0, k);
    PhaseTensors::new(kt, Tensor5::zeros(1).unwrap(), Tensor6::diagonal(a, 1).unwrap())
        .unwrap()
}

/// Half/half two-phase layering along the only axis of a 1D cell.
fn sharp_laminate(n: usize, k_vals: (f64, f64), a_vals: (f64, f64)) -> CoefficientField {
    let grid = CellGrid::new(1, n).unwrap();
    let p1 = scalar_phase(k_vals.0, a_vals.0);
    let p2 = scalar_phase(k_vals.1, a_vals.1);
    laminate(grid, 0, 0.5, &p1, &p2).unwrap()
}

fn nodal_k(field: &CoefficientField) -> impl Fn(f64) -> f64 + '_ {
    let n = field.grid().nodes_per_axis();
    move |y: f64| {
        let m = (((y + 0.5) * n as f64 - 0.5).round() as isize).rem_euclid(n as isize) as usize;
        field.k_at(m).get(0, 0, 0, 0)
    }
}

fn nodal_a(field: &CoefficientField) -> impl Fn(f64) -> f64 + '_ {
    let n = field.grid().nodes_per_axis();
    move |y: f64| {
        let m = (((y + 0.5) * n as f64 - 0.5).round() as isize).rem_euclid(n as isize) as usize;
        field.a_at(m).get(0, 0, 0, 0, 0, 0)
    }
}

fn max_rel_defect(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
    got.iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / scale
}

#[test]
fn criterion_01_constant_coefficients_reproduce_their_own_tensors() {
    run_criterion(1, 60.0, || {
        let mut detail = String::from("relative defects:");
        for d in 1..=3usize {
            let n = if d == 3 { 16 } else { 32 };
            let grid = CellGrid::new(d, n).unwrap();
            let mut k = Tensor4::isotropic(1.3, 0.9, d).unwrap();
            k.add_scaled(&Tensor4::identity_action(d).unwrap(), 0.8).unwrap();
            let s = Tensor5::from_fn(d, |i, j, kk, l, m| {
                0.1 * ((i + 2 * j + 3 * kk + l + m) % 4) as f64 - 0.15
            })
            .unwrap();
            let a = Tensor6::diagonal(0.7, d).unwrap();
            let phase = PhaseTensors::new(k, s, a).unwrap();
            let field = laminate(grid, 0, 0.5, &phase, &phase).unwrap();

            let params = SolverParams::default();
            let hs1 = solve_all_hs1(&field, &params).unwrap();
            let hs2 = solve_all_hs2(&field, &params).unwrap();

            let mut corrector_max = 0.0f64;
            for alpha in 0..d {
                for beta in 0..d {
                    corrector_max = corrector_max.max(hs1.field(alpha, beta).max_abs());
                    for gamma in 0..d {
                        corrector_max =
                            corrector_max.max(hs2.field(alpha, beta, gamma).max_abs());
                    }
                }
            }
            assert!(
                corrector_max <= 1e-10,
                "d = {d}: constant cell should have zero correctors, max |phi| = {corrector_max:.3e}"
            );

            let eff = assemble(&field, Some(&hs1), Some(&hs2)).unwrap();
            let k_defect = max_rel_defect(
                eff.k_eff.as_ref().unwrap().data(),
                field.k_at(0).data(),
            );
            let a_defect = max_rel_defect(
                eff.a_eff.as_ref().unwrap().data(),
                field.a_at(0).data(),
            );
            assert!(
                k_defect <= 1e-10,
                "d = {d}: K defect {k_defect:.3e} above 1e-10"
            );
            assert!(
                a_defect <= 1e-10,
                "d = {d}: A defect {a_defect:.3e} above 1e-10"
            );
            detail.push_str(&format!(" d{d} K {k_defect:.1e} A {a_defect:.1e};"));
        }
        detail
    });
}

#[test]
fn criterion_02_laminate_k_eff_hits_harmonic_mean_with_oracle() {
    run_criterion(2, 5.0, || {
        let field = shipped_field("laminate.json");
        assert_eq!(field.grid().nodes_per_axis(), 256);

        let hs1 = solve_all_hs1(&field, &SolverParams::default()).unwrap();
        let eff = assemble(&field, Some(&hs1), None).unwrap();
        let k_eff = eff.k_eff.unwrap().get(0, 0, 0, 0);
        assert!(
            (k_eff - 1.6).abs() <= 0.016,
            "k_eff = {k_eff} not within 1% of the harmonic mean 1.6"
        );

        let kf = nodal_k(&field);
        let oracle = cell1d::hs1_corrector(&kf, &|_| 1e-8, 256);
        assert!(
            (k_eff - oracle.eff).abs() <= 1e-4,
            "spectral {k_eff} vs banded finite differences {}",
            oracle.eff
        );
        format!("k_eff = {k_eff:.6} (harmonic mean 1.6, oracle {:.6})", oracle.eff)
    });
}

#[test]
fn criterion_03_laminate_a_eff_hits_harmonic_mean_with_oracle() {
    run_criterion(3, 5.0, || {
        let field = sharp_laminate(256, (1.0, 1.0), (1.0, 4.0));
        let hs2 = solve_all_hs2(&field, &SolverParams::default()).unwrap();
        let eff = assemble(&field, None, Some(&hs2)).unwrap();
        let a_eff = eff.a_eff.unwrap().get(0, 0, 0, 0, 0, 0);
        assert!(
            (a_eff - 1.6).abs() <= 0.016,
            "a_eff = {a_eff} not within 1% of the harmonic mean 1.6"
        );

        let af = nodal_a(&field);
        let oracle = cell1d::hs2_corrector(&af, 256);
        assert!(
            (a_eff - oracle.eff).abs() <= 1e-4,
            "spectral {a_eff} vs banded finite differences {}",
            oracle.eff
        );
        format!("a_eff = {a_eff:.6} (harmonic mean 1.6, oracle {:.6})", oracle.eff)
    });
}

#[test]
fn criterion_04_gradient_penalization_is_monotone_within_bounds() {
    run_criterion(4, 10.0, || {
        let params = SolverParams::default();
        let weak = sharp_laminate(256, (1.0, 4.0), (1e-8, 1e-8));
        let strong = sharp_laminate(256, (1.0, 4.0), (10.0, 10.0));

        let k_weak = assemble(&weak, Some(&solve_all_hs1(&weak, &params).unwrap()), None)
            .unwrap()
            .k_eff
            .unwrap()
            .get(0, 0, 0, 0);
        let k_strong = assemble(&strong, Some(&solve_all_hs1(&strong, &params).unwrap()), None)
            .unwrap()
            .k_eff
            .unwrap()
            .get(0, 0, 0, 0);

        assert!(
            k_strong - k_weak >= -1e-10,
            "penalized k_eff {k_strong} below unpenalized {k_weak}"
        );
        assert!(
            k_weak - 1.6 >= -1e-10,
            "k_eff {k_weak} below the harmonic mean 1.6"
        );
        assert!(
            2.5 - k_strong >= -1e-10,
            "k_eff {k_strong} above the arithmetic mean 2.5"
        );
        format!("1.6 <= k_eff(eta=1e-8) = {k_weak:.6} <= k_eff(eta=10) = {k_strong:.6} <= 2.5")
    });
}

#[test]
fn criterion_05_chiral_inclusion_tensors_are_symmetric_and_bounded() {
    run_criterion(5, 120.0, || {
        let field = shipped_field("chiral_inclusion.json");
        assert_eq!(field.grid().dim(), 2);
        assert_eq!(field.grid().nodes_per_axis(), 64);

        let params = SolverParams::default();
        let hs1 = solve_all_hs1(&field, &params).unwrap();
        let hs2 = solve_all_hs2(&field, &params).unwrap();
        let eff = assemble(&field, Some(&hs1), Some(&hs2)).unwrap();
        let report = verify_effective(&field, &eff, 0).unwrap();

        let k_defect = report.k_eff_symmetry_defect.unwrap();
        let a_defect = report.a_eff_symmetry_defect.unwrap();
        let k_margin = report.k_voigt_min_margin.unwrap();
        let a_margin = report.a_voigt_min_margin.unwrap();
        assert!(k_defect <= 1e-8, "K symmetry defect {k_defect:.3e} above 1e-8");
        assert!(a_defect <= 1e-8, "A symmetry defect {a_defect:.3e} above 1e-8");
        assert!(k_margin >= -1e-10, "K Voigt margin {k_margin:.3e} below -1e-10");
        assert!(a_margin >= -1e-10, "A Voigt margin {a_margin:.3e} below -1e-10");
        assert!(report.pass, "structural verification failed: {report:?}");
        format!(
            "defects K {k_defect:.2e} A {a_defect:.2e}, Voigt margins K {k_margin:.2e} A {a_margin:.2e}"
        )
    });
}

#[test]
fn criterion_06_unfolding_identities_and_two_scale_probe() {
    run_criterion(6, 5.0, || {
        let dir = tempfile::tempdir().unwrap();
        let g = quiet_global(dir.path());
        let eps = [0.25, 0.125, 0.0625];
        let report = commands::unfold_check(&g, 1, &eps, Path::new("report.json")).unwrap();

        for row in &report.rows {
            assert!(
                row.integral_defect <= 1e-13 * row.phi_l1,
                "eps = {}: integral defect {:.3e} above 1e-13 * |phi|_1 = {:.3e}",
                row.epsilon,
                row.integral_defect,
                1e-13 * row.phi_l1
            );
            assert_eq!(
                row.product_defect, 0.0,
                "eps = {}: product rule not exact",
                row.epsilon
            );
        }
        for pair in report.two_scale.windows(2) {
            assert!(
                pair[1].error < pair[0].error,
                "two-scale errors not strictly decreasing: {:?}",
                report.two_scale
            );
        }

        let report2d = commands::unfold_check(&g, 2, &[0.25, 0.125], Path::new("report2d.json"))
            .unwrap();
        for row in &report2d.rows {
            assert!(row.integral_defect <= 1e-13 * row.phi_l1);
            assert_eq!(row.product_defect, 0.0);
        }

        let errs: Vec<String> =
            report.two_scale.iter().map(|r| format!("{:.3e}", r.error)).collect();
        format!("exact identities in 1D/2D; two-scale errors {}", errs.join(" > "))
    });
}

#[test]
fn criterion_07_fine_solutions_converge_to_first_order_limit() {
    run_criterion(7, 30.0, || {
        let field = sharp_laminate(256, (1.0, 4.0), (1.0, 1.0));
        let eps = [0.125, 0.0625, 0.03125];
        let g = |_x: f64| 1.0;
        let rows =
            convergence_study(&field, Regime::Hs1, &eps, &g, 8, &SolverParams::default())
                .unwrap();

        for pair in rows.windows(2) {
            assert!(
                pair[1].l2_error < pair[0].l2_error,
                "L2 errors not strictly decreasing: {rows:?}"
            );
        }
        let first = rows.first().unwrap().l2_error;
        let last = rows.last().unwrap().l2_error;
        assert!(
            last <= 0.25 * first,
            "final error {last:.3e} above 25% of first {first:.3e}"
        );
        format!(
            "L2 errors {:.3e} > {:.3e} > {:.3e} (final/first = {:.1}%)",
            rows[0].l2_error,
            rows[1].l2_error,
            rows[2].l2_error,
            100.0 * last / first
        )
    });
}

#[test]
fn criterion_08_fine_solutions_converge_to_second_gradient_limit() {
    run_criterion(8, 30.0, || {
        let field = sharp_laminate(256, (1.0, 4.0), (1.0, 1.0));
        let eps = [0.125, 0.0625, 0.03125];
        let g = |_x: f64| 1.0;
        let rows =
            convergence_study(&field, Regime::Hs2, &eps, &g, 8, &SolverParams::default())
                .unwrap();

        for pair in rows.windows(2) {
            assert!(
                pair[1].l2_error < pair[0].l2_error,
                "L2 errors not strictly decreasing: {rows:?}"
            );
        }
        let first = rows.first().unwrap().l2_error;
        let last = rows.last().unwrap().l2_error;
        assert!(
            last <= 0.50 * first,
            "final error {last:.3e} above 50% of first {first:.3e}"
        );
        format!(
            "L2 errors {:.3e} > {:.3e} > {:.3e} (final/first = {:.1}%)",
            rows[0].l2_error,
            rows[1].l2_error,
            rows[2].l2_error,
            100.0 * last / first
        )
    });
}

#[test]
fn criterion_09_limits_are_independent_of_the_chiral_coupling() {
    run_criterion(9, 60.0, || {
        let base = sharp_laminate(256, (1.0, 4.0), (1.0, 1.0));
        let grid = *base.grid();
        let s = chiral_S(grid, 4.0, 1).unwrap();
        let with_s = CoefficientField::from_parts(
            grid,
            base.k_field().to_vec(),
            s,
            base.a_field().to_vec(),
        )
        .unwrap();

        let (cal_k, cal_s, _) = tensor_maxima(&with_s);
        assert!(
            (cal_s / cal_k - 1.0).abs() <= 0.01,
            "coupling magnitude calS = {cal_s} should match calK = {cal_k}"
        );

        let eps = [0.125, 0.0625, 0.03125];
        let g = |_x: f64| 1.0;
        let mut detail = String::from("|u_S0 - u_S| decreasing;");
        for regime in [Regime::Hs1, Regime::Hs2] {
            let rows = s_independence_probe(&base, &with_s, regime, &eps, &g, 8).unwrap();
            for pair in rows.windows(2) {
                assert!(
                    pair[1].l2_difference < pair[0].l2_difference,
                    "{regime:?}: differences not strictly decreasing: {rows:?}"
                );
            }
            detail.push_str(&format!(
                " {regime:?} {:.2e} > {:.2e} > {:.2e};",
                rows[0].l2_difference, rows[1].l2_difference, rows[2].l2_difference
            ));
        }
        detail
    });
}

#[test]
fn criterion_10_coercivity_probe_and_stability_constants() {
    run_criterion(10, 30.0, || {
        // Shipped single-dimension examples stay coercive at eps <= 1/8 in
        // the regime each is meant for.
        let constant = shipped_field("constant.json");
        let laminate_field = shipped_field("laminate.json");
        for (name, field, regime) in [
            ("constant", &constant, Regime::Hs2),
            ("laminate", &laminate_field, Regime::Hs1),
        ] {
            let report = coercivity_probe(field, 0.125, regime, 200, 0).unwrap();
            assert!(
                report.passes && report.c_est > 0.0,
                "{name} example lost coercivity at eps = 1/8: c = {:.3e}",
                report.c_est
            );
        }

        // Stability constants stay within a factor 2 across the eps list.
        let mut stability = Vec::new();
        for eps in [0.125, 0.0625, 0.03125] {
            let report = coercivity_probe(&constant, eps, Regime::Hs2, 200, 0).unwrap();
            assert!(report.passes);
            stability.push(report.stability_constant.unwrap());
        }
        let max = stability.iter().fold(0.0f64, |m, v| m.max(*v));
        let min = stability.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        assert!(
            max / min <= 2.0,
            "stability constants vary too much: {stability:?}"
        );

        // A deliberately strong coupling violates coercivity at a coarse
        // scale and regains it once the cell size is small.
        let grid = CellGrid::new(1, 64).unwrap();
        let strong = CoefficientField::from_parts(
            grid,
            vec![
                {
                    let mut k = Tensor4::zeros(1).unwrap();
                    k.set(0, 0, 0, 0, 1.0);
                    k
                };
                grid.num_nodes()
            ],
            chiral_S(grid, 10.0, 2).unwrap(),
            vec![Tensor6::diagonal(0.1, 1).unwrap(); grid.num_nodes()],
        )
        .unwrap();
        let coarse = coercivity_probe(&strong, 0.5, Regime::Hs2, 200, 0).unwrap();
        assert!(
            !coarse.passes && coarse.c_est <= 0.0,
            "strong coupling unexpectedly coercive at eps = 1/2: c = {:.3e}",
            coarse.c_est
        );
        let fine = coercivity_probe(&strong, 1.0 / 64.0, Regime::Hs2, 200, 0).unwrap();
        assert!(
            fine.passes && fine.c_est > 0.0,
            "strong coupling still non-coercive at eps = 1/64: c = {:.3e}",
            fine.c_est
        );
        format!(
            "shipped examples coercive at eps = 1/8; stability max/min = {:.3}; strong coupling c(1/2) = {:.2e} < 0 < c(1/64) = {:.2e}",
            max / min,
            coarse.c_est,
            fine.c_est
        )
    });
}

#[test]
fn criterion_11_pipeline_reruns_are_byte_identical() {
    run_criterion(11, 10.0, || {
        let spec = configs_dir().join("laminate.json");
        let eps = [0.125, 0.0625];
        let mut manifests = Vec::new();
        for _ in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let g = quiet_global(dir.path());
            commands::pipeline(
                &g,
                &spec,
                Regime::Hs1,
                0.0625,
                Some(&eps),
                Load::Const(1.0),
                1e-9,
            )
            .unwrap();
            manifests.push(fs::read(dir.path().join("manifest.json")).unwrap());
        }
        assert_eq!(
            manifests[0], manifests[1],
            "pipeline reruns produced different manifests"
        );
        format!("two runs, identical manifests ({} bytes)", manifests[0].len())
    });
}
