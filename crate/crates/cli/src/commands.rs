//! One function per subcommand. Each reads its inputs, runs the compute,
//! writes its artifacts plus `manifest.json` and `timings.json` into the
//! output directory, and returns the typed error that sets the exit code.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use gradhom_core::cell::SolverParams;
use gradhom_core::effective::{assemble, verify_effective, EffectiveTensors, VerifyReport};
use gradhom_core::io::{
    read_correctors, read_field, write_correctors, write_field, CorrectorSet,
};
use gradhom_core::macro1d::{convergence_study, ConvergenceRow};
use gradhom_core::scaling::{default_log_tol, scaling_report, Regime, ScalingReport};
use gradhom_core::unfolding::{
    gradient_compatibility_probe, integral_identity_check, product_and_norm_checks,
    two_scale_convergence_probe, MacroGrid, ProbeRow,
};
use gradhom_core::{Error, Result};

use crate::cell_spec::CellSpec;
use crate::manifest::{RunManifest, StageTimer};
use crate::plotdata;

/// How chatty the run is on stderr.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

/// CLI spelling of the two scale-interaction regimes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RegimeArg {
    Hs1,
    Hs2,
}

impl From<RegimeArg> for Regime {
    fn from(arg: RegimeArg) -> Self {
        match arg {
            RegimeArg::Hs1 => Regime::Hs1,
            RegimeArg::Hs2 => Regime::Hs2,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Clone, Debug)]
pub struct Global {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub log: LogLevel,
}

impl Global {
    fn info(&self, msg: impl AsRef<str>) {
        if self.log >= LogLevel::Info {
            eprintln!("gradhom: {}", msg.as_ref());
        }
    }

    /// Output paths resolve inside the output directory unless absolute.
    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.out_dir.join(path)
        }
    }

    fn prepare_out_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

/// Body load parsed from `--g`: `const:<value>` or `sin:<k>` for
/// `sin(k pi x)` with integer `k`.
#[derive(Clone, Copy, Debug, Serialize)]
pub enum Load {
    Const(f64),
    Sin(u32),
}

impl Load {
    pub fn parse(text: &str) -> Result<Self> {
        let (kind, value) = text.split_once(':').ok_or_else(|| {
            Error::Format(format!(
                "load must be 'const:<value>' or 'sin:<k>', got '{text}'"
            ))
        })?;
        match kind {
            "const" => {
                let v: f64 = value.parse().map_err(|_| {
                    Error::Format(format!("load value '{value}' is not a number"))
                })?;
                if !v.is_finite() {
                    return Err(Error::Format(format!("load value {v} is not finite")));
                }
                Ok(Self::Const(v))
            }
            "sin" => {
                let k: u32 = value.parse().map_err(|_| {
                    Error::Format(format!("sine mode '{value}' is not a positive integer"))
                })?;
                if k == 0 {
                    return Err(Error::Format("sine mode must be at least 1".into()));
                }
                Ok(Self::Sin(k))
            }
            other => Err(Error::Format(format!(
                "unknown load kind '{other}', expected 'const' or 'sin'"
            ))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Const(v) => *v,
            Self::Sin(k) => (*k as f64 * std::f64::consts::PI * x).sin(),
        }
    }
}

fn finish(
    g: &Global,
    manifest: &RunManifest,
    timer: &mut StageTimer,
) -> Result<()> {
    manifest.write(&g.out_dir)?;
    timer.stage("write-manifest");
    timer.write(&g.out_dir)?;
    Ok(())
}

/// `make-cell`: parse a cell spec and persist the nodal coefficient field.
pub fn make_cell(g: &Global, spec_path: &Path, out: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct Config<'a> {
        spec: &'a CellSpec,
        out: String,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let spec = CellSpec::load(spec_path)?;
    let field = spec.build()?;
    timer.stage("build-field");

    let out_path = g.resolve(out);
    write_field(&out_path, &field)?;
    timer.stage("write-field");
    g.info(format!(
        "wrote {} (d = {}, n = {})",
        out_path.display(),
        field.grid().dim(),
        field.grid().nodes_per_axis()
    ));

    let mut manifest = RunManifest::new(
        "make-cell",
        g.seed,
        &Config { spec: &spec, out: out.display().to_string() },
    )?;
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)
}

/// `scale-report`: classify the regime of one field at one cell size and
/// print the report as JSON (optionally also writing it to a file).
pub fn scale_report(
    g: &Global,
    cell: &Path,
    epsilon: f64,
    p_prime: f64,
    q_prime: f64,
    out: Option<&Path>,
) -> Result<ScalingReport> {
    #[derive(Serialize)]
    struct Config {
        cell: String,
        epsilon: f64,
        p_prime: f64,
        q_prime: f64,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let field = read_field(cell)?;
    let report = scaling_report(&field, epsilon, p_prime, q_prime, default_log_tol())?;
    timer.stage("scale-report");

    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");

    let mut manifest = RunManifest::new(
        "scale-report",
        g.seed,
        &Config {
            cell: cell.display().to_string(),
            epsilon,
            p_prime,
            q_prime,
        },
    )?;
    if let Some(out) = out {
        let out_path = g.resolve(out);
        fs::write(&out_path, format!("{text}\n"))?;
        manifest.record(&g.out_dir, &out_path)?;
    }
    finish(g, &manifest, &mut timer)?;
    Ok(report)
}

/// Per-cell-size rows of the unfolding self-check.
#[derive(Clone, Copy, Debug, Serialize, serde::Deserialize)]
pub struct UnfoldRow {
    pub epsilon: f64,
    pub integral_lhs: f64,
    pub integral_rhs: f64,
    pub integral_defect: f64,
    pub phi_l1: f64,
    pub product_defect: f64,
}

/// Everything `unfold-check` writes.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct UnfoldReport {
    pub d: usize,
    pub rows: Vec<UnfoldRow>,
    /// Oscillation probe rows; one space dimension only.
    pub two_scale: Vec<ProbeRow>,
    /// Second-derivative compatibility rows; one space dimension only.
    pub gradient: Vec<ProbeRow>,
}

/// Smooth test function on the fine grid of a macro domain.
fn smooth_sample(grid: &MacroGrid) -> Vec<f64> {
    let d = grid.dim();
    let per_axis = grid.fine_per_axis();
    let tau = std::f64::consts::TAU;
    (0..grid.num_fine())
        .map(|lin| {
            let mut rest = lin;
            let mut value = 1.0;
            for _ in 0..d {
                let idx = rest % per_axis;
                rest /= per_axis;
                let x = grid.fine_coord(idx);
                value *= 1.0 + 0.5 * (tau * x).sin() + 0.25 * (2.0 * tau * x).cos();
            }
            value
        })
        .collect()
}

/// `unfold-check`: run the unfolding identities over a list of cell sizes
/// and write a JSON report.
pub fn unfold_check(g: &Global, d: usize, eps_list: &[f64], out: &Path) -> Result<UnfoldReport> {
    #[derive(Serialize)]
    struct Config<'a> {
        d: usize,
        eps: &'a [f64],
        n_y: usize,
    }

    if eps_list.is_empty() {
        return Err(Error::Format("need at least one cell size in --eps".into()));
    }
    let n_y = 16usize;

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();

    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let grid = MacroGrid::new(d, eps, n_y)?;
        let phi = smooth_sample(&grid);
        let (lhs, rhs, defect) = integral_identity_check(&grid, &phi)?;
        let h_d = grid.spacing().powi(d as i32);
        let phi_l1 = phi.iter().map(|v| v.abs()).sum::<f64>() * h_d;
        let psi: Vec<f64> = phi.iter().map(|v| 1.0 + 0.25 * v).collect();
        let product = product_and_norm_checks(&grid, &phi, &psi)?;
        rows.push(UnfoldRow {
            epsilon: eps,
            integral_lhs: lhs,
            integral_rhs: rhs,
            integral_defect: defect,
            phi_l1,
            product_defect: product.product_defect,
        });
    }
    timer.stage("identities");

    let (two_scale, gradient) = if d == 1 {
        let tau = std::f64::consts::TAU;
        let modulation = |x: f64| 1.0 + 0.5 * (tau * x).sin();
        let psi: Vec<f64> = (0..n_y)
            .map(|j| ((j as f64 + 0.5) / n_y as f64 * tau).cos())
            .collect();
        let two_scale = two_scale_convergence_probe(&modulation, &psi, eps_list)?;
        let wave = |y: f64| (tau * y).cos();
        let gradient = gradient_compatibility_probe(&modulation, &wave, n_y, eps_list)?;
        (two_scale, gradient)
    } else {
        (Vec::new(), Vec::new())
    };
    timer.stage("probes");

    let report = UnfoldReport { d, rows, two_scale, gradient };
    let out_path = g.resolve(out);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&out_path, text)?;
    g.info(format!("wrote {}", out_path.display()));

    let mut manifest = RunManifest::new(
        "unfold-check",
        g.seed,
        &Config { d, eps: eps_list, n_y },
    )?;
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)?;
    Ok(report)
}

/// `solve-cell`: solve every corrector of the requested family.
pub fn solve_cell(
    g: &Global,
    cell: &Path,
    regime: Regime,
    tol: f64,
    out: &Path,
) -> Result<()> {
    #[derive(Serialize)]
    struct Config {
        cell: String,
        regime: Regime,
        tol: f64,
        out: String,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let field = read_field(cell)?;
    timer.stage("read-field");

    let set = solve_correctors(&field, regime, tol)?;
    timer.stage("solve");

    let out_path = g.resolve(out);
    write_correctors(&out_path, &set)?;
    timer.stage("write-correctors");
    g.info(format!(
        "wrote {} ({} correctors, max residual {:.3e})",
        out_path.display(),
        set.residuals().len(),
        set.residuals().iter().fold(0.0f64, |m, r| m.max(*r))
    ));

    let mut manifest = RunManifest::new(
        "solve-cell",
        g.seed,
        &Config {
            cell: cell.display().to_string(),
            regime,
            tol,
            out: out.display().to_string(),
        },
    )?;
    manifest.set_residuals(set.residuals());
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)
}

fn solve_correctors(
    field: &gradhom_core::microstructure::CoefficientField,
    regime: Regime,
    tol: f64,
) -> Result<CorrectorSet> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::Format(format!(
            "solver tolerance must lie in (0, 1), got {tol}"
        )));
    }
    let params = SolverParams { rel_tol: tol, ..SolverParams::default() };
    match regime {
        Regime::Hs1 => Ok(CorrectorSet::Hs1(gradhom_core::cell::solve_all_hs1(
            field, &params,
        )?)),
        Regime::Hs2 => Ok(CorrectorSet::Hs2(gradhom_core::cell::solve_all_hs2(
            field, &params,
        )?)),
        Regime::Other => Err(Error::Inconsistent(
            "corrector problems are defined for the hs1 and hs2 regimes only".into(),
        )),
    }
}

/// Payload of `eff.json`: the tensors plus their structural diagnostics.
#[derive(Clone, Debug, Serialize, serde::Deserialize)]
pub struct EffectiveReport {
    pub regime: Regime,
    pub tensors: EffectiveTensors,
    pub diagnostics: VerifyReport,
    pub residuals: Vec<f64>,
}

/// `effective`: average a corrector set into effective tensors and verify
/// their structure.
pub fn effective(
    g: &Global,
    cell: &Path,
    correctors: &Path,
    regime: Regime,
    out: &Path,
) -> Result<EffectiveReport> {
    #[derive(Serialize)]
    struct Config {
        cell: String,
        correctors: String,
        regime: Regime,
        out: String,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let field = read_field(cell)?;
    let set = read_correctors(correctors)?;
    if set.regime() != regime {
        return Err(Error::Inconsistent(format!(
            "corrector file holds a {:?} family but --regime asked for {:?}",
            set.regime(),
            regime
        )));
    }
    timer.stage("read-inputs");

    let report = assemble_and_verify(&field, &set, g.seed)?;
    timer.stage("assemble");
    if !report.diagnostics.pass {
        g.info("warning: effective tensors failed a structural check; see diagnostics");
    }

    let out_path = g.resolve(out);
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    fs::write(&out_path, text)?;
    g.info(format!("wrote {}", out_path.display()));

    let mut manifest = RunManifest::new(
        "effective",
        g.seed,
        &Config {
            cell: cell.display().to_string(),
            correctors: correctors.display().to_string(),
            regime,
            out: out.display().to_string(),
        },
    )?;
    manifest.set_residuals(set.residuals());
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)?;
    Ok(report)
}

fn assemble_and_verify(
    field: &gradhom_core::microstructure::CoefficientField,
    set: &CorrectorSet,
    seed: u64,
) -> Result<EffectiveReport> {
    let tensors = match set {
        CorrectorSet::Hs1(c) => assemble(field, Some(c), None)?,
        CorrectorSet::Hs2(c) => assemble(field, None, Some(c))?,
    };
    let diagnostics = verify_effective(field, &tensors, seed)?;
    Ok(EffectiveReport {
        regime: set.regime(),
        tensors,
        diagnostics,
        residuals: set.residuals().to_vec(),
    })
}

/// `converge`: homogenized-against-fine error table over a cell-size list.
pub fn converge(
    g: &Global,
    cell: &Path,
    regime: Regime,
    eps_list: &[f64],
    load: Load,
    elements_per_period: usize,
    out: &Path,
) -> Result<Vec<ConvergenceRow>> {
    #[derive(Serialize)]
    struct Config<'a> {
        cell: String,
        regime: Regime,
        eps: &'a [f64],
        load: Load,
        elements_per_period: usize,
        out: String,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let field = read_field(cell)?;
    timer.stage("read-field");

    let load_fn = move |x: f64| load.eval(x);
    let rows = convergence_study(
        &field,
        regime,
        eps_list,
        &load_fn,
        elements_per_period,
        &SolverParams::default(),
    )?;
    timer.stage("solve");

    let out_path = g.resolve(out);
    write_rows_csv(&out_path, &rows)?;
    g.info(format!("wrote {} ({} rows)", out_path.display(), rows.len()));

    let mut manifest = RunManifest::new(
        "converge",
        g.seed,
        &Config {
            cell: cell.display().to_string(),
            regime,
            eps: eps_list,
            load,
            elements_per_period,
            out: out.display().to_string(),
        },
    )?;
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)?;
    Ok(rows)
}

fn write_rows_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Format(format!("cannot write {}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Format(format!("cannot write row: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Format(format!("cannot flush {}: {e}", path.display())))?;
    Ok(())
}

/// `pipeline`: spec → field → regime report → correctors → effective
/// tensors → optional convergence table, with one manifest for the lot.
#[allow(clippy::too_many_arguments)]
pub fn pipeline(
    g: &Global,
    spec_path: &Path,
    regime: Regime,
    epsilon: f64,
    eps_list: Option<&[f64]>,
    load: Load,
    tol: f64,
) -> Result<()> {
    #[derive(Serialize)]
    struct Config<'a> {
        spec: &'a CellSpec,
        regime: Regime,
        epsilon: f64,
        eps: Option<&'a [f64]>,
        load: Load,
        tol: f64,
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let mut stage = "parse-spec";
    let result = (|| -> Result<()> {
        let spec = CellSpec::load(spec_path)?;
        let mut manifest = RunManifest::new(
            "pipeline",
            g.seed,
            &Config {
                spec: &spec,
                regime,
                epsilon,
                eps: eps_list,
                load,
                tol,
            },
        )?;

        stage = "make-cell";
        let field = spec.build()?;
        let cell_path = g.out_dir.join("cell.field");
        write_field(&cell_path, &field)?;
        manifest.record(&g.out_dir, &cell_path)?;
        timer.stage(stage);
        g.info(format!("stage make-cell: wrote {}", cell_path.display()));

        stage = "scale-report";
        let report = scaling_report(&field, epsilon, 2.0, 2.0, default_log_tol())?;
        if report.regime != regime {
            g.info(format!(
                "stage scale-report: classified {:?}, proceeding with requested {:?}",
                report.regime, regime
            ));
        }
        let report_path = g.out_dir.join("scale_report.json");
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(&report_path, text)?;
        manifest.record(&g.out_dir, &report_path)?;
        timer.stage(stage);

        stage = "solve-cell";
        let set = solve_correctors(&field, regime, tol)?;
        let correctors_path = g.out_dir.join("correctors.bin");
        write_correctors(&correctors_path, &set)?;
        manifest.set_residuals(set.residuals());
        manifest.record(&g.out_dir, &correctors_path)?;
        timer.stage(stage);
        g.info(format!(
            "stage solve-cell: max residual {:.3e}",
            set.residuals().iter().fold(0.0f64, |m, r| m.max(*r))
        ));

        stage = "effective";
        let eff = assemble_and_verify(&field, &set, g.seed)?;
        let eff_path = g.out_dir.join("eff.json");
        let mut text = serde_json::to_string_pretty(&eff)?;
        text.push('\n');
        fs::write(&eff_path, text)?;
        manifest.record(&g.out_dir, &eff_path)?;
        timer.stage(stage);

        if let Some(eps) = eps_list {
            stage = "converge";
            let load_fn = move |x: f64| load.eval(x);
            let rows = convergence_study(
                &field,
                regime,
                eps,
                &load_fn,
                8,
                &SolverParams::default(),
            )?;
            let table_path = g.out_dir.join("table.csv");
            write_rows_csv(&table_path, &rows)?;
            manifest.record(&g.out_dir, &table_path)?;
            timer.stage(stage);
            g.info(format!("stage converge: {} rows", rows.len()));
        }

        finish(g, &manifest, &mut timer)
    })();

    result.map_err(|err| {
        eprintln!("gradhom: pipeline stage '{stage}' failed: {err}");
        err
    })
}

/// `export-plotdata`: reshape a convergence table into tidy rows.
pub fn export_plotdata(
    g: &Global,
    table: &Path,
    out: &Path,
    metrics: Option<&[String]>,
) -> Result<usize> {
    #[derive(Serialize)]
    struct Config<'a> {
        table: String,
        out: String,
        metrics: &'a [String],
    }

    g.prepare_out_dir()?;
    let mut timer = StageTimer::new();
    let default: Vec<String> = plotdata::DEFAULT_METRICS
        .iter()
        .map(|s| s.to_string())
        .collect();
    let metrics = metrics.unwrap_or(&default);

    let out_path = g.resolve(out);
    let rows = plotdata::export(table, &out_path, metrics)?;
    timer.stage("export");
    g.info(format!("wrote {} ({rows} tidy rows)", out_path.display()));

    let mut manifest = RunManifest::new(
        "export-plotdata",
        g.seed,
        &Config {
            table: table.display().to_string(),
            out: out.display().to_string(),
            metrics,
        },
    )?;
    manifest.record(&g.out_dir, &out_path)?;
    finish(g, &manifest, &mut timer)?;
    Ok(rows)
}
