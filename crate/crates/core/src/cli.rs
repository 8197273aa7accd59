//! Command-line front end.
//!
//! Settings are resolved in three layers: built-in defaults, then the TOML
//! file given with `--config`, then individual flags. Exit status is 0 on
//! success, 1 for invalid input or usage, 2 for numerical failure (including
//! failed report stages) and 3 for I/O failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Category, Error, Result};
use crate::fitting::{stability_scan, ExponentMode};
use crate::io::{
    format_stability_table, format_table, is_calibration_table, load_run_csv, load_toml,
    parse_length, parse_mass, read_text, to_toml, write_report, write_run_csv, write_text,
    CalibrationTable, Num, Provenance,
};
use crate::lifshitz::{
    casimir_shift_with, ideal_plane_plane_energy, LifshitzConfig, LifshitzEvaluator,
    MaterialResponse, OpticalTable,
};
use crate::lsq::DataPoint;
use crate::models::{Cantilever, Geometry};
use crate::pipeline::{
    analyze_run, extract_calibration, hash_of, log_grid, simulate_run, AnalysisDepth,
    AnalysisOptions, AnalysisReport, RunDataset, SimulationConfig, Stage,
};

#[derive(Parser, Debug)]
#[command(
    name = "sphereplane",
    version,
    about = "Calibration, contact-potential and Casimir residual analysis for sphere-plane runs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic run file from a simulation config.
    Simulate(SimulateArgs),
    /// Fit the bias parabola at every distance and write a calibration table.
    Calibrate(CalibrateArgs),
    /// Calibrate, infer distances and reconstruct the contact potential.
    ContactPotential(AnalysisArgs),
    /// Full chain down to the Casimir fit and the Lifshitz overlay.
    Residuals(AnalysisArgs),
    /// Tabulate the plane-plane Lifshitz energy and the sphere-plane shift.
    Lifshitz(LifshitzArgs),
    /// Refit the curvature power law with progressively more distances.
    Stability(StabilityArgs),
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Simulation config (TOML); the run-1-like preset when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run CSV to write.
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Print the effective config as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

/// Tolerance overrides shared by the analysis commands.
#[derive(Args, Debug, Default)]
pub struct ToleranceArgs {
    /// σ of a single frequency reading, Hz.
    #[arg(long)]
    pub freq_sigma: Option<f64>,
    /// Relative σ assigned to each K_el point in the power-law fits.
    #[arg(long)]
    pub k_rel_sigma: Option<f64>,
    /// Skip the reference-visit drift correction.
    #[arg(long)]
    pub no_references: bool,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Run CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Analysis options (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Calibration table to write; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a calibration-depth report with sidecar series here.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormSelection {
    Exponential,
    Logarithmic,
    Both,
}

impl FormSelection {
    fn includes(self, label: &str) -> bool {
        match self {
            FormSelection::Both => true,
            FormSelection::Exponential => label == "exponential",
            FormSelection::Logarithmic => label == "logarithmic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Free,
}

impl From<ModeArg> for ExponentMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Fixed => ExponentMode::Fixed,
            ModeArg::Free => ExponentMode::Free,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeSelection {
    Fixed,
    Free,
    Both,
}

#[derive(Args, Debug)]
pub struct AnalysisArgs {
    /// Run CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Analysis options (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory for report.json and the sidecar series.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// V₀ branches to summarise and to count toward the exit status.
    #[arg(long, value_enum, default_value = "both")]
    pub form: FormSelection,
    /// Boundary distance of the contact-potential solve, e.g. `1um`.
    #[arg(long, value_parser = length)]
    pub x_n: Option<f64>,
    /// Fixed V_log of the logarithmic branch, V.
    #[arg(long)]
    pub v_log: Option<f64>,
    /// Power-law exponent mode that sets the distances.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Effective mass, e.g. `0.46g`; overrides the run metadata.
    #[arg(long, value_parser = mass)]
    pub m_eff: Option<f64>,
    /// Temperature of the Lifshitz overlay, K.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// gold, ideal, drude:<ω_p eV>,<γ_p eV> or table:<path>.
    #[arg(long)]
    pub material: Option<String>,
    /// Relative ODE tolerance.
    #[arg(long)]
    pub ode_rtol: Option<f64>,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

/// Inputs of the `lifshitz` command; also the schema of its config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifshitzJob {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
    pub radius: f64,
    pub m_eff: f64,
    pub material: MaterialResponse,
    pub lifshitz: LifshitzConfig,
}

impl Default for LifshitzJob {
    fn default() -> Self {
        LifshitzJob {
            x_min: 50e-9,
            x_max: 3e-6,
            points: 40,
            radius: Geometry::reference().radius,
            m_eff: Cantilever::reference().m_eff,
            material: MaterialResponse::gold_drude(),
            lifshitz: LifshitzConfig::default(),
        }
    }
}

impl LifshitzJob {
    pub fn validate(&self) -> Result<()> {
        if !(self.x_min > 0.0 && self.x_max >= self.x_min) {
            return Err(Error::Config(format!(
                "x range [{}, {}] must satisfy 0 < x_min <= x_max",
                self.x_min, self.x_max
            )));
        }
        if self.points < 1 || (self.points < 2 && self.x_max > self.x_min) {
            return Err(Error::Config("points must be >= 2 for a range".into()));
        }
        if !(self.radius > self.x_max && self.m_eff > 0.0) {
            return Err(Error::Config(format!(
                "need radius > x_max and m_eff > 0, got R = {}, m_eff = {}",
                self.radius, self.m_eff
            )));
        }
        self.material.validate()?;
        self.lifshitz.validate()
    }
}

#[derive(Args, Debug)]
pub struct LifshitzArgs {
    /// Job file (TOML) with the fields of the flags below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// gold, ideal, drude:<ω_p eV>,<γ_p eV> or table:<path>.
    #[arg(long)]
    pub material: Option<String>,
    /// K; 0 selects the zero-temperature integral.
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_parser = length)]
    pub x_min: Option<f64>,
    #[arg(long, value_parser = length)]
    pub x_max: Option<f64>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, value_parser = length)]
    pub radius: Option<f64>,
    #[arg(long, value_parser = mass)]
    pub m_eff: Option<f64>,
    /// Relative tail bound of the Matsubara sum.
    #[arg(long)]
    pub tail_tol: Option<f64>,
    /// Relative tolerance of the wave-vector quadrature.
    #[arg(long)]
    pub quad_tol: Option<f64>,
    /// Table to write; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StabilityArgs {
    /// Calibration table, or a run CSV to calibrate first.
    #[arg(long)]
    pub input: PathBuf,
    /// Analysis options (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeSelection,
    /// Write stability_<mode>.csv here; standard output when absent.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub tol: ToleranceArgs,
}

fn length(s: &str) -> std::result::Result<f64, String> {
    parse_length(s).ok_or_else(|| format!("`{s}` is not a length (e.g. 50nm, 3um, 1e-6)"))
}

fn mass(s: &str) -> std::result::Result<f64, String> {
    parse_mass(s).ok_or_else(|| format!("`{s}` is not a mass (e.g. 0.46g, 4.6e-4)"))
}

/// `gold`, `ideal`, `drude:<ω_p>,<γ_p>` (eV) or `table:<path>` (eV, ε″ with
/// gold Drude parameters outside the table).
pub fn parse_material(spec: &str) -> Result<MaterialResponse> {
    let bad = || Error::Config(format!("unknown material `{spec}`"));
    match spec.split_once(':') {
        None => match spec {
            "gold" | "gold-drude" => Ok(MaterialResponse::gold_drude()),
            "ideal" | "perfect" => Ok(MaterialResponse::PerfectConductor),
            _ => Err(bad()),
        },
        Some(("drude", params)) => {
            let (w, g) = params.split_once(',').ok_or_else(bad)?;
            let w: f64 = w.trim().parse().map_err(|_| bad())?;
            let g: f64 = g.trim().parse().map_err(|_| bad())?;
            let m = MaterialResponse::drude_ev(w, g);
            m.validate()?;
            Ok(m)
        }
        Some(("table", path)) => OpticalTable::load(Path::new(path))?.into_material(7.5, 0.061),
        Some(_) => Err(bad()),
    }
}

fn exit_code(c: Category) -> i32 {
    match c {
        Category::Validation => 1,
        Category::Numerical => 2,
        Category::Io => 3,
    }
}

fn category_name(c: Category) -> &'static str {
    match c {
        Category::Validation => "validation",
        Category::Numerical => "numerical",
        Category::Io => "io",
    }
}

/// Parse `args` (program name first) and run the command, writing results to
/// `out` and diagnostics to `err`. Returns the exit status.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(&cli.command, out) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::StageFailures(list)) => {
            for f in list {
                let _ = writeln!(err, "stage failed: {f}");
            }
            2
        }
        Err(e) => {
            let cat = e.category();
            let _ = writeln!(err, "error [{}]: {e}", category_name(cat));
            if cat == Category::Validation {
                let name = subcommand_name(&cli.command);
                let mut cmd = Cli::command();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    let _ = writeln!(err, "\n{}", sub.render_usage());
                }
            }
            exit_code(cat)
        }
    }
}

/// [`run_with`] on the process's standard streams.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Simulate(_) => "simulate",
        Command::Calibrate(_) => "calibrate",
        Command::ContactPotential(_) => "contact-potential",
        Command::Residuals(_) => "residuals",
        Command::Lifshitz(_) => "lifshitz",
        Command::Stability(_) => "stability",
    }
}

enum Outcome {
    Success,
    StageFailures(Vec<String>),
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|source| Error::Io {
        path: "<stdout>".into(),
        source,
    })
}

fn execute(cmd: &Command, out: &mut dyn Write) -> Result<Outcome> {
    match cmd {
        Command::Simulate(a) => simulate(a, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::ContactPotential(a) => analysis(a, AnalysisDepth::ContactPotential, out),
        Command::Residuals(a) => analysis(a, AnalysisDepth::Residuals, out),
        Command::Lifshitz(a) => lifshitz(a, out),
        Command::Stability(a) => stability(a, out),
    }
}

fn simulate(a: &SimulateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => load_toml::<SimulationConfig>(p)?,
        None => SimulationConfig::run1_like(0),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    if a.print_config {
        emit(out, &to_toml(&cfg)?)?;
        return Ok(Outcome::Success);
    }
    let run = simulate_run(&cfg)?;
    let path = a.out.as_deref().expect("clap requires --out");
    write_run_csv(&run, path)?;
    emit(
        out,
        &format!(
            "wrote {} ({} frequency samples, {} capacitance samples)\nconfig_hash: {}\nseed: {}\n",
            path.display(),
            run.samples.len(),
            run.capacitance_samples.len(),
            cfg.hash()?,
            cfg.seed
        ),
    )?;
    Ok(Outcome::Success)
}

fn base_options(config: Option<&Path>, tol: &ToleranceArgs) -> Result<AnalysisOptions> {
    let mut o = match config {
        Some(p) => load_toml::<AnalysisOptions>(p)?,
        None => AnalysisOptions::default(),
    };
    if let Some(s) = tol.freq_sigma {
        o.calibration.freq_sigma_hz = s;
    }
    if let Some(s) = tol.k_rel_sigma {
        o.k_el_rel_sigma = s;
    }
    if tol.no_references {
        o.calibration.use_references = false;
    }
    Ok(o)
}

fn calibrate(a: &CalibrateArgs, out: &mut dyn Write) -> Result<Outcome> {
    let mut opts = base_options(a.config.as_deref(), &a.tol)?;
    opts.depth = AnalysisDepth::Calibration;
    opts.validate()?;
    let run = load_run_csv(&a.input)?;
    let cal = extract_calibration(&run, &opts.calibration)?;
    let prov = Provenance {
        config_hash: run.metadata.config_hash.clone(),
        options_hash: Some(hash_of(&opts)?),
        seed: run.metadata.seed,
    };
    let table = CalibrationTable::from_calibration(&cal, run.metadata.beta, prov).format();
    match &a.out {
        Some(p) => write_text(p, &table)?,
        None => emit(out, &table)?,
    }
    for s in &cal.skipped {
        emit(
            out,
            &format!("# skipped V_pzt = {}: {}\n", s.v_pzt, s.reason),
        )?;
    }
    if let Some(dir) = &a.report_dir {
        let report = analyze_run(&run, &opts)?;
        write_report(&report, dir)?;
    }
    Ok(Outcome::Success)
}

fn analysis_options(a: &AnalysisArgs, depth: AnalysisDepth) -> Result<AnalysisOptions> {
    let mut o = base_options(a.config.as_deref(), &a.tol)?;
    o.depth = depth;
    if a.x_n.is_some() {
        o.x_n = a.x_n;
    }
    if let Some(v) = a.v_log {
        o.v_log = v;
    }
    if let Some(m) = a.mode {
        o.distance_mode = m.into();
    }
    if a.m_eff.is_some() {
        o.m_eff = a.m_eff;
    }
    if a.temperature.is_some() {
        o.temperature = a.temperature;
    }
    if let Some(m) = &a.material {
        o.material = parse_material(m)?;
    }
    if let Some(r) = a.ode_rtol {
        o.ode.stepper.rtol = r;
    }
    o.validate()?;
    Ok(o)
}

fn analysis(a: &AnalysisArgs, depth: AnalysisDepth, out: &mut dyn Write) -> Result<Outcome> {
    let opts = analysis_options(a, depth)?;
    let run: RunDataset = load_run_csv(&a.input)?;
    let report = analyze_run(&run, &opts)?;
    write_report(&report, &a.out_dir)?;
    emit(out, &summary(&report, a.form))?;
    let failures: Vec<String> = report
        .failures()
        .into_iter()
        .filter(|f| match f.split_once('.') {
            Some((label, _)) => a.form.includes(label),
            None => true,
        })
        .collect();
    Ok(if failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::StageFailures(failures)
    })
}

fn stage_line<T>(name: &str, s: &Stage<T>, ok: impl Fn(&T) -> String) -> String {
    match s {
        Stage::Ok { value } => format!("{name}: {}\n", ok(value)),
        Stage::Failed { category, message } => format!("{name}: FAILED [{category}] {message}\n"),
    }
}

fn summary(r: &AnalysisReport, form: FormSelection) -> String {
    let mut s = format!(
        "distances calibrated: {} (skipped {})\n",
        r.calibration.len(),
        r.skipped.len()
    );
    let pl = |f: &crate::fitting::PowerLawFit| {
        format!(
            "alpha = {:.6e} {}, V0_pzt = {:.4} V, e = {:.4}, x0 = {:.4e} m ± {:.2e}, chi2_red = {:.3}",
            f.model.alpha, f.model.alpha_unit, f.model.v0_pzt, f.model.e, f.model.x0, f.model.x0_sigma, f.fit.chi2_red
        )
    };
    s += &stage_line("power_law_fixed", &r.power_law_fixed, pl);
    s += &stage_line("power_law_free", &r.power_law_free, pl);
    if let Some(c) = &r.capacitance {
        s += &stage_line("capacitance", c, |f| format!("{f:?}"));
    }
    for b in r.branches.iter().filter(|b| form.includes(b.form.label())) {
        let l = b.form.label();
        s += &stage_line(&format!("{l}.v0_fit"), &b.v0_fit, |f| {
            let model = serde_json::to_string(&f.model).unwrap_or_default();
            format!("{model}, chi2_red = {:.3}", f.fit.chi2_red)
        });
        if let Some(o) = &b.ode {
            s += &stage_line(&format!("{l}.ode"), o, |o| {
                format!(
                    "x_n = {:.4e} m, x_min = {:.4e} m, error estimate {:.2e} V",
                    o.x_n, o.x_min, o.error_estimate
                )
            });
        }
        if let Some(c) = &b.casimir {
            s += &stage_line(&format!("{l}.casimir"), c, |c| {
                format!(
                    "nu_p^2 = {:.6e} ± {:.2e} Hz^2, K_Cas = {:.4e} ± {:.2e} (fit) ± {:.2e} (distance) ± {:.2e} (V0 law) Hz^2 m^4, model-conditional",
                    c.nu_p_sq,
                    c.nu_p_sq_sigma,
                    c.k_cas,
                    c.k_cas_sigma,
                    c.k_cas_sigma_distance,
                    c.k_cas_sigma_v0
                )
            });
        }
    }
    s
}

fn lifshitz_job(a: &LifshitzArgs) -> Result<LifshitzJob> {
    let mut job = match &a.config {
        Some(p) => load_toml::<LifshitzJob>(p)?,
        None => LifshitzJob::default(),
    };
    if let Some(m) = &a.material {
        job.material = parse_material(m)?;
    }
    if let Some(t) = a.temperature {
        job.lifshitz.temperature = t;
    }
    if let Some(v) = a.x_min {
        job.x_min = v;
    }
    if let Some(v) = a.x_max {
        job.x_max = v;
    }
    if let Some(v) = a.points {
        job.points = v;
    }
    if let Some(v) = a.radius {
        job.radius = v;
    }
    if let Some(v) = a.m_eff {
        job.m_eff = v;
    }
    if let Some(v) = a.tail_tol {
        job.lifshitz.tail_tol = v;
    }
    if let Some(v) = a.quad_tol {
        job.lifshitz.quad_rel_tol = v;
    }
    job.validate()?;
    Ok(job)
}

/// Rows of x, E_PP, ideal E_PP, Δν²_Cas, its error estimate and the ideal
/// Δν²_Cas.
pub fn lifshitz_table(job: &LifshitzJob) -> Result<Vec<[f64; 6]>> {
    job.validate()?;
    let grid = if job.x_max > job.x_min {
        log_grid(job.x_min, job.x_max, job.points)
    } else {
        vec![job.x_min]
    };
    let k_ideal = crate::lifshitz::ideal_casimir_coefficient(job.radius, job.m_eff)?;
    let mut eval = LifshitzEvaluator::new(&job.material, &job.lifshitz)?;
    grid.into_iter()
        .map(|x| {
            let e = eval.free_energy(x)?.value;
            let shift = casimir_shift_with(&mut eval, x, job.radius, job.m_eff)?;
            Ok([
                x,
                e,
                ideal_plane_plane_energy(x)?,
                shift.nu_sq,
                shift.error,
                -k_ideal / x.powi(4),
            ])
        })
        .collect()
}

fn lifshitz(a: &LifshitzArgs, out: &mut dyn Write) -> Result<Outcome> {
    let job = lifshitz_job(a)?;
    let rows = lifshitz_table(&job)?;
    let prov = Provenance {
        config_hash: Some(hash_of(&job)?),
        options_hash: None,
        seed: None,
    };
    let c = &job.lifshitz;
    let meta = [
        ("material", job.material.label().to_string()),
        ("temperature[K]", Num(c.temperature).to_string()),
        ("radius[m]", Num(job.radius).to_string()),
        ("m_eff[kg]", Num(job.m_eff).to_string()),
        ("tail_tol", Num(c.tail_tol).to_string()),
        ("quad_rel_tol", Num(c.quad_rel_tol).to_string()),
        ("matsubara_cutoff", c.matsubara_cutoff.to_string()),
        ("y_span", c.y_span.to_string()),
    ];
    let text = format_table(
        &[
            "x[m]",
            "E_PP[J/m2]",
            "E_PP_ideal[J/m2]",
            "nu_sq_cas[Hz2]",
            "sigma_nu_sq_cas[Hz2]",
            "nu_sq_ideal[Hz2]",
        ],
        &rows,
        &meta,
        &prov,
    );
    match &a.out {
        Some(p) => write_text(p, &text)?,
        None => emit(out, &text)?,
    }
    Ok(Outcome::Success)
}

fn stability(a: &StabilityArgs, out: &mut dyn Write) -> Result<Outcome> {
    let opts = base_options(a.config.as_deref(), &a.tol)?;
    opts.validate()?;
    let text = read_text(&a.input)?;
    let origin = a.input.display().to_string();
    let (points, beta, prov): (Vec<DataPoint>, f64, Provenance) = if is_calibration_table(&text) {
        let t = CalibrationTable::parse(&text, &origin)?;
        let mut prov = t.provenance.clone();
        prov.options_hash = Some(hash_of(&opts)?);
        (t.curvature_points(opts.k_el_rel_sigma), t.beta, prov)
    } else {
        let run = crate::io::parse_run_csv(&text, &origin)?;
        let cal = extract_calibration(&run, &opts.calibration)?;
        let prov = Provenance {
            config_hash: run.metadata.config_hash.clone(),
            options_hash: Some(hash_of(&opts)?),
            seed: run.metadata.seed,
        };
        (
            cal.curvature_points(opts.k_el_rel_sigma),
            run.metadata.beta,
            prov,
        )
    };
    let modes: &[(ExponentMode, &str)] = match a.mode {
        ModeSelection::Fixed => &[(ExponentMode::Fixed, "fixed")],
        ModeSelection::Free => &[(ExponentMode::Free, "free")],
        ModeSelection::Both => &[(ExponentMode::Fixed, "fixed"), (ExponentMode::Free, "free")],
    };
    for (mode, name) in modes {
        let scan = stability_scan(&points, *mode, beta)?;
        let table = format_stability_table(&scan, &prov);
        match &a.out_dir {
            Some(dir) => write_text(&dir.join(format!("stability_{name}.csv")), &table)?,
            None => emit(out, &table)?,
        }
    }
    Ok(Outcome::Success)
}
