//! File formats: run CSV, calibration table, JSON report with two-column
//! sidecar series, and TOML configuration.
//!
//! CSV dialect: comma separated, `#` comments, mandatory header row, decimal
//! point `.`. Leading `# key: value` comments carry metadata. Column names
//! declare their unit in brackets, e.g. `x[um]`; values are converted to SI
//! on load.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fitting::{ScanOutcome, StabilityScan};
use crate::lsq::DataPoint;
use crate::pipeline::{
    AnalysisReport, Calibration, CapacitanceSample, FrequencySample, RunDataset, RunMetadata,
    SampleKind, Stage, FORMAT_VERSION, TOOL_VERSION,
};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

// ------------------------------------------------------------------- units

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    None,
    Voltage,
    Frequency,
    Time,
    Capacitance,
    Length,
    Mass,
    Temperature,
    Actuation,
    Exact(&'static str),
}

fn unit_factor(dim: Dimension, unit: &str) -> Option<f64> {
    use Dimension::*;
    let f = match (dim, unit) {
        (None, "") => 1.0,
        (Voltage, "V") => 1.0,
        (Voltage, "mV") => 1e-3,
        (Frequency, "Hz") => 1.0,
        (Frequency, "kHz") => 1e3,
        (Time, "s") => 1.0,
        (Time, "min") => 60.0,
        (Time, "h") => 3600.0,
        (Capacitance, "F") => 1.0,
        (Capacitance, "nF") => 1e-9,
        (Capacitance, "pF") => 1e-12,
        (Length, "m") => 1.0,
        (Length, "mm") => 1e-3,
        (Length, "um" | "µm") => 1e-6,
        (Length, "nm") => 1e-9,
        (Mass, "kg") => 1.0,
        (Mass, "g") => 1e-3,
        (Temperature, "K") => 1.0,
        (Actuation, "m/V") => 1.0,
        (Actuation, "nm/V") => 1e-9,
        (Exact(u), v) if u == v => 1.0,
        _ => return Option::None,
    };
    Some(f)
}

fn parse_with_unit(text: &str, dim: Dimension) -> Option<f64> {
    let t = text.trim();
    let split = t
        .find(|c: char| c.is_alphabetic() && c != 'e' && c != 'E' || c == 'µ')
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let v: f64 = num.trim().parse().ok()?;
    let unit = unit.trim();
    let f = if unit.is_empty() {
        1.0
    } else {
        unit_factor(dim, unit)?
    };
    Some(v * f)
}

/// Length such as `50nm`, `3um` or `1e-6` (metres when no unit is given).
pub fn parse_length(text: &str) -> Option<f64> {
    parse_with_unit(text, Dimension::Length)
}

/// Mass such as `0.46g` or `4.6e-4` (kilograms when no unit is given).
pub fn parse_mass(text: &str) -> Option<f64> {
    parse_with_unit(text, Dimension::Mass)
}

/// Split `name[unit]` into its parts.
fn split_unit(field: &str) -> (&str, &str) {
    let field = field.trim();
    match (field.find('['), field.strip_suffix(']')) {
        (Some(i), Some(_)) => (field[..i].trim(), &field[i + 1..field.len() - 1]),
        _ => (field, ""),
    }
}

fn scale_for(column: &str, dim: Dimension, unit: &str) -> Result<f64> {
    unit_factor(dim, unit).ok_or_else(|| Error::Column {
        column: column.to_string(),
        msg: format!("unit `{unit}` is not a valid {dim:?} unit"),
    })
}

// ---------------------------------------------------------------- metadata

fn metadata_lines(text: &str) -> Vec<(usize, String, String)> {
    text.lines()
        .enumerate()
        .take_while(|(_, l)| l.trim().is_empty() || l.trim_start().starts_with('#'))
        .filter_map(|(i, l)| {
            let body = l.trim_start().strip_prefix('#')?.trim();
            let (k, v) = body.split_once(':')?;
            Some((i + 1, k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

struct Header {
    entries: Vec<(usize, String, String)>,
    origin: String,
}

impl Header {
    fn find(&self, key: &str) -> Option<(usize, &str, &str)> {
        self.entries.iter().find_map(|(line, k, v)| {
            let (name, unit) = split_unit(k);
            (name == key).then_some((*line, unit, v.as_str()))
        })
    }

    fn parse_err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.origin.clone(),
            line: line as u64,
            msg,
        }
    }

    fn number(&self, key: &str, dim: Dimension) -> Result<Option<f64>> {
        let Some((line, unit, value)) = self.find(key) else {
            return Ok(None);
        };
        let scale = scale_for(key, dim, unit)?;
        let v: f64 = value
            .parse()
            .map_err(|_| self.parse_err(line, format!("`{key}`: `{value}` is not a number")))?;
        Ok(Some(v * scale))
    }

    fn required(&self, key: &str, dim: Dimension) -> Result<f64> {
        self.number(key, dim)?
            .ok_or_else(|| self.parse_err(1, format!("missing metadata `# {key}: ...`")))
    }

    fn text(&self, key: &str) -> Option<String> {
        self.find(key).map(|(_, _, v)| v.to_string())
    }

    fn check_version(&self) -> Result<()> {
        let (line, _, v) = self
            .find("format_version")
            .ok_or_else(|| self.parse_err(1, "missing `# format_version: N`".into()))?;
        match v.parse::<u32>() {
            Ok(FORMAT_VERSION) => Ok(()),
            _ => Err(self.parse_err(
                line,
                format!("format_version `{v}` is not supported (expected {FORMAT_VERSION})"),
            )),
        }
    }
}

/// Version, hash and seed lines written at the top of every output file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub options_hash: Option<String>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn of_report(r: &AnalysisReport) -> Self {
        Provenance {
            config_hash: r.run_config_hash.clone(),
            options_hash: Some(r.options_hash.clone()),
            seed: r.seed,
        }
    }

    fn header(&self) -> String {
        let mut s = format!("# format_version: {FORMAT_VERSION}\n# tool_version: {TOOL_VERSION}\n");
        s += &format!(
            "# config_hash: {}\n",
            self.config_hash.as_deref().unwrap_or("none")
        );
        if let Some(h) = &self.options_hash {
            s += &format!("# options_hash: {h}\n");
        }
        match self.seed {
            Some(seed) => s += &format!("# seed: {seed}\n"),
            None => s += "# seed: none\n",
        }
        s
    }
}

fn opt_seed(h: &Header) -> Result<Option<u64>> {
    match h.find("seed") {
        None => Ok(None),
        Some((_, _, "none")) => Ok(None),
        Some((line, _, v)) => v
            .parse()
            .map(Some)
            .map_err(|_| h.parse_err(line, format!("seed `{v}` is not an integer"))),
    }
}

fn opt_hash(h: &Header) -> Option<String> {
    h.text("config_hash").filter(|s| s != "none")
}

// --------------------------------------------------------------------- run

const RUN_COLUMNS: [(&str, Dimension); 7] = [
    ("kind", Dimension::None),
    ("V_pzt", Dimension::Voltage),
    ("V_bias", Dimension::Voltage),
    ("nu_m", Dimension::Frequency),
    ("t", Dimension::Time),
    ("C", Dimension::Capacitance),
    ("x", Dimension::Length),
];

struct ColumnMap {
    index: [Option<usize>; 7],
    scale: [f64; 7],
}

fn map_columns(headers: &csv::StringRecord, known: &[(&str, Dimension)]) -> Result<ColumnMap> {
    let mut index = [None; 7];
    let mut scale = [1.0; 7];
    for (i, field) in headers.iter().enumerate() {
        let (name, unit) = split_unit(field);
        let k = known
            .iter()
            .position(|(n, _)| *n == name)
            .ok_or_else(|| Error::Column {
                column: name.to_string(),
                msg: "unknown column".into(),
            })?;
        if index[k].is_some() {
            return Err(Error::Column {
                column: name.to_string(),
                msg: "duplicate column".into(),
            });
        }
        index[k] = Some(i);
        scale[k] = scale_for(name, known[k].1, unit)?;
    }
    Ok(ColumnMap { index, scale })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(text.as_bytes())
}

fn csv_error(origin: &str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: origin.to_string(),
        line,
        msg: e.to_string(),
    }
}

/// Parse run CSV text. `origin` names the source in error messages.
pub fn parse_run_csv(text: &str, origin: &str) -> Result<RunDataset> {
    let header = Header {
        entries: metadata_lines(text),
        origin: origin.to_string(),
    };
    header.check_version()?;
    let metadata = RunMetadata {
        format_version: FORMAT_VERSION,
        tool_version: header.text("tool_version").unwrap_or_default(),
        radius: header.required("radius", Dimension::Length)?,
        beta: header.required("beta", Dimension::Actuation)?,
        m_eff: header.number("m_eff", Dimension::Mass)?,
        temperature: header.number("temperature", Dimension::Temperature)?,
        seed: opt_seed(&header)?,
        config_hash: opt_hash(&header),
    };

    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
    let cols = map_columns(&headers, &RUN_COLUMNS)?;
    for (k, name) in [(1, "V_pzt"), (2, "V_bias"), (3, "nu_m")] {
        if cols.index[k].is_none() {
            return Err(Error::Column {
                column: name.to_string(),
                msg: "required column is missing".into(),
            });
        }
    }

    let mut samples = Vec::new();
    let mut caps = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(origin, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let perr = |msg: String| Error::Parse {
            path: origin.to_string(),
            line,
            msg,
        };
        let field = |k: usize| {
            cols.index[k]
                .and_then(|i| rec.get(i))
                .filter(|s| !s.is_empty())
        };
        let number = |k: usize| -> Result<Option<f64>> {
            match field(k) {
                None => Ok(None),
                Some(s) => s
                    .parse::<f64>()
                    .map(|v| Some(v * cols.scale[k]))
                    .map_err(|_| perr(format!("{}: `{s}` is not a number", RUN_COLUMNS[k].0))),
            }
        };
        let need = |k: usize| -> Result<f64> {
            number(k)?.ok_or_else(|| perr(format!("{} is empty", RUN_COLUMNS[k].0)))
        };
        let v_pzt = need(1)?;
        let v_bias = number(2)?;
        let t = number(4)?.unwrap_or(row as f64);
        let x_true = number(6)?;
        let kind = match field(0) {
            Some("sweep") => "sweep",
            Some("ref") => "ref",
            Some("cap") => "cap",
            Some(other) => return Err(perr(format!("kind `{other}` is not sweep, ref or cap"))),
            None if v_bias.is_some() => "sweep",
            None => "ref",
        };
        match kind {
            "cap" => caps.push(CapacitanceSample {
                v_pzt,
                c: need(5)?,
                t,
                x_true,
            }),
            _ => {
                let kind = if kind == "sweep" {
                    SampleKind::Sweep
                } else {
                    SampleKind::Reference
                };
                if kind == SampleKind::Sweep && v_bias.is_none() {
                    return Err(perr("V_bias is empty on a sweep row".into()));
                }
                samples.push(FrequencySample {
                    kind,
                    v_pzt,
                    v_bias: if kind == SampleKind::Sweep {
                        v_bias
                    } else {
                        None
                    },
                    nu_m: need(3)?,
                    t,
                    x_true,
                });
            }
        }
    }
    Ok(RunDataset {
        samples,
        capacitance_samples: caps,
        metadata,
    })
}

pub fn load_run_csv(path: &Path) -> Result<RunDataset> {
    parse_run_csv(&read_text(path)?, &path.display().to_string())
}

/// Shortest round-trip text of a float, in exponent form outside
/// [1e-3, 1e6).
#[derive(Debug, Clone, Copy)]
pub struct Num(pub f64);

impl std::fmt::Display for Num {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let a = self.0.abs();
        if a == 0.0 || !a.is_finite() || (1e-3..1e6).contains(&a) {
            write!(f, "{}", self.0)
        } else {
            write!(f, "{:e}", self.0)
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| Num(v).to_string()).unwrap_or_default()
}

/// Run CSV text in SI units, so that write and load round-trip exactly.
pub fn format_run_csv(run: &RunDataset) -> String {
    let m = &run.metadata;
    let mut s = Provenance {
        config_hash: m.config_hash.clone(),
        options_hash: None,
        seed: m.seed,
    }
    .header();
    s += &format!(
        "# radius[m]: {}\n# beta[m/V]: {}\n",
        Num(m.radius),
        Num(m.beta)
    );
    if let Some(v) = m.m_eff {
        s += &format!("# m_eff[kg]: {}\n", Num(v));
    }
    if let Some(v) = m.temperature {
        s += &format!("# temperature[K]: {}\n", Num(v));
    }
    s += "kind,V_pzt[V],V_bias[V],nu_m[Hz],t[s],C[F],x[m]\n";
    for p in &run.samples {
        let kind = match p.kind {
            SampleKind::Sweep => "sweep",
            SampleKind::Reference => "ref",
        };
        s += &format!(
            "{kind},{},{},{},{},,{}\n",
            Num(p.v_pzt),
            opt(p.v_bias),
            Num(p.nu_m),
            Num(p.t),
            opt(p.x_true)
        );
    }
    for c in &run.capacitance_samples {
        s += &format!(
            "cap,{},,,{},{},{}\n",
            Num(c.v_pzt),
            Num(c.t),
            Num(c.c),
            opt(c.x_true)
        );
    }
    s
}

pub fn write_run_csv(run: &RunDataset, path: &Path) -> Result<()> {
    write_text(path, &format_run_csv(run))
}

// ------------------------------------------------------- calibration table

/// Per-distance calibration summary, the input of a stability scan.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    pub beta: f64,
    pub provenance: Provenance,
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRow {
    pub v_pzt: f64,
    pub k_el: f64,
    pub k_el_sigma: f64,
    pub v0: f64,
    pub v0_sigma: f64,
    pub nu0_sq: f64,
    pub nu0_sq_sigma: f64,
    pub chi2_red: f64,
}

const CAL_COLUMNS: [(&str, Dimension); 8] = [
    ("V_pzt", Dimension::Voltage),
    ("K_el", Dimension::Exact("Hz2/V2")),
    ("sigma_K_el", Dimension::Exact("Hz2/V2")),
    ("V0", Dimension::Voltage),
    ("sigma_V0", Dimension::Voltage),
    ("nu0_sq", Dimension::Exact("Hz2")),
    ("sigma_nu0_sq", Dimension::Exact("Hz2")),
    ("chi2_red", Dimension::None),
];

impl CalibrationTable {
    pub fn from_calibration(cal: &Calibration, beta: f64, provenance: Provenance) -> Self {
        CalibrationTable {
            beta,
            provenance,
            rows: cal
                .distances
                .iter()
                .map(|d| {
                    let f = &d.parabola.fit;
                    let p = &d.parabola.parabola;
                    CalibrationRow {
                        v_pzt: d.v_pzt,
                        k_el: p.k_el,
                        k_el_sigma: f.sigma("k_el"),
                        v0: p.v0,
                        v0_sigma: f.sigma("v0"),
                        nu0_sq: p.nu0_sq,
                        nu0_sq_sigma: f.sigma("nu0_sq"),
                        chi2_red: f.chi2_red,
                    }
                })
                .collect(),
        }
    }

    /// (V_PZT, K_el, σ) with the fit σ combined with a relative floor.
    pub fn curvature_points(&self, rel_sigma: f64) -> Vec<DataPoint> {
        self.rows
            .iter()
            .map(|r| DataPoint::new(r.v_pzt, r.k_el, r.k_el_sigma.hypot(rel_sigma * r.k_el)))
            .collect()
    }

    pub fn format(&self) -> String {
        let mut s = self.provenance.header();
        s += &format!("# beta[m/V]: {}\n", Num(self.beta));
        s += "V_pzt[V],K_el[Hz2/V2],sigma_K_el[Hz2/V2],V0[V],sigma_V0[V],nu0_sq[Hz2],sigma_nu0_sq[Hz2],chi2_red\n";
        for r in &self.rows {
            s += &format!(
                "{},{},{},{},{},{},{},{}\n",
                Num(r.v_pzt),
                Num(r.k_el),
                Num(r.k_el_sigma),
                Num(r.v0),
                Num(r.v0_sigma),
                Num(r.nu0_sq),
                Num(r.nu0_sq_sigma),
                Num(r.chi2_red)
            );
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let header = Header {
            entries: metadata_lines(text),
            origin: origin.to_string(),
        };
        header.check_version()?;
        let beta = header.required("beta", Dimension::Actuation)?;
        let provenance = Provenance {
            config_hash: opt_hash(&header),
            options_hash: header.text("options_hash"),
            seed: opt_seed(&header)?,
        };
        let mut rdr = csv_reader(text);
        let headers = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
        let mut index = [None; 8];
        let mut scale = [1.0; 8];
        for (i, field) in headers.iter().enumerate() {
            let (name, unit) = split_unit(field);
            let k = CAL_COLUMNS
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| Error::Column {
                    column: name.to_string(),
                    msg: "unknown column".into(),
                })?;
            index[k] = Some(i);
            scale[k] = scale_for(name, CAL_COLUMNS[k].1, unit)?;
        }
        if let Some(k) = index.iter().position(Option::is_none) {
            return Err(Error::Column {
                column: CAL_COLUMNS[k].0.to_string(),
                msg: "required column is missing".into(),
            });
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_error(origin, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let mut v = [0.0; 8];
            for k in 0..8 {
                let s = rec.get(index[k].expect("checked")).unwrap_or("");
                v[k] = s.parse::<f64>().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("{}: `{s}` is not a number", CAL_COLUMNS[k].0),
                })? * scale[k];
            }
            rows.push(CalibrationRow {
                v_pzt: v[0],
                k_el: v[1],
                k_el_sigma: v[2],
                v0: v[3],
                v0_sigma: v[4],
                nu0_sq: v[5],
                nu0_sq_sigma: v[6],
                chi2_red: v[7],
            });
        }
        Ok(CalibrationTable {
            beta,
            provenance,
            rows,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.format())
    }
}

/// True when the text declares calibration-table columns rather than a run.
pub fn is_calibration_table(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split(',').any(|f| split_unit(f).0 == "K_el"))
}

/// One row per scan step: fitted parameters or the failure reason.
pub fn format_stability_table(scan: &StabilityScan, provenance: &Provenance) -> String {
    let mut s = provenance.header();
    s += &format!("# mode: {:?}\n", scan.mode);
    s += "n_points,closest_V_pzt[V],alpha,sigma_alpha,v0_pzt[V],sigma_v0_pzt[V],e,sigma_e,x0[m],chi2_red,status\n";
    for step in &scan.steps {
        match &step.outcome {
            ScanOutcome::Ok { fit } => {
                let m = &fit.model;
                let se = fit.fit.param("e").map_or(0.0, |p| p.sigma);
                s += &format!(
                    "{},{},{},{},{},{},{},{},{},{},ok\n",
                    step.n_points,
                    Num(step.closest_v_pzt),
                    Num(m.alpha),
                    Num(fit.fit.sigma("alpha")),
                    Num(m.v0_pzt),
                    Num(fit.fit.sigma("v0_pzt")),
                    Num(m.e),
                    Num(se),
                    Num(m.x0),
                    Num(fit.fit.chi2_red)
                );
            }
            ScanOutcome::Failed { reason } => {
                s += &format!(
                    "{},{},,,,,,,,,\"failed: {}\"\n",
                    step.n_points,
                    Num(step.closest_v_pzt),
                    reason.replace('"', "'")
                );
            }
        }
    }
    s
}

// ------------------------------------------------------------------ report

/// Numeric table: `# provenance`, extra `# key: value` lines, a header, then
/// rows.
pub fn format_table<R: AsRef<[f64]>>(
    columns: &[&str],
    rows: &[R],
    meta: &[(&str, String)],
    provenance: &Provenance,
) -> String {
    let mut s = provenance.header();
    for (k, v) in meta {
        s += &format!("# {k}: {v}\n");
    }
    s += &columns.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.as_ref().iter().map(|v| Num(*v).to_string()).collect();
        s += &cells.join(",");
        s.push('\n');
    }
    s
}

/// Two-column series file: `# provenance`, a header, then rows.
pub fn format_series(columns: [&str; 2], rows: &[[f64; 2]], provenance: &Provenance) -> String {
    format_table(&columns, rows, &[], provenance)
}

/// Parse a two-column series file back into rows.
pub fn parse_series(text: &str, origin: &str) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv_reader(text);
    let headers = rdr.headers().map_err(|e| csv_error(origin, e))?.clone();
    if headers.len() != 2 {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            msg: format!("expected 2 columns, found {}", headers.len()),
        });
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(origin, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let num = |i: usize| {
                rec[i].parse::<f64>().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line,
                    msg: format!("`{}` is not a number", &rec[i]),
                })
            };
            Ok([num(0)?, num(1)?])
        })
        .collect()
}

/// Plot-ready series derived from a report, keyed by file stem.
pub fn report_series(report: &AnalysisReport) -> Vec<(String, [&'static str; 2], Vec<[f64; 2]>)> {
    let mut out: Vec<(String, [&'static str; 2], Vec<[f64; 2]>)> = Vec::new();
    for (i, d) in report.calibration.iter().enumerate() {
        out.push((
            format!("bias_sweep_{i:02}"),
            ["V_bias[V]", "nu_sq[Hz2]"],
            d.samples.clone(),
        ));
    }
    out.push((
        "k_el_vs_v_pzt".into(),
        ["V_pzt[V]", "K_el[Hz2/V2]"],
        report
            .calibration
            .iter()
            .map(|d| [d.v_pzt, d.parabola.parabola.k_el])
            .collect(),
    ));
    out.push((
        "v0_vs_v_pzt".into(),
        ["V_pzt[V]", "V0[V]"],
        report
            .calibration
            .iter()
            .map(|d| [d.v_pzt, d.parabola.parabola.v0])
            .collect(),
    ));
    for (name, stage) in [
        ("fixed", &report.power_law_fixed),
        ("free", &report.power_law_free),
    ] {
        if let Some(fit) = stage.value() {
            out.push((
                format!("k_el_fit_{name}"),
                ["V_pzt[V]", "K_el[Hz2/V2]"],
                report
                    .calibration
                    .iter()
                    .map(|d| [d.v_pzt, fit.model.k_el(d.v_pzt)])
                    .collect(),
            ));
        }
    }
    if let Some(rows) = report.distances.value() {
        for (name, pick) in [("fixed", 0usize), ("free", 1)] {
            let pts: Vec<[f64; 2]> = rows
                .iter()
                .filter_map(|r| if pick == 0 { r.fixed } else { r.free })
                .map(|e| [e.x_asymptote, e.x_curvature])
                .collect();
            if !pts.is_empty() {
                out.push((
                    format!("distance_{name}"),
                    ["x_asymptote[m]", "x_curvature[m]"],
                    pts,
                ));
            }
        }
        out.push((
            "v0_vs_x".into(),
            ["x[m]", "V0[V]"],
            rows.iter()
                .zip(&report.calibration)
                .map(|(r, d)| [r.x, d.parabola.parabola.v0])
                .collect(),
        ));
    }
    for (name, stage) in [
        ("fixed", &report.stability_fixed),
        ("free", &report.stability_free),
    ] {
        if let Some(scan) = stage.value() {
            let traj = |f: &dyn Fn(&crate::fitting::PowerLawFit) -> f64| -> Vec<[f64; 2]> {
                scan.steps
                    .iter()
                    .filter_map(|s| match &s.outcome {
                        ScanOutcome::Ok { fit } => Some([
                            fit.model.beta * (fit.model.v0_pzt - s.closest_v_pzt),
                            f(fit),
                        ]),
                        ScanOutcome::Failed { .. } => None,
                    })
                    .collect()
            };
            out.push((
                format!("stability_alpha_{name}"),
                ["x_closest[m]", "alpha"],
                traj(&|f| f.model.alpha),
            ));
            out.push((
                format!("stability_offset_{name}"),
                ["x_closest[m]", "beta_v0_pzt[m]"],
                traj(&|f| f.model.beta * f.model.v0_pzt),
            ));
            if name == "free" {
                out.push((
                    "stability_exponent_free".into(),
                    ["x_closest[m]", "e"],
                    traj(&|f| f.model.e),
                ));
            }
        }
    }
    for b in &report.branches {
        let l = b.form.label();
        if let Some(ode) = b.ode.as_ref().and_then(Stage::value) {
            out.push((
                format!("vc_{l}"),
                ["x[m]", "Vc[V]"],
                ode.nodes.iter().map(|n| [n[0], n[1]]).collect(),
            ));
        }
        if let Some(rows) = b.residuals.as_ref().and_then(Stage::value) {
            out.push((
                format!("residual_raw_{l}"),
                ["x[m]", "nu_sq[Hz2]"],
                rows.iter().map(|r| [r.x, r.nu0_sq]).collect(),
            ));
            out.push((
                format!("residual_{l}"),
                ["x[m]", "nu_sq[Hz2]"],
                rows.iter().map(|r| [r.x, r.corrected]).collect(),
            ));
            if let Some(fit) = b.casimir.as_ref().and_then(Stage::value) {
                out.push((
                    format!("casimir_fit_{l}"),
                    ["x[m]", "nu_sq[Hz2]"],
                    rows.iter()
                        .map(|r| [r.x, fit.nu_p_sq - fit.k_cas / r.x.powi(4)])
                        .collect(),
                ));
            }
        }
        if let Some(curve) = b.lifshitz_overlay.as_ref().and_then(Stage::value) {
            out.push((
                format!("lifshitz_{l}"),
                ["x[m]", "nu_sq[Hz2]"],
                curve.clone(),
            ));
        }
    }
    out
}

/// Write `report.json` and one sidecar per series into `dir`. Returns the
/// paths written.
pub fn write_report(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Serde(e.to_string()))?;
    let main = dir.join("report.json");
    write_text(&main, &json)?;
    let prov = Provenance::of_report(report);
    let mut written = vec![main];
    for (stem, cols, rows) in report_series(report) {
        let path = dir.join("series").join(format!("{stem}.csv"));
        write_text(&path, &format_series(cols, &rows, &prov))?;
        written.push(path);
    }
    Ok(written)
}

pub fn read_report(path: &Path) -> Result<AnalysisReport> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

// ------------------------------------------------------------------ config

pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_toml(&read_text(path)?, &path.display().to_string())
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))
}
