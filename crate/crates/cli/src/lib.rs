//! Experiment runner: config files, verbs, CSV/JSON reports.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use complex_time::counterexample::{
    lower_bound_experiment, BudgetPolicy, ExperimentConfig, LowerBoundReport,
};
use complex_time::maximal::{
    maximal_ratio, sweep_with, theoretical_exponent, BoundKind, Family, Grids, ScalingEntry,
    ScalingReport, SpaceGrid, TimeGrid,
};
use complex_time::numbertheory::{
    abel_sum_identity, dirichlet_simultaneous, gauss_law_exhaustive, vitali_scaled_union,
    weyl_calibration, Cube, CubeFamily,
};
use complex_time::profiles::{Constants, CounterexampleParams, ModelParams};
use complex_time::propagator::{
    coefficient_decay_slope, evaluate_p_gamma, factorized_evaluate, SpaceTimePoint,
    DEFAULT_SPLIT_EPS,
};
use complex_time::C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Parse(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn parse_err(key: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("{key}: {why}"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    MaximalSweep,
    Counterexample,
    LemmasVerify,
    PropagatorCheck,
}

impl Verb {
    pub fn name(&self) -> &'static str {
        match self {
            Verb::MaximalSweep => "maximal-sweep",
            Verb::Counterexample => "counterexample",
            Verb::LemmasVerify => "lemmas-verify",
            Verb::PropagatorCheck => "propagator-check",
        }
    }
}

/// Recognized config keys. Sections are dotted prefixes.
pub const KEYS: &[&str] = &[
    "model.d",
    "model.gamma",
    "model.s",
    "model.R",
    "ladder",
    "seed",
    "workers",
    "out",
    "family",
    "grids.t_max",
    "grids.radius",
    "grids.space_count",
    "samples",
    "budget",
    "ce.c0",
    "ce.c1",
    "ce.c2",
    "ce.c3",
    "ce.c4",
    "ce.delta0",
    "ce.eps0",
    "ce.c_delta0",
    "check.points",
    "lemmas.q_max",
];

/// Parsed `key = value` settings; later assignments override earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    /// Lines are `key = value`; `#` starts a comment; `[section]` headers
    /// prefix the following keys.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut out = Settings::default();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Parse(format!(
                    "line {}: expected `key = value`",
                    n + 1
                )));
            };
            let key = if section.is_empty() {
                k.trim().to_string()
            } else {
                format!("{section}.{}", k.trim())
            };
            out.set(&key, v.trim()).map_err(|e| match e {
                CliError::Parse(m) => CliError::Parse(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(out)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.contains(&key) {
            return Err(parse_err(key, "unknown key"));
        }
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| parse_err(key, format!("`{v}`: {e}")))
            })
            .transpose()
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        Ok(self.num::<f64>(key)?.unwrap_or(default))
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.num(key)?.ok_or_else(|| parse_err(key, "required"))
    }

    /// Settings that can affect results; `out` and `workers` cannot.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut m = self.map.clone();
        m.remove("out");
        m.remove("workers");
        m
    }
}

/// `2^16, 65536, 1.5e5` style lists.
pub fn parse_ladder(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let v = match tok.split_once('^') {
                Some((b, e)) => {
                    let b: f64 = b
                        .trim()
                        .parse()
                        .map_err(|_| parse_err("ladder", format!("bad entry `{tok}`")))?;
                    let e: f64 = e
                        .trim()
                        .parse()
                        .map_err(|_| parse_err("ladder", format!("bad entry `{tok}`")))?;
                    b.powf(e)
                }
                None => tok
                    .parse()
                    .map_err(|_| parse_err("ladder", format!("bad entry `{tok}`")))?,
            };
            if !(v.is_finite() && v >= 1.0) {
                return Err(parse_err(
                    "ladder",
                    format!("entry `{tok}` must be finite and ≥ 1"),
                ));
            }
            Ok(v)
        })
        .collect()
}

fn model(s: &Settings, r: f64) -> Result<ModelParams, CliError> {
    let d: usize = s.required("model.d")?;
    let gamma: f64 = s.required("model.gamma")?;
    ModelParams::new(d, gamma, r, s.f64_or("model.s", 0.0)?).map_err(|e| parse_err("model", e))
}

fn constants(s: &Settings, d: usize, gamma: f64) -> Result<Option<Constants>, CliError> {
    let keys = [
        "ce.c0",
        "ce.c1",
        "ce.c2",
        "ce.c3",
        "ce.c4",
        "ce.delta0",
        "ce.eps0",
    ];
    if keys.iter().all(|k| s.get(k).is_none()) {
        return Ok(None);
    }
    let mut c = Constants::defaults(d, gamma);
    for (k, slot) in keys.iter().zip([
        &mut c.c0,
        &mut c.c1,
        &mut c.c2,
        &mut c.c3,
        &mut c.c4,
        &mut c.delta0,
        &mut c.eps0,
    ]) {
        if let Some(v) = s.num::<f64>(k)? {
            *slot = v;
        }
    }
    c.validate(d, gamma).map_err(|e| parse_err("ce", e))?;
    Ok(Some(c))
}

/// One CSV cell.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

/// `v` rounded to 12 significant digits, shortest form; exponent notation
/// outside `[1e-6, 1e15)`.
pub fn fmt12(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let rounded: f64 = format!("{v:.11e}").parse().unwrap_or(v);
    let a = rounded.abs();
    if a != 0.0 && !(1e-6..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt12(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(t) => t.clone(),
            Cell::Empty => String::new(),
        }
    }
}

/// Rows of a homogeneous CSV file.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn cells(&self) -> Vec<Cell>;
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(runtime)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(runtime)?;
    tmp.write_all(bytes).map_err(runtime)?;
    tmp.flush().map_err(runtime)?;
    tmp.persist(path).map_err(|e| runtime(e.error))?;
    Ok(())
}

/// Header row plus one row per record, written atomically.
pub fn emit_csv<R: CsvRecord>(path: &Path, records: &[R]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(R::HEADER).map_err(runtime)?;
    for r in records {
        let cells = r.cells();
        if cells.len() != R::HEADER.len() {
            return Err(runtime("record width differs from header"));
        }
        w.write_record(cells.iter().map(Cell::render))
            .map_err(runtime)?;
    }
    let bytes = w.into_inner().map_err(|e| runtime(e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a file written by `emit_csv`: header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::Reader::from_path(path).map_err(runtime)?;
    let header = r
        .headers()
        .map_err(runtime)?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|x| x.iter().map(String::from).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()
        .map_err(runtime)?;
    Ok((header, rows))
}

fn emit_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn opt(v: Option<f64>) -> Cell {
    v.map_or(Cell::Empty, Cell::Num)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub ratio: f64,
    pub slope_running: Option<f64>,
}

impl CsvRecord for SweepRow {
    const HEADER: &'static [&'static str] = &["R", "ratio", "slope_running"];
    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Num(self.r),
            Cell::Num(self.ratio),
            opt(self.slope_running),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CounterexampleRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub mean_modulus: f64,
    pub measure_estimate: f64,
    pub ratio_estimate: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
}

impl CsvRecord for CounterexampleRow {
    const HEADER: &'static [&'static str] = &[
        "R",
        "mean_modulus",
        "measure_estimate",
        "ratio_estimate",
        "E1",
        "E2",
    ];
    fn cells(&self) -> Vec<Cell> {
        [
            self.r,
            self.mean_modulus,
            self.measure_estimate,
            self.ratio_estimate,
            self.e1,
            self.e2,
        ]
        .into_iter()
        .map(Cell::Num)
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LemmaRow {
    pub suite: String,
    pub cases: i64,
    pub passed: bool,
    pub metric: f64,
    pub detail: String,
}

impl CsvRecord for LemmaRow {
    const HEADER: &'static [&'static str] = &["suite", "cases", "passed", "metric", "detail"];
    fn cells(&self) -> Vec<Cell> {
        vec![
            Cell::Text(self.suite.clone()),
            Cell::Int(self.cases),
            Cell::Text(self.passed.to_string()),
            Cell::Num(self.metric),
            Cell::Text(self.detail.clone()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub x1: f64,
    pub x2: f64,
    pub t: f64,
    pub factorized: f64,
    pub direct: f64,
    pub rel_err: f64,
}

impl CsvRecord for CheckRow {
    const HEADER: &'static [&'static str] = &["x1", "x2", "t", "factorized", "direct", "rel_err"];
    fn cells(&self) -> Vec<Cell> {
        [
            self.x1,
            self.x2,
            self.t,
            self.factorized,
            self.direct,
            self.rel_err,
        ]
        .into_iter()
        .map(Cell::Num)
        .collect()
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Records {
    Sweep(ScalingReport),
    Counterexample(LowerBoundReport),
    Lemmas(Vec<LemmaRow>),
    Check(PropagatorCheck),
}

#[derive(Clone, Debug, Serialize)]
pub struct PropagatorCheck {
    #[serde(rename = "R")]
    pub r: f64,
    pub points: Vec<CheckRow>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub torus_decay_raw: f64,
    pub torus_decay_envelope: f64,
}

/// `report.json`. Wall-clock times live in `timing.json` so the report is
/// byte-identical across reruns.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub verb: Verb,
    pub config: BTreeMap<String, String>,
    pub verdict: bool,
    pub result: Records,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub entries: Vec<(String, f64)>,
}

pub struct RunOutcome {
    pub report: RunReport,
    pub out_dir: PathBuf,
}

pub fn run(verb: Verb, settings: &Settings) -> Result<RunOutcome, CliError> {
    let workers: usize = settings.num("workers")?.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(runtime)?;
    let out_dir = PathBuf::from(settings.get("out").unwrap_or("out"));
    let start = Instant::now();
    let mut timing = Vec::new();
    let (verdict, result) = pool.install(|| -> Result<(bool, Records), CliError> {
        Ok(match verb {
            Verb::MaximalSweep => {
                let rep = maximal_sweep(settings, &mut timing)?;
                (rep.verdict, Records::Sweep(rep))
            }
            Verb::Counterexample => {
                let rep = counterexample(settings, &mut timing)?;
                let ok = rep.failure.is_none()
                    && rep.ratio_slope >= rep.ratio_target - rep.tolerance
                    && (rep.modulus_slope - rep.modulus_target).abs() <= rep.tolerance;
                (ok, Records::Counterexample(rep))
            }
            Verb::LemmasVerify => {
                let rows = lemmas_verify(settings, &mut timing)?;
                (rows.iter().all(|r| r.passed), Records::Lemmas(rows))
            }
            Verb::PropagatorCheck => {
                let chk = propagator_check(settings, &mut timing)?;
                (chk.max_rel_err <= chk.tolerance, Records::Check(chk))
            }
        })
    })?;
    let csv_path = out_dir.join("records.csv");
    match &result {
        Records::Sweep(rep) => {
            let rows: Vec<SweepRow> = rep
                .csv_rows()
                .into_iter()
                .map(|r| SweepRow {
                    r: r.r,
                    ratio: r.ratio,
                    slope_running: r.slope_running,
                })
                .collect();
            emit_csv(&csv_path, &rows)?
        }
        Records::Counterexample(rep) => {
            let rows: Vec<CounterexampleRow> = rep
                .records
                .iter()
                .map(|r| CounterexampleRow {
                    r: r.r,
                    mean_modulus: r.mean_modulus,
                    measure_estimate: r.measure_estimate,
                    ratio_estimate: r.ratio_estimate,
                    e1: r.e1,
                    e2: r.e2,
                })
                .collect();
            emit_csv(&csv_path, &rows)?
        }
        Records::Lemmas(rows) => emit_csv(&csv_path, rows)?,
        Records::Check(chk) => emit_csv(&csv_path, &chk.points)?,
    }
    let report = RunReport {
        verb,
        config: settings.echo(),
        verdict,
        result,
    };
    emit_json(&out_dir.join("report.json"), &report)?;
    emit_json(
        &out_dir.join("timing.json"),
        &Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            entries: timing,
        },
    )?;
    Ok(RunOutcome { report, out_dir })
}

fn ladder(s: &Settings) -> Result<Vec<f64>, CliError> {
    parse_ladder(
        s.get("ladder")
            .ok_or_else(|| parse_err("ladder", "required"))?,
    )
}

fn maximal_sweep(s: &Settings, timing: &mut Vec<(String, f64)>) -> Result<ScalingReport, CliError> {
    let rs = ladder(s)?;
    let m = model(s, rs[0])?;
    let family = match s.get("family").unwrap_or("case1") {
        "case1" => Family::Case1,
        "annulus" => Family::Annulus,
        other => {
            return Err(parse_err(
                "family",
                format!("`{other}` is not case1 or annulus"),
            ))
        }
    };
    theoretical_exponent(m.d, m.gamma).map_err(|e| parse_err("model", e))?;
    let t_max = s.f64_or("grids.t_max", 1.0)?;
    let radius = s.f64_or("grids.radius", 1.0)?;
    let count: usize = s.num("grids.space_count")?.unwrap_or(128);
    let grids = |r: f64| -> complex_time::Result<Grids> {
        Ok(Grids {
            time: TimeGrid::hybrid(r, t_max)?,
            space: SpaceGrid::new(radius, count)?,
        })
    };
    grids(rs[0]).map_err(|e| parse_err("grids", e))?;
    sweep_with(family.name(), m.d, m.gamma, BoundKind::Upper, &rs, |r| {
        let t0 = Instant::now();
        let g = grids(r)?;
        let f = family.descriptor(m.d, r)?;
        let entry = ScalingEntry {
            r,
            ratio: maximal_ratio(&f, m.gamma, &g)?,
            time_points: g.time.points().len(),
            space_count: g.space.count,
        };
        timing.push((format!("R={r}"), t0.elapsed().as_secs_f64()));
        Ok(entry)
    })
    .map_err(|e| match e {
        complex_time::Error::Ladder(_) => parse_err("ladder", e),
        other => runtime(other),
    })
}

fn counterexample(
    s: &Settings,
    timing: &mut Vec<(String, f64)>,
) -> Result<LowerBoundReport, CliError> {
    let rs = ladder(s)?;
    let m = model(s, rs[0])?;
    let budget = match s.get("budget").unwrap_or("record") {
        "record" => BudgetPolicy::Record,
        "abort" => BudgetPolicy::Abort,
        other => {
            return Err(parse_err(
                "budget",
                format!("`{other}` is not record or abort"),
            ))
        }
    };
    let gamma_data = m.gamma.min(2.0);
    let cfg = ExperimentConfig {
        d: m.d,
        gamma: m.gamma,
        s: m.s,
        ladder: rs,
        n_samples: s.num("samples")?.unwrap_or(10_000),
        seed: s.num("seed")?.unwrap_or(0),
        constants: constants(s, m.d, gamma_data)?,
        c_delta0: s.num("ce.c_delta0")?,
        budget,
    };
    complex_time::maximal::validate_ladder(&cfg.ladder).map_err(|e| parse_err("ladder", e))?;
    for &r in &cfg.ladder {
        let model =
            ModelParams::new(cfg.d, gamma_data, r, cfg.s).map_err(|e| parse_err("model", e))?;
        CounterexampleParams::new(
            model,
            cfg.constants
                .unwrap_or_else(|| Constants::defaults(cfg.d, gamma_data)),
        )
        .map_err(|e| parse_err("model", e))?;
    }
    let t0 = Instant::now();
    let rep = lower_bound_experiment(&cfg).map_err(runtime)?;
    timing.push(("experiment".into(), t0.elapsed().as_secs_f64()));
    Ok(rep)
}

fn lemmas_verify(s: &Settings, timing: &mut Vec<(String, f64)>) -> Result<Vec<LemmaRow>, CliError> {
    let q_max: u64 = s.num("lemmas.q_max")?.unwrap_or(64);
    if q_max < 4 {
        return Err(parse_err("lemmas.q_max", "must be at least 4"));
    }
    let seed: u64 = s.num("seed")?.unwrap_or(0);
    let mut rows = Vec::new();
    let mut timed =
        |name: &str, f: &mut dyn FnMut() -> Result<LemmaRow, CliError>| -> Result<(), CliError> {
            let t0 = Instant::now();
            let row = f()?;
            timing.push((name.to_string(), t0.elapsed().as_secs_f64()));
            rows.push(row);
            Ok(())
        };

    timed("gauss", &mut || {
        let g = gauss_law_exhaustive(q_max);
        Ok(LemmaRow {
            suite: "gauss-sum-law".into(),
            cases: g.cases as i64,
            passed: g.failures == 0,
            metric: g.max_deviation,
            detail: format!("q ≤ {q_max}, q ≡ 0 mod 4; metric = max deviation"),
        })
    })?;
    timed("weyl", &mut || {
        let short = weyl_calibration(q_max.min(32), 128).map_err(runtime)?;
        let long = weyl_calibration(q_max.min(32), 1024).map_err(runtime)?;
        Ok(LemmaRow {
            suite: "weyl-sum-shape".into(),
            cases: 2,
            passed: long.rho_star < 2.0 * short.rho_star,
            metric: long.rho_star / short.rho_star,
            detail: "metric = ρ*(N ≤ 1024) / ρ*(N ≤ 128)".into(),
        })
    })?;
    timed("abel", &mut || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let n = rng.gen_range(1..200);
            let m = rng.gen_range(-100..100);
            let a: Vec<C64> = (0..n)
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let k = rng.gen_range(-1.0..1.0);
            let sides = abel_sum_identity(&a, |u| C64::from_polar(1.0 / (1.0 + u * u), k * u), m)
                .map_err(runtime)?;
            worst = worst.max((sides.lhs - sides.rhs).norm());
        }
        Ok(LemmaRow {
            suite: "abel-identity".into(),
            cases: 500,
            passed: worst <= 1e-12,
            metric: worst,
            detail: "metric = max |lhs − rhs|".into(),
        })
    })?;
    timed("vitali", &mut || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut fails = 0;
        let mut tight = f64::INFINITY;
        for i in 0..300 {
            let k = 1 + i % 2;
            let cubes = (0..rng.gen_range(1..16))
                .map(|_| Cube {
                    center: (0..k).map(|_| rng.gen_range(0.0..5.0)).collect(),
                    side: rng.gen_range(0.05..2.0),
                })
                .collect();
            let out = vitali_scaled_union(&CubeFamily {
                cubes,
                c: rng.gen_range(0.01..0.99),
            })
            .map_err(runtime)?;
            fails += usize::from(!out.holds);
            tight = tight.min(out.scaled_union_measure / out.bound);
        }
        Ok(LemmaRow {
            suite: "vitali-covering".into(),
            cases: 300,
            passed: fails == 0,
            metric: tight,
            detail: "metric = min scaled union / bound".into(),
        })
    })?;
    timed("dirichlet", &mut || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1c);
        let cap = 64.0;
        let mut worst: f64 = 0.0;
        for _ in 0..500 {
            let target: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..TAU)).collect();
            let ap = dirichlet_simultaneous(&target, cap).map_err(runtime)?;
            let q = ap.q as f64;
            if q > cap {
                worst = f64::INFINITY;
            }
            for (t, a) in target.iter().zip(&ap.a) {
                worst = worst.max((q * t - TAU * *a as f64).abs() * cap.sqrt() / TAU);
            }
        }
        Ok(LemmaRow {
            suite: "dirichlet-approximation".into(),
            cases: 500,
            passed: worst <= 1.0 + 1e-9,
            metric: worst,
            detail: "d − 1 = 2, Q = 64; metric = max |qθ − 2πa|·Q^{1/2}/(2π)".into(),
        })
    })?;
    Ok(rows)
}

fn propagator_check(
    s: &Settings,
    timing: &mut Vec<(String, f64)>,
) -> Result<PropagatorCheck, CliError> {
    let r: f64 = s.num("model.R")?.unwrap_or(256.0);
    let points: usize = s.num("check.points")?.unwrap_or(5);
    let seed: u64 = s.num("seed")?.unwrap_or(0);
    let model = ModelParams::new(2, 2.0, r, 0.0).map_err(|e| parse_err("model.R", e))?;
    let cp = CounterexampleParams::with_defaults(model).map_err(|e| parse_err("model.R", e))?;
    let f = cp.descriptor().map_err(runtime)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = cp.x1_window();
    let c1 = cp.constants.c1;
    let tau = cp.constants.c2 * r.powf(-1.5);
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let t0 = Instant::now();
        let x1 = rng.gen_range(lo..hi);
        let x2 = rng.gen_range(-c1..c1);
        let t = -x1 / (2.0 * cp.comb.height) + rng.gen_range(-tau..tau);
        let p = SpaceTimePoint::new(vec![x1, x2], t).map_err(runtime)?;
        let factorized = factorized_evaluate(&cp, &p)
            .map_err(runtime)?
            .product_modulus;
        let direct = evaluate_p_gamma(&f, 2.0, &p).map_err(runtime)?.norm()
            * (2.0 * std::f64::consts::PI).powi(2);
        rows.push(CheckRow {
            x1,
            x2,
            t,
            factorized,
            direct,
            rel_err: (factorized - direct).abs() / direct,
        });
        timing.push((format!("point {i}"), t0.elapsed().as_secs_f64()));
    }
    let (tr, tg) = (32.0f64, 1.5);
    let decay = coefficient_decay_slope(2, tr.powf(-2.0 / tg + DEFAULT_SPLIT_EPS), tr, tg, 64)
        .map_err(runtime)?;
    Ok(PropagatorCheck {
        r,
        max_rel_err: rows.iter().map(|p| p.rel_err).fold(0.0, f64::max),
        points: rows,
        tolerance: 1e-4,
        torus_decay_raw: decay.raw,
        torus_decay_envelope: decay.envelope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_sections_and_comments() {
        let s =
            Settings::parse("seed = 3 # trailing\n[model]\nd = 2\ngamma=1.5\n\n[ce]\nc1 = 0.01\n")
                .unwrap();
        assert_eq!(s.get("seed"), Some("3"));
        assert_eq!(s.get("model.d"), Some("2"));
        assert_eq!(s.get("model.gamma"), Some("1.5"));
        assert_eq!(s.get("ce.c1"), Some("0.01"));
    }

    #[test]
    fn unknown_and_malformed_lines() {
        let e = Settings::parse("model.dim = 2").unwrap_err();
        assert!(e.to_string().contains("model.dim"), "{e}");
        assert_eq!(e.exit_code(), 2);
        assert!(Settings::parse("just words").is_err());
    }

    #[test]
    fn ladder_tokens() {
        assert_eq!(parse_ladder("2^4, 32,64").unwrap(), vec![16.0, 32.0, 64.0]);
        assert!(parse_ladder("2^x").is_err());
        assert!(parse_ladder("0.5").is_err());
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(2.0), "2");
        assert_eq!(fmt12(123_456_789.123_456_79), "123456789.123");
        assert_eq!(fmt12(f64::NAN), "NaN");
        assert_eq!(fmt12(1.0 / 3.0 * 1e-9), "3.33333333333e-10");
        assert_eq!(fmt12(0.0), "0");
    }

    #[test]
    fn constants_override_validated() {
        let mut s = Settings::default();
        s.set("ce.c4", "0.7").unwrap();
        assert_eq!(constants(&s, 2, 2.0).unwrap_err().exit_code(), 2);
        let mut s = Settings::default();
        s.set("ce.c4", "0.001").unwrap();
        let c = constants(&s, 2, 2.0).unwrap().unwrap();
        assert_eq!(c.c4, 0.001);
        assert_eq!(c.c1, Constants::defaults(2, 2.0).c1);
    }

    #[test]
    fn csv_header_only_for_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        emit_csv::<SweepRow>(&p, &[]).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "R,ratio,slope_running\n");
    }

    #[test]
    fn csv_round_trip_keeps_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/r.csv");
        let rows = vec![
            LemmaRow {
                suite: "a,b".into(),
                cases: 3,
                passed: true,
                metric: 0.1 + 0.2,
                detail: "quote \" inside".into(),
            },
            LemmaRow {
                suite: "c".into(),
                cases: -1,
                passed: false,
                metric: 6.02214076e23,
                detail: String::new(),
            },
        ];
        emit_csv(&p, &rows).unwrap();
        let (header, back) = read_csv(&p).unwrap();
        assert_eq!(header, LemmaRow::HEADER);
        assert_eq!(back[0], ["a,b", "3", "true", "0.3", "quote \" inside"]);
        assert_eq!(back[1], ["c", "-1", "false", "6.02214076e23", ""]);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn csv_cells_are_twelve_digit_parseable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let row = SweepRow {
            r: 65536.0,
            ratio: std::f64::consts::PI,
            slope_running: None,
        };
        emit_csv(&p, &[row]).unwrap();
        let (_, back) = read_csv(&p).unwrap();
        assert_eq!(back[0], ["65536", "3.14159265359", ""]);
        let v: f64 = back[0][1].parse().unwrap();
        assert!((v - std::f64::consts::PI).abs() < 5e-12);
    }
}
