//! `cgeom`: command-line front end over cgeom-core. Every subcommand reads a JSON config.

use std::error::Error as StdError;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgeom::cexp::{c_exp_source, c_exp_target, CExpOptions};
use cgeom::cost::config::CostConfig;
use cgeom::harness::{
    barrier_schedule, f_of_d, inverse_square_instance, BarrierSchedule, Chart, EuclideanInstance, WGrid,
};
use cgeom::harness::{
    build_sets, contradiction_probe, dyadic, scaling_check, ConstructionConfig, Mode, ProbeReport, ScalingReport,
    DEFAULT_WINDOW,
};
use cgeom::loeper::{loeper_suite, witness_mtw, LoeperSuite, Roles};
use cgeom::mtw::{classify, ClassifyOptions, MtwReport};
use cgeom::potential::measure::SourceFile;
use cgeom::potential::{
    containment_test, contact_set, degeneracy_scan, estimate_lambda, exterior_sphere_point, solve_semidiscrete,
    ContactSet, DiscretePotential, ExteriorSphere, Grid, LambdaEstimate, LambdaOptions, PotentialFile,
    SemidiscreteOptions, SemidiscreteSolution, SourceMeasure, TargetMeasure,
};
use cgeom::{CostHandle, Domain, Error, Vector};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

type AnyResult<T> = std::result::Result<T, Box<dyn StdError>>;

#[derive(Parser)]
#[command(name = "cgeom", version, about = "Regularity checks for optimal transport with general costs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify a cost against A3s / A3w / NNCC on its domain pair.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map covectors through the c-exponential at a base point.
    Cexp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a semi-discrete transport problem and write its potential.
    OtSolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Scan a potential for singular points and their subdifferential dimension.
    Degeneracy {
        #[arg(long)]
        potential: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Contact set, exterior sphere point and containment test for a potential.
    Contact {
        #[arg(long)]
        potential: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized maximum-principle checks along c-segments.
    LoeperCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Volumes, scaling ratios, the contradiction probe and barrier checks along a d sweep.
    Construction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: CliMode,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMode {
    Euclidean,
    General,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> AnyResult<()> {
    match cmd {
        Command::Classify { config, out } => cmd_classify(&config, &out),
        Command::Cexp { config, points, out } => cmd_cexp(&config, &points, &out),
        Command::OtSolve { config, out, report } => cmd_ot_solve(&config, &out, report.as_deref()),
        Command::Degeneracy { potential, config, table, out } => cmd_degeneracy(&potential, &config, &table, out.as_deref()),
        Command::Contact { potential, config, out } => cmd_contact(&potential, &config, &out),
        Command::LoeperCheck { config, trials, seed, out } => cmd_loeper(&config, trials, seed, &out),
        Command::Construction { config, mode, out, table } => cmd_construction(&config, mode, &out, &table),
    }
}

fn read_value(path: &Path) -> AnyResult<Value> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn from_value<T: DeserializeOwned>(v: &Value, what: &str) -> AnyResult<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::BadConfig(format!("{what}: {e}")).into())
}

fn field<T: DeserializeOwned + Default>(v: &Value, key: &str) -> AnyResult<T> {
    match v.get(key) {
        Some(x) if !x.is_null() => from_value(x, key),
        _ => Ok(T::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> AnyResult<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn vector(v: &[f64]) -> Vector {
    Vector::from_column_slice(v)
}

fn cost_with_pair(v: &Value) -> AnyResult<(CostHandle, cgeom::DomainPair)> {
    let cfg = CostConfig::from_value(v)?;
    let c = cfg.build()?;
    let pair = c.domains.clone().ok_or_else(|| Error::BadConfig("config needs a domain pair".into()))?;
    Ok((c, pair))
}

fn cmd_classify(config: &Path, out: &Path) -> AnyResult<()> {
    let v = read_value(config)?;
    let (c, pair) = cost_with_pair(&v)?;
    let opts: ClassifyOptions = field(&v, "classify")?;
    let report = classify(&c, &pair, &opts)?;
    write_json(out, &report)
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case")]
enum Direction {
    Source,
    Target,
}

fn read_points(path: &Path) -> AnyResult<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => rows.push(r),
            // a header line
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("{}: row {}: {e}", path.display(), i + 1).into()),
        }
    }
    Ok(rows)
}

fn cmd_cexp(config: &Path, points: &Path, out: &Path) -> AnyResult<()> {
    let v = read_value(config)?;
    let c = CostConfig::from_value(&v)?.build()?;
    let direction: Direction = match v.get("direction") {
        Some(d) => from_value(d, "direction")?,
        None => Direction::Source,
    };
    let base: Vec<f64> = from_value(v.get("base").ok_or_else(|| Error::BadConfig("config needs a base point".into()))?, "base")?;
    let n = base.len();
    let base = vector(&base);
    let mut opts = CExpOptions::default();
    if let Some(t) = v.get("tol").and_then(Value::as_f64) {
        opts.tol = t;
    }
    if let Some(m) = v.get("max_iter").and_then(Value::as_u64) {
        opts.max_iter = m as usize;
    }
    let mut w = csv::Writer::from_path(out)?;
    let mut header: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    header.extend((0..n).map(|i| format!("y{i}")));
    header.push("error".into());
    w.write_record(&header)?;
    for p in read_points(points)? {
        if p.len() != n {
            return Err(Error::BadConfig(format!("covector of length {} for base of dimension {n}", p.len())).into());
        }
        let pv = vector(&p);
        let res = match direction {
            Direction::Source => c_exp_source(&c, &base, &pv, &opts),
            Direction::Target => c_exp_target(&c, &base, &pv, &opts),
        };
        let mut row: Vec<String> = p.iter().map(|x| x.to_string()).collect();
        match res {
            Ok(y) => {
                row.extend(y.iter().map(|x| x.to_string()));
                row.push(String::new());
            }
            Err(e) => {
                row.extend((0..n).map(|_| "NaN".to_string()));
                row.push(e.to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct TargetFile {
    sites: Vec<Vec<f64>>,
    weights: Vec<f64>,
    support: Domain,
}

impl TargetFile {
    fn build(&self) -> AnyResult<TargetMeasure> {
        Ok(TargetMeasure::new(self.sites.iter().map(|s| vector(s)).collect(), self.weights.clone(), self.support.clone())?)
    }
}

#[derive(Serialize)]
struct OtReport {
    cost: String,
    solution: SemidiscreteSolution,
    lambda: Option<LambdaEstimate>,
}

fn cmd_ot_solve(config: &Path, out: &Path, report: Option<&Path>) -> AnyResult<()> {
    let v = read_value(config)?;
    let c = CostConfig::from_value(&v)?.build()?;
    let source: SourceFile = from_value(v.get("source").ok_or_else(|| Error::BadConfig("config needs a source".into()))?, "source")?;
    let target: TargetFile = from_value(v.get("target").ok_or_else(|| Error::BadConfig("config needs a target".into()))?, "target")?;
    let mu = SourceMeasure::from_file(&source)?;
    let nu = target.build()?;
    let opts: SemidiscreteOptions = field(&v, "options")?;
    let sol = solve_semidiscrete(&c, &mu, &nu, &opts)?;
    write_json(out, &sol.potential.to_file())?;
    if let Some(path) = report {
        let lambda = match v.get("lambda") {
            Some(l) if !l.is_null() => {
                let lo: LambdaOptions = from_value(l, "lambda")?;
                Some(estimate_lambda(&sol.potential, &mu, &nu, &lo)?)
            }
            _ => None,
        };
        write_json(path, &OtReport { cost: c.name(), solution: sol, lambda })?;
    }
    Ok(())
}

fn read_potential(path: &Path) -> AnyResult<DiscretePotential> {
    let f: PotentialFile = from_value(&read_value(path)?, "potential")?;
    Ok(DiscretePotential::from_file(&f)?)
}

fn read_grid(v: &Value) -> AnyResult<Grid> {
    let g: Grid = from_value(v.get("grid").ok_or_else(|| Error::BadConfig("config needs a grid".into()))?, "grid")?;
    Ok(Grid::new(&g.lo, &g.hi, &g.res)?)
}

#[derive(Serialize)]
struct DegeneracyReport {
    singular_points: usize,
    max_affdim: usize,
    bound_violations: usize,
    grid: Grid,
}

fn cmd_degeneracy(potential: &Path, config: &Path, table: &Path, out: Option<&Path>) -> AnyResult<()> {
    let u = read_potential(potential)?;
    let v = read_value(config)?;
    let grid = read_grid(&v)?;
    let support: Domain = from_value(v.get("support").ok_or_else(|| Error::BadConfig("config needs the target support".into()))?, "support")?;
    let weights: Vec<f64> = match v.get("weights") {
        Some(w) => from_value(w, "weights")?,
        None => vec![1.0 / u.m() as f64; u.m()],
    };
    let nu = TargetMeasure::new(u.sites.clone(), weights, support)?;
    let tol = v.get("tol").and_then(Value::as_f64).unwrap_or(1e-9);
    let resolution = v.get("resolution").and_then(Value::as_f64).unwrap_or(0.0);
    let rows = degeneracy_scan(&u, &grid, &nu, tol, resolution)?;
    let mut w = csv::Writer::from_path(table)?;
    w.write_record(["x", "affdim", "meets_interior", "bound_ok"])?;
    for r in &rows {
        let x = r.x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([x, r.affdim.to_string(), r.meets_interior.to_string(), r.bound_ok.to_string()])?;
    }
    w.flush()?;
    if let Some(path) = out {
        write_json(
            path,
            &DegeneracyReport {
                singular_points: rows.len(),
                max_affdim: rows.iter().map(|r| r.affdim).max().unwrap_or(0),
                bound_violations: rows.iter().filter(|r| !r.bound_ok).count(),
                grid,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ContactReport {
    contact: ContactSet,
    exterior_sphere: ExteriorSphere,
    /// ∂_c u(x₀) ⊆ ∂_c u(x_e) at the exterior sphere point, or at `x_e` from the config.
    containment: bool,
    midpoints_checked: usize,
    midpoints_outside: usize,
}

fn cmd_contact(potential: &Path, config: &Path, out: &Path) -> AnyResult<()> {
    let u = read_potential(potential)?;
    let v = read_value(config)?;
    let grid = read_grid(&v)?;
    let x0: Vec<f64> = from_value(v.get("x0").ok_or_else(|| Error::BadConfig("config needs x0".into()))?, "x0")?;
    let x0 = vector(&x0);
    let xbar0 = match v.get("xbar0") {
        Some(x) => vector(&from_value::<Vec<f64>>(x, "xbar0")?),
        // cExp of the mean active covector, inside the hull of ∂_c u(x₀)
        None => {
            let e = u.evaluate(&x0)?;
            let mut p = Vector::zeros(x0.len());
            for &j in &e.argmax {
                p -= u.cost.grad_x(&x0, &u.sites[j])?;
            }
            c_exp_source(&u.cost, &x0, &(p / e.argmax.len() as f64), &CExpOptions::internal())?
        }
    };
    let tol = v.get("tol").and_then(Value::as_f64).unwrap_or(1e-9);
    let s0 = contact_set(&u, &x0, &xbar0, &grid, tol)?;
    let sphere = exterior_sphere_point(&s0)?;
    let x_e = match v.get("x_e") {
        Some(x) => vector(&from_value::<Vec<f64>>(x, "x_e")?),
        None => sphere.x_e.clone(),
    };
    let containment = containment_test(&u, &x0, &xbar0, &x_e, tol)?;
    let pairs = v.get("midpoint_pairs").and_then(Value::as_u64).unwrap_or(0) as usize;
    let (checked, outside) = if pairs > 0 && !s0.is_singleton() { s0.midpoint_check(pairs, 0)? } else { (0, 0) };
    write_json(
        out,
        &ContactReport { contact: s0, exterior_sphere: sphere, containment, midpoints_checked: checked, midpoints_outside: outside },
    )
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RoleChoice {
    Source,
    Target,
    #[default]
    Both,
}

#[derive(Serialize)]
struct LoeperReport {
    cost: String,
    classification: Option<MtwReport>,
    suites: Vec<LoeperSuite>,
    /// Smallest orthogonal MTW value along the worst violating segment of each suite.
    witness_mtw: Vec<Option<f64>>,
    violations: usize,
}

fn cmd_loeper(config: &Path, trials: usize, seed: u64, out: &Path) -> AnyResult<()> {
    let v = read_value(config)?;
    let (c, pair) = cost_with_pair(&v)?;
    let t_samples = v.get("t_samples").and_then(Value::as_u64).unwrap_or(64) as usize;
    let roles = match field::<RoleChoice>(&v, "roles")? {
        RoleChoice::Source => vec![Roles::Source],
        RoleChoice::Target => vec![Roles::Target],
        RoleChoice::Both => vec![Roles::Source, Roles::Target],
    };
    let classification = match v.get("classify") {
        Some(Value::Bool(false)) => None,
        Some(o) if o.is_object() => Some(classify(&c, &pair, &from_value(o, "classify")?)?),
        _ => Some(classify(&c, &pair, &ClassifyOptions { seed, ..Default::default() })?),
    };
    let mut suites = Vec::new();
    let mut mtw = Vec::new();
    for r in roles {
        let s = loeper_suite(&c, &pair, trials, t_samples, r, seed)?;
        mtw.push(match (r, s.witnesses.first()) {
            (Roles::Source, Some(w)) => Some(witness_mtw(&c, w)?.0),
            _ => None,
        });
        suites.push(s);
    }
    let violations = suites.iter().map(|s| s.violations).sum();
    write_json(out, &LoeperReport { cost: c.name(), classification, suites, witness_mtw: mtw, violations })
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "snake_case")]
enum FChoice {
    #[default]
    Measured,
    /// f(d) = d^power.
    Power(i32),
}

#[derive(Deserialize)]
struct ConstructionFile {
    #[serde(flatten)]
    base: ConstructionConfig,
    #[serde(default)]
    ds: Option<Vec<f64>>,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default)]
    f: FChoice,
    #[serde(default)]
    grid: Option<WGridFile>,
    #[serde(default = "default_pbar")]
    pbar_samples: usize,
    #[serde(default = "default_stratum")]
    per_stratum: usize,
    #[serde(default)]
    window: Option<f64>,
}

#[derive(Deserialize)]
struct WGridFile {
    half_width: f64,
    res: usize,
    dir_res: usize,
}

fn default_samples() -> usize {
    100_000
}

fn default_pbar() -> usize {
    8
}

fn default_stratum() -> usize {
    24
}

#[derive(Serialize)]
struct ConstructionReport {
    config: ConstructionConfig,
    ds: Vec<f64>,
    f: Vec<f64>,
    scaling: ScalingReport,
    probe: ProbeReport,
    barrier: BarrierSchedule,
}

fn cmd_construction(config: &Path, mode: CliMode, out: &Path, table: &Path) -> AnyResult<()> {
    let v = read_value(config)?;
    let mut file: ConstructionFile = {
        let mut v = v.clone();
        // --mode is authoritative; the config may leave it out
        if let Some(o) = v.as_object_mut() {
            o.entry("mode").or_insert(Value::String("euclidean".into()));
            o.entry("d").or_insert(Value::from(0.125));
        }
        from_value(&v, "construction config")?
    };
    file.base.mode = match mode {
        CliMode::Euclidean => Mode::Euclidean,
        CliMode::General => Mode::General,
    };
    let cfg = file.base.clone();
    cfg.validate()?;
    let ds = file.ds.clone().unwrap_or_else(|| dyadic(3, 8));
    let grid = match &file.grid {
        Some(g) => WGrid { half_width: g.half_width, res: g.res, dir_res: g.dir_res },
        None => WGrid::default(),
    };
    let window = file.window.unwrap_or(DEFAULT_WINDOW);

    let (chart, general) = match cfg.mode {
        Mode::Euclidean => {
            (Chart::Euclidean(EuclideanInstance { n: cfg.n, k: cfg.k, r0: cfg.r0, big_r0: cfg.big_r0 }), None)
        }
        Mode::General => {
            let inst = inverse_square_instance(cfg.n, cfg.k, cfg.r0, cfg.big_r0, cfg.seed)?;
            (inst.chart(), Some(inst))
        }
    };
    let f_at = |c: &ConstructionConfig| -> cgeom::Result<f64> {
        match file.f {
            FChoice::Power(p) => Ok(c.d.powi(p)),
            FChoice::Measured => match (&chart, &general) {
                (Chart::Euclidean(inst), _) => Ok(f_of_d(&|x| Ok(inst.u(x)), c, &grid)?.f),
                (_, Some(g)) => Ok(g.f_of_d(c, &grid)?.f),
                _ => unreachable!(),
            },
        }
    };
    let sets_at = |c: &ConstructionConfig| {
        let s = build_sets(c, f_at(c)?)?;
        Ok(match &general {
            Some(g) => s.with_valley(g.valley.clone()),
            None => s,
        })
    };
    let fs: Vec<f64> = ds.iter().map(|&d| f_at(&cfg.with_d(d))).collect::<cgeom::Result<_>>()?;
    let scaling = scaling_check(&ds, &|d| sets_at(&cfg.with_d(d)), file.samples, window)?;
    let f_lookup = |d: f64| ds.iter().position(|&x| x == d).map(|i| fs[i]).unwrap_or(f64::NAN);
    let probe = contradiction_probe(cfg.n, cfg.k, cfg.mode, &ds, &f_lookup, window);
    let barrier = barrier_schedule(&chart, &cfg, &ds, &sets_at, file.pbar_samples, file.per_stratum)?;

    let mut w = csv::Writer::from_path(table)?;
    w.write_record(["d", "f_d", "vol_Q", "vol_Qbar", "ratio_Q", "ratio_cyl", "lhs_step5", "rhs_step5", "barrier_ok"])?;
    for row in &scaling.rows {
        let p = probe.rows.iter().find(|p| p.d == row.d);
        let b = barrier.reports.iter().find(|r| r.d == row.d).map(|r| r.ok);
        w.write_record([
            row.d.to_string(),
            row.f.to_string(),
            row.vol_q.estimate.to_string(),
            row.vol_qbar.estimate.to_string(),
            row.ratio_q.to_string(),
            row.ratio_cyl.to_string(),
            p.map_or(String::new(), |p| p.lhs.to_string()),
            p.map_or(String::new(), |p| p.rhs.to_string()),
            b.map_or(String::new(), |b| b.to_string()),
        ])?;
    }
    w.flush()?;
    write_json(out, &ConstructionReport { config: cfg, ds, f: fs, scaling, probe, barrier })
}
