//! Command-line front end: `solve`, `converge`, `robust` and `conserve`.
//!
//! Settings come from an optional flat `key = value` file overridden by flags. Every value is
//! validated before any output is written; each run leaves `resolved_config.txt` next to its
//! outputs. Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 1 I/O failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::diagnostics::{compact_random_velocity, compact_vortex, CheckOptions, ConservationMonitor, Tolerances};
use crate::error::{Error, Result};
use crate::experiments::{
    convergence_study, format_rates_table, robustness_sweep, run_case, write_results_csv, CaseKind, ErrorNorm,
    ErrorRecord, GridFamily, ManufacturedCase, Model, RunSettings, SweepAxis,
};
use crate::forcing::ForcingSpec;
use crate::grid::StaggeredGrid2D;
use crate::io::write_atomic;
use crate::navier_stokes::{self, IterationLog, NonlinearConfig};
use crate::stokes::{self, step_count, Scheme, StepState, DEFAULT_SOLVER_TOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "rmac", version, about = "Pressure-robust MAC solvers for Stokes and Navier-Stokes flow")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one manufactured case and write its error row and conservation series.
    Solve(SolveArgs),
    /// Refinement study with dt = 1/N^2 and observed rates.
    Converge(ConvergeArgs),
    /// Sweep the pressure amplitude or the viscosity on a fixed grid.
    Robust(RobustArgs),
    /// Unforced run from compactly supported data, audited for the discrete conservation laws.
    Conserve(ConserveArgs),
}

/// Flags shared by all subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// rmac or mac.
    #[arg(long)]
    pub scheme: Option<String>,
    /// stokes or ns.
    #[arg(long)]
    pub model: Option<String>,
    /// Uniform grid.
    #[arg(long, conflicts_with = "ratio")]
    pub uniform: bool,
    /// Non-uniform grid with max/min cell width ratio at least this value.
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Seed of the non-uniform grid (and of random initial data).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed time step.
    #[arg(long, conflicts_with = "dt_rule")]
    pub dt: Option<f64>,
    /// `inverse-square` for dt = 1/Nx^2.
    #[arg(long = "dt-rule")]
    pub dt_rule: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    /// Pressure amplitude.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Linear and nonlinear solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Leave the wall-clock column empty so outputs are reproducible byte for byte.
    #[arg(long = "no-wallclock")]
    pub no_wallclock: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// example1 or example2.
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub nx: Option<usize>,
    /// Defaults to nx.
    #[arg(long)]
    pub ny: Option<usize>,
    /// Steps at which to write field snapshots, comma separated.
    #[arg(long)]
    pub snapshots: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub case: Option<String>,
    /// Grid sizes N (N x N cells), comma separated; each a power-of-two multiple of the first.
    #[arg(long)]
    pub levels: Option<String>,
    /// l2 or linf, the norm the rates are computed in.
    #[arg(long)]
    pub norm: Option<String>,
    /// Also run the MAC scheme on the same grids.
    #[arg(long = "compare-mac")]
    pub compare_mac: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RobustArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub case: Option<String>,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// lambda or mu.
    #[arg(long)]
    pub axis: Option<String>,
    /// Comma separated sweep values; defaults to four decades.
    #[arg(long)]
    pub values: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConserveArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub nx: Option<usize>,
    #[arg(long)]
    pub ny: Option<usize>,
    /// vortex or random.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Vortex radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Corner rings kept at zero by random initial data.
    #[arg(long)]
    pub margin: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Solve,
    Converge,
    Robust,
    Conserve,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Converge => "converge",
            Mode::Robust => "robust",
            Mode::Conserve => "conserve",
        }
    }

    fn keys(self) -> &'static [&'static str] {
        const COMMON: [&str; 13] = [
            "scheme", "model", "grid", "ratio", "seed", "dt", "dt_rule", "T", "mu", "lambda", "tol", "out",
            "wallclock",
        ];
        const SOLVE: [&str; 4] = ["case", "nx", "ny", "snapshots"];
        const CONVERGE: [&str; 4] = ["case", "levels", "norm", "compare_mac"];
        const ROBUST: [&str; 5] = ["case", "nx", "ny", "axis", "values"];
        const CONSERVE: [&str; 6] = ["nx", "ny", "init", "amplitude", "radius", "margin"];
        static ALL: std::sync::OnceLock<[Vec<&'static str>; 4]> = std::sync::OnceLock::new();
        let all = ALL.get_or_init(|| {
            let join = |extra: &[&'static str]| COMMON.iter().chain(extra).copied().collect::<Vec<_>>();
            [join(&SOLVE), join(&CONVERGE), join(&ROBUST), join(&CONSERVE)]
        });
        &all[self as usize]
    }
}

/// Parses a flat `key = value` text; `#` starts a comment line.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)));
        };
        let key = normalize_key(k.trim());
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", n + 1)));
        }
    }
    Ok(map)
}

fn normalize_key(k: &str) -> String {
    if k.eq_ignore_ascii_case("t") {
        "T".into()
    } else {
        k.replace('-', "_")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Uniform,
    Nonuniform { ratio: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DtRule {
    Fixed(f64),
    /// `dt = 1 / Nx^2`.
    InverseSquare,
}

impl DtRule {
    pub fn dt(self, nx: usize) -> f64 {
        match self {
            DtRule::Fixed(dt) => dt,
            DtRule::InverseSquare => 1.0 / (nx * nx) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Vortex,
    Random,
}

/// Fully validated settings of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub case: Option<CaseKind>,
    pub scheme: Scheme,
    pub model: Model,
    pub grid: GridSpec,
    pub nx: usize,
    pub ny: usize,
    pub levels: Vec<usize>,
    pub dt_rule: DtRule,
    pub t_final: f64,
    pub mu: f64,
    pub lambda: f64,
    pub tol: f64,
    pub out: PathBuf,
    pub wallclock: bool,
    pub snapshots: Vec<usize>,
    pub norm: ErrorNorm,
    pub compare_mac: bool,
    pub axis: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub init: InitKind,
    pub amplitude: f64,
    pub radius: f64,
    pub margin: usize,
}

const DEFAULT_SEED: u64 = 2024;
const DEFAULT_RATIO: f64 = 1.5;

struct Values {
    map: BTreeMap<String, String>,
}

impl Values {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::Config(format!("invalid {key} '{v}': {e}"))))
            .transpose()
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<T>()
                            .map_err(|e| Error::Config(format!("invalid entry '{s}' in {key}: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("invalid {key} '{v}': expected true or false"))),
            })
            .transpose()
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{key} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    /// Validates a merged key map for `mode`.
    pub fn from_map(mode: Mode, map: BTreeMap<String, String>) -> Result<Self> {
        let allowed = mode.keys();
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key '{k}' for {}", mode.name())));
        }
        let v = Values { map };

        let case: Option<CaseKind> = v.parse("case")?;
        if case.is_none() && mode != Mode::Conserve {
            return Err(Error::Config(format!("{} needs --case (example1 or example2)", mode.name())));
        }
        let scheme = v.parse::<Scheme>("scheme")?.unwrap_or(Scheme::Rmac);
        let model = match v.parse::<Model>("model")? {
            Some(m) => m,
            None => case.map(|c| ManufacturedCase::from_kind(c).model).unwrap_or(Model::Stokes),
        };

        let grid = match v.raw("grid").unwrap_or("nonuniform") {
            "uniform" => {
                if v.raw("ratio").is_some() {
                    return Err(Error::Config("ratio is only meaningful for a non-uniform grid".into()));
                }
                GridSpec::Uniform
            }
            "nonuniform" => {
                let ratio = v.parse::<f64>("ratio")?.unwrap_or(DEFAULT_RATIO);
                if !(ratio >= 1.0 && ratio.is_finite()) {
                    return Err(Error::Config(format!("ratio must be at least 1, got {ratio}")));
                }
                GridSpec::Nonuniform {
                    ratio,
                    seed: v.parse("seed")?.unwrap_or(DEFAULT_SEED),
                }
            }
            other => return Err(Error::Config(format!("invalid grid '{other}': expected uniform or nonuniform"))),
        };

        let (nx, ny, levels) = match mode {
            Mode::Converge => {
                let levels = v.list::<usize>("levels")?.unwrap_or_else(|| vec![5, 10, 20, 40, 80]);
                if levels.len() < 2 {
                    return Err(Error::Config("levels needs at least two entries".into()));
                }
                if levels.windows(2).any(|w| w[1] <= w[0]) || levels[0] < 2 {
                    return Err(Error::Config("levels must increase and start at 2 or more".into()));
                }
                if matches!(grid, GridSpec::Nonuniform { .. })
                    && levels.iter().any(|&n| n % levels[0] != 0 || !(n / levels[0]).is_power_of_two())
                {
                    return Err(Error::Config(
                        "nested non-uniform levels must be the first level times powers of two".into(),
                    ));
                }
                (levels[0], levels[0], levels)
            }
            _ => {
                let nx: usize = v.parse("nx")?.ok_or_else(|| Error::Config(format!("{} needs --nx", mode.name())))?;
                let ny: usize = v.parse("ny")?.unwrap_or(nx);
                if nx < 2 || ny < 2 {
                    return Err(Error::Config(format!("grid needs at least 2 cells per direction, got {nx}x{ny}")));
                }
                (nx, ny, Vec::new())
            }
        };

        let dt_rule = match (v.parse::<f64>("dt")?, v.raw("dt_rule")) {
            (Some(_), Some(_)) => return Err(Error::Config("give either dt or dt_rule, not both".into())),
            (Some(dt), None) => DtRule::Fixed(positive("dt", dt)?),
            (None, None) | (None, Some("inverse-square")) => DtRule::InverseSquare,
            (None, Some(r)) => return Err(Error::Config(format!("invalid dt_rule '{r}': expected inverse-square"))),
        };
        if mode == Mode::Converge && dt_rule != DtRule::InverseSquare {
            return Err(Error::Config("converge always uses dt = 1/N^2".into()));
        }
        let t_final = positive("T", v.parse("T")?.unwrap_or(1.0))?;
        let sizes: Vec<usize> = if levels.is_empty() { vec![nx] } else { levels.clone() };
        for &n in &sizes {
            step_count(t_final, dt_rule.dt(n))?;
        }

        let mu = positive("mu", v.parse("mu")?.unwrap_or(1.0))?;
        let lambda: f64 = v.parse("lambda")?.unwrap_or(1.0);
        if !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite, got {lambda}")));
        }
        let tol = positive("tol", v.parse("tol")?.unwrap_or(DEFAULT_SOLVER_TOL))?;
        let out = v.raw("out").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("rmac-out"));
        let wallclock = v.bool("wallclock")?.unwrap_or(true);

        let snapshots = v.list::<usize>("snapshots")?.unwrap_or_default();
        let steps = step_count(t_final, dt_rule.dt(nx))?;
        if let Some(s) = snapshots.iter().find(|&&s| s == 0 || s > steps) {
            return Err(Error::Config(format!("snapshot step {s} outside 1..={steps}")));
        }
        let norm = v.parse::<ErrorNorm>("norm")?.unwrap_or(ErrorNorm::L2);
        let compare_mac = v.bool("compare_mac")?.unwrap_or(false);
        let axis: Option<SweepAxis> = v.parse("axis")?;
        if mode == Mode::Robust && axis.is_none() {
            return Err(Error::Config("robust needs --axis (lambda or mu)".into()));
        }
        let values = match v.list::<f64>("values")? {
            Some(vals) => vals,
            None => axis.map(SweepAxis::default_values).unwrap_or_default(),
        };
        if axis == Some(SweepAxis::Mu) {
            for &m in &values {
                positive("mu", m)?;
            }
        }
        let init = match v.raw("init").unwrap_or("vortex") {
            "vortex" => InitKind::Vortex,
            "random" => InitKind::Random,
            other => return Err(Error::Config(format!("invalid init '{other}': expected vortex or random"))),
        };
        let amplitude: f64 = v.parse("amplitude")?.unwrap_or(0.1);
        if !amplitude.is_finite() {
            return Err(Error::Config("amplitude must be finite".into()));
        }
        let radius = positive("radius", v.parse("radius")?.unwrap_or(0.3))?;
        let margin: usize = v.parse("margin")?.unwrap_or(3);

        Ok(Self {
            mode,
            case,
            scheme,
            model,
            grid,
            nx,
            ny,
            levels,
            dt_rule,
            t_final,
            mu,
            lambda,
            tol,
            out,
            wallclock,
            snapshots,
            norm,
            compare_mac,
            axis,
            values,
            init,
            amplitude,
            radius,
            margin,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt_rule.dt(self.nx)
    }

    pub fn manufactured_case(&self) -> Option<ManufacturedCase> {
        self.case.map(|k| {
            ManufacturedCase::from_kind(k)
                .with_model(self.model)
                .with_mu(self.mu)
                .with_lambda(self.lambda)
        })
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            t_final: self.t_final,
            solver_tol: self.tol,
            nonlinear: NonlinearConfig {
                picard_tol: self.tol,
                ..NonlinearConfig::default()
            },
            ..RunSettings::new(self.scheme, self.dt())
        }
    }

    pub fn build_grid(&self) -> Result<StaggeredGrid2D> {
        match self.grid {
            GridSpec::Uniform => StaggeredGrid2D::uniform(self.nx, self.ny, (1.0, 1.0)),
            GridSpec::Nonuniform { ratio, seed } => {
                StaggeredGrid2D::random_nonuniform(self.nx, self.ny, (1.0, 1.0), ratio, seed)
            }
        }
    }

    pub fn family(&self) -> GridFamily {
        match self.grid {
            GridSpec::Uniform => GridFamily::Uniform,
            GridSpec::Nonuniform { ratio, seed } => GridFamily::Nested { ratio, seed },
        }
    }

    /// Canonical `key = value` listing of every resolved setting.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.mode.name().into());
        if let Some(c) = self.case {
            kv("case", ManufacturedCase::from_kind(c).name().into());
        }
        kv("scheme", self.scheme.name().into());
        kv("model", self.model.name().into());
        match self.grid {
            GridSpec::Uniform => kv("grid", "uniform".into()),
            GridSpec::Nonuniform { ratio, seed } => {
                kv("grid", "nonuniform".into());
                kv("ratio", format!("{ratio}"));
                kv("seed", format!("{seed}"));
            }
        }
        if self.mode == Mode::Converge {
            kv("levels", join(&self.levels));
            kv("norm", format!("{:?}", self.norm).to_lowercase());
            kv("compare_mac", self.compare_mac.to_string());
        } else {
            kv("nx", self.nx.to_string());
            kv("ny", self.ny.to_string());
        }
        match self.dt_rule {
            DtRule::Fixed(dt) => kv("dt", format!("{dt:e}")),
            DtRule::InverseSquare => kv("dt_rule", "inverse-square".into()),
        }
        kv("T", format!("{}", self.t_final));
        kv("mu", format!("{:e}", self.mu));
        kv("lambda", format!("{:e}", self.lambda));
        kv("tol", format!("{:e}", self.tol));
        kv("out", self.out.display().to_string());
        kv("wallclock", self.wallclock.to_string());
        match self.mode {
            Mode::Solve => kv("snapshots", join(&self.snapshots)),
            Mode::Robust => {
                kv("axis", format!("{:?}", self.axis.unwrap_or(SweepAxis::Lambda)).to_lowercase());
                kv("values", self.values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
            }
            Mode::Conserve => {
                kv("init", format!("{:?}", self.init).to_lowercase());
                kv("amplitude", format!("{}", self.amplitude));
                kv("radius", format!("{}", self.radius));
                kv("margin", self.margin.to_string());
            }
            Mode::Converge => {}
        }
        s
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn common_map(c: &CommonArgs, map: &mut BTreeMap<String, String>) {
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    set("scheme", c.scheme.clone());
    set("model", c.model.clone());
    set("seed", c.seed.map(|v| v.to_string()));
    set("dt", c.dt.map(|v| v.to_string()));
    set("dt_rule", c.dt_rule.clone());
    set("T", c.t_final.map(|v| v.to_string()));
    set("mu", c.mu.map(|v| v.to_string()));
    set("lambda", c.lambda.map(|v| v.to_string()));
    set("tol", c.tol.map(|v| v.to_string()));
    set("out", c.out.as_ref().map(|p| p.display().to_string()));
    if c.uniform {
        map.insert("grid".into(), "uniform".into());
        map.remove("ratio");
    }
    if let Some(r) = c.ratio {
        map.insert("grid".into(), "nonuniform".into());
        map.insert("ratio".into(), r.to_string());
    }
    if c.dt.is_some() {
        map.remove("dt_rule");
    }
    if c.dt_rule.is_some() {
        map.remove("dt");
    }
    if c.no_wallclock {
        map.insert("wallclock".into(), "false".into());
    }
}

fn load_base(c: &CommonArgs) -> Result<BTreeMap<String, String>> {
    match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
            parse_config_text(&text)
        }
        None => Ok(BTreeMap::new()),
    }
}

/// Merges the config file and flags of a parsed command into a validated configuration.
pub fn resolve(command: &Command) -> Result<RunConfig> {
    let (mode, common) = match command {
        Command::Solve(a) => (Mode::Solve, &a.common),
        Command::Converge(a) => (Mode::Converge, &a.common),
        Command::Robust(a) => (Mode::Robust, &a.common),
        Command::Conserve(a) => (Mode::Conserve, &a.common),
    };
    let mut map = load_base(common)?;
    common_map(common, &mut map);
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    };
    match command {
        Command::Solve(a) => {
            set("case", a.case.clone());
            set("nx", a.nx.map(|v| v.to_string()));
            set("ny", a.ny.map(|v| v.to_string()));
            set("snapshots", a.snapshots.clone());
        }
        Command::Converge(a) => {
            set("case", a.case.clone());
            set("levels", a.levels.clone());
            set("norm", a.norm.clone());
            if a.compare_mac {
                set("compare_mac", Some("true".into()));
            }
        }
        Command::Robust(a) => {
            set("case", a.case.clone());
            set("nx", a.nx.map(|v| v.to_string()));
            set("ny", a.ny.map(|v| v.to_string()));
            set("axis", a.axis.clone());
            set("values", a.values.clone());
        }
        Command::Conserve(a) => {
            set("nx", a.nx.map(|v| v.to_string()));
            set("ny", a.ny.map(|v| v.to_string()));
            set("init", a.init.clone());
            set("amplitude", a.amplitude.map(|v| v.to_string()));
            set("radius", a.radius.map(|v| v.to_string()));
            set("margin", a.margin.map(|v| v.to_string()));
        }
    }
    RunConfig::from_map(mode, map)
}

/// Files produced by a command, written together once the computation is done.
#[derive(Default)]
struct Outputs {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn add(&mut self, dir: &Path, name: &str, bytes: Vec<u8>) {
        self.files.push((dir.join(name), bytes));
    }

    fn write(self) -> Result<()> {
        for (path, bytes) in self.files {
            write_atomic(&path, &bytes)?;
        }
        Ok(())
    }
}

/// Result of a command: files to write, a console report and whether a check failed.
struct Report {
    outputs: Outputs,
    text: String,
    failed: Option<String>,
}

fn results_bytes(records: &[ErrorRecord], wallclock: bool) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_results_csv(records, &mut buf, wallclock)?;
    Ok(buf)
}

fn cmd_solve(cfg: &RunConfig) -> Result<Report> {
    let case = cfg.manufactured_case().expect("validated");
    let grid = cfg.build_grid()?;
    let settings = cfg.settings();
    let opts = CheckOptions {
        mu: cfg.mu,
        dt: settings.dt,
        forced: true,
        compact_support: false,
        tolerances: Tolerances::from_solver_tol(cfg.tol),
    };
    let mut monitor = ConservationMonitor::new(&grid, &case.initial_velocity(&grid)?, opts)?;
    let mut log = IterationLog::new(Vec::new())?;
    let snap_dir = cfg.out.join("snapshots");
    let mut snapshot_data: Vec<(usize, Vec<u8>)> = Vec::new();
    let wants: std::collections::BTreeSet<usize> = cfg.snapshots.iter().copied().collect();
    let mut extra = |s: &StepState| -> Result<()> {
        monitor.observe(s)?;
        if case.model == Model::NavierStokes {
            log.record(s)?;
        }
        if wants.contains(&s.step) {
            let mut buf = Vec::new();
            crate::field::write_fields_csv(&grid, &[&s.w.x, &s.w.y, s.z], &mut buf)?;
            snapshot_data.push((s.step, buf));
        }
        Ok(())
    };
    let record = run_case(&case, &grid, &settings, &mut extra)?;
    let report = monitor.finish();

    let mut out = Outputs::default();
    out.add(&cfg.out, "results.csv", results_bytes(std::slice::from_ref(&record), cfg.wallclock)?);
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.add(&cfg.out, "conservation.csv", buf);
    if case.model == Model::NavierStokes {
        out.add(&cfg.out, "iterations.csv", log.finish()?);
    }
    out.add(&cfg.out, "grid.txt", grid.to_text().into_bytes());
    for (step, bytes) in snapshot_data {
        out.add(&snap_dir, &format!("snapshot_{step}.csv"), bytes);
    }

    let mut text = String::new();
    let _ = writeln!(
        text,
        "{} {} {} {}x{} dt={:e} T={}: eu_l2={:.4e} ep_l2={:.4e} eu_linf={:.4e} ep_linf={:.4e}",
        record.case,
        record.scheme.name(),
        record.model.name(),
        record.nx,
        record.ny,
        record.dt,
        cfg.t_final,
        record.eu_l2,
        record.ep_l2,
        record.eu_linf,
        record.ep_linf
    );
    let failed = (!report.mass_ok()).then(|| "discrete divergence exceeded its tolerance".to_string());
    Ok(Report {
        outputs: out,
        text,
        failed,
    })
}

fn cmd_converge(cfg: &RunConfig) -> Result<Report> {
    let case = cfg.manufactured_case().expect("validated");
    let schemes: Vec<Scheme> = if cfg.compare_mac {
        vec![Scheme::Rmac, Scheme::Mac]
    } else {
        vec![cfg.scheme]
    };
    let mut out = Outputs::default();
    let mut text = String::new();
    let mut failed = None;
    for scheme in schemes {
        let settings = RunSettings {
            scheme,
            ..cfg.settings()
        };
        let records = convergence_study(&case, &settings, cfg.family(), &cfg.levels, cfg.norm)?;
        let name = if cfg.compare_mac {
            format!("results_{}.csv", scheme.name())
        } else {
            "results.csv".to_string()
        };
        out.add(&cfg.out, &name, results_bytes(&records, cfg.wallclock)?);
        let table = format_rates_table(&records, cfg.norm);
        let _ = writeln!(text, "{} {} {}, T = {}", case.name(), scheme.name(), case.model.name(), cfg.t_final);
        text += &table;
        out.add(&cfg.out, &format!("rates_{}.txt", scheme.name()), table.into_bytes());
        if let Some(r) = records.iter().find(|r| r.failure.is_some()) {
            failed = Some(format!("level {}x{} failed: {}", r.nx, r.ny, r.failure.as_deref().unwrap_or("")));
        }
    }
    Ok(Report {
        outputs: out,
        text,
        failed,
    })
}

fn cmd_robust(cfg: &RunConfig) -> Result<Report> {
    let case = cfg.manufactured_case().expect("validated");
    let grid = cfg.build_grid()?;
    let axis = cfg.axis.expect("validated");
    let records = robustness_sweep(&case, &cfg.settings(), &grid, axis, &cfg.values)?;
    let mut out = Outputs::default();
    out.add(&cfg.out, "robust.csv", results_bytes(&records, cfg.wallclock)?);
    let mut text = format!("{} {} sweep over {}\n", case.name(), cfg.scheme.name(), format!("{axis:?}").to_lowercase());
    for r in &records {
        let v = if axis == SweepAxis::Lambda { r.lambda } else { r.mu };
        let _ = writeln!(text, "  {v:>8.0e}  eu_l2={:.4e}  ep_l2={:.4e}", r.eu_l2, r.ep_l2);
    }
    Ok(Report {
        outputs: out,
        text,
        failed: None,
    })
}

fn cmd_conserve(cfg: &RunConfig) -> Result<Report> {
    let grid = cfg.build_grid()?;
    let initial = match cfg.init {
        InitKind::Vortex => compact_vortex(&grid, cfg.radius, cfg.amplitude)?,
        InitKind::Random => {
            let seed = match cfg.grid {
                GridSpec::Nonuniform { seed, .. } => seed,
                GridSpec::Uniform => DEFAULT_SEED,
            };
            compact_random_velocity(&grid, cfg.margin, cfg.amplitude, seed)?
        }
    };
    let settings = cfg.settings();
    let config = settings.stepper_config(cfg.mu);
    let opts = CheckOptions {
        mu: cfg.mu,
        dt: settings.dt,
        forced: false,
        compact_support: true,
        tolerances: Tolerances::from_solver_tol(cfg.tol),
    };
    let mut monitor = ConservationMonitor::new(&grid, &initial, opts)?;
    let mut obs = |s: &StepState| monitor.observe(s);
    let forcing = ForcingSpec::zero();
    match cfg.model {
        Model::Stokes => {
            stokes::run(&grid, &config, &forcing, cfg.t_final, &initial, &mut obs)?;
        }
        Model::NavierStokes => {
            navier_stokes::run(&grid, &config, &settings.nonlinear, &forcing, cfg.t_final, &initial, &mut obs)?;
        }
    }
    let report = monitor.finish();
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    let mut out = Outputs::default();
    out.add(&cfg.out, "conservation.csv", buf);
    let text = format!(
        "{} steps: energy {} (max increase {:.2e}), momentum {} (max drift {:.2e}, angular {:.2e}), mass {}\n",
        report.steps(),
        verdict(report.energy_ok()),
        report.max_energy_increase,
        verdict(report.momentum_ok()),
        report.max_momentum_drift,
        report.max_angular_drift,
        verdict(report.mass_ok()),
    );
    let failed = (!report.ok()).then(|| "conservation audit flagged violations".to_string());
    Ok(Report {
        outputs: out,
        text,
        failed,
    })
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "VIOLATED"
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Csv(_) => EXIT_IO,
        e if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_CONFIG,
    }
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cfg = match resolve(&cli.command) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let result = match cfg.mode {
        Mode::Solve => cmd_solve(&cfg),
        Mode::Converge => cmd_converge(&cfg),
        Mode::Robust => cmd_robust(&cfg),
        Mode::Conserve => cmd_conserve(&cfg),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let mut outputs = report.outputs;
    outputs.add(&cfg.out, "resolved_config.txt", cfg.to_text().into_bytes());
    if let Err(e) = outputs.write() {
        eprintln!("error: {e}");
        return exit_code(&e);
    }
    print!("{}", report.text);
    match report.failed {
        Some(msg) => {
            eprintln!("error: {msg}");
            EXIT_NUMERICAL
        }
        None => EXIT_OK,
    }
}
