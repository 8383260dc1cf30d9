//! Line-based `key = value` configuration with dotted section keys, plus
//! command-line overrides in the same syntax.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use ks2d::diagnostics::blowup_threshold;

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    Run,
    Converge,
    Blowup,
}

#[derive(Debug, Clone)]
pub enum Initial {
    Constant { value: f64 },
    Gaussian { center: [f64; 2], width: f64, mass: f64 },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub tau: f64,
    pub final_time: f64,
    pub chi: f64,
    pub alpha: f64,
    pub initial: Initial,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Moment weight center and radii; None uses the mesh defaults.
    pub moment: Option<([f64; 2], f64, f64)>,
    pub output_dir: PathBuf,
    /// Snapshot cadence in steps; 0 disables snapshots.
    pub snapshot_every: usize,
    pub converge_levels: usize,
    pub converge_coupling: f64,
    pub blowup_growth_factor: f64,
    pub blowup_moment_window: usize,
    /// Non-fatal advisories collected during validation.
    pub warnings: Vec<String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

/// Raw key/value entries with the line they came from (0 = command line).
type Raw = BTreeMap<String, (String, usize)>;

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "domain.x0",
    "domain.x1",
    "domain.y0",
    "domain.y1",
    "mesh.nx",
    "mesh.ny",
    "scheme.tau",
    "scheme.final_time",
    "scheme.chi",
    "scheme.alpha",
    "initial.kind",
    "initial.value",
    "initial.center_x",
    "initial.center_y",
    "initial.width",
    "initial.mass",
    "newton.tol",
    "newton.max_iter",
    "moment.qx",
    "moment.qy",
    "moment.r1",
    "moment.r2",
    "output.directory",
    "output.snapshot_every",
    "converge.levels",
    "converge.coupling",
    "blowup.growth_factor",
    "blowup.moment_window",
];

fn parse_lines(text: &str, raw: &mut Raw) -> Result<(), ConfigError> {
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = match line.split_once('#') {
            Some((before, _)) => before,
            None => line,
        }
        .trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| {
            ConfigError(format!("line {line_no}: expected `key = value`, got `{content}`"))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!("line {line_no}: unknown key `{key}`")));
        }
        raw.insert(key, (value.trim().to_string(), line_no));
    }
    Ok(())
}

fn parse_overrides(args: &[String], raw: &mut Raw) -> Result<(), ConfigError> {
    for arg in args {
        let (key, value) = arg.split_once('=').ok_or_else(|| {
            ConfigError(format!("override `{arg}`: expected `key=value`"))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!("override: unknown key `{key}`")));
        }
        raw.insert(key, (value.trim().to_string(), 0));
    }
    Ok(())
}

fn place(line: usize) -> String {
    if line == 0 {
        "command line".to_string()
    } else {
        format!("line {line}")
    }
}

fn get_f64(raw: &Raw, key: &str, default: f64) -> Result<f64, ConfigError> {
    match raw.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse::<f64>().map_err(|_| {
            ConfigError(format!("{}: key `{key}`: expected a number, got `{v}`", place(*line)))
        }),
    }
}

fn get_usize(raw: &Raw, key: &str, default: usize) -> Result<usize, ConfigError> {
    match raw.get(key) {
        None => Ok(default),
        Some((v, line)) => v.parse::<usize>().map_err(|_| {
            ConfigError(format!(
                "{}: key `{key}`: expected a nonnegative integer, got `{v}`",
                place(*line)
            ))
        }),
    }
}

fn require_positive(value: f64, key: &str) -> Result<f64, ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ConfigError(format!("key `{key}` must be positive, got {value}")))
    }
}

/// Parse the optional config file plus `key=value` overrides into a validated
/// configuration.
pub fn parse_config(file: Option<&str>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut raw = Raw::new();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config file `{path}`: {e}")))?;
        parse_lines(&text, &mut raw)?;
    }
    parse_overrides(overrides, &mut raw)?;

    let mode = match raw.get("mode") {
        None => Mode::Run,
        Some((v, line)) => match v.as_str() {
            "run" => Mode::Run,
            "converge" => Mode::Converge,
            "blowup" => Mode::Blowup,
            other => {
                return Err(ConfigError(format!(
                    "{}: key `mode`: expected run, converge or blowup, got `{other}`",
                    place(*line)
                )))
            }
        },
    };

    let x0 = get_f64(&raw, "domain.x0", 0.0)?;
    let x1 = get_f64(&raw, "domain.x1", 1.0)?;
    let y0 = get_f64(&raw, "domain.y0", 0.0)?;
    let y1 = get_f64(&raw, "domain.y1", 1.0)?;
    if !(x1 > x0) || !(y1 > y0) {
        return Err(ConfigError(format!(
            "domain must be nondegenerate: x {x0}..{x1}, y {y0}..{y1}"
        )));
    }
    let nx = get_usize(&raw, "mesh.nx", 32)?;
    let ny = get_usize(&raw, "mesh.ny", 32)?;
    if nx == 0 || ny == 0 {
        return Err(ConfigError("keys `mesh.nx` and `mesh.ny` must be at least 1".into()));
    }
    let dx = (x1 - x0) / nx as f64;

    let tau = require_positive(get_f64(&raw, "scheme.tau", dx)?, "scheme.tau")?;
    let final_time =
        require_positive(get_f64(&raw, "scheme.final_time", 1.0)?, "scheme.final_time")?;
    let chi = get_f64(&raw, "scheme.chi", 1.0)?;
    if !(chi >= 0.0) {
        return Err(ConfigError(format!("key `scheme.chi` must be nonnegative, got {chi}")));
    }
    let alpha = require_positive(get_f64(&raw, "scheme.alpha", 1.0)?, "scheme.alpha")?;

    let initial = match raw.get("initial.kind").map(|(v, _)| v.as_str()) {
        None | Some("constant") => Initial::Constant {
            value: require_positive(get_f64(&raw, "initial.value", 1.0)?, "initial.value")?,
        },
        Some("gaussian") => Initial::Gaussian {
            center: [
                get_f64(&raw, "initial.center_x", 0.5 * (x0 + x1))?,
                get_f64(&raw, "initial.center_y", 0.5 * (y0 + y1))?,
            ],
            width: require_positive(get_f64(&raw, "initial.width", 0.1)?, "initial.width")?,
            mass: require_positive(get_f64(&raw, "initial.mass", 1.0)?, "initial.mass")?,
        },
        Some(other) => {
            return Err(ConfigError(format!(
                "key `initial.kind`: expected constant or gaussian, got `{other}`"
            )))
        }
    };

    let newton_tol = require_positive(get_f64(&raw, "newton.tol", 1e-10)?, "newton.tol")?;
    let newton_max_iter = get_usize(&raw, "newton.max_iter", 50)?;
    if newton_max_iter == 0 {
        return Err(ConfigError("key `newton.max_iter` must be at least 1".into()));
    }

    let moment = if raw.contains_key("moment.r1") || raw.contains_key("moment.r2") {
        let qx = get_f64(&raw, "moment.qx", 0.5 * (x0 + x1))?;
        let qy = get_f64(&raw, "moment.qy", 0.5 * (y0 + y1))?;
        let r1 = require_positive(get_f64(&raw, "moment.r1", 0.0)?, "moment.r1")?;
        let r2 = require_positive(get_f64(&raw, "moment.r2", 0.0)?, "moment.r2")?;
        if !(r1 < r2) {
            return Err(ConfigError(format!(
                "moment radii must satisfy r1 < r2, got r1={r1}, r2={r2}"
            )));
        }
        Some(([qx, qy], r1, r2))
    } else {
        None
    };

    let output_dir = PathBuf::from(
        raw.get("output.directory")
            .map(|(v, _)| v.clone())
            .unwrap_or_else(|| "out".to_string()),
    );
    let snapshot_every = get_usize(&raw, "output.snapshot_every", 0)?;

    let converge_levels = get_usize(&raw, "converge.levels", 3)?;
    if converge_levels < 2 {
        return Err(ConfigError("key `converge.levels` must be at least 2".into()));
    }
    let converge_coupling =
        require_positive(get_f64(&raw, "converge.coupling", 1.0)?, "converge.coupling")?;
    let blowup_growth_factor = require_positive(
        get_f64(&raw, "blowup.growth_factor", 50.0)?,
        "blowup.growth_factor",
    )?;
    let blowup_moment_window = get_usize(&raw, "blowup.moment_window", 20)?;

    let mut warnings = Vec::new();
    if tau > dx {
        warnings.push(format!(
            "scheme.tau = {tau} exceeds the grid spacing {dx}; the first-order error \
             estimate assumes tau <= C h"
        ));
    }
    let threshold = blowup_threshold(alpha, chi.max(f64::MIN_POSITIVE)).unwrap_or(f64::INFINITY);
    let mass = match &initial {
        Initial::Constant { value } => value * (x1 - x0) * (y1 - y0),
        Initial::Gaussian { mass, .. } => *mass,
    };
    if chi > 0.0 && mass > threshold {
        warnings.push(format!(
            "initial mass {mass:.6} exceeds the blow-up threshold 8*pi/(alpha*chi) = \
             {threshold:.6}; concentrated data may blow up"
        ));
    }

    Ok(RunConfig {
        mode,
        x_range: (x0, x1),
        y_range: (y0, y1),
        nx,
        ny,
        tau,
        final_time,
        chi,
        alpha,
        initial,
        newton_tol,
        newton_max_iter,
        moment,
        output_dir,
        snapshot_every,
        converge_levels,
        converge_coupling,
        blowup_growth_factor,
        blowup_moment_window,
        warnings,
    })
}

impl RunConfig {
    /// Effective configuration in the same `key = value` syntax it was read
    /// from, suitable for echoing into the output directory.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mode = match self.mode {
            Mode::Run => "run",
            Mode::Converge => "converge",
            Mode::Blowup => "blowup",
        };
        let _ = writeln!(s, "mode = {mode}");
        let _ = writeln!(s, "domain.x0 = {}", self.x_range.0);
        let _ = writeln!(s, "domain.x1 = {}", self.x_range.1);
        let _ = writeln!(s, "domain.y0 = {}", self.y_range.0);
        let _ = writeln!(s, "domain.y1 = {}", self.y_range.1);
        let _ = writeln!(s, "mesh.nx = {}", self.nx);
        let _ = writeln!(s, "mesh.ny = {}", self.ny);
        let _ = writeln!(s, "scheme.tau = {}", self.tau);
        let _ = writeln!(s, "scheme.final_time = {}", self.final_time);
        let _ = writeln!(s, "scheme.chi = {}", self.chi);
        let _ = writeln!(s, "scheme.alpha = {}", self.alpha);
        match &self.initial {
            Initial::Constant { value } => {
                let _ = writeln!(s, "initial.kind = constant");
                let _ = writeln!(s, "initial.value = {value}");
            }
            Initial::Gaussian { center, width, mass } => {
                let _ = writeln!(s, "initial.kind = gaussian");
                let _ = writeln!(s, "initial.center_x = {}", center[0]);
                let _ = writeln!(s, "initial.center_y = {}", center[1]);
                let _ = writeln!(s, "initial.width = {width}");
                let _ = writeln!(s, "initial.mass = {mass}");
            }
        }
        let _ = writeln!(s, "newton.tol = {}", self.newton_tol);
        let _ = writeln!(s, "newton.max_iter = {}", self.newton_max_iter);
        if let Some((q, r1, r2)) = self.moment {
            let _ = writeln!(s, "moment.qx = {}", q[0]);
            let _ = writeln!(s, "moment.qy = {}", q[1]);
            let _ = writeln!(s, "moment.r1 = {r1}");
            let _ = writeln!(s, "moment.r2 = {r2}");
        }
        let _ = writeln!(s, "output.directory = {}", self.output_dir.display());
        let _ = writeln!(s, "output.snapshot_every = {}", self.snapshot_every);
        let _ = writeln!(s, "converge.levels = {}", self.converge_levels);
        let _ = writeln!(s, "converge.coupling = {}", self.converge_coupling);
        let _ = writeln!(s, "blowup.growth_factor = {}", self.blowup_growth_factor);
        let _ = writeln!(s, "blowup.moment_window = {}", self.blowup_moment_window);
        s
    }
}
