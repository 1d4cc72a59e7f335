//! Flat key-value run configuration.
//!
//! One `key = value` pair per line, `#` starts a comment. Parsing collects
//! every validation error (with its line number) instead of stopping at the
//! first.

use std::fmt;
use std::path::PathBuf;

/// Command selector; must agree with the CLI subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    StudyConvergence,
    Optimize,
    Verify,
    DemoContact,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "solve" => Some(Self::Solve),
            "study-convergence" => Some(Self::StudyConvergence),
            "optimize" => Some(Self::Optimize),
            "verify" => Some(Self::Verify),
            "demo-contact" => Some(Self::DemoContact),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::StudyConvergence => "study-convergence",
            Self::Optimize => "optimize",
            Self::Verify => "verify",
            Self::DemoContact => "demo-contact",
        }
    }
}

/// Mesh source: structured generator or mesh file.
#[derive(Clone, Debug, PartialEq)]
pub enum MeshSource {
    Generate {
        nx: usize,
        ny: usize,
        width: f64,
        height: f64,
    },
    File(PathBuf),
}

/// Scalar time modulation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeSpec {
    Const(f64),
    /// `a * t`.
    Ramp(f64),
    /// `a + b * t`.
    Affine(f64, f64),
    /// `a * sin(2π f t)`.
    Sin(f64, f64),
}

impl TimeSpec {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeSpec::Const(a) => *a,
            TimeSpec::Ramp(a) => a * t,
            TimeSpec::Affine(a, b) => a + b * t,
            TimeSpec::Sin(a, f) => a * (2.0 * std::f64::consts::PI * f * t).sin(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostChoice {
    Tracking,
    BoundaryMisfit,
}

/// Fully resolved run configuration with validated ranges.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub mesh: MeshSource,
    pub beta: f64,
    pub eta: f64,
    pub omega: f64,
    pub g: f64,
    pub body_force: [f64; 2],
    pub traction: [f64; 2],
    pub theta: TimeSpec,
    pub zeta: TimeSpec,
    pub horizon: f64,
    pub steps: usize,
    pub uzawa_tol: f64,
    pub inner_tol: f64,
    pub max_iter: usize,
    pub schedule: Vec<u32>,
    pub probe_times: Vec<f64>,
    pub cost: CostChoice,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub eval_time: f64,
    pub budget: usize,
    pub box_lo: [f64; 6],
    pub box_hi: [f64; 6],
    pub delta0: f64,
    pub target_point: Option<[f64; 6]>,
    pub kkt_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::DemoContact,
            mesh: MeshSource::Generate {
                nx: 8,
                ny: 8,
                width: 2.0,
                height: 1.0,
            },
            beta: 1.0,
            eta: 0.5,
            omega: 1.0,
            g: 0.1,
            body_force: [0.0, -0.3],
            traction: [0.5, -0.1],
            theta: TimeSpec::Const(1.0),
            zeta: TimeSpec::Const(1.0),
            horizon: 1.0,
            steps: 20,
            uzawa_tol: 1e-10,
            inner_tol: 1e-12,
            max_iter: 10_000,
            schedule: vec![1, 2, 4, 8, 16, 32],
            probe_times: vec![0.5, 1.0],
            cost: CostChoice::Tracking,
            c1: 1.0,
            c2: 1.0,
            c3: 0.0,
            eval_time: 0.5,
            budget: 300,
            box_lo: [0.5, 0.2, 0.5, 0.2, 0.2, 0.05],
            box_hi: [2.0, 1.0, 2.0, 2.0, 2.0, 0.3],
            delta0: 1e-3,
            target_point: None,
            kkt_tol: 1e-7,
        }
    }
}

/// One validation failure with its 1-based source line.
#[derive(Clone, Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.message)
        } else {
            write!(f, "{}", self.message)
        }
    }
}

struct Parser {
    config: RunConfig,
    errors: Vec<ConfigError>,
    saw_command: bool,
}

impl Parser {
    fn err(&mut self, line: usize, message: impl Into<String>) {
        self.errors.push(ConfigError {
            line,
            message: message.into(),
        });
    }

    fn float(&mut self, line: usize, key: &str, value: &str) -> Option<f64> {
        match value.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.err(line, format!("{key}: expected a finite number, got '{value}'"));
                None
            }
        }
    }

    fn integer(&mut self, line: usize, key: &str, value: &str) -> Option<usize> {
        match value.parse::<usize>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(line, format!("{key}: expected a nonnegative integer, got '{value}'"));
                None
            }
        }
    }

    fn float_in(
        &mut self,
        line: usize,
        key: &str,
        value: &str,
        check: impl Fn(f64) -> bool,
        requirement: &str,
    ) -> Option<f64> {
        let v = self.float(line, key, value)?;
        if check(v) {
            Some(v)
        } else {
            self.err(line, format!("{key}: must satisfy {requirement} (got {v})"));
            None
        }
    }

    fn vec2(&mut self, line: usize, key: &str, value: &str) -> Option<[f64; 2]> {
        let parts: Vec<&str> = value.split_whitespace().collect();
        if parts.len() != 2 {
            self.err(line, format!("{key}: expected two numbers, got '{value}'"));
            return None;
        }
        let x = self.float(line, key, parts[0])?;
        let y = self.float(line, key, parts[1])?;
        Some([x, y])
    }

    fn pair(&mut self, line: usize, key: &str, value: &str) -> Option<[f64; 2]> {
        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            self.err(line, format!("{key}: expected 'lo,hi', got '{value}'"));
            return None;
        }
        let lo = self.float(line, key, parts[0])?;
        let hi = self.float(line, key, parts[1])?;
        Some([lo, hi])
    }

    fn time_spec(&mut self, line: usize, key: &str, value: &str) -> Option<TimeSpec> {
        let parts: Vec<&str> = value.split(':').map(str::trim).collect();
        match parts.as_slice() {
            ["const", a] => self.float(line, key, a).map(TimeSpec::Const),
            ["ramp", a] => self.float(line, key, a).map(TimeSpec::Ramp),
            ["affine", a, b] => {
                let a = self.float(line, key, a)?;
                let b = self.float(line, key, b)?;
                Some(TimeSpec::Affine(a, b))
            }
            ["sin", a, f] => {
                let a = self.float(line, key, a)?;
                let f = self.float(line, key, f)?;
                Some(TimeSpec::Sin(a, f))
            }
            _ => {
                self.err(
                    line,
                    format!(
                        "{key}: expected 'const:a', 'ramp:a', 'affine:a:b' or 'sin:a:f', got '{value}'"
                    ),
                );
                None
            }
        }
    }

    fn mesh(&mut self, line: usize, value: &str) -> Option<MeshSource> {
        if let Some(rest) = value.strip_prefix("generate:") {
            let parts: Vec<&str> = rest.split(':').collect();
            if parts.len() != 2 {
                self.err(line, format!("mesh: expected 'generate:NXxNY:WxH', got '{value}'"));
                return None;
            }
            let dims: Vec<&str> = parts[0].split('x').collect();
            let size: Vec<&str> = parts[1].split('x').collect();
            if dims.len() != 2 || size.len() != 2 {
                self.err(line, format!("mesh: expected 'generate:NXxNY:WxH', got '{value}'"));
                return None;
            }
            let nx = self.integer(line, "mesh nx", dims[0])?;
            let ny = self.integer(line, "mesh ny", dims[1])?;
            let width = self.float_in(line, "mesh width", size[0], |v| v > 0.0, "width > 0")?;
            let height = self.float_in(line, "mesh height", size[1], |v| v > 0.0, "height > 0")?;
            if nx == 0 || ny == 0 {
                self.err(line, "mesh: cell counts must be at least 1");
                return None;
            }
            Some(MeshSource::Generate {
                nx,
                ny,
                width,
                height,
            })
        } else if let Some(path) = value.strip_prefix("file:") {
            Some(MeshSource::File(PathBuf::from(path.trim())))
        } else {
            self.err(line, format!("mesh: expected 'generate:...' or 'file:path', got '{value}'"));
            None
        }
    }

    fn apply(&mut self, line: usize, key: &str, value: &str) {
        match key {
            "command" => {
                self.saw_command = true;
                match Command::parse(value) {
                    Some(c) => self.config.command = c,
                    None => self.err(
                        line,
                        format!(
                            "command: expected one of solve, study-convergence, optimize, verify, demo-contact; got '{value}'"
                        ),
                    ),
                }
            }
            "mesh" => {
                if let Some(m) = self.mesh(line, value) {
                    self.config.mesh = m;
                }
            }
            "beta" => {
                if let Some(v) = self.float_in(line, key, value, |v| v >= 0.0, "beta >= 0") {
                    self.config.beta = v;
                }
            }
            "eta" => {
                if let Some(v) = self.float_in(line, key, value, |v| v >= 0.0, "eta >= 0") {
                    self.config.eta = v;
                }
            }
            "omega" => {
                if let Some(v) = self.float_in(line, key, value, |v| v >= 0.0, "omega >= 0") {
                    self.config.omega = v;
                }
            }
            "g" => {
                if let Some(v) = self.float_in(line, key, value, |v| v >= 0.0, "g >= 0") {
                    self.config.g = v;
                }
            }
            "body_force" => {
                if let Some(v) = self.vec2(line, key, value) {
                    self.config.body_force = v;
                }
            }
            "traction" => {
                if let Some(v) = self.vec2(line, key, value) {
                    self.config.traction = v;
                }
            }
            "theta" => {
                if let Some(v) = self.time_spec(line, key, value) {
                    self.config.theta = v;
                }
            }
            "zeta" => {
                if let Some(v) = self.time_spec(line, key, value) {
                    self.config.zeta = v;
                }
            }
            "T" => {
                if let Some(v) = self.float_in(line, key, value, |v| v > 0.0, "T > 0") {
                    self.config.horizon = v;
                }
            }
            "N" => match self.integer(line, key, value) {
                Some(v) if v >= 1 => self.config.steps = v,
                Some(_) => self.err(line, "N: must be at least 1"),
                None => {}
            },
            "uzawa_tol" => {
                if let Some(v) = self.float_in(line, key, value, |v| v > 0.0, "uzawa_tol > 0") {
                    self.config.uzawa_tol = v;
                }
            }
            "inner_tol" => {
                if let Some(v) = self.float_in(line, key, value, |v| v > 0.0, "inner_tol > 0") {
                    self.config.inner_tol = v;
                }
            }
            "max_iter" => match self.integer(line, key, value) {
                Some(v) if v >= 1 => self.config.max_iter = v,
                Some(_) => self.err(line, "max_iter: must be at least 1"),
                None => {}
            },
            "schedule" => {
                let mut parsed = Vec::new();
                let mut ok = true;
                for part in value.split(',').map(str::trim) {
                    match part.parse::<u32>() {
                        Ok(v) if v >= 1 => parsed.push(v),
                        _ => {
                            self.err(line, format!("schedule: invalid index '{part}'"));
                            ok = false;
                        }
                    }
                }
                if ok && parsed.windows(2).any(|w| w[0] >= w[1]) {
                    self.err(line, "schedule: indices must be strictly increasing");
                    ok = false;
                }
                if ok && !parsed.is_empty() {
                    self.config.schedule = parsed;
                }
            }
            "probe_times" => {
                let mut parsed = Vec::new();
                let mut ok = true;
                for part in value.split(',').map(str::trim) {
                    match part.parse::<f64>() {
                        Ok(v) if v >= 0.0 => parsed.push(v),
                        _ => {
                            self.err(line, format!("probe_times: invalid time '{part}'"));
                            ok = false;
                        }
                    }
                }
                if ok && !parsed.is_empty() {
                    self.config.probe_times = parsed;
                }
            }
            "cost" => match value {
                "tracking" => self.config.cost = CostChoice::Tracking,
                "boundary-misfit" => self.config.cost = CostChoice::BoundaryMisfit,
                _ => self.err(
                    line,
                    format!("cost: expected 'tracking' or 'boundary-misfit', got '{value}'"),
                ),
            },
            "c1" | "c2" | "c3" => {
                if let Some(v) =
                    self.float_in(line, key, value, |v| v >= 0.0, "cost weights >= 0")
                {
                    match key {
                        "c1" => self.config.c1 = v,
                        "c2" => self.config.c2 = v,
                        _ => self.config.c3 = v,
                    }
                }
            }
            "eval_time" => {
                if let Some(v) = self.float_in(line, key, value, |v| v >= 0.0, "eval_time >= 0") {
                    self.config.eval_time = v;
                }
            }
            "budget" => match self.integer(line, key, value) {
                Some(v) if v >= 1 => self.config.budget = v,
                Some(_) => self.err(line, "budget: must be at least 1"),
                None => {}
            },
            "box_beta" | "box_eta" | "box_omega" | "box_a0" | "box_a2" | "box_g" => {
                if let Some([lo, hi]) = self.pair(line, key, value) {
                    let axis = match key {
                        "box_beta" => 0,
                        "box_eta" => 1,
                        "box_omega" => 2,
                        "box_a0" => 3,
                        "box_a2" => 4,
                        _ => 5,
                    };
                    if lo > hi {
                        self.err(line, format!("{key}: lower bound exceeds upper bound"));
                    } else {
                        self.config.box_lo[axis] = lo;
                        self.config.box_hi[axis] = hi;
                    }
                }
            }
            "delta0" => {
                if let Some(v) = self.float_in(line, key, value, |v| v > 0.0, "delta0 > 0") {
                    self.config.delta0 = v;
                }
            }
            "target_point" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 6 {
                    self.err(line, format!("target_point: expected six numbers, got '{value}'"));
                } else {
                    let mut arr = [0.0; 6];
                    let mut ok = true;
                    for (slot, part) in arr.iter_mut().zip(&parts) {
                        match self.float(line, key, part) {
                            Some(v) => *slot = v,
                            None => ok = false,
                        }
                    }
                    if ok {
                        self.config.target_point = Some(arr);
                    }
                }
            }
            "kkt_tol" => {
                if let Some(v) = self.float_in(line, key, value, |v| v > 0.0, "kkt_tol > 0") {
                    self.config.kkt_tol = v;
                }
            }
            _ => self.err(line, format!("unknown key '{key}'")),
        }
    }
}

/// Parses and validates; returns either a complete config or every error.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let mut parser = Parser {
        config: RunConfig::default(),
        errors: Vec::new(),
        saw_command: false,
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match content.split_once('=') {
            Some((key, value)) => parser.apply(line, key.trim(), value.trim()),
            None => parser.err(line, format!("expected 'key = value', got '{content}'")),
        }
    }
    if !parser.saw_command {
        parser.err(0, "missing required key 'command'".to_string());
    }
    // Cross-field checks.
    if let MeshSource::File(path) = &parser.config.mesh {
        if !path.exists() {
            parser.err(0, format!("mesh file '{}' does not exist", path.display()));
        }
    }
    if parser.errors.is_empty() {
        Ok(parser.config)
    } else {
        Err(parser.errors)
    }
}

/// Resolved-config echo used in run manifests.
pub fn echo(config: &RunConfig) -> String {
    let mesh = match &config.mesh {
        MeshSource::Generate {
            nx,
            ny,
            width,
            height,
        } => format!("generate:{nx}x{ny}:{width}x{height}"),
        MeshSource::File(p) => format!("file:{}", p.display()),
    };
    let time_spec = |t: &TimeSpec| match t {
        TimeSpec::Const(a) => format!("const:{a}"),
        TimeSpec::Ramp(a) => format!("ramp:{a}"),
        TimeSpec::Affine(a, b) => format!("affine:{a}:{b}"),
        TimeSpec::Sin(a, f) => format!("sin:{a}:{f}"),
    };
    let mut out = String::new();
    use std::fmt::Write;
    let _ = writeln!(out, "command = {}", config.command.name());
    let _ = writeln!(out, "mesh = {mesh}");
    let _ = writeln!(out, "beta = {}", config.beta);
    let _ = writeln!(out, "eta = {}", config.eta);
    let _ = writeln!(out, "omega = {}", config.omega);
    let _ = writeln!(out, "g = {}", config.g);
    let _ = writeln!(out, "body_force = {} {}", config.body_force[0], config.body_force[1]);
    let _ = writeln!(out, "traction = {} {}", config.traction[0], config.traction[1]);
    let _ = writeln!(out, "theta = {}", time_spec(&config.theta));
    let _ = writeln!(out, "zeta = {}", time_spec(&config.zeta));
    let _ = writeln!(out, "T = {}", config.horizon);
    let _ = writeln!(out, "N = {}", config.steps);
    let _ = writeln!(out, "uzawa_tol = {}", config.uzawa_tol);
    let _ = writeln!(out, "inner_tol = {}", config.inner_tol);
    let _ = writeln!(out, "max_iter = {}", config.max_iter);
    out
}
