//! Sectioned `key = value` run files.
//!
//! ```text
//! [system]
//! builtin = expanding-sym
//!
//! [run]
//! command = sim-histogram
//! steps = 1e7
//! seed = 0
//!
//! [output]
//! dir = out
//! svg = true
//! ```

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use slowfast_core::resonance::ThreeScaleSpec;
use slowfast_core::simulate::{AveragingReference, Y0Policy};
use slowfast_core::system::{
    make_builtin, validate_system, Builtin, Coupling, DriftSpec, FastDriverSpec, NoiseDensity, Polynomial, SlowBox,
    SystemSpec,
};

use crate::error::{CliError, ConfigError};

type Result<T> = std::result::Result<T, ConfigError>;

const SECTIONS: [&str; 3] = ["system", "run", "output"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub command: Command,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub emit_svg: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SystemConfig {
    Builtin(BuiltinConfig),
    Inline(InlineSystem),
}

/// A named example with optional parameter overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltinConfig {
    pub name: String,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub amplitude: Option<f64>,
    pub rho: Option<f64>,
}

/// `B(x, y) = p(x) + amplitude sin(2 pi y)` on `[lo, hi]`.
#[derive(Clone, Debug, PartialEq)]
pub struct InlineSystem {
    pub name: String,
    pub coeffs: Vec<f64>,
    pub amplitude: f64,
    pub driver: InlineDriver,
    pub epsilon: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InlineDriver {
    Expanding { multiplier: u64 },
    Iid,
    Additive { noise: Vec<f64> },
}

/// Names accepted by `builtin`: the core examples plus the designed triple.
pub const BUILTIN_CHOICES: [&str; 8] = [
    "expanding-sym",
    "expanding-asym",
    "markov-sym",
    "markov-asym",
    "zero-drift-doubling",
    "iid-bessel",
    "three-scale",
    "designed-three-scale",
];

#[derive(Clone, Debug)]
pub enum BuiltSystem {
    TwoScale(SystemSpec),
    ThreeScale(ThreeScaleSpec),
}

impl SystemConfig {
    pub fn build(&self) -> std::result::Result<BuiltSystem, CliError> {
        match self {
            SystemConfig::Builtin(b) => b.build(),
            SystemConfig::Inline(s) => Ok(BuiltSystem::TwoScale(s.build()?)),
        }
    }
}

impl BuiltinConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.to_string(),
            epsilon: None,
            gamma: None,
            amplitude: None,
            rho: None,
        }
    }

    fn build(&self) -> std::result::Result<BuiltSystem, CliError> {
        match self.name.as_str() {
            "designed-three-scale" => Ok(BuiltSystem::ThreeScale(ThreeScaleSpec::designed(
                self.gamma.unwrap_or(0.4),
                self.amplitude.unwrap_or(1.0),
                self.epsilon.unwrap_or(0.02),
                self.rho.unwrap_or(0.2),
            )?)),
            "three-scale" => {
                let base = ThreeScaleSpec::reference_triple(0.02, 0.1)?;
                Ok(BuiltSystem::ThreeScale(ThreeScaleSpec::reference_triple(
                    self.epsilon.unwrap_or(base.epsilon),
                    self.rho.unwrap_or(base.rho),
                )?))
            }
            "iid-bessel" => {
                let s = slowfast_core::system::iid_bessel(
                    self.gamma.unwrap_or(0.1),
                    self.amplitude.unwrap_or(1.0),
                    self.epsilon.unwrap_or(1.0 / 40.0),
                );
                Ok(BuiltSystem::TwoScale(validate_system(s)?))
            }
            name => match make_builtin(name)? {
                Builtin::TwoScale(s) => {
                    let s = match self.epsilon {
                        Some(e) => s.with_epsilon(e),
                        None => s,
                    };
                    Ok(BuiltSystem::TwoScale(validate_system(s)?))
                }
                Builtin::ThreeScale(t) => Ok(BuiltSystem::ThreeScale(t)),
            },
        }
    }

    /// Override keys that apply to this example.
    fn allowed(&self) -> &'static [&'static str] {
        match self.name.as_str() {
            "iid-bessel" => &["epsilon", "gamma", "amplitude"],
            "designed-three-scale" => &["epsilon", "gamma", "amplitude", "rho"],
            "three-scale" => &["epsilon", "rho"],
            _ => &["epsilon"],
        }
    }
}

impl InlineSystem {
    fn build(&self) -> std::result::Result<SystemSpec, CliError> {
        let driver = match &self.driver {
            InlineDriver::Expanding { multiplier } => FastDriverSpec::DeterministicExpanding {
                multiplier: u32::try_from(*multiplier).map_err(|_| ConfigError::Range {
                    key: "multiplier".into(),
                    value: multiplier.to_string(),
                    message: "too large".into(),
                })?,
                coupling: Coupling::slow_coordinate(),
            },
            InlineDriver::Iid => FastDriverSpec::AdditiveMarkov {
                noise: NoiseDensity::uniform(),
                coupling: Coupling::slow_coordinate(),
            },
            InlineDriver::Additive { noise } => FastDriverSpec::AdditiveMarkov {
                noise: NoiseDensity::from_bins(noise.clone()),
                coupling: Coupling::slow_coordinate(),
            },
        };
        let spec = SystemSpec {
            name: self.name.clone(),
            drift: DriftSpec::poly_sine(Polynomial::new(self.coeffs.clone()), self.amplitude, self.lo, self.hi),
            driver,
            epsilon: self.epsilon,
            slow_domain: SlowBox::interval(self.lo, self.hi),
        };
        Ok(validate_system(spec)?)
    }
}

/// `y0` key: absent, a fixed value, or `uniform`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Y0Config {
    #[default]
    Default,
    Fixed(f64),
    Uniform,
}

impl Y0Config {
    pub fn policy(&self, driver: &FastDriverSpec) -> Y0Policy {
        match self {
            Y0Config::Default => Y0Policy::default_for(driver),
            Y0Config::Fixed(y) => Y0Policy::Fixed(*y),
            Y0Config::Uniform => Y0Policy::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramParams {
    pub steps: u64,
    pub x0: f64,
    pub y0: Y0Config,
    pub bins: u64,
    /// Defaults to the slow domain.
    pub range: Option<(f64, f64)>,
    /// Radius for the mass-near-attractors headline.
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragingParams {
    pub t_end: f64,
    pub replicas: u64,
    pub x0: f64,
    pub y0: Y0Config,
    pub threshold: f64,
    pub reference: AveragingReference,
    pub n_y: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExitParams {
    pub epsilons: Vec<f64>,
    pub replicas: u64,
    pub x0: f64,
    pub y0: Y0Config,
    pub v_lo: f64,
    pub v_hi: f64,
    pub cap: Option<f64>,
    /// Barrier estimate; the cap defaults to `10 exp(r_hat / eps)`.
    pub r_hat: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateParams {
    pub x_range: Option<(f64, f64)>,
    pub n_x: u64,
    pub n_y: u64,
    pub beta_nodes: u64,
    pub alpha_nodes: u64,
    pub b_max: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpMethod {
    Dp,
    HjRoot,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpParams {
    pub method: QpMethod,
    /// Nodes of the rate surface.
    pub n_x: u64,
    pub n_y: u64,
    /// Nodes of the DP graph.
    pub dp_nodes: u64,
    pub speeds: u64,
    /// Cells of the root method.
    pub n_cells: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainParams {
    pub attractors: Option<Vec<f64>>,
    pub delta: f64,
    pub transitions: u64,
    pub x0: f64,
    pub y0: Y0Config,
    pub max_steps: u64,
    pub qp: QpParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResonanceParams {
    pub steps: u64,
    pub subsample: u64,
    pub v0: f64,
    pub x0: f64,
    pub y0: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub v_nodes: u64,
    pub n_y: u64,
    pub n_cells: u64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    SimHistogram(HistogramParams),
    AveragingCheck(AveragingParams),
    ExitTimes(ExitParams),
    RateTables(RateParams),
    Quasipotential(QpParams),
    PredictOccupation(QpParams),
    BoundaryChain(ChainParams),
    Resonance(ResonanceParams),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SimHistogram(_) => "sim-histogram",
            Command::AveragingCheck(_) => "averaging-check",
            Command::ExitTimes(_) => "exit-times",
            Command::RateTables(_) => "rate-tables",
            Command::Quasipotential(_) => "quasipotential",
            Command::PredictOccupation(_) => "predict-occupation",
            Command::BoundaryChain(_) => "boundary-chain",
            Command::Resonance(_) => "resonance",
        }
    }
}

struct Entry {
    key: String,
    value: String,
    line: usize,
}

/// One section's entries; reads mark keys as used so leftovers can be
/// reported as unknown.
struct Table {
    name: &'static str,
    entries: Vec<Entry>,
    used: RefCell<BTreeSet<String>>,
}

fn range(key: &str, value: &str, message: &str) -> ConfigError {
    ConfigError::Range {
        key: key.into(),
        value: value.into(),
        message: message.into(),
    }
}

fn parse_real(key: &str, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(range(key, s, "expected a finite number")),
    }
}

/// Nonnegative integer, also written as `1e7`.
fn parse_count(key: &str, s: &str) -> Result<u64> {
    if let Ok(n) = s.parse::<u64>() {
        return Ok(n);
    }
    let v = parse_real(key, s)?;
    if v < 0.0 || v.fract() != 0.0 || v >= 18_446_744_073_709_551_616.0 {
        return Err(range(key, s, "expected a nonnegative integer"));
    }
    Ok(v as u64)
}

impl Table {
    fn get(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.iter().find(|e| e.key == key)?;
        self.used.borrow_mut().insert(key.to_string());
        Some(e)
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError::MissingKey {
            section: self.name.into(),
            key: key.into(),
        }
    }

    fn text(&self, key: &str) -> Option<String> {
        self.get(key).map(|e| e.value.clone())
    }

    fn real(&self, key: &str) -> Result<Option<f64>> {
        self.get(key).map(|e| parse_real(key, &e.value)).transpose()
    }

    fn real_or(&self, key: &str, default: f64) -> Result<f64> {
        Ok(self.real(key)?.unwrap_or(default))
    }

    fn need_real(&self, key: &str) -> Result<f64> {
        self.real(key)?.ok_or_else(|| self.missing(key))
    }

    fn positive(&self, key: &str, v: f64) -> Result<f64> {
        if v > 0.0 {
            Ok(v)
        } else {
            Err(range(key, &v.to_string(), "must be positive"))
        }
    }

    fn count(&self, key: &str) -> Result<Option<u64>> {
        self.get(key).map(|e| parse_count(key, &e.value)).transpose()
    }

    /// Count that must be at least `min`.
    fn count_at_least(&self, key: &str, default: Option<u64>, min: u64) -> Result<u64> {
        let n = match (self.count(key)?, default) {
            (Some(n), _) => n,
            (None, Some(d)) => d,
            (None, None) => return Err(self.missing(key)),
        };
        if n < min {
            return Err(range(key, &n.to_string(), &format!("must be at least {min}")));
        }
        Ok(n)
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key)
            .map(|e| {
                e.value
                    .split(',')
                    .map(|s| parse_real(key, s.trim()))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()
    }

    fn pair(&self, lo: &str, hi: &str) -> Result<Option<(f64, f64)>> {
        match (self.real(lo)?, self.real(hi)?) {
            (None, None) => Ok(None),
            (Some(a), Some(b)) if a < b => Ok(Some((a, b))),
            (Some(a), Some(b)) => Err(range(lo, &a.to_string(), &format!("must be below {hi} = {b}"))),
            (Some(_), None) => Err(self.missing(hi)),
            (None, Some(_)) => Err(self.missing(lo)),
        }
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|e| match e.value.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                v => Err(range(key, v, "expected true or false")),
            })
            .transpose()
    }

    fn y0(&self) -> Result<Y0Config> {
        match self.get("y0") {
            None => Ok(Y0Config::Default),
            Some(e) if e.value == "uniform" => Ok(Y0Config::Uniform),
            Some(e) => Ok(Y0Config::Fixed(parse_real("y0", &e.value)?)),
        }
    }

    fn finish(&self) -> Result<()> {
        let used = self.used.borrow();
        match self.entries.iter().find(|e| !used.contains(&e.key)) {
            Some(e) => Err(ConfigError::UnknownKey {
                section: self.name.into(),
                key: e.key.clone(),
                line: e.line,
            }),
            None => Ok(()),
        }
    }
}

fn split_sections(text: &str) -> Result<[Table; 3]> {
    let mut tables = SECTIONS.map(|name| Table {
        name,
        entries: Vec::new(),
        used: RefCell::new(BTreeSet::new()),
    });
    let mut current: Option<usize> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let indent = raw.len() - raw.trim_start().len();
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or(ConfigError::Parse {
                line,
                column: indent + trimmed.len(),
                message: "section header must end with `]`".into(),
            })?;
            let k = SECTIONS
                .iter()
                .position(|s| *s == name.trim())
                .ok_or(ConfigError::Parse {
                    line,
                    column: indent + 2,
                    message: format!("unknown section [{}]", name.trim()),
                })?;
            current = Some(k);
            continue;
        }
        let eq = trimmed.find('=').ok_or(ConfigError::Parse {
            line,
            column: indent + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = trimmed[..eq].trim();
        let value = trimmed[eq + 1..].trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::Parse {
                line,
                column: indent + 1,
                message: format!("invalid key `{key}`"),
            });
        }
        if value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                column: indent + eq + 2,
                message: format!("empty value for `{key}`"),
            });
        }
        let k = current.ok_or(ConfigError::Parse {
            line,
            column: indent + 1,
            message: "key outside of any section".into(),
        })?;
        let table = &mut tables[k];
        if let Some(prev) = table.entries.iter().find(|e| e.key == key) {
            return Err(ConfigError::Parse {
                line,
                column: indent + 1,
                message: format!("duplicate key `{key}` (first set on line {})", prev.line),
            });
        }
        table.entries.push(Entry {
            key: key.to_string(),
            value: value.to_string(),
            line,
        });
    }
    Ok(tables)
}

fn read_system(t: &Table) -> Result<SystemConfig> {
    if let Some(name) = t.text("builtin") {
        if !BUILTIN_CHOICES.contains(&name.as_str()) {
            return Err(range(
                "builtin",
                &name,
                &format!("expected one of {}", BUILTIN_CHOICES.join(", ")),
            ));
        }
        let mut b = BuiltinConfig::named(&name);
        for key in b.allowed() {
            let v = t.real(key)?;
            match *key {
                "epsilon" => b.epsilon = v,
                "gamma" => b.gamma = v,
                "amplitude" => b.amplitude = v,
                _ => b.rho = v,
            }
        }
        return Ok(SystemConfig::Builtin(b));
    }
    let coeffs = match t.list("coeffs")? {
        Some(c) => c,
        None => return Err(t.missing("builtin")),
    };
    let driver = match t.text("driver").as_deref() {
        Some("expanding") => InlineDriver::Expanding {
            multiplier: t.count_at_least("multiplier", None, 2)?,
        },
        Some("iid") => InlineDriver::Iid,
        Some("additive") => InlineDriver::Additive {
            noise: t.list("noise")?.ok_or_else(|| t.missing("noise"))?,
        },
        Some(other) => return Err(range("driver", other, "expected expanding, iid or additive")),
        None => return Err(t.missing("driver")),
    };
    let (lo, hi) = t.pair("lo", "hi")?.ok_or_else(|| t.missing("lo"))?;
    Ok(SystemConfig::Inline(InlineSystem {
        name: t.text("name").unwrap_or_else(|| "inline".into()),
        coeffs,
        amplitude: t.need_real("amplitude")?,
        driver,
        epsilon: t.need_real("epsilon")?,
        lo,
        hi,
    }))
}

fn read_qp(t: &Table) -> Result<QpParams> {
    let method = match t.text("method").as_deref() {
        None | Some("hj-root") => QpMethod::HjRoot,
        Some("dp") => QpMethod::Dp,
        Some(other) => return Err(range("method", other, "expected dp or hj-root")),
    };
    Ok(QpParams {
        method,
        n_x: t.count_at_least("n_x", Some(121), 4)?,
        n_y: t.count_at_least("n_y", Some(256), 4)?,
        dp_nodes: t.count_at_least("dp_nodes", Some(601), 2)?,
        speeds: t.count_at_least("speeds", Some(60), 1)?,
        n_cells: t.count_at_least("n_cells", Some(400), 1)?,
    })
}

fn read_command(t: &Table) -> Result<Command> {
    let name = t.text("command").ok_or_else(|| t.missing("command"))?;
    Ok(match name.as_str() {
        "sim-histogram" => Command::SimHistogram(HistogramParams {
            steps: t.count_at_least("steps", None, 1)?,
            x0: t.real_or("x0", 0.0)?,
            y0: t.y0()?,
            bins: t.count_at_least("bins", Some(10_000), 1)?,
            range: t.pair("lo", "hi")?,
            radius: t.positive("radius", t.real_or("radius", 0.3)?)?,
        }),
        "averaging-check" => Command::AveragingCheck(AveragingParams {
            t_end: t.positive("t_end", t.need_real("t_end")?)?,
            replicas: t.count_at_least("replicas", Some(100), 1)?,
            x0: t.real_or("x0", 0.0)?,
            y0: t.y0()?,
            threshold: t.positive("threshold", t.real_or("threshold", 0.1)?)?,
            reference: match t.text("reference").as_deref() {
                None | Some("ode") => AveragingReference::Ode,
                Some("recursion") => AveragingReference::Recursion,
                Some(other) => return Err(range("reference", other, "expected ode or recursion")),
            },
            n_y: t.count_at_least("n_y", Some(512), 4)?,
        }),
        "exit-times" => {
            let epsilons = t.list("epsilons")?.ok_or_else(|| t.missing("epsilons"))?;
            if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
                return Err(range("epsilons", &e.to_string(), "each epsilon must lie in (0, 1)"));
            }
            let (v_lo, v_hi) = t.pair("v_lo", "v_hi")?.ok_or_else(|| t.missing("v_lo"))?;
            let cap = t.real("cap")?.map(|c| t.positive("cap", c)).transpose()?;
            let r_hat = t.real("r_hat")?.map(|r| t.positive("r_hat", r)).transpose()?;
            if cap.is_none() && r_hat.is_none() {
                return Err(t.missing("cap"));
            }
            Command::ExitTimes(ExitParams {
                epsilons,
                replicas: t.count_at_least("replicas", Some(1000), 1)?,
                x0: t.real_or("x0", 0.0)?,
                y0: t.y0()?,
                v_lo,
                v_hi,
                cap,
                r_hat,
            })
        }
        "rate-tables" => Command::RateTables(RateParams {
            x_range: t.pair("x_lo", "x_hi")?,
            n_x: t.count_at_least("n_x", Some(41), 4)?,
            n_y: t.count_at_least("n_y", Some(512), 4)?,
            beta_nodes: t.count_at_least("beta_nodes", Some(241), 5)?,
            alpha_nodes: t.count_at_least("alpha_nodes", Some(201), 2)?,
            b_max: t.real("b_max")?.map(|b| t.positive("b_max", b)).transpose()?,
        }),
        "quasipotential" => Command::Quasipotential(read_qp(t)?),
        "predict-occupation" => Command::PredictOccupation(read_qp(t)?),
        "boundary-chain" => Command::BoundaryChain(ChainParams {
            attractors: t.list("attractors")?,
            delta: t.positive("delta", t.need_real("delta")?)?,
            transitions: t.count_at_least("transitions", None, 1)?,
            x0: t.real_or("x0", 0.0)?,
            y0: t.y0()?,
            max_steps: t.count_at_least("max_steps", Some(10_000_000_000), 1)?,
            qp: read_qp(t)?,
        }),
        "resonance" => {
            let (v_lo, v_hi) = t.pair("v_lo", "v_hi")?.unwrap_or((-0.9, 0.9));
            Command::Resonance(ResonanceParams {
                steps: t.count_at_least("steps", None, 1)?,
                subsample: t.count_at_least("subsample", Some(100), 1)?,
                v0: t.real_or("v0", 0.0)?,
                x0: t.real_or("x0", -1.0)?,
                y0: t.real_or("y0", 0.0)?,
                v_lo,
                v_hi,
                v_nodes: t.count_at_least("v_nodes", Some(37), 4)?,
                n_y: t.count_at_least("n_y", Some(256), 4)?,
                n_cells: t.count_at_least("n_cells", Some(200), 1)?,
                radius: t.positive("radius", t.real_or("radius", 0.3)?)?,
            })
        }
        other => {
            return Err(range(
                "command",
                other,
                "expected sim-histogram, averaging-check, exit-times, rate-tables, quasipotential, \
                 predict-occupation, boundary-chain or resonance",
            ))
        }
    })
}

/// Parses, defaults and validates a run file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let [system, run, output] = split_sections(text)?;
    let cfg = RunConfig {
        system: read_system(&system)?,
        command: read_command(&run)?,
        seed: run.count("seed")?.unwrap_or(0),
        output_dir: PathBuf::from(output.text("dir").unwrap_or_else(|| "out".into())),
        emit_svg: output.flag("svg")?.unwrap_or(false),
    };
    for t in [&system, &run, &output] {
        t.finish()?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> std::result::Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(parse_config(&text)?)
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

struct Writer(String);

impl Writer {
    fn kv(&mut self, key: &str, value: impl std::fmt::Display) {
        let _ = writeln!(self.0, "{key} = {value}");
    }

    fn opt(&mut self, key: &str, value: Option<f64>) {
        if let Some(v) = value {
            self.kv(key, v);
        }
    }

    fn y0(&mut self, y0: Y0Config) {
        match y0 {
            Y0Config::Default => {}
            Y0Config::Fixed(y) => self.kv("y0", y),
            Y0Config::Uniform => self.kv("y0", "uniform"),
        }
    }

    fn qp(&mut self, p: &QpParams) {
        self.kv(
            "method",
            match p.method {
                QpMethod::Dp => "dp",
                QpMethod::HjRoot => "hj-root",
            },
        );
        self.kv("n_x", p.n_x);
        self.kv("n_y", p.n_y);
        self.kv("dp_nodes", p.dp_nodes);
        self.kv("speeds", p.speeds);
        self.kv("n_cells", p.n_cells);
    }
}

/// Text that [`parse_config`] reads back to an equal config.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut w = Writer(String::from("[system]\n"));
    match &cfg.system {
        SystemConfig::Builtin(b) => {
            w.kv("builtin", &b.name);
            w.opt("epsilon", b.epsilon);
            w.opt("gamma", b.gamma);
            w.opt("amplitude", b.amplitude);
            w.opt("rho", b.rho);
        }
        SystemConfig::Inline(s) => {
            w.kv("name", &s.name);
            w.kv("coeffs", list_text(&s.coeffs));
            w.kv("amplitude", s.amplitude);
            match &s.driver {
                InlineDriver::Expanding { multiplier } => {
                    w.kv("driver", "expanding");
                    w.kv("multiplier", multiplier);
                }
                InlineDriver::Iid => w.kv("driver", "iid"),
                InlineDriver::Additive { noise } => {
                    w.kv("driver", "additive");
                    w.kv("noise", list_text(noise));
                }
            }
            w.kv("epsilon", s.epsilon);
            w.kv("lo", s.lo);
            w.kv("hi", s.hi);
        }
    }
    w.0.push_str("\n[run]\n");
    w.kv("command", cfg.command.name());
    w.kv("seed", cfg.seed);
    match &cfg.command {
        Command::SimHistogram(p) => {
            w.kv("steps", p.steps);
            w.kv("x0", p.x0);
            w.y0(p.y0);
            w.kv("bins", p.bins);
            if let Some((lo, hi)) = p.range {
                w.kv("lo", lo);
                w.kv("hi", hi);
            }
            w.kv("radius", p.radius);
        }
        Command::AveragingCheck(p) => {
            w.kv("t_end", p.t_end);
            w.kv("replicas", p.replicas);
            w.kv("x0", p.x0);
            w.y0(p.y0);
            w.kv("threshold", p.threshold);
            w.kv(
                "reference",
                match p.reference {
                    AveragingReference::Ode => "ode",
                    AveragingReference::Recursion => "recursion",
                },
            );
            w.kv("n_y", p.n_y);
        }
        Command::ExitTimes(p) => {
            w.kv("epsilons", list_text(&p.epsilons));
            w.kv("replicas", p.replicas);
            w.kv("x0", p.x0);
            w.y0(p.y0);
            w.kv("v_lo", p.v_lo);
            w.kv("v_hi", p.v_hi);
            w.opt("cap", p.cap);
            w.opt("r_hat", p.r_hat);
        }
        Command::RateTables(p) => {
            if let Some((lo, hi)) = p.x_range {
                w.kv("x_lo", lo);
                w.kv("x_hi", hi);
            }
            w.kv("n_x", p.n_x);
            w.kv("n_y", p.n_y);
            w.kv("beta_nodes", p.beta_nodes);
            w.kv("alpha_nodes", p.alpha_nodes);
            w.opt("b_max", p.b_max);
        }
        Command::Quasipotential(p) | Command::PredictOccupation(p) => w.qp(p),
        Command::BoundaryChain(p) => {
            if let Some(a) = &p.attractors {
                w.kv("attractors", list_text(a));
            }
            w.kv("delta", p.delta);
            w.kv("transitions", p.transitions);
            w.kv("x0", p.x0);
            w.y0(p.y0);
            w.kv("max_steps", p.max_steps);
            w.qp(&p.qp);
        }
        Command::Resonance(p) => {
            w.kv("steps", p.steps);
            w.kv("subsample", p.subsample);
            w.kv("v0", p.v0);
            w.kv("x0", p.x0);
            w.kv("y0", p.y0);
            w.kv("v_lo", p.v_lo);
            w.kv("v_hi", p.v_hi);
            w.kv("v_nodes", p.v_nodes);
            w.kv("n_y", p.n_y);
            w.kv("n_cells", p.n_cells);
            w.kv("radius", p.radius);
        }
    }
    w.0.push_str("\n[output]\n");
    w.kv("dir", cfg.output_dir.display());
    w.kv("svg", cfg.emit_svg);
    w.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_histogram_config() {
        let cfg =
            parse_config("[system]\nbuiltin = expanding-sym\n[run]\ncommand = sim-histogram\nsteps = 1e7\n").unwrap();
        assert_eq!(cfg.seed, 0);
        assert!(!cfg.emit_svg);
        match cfg.command {
            Command::SimHistogram(p) => {
                assert_eq!(p.steps, 10_000_000);
                assert_eq!(p.bins, 10_000);
                assert_eq!(p.y0, Y0Config::Default);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_key_reports_its_line() {
        let text = "[system]\nbuiltin = markov-sym\n\n[run]\ncommand = sim-histogram\nsteps = 10\nsteps = 20\n";
        match parse_config(text) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_count_is_a_range_error() {
        let text = "[system]\nbuiltin = markov-sym\n[run]\ncommand = sim-histogram\nsteps = -5\n";
        assert!(matches!(parse_config(text), Err(ConfigError::Range { .. })));
    }

    #[test]
    fn missing_steps() {
        let text = "[system]\nbuiltin = markov-sym\n[run]\ncommand = sim-histogram\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::MissingKey {
                section: "run".into(),
                key: "steps".into()
            })
        );
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let text = "[system]\nbuiltin = markov-sym\ngamma = 0.2\n[run]\ncommand = sim-histogram\nsteps = 5\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::UnknownKey {
                section: "system".into(),
                key: "gamma".into(),
                line: 3
            })
        );
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(
            parse_config("builtin = x\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("[system]\n  builtin\n"),
            Err(ConfigError::Parse { line: 2, column: 3, .. })
        ));
        assert!(matches!(
            parse_config("[sistem]\n"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn exit_times_need_a_cap_or_barrier() {
        let text =
            "[system]\nbuiltin = iid-bessel\n[run]\ncommand = exit-times\nepsilons = 0.05, 0.04\nv_lo = -1\nv_hi = 1\n";
        assert_eq!(
            parse_config(text),
            Err(ConfigError::MissingKey {
                section: "run".into(),
                key: "cap".into()
            })
        );
    }

    #[test]
    fn inline_system_builds() {
        let text = "[system]\ncoeffs = 0, -1\namplitude = 0.5\ndriver = additive\nnoise = 1.5, 0.5\nepsilon = 0.01\nlo = -2\nhi = 2\n\
                    [run]\ncommand = rate-tables\n";
        let cfg = parse_config(text).unwrap();
        assert!(matches!(cfg.system.build().unwrap(), BuiltSystem::TwoScale(_)));
        let bad = text.replace("1.5, 0.5", "1.5, -0.5");
        let cfg = parse_config(&bad).unwrap();
        assert!(cfg.system.build().is_err());
    }

    #[test]
    fn serialize_round_trips_defaults() {
        let text = "[system]\nbuiltin = designed-three-scale\nrho = 0.2\n[run]\ncommand = resonance\nsteps = 1e6\n[output]\nsvg = yes\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(parse_config(&serialize_config(&cfg)).unwrap(), cfg);
    }
}
