//! Typed configurations, one per subcommand, read from TOML with command-line
//! overrides applied before validation.

use std::path::Path;

use mtcp_core::estimators::{
    AuditConfig, BoundFitConfig, ContrastConfig, ConvergenceConfig, DriftScanConfig, InitialCondition,
    LambdaCConfig, ModelParams, RenewalDriftConfig, SurvivalConfig,
};
use mtcp_core::paths::Mode;
use mtcp_core::walk::StepDistribution;
use mtcp_core::{AugmentedHarrisSystem, LatticeWindow, Point};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Parse(String),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

pub fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.into() }
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Simulate,
    EvolveQuery,
    Paths,
    Ancestor,
    Renewal,
    Walk,
    Estimate,
    Render,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::EvolveQuery => "evolve-query",
            Subcommand::Paths => "paths",
            Subcommand::Ancestor => "ancestor",
            Subcommand::Renewal => "renewal",
            Subcommand::Walk => "walk",
            Subcommand::Estimate => "estimate",
            Subcommand::Render => "render",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        serde_json::from_value(Value::String(s.into())).ok()
    }
}

/// Window and rates of a sampled system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub r: i64,
    /// Window radius M (ℓ1 ball).
    pub m: i64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Horizon T_h.
    pub horizon: f64,
}

impl ModelSection {
    pub fn params(&self) -> ModelParams {
        ModelParams {
            d: self.d,
            r: self.r,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            m: self.m,
            horizon: self.horizon,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(field_err("model.d", "dimension must be at least 1"));
        }
        if self.r < 1 {
            return Err(field_err("model.r", format!("range must be at least 1, got {}", self.r)));
        }
        if self.m < 0 {
            return Err(field_err("model.m", format!("window radius must be nonnegative, got {}", self.m)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(field_err("model.horizon", format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        if !(self.lambda2 > 0.0) {
            return Err(field_err(
                "model.lambda2",
                format!("global assumption λ1 > λ2 > 0 violated: λ2 = {}", self.lambda2),
            ));
        }
        if !(self.lambda1 > self.lambda2 && self.lambda1.is_finite()) {
            return Err(field_err(
                "model.lambda1",
                format!("global assumption λ1 > λ2 > 0 violated: λ1 = {}, λ2 = {}", self.lambda1, self.lambda2),
            ));
        }
        Ok(())
    }
}

/// Where a command's Harris system comes from: sampled from `model` with
/// `seed`, or loaded from a saved system document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSource {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_file: Option<String>,
}

/// A loaded input file and its digest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl SystemSource {
    fn validate(&self) -> Result<()> {
        match (&self.model, &self.system_file) {
            (Some(m), None) => m.validate(),
            (None, Some(_)) => Ok(()),
            (Some(_), Some(_)) => Err(field_err("system_file", "give either [model] or system_file, not both")),
            (None, None) => Err(field_err("model", "missing: give a [model] section or a system_file")),
        }
    }

    /// The system, and the input file it was read from (if any).
    pub fn load(&self) -> Result<(AugmentedHarrisSystem, Option<InputFile>)> {
        if let Some(path) = &self.system_file {
            let bytes = std::fs::read(path).map_err(|e| ConfigError::Io { path: path.clone(), message: e.to_string() })?;
            let text = String::from_utf8(bytes.clone()).map_err(|e| field_err("system_file", e.to_string()))?;
            let h = AugmentedHarrisSystem::from_json(&text).map_err(|e| field_err("system_file", e.to_string()))?;
            return Ok((h, Some(InputFile { path: path.clone(), sha256: sha256_hex(&bytes) })));
        }
        let m = self.model.as_ref().expect("validated");
        let w = LatticeWindow::new(m.d, m.m, m.r, m.horizon).map_err(|e| field_err("model", e.to_string()))?;
        let h = mtcp_core::sample_harris(&w, m.lambda1, m.lambda2, self.seed).map_err(|e| field_err("model", e.to_string()))?;
        Ok((h, None))
    }
}

fn check_point(field: &str, p: &Point, w: &LatticeWindow) -> Result<usize> {
    w.index(p).ok_or_else(|| field_err(field, format!("site {p:?} is not in the window")))
}

fn check_time(field: &str, t: f64, h: &AugmentedHarrisSystem) -> Result<()> {
    if !(t >= 0.0 && t <= h.horizon()) {
        return Err(field_err(field, format!("time {t} outside [0, {}]", h.horizon())));
    }
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub initial: InitialCondition,
    /// Evolve up to this time; the horizon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    pub x: Point,
    pub t: f64,
    #[serde(default)]
    pub left_limit: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveQueryConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub initial: InitialCondition,
    pub queries: Vec<Query>,
}

/// One path-engine request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathQuery {
    /// A witness path from (from, s) to (to, t), or to the level t.
    Reachable { from: Point, s: f64, to: Option<Point>, t: f64, mode: Mode },
    /// All distinct paths from (from, s) to (to, t).
    Enumerate { from: Point, s: f64, to: Point, t: f64, mode: Mode, cap: usize },
    /// The free basic path from the level s to (x, t).
    Fbip { s: f64, x: Point, t: f64 },
    /// The reverse-free basic path from (x, s) to the level t.
    Rfbip { x: Point, s: f64, t: f64 },
    /// Sites reached at t from (from, s), or from the level s.
    ReachSet { from: Option<Point>, s: f64, t: f64, mode: Mode },
    /// Sites reached at t by free selective paths from `sources` at s.
    FsipReach { sources: Vec<Point>, s: f64, t: f64 },
    /// Death time of `sites` × {s}.
    DeathTime { sites: Vec<Point>, s: f64 },
}

impl PathQuery {
    pub fn validate(&self, field: &str, h: &AugmentedHarrisSystem) -> Result<()> {
        let w = h.window();
        let (pts, times): (Vec<&Point>, Vec<f64>) = match self {
            PathQuery::Reachable { from, s, to, t, .. } => (std::iter::once(from).chain(to.iter()).collect(), vec![*s, *t]),
            PathQuery::Enumerate { from, s, to, t, .. } => (vec![from, to], vec![*s, *t]),
            PathQuery::Fbip { s, x, t } | PathQuery::Rfbip { x, s, t } => (vec![x], vec![*s, *t]),
            PathQuery::ReachSet { from, s, t, .. } => (from.iter().collect(), vec![*s, *t]),
            PathQuery::FsipReach { sources, s, t } => (sources.iter().collect(), vec![*s, *t]),
            PathQuery::DeathTime { sites, s } => (sites.iter().collect(), vec![*s]),
        };
        for p in pts {
            check_point(field, p, w)?;
        }
        for t in &times {
            check_time(field, *t, h)?;
        }
        if times.len() == 2 && times[0] > times[1] {
            return Err(field_err(field, format!("start time {} is after end time {}", times[0], times[1])));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub queries: Vec<PathQuery>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncestorConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub x: Point,
    pub s: f64,
    pub until: f64,
    /// Also list the bifurcation times of the origin's ancestor at this L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Steer {
    pub start: Point,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Relocation {
    pub axis: usize,
    pub kappa: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenewalConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub l: i64,
    /// Build the renewal point of the ψ-relocated system instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relocate: Option<Relocation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steer: Option<Steer>,
}

/// Finite-support laws of the renewal increments (X, τ).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkLaw {
    pub x: Vec<(i64, f64)>,
    pub tau: Vec<(f64, f64)>,
}

impl WalkLaw {
    pub fn build(&self, field: &str) -> Result<StepDistribution> {
        StepDistribution::new(self.x.clone(), self.tau.clone()).map_err(|e| field_err(field, e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkConfig {
    pub seed: u64,
    pub law: WalkLaw,
    pub start: (i64, f64),
    pub n_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalConeConfig {
    #[serde(flatten)]
    pub survival: SurvivalConfig,
    /// Quantile of the per-run cone slopes reported as α̂.
    pub quantile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeuhauserConfig {
    pub params: ModelParams,
    pub p1: f64,
    pub p2: f64,
    pub sites: Vec<Point>,
    pub n_runs: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OvershootConfig {
    pub law: WalkLaw,
    pub ell: i64,
    pub x: i64,
    pub n_runs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeExperimentConfig {
    pub law: WalkLaw,
    pub beta: f64,
    pub ell: f64,
    pub t: f64,
    pub x0: i64,
    pub n_runs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxChainConfig {
    pub ell: f64,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub law: WalkLaw,
    pub eps: f64,
    pub ns: Vec<usize>,
    pub n_runs: usize,
    pub seed: u64,
}

/// The estimator to run, selected by the `estimator` key.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum EstimateConfig {
    LambdaC(LambdaCConfig),
    Survival(SurvivalConeConfig),
    SymmetricContrast(ContrastConfig),
    CompleteConvergence(ConvergenceConfig),
    Neuhauser(NeuhauserConfig),
    BoundFit(BoundFitConfig),
    DriftScan(DriftScanConfig),
    RenewalDrift(RenewalDriftConfig),
    InvariantAudit(AuditConfig),
    Overshoot(OvershootConfig),
    ConeExperiment(ConeExperimentConfig),
    BoxChain(BoxChainConfig),
    Concentration(ConcentrationConfig),
}

pub const LAYERS: [&str; 7] = ["deaths", "arrows", "selective-arrows", "trajectory", "paths", "ancestor", "boxes"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AncestorLayer {
    pub x: Point,
    pub s: f64,
    /// Mark the bifurcation features of the origin's ancestor at this L.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bifurcation_l: Option<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub center: i64,
    pub half_width: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

/// What to draw and where (one-dimensional windows only).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramSpec {
    pub times: [f64; 2],
    pub sites: [i64; 2],
    pub layers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialCondition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathQuery>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancestor: Option<AncestorLayer>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxSpec>,
    /// Pixels per site column and per unit time.
    pub column_width: f64,
    pub time_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(flatten)]
    pub system: SystemSource,
    pub diagram: DiagramSpec,
}

impl DiagramSpec {
    pub fn validate(&self, h: &AugmentedHarrisSystem) -> Result<()> {
        let w = h.window();
        if w.dim() != 1 {
            return Err(field_err("diagram", format!("only one-dimensional windows are drawn, got d = {}", w.dim())));
        }
        let [t0, t1] = self.times;
        if !(0.0 <= t0 && t0 < t1 && t1 <= h.horizon()) {
            return Err(field_err("diagram.times", format!("[{t0}, {t1}] must be a nonempty range within [0, {}]", h.horizon())));
        }
        let [a, b] = self.sites;
        if !(a <= b && a >= -w.radius() && b <= w.radius()) {
            return Err(field_err("diagram.sites", format!("[{a}, {b}] must lie within [-{m}, {m}]", m = w.radius())));
        }
        if !(self.column_width > 0.0 && self.column_width.is_finite() && self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(field_err("diagram.column_width", "column_width and time_scale must be positive"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !LAYERS.contains(&l.as_str()) {
                return Err(field_err(&format!("diagram.layers[{i}]"), format!("unknown layer `{l}`, expected one of {LAYERS:?}")));
            }
        }
        let has = |l: &str| self.layers.iter().any(|x| x == l);
        if has("trajectory") && self.initial.is_none() {
            return Err(field_err("diagram.initial", "missing: the trajectory layer needs an initial condition"));
        }
        if has("paths") && self.paths.is_empty() {
            return Err(field_err("diagram.paths", "missing: the paths layer needs at least one path query"));
        }
        if has("boxes") && self.boxes.is_empty() {
            return Err(field_err("diagram.boxes", "missing: the boxes layer needs at least one box"));
        }
        match (&self.ancestor, has("ancestor")) {
            (None, true) => return Err(field_err("diagram.ancestor", "missing: the ancestor layer needs a start point")),
            (Some(a), _) => {
                check_point("diagram.ancestor.x", &a.x, w)?;
                check_time("diagram.ancestor.s", a.s, h)?;
            }
            _ => {}
        }
        for (i, q) in self.paths.iter().enumerate() {
            let f = format!("diagram.paths[{i}]");
            match q {
                PathQuery::Reachable { .. } | PathQuery::Fbip { .. } | PathQuery::Rfbip { .. } => q.validate(&f, h)?,
                _ => return Err(field_err(&f, "only reachable, fbip and rfbip paths can be drawn")),
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------

/// A fully parsed command.
#[derive(Clone, Debug, PartialEq)]
pub enum Command {
    Simulate(SimulateConfig),
    EvolveQuery(EvolveQueryConfig),
    Paths(PathsConfig),
    Ancestor(AncestorConfig),
    Renewal(RenewalConfig),
    Walk(WalkConfig),
    Estimate(EstimateConfig),
    Render(RenderConfig),
}

/// Command-line overrides of config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub horizon: Option<f64>,
}

pub fn read_toml(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let t: toml::Value = toml::from_str(&text).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    serde_json::to_value(t).map_err(|e| ConfigError::Parse(e.to_string()))
}

fn apply_overrides(v: &mut Value, o: &Overrides) -> Result<()> {
    let obj = v.as_object_mut().ok_or_else(|| ConfigError::Parse("config must be a table".into()))?;
    if let Some(seed) = o.seed {
        if !obj.contains_key("seed") {
            return Err(field_err("--seed", "this configuration has no seed"));
        }
        obj.insert("seed".into(), seed.into());
    }
    if let Some(t) = o.horizon {
        let mut hit = false;
        if obj.contains_key("horizon") {
            obj.insert("horizon".into(), t.into());
            hit = true;
        }
        for sec in ["model", "params"] {
            if let Some(m) = obj.get_mut(sec).and_then(Value::as_object_mut) {
                m.insert("horizon".into(), t.into());
                hit = true;
            }
        }
        if !hit {
            return Err(field_err("--horizon", "this configuration has no horizon"));
        }
    }
    Ok(())
}

fn typed<T: serde::de::DeserializeOwned>(v: Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| {
        let msg = e.to_string();
        if let Some(rest) = msg.strip_prefix("unknown variant ") {
            return field_err("estimator", format!("unknown estimator {rest}"));
        }
        ConfigError::Parse(msg)
    })
}

impl Command {
    /// Parses `value` (with overrides applied) as the config of `sub`.
    pub fn from_value(sub: Subcommand, mut value: Value, o: &Overrides) -> Result<Self> {
        apply_overrides(&mut value, o)?;
        let cmd = match sub {
            Subcommand::Simulate => Command::Simulate(typed(value)?),
            Subcommand::EvolveQuery => Command::EvolveQuery(typed(value)?),
            Subcommand::Paths => Command::Paths(typed(value)?),
            Subcommand::Ancestor => Command::Ancestor(typed(value)?),
            Subcommand::Renewal => Command::Renewal(typed(value)?),
            Subcommand::Walk => Command::Walk(typed(value)?),
            Subcommand::Estimate => {
                if value.get("estimator").is_none() {
                    return Err(field_err("estimator", "missing: name the estimator to run"));
                }
                Command::Estimate(typed(value)?)
            }
            Subcommand::Render => Command::Render(typed(value)?),
        };
        cmd.validate()?;
        Ok(cmd)
    }

    pub fn subcommand(&self) -> Subcommand {
        match self {
            Command::Simulate(_) => Subcommand::Simulate,
            Command::EvolveQuery(_) => Subcommand::EvolveQuery,
            Command::Paths(_) => Subcommand::Paths,
            Command::Ancestor(_) => Subcommand::Ancestor,
            Command::Renewal(_) => Subcommand::Renewal,
            Command::Walk(_) => Subcommand::Walk,
            Command::Estimate(_) => Subcommand::Estimate,
            Command::Render(_) => Subcommand::Render,
        }
    }

    /// The resolved configuration as canonical JSON (sorted keys).
    pub fn resolved(&self) -> Value {
        let v = match self {
            Command::Simulate(c) => serde_json::to_value(c),
            Command::EvolveQuery(c) => serde_json::to_value(c),
            Command::Paths(c) => serde_json::to_value(c),
            Command::Ancestor(c) => serde_json::to_value(c),
            Command::Renewal(c) => serde_json::to_value(c),
            Command::Walk(c) => serde_json::to_value(c),
            Command::Estimate(c) => serde_json::to_value(c),
            Command::Render(c) => serde_json::to_value(c),
        };
        v.expect("configs serialize")
    }

    /// sha256 of the canonical JSON of subcommand and resolved config.
    pub fn hash(&self) -> String {
        let doc = serde_json::json!({ "subcommand": self.subcommand().name(), "config": self.resolved() });
        sha256_hex(serde_json::to_string(&doc).expect("json").as_bytes())
    }

    pub fn master_seed(&self) -> Option<u64> {
        self.resolved().get("seed").and_then(Value::as_u64)
    }

    fn validate(&self) -> Result<()> {
        let source = match self {
            Command::Simulate(c) => Some(&c.system),
            Command::EvolveQuery(c) => Some(&c.system),
            Command::Paths(c) => Some(&c.system),
            Command::Ancestor(c) => Some(&c.system),
            Command::Renewal(c) => Some(&c.system),
            Command::Render(c) => Some(&c.system),
            Command::Walk(c) => {
                c.law.build("law")?;
                None
            }
            Command::Estimate(_) => None,
        };
        if let Some(s) = source {
            s.validate()?;
        }
        Ok(())
    }
}
