//! Declarative experiment files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use transcender::evalrig::{EvalParams, RigGeometry, ScoreMode};
use transcender::renderer::{Intrinsics, MeshKind};
use transcender::target::class_by_name;
use transcender::transforms::{enumerate_configs, Method, TransformConfig};
use transcender::toy_classes;

use crate::error::{CliError, CliResult};

/// Overrides the experiment's output root.
pub const OUTPUT_ROOT_ENV: &str = "TRANSCENDER_OUTPUT_ROOT";

/// Number of configurations the desk preset keeps per method.
pub const DESK_CONFIGS: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[default]
    Full,
    /// 64x64 patches, 300 steps, 8 stratified configurations.
    Desk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigSelection {
    /// `"all"`.
    Keyword(String),
    Ids(Vec<String>),
    Stratified { stratified: usize },
}

impl Default for ConfigSelection {
    fn default() -> Self {
        ConfigSelection::Keyword("all".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    /// Trained into the experiment directory when absent.
    pub checkpoint: Option<PathBuf>,
    #[serde(default = "default_detector_seed")]
    pub seed: u64,
}

fn default_detector_seed() -> u64 {
    transcender::detector::TrainParams::default().seed
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            checkpoint: None,
            seed: default_detector_seed(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigSection {
    pub spacing: f64,
    pub distances: Vec<f64>,
    pub fov_deg: f64,
    pub image_size: usize,
}

impl Default for RigSection {
    fn default() -> Self {
        let rig = RigGeometry::default();
        Self {
            spacing: rig.spacing,
            distances: rig.distances,
            fov_deg: transcender::pipeline::DEFAULT_FOV_DEG,
            image_size: rig.intrinsics.height,
        }
    }
}

impl RigSection {
    pub fn geometry(&self) -> RigGeometry {
        RigGeometry {
            spacing: self.spacing,
            distances: self.distances.clone(),
            intrinsics: Intrinsics::new(self.fov_deg, self.image_size, self.image_size),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// Plain screen evaluation at every rig position.
    pub rig: bool,
    /// Support objects for the difficult-conditions evaluation.
    pub difficult: Vec<String>,
    pub rotations: usize,
    pub strict: bool,
    pub score_mode: ScoreMode,
    pub conf_threshold: f64,
    pub nms_iou: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let p = EvalParams::default();
        Self {
            rig: true,
            difficult: Vec::new(),
            rotations: 5,
            strict: p.strict,
            score_mode: p.score_mode,
            conf_threshold: p.conf_threshold,
            nms_iou: p.nms_iou,
        }
    }
}

impl EvaluationSection {
    pub fn params(&self) -> EvalParams {
        EvalParams {
            conf_threshold: self.conf_threshold,
            nms_iou: self.nms_iou,
            score_mode: self.score_mode,
            strict: self.strict,
        }
    }

    pub fn supports(&self) -> CliResult<Vec<MeshKind>> {
        self.difficult
            .iter()
            .map(|s| MeshKind::parse(s).map_err(CliError::from))
            .collect()
    }
}

/// Optional per-run overrides of the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOverrides {
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub patch_size: Option<usize>,
    pub backgrounds: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub methods: Vec<String>,
    pub targets: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub configs: ConfigSelection,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_output_root")]
    pub output_root: PathBuf,
    #[serde(default)]
    pub detector: DetectorSection,
    #[serde(default)]
    pub rig: RigSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub run: RunOverrides,
}

fn default_parallelism() -> usize {
    1
}

fn default_output_root() -> PathBuf {
    PathBuf::from("runs")
}

/// 1-based line of byte offset `pos`.
fn line_at(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].matches('\n').count() + 1
}

/// Line where `key` is assigned, for validation messages.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ExperimentSpec {
    /// Parses and validates; errors name the file and line.
    pub fn parse(text: &str, origin: &Path) -> CliResult<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_at(text, s.start)).unwrap_or(1);
            CliError::Validation(format!("{}:{line}: {}", origin.display(), e.message()))
        })?;
        spec.validate().map_err(|(key, msg)| {
            let at = key.and_then(|k| line_of_key(text, k)).map(|l| format!(":{l}")).unwrap_or_default();
            CliError::Validation(format!("{}{at}: {msg}", origin.display()))
        })?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path)
    }

    fn validate(&self) -> Result<(), (Option<&'static str>, String)> {
        let at = |k: &'static str, m: String| (Some(k), m);
        if self.name.trim().is_empty() || self.name.contains(['/', '\\']) {
            return Err(at("name", "experiment name must be a non-empty path component".into()));
        }
        if self.methods.is_empty() {
            return Err(at("methods", "method list is empty".into()));
        }
        for m in &self.methods {
            Method::parse(m).map_err(|e| at("methods", e.to_string()))?;
        }
        if self.targets.is_empty() {
            return Err(at("targets", "target list is empty".into()));
        }
        for t in &self.targets {
            class_by_name(&toy_classes(), t).map_err(|e| at("targets", e.to_string()))?;
        }
        if self.seeds.is_empty() {
            return Err(at("seeds", "seed list is empty".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(at("seeds", "seeds must be distinct".into()));
        }
        if self.parallelism == 0 {
            return Err(at("parallelism", "parallelism must be at least 1".into()));
        }
        match &self.configs {
            ConfigSelection::Keyword(k) if k != "all" => {
                return Err(at("configs", format!("unknown config selection {k:?}; use \"all\", a list of ids or {{ stratified = N }}")))
            }
            ConfigSelection::Ids(ids) if ids.is_empty() => return Err(at("configs", "config id list is empty".into())),
            ConfigSelection::Stratified { stratified: 0 } => {
                return Err(at("configs", "stratified sample size must be positive".into()))
            }
            _ => {}
        }
        if !(self.rig.image_size > 0 && self.rig.fov_deg > 0.0 && self.rig.fov_deg < 180.0) {
            return Err(at("fov_deg", "rig needs a positive image size and a field of view in (0, 180)".into()));
        }
        self.rig.geometry().validate().map_err(|e| at("distances", e.to_string()))?;
        self.evaluation.supports().map_err(|e| at("difficult", e.to_string()))?;
        for s in self.evaluation.supports().unwrap_or_default() {
            if !matches!(s, MeshKind::Billboard | MeshKind::Sign | MeshKind::Tshirt) {
                return Err(at("difficult", format!("support {} is not billboard, sign or tshirt", s.name())));
            }
        }
        // Explicit ids must exist for some listed method.
        if let ConfigSelection::Ids(ids) = &self.configs {
            let known: BTreeSet<String> = self
                .methods()
                .into_iter()
                .flat_map(enumerate_configs)
                .map(|c| c.config_id)
                .collect();
            if let Some(bad) = ids.iter().find(|i| !known.contains(*i)) {
                return Err(at("configs", format!("unknown config id {bad}")));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Vec<Method> {
        self.methods.iter().filter_map(|m| Method::parse(m).ok()).collect()
    }

    /// Output root with the environment override applied.
    pub fn output_root(&self) -> PathBuf {
        std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| self.output_root.clone())
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.output_root().join(&self.name)
    }

    /// Configurations to run for `method`.
    pub fn select_configs(&self, method: Method) -> Vec<TransformConfig> {
        let all = enumerate_configs(method);
        match (&self.configs, self.preset) {
            (ConfigSelection::Ids(ids), _) => all.into_iter().filter(|c| ids.contains(&c.config_id)).collect(),
            (ConfigSelection::Stratified { stratified }, _) => stratified_sample(all, *stratified),
            (_, Preset::Desk) => stratified_sample(all, DESK_CONFIGS),
            _ => all,
        }
    }
}

/// Round-robin over strata keyed by the number of filters and of affine ops
/// or meshes, taking configs in id order inside each stratum.
pub fn stratified_sample(configs: Vec<TransformConfig>, n: usize) -> Vec<TransformConfig> {
    let mut strata: BTreeMap<(usize, usize), Vec<TransformConfig>> = BTreeMap::new();
    for c in configs {
        strata.entry((c.filters.len(), c.affine.len() + c.mesh_pool.len())).or_default().push(c);
    }
    for v in strata.values_mut() {
        v.sort_by(|a, b| a.config_id.cmp(&b.config_id));
        v.reverse();
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n && strata.values().any(|v| !v.is_empty()) {
        for v in strata.values_mut() {
            if out.len() == n {
                break;
            }
            if let Some(c) = v.pop() {
                out.push(c);
            }
        }
    }
    out
}
