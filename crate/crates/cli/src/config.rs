//! Run configuration: a flat TOML document with one table per section.
//!
//! ```toml
//! [run]
//! seed = 7
//! batch_size = 20
//!
//! [model]
//! kind = "dataset"
//! path = "data"
//!
//! [guidance]
//! reference = "ref.pgm"
//! scale = 10000.0
//! ```
//!
//! Relative paths are resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use momentguide::guidance::{GradMode, GuidanceConfig, LossKind, ScaleSchedule};
use momentguide::sampler::SamplerKind;
use momentguide::schedule::{make_schedule, NoiseSchedule, ScheduleKind};
use momentguide::score::{Activation, TrainConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub image: ImageSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default)]
    pub extractor: ExtractorSection,
    #[serde(default)]
    pub guidance: GuidanceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: u64,
    pub batch_size: usize,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 4,
            workers: 1,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSection {
    pub height: usize,
    pub width: usize,
}

impl Default for ImageSection {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleName {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub kind: ScheduleName,
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleName::Linear,
            steps: 100,
            beta_min: 1e-3,
            beta_max: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerName {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub kind: SamplerName,
    /// DDIM only.
    pub eta: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            kind: SamplerName::Ddpm,
            eta: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// TOML file listing mixture components.
    Gmm,
    /// Directory of PGM images.
    Dataset,
    /// Tiny denoiser checkpoint.
    Checkpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractorName {
    Moments,
    CentralMoments,
    DeepMoments,
}

impl ExtractorName {
    pub fn registry_name(self) -> &'static str {
        match self {
            ExtractorName::Moments => "moments",
            ExtractorName::CentralMoments => "central-moments",
            ExtractorName::DeepMoments => "deep-moments",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractorSection {
    pub kind: ExtractorName,
    /// All orders with `p + q <= max_order`.
    pub max_order: u32,
    /// Pixel-net checkpoint, deep-moments only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub net: Option<String>,
}

impl Default for ExtractorSection {
    fn default() -> Self {
        Self {
            kind: ExtractorName::Moments,
            max_order: 6,
            net: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleScheduleName {
    Constant,
    NoiseProportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossName {
    Mse,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradModeName {
    StopGrad,
    FullBackprop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub scale: f64,
    pub scale_schedule: ScaleScheduleName,
    pub recurrence_steps: usize,
    pub loss: LossName,
    pub grad_mode: GradModeName,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        let d = GuidanceConfig::default();
        Self {
            reference: None,
            scale: d.scale.base(),
            scale_schedule: ScaleScheduleName::Constant,
            recurrence_steps: d.recurrence_steps,
            loss: LossName::Mse,
            grad_mode: GradModeName::StopGrad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationName {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Directory of PGM training images.
    pub dataset: String,
    #[serde(default = "default_hidden")]
    pub hidden1: usize,
    #[serde(default = "default_hidden")]
    pub hidden2: usize,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_train_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_validation")]
    pub validation_size: usize,
}

fn default_hidden() -> usize {
    64
}
fn default_activation() -> ActivationName {
    ActivationName::Tanh
}
fn default_steps() -> usize {
    TrainConfig::default().steps
}
fn default_lr() -> f64 {
    TrainConfig::default().lr
}
fn default_train_batch() -> usize {
    TrainConfig::default().batch_size
}
fn default_validation() -> usize {
    TrainConfig::default().validation_size
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization. The worker count does not
    /// affect outputs and is left out.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.run.workers = 1;
        let digest = Sha256::digest(canon.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.image.height == 0 || self.image.width == 0 {
            return bad("image.height and image.width must be positive".into());
        }
        if self.run.batch_size == 0 {
            return bad("run.batch_size must be positive".into());
        }
        if self.run.workers == 0 {
            return bad("run.workers must be positive".into());
        }
        self.schedule()?;
        self.sampler()?.validate().map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        let g = &self.guidance;
        if !(g.scale >= 0.0 && g.scale.is_finite()) {
            return bad(format!("guidance.scale must be finite and >= 0, got {}", g.scale));
        }
        if self.extractor.kind == ExtractorName::DeepMoments && self.extractor.net.is_none() {
            return bad("extractor.net is required for deep-moments".into());
        }
        if let Some(t) = &self.train {
            if t.steps == 0 || t.batch_size == 0 || t.hidden1 == 0 || t.hidden2 == 0 {
                return bad("train.steps, train.batch_size and hidden sizes must be positive".into());
            }
            if !(t.lr >= 0.0 && t.lr.is_finite()) || !(0.0..1.0).contains(&t.momentum) {
                return bad("train.lr must be >= 0 and train.momentum in [0, 1)".into());
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, CliError> {
        let s = &self.schedule;
        let kind = match s.kind {
            ScheduleName::Linear => ScheduleKind::Linear,
            ScheduleName::Cosine => ScheduleKind::Cosine,
        };
        make_schedule(kind, s.steps, s.beta_min, s.beta_max).map_err(|e| CliError::Config(format!("schedule: {e}")))
    }

    pub fn sampler(&self) -> Result<SamplerKind, CliError> {
        Ok(match self.sampler.kind {
            SamplerName::Ddpm => SamplerKind::Ddpm,
            SamplerName::Ddim => SamplerKind::Ddim { eta: self.sampler.eta },
        })
    }

    pub fn guidance(&self) -> GuidanceConfig {
        let g = &self.guidance;
        GuidanceConfig {
            scale: match g.scale_schedule {
                ScaleScheduleName::Constant => ScaleSchedule::Constant(g.scale),
                ScaleScheduleName::NoiseProportional => ScaleSchedule::NoiseProportional(g.scale),
            },
            recurrence_steps: g.recurrence_steps,
            loss: match g.loss {
                LossName::Mse => LossKind::Mse,
                LossName::Cosine => LossKind::Cosine,
            },
            grad_mode: match g.grad_mode {
                GradModeName::StopGrad => GradMode::StopGrad,
                GradModeName::FullBackprop => GradMode::FullBackprop,
            },
        }
    }

    /// `key`/`value` pairs echoed into reports.
    pub fn echo(&self) -> Vec<(String, String)> {
        let s = &self.schedule;
        let g = &self.guidance;
        let mut out = vec![
            ("seed".to_string(), self.run.seed.to_string()),
            ("batch_size".into(), self.run.batch_size.to_string()),
            ("extractor".into(), format!("{} max_order={}", name(&self.extractor.kind), self.extractor.max_order)),
            ("image".into(), format!("{}x{}", self.image.height, self.image.width)),
            (
                "schedule".into(),
                format!("{} T={} beta=[{}, {}]", name(&s.kind), s.steps, s.beta_min, s.beta_max),
            ),
            ("sampler".into(), match self.sampler.kind {
                SamplerName::Ddpm => "ddpm".into(),
                SamplerName::Ddim => format!("ddim eta={}", self.sampler.eta),
            }),
        ];
        if let Some(m) = &self.model {
            out.push(("model".into(), format!("{} {}", name(&m.kind), m.path)));
        }
        out.push((
            "guidance".into(),
            format!(
                "scale={} schedule={} recurrence={} loss={} grad={}",
                g.scale,
                name(&g.scale_schedule),
                g.recurrence_steps,
                name(&g.loss),
                name(&g.grad_mode)
            ),
        ));
        out.push(("config_hash".into(), self.hash()));
        out
    }
}

impl TrainSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            lr: self.lr,
            batch_size: self.batch_size,
            momentum: self.momentum,
            validation_size: self.validation_size,
        }
    }

    pub fn activation(&self) -> Activation {
        match self.activation {
            ActivationName::Tanh => Activation::Tanh,
            ActivationName::Identity => Activation::Identity,
        }
    }
}

/// The config spelling of a unit enum variant.
fn name<T: Serialize>(v: &T) -> String {
    toml::Value::try_from(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[run]
seed = 3
batch_size = 5
workers = 2

[image]
height = 8
width = 8

[schedule]
kind = "cosine"
steps = 50
beta_min = 0.0001
beta_max = 0.5

[sampler]
kind = "ddim"
eta = 0.5

[model]
kind = "dataset"
path = "data"

[extractor]
kind = "central-moments"
max_order = 4

[guidance]
reference = "ref.pgm"
scale = 250.0
scale_schedule = "noise-proportional"
recurrence_steps = 3
loss = "cosine"
grad_mode = "full_backprop"

[train]
dataset = "data"
steps = 10
"#;

    #[test]
    fn round_trip_is_a_fixed_point() {
        for text in [FULL, "", "[run]\nseed = 1\n"] {
            let a = RunConfig::parse(text).unwrap();
            let b = RunConfig::parse(&a.to_toml()).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.to_toml(), b.to_toml());
            assert_eq!(a.hash(), b.hash());
        }
    }

    #[test]
    fn parses_every_field() {
        let c = RunConfig::parse(FULL).unwrap();
        assert_eq!(c.sampler().unwrap(), SamplerKind::Ddim { eta: 0.5 });
        let g = c.guidance();
        assert_eq!(g.scale, ScaleSchedule::NoiseProportional(250.0));
        assert_eq!((g.loss, g.grad_mode, g.recurrence_steps), (LossKind::Cosine, GradMode::FullBackprop, 3));
        assert_eq!(c.train.unwrap().lr, TrainConfig::default().lr);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "[run]\nbogus = 1\n",
            "[sampler]\nkind = \"euler\"\n",
            "[sampler]\nkind = \"ddim\"\neta = -1.0\n",
            "[guidance]\nscale = -2.0\n",
            "[schedule]\nbeta_max = 1.5\n",
            "[extractor]\nkind = \"deep-moments\"\n",
            "[image]\nheight = 0\n",
        ] {
            assert!(matches!(RunConfig::parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::parse("").unwrap();
        let b = RunConfig::parse("[run]\nseed = 9\n").unwrap();
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.run.workers = 8;
        assert_eq!(a.hash(), c.hash());
        assert!(c.echo().iter().any(|(k, v)| k == "guidance" && v.contains("grad=stop_grad")));
        assert_eq!(a.hash().len(), 64);
    }
}
