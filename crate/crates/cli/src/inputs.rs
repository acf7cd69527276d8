//! Loading models, extractors and images named by a run configuration.
//!
//! A GMM model file is TOML with one `[[component]]` table per component:
//!
//! ```toml
//! [[component]]
//! weight = 0.5
//! variance = 0.01
//! mean = "a.pgm"
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::Deserialize;

use momentguide::checkpoint::Checkpoint;
use momentguide::deep::PixelFeatureNet;
use momentguide::features::{build_extractor, FeatureExtractor};
use momentguide::moments::{orders_up_to, MomentBasis};
use momentguide::pgm::read_image;
use momentguide::score::{EmpiricalDenoiser, GaussianMixture, GmmComponent, ScoreModel, TinyDenoiser};
use momentguide::Image;

use crate::config::{resolve, ExtractorName, ExtractorSection, ModelKind, RunConfig};
use crate::CliError;

fn cfg_err(field: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {e}"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmFile {
    component: Vec<GmmEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmEntry {
    weight: f64,
    variance: f64,
    mean: String,
}

pub fn load_gmm(path: &Path) -> Result<GaussianMixture, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| cfg_err("model.path", format!("{}: {e}", path.display())))?;
    let file: GmmFile = toml::from_str(&text).map_err(|e| cfg_err("model.path", e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let components = file
        .component
        .into_iter()
        .map(|c| {
            let mean = read_image(resolve(base, &c.mean)).map_err(|e| cfg_err("model.path", e))?;
            Ok(GmmComponent {
                weight: c.weight,
                mean,
                variance: c.variance,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    GaussianMixture::new(components).map_err(|e| cfg_err("model.path", e))
}

/// All `*.pgm` files in `dir`, sorted by file name.
pub fn read_pgm_dir(dir: &Path, field: &str) -> Result<Vec<(String, Image)>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| cfg_err(field, format!("{}: {e}", dir.display())))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(cfg_err(field, format!("no .pgm files in {}", dir.display())));
    }
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let img = read_image(dir.join(&n)).map_err(|e| cfg_err(field, format!("{n}: {e}")))?;
        if let Some((_, first)) = out.first() {
            let first: &Image = first;
            if !img.same_shape(first) {
                return Err(cfg_err(field, format!("{n} is {}x{}, expected {}x{}", img.height(), img.width(), first.height(), first.width())));
            }
        }
        out.push((n, img));
    }
    Ok(out)
}

fn check_dims(cfg: &RunConfig, h: usize, w: usize, field: &str) -> Result<(), CliError> {
    if (h, w) != (cfg.image.height, cfg.image.width) {
        return Err(cfg_err(
            field,
            format!("model is {h}x{w} but image is {}x{}", cfg.image.height, cfg.image.width),
        ));
    }
    Ok(())
}

pub fn load_model(cfg: &RunConfig, base: &Path) -> Result<Arc<dyn ScoreModel>, CliError> {
    let m = cfg
        .model
        .as_ref()
        .ok_or_else(|| CliError::Config("model section is required".into()))?;
    let path = resolve(base, &m.path);
    let model: Arc<dyn ScoreModel> = match m.kind {
        ModelKind::Gmm => {
            let g = load_gmm(&path)?;
            check_dims(cfg, g.height(), g.width(), "model.path")?;
            Arc::new(g)
        }
        ModelKind::Dataset => {
            let data: Vec<Image> = read_pgm_dir(&path, "model.path")?.into_iter().map(|(_, i)| i).collect();
            check_dims(cfg, data[0].height(), data[0].width(), "model.path")?;
            Arc::new(EmpiricalDenoiser::new(data).map_err(|e| cfg_err("model.path", e))?)
        }
        ModelKind::Checkpoint => {
            let ck = Checkpoint::load(&path).map_err(|e| cfg_err("model.path", e))?;
            let t = TinyDenoiser::from_checkpoint(&ck).map_err(|e| cfg_err("model.path", e))?;
            check_dims(cfg, t.height(), t.width(), "model.path")?;
            Arc::new(t)
        }
    };
    Ok(model)
}

pub fn load_extractor(
    section: &ExtractorSection,
    base: &Path,
    height: usize,
    width: usize,
) -> Result<Arc<dyn FeatureExtractor>, CliError> {
    let orders = orders_up_to(section.max_order);
    let basis = Arc::new(MomentBasis::new(&orders, height, width).map_err(|e| cfg_err("extractor", e))?);
    let net = match (&section.kind, &section.net) {
        (ExtractorName::DeepMoments, Some(p)) => {
            let ck = Checkpoint::load(&resolve(base, p)).map_err(|e| cfg_err("extractor.net", e))?;
            Some(Arc::new(PixelFeatureNet::from_checkpoint(&ck).map_err(|e| cfg_err("extractor.net", e))?))
        }
        (ExtractorName::DeepMoments, None) => return Err(cfg_err("extractor.net", "required for deep-moments")),
        _ => None,
    };
    build_extractor(section.kind.registry_name(), basis, net).map_err(|e| cfg_err("extractor", e))
}

pub fn load_reference(cfg: &RunConfig, base: &Path) -> Result<Option<Image>, CliError> {
    let Some(r) = &cfg.guidance.reference else {
        return Ok(None);
    };
    let path = resolve(base, r);
    let img = read_image(&path).map_err(|e| cfg_err("guidance.reference", e))?;
    img.check_dims(cfg.image.height, cfg.image.width)
        .map_err(|e| cfg_err("guidance.reference", e))?;
    Ok(Some(img))
}
