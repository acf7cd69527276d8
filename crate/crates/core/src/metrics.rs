//! Fidelity (FEAT-I) and diversity (I-FEAT) scores over extractor features.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::features::FeatureExtractor;
use crate::image::Image;
use crate::moments::FeatureVector;

pub fn cosine_similarity(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    a.check_compatible(b)?;
    let sa: f64 = a.values.iter().map(|v| v * v).sum();
    let sb: f64 = b.values.iter().map(|v| v * v).sum();
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero feature vector".into()));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    // sqrt(s * s) == s exactly, so self-similarity is exactly one
    Ok((dot / (sa * sb).sqrt()).clamp(-1.0, 1.0))
}

/// Cosine similarity of each sample's features to the reference's.
pub fn feat_i_scores(
    extractor: &dyn FeatureExtractor,
    reference: &Image,
    samples: &[Image],
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(invalid("FEAT-I needs at least one sample"));
    }
    let r = extractor.extract(reference)?;
    samples
        .iter()
        .map(|s| cosine_similarity(&r, &extractor.extract(s)?))
        .collect()
}

/// Mean reference-to-sample cosine similarity.
pub fn feat_i(extractor: &dyn FeatureExtractor, reference: &Image, samples: &[Image]) -> Result<f64> {
    let scores = feat_i_scores(extractor, reference, samples)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// One minus the mean cosine similarity over unordered distinct pairs.
pub fn i_feat(extractor: &dyn FeatureExtractor, samples: &[Image]) -> Result<f64> {
    let feats = samples
        .iter()
        .map(|s| extractor.extract(s))
        .collect::<Result<Vec<_>>>()?;
    i_feat_from_features(&feats)
}

pub fn i_feat_from_features(feats: &[FeatureVector]) -> Result<f64> {
    let n = feats.len();
    if n < 2 {
        return Err(invalid(format!("I-FEAT needs at least two samples, got {n}")));
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += cosine_similarity(&feats[i], &feats[j])?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(1.0 - sum / pairs)
}

/// Qualitative diversity label; the gap between 0.35 and 0.45 is left unnamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiversityBand {
    Stagnant,
    Balanced,
    Intermediate,
    Divergent,
}

impl DiversityBand {
    pub fn classify(i_feat: f64) -> Self {
        if i_feat < 0.18 {
            DiversityBand::Stagnant
        } else if i_feat <= 0.35 {
            DiversityBand::Balanced
        } else if i_feat > 0.45 {
            DiversityBand::Divergent
        } else {
            DiversityBand::Intermediate
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DiversityBand::Stagnant => "stagnant",
            DiversityBand::Balanced => "balanced",
            DiversityBand::Intermediate => "intermediate",
            DiversityBand::Divergent => "divergent",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub num_samples: usize,
    pub descriptor: String,
    /// Per-sample FEAT-I; empty when no reference was given.
    pub feat_i_scores: Vec<f64>,
    /// `None` for a single sample.
    pub i_feat: Option<f64>,
    pub config: Vec<(String, String)>,
    pub sample_names: Vec<String>,
}

impl EvalReport {
    pub fn build(
        extractor: &dyn FeatureExtractor,
        reference: Option<&Image>,
        samples: &[Image],
        sample_names: Vec<String>,
        config: Vec<(String, String)>,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("no samples to evaluate"));
        }
        if sample_names.len() != samples.len() {
            return Err(Error::LengthMismatch {
                expected: samples.len(),
                got: sample_names.len(),
            });
        }
        let feat_i_scores = match reference {
            Some(r) => feat_i_scores(extractor, r, samples)?,
            None => Vec::new(),
        };
        let i_feat = if samples.len() >= 2 {
            Some(i_feat(extractor, samples)?)
        } else {
            None
        };
        Ok(Self {
            num_samples: samples.len(),
            descriptor: extractor.descriptor().to_string(),
            feat_i_scores,
            i_feat,
            config,
            sample_names,
        })
    }

    pub fn feat_i_mean(&self) -> Option<f64> {
        if self.feat_i_scores.is_empty() {
            return None;
        }
        Some(self.feat_i_scores.iter().sum::<f64>() / self.feat_i_scores.len() as f64)
    }

    /// Population standard deviation of the per-sample FEAT-I scores.
    pub fn feat_i_std(&self) -> Option<f64> {
        let m = self.feat_i_mean()?;
        let n = self.feat_i_scores.len() as f64;
        Some((self.feat_i_scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / n).sqrt())
    }

    /// `key: value` lines; floats use the shortest round-tripping form.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "num_samples: {}", self.num_samples);
        let _ = writeln!(out, "extractor: {}", self.descriptor);
        match (self.feat_i_mean(), self.feat_i_std()) {
            (Some(m), Some(s)) => {
                let _ = writeln!(out, "feat_i_mean: {m:?}");
                let _ = writeln!(out, "feat_i_std: {s:?}");
            }
            _ => {
                let _ = writeln!(out, "feat_i_mean: n/a");
                let _ = writeln!(out, "feat_i_std: n/a");
            }
        }
        match self.i_feat {
            Some(v) => {
                let _ = writeln!(out, "i_feat: {v:?}");
                let _ = writeln!(out, "diversity_band: {}", DiversityBand::classify(v).name());
            }
            None => {
                let _ = writeln!(out, "i_feat: n/a");
            }
        }
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}: {v}");
        }
        out
    }

    /// `sample,feat_i` table, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,feat_i\n");
        for (i, name) in self.sample_names.iter().enumerate() {
            match self.feat_i_scores.get(i) {
                Some(s) => {
                    let _ = writeln!(out, "{name},{s:?}");
                }
                None => {
                    let _ = writeln!(out, "{name},");
                }
            }
        }
        out
    }
}
