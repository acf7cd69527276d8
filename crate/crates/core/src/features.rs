//! Feature extractors usable as guidance signals.

use std::sync::Arc;

use crate::deep::{deep_moments, deep_moments_descriptor, deep_moments_vjp, PixelFeatureNet};
use crate::error::{invalid, Error, Result};
use crate::image::Image;
use crate::moments::{
    central_moments, central_moments_vjp, moments, moments_adjoint, FeatureVector, MomentBasis,
};

/// A differentiable map from images to feature vectors.
pub trait FeatureExtractor: Send + Sync {
    fn descriptor(&self) -> &str;

    fn dimension(&self) -> usize;

    fn extract(&self, img: &Image) -> Result<FeatureVector>;

    /// Gradient of `<cotangent, extract(img)>` with respect to `img`.
    fn extract_vjp(&self, img: &Image, cotangent: &FeatureVector) -> Result<Image>;

    fn check_cotangent(&self, cotangent: &FeatureVector) -> Result<()> {
        if cotangent.descriptor != self.descriptor() {
            return Err(Error::DescriptorMismatch {
                left: self.descriptor().to_string(),
                right: cotangent.descriptor.clone(),
            });
        }
        if cotangent.len() != self.dimension() {
            return Err(Error::LengthMismatch {
                expected: self.dimension(),
                got: cotangent.len(),
            });
        }
        Ok(())
    }
}

/// Raw or centroid-centred geometric moments.
#[derive(Debug, Clone)]
pub struct MomentExtractor {
    basis: Arc<MomentBasis>,
    centered: bool,
    descriptor: String,
}

impl MomentExtractor {
    pub fn raw(basis: Arc<MomentBasis>) -> Self {
        let descriptor = format!("moments/{}", basis.signature());
        Self {
            basis,
            centered: false,
            descriptor,
        }
    }

    pub fn central(basis: Arc<MomentBasis>) -> Self {
        let descriptor = format!("central-moments/{}", basis.signature());
        Self {
            basis,
            centered: true,
            descriptor,
        }
    }

    pub fn basis(&self) -> &MomentBasis {
        &self.basis
    }
}

impl FeatureExtractor for MomentExtractor {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn dimension(&self) -> usize {
        self.basis.len()
    }

    fn extract(&self, img: &Image) -> Result<FeatureVector> {
        if self.centered {
            central_moments(img, &self.basis)
        } else {
            moments(img, &self.basis)
        }
    }

    fn extract_vjp(&self, img: &Image, cotangent: &FeatureVector) -> Result<Image> {
        self.check_cotangent(cotangent)?;
        if self.centered {
            central_moments_vjp(img, &self.basis, &cotangent.values)
        } else {
            self.basis.check_image(img)?;
            moments_adjoint(&cotangent.values, &self.basis)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeepMomentExtractor {
    net: Arc<PixelFeatureNet>,
    basis: Arc<MomentBasis>,
    descriptor: String,
}

impl DeepMomentExtractor {
    pub fn new(net: Arc<PixelFeatureNet>, basis: Arc<MomentBasis>) -> Self {
        let descriptor = deep_moments_descriptor(&net, &basis);
        Self {
            net,
            basis,
            descriptor,
        }
    }

    pub fn net(&self) -> &PixelFeatureNet {
        &self.net
    }
}

impl FeatureExtractor for DeepMomentExtractor {
    fn descriptor(&self) -> &str {
        &self.descriptor
    }

    fn dimension(&self) -> usize {
        self.net.channels() * self.basis.len()
    }

    fn extract(&self, img: &Image) -> Result<FeatureVector> {
        deep_moments(&self.net, &self.basis, img)
    }

    fn extract_vjp(&self, img: &Image, cotangent: &FeatureVector) -> Result<Image> {
        self.check_cotangent(cotangent)?;
        deep_moments_vjp(&self.net, &self.basis, img, &cotangent.values)
    }
}

/// Names accepted by [`build_extractor`].
pub const REGISTERED_EXTRACTORS: &[&str] = &["moments", "central-moments", "deep-moments"];

/// Builds a registered extractor by name. `net` is required for
/// `deep-moments` and ignored otherwise.
pub fn build_extractor(
    name: &str,
    basis: Arc<MomentBasis>,
    net: Option<Arc<PixelFeatureNet>>,
) -> Result<Arc<dyn FeatureExtractor>> {
    match name {
        "moments" => Ok(Arc::new(MomentExtractor::raw(basis))),
        "central-moments" => Ok(Arc::new(MomentExtractor::central(basis))),
        "deep-moments" => {
            let net = net.ok_or_else(|| invalid("deep-moments extractor needs a pixel net"))?;
            Ok(Arc::new(DeepMomentExtractor::new(net, basis)))
        }
        other => Err(invalid(format!(
            "unknown extractor `{other}`; registered: {}",
            REGISTERED_EXTRACTORS.join(", ")
        ))),
    }
}
