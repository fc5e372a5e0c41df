//! Elastic identity distortion, hue shifting and face blurring.

mod blur;
mod color;
mod elastic;

pub use blur::{default_blur_sigma, face_blur, format_face_boxes, parse_face_boxes, Blurred, FaceBox};
pub use color::{hsv_to_rgb, hue_shift, rgb_to_hsv};
pub use elastic::{elastic_distort, make_elastic_field, ElasticField, Interpolation};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationConfig {
    /// Elastic displacement magnitude in pixels.
    pub alpha: f32,
    /// Gaussian smoothing width of the elastic field in pixels.
    pub sigma: f32,
    /// One fixed hue rotation per derived dataset, in turns.
    pub hue_delta: f64,
    pub blur_kernel: usize,
    pub interpolation: Interpolation,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            alpha: 250.0,
            sigma: 8.0,
            hue_delta: 0.15,
            blur_kernel: 9,
            interpolation: Interpolation::Bilinear,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha {} must be >= 0", self.alpha)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma {} must be > 0", self.sigma)));
        }
        if !(self.hue_delta > -0.5 && self.hue_delta <= 0.5) {
            return Err(Error::Config(format!(
                "hue_delta {} must lie in (-0.5, 0.5]",
                self.hue_delta
            )));
        }
        if self.blur_kernel < 3 || self.blur_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "blur_kernel {} must be odd and >= 3",
                self.blur_kernel
            )));
        }
        Ok(())
    }

    pub fn blur_sigma(&self) -> f64 {
        default_blur_sigma(self.blur_kernel)
    }
}
