use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Local PCA of each point's k-neighborhood.
    Analytic,
    /// Gradient descent on Chamfer + Gaussian alignment against a dense target.
    Optimize,
}

/// Quadratic form used by the Gaussian alignment loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentForm {
    /// `dᵀ Σ d`.
    #[default]
    Covariance,
    /// `dᵀ (Σ + 1e-8 I)⁻¹ d`.
    Mahalanobis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalSource {
    /// Smallest-scale axis of the nearest fitted Gaussian.
    #[default]
    GaussianAxis,
    /// Smallest PCA axis of the k nearest coarse points.
    LocalPca,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpsampleConfig {
    /// Output rate `r` (output has `r * N` points).
    pub rate: usize,
    /// Samples drawn per Gaussian before FPS down to `rate`.
    pub sample_rate: usize,
    pub backend: Backend,
    pub k_neighbors: usize,
    pub truncation_radius: f64,
    pub refinement_passes: usize,
    pub refinement_weight: f64,
    pub normal_source: NormalSource,
    pub scale_gain: f64,
    pub lambda_gaussian: f64,
    pub alignment_form: AlignmentForm,
    pub opt_steps: usize,
    pub learning_rate: f64,
    /// Replace every noise draw by zero (optimizer test hook).
    pub zero_noise: bool,
    pub patch_size: usize,
    pub coverage_factor: f64,
    pub fps_start: usize,
    pub seed: u64,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        Self {
            rate: 4,
            sample_rate: 6,
            backend: Backend::Analytic,
            k_neighbors: 16,
            truncation_radius: 2.0,
            refinement_passes: 2,
            refinement_weight: 1.0,
            normal_source: NormalSource::GaussianAxis,
            scale_gain: 1.0,
            lambda_gaussian: 1.0,
            alignment_form: AlignmentForm::Covariance,
            opt_steps: 100,
            learning_rate: 0.5,
            zero_noise: false,
            patch_size: 256,
            coverage_factor: 3.0,
            fps_start: 0,
            seed: 0,
        }
    }
}

impl UpsampleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.rate < 2 {
            return bad(format!("rate must be >= 2, got {}", self.rate));
        }
        if self.sample_rate < 1 {
            return bad("sample_rate must be >= 1".into());
        }
        if self.k_neighbors < 4 {
            return bad(format!("k_neighbors must be >= 4, got {}", self.k_neighbors));
        }
        if !(self.truncation_radius > 0.0) {
            return bad(format!("truncation_radius must be positive, got {}", self.truncation_radius));
        }
        if !(0.0..=1.0).contains(&self.refinement_weight) {
            return bad(format!("refinement_weight must be in [0, 1], got {}", self.refinement_weight));
        }
        if !(self.scale_gain >= 0.0 && self.scale_gain.is_finite()) {
            return bad(format!("scale_gain must be nonnegative, got {}", self.scale_gain));
        }
        if !(self.lambda_gaussian >= 0.0 && self.lambda_gaussian.is_finite()) {
            return bad(format!("lambda_gaussian must be nonnegative, got {}", self.lambda_gaussian));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.backend == Backend::Optimize && self.opt_steps < 1 {
            return bad("opt_steps must be >= 1 for the optimize backend".into());
        }
        if self.patch_size < self.k_neighbors {
            return bad(format!(
                "patch_size {} smaller than k_neighbors {}",
                self.patch_size, self.k_neighbors
            ));
        }
        if !(self.coverage_factor > 0.0) {
            return bad("coverage_factor must be positive".into());
        }
        Ok(())
    }
}
