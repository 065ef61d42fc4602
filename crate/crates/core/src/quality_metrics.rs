//! Structural similarity and the per-subband versus additive comparison.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayLayout;
use crate::error::{AimError, Result};
use crate::image_reconstruction::reconstruct;
use crate::scene_model::IntensityGrid;
use crate::spatial_sampling::{sampling_function, SubbandSet, UVGrid, ZeroSpacing};
use crate::visibility_forward::{additive_visibility, sample_visibility_with, visibility_of, MaskMode};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsimParams {
    pub window_size: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size.is_multiple_of(2) {
            return Err(AimError::invalid(format!(
                "SSIM window must be odd and at least 3, got {}",
                self.window_size
            )));
        }
        if !(self.k1 > 0.0) || !(self.k2 > 0.0) || !(self.window_sigma > 0.0) || !(self.dynamic_range > 0.0) {
            return Err(AimError::invalid("SSIM constants must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<f64> {
        let c = (self.window_size / 2) as f64;
        let w: Vec<f64> = (0..self.window_size)
            .map(|i| (-(i as f64 - c).powi(2) / (2.0 * self.window_sigma.powi(2))).exp())
            .collect();
        let sum: f64 = w.iter().sum();
        w.into_iter().map(|x| x / sum).collect()
    }
}

/// Separable weighted sums over every fully-inside window.
fn filter_valid(img: &Array2<f64>, k: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let n = k.len();
    let rows = Array2::from_shape_fn((h - n + 1, w), |(i, j)| (0..n).map(|t| k[t] * img[[i + t, j]]).sum::<f64>());
    Array2::from_shape_fn((h - n + 1, w - n + 1), |(i, j)| (0..n).map(|t| k[t] * rows[[i, j + t]]).sum::<f64>())
}

/// Mean local SSIM over windows lying fully inside the image.
pub fn ssim(reference: &IntensityGrid, test: &IntensityGrid, params: &SsimParams) -> Result<f64> {
    ssim_arrays(reference.values(), test.values(), params)
}

pub fn ssim_arrays(x: &Array2<f64>, y: &Array2<f64>, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if x.dim() != y.dim() {
        return Err(AimError::Dimension(format!("{:?} vs {:?}", x.dim(), y.dim())));
    }
    let (h, w) = x.dim();
    if h < params.window_size || w < params.window_size {
        return Err(AimError::Dimension(format!(
            "image {h}x{w} is smaller than the {} pixel window",
            params.window_size
        )));
    }
    let k = params.kernel();
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let mx = filter_valid(x, &k);
    let my = filter_valid(y, &k);
    let mxx = filter_valid(&(x * x), &k);
    let myy = filter_valid(&(y * y), &k);
    let mxy = filter_valid(&(x * y), &k);
    let mut total = 0.0;
    for ((((&ux, &uy), &sxx), &syy), &sxy) in mx.iter().zip(my.iter()).zip(mxx.iter()).zip(myy.iter()).zip(mxy.iter()) {
        let vx = sxx - ux * ux;
        let vy = syy - uy * uy;
        let cxy = sxy - ux * uy;
        let local = (2.0 * ux * uy + c1) * (2.0 * cxy + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        debug_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&local), "local SSIM {local}");
        total += local.clamp(-1.0, 1.0);
    }
    Ok(total / mx.len() as f64)
}

/// Affine map of the values onto `[0, 1]`.
pub fn normalize_unit(img: &IntensityGrid) -> Result<IntensityGrid> {
    let (lo, hi) = (img.min(), img.max());
    if !(hi > lo) {
        return Err(AimError::Degenerate("cannot normalize a constant image".into()));
    }
    let span = hi - lo;
    let v = img.values().mapv(|x| ((x - lo) / span).clamp(0.0, 1.0));
    IntensityGrid::new(*img.grid(), v)
}

/// Settings of the analytic per-subband versus additive comparison.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSettings {
    pub uv_bin: f64,
    pub zero_spacing: ZeroSpacing,
    pub mask: MaskMode,
    pub normalize_subbands: bool,
    pub ssim: SsimParams,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            uv_bin: UVGrid::DEFAULT_BIN,
            zero_spacing: ZeroSpacing::Include,
            mask: MaskMode::Presence,
            normalize_subbands: true,
            ssim: SsimParams::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImprovementReport {
    /// `(carrier Hz, SSIM)` in carrier order.
    pub per_subband_ssim: Vec<(f64, f64)>,
    pub added_ssim: f64,
    pub percent_increase: f64,
}

/// Column label of a carrier, in GHz.
pub fn ghz_label(f: f64) -> String {
    let g = f / 1e9;
    if (g - g.round()).abs() < 1e-9 {
        format!("{:.0}", g)
    } else {
        format!("{g}")
    }
}

impl ImprovementReport {
    pub fn from_scores(per_subband_ssim: Vec<(f64, f64)>, added_ssim: f64) -> Result<Self> {
        if per_subband_ssim.is_empty() {
            return Err(AimError::invalid("need at least one subband score"));
        }
        let mean = per_subband_ssim.iter().map(|p| p.1).sum::<f64>() / per_subband_ssim.len() as f64;
        Ok(Self {
            percent_increase: 100.0 * (added_ssim - mean) / mean,
            per_subband_ssim,
            added_ssim,
        })
    }

    pub fn mean_subband_ssim(&self) -> f64 {
        self.per_subband_ssim.iter().map(|p| p.1).sum::<f64>() / self.per_subband_ssim.len() as f64
    }

    pub fn to_json(&self) -> serde_json::Value {
        let per: serde_json::Map<String, serde_json::Value> = self
            .per_subband_ssim
            .iter()
            .map(|&(f, v)| (ghz_label(f), serde_json::json!(v)))
            .collect();
        serde_json::json!({
            "per_subband_ssim": per,
            "added_ssim": self.added_ssim,
            "percent_increase": self.percent_increase,
        })
    }

    /// `scene,<GHz>...,added,increase_percent`.
    pub fn csv_header(&self) -> String {
        let mut out = String::from("scene");
        for &(f, _) in &self.per_subband_ssim {
            let _ = write!(out, ",{}", ghz_label(f));
        }
        out.push_str(",added,increase_percent");
        out
    }

    pub fn csv_row(&self, scene: &str) -> String {
        let mut out = scene.to_string();
        for &(_, v) in &self.per_subband_ssim {
            let _ = write!(out, ",{v:.6}");
        }
        let _ = write!(out, ",{:.6},{:.4}", self.added_ssim, self.percent_increase);
        out
    }
}

/// Reconstructions of `scene` for each subband and for the additive
/// visibility, all normalized to `[0, 1]`.
pub struct SceneReconstructions {
    pub per_subband: Vec<(f64, IntensityGrid)>,
    pub added: IntensityGrid,
}

pub fn reconstruct_scene(
    scene: &IntensityGrid,
    layout: &ArrayLayout,
    subbands: &SubbandSet,
    settings: &PipelineSettings,
) -> Result<SceneReconstructions> {
    let uv = UVGrid::sized_for(layout, subbands.max_frequency(), settings.uv_bin)?;
    let vis = visibility_of(scene, &uv)?;
    let dgrid = *scene.grid();
    let sampled: Vec<_> = subbands
        .carrier_frequencies()
        .par_iter()
        .map(|&f| {
            let s = sampling_function(layout, f, &uv, settings.zero_spacing)?;
            sample_visibility_with(&vis, &s, settings.mask)
        })
        .collect::<Result<_>>()?;
    let per_subband = subbands
        .carrier_frequencies()
        .par_iter()
        .zip(sampled.par_iter())
        .map(|(&f, sv)| Ok((f, normalize_unit(&reconstruct(sv, &dgrid).to_intensity())?)))
        .collect::<Result<Vec<_>>>()?;
    let add = additive_visibility(&sampled, settings.normalize_subbands)?;
    let added = normalize_unit(&reconstruct(&add, &dgrid).to_intensity())?;
    Ok(SceneReconstructions { per_subband, added })
}

/// Runs the analytic pipeline per subband and for the additive case and
/// scores each reconstruction against the normalized scene.
pub fn evaluate_scene(
    scene: &IntensityGrid,
    layout: &ArrayLayout,
    subbands: &SubbandSet,
    settings: &PipelineSettings,
) -> Result<ImprovementReport> {
    let reference = normalize_unit(scene)?;
    let recs = reconstruct_scene(scene, layout, subbands, settings)?;
    let per = recs
        .per_subband
        .iter()
        .map(|(f, img)| Ok((*f, ssim(&reference, img, &settings.ssim)?)))
        .collect::<Result<Vec<_>>>()?;
    let added = ssim(&reference, &recs.added, &settings.ssim)?;
    ImprovementReport::from_scores(per, added)
}
