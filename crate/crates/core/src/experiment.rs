//! Experiment specifications and the commands that turn them into artifacts.
//!
//! Every command is a pure function of the validated specification and
//! writes JSON, CSV and graymap files into an output directory. Nothing
//! time- or host-dependent goes into an artifact, so reruns are
//! byte-identical.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::array_geometry::{build_circular_array, place_transmitters, ArrayLayout};
use crate::calibration::{random_gains, simulate_beacon_capture, solve_weights, ApplyWeights, WeightSet};
use crate::error::{AimError, Result};
use crate::image_reconstruction::{
    local_maxima, psf, psf_of, reconstruct, PsfReport, ReconstructedImage,
};
use crate::noise_signal_simulator::{
    correlate_capture, estimate_to_grid, simulate_capture_with, CaptureOptions, NoiseConfig,
};
use crate::pgm;
use crate::quality_metrics::{
    evaluate_scene, ghz_label, normalize_unit, reconstruct_scene, ssim, ImprovementReport, PipelineSettings,
    SsimParams,
};
use crate::scene_model::{
    project_scatterers, reference_scenes, DirectionGrid, IntensityGrid, Scatterer, ScattererScene, SceneSpec,
    DEFAULT_SCENE_EXTENT,
};
use crate::spatial_sampling::{
    additive_sampling, sampling_function, unique_sample_count, SubbandSet, UVGrid, ZeroSpacing,
};
use crate::visibility_forward::{additive_visibility, MaskMode, VisibilityGrid};

/// Name accepted in place of a spec path for the built-in defaults.
pub const PAPER_DEFAULTS: &str = "paper-defaults";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmitterRing {
    pub radius: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LayoutSpec {
    Circular {
        radius: f64,
        elements: usize,
        #[serde(default)]
        start_angle_deg: f64,
        #[serde(default)]
        transmitters: Option<TransmitterRing>,
    },
    /// Layout JSON file, relative to the spec file.
    File(String),
    Inline(ArrayLayout),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubbandSpec {
    pub carriers_hz: Vec<f64>,
    pub noise_bandwidth_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub direction: DirectionGrid,
    pub uv_bin: f64,
    pub zero_spacing: ZeroSpacing,
    pub mask: MaskMode,
    pub normalize_subbands: bool,
    pub ssim: SsimParams,
}

impl Default for GridSpec {
    fn default() -> Self {
        let s = PipelineSettings::default();
        Self {
            direction: DirectionGrid::default(),
            uv_bin: s.uv_bin,
            zero_spacing: s.zero_spacing,
            mask: s.mask,
            normalize_subbands: s.normalize_subbands,
            ssim: s.ssim,
        }
    }
}

impl GridSpec {
    pub fn settings(&self) -> PipelineSettings {
        PipelineSettings {
            uv_bin: self.uv_bin,
            zero_spacing: self.zero_spacing,
            mask: self.mask,
            normalize_subbands: self.normalize_subbands,
            ssim: self.ssim,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    #[default]
    Analytic,
    SignalSim,
}

/// Time-domain simulation parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalSpec {
    pub sample_rate: f64,
    pub duration: f64,
    pub snr_db: f64,
    /// Per-subband reflectivity factors are drawn from `1 +- jitter`.
    pub reflectivity_jitter: f64,
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            sample_rate: 100e6,
            duration: 1e-3,
            snr_db: 20.0,
            reflectivity_jitter: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSpec {
    pub perturb_gains: bool,
    pub gain_magnitude: [f64; 2],
    pub solve: bool,
    pub beacon: [f64; 3],
    pub snr_db: f64,
    pub duration: f64,
}

impl Default for CalibrationSpec {
    fn default() -> Self {
        Self {
            perturb_gains: false,
            gain_magnitude: [0.5, 2.0],
            solve: true,
            beacon: [0.0, 0.0, 1.83],
            snr_db: 20.0,
            duration: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedScene {
    pub name: String,
    pub scene: SceneSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableSpec {
    pub carriers_hz: Vec<f64>,
    pub scenes: Vec<NamedScene>,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            carriers_hz: SubbandSet::wide_sweep().carrier_frequencies().to_vec(),
            scenes: reference_scenes(DEFAULT_SCENE_EXTENT)
                .into_iter()
                .map(|(name, scene)| NamedScene { name, scene })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    Csv,
    Images,
    Json,
    Visibility,
    Capture,
}

fn default_outputs() -> Vec<OutputKind> {
    vec![OutputKind::Csv, OutputKind::Images, OutputKind::Json]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub layout: LayoutSpec,
    pub subbands: SubbandSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub scene: Option<SceneSpec>,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub signal: SignalSpec,
    #[serde(default)]
    pub calibration: Option<CalibrationSpec>,
    #[serde(default)]
    pub table: TableSpec,
    #[serde(default = "default_outputs")]
    pub outputs: Vec<OutputKind>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ExperimentSpec {
    /// 24 receivers on a 101 mm circle, four noise transmitters on a 0.3 m
    /// ring, 37-40 GHz carriers with 50 MHz of noise bandwidth, 100 MS/s.
    pub fn paper_defaults() -> Self {
        Self {
            layout: LayoutSpec::Circular {
                radius: 0.101,
                elements: 24,
                start_angle_deg: 0.0,
                transmitters: Some(TransmitterRing { radius: 0.3, count: 4 }),
            },
            subbands: SubbandSpec {
                carriers_hz: SubbandSet::ka_band_default().carrier_frequencies().to_vec(),
                noise_bandwidth_hz: 50e6,
            },
            grid: GridSpec::default(),
            scene: Some(SceneSpec::Blob {
                center: [0.0, 0.0],
                width: 0.3 * DEFAULT_SCENE_EXTENT,
            }),
            pipeline: Pipeline::Analytic,
            signal: SignalSpec::default(),
            calibration: Some(CalibrationSpec {
                perturb_gains: true,
                ..CalibrationSpec::default()
            }),
            table: TableSpec::default(),
            outputs: default_outputs(),
            seed: Some(0),
        }
    }

    /// Parses a spec; syntax and schema errors become validation errors
    /// carrying the line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AimError::Validation(format!("spec: {e}")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads `path`, or the built-in defaults for [`PAPER_DEFAULTS`], and
    /// validates the result.
    pub fn load(path: &str) -> Result<Experiment> {
        let (spec, base) = Self::read(path)?;
        spec.resolve(&base)
    }

    /// Unvalidated spec plus the directory its relative paths refer to.
    pub fn read(path: &str) -> Result<(Self, PathBuf)> {
        if path == PAPER_DEFAULTS {
            return Ok((Self::paper_defaults(), PathBuf::from(".")));
        }
        let p = Path::new(path);
        let text = std::fs::read_to_string(p)?;
        let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    /// Validates the spec and resolves file references against `base`.
    pub fn resolve(self, base: &Path) -> Result<Experiment> {
        let v = |field: &str, e: AimError| AimError::Validation(format!("{field}: {e}"));
        let subbands = SubbandSet::new(self.subbands.carriers_hz.clone(), self.subbands.noise_bandwidth_hz)
            .map_err(|e| v("subbands", e))?;
        let layout = match &self.layout {
            LayoutSpec::Circular {
                radius,
                elements,
                start_angle_deg,
                transmitters,
            } => {
                let l = build_circular_array(*radius, *elements, *start_angle_deg).map_err(|e| v("layout", e))?;
                match transmitters {
                    Some(t) => place_transmitters(&l, t.radius, t.count).map_err(|e| v("layout.transmitters", e))?,
                    None => l,
                }
            }
            LayoutSpec::File(path) => {
                let full = base.join(path);
                if !full.is_file() {
                    return Err(AimError::Validation(format!(
                        "layout.file: {} does not exist",
                        full.display()
                    )));
                }
                ArrayLayout::load(&full).map_err(|e| v("layout.file", e))?
            }
            LayoutSpec::Inline(l) => ArrayLayout::from_json(&l.to_json()?).map_err(|e| v("layout.inline", e))?,
        };
        let d = &self.grid.direction;
        DirectionGrid::new(d.n_alpha(), d.n_beta(), d.alpha_half_span(), d.beta_half_span())
            .map_err(|e| v("grid.direction", e))?;
        UVGrid::new(self.grid.uv_bin, 0).map_err(|e| v("grid.uv_bin", e))?;
        self.grid.ssim.validate().map_err(|e| v("grid.ssim", e))?;
        if let Some(scene) = &self.scene {
            if let Some(p) = scene.referenced_path(base) {
                if !p.is_file() {
                    return Err(AimError::Validation(format!("scene.path: {} does not exist", p.display())));
                }
            }
            scene.scatterer_scene().map_err(|e| v("scene", e))?;
        }
        for s in &self.table.scenes {
            if let Some(p) = s.scene.referenced_path(base) {
                if !p.is_file() {
                    return Err(AimError::Validation(format!(
                        "table.scenes[{}].path: {} does not exist",
                        s.name,
                        p.display()
                    )));
                }
            }
        }
        if !self.table.carriers_hz.is_empty() {
            SubbandSet::new(self.table.carriers_hz.clone(), self.subbands.noise_bandwidth_hz)
                .map_err(|e| v("table.carriers_hz", e))?;
        }
        if self.pipeline == Pipeline::SignalSim {
            if self.seed.is_none() {
                return Err(AimError::Validation("seed: required when pipeline is signal_sim".into()));
            }
            if layout.transmitters().is_empty() {
                return Err(AimError::Validation(
                    "layout: signal_sim needs transmitters".into(),
                ));
            }
            match &self.scene {
                Some(SceneSpec::Scatterers { .. }) => {}
                _ => {
                    return Err(AimError::Validation(
                        "scene: signal_sim needs a scatterers scene".into(),
                    ))
                }
            }
            let probe = NoiseConfig {
                n_transmitters: layout.transmitters().len(),
                bandwidth: subbands.noise_bandwidth(),
                carrier: subbands.max_frequency(),
                duration: self.signal.duration,
                sample_rate: self.signal.sample_rate,
                seed: 0,
            };
            probe.validate().map_err(|e| v("signal", e))?;
        }
        if let Some(c) = &self.calibration {
            if !(c.gain_magnitude[0] > 0.0 && c.gain_magnitude[1] >= c.gain_magnitude[0]) {
                return Err(AimError::Validation("calibration.gain_magnitude: need 0 < min <= max".into()));
            }
            if !(c.beacon[2] > 0.0) {
                return Err(AimError::Validation("calibration.beacon: must lie in front of the array".into()));
            }
        }
        let uv = UVGrid::sized_for(&layout, subbands.max_frequency(), self.grid.uv_bin)?;
        Ok(Experiment {
            base_dir: base.to_path_buf(),
            layout,
            subbands,
            uv,
            spec: self,
        })
    }
}

/// A validated spec with its resolved layout and subbands.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub base_dir: PathBuf,
    pub layout: ArrayLayout,
    pub subbands: SubbandSet,
    pub uv: UVGrid,
}

struct Artifacts<'a> {
    dir: &'a Path,
    outputs: &'a [OutputKind],
    written: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path, outputs: &'a [OutputKind]) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir,
            outputs,
            written: Vec::new(),
        })
    }

    fn wants(&self, k: OutputKind) -> bool {
        self.outputs.contains(&k)
    }

    fn text(&mut self, kind: OutputKind, name: &str, content: &str) -> Result<()> {
        if self.wants(kind) {
            std::fs::write(self.dir.join(name), content)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let text = serde_json::to_string_pretty(value)? + "\n";
        self.text(OutputKind::Json, name, &text)
    }

    fn image(&mut self, name: &str, img: &ReconstructedImage) -> Result<()> {
        if self.wants(OutputKind::Images) {
            img.save_pgm(&self.dir.join(name))?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn intensity(&mut self, name: &str, img: &IntensityGrid) -> Result<()> {
        if self.wants(OutputKind::Images) {
            img.save_pgm(&self.dir.join(name), pgm::Depth::Sixteen)?;
            self.written.push(name.to_string());
        }
        Ok(())
    }

    fn visibility(&mut self, name: &str, vis: &VisibilityGrid) -> Result<()> {
        if self.wants(OutputKind::Visibility) {
            vis.save(&self.dir.join(format!("{name}.bin")))?;
            std::fs::write(self.dir.join(format!("{name}.csv")), vis.to_csv())?;
            self.written.push(format!("{name}.bin"));
            self.written.push(format!("{name}.csv"));
        }
        Ok(())
    }

    /// Always writes `summary.json` listing the other artifacts.
    fn finish(mut self, mut summary: Value) -> Result<Value> {
        self.written.sort();
        summary["artifacts"] = json!(self.written);
        std::fs::write(self.dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        Ok(summary)
    }
}

fn tag(f: f64) -> String {
    format!("{}GHz", ghz_label(f))
}

/// Independent seed for subband `k` of a run seeded with `seed`.
pub fn subband_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1)
}

/// Per-subband sampling functions, their union and the unique counts.
pub fn cmd_sampling(exp: &Experiment, out: &Path) -> Result<Value> {
    let mut art = Artifacts::new(out, &exp.spec.outputs)?;
    let zero = exp.spec.grid.zero_spacing;
    let parts = exp
        .subbands
        .carrier_frequencies()
        .iter()
        .map(|&f| sampling_function(&exp.layout, f, &exp.uv, zero))
        .collect::<Result<Vec<_>>>()?;
    let additive = additive_sampling(&parts)?;
    let mut counts = Map::new();
    for (s, &f) in parts.iter().zip(exp.subbands.carrier_frequencies()) {
        counts.insert(ghz_label(f), json!(unique_sample_count(s)));
        if art.wants(OutputKind::Csv) {
            s.export(out, &format!("sampling_{}", tag(f)))?;
            for ext in ["csv", "json", "pgm"] {
                art.written.push(format!("sampling_{}.{ext}", tag(f)));
            }
        }
    }
    let total = unique_sample_count(&additive);
    counts.insert("additive".into(), json!(total));
    if art.wants(OutputKind::Csv) {
        additive.export(out, "sampling_additive")?;
        for ext in ["csv", "json", "pgm"] {
            art.written.push(format!("sampling_additive.{ext}"));
        }
    }
    let mean = parts.iter().map(|s| unique_sample_count(s) as f64).sum::<f64>() / parts.len() as f64;
    art.finish(json!({
        "command": "sampling",
        "layout": exp.layout.label(),
        "bin_size": exp.uv.bin_size(),
        "half_extent": exp.uv.half_extent(),
        "zero_spacing": zero,
        "unique_counts": counts,
        "additive_ratio": total as f64 / mean,
    }))
}

/// PSF of each subband and of the additive sampling function.
pub fn psf_reports(exp: &Experiment) -> Result<Vec<(String, PsfReport)>> {
    let zero = exp.spec.grid.zero_spacing;
    let dgrid = exp.spec.grid.direction;
    let parts = exp
        .subbands
        .carrier_frequencies()
        .iter()
        .map(|&f| sampling_function(&exp.layout, f, &exp.uv, zero))
        .collect::<Result<Vec<_>>>()?;
    let additive = additive_sampling(&parts)?;
    let mut out = Vec::new();
    for (s, &f) in parts.iter().zip(exp.subbands.carrier_frequencies()) {
        out.push((ghz_label(f), psf(s, &dgrid)?));
    }
    out.push(("additive".to_string(), psf(&additive, &dgrid)?));
    Ok(out)
}

pub fn cmd_psf(exp: &Experiment, out: &Path) -> Result<Value> {
    let mut art = Artifacts::new(out, &exp.spec.outputs)?;
    let reports = psf_reports(exp)?;
    let mut summary = Map::new();
    for (label, rep) in &reports {
        let stem = if label == "additive" { "psf_additive".to_string() } else { format!("psf_{label}GHz") };
        art.image(&format!("{stem}.pgm"), &rep.psf)?;
        art.text(OutputKind::Csv, &format!("{stem}.csv"), &rep.psf.to_csv())?;
        art.json(&format!("{stem}.json"), &rep.to_json())?;
        summary.insert(label.clone(), rep.to_json());
    }
    let singles: Vec<f64> = reports[..reports.len() - 1].iter().map(|r| r.1.peak_sidelobe_db).collect();
    let mean = singles.iter().sum::<f64>() / singles.len() as f64;
    art.finish(json!({
        "command": "psf",
        "reports": summary,
        "mean_subband_peak_sidelobe_db": finite_or_null(mean),
    }))
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Reconstructions of a signal-simulated scatterer scene.
pub struct SignalImages {
    pub per_subband: Vec<(f64, VisibilityGrid, ReconstructedImage)>,
    pub added: ReconstructedImage,
}

/// Correlated visibility of `scene` at subband `k` (carrier `f`).
#[allow(clippy::too_many_arguments)]
pub fn simulate_subband_visibility(
    layout: &ArrayLayout,
    scene: &ScattererScene,
    bandwidth: f64,
    f: f64,
    signal: &SignalSpec,
    uv: &UVGrid,
    zero: ZeroSpacing,
    seed: u64,
    gains: Option<&[Complex64]>,
    weights: Option<&WeightSet>,
) -> Result<VisibilityGrid> {
    let config = NoiseConfig {
        n_transmitters: layout.transmitters().len(),
        bandwidth,
        carrier: f,
        duration: signal.duration,
        sample_rate: signal.sample_rate,
        seed,
    };
    let factors = (signal.reflectivity_jitter > 0.0).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 << 35);
        (0..scene.scatterers.len())
            .map(|_| 1.0 + signal.reflectivity_jitter * rng.random_range(-1.0..=1.0))
            .collect()
    });
    let opts = CaptureOptions {
        snr_db: signal.snr_db,
        channel_gains: gains.map(<[Complex64]>::to_vec),
        reflectivity_factors: factors,
    };
    let capture = simulate_capture_with(layout, scene, &config, &opts)?;
    let mut est = correlate_capture(&capture)?;
    if let Some(w) = weights {
        est = est.apply_weights(w)?;
    }
    estimate_to_grid(&est, layout, f, uv, zero)
}

pub fn signal_images(
    exp: &Experiment,
    scene: &ScattererScene,
    seed: u64,
) -> Result<SignalImages> {
    let dgrid = exp.spec.grid.direction;
    let per_subband = exp
        .subbands
        .carrier_frequencies()
        .iter()
        .enumerate()
        .map(|(k, &f)| {
            let vis = simulate_subband_visibility(
                &exp.layout,
                scene,
                exp.subbands.noise_bandwidth(),
                f,
                &exp.spec.signal,
                &exp.uv,
                exp.spec.grid.zero_spacing,
                subband_seed(seed, k),
                None,
                None,
            )?;
            let img = reconstruct(&vis, &dgrid);
            Ok((f, vis, img))
        })
        .collect::<Result<Vec<_>>>()?;
    let vis: Vec<VisibilityGrid> = per_subband.iter().map(|p| p.1.clone()).collect();
    let add = additive_visibility(&vis, exp.spec.grid.normalize_subbands)?;
    Ok(SignalImages {
        added: reconstruct(&add, &dgrid),
        per_subband,
    })
}

pub fn cmd_image(exp: &Experiment, out: &Path) -> Result<Value> {
    let scene_spec = exp
        .spec
        .scene
        .as_ref()
        .ok_or_else(|| AimError::Validation("scene: the image command needs a scene".into()))?;
    let dgrid = exp.spec.grid.direction;
    let settings = exp.spec.grid.settings();
    let mut art = Artifacts::new(out, &exp.spec.outputs)?;
    let mut summary = json!({ "command": "image", "pipeline": exp.spec.pipeline });
    match exp.spec.pipeline {
        Pipeline::Analytic => {
            let scene = scene_spec.render(&dgrid, &exp.base_dir)?;
            let fov_ok = exp
                .subbands
                .carrier_frequencies()
                .iter()
                .all(|&f| crate::scene_model::check_field_of_view(&scene, &exp.layout, f));
            art.intensity("reference.pgm", &scene)?;
            let recs = reconstruct_scene(&scene, &exp.layout, &exp.subbands, &settings)?;
            for (f, img) in &recs.per_subband {
                save_intensity(&mut art, &format!("image_{}", tag(*f)), img)?;
            }
            save_intensity(&mut art, "image_additive", &recs.added)?;
            let report = evaluate_scene(&scene, &exp.layout, &exp.subbands, &settings)?;
            art.json("report.json", &report.to_json())?;
            summary["report"] = report.to_json();
            summary["within_field_of_view"] = json!(fov_ok);
        }
        Pipeline::SignalSim => {
            let scene = scene_spec.scatterer_scene()?.expect("validated as scatterers");
            let seed = exp.spec.seed.expect("validated");
            let images = signal_images(exp, &scene, seed)?;
            let footprint = match scene_spec {
                SceneSpec::Scatterers { footprint, .. } => *footprint,
                _ => 0.0,
            };
            let reference = project_scatterers(&scene, &dgrid, footprint)?;
            art.intensity("reference.pgm", &reference)?;
            let reference_unit = normalize_unit(&reference).ok();
            let mut scores = Vec::new();
            for (f, vis, img) in &images.per_subband {
                art.image(&format!("image_{}.pgm", tag(*f)), img)?;
                art.text(OutputKind::Csv, &format!("image_{}.csv", tag(*f)), &img.to_csv())?;
                art.visibility(&format!("visibility_{}", tag(*f)), vis)?;
                if let Some(r) = &reference_unit {
                    scores.push((*f, ssim(r, &normalize_unit(&img.to_intensity())?, &settings.ssim)?));
                }
            }
            art.image("image_additive.pgm", &images.added)?;
            art.text(OutputKind::Csv, "image_additive.csv", &images.added.to_csv())?;
            let peaks: Vec<Value> = local_maxima(images.added.values(), 10, 2)
                .into_iter()
                .map(|(a, b, v)| json!({"alpha": dgrid.alpha(a), "beta": dgrid.beta(b), "value": v}))
                .collect();
            let dirs: Vec<Value> = scene
                .directions()
                .into_iter()
                .map(|(a, b)| json!({"alpha": a, "beta": b}))
                .collect();
            art.json("peaks.json", &json!({"peaks": peaks, "scatterer_directions": dirs}))?;
            if let Some(r) = &reference_unit {
                let added = ssim(r, &normalize_unit(&images.added.to_intensity())?, &settings.ssim)?;
                let report = ImprovementReport::from_scores(scores, added)?;
                art.json("report.json", &report.to_json())?;
                summary["report"] = report.to_json();
            }
            summary["peaks"] = json!(peaks);
        }
    }
    art.finish(summary)
}

fn save_intensity(art: &mut Artifacts, stem: &str, img: &IntensityGrid) -> Result<()> {
    art.intensity(&format!("{stem}.pgm"), img)?;
    let rec = ReconstructedImage::from_values(*img.grid(), img.values().clone())?;
    art.text(OutputKind::Csv, &format!("{stem}.csv"), &rec.to_csv())
}

/// PSF measured through the signal chain: a boresight point reflector at
/// `range`, optionally with channel gains and calibration weights.
#[allow(clippy::too_many_arguments)]
pub fn full_chain_psf(
    layout: &ArrayLayout,
    bandwidth: f64,
    f: f64,
    signal: &SignalSpec,
    uv: &UVGrid,
    dgrid: &DirectionGrid,
    zero: ZeroSpacing,
    range: f64,
    seed: u64,
    gains: Option<&[Complex64]>,
    weights: Option<&WeightSet>,
) -> Result<PsfReport> {
    let point = ScattererScene::new(
        vec![Scatterer {
            position: [0.0, 0.0, range],
            reflectivity: 1.0,
            radius: 0.0,
        }],
        range,
    )?;
    let vis = simulate_subband_visibility(layout, &point, bandwidth, f, signal, uv, zero, seed, gains, weights)?;
    Ok(psf_of(&vis, dgrid))
}

/// Beacon capture and weight solve for subband `k`.
pub fn calibrate_subband(
    layout: &ArrayLayout,
    cal: &CalibrationSpec,
    f: f64,
    sample_rate: f64,
    bandwidth: f64,
    seed: u64,
    gains: &[Complex64],
) -> Result<WeightSet> {
    let config = NoiseConfig {
        n_transmitters: layout.transmitters().len().max(1),
        bandwidth,
        carrier: f,
        duration: cal.duration,
        sample_rate,
        seed,
    };
    let capture = simulate_beacon_capture(layout, cal.beacon, &config, gains, cal.snr_db)?;
    solve_weights(&capture, layout, cal.beacon, f)
}

pub fn cmd_calibrate(exp: &Experiment, out: &Path) -> Result<Value> {
    let cal = exp.spec.calibration.clone().unwrap_or_default();
    let seed = exp.spec.seed.unwrap_or(0);
    let n = exp.layout.n_receivers();
    let dgrid = exp.spec.grid.direction;
    let zero = exp.spec.grid.zero_spacing;
    let mut art = Artifacts::new(out, &exp.spec.outputs)?;
    let results = exp
        .subbands
        .carrier_frequencies()
        .par_iter()
        .enumerate()
        .map(|(k, &f)| {
            let s = subband_seed(seed, k);
            let gains = if cal.perturb_gains {
                random_gains(n, s, cal.gain_magnitude[0], cal.gain_magnitude[1])
            } else {
                vec![Complex64::new(1.0, 0.0); n]
            };
            let weights = if cal.solve {
                calibrate_subband(&exp.layout, &cal, f, exp.spec.signal.sample_rate, exp.subbands.noise_bandwidth(), s, &gains)?
            } else {
                WeightSet::identity(n, f)
            };
            let comparison = if exp.layout.transmitters().is_empty() {
                None
            } else {
                let run = |g: Option<&[Complex64]>, w: Option<&WeightSet>| {
                    full_chain_psf(
                        &exp.layout,
                        exp.subbands.noise_bandwidth(),
                        f,
                        &exp.spec.signal,
                        &exp.uv,
                        &dgrid,
                        zero,
                        cal.beacon[2],
                        s,
                        g,
                        w,
                    )
                };
                Some((run(None, None)?, run(Some(&gains), None)?, run(Some(&gains), Some(&weights))?))
            };
            Ok((f, weights, comparison))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut per = Map::new();
    let mut total = 0;
    for (f, weights, comparison) in &results {
        total += weights.len();
        art.text(OutputKind::Json, &format!("weights_{}.json", tag(*f)), &(weights.to_json()? + "\n"))?;
        let mut entry = json!({ "residual": weights.residual(), "n_weights": weights.len() });
        if let Some((ideal, raw, fixed)) = comparison {
            art.image(&format!("psf_ideal_{}.pgm", tag(*f)), &ideal.psf)?;
            art.image(&format!("psf_uncalibrated_{}.pgm", tag(*f)), &raw.psf)?;
            art.image(&format!("psf_calibrated_{}.pgm", tag(*f)), &fixed.psf)?;
            entry["ideal"] = ideal.to_json();
            entry["uncalibrated"] = raw.to_json();
            entry["calibrated"] = fixed.to_json();
        }
        per.insert(ghz_label(*f), entry);
    }
    art.json("calibration.json", &Value::Object(per.clone()))?;
    art.finish(json!({
        "command": "calibrate",
        "total_weights": total,
        "subbands": per,
    }))
}

/// Table of SSIM per subband, additive and percent increase per scene.
pub fn table_reports(exp: &Experiment) -> Result<Vec<(String, ImprovementReport)>> {
    let carriers = if exp.spec.table.carriers_hz.is_empty() {
        SubbandSet::wide_sweep().carrier_frequencies().to_vec()
    } else {
        exp.spec.table.carriers_hz.clone()
    };
    let subbands = SubbandSet::new(carriers, exp.subbands.noise_bandwidth())?;
    let dgrid = exp.spec.grid.direction;
    let settings = exp.spec.grid.settings();
    exp.spec
        .table
        .scenes
        .par_iter()
        .map(|s| {
            let scene = s.scene.render(&dgrid, &exp.base_dir)?;
            Ok((s.name.clone(), evaluate_scene(&scene, &exp.layout, &subbands, &settings)?))
        })
        .collect()
}

pub fn cmd_table(exp: &Experiment, out: &Path) -> Result<Value> {
    let mut art = Artifacts::new(out, &exp.spec.outputs)?;
    let rows = table_reports(exp)?;
    let mut csv = String::new();
    let mut per = Map::new();
    for (i, (name, rep)) in rows.iter().enumerate() {
        if i == 0 {
            csv.push_str(&rep.csv_header());
            csv.push('\n');
        }
        csv.push_str(&rep.csv_row(name));
        csv.push('\n');
        per.insert(name.clone(), rep.to_json());
    }
    // the table itself is the point of this command: always written
    std::fs::write(out.join("table.csv"), &csv)?;
    art.written.push("table.csv".into());
    art.json("table.json", &Value::Object(per.clone()))?;
    art.finish(json!({ "command": "table", "scenes": per }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults_resolve() {
        let exp = ExperimentSpec::paper_defaults().resolve(Path::new(".")).unwrap();
        assert_eq!(exp.layout.n_receivers(), 24);
        assert_eq!(exp.layout.transmitters().len(), 4);
        assert_eq!(exp.subbands.len(), 4);
        let text = ExperimentSpec::paper_defaults().to_json().unwrap();
        assert_eq!(ExperimentSpec::from_json(&text).unwrap(), ExperimentSpec::paper_defaults());
    }

    #[test]
    fn validation_errors() {
        let mut spec = ExperimentSpec::paper_defaults();
        spec.subbands.carriers_hz.clear();
        assert!(matches!(spec.resolve(Path::new(".")), Err(AimError::Validation(_))));

        let mut spec = ExperimentSpec::paper_defaults();
        spec.pipeline = Pipeline::SignalSim;
        spec.seed = None;
        assert!(matches!(spec.resolve(Path::new(".")), Err(AimError::Validation(_))));

        let mut spec = ExperimentSpec::paper_defaults();
        spec.scene = Some(SceneSpec::Raster {
            path: "does/not/exist.pgm".into(),
            extent: None,
        });
        assert!(matches!(spec.resolve(Path::new(".")), Err(AimError::Validation(_))));

        let unknown = r#"{"layout": {"circular": {"radius": 0.1, "elements": 8}},
                          "subbands": {"carriers_hz": [3.7e10], "noise_bandwidth_hz": 5e7},
                          "colour": 1}"#;
        match ExperimentSpec::from_json(unknown) {
            Err(AimError::Validation(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let nested = r#"{"layout": {"circular": {"radius": 0.1, "elements": 8, "spin": 2}},
                         "subbands": {"carriers_hz": [3.7e10], "noise_bandwidth_hz": 5e7}}"#;
        assert!(ExperimentSpec::from_json(nested).is_err());
    }

    #[test]
    fn subband_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..4).map(|k| subband_seed(0, k)).collect();
        assert_eq!(seeds.len(), 4);
        assert_ne!(subband_seed(1, 0), subband_seed(0, 0));
    }
}
