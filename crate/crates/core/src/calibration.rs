//! Per-receiver complex weights from a point-source beacon measurement.
//!
//! The measured channel phasors are the principal eigenvector of the channel
//! covariance. Each weight maps the measured phasor onto the phasor a perfect
//! channel would see from the known beacon position (spherical wavefront),
//! `w_i = p_i / m_i`, then all weights are divided by the reference weight.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayLayout;
use crate::error::{AimError, Result};
use crate::noise_signal_simulator::{NoiseConfig, SignalCapture, VisibilityEstimate};
use crate::spatial_sampling::SPEED_OF_LIGHT;

const BEACON_NOISE_STREAM: u64 = 1 << 33;
const GAIN_STREAM: u64 = 1 << 34;
/// Power iterations for the principal eigenvector.
const POWER_ITERATIONS: usize = 500;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSet {
    weights: Vec<Complex64>,
    subband: f64,
    reference_index: usize,
    /// Fraction of covariance power outside the dominant source, `1 - l1 / tr`.
    residual: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightFile {
    subband_hz: f64,
    reference: usize,
    weights: Vec<[f64; 2]>,
}

impl WeightSet {
    pub fn new(weights: Vec<Complex64>, subband: f64, reference_index: usize) -> Result<Self> {
        if reference_index >= weights.len() {
            return Err(AimError::invalid("reference index out of range"));
        }
        if weights.iter().any(|w| !(w.norm() > 0.0) || !w.norm().is_finite()) {
            return Err(AimError::invalid("weights must be finite and non-zero"));
        }
        let r = weights[reference_index];
        let mut weights: Vec<Complex64> = weights.iter().map(|w| w / r).collect();
        weights[reference_index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            weights,
            subband,
            reference_index,
            residual: 0.0,
        })
    }

    pub fn identity(n: usize, subband: f64) -> Self {
        Self::new(vec![Complex64::new(1.0, 0.0); n], subband, 0).expect("valid")
    }

    pub fn weights(&self) -> &[Complex64] {
        &self.weights
    }

    pub fn subband(&self) -> f64 {
        self.subband
    }

    pub fn reference_index(&self) -> usize {
        self.reference_index
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Element-wise reciprocal, normalized to the same reference.
    pub fn inverse(&self) -> Self {
        Self::new(self.weights.iter().map(|w| w.inv()).collect(), self.subband, self.reference_index)
            .expect("reciprocal of valid weights is valid")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&WeightFile {
            subband_hz: self.subband,
            reference: self.reference_index,
            weights: self.weights.iter().map(|w| [w.re, w.im]).collect(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: WeightFile = serde_json::from_str(text)?;
        let weights: Vec<Complex64> = f.weights.iter().map(|w| Complex64::new(w[0], w[1])).collect();
        if f.reference >= weights.len() || weights[f.reference] != Complex64::new(1.0, 0.0) {
            return Err(AimError::format("weight file", "reference weight must be exactly 1"));
        }
        Self::new(weights, f.subband_hz, f.reference)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Phasor a perfect receiver at each element sees from a source at
/// `beacon`: `exp(-j 2 pi f |beacon - p_i| / c)`.
pub fn ideal_phasors(layout: &ArrayLayout, beacon: [f64; 3], frequency: f64) -> Vec<Complex64> {
    layout
        .receivers()
        .iter()
        .map(|p| {
            let r = ((beacon[0] - p[0]).powi(2) + (beacon[1] - p[1]).powi(2) + beacon[2].powi(2)).sqrt();
            Complex64::from_polar(1.0, -2.0 * PI * frequency * r / SPEED_OF_LIGHT)
        })
        .collect()
}

/// Random complex gains with magnitudes uniform in `[min_mag, max_mag]` and
/// uniform phase.
pub fn random_gains(n: usize, seed: u64, min_mag: f64, max_mag: f64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GAIN_STREAM);
    (0..n)
        .map(|_| {
            let m = rng.random_range(min_mag..=max_mag);
            let phi = rng.random_range(0.0..2.0 * PI);
            Complex64::from_polar(m, phi)
        })
        .collect()
}

/// Continuous-wave beacon at the configured carrier, seen at baseband as a
/// constant geometric phasor per channel, scaled by `gains` and corrupted by
/// complex white noise at `snr_db` relative to unit signal power (before the
/// gains).
pub fn simulate_beacon_capture(
    layout: &ArrayLayout,
    beacon: [f64; 3],
    config: &NoiseConfig,
    gains: &[Complex64],
    snr_db: f64,
) -> Result<SignalCapture> {
    config.validate()?;
    if !(beacon[2] > 0.0) {
        return Err(AimError::invalid(format!(
            "beacon at z = {} is not in front of the array",
            beacon[2]
        )));
    }
    if gains.len() != layout.n_receivers() {
        return Err(AimError::Dimension(format!(
            "{} gains for {} receivers",
            gains.len(),
            layout.n_receivers()
        )));
    }
    let n = config.n_samples();
    let phasors = ideal_phasors(layout, beacon, config.carrier);
    let sigma = if snr_db == f64::INFINITY {
        0.0
    } else {
        (10f64.powf(-snr_db / 10.0) / 2.0).sqrt()
    };
    let mut channels = Array2::<Complex64>::zeros((layout.n_receivers(), n));
    for (a, mut row) in channels.axis_iter_mut(Axis(0)).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(BEACON_NOISE_STREAM + a as u64);
        for z in row.iter_mut() {
            let noise = if sigma > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re * sigma, im * sigma)
            } else {
                Complex64::new(0.0, 0.0)
            };
            *z = gains[a] * (phasors[a] + noise);
        }
    }
    Ok(SignalCapture {
        channels,
        sample_rate: config.sample_rate,
        carrier: config.carrier,
        config: Some(config.clone()),
        layout_label: layout.label().to_string(),
    })
}

/// Principal eigenpair of a Hermitian positive semi-definite matrix.
fn principal_eigen(r: &Array2<Complex64>) -> (f64, Array1<Complex64>) {
    let n = r.nrows();
    let mut v = Array1::from_elem(n, Complex64::new(1.0 / (n as f64).sqrt(), 0.0));
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATIONS {
        let w = r.dot(&v);
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (0.0, v);
        }
        let next = w / Complex64::new(norm, 0.0);
        let delta: f64 = next.iter().zip(v.iter()).map(|(a, b)| (a - b).norm_sqr()).sum();
        v = next;
        lambda = norm;
        if delta < 1e-30 {
            break;
        }
    }
    (lambda, v)
}

/// Solves weights from a beacon capture.
pub fn solve_weights(
    capture: &SignalCapture,
    layout: &ArrayLayout,
    beacon: [f64; 3],
    subband: f64,
) -> Result<WeightSet> {
    let (nc, ns) = capture.channels.dim();
    if nc != layout.n_receivers() {
        return Err(AimError::Dimension(format!(
            "capture has {nc} channels, layout {} receivers",
            layout.n_receivers()
        )));
    }
    if ns == 0 {
        return Err(AimError::Degenerate("capture has no samples".into()));
    }
    let x = &capture.channels;
    let xh = x.t().mapv(|z| z.conj());
    let cov = x.dot(&xh) / Complex64::new(ns as f64, 0.0);
    let powers: Vec<f64> = (0..nc).map(|a| cov[[a, a]].re).collect();
    let max_power = powers.iter().copied().fold(0.0, f64::max);
    if let Some(dead) = powers.iter().position(|&p| !(p > 1e-12 * max_power)) {
        return Err(AimError::UnrecoverableChannel { index: dead });
    }
    let (lambda, v) = principal_eigen(&cov);
    let trace: f64 = powers.iter().sum();
    let residual = (1.0 - lambda / trace).max(0.0);
    if residual > 0.5 {
        log::warn!("beacon capture is not dominated by a single source (residual {residual:.3})");
    }
    let m: Vec<Complex64> = v.iter().map(|z| z * lambda.sqrt()).collect();
    let peak = m.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(dead) = m.iter().position(|z| !(z.norm() > 1e-6 * peak)) {
        return Err(AimError::UnrecoverableChannel { index: dead });
    }
    let p = ideal_phasors(layout, beacon, subband);
    let w: Vec<Complex64> = p.iter().zip(&m).map(|(p, m)| p / m).collect();
    let mut set = WeightSet::new(w, subband, 0)?;
    set.residual = residual;
    Ok(set)
}

/// Multiplication by calibration weights.
pub trait ApplyWeights: Sized {
    fn apply_weights(&self, ws: &WeightSet) -> Result<Self>;
}

impl ApplyWeights for SignalCapture {
    /// Channel `i` times `w_i`.
    fn apply_weights(&self, ws: &WeightSet) -> Result<Self> {
        if ws.len() != self.n_channels() {
            return Err(AimError::Dimension(format!(
                "{} weights for {} channels",
                ws.len(),
                self.n_channels()
            )));
        }
        let mut out = self.clone();
        for (mut row, &w) in out.channels.axis_iter_mut(Axis(0)).zip(ws.weights()) {
            row.mapv_inplace(|z| z * w);
        }
        Ok(out)
    }
}

impl ApplyWeights for VisibilityEstimate {
    /// Pair `(a, b)` times `w_a conj(w_b)`.
    fn apply_weights(&self, ws: &WeightSet) -> Result<Self> {
        if ws.len() != self.n_receivers() {
            return Err(AimError::Dimension(format!(
                "{} weights for {} receivers",
                ws.len(),
                self.n_receivers()
            )));
        }
        let w = ws.weights();
        let mut out = self.clone();
        for ((a, b), z) in out.values.indexed_iter_mut() {
            *z *= w[a] * w[b].conj();
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::build_circular_array;
    use crate::noise_signal_simulator::correlate_capture;

    fn setup() -> (ArrayLayout, NoiseConfig) {
        let layout = build_circular_array(0.101, 24, 0.0).unwrap();
        let config = NoiseConfig {
            duration: 1e-4,
            ..NoiseConfig::default()
        };
        (layout, config)
    }

    const BEACON: [f64; 3] = [0.0, 0.0, 1.83];

    #[test]
    fn unit_gains_far_boresight_in_phase() {
        let (layout, config) = setup();
        let ones = vec![Complex64::new(1.0, 0.0); 24];
        let cap = simulate_beacon_capture(&layout, [0.0, 0.0, 1e4], &config, &ones, f64::INFINITY).unwrap();
        let first = cap.channels[[0, 0]];
        for a in 0..24 {
            assert!((cap.channels[[a, 0]] - first).norm() < 1e-9);
        }
        let g = Complex64::from_polar(1.7, 0.4);
        let scaled = simulate_beacon_capture(&layout, BEACON, &config, &vec![g; 24], 20.0).unwrap();
        let base = simulate_beacon_capture(&layout, BEACON, &config, &ones, 20.0).unwrap();
        for (x, y) in scaled.channels.iter().zip(base.channels.iter()) {
            assert!((x - g * y).norm() < 1e-12);
        }
        assert!(simulate_beacon_capture(&layout, [0.0, 0.0, 0.0], &config, &ones, 20.0).is_err());
    }

    #[test]
    fn near_field_phase_follows_path_length() {
        let (layout, config) = setup();
        let ones = vec![Complex64::new(1.0, 0.0); 24];
        let cap = simulate_beacon_capture(&layout, BEACON, &config, &ones, f64::INFINITY).unwrap();
        let lambda = SPEED_OF_LIGHT / config.carrier;
        let r = 0.101f64;
        let extra = 2.0 * PI * ((BEACON[2].powi(2) + r * r).sqrt() - BEACON[2]) / lambda;
        let far = Complex64::from_polar(1.0, -2.0 * PI * BEACON[2] / lambda);
        for a in 0..24 {
            let curvature = -(cap.channels[[a, 0]] / far).arg();
            let diff = (curvature - extra).rem_euclid(2.0 * PI);
            assert!(diff.min(2.0 * PI - diff) < 1e-6, "element {a}");
        }
    }

    #[test]
    fn unit_gains_solve_to_ones() {
        let (layout, config) = setup();
        let ones = vec![Complex64::new(1.0, 0.0); 24];
        for seed in 0..3 {
            let c = NoiseConfig { seed, ..config.clone() };
            let cap = simulate_beacon_capture(&layout, BEACON, &c, &ones, 20.0).unwrap();
            let ws = solve_weights(&cap, &layout, BEACON, c.carrier).unwrap();
            assert_eq!(ws.len(), 24);
            assert_eq!(ws.weights()[0], Complex64::new(1.0, 0.0));
            assert!(ws.weights().iter().all(|w| (w - 1.0).norm() <= 0.05));
            assert!(ws.residual() < 0.05);
        }
    }

    #[test]
    fn gains_are_inverted_up_to_a_constant() {
        let (layout, config) = setup();
        let gains = random_gains(24, 4, 0.5, 2.0);
        let cap = simulate_beacon_capture(&layout, BEACON, &config, &gains, 30.0).unwrap();
        let ws = solve_weights(&cap, &layout, BEACON, config.carrier).unwrap();
        let k = ws.weights()[0] * gains[0];
        for (w, g) in ws.weights().iter().zip(&gains) {
            assert!((w * g - k).norm() < 0.02 * k.norm());
        }
    }

    #[test]
    fn common_gain_does_not_change_weights() {
        let (layout, config) = setup();
        let gains = random_gains(24, 5, 0.5, 2.0);
        let c = Complex64::from_polar(3.0, -1.1);
        let common: Vec<Complex64> = gains.iter().map(|g| g * c).collect();
        let a = solve_weights(&simulate_beacon_capture(&layout, BEACON, &config, &gains, 20.0).unwrap(), &layout, BEACON, config.carrier).unwrap();
        let b = solve_weights(&simulate_beacon_capture(&layout, BEACON, &config, &common, 20.0).unwrap(), &layout, BEACON, config.carrier).unwrap();
        for (x, y) in a.weights().iter().zip(b.weights()) {
            assert!((x - y).norm() < 1e-9);
        }
    }

    #[test]
    fn dead_channel_is_reported() {
        let (layout, config) = setup();
        let mut gains = vec![Complex64::new(1.0, 0.0); 24];
        gains[7] = Complex64::new(0.0, 0.0);
        let cap = simulate_beacon_capture(&layout, BEACON, &config, &gains, 20.0).unwrap();
        match solve_weights(&cap, &layout, BEACON, config.carrier) {
            Err(AimError::UnrecoverableChannel { index }) => assert_eq!(index, 7),
            other => panic!("expected unrecoverable channel, got {other:?}"),
        }
    }

    #[test]
    fn application_rules() {
        let (layout, config) = setup();
        let gains = random_gains(24, 6, 0.5, 2.0);
        let cap = simulate_beacon_capture(&layout, BEACON, &config, &gains, 20.0).unwrap();
        let ws = solve_weights(&cap, &layout, BEACON, config.carrier).unwrap();
        let id = WeightSet::identity(24, config.carrier);
        assert_eq!(cap.apply_weights(&id).unwrap(), cap);
        let back = cap.apply_weights(&ws).unwrap().apply_weights(&ws.inverse()).unwrap();
        for (x, y) in back.channels.iter().zip(cap.channels.iter()) {
            assert!((x - y).norm() < 1e-12 * y.norm().max(1.0));
        }
        let est = correlate_capture(&cap).unwrap();
        let via_capture = correlate_capture(&cap.apply_weights(&ws).unwrap()).unwrap();
        let via_estimate = est.apply_weights(&ws).unwrap();
        for (x, y) in via_capture.values.iter().zip(via_estimate.values.iter()) {
            assert!((x - y).norm() <= 1e-12 * y.norm().max(1e-12));
        }
        let short = WeightSet::identity(3, config.carrier);
        assert!(matches!(cap.apply_weights(&short), Err(AimError::Dimension(_))));
        assert!(matches!(est.apply_weights(&short), Err(AimError::Dimension(_))));
    }

    #[test]
    fn json_round_trip() {
        let ws = WeightSet::new(random_gains(24, 1, 0.5, 2.0), 38e9, 0).unwrap();
        let back = WeightSet::from_json(&ws.to_json().unwrap()).unwrap();
        assert_eq!(back.weights(), ws.weights());
        assert_eq!(back.subband(), 38e9);
        let v: serde_json::Value = serde_json::from_str(&ws.to_json().unwrap()).unwrap();
        assert_eq!(v["weights"].as_array().unwrap().len(), 24);
        assert_eq!(v["reference"], 0);
        assert!(WeightSet::from_json(r#"{"subband_hz": 1, "reference": 0, "weights": [[2, 0]]}"#).is_err());
    }
}
