//! Time-domain simulation of noise illumination, point scattering and
//! reception at complex baseband, plus pairwise correlation.
//!
//! Transmitter `t` radiates band-limited complex Gaussian noise `d_t`. The
//! field at scatterer `s` is
//! `x_s(t) = sum_t exp(-j 2 pi f_c tau_ts) d_t(t - tau_ts) / sqrt(N_t)`,
//! with the envelope delay applied exactly in the frequency domain. Receiver
//! `a` sees `g_a [sum_s sqrt(rho_s) exp(-j 2 pi f_c tau_sa) x_s + n_a]`; the
//! scatterer-to-receiver delay differences are far below `1 / bandwidth` and
//! are kept as carrier phase only.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{ArrayLayout, Position};
use crate::error::{AimError, Result};
use crate::scene_model::ScattererScene;
use crate::spatial_sampling::{bin_pairs, UVGrid, ZeroSpacing, SPEED_OF_LIGHT};
use crate::visibility_forward::{VisibilityGrid, VisibilityKind};

const CAPTURE_MAGIC: &[u8; 8] = b"AIMCAP01";
/// Receiver noise substreams start here so they never collide with
/// transmitter substreams.
const RECEIVER_STREAM_BASE: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub n_transmitters: usize,
    pub bandwidth: f64,
    pub carrier: f64,
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    /// Four transmitters, 50 MHz of noise at 38 GHz, 100 MS/s for 1 ms.
    fn default() -> Self {
        Self {
            n_transmitters: 4,
            bandwidth: 50e6,
            carrier: 38e9,
            duration: 1e-3,
            sample_rate: 100e6,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_transmitters < 1 {
            return Err(AimError::invalid("at least one transmitter is required"));
        }
        if !(self.bandwidth > 0.0) || !(self.carrier > 0.0) || !(self.sample_rate > 0.0) {
            return Err(AimError::invalid("bandwidth, carrier and sample rate must be positive"));
        }
        if self.sample_rate < 2.0 * self.bandwidth {
            return Err(AimError::invalid(format!(
                "sample rate {} is below twice the bandwidth {}",
                self.sample_rate, self.bandwidth
            )));
        }
        if !(self.duration > 0.0) || self.n_samples() < 2 {
            return Err(AimError::invalid("capture must span at least two samples"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.duration * self.sample_rate).round().max(0.0) as usize
    }

    /// Signed frequency of DFT bin `k`.
    fn bin_frequency(&self, k: usize, n: usize) -> f64 {
        let signed = if k <= n / 2 { k as i64 } else { k as i64 - n as i64 };
        signed as f64 * self.sample_rate / n as f64
    }

    fn in_band(&self, n: usize) -> Vec<usize> {
        (0..n)
            .filter(|&k| self.bin_frequency(k, n).abs() <= self.bandwidth / 2.0)
            .collect()
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn complex_normal(rng: &mut ChaCha8Rng, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}

/// Spectrum of transmitter `t`: unit-power noise spread evenly over the
/// in-band bins, such that the unnormalized inverse DFT has unit power.
fn transmitter_spectrum(config: &NoiseConfig, t: usize, n: usize, band: &[usize]) -> Vec<Complex64> {
    let mut rng = rng_for(config.seed, t as u64);
    let var = 1.0 / band.len() as f64;
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for &k in band {
        spec[k] = complex_normal(&mut rng, var);
    }
    spec
}

fn inverse_dft(mut spec: Vec<Complex64>) -> Vec<Complex64> {
    let fft = FftPlanner::new().plan_fft_inverse(spec.len());
    fft.process(&mut spec);
    spec
}

/// One complex baseband series per transmitter, `[transmitter, sample]`.
pub fn generate_noise(config: &NoiseConfig) -> Result<Array2<Complex64>> {
    config.validate()?;
    let n = config.n_samples();
    let band = config.in_band(n);
    let rows: Vec<Vec<Complex64>> = (0..config.n_transmitters)
        .into_par_iter()
        .map(|t| inverse_dft(transmitter_spectrum(config, t, n, &band)))
        .collect();
    Ok(Array2::from_shape_vec((config.n_transmitters, n), rows.concat()).expect("sized"))
}

/// Knobs of [`simulate_capture_with`] beyond the noise configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureOptions {
    /// Per-channel signal-to-noise ratio in dB; `-inf` switches the signal
    /// off (unit noise), `+inf` the receiver noise.
    pub snr_db: f64,
    /// Complex gain per receiver, applied to signal and noise alike.
    pub channel_gains: Option<Vec<Complex64>>,
    /// Multiplicative reflectivity factor per scatterer for this subband.
    pub reflectivity_factors: Option<Vec<f64>>,
}

impl Default for CaptureOptions {
    fn default() -> Self {
        Self {
            snr_db: f64::INFINITY,
            channel_gains: None,
            reflectivity_factors: None,
        }
    }
}

impl CaptureOptions {
    pub fn with_snr(snr_db: f64) -> Self {
        Self {
            snr_db,
            ..Self::default()
        }
    }
}

/// Complex baseband channels `[receiver, sample]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalCapture {
    pub channels: Array2<Complex64>,
    pub sample_rate: f64,
    pub carrier: f64,
    /// Full configuration when the capture was simulated here.
    pub config: Option<NoiseConfig>,
    pub layout_label: String,
}

impl SignalCapture {
    pub fn n_channels(&self) -> usize {
        self.channels.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.channels.ncols()
    }

    /// Header `AIMCAP01`, channel count (u32), sample count (u64), sample
    /// rate and carrier (f64), then channel-major f32 I/Q pairs; all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.channels.len() * 8);
        out.extend_from_slice(CAPTURE_MAGIC);
        out.extend_from_slice(&(self.n_channels() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_samples() as u64).to_le_bytes());
        out.extend_from_slice(&self.sample_rate.to_le_bytes());
        out.extend_from_slice(&self.carrier.to_le_bytes());
        for z in self.channels.iter() {
            let z = Complex32::new(z.re as f32, z.im as f32);
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |d: &str| AimError::format("capture file", d.to_string());
        if data.len() < 36 || &data[..8] != CAPTURE_MAGIC {
            return Err(bad("missing AIMCAP01 header"));
        }
        let nc = u32::from_le_bytes(data[8..12].try_into().expect("4 bytes")) as usize;
        let ns = u64::from_le_bytes(data[12..20].try_into().expect("8 bytes")) as usize;
        let sample_rate = f64::from_le_bytes(data[20..28].try_into().expect("8 bytes"));
        let carrier = f64::from_le_bytes(data[28..36].try_into().expect("8 bytes"));
        let expected = nc
            .checked_mul(ns)
            .and_then(|n| n.checked_mul(8))
            .and_then(|n| n.checked_add(36))
            .ok_or_else(|| bad("header sizes overflow"))?;
        if data.len() != expected {
            return Err(bad("length does not match header"));
        }
        let values: Vec<Complex64> = data[36..]
            .chunks_exact(8)
            .map(|c| {
                Complex64::new(
                    f32::from_le_bytes(c[..4].try_into().expect("4 bytes")) as f64,
                    f32::from_le_bytes(c[4..].try_into().expect("4 bytes")) as f64,
                )
            })
            .collect();
        Ok(Self {
            channels: Array2::from_shape_vec((nc, ns), values).expect("sized"),
            sample_rate,
            carrier,
            config: None,
            layout_label: String::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn in_plane(p: Position) -> [f64; 3] {
    [p[0], p[1], 0.0]
}

fn check_inputs(layout: &ArrayLayout, scene: &ScattererScene, config: &NoiseConfig, opts: &CaptureOptions) -> Result<()> {
    config.validate()?;
    scene.validate()?;
    if layout.transmitters().is_empty() {
        return Err(AimError::Configuration(format!(
            "layout {:?} has no transmitters",
            layout.label()
        )));
    }
    if layout.transmitters().len() != config.n_transmitters {
        return Err(AimError::Configuration(format!(
            "layout has {} transmitters, noise configuration expects {}",
            layout.transmitters().len(),
            config.n_transmitters
        )));
    }
    if let Some(g) = &opts.channel_gains {
        if g.len() != layout.n_receivers() {
            return Err(AimError::Dimension(format!(
                "{} channel gains for {} receivers",
                g.len(),
                layout.n_receivers()
            )));
        }
    }
    if let Some(f) = &opts.reflectivity_factors {
        if f.len() != scene.scatterers.len() || f.iter().any(|x| !(*x >= 0.0)) {
            return Err(AimError::invalid(
                "need one non-negative reflectivity factor per scatterer",
            ));
        }
    }
    if opts.snr_db.is_nan() {
        return Err(AimError::invalid("SNR must not be NaN"));
    }
    Ok(())
}

/// Power reflectivities after the per-subband factors.
fn effective_reflectivity(scene: &ScattererScene, opts: &CaptureOptions) -> Vec<f64> {
    scene
        .scatterers
        .iter()
        .enumerate()
        .map(|(i, s)| s.reflectivity * opts.reflectivity_factors.as_ref().map_or(1.0, |f| f[i]))
        .collect()
}

/// Scatterer-to-receiver coupling `sqrt(rho_s) exp(-j 2 pi f_c tau_sa)`, `[s, a]`.
fn receive_coupling(layout: &ArrayLayout, scene: &ScattererScene, rho: &[f64], carrier: f64) -> Array2<Complex64> {
    Array2::from_shape_fn((scene.scatterers.len(), layout.n_receivers()), |(s, a)| {
        let tau = distance(scene.scatterers[s].position, in_plane(layout.receivers()[a])) / SPEED_OF_LIGHT;
        Complex64::from_polar(rho[s].sqrt(), -2.0 * PI * carrier * tau)
    })
}

fn transmit_delays(layout: &ArrayLayout, scene: &ScattererScene) -> Array2<f64> {
    Array2::from_shape_fn((layout.transmitters().len(), scene.scatterers.len()), |(t, s)| {
        distance(in_plane(layout.transmitters()[t]), scene.scatterers[s].position) / SPEED_OF_LIGHT
    })
}

/// Simulates the receiver channels for `scene` at the configured carrier.
pub fn simulate_capture(
    layout: &ArrayLayout,
    scene: &ScattererScene,
    config: &NoiseConfig,
    snr_db: f64,
) -> Result<SignalCapture> {
    simulate_capture_with(layout, scene, config, &CaptureOptions::with_snr(snr_db))
}

pub fn simulate_capture_with(
    layout: &ArrayLayout,
    scene: &ScattererScene,
    config: &NoiseConfig,
    opts: &CaptureOptions,
) -> Result<SignalCapture> {
    check_inputs(layout, scene, config, opts)?;
    let n = config.n_samples();
    let n_rx = layout.n_receivers();
    let band = config.in_band(n);
    let rho = effective_reflectivity(scene, opts);
    let signal_on = opts.snr_db > f64::NEG_INFINITY;

    let mut channels = Array2::<Complex64>::zeros((n_rx, n));
    if signal_on && !scene.scatterers.is_empty() {
        let spectra: Vec<Vec<Complex64>> = (0..config.n_transmitters)
            .into_par_iter()
            .map(|t| transmitter_spectrum(config, t, n, &band))
            .collect();
        let tau = transmit_delays(layout, scene);
        let norm = 1.0 / (config.n_transmitters as f64).sqrt();
        let freqs: Vec<f64> = band.iter().map(|&k| config.bin_frequency(k, n)).collect();
        let fields: Vec<Vec<Complex64>> = (0..scene.scatterers.len())
            .into_par_iter()
            .map(|s| {
                let mut spec = vec![Complex64::new(0.0, 0.0); n];
                for (t, d) in spectra.iter().enumerate() {
                    let delay = tau[[t, s]];
                    let carrier_phase = Complex64::from_polar(norm, -2.0 * PI * config.carrier * delay);
                    for (&k, &f) in band.iter().zip(&freqs) {
                        spec[k] += d[k] * carrier_phase * Complex64::from_polar(1.0, -2.0 * PI * f * delay);
                    }
                }
                inverse_dft(spec)
            })
            .collect();
        let coupling = receive_coupling(layout, scene, &rho, config.carrier);
        channels
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(a, mut row)| {
                for (s, field) in fields.iter().enumerate() {
                    let c = coupling[[s, a]];
                    row.iter_mut().zip(field).for_each(|(y, x)| *y += c * x);
                }
            });
    }

    let noise_var = if !signal_on {
        1.0
    } else if opts.snr_db == f64::INFINITY {
        0.0
    } else {
        rho.iter().sum::<f64>() / 10f64.powf(opts.snr_db / 10.0)
    };
    if noise_var > 0.0 {
        channels
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(a, mut row)| {
                let mut rng = rng_for(config.seed, RECEIVER_STREAM_BASE + a as u64);
                row.iter_mut().for_each(|y| *y += complex_normal(&mut rng, noise_var));
            });
    }
    if let Some(g) = &opts.channel_gains {
        for (mut row, &ga) in channels.axis_iter_mut(Axis(0)).zip(g) {
            row.mapv_inplace(|z| z * ga);
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

/// Time-averaged pair products, `values[[a, b]] = <ch_a conj(ch_b)>`.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityEstimate {
    pub values: Array2<Complex64>,
    pub integration_time: f64,
}

impl VisibilityEstimate {
    pub fn n_receivers(&self) -> usize {
        self.values.nrows()
    }
}

pub fn correlate_capture(capture: &SignalCapture) -> Result<VisibilityEstimate> {
    let (nc, ns) = capture.channels.dim();
    if ns == 0 {
        return Err(AimError::Degenerate("capture has no samples".into()));
    }
    if nc < 2 {
        return Err(AimError::invalid("correlation needs at least two channels"));
    }
    let ch = &capture.channels;
    let rows: Vec<Vec<Complex64>> = (0..nc)
        .into_par_iter()
        .map(|a| {
            let xa = ch.row(a);
            (0..nc)
                .map(|b| {
                    let xb = ch.row(b);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (p, q) in xa.iter().zip(xb.iter()) {
                        acc += p * q.conj();
                    }
                    acc / ns as f64
                })
                .collect()
        })
        .collect();
    Ok(VisibilityEstimate {
        values: Array2::from_shape_vec((nc, nc), rows.concat()).expect("sized"),
        integration_time: ns as f64 / capture.sample_rate,
    })
}

/// Places pair estimates on the u-v grid. Pair `(a, b)` sampled at
/// `(p_a - p_b) / lambda`; estimates sharing a bin are averaged, and the
/// zero bin (if included) holds the mean autocorrelation.
pub fn estimate_to_grid(
    est: &VisibilityEstimate,
    layout: &ArrayLayout,
    frequency: f64,
    grid: &UVGrid,
    zero: ZeroSpacing,
) -> Result<VisibilityGrid> {
    let n = layout.n_receivers();
    if est.n_receivers() != n {
        return Err(AimError::Dimension(format!(
            "estimate has {} receivers, layout {}",
            est.n_receivers(),
            n
        )));
    }
    let side = (grid.side(), grid.side());
    let mut sum = Array2::<Complex64>::zeros(side);
    let mut count = Array2::<u32>::zeros(side);
    for p in bin_pairs(layout, frequency, grid, zero)? {
        let idx = [grid.offset(p.iu), grid.offset(p.iv)];
        if p.rx_a == p.rx_b {
            let mean = (0..n).map(|a| est.values[[a, a]]).sum::<Complex64>() / n as f64;
            sum[idx] += mean;
        } else {
            // pair bins carry (p_b - p_a) / lambda, which estimate (b, a) samples
            sum[idx] += est.values[[p.rx_b, p.rx_a]];
        }
        count[idx] += 1;
    }
    let support = count.mapv(|c| c > 0);
    let values = ndarray::Zip::from(&sum)
        .and(&count)
        .map_collect(|&z, &c| if c > 0 { z / c as f64 } else { z });
    VisibilityGrid::new(*grid, values, VisibilityKind::Sampled, support)
}

/// `R(delta) = (1 / K) sum_k exp(-j 2 pi f_k delta)` over in-band bins: the
/// normalized autocorrelation of the transmitted noise at lag `delta`.
fn band_correlation(freqs: &[f64], delta: f64) -> Complex64 {
    freqs
        .iter()
        .map(|&f| Complex64::from_polar(1.0, -2.0 * PI * f * delta))
        .sum::<Complex64>()
        / freqs.len() as f64
}

/// Expected value of [`correlate_capture`] over the noise ensemble for the
/// same configuration, including receiver noise and gains.
pub fn expected_correlation(
    layout: &ArrayLayout,
    scene: &ScattererScene,
    config: &NoiseConfig,
    opts: &CaptureOptions,
) -> Result<Array2<Complex64>> {
    check_inputs(layout, scene, config, opts)?;
    let n = config.n_samples();
    let freqs: Vec<f64> = config
        .in_band(n)
        .into_iter()
        .map(|k| config.bin_frequency(k, n))
        .collect();
    let rho = effective_reflectivity(scene, opts);
    let n_rx = layout.n_receivers();
    let ns = scene.scatterers.len();
    let signal_on = opts.snr_db > f64::NEG_INFINITY;
    let mut out = Array2::<Complex64>::zeros((n_rx, n_rx));
    if signal_on && ns > 0 {
        let tau = transmit_delays(layout, scene);
        let nt = config.n_transmitters;
        let field_cov = Array2::from_shape_fn((ns, ns), |(s, q)| {
            (0..nt)
                .map(|t| {
                    let d = tau[[t, s]] - tau[[t, q]];
                    Complex64::from_polar(1.0, -2.0 * PI * config.carrier * d) * band_correlation(&freqs, d)
                })
                .sum::<Complex64>()
                / nt as f64
        });
        let c = receive_coupling(layout, scene, &rho, config.carrier);
        // out[a, b] = sum_{s, q} c[s, a] C[s, q] conj(c[q, b])
        let ct = c.t().to_owned();
        let ch = c.mapv(|z| z.conj());
        out = ct.dot(&field_cov).dot(&ch);
    }
    let noise_var = if !signal_on {
        1.0
    } else if opts.snr_db == f64::INFINITY {
        0.0
    } else {
        rho.iter().sum::<f64>() / 10f64.powf(opts.snr_db / 10.0)
    };
    for a in 0..n_rx {
        out[[a, a]] += noise_var;
    }
    if let Some(g) = &opts.channel_gains {
        for ((a, b), z) in out.indexed_iter_mut() {
            *z *= g[a] * g[b].conj();
        }
    }
    Ok(out)
}

/// `V(u, v) = sum_s rho_s exp(+j 2 pi (u alpha_s + v beta_s))` for every
/// directed pair `(a, b)` at `u = (p_a - p_b) / lambda`.
pub fn point_scene_visibility(layout: &ArrayLayout, scene: &ScattererScene, frequency: f64) -> Array2<Complex64> {
    let lambda = SPEED_OF_LIGHT / frequency;
    let rx = layout.receivers();
    let dirs = scene.directions();
    Array2::from_shape_fn((rx.len(), rx.len()), |(a, b)| {
        let u = (rx[a][0] - rx[b][0]) / lambda;
        let v = (rx[a][1] - rx[b][1]) / lambda;
        scene
            .scatterers
            .iter()
            .zip(&dirs)
            .map(|(s, &(al, be))| Complex64::from_polar(s.reflectivity, 2.0 * PI * (u * al + v * be)))
            .sum()
    })
}

/// Relative RMS difference over off-diagonal pairs: `||x - y|| / ||y||`.
pub fn relative_rms_offdiag(x: &Array2<Complex64>, y: &Array2<Complex64>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((a, b), &want) in y.indexed_iter() {
        if a != b {
            num += (x[[a, b]] - want).norm_sqr();
            den += want.norm_sqr();
        }
    }
    (num / den).sqrt()
}

/// Mean power of each channel.
pub fn channel_powers(capture: &SignalCapture) -> Array1<f64> {
    capture
        .channels
        .map_axis(Axis(1), |row| row.iter().map(|z| z.norm_sqr()).sum::<f64>() / row.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::{build_circular_array, place_transmitters};
    use crate::scene_model::Scatterer;
    use crate::spatial_sampling::sampling_function;

    fn layout(n_tx: usize) -> ArrayLayout {
        place_transmitters(&build_circular_array(0.101, 24, 0.0).unwrap(), 0.3, n_tx).unwrap()
    }

    fn config(n_tx: usize, duration: f64, seed: u64) -> NoiseConfig {
        NoiseConfig {
            n_transmitters: n_tx,
            duration,
            seed,
            ..NoiseConfig::default()
        }
    }

    fn one(position: [f64; 3]) -> ScattererScene {
        ScattererScene::new(
            vec![Scatterer {
                position,
                reflectivity: 1.0,
                radius: 0.0,
            }],
            position[2],
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(NoiseConfig::default().validate().is_ok());
        assert_eq!(NoiseConfig::default().n_samples(), 100_000);
        let mut c = NoiseConfig { sample_rate: 80e6, ..Default::default() };
        assert!(c.validate().is_err());
        c = NoiseConfig::default();
        c.duration = 1e-9;
        assert!(c.validate().is_err());
        c = NoiseConfig::default();
        c.n_transmitters = 0;
        assert!(generate_noise(&c).is_err());
    }

    #[test]
    fn noise_is_reproducible_and_band_limited() {
        let c = config(2, 1e-4, 9);
        let a = generate_noise(&c).unwrap();
        let b = generate_noise(&c).unwrap();
        assert_eq!(a, b);
        let other = generate_noise(&NoiseConfig { seed: 10, ..c.clone() }).unwrap();
        assert_ne!(a, other);
        let n = c.n_samples();
        let mut spec = a.row(0).to_vec();
        FftPlanner::new().plan_fft_forward(n).process(&mut spec);
        for (k, z) in spec.iter().enumerate() {
            if c.bin_frequency(k, n).abs() > c.bandwidth / 2.0 {
                assert!(z.norm() < 1e-9);
            }
        }
    }

    #[test]
    fn boresight_scatterer_gives_identical_channels() {
        let l = layout(1);
        let cap = simulate_capture(&l, &one([0.0, 0.0, 1.5]), &config(1, 2e-5, 1), f64::INFINITY).unwrap();
        let first = cap.channels.row(0).to_owned();
        for row in cap.channels.rows() {
            for (x, y) in row.iter().zip(first.iter()) {
                assert!((x - y).norm() < 1e-9 * y.norm().max(1e-3));
            }
        }
    }

    #[test]
    fn off_axis_phase_matches_geometry() {
        let l = layout(4);
        let (al, be): (f64, f64) = (0.05, -0.03);
        let range = 200.0;
        let z = range * (1.0 - al * al - be * be).sqrt();
        let scene = one([al * range, be * range, z]);
        let c = config(4, 2e-5, 3);
        let est = correlate_capture(&simulate_capture(&l, &scene, &c, f64::INFINITY).unwrap()).unwrap();
        let lambda = SPEED_OF_LIGHT / c.carrier;
        let rx = l.receivers();
        for a in 0..24 {
            for b in 0..24 {
                let u = (rx[a][0] - rx[b][0]) / lambda;
                let v = (rx[a][1] - rx[b][1]) / lambda;
                let want = Complex64::from_polar(1.0, 2.0 * PI * (u * al + v * be));
                let diff = (est.values[[a, b]] / want).arg().to_degrees();
                assert!(diff.abs() < 2.0, "pair ({a}, {b}) off by {diff} degrees");
            }
        }
    }

    #[test]
    fn correlation_properties() {
        let l = layout(4);
        let scene = ScattererScene::four_spheres(1.5);
        let cap = simulate_capture(&l, &scene, &config(4, 2e-5, 5), 10.0).unwrap();
        let est = correlate_capture(&cap).unwrap();
        for a in 0..24 {
            assert!(est.values[[a, a]].im == 0.0 && est.values[[a, a]].re > 0.0);
            for b in 0..24 {
                assert_eq!(est.values[[b, a]], est.values[[a, b]].conj());
            }
        }
        assert!((est.integration_time - 2e-5).abs() < 1e-15);
        let again = correlate_capture(&simulate_capture(&l, &scene, &config(4, 2e-5, 5), 10.0).unwrap()).unwrap();
        assert_eq!(again, est);
    }

    #[test]
    fn signal_off_correlations_vanish() {
        let l = layout(4);
        let scene = ScattererScene::four_spheres(1.5);
        let est = correlate_capture(&simulate_capture(&l, &scene, &config(4, 1e-4, 2), f64::NEG_INFINITY).unwrap()).unwrap();
        let n = 1e4f64;
        for ((a, b), z) in est.values.indexed_iter() {
            if a == b {
                assert!((z.re - 1.0).abs() < 5.0 / n.sqrt());
            } else {
                assert!(z.norm() < 5.0 / n.sqrt());
            }
        }
    }

    #[test]
    fn missing_transmitters_is_configuration_error() {
        let l = build_circular_array(0.101, 24, 0.0).unwrap();
        let err = simulate_capture(&l, &one([0.0, 0.0, 1.5]), &config(4, 1e-5, 0), 20.0).unwrap_err();
        assert!(matches!(err, AimError::Configuration(_)));
    }

    #[test]
    fn grid_support_matches_sampling_function() {
        let l = layout(4);
        let g = UVGrid::sized_for(&l, 40e9, 0.5).unwrap();
        let est = correlate_capture(&simulate_capture(&l, &one([0.0, 0.0, 1.5]), &config(4, 1e-5, 0), 30.0).unwrap()).unwrap();
        for zero in [ZeroSpacing::Exclude, ZeroSpacing::Include] {
            let vg = estimate_to_grid(&est, &l, 38e9, &g, zero).unwrap();
            let s = sampling_function(&l, 38e9, &g, zero).unwrap();
            assert_eq!(vg.support(), &s.occupancy().mapv(|m| m > 0));
        }
        let pair = ArrayLayout::new_relaxed("pair", vec![[0.0, 0.0], [0.02, 0.0]], vec![]).unwrap();
        let est2 = VisibilityEstimate {
            values: Array2::from_elem((2, 2), Complex64::new(1.0, 0.0)),
            integration_time: 1.0,
        };
        let vg = estimate_to_grid(&est2, &pair, 38e9, &g, ZeroSpacing::Exclude).unwrap();
        assert_eq!(vg.support_count(), 2);
    }

    #[test]
    fn capture_binary_round_trip() {
        let l = layout(4);
        let cap = simulate_capture(&l, &one([0.0, 0.0, 1.5]), &config(4, 1e-6, 0), 20.0).unwrap();
        let back = SignalCapture::from_bytes(&cap.to_bytes()).unwrap();
        assert_eq!(back.n_channels(), 24);
        assert_eq!(back.n_samples(), 100);
        assert_eq!(back.sample_rate, cap.sample_rate);
        for (x, y) in back.channels.iter().zip(cap.channels.iter()) {
            assert!((x - y).norm() <= 1e-6 * y.norm().max(1.0));
        }
        assert!(SignalCapture::from_bytes(b"AIMCAP01").is_err());
        assert!(SignalCapture::from_bytes(&cap.to_bytes()[..200]).is_err());
    }

    #[test]
    fn expectation_matches_long_average() {
        let l = layout(4);
        let scene = ScattererScene::four_spheres(1.5);
        let c = config(4, 1e-3, 8);
        let opts = CaptureOptions::with_snr(10.0);
        let est = correlate_capture(&simulate_capture_with(&l, &scene, &c, &opts).unwrap()).unwrap();
        let want = expected_correlation(&l, &scene, &c, &opts).unwrap();
        let err = relative_rms_offdiag(&est.values, &want);
        // radiometric bound 5 / sqrt(bandwidth * T)
        assert!(err < 5.0 / (c.bandwidth * c.duration).sqrt(), "{err}");
    }
}
