//! Discretized spatial-frequency (u-v) sampling functions.
//!
//! Each directed receiver pair samples the visibility at `(Dx, Dy) / lambda`.
//! Samples are binned on a grid of absolute, dimensionless u-v coordinates
//! shared by every subband, so the additive sampling function of several
//! carriers is a plain bin-wise sum.
//!
//! Bin assignment rounds to the nearest bin with ties toward +infinity
//! (`floor(x / bin + 1/2)`). The rule is applied to the `a < b` half of the
//! pairs; the reversed pair is deposited at the negated bin, which keeps every
//! occupancy map exactly conjugate-symmetric.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::array_geometry::{enumerate_baselines, ArrayLayout, Baseline, BaselineOptions};
use crate::error::{AimError, Result};
use crate::pgm;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn wavelength(frequency_hz: f64) -> f64 {
    SPEED_OF_LIGHT / frequency_hz
}

/// Carrier frequencies of the subbands plus the shared noise bandwidth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubbandSet {
    carrier_frequencies: Vec<f64>,
    noise_bandwidth: f64,
}

impl SubbandSet {
    pub fn new(carrier_frequencies: Vec<f64>, noise_bandwidth: f64) -> Result<Self> {
        if carrier_frequencies.is_empty() {
            return Err(AimError::invalid("a subband set needs at least one carrier"));
        }
        if carrier_frequencies.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
            return Err(AimError::invalid("carrier frequencies must be positive"));
        }
        if carrier_frequencies.windows(2).any(|w| w[1] <= w[0]) {
            return Err(AimError::invalid("carrier frequencies must be strictly increasing"));
        }
        if !(noise_bandwidth > 0.0) {
            return Err(AimError::invalid("noise bandwidth must be positive"));
        }
        Ok(Self {
            carrier_frequencies,
            noise_bandwidth,
        })
    }

    /// Uniformly spaced carriers from `first` to `last` inclusive.
    pub fn stepped(first_hz: f64, last_hz: f64, step_hz: f64, noise_bandwidth: f64) -> Result<Self> {
        if !(step_hz > 0.0) || last_hz < first_hz {
            return Err(AimError::invalid("invalid carrier sweep"));
        }
        let n = ((last_hz - first_hz) / step_hz).round() as usize + 1;
        Self::new(
            (0..n).map(|k| first_hz + k as f64 * step_hz).collect(),
            noise_bandwidth,
        )
    }

    /// 37, 38, 39 and 40 GHz with 50 MHz of noise bandwidth.
    pub fn ka_band_default() -> Self {
        Self::stepped(37e9, 40e9, 1e9, 50e6).expect("valid constant sweep")
    }

    /// Eleven carriers, 35 to 45 GHz in 1 GHz steps.
    pub fn wide_sweep() -> Self {
        Self::stepped(35e9, 45e9, 1e9, 50e6).expect("valid constant sweep")
    }

    pub fn carrier_frequencies(&self) -> &[f64] {
        &self.carrier_frequencies
    }

    pub fn noise_bandwidth(&self) -> f64 {
        self.noise_bandwidth
    }

    pub fn len(&self) -> usize {
        self.carrier_frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.carrier_frequencies.is_empty()
    }

    pub fn max_frequency(&self) -> f64 {
        *self.carrier_frequencies.last().expect("non-empty")
    }
}

/// Square u-v raster with `2 * half_extent + 1` bins per axis centered on the
/// origin. Bin `i` (from `-half_extent` to `half_extent`) covers
/// `u = i * bin_size`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UVGrid {
    bin_size: f64,
    half_extent: usize,
}

impl UVGrid {
    pub const DEFAULT_BIN: f64 = 0.5;
    pub const GUARD_BINS: usize = 2;

    pub fn new(bin_size: f64, half_extent: usize) -> Result<Self> {
        if !(bin_size > 0.0) || !bin_size.is_finite() {
            return Err(AimError::invalid(format!("bin size must be positive, got {bin_size}")));
        }
        Ok(Self {
            bin_size,
            half_extent,
        })
    }

    /// Grid large enough for the longest baseline of `layout` at
    /// `max_frequency`, plus guard bins.
    pub fn sized_for(layout: &ArrayLayout, max_frequency: f64, bin_size: f64) -> Result<Self> {
        let extent = layout.max_baseline_length() / wavelength(max_frequency) / bin_size;
        Self::new(bin_size, extent.ceil() as usize + Self::GUARD_BINS)
    }

    pub fn bin_size(&self) -> f64 {
        self.bin_size
    }

    pub fn half_extent(&self) -> usize {
        self.half_extent
    }

    /// Bins per axis.
    pub fn side(&self) -> usize {
        2 * self.half_extent + 1
    }

    /// Spatial frequency at signed bin index `i`.
    pub fn coordinate(&self, i: i64) -> f64 {
        i as f64 * self.bin_size
    }

    /// Spatial frequencies of all bins along one axis, most negative first.
    pub fn coordinates(&self) -> Vec<f64> {
        let h = self.half_extent as i64;
        (-h..=h).map(|i| self.coordinate(i)).collect()
    }

    /// Nearest bin index, ties toward +infinity.
    pub fn bin_index(&self, u: f64) -> i64 {
        (u / self.bin_size + 0.5).floor() as i64
    }

    pub fn contains(&self, i: i64) -> bool {
        i.unsigned_abs() as usize <= self.half_extent
    }

    /// Array index of signed bin `i`.
    pub fn offset(&self, i: i64) -> usize {
        (i + self.half_extent as i64) as usize
    }

    /// Signed bin of array index `k`.
    pub fn signed(&self, k: usize) -> i64 {
        k as i64 - self.half_extent as i64
    }

    pub(crate) fn ensure_same(&self, other: &UVGrid) -> Result<()> {
        if self != other {
            return Err(AimError::IncompatibleGrid(format!(
                "bin {} / half extent {} vs bin {} / half extent {}",
                self.bin_size, self.half_extent, other.bin_size, other.half_extent
            )));
        }
        Ok(())
    }
}

/// Whether the zero-spacing (autocorrelation) sample is part of a sampling
/// function.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroSpacing {
    #[default]
    Exclude,
    Include,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WavelengthTag {
    Wavelength(f64),
    Additive,
}

/// Bin multiplicities of the spatial-frequency samples.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingFunction {
    grid: UVGrid,
    occupancy: Array2<u32>,
    tag: WavelengthTag,
}

/// Where one directed receiver pair lands on a u-v grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct PairBin {
    pub rx_a: usize,
    pub rx_b: usize,
    pub iu: i64,
    pub iv: i64,
}

/// Bins every directed pair of `layout` at `frequency`. The `a < b` half is
/// rounded, the reverse half mirrored.
pub(crate) fn bin_pairs(
    layout: &ArrayLayout,
    frequency: f64,
    grid: &UVGrid,
    zero: ZeroSpacing,
) -> Result<Vec<PairBin>> {
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(AimError::invalid(format!("frequency must be positive, got {frequency}")));
    }
    let lambda = wavelength(frequency);
    let half = enumerate_baselines(
        layout,
        BaselineOptions {
            include_conjugates: false,
            include_zero: zero == ZeroSpacing::Include,
        },
    );
    let mut out = Vec::with_capacity(2 * half.len());
    for Baseline { dx, dy, rx_a, rx_b } in half {
        let (u, v) = (dx / lambda, dy / lambda);
        let iu = grid.bin_index(u);
        let iv = grid.bin_index(v);
        if !grid.contains(iu) || !grid.contains(iv) {
            return Err(AimError::GridOverflow {
                rx_a,
                rx_b,
                u,
                v,
                half_extent: grid.half_extent(),
                bin_size: grid.bin_size(),
            });
        }
        out.push(PairBin { rx_a, rx_b, iu, iv });
        if rx_a != rx_b {
            out.push(PairBin {
                rx_a: rx_b,
                rx_b: rx_a,
                iu: -iu,
                iv: -iv,
            });
        }
    }
    Ok(out)
}

/// Sampling function of `layout` at `frequency`: each directed baseline adds
/// one to the bin nearest `(Dx, Dy) / lambda`.
pub fn sampling_function(
    layout: &ArrayLayout,
    frequency: f64,
    grid: &UVGrid,
    zero: ZeroSpacing,
) -> Result<SamplingFunction> {
    let mut occupancy = Array2::<u32>::zeros((grid.side(), grid.side()));
    for p in bin_pairs(layout, frequency, grid, zero)? {
        occupancy[[grid.offset(p.iu), grid.offset(p.iv)]] += 1;
    }
    Ok(SamplingFunction {
        grid: *grid,
        occupancy,
        tag: WavelengthTag::Wavelength(wavelength(frequency)),
    })
}

/// Bin-wise sum of several sampling functions on one grid.
pub fn additive_sampling(parts: &[SamplingFunction]) -> Result<SamplingFunction> {
    let first = parts
        .first()
        .ok_or_else(|| AimError::invalid("additive sampling needs at least one part"))?;
    let mut occupancy = first.occupancy.clone();
    for p in &parts[1..] {
        first.grid.ensure_same(&p.grid)?;
        occupancy += &p.occupancy;
    }
    Ok(SamplingFunction {
        grid: first.grid,
        occupancy,
        tag: WavelengthTag::Additive,
    })
}

/// Number of bins holding at least one sample.
pub fn unique_sample_count(s: &SamplingFunction) -> usize {
    s.occupancy.iter().filter(|&&m| m > 0).count()
}

/// Multiplicity -> number of bins with that multiplicity (occupied bins only).
pub fn redundancy_histogram(s: &SamplingFunction) -> BTreeMap<u32, usize> {
    let mut hist = BTreeMap::new();
    for &m in s.occupancy.iter().filter(|&&m| m > 0) {
        *hist.entry(m).or_insert(0) += 1;
    }
    hist
}

impl SamplingFunction {
    /// Builds a sampling function from an explicit occupancy map.
    pub fn from_occupancy(grid: UVGrid, occupancy: Array2<u32>, tag: WavelengthTag) -> Result<Self> {
        if occupancy.dim() != (grid.side(), grid.side()) {
            return Err(AimError::Dimension(format!(
                "occupancy is {:?}, grid needs {}x{}",
                occupancy.dim(),
                grid.side(),
                grid.side()
            )));
        }
        Ok(Self {
            grid,
            occupancy,
            tag,
        })
    }

    pub fn grid(&self) -> &UVGrid {
        &self.grid
    }

    pub fn occupancy(&self) -> &Array2<u32> {
        &self.occupancy
    }

    pub fn tag(&self) -> WavelengthTag {
        self.tag
    }

    /// Multiplicity at signed bin `(iu, iv)`; zero outside the grid.
    pub fn multiplicity(&self, iu: i64, iv: i64) -> u32 {
        if !self.grid.contains(iu) || !self.grid.contains(iv) {
            return 0;
        }
        self.occupancy[[self.grid.offset(iu), self.grid.offset(iv)]]
    }

    /// Occupied bins as `(iu, iv, multiplicity)`, u-major order.
    pub fn occupied_bins(&self) -> Vec<(i64, i64, u32)> {
        self.occupancy
            .indexed_iter()
            .filter(|(_, &m)| m > 0)
            .map(|((a, b), &m)| (self.grid.signed(a), self.grid.signed(b), m))
            .collect()
    }

    pub fn is_conjugate_symmetric(&self) -> bool {
        self.occupied_bins()
            .iter()
            .all(|&(iu, iv, m)| self.multiplicity(-iu, -iv) == m)
    }

    /// CSV rows `u_bin_index,v_bin_index,multiplicity` for occupied bins.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u_bin_index,v_bin_index,multiplicity\n");
        for (iu, iv, m) in self.occupied_bins() {
            let _ = writeln!(out, "{iu},{iv},{m}");
        }
        out
    }

    /// JSON sidecar describing the grid the CSV indices refer to.
    pub fn metadata_json(&self) -> serde_json::Value {
        let tag = match self.tag {
            WavelengthTag::Wavelength(l) => serde_json::json!(l),
            WavelengthTag::Additive => serde_json::json!("additive"),
        };
        serde_json::json!({
            "bin_size": self.grid.bin_size(),
            "half_extent": self.grid.half_extent(),
            "side": self.grid.side(),
            "wavelength": tag,
            "unique_samples": unique_sample_count(self),
            "total_samples": self.occupancy.iter().map(|&m| m as u64).sum::<u64>(),
        })
    }

    /// Writes `<stem>.csv`, `<stem>.json` and `<stem>.pgm` (occupancy raster,
    /// +v upward).
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        std::fs::write(
            dir.join(format!("{stem}.json")),
            serde_json::to_string_pretty(&self.metadata_json())?,
        )?;
        let max = self.occupancy.iter().copied().max().unwrap_or(0).max(1) as f64;
        let img = self.occupancy.mapv(|m| m as f64 / max);
        pgm::write_unit_map(&dir.join(format!("{stem}.pgm")), &img, pgm::Depth::Eight)?;
        Ok(())
    }
}
