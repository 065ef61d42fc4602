//! Forward model: visibility of an intensity raster, sampling masks and the
//! per-subband normalized additive visibility.
//!
//! Sign convention: the forward transform uses `exp(+j 2 pi (u alpha + v beta))`,
//! reconstruction uses `exp(-j ...)`.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{AimError, Result};
use crate::scene_model::{DirectionGrid, IntensityGrid};
use crate::spatial_sampling::{SamplingFunction, UVGrid};
use crate::transform::{self, Sign};

const MAGIC: &[u8; 8] = b"AIMVIS01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityKind {
    Full,
    Sampled,
    Additive,
}

impl VisibilityKind {
    fn code(self) -> u32 {
        match self {
            VisibilityKind::Full => 0,
            VisibilityKind::Sampled => 1,
            VisibilityKind::Additive => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        Ok(match c {
            0 => VisibilityKind::Full,
            1 => VisibilityKind::Sampled,
            2 => VisibilityKind::Additive,
            _ => return Err(AimError::format("visibility file", format!("unknown kind {c}"))),
        })
    }
}

/// Complex visibility on a u-v grid, `values[[u_offset, v_offset]]`.
/// `support` marks the bins that carry a sample.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityGrid {
    grid: UVGrid,
    values: Array2<Complex64>,
    kind: VisibilityKind,
    support: Array2<bool>,
}

/// How a sampling function weights the bins it touches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    Presence,
    Multiplicity,
}

impl VisibilityGrid {
    pub fn new(
        grid: UVGrid,
        values: Array2<Complex64>,
        kind: VisibilityKind,
        support: Array2<bool>,
    ) -> Result<Self> {
        let side = (grid.side(), grid.side());
        if values.dim() != side || support.dim() != side {
            return Err(AimError::Dimension(format!(
                "visibility arrays {:?}/{:?} do not match a {}x{} grid",
                values.dim(),
                support.dim(),
                side.0,
                side.1
            )));
        }
        let mut v = Self {
            grid,
            values,
            kind,
            support,
        };
        if kind != VisibilityKind::Full {
            v.clear_unsupported();
        }
        Ok(v)
    }

    fn clear_unsupported(&mut self) {
        for (z, &s) in self.values.iter_mut().zip(self.support.iter()) {
            if !s {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn grid(&self) -> &UVGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }

    pub fn kind(&self) -> VisibilityKind {
        self.kind
    }

    pub fn support(&self) -> &Array2<bool> {
        &self.support
    }

    pub fn support_count(&self) -> usize {
        self.support.iter().filter(|&&s| s).count()
    }

    /// Value at signed bin `(iu, iv)`.
    pub fn at(&self, iu: i64, iv: i64) -> Complex64 {
        self.values[[self.grid.offset(iu), self.grid.offset(iv)]]
    }

    /// Supported bins as `(iu, iv, value)`, u-major.
    pub fn supported_bins(&self) -> Vec<(i64, i64, Complex64)> {
        self.values
            .indexed_iter()
            .filter(|(idx, _)| self.support[*idx])
            .map(|((a, b), &z)| (self.grid.signed(a), self.grid.signed(b), z))
            .collect()
    }

    /// Returns a copy with every value multiplied by `k`.
    pub fn scaled(&self, k: Complex64) -> Self {
        Self {
            values: self.values.mapv(|z| z * k),
            ..self.clone()
        }
    }

    /// `max |V(-u,-v) - conj V(u,v)| / max |V|`, zero for an all-zero map.
    pub fn hermitian_error(&self) -> f64 {
        let peak = self.values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let n = self.grid.side();
        let mut worst = 0.0f64;
        for ((a, b), z) in self.values.indexed_iter() {
            let mirror = self.values[[n - 1 - a, n - 1 - b]];
            worst = worst.max((mirror - z.conj()).norm());
        }
        worst / peak
    }

    /// CSV rows `u_bin,v_bin,re,im` over supported bins.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("u_bin,v_bin,re,im\n");
        for (iu, iv, z) in self.supported_bins() {
            let _ = writeln!(out, "{iu},{iv},{:e},{:e}", z.re, z.im);
        }
        out
    }

    /// Binary form: magic, bin size (f64), half extent (u32), kind (u32),
    /// `re, im` (f64) for every bin u-major, then the support as a packed
    /// bitmap, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.values.len() * 16 + self.values.len() / 8 + 1);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.grid.bin_size().to_le_bytes());
        out.extend_from_slice(&(self.grid.half_extent() as u32).to_le_bytes());
        out.extend_from_slice(&self.kind.code().to_le_bytes());
        for z in self.values.iter() {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        let mut bits = vec![0u8; self.support.len().div_ceil(8)];
        for (i, &s) in self.support.iter().enumerate() {
            if s {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |d: &str| AimError::format("visibility file", d.to_string());
        if data.len() < 24 || &data[..8] != MAGIC {
            return Err(bad("missing AIMVIS01 header"));
        }
        let bin = f64::from_le_bytes(data[8..16].try_into().expect("8 bytes"));
        let half = u32::from_le_bytes(data[16..20].try_into().expect("4 bytes")) as usize;
        let kind = VisibilityKind::from_code(u32::from_le_bytes(data[20..24].try_into().expect("4 bytes")))?;
        let grid = UVGrid::new(bin, half).map_err(|e| bad(&e.to_string()))?;
        let n = grid.side() * grid.side();
        let body = 24 + 16 * n;
        if data.len() != body + n.div_ceil(8) {
            return Err(bad("length does not match header"));
        }
        let values: Vec<Complex64> = data[24..body]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        let bits = &data[body..];
        let support: Vec<bool> = (0..n).map(|i| bits[i / 8] & (1 << (i % 8)) != 0).collect();
        let side = (grid.side(), grid.side());
        Self::new(
            grid,
            Array2::from_shape_vec(side, values).expect("sized"),
            kind,
            Array2::from_shape_vec(side, support).expect("sized"),
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Signed pixel indices `k - n/2` of one direction axis.
pub(crate) fn pixel_indices(n: usize) -> Vec<i64> {
    let c = (n / 2) as i64;
    (0..n as i64).map(|k| k - c).collect()
}

pub(crate) fn bin_indices(grid: &UVGrid) -> Vec<i64> {
    let h = grid.half_extent() as i64;
    (-h..=h).collect()
}

/// u-v grid whose bins make the forward/inverse pair an exact inverse on
/// `dgrid`: `2h + 1 >= n` bins per axis with `du = 1 / ((2h + 1) dalpha)`.
/// Requires square pixels and equal pixel counts.
pub fn matched_uv_grid(dgrid: &DirectionGrid) -> Result<UVGrid> {
    if dgrid.n_alpha() != dgrid.n_beta() || (dgrid.d_alpha() - dgrid.d_beta()).abs() > 1e-12 * dgrid.d_alpha() {
        return Err(AimError::Dimension(
            "a matched u-v grid needs a square direction grid with square pixels".into(),
        ));
    }
    let h = dgrid.n_alpha() / 2;
    UVGrid::new(1.0 / ((2 * h + 1) as f64 * dgrid.d_alpha()), h)
}

fn check_nyquist(dgrid: &DirectionGrid, grid: &UVGrid) -> Result<()> {
    let u_max = grid.coordinate(grid.half_extent() as i64);
    let worst = u_max * dgrid.d_alpha().max(dgrid.d_beta());
    if worst > 0.5 + 1e-12 {
        return Err(AimError::Dimension(format!(
            "u-v extent {u_max} with pixel size {} exceeds the Nyquist limit of the direction grid",
            dgrid.d_alpha().max(dgrid.d_beta())
        )));
    }
    Ok(())
}

/// `V(u, v) = sum I(alpha, beta) exp(+j 2 pi (u alpha + v beta)) dalpha dbeta`
/// for every bin of `grid`.
pub fn visibility_of(intensity: &IntensityGrid, grid: &UVGrid) -> Result<VisibilityGrid> {
    visibility_with(intensity, grid, true)
}

/// Same as [`visibility_of`] evaluated without the FFT shortcut.
pub fn visibility_of_direct(intensity: &IntensityGrid, grid: &UVGrid) -> Result<VisibilityGrid> {
    visibility_with(intensity, grid, false)
}

fn visibility_with(intensity: &IntensityGrid, grid: &UVGrid, allow_fft: bool) -> Result<VisibilityGrid> {
    let dgrid = intensity.grid();
    check_nyquist(dgrid, grid)?;
    let data = intensity.values().mapv(|x| Complex64::new(x, 0.0));
    let bins = bin_indices(grid);
    let step = (grid.bin_size() * dgrid.d_alpha(), grid.bin_size() * dgrid.d_beta());
    let cell = dgrid.d_alpha() * dgrid.d_beta();
    let values = transform::separable(
        &data,
        (&pixel_indices(dgrid.n_alpha()), &pixel_indices(dgrid.n_beta())),
        (&bins, &bins),
        step,
        Sign::Plus,
        allow_fft,
    ) * Complex64::new(cell, 0.0);
    let support = Array2::from_elem(values.dim(), true);
    VisibilityGrid::new(*grid, values, VisibilityKind::Full, support)
}

/// Multiplies `v` by the presence mask of `s`.
pub fn sample_visibility(v: &VisibilityGrid, s: &SamplingFunction) -> Result<VisibilityGrid> {
    sample_visibility_with(v, s, MaskMode::Presence)
}

pub fn sample_visibility_with(v: &VisibilityGrid, s: &SamplingFunction, mode: MaskMode) -> Result<VisibilityGrid> {
    v.grid.ensure_same(s.grid())?;
    let occ = s.occupancy();
    let support = occ.mapv(|m| m > 0) & &v.support;
    let values = ndarray::Zip::from(&v.values).and(occ).map_collect(|&z, &m| match mode {
        MaskMode::Presence if m > 0 => z,
        MaskMode::Multiplicity => z * m as f64,
        _ => Complex64::new(0.0, 0.0),
    });
    VisibilityGrid::new(v.grid, values, VisibilityKind::Sampled, support)
}

/// RMS of `|V|` over supported bins.
pub fn measure_subband_power(v: &VisibilityGrid) -> Result<f64> {
    let n = v.support_count();
    if n == 0 {
        return Err(AimError::Degenerate("visibility has no occupied bins".into()));
    }
    let sum: f64 = v
        .values
        .iter()
        .zip(v.support.iter())
        .filter(|(_, &s)| s)
        .map(|(z, _)| z.norm_sqr())
        .sum();
    Ok((sum / n as f64).sqrt())
}

/// Bin-wise sum of sampled visibilities; with `normalize` each part is first
/// divided by its [`measure_subband_power`].
pub fn additive_visibility(parts: &[VisibilityGrid], normalize: bool) -> Result<VisibilityGrid> {
    let first = parts
        .first()
        .ok_or_else(|| AimError::invalid("additive visibility needs at least one part"))?;
    let side = (first.grid.side(), first.grid.side());
    let mut values = Array2::<Complex64>::zeros(side);
    let mut support = Array2::from_elem(side, false);
    for p in parts {
        first.grid.ensure_same(&p.grid)?;
        if p.kind == VisibilityKind::Full {
            return Err(AimError::invalid("additive visibility combines sampled parts only"));
        }
        let scale = if normalize {
            let rms = measure_subband_power(p)?;
            if rms == 0.0 {
                return Err(AimError::Degenerate("a subband visibility is identically zero".into()));
            }
            1.0 / rms
        } else {
            1.0
        };
        values.zip_mut_with(&p.values, |acc, &z| *acc += z * scale);
        support.zip_mut_with(&p.support, |acc, &s| *acc |= s);
    }
    VisibilityGrid::new(first.grid, values, VisibilityKind::Additive, support)
}
