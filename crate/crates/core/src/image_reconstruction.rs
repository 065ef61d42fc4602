//! Reconstruction of intensity from sampled visibilities and point spread
//! function statistics.
//!
//! `I_r(alpha, beta) = du dv * sum V(u, v) exp(-j 2 pi (u alpha + v beta))`
//! over the supported bins. The `du dv` factor makes a full matched grid an
//! exact inverse of [`crate::visibility_forward::visibility_of`].

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{AimError, Result};
use crate::pgm;
use crate::scene_model::{DirectionGrid, IntensityGrid};
use crate::spatial_sampling::{SamplingFunction, UVGrid};
use crate::transform::{self, Sign};
use crate::visibility_forward::{bin_indices, pixel_indices, VisibilityGrid, VisibilityKind};

/// Amplitude ratio of the main-lobe threshold, -3 dB.
pub const MAIN_LOBE_RATIO: f64 = 0.707_945_784_384_137_9;

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructedImage {
    grid: DirectionGrid,
    values: Array2<f64>,
    complex: Array2<Complex64>,
    residual_imag: f64,
}

impl ReconstructedImage {
    fn from_complex(grid: DirectionGrid, complex: Array2<Complex64>) -> Self {
        let values = complex.mapv(|z| z.norm());
        let peak = values.iter().copied().fold(0.0, f64::max);
        let imag = complex.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let residual_imag = if peak > 0.0 { imag / peak } else { 0.0 };
        Self {
            grid,
            values,
            complex,
            residual_imag,
        }
    }

    /// Wraps a real map, e.g. a test fixture.
    pub fn from_values(grid: DirectionGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.dim() {
            return Err(AimError::Dimension(format!("{:?} vs grid {:?}", values.dim(), grid.dim())));
        }
        Ok(Self::from_complex(grid, values.mapv(|x| Complex64::new(x, 0.0))))
    }

    pub fn grid(&self) -> &DirectionGrid {
        &self.grid
    }

    /// Magnitude of the complex reconstruction.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Reconstruction before taking the magnitude.
    pub fn complex(&self) -> &Array2<Complex64> {
        &self.complex
    }

    /// `max |imag| / max |value|`.
    pub fn residual_imag(&self) -> f64 {
        self.residual_imag
    }

    pub fn to_intensity(&self) -> IntensityGrid {
        IntensityGrid::new(self.grid, self.values.clone()).expect("magnitudes are non-negative")
    }

    /// CSV with one row per pixel: `alpha,beta,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,value\n");
        for ((ia, ib), v) in self.values.indexed_iter() {
            let _ = writeln!(out, "{},{},{:e}", self.grid.alpha(ia), self.grid.beta(ib), v);
        }
        out
    }

    /// Graymap normalized to the image maximum.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let peak = self.values.iter().copied().fold(0.0, f64::max);
        let img = if peak > 0.0 { self.values.mapv(|v| v / peak) } else { self.values.clone() };
        pgm::write_unit_map(path, &img, pgm::Depth::Sixteen)
    }
}

fn check_kind(v: &VisibilityGrid) {
    if v.kind() == VisibilityKind::Full {
        log::debug!("reconstructing a full (unsampled) visibility");
    }
}

/// Reconstructs `v` on `dgrid`, using an FFT when the grids allow it.
pub fn reconstruct(v: &VisibilityGrid, dgrid: &DirectionGrid) -> ReconstructedImage {
    check_kind(v);
    let grid = v.grid();
    let bins = bin_indices(grid);
    let complex = transform::separable(
        v.values(),
        (&bins, &bins),
        (&pixel_indices(dgrid.n_alpha()), &pixel_indices(dgrid.n_beta())),
        (grid.bin_size() * dgrid.d_alpha(), grid.bin_size() * dgrid.d_beta()),
        Sign::Minus,
        true,
    ) * Complex64::new(grid.bin_size() * grid.bin_size(), 0.0);
    ReconstructedImage::from_complex(*dgrid, complex)
}

/// Reference evaluation: the plain double sum over supported bins for every
/// pixel, with phases from the physical coordinates.
pub fn reconstruct_direct(v: &VisibilityGrid, dgrid: &DirectionGrid) -> ReconstructedImage {
    check_kind(v);
    let grid = v.grid();
    let samples: Vec<(f64, f64, Complex64)> = v
        .supported_bins()
        .into_iter()
        .map(|(iu, iv, z)| (grid.coordinate(iu), grid.coordinate(iv), z))
        .collect();
    let area = grid.bin_size() * grid.bin_size();
    let rows: Vec<Vec<Complex64>> = (0..dgrid.n_alpha())
        .into_par_iter()
        .map(|ia| {
            let alpha = dgrid.alpha(ia);
            (0..dgrid.n_beta())
                .map(|ib| {
                    let beta = dgrid.beta(ib);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for &(u, w, z) in &samples {
                        acc += z * Complex64::from_polar(1.0, -2.0 * PI * (u * alpha + w * beta));
                    }
                    acc * area
                })
                .collect()
        })
        .collect();
    let flat: Vec<Complex64> = rows.into_iter().flatten().collect();
    ReconstructedImage::from_complex(*dgrid, Array2::from_shape_vec(dgrid.dim(), flat).expect("sized"))
}

/// `sum |V|^2 = scale * sum |I_c|^2` for a full matched grid with an odd
/// pixel count `n = 2h + 1` per axis (`du dalpha = 1 / n`); `None` for other
/// grid pairs, where no such identity holds.
pub fn parseval_scale(grid: &UVGrid, dgrid: &DirectionGrid) -> Option<f64> {
    let n = grid.side();
    let matched = dgrid.n_alpha() == n
        && dgrid.n_beta() == n
        && ((grid.bin_size() * dgrid.d_alpha() * n as f64) - 1.0).abs() < 1e-9
        && ((grid.bin_size() * dgrid.d_beta() * n as f64) - 1.0).abs() < 1e-9;
    if !matched {
        return None;
    }
    let area = grid.bin_size() * grid.bin_size();
    Some(1.0 / (area * area * (n * n) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LobeStatistics {
    /// Full width in alpha of the -3 dB run through the peak.
    pub main_lobe_width: f64,
    /// Highest level outside the main lobe, dB relative to the peak;
    /// `-inf` when nothing lies outside.
    pub peak_sidelobe_db: f64,
    pub peak: (usize, usize),
}

fn global_peak(img: &Array2<f64>, origin: (usize, usize)) -> (usize, usize) {
    let max = img.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * max.abs();
    let dist = |(a, b): (usize, usize)| {
        let da = a as i64 - origin.0 as i64;
        let db = b as i64 - origin.1 as i64;
        da * da + db * db
    };
    img.indexed_iter()
        .filter(|(_, &v)| v >= max - tol)
        .map(|(i, _)| i)
        .min_by_key(|&i| (dist(i), i))
        .expect("non-empty image")
}

/// Main-lobe width and peak sidelobe level of an image.
///
/// The main lobe is the set of pixels reachable from the peak by 8-connected
/// steps that never go uphill; the sidelobe is the maximum outside it. The
/// width is the run of pixels at or above -3 dB along alpha through the peak.
pub fn lobe_statistics(img: &ReconstructedImage) -> Result<LobeStatistics> {
    let v = img.values();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || max - min <= 1e-12 * max {
        return Err(AimError::Degenerate("image has no unique peak".into()));
    }
    let peak = global_peak(v, img.grid().origin());
    Ok(lobe_statistics_at(v, img.grid(), peak))
}

fn lobe_statistics_at(v: &Array2<f64>, grid: &DirectionGrid, peak: (usize, usize)) -> LobeStatistics {
    let (na, nb) = v.dim();
    let top = v[peak];
    let threshold = top * MAIN_LOBE_RATIO;
    let mut run = 1;
    let mut a = peak.0;
    while a > 0 && v[[a - 1, peak.1]] >= threshold {
        a -= 1;
        run += 1;
    }
    let mut a = peak.0;
    while a + 1 < na && v[[a + 1, peak.1]] >= threshold {
        a += 1;
        run += 1;
    }

    let mut lobe = Array2::from_elem((na, nb), false);
    lobe[peak] = true;
    let mut queue = VecDeque::from([peak]);
    while let Some((a, b)) = queue.pop_front() {
        for da in -1i64..=1 {
            for db in -1i64..=1 {
                let (qa, qb) = (a as i64 + da, b as i64 + db);
                if qa < 0 || qb < 0 || qa >= na as i64 || qb >= nb as i64 {
                    continue;
                }
                let q = (qa as usize, qb as usize);
                if !lobe[q] && v[q] <= v[[a, b]] {
                    lobe[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    let side = v
        .iter()
        .zip(lobe.iter())
        .filter(|(_, &inside)| !inside)
        .map(|(&x, _)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    let peak_sidelobe_db = if side > 0.0 {
        20.0 * (side / top).log10()
    } else {
        f64::NEG_INFINITY
    };
    LobeStatistics {
        main_lobe_width: run as f64 * grid.d_alpha(),
        peak_sidelobe_db,
        peak,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PsfReport {
    pub psf: ReconstructedImage,
    pub main_lobe_width: f64,
    pub peak_sidelobe_db: f64,
    pub peak: (usize, usize),
}

impl PsfReport {
    /// JSON summary; an absent sidelobe is written as `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let g = self.psf.grid();
        let sidelobe = if self.peak_sidelobe_db.is_finite() {
            serde_json::json!(self.peak_sidelobe_db)
        } else {
            serde_json::Value::Null
        };
        serde_json::json!({
            "main_lobe_width": self.main_lobe_width,
            "peak_sidelobe_db": sidelobe,
            "peak_alpha": g.alpha(self.peak.0),
            "peak_beta": g.beta(self.peak.1),
            "residual_imag": self.psf.residual_imag(),
            "n_alpha": g.n_alpha(),
            "n_beta": g.n_beta(),
            "d_alpha": g.d_alpha(),
            "d_beta": g.d_beta(),
        })
    }
}

/// Unit visibility on the occupied bins of `s`, reconstructed on `dgrid`.
pub fn psf(s: &SamplingFunction, dgrid: &DirectionGrid) -> Result<PsfReport> {
    let grid = s.grid();
    let support = s.occupancy().mapv(|m| m > 0);
    let values = support.mapv(|p| if p { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
    let vis = VisibilityGrid::new(*grid, values, VisibilityKind::Sampled, support)?;
    Ok(psf_of(&vis, dgrid))
}

/// Point spread function of an already sampled visibility's support pattern
/// (or any visibility treated as a beam), with lobe statistics.
pub fn psf_of(vis: &VisibilityGrid, dgrid: &DirectionGrid) -> PsfReport {
    let img = reconstruct(vis, dgrid);
    match lobe_statistics(&img) {
        Ok(stats) => PsfReport {
            psf: img,
            main_lobe_width: stats.main_lobe_width,
            peak_sidelobe_db: stats.peak_sidelobe_db,
            peak: stats.peak,
        },
        // flat beam: every pixel is main lobe
        Err(_) => PsfReport {
            main_lobe_width: dgrid.n_alpha() as f64 * dgrid.d_alpha(),
            peak_sidelobe_db: f64::NEG_INFINITY,
            peak: dgrid.origin(),
            psf: img,
        },
    }
}

/// The `count` highest local maxima (8-neighborhood), strongest first, as
/// `(ia, ib, value)`. Maxima closer than `min_separation` pixels (Chebyshev)
/// to a stronger one are skipped.
pub fn local_maxima(img: &Array2<f64>, count: usize, min_separation: usize) -> Vec<(usize, usize, f64)> {
    let (na, nb) = img.dim();
    let mut cands: Vec<(usize, usize, f64)> = Vec::new();
    for ((a, b), &v) in img.indexed_iter() {
        let mut is_max = v > 0.0;
        'scan: for da in -1i64..=1 {
            for db in -1i64..=1 {
                let (qa, qb) = (a as i64 + da, b as i64 + db);
                if (da, db) == (0, 0) || qa < 0 || qb < 0 || qa >= na as i64 || qb >= nb as i64 {
                    continue;
                }
                if img[[qa as usize, qb as usize]] > v {
                    is_max = false;
                    break 'scan;
                }
            }
        }
        if is_max {
            cands.push((a, b, v));
        }
    }
    cands.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for c in cands {
        if out.len() == count {
            break;
        }
        let clear = out
            .iter()
            .all(|o| o.0.abs_diff(c.0).max(o.1.abs_diff(c.1)) >= min_separation.max(1));
        if clear {
            out.push(c);
        }
    }
    out
}

/// Sum of squared magnitudes along both axes, for diagnostics.
pub fn energy(a: &Array2<Complex64>) -> f64 {
    a.map_axis(Axis(1), |row| row.iter().map(|z| z.norm_sqr()).sum::<f64>()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array_geometry::build_circular_array;
    use crate::scene_model::scene_smooth_blob;
    use crate::spatial_sampling::{sampling_function, WavelengthTag, ZeroSpacing};
    use crate::visibility_forward::{matched_uv_grid, sample_visibility, visibility_of};
    use approx::assert_relative_eq;

    fn occupancy(grid: &UVGrid, bins: &[(i64, i64)]) -> SamplingFunction {
        let mut occ = Array2::zeros((grid.side(), grid.side()));
        for &(iu, iv) in bins {
            occ[[grid.offset(iu), grid.offset(iv)]] = 1;
        }
        SamplingFunction::from_occupancy(*grid, occ, WavelengthTag::Additive).unwrap()
    }

    #[test]
    fn full_round_trip_on_matched_grid() {
        let d = DirectionGrid::square(64, 0.5).unwrap();
        let g = matched_uv_grid(&d).unwrap();
        let blob = scene_smooth_blob(&d, (0.05, -0.1), 0.04).unwrap();
        let v = visibility_of(&blob, &g).unwrap();
        let r = reconstruct(&v, &d);
        let err = (r.values() - blob.values()).mapv(|x| x * x).sum().sqrt() / blob.values().mapv(|x| x * x).sum().sqrt();
        assert!(err < 1e-9, "{err}");
        assert!(r.residual_imag() < 1e-9);
    }

    #[test]
    fn fast_matches_direct() {
        let layout = build_circular_array(0.101, 24, 0.0).unwrap();
        let d = DirectionGrid::square(32, 0.1).unwrap();
        let g = UVGrid::sized_for(&layout, 40e9, 0.5).unwrap();
        let blob = scene_smooth_blob(&d, (0.0, 0.02), 0.01).unwrap();
        let s = sampling_function(&layout, 38e9, &g, ZeroSpacing::Include).unwrap();
        let sv = sample_visibility(&visibility_of(&blob, &g).unwrap(), &s).unwrap();
        let fast = reconstruct(&sv, &d);
        let slow = reconstruct_direct(&sv, &d);
        let scale = slow.complex().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in fast.complex().iter().zip(slow.complex()) {
            assert!((a - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn delta_image_statistics() {
        let d = DirectionGrid::square(16, 0.5).unwrap();
        let mut v = Array2::zeros(d.dim());
        v[[3, 11]] = 2.0;
        let img = ReconstructedImage::from_values(d, v.clone()).unwrap();
        let st = lobe_statistics(&img).unwrap();
        assert_eq!(st.main_lobe_width, d.d_alpha());
        assert_eq!(st.peak_sidelobe_db, f64::NEG_INFINITY);
        assert_eq!(st.peak, (3, 11));
        let flat = ReconstructedImage::from_values(d, Array2::from_elem(d.dim(), 1.0)).unwrap();
        assert!(matches!(lobe_statistics(&flat), Err(AimError::Degenerate(_))));
        let scaled = ReconstructedImage::from_values(d, v * 7.0).unwrap();
        assert_eq!(lobe_statistics(&scaled).unwrap(), st);
    }

    #[test]
    fn dc_only_psf_is_flat() {
        let g = UVGrid::new(0.5, 4).unwrap();
        let d = DirectionGrid::square(16, 0.5).unwrap();
        let rep = psf(&occupancy(&g, &[(0, 0)]), &d).unwrap();
        let v = rep.psf.values();
        let max = v.iter().copied().fold(0.0, f64::max);
        assert!(v.iter().all(|&x| (x - max).abs() < 1e-12));
        assert_eq!(rep.peak_sidelobe_db, f64::NEG_INFINITY);
    }

    #[test]
    fn fringe_psf_width() {
        let g = UVGrid::new(0.5, 8).unwrap();
        let d = DirectionGrid::square(128, 0.5).unwrap();
        let u0 = g.coordinate(4);
        let rep = psf(&occupancy(&g, &[(4, 0), (-4, 0)]), &d).unwrap();
        let area = g.bin_size() * g.bin_size();
        for ((ia, _), &x) in rep.psf.values().indexed_iter() {
            let want = 2.0 * area * (2.0 * PI * u0 * d.alpha(ia)).cos().abs();
            assert!((x - want).abs() < 1e-12);
        }
        assert!(rep.psf.residual_imag() < 1e-12);
        assert_eq!(rep.peak, d.origin());
        let half_period = 1.0 / (4.0 * u0);
        assert!((rep.main_lobe_width - half_period).abs() <= d.d_alpha());
    }

    #[test]
    fn symmetric_psf_is_real_and_centred() {
        let layout = build_circular_array(0.101, 24, 0.0).unwrap();
        let g = UVGrid::sized_for(&layout, 40e9, 0.5).unwrap();
        let d = DirectionGrid::default();
        for f in [37e9, 40e9] {
            let rep = psf(&sampling_function(&layout, f, &g, ZeroSpacing::Exclude).unwrap(), &d).unwrap();
            assert!(rep.psf.residual_imag() <= 1e-9);
            assert_eq!(rep.peak, d.origin());
            assert!(rep.peak_sidelobe_db < 0.0);
            let json = rep.to_json();
            assert!(json["main_lobe_width"].as_f64().unwrap() > 0.0);
        }
    }

    #[test]
    fn local_maxima_order_and_separation() {
        let mut v = Array2::zeros((10, 10));
        v[[2, 2]] = 1.0;
        v[[2, 3]] = 0.9;
        v[[7, 7]] = 0.5;
        v[[7, 2]] = 0.7;
        let peaks = local_maxima(&v, 3, 2);
        assert_eq!(peaks, vec![(2, 2, 1.0), (7, 2, 0.7), (7, 7, 0.5)]);
        assert_eq!(local_maxima(&v, 1, 1).len(), 1);
        assert!(local_maxima(&Array2::zeros((4, 4)), 2, 1).is_empty());
    }

    #[test]
    fn parseval_on_odd_matched_grid() {
        let d = DirectionGrid::square(33, 0.5).unwrap();
        let g = matched_uv_grid(&d).unwrap();
        assert_eq!(g.side(), 33);
        let blob = scene_smooth_blob(&d, (0.1, 0.0), 0.08).unwrap();
        let v = visibility_of(&blob, &g).unwrap();
        let r = reconstruct(&v, &d);
        let k = parseval_scale(&g, &d).unwrap();
        assert_relative_eq!(energy(v.values()), k * energy(r.complex()), max_relative = 1e-10);
        assert!(parseval_scale(&g, &DirectionGrid::square(32, 0.5).unwrap()).is_none());
    }
}
