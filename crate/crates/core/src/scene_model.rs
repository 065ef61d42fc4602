//! Scene intensity rasters on a direction-cosine grid.
//!
//! Pixel `k` along an axis with `n` pixels and half span `a` sits at
//! `(k - n / 2) * (2a / n)` (integer division), so the grid always holds a
//! pixel exactly at the origin and covers `[-a, a)`.

use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::array_geometry::ArrayLayout;
use crate::error::{AimError, Result};
use crate::pgm::{self, Graymap};
use crate::spatial_sampling::wavelength;

/// Bundled helmet-style raster used as the fourth reference scene.
pub const HELMET_PGM: &[u8] = include_bytes!("../assets/helmet.pgm");

/// Scene content is drawn inside `[-extent, extent]^2` unless stated otherwise.
pub const DEFAULT_SCENE_EXTENT: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectionGrid {
    n_alpha: usize,
    n_beta: usize,
    alpha_half_span: f64,
    beta_half_span: f64,
}

impl Default for DirectionGrid {
    /// 128 x 128 pixels over `[-0.5, 0.5)^2`.
    fn default() -> Self {
        Self {
            n_alpha: 128,
            n_beta: 128,
            alpha_half_span: 0.5,
            beta_half_span: 0.5,
        }
    }
}

impl DirectionGrid {
    pub fn new(n_alpha: usize, n_beta: usize, alpha_half_span: f64, beta_half_span: f64) -> Result<Self> {
        if n_alpha < 2 || n_beta < 2 {
            return Err(AimError::invalid("direction grids need at least 2 pixels per axis"));
        }
        for s in [alpha_half_span, beta_half_span] {
            if !(s > 0.0 && s <= 1.0) {
                return Err(AimError::invalid(format!(
                    "direction-cosine half span must lie in (0, 1], got {s}"
                )));
            }
        }
        Ok(Self {
            n_alpha,
            n_beta,
            alpha_half_span,
            beta_half_span,
        })
    }

    pub fn square(n: usize, half_span: f64) -> Result<Self> {
        Self::new(n, n, half_span, half_span)
    }

    pub fn n_alpha(&self) -> usize {
        self.n_alpha
    }

    pub fn n_beta(&self) -> usize {
        self.n_beta
    }

    pub fn dim(&self) -> (usize, usize) {
        (self.n_alpha, self.n_beta)
    }

    pub fn alpha_half_span(&self) -> f64 {
        self.alpha_half_span
    }

    pub fn beta_half_span(&self) -> f64 {
        self.beta_half_span
    }

    pub fn d_alpha(&self) -> f64 {
        2.0 * self.alpha_half_span / self.n_alpha as f64
    }

    pub fn d_beta(&self) -> f64 {
        2.0 * self.beta_half_span / self.n_beta as f64
    }

    pub fn alpha(&self, k: usize) -> f64 {
        (k as f64 - (self.n_alpha / 2) as f64) * self.d_alpha()
    }

    pub fn beta(&self, k: usize) -> f64 {
        (k as f64 - (self.n_beta / 2) as f64) * self.d_beta()
    }

    pub fn alphas(&self) -> Vec<f64> {
        (0..self.n_alpha).map(|k| self.alpha(k)).collect()
    }

    pub fn betas(&self) -> Vec<f64> {
        (0..self.n_beta).map(|k| self.beta(k)).collect()
    }

    /// Pixel index of the origin.
    pub fn origin(&self) -> (usize, usize) {
        (self.n_alpha / 2, self.n_beta / 2)
    }

    /// Nearest pixel to `(alpha, beta)`, if inside the grid.
    pub fn nearest(&self, alpha: f64, beta: f64) -> Option<(usize, usize)> {
        let ka = (alpha / self.d_alpha()).round() + (self.n_alpha / 2) as f64;
        let kb = (beta / self.d_beta()).round() + (self.n_beta / 2) as f64;
        if ka < 0.0 || kb < 0.0 || ka >= self.n_alpha as f64 || kb >= self.n_beta as f64 {
            return None;
        }
        Some((ka as usize, kb as usize))
    }

    fn map<F: Fn(f64, f64) -> f64>(&self, f: F) -> Array2<f64> {
        Array2::from_shape_fn(self.dim(), |(ia, ib)| f(self.alpha(ia), self.beta(ib)))
    }
}

/// Non-negative scene intensity `values[[ia, ib]]` on a [`DirectionGrid`].
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityGrid {
    grid: DirectionGrid,
    values: Array2<f64>,
}

impl IntensityGrid {
    pub fn new(grid: DirectionGrid, values: Array2<f64>) -> Result<Self> {
        if values.dim() != grid.dim() {
            return Err(AimError::Dimension(format!(
                "values are {:?}, grid is {:?}",
                values.dim(),
                grid.dim()
            )));
        }
        if values.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(AimError::invalid("intensity must be finite and non-negative"));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: DirectionGrid) -> Self {
        Self {
            values: Array2::zeros(grid.dim()),
            grid,
        }
    }

    pub fn grid(&self) -> &DirectionGrid {
        &self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `max(|alpha|, |beta|)` over non-zero pixels.
    /// Largest |alpha| or |beta| holding more than 1e-3 of the peak, so
    /// Gaussian tails do not count as support.
    pub fn support_half_width(&self) -> f64 {
        let floor = 1e-3 * self.max();
        self.values
            .indexed_iter()
            .filter(|(_, &v)| v > floor)
            .map(|((ia, ib), _)| self.grid.alpha(ia).abs().max(self.grid.beta(ib).abs()))
            .fold(0.0, f64::max)
    }

    pub fn save_pgm(&self, path: &Path, depth: pgm::Depth) -> Result<()> {
        let max = self.max();
        let scaled = if max > 0.0 {
            self.values.mapv(|v| v / max)
        } else {
            self.values.clone()
        };
        pgm::write_unit_map(path, &scaled, depth)
    }
}

/// Half width of the grating-lobe-free field of view, `lambda / (2 d_min)`.
pub fn unambiguous_fov(layout: &ArrayLayout, frequency: f64) -> f64 {
    wavelength(frequency) / (2.0 * layout.min_element_spacing())
}

/// Checks that the scene support lies inside the unambiguous field of view at
/// `frequency`; logs a warning and returns `false` otherwise.
pub fn check_field_of_view(scene: &IntensityGrid, layout: &ArrayLayout, frequency: f64) -> bool {
    let fov = unambiguous_fov(layout, frequency);
    let support = scene.support_half_width();
    if support > fov {
        log::warn!(
            "scene extends to {support:.4} in direction cosine, beyond the unambiguous field of view \
             {fov:.4} at {:.2} GHz",
            frequency / 1e9
        );
        return false;
    }
    true
}

/// Gaussian blob centered at `center`, standard deviation `width`, peak 1.
pub fn scene_smooth_blob(grid: &DirectionGrid, center: (f64, f64), width: f64) -> Result<IntensityGrid> {
    if !(width > 0.0) {
        return Err(AimError::invalid(format!("blob width must be positive, got {width}")));
    }
    let values = grid.map(|a, b| {
        let r2 = (a - center.0).powi(2) + (b - center.1).powi(2);
        (-r2 / (2.0 * width * width)).exp()
    });
    let peak = values.iter().copied().fold(0.0, f64::max);
    let values = if peak > 0.0 { values / peak } else { values };
    IntensityGrid::new(*grid, values)
}

fn fill_square(values: &mut Array2<f64>, grid: &DirectionGrid, cx: f64, cy: f64, half: f64) {
    for ia in 0..grid.n_alpha {
        if (grid.alpha(ia) - cx).abs() > half {
            continue;
        }
        for ib in 0..grid.n_beta {
            if (grid.beta(ib) - cy).abs() <= half {
                values[[ia, ib]] = 1.0;
            }
        }
    }
}

/// Recursive square fractal: a centered square of half side `extent / 3`,
/// then at every further level four squares of half the side placed on the
/// diagonals of each parent square. Binary valued.
pub fn scene_fractal_squares(grid: &DirectionGrid, depth: usize, extent: f64) -> Result<IntensityGrid> {
    if depth < 1 {
        return Err(AimError::invalid("fractal depth must be at least 1"));
    }
    if !(extent > 0.0) {
        return Err(AimError::invalid("fractal extent must be positive"));
    }
    let mut values = Array2::zeros(grid.dim());
    let mut level = vec![(0.0, 0.0)];
    let mut half = extent / 3.0;
    for d in 0..depth {
        for &(cx, cy) in &level {
            fill_square(&mut values, grid, cx, cy, half);
        }
        if d + 1 == depth {
            break;
        }
        level = level
            .iter()
            .flat_map(|&(cx, cy)| {
                [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
                    .map(|(sx, sy)| (cx + sx * 1.5 * half, cy + sy * 1.5 * half))
            })
            .collect();
        half /= 2.0;
    }
    IntensityGrid::new(*grid, values)
}

/// A row of squares along alpha whose sides decrease linearly:
/// `side_i = largest_side * (count - i) / count`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSquares {
    pub count: usize,
    pub largest_side: f64,
    pub gap: f64,
}

impl LinearSquares {
    /// Squares spanning 95% of `[-extent, extent]` with gaps of `extent / 10`.
    pub fn fitted(count: usize, extent: f64) -> Self {
        let gap = 0.1 * extent;
        let n = count.max(1) as f64;
        let largest_side = 2.0 * (1.9 * extent - (n - 1.0) * gap) / (n + 1.0);
        Self {
            count,
            largest_side,
            gap,
        }
    }

    pub fn sides(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.largest_side * (self.count - i) as f64 / self.count as f64)
            .collect()
    }
}

pub fn scene_linear_squares(grid: &DirectionGrid, squares: LinearSquares) -> Result<IntensityGrid> {
    if squares.count < 1 {
        return Err(AimError::invalid("need at least one square"));
    }
    if !(squares.largest_side > 0.0) {
        return Err(AimError::invalid("square side must be positive"));
    }
    if squares.count > 1 && squares.gap < grid.d_alpha() {
        return Err(AimError::invalid(format!(
            "gap {} is below one pixel ({}); consecutive squares would overlap",
            squares.gap,
            grid.d_alpha()
        )));
    }
    let sides = squares.sides();
    let total: f64 = sides.iter().sum::<f64>() + squares.gap * (squares.count - 1) as f64;
    let mut values = Array2::zeros(grid.dim());
    let mut x = -total / 2.0;
    for s in sides {
        fill_square(&mut values, grid, x + s / 2.0, 0.0, s / 2.0);
        x += s + squares.gap;
    }
    IntensityGrid::new(*grid, values)
}

/// Loads a graymap and resamples it over the whole grid, values in `[0, 1]`.
pub fn scene_from_raster(path: &Path, grid: &DirectionGrid) -> Result<IntensityGrid> {
    let map = pgm::read(path)?;
    raster_to_intensity(&map, grid, None)
}

/// Resamples a decoded graymap onto `grid` by area averaging. With
/// `extent = Some(e)` the raster fills `[-e, e]^2` and the rest is zero.
pub fn raster_to_intensity(map: &Graymap, grid: &DirectionGrid, extent: Option<f64>) -> Result<IntensityGrid> {
    let src = pgm::raster_to_map(&map.pixels);
    let (sa, sb) = src.dim();
    // target region in direction cosine, pixel edges
    let (a0, a1, b0, b1) = match extent {
        Some(e) => (-e, e, -e, e),
        None => {
            let (da, db) = (grid.d_alpha(), grid.d_beta());
            (
                grid.alpha(0) - da / 2.0,
                grid.alpha(grid.n_alpha - 1) + da / 2.0,
                grid.beta(0) - db / 2.0,
                grid.beta(grid.n_beta - 1) + db / 2.0,
            )
        }
    };
    let (da, db) = (grid.d_alpha(), grid.d_beta());
    let axis_weights = |lo: f64, hi: f64, c0: f64, c1: f64, n: usize| -> Vec<(usize, f64)> {
        // overlap of [lo, hi) with each source cell, in units of the target cell
        let cell = (c1 - c0) / n as f64;
        let mut w = Vec::new();
        for k in 0..n {
            let s0 = c0 + k as f64 * cell;
            let s1 = s0 + cell;
            let ov = hi.min(s1) - lo.max(s0);
            if ov > 1e-12 * cell {
                w.push((k, ov));
            }
        }
        w
    };
    let mut values = Array2::zeros(grid.dim());
    for ia in 0..grid.n_alpha {
        let alpha = grid.alpha(ia);
        let wa = axis_weights(alpha - da / 2.0, alpha + da / 2.0, a0, a1, sa);
        if wa.is_empty() {
            continue;
        }
        for ib in 0..grid.n_beta {
            let beta = grid.beta(ib);
            let wb = axis_weights(beta - db / 2.0, beta + db / 2.0, b0, b1, sb);
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(ka, wa) in &wa {
                for &(kb, wb) in &wb {
                    acc += src[[ka, kb]] * wa * wb;
                    area += wa * wb;
                }
            }
            if area > 0.0 {
                // partially covered pixels keep the uncovered part dark
                values[[ia, ib]] = (acc / (da * db)).clamp(0.0, 1.0).min(acc / area);
            }
        }
    }
    IntensityGrid::new(*grid, values)
}

/// Point-like reflector. `reflectivity` scales intensity (power); `radius`
/// is the physical radius used when rendering a projection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scatterer {
    pub position: [f64; 3],
    pub reflectivity: f64,
    #[serde(default)]
    pub radius: f64,
}

impl Scatterer {
    pub fn range(&self) -> f64 {
        let [x, y, z] = self.position;
        (x * x + y * y + z * z).sqrt()
    }

    /// Direction cosines `(x / R, y / R)` with `R` the Euclidean range.
    pub fn direction(&self) -> (f64, f64) {
        let r = self.range();
        (self.position[0] / r, self.position[1] / r)
    }
}

/// Scatterers in front of the array (`z > 0`, meters, array plane at z = 0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScattererScene {
    pub scatterers: Vec<Scatterer>,
    pub range: f64,
}

impl ScattererScene {
    pub fn new(scatterers: Vec<Scatterer>, range: f64) -> Result<Self> {
        let scene = Self { scatterers, range };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.range > 0.0) {
            return Err(AimError::invalid("scene range must be positive"));
        }
        for (i, s) in self.scatterers.iter().enumerate() {
            if !(s.position[2] > 0.0) {
                return Err(AimError::invalid(format!(
                    "scatterer {i} at z = {} is not in front of the array",
                    s.position[2]
                )));
            }
            if !(s.reflectivity >= 0.0) || !(s.radius >= 0.0) {
                return Err(AimError::invalid(format!(
                    "scatterer {i} needs non-negative reflectivity and radius"
                )));
            }
        }
        Ok(())
    }

    /// Four 10 cm spheres in an L, 15 cm center to center, at `range`
    /// meters. Three run along +y at x = -pitch/2 and the fourth sits at the
    /// foot, x = +pitch/2.
    pub fn four_spheres(range: f64) -> Self {
        let pitch = 0.15;
        let spots = [
            (-pitch / 2.0, pitch),
            (-pitch / 2.0, 0.0),
            (-pitch / 2.0, -pitch),
            (pitch / 2.0, -pitch),
        ];
        let scatterers = spots
            .iter()
            .map(|&(x, y)| Scatterer {
                position: [x, y, range],
                reflectivity: 1.0,
                radius: 0.05,
            })
            .collect();
        Self { scatterers, range }
    }

    /// Two vertical cylinders 31 cm apart at `range`: 47 cm tall and 10 cm
    /// wide on the right, 37 cm tall and 8 cm wide on the left. Each is
    /// sampled as a column of point reflectors every 6 cm along its height.
    pub fn two_cylinders(range: f64) -> Self {
        let spacing = 0.31;
        let mut scatterers = Vec::new();
        for &(x, height, diameter) in &[(spacing / 2.0, 0.47, 0.10), (-spacing / 2.0, 0.37, 0.08)] {
            let n = (height / 0.06f64).round() as usize + 1;
            for k in 0..n {
                let y = -height / 2.0 + height * k as f64 / (n - 1) as f64;
                scatterers.push(Scatterer {
                    position: [x, y, range],
                    reflectivity: 1.0 / n as f64,
                    radius: diameter / 2.0,
                });
            }
        }
        Self { scatterers, range }
    }

    /// Direction cosines of every scatterer.
    pub fn directions(&self) -> Vec<(f64, f64)> {
        self.scatterers.iter().map(Scatterer::direction).collect()
    }
}

/// Renders each scatterer as a disc at its direction cosines with angular
/// radius `max(footprint, radius / range)` and amplitude `reflectivity`.
/// Discs smaller than a pixel land on the nearest pixel.
pub fn project_scatterers(scene: &ScattererScene, grid: &DirectionGrid, footprint: f64) -> Result<IntensityGrid> {
    if !(footprint >= 0.0) {
        return Err(AimError::invalid("footprint must be non-negative"));
    }
    scene.validate()?;
    let mut values = Array2::zeros(grid.dim());
    for s in &scene.scatterers {
        let (a0, b0) = s.direction();
        let rad = footprint.max(s.radius / s.range());
        let mut hit = false;
        for ia in 0..grid.n_alpha {
            let da = grid.alpha(ia) - a0;
            if da.abs() > rad {
                continue;
            }
            for ib in 0..grid.n_beta {
                let db = grid.beta(ib) - b0;
                if da * da + db * db <= rad * rad {
                    values[[ia, ib]] += s.reflectivity;
                    hit = true;
                }
            }
        }
        if !hit {
            if let Some(p) = grid.nearest(a0, b0) {
                values[p] += s.reflectivity;
            }
        }
    }
    IntensityGrid::new(*grid, values)
}

/// Declarative scene description used by experiment files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSpec {
    Blob {
        #[serde(default)]
        center: [f64; 2],
        width: f64,
    },
    Fractal {
        depth: usize,
        #[serde(default = "default_extent")]
        extent: f64,
    },
    Squares {
        count: usize,
        #[serde(default = "default_extent")]
        extent: f64,
    },
    /// `path` may be `builtin:helmet` for the bundled raster.
    Raster {
        path: String,
        #[serde(default)]
        extent: Option<f64>,
    },
    Scatterers {
        #[serde(default)]
        preset: Option<ScatterPreset>,
        #[serde(default)]
        scatterers: Vec<Scatterer>,
        #[serde(default)]
        range: Option<f64>,
        #[serde(default)]
        footprint: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScatterPreset {
    FourSpheres,
    TwoCylinders,
}

fn default_extent() -> f64 {
    DEFAULT_SCENE_EXTENT
}

impl SceneSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SceneSpec::Blob { .. } => "blob",
            SceneSpec::Fractal { .. } => "fractal",
            SceneSpec::Squares { .. } => "squares",
            SceneSpec::Raster { .. } => "raster",
            SceneSpec::Scatterers { .. } => "scatterers",
        }
    }

    /// File paths the scene reads, resolved against `base`.
    pub fn referenced_path(&self, base: &Path) -> Option<PathBuf> {
        match self {
            SceneSpec::Raster { path, .. } if !path.starts_with("builtin:") => Some(base.join(path)),
            _ => None,
        }
    }

    pub fn scatterer_scene(&self) -> Result<Option<ScattererScene>> {
        match self {
            SceneSpec::Scatterers {
                preset,
                scatterers,
                range,
                ..
            } => {
                let scene = match preset {
                    Some(ScatterPreset::FourSpheres) => ScattererScene::four_spheres(range.unwrap_or(1.5)),
                    Some(ScatterPreset::TwoCylinders) => ScattererScene::two_cylinders(range.unwrap_or(1.8)),
                    None => {
                        let range = range
                            .or_else(|| scatterers.first().map(|s| s.position[2]))
                            .unwrap_or(1.0);
                        ScattererScene::new(scatterers.clone(), range)?
                    }
                };
                scene.validate()?;
                Ok(Some(scene))
            }
            _ => Ok(None),
        }
    }

    pub fn render(&self, grid: &DirectionGrid, base: &Path) -> Result<IntensityGrid> {
        match self {
            SceneSpec::Blob { center, width } => scene_smooth_blob(grid, (center[0], center[1]), *width),
            SceneSpec::Fractal { depth, extent } => scene_fractal_squares(grid, *depth, *extent),
            SceneSpec::Squares { count, extent } => {
                scene_linear_squares(grid, LinearSquares::fitted(*count, *extent))
            }
            SceneSpec::Raster { path, extent } => {
                let map = match path.as_str() {
                    "builtin:helmet" => pgm::decode(HELMET_PGM)?,
                    p if p.starts_with("builtin:") => {
                        return Err(AimError::invalid(format!("unknown builtin raster {p:?}")))
                    }
                    p => pgm::read(&base.join(p))?,
                };
                raster_to_intensity(&map, grid, *extent)
            }
            SceneSpec::Scatterers { footprint, .. } => {
                let scene = self.scatterer_scene()?.expect("scatterer variant");
                project_scatterers(&scene, grid, *footprint)
            }
        }
    }
}

/// The four reference scenes: smooth blob, square fractal, linearly shrinking
/// squares and the bundled helmet raster, all inside `extent`.
pub fn reference_scenes(extent: f64) -> Vec<(String, SceneSpec)> {
    vec![
        (
            "S1".into(),
            SceneSpec::Blob {
                center: [0.0, 0.0],
                width: 0.3 * extent,
            },
        ),
        ("S2".into(), SceneSpec::Fractal { depth: 4, extent }),
        ("S3".into(), SceneSpec::Squares { count: 5, extent }),
        (
            "S4".into(),
            SceneSpec::Raster {
                path: "builtin:helmet".into(),
                extent: Some(extent),
            },
        ),
    ]
}
