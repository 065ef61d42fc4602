//! Receiver and transmitter layouts and the antenna-pair baselines they
//! produce.
//!
//! Positions are planar `(x, y)` coordinates in meters. A layout is
//! wavelength-agnostic; conversion to spatial frequency happens in
//! [`crate::spatial_sampling`], so one layout serves every subband.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AimError, Result};

/// A planar element position in meters.
pub type Position = [f64; 2];

/// Receiver and transmitter element positions.
///
/// Invariants enforced by [`ArrayLayout::new`]:
/// * at least two receivers, no two at identical coordinates;
/// * every transmitter lies strictly outside the bounding circle of the
///   receivers (centered on the receiver centroid).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayLayout {
    label: String,
    receivers: Vec<Position>,
    #[serde(default)]
    transmitters: Vec<Position>,
}

impl ArrayLayout {
    pub fn new(
        label: impl Into<String>,
        receivers: Vec<Position>,
        transmitters: Vec<Position>,
    ) -> Result<Self> {
        let layout = Self::new_relaxed(label, receivers, transmitters)?;
        layout.check_transmitters_outside()?;
        Ok(layout)
    }

    /// Like [`ArrayLayout::new`] but without the wider-baseline check on
    /// transmitters. Used for negative-control experiments, e.g. a single
    /// transmitter at the array center.
    pub fn new_relaxed(
        label: impl Into<String>,
        receivers: Vec<Position>,
        transmitters: Vec<Position>,
    ) -> Result<Self> {
        if receivers.len() < 2 {
            return Err(AimError::invalid(format!(
                "a layout needs at least 2 receivers, got {}",
                receivers.len()
            )));
        }
        for p in receivers.iter().chain(transmitters.iter()) {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(AimError::invalid("element coordinates must be finite"));
            }
        }
        for (i, a) in receivers.iter().enumerate() {
            for (j, b) in receivers.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(AimError::invalid(format!(
                        "receivers {i} and {j} share the position ({}, {})",
                        a[0], a[1]
                    )));
                }
            }
        }
        Ok(Self {
            label: label.into(),
            receivers,
            transmitters,
        })
    }

    fn check_transmitters_outside(&self) -> Result<()> {
        let c = self.receiver_centroid();
        let span = self.receiver_radius();
        for (t, p) in self.transmitters.iter().enumerate() {
            let r = (p[0] - c[0]).hypot(p[1] - c[1]);
            if r <= span {
                return Err(AimError::ConstraintViolation(format!(
                    "transmitter {t} at radius {r:.4} m is inside the receiver span ({span:.4} m)"
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn receivers(&self) -> &[Position] {
        &self.receivers
    }

    pub fn transmitters(&self) -> &[Position] {
        &self.transmitters
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn receiver_centroid(&self) -> Position {
        let n = self.receivers.len() as f64;
        let (sx, sy) = self
            .receivers
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    }

    /// Radius of the bounding circle of the receivers about their centroid.
    pub fn receiver_radius(&self) -> f64 {
        let c = self.receiver_centroid();
        self.receivers
            .iter()
            .map(|p| (p[0] - c[0]).hypot(p[1] - c[1]))
            .fold(0.0, f64::max)
    }

    /// Longest receiver separation in meters.
    pub fn max_baseline_length(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, a) in self.receivers.iter().enumerate() {
            for b in &self.receivers[i + 1..] {
                best = best.max((b[0] - a[0]).hypot(b[1] - a[1]));
            }
        }
        best
    }

    /// Shortest receiver separation in meters.
    pub fn min_element_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.receivers.iter().enumerate() {
            for b in &self.receivers[i + 1..] {
                best = best.min((b[0] - a[0]).hypot(b[1] - a[1]));
            }
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: ArrayLayout = serde_json::from_str(text)?;
        Self::new(raw.label, raw.receivers, raw.transmitters)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Directed separation between two receivers: `(dx, dy) = p[rx_b] - p[rx_a]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Baseline {
    pub dx: f64,
    pub dy: f64,
    pub rx_a: usize,
    pub rx_b: usize,
}

impl Baseline {
    pub fn length(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    pub fn is_zero(&self) -> bool {
        self.rx_a == self.rx_b
    }
}

/// Which baselines [`enumerate_baselines`] emits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BaselineOptions {
    /// Emit both `(a, b)` and `(b, a)`; otherwise only `a < b`.
    pub include_conjugates: bool,
    /// Emit the zero-spacing (autocorrelation) baseline once.
    pub include_zero: bool,
}

impl Default for BaselineOptions {
    fn default() -> Self {
        Self {
            include_conjugates: true,
            include_zero: false,
        }
    }
}

/// Places `n_elements` receivers uniformly on a circle of `radius` meters,
/// element `k` at `start_angle + k * 360 / n_elements` degrees.
pub fn build_circular_array(radius: f64, n_elements: usize, start_angle_deg: f64) -> Result<ArrayLayout> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(AimError::invalid(format!("radius must be positive, got {radius}")));
    }
    if n_elements < 2 {
        return Err(AimError::invalid(format!(
            "a circular array needs at least 2 elements, got {n_elements}"
        )));
    }
    let receivers = circle_points(radius, n_elements, start_angle_deg);
    ArrayLayout::new(
        format!("circular-{n_elements}-r{:.0}mm", radius * 1e3),
        receivers,
        Vec::new(),
    )
}

fn circle_points(radius: f64, n: usize, start_angle_deg: f64) -> Vec<Position> {
    (0..n)
        .map(|k| {
            let theta = (start_angle_deg + k as f64 * 360.0 / n as f64).to_radians();
            [radius * theta.cos(), radius * theta.sin()]
        })
        .collect()
}

/// Every receiver pair baseline, in row-major `(a, b)` order.
pub fn enumerate_baselines(layout: &ArrayLayout, options: BaselineOptions) -> Vec<Baseline> {
    let rx = layout.receivers();
    let n = rx.len();
    let mut out = Vec::with_capacity(n * (n - 1) + 1);
    if options.include_zero {
        out.push(Baseline {
            dx: 0.0,
            dy: 0.0,
            rx_a: 0,
            rx_b: 0,
        });
    }
    for a in 0..n {
        for b in 0..n {
            if a == b || (!options.include_conjugates && b < a) {
                continue;
            }
            out.push(Baseline {
                dx: rx[b][0] - rx[a][0],
                dy: rx[b][1] - rx[a][1],
                rx_a: a,
                rx_b: b,
            });
        }
    }
    out
}

/// Replaces the layout's transmitters with `n_tx` elements spread uniformly
/// on a circle of `radius` meters about the receiver centroid, the first one
/// at angle 0.
pub fn place_transmitters(layout: &ArrayLayout, radius: f64, n_tx: usize) -> Result<ArrayLayout> {
    if n_tx == 0 {
        return Err(AimError::invalid("at least one transmitter is required"));
    }
    let span = layout.receiver_radius();
    if !(radius > span) {
        return Err(AimError::ConstraintViolation(format!(
            "transmitter radius {radius} m does not exceed the receiver span {span:.4} m"
        )));
    }
    let c = layout.receiver_centroid();
    let transmitters = circle_points(radius, n_tx, 0.0)
        .into_iter()
        .map(|p| [p[0] + c[0], p[1] + c[1]])
        .collect();
    ArrayLayout::new(layout.label.clone(), layout.receivers.clone(), transmitters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn o_array() -> ArrayLayout {
        build_circular_array(0.101, 24, 0.0).unwrap()
    }

    #[test]
    fn circular_array_spacing() {
        let layout = o_array();
        assert_eq!(layout.n_receivers(), 24);
        let rx = layout.receivers();
        for k in 0..24 {
            let a = rx[k];
            let b = rx[(k + 1) % 24];
            let angle = b[1].atan2(b[0]) - a[1].atan2(a[0]);
            let angle = angle.to_degrees().rem_euclid(360.0);
            assert_relative_eq!(angle, 15.0, epsilon = 1e-9);
            // chord length 2 r sin(7.5 deg), checked by coordinate subtraction
            let chord = (b[0] - a[0]).hypot(b[1] - a[1]);
            assert_relative_eq!(chord, 0.026_366, epsilon = 1e-5);
            assert_relative_eq!(chord, 2.0 * 0.101 * 7.5f64.to_radians().sin(), epsilon = 1e-15);
        }
    }

    #[test]
    fn two_element_circle() {
        let layout = build_circular_array(1.0, 2, 0.0).unwrap();
        let rx = layout.receivers();
        assert_relative_eq!(rx[0][0], 1.0);
        assert_relative_eq!(rx[0][1], 0.0);
        assert_relative_eq!(rx[1][0], -1.0);
        assert!(rx[1][1].abs() < 1e-15);
        let b = enumerate_baselines(&layout, BaselineOptions::default());
        assert_eq!(b.len(), 2);
        assert_relative_eq!(b[0].dx, -2.0);
        assert_relative_eq!(b[1].dx, 2.0);
    }

    #[test]
    fn invalid_circular_arguments() {
        assert!(matches!(build_circular_array(0.0, 24, 0.0), Err(AimError::InvalidArgument(_))));
        assert!(matches!(build_circular_array(-1.0, 24, 0.0), Err(AimError::InvalidArgument(_))));
        assert!(matches!(build_circular_array(0.1, 1, 0.0), Err(AimError::InvalidArgument(_))));
    }

    #[test]
    fn duplicate_receivers_rejected() {
        let err = ArrayLayout::new("dup", vec![[0.0, 0.0], [0.0, 0.0]], vec![]).unwrap_err();
        assert!(matches!(err, AimError::InvalidArgument(_)));
    }

    #[test]
    fn baseline_counts() {
        let layout = o_array();
        let directed = enumerate_baselines(&layout, BaselineOptions::default());
        assert_eq!(directed.len(), 552);
        let with_zero = enumerate_baselines(
            &layout,
            BaselineOptions {
                include_conjugates: true,
                include_zero: true,
            },
        );
        assert_eq!(with_zero.len(), 553);
        assert_eq!(with_zero.iter().filter(|b| b.is_zero()).count(), 1);
        let half = enumerate_baselines(
            &layout,
            BaselineOptions {
                include_conjugates: false,
                include_zero: false,
            },
        );
        assert_eq!(half.len(), 276);
    }

    #[test]
    fn baseline_closure_under_conjugation() {
        let layout = o_array();
        let all = enumerate_baselines(&layout, BaselineOptions::default());
        for b in &all {
            let rev = all
                .iter()
                .find(|c| c.rx_a == b.rx_b && c.rx_b == b.rx_a)
                .unwrap();
            assert_eq!(rev.dx, -b.dx);
            assert_eq!(rev.dy, -b.dy);
        }
    }

    #[test]
    fn baseline_length_multiset_rotation_invariant() {
        let lengths = |start: f64| {
            let layout = build_circular_array(0.101, 24, start).unwrap();
            let mut l: Vec<f64> = enumerate_baselines(&layout, BaselineOptions::default())
                .iter()
                .map(Baseline::length)
                .collect();
            l.sort_by(f64::total_cmp);
            l
        };
        let a = lengths(0.0);
        let b = lengths(15.0);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn receivers_equidistant_from_centroid() {
        let layout = o_array();
        let c = layout.receiver_centroid();
        for p in layout.receivers() {
            let r = (p[0] - c[0]).hypot(p[1] - c[1]);
            assert_relative_eq!(r, 0.101, max_relative = 1e-12);
        }
    }

    #[test]
    fn transmitter_placement() {
        let layout = o_array();
        let with_tx = place_transmitters(&layout, 0.3, 4).unwrap();
        let tx = with_tx.transmitters();
        assert_eq!(tx.len(), 4);
        for (k, p) in tx.iter().enumerate() {
            assert_relative_eq!(p[0].hypot(p[1]), 0.3, max_relative = 1e-12);
            let want = (90.0 * k as f64).to_radians();
            assert!((p[1].atan2(p[0]) - want).sin().abs() < 1e-12);
            assert!((p[1].atan2(p[0]) - want).cos() > 0.0);
        }
        let single = place_transmitters(&layout, 0.3, 1).unwrap();
        assert_relative_eq!(single.transmitters()[0][0], 0.3);
        assert!(single.transmitters()[0][1].abs() < 1e-15);

        let err = place_transmitters(&layout, 0.05, 4).unwrap_err();
        assert!(matches!(err, AimError::ConstraintViolation(_)));
    }

    #[test]
    fn json_round_trip_and_field_order() {
        let layout = place_transmitters(&o_array(), 0.3, 4).unwrap();
        let text = layout.to_json().unwrap();
        let label = text.find("\"label\"").unwrap();
        let rx = text.find("\"receivers\"").unwrap();
        let tx = text.find("\"transmitters\"").unwrap();
        assert!(label < rx && rx < tx);
        let back = ArrayLayout::from_json(&text).unwrap();
        assert_eq!(back, layout);
    }

    #[test]
    fn json_rejects_transmitter_inside_span() {
        let text = r#"{"label": "x", "receivers": [[1, 0], [-1, 0]], "transmitters": [[0, 0]]}"#;
        assert!(matches!(
            ArrayLayout::from_json(text),
            Err(AimError::ConstraintViolation(_))
        ));
    }
}
