//! Planar helpers: link lengths and movement conflict detection.
//!
//! A movement is modelled as a chord across a small circle centred on the
//! intersection. Right-hand traffic places the entry point of an approach just
//! counter-clockwise of the road axis and the exit point just clockwise of it,
//! so two movements cross exactly when their chord endpoints interleave.

use std::f64::consts::TAU;

use super::Point;

const SIDE_OFFSET: f64 = 0.05;

pub(crate) fn polyline_length(points: &[Point]) -> f64 {
    points
        .windows(2)
        .map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt())
        .sum()
}

pub(crate) fn bearing(from: Point, to: Point) -> f64 {
    (to.y - from.y).atan2(to.x - from.x).rem_euclid(TAU)
}

/// One signalized movement seen from inside the intersection.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Chord {
    pub entry_road: usize,
    pub exit_road: usize,
    /// Bearing of the approach road axis.
    pub entry_axis: f64,
    /// Bearing of the departure road axis.
    pub exit_axis: f64,
}

impl Chord {
    fn endpoints(&self) -> (f64, f64) {
        (
            (self.entry_axis + SIDE_OFFSET).rem_euclid(TAU),
            (self.exit_axis - SIDE_OFFSET).rem_euclid(TAU),
        )
    }
}

/// Strictly inside the counter-clockwise arc from `start` to `end`.
fn in_ccw_arc(start: f64, end: f64, angle: f64) -> bool {
    let span = (end - start).rem_euclid(TAU);
    let offset = (angle - start).rem_euclid(TAU);
    offset > 0.0 && offset < span
}

pub(crate) fn conflicts(a: &Chord, b: &Chord) -> bool {
    if a.entry_road == b.entry_road {
        return false;
    }
    if a.exit_road == b.exit_road {
        return true;
    }
    let (a0, a1) = a.endpoints();
    let (b0, b1) = b.endpoints();
    in_ccw_arc(a0, a1, b0) != in_ccw_arc(a0, a1, b1)
}
