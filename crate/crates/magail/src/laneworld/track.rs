//! Track geometry: a closed loop of constant-curvature segments with
//! parallel lanes, described in arc-length (Frenet) coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One piece of the loop: `length` metres of constant `curvature` (1/m).
/// Positive curvature bends left.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length: f64,
    pub curvature: f64,
}

/// Closed track: segment list plus lane layout. Width is `lanes * lane_width`,
/// centred on the track centreline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub segments: Vec<Segment>,
    pub lanes: usize,
    pub lane_width: f64,
    pub npc_count: usize,
}

impl TrackSpec {
    /// Two-lane, 1 km default loop with gentle alternating curves.
    pub fn default_track() -> Self {
        TrackSpec {
            segments: vec![
                Segment { length: 250.0, curvature: 0.0 },
                Segment { length: 200.0, curvature: 0.004 },
                Segment { length: 150.0, curvature: 0.0 },
                Segment { length: 200.0, curvature: -0.005 },
                Segment { length: 100.0, curvature: 0.0 },
                Segment { length: 100.0, curvature: 0.003 },
            ],
            lanes: 2,
            lane_width: 4.0,
            npc_count: 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::config("track.segments", "must not be empty"));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if !(seg.length > 0.0) || !seg.length.is_finite() {
                return Err(Error::config(
                    "track.segments",
                    format!("segment {i} length must be finite and positive, got {}", seg.length),
                ));
            }
            if !seg.curvature.is_finite() {
                return Err(Error::config(
                    "track.segments",
                    format!("segment {i} curvature must be finite"),
                ));
            }
        }
        if self.lanes == 0 {
            return Err(Error::config("track.lanes", "must be at least 1"));
        }
        if !(self.lane_width > 0.0) || !self.lane_width.is_finite() {
            return Err(Error::config("track.lane_width", "must be finite and positive"));
        }
        Ok(())
    }

    pub fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    pub fn width(&self) -> f64 {
        self.lanes as f64 * self.lane_width
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.width()
    }

    /// Wraps an arc-length position into [0, total_length).
    pub fn wrap_s(&self, s: f64) -> f64 {
        let len = self.total_length();
        let r = s.rem_euclid(len);
        // rem_euclid can return len itself when s is a tiny negative number.
        if r >= len { 0.0 } else { r }
    }

    /// Curvature of the segment containing arc-length `s` (wrapped).
    pub fn curvature_at(&self, s: f64) -> f64 {
        let mut rem = self.wrap_s(s);
        for seg in &self.segments {
            if rem < seg.length {
                return seg.curvature;
            }
            rem -= seg.length;
        }
        // Only reachable through accumulated rounding at the very end of the loop.
        self.segments[self.segments.len() - 1].curvature
    }

    /// Centre offset of lane `i`, counted from the right edge; lane indices
    /// grow leftward (+d).
    pub fn lane_center(&self, lane: usize) -> f64 {
        -self.half_width() + (lane as f64 + 0.5) * self.lane_width
    }

    /// Lane index containing lateral offset `d`, clamped to the outermost
    /// lanes for off-road positions.
    pub fn lane_of(&self, d: f64) -> usize {
        let idx = ((d + self.half_width()) / self.lane_width).floor();
        let max = (self.lanes - 1) as f64;
        idx.clamp(0.0, max) as usize
    }

    /// Forward arc distance from `from` to `to` along the loop, in [0, length).
    pub fn forward_gap(&self, from: f64, to: f64) -> f64 {
        self.wrap_s(to - from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_track_is_one_kilometre() {
        let t = TrackSpec::default_track();
        t.validate().unwrap();
        assert_eq!(t.total_length(), 1000.0);
        assert_eq!(t.lanes, 2);
        assert_eq!(t.width(), 8.0);
        assert_eq!(t.half_width(), 4.0);
    }

    #[test]
    fn curvature_lookup_respects_segment_boundaries() {
        let t = TrackSpec::default_track();
        assert_eq!(t.curvature_at(0.0), 0.0);
        assert_eq!(t.curvature_at(249.99), 0.0);
        assert_eq!(t.curvature_at(250.0), 0.004);
        assert_eq!(t.curvature_at(449.99), 0.004);
        assert_eq!(t.curvature_at(450.0), 0.0);
        assert_eq!(t.curvature_at(600.0), -0.005);
        assert_eq!(t.curvature_at(999.0), 0.003);
        // Wrapping: 1000 m is the same point as 0 m.
        assert_eq!(t.curvature_at(1000.0), 0.0);
        assert_eq!(t.curvature_at(-1.0), 0.003);
    }

    #[test]
    fn lane_centres_and_membership() {
        let t = TrackSpec::default_track();
        assert_eq!(t.lane_center(0), -2.0);
        assert_eq!(t.lane_center(1), 2.0);
        assert_eq!(t.lane_of(-2.0), 0);
        assert_eq!(t.lane_of(2.0), 1);
        assert_eq!(t.lane_of(0.0), 1); // boundary floors upward
        assert_eq!(t.lane_of(-0.001), 0);
        // Off-road positions clamp to the outermost lanes.
        assert_eq!(t.lane_of(-7.0), 0);
        assert_eq!(t.lane_of(9.0), 1);
    }

    #[test]
    fn wrap_and_gap() {
        let t = TrackSpec::default_track();
        assert_eq!(t.wrap_s(1234.0), 234.0);
        assert_eq!(t.wrap_s(-10.0), 990.0);
        assert_eq!(t.forward_gap(950.0, 30.0), 80.0);
        assert_eq!(t.forward_gap(30.0, 950.0), 920.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut t = TrackSpec::default_track();
        t.segments[2].length = 0.0;
        assert!(t.validate().is_err());

        let mut t = TrackSpec::default_track();
        t.segments.clear();
        assert!(t.validate().is_err());

        let mut t = TrackSpec::default_track();
        t.lane_width = -1.0;
        assert!(t.validate().is_err());

        let mut t = TrackSpec::default_track();
        t.lanes = 0;
        assert!(t.validate().is_err());
    }
}
