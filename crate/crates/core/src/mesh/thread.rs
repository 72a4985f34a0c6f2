//! Procedural ISO metric threads, pegs and holes.
//!
//! Threads use the 60° basic profile with a flat crest of width P/8 and a flat
//! (unrounded) root of width P/4, i.e. a thread depth of 5H/8 with H = P·√3/2.
//! A nut is the matching bolt profile pushed outward radially by half the
//! diametral clearance, so flanks clear by a quarter of the diametral clearance
//! at the centred coaxial pose.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::primitives::{hex_radius, square_radius, ColumnBuilder, ColumnVertex};
use super::{MeshError, TriMesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreadKind {
    Nut,
    Bolt,
}

/// Ends of the manufacturing tolerance band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fit {
    Loose,
    Tight,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreadSpec {
    /// Major diameter (m).
    pub nominal_diameter: f64,
    /// Axial pitch (m).
    pub pitch: f64,
    /// Two-sided diametral clearance (m).
    pub clearance: f64,
    /// Threaded length in pitches. Nut height is `turns * pitch`.
    pub turns: u32,
    pub segments_per_turn: u32,
    pub kind: ThreadKind,
    /// Rows per flank; more rows mean more triangles facing the mating part.
    #[serde(default = "default_flank_rows")]
    pub flank_rows: u32,
}

fn default_flank_rows() -> u32 {
    6
}

/// Width across flats of generated hex bodies, relative to the nominal diameter.
/// Not an ISO value.
pub const HEX_ACROSS_FLATS_RATIO: f64 = 1.5;
/// Bolt head height relative to the nominal diameter.
pub const HEAD_HEIGHT_RATIO: f64 = 0.625;
/// Unthreaded shank length of generated bolts, in pitches.
pub const SHANK_PITCHES: f64 = 1.0;
/// Nut height relative to the nominal diameter (close to ISO 4032 style nuts).
pub const NUT_HEIGHT_RATIO: f64 = 0.9;
/// Threaded bolt length relative to the nominal diameter.
pub const BOLT_THREAD_RATIO: f64 = 1.5;

/// ISO 724 coarse-series pitch (m) for a nominal diameter given in millimetres.
pub fn iso_coarse_pitch(nominal_mm: f64) -> Option<f64> {
    const TABLE: [(f64, f64); 18] = [
        (1.0, 0.25),
        (1.2, 0.25),
        (1.6, 0.35),
        (2.0, 0.4),
        (2.5, 0.45),
        (3.0, 0.5),
        (4.0, 0.7),
        (5.0, 0.8),
        (6.0, 1.0),
        (8.0, 1.25),
        (10.0, 1.5),
        (12.0, 1.75),
        (14.0, 2.0),
        (16.0, 2.0),
        (20.0, 2.5),
        (24.0, 3.0),
        (30.0, 3.5),
        (36.0, 4.0),
    ];
    TABLE
        .iter()
        .find(|(d, _)| (d - nominal_mm).abs() < 1e-9)
        .map(|(_, p)| p * 1e-3)
}

/// Diametral nut/bolt clearance (m) of the supplied M4..M20 assets.
pub fn iso_thread_clearance(nominal_mm: u32, fit: Fit) -> Option<f64> {
    let (tight, loose) = match nominal_mm {
        4 => (0.416, 0.736),
        8 => (0.848, 1.325),
        12 => (1.26, 1.86),
        16 => (1.472, 2.127),
        20 => (1.879, 2.664),
        _ => return None,
    };
    Some(1e-3 * if fit == Fit::Tight { tight } else { loose })
}

/// Diametral clearance (m) of the supplied round peg/hole assets.
pub fn iso_peg_clearance(diameter_mm: u32, fit: Fit) -> Option<f64> {
    let (tight, loose) = match diameter_mm {
        4 => (0.104, 0.112),
        8 => (0.105, 0.114),
        12 => (0.206, 0.217),
        16 => (0.506, 0.517),
        _ => return None,
    };
    Some(1e-3 * if fit == Fit::Tight { tight } else { loose })
}

impl ThreadSpec {
    /// Metric coarse thread `M<nominal_mm>` with the tabulated clearance for `fit`.
    pub fn metric(nominal_mm: u32, kind: ThreadKind, fit: Fit) -> Option<Self> {
        let pitch = iso_coarse_pitch(nominal_mm as f64)?;
        let ratio = match kind {
            ThreadKind::Nut => NUT_HEIGHT_RATIO,
            ThreadKind::Bolt => BOLT_THREAD_RATIO,
        };
        Some(Self {
            nominal_diameter: nominal_mm as f64 * 1e-3,
            pitch,
            clearance: iso_thread_clearance(nominal_mm, fit)?,
            turns: ((ratio * nominal_mm as f64 * 1e-3 / pitch).round() as u32).max(1),
            segments_per_turn: 64,
            kind,
            flank_rows: default_flank_rows(),
        })
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |m: &str| Err(MeshError::InvalidParams(m.to_string()));
        if self.turns < 1 {
            return bad("turns must be at least 1");
        }
        if !(self.pitch > 0.0) {
            return bad("pitch must be positive");
        }
        if !(self.nominal_diameter > 0.0) {
            return bad("nominal diameter must be positive");
        }
        if !(self.clearance >= 0.0) {
            return bad("clearance must be non-negative");
        }
        if self.segments_per_turn < 16 {
            return bad("segments_per_turn must be at least 16");
        }
        if self.flank_rows < 1 {
            return bad("flank_rows must be at least 1");
        }
        if self.thread_depth() >= self.major_radius() {
            return bad("pitch too coarse for diameter");
        }
        Ok(())
    }

    pub fn major_radius(&self) -> f64 {
        self.nominal_diameter / 2.0
    }

    /// Radial depth from crest flat to root flat (5H/8).
    pub fn thread_depth(&self) -> f64 {
        5.0 / 8.0 * self.pitch * 3f64.sqrt() / 2.0
    }

    pub fn across_flats(&self) -> f64 {
        HEX_ACROSS_FLATS_RATIO * self.nominal_diameter
    }

    pub fn head_height(&self) -> f64 {
        HEAD_HEIGHT_RATIO * self.nominal_diameter
    }

    pub fn shank_length(&self) -> f64 {
        SHANK_PITCHES * self.pitch
    }

    pub fn threaded_length(&self) -> f64 {
        self.turns as f64 * self.pitch
    }

    /// Bolt-profile radius at helix phase `s` (m); the crest is centred on s = 0 mod P.
    pub fn external_radius(&self, s: f64) -> f64 {
        let u = (s / self.pitch).rem_euclid(1.0);
        let r = self.major_radius();
        let depth = self.thread_depth();
        let flank = 5.0 / 16.0;
        if !(1.0 / 16.0..15.0 / 16.0).contains(&u) {
            r
        } else if u < 6.0 / 16.0 {
            r - depth * (u - 1.0 / 16.0) / flank
        } else if u < 10.0 / 16.0 {
            r - depth
        } else {
            r - depth * (15.0 / 16.0 - u) / flank
        }
    }

    /// Radius of this part's thread surface at phase `s`.
    pub fn profile_radius(&self, s: f64) -> f64 {
        match self.kind {
            ThreadKind::Bolt => self.external_radius(s),
            ThreadKind::Nut => self.external_radius(s) + self.clearance / 2.0,
        }
    }

    /// Profile breakpoints within one pitch, as fractions of the pitch.
    fn breakpoints(&self) -> Vec<f64> {
        let f = self.flank_rows as usize;
        let mut u = Vec::with_capacity(2 * f + 2);
        for k in 0..=f {
            u.push(1.0 / 16.0 + 5.0 / 16.0 * k as f64 / f as f64);
        }
        for k in 0..=f {
            u.push(10.0 / 16.0 + 5.0 / 16.0 * k as f64 / f as f64);
        }
        u
    }

    /// Helical vertices strictly between heights `z0` and `z1` on the column at `theta`,
    /// sorted by height.
    fn helical_rows(&self, theta: f64, z0: f64, z1: f64) -> Vec<(f64, f64)> {
        let p = self.pitch;
        let advance = p * theta / TAU;
        let eps = 1e-3 * p;
        let bps = self.breakpoints();
        let mut out = Vec::new();
        let first = ((z0 - advance) / p).floor() as i64 - 1;
        let last = ((z1 - advance) / p).ceil() as i64 + 1;
        for m in first..=last {
            for u in &bps {
                let s = (m as f64 + u) * p;
                let z = s + advance;
                if z > z0 + eps && z < z1 - eps {
                    out.push((s, z));
                }
            }
        }
        out
    }
}

/// Watertight helical thread: a bolt (hex head, shank, threaded rod along +z starting at
/// z = 0 above the head) or a hex nut occupying 0 ≤ z ≤ turns·pitch.
pub fn generate_iso_thread(spec: &ThreadSpec) -> Result<TriMesh, MeshError> {
    spec.validate()?;
    let n = spec.segments_per_turn as usize;
    let mut b = ColumnBuilder::new(n, spec.pitch);
    match spec.kind {
        ThreadKind::Bolt => {
            let z0 = spec.shank_length();
            let z1 = z0 + spec.threaded_length();
            let head = -spec.head_height();
            for j in 0..n {
                let theta = b.angle(j);
                let advance = spec.pitch * theta / TAU;
                let hex = hex_radius(spec.across_flats(), theta);
                b.push(j, ColumnVertex::fixed(0.0, head, 0, 0.0), theta);
                b.push(j, ColumnVertex::fixed(hex, head, 0, 1.0), theta);
                b.push(j, ColumnVertex::fixed(hex, 0.0, 0, 2.0), theta);
                b.push(j, ColumnVertex::fixed(spec.major_radius(), 0.0, 0, 3.0), theta);
                let start = spec.profile_radius(z0 - advance);
                b.push(j, ColumnVertex::fixed(start, z0, 1, f64::NEG_INFINITY), theta);
                for (s, z) in spec.helical_rows(theta, z0, z1) {
                    let v = ColumnVertex {
                        radius: spec.profile_radius(s),
                        z,
                        segment: 1,
                        key: s,
                        helix_dir: 1.0,
                    };
                    b.push(j, v, theta);
                }
                let end = spec.profile_radius(z1 - advance);
                b.push(j, ColumnVertex::fixed(end, z1, 1, f64::INFINITY), theta);
                b.push(j, ColumnVertex::fixed(0.0, z1, 2, 0.0), theta);
            }
            Ok(b.build(false))
        }
        ThreadKind::Nut => {
            let height = spec.threaded_length();
            if spec.profile_radius(0.0) >= spec.across_flats() / 2.0 * 0.95 {
                return Err(MeshError::InvalidParams("clearance leaves no nut wall".into()));
            }
            for j in 0..n {
                let theta = b.angle(j);
                let advance = spec.pitch * theta / TAU;
                let hex = hex_radius(spec.across_flats(), theta);
                let top = spec.profile_radius(height - advance);
                b.push(j, ColumnVertex::fixed(top, height, 0, f64::NEG_INFINITY), theta);
                for (s, z) in spec.helical_rows(theta, 0.0, height).into_iter().rev() {
                    let v = ColumnVertex {
                        radius: spec.profile_radius(s),
                        z,
                        segment: 0,
                        key: -s,
                        helix_dir: -1.0,
                    };
                    b.push(j, v, theta);
                }
                let bottom = spec.profile_radius(-advance);
                b.push(j, ColumnVertex::fixed(bottom, 0.0, 0, f64::INFINITY), theta);
                b.push(j, ColumnVertex::fixed(hex, 0.0, 1, 0.0), theta);
                b.push(j, ColumnVertex::fixed(hex, height, 1, 1.0), theta);
            }
            Ok(b.build(true))
        }
    }
}

/// Rows along the bore of generated hole blocks.
const HOLE_WALL_ROWS: usize = 4;

/// Cylindrical peg (base at z = 0, height `length`) and a square block of depth
/// `length / 2` and side three hole diameters, with a coaxial through-hole of
/// diameter `diameter + clearance`; block base at z = 0.
pub fn generate_peg_hole(
    diameter: f64,
    clearance: f64,
    length: f64,
    segments: usize,
) -> Result<(TriMesh, TriMesh), MeshError> {
    if !(clearance >= 0.0) {
        return Err(MeshError::InvalidParams("clearance must be non-negative".into()));
    }
    if !(diameter > 0.0 && length > 0.0) || segments < 8 {
        return Err(MeshError::InvalidParams("peg needs positive size and at least 8 segments".into()));
    }
    let peg = super::primitives::cylinder(diameter / 2.0, length, segments);
    let hole_r = (diameter + clearance) / 2.0;
    let side = 3.0 * 2.0 * hole_r;
    let depth = length / 2.0;
    let mut b = ColumnBuilder::new(segments, 0.0);
    for j in 0..segments {
        let theta = b.angle(j);
        let outer = square_radius(side, theta);
        for r in 0..=HOLE_WALL_ROWS {
            let z = depth * (1.0 - r as f64 / HOLE_WALL_ROWS as f64);
            b.push(j, ColumnVertex::fixed(hole_r, z, 0, r as f64), theta);
        }
        b.push(j, ColumnVertex::fixed(outer, 0.0, 1, 0.0), theta);
        b.push(j, ColumnVertex::fixed(outer, depth, 1, 1.0), theta);
    }
    Ok((peg, b.build(true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::mass_properties;

    fn m16(kind: ThreadKind) -> ThreadSpec {
        ThreadSpec::metric(16, kind, Fit::Tight).unwrap()
    }

    #[test]
    fn iso_pitches() {
        assert_eq!(iso_coarse_pitch(16.0), Some(0.002));
        assert_eq!(iso_coarse_pitch(4.0), Some(0.0007));
        assert_eq!(iso_coarse_pitch(15.0), None);
        assert_eq!(iso_thread_clearance(16, Fit::Tight), Some(1.472e-3));
    }

    #[test]
    fn profile_shape() {
        let s = m16(ThreadKind::Bolt);
        assert_eq!(s.external_radius(0.0), 0.008);
        let root = 0.008 - s.thread_depth();
        assert!((s.external_radius(0.5 * s.pitch) - root).abs() < 1e-15);
        // 60° included angle: flank slope dr/dz = tan(60°)
        let a = s.external_radius(0.1 * s.pitch);
        let b = s.external_radius(0.2 * s.pitch);
        assert!(((a - b) / (0.1 * s.pitch) - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn m16_bolt_is_watertight_with_nominal_extent() {
        let spec = m16(ThreadKind::Bolt);
        let mesh = generate_iso_thread(&spec).unwrap();
        assert!(mesh.is_watertight());
        let thread_max = mesh
            .vertices()
            .iter()
            .filter(|v| v.z > 0.0)
            .map(|v| v.coords.xy().norm())
            .fold(0.0, f64::max);
        assert!((thread_max - 0.008).abs() < 1e-12);
        let mp = mass_properties(&mesh, 7800.0).unwrap();
        assert!(!mp.orientation_flipped);
    }

    #[test]
    fn nut_profile_offset_by_half_clearance() {
        let nut = m16(ThreadKind::Nut);
        let bolt = m16(ThreadKind::Bolt);
        for k in 0..50 {
            let s = k as f64 * 0.0001;
            assert!((nut.profile_radius(s) - bolt.profile_radius(s) - 0.736e-3).abs() < 1e-15);
        }
        let mesh = generate_iso_thread(&nut).unwrap();
        assert!(mesh.is_watertight());
        assert!(!mass_properties(&mesh, 7800.0).unwrap().orientation_flipped);
    }

    #[test]
    fn turns_below_one_rejected() {
        let mut spec = m16(ThreadKind::Nut);
        spec.turns = 0;
        assert!(generate_iso_thread(&spec).is_err());
        spec.turns = 1;
        spec.segments_per_turn = 8;
        assert!(generate_iso_thread(&spec).is_err());
    }

    #[test]
    fn all_sizes_and_fits_are_watertight() {
        for d in [4, 8, 12, 16, 20] {
            for fit in [Fit::Loose, Fit::Tight] {
                for kind in [ThreadKind::Nut, ThreadKind::Bolt] {
                    let mut spec = ThreadSpec::metric(d, kind, fit).unwrap();
                    spec.flank_rows = 2;
                    spec.segments_per_turn = 32;
                    let mesh = generate_iso_thread(&spec).unwrap();
                    assert!(mesh.is_watertight(), "M{d} {fit:?} {kind:?}");
                }
            }
        }
    }

    #[test]
    fn peg_hole_dimensions() {
        let (peg, hole) = generate_peg_hole(0.004, 0.104e-3, 0.012, 64).unwrap();
        assert!(peg.is_watertight() && hole.is_watertight());
        let bore = hole
            .vertices()
            .iter()
            .map(|v| v.coords.xy().norm())
            .fold(f64::INFINITY, f64::min);
        assert!((2.0 * bore - 0.004104).abs() < 1e-12);
        let (peg0, hole0) = generate_peg_hole(0.004, 0.0, 0.012, 64).unwrap();
        let peg_r = peg0.vertices().iter().map(|v| v.coords.xy().norm()).fold(0.0, f64::max);
        let bore0 = hole0.vertices().iter().map(|v| v.coords.xy().norm()).fold(f64::INFINITY, f64::min);
        assert!((peg_r - bore0).abs() < 1e-15);
        assert!(generate_peg_hole(0.004, -1e-6, 0.012, 64).is_err());
        assert!(!mass_properties(&hole, 1.0).unwrap().orientation_flipped);
    }
}
