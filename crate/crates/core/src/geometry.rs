//! Field coordinates, sun vectors, heliostat tracking and facet canting.
//!
//! All positions are metres in an East-North-Up frame centred on the tower
//! base: `x` is east, `y` is north, `z` is up. Azimuth is measured clockwise
//! from north.

use std::fs;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HelioError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const EAST: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const NORTH: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const UP: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Unit vector in the same direction. Zero stays zero.
    #[inline]
    pub fn normalized(self) -> Vec3 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            self
        }
    }

    /// Mirror reflection of a travelling direction about a unit normal.
    #[inline]
    pub fn reflect(self, normal: Vec3) -> Vec3 {
        self - normal * (2.0 * self.dot(normal))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Any unit vector perpendicular to `self` (which must be unit length).
    pub fn any_perpendicular(self) -> Vec3 {
        let helper = if self.x.abs() < 0.9 { Vec3::EAST } else { Vec3::NORTH };
        self.cross(helper).normalized()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3 {
    pub rows: [[f64; 3]; 3],
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3 {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    pub fn from_cols(a: Vec3, b: Vec3, c: Vec3) -> Mat3 {
        Mat3 {
            rows: [[a.x, b.x, c.x], [a.y, b.y, c.y], [a.z, b.z, c.z]],
        }
    }

    pub fn col(&self, j: usize) -> Vec3 {
        Vec3::new(self.rows[0][j], self.rows[1][j], self.rows[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let r = &self.rows;
        Mat3 {
            rows: [
                [r[0][0], r[1][0], r[2][0]],
                [r[0][1], r[1][1], r[2][1]],
                [r[0][2], r[1][2], r[2][2]],
            ],
        }
    }

    pub fn det(&self) -> f64 {
        self.col(0).dot(self.col(1).cross(self.col(2)))
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        let r = &self.rows;
        Vec3::new(
            r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z,
        )
    }

    pub fn compose(&self, o: &Mat3) -> Mat3 {
        Mat3::from_cols(self.apply(o.col(0)), self.apply(o.col(1)), self.apply(o.col(2)))
    }

    /// Rotation about a unit axis (Rodrigues).
    pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let Vec3 { x, y, z } = axis;
        Mat3 {
            rows: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Smallest rotation taking unit vector `from` onto unit vector `to`.
    pub fn rotation_between(from: Vec3, to: Vec3) -> Mat3 {
        let axis = from.cross(to);
        let s = axis.norm();
        let c = from.dot(to).clamp(-1.0, 1.0);
        if s < 1e-15 {
            if c > 0.0 {
                return Mat3::IDENTITY;
            }
            return Mat3::axis_angle(from.any_perpendicular(), std::f64::consts::PI);
        }
        Mat3::axis_angle(axis * (1.0 / s), s.atan2(c))
    }

    /// Max deviation of `M^T M` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.col(i).dot(self.col(j)) - if i == j { 1.0 } else { 0.0 };
                worst = worst.max(d.abs());
            }
        }
        worst
    }
}

/// Unit vector toward the sun. Azimuth clockwise from north, elevation above
/// the horizon, both in degrees.
pub fn solar_vector(azimuth_deg: f64, elevation_deg: f64) -> Vec3 {
    let (sa, ca) = azimuth_deg.to_radians().sin_cos();
    let (se, ce) = elevation_deg.to_radians().sin_cos();
    Vec3::new(sa * ce, ca * ce, se)
}

/// Inverse of [`solar_vector`]: `(azimuth_deg in [0, 360), elevation_deg)`.
pub fn azimuth_elevation(dir: Vec3) -> (f64, f64) {
    let d = dir.normalized();
    let az = d.x.atan2(d.y).to_degrees().rem_euclid(360.0);
    let el = d.z.clamp(-1.0, 1.0).asin().to_degrees();
    (az, el)
}

pub const CSR_MAX: f64 = 0.15;

/// Sun direction plus circumsolar ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SunState {
    pub direction: Vec3,
    pub csr: f64,
}

impl SunState {
    pub fn new(direction: Vec3, csr: f64) -> Result<Self> {
        let state = SunState {
            direction: direction.normalized(),
            csr,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.direction.is_finite() || (self.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(HelioError::invalid("sun direction must be a finite unit vector"));
        }
        if self.direction.z <= 0.0 {
            return Err(HelioError::invalid("sun is at or below the horizon"));
        }
        if !(0.0..=CSR_MAX).contains(&self.csr) {
            return Err(HelioError::invalid(format!(
                "csr {} outside [0, {CSR_MAX}]",
                self.csr
            )));
        }
        Ok(())
    }
}

/// Mirror normal that reflects light arriving from `sun_dir` toward `aim_point`.
pub fn track_orientation(sun_dir: Vec3, heliostat_pos: Vec3, aim_point: Vec3) -> Result<Vec3> {
    let to_aim = aim_point - heliostat_pos;
    if to_aim.norm() == 0.0 {
        return Err(HelioError::Degenerate("aim point coincides with heliostat".into()));
    }
    let bisector = sun_dir.normalized() + to_aim.normalized();
    let len = bisector.norm();
    if len < 1e-12 {
        return Err(HelioError::Degenerate(
            "sun and aim directions are opposite; reflection undefined".into(),
        ));
    }
    Ok(bisector * (1.0 / len))
}

/// Orthonormal mirror frame with columns `(right, up, normal)`.
///
/// `right` is horizontal; for a vertical normal it falls back to east.
pub fn mirror_frame(normal: Vec3) -> Mat3 {
    let horizontal = Vec3::UP.cross(normal);
    let right = if horizontal.norm() < 1e-12 {
        Vec3::EAST
    } else {
        horizontal.normalized()
    };
    let up = normal.cross(right);
    Mat3::from_cols(right, up, normal)
}

pub const FACET_WIDTH: f64 = 1.6;
pub const FACET_HEIGHT: f64 = 1.25;
pub const FACET_GAP: f64 = 0.02;
pub const FACET_COUNT: usize = 4;
pub const MIN_FOCAL_DISTANCE: f64 = 65.0;

/// One rigid mirror panel in the heliostat frame (x right, y up, z normal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetSpec {
    pub width: f64,
    pub height: f64,
    pub center_offset: Vec3,
    pub canting_rotation: Mat3,
}

/// Facet centres for a 2x2 layout, ordered lower-left, lower-right,
/// upper-left, upper-right.
pub fn facet_layout(gap: f64) -> [Vec3; FACET_COUNT] {
    let dx = 0.5 * (FACET_WIDTH + gap);
    let dy = 0.5 * (FACET_HEIGHT + gap);
    [
        Vec3::new(-dx, -dy, 0.0),
        Vec3::new(dx, -dy, 0.0),
        Vec3::new(-dx, dy, 0.0),
        Vec3::new(dx, dy, 0.0),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeliostatSpec {
    pub id: String,
    pub position: Vec3,
    pub facets: [FacetSpec; FACET_COUNT],
    pub focal_distance: f64,
}

impl HeliostatSpec {
    /// Standard four-facet heliostat, canted on-axis at `focal_distance`.
    pub fn new(id: impl Into<String>, position: Vec3, focal_distance: f64) -> Result<Self> {
        Self::with_gap(id, position, focal_distance, FACET_GAP)
    }

    pub fn with_gap(
        id: impl Into<String>,
        position: Vec3,
        focal_distance: f64,
        gap: f64,
    ) -> Result<Self> {
        if !position.is_finite() {
            return Err(HelioError::invalid("heliostat position must be finite"));
        }
        if focal_distance.is_nan() || focal_distance < MIN_FOCAL_DISTANCE {
            return Err(HelioError::invalid(format!(
                "focal distance {focal_distance} below minimum {MIN_FOCAL_DISTANCE} m"
            )));
        }
        if !(gap >= 0.0 && gap.is_finite()) {
            return Err(HelioError::invalid("facet gap must be finite and >= 0"));
        }
        let facets = facet_layout(gap).map(|c| FacetSpec {
            width: FACET_WIDTH,
            height: FACET_HEIGHT,
            center_offset: c,
            canting_rotation: Mat3::IDENTITY,
        });
        Ok(cant_facets(HeliostatSpec {
            id: id.into(),
            position,
            facets,
            focal_distance,
        }))
    }

    pub fn distance_to(&self, p: Vec3) -> f64 {
        (self.position - p).norm()
    }

    pub fn total_area(&self) -> f64 {
        self.facets.iter().map(|f| f.width * f.height).sum()
    }
}

/// On-axis canting: every facet centre reflects light arriving along the
/// heliostat normal into the point `focal_distance` along that normal.
pub fn cant_facets(mut spec: HeliostatSpec) -> HeliostatSpec {
    let f = spec.focal_distance;
    for facet in spec.facets.iter_mut() {
        facet.canting_rotation = if f.is_finite() {
            let focus = Vec3::new(0.0, 0.0, f);
            let to_focus = (focus - facet.center_offset).normalized();
            let normal = (Vec3::UP + to_focus).normalized();
            Mat3::rotation_between(Vec3::UP, normal)
        } else {
            Mat3::IDENTITY
        };
    }
    spec
}

/// One record of the heliostat field file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldRecord {
    pub id: String,
    pub position_enu_m: [f64; 3],
    pub focal_distance_m: f64,
}

impl FieldRecord {
    pub fn to_spec(&self) -> Result<HeliostatSpec> {
        HeliostatSpec::new(
            self.id.clone(),
            Vec3::from(self.position_enu_m),
            self.focal_distance_m,
        )
    }
}

impl From<&HeliostatSpec> for FieldRecord {
    fn from(h: &HeliostatSpec) -> Self {
        FieldRecord {
            id: h.id.clone(),
            position_enu_m: h.position.to_array(),
            focal_distance_m: h.focal_distance,
        }
    }
}

pub fn read_field(path: &Path) -> Result<Vec<HeliostatSpec>> {
    let text = fs::read_to_string(path).map_err(|e| HelioError::io(path, e))?;
    let records: Vec<FieldRecord> = serde_json::from_str(&text)
        .map_err(|e| HelioError::json(format!("field file {}", path.display()), e))?;
    if records.is_empty() {
        return Err(HelioError::invalid("field file lists no heliostats"));
    }
    let mut ids = std::collections::BTreeSet::new();
    for r in &records {
        if !ids.insert(r.id.as_str()) {
            return Err(HelioError::invalid(format!("duplicate heliostat id {}", r.id)));
        }
    }
    records.iter().map(FieldRecord::to_spec).collect()
}

pub fn write_field(path: &Path, field: &[HeliostatSpec]) -> Result<()> {
    let records: Vec<FieldRecord> = field.iter().map(FieldRecord::from).collect();
    let text = serde_json::to_string_pretty(&records)
        .map_err(|e| HelioError::json("serializing field", e))?;
    fs::write(path, text + "\n").map_err(|e| HelioError::io(path, e))
}
