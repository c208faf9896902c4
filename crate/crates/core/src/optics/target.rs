//! Surfaces that collect reflected rays: flat Lambertian calibration targets
//! and the tilted cylindrical receiver.

use serde::{Deserialize, Serialize};

use crate::error::{HelioError, Result};
use crate::geometry::Vec3;

pub const MIN_RESOLUTION: usize = 16;

/// Anything rays can be binned on.
pub trait FluxTarget: Send + Sync {
    /// `(width, height)` in pixels.
    fn resolution(&self) -> (usize, usize);

    /// Pixel `(col, row)` hit by a ray, row 0 at the top.
    fn pixel(&self, origin: Vec3, dir: Vec3) -> Option<(usize, usize)>;

    /// World point at normalized surface coordinates `(s, t)` in `[0, 1]^2`,
    /// `s` increasing toward east and `t` upward.
    fn point_at(&self, s: f64, t: f64) -> Vec3;

    fn center(&self) -> Vec3 {
        self.point_at(0.5, 0.5)
    }

    fn geometry(&self) -> TargetGeometry;
}

#[inline]
fn to_pixel(s: f64, t: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return None;
    }
    let col = ((s * w as f64) as usize).min(w - 1);
    let row = (((1.0 - t) * h as f64) as usize).min(h - 1);
    Some((col, row))
}

/// Flat rectangular target. `normal` faces the field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetPlane {
    pub center: Vec3,
    pub normal: Vec3,
    pub up: Vec3,
    pub width: f64,
    pub height: f64,
    pub resolution: [usize; 2],
}

impl TargetPlane {
    pub const DEFAULT_SIZE_M: f64 = 8.0;
    pub const DEFAULT_RESOLUTION: usize = 64;

    /// North-facing 8 m x 8 m tower target centred at the given height.
    pub fn lambertian(center_height: f64) -> Self {
        TargetPlane {
            center: Vec3::new(0.0, 0.0, center_height),
            normal: Vec3::NORTH,
            up: Vec3::UP,
            width: Self::DEFAULT_SIZE_M,
            height: Self::DEFAULT_SIZE_M,
            resolution: [Self::DEFAULT_RESOLUTION; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.normal.norm() - 1.0).abs() > 1e-9 || (self.up.norm() - 1.0).abs() > 1e-9 {
            return Err(HelioError::invalid("target normal and up must be unit vectors"));
        }
        if self.normal.dot(self.up).abs() > 1e-9 {
            return Err(HelioError::invalid("target up must be perpendicular to its normal"));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(HelioError::invalid("target size must be positive"));
        }
        if self.resolution.iter().any(|&r| r < MIN_RESOLUTION) {
            return Err(HelioError::invalid(format!(
                "target resolution must be at least {MIN_RESOLUTION} pixels per side"
            )));
        }
        Ok(())
    }

    /// Horizontal in-plane axis (east for a north-facing target).
    pub fn right(&self) -> Vec3 {
        self.normal.cross(self.up)
    }

    /// In-plane coordinates `(x, y)` in metres relative to the centre.
    pub fn local(&self, p: Vec3) -> (f64, f64) {
        let q = p - self.center;
        (q.dot(self.right()), q.dot(self.up))
    }

    /// Ray parameter of the front-face hit, if any.
    #[inline]
    pub fn hit_distance(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let denom = dir.dot(self.normal);
        if denom >= 0.0 {
            return None;
        }
        let t = (self.center - origin).dot(self.normal) / denom;
        (t > 0.0).then_some(t)
    }
}

impl FluxTarget for TargetPlane {
    fn resolution(&self) -> (usize, usize) {
        (self.resolution[0], self.resolution[1])
    }

    #[inline]
    fn pixel(&self, origin: Vec3, dir: Vec3) -> Option<(usize, usize)> {
        let t = self.hit_distance(origin, dir)?;
        let (x, y) = self.local(origin + dir * t);
        to_pixel(x / self.width + 0.5, y / self.height + 0.5, self.resolution[0], self.resolution[1])
    }

    fn point_at(&self, s: f64, t: f64) -> Vec3 {
        self.center + self.right() * ((s - 0.5) * self.width) + self.up * ((t - 0.5) * self.height)
    }

    fn geometry(&self) -> TargetGeometry {
        TargetGeometry::Plane(*self)
    }
}

/// Cylindrical receiver section on the tower, concave side toward the
/// (northern) field, its facing direction tilted toward the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvedReceiver {
    /// Height of the arc midpoint above the tower base.
    pub apex_height: f64,
    pub radius: f64,
    pub opening_angle: f64,
    pub tilt: f64,
    pub height_extent: f64,
    pub resolution: [usize; 2],
}

impl Default for CurvedReceiver {
    fn default() -> Self {
        CurvedReceiver {
            apex_height: 55.0,
            radius: 4.14,
            opening_angle: 60.0,
            tilt: 25.0,
            height_extent: 5.0,
            resolution: [64, 64],
        }
    }
}

/// Receiver hit in normalized surface coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverHit {
    pub arc: f64,
    pub height: f64,
}

impl CurvedReceiver {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(HelioError::invalid("receiver radius must be positive"));
        }
        if !(self.opening_angle > 0.0 && self.opening_angle < 180.0) {
            return Err(HelioError::invalid("receiver opening angle must lie in (0, 180) degrees"));
        }
        if !(self.height_extent > 0.0) || !self.tilt.is_finite() || !self.apex_height.is_finite() {
            return Err(HelioError::invalid("receiver extent must be positive and finite"));
        }
        if self.resolution.iter().any(|&r| r < MIN_RESOLUTION) {
            return Err(HelioError::invalid(format!(
                "receiver resolution must be at least {MIN_RESOLUTION} pixels per side"
            )));
        }
        Ok(())
    }

    pub fn apex(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.apex_height)
    }

    /// Unit vector from the arc midpoint toward the centre of curvature.
    pub fn facing(&self) -> Vec3 {
        let t = self.tilt.to_radians();
        Vec3::new(0.0, t.cos(), -t.sin())
    }

    /// Cylinder axis direction.
    pub fn axis(&self) -> Vec3 {
        let t = self.tilt.to_radians();
        Vec3::new(0.0, t.sin(), t.cos())
    }

    pub fn axis_point(&self) -> Vec3 {
        self.apex() + self.facing() * self.radius
    }

    /// Surface point at arc angle `alpha` (radians, 0 at the apex, positive
    /// toward east) and axial offset `h` metres.
    pub fn surface_point(&self, alpha: f64, h: f64) -> Vec3 {
        let (s, c) = alpha.sin_cos();
        self.axis_point() + (Vec3::EAST * s - self.facing() * c) * self.radius + self.axis() * h
    }

    /// Nearest hit on the concave face within the angular and axial extent.
    /// Rays parallel to the axis and tangent rays miss.
    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<ReceiverHit> {
        let (n, e, a) = (self.facing(), Vec3::EAST, self.axis());
        let o = origin - self.axis_point();
        let (on, oe) = (o.dot(n), o.dot(e));
        let (dn, de) = (dir.dot(n), dir.dot(e));
        let qa = dn * dn + de * de;
        if qa < 1e-18 {
            return None;
        }
        let qb = 2.0 * (on * dn + oe * de);
        let qc = on * on + oe * oe - self.radius * self.radius;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let half_open = 0.5 * self.opening_angle.to_radians();
        for t in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
            if t <= 1e-9 {
                continue;
            }
            let (rn, re) = (on + t * dn, oe + t * de);
            // concave face only: the ray must travel outward at the hit
            if rn * dn + re * de <= 0.0 {
                continue;
            }
            let alpha = re.atan2(-rn);
            let h = (o + dir * t).dot(a);
            if alpha.abs() <= half_open && h.abs() <= 0.5 * self.height_extent {
                return Some(ReceiverHit {
                    arc: (alpha + half_open) / (2.0 * half_open),
                    height: h / self.height_extent + 0.5,
                });
            }
        }
        None
    }
}

impl FluxTarget for CurvedReceiver {
    fn resolution(&self) -> (usize, usize) {
        (self.resolution[0], self.resolution[1])
    }

    fn pixel(&self, origin: Vec3, dir: Vec3) -> Option<(usize, usize)> {
        let hit = self.intersect(origin, dir)?;
        to_pixel(hit.arc, hit.height, self.resolution[0], self.resolution[1])
    }

    fn point_at(&self, s: f64, t: f64) -> Vec3 {
        let half_open = 0.5 * self.opening_angle.to_radians();
        self.surface_point((2.0 * s - 1.0) * half_open, (t - 0.5) * self.height_extent)
    }

    fn geometry(&self) -> TargetGeometry {
        TargetGeometry::Receiver(*self)
    }
}

/// Serializable description of any supported target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetGeometry {
    Plane(TargetPlane),
    Receiver(CurvedReceiver),
}

impl TargetGeometry {
    pub fn as_target(&self) -> &dyn FluxTarget {
        match self {
            TargetGeometry::Plane(p) => p,
            TargetGeometry::Receiver(r) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TargetGeometry::Plane(p) => p.validate(),
            TargetGeometry::Receiver(r) => r.validate(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_pixel_mapping() {
        let t = TargetPlane::lambertian(40.0);
        assert!(t.validate().is_ok());
        let origin = Vec3::new(0.0, 100.0, 40.0);
        let dir = Vec3::new(0.0, -1.0, 0.0);
        assert_eq!(t.pixel(origin, dir), Some((32, 32)));
        // hit from behind is ignored
        assert_eq!(t.pixel(Vec3::new(0.0, -10.0, 40.0), -dir), None);
        // right() points east for a north-facing target
        assert!((t.right() - Vec3::EAST).norm() < 1e-15);
        let p = t.point_at(0.0, 1.0);
        assert!((p - Vec3::new(-4.0, 0.0, 44.0)).norm() < 1e-12);
        assert_eq!(t.pixel(p + Vec3::new(0.01, 5.0, -0.01), dir), Some((0, 0)));
    }

    #[test]
    fn plane_rejects_bad_geometry() {
        let mut t = TargetPlane::lambertian(40.0);
        t.up = Vec3::NORTH;
        assert!(t.validate().is_err());
        let mut t = TargetPlane::lambertian(40.0);
        t.resolution = [8, 64];
        assert!(t.validate().is_err());
    }

    #[test]
    fn ray_along_axis_misses() {
        let r = CurvedReceiver::default();
        let o = r.axis_point() - r.axis() * 10.0;
        assert!(r.intersect(o, r.axis()).is_none());
    }

    #[test]
    fn untilted_ray_through_axis_hits_arc_centre() {
        let r = CurvedReceiver {
            tilt: 0.0,
            ..CurvedReceiver::default()
        };
        let axis_pt = r.axis_point();
        // from the field (north), horizontal, through the axis, heading south
        let o = axis_pt + Vec3::new(0.0, 50.0, 0.0);
        let hit = r.intersect(o, Vec3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((hit.arc - 0.5).abs() < 1e-12);
        assert!((hit.height - 0.5).abs() < 1e-12);
        // independent quadratic oracle: |o + t d - c|^2 = R^2 in the xy plane
        let t = 50.0 + r.radius;
        assert!(((o + Vec3::new(0.0, -t, 0.0)) - r.apex()).norm() < 1e-12);
    }

    #[test]
    fn tangent_ray_misses() {
        let r = CurvedReceiver {
            tilt: 0.0,
            ..CurvedReceiver::default()
        };
        let c = r.axis_point();
        // horizontal line grazing the cylinder at the apex
        let o = c + Vec3::new(-20.0, -r.radius, 0.0);
        assert!(r.intersect(o, Vec3::EAST).is_none());
    }

    #[test]
    fn ray_outside_arc_extent_misses() {
        let r = CurvedReceiver {
            tilt: 0.0,
            ..CurvedReceiver::default()
        };
        let c = r.axis_point();
        // through the axis toward the east wall at 90 degrees off the apex
        assert!(r.intersect(c - Vec3::EAST * 20.0, Vec3::EAST).is_none());
    }

    #[test]
    fn point_at_round_trips_through_intersect() {
        let r = CurvedReceiver::default();
        let field = Vec3::new(10.0, 150.0, 2.0);
        for (s, t) in [(0.5, 0.5), (0.2, 0.3), (0.8, 0.9)] {
            let p = r.point_at(s, t);
            let hit = r.intersect(field, (p - field).normalized()).unwrap();
            assert!((hit.arc - s).abs() < 1e-9);
            assert!((hit.height - t).abs() < 1e-9);
        }
        assert!((r.point_at(0.5, 0.5) - r.apex()).norm() < 1e-12);
    }
}
