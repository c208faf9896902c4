//! Facet deviation surfaces: 8x8 z-control-point B-splines.
//!
//! Each facet carries a clamped uniform B-spline (all weights 1) over the unit
//! parameter square. Control values are millimetre deviations from the canted
//! facet plane; `control_z[i][j]` belongs to the i-th column along the facet's
//! width (u) and the j-th row along its height (v).

use serde::{Deserialize, Serialize};

use crate::error::{HelioError, Result};
use crate::geometry::{Vec3, FACET_COUNT};

pub const GRID: usize = 8;
pub const DEFAULT_DEGREE: usize = 3;
pub const MAX_ABS_Z_MM: f64 = 50.0;
const MAX_DEGREE: usize = GRID - 1;

pub type ControlGrid = [[f64; GRID]; GRID];

/// Clamped knot vector with uniform interior knots on `[0, 1]`.
pub fn clamped_uniform_knots(n_ctrl: usize, degree: usize) -> Vec<f64> {
    let spans = n_ctrl - degree;
    let mut knots = Vec::with_capacity(n_ctrl + degree + 1);
    knots.extend(std::iter::repeat_n(0.0, degree + 1));
    for k in 1..spans {
        knots.push(k as f64 / spans as f64);
    }
    knots.extend(std::iter::repeat_n(1.0, degree + 1));
    knots
}

fn validate_knots(knots: &[f64], degree: usize) -> Result<()> {
    if knots.len() != GRID + degree + 1 {
        return Err(HelioError::Knots(format!(
            "expected {} knots for degree {degree}, got {}",
            GRID + degree + 1,
            knots.len()
        )));
    }
    if knots.iter().any(|k| !k.is_finite()) {
        return Err(HelioError::Knots("non-finite knot".into()));
    }
    if knots.windows(2).any(|w| w[0] > w[1]) {
        return Err(HelioError::Knots("knots must be nondecreasing".into()));
    }
    let (first, last) = (knots[0], knots[knots.len() - 1]);
    if first != 0.0 || last != 1.0 {
        return Err(HelioError::Knots("knot vector must span [0, 1]".into()));
    }
    if knots[..=degree].iter().any(|&k| k != first) || knots[knots.len() - degree - 1..].iter().any(|&k| k != last) {
        return Err(HelioError::Knots(format!(
            "end knots must have multiplicity {}",
            degree + 1
        )));
    }
    Ok(())
}

/// Nonzero basis values and first derivatives at `t` (The NURBS Book A2.1/A2.3).
#[derive(Debug, Clone, Copy)]
struct Basis {
    span: usize,
    value: [f64; MAX_DEGREE + 1],
    deriv: [f64; MAX_DEGREE + 1],
}

fn find_span(knots: &[f64], degree: usize, t: f64) -> usize {
    let n = GRID - 1;
    if t >= knots[n + 1] {
        return n;
    }
    if t <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, n + 1);
    let mut mid = (lo + hi) / 2;
    while t < knots[mid] || t >= knots[mid + 1] {
        if t < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

fn basis(knots: &[f64], p: usize, t: f64) -> Basis {
    let span = find_span(knots, p, t);
    // ndu holds basis functions (upper triangle) and knot differences (lower)
    let mut ndu = [[0.0f64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
    let mut left = [0.0f64; MAX_DEGREE + 1];
    let mut right = [0.0f64; MAX_DEGREE + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut value = [0.0; MAX_DEGREE + 1];
    let mut deriv = [0.0; MAX_DEGREE + 1];
    for j in 0..=p {
        value[j] = ndu[j][p];
    }
    if p > 0 {
        for r in 0..=p {
            let mut d = 0.0;
            if r >= 1 {
                d += ndu[r - 1][p - 1] / ndu[p][r - 1];
            }
            if r < p {
                d -= ndu[r][p - 1] / ndu[p][r];
            }
            deriv[r] = d * p as f64;
        }
    }
    Basis { span, value, deriv }
}

/// Value and parametric derivatives of a facet surface at `(u, v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub z_mm: f64,
    pub dz_du: f64,
    pub dz_dv: f64,
}

impl SurfacePoint {
    /// Unit normal of the lifted surface `(x(u), y(v), z(u, v))` for a facet of
    /// the given metric size, with `x = (u - 1/2) * width` and z in metres.
    #[inline]
    pub fn normal(&self, width: f64, height: f64) -> Vec3 {
        facet_normal(self.dz_du, self.dz_dv, width, height)
    }
}

/// Normal from parametric z-derivatives (mm per unit parameter).
#[inline]
pub fn facet_normal(dz_du_mm: f64, dz_dv_mm: f64, width: f64, height: f64) -> Vec3 {
    let zu = dz_du_mm * 1e-3;
    let zv = dz_dv_mm * 1e-3;
    // (w, 0, zu) x (0, h, zv)
    Vec3::new(-height * zu, -width * zv, width * height).normalized()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFacetSurface", into = "RawFacetSurface")]
pub struct FacetSurface {
    control_z: ControlGrid,
    degree: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFacetSurface {
    control_z: ControlGrid,
    degree: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
}

impl TryFrom<RawFacetSurface> for FacetSurface {
    type Error = HelioError;
    fn try_from(raw: RawFacetSurface) -> Result<Self> {
        FacetSurface::with_knots(raw.control_z, raw.degree, raw.knots_u, raw.knots_v)
    }
}

impl From<FacetSurface> for RawFacetSurface {
    fn from(s: FacetSurface) -> Self {
        RawFacetSurface {
            control_z: s.control_z,
            degree: s.degree,
            knots_u: s.knots_u,
            knots_v: s.knots_v,
        }
    }
}

impl Default for FacetSurface {
    fn default() -> Self {
        FacetSurface::flat()
    }
}

impl FacetSurface {
    pub fn flat() -> Self {
        FacetSurface::from_control(ControlGrid::default())
    }

    /// Cubic clamped uniform surface. Values are not range-checked here;
    /// call [`FacetSurface::validate`] on untrusted input.
    pub fn from_control(control_z: ControlGrid) -> Self {
        let knots = clamped_uniform_knots(GRID, DEFAULT_DEGREE);
        FacetSurface {
            control_z,
            degree: DEFAULT_DEGREE,
            knots_u: knots.clone(),
            knots_v: knots,
        }
    }

    pub fn with_knots(
        control_z: ControlGrid,
        degree: usize,
        knots_u: Vec<f64>,
        knots_v: Vec<f64>,
    ) -> Result<Self> {
        if degree == 0 || degree > MAX_DEGREE {
            return Err(HelioError::Knots(format!("degree {degree} outside 1..={MAX_DEGREE}")));
        }
        validate_knots(&knots_u, degree)?;
        validate_knots(&knots_v, degree)?;
        let s = FacetSurface {
            control_z,
            degree,
            knots_u,
            knots_v,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.control_z {
            for &z in row {
                if !z.is_finite() || z.abs() > MAX_ABS_Z_MM {
                    return Err(HelioError::invalid(format!(
                        "control point {z} mm outside +/-{MAX_ABS_Z_MM} mm"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn control_z(&self) -> &ControlGrid {
        &self.control_z
    }

    pub fn control_z_mut(&mut self) -> &mut ControlGrid {
        &mut self.control_z
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots_u(&self) -> &[f64] {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &[f64] {
        &self.knots_v
    }

    /// Clamps control values into the sanity bound.
    pub fn clip(&mut self) {
        for row in self.control_z.iter_mut() {
            for z in row.iter_mut() {
                *z = z.clamp(-MAX_ABS_Z_MM, MAX_ABS_Z_MM);
            }
        }
    }

    /// Spline value and parametric derivatives. `u`, `v` are clamped to [0, 1].
    #[inline]
    pub fn eval(&self, u: f64, v: f64) -> SurfacePoint {
        let p = self.degree;
        let bu = basis(&self.knots_u, p, u.clamp(0.0, 1.0));
        let bv = basis(&self.knots_v, p, v.clamp(0.0, 1.0));
        let (mut z, mut zu, mut zv) = (0.0, 0.0, 0.0);
        for a in 0..=p {
            let row = &self.control_z[bu.span - p + a];
            let (mut s, mut sv) = (0.0, 0.0);
            for b in 0..=p {
                let c = row[bv.span - p + b];
                s += bv.value[b] * c;
                sv += bv.deriv[b] * c;
            }
            z += bu.value[a] * s;
            zu += bu.deriv[a] * s;
            zv += bu.value[a] * sv;
        }
        SurfacePoint {
            z_mm: z,
            dz_du: zu,
            dz_dv: zv,
        }
    }

    /// `(z in mm, unit normal)` for a facet of the given metric size.
    pub fn eval_with_normal(&self, u: f64, v: f64, width: f64, height: f64) -> (f64, Vec3) {
        let pt = self.eval(u, v);
        (pt.z_mm, pt.normal(width, height))
    }

    pub fn map_control(&self, f: impl Fn(f64) -> f64) -> FacetSurface {
        let mut out = self.clone();
        for row in out.control_z.iter_mut() {
            for z in row.iter_mut() {
                *z = f(*z);
            }
        }
        out
    }
}

/// The four facet surfaces of one heliostat, in facet-layout order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HeliostatSurface {
    pub facets: [FacetSurface; FACET_COUNT],
}

impl HeliostatSurface {
    pub fn flat() -> Self {
        HeliostatSurface::default()
    }

    pub fn from_controls(grids: [ControlGrid; FACET_COUNT]) -> Self {
        HeliostatSurface {
            facets: grids.map(FacetSurface::from_control),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.facets.iter().try_for_each(FacetSurface::validate)
    }

    /// All 256 control values, facet-major then `[i][j]` row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FACET_COUNT * GRID * GRID);
        for f in &self.facets {
            for row in f.control_z() {
                out.extend_from_slice(row);
            }
        }
        out
    }

    /// Inverse of [`HeliostatSurface::flatten`] for cubic uniform facets.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != FACET_COUNT * GRID * GRID {
            return Err(HelioError::Shape(format!(
                "expected {} control values, got {}",
                FACET_COUNT * GRID * GRID,
                values.len()
            )));
        }
        let mut grids = [ControlGrid::default(); FACET_COUNT];
        for (k, g) in grids.iter_mut().enumerate() {
            for (i, row) in g.iter_mut().enumerate() {
                let start = (k * GRID + i) * GRID;
                row.copy_from_slice(&values[start..start + GRID]);
            }
        }
        Ok(HeliostatSurface::from_controls(grids))
    }

    /// The 2x2 facet arrangement as one 16x16 map, `map[row][col]` with row
    /// along facet height (v) and col along width (u), bottom row first.
    pub fn to_map(&self) -> Vec<f64> {
        let side = 2 * GRID;
        let mut map = vec![0.0; side * side];
        for (k, f) in self.facets.iter().enumerate() {
            let (r0, c0) = ((k / 2) * GRID, (k % 2) * GRID);
            for i in 0..GRID {
                for j in 0..GRID {
                    map[(r0 + j) * side + c0 + i] = f.control_z()[i][j];
                }
            }
        }
        map
    }

    /// Inverse of [`HeliostatSurface::to_map`].
    pub fn from_map(map: &[f64]) -> Result<Self> {
        let side = 2 * GRID;
        if map.len() != side * side {
            return Err(HelioError::Shape(format!(
                "expected a {side}x{side} map, got {} values",
                map.len()
            )));
        }
        let mut grids = [ControlGrid::default(); FACET_COUNT];
        for (k, g) in grids.iter_mut().enumerate() {
            let (r0, c0) = ((k / 2) * GRID, (k % 2) * GRID);
            for i in 0..GRID {
                for j in 0..GRID {
                    g[i][j] = map[(r0 + j) * side + c0 + i];
                }
            }
        }
        Ok(HeliostatSurface::from_controls(grids))
    }
}
