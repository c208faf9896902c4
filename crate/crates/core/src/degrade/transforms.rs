//! Deterministic image operations behind the randomized transforms. Every
//! function returns a re-normalized grid of the input size.

use crate::optics::Grid;

fn renormalized(mut g: Grid) -> Grid {
    g.normalize_max();
    g
}

/// Saturates at `t` and rescales so the peak is 1 again.
pub fn clamp_at(grid: &Grid, t: f64) -> Grid {
    let mut out = grid.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.min(t));
    renormalized(out)
}

/// Adds the given per-pixel noise values.
pub fn add_background(grid: &Grid, noise: &[f64]) -> Grid {
    let mut out = grid.clone();
    out.data_mut().iter_mut().zip(noise).for_each(|(v, n)| *v += n);
    renormalized(out)
}

pub fn contrast_at(grid: &Grid, gamma: f64) -> Grid {
    if gamma == 1.0 {
        return renormalized(grid.clone());
    }
    let mut out = grid.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.powf(gamma));
    renormalized(out)
}

/// Edges removed by a crop: top, bottom, left, right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CropEdges {
    pub top: bool,
    pub bottom: bool,
    pub left: bool,
    pub right: bool,
}

impl CropEdges {
    /// Edge subset from the low four bits of `mask`.
    pub fn from_mask(mask: u8) -> Self {
        CropEdges {
            top: mask & 1 != 0,
            bottom: mask & 2 != 0,
            left: mask & 4 != 0,
            right: mask & 8 != 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.top || self.bottom || self.left || self.right)
    }
}

/// Removes one pixel line per chosen edge and stretches the remainder back to
/// the original size with bilinear resampling.
pub fn crop_at(grid: &Grid, edges: CropEdges) -> Grid {
    let (w, h) = (grid.width(), grid.height());
    if edges.is_empty() || w < 3 || h < 3 {
        return renormalized(grid.clone());
    }
    let c0 = edges.left as usize as f64;
    let c1 = (w - 1 - edges.right as usize) as f64;
    let r0 = edges.top as usize as f64;
    let r1 = (h - 1 - edges.bottom as usize) as f64;
    let sx = (c1 - c0) / (w - 1) as f64;
    let sy = (r1 - r0) / (h - 1) as f64;
    let out = Grid::from_fn(w, h, |c, r| {
        // clamp guards the last sample against rounding past the kept range
        let x = (c0 + c as f64 * sx).min(c1);
        let y = (r0 + r as f64 * sy).min(r1);
        sample_inside(grid, x, y)
    });
    renormalized(out)
}

/// Bilinear sample for coordinates known to lie inside the grid.
fn sample_inside(grid: &Grid, x: f64, y: f64) -> f64 {
    let (w, h) = (grid.width(), grid.height());
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = grid.get(x0, y0) * (1.0 - fx) + grid.get(x1, y0) * fx;
    let bottom = grid.get(x0, y1) * (1.0 - fx) + grid.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Smooth displacement field: bilinear polynomial in normalized coordinates
/// with coefficients `[a0, ax, ay, axy]` per axis, scaled so that
/// `|d| <= amp` everywhere.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub amp: f64,
    pub dx: [f64; 4],
    pub dy: [f64; 4],
}

impl Displacement {
    fn eval(coef: &[f64; 4], amp: f64, x: f64, y: f64) -> f64 {
        let l1: f64 = coef.iter().map(|c| c.abs()).sum();
        if l1 == 0.0 || amp == 0.0 {
            return 0.0;
        }
        let v = coef[0] + coef[1] * x + coef[2] * y + coef[3] * x * y;
        amp * v / l1.max(1.0)
    }

    /// Displacement in pixels at pixel `(c, r)` of a `w x h` grid.
    pub fn at(&self, c: usize, r: usize, w: usize, h: usize) -> (f64, f64) {
        let x = 2.0 * c as f64 / (w.max(2) - 1) as f64 - 1.0;
        let y = 2.0 * r as f64 / (h.max(2) - 1) as f64 - 1.0;
        (Self::eval(&self.dx, self.amp, x, y), Self::eval(&self.dy, self.amp, x, y))
    }
}

/// Backward bilinear warp, zero outside the grid. Not re-normalized.
pub fn warp(grid: &Grid, field: &Displacement) -> Grid {
    let (w, h) = (grid.width(), grid.height());
    Grid::from_fn(w, h, |c, r| {
        let (dx, dy) = field.at(c, r, w, h);
        grid.sample_bilinear(c as f64 + dx, r as f64 + dy)
    })
}

pub fn deform_at(grid: &Grid, field: &Displacement) -> Grid {
    if field.amp == 0.0 {
        return renormalized(grid.clone());
    }
    renormalized(warp(grid, field))
}

/// Triangle weights `k - |d|` for `|d| < k`, normalized to unit sum.
pub fn triangle_kernel(k: usize) -> Vec<f64> {
    let k = k.max(1) as i64;
    let raw: Vec<f64> = (-(k - 1)..k).map(|d| (k - d.abs()) as f64).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable triangular blur with zero padding.
pub fn smooth_at(grid: &Grid, kernel_px: usize) -> Grid {
    if kernel_px <= 1 {
        return renormalized(grid.clone());
    }
    let kern = triangle_kernel(kernel_px);
    let half = (kern.len() / 2) as i64;
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let pass = |src: &Grid, horizontal: bool| {
        Grid::from_fn(w as usize, h as usize, |c, r| {
            let mut acc = 0.0;
            for (k, wt) in kern.iter().enumerate() {
                let d = k as i64 - half;
                let (cc, rr) = if horizontal { (c as i64 + d, r as i64) } else { (c as i64, r as i64 + d) };
                if cc >= 0 && rr >= 0 && cc < w && rr < h {
                    acc += wt * src.get(cc as usize, rr as usize);
                }
            }
            acc
        })
    };
    renormalized(pass(&pass(grid, true), false))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: usize, h: usize, cx: f64, cy: f64, s: f64) -> Grid {
        renormalized(Grid::from_fn(w, h, |c, r| {
            (-((c as f64 - cx).powi(2) + (r as f64 - cy).powi(2)) / (2.0 * s * s)).exp()
        }))
    }

    fn max_diff(a: &Grid, b: &Grid) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn clamp_examples() {
        let g = Grid::from_vec(2, 1, vec![1.0, 0.5]).unwrap();
        assert_eq!(clamp_at(&g, 1.0), g);
        let c = clamp_at(&g, 0.9);
        assert_eq!(c.data()[0], 1.0);
        assert!((c.data()[1] - 0.5 / 0.9).abs() < 1e-15);
        assert!((c.data()[1] - 0.5556).abs() < 1e-4);
        let flat = Grid::from_vec(3, 1, vec![1.0; 3]).unwrap();
        assert_eq!(clamp_at(&flat, 0.9), flat);
    }

    #[test]
    fn contrast_power_law() {
        let g = Grid::from_vec(3, 1, vec![1.0, 0.25, 0.5]).unwrap();
        assert_eq!(contrast_at(&g, 1.0), g);
        let c = contrast_at(&g, 2.0);
        assert_eq!(c.data(), &[1.0, 0.0625, 0.25]);
    }

    #[test]
    fn crop_keeps_constants_and_shape() {
        let g = Grid::from_vec(16, 16, vec![1.0; 256]).unwrap();
        for mask in 1..16u8 {
            let c = crop_at(&g, CropEdges::from_mask(mask));
            assert_eq!((c.width(), c.height()), (16, 16));
            assert!(max_diff(&c, &g) < 1e-12);
        }
    }

    #[test]
    fn crop_shifts_centroid_at_most_one_pixel() {
        let g = blob(64, 64, 31.5, 31.5, 5.0);
        let (cx, cy) = g.centroid().unwrap();
        for mask in 1..16u8 {
            let (x, y) = crop_at(&g, CropEdges::from_mask(mask)).centroid().unwrap();
            assert!((x - cx).abs() <= 1.0 && (y - cy).abs() <= 1.0, "mask {mask}");
        }
    }

    #[test]
    fn zero_amplitude_deform_is_identity() {
        let g = blob(32, 32, 12.0, 20.0, 3.0);
        let d = Displacement {
            amp: 0.0,
            dx: [0.3, -0.2, 0.5, 0.1],
            dy: [0.1; 4],
        };
        assert_eq!(deform_at(&g, &d), g);
    }

    #[test]
    fn displacement_is_bounded() {
        let d = Displacement {
            amp: 0.5,
            dx: [0.9, -0.8, 0.7, 0.6],
            dy: [-1.0, 0.2, 0.0, 0.3],
        };
        for c in 0..64 {
            for r in 0..64 {
                let (x, y) = d.at(c, r, 64, 64);
                assert!(x.abs() <= 0.5 + 1e-12 && y.abs() <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn deform_roughly_preserves_mass() {
        let g = blob(64, 64, 30.0, 33.0, 6.0);
        let d = Displacement {
            amp: 0.5,
            dx: [0.2, -0.5, 0.3, 0.4],
            dy: [-0.3, 0.2, 0.6, -0.1],
        };
        let moved = warp(&g, &d);
        assert!((moved.sum() / g.sum() - 1.0).abs() < 0.05);
        assert!(deform_at(&g, &d).is_valid_normalized());
    }

    #[test]
    fn smoothing_spreads_delta_with_triangle_weights() {
        assert_eq!(triangle_kernel(1), vec![1.0]);
        assert_eq!(triangle_kernel(2), vec![0.25, 0.5, 0.25]);
        let mut g = Grid::zeros(9, 9);
        g.set(4, 4, 1.0);
        assert_eq!(smooth_at(&g, 1), g);
        let s = smooth_at(&g, 2);
        assert_eq!(s.get(4, 4), 1.0);
        assert_eq!(s.get(3, 4), 0.5);
        assert_eq!(s.get(4, 5), 0.5);
        assert_eq!(s.get(3, 3), 0.25);
        assert_eq!(s.get(2, 4), 0.0);
        let s3 = smooth_at(&g, 3);
        // 1D weights (1,2,3,2,1)/9, outer product rescaled by the centre 9/81
        assert!((s3.get(2, 4) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s3.get(2, 2) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn smoothing_increases_spread() {
        let g = blob(32, 32, 15.0, 16.0, 2.0);
        let var = |g: &Grid| {
            let (cx, _) = g.centroid().unwrap();
            let mut acc = 0.0;
            for r in 0..g.height() {
                for c in 0..g.width() {
                    acc += g.get(c, r) * (c as f64 - cx).powi(2);
                }
            }
            acc / g.sum()
        };
        assert!(var(&smooth_at(&g, 2)) > var(&g));
    }
}
