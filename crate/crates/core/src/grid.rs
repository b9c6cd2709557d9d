// SPDX-License-Identifier: Apache-2.0

//! Periodic uniform grids and the one-dimensional cubic B-spline weights.
//!
//! A position is mapped to the lower-bound grid index `i0` and a fractional
//! offset `t` per axis. The four stencil points `{i0-1, i0, i0+1, i0+2}` are
//! weighted by the uniform cubic B-spline basis evaluated at `t`; the value,
//! first and second derivative weights are computed together so that every
//! kernel shares one set of prefactors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest grid count per axis: the 4-point stencil must fit.
pub const MIN_GRID_COUNT: usize = 4;

/// A periodic 3D grid with uniform spacing per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub periodic: bool,
}

impl GridSpec {
    /// Grid with the given counts and spacing `1.0` on every axis.
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        Self::with_spacing([nx, ny, nz], [1.0; 3])
    }

    pub fn cubic(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn with_spacing(counts: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let grid = GridSpec {
            nx: counts[0],
            ny: counts[1],
            nz: counts[2],
            dx: spacing[0],
            dy: spacing[1],
            dz: spacing[2],
            periodic: true,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, &n) in ["x", "y", "z"].iter().zip(&self.counts()) {
            if n < MIN_GRID_COUNT {
                return Err(Error::Construction(format!(
                    "grid count along {axis} is {n}; at least {MIN_GRID_COUNT} points are required"
                )));
            }
        }
        for (axis, &d) in ["x", "y", "z"].iter().zip(&self.spacing()) {
            if !(d.is_finite() && d > 0.0) {
                return Err(Error::Construction(format!(
                    "grid spacing along {axis} must be positive and finite, got {d}"
                )));
            }
        }
        if !self.periodic {
            return Err(Error::Construction(
                "only periodic grids are supported".to_string(),
            ));
        }
        Ok(())
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub fn spacing(&self) -> [f64; 3] {
        [self.dx, self.dy, self.dz]
    }

    /// Number of grid points, `N_g = nx * ny * nz`.
    pub fn num_points(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    /// Periodic domain length per axis.
    pub fn lengths(&self) -> [f64; 3] {
        [
            self.nx as f64 * self.dx,
            self.ny as f64 * self.dy,
            self.nz as f64 * self.dz,
        ]
    }

    /// Flat index of grid point `(i, j, k)` in `[nx][ny][nz]` order.
    #[inline]
    pub fn point_index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.ny + j) * self.nz + k
    }
}

/// Lower-bound grid indices and fractional offsets of a position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub i0: usize,
    pub j0: usize,
    pub k0: usize,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl GridPoint {
    pub fn lower(&self) -> [usize; 3] {
        [self.i0, self.j0, self.k0]
    }

    pub fn offsets(&self) -> [f64; 3] {
        [self.tx, self.ty, self.tz]
    }

    /// The four wrapped stencil indices along `axis`.
    pub fn stencil(&self, axis: usize, grid: &GridSpec) -> [usize; 4] {
        stencil(self.lower()[axis], grid.counts()[axis])
    }
}

/// Wrapped stencil `{i0-1, i0, i0+1, i0+2}` modulo `count`.
#[inline]
pub fn stencil(i0: usize, count: usize) -> [usize; 4] {
    [
        (i0 + count - 1) % count,
        i0,
        (i0 + 1) % count,
        (i0 + 2) % count,
    ]
}

/// Reduces one coordinate into `(index, fraction)`.
fn locate(x: f64, spacing: f64, count: usize) -> (usize, f64) {
    let n = count as f64;
    let mut raw = (x / spacing).rem_euclid(n);
    // rem_euclid can round up to exactly `n` for tiny negative inputs
    if raw >= n {
        raw = 0.0;
    }
    let cell = raw.floor();
    let t = raw - cell;
    let index = cell as usize;
    if index >= count {
        (0, 0.0)
    } else {
        (index, t)
    }
}

/// Maps a position onto the periodic grid.
pub fn map_to_grid(pos: [f64; 3], grid: &GridSpec) -> Result<GridPoint> {
    if pos.iter().any(|c| !c.is_finite()) {
        return Err(Error::InputDomain(format!(
            "position {pos:?} has a non-finite component"
        )));
    }
    let (i0, tx) = locate(pos[0], grid.dx, grid.nx);
    let (j0, ty) = locate(pos[1], grid.dy, grid.ny);
    let (k0, tz) = locate(pos[2], grid.dz, grid.nz);
    Ok(GridPoint {
        i0,
        j0,
        k0,
        tx,
        ty,
        tz,
    })
}

/// Value, first- and second-derivative weights for one axis.
///
/// Derivative weights are already divided by the grid spacing (`da` by `Δ`,
/// `d2a` by `Δ²`), so they yield derivatives in position units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BasisWeights {
    pub a: [f32; 4],
    pub da: [f32; 4],
    pub d2a: [f32; 4],
}

/// Uniform cubic B-spline weights at fractional offset `t`.
pub fn basis_weights(t: f64, spacing: f64) -> Result<BasisWeights> {
    if !(0.0..1.0).contains(&t) {
        return Err(Error::InputDomain(format!(
            "fractional offset {t} is outside [0, 1)"
        )));
    }
    if !(spacing.is_finite() && spacing > 0.0) {
        return Err(Error::InputDomain(format!(
            "grid spacing must be positive, got {spacing}"
        )));
    }
    Ok(weights_unchecked(t as f32, spacing as f32))
}

#[inline]
fn weights_unchecked(t: f32, spacing: f32) -> BasisWeights {
    const SIXTH: f32 = 1.0 / 6.0;
    let t2 = t * t;
    let t3 = t2 * t;
    let s = 1.0 - t;
    let a = [
        s * s * s * SIXTH,
        (3.0 * t3 - 6.0 * t2 + 4.0) * SIXTH,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) * SIXTH,
        t3 * SIXTH,
    ];
    let inv = 1.0 / spacing;
    let da = [
        -0.5 * s * s * inv,
        (1.5 * t2 - 2.0 * t) * inv,
        (-1.5 * t2 + t + 0.5) * inv,
        0.5 * t2 * inv,
    ];
    let inv2 = inv * inv;
    let d2a = [
        s * inv2,
        (3.0 * t - 2.0) * inv2,
        (1.0 - 3.0 * t) * inv2,
        t * inv2,
    ];
    BasisWeights { a, da, d2a }
}

/// Grid point plus the per-axis weights: everything a kernel needs that does
/// not depend on the number of splines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prefactors {
    pub point: GridPoint,
    pub weights: [BasisWeights; 3],
}

pub fn compute_prefactors(pos: [f64; 3], grid: &GridSpec) -> Result<Prefactors> {
    let point = map_to_grid(pos, grid)?;
    let spacing = grid.spacing();
    let offsets = point.offsets();
    let weights =
        [0, 1, 2].map(|axis| weights_unchecked(offsets[axis] as f32, spacing[axis] as f32));
    Ok(Prefactors { point, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid48() -> GridSpec {
        GridSpec::cubic(48).unwrap()
    }

    #[test]
    fn map_interior_point() {
        let p = map_to_grid([2.7, 0.0, 0.0], &grid48()).unwrap();
        assert_eq!(p.i0, 2);
        assert!((p.tx - 0.7).abs() < 1e-12);
        assert_eq!(p.stencil(0, &grid48()), [1, 2, 3, 4]);
    }

    #[test]
    fn map_wraps_upper_stencil() {
        let p = map_to_grid([47.5, 0.0, 0.0], &grid48()).unwrap();
        assert_eq!(p.i0, 47);
        assert_eq!(p.tx, 0.5);
        assert_eq!(p.stencil(0, &grid48()), [46, 47, 0, 1]);
    }

    #[test]
    fn map_wraps_negative_positions() {
        let p = map_to_grid([-0.25, 0.0, 0.0], &grid48()).unwrap();
        assert_eq!(p.i0, 47);
        assert_eq!(p.tx, 0.75);
    }

    #[test]
    fn map_ties_go_to_lower_cell() {
        let p = map_to_grid([3.0, 48.0, -48.0], &grid48()).unwrap();
        assert_eq!((p.i0, p.tx), (3, 0.0));
        assert_eq!((p.j0, p.ty), (0, 0.0));
        assert_eq!((p.k0, p.tz), (0, 0.0));
    }

    #[test]
    fn map_tiny_negative_stays_in_range() {
        let p = map_to_grid([-1e-300, -1e-17, 0.0], &grid48()).unwrap();
        assert!(p.i0 < 48 && p.j0 < 48);
        assert!(p.tx < 1.0 && p.ty < 1.0);
    }

    #[test]
    fn map_rejects_non_finite() {
        for bad in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            let err = map_to_grid([0.0, bad, 0.0], &grid48()).unwrap_err();
            assert!(matches!(err, Error::InputDomain(_)));
        }
    }

    #[test]
    fn map_respects_spacing() {
        let g = GridSpec::with_spacing([10, 10, 10], [0.5, 0.25, 2.0]).unwrap();
        let p = map_to_grid([1.2, 1.2, 1.2], &g).unwrap();
        assert_eq!(p.i0, 2);
        assert!((p.tx - 0.4).abs() < 1e-12);
        assert_eq!(p.j0, 4);
        assert!((p.ty - 0.8).abs() < 1e-12);
        assert_eq!(p.k0, 0);
        assert!((p.tz - 0.6).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_small_counts_and_bad_spacing() {
        assert!(matches!(
            GridSpec::new(3, 8, 8),
            Err(Error::Construction(_))
        ));
        assert!(matches!(
            GridSpec::new(0, 8, 8),
            Err(Error::Construction(_))
        ));
        assert!(GridSpec::with_spacing([8, 8, 8], [1.0, 0.0, 1.0]).is_err());
        assert!(GridSpec::with_spacing([8, 8, 8], [1.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn weights_at_zero() {
        let w = basis_weights(0.0, 1.0).unwrap();
        let expect = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 0.0];
        for (got, want) in w.a.iter().zip(expect) {
            assert!((got - want).abs() < 1e-7, "{:?}", w.a);
        }
        let dexpect = [-0.5, 0.0, 0.5, 0.0];
        for (got, want) in w.da.iter().zip(dexpect) {
            assert!((got - want).abs() < 1e-7, "{:?}", w.da);
        }
        assert!(w.da.iter().sum::<f32>().abs() < 1e-7);
    }

    #[test]
    fn weights_at_half() {
        // (1/2)^3/6 = 1/48, (3/8 - 3/2 + 4)/6 = 23/48
        let w = basis_weights(0.5, 1.0).unwrap();
        let expect = [1.0 / 48.0, 23.0 / 48.0, 23.0 / 48.0, 1.0 / 48.0];
        for (got, want) in w.a.iter().zip(expect) {
            assert!((*got as f64 - want).abs() < 1e-7);
        }
        assert!((w.a.iter().sum::<f32>() - 1.0).abs() < 2e-6);
    }

    #[test]
    fn weights_scale_with_spacing() {
        let unit = basis_weights(0.3, 1.0).unwrap();
        let half = basis_weights(0.3, 0.5).unwrap();
        assert_eq!(unit.a, half.a);
        for m in 0..4 {
            assert!((half.da[m] - 2.0 * unit.da[m]).abs() < 1e-6);
            assert!((half.d2a[m] - 4.0 * unit.d2a[m]).abs() < 1e-5);
        }
    }

    #[test]
    fn weights_reject_out_of_range_t() {
        for t in [-0.1, 1.0, 1.5, f64::NAN] {
            assert!(matches!(basis_weights(t, 1.0), Err(Error::InputDomain(_))));
        }
        assert!(basis_weights(0.5, 0.0).is_err());
    }

    #[test]
    fn prefactors_compose_map_and_weights() {
        let g = grid48();
        let pre = compute_prefactors([2.7, 0.5, 47.5], &g).unwrap();
        assert_eq!(pre.point.lower(), [2, 0, 47]);
        let offsets = [0.7f64, 0.5, 0.5];
        for axis in 0..3 {
            let t = pre.point.offsets()[axis];
            assert!((t - offsets[axis]).abs() < 1e-12);
            assert_eq!(pre.weights[axis], basis_weights(t, 1.0).unwrap());
        }
    }

    #[test]
    fn prefactors_at_origin() {
        let pre = compute_prefactors([0.0; 3], &grid48()).unwrap();
        for w in pre.weights {
            assert_eq!(w, basis_weights(0.0, 1.0).unwrap());
        }
    }

    #[test]
    fn prefactors_match_double_precision_at_quarter() {
        let pre = compute_prefactors([5.25, 5.25, 5.25], &grid48()).unwrap();
        // reference polynomials evaluated in f64 at t = 1/4
        let t = 0.25f64;
        let a = [
            (1.0 - t).powi(3) / 6.0,
            (3.0 * t.powi(3) - 6.0 * t * t + 4.0) / 6.0,
            (-3.0 * t.powi(3) + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
            t.powi(3) / 6.0,
        ];
        let da = [
            -0.5 * (1.0 - t).powi(2),
            1.5 * t * t - 2.0 * t,
            -1.5 * t * t + t + 0.5,
            0.5 * t * t,
        ];
        let d2a = [1.0 - t, 3.0 * t - 2.0, 1.0 - 3.0 * t, t];
        for w in pre.weights {
            for m in 0..4 {
                for (got, want) in [(w.a[m], a[m]), (w.da[m], da[m]), (w.d2a[m], d2a[m])] {
                    let ulp = f32::EPSILON * (want as f32).abs().max(f32::MIN_POSITIVE);
                    assert!(
                        ((got as f64) - want).abs() <= 2.0 * ulp as f64,
                        "got {got}, want {want}"
                    );
                }
            }
        }
    }
}
