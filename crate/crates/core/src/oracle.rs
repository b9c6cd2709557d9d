// SPDX-License-Identifier: Apache-2.0

//! Double-precision reference evaluation.
//!
//! Deliberately naive: its own grid reduction and basis polynomials, a plain
//! triple loop over the 64 stencil points per spline, and no layout tricks.
//! It reads coefficients through [`Coefficients::coeff`], so it works on any
//! table layout.

use crate::coeff::Coefficients;
use crate::kernels::{Evaluation, KernelKind};

/// Per-axis reference data: stencil indices and basis values/derivatives.
struct Axis {
    idx: [usize; 4],
    b: [f64; 4],
    db: [f64; 4],
    d2b: [f64; 4],
}

fn axis(x: f64, spacing: f64, count: usize) -> Axis {
    let u = x / spacing;
    let cell = u.floor();
    let t = u - cell;
    let c = count as i64;
    let i0 = cell as i64;
    let idx = [-1i64, 0, 1, 2].map(|o| (i0 + o).rem_euclid(c) as usize);
    let b = [
        (1.0 - t).powi(3) / 6.0,
        (3.0 * t.powi(3) - 6.0 * t * t + 4.0) / 6.0,
        (-3.0 * t.powi(3) + 3.0 * t * t + 3.0 * t + 1.0) / 6.0,
        t.powi(3) / 6.0,
    ];
    let db = [
        -0.5 * (1.0 - t).powi(2),
        1.5 * t * t - 2.0 * t,
        -1.5 * t * t + t + 0.5,
        0.5 * t * t,
    ]
    .map(|d| d / spacing);
    let d2b = [1.0 - t, 3.0 * t - 2.0, 1.0 - 3.0 * t, t].map(|d| d / (spacing * spacing));
    Axis { idx, b, db, d2b }
}

/// Reference basis values at offset `t` in double precision.
pub fn basis_f64(t: f64) -> [f64; 4] {
    axis(t, 1.0, 8).b
}

/// Reference `kind` outputs at `pos`, streams ordered as
/// [`KernelKind::stream_names`].
pub fn oracle_f64<T: Coefficients + ?Sized>(
    table: &T,
    kind: KernelKind,
    pos: [f64; 3],
) -> Evaluation<f64> {
    let grid = *table.grid();
    let ax = axis(pos[0], grid.dx, grid.nx);
    let ay = axis(pos[1], grid.dy, grid.ny);
    let az = axis(pos[2], grid.dz, grid.nz);
    let n = table.n_splines();
    let mut streams = vec![vec![0.0f64; n]; kind.soa_streams()];
    for s in 0..n {
        let mut acc = [0.0f64; 10];
        let mut lap = 0.0f64;
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let p = table.coeff(ax.idx[i], ay.idx[j], az.idx[k], s) as f64;
                    acc[0] += ax.b[i] * ay.b[j] * az.b[k] * p;
                    acc[1] += ax.db[i] * ay.b[j] * az.b[k] * p;
                    acc[2] += ax.b[i] * ay.db[j] * az.b[k] * p;
                    acc[3] += ax.b[i] * ay.b[j] * az.db[k] * p;
                    acc[4] += ax.d2b[i] * ay.b[j] * az.b[k] * p;
                    acc[5] += ax.db[i] * ay.db[j] * az.b[k] * p;
                    acc[6] += ax.db[i] * ay.b[j] * az.db[k] * p;
                    acc[7] += ax.b[i] * ay.d2b[j] * az.b[k] * p;
                    acc[8] += ax.b[i] * ay.db[j] * az.db[k] * p;
                    acc[9] += ax.b[i] * ay.b[j] * az.d2b[k] * p;
                }
            }
        }
        lap += acc[4] + acc[7] + acc[9];
        match kind {
            KernelKind::V => streams[0][s] = acc[0],
            KernelKind::Vgl => {
                for c in 0..4 {
                    streams[c][s] = acc[c];
                }
                streams[4][s] = lap;
            }
            KernelKind::Vgh => {
                for c in 0..10 {
                    streams[c][s] = acc[c];
                }
            }
        }
    }
    Evaluation { kind, streams }
}

/// Reference values only.
pub fn oracle_value<T: Coefficients + ?Sized>(table: &T, pos: [f64; 3]) -> Vec<f64> {
    oracle_f64(table, KernelKind::V, pos).streams.swap_remove(0)
}

/// Normwise relative error of `got` against `want`: each component's error
/// is divided by `max(|want|, max_i |want_i|)`, then the maximum is taken.
/// Per-component relative error is meaningless for outputs that happen to
/// cross zero, so the stream's largest magnitude sets the scale.
pub fn normwise_rel_error(got: &[f64], want: &[f64]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, w| m.max(w.abs()));
    got.iter()
        .zip(want)
        .map(|(g, w)| {
            let denom = w.abs().max(scale);
            if denom == 0.0 {
                (g - w).abs()
            } else {
                (g - w).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// Largest [`normwise_rel_error`] over the streams of two evaluations.
pub fn max_stream_error(got: &Evaluation<f32>, want: &Evaluation<f64>) -> f64 {
    got.streams
        .iter()
        .zip(&want.streams)
        .map(|(g, w)| {
            let g: Vec<f64> = g.iter().map(|&x| x as f64).collect();
            normwise_rel_error(&g, w)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{CoeffTableSoA, FillSpec};
    use crate::grid::GridSpec;

    #[test]
    fn constant_field_is_exact() {
        let t = CoeffTableSoA::build(GridSpec::cubic(6).unwrap(), 3, FillSpec::Constant(-1.75))
            .unwrap();
        let e = oracle_f64(&t, KernelKind::Vgh, [0.3, 5.9, 2.2]);
        assert!(e.streams[0].iter().all(|v| (v + 1.75).abs() < 1e-14));
        for s in &e.streams[1..] {
            assert!(s.iter().all(|v| v.abs() < 1e-13));
        }
    }

    #[test]
    fn partition_of_unity_in_double() {
        for step in 0..1000 {
            let t = step as f64 / 1000.0;
            let sum: f64 = basis_f64(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn vgl_laplacian_is_hessian_trace() {
        let t = CoeffTableSoA::build(GridSpec::cubic(5).unwrap(), 4, FillSpec::Random(8)).unwrap();
        let pos = [1.1, 2.9, 4.4];
        let vgl = oracle_f64(&t, KernelKind::Vgl, pos);
        let vgh = oracle_f64(&t, KernelKind::Vgh, pos);
        for s in 0..4 {
            let trace = vgh.streams[4][s] + vgh.streams[7][s] + vgh.streams[9][s];
            assert!((vgl.streams[4][s] - trace).abs() < 1e-12);
        }
    }

    #[test]
    fn normwise_error_uses_stream_scale() {
        assert_eq!(normwise_rel_error(&[1.0, 0.1], &[1.0, 0.0]), 0.1);
        assert_eq!(normwise_rel_error(&[0.5], &[0.0]), 0.5);
        assert_eq!(normwise_rel_error(&[2.0], &[2.0]), 0.0);
    }
}
