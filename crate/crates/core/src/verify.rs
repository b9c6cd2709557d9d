// SPDX-License-Identifier: Apache-2.0

//! Property suites run by `bspb verify`.

use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Serialize;

use crate::coeff::{
    convert_aos_to_soa, tile_table, CoeffTableAoS, CoeffTableSoA, Coefficients, FillSpec,
};
use crate::driver::{run_population, Layout, RunConfig};
use crate::error::Result;
use crate::grid::{basis_weights, GridSpec};
use crate::kernels::{KernelKind, SplineKernels};
use crate::metrics::tile_candidates;
use crate::oracle::{max_stream_error, normwise_rel_error, oracle_f64, oracle_value};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub grid: GridSpec,
    pub n_splines: usize,
    pub seed: u64,
    pub positions: usize,
}

/// Seeded uniform draws in `[0, 1)`.
pub struct Uniform(ChaCha8Rng);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Uniform(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn unit(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn position(&mut self, lengths: [f64; 3]) -> [f64; 3] {
        lengths.map(|l| self.unit() * l)
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = f().unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Basis identities over `count` random offsets.
pub fn identity_suite(count: usize, spacing: f64, seed: u64) -> Result<(bool, String)> {
    let mut u = Uniform::new(seed);
    let (mut pou, mut d1, mut d2) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..count {
        let w = basis_weights(u.unit(), spacing)?;
        pou = pou.max((w.a.iter().sum::<f32>() as f64 - 1.0).abs());
        d1 = d1.max(w.da.iter().sum::<f32>().abs() as f64 * spacing);
        d2 = d2.max(w.d2a.iter().sum::<f32>().abs() as f64 * spacing * spacing);
    }
    let ok = pou <= 2e-6 && d1 <= 2e-6 && d2 <= 2e-5;
    Ok((
        ok,
        format!("|sum a - 1| = {pou:.2e}, |sum da| = {d1:.2e}, |sum d2a| = {d2:.2e}"),
    ))
}

/// Constant and linear-index fields at interior positions.
pub fn exact_field_suite(
    grid: GridSpec,
    n: usize,
    positions: usize,
    seed: u64,
) -> Result<(bool, String)> {
    let c = 2.5f32;
    let constant = CoeffTableSoA::build(grid, n, FillSpec::Constant(c))?;
    let unit = GridSpec::new(grid.nx, grid.ny, grid.nz)?;
    let linear = CoeffTableSoA::build(unit, n, FillSpec::LinearIndex(0))?;
    let mut u = Uniform::new(seed);
    let (mut e_const, mut e_val, mut e_grad, mut e_second) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut out = constant.new_outputs();
    let mut out_l = linear.new_outputs();
    for _ in 0..positions {
        let pos = u.position(grid.lengths());
        constant.eval_vgh(pos, &mut out)?;
        let e = constant.evaluation(KernelKind::Vgh, &out);
        for &v in &e.streams[0] {
            e_const = e_const.max((v - c).abs() as f64 / c as f64);
        }
        for s in &e.streams[1..] {
            for &v in s {
                e_const = e_const.max(v.abs() as f64 / c as f64);
            }
        }
        // interior: the stencil {i0-1..i0+2} must not wrap along x
        let x = 1.0 + u.unit() * (unit.nx as f64 - 3.0);
        let pos = [x, pos[1], pos[2]];
        linear.eval_vgh(pos, &mut out_l)?;
        let e = linear.evaluation(KernelKind::Vgh, &out_l);
        for s in 0..n {
            e_val = e_val.max((e.streams[0][s] as f64 - x).abs() / x);
            e_grad = e_grad.max((e.streams[1][s] as f64 - 1.0).abs());
            e_grad = e_grad
                .max(e.streams[2][s].abs() as f64)
                .max(e.streams[3][s].abs() as f64);
            for h in &e.streams[4..] {
                e_second = e_second.max(h[s].abs() as f64);
            }
        }
    }
    let ok = e_const <= 1e-5 && e_val <= 1e-4 && e_grad <= 1e-4 && e_second <= 1e-4;
    Ok((
        ok,
        format!("constant {e_const:.2e}, value {e_val:.2e}, gradient {e_grad:.2e}, second {e_second:.2e}"),
    ))
}

/// AoS, SoA and every tiling against the oracle and against each other.
pub fn oracle_suite(
    grid: GridSpec,
    n: usize,
    positions: usize,
    seed: u64,
) -> Result<(bool, String)> {
    let aos = CoeffTableAoS::build(grid, n, FillSpec::Random(seed))?;
    let soa = convert_aos_to_soa(&aos);
    let divisors: Vec<usize> = (1..=n).filter(|&d| n.is_multiple_of(d)).collect();
    let tiled = divisors
        .iter()
        .map(|&nb| tile_table(&soa, nb))
        .collect::<Result<Vec<_>>>()?;
    let mut u = Uniform::new(seed ^ 0x5eed);
    let (mut vs_oracle, mut mismatches) = (0.0f64, 0usize);
    for _ in 0..positions {
        let pos = u.position(grid.lengths());
        for kind in KernelKind::ALL {
            let want = oracle_f64(&soa, kind, pos);
            let a = aos.evaluate(kind, pos)?;
            let s = soa.evaluate(kind, pos)?;
            vs_oracle = vs_oracle
                .max(max_stream_error(&a, &want))
                .max(max_stream_error(&s, &want));
            mismatches += usize::from(a != s);
            for t in &tiled {
                let e = t.evaluate(kind, pos)?;
                vs_oracle = vs_oracle.max(max_stream_error(&e, &want));
                mismatches += usize::from(e != s);
            }
        }
    }
    Ok((
        vs_oracle <= 1e-5 && mismatches == 0,
        format!("max error vs oracle {vs_oracle:.2e}, non-bitwise layout pairs {mismatches}, tilings {divisors:?}"),
    ))
}

/// Step of the finite-difference checks.
pub const FD_STEP: f64 = 1e-3;

/// Random position whose per-axis offsets keep `2 h` away from knots, where
/// the third derivative of a cubic B-spline jumps.
pub fn smooth_position(u: &mut Uniform, grid: &GridSpec) -> [f64; 3] {
    let margin = 2.0 * FD_STEP;
    let counts = grid.counts();
    let spacing = grid.spacing();
    [0, 1, 2].map(|a| {
        let cell = (u.unit() * counts[a] as f64).floor();
        let t = margin + u.unit() * (1.0 - 2.0 * margin);
        (cell + t) * spacing[a]
    })
}

/// Central differences of the double-precision value against the kernels'
/// gradient and Hessian, and the Laplacian against the Hessian trace.
pub fn derivative_suite<T: Coefficients + SplineKernels>(
    table: &T,
    positions: usize,
    seed: u64,
) -> Result<(bool, String)> {
    let grid = *table.grid();
    let h = FD_STEP;
    let mut u = Uniform::new(seed);
    let (mut e_g, mut e_h, mut e_l) = (0.0f64, 0.0f64, 0.0f64);
    let shift = |p: [f64; 3], a: usize, d: f64| {
        let mut q = p;
        q[a] += d;
        q
    };
    for _ in 0..positions {
        let pos = smooth_position(&mut u, &grid);
        let vgh = table.evaluate(KernelKind::Vgh, pos)?;
        let vgl = table.evaluate(KernelKind::Vgl, pos)?;
        let f0 = oracle_value(table, pos);
        let n = f0.len();
        for a in 0..3 {
            let fp = oracle_value(table, shift(pos, a, h));
            let fm = oracle_value(table, shift(pos, a, -h));
            let fd: Vec<f64> = (0..n).map(|s| (fp[s] - fm[s]) / (2.0 * h)).collect();
            let got: Vec<f64> = vgh.streams[1 + a].iter().map(|&x| x as f64).collect();
            e_g = e_g.max(normwise_rel_error(&got, &fd));
        }
        // hxx hxy hxz hyy hyz hzz
        for (stream, (a, b)) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]
            .into_iter()
            .enumerate()
        {
            let fd: Vec<f64> = if a == b {
                let fp = oracle_value(table, shift(pos, a, h));
                let fm = oracle_value(table, shift(pos, a, -h));
                (0..n)
                    .map(|s| (fp[s] - 2.0 * f0[s] + fm[s]) / (h * h))
                    .collect()
            } else {
                let pp = oracle_value(table, shift(shift(pos, a, h), b, h));
                let pm = oracle_value(table, shift(shift(pos, a, h), b, -h));
                let mp = oracle_value(table, shift(shift(pos, a, -h), b, h));
                let mm = oracle_value(table, shift(shift(pos, a, -h), b, -h));
                (0..n)
                    .map(|s| (pp[s] - pm[s] - mp[s] + mm[s]) / (4.0 * h * h))
                    .collect()
            };
            let got: Vec<f64> = vgh.streams[4 + stream].iter().map(|&x| x as f64).collect();
            e_h = e_h.max(normwise_rel_error(&got, &fd));
        }
        let trace: Vec<f64> = (0..n)
            .map(|s| vgh.streams[4][s] as f64 + vgh.streams[7][s] as f64 + vgh.streams[9][s] as f64)
            .collect();
        let lap: Vec<f64> = vgl.streams[4].iter().map(|&x| x as f64).collect();
        e_l = e_l.max(normwise_rel_error(&lap, &trace));
    }
    Ok((
        e_g < 1e-4 && e_h < 1e-3 && e_l <= 1e-4,
        format!("gradient {e_g:.2e}, hessian {e_h:.2e}, laplacian-vs-trace {e_l:.2e}"),
    ))
}

/// Bitwise-identical retained outputs across thread layouts.
pub fn determinism_suite(
    grid: GridSpec,
    n: usize,
    tile: usize,
    seed: u64,
) -> Result<(bool, String)> {
    let base = RunConfig {
        n_splines: n,
        grid,
        tile_size: tile,
        layout: Layout::AoSoA,
        n_walkers: 4,
        samples_per_kernel: 4,
        iterations: 2,
        threads_total: 1,
        threads_per_walker: 1,
        seed,
        kernels: KernelKind::ALL.to_vec(),
        warmup: false,
        verify: false,
    };
    let reference = run_population(&base)?.retained;
    let mut checked = 0;
    for (threads, team) in [(2, 1), (2, 2), (4, 4)] {
        let cfg = RunConfig {
            threads_total: threads,
            threads_per_walker: team,
            ..base.clone()
        };
        if run_population(&cfg)?.retained != reference {
            return Ok((false, format!("threads={threads}, n_th={team} differs")));
        }
        checked += 1;
    }
    Ok((true, format!("{checked} thread layouts bitwise identical")))
}

/// Instrumented counts against the analytic traffic model.
pub fn accounting_suite(grid: GridSpec, n: usize, seed: u64) -> Result<(bool, String)> {
    let soa = CoeffTableSoA::build(grid, n, FillSpec::Random(seed))?;
    let aos = soa.to_aos();
    let pos = Uniform::new(seed).position(grid.lengths());
    let nn = n as u64;
    let mut problems = Vec::new();
    for kind in KernelKind::ALL {
        let mut out = soa.new_outputs();
        let c = soa.eval_instrumented(kind, pos, &mut out)?;
        if c.rows != 64
            || c.coeff_reads != 64 * nn
            || c.output_writes != kind.soa_streams() as u64 * nn
        {
            problems.push(format!("SoA {kind}: {c:?}"));
        }
        let mut out = aos.new_outputs();
        let c = aos.eval_instrumented(kind, pos, &mut out)?;
        if c.coeff_reads != 64 * nn || c.output_writes != kind.aos_streams() as u64 * nn {
            problems.push(format!("AoS {kind}: {c:?}"));
        }
    }
    let ok = problems.is_empty();
    Ok((
        ok,
        if ok {
            "64N reads; 1/5/10 N SoA and 13N AoS VGH writes".into()
        } else {
            problems.join("; ")
        },
    ))
}

/// Runs every suite for the given options.
pub fn run_all(opts: &VerifyOptions) -> Vec<CheckOutcome> {
    let VerifyOptions {
        grid,
        n_splines: n,
        seed,
        positions,
    } = opts.clone();
    let small = GridSpec::with_spacing([16, 16, 16], grid.spacing()).unwrap_or(grid);
    let tile = tile_candidates(n).into_iter().find(|&t| t < n).unwrap_or(n);
    vec![
        timed("identities", || identity_suite(10_000, grid.dx, seed)),
        timed("exact fields", || {
            exact_field_suite(grid, n, positions, seed)
        }),
        timed("oracle equivalence", || {
            oracle_suite(small, n, positions, seed)
        }),
        timed("derivatives", || {
            let t = CoeffTableSoA::build(small, n, FillSpec::Random(seed))?;
            derivative_suite(&t, positions.min(200), seed)
        }),
        timed("determinism", || determinism_suite(small, n, tile, seed)),
        timed("accounting", || accounting_suite(small, n, seed)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass_on_small_problem() {
        let opts = VerifyOptions {
            grid: GridSpec::cubic(8).unwrap(),
            n_splines: 32,
            seed: 42,
            positions: 20,
        };
        for o in run_all(&opts) {
            assert!(o.passed, "{}: {}", o.name, o.detail);
        }
    }

    #[test]
    fn smooth_positions_avoid_knots() {
        let g = GridSpec::with_spacing([6, 6, 6], [0.5, 1.0, 2.0]).unwrap();
        let mut u = Uniform::new(1);
        for _ in 0..1000 {
            let p = smooth_position(&mut u, &g);
            for a in 0..3 {
                let t = (p[a] / g.spacing()[a]).fract();
                assert!(t > 1.9e-3 && t < 1.0 - 1.9e-3);
            }
        }
    }
}
