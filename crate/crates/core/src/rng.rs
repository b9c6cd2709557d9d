// SPDX-License-Identifier: Apache-2.0

//! Counter-addressed random sample positions.
//!
//! A ChaCha8 stream keyed by the run seed is selected per walker
//! (`set_stream`), and the word position encodes the iteration, the kernel
//! slot and the sample index. Any sample can therefore be regenerated from
//! its coordinates alone, whatever thread produced it first.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::grid::GridSpec;
use crate::kernels::KernelKind;

/// Bits of word position reserved for the samples of one (iteration, kernel)
/// block. Each sample consumes six 32-bit words.
const SAMPLE_BLOCK_BITS: u32 = 40;

/// Random positions for the three kernels of one walker iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub v: Vec<[f64; 3]>,
    pub vgl: Vec<[f64; 3]>,
    pub vgh: Vec<[f64; 3]>,
}

impl SampleSet {
    pub fn for_kernel(&self, kind: KernelKind) -> &[[f64; 3]] {
        match kind {
            KernelKind::V => &self.v,
            KernelKind::Vgl => &self.vgl,
            KernelKind::Vgh => &self.vgh,
        }
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

fn kernel_slot(kind: KernelKind) -> u128 {
    match kind {
        KernelKind::V => 0,
        KernelKind::Vgl => 1,
        KernelKind::Vgh => 2,
    }
}

/// The generator positioned at the first sample of `(walker, iter, kind)`.
pub fn position_stream(seed: u64, walker: u64, iter: u64, kind: KernelKind) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(walker);
    let block = iter as u128 * 3 + kernel_slot(kind);
    rng.set_word_pos(block << SAMPLE_BLOCK_BITS);
    rng
}

#[inline]
fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn positions(rng: &mut ChaCha8Rng, ns: usize, lengths: [f64; 3]) -> Vec<[f64; 3]> {
    (0..ns)
        .map(|_| {
            lengths.map(|len| {
                let x = unit_f64(rng.next_u64()) * len;
                if x < len {
                    x
                } else {
                    0.0
                }
            })
        })
        .collect()
}

/// `ns` positions per kernel, uniform over the periodic domain `[0, L)^3`.
pub fn generate_positions(
    seed: u64,
    walker: u64,
    iter: u64,
    ns: usize,
    grid: &GridSpec,
) -> SampleSet {
    let lengths = grid.lengths();
    let draw = |kind| positions(&mut position_stream(seed, walker, iter, kind), ns, lengths);
    SampleSet {
        v: draw(KernelKind::V),
        vgl: draw(KernelKind::Vgl),
        vgh: draw(KernelKind::Vgh),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn grid() -> GridSpec {
        GridSpec::cubic(48).unwrap()
    }

    #[test]
    fn same_coordinates_same_positions() {
        let a = generate_positions(42, 3, 7, 64, &grid());
        let b = generate_positions(42, 3, 7, 64, &grid());
        assert_eq!(a, b);
        assert_ne!(a, generate_positions(42, 3, 8, 64, &grid()));
        assert_ne!(a, generate_positions(43, 3, 7, 64, &grid()));
        assert_ne!(a.v, a.vgl);
    }

    #[test]
    fn prefix_is_independent_of_sample_count() {
        let short = generate_positions(1, 0, 2, 10, &grid());
        let long = generate_positions(1, 0, 2, 100, &grid());
        assert_eq!(short.vgh[..], long.vgh[..10]);
    }

    #[test]
    fn positions_lie_in_domain() {
        let g = GridSpec::with_spacing([10, 12, 14], [0.5, 1.0, 0.25]).unwrap();
        let s = generate_positions(5, 1, 0, 2000, &g);
        let len = g.lengths();
        for p in s.v.iter().chain(&s.vgl).chain(&s.vgh) {
            for a in 0..3 {
                assert!((0.0..len[a]).contains(&p[a]));
            }
        }
    }

    #[test]
    fn walker_streams_do_not_overlap() {
        const DRAWS: usize = 1_000_000;
        let mut a = position_stream(42, 0, 0, KernelKind::Vgh);
        let seen: HashSet<u64> = (0..DRAWS).map(|_| a.next_u64()).collect();
        let mut b = position_stream(42, 1, 0, KernelKind::Vgh);
        let shared = (0..DRAWS).filter(|_| seen.contains(&b.next_u64())).count();
        assert_eq!(shared, 0);
    }

    #[test]
    fn positions_are_uniform_per_axis() {
        // chi-square, 47 degrees of freedom, p = 0.01 critical value
        const CRITICAL: f64 = 72.443;
        const BINS: usize = 48;
        let g = grid();
        let mut hist = [[0u64; BINS]; 3];
        let mut total = 0u64;
        let mut iter = 0;
        while total < 1_000_000 {
            for p in generate_positions(9, 0, iter, 10_000, &g).vgh {
                for a in 0..3 {
                    hist[a][(p[a] as usize).min(BINS - 1)] += 1;
                }
                total += 1;
            }
            iter += 1;
        }
        let expected = total as f64 / BINS as f64;
        for axis_hist in &hist {
            let chi2: f64 = axis_hist
                .iter()
                .map(|&c| (c as f64 - expected).powi(2) / expected)
                .sum();
            assert!(chi2 < CRITICAL, "chi2 = {chi2}");
        }
    }
}
