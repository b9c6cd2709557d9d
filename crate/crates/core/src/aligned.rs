// SPDX-License-Identifier: Apache-2.0

//! Cache-line aligned `f32` storage.

use std::ops::{Deref, DerefMut};

/// Alignment of every buffer, in bytes (one 512-bit cache line).
pub const ALIGN_BYTES: usize = 64;
/// Number of `f32` lanes per cache line.
pub const LANES: usize = ALIGN_BYTES / std::mem::size_of::<f32>();

#[derive(Clone, Copy)]
#[repr(C, align(64))]
struct Line([f32; LANES]);

const ZERO_LINE: Line = Line([0.0; LANES]);

/// Rounds `n` up to a whole number of cache lines worth of `f32`.
pub fn padded_len(n: usize) -> usize {
    n.div_ceil(LANES) * LANES
}

/// A zero-initialized `f32` buffer whose first element sits on a 64-byte
/// boundary. The backing storage always covers whole cache lines.
#[derive(Clone)]
pub struct AlignedBuf {
    lines: Vec<Line>,
    len: usize,
}

impl AlignedBuf {
    pub fn zeroed(len: usize) -> Self {
        AlignedBuf {
            lines: vec![ZERO_LINE; len.div_ceil(LANES)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bytes actually allocated (whole cache lines).
    pub fn allocated_bytes(&self) -> usize {
        self.lines.len() * ALIGN_BYTES
    }
}

impl Deref for AlignedBuf {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        // SAFETY: `Line` is `repr(C)` over `[f32; LANES]`, so the vector is a
        // contiguous run of `lines.len() * LANES >= len` initialized f32 values.
        unsafe { std::slice::from_raw_parts(self.lines.as_ptr().cast::<f32>(), self.len) }
    }
}

impl DerefMut for AlignedBuf {
    fn deref_mut(&mut self) -> &mut [f32] {
        // SAFETY: as in `deref`; the exclusive borrow of `self` covers the slice.
        unsafe { std::slice::from_raw_parts_mut(self.lines.as_mut_ptr().cast::<f32>(), self.len) }
    }
}

impl std::fmt::Debug for AlignedBuf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AlignedBuf")
            .field("len", &self.len)
            .finish()
    }
}

impl PartialEq for AlignedBuf {
    fn eq(&self, other: &Self) -> bool {
        self[..] == other[..]
    }
}
