// SPDX-License-Identifier: Apache-2.0

//! V, VGL and VGH evaluation kernels.
//!
//! Every kernel walks the 4x4x4 stencil in the fixed order `i` (x), `j` (y),
//! `k` (z) with the spline loop innermost, and forms its per-point prefactors
//! through [`StencilCoefs::at`]. Because the arithmetic per spline lane is the
//! same everywhere, the AoS, SoA and tiled kernels agree bit for bit.
//!
//! Kernels are generic over a [`Probe`]; [`NoProbe`] compiles away while
//! [`AccessCounts`] records rows, reads, accumulations and output writes.

use serde::{Deserialize, Serialize};

use crate::aligned::{padded_len, AlignedBuf};
use crate::coeff::{CoeffTableAoS, CoeffTableSoA, Coefficients, TiledCoeffTable};
use crate::error::{Error, Result};
use crate::grid::{compute_prefactors, stencil, BasisWeights, GridSpec, Prefactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelKind {
    V,
    Vgl,
    Vgh,
}

impl KernelKind {
    pub const ALL: [KernelKind; 3] = [KernelKind::V, KernelKind::Vgl, KernelKind::Vgh];

    /// Output streams per spline in the SoA layout.
    pub fn soa_streams(self) -> usize {
        match self {
            KernelKind::V => 1,
            KernelKind::Vgl => 5,
            KernelKind::Vgh => 10,
        }
    }

    /// Output components per spline in the AoS layout (full 3x3 Hessian).
    pub fn aos_streams(self) -> usize {
        match self {
            KernelKind::V => 1,
            KernelKind::Vgl => 5,
            KernelKind::Vgh => 13,
        }
    }

    /// Names of the canonical output streams, see [`Evaluation`].
    pub fn stream_names(self) -> &'static [&'static str] {
        match self {
            KernelKind::V => &["v"],
            KernelKind::Vgl => &["v", "gx", "gy", "gz", "l"],
            KernelKind::Vgh => &[
                "v", "gx", "gy", "gz", "hxx", "hxy", "hxz", "hyy", "hyz", "hzz",
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelKind::V => "V",
            KernelKind::Vgl => "VGL",
            KernelKind::Vgh => "VGH",
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v" => Ok(KernelKind::V),
            "vgl" => Ok(KernelKind::Vgl),
            "vgh" => Ok(KernelKind::Vgh),
            other => Err(Error::Config(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Instrumentation hook. All methods default to no-ops.
pub trait Probe {
    #[inline(always)]
    fn row(&mut self, _elements: usize) {}
    #[inline(always)]
    fn accumulate(&mut self, _count: usize) {}
    #[inline(always)]
    fn store(&mut self, _elements: usize) {}
}

/// The uninstrumented probe.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoProbe;

impl Probe for NoProbe {}

/// Memory-access tallies of one or more kernel calls.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounts {
    /// Coefficient rows (grid points) touched.
    pub rows: u64,
    /// Coefficient elements read.
    pub coeff_reads: u64,
    /// Multiply-accumulate operations into outputs.
    pub accumulations: u64,
    /// Distinct output elements written.
    pub output_writes: u64,
}

impl Probe for AccessCounts {
    #[inline]
    fn row(&mut self, elements: usize) {
        self.rows += 1;
        self.coeff_reads += elements as u64;
    }

    #[inline]
    fn accumulate(&mut self, count: usize) {
        self.accumulations += count as u64;
    }

    #[inline]
    fn store(&mut self, elements: usize) {
        self.output_writes += elements as u64;
    }
}

impl std::ops::AddAssign for AccessCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.rows += rhs.rows;
        self.coeff_reads += rhs.coeff_reads;
        self.accumulations += rhs.accumulations;
        self.output_writes += rhs.output_writes;
    }
}

/// Tensor-product prefactors at one stencil point.
#[derive(Debug, Clone, Copy)]
struct StencilCoefs {
    f: f32,
    gx: f32,
    gy: f32,
    gz: f32,
    hxx: f32,
    hxy: f32,
    hxz: f32,
    hyy: f32,
    hyz: f32,
    hzz: f32,
    lap: f32,
}

impl StencilCoefs {
    #[inline(always)]
    fn at(w: &[BasisWeights; 3], i: usize, j: usize, k: usize) -> Self {
        let [x, y, z] = w;
        let hxx = (x.d2a[i] * y.a[j]) * z.a[k];
        let hyy = (x.a[i] * y.d2a[j]) * z.a[k];
        let hzz = (x.a[i] * y.a[j]) * z.d2a[k];
        StencilCoefs {
            f: (x.a[i] * y.a[j]) * z.a[k],
            gx: (x.da[i] * y.a[j]) * z.a[k],
            gy: (x.a[i] * y.da[j]) * z.a[k],
            gz: (x.a[i] * y.a[j]) * z.da[k],
            hxx,
            hxy: (x.da[i] * y.da[j]) * z.a[k],
            hxz: (x.da[i] * y.a[j]) * z.da[k],
            hyy,
            hyz: (x.a[i] * y.da[j]) * z.da[k],
            hzz,
            lap: (hxx + hyy) + hzz,
        }
    }
}

struct Stencil {
    x: [usize; 4],
    y: [usize; 4],
    z: [usize; 4],
}

impl Stencil {
    fn new(pre: &Prefactors, grid: &GridSpec) -> Self {
        let p = &pre.point;
        Stencil {
            x: stencil(p.i0, grid.nx),
            y: stencil(p.j0, grid.ny),
            z: stencil(p.k0, grid.nz),
        }
    }
}

/// Outputs of one walker for `N` splines in interleaved (AoS) order.
///
/// `g` is `[x y z | x y z | ...]` and `h` is a row-major 3x3 block per spline.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerOutputsAoS {
    pub v: Vec<f32>,
    pub g: Vec<f32>,
    pub l: Vec<f32>,
    pub h: Vec<f32>,
}

impl WalkerOutputsAoS {
    pub fn new(n: usize) -> Self {
        WalkerOutputsAoS {
            v: vec![0.0; n],
            g: vec![0.0; 3 * n],
            l: vec![0.0; n],
            h: vec![0.0; 9 * n],
        }
    }

    pub fn capacity(&self) -> usize {
        self.v
            .len()
            .min(self.g.len() / 3)
            .min(self.l.len())
            .min(self.h.len() / 9)
    }

    /// Canonical streams for the first `n` splines.
    pub fn to_evaluation(&self, kind: KernelKind, n: usize) -> Evaluation<f32> {
        let strided = |src: &[f32], stride: usize, offset: usize| -> Vec<f32> {
            (0..n).map(|s| src[stride * s + offset]).collect()
        };
        let mut streams = vec![self.v[..n].to_vec()];
        if kind != KernelKind::V {
            for c in 0..3 {
                streams.push(strided(&self.g, 3, c));
            }
        }
        match kind {
            KernelKind::V => {}
            KernelKind::Vgl => streams.push(self.l[..n].to_vec()),
            KernelKind::Vgh => {
                // xx xy xz yy yz zz
                for offset in [0, 1, 2, 4, 5, 8] {
                    streams.push(strided(&self.h, 9, offset));
                }
            }
        }
        Evaluation { kind, streams }
    }
}

/// Outputs of one walker in SoA order; every stream is cache-line aligned and
/// `n_padded` long. Lanes at or beyond `n` are never read.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkerOutputsSoA {
    n: usize,
    pub v: AlignedBuf,
    pub gx: AlignedBuf,
    pub gy: AlignedBuf,
    pub gz: AlignedBuf,
    pub l: AlignedBuf,
    pub hxx: AlignedBuf,
    pub hxy: AlignedBuf,
    pub hxz: AlignedBuf,
    pub hyy: AlignedBuf,
    pub hyz: AlignedBuf,
    pub hzz: AlignedBuf,
}

impl WalkerOutputsSoA {
    pub fn new(n: usize) -> Self {
        let np = padded_len(n);
        let buf = || AlignedBuf::zeroed(np);
        WalkerOutputsSoA {
            n,
            v: buf(),
            gx: buf(),
            gy: buf(),
            gz: buf(),
            l: buf(),
            hxx: buf(),
            hxy: buf(),
            hxz: buf(),
            hyy: buf(),
            hyz: buf(),
            hzz: buf(),
        }
    }

    pub fn n_splines(&self) -> usize {
        self.n
    }

    /// Bytes of the ten VGH output streams, `40 * n`.
    pub fn vgh_working_set_bytes(&self) -> usize {
        vgh_output_bytes(1, self.n)
    }

    /// Address ranges of every stream; used to check that walkers never share
    /// output memory.
    pub fn address_ranges(&self) -> Vec<std::ops::Range<usize>> {
        self.streams_all()
            .iter()
            .map(|s| {
                let start = s.as_ptr() as usize;
                start..start + s.len() * 4
            })
            .collect()
    }

    fn streams_all(&self) -> [&AlignedBuf; 11] {
        [
            &self.v, &self.gx, &self.gy, &self.gz, &self.l, &self.hxx, &self.hxy, &self.hxz,
            &self.hyy, &self.hyz, &self.hzz,
        ]
    }

    pub fn to_evaluation(&self, kind: KernelKind) -> Evaluation<f32> {
        let n = self.n;
        let pick: Vec<&AlignedBuf> = match kind {
            KernelKind::V => vec![&self.v],
            KernelKind::Vgl => vec![&self.v, &self.gx, &self.gy, &self.gz, &self.l],
            KernelKind::Vgh => vec![
                &self.v, &self.gx, &self.gy, &self.gz, &self.hxx, &self.hxy, &self.hxz, &self.hyy,
                &self.hyz, &self.hzz,
            ],
        };
        Evaluation {
            kind,
            streams: pick.into_iter().map(|s| s[..n].to_vec()).collect(),
        }
    }
}

/// Analytic VGH output working set: 10 streams of 4 bytes for `n_walkers`
/// walkers of `n` splines, `40 * N_w * n`.
pub fn vgh_output_bytes(n_walkers: usize, n: usize) -> usize {
    40 * n_walkers * n
}

/// Layout-independent kernel result: one vector per output stream in the
/// order given by [`KernelKind::stream_names`], each `N` long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation<T> {
    pub kind: KernelKind,
    pub streams: Vec<Vec<T>>,
}

impl<T: Copy> Evaluation<T> {
    pub fn stream(&self, name: &str) -> Option<&[T]> {
        self.kind
            .stream_names()
            .iter()
            .position(|s| *s == name)
            .map(|i| self.streams[i].as_slice())
    }

    pub fn n_splines(&self) -> usize {
        self.streams.first().map_or(0, Vec::len)
    }

    /// Appends the splines of `other` (same kind) after those of `self`.
    pub fn extend(&mut self, other: &Evaluation<T>) {
        for (dst, src) in self.streams.iter_mut().zip(&other.streams) {
            dst.extend_from_slice(src);
        }
    }
}

fn check_capacity(have: usize, need: usize) -> Result<()> {
    if have < need {
        return Err(Error::Contract(format!(
            "output buffers hold {have} splines but the table has {need}"
        )));
    }
    Ok(())
}

/// Evaluation on a concrete table layout.
pub trait SplineKernels: Coefficients {
    type Outputs;

    /// Freshly zeroed outputs sized for this table.
    fn new_outputs(&self) -> Self::Outputs;

    /// Evaluates with precomputed prefactors. `pre` must come from this
    /// table's grid.
    fn eval_with_prefactors<P: Probe>(
        &self,
        kind: KernelKind,
        pre: &Prefactors,
        out: &mut Self::Outputs,
        probe: &mut P,
    ) -> Result<()>;

    /// Canonical view of `out` after a `kind` evaluation.
    fn evaluation(&self, kind: KernelKind, out: &Self::Outputs) -> Evaluation<f32>;

    fn eval(&self, kind: KernelKind, pos: [f64; 3], out: &mut Self::Outputs) -> Result<()> {
        let pre = compute_prefactors(pos, self.grid())?;
        self.eval_with_prefactors(kind, &pre, out, &mut NoProbe)
    }

    fn eval_v(&self, pos: [f64; 3], out: &mut Self::Outputs) -> Result<()> {
        self.eval(KernelKind::V, pos, out)
    }

    fn eval_vgl(&self, pos: [f64; 3], out: &mut Self::Outputs) -> Result<()> {
        self.eval(KernelKind::Vgl, pos, out)
    }

    fn eval_vgh(&self, pos: [f64; 3], out: &mut Self::Outputs) -> Result<()> {
        self.eval(KernelKind::Vgh, pos, out)
    }

    /// Runs the kernel and returns its access tallies.
    fn eval_instrumented(
        &self,
        kind: KernelKind,
        pos: [f64; 3],
        out: &mut Self::Outputs,
    ) -> Result<AccessCounts> {
        let pre = compute_prefactors(pos, self.grid())?;
        let mut counts = AccessCounts::default();
        self.eval_with_prefactors(kind, &pre, out, &mut counts)?;
        Ok(counts)
    }

    /// Allocates outputs, evaluates once and returns the canonical result.
    fn evaluate(&self, kind: KernelKind, pos: [f64; 3]) -> Result<Evaluation<f32>> {
        let mut out = self.new_outputs();
        self.eval(kind, pos, &mut out)?;
        Ok(self.evaluation(kind, &out))
    }
}

impl SplineKernels for CoeffTableSoA {
    type Outputs = WalkerOutputsSoA;

    fn new_outputs(&self) -> WalkerOutputsSoA {
        WalkerOutputsSoA::new(self.n_splines())
    }

    fn eval_with_prefactors<P: Probe>(
        &self,
        kind: KernelKind,
        pre: &Prefactors,
        out: &mut WalkerOutputsSoA,
        probe: &mut P,
    ) -> Result<()> {
        check_capacity(out.v.len().min(out.n), self.n_splines())?;
        match kind {
            KernelKind::V => soa_v(self, pre, out, probe),
            KernelKind::Vgl => soa_vgl(self, pre, out, probe),
            KernelKind::Vgh => soa_vgh(self, pre, out, probe),
        }
        Ok(())
    }

    fn evaluation(&self, kind: KernelKind, out: &WalkerOutputsSoA) -> Evaluation<f32> {
        out.to_evaluation(kind)
    }
}

fn soa_v<P: Probe>(t: &CoeffTableSoA, pre: &Prefactors, out: &mut WalkerOutputsSoA, probe: &mut P) {
    let n = t.n_splines();
    let st = Stencil::new(pre, t.grid());
    let v = &mut out.v[..n];
    v.fill(0.0);
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let c = StencilCoefs::at(&pre.weights, i, j, k);
                let p = &t.row(st.x[i], st.y[j], st.z[k])[..n];
                probe.row(n);
                for (vn, &pn) in v.iter_mut().zip(p) {
                    *vn += c.f * pn;
                }
                probe.accumulate(n);
            }
        }
    }
    probe.store(n);
}

fn soa_vgl<P: Probe>(
    t: &CoeffTableSoA,
    pre: &Prefactors,
    out: &mut WalkerOutputsSoA,
    probe: &mut P,
) {
    let n = t.n_splines();
    let st = Stencil::new(pre, t.grid());
    let v = &mut out.v[..n];
    let gx = &mut out.gx[..n];
    let gy = &mut out.gy[..n];
    let gz = &mut out.gz[..n];
    let l = &mut out.l[..n];
    for s in [&mut *v, &mut *gx, &mut *gy, &mut *gz, &mut *l] {
        s.fill(0.0);
    }
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let c = StencilCoefs::at(&pre.weights, i, j, k);
                let p = &t.row(st.x[i], st.y[j], st.z[k])[..n];
                probe.row(n);
                for s in 0..n {
                    let pn = p[s];
                    v[s] += c.f * pn;
                    gx[s] += c.gx * pn;
                    gy[s] += c.gy * pn;
                    gz[s] += c.gz * pn;
                    l[s] += c.lap * pn;
                }
                probe.accumulate(5 * n);
            }
        }
    }
    probe.store(5 * n);
}

fn soa_vgh<P: Probe>(
    t: &CoeffTableSoA,
    pre: &Prefactors,
    out: &mut WalkerOutputsSoA,
    probe: &mut P,
) {
    let n = t.n_splines();
    let st = Stencil::new(pre, t.grid());
    let v = &mut out.v[..n];
    let gx = &mut out.gx[..n];
    let gy = &mut out.gy[..n];
    let gz = &mut out.gz[..n];
    let hxx = &mut out.hxx[..n];
    let hxy = &mut out.hxy[..n];
    let hxz = &mut out.hxz[..n];
    let hyy = &mut out.hyy[..n];
    let hyz = &mut out.hyz[..n];
    let hzz = &mut out.hzz[..n];
    for s in [
        &mut *v, &mut *gx, &mut *gy, &mut *gz, &mut *hxx, &mut *hxy, &mut *hxz, &mut *hyy,
        &mut *hyz, &mut *hzz,
    ] {
        s.fill(0.0);
    }
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let c = StencilCoefs::at(&pre.weights, i, j, k);
                let p = &t.row(st.x[i], st.y[j], st.z[k])[..n];
                probe.row(n);
                for s in 0..n {
                    let pn = p[s];
                    v[s] += c.f * pn;
                    gx[s] += c.gx * pn;
                    gy[s] += c.gy * pn;
                    gz[s] += c.gz * pn;
                    hxx[s] += c.hxx * pn;
                    hxy[s] += c.hxy * pn;
                    hxz[s] += c.hxz * pn;
                    hyy[s] += c.hyy * pn;
                    hyz[s] += c.hyz * pn;
                    hzz[s] += c.hzz * pn;
                }
                probe.accumulate(10 * n);
            }
        }
    }
    probe.store(10 * n);
}

impl SplineKernels for CoeffTableAoS {
    type Outputs = WalkerOutputsAoS;

    fn new_outputs(&self) -> WalkerOutputsAoS {
        WalkerOutputsAoS::new(self.n_splines())
    }

    fn eval_with_prefactors<P: Probe>(
        &self,
        kind: KernelKind,
        pre: &Prefactors,
        out: &mut WalkerOutputsAoS,
        probe: &mut P,
    ) -> Result<()> {
        let n = self.n_splines();
        match kind {
            KernelKind::V => check_capacity(out.v.len(), n)?,
            _ => check_capacity(out.capacity(), n)?,
        }
        aos_kernel(self, kind, pre, out, probe);
        Ok(())
    }

    fn evaluation(&self, kind: KernelKind, out: &WalkerOutputsAoS) -> Evaluation<f32> {
        out.to_evaluation(kind, self.n_splines())
    }
}

/// Reference kernel over the spline-major table with interleaved outputs.
/// Coefficient reads are strided by `N_g` and the 13 VGH components are all
/// accumulated, the mirrored Hessian entries from the same products.
fn aos_kernel<P: Probe>(
    t: &CoeffTableAoS,
    kind: KernelKind,
    pre: &Prefactors,
    out: &mut WalkerOutputsAoS,
    probe: &mut P,
) {
    let n = t.n_splines();
    let grid = t.grid();
    let ng = grid.num_points();
    let st = Stencil::new(pre, grid);
    let data = t.data();
    let v = &mut out.v[..n];
    let g = &mut out.g[..3 * n];
    let l = &mut out.l[..n];
    let h = &mut out.h[..9 * n];
    v.fill(0.0);
    match kind {
        KernelKind::V => {}
        KernelKind::Vgl => {
            g.fill(0.0);
            l.fill(0.0);
        }
        KernelKind::Vgh => {
            g.fill(0.0);
            h.fill(0.0);
        }
    }
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                let c = StencilCoefs::at(&pre.weights, i, j, k);
                let point = grid.point_index(st.x[i], st.y[j], st.z[k]);
                probe.row(n);
                match kind {
                    KernelKind::V => {
                        for s in 0..n {
                            v[s] += c.f * data[s * ng + point];
                        }
                    }
                    KernelKind::Vgl => {
                        for s in 0..n {
                            let pn = data[s * ng + point];
                            v[s] += c.f * pn;
                            g[3 * s] += c.gx * pn;
                            g[3 * s + 1] += c.gy * pn;
                            g[3 * s + 2] += c.gz * pn;
                            l[s] += c.lap * pn;
                        }
                    }
                    KernelKind::Vgh => {
                        for s in 0..n {
                            let pn = data[s * ng + point];
                            v[s] += c.f * pn;
                            g[3 * s] += c.gx * pn;
                            g[3 * s + 1] += c.gy * pn;
                            g[3 * s + 2] += c.gz * pn;
                            let hs = &mut h[9 * s..9 * s + 9];
                            hs[0] += c.hxx * pn;
                            hs[1] += c.hxy * pn;
                            hs[2] += c.hxz * pn;
                            hs[3] += c.hxy * pn;
                            hs[4] += c.hyy * pn;
                            hs[5] += c.hyz * pn;
                            hs[6] += c.hxz * pn;
                            hs[7] += c.hyz * pn;
                            hs[8] += c.hzz * pn;
                        }
                    }
                }
                probe.accumulate(kind.aos_streams() * n);
            }
        }
    }
    probe.store(kind.aos_streams() * n);
}

/// One SoA output set per tile.
#[derive(Debug, Clone, PartialEq)]
pub struct TiledOutputs {
    pub tiles: Vec<WalkerOutputsSoA>,
}

impl SplineKernels for TiledCoeffTable {
    type Outputs = TiledOutputs;

    fn new_outputs(&self) -> TiledOutputs {
        TiledOutputs {
            tiles: self.tiles().iter().map(|t| t.new_outputs()).collect(),
        }
    }

    /// Prefactors are recomputed per tile as each tile is an independent
    /// object; `pre` only fixes the position.
    fn eval_with_prefactors<P: Probe>(
        &self,
        kind: KernelKind,
        pre: &Prefactors,
        out: &mut TiledOutputs,
        probe: &mut P,
    ) -> Result<()> {
        if out.tiles.len() != self.num_tiles() {
            return Err(Error::Contract(format!(
                "{} output tiles for {} coefficient tiles",
                out.tiles.len(),
                self.num_tiles()
            )));
        }
        for (tile, tile_out) in self.tiles().iter().zip(out.tiles.iter_mut()) {
            let tile_pre = Prefactors {
                point: pre.point,
                weights: recompute_weights(pre, tile.grid()),
            };
            tile.eval_with_prefactors(kind, &tile_pre, tile_out, probe)?;
        }
        Ok(())
    }

    fn evaluation(&self, kind: KernelKind, out: &TiledOutputs) -> Evaluation<f32> {
        let mut all = Evaluation {
            kind,
            streams: vec![Vec::with_capacity(self.n_splines()); kind.soa_streams()],
        };
        for tile in &out.tiles {
            all.extend(&tile.to_evaluation(kind));
        }
        all
    }
}

fn recompute_weights(pre: &Prefactors, grid: &GridSpec) -> [BasisWeights; 3] {
    let t = pre.point.offsets();
    let d = grid.spacing();
    [0, 1, 2].map(|a| {
        crate::grid::basis_weights(t[a], d[a])
            .expect("offsets of a mapped grid point lie in [0, 1)")
    })
}

/// Evaluates every tile at `pos`; the tile outputs concatenate to the untiled
/// result.
pub fn eval_tiled(
    tiled: &TiledCoeffTable,
    kind: KernelKind,
    pos: [f64; 3],
    out: &mut [WalkerOutputsSoA],
) -> Result<()> {
    if out.len() != tiled.num_tiles() {
        return Err(Error::Contract(format!(
            "{} output tiles for {} coefficient tiles",
            out.len(),
            tiled.num_tiles()
        )));
    }
    for (tile, tile_out) in tiled.tiles().iter().zip(out.iter_mut()) {
        tile.eval(kind, pos, tile_out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff::{convert_aos_to_soa, tile_table, FillSpec};

    fn grid() -> GridSpec {
        GridSpec::cubic(8).unwrap()
    }

    #[test]
    fn constant_table_values() {
        let t = CoeffTableSoA::build(grid(), 20, FillSpec::Constant(2.5)).unwrap();
        for kind in KernelKind::ALL {
            let e = t.evaluate(kind, [1.3, 6.9, 7.7]).unwrap();
            assert!(e.streams[0].iter().all(|v| (v - 2.5).abs() < 2e-6 * 2.5));
            for s in &e.streams[1..] {
                assert!(s.iter().all(|v| v.abs() < 1e-5 * 2.5), "{kind}: {s:?}");
            }
        }
    }

    #[test]
    fn linear_index_value_and_gradient() {
        let t = CoeffTableSoA::build(grid(), 4, FillSpec::LinearIndex(0)).unwrap();
        let e = t.evaluate(KernelKind::Vgh, [3.3, 2.0, 5.5]).unwrap();
        for s in 0..4 {
            assert!((e.stream("v").unwrap()[s] - 3.3).abs() < 1e-5);
            assert!((e.stream("gx").unwrap()[s] - 1.0).abs() < 1e-5);
            assert!(e.stream("gy").unwrap()[s].abs() < 1e-5);
            assert!(e.stream("hxx").unwrap()[s].abs() < 1e-4);
        }
    }

    #[test]
    fn aos_and_soa_match_bitwise() {
        let aos = CoeffTableAoS::build(grid(), 21, FillSpec::Random(7)).unwrap();
        let soa = convert_aos_to_soa(&aos);
        for kind in KernelKind::ALL {
            let pos = [0.37, 7.91, 3.5];
            assert_eq!(
                aos.evaluate(kind, pos).unwrap(),
                soa.evaluate(kind, pos).unwrap()
            );
        }
    }

    #[test]
    fn aos_hessian_is_symmetric_bitwise() {
        let aos = CoeffTableAoS::build(grid(), 9, FillSpec::Random(5)).unwrap();
        let mut out = aos.new_outputs();
        aos.eval_vgh([2.2, 1.1, 6.6], &mut out).unwrap();
        for s in 0..9 {
            let h = &out.h[9 * s..9 * s + 9];
            assert_eq!(h[1].to_bits(), h[3].to_bits());
            assert_eq!(h[2].to_bits(), h[6].to_bits());
            assert_eq!(h[5].to_bits(), h[7].to_bits());
        }
    }

    #[test]
    fn tiled_matches_untiled_bitwise() {
        let soa = CoeffTableSoA::build(grid(), 64, FillSpec::Random(11)).unwrap();
        let tiled = tile_table(&soa, 16).unwrap();
        for kind in KernelKind::ALL {
            let pos = [5.25, 0.75, 7.125];
            let whole = soa.evaluate(kind, pos).unwrap();
            assert_eq!(tiled.evaluate(kind, pos).unwrap(), whole);
            let mut outs: Vec<_> = tiled.tiles().iter().map(|t| t.new_outputs()).collect();
            eval_tiled(&tiled, kind, pos, &mut outs).unwrap();
            let mut joined = outs[0].to_evaluation(kind);
            for o in &outs[1..] {
                joined.extend(&o.to_evaluation(kind));
            }
            assert_eq!(joined, whole);
        }
    }

    #[test]
    fn undersized_outputs_are_rejected() {
        let soa = CoeffTableSoA::build(grid(), 20, FillSpec::Constant(1.0)).unwrap();
        let mut small = WalkerOutputsSoA::new(16);
        assert!(matches!(
            soa.eval_v([0.0; 3], &mut small),
            Err(Error::Contract(_))
        ));

        let aos = CoeffTableAoS::build(grid(), 20, FillSpec::Constant(1.0)).unwrap();
        let mut small = WalkerOutputsAoS::new(19);
        assert!(matches!(
            aos.eval_vgh([0.0; 3], &mut small),
            Err(Error::Contract(_))
        ));

        let tiled = tile_table(&soa, 10).unwrap();
        let mut outs = vec![WalkerOutputsSoA::new(10)];
        assert!(matches!(
            eval_tiled(&tiled, KernelKind::V, [0.0; 3], &mut outs),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn non_finite_position_is_rejected() {
        let soa = CoeffTableSoA::build(grid(), 4, FillSpec::Constant(1.0)).unwrap();
        let mut out = soa.new_outputs();
        assert!(matches!(
            soa.eval_v([f64::NAN, 0.0, 0.0], &mut out),
            Err(Error::InputDomain(_))
        ));
    }

    #[test]
    fn access_counts_per_kernel() {
        let n = 48;
        let soa = CoeffTableSoA::build(grid(), n, FillSpec::Random(1)).unwrap();
        let aos = soa.to_aos();
        for kind in KernelKind::ALL {
            let mut out = soa.new_outputs();
            let c = soa
                .eval_instrumented(kind, [1.5, 2.5, 3.5], &mut out)
                .unwrap();
            assert_eq!(c.rows, 64);
            assert_eq!(c.coeff_reads, 64 * n as u64);
            assert_eq!(c.output_writes, (kind.soa_streams() * n) as u64);
            assert_eq!(c.accumulations, (64 * kind.soa_streams() * n) as u64);

            let mut out = aos.new_outputs();
            let c = aos
                .eval_instrumented(kind, [1.5, 2.5, 3.5], &mut out)
                .unwrap();
            assert_eq!(c.coeff_reads, 64 * n as u64);
            assert_eq!(c.output_writes, (kind.aos_streams() * n) as u64);
        }
    }

    #[test]
    fn padded_output_lanes_stay_zero() {
        let soa = CoeffTableSoA::build(grid(), 5, FillSpec::Random(2)).unwrap();
        let mut out = soa.new_outputs();
        soa.eval_vgh([1.0, 2.0, 3.0], &mut out).unwrap();
        assert!(out.v[5..].iter().all(|&x| x == 0.0));
        assert!(out.hzz[5..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn kernel_kind_parsing() {
        assert_eq!("VgH".parse::<KernelKind>().unwrap(), KernelKind::Vgh);
        assert!("vg".parse::<KernelKind>().is_err());
        assert_eq!(
            KernelKind::Vgl.stream_names().len(),
            KernelKind::Vgl.soa_streams()
        );
        assert_eq!(
            KernelKind::Vgh.stream_names().len(),
            KernelKind::Vgh.soa_streams()
        );
    }
}
