//! Deterministic reference encoder.
//!
//! BC1: endpoints start at the extremes of the texels projected on the
//! principal axis (8 power iterations from `(1,1,1)/sqrt(3)`), are quantized
//! to RGB565, and are refined by least squares over the current index
//! assignment. BC4 does the same from min/max in both palette modes and keeps
//! the better one. Every candidate is scored on its actual decoded palette and
//! the lowest-error candidate wins, so refinement never makes a block worse.
//! Final indices are the per-texel nearest palette entry, ties to the lower
//! linear index.

use super::*;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct EncodeOptions {
    pub refine_steps: usize,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        EncodeOptions { refine_steps: 2 }
    }
}

const POWER_ITERATIONS: usize = 8;

#[inline]
fn dist2_3(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Nearest entry, ties to the lowest index.
fn nearest<T>(palette: &[T], value: &T, dist: impl Fn(&T, &T) -> f32) -> (usize, f32) {
    let mut best = (0, dist(&palette[0], value));
    for (n, p) in palette.iter().enumerate().skip(1) {
        let d = dist(p, value);
        if d < best.1 {
            best = (n, d);
        }
    }
    best
}

fn principal_axis(texels: &[[f32; 3]; 16]) -> Option<([f32; 3], [f32; 3])> {
    let mut mean = [0.0f32; 3];
    for t in texels {
        for c in 0..3 {
            mean[c] += t[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= 16.0);
    let mut cov = [[0.0f32; 3]; 3];
    for t in texels {
        let d = [t[0] - mean[0], t[1] - mean[1], t[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    if cov.iter().flatten().all(|v| v.abs() < 1e-12) {
        return None;
    }
    let mul =
        |v: [f32; 3]| -> [f32; 3] { std::array::from_fn(|i| cov[i][0] * v[0] + cov[i][1] * v[1] + cov[i][2] * v[2]) };
    let norm = |v: &[f32; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let mut v = [1.0f32 / 3f32.sqrt(); 3];
    if norm(&mul(v)) < 1e-12 {
        // The diagonal start is orthogonal to the spread (e.g. red vs blue);
        // restart from the covariance column with the largest norm.
        v = *cov.iter().max_by(|a, b| norm(a).total_cmp(&norm(b))).unwrap();
    }
    for _ in 0..POWER_ITERATIONS {
        let next = mul(v);
        let n = norm(&next);
        if n < 1e-12 {
            return None;
        }
        v = next.map(|x| x / n);
    }
    Some((mean, v))
}

fn bc1_initial_endpoints(texels: &[[f32; 3]; 16]) -> ([f32; 3], [f32; 3]) {
    match principal_axis(texels) {
        Some((mean, axis)) => {
            let proj =
                |t: &[f32; 3]| (t[0] - mean[0]) * axis[0] + (t[1] - mean[1]) * axis[1] + (t[2] - mean[2]) * axis[2];
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for t in texels {
                let p = proj(t);
                lo = lo.min(p);
                hi = hi.max(p);
            }
            let at = |s: f32| std::array::from_fn(|c| (mean[c] + s * axis[c]).clamp(0.0, 1.0));
            (at(hi), at(lo))
        }
        None => {
            let mut lo = [f32::INFINITY; 3];
            let mut hi = [f32::NEG_INFINITY; 3];
            for t in texels {
                for c in 0..3 {
                    lo[c] = lo[c].min(t[c]);
                    hi[c] = hi[c].max(t[c]);
                }
            }
            (hi, lo)
        }
    }
}

/// Least-squares endpoints for fixed interpolation weights; `None` when the
/// 2x2 normal matrix is singular.
fn solve_endpoints<const C: usize>(samples: impl Iterator<Item = ([f32; C], f32)>) -> Option<([f32; C], [f32; C])> {
    let (mut aa, mut ab, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    let mut ra = [0.0f64; C];
    let mut rb = [0.0f64; C];
    for (x, w) in samples {
        let (w, u) = (w as f64, 1.0 - w as f64);
        aa += u * u;
        ab += u * w;
        bb += w * w;
        for c in 0..C {
            ra[c] += u * x[c] as f64;
            rb[c] += w * x[c] as f64;
        }
    }
    let det = aa * bb - ab * ab;
    if det.abs() < 1e-9 {
        return None;
    }
    let a = std::array::from_fn(|c| (((bb * ra[c] - ab * rb[c]) / det) as f32).clamp(0.0, 1.0));
    let b = std::array::from_fn(|c| (((aa * rb[c] - ab * ra[c]) / det) as f32).clamp(0.0, 1.0));
    Some((a, b))
}

/// Orders the codes for four-color mode and assigns optimal indices.
fn finalize_bc1(q0: u16, q1: u16, texels: &[[f32; 3]; 16]) -> (Bc1Block, f32) {
    let (q0, q1) = if q0 < q1 { (q1, q0) } else { (q0, q1) };
    if q0 == q1 {
        let c = rgb565_decode(q0);
        let err = texels.iter().map(|t| dist2_3(t, &c)).sum();
        return (
            Bc1Block {
                color0: q0,
                color1: q1,
                indices: 0,
            },
            err,
        );
    }
    let pal = palette_bc1(rgb565_decode(q0), rgb565_decode(q1));
    let mut codes = [0u8; 16];
    let mut err = 0.0;
    for (i, t) in texels.iter().enumerate() {
        let (n, d) = nearest(&pal, t, dist2_3);
        codes[i] = BC1_L2S[n];
        err += d;
    }
    (Bc1Block::with_stored_indices(q0, q1, &codes), err)
}

pub fn encode_block_bc1(texels: &[[f32; 3]; 16], opts: EncodeOptions) -> Bc1Block {
    let (mut a, mut b) = bc1_initial_endpoints(texels);
    let mut best: Option<(Bc1Block, f32)> = None;
    for step in 0..=opts.refine_steps {
        let (qa, qb) = (rgb565_encode(a), rgb565_encode(b));
        let candidate = finalize_bc1(qa, qb, texels);
        if best.as_ref().is_none_or(|(_, e)| candidate.1 < *e) {
            best = Some(candidate);
        }
        if step == opts.refine_steps {
            break;
        }
        // Refit in the working orientation (qa -> qb).
        let pal = palette_bc1(rgb565_decode(qa), rgb565_decode(qb));
        let w = bc1_weights::<f32>();
        let assigned = texels.iter().map(|t| (*t, w[nearest(&pal, t, dist2_3).0]));
        match solve_endpoints::<3>(assigned) {
            Some((na, nb)) => (a, b) = (na, nb),
            None => break,
        }
    }
    best.unwrap().0
}

fn finalize_bc4(q0: u8, q1: u8, texels: &[f32; 16]) -> (Bc4Block, f32) {
    let mode = Bc4Mode::from_endpoints(q0, q1);
    let pal = palette_bc4_mode(mode, unorm8_decode(q0), unorm8_decode(q1));
    let l2s = index_table(BcFormat::Bc4, mode, true);
    let mut codes = [0u8; 16];
    let mut err = 0.0;
    for (i, t) in texels.iter().enumerate() {
        let (n, d) = nearest(&pal, t, |p, v| (p - v) * (p - v));
        codes[i] = l2s[n];
        err += d;
    }
    (Bc4Block::with_stored_indices(q0, q1, &codes), err)
}

fn bc4_search(
    texels: &[f32; 16],
    mode: Bc4Mode,
    start: (f32, f32),
    opts: EncodeOptions,
    best: &mut Option<(Bc4Block, f32)>,
) {
    let (mut a, mut b) = start;
    for step in 0..=opts.refine_steps {
        let (mut qa, mut qb) = (unorm8_encode(a), unorm8_encode(b));
        // Keep the code order that selects the intended mode where possible.
        let swap = match mode {
            Bc4Mode::Interpolated8 => qa < qb,
            Bc4Mode::Interpolated6 => qa > qb,
        };
        if swap {
            std::mem::swap(&mut qa, &mut qb);
        }
        let candidate = finalize_bc4(qa, qb, texels);
        if best.as_ref().is_none_or(|(_, e)| candidate.1 < *e) {
            *best = Some(candidate);
        }
        if step == opts.refine_steps {
            break;
        }
        let (ea, eb) = (unorm8_decode(qa), unorm8_decode(qb));
        let actual = Bc4Mode::from_endpoints(qa, qb);
        let pal = palette_bc4_mode(actual, ea, eb);
        let w = bc4_slot_weights_mode(actual, ea, eb);
        let assigned = texels.iter().filter_map(|t| {
            let n = nearest(&pal, t, |p, v| (p - v) * (p - v)).0;
            // The constant slots of the six-value mode do not depend on the endpoints.
            let constant = actual == Bc4Mode::Interpolated6 && (n == 0 || n == 7);
            (!constant).then_some(([*t], w[n]))
        });
        match solve_endpoints::<1>(assigned) {
            Some((na, nb)) => (a, b) = (na[0], nb[0]),
            None => break,
        }
    }
}

pub fn encode_block_bc4(texels: &[f32; 16], opts: EncodeOptions) -> Bc4Block {
    let lo = texels.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = texels.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut best = None;
    bc4_search(texels, Bc4Mode::Interpolated8, (hi, lo), opts, &mut best);
    // The six-value mode spans only the texels that 0 and 1 do not cover.
    let inner = texels.iter().copied().filter(|&v| v > 0.0 && v < 1.0);
    let ilo = inner.clone().fold(f32::INFINITY, f32::min);
    let ihi = inner.fold(f32::NEG_INFINITY, f32::max);
    let start6 = if ilo.is_finite() { (ilo, ihi) } else { (lo, hi) };
    bc4_search(texels, Bc4Mode::Interpolated6, start6, opts, &mut best);
    best.unwrap().0
}

/// Encodes one block; BC4 reads component 0 of each texel.
pub fn encode_block_reference(texels: &[[f32; 3]; 16], format: BcFormat) -> Block {
    encode_block_with(texels, format, EncodeOptions::default())
}

fn encode_block_with(texels: &[[f32; 3]; 16], format: BcFormat, opts: EncodeOptions) -> Block {
    match format {
        BcFormat::Bc1 => Block::Bc1(encode_block_bc1(texels, opts)),
        BcFormat::Bc4 => {
            let s: [f32; 16] = std::array::from_fn(|i| texels[i][0]);
            Block::Bc4(encode_block_bc4(&s, opts))
        }
    }
}

/// RGB textures become BC1 surfaces and single-channel textures BC4.
pub fn encode_texture_reference(tex: &Texture) -> BlockSurface {
    encode_texture_with(tex, EncodeOptions::default())
}

pub fn encode_texture_with(tex: &Texture, opts: EncodeOptions) -> BlockSurface {
    let (bw, bh) = (tex.blocks_w(), tex.blocks_h());
    let format = BcFormat::for_kind(tex.kind());
    let encode_one = |i: usize| encode_block_with(&tex.block(i % bw, i / bw), format, opts);
    #[cfg(feature = "parallel")]
    let blocks: Vec<Block> = {
        use rayon::prelude::*;
        (0..bw * bh).into_par_iter().map(encode_one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let blocks: Vec<Block> = (0..bw * bh).map(encode_one).collect();
    let data = match format {
        BcFormat::Bc1 => BlockData::Bc1(
            blocks
                .into_iter()
                .map(|b| match b {
                    Block::Bc1(b) => b,
                    Block::Bc4(_) => unreachable!(),
                })
                .collect(),
        ),
        BcFormat::Bc4 => BlockData::Bc4(
            blocks
                .into_iter()
                .map(|b| match b {
                    Block::Bc4(b) => b,
                    Block::Bc1(_) => unreachable!(),
                })
                .collect(),
        ),
    };
    BlockSurface::new(bw, bh, data).expect("texture dimensions are multiples of 4")
}
