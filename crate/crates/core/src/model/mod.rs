//! Feature grids plus MLPs predicting BC blocks for every texture of a
//! material: head layouts, inference to block surfaces and checkpoints.
//!
//! Heads are ordered RGB textures first, then single-channel textures, each
//! group in manifest order. The endpoint head holds `e0, e1` per texture
//! (3 + 3 or 1 + 1 values); the color head holds 3 or 1 values per texture;
//! the naive weight head holds one value per texture.

mod checkpoint;
pub mod loss;
pub mod ste;

pub use checkpoint::{checkpoint_size, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{HeadTarget, LossConfig, LossParts};
pub use ste::{DistanceSet, MAX_SLOTS};

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bc_codec::{
    bc1_weights, bc4_slot_weights_mode, linear_to_stored, palette_bc1, palette_bc4_mode, rgb565_decode, rgb565_encode,
    unorm8_decode, unorm8_encode, Bc1Block, Bc4Block, Bc4Mode, BcFormat, BlockData, BlockSurface,
};
use crate::error::{Error, Result};
use crate::feature_grid::{FeatureGrid, GridConfig};
use crate::nn::{Mlp, MlpCache};
use crate::real::Real;
use crate::texture_io::TextureKind;
use ste::{compute_distances_rgb, compute_distances_single, quantize_weight, select_index};

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Approach {
    /// Endpoints plus continuous per-texel weights, quantized afterwards.
    Naive,
    /// Endpoints plus per-texel colors; indices come from palette distances.
    Ntbc,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Layout {
    /// RGB textures only.
    ConservativeRgb,
    /// Single-channel textures only.
    ConservativeSingle,
    /// Every texture of the material in one model.
    Aggressive,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::Naive => "naive",
            Approach::Ntbc => "ntbc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "naive" => Some(Approach::Naive),
            "ntbc" => Some(Approach::Ntbc),
            _ => None,
        }
    }
}

impl Layout {
    pub fn as_str(self) -> &'static str {
        match self {
            Layout::ConservativeRgb => "conservative-rgb",
            Layout::ConservativeSingle => "conservative-sc",
            Layout::Aggressive => "aggressive",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct ModelMode {
    pub approach: Approach,
    pub layout: Layout,
    pub n_rgb: usize,
    pub n_sc: usize,
}

impl fmt::Display for ModelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{} (rgb {}, sc {})",
            self.approach.as_str(),
            self.layout.as_str(),
            self.n_rgb,
            self.n_sc
        )
    }
}

impl ModelMode {
    pub fn new(approach: Approach, layout: Layout, n_rgb: usize, n_sc: usize) -> Result<Self> {
        let mode = ModelMode {
            approach,
            layout,
            n_rgb,
            n_sc,
        };
        if mode.head_count() == 0 {
            return Err(Error::Config(format!("{mode} has no texture heads")));
        }
        Ok(mode)
    }

    pub fn rgb_heads(&self) -> usize {
        match self.layout {
            Layout::ConservativeSingle => 0,
            _ => self.n_rgb,
        }
    }

    pub fn sc_heads(&self) -> usize {
        match self.layout {
            Layout::ConservativeRgb => 0,
            _ => self.n_sc,
        }
    }

    pub fn head_count(&self) -> usize {
        self.rgb_heads() + self.sc_heads()
    }

    pub fn head_kinds(&self) -> Vec<TextureKind> {
        let mut v = vec![TextureKind::Rgb; self.rgb_heads()];
        v.extend(std::iter::repeat_n(TextureKind::Single, self.sc_heads()));
        v
    }

    pub fn endpoint_width(&self) -> usize {
        6 * self.rgb_heads() + 2 * self.sc_heads()
    }

    pub fn color_width(&self) -> usize {
        3 * self.rgb_heads() + self.sc_heads()
    }

    pub fn weight_width(&self) -> usize {
        self.head_count()
    }

    /// Output width of the texel-side network.
    pub fn second_width(&self) -> usize {
        match self.approach {
            Approach::Ntbc => self.color_width(),
            Approach::Naive => self.weight_width(),
        }
    }

    /// BC1 distance slots: the aggressive model shares an 8-slot layout with
    /// BC4, the last four slots of BC1 heads being dummies.
    pub fn bc1_slots(&self) -> usize {
        match self.layout {
            Layout::Aggressive => 8,
            _ => 4,
        }
    }

    /// Indices into a material's texture list, in head order.
    pub fn head_textures(&self, kinds: &[TextureKind]) -> Result<Vec<usize>> {
        let pick = |k: TextureKind| kinds.iter().enumerate().filter(move |(_, &x)| x == k);
        let mut out: Vec<usize> = pick(TextureKind::Rgb).map(|(i, _)| i).collect();
        if out.len() != self.n_rgb || pick(TextureKind::Single).count() != self.n_sc {
            return Err(Error::Config(format!(
                "model {self} does not match a material with {} RGB and {} single-channel textures",
                out.len(),
                pick(TextureKind::Single).count()
            )));
        }
        if self.rgb_heads() == 0 {
            out.clear();
        }
        if self.sc_heads() > 0 {
            out.extend(pick(TextureKind::Single).map(|(i, _)| i));
        }
        Ok(out)
    }

    /// The models a layout choice needs for a material: one aggressive model,
    /// or one conservative model per texture kind present.
    pub fn for_material(approach: Approach, aggressive: bool, n_rgb: usize, n_sc: usize) -> Vec<Self> {
        if aggressive {
            return ModelMode::new(approach, Layout::Aggressive, n_rgb, n_sc)
                .into_iter()
                .collect();
        }
        [Layout::ConservativeRgb, Layout::ConservativeSingle]
            .into_iter()
            .filter_map(|l| ModelMode::new(approach, l, n_rgb, n_sc).ok())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NtbcModel<R> {
    pub mode: ModelMode,
    pub block_grid: FeatureGrid<R>,
    pub texel_grid: FeatureGrid<R>,
    pub endpoint_net: Mlp<R>,
    /// Color network (NTBC) or weight network (naive).
    pub second_net: Mlp<R>,
    pub temperature: f64,
}

impl<R: Real> NtbcModel<R> {
    /// Fresh model: grids uniform in `[-1e-4, 1e-4]`, He-initialized MLPs, all
    /// drawn from one stream seeded by `seed`.
    pub fn new(mode: ModelMode, block: GridConfig, texel: GridConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block_grid = FeatureGrid::random(block, &mut rng);
        let texel_grid = FeatureGrid::random(texel, &mut rng);
        let endpoint_net = Mlp::he(block.output_dim(), mode.endpoint_width(), &mut rng);
        let second_net = Mlp::he(texel.output_dim(), mode.second_width(), &mut rng);
        NtbcModel {
            mode,
            block_grid,
            texel_grid,
            endpoint_net,
            second_net,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Shape(format!("{what} does not match mode {}", self.mode)))
            }
        };
        check(
            self.endpoint_net.input_dim() == self.block_grid.output_dim(),
            "endpoint network input",
        )?;
        check(
            self.second_net.input_dim() == self.texel_grid.output_dim(),
            "texel network input",
        )?;
        check(
            self.endpoint_net.output_dim() == self.mode.endpoint_width(),
            "endpoint network output",
        )?;
        check(
            self.second_net.output_dim() == self.mode.second_width(),
            "texel network output",
        )?;
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    /// Endpoint head for a normalized block center.
    pub fn infer_endpoints(&self, st: [R; 2]) -> Vec<R> {
        let x = self.block_grid.encode_vec(st);
        self.endpoint_net.forward(&x).expect("grid matches network")
    }

    /// Color (or weight) head for a normalized texel center.
    pub fn infer_second(&self, uv: [R; 2]) -> Vec<R> {
        let x = self.texel_grid.encode_vec(uv);
        self.second_net.forward(&x).expect("grid matches network")
    }

    /// One block surface per head for a `width x height` material.
    pub fn infer_surfaces(&self, width: usize, height: usize) -> Result<Vec<BlockSurface>> {
        if width == 0 || height == 0 || !width.is_multiple_of(4) || !height.is_multiple_of(4) {
            return Err(Error::Dimensions {
                width,
                height,
                reason: "inference needs a positive multiple of 4",
            });
        }
        let (bw, bh) = (width / 4, height / 4);
        let rows: Vec<Vec<Vec<BlockOut>>> = self.map_rows(bh, |by| self.infer_row(by, bw, bh, width, height));
        let kinds = self.mode.head_kinds();
        let mut surfaces = Vec::with_capacity(kinds.len());
        for (h, kind) in kinds.iter().enumerate() {
            let data = match kind {
                TextureKind::Rgb => BlockData::Bc1(
                    rows.iter()
                        .flat_map(|r| {
                            r[h].iter().map(|b| match b {
                                BlockOut::Bc1(b) => *b,
                                BlockOut::Bc4(_) => unreachable!(),
                            })
                        })
                        .collect(),
                ),
                TextureKind::Single => BlockData::Bc4(
                    rows.iter()
                        .flat_map(|r| {
                            r[h].iter().map(|b| match b {
                                BlockOut::Bc4(b) => *b,
                                BlockOut::Bc1(_) => unreachable!(),
                            })
                        })
                        .collect(),
                ),
            };
            surfaces.push(BlockSurface::new(bw, bh, data)?);
        }
        Ok(surfaces)
    }

    #[cfg(feature = "parallel")]
    fn map_rows<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }

    #[cfg(not(feature = "parallel"))]
    fn map_rows<T>(&self, n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
        (0..n).map(f).collect()
    }

    /// Blocks of one row, per head.
    fn infer_row(&self, by: usize, bw: usize, bh: usize, width: usize, height: usize) -> Vec<Vec<BlockOut>> {
        let bdim = self.block_grid.output_dim();
        let mut xb = vec![R::zero(); bw * bdim];
        let t = R::lit((by as f64 + 0.5) / bh as f64);
        for bx in 0..bw {
            let s = R::lit((bx as f64 + 0.5) / bw as f64);
            self.block_grid.encode([s, t], &mut xb[bx * bdim..(bx + 1) * bdim]);
        }
        let mut cache = MlpCache::default();
        self.endpoint_net.forward_batch(&xb, bw, &mut cache).expect("shape");
        let endpoints = cache.output().to_vec();

        // Texels of the row in block order: block bx, texel ty*4+tx.
        let tdim = self.texel_grid.output_dim();
        let mut xt = vec![R::zero(); bw * 16 * tdim];
        for bx in 0..bw {
            for i in 0..16 {
                let (x, y) = (bx * 4 + i % 4, by * 4 + i / 4);
                let uv = [
                    R::lit((x as f64 + 0.5) / width as f64),
                    R::lit((y as f64 + 0.5) / height as f64),
                ];
                let k = bx * 16 + i;
                self.texel_grid.encode(uv, &mut xt[k * tdim..(k + 1) * tdim]);
            }
        }
        let mut tcache = MlpCache::default();
        self.second_net.forward_batch(&xt, bw * 16, &mut tcache).expect("shape");
        let second = tcache.output();

        let (ew, sw) = (self.mode.endpoint_width(), self.mode.second_width());
        let kinds = self.mode.head_kinds();
        let mut out: Vec<Vec<BlockOut>> = vec![Vec::with_capacity(bw); kinds.len()];
        for bx in 0..bw {
            let e = &endpoints[bx * ew..(bx + 1) * ew];
            let s = &second[bx * 16 * sw..(bx + 1) * 16 * sw];
            let blocks = encode_block_from_heads(&self.mode, e, s);
            for (h, b) in blocks.into_iter().enumerate() {
                out[h].push(b);
            }
        }
        out
    }

    pub fn cast<S: Real>(&self) -> NtbcModel<S> {
        NtbcModel {
            mode: self.mode,
            block_grid: self.block_grid.cast(),
            texel_grid: self.texel_grid.cast(),
            endpoint_net: self.endpoint_net.cast(),
            second_net: self.second_net.cast(),
            temperature: self.temperature,
        }
    }
}

/// One emitted block of one head.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum BlockOut {
    Bc1(Bc1Block),
    Bc4(Bc4Block),
}

/// Builds the blocks of every head from the raw network outputs of one
/// block: the endpoint head and 16 texel rows of the second head.
///
/// Endpoints are quantized to their stored precision first; the palette of
/// the stored endpoints decides the indices. BC1 code pairs are swapped into
/// four-color order when needed (equal codes give an all-zero-index block).
pub fn encode_block_from_heads<R: Real>(mode: &ModelMode, endpoints: &[R], second: &[R]) -> Vec<BlockOut> {
    let sw = mode.second_width();
    let mut out = Vec::with_capacity(mode.head_count());
    let (mut eoff, mut coff) = (0, 0);
    for (h, kind) in mode.head_kinds().into_iter().enumerate() {
        let ch = kind.channels();
        let f = |v: R| v.to_f32_lossy();
        match kind {
            TextureKind::Rgb => {
                let e0 = [f(endpoints[eoff]), f(endpoints[eoff + 1]), f(endpoints[eoff + 2])];
                let e1 = [f(endpoints[eoff + 3]), f(endpoints[eoff + 4]), f(endpoints[eoff + 5])];
                let (mut c0, mut c1) = (rgb565_encode(e0), rgb565_encode(e1));
                let swapped = c0 < c1;
                if swapped {
                    std::mem::swap(&mut c0, &mut c1);
                }
                if c0 == c1 {
                    out.push(BlockOut::Bc1(Bc1Block {
                        color0: c0,
                        color1: c1,
                        indices: 0,
                    }));
                } else {
                    let pal = palette_bc1(rgb565_decode(c0), rgb565_decode(c1));
                    let w = bc1_weights::<f32>();
                    let codes: [u8; 16] = std::array::from_fn(|i| {
                        let row = &second[i * sw..(i + 1) * sw];
                        let n = match mode.approach {
                            Approach::Ntbc => {
                                let c = [f(row[coff]), f(row[coff + 1]), f(row[coff + 2])];
                                select_index(&compute_distances_rgb(c, &pal, mode.bc1_slots()))
                            }
                            Approach::Naive => {
                                let wf = f(row[h]);
                                quantize_weight(if swapped { 1.0 - wf } else { wf }, &w)
                            }
                        };
                        linear_to_stored(BcFormat::Bc1, Bc4Mode::Interpolated8, n).unwrap()
                    });
                    out.push(BlockOut::Bc1(Bc1Block::with_stored_indices(c0, c1, &codes)));
                }
            }
            TextureKind::Single => {
                let (c0, c1) = (unorm8_encode(f(endpoints[eoff])), unorm8_encode(f(endpoints[eoff + 1])));
                let (d0, d1) = (unorm8_decode(c0), unorm8_decode(c1));
                let bmode = Bc4Mode::from_endpoints(c0, c1);
                let pal = palette_bc4_mode(bmode, d0, d1);
                let w = bc4_slot_weights_mode(bmode, d0, d1);
                let codes: [u8; 16] = std::array::from_fn(|i| {
                    let row = &second[i * sw..(i + 1) * sw];
                    let n = match mode.approach {
                        Approach::Ntbc => select_index(&compute_distances_single(f(row[coff]), &pal, MAX_SLOTS)),
                        Approach::Naive => quantize_weight(f(row[h]), &w),
                    };
                    linear_to_stored(BcFormat::Bc4, bmode, n).unwrap()
                });
                out.push(BlockOut::Bc4(Bc4Block::with_stored_indices(c0, c1, &codes)));
            }
        }
        eoff += 2 * ch;
        coff += ch;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_widths_follow_layout() {
        for approach in [Approach::Naive, Approach::Ntbc] {
            for n_rgb in 0..=4 {
                for n_sc in 0..=4 {
                    for layout in [Layout::ConservativeRgb, Layout::ConservativeSingle, Layout::Aggressive] {
                        let Ok(m) = ModelMode::new(approach, layout, n_rgb, n_sc) else {
                            continue;
                        };
                        let (e, c, w) = match layout {
                            Layout::ConservativeRgb => (6 * n_rgb, 3 * n_rgb, n_rgb),
                            Layout::ConservativeSingle => (2 * n_sc, n_sc, n_sc),
                            Layout::Aggressive => (6 * n_rgb + 2 * n_sc, 3 * n_rgb + n_sc, n_rgb + n_sc),
                        };
                        assert_eq!((m.endpoint_width(), m.color_width(), m.weight_width()), (e, c, w));
                    }
                }
            }
        }
        assert!(ModelMode::new(Approach::Ntbc, Layout::ConservativeRgb, 0, 3).is_err());
    }

    #[test]
    fn head_order_puts_rgb_first() {
        use TextureKind::*;
        let kinds = [Single, Rgb, Single, Rgb];
        let m = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 2, 2).unwrap();
        assert_eq!(m.head_textures(&kinds).unwrap(), vec![1, 3, 0, 2]);
        let m = ModelMode::new(Approach::Ntbc, Layout::ConservativeSingle, 2, 2).unwrap();
        assert_eq!(m.head_textures(&kinds).unwrap(), vec![0, 2]);
        let m = ModelMode::new(Approach::Ntbc, Layout::ConservativeRgb, 1, 2).unwrap();
        assert!(m.head_textures(&kinds).is_err());
        assert_eq!(ModelMode::for_material(Approach::Ntbc, false, 2, 0).len(), 1);
        assert_eq!(ModelMode::for_material(Approach::Ntbc, false, 2, 4).len(), 2);
    }

    #[test]
    fn emitted_blocks_are_valid_and_nearest() {
        let m = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 1, 1).unwrap();
        // e0 < e1 for the RGB head forces a swap.
        let e = [0.1f32, 0.2, 0.3, 0.9, 0.8, 0.7, 0.3, 0.6];
        let second: Vec<f32> = (0..16)
            .flat_map(|i| {
                let v = i as f32 / 15.0;
                [v, v, v, v]
            })
            .collect();
        let blocks = encode_block_from_heads(&m, &e, &second);
        let BlockOut::Bc1(b1) = blocks[0] else { panic!() };
        assert!(b1.satisfies_mode_invariant());
        let pal = b1.stored_palette();
        for (i, texel) in b1.decode().iter().enumerate() {
            let v = i as f32 / 15.0;
            let d = |p: &[f32; 3]| p.iter().map(|x| (x - v) * (x - v)).sum::<f32>();
            let best = pal.iter().map(d).fold(f32::INFINITY, f32::min);
            assert!((d(texel) - best).abs() < 1e-6);
        }
        let BlockOut::Bc4(b4) = blocks[1] else { panic!() };
        assert_eq!(b4.mode(), Bc4Mode::Interpolated6);
        for (i, &dec) in b4.decode().iter().enumerate() {
            let v = i as f32 / 15.0;
            let best = b4
                .stored_palette()
                .iter()
                .map(|p| (p - v).abs())
                .fold(f32::INFINITY, f32::min);
            assert!(((dec - v).abs() - best).abs() < 1e-6);
        }
    }

    #[test]
    fn fresh_model_shapes_and_determinism() {
        let m = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 1, 2).unwrap();
        let g = GridConfig::new(2, 4, 2).unwrap();
        let a = NtbcModel::<f32>::new(m, g, g, 9);
        let b = NtbcModel::<f32>::new(m, g, g, 9);
        assert_eq!(a, b);
        a.validate().unwrap();
        let e = a.infer_endpoints([0.3, 0.6]);
        assert_eq!(e.len(), 10);
        assert!(e.iter().all(|&v| v > 0.0 && v < 1.0));
        let s = a.infer_surfaces(16, 8).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s, b.infer_surfaces(16, 8).unwrap());
        assert_eq!(s[0].format(), BcFormat::Bc1);
        assert_eq!((s[2].blocks_w(), s[2].blocks_h()), (4, 2));
    }
}
