//! BC1 and BC4 block formats.
//!
//! Palettes are expressed in a *linear* index order `n` where the entry is
//! `(1 - w_n) * e0 + w_n * e1`; the DirectX storage order differs and is
//! bridged by [`linear_to_stored`] / [`stored_to_linear`].
//!
//! RGB565 endpoints expand as `r / 31`, `g / 63`, `b / 31`, and palette
//! entries are computed in floating point rather than with the integer
//! rounding some hardware decoders apply.

mod dds;
mod encode;

pub use dds::{dds_read, dds_read_bytes, dds_write, dds_write_bytes, DDS_HEADER_LEN};
pub use encode::{
    encode_block_bc1, encode_block_bc4, encode_block_reference, encode_texture_reference, encode_texture_with,
    EncodeOptions,
};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::texture_io::{Texture, TextureKind};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum BcFormat {
    Bc1,
    Bc4,
}

impl BcFormat {
    pub fn for_kind(kind: TextureKind) -> Self {
        match kind {
            TextureKind::Rgb => BcFormat::Bc1,
            TextureKind::Single => BcFormat::Bc4,
        }
    }

    pub fn kind(self) -> TextureKind {
        match self {
            BcFormat::Bc1 => TextureKind::Rgb,
            BcFormat::Bc4 => TextureKind::Single,
        }
    }

    pub fn palette_len(self) -> usize {
        match self {
            BcFormat::Bc1 => 4,
            BcFormat::Bc4 => 8,
        }
    }
}

/// BC4 palette mode, selected by comparing the two stored endpoints.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Bc4Mode {
    /// `endpoint0 > endpoint1`: eight interpolated values, `w_n = n / 7`.
    Interpolated8,
    /// `endpoint0 <= endpoint1`: six interpolated values plus constants 0 and 1.
    Interpolated6,
}

impl Bc4Mode {
    pub fn from_endpoints<F: PartialOrd>(e0: F, e1: F) -> Self {
        if e0 > e1 {
            Bc4Mode::Interpolated8
        } else {
            Bc4Mode::Interpolated6
        }
    }
}

const BC1_L2S: [u8; 4] = [0, 2, 3, 1];
const BC1_S2L: [u8; 4] = [0, 3, 1, 2];
const BC4_8_L2S: [u8; 8] = [0, 2, 3, 4, 5, 6, 7, 1];
const BC4_8_S2L: [u8; 8] = [0, 7, 1, 2, 3, 4, 5, 6];
const BC4_6_L2S: [u8; 8] = [6, 0, 2, 3, 4, 5, 1, 7];
const BC4_6_S2L: [u8; 8] = [1, 6, 2, 3, 4, 5, 0, 7];

fn index_table(format: BcFormat, mode: Bc4Mode, to_stored: bool) -> &'static [u8] {
    match (format, mode, to_stored) {
        (BcFormat::Bc1, _, true) => &BC1_L2S,
        (BcFormat::Bc1, _, false) => &BC1_S2L,
        (BcFormat::Bc4, Bc4Mode::Interpolated8, true) => &BC4_8_L2S,
        (BcFormat::Bc4, Bc4Mode::Interpolated8, false) => &BC4_8_S2L,
        (BcFormat::Bc4, Bc4Mode::Interpolated6, true) => &BC4_6_L2S,
        (BcFormat::Bc4, Bc4Mode::Interpolated6, false) => &BC4_6_S2L,
    }
}

/// Maps a linear palette index to the stored DirectX code. `mode` is ignored
/// for BC1.
pub fn linear_to_stored(format: BcFormat, mode: Bc4Mode, n: usize) -> Result<u8> {
    index_table(format, mode, true)
        .get(n)
        .copied()
        .ok_or(Error::IndexOutOfRange {
            index: n,
            what: "linear palette index",
        })
}

pub fn stored_to_linear(format: BcFormat, mode: Bc4Mode, code: usize) -> Result<u8> {
    index_table(format, mode, false)
        .get(code)
        .copied()
        .ok_or(Error::IndexOutOfRange {
            index: code,
            what: "stored palette code",
        })
}

#[inline]
fn lerp<F: Float>(a: F, b: F, w: F) -> F {
    (F::one() - w) * a + w * b
}

fn lit<F: Float>(v: f64) -> F {
    F::from(v).unwrap()
}

pub fn bc1_weights<F: Float>() -> [F; 4] {
    [F::zero(), lit(1.0 / 3.0), lit(2.0 / 3.0), F::one()]
}

/// Palette `c_n = (1 - n/3) e0 + (n/3) e1`.
pub fn palette_bc1<F: Float>(e0: [F; 3], e1: [F; 3]) -> [[F; 3]; 4] {
    let w = bc1_weights::<F>();
    let mut out = [[F::zero(); 3]; 4];
    for (n, entry) in out.iter_mut().enumerate() {
        for c in 0..3 {
            entry[c] = lerp(e0[c], e1[c], w[n]);
        }
    }
    out
}

/// BC4 palette with the mode chosen from the endpoints themselves.
pub fn palette_bc4<F: Float>(e0: F, e1: F) -> [F; 8] {
    palette_bc4_mode(Bc4Mode::from_endpoints(e0, e1), e0, e1)
}

/// BC4 palette under an explicit mode. In `Interpolated6` the first and last
/// linear entries are exactly 0 and 1.
pub fn palette_bc4_mode<F: Float>(mode: Bc4Mode, e0: F, e1: F) -> [F; 8] {
    let mut out = [F::zero(); 8];
    match mode {
        Bc4Mode::Interpolated8 => {
            for (n, v) in out.iter_mut().enumerate() {
                *v = lerp(e0, e1, lit(n as f64 / 7.0));
            }
        }
        Bc4Mode::Interpolated6 => {
            out[0] = F::zero();
            for (n, v) in out.iter_mut().enumerate().take(7).skip(1) {
                *v = lerp(e0, e1, lit((n - 1) as f64 / 5.0));
            }
            out[7] = F::one();
        }
    }
    out
}

/// Interpolation weights per linear slot. In `Interpolated6` the outer slots
/// carry the weights that make the interpolation formula produce 0 and 1
/// (possibly outside `[0, 1]`); when `e0 == e1` those weights do not exist
/// and are reported as `-inf` / `+inf`, the palette holding the constants
/// directly.
pub fn bc4_slot_weights_mode<F: Float>(mode: Bc4Mode, e0: F, e1: F) -> [F; 8] {
    let mut w = [F::zero(); 8];
    match mode {
        Bc4Mode::Interpolated8 => {
            for (n, v) in w.iter_mut().enumerate() {
                *v = lit(n as f64 / 7.0);
            }
        }
        Bc4Mode::Interpolated6 => {
            for (n, v) in w.iter_mut().enumerate().take(7).skip(1) {
                *v = lit((n - 1) as f64 / 5.0);
            }
            if e0 == e1 {
                w[0] = F::neg_infinity();
                w[7] = F::infinity();
            } else {
                w[0] = e0 / (e0 - e1);
                w[7] = (F::one() - e0) / (e1 - e0);
            }
        }
    }
    w
}

pub fn bc4_slot_weights<F: Float>(e0: F, e1: F) -> [F; 8] {
    bc4_slot_weights_mode(Bc4Mode::from_endpoints(e0, e1), e0, e1)
}

pub fn rgb565_encode(c: [f32; 3]) -> u16 {
    let q = |v: f32, max: f32| (v.clamp(0.0, 1.0) * max).round() as u16;
    (q(c[0], 31.0) << 11) | (q(c[1], 63.0) << 5) | q(c[2], 31.0)
}

pub fn rgb565_decode(code: u16) -> [f32; 3] {
    [
        ((code >> 11) & 0x1f) as f32 / 31.0,
        ((code >> 5) & 0x3f) as f32 / 63.0,
        (code & 0x1f) as f32 / 31.0,
    ]
}

pub fn unorm8_encode(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn unorm8_decode(code: u8) -> f32 {
    code as f32 / 255.0
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Bc1Block {
    pub color0: u16,
    pub color1: u16,
    /// Sixteen 2-bit stored codes, texel `(x, y)` at bit `2 * (4y + x)`.
    pub indices: u32,
}

impl Bc1Block {
    pub fn stored_index(&self, texel: usize) -> u8 {
        ((self.indices >> (2 * texel)) & 0b11) as u8
    }

    pub fn with_stored_indices(color0: u16, color1: u16, codes: &[u8; 16]) -> Self {
        let indices = codes
            .iter()
            .enumerate()
            .fold(0u32, |acc, (i, &c)| acc | (((c & 0b11) as u32) << (2 * i)));
        Bc1Block {
            color0,
            color1,
            indices,
        }
    }

    pub fn is_four_color(&self) -> bool {
        self.color0 > self.color1
    }

    /// Four-color mode, or the degenerate one-color block with every index 0.
    pub fn satisfies_mode_invariant(&self) -> bool {
        self.is_four_color() || (self.color0 == self.color1 && self.indices == 0)
    }

    pub fn endpoints(&self) -> ([f32; 3], [f32; 3]) {
        (rgb565_decode(self.color0), rgb565_decode(self.color1))
    }

    /// Palette in stored-code order.
    pub fn stored_palette(&self) -> [[f32; 3]; 4] {
        let (e0, e1) = self.endpoints();
        if self.is_four_color() {
            let lin = palette_bc1(e0, e1);
            let mut out = [[0.0; 3]; 4];
            for (code, entry) in out.iter_mut().enumerate() {
                *entry = lin[BC1_S2L[code] as usize];
            }
            out
        } else {
            let mid = [(e0[0] + e1[0]) * 0.5, (e0[1] + e1[1]) * 0.5, (e0[2] + e1[2]) * 0.5];
            [e0, e1, mid, [0.0; 3]]
        }
    }

    pub fn decode(&self) -> [[f32; 3]; 16] {
        let pal = self.stored_palette();
        std::array::from_fn(|i| pal[self.stored_index(i) as usize])
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        let mut b = [0u8; 8];
        b[0..2].copy_from_slice(&self.color0.to_le_bytes());
        b[2..4].copy_from_slice(&self.color1.to_le_bytes());
        b[4..8].copy_from_slice(&self.indices.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; 8]) -> Self {
        Bc1Block {
            color0: u16::from_le_bytes([b[0], b[1]]),
            color1: u16::from_le_bytes([b[2], b[3]]),
            indices: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Bc4Block {
    pub endpoint0: u8,
    pub endpoint1: u8,
    /// Sixteen 3-bit stored codes in the low 48 bits, texel `(x, y)` at bit
    /// `3 * (4y + x)`.
    pub indices: u64,
}

impl Bc4Block {
    pub fn mode(&self) -> Bc4Mode {
        Bc4Mode::from_endpoints(self.endpoint0, self.endpoint1)
    }

    pub fn stored_index(&self, texel: usize) -> u8 {
        ((self.indices >> (3 * texel)) & 0b111) as u8
    }

    pub fn with_stored_indices(endpoint0: u8, endpoint1: u8, codes: &[u8; 16]) -> Self {
        let indices = codes
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &c)| acc | (((c & 0b111) as u64) << (3 * i)));
        Bc4Block {
            endpoint0,
            endpoint1,
            indices,
        }
    }

    pub fn endpoints(&self) -> (f32, f32) {
        (unorm8_decode(self.endpoint0), unorm8_decode(self.endpoint1))
    }

    pub fn stored_palette(&self) -> [f32; 8] {
        let (e0, e1) = self.endpoints();
        let mode = self.mode();
        let lin = palette_bc4_mode(mode, e0, e1);
        let s2l = index_table(BcFormat::Bc4, mode, false);
        std::array::from_fn(|code| lin[s2l[code] as usize])
    }

    pub fn decode(&self) -> [f32; 16] {
        let pal = self.stored_palette();
        std::array::from_fn(|i| pal[self.stored_index(i) as usize])
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        let mut b = [0u8; 8];
        b[0] = self.endpoint0;
        b[1] = self.endpoint1;
        b[2..8].copy_from_slice(&self.indices.to_le_bytes()[..6]);
        b
    }

    pub fn from_bytes(b: &[u8; 8]) -> Self {
        let mut idx = [0u8; 8];
        idx[..6].copy_from_slice(&b[2..8]);
        Bc4Block {
            endpoint0: b[0],
            endpoint1: b[1],
            indices: u64::from_le_bytes(idx),
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Bc1(Bc1Block),
    Bc4(Bc4Block),
}

impl Block {
    /// Decoded texels; BC4 fills component 0 only.
    pub fn decode(&self) -> [[f32; 3]; 16] {
        match self {
            Block::Bc1(b) => b.decode(),
            Block::Bc4(b) => {
                let d = b.decode();
                std::array::from_fn(|i| [d[i], 0.0, 0.0])
            }
        }
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        match self {
            Block::Bc1(b) => b.to_bytes(),
            Block::Bc4(b) => b.to_bytes(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BlockData {
    Bc1(Vec<Bc1Block>),
    Bc4(Vec<Bc4Block>),
}

/// A row-major grid of blocks of one format.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSurface {
    blocks_w: usize,
    blocks_h: usize,
    data: BlockData,
}

impl BlockSurface {
    pub fn new(blocks_w: usize, blocks_h: usize, data: BlockData) -> Result<Self> {
        let len = match &data {
            BlockData::Bc1(v) => v.len(),
            BlockData::Bc4(v) => v.len(),
        };
        if blocks_w == 0 || blocks_h == 0 || len != blocks_w * blocks_h {
            return Err(Error::Shape(format!(
                "surface {blocks_w}x{blocks_h} blocks holds {len} blocks"
            )));
        }
        Ok(BlockSurface {
            blocks_w,
            blocks_h,
            data,
        })
    }

    pub fn blocks_w(&self) -> usize {
        self.blocks_w
    }

    pub fn blocks_h(&self) -> usize {
        self.blocks_h
    }

    pub fn width(&self) -> usize {
        self.blocks_w * 4
    }

    pub fn height(&self) -> usize {
        self.blocks_h * 4
    }

    pub fn format(&self) -> BcFormat {
        match self.data {
            BlockData::Bc1(_) => BcFormat::Bc1,
            BlockData::Bc4(_) => BcFormat::Bc4,
        }
    }

    pub fn data(&self) -> &BlockData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.blocks_w * self.blocks_h
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, bx: usize, by: usize) -> Block {
        let i = by * self.blocks_w + bx;
        match &self.data {
            BlockData::Bc1(v) => Block::Bc1(v[i]),
            BlockData::Bc4(v) => Block::Bc4(v[i]),
        }
    }

    /// Always 8 bytes per block for both formats.
    pub fn payload_len(&self) -> usize {
        self.len() * 8
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload_len());
        match &self.data {
            BlockData::Bc1(v) => v.iter().for_each(|b| out.extend_from_slice(&b.to_bytes())),
            BlockData::Bc4(v) => v.iter().for_each(|b| out.extend_from_slice(&b.to_bytes())),
        }
        out
    }

    pub fn from_payload(format: BcFormat, blocks_w: usize, blocks_h: usize, payload: &[u8]) -> Result<Self> {
        let n = blocks_w * blocks_h;
        if payload.len() < n * 8 {
            return Err(Error::Shape(format!(
                "payload of {} bytes, need {}",
                payload.len(),
                n * 8
            )));
        }
        let chunks = payload[..n * 8]
            .chunks_exact(8)
            .map(|c| <&[u8; 8]>::try_from(c).unwrap());
        let data = match format {
            BcFormat::Bc1 => BlockData::Bc1(chunks.map(Bc1Block::from_bytes).collect()),
            BcFormat::Bc4 => BlockData::Bc4(chunks.map(Bc4Block::from_bytes).collect()),
        };
        BlockSurface::new(blocks_w, blocks_h, data)
    }

    pub fn decode(&self) -> Texture {
        let (w, h) = (self.width(), self.height());
        let kind = self.format().kind();
        let c = kind.channels();
        let mut data = vec![0.0f32; w * h * c];
        for by in 0..self.blocks_h {
            for bx in 0..self.blocks_w {
                let texels = self.block(bx, by).decode();
                for (i, t) in texels.iter().enumerate() {
                    let (x, y) = (bx * 4 + i % 4, by * 4 + i / 4);
                    let o = (y * w + x) * c;
                    data[o..o + c].copy_from_slice(&t[..c]);
                }
            }
        }
        Texture::new(w, h, kind, data).expect("decoded samples stay in [0, 1]")
    }
}
