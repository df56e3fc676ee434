//! Minimal DDS container: legacy 124-byte header, FourCC `DXT1` or `ATI1`,
//! one surface, no mip chain.

use std::fs;
use std::path::Path;

use super::{BcFormat, BlockSurface};
use crate::error::{Error, Result};

pub const DDS_MAGIC: [u8; 4] = *b"DDS ";
/// Magic plus header.
pub const DDS_HEADER_LEN: usize = 128;

const HEADER_SIZE: u32 = 124;
const PIXEL_FORMAT_SIZE: u32 = 32;

const DDSD_CAPS: u32 = 0x1;
const DDSD_HEIGHT: u32 = 0x2;
const DDSD_WIDTH: u32 = 0x4;
const DDSD_PIXELFORMAT: u32 = 0x1000;
const DDSD_LINEARSIZE: u32 = 0x8_0000;
const DDPF_FOURCC: u32 = 0x4;
const DDSCAPS_TEXTURE: u32 = 0x1000;

fn fourcc(format: BcFormat) -> [u8; 4] {
    match format {
        BcFormat::Bc1 => *b"DXT1",
        BcFormat::Bc4 => *b"ATI1",
    }
}

pub fn dds_write_bytes(surface: &BlockSurface) -> Vec<u8> {
    let mut out = Vec::with_capacity(DDS_HEADER_LEN + surface.payload_len());
    let mut put = |v: u32| out.extend_from_slice(&v.to_le_bytes());
    put(u32::from_le_bytes(DDS_MAGIC));
    put(HEADER_SIZE);
    put(DDSD_CAPS | DDSD_HEIGHT | DDSD_WIDTH | DDSD_PIXELFORMAT | DDSD_LINEARSIZE);
    put(surface.height() as u32);
    put(surface.width() as u32);
    put(surface.payload_len() as u32);
    put(0); // depth
    put(0); // mip map count
    for _ in 0..11 {
        put(0);
    }
    put(PIXEL_FORMAT_SIZE);
    put(DDPF_FOURCC);
    put(u32::from_le_bytes(fourcc(surface.format())));
    for _ in 0..5 {
        put(0); // bit count and masks
    }
    put(DDSCAPS_TEXTURE);
    for _ in 0..4 {
        put(0); // caps2..4, reserved2
    }
    debug_assert_eq!(out.len(), DDS_HEADER_LEN);
    out.extend_from_slice(&surface.payload());
    out
}

pub fn dds_read_bytes(bytes: &[u8]) -> Result<BlockSurface> {
    if bytes.len() < 4 || bytes[..4] != DDS_MAGIC {
        return Err(Error::Dds("bad magic".into()));
    }
    if bytes.len() < DDS_HEADER_LEN {
        return Err(Error::Dds(format!("truncated header: {} bytes", bytes.len())));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(1) != HEADER_SIZE {
        return Err(Error::Dds(format!("header size {} != 124", word(1))));
    }
    let (height, width) = (word(3) as usize, word(4) as usize);
    // Pixel format starts at byte 76: size, flags, fourCC.
    if word(20) & DDPF_FOURCC == 0 {
        return Err(Error::Dds("pixel format has no FourCC".into()));
    }
    let cc = word(21).to_le_bytes();
    let format = match &cc {
        b"DXT1" => BcFormat::Bc1,
        b"ATI1" | b"BC4U" => BcFormat::Bc4,
        other => {
            return Err(Error::Dds(format!(
                "unsupported FourCC {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    if width == 0 || height == 0 || width % 4 != 0 || height % 4 != 0 {
        return Err(Error::Dds(format!("unsupported size {width}x{height}")));
    }
    let (bw, bh) = (width / 4, height / 4);
    let payload = &bytes[DDS_HEADER_LEN..];
    if payload.len() < bw * bh * 8 {
        return Err(Error::Dds(format!(
            "truncated payload: {} of {} bytes",
            payload.len(),
            bw * bh * 8
        )));
    }
    BlockSurface::from_payload(format, bw, bh, payload)
}

pub fn dds_write(surface: &BlockSurface, path: &Path) -> Result<()> {
    fs::write(path, dds_write_bytes(surface)).map_err(|e| Error::io(path, e))
}

pub fn dds_read(path: &Path) -> Result<BlockSurface> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    dds_read_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bc_codec::{Bc1Block, Bc4Block, BlockData};

    fn golden() -> BlockSurface {
        BlockSurface::new(
            1,
            1,
            BlockData::Bc1(vec![Bc1Block {
                color0: 0xF800,
                color1: 0x001F,
                indices: 0,
            }]),
        )
        .unwrap()
    }

    #[test]
    fn golden_file_layout() {
        let bytes = dds_write_bytes(&golden());
        assert_eq!(bytes.len(), 136);
        assert_eq!(&bytes[..4], &[0x44, 0x44, 0x53, 0x20]);
        assert_eq!(&bytes[4..8], &124u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &0x81007u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &4u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &4u32.to_le_bytes());
        assert_eq!(&bytes[20..24], &8u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &0u32.to_le_bytes());
        assert_eq!(&bytes[76..80], &32u32.to_le_bytes());
        assert_eq!(&bytes[80..84], &4u32.to_le_bytes());
        assert_eq!(&bytes[84..88], b"DXT1");
        assert_eq!(&bytes[108..112], &0x1000u32.to_le_bytes());
        assert_eq!(&bytes[128..], &[0x00, 0xF8, 0x1F, 0x00, 0, 0, 0, 0]);
    }

    #[test]
    fn read_errors() {
        let bytes = dds_write_bytes(&golden());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(dds_read_bytes(&bad).unwrap_err().to_string().contains("magic"));
        let mut bad = bytes.clone();
        bad[84..88].copy_from_slice(b"DXT5");
        assert!(dds_read_bytes(&bad).unwrap_err().to_string().contains("FourCC"));
        assert!(dds_read_bytes(&bytes[..135])
            .unwrap_err()
            .to_string()
            .contains("truncated"));
        assert!(dds_read_bytes(&bytes[..100]).is_err());
    }

    #[test]
    fn bc4_uses_ati1() {
        let s = BlockSurface::new(
            2,
            1,
            BlockData::Bc4(vec![
                Bc4Block::with_stored_indices(200, 10, &[3; 16]),
                Bc4Block::with_stored_indices(10, 200, &[7; 16]),
            ]),
        )
        .unwrap();
        let bytes = dds_write_bytes(&s);
        assert_eq!(&bytes[84..88], b"ATI1");
        assert_eq!(bytes.len(), 128 + 16);
        let back = dds_read_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(dds_write_bytes(&back), bytes);
    }
}
