//! Binary checkpoint, little-endian:
//!
//! ```text
//! "NTBC" | version u32 | approach u8 | layout u8 | n_rgb u16 | n_sc u16 | temperature f32
//! grid x2 (block, texel): levels u32 | coarsest u32 | features u32
//!                         | (alpha f32, beta f32) per level | u8 codes, level by level
//! mlp x2 (endpoint, texel): n_dims u32 | dims u32... | f16 parameters
//! ```

use std::fs;
use std::path::Path;

use super::{Approach, Layout, ModelMode, NtbcModel};
use crate::error::{Error, Result};
use crate::feature_grid::{FeatureGrid, GridConfig, QuantParams, QuantizedGrid, QUANT_BITS};
use crate::nn::Mlp;
use crate::real::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NTBC";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 1 + 2 + 2 + 4;

fn grid_len(cfg: &GridConfig) -> usize {
    12 + 8 * cfg.levels + cfg.storage_bytes()
}

fn mlp_len(dims: &[usize]) -> usize {
    let params: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
    4 + 4 * dims.len() + 2 * params
}

fn standard_dims(input: usize, output: usize) -> Vec<usize> {
    vec![input, 64, 64, 64, output]
}

/// Exact checkpoint size in bytes for a mode and grid configuration.
pub fn checkpoint_size(mode: &ModelMode, block: &GridConfig, texel: &GridConfig) -> usize {
    HEADER_LEN
        + grid_len(block)
        + grid_len(texel)
        + mlp_len(&standard_dims(block.output_dim(), mode.endpoint_width()))
        + mlp_len(&standard_dims(texel.output_dim(), mode.second_width()))
}

fn approach_code(a: Approach) -> u8 {
    match a {
        Approach::Naive => 0,
        Approach::Ntbc => 1,
    }
}

fn layout_code(l: Layout) -> u8 {
    match l {
        Layout::ConservativeRgb => 0,
        Layout::ConservativeSingle => 1,
        Layout::Aggressive => 2,
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn write_grid<R: Real>(out: &mut Vec<u8>, grid: &FeatureGrid<R>) {
    let q = grid.quantize_store();
    for v in [q.config.levels, q.config.coarsest, q.config.features_per_level] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in &q.params {
        out.extend_from_slice(&p.alpha.to_le_bytes());
        out.extend_from_slice(&p.beta.to_le_bytes());
    }
    for level in &q.codes {
        out.extend_from_slice(level);
    }
}

fn read_grid<R: Real>(r: &mut Reader<'_>, which: &str) -> Result<FeatureGrid<R>> {
    let levels = r.u32(which)? as usize;
    let coarsest = r.u32(which)? as usize;
    let features = r.u32(which)? as usize;
    let config = GridConfig::new(levels, coarsest, features).map_err(|e| Error::Checkpoint(format!("{which}: {e}")))?;
    let mut params = Vec::with_capacity(levels);
    for _ in 0..levels {
        let alpha = r.f32(which)?;
        let beta = r.f32(which)?;
        if !(alpha.is_finite() && beta.is_finite() && alpha <= beta) {
            return Err(Error::Checkpoint(format!("{which}: invalid range [{alpha}, {beta}]")));
        }
        params.push(QuantParams::from_range(alpha, beta, QUANT_BITS));
    }
    let codes = config
        .level_resolutions()
        .iter()
        .map(|res| r.take(res * res * features, which).map(|s| s.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    FeatureGrid::dequantize_load(&QuantizedGrid { config, params, codes })
}

fn write_mlp<R: Real>(out: &mut Vec<u8>, mlp: &Mlp<R>) {
    out.extend_from_slice(&(mlp.dims().len() as u32).to_le_bytes());
    for &d in mlp.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&mlp.to_f16_bytes());
}

fn read_mlp<R: Real>(r: &mut Reader<'_>, which: &str) -> Result<Mlp<R>> {
    let n = r.u32(which)? as usize;
    if !(2..=16).contains(&n) {
        return Err(Error::Checkpoint(format!("{which}: {n} layer dims")));
    }
    let dims = (0..n)
        .map(|_| r.u32(which).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    if dims.iter().any(|&d| d == 0 || d > 1 << 16) {
        return Err(Error::Checkpoint(format!("{which}: invalid dims {dims:?}")));
    }
    let params: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
    let payload = r.take(2 * params, which)?;
    Mlp::from_f16_bytes(dims, payload)
}

impl<R: Real> NtbcModel<R> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(checkpoint_size(
            &self.mode,
            self.block_grid.config(),
            self.texel_grid.config(),
        ));
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(approach_code(self.mode.approach));
        out.push(layout_code(self.mode.layout));
        out.extend_from_slice(&(self.mode.n_rgb as u16).to_le_bytes());
        out.extend_from_slice(&(self.mode.n_sc as u16).to_le_bytes());
        out.extend_from_slice(&(self.temperature as f32).to_le_bytes());
        write_grid(&mut out, &self.block_grid);
        write_grid(&mut out, &self.texel_grid);
        write_mlp(&mut out, &self.endpoint_net);
        write_mlp(&mut out, &self.second_net);
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let approach = match r.u8("mode")? {
            0 => Approach::Naive,
            1 => Approach::Ntbc,
            v => return Err(Error::Checkpoint(format!("unknown approach {v}"))),
        };
        let layout = match r.u8("mode")? {
            0 => Layout::ConservativeRgb,
            1 => Layout::ConservativeSingle,
            2 => Layout::Aggressive,
            v => return Err(Error::Checkpoint(format!("unknown layout {v}"))),
        };
        let n_rgb = r.u16("mode")? as usize;
        let n_sc = r.u16("mode")? as usize;
        let mode = ModelMode::new(approach, layout, n_rgb, n_sc).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let temperature = r.f32("temperature")? as f64;
        let model = NtbcModel {
            mode,
            block_grid: read_grid(&mut r, "block grid")?,
            texel_grid: read_grid(&mut r, "texel grid")?,
            endpoint_net: read_mlp(&mut r, "endpoint network")?,
            second_net: read_mlp(&mut r, "texel network")?,
            temperature,
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        model.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(model)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NtbcModel<f32> {
        let mode = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 1, 2).unwrap();
        let g = GridConfig::new(2, 4, 2).unwrap();
        let mut m = NtbcModel::new(mode, g, GridConfig::new(3, 4, 2).unwrap(), 5);
        for l in m.block_grid.levels_mut() {
            for (i, v) in l.iter_mut().enumerate() {
                *v = (i as f32 * 0.37).sin();
            }
        }
        m.block_grid.update_quant_ranges();
        m
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let m = small();
        let bytes = m.to_checkpoint_bytes();
        assert_eq!(
            bytes.len(),
            checkpoint_size(&m.mode, m.block_grid.config(), m.texel_grid.config())
        );
        let loaded = NtbcModel::<f32>::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_checkpoint_bytes(), bytes);
        assert_eq!(loaded.mode, m.mode);
        assert!((loaded.temperature - 0.01).abs() < 1e-9);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = small().to_checkpoint_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(NtbcModel::<f32>::from_checkpoint_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(NtbcModel::<f32>::from_checkpoint_bytes(&bad)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let err = NtbcModel::<f32>::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        // Declaring 2 RGB textures makes the endpoint head too narrow.
        let mut bad = bytes.clone();
        bad[10] = 2;
        assert!(NtbcModel::<f32>::from_checkpoint_bytes(&bad).is_err());
    }

    #[test]
    fn paper_scale_sizes() {
        let (b, t) = (GridConfig::block_preset(), GridConfig::texel_preset());
        let agg = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 2, 4).unwrap();
        let size = checkpoint_size(&agg, &b, &t);
        assert_eq!(
            size,
            HEADER_LEN + 13_980_672 + 12 + 56 + 12 + 64 + 24 + 21_160 + 24 + 20_116
        );
        let mib = |v: usize| v as f64 / (1024.0 * 1024.0);
        assert!((mib(size) - 13.37).abs() < 0.5);
        let pair: usize = [Layout::ConservativeRgb, Layout::ConservativeSingle]
            .into_iter()
            .map(|l| checkpoint_size(&ModelMode::new(Approach::Ntbc, l, 2, 4).unwrap(), &b, &t))
            .sum();
        assert!((mib(pair) - 26.74).abs() < 1.0, "{}", mib(pair));
    }
}
