//! Dense multi-resolution 2D feature grids.
//!
//! Each level is a vertex-centered lattice of `res x res` vertices holding
//! `features_per_level` values; a point `p` in `[0,1]^2` sits at lattice
//! coordinate `p * (res - 1)` and reads the bilinear blend of its four
//! surrounding vertices. Levels are concatenated coarse to fine.
//!
//! Quantization is asymmetric and per level: `alpha`/`beta` are the level's
//! min/max, `s = (beta - alpha) / (2^bits - 1)` and `z = round(-alpha / s)`.
//! `z` is deliberately not clamped to the code range, so `alpha` maps to code
//! 0 and `beta` to `2^bits - 1` even when the range does not straddle zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::{round_half_away, Real};

pub const DEFAULT_COARSEST: usize = 16;
pub const QUANT_BITS: u32 = 8;
const MIN_SCALE: f32 = 1e-8;
const INIT_RANGE: f64 = 1e-4;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub struct GridConfig {
    pub levels: usize,
    pub coarsest: usize,
    pub features_per_level: usize,
}

impl GridConfig {
    pub fn new(levels: usize, coarsest: usize, features_per_level: usize) -> Result<Self> {
        if levels == 0 || coarsest < 2 || features_per_level == 0 {
            return Err(Error::Config(format!(
                "grid needs levels >= 1, coarsest >= 2, features >= 1 (got {levels}, {coarsest}, {features_per_level})"
            )));
        }
        if levels > 16 {
            return Err(Error::Config(format!("{levels} grid levels is too many")));
        }
        Ok(GridConfig {
            levels,
            coarsest,
            features_per_level,
        })
    }

    /// 7 levels, 16 to 1024.
    pub fn block_preset() -> Self {
        GridConfig {
            levels: 7,
            coarsest: 16,
            features_per_level: 2,
        }
    }

    /// 8 levels, 16 to 2048.
    pub fn texel_preset() -> Self {
        GridConfig {
            levels: 8,
            coarsest: 16,
            features_per_level: 2,
        }
    }

    /// Grid ending at `finest`. With `levels = None` the coarsest level is 16
    /// (or `finest` if smaller) and the level count follows; with explicit
    /// levels the coarsest is `finest / 2^(levels-1)`.
    pub fn from_finest(finest: usize, levels: Option<usize>) -> Result<Self> {
        if finest < 2 || !finest.is_power_of_two() {
            return Err(Error::Config(format!(
                "finest grid resolution must be a power of two >= 2, got {finest}"
            )));
        }
        match levels {
            Some(levels) => {
                if levels == 0 {
                    return Err(Error::Config("levels must be >= 1".into()));
                }
                let div = 1usize.checked_shl(levels as u32 - 1).unwrap_or(usize::MAX);
                if div > finest / 2 && levels > 1 {
                    return Err(Error::Config(format!(
                        "{levels} levels ending at {finest} leave a coarsest level below 2"
                    )));
                }
                GridConfig::new(levels, finest / div, 2)
            }
            None => {
                let coarsest = DEFAULT_COARSEST.min(finest);
                let levels = (finest / coarsest).trailing_zeros() as usize + 1;
                GridConfig::new(levels, coarsest, 2)
            }
        }
    }

    /// Block-grid finest = texture resolution / 4.
    pub fn scaled_block(resolution: usize) -> Result<Self> {
        Self::from_finest((resolution / 4).max(2), None)
    }

    /// Texel-grid finest = texture resolution / 2.
    pub fn scaled_texel(resolution: usize) -> Result<Self> {
        Self::from_finest((resolution / 2).max(2), None)
    }

    pub fn finest(&self) -> usize {
        self.coarsest << (self.levels - 1)
    }

    pub fn level_resolutions(&self) -> Vec<usize> {
        (0..self.levels).map(|l| self.coarsest << l).collect()
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn param_count(&self) -> usize {
        self.level_resolutions()
            .iter()
            .map(|r| r * r * self.features_per_level)
            .sum()
    }

    /// Bytes of the 8-bit feature payload.
    pub fn storage_bytes(&self) -> usize {
        self.param_count()
    }
}

/// Affine quantizer parameters of one grid level.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct QuantParams {
    pub alpha: f32,
    pub beta: f32,
    pub scale: f32,
    pub zero_point: i64,
    pub bits: u32,
}

impl QuantParams {
    pub fn from_range(alpha: f32, beta: f32, bits: u32) -> Self {
        let qmax = ((1u64 << bits) - 1) as f32;
        let scale = ((beta - alpha) / qmax).max(MIN_SCALE);
        // Same value as -alpha / s, without the rounding of s in between.
        let zero_point = if scale > MIN_SCALE {
            round_half_away(-alpha as f64 * qmax as f64 / (beta as f64 - alpha as f64))
        } else {
            round_half_away(-alpha as f64 / scale as f64)
        } as i64;
        QuantParams {
            alpha,
            beta,
            scale,
            zero_point,
            bits,
        }
    }

    pub fn qmax(&self) -> i64 {
        (1i64 << self.bits) - 1
    }

    /// `round(w / s) + z` before clamping, in f64: with a floored scale `z`
    /// can exceed the integer range of f32.
    #[inline]
    pub fn raw_code<R: Real>(&self, w: R) -> f64 {
        let w = w.to_f64().unwrap_or(f64::NAN);
        round_half_away(w / self.scale as f64) + self.zero_point as f64
    }

    #[inline]
    pub fn code<R: Real>(&self, w: R) -> i64 {
        self.raw_code(w).clamp(0.0, self.qmax() as f64) as i64
    }

    /// Dequantized value of a stored code: `s * (q - z)`.
    #[inline]
    pub fn dequantize<R: Real>(&self, code: i64) -> R {
        R::lit(self.scale as f64) * R::lit((code - self.zero_point) as f64)
    }

    /// `Q(w) = s * (clamp(round(w/s) + z, 0, 2^bits - 1) - z)`.
    #[inline]
    pub fn forward<R: Real>(&self, w: R) -> R {
        self.dequantize(self.code(w))
    }

    /// Straight-through gate: the gradient passes when the rounded code was
    /// not clamped.
    #[inline]
    pub fn passes_gradient<R: Real>(&self, w: R) -> bool {
        let c = self.raw_code(w);
        c >= 0.0 && c <= self.qmax() as f64
    }
}

/// Per-level gradient buffers with the same layout as the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGrads<R> {
    pub levels: Vec<Vec<R>>,
}

impl<R: Real> GridGrads<R> {
    pub fn zeros(config: &GridConfig) -> Self {
        GridGrads {
            levels: config
                .level_resolutions()
                .iter()
                .map(|r| vec![R::zero(); r * r * config.features_per_level])
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.levels.iter_mut().for_each(|l| l.fill(R::zero()));
    }
}

/// Quantized payload as written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedGrid {
    pub config: GridConfig,
    pub params: Vec<QuantParams>,
    pub codes: Vec<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid<R> {
    config: GridConfig,
    levels: Vec<Vec<R>>,
    quant: Vec<QuantParams>,
    quant_enabled: bool,
}

/// Four lattice corners with their bilinear weights.
#[derive(Copy, Clone, Debug)]
struct Corners<R> {
    idx: [usize; 4],
    w: [R; 4],
}

#[inline]
fn corners<R: Real>(res: usize, p: [R; 2]) -> Corners<R> {
    let last = res - 1;
    let split = |v: R| -> (usize, R) {
        let x = v.max(R::zero()).min(R::one()) * R::lit(last as f64);
        let i = x.floor().to_usize().unwrap_or(0).min(last.saturating_sub(1));
        (i, x - R::lit(i as f64))
    };
    let (i, fx) = split(p[0]);
    let (j, fy) = split(p[1]);
    let one = R::one();
    Corners {
        idx: [j * res + i, j * res + i + 1, (j + 1) * res + i, (j + 1) * res + i + 1],
        w: [(one - fx) * (one - fy), fx * (one - fy), (one - fx) * fy, fx * fy],
    }
}

impl<R: Real> FeatureGrid<R> {
    pub fn zeros(config: GridConfig) -> Self {
        let levels = config
            .level_resolutions()
            .iter()
            .map(|r| vec![R::zero(); r * r * config.features_per_level])
            .collect();
        let mut g = FeatureGrid {
            config,
            levels,
            quant: vec![QuantParams::from_range(0.0, 0.0, QUANT_BITS); config.levels],
            quant_enabled: false,
        };
        g.update_quant_ranges();
        g
    }

    /// Features uniform in `[-1e-4, 1e-4]`.
    pub fn random<G: Rng + ?Sized>(config: GridConfig, rng: &mut G) -> Self {
        let mut g = Self::zeros(config);
        for level in &mut g.levels {
            for v in level.iter_mut() {
                *v = R::lit(rng.random_range(-INIT_RANGE..=INIT_RANGE));
            }
        }
        g.update_quant_ranges();
        g
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn levels(&self) -> &[Vec<R>] {
        &self.levels
    }

    pub fn levels_mut(&mut self) -> &mut [Vec<R>] {
        &mut self.levels
    }

    pub fn quant_params(&self) -> &[QuantParams] {
        &self.quant
    }

    pub fn quant_enabled(&self) -> bool {
        self.quant_enabled
    }

    pub fn set_quant_enabled(&mut self, on: bool) {
        self.quant_enabled = on;
    }

    #[inline]
    fn feature(&self, level: usize, i: usize) -> R {
        let v = self.levels[level][i];
        if self.quant_enabled {
            self.quant[level].forward(v)
        } else {
            v
        }
    }

    /// Writes `levels * features_per_level` values into `out`.
    pub fn encode(&self, p: [R; 2], out: &mut [R]) {
        let f = self.config.features_per_level;
        debug_assert_eq!(out.len(), self.output_dim());
        for (l, res) in self.config.level_resolutions().into_iter().enumerate() {
            let c = corners(res, p);
            for k in 0..f {
                let mut acc = R::zero();
                for v in 0..4 {
                    acc += c.w[v] * self.feature(l, c.idx[v] * f + k);
                }
                out[l * f + k] = acc;
            }
        }
    }

    pub fn encode_vec(&self, p: [R; 2]) -> Vec<R> {
        let mut out = vec![R::zero(); self.output_dim()];
        self.encode(p, &mut out);
        out
    }

    /// Accumulates `upstream * bilinear weight` into each touched vertex,
    /// zeroing vertices whose quantized code was clamped.
    pub fn backward(&self, p: [R; 2], upstream: &[R], grads: &mut GridGrads<R>) {
        let f = self.config.features_per_level;
        for (l, res) in self.config.level_resolutions().into_iter().enumerate() {
            let c = corners(res, p);
            let (params, values, g) = (&self.quant[l], &self.levels[l], &mut grads.levels[l]);
            for k in 0..f {
                let up = upstream[l * f + k];
                if up == R::zero() {
                    continue;
                }
                for v in 0..4 {
                    let i = c.idx[v] * f + k;
                    if self.quant_enabled && !params.passes_gradient(values[i]) {
                        continue;
                    }
                    g[i] += up * c.w[v];
                }
            }
        }
    }

    /// Sets each level's range to its current min/max and recomputes scale
    /// and zero point.
    pub fn update_quant_ranges(&mut self) {
        for (level, q) in self.levels.iter().zip(self.quant.iter_mut()) {
            let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
            for v in level {
                let v = v.to_f32_lossy();
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                lo = 0.0;
                hi = 0.0;
            }
            *q = QuantParams::from_range(lo, hi, QUANT_BITS);
        }
    }

    /// Refreshes ranges and snaps every feature to its quantized value, so
    /// the in-memory grid equals what a store/load cycle reproduces.
    pub fn commit_quantization(&mut self) {
        self.update_quant_ranges();
        for (level, q) in self.levels.iter_mut().zip(&self.quant) {
            level.iter_mut().for_each(|v| *v = q.forward(*v));
        }
    }

    pub fn quantize_store(&self) -> QuantizedGrid {
        QuantizedGrid {
            config: self.config,
            params: self.quant.clone(),
            codes: self
                .levels
                .iter()
                .zip(&self.quant)
                .map(|(level, q)| level.iter().map(|&v| q.code(v) as u8).collect())
                .collect(),
        }
    }

    pub fn dequantize_load(stored: &QuantizedGrid) -> Result<Self> {
        let config = stored.config;
        let res = config.level_resolutions();
        if stored.params.len() != config.levels || stored.codes.len() != config.levels {
            return Err(Error::Shape("quantized grid level count mismatch".into()));
        }
        let mut levels = Vec::with_capacity(config.levels);
        for (l, (codes, q)) in stored.codes.iter().zip(&stored.params).enumerate() {
            if codes.len() != res[l] * res[l] * config.features_per_level {
                return Err(Error::Shape(format!("grid level {l} payload length")));
            }
            levels.push(codes.iter().map(|&c| q.dequantize(c as i64)).collect());
        }
        Ok(FeatureGrid {
            config,
            levels,
            quant: stored.params.clone(),
            quant_enabled: true,
        })
    }

    pub fn cast<S: Real>(&self) -> FeatureGrid<S> {
        FeatureGrid {
            config: self.config,
            levels: self
                .levels
                .iter()
                .map(|l| l.iter().map(|v| S::lit(v.to_f64().unwrap())).collect())
                .collect(),
            quant: self.quant.clone(),
            quant_enabled: self.quant_enabled,
        }
    }
}
