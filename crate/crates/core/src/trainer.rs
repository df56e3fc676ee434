//! Training loops: NTBC, the two-stage naive baseline, and the
//! quantization-aware fine-tuning phase appended to both.
//!
//! A step samples block positions uniformly with replacement; each position
//! serves every texture head. The batch is split into chunks evaluated
//! independently (in parallel with the `parallel` feature); their results are
//! reduced in chunk order and grid gradients are scattered serially, so a run
//! is bitwise reproducible from its seed.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bc_codec::{encode_texture_reference, Bc4Mode, Block, BlockSurface};
use crate::error::{Error, Result};
use crate::feature_grid::{GridConfig, GridGrads};
use crate::metrics::{QualityReport, TextureQuality};
use crate::model::loss::{
    loss_color, loss_endpoint, loss_naive_continuous, loss_naive_quantized, HeadTarget, LossConfig,
};
use crate::model::{Approach, ModelMode, NtbcModel};
use crate::nn::{adam_step, AdamState, LrSchedule, MlpCache};
use crate::real::Real;
use crate::texture_io::{Texture, TextureKind};

/// Dequantized reference endpoints and BC4 mode of one block.
#[derive(Copy, Clone, Debug, PartialEq)]
struct RefBlock {
    mode: Bc4Mode,
    e0: [f32; 3],
    e1: [f32; 3],
}

/// Co-registered textures with their reference BC encodings.
#[derive(Clone, Debug)]
pub struct Material {
    name: String,
    names: Vec<String>,
    textures: Vec<Texture>,
    references: Vec<BlockSurface>,
    ref_blocks: Vec<Vec<RefBlock>>,
}

impl Material {
    pub fn new(name: &str, textures: Vec<(String, Texture)>) -> Result<Self> {
        let Some((_, first)) = textures.first() else {
            return Err(Error::Config(format!("material {name} has no textures")));
        };
        let (w, h) = (first.width(), first.height());
        if w % 4 != 0 || h % 4 != 0 {
            return Err(Error::Dimensions {
                width: w,
                height: h,
                reason: "material dimensions must be multiples of 4",
            });
        }
        for (n, t) in &textures {
            if (t.width(), t.height()) != (w, h) {
                return Err(Error::MixedResolutions {
                    first: textures[0].0.clone(),
                    a: format!("{w}x{h}"),
                    second: n.clone(),
                    b: format!("{}x{}", t.width(), t.height()),
                });
            }
        }
        let references: Vec<BlockSurface> = textures.iter().map(|(_, t)| encode_texture_reference(t)).collect();
        let ref_blocks = references
            .iter()
            .map(|s| {
                (0..s.len())
                    .map(|i| match s.block(i % s.blocks_w(), i / s.blocks_w()) {
                        Block::Bc1(b) => {
                            debug_assert!(b.color0 >= b.color1);
                            let (e0, e1) = b.endpoints();
                            RefBlock {
                                mode: Bc4Mode::Interpolated8,
                                e0,
                                e1,
                            }
                        }
                        Block::Bc4(b) => {
                            let (e0, e1) = b.endpoints();
                            RefBlock {
                                mode: b.mode(),
                                e0: [e0, 0.0, 0.0],
                                e1: [e1, 0.0, 0.0],
                            }
                        }
                    })
                    .collect()
            })
            .collect();
        let (names, textures) = textures.into_iter().unzip();
        Ok(Material {
            name: name.to_string(),
            names,
            textures,
            references,
            ref_blocks,
        })
    }

    #[cfg(feature = "io")]
    pub fn from_manifest(manifest: &crate::texture_io::MaterialManifest) -> Result<Self> {
        let textures = manifest
            .entries
            .iter()
            .map(|e| Ok((e.name.clone(), crate::texture_io::load_texture(&e.path, e.kind)?)))
            .collect::<Result<Vec<_>>>()?;
        Material::new(&manifest.name, textures)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn textures(&self) -> &[Texture] {
        &self.textures
    }

    pub fn references(&self) -> &[BlockSurface] {
        &self.references
    }

    pub fn kinds(&self) -> Vec<TextureKind> {
        self.textures.iter().map(|t| t.kind()).collect()
    }

    pub fn n_rgb(&self) -> usize {
        self.kinds().iter().filter(|&&k| k == TextureKind::Rgb).count()
    }

    pub fn n_sc(&self) -> usize {
        self.kinds().iter().filter(|&&k| k == TextureKind::Single).count()
    }

    pub fn width(&self) -> usize {
        self.textures[0].width()
    }

    pub fn height(&self) -> usize {
        self.textures[0].height()
    }

    pub fn blocks_w(&self) -> usize {
        self.width() / 4
    }

    pub fn blocks_h(&self) -> usize {
        self.height() / 4
    }

    /// Reference data of block `(bx, by)` for the given textures, in order.
    pub fn head_targets(&self, heads: &[usize], bx: usize, by: usize) -> Vec<HeadTarget> {
        let i = by * self.blocks_w() + bx;
        heads
            .iter()
            .map(|&t| {
                let r = self.ref_blocks[t][i];
                HeadTarget {
                    kind: self.textures[t].kind(),
                    mode: r.mode,
                    e0: r.e0,
                    e1: r.e1,
                    texels: self.textures[t].block(bx, by),
                }
            })
            .collect()
    }

    /// Grid presets scaled to this material's resolution: texel grid finest
    /// at half the resolution, block grid at a quarter.
    pub fn scaled_grids(&self) -> Result<(GridConfig, GridConfig)> {
        let res = self.width().max(self.height()).next_power_of_two();
        Ok((GridConfig::scaled_block(res)?, GridConfig::scaled_texel(res)?))
    }
}

/// Uniform block positions with replacement.
pub fn sample_batch<G: Rng + ?Sized>(rng: &mut G, material: &Material, batch_blocks: usize) -> Vec<(usize, usize)> {
    let (bw, bh) = (material.blocks_w(), material.blocks_h());
    (0..batch_blocks)
        .map(|_| (rng.random_range(0..bw), rng.random_range(0..bh)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_blocks: usize,
    pub lr_grids: f64,
    pub lr_mlps: f64,
    pub warmup: u64,
    pub qat_fraction: f64,
    /// Naive approach only: share of `iterations` in the continuous stage.
    pub stage1_fraction: f64,
    pub seed: u64,
    /// Fixed chunk partition independent of the thread count. Without it the
    /// batch is split per worker thread, so results depend on the pool size.
    pub deterministic: bool,
    /// Update the endpoint side on even steps and the texel side on odd
    /// steps instead of both every step.
    pub alternate: bool,
    pub temperature: f64,
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 20_000,
            batch_blocks: 1024,
            lr_grids: 0.01,
            lr_mlps: 0.005,
            warmup: 10,
            qat_fraction: 0.10,
            stage1_fraction: 0.80,
            seed: 0,
            deterministic: true,
            alternate: false,
            temperature: crate::model::DEFAULT_TEMPERATURE,
            log_path: None,
        }
    }
}

const CHUNK_BLOCKS: usize = 32;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64, name: &str| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        frac(self.qat_fraction, "qat_fraction")?;
        frac(self.stage1_fraction, "stage1_fraction")?;
        if self.iterations == 0 || self.batch_blocks == 0 {
            return Err(Error::Config("iterations and batch_blocks must be >= 1".into()));
        }
        if !(self.lr_grids > 0.0 && self.lr_mlps > 0.0 && self.temperature > 0.0) {
            return Err(Error::Config("learning rates and temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn qat_steps(&self) -> u64 {
        (self.qat_fraction * self.iterations as f64).round() as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.iterations + self.qat_steps()
    }

    /// First step of the naive approach's quantized stage.
    pub fn stage_boundary(&self) -> u64 {
        (self.stage1_fraction * self.iterations as f64).floor() as u64
    }

    fn chunk_blocks(&self) -> usize {
        if self.deterministic {
            CHUNK_BLOCKS
        } else {
            #[cfg(feature = "parallel")]
            let workers = rayon::current_num_threads();
            #[cfg(not(feature = "parallel"))]
            let workers = 1;
            self.batch_blocks.div_ceil(workers).max(1)
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    /// Naive approach, quantized-weight stage.
    NaiveStage2,
    Qat,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::NaiveStage2 => "stage2",
            Phase::Qat => "qat",
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss_endpoint: f64,
    pub loss_color: f64,
    pub lr_grid: f64,
    pub lr_mlp: f64,
    pub phase: Phase,
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("step,loss_endpoint,loss_color,lr_grid,lr_mlp,phase\n");
    for r in rows {
        writeln!(
            s,
            "{},{:.8},{:.8},{:.8},{:.8},{}",
            r.step,
            r.loss_endpoint,
            r.loss_color,
            r.lr_grid,
            r.lr_mlp,
            r.phase.as_str()
        )
        .unwrap();
    }
    s
}

/// Exponential moving average with the given decay, seeded by the first value.
pub fn smoothed(values: impl IntoIterator<Item = f64>, decay: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut ema = None;
    for v in values {
        let e = match ema {
            None => v,
            Some(e) => decay * e + (1.0 - decay) * v,
        };
        ema = Some(e);
        out.push(e);
    }
    out
}

pub const LOSS_EMA_DECAY: f64 = 0.99;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Grids committed to 8-bit, MLPs rounded to half precision.
    pub model: NtbcModel<f32>,
    /// The model at the end of full-precision training, before QAT.
    pub pre_qat: NtbcModel<f32>,
    pub log: Vec<LogRow>,
    /// Naive approach only: the weight network at the start and at the end
    /// of the quantized stage, before half-precision rounding.
    pub weight_net_stage2: Option<(crate::nn::Mlp<f32>, crate::nn::Mlp<f32>)>,
}

/// Which loss a gradient evaluation uses.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Objective {
    Ntbc,
    NaiveContinuous,
    NaiveQuantized,
}

/// Gradients of one step, laid out like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<R> {
    pub block_grid: GridGrads<R>,
    pub texel_grid: GridGrads<R>,
    pub endpoint_net: Vec<R>,
    pub second_net: Vec<R>,
}

impl<R: Real> ModelGrads<R> {
    pub fn zeros(model: &NtbcModel<R>) -> Self {
        ModelGrads {
            block_grid: GridGrads::zeros(model.block_grid.config()),
            texel_grid: GridGrads::zeros(model.texel_grid.config()),
            endpoint_net: vec![R::zero(); model.endpoint_net.param_count()],
            second_net: vec![R::zero(); model.second_net.param_count()],
        }
    }

    pub fn clear(&mut self) {
        self.block_grid.clear();
        self.texel_grid.clear();
        self.endpoint_net.fill(R::zero());
        self.second_net.fill(R::zero());
    }
}

/// Which sides of the model take part in a gradient evaluation.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Sides {
    pub endpoint: bool,
    pub texel: bool,
}

impl Sides {
    pub const BOTH: Sides = Sides {
        endpoint: true,
        texel: true,
    };
}

struct ChunkOut<R> {
    ge: Vec<R>,
    gs: Vec<R>,
    block_in: Vec<R>,
    texel_in: Vec<R>,
    loss_e: f64,
    loss_c: f64,
}

fn block_center<R: Real>(m: &Material, bx: usize, by: usize) -> [R; 2] {
    [
        R::lit((bx as f64 + 0.5) / m.blocks_w() as f64),
        R::lit((by as f64 + 0.5) / m.blocks_h() as f64),
    ]
}

fn texel_center<R: Real>(m: &Material, bx: usize, by: usize, i: usize) -> [R; 2] {
    let (x, y) = (bx * 4 + i % 4, by * 4 + i / 4);
    [
        R::lit((x as f64 + 0.5) / m.width() as f64),
        R::lit((y as f64 + 0.5) / m.height() as f64),
    ]
}

struct GradCtx<'a, R> {
    model: &'a NtbcModel<R>,
    material: &'a Material,
    heads: &'a [usize],
    objective: Objective,
    sides: Sides,
    loss: LossConfig,
    batch_len: usize,
}

impl<R: Real> GradCtx<'_, R> {
    fn chunk(&self, blocks: &[(usize, usize)]) -> ChunkOut<R> {
        let (model, m) = (self.model, self.material);
        let n = blocks.len();
        let bd = model.block_grid.output_dim();
        let td = model.texel_grid.output_dim();
        let ew = model.mode.endpoint_width();
        let sw = model.mode.second_width();
        let inv_b = R::lit(1.0 / self.batch_len as f64);
        let inv_t = R::lit(1.0 / (16 * self.batch_len) as f64);

        let mut xb = vec![R::zero(); n * bd];
        for (i, &(bx, by)) in blocks.iter().enumerate() {
            model
                .block_grid
                .encode(block_center(m, bx, by), &mut xb[i * bd..(i + 1) * bd]);
        }
        let mut ecache = MlpCache::default();
        model.endpoint_net.forward_batch(&xb, n, &mut ecache).expect("shape");

        let need_texel_forward = self.sides.texel || self.objective != Objective::Ntbc;
        let mut tcache = MlpCache::default();
        if need_texel_forward {
            let mut xt = vec![R::zero(); 16 * n * td];
            for (i, &(bx, by)) in blocks.iter().enumerate() {
                for j in 0..16 {
                    let k = i * 16 + j;
                    model
                        .texel_grid
                        .encode(texel_center(m, bx, by, j), &mut xt[k * td..(k + 1) * td]);
                }
            }
            model.second_net.forward_batch(&xt, 16 * n, &mut tcache).expect("shape");
        }

        let mut up_e = vec![R::zero(); n * ew];
        let mut up_s = vec![R::zero(); 16 * n * sw];
        let (mut loss_e, mut loss_c) = (0.0, 0.0);
        let mut g = vec![R::zero(); ew.max(sw)];
        for (i, &(bx, by)) in blocks.iter().enumerate() {
            let targets = m.head_targets(self.heads, bx, by);
            let e = &ecache.output()[i * ew..(i + 1) * ew];
            let ue = &mut up_e[i * ew..(i + 1) * ew];
            match self.objective {
                Objective::Ntbc => {
                    if self.sides.endpoint {
                        let l = loss_endpoint(e, &targets, &self.loss, &mut g[..ew]);
                        loss_e += l.total().to_f64().unwrap();
                        ue.iter_mut().zip(&g[..ew]).for_each(|(u, &v)| *u = v * inv_b);
                    }
                    if self.sides.texel {
                        for j in 0..16 {
                            let k = i * 16 + j;
                            let c = &tcache.output()[k * sw..(k + 1) * sw];
                            let l = loss_color(c, &targets, j, &self.loss, &mut g[..sw]);
                            loss_c += l.total().to_f64().unwrap();
                            up_s[k * sw..(k + 1) * sw]
                                .iter_mut()
                                .zip(&g[..sw])
                                .for_each(|(u, &v)| *u = v * inv_t);
                        }
                    }
                }
                Objective::NaiveContinuous => {
                    let w = &tcache.output()[i * 16 * sw..(i + 1) * 16 * sw];
                    let gw = &mut up_s[i * 16 * sw..(i + 1) * 16 * sw];
                    let l = loss_naive_continuous(e, w, &targets, ue, gw);
                    loss_e += l.to_f64().unwrap();
                    ue.iter_mut().for_each(|u| *u *= inv_b);
                    gw.iter_mut().for_each(|u| *u *= inv_b);
                }
                Objective::NaiveQuantized => {
                    let w = &tcache.output()[i * 16 * sw..(i + 1) * 16 * sw];
                    let l = loss_naive_quantized(e, w, &targets, ue);
                    loss_e += l.to_f64().unwrap();
                    ue.iter_mut().for_each(|u| *u *= inv_b);
                }
            }
        }

        let mut out = ChunkOut {
            ge: Vec::new(),
            gs: Vec::new(),
            block_in: Vec::new(),
            texel_in: Vec::new(),
            loss_e,
            loss_c,
        };
        let texel_trained = self.sides.texel && self.objective != Objective::NaiveQuantized;
        if self.sides.endpoint {
            out.ge = vec![R::zero(); model.endpoint_net.param_count()];
            out.block_in = vec![R::zero(); n * bd];
            model
                .endpoint_net
                .backward_batch(&mut ecache, &up_e, &mut out.ge, Some(&mut out.block_in));
        }
        if texel_trained {
            out.gs = vec![R::zero(); model.second_net.param_count()];
            out.texel_in = vec![R::zero(); 16 * n * td];
            model
                .second_net
                .backward_batch(&mut tcache, &up_s, &mut out.gs, Some(&mut out.texel_in));
        }
        out
    }
}

#[cfg(feature = "parallel")]
fn map_chunks<T: Send>(chunks: &[&[(usize, usize)]], f: impl Fn(&[(usize, usize)]) -> T + Sync + Send) -> Vec<T> {
    use rayon::prelude::*;
    chunks.par_iter().map(|c| f(c)).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_chunks<T>(chunks: &[&[(usize, usize)]], f: impl Fn(&[(usize, usize)]) -> T) -> Vec<T> {
    chunks.iter().map(|c| f(c)).collect()
}

/// Batch-mean losses `(endpoint side, texel side)` and their gradients,
/// accumulated into `grads`. Naive objectives report their single loss as
/// the endpoint-side value. Grids are evaluated with whatever quantization
/// state they carry.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients<R: Real>(
    model: &NtbcModel<R>,
    material: &Material,
    heads: &[usize],
    batch: &[(usize, usize)],
    objective: Objective,
    sides: Sides,
    loss: &LossConfig,
    chunk_blocks: usize,
    grads: &mut ModelGrads<R>,
) -> (f64, f64) {
    let ctx = GradCtx {
        model,
        material,
        heads,
        objective,
        sides,
        loss: *loss,
        batch_len: batch.len(),
    };
    let chunks: Vec<&[(usize, usize)]> = batch.chunks(chunk_blocks.max(1)).collect();
    let outs = map_chunks(&chunks, |c| ctx.chunk(c));
    let (mut le, mut lc) = (0.0, 0.0);
    let bd = model.block_grid.output_dim();
    let td = model.texel_grid.output_dim();
    for (chunk, out) in chunks.iter().zip(outs) {
        le += out.loss_e;
        lc += out.loss_c;
        grads.endpoint_net.iter_mut().zip(&out.ge).for_each(|(g, &v)| *g += v);
        grads.second_net.iter_mut().zip(&out.gs).for_each(|(g, &v)| *g += v);
        if !out.block_in.is_empty() {
            for (i, &(bx, by)) in chunk.iter().enumerate() {
                model.block_grid.backward(
                    block_center(material, bx, by),
                    &out.block_in[i * bd..(i + 1) * bd],
                    &mut grads.block_grid,
                );
            }
        }
        if !out.texel_in.is_empty() {
            for (i, &(bx, by)) in chunk.iter().enumerate() {
                for j in 0..16 {
                    let k = i * 16 + j;
                    model.texel_grid.backward(
                        texel_center(material, bx, by, j),
                        &out.texel_in[k * td..(k + 1) * td],
                        &mut grads.texel_grid,
                    );
                }
            }
        }
    }
    let b = batch.len() as f64;
    (le / b, lc / (16.0 * b))
}

struct Optim {
    block: Vec<AdamState<f32>>,
    texel: Vec<AdamState<f32>>,
    endpoint: AdamState<f32>,
    second: AdamState<f32>,
}

impl Optim {
    fn new(model: &NtbcModel<f32>) -> Self {
        Optim {
            block: model
                .block_grid
                .levels()
                .iter()
                .map(|l| AdamState::new(l.len()))
                .collect(),
            texel: model
                .texel_grid
                .levels()
                .iter()
                .map(|l| AdamState::new(l.len()))
                .collect(),
            endpoint: AdamState::new(model.endpoint_net.param_count()),
            second: AdamState::new(model.second_net.param_count()),
        }
    }

    fn step(&mut self, model: &mut NtbcModel<f32>, g: &ModelGrads<f32>, sides: Sides, lr_grid: f64, lr_mlp: f64) {
        if sides.endpoint {
            for ((p, gr), s) in model
                .block_grid
                .levels_mut()
                .iter_mut()
                .zip(&g.block_grid.levels)
                .zip(&mut self.block)
            {
                adam_step(p, gr, s, lr_grid);
            }
            adam_step(
                model.endpoint_net.params_mut(),
                &g.endpoint_net,
                &mut self.endpoint,
                lr_mlp,
            );
        }
        if sides.texel {
            for ((p, gr), s) in model
                .texel_grid
                .levels_mut()
                .iter_mut()
                .zip(&g.texel_grid.levels)
                .zip(&mut self.texel)
            {
                adam_step(p, gr, s, lr_grid);
            }
            adam_step(model.second_net.params_mut(), &g.second_net, &mut self.second, lr_mlp);
        }
    }
}

fn check_finite(step: u64, phase: Phase, le: f64, lc: f64) -> Result<()> {
    if le.is_finite() && lc.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            step: step as usize,
            phase: phase.as_str(),
            loss_endpoint: le,
            loss_color: lc,
        })
    }
}

/// Snaps grids to their 8-bit values and MLP weights to half precision, so
/// the in-memory model equals a save/load round trip.
pub fn finalize_for_storage(model: &mut NtbcModel<f32>) {
    for g in [&mut model.block_grid, &mut model.texel_grid] {
        g.commit_quantization();
        g.set_quant_enabled(true);
    }
    model.endpoint_net.round_to_f16();
    model.second_net.round_to_f16();
}

/// Trains one model for `mode` on `material`. `grids` defaults to the
/// material-scaled presets.
pub fn train(
    material: &Material,
    mode: ModelMode,
    grids: Option<(GridConfig, GridConfig)>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let heads = mode.head_textures(&material.kinds())?;
    let (block_cfg, texel_cfg) = match grids {
        Some(g) => g,
        None => material.scaled_grids()?,
    };
    let mut model = NtbcModel::<f32>::new(mode, block_cfg, texel_cfg, config.seed);
    model.temperature = config.temperature;
    let mut optim = Optim::new(&model);
    let mut grads = ModelGrads::zeros(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x6261_7463_6865_7321);
    let total = config.total_steps();
    let mut sched_grid = LrSchedule::new(config.lr_grids, total);
    let mut sched_mlp = LrSchedule::new(config.lr_mlps, total);
    sched_grid.warmup = config.warmup;
    sched_mlp.warmup = config.warmup;
    let loss_cfg = LossConfig::new(config.temperature, mode.bc1_slots());
    let naive = mode.approach == Approach::Naive;
    let boundary = config.stage_boundary();
    let chunk = config.chunk_blocks();

    let mut log = Vec::with_capacity(total as usize);
    let mut pre_qat = None;
    let mut frozen = None;
    for k in 0..total {
        let qat = k >= config.iterations;
        if qat && pre_qat.is_none() {
            pre_qat = Some(model.clone());
            log::info!("step {k}: quantization-aware phase");
            model.block_grid.set_quant_enabled(true);
            model.texel_grid.set_quant_enabled(true);
        }
        if qat {
            model.block_grid.update_quant_ranges();
            model.texel_grid.update_quant_ranges();
        }
        let stage2 = naive && k >= boundary;
        if stage2 && frozen.is_none() {
            log::info!("step {k}: naive quantized-weight stage");
            frozen = Some(model.second_net.clone());
        }
        let (objective, mut sides) = match (naive, stage2) {
            (false, _) => (Objective::Ntbc, Sides::BOTH),
            (true, false) => (Objective::NaiveContinuous, Sides::BOTH),
            (true, true) => (
                Objective::NaiveQuantized,
                Sides {
                    endpoint: true,
                    texel: false,
                },
            ),
        };
        if config.alternate && !stage2 {
            sides = Sides {
                endpoint: k % 2 == 0,
                texel: k % 2 == 1,
            };
            if naive {
                // The continuous naive loss couples both sides; evaluate it
                // whole and update one side.
                sides = Sides::BOTH;
            }
        }
        let batch = sample_batch(&mut rng, material, config.batch_blocks);
        grads.clear();
        let (le, lc) = compute_gradients(
            &model, material, &heads, &batch, objective, sides, &loss_cfg, chunk, &mut grads,
        );
        let phase = if qat {
            Phase::Qat
        } else if stage2 {
            Phase::NaiveStage2
        } else {
            Phase::Train
        };
        check_finite(k, phase, le, lc)?;
        let (lr_grid, lr_mlp) = (sched_grid.lr_at(k + 1), sched_mlp.lr_at(k + 1));
        let mut update = sides;
        if naive && config.alternate && !stage2 {
            update = Sides {
                endpoint: k % 2 == 0,
                texel: k % 2 == 1,
            };
        }
        optim.step(&mut model, &grads, update, lr_grid, lr_mlp);
        log.push(LogRow {
            step: k,
            loss_endpoint: le,
            loss_color: lc,
            lr_grid,
            lr_mlp,
            phase,
        });
        if k % 500 == 0 || k + 1 == total {
            log::debug!("step {k} {} endpoint {le:.6} color {lc:.6}", phase.as_str());
        }
    }
    let pre_qat = pre_qat.unwrap_or_else(|| model.clone());
    let weight_net_stage2 = frozen.map(|start| (start, model.second_net.clone()));
    finalize_for_storage(&mut model);
    if let Some(path) = &config.log_path {
        std::fs::write(path, log_csv(&log)).map_err(|e| Error::io(path, e))?;
    }
    Ok(TrainOutcome {
        model,
        pre_qat,
        log,
        weight_net_stage2,
    })
}

/// Decodes every texture a model covers, as `(texture index, surface)`.
pub fn infer_material(model: &NtbcModel<f32>, material: &Material) -> Result<Vec<(usize, BlockSurface)>> {
    let heads = model.mode.head_textures(&material.kinds())?;
    let surfaces = model.infer_surfaces(material.width(), material.height())?;
    Ok(heads.into_iter().zip(surfaces).collect())
}

/// Per-texture quality of the models' decoded output, next to the reference
/// encoder, with storage totals.
pub fn evaluate(models: &[&NtbcModel<f32>], material: &Material) -> Result<QualityReport> {
    let mut rows: Vec<Option<TextureQuality>> = vec![None; material.textures().len()];
    let mut model_bytes = 0u64;
    for model in models {
        model_bytes += model.to_checkpoint_bytes().len() as u64;
        for (t, surface) in infer_material(model, material)? {
            let original = &material.textures()[t];
            let q = TextureQuality::measure(&material.names()[t], original, &surface.decode())?
                .with_reference(original, &material.references()[t].decode())?;
            rows[t] = Some(q);
        }
    }
    Ok(QualityReport {
        textures: rows.into_iter().flatten().collect(),
        model_bytes: Some(model_bytes),
        reference_bc_bytes: Some(material.references().iter().map(|s| s.payload_len() as u64).sum()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layout;
    use crate::synth;

    fn tiny() -> Material {
        Material::new(
            "tiny",
            vec![
                ("rgb".into(), synth::smooth_gradient_rgb(16, 16)),
                ("sc".into(), synth::perlin_single(16, 16, 2.0, 3)),
            ],
        )
        .unwrap()
    }

    #[test]
    fn batches_are_seeded() {
        let m = tiny();
        let a = sample_batch(&mut ChaCha8Rng::seed_from_u64(1), &m, 50);
        let b = sample_batch(&mut ChaCha8Rng::seed_from_u64(1), &m, 50);
        assert_eq!(a, b);
        assert!(a.iter().all(|&(x, y)| x < 4 && y < 4));
        assert_eq!(m.head_targets(&[0, 1], 1, 2)[1].texels.len(), 16);
    }

    #[test]
    fn config_accounting() {
        let c = TrainConfig {
            iterations: 2000,
            ..Default::default()
        };
        assert_eq!((c.qat_steps(), c.total_steps(), c.stage_boundary()), (200, 2200, 1600));
        assert!(TrainConfig {
            qat_fraction: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn chunking_does_not_change_results() {
        let m = tiny();
        let mode = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 1, 1).unwrap();
        let g = GridConfig::new(2, 4, 2).unwrap();
        let model = NtbcModel::<f64>::new(mode, g, g, 4);
        let batch = sample_batch(&mut ChaCha8Rng::seed_from_u64(2), &m, 10);
        let cfg = LossConfig::new(0.01, 8);
        let run = |chunk| {
            let mut gr = ModelGrads::zeros(&model);
            let l = compute_gradients(
                &model,
                &m,
                &[0, 1],
                &batch,
                Objective::Ntbc,
                Sides::BOTH,
                &cfg,
                chunk,
                &mut gr,
            );
            (l, gr)
        };
        let (l1, g1) = run(3);
        let (l2, g2) = run(10);
        assert!((l1.0 - l2.0).abs() < 1e-12 && (l1.1 - l2.1).abs() < 1e-12);
        for (a, b) in g1.endpoint_net.iter().zip(&g2.endpoint_net) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn short_run_learns_and_is_deterministic() {
        let m = tiny();
        let mode = ModelMode::new(Approach::Ntbc, Layout::Aggressive, 1, 1).unwrap();
        let cfg = TrainConfig {
            iterations: 60,
            batch_blocks: 8,
            seed: 7,
            ..Default::default()
        };
        let a = train(&m, mode, None, &cfg).unwrap();
        let b = train(&m, mode, None, &cfg).unwrap();
        assert_eq!(a.model.to_checkpoint_bytes(), b.model.to_checkpoint_bytes());
        assert_eq!(a.log.len(), 66);
        assert_eq!(a.log[60].phase, Phase::Qat);
        let first: f64 = a.log[..10].iter().map(|r| r.loss_endpoint + r.loss_color).sum();
        let last: f64 = a.log[50..60].iter().map(|r| r.loss_endpoint + r.loss_color).sum();
        assert!(last < first, "{first} {last}");
        let report = evaluate(&[&a.model], &m).unwrap();
        assert_eq!(report.textures.len(), 2);
    }
}
