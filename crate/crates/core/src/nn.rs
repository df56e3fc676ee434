//! Plain MLPs (three selu hidden layers of 64, sigmoid output), Adam and a
//! warmup + cosine learning-rate schedule.
//!
//! Parameters live in one flat vector, layer by layer, each layer as an
//! `out x in` row-major weight matrix followed by its `out` biases.

use half::f16;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::real::Real;

pub const HIDDEN_WIDTH: usize = 64;
pub const HIDDEN_LAYERS: usize = 3;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;

#[inline]
pub fn selu<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::lit(SELU_LAMBDA) * x
    } else {
        R::lit(SELU_LAMBDA * SELU_ALPHA) * (x.exp() - R::one())
    }
}

#[inline]
fn selu_grad<R: Real>(x: R) -> R {
    if x > R::zero() {
        R::lit(SELU_LAMBDA)
    } else {
        R::lit(SELU_LAMBDA * SELU_ALPHA) * x.exp()
    }
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<R> {
    dims: Vec<usize>,
    params: Vec<R>,
}

/// Activations kept by a batched forward pass for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<R> {
    batch: usize,
    /// `acts[0]` is the input; `acts[l + 1]` is the output of layer `l`.
    acts: Vec<Vec<R>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<R>>,
    delta: Vec<R>,
    delta_next: Vec<R>,
}

impl<R: Real> MlpCache<R> {
    pub fn output(&self) -> &[R] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn layer_offsets(dims: &[usize]) -> Vec<(usize, usize)> {
    let mut off = 0;
    dims.windows(2)
        .map(|d| {
            let w = off;
            off += d[0] * d[1];
            let b = off;
            off += d[1];
            (w, b)
        })
        .collect()
}

impl<R: Real> Mlp<R> {
    /// Standard shape `input -> 64 -> 64 -> 64 -> output`, all zeros.
    pub fn zeros(input: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        dims.push(output);
        Self::with_dims(dims).expect("nonzero dims")
    }

    pub fn with_dims(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid MLP dims {dims:?}")));
        }
        let n = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
        Ok(Mlp {
            dims,
            params: vec![R::zero(); n],
        })
    }

    /// He-initialized standard network.
    pub fn he<G: Rng + ?Sized>(input: usize, output: usize, rng: &mut G) -> Self {
        let mut m = Self::zeros(input, output);
        m.he_init(rng);
        m
    }

    /// Weights from `Normal(0, 2 / fan_in)`, biases zero.
    pub fn he_init<G: Rng + ?Sized>(&mut self, rng: &mut G) {
        let offsets = layer_offsets(&self.dims);
        for (l, &(w, b)) in offsets.iter().enumerate() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            for p in &mut self.params[w..b] {
                *p = R::lit(normal.sample(rng));
            }
            self.params[b..b + fan_out].fill(R::zero());
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(weights, biases)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[R], &[R]) {
        let (w, b) = layer_offsets(&self.dims)[l];
        (&self.params[w..b], &self.params[b..b + self.dims[l + 1]])
    }

    /// Forward pass over `batch` row-major inputs; the outputs are in
    /// `cache.output()`.
    pub fn forward_batch(&self, x: &[R], batch: usize, cache: &mut MlpCache<R>) -> Result<()> {
        let d_in = self.input_dim();
        if x.len() != batch * d_in {
            return Err(Error::Shape(format!(
                "MLP input has {} values, expected {batch} x {d_in}",
                x.len()
            )));
        }
        let layers = self.dims.len() - 1;
        cache.batch = batch;
        cache.acts.resize_with(layers + 1, Vec::new);
        cache.pre.resize_with(layers, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        for (l, &(w, b)) in layer_offsets(&self.dims).iter().enumerate() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let weights = &self.params[w..b];
            let bias = &self.params[b..b + n_out];
            let z = &mut cache.pre[l];
            z.clear();
            z.resize(batch * n_out, R::zero());
            for row in z.chunks_exact_mut(n_out) {
                row.copy_from_slice(bias);
            }
            // z = x * W^T + b
            R::gemm(
                batch,
                n_in,
                n_out,
                &cache.acts[l],
                n_in as isize,
                1,
                weights,
                1,
                n_in as isize,
                R::one(),
                z,
                n_out as isize,
                1,
            );
            let out = &mut cache.acts[l + 1];
            out.clear();
            if l + 1 == layers {
                out.extend(z.iter().map(|&v| sigmoid(v)));
            } else {
                out.extend(z.iter().map(|&v| selu(v)));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[R]) -> Result<Vec<R>> {
        let mut cache = MlpCache::default();
        self.forward_batch(x, 1, &mut cache)?;
        Ok(cache.output().to_vec())
    }

    /// Accumulates parameter gradients into `grads` (same layout as
    /// `params()`) and, when given, writes the input gradient
    /// (`batch x input_dim`) into `input_grad`.
    pub fn backward_batch(
        &self,
        cache: &mut MlpCache<R>,
        upstream: &[R],
        grads: &mut [R],
        input_grad: Option<&mut [R]>,
    ) {
        let batch = cache.batch;
        let layers = self.dims.len() - 1;
        assert_eq!(upstream.len(), batch * self.output_dim());
        assert_eq!(grads.len(), self.params.len());
        let offsets = layer_offsets(&self.dims);

        let mut delta = std::mem::take(&mut cache.delta);
        let mut delta_next = std::mem::take(&mut cache.delta_next);
        delta.clear();
        delta.extend(
            upstream
                .iter()
                .zip(&cache.acts[layers])
                .map(|(&g, &s)| g * s * (R::one() - s)),
        );
        let mut input_grad = input_grad;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w, b) = offsets[l];
            let (gw, gb) = grads[w..b + n_out].split_at_mut(b - w);
            // dW += delta^T * x
            R::gemm(
                n_out,
                batch,
                n_in,
                &delta,
                1,
                n_out as isize,
                &cache.acts[l],
                n_in as isize,
                1,
                R::one(),
                gw,
                n_in as isize,
                1,
            );
            for row in delta.chunks_exact(n_out) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            // dx = delta * W
            let target: &mut Vec<R> = &mut delta_next;
            target.clear();
            target.resize(batch * n_in, R::zero());
            R::gemm(
                batch,
                n_out,
                n_in,
                &delta,
                n_out as isize,
                1,
                &self.params[w..b],
                n_in as isize,
                1,
                R::zero(),
                target,
                n_in as isize,
                1,
            );
            if l == 0 {
                if let Some(out) = input_grad.take() {
                    out.copy_from_slice(target);
                }
                break;
            }
            for (d, &z) in target.iter_mut().zip(&cache.pre[l - 1]) {
                *d *= selu_grad(z);
            }
            std::mem::swap(&mut delta, &mut delta_next);
        }
        cache.delta = delta;
        cache.delta_next = delta_next;
    }

    /// Rounds every parameter to the nearest half-precision value.
    pub fn round_to_f16(&mut self) {
        for p in &mut self.params {
            *p = R::lit(f16::from_f64(p.to_f64().unwrap()).to_f64());
        }
    }

    /// Little-endian half-precision parameters.
    pub fn to_f16_bytes(&self) -> Vec<u8> {
        self.params
            .iter()
            .flat_map(|p| f16::from_f64(p.to_f64().unwrap()).to_le_bytes())
            .collect()
    }

    pub fn from_f16_bytes(dims: Vec<usize>, bytes: &[u8]) -> Result<Self> {
        let mut m = Self::with_dims(dims)?;
        if bytes.len() != 2 * m.params.len() {
            return Err(Error::Shape(format!(
                "MLP payload has {} bytes, expected {}",
                bytes.len(),
                2 * m.params.len()
            )));
        }
        for (p, b) in m.params.iter_mut().zip(bytes.chunks_exact(2)) {
            *p = R::lit(f16::from_le_bytes([b[0], b[1]]).to_f64());
        }
        Ok(m)
    }

    pub fn storage_bytes(&self) -> usize {
        2 * self.params.len()
    }

    pub fn cast<S: Real>(&self) -> Mlp<S> {
        Mlp {
            dims: self.dims.clone(),
            params: self.params.iter().map(|p| S::lit(p.to_f64().unwrap())).collect(),
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-15;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<R> {
    pub m: Vec<R>,
    pub v: Vec<R>,
    pub step: u64,
}

impl<R: Real> AdamState<R> {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![R::zero(); len],
            v: vec![R::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<R: Real>(params: &mut [R], grads: &[R], state: &mut AdamState<R>, lr: f64) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (R::lit(ADAM_BETA1), R::lit(ADAM_BETA2));
    let c1 = R::lit(1.0 / (1.0 - ADAM_BETA1.powi(t)));
    let c2 = R::lit(1.0 / (1.0 - ADAM_BETA2.powi(t)));
    let (lr, eps) = (R::lit(lr), R::lit(ADAM_EPSILON));
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (R::one() - b1) * g;
        *v = b2 * *v + (R::one() - b2) * g * g;
        *p -= lr * (*m * c1) / ((*v * c2).sqrt() + eps);
    }
}

pub const WARMUP_STEPS: u64 = 10;

/// Linear warmup to `base_lr`, then cosine annealing to zero at `total_steps`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup: u64,
    pub total_steps: u64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        LrSchedule {
            base_lr,
            warmup: WARMUP_STEPS,
            total_steps,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step <= self.warmup {
            return self.base_lr * step as f64 / self.warmup.max(1) as f64;
        }
        let t = (step - self.warmup) as f64 / (self.total_steps - self.warmup) as f64;
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn activations() {
        assert_eq!(selu(0.0f64), 0.0);
        assert!((selu(1.0f64) - 1.0507).abs() < 1e-4);
        assert!((selu(-1.0f64) - SELU_LAMBDA * SELU_ALPHA * ((-1f64).exp() - 1.0)).abs() < 1e-12);
        assert_eq!(sigmoid(0.0f32), 0.5);
        assert!(sigmoid(30.0f64) < 1.0 && sigmoid(-30.0f64) > 0.0);
    }

    #[test]
    fn zero_network_outputs_half() {
        let m = Mlp::<f32>::zeros(5, 3);
        assert_eq!(m.dims(), &[5, 64, 64, 64, 3]);
        assert_eq!(m.forward(&[0.3; 5]).unwrap(), vec![0.5; 3]);
        assert!(m.forward(&[0.3; 4]).is_err());
    }

    #[test]
    fn he_init_statistics_and_determinism() {
        let a = Mlp::<f32>::he(64, 8, &mut rng(7));
        let b = Mlp::<f32>::he(64, 8, &mut rng(7));
        assert_eq!(a, b);
        let (w, bias) = a.layer(1);
        assert!(bias.iter().all(|&v| v == 0.0));
        let n = w.len() as f64;
        let mean = w.iter().map(|&v| v as f64).sum::<f64>() / n;
        let sd = (w.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        let want = (2.0f64 / 64.0).sqrt();
        assert!((sd - want).abs() / want < 0.1, "{sd}");
    }

    #[test]
    fn batched_forward_matches_single() {
        let m = Mlp::<f64>::he(4, 2, &mut rng(1));
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let mut cache = MlpCache::default();
        m.forward_batch(&x, 3, &mut cache).unwrap();
        for r in 0..3 {
            let single = m.forward(&x[r * 4..r * 4 + 4]).unwrap();
            for k in 0..2 {
                assert!((single[k] - cache.output()[r * 2 + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::<f64>::he(4, 2, &mut rng(2));
        let x = [0.1, 0.7, 0.3, 0.9, 0.5, 0.2, 0.8, 0.4];
        let up = [0.3, -1.2, 0.7, 0.5];
        let loss = |m: &Mlp<f64>, x: &[f64]| {
            let mut c = MlpCache::default();
            m.forward_batch(x, 2, &mut c).unwrap();
            c.output().iter().zip(&up).map(|(o, u)| o * u).sum::<f64>()
        };
        let mut cache = MlpCache::default();
        m.forward_batch(&x, 2, &mut cache).unwrap();
        let mut grads = vec![0.0; m.param_count()];
        let mut gx = vec![0.0; 8];
        m.backward_batch(&mut cache, &up, &mut grads, Some(&mut gx));
        let h = 1e-3;
        for i in (0..m.param_count()).step_by(37) {
            let (mut a, mut b) = (m.clone(), m.clone());
            a.params_mut()[i] += h;
            b.params_mut()[i] -= h;
            let fd = (loss(&a, &x) - loss(&b, &x)) / (2.0 * h);
            assert!(
                (fd - grads[i]).abs() <= 1e-6 + 1e-4 * fd.abs(),
                "{i}: {fd} {}",
                grads[i]
            );
        }
        for i in 0..8 {
            let (mut a, mut b) = (x, x);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&m, &a) - loss(&m, &b)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let m = Mlp::<f32>::he(4, 2, &mut rng(3));
        let mut cache = MlpCache::default();
        m.forward_batch(&[0.5; 4], 1, &mut cache).unwrap();
        let mut grads = vec![0.0; m.param_count()];
        m.backward_batch(&mut cache, &[0.0, 0.0], &mut grads, None);
        assert!(grads.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn f16_round_trip() {
        let m = Mlp::<f32>::he(14, 20, &mut rng(4));
        let bytes = m.to_f16_bytes();
        assert_eq!(bytes.len(), 2 * 10_580);
        let back = Mlp::<f32>::from_f16_bytes(m.dims().to_vec(), &bytes).unwrap();
        let mut rounded = m.clone();
        rounded.round_to_f16();
        assert_eq!(back, rounded);
        assert!(Mlp::<f32>::from_f16_bytes(m.dims().to_vec(), &bytes[1..]).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0f64, -2.0, 3.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, -1e-3, 0.0], &mut s, 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::new(0.01, 110);
        assert_eq!(s.lr_at(0), 0.0);
        assert!((s.lr_at(5) - 0.005).abs() < 1e-15);
        assert_eq!(s.lr_at(10), 0.01);
        assert!((s.lr_at(60) - 0.005).abs() < 1e-12);
        assert!(s.lr_at(110).abs() < 1e-18);
        for k in 10..110 {
            assert!(s.lr_at(k + 1) <= s.lr_at(k));
        }
    }
}
