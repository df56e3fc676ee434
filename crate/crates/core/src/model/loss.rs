//! Training losses for one block (endpoint side) or one texel (color side).
//!
//! All losses are means: the endpoint term over endpoint components, the
//! color term over color components, the decoded-color term over texels and
//! color components. Gradients are with respect to the network outputs.

use super::ste::{
    compute_distances_rgb, compute_distances_single, distance_grad, quantize_weight, select_index, softmax,
    ste_argmax_backward, DistanceSet, MAX_SLOTS,
};
use crate::bc_codec::{bc1_weights, bc4_slot_weights_mode, Bc4Mode};
use crate::real::Real;
use crate::texture_io::TextureKind;

/// Reference data of one texture inside one block: the reference encoder's
/// dequantized endpoints (BC1 pairs ordered code0 >= code1), its BC4 mode,
/// and the uncompressed texels. Single-channel data uses component 0.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct HeadTarget {
    pub kind: TextureKind,
    pub mode: Bc4Mode,
    pub e0: [f32; 3],
    pub e1: [f32; 3],
    pub texels: [[f32; 3]; 16],
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub temperature: f64,
    /// Decode with the softmax-weighted palette instead of the argmax entry.
    /// The loss then is exactly differentiable, which finite-difference tests
    /// need; training uses the hard argmax.
    pub soft_forward: bool,
    /// Distance slots for BC1 (4, or 8 with 4 dummies).
    pub bc1_slots: usize,
}

impl LossConfig {
    pub fn new(temperature: f64, bc1_slots: usize) -> Self {
        LossConfig {
            temperature,
            soft_forward: false,
            bc1_slots,
        }
    }
}

/// `(L_e or L_c, L_cd)`.
#[derive(Copy, Clone, Debug, Default, PartialEq)]
pub struct LossParts<R> {
    pub direct: R,
    pub decoded: R,
}

impl<R: Real> LossParts<R> {
    pub fn total(&self) -> R {
        self.direct + self.decoded
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
enum Slot {
    /// `(1 - w) e0 + w e1`
    Lerp(f64),
    Const(f64),
}

/// Palette structure of a texture kind / BC4 mode, in linear slot order.
fn slot_layout(kind: TextureKind, mode: Bc4Mode) -> ([Slot; MAX_SLOTS], usize) {
    let mut s = [Slot::Const(0.0); MAX_SLOTS];
    match (kind, mode) {
        (TextureKind::Rgb, _) => {
            for (n, slot) in s.iter_mut().take(4).enumerate() {
                *slot = Slot::Lerp(n as f64 / 3.0);
            }
            (s, 4)
        }
        (TextureKind::Single, Bc4Mode::Interpolated8) => {
            for (n, slot) in s.iter_mut().enumerate() {
                *slot = Slot::Lerp(n as f64 / 7.0);
            }
            (s, 8)
        }
        (TextureKind::Single, Bc4Mode::Interpolated6) => {
            for (n, slot) in s.iter_mut().enumerate().take(7).skip(1) {
                *slot = Slot::Lerp((n - 1) as f64 / 5.0);
            }
            s[7] = Slot::Const(1.0);
            (s, 8)
        }
    }
}

fn palette<R: Real>(
    layout: &[Slot; MAX_SLOTS],
    count: usize,
    ch: usize,
    e0: &[R; 3],
    e1: &[R; 3],
) -> [[R; 3]; MAX_SLOTS] {
    let mut p = [[R::zero(); 3]; MAX_SLOTS];
    for n in 0..count {
        for k in 0..ch {
            p[n][k] = match layout[n] {
                Slot::Lerp(w) => (R::one() - R::lit(w)) * e0[k] + R::lit(w) * e1[k],
                Slot::Const(v) => R::lit(v),
            };
        }
    }
    p
}

/// Interpolation weights `w_n` of the reference palette, used by the
/// expected-weight estimator. `None` when they do not exist (BC4 six-value
/// mode with equal endpoints), in which case the estimator contributes no
/// gradient: its upstream is proportional to `e1 - e0 = 0`.
fn reference_weights<R: Real>(t: &HeadTarget) -> Option<[R; MAX_SLOTS]> {
    let mut w = [R::zero(); MAX_SLOTS];
    match t.kind {
        TextureKind::Rgb => w[..4].copy_from_slice(&bc1_weights::<R>()),
        TextureKind::Single => {
            w = bc4_slot_weights_mode(t.mode, R::lit(t.e0[0] as f64), R::lit(t.e1[0] as f64));
            if w.iter().any(|v| !v.is_finite()) {
                return None;
            }
        }
    }
    Some(w)
}

fn distances<R: Real>(
    ch: usize,
    c: &[R; 3],
    pal: &[[R; 3]; MAX_SLOTS],
    count: usize,
    bc1_slots: usize,
) -> DistanceSet<R> {
    if ch == 3 {
        compute_distances_rgb(*c, &pal[..count], bc1_slots)
    } else {
        let single: [R; MAX_SLOTS] = std::array::from_fn(|n| pal[n][0]);
        compute_distances_single(c[0], &single[..count], MAX_SLOTS)
    }
}

/// `d d_n / d c` over the first `ch` channels.
fn dist_grad<R: Real>(ch: usize, c: &[R; 3], c_n: &[R; 3]) -> [R; 3] {
    if ch == 3 {
        distance_grad(c, c_n)
    } else {
        let g = distance_grad(&[c[0]], &[c_n[0]]);
        [g[0], R::zero(), R::zero()]
    }
}

fn lit3<R: Real>(v: &[f32; 3]) -> [R; 3] {
    v.map(|x| R::lit(x as f64))
}

pub fn color_components(targets: &[HeadTarget]) -> usize {
    targets.iter().map(|t| t.kind.channels()).sum()
}

/// Outcome of decoding one texel through the distance/argmax path.
struct Decoded<R> {
    ds: DistanceSet<R>,
    color: [R; 3],
}

fn decode_texel<R: Real>(
    ch: usize,
    query: &[R; 3],
    select_pal: &[[R; 3]; MAX_SLOTS],
    decode_pal: &[[R; 3]; MAX_SLOTS],
    count: usize,
    cfg: &LossConfig,
) -> Decoded<R> {
    let ds = distances(ch, query, select_pal, count, cfg.bc1_slots);
    let color = if cfg.soft_forward {
        let s = softmax(&ds, R::lit(cfg.temperature));
        let mut c = [R::zero(); 3];
        for n in 0..count {
            for k in 0..ch {
                c[k] += s[n] * decode_pal[n][k];
            }
        }
        c
    } else {
        decode_pal[select_index(&ds)]
    };
    Decoded { ds, color }
}

/// Per-slot `dL/dd_n` through the expected-weight estimator, given
/// `dL/d decoded` per channel.
fn ste_grads<R: Real>(t: &HeadTarget, ds: &DistanceSet<R>, d_dec: &[R; 3], cfg: &LossConfig) -> Option<[R; MAX_SLOTS]> {
    let w = reference_weights::<R>(t)?;
    let ch = t.kind.channels();
    let up = (0..ch).fold(R::zero(), |acc, k| acc + d_dec[k] * R::lit((t.e1[k] - t.e0[k]) as f64));
    Some(ste_argmax_backward(ds, &w, R::lit(cfg.temperature), up))
}

/// Endpoint-network loss for one block: squared error of predicted vs.
/// reference endpoints, plus the error of colors decoded from the reference
/// palette at indices chosen by the predicted palette and reference colors.
/// `pred` holds, per head, `e0` then `e1` (3 or 1 values each); `grad`
/// receives `dL/dpred`.
pub fn loss_endpoint<R: Real>(pred: &[R], targets: &[HeadTarget], cfg: &LossConfig, grad: &mut [R]) -> LossParts<R> {
    let e_len = pred.len();
    debug_assert_eq!(e_len, targets.iter().map(|t| 2 * t.kind.channels()).sum::<usize>());
    let n_e = R::lit(e_len as f64);
    let norm_cd = R::lit((16 * color_components(targets)) as f64);
    let two = R::lit(2.0);
    let mut parts = LossParts::default();
    let mut off = 0;
    for t in targets {
        let ch = t.kind.channels();
        let (ref0, ref1) = (lit3::<R>(&t.e0), lit3::<R>(&t.e1));
        let mut p0 = [R::zero(); 3];
        let mut p1 = [R::zero(); 3];
        p0[..ch].copy_from_slice(&pred[off..off + ch]);
        p1[..ch].copy_from_slice(&pred[off + ch..off + 2 * ch]);
        for k in 0..ch {
            let (a, b) = (p0[k] - ref0[k], p1[k] - ref1[k]);
            parts.direct += a * a + b * b;
            grad[off + k] = two * a / n_e;
            grad[off + ch + k] = two * b / n_e;
        }

        let (layout, count) = slot_layout(t.kind, t.mode);
        let pred_pal = palette(&layout, count, ch, &p0, &p1);
        let ref_pal = palette(&layout, count, ch, &ref0, &ref1);
        for texel in &t.texels {
            let c = lit3::<R>(texel);
            let dec = decode_texel(ch, &c, &pred_pal, &ref_pal, count, cfg);
            let mut d_dec = [R::zero(); 3];
            for k in 0..ch {
                let e = dec.color[k] - c[k];
                parts.decoded += e * e;
                d_dec[k] = two * e / norm_cd;
            }
            let Some(g) = ste_grads(t, &dec.ds, &d_dec, cfg) else {
                continue;
            };
            for n in 0..count {
                let Slot::Lerp(w) = layout[n] else { continue };
                if g[n] == R::zero() {
                    continue;
                }
                // d d_n / d c_n = -(d d_n / d c)
                let dg = dist_grad(ch, &c, &pred_pal[n]);
                let w = R::lit(w);
                for k in 0..ch {
                    let gc = -g[n] * dg[k];
                    grad[off + k] += gc * (R::one() - w);
                    grad[off + ch + k] += gc * w;
                }
            }
        }
        off += 2 * ch;
    }
    parts.direct /= n_e;
    parts.decoded /= norm_cd;
    parts
}

/// Color-network loss for one texel: squared error of predicted vs.
/// reference color, plus the error of the reference-palette color picked by
/// the predicted color. `pred` holds 3 or 1 values per head.
pub fn loss_color<R: Real>(
    pred: &[R],
    targets: &[HeadTarget],
    texel: usize,
    cfg: &LossConfig,
    grad: &mut [R],
) -> LossParts<R> {
    let n_c = R::lit(color_components(targets) as f64);
    debug_assert_eq!(pred.len(), color_components(targets));
    let two = R::lit(2.0);
    let mut parts = LossParts::default();
    let mut off = 0;
    for t in targets {
        let ch = t.kind.channels();
        let c = lit3::<R>(&t.texels[texel]);
        let mut q = [R::zero(); 3];
        q[..ch].copy_from_slice(&pred[off..off + ch]);
        for k in 0..ch {
            let e = q[k] - c[k];
            parts.direct += e * e;
            grad[off + k] = two * e / n_c;
        }
        let (layout, count) = slot_layout(t.kind, t.mode);
        let ref_pal = palette(&layout, count, ch, &lit3(&t.e0), &lit3(&t.e1));
        let dec = decode_texel(ch, &q, &ref_pal, &ref_pal, count, cfg);
        let mut d_dec = [R::zero(); 3];
        for k in 0..ch {
            let e = dec.color[k] - c[k];
            parts.decoded += e * e;
            d_dec[k] = two * e / n_c;
        }
        if let Some(g) = ste_grads(t, &dec.ds, &d_dec, cfg) {
            for n in 0..count {
                if g[n] == R::zero() {
                    continue;
                }
                let dg = dist_grad(ch, &q, &ref_pal[n]);
                for k in 0..ch {
                    grad[off + k] += g[n] * dg[k];
                }
            }
        }
        off += ch;
    }
    parts.direct /= n_c;
    parts.decoded /= n_c;
    parts
}

/// First naive stage: texels decode as `(1 - w_f) e0 + w_f e1` from the
/// predicted endpoints and continuous predicted weights. `weights` is
/// texel-major, one value per head. Returns the mean squared error.
pub fn loss_naive_continuous<R: Real>(
    endpoints: &[R],
    weights: &[R],
    targets: &[HeadTarget],
    grad_e: &mut [R],
    grad_w: &mut [R],
) -> R {
    let heads = targets.len();
    debug_assert_eq!(weights.len(), 16 * heads);
    let norm = R::lit((16 * color_components(targets)) as f64);
    let two = R::lit(2.0);
    grad_e.fill(R::zero());
    let mut loss = R::zero();
    let mut off = 0;
    for (h, t) in targets.iter().enumerate() {
        let ch = t.kind.channels();
        for (i, texel) in t.texels.iter().enumerate() {
            let w = weights[i * heads + h];
            let mut gw = R::zero();
            for k in 0..ch {
                let (e0, e1) = (endpoints[off + k], endpoints[off + ch + k]);
                let e = (R::one() - w) * e0 + w * e1 - R::lit(texel[k] as f64);
                loss += e * e;
                let g = two * e / norm;
                grad_e[off + k] += g * (R::one() - w);
                grad_e[off + ch + k] += g * w;
                gw += g * (e1 - e0);
            }
            grad_w[i * heads + h] = gw;
        }
        off += 2 * ch;
    }
    loss / norm
}

/// Second naive stage: the continuous weights snap to the nearest weight of
/// the palette implied by the predicted endpoints; only the endpoints get
/// gradient. Constant BC4 slots pass none.
pub fn loss_naive_quantized<R: Real>(endpoints: &[R], weights: &[R], targets: &[HeadTarget], grad_e: &mut [R]) -> R {
    let heads = targets.len();
    let norm = R::lit((16 * color_components(targets)) as f64);
    let two = R::lit(2.0);
    grad_e.fill(R::zero());
    let mut loss = R::zero();
    let mut off = 0;
    for (h, t) in targets.iter().enumerate() {
        let ch = t.kind.channels();
        let (e0, e1) = (&endpoints[off..off + ch], &endpoints[off + ch..off + 2 * ch]);
        let mode = Bc4Mode::from_endpoints(e0[0], e1[0]);
        let (layout, count) = slot_layout(t.kind, mode);
        let slot_w: [R; MAX_SLOTS] = match t.kind {
            TextureKind::Rgb => {
                let mut w = [R::infinity(); MAX_SLOTS];
                w[..4].copy_from_slice(&bc1_weights::<R>());
                w
            }
            TextureKind::Single => bc4_slot_weights_mode(mode, e0[0], e1[0]),
        };
        for (i, texel) in t.texels.iter().enumerate() {
            let n = quantize_weight(weights[i * heads + h], &slot_w[..count]);
            for k in 0..ch {
                let (dec, lerp) = match layout[n] {
                    Slot::Lerp(w) => {
                        let w = R::lit(w);
                        ((R::one() - w) * e0[k] + w * e1[k], Some(w))
                    }
                    Slot::Const(v) => (R::lit(v), None),
                };
                let e = dec - R::lit(texel[k] as f64);
                loss += e * e;
                if let Some(w) = lerp {
                    let g = two * e / norm;
                    grad_e[off + k] += g * (R::one() - w);
                    grad_e[off + ch + k] += g * w;
                }
            }
        }
        off += 2 * ch;
    }
    loss / norm
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_targets(rng: &mut ChaCha8Rng) -> Vec<HeadTarget> {
        let mut out = Vec::new();
        for kind in [TextureKind::Rgb, TextureKind::Single, TextureKind::Single] {
            let ch = kind.channels();
            let mut e0 = [0.0f32; 3];
            let mut e1 = [0.0f32; 3];
            for k in 0..ch {
                e0[k] = rng.random_range(0.05..0.95);
                e1[k] = rng.random_range(0.05..0.95);
            }
            let mode = Bc4Mode::from_endpoints(e0[0], e1[0]);
            let texels = std::array::from_fn(|_| {
                let mut t = [0.0f32; 3];
                for v in t.iter_mut().take(ch) {
                    *v = rng.random_range(0.0..1.0);
                }
                t
            });
            out.push(HeadTarget {
                kind,
                mode,
                e0,
                e1,
                texels,
            });
        }
        out
    }

    fn soft(t: f64) -> LossConfig {
        LossConfig {
            temperature: t,
            soft_forward: true,
            bc1_slots: 8,
        }
    }

    fn check_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64]) {
        let h = 1e-5;
        for i in 0..x.len() {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let err = (fd - analytic[i]).abs();
            assert!(err <= 1e-7 + 1e-4 * fd.abs(), "{i}: fd {fd} analytic {}", analytic[i]);
        }
    }

    #[test]
    fn endpoint_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let targets = random_targets(&mut rng);
            let pred: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..0.95)).collect();
            let cfg = soft(1.0);
            let mut g = vec![0.0; 10];
            loss_endpoint(&pred, &targets, &cfg, &mut g);
            let f = |x: &[f64]| loss_endpoint(x, &targets, &cfg, &mut [0.0; 10]).total();
            check_fd(f, &pred, &g);
        }
    }

    #[test]
    fn color_loss_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for texel in [0, 7, 15] {
            let targets = random_targets(&mut rng);
            let pred: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let cfg = soft(1.0);
            let mut g = vec![0.0; 5];
            loss_color(&pred, &targets, texel, &cfg, &mut g);
            let f = |x: &[f64]| loss_color(x, &targets, texel, &cfg, &mut [0.0; 5]).total();
            check_fd(f, &pred, &g);
        }
    }

    #[test]
    fn naive_continuous_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let targets = random_targets(&mut rng);
        let e: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..1.0)).collect();
        let w: Vec<f64> = (0..48).map(|_| rng.random_range(0.0..1.0)).collect();
        let (mut ge, mut gw) = (vec![0.0; 10], vec![0.0; 48]);
        loss_naive_continuous(&e, &w, &targets, &mut ge, &mut gw);
        let fe = |x: &[f64]| loss_naive_continuous(x, &w, &targets, &mut [0.0; 10], &mut [0.0; 48]);
        check_fd(fe, &e, &ge);
        let fw = |x: &[f64]| loss_naive_continuous(&e, x, &targets, &mut [0.0; 10], &mut [0.0; 48]);
        check_fd(fw, &w, &gw);
    }

    #[test]
    fn exact_prediction_zeroes_direct_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let targets = random_targets(&mut rng);
        let mut pred = Vec::new();
        for t in &targets {
            let ch = t.kind.channels();
            pred.extend(t.e0[..ch].iter().map(|&v| v as f64));
            pred.extend(t.e1[..ch].iter().map(|&v| v as f64));
        }
        let cfg = LossConfig::new(0.01, 4);
        let parts = loss_endpoint(&pred, &targets, &cfg, &mut vec![0.0; pred.len()]);
        assert_eq!(parts.direct, 0.0);
        assert!(parts.decoded > 0.0);
    }

    #[test]
    fn representable_constant_block_has_zero_decoded_loss() {
        let t = HeadTarget {
            kind: TextureKind::Single,
            mode: Bc4Mode::Interpolated8,
            e0: [0.8, 0.0, 0.0],
            e1: [0.1, 0.0, 0.0],
            texels: [[0.8 - 0.7 * 4.0 / 7.0, 0.0, 0.0]; 16],
        };
        let cfg = LossConfig::new(0.01, 4);
        let parts = loss_endpoint(&[0.7f64, 0.2], &[t], &cfg, &mut [0.0; 2]);
        assert!(parts.decoded < 1e-12, "{}", parts.decoded);
        let mut g = [0.0; 1];
        let parts = loss_color(&[t.texels[0][0] as f64], &[t], 3, &cfg, &mut g);
        assert!(parts.total() < 1e-12);
    }
}
