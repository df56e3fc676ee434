//! Distances to palette entries, argmax index selection and the softmax
//! straight-through estimator used to train through it.

use crate::real::Real;

pub const MAX_SLOTS: usize = 8;

/// Negative distances `d_n = -|c - c_n|` to each palette entry. Slots at or
/// past `active` are dummies: they hold `-inf`, never win the argmax and get
/// zero gradient.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct DistanceSet<R> {
    pub d: [R; MAX_SLOTS],
    pub slots: usize,
    pub active: usize,
}

impl<R: Real> DistanceSet<R> {
    pub fn from_values(values: &[R], slots: usize) -> Self {
        assert!(!values.is_empty() && values.len() <= slots && slots <= MAX_SLOTS);
        let mut d = [R::neg_infinity(); MAX_SLOTS];
        d[..values.len()].copy_from_slice(values);
        DistanceSet {
            d,
            slots,
            active: values.len(),
        }
    }

    pub fn is_dummy(&self, n: usize) -> bool {
        n >= self.active
    }

    pub fn active(&self) -> &[R] {
        &self.d[..self.active]
    }
}

/// Floor for `|c - c_n|` in the distance gradient.
const NORM_FLOOR: f64 = 1e-12;

pub fn compute_distances_rgb<R: Real>(c: [R; 3], palette: &[[R; 3]], slots: usize) -> DistanceSet<R> {
    let mut d = [R::zero(); MAX_SLOTS];
    for (n, p) in palette.iter().enumerate() {
        let (a, b, e) = (c[0] - p[0], c[1] - p[1], c[2] - p[2]);
        d[n] = -(a * a + b * b + e * e).sqrt();
    }
    DistanceSet::from_values(&d[..palette.len()], slots)
}

pub fn compute_distances_single<R: Real>(c: R, palette: &[R], slots: usize) -> DistanceSet<R> {
    let mut d = [R::zero(); MAX_SLOTS];
    for (n, &p) in palette.iter().enumerate() {
        d[n] = -(c - p).abs();
    }
    DistanceSet::from_values(&d[..palette.len()], slots)
}

/// `d d_n / d c` for `d_n = -|c - c_n|`, per channel: `-(c - c_n) / |c - c_n|`.
/// The gradient with respect to `c_n` is the negation.
#[inline]
pub fn distance_grad<R: Real, const C: usize>(c: &[R; C], c_n: &[R; C]) -> [R; C] {
    let mut norm = R::zero();
    for k in 0..C {
        norm += (c[k] - c_n[k]) * (c[k] - c_n[k]);
    }
    let norm = norm.sqrt().max(R::lit(NORM_FLOOR));
    std::array::from_fn(|k| -(c[k] - c_n[k]) / norm)
}

/// Argmax over active slots, ties to the lowest index.
pub fn select_index<R: Real>(ds: &DistanceSet<R>) -> usize {
    let mut best = 0;
    for n in 1..ds.active {
        if ds.d[n] > ds.d[best] {
            best = n;
        }
    }
    best
}

/// `softmax(d / T)` over active slots; dummies get 0.
pub fn softmax<R: Real>(ds: &DistanceSet<R>, temperature: R) -> [R; MAX_SLOTS] {
    let mut out = [R::zero(); MAX_SLOTS];
    let max = ds.active().iter().fold(R::neg_infinity(), |m, &v| m.max(v));
    let mut sum = R::zero();
    for (o, &d) in out.iter_mut().zip(ds.active()) {
        *o = ((d - max) / temperature).exp();
        sum += *o;
    }
    for v in &mut out[..ds.active] {
        *v /= sum;
    }
    out
}

/// `w_hat = sum_n w_n * softmax(d / T)_n`.
pub fn expected_weight<R: Real>(ds: &DistanceSet<R>, weights: &[R], temperature: R) -> R {
    let s = softmax(ds, temperature);
    (0..ds.active).fold(R::zero(), |acc, n| acc + weights[n] * s[n])
}

/// Gradient of the loss with respect to each `d_n`, given `upstream =
/// dL/dw_hat`: `upstream * (1/T) * sigma_n * (w_n - w_hat)`. Dummy slots get 0.
pub fn ste_argmax_backward<R: Real>(ds: &DistanceSet<R>, weights: &[R], temperature: R, upstream: R) -> [R; MAX_SLOTS] {
    let s = softmax(ds, temperature);
    let w_hat = (0..ds.active).fold(R::zero(), |acc, n| acc + weights[n] * s[n]);
    let mut out = [R::zero(); MAX_SLOTS];
    let k = upstream / temperature;
    for n in 0..ds.active {
        out[n] = k * s[n] * (weights[n] - w_hat);
    }
    out
}

/// Index of the weight nearest to `w_f`, ties to the lower index. Non-finite
/// weights are skipped. Distances within a few ulps count as ties, so exact
/// midpoints like 0.5 between 3/7 and 4/7 resolve low.
pub fn quantize_weight<R: Real>(w_f: R, weights: &[R]) -> usize {
    let tol = R::epsilon() * R::lit(8.0);
    let mut best = (0, R::infinity());
    for (n, &w) in weights.iter().enumerate() {
        if !w.is_finite() {
            continue;
        }
        let e = (w_f - w).abs();
        if e + tol < best.1 {
            best = (n, e);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bc_codec::{bc1_weights, palette_bc1};

    #[test]
    fn bc1_distance_example() {
        let pal = palette_bc1([0.0f64; 3], [1.0; 3]);
        let ds = compute_distances_rgb([0.0; 3], &pal, 4);
        let s3 = 3f64.sqrt();
        let want = [0.0, -s3 / 3.0, -2.0 * s3 / 3.0, -s3];
        for n in 0..4 {
            assert!((ds.d[n] - want[n]).abs() < 1e-12);
        }
        assert_eq!(select_index(&ds), 0);
    }

    #[test]
    fn dummies_never_win() {
        let pal = palette_bc1([0.2f32; 3], [0.9; 3]);
        let ds = compute_distances_rgb([0.95; 3], &pal, 8);
        assert_eq!((ds.slots, ds.active), (8, 4));
        assert!(ds.is_dummy(5));
        assert_eq!(select_index(&ds), 3);
        let g = ste_argmax_backward(&ds, &bc1_weights::<f32>(), 1.0, 1.0);
        assert!(g[4..].iter().all(|&v| v == 0.0));
        assert!(softmax(&ds, 0.01)[4..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn select_index_ties() {
        let ds = DistanceSet::from_values(&[-1.0f32, 0.0, -1.0, -1.0], 4);
        assert_eq!(select_index(&ds), 1);
        let ds = DistanceSet::from_values(&[-0.5f32; 4], 4);
        assert_eq!(select_index(&ds), 0);
    }

    #[test]
    fn ste_closed_form() {
        let ds = DistanceSet::from_values(&[0.0f64; 4], 4);
        let g = ste_argmax_backward(&ds, &bc1_weights::<f64>(), 1.0, 1.0);
        let want = [-0.125, -0.125 / 3.0, 0.125 / 3.0, 0.125];
        for n in 0..4 {
            assert!((g[n] - want[n]).abs() < 1e-12);
        }
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn quantize_weight_examples() {
        let w = bc1_weights::<f64>();
        assert_eq!(quantize_weight(0.34, &w), 1);
        assert_eq!(quantize_weight(0.0, &w), 0);
        let w8: Vec<f64> = (0..8).map(|n| n as f64 / 7.0).collect();
        assert_eq!(quantize_weight(0.5, &w8), 3);
        let w6 = [f64::NEG_INFINITY, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0, f64::INFINITY];
        assert_eq!(quantize_weight(0.95, &w6), 6);
    }
}
