//! Browser bindings: BC palette explorer, reference compression of a
//! procedural texture, and the softmax straight-through estimator.

use wasm_bindgen::prelude::*;

use ntbc::bc_codec::{
    bc4_slot_weights, encode_texture_reference, palette_bc1, palette_bc4, rgb565_decode, rgb565_encode, unorm8_decode,
    unorm8_encode, Bc4Mode,
};
use ntbc::metrics::{psnr, ssim};
use ntbc::model::ste::{expected_weight, softmax, ste_argmax_backward, DistanceSet, MAX_SLOTS};
use ntbc::synth;
use ntbc::texture_io::{Texture, TextureKind};

/// BC1 palette in linear order (4 RGB triples) after snapping both
/// endpoints to RGB565.
#[wasm_bindgen]
pub fn bc1_palette(e0: &[f32], e1: &[f32]) -> Result<Vec<f32>, JsError> {
    if e0.len() != 3 || e1.len() != 3 {
        return Err(JsError::new("endpoints need 3 components"));
    }
    let q = |c: &[f32]| rgb565_decode(rgb565_encode([c[0], c[1], c[2]]));
    Ok(palette_bc1(q(e0), q(e1)).into_iter().flatten().collect())
}

/// BC4 palette in linear order (8 values) after snapping the endpoints to
/// 8 bits. The mode follows the endpoint order.
#[wasm_bindgen]
pub fn bc4_palette(e0: f32, e1: f32) -> Vec<f32> {
    let (a, b) = (unorm8_decode(unorm8_encode(e0)), unorm8_decode(unorm8_encode(e1)));
    palette_bc4(a, b).to_vec()
}

/// `"8-value"` or `"6-value"`, as [`bc4_palette`] would decode.
#[wasm_bindgen]
pub fn bc4_mode(e0: f32, e1: f32) -> String {
    match Bc4Mode::from_endpoints(unorm8_encode(e0), unorm8_encode(e1)) {
        Bc4Mode::Interpolated8 => "8-value".into(),
        Bc4Mode::Interpolated6 => "6-value".into(),
    }
}

#[wasm_bindgen]
pub struct CompressDemo {
    size: usize,
    original: Vec<u8>,
    decoded: Vec<u8>,
    psnr: f64,
    ssim: f64,
    bytes: usize,
}

fn rgba(t: &Texture) -> Vec<u8> {
    let bytes = t.to_bytes();
    match t.kind() {
        TextureKind::Rgb => bytes.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect(),
        TextureKind::Single => bytes.iter().flat_map(|&v| [v, v, v, 255]).collect(),
    }
}

#[wasm_bindgen]
impl CompressDemo {
    /// `pattern` is `"gradient"` (BC1) or `"noise"` (BC4); `size` must be a
    /// multiple of 4 and at least 12.
    #[wasm_bindgen(constructor)]
    pub fn new(pattern: &str, size: usize, frequency: f32, seed: u32) -> Result<CompressDemo, JsError> {
        if !size.is_multiple_of(4) || !(12..=1024).contains(&size) {
            return Err(JsError::new("size must be a multiple of 4 in 12..=1024"));
        }
        let tex = match pattern {
            "gradient" => synth::smooth_gradient_rgb(size, size),
            "noise" => synth::perlin_single(size, size, frequency, seed as u64),
            other => return Err(JsError::new(&format!("unknown pattern {other}"))),
        };
        let surface = encode_texture_reference(&tex);
        let decoded = surface.decode();
        Ok(CompressDemo {
            size,
            original: rgba(&tex),
            decoded: rgba(&decoded),
            psnr: psnr(&tex, &decoded).map_err(|e| JsError::new(&e.to_string()))?,
            ssim: ssim(&tex, &decoded).map_err(|e| JsError::new(&e.to_string()))?,
            bytes: surface.payload_len(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn original_rgba(&self) -> Vec<u8> {
        self.original.clone()
    }

    pub fn decoded_rgba(&self) -> Vec<u8> {
        self.decoded.clone()
    }

    pub fn psnr(&self) -> f64 {
        self.psnr
    }

    pub fn ssim(&self) -> f64 {
        self.ssim
    }

    /// Block payload size.
    pub fn bytes(&self) -> usize {
        self.bytes
    }
}

/// Softmax over negated distances at temperature `t`, for the given palette
/// weights. Returns the probabilities, then the expected weight, then the
/// gradient of the expected weight with respect to each distance value
/// (`2k + 1` numbers for `k` slots).
#[wasm_bindgen]
pub fn ste_explore(distances: &[f64], weights: &[f64], t: f64) -> Result<Vec<f64>, JsError> {
    let k = distances.len();
    if k == 0 || k > MAX_SLOTS || weights.len() != k {
        return Err(JsError::new("need 1 to 8 distances and one weight per distance"));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(JsError::new("temperature must be positive"));
    }
    let d: Vec<f64> = distances.iter().map(|v| -v).collect();
    let ds = DistanceSet::from_values(&d, k);
    let mut out = softmax(&ds, t)[..k].to_vec();
    out.push(expected_weight(&ds, weights, t));
    // d_n holds the negated distance, so flip the sign back.
    out.extend(ste_argmax_backward(&ds, weights, t, 1.0)[..k].iter().map(|g| -g));
    Ok(out)
}

/// Interpolation weights of the BC4 slots for the given endpoints, useful as
/// `weights` for [`ste_explore`].
#[wasm_bindgen]
pub fn bc4_weights(e0: f64, e1: f64) -> Vec<f64> {
    bc4_slot_weights(e0, e1).to_vec()
}
