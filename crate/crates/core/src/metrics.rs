//! PSNR, SSIM and storage accounting.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::texture_io::Texture;

/// Reported for identical inputs, and the cap for everything else.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Texture, b: &Texture) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::Shape(format!(
            "cannot compare {}x{}x{} with {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}

pub fn mse(a: &Texture, b: &Texture) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` over all samples, capped at 99 dB.
pub fn psnr(a: &Texture, b: &Texture) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, &v) in out[y * ow..(y + 1) * ow].iter_mut().zip(row) {
                *o += kv * v;
            }
        }
    }
    out
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, dynamic range 1, over valid window positions; multi-channel
/// inputs average the per-channel values.
pub fn ssim(a: &Texture, b: &Texture) -> Result<f64> {
    check_shapes(a, b)?;
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Dimensions {
            width: w,
            height: h,
            reason: "SSIM needs at least 11x11 texels",
        });
    }
    let k = gaussian_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    for c in 0..ch {
        let x: Vec<f64> = a.data().iter().skip(c).step_by(ch).map(|&v| v as f64).collect();
        let y: Vec<f64> = b.data().iter().skip(c).step_by(ch).map(|&v| v as f64).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let sxx = filter_valid(&prod(&x, &x), w, h, &k);
        let syy = filter_valid(&prod(&y, &y), w, h, &k);
        let sxy = filter_valid(&prod(&x, &y), w, h, &k);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / ch as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextureQuality {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    /// Reference BC encoder on the same texture, for comparison.
    pub reference_psnr_db: Option<f64>,
    pub reference_ssim: Option<f64>,
}

impl TextureQuality {
    pub fn measure(name: &str, original: &Texture, decoded: &Texture) -> Result<Self> {
        Ok(TextureQuality {
            name: name.to_string(),
            psnr_db: psnr(original, decoded)?,
            ssim: ssim(original, decoded)?,
            reference_psnr_db: None,
            reference_ssim: None,
        })
    }

    pub fn with_reference(mut self, original: &Texture, reference: &Texture) -> Result<Self> {
        self.reference_psnr_db = Some(psnr(original, reference)?);
        self.reference_ssim = Some(ssim(original, reference)?);
        Ok(self)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QualityReport {
    pub textures: Vec<TextureQuality>,
    pub model_bytes: Option<u64>,
    pub reference_bc_bytes: Option<u64>,
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

impl QualityReport {
    /// `texture,psnr_db,ssim` plus reference columns when present.
    pub fn to_csv(&self) -> String {
        let with_ref = self.textures.iter().any(|t| t.reference_psnr_db.is_some());
        let mut s = String::from("texture,psnr_db,ssim");
        if with_ref {
            s.push_str(",ref_psnr_db,ref_ssim");
        }
        s.push('\n');
        for t in &self.textures {
            write!(s, "{},{:.4},{:.6}", t.name, t.psnr_db, t.ssim).unwrap();
            if with_ref {
                write!(s, ",{},{}", opt(t.reference_psnr_db, 4), opt(t.reference_ssim, 6)).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.textures.iter().map(|t| t.name.len()).max().unwrap_or(7).max(7);
        let mut s = format!(
            "{:<width$}  {:>9}  {:>7}  {:>9}  {:>7}\n",
            "texture", "PSNR dB", "SSIM", "ref PSNR", "ref SSIM"
        );
        for t in &self.textures {
            writeln!(
                s,
                "{:<width$}  {:>9.3}  {:>7.4}  {:>9}  {:>7}",
                t.name,
                t.psnr_db,
                t.ssim,
                opt(t.reference_psnr_db, 3),
                opt(t.reference_ssim, 4)
            )
            .unwrap();
        }
        if let (Some(m), Some(r)) = (self.model_bytes, self.reference_bc_bytes) {
            s.push_str(&StorageReport::new(m, r).to_string());
            s.push('\n');
        }
        s
    }
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct StorageReport {
    pub model_bytes: u64,
    pub reference_bytes: u64,
}

impl StorageReport {
    pub fn new(model_bytes: u64, reference_bytes: u64) -> Self {
        StorageReport {
            model_bytes,
            reference_bytes,
        }
    }

    /// Model checkpoints against the block payloads of the reference
    /// surfaces (`blocks * 8` bytes each).
    pub fn from_parts(model_files: &[u64], reference_blocks: &[usize]) -> Self {
        StorageReport {
            model_bytes: model_files.iter().sum(),
            reference_bytes: reference_blocks.iter().map(|&b| 8 * b as u64).sum(),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.model_bytes as f64 / self.reference_bytes as f64
    }

    pub fn model_is_larger(&self) -> bool {
        self.model_bytes > self.reference_bytes
    }
}

impl std::fmt::Display for StorageReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mib = |b: u64| b as f64 / (1024.0 * 1024.0);
        write!(
            f,
            "storage: model {} B ({:.3} MiB), reference BC {} B ({:.3} MiB), ratio {:.3}{}",
            self.model_bytes,
            mib(self.model_bytes),
            self.reference_bytes,
            mib(self.reference_bytes),
            self.ratio(),
            if self.model_is_larger() {
                " (model is larger)"
            } else {
                ""
            }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture_io::TextureKind;

    fn constant(v: f32, n: usize) -> Texture {
        Texture::new(n, n, TextureKind::Single, vec![v; n * n]).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = constant(0.2, 16);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr(&a, &constant(0.3, 16)).unwrap() - 20.0).abs() < 1e-5);
        let half = psnr(&constant(0.0, 16), &constant(0.5, 16)).unwrap();
        assert!((half - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!(psnr(&a, &constant(0.2, 12)).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = constant(0.5, 16);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let s = ssim(&a, &constant(0.6, 16)).unwrap();
        let closed = (2.0 * 0.5 * 0.6 + 1e-4) / (0.25 + 0.36 + 1e-4);
        assert!((s - closed).abs() < 1e-6, "{s}");
        let bin = Texture::from_fn(16, 16, TextureKind::Single, |x, y, _| ((x + y) % 2) as f32).unwrap();
        let inv = Texture::from_fn(16, 16, TextureKind::Single, |x, y, _| (1 - (x + y) % 2) as f32).unwrap();
        assert!(ssim(&bin, &inv).unwrap() < 0.0);
        assert!(ssim(&constant(0.1, 8), &constant(0.1, 8)).is_err());
    }

    #[test]
    fn report_accounting() {
        let r = StorageReport::from_parts(&[1000], &[4096 * 4096 / 16; 6]);
        assert_eq!(r.reference_bytes, 50_331_648);
        let one = StorageReport::from_parts(&[28_039_996], &[4096 * 4096 / 16]);
        assert!(one.model_is_larger());
        assert!(one.to_string().contains("model is larger"));
    }
}
