//! Textures normalized to the unit interval, plus PNG/PFM loading and the
//! line-oriented material manifest.
//!
//! Samples are stored linearly: an 8-bit code `v` becomes `v / 255`, a 16-bit
//! code `v / 65535`. No sRGB transfer function is applied anywhere.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum TextureKind {
    Rgb,
    Single,
}

impl TextureKind {
    pub fn channels(self) -> usize {
        match self {
            TextureKind::Rgb => 3,
            TextureKind::Single => 1,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rgb" => Some(TextureKind::Rgb),
            "single" | "sc" => Some(TextureKind::Single),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TextureKind::Rgb => "rgb",
            TextureKind::Single => "single",
        }
    }
}

/// Uncompressed ground truth: row-major, channel-interleaved, every sample in
/// `[0, 1]`, both dimensions positive multiples of 4.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    width: usize,
    height: usize,
    kind: TextureKind,
    data: Vec<f32>,
}

impl Texture {
    pub fn new(width: usize, height: usize, kind: TextureKind, data: Vec<f32>) -> Result<Self> {
        check_dimensions(width, height)?;
        let expected = width * height * kind.channels();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "texture data has {} samples, expected {expected}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Shape(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Texture {
            width,
            height,
            kind,
            data,
        })
    }

    /// Builds a texture by evaluating `f(x, y, channel)`; results are clamped
    /// into `[0, 1]`.
    pub fn from_fn(
        width: usize,
        height: usize,
        kind: TextureKind,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let c = kind.channels();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                for ch in 0..c {
                    data.push(f(x, y, ch).clamp(0.0, 1.0));
                }
            }
        }
        Texture::new(width, height, kind, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn kind(&self) -> TextureKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn blocks_w(&self) -> usize {
        self.width / 4
    }

    pub fn blocks_h(&self) -> usize {
        self.height / 4
    }

    #[inline]
    pub fn texel(&self, x: usize, y: usize) -> &[f32] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    /// The 16 texels of block `(bx, by)` in row-major order; single-channel
    /// textures fill only component 0.
    pub fn block(&self, bx: usize, by: usize) -> [[f32; 3]; 16] {
        let mut out = [[0.0; 3]; 16];
        for ty in 0..4 {
            for tx in 0..4 {
                let t = self.texel(bx * 4 + tx, by * 4 + ty);
                out[ty * 4 + tx][..t.len()].copy_from_slice(t);
            }
        }
        out
    }

    /// Keeps only the first channel.
    pub fn to_single(&self) -> Texture {
        match self.kind {
            TextureKind::Single => self.clone(),
            TextureKind::Rgb => Texture {
                width: self.width,
                height: self.height,
                kind: TextureKind::Single,
                data: self.data.chunks_exact(3).map(|p| p[0]).collect(),
            },
        }
    }

    /// 8-bit codes, `round(s * 255)` clamped to `[0, 255]`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&s| quantize_u8(s)).collect()
    }
}

#[inline]
pub fn quantize_u8(s: f32) -> u8 {
    (s * 255.0).round().clamp(0.0, 255.0) as u8
}

fn check_dimensions(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimensions {
            width,
            height,
            reason: "zero-sized image",
        });
    }
    if !width.is_multiple_of(4) || !height.is_multiple_of(4) {
        return Err(Error::Dimensions {
            width,
            height,
            reason: "dimensions must be multiples of 4",
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub kind: TextureKind,
}

/// A named set of co-registered textures sharing one resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaterialManifest {
    pub name: String,
    pub entries: Vec<ManifestEntry>,
}

impl MaterialManifest {
    pub fn n_rgb(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == TextureKind::Rgb).count()
    }

    pub fn n_sc(&self) -> usize {
        self.entries.iter().filter(|e| e.kind == TextureKind::Single).count()
    }

    /// Parses manifest text. Relative texture paths resolve against
    /// `base_dir`. Blank lines and lines starting with `#` are ignored.
    pub fn parse(text: &str, source: &Path, base_dir: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: source.to_path_buf(),
            line,
            message,
        };
        let mut name = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(lineno, format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            let value = value.trim();
            if name.is_none() {
                if key != "material" {
                    return Err(err(
                        lineno,
                        format!("first line must be `material = <name>`, got key `{key}`"),
                    ));
                }
                if value.is_empty() {
                    return Err(err(lineno, "empty material name".into()));
                }
                name = Some(value.to_string());
                continue;
            }
            if key.is_empty() {
                return Err(err(lineno, "empty texture name".into()));
            }
            let (path, kind) = value
                .rsplit_once(',')
                .ok_or_else(|| err(lineno, format!("expected `<path>, <rgb|single>`, got `{value}`")))?;
            let kind = TextureKind::parse(kind)
                .ok_or_else(|| err(lineno, format!("unknown texture kind `{}`", kind.trim())))?;
            let path = PathBuf::from(path.trim());
            if path.as_os_str().is_empty() {
                return Err(err(lineno, "empty texture path".into()));
            }
            if entries.iter().any(|e: &ManifestEntry| e.name == key) {
                return Err(err(lineno, format!("duplicate texture name `{key}`")));
            }
            let path = if path.is_absolute() { path } else { base_dir.join(path) };
            entries.push(ManifestEntry {
                name: key.to_string(),
                path,
                kind,
            });
        }
        let name = name.ok_or_else(|| Error::EmptyManifest(source.to_path_buf()))?;
        if entries.is_empty() {
            return Err(Error::EmptyManifest(source.to_path_buf()));
        }
        Ok(MaterialManifest { name, entries })
    }
}

#[cfg(feature = "io")]
pub use file_io::*;

#[cfg(feature = "io")]
mod file_io {
    use std::fs;
    use std::io::{BufRead, BufReader, Read};

    use image::{DynamicImage, ImageReader};

    use super::*;

    fn image_err(path: &Path, source: image::ImageError) -> Error {
        Error::Image {
            path: path.to_path_buf(),
            source,
        }
    }

    fn is_pfm(path: &Path) -> bool {
        path.extension().map(|e| e.eq_ignore_ascii_case("pfm")).unwrap_or(false)
    }

    /// Loads a PNG (8- or 16-bit) or PFM file. Requesting `Single` from a
    /// multi-channel file keeps the first channel.
    pub fn load_texture(path: &Path, kind: TextureKind) -> Result<Texture> {
        if is_pfm(path) {
            let tex = read_pfm(path)?;
            return Ok(match kind {
                TextureKind::Single => tex.to_single(),
                TextureKind::Rgb if tex.kind == TextureKind::Single => {
                    let data = tex.data.iter().flat_map(|&v| [v, v, v]).collect();
                    Texture::new(tex.width, tex.height, TextureKind::Rgb, data)?
                }
                TextureKind::Rgb => tex,
            });
        }
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| image_err(path, e))?;
        texture_from_image(&img, kind)
    }

    /// Loads an image choosing the kind from its channel layout: one-channel
    /// (gray) files become `Single`, everything else `Rgb`.
    pub fn load_texture_auto(path: &Path) -> Result<Texture> {
        if is_pfm(path) {
            return read_pfm(path);
        }
        let img = ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| image_err(path, e))?;
        let kind = if img.color().channel_count() <= 2 {
            TextureKind::Single
        } else {
            TextureKind::Rgb
        };
        texture_from_image(&img, kind)
    }

    fn texture_from_image(img: &DynamicImage, kind: TextureKind) -> Result<Texture> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        check_dimensions(w, h)?;
        let sixteen = matches!(
            img,
            DynamicImage::ImageLuma16(_)
                | DynamicImage::ImageLumaA16(_)
                | DynamicImage::ImageRgb16(_)
                | DynamicImage::ImageRgba16(_)
        );
        let rgb: Vec<f32> = if sixteen {
            img.to_rgb16()
                .into_raw()
                .into_iter()
                .map(|v| v as f32 / 65535.0)
                .collect()
        } else {
            img.to_rgb8().into_raw().into_iter().map(|v| v as f32 / 255.0).collect()
        };
        let data = match kind {
            TextureKind::Rgb => rgb,
            TextureKind::Single => rgb.chunks_exact(3).map(|p| p[0]).collect(),
        };
        Texture::new(w, h, kind, data)
    }

    /// Writes an 8-bit PNG: RGB for `Rgb`, grayscale for `Single`.
    pub fn save_texture(tex: &Texture, path: &Path) -> Result<()> {
        let bytes = tex.to_bytes();
        let (w, h) = (tex.width as u32, tex.height as u32);
        let color = match tex.kind {
            TextureKind::Rgb => image::ExtendedColorType::Rgb8,
            TextureKind::Single => image::ExtendedColorType::L8,
        };
        image::save_buffer_with_format(path, &bytes, w, h, color, image::ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }

    /// Reads only the header to report `(width, height)`.
    pub fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
        if is_pfm(path) {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let header = read_pfm_header(&mut BufReader::new(f), path)?;
            return Ok((header.1, header.2));
        }
        let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
        Ok((w as usize, h as usize))
    }

    fn bad_pfm(path: &Path, msg: &str) -> Error {
        Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("PFM: {msg}")),
        )
    }

    // (channels, width, height, little_endian)
    fn read_pfm_header<R: BufRead>(r: &mut R, path: &Path) -> Result<(usize, usize, usize, bool)> {
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
                return Err(bad_pfm(path, "truncated header"));
            }
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        let channels = match tokens[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            _ => return Err(bad_pfm(path, "bad magic")),
        };
        let w: usize = tokens[1].parse().map_err(|_| bad_pfm(path, "bad width"))?;
        let h: usize = tokens[2].parse().map_err(|_| bad_pfm(path, "bad height"))?;
        let scale: f32 = tokens[3].parse().map_err(|_| bad_pfm(path, "bad scale"))?;
        Ok((channels, w, h, scale < 0.0))
    }

    fn read_pfm(path: &Path) -> Result<Texture> {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(f);
        let (c, w, h, le) = read_pfm_header(&mut r, path)?;
        check_dimensions(w, h)?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
        let n = w * h * c;
        if raw.len() < n * 4 {
            return Err(bad_pfm(path, "truncated payload"));
        }
        let vals: Vec<f32> = raw[..n * 4]
            .chunks_exact(4)
            .map(|b| {
                let b = [b[0], b[1], b[2], b[3]];
                let v = if le {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                if v.is_nan() {
                    0.0
                } else {
                    v.clamp(0.0, 1.0)
                }
            })
            .collect();
        // PFM rows run bottom to top.
        let mut data = Vec::with_capacity(n);
        for y in (0..h).rev() {
            data.extend_from_slice(&vals[y * w * c..(y + 1) * w * c]);
        }
        let kind = if c == 3 { TextureKind::Rgb } else { TextureKind::Single };
        Texture::new(w, h, kind, data)
    }

    /// Parses a manifest file and validates that every referenced image
    /// shares one resolution (headers only).
    pub fn load_manifest(path: &Path) -> Result<MaterialManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let manifest = MaterialManifest::parse(&text, path, base)?;
        let mut first: Option<(&ManifestEntry, (usize, usize))> = None;
        for entry in &manifest.entries {
            let dims = image_dimensions(&entry.path)?;
            match first {
                None => first = Some((entry, dims)),
                Some((f, fd)) if fd != dims => {
                    return Err(Error::MixedResolutions {
                        first: f.name.clone(),
                        a: format!("{}x{}", fd.0, fd.1),
                        second: entry.name.clone(),
                        b: format!("{}x{}", dims.0, dims.1),
                    })
                }
                _ => {}
            }
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(
            Texture::new(0, 4, TextureKind::Single, vec![]),
            Err(Error::Dimensions { .. })
        ));
        assert!(matches!(
            Texture::new(6, 4, TextureKind::Single, vec![0.0; 24]),
            Err(Error::Dimensions { .. })
        ));
        assert!(Texture::new(4, 4, TextureKind::Single, vec![1.5; 16]).is_err());
        assert!(Texture::new(4, 4, TextureKind::Rgb, vec![0.5; 16]).is_err());
    }

    #[test]
    fn quantize_u8_rounds() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(0.50196), 128);
        assert_eq!(quantize_u8(128.0 / 255.0), 128);
        assert_eq!(quantize_u8(0.0), 0);
    }

    #[test]
    fn manifest_counts_kinds() {
        let text =
            "material = Test\n# comment\ndiffuse = d.png, rgb\nnormal = n.png, rgb\n\nroughness = r.png, single\n";
        let m = MaterialManifest::parse(text, Path::new("m.txt"), Path::new("/data")).unwrap();
        assert_eq!(m.name, "Test");
        assert_eq!((m.n_rgb(), m.n_sc()), (2, 1));
        assert_eq!(m.entries[0].path, PathBuf::from("/data/d.png"));
        assert_eq!(m.entries[2].kind, TextureKind::Single);
    }

    #[test]
    fn manifest_parse_errors_carry_line_numbers() {
        let e = MaterialManifest::parse(
            "material = x\ndiffuse = a.png, rgb\nbroken line\n",
            Path::new("m.txt"),
            Path::new("."),
        )
        .unwrap_err();
        assert!(matches!(e, Error::Manifest { line: 3, .. }), "{e}");
        let e = MaterialManifest::parse("diffuse = a.png, rgb\n", Path::new("m"), Path::new(".")).unwrap_err();
        assert!(matches!(e, Error::Manifest { line: 1, .. }));
        let e = MaterialManifest::parse("material = x\nd = a.png, hdr\n", Path::new("m"), Path::new(".")).unwrap_err();
        assert!(e.to_string().contains("unknown texture kind"));
        assert!(matches!(
            MaterialManifest::parse("material = x\n", Path::new("m"), Path::new(".")),
            Err(Error::EmptyManifest(_))
        ));
        assert!(matches!(
            MaterialManifest::parse("", Path::new("m"), Path::new(".")),
            Err(Error::EmptyManifest(_))
        ));
    }

    #[test]
    fn block_extraction_is_row_major() {
        let t = Texture::from_fn(8, 4, TextureKind::Single, |x, y, _| (y * 8 + x) as f32 / 32.0).unwrap();
        let b = t.block(1, 0);
        assert_eq!(b[0][0], 4.0 / 32.0);
        assert_eq!(b[5][0], 13.0 / 32.0);
    }
}
