use std::fs;

use ntbc::synth;
use ntbc::texture_io::{load_manifest, load_texture, load_texture_auto, save_texture, Texture, TextureKind};
use ntbc::trainer::Material;
use ntbc::Error;

#[test]
fn png_round_trip_is_exact_on_8_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let t = Texture::from_fn(8, 4, TextureKind::Rgb, |x, y, c| {
        ((x * 31 + y * 7 + c * 50) % 256) as f32 / 255.0
    })
    .unwrap();
    let path = dir.path().join("t.png");
    save_texture(&t, &path).unwrap();
    assert_eq!(load_texture(&path, TextureKind::Rgb).unwrap(), t);
    // Requesting a single channel keeps the first one.
    let r = load_texture(&path, TextureKind::Single).unwrap();
    assert_eq!(r.texel(3, 2)[0], t.texel(3, 2)[0]);

    let g = synth::perlin_single(12, 8, 2.0, 1);
    let gp = dir.path().join("g.png");
    save_texture(&g, &gp).unwrap();
    let back = load_texture_auto(&gp).unwrap();
    assert_eq!(back.kind(), TextureKind::Single);
    assert!(back
        .data()
        .iter()
        .zip(g.data())
        .all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-6));
}

#[test]
fn sixteen_bit_png_keeps_precision() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    let vals: Vec<u16> = (0..16).map(|i| i * 4000 + 7).collect();
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(4, 4, vals.clone()).unwrap();
    img.save(&path).unwrap();
    let t = load_texture(&path, TextureKind::Single).unwrap();
    for (a, &v) in t.data().iter().zip(&vals) {
        assert!((a - v as f32 / 65535.0).abs() < 1e-6);
    }
}

#[test]
fn pfm_rows_run_bottom_to_top() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.pfm");
    let mut bytes = b"Pf\n4 4\n-1.0\n".to_vec();
    for row in 0..4 {
        for _ in 0..4 {
            bytes.extend_from_slice(&(row as f32 * 0.25).to_le_bytes());
        }
    }
    fs::write(&path, bytes).unwrap();
    let t = load_texture_auto(&path).unwrap();
    assert_eq!(t.texel(0, 0)[0], 0.75);
    assert_eq!(t.texel(0, 3)[0], 0.0);
}

#[test]
fn manifests_resolve_relative_paths_and_check_resolution() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("tex")).unwrap();
    save_texture(&synth::smooth_gradient_rgb(16, 16), &dir.path().join("tex/a.png")).unwrap();
    save_texture(&synth::perlin_single(16, 16, 2.0, 3), &dir.path().join("tex/b.png")).unwrap();
    save_texture(&synth::perlin_single(8, 8, 2.0, 3), &dir.path().join("tex/small.png")).unwrap();
    let m = dir.path().join("m.txt");
    fs::write(
        &m,
        "# comment\nmaterial = stone\nalbedo = tex/a.png, rgb\n\nrough = tex/b.png, single\n",
    )
    .unwrap();
    let manifest = load_manifest(&m).unwrap();
    assert_eq!(
        (manifest.name.as_str(), manifest.n_rgb(), manifest.n_sc()),
        ("stone", 1, 1)
    );
    let material = Material::from_manifest(&manifest).unwrap();
    assert_eq!(material.kinds(), vec![TextureKind::Rgb, TextureKind::Single]);
    assert_eq!(material.references()[1].len(), 16);

    fs::write(
        &m,
        "material = stone\nalbedo = tex/a.png, rgb\nsmall = tex/small.png, single\n",
    )
    .unwrap();
    assert!(matches!(load_manifest(&m), Err(Error::MixedResolutions { .. })));
    fs::write(&m, "material = stone\nalbedo = tex/missing.png, rgb\n").unwrap();
    let err = load_manifest(&m).unwrap_err().to_string();
    assert!(err.contains("missing.png"), "{err}");
}
