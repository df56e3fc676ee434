use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ntbc::bc_codec::{dds_write, Bc1Block, BlockData, BlockSurface};
use ntbc::synth;
use ntbc::texture_io::{load_texture, save_texture, TextureKind};

fn ntbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntbc"))
        .args(args)
        .env("NTBC_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ntbc(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes PNGs and a manifest for the given (name, kind) list at 32x32.
fn material(dir: &Path, name: &str, textures: &[(&str, TextureKind)]) -> PathBuf {
    let mut manifest = format!("material = {name}\n");
    for (i, (tex, kind)) in textures.iter().enumerate() {
        let t = match kind {
            TextureKind::Rgb => synth::smooth_gradient_rgb(32, 32),
            TextureKind::Single => synth::perlin_single(32, 32, 2.0, i as u64),
        };
        save_texture(&t, &dir.join(format!("{tex}.png"))).unwrap();
        manifest.push_str(&format!("{tex} = {tex}.png, {}\n", kind.as_str()));
    }
    let path = dir.join(format!("{name}.txt"));
    fs::write(&path, manifest).unwrap();
    path
}

#[test]
fn compress_ref_writes_one_dds_per_texture() {
    let dir = tempfile::tempdir().unwrap();
    let m = material(
        dir.path(),
        "mat",
        &[
            ("diffuse", TextureKind::Rgb),
            ("normal", TextureKind::Rgb),
            ("roughness", TextureKind::Single),
        ],
    );
    let out = dir.path().join("ref");
    ok(&["compress-ref", "--manifest", p(&m), "--out", p(&out)]);
    for t in ["diffuse", "normal", "roughness"] {
        assert_eq!(fs::metadata(out.join(format!("{t}.dds"))).unwrap().len(), 128 + 64 * 8);
    }
    let csv = fs::read_to_string(out.join("mat_reference.csv")).unwrap();
    assert!(csv.starts_with("texture,psnr_db,ssim"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    let out = ntbc(&["compress-ref", "--manifest", p(&missing), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.txt"));
    assert_eq!(ntbc(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(ntbc(&["--help"]).status.code(), Some(0));
}

#[test]
fn conservative_training_emits_a_pair_and_inference_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = material(
        dir.path(),
        "mat",
        &[("albedo", TextureKind::Rgb), ("height", TextureKind::Single)],
    );
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--manifest",
        p(&m),
        "--out",
        p(&out),
        "--mode",
        "conservative",
        "--iterations",
        "20",
        "--batch-blocks",
        "8",
        "--finest",
        "16",
        "--seed",
        "3",
        "--deterministic",
    ]);
    let (rgb, sc) = (out.join("mat_rgb.ntbc"), out.join("mat_sc.ntbc"));
    assert!(rgb.exists() && sc.exists() && !out.join("mat.ntbc").exists());
    let echo = fs::read_to_string(out.join("mat_config.txt")).unwrap();
    assert!(echo.contains("iterations = 20\n"), "{echo}");
    assert!(echo.contains("texel_grid_finest = 16\n"), "{echo}");
    assert!(echo.contains("block_grid_finest = 8\n"), "{echo}");
    let log = fs::read_to_string(out.join("mat_rgb_log.csv")).unwrap();
    assert!(log.starts_with("step,loss_endpoint,loss_color,lr_grid,lr_mlp,phase"));
    assert_eq!(log.lines().count(), 1 + 22);

    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&[
            "infer",
            "--manifest",
            p(&m),
            "--checkpoint",
            p(&rgb),
            "--checkpoint",
            p(&sc),
            "--out",
            p(d),
        ]);
    }
    for t in ["albedo.dds", "height.dds"] {
        assert_eq!(fs::read(a.join(t)).unwrap(), fs::read(b.join(t)).unwrap());
    }
    let png = dir.path().join("albedo_ntbc.png");
    ok(&["decode", "--input", p(&a.join("albedo.dds")), "--out", p(&png)]);
    assert_eq!(load_texture(&png, TextureKind::Rgb).unwrap().width(), 32);

    let report = ok(&[
        "report",
        "--manifest",
        p(&m),
        "--checkpoint",
        p(&rgb),
        "--checkpoint",
        p(&sc),
    ]);
    assert!(report.contains("albedo") && report.contains("storage:"), "{report}");
}

#[test]
fn conservative_on_rgb_only_material_skips_the_single_channel_model() {
    let dir = tempfile::tempdir().unwrap();
    let m = material(dir.path(), "rgbonly", &[("albedo", TextureKind::Rgb)]);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--manifest",
        p(&m),
        "--out",
        p(&out),
        "--mode",
        "conservative",
        "--iterations",
        "5",
        "--batch-blocks",
        "4",
    ]);
    let ckpts: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ntbc"))
        .collect();
    assert_eq!(ckpts.len(), 1);
    assert!(out.join("rgbonly_rgb.ntbc").exists());
}

#[test]
fn infer_reports_missing_and_mismatched_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let m = material(
        dir.path(),
        "mat",
        &[("albedo", TextureKind::Rgb), ("height", TextureKind::Single)],
    );
    let missing = dir.path().join("absent.ntbc");
    let out = ntbc(&[
        "infer",
        "--manifest",
        p(&m),
        "--checkpoint",
        p(&missing),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ntbc"));

    let other = material(dir.path(), "two", &[("a", TextureKind::Rgb), ("b", TextureKind::Rgb)]);
    let run = dir.path().join("run");
    ok(&[
        "train",
        "--manifest",
        p(&other),
        "--out",
        p(&run),
        "--iterations",
        "3",
        "--batch-blocks",
        "2",
    ]);
    let out = ntbc(&[
        "infer",
        "--manifest",
        p(&m),
        "--checkpoint",
        p(&run.join("two.ntbc")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn decode_golden_block_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let block = Bc1Block::with_stored_indices(0xF800, 0x001F, &[0; 16]);
    let dds = dir.path().join("red.dds");
    dds_write(&BlockSurface::new(1, 1, BlockData::Bc1(vec![block])).unwrap(), &dds).unwrap();
    let png = dir.path().join("red.png");
    ok(&["decode", "--input", p(&dds), "--out", p(&png)]);
    let t = load_texture(&png, TextureKind::Rgb).unwrap();
    assert_eq!((t.width(), t.height()), (4, 4));
    assert!(t.data().chunks(3).all(|c| c == [1.0, 0.0, 0.0]));

    let a = dir.path().join("a.png");
    save_texture(&synth::perlin_single(32, 32, 3.0, 1), &a).unwrap();
    let csv = ok(&["metrics", "--reference", p(&a), "--test", p(&a)]);
    assert_eq!(csv, "texture,psnr_db,ssim\na,99.0000,1.000000\n");

    let small = dir.path().join("small.png");
    save_texture(&synth::perlin_single(16, 16, 3.0, 1), &small).unwrap();
    assert_eq!(
        ntbc(&["metrics", "--reference", p(&a), "--test", p(&small)])
            .status
            .code(),
        Some(1)
    );
}
