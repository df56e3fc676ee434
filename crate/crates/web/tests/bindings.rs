use ntbc_web::{bc1_palette, bc4_mode, bc4_palette, bc4_weights, ste_explore, CompressDemo};

#[test]
fn bc1_palette_snaps_endpoints_to_565() {
    let p = bc1_palette(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0]).unwrap();
    assert_eq!(p.len(), 12);
    assert_eq!(&p[..3], &[1.0, 0.0, 0.0]);
    assert_eq!(&p[9..], &[0.0, 0.0, 1.0]);
    assert!((p[3] - 2.0 / 3.0).abs() < 1e-6 && (p[5] - 1.0 / 3.0).abs() < 1e-6);
    // 0.5 is not representable in 5 bits.
    let q = bc1_palette(&[0.5, 0.5, 0.5], &[0.5, 0.5, 0.5]).unwrap();
    assert!((q[0] - 16.0 / 31.0).abs() < 1e-6);
}

#[test]
fn bc4_modes() {
    assert_eq!(bc4_mode(0.8, 0.2), "8-value");
    assert_eq!(bc4_mode(0.2, 0.8), "6-value");
    let p = bc4_palette(0.2, 0.8);
    assert_eq!((p[0], p[7]), (0.0, 1.0));
    assert!(bc4_weights(0.2, 0.8)[0] < 0.0);
}

#[test]
fn compress_demo_reports_quality() {
    let d = CompressDemo::new("gradient", 64, 4.0, 1).unwrap_or_else(|_| panic!("valid input"));
    assert_eq!(d.original_rgba().len(), 64 * 64 * 4);
    assert_eq!(d.bytes(), 16 * 16 * 8);
    assert!(d.psnr() > 35.0 && d.ssim() > 0.9);
    let n = CompressDemo::new("noise", 32, 4.0, 2).unwrap_or_else(|_| panic!("valid input"));
    assert!(n.psnr() > 35.0);
    assert_eq!(n.decoded_rgba()[3], 255);
}

#[test]
fn ste_explore_layout() {
    let r = ste_explore(&[0.4, 0.1, 0.3, 0.2], &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0], 0.1).unwrap_or_else(|_| panic!());
    assert_eq!(r.len(), 9);
    assert!((r[..4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(r[1] > r[3] && r[3] > r[2]);
    assert!(r[5..].iter().sum::<f64>().abs() < 1e-12);
    // A larger distance to the weight-1 slot lowers the expected weight.
    assert!(r[8] < 0.0);
}
