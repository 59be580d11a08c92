use std::path::Path;

use splatfill::dataset::{load_dataset, save_dataset};
use splatfill::formats::{depth_from_bytes, depth_to_bytes, gaussians_from_bytes, gaussians_to_bytes, load_mask, load_png, save_mask, save_png};
use splatfill::Error;
use splatfill_core::math::Vec3;
use splatfill_core::scene::{DepthMap, Gaussian3D, ImageBuffer, MaskImage};
use splatfill_core::synth::{synthesize, SynthSpec};

fn small_spec() -> SynthSpec {
    SynthSpec { width: 40, height: 30, focal: 36.0, view_count: 3, ..SynthSpec::desk(4) }
}

#[test]
fn depth_roundtrip_keeps_invalid_pixels() {
    let mut d = DepthMap::from_values(5, 3, (0..15).map(|i| 1.0 + i as f64 * 0.25).collect());
    d.set(2, 1, None);
    let back = depth_from_bytes(&depth_to_bytes(&d), Path::new("d.f32")).unwrap();
    assert_eq!(back.dims(), (5, 3));
    assert_eq!(back.get(2, 1), None);
    for (x, y) in [(0, 0), (4, 2), (1, 1)] {
        assert_eq!(back.get(x, y).map(|v| v as f32), d.get(x, y).map(|v| v as f32));
    }
}

#[test]
fn truncated_depth_is_rejected() {
    let bytes = depth_to_bytes(&DepthMap::from_values(4, 4, vec![1.0; 16]));
    let err = depth_from_bytes(&bytes[..bytes.len() - 3], Path::new("d.f32")).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err}");
}

#[test]
fn gaussian_checkpoint_roundtrip_is_exact() {
    let g = vec![
        Gaussian3D::isotropic(Vec3::new(0.1, -0.2, 3.0), 0.05, 0.7, Vec3::new(0.2, 0.4, 0.9)),
        Gaussian3D { rotation: [0.5, 0.5, 0.5, 0.5], opacity_logit: -1.25, ..Gaussian3D::isotropic(Vec3::new(1.0, 2.0, 4.0), 0.3, 0.5, Vec3::new(1.0, 0.0, 0.5)) },
    ];
    let back = gaussians_from_bytes(&gaussians_to_bytes(&g), Path::new("s.gsbin")).unwrap();
    assert_eq!(back, g);
}

#[test]
fn checkpoint_with_bad_magic_is_rejected() {
    let mut bytes = gaussians_to_bytes(&[Gaussian3D::isotropic(Vec3::new(0.0, 0.0, 2.0), 0.1, 0.5, Vec3::new(0.5, 0.5, 0.5))]);
    bytes[0] = b'X';
    let err = gaussians_from_bytes(&bytes, Path::new("s.gsbin")).unwrap_err();
    assert!(err.to_string().contains("s.gsbin"), "{err}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn png_and_mask_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageBuffer::from_fn(7, 5, |x, y| [x as f64 / 6.0, y as f64 / 4.0, 0.5]);
    let p = dir.path().join("a/b/img.png");
    save_png(&img, &p).unwrap();
    let back = load_png(&p).unwrap();
    for (a, b) in img.pixels.iter().zip(&back.pixels) {
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
    let m = MaskImage::from_fn(7, 5, |x, y| (x + y) % 3 == 0);
    let mp = dir.path().join("m.png");
    save_mask(&m, &mp).unwrap();
    assert_eq!(load_mask(&mp).unwrap(), m);
}

#[test]
fn dataset_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthesize(&small_spec()).unwrap();
    save_dataset(&scene.dataset, dir.path(), Some(&scene.gt_depth)).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.views.len(), 3);
    assert_eq!(back.reference_view_id, scene.dataset.reference_view_id);
    assert!(back.ground_truth.is_some());
    for (a, b) in back.views.iter().zip(&scene.dataset.views) {
        assert_eq!(a.mask, b.mask);
        assert_eq!(a.sparse, b.sparse);
        assert!(a.inpainted.is_some());
        let (ca, cb) = (&a.camera, &b.camera);
        assert_eq!((ca.fx, ca.fy, ca.cx, ca.cy, ca.width, ca.height), (cb.fx, cb.fy, cb.cx, cb.cy, cb.width, cb.height));
    }
}

#[test]
fn missing_depth_names_the_view() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthesize(&small_spec()).unwrap();
    save_dataset(&scene.dataset, dir.path(), None).unwrap();
    std::fs::remove_file(dir.path().join("view_2/depth.f32")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err().to_string();
    assert!(err.contains("view 2"), "{err}");
    assert!(err.contains("depth.f32"), "{err}");
}
