use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatfill_core::math::{mat_to_quat, Mat3, Vec3};
use splatfill_core::render::{render, render_with_gradients, PixelGrads, RenderSettings};
use splatfill_core::scene::{CameraView, Gaussian3D};

fn camera() -> CameraView {
    let rot = Mat3::rotation_y(0.1).mul_mat(&Mat3::rotation_x(-0.05));
    CameraView {
        fx: 30.0,
        fy: 28.0,
        cx: 11.5,
        cy: 9.5,
        rotation: rot,
        translation: Vec3::new(0.05, -0.02, 0.1),
        width: 24,
        height: 20,
    }
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Gaussian3D> {
    (0..n)
        .map(|_| {
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let norm = q.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
            Gaussian3D {
                position: Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4), rng.random_range(1.5..3.0)),
                rotation: q.map(|v| v / norm),
                log_scale: Vec3::new(rng.random_range(-2.5..-1.2), rng.random_range(-2.5..-1.2), rng.random_range(-2.5..-1.2)),
                opacity_logit: rng.random_range(-1.0..1.5),
                color: Vec3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect()
}

fn params(g: &Gaussian3D) -> [f64; 14] {
    let mut a = [0.0; 14];
    a[0..3].copy_from_slice(&g.position.0);
    a[3..7].copy_from_slice(&g.rotation);
    a[7..10].copy_from_slice(&g.log_scale.0);
    a[10] = g.opacity_logit;
    a[11..14].copy_from_slice(&g.color.0);
    a
}

fn set_param(g: &mut Gaussian3D, k: usize, v: f64) {
    match k {
        0..=2 => g.position[k] = v,
        3..=6 => g.rotation[k - 3] = v,
        7..=9 => g.log_scale[k - 7] = v,
        10 => g.opacity_logit = v,
        _ => g.color[k - 11] = v,
    }
}

#[test]
fn rasterizer_gradients_match_finite_differences() {
    let settings = RenderSettings { background: [0.2, 0.1, 0.3], ..RenderSettings::untruncated() };
    let cam = camera();
    for seed in 0..3u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scene = random_scene(&mut rng, 10);
        let npx = cam.width * cam.height;
        let target: Vec<[f64; 3]> = (0..npx).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let dw: Vec<f64> = (0..npx).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |s: &[Gaussian3D]| {
            let out = render(s, &cam, &settings);
            let mut l = 0.0;
            for i in 0..npx {
                for k in 0..3 {
                    let e = out.color.pixels[i][k] - target[i][k];
                    l += 0.5 * e * e;
                }
                l += dw[i] * out.depth_raw[i];
            }
            l
        };
        let out = render(&scene, &cam, &settings);
        let mut up = PixelGrads::zeros(cam.width, cam.height);
        for i in 0..npx {
            for k in 0..3 {
                up.color[i][k] = out.color.pixels[i][k] - target[i][k];
            }
            up.depth[i] = dw[i];
        }
        let grads = render_with_gradients(&scene, &cam, &settings, &up);
        let h = 1e-4;
        for gi in 0..scene.len() {
            let analytic = grads.per_gaussian[gi].as_array();
            let base = params(&scene[gi]);
            for k in 0..14 {
                let mut sp = scene.clone();
                set_param(&mut sp[gi], k, base[k] + h);
                let mut sm = scene.clone();
                set_param(&mut sm[gi], k, base[k] - h);
                let fd = (loss(&sp) - loss(&sm)) / (2.0 * h);
                let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-7);
                assert!(err < 1e-3, "seed {seed} gaussian {gi} param {k}: fd {fd} analytic {}", analytic[k]);
            }
        }
    }
}

#[test]
fn normalized_depth_gradients_match_finite_differences() {
    let settings = RenderSettings { normalize_depth: true, ..RenderSettings::untruncated() };
    let cam = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let scene = random_scene(&mut rng, 6);
    let npx = cam.width * cam.height;
    // the normalized depth is ill-conditioned where almost nothing is composited
    let coverage = render(&scene, &cam, &settings).alpha;
    let dw: Vec<f64> = (0..npx).map(|i| if coverage[i] > 0.05 { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
    let loss = |s: &[Gaussian3D]| {
        let out = render(s, &cam, &settings);
        (0..npx).map(|i| dw[i] * out.depth_raw[i]).sum::<f64>()
    };
    let mut up = PixelGrads::zeros(cam.width, cam.height);
    up.depth.copy_from_slice(&dw);
    let grads = render_with_gradients(&scene, &cam, &settings, &up);
    let h = 1e-5;
    for gi in 0..scene.len() {
        let analytic = grads.per_gaussian[gi].as_array();
        let base = params(&scene[gi]);
        for k in 0..11 {
            let mut sp = scene.clone();
            set_param(&mut sp[gi], k, base[k] + h);
            let mut sm = scene.clone();
            set_param(&mut sm[gi], k, base[k] - h);
            let fd = (loss(&sp) - loss(&sm)) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-7);
            assert!(err < 1e-3, "gaussian {gi} param {k}: fd {fd} analytic {}", analytic[k]);
        }
    }
}

#[test]
fn shuffling_the_input_leaves_the_render_unchanged() {
    let cam = camera();
    let settings = RenderSettings::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scene = random_scene(&mut rng, 20);
    let a = render(&scene, &cam, &settings);
    let mut shuffled = scene.clone();
    shuffled.reverse();
    shuffled.swap(3, 11);
    let b = render(&shuffled, &cam, &settings);
    for i in 0..a.alpha.len() {
        for k in 0..3 {
            assert!((a.color.pixels[i][k] - b.color.pixels[i][k]).abs() < 1e-6);
        }
        assert!((a.depth_raw[i] - b.depth_raw[i]).abs() < 1e-6);
        assert!(a.alpha[i] <= 1.0 + 1e-6 && a.alpha[i] >= 0.0);
    }
}

#[test]
fn untouched_gaussians_get_exact_zero_gradients() {
    let cam = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut scene = random_scene(&mut rng, 4);
    // far outside the frustum
    scene.push(Gaussian3D::isotropic(Vec3::new(40.0, 0.0, 2.0), 0.05, 0.7, Vec3::new(1.0, 1.0, 1.0)));
    let mut up = PixelGrads::zeros(cam.width, cam.height);
    for c in up.color.iter_mut() {
        *c = [1.0, -0.5, 0.25];
    }
    let g = render_with_gradients(&scene, &cam, &RenderSettings::default(), &up);
    assert_eq!(g.per_gaussian[4].as_array(), [0.0; 14]);
    assert!(!g.visible[4]);
}

#[test]
fn rotation_quaternion_from_matrix_keeps_render() {
    let cam = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut scene = random_scene(&mut rng, 3);
    let r = scene[0].rotation_matrix();
    scene[0].rotation = mat_to_quat(&r);
    let out = render(&scene, &cam, &RenderSettings::default());
    assert!(out.color.pixels.iter().all(|p| p.iter().all(|v| v.is_finite())));
}
