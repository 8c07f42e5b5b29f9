use proptest::prelude::*;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use transcender::renderer::{
    make_mesh, multicam_poses, place_patch, project_patch_bbox, render, sample_pose, CameraPose, Intrinsics, MeshKind,
    PoseRanges, TextureSpec, PATCH_SIDE_M,
};
use transcender::pipeline::texture_resolution;
use transcender::Image64;

const ALL_MESHES: [MeshKind; 5] = [
    MeshKind::Barrel,
    MeshKind::Billboard,
    MeshKind::Sign,
    MeshKind::Tshirt,
    MeshKind::Screen,
];

fn random_texture(size: usize, rng: &mut impl Rng) -> Image64 {
    Image64::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()])
}

/// Bilinear lookup with pixel centers at half-integers and edge clamping.
fn sample_bilinear(img: &Image64, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let at = |xi: isize, yi: isize| img.get(xi.clamp(0, w - 1) as usize, yi.clamp(0, h - 1) as usize);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let (a, b, c, d) = (at(x0, y0), at(x0 + 1, y0), at(x0, y0 + 1), at(x0 + 1, y0 + 1));
    let mut out = [0.0; 3];
    for k in 0..3 {
        out[k] = (1.0 - ty) * ((1.0 - tx) * a[k] + tx * b[k]) + ty * ((1.0 - tx) * c[k] + tx * d[k]);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn texture_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = Intrinsics::new(90.0, 64, 64);
        let mesh = make_mesh(*ALL_MESHES.choose(&mut rng).unwrap());
        let pose = sample_pose(&PoseRanges::standard(&intr), intr, &mut rng);
        let tex = random_texture(32, &mut rng);
        let out = render(&mesh, &tex, &pose);
        let n = out.rgb.data().len() as f64;
        let grad = out.backward(&vec![1.0 / n; out.rgb.data().len()]);
        let mean = |t: &Image64| render(&mesh, t, &pose).rgb.data().iter().sum::<f64>() / n;

        let touched: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
        prop_assume!(!touched.is_empty());
        let eps = 1e-3;
        for &i in touched.choose_multiple(&mut rng, 20) {
            let mut hi = tex.clone();
            hi.data_mut()[i] += eps;
            let mut lo = tex.clone();
            lo.data_mut()[i] -= eps;
            let fd = (mean(&hi) - mean(&lo)) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs());
            prop_assert!(rel < 1e-2, "texel {}: {} vs {}", i, grad[i], fd);
        }
    }

    #[test]
    fn rendering_is_bit_identical(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = Intrinsics::new(90.0, 48, 48);
        let mesh = make_mesh(*ALL_MESHES.choose(&mut rng).unwrap());
        let pose = sample_pose(&PoseRanges::standard(&intr), intr, &mut rng);
        let tex = random_texture(16, &mut rng);
        let a = render(&mesh, &tex, &pose);
        let b = render(&mesh, &tex, &pose);
        prop_assert_eq!(a.rgb.data(), b.rgb.data());
        prop_assert_eq!(a.alpha, b.alpha);
        prop_assert_eq!(a.patch_pixels, b.patch_pixels);
    }

    #[test]
    fn patch_box_encloses_rendered_patch_pixels(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = Intrinsics::new(90.0, 64, 64);
        for kind in [MeshKind::Barrel, MeshKind::Billboard, MeshKind::Sign, MeshKind::Tshirt] {
            let mesh = make_mesh(kind);
            let pose = sample_pose(&PoseRanges::standard(&intr), intr, &mut rng);
            let out = render(&mesh, &Image64::filled(8, 8, [0.5; 3]), &pose);
            let Ok(bbox) = project_patch_bbox(&mesh, &mesh.placement, &pose) else {
                prop_assert!(!out.patch_pixels.iter().any(|&p| p));
                continue;
            };
            let (x0, y0, x1, y1) = bbox.corners();
            for (i, _) in out.patch_pixels.iter().enumerate().filter(|(_, &p)| p) {
                let x = (i % 64) as f64 + 0.5;
                let y = (i / 64) as f64 + 0.5;
                prop_assert!(
                    x >= x0 * 64.0 - 1e-9 && x <= x1 * 64.0 + 1e-9 && y >= y0 * 64.0 - 1e-9 && y <= y1 * 64.0 + 1e-9,
                    "{:?} pixel ({}, {}) escapes {:?}", kind, x, y, bbox
                );
            }
        }
    }

    #[test]
    fn side_cameras_shift_the_patch_the_other_way(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intr = Intrinsics::new(90.0, 64, 64);
        let mesh = make_mesh(*MeshKind::TRAINING_POOL.choose(&mut rng).unwrap());
        let center = sample_pose(&PoseRanges::standard(&intr), intr, &mut rng);
        let gamma = rng.random_range(0.01..=1.0) * transcender::renderer::default_max_gamma(&center);
        let poses = multicam_poses(&center, gamma, &mesh);
        prop_assume!(!poses.clamped && poses.gamma > 0.0);
        let cx: Vec<f64> = poses
            .as_array()
            .iter()
            .map(|p| project_patch_bbox(&mesh, &mesh.placement, p).unwrap().cx)
            .collect();
        prop_assert!(cx[0] > cx[1] && cx[1] > cx[2], "{:?}", cx);
    }
}

#[test]
fn frontal_billboard_is_a_scaled_translated_patch() {
    let intr = Intrinsics::new(90.0, 128, 128);
    let mesh = make_mesh(MeshKind::Billboard);
    // smooth content so the two resampling passes stay close to one
    let patch = Image64::from_fn(32, 32, |x, y| {
        let (u, v) = (x as f64 / 32.0, y as f64 / 32.0);
        [
            0.5 + 0.4 * (3.0 * u).sin(),
            0.5 + 0.4 * (2.0 * v + 1.0).cos(),
            0.5 + 0.3 * (2.0 * (u + v)).sin(),
        ]
    });
    // a few texels per patch pixel keeps the base color from bleeding into the border
    let res = texture_resolution(4 * patch.width(), &mesh);
    let tex = place_patch(&TextureSpec::new([1.0; 3], mesh.placement, res), &patch);
    for rows in [40.0, 64.0, 100.0] {
        let d = intr.focal_px() * PATCH_SIDE_M / rows;
        let pose = CameraPose::frontal(d, intr);
        let out = render(&mesh, &tex.image, &pose);
        let bbox = project_patch_bbox(&mesh, &mesh.placement, &pose).unwrap();
        let (x0, y0, x1, y1) = bbox.corners();
        let (bx0, by0, bw, bh) = (x0 * 128.0, y0 * 128.0, (x1 - x0) * 128.0, (y1 - y0) * 128.0);
        let mut total = 0.0;
        let mut count = 0usize;
        for y in 0..128 {
            for x in 0..128 {
                if !out.patch_pixels[y * 128 + x] {
                    continue;
                }
                let px = (x as f64 + 0.5 - bx0) / bw * 32.0;
                let py = (y as f64 + 0.5 - by0) / bh * 32.0;
                let expect = sample_bilinear(&patch, px, py);
                let got = out.rgb.get(x, y);
                total += (0..3).map(|k| (got[k] - expect[k]).abs()).sum::<f64>() / 3.0;
                count += 1;
            }
        }
        assert!(count > 0);
        let mad = total / count as f64;
        assert!(mad < 2.0 / 255.0, "{rows} rows: mean abs diff {mad}");
    }
}
