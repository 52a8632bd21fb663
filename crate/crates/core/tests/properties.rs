use nalgebra::{Matrix3, Vector3};
use objtrack::geometry::{
    axis_angle_to_matrix, decode_translation, encode_translation, geodesic_distance, matrix_to_axis_angle,
    project, relative_rotation, rot_z, validate_rotation, BBox, CameraIntrinsics, CropSpec, Pose, RotationRep,
    RotationTag,
};
use objtrack::io::PoseRecord;
use objtrack::metrics::{add, add_s, proj2d};
use objtrack::models::loss::{loss_rotation, loss_translation};
use objtrack::raster::RgbImage;
use objtrack::segmask::{prepare_network_inputs, warp_mask, FlowField, Mask};
use proptest::prelude::*;

fn intrinsics() -> impl Strategy<Value = CameraIntrinsics> {
    (100.0..600.0f64, 100.0..600.0f64, 30.0..100.0f64, 30.0..100.0f64)
        .prop_map(|(fx, fy, cx, cy)| CameraIntrinsics::new(fx, fy, cx, cy).unwrap())
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    (prop::array::uniform3(-1.0..1.0f64), 0.0..3.1f64).prop_filter_map("axis", |(a, angle)| {
        let v = Vector3::from(a);
        (v.norm() > 1e-3).then(|| axis_angle_to_matrix(&(v.normalize() * angle)).unwrap())
    })
}

fn translation() -> impl Strategy<Value = Vector3<f64>> {
    (-200.0..200.0f64, -200.0..200.0f64, 300.0..2500.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn pose() -> impl Strategy<Value = Pose> {
    (rotation(), translation()).prop_map(|(r, t)| Pose::new(r, t))
}

fn bbox() -> impl Strategy<Value = BBox> {
    (0i64..60, 0i64..60, 8i64..100, 8i64..100).prop_map(|(l, t, w, h)| BBox::new(l, t, w, h))
}

fn points() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(prop::array::uniform3(-60.0..60.0f64).prop_map(Vector3::from), 2..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn translation_round_trip(k in intrinsics(), prev in pose(), cur in pose(), b in bbox()) {
        let crop = CropSpec::new(b, 32, 32).unwrap();
        let code = encode_translation(&k, &prev, &cur, &crop).unwrap();
        let (u, v, z) = project(&k, &prev.translation).unwrap();
        let step = decode_translation(&k, (u, v), z, &code, &crop).unwrap();
        let expect = cur.translation - prev.translation;
        prop_assert!((step.delta_t - expect).norm() < 1e-9 * cur.translation.norm().max(1.0));
    }

    #[test]
    fn depth_code_positive_iff_depth_positive(k in intrinsics(), prev in pose(), cur in pose(), b in bbox()) {
        let crop = CropSpec::new(b, 32, 32).unwrap();
        let code = encode_translation(&k, &prev, &cur, &crop).unwrap();
        prop_assert!(crop.depth_scale() * code.s > -1.0);
    }

    #[test]
    fn codes_scale_with_crop_and_decode_is_crop_free(
        k in intrinsics(), prev in pose(), cur in pose(), b in bbox(), grow in 1i64..4,
    ) {
        let small = CropSpec::new(b, 32, 32).unwrap();
        let large = CropSpec::new(BBox::new(b.left, b.top, b.width * grow, b.height * grow), 32, 32).unwrap();
        let cs = encode_translation(&k, &prev, &cur, &small).unwrap();
        let cl = encode_translation(&k, &prev, &cur, &large).unwrap();
        let g = grow as f64;
        prop_assert!((cs.du - cl.du * g).abs() <= 1e-9 * cs.du.abs().max(1e-6));
        prop_assert!((cs.dv - cl.dv * g).abs() <= 1e-9 * cs.dv.abs().max(1e-6));
        let (u, v, z) = project(&k, &prev.translation).unwrap();
        let a = decode_translation(&k, (u, v), z, &cs, &small).unwrap();
        let c = decode_translation(&k, (u, v), z, &cl, &large).unwrap();
        prop_assert!((a.delta_t - c.delta_t).norm() < 1e-9 * prev.translation.norm());
    }

    #[test]
    fn rodrigues_round_trip(a in prop::array::uniform3(-1.0..1.0f64), angle in 0.0..(std::f64::consts::PI - 1e-3)) {
        let v = Vector3::from(a);
        prop_assume!(v.norm() > 1e-6);
        let omega = v.normalize() * angle;
        let back = matrix_to_axis_angle(&axis_angle_to_matrix(&omega).unwrap()).unwrap();
        prop_assert!((back - omega).norm() < 1e-9);
    }

    #[test]
    fn relative_rotation_is_proper(a in rotation(), b in rotation()) {
        let r = relative_rotation(&a, &b).unwrap();
        prop_assert!(validate_rotation(&r, 1e-9).is_ok());
    }

    #[test]
    fn representations_agree(r in rotation()) {
        for tag in RotationTag::ALL {
            let rep = RotationRep::from_matrix(&r, tag).unwrap();
            prop_assert!((rep.to_matrix().unwrap() - r).norm() < 1e-8, "{tag:?}");
        }
    }

    #[test]
    fn geodesic_of_z_rotation(theta in 1e-3..(std::f64::consts::PI - 1e-3)) {
        prop_assert!((geodesic_distance(&Matrix3::identity(), &rot_z(theta)) - theta).abs() < 1e-9);
    }

    #[test]
    fn add_s_bounded_by_add_and_permutation_free(p in pose(), g in pose(), pts in points(), k in intrinsics()) {
        let a = add(&p, &g, &pts).unwrap();
        let s = add_s(&p, &g, &pts).unwrap();
        prop_assert!(s <= a);
        let mut rev = pts.clone();
        rev.reverse();
        prop_assert!((add(&p, &g, &rev).unwrap() - a).abs() < 1e-9);
        prop_assert!((add_s(&p, &g, &rev).unwrap() - s).abs() < 1e-9);
        prop_assert!((proj2d(&p, &g, &rev, &k).unwrap() - proj2d(&p, &g, &pts, &k).unwrap()).abs() < 1e-9);
        prop_assert_eq!(add(&g, &g, &pts).unwrap(), 0.0);
    }

    #[test]
    fn losses_non_negative_and_zero_at_target(
        a in prop::array::uniform3(-3.0..3.0f64), b in prop::array::uniform3(-3.0..3.0f64), lambda in 0.1..5.0f64,
    ) {
        prop_assert!(loss_translation(a, b, lambda) >= 0.0);
        prop_assert!(loss_rotation(a, b) >= 0.0);
        prop_assert_eq!(loss_translation(a, a, lambda), 0.0);
        prop_assert_eq!(loss_rotation(a, a), 0.0);
    }

    #[test]
    fn pose_record_round_trip(p in pose(), frame in 0usize..1000) {
        let text = serde_json::to_string(&PoseRecord::from_pose(frame, &p)).unwrap();
        let back: PoseRecord = serde_json::from_str(&text).unwrap();
        let q = back.to_pose().unwrap();
        prop_assert!((q.rotation - p.rotation).norm() < 1e-12);
        prop_assert!((q.translation - p.translation).norm() < 1e-12);
    }
}

fn random_mask(w: usize, h: usize, bits: &[bool]) -> Mask {
    let mut m = Mask::empty(w, h, 0);
    m.data.copy_from_slice(&bits[..w * h]);
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn warp_stays_in_bounds(
        bits in prop::collection::vec(any::<bool>(), 24 * 20),
        flow in prop::collection::vec(prop::array::uniform2(-30.0..30.0f64), 24 * 20),
    ) {
        let m = random_mask(24, 20, &bits);
        let f = FlowField { width: 24, height: 20, data: flow, from_index: 0, to_index: 1 };
        let out = warp_mask(&m, &f).unwrap();
        prop_assert_eq!(out.data.len(), 24 * 20);
        prop_assert!(out.count() <= m.count());
    }

    #[test]
    fn window_inputs_share_one_crop_and_are_shift_invariant(
        seed in any::<u64>(), dx in 0usize..8, dy in 0usize..8, k in 2usize..5,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (48, 40);
        let mut frames = Vec::new();
        let mut masks = Vec::new();
        let mut boxes = Vec::new();
        for _ in 0..k {
            let mut img = RgbImage::new(w, h);
            img.data.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            let b = BBox::new(rng.random_range(4..14), rng.random_range(4..12), rng.random_range(6..14), rng.random_range(6..12));
            let mut m = Mask::empty(w, h, 0);
            for y in b.top..b.bottom() {
                for x in b.left..b.right() {
                    m.set(x as usize, y as usize, rng.random_bool(0.7));
                }
            }
            frames.push(img);
            masks.push(m);
            boxes.push(b);
        }
        let shift_img = |img: &RgbImage| {
            let mut out = RgbImage::new(w, h);
            for y in 0..h - dy {
                for x in 0..w - dx {
                    out.set(x + dx, y + dy, img.get(x, y));
                }
            }
            out
        };
        let shift_mask = |m: &Mask| {
            let mut out = Mask::empty(w, h, m.frame_index);
            for y in 0..h - dy {
                for x in 0..w - dx {
                    out.set(x + dx, y + dy, m.get(x, y));
                }
            }
            out
        };
        let f: Vec<&RgbImage> = frames.iter().collect();
        let m: Vec<&Mask> = masks.iter().collect();
        let a = prepare_network_inputs(&f, &m, &boxes, 16, 16, 0.0).unwrap();
        prop_assert_eq!(a.crops.len(), k);
        prop_assert!(a.crops.iter().all(|c| c.len() == 3 * 16 * 16));

        let sf: Vec<RgbImage> = frames.iter().map(shift_img).collect();
        let sm: Vec<Mask> = masks.iter().map(shift_mask).collect();
        let sb: Vec<BBox> = boxes.iter().map(|b| b.translated(dx as i64, dy as i64)).collect();
        let b = prepare_network_inputs(
            &sf.iter().collect::<Vec<_>>(),
            &sm.iter().collect::<Vec<_>>(),
            &sb,
            16,
            16,
            0.0,
        )
        .unwrap();
        prop_assert_eq!(b.crop.bbox, a.crop.bbox.translated(dx as i64, dy as i64));
        prop_assert_eq!(b.crops, a.crops);
    }
}
