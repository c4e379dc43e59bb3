use hd3_core::density::{kl_pixel, Support};
use hd3_core::features::census_transform;
use hd3_core::propagation::{accumulate, Guide, LabelProbMap};
use hd3_core::toolkit::{
    compute_epe_fl, decode_flo, decode_kitti_flow, encode_flo, encode_kitti_flow, LabelImage,
};
use hd3_core::{
    confidence_map, d2v, downsample_field, upsample_field, v2d, FieldKind, MotionField,
    ScalarImage,
};
use proptest::prelude::*;

fn vector(r: f64) -> impl Strategy<Value = [f64; 2]> {
    (-r..=r, -r..=r).prop_map(|(u, v)| [u, v])
}

fn field(w: usize, h: usize, r: f64) -> impl Strategy<Value = MotionField> {
    prop::collection::vec(vector(r), w * h).prop_map(move |vs| {
        MotionField::from_fn(w, h, FieldKind::Flow, |x, y| Some(vs[y * w + x]))
    })
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|mut p| {
        p[0] += 1e-3;
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|m| *m /= s);
        p
    })
}

proptest! {
    #[test]
    fn splat_then_expectation_recovers_vector(v in vector(3.0), s in -3.0f64..=3.0) {
        let support = Support::flow(3);
        let f = MotionField::constant(1, 1, FieldKind::Flow, v);
        let back = d2v(&v2d(&f, support)).get(0, 0);
        prop_assert!((back[0] - v[0]).abs() < 1e-9 && (back[1] - v[1]).abs() < 1e-9);

        let st = MotionField::constant(1, 1, FieldKind::Stereo, [s, 0.0]);
        let back = d2v(&v2d(&st, Support::stereo(3))).get(0, 0);
        prop_assert!((back[0] - s).abs() < 1e-9 && back[1] == 0.0);
    }

    #[test]
    fn splat_is_normalized_and_confident(v in vector(4.0)) {
        let p = v2d(&MotionField::constant(1, 1, FieldKind::Flow, v), Support::flow(4));
        let total: f64 = p.pixel(0, 0).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(p.pixel(0, 0).iter().all(|&m| m >= 0.0));
        prop_assert!((confidence_map(&p).get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_itself(p in distribution(9), q in distribution(9)) {
        prop_assert!(kl_pixel(&p, &q) >= 0.0);
        prop_assert!(kl_pixel(&p, &p).abs() < 1e-9);
    }

    #[test]
    fn upsampling_is_linear(a in field(5, 4, 3.0), b in field(5, 4, 3.0), s in -2.0f64..2.0) {
        let lhs = upsample_field(&a.add(&b.scale(s)).unwrap());
        let rhs = upsample_field(&a).add(&upsample_field(&b).scale(s)).unwrap();
        for (p, q) in lhs.vectors().iter().zip(rhs.vectors()) {
            prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn affine_fields_survive_up_then_down(
        c in vector(3.0),
        gx in vector(0.5),
        gy in vector(0.5),
    ) {
        let f = MotionField::from_fn(8, 6, FieldKind::Flow, |x, y| {
            let (x, y) = (x as f64, y as f64);
            Some([c[0] + gx[0] * x + gy[0] * y, c[1] + gx[1] * x + gy[1] * y])
        });
        let back = downsample_field(&upsample_field(&f), 2).unwrap();
        for y in 1..5 {
            for x in 1..7 {
                let (p, q) = (back.get(x, y), f.get(x, y));
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn census_ignores_monotone_intensity_changes(
        vals in prop::collection::vec(0.0f64..1.0, 16 * 12),
        gamma in 0.3f64..3.0,
        gain in 0.1f64..1.0,
    ) {
        let img = ScalarImage::new(16, 12, 1, vals.clone()).unwrap();
        let mapped = ScalarImage::new(16, 12, 1, vals.iter().map(|v| gain * v.powf(gamma)).collect())
            .unwrap();
        let (a, b) = (census_transform(&img), census_transform(&mapped));
        for y in 0..12 {
            for x in 0..16 {
                prop_assert_eq!(a.get(x, y), b.get(x, y));
            }
        }
    }

    #[test]
    fn flo_round_trip_is_bit_exact(
        vs in prop::collection::vec((any::<f32>(), any::<f32>(), any::<bool>()), 12)
    ) {
        let f = MotionField::from_fn(4, 3, FieldKind::Flow, |x, y| {
            let (u, v, ok) = vs[y * 4 + x];
            let finite = u.is_finite() && v.is_finite() && u.abs() < 1e9 && v.abs() < 1e9;
            (ok && finite).then(|| [f64::from(u), f64::from(v)])
        });
        let back = decode_flo(&encode_flo(&f).unwrap()).unwrap();
        prop_assert_eq!(back, f);
    }

    #[test]
    fn kitti_flow_round_trip_on_grid(
        raw in prop::collection::vec((-32768i32..32768, -32768i32..32768, any::<bool>()), 12)
    ) {
        let f = MotionField::from_fn(4, 3, FieldKind::Flow, |x, y| {
            let (u, v, ok) = raw[y * 4 + x];
            ok.then(|| [f64::from(u) / 64.0, f64::from(v) / 64.0])
        });
        let back = decode_kitti_flow(4, 3, &encode_kitti_flow(&f).unwrap());
        prop_assert_eq!(back, f);
    }

    #[test]
    fn splatting_conserves_known_mass(
        f in field(6, 5, 4.0),
        labels in prop::collection::vec(prop::option::of(0u32..3), 30),
        use_density in any::<bool>(),
    ) {
        let seed = LabelProbMap::from_labels(&LabelImage::new(6, 5, labels.clone()).unwrap(), 3)
            .unwrap();
        let p = v2d(&f, Support::flow(4));
        let guide = if use_density {
            Guide::Density { density: &p, base: None }
        } else {
            Guide::Flow(&f)
        };
        let acc = accumulate(&seed, guide).unwrap();
        let known = labels.iter().flatten().count() as f64;
        let kept: f64 = acc.weight.iter().sum();
        prop_assert!((kept + acc.dropped - known).abs() < 1e-9);
        let mass: f64 = acc.mass.iter().sum();
        prop_assert!((mass - kept).abs() < 1e-9);
    }

    #[test]
    fn epe_is_symmetric(a in field(4, 4, 20.0), b in field(4, 4, 20.0)) {
        let ab = compute_epe_fl(&a, &b).unwrap();
        let ba = compute_epe_fl(&b, &a).unwrap();
        prop_assert!((ab.epe - ba.epe).abs() < 1e-12);
        prop_assert!(ab.epe >= 0.0 && (0.0..=1.0).contains(&ab.fl));
    }

    #[test]
    fn epe_ignores_horizontal_flips(a in field(5, 3, 20.0), b in field(5, 3, 20.0)) {
        let flip = |f: &MotionField| {
            MotionField::from_fn(5, 3, FieldKind::Flow, |x, y| {
                let v = f.get(4 - x, y);
                Some([-v[0], v[1]])
            })
        };
        let r = compute_epe_fl(&a, &b).unwrap();
        let flipped = compute_epe_fl(&flip(&a), &flip(&b)).unwrap();
        prop_assert!((r.epe - flipped.epe).abs() < 1e-12);
        prop_assert_eq!(r.fl, flipped.fl);
    }
}
