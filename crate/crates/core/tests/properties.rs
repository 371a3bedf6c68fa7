use std::path::Path;

use proptest::prelude::*;
use velreg::field::{compose_displacements, warp_volume};
use velreg::loss::box_sum;
use velreg::metrics::dice;
use velreg::nvf::{self, Payload};
use velreg::{Dims, LabelVolume, VectorField, Volume};

fn dims() -> impl Strategy<Value = Dims> {
    (1usize..7, 1usize..7, 1usize..7).prop_map(|(x, y, z)| Dims::new(x, y, z))
}

fn spacing() -> impl Strategy<Value = [f32; 3]> {
    prop::array::uniform3(0.1f32..5.0)
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop::num::f32::NORMAL | prop::num::f32::SUBNORMAL | prop::num::f32::ZERO
}

fn volume32() -> impl Strategy<Value = Volume<f32>> {
    (dims(), spacing()).prop_flat_map(|(d, s)| {
        prop::collection::vec(finite_f32(), d.len())
            .prop_map(move |v| Volume::new(d, s, v).unwrap())
    })
}

fn field32() -> impl Strategy<Value = VectorField<f32>> {
    (dims(), spacing()).prop_flat_map(|(d, s)| {
        prop::collection::vec(finite_f32(), 3 * d.len())
            .prop_map(move |v| VectorField::new(d, s, v).unwrap())
    })
}

fn labels(d: Dims, max: u32) -> impl Strategy<Value = LabelVolume> {
    prop::collection::vec(0..max, d.len())
        .prop_map(move |v| LabelVolume::new(d, [1.0; 3], v).unwrap())
}

fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_round_trip_is_bitwise(v in volume32()) {
        let bytes = nvf::encode_volume(&v);
        let (h, payload) = nvf::decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(h.dims, v.dims());
        prop_assert_eq!(bits(&h.spacing), bits(&v.spacing()));
        match payload {
            Payload::F32(data) => prop_assert_eq!(bits(&data), bits(v.data())),
            Payload::U32(_) => prop_assert!(false, "wrong dtype"),
        }
    }

    #[test]
    fn field_file_round_trip_is_bitwise(u in field32()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.nvf");
        nvf::save_field(&u, &path).unwrap();
        let back: VectorField<f32> = nvf::load_field(&path).unwrap();
        prop_assert_eq!(bits(back.data()), bits(u.data()));
        prop_assert_eq!(std::fs::read(&path).unwrap(), nvf::encode_field(&back));
    }

    #[test]
    fn label_round_trip(l in dims().prop_flat_map(|d| labels(d, u32::MAX))) {
        let bytes = nvf::encode_labels(&l);
        let (_, payload) = nvf::decode(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(payload, Payload::U32(l.data().to_vec()));
    }

    #[test]
    fn dice_is_symmetric((a, b) in dims().prop_flat_map(|d| (labels(d, 4), labels(d, 4)))) {
        let ab = dice(&a, &b, None).unwrap();
        let ba = dice(&b, &a, None).unwrap();
        prop_assert_eq!(&ab.per_label, &ba.per_label);
        prop_assert_eq!(ab.mean, ba.mean);
        let aa = dice(&a, &a, None).unwrap();
        prop_assert!(aa.per_label.values().all(|&d| d == 1.0));
    }

    #[test]
    fn box_sum_is_self_adjoint(
        (d, x, y) in dims().prop_flat_map(|d| (
            Just(d),
            prop::collection::vec(0.0f64..1.0, d.len()),
            prop::collection::vec(0.0f64..1.0, d.len()),
        )),
        r in 1usize..4,
    ) {
        let bx = box_sum(d, &x, r);
        let by = box_sum(d, &y, r);
        let lhs: f64 = bx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&by).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn warping_is_linear_in_the_image(
        (img_a, img_b, disp) in dims().prop_flat_map(|d| (
            prop::collection::vec(-1.0f64..1.0, d.len()),
            prop::collection::vec(-1.0f64..1.0, d.len()),
            prop::collection::vec(-3.0f64..3.0, 3 * d.len()),
        ).prop_map(move |(a, b, u)| (
            Volume::new(d, [1.0; 3], a).unwrap(),
            Volume::new(d, [1.0; 3], b).unwrap(),
            VectorField::new(d, [1.0; 3], u).unwrap(),
        ))),
        alpha in -2.0f64..2.0,
    ) {
        let d = img_a.dims();
        let mix = Volume::from_fn(d, |x, y, z| img_a.get(x, y, z) + alpha * img_b.get(x, y, z));
        let wa = warp_volume(&img_a, &disp).unwrap();
        let wb = warp_volume(&img_b, &disp).unwrap();
        let wm = warp_volume(&mix, &disp).unwrap();
        for i in 0..d.len() {
            let expect = wa.data()[i] + alpha * wb.data()[i];
            prop_assert!((wm.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_field_is_the_identity(u in field32()) {
        let u = u.cast::<f64>();
        let zero = VectorField::zeros(u.dims());
        let a = compose_displacements(&zero, &u).unwrap();
        let b = compose_displacements(&u, &zero).unwrap();
        prop_assert_eq!(a.data(), u.data());
        prop_assert_eq!(b.data(), u.data());
    }
}
