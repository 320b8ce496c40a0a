use maint_core::sim::stream_rng;
use maint_core::Dims;
use maint_inference::transform::flatten;
use maint_inference::Layout;
use maint_testkit::random_params;
use proptest::prelude::*;

#[test]
fn round_trip_on_random_parameters() {
    let mut rng = stream_rng(301, 0);
    let layout = Layout::new(Dims::default());
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let theta = random_params(&mut rng, 4, 3);
        let (u, clamped) = layout.encode(&theta).unwrap();
        assert_eq!(clamped, 0);
        let back = layout.decode(&u).unwrap().params;
        for (a, b) in flatten(&theta).iter().zip(flatten(&back)) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-12, "max abs error {worst}");
}

#[test]
fn layout_slices_tile_the_vector() {
    let layout = Layout::new(Dims::default());
    let slices = layout.slices();
    assert_eq!(slices[0].name, "T0");
    let mut next = 0;
    for s in &slices {
        assert_eq!(s.start, next);
        next += s.len;
    }
    assert_eq!(next, 77);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn decoded_vectors_are_valid_parameters(u in proptest::collection::vec(-8.0f64..8.0, 77)) {
        let layout = Layout::new(Dims::default());
        let d = layout.decode(&u).unwrap();
        prop_assert!(d.params.validate().is_ok());
        prop_assert!(d.log_jacobian.is_finite());
        let locs: Vec<f64> = d.params.observation.initial.iter().map(|p| p.loc).collect();
        prop_assert!(locs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn encode_inverts_decode(u in proptest::collection::vec(-4.0f64..4.0, 77)) {
        let layout = Layout::new(Dims::default());
        let theta = layout.decode(&u).unwrap().params;
        let (back, _) = layout.encode(&theta).unwrap();
        for (a, b) in u.iter().zip(&back) {
            prop_assert!((a - b).abs() < 1e-8, "{} vs {}", a, b);
        }
    }
}
