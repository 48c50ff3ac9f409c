//! Property suites for the recurrent units, colour conversions and the
//! network's output contract.

mod common;

use common::*;
use dflow_core::color::{rgb_to_hsv, rgb_to_yuv, yuv_to_rgb, ColorImage, ColorSpace};
use dflow_core::data::window_refs;
use dflow_core::network::FlowColor;
use dflow_core::recurrent::{convmgu_step, ConvMguCell};
use dflow_core::{build_dflow, DFlowConfig, Preset, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn in_gate_range(t: &Tensor<f64>) -> bool {
    t.data().iter().all(|&v| v > 0.0 && v < 1.0)
}

fn in_state_range(t: &Tensor<f64>) -> bool {
    t.data().iter().all(|&v| (-1.0..=1.0).contains(&v))
}

#[test]
fn thousand_step_unroll_stays_bounded() {
    let mut r = rng(20);
    let cell = ConvMguCell::<f64>::random(3, 4, 3, &mut r).unwrap();
    let mut h = Tensor::zeros(vec![4, 6, 6]);
    for _ in 0..1000 {
        let x = random_tensor(&[3, 6, 6], &mut r).scale(3.0);
        let step = convmgu_step(&cell, &x, &h).unwrap();
        assert!(in_gate_range(&step.gate));
        assert!(in_state_range(&step.hidden));
        h = step.hidden;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn single_step_gate_and_state_bounds(seed in any::<u64>(), cin in 1usize..4, n in 1usize..4, m in prop::sample::select(vec![1usize, 3, 5])) {
        let mut r = rng(seed);
        let cell = ConvMguCell::<f64>::random(cin, n, m, &mut r).unwrap();
        let x = random_tensor(&[cin, 4, 5], &mut r);
        let h = random_tensor(&[n, 4, 5], &mut r);
        let step = convmgu_step(&cell, &x, &h).unwrap();
        prop_assert!(in_gate_range(&step.gate));
        prop_assert!(in_state_range(&step.hidden));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn yuv_round_trip_is_tight(seed in any::<u64>(), h in 1usize..12, w in 1usize..12) {
        let mut r = rng(seed);
        let img = random_image(h, w, &mut r);
        let back = yuv_to_rgb(&rgb_to_yuv(&img).unwrap()).unwrap();
        prop_assert!(max_abs_diff(img.tensor(), back.tensor()) < 1e-6);
        let img32 = ColorImage::new(img.tensor().cast::<f32>(), ColorSpace::Rgb).unwrap();
        let back32 = yuv_to_rgb(&rgb_to_yuv(&img32).unwrap()).unwrap();
        let err = img32.tensor().max_abs_diff(back32.tensor()).unwrap();
        prop_assert!(err < 1e-6, "f32 round trip error {}", err);
    }

    #[test]
    fn hsv_stays_in_unit_cube(seed in any::<u64>()) {
        let mut r = rng(seed);
        let hsv = rgb_to_hsv(&random_image(5, 5, &mut r)).unwrap();
        prop_assert!(hsv.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn window_count_formula(lengths in prop::collection::vec(0usize..12, 0..6), k in 0usize..6) {
        let refs = window_refs(&lengths, k);
        let want: usize = lengths.iter().map(|&l| l.saturating_sub(k)).sum();
        prop_assert_eq!(refs.len(), want);
        for w in &refs {
            prop_assert!(w.end >= k && w.end < lengths[w.source]);
        }
    }
}

#[test]
fn dflow_output_shape_and_bounds() {
    let mut r = rng(21);
    let mut cases = 0;
    for (h, w) in [(1, 1), (2, 7), (5, 5), (8, 3), (12, 10)] {
        for k in [1, 2, 4] {
            for kappa in [1, 2, 4] {
                for (a, b) in [
                    (FlowColor::Rgb, Some(FlowColor::Yuv)),
                    (FlowColor::Yuv, None),
                    (FlowColor::Rgb, Some(FlowColor::YOnly)),
                ] {
                    let cfg = DFlowConfig {
                        channels: kappa,
                        k,
                        use_block: r.random_bool(0.5),
                        ..DFlowConfig::preset(Preset::Small).with_colors(a, b)
                    };
                    let model = build_dflow::<f64>(cfg, r.random()).unwrap();
                    let frames: Vec<_> = (0..=k).map(|_| random_image(h, w, &mut r)).collect();
                    let p = model.probabilities(&model.render_inputs(&frames).unwrap()).unwrap();
                    assert_eq!(p.shape(), [1, h, w]);
                    assert!(in_gate_range(&p), "({h},{w},{k},{kappa})");
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 135);
}
