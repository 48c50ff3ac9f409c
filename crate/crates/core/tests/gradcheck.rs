//! Finite-difference verification of the analytic gradients.

mod common;

use common::*;
use dflow_core::train::{gradcheck, gradcheck_with, DecoderOnlyModel, GradcheckOptions, LossKind};
use dflow_core::{build_dflow, DFlowConfig, FlowColor, FocalParams, FrameSequence, Parameterized, Preset, Split};

fn tiny(use_block: bool, colors: (FlowColor, Option<FlowColor>)) -> DFlowConfig {
    DFlowConfig {
        channels: 2,
        k: 2,
        use_block,
        ..DFlowConfig::preset(Preset::Small).with_colors(colors.0, colors.1)
    }
}

fn sample(k: usize) -> FrameSequence<f64> {
    let ds = synth_dataset(&small_scene(6), [1, 0, 0], k + 1);
    ds.sequence(ds.windows(Split::Train, k)[0], k).unwrap()
}

const DUAL: (FlowColor, Option<FlowColor>) = (FlowColor::Rgb, Some(FlowColor::Yuv));

#[test]
fn dual_flow_bce_passes() {
    let model = build_dflow::<f64>(tiny(false, DUAL), 1).unwrap();
    let report = gradcheck(&model, &sample(2), LossKind::Bce, 1e-4).unwrap();
    assert!(report.passed, "{report:#?}");
    assert_eq!(report.tensors.len(), model.param_names().len());
    assert!(report.tensors.iter().all(|t| t.max_rel_error < 1e-4));
}

#[test]
fn dual_flow_focal_passes() {
    let model = build_dflow::<f64>(tiny(false, DUAL), 2).unwrap();
    let loss = LossKind::focal(FocalParams::default());
    assert!(gradcheck(&model, &sample(2), loss, 1e-4).unwrap().passed);
}

#[test]
fn block_variant_passes() {
    let model = build_dflow::<f64>(tiny(true, DUAL), 3).unwrap();
    let report = gradcheck(&model, &sample(2), LossKind::Bce, 1e-4).unwrap();
    assert!(report.passed, "{report:#?}");
    assert!(report.tensors.iter().any(|t| t.name.contains("shortcut")));
}

#[test]
fn single_flow_passes() {
    let model = build_dflow::<f64>(tiny(false, (FlowColor::YOnly, None)), 4).unwrap();
    assert!(gradcheck(&model, &sample(2), LossKind::Bce, 1e-4).unwrap().passed);
}

#[test]
fn linear_decoder_is_nearly_exact() {
    let mut r = rng(40);
    let model = DecoderOnlyModel::new(
        FlowColor::Rgb,
        random_tensor(&[1, 3, 3, 3], &mut r),
        Some(random_tensor(&[1], &mut r)),
    )
    .unwrap();
    let report = gradcheck(&model, &sample(0), LossKind::Bce, 1e-8).unwrap();
    assert!(report.passed, "{report:#?}");
}

#[test]
fn corrupted_backward_is_detected() {
    let model = build_dflow::<f64>(tiny(false, DUAL), 1).unwrap();
    let opts = GradcheckOptions {
        corrupt_sigmoid_backward: true,
        ..Default::default()
    };
    let report = gradcheck_with(&model, &sample(2), LossKind::Bce, &opts).unwrap();
    assert!(!report.passed);
}
