use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use dflow_core::baselines::BaselineMethod;
use dflow_core::color::{extract_y, rgb_to_yuv};
use dflow_core::data::synth::{render_sequence, synth_generate, SynthSceneParams};
use dflow_core::data::{load_manifest, pnm, window_refs, Dataset, Downsample, FrameSequence};
use dflow_core::metrics::{dice_coefficient, silhouette_score, FocalParams, DEFAULT_SILHOUETTE_SAMPLES};
use dflow_core::recurrent::{block_reduction, param_count, ParamFormula};
use dflow_core::train::{
    gradcheck_with, load_checkpoint, predict_mask, save_checkpoint, write_curve_csv, GradcheckOptions, TrainRun,
    EVAL_SILHOUETTE_SEED,
};
use dflow_core::{
    build_dflow, evaluate, ConvMguBlock, ConvMguCell, ConvMguStack, DFlowConfig, DFlowModel, FlowColor, LossKind,
    Parameterized, Tensor, TrainConfig, UnitHyperparams,
};
use log::{info, warn};
use serde::Serialize;
use serde_json::json;

use crate::args::{
    BaselineArgs, DownsampleArg, EvalArgs, Flows, GradcheckArgs, InferArgs, LossArg, MethodArg, ModelArgs, ParamsArgs,
    SynthArgs, TrainArgs,
};
use crate::settings::{
    self, BaselineSettings, EvalSettings, GradcheckSettings, InferSettings, ParamsSettings, SynthSettings,
    TrainSettings,
};
use crate::Failure;

type Model = DFlowModel<f64>;
type Run = TrainRun<f64, Model>;

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.dflw";
pub const CURVE_FILE: &str = "curve.csv";
pub const METRICS_FILE: &str = "metrics.json";

/// The colour/flow configurations compared by `ablate`, in output order.
pub const ABLATIONS: [(&str, FlowColor, Option<FlowColor>); 7] = [
    ("rgb", FlowColor::Rgb, None),
    ("hsv", FlowColor::Hsv, None),
    ("yuv", FlowColor::Yuv, None),
    ("rgb+yuv", FlowColor::Rgb, Some(FlowColor::Yuv)),
    ("rgb+hsv", FlowColor::Rgb, Some(FlowColor::Hsv)),
    ("hsv+yuv", FlowColor::Hsv, Some(FlowColor::Yuv)),
    ("rgb+y", FlowColor::Rgb, Some(FlowColor::YOnly)),
];

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T, Failure> {
    v.as_ref()
        .ok_or_else(|| Failure::invalid(format!("{flag} is required")))
}

/// Creates the output directory and records the resolved settings in it.
/// Called only after validation so that invalid invocations leave no trace.
fn open_out(out: &Option<PathBuf>, resolved: &impl Serialize) -> Result<PathBuf, Failure> {
    let dir = require(out, "--out")?.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join(RESOLVED_CONFIG), resolved)?;
    Ok(dir)
}

fn downsample(a: Option<DownsampleArg>) -> Option<Downsample> {
    a.map(|d| match d {
        DownsampleArg::Box => Downsample::Box,
        DownsampleArg::Nearest => Downsample::Nearest,
    })
}

fn load_dataset(path: &Path, mode: Option<Downsample>) -> Result<Dataset<f64>, Failure> {
    let manifest = load_manifest(path)?;
    Ok(Dataset::load(&manifest, mode)?)
}

fn apply_model_flags(cfg: &mut DFlowConfig, a: &ModelArgs) -> Result<(), Failure> {
    if let Some(p) = a.preset {
        *cfg = DFlowConfig::preset(p);
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(c) = a.channels {
        cfg.channels = c;
    }
    match (a.flows, a.colors) {
        (flows, Some((first, second))) => {
            match (flows, second) {
                (Some(Flows::Single), Some(_)) => {
                    return Err(Failure::invalid("--flows single needs exactly one colour in --colors"))
                }
                (Some(Flows::Double), None) => {
                    return Err(Failure::invalid(
                        "--flows double needs two colours in --colors, e.g. rgb+yuv",
                    ))
                }
                _ => {}
            }
            cfg.flow_a = first;
            cfg.flow_b = second;
        }
        (Some(Flows::Single), None) => cfg.flow_b = None,
        (Some(Flows::Double), None) => {
            if cfg.flow_b.is_none() {
                cfg.flow_b = Some(if cfg.flow_a == FlowColor::Yuv {
                    FlowColor::Rgb
                } else {
                    FlowColor::Yuv
                });
            }
        }
        (None, None) => {}
    }
    cfg.validate()?;
    Ok(())
}

fn loss_kind(a: Option<LossArg>, current: LossKind) -> LossKind {
    match (a, current) {
        (None, c) => c,
        (Some(LossArg::Bce), _) => LossKind::Bce,
        (Some(LossArg::Focal), c @ LossKind::Focal { .. }) => c,
        (Some(LossArg::Focal), LossKind::Bce) => LossKind::focal(FocalParams::default()),
    }
}

pub fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut s: SynthSettings = settings::load(a.common.config.as_deref())?;
    if let Some(seed) = a.common.seed {
        s.scene.seed = seed;
    }
    for (dst, v) in [
        (&mut s.counts.train, a.train),
        (&mut s.counts.val, a.val),
        (&mut s.counts.test, a.test),
        (&mut s.len, a.len),
    ] {
        if let Some(v) = v {
            *dst = v;
        }
    }
    s.scene.validate()?;
    if s.len == 0 {
        return Err(Failure::invalid("--len must be positive"));
    }
    let out = open_out(&a.common.out, &s)?;
    let manifest = synth_generate(&out, &s.scene, s.counts, s.len)?;
    println!(
        "wrote {} sequences of {} frames to {}",
        manifest.sources.len(),
        s.len,
        out.display()
    );
    Ok(())
}

fn resolve_train(a: &TrainArgs, allow_model_flags: bool) -> Result<TrainSettings, Failure> {
    let mut s: TrainSettings = settings::load(a.common.config.as_deref())?;
    if let Some(d) = &a.dataset {
        s.dataset = Some(d.clone());
    }
    if let Some(seed) = a.common.seed {
        s.model_seed = seed;
        s.train.seed = seed;
    }
    if !allow_model_flags && (a.model.flows.is_some() || a.model.colors.is_some() || a.checkpoint.is_some()) {
        return Err(Failure::invalid(
            "ablate chooses colours and flows itself; --flows, --colors and --checkpoint are not accepted",
        ));
    }
    apply_model_flags(&mut s.model, &a.model)?;
    s.train.loss = loss_kind(a.loss, s.train.loss);
    if let Some(n) = a.steps {
        s.train.steps = n;
    }
    if let Some(lr) = a.lr {
        s.train.optimizer = s.train.optimizer.with_lr(lr);
    }
    if let Some(c) = &a.checkpoint {
        s.resume = Some(c.clone());
    }
    if a.downsample.is_some() {
        s.downsample = downsample(a.downsample);
    }
    require(&s.dataset, "--dataset")?;
    s.train.validate()?;
    Ok(s)
}

pub fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut s = resolve_train(&a, true)?;
    let out = require(&a.common.out, "--out")?.clone();
    s.train.checkpoint = Some(out.join(CHECKPOINT_FILE));
    let out = open_out(&Some(out), &s)?;
    let ds = load_dataset(require(&s.dataset, "--dataset")?, s.downsample)?;

    let mut run: Run = match &s.resume {
        Some(path) => {
            let mut run: Run = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if run.model.config != s.model {
                warn!("resuming: the checkpoint's model configuration takes precedence over model flags");
            }
            let optimizer = run.config.optimizer;
            run.config = s.train.clone();
            if std::mem::discriminant(&optimizer) != std::mem::discriminant(&s.train.optimizer) {
                return Err(Failure::invalid("cannot resume with a different optimizer kind"));
            }
            run.optimizer.kind = s.train.optimizer;
            info!("resuming at step {} of {}", run.step, s.train.steps);
            run
        }
        None => TrainRun::new(build_dflow(s.model, s.model_seed)?, s.train.clone())?,
    };
    run.train_until(&ds, s.train.steps)?;
    save_checkpoint(&run, &out.join(CHECKPOINT_FILE))?;
    write_curve_csv(&out.join(CURVE_FILE), &run.curve)?;
    let last = run.curve.last().map(|r| r.train_loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps, final train loss {last:.6}; wrote {}",
        run.step,
        out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, Failure> {
    let run: Run = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(run.model)
}

pub fn infer(a: InferArgs) -> Result<(), Failure> {
    let mut s: InferSettings = settings::load(a.common.config.as_deref())?;
    if a.dataset.is_some() {
        s.dataset = a.dataset.clone();
    }
    if a.checkpoint.is_some() {
        s.checkpoint = a.checkpoint.clone();
    }
    if a.split.is_some() {
        s.split = a.split;
    }
    if a.source.is_some() {
        s.source = a.source.clone();
    }
    if a.downsample.is_some() {
        s.downsample = downsample(a.downsample);
    }
    require(&s.dataset, "--dataset")?;
    require(&s.checkpoint, "--checkpoint")?;
    let out = open_out(&a.common.out, &s)?;
    let model = load_model(require(&s.checkpoint, "--checkpoint")?)?;
    let ds = load_dataset(require(&s.dataset, "--dataset")?, s.downsample)?;
    let k = model.config.k;
    let lengths: Vec<usize> = ds
        .sources
        .iter()
        .map(|src| {
            let keep = s.split.is_none_or(|sp| sp == src.split) && s.source.as_ref().is_none_or(|id| *id == src.id);
            if keep {
                src.frames.len()
            } else {
                0
            }
        })
        .collect();
    let refs = window_refs(&lengths, k);
    if refs.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "no windows of {} frames selected",
            k + 1
        )));
    }
    for r in &refs {
        let seq = ds.sequence(*r, k)?;
        let inputs = model.render_inputs(&seq.frames)?;
        let probs = model.probabilities(&inputs)?;
        let mask = predict_mask(&model, &seq)?;
        let dir = out.join(&seq.source_id);
        fs::create_dir_all(&dir)?;
        pnm::write_probability_map(&dir.join(format!("prob_{:05}.pgm", r.end)), &probs)?;
        pnm::write_mask(&dir.join(format!("mask_{:05}.pgm", r.end)), &mask)?;
    }
    println!("wrote {} probability maps and masks to {}", refs.len(), out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<(), Failure> {
    let mut s: EvalSettings = settings::load(a.common.config.as_deref())?;
    if a.dataset.is_some() {
        s.dataset = a.dataset.clone();
    }
    if a.checkpoint.is_some() {
        s.checkpoint = a.checkpoint.clone();
    }
    if let Some(sp) = a.split {
        s.split = sp;
    }
    if a.downsample.is_some() {
        s.downsample = downsample(a.downsample);
    }
    require(&s.dataset, "--dataset")?;
    require(&s.checkpoint, "--checkpoint")?;
    let out = open_out(&a.common.out, &s)?;
    let model = load_model(require(&s.checkpoint, "--checkpoint")?)?;
    let ds = load_dataset(require(&s.dataset, "--dataset")?, s.downsample)?;
    let report = evaluate(&model, &ds, s.split)?;
    let metrics = json!({
        "dice": report.mean_dice,
        "silhouette": report.mean_silhouette,
        "n_windows": report.n_windows,
        "split": s.split,
        "windows": report.windows,
    });
    write_json(&out.join(METRICS_FILE), &metrics)?;
    println!(
        "{}",
        json!({"dice": report.mean_dice, "silhouette": report.mean_silhouette, "n_windows": report.n_windows})
    );
    Ok(())
}

pub fn baseline(a: BaselineArgs) -> Result<(), Failure> {
    let mut s: BaselineSettings = settings::load(a.common.config.as_deref())?;
    if a.dataset.is_some() {
        s.dataset = a.dataset.clone();
    }
    if let Some(m) = a.method {
        s.method = match m {
            MethodArg::Mean => BaselineMethod::Mean,
            MethodArg::Gaussian => BaselineMethod::Gaussian,
            MethodArg::Dtransform => BaselineMethod::DistanceTransform,
        };
    }
    if let Some(w) = a.window {
        s.params.window = w;
    }
    if let Some(c) = a.offset_c {
        s.params.offset_c = c;
    }
    if a.sigma.is_some() {
        s.params.gaussian_sigma = a.sigma;
    }
    if let Some(f) = a.dt_fraction {
        s.params.dt_fraction = f;
    }
    if a.split.is_some() {
        s.split = a.split;
    }
    s.params.validate()?;
    require(&s.dataset, "--dataset")?;
    let out = open_out(&a.common.out, &s)?;
    let ds = load_dataset(require(&s.dataset, "--dataset")?, None)?;
    let (mut dice, mut sil, mut n) = (0.0, 0.0, 0usize);
    for src in ds.sources.iter().filter(|src| s.split.is_none_or(|sp| sp == src.split)) {
        let dir = out.join(&src.id);
        fs::create_dir_all(&dir)?;
        for (i, (frame, label)) in src.frames.iter().zip(&src.labels).enumerate() {
            let gray = extract_y(&rgb_to_yuv(frame)?)?;
            let mask = s.method.run(&gray, &s.params)?;
            pnm::write_mask(&dir.join(format!("mask_{i:05}.pgm")), &mask)?;
            dice += dice_coefficient(&mask, label)?;
            sil += silhouette_score(&mask, frame, DEFAULT_SILHOUETTE_SAMPLES, EVAL_SILHOUETTE_SEED)?;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Failure::Runtime(anyhow::anyhow!("no frames selected")));
    }
    let metrics = json!({
        "method": s.method,
        "dice": dice / n as f64,
        "silhouette": sil / n as f64,
        "n_frames": n,
    });
    write_json(&out.join(METRICS_FILE), &metrics)?;
    println!("{metrics}");
    Ok(())
}

pub fn params(a: ParamsArgs) -> Result<(), Failure> {
    let mut s: ParamsSettings = settings::load(a.common.config.as_deref())?;
    let hp = &mut s.hyperparams;
    if let Some(c) = a.channels {
        hp.kappa = c;
        hp.n = c;
    }
    for (dst, v) in [
        (&mut hp.m, a.kernel),
        (&mut hp.gamma, a.gamma),
        (&mut hp.kappa, a.kappa),
        (&mut hp.n, a.hidden),
        (&mut hp.f, a.shortcut_kernel),
        (&mut hp.k, a.k),
    ] {
        if let Some(v) = v {
            *dst = v;
        }
    }
    hp.validate()?;
    let hp = *hp;
    let report = params_report(&hp)?;
    for (name, v) in &report.formulas {
        println!("{name:<12} {v}");
    }
    println!("{:<12} {:.4}", "reduction", report.reduction);
    if let Some(c) = &report.constructed {
        println!("constructed cell   {}→{}: {}", hp.gamma, hp.n, c.cell);
        println!("constructed stack2 {}→{}→{}: {}", hp.gamma, hp.n, hp.n, c.stack2);
        println!(
            "constructed block  stack2 + {f}×{f}×{f} shortcut: {}",
            c.block,
            f = hp.f
        );
    } else {
        println!("constructed models need κ = n; skipped");
    }
    if a.common.out.is_some() {
        let out = open_out(&a.common.out, &s)?;
        write_json(&out.join("params.json"), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Constructed {
    cell: usize,
    stack2: usize,
    block: usize,
}

#[derive(Serialize)]
struct ParamsReport {
    formulas: Vec<(&'static str, u64)>,
    reduction: f64,
    constructed: Option<Constructed>,
}

fn params_report(hp: &UnitHyperparams) -> Result<ParamsReport, Failure> {
    let formulas = ParamFormula::ALL
        .iter()
        .map(|&f| Ok((f.name(), param_count(f, hp)?)))
        .collect::<Result<Vec<_>, dflow_core::Error>>()?;
    let reduction = block_reduction(hp)?;
    let usize_of = |v: u64| usize::try_from(v).map_err(|_| Failure::invalid(format!("{v} is too large")));
    let constructed = if hp.kappa == hp.n {
        let (g, n, m, f) = (usize_of(hp.gamma)?, usize_of(hp.n)?, usize_of(hp.m)?, usize_of(hp.f)?);
        let cell = ConvMguCell::<f64>::zeros(g, n, m)?;
        let stack = ConvMguStack::new(cell.clone(), ConvMguCell::zeros(n, n, m)?)?;
        let block = ConvMguBlock::new(
            stack.clone(),
            Tensor::zeros(vec![n, g, f, f, f]),
            Tensor::zeros(vec![n]),
        )?;
        Some(Constructed {
            cell: cell.num_params(),
            stack2: stack.num_params(),
            block: block.num_params(),
        })
    } else {
        None
    };
    Ok(ParamsReport {
        formulas,
        reduction,
        constructed,
    })
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let mut s: GradcheckSettings = settings::load(a.common.config.as_deref())?;
    apply_model_flags(&mut s.model, &a.model)?;
    s.loss = loss_kind(a.loss, s.loss);
    if let Some(seed) = a.common.seed {
        s.seed = seed;
    }
    if let Some(n) = a.size {
        s.size = n;
    }
    if let Some(t) = a.tolerance {
        s.tolerance = t;
    }
    if !(s.tolerance.is_finite() && s.tolerance > 0.0) {
        return Err(Failure::invalid("--tolerance must be positive"));
    }
    let scene = SynthSceneParams {
        height: s.size,
        width: s.size,
        seed: s.seed,
        ..Default::default()
    };
    scene.validate()?;
    let out = match &a.common.out {
        Some(_) => Some(open_out(&a.common.out, &s)?),
        None => None,
    };
    let model = build_dflow::<f64>(s.model, s.seed)?;
    let k = s.model.k;
    let synth = render_sequence(&scene, 0, k + 1)?;
    let label = synth.labels[k].clone();
    let sample = FrameSequence::new(synth.frames, label, "gradcheck".into(), (0..=k).collect())?;
    let opts = GradcheckOptions {
        tolerance: s.tolerance,
        corrupt_sigmoid_backward: a.corrupt_backward,
        ..Default::default()
    };
    let report = gradcheck_with(&model, &sample, s.loss, &opts)?;
    println!(
        "{:<28} {:>6} {:>12} {:>12}  result",
        "tensor", "len", "max abs err", "max rel err"
    );
    for t in &report.tensors {
        println!(
            "{:<28} {:>6} {:>12.3e} {:>12.3e}  {}",
            t.name,
            t.len,
            t.max_abs_error,
            t.max_rel_error,
            if t.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(out) = out {
        write_json(&out.join("gradcheck.json"), &report)?;
    }
    if report.passed {
        println!("gradient check passed at tolerance {:e}", report.tolerance);
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!(
            "gradient check failed at tolerance {:e}",
            report.tolerance
        )))
    }
}

pub fn ablate(a: TrainArgs) -> Result<(), Failure> {
    let s = resolve_train(&a, false)?;
    let out = open_out(&a.common.out, &s)?;
    let ds = load_dataset(require(&s.dataset, "--dataset")?, s.downsample)?;
    let mut summary = Vec::new();
    for (name, first, second) in ABLATIONS {
        info!("ablation {name}");
        let model = build_dflow::<f64>(s.model.with_colors(first, second), s.model_seed)?;
        let config = TrainConfig {
            checkpoint: None,
            ..s.train.clone()
        };
        let run = dflow_core::train(model, &ds, config)?;
        write_curve_csv(&out.join(format!("{name}.csv")), &run.curve)?;
        let last_val = run.curve.iter().rev().find_map(|r| r.val_dice);
        summary.push(json!({
            "config": name,
            "final_train_loss": run.curve.last().map(|r| r.train_loss),
            "final_val_dice": last_val,
        }));
        println!(
            "{name:<8} final val dice {}",
            last_val.map_or("n/a".into(), |d| format!("{d:.4}"))
        );
    }
    write_json(&out.join("summary.json"), &summary)?;
    Ok(())
}
