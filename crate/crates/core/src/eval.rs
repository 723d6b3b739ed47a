//! Evaluation drivers: midpoint recursion for several intermediate frames,
//! per-sample metric reports and the ablation harness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_image;
use crate::losses::LossWeights;
use crate::metrics::{interpolation_error, pair_epe, psnr, ssim};
use crate::model::{cascade_forward, crop, interpolate, pad_replicate, parameter_count, ModelConfig, ParameterStore};
use crate::ops::{FlowField, Frame};
use crate::synth::Triplet;
use crate::train::{train, NoTeacher, StoredFlowTeacher, TeacherProvider, TrainConfig, TrainOptions};

/// Midpoint frame and full-resolution flows `(F_t->0, F_t->1)` for frames of any size.
pub fn predict(
    i0: &Frame<f32>,
    i1: &Frame<f32>,
    params: &ParameterStore<f32>,
    cfg: &ModelConfig,
) -> Result<(Frame<f32>, (FlowField<f32>, FlowField<f32>))> {
    if i0.tensor().shape() != i1.tensor().shape() {
        return Err(Error::contract(format!(
            "input frames differ in size: {:?} vs {:?}",
            i0.tensor().shape(),
            i1.tensor().shape()
        )));
    }
    let (h, w) = (i0.height(), i0.width());
    let a = Frame::new(pad_replicate(i0.tensor(), cfg.alignment()))?;
    let b = Frame::new(pad_replicate(i1.tensor(), cfg.alignment()))?;
    let out = cascade_forward(&a, &b, params, cfg)?;
    let (f0, f1) = &out.flows_per_level[0];
    Ok((
        Frame::clamped(crop(out.frame.tensor(), h, w))?,
        (FlowField::new(crop(f0.tensor(), h, w))?, FlowField::new(crop(f1.tensor(), h, w))?),
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimedFrame {
    pub t: f64,
    pub frame: Frame<f32>,
}

/// `count` intermediate frames by midpoint recursion, in ascending time.
///
/// * 1: `{0.5}`
/// * 3: `{0.25, 0.5, 0.75}`
/// * 5: `{0.125, 0.25, 0.5, 0.625, 0.75}`; `0.125` comes from `(I0, I0.25)`
///   and `0.625` from `(I0.5, I0.75)`.
pub fn multiframe(
    i0: &Frame<f32>,
    i1: &Frame<f32>,
    params: &ParameterStore<f32>,
    cfg: &ModelConfig,
    count: usize,
) -> Result<Vec<TimedFrame>> {
    if !matches!(count, 1 | 3 | 5) {
        return Err(Error::contract(format!("unsupported intermediate frame count {count}; expected 1, 3 or 5")));
    }
    let mid = |a: &Frame<f32>, b: &Frame<f32>| interpolate(a, b, params, cfg);
    let half = mid(i0, i1)?;
    if count == 1 {
        return Ok(vec![TimedFrame { t: 0.5, frame: half }]);
    }
    let quarter = mid(i0, &half)?;
    let three_q = mid(&half, i1)?;
    let mut out = Vec::with_capacity(count);
    if count == 5 {
        out.push(TimedFrame { t: 0.125, frame: mid(i0, &quarter)? });
    }
    let five_e = if count == 5 { Some(mid(&half, &three_q)?) } else { None };
    out.push(TimedFrame { t: 0.25, frame: quarter });
    out.push(TimedFrame { t: 0.5, frame: half });
    if let Some(f) = five_e {
        out.push(TimedFrame { t: 0.625, frame: f });
    }
    out.push(TimedFrame { t: 0.75, frame: three_q });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
    /// Present only when every sample has ground-truth flows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
}

impl MeanMetrics {
    pub fn of(rows: &[SampleMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let epe = rows.iter().map(|r| r.epe).sum::<Option<f64>>().map(|s| s / n);
        Self {
            psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            ie: rows.iter().map(|r| r.ie).sum::<f64>() / n,
            epe,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fingerprint: String,
    pub count: usize,
    pub samples: Vec<SampleMetrics>,
    pub mean: MeanMetrics,
    /// Wall-clock seconds per synthesised frame; informational only.
    pub seconds_per_frame: f64,
}

impl MetricReport {
    /// One JSON object per sample followed by one summary object.
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.samples {
            s.push_str(&serde_json::to_string(&serde_json::json!({"kind": "sample", "fingerprint": self.fingerprint, "metrics": r})).expect("serialises"));
            s.push('\n');
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "fingerprint": self.fingerprint,
            "count": self.count,
            "mean": self.mean,
            "seconds_per_frame": self.seconds_per_frame,
        });
        s.push_str(&serde_json::to_string(&summary).expect("serialises"));
        s.push('\n');
        s
    }

    pub fn table(&self) -> String {
        let has_epe = self.mean.epe.is_some();
        let mut s = format!("model {}  samples {}\n", self.fingerprint, self.count);
        let _ = writeln!(s, "{:<16} {:>8} {:>7} {:>7}{}", "sample", "PSNR", "SSIM", "IE", if has_epe { "     EPE" } else { "" });
        let line = |s: &mut String, name: &str, p: f64, ss: f64, ie: f64, e: Option<f64>| {
            let epe = e.map_or(String::new(), |e| format!(" {e:>7.3}"));
            let _ = writeln!(s, "{name:<16} {p:>8.3} {ss:>7.4} {ie:>7.3}{epe}");
        };
        for r in &self.samples {
            line(&mut s, &r.name, r.psnr, r.ssim, r.ie, r.epe.filter(|_| has_epe));
        }
        line(&mut s, "mean", self.mean.psnr, self.mean.ssim, self.mean.ie, self.mean.epe);
        s
    }
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Write `<name>_pred.png`, `<name>_gt.png` and `<name>_diff.png` (absolute
    /// difference, amplified 4x) here.
    pub dump_dir: Option<PathBuf>,
}

fn dump(dir: &Path, name: &str, pred: &Frame<f32>, gt: &Frame<f32>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let diff = Frame::clamped(pred.tensor().zip_map(gt.tensor(), |a, b| 4.0 * (a - b).abs())?)?;
    write_image(pred, &dir.join(format!("{name}_pred.png")))?;
    write_image(gt, &dir.join(format!("{name}_gt.png")))?;
    write_image(&diff, &dir.join(format!("{name}_diff.png")))
}

/// Metrics of the predicted midpoint of every named sample.
pub fn evaluate(
    samples: &[(String, Triplet)],
    params: &ParameterStore<f32>,
    cfg: &ModelConfig,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut synth_secs = 0.0;
    for (name, s) in samples {
        let t = Instant::now();
        let (pred, flows) = predict(&s.i0, &s.i1, params, cfg)?;
        synth_secs += t.elapsed().as_secs_f64();
        let epe = s.gt_flows.as_ref().map(|gt| pair_epe(&flows, gt)).transpose()?;
        rows.push(SampleMetrics {
            name: name.clone(),
            psnr: psnr(&pred, &s.it)?,
            ssim: ssim(&pred, &s.it)?,
            ie: interpolation_error(&pred, &s.it)?,
            epe,
        });
        if let Some(dir) = &opts.dump_dir {
            dump(dir, name, &pred, &s.it)?;
        }
    }
    Ok(MetricReport {
        fingerprint: cfg.fingerprint(),
        count: rows.len(),
        mean: MeanMetrics::of(&rows),
        samples: rows,
        seconds_per_frame: synth_secs / samples.len() as f64,
    })
}

/// `sample_0000`, `sample_0001`, ... names for an indexed slice.
pub fn name_by_index(items: &[Triplet], offset: usize) -> Vec<(String, Triplet)> {
    items.iter().enumerate().map(|(i, t)| (format!("sample_{:04}", offset + i), t.clone())).collect()
}

/// One trained configuration of the ablation harness.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: String,
    pub model: ModelConfig,
    pub loss: LossWeights,
}

/// The full model and its five single-change ablations.
pub fn table_variants(base: &ModelConfig, loss: &LossWeights) -> Vec<Variant> {
    let v = |name: &str, f: &dyn Fn(&mut ModelConfig, &mut LossWeights)| {
        let (mut m, mut l) = (base.clone(), *loss);
        f(&mut m, &mut l);
        Variant { name: name.to_string(), model: m, loss: l }
    };
    vec![
        v("full", &|_, _| {}),
        v("w/o FF", &|m, _| m.use_frame_features = false),
        v("w/o IF", &|m, _| m.use_intermediate_feature = false),
        v("w/o FIF", &|m, _| {
            m.use_frame_features = false;
            m.use_intermediate_feature = false;
        }),
        v("w/o residual", &|m, _| m.use_flow_residual = false),
        v("w/o L_flow", &|_, l| l.beta = 0.0),
    ]
}

/// The full model at each block count in `depths`.
pub fn depth_variants(base: &ModelConfig, loss: &LossWeights, depths: &[usize]) -> Vec<Variant> {
    depths
        .iter()
        .map(|&d| {
            let mut m = base.clone();
            m.set_depth(d);
            Variant { name: format!("depth {d}"), model: m, loss: *loss }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub params: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub ie: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epe: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// `None` for the across-seed mean.
    pub seed: Option<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn render(&self) -> String {
        let title = self.seed.map_or("mean over seeds".to_string(), |s| format!("seed {s}"));
        let mut s = format!("{title}\n{:<14} {:>10} {:>8} {:>7} {:>7} {:>7}\n", "variant", "params", "PSNR", "SSIM", "IE", "EPE");
        for r in &self.rows {
            let epe = r.epe.map_or("-".to_string(), |e| format!("{e:.3}"));
            let _ = writeln!(s, "{:<14} {:>10} {:>8.3} {:>7.4} {:>7.3} {:>7}", r.variant, r.params, r.psnr, r.ssim, r.ie, epe);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub per_seed: Vec<AblationTable>,
    pub mean: AblationTable,
    /// `(depth, mean PSNR)` for the block-count sweep.
    pub depth_curve: Vec<(usize, f64)>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for t in self.per_seed.iter().chain(std::iter::once(&self.mean)) {
            s.push_str(&t.render());
            s.push('\n');
        }
        s.push_str("block count vs PSNR\n");
        for (d, p) in &self.depth_curve {
            let _ = writeln!(s, "{d:>3} {p:>8.3}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    pub depths: Vec<usize>,
}

/// Train and evaluate every table variant and depth for each seed. Items
/// held out by `train.holdout_fraction` form the validation set; when none
/// are held out the training items are evaluated.
pub fn ablation_suite(spec: &AblationSpec, data: &[Triplet]) -> Result<AblationReport> {
    if spec.seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    if data.is_empty() {
        return Err(Error::Empty("ablation dataset has no samples".into()));
    }
    let n_train = data.len() - spec.train.holdout_len(data.len());
    let val = if n_train == data.len() { name_by_index(data, 0) } else { name_by_index(&data[n_train..], n_train) };

    let mut variants = table_variants(&spec.model, &spec.train.loss);
    variants.extend(depth_variants(&spec.model, &spec.train.loss, &spec.depths));

    let mut per_seed = Vec::with_capacity(spec.seeds.len());
    for &seed in &spec.seeds {
        let mut rows = Vec::with_capacity(variants.len());
        for v in &variants {
            let cfg = TrainConfig { seed, loss: v.loss, checkpoint_every: 0, eval_every: 0, ..spec.train.clone() };
            let teacher: &dyn TeacherProvider = if v.loss.beta > 0.0 { &StoredFlowTeacher } else { &NoTeacher };
            let out = train(&v.model, &cfg, data, teacher, TrainOptions::default())?;
            let report = evaluate(&val, &out.params, &v.model, &EvalOptions::default())?;
            rows.push(AblationRow {
                variant: v.name.clone(),
                params: parameter_count(&v.model),
                psnr: report.mean.psnr,
                ssim: report.mean.ssim,
                ie: report.mean.ie,
                epe: report.mean.epe,
            });
        }
        per_seed.push(AblationTable { seed: Some(seed), rows });
    }

    let n = per_seed.len() as f64;
    let mean_rows = variants
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let col = |f: &dyn Fn(&AblationRow) -> f64| per_seed.iter().map(|t| f(&t.rows[i])).sum::<f64>() / n;
            AblationRow {
                variant: v.name.clone(),
                params: per_seed[0].rows[i].params,
                psnr: col(&|r| r.psnr),
                ssim: col(&|r| r.ssim),
                ie: col(&|r| r.ie),
                epe: per_seed.iter().map(|t| t.rows[i].epe).sum::<Option<f64>>().map(|s| s / n),
            }
        })
        .collect();
    let mean = AblationTable { seed: None, rows: mean_rows };
    let depth_curve = spec
        .depths
        .iter()
        .map(|&d| (d, mean.row(&format!("depth {d}")).expect("depth row present").psnr))
        .collect();
    Ok(AblationReport { per_seed, mean, depth_curve })
}
