//! Deterministic training: AdamW with decoupled weight decay, per-step cosine
//! learning rate, JSONL metric log and periodic checkpoints.
//!
//! Step `k` (0-based) uses `lr_at(k, total)` and trains on a batch drawn
//! from a per-epoch permutation that depends only on `(seed, epoch)`, so a
//! run resumed from a checkpoint written after step `k` repeats the
//! uninterrupted run exactly.

mod checkpoint;
mod config;
mod optim;

pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint};
pub use config::{lr_at, TrainConfig};
pub use optim::{AdamState, AdamW};

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::{build_teacher_multiscale, missing_teacher, total_loss_graph, LossBreakdown, LossWeights, TeacherFlows};
use crate::metrics::{pair_epe, psnr};
use crate::model::{cascade_graph, init_params, interpolate, ModelConfig, ParamVars, ParameterStore};
use crate::ops::FlowField;
use crate::synth::{item_rng, Triplet};
use crate::tensor::Tensor;

/// Supplies full-resolution teacher flows `(F_t->0, F_t->1)` per training item.
pub trait TeacherProvider {
    fn teacher(&self, index: usize, triplet: &Triplet) -> Option<(FlowField<f32>, FlowField<f32>)>;
}

/// Uses the flows stored with each triplet (exact for synthetic data,
/// precomputed files for ingested data).
#[derive(Clone, Copy, Debug, Default)]
pub struct StoredFlowTeacher;

impl TeacherProvider for StoredFlowTeacher {
    fn teacher(&self, _index: usize, triplet: &Triplet) -> Option<(FlowField<f32>, FlowField<f32>)> {
        triplet.gt_flows.clone()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct NoTeacher;

impl TeacherProvider for NoTeacher {
    fn teacher(&self, _index: usize, _triplet: &Triplet) -> Option<(FlowField<f32>, FlowField<f32>)> {
        None
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub rec: f64,
    pub flow: f64,
    pub smooth: f64,
    /// Batch mean of the final-flow endpoint error, when every item has ground truth.
    pub epe: Option<f64>,
    /// Mean PSNR on the held-out slice, on evaluation steps.
    pub psnr: Option<f64>,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Checkpoints and `metrics.jsonl` go here when set.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ParameterStore<f32>,
    pub optimizer: AdamState,
    pub log: Vec<StepRecord>,
    pub total_steps: usize,
}

impl TrainOutcome {
    pub fn checkpoint(&self, model: &ModelConfig) -> Checkpoint {
        Checkpoint {
            model: model.clone(),
            step: self.total_steps as u64,
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_file_name(step: usize) -> String {
    format!("step_{step:06}.ckpt")
}

const SHUFFLE_STREAM_SALT: u64 = 0x5eed_5417_u64;

/// Training item order for `epoch`; a pure function of `(seed, epoch)`.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut item_rng(seed ^ SHUFFLE_STREAM_SALT, epoch as u64));
    order
}

struct SamplePass {
    loss: LossBreakdown,
    grads: BTreeMap<String, Tensor<f32>>,
    epe: Option<f64>,
}

fn sample_pass(
    params: &ParameterStore<f32>,
    model: &ModelConfig,
    item: &Triplet,
    teacher: Option<&TeacherFlows<f32>>,
    weights: &LossWeights,
) -> Result<SamplePass> {
    let mut g = Graph::new();
    let p = ParamVars::register(&mut g, params, true);
    let a = g.input(item.i0.tensor().clone());
    let b = g.input(item.i1.tensor().clone());
    let out = cascade_graph(&mut g, a, b, &p, model)?;
    let lv = total_loss_graph(&mut g, out.frame, item.it.tensor(), &out.flows, teacher, weights)?;
    let loss = lv.breakdown(&g);
    let epe = match &item.gt_flows {
        Some(gt) if g.value(out.flows[0].0).all_finite() && g.value(out.flows[0].1).all_finite() => {
            let (f0, f1) = out.flows[0];
            let pred = (FlowField::new(g.value(f0).clone())?, FlowField::new(g.value(f1).clone())?);
            Some(pair_epe(&pred, gt)?)
        }
        // Non-finite flows are left to the divergence guard.
        _ => None,
    };
    let mut grads_all = g.backward(lv.total);
    let grads = p
        .iter()
        .map(|(name, &v)| {
            let t = grads_all.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
            (name.clone(), t)
        })
        .collect();
    Ok(SamplePass { loss, grads, epe })
}

fn grad_norm(grads: &BTreeMap<String, Tensor<f32>>) -> f64 {
    grads.values().flat_map(|t| t.data()).map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

/// Mean PSNR of `interpolate` over `items`.
pub fn mean_psnr(items: &[Triplet], params: &ParameterStore<f32>, model: &ModelConfig) -> Result<f64> {
    let mut s = 0.0;
    for it in items {
        s += psnr(&interpolate(&it.i0, &it.i1, params, model)?, &it.it)?;
    }
    Ok(s / items.len().max(1) as f64)
}

fn append_log(path: &Path, rec: &StepRecord) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(rec).expect("record serialises");
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Train on `data` (its trailing `holdout_fraction` is held out for PSNR).
/// Neither `data` nor `teacher` is mutated.
pub fn train(
    model: &ModelConfig,
    cfg: &TrainConfig,
    data: &[Triplet],
    teacher: &dyn TeacherProvider,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    model.validate()?;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset has no samples".into()));
    }
    let n_train = data.len() - cfg.holdout_len(data.len());
    let (train_set, held_out) = data.split_at(n_train);
    let align = model.alignment();
    for (i, it) in train_set.iter().enumerate() {
        if it.height() % align != 0 || it.width() % align != 0 {
            return Err(Error::contract(format!(
                "training item {i} is {}x{}; training frames must be divisible by {align}",
                it.width(),
                it.height()
            )));
        }
    }

    let teachers: Option<Vec<TeacherFlows<f32>>> = if cfg.loss.beta > 0.0 {
        let mut v = Vec::with_capacity(n_train);
        for (i, it) in train_set.iter().enumerate() {
            let full = teacher.teacher(i, it).ok_or_else(missing_teacher)?;
            v.push(build_teacher_multiscale(&full, model.depth)?);
        }
        Some(v)
    } else {
        None
    };

    let (mut params, mut state, start) = match opts.resume {
        Some(ck) => {
            ck.params_for(model)?;
            let state = ck.optimizer.clone().unwrap_or_else(|| AdamState::new(&ck.params));
            (ck.params, state, ck.step as usize)
        }
        None => {
            let p = init_params::<f32>(model, cfg.seed, cfg.init)?;
            let s = AdamState::new(&p);
            (p, s, 0)
        }
    };
    let total = cfg.total_steps(n_train);
    if start > total {
        return Err(Error::contract(format!("checkpoint step {start} is past the schedule end {total}")));
    }

    let log_path = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join(METRICS_FILE);
            if start == 0 && p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
            Some(p)
        }
        None => None,
    };

    let optim = AdamW {
        beta1: cfg.adam_beta1,
        beta2: cfg.adam_beta2,
        eps: cfg.adam_eps,
        weight_decay: cfg.weight_decay,
    };
    let spe = cfg.steps_per_epoch(n_train);
    let mut log = Vec::with_capacity(total - start);
    let mut order = (usize::MAX, Vec::new());

    for step in start..total {
        let epoch = step / spe;
        if order.0 != epoch {
            order = (epoch, epoch_order(cfg.seed, epoch, n_train));
        }
        let pos = step % spe;
        let batch = &order.1[pos * cfg.batch_size..((pos + 1) * cfg.batch_size).min(n_train)];
        let inv = 1.0 / batch.len() as f32;

        let mut grads: BTreeMap<String, Tensor<f32>> =
            params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect();
        let mut loss = LossBreakdown::default();
        let mut epe_sum = Some(0.0);
        for &i in batch {
            let pass = sample_pass(&params, model, &train_set[i], teachers.as_ref().map(|t| &t[i]), &cfg.loss)?;
            for (k, g) in &pass.grads {
                let acc = grads.get_mut(k).expect("same layout");
                for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b * inv;
                }
            }
            let w = 1.0 / batch.len() as f64;
            loss.total += pass.loss.total * w;
            loss.rec += pass.loss.rec * w;
            loss.flow += pass.loss.flow * w;
            loss.smooth += pass.loss.smooth * w;
            epe_sum = epe_sum.zip(pass.epe).map(|(s, e)| s + e * w);
        }
        if !loss.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("loss is {} (rec {}, flow {}, smooth {})", loss.total, loss.rec, loss.flow, loss.smooth),
            });
        }
        let norm = grad_norm(&grads);
        if !norm.is_finite() {
            return Err(Error::Diverged { step, detail: "gradient is not finite".into() });
        }
        if let Some(clip) = cfg.grad_clip {
            if norm > clip {
                let s = (clip / norm) as f32;
                grads.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= s));
            }
        }
        let lr = lr_at(step, total, cfg)?;
        optim.step(&mut params, &grads, &mut state, lr)?;
        if !params.all_finite() {
            return Err(Error::Diverged { step, detail: "parameters became non-finite".into() });
        }

        let done = step + 1;
        let eval_now = !held_out.is_empty()
            && (done == total || (cfg.eval_every > 0 && done % cfg.eval_every == 0));
        let rec = StepRecord {
            step,
            epoch,
            lr,
            loss: loss.total,
            rec: loss.rec,
            flow: loss.flow,
            smooth: loss.smooth,
            epe: epe_sum,
            psnr: if eval_now { Some(mean_psnr(held_out, &params, model)?) } else { None },
            grad_norm: norm,
        };
        if let Some(p) = &log_path {
            append_log(p, &rec)?;
        }
        log.push(rec);

        if let Some(dir) = &opts.out_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done != total {
                let ck = Checkpoint { model: model.clone(), step: done as u64, params: params.clone(), optimizer: Some(state.clone()) };
                checkpoint_save(&ck, &dir.join(checkpoint_file_name(done)))?;
            }
        }
    }

    let outcome = TrainOutcome { params, optimizer: state, log, total_steps: total };
    if let Some(dir) = &opts.out_dir {
        checkpoint_save(&outcome.checkpoint(model), &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(outcome)
}
