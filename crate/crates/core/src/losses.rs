//! Training objective: `alpha * rec + beta * flow + gamma * smooth`.
//!
//! All terms use mean normalisation so the weights do not depend on
//! resolution. Flow supervision compares every cascade level against a
//! teacher rescaled to that level's resolution and pixel units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{self, rescale_flow, FlowField, Frame};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.01, gamma: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha, self.beta, self.gamma];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::config("loss weights must be finite and nonnegative"));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::config("at least one loss weight must be positive"));
        }
        Ok(())
    }
}

/// Teacher flows `(F_t->0, F_t->1)` per cascade level; index 0 is full resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherFlows<T> {
    pub levels: Vec<(FlowField<T>, FlowField<T>)>,
}

/// Per-level teacher: the full-resolution pair rescaled by `1/2^i`.
pub fn build_teacher_multiscale<T: Real>(
    full_res: &(FlowField<T>, FlowField<T>),
    depth: usize,
) -> Result<TeacherFlows<T>> {
    let mut levels = Vec::with_capacity(depth);
    for i in 0..depth {
        if i == 0 {
            levels.push(full_res.clone());
        } else {
            let s = 1.0 / (1u64 << i) as f64;
            levels.push((rescale_flow(&full_res.0, s)?, rescale_flow(&full_res.1, s)?));
        }
    }
    Ok(TeacherFlows { levels })
}

/// Mean absolute colour error.
pub fn rec_loss<T: Real>(pred: &Frame<T>, gt: &Frame<T>) -> Result<T> {
    pred.tensor().expect_same_shape(gt.tensor(), "rec_loss")?;
    Ok(ops::l1_mean_forward(pred.tensor(), gt.tensor()))
}

/// Sum over levels of the smoothness of both directional flows.
pub fn smooth_loss<T: Real>(flows_per_level: &[(FlowField<T>, FlowField<T>)]) -> Result<T> {
    if flows_per_level.is_empty() {
        return Err(Error::contract("smooth_loss needs at least one level"));
    }
    Ok(flows_per_level.iter().fold(T::zero(), |acc, (a, b)| {
        acc + ops::spatial_gradient_l1(a) + ops::spatial_gradient_l1(b)
    }))
}

fn check_levels<T: Real>(student: &[(FlowField<T>, FlowField<T>)], teacher: &TeacherFlows<T>) -> Result<()> {
    if student.len() != teacher.levels.len() {
        return Err(Error::contract(format!(
            "flow_loss: student has {} levels, teacher {}",
            student.len(),
            teacher.levels.len()
        )));
    }
    for (i, ((s0, s1), (t0, t1))) in student.iter().zip(&teacher.levels).enumerate() {
        for (s, t) in [(s0, t0), (s1, t1)] {
            if s.tensor().shape() != t.tensor().shape() {
                return Err(Error::contract(format!(
                    "flow_loss: level {i} student {:?} vs teacher {:?}",
                    s.tensor().shape(),
                    t.tensor().shape()
                )));
            }
        }
    }
    Ok(())
}

/// Sum over levels of the mean absolute difference to the teacher, both directions.
pub fn flow_loss<T: Real>(student: &[(FlowField<T>, FlowField<T>)], teacher: &TeacherFlows<T>) -> Result<T> {
    check_levels(student, teacher)?;
    Ok(student.iter().zip(&teacher.levels).fold(T::zero(), |acc, ((s0, s1), (t0, t1))| {
        acc + ops::l1_mean_forward(s0.tensor(), t0.tensor()) + ops::l1_mean_forward(s1.tensor(), t1.tensor())
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rec: f64,
    pub flow: f64,
    pub smooth: f64,
}

pub fn total_loss<T: Real>(
    pred: &Frame<T>,
    gt: &Frame<T>,
    flows: &[(FlowField<T>, FlowField<T>)],
    teacher: Option<&TeacherFlows<T>>,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    w.validate()?;
    let rec = rec_loss(pred, gt)?.f64();
    let smooth = smooth_loss(flows)?.f64();
    let flow = match teacher {
        Some(t) => flow_loss(flows, t)?.f64(),
        None if w.beta > 0.0 => return Err(missing_teacher()),
        None => 0.0,
    };
    Ok(LossBreakdown { total: w.alpha * rec + w.beta * flow + w.gamma * smooth, rec, flow, smooth })
}

pub(crate) fn missing_teacher() -> Error {
    Error::config(
        "flow distillation weight beta > 0 requires teacher flows (F_t->0, F_t->1) for every \
         sample; supply ground-truth/teacher flow files or set beta = 0",
    )
}

/// Recorded loss nodes.
pub struct LossVars {
    pub total: Var,
    pub rec: Var,
    pub flow: Option<Var>,
    pub smooth: Var,
}

impl LossVars {
    pub fn breakdown<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            total: g.value(self.total).item().f64(),
            rec: g.value(self.rec).item().f64(),
            flow: self.flow.map_or(0.0, |v| g.value(v).item().f64()),
            smooth: g.value(self.smooth).item().f64(),
        }
    }
}

/// Record the objective on a graph; `teacher` is required when `beta > 0`.
pub fn total_loss_graph<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    gt: &Tensor<T>,
    flows: &[(Var, Var)],
    teacher: Option<&TeacherFlows<T>>,
    w: &LossWeights,
) -> Result<LossVars> {
    w.validate()?;
    if flows.is_empty() {
        return Err(Error::contract("total_loss needs at least one flow level"));
    }
    let gt = g.input(gt.clone());
    let rec = g.l1_mean(pred, gt)?;

    let mut smooth_terms = Vec::with_capacity(2 * flows.len());
    for &(a, b) in flows {
        smooth_terms.push((g.tv_l1(a), 1.0));
        smooth_terms.push((g.tv_l1(b), 1.0));
    }
    let smooth = g.weighted_sum(&smooth_terms)?;

    let flow = match teacher {
        Some(t) => {
            if t.levels.len() != flows.len() {
                return Err(Error::contract(format!(
                    "flow_loss: student has {} levels, teacher {}",
                    flows.len(),
                    t.levels.len()
                )));
            }
            let mut terms = Vec::with_capacity(2 * flows.len());
            for (&(s0, s1), (t0, t1)) in flows.iter().zip(&t.levels) {
                let t0 = g.input(t0.tensor().clone());
                let t1 = g.input(t1.tensor().clone());
                terms.push((g.l1_mean(s0, t0)?, 1.0));
                terms.push((g.l1_mean(s1, t1)?, 1.0));
            }
            Some(g.weighted_sum(&terms)?)
        }
        None if w.beta > 0.0 => return Err(missing_teacher()),
        None => None,
    };

    let mut terms = vec![(rec, w.alpha), (smooth, w.gamma)];
    if let Some(f) = flow {
        terms.push((f, w.beta));
    }
    let total = g.weighted_sum(&terms)?;
    Ok(LossVars { total, rec, flow, smooth })
}
