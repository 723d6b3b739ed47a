use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// PReLU slope at initialisation.
pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight { fan_in: usize },
    DeconvWeight { fan_in: usize },
    Bias,
    Slope,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Belongs to the last layer of a flow block.
    pub block_head: bool,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

fn conv_layer(out: &mut Vec<ParamSpec>, prefix: &str, cin: usize, cout: usize, k: usize) {
    out.push(ParamSpec {
        name: format!("{prefix}.weight"),
        shape: vec![cout, cin, k, k],
        kind: ParamKind::ConvWeight { fan_in: cin * k * k },
        block_head: false,
    });
    out.push(ParamSpec {
        name: format!("{prefix}.bias"),
        shape: vec![cout],
        kind: ParamKind::Bias,
        block_head: false,
    });
}

fn slope(out: &mut Vec<ParamSpec>, name: String, c: usize) {
    out.push(ParamSpec { name, shape: vec![c], kind: ParamKind::Slope, block_head: false });
}

pub fn pfm_conv_name(level: usize, j: usize) -> String {
    format!("pfm.{level}.conv{j}")
}

pub fn pfm_act_name(level: usize, j: usize) -> String {
    format!("pfm.{level}.act{j}.slope")
}

pub fn block_conv_name(level: usize, j: usize) -> String {
    format!("block{level}.conv{j}")
}

pub fn block_act_name(level: usize, j: usize) -> String {
    format!("block{level}.act{j}.slope")
}

pub fn block_deconv_name(level: usize) -> String {
    format!("block{level}.deconv")
}

/// Every parameter array the configuration instantiates, in build order.
pub fn layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut cin = 3;
    for level in 0..cfg.depth {
        let c = cfg.width(level);
        let k0 = if level == 0 { cfg.first_layer_kernel } else { cfg.other_kernels };
        conv_layer(&mut out, &pfm_conv_name(level, 0), cin, c, k0);
        slope(&mut out, pfm_act_name(level, 0), c);
        conv_layer(&mut out, &pfm_conv_name(level, 1), c, c, cfg.other_kernels);
        slope(&mut out, pfm_act_name(level, 1), c);
        cin = c;
    }
    for level in (0..cfg.depth).rev() {
        let hidden = cfg.block_hidden(level);
        let mut cin = cfg.block_in_channels(level);
        for j in 0..cfg.ifblock_convs {
            conv_layer(&mut out, &block_conv_name(level, j), cin, hidden, cfg.other_kernels);
            slope(&mut out, block_act_name(level, j), hidden);
            cin = hidden;
        }
        let k = cfg.deconv_kernel;
        let cout = cfg.block_out_channels(level);
        let name = block_deconv_name(level);
        out.push(ParamSpec {
            name: format!("{name}.weight"),
            shape: vec![hidden, cout, k, k],
            kind: ParamKind::DeconvWeight { fan_in: hidden * k * k / 4 },
            block_head: true,
        });
        out.push(ParamSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            kind: ParamKind::Bias,
            block_head: true,
        });
    }
    out
}

/// Exact number of scalars in the parameter store for `cfg`.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    layout(cfg).iter().map(ParamSpec::numel).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Kaiming-normal everywhere.
    #[default]
    Random,
    /// As `Random`, but every flow block's last layer is zero, so the
    /// untrained network outputs the mean of its two inputs.
    ZeroFlow,
    /// Every array zero except PReLU slopes.
    Zeros,
}

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    arrays: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParameterStore<T> {
    pub fn from_arrays(arrays: BTreeMap<String, Tensor<T>>) -> Self {
        Self { arrays }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::contract(format!("missing parameter array `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.arrays.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.arrays.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.arrays.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.arrays.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.arrays.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore { arrays: self.arrays.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Check names and shapes against `cfg`, naming the first offending array.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = layout(cfg);
        for spec in &specs {
            match self.arrays.get(&spec.name) {
                None => {
                    return Err(Error::contract(format!(
                        "shape mismatch: array `{}` missing from parameters",
                        spec.name
                    )))
                }
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::contract(format!(
                        "shape mismatch: array `{}` has shape {:?}, configuration expects {:?}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        if self.arrays.len() != specs.len() {
            let known: std::collections::BTreeSet<&str> =
                specs.iter().map(|s| s.name.as_str()).collect();
            let extra = self.arrays.keys().find(|k| !known.contains(k.as_str()));
            return Err(Error::contract(format!(
                "shape mismatch: unexpected array `{}`",
                extra.map(String::as_str).unwrap_or("?")
            )));
        }
        Ok(())
    }
}

/// Fresh parameters for `cfg`; identical for identical `(cfg, seed, mode)`.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64, mode: InitMode) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = 2.0 / (1.0 + PRELU_INIT * PRELU_INIT);
    let mut arrays = BTreeMap::new();
    for spec in layout(cfg) {
        let zero = match mode {
            InitMode::Zeros => !matches!(spec.kind, ParamKind::Slope),
            InitMode::ZeroFlow => spec.block_head,
            InitMode::Random => false,
        };
        let t = match spec.kind {
            ParamKind::Slope => Tensor::full(&spec.shape, T::cst(PRELU_INIT)),
            ParamKind::Bias => Tensor::zeros(&spec.shape),
            ParamKind::ConvWeight { fan_in } | ParamKind::DeconvWeight { fan_in } => {
                // Draw even when zeroing so other arrays do not depend on the mode.
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
                let t = Tensor::from_fn(&spec.shape, |_| T::cst(normal.sample(&mut rng)));
                if zero {
                    Tensor::zeros(&spec.shape)
                } else {
                    t
                }
            }
        };
        arrays.insert(spec.name, t);
    }
    Ok(ParameterStore { arrays })
}
