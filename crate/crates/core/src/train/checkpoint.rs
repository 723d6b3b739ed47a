use std::collections::BTreeMap;
use std::path::Path;

use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::io::{read_archive, write_archive, CheckpointArchive};
use crate::model::{ModelConfig, ParameterStore};

const M_PREFIX: &str = "optimizer/m/";
const V_PREFIX: &str = "optimizer/v/";

/// Parameters, optional optimizer state and the completed step count.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub step: u64,
    pub params: ParameterStore<f32>,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    /// Parameters validated against `cfg`: shapes first (naming the first
    /// offending array), then the configuration fingerprint.
    pub fn params_for(&self, cfg: &ModelConfig) -> Result<&ParameterStore<f32>> {
        self.params.check_layout(cfg)?;
        if self.model.fingerprint() != cfg.fingerprint() {
            return Err(Error::contract(format!(
                "checkpoint was written for model fingerprint {}, configuration has {}",
                self.model.fingerprint(),
                cfg.fingerprint()
            )));
        }
        Ok(&self.params)
    }

    pub fn fingerprint(&self) -> String {
        self.model.fingerprint()
    }

    pub fn to_archive(&self) -> CheckpointArchive<f32> {
        let mut arrays: BTreeMap<_, _> = self.params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        if let Some(opt) = &self.optimizer {
            for (k, t) in &opt.m {
                arrays.insert(format!("{M_PREFIX}{k}"), t.clone());
            }
            for (k, t) in &opt.v {
                arrays.insert(format!("{V_PREFIX}{k}"), t.clone());
            }
        }
        let mut archive = CheckpointArchive::new(&self.model, self.step, arrays);
        archive.manifest.optimizer_step = self.optimizer.as_ref().map(|o| o.t);
        archive
    }

    pub fn from_archive(archive: CheckpointArchive<f32>, path: &Path) -> Result<Self> {
        let mut params = BTreeMap::new();
        let (mut m, mut v) = (BTreeMap::new(), BTreeMap::new());
        for (k, t) in archive.arrays {
            if let Some(name) = k.strip_prefix(M_PREFIX) {
                m.insert(name.to_string(), t);
            } else if let Some(name) = k.strip_prefix(V_PREFIX) {
                v.insert(name.to_string(), t);
            } else {
                params.insert(k, t);
            }
        }
        let params = ParameterStore::from_arrays(params);
        if !params.all_finite() {
            return Err(Error::format(path, "checkpoint holds non-finite parameters"));
        }
        let optimizer = match archive.manifest.optimizer_step {
            None if m.is_empty() && v.is_empty() => None,
            None => return Err(Error::format(path, "corrupt checkpoint: optimizer arrays without an optimizer step")),
            Some(t) => {
                let state = AdamState { t, m, v };
                state.check_matches(&params).map_err(|e| Error::format(path, format!("corrupt checkpoint: {e}")))?;
                Some(state)
            }
        };
        Ok(Self { model: archive.manifest.model, step: archive.manifest.step, params, optimizer })
    }
}

pub fn checkpoint_save(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    write_archive(&checkpoint.to_archive(), path)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_archive(read_archive(path)?, path)
}
