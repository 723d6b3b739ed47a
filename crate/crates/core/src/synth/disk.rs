//! On-disk triplet layout:
//!
//! ```text
//! <root>/manifest.json
//! <root>/sample_0000/im1.png   I0
//!                    im2.png   It
//!                    im3.png   I1
//!                    flow_t0.flo   F_t->0 (optional)
//!                    flow_t1.flo   F_t->1 (optional)
//! ```
//!
//! Ingestion does not require the exact names: each sample folder must hold
//! exactly three PNG files, taken as `I0`, `It`, `I1` in name order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, SceneDistribution, Triplet};
use crate::error::{Error, Result};
use crate::io::{read_flo, read_image, write_atomic, write_flo, write_image};

pub const FRAME_FILES: [&str; 3] = ["im1.png", "im2.png", "im3.png"];
pub const FLOW_T0_FILE: &str = "flow_t0.flo";
pub const FLOW_T1_FILE: &str = "flow_t1.flo";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub name: String,
    pub t: f64,
    /// Checksum of the rendered frames and flows before quantisation.
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub distribution: SceneDistribution,
    pub samples: Vec<SampleRecord>,
}

/// Write one triplet (frames, and flows when present) into `dir`.
pub fn write_triplet_dir(triplet: &Triplet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (frame, name) in [&triplet.i0, &triplet.it, &triplet.i1].into_iter().zip(FRAME_FILES) {
        write_image(frame, &dir.join(name))?;
    }
    if let Some((f0, f1)) = &triplet.gt_flows {
        write_flo(f0, &dir.join(FLOW_T0_FILE))?;
        write_flo(f1, &dir.join(FLOW_T1_FILE))?;
    }
    Ok(())
}

pub fn sample_dir_name(index: usize) -> String {
    format!("sample_{index:04}")
}

/// Materialise `dataset` under `root` and write its manifest last.
pub fn export_dataset(dataset: &Dataset, root: &Path, workers: usize) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let triplets = dataset.materialize_parallel(workers)?;
    let mut samples = Vec::with_capacity(triplets.len());
    for (i, t) in triplets.iter().enumerate() {
        let name = sample_dir_name(i);
        write_triplet_dir(t, &root.join(&name))?;
        samples.push(SampleRecord { name, t: t.t, checksum: t.checksum() });
    }
    let manifest = DatasetManifest { seed: dataset.seed, count: dataset.len, distribution: dataset.dist.clone(), samples };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_atomic(&root.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestedSample {
    pub name: String,
    pub triplet: Triplet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestFailure {
    pub sample: String,
    pub reason: String,
}

/// Result of loading a triplet directory: every sample that loaded, and an
/// itemised list of those that did not.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct IngestReport {
    pub samples: Vec<IngestedSample>,
    pub failures: Vec<IngestFailure>,
}

impl IngestReport {
    /// All triplets, or `Error::Ingest` listing every failed sample.
    pub fn into_strict(self) -> Result<Vec<Triplet>> {
        if !self.failures.is_empty() {
            return Err(Error::Ingest(self.failures.iter().map(|f| format!("{}: {}", f.sample, f.reason)).collect()));
        }
        if self.samples.is_empty() {
            return Err(Error::Empty("no samples found".into()));
        }
        Ok(self.samples.into_iter().map(|s| s.triplet).collect())
    }

    pub fn triplets(&self) -> Vec<Triplet> {
        self.samples.iter().map(|s| s.triplet.clone()).collect()
    }
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn load_sample(dir: &Path) -> std::result::Result<Triplet, String> {
    let mut images: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("cannot list folder: {e}"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_png(p))
        .collect();
    images.sort();
    if images.len() != 3 {
        return Err(format!("expected 3 images, found {}", images.len()));
    }
    let frames = images
        .iter()
        .map(|p| read_image(p).map_err(|e| e.to_string()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let size = (frames[0].height(), frames[0].width());
    for (f, p) in frames.iter().zip(&images).skip(1) {
        if (f.height(), f.width()) != size {
            return Err(format!(
                "image {} is {}x{}, expected {}x{}",
                p.file_name().unwrap_or_default().to_string_lossy(),
                f.width(),
                f.height(),
                size.1,
                size.0
            ));
        }
    }
    let (p0, p1) = (dir.join(FLOW_T0_FILE), dir.join(FLOW_T1_FILE));
    let gt_flows = match (p0.is_file(), p1.is_file()) {
        (false, false) => None,
        (true, true) => {
            let f0 = read_flo(&p0).map_err(|e| e.to_string())?;
            let f1 = read_flo(&p1).map_err(|e| e.to_string())?;
            for f in [&f0, &f1] {
                if (f.height(), f.width()) != size {
                    return Err(format!("flow is {}x{}, images are {}x{}", f.width(), f.height(), size.1, size.0));
                }
            }
            Some((f0, f1))
        }
        _ => return Err(format!("only one of {FLOW_T0_FILE} / {FLOW_T1_FILE} present")),
    };
    let mut it = frames.into_iter();
    let (i0, imid, i1) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    Ok(Triplet { i0, it: imid, i1, t: 0.5, gt_flows, occlusion: None })
}

/// Load every sample folder under `root`, in name order. Samples that fail
/// are reported individually; the rest still load.
pub fn ingest_triplet_dir(root: &Path) -> Result<IngestReport> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut report = IngestReport::default();
    for dir in dirs {
        let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match load_sample(&dir) {
            Ok(triplet) => report.samples.push(IngestedSample { name, triplet }),
            Err(reason) => report.failures.push(IngestFailure { sample: name, reason }),
        }
    }
    Ok(report)
}
