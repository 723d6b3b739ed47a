//! Synthetic sprite scenes with exact intermediate flows, plus loading and
//! writing triplet directories.

mod dataset;
mod disk;
mod scene;

pub use dataset::{item_rng, make_triplet, overfit_pack, sample_scene, Dataset, SceneDistribution, Triplet, OVERFIT_PACK_SEED};
pub use disk::{
    export_dataset, ingest_triplet_dir, write_triplet_dir, DatasetManifest, IngestFailure, IngestReport, IngestedSample,
    SampleRecord, FLOW_T0_FILE, FLOW_T1_FILE, FRAME_FILES, MANIFEST_FILE,
};
pub use scene::{render_scene, render_scene_f64, Background, OcclusionMask, SceneSpec, Sprite, SpriteShape, SpriteTexture};
