mod common;

use std::fs;

use common::warp_oracle;
use mavfi::ops::{warp, FlowField};
use mavfi::synth::{
    export_dataset, ingest_triplet_dir, make_triplet, overfit_pack, render_scene, render_scene_f64, write_triplet_dir,
    Background, Dataset, SceneDistribution, SceneSpec, Sprite, SpriteShape, SpriteTexture, Triplet, FLOW_T0_FILE,
    FLOW_T1_FILE, FRAME_FILES, MANIFEST_FILE,
};
use mavfi::Error;
use proptest::prelude::*;

const PACK_CHECKSUMS: [&str; 8] = [
    "4e12b9291f784afcb4c137ad90f2dac01bec6d11d319cb78420904636c147bb5",
    "3b0e7c627916eac73a3ec5164ae5f2fe7042870b93be3e67f788b5bd739aa08d",
    "edd98b1a13ba5b0f988c138fcd3a87ca19fad81d11b5b10fb4cdc7275e54a7a5",
    "82d9544df4ac860d867df88815620e009ef59f06a9c37f137de775464421c4dc",
    "c4a3bb8aaee47a531d97348af01530440432dc5baf042beaf6f8c48f67664c71",
    "79cb281857bc79a3bc0c32f9a14c415f9dedd72bd7a5a38fba41dbae41002884",
    "50fe4d01809b6fde5c6f6b6ab91b0a2659c1ba32ffe6ff9f297a878f6d2199a1",
    "6de32c2712cafbe9efe72676b37ffa6897307dd6cae4b793a20a31f448db9587",
];

fn one_sprite(velocity: [f64; 2], acceleration: [f64; 2]) -> SceneSpec {
    let texture = SpriteTexture {
        n: 3,
        grid: (0..9).map(|k| [0.2 + 0.07 * k as f64, 0.8 - 0.05 * k as f64, 0.5]).collect(),
    };
    SceneSpec {
        width: 40,
        height: 24,
        background: Background::flat([0.3, 0.4, 0.5]),
        sprites: vec![Sprite {
            shape: SpriteShape::Patch { half_w: 6.0, half_h: 5.0 },
            texture,
            z: 0,
            p0: [12.3, 11.6],
            velocity,
            acceleration,
            angle0: 0.0,
            rotation_rate: 0.0,
        }],
    }
}

/// Pixels well inside the sprite at time `t`.
fn interior(spec: &SceneSpec, t: f64) -> Vec<(usize, usize)> {
    let sp = &spec.sprites[0];
    let c = sp.centre(t);
    let mut out = Vec::new();
    for y in 0..spec.height {
        for x in 0..spec.width {
            if (x as f64 - c[0]).abs() < 4.0 && (y as f64 - c[1]).abs() < 3.0 {
                out.push((x, y));
            }
        }
    }
    assert!(!out.is_empty());
    out
}

fn flow_at(f: &FlowField<f32>, x: usize, y: usize) -> (f32, f32) {
    (f.tensor().at(0, y, x), f.tensor().at(1, y, x))
}

#[test]
fn rendering_is_deterministic_and_static_scenes_do_not_change() {
    let spec = one_sprite([3.0, -1.0], [0.0, 0.0]);
    assert_eq!(render_scene(&spec, 0.37), render_scene(&spec, 0.37));
    let still = one_sprite([0.0, 0.0], [0.0, 0.0]);
    let first = render_scene(&still, 0.0);
    for tau in [0.25, 0.5, 1.0] {
        assert_eq!(render_scene(&still, tau), first);
    }
}

#[test]
fn translation_by_four_pixels_shifts_the_frame() {
    let spec = one_sprite([4.0, 0.0], [0.0, 0.0]);
    let a = render_scene_f64(&spec, 0.0);
    let b = render_scene_f64(&spec, 1.0);
    let mut worst: f64 = 0.0;
    for c in 0..3 {
        for y in 0..spec.height {
            for x in 4..spec.width {
                worst = worst.max((b.at(c, y, x) - a.at(c, y, x - 4)).abs());
            }
        }
    }
    assert!(worst < 1e-12, "shifted crop differs by {worst}");
}

#[test]
fn linear_translation_flows() {
    let spec = one_sprite([4.0, 0.0], [0.0, 0.0]);
    let tr = make_triplet(&spec, 0.5).unwrap();
    let (f0, f1) = tr.gt_flows.as_ref().unwrap();
    for (x, y) in interior(&spec, 0.5) {
        assert_eq!(flow_at(f0, x, y), (-2.0, 0.0));
        assert_eq!(flow_at(f1, x, y), (2.0, 0.0));
    }
    assert_eq!(flow_at(f0, 39, 0), (0.0, 0.0));
}

#[test]
fn accelerated_motion_gives_asymmetric_flows() {
    let spec = one_sprite([0.0, 0.0], [8.0, 0.0]);
    let tr = make_triplet(&spec, 0.5).unwrap();
    let (f0, f1) = tr.gt_flows.as_ref().unwrap();
    for (x, y) in interior(&spec, 0.5) {
        assert_eq!(flow_at(f0, x, y), (-2.0, 0.0));
        assert_eq!(flow_at(f1, x, y), (6.0, 0.0));
    }
}

#[test]
fn intermediate_time_outside_unit_interval_is_rejected() {
    let spec = one_sprite([1.0, 0.0], [0.0, 0.0]);
    assert!(make_triplet(&spec, 0.0).is_err());
    assert!(make_triplet(&spec, 1.0).is_err());
}

/// Mean |warp(src, flow) - It| over non-occluded sprite-owned pixels.
fn consistency_error(tr: &Triplet, backward: bool) -> Option<f64> {
    let (f0, f1) = tr.gt_flows.as_ref().unwrap();
    let (m0, m1) = tr.occlusion.as_ref().unwrap();
    let (src, flow, mask) = if backward { (&tr.i0, f0, m0) } else { (&tr.i1, f1, m1) };
    let warped = warp(&src.tensor().cast::<f64>(), &flow.cast()).unwrap();
    let oracle = warp_oracle(&src.tensor().cast::<f64>(), &flow.tensor().cast());
    assert!(warped.max_abs_diff(&oracle) < 1e-9);
    let it = tr.it.tensor().cast::<f64>();
    let (mut sum, mut n) = (0.0, 0usize);
    for y in 0..tr.height() {
        for x in 0..tr.width() {
            let moving = flow.tensor().at(0, y, x) != 0.0 || flow.tensor().at(1, y, x) != 0.0;
            if moving && !mask.is_occluded(x, y) {
                for c in 0..3 {
                    sum += (warped.at(c, y, x) - it.at(c, y, x)).abs();
                }
                n += 3;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[test]
fn flows_are_consistent_with_frames_on_visible_pixels() {
    let data = Dataset::new(11, 24, SceneDistribution::default()).unwrap();
    let mut checked = 0;
    for i in 0..data.len {
        let tr = data.get(i).unwrap();
        for backward in [true, false] {
            if let Some(err) = consistency_error(&tr, backward) {
                assert!(err < 0.02, "item {i} backward={backward}: {err}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 24);
}

#[test]
fn linear_motion_is_time_symmetric() {
    let dist = SceneDistribution { accel_prob: 0.0, rotation_prob: 0.0, ..Default::default() };
    let data = Dataset::new(5, 8, dist).unwrap();
    for i in 0..data.len {
        let tr = data.get(i).unwrap();
        let (f0, f1) = tr.gt_flows.as_ref().unwrap();
        for (a, b) in f0.tensor().data().iter().zip(f1.tensor().data()) {
            assert_eq!(*a, -*b, "item {i}");
        }
    }
}

#[test]
fn dataset_items_depend_only_on_seed_and_index() {
    let dist = SceneDistribution::default();
    let a = Dataset::new(3, 10, dist.clone()).unwrap();
    let longer = Dataset::new(3, 20, dist.clone()).unwrap();
    let serial = a.materialize().unwrap();
    assert_eq!(serial, a.materialize_parallel(4).unwrap());
    assert_eq!(serial, a.materialize_parallel(16).unwrap());
    for (i, t) in serial.iter().enumerate() {
        assert_eq!(*t, longer.get(i).unwrap());
    }
    let b = Dataset::new(4, 10, dist).unwrap();
    let differing = (0..10).filter(|&i| a.get(i).unwrap().checksum() != b.get(i).unwrap().checksum()).count();
    assert_eq!(differing, 10);
    assert!(a.get(10).is_err());
}

#[test]
fn overfit_pack_checksums_are_pinned() {
    let pack = overfit_pack().materialize().unwrap();
    let sums: Vec<String> = pack.iter().map(Triplet::checksum).collect();
    assert_eq!(sums, PACK_CHECKSUMS);
}

#[test]
fn export_then_ingest_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::new(9, 3, SceneDistribution { width: 24, height: 16, ..Default::default() }).unwrap();
    let manifest = export_dataset(&data, dir.path(), 2).unwrap();
    assert_eq!(manifest.samples.len(), 3);
    assert!(dir.path().join(MANIFEST_FILE).is_file());
    let report = ingest_triplet_dir(dir.path()).unwrap();
    assert!(report.failures.is_empty());
    let loaded = report.into_strict().unwrap();
    for (orig, back) in data.materialize().unwrap().iter().zip(&loaded) {
        assert_eq!(back.t, 0.5);
        assert!(back.i0.tensor().max_abs_diff(orig.i0.tensor()) <= 0.5 / 255.0 + 1e-6);
        assert!(back.it.tensor().max_abs_diff(orig.it.tensor()) <= 0.5 / 255.0 + 1e-6);
        assert_eq!(back.gt_flows, orig.gt_flows);
        assert!(back.occlusion.is_none());
    }
}

#[test]
fn ingest_reports_bad_samples_and_keeps_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let data = Dataset::new(2, 3, SceneDistribution { width: 16, height: 16, ..Default::default() }).unwrap();
    let mut plain = data.get(0).unwrap();
    plain.gt_flows = None;
    write_triplet_dir(&plain, &dir.path().join("a_plain")).unwrap();
    write_triplet_dir(&data.get(1).unwrap(), &dir.path().join("b_flows")).unwrap();
    let short = dir.path().join("c_short");
    write_triplet_dir(&data.get(2).unwrap(), &short).unwrap();
    fs::remove_file(short.join(FRAME_FILES[2])).unwrap();
    let odd = dir.path().join("d_odd");
    write_triplet_dir(&plain, &odd).unwrap();
    let small = Dataset::new(2, 1, SceneDistribution { width: 12, height: 16, ..Default::default() }).unwrap();
    mavfi::io::write_image(&small.get(0).unwrap().i1, &odd.join(FRAME_FILES[2])).unwrap();
    let half = dir.path().join("e_half_flow");
    write_triplet_dir(&data.get(1).unwrap(), &half).unwrap();
    fs::remove_file(half.join(FLOW_T1_FILE)).unwrap();

    let report = ingest_triplet_dir(dir.path()).unwrap();
    let names: Vec<&str> = report.samples.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["a_plain", "b_flows"]);
    assert!(report.samples[0].triplet.gt_flows.is_none());
    assert_eq!(report.samples[1].triplet.gt_flows, data.get(1).unwrap().gt_flows);
    let failed: Vec<&str> = report.failures.iter().map(|f| f.sample.as_str()).collect();
    assert_eq!(failed, ["c_short", "d_odd", "e_half_flow"]);
    assert!(report.failures[0].reason.contains("found 2"));
    assert!(report.failures[2].reason.contains(FLOW_T0_FILE));
    match report.into_strict() {
        Err(Error::Ingest(items)) => assert_eq!(items.len(), 3),
        other => panic!("expected ingest error, got {other:?}"),
    }
}

#[test]
fn empty_directory_is_an_empty_error() {
    let dir = tempfile::tempdir().unwrap();
    let report = ingest_triplet_dir(dir.path()).unwrap();
    assert!(matches!(report.into_strict(), Err(Error::Empty(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sprite_centres_stay_on_canvas(seed in any::<u64>(), index in 0usize..1000) {
        let data = Dataset::new(seed, index + 1, SceneDistribution::default()).unwrap();
        let scene = data.scene(index);
        for sp in &scene.sprites {
            for k in 0..=8 {
                let c = sp.centre(k as f64 / 8.0);
                prop_assert!(c[0] >= -sp.shape.reach() && c[0] <= 64.0 + sp.shape.reach());
                prop_assert!(c[1] >= -sp.shape.reach() && c[1] <= 64.0 + sp.shape.reach());
            }
        }
    }
}
