mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::{GrayImage, Luma};
use mavfi::io::{
    decode_flo, encode_flo, read_archive, read_flo, read_image, write_archive, write_flo, write_image,
    CheckpointArchive, RunConfig, FLO_TAG,
};
use mavfi::model::{init_params, layout, InitMode, ModelConfig, ParameterStore};
use mavfi::ops::{FlowField, Frame};
use mavfi::train::{checkpoint_load, checkpoint_save, Checkpoint};
use mavfi::{Error, Tensor};
use proptest::prelude::*;

fn small_checkpoint(seed: u64) -> Checkpoint {
    let model = ModelConfig::desk(0.0625);
    Checkpoint { params: init_params(&model, seed, InitMode::Random).unwrap(), model, step: 12, optimizer: None }
}

#[test]
fn image_round_trip_is_within_quantisation() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(1);
    let f = Frame::new(common::random_tensor(&mut r, &[3, 9, 13], 0.0, 1.0).cast::<f32>()).unwrap();
    let p = dir.path().join("f.png");
    write_image(&f, &p).unwrap();
    let back = read_image(&p).unwrap();
    assert_eq!((back.height(), back.width()), (9, 13));
    assert!(f.tensor().max_abs_diff(back.tensor()) <= 1.0 / 255.0);
}

#[test]
fn grayscale_is_promoted_to_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("g.png");
    GrayImage::from_fn(4, 3, |x, y| Luma([(40 * x + 17 * y) as u8])).save(&p).unwrap();
    let f = read_image(&p).unwrap();
    for y in 0..3 {
        for x in 0..4 {
            let v = (40 * x + 17 * y) as f32 / 255.0;
            for c in 0..3 {
                assert_eq!(f.tensor().at(c, y, x), v);
            }
        }
    }
}

#[test]
fn truncated_or_missing_image_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.png");
    write_image(&Frame::filled(8, 8, 0.5), &p).unwrap();
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(read_image(&p), Err(Error::Format { .. })));
    assert!(matches!(read_image(&dir.path().join("none.png")), Err(Error::Io { .. })));
}

#[test]
fn flo_header_layout_for_three_by_two() {
    let flow = FlowField::new(Tensor::from_fn(&[2, 2, 3], |i| i as f32 - 4.5)).unwrap();
    let bytes = encode_flo(&flow);
    assert_eq!(bytes.len(), 4 + 4 + 4 + 48);
    assert_eq!(bytes[..4], FLO_TAG.to_le_bytes());
    assert_eq!(bytes[..4], *b"PIEH");
    assert_eq!(bytes[4..8], 3i32.to_le_bytes());
    assert_eq!(bytes[8..12], 2i32.to_le_bytes());
    // First pixel is (u, v) = (t[0,0,0], t[1,0,0]).
    assert_eq!(bytes[12..16], (-4.5f32).to_le_bytes());
    assert_eq!(bytes[16..20], (1.5f32).to_le_bytes());
}

#[test]
fn flo_rejects_bad_tags_and_sizes() {
    let p = Path::new("x.flo");
    let mut bytes = encode_flo(&FlowField::<f32>::constant(2, 3, 1.0, 2.0));
    let mut be = bytes.clone();
    be[..4].copy_from_slice(&FLO_TAG.to_be_bytes());
    let err = decode_flo(&be, p).unwrap_err().to_string();
    assert!(err.contains("not a flow file"), "{err}");
    bytes.pop();
    let err = decode_flo(&bytes, p).unwrap_err().to_string();
    assert!(err.contains("corrupt"), "{err}");
    assert!(decode_flo(&bytes[..8], p).is_err());
}

#[test]
fn flo_files_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.flo");
    let flow = FlowField::new(Tensor::from_fn(&[2, 5, 4], |i| (i as f32).sin() * 7.0)).unwrap();
    write_flo(&flow, &p).unwrap();
    assert_eq!(read_flo(&p).unwrap(), flow);
}

#[test]
fn checkpoint_arrays_match_parameter_names() {
    let ck = small_checkpoint(1);
    let archive = ck.to_archive();
    let stored: Vec<&String> = archive.arrays.keys().collect();
    let names: Vec<&String> = ck.params.names().collect();
    assert_eq!(stored, names);
    let mut from_layout: Vec<String> = layout(&ck.model).into_iter().map(|s| s.name).collect();
    from_layout.sort();
    assert_eq!(stored.into_iter().cloned().collect::<Vec<_>>(), from_layout);
}

#[test]
fn checkpoint_double_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ck = small_checkpoint(2);
    checkpoint_save(&ck, &a).unwrap();
    let loaded = checkpoint_load(&a).unwrap();
    assert_eq!(loaded, ck);
    checkpoint_save(&loaded, &b).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn checkpoint_for_another_model_is_refused() {
    let ck = small_checkpoint(3);
    let mut other = ck.model.clone();
    other.use_frame_features = !other.use_frame_features;
    let err = ck.params_for(&other).unwrap_err().to_string();
    assert!(err.contains("shape mismatch") || err.contains("fingerprint"), "{err}");
    let mut bigger = ck.model.clone();
    bigger.width_multiplier = 0.125;
    bigger.channels = ModelConfig::desk(0.125).channels;
    let err = ck.params_for(&bigger).unwrap_err().to_string();
    assert!(err.contains("`pfm.0.conv0.weight`"), "{err}");
    ck.params_for(&ck.model).unwrap();
}

#[test]
fn tampered_manifest_fingerprint_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ckpt");
    let mut archive = small_checkpoint(4).to_archive();
    archive.manifest.fingerprint = "0000000000000000".into();
    write_archive(&archive, &p).unwrap();
    let err = read_archive::<f32>(&p).unwrap_err().to_string();
    assert!(err.contains("fingerprint"), "{err}");
    assert!(checkpoint_load(&p).is_err());
}

#[test]
fn checkpoint_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.ckpt");
    let bytes = small_checkpoint(5).to_archive().encode();
    fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(checkpoint_load(&p), Err(Error::Format { .. })));
    fs::write(&p, b"hello").unwrap();
    assert!(checkpoint_load(&p).unwrap_err().to_string().contains("not a checkpoint"));
    let mut archive = small_checkpoint(5).to_archive();
    archive.manifest.format_version = 9;
    write_archive(&archive, &p).unwrap();
    assert!(checkpoint_load(&p).unwrap_err().to_string().contains("unsupported checkpoint format version 9"));
    assert!(read_archive::<f64>(&dir.path().join("missing")).is_err());
}

#[test]
fn run_config_round_trips_and_rejects_unknown_keys() {
    let cfg = RunConfig::default();
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    let err = RunConfig::parse("[train]\nepohcs = 3\n").unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(err.to_string().contains("epohcs"), "{err}");
}

fn flow_strategy() -> impl Strategy<Value = FlowField<f32>> {
    (1usize..7, 1usize..7).prop_flat_map(|(h, w)| {
        prop::collection::vec(-1e4f32..1e4, 2 * h * w)
            .prop_map(move |d| FlowField::new(Tensor::from_vec(&[2, h, w], d).unwrap()).unwrap())
    })
}

fn arrays_strategy() -> impl Strategy<Value = BTreeMap<String, Tensor<f32>>> {
    prop::collection::btree_map(
        "[a-z]{1,6}(\\.[a-z0-9]{1,4})?",
        (1usize..4, 1usize..5).prop_flat_map(|(a, b)| {
            prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO, a * b)
                .prop_map(move |d| Tensor::from_vec(&[a, b], d).unwrap())
        }),
        0..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn flo_round_trip_is_bit_exact(flow in flow_strategy()) {
        let bytes = encode_flo(&flow);
        let back = decode_flo(&bytes, Path::new("p.flo")).unwrap();
        prop_assert_eq!(encode_flo(&back), bytes);
        for (a, b) in flow.tensor().data().iter().zip(back.tensor().data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn archive_round_trip_is_lossless(arrays in arrays_strategy(), step in 0u64..1_000_000) {
        let archive = CheckpointArchive::new(&ModelConfig::desk(0.0625), step, arrays);
        let bytes = archive.encode();
        let back = CheckpointArchive::<f32>::decode(&bytes, Path::new("p.ckpt")).unwrap();
        prop_assert_eq!(back.encode(), bytes);
        prop_assert_eq!(back.manifest.step, step);
        prop_assert_eq!(back.arrays.len(), archive.arrays.len());
        for (k, t) in &archive.arrays {
            let u = &back.arrays[k];
            prop_assert_eq!(t.shape(), u.shape());
            prop_assert!(t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn image_round_trip_bound_holds(seed in any::<u64>(), h in 1usize..9, w in 1usize..9) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.png");
        let mut r = common::rng(seed);
        let f = Frame::new(common::random_tensor(&mut r, &[3, h, w], 0.0, 1.0).cast::<f32>()).unwrap();
        write_image(&f, &p).unwrap();
        prop_assert!(f.tensor().max_abs_diff(read_image(&p).unwrap().tensor()) <= 1.0 / 255.0);
    }
}

#[test]
fn f64_parameters_survive_archiving() {
    let model = ModelConfig::desk(0.0625);
    let p: ParameterStore<f64> = init_params(&model, 9, InitMode::Random).unwrap();
    let arrays = p.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let archive = CheckpointArchive::new(&model, 0, arrays);
    let back = CheckpointArchive::<f64>::decode(&archive.encode(), Path::new("d")).unwrap();
    assert_eq!(ParameterStore::from_arrays(back.arrays), p);
    assert!(CheckpointArchive::<f32>::decode(&archive.encode(), Path::new("d")).is_err());
}
