mod common;

use objectalign::feature::{load_video, read_video, save_video, write_video, BinaryMask, BitMatrix, FeatureError};
use objectalign::harness::{clean_video, SyntheticConfig};
use objectalign::metrics::mask_iou;
use objectalign::Frame;
use proptest::prelude::*;

fn bit_matrix() -> impl Strategy<Value = BitMatrix> {
    (0usize..=64, 0usize..=64, 0.0f64..=1.0).prop_flat_map(|(h, w, density)| {
        proptest::collection::vec(proptest::bool::weighted(density.clamp(0.0, 1.0)), h * w)
            .prop_map(move |bits| BitMatrix::from_bits(h, w, bits))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn rle_round_trip(m in bit_matrix()) {
        let mask = BinaryMask::encode(&m);
        prop_assert!(mask.validate().is_ok());
        prop_assert_eq!(mask.rle.iter().sum::<usize>(), m.bits().len());
        prop_assert_eq!(mask.decode().unwrap(), m.clone());
        prop_assert_eq!(mask.count_ones(), m.count_ones());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn run_iou_matches_dense(
        (a, b) in (1usize..=48, 1usize..=48).prop_flat_map(|(h, w)| {
            let side = move || proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |bits| BitMatrix::from_bits(h, w, bits));
            (side(), side())
        })
    ) {
        let iou: f64 = mask_iou(&BinaryMask::encode(&a), &BinaryMask::encode(&b)).unwrap();
        prop_assert_eq!(iou, common::dense_iou(&a, &b));
        prop_assert!((0.0..=1.0).contains(&iou));
    }
}

#[test]
fn first_run_counts_zeros() {
    let m = BitMatrix::from_bits(1, 4, vec![true, true, false, true]);
    assert_eq!(BinaryMask::encode(&m).rle, vec![0, 2, 1, 1]);
    let bad = BinaryMask {
        height: 2,
        width: 2,
        rle: vec![1, 2],
    };
    assert!(matches!(bad.decode(), Err(FeatureError::MaskLength { sum: 3, expected: 4, .. })));
}

#[test]
fn jsonl_round_trip_is_exact() {
    let video = clean_video(&SyntheticConfig::with_frames(12), 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.jsonl");
    save_video(&path, &video).unwrap();
    let back: Vec<Frame> = load_video(&path).unwrap();
    assert_eq!(back, video);
}

#[test]
fn schema_field_names() {
    let video = clean_video(&SyntheticConfig::with_frames(2), 5);
    let mut buf = Vec::new();
    write_video(&mut buf, &video).unwrap();
    let first: serde_json::Value = serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
    let mut keys: Vec<_> = first.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(keys, ["clip", "clip_bg", "clip_fg", "frame", "hist", "lpips_feat", "mask", "props"]);
    let mut mask_keys: Vec<_> = first["mask"].as_object().unwrap().keys().cloned().collect();
    mask_keys.sort();
    assert_eq!(mask_keys, ["h", "rle", "w"]);
}

#[test]
fn image_path_passes_through() {
    let line = r#"{"frame":0,"clip":[1.0],"clip_fg":[0.5],"clip_bg":[0.5],"lpips_feat":[0.0],"hist":[1.0],"mask":{"h":1,"w":1,"rle":[1]},"props":{},"image_path":"frames/0000.png"}"#;
    let v: Vec<Frame> = read_video(line.as_bytes()).unwrap();
    assert_eq!(v[0].image_path.as_deref(), Some("frames/0000.png"));
}

#[test]
fn load_errors_name_the_problem() {
    let video = clean_video(&SyntheticConfig::with_frames(3), 1);
    let mut buf = Vec::new();
    write_video(&mut buf, &video).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();

    let gap = format!("{}\n{}\n", lines[0], lines[2]);
    let err = read_video::<f64, _>(gap.as_bytes()).unwrap_err();
    assert_eq!(err.to_string(), "missing frame 1");

    let broken = format!("{}\n{{\"frame\": 1\n", lines[0]);
    assert!(matches!(
        read_video::<f64, _>(broken.as_bytes()),
        Err(FeatureError::Malformed { line: 2, .. })
    ));

    let unnormalized = lines[0].replacen("\"hist\":[", "\"hist\":[5.0,", 1);
    let err = read_video::<f64, _>(unnormalized.as_bytes()).unwrap_err().to_string();
    assert!(err.contains("hist"), "{err}");

    assert!(matches!(read_video::<f64, _>("".as_bytes()), Err(FeatureError::Empty)));
}

#[test]
fn single_precision_reads_the_same_files() {
    let video = clean_video(&SyntheticConfig::with_frames(4), 8);
    let mut buf = Vec::new();
    write_video(&mut buf, &video).unwrap();
    let v32: Vec<objectalign::Frame32> = read_video(buf.as_slice()).unwrap();
    assert_eq!(v32.len(), 4);
    assert_eq!(v32[2].clip_embedding[0], video[2].clip_embedding[0] as f32);
}
