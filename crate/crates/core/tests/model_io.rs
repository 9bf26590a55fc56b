mod common;

use common::*;
use proptest::prelude::*;
use sparse_repair::io::{self, TnsData};
use sparse_repair::{evaluate, predict, Allocation, Error, Tensor};

fn bits(t: &Tensor) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn assert_bit_identical(a: &sparse_repair::Model, b: &sparse_repair::Model) {
    assert_eq!(a.graph, b.graph);
    assert_eq!(a.weights.keys().collect::<Vec<_>>(), b.weights.keys().collect::<Vec<_>>());
    for (name, t) in &a.weights {
        assert_eq!(t.dims(), b.weights[name].dims(), "{name}");
        assert_eq!(bits(t), bits(&b.weights[name]), "{name}");
    }
}

#[test]
fn save_load_round_trip_through_a_file() {
    let m = small_resnet(3, 3, 4, 8, 5);
    let (pruned, _) = sparse_repair::allocate::prune(&m, Allocation::Lamp, 0.7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.spm");
    io::save_model(&pruned, &path).unwrap();
    let back = io::load_model(&path).unwrap();
    assert_bit_identical(&pruned, &back);
    assert!(back.mask("conv2.weight").is_some());
    assert_eq!(io::encode_model(&back).unwrap(), std::fs::read(&path).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encode_decode_is_bit_identical(seed in 0u64..10_000, width in 1usize..6, classes in 1usize..6) {
        let mut m = small_resnet(seed, 2, width, 4, classes);
        // Exercise special values that a textual round trip would mangle.
        let w = m.tensor_mut("conv1.weight").unwrap().data_mut();
        w[0] = -0.0;
        w[1] = f32::MIN_POSITIVE / 2.0;
        w[2] = f32::MAX;
        let back = io::decode_model(&io::encode_model(&m).unwrap()).unwrap();
        assert_bit_identical(&m, &back);
    }

    #[test]
    fn tns_round_trip(dims in proptest::collection::vec(1usize..5, 1..5), seed in 0u64..1000) {
        let t = random_tensor(&mut rng(seed), dims.clone(), 3.0);
        let back = io::decode_tns(&io::encode_tns(&TnsData::F32(t.clone()))).unwrap().into_f32().unwrap();
        prop_assert_eq!(bits(&back), bits(&t));
        prop_assert_eq!(back.dims(), &dims[..]);
        let n: usize = dims.iter().product();
        let labels: Vec<u32> = (0..n as u32).map(|i| i.wrapping_mul(2_654_435_761)).collect();
        let u = TnsData::U32 { dims: dims.clone(), data: labels.clone() };
        prop_assert_eq!(io::decode_tns(&io::encode_tns(&u)).unwrap(), u);
    }
}

#[test]
fn manifest_naming_an_absent_tensor_is_rejected_by_name() {
    let m = small_resnet(4, 3, 4, 8, 3);
    let mut bytes = io::encode_model(&m).unwrap();
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let manifest = std::str::from_utf8(&bytes[16..16 + len]).unwrap().to_string();
    // Same length, so blob offsets stay valid.
    let renamed = manifest.replacen("\"conv2.weight\"", "\"conv2.weighX\"", 1);
    assert_eq!(renamed.len(), manifest.len());
    bytes[16..16 + len].copy_from_slice(renamed.as_bytes());
    match io::decode_model(&bytes) {
        Err(Error::MissingTensor(name)) => assert!(name == "conv2.weight" || name == "conv2.weighX", "{name}"),
        other => panic!("expected a missing-tensor error, got {other:?}"),
    }
}

#[test]
fn malformed_model_files_report_byte_offsets() {
    let m = small_resnet(5, 3, 4, 8, 3);
    let bytes = io::encode_model(&m).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(io::decode_model(&bad_magic), Err(Error::Load { offset: 0, .. })));

    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(io::decode_model(truncated), Err(Error::Load { .. })));

    assert!(matches!(io::decode_model(&bytes[..12]), Err(Error::Load { .. })));
}

#[test]
fn empty_graph_and_zero_extent_tensors_are_rejected() {
    let m = small_resnet(6, 3, 4, 8, 3);
    let mut empty = m.clone();
    empty.graph.nodes.clear();
    assert!(io::encode_model(&empty).and_then(|b| io::decode_model(&b)).is_err());

    assert!(Tensor::new(vec![0, 3], vec![]).is_err());
    let zero = TnsData::F32(Tensor::zeros(vec![2]).unwrap());
    let mut bytes = io::encode_tns(&zero);
    // Overwrite the single dimension with 0.
    bytes[12..20].copy_from_slice(&0u64.to_le_bytes());
    bytes.truncate(20);
    assert!(io::decode_tns(&bytes).is_err());
}

#[test]
fn truncated_tns_payload_is_reported() {
    let t = TnsData::F32(Tensor::zeros(vec![2, 3]).unwrap());
    let bytes = io::encode_tns(&t);
    let err = io::decode_tns(&bytes[..bytes.len() - 4]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("20") && msg.contains("24"), "{msg}");
}

#[test]
fn images_and_labels_must_pair() {
    let images = random_images(1, 4, &[1, 2, 2]);
    assert!(io::check_pairing(&images, &[0, 1, 2, 3]).is_ok());
    assert!(matches!(io::check_pairing(&images, &[0, 1, 2]), Err(Error::InvalidArgument(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    io::save_tns(&TnsData::U32 { dims: vec![4], data: vec![0; 4] }, &path).unwrap();
    assert!(io::load_images(&path).is_err());
    assert_eq!(io::load_labels(&path).unwrap(), vec![0; 4]);
}

#[test]
fn fixture_matches_its_sidecar() {
    let f = fixture();
    let acc = evaluate(&f.model, &f.test_images, &f.test_labels, 250).unwrap();
    let recorded = f.sidecar["recorded_accuracy"].as_f64().unwrap();
    assert!((acc - recorded).abs() <= 0.2, "engine {acc} vs recorded {recorded}");
    assert_eq!(f.test_labels.len() as u64, f.sidecar["test_count"].as_u64().unwrap());
    assert_eq!(f.calib.batch() as u64, f.sidecar["calib_count"].as_u64().unwrap());
}

#[test]
fn fixture_probe_logits_replay() {
    let d = fixture_dir();
    let f = fixture();
    let inputs = io::load_images(d.join("probe_inputs.tns")).unwrap();
    let want = io::load_tns(d.join("probe_logits.tns")).unwrap().into_f32().unwrap();
    let got = predict(&f.model, &inputs).unwrap();
    assert_eq!(got.dims(), want.dims());
    for (g, w) in got.data().iter().zip(want.data()) {
        assert!((g - w).abs() <= 1e-3, "{g} vs {w}");
    }
}
