use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vitse::checkpoint::{Checkpoint, CheckpointError, StoredTensor, MAGIC};
use vitse_core::{ModelParams, Tensor, TrainConfig, ViTConfig};

fn sample(se: bool, seed: u64) -> Checkpoint {
    let model = ViTConfig::toy();
    let train = TrainConfig { rng_seed: seed, ..TrainConfig::toy(&model) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::<Tensor<f32>>::init(&model, se, &mut rng).unwrap();
    Checkpoint::from_params(&model, &train, &params, 17)
}

/// Byte offset of the first occurrence of `needle`.
fn find(bytes: &[u8], needle: &[u8]) -> usize {
    bytes.windows(needle.len()).position(|w| w == needle).unwrap()
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for se in [true, false] {
        let ckpt = sample(se, 3);
        let a = dir.path().join("a.vse");
        let b = dir.path().join("b.vse");
        ckpt.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ckpt);
        loaded.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.rng_seed, 3);
        assert_eq!(loaded.train.se_enabled, se);
    }
}

#[test]
fn loaded_parameters_equal_the_saved_ones() {
    let model = ViTConfig::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParams::<Tensor<f32>>::init(&model, true, &mut rng).unwrap();
    let ckpt = Checkpoint::from_params(&model, &TrainConfig::toy(&model), &params, 0);
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap().params().unwrap();
    assert_eq!(back, params);
}

#[test]
fn header_layout() {
    let bytes = sample(true, 0).to_bytes();
    assert_eq!(&bytes[..4], b"VSE1");
    assert_eq!(&bytes[..4], &MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()), 17);
}

#[test]
fn truncation_by_one_byte_is_reported() {
    let bytes = sample(true, 0).to_bytes();
    let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
    assert!(matches!(err, CheckpointError::Truncated(_)), "{err}");
}

#[test]
fn trailing_bytes_are_reported() {
    let mut bytes = sample(true, 0).to_bytes();
    bytes.push(0);
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::TrailingBytes(1))));
}

#[test]
fn bad_magic_and_version() {
    let bytes = sample(true, 0).to_bytes();
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&magic), Err(CheckpointError::BadMagic)));
    assert!(matches!(Checkpoint::from_bytes(b"VS"), Err(CheckpointError::BadMagic)));
    let mut version = bytes;
    version[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&version), Err(CheckpointError::BadVersion(2))));
}

#[test]
fn renamed_tensor_names_the_missing_one() {
    let mut bytes = sample(true, 0).to_bytes();
    let at = find(&bytes, b"se.expand.weight");
    bytes[at] = b'x';
    match Checkpoint::from_bytes(&bytes) {
        Err(CheckpointError::MissingTensor(name)) => assert_eq!(name, "se.expand.weight"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn table_violations_have_distinct_errors() {
    let base = sample(true, 0);

    let mut extra = base.clone();
    extra.tensors.push(("stray".into(), StoredTensor::F32(Tensor::zeros(&[2]))));
    assert!(matches!(
        Checkpoint::from_bytes(&extra.to_bytes()),
        Err(CheckpointError::UnexpectedTensor(n)) if n == "stray"
    ));

    let mut dup = base.clone();
    let first = dup.tensors[0].clone();
    dup.tensors.push(first.clone());
    assert!(matches!(
        Checkpoint::from_bytes(&dup.to_bytes()),
        Err(CheckpointError::DuplicateTensor(n)) if n == first.0
    ));

    let mut shape = base.clone();
    shape.tensors[0].1 = StoredTensor::F32(Tensor::zeros(&[1, 1]));
    assert!(matches!(Checkpoint::from_bytes(&shape.to_bytes()), Err(CheckpointError::Shape { .. })));

    let mut gate_off = base.clone();
    gate_off.train.se_enabled = false;
    assert!(matches!(
        Checkpoint::from_bytes(&gate_off.to_bytes()),
        Err(CheckpointError::UnexpectedTensor(n)) if n.starts_with("se.")
    ));

    let mut dtype = base.to_bytes();
    let name = base.tensors[0].0.as_bytes();
    let at = find(&dtype, name) + name.len();
    dtype[at] = 9;
    assert!(matches!(Checkpoint::from_bytes(&dtype), Err(CheckpointError::DType(9))));

    let mut config = base.to_bytes();
    let at = find(&config, b"embed_dim");
    config[at] = b'x';
    assert!(matches!(Checkpoint::from_bytes(&config), Err(CheckpointError::Config(_))));
}

#[test]
fn f64_tensors_load_and_narrow() {
    let mut ckpt = sample(false, 1);
    let (_, t) = &ckpt.tensors[0];
    let wide: Tensor<f64> = t.to_f32().cast();
    ckpt.tensors[0].1 = StoredTensor::F64(wide);
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.params().unwrap(), sample(false, 1).params().unwrap());
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = Checkpoint::load(&dir.path().join("absent.vse")).unwrap_err();
    assert!(matches!(err, CheckpointError::Io { .. }));
    assert!(err.to_string().contains("absent.vse"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn corrupted_bytes_never_load_an_invalid_model(at in any::<prop::sample::Index>(), byte: u8, cut in any::<prop::sample::Index>()) {
        let bytes = sample(true, 2).to_bytes();
        let mut mutated = bytes.clone();
        mutated[at.index(bytes.len())] = byte;
        mutated.truncate(cut.index(bytes.len() + 1).max(at.index(bytes.len()) + 1));
        if let Ok(ckpt) = Checkpoint::from_bytes(&mutated) {
            let params = ckpt.params().unwrap();
            let expected = ModelParams::<Tensor<f32>>::expected_inventory(&ckpt.model, ckpt.train.se_enabled).unwrap();
            let mut found = Vec::new();
            params.visit(&mut |name, t| found.push((name.to_string(), t.shape().to_vec())));
            prop_assert_eq!(found, expected);
        }
    }
}
