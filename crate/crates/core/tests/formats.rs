use std::fs;

use msvae::model::{Arch, DecoderMode, ModelParams};
use msvae::synthdata::{generate_dataset, load_dataset, save_dataset, SynthConfig, AUDIO_FILE, LABELS_FILE, MANIFEST_FILE};
use msvae::trainer::{load_checkpoint, save_checkpoint, HEADER_FILE, PARAMS_FILE};
use msvae::Error;

fn small() -> SynthConfig {
    SynthConfig {
        num_videos: 9,
        ..SynthConfig::default()
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = generate_dataset(&small()).unwrap();
    save_dataset(&ds, tmp.path()).unwrap();
    let back = load_dataset(tmp.path()).unwrap();
    assert_eq!(back.videos, ds.videos);
    assert_eq!(back.manifest, ds.manifest);
}

#[test]
fn truncated_features_are_corrupt() {
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(&generate_dataset(&small()).unwrap(), tmp.path()).unwrap();
    let p = tmp.path().join(AUDIO_FILE);
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
    match load_dataset(tmp.path()) {
        Err(e @ Error::Corrupt { .. }) => {
            assert!(e.to_string().contains(AUDIO_FILE));
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected corrupt error, got {other:?}"),
    }
}

#[test]
fn invalid_labels_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    save_dataset(&generate_dataset(&small()).unwrap(), tmp.path()).unwrap();
    let p = tmp.path().join(LABELS_FILE);
    let mut labels: serde_json::Value = msvae::binio::read_json(&p).unwrap();
    labels[0]["event_end"] = serde_json::json!(11);
    msvae::binio::write_json(&p, &labels).unwrap();
    assert!(matches!(load_dataset(tmp.path()), Err(Error::Format { .. })));

    fs::write(tmp.path().join(MANIFEST_FILE), "{not json").unwrap();
    assert!(matches!(load_dataset(tmp.path()), Err(Error::Format { .. })));
}

fn model(mode: DecoderMode) -> ModelParams {
    ModelParams::init(Arch::new(3, 4).with_latent_dim(2), mode, 5).unwrap()
}

#[test]
fn checkpoint_round_trip_rounds_to_f32() {
    for mode in [DecoderMode::Shared, DecoderMode::Separate] {
        let tmp = tempfile::tempdir().unwrap();
        let m = model(mode);
        save_checkpoint(&m, tmp.path(), 5, serde_json::json!({"note": 1})).unwrap();
        let back = load_checkpoint(tmp.path()).unwrap();
        assert_eq!(back.mode(), mode);
        for (a, b) in back.to_tape().params().iter().zip(m.to_tape().params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}

#[test]
fn unknown_header_fields_ignored() {
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&model(DecoderMode::Shared), tmp.path(), 5, serde_json::Value::Null).unwrap();
    let p = tmp.path().join(HEADER_FILE);
    let mut h: serde_json::Value = msvae::binio::read_json(&p).unwrap();
    h["written_by"] = serde_json::json!("someone else");
    msvae::binio::write_json(&p, &h).unwrap();
    assert!(load_checkpoint(tmp.path()).is_ok());

    h["decoder_mode"] = serde_json::json!("tied");
    msvae::binio::write_json(&p, &h).unwrap();
    assert!(matches!(load_checkpoint(tmp.path()), Err(Error::Format { .. })));
}

#[test]
fn damaged_checkpoint_payload_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    save_checkpoint(&model(DecoderMode::Shared), tmp.path(), 5, serde_json::Value::Null).unwrap();
    let p = tmp.path().join(PARAMS_FILE);
    let bytes = fs::read(&p).unwrap();
    fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(load_checkpoint(tmp.path()), Err(Error::Corrupt { .. })));

    fs::write(&p, &bytes).unwrap();
    let hp = tmp.path().join(HEADER_FILE);
    let mut h: serde_json::Value = msvae::binio::read_json(&hp).unwrap();
    h["manifest"][0]["shape"] = serde_json::json!([1, 1]);
    msvae::binio::write_json(&hp, &h).unwrap();
    assert!(load_checkpoint(tmp.path()).is_err());
}
