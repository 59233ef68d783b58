use semtrack::checkpoint::{self, Checkpoint};
use semtrack::experiments::{held_out_crops, stored_sequence, synth_run};
use semtrack::formats::{
    read_crop_dir, read_model, read_motion, write_crop, write_model, write_motion,
};
use semtrack::seqio::{read_sequence, sequence_digest, write_sequence};
use semtrack_core::fcn::{NetworkParams, NetworkSpec};
use semtrack_core::synth::MotionKind;

fn close(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn sequence_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let run = synth_run(3, MotionKind::ArmSwing, 4, 4.5).unwrap();
    let stored = stored_sequence(&run, serde_json::json!({ "test": true }));
    write_sequence(dir.path(), &stored).unwrap();
    let back = read_sequence(dir.path()).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(back.labels, stored.labels);
    assert_eq!(back.joint_names, stored.joint_names);
    assert_eq!(back.joints, stored.joints);
    assert_eq!(back.poses, stored.poses);
    for (a, b) in back.frames.iter().zip(&stored.frames) {
        assert_eq!(a.intrinsics, b.intrinsics);
        assert!(close(&a.depth, &b.depth, 0.0005 + 1e-6));
        let ca: Vec<f32> = a.color.iter().flatten().copied().collect();
        let cb: Vec<f32> = b.color.iter().flatten().copied().collect();
        assert!(close(&ca, &cb, 0.5 / 255.0 + 1e-6));
    }

    let d0 = sequence_digest(dir.path()).unwrap();
    assert_eq!(d0, sequence_digest(dir.path()).unwrap());
    let p = semtrack::seqio::depth_path(dir.path(), 2);
    let mut bytes = std::fs::read(&p).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    std::fs::write(&p, bytes).unwrap();
    assert_ne!(d0, sequence_digest(dir.path()).unwrap());
}

#[test]
fn missing_frame_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let run = synth_run(4, MotionKind::Static, 3, 4.5).unwrap();
    write_sequence(dir.path(), &stored_sequence(&run, serde_json::Value::Null)).unwrap();
    std::fs::remove_file(semtrack::seqio::color_path(dir.path(), 1)).unwrap();
    assert!(read_sequence(dir.path()).is_err());
}

#[test]
fn model_and_motion_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let run = synth_run(5, MotionKind::Walk, 2, 4.5).unwrap();
    let stem = dir.path().join("model");
    write_model(&stem, &run.subject.model).unwrap();
    assert_eq!(read_model(&stem).unwrap(), run.subject.model);

    let mp = dir.path().join("motion.json");
    write_motion(&mp, &run.script).unwrap();
    assert_eq!(read_motion(&mp).unwrap(), run.script);
}

#[test]
fn tampered_model_block_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = synth_run(6, MotionKind::Static, 1, 4.5).unwrap();
    let stem = dir.path().join("model");
    write_model(&stem, &run.subject.model).unwrap();
    let bin = dir.path().join("model.bin");
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[20] ^= 0x40;
    std::fs::write(&bin, bytes).unwrap();
    assert!(read_model(&stem).is_err());
}

#[test]
fn crops_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let crops = held_out_crops();
    for c in &crops {
        write_crop(dir.path(), c).unwrap();
    }
    let mut back = read_crop_dir(dir.path()).unwrap();
    back.sort_by(|a, b| a.name.cmp(&b.name));
    let mut want = crops.clone();
    want.sort_by(|a, b| a.name.cmp(&b.name));
    assert_eq!(back.len(), want.len());
    for (a, b) in back.iter().zip(&want) {
        assert_eq!((a.width, a.height, &a.name), (b.width, b.height, &b.name));
        assert!(close(&a.depth, &b.depth, 0.0005 + 1e-6));
        assert_eq!(
            a.depth.iter().map(|d| *d == 0.0).collect::<Vec<_>>(),
            b.depth.iter().map(|d| *d == 0.0).collect::<Vec<_>>()
        );
    }
}

#[test]
fn checkpoint_round_trip_and_architecture_guard() {
    let dir = tempfile::tempdir().unwrap();
    let spec = NetworkSpec::encoder_decoder((14, 16), 4, [3, 4, 5, 6], 7);
    let params = NetworkParams::<f32>::he_init(&spec, 2);
    let path = dir.path().join("net.ffcn");
    checkpoint::save(
        &path,
        &Checkpoint::new(&spec, &params, serde_json::json!({ "note": "mini" })),
    )
    .unwrap();
    let ck = checkpoint::load(&path).unwrap();
    assert_eq!(ck.params_for(&spec).unwrap(), params);
    assert_eq!(ck.metadata["note"], "mini");
    assert!(ck.params_for(&NetworkSpec::fast_fcn()).is_err());

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[60] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(checkpoint::load(&path).is_err());
}
