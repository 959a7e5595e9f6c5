use ducknet::blocks::BlockKind;
use ducknet::net::{Checkpoint, DuckNet, NetSpec};
use ducknet::{Error, Mode, Shape4, Tensor4};

fn tiny(block: BlockKind) -> NetSpec {
    NetSpec::new(2, (16, 16)).with_depth(2).with_block(block)
}

fn probe() -> Tensor4<f32> {
    let shape = Shape4::new(1, 3, 16, 16);
    let data = (0..shape.len()).map(|i| ((i * 37) % 101) as f32 / 101.0).collect();
    Tensor4::from_vec(shape, data).unwrap()
}

#[test]
fn round_trip_preserves_predictions_and_bytes() {
    let mut net = DuckNet::<f32>::new(tiny(BlockKind::Duck), 7).unwrap();
    let ckpt = Checkpoint::capture(&mut net);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ckpt.to_bytes());
    let mut back = loaded.to_network::<f32>().unwrap();
    let a = net.forward(&probe(), Mode::Infer).unwrap();
    let b = back.forward(&probe(), Mode::Infer).unwrap();
    assert_eq!(a.data(), b.data());
    assert_eq!(back.spec(), net.spec());
}

#[test]
fn every_truncation_is_rejected() {
    let mut net = DuckNet::<f32>::new(tiny(BlockKind::SimpleDouble), 1).unwrap();
    let bytes = Checkpoint::capture(&mut net).to_bytes();
    for cut in [0, 10, bytes.len() / 2, bytes.len() - 1] {
        let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)), "cut {cut}: {err}");
    }
    let mut longer = bytes.clone();
    longer.extend_from_slice(&[0; 4]);
    assert!(Checkpoint::from_bytes(&longer).is_err());
}

#[test]
fn foreign_files_are_rejected() {
    let err = Checkpoint::from_bytes(b"P5\n2 2\n255\n\n\x00\x00\x00\x00").unwrap_err();
    assert!(err.to_string().contains("not a checkpoint"), "{err}");
    let dir = tempfile::tempdir().unwrap();
    let err = Checkpoint::load(&dir.path().join("missing.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}

#[test]
fn restoring_into_a_different_architecture_fails() {
    let mut small = DuckNet::<f32>::new(tiny(BlockKind::Duck), 0).unwrap();
    let ckpt = Checkpoint::capture(&mut small);
    let mut other = DuckNet::<f32>::new(tiny(BlockKind::SimpleDouble), 0).unwrap();
    let err = ckpt.restore(&mut other).unwrap_err();
    assert!(err.to_string().contains("architecture mismatch"), "{err}");
    let mut wider = DuckNet::<f32>::new(NetSpec::new(3, (16, 16)).with_depth(2), 0).unwrap();
    assert!(ckpt.restore(&mut wider).is_err());
}

#[test]
fn edited_manifest_shapes_are_caught() {
    let mut net = DuckNet::<f32>::new(tiny(BlockKind::Duck), 0).unwrap();
    let mut ckpt = Checkpoint::capture(&mut net);
    ckpt.entries.pop();
    let err = ckpt.restore(&mut net).unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
}
