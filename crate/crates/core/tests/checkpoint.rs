mod common;

use avsplat::checkpoint::CHECKPOINT_MAGIC;
use avsplat::{Checkpoint, GaussianSet, SourceTag, SplatError, CHECKPOINT_VERSION};
use common::*;
use rand::Rng;

fn random_checkpoint(seed: u64) -> (Checkpoint, GaussianSet) {
    let mut r = rng(seed);
    let mut set = random_set(&mut r, 57, 1);
    for (i, t) in set.tags.iter_mut().enumerate() {
        if i % 3 == 0 {
            *t = SourceTag::Face;
        }
    }
    // awkward values must survive too
    set.primitives[0].opacity_logit = f64::MIN_POSITIVE / 4.0;
    set.primitives[1].mean.x = -0.0;
    set.primitives[2].color[5] = f64::MAX;
    let mut ck = Checkpoint::new(r.random());
    ck.put_gaussian_set("body", &set);
    ck.put_f64("decoder.weights", (0..300).map(|_| r.random_range(-1.0..1.0)).collect());
    ck.put_u64("misc", vec![u64::MAX, 0, 7]);
    (ck, set)
}

fn bits(set: &GaussianSet) -> Vec<u64> {
    let mut out = Vec::new();
    for g in &set.primitives {
        out.extend(g.mean.iter().chain(g.log_scale.iter()).map(|v| v.to_bits()));
        out.extend([g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k].map(f64::to_bits));
        out.push(g.opacity_logit.to_bits());
        out.extend(g.color.iter().map(|v| v.to_bits()));
    }
    out
}

#[test]
fn round_trip_through_file_is_bit_exact() {
    let (ck, set) = random_checkpoint(1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.step, ck.step);
    let loaded = back.gaussian_set("body").unwrap();
    assert_eq!(bits(&loaded), bits(&set));
    assert_eq!(loaded.tags, set.tags);
    let w0: Vec<u64> = ck.f64("decoder.weights").unwrap().iter().map(|v| v.to_bits()).collect();
    let w1: Vec<u64> = back.f64("decoder.weights").unwrap().iter().map(|v| v.to_bits()).collect();
    assert_eq!(w0, w1);
    assert_eq!(back.u64("misc").unwrap(), &[u64::MAX, 0, 7]);
    assert_eq!(back.to_bytes(), ck.to_bytes());
}

#[test]
fn nan_payloads_survive() {
    let mut ck = Checkpoint::new(0);
    let nan = f64::from_bits(0x7ff8_dead_beef_0001);
    ck.put_f64("x", vec![nan, f64::INFINITY]);
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back.f64("x").unwrap()[0].to_bits(), nan.to_bits());
}

#[test]
fn wrong_magic_is_a_format_error() {
    let (ck, _) = random_checkpoint(2);
    let mut bytes = ck.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bytes), Err(SplatError::Format(_))));
}

#[test]
fn future_version_reports_both_versions() {
    let (ck, _) = random_checkpoint(3);
    let mut bytes = ck.to_bytes();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    match Checkpoint::from_bytes(&bytes) {
        Err(e @ SplatError::Version { found, supported }) => {
            assert_eq!(found, CHECKPOINT_VERSION + 1);
            assert_eq!(supported, CHECKPOINT_VERSION);
            let msg = e.to_string();
            assert!(msg.contains(&found.to_string()) && msg.contains(&supported.to_string()));
        }
        other => panic!("expected version error, got {other:?}"),
    }
}

#[test]
fn every_truncation_is_detected() {
    let mut ck = Checkpoint::new(9);
    ck.put_f64("a", vec![1.0, 2.0]);
    ck.put_u64("b", vec![3]);
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..8], &CHECKPOINT_MAGIC);
    for len in 0..bytes.len() {
        let err = Checkpoint::from_bytes(&bytes[..len]).unwrap_err();
        assert!(matches!(err, SplatError::Truncated(_)), "len {len}: {err:?}");
    }
}

#[test]
fn missing_section_is_reported_by_name() {
    let ck = Checkpoint::new(0);
    match ck.gaussian_set("face") {
        Err(SplatError::MissingSection(name)) => assert!(name.starts_with("face.")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn io_failure_surfaces() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(Checkpoint::load(&dir.path().join("absent")), Err(SplatError::Io(_))));
}
