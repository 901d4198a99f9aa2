use meq_cli::checkpoint::{decode, encode, load, save, CheckpointError};
use meq_core::agent::NetShape;
use meq_core::trainer::{preset, Profile, Snapshot, Trainer};
use proptest::prelude::*;

fn trained(name: &str) -> Snapshot {
    let mut cfg = preset(name, Profile::Desk).unwrap();
    cfg.net = NetShape { hidden: [6, 5] };
    cfg.hyper.warmup_steps = 300;
    cfg.hyper.batch_size = 8;
    cfg.hyper.buffer_size = 2_000;
    cfg.total_steps = 700;
    cfg.eval_interval = 10_000;
    cfg.eval_episodes = 0;
    cfg.seed = 4;
    let mut t = Trainer::new(cfg).unwrap();
    t.run(&mut ()).unwrap();
    t.snapshot()
}

#[test]
fn save_load_save_is_byte_identical() {
    for name in ["small-td3", "large-sac-dynamic", "large-sac-static"] {
        let snap = trained(name);
        let first = encode(&snap);
        let back = decode(&first).unwrap();
        assert_eq!(encode(&back), first, "{name}");
        assert_eq!(back.agent.networks(), snap.agent.networks());
        assert_eq!(back.rngs, snap.rngs);
        assert_eq!(back.config, snap.config);
        assert_eq!(back.agent.alpha(), snap.agent.alpha());
    }
}

#[test]
fn file_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("c.meq");
    let snap = trained("small-sac");
    save(&path, &snap).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"MEQ1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let again = load(&path).unwrap();
    save(&path, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
}

#[test]
fn header_errors() {
    let bytes = encode(&trained("small-td3"));
    assert!(matches!(decode(b"MEQ"), Err(CheckpointError::BadMagic)));
    assert!(matches!(decode(&[b"MEQ2".as_slice(), &bytes[4..]].concat()), Err(CheckpointError::BadMagic)));
    let mut v = bytes.clone();
    v[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode(&v), Err(CheckpointError::Version(2))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode(&extra), Err(CheckpointError::Corrupt(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn every_truncation_is_rejected(frac in 0.0f64..1.0) {
        let bytes = encode(&trained("small-sac"));
        let cut = ((bytes.len() as f64) * frac) as usize;
        prop_assert!(decode(&bytes[..cut]).is_err());
    }

    #[test]
    fn flipped_structure_bytes_never_panic(pos in 0usize..4096, val in any::<u8>()) {
        let mut bytes = encode(&trained("small-td3"));
        let p = pos % bytes.len();
        bytes[p] = val;
        let _ = decode(&bytes);
    }
}
