use spgan::config::*;
use spgan::Error;
use spgan_core::labelkit::CannyThresholds;
use spgan_core::trainer::TrainConfig;

fn usage(e: Error) -> String {
    match e {
        Error::Usage(m) => m,
        other => panic!("expected a usage error, got {other}"),
    }
}

#[test]
fn preset_file_matches_builtin_presets() {
    let mut names = preset_names();
    names.sort();
    let mut builtin: Vec<String> = TrainConfig::PRESETS.iter().map(|s| s.to_string()).collect();
    builtin.sort();
    assert_eq!(names, builtin);
    for name in TrainConfig::PRESETS {
        assert_eq!(preset(name).unwrap(), TrainConfig::preset(name).unwrap(), "{name}");
    }
    assert!(usage(preset("mnist").unwrap_err()).contains("covid19"));
}

#[test]
fn overrides_reach_leaves_and_tables() {
    let c = resolve(
        "desk",
        None,
        &[
            "epochs.phase1=3".into(),
            "lr_g = 0.5".into(),
            "generator.residual_blocks=1".into(),
            "data.canny={mode=\"manual\", low=0.1, high=0.2}".into(),
            "fen.layer=conv3".into(),
            "name=desk-small".into(),
        ],
    )
    .unwrap();
    assert_eq!(c.epochs.phase1, 3);
    assert_eq!(c.lr_g, 0.5);
    assert_eq!(c.generator.residual_blocks, 1);
    assert_eq!(c.data.canny, CannyThresholds::Manual { low: 0.1, high: 0.2 });
    assert_eq!(c.fen.layer, "conv3");
    assert_eq!(c.name, "desk-small");
    assert_eq!(c.epochs.phase2, TrainConfig::preset("desk").unwrap().epochs.phase2);
}

#[test]
fn unknown_keys_list_every_valid_key() {
    let m = usage(resolve("desk", None, &["epochs.phase9=1".into()]).unwrap_err());
    for key in ["epochs.phase1", "lambda2", "generator.residual_blocks", "data.texture.speckle", "fen.weights"] {
        assert!(m.contains(key), "{key} missing from {m}");
    }
    assert!(usage(resolve("desk", None, &["nonsense".into()]).unwrap_err()).contains("key=value"));
    assert!(usage(resolve("desk", None, &["batch_size=four".into()]).unwrap_err()).contains("invalid configuration"));
    assert!(matches!(resolve("desk", None, &["batch_size=0".into()]), Err(Error::Core(_))));
}

#[test]
fn config_files_merge_over_the_preset() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = dir.path().join("c.toml");
    std::fs::write(&toml_path, "lambda2 = 2.5\n[epochs]\nphase4 = 7\n").unwrap();
    let c = resolve("ovary", Some(&toml_path), &["epochs.phase4=9".into()]).unwrap();
    assert_eq!((c.lambda2, c.epochs.phase4, c.epochs.phase1), (2.5, 9, 300));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[epochs]\nphase5 = 7\n").unwrap();
    assert!(usage(resolve("desk", Some(&bad), &[]).unwrap_err()).contains("epochs.phase5"));

    // A run manifest reproduces its configuration.
    let mut snapshot = TrainConfig::preset("hip_joint").unwrap();
    snapshot.data.canny = CannyThresholds::Manual { low: 0.05, high: 0.1 };
    snapshot.fen.weights = Some("w.bin".into());
    let manifest = spgan::manifest::RunManifest::new("train", &["spgan".into()], Some(0), serde_json::to_value(&snapshot).unwrap());
    let mp = dir.path().join("run_manifest.json");
    manifest.write(&mp).unwrap();
    assert_eq!(resolve("desk", Some(&mp), &[]).unwrap(), snapshot);
}
