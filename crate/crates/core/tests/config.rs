use bda_core::config::{Config, KEYS};
use bda_core::model::Enhancements;
use bda_core::Error;

#[test]
fn defaults_are_the_toy_preset() {
    let c = Config::default();
    assert_eq!(c.train.crop, 32);
    assert_eq!(c.train.model.stage_channels, [16, 32, 64, 128]);
    assert_eq!(c.train.model.focal.alpha, [0.6, 1.6, 1.1, 1.1]);
    assert_eq!(c.train.model.focal.gamma, 1.5);
    assert_eq!(c.train.weight_decay, 5e-3);
    assert_eq!(c.train.batch_size, 4);
}

#[test]
fn file_values_override_defaults() {
    let text = "# toy run\n\nmodel.enable_focal = true\nmodel.stage_channels = 8, 16, 24, 32\n\
                losses.focal_gamma=2\ntrain.iterations = 12\ndata.train_manifest = /data/m.json\n";
    let c = Config::parse(text).unwrap();
    let m = &c.train.model;
    assert!(m.enable_focal && !m.enable_align);
    assert_eq!(m.stage_channels, [8, 16, 24, 32]);
    assert_eq!(m.focal.gamma, 2.0);
    assert_eq!(c.train.iterations, 12);
    assert_eq!(c.train.train_manifest.as_deref(), Some(std::path::Path::new("/data/m.json")));
}

#[test]
fn unknown_duplicate_and_malformed_lines_are_rejected() {
    for (text, needle) in [
        ("model.depth = 3\n", "unknown key"),
        ("train.lr = 1\ntrain.lr = 2\n", "duplicate"),
        ("train.lr\n", "line 1"),
        ("train.iterations = many\n", "train.iterations"),
        ("losses.focal_alpha = 1,2,3\n", "4 comma-separated"),
        ("model.enable_align = maybe\n", "true or false"),
        ("train.crop = 20\n", "multiple of 16"),
    ] {
        match Config::parse(text) {
            Err(e @ Error::Config(_)) => assert!(e.to_string().contains(needle), "{text:?}: {e}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
}

#[test]
fn overrides_apply_after_the_file() {
    let mut c = Config::parse("train.seed = 3\n").unwrap();
    c.apply_override("train.seed=9").unwrap();
    assert_eq!(c.train.seed, 9);
    assert!(c.apply_override("train.seed").is_err());
    c.set_variant(Enhancements::new(true, true, false, true));
    assert_eq!(c.train.model.enhancements().name(), "FOCAL + ALIGN + AGB");
}

#[test]
fn text_and_json_echoes_round_trip() {
    let mut c = Config::default();
    c.apply_text("model.enable_ag_damage = on\nlosses.w_lovasz = 0.5\ntrain.lr = 0.00125\ndata.valid_manifest = v.json\n")
        .unwrap();
    let text = c.to_text();
    assert_eq!(text.lines().count(), KEYS.len());
    assert_eq!(Config::parse(&text).unwrap(), c);
    assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
    for (k, _) in KEYS {
        assert!(Config::describe().contains(k));
        assert!(c.get(k).is_some());
    }
}

#[test]
fn load_names_the_file_on_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("run.cfg");
    std::fs::write(&p, "bogus.key = 1\n").unwrap();
    let e = Config::load(&p).unwrap_err();
    assert!(e.to_string().contains("run.cfg"), "{e}");
    assert!(!e.is_data_error());
}
