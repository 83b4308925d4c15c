use m2vsl::checkpoint::{self, ManifestEntry};
use m2vsl::pgm::{read_map, read_mask, Greymap};
use m2vsl::{config, m2ts, report};
use m2vsl_core::locseg::{LocalizationMap, Mask};
use m2vsl_core::metrics::MetricsReport;
use m2vsl_core::params::ParamStore;
use m2vsl_core::train::{Model, RunConfig};
use m2vsl_core::Tensor;
use proptest::prelude::*;

#[test]
fn m2ts_layout_is_magic_rank_extents_then_f32() {
    let t = Tensor::new(&[2, 1], vec![1.5, -2.0]).unwrap();
    let bytes = m2ts::encode(&t).unwrap();
    let mut want = b"M2TS".to_vec();
    for v in [2u32, 2, 1] {
        want.extend_from_slice(&v.to_le_bytes());
    }
    want.extend_from_slice(&1.5f32.to_le_bytes());
    want.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, want);
    assert_eq!(m2ts::decode(&bytes).unwrap(), t);
}

#[test]
fn m2ts_rejects_bad_input() {
    assert!(m2ts::decode(b"M2TX\0\0\0\0").is_err());
    let mut bytes = m2ts::encode(&Tensor::from_vec(vec![1.0, 2.0]).unwrap()).unwrap();
    bytes.pop();
    assert!(m2ts::decode(&bytes).is_err());
    assert!(m2ts::encode(&Tensor::from_vec(vec![1e300]).unwrap()).is_err());
    let mut inf = m2ts::encode(&Tensor::from_vec(vec![0.0]).unwrap()).unwrap();
    let n = inf.len();
    inf[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert!(m2ts::decode(&inf).is_err());
}

proptest! {
    #[test]
    fn m2ts_round_trips_f32_values(shape in prop::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|i| (((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / 1e6) as f64).collect();
        let t = Tensor::new(&shape, data).unwrap();
        prop_assert_eq!(m2ts::decode(&m2ts::encode(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn pgm_round_trips_pixels(w in 1usize..9, h in 1usize..9, px in prop::collection::vec(any::<u8>(), 64)) {
        let g = Greymap { width: w, height: h, pixels: px[..w * h].to_vec() };
        prop_assert_eq!(Greymap::decode(&g.encode()).unwrap(), g);
    }
}

#[test]
fn pgm_header_and_scaling() {
    let map = LocalizationMap::new(1, 3, vec![-1.0, 0.0, 1.0]).unwrap();
    let g = Greymap::from_map(&map);
    assert_eq!(g.pixels, vec![0, 128, 255]);
    assert!(g.encode().starts_with(b"P5\n3 1\n255\n"));
    let flat = Greymap::from_map(&LocalizationMap::new(1, 2, vec![0.3, 0.3]).unwrap());
    assert_eq!(flat.pixels, vec![0, 0]);
    let commented = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
    let d = Greymap::decode(commented).unwrap();
    assert_eq!((d.width, d.height, d.pixels.clone()), (2, 1, vec![0, 255]));
    assert!(Greymap::decode(b"P2\n1 1\n255\n0").is_err());
    assert!(Greymap::decode(b"P5\n4 4\n255\n\x00").is_err());
}

#[test]
fn masks_and_maps_read_from_either_format() {
    let dir = tempfile::tempdir().unwrap();
    let mask = Mask::new(2, 2, vec![true, false, false, true]).unwrap();
    let p = dir.path().join("m.pgm");
    Greymap::from_mask(&mask).write(&p).unwrap();
    assert_eq!(read_mask(&p).unwrap(), mask);
    let t = dir.path().join("m.m2ts");
    m2ts::write(&t, &Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
    assert_eq!(read_mask(&t).unwrap(), mask);
    let map = read_map(&t).unwrap();
    assert_eq!(map.scores(), &[1.0, 0.0, 0.0, 1.0]);
}

fn tiny_cfg() -> RunConfig {
    RunConfig {
        dim: 8,
        train_size: 8,
        val_size: 4,
        test_size: 4,
        batch_size: 4,
        epochs: 1,
        audio_seconds: 0.1,
        ..RunConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut params = Model::init(&tiny_cfg()).unwrap().params;
    params.quantize_f32();
    checkpoint::save(dir.path(), &params).unwrap();
    let back = checkpoint::load(dir.path()).unwrap();
    assert_eq!(back, params);

    let text = std::fs::read_to_string(dir.path().join(checkpoint::MANIFEST_FILE)).unwrap();
    let entries = checkpoint::parse_manifest(&text).unwrap();
    assert_eq!(entries.len(), params.len());
    assert_eq!(entries[0].offset, 0);
    for pair in entries.windows(2) {
        assert_eq!(pair[1].offset, pair[0].offset + m2ts::encoded_len(&pair[0].shape));
    }
    assert!(text.lines().any(|l| l.starts_with("mmt.")));
}

#[test]
fn manifest_parsing_and_corruption() {
    let entries = checkpoint::parse_manifest("# header\nw 3x2 0\nb 2 32\ns scalar 48\n").unwrap();
    assert_eq!(
        entries[0],
        ManifestEntry {
            name: "w".into(),
            shape: vec![3, 2],
            offset: 0
        }
    );
    assert_eq!(entries[2].shape, Vec::<usize>::new());
    assert!(checkpoint::parse_manifest("w 3x2\n").is_err());

    let mut p = ParamStore::new();
    p.insert("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    let (blob, mut entries) = checkpoint::encode(&p).unwrap();
    entries[0].shape = vec![4, 1];
    assert!(checkpoint::decode(&blob, &entries).is_err());
    entries[0].shape = vec![2, 2];
    assert!(checkpoint::decode(&blob[..blob.len() - 1], &entries).is_err());
}

#[test]
fn disabling_the_transformer_drops_its_tensors_from_the_manifest() {
    let with = Model::init(&tiny_cfg()).unwrap().params;
    let without = Model::init(&RunConfig {
        mmt_enabled: false,
        ..tiny_cfg()
    })
    .unwrap()
    .params;
    let (_, a) = checkpoint::encode(&with).unwrap();
    let (_, b) = checkpoint::encode(&without).unwrap();
    assert!(a.iter().any(|e| e.name.starts_with("mmt.")));
    assert!(b.iter().all(|e| !e.name.starts_with("mmt.")));
    assert_eq!(
        b.len(),
        a.iter().filter(|e| !e.name.starts_with("mmt.")).count()
    );
}

#[test]
fn config_text_round_trips_every_key() {
    let mut cfg = RunConfig {
        dim: 12,
        tau: 0.125,
        scales_used: vec![1, 3],
        map_scales: vec![],
        mmt_residual: true,
        output_dir: "somewhere/else".into(),
        ..RunConfig::default()
    };
    cfg.learning_rate = 3e-4;
    let mut back = RunConfig::default();
    config::apply_text(&mut back, &config::to_text(&cfg)).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(config::entries(&cfg).len(), 38);
}

#[test]
fn config_overrides_follow_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("run.txt");
    std::fs::write(&f, "# comment\n\nepochs = 5\nseed=9\n").unwrap();
    let cfg = config::resolve(Some(&f), &["epochs=7".into()]).unwrap();
    assert_eq!((cfg.epochs, cfg.seed), (7, 9));
    assert!(config::resolve(Some(&f), &["epochs=seven".into()]).is_err());
    assert!(config::resolve(None, &["nonsense=1".into()]).is_err());
    assert!(config::resolve(None, &["batch_size=1".into()]).is_err());
    assert!(config::resolve(None, &["mmt_depth=0".into()]).is_err());
    assert!(config::resolve(None, &["mmt_enabled=false".into(), "mmt_depth=0".into()]).is_ok());
}

#[test]
fn report_is_flat_with_all_metric_keys_and_config_echo() {
    let rep = MetricsReport {
        miou: Some(0.5),
        cap: Some(0.25),
        ..MetricsReport::default()
    };
    let flat = report::metrics_with_config(&rep, &RunConfig::default());
    for k in MetricsReport::KEYS {
        assert!(flat.contains_key(k), "{k}");
    }
    assert_eq!(flat["miou"], serde_json::json!(0.5));
    assert!(flat["ap"].is_null());
    assert_eq!(flat["config.lambda_cls"], serde_json::json!("0.1"));
    assert!(!flat.contains_key("config.output_dir"));
    assert!(flat.values().all(|v| !v.is_object() && !v.is_array()));
    let parsed: serde_json::Value = serde_json::from_str(&report::to_string(&flat)).unwrap();
    assert_eq!(parsed.as_object().unwrap(), &flat);
}
