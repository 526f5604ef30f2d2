use bda_core::dataio::*;
use bda_core::numerics::{Rng, Tensor};
use bda_core::Error;
use proptest::prelude::*;

fn square(x0: f64, y0: f64, x1: f64, y1: f64, subtype: Subtype) -> BuildingPolygon {
    BuildingPolygon::new(vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)], subtype)
}

// ---- labels --------------------------------------------------------------

#[test]
fn parse_single_destroyed_square() {
    let doc = br#"{"features": [{"properties": {"subtype": "destroyed"},
        "wkt": "POLYGON ((0 0, 2 0, 2 2, 0 2, 0 0))"}]}"#;
    let polys = parse_labels(doc).unwrap();
    assert_eq!(polys.len(), 1);
    assert_eq!(polys[0].subtype, Subtype::Destroyed);
    assert_eq!(polys[0].ring, vec![(0.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]);
}

#[test]
fn parse_empty_feature_list() {
    assert!(parse_labels(br#"{"features": []}"#).unwrap().is_empty());
    assert!(parse_labels(br#"{"features": {"xy": [], "lng_lat": []}}"#).unwrap().is_empty());
}

#[test]
fn wkt_and_array_forms_give_identical_rings() {
    let doc = br#"{"features": [
        {"properties": {"subtype": "minor-damage"},
         "wkt": "POLYGON ((1.5 2.25, 10 2.25, 10.75 8, 1.5 8, 1.5 2.25))"},
        {"properties": {"subtype": "minor-damage"},
         "geometry": {"type": "Polygon", "coordinates": [[[1.5, 2.25], [10, 2.25], [10.75, 8], [1.5, 8]]]}},
        {"properties": {"subtype": "minor-damage"},
         "coordinates": [[1.5, 2.25], [10, 2.25], [10.75, 8], [1.5, 8], [1.5, 2.25]]}
    ]}"#;
    let polys = parse_labels(doc).unwrap();
    assert_eq!(polys[0], polys[1]);
    assert_eq!(polys[0], polys[2]);
}

#[test]
fn parse_xbd_layout_and_missing_subtype() {
    let doc = br#"{"metadata": {"width": 1024},
        "features": {"lng_lat": [], "xy": [
            {"properties": {"feature_type": "building", "uid": "a"},
             "wkt": "POLYGON ((0 0, 4 0, 4 4, 0 0))"},
            {"properties": {"feature_type": "building", "subtype": "un-classified"},
             "wkt": "POLYGON ((5 5, 6 5, 6 6, 5 5))"}
        ]}}"#;
    let polys = parse_labels(doc).unwrap();
    assert_eq!(polys[0].subtype, Subtype::NoDamage);
    assert_eq!(polys[1].subtype, Subtype::Unclassified);
    assert_eq!(polys[0].ring.len(), 3);
}

#[test]
fn parse_polygon_with_hole() {
    let doc = br#"{"features": [{"wkt": "POLYGON ((0 0, 6 0, 6 6, 0 6, 0 0), (2 2, 4 2, 4 4, 2 4, 2 2))"}]}"#;
    let p = &parse_labels(doc).unwrap()[0];
    assert_eq!(p.holes.len(), 1);
    let m = rasterize_mask(std::slice::from_ref(p), 6, 6, MaskKind::Loc);
    assert_eq!(m.get(3, 3), 0);
    assert_eq!(m.get(0, 0), 1);
    assert_eq!(m.data.iter().map(|&v| v as usize).sum::<usize>(), 32);
}

#[test]
fn parse_errors_name_the_feature() {
    let bad_ring = br#"{"features": [{"wkt": "POLYGON ((0 0, 1 1, 0 0))"}]}"#;
    assert!(matches!(parse_labels(bad_ring), Err(Error::Parse { index: 0, .. })));
    let bad_subtype = br#"{"features": [
        {"wkt": "POLYGON ((0 0, 1 0, 1 1))"},
        {"wkt": "POLYGON ((0 0, 1 0, 1 1))", "properties": {"subtype": "flattened"}}]}"#;
    assert!(matches!(parse_labels(bad_subtype), Err(Error::Parse { index: 1, .. })));
    let no_geom = br#"{"features": [{"properties": {}}]}"#;
    assert!(matches!(parse_labels(no_geom), Err(Error::Parse { index: 0, .. })));
    let bad_wkt = br#"{"features": [{"wkt": "POLYGON ((0 0, 1 x, 1 1))"}]}"#;
    assert!(matches!(parse_labels(bad_wkt), Err(Error::Parse { index: 0, .. })));
    assert!(matches!(parse_labels(b"{not json"), Err(Error::Document(_))));
    assert!(matches!(parse_labels(br#"{"shapes": []}"#), Err(Error::Document(_))));
}

#[test]
fn labels_round_trip_through_json() {
    let polys = vec![
        square(0.5, 1.0, 3.25, 4.0, Subtype::MajorDamage),
        square(2.0, 2.0, 5.0, 5.0, Subtype::NoDamage),
    ];
    assert_eq!(parse_labels(labels_to_json(&polys).as_bytes()).unwrap(), polys);
}

// ---- rasterization -------------------------------------------------------

#[test]
fn rasterize_empty_is_background() {
    assert_eq!(rasterize_mask(&[], 3, 5, MaskKind::Dmg), Mask::zeros(3, 5));
}

#[test]
fn rasterize_unit_square_marks_four_pixels() {
    let m = rasterize_mask(&[square(0.0, 0.0, 2.0, 2.0, Subtype::MinorDamage)], 4, 4, MaskKind::Dmg);
    let mut expected = Mask::zeros(4, 4);
    for (x, y) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        expected.set(y, x, 2);
    }
    assert_eq!(m, expected);
}

#[test]
fn rasterize_later_polygon_wins() {
    let polys = [
        square(0.0, 0.0, 3.0, 3.0, Subtype::Destroyed),
        square(1.0, 1.0, 4.0, 4.0, Subtype::NoDamage),
    ];
    let m = rasterize_mask(&polys, 4, 4, MaskKind::Dmg);
    assert_eq!(m.get(0, 0), 4);
    assert_eq!(m.get(1, 1), 1);
    assert_eq!(m.get(2, 2), 1);
    assert_eq!(m.get(3, 3), 1);
    let loc = rasterize_mask(&polys, 4, 4, MaskKind::Loc);
    assert_eq!(loc, m.footprint());
}

#[test]
fn rasterize_levels_follow_subtypes() {
    for (s, v) in [
        (Subtype::NoDamage, 1),
        (Subtype::MinorDamage, 2),
        (Subtype::MajorDamage, 3),
        (Subtype::Destroyed, 4),
        (Subtype::Unclassified, 1),
    ] {
        let m = rasterize_mask(&[square(0.0, 0.0, 1.0, 1.0, s)], 2, 2, MaskKind::Dmg);
        assert_eq!(m.get(0, 0), v);
    }
}

#[test]
fn rasterize_clips_at_borders() {
    let m = rasterize_mask(&[square(-5.0, -5.0, 1.0, 10.0, Subtype::NoDamage)], 3, 3, MaskKind::Loc);
    assert_eq!(m.data, vec![1, 0, 0, 1, 0, 0, 1, 0, 0]);
    let pip = rasterize_mask_pip(&[square(-5.0, -5.0, 1.0, 10.0, Subtype::NoDamage)], 3, 3, MaskKind::Loc);
    assert_eq!(m, pip);
}

fn random_convex(rng: &mut Rng, size: f64) -> BuildingPolygon {
    let cx = size * (0.1 + 0.8 * rng.next_f64());
    let cy = size * (0.1 + 0.8 * rng.next_f64());
    let r = size * (0.03 + 0.3 * rng.next_f64());
    let n = 3 + rng.below(10);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.next_f64() * std::f64::consts::TAU).collect();
    angles.sort_by(f64::total_cmp);
    let ring = angles.iter().map(|a| (cx + r * a.cos(), cy + r * a.sin())).collect();
    BuildingPolygon::new(ring, Subtype::from_level(1 + rng.below(4) as u8).unwrap())
}

#[test]
fn scanline_and_point_tests_agree_on_random_polygons() {
    let mut rng = Rng::new(2024);
    for _ in 0..100 {
        let p = [random_convex(&mut rng, 256.0)];
        let a = rasterize_mask(&p, 256, 256, MaskKind::Dmg);
        let b = rasterize_mask_pip(&p, 256, 256, MaskKind::Dmg);
        assert!(pixel_agreement(&a, &b).unwrap() >= 0.998);
    }
}

#[test]
fn scanline_and_point_tests_agree_on_concave_stars() {
    let mut rng = Rng::new(7);
    for _ in 0..20 {
        let n = 5 + rng.below(6);
        let (cx, cy) = (32.0 + rng.next_f64(), 32.0 + rng.next_f64());
        let ring = (0..2 * n)
            .map(|i| {
                let a = i as f64 * std::f64::consts::PI / n as f64;
                let r = if i % 2 == 0 { 25.0 } else { 9.0 };
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let p = [BuildingPolygon::new(ring, Subtype::NoDamage)];
        let a = rasterize_mask(&p, 64, 64, MaskKind::Loc);
        let b = rasterize_mask_pip(&p, 64, 64, MaskKind::Loc);
        assert!(pixel_agreement(&a, &b).unwrap() >= 0.998);
    }
}

proptest! {
    #[test]
    fn rasterization_is_translation_consistent(seed in 0u64..500, dx in -6i32..6, dy in -6i32..6) {
        let mut rng = Rng::new(seed);
        let p = random_convex(&mut rng, 24.0);
        let a = rasterize_mask(std::slice::from_ref(&p), 24, 24, MaskKind::Dmg);
        let b = rasterize_mask(&[p.translated(dx as f64, dy as f64)], 24, 24, MaskKind::Dmg);
        for y in 0..24i32 {
            for x in 0..24i32 {
                let (sx, sy) = (x - dx, y - dy);
                if (0..24).contains(&sx) && (0..24).contains(&sy) {
                    prop_assert_eq!(b.get(y as usize, x as usize), a.get(sy as usize, sx as usize));
                }
            }
        }
    }

    #[test]
    fn rasterized_pairs_are_consistent(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let polys: Vec<_> = (0..4).map(|_| random_convex(&mut rng, 32.0)).collect();
        let loc = rasterize_mask(&polys, 32, 32, MaskKind::Loc);
        let dmg = rasterize_mask(&polys, 32, 32, MaskKind::Dmg);
        prop_assert!(MaskPair::new(loc, dmg).is_ok());
    }
}

// ---- agreement and masks -------------------------------------------------

#[test]
fn agreement_counts_matching_pixels() {
    let a = Mask::zeros(4, 4);
    assert_eq!(pixel_agreement(&a, &a).unwrap(), 1.0);
    let mut b = a.clone();
    b.set(2, 3, 1);
    assert_eq!(pixel_agreement(&a, &b).unwrap(), 0.9375);
    assert!(matches!(pixel_agreement(&a, &Mask::zeros(4, 3)), Err(Error::Contract(_))));
}

#[test]
fn mask_pair_rejects_damage_without_building() {
    let loc = Mask::new(1, 2, vec![1, 0]).unwrap();
    let dmg = Mask::new(1, 2, vec![3, 2]).unwrap();
    assert!(MaskPair::new(loc, dmg).is_err());
    let loc = Mask::new(1, 2, vec![1, 2]).unwrap();
    assert!(loc.check_values(MaskKind::Loc).is_err());
}

// ---- stats ---------------------------------------------------------------

#[test]
fn stats_of_background_only() {
    let s = dataset_stats(&[Mask::zeros(3, 3)]);
    assert_eq!(s.total_images, 1);
    assert_eq!(s.image_counts, [0; 4]);
    assert_eq!(s.pixel_ratios, [0.0; 4]);
    assert_eq!(dataset_stats(&[]).total_images, 0);
}

#[test]
fn stats_hand_count() {
    let a = Mask::new(2, 2, vec![1, 1, 4, 0]).unwrap();
    let b = Mask::new(2, 2, vec![0, 0, 0, 4]).unwrap();
    let s = dataset_stats(&[a, b]);
    assert_eq!(s.total_images, 2);
    assert_eq!(s.image_counts, [1, 0, 0, 2]);
    assert_eq!(s.pixel_ratios, [0.5, 0.0, 0.0, 0.5]);
}

#[test]
fn stats_reproduce_constructed_mix() {
    // 76/9/9/6 percent of 1000 building pixels spread over 5 masks.
    let mut levels = Vec::new();
    for (lvl, n) in [(1u8, 760), (2, 90), (3, 90), (4, 60)] {
        levels.extend(std::iter::repeat_n(lvl, n));
    }
    levels.extend(std::iter::repeat_n(0u8, 250));
    Rng::new(3).shuffle(&mut levels);
    let masks: Vec<Mask> = levels.chunks(250).map(|c| Mask::new(10, 25, c.to_vec()).unwrap()).collect();
    let s = dataset_stats(&masks);
    for (r, e) in s.pixel_ratios.iter().zip([0.76, 0.09, 0.09, 0.06]) {
        assert!((r - e).abs() < 1e-9);
    }
    assert!((s.pixel_ratios.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(s.to_table().contains("76.00"));
}

// ---- split ---------------------------------------------------------------

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

#[test]
fn split_ten_ids_floors_and_gives_remainder_to_train() {
    let m = split_dataset(&ids(10), (0.7, 0.15, 0.15), 5).unwrap();
    assert_eq!((m.train.len(), m.valid.len(), m.test.len()), (8, 1, 1));
}

#[test]
fn split_all_train() {
    let m = split_dataset(&ids(7), (1.0, 0.0, 0.0), 1).unwrap();
    assert_eq!(m.train.len(), 7);
    assert!(m.valid.is_empty() && m.test.is_empty());
}

#[test]
fn split_rejects_bad_ratios() {
    assert!(matches!(split_dataset(&ids(4), (1.2, -0.2, 0.0), 0), Err(Error::Config(_))));
    assert!(matches!(split_dataset(&ids(4), (0.5, 0.2, 0.2), 0), Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn split_is_a_deterministic_partition(n in 0usize..60, seed in 0u64..1000) {
        let all = ids(n);
        let a = split_dataset(&all, (0.7, 0.15, 0.15), seed).unwrap();
        prop_assert_eq!(&a, &split_dataset(&all, (0.7, 0.15, 0.15), seed).unwrap());
        let mut joined: Vec<String> = a.train.iter().chain(&a.valid).chain(&a.test).cloned().collect();
        joined.sort();
        prop_assert_eq!(joined, all);
    }
}

// ---- augmentation --------------------------------------------------------

fn ramp_sample(h: usize, w: usize) -> (Tensor, Tensor, MaskPair) {
    let pre = Tensor::new(vec![3, h, w], (0..3 * h * w).map(|i| i as f64).collect()).unwrap();
    let post = pre.map(|v| -v);
    let dmg = Mask::new(h, w, (0..h * w).map(|i| (i % 5) as u8).collect()).unwrap();
    (pre, post, MaskPair::new(dmg.footprint(), dmg).unwrap())
}

/// Clockwise quarter turn written directly from its definition.
fn rot_cw(m: &Mask) -> Mask {
    let mut out = Mask::zeros(m.w, m.h);
    for y in 0..m.h {
        for x in 0..m.w {
            out.set(x, m.h - 1 - y, m.get(y, x));
        }
    }
    out
}

#[test]
fn identity_transform_leaves_sample_unchanged() {
    let (pre, post, masks) = ramp_sample(6, 6);
    let t = Transform::identity(6, 6);
    assert_eq!(t.apply_image(&pre).unwrap(), pre);
    assert_eq!(t.apply_image(&post).unwrap(), post);
    assert_eq!(t.apply_mask(&masks.dmg).unwrap(), masks.dmg);
}

#[test]
fn horizontal_flip_mirrors_columns() {
    let (pre, _, masks) = ramp_sample(5, 5);
    let t = Transform {
        hflip: true,
        ..Transform::identity(5, 5)
    };
    let m = t.apply_mask(&masks.dmg).unwrap();
    let img = t.apply_image(&pre).unwrap();
    for y in 0..5 {
        for x in 0..5 {
            assert_eq!(m.get(y, x), masks.dmg.get(y, 4 - x));
            for c in 0..3 {
                assert_eq!(img.data()[(c * 5 + y) * 5 + x], pre.data()[(c * 5 + y) * 5 + 4 - x]);
            }
        }
    }
    let v = Transform {
        vflip: true,
        ..Transform::identity(5, 5)
    };
    let m = v.apply_mask(&masks.dmg).unwrap();
    assert_eq!(m.get(0, 2), masks.dmg.get(4, 2));
}

#[test]
fn rotations_match_direct_quarter_turns() {
    let dmg = Mask::new(4, 6, (0..24).map(|i| i as u8).collect()).unwrap();
    let mut expected = dmg.clone();
    for k in 1..4u8 {
        expected = rot_cw(&expected);
        let t = Transform {
            hflip: false,
            vflip: false,
            rot: k,
            crop: 4,
            crop_y: 0,
            crop_x: 0,
        };
        let got = t.apply_mask(&dmg).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(got.get(y, x), expected.get(y, x), "k={k}");
            }
        }
    }
}

#[test]
fn augmentation_keeps_masks_consistent() {
    let (pre, post, masks) = ramp_sample(12, 10);
    let mut rng = Rng::new(11);
    for _ in 0..1000 {
        let (a, b, m) = augment_sample(&pre, &post, &masks, &mut rng, 8).unwrap();
        assert_eq!(a.shape(), &[3, 8, 8]);
        assert!(m.validate().is_ok());
        // Both images and both masks moved together.
        for p in 0..64 {
            assert_eq!(b.data()[p], -a.data()[p]);
            let src = a.data()[p] as usize;
            assert_eq!(m.dmg.data[p], (src % 5) as u8);
        }
    }
}

#[test]
fn augmentation_rejects_oversized_crop() {
    let (pre, post, masks) = ramp_sample(6, 8);
    let r = augment_sample(&pre, &post, &masks, &mut Rng::new(0), 7);
    assert!(matches!(r, Err(Error::Config(_))));
}

// ---- files ---------------------------------------------------------------

#[test]
fn masks_and_images_round_trip_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let mask = Mask::new(3, 4, vec![0, 1, 2, 3, 4, 0, 1, 2, 3, 4, 0, 1]).unwrap();
    let path = dir.path().join("m.png");
    write_mask(&path, &mask).unwrap();
    assert_eq!(read_mask(&path, Some(MaskKind::Dmg)).unwrap(), mask);
    assert!(read_mask(&path, Some(MaskKind::Loc)).is_err());

    let img = Tensor::new(vec![3, 2, 3], (0..18).map(|i| (i * 13) as f64 / 255.0).collect()).unwrap();
    let ipath = dir.path().join("i.png");
    write_image(&ipath, &img).unwrap();
    assert_eq!(read_image(&ipath).unwrap(), img);
    assert!(read_mask(&ipath, None).is_err());
}

#[test]
fn manifest_round_trip_and_sample_loading() {
    let dir = tempfile::tempdir().unwrap();
    let (pre, post, masks) = ramp_sample(4, 4);
    let pre = pre.map(|v| (v % 256.0) / 255.0);
    let post = post.map(|v| (-v % 256.0) / 255.0);
    let sample = Sample {
        id: "a".into(),
        pre,
        post,
        masks,
    };
    save_sample(&dir.path().join("data"), &sample).unwrap();
    let manifest = DatasetManifest {
        name: "toy".into(),
        root: "data".into(),
        split: SplitManifest {
            seed: 1,
            train: vec!["a".into()],
            valid: vec![],
            test: vec!["missing".into()],
        },
    };
    let mpath = dir.path().join("manifest.json");
    manifest.save(&mpath).unwrap();
    let loaded = DatasetManifest::load(&mpath).unwrap();
    assert_eq!(loaded.root, dir.path().join("data"));
    let train = loaded.load_split(Split::Train).unwrap();
    assert_eq!(train[0].pre, sample.pre);
    assert_eq!(train[0].masks, sample.masks);
    let err = loaded.load_split(Split::Test).unwrap_err();
    assert!(err.to_string().contains("missing_pre_disaster.png"), "{err}");
    assert!(err.is_data_error());
}
