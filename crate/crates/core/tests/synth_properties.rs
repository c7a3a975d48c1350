use charseg::synth::{
    compose_line, corpus_seed, disturb, generate_dataset, generate_samples, intervals_to_mask, make_corpus,
    make_toy_atlas, read_dataset, Content, DatasetSpec, DisturbanceParams, GlyphAtlas, Overflow, SpacingSampler,
    MANIFEST_NAME,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn atlas() -> &'static GlyphAtlas {
    static ATLAS: OnceLock<GlyphAtlas> = OnceLock::new();
    ATLAS.get_or_init(|| make_toy_atlas(42, 32, 48).unwrap())
}

fn corpus() -> Vec<u32> {
    make_corpus(atlas(), corpus_seed(atlas()), 2000)
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn atlas_has_required_structure() {
    let a = atlas();
    assert_eq!(a.glyphs.len(), 32);
    let disc = a.glyphs.iter().filter(|g| g.is_disconnected()).count();
    assert!(disc as f64 >= 0.3 * 32.0, "{disc} disconnected glyphs");
    assert!(a.glyphs.iter().all(|g| g.height <= a.line_height));
    // an atlas with a different seed draws different shapes
    assert_ne!(a.hash(), make_toy_atlas(43, 32, 48).unwrap().hash());
}

#[test]
fn dataset_files_are_deterministic() {
    let spec = DatasetSpec::new(Content::Normal, 12, 7, 256);
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(atlas(), &corpus(), &spec, d1.path()).unwrap();
    generate_dataset(atlas(), &corpus(), &spec, d2.path()).unwrap();
    let a = dir_bytes(d1.path());
    assert_eq!(a, dir_bytes(d2.path()));
    assert!(a.iter().any(|(n, _)| n == MANIFEST_NAME));

    let d3 = tempfile::tempdir().unwrap();
    let other = DatasetSpec::new(Content::Normal, 12, 8, 256);
    generate_dataset(atlas(), &corpus(), &other, d3.path()).unwrap();
    assert_ne!(a, dir_bytes(d3.path()));
}

#[test]
fn written_dataset_reads_back() {
    let spec = DatasetSpec::new(Content::Chaotic, 10, 3, 256);
    let samples = generate_samples(atlas(), &corpus(), &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(atlas(), &corpus(), &spec, dir.path()).unwrap();
    let (manifest, loaded) = read_dataset(dir.path()).unwrap();
    assert_eq!(manifest.get("content"), Some("chaotic"));
    assert_eq!(manifest.get("seed"), Some("3"));
    assert_eq!(manifest.get("atlas_hash"), Some(atlas().hash().as_str()));
    assert_eq!(loaded.len(), samples.len());
    for (s, (_, l)) in samples.iter().zip(&loaded) {
        assert_eq!(s.image, l.image);
        assert_eq!(s.intervals, l.intervals);
        assert_eq!(s.mask, l.mask);
    }
    // the manifest path works as well as the directory
    assert_eq!(read_dataset(dir.path().join(MANIFEST_NAME)).unwrap().1.len(), 10);
}

#[test]
fn missing_image_is_a_data_error() {
    let spec = DatasetSpec::new(Content::Normal, 3, 1, 128);
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(atlas(), &corpus(), &spec, dir.path()).unwrap();
    std::fs::remove_file(dir.path().join("sample_00001.pgm")).unwrap();
    let err = read_dataset(dir.path()).unwrap_err();
    assert!(matches!(err, charseg::Error::Data(_)));
    assert!(err.to_string().contains("sample_00001"));
}

#[test]
fn samples_are_consistent() {
    let spec = DatasetSpec::new(Content::Normal, 40, 11, 512);
    for s in generate_samples(atlas(), &corpus(), &spec).unwrap() {
        assert_eq!(s.image.width, 512);
        assert_eq!(s.image.height, 48);
        assert_eq!(s.mask, intervals_to_mask(&s.intervals, 512).unwrap());
        assert!(!s.intervals.is_empty());
        let profile = s.image.column_profile();
        for pair in s.intervals.windows(2) {
            assert!(pair[0].left <= pair[1].left);
        }
        for iv in &s.intervals {
            assert!(iv.left <= iv.right && iv.right < 512);
            // interval ends sit on inked columns
            assert!(profile[iv.left] > 0 && profile[iv.right] > 0);
        }
    }
}

#[test]
fn identity_disturbance_keeps_placement_intervals() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ids: Vec<u32> = atlas().ids().into_iter().take(12).collect();
    let line = compose_line(
        atlas(),
        &ids,
        &SpacingSampler::Fixed(3),
        4,
        512,
        Overflow::Error,
        &mut rng,
    )
    .unwrap();
    let s = disturb(&line, &DisturbanceParams::identity(), &mut rng).unwrap();
    assert_eq!(s.intervals, line.intervals);
    assert_eq!(s.image, line.gray.threshold(160));
    let ink = line.char_ink.iter().map(Vec::len).sum::<usize>();
    assert_eq!(s.image.ink_count(), ink);
}

#[test]
fn fixed_spacing_places_glyphs_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ids: Vec<u32> = atlas().ids().into_iter().take(5).collect();
    let line = compose_line(
        atlas(),
        &ids,
        &SpacingSampler::Fixed(2),
        6,
        512,
        Overflow::Error,
        &mut rng,
    )
    .unwrap();
    let mut x = 6;
    for (iv, id) in line.intervals.iter().zip(&ids) {
        let w = atlas().glyph(*id).unwrap().width;
        assert_eq!((iv.left, iv.right), (x, x + w - 1));
        x += w + 2;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_rotation_preserves_ink(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = atlas().ids().into_iter().skip((seed % 20) as usize).take(10).collect();
        let line = compose_line(atlas(), &ids, &SpacingSampler::default(), 5, 512, Overflow::Truncate, &mut rng).unwrap();
        let params = DisturbanceParams { rotation_deg: 2.0, ..DisturbanceParams::identity() };
        let s = disturb(&line, &params, &mut rng).unwrap();
        let before = line.gray.threshold(160).ink_count() as f64;
        let after = s.image.ink_count() as f64;
        prop_assert!((after - before).abs() <= 0.2 * before, "{before} -> {after}");
    }

    #[test]
    fn default_disturbance_labels_stay_valid(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ids: Vec<u32> = atlas().ids().into_iter().rev().skip((seed % 20) as usize).take(10).collect();
        let line = compose_line(atlas(), &ids, &SpacingSampler::default(), 5, 512, Overflow::Truncate, &mut rng).unwrap();
        let s = disturb(&line, &DisturbanceParams::default(), &mut rng).unwrap();
        prop_assert_eq!(s.intervals.len(), s.glyph_ids.len());
        prop_assert_eq!(&s.mask, &intervals_to_mask(&s.intervals, 512).unwrap());
        let profile = s.image.column_profile();
        for iv in &s.intervals {
            prop_assert!(profile[iv.left] > 0 && profile[iv.right] > 0);
        }
    }
}
