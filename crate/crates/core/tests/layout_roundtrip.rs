mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rare_core::layout::{gen_corpus, parse_layout_json, render_svg, serialize_layout_json, validate_layout, ClassRegistry, CorpusConfig, Palette};

#[test]
fn hundred_corpus_layouts_round_trip() {
    let reg = ClassRegistry::default();
    let c = gen_corpus(&CorpusConfig { n_layouts: 100, ..CorpusConfig::default() }, 31).unwrap();
    for l in &c.layouts {
        let s = serialize_layout_json(l, &reg).unwrap();
        assert_eq!(&parse_layout_json(s.as_bytes(), &reg).unwrap(), l);
    }
}

#[test]
fn thirteen_elements_render_thirteen_rects_in_order() {
    let reg = ClassRegistry::default();
    let l = common::random_layout(&mut ChaCha8Rng::seed_from_u64(32), 13, 10);
    let svg = String::from_utf8(render_svg(&l, &reg, &Palette::default()).unwrap()).unwrap();
    let titles: Vec<&str> = svg.split("<title>").skip(1).map(|s| s.split('<').next().unwrap()).collect();
    let expected: Vec<&str> = l.elements.iter().map(|e| reg.name(e.cls).unwrap()).collect();
    assert_eq!(titles, expected);
    assert_eq!(svg.matches("<rect x=").count(), 14);
}

proptest! {
    #[test]
    fn generated_corpora_are_valid_and_reproducible(seed in any::<u64>(), n in 1usize..40) {
        let cfg = CorpusConfig { n_layouts: n, ..CorpusConfig::default() };
        let a = gen_corpus(&cfg, seed).unwrap();
        prop_assert_eq!(&a, &gen_corpus(&cfg, seed).unwrap());
        let reg = ClassRegistry::default();
        for l in &a.layouts {
            prop_assert!(validate_layout(l, &reg).is_empty());
        }
    }

    #[test]
    fn random_valid_layouts_round_trip(seed in any::<u64>(), n in 1usize..=32) {
        let reg = ClassRegistry::default();
        let l = common::random_layout(&mut ChaCha8Rng::seed_from_u64(seed), n, 10);
        let s = serialize_layout_json(&l, &reg).unwrap();
        prop_assert_eq!(parse_layout_json(s.as_bytes(), &reg).unwrap(), l);
    }
}
