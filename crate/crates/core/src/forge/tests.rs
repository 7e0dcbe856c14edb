use super::*;
use crate::data::PixelRect;
use crate::rng::Rng;
use proptest::prelude::*;

fn small(n: usize, seed: u64) -> ForgeConfig {
    ForgeConfig {
        n_samples: n,
        seed,
        ..ForgeConfig::default()
    }
}

fn base(seed: u64) -> NewsSample {
    base_sample(&small(1, seed), &Lexicon::default(), 0, 0).unwrap()
}

fn rect_of(s: &NewsSample) -> PixelRect {
    s.face_bbox.unwrap().to_pixels(s.image.width, s.image.height)
}

#[test]
fn base_generation_is_deterministic_and_real() {
    let lex = Lexicon::default();
    let a = generate_base(&small(10, 7), &lex).unwrap();
    let b = generate_base(&small(10, 7), &lex).unwrap();
    assert_eq!(a, b);
    for s in &a.samples {
        assert_eq!(s.label, Label::Real);
        assert_eq!(s.fake_cls, ManipClass::Orig);
        let entity = find_entity(&s.text).unwrap();
        assert_eq!(lex.entity_names.iter().filter(|n| s.text.contains(n.as_str())).count(), 1);
        assert!(lex.entity_names.contains(&entity.name));
        assert!(earliest_key(&s.text, &lex).is_some());
        assert!(s.validate_reasoning().is_empty());
    }
    assert!(generate_base(&small(0, 7), &lex).unwrap().is_empty());
}

#[test]
fn image_manip_diff_matches_recorded_bbox() {
    for seed in 0..6 {
        for mode in [ImageManip::Swap, ImageManip::Edit { strength: 0.7 }] {
            let s = base(seed);
            let out = apply_image_manip(s.clone(), mode, seed).unwrap();
            let diff = s.image.diff_rect(&out.image).unwrap();
            assert_eq!(diff, rect_of(&out));
            assert_eq!(out.label, Label::Fake);
            assert_eq!(out.fake_cls, ManipClass::Image);
            assert!(out.validate_reasoning().is_empty());
        }
    }
}

#[test]
fn zero_strength_edit_keeps_pixels_but_labels_fake() {
    let s = base(1);
    let out = apply_image_manip(s.clone(), ImageManip::Edit { strength: 0.0 }, 3).unwrap();
    assert_eq!(out.image, s.image);
    assert_eq!(out.label, Label::Fake);
}

#[test]
fn image_manip_needs_face() {
    let mut s = base(2);
    s.face_bbox = None;
    assert!(apply_image_manip(s, ImageManip::Swap, 0).is_err());
}

#[test]
fn text_manip_reverses_phrase() {
    let lex = Lexicon::default();
    let mut s = base(0);
    s.text = "Liu Xiang returns triumphantly and receives heated extolling".into();
    let out = apply_text_manip(s, &lex).unwrap();
    assert_eq!(out.text, "Liu Xiang returns triumphantly and receives harsh questioning");
    assert_eq!(out.fake_cls, ManipClass::Text);
    assert_eq!(out.label, Label::Fake);
}

#[test]
fn text_manip_twice_replaces_both_keys() {
    let lex = Lexicon::default();
    let mut s = base(0);
    s.text = "Anna Schmidt meets warm applause and strong support".into();
    let once = apply_text_manip(s, &lex).unwrap();
    assert_eq!(once.text, "Anna Schmidt meets loud booing and strong support");
    let twice = apply_text_manip(once, &lex).unwrap();
    assert_eq!(twice.text, "Anna Schmidt meets loud booing and fierce opposition");
    assert_eq!(twice.fake_cls, ManipClass::Text);
    assert!(apply_text_manip(twice, &lex).is_err());
}

#[test]
fn text_manip_respects_word_boundaries() {
    let lex = Lexicon::default();
    let mut s = base(0);
    s.text = "Bob Ray receives xhigh praise".into();
    assert!(apply_text_manip(s, &lex).is_err());
}

#[test]
fn fact_manip_uses_seeded_choice() {
    let lex = Lexicon::default();
    let mut s = base(0);
    s.text = "Liu Xiang returns triumphantly and receives heated extolling".into();
    let seed = 42;
    let candidates: Vec<&String> = lex.entity_names.iter().filter(|n| *n != "Liu Xiang").collect();
    let expected = candidates[from_seed(seed).gen_range(0..candidates.len())];
    let out = apply_fact_manip(s, &lex, seed).unwrap();
    assert_eq!(out.text, format!("{expected} returns triumphantly and receives heated extolling"));
    assert_eq!(out.fake_cls, ManipClass::Fact);
}

#[test]
fn fact_manip_requires_entity() {
    let mut s = base(0);
    s.text = "no capitalized entity here".into();
    assert!(apply_fact_manip(s, &Lexicon::default(), 0).is_err());
}

#[test]
fn replacement_never_repeats_entity() {
    let lex = Lexicon::default();
    for name in &lex.entity_names {
        for seed in 0..1000 {
            assert_ne!(pick_replacement(name, &lex, seed).unwrap(), name);
        }
    }
}

#[test]
fn consistency_score_basics() {
    assert!((consistency_score(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
    assert_eq!(consistency_score(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
    let scorer = ConsistencyScorer::default();
    let s = base(5);
    let a = scorer.score(&s.image, &s.text).unwrap();
    assert_eq!(a, scorer.score(&s.image, &s.text).unwrap());
    assert!((-1.0..=1.0).contains(&a));
}

#[test]
fn class_counts_follow_config() {
    let cfg = ForgeConfig {
        n_samples: 100,
        manip_rate: 0.5,
        multimodal_rate: 0.1,
        ..ForgeConfig::default()
    };
    let classes = assign_classes(&cfg);
    let count = |c: ManipClass| classes.iter().filter(|&&x| x == c).count();
    assert_eq!(classes.len(), 100);
    assert_eq!(count(ManipClass::Orig), 50);
    assert_eq!(count(ManipClass::ImageText) + count(ManipClass::ImageFact), 10);
    let singles = [ManipClass::Image, ManipClass::Text, ManipClass::Fact].map(count);
    assert_eq!(singles.iter().sum::<usize>(), 40);
    assert!(singles.iter().max().unwrap() - singles.iter().min().unwrap() <= 1);
}

#[test]
fn infeasible_config_is_rejected() {
    let cfg = ForgeConfig {
        manip_rate: 0.1,
        multimodal_rate: 0.2,
        ..small(10, 0)
    };
    assert!(forge_dataset(&cfg, &Lexicon::default()).is_err());
}

#[test]
fn forged_dataset_is_sound() {
    let cfg = ForgeConfig {
        n_samples: 40,
        manip_rate: 0.5,
        multimodal_rate: 0.1,
        seed: 11,
        ..ForgeConfig::default()
    };
    let lex = Lexicon::default();
    let ds = forge_dataset(&cfg, &lex).unwrap();
    assert_eq!(ds.samples.iter().filter(|s| s.label == Label::Fake).count(), 20);
    assert_eq!(ds.samples.iter().filter(|s| s.fake_cls.is_cross_modal()).count(), 4);
    let scorer = ConsistencyScorer::default();
    let classes = assign_classes(&cfg);
    for (i, s) in ds.samples.iter().enumerate() {
        assert_eq!(s.fake_cls, classes[i]);
        assert!(s.validate_reasoning().is_empty(), "{}", s.reasoning);
        let (orig, _) = filtered_base(&cfg, &lex, &scorer, i).unwrap();
        assert!(scorer.score(&orig.image, &orig.text).unwrap() >= cfg.consistency_threshold);
        match orig.image.diff_rect(&s.image) {
            Some(r) => {
                assert!(s.fake_cls.has_image());
                let b = rect_of(s);
                assert!(r.x0 >= b.x0 && r.y0 >= b.y0 && r.x1 <= b.x1 && r.y1 <= b.y1);
            }
            None => assert!(!s.fake_cls.has_image()),
        }
    }
    assert_eq!(ds, forge_dataset(&cfg, &lex).unwrap());
}

#[test]
fn split_partitions_samples() {
    let ds = generate_base(&small(20, 3), &Lexicon::default()).unwrap();
    let (train, test) = split_dataset(&ds, 0.25, 9).unwrap();
    assert_eq!((train.len(), test.len()), (15, 5));
    let mut ids: Vec<&str> = train.samples.iter().chain(&test.samples).map(|s| s.id.as_str()).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 20);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn manipulation_is_local(seed in 0u64..10_000, swap in any::<bool>(), strength in 0.05f64..1.0) {
        let s = base(seed);
        let mode = if swap { ImageManip::Swap } else { ImageManip::Edit { strength } };
        let out = apply_image_manip(s.clone(), mode, seed ^ 0xABCD).unwrap();
        let b = rect_of(&out);
        for y in 0..s.image.height {
            for x in 0..s.image.width {
                if !b.contains(x, y) {
                    prop_assert_eq!(s.image.pixel(x, y), out.image.pixel(x, y));
                }
            }
        }
        prop_assert_eq!(out.label, Label::Fake);
    }
}
