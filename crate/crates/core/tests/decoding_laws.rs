mod common;

use common::*;
use mcdecode::decoding::{
    combine_contrastive, dynamic_alpha, ratio_form_probability, softmax, Branch, DecodeLimits,
};
use mcdecode::{decode, BranchPrompts, DecodeStrategy, LogitVector, ScriptedModel, TokenSequence, VocabInfo};
use proptest::prelude::*;
use rand::Rng;

fn lv(v: &[f64]) -> LogitVector {
    LogitVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn contrastive_softmax_equals_ratio_form(
        seed in any::<u64>(),
        vocab in 2usize..64,
        alpha in 0.0f64..3.0,
    ) {
        let mut r = rng(seed);
        let z = random_logits(&mut r, vocab, 8.0);
        let zp = random_logits(&mut r, vocab, 8.0);
        let zm = random_logits(&mut r, vocab, 8.0);
        let combined = softmax(combine_contrastive(&lv(&z), &lv(&zp), &lv(&zm), alpha).unwrap().scores());
        let ratio = ratio_form_probability(&lv(&z), &lv(&zp), &lv(&zm), alpha).unwrap();
        let oracle = ratio_oracle(&z, &zp, &zm, alpha);
        for i in 0..vocab {
            prop_assert!((combined[i] - oracle[i]).abs() < 1e-9);
            prop_assert!((ratio[i] - oracle[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_is_shift_invariant(
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
        which in 0usize..3,
        alpha in 0.0f64..3.0,
    ) {
        let mut r = rng(seed);
        let mut v: Vec<Vec<f64>> = (0..3).map(|_| random_logits(&mut r, 16, 5.0)).collect();
        let pick = |v: &[Vec<f64>]| {
            let p = softmax(combine_contrastive(&lv(&v[0]), &lv(&v[1]), &lv(&v[2]), alpha).unwrap().scores());
            mcdecode::decoding::argmax(&p)
        };
        let before = pick(&v);
        for x in v[which].iter_mut() {
            *x += shift;
        }
        prop_assert_eq!(pick(&v), before);
    }

    #[test]
    fn traces_are_consistent(seed in 0u64..10_000) {
        let s = RandomScript::new(seed, 4, 3);
        for strategy in [
            DecodeStrategy::RegularClosed,
            DecodeStrategy::Cad { alpha: 0.5 },
            DecodeStrategy::ContrastiveFixed { alpha: 1.0 },
            DecodeStrategy::ContrastiveDynamic,
        ] {
            let limits = DecodeLimits { max_new_tokens: 3, stop_strings: vec![] };
            let out = decode(&strategy, &s.prompts(&s.relevant, &s.irrelevant), &s.model, &limits).unwrap();
            prop_assert_eq!(out.traces.len(), out.tokens.len());
            for t in &out.traces {
                let probs: Vec<f64> = t.top5_combined.iter().map(|x| x.1).collect();
                prop_assert!(probs.windows(2).all(|w| w[0] >= w[1]));
                prop_assert_eq!(t.top5_combined[0].0, t.chosen_token);
                let uses_parametric = !matches!(strategy, DecodeStrategy::RegularOpen);
                prop_assert_eq!(t.confidence_parametric.is_some(), uses_parametric);
            }
        }
    }
}

#[test]
fn reductions_hold_on_random_scripts() {
    for seed in 0..50 {
        let s = RandomScript::new(seed, 5, 4);
        let closed = s.run(DecodeStrategy::RegularClosed, &s.relevant, &s.irrelevant);
        let open = s.run(DecodeStrategy::RegularOpen, &s.relevant, &s.irrelevant);
        assert_eq!(s.run(DecodeStrategy::ContrastiveFixed { alpha: 0.0 }, &s.relevant, &s.irrelevant), closed, "seed {seed}");
        for alpha in [0.5, 1.0, 3.0] {
            assert_eq!(s.run(DecodeStrategy::ContrastiveFixed { alpha }, &s.relevant, &s.relevant), closed, "seed {seed}");
        }
        assert_eq!(s.run(DecodeStrategy::ContrastiveDynamic, &s.relevant, &s.relevant), closed, "seed {seed}");
        assert_eq!(s.run(DecodeStrategy::Cad { alpha: 0.0 }, &s.relevant, &s.irrelevant), open, "seed {seed}");
    }
}

#[test]
fn dynamic_alpha_follows_the_piecewise_rule() {
    let mut r = rng(7);
    for i in 0..10_000 {
        let n = 2 + i % 30;
        let p = softmax(&random_logits(&mut r, n, 6.0));
        let pr = if i % 10 == 0 { p.clone() } else { softmax(&random_logits(&mut r, n, 6.0)) };
        let a = dynamic_alpha(&p, &pr);
        assert!((0.0..=1.0).contains(&a));
        assert_eq!(a, dynamic_alpha_oracle(&p, &pr));
    }
}

#[test]
fn flip_point_of_the_two_token_family() {
    // combined = [a(1 - alpha), alpha b]; token 1 wins once alpha > a / (a + b)
    let mut r = rng(11);
    for _ in 0..100 {
        let a = r.gen_range(0.05..10.0);
        let b = r.gen_range(0.05..10.0);
        let found = bisect_flip(a, b, 4.0, 1e-12);
        assert!((found - a / (a + b)).abs() < 1e-9, "a={a} b={b} found={found}");
    }
}

#[test]
fn contrastive_arbitration_prefers_the_context_answer() {
    // tokens A=0, B=1, eos=2
    assert_eq!(two_token_choice([2.0, 0.0], [0.0, 2.0], [2.0, 0.0], 1.0), 1);
    let info = VocabInfo::new(3, 2).unwrap();
    let mut m = ScriptedModel::new(info, vec!["A".into(), "B".into(), String::new()]).unwrap();
    m.insert(vec![0], vec![3.0, 1.0, -5.0]).unwrap();
    m.insert(vec![1], vec![1.0, 3.0, -5.0]).unwrap();
    m.insert(vec![2], vec![3.0, 1.0, -5.0]).unwrap();
    let prompts = BranchPrompts::new(info)
        .with(Branch::Parametric, TokenSequence::new(vec![0]))
        .with(Branch::Relevant, TokenSequence::new(vec![1]))
        .with(Branch::Irrelevant, TokenSequence::new(vec![2]));
    let limits = DecodeLimits { max_new_tokens: 1, stop_strings: vec![] };
    let first = |s: DecodeStrategy| decode(&s, &prompts, &m, &limits).unwrap().tokens.ids()[0];
    assert_eq!(first(DecodeStrategy::RegularClosed), 0);
    assert_eq!(first(DecodeStrategy::ContrastiveFixed { alpha: 1.0 }), 1);
}
