use caplab::metrics::{bleu, bleu_n, cider, rouge_l};
use proptest::prelude::*;

fn toks(s: &str) -> Vec<&str> {
    s.split(' ').collect()
}

fn corpus() -> (Vec<Vec<&'static str>>, Vec<Vec<Vec<&'static str>>>) {
    let cands = vec![toks("a man rides horse"), toks("two dogs play in the snow"), toks("child eats food")];
    let refs = vec![
        vec![toks("a man rides a brown horse"), toks("a person on a horse")],
        vec![toks("two dogs play in snow"), toks("dogs running in the snow")],
        vec![toks("a small child eats an apple"), toks("the child is eating")],
    ];
    (cands, refs)
}

#[test]
fn bleu_matches_brute_force_counts() {
    let (c, r) = corpus();
    let expected = [0.8547333033621379, 0.7957134014368314, 0.6945273343611973, 0.5277159154802737];
    let got = bleu(&c, &r).unwrap();
    for n in 0..4 {
        assert!((got[n] - expected[n]).abs() < 1e-12, "BLEU-{}: {}", n + 1, got[n]);
        assert_eq!(bleu_n(&c, &r, n + 1).unwrap(), got[n]);
    }
}

#[test]
fn rouge_and_cider_match_reference_implementation() {
    let (c, r) = corpus();
    assert!((rouge_l(&c, &r).unwrap() - 0.7052127697436322).abs() < 1e-12);
    assert!((cider(&c, &r).unwrap() - 3.0539503676273227).abs() < 1e-12);
}

#[test]
fn scores_shrink_when_a_candidate_is_corrupted() {
    let (mut c, r) = corpus();
    let before = (bleu(&c, &r).unwrap()[3], rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
    c[1] = toks("a cat sleeps");
    let after = (bleu(&c, &r).unwrap()[3], rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
    assert!(after.0 < before.0 && after.1 < before.1 && after.2 < before.2);
}

proptest! {
    #[test]
    fn metrics_stay_in_range(
        cands in prop::collection::vec(prop::collection::vec(0u8..6, 1..8), 2..6),
        seed in 0u8..6,
    ) {
        let refs: Vec<Vec<Vec<u8>>> = cands
            .iter()
            .map(|c| vec![c.iter().map(|t| (t + seed) % 6).collect(), c.clone()])
            .collect();
        for b in bleu(&cands, &refs).unwrap() {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
        }
        let rl = rouge_l(&cands, &refs).unwrap();
        prop_assert!((rl - 1.0).abs() < 1e-12, "candidate equals a reference, got {}", rl);
        prop_assert!(cider(&cands, &refs).unwrap() >= 0.0);
    }
}
