//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mcdecode::{LogitVector, Passage, ScriptedModel, VocabInfo};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_logits(rng: &mut ChaCha8Rng, vocab: usize) -> LogitVector {
    LogitVector::new((0..vocab).map(|_| rng.gen_range(-10.0..10.0)).collect()).expect("finite")
}

/// Scripted model whose every prefix maps to one random logit vector, with
/// eos pushed to the bottom so decodes run to the token limit.
pub fn flat_model(seed: u64, vocab: usize) -> ScriptedModel {
    let mut rng = rng(seed);
    let mut z = random_logits(&mut rng, vocab).into_inner();
    z[0] = -1e3;
    let info = VocabInfo::new(vocab, 0).expect("valid vocab");
    let tokens = (0..vocab).map(|i| format!("<{i}>")).collect();
    let mut model = ScriptedModel::new(info, tokens).expect("surfaces match");
    model.insert(vec![], z).expect("entry fits");
    model
}

/// `n` passages of `len` words drawn from a `vocab`-word lexicon.
pub fn random_corpus(seed: u64, n: usize, len: usize, vocab: usize) -> Vec<Passage> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let text: Vec<String> = (0..len)
                .map(|_| format!("w{}", rng.gen_range(0..vocab)))
                .collect();
            Passage::new(format!("p{i}"), "", text.join(" "))
        })
        .collect()
}

pub fn random_query(rng: &mut ChaCha8Rng, terms: usize, vocab: usize) -> String {
    (0..terms)
        .map(|_| format!("w{}", rng.gen_range(0..vocab)))
        .collect::<Vec<_>>()
        .join(" ")
}
