//! Hand-specified next-token models for checking search against enumeration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::SequenceModel;
use crate::tensor::softmax_row;

/// Log-probabilities drawn afresh for every distinct prefix, reproducible
/// from `(seed, prefix)`.
#[derive(Debug, Clone)]
pub struct RandomPrefixModel {
    pub vocab_size: usize,
    pub seed: u64,
    pub scale: f64,
}

impl RandomPrefixModel {
    pub fn new(vocab_size: usize, seed: u64) -> Self {
        RandomPrefixModel {
            vocab_size,
            seed,
            scale: 2.0,
        }
    }

    pub fn log_probs(&self, prefix: &[usize]) -> Vec<f64> {
        let mut h = self.seed ^ 0x9e37_79b9_7f4a_7c15;
        for &t in prefix {
            h = splitmix(h ^ (t as u64 + 1));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(h));
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|_| self.scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        softmax_row(&logits).into_iter().map(f64::ln).collect()
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl SequenceModel for RandomPrefixModel {
    type State = Vec<usize>;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn start(&self) -> Result<(Vec<usize>, Vec<f64>)> {
        Ok((Vec::new(), self.log_probs(&[])))
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let mut next = state.clone();
        next.push(token);
        let lp = self.log_probs(&next);
        Ok((next, lp))
    }
}

/// Log-probabilities that depend only on the previous token.
#[derive(Debug, Clone)]
pub struct BigramModel {
    /// `table[prev]` is the log-distribution after token `prev`; the start
    /// token's row is used first.
    pub table: Vec<Vec<f64>>,
}

impl SequenceModel for BigramModel {
    type State = usize;

    fn vocab_size(&self) -> usize {
        self.table.len()
    }

    fn start(&self) -> Result<(usize, Vec<f64>)> {
        Ok((crate::data::START, self.table[crate::data::START].clone()))
    }

    fn advance(&self, _: &usize, token: usize) -> Result<(usize, Vec<f64>)> {
        Ok((token, self.table[token].clone()))
    }
}

/// Every legal caption with its total log-probability, by exhaustive enumeration.
pub fn enumerate_legal<M: SequenceModel>(
    model: &M,
    cfg: &super::BeamConfig,
) -> Result<Vec<(Vec<usize>, f64)>> {
    fn walk<M: SequenceModel>(
        model: &M,
        cfg: &super::BeamConfig,
        words: &mut Vec<usize>,
        state: &M::State,
        lp: &[f64],
        acc: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) -> Result<()> {
        for (token, &l) in lp.iter().enumerate().take(model.vocab_size()) {
            if !super::allowed(words, token, cfg) {
                continue;
            }
            if token == crate::data::END {
                out.push((words.clone(), acc + l));
            } else {
                let (next, next_lp) = model.advance(state, token)?;
                words.push(token);
                walk(model, cfg, words, &next, &next_lp, acc + l, out)?;
                words.pop();
            }
        }
        Ok(())
    }
    let (state, lp) = model.start()?;
    let mut out = Vec::new();
    walk(model, cfg, &mut Vec::new(), &state, &lp, 0.0, &mut out)?;
    Ok(out)
}

/// The most probable legal caption; ties go to the lower token sequence.
pub fn exhaustive_best<M: SequenceModel>(model: &M, cfg: &super::BeamConfig) -> Result<Option<(Vec<usize>, f64)>> {
    let mut all = enumerate_legal(model, cfg)?;
    all.sort_by(|(sa, a), (sb, b)| {
        let mut ea = sa.clone();
        ea.push(crate::data::END);
        let mut eb = sb.clone();
        eb.push(crate::data::END);
        b.total_cmp(a).then_with(|| ea.cmp(&eb))
    });
    Ok(all.into_iter().next())
}
