use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{char_ngrams, hash_ngram, EmbeddingError, EmbeddingModel, TrainingConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStats {
    /// Mean negative-sampling loss per prediction, one entry per epoch.
    pub epoch_losses: Vec<f64>,
    pub tokens_per_epoch: u64,
}

/// Parameter storage the update kernel can read and write through `&self`.
///
/// `[Cell<f32>]` backs the deterministic single-worker mode; `[AtomicU32]`
/// backs the multi-worker mode, where concurrent read-modify-write sequences
/// may lose updates.
trait Store {
    fn get(&self, i: usize) -> f32;
    fn add(&self, i: usize, v: f32);
}

impl Store for [Cell<f32>] {
    #[inline]
    fn get(&self, i: usize) -> f32 {
        self[i].get()
    }

    #[inline]
    fn add(&self, i: usize, v: f32) {
        self[i].set(self[i].get() + v);
    }
}

impl Store for [AtomicU32] {
    #[inline]
    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self[i].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, i: usize, v: f32) {
        let cur = f32::from_bits(self[i].load(Ordering::Relaxed));
        self[i].store((cur + v).to_bits(), Ordering::Relaxed);
    }
}

struct Plan<'a> {
    cfg: &'a TrainingConfig,
    /// Input-row ids per vocabulary word: the word row, then `vocab + bucket`.
    subwords: Vec<Vec<u32>>,
    sentences: Vec<Vec<u32>>,
    negatives: WeightedIndex<f64>,
    total_steps: f64,
}

struct Scratch {
    hidden: Vec<f32>,
    grad: Vec<f32>,
    context: Vec<u32>,
}

fn log_clamped(x: f32) -> f64 {
    f64::from(x + 1e-5).ln()
}

impl Plan<'_> {
    fn binary<S: Store + ?Sized>(
        &self,
        output: &S,
        target: u32,
        positive: bool,
        lr: f32,
        scratch: &mut Scratch,
    ) -> f64 {
        let dim = self.cfg.dim;
        let base = target as usize * dim;
        let mut dot = 0.0f32;
        for (j, h) in scratch.hidden.iter().enumerate() {
            dot += output.get(base + j) * h;
        }
        let score = 1.0 / (1.0 + (-dot).exp());
        let label = if positive { 1.0 } else { 0.0 };
        let alpha = lr * (label - score);
        for j in 0..dim {
            scratch.grad[j] += alpha * output.get(base + j);
            output.add(base + j, alpha * scratch.hidden[j]);
        }
        if positive {
            -log_clamped(score)
        } else {
            -log_clamped(1.0 - score)
        }
    }

    /// One pass of CBOW updates over a sentence. Returns (loss sum, predictions).
    fn sentence<S: Store + ?Sized>(
        &self,
        input: &S,
        output: &S,
        sent: &[u32],
        lr: f32,
        rng: &mut ChaCha8Rng,
        scratch: &mut Scratch,
    ) -> (f64, u64) {
        let dim = self.cfg.dim;
        let mut loss = 0.0;
        let mut predictions = 0;
        for pos in 0..sent.len() {
            let reach = rng.gen_range(1..=self.cfg.window);
            let lo = pos.saturating_sub(reach);
            let hi = (pos + reach).min(sent.len() - 1);
            scratch.context.clear();
            for c in lo..=hi {
                if c != pos {
                    scratch.context.extend_from_slice(&self.subwords[sent[c] as usize]);
                }
            }
            if scratch.context.is_empty() {
                continue;
            }

            scratch.hidden.iter_mut().for_each(|h| *h = 0.0);
            for &id in &scratch.context {
                let base = id as usize * dim;
                for (j, h) in scratch.hidden.iter_mut().enumerate() {
                    *h += input.get(base + j);
                }
            }
            let inv = 1.0 / scratch.context.len() as f32;
            scratch.hidden.iter_mut().for_each(|h| *h *= inv);
            scratch.grad.iter_mut().for_each(|g| *g = 0.0);

            let target = sent[pos];
            loss += self.binary(output, target, true, lr, scratch);
            for _ in 0..self.cfg.negatives {
                let neg = self.sample_negative(target, rng);
                loss += self.binary(output, neg, false, lr, scratch);
            }

            for &id in &scratch.context {
                let base = id as usize * dim;
                for (j, g) in scratch.grad.iter().enumerate() {
                    input.add(base + j, *g);
                }
            }
            predictions += 1;
        }
        (loss, predictions)
    }

    fn sample_negative(&self, target: u32, rng: &mut ChaCha8Rng) -> u32 {
        // A one-word vocabulary has no other word to draw.
        for _ in 0..16 {
            let n = self.negatives.sample(rng) as u32;
            if n != target {
                return n;
            }
        }
        target
    }

    fn lr_at(&self, done: u64) -> f32 {
        let progress = (done as f64 / self.total_steps).min(1.0);
        (self.cfg.learning_rate * (1.0 - progress)) as f32
    }

    fn scratch(&self) -> Scratch {
        Scratch {
            hidden: vec![0.0; self.cfg.dim],
            grad: vec![0.0; self.cfg.dim],
            context: Vec::new(),
        }
    }
}

fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: u64) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for sent in corpus {
        for w in sent {
            *counts.entry(w.as_ref()).or_default() += 1;
        }
    }
    let mut vocab: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(w, c)| c >= min_count && !w.is_empty())
        .map(|(w, c)| (w.to_string(), c))
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocab
}

/// Trains CBOW with negative sampling over subword-augmented inputs.
///
/// Input rows start uniform in `±1/dim`, output rows at zero. The learning
/// rate decays linearly to zero over `epochs × tokens`. With `threads == 1`
/// the result is a pure function of the corpus and config.
pub fn train_cbow<S: AsRef<str>>(
    corpus: &[Vec<S>],
    cfg: &TrainingConfig,
) -> Result<(EmbeddingModel, TrainingStats), EmbeddingError> {
    cfg.validate()?;
    let vocab = build_vocab(corpus, cfg.min_word_count);
    if vocab.is_empty() {
        return Err(EmbeddingError::EmptyCorpus {
            min_word_count: cfg.min_word_count,
        });
    }
    let ids: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| (w.as_str(), i as u32))
        .collect();
    let v = vocab.len();
    let subwords = vocab
        .iter()
        .enumerate()
        .map(|(i, (w, _))| {
            std::iter::once(i as u32)
                .chain(
                    char_ngrams(w, cfg.min_ngram, cfg.max_ngram)
                        .iter()
                        .map(|g| (v + hash_ngram(g, cfg.bucket_count)) as u32),
                )
                .collect()
        })
        .collect();
    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .map(|s| s.iter().filter_map(|w| ids.get(w.as_ref()).copied()).collect())
        .filter(|s: &Vec<u32>| !s.is_empty())
        .collect();
    let tokens_per_epoch: u64 = sentences.iter().map(|s| s.len() as u64).sum();
    let negatives = WeightedIndex::new(vocab.iter().map(|(_, c)| (*c as f64).powf(0.75)))
        .expect("vocabulary counts are positive");
    let plan = Plan {
        cfg,
        subwords,
        sentences,
        negatives,
        total_steps: (tokens_per_epoch * cfg.epochs as u64) as f64,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound = 1.0 / cfg.dim as f32;
    let mut input: Vec<f32> = (0..(v + cfg.bucket_count) * cfg.dim)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    let mut output = vec![0.0f32; v * cfg.dim];

    let epoch_losses = if cfg.threads == 1 {
        train_single(&plan, &mut input, &mut output, &mut rng)
    } else {
        train_parallel(&plan, &mut input, &mut output)
    };

    let ngram_matrix = input.split_off(v * cfg.dim);
    let model = EmbeddingModel::from_parts(cfg.clone(), vocab, input, ngram_matrix);
    Ok((
        model,
        TrainingStats {
            epoch_losses,
            tokens_per_epoch,
        },
    ))
}

fn train_single(
    plan: &Plan<'_>,
    input: &mut [f32],
    output: &mut [f32],
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let input = Cell::from_mut(input).as_slice_of_cells();
    let output = Cell::from_mut(output).as_slice_of_cells();
    let mut scratch = plan.scratch();
    let mut done = 0u64;
    let mut losses = Vec::with_capacity(plan.cfg.epochs);
    for _ in 0..plan.cfg.epochs {
        let (mut loss, mut n) = (0.0, 0u64);
        for sent in &plan.sentences {
            let (l, k) = plan.sentence(input, output, sent, plan.lr_at(done), rng, &mut scratch);
            loss += l;
            n += k;
            done += sent.len() as u64;
        }
        losses.push(if n == 0 { 0.0 } else { loss / n as f64 });
    }
    losses
}

fn train_parallel(plan: &Plan<'_>, input: &mut Vec<f32>, output: &mut Vec<f32>) -> Vec<f64> {
    let to_atomic = |v: &[f32]| v.iter().map(|x| AtomicU32::new(x.to_bits())).collect::<Vec<_>>();
    let shared_in = to_atomic(input);
    let shared_out = to_atomic(output);
    let done = AtomicU64::new(0);
    let workers = plan.cfg.threads;
    let mut losses = Vec::with_capacity(plan.cfg.epochs);
    for epoch in 0..plan.cfg.epochs {
        let parts: Vec<(f64, u64)> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let (shared_in, shared_out, done) = (&shared_in, &shared_out, &done);
                    scope.spawn(move || {
                        let mut rng = ChaCha8Rng::seed_from_u64(
                            plan.cfg.seed ^ ((epoch as u64) << 32 | w as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                        );
                        let mut scratch = plan.scratch();
                        let (mut loss, mut n) = (0.0, 0u64);
                        for sent in plan.sentences.iter().skip(w).step_by(workers) {
                            let lr = plan.lr_at(done.load(Ordering::Relaxed));
                            let (l, k) = plan.sentence(
                                shared_in.as_slice(),
                                shared_out.as_slice(),
                                sent,
                                lr,
                                &mut rng,
                                &mut scratch,
                            );
                            loss += l;
                            n += k;
                            done.fetch_add(sent.len() as u64, Ordering::Relaxed);
                        }
                        (loss, n)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        });
        let (loss, n) = parts
            .into_iter()
            .fold((0.0, 0u64), |(a, b), (l, k)| (a + l, b + k));
        losses.push(if n == 0 { 0.0 } else { loss / n as f64 });
    }
    let from_atomic = |v: Vec<AtomicU32>| v.into_iter().map(|a| f32::from_bits(a.into_inner())).collect();
    *input = from_atomic(shared_in);
    *output = from_atomic(shared_out);
    losses
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            dim: 16,
            bucket_count: 5000,
            min_word_count: 1,
            epochs: 5,
            ..Default::default()
        }
    }

    fn corpus_from(lines: &[&str], repeat: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        for _ in 0..repeat {
            for l in lines {
                out.push(l.split_whitespace().map(String::from).collect());
            }
        }
        out
    }

    #[test]
    fn loss_falls_on_two_token_corpus() {
        let corpus = corpus_from(&["alpha beta"], 1000);
        let cfg = TrainingConfig { dim: 4, ..small_cfg() };
        let (_, stats) = train_cbow(&corpus, &cfg).unwrap();
        assert_eq!(stats.epoch_losses.len(), 5);
        assert!(
            stats.epoch_losses[4] < stats.epoch_losses[0],
            "{:?}",
            stats.epoch_losses
        );
    }

    #[test]
    fn loss_falls_across_seeds() {
        let corpus = corpus_from(
            &[
                "get slash api slash users qmark id equals num",
                "post slash api slash login user equals chr pass equals word",
                "get slash shop slash cart qmark item equals num amp qty equals num",
                "put slash api slash users slash num name equals word",
            ],
            250,
        );
        let occurrences: usize = corpus.iter().map(Vec::len).sum();
        assert!(occurrences >= 10_000);
        for seed in [1, 2, 3] {
            let (_, stats) = train_cbow(&corpus, &TrainingConfig { seed, ..small_cfg() }).unwrap();
            assert!(stats.epoch_losses[4] < stats.epoch_losses[0], "seed {seed}: {:?}", stats.epoch_losses);
        }
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let corpus = corpus_from(&["a bb ccc dddd", "bb ccc eeee"], 50);
        let (m1, s1) = train_cbow(&corpus, &small_cfg()).unwrap();
        let (m2, s2) = train_cbow(&corpus, &small_cfg()).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
        let (m3, _) = train_cbow(&corpus, &TrainingConfig { seed: 9, ..small_cfg() }).unwrap();
        assert_ne!(m1, m3);
    }

    #[test]
    fn singleton_corpus_filtered_empty() {
        let corpus = corpus_from(&["one two three four"], 1);
        let cfg = TrainingConfig { min_word_count: 2, ..small_cfg() };
        assert!(matches!(
            train_cbow(&corpus, &cfg),
            Err(EmbeddingError::EmptyCorpus { min_word_count: 2 })
        ));
        let empty: Vec<Vec<String>> = Vec::new();
        assert!(train_cbow(&empty, &small_cfg()).is_err());
    }

    #[test]
    fn vectors_are_finite_and_shaped() {
        let corpus = corpus_from(&["get slash admin slash panel", "get slash user slash panel"], 100);
        let (m, _) = train_cbow(&corpus, &small_cfg()).unwrap();
        for w in ["admin", "panel", "never-seen", "x"] {
            let v = m.word_vector(w);
            assert_eq!(v.len(), 16);
            assert!(v.iter().all(|x| x.is_finite()));
            assert!(v.iter().any(|x| *x != 0.0), "{w} is zero");
        }
    }

    #[test]
    fn oov_uses_ngram_part_only() {
        let corpus = corpus_from(&["admin panel admin"], 50);
        let (m, _) = train_cbow(&corpus, &small_cfg()).unwrap();
        assert!(m.word_id("admin").is_some());
        assert!(m.word_id("nimda").is_none());
        // An OOV word's vector is exactly the n-gram mean that an
        // in-vocabulary word with the same letters would combine with its row.
        assert_eq!(m.word_vector("nimda"), m.ngram_vector("nimda"));
        assert_ne!(m.word_vector("admin"), m.ngram_vector("admin"));
    }

    #[test]
    fn misspelling_stays_close() {
        let corpus = corpus_from(
            &[
                "login slash admin slash console user equals admin",
                "get slash admin slash users qmark page equals num",
                "post slash account slash settings theme equals dark",
                "get slash static slash style dot css",
            ],
            200,
        );
        let cfg = TrainingConfig { dim: 32, bucket_count: 20_000, ..small_cfg() };
        let (m, _) = train_cbow(&corpus, &cfg).unwrap();
        let cos = |a: &[f32], b: &[f32]| {
            let d: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
            let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
            d / (na * nb)
        };
        let admin = m.word_vector("admin");
        let near = cos(&admin, &m.word_vector("admln"));
        let far = cos(&admin, &m.word_vector("zzzz"));
        assert!(near > far, "near {near} far {far}");
    }

    #[test]
    fn sentence_vector_properties() {
        let corpus = corpus_from(&["a bb ccc dddd", "bb ccc eeee"], 20);
        let (m, _) = train_cbow(&corpus, &small_cfg()).unwrap();
        assert_eq!(m.sentence_vector::<&str>(&[]), vec![0.0; 16]);

        let single = m.sentence_vector(&["ccc"]);
        let wv = m.word_vector("ccc");
        let n = wv.iter().map(|x| x * x).sum::<f32>().sqrt();
        for (a, b) in single.iter().zip(&wv) {
            assert!((a - b / n).abs() < 1e-6);
        }

        let fwd = m.sentence_vector(&["bb", "ccc", "zz", "dddd", "bb"]);
        let rev = m.sentence_vector(&["dddd", "bb", "zz", "ccc", "bb"]);
        assert_eq!(fwd, rev);
    }

    #[test]
    fn parallel_mode_trains() {
        let corpus = corpus_from(&["alpha beta gamma", "beta gamma delta"], 300);
        let cfg = TrainingConfig { threads: 3, ..small_cfg() };
        let (m, stats) = train_cbow(&corpus, &cfg).unwrap();
        assert!(stats.epoch_losses[4] < stats.epoch_losses[0]);
        assert!(m.word_vector("gamma").iter().all(|x| x.is_finite()));
    }
}
