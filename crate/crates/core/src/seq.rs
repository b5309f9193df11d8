//! Synthetic sequence-labelling experiment.
//!
//! Words are drawn from a small random vocabulary over an alphabet of size
//! `alphabet`. Every character is observed as its one-hot vector plus
//! Gaussian noise; these observations are the initial node states. A chain
//! of `k`-order sequence factors is stacked under the neural layer and a
//! per-node softmax head predicts the clean characters. Because words come
//! from a small vocabulary, context carries information the noisy
//! observation of a single character does not.
//!
//! The baseline trains the same softmax head directly on the observations.

use ndarray::{Array1, Array2, Axis};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::builder::build_sequence;
use crate::error::{Error, Result};
use crate::neural::layer::{backward_layers, forward_layers};
use crate::neural::params::{uniform_matrix, uniform_vector, LayerParams, ParamSet};
use crate::neural::train::{add_into, all_finite};
use crate::neural::{Adam, HiddenStates, NeuralGraph};
use crate::par;
use crate::rng::{self, SeededRng};

pub const CSV_HEADER: &str = "model,order,seed,noise,rank,final_loss,accuracy";

#[derive(Debug, Clone, PartialEq)]
pub struct SeqConfig {
    pub vocab_size: usize,
    pub word_len: usize,
    pub alphabet: usize,
    pub train_words: usize,
    pub test_words: usize,
    pub orders: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub layers: usize,
    /// Defaults to twice the hidden width.
    pub rank: Option<usize>,
    pub parallel: bool,
}

impl Default for SeqConfig {
    fn default() -> Self {
        SeqConfig {
            vocab_size: 20,
            word_len: 6,
            alphabet: 8,
            train_words: 1000,
            test_words: 200,
            orders: vec![1, 2, 3],
            noise: 0.5,
            seed: 0,
            epochs: 10,
            batch: 10,
            lr: 1e-2,
            layers: 1,
            rank: None,
            parallel: false,
        }
    }
}

impl SeqConfig {
    /// Hidden width equals the alphabet size.
    pub fn d_h(&self) -> usize {
        self.alphabet
    }

    pub fn rank(&self) -> usize {
        self.rank.unwrap_or(2 * self.d_h())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(2..=26).contains(&self.alphabet) {
            return bad(format!("alphabet must be in 2..=26, got {}", self.alphabet));
        }
        if !(1..=50).contains(&self.vocab_size) {
            return bad(format!("vocab_size must be in 1..=50, got {}", self.vocab_size));
        }
        if self.word_len == 0 || self.train_words == 0 || self.test_words == 0 || self.batch == 0 {
            return bad("word_len, train_words, test_words and batch must be positive".into());
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return bad(format!("orders must be non-empty and positive, got {:?}", self.orders));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        if self.layers == 0 || self.rank() == 0 {
            return bad("layers and rank must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Word {
    pub labels: Vec<usize>,
    pub h0: Array2<f64>,
}

pub fn make_vocab(cfg: &SeqConfig, rng: &mut SeededRng) -> Vec<Vec<usize>> {
    (0..cfg.vocab_size)
        .map(|_| (0..cfg.word_len).map(|_| rng.random_range(0..cfg.alphabet)).collect())
        .collect()
}

pub fn sample_words(vocab: &[Vec<usize>], count: usize, alphabet: usize, noise: f64, rng: &mut SeededRng) -> Vec<Word> {
    let normal = Normal::new(0.0, noise).expect("noise is finite and non-negative");
    (0..count)
        .map(|_| {
            let labels = vocab.choose(rng).expect("non-empty vocabulary").clone();
            let mut h0 = Array2::zeros((labels.len(), alphabet));
            for (p, &c) in labels.iter().enumerate() {
                for x in 0..alphabet {
                    h0[[p, x]] = if x == c { 1.0 } else { 0.0 } + normal.sample(rng);
                }
            }
            Word { labels, h0 }
        })
        .collect()
}

/// Per-node softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeHead {
    /// `classes x d_h`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl NodeHead {
    pub fn init(d_h: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (d_h as f64).sqrt();
        NodeHead { w: uniform_matrix(rng, classes, d_h, bound), b: uniform_vector(rng, classes, bound) }
    }

    pub fn zeros_like(&self) -> Self {
        NodeHead { w: Array2::zeros(self.w.dim()), b: Array1::zeros(self.b.len()) }
    }

    pub fn logits(&self, h: &Array2<f64>) -> Array2<f64> {
        h.dot(&self.w.t()) + &self.b
    }

    pub fn predict(&self, h: &Array2<f64>) -> Vec<usize> {
        self.logits(h)
            .axis_iter(Axis(0))
            .map(|row| row.iter().enumerate().fold(0, |best, (k, &v)| if v > row[best] { k } else { best }))
            .collect()
    }

    /// Mean cross-entropy over nodes, head gradients and `dL/dh`.
    pub fn loss_and_grad(&self, h: &Array2<f64>, labels: &[usize]) -> (f64, NodeHead, Array2<f64>) {
        let n = h.nrows() as f64;
        let mut dz = self.logits(h);
        let mut loss = 0.0;
        for (mut row, &y) in dz.axis_iter_mut(Axis(0)).zip(labels) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|z| (z - m).exp());
            let s: f64 = row.sum();
            loss += s.ln() - row[y].ln();
            row.mapv_inplace(|e| e / s / n);
            row[y] -= 1.0 / n;
        }
        let grad = NodeHead { w: dz.t().dot(h), b: dz.sum_axis(Axis(0)) };
        (loss / n, grad, dz.dot(&self.w))
    }
}

impl ParamSet for NodeHead {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![("head.w".into(), self.w.as_slice().unwrap()), ("head.b".into(), self.b.as_slice().unwrap())]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().unwrap(), self.b.as_slice_mut().unwrap()]
    }
}

#[derive(Debug, Clone, PartialEq)]
struct SeqModel {
    layer: Option<LayerParams>,
    head: NodeHead,
}

impl SeqModel {
    fn zeros_like(&self) -> Self {
        SeqModel { layer: self.layer.as_ref().map(|p| p.zeros_like()), head: self.head.zeros_like() }
    }
}

impl ParamSet for SeqModel {
    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.layer.as_ref().map(|p| p.tensors()).unwrap_or_default();
        t.extend(self.head.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.layer.as_mut().map(|p| p.tensors_mut()).unwrap_or_default();
        t.extend(self.head.tensors_mut());
        t
    }
}

struct Trainer<'a> {
    graph: Option<&'a NeuralGraph>,
    layers: usize,
}

impl Trainer<'_> {
    fn states(&self, m: &SeqModel, w: &Word) -> Result<Array2<f64>> {
        match (self.graph, &m.layer) {
            (Some(g), Some(p)) => Ok(forward_layers(&HiddenStates::new(w.h0.clone()), g, p, self.layers, false)?.0.values),
            _ => Ok(w.h0.clone()),
        }
    }

    fn loss_and_grad(&self, m: &SeqModel, w: &Word) -> Result<(f64, SeqModel)> {
        let (Some(g), Some(p)) = (self.graph, &m.layer) else {
            let (loss, head, _) = m.head.loss_and_grad(&w.h0, &w.labels);
            return Ok((loss, SeqModel { layer: None, head }));
        };
        let (h, tapes) = forward_layers(&HiddenStates::new(w.h0.clone()), g, p, self.layers, false)?;
        let (loss, head, dh) = m.head.loss_and_grad(&h.values, &w.labels);
        let layer = backward_layers(&tapes, g, p, &dh)?.params;
        Ok((loss, SeqModel { layer: Some(layer), head }))
    }

    fn train(&self, model: &mut SeqModel, words: &[Word], cfg: &SeqConfig, rng: &mut SeededRng) -> Result<f64> {
        let mut opt = Adam::for_params(model);
        let mut order: Vec<usize> = (0..words.len()).collect();
        let mut epoch_loss = f64::NAN;
        for _ in 0..cfg.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            epoch_loss = 0.0;
            for chunk in order.chunks(cfg.batch) {
                let per = par::try_map_range(chunk.len(), cfg.parallel, |k| self.loss_and_grad(model, &words[chunk[k]]))?;
                let mut grad = model.zeros_like();
                let scale = 1.0 / chunk.len() as f64;
                for (l, g) in &per {
                    epoch_loss += l;
                    add_into(&mut grad, g, scale);
                }
                if !all_finite(&grad) {
                    return Err(Error::NonFinite { iteration: opt.t as usize, context: "sequence training".into() });
                }
                opt.step(model, &grad, cfg.lr)?;
            }
            epoch_loss /= words.len() as f64;
        }
        Ok(epoch_loss)
    }

    fn accuracy(&self, model: &SeqModel, words: &[Word]) -> Result<f64> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for w in words {
            let pred = model.head.predict(&self.states(model, w)?);
            correct += pred.iter().zip(&w.labels).filter(|(a, b)| a == b).count();
            total += w.labels.len();
        }
        Ok(correct as f64 / total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeqRecord {
    /// `"lrbp"` or `"baseline"`.
    pub model: String,
    /// `None` for the baseline.
    pub order: Option<usize>,
    pub seed: u64,
    pub noise: f64,
    pub rank: usize,
    pub final_loss: f64,
    pub accuracy: f64,
}

/// Trains one model per order plus the baseline on the same data.
pub fn run_seq_experiment(cfg: &SeqConfig) -> Result<Vec<SeqRecord>> {
    cfg.validate()?;
    let (d_h, rank) = (cfg.d_h(), cfg.rank());
    if rank < 2 * d_h {
        log::warn!("rank {rank} is below twice the hidden width ({})", 2 * d_h);
    }
    let mut data_rng = rng::seeded(cfg.seed);
    let vocab = make_vocab(cfg, &mut data_rng);
    let train = sample_words(&vocab, cfg.train_words, cfg.alphabet, cfg.noise, &mut data_rng);
    let test = sample_words(&vocab, cfg.test_words, cfg.alphabet, cfg.noise, &mut data_rng);

    let record = |model: &str, order, final_loss, accuracy| SeqRecord {
        model: model.into(),
        order,
        seed: cfg.seed,
        noise: cfg.noise,
        rank,
        final_loss,
        accuracy,
    };

    let mut out = Vec::new();
    let mut init_rng = rng::seeded(cfg.seed ^ 0x5eed_0001);
    let head = NodeHead::init(d_h, cfg.alphabet, &mut init_rng);
    {
        let trainer = Trainer { graph: None, layers: 0 };
        let mut model = SeqModel { layer: None, head: head.clone() };
        let loss = trainer.train(&mut model, &train, cfg, &mut rng::seeded(cfg.seed ^ 0x5eed_0002))?;
        out.push(record("baseline", None, loss, trainer.accuracy(&model, &test)?));
    }
    for &k in &cfg.orders {
        let graph = build_sequence(cfg.word_len, k, rank, true)?.to_neural_graph()?;
        let layer = LayerParams::init(graph.slot_keys(), d_h, rank, 2 * d_h, cfg.seed ^ 0x5eed_0003)?;
        let trainer = Trainer { graph: Some(&graph), layers: cfg.layers };
        let mut model = SeqModel { layer: Some(layer), head: head.clone() };
        let loss = trainer.train(&mut model, &train, cfg, &mut rng::seeded(cfg.seed ^ 0x5eed_0002))?;
        out.push(record("lrbp", Some(k), loss, trainer.accuracy(&model, &test)?));
    }
    Ok(out)
}
