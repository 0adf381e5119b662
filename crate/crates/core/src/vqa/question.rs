//! Word-embedding lookup and the recurrent question encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use candle_core::{Device, Module, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Scope};

/// Seed of the out-of-vocabulary vector.
pub const OOV_SEED: u64 = 0;
const OOV_STD: f64 = 0.1;

/// A text embedding asset: one `word v1 v2 ... vD` line per word.
#[derive(Debug, Clone)]
pub struct WordEmbeddings {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<Vec<f32>>,
}

impl WordEmbeddings {
    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::EmbeddingAssetMissing(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut dim = 0;
        let mut index = HashMap::new();
        let mut vectors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(str::parse::<f32>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::MalformedRow {
                    row: i + 1,
                    reason: e.to_string(),
                })?;
            if values.is_empty() || (dim != 0 && values.len() != dim) {
                return Err(Error::MalformedRow {
                    row: i + 1,
                    reason: format!("expected {dim} components, found {}", values.len()),
                });
            }
            dim = values.len();
            if !index.contains_key(word) {
                index.insert(word.to_string(), vectors.len());
                vectors.push(values);
            }
        }
        if vectors.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { dim, index, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, word: &str) -> Option<&[f32]> {
        self.index.get(word).map(|&i| self.vectors[i].as_slice())
    }
}

/// Lowercased word tokens of a question.
pub fn question_words(question: &str) -> Vec<String> {
    static WORD: OnceLock<Regex> = OnceLock::new();
    let re = WORD.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+(?:'[\p{L}]+)?").unwrap());
    re.find_iter(&question.to_lowercase())
        .map(|m| m.as_str().to_string())
        .collect()
}

/// `ids` is padded to a fixed length; only the first `count` are real.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionTokens {
    pub ids: Vec<u32>,
    pub count: usize,
}

/// The model's frozen word table. Row 0 is the shared out-of-vocabulary
/// vector; rows `1..` are the known words in `words` order.
#[derive(Debug, Clone, PartialEq)]
pub struct WordTable {
    dim: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
    vectors: Vec<f32>,
}

impl WordTable {
    /// Keeps the asset words that occur in `questions`, in first-seen order.
    pub fn build<'a>(asset: &WordEmbeddings, questions: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for q in questions {
            for w in question_words(q) {
                if asset.get(&w).is_some() && seen.insert(w.clone()) {
                    words.push(w);
                }
            }
        }
        let mut vectors = oov_vector(asset.dim());
        for w in &words {
            vectors.extend_from_slice(asset.get(w).unwrap());
        }
        Self::from_parts(words, vectors, asset.dim()).expect("consistent table")
    }

    /// Restores a table from its persisted form (`vectors` includes row 0).
    pub fn from_parts(words: Vec<String>, vectors: Vec<f32>, dim: usize) -> Result<Self> {
        if dim == 0 || vectors.len() != (words.len() + 1) * dim {
            return Err(Error::CorruptCheckpoint(format!(
                "word table with {} words and {} values at dim {dim}",
                words.len(),
                vectors.len()
            )));
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 1))
            .collect();
        Ok(Self {
            dim,
            words,
            index,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn rows(&self) -> usize {
        self.words.len() + 1
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(0)
    }

    /// Word ids truncated to `max_tokens` and zero-padded up to it.
    pub fn encode(&self, question: &str, max_tokens: usize) -> Result<QuestionTokens> {
        if max_tokens == 0 {
            return Err(Error::ConfigInvalid("max_tokens must be at least 1".into()));
        }
        let mut ids: Vec<u32> = question_words(question)
            .iter()
            .take(max_tokens)
            .map(|w| self.id(w))
            .collect();
        let count = ids.len();
        ids.resize(max_tokens, 0);
        Ok(QuestionTokens { ids, count })
    }

    pub fn tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.vectors.clone(), (self.rows(), self.dim), device)?)
    }
}

/// The fallback vector: a fixed draw from a stream seeded with [`OOV_SEED`].
pub fn oov_vector(dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(OOV_SEED);
    let dist = Normal::new(0.0, OOV_STD).unwrap();
    (0..dim).map(|_| dist.sample(&mut rng) as f32).collect()
}

/// Single-layer LSTM (gate order i, f, g, o) whose state is frozen once a
/// sequence runs out of real tokens.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Linear,
    w_hh: Linear,
    hidden: usize,
}

impl Lstm {
    pub fn new(scope: &Scope, input: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            w_ih: Linear::new(&scope.pp("w_ih"), input, 4 * hidden)?,
            w_hh: Linear::new(&scope.pp("w_hh"), hidden, 4 * hidden)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x: [N, T, E]`; returns the hidden state after `counts[i]` steps.
    pub fn forward(&self, x: &Tensor, counts: &[usize]) -> candle_core::Result<Tensor> {
        let (n, t, _) = x.dims3()?;
        let hsz = self.hidden;
        let mut h = Tensor::zeros((n, hsz), x.dtype(), x.device())?;
        let mut c = h.clone();
        for step in 0..t {
            let live: Vec<u8> = counts.iter().map(|&k| u8::from(step < k)).collect();
            if live.iter().all(|&m| m == 0) {
                break;
            }
            let mask = Tensor::from_vec(live, (n, 1), x.device())?
                .broadcast_as((n, hsz))?
                .contiguous()?;
            // Projected per step so padding never changes the arithmetic of real steps.
            let x_t = x.narrow(1, step, 1)?.squeeze(1)?;
            let gates = (self.w_ih.forward(&x_t)? + self.w_hh.forward(&h)?)?;
            let i = candle_nn::ops::sigmoid(&gates.narrow(1, 0, hsz)?)?;
            let f = candle_nn::ops::sigmoid(&gates.narrow(1, hsz, hsz)?)?;
            let g = gates.narrow(1, 2 * hsz, hsz)?.tanh()?;
            let o = candle_nn::ops::sigmoid(&gates.narrow(1, 3 * hsz, hsz)?)?;
            let c_new = ((f * &c)? + (i * g)?)?;
            let h_new = (o * c_new.tanh()?)?;
            c = mask.where_cond(&c_new, &c)?;
            h = mask.where_cond(&h_new, &h)?;
        }
        Ok(h)
    }
}

/// `hidden: [N, H]`, one row per question.
#[derive(Debug, Clone)]
pub struct QuestionEncoding {
    pub hidden: Tensor,
    pub token_counts: Vec<usize>,
}

/// Frozen word lookup followed by the LSTM.
#[derive(Debug, Clone)]
pub struct QuestionEncoder {
    table: WordTable,
    embedding: Var,
    lstm: Lstm,
    max_tokens: usize,
}

impl QuestionEncoder {
    pub fn new(scope: &Scope, table: WordTable, hidden: usize, max_tokens: usize) -> Result<Self> {
        if max_tokens == 0 || hidden == 0 {
            return Err(Error::ConfigInvalid(
                "question encoder needs max_tokens ≥ 1 and hidden ≥ 1".into(),
            ));
        }
        let embedding = scope.buffer("word_embedding", (table.rows(), table.dim()), Init::Const(0.0))?;
        embedding.set(&table.tensor(scope.device())?)?;
        Ok(Self {
            lstm: Lstm::new(&scope.pp("lstm"), table.dim(), hidden)?,
            table,
            embedding,
            max_tokens,
        })
    }

    pub fn table(&self) -> &WordTable {
        &self.table
    }

    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn tokenize(&self, question: &str) -> Result<QuestionTokens> {
        self.table.encode(question, self.max_tokens)
    }

    /// Encodes pre-tokenized questions. Rows may carry any amount of padding.
    pub fn encode_tokens(&self, batch: &[QuestionTokens]) -> Result<QuestionEncoding> {
        if batch.is_empty() {
            return Err(Error::shape("empty question batch"));
        }
        let width = batch.iter().map(|q| q.ids.len()).max().unwrap_or(0).max(1);
        let rows = self.table.rows() as u32;
        let mut flat = Vec::with_capacity(batch.len() * width);
        for q in batch {
            if q.count > q.ids.len() {
                return Err(Error::shape(format!(
                    "{} real tokens in a row of {}",
                    q.count,
                    q.ids.len()
                )));
            }
            if let Some(&id) = q.ids.iter().find(|&&id| id >= rows) {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: rows as usize,
                });
            }
            flat.extend_from_slice(&q.ids);
            flat.resize(flat.len() + width - q.ids.len(), 0);
        }
        let ids = Tensor::from_vec(flat, batch.len() * width, self.embedding.device())?;
        let x = self
            .embedding
            .as_tensor()
            .index_select(&ids, 0)?
            .reshape((batch.len(), width, self.table.dim()))?;
        let counts: Vec<usize> = batch.iter().map(|q| q.count).collect();
        let hidden = self.lstm.forward(&x, &counts)?;
        Ok(QuestionEncoding {
            hidden,
            token_counts: counts,
        })
    }

    pub fn encode_questions(&self, questions: &[&str]) -> Result<QuestionEncoding> {
        let tokens = questions.iter().map(|q| self.tokenize(q)).collect::<Result<Vec<_>>>()?;
        self.encode_tokens(&tokens)
    }
}
