//! Token representations: pretrained word vectors, a trainable character
//! CNN, and pretrained document vectors.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::params::{Binder, ParamBuilder, ParamId};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Token that always maps to the zero word vector.
pub const PAD_TOKEN: &str = "<pad>";

/// Lowercases, splits on whitespace and trims surrounding punctuation.
/// A `#` or `@` directly in front of the first alphanumeric character is
/// kept, so hashtags and mentions survive. Tokens left empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let lower = raw.to_lowercase();
            let trimmed = lower.trim_end_matches(|c: char| !c.is_alphanumeric());
            let start = trimmed.find(|c: char| c.is_alphanumeric())?;
            let prefix = trimmed[..start]
                .chars()
                .next_back()
                .filter(|c| matches!(c, '#' | '@'));
            let body = &trimmed[start..];
            Some(match prefix {
                Some(p) => format!("{p}{body}"),
                None => body.to_owned(),
            })
        })
        .collect()
}

/// Vocabulary of fixed-width `f32` vectors, kept in insertion order.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        let token = token.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension {
                what: "embedding vector",
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken(token));
        }
        self.index.insert(token.clone(), self.tokens.len());
        self.tokens.push(token);
        self.data.extend(vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        let i = *self.index.get(token)?;
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        let dim = self.dim;
        self.tokens
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.as_str(), &self.data[i * dim..(i + 1) * dim]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordLookup {
    pub vector: Vec<f64>,
    /// The token was not in the table and `vector` is all zeros.
    pub oov: bool,
}

/// Pretrained word vector for `token`; zeros for [`PAD_TOKEN`] and for
/// out-of-vocabulary tokens (the latter flagged).
pub fn lookup_word(table: &EmbeddingTable, token: &str) -> WordLookup {
    if token == PAD_TOKEN {
        return WordLookup {
            vector: vec![0.0; table.dim()],
            oov: false,
        };
    }
    match table.get(token) {
        Some(v) => WordLookup {
            vector: v.iter().map(|&x| f64::from(x)).collect(),
            oov: false,
        },
        None => WordLookup {
            vector: vec![0.0; table.dim()],
            oov: true,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocLookup {
    pub vector: Vec<f64>,
    /// No stored vector existed; `vector` is the mean of the known word
    /// vectors of the document (zeros if none were known).
    pub fallback: bool,
}

/// Pretrained document vector for `doc_id`, falling back to the mean word
/// vector of `tokens`.
pub fn lookup_doc(
    docs: &EmbeddingTable,
    doc_id: &str,
    tokens: &[String],
    words: &EmbeddingTable,
) -> Result<DocLookup> {
    if let Some(v) = docs.get(doc_id) {
        return Ok(DocLookup {
            vector: v.iter().map(|&x| f64::from(x)).collect(),
            fallback: false,
        });
    }
    if words.dim() != docs.dim() {
        return Err(Error::Dimension {
            what: "word table used for document fallback",
            expected: docs.dim(),
            actual: words.dim(),
        });
    }
    let mut sum = vec![0.0; docs.dim()];
    let mut known = 0usize;
    for v in tokens.iter().filter_map(|t| words.get(t)) {
        for (s, &x) in sum.iter_mut().zip(v) {
            *s += f64::from(x);
        }
        known += 1;
    }
    if known > 0 {
        sum.iter_mut().for_each(|s| *s /= known as f64);
    }
    Ok(DocLookup {
        vector: sum,
        fallback: true,
    })
}

/// Character inventory of the char-CNN. Row 0 of the character table is the
/// unknown-character vector and row 1 the padding vector; known characters
/// follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub const UNK: usize = 0;
    pub const PAD: usize = 1;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let sorted: BTreeSet<char> = chars.into_iter().collect();
        let chars: Vec<char> = sorted.into_iter().collect();
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        Self { chars, index }
    }

    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        Self::from_chars(tokens.into_iter().flat_map(str::chars))
    }

    /// Known characters, concatenated in row order.
    pub fn to_text(&self) -> String {
        self.chars.iter().collect()
    }

    /// Number of table rows, including the unknown and padding rows.
    pub fn rows(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(Self::UNK)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharCnnConfig {
    pub char_dim: usize,
    pub kernel_width: usize,
    /// Output channels of each convolution layer; the last is the word
    /// vector width.
    pub channels: Vec<usize>,
}

impl Default for CharCnnConfig {
    fn default() -> Self {
        Self {
            char_dim: 16,
            kernel_width: 3,
            channels: vec![32, 32, 32],
        }
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernels: ParamId,
    bias: ParamId,
}

/// Character-level word encoder: character vectors, a stack of valid
/// convolutions with ReLU, then max-pooling over time.
#[derive(Clone, Debug)]
pub struct CharCnn {
    vocab: CharVocab,
    config: CharCnnConfig,
    table: ParamId,
    layers: Vec<ConvLayer>,
}

impl CharCnn {
    pub fn new(
        vocab: CharVocab,
        config: CharCnnConfig,
        params: &mut ParamBuilder<'_>,
    ) -> Result<Self> {
        if config.channels.is_empty() || config.kernel_width == 0 || config.char_dim == 0 {
            return Err(Error::Config(
                "char-CNN needs at least one layer and nonzero widths".into(),
            ));
        }
        let w = config.kernel_width;
        let table = params.weight(
            "char_table",
            &[vocab.rows(), config.char_dim],
            vocab.rows(),
            config.char_dim,
        );
        let mut layers = Vec::with_capacity(config.channels.len());
        let mut cin = config.char_dim;
        for (i, &cout) in config.channels.iter().enumerate() {
            let kernels = params.weight(
                &format!("conv{i}.kernels"),
                &[w, cin, cout],
                w * cin,
                w * cout,
            );
            let bias = params.bias(&format!("conv{i}.bias"), cout);
            layers.push(ConvLayer { kernels, bias });
            cin = cout;
        }
        Ok(Self {
            vocab,
            config,
            table,
            layers,
        })
    }

    pub fn vocab(&self) -> &CharVocab {
        &self.vocab
    }

    pub fn config(&self) -> &CharCnnConfig {
        &self.config
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn output_dim(&self) -> usize {
        *self.config.channels.last().expect("at least one layer")
    }

    /// Shortest character sequence that survives every valid convolution.
    pub fn min_len(&self) -> usize {
        1 + self.layers.len() * (self.config.kernel_width - 1)
    }

    /// Encodes one token as a vector of length [`CharCnn::output_dim`].
    /// Tokens shorter than [`CharCnn::min_len`] are right-padded with the
    /// padding character.
    pub fn embed_word(&self, tape: &mut Tape, binder: &mut Binder<'_>, token: &str) -> Result<Var> {
        if token.is_empty() {
            return Err(Error::EmptyToken);
        }
        let mut ids: Vec<usize> = token.chars().map(|c| self.vocab.id(c)).collect();
        if ids.len() < self.min_len() {
            ids.resize(self.min_len(), CharVocab::PAD);
        }
        let table = binder.var(tape, self.table);
        let mut x = tape.gather_rows(table, &ids)?;
        for layer in &self.layers {
            let k = binder.var(tape, layer.kernels);
            let b = binder.var(tape, layer.bias);
            let conv = tape.conv1d(x, k, b)?;
            x = tape.relu(conv);
        }
        Ok(tape.maxpool_over_time(x)?)
    }
}

/// Embedded title: one row per position, `[k × (word_dim + char_dim)]`.
#[derive(Clone, Debug)]
pub struct TitleEmbedding {
    pub rows: Var,
    /// `true` for positions holding a real token.
    pub mask: Vec<bool>,
    /// Tokens dropped because the title exceeded `k`.
    pub truncated: usize,
    /// Tokens without a pretrained word vector.
    pub oov: usize,
}

/// Concatenates word and char-CNN vectors per token, right-padding with
/// zero rows (masked out) or truncating to exactly `k` positions.
pub fn embed_title(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    words: &EmbeddingTable,
    chars: &CharCnn,
    tokens: &[String],
    k: usize,
) -> Result<TitleEmbedding> {
    if k == 0 {
        return Err(Error::Config("title length cap must be at least 1".into()));
    }
    let width = words.dim() + chars.output_dim();
    let kept = &tokens[..tokens.len().min(k)];
    let mut rows = Vec::with_capacity(k);
    let mut oov = 0;
    for token in kept {
        let word = lookup_word(words, token);
        oov += usize::from(word.oov);
        let wv = tape.constant(Tensor::vector(word.vector));
        let cv = chars.embed_word(tape, binder, token)?;
        let row = tape.concat(&[wv, cv], 0)?;
        rows.push(tape.reshape(row, &[1, width])?);
    }
    let pad = k - kept.len();
    if pad > 0 {
        rows.push(tape.constant(Tensor::zeros(&[pad, width])));
    }
    let rows = tape.concat(&rows, 0)?;
    let mut mask = vec![true; kept.len()];
    mask.resize(k, false);
    Ok(TitleEmbedding {
        rows,
        mask,
        truncated: tokens.len() - kept.len(),
        oov,
    })
}
