//! The hybrid classifier and its three components.

mod attention;
mod lstm;
mod siamese;

pub use attention::{Attention, AttentionOutput};
pub use lstm::{bilstm, BiLstmOutput, LstmCell, LstmState};
pub use siamese::{Dense, SiameseNet, VisualSiamese};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embeddings::{
    embed_title, lookup_doc, tokenize, CharCnn, CharCnnConfig, CharVocab, EmbeddingTable,
    TitleEmbedding,
};
use crate::io::{description_doc_id, title_doc_id, FeatureBank, PostRecord};
use crate::params::{Binder, Gradients, ParamBuilder, ParamKind, ParamStore};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Layer widths of the hybrid model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub doc_dim: usize,
    pub image_dim: usize,
    pub chars: CharCnnConfig,
    /// LSTM hidden size per direction.
    pub hidden: usize,
    /// Attention hidden size.
    pub attention: usize,
    /// ReLU layer widths of both Siamese branches.
    pub siamese: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            doc_dim: 300,
            image_dim: 4096,
            chars: CharCnnConfig::default(),
            hidden: 64,
            attention: 64,
            siamese: vec![128, 64],
        }
    }
}

impl ModelConfig {
    pub fn token_dim(&self) -> usize {
        self.word_dim + self.chars.channels.last().copied().unwrap_or(0)
    }

    pub fn fusion_dim(&self) -> usize {
        let siamese_out = self.siamese.last().copied().unwrap_or(0);
        2 * self.hidden + 2 * siamese_out
    }

    fn validate(&self) -> Result<()> {
        let zero = [
            self.word_dim,
            self.doc_dim,
            self.image_dim,
            self.hidden,
            self.attention,
        ]
        .contains(&0)
            || self.siamese.is_empty()
            || self.siamese.contains(&0)
            || self.chars.channels.contains(&0);
        if zero {
            return Err(Error::Config(format!(
                "all layer widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Pretrained inputs: word vectors, document vectors, image features.
#[derive(Clone, Debug)]
pub struct Tables {
    pub words: EmbeddingTable,
    pub docs: EmbeddingTable,
    pub images: Option<FeatureBank>,
}

impl Tables {
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let mut pairs = vec![
            ("word embedding table", config.word_dim, self.words.dim()),
            ("document embedding table", config.doc_dim, self.docs.dim()),
        ];
        if let Some(images) = &self.images {
            pairs.push(("image feature bank", config.image_dim, images.dim()));
        }
        for (what, expected, actual) in pairs {
            if expected != actual {
                return Err(Error::Dimension {
                    what,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// A record with its fixed inputs looked up once.
#[derive(Clone, Debug)]
pub struct PreparedRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub title_doc: Arc<Tensor>,
    pub target_doc: Arc<Tensor>,
    /// `None` when the post has no image or the bank lacks it.
    pub image: Option<Arc<Tensor>>,
    pub label: Option<f64>,
    /// Document vectors that came from the word-mean fallback.
    pub doc_fallbacks: usize,
}

impl PreparedRecord {
    pub fn new(record: &PostRecord, tables: &Tables) -> Result<Self> {
        let title = lookup_doc(
            &tables.docs,
            &title_doc_id(&record.id),
            &record.post_title_tokens,
            &tables.words,
        )?;
        let description_tokens = tokenize(&record.target_description);
        let target = lookup_doc(
            &tables.docs,
            &description_doc_id(&record.id),
            &description_tokens,
            &tables.words,
        )?;
        let image = match (&tables.images, &record.image_id) {
            (Some(bank), Some(id)) => bank
                .get(id)
                .map(|v| Arc::new(Tensor::vector(v.iter().map(|&x| f64::from(x)).collect()))),
            _ => None,
        };
        Ok(Self {
            id: record.id.clone(),
            tokens: record.post_title_tokens.clone(),
            title_doc: Arc::new(Tensor::vector(title.vector)),
            target_doc: Arc::new(Tensor::vector(target.vector)),
            image,
            label: record.label.map(f64::from),
            doc_fallbacks: usize::from(title.fallback) + usize::from(target.fallback),
        })
    }
}

/// Everything recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Clickbait probability, shape `[1]`.
    pub prob: Var,
    pub title: TitleEmbedding,
    /// Attention weight per title position (all zero for an empty title).
    pub attention: Vec<f64>,
    pub context: Var,
    pub text_similarity: Var,
    pub visual_similarity: Var,
}

#[derive(Clone, Debug)]
pub struct RecordGradients {
    pub loss: f64,
    pub prob: f64,
    pub grads: Gradients,
}

/// All learnable weights of the classifier plus the structure that reads
/// them.
#[derive(Clone, Debug)]
pub struct HybridModel {
    config: ModelConfig,
    max_title_len: usize,
    params: ParamStore,
    chars: CharCnn,
    lstm_fwd: LstmCell,
    lstm_bwd: LstmCell,
    attention: Attention,
    text: SiameseNet,
    visual: VisualSiamese,
    fusion: Dense,
}

impl HybridModel {
    /// Builds the model, drawing every parameter from `init`. Parameters are
    /// registered in a fixed order, which checkpoints rely on.
    pub fn new(
        config: ModelConfig,
        vocab: CharVocab,
        max_title_len: usize,
        init: &mut dyn FnMut(ParamKind, &[usize]) -> Tensor,
    ) -> Result<Self> {
        config.validate()?;
        if max_title_len == 0 {
            return Err(Error::Config("max title length must be at least 1".into()));
        }
        let mut params = ParamStore::new();
        let mut b = ParamBuilder::new(&mut params, init);
        let token_dim = config.token_dim();
        let chars = b.scoped("chars", |p| CharCnn::new(vocab, config.chars.clone(), p))?;
        let lstm_fwd = b.scoped("lstm_fwd", |p| LstmCell::new(config.hidden, token_dim, p));
        let lstm_bwd = b.scoped("lstm_bwd", |p| LstmCell::new(config.hidden, token_dim, p));
        let attention = b.scoped("attention", |p| {
            Attention::new(2 * config.hidden, config.attention, p)
        });
        let text = b.scoped("text_siamese", |p| {
            SiameseNet::new(config.doc_dim, &config.siamese, p)
        });
        let visual = b.scoped("visual_siamese", |p| {
            VisualSiamese::new(config.image_dim, config.doc_dim, &config.siamese, p)
        });
        let fusion = b.scoped("fusion", |p| Dense::new(config.fusion_dim(), 1, p));
        Ok(Self {
            config,
            max_title_len,
            params,
            chars,
            lstm_fwd,
            lstm_bwd,
            attention,
            text,
            visual,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Title length cap `K`.
    pub fn max_title_len(&self) -> usize {
        self.max_title_len
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn char_cnn(&self) -> &CharCnn {
        &self.chars
    }

    pub fn lstm(&self) -> (&LstmCell, &LstmCell) {
        (&self.lstm_fwd, &self.lstm_bwd)
    }

    pub fn attention(&self) -> &Attention {
        &self.attention
    }

    pub fn text_siamese(&self) -> &SiameseNet {
        &self.text
    }

    pub fn visual_siamese(&self) -> &VisualSiamese {
        &self.visual
    }

    pub fn fusion(&self) -> &Dense {
        &self.fusion
    }

    /// Records the full forward pass of one record on `tape`.
    ///
    /// A title with no tokens contributes a zero attention context.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        words: &EmbeddingTable,
        record: &PreparedRecord,
    ) -> Result<ForwardPass> {
        let title = embed_title(
            tape,
            binder,
            words,
            &self.chars,
            &record.tokens,
            self.max_title_len,
        )?;
        let (context, attention) = if title.mask.iter().any(|&m| m) {
            let states = bilstm(
                tape,
                binder,
                &self.lstm_fwd,
                &self.lstm_bwd,
                title.rows,
                &title.mask,
            )?;
            let att = self
                .attention
                .apply(tape, binder, states.annotations, &title.mask)?;
            (att.context, att.weights)
        } else {
            let zero = tape.constant(Tensor::zeros(&[2 * self.config.hidden]));
            (zero, vec![0.0; self.max_title_len])
        };

        let title_doc = tape.constant(Arc::clone(&record.title_doc));
        let target_doc = tape.constant(Arc::clone(&record.target_doc));
        let text_similarity = self.text.compare(tape, binder, title_doc, target_doc)?;

        let image = record
            .image
            .as_ref()
            .map(|img| tape.constant(Arc::clone(img)));
        let target_doc = tape.constant(Arc::clone(&record.target_doc));
        let visual_similarity = self.visual.compare(tape, binder, image, target_doc)?;

        let fused = tape.concat(&[context, text_similarity, visual_similarity], 0)?;
        let logit = self.fusion.apply(tape, binder, fused)?;
        let prob = tape.sigmoid(logit);
        Ok(ForwardPass {
            prob,
            title,
            attention,
            context,
            text_similarity,
            visual_similarity,
        })
    }

    /// Clickbait probability of one record.
    pub fn predict(&self, words: &EmbeddingTable, record: &PreparedRecord) -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, false);
        let pass = self.forward(&mut tape, &mut binder, words, record)?;
        Ok(tape.value(pass.prob).data()[0])
    }

    /// Cross-entropy of one record against `label` and its parameter
    /// gradients.
    pub fn loss_and_gradients(
        &self,
        words: &EmbeddingTable,
        record: &PreparedRecord,
        label: f64,
    ) -> Result<RecordGradients> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(&self.params, true);
        let pass = self.forward(&mut tape, &mut binder, words, record)?;
        let loss = tape.bce(pass.prob, &[label])?;
        tape.backward(loss)?;
        Ok(RecordGradients {
            loss: tape.value(loss).data()[0],
            prob: tape.value(pass.prob).data()[0],
            grads: binder.gradients(&tape),
        })
    }
}
