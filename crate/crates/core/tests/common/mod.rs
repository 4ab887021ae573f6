#![allow(dead_code)]

use std::path::PathBuf;

use clickbait_core::io::{parse_corpus, read_embedding_file, read_feature_bank, PostRecord};
use clickbait_core::model::Tables;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/overfit")
}

/// The checked-in 64-record separable corpus and its tables.
pub fn overfit_fixture() -> (Vec<PostRecord>, Tables) {
    let dir = fixture_dir();
    let corpus = parse_corpus(dir.join("corpus.jsonl")).expect("fixture corpus");
    assert!(corpus.errors.is_empty(), "{:?}", corpus.errors);
    let tables = Tables {
        words: read_embedding_file(dir.join("words.emb")).expect("fixture words"),
        docs: read_embedding_file(dir.join("docs.emb")).expect("fixture docs"),
        images: Some(read_feature_bank(dir.join("images.ftb")).expect("fixture images")),
    };
    (corpus.records, tables)
}

use std::sync::Arc;

use clickbait_core::embeddings::{CharCnnConfig, CharVocab, EmbeddingTable};
use clickbait_core::model::{HybridModel, ModelConfig, PreparedRecord};
use clickbait_core::tensor::Tensor;
use clickbait_core::training::glorot_init;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Narrow layers, so tests that build many models stay fast.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        word_dim: 6,
        doc_dim: 5,
        image_dim: 9,
        chars: CharCnnConfig {
            char_dim: 3,
            kernel_width: 3,
            channels: vec![4, 4, 4],
        },
        hidden: 4,
        attention: 3,
        siamese: vec![6, 3],
    }
}

pub const VOCAB: [&str; 6] = ["you", "won't", "believe", "this", "#wow", "qqq"];

pub fn small_model(seed: u64, k: usize) -> HybridModel {
    HybridModel::new(
        small_config(),
        CharVocab::from_tokens(VOCAB),
        k,
        &mut glorot_init(seed),
    )
    .unwrap()
}

/// Word table for [`small_config`]; the last two vocabulary words are OOV.
pub fn small_words() -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut t = EmbeddingTable::new(small_config().word_dim);
    for tok in &VOCAB[..4] {
        t.insert(
            *tok,
            (0..t.dim()).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
    }
    t
}

pub fn small_record(tokens: &[&str], seed: u64) -> PreparedRecord {
    let config = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vec = |n: usize| {
        Arc::new(Tensor::vector(
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        ))
    };
    PreparedRecord {
        id: format!("r{seed}"),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        title_doc: vec(config.doc_dim),
        target_doc: vec(config.doc_dim),
        image: Some(vec(config.image_dim)),
        label: Some(1.0),
        doc_fallbacks: 0,
    }
}
