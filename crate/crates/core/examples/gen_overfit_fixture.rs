//! Writes the 64-record separable fixture used by the overfit tests.
//!
//! ```text
//! cargo run -p clickbait-core --example gen_overfit_fixture -- crates/core/tests/fixtures/overfit
//! ```
//!
//! Clickbait titles draw from one vocabulary and news titles from another.
//! Clickbait posts also get a title vector far from the description vector
//! and images from a separate feature cluster. A few tokens are left out of
//! the word table and a few posts have no image.

use std::fs;
use std::path::PathBuf;

use clickbait_core::embeddings::EmbeddingTable;
use clickbait_core::io::{
    description_doc_id, title_doc_id, write_embedding_file, write_feature_bank, FeatureBank,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const SEED: u64 = 20_170_601;
const RECORDS: usize = 64;
const WORD_DIM: usize = 300;
const DOC_DIM: usize = 300;
const IMAGE_DIM: usize = 4096;
const SCALE: f32 = 0.25;

const BAIT: [&str; 14] = [
    "you", "won't", "believe", "what", "happened", "next", "this", "shocking", "trick", "#omg",
    "amazing", "secret", "reasons", "why",
];
const NEWS: [&str; 14] = [
    "senate",
    "passes",
    "budget",
    "bill",
    "report",
    "shows",
    "growth",
    "minister",
    "announces",
    "election",
    "results",
    "court",
    "rules",
    "@reuters",
];
/// Present in titles, absent from the word table.
const OOV: [&str; 4] = ["zzkrt", "blorp", "qwxv", "fnord"];

fn vector(rng: &mut impl Rng, dim: usize, scale: f32) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .ok_or("usage: gen_overfit_fixture <dir>")?
        .into();
    fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let mut words = EmbeddingTable::new(WORD_DIM);
    for w in BAIT.iter().chain(&NEWS) {
        words.insert(*w, vector(&mut rng, WORD_DIM, SCALE))?;
    }

    let mut labels: Vec<u8> = (0..RECORDS).map(|i| u8::from(i % 2 == 0)).collect();
    labels.shuffle(&mut rng);

    let bait_image: Vec<f32> = (0..IMAGE_DIM).map(|_| rng.gen_range(0.0..0.05)).collect();
    let news_image: Vec<f32> = (0..IMAGE_DIM).map(|_| rng.gen_range(0.0..0.05)).collect();

    let mut docs = EmbeddingTable::new(DOC_DIM);
    let mut images = FeatureBank::new(IMAGE_DIM);
    let mut lines = Vec::with_capacity(RECORDS);
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("fx{i:03}");
        let vocab: &[&str] = if label == 1 { &BAIT } else { &NEWS };
        let len = rng.gen_range(4..=9);
        let mut tokens: Vec<&str> = (0..len)
            .map(|_| vocab[rng.gen_range(0..vocab.len())])
            .collect();
        if i % 5 == 0 {
            let at = rng.gen_range(0..tokens.len());
            tokens[at] = OOV[rng.gen_range(0..OOV.len())];
        }

        // news titles sit near their description, clickbait titles do not
        let description = vector(&mut rng, DOC_DIM, SCALE);
        let title = if label == 1 {
            vector(&mut rng, DOC_DIM, SCALE)
        } else {
            description
                .iter()
                .map(|&x| x + rng.gen_range(-0.03..0.03))
                .collect()
        };
        docs.insert(title_doc_id(&id), title)?;
        // every seventh description falls back to the word-vector mean
        if i % 7 != 3 {
            docs.insert(description_doc_id(&id), description)?;
        }

        let image_id = format!("img/{id}.jpg");
        if i % 9 != 4 {
            let base = if label == 1 { &bait_image } else { &news_image };
            let feat = base
                .iter()
                .map(|&x| (x + rng.gen_range(-0.005..0.005)).max(0.0))
                .collect();
            images.insert(image_id.clone(), feat)?;
        }

        let description_text: Vec<&str> = (0..6)
            .map(|_| vocab[rng.gen_range(0..vocab.len())])
            .collect();
        lines.push(
            json!({
                "id": id,
                "postText": [tokens.join(" ")],
                "postMedia": [image_id],
                "targetTitle": format!("article {i}"),
                "targetDescription": description_text.join(" "),
                "targetKeywords": "",
                "label": label,
            })
            .to_string(),
        );
    }

    fs::write(out.join("corpus.jsonl"), lines.join("\n") + "\n")?;
    write_embedding_file(out.join("words.emb"), &words)?;
    write_embedding_file(out.join("docs.emb"), &docs)?;
    write_feature_bank(out.join("images.ftb"), &images)?;
    println!("wrote {RECORDS} records to {}", out.display());
    Ok(())
}
