//! One line per acceptance criterion: `PASS`, `FAIL` or `SKIP`, with the
//! measured numbers. Exits nonzero if any criterion fails.
//!
//! Set `CLICKBAIT_FULL_DATA` to a directory holding `corpus.jsonl`,
//! `words.emb`, `docs.emb` and `images.ftb` to run the full-scale check.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clickbait_core::embeddings::EmbeddingTable;
use clickbait_core::gradcheck::run_suite;
use clickbait_core::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use clickbait_core::io::vectors::{decode_vectors, encode_vectors, EMBEDDING_MAGIC, FEATURE_MAGIC};
use clickbait_core::io::{parse_corpus, read_embedding_file, read_feature_bank, FormatError};
use clickbait_core::metrics::compute_metrics;
use clickbait_core::model::{bilstm, Attention, LstmCell, ModelConfig, PreparedRecord, Tables};
use clickbait_core::params::{Binder, Gradients, ParamBuilder, ParamKind, ParamStore};
use clickbait_core::tensor::{inject_fault, Fault, Tape, Tensor};
use clickbait_core::training::{
    glorot_bound, glorot_init, glorot_sample, split_train_val, train, Adadelta, TrainConfig,
};
use clickbait_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let report = run_suite(0).expect("suite runs");
    let elapsed = start.elapsed();
    inject_fault(Some(Fault::TanhBackwardSign));
    let mutated = run_suite(0);
    inject_fault(None);
    let caught = !mutated.expect("suite runs").passed();

    let op_instances = report
        .checks
        .iter()
        .filter(|c| c.name != "hybrid_model_loss")
        .all(|c| c.instances >= 10);
    let worst_op = report
        .checks
        .iter()
        .filter(|c| c.name != "hybrid_model_loss")
        .map(|c| c.stats.max_rel_error)
        .fold(0.0, f64::max);
    let model = report
        .checks
        .iter()
        .find(|c| c.name == "hybrid_model_loss")
        .expect("model check");
    let ok = report.passed()
        && op_instances
        && worst_op < 1e-4
        && model.stats.evaluated >= 20
        && model.stats.max_rel_error < 1e-3
        && elapsed < Duration::from_secs(120)
        && caught;
    let mut detail = format!(
        "{} checks, worst op rel err {worst_op:.2e}, model rel err {:.2e} over {} params, {elapsed:.1?}, sign bug caught: {caught}",
        report.checks.len(),
        model.stats.max_rel_error,
        model.stats.evaluated,
    );
    if !ok {
        detail.push('\n');
        detail.push_str(&report.render());
    }
    ensure(ok, detail)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_store<T>(seed: u64, f: impl FnOnce(&mut ParamBuilder<'_>) -> T) -> (ParamStore, T) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = move |_: ParamKind, shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let mut store = ParamStore::new();
    let out = f(&mut ParamBuilder::new(&mut store, &mut init));
    (store, out)
}

fn equation_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut lstm_err = 0.0f64;
    for seed in 0..25 {
        let (n, d) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let (store, cell) = random_store(seed, |b| LstmCell::new(n, d, b));
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();

        let mut tape = Tape::new();
        let mut binder = Binder::new(&store, false);
        let xv = tape.constant(Tensor::vector(x.clone()));
        let state = clickbait_core::model::LstmState {
            h: tape.constant(Tensor::vector(h.clone())),
            c: tape.constant(Tensor::vector(c.clone())),
        };
        let next = cell.step(&mut tape, &mut binder, xv, state).unwrap();

        let hx: Vec<f64> = h.iter().chain(&x).copied().collect();
        let (w, v) = (store.get(cell.w).data(), store.get(cell.v).data());
        let (b, dd) = (store.get(cell.b).data(), store.get(cell.d).data());
        let dot = |m: &[f64], row: usize| -> f64 {
            hx.iter()
                .enumerate()
                .map(|(j, z)| m[row * hx.len() + j] * z)
                .sum()
        };
        for k in 0..n {
            let f = sig(dot(w, k) + b[k]);
            let i = sig(dot(w, n + k) + b[n + k]);
            let o = sig(dot(w, 2 * n + k) + b[2 * n + k]);
            let l = (dot(v, k) + dd[k]).tanh();
            let ck = f * c[k] + i * l;
            let hk = o * ck.tanh();
            lstm_err = lstm_err
                .max((tape.value(next.c).data()[k] - ck).abs())
                .max((tape.value(next.h).data()[k] - hk).abs());
        }
    }

    // backward direction over x equals forward direction over reversed x
    let (store, (fwd, bwd)) = random_store(7, |b| {
        (
            b.scoped("f", |p| LstmCell::new(5, 3, p)),
            b.scoped("b", |p| LstmCell::new(5, 3, p)),
        )
    });
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let reversed: Vec<Vec<f64>> = rows.iter().rev().cloned().collect();
    let mut tape = Tape::new();
    let mut binder = Binder::new(&store, false);
    let x = tape.constant(Tensor::from_rows(&rows).unwrap());
    let xr = tape.constant(Tensor::from_rows(&reversed).unwrap());
    let out = bilstm(&mut tape, &mut binder, &fwd, &bwd, x, &[true; 4]).unwrap();
    let swapped = bilstm(&mut tape, &mut binder, &bwd, &fwd, xr, &[true; 4]).unwrap();
    let mut reversal_err = 0.0f64;
    for j in 0..4 {
        let a = tape.value(out.backward[j]).data();
        let b = tape.value(swapped.forward[3 - j]).data();
        for (p, q) in a.iter().zip(b) {
            reversal_err = reversal_err.max((p - q).abs());
        }
    }

    let mut sum_err = 0.0f64;
    let mut masked_ok = true;
    for seed in 0..50 {
        let k = rng.gen_range(1..10);
        let (store, att) = random_store(100 + seed, |b| Attention::new(6, 4, b));
        let mut mask: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..k)] = true;
        let ann: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let mut tape = Tape::new();
        let mut binder = Binder::new(&store, false);
        let a = tape.constant(Tensor::from_rows(&ann).unwrap());
        let out = att.apply(&mut tape, &mut binder, a, &mask).unwrap();
        sum_err = sum_err.max((out.weights.iter().sum::<f64>() - 1.0).abs());
        masked_ok &= out
            .weights
            .iter()
            .zip(&mask)
            .all(|(w, m)| *w >= 0.0 && (*m || *w == 0.0));
    }
    ensure(
        lstm_err < 1e-12 && reversal_err < 1e-12 && sum_err < 1e-9 && masked_ok,
        format!(
            "lstm max abs err {lstm_err:.1e}, reversal err {reversal_err:.1e}, attention |Σα−1| {sum_err:.1e}, masked α zero: {masked_ok}"
        ),
    )
}

fn overfit() -> Outcome {
    let (records, tables) = common::overfit_fixture();
    let config = TrainConfig {
        max_epochs: 200,
        patience: None,
        target_train_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&config, &ModelConfig::default(), &records, &tables).expect("training runs");
    let elapsed = start.elapsed();
    let epochs = &out.trace.epochs;
    let last = epochs.last().expect("at least one epoch");
    let loss0 = epochs[0].train_loss;
    let positives = records.iter().filter(|r| r.label == Some(1)).count();
    ensure(
        last.train_accuracy >= 0.95
            && (loss0 - 2f64.ln()).abs() <= 0.15
            && elapsed < Duration::from_secs(300)
            && 2 * positives == records.len(),
        format!(
            "{} records, train accuracy {:.3} after {} epochs, epoch-0 loss {loss0:.4} (ln 2 = {:.4}), {elapsed:.1?}",
            records.len(),
            last.train_accuracy,
            epochs.len(),
            2f64.ln()
        ),
    )
}

fn optimizer_and_init() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let a = store.insert("a", ParamKind::Bias, Tensor::vector(vec![0.3, -1.2, 4.0]));
    let m = store.insert(
        "m",
        ParamKind::Weight {
            fan_in: 2,
            fan_out: 2,
        },
        Tensor::zeros(&[2, 2]),
    );
    let before = store.clone();
    let mut opt = Adadelta::new(&store, 0.95, 1e-6);
    for _ in 0..10 {
        opt.step(&mut store, &Gradients::zeros_like(&before))
            .unwrap();
    }
    let fixpoint = store.ids().all(|id| store.get(id) == before.get(id));

    let mut nonneg = true;
    for _ in 0..1000 {
        let mut g = Gradients::zeros_like(&store);
        g.set(a, (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect());
        g.set(m, (0..4).map(|_| rng.gen_range(-1e-3..1e-3)).collect());
        opt.step(&mut store, &g).unwrap();
        nonneg &= opt
            .sq_grad()
            .iter()
            .chain(opt.sq_update())
            .flatten()
            .all(|&v| v >= 0.0 && v.is_finite());
    }

    let mut init_ok = true;
    let mut details = Vec::new();
    for (fan, expected) in [(3usize, 1.0f64), (300, 0.1)] {
        let bound = glorot_bound(fan, fan);
        let n = 100_000;
        let t = glorot_sample(fan, fan, &[n], &mut rng);
        let inside = t.data().iter().all(|&x| -bound < x && x < bound);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let sigma = bound / (3.0 * n as f64).sqrt();
        init_ok &= (bound - expected).abs() < 1e-12 && inside && mean.abs() < 3.0 * sigma;
        details.push(format!(
            "({fan},{fan}) bound {bound} mean {mean:+.2e} (3σ {:.2e})",
            3.0 * sigma
        ));
    }
    // the model initializer uses the same bounds
    let mut init = glorot_init(1);
    let w = init(
        ParamKind::Weight {
            fan_in: 300,
            fan_out: 300,
        },
        &[300, 300],
    );
    let b = init(ParamKind::Bias, &[10]);
    init_ok &= w.data().iter().all(|x| x.abs() < 0.1) && b.data().iter().all(|&x| x == 0.0);
    ensure(
        fixpoint && nonneg && init_ok,
        format!(
            "zero-grad fixpoint {fixpoint}, accumulators ≥ 0 over 1000 steps {nonneg}; {}",
            details.join("; ")
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut ok = true;
    for _ in 0..5 {
        let preds: Vec<f64> = (0..1000).map(|_| rng.r#gen::<f64>()).collect();
        let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..=1)).collect();
        let m = compute_metrics(&preds, &labels, 0.5).unwrap();
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for i in 0..1000 {
            let pos = preds[i] >= 0.5;
            if pos && labels[i] == 1 {
                tp += 1;
            } else if pos {
                fp += 1;
            } else if labels[i] == 0 {
                tn += 1;
            } else {
                fn_ += 1;
            }
        }
        let p = tp as f64 / (tp + fp) as f64;
        let r = tp as f64 / (tp + fn_) as f64;
        ok &= (m.tp, m.fp, m.tn, m.fn_) == (tp, fp, tn, fn_)
            && (m.precision - p).abs() < 1e-15
            && (m.recall - r).abs() < 1e-15
            && (m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15
            && (m.accuracy - (tp + tn) as f64 / 1000.0).abs() < 1e-15;
    }
    let preds = [0.9, 0.8, 0.7, 0.2, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1];
    let labels = [1, 1, 0, 1, 0, 0, 0, 0, 0, 0];
    let m = compute_metrics(&preds, &labels, 0.5).unwrap();
    let fixture = (m.tp, m.fp, m.fn_, m.tn) == (2, 1, 1, 6)
        && m.precision == 2.0 / 3.0
        && m.recall == 2.0 / 3.0
        && m.f1 == 2.0 / 3.0
        && m.accuracy == 0.8;
    ensure(
        ok && fixture,
        format!("brute-force agreement on 5×1000 pairs {ok}; 2/1/1/6 fixture exact {fixture} (p {} r {} f1 {} acc {})", m.precision, m.recall, m.f1, m.accuracy),
    )
}

fn format_roundtrips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut words = EmbeddingTable::new(7);
    for i in 0..20 {
        words
            .insert(
                format!("w{i}"),
                (0..7)
                    .map(|_| f32::from_bits(rng.r#gen::<u32>() & 0x7f7f_ffff))
                    .collect(),
            )
            .unwrap();
    }
    let emb = encode_vectors(EMBEDDING_MAGIC, &words);
    let emb_ok = encode_vectors(
        EMBEDDING_MAGIC,
        &decode_vectors(EMBEDDING_MAGIC, &emb).unwrap(),
    ) == emb;
    let ftb = encode_vectors(FEATURE_MAGIC, &words);
    let ftb_ok =
        encode_vectors(FEATURE_MAGIC, &decode_vectors(FEATURE_MAGIC, &ftb).unwrap()) == ftb;

    let model = common::small_model(11, 4);
    let config = TrainConfig::default();
    let ckpt = encode_checkpoint(&model, &config).unwrap();
    let loaded = decode_checkpoint(&ckpt).unwrap();
    let ckpt_ok = encode_checkpoint(&loaded.model, &loaded.train).unwrap() == ckpt;
    let record = common::small_record(&["you", "qqq", "believe"], 2);
    let table = common::small_words();
    let forward_ok = model.predict(&table, &record).unwrap().to_bits()
        == loaded.model.predict(&table, &record).unwrap().to_bits();

    let mut bad_magic = emb.clone();
    bad_magic[1] = b'Z';
    let mut flipped = ckpt.clone();
    let mid = ckpt.len() - 100;
    flipped[mid] ^= 1;
    let errors_ok = matches!(
        decode_vectors(EMBEDDING_MAGIC, &bad_magic),
        Err(FormatError::BadMagic { .. })
    ) && matches!(
        decode_vectors(EMBEDDING_MAGIC, &emb[..emb.len() - 5]),
        Err(FormatError::Truncated { index: 19 })
    ) && matches!(
        decode_vectors(FEATURE_MAGIC, &emb),
        Err(FormatError::BadMagic { .. })
    ) && matches!(
        decode_checkpoint(&flipped),
        Err(Error::Format(FormatError::ChecksumMismatch))
    ) && matches!(
        decode_checkpoint(&ckpt[..ckpt.len() - 1]),
        Err(Error::Format(_))
    );
    ensure(
        emb_ok && ftb_ok && ckpt_ok && forward_ok && errors_ok,
        format!("EMB1 {emb_ok}, FTB1 {ftb_ok}, CKP1 {ckpt_ok}, reload forward bit-identical {forward_ok}, corruption classes {errors_ok}"),
    )
}

fn determinism() -> Outcome {
    let (records, tables) = common::overfit_fixture();
    let config = TrainConfig {
        max_epochs: 3,
        patience: None,
        batch_size: 16,
        seed: 123,
        ..TrainConfig::default()
    };
    let run = || train(&config, &ModelConfig::default(), &records, &tables).expect("training runs");
    let (a, b) = (run(), run());
    let (la, lb) = (a.trace.epochs[0].train_loss, b.trace.epochs[0].train_loss);
    let ca = encode_checkpoint(&a.model, &config).unwrap();
    let cb = encode_checkpoint(&b.model, &config).unwrap();
    ensure(
        (la - lb).abs() <= 1e-12 && ca == cb,
        format!(
            "epoch-0 loss {la:.15} vs {lb:.15}, checkpoints identical ({} bytes): {}",
            ca.len(),
            ca == cb
        ),
    )
}

fn full_scale() -> Outcome {
    let Some(dir) = std::env::var_os("CLICKBAIT_FULL_DATA").map(PathBuf::from) else {
        return Outcome::Skip(
            "set CLICKBAIT_FULL_DATA to a directory with the real corpus and tables".into(),
        );
    };
    let corpus = parse_corpus(dir.join("corpus.jsonl")).expect("corpus");
    let tables = Tables {
        words: read_embedding_file(dir.join("words.emb")).expect("word table"),
        docs: read_embedding_file(dir.join("docs.emb")).expect("doc table"),
        images: Some(read_feature_bank(dir.join("images.ftb")).expect("image bank")),
    };
    let config = TrainConfig::default();
    let out =
        train(&config, &ModelConfig::default(), &corpus.records, &tables).expect("training runs");
    let (_, val) = split_train_val(&corpus.records, config.split_ratio, config.seed).unwrap();
    let probs: Vec<f64> = val
        .iter()
        .map(|r| {
            out.model
                .predict(&tables.words, &PreparedRecord::new(r, &tables).unwrap())
                .unwrap()
        })
        .collect();
    let labels: Vec<u8> = val.iter().map(|r| r.label.unwrap()).collect();
    let m = compute_metrics(&probs, &labels, config.threshold).unwrap();
    ensure(
        (0.55..=0.70).contains(&m.f1),
        format!(
            "validation F1 {:.4}, accuracy {:.4} on {} records",
            m.f1,
            m.accuracy,
            val.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("gradient-check suite", gradient_check),
        ("equation fidelity", equation_fidelity),
        ("overfit sanity", overfit),
        ("optimizer/init properties", optimizer_and_init),
        ("metrics oracle", metrics_oracle),
        ("format roundtrips", format_roundtrips),
        ("determinism", determinism),
        ("full-scale F1 (optional)", full_scale),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {name} [{secs:.1}s]: {detail}");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
