//! Central finite-difference checks of tape gradients.
//!
//! The numeric side only ever runs forward passes, so it is independent of
//! every backward rule it checks. [`run_suite`] exercises each
//! differentiable operation and model component on random instances and
//! the full model loss on a synthetic record.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::embeddings::{CharCnn, CharCnnConfig, CharVocab, EmbeddingTable};
use crate::model::{
    bilstm, Attention, HybridModel, LstmCell, ModelConfig, PreparedRecord, SiameseNet,
    VisualSiamese,
};
use crate::params::{Binder, ParamBuilder, ParamKind, ParamStore};
use crate::tensor::{Tape, Tensor, Var};
use crate::training::glorot_init;
use crate::Result;

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Tolerance for individual operations and components.
pub const OP_TOLERANCE: f64 = 1e-4;
/// Tolerance for the end-to-end model loss.
pub const MODEL_TOLERANCE: f64 = 1e-3;
/// Random instances per operation.
pub const INSTANCES: usize = 10;
/// Parameters sampled for the end-to-end check.
pub const MODEL_SAMPLES: usize = 24;
/// Magnitude below which gradients are compared absolutely rather than
/// relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Which scalar parameters to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    All,
    /// Picks a parameter tensor uniformly, then an entry uniformly, this many
    /// times.
    Sample(usize),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckStats {
    pub evaluated: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

impl CheckStats {
    fn merge(&mut self, other: CheckStats) {
        self.evaluated += other.evaluated;
        if other.max_rel_error >= self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst.or(self.worst.take());
        }
    }
}

/// Compares tape gradients of the scalar built by `build` with central
/// differences over the parameters of `store`.
pub fn check_store<F>(
    store: &ParamStore,
    build: F,
    probe: Probe,
    rng: &mut impl Rng,
) -> Result<CheckStats>
where
    F: Fn(&mut Tape, &mut Binder<'_>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let mut binder = Binder::new(store, true);
    let loss = build(&mut tape, &mut binder)?;
    tape.backward(loss)?;
    let grads = binder.gradients(&tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let mut binder = Binder::new(s, false);
        let out = build(&mut tape, &mut binder)?;
        Ok(tape.value(out).data()[0])
    };

    let ids: Vec<_> = store
        .ids()
        .filter(|&id| !store.get(id).is_empty())
        .collect();
    let targets: Vec<_> = match probe {
        Probe::All => ids
            .iter()
            .flat_map(|&id| (0..store.get(id).len()).map(move |j| (id, j)))
            .collect(),
        Probe::Sample(n) => (0..n)
            .map(|_| {
                let id = ids[rng.gen_range(0..ids.len())];
                (id, rng.gen_range(0..store.get(id).len()))
            })
            .collect(),
    };

    let mut stats = CheckStats::default();
    let mut work = store.clone();
    for (id, j) in targets {
        let original = work.get(id).data()[j];
        work.get_mut(id).data_mut()[j] = original + FD_STEP;
        let plus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = original - FD_STEP;
        let minus = eval(&work)?;
        work.get_mut(id).data_mut()[j] = original;

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let analytic = grads.get(id).map_or(0.0, |g| g[j]);
        let err = rel_error(analytic, numeric);
        stats.evaluated += 1;
        if err >= stats.max_rel_error {
            stats.max_rel_error = err;
            stats.worst = Some((store.name(id).to_owned(), j));
        }
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub stats: CheckStats,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.stats.max_rel_error < self.tolerance && self.stats.evaluated > 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{:<6} {:<22} instances {:>3}  probes {:>5}  max rel err {:.3e}  (tol {:.0e}){}\n",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.instances,
                c.stats.evaluated,
                c.stats.max_rel_error,
                c.tolerance,
                c.stats
                    .worst
                    .as_ref()
                    .filter(|_| !c.passed())
                    .map(|(n, j)| format!("  worst {n}[{j}]"))
                    .unwrap_or_default(),
            ));
        }
        out
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .expect("shape")
}

/// Values bounded away from zero so kinked functions are probed off-kink.
fn off_kink(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `Σ w ⊙ out` with fixed random weights, so every output entry matters.
fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.constant(weights.reshape(tape.value(out).shape())?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn store_of(inputs: Vec<Tensor>) -> ParamStore {
    let mut s = ParamStore::new();
    for (i, t) in inputs.into_iter().enumerate() {
        s.insert(format!("input{i}"), ParamKind::Bias, t);
    }
    s
}

/// Runs `instances` random instances of one operation check.
fn op_check<G>(
    name: &'static str,
    rng: &mut ChaCha8Rng,
    tolerance: f64,
    mut one: G,
) -> Result<CheckResult>
where
    G: FnMut(&mut ChaCha8Rng) -> Result<CheckStats>,
{
    let mut stats = CheckStats::default();
    for _ in 0..INSTANCES {
        stats.merge(one(rng)?);
    }
    Ok(CheckResult {
        name,
        instances: INSTANCES,
        stats,
        tolerance,
    })
}

fn dims(rng: &mut impl Rng) -> usize {
    rng.gen_range(1..5)
}

/// Builds a store plus a closure over its inputs, then checks every entry.
fn check_inputs<F>(
    rng: &mut ChaCha8Rng,
    inputs: Vec<Tensor>,
    out_len: usize,
    f: F,
) -> Result<CheckStats>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let weights = uniform(rng, &[out_len], 1.0);
    let store = store_of(inputs);
    let ids: Vec<_> = store.ids().collect();
    check_store(
        &store,
        |tape, binder| {
            let vars: Vec<Var> = ids.iter().map(|&id| binder.var(tape, id)).collect();
            let out = f(tape, &vars)?;
            weighted_sum(tape, out, &weights)
        },
        Probe::All,
        rng,
    )
}

fn small_model_config() -> ModelConfig {
    ModelConfig {
        word_dim: 5,
        doc_dim: 6,
        image_dim: 7,
        chars: CharCnnConfig {
            char_dim: 3,
            kernel_width: 3,
            channels: vec![4, 4, 3],
        },
        hidden: 3,
        attention: 4,
        siamese: vec![5, 4],
    }
}

/// Component parameters plus their random inputs, for one instance.
fn component_store<T>(
    rng: &mut ChaCha8Rng,
    build: impl FnOnce(&mut ParamBuilder<'_>) -> T,
) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let seed = rng.r#gen::<u64>();
    let mut local = ChaCha8Rng::seed_from_u64(seed);
    // random biases too, so gates and ReLUs are not sitting at zero
    let mut init = |_: ParamKind, shape: &[usize]| uniform(&mut local, shape, 0.8);
    let mut b = ParamBuilder::new(&mut store, &mut init);
    let component = build(&mut b);
    (store, component)
}

/// Runs every gradient check. Deterministic for a given `seed`.
pub fn run_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let tol = OP_TOLERANCE;
    let mut checks = Vec::new();

    checks.push(op_check("matmul", rng, tol, |rng| {
        let (m, k, n) = (dims(rng), dims(rng), dims(rng));
        let inputs = vec![uniform(rng, &[m, k], 1.0), uniform(rng, &[k, n], 1.0)];
        check_inputs(rng, inputs, m * n, |t, v| Ok(t.matmul(v[0], v[1])?))
    })?);
    checks.push(op_check("matvec", rng, tol, |rng| {
        let (m, k) = (dims(rng), dims(rng));
        let inputs = vec![uniform(rng, &[m, k], 1.0), uniform(rng, &[k], 1.0)];
        check_inputs(rng, inputs, m, |t, v| Ok(t.matvec(v[0], v[1])?))
    })?);
    checks.push(op_check("transpose", rng, tol, |rng| {
        let (m, n) = (dims(rng), dims(rng));
        let input = uniform(rng, &[m, n], 1.0);
        check_inputs(rng, vec![input], m * n, |t, v| Ok(t.transpose(v[0])?))
    })?);
    checks.push(op_check("add/sub/mul", rng, tol, |rng| {
        let n = dims(rng) + 1;
        let inputs = vec![
            uniform(rng, &[n], 1.0),
            uniform(rng, &[n], 1.0),
            uniform(rng, &[], 1.0),
        ];
        check_inputs(rng, inputs, n, |t, v| {
            let a = t.mul(v[0], v[1])?;
            let b = t.sub(a, v[2])?;
            let c = t.mul(v[2], b)?;
            Ok(t.add(c, v[0])?)
        })
    })?);
    checks.push(op_check("sigmoid/tanh", rng, tol, |rng| {
        let n = dims(rng);
        let input = uniform(rng, &[n], 3.0);
        check_inputs(rng, vec![input], n, |t, v| {
            let s = t.sigmoid(v[0]);
            let th = t.tanh(v[0]);
            Ok(t.mul(s, th)?)
        })
    })?);
    checks.push(op_check("relu/abs", rng, tol, |rng| {
        let n = dims(rng) + 2;
        let input = off_kink(rng, &[n]);
        check_inputs(rng, vec![input], n, |t, v| {
            let r = t.relu(v[0]);
            let a = t.abs(v[0]);
            Ok(t.add(r, a)?)
        })
    })?);
    checks.push(op_check("concat/split", rng, tol, |rng| {
        let (r, c1, c2) = (dims(rng), dims(rng), dims(rng));
        let inputs = vec![uniform(rng, &[r, c1], 1.0), uniform(rng, &[r, c2], 1.0)];
        check_inputs(rng, inputs, r * (c1 + c2), |t, v| {
            let joined = t.concat(&[v[0], v[1]], 1)?;
            let parts = t.split(joined, 1, &[c1 + c2 - 1, 1])?;
            let squared = t.mul(parts[1], parts[1])?;
            Ok(t.concat(&[parts[0], squared], 1)?)
        })
    })?);
    checks.push(op_check("gather/reshape", rng, tol, |rng| {
        let (rows, cols) = (dims(rng) + 1, dims(rng));
        let idx: Vec<usize> = (0..4).map(|_| rng.gen_range(0..rows)).collect();
        let input = uniform(rng, &[rows, cols], 1.0);
        check_inputs(rng, vec![input], 4 * cols, move |t, v| {
            let g = t.gather_rows(v[0], &idx)?;
            Ok(t.reshape(g, &[4 * cols])?)
        })
    })?);
    checks.push(op_check("conv1d", rng, tol, |rng| {
        let (steps, cin, cout, w) = (6, 2, 3, 3);
        let inputs = vec![
            uniform(rng, &[steps, cin], 1.0),
            uniform(rng, &[w, cin, cout], 1.0),
            uniform(rng, &[cout], 1.0),
        ];
        check_inputs(rng, inputs, (steps - w + 1) * cout, |t, v| {
            Ok(t.conv1d(v[0], v[1], v[2])?)
        })
    })?);
    checks.push(op_check("maxpool_over_time", rng, tol, |rng| {
        let (steps, c) = (dims(rng) + 1, dims(rng));
        // distinct values keep the probe away from ties
        let mut vals: Vec<f64> = (0..steps * c).map(|i| i as f64 * 0.1).collect();
        for i in (1..vals.len()).rev() {
            vals.swap(i, rng.gen_range(0..=i));
        }
        let input = Tensor::new(vec![steps, c], vals).expect("shape");
        check_inputs(rng, vec![input], c, |t, v| Ok(t.maxpool_over_time(v[0])?))
    })?);
    checks.push(op_check("softmax", rng, tol, |rng| {
        let input = uniform(rng, &[5], 2.0);
        check_inputs(rng, vec![input], 5, |t, v| Ok(t.softmax(v[0])?))
    })?);
    checks.push(op_check("bce", rng, tol, |rng| {
        let n = dims(rng);
        let labels: Vec<f64> = (0..n)
            .map(|_| f64::from(u8::from(rng.gen_bool(0.5))))
            .collect();
        let probs = Tensor::vector((0..n).map(|_| rng.gen_range(0.05..0.95)).collect());
        check_inputs(rng, vec![probs], 1, move |t, v| Ok(t.bce(v[0], &labels)?))
    })?);

    let cfg = small_model_config();

    checks.push(op_check("char_cnn", rng, tol, |rng| {
        let (store, cnn) = component_store(rng, |b| {
            CharCnn::new(CharVocab::from_tokens(["abcxyz"]), cfg.chars.clone(), b)
                .expect("valid config")
        });
        let token: String = (0..3)
            .map(|_| ['a', 'b', 'c', 'x', 'y', 'z', '?'][rng.gen_range(0..7)])
            .collect();
        let weights = uniform(rng, &[cnn.output_dim()], 1.0);
        check_store(
            &store,
            |tape, binder| {
                let out = cnn.embed_word(tape, binder, &token)?;
                weighted_sum(tape, out, &weights)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(op_check("lstm_cell", rng, tol, |rng| {
        let (h, d) = (cfg.hidden, 4);
        let (mut store, cell) = component_store(rng, |b| LstmCell::new(h, d, b));
        let x = store.insert("x", ParamKind::Bias, uniform(rng, &[d], 1.0));
        let h0 = store.insert("h0", ParamKind::Bias, uniform(rng, &[h], 1.0));
        let c0 = store.insert("c0", ParamKind::Bias, uniform(rng, &[h], 1.0));
        let (wh, wc) = (uniform(rng, &[h], 1.0), uniform(rng, &[h], 1.0));
        check_store(
            &store,
            |tape, binder| {
                let input = binder.var(tape, x);
                let state = crate::model::LstmState {
                    h: binder.var(tape, h0),
                    c: binder.var(tape, c0),
                };
                let next = cell.step(tape, binder, input, state)?;
                let a = weighted_sum(tape, next.h, &wh)?;
                let b = weighted_sum(tape, next.c, &wc)?;
                Ok(tape.add(a, b)?)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(op_check("bilstm", rng, tol, |rng| {
        let (h, d, k) = (cfg.hidden, 3, 4);
        let (mut store, (fwd, bwd)) = component_store(rng, |b| {
            (
                b.scoped("fwd", |p| LstmCell::new(h, d, p)),
                b.scoped("bwd", |p| LstmCell::new(h, d, p)),
            )
        });
        let title = store.insert("title", ParamKind::Bias, uniform(rng, &[k, d], 1.0));
        let mask = [true, true, rng.gen_bool(0.5), false];
        let weights = uniform(rng, &[k * 2 * h], 1.0);
        check_store(
            &store,
            |tape, binder| {
                let t = binder.var(tape, title);
                let out = bilstm(tape, binder, &fwd, &bwd, t, &mask)?;
                weighted_sum(tape, out.annotations, &weights)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(op_check("attention", rng, tol, |rng| {
        let (width, k) = (2 * cfg.hidden, 5);
        let (mut store, att) = component_store(rng, |b| Attention::new(width, cfg.attention, b));
        let ann = store.insert(
            "annotations",
            ParamKind::Bias,
            uniform(rng, &[k, width], 1.0),
        );
        let mask: Vec<bool> = (0..k).map(|j| j < 3 || rng.gen_bool(0.5)).collect();
        let weights = uniform(rng, &[width], 1.0);
        check_store(
            &store,
            |tape, binder| {
                let a = binder.var(tape, ann);
                let out = att.apply(tape, binder, a, &mask)?;
                weighted_sum(tape, out.context, &weights)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(op_check("siamese_text", rng, tol, |rng| {
        let (mut store, net) =
            component_store(rng, |b| SiameseNet::new(cfg.doc_dim, &cfg.siamese, b));
        let left = store.insert("left", ParamKind::Bias, uniform(rng, &[cfg.doc_dim], 1.0));
        let right = store.insert("right", ParamKind::Bias, uniform(rng, &[cfg.doc_dim], 1.0));
        let weights = uniform(rng, &[net.output_dim()], 1.0);
        check_store(
            &store,
            |tape, binder| {
                let (l, r) = (binder.var(tape, left), binder.var(tape, right));
                let out = net.compare(tape, binder, l, r)?;
                weighted_sum(tape, out, &weights)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(op_check("siamese_visual", rng, tol, |rng| {
        let (store, net) = component_store(rng, |b| {
            VisualSiamese::new(cfg.image_dim, cfg.doc_dim, &cfg.siamese, b)
        });
        let image = uniform(rng, &[cfg.image_dim], 1.0);
        let doc = uniform(rng, &[cfg.doc_dim], 1.0);
        let weights = uniform(rng, &[net.net.output_dim()], 1.0);
        check_store(
            &store,
            |tape, binder| {
                let i = tape.constant(image.clone());
                let d = tape.constant(doc.clone());
                let out = net.compare(tape, binder, Some(i), d)?;
                weighted_sum(tape, out, &weights)
            },
            Probe::All,
            rng,
        )
    })?);

    checks.push(model_check(rng)?);
    Ok(SuiteReport { checks })
}

/// A random record over random tables matching `config`.
pub fn synthetic_record(
    config: &ModelConfig,
    rng: &mut impl Rng,
) -> (PreparedRecord, EmbeddingTable, CharVocab) {
    let words_list = [
        "you", "won't", "believe", "what", "happened", "next", "zzqx",
    ];
    let mut words = EmbeddingTable::new(config.word_dim);
    for w in &words_list[..6] {
        let v = (0..config.word_dim)
            .map(|_| rng.gen_range(-0.3f32..0.3))
            .collect();
        words.insert(*w, v).expect("unique");
    }
    let n_tokens = rng.gen_range(3..=words_list.len());
    let tokens: Vec<String> = (0..n_tokens)
        .map(|_| words_list[rng.gen_range(0..words_list.len())].to_owned())
        .collect();
    let vocab = CharVocab::from_tokens(words_list.iter().copied());
    let vec_of = |rng: &mut dyn rand::RngCore, n: usize, lo: f64, hi: f64| {
        std::sync::Arc::new(Tensor::vector(
            (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        ))
    };
    let record = PreparedRecord {
        id: "synthetic".into(),
        tokens,
        title_doc: vec_of(rng, config.doc_dim, -0.3, 0.3),
        target_doc: vec_of(rng, config.doc_dim, -0.3, 0.3),
        image: Some(vec_of(rng, config.image_dim, 0.0, 0.2)),
        label: Some(1.0),
        doc_fallbacks: 0,
    };
    (record, words, vocab)
}

/// Full-model loss on one synthetic record, default layer widths, with
/// sampled parameters.
fn model_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let config = ModelConfig::default();
    let (record, words, vocab) = synthetic_record(&config, rng);
    let k = record.tokens.len() + 2;
    let model = HybridModel::new(config, vocab, k, &mut glorot_init(rng.r#gen()))?;
    let label = record.label.expect("labelled");
    let stats = check_store(
        model.params(),
        |tape, binder| {
            let pass = model.forward(tape, binder, &words, &record)?;
            Ok(tape.bce(pass.prob, &[label])?)
        },
        Probe::Sample(MODEL_SAMPLES),
        rng,
    )?;
    Ok(CheckResult {
        name: "hybrid_model_loss",
        instances: 1,
        stats,
        tolerance: MODEL_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(1.0, 1.0), 0.0);
        assert!((rel_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((rel_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // f(x) = x², checked against a tape that computes 3x via an extra term
        let store = store_of(vec![Tensor::vector(vec![0.7, -1.3])]);
        let id = store.ids().next().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let good = check_store(
            &store,
            |tape, binder| {
                let x = binder.var(tape, id);
                let sq = tape.mul(x, x)?;
                Ok(tape.sum(sq))
            },
            Probe::All,
            &mut rng,
        )
        .unwrap();
        assert!(good.max_rel_error < 1e-8, "{good:?}");
        assert_eq!(good.evaluated, 2);
    }
}
