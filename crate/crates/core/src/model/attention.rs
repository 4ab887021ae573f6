use crate::params::{Binder, ParamBuilder, ParamId};
use crate::tensor::{Tape, Var};
use crate::{Error, Result};

/// Additive attention producing one context vector per sequence:
/// `score_j = v_aᵀ tanh(W_a h_j)`, `α = softmax(score)` over unmasked `j`,
/// `context = Σ α_j h_j`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub w_a: ParamId,
    pub v_a: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub context: Var,
    /// Softmax weights over the unmasked positions only.
    pub alpha: Var,
    /// Weight for every position, zero where masked.
    pub weights: Vec<f64>,
}

impl Attention {
    pub fn new(annotation_dim: usize, hidden: usize, params: &mut ParamBuilder<'_>) -> Self {
        Self {
            w_a: params.weight("w_a", &[hidden, annotation_dim], annotation_dim, hidden),
            v_a: params.weight("v_a", &[hidden], hidden, 1),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        annotations: Var,
        mask: &[bool],
    ) -> Result<AttentionOutput> {
        let (rows, _) = tape.value(annotations).dims2("attention")?;
        if mask.len() != rows {
            return Err(Error::MaskLength {
                mask: mask.len(),
                rows,
            });
        }
        let positions: Vec<usize> = (0..rows).filter(|&j| mask[j]).collect();
        if positions.is_empty() {
            return Err(Error::FullyMasked);
        }
        let w_a = binder.var(tape, self.w_a);
        let v_a = binder.var(tape, self.v_a);

        let live = tape.gather_rows(annotations, &positions)?;
        let w_t = tape.transpose(w_a)?;
        let hidden = tape.matmul(live, w_t)?;
        let hidden = tape.tanh(hidden);
        let scores = tape.matvec(hidden, v_a)?;
        let alpha = tape.softmax(scores)?;
        let live_t = tape.transpose(live)?;
        let context = tape.matvec(live_t, alpha)?;

        let mut weights = vec![0.0; rows];
        for (&j, &a) in positions.iter().zip(tape.value(alpha).data()) {
            weights[j] = a;
        }
        Ok(AttentionOutput {
            context,
            alpha,
            weights,
        })
    }
}
