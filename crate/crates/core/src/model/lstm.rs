use crate::params::{Binder, ParamBuilder, ParamId};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// One direction of the recurrent encoder.
///
/// `w` maps `[h_{t−1}, r_t]` to the stacked forget/input/output gate
/// pre-activations (`3H` rows), `v` maps the same input to the candidate
/// cell value (`H` rows); `b` and `d` are the matching biases.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub v: ParamId,
    pub b: ParamId,
    pub d: ParamId,
    hidden: usize,
    input_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmCell {
    pub fn new(hidden: usize, input_dim: usize, params: &mut ParamBuilder<'_>) -> Self {
        let cols = hidden + input_dim;
        Self {
            w: params.weight("w", &[3 * hidden, cols], cols, 3 * hidden),
            v: params.weight("v", &[hidden, cols], cols, hidden),
            b: params.bias("b", 3 * hidden),
            d: params.bias("d", hidden),
            hidden,
            input_dim,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Zero hidden and cell vectors.
    pub fn zero_state(&self, tape: &mut Tape) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[self.hidden])),
            c: tape.constant(Tensor::zeros(&[self.hidden])),
        }
    }

    /// Advances the cell by one input vector:
    ///
    /// ```text
    /// [f, i, o] = σ(W·[h, r] + b)
    /// l         = tanh(V·[h, r] + d)
    /// c'        = f ⊙ c + i ⊙ l
    /// h'        = o ⊙ tanh(c')
    /// ```
    pub fn step(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        input: Var,
        state: LstmState,
    ) -> Result<LstmState> {
        let got = tape.value(input).shape();
        if got != [self.input_dim] {
            return Err(Error::Dimension {
                what: "lstm input",
                expected: self.input_dim,
                actual: got.iter().product(),
            });
        }
        for s in [state.h, state.c] {
            if tape.value(s).shape() != [self.hidden] {
                return Err(Error::Dimension {
                    what: "lstm state",
                    expected: self.hidden,
                    actual: tape.value(s).len(),
                });
            }
        }
        let (w, v) = (binder.var(tape, self.w), binder.var(tape, self.v));
        let (b, d) = (binder.var(tape, self.b), binder.var(tape, self.d));
        let hr = tape.concat(&[state.h, input], 0)?;

        let gates = tape.matvec(w, hr)?;
        let gates = tape.add(gates, b)?;
        let gates = tape.sigmoid(gates);
        let h = self.hidden;
        let [f, i, o] = tape.split(gates, 0, &[h, h, h])?[..] else {
            unreachable!("three gates")
        };

        let cand = tape.matvec(v, hr)?;
        let cand = tape.add(cand, d)?;
        let cand = tape.tanh(cand);

        let keep = tape.mul(f, state.c)?;
        let write = tape.mul(i, cand)?;
        let c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        let h = tape.mul(o, squashed)?;
        Ok(LstmState { h, c })
    }
}

#[derive(Clone, Debug)]
pub struct BiLstmOutput {
    /// `[K × 2H]`; row `j` is `[forward_j ; backward_j]`, zero where masked.
    pub annotations: Var,
    /// Unmasked positions, ascending.
    pub positions: Vec<usize>,
    /// Forward hidden state at each entry of `positions`.
    pub forward: Vec<Var>,
    /// Backward hidden state at each entry of `positions`.
    pub backward: Vec<Var>,
}

/// Runs `fwd` left to right and `bwd` right to left over the unmasked rows
/// of `title` (`[K × D]`), both from zero states.
pub fn bilstm(
    tape: &mut Tape,
    binder: &mut Binder<'_>,
    fwd: &LstmCell,
    bwd: &LstmCell,
    title: Var,
    mask: &[bool],
) -> Result<BiLstmOutput> {
    let (rows, width) = tape.value(title).dims2("bilstm")?;
    if mask.len() != rows {
        return Err(Error::MaskLength {
            mask: mask.len(),
            rows,
        });
    }
    if width != fwd.input_dim() || width != bwd.input_dim() {
        return Err(Error::Dimension {
            what: "bilstm title width",
            expected: fwd.input_dim(),
            actual: width,
        });
    }
    let positions: Vec<usize> = (0..rows).filter(|&j| mask[j]).collect();
    let mut inputs = Vec::with_capacity(positions.len());
    for &j in &positions {
        let row = tape.narrow(title, 0, j, 1)?;
        inputs.push(tape.reshape(row, &[width])?);
    }

    let mut forward = Vec::with_capacity(inputs.len());
    let mut state = fwd.zero_state(tape);
    for &x in &inputs {
        state = fwd.step(tape, binder, x, state)?;
        forward.push(state.h);
    }

    let mut backward = vec![None; inputs.len()];
    let mut state = bwd.zero_state(tape);
    for (slot, &x) in backward.iter_mut().zip(&inputs).rev() {
        state = bwd.step(tape, binder, x, state)?;
        *slot = Some(state.h);
    }
    let backward: Vec<Var> = backward.into_iter().map(|h| h.expect("visited")).collect();

    let width = fwd.hidden() + bwd.hidden();
    let mut out_rows = Vec::with_capacity(rows);
    let mut next = 0;
    for &live in mask {
        if live {
            let both = tape.concat(&[forward[next], backward[next]], 0)?;
            out_rows.push(tape.reshape(both, &[1, width])?);
            next += 1;
        } else {
            out_rows.push(tape.constant(Tensor::zeros(&[1, width])));
        }
    }
    let annotations = tape.concat(&out_rows, 0)?;
    Ok(BiLstmOutput {
        annotations,
        positions,
        forward,
        backward,
    })
}
