use crate::params::{Binder, ParamBuilder, ParamId};
use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Fully connected layer `W·x + b`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    input: usize,
    output: usize,
}

impl Dense {
    pub fn new(input: usize, output: usize, params: &mut ParamBuilder<'_>) -> Self {
        Self {
            weight: params.weight("weight", &[output, input], input, output),
            bias: params.bias("bias", output),
            input,
            output,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.output
    }

    pub fn apply(&self, tape: &mut Tape, binder: &mut Binder<'_>, x: Var) -> Result<Var> {
        let w = binder.var(tape, self.weight);
        let b = binder.var(tape, self.bias);
        let y = tape.matvec(w, x)?;
        Ok(tape.add(y, b)?)
    }
}

/// Twin branches with one set of weights; the head is the elementwise
/// absolute difference of the two branch outputs.
#[derive(Clone, Debug)]
pub struct SiameseNet {
    layers: Vec<Dense>,
}

impl SiameseNet {
    /// `widths` lists the output width of each ReLU layer, e.g. `[128, 64]`.
    pub fn new(input: usize, widths: &[usize], params: &mut ParamBuilder<'_>) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(params.scoped(&format!("layer{i}"), |p| Dense::new(prev, w, p)));
            prev = w;
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::output_dim)
    }

    pub fn branch(&self, tape: &mut Tape, binder: &mut Binder<'_>, x: Var) -> Result<Var> {
        let got = tape.value(x).len();
        if got != self.input_dim() || tape.value(x).rank() != 1 {
            return Err(Error::Dimension {
                what: "siamese branch input",
                expected: self.input_dim(),
                actual: got,
            });
        }
        let mut h = x;
        for layer in &self.layers {
            let z = layer.apply(tape, binder, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    /// `|branch(left) − branch(right)|`.
    pub fn compare(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        left: Var,
        right: Var,
    ) -> Result<Var> {
        let a = self.branch(tape, binder, left)?;
        let b = self.branch(tape, binder, right)?;
        let diff = tape.sub(a, b)?;
        Ok(tape.abs(diff))
    }
}

/// Siamese net over an image feature and a document vector. The image
/// feature is first projected to the document width by a linear layer.
#[derive(Clone, Debug)]
pub struct VisualSiamese {
    pub projection: Dense,
    pub net: SiameseNet,
}

impl VisualSiamese {
    pub fn new(
        image_dim: usize,
        doc_dim: usize,
        widths: &[usize],
        params: &mut ParamBuilder<'_>,
    ) -> Self {
        Self {
            projection: params.scoped("projection", |p| Dense::new(image_dim, doc_dim, p)),
            net: params.scoped("branch", |p| SiameseNet::new(doc_dim, widths, p)),
        }
    }

    pub fn project(&self, tape: &mut Tape, binder: &mut Binder<'_>, image: Var) -> Result<Var> {
        let got = tape.value(image).len();
        if got != self.projection.input_dim() {
            return Err(Error::Dimension {
                what: "image feature",
                expected: self.projection.input_dim(),
                actual: got,
            });
        }
        self.projection.apply(tape, binder, image)
    }

    /// Compares the projected image with `doc`. A missing image yields the
    /// zero vector, and the projection is left off the tape entirely.
    pub fn compare(
        &self,
        tape: &mut Tape,
        binder: &mut Binder<'_>,
        image: Option<Var>,
        doc: Var,
    ) -> Result<Var> {
        match image {
            Some(image) => {
                let projected = self.project(tape, binder, image)?;
                self.net.compare(tape, binder, projected, doc)
            }
            None => {
                let got = tape.value(doc).len();
                if got != self.net.input_dim() {
                    return Err(Error::Dimension {
                        what: "document vector",
                        expected: self.net.input_dim(),
                        actual: got,
                    });
                }
                Ok(tape.constant(Tensor::zeros(&[self.net.output_dim()])))
            }
        }
    }
}
