use rand::Rng;

use crate::error::{Error, Result};
use crate::features::PcaTransform;
use crate::linalg::Matrix;

use super::posenc::{periods, POSENC_PER_AXIS};
use super::tape::{Gradients, NodeId, Tape};

#[derive(Debug, Clone, PartialEq)]
pub struct ScrModelConfig {
    pub width: usize,
    /// Residual blocks in the coarse trunk.
    pub n_blocks: usize,
    /// Residual blocks in the refinement module.
    pub n_refine_blocks: usize,
    pub expansion: usize,
    pub n_clusters: usize,
    pub n_periods: usize,
    pub local_dim: usize,
    pub global_dim: usize,
    /// When false the network stops at the coarse output and `y = y0`.
    pub refinement: bool,
}

impl Default for ScrModelConfig {
    fn default() -> Self {
        Self {
            width: 256,
            n_blocks: 3,
            n_refine_blocks: 3,
            expansion: 2,
            n_clusters: 50,
            n_periods: 13,
            local_dim: 128,
            global_dim: 256,
            refinement: true,
        }
    }
}

impl ScrModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.width % 64 != 0 {
            return bad(format!("width {} is not a positive multiple of 64", self.width));
        }
        if self.n_clusters == 0 || self.expansion == 0 || self.n_periods == 0 {
            return bad("clusters, expansion and periods must be positive".into());
        }
        if self.local_dim + self.global_dim == 0 {
            return bad("empty input".into());
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.local_dim + self.global_dim
    }

    pub fn posenc_dim(&self) -> usize {
        3 * self.n_periods * POSENC_PER_AXIS
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Dense {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    fc1: Dense,
    fc2: Dense,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Layout {
    input: Dense,
    coarse: Vec<Block>,
    logits: Dense,
    offset0: Dense,
    posenc: Option<Dense>,
    refine: Vec<Block>,
    offset1: Option<Dense>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Init {
    /// Kaiming-uniform for a layer feeding a ReLU.
    Relu,
    /// Fan-in uniform with bound `1/√fan_in`.
    Linear,
    Zero,
}

struct Builder<'a, R: Rng> {
    names: Vec<String>,
    params: Vec<Matrix>,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Dense {
        let bound = match init {
            Init::Relu => (6.0 / fan_in as f64).sqrt(),
            Init::Linear => 1.0 / (fan_in as f64).sqrt(),
            Init::Zero => 0.0,
        };
        let rng = &mut *self.rng;
        let w = if bound > 0.0 {
            Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-bound..bound))
        } else {
            Matrix::zeros(fan_in, fan_out)
        };
        self.names.push(format!("{name}.w"));
        self.params.push(w);
        self.names.push(format!("{name}.b"));
        self.params.push(Matrix::zeros(1, fan_out));
        Dense {
            w: self.params.len() - 2,
            b: self.params.len() - 1,
        }
    }

    fn block(&mut self, name: &str, w: usize, hidden: usize) -> Block {
        Block {
            fc1: self.dense(&format!("{name}.fc1"), w, hidden, Init::Relu),
            fc2: self.dense(&format!("{name}.fc2"), hidden, w, Init::Linear),
        }
    }
}

/// Coarse-to-fine scene coordinate network plus the fixed data it needs at
/// query time.
#[derive(Debug, Clone)]
pub struct ScrModel {
    config: ScrModelConfig,
    names: Vec<String>,
    params: Vec<Matrix>,
    /// `C × 3`, fixed after construction.
    centers: Matrix,
    periods: Vec<f64>,
    layout: Layout,
    pub pca: Option<PcaTransform>,
}

/// Tape of one forward pass with handles to both outputs.
#[derive(Debug, Clone)]
pub struct Forward {
    pub tape: Tape,
    offset0: NodeId,
    y0: NodeId,
    y: NodeId,
}

impl Forward {
    /// Offset added to the cluster mixture in the coarse decoder.
    pub fn coarse_offset(&self) -> &Matrix {
        self.tape.value(self.offset0)
    }

    pub fn y0(&self) -> &Matrix {
        self.tape.value(self.y0)
    }

    pub fn y(&self) -> &Matrix {
        self.tape.value(self.y)
    }
}

impl ScrModel {
    /// Fresh model: fan-in uniform hidden layers, zero logits and offset heads.
    pub fn new(config: ScrModelConfig, centers: Matrix, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if centers.shape() != (config.n_clusters, 3) {
            return Err(Error::DimensionMismatch {
                expected: config.n_clusters * 3,
                got: centers.rows() * centers.cols(),
            });
        }
        let w = config.width;
        let hidden = w * config.expansion;
        let mut b = Builder {
            names: Vec::new(),
            params: Vec::new(),
            rng,
        };
        let input = b.dense("input", config.input_dim(), w, Init::Relu);
        let coarse = (0..config.n_blocks).map(|i| b.block(&format!("coarse.{i}"), w, hidden)).collect();
        let logits = b.dense("logits", w, config.n_clusters, Init::Zero);
        let offset0 = b.dense("offset0", w, 3, Init::Zero);
        let (posenc, refine, offset1) = if config.refinement {
            let p = b.dense("posenc", config.posenc_dim(), w, Init::Linear);
            let r = (0..config.n_refine_blocks).map(|i| b.block(&format!("refine.{i}"), w, hidden)).collect();
            let o = b.dense("offset1", w, 3, Init::Zero);
            (Some(p), r, Some(o))
        } else {
            (None, Vec::new(), None)
        };
        let layout = Layout {
            input,
            coarse,
            logits,
            offset0,
            posenc,
            refine,
            offset1,
        };
        Ok(Self {
            periods: periods(config.n_periods),
            config,
            names: b.names,
            params: b.params,
            centers,
            layout,
            pca: None,
        })
    }

    /// Rebuilds a model from named parameters (e.g. a checkpoint).
    pub fn from_parts(config: ScrModelConfig, centers: Matrix, named: Vec<(String, Matrix)>) -> Result<Self> {
        let mut rng = crate::rng::stream(0, 0);
        let mut model = Self::new(config, centers, &mut rng)?;
        if named.len() != model.params.len() {
            return Err(Error::DimensionMismatch {
                expected: model.params.len(),
                got: named.len(),
            });
        }
        for (name, m) in named {
            let idx = model
                .param_index(&name)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter {name}")))?;
            if m.shape() != model.params[idx].shape() {
                return Err(Error::InvalidConfig(format!("parameter {name} has the wrong shape")));
            }
            model.params[idx] = m;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ScrModelConfig {
        &self.config
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.rows() * p.cols()).sum()
    }

    fn block(&self, tape: &mut Tape, h: NodeId, b: &Block) -> NodeId {
        let z = tape.linear(&self.params, h, b.fc1.w, b.fc1.b);
        let a = tape.relu(z);
        let o = tape.linear(&self.params, a, b.fc2.w, b.fc2.b);
        tape.add(h, o)
    }

    /// Runs the network on `B × (local_dim + global_dim)` inputs.
    pub fn forward(&self, input: &Matrix) -> Result<Forward> {
        if input.cols() != self.config.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim(),
                got: input.cols(),
            });
        }
        let l = &self.layout;
        let p = &self.params;
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let z = tape.linear(p, x, l.input.w, l.input.b);
        let mut h = tape.relu(z);
        for b in &l.coarse {
            h = self.block(&mut tape, h, b);
        }
        let logits = tape.linear(p, h, l.logits.w, l.logits.b);
        let off0 = tape.linear(p, h, l.offset0.w, l.offset0.b);
        let y0 = tape.mixture(logits, off0, &self.centers);
        let y = match (l.posenc, l.offset1) {
            (Some(pe), Some(o1)) => {
                let enc = tape.posenc(y0, &self.periods);
                let proj = tape.linear(p, enc, pe.w, pe.b);
                let mut r = tape.add(h, proj);
                for b in &l.refine {
                    r = self.block(&mut tape, r, b);
                }
                let off1 = tape.linear(p, r, o1.w, o1.b);
                tape.add(y0, off1)
            }
            _ => y0,
        };
        if let Some(bad) = tape.first_non_finite() {
            return Err(Error::NonFiniteActivation(format!("tape node {bad}")));
        }
        Ok(Forward { tape, offset0: off0, y0, y })
    }

    /// Recomputes `fwd` after parameter `param` changed, skipping the nodes
    /// that do not depend on it.
    pub fn replay(&self, fwd: &mut Forward, param: usize) {
        if let Some(from) = fwd.tape.first_use(param) {
            fwd.tape.replay(&self.params, &self.centers, from);
        }
    }

    /// Gradients of a scalar loss given its adjoints with respect to `y0` and `y`.
    pub fn backward(&self, fwd: &Forward, dy0: &Matrix, dy: &Matrix) -> Gradients {
        fwd.tape.backward(&self.params, &self.centers, &[(fwd.y0, dy0), (fwd.y, dy)])
    }
}
