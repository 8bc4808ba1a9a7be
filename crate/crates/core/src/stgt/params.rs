use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::autodiff::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Softmax over the whole row, then zero non-adjacent weights.
    PostSoftmax,
    /// Non-adjacent scores set to `-inf` before the softmax.
    PreSoftmax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub lookback: usize,
    pub blocks: usize,
    pub ff_mult: usize,
    pub f_x: usize,
    pub f_z: usize,
    pub n_nodes: usize,
    pub static_hidden: usize,
    pub head_hidden: [usize; 2],
    pub mask_mode: MaskMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 8,
            lookback: 14,
            blocks: 2,
            ff_mult: 4,
            f_x: crate::features::F_X,
            f_z: 15,
            n_nodes: 10,
            static_hidden: 64,
            head_hidden: [64, 32],
            mask_mode: MaskMode::PostSoftmax,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be a positive multiple of heads");
        }
        if self.d_model % 2 != 0 {
            return bad("d_model must be even");
        }
        if self.lookback == 0 || self.f_x == 0 || self.n_nodes == 0 || self.ff_mult == 0 {
            return bad("lookback, f_x, n_nodes and ff_mult must be positive");
        }
        if self.static_hidden == 0 || self.head_hidden.contains(&0) {
            return bad("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn static_out(&self) -> usize {
        self.d_model / 2
    }

    pub fn fused_width(&self) -> usize {
        self.d_model + self.static_out()
    }

    /// Every parameter tensor: name, shape and initial bound (`None` for
    /// constant initialization).
    pub(crate) fn layout(&self) -> Vec<(String, usize, usize, Init)> {
        let d = self.d_model;
        let dk = d / self.heads;
        let ff = self.ff_mult * d;
        let xavier = |i: usize, o: usize| Init::Uniform((6.0 / (i + o) as f64).sqrt());
        let mut l = vec![
            ("W_x".to_string(), self.f_x, d, xavier(self.f_x, d)),
            ("P".to_string(), self.lookback, d, Init::Zero),
        ];
        for b in 0..self.blocks {
            let n = |s: &str| format!("block{b}.{s}");
            l.extend([
                (n("ln1.gain"), 1, d, Init::One),
                (n("ln1.bias"), 1, d, Init::Zero),
                (n("W_q"), d, d, xavier(d, dk)),
                (n("W_k"), d, d, xavier(d, dk)),
                (n("W_v"), d, d, xavier(d, dk)),
                (n("W_o"), d, d, xavier(d, d)),
                (n("ln2.gain"), 1, d, Init::One),
                (n("ln2.bias"), 1, d, Init::Zero),
                (n("ff.W1"), d, ff, xavier(d, ff)),
                (n("ff.b1"), 1, ff, Init::Zero),
                (n("ff.W2"), ff, d, xavier(ff, d)),
                (n("ff.b2"), 1, d, Init::Zero),
            ]);
        }
        let (h1, h2) = (self.head_hidden[0], self.head_hidden[1]);
        let so = self.static_out();
        l.extend([
            ("E".to_string(), self.n_nodes, d, Init::Zero),
            ("static.W1".to_string(), self.f_z, self.static_hidden, xavier(self.f_z, self.static_hidden)),
            ("static.b1".to_string(), 1, self.static_hidden, Init::Zero),
            ("static.W2".to_string(), self.static_hidden, so, xavier(self.static_hidden, so)),
            ("static.b2".to_string(), 1, so, Init::Zero),
            ("head.W1".to_string(), self.fused_width(), h1, xavier(self.fused_width(), h1)),
            ("head.b1".to_string(), 1, h1, Init::Zero),
            ("head.W2".to_string(), h1, h2, xavier(h1, h2)),
            ("head.b2".to_string(), 1, h2, Init::Zero),
            ("head.W3".to_string(), h2, 1, xavier(h2, 1)),
            ("head.b3".to_string(), 1, 1, Init::Zero),
        ]);
        l
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zero,
    One,
    Uniform(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Matrix,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelParams {
    tensors: Vec<NamedTensor>,
}

impl ModelParams {
    /// Xavier-uniform weights; biases, positional encodings and node
    /// embeddings zero; layer-norm gains one.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = cfg
            .layout()
            .into_iter()
            .map(|(name, r, c, init)| {
                let tensor = match init {
                    Init::Zero => Matrix::zeros(r, c),
                    Init::One => Matrix::filled(r, c, 1.0),
                    Init::Uniform(b) => {
                        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-b..=b)).collect()).expect("shape")
                    }
                };
                NamedTensor { name, tensor }
            })
            .collect();
        Ok(Self { tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor> {
        self.tensors.iter()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.tensors.iter_mut().map(|t| &mut t.tensor)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|t| t.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.tensors.iter_mut().find(|t| t.name == name).map(|t| &mut t.tensor)
    }

    pub fn tensor(&self, i: usize) -> &Matrix {
        &self.tensors[i].tensor
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Matrix {
        &mut self.tensors[i].tensor
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.tensor.is_finite())
    }

    /// Checks names and shapes against `cfg`.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let layout = cfg.layout();
        if layout.len() != self.tensors.len() {
            return Err(ModelError::Checkpoint(format!("expected {} tensors, found {}", layout.len(), self.tensors.len())));
        }
        for ((name, r, c, _), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name || (*r, *c) != t.tensor.shape() || t.tensor.len() != r * c {
                return Err(ModelError::Checkpoint(format!(
                    "expected {name} {r}x{c}, found {} {:?}",
                    t.name,
                    t.tensor.shape()
                )));
            }
        }
        Ok(())
    }
}

pub const CHECKPOINT_FORMAT: &str = "stgt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ModelParams) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, config, params }
    }

    pub fn to_json(&self) -> Result<String, ModelError> {
        serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported format {} v{}", ck.format, ck.version)));
        }
        ck.config.validate()?;
        ck.params.check_layout(&ck.config)?;
        Ok(ck)
    }
}
