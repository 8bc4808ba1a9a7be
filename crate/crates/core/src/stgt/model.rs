use super::{MaskMode, ModelConfig, ModelError, ModelParams};
use crate::autodiff::{Matrix, Tape, Var};

/// Substations sharing one calendar day.
///
/// `members` index sequences of the batch; `mask` is the row-major `B×B`
/// adjacency among them with a unit diagonal. Predictions are emitted for
/// the members at positions `targets`.
#[derive(Clone, Debug, PartialEq)]
pub struct DayGroup {
    pub members: Vec<usize>,
    pub mask: Vec<f64>,
    pub targets: Vec<usize>,
}

/// Stacked input windows plus their day grouping.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `(S·L) × F_x`, sequence `s` in rows `s·L .. (s+1)·L`.
    pub windows: Matrix,
    /// Substation index of every sequence.
    pub nodes: Vec<usize>,
    pub groups: Vec<DayGroup>,
}

impl Batch {
    pub fn sequences(&self) -> usize {
        self.nodes.len()
    }

    /// Number of predictions the batch produces.
    pub fn targets(&self) -> usize {
        self.groups.iter().map(|g| g.targets.len()).sum()
    }

    /// Sequence index behind every prediction row, in output order.
    pub fn target_sequences(&self) -> Vec<usize> {
        self.groups.iter().flat_map(|g| g.targets.iter().map(|&t| g.members[t])).collect()
    }
}

/// Handles produced by one forward pass.
#[derive(Debug)]
pub struct Forward {
    /// `T × 1` probabilities.
    pub probs: Var,
    pub logits: Var,
    /// One handle per parameter tensor, in [`ModelParams`] order.
    pub params: Vec<Var>,
    /// Fused temporal attention node of each encoder block.
    pub temporal_attention: Vec<Var>,
    /// Masked spatial attention weights (`B×B`) of each group.
    pub spatial_weights: Vec<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
    pub gamma: f64,
    /// Weight on positive samples, `(1 - r) / r` for positive share `r`.
    pub beta: f64,
    pub eps: f64,
}

impl LossConfig {
    pub fn new(alpha: f64, gamma: f64, positive_ratio: f64) -> Result<Self, ModelError> {
        if !(alpha > 0.0 && alpha < 1.0) || !(gamma >= 0.0) || !(positive_ratio > 0.0 && positive_ratio < 1.0) {
            return Err(ModelError::Config(format!(
                "loss needs 0 < alpha < 1, gamma >= 0 and 0 < r < 1 (got {alpha}, {gamma}, {positive_ratio})"
            )));
        }
        Ok(Self { alpha, gamma, beta: (1.0 - positive_ratio) / positive_ratio, eps: 1e-7 })
    }
}

/// Mean focal loss with `beta` applied to positive samples only.
pub fn focal_loss(tape: &mut Tape, probs: Var, labels: &[bool], cfg: &LossConfig) -> Result<Var, ModelError> {
    let y: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let w: Vec<f64> = labels.iter().map(|&l| if l { cfg.beta } else { 1.0 }).collect();
    Ok(tape.focal_loss(probs, &y, &w, cfg.alpha, cfg.gamma, cfg.eps)?)
}

/// `H = X·W_x + P` with `P` repeated for every sequence of `seq_len` rows.
pub fn embed_inputs(tape: &mut Tape, x: Var, w_x: Var, p: Var, seq_len: usize) -> Result<Var, ModelError> {
    let rows = tape.value(x).rows();
    if tape.value(p).rows() != seq_len || seq_len == 0 || rows % seq_len != 0 {
        return Err(ModelError::Batch(format!("{rows} input rows do not form windows of length {seq_len}")));
    }
    let xw = tape.matmul(x, w_x)?;
    let tiled: Vec<usize> = (0..rows).map(|r| r % seq_len).collect();
    let pos = tape.gather_rows(p, &tiled)?;
    Ok(tape.add(xw, pos)?)
}

/// Checks that `mask` is a symmetric 0/1 `b×b` matrix with a unit diagonal.
pub fn validate_mask(mask: &[f64], b: usize) -> Result<(), ModelError> {
    if mask.len() != b * b {
        return Err(ModelError::Mask(format!("{} entries for {b} substations", mask.len())));
    }
    for i in 0..b {
        if mask[i * b + i] != 1.0 {
            return Err(ModelError::Mask(format!("diagonal entry {i} is not 1")));
        }
        for j in 0..b {
            let v = mask[i * b + j];
            if v != 0.0 && v != 1.0 {
                return Err(ModelError::Mask(format!("entry ({i}, {j}) = {v} is not 0 or 1")));
            }
            if v != mask[j * b + i] {
                return Err(ModelError::Mask(format!("entries ({i}, {j}) and ({j}, {i}) differ")));
            }
        }
    }
    Ok(())
}

/// Single-head attention across one day group: weights
/// `softmax(QKᵀ/√d) ⊙ A` (post-softmax) or `softmax(QKᵀ/√d + log A)`
/// (pre-softmax), output `weights · V`. Returns the output and weights.
pub fn spatial_attention(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    mask: &[f64],
    mode: MaskMode,
) -> Result<(Var, Var), ModelError> {
    let (b, d) = tape.value(q).shape();
    validate_mask(mask, b)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = match mode {
        MaskMode::PostSoftmax => {
            let soft = tape.softmax_rows(scores)?;
            let m = tape.constant(Matrix::from_vec(b, b, mask.to_vec())?);
            tape.hadamard(soft, m)?
        }
        MaskMode::PreSoftmax => {
            let additive = mask.iter().map(|&a| if a == 1.0 { 0.0 } else { f64::NEG_INFINITY }).collect();
            let m = tape.constant(Matrix::from_vec(b, b, additive)?);
            let masked = tape.add(scores, m)?;
            tape.softmax_rows(masked)?
        }
    };
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StgtModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct Bound<'a> {
    params: &'a ModelParams,
    vars: Vec<Var>,
}

impl Bound<'_> {
    fn get(&self, name: &str) -> Var {
        self.vars[self.params.index_of(name).unwrap_or_else(|| panic!("parameter {name} missing"))]
    }
}

impl StgtModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self, ModelError> {
        config.validate()?;
        params.check_layout(&config)?;
        Ok(Self { config, params })
    }

    fn check_batch(&self, batch: &Batch, statics: &Matrix) -> Result<(), ModelError> {
        let c = &self.config;
        let err = |m: String| Err(ModelError::Batch(m));
        if batch.windows.shape() != (batch.nodes.len() * c.lookback, c.f_x) {
            return err(format!(
                "windows are {:?}, expected {}x{}",
                batch.windows.shape(),
                batch.nodes.len() * c.lookback,
                c.f_x
            ));
        }
        if statics.cols() != c.f_z || statics.rows() != c.n_nodes {
            return err(format!("static matrix is {:?}, expected {}x{}", statics.shape(), c.n_nodes, c.f_z));
        }
        if let Some(&n) = batch.nodes.iter().find(|&&n| n >= c.n_nodes) {
            return err(format!("node {n} out of range"));
        }
        if batch.groups.iter().all(|g| g.targets.is_empty()) {
            return err("batch has no targets".into());
        }
        for g in &batch.groups {
            if g.members.iter().any(|&m| m >= batch.nodes.len()) || g.targets.iter().any(|&t| t >= g.members.len()) {
                return err("group refers to a missing sequence".into());
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Parameters become gradient leaves
    /// when `trainable` is set, constants otherwise. `statics` holds one
    /// scaled static row per substation.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, statics: &Matrix, trainable: bool) -> Result<Forward, ModelError> {
        self.check_batch(batch, statics)?;
        let c = &self.config;
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|t| if trainable { tape.param(t.tensor.clone()) } else { tape.constant(t.tensor.clone()) })
            .collect();
        let p = Bound { params: &self.params, vars };
        let l = c.lookback;

        let x = tape.constant(batch.windows.clone());
        let mut h = embed_inputs(tape, x, p.get("W_x"), p.get("P"), l)?;
        let mut temporal_attention = Vec::with_capacity(c.blocks);
        for b in 0..c.blocks {
            let n = |s: &str| format!("block{b}.{s}");
            let a = tape.layer_norm(h, p.get(&n("ln1.gain")), p.get(&n("ln1.bias")))?;
            let q = tape.matmul(a, p.get(&n("W_q")))?;
            let k = tape.matmul(a, p.get(&n("W_k")))?;
            let v = tape.matmul(a, p.get(&n("W_v")))?;
            let att = tape.segment_attention(q, k, v, l, c.heads)?;
            temporal_attention.push(att);
            let o = tape.matmul(att, p.get(&n("W_o")))?;
            h = tape.add(h, o)?;
            let a = tape.layer_norm(h, p.get(&n("ln2.gain")), p.get(&n("ln2.bias")))?;
            let f = tape.matmul(a, p.get(&n("ff.W1")))?;
            let f = tape.add_row(f, p.get(&n("ff.b1")))?;
            let f = tape.relu(f)?;
            let f = tape.matmul(f, p.get(&n("ff.W2")))?;
            let f = tape.add_row(f, p.get(&n("ff.b2")))?;
            h = tape.add(h, f)?;
        }
        let last: Vec<usize> = (0..batch.sequences()).map(|s| s * l + l - 1).collect();
        let h_star = tape.gather_rows(h, &last)?;

        let mut spatial_weights = Vec::with_capacity(batch.groups.len());
        let mut fused_rows = Vec::with_capacity(batch.groups.len());
        for g in &batch.groups {
            let hs = tape.gather_rows(h_star, &g.members)?;
            let nodes: Vec<usize> = g.members.iter().map(|&m| batch.nodes[m]).collect();
            let es = tape.gather_rows(p.get("E"), &nodes)?;
            let u = tape.add(hs, es)?;
            let (out, w) = spatial_attention(tape, u, u, u, &g.mask, c.mask_mode)?;
            spatial_weights.push(w);
            if !g.targets.is_empty() {
                fused_rows.push(tape.gather_rows(out, &g.targets)?);
            }
        }
        let g_s = tape.concat_rows(&fused_rows)?;

        let target_nodes: Vec<usize> = batch.target_sequences().iter().map(|&s| batch.nodes[s]).collect();
        let z_all = tape.constant(statics.clone());
        let z = tape.gather_rows(z_all, &target_nodes)?;
        let z = tape.matmul(z, p.get("static.W1"))?;
        let z = tape.add_row(z, p.get("static.b1"))?;
        let z = tape.relu(z)?;
        let z = tape.matmul(z, p.get("static.W2"))?;
        let z_star = tape.add_row(z, p.get("static.b2"))?;

        let f = tape.concat_cols(&[g_s, z_star])?;
        let f = tape.matmul(f, p.get("head.W1"))?;
        let f = tape.add_row(f, p.get("head.b1"))?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, p.get("head.W2"))?;
        let f = tape.add_row(f, p.get("head.b2"))?;
        let f = tape.relu(f)?;
        let f = tape.matmul(f, p.get("head.W3"))?;
        let logits = tape.add_row(f, p.get("head.b3"))?;
        let probs = tape.sigmoid(logits)?;
        Ok(Forward { probs, logits, params: p.vars, temporal_attention, spatial_weights })
    }

    /// Probabilities for every target of `batch`, in output order.
    pub fn predict(&self, batch: &Batch, statics: &Matrix) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, statics, false)?;
        Ok(tape.value(fwd.probs).data().to_vec())
    }

    /// Loss and per-tensor gradients for one batch.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        statics: &Matrix,
        labels: &[bool],
        loss: &LossConfig,
    ) -> Result<(f64, Vec<Matrix>), ModelError> {
        if labels.len() != batch.targets() {
            return Err(ModelError::Batch(format!("{} labels for {} targets", labels.len(), batch.targets())));
        }
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, statics, true)?;
        let l = focal_loss(&mut tape, fwd.probs, labels, loss)?;
        tape.backward(l)?;
        let value = tape.value(l).data()[0];
        let grads = fwd
            .params
            .iter()
            .zip(self.params.iter())
            .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(t.tensor.rows(), t.tensor.cols())))
            .collect();
        Ok((value, grads))
    }
}
