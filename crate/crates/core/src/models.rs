//! Single-stream ViT encoder, the dual-stream classifier and the single-sniffer
//! baseline, expressed as graph builders over a [`ParamStore`].
//!
//! Models only hold parameter ids; the tensors live in a store that the caller
//! owns, so the same model can be evaluated in `f32` for training and in `f64`
//! for gradient checks.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{
    multi_head_attention, AutodiffError, Graph, HeadWeights, MhaWeights, ParamId, ParamStore, Scalar,
    Tensor, Var,
};
use crate::preprocess::{patch_grid, PatchSet};
use crate::rng::RngState;
use crate::types::{ActivityLabel, SnifferId, KEPT_SUBCARRIERS, NUM_CLASSES, WINDOW_PACKETS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{got} patches exceed the positional table of {max}")]
    TooManyPatches { got: usize, max: usize },
    #[error("logits contain a non-finite value")]
    NonFiniteLogits,
    #[error("expected {expected} logits, got {got}")]
    LogitCount { expected: usize, got: usize },
    #[error("patch length {got} does not match P*P = {expected}")]
    PatchLength { got: usize, expected: usize },
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width `L`.
    pub embed_dim: usize,
    /// Attention heads `M`.
    pub heads: usize,
    pub depth: usize,
    /// Patch side `P`.
    pub patch: usize,
    pub mlp_hidden: usize,
    pub dropout: f64,
    pub num_classes: usize,
    pub head_hidden: usize,
    /// Largest window the positional table must cover.
    pub input_rows: usize,
    pub input_cols: usize,
}

impl ModelConfig {
    pub fn paper() -> Self {
        Self {
            embed_dim: 128,
            heads: 4,
            depth: 6,
            patch: 45,
            mlp_hidden: 512,
            dropout: 0.4,
            num_classes: NUM_CLASSES,
            head_hidden: 64,
            input_rows: WINDOW_PACKETS,
            input_cols: KEPT_SUBCARRIERS,
        }
    }

    pub fn tiny() -> Self {
        Self {
            embed_dim: 8,
            heads: 2,
            depth: 1,
            patch: 2,
            mlp_hidden: 32,
            dropout: 0.0,
            num_classes: NUM_CLASSES,
            head_hidden: 8,
            input_rows: 4,
            input_cols: 4,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "paper" => Some(Self::paper()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    /// Rows of the positional table, `N_max`.
    pub fn max_patches(&self) -> usize {
        let (r, c) = patch_grid(self.input_rows, self.input_cols, self.patch.max(1));
        r * c
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.into()));
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(AutodiffError::HeadDivisibility { embed: self.embed_dim, heads: self.heads }.into());
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(AutodiffError::ProbabilityOutOfRange(self.dropout).into());
        }
        if self.patch == 0 || self.mlp_hidden == 0 || self.head_hidden == 0 || self.embed_dim == 0 {
            return bad("sizes must be positive");
        }
        if self.num_classes != NUM_CLASSES {
            return Err(ModelError::Config(format!("num_classes must be {NUM_CLASSES}")));
        }
        if self.input_rows == 0 || self.input_cols == 0 {
            return bad("input shape must be positive");
        }
        Ok(())
    }
}

fn xavier<F: Scalar>(rows: usize, cols: usize, rng: &mut RngState) -> Tensor<F> {
    let limit = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| F::of(rng.uniform_range(-limit, limit))).collect();
    Tensor::new(alloc::vec![rows, cols], data).expect("consistent shape")
}

fn normal<F: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Tensor<F> {
    let data = (0..rows * cols).map(|_| F::of(std * rng.normal())).collect();
    Tensor::new(alloc::vec![rows, cols], data).expect("consistent shape")
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct BlockIds {
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    attn: MhaWeights,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
    mlp_w1: ParamId,
    mlp_b1: ParamId,
    mlp_w2: ParamId,
    mlp_b2: ParamId,
}

/// Patch embedding, positional table and a stack of pre-norm transformer
/// blocks; the output feature is the token mean of the last block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VitEncoder {
    patch_projection: ParamId,
    positional: ParamId,
    blocks: Vec<BlockIds>,
    max_patches: usize,
    patch_len: usize,
}

impl VitEncoder {
    /// Registers a fresh encoder under `prefix`. `depth` may be zero here,
    /// which gives a pure embedding-and-pool encoder.
    pub fn init<F: Scalar>(
        cfg: &ModelConfig,
        prefix: &str,
        store: &mut ParamStore<F>,
        rng: &mut RngState,
    ) -> Result<Self, ModelError> {
        if cfg.heads == 0 || !cfg.embed_dim.is_multiple_of(cfg.heads) {
            return Err(AutodiffError::HeadDivisibility { embed: cfg.embed_dim, heads: cfg.heads }.into());
        }
        let l = cfg.embed_dim;
        let dh = l / cfg.heads;
        let plen = cfg.patch * cfg.patch;
        let n_max = cfg.max_patches();
        let patch_projection = store.add(format!("{prefix}.patch_proj"), xavier(plen, l, rng));
        let positional = store.add(format!("{prefix}.pos"), normal(n_max, l, 0.02, rng));
        let mut blocks = Vec::with_capacity(cfg.depth);
        for b in 0..cfg.depth {
            let p = format!("{prefix}.blocks.{b}");
            let ln1_gain = store.add(format!("{p}.ln1.gain"), Tensor::filled(&[1, l], F::one()));
            let ln1_bias = store.add(format!("{p}.ln1.bias"), Tensor::zeros(&[1, l]));
            let heads = (0..cfg.heads)
                .map(|h| HeadWeights {
                    q: store.add(format!("{p}.attn.{h}.q"), xavier(l, dh, rng)),
                    k: store.add(format!("{p}.attn.{h}.k"), xavier(l, dh, rng)),
                    v: store.add(format!("{p}.attn.{h}.v"), xavier(l, dh, rng)),
                })
                .collect();
            let out = store.add(format!("{p}.attn.out"), xavier(l, l, rng));
            let ln2_gain = store.add(format!("{p}.ln2.gain"), Tensor::filled(&[1, l], F::one()));
            let ln2_bias = store.add(format!("{p}.ln2.bias"), Tensor::zeros(&[1, l]));
            let mlp_w1 = store.add(format!("{p}.mlp.w1"), xavier(l, cfg.mlp_hidden, rng));
            let mlp_b1 = store.add(format!("{p}.mlp.b1"), Tensor::zeros(&[1, cfg.mlp_hidden]));
            let mlp_w2 = store.add(format!("{p}.mlp.w2"), xavier(cfg.mlp_hidden, l, rng));
            let mlp_b2 = store.add(format!("{p}.mlp.b2"), Tensor::zeros(&[1, l]));
            blocks.push(BlockIds {
                ln1_gain,
                ln1_bias,
                attn: MhaWeights { heads, out },
                ln2_gain,
                ln2_bias,
                mlp_w1,
                mlp_b1,
                mlp_w2,
                mlp_b2,
            });
        }
        Ok(Self { patch_projection, positional, blocks, max_patches: n_max, patch_len: plen })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn positional_id(&self) -> ParamId {
        self.positional
    }

    pub fn patch_projection_id(&self) -> ParamId {
        self.patch_projection
    }

    /// Tokens `flatten(patch_i) * W_patch + pos_i`, with dropout in training
    /// mode. `patches` is `N x P*P`.
    pub fn embed_patches<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        patches: Var,
        dropout: f64,
        rng: &mut RngState,
        train: bool,
    ) -> Result<Var, ModelError> {
        let shape = g.shape(patches).to_vec();
        let (n, plen) = (shape[0], shape.get(1).copied().unwrap_or(0));
        if plen != self.patch_len {
            return Err(ModelError::PatchLength { got: plen, expected: self.patch_len });
        }
        if n > self.max_patches {
            return Err(ModelError::TooManyPatches { got: n, max: self.max_patches });
        }
        let w = g.param(store, self.patch_projection);
        let tokens = g.matmul(patches, w)?;
        let pos_all = g.param(store, self.positional);
        let pos = if n == self.max_patches { pos_all } else { g.slice_rows(pos_all, 0, n)? };
        let x = g.add(tokens, pos)?;
        Ok(g.dropout(x, dropout, rng, train)?)
    }

    /// Runs the blocks and mean-pools tokens into a `1 x L` feature.
    pub fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        patches: Var,
        dropout: f64,
        rng: &mut RngState,
        train: bool,
    ) -> Result<Var, ModelError> {
        let mut x = self.embed_patches(g, store, patches, dropout, rng, train)?;
        for b in &self.blocks {
            let (gain, bias) = (g.param(store, b.ln1_gain), g.param(store, b.ln1_bias));
            let h = g.layer_norm(x, gain, bias)?;
            let a = multi_head_attention(g, store, h, &b.attn)?;
            x = g.add(x, a)?;
            let (gain, bias) = (g.param(store, b.ln2_gain), g.param(store, b.ln2_bias));
            let h = g.layer_norm(x, gain, bias)?;
            let (w1, b1) = (g.param(store, b.mlp_w1), g.param(store, b.mlp_b1));
            let h = g.linear(h, w1, b1)?;
            let h = g.gelu(h);
            let (w2, b2) = (g.param(store, b.mlp_w2), g.param(store, b.mlp_b2));
            let h = g.linear(h, w2, b2)?;
            x = g.add(x, h)?;
        }
        Ok(g.mean_over_axis(x, 0)?)
    }
}

/// Two-layer classification head with ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl HeadIds {
    fn init<F: Scalar>(cfg: &ModelConfig, input: usize, store: &mut ParamStore<F>, rng: &mut RngState) -> Self {
        Self {
            w1: store.add("head.w1", xavier(input, cfg.head_hidden, rng)),
            b1: store.add("head.b1", Tensor::zeros(&[1, cfg.head_hidden])),
            w2: store.add("head.w2", xavier(cfg.head_hidden, cfg.num_classes, rng)),
            b2: store.add("head.b2", Tensor::zeros(&[1, cfg.num_classes])),
        }
    }

    fn forward<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        feature: Var,
        dropout: f64,
        rng: &mut RngState,
        train: bool,
    ) -> Result<Var, ModelError> {
        let (w1, b1) = (g.param(store, self.w1), g.param(store, self.b1));
        let h = g.linear(feature, w1, b1)?;
        let h = g.relu(h);
        let h = g.dropout(h, dropout, rng, train)?;
        let (w2, b2) = (g.param(store, self.w2), g.param(store, self.b2));
        Ok(g.linear(h, w2, b2)?)
    }
}

/// Dual-stream classifier: one encoder per sniffer, features concatenated
/// and classified by the head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BivtcModel {
    encoder1: VitEncoder,
    encoder2: VitEncoder,
    head: HeadIds,
}

impl BivtcModel {
    pub fn encoder(&self, sniffer: SnifferId) -> &VitEncoder {
        match sniffer {
            SnifferId::S1 => &self.encoder1,
            SnifferId::S2 => &self.encoder2,
        }
    }

    /// Head applied to already-computed `1 x L` features of both streams.
    #[allow(clippy::too_many_arguments)]
    pub fn classify_features<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        f1: Var,
        f2: Var,
        dropout: f64,
        rng: &mut RngState,
        train: bool,
    ) -> Result<Var, ModelError> {
        let fc = g.concat_last_dim(&[f1, f2])?;
        self.head.forward(g, store, fc, dropout, rng, train)
    }
}

/// Single-stream baseline that sees one designated sniffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VitClassifier {
    encoder: VitEncoder,
    head: HeadIds,
    sniffer: SnifferId,
}

impl VitClassifier {
    pub fn sniffer(&self) -> SnifferId {
        self.sniffer
    }
}

/// Which architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bivtc,
    Vit { sniffer: SnifferId },
}

/// Patch tensors of both sniffers plus the class index.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample<F> {
    pub patches: [Tensor<F>; 2],
    pub label: usize,
}

impl<F: Scalar> PreparedSample<F> {
    pub fn new(p1: &PatchSet, p2: &PatchSet, label: ActivityLabel) -> Self {
        Self { patches: [patch_tensor(p1), patch_tensor(p2)], label: label.index() }
    }

    pub fn stream(&self, sniffer: SnifferId) -> &Tensor<F> {
        &self.patches[usize::from(sniffer.index() - 1)]
    }
}

/// `N x P*P` tensor of flattened patches.
pub fn patch_tensor<F: Scalar>(p: &PatchSet) -> Tensor<F> {
    let data = p.patches.iter().map(|v| F::of(*v)).collect();
    Tensor::new(alloc::vec![p.count(), p.patch_len()], data).expect("patch set is consistent")
}

/// A built model: architecture plus the ids of its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    kind: ModelKind,
    arch: Arch,
}

#[derive(Debug, Clone, PartialEq)]
enum Arch {
    Bivtc(BivtcModel),
    Vit(VitClassifier),
}

impl Model {
    /// Builds the model and its freshly initialized parameters.
    pub fn init<F: Scalar>(
        config: ModelConfig,
        kind: ModelKind,
        seed: u64,
    ) -> Result<(Self, ParamStore<F>), ModelError> {
        config.validate()?;
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let arch = match kind {
            ModelKind::Bivtc => {
                let encoder1 = VitEncoder::init(&config, "enc1", &mut store, &mut rng)?;
                let encoder2 = VitEncoder::init(&config, "enc2", &mut store, &mut rng)?;
                let head = HeadIds::init(&config, 2 * config.embed_dim, &mut store, &mut rng);
                Arch::Bivtc(BivtcModel { encoder1, encoder2, head })
            }
            ModelKind::Vit { sniffer } => {
                let encoder = VitEncoder::init(&config, "enc", &mut store, &mut rng)?;
                let head = HeadIds::init(&config, config.embed_dim, &mut store, &mut rng);
                Arch::Vit(VitClassifier { encoder, head, sniffer })
            }
        };
        Ok((Self { config, kind, arch }, store))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn as_bivtc(&self) -> Option<&BivtcModel> {
        match &self.arch {
            Arch::Bivtc(m) => Some(m),
            Arch::Vit(_) => None,
        }
    }

    /// Builds the forward pass for one sample and returns its `1 x 8` logits.
    pub fn logits<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        sample: &PreparedSample<F>,
        rng: &mut RngState,
        train: bool,
    ) -> Result<Var, ModelError> {
        let p = self.config.dropout;
        match &self.arch {
            Arch::Bivtc(m) => {
                let x1 = g.input_owned(sample.patches[0].clone());
                let x2 = g.input_owned(sample.patches[1].clone());
                let f1 = m.encoder1.forward(g, store, x1, p, rng, train)?;
                let f2 = m.encoder2.forward(g, store, x2, p, rng, train)?;
                m.classify_features(g, store, f1, f2, p, rng, train)
            }
            Arch::Vit(m) => {
                let x = g.input_owned(sample.stream(m.sniffer).clone());
                let f = m.encoder.forward(g, store, x, p, rng, train)?;
                m.head.forward(g, store, f, p, rng, train)
            }
        }
    }

    /// Logits plus cross-entropy against the sample's label.
    pub fn loss<'p, F: Scalar>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        sample: &PreparedSample<F>,
        rng: &mut RngState,
        train: bool,
    ) -> Result<(Var, Var), ModelError> {
        let logits = self.logits(g, store, sample, rng, train)?;
        let loss = g.cross_entropy(logits, sample.label)?;
        Ok((logits, loss))
    }

    /// Evaluation-mode logits as plain values.
    pub fn infer<F: Scalar>(&self, store: &ParamStore<F>, sample: &PreparedSample<F>) -> Result<Vec<F>, ModelError> {
        let mut g = Graph::new();
        let mut rng = RngState::new(0);
        let v = self.logits(&mut g, store, sample, &mut rng, false)?;
        Ok(g.value(v).to_vec())
    }
}

/// Label of the largest logit; ties go to the lowest class index.
pub fn predict<F: Scalar>(logits: &[F]) -> Result<ActivityLabel, ModelError> {
    if logits.len() != NUM_CLASSES {
        return Err(ModelError::LogitCount { expected: NUM_CLASSES, got: logits.len() });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFiniteLogits);
    }
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    Ok(ActivityLabel::from_index(best).expect("index below class count"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, loss_fn};
    use crate::preprocess::patchify;
    use crate::types::AmplitudeWindow;

    fn window(seed: u64, rows: usize, cols: usize) -> AmplitudeWindow {
        let mut rng = RngState::new(seed);
        let data = (0..rows * cols).map(|_| rng.normal()).collect();
        AmplitudeWindow::new(rows, cols, data, 30).unwrap()
    }

    fn sample(seed: u64, label: ActivityLabel) -> PreparedSample<f64> {
        let p1 = patchify(&window(seed, 4, 4), 2).unwrap();
        let p2 = patchify(&window(seed + 100, 4, 4), 2).unwrap();
        PreparedSample::new(&p1, &p2, label)
    }

    #[test]
    fn presets_are_valid() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        assert_eq!(ModelConfig::paper().max_patches(), 48);
        assert_eq!(ModelConfig::tiny().max_patches(), 4);
        let mut c = ModelConfig::tiny();
        c.heads = 3;
        assert!(matches!(c.validate(), Err(ModelError::Autodiff(AutodiffError::HeadDivisibility { .. }))));
    }

    #[test]
    fn predict_rules() {
        let mut onehot = [0.0f64; 8];
        onehot[3] = 1.0;
        assert_eq!(predict(&onehot).unwrap(), ActivityLabel::Silence);
        assert_eq!(predict(&[0.5f64; 8]).unwrap(), ActivityLabel::Arc);
        let mut bad = [0.0f64; 8];
        bad[2] = f64::NAN;
        assert_eq!(predict(&bad), Err(ModelError::NonFiniteLogits));
    }

    #[test]
    fn logits_have_class_width_and_eval_is_deterministic() {
        let (m, s) = Model::init::<f64>(ModelConfig::tiny(), ModelKind::Bivtc, 1).unwrap();
        let x = sample(2, ActivityLabel::Rectangle);
        let a = m.infer(&s, &x).unwrap();
        let b = m.infer(&s, &x).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_patches_is_rejected() {
        let (m, s) = Model::init::<f64>(ModelConfig::tiny(), ModelKind::Bivtc, 1).unwrap();
        let p = patchify(&window(1, 6, 4), 2).unwrap();
        let x = PreparedSample::new(&p, &p, ActivityLabel::Arc);
        assert_eq!(m.infer(&s, &x), Err(ModelError::TooManyPatches { got: 6, max: 4 }));
    }

    #[test]
    fn identical_patches_differ_by_positional_rows() {
        let (m, s) = Model::init::<f64>(ModelConfig::tiny(), ModelKind::Bivtc, 4).unwrap();
        let enc = m.as_bivtc().unwrap().encoder(SnifferId::S1);
        let patches = Tensor::from_f64(2, 4, &[0.3, -0.1, 0.7, 0.2, 0.3, -0.1, 0.7, 0.2]).unwrap();
        let mut g = Graph::new();
        let x = g.input(&patches);
        let mut rng = RngState::new(0);
        let t = enc.embed_patches(&mut g, &s, x, 0.0, &mut rng, false).unwrap();
        let pos = s.get(enc.positional_id()).data();
        let v = g.value(t);
        for j in 0..8 {
            let diff = v[8 + j] - v[j];
            assert!((diff - (pos[8 + j] - pos[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_bivtc_passes_gradient_check() {
        let (m, s) = Model::init::<f64>(ModelConfig::tiny(), ModelKind::Bivtc, 11).unwrap();
        let x = sample(5, ActivityLabel::Triangle);
        let f = loss_fn(|g, s| {
            let mut rng = RngState::new(0);
            let (_, loss) = m.loss(g, s, &x, &mut rng, true).map_err(|e| match e {
                ModelError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            Ok(loss)
        });
        let rep = grad_check(&f, &s, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{rep:?}");
    }
}
