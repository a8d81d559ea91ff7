//! The empathy and distress multi-input, multi-task networks.
//!
//! Both share one layout:
//!
//! ```text
//! text (768) -> dropout -> trunk 128 -> T1 16 -> bin head (sigmoid)
//!                                    -> T2 16 -> emotion head (softmax)
//! 4 demographics -> 3-d embeddings -> flatten 12 -> 32 -> 16 = C
//! 9 scores -> one 8-unit layer each -> concat 72 -> 32 = N
//! (distress) NRC 6 -> 8, Empath 15 -> 16, concat 24 -> 48 = L
//! [T1; T2; C; N (; L)] -> fusion 16 -> regression 1 (linear)
//! ```
//!
//! All hidden layers use tanh. Tensors are visited in a fixed canonical
//! order, which is also the checkpoint order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DemographicVocabs;
use crate::error::{Error, Result};
use crate::lexicon::FeatureSpec;
use crate::nn::{
    dropout_forward, loss, Activation, DenseCache, DenseLayer, EmbeddingTable, Mode, Tensor2,
};

pub const CATEGORICAL_INPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Empathy,
    Distress,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Empathy => "empathy",
            Target::Distress => "distress",
        }
    }
}

impl std::fmt::Display for Target {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empathy" => Ok(Target::Empathy),
            "distress" => Ok(Target::Distress),
            other => Err(Error::Config(format!("unknown target `{other}`"))),
        }
    }
}

/// How the psychological scores enter the numeric branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericGrouping {
    /// One hidden layer per score.
    PerScore,
    /// One hidden layer per contiguous group (`score_groups`).
    PerGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub mode: Target,
    pub text_dim: usize,
    pub trunk_units: usize,
    pub task_units: usize,
    pub entity_dim: usize,
    pub categorical_units: [usize; 2],
    pub num_scores: usize,
    pub score_units: usize,
    pub numeric_grouping: NumericGrouping,
    /// Group sizes for [`NumericGrouping::PerGroup`]; must sum to `num_scores`.
    pub score_groups: Vec<usize>,
    pub numeric_units: usize,
    pub nrc_units: usize,
    pub empath_units: usize,
    pub lexical_units: usize,
    pub fusion_units: usize,
    pub emotion_classes: usize,
    pub dropout: f64,
    pub l2: f64,
    /// Names of the dense layers carrying the L2 kernel penalty.
    pub regularized: Vec<String>,
    /// Lexical inputs; required in distress mode, absent in empathy mode.
    pub features: Option<FeatureSpec>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Target::Empathy,
            text_dim: 768,
            trunk_units: 128,
            task_units: 16,
            entity_dim: 3,
            categorical_units: [32, 16],
            num_scores: 9,
            score_units: 8,
            numeric_grouping: NumericGrouping::PerScore,
            score_groups: vec![5, 4],
            numeric_units: 32,
            nrc_units: 8,
            empath_units: 16,
            lexical_units: 48,
            fusion_units: 16,
            emotion_classes: 7,
            dropout: 0.2,
            l2: 5e-4,
            regularized: [
                "trunk",
                "task_bin",
                "task_emotion",
                "categorical_out",
                "numeric_merge",
                "lexical_merge",
                "fusion",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            features: None,
        }
    }
}

impl ModelConfig {
    pub fn empathy(emotion_classes: usize) -> Self {
        Self {
            emotion_classes,
            ..Self::default()
        }
    }

    pub fn distress(emotion_classes: usize, features: FeatureSpec) -> Self {
        Self {
            mode: Target::Distress,
            emotion_classes,
            features: Some(features),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        match (self.mode, &self.features) {
            (Target::Distress, None) => {
                return err("distress mode requires lexical features".into())
            }
            (Target::Empathy, Some(_)) => {
                return err("empathy mode takes no lexical features".into())
            }
            (Target::Distress, Some(f)) if f.nrc.is_empty() || f.empath.is_empty() => {
                return err("distress mode needs at least one NRC and one Empath feature".into())
            }
            _ => {}
        }
        if self.emotion_classes < 2 {
            return err(format!(
                "need at least 2 emotion classes, got {}",
                self.emotion_classes
            ));
        }
        if self.numeric_grouping == NumericGrouping::PerGroup
            && self.score_groups.iter().sum::<usize>() != self.num_scores
        {
            return err(format!(
                "score groups {:?} do not cover {} scores",
                self.score_groups, self.num_scores
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return err(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.l2 < 0.0 {
            return err(format!("negative l2 coefficient {}", self.l2));
        }
        let sizes = [
            self.text_dim,
            self.trunk_units,
            self.task_units,
            self.entity_dim,
            self.categorical_units[0],
            self.categorical_units[1],
            self.num_scores,
            self.score_units,
            self.numeric_units,
            self.fusion_units,
        ];
        if sizes.contains(&0) {
            return err("layer sizes must be positive".into());
        }
        Ok(())
    }

    fn score_slices(&self) -> Vec<usize> {
        match self.numeric_grouping {
            NumericGrouping::PerScore => vec![1; self.num_scores],
            NumericGrouping::PerGroup => self.score_groups.clone(),
        }
    }

    /// Width of the fused representation fed to the fusion layer.
    pub fn fusion_width(&self) -> usize {
        let base = 2 * self.task_units + self.categorical_units[1] + self.numeric_units;
        match self.mode {
            Target::Empathy => base,
            Target::Distress => base + self.lexical_units,
        }
    }

    fn lexical_widths(&self) -> Option<(usize, usize)> {
        self.features
            .as_ref()
            .map(|f| (f.nrc.len(), f.empath.len()))
    }

    fn l2_for(&self, layer: &str) -> f64 {
        if self.regularized.iter().any(|r| r == layer) {
            self.l2
        } else {
            0.0
        }
    }
}

/// Numeric inputs for one essay.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub text: Vec<f64>,
    pub categorical: [usize; CATEGORICAL_INPUTS],
    /// Standardized psychological scores.
    pub scores: Vec<f64>,
    /// Standardized NRC then Empath features (distress only).
    pub lexical: Option<Vec<f64>>,
}

/// Training targets for one essay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTarget {
    pub score: f64,
    pub bin: f64,
    pub emotion: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub text: Tensor2,
    pub categorical: Vec<[usize; CATEGORICAL_INPUTS]>,
    pub scores: Tensor2,
    pub lexical: Option<Tensor2>,
}

impl Batch {
    pub fn from_inputs<'a>(inputs: impl IntoIterator<Item = &'a ModelInput>) -> Result<Self> {
        let inputs: Vec<&ModelInput> = inputs.into_iter().collect();
        if inputs.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        let text = Tensor2::from_rows(&inputs.iter().map(|i| i.text.clone()).collect::<Vec<_>>())?;
        let scores =
            Tensor2::from_rows(&inputs.iter().map(|i| i.scores.clone()).collect::<Vec<_>>())?;
        let lexical = if inputs[0].lexical.is_some() {
            let rows = inputs
                .iter()
                .map(|i| {
                    i.lexical
                        .clone()
                        .ok_or_else(|| Error::Missing("lexical block missing in batch row".into()))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(Tensor2::from_rows(&rows)?)
        } else {
            if inputs.iter().any(|i| i.lexical.is_some()) {
                return Err(Error::Missing("lexical block missing in batch row".into()));
            }
            None
        };
        Ok(Self {
            text,
            categorical: inputs.iter().map(|i| i.categorical).collect(),
            scores,
            lexical,
        })
    }

    pub fn len(&self) -> usize {
        self.text.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.text.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub score: Vec<f64>,
    pub bin: Vec<f64>,
    pub emotion: Vec<usize>,
}

impl Targets {
    pub fn from_targets<'a>(targets: impl IntoIterator<Item = &'a TaskTarget>) -> Self {
        let mut out = Targets {
            score: Vec::new(),
            bin: Vec::new(),
            emotion: Vec::new(),
        };
        for t in targets {
            out.score.push(t.score);
            out.bin.push(t.bin);
            out.emotion.push(t.emotion);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutputs {
    /// Regression output, unclamped.
    pub score: Vec<f64>,
    pub bin_prob: Vec<f64>,
    /// n x E, rows on the simplex.
    pub emotion_probs: Tensor2,
}

/// Decomposed objective; `total` is always `reg_mse + bin_bce + emo_ce + l2_penalty`
/// summed left to right.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiTaskLoss {
    pub reg_mse: f64,
    pub bin_bce: f64,
    pub emo_ce: f64,
    pub l2_penalty: f64,
    pub total: f64,
}

impl MultiTaskLoss {
    pub fn new(reg_mse: f64, bin_bce: f64, emo_ce: f64, l2_penalty: f64) -> Self {
        Self {
            reg_mse,
            bin_bce,
            emo_ce,
            l2_penalty,
            total: reg_mse + bin_bce + emo_ce + l2_penalty,
        }
    }
}

/// Gradients of the loss w.r.t. the three head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads {
    pub score: Tensor2,
    pub bin: Tensor2,
    pub emotion: Tensor2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexicalBranch {
    pub nrc: DenseLayer,
    pub empath: DenseLayer,
    pub merge: DenseLayer,
}

/// All trainable tensors of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct MtlNetwork {
    config: ModelConfig,
    pub trunk: DenseLayer,
    pub task_bin: DenseLayer,
    pub task_emotion: DenseLayer,
    pub head_bin: DenseLayer,
    pub head_emotion: DenseLayer,
    pub embeddings: Vec<EmbeddingTable>,
    pub categorical_hidden: DenseLayer,
    pub categorical_out: DenseLayer,
    pub score_layers: Vec<DenseLayer>,
    pub numeric_merge: DenseLayer,
    pub lexical: Option<LexicalBranch>,
    pub fusion: DenseLayer,
    pub regression: DenseLayer,
}

/// Gradients shaped like the network's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(MtlNetwork);

impl Gradients {
    /// Gradient tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, &Tensor2)> {
        self.0.tensors()
    }

    pub fn as_network(&self) -> &MtlNetwork {
        &self.0
    }
}

pub struct ForwardCache {
    dropout_mask: Option<Tensor2>,
    trunk: DenseCache,
    task_bin: DenseCache,
    task_emotion: DenseCache,
    head_bin: DenseCache,
    head_emotion: DenseCache,
    categorical_hidden: DenseCache,
    categorical_out: DenseCache,
    scores: Vec<DenseCache>,
    numeric_merge: DenseCache,
    lexical: Option<[DenseCache; 3]>,
    fusion: DenseCache,
    regression: DenseCache,
}

const DEMOGRAPHIC_NAMES: [&str; CATEGORICAL_INPUTS] = ["gender", "education", "race", "age"];

impl MtlNetwork {
    pub fn build<R: Rng + ?Sized>(
        config: &ModelConfig,
        vocabs: &DemographicVocabs,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build_with_sizes(config, vocabs.sizes(), rng)
    }

    pub fn build_with_sizes<R: Rng + ?Sized>(
        config: &ModelConfig,
        vocab_sizes: [usize; CATEGORICAL_INPUTS],
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "empty vocabulary in {vocab_sizes:?}"
            )));
        }
        let c = config;
        let tanh = Activation::Tanh;
        let mut dense = |name: &str, i: usize, o: usize, act: Activation| {
            DenseLayer::init(i, o, act, c.l2_for(name), rng)
        };
        let trunk = dense("trunk", c.text_dim, c.trunk_units, tanh);
        let task_bin = dense("task_bin", c.trunk_units, c.task_units, tanh);
        let task_emotion = dense("task_emotion", c.trunk_units, c.task_units, tanh);
        let head_bin = dense("head_bin", c.task_units, 1, Activation::Sigmoid);
        let head_emotion = dense(
            "head_emotion",
            c.task_units,
            c.emotion_classes,
            Activation::Softmax,
        );
        let flat = CATEGORICAL_INPUTS * c.entity_dim;
        let categorical_hidden = dense("categorical_hidden", flat, c.categorical_units[0], tanh);
        let categorical_out = dense(
            "categorical_out",
            c.categorical_units[0],
            c.categorical_units[1],
            tanh,
        );
        let slices = c.score_slices();
        let score_layers: Vec<DenseLayer> = slices
            .iter()
            .enumerate()
            .map(|(i, &w)| dense(&format!("score_{i}"), w, c.score_units, tanh))
            .collect();
        let numeric_merge = dense(
            "numeric_merge",
            slices.len() * c.score_units,
            c.numeric_units,
            tanh,
        );
        let lexical = c.lexical_widths().map(|(n_nrc, n_empath)| LexicalBranch {
            nrc: dense("lexical_nrc", n_nrc, c.nrc_units, tanh),
            empath: dense("lexical_empath", n_empath, c.empath_units, tanh),
            merge: dense(
                "lexical_merge",
                c.nrc_units + c.empath_units,
                c.lexical_units,
                tanh,
            ),
        });
        let fusion = dense("fusion", c.fusion_width(), c.fusion_units, tanh);
        let regression = dense("regression", c.fusion_units, 1, Activation::Linear);
        let embeddings = vocab_sizes
            .iter()
            .map(|&v| EmbeddingTable::init(v, c.entity_dim, rng))
            .collect();
        Ok(Self {
            config: config.clone(),
            trunk,
            task_bin,
            task_emotion,
            head_bin,
            head_emotion,
            embeddings,
            categorical_hidden,
            categorical_out,
            score_layers,
            numeric_merge,
            lexical,
            fusion,
            regression,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_sizes(&self) -> [usize; CATEGORICAL_INPUTS] {
        let mut out = [0; CATEGORICAL_INPUTS];
        for (o, e) in out.iter_mut().zip(&self.embeddings) {
            *o = e.vocab_size();
        }
        out
    }

    fn dense_layers(&self) -> Vec<(String, &DenseLayer)> {
        let mut out: Vec<(String, &DenseLayer)> = vec![
            ("trunk".into(), &self.trunk),
            ("task_bin".into(), &self.task_bin),
            ("task_emotion".into(), &self.task_emotion),
            ("head_bin".into(), &self.head_bin),
            ("head_emotion".into(), &self.head_emotion),
            ("categorical_hidden".into(), &self.categorical_hidden),
            ("categorical_out".into(), &self.categorical_out),
        ];
        for (i, l) in self.score_layers.iter().enumerate() {
            out.push((format!("score_{i}"), l));
        }
        out.push(("numeric_merge".into(), &self.numeric_merge));
        if let Some(lex) = &self.lexical {
            out.push(("lexical_nrc".into(), &lex.nrc));
            out.push(("lexical_empath".into(), &lex.empath));
            out.push(("lexical_merge".into(), &lex.merge));
        }
        out.push(("fusion".into(), &self.fusion));
        out.push(("regression".into(), &self.regression));
        out
    }

    /// Trainable tensors in canonical order: embedding tables, then each
    /// dense layer's weight and bias.
    pub fn tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out: Vec<(String, &Tensor2)> = DEMOGRAPHIC_NAMES
            .iter()
            .zip(&self.embeddings)
            .map(|(n, e)| (format!("embedding_{n}"), &e.table))
            .collect();
        for (name, layer) in self.dense_layers() {
            out.push((format!("{name}.weight"), &layer.weight));
            out.push((format!("{name}.bias"), &layer.bias));
        }
        out
    }

    /// Mutable view of [`MtlNetwork::tensors`], same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = self.embeddings.iter_mut().map(|e| &mut e.table).collect();
        let mut layers: Vec<&mut DenseLayer> = vec![
            &mut self.trunk,
            &mut self.task_bin,
            &mut self.task_emotion,
            &mut self.head_bin,
            &mut self.head_emotion,
            &mut self.categorical_hidden,
            &mut self.categorical_out,
        ];
        layers.extend(self.score_layers.iter_mut());
        layers.push(&mut self.numeric_merge);
        if let Some(lex) = &mut self.lexical {
            layers.push(&mut lex.nrc);
            layers.push(&mut lex.empath);
            layers.push(&mut lex.merge);
        }
        layers.push(&mut self.fusion);
        layers.push(&mut self.regression);
        for l in layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        crate::nn::param_count(self.tensors().into_iter().map(|(_, t)| t))
    }

    /// `l2 * sum(W^2)` over the regularized layers, in canonical order.
    pub fn l2_penalty(&self) -> f64 {
        self.dense_layers()
            .iter()
            .map(|(_, l)| l.l2_penalty())
            .sum()
    }

    /// Names of the dense layers that carry a nonzero L2 coefficient.
    pub fn regularized_layers(&self) -> Vec<String> {
        self.dense_layers()
            .into_iter()
            .filter(|(_, l)| l.l2 > 0.0)
            .map(|(n, _)| n)
            .collect()
    }

    /// Rounds every tensor to 32-bit precision (the checkpoint storage format).
    pub fn round_to_storage(&mut self) {
        for t in self.tensors_mut() {
            for v in t.data_mut() {
                *v = f64::from(*v as f32);
            }
        }
    }

    fn zeros_like(&self) -> MtlNetwork {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let c = &self.config;
        let n = batch.len();
        if batch.text.cols() != c.text_dim {
            return Err(Error::shape(
                "text input width",
                c.text_dim,
                batch.text.cols(),
            ));
        }
        if batch.scores.shape() != (n, c.num_scores) {
            return Err(Error::shape(
                "score inputs",
                format!("{n}x{}", c.num_scores),
                format!("{}x{}", batch.scores.rows(), batch.scores.cols()),
            ));
        }
        if batch.categorical.len() != n {
            return Err(Error::shape("categorical rows", n, batch.categorical.len()));
        }
        match (&batch.lexical, c.lexical_widths()) {
            (None, None) => {}
            (Some(lex), Some((a, b))) if lex.shape() == (n, a + b) => {}
            (Some(lex), Some((a, b))) => {
                return Err(Error::shape(
                    "lexical inputs",
                    format!("{n}x{}", a + b),
                    format!("{}x{}", lex.rows(), lex.cols()),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Missing("distress model needs lexical inputs".into()))
            }
            (Some(_), None) => {
                return Err(Error::shape(
                    "lexical inputs",
                    "none (empathy mode)",
                    "present",
                ))
            }
        }
        Ok(())
    }

    fn categorical_column(batch: &Batch, i: usize) -> Vec<usize> {
        batch.categorical.iter().map(|row| row[i]).collect()
    }

    /// Forward pass. Train mode draws a dropout mask from `rng`; eval mode
    /// never touches it.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ModelOutputs, ForwardCache)> {
        self.check_batch(batch)?;
        let c = &self.config;

        let (text, dropout_mask) = dropout_forward(c.dropout, &batch.text, mode, rng)?;
        let trunk = self.trunk.forward(&text)?;
        let task_bin = self.task_bin.forward(&trunk.out)?;
        let task_emotion = self.task_emotion.forward(&trunk.out)?;
        let head_bin = self.head_bin.forward(&task_bin.out)?;
        let head_emotion = self.head_emotion.forward(&task_emotion.out)?;

        let embedded = self
            .embeddings
            .iter()
            .enumerate()
            .map(|(i, e)| e.forward(&Self::categorical_column(batch, i)))
            .collect::<Result<Vec<_>>>()?;
        let flat = Tensor2::hconcat(&embedded.iter().collect::<Vec<_>>())?;
        let categorical_hidden = self.categorical_hidden.forward(&flat)?;
        let categorical_out = self.categorical_out.forward(&categorical_hidden.out)?;

        let slices = batch.scores.split_cols(&c.score_slices())?;
        let scores = self
            .score_layers
            .iter()
            .zip(&slices)
            .map(|(l, x)| l.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let score_concat = Tensor2::hconcat(&scores.iter().map(|s| &s.out).collect::<Vec<_>>())?;
        let numeric_merge = self.numeric_merge.forward(&score_concat)?;

        let lexical = match (&self.lexical, &batch.lexical) {
            (Some(branch), Some(x)) => {
                let (n_nrc, n_empath) = c.lexical_widths().unwrap_or_default();
                let parts = x.split_cols(&[n_nrc, n_empath])?;
                let nrc = branch.nrc.forward(&parts[0])?;
                let empath = branch.empath.forward(&parts[1])?;
                let merged = Tensor2::hconcat(&[&nrc.out, &empath.out])?;
                let merge = branch.merge.forward(&merged)?;
                Some([nrc, empath, merge])
            }
            _ => None,
        };

        let mut fused_parts = vec![
            &task_bin.out,
            &task_emotion.out,
            &categorical_out.out,
            &numeric_merge.out,
        ];
        if let Some([_, _, merge]) = &lexical {
            fused_parts.push(&merge.out);
        }
        let fused = Tensor2::hconcat(&fused_parts)?;
        let fusion = self.fusion.forward(&fused)?;
        let regression = self.regression.forward(&fusion.out)?;

        let outputs = ModelOutputs {
            score: regression.out.data().to_vec(),
            bin_prob: head_bin.out.data().to_vec(),
            emotion_probs: head_emotion.out.clone(),
        };
        let cache = ForwardCache {
            dropout_mask,
            trunk,
            task_bin,
            task_emotion,
            head_bin,
            head_emotion,
            categorical_hidden,
            categorical_out,
            scores,
            numeric_merge,
            lexical,
            fusion,
            regression,
        };
        Ok((outputs, cache))
    }

    /// Eval-mode forward without caches.
    pub fn predict_batch(&self, batch: &Batch) -> Result<ModelOutputs> {
        // eval mode never draws from the rng
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.forward(batch, Mode::Eval, &mut rng).map(|(o, _)| o)
    }

    /// Backpropagates head-output gradients through the whole network.
    /// Each regularized weight gradient includes its L2 term.
    pub fn backward(
        &self,
        batch: &Batch,
        cache: &ForwardCache,
        heads: &HeadGrads,
    ) -> Result<Gradients> {
        let c = &self.config;
        let mut g = self.zeros_like();

        let (d_fusion_out, gr) = self.regression.backward(&cache.regression, &heads.score)?;
        g.regression.weight = gr.weight;
        g.regression.bias = gr.bias;
        let (d_fused, gf) = self.fusion.backward(&cache.fusion, &d_fusion_out)?;
        g.fusion.weight = gf.weight;
        g.fusion.bias = gf.bias;

        let mut widths = vec![
            c.task_units,
            c.task_units,
            c.categorical_units[1],
            c.numeric_units,
        ];
        if self.lexical.is_some() {
            widths.push(c.lexical_units);
        }
        let mut d_parts = d_fused.split_cols(&widths)?.into_iter();
        let mut d_t1 = d_parts.next().expect("T1 slice");
        let mut d_t2 = d_parts.next().expect("T2 slice");
        let d_c = d_parts.next().expect("C slice");
        let d_n = d_parts.next().expect("N slice");
        let d_l = d_parts.next();

        // heads hanging off T1 / T2
        let (d_t1_head, gb) = self.head_bin.backward(&cache.head_bin, &heads.bin)?;
        g.head_bin.weight = gb.weight;
        g.head_bin.bias = gb.bias;
        d_t1.add_assign(&d_t1_head)?;
        let (d_t2_head, ge) = self
            .head_emotion
            .backward(&cache.head_emotion, &heads.emotion)?;
        g.head_emotion.weight = ge.weight;
        g.head_emotion.bias = ge.bias;
        d_t2.add_assign(&d_t2_head)?;

        // shared trunk receives from both task layers
        let (mut d_trunk, g1) = self.task_bin.backward(&cache.task_bin, &d_t1)?;
        g.task_bin.weight = g1.weight;
        g.task_bin.bias = g1.bias;
        let (d_trunk2, g2) = self.task_emotion.backward(&cache.task_emotion, &d_t2)?;
        g.task_emotion.weight = g2.weight;
        g.task_emotion.bias = g2.bias;
        d_trunk.add_assign(&d_trunk2)?;
        let (_, gt) = self.trunk.backward(&cache.trunk, &d_trunk)?;
        g.trunk.weight = gt.weight;
        g.trunk.bias = gt.bias;
        // the text input itself is not trainable, so the dropout mask needs no backward pass
        let _ = &cache.dropout_mask;

        let (d_cat_hidden, gco) = self
            .categorical_out
            .backward(&cache.categorical_out, &d_c)?;
        g.categorical_out.weight = gco.weight;
        g.categorical_out.bias = gco.bias;
        let (d_flat, gch) = self
            .categorical_hidden
            .backward(&cache.categorical_hidden, &d_cat_hidden)?;
        g.categorical_hidden.weight = gch.weight;
        g.categorical_hidden.bias = gch.bias;
        let d_emb = d_flat.split_cols(&[c.entity_dim; CATEGORICAL_INPUTS])?;
        for (i, (table, d)) in self.embeddings.iter().zip(&d_emb).enumerate() {
            g.embeddings[i].table = table.backward(&Self::categorical_column(batch, i), d)?;
        }

        let (d_score_concat, gm) = self.numeric_merge.backward(&cache.numeric_merge, &d_n)?;
        g.numeric_merge.weight = gm.weight;
        g.numeric_merge.bias = gm.bias;
        let d_scores = d_score_concat.split_cols(&vec![c.score_units; self.score_layers.len()])?;
        for (i, (layer, d)) in self.score_layers.iter().zip(&d_scores).enumerate() {
            let (_, gs) = layer.backward(&cache.scores[i], d)?;
            g.score_layers[i].weight = gs.weight;
            g.score_layers[i].bias = gs.bias;
        }

        if let (Some(branch), Some([c_nrc, c_empath, c_merge]), Some(d_l), Some(gl)) =
            (&self.lexical, &cache.lexical, d_l, g.lexical.as_mut())
        {
            let (d_merged, gmerge) = branch.merge.backward(c_merge, &d_l)?;
            gl.merge.weight = gmerge.weight;
            gl.merge.bias = gmerge.bias;
            let d = d_merged.split_cols(&[c.nrc_units, c.empath_units])?;
            let (_, gn) = branch.nrc.backward(c_nrc, &d[0])?;
            gl.nrc.weight = gn.weight;
            gl.nrc.bias = gn.bias;
            let (_, ge) = branch.empath.backward(c_empath, &d[1])?;
            gl.empath.weight = ge.weight;
            gl.empath.bias = ge.bias;
        }

        for (name, t) in g.tensors() {
            t.ensure_finite(&format!("gradient of {name}"))?;
        }
        Ok(Gradients(g))
    }

    fn loss_from_outputs(
        &self,
        outputs: &ModelOutputs,
        targets: &Targets,
    ) -> Result<MultiTaskLoss> {
        let reg = loss::mse(&outputs.score, &targets.score)?;
        let bin = loss::bce(&outputs.bin_prob, &targets.bin)?;
        let emo = loss::ce(&outputs.emotion_probs, &targets.emotion)?;
        let l = MultiTaskLoss::new(reg, bin, emo, self.l2_penalty());
        if !l.total.is_finite() {
            return Err(Error::Numeric("multi-task loss".into()));
        }
        Ok(l)
    }

    fn check_targets(batch: &Batch, targets: &Targets) -> Result<()> {
        let n = batch.len();
        if targets.score.len() != n || targets.bin.len() != n || targets.emotion.len() != n {
            return Err(Error::Missing(format!(
                "targets for {n} rows: got {} scores, {} bins, {} emotions",
                targets.score.len(),
                targets.bin.len(),
                targets.emotion.len()
            )));
        }
        Ok(())
    }

    /// Loss without gradients, eval mode.
    pub fn loss(&self, batch: &Batch, targets: &Targets) -> Result<MultiTaskLoss> {
        Self::check_targets(batch, targets)?;
        let outputs = self.predict_batch(batch)?;
        self.loss_from_outputs(&outputs, targets)
    }

    /// Summed multi-task loss and gradients for every trainable tensor.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        targets: &Targets,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(MultiTaskLoss, Gradients)> {
        Self::check_targets(batch, targets)?;
        let (outputs, cache) = self.forward(batch, mode, rng)?;
        let l = self.loss_from_outputs(&outputs, targets)?;
        let n = batch.len();
        let heads = HeadGrads {
            score: Tensor2::new(n, 1, loss::mse_grad(&outputs.score, &targets.score)?)?,
            bin: Tensor2::new(n, 1, loss::bce_grad(&outputs.bin_prob, &targets.bin)?)?,
            emotion: loss::ce_grad(&outputs.emotion_probs, &targets.emotion)?,
        };
        let grads = self.backward(batch, &cache, &heads)?;
        Ok((l, grads))
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(
        config: ModelConfig,
        vocab_sizes: [usize; 4],
    ) -> Result<Self> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut net = Self::build_with_sizes(&config, vocab_sizes, &mut rng)?;
        for t in net.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(net)
    }
}
