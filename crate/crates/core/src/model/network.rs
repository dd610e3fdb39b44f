//! Forward and backward passes of the sliding-window network.
//!
//! Every path (one per channel, plus the skip transform) is a stack of
//! conv → batch norm → ReLU blocks followed by per-kernel k-max pooling over
//! time. The pooled vectors are spliced into `Z`, which passes through
//! dropout (training only), the fusion layer, and the sigmoid read-out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchConfig, ModelError};
use crate::codeword::{time_major_input, CodewordClip, NormalizedClip};
use crate::nn::activation::{relu_backward_inplace, relu_inplace, sigmoid};
use crate::nn::batchnorm::{
    batch_norm_backward_infer, batch_norm_backward_train, batch_stats, BnBatchStats,
};
use crate::nn::conv::{conv_backward_into, conv_forward_into};
use crate::nn::loss::{bce, bce_logit_grad, l2_norm_grad};
use crate::nn::pool::kmax_positions_strided;
use crate::nn::{BatchNormParams, BnMode, ConvLayerParams, DenseParams, NnError, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub conv: ConvLayerParams,
    pub bn: BatchNormParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    Channel(usize),
    Skip(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeaturePath {
    pub kind: PathKind,
    pub blocks: Vec<ConvBlock>,
    pub pool_k: usize,
}

impl FeaturePath {
    pub fn out_features(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.conv.kernels()) * self.pool_k
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CswModel {
    config: ArchConfig,
    pub paths: Vec<FeaturePath>,
    pub fusion: DenseParams,
    pub detect: DenseParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Cover,
    Stego,
}

impl Verdict {
    pub fn is_stego(self) -> bool {
        self == Verdict::Stego
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Cover => "cover",
            Verdict::Stego => "stego",
        }
    }
}

/// Stego iff `probability >= threshold`.
pub fn decide(probability: f64, threshold: f64) -> Verdict {
    if probability >= threshold {
        Verdict::Stego
    } else {
        Verdict::Cover
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub probability: f64,
    pub verdict: Verdict,
}

/// Per-block intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    /// Pre-normalization conv output, `batch · len × kernels`.
    pub z: Vec<f64>,
    pub len: usize,
    pub stats: Option<BnBatchStats>,
}

#[derive(Clone, Debug)]
pub(crate) struct PathCache {
    pub layers: Vec<LayerCache>,
    /// Selected positions, indexed `(b · kernels + q) · k + r`.
    pub pooled: Vec<u32>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub(crate) batch: usize,
    pub(crate) positions: usize,
    pub(crate) input: Vec<f64>,
    pub(crate) paths: Vec<PathCache>,
    pub(crate) mode: BnMode,
    /// Spliced features before dropout, `batch × m`.
    pub spliced: Tensor2,
    pub(crate) dropout: Option<Vec<f64>>,
    /// Fusion-layer input after dropout.
    pub(crate) fusion_in: Tensor2,
    /// Fused features `O`, `batch × h`.
    pub fused: Tensor2,
    pub probabilities: Vec<f64>,
}

impl ForwardCache {
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn fused(&self) -> &Tensor2 {
        &self.fused
    }
}

/// Gradients laid out like the model's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub tensors: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &CswModel) -> Self {
        Self {
            tensors: model.param_lens().into_iter().map(|n| vec![0.0; n]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }
}

/// Inverted-dropout keep mask: entries are 0 or `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Result<Vec<f64>, ModelError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ModelError::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - rate);
    Ok((0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect())
}

/// `relu(bn(z))` with batch statistics (train) or running statistics.
fn activate(bn: &BatchNormParams, z: &[f64], stats: Option<&BnBatchStats>) -> Vec<f64> {
    let mut a = z.to_vec();
    match stats {
        Some(s) => bn.apply(&mut a, &s.mean, &s.inv_std(bn.eps)),
        None => bn.apply_infer(&mut a),
    }
    relu_inplace(&mut a);
    a
}

impl CswModel {
    /// Seeded initialization: fan-in uniform weights, zero biases, unit
    /// batch-norm scale.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut paths = Vec::new();
        for c in 0..config.n_channels() {
            let blocks = config
                .channel_layers(c)
                .into_iter()
                .map(|(in_f, w, u)| {
                    Ok(ConvBlock {
                        conv: ConvLayerParams::init(in_f, w, u, 1, &mut rng)?,
                        bn: BatchNormParams::new(u),
                    })
                })
                .collect::<Result<Vec<_>, NnError>>()?;
            paths.push(FeaturePath {
                kind: PathKind::Channel(c),
                blocks,
                pool_k: config.conv_k(),
            });
        }
        for s in 0..config.skip_paths() {
            paths.push(FeaturePath {
                kind: PathKind::Skip(s),
                blocks: vec![ConvBlock {
                    conv: ConvLayerParams::init(3, 1, config.skip_rows, 1, &mut rng)?,
                    bn: BatchNormParams::new(config.skip_rows),
                }],
                pool_k: config.skip_k(),
            });
        }
        let m = config.spliced_dim();
        let fusion = DenseParams::init(m, config.fused_dim, &mut rng)?;
        // A narrow read-out keeps initial logits small, so training starts
        // near p = 0.5 instead of saturating the sigmoid.
        let mut detect = DenseParams::zeros(config.fused_dim, 1)?;
        let bound = 1.0 / config.fused_dim as f64;
        for w in &mut detect.weights {
            *w = rng.gen_range(-bound..bound);
        }
        let model = Self {
            config,
            paths,
            fusion,
            detect,
        };
        debug_assert_eq!(model.paths.iter().map(|p| p.out_features()).sum::<usize>(), m);
        Ok(model)
    }

    pub(crate) fn from_parts(
        config: ArchConfig,
        paths: Vec<FeaturePath>,
        fusion: DenseParams,
        detect: DenseParams,
    ) -> Result<Self, ModelError> {
        let template = Self::build(config.clone(), 0)?;
        let model = Self {
            config,
            paths,
            fusion,
            detect,
        };
        let layout = |m: &CswModel| -> Vec<_> {
            m.paths
                .iter()
                .map(|p| {
                    let shapes: Vec<_> = p
                        .blocks
                        .iter()
                        .map(|b| (b.conv.in_features(), b.conv.width(), b.conv.kernels(), b.conv.stride()))
                        .collect();
                    (p.kind, p.pool_k, shapes)
                })
                .collect()
        };
        if layout(&template) != layout(&model)
            || template.param_lens() != model.param_lens()
            || template.fusion.inputs() != model.fusion.inputs()
            || template.detect.inputs() != model.detect.inputs()
        {
            return Err(ModelError::Format("parameter shapes do not match the architecture".into()));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    /// `m`, the spliced feature length.
    pub fn spliced_dim(&self) -> usize {
        self.fusion.inputs()
    }

    /// `h`, the fused feature length.
    pub fn fused_dim(&self) -> usize {
        self.fusion.outputs()
    }

    pub fn min_clip_len(&self) -> usize {
        self.config.min_clip_len()
    }

    /// Sets every weight, bias and batch-norm parameter to zero (running
    /// variance stays 1). Used for degenerate-model checks.
    pub fn zero_parameters(&mut self) {
        for t in self.params_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Output positions of each block of `path` for an input of `n` frames.
    pub fn path_lengths(&self, path: usize, n: usize) -> Vec<usize> {
        let mut len = n;
        self.paths[path]
            .blocks
            .iter()
            .map(|b| {
                len = b.conv.output_len(len).unwrap_or(0);
                len
            })
            .collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for p in &self.paths {
            let prefix = match p.kind {
                PathKind::Channel(c) => format!("channel{c}"),
                PathKind::Skip(s) => format!("skip{s}"),
            };
            for (l, _) in p.blocks.iter().enumerate() {
                for t in ["weight", "bias", "bn_gamma", "bn_beta"] {
                    names.push(format!("{prefix}.conv{}.{t}", l + 1));
                }
            }
        }
        names.extend(["fusion.weight", "fusion.bias", "detect.weight", "detect.bias"].map(String::from));
        names
    }

    pub fn param_lens(&self) -> Vec<usize> {
        let mut lens = Vec::new();
        for p in &self.paths {
            for b in &p.blocks {
                lens.extend([b.conv.weights.len(), b.conv.biases.len(), b.bn.gamma.len(), b.bn.beta.len()]);
            }
        }
        lens.extend([
            self.fusion.weights.len(),
            self.fusion.bias.len(),
            self.detect.weights.len(),
            self.detect.bias.len(),
        ]);
        lens
    }

    pub fn param_count(&self) -> usize {
        self.param_lens().iter().sum()
    }

    /// Trainable tensors in `param_names` order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for p in &mut self.paths {
            for b in &mut p.blocks {
                out.push(&mut b.conv.weights);
                out.push(&mut b.conv.biases);
                out.push(&mut b.bn.gamma);
                out.push(&mut b.bn.beta);
            }
        }
        out.push(&mut self.fusion.weights);
        out.push(&mut self.fusion.bias);
        out.push(&mut self.detect.weights);
        out.push(&mut self.detect.bias);
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for p in &self.paths {
            for b in &p.blocks {
                out.extend([&b.conv.weights[..], &b.conv.biases, &b.bn.gamma, &b.bn.beta]);
            }
        }
        out.extend([&self.fusion.weights[..], &self.fusion.bias, &self.detect.weights, &self.detect.bias]);
        out
    }

    /// Index of the first tensor belonging to block `layer` of `path`.
    fn tensor_base(&self, path: usize, layer: usize) -> usize {
        4 * (self.paths[..path].iter().map(|p| p.blocks.len()).sum::<usize>() + layer)
    }

    fn head_base(&self) -> usize {
        4 * self.paths.iter().map(|p| p.blocks.len()).sum::<usize>()
    }

    /// Time-major network input for a clip, using the configured scaling.
    pub fn input_for(&self, clip: &CodewordClip) -> Tensor2 {
        time_major_input(&clip.frames, clip.codebook_sizes, self.config.input_scaling)
    }

    fn check_inputs(&self, inputs: &[&Tensor2]) -> Result<(usize, usize), ModelError> {
        let first = inputs.first().ok_or(ModelError::EmptyBatch)?;
        let n = first.rows();
        for t in inputs {
            if t.cols() != 3 || t.rows() != n {
                return Err(ModelError::Nn(NnError::ShapeMismatch(format!(
                    "batch inputs must all be {n}x3, got {:?}",
                    t.shape()
                ))));
            }
        }
        let min = self.min_clip_len();
        if n < min {
            return Err(ModelError::ClipTooShort { frames: n, minimum: min });
        }
        Ok((inputs.len(), n))
    }

    /// Batched forward over time-major (`N × 3`) inputs of equal length.
    ///
    /// In `Train` mode batch norm uses batch statistics (running statistics
    /// are left untouched, see [`CswModel::absorb_batch_stats`]) and the
    /// optional dropout mask multiplies the spliced vector.
    pub fn forward_batch(
        &self,
        inputs: &[&Tensor2],
        mode: BnMode,
        dropout: Option<Vec<f64>>,
    ) -> Result<ForwardCache, ModelError> {
        let (batch, n) = self.check_inputs(inputs)?;
        let mut input = Vec::with_capacity(batch * n * 3);
        for t in inputs {
            input.extend_from_slice(t.as_slice());
        }
        let m = self.spliced_dim();
        if let Some(mask) = &dropout {
            if mode != BnMode::Train || mask.len() != batch * m {
                return Err(ModelError::Config("dropout mask must match a train-mode batch".into()));
            }
        }
        let mut spliced = Tensor2::zeros(batch, m);
        let mut paths = Vec::with_capacity(self.paths.len());
        let mut offset = 0;
        for (pi, path) in self.paths.iter().enumerate() {
            let cache = self.run_path(pi, &input, batch, n, mode, 0, None)?;
            write_pooled(path, &cache, batch, &mut spliced, offset);
            offset += path.out_features();
            paths.push(cache);
        }
        debug_assert_eq!(offset, m);
        let mut cache = ForwardCache {
            batch,
            positions: n,
            input,
            paths,
            mode,
            spliced,
            dropout,
            fusion_in: Tensor2::zeros(0, 0),
            fused: Tensor2::zeros(0, 0),
            probabilities: Vec::new(),
        };
        self.run_head(&mut cache)?;
        Ok(cache)
    }

    /// Runs blocks `from..` of path `pi`. `from > 0` requires `prefix`, the
    /// already-computed caches of the earlier blocks.
    #[allow(clippy::too_many_arguments)]
    fn run_path(
        &self,
        pi: usize,
        input: &[f64],
        batch: usize,
        n: usize,
        mode: BnMode,
        from: usize,
        prefix: Option<&[LayerCache]>,
    ) -> Result<PathCache, ModelError> {
        let path = &self.paths[pi];
        let mut layers: Vec<LayerCache> = prefix.map(|p| p[..from].to_vec()).unwrap_or_default();
        let (mut cur, mut pos) = if from == 0 {
            (input.to_vec(), n)
        } else {
            let prev = &layers[from - 1];
            (
                activate(&path.blocks[from - 1].bn, &prev.z, prev.stats.as_ref()),
                prev.len,
            )
        };
        for block in &path.blocks[from..] {
            let conv = &block.conv;
            let u = conv.kernels();
            let in_f = conv.in_features();
            let len = conv.output_len(pos).ok_or(ModelError::ClipTooShort {
                frames: n,
                minimum: self.min_clip_len(),
            })?;
            let mut z = vec![0.0; batch * len * u];
            for b in 0..batch {
                conv_forward_into(
                    &cur[b * pos * in_f..(b + 1) * pos * in_f],
                    len,
                    conv,
                    &mut z[b * len * u..(b + 1) * len * u],
                );
            }
            let stats = match mode {
                BnMode::Train => Some(batch_stats(&z, u)),
                BnMode::Infer => None,
            };
            cur = activate(&block.bn, &z, stats.as_ref());
            pos = len;
            layers.push(LayerCache { z, len, stats });
        }
        let last = path.blocks.last().expect("paths are non-empty");
        let u = last.conv.kernels();
        let k = path.pool_k;
        let mut pooled = Vec::with_capacity(batch * u * k);
        for b in 0..batch {
            let act = &cur[b * pos * u..(b + 1) * pos * u];
            for q in 0..u {
                let sel = kmax_positions_strided(&act[q..], pos, u, k)?;
                pooled.extend(sel.into_iter().map(|p| p as u32));
            }
        }
        Ok(PathCache { layers, pooled })
    }

    fn run_head(&self, cache: &mut ForwardCache) -> Result<(), ModelError> {
        let mut fusion_in = cache.spliced.clone();
        if let Some(mask) = &cache.dropout {
            for (v, s) in fusion_in.as_mut_slice().iter_mut().zip(mask) {
                *v *= s;
            }
        }
        let mut fused = self.fusion.forward_batch(&fusion_in)?;
        if self.config.fusion_relu {
            relu_inplace(fused.as_mut_slice());
        }
        let logits = self.detect.forward_batch(&fused)?;
        cache.probabilities = logits.as_slice().iter().map(|&x| sigmoid(x)).collect();
        cache.fusion_in = fusion_in;
        cache.fused = fused;
        Ok(())
    }

    /// Single-clip forward on a `3 × N` normalized clip: `(y, O)`.
    pub fn forward(&self, clip: &NormalizedClip, mode: BnMode) -> Result<(f64, Vec<f64>), ModelError> {
        let x = clip.time_major();
        let cache = self.forward_batch(&[&x], mode, None)?;
        Ok((cache.probabilities[0], cache.fused.row(0).to_vec()))
    }

    /// Infer-mode probability for a time-major input.
    pub fn probability(&self, input: &Tensor2) -> Result<f64, ModelError> {
        Ok(self.forward_batch(&[input], BnMode::Infer, None)?.probabilities[0])
    }

    pub fn predict(&self, clip: &CodewordClip, threshold: f64) -> Result<Prediction, ModelError> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(ModelError::Config(format!("threshold {threshold} outside (0, 1)")));
        }
        let p = self.probability(&self.input_for(clip))?;
        Ok(Prediction {
            probability: p,
            verdict: decide(p, threshold),
        })
    }

    /// Folds the batch statistics of a train-mode forward into each batch
    /// norm's running estimates.
    pub fn absorb_batch_stats(&mut self, cache: &ForwardCache) {
        for (path, pc) in self.paths.iter_mut().zip(&cache.paths) {
            for (block, lc) in path.blocks.iter_mut().zip(&pc.layers) {
                if let Some(s) = &lc.stats {
                    block.bn.absorb(s);
                }
            }
        }
    }

    /// Loss `bce + λ(‖W_fusion‖ + ‖V‖)` of a forward result.
    pub fn loss(&self, cache: &ForwardCache, labels: &[f64], lambda: f64) -> Result<f64, ModelError> {
        Ok(bce(&cache.probabilities, labels)?
            + lambda * (norm(&self.fusion.weights) + norm(&self.detect.weights)))
    }

    /// Reverse-mode gradients of [`CswModel::loss`] for every parameter.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        labels: &[f64],
        lambda: f64,
    ) -> Result<(f64, ModelGrads), ModelError> {
        let loss = self.loss(cache, labels, lambda)?;
        let mut grads = ModelGrads::zeros_like(self);
        let batch = cache.batch;
        let h = self.fused_dim();
        let m = self.spliced_dim();
        let hb = self.head_base();

        let dlogit = Tensor2::from_vec(batch, 1, bce_logit_grad(&cache.probabilities, labels))?;
        let (gw, rest) = grads.tensors[hb + 2..].split_at_mut(1);
        let mut d_fused = self.detect.backward_batch(&cache.fused, &dlogit, &mut gw[0], &mut rest[0])?;
        if self.config.fusion_relu {
            relu_backward_inplace(cache.fused.as_slice(), d_fused.as_mut_slice());
        }
        let (gw, rest) = grads.tensors[hb..].split_at_mut(1);
        let mut d_spliced = self.fusion.backward_batch(&cache.fusion_in, &d_fused, &mut gw[0], &mut rest[0])?;
        l2_norm_grad(&self.fusion.weights, lambda, &mut grads.tensors[hb]);
        l2_norm_grad(&self.detect.weights, lambda, &mut grads.tensors[hb + 2]);
        if let Some(mask) = &cache.dropout {
            for (g, s) in d_spliced.as_mut_slice().iter_mut().zip(mask) {
                *g *= s;
            }
        }
        let mut offset = 0;
        for (pi, path) in self.paths.iter().enumerate() {
            self.backward_path(pi, cache, &d_spliced, offset, m, &mut grads)?;
            offset += path.out_features();
        }
        debug_assert_eq!(h, cache.fused.cols());
        if !grads.is_finite() {
            let (tensor, index) = grads
                .tensors
                .iter()
                .enumerate()
                .find_map(|(t, v)| v.iter().position(|x| !x.is_finite()).map(|i| (t, i)))
                .unwrap_or((0, 0));
            return Err(NnError::NonFiniteGradient { tensor, index }.into());
        }
        Ok((loss, grads))
    }

    fn backward_path(
        &self,
        pi: usize,
        cache: &ForwardCache,
        d_spliced: &Tensor2,
        offset: usize,
        m: usize,
        grads: &mut ModelGrads,
    ) -> Result<(), ModelError> {
        let path = &self.paths[pi];
        let pc = &cache.paths[pi];
        let batch = cache.batch;
        let nl = path.blocks.len();
        let k = path.pool_k;
        let u_last = path.blocks[nl - 1].conv.kernels();
        let len_last = pc.layers[nl - 1].len;

        // Scatter pooled gradients back to their source positions.
        let mut grad = vec![0.0; batch * len_last * u_last];
        let ds = d_spliced.as_slice();
        for b in 0..batch {
            for q in 0..u_last {
                for r in 0..k {
                    let pos = pc.pooled[(b * u_last + q) * k + r] as usize;
                    grad[(b * len_last + pos) * u_last + q] += ds[b * m + offset + q * k + r];
                }
            }
        }

        let mut act = activate(
            &path.blocks[nl - 1].bn,
            &pc.layers[nl - 1].z,
            pc.layers[nl - 1].stats.as_ref(),
        );
        let mut scratch = Vec::new();
        for l in (0..nl).rev() {
            let block = &path.blocks[l];
            let lc = &pc.layers[l];
            let u = block.conv.kernels();
            relu_backward_inplace(&act, &mut grad);
            let base = self.tensor_base(pi, l);
            {
                let (left, right) = grads.tensors[base + 2..].split_at_mut(1);
                match (&lc.stats, cache.mode) {
                    (Some(s), BnMode::Train) => {
                        batch_norm_backward_train(&block.bn, &lc.z, s, &mut grad, &mut left[0], &mut right[0])
                    }
                    _ => batch_norm_backward_infer(&block.bn, &lc.z, &mut grad, &mut left[0], &mut right[0]),
                }
            }
            let (in_data, pos_in) = if l == 0 {
                (None, cache.positions)
            } else {
                let prev = &pc.layers[l - 1];
                (
                    Some(activate(&path.blocks[l - 1].bn, &prev.z, prev.stats.as_ref())),
                    prev.len,
                )
            };
            let in_f = block.conv.in_features();
            let src: &[f64] = in_data.as_deref().unwrap_or(&cache.input);
            let mut grad_in = if l > 0 { vec![0.0; batch * pos_in * in_f] } else { Vec::new() };
            let (gw, gb) = grads.tensors[base..base + 2].split_at_mut(1);
            for b in 0..batch {
                let gi = if l > 0 {
                    Some((&mut grad_in[b * pos_in * in_f..(b + 1) * pos_in * in_f], &mut scratch))
                } else {
                    None
                };
                conv_backward_into(
                    &src[b * pos_in * in_f..(b + 1) * pos_in * in_f],
                    lc.len,
                    &block.conv,
                    &grad[b * lc.len * u..(b + 1) * lc.len * u],
                    &mut gw[0],
                    &mut gb[0],
                    gi,
                );
            }
            if let Some(a) = in_data {
                act = a;
                grad = grad_in;
            }
        }
        Ok(())
    }

    /// Loss after recomputing only what a change to block `layer` of path
    /// `pi` can affect. With `kernel = Some(q)` on the last block, only that
    /// output column is recomputed.
    pub(crate) fn partial_loss(
        &self,
        cache: &ForwardCache,
        pi: usize,
        layer: usize,
        kernel: Option<usize>,
        labels: &[f64],
        lambda: f64,
    ) -> Result<f64, ModelError> {
        let mut spliced = cache.spliced.clone();
        let offset: usize = self.paths[..pi].iter().map(|p| p.out_features()).sum();
        let pc = &cache.paths[pi];
        let path = &self.paths[pi];
        let last = path.blocks.len() - 1;
        match kernel {
            Some(q) if layer == last => {
                self.recompute_column(cache, pi, q, &mut spliced, offset)?;
            }
            _ => {
                let new = self.run_path(
                    pi,
                    &cache.input,
                    cache.batch,
                    cache.positions,
                    cache.mode,
                    layer,
                    Some(&pc.layers),
                )?;
                write_pooled(path, &new, cache.batch, &mut spliced, offset);
            }
        }
        self.head_loss(cache, spliced, labels, lambda)
    }

    /// Loss with the cached spliced vector replaced.
    pub(crate) fn head_loss(
        &self,
        cache: &ForwardCache,
        spliced: Tensor2,
        labels: &[f64],
        lambda: f64,
    ) -> Result<f64, ModelError> {
        let mut c = ForwardCache {
            batch: cache.batch,
            positions: cache.positions,
            input: Vec::new(),
            paths: Vec::new(),
            mode: cache.mode,
            spliced,
            dropout: cache.dropout.clone(),
            fusion_in: Tensor2::zeros(0, 0),
            fused: Tensor2::zeros(0, 0),
            probabilities: Vec::new(),
        };
        self.run_head(&mut c)?;
        self.loss(&c, labels, lambda)
    }

    fn recompute_column(
        &self,
        cache: &ForwardCache,
        pi: usize,
        q: usize,
        spliced: &mut Tensor2,
        offset: usize,
    ) -> Result<(), ModelError> {
        let path = &self.paths[pi];
        let pc = &cache.paths[pi];
        let last = path.blocks.len() - 1;
        let block = &path.blocks[last];
        let conv = &block.conv;
        let u = conv.kernels();
        let in_f = conv.in_features();
        let batch = cache.batch;
        let (src, pos_in) = if last == 0 {
            (cache.input.clone(), cache.positions)
        } else {
            let prev = &pc.layers[last - 1];
            (activate(&path.blocks[last - 1].bn, &prev.z, prev.stats.as_ref()), prev.len)
        };
        let len = pc.layers[last].len;
        let fan_in = conv.fan_in();
        let mut col = vec![0.0; batch * len];
        for b in 0..batch {
            let x = &src[b * pos_in * in_f..(b + 1) * pos_in * in_f];
            for p in 0..len {
                let patch = &x[p * in_f..p * in_f + fan_in];
                let mut acc = conv.biases[q];
                for (i, v) in patch.iter().enumerate() {
                    acc += v * conv.weights[i * u + q];
                }
                col[b * len + p] = acc;
            }
        }
        let (mean, inv_std) = match cache.mode {
            BnMode::Train => {
                let s = batch_stats(&col, 1);
                (s.mean[0], s.inv_std(block.bn.eps)[0])
            }
            BnMode::Infer => (
                block.bn.running_mean[q],
                1.0 / (block.bn.running_var[q] + block.bn.eps).sqrt(),
            ),
        };
        let k = path.pool_k;
        let m = spliced.cols();
        for b in 0..batch {
            let a: Vec<f64> = col[b * len..(b + 1) * len]
                .iter()
                .map(|&z| (block.bn.gamma[q] * (z - mean) * inv_std + block.bn.beta[q]).max(0.0))
                .collect();
            let sel = kmax_positions_strided(&a, len, 1, k)?;
            for (r, p) in sel.into_iter().enumerate() {
                spliced.as_mut_slice()[b * m + offset + q * k + r] = a[p];
            }
        }
        Ok(())
    }
}

fn norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Copies the pooled activations of a path into `spliced` at `offset`.
fn write_pooled(path: &FeaturePath, pc: &PathCache, batch: usize, spliced: &mut Tensor2, offset: usize) {
    let nl = path.blocks.len();
    let lc = &pc.layers[nl - 1];
    let block = &path.blocks[nl - 1];
    let u = block.conv.kernels();
    let k = path.pool_k;
    let m = spliced.cols();
    let out = spliced.as_mut_slice();
    let inv_std = lc.stats.as_ref().map(|s| s.inv_std(block.bn.eps));
    for b in 0..batch {
        for q in 0..u {
            let (mean, istd) = match (&lc.stats, &inv_std) {
                (Some(s), Some(i)) => (s.mean[q], i[q]),
                _ => (
                    block.bn.running_mean[q],
                    1.0 / (block.bn.running_var[q] + block.bn.eps).sqrt(),
                ),
            };
            for r in 0..k {
                let pos = pc.pooled[(b * u + q) * k + r] as usize;
                let z = lc.z[(b * lc.len + pos) * u + q];
                let a = (block.bn.gamma[q] * (z - mean) * istd + block.bn.beta[q]).max(0.0);
                out[b * m + offset + q * k + r] = a;
            }
        }
    }
}
