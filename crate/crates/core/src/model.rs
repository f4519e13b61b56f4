//! Convolutional + Transformer EMG encoder with four linear heads and the
//! weighted multi-task loss.
//!
//! ```text
//! emg [B, T, C]
//!  └ 3 × ResNet block: conv(k3, s2) → BN → ReLU → conv(k3, s1) → BN  (+ 1×1 s2 shortcut) → ReLU
//!  └ + sinusoidal positions
//!  └ L × pre-norm layer: x + MHA(LN(x)), x + FF(LN(x))
//!  └ LN → heads: EMA 12 | pitch 1 | loudness 1 | phoneme logits V
//! ```
//!
//! All batched ops honour per-item lengths, so padding never changes the
//! value or gradient at a real frame.

use std::path::Path;

use emg2artic_nn::{
    conv_output_len, derive_seed, kaiming_uniform, load_params, positional_encoding, save_params, seeded_rng,
    BatchStats, BnMode, Graph, ParamId, ParamKind, ParamStore, Tensor, Var,
};
use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, Utterance};
use crate::error::{invalid, Result};
use crate::feature_targets::{align_lengths, DEFAULT_PHONEME_VOCAB, EMA_DIMS, LOUDNESS_DIM, PITCH_DIM, TARGET_DIMS};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LN_EPS: f64 = 1e-5;
pub const FF_MULT: usize = 4;
pub const MODEL_CONFIG_FILE: &str = "model_config.json";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub n_emg_channels: usize,
    pub hidden_dim: usize,
    pub n_resnet_blocks: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub n_transformer_layers: usize,
    pub n_heads: usize,
    pub phoneme_vocab: usize,
}

impl Default for EncoderConfig {
    /// Desk scale.
    fn default() -> Self {
        EncoderConfig {
            n_emg_channels: 8,
            hidden_dim: 64,
            n_resnet_blocks: 3,
            conv_kernel: 3,
            conv_stride: 2,
            n_transformer_layers: 2,
            n_heads: 4,
            phoneme_vocab: DEFAULT_PHONEME_VOCAB,
        }
    }
}

impl EncoderConfig {
    pub fn full_scale() -> Self {
        EncoderConfig {
            hidden_dim: 768,
            n_transformer_layers: 6,
            n_heads: 8,
            ..EncoderConfig::default()
        }
    }

    /// Small encoder for sweeps and quick checks.
    pub fn tiny() -> Self {
        EncoderConfig {
            hidden_dim: 32,
            n_transformer_layers: 1,
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_emg_channels == 0 || self.hidden_dim == 0 || self.phoneme_vocab == 0 {
            return invalid("encoder config", "channel count, hidden width and vocabulary must be positive");
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return invalid(
                "encoder config",
                format!("hidden_dim {} not divisible by n_heads {}", self.hidden_dim, self.n_heads),
            );
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return invalid("encoder config", "hidden_dim must be even for positional encoding");
        }
        if self.conv_kernel.is_multiple_of(2) || self.conv_stride == 0 {
            return invalid("encoder config", "conv_kernel must be odd and conv_stride positive");
        }
        Ok(())
    }

    pub fn downsample_factor(&self) -> usize {
        self.conv_stride.pow(self.n_resnet_blocks as u32)
    }

    fn padding(&self) -> usize {
        self.conv_kernel / 2
    }

    /// Encoder frames for `t` input samples, or `None` if too short.
    pub fn frames_for(&self, t: usize) -> Option<usize> {
        if t < self.downsample_factor() {
            return None;
        }
        (0..self.n_resnet_blocks).try_fold(t, |len, _| conv_output_len(len, self.conv_kernel, self.conv_stride, self.padding()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha_pitch: f64,
    pub alpha_loud: f64,
    pub alpha_phon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha_pitch: 0.5,
            alpha_loud: 1.0,
            alpha_phon: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.alpha_pitch, self.alpha_loud, self.alpha_phon]
            .iter()
            .any(|a| !(*a >= 0.0) || !a.is_finite())
        {
            return invalid("loss weights", "weights must be finite and non-negative");
        }
        Ok(())
    }

    /// `L_ema + α_pitch L_pitch + α_loud L_loud + α_phon L_phon`.
    pub fn combine(&self, ema: f64, pitch: f64, loud: f64, phon: f64) -> f64 {
        0.0 + ema + self.alpha_pitch * pitch + self.alpha_loud * loud + self.alpha_phon * phon
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ema: f64,
    pub pitch: f64,
    pub loudness: f64,
    pub phoneme: f64,
}

/// Contents of `model_config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfigFile {
    pub config_version: u32,
    pub encoder: EncoderConfig,
    pub loss_weights: LossWeights,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

/// Per-frame outputs for one utterance, frame-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub n_frames: usize,
    pub ema: Vec<f64>,
    pub pitch: Vec<f64>,
    pub loudness: Vec<f64>,
    pub phoneme_logits: Vec<f64>,
    pub vocab: usize,
}

impl ModelOutput {
    /// Prediction for target dimension `dim` at `frame`.
    pub fn value(&self, frame: usize, dim: usize) -> f64 {
        match dim {
            PITCH_DIM => self.pitch[frame],
            LOUDNESS_DIM => self.loudness[frame],
            d => self.ema[frame * EMA_DIMS + d],
        }
    }
}

/// Graph handles produced by one forward pass.
pub struct Forward {
    pub ema: Var,
    pub pitch: Var,
    pub loudness: Var,
    pub phonemes: Var,
    /// Encoder frames per batch item.
    pub frame_lengths: Vec<usize>,
    /// Batch statistics per batch-norm layer, in layer order (train mode).
    pub bn_stats: Vec<BatchStats>,
}

/// A padded mini-batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, T, C]`, zero beyond each item's length.
    pub emg: Tensor,
    pub emg_lengths: Vec<usize>,
    /// `[B, T_f, TARGET_DIMS]` over the padded encoder frame count.
    pub targets: Tensor,
    /// `B * T_f` class ids, zero at unused frames.
    pub phonemes: Vec<usize>,
    /// Frames per item that enter the loss.
    pub loss_lengths: Vec<usize>,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.emg_lengths.len()
    }

    /// Pads utterances to a common length. Each item's loss covers the
    /// aligned overlap of its encoder frames and its targets.
    pub fn collate(utts: &[&Utterance], cfg: &EncoderConfig) -> Result<Batch> {
        let Some(first) = utts.first() else {
            return invalid("collate", "empty batch");
        };
        let c = first.n_channels;
        if utts.iter().any(|u| u.n_channels != c) {
            return invalid("collate", "utterances disagree on channel count");
        }
        let t_max = utts.iter().map(|u| u.emg_len).max().unwrap_or(0);
        let tf_max = frames_or_err(cfg, t_max)?;
        let b = utts.len();
        let mut emg = Tensor::zeros(&[b, t_max, c]);
        let mut targets = Tensor::zeros(&[b, tf_max, TARGET_DIMS]);
        let mut phonemes = vec![0; b * tf_max];
        let mut loss_lengths = Vec::with_capacity(b);
        for (i, u) in utts.iter().enumerate() {
            emg.data_mut()[i * t_max * c..i * t_max * c + u.emg.len()].copy_from_slice(&u.emg);
            let usable = align_lengths(frames_or_err(cfg, u.emg_len)?, u.n_frames)?;
            let base = i * tf_max * TARGET_DIMS;
            targets.data_mut()[base..base + usable * TARGET_DIMS].copy_from_slice(&u.targets[..usable * TARGET_DIMS]);
            phonemes[i * tf_max..i * tf_max + usable].copy_from_slice(&u.phonemes[..usable]);
            loss_lengths.push(usable);
        }
        Ok(Batch {
            emg,
            emg_lengths: utts.iter().map(|u| u.emg_len).collect(),
            targets,
            phonemes,
            loss_lengths,
            ids: utts.iter().map(|u| u.id.clone()).collect(),
        })
    }

    /// Target columns `lo..hi` as a `[B, T_f, hi - lo]` tensor.
    fn target_slice(&self, lo: usize, hi: usize) -> Tensor {
        let shape = self.targets.shape();
        let (b, t) = (shape[0], shape[1]);
        let data = self
            .targets
            .data()
            .chunks_exact(TARGET_DIMS)
            .flat_map(|row| row[lo..hi].iter().copied())
            .collect();
        Tensor::new(&[b, t, hi - lo], data).expect("slice shape")
    }
}

fn frames_or_err(cfg: &EncoderConfig, t: usize) -> Result<usize> {
    cfg.frames_for(t).ok_or_else(|| crate::error::CoreError::InvalidArgument {
        op: "encode",
        detail: format!("{t} samples is shorter than the downsampling factor {}", cfg.downsample_factor()),
    })
}

struct BlockIds {
    conv1_w: ParamId,
    bn1: BnIds,
    conv2_w: ParamId,
    bn2: BnIds,
    short_w: ParamId,
    short_b: ParamId,
}

struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

struct LayerIds {
    ln1: (ParamId, ParamId),
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

struct Layout {
    blocks: Vec<BlockIds>,
    layers: Vec<LayerIds>,
    final_ln: (ParamId, ParamId),
    heads: [(ParamId, ParamId); 4],
}

/// Encoder weights plus batch-norm running statistics.
pub struct Model {
    pub cfg: EncoderConfig,
    pub params: ParamStore,
    layout: Layout,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::from_params(self.cfg.clone(), self.params.clone()).expect("layout of a valid model")
    }
}

fn build_store(cfg: &EncoderConfig, seed: u64) -> Result<ParamStore> {
    let mut rng = seeded_rng(derive_seed(seed, "init"));
    let mut store = ParamStore::new();
    let h = cfg.hidden_dim;
    let k = cfg.conv_kernel;
    let p = ParamKind::Param;
    let add_bn = |store: &mut ParamStore, name: &str| -> Result<()> {
        store.insert(&format!("{name}.gamma"), p, Tensor::full(&[h], 1.0))?;
        store.insert(&format!("{name}.beta"), p, Tensor::zeros(&[h]))?;
        store.insert(&format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[h]))?;
        store.insert(&format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&[h], 1.0))?;
        Ok(())
    };
    for i in 0..cfg.n_resnet_blocks {
        let cin = if i == 0 { cfg.n_emg_channels } else { h };
        let pre = format!("block{i}");
        store.insert(&format!("{pre}.conv1.w"), p, kaiming_uniform(&[k, cin, h], k * cin, &mut rng))?;
        add_bn(&mut store, &format!("{pre}.bn1"))?;
        store.insert(&format!("{pre}.conv2.w"), p, kaiming_uniform(&[k, h, h], k * h, &mut rng))?;
        add_bn(&mut store, &format!("{pre}.bn2"))?;
        store.insert(&format!("{pre}.shortcut.w"), p, kaiming_uniform(&[1, cin, h], cin, &mut rng))?;
        store.insert(&format!("{pre}.shortcut.b"), p, Tensor::zeros(&[h]))?;
    }
    let ff = FF_MULT * h;
    for l in 0..cfg.n_transformer_layers {
        let pre = format!("layer{l}");
        store.insert(&format!("{pre}.ln1.gamma"), p, Tensor::full(&[h], 1.0))?;
        store.insert(&format!("{pre}.ln1.beta"), p, Tensor::zeros(&[h]))?;
        for w in ["wq", "wk", "wv", "wo"] {
            store.insert(&format!("{pre}.attn.{w}"), p, kaiming_uniform(&[h, h], h, &mut rng))?;
        }
        store.insert(&format!("{pre}.ln2.gamma"), p, Tensor::full(&[h], 1.0))?;
        store.insert(&format!("{pre}.ln2.beta"), p, Tensor::zeros(&[h]))?;
        store.insert(&format!("{pre}.ff1.w"), p, kaiming_uniform(&[h, ff], h, &mut rng))?;
        store.insert(&format!("{pre}.ff1.b"), p, Tensor::zeros(&[ff]))?;
        store.insert(&format!("{pre}.ff2.w"), p, kaiming_uniform(&[ff, h], ff, &mut rng))?;
        store.insert(&format!("{pre}.ff2.b"), p, Tensor::zeros(&[h]))?;
    }
    store.insert("final_ln.gamma", p, Tensor::full(&[h], 1.0))?;
    store.insert("final_ln.beta", p, Tensor::zeros(&[h]))?;
    for (name, width) in head_widths(cfg) {
        store.insert(&format!("head.{name}.w"), p, kaiming_uniform(&[h, width], h, &mut rng))?;
        store.insert(&format!("head.{name}.b"), p, Tensor::zeros(&[width]))?;
    }
    Ok(store)
}

fn head_widths(cfg: &EncoderConfig) -> [(&'static str, usize); 4] {
    [("ema", EMA_DIMS), ("pitch", 1), ("loudness", 1), ("phoneme", cfg.phoneme_vocab)]
}

fn layout(cfg: &EncoderConfig, store: &ParamStore) -> Result<Layout> {
    let id = |name: String| {
        store.id(&name).ok_or_else(|| crate::error::CoreError::InvalidArgument {
            op: "model",
            detail: format!("missing parameter {name}"),
        })
    };
    let bn = |name: &str| -> Result<BnIds> {
        Ok(BnIds {
            gamma: id(format!("{name}.gamma"))?,
            beta: id(format!("{name}.beta"))?,
            mean: id(format!("{name}.running_mean"))?,
            var: id(format!("{name}.running_var"))?,
        })
    };
    let blocks = (0..cfg.n_resnet_blocks)
        .map(|i| {
            let pre = format!("block{i}");
            Ok(BlockIds {
                conv1_w: id(format!("{pre}.conv1.w"))?,
                bn1: bn(&format!("{pre}.bn1"))?,
                conv2_w: id(format!("{pre}.conv2.w"))?,
                bn2: bn(&format!("{pre}.bn2"))?,
                short_w: id(format!("{pre}.shortcut.w"))?,
                short_b: id(format!("{pre}.shortcut.b"))?,
            })
        })
        .collect::<Result<_>>()?;
    let layers = (0..cfg.n_transformer_layers)
        .map(|l| {
            let pre = format!("layer{l}");
            Ok(LayerIds {
                ln1: (id(format!("{pre}.ln1.gamma"))?, id(format!("{pre}.ln1.beta"))?),
                wq: id(format!("{pre}.attn.wq"))?,
                wk: id(format!("{pre}.attn.wk"))?,
                wv: id(format!("{pre}.attn.wv"))?,
                wo: id(format!("{pre}.attn.wo"))?,
                ln2: (id(format!("{pre}.ln2.gamma"))?, id(format!("{pre}.ln2.beta"))?),
                ff1: (id(format!("{pre}.ff1.w"))?, id(format!("{pre}.ff1.b"))?),
                ff2: (id(format!("{pre}.ff2.w"))?, id(format!("{pre}.ff2.b"))?),
            })
        })
        .collect::<Result<_>>()?;
    let head = |name: &str| -> Result<(ParamId, ParamId)> { Ok((id(format!("head.{name}.w"))?, id(format!("head.{name}.b"))?)) };
    Ok(Layout {
        blocks,
        layers,
        final_ln: (id("final_ln.gamma".into())?, id("final_ln.beta".into())?),
        heads: [head("ema")?, head("pitch")?, head("loudness")?, head("phoneme")?],
    })
}

impl Model {
    /// Fresh Kaiming-uniform initialization derived from `seed`.
    pub fn init(cfg: &EncoderConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let store = build_store(cfg, seed)?;
        Model::from_params(cfg.clone(), store)
    }

    /// Wraps an existing store, checking it has exactly the expected layout.
    pub fn from_params(cfg: EncoderConfig, params: ParamStore) -> Result<Model> {
        cfg.validate()?;
        build_store(&cfg, 0)?.check_layout(&params)?;
        let layout = layout(&cfg, &params)?;
        Ok(Model { cfg, params, layout })
    }

    /// Trainable parameters in canonical order.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.params.trainable().collect()
    }

    /// Inserts every trainable parameter into `g`, as gradient-tracking
    /// leaves or as constants. Indexed by [`ParamId`].
    pub fn param_vars(&self, g: &mut Graph, track_grad: bool) -> Vec<Option<Var>> {
        let mut vars = vec![None; self.params.len()];
        for id in self.params.trainable() {
            let t = self.params.get(id).clone();
            vars[id.index()] = Some(if track_grad { g.leaf(t) } else { g.constant(t) });
        }
        vars
    }

    /// Encoder plus heads over a padded batch.
    pub fn forward(&self, g: &mut Graph, vars: &[Option<Var>], emg: &Tensor, lengths: &[usize], mode: Mode) -> Result<Forward> {
        let cfg = &self.cfg;
        let (b, t, c) = emg.btc("encode")?;
        if c != cfg.n_emg_channels {
            return invalid("encode", format!("expected {} channels, got {c}", cfg.n_emg_channels));
        }
        if lengths.len() != b || lengths.iter().any(|&l| l == 0 || l > t) {
            return invalid("encode", "lengths must be in 1..=T, one per item");
        }
        frames_or_err(cfg, lengths.iter().copied().min().unwrap_or(0))?;
        let v = |id: ParamId| vars[id.index()].expect("trainable parameter var");
        let pad = cfg.padding();
        let mut bn_stats = Vec::new();

        let mut x = g.constant(emg.clone());
        let mut lens = lengths.to_vec();
        for blk in &self.layout.blocks {
            let out_lens: Vec<usize> = lens
                .iter()
                .map(|&l| conv_output_len(l, cfg.conv_kernel, cfg.conv_stride, pad).expect("checked length"))
                .collect();
            let h = g.conv1d(x, v(blk.conv1_w), None, cfg.conv_stride, pad)?;
            let h = self.batch_norm(g, vars, h, &blk.bn1, mode, &out_lens, &mut bn_stats)?;
            let h = g.relu(h);
            let h = g.mask_frames(h, &out_lens)?;
            let h = g.conv1d(h, v(blk.conv2_w), None, 1, pad)?;
            let h = self.batch_norm(g, vars, h, &blk.bn2, mode, &out_lens, &mut bn_stats)?;
            let s = g.conv1d(x, v(blk.short_w), Some(v(blk.short_b)), cfg.conv_stride, 0)?;
            let y = g.add(h, s)?;
            let y = g.relu(y);
            x = g.mask_frames(y, &out_lens)?;
            lens = out_lens;
        }

        let tf = g.value(x).shape()[1];
        let mut h = g.add_const(x, &positional_encoding(tf, cfg.hidden_dim)?)?;
        for layer in &self.layout.layers {
            let a = g.layer_norm(h, v(layer.ln1.0), v(layer.ln1.1), LN_EPS)?;
            let a = g.multi_head_attention(a, v(layer.wq), v(layer.wk), v(layer.wv), v(layer.wo), cfg.n_heads, Some(&lens))?;
            h = g.add(h, a)?;
            let f = g.layer_norm(h, v(layer.ln2.0), v(layer.ln2.1), LN_EPS)?;
            let f = g.linear(f, v(layer.ff1.0), Some(v(layer.ff1.1)))?;
            let f = g.relu(f);
            let f = g.linear(f, v(layer.ff2.0), Some(v(layer.ff2.1)))?;
            h = g.add(h, f)?;
        }
        let h = g.layer_norm(h, v(self.layout.final_ln.0), v(self.layout.final_ln.1), LN_EPS)?;
        let [ema, pitch, loud, phon] = self.layout.heads.map(|(w, bias)| g.linear(h, v(w), Some(v(bias))));
        Ok(Forward {
            ema: ema?,
            pitch: pitch?,
            loudness: loud?,
            phonemes: phon?,
            frame_lengths: lens,
            bn_stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm(
        &self,
        g: &mut Graph,
        vars: &[Option<Var>],
        x: Var,
        ids: &BnIds,
        mode: Mode,
        lengths: &[usize],
        stats: &mut Vec<BatchStats>,
    ) -> Result<Var> {
        let gamma = vars[ids.gamma.index()].expect("gamma var");
        let beta = vars[ids.beta.index()].expect("beta var");
        let (y, s) = match mode {
            Mode::Train => g.batch_norm(x, gamma, beta, BnMode::Train, BN_EPS, Some(lengths))?,
            Mode::Eval => {
                let mode = BnMode::Eval {
                    mean: self.params.get(ids.mean).data(),
                    var: self.params.get(ids.var).data(),
                };
                g.batch_norm(x, gamma, beta, mode, BN_EPS, Some(lengths))?
            }
        };
        stats.extend(s);
        Ok(y)
    }

    /// Folds one set of batch statistics into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats], momentum: f64) -> Result<()> {
        let ids: Vec<(ParamId, ParamId)> = self
            .layout
            .blocks
            .iter()
            .flat_map(|b| [(b.bn1.mean, b.bn1.var), (b.bn2.mean, b.bn2.var)])
            .collect();
        if ids.len() != stats.len() {
            return invalid("update_running_stats", format!("{} layers, {} statistics", ids.len(), stats.len()));
        }
        for ((mean_id, var_id), s) in ids.into_iter().zip(stats) {
            let mut running = emg2artic_nn::RunningStats {
                mean: self.params.get(mean_id).data().to_vec(),
                var: self.params.get(var_id).data().to_vec(),
            };
            running.update(s, momentum);
            self.params.get_mut(mean_id).data_mut().copy_from_slice(&running.mean);
            self.params.get_mut(var_id).data_mut().copy_from_slice(&running.var);
        }
        Ok(())
    }

    /// Inference on one utterance.
    pub fn predict(&self, utt: &Utterance) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let vars = self.param_vars(&mut g, false);
        let emg = Tensor::new(&[1, utt.emg_len, utt.n_channels], utt.emg.clone())?;
        let fwd = self.forward(&mut g, &vars, &emg, &[utt.emg_len], Mode::Eval)?;
        Ok(ModelOutput {
            n_frames: fwd.frame_lengths[0],
            ema: g.value(fwd.ema).data().to_vec(),
            pitch: g.value(fwd.pitch).data().to_vec(),
            loudness: g.value(fwd.loudness).data().to_vec(),
            phoneme_logits: g.value(fwd.phonemes).data().to_vec(),
            vocab: self.cfg.phoneme_vocab,
        })
    }

    pub fn save(&self, dir: &Path, weights: &LossWeights) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| crate::error::CoreError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        save_params(&self.params, dir)?;
        write_json(
            &dir.join(MODEL_CONFIG_FILE),
            &ModelConfigFile {
                config_version: CONFIG_VERSION,
                encoder: self.cfg.clone(),
                loss_weights: *weights,
            },
        )
    }

    pub fn load(dir: &Path) -> Result<(Model, LossWeights)> {
        let cfg: ModelConfigFile = read_json(&dir.join(MODEL_CONFIG_FILE))?;
        if cfg.config_version != CONFIG_VERSION {
            return invalid("load", format!("unsupported config_version {}", cfg.config_version));
        }
        let params = load_params(dir)?;
        Ok((Model::from_params(cfg.encoder, params)?, cfg.loss_weights))
    }
}

/// Loss terms of a forward pass against a batch.
pub fn total_loss(g: &mut Graph, fwd: &Forward, batch: &Batch, weights: &LossWeights) -> Result<(Var, LossBreakdown)> {
    let lengths = &batch.loss_lengths;
    let ema = g.mse_loss(fwd.ema, &batch.target_slice(0, EMA_DIMS), Some(lengths))?;
    let pitch = g.mse_loss(fwd.pitch, &batch.target_slice(PITCH_DIM, PITCH_DIM + 1), Some(lengths))?;
    let loud = g.mse_loss(fwd.loudness, &batch.target_slice(LOUDNESS_DIM, LOUDNESS_DIM + 1), Some(lengths))?;
    let phon = g.cross_entropy_loss(fwd.phonemes, &batch.phonemes, Some(lengths))?;
    let total = g.weighted_sum(&[
        (ema, 1.0),
        (pitch, weights.alpha_pitch),
        (loud, weights.alpha_loud),
        (phon, weights.alpha_phon),
    ])?;
    let item = |v: Var| g.value(v).item();
    let breakdown = LossBreakdown {
        total: item(total),
        ema: item(ema),
        pitch: item(pitch),
        loudness: item(loud),
        phoneme: item(phon),
    };
    Ok((total, breakdown))
}

/// Loss and gradients for every trainable parameter, in
/// [`Model::trainable_ids`] order.
pub struct StepResult {
    pub loss: LossBreakdown,
    pub grads: Vec<Vec<f64>>,
    pub bn_stats: Vec<BatchStats>,
}

pub fn forward_backward(model: &Model, batch: &Batch, weights: &LossWeights) -> Result<StepResult> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g, true);
    let fwd = model.forward(&mut g, &vars, &batch.emg, &batch.emg_lengths, Mode::Train)?;
    let (total, loss) = total_loss(&mut g, &fwd, batch, weights)?;
    let mut grads = g.backward(total)?;
    let out = model
        .trainable_ids()
        .into_iter()
        .map(|id| {
            let v = vars[id.index()].expect("trainable var");
            grads.take(v).unwrap_or_else(|| vec![0.0; model.params.get(id).len()])
        })
        .collect();
    Ok(StepResult {
        loss,
        grads: out,
        bn_stats: fwd.bn_stats,
    })
}

/// Eval-mode losses for a batch; never touches running statistics.
pub fn eval_loss(model: &Model, batch: &Batch, weights: &LossWeights) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let vars = model.param_vars(&mut g, false);
    let fwd = model.forward(&mut g, &vars, &batch.emg, &batch.emg_lengths, Mode::Eval)?;
    Ok(total_loss(&mut g, &fwd, batch, weights)?.1)
}
