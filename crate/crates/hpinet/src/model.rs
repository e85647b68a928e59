//! Network assembly: configuration, parameter layout and initialization,
//! the end-to-end forward pass, and size variants.
//!
//! The network is an encoder conv, K blocks of
//! divide -> global attention -> self-attention -> feed-forward ->
//! aggregate -> conv (with a block residual), then a pixel-shuffle decoder
//! whose output is added to a bilinear upsample of the input.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, AttnIds, FfnIds, SelectMode, SelectionTrace};
use crate::error::{HpiError, Result};
use crate::image::{ColorSpace, ImagePlane};
use crate::patching::{self, PatchLayout};
use crate::resize;
use crate::scalar::Scalar;
use crate::tape::{GradTape, TensorId};
use crate::tensor::Tensor;

/// Architecture hyperparameters. `patch_sizes` is the per-block cascaded
/// schedule; `qk_dim` is the query/key width (defaults to `channels`).
#[derive(Clone, Debug, PartialEq)]
pub struct HpiConfig {
    pub scale: usize,
    pub blocks: usize,
    pub patch_sizes: Vec<usize>,
    pub channels: usize,
    pub heads: usize,
    pub qk_dim: usize,
    pub ffn_ratio: f64,
    pub gumbel_tau: f64,
    pub seed: u64,
}

impl Default for HpiConfig {
    /// Desk-scale test configuration.
    fn default() -> Self {
        Self {
            scale: 4,
            blocks: 4,
            patch_sizes: vec![6, 8, 10, 12],
            channels: 16,
            heads: 1,
            qk_dim: 16,
            ffn_ratio: 2.0,
            gumbel_tau: 1.0,
            seed: 0,
        }
    }
}

/// Channel widths whose parameter counts land on the published S/M/L sizes
/// (0.46M / 0.90M / 1.44M at scale 4, 8 blocks).
pub const CHANNELS_S: usize = 43;
pub const CHANNELS_M: usize = 61;
pub const CHANNELS_L: usize = 77;

/// The full-size cascaded patch schedule.
pub const FULL_PATCH_SCHEDULE: [usize; 8] = [12, 16, 20, 24, 12, 16, 20, 24];

impl HpiConfig {
    /// Full-depth variant ("s", "m" or "l") at the given scale.
    pub fn variant(name: &str, scale: usize) -> Result<Self> {
        let channels = match name {
            "s" | "S" => CHANNELS_S,
            "m" | "M" => CHANNELS_M,
            "l" | "L" => CHANNELS_L,
            other => return Err(HpiError::Config(format!("unknown variant '{other}'"))),
        };
        let cfg = Self {
            scale,
            blocks: 8,
            patch_sizes: FULL_PATCH_SCHEDULE.to_vec(),
            channels,
            heads: 1,
            qk_dim: channels,
            ffn_ratio: 2.0,
            gumbel_tau: 1.0,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ffn_dim(&self) -> usize {
        ((self.ffn_ratio * self.channels as f64).round() as usize).max(1)
    }

    pub fn max_patch_size(&self) -> usize {
        self.patch_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(HpiError::Config(msg));
        if !(2..=4).contains(&self.scale) {
            return err(format!("scale must be 2, 3 or 4, got {}", self.scale));
        }
        if self.blocks == 0 {
            return err("blocks must be >= 1".into());
        }
        if self.patch_sizes.len() != self.blocks {
            return err(format!(
                "patch_sizes has {} entries for {} blocks",
                self.patch_sizes.len(),
                self.blocks
            ));
        }
        if self.patch_sizes.iter().any(|&p| p < 2) {
            return err("patch sizes must be >= 2".into());
        }
        if self.channels == 0 || self.heads == 0 {
            return err("channels and heads must be >= 1".into());
        }
        if self.channels % self.heads != 0 {
            return err(format!("channels {} not divisible by heads {}", self.channels, self.heads));
        }
        if self.qk_dim == 0 || self.qk_dim % self.heads != 0 {
            return err(format!("qk_dim {} not divisible by heads {}", self.qk_dim, self.heads));
        }
        if !(self.ffn_ratio > 0.0) {
            return err("ffn_ratio must be positive".into());
        }
        if !(self.gumbel_tau > 0.0) {
            return err("gumbel_tau must be positive".into());
        }
        Ok(())
    }

    // ── key=value (de)serialization, shared by config files and checkpoints ──

    /// Apply one key; returns false when the key does not belong to this
    /// config (so a caller can try other config sections).
    pub fn set_key(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = |what: &str| HpiError::Config(format!("invalid {what} value '{value}'"));
        match key {
            "scale" => self.scale = value.parse().map_err(|_| bad("scale"))?,
            "blocks" => self.blocks = value.parse().map_err(|_| bad("blocks"))?,
            "patch_sizes" => {
                self.patch_sizes = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("patch_sizes"))?;
            }
            "channels" => self.channels = value.parse().map_err(|_| bad("channels"))?,
            "heads" => self.heads = value.parse().map_err(|_| bad("heads"))?,
            "qk_dim" => self.qk_dim = value.parse().map_err(|_| bad("qk_dim"))?,
            "ffn_ratio" => self.ffn_ratio = value.parse().map_err(|_| bad("ffn_ratio"))?,
            "gumbel_tau" => self.gumbel_tau = value.parse().map_err(|_| bad("gumbel_tau"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad("seed"))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Canonical rendering; `parse_kv(render_kv(c)) == c`.
    pub fn render_kv(&self) -> String {
        let ps: Vec<String> = self.patch_sizes.iter().map(|p| p.to_string()).collect();
        format!(
            "scale={}\nblocks={}\npatch_sizes={}\nchannels={}\nheads={}\nqk_dim={}\nffn_ratio={}\ngumbel_tau={}\nseed={}\n",
            self.scale,
            self.blocks,
            ps.join(","),
            self.channels,
            self.heads,
            self.qk_dim,
            self.ffn_ratio,
            self.gumbel_tau,
            self.seed
        )
    }

    /// Strict parse: every key must be an architecture key.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HpiError::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1)))?;
            if !cfg.set_key(key.trim(), value.trim())? {
                return Err(HpiError::Config(format!("line {}: unknown key '{}'", lineno + 1, key.trim())));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Decoder upsampling stages for a scale factor.
pub fn upsample_factors(scale: usize) -> Vec<usize> {
    match scale {
        2 => vec![2],
        3 => vec![3],
        _ => vec![2, 2],
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zero,
    One,
    Identity,
    Uniform { fan_in: usize },
}

/// Canonical parameter enumeration: the single source of truth for
/// initialization, counting, checkpoint layout, and tape binding.
pub(crate) fn for_each_param(cfg: &HpiConfig, mut f: impl FnMut(String, Vec<usize>, Init)) {
    let c = cfg.channels;
    let d = cfg.qk_dim;
    let fdim = cfg.ffn_dim();
    f("encoder.w".into(), vec![c, 3, 3, 3], Init::Uniform { fan_in: 3 * 9 });
    f("encoder.b".into(), vec![c], Init::Zero);
    for k in 0..cfg.blocks {
        for (site, ln) in [("gpa", "ln"), ("ipsa", "ln1")] {
            f(format!("block.{k}.{site}.{ln}.gamma"), vec![c], Init::One);
            f(format!("block.{k}.{site}.{ln}.beta"), vec![c], Init::Zero);
            f(format!("block.{k}.{site}.w_q"), vec![c, d], Init::Uniform { fan_in: c });
            f(format!("block.{k}.{site}.w_k"), vec![c, d], Init::Uniform { fan_in: c });
            f(format!("block.{k}.{site}.w_v"), vec![c, c], Init::Uniform { fan_in: c });
            f(format!("block.{k}.{site}.w_o"), vec![c, c], Init::Identity);
        }
        f(format!("block.{k}.ipsa.ln2.gamma"), vec![c], Init::One);
        f(format!("block.{k}.ipsa.ln2.beta"), vec![c], Init::Zero);
        f(format!("block.{k}.ipsa.ffn.w1"), vec![c, fdim], Init::Uniform { fan_in: c });
        f(format!("block.{k}.ipsa.ffn.b1"), vec![fdim], Init::Zero);
        f(format!("block.{k}.ipsa.ffn.w2"), vec![fdim, c], Init::Uniform { fan_in: fdim });
        f(format!("block.{k}.ipsa.ffn.b2"), vec![c], Init::Zero);
        f(format!("block.{k}.conv.w"), vec![c, c, 3, 3], Init::Uniform { fan_in: c * 9 });
        f(format!("block.{k}.conv.b"), vec![c], Init::Zero);
    }
    for (s, r) in upsample_factors(cfg.scale).into_iter().enumerate() {
        f(format!("decoder.up.{s}.w"), vec![r * r * c, c, 3, 3], Init::Uniform { fan_in: c * 9 });
        f(format!("decoder.up.{s}.b"), vec![r * r * c], Init::Zero);
    }
    f("decoder.out.w".into(), vec![3, c, 3, 3], Init::Uniform { fan_in: c * 9 });
    f("decoder.out.b".into(), vec![3], Init::Zero);
}

/// Exact scalar parameter count, in closed form. Matches the enumeration;
/// the test suite checks the two against each other.
pub fn count_params(cfg: &HpiConfig) -> usize {
    let c = cfg.channels;
    let d = cfg.qk_dim;
    let fdim = cfg.ffn_dim();
    let encoder = 27 * c + c;
    let attn = 2 * c + 2 * c * d + 2 * c * c;
    let ffn = 2 * c + c * fdim + fdim + fdim * c + c;
    let conv = 9 * c * c + c;
    let block = 2 * attn + ffn + conv;
    let mut decoder = 0;
    for r in upsample_factors(cfg.scale) {
        decoder += 9 * (r * r * c) * c + r * r * c;
    }
    decoder += 27 * c + 3;
    encoder + cfg.blocks * block + decoder
}

/// Named parameter tensors in canonical order.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_entries(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor<T>)> {
        self.entries.iter()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor<T> {
        &self.entries[i].1
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.entries[i].1
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.all_finite())
    }
}

/// Deterministic initialization from `cfg.seed`: fan-in-scaled uniform for
/// linear/conv weights, ones/zeros for LN, identity for output projections,
/// zero biases.
pub fn init_params<T: Scalar>(cfg: &HpiConfig) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut entries = Vec::new();
    for_each_param(cfg, |name, dims, init| {
        let t = match init {
            Init::Zero => Tensor::zeros(&dims),
            Init::One => Tensor::full(&dims, T::one()),
            Init::Identity => {
                let n = dims[0];
                Tensor::from_fn(&dims, |i| if i / n == i % n { T::one() } else { T::zero() })
            }
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                Tensor::from_fn(&dims, |_| T::from_f64(rng.random::<f64>() * 2.0 * bound - bound))
            }
        };
        entries.push((name, t));
    });
    Ok(ModelParams { entries })
}

/// Check that `params` exactly covers the config's canonical layout.
pub fn validate_params<T: Scalar>(cfg: &HpiConfig, params: &ModelParams<T>) -> Result<()> {
    let mut expected = 0usize;
    let mut problem = None;
    for_each_param(cfg, |name, dims, _| {
        expected += 1;
        if problem.is_some() {
            return;
        }
        match params.get(&name) {
            None => problem = Some(format!("missing parameter '{name}'")),
            Some(t) if t.dims() != dims.as_slice() => {
                problem = Some(format!("parameter '{name}' has dims {:?}, config implies {dims:?}", t.dims()))
            }
            _ => {}
        }
    });
    if let Some(msg) = problem {
        return Err(HpiError::Integrity(msg));
    }
    if params.len() != expected {
        return Err(HpiError::Integrity(format!(
            "{} parameters present, config implies {expected}",
            params.len()
        )));
    }
    Ok(())
}

/// Tape ids of bound parameters, keyed by canonical name.
pub struct BoundParams {
    map: HashMap<String, TensorId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> TensorId {
        *self.map.get(name).unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }
}

/// Register every parameter as a tape leaf, in canonical order.
pub fn bind_params<T: Scalar>(tape: &mut GradTape<T>, params: &ModelParams<T>, trainable: bool) -> BoundParams {
    let mut map = HashMap::new();
    for (name, tensor) in params.iter() {
        let mut t = tensor.clone();
        t.set_requires_grad(trainable);
        map.insert(name.clone(), tape.leaf(t));
    }
    BoundParams { map }
}

fn gpa_ids(b: &BoundParams, k: usize) -> AttnIds {
    AttnIds {
        ln_gamma: b.id(&format!("block.{k}.gpa.ln.gamma")),
        ln_beta: b.id(&format!("block.{k}.gpa.ln.beta")),
        w_q: b.id(&format!("block.{k}.gpa.w_q")),
        w_k: b.id(&format!("block.{k}.gpa.w_k")),
        w_v: b.id(&format!("block.{k}.gpa.w_v")),
        w_o: b.id(&format!("block.{k}.gpa.w_o")),
    }
}

fn ipsa_ids(b: &BoundParams, k: usize) -> AttnIds {
    AttnIds {
        ln_gamma: b.id(&format!("block.{k}.ipsa.ln1.gamma")),
        ln_beta: b.id(&format!("block.{k}.ipsa.ln1.beta")),
        w_q: b.id(&format!("block.{k}.ipsa.w_q")),
        w_k: b.id(&format!("block.{k}.ipsa.w_k")),
        w_v: b.id(&format!("block.{k}.ipsa.w_v")),
        w_o: b.id(&format!("block.{k}.ipsa.w_o")),
    }
}

fn ffn_ids(b: &BoundParams, k: usize) -> FfnIds {
    FfnIds {
        ln_gamma: b.id(&format!("block.{k}.ipsa.ln2.gamma")),
        ln_beta: b.id(&format!("block.{k}.ipsa.ln2.beta")),
        w1: b.id(&format!("block.{k}.ipsa.ffn.w1")),
        b1: b.id(&format!("block.{k}.ipsa.ffn.b1")),
        w2: b.id(&format!("block.{k}.ipsa.ffn.w2")),
        b2: b.id(&format!("block.{k}.ipsa.ffn.b2")),
    }
}

/// Per-block record captured during a traced forward pass.
#[derive(Clone, Debug)]
pub struct BlockTrace<T> {
    pub block: usize,
    pub patch_size: usize,
    pub layout: PatchLayout,
    /// None when the block had a single patch (no valid partner).
    pub selection: Option<SelectionTrace>,
    /// The block's input feature map, for offline verification.
    pub input: Tensor<T>,
}

#[derive(Clone, Debug, Default)]
pub struct ModelTrace<T> {
    pub blocks: Vec<BlockTrace<T>>,
}

/// One block: divide -> global attention -> self-attention -> feed-forward
/// -> aggregate -> conv, added to the block input.
pub fn hpi_block<T: Scalar>(
    tape: &mut GradTape<T>,
    bound: &BoundParams,
    cfg: &HpiConfig,
    x: TensorId,
    k: usize,
    mode: SelectMode,
    rng: Option<&mut ChaCha8Rng>,
    trace: Option<&mut ModelTrace<T>>,
) -> Result<TensorId> {
    let p = patching::cpd_schedule(&cfg.patch_sizes, k)?;
    let input_value = if trace.is_some() { Some(tape.value(x).clone()) } else { None };
    let (patches, layout) = tape.divide(x, p)?;
    let (g, selection) = attention::global_attention(tape, patches, &gpa_ids(bound, k), cfg.heads, mode, rng)?;
    if let Some(tr) = trace {
        tr.blocks.push(BlockTrace {
            block: k,
            patch_size: p,
            layout: layout.clone(),
            selection,
            input: input_value.unwrap(),
        });
    }
    let a = attention::self_attention(tape, g, &ipsa_ids(bound, k), cfg.heads)?;
    let f = attention::ffn_sublayer(tape, a, &ffn_ids(bound, k))?;
    let agg = tape.aggregate(f, &layout)?;
    let conv = tape.conv3x3(
        agg,
        bound.id(&format!("block.{k}.conv.w")),
        bound.id(&format!("block.{k}.conv.b")),
    )?;
    tape.add(x, conv)
}

/// Full forward pass from an RGB image to the super-resolved output id.
///
/// Inputs smaller than the largest scheduled patch are reflect-padded before
/// the encoder and the decoder output is cropped back; the bilinear skip is
/// computed from the original (unpadded) image, so a zeroed decoder yields
/// exactly the bilinear upsample.
pub fn forward_on_tape<T: Scalar>(
    tape: &mut GradTape<T>,
    bound: &BoundParams,
    cfg: &HpiConfig,
    image: &ImagePlane,
    mode: SelectMode,
    mut rng: Option<&mut ChaCha8Rng>,
    mut trace: Option<&mut ModelTrace<T>>,
) -> Result<TensorId> {
    if image.space() != ColorSpace::Rgb {
        return Err(HpiError::Usage("forward expects an RGB input image".into()));
    }
    cfg.validate()?;
    let (h, w) = (image.height(), image.width());
    let max_p = cfg.max_patch_size();
    let needs_pad = h < max_p || w < max_p;
    let net_input = if needs_pad { image.reflect_pad_to(max_p, max_p)? } else { image.clone() };

    let x_in = tape.constant(net_input.to_tensor::<T>());
    let mut x = tape.conv3x3(x_in, bound.id("encoder.w"), bound.id("encoder.b"))?;
    for k in 0..cfg.blocks {
        x = hpi_block(tape, bound, cfg, x, k, mode, rng.as_deref_mut(), trace.as_deref_mut())?;
    }

    let mut d = x;
    for (s, r) in upsample_factors(cfg.scale).into_iter().enumerate() {
        d = tape.conv3x3(d, bound.id(&format!("decoder.up.{s}.w")), bound.id(&format!("decoder.up.{s}.b")))?;
        d = tape.pixel_shuffle(d, r)?;
    }
    let res = tape.conv3x3(d, bound.id("decoder.out.w"), bound.id("decoder.out.b"))?;
    let res = if needs_pad { tape.crop_spatial(res, cfg.scale * h, cfg.scale * w)? } else { res };

    let skip_img = resize::bilinear_resize(image, cfg.scale * h, cfg.scale * w)?;
    let skip = tape.constant(skip_img.to_tensor::<T>());
    tape.add(res, skip)
}

/// A config plus its parameters, with eval-mode entry points.
#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: HpiConfig,
    pub params: ModelParams<f32>,
}

impl Model {
    pub fn init(cfg: HpiConfig) -> Result<Self> {
        let params = init_params(&cfg)?;
        Ok(Self { cfg, params })
    }

    pub fn new(cfg: HpiConfig, params: ModelParams<f32>) -> Result<Self> {
        cfg.validate()?;
        validate_params(&cfg, &params)?;
        Ok(Self { cfg, params })
    }

    /// Deterministic inference: hard partner selection, no randomness.
    pub fn infer(&self, image: &ImagePlane) -> Result<ImagePlane> {
        let mut tape = GradTape::new();
        let bound = bind_params(&mut tape, &self.params, false);
        let out = forward_on_tape::<f32>(&mut tape, &bound, &self.cfg, image, SelectMode::Hard, None, None)?;
        ImagePlane::from_tensor(tape.value(out), ColorSpace::Rgb)
    }

    /// Inference that also reports, per block, each patch's selected partner
    /// and similarity, plus the block input for offline recomputation.
    pub fn infer_traced(&self, image: &ImagePlane) -> Result<(ImagePlane, ModelTrace<f32>)> {
        let mut tape = GradTape::new();
        let bound = bind_params(&mut tape, &self.params, false);
        let mut trace = ModelTrace::default();
        let out = forward_on_tape::<f32>(
            &mut tape,
            &bound,
            &self.cfg,
            image,
            SelectMode::Hard,
            None,
            Some(&mut trace),
        )?;
        Ok((ImagePlane::from_tensor(tape.value(out), ColorSpace::Rgb)?, trace))
    }
}
