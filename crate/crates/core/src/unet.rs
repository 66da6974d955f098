//! 3D attention U-Net.
//!
//! Encoder levels run two `conv(k=3) → batchnorm → activation` blocks,
//! dropout, then 2× max pooling, doubling the filter count per level. The
//! decoder upsamples with a stride-2 transposed convolution, passes the
//! matching encoder skip through an attention gate driven by the coarser
//! decoder features, concatenates, and runs another conv block. A 1×1×1
//! head and channel softmax give per-voxel probabilities over
//! `{background, necrosis, edema, enhancing}`.
//!
//! Parameters live in a [`ModelParams`] map under stable dotted names such
//! as `enc0.conv1.weight` or `dec1.gate.psi`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::graph::{BatchStats, Graph, Var};
use crate::metrics::NUM_CLASSES;
use crate::rng;
use crate::tensor::{Layout5, Real, Tensor};

pub const IN_CHANNELS: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.01;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
const DROPOUT_MIN: f64 = 0.1;
const DROPOUT_MAX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    LeakyRelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_filters: usize,
    pub activation: Activation,
    /// One rate per level, shallowest first, bottleneck last (`depth + 1` entries).
    pub dropout_rates: Vec<f64>,
    pub in_channels: usize,
    pub out_classes: usize,
    /// Smallest cube extent the model must accept; bounds the usable depth.
    pub min_input_extent: usize,
}

impl UNetConfig {
    /// Config with dropout rates spread linearly from 0.1 (shallowest) to 0.3 (bottleneck).
    pub fn new(depth: usize, base_filters: usize, activation: Activation) -> Self {
        Self {
            depth,
            base_filters,
            activation,
            dropout_rates: interpolated_dropout(depth),
            in_channels: IN_CHANNELS,
            out_classes: NUM_CLASSES,
            min_input_extent: 32,
        }
    }

    /// Depth 4, 16 base filters.
    pub fn reference() -> Self {
        Self::new(4, 16, Activation::LeakyRelu)
    }

    pub fn filters(&self, level: usize) -> usize {
        self.base_filters << level
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth < 2 {
            return bad(format!("depth {} < 2", self.depth));
        }
        if self.base_filters < 2 {
            return bad(format!("base_filters {} < 2", self.base_filters));
        }
        if self.in_channels != IN_CHANNELS || self.out_classes != NUM_CLASSES {
            return bad(format!(
                "expected {IN_CHANNELS} input channels and {NUM_CLASSES} classes, got {} and {}",
                self.in_channels, self.out_classes
            ));
        }
        if self.dropout_rates.len() != self.depth + 1 {
            return bad(format!(
                "need {} dropout rates, got {}",
                self.depth + 1,
                self.dropout_rates.len()
            ));
        }
        if let Some(r) = self.dropout_rates.iter().find(|r| !(DROPOUT_MIN..=DROPOUT_MAX).contains(*r)) {
            return bad(format!("dropout rate {r} outside [0.1, 0.3]"));
        }
        let div = 1usize.checked_shl(self.depth as u32).unwrap_or(usize::MAX);
        if self.min_input_extent % div != 0 || self.min_input_extent / div < 2 {
            return bad(format!(
                "depth {} reduces a {}³ input below extent 2",
                self.depth, self.min_input_extent
            ));
        }
        Ok(())
    }
}

pub fn interpolated_dropout(depth: usize) -> Vec<f64> {
    (0..=depth)
        .map(|l| DROPOUT_MIN + (DROPOUT_MAX - DROPOUT_MIN) * l as f64 / depth.max(1) as f64)
        .collect()
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with standard deviation `sqrt(2 / fan_in)`.
    HeNormal { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub extents: Vec<usize>,
    pub init: Init,
    /// Non-trainable state (batchnorm running statistics).
    pub buffer: bool,
}

fn spec(name: String, extents: Vec<usize>, init: Init) -> ParamSpec {
    ParamSpec { name, extents, init, buffer: false }
}

fn conv_spec(name: String, c_out: usize, c_in: usize, k: usize) -> ParamSpec {
    spec(name, vec![c_out, c_in, k, k, k], Init::HeNormal { fan_in: c_in * k * k * k })
}

fn block_specs(out: &mut Vec<ParamSpec>, prefix: &str, c_in: usize, c_out: usize) {
    for (i, ci) in [(1, c_in), (2, c_out)] {
        out.push(conv_spec(format!("{prefix}.conv{i}.weight"), c_out, ci, 3));
        out.push(spec(format!("{prefix}.bn{i}.gamma"), vec![c_out], Init::Ones));
        out.push(spec(format!("{prefix}.bn{i}.beta"), vec![c_out], Init::Zeros));
        out.push(ParamSpec {
            name: format!("{prefix}.bn{i}.running_mean"),
            extents: vec![c_out],
            init: Init::Zeros,
            buffer: true,
        });
        out.push(ParamSpec {
            name: format!("{prefix}.bn{i}.running_var"),
            extents: vec![c_out],
            init: Init::Ones,
            buffer: true,
        });
    }
}

/// Attention gate parameter layout for a skip with `f_x` channels gated by a
/// signal with `f_g` channels; the intermediate width equals `f_g`.
pub fn gate_specs(prefix: &str, f_x: usize, f_g: usize) -> Vec<ParamSpec> {
    let f_int = f_g;
    vec![
        conv_spec(format!("{prefix}.w_x"), f_int, f_x, 2),
        conv_spec(format!("{prefix}.w_g"), f_int, f_g, 1),
        spec(format!("{prefix}.w_g_bias"), vec![f_int], Init::Zeros),
        conv_spec(format!("{prefix}.psi"), 1, f_int, 1),
        spec(format!("{prefix}.psi_bias"), vec![1], Init::Zeros),
    ]
}

/// Every tensor the model owns, in construction order.
pub fn param_specs(cfg: &UNetConfig) -> Vec<ParamSpec> {
    let mut out = Vec::new();
    let mut c_prev = cfg.in_channels;
    for l in 0..cfg.depth {
        block_specs(&mut out, &format!("enc{l}"), c_prev, cfg.filters(l));
        c_prev = cfg.filters(l);
    }
    block_specs(&mut out, "bottleneck", c_prev, cfg.filters(cfg.depth));
    for l in (0..cfg.depth).rev() {
        let (f, fg) = (cfg.filters(l), cfg.filters(l + 1));
        // non-overlapping k=2 stride-2 taps: each output voxel sees `fg` inputs
        out.push(spec(format!("dec{l}.up.weight"), vec![fg, f, 2, 2, 2], Init::HeNormal { fan_in: fg }));
        out.extend(gate_specs(&format!("dec{l}.gate"), f, fg));
        block_specs(&mut out, &format!("dec{l}"), 2 * f, f);
    }
    out.push(conv_spec("head.weight".into(), cfg.out_classes, cfg.filters(0), 1));
    out.push(spec("head.bias".into(), vec![cfg.out_classes], Init::Zeros));
    out
}

/// Named model tensors: trainable weights plus batchnorm running statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

pub fn is_buffer_name(name: &str) -> bool {
    name.ends_with(".running_mean") || name.ends_with(".running_var")
}

impl<T: Real> ModelParams<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter().filter(|(n, _)| !is_buffer_name(n))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        self.trainable().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    /// Checks that names and extents match the layout of `cfg` exactly.
    pub fn audit(&self, cfg: &UNetConfig) -> Result<()> {
        let specs = param_specs(cfg);
        for s in &specs {
            let t = self.get(&s.name)?;
            if t.extents() != s.extents.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "{} has extents {:?}, config expects {:?}",
                    s.name,
                    t.extents(),
                    s.extents
                )));
            }
        }
        if specs.len() != self.len() {
            let known: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
            let extra = self.names().find(|n| !known.contains(&n.as_str())).cloned().unwrap_or_default();
            return Err(Error::UnknownParameter(extra));
        }
        Ok(())
    }
}

/// Seeded He-style initialization. Each tensor draws from its own stream
/// keyed by name, so adding layers never perturbs existing ones.
pub fn build_model<T: Real>(cfg: &UNetConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    for s in param_specs(cfg) {
        let t = init_tensor(&s, seed);
        params.insert(s.name, t);
    }
    Ok(params)
}

fn init_tensor<T: Real>(s: &ParamSpec, seed: u64) -> Tensor<T> {
    match s.init {
        Init::Zeros => Tensor::zeros(&s.extents),
        Init::Ones => Tensor::full(&s.extents, T::one()),
        Init::HeNormal { fan_in } => {
            let std = num_traits::Float::sqrt(2.0 / fan_in as f64);
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut r = rng::stream(seed, &s.name, 0);
            Tensor::from_fn(&s.extents, |_| T::from_f64(normal.sample(&mut r)))
        }
    }
}

/// Forward-pass regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics and dropout; dropout masks are keyed by `(seed, layer, step)`.
    Train { seed: u64, step: u64 },
    /// Running statistics, no dropout.
    Eval,
}

/// Gate parameters registered on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    pub w_x: Var,
    pub w_g: Var,
    pub w_g_bias: Var,
    pub psi: Var,
    pub psi_bias: Var,
}

/// Attention gate weights: `w_x` is a stride-2, k=2 convolution without bias,
/// `w_g` and `psi` are 1×1×1 convolutions with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGateParams<T> {
    pub w_x: Tensor<T>,
    pub w_g: Tensor<T>,
    pub w_g_bias: Tensor<T>,
    pub psi: Tensor<T>,
    pub psi_bias: Tensor<T>,
}

impl<T: Real> AttentionGateParams<T> {
    pub fn from_params(params: &ModelParams<T>, prefix: &str) -> Result<Self> {
        let g = |n: &str| params.get(&format!("{prefix}.{n}")).cloned();
        let p = Self { w_x: g("w_x")?, w_g: g("w_g")?, w_g_bias: g("w_g_bias")?, psi: g("psi")?, psi_bias: g("psi_bias")? };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let (wx, wg, psi) = (self.w_x.extents(), self.w_g.extents(), self.psi.extents());
        let ok = wx.len() == 5
            && wg.len() == 5
            && psi.len() == 5
            && wx[2..] == [2, 2, 2]
            && wg[2..] == [1, 1, 1]
            && psi[2..] == [1, 1, 1]
            && wx[0] == wg[0]
            && psi[0] == 1
            && psi[1] == wg[0]
            && self.w_g_bias.len() == wg[0]
            && self.psi_bias.len() == 1;
        if !ok {
            return Err(Error::ShapeMismatch(format!(
                "inconsistent attention gate parameters w_x {wx:?}, w_g {wg:?}, psi {psi:?}"
            )));
        }
        Ok(())
    }

    pub fn register(&self, g: &mut Graph<T>, requires_grad: bool) -> GateVars {
        GateVars {
            w_x: g.leaf(self.w_x.clone(), requires_grad),
            w_g: g.leaf(self.w_g.clone(), requires_grad),
            w_g_bias: g.leaf(self.w_g_bias.clone(), requires_grad),
            psi: g.leaf(self.psi.clone(), requires_grad),
            psi_bias: g.leaf(self.psi_bias.clone(), requires_grad),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GateOutput {
    /// `α ⊙ x`, same extents as `x`.
    pub gated: Var,
    /// Coefficients at `x`'s resolution, one channel.
    pub alpha: Var,
}

/// `α = up₂(σ(ψ(relu(W_x ⋆ x + W_g ⋆ g))))`, returns `α ⊙ x`.
///
/// `x` must have exactly twice the spatial extents of `g`.
pub fn attention_gate<T: Real>(graph: &mut Graph<T>, x: Var, g: Var, p: &GateVars) -> Result<GateOutput> {
    let lx = Layout5::of(graph.value(x).extents())?;
    let lg = Layout5::of(graph.value(g).extents())?;
    if lx.n != lg.n || lx.dims != lg.dims.map(|d| 2 * d) {
        return Err(Error::ShapeMismatch(format!(
            "skip {:?} must be twice the gating signal {:?}",
            graph.value(x).extents(),
            graph.value(g).extents()
        )));
    }
    let theta_x = graph.conv3d(x, p.w_x, None, 2, 0)?;
    let phi_g = graph.conv3d_1x1(g, p.w_g, Some(p.w_g_bias))?;
    let joint = graph.add(theta_x, phi_g)?;
    let act = graph.relu(joint)?;
    let psi = graph.conv3d_1x1(act, p.psi, Some(p.psi_bias))?;
    let coarse = graph.sigmoid(psi)?;
    let alpha = graph.upsample_trilinear(coarse, 2)?;
    let gated = graph.gate_mul(x, alpha)?;
    Ok(GateOutput { gated, alpha })
}

/// Output of [`forward`]: the tape, the probabilities node, the leaf handle
/// of every parameter and the batch statistics of each batchnorm (training
/// mode only).
pub struct ForwardPass<T> {
    pub graph: Graph<T>,
    pub probs: Var,
    pub vars: BTreeMap<String, Var>,
    pub alphas: Vec<Var>,
    pub batch_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Real> ForwardPass<T> {
    /// Gradients of trainable parameters after `backward`.
    pub fn grads(&self) -> BTreeMap<String, Vec<T>> {
        self.vars
            .iter()
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g.to_vec())))
            .collect()
    }
}

struct Builder<'a, T> {
    cfg: &'a UNetConfig,
    params: &'a ModelParams<T>,
    graph: Graph<T>,
    vars: BTreeMap<String, Var>,
    mode: Mode,
    batch_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Real> Builder<'_, T> {
    fn var(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let t = self.params.get(name)?.clone();
        let v = self.graph.leaf(t, !is_buffer_name(name));
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    fn activate(&mut self, x: Var) -> Result<Var> {
        match self.cfg.activation {
            Activation::Relu => self.graph.relu(x),
            Activation::LeakyRelu => self.graph.leaky_relu(x, T::from_f64(LEAKY_SLOPE)),
        }
    }

    fn norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.var(&format!("{prefix}.gamma"))?;
        let beta = self.var(&format!("{prefix}.beta"))?;
        let eps = T::from_f64(BN_EPS);
        match self.mode {
            Mode::Train { .. } => {
                let (y, stats) = self.graph.batchnorm_train(x, gamma, beta, eps)?;
                self.batch_stats.push((prefix.to_string(), stats));
                Ok(y)
            }
            Mode::Eval => {
                let mean = self.params.get(&format!("{prefix}.running_mean"))?.values().to_vec();
                let var = self.params.get(&format!("{prefix}.running_var"))?.values().to_vec();
                self.graph.batchnorm_eval(x, gamma, beta, &mean, &var, eps)
            }
        }
    }

    fn conv_block(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let mut h = x;
        for i in 1..=2 {
            let w = self.var(&format!("{prefix}.conv{i}.weight"))?;
            h = self.graph.conv3d(h, w, None, 1, 1)?;
            h = self.norm(h, &format!("{prefix}.bn{i}"))?;
            h = self.activate(h)?;
        }
        Ok(h)
    }

    fn dropout(&mut self, x: Var, prefix: &str, rate: f64) -> Result<Var> {
        match self.mode {
            Mode::Train { seed, step } => {
                let mut r = rng::stream(seed, &format!("{prefix}.dropout"), step);
                self.graph.dropout(x, rate, true, &mut r)
            }
            Mode::Eval => Ok(x),
        }
    }

    fn gate(&mut self, prefix: &str) -> Result<GateVars> {
        Ok(GateVars {
            w_x: self.var(&format!("{prefix}.w_x"))?,
            w_g: self.var(&format!("{prefix}.w_g"))?,
            w_g_bias: self.var(&format!("{prefix}.w_g_bias"))?,
            psi: self.var(&format!("{prefix}.psi"))?,
            psi_bias: self.var(&format!("{prefix}.psi_bias"))?,
        })
    }
}

/// Runs the network on a `(N, 3, D, H, W)` batch and returns per-voxel class
/// probabilities `(N, 4, D, H, W)` on the tape.
pub fn forward<T: Real>(cfg: &UNetConfig, params: &ModelParams<T>, batch: &Tensor<T>, mode: Mode) -> Result<ForwardPass<T>> {
    let e = batch.extents();
    if e.len() != 5 || e[1] != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "expected a (N, {}, D, H, W) batch, got {:?}",
            cfg.in_channels, e
        )));
    }
    let div = 1usize << cfg.depth;
    if let Some(&d) = e[2..].iter().find(|&&d| d % div != 0 || d == 0) {
        return Err(Error::IndivisibleExtent { extent: d, divisor: div });
    }
    let mut b = Builder {
        cfg,
        params,
        graph: Graph::new(),
        vars: BTreeMap::new(),
        mode,
        batch_stats: Vec::new(),
    };
    let input = b.graph.constant(batch.clone());
    let mut h = input;
    let mut skips = Vec::with_capacity(cfg.depth);
    for l in 0..cfg.depth {
        let p = format!("enc{l}");
        h = b.conv_block(h, &p)?;
        h = b.dropout(h, &p, cfg.dropout_rates[l])?;
        skips.push(h);
        h = b.graph.maxpool3d(h, 2)?;
    }
    h = b.conv_block(h, "bottleneck")?;
    h = b.dropout(h, "bottleneck", cfg.dropout_rates[cfg.depth])?;
    let mut alphas = Vec::with_capacity(cfg.depth);
    for l in (0..cfg.depth).rev() {
        let p = format!("dec{l}");
        let up_w = b.var(&format!("{p}.up.weight"))?;
        let up = b.graph.transposed_conv3d(h, up_w, 2)?;
        let gv = b.gate(&format!("{p}.gate"))?;
        let gate = attention_gate(&mut b.graph, skips[l], h, &gv)?;
        alphas.push(gate.alpha);
        let cat = b.graph.concat_channels(up, gate.gated)?;
        h = b.conv_block(cat, &p)?;
        h = b.dropout(h, &p, cfg.dropout_rates[l])?;
    }
    let hw = b.var("head.weight")?;
    let hb = b.var("head.bias")?;
    let logits = b.graph.conv3d_1x1(h, hw, Some(hb))?;
    let probs = b.graph.softmax_channels(logits)?;
    Ok(ForwardPass { graph: b.graph, probs, vars: b.vars, alphas, batch_stats: b.batch_stats })
}

/// Folds training-mode batch statistics into the running averages:
/// `r ← (1 − momentum)·r + momentum·batch`.
pub fn update_running_stats<T: Real>(
    params: &mut ModelParams<T>,
    stats: &[(String, BatchStats<T>)],
    momentum: f64,
) -> Result<()> {
    let m = T::from_f64(momentum);
    let keep = T::one() - m;
    for (prefix, s) in stats {
        for (suffix, batch) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            let t = params.get_mut(&format!("{prefix}.{suffix}"))?;
            for (r, &b) in t.values_mut().iter_mut().zip(batch) {
                *r = keep * *r + m * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_interpolation() {
        let r = interpolated_dropout(2);
        assert_eq!(r.len(), 3);
        assert!((r[0] - 0.1).abs() < 1e-12 && (r[1] - 0.2).abs() < 1e-12 && (r[2] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(UNetConfig::new(2, 4, Activation::Relu).validate().is_ok());
        assert!(UNetConfig::reference().validate().is_ok());
        assert!(matches!(UNetConfig::new(1, 4, Activation::Relu).validate(), Err(Error::InvalidConfig(_))));
        assert!(matches!(UNetConfig::new(2, 1, Activation::Relu).validate(), Err(Error::InvalidConfig(_))));
        // 32 / 2^5 = 1 < 2
        assert!(matches!(UNetConfig::new(5, 4, Activation::Relu).validate(), Err(Error::InvalidConfig(_))));
        let mut c = UNetConfig::new(2, 4, Activation::Relu);
        c.dropout_rates[0] = 0.5;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn build_is_deterministic_and_audits() {
        let cfg = UNetConfig::new(2, 4, Activation::Relu);
        let a = build_model::<f32>(&cfg, 3).unwrap();
        let b = build_model::<f32>(&cfg, 3).unwrap();
        let c = build_model::<f32>(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.audit(&cfg).unwrap();
        assert!(a.audit(&UNetConfig::new(2, 8, Activation::Relu)).is_err());
    }

    #[test]
    fn forward_rejects_indivisible() {
        let cfg = UNetConfig::new(2, 2, Activation::Relu);
        let p = build_model::<f32>(&cfg, 0).unwrap();
        let x = Tensor::zeros(&[1, 3, 6, 8, 8]);
        assert!(matches!(
            forward(&cfg, &p, &x, Mode::Eval),
            Err(Error::IndivisibleExtent { extent: 6, divisor: 4 })
        ));
    }
}
