//! The target-speaker DOA network: CRN enhancement, anchor speaker features,
//! and the spatial stack of ConvGLU blocks and Spatial Layers feeding a
//! per-frame classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsdoa_autograd::{Binder, Conv1d, Conv2d, ConvT2d, Graph, Init, ParamStore, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    Complex,
    Magnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mics: usize,
    pub freq_bins: usize,
    pub enh_channels: usize,
    pub enh_layers: usize,
    pub spatial_channels: usize,
    pub hidden: usize,
    pub ffn_hidden: usize,
    pub blocks: usize,
    pub classes: usize,
    pub heads: usize,
    pub fconv_kernel: usize,
    pub tconv_kernel: usize,
    pub glu_kernel: (usize, usize),
    pub speaker_kernel_t: usize,
    pub input_mode: InputMode,
    pub use_enhancement: bool,
    pub use_speaker: bool,
    /// One F×F map shared by all squeezed channels of the full-band block.
    pub fband_shared: bool,
    pub causal_attention: bool,
    pub causal_ffn: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mics: 6,
            freq_bins: 161,
            enh_channels: 16,
            enh_layers: 5,
            spatial_channels: 8,
            hidden: 8,
            ffn_hidden: 32,
            blocks: 5,
            classes: 37,
            heads: 2,
            fconv_kernel: 5,
            tconv_kernel: 5,
            glu_kernel: (2, 3),
            speaker_kernel_t: 2,
            input_mode: InputMode::Complex,
            use_enhancement: true,
            use_speaker: true,
            fband_shared: true,
            causal_attention: false,
            causal_ffn: false,
        }
    }
}

fn halve_same(f: usize) -> usize {
    (f - 1) / 2 + 1
}

fn halve_valid(f: usize) -> Option<usize> {
    (f >= 3).then(|| (f - 3) / 2 + 1)
}

impl ModelConfig {
    pub fn standard() -> Self {
        Self::default()
    }

    pub fn large() -> Self {
        ModelConfig {
            enh_channels: 64,
            ffn_hidden: 96,
            ..Self::default()
        }
    }

    /// Miniature network for gradient checks: 9 bins, one block.
    pub fn mini() -> Self {
        ModelConfig {
            mics: 2,
            freq_bins: 9,
            enh_channels: 3,
            enh_layers: 2,
            spatial_channels: 4,
            hidden: 3,
            ffn_hidden: 4,
            blocks: 1,
            fconv_kernel: 3,
            tconv_kernel: 3,
            ..Self::default()
        }
    }

    /// Complex feature channels per microphone stack (real/imaginary pairs).
    pub fn complex_channels(&self) -> usize {
        2 * self.mics
    }

    /// Channels per raw or enhanced view entering the spatial stack.
    pub fn view_channels(&self) -> usize {
        match self.input_mode {
            InputMode::Complex => 2 * self.mics,
            InputMode::Magnitude => self.mics,
        }
    }

    pub fn spatial_input_channels(&self) -> usize {
        self.view_channels() * (1 + self.use_enhancement as usize) + 1
    }

    /// Frequency sizes through the ConvGLU blocks, input first.
    pub fn glu_freqs(&self) -> Vec<usize> {
        let mut f = vec![self.freq_bins];
        for _ in 0..self.blocks {
            f.push(halve_same(*f.last().unwrap()));
        }
        f
    }

    /// Frequency sizes through the CRN encoder, input first.
    pub fn crn_freqs(&self) -> Result<Vec<usize>> {
        let mut f = vec![self.freq_bins];
        for _ in 0..self.enh_layers {
            let next = halve_valid(*f.last().unwrap())
                .ok_or_else(|| Error::Config(format!("{} bins too few for {} CRN layers", self.freq_bins, self.enh_layers)))?;
            f.push(next);
        }
        Ok(f)
    }

    pub fn classifier_inputs(&self) -> usize {
        let f = *self.glu_freqs().last().unwrap();
        if self.blocks == 0 {
            self.spatial_input_channels() * f
        } else {
            self.spatial_channels * f
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.mics == 0 || self.freq_bins == 0 || self.classes == 0 {
            return bad("mics, freq_bins and classes must be positive");
        }
        if self.use_enhancement && (self.enh_layers == 0 || self.enh_channels == 0) {
            return bad("enhancement needs at least one CRN layer and channel");
        }
        if self.use_enhancement {
            self.crn_freqs()?;
        }
        if self.spatial_channels % self.heads != 0 {
            return bad("spatial_channels must split evenly across attention heads");
        }
        if self.fconv_kernel % 2 == 0 || self.tconv_kernel % 2 == 0 {
            return bad("frequency and time FFN kernels must be odd");
        }
        if self.glu_kernel.0 == 0 || self.glu_kernel.1 % 2 == 0 || self.speaker_kernel_t == 0 {
            return bad("ConvGLU kernel must have positive time extent and odd frequency extent");
        }
        Ok(())
    }
}

/// Parameter names, shapes and initialisers in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Result<Vec<(String, Vec<usize>, Init)>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut weight = |name: String, shape: Vec<usize>, fan_in: usize| {
        out.push((name, shape, Init::Uniform { fan_in }));
    };
    let (kt, kf) = cfg.glu_kernel;
    let mut biases = Vec::new();
    let mut norms = Vec::new();

    if cfg.use_enhancement {
        let freqs = cfg.crn_freqs()?;
        let c = cfg.enh_channels;
        let mut cin = cfg.complex_channels();
        for i in 0..cfg.enh_layers {
            weight(format!("crn.enc{i}.w"), vec![c, cin, kt, kf], cin * kt * kf);
            biases.push((format!("crn.enc{i}.b"), vec![c]));
            cin = c;
        }
        let feat = c * freqs[cfg.enh_layers];
        for j in 0..2 {
            weight(format!("crn.lstm{j}.wih"), vec![4 * feat, feat], feat);
            weight(format!("crn.lstm{j}.whh"), vec![4 * feat, feat], feat);
            biases.push((format!("crn.lstm{j}.b"), vec![4 * feat]));
        }
        for j in 0..cfg.enh_layers {
            let co = if j + 1 == cfg.enh_layers { cfg.complex_channels() } else { c };
            weight(format!("crn.dec{j}.w"), vec![2 * c, co, kt, kf], co * kt * kf);
            biases.push((format!("crn.dec{j}.b"), vec![co]));
        }
    }

    let freqs = cfg.glu_freqs();
    let sc = cfg.spatial_channels;
    let spk = if cfg.use_speaker { sc } else { 0 };
    for k in 0..cfg.blocks {
        let cin = if k == 0 { cfg.spatial_input_channels() } else { sc } + spk;
        for p in ["1", "2"] {
            weight(format!("glu{k}.w{p}"), vec![sc, cin, kt, kf], cin * kt * kf);
            biases.push((format!("glu{k}.b{p}"), vec![sc]));
        }
        if cfg.use_speaker {
            let cin = if k == 0 { 1 } else { sc };
            let st = cfg.speaker_kernel_t;
            for p in ["1", "2"] {
                weight(format!("spk{k}.w{p}"), vec![sc, cin, st, kf], cin * st * kf);
                biases.push((format!("spk{k}.b{p}"), vec![sc]));
            }
        }
        let f = freqs[k + 1];
        let (h, hf) = (cfg.hidden, cfg.ffn_hidden);
        let pre = format!("sl{k}");
        for n in ["cb.ln1", "cb.ln2", "cb.ln3", "nb.ln1", "nb.ln2"] {
            norms.push(format!("{pre}.{n}"));
        }
        for n in ["cb.fconv1", "cb.fconv2"] {
            weight(format!("{pre}.{n}.w"), vec![sc, 1, cfg.fconv_kernel], cfg.fconv_kernel);
            biases.push((format!("{pre}.{n}.b"), vec![sc]));
        }
        weight(format!("{pre}.cb.squeeze.w"), vec![h, sc], sc);
        biases.push((format!("{pre}.cb.squeeze.b"), vec![h]));
        let groups = if cfg.fband_shared { 1 } else { h };
        weight(format!("{pre}.cb.flinear.w"), vec![groups, f, f], f);
        biases.push((format!("{pre}.cb.flinear.b"), vec![groups, f]));
        weight(format!("{pre}.cb.unsqueeze.w"), vec![sc, h], h);
        biases.push((format!("{pre}.cb.unsqueeze.b"), vec![sc]));
        for n in ["q", "k", "v", "o"] {
            weight(format!("{pre}.nb.{n}.w"), vec![sc, sc], sc);
            biases.push((format!("{pre}.nb.{n}.b"), vec![sc]));
        }
        weight(format!("{pre}.nb.ffn1.w"), vec![hf, sc], sc);
        biases.push((format!("{pre}.nb.ffn1.b"), vec![hf]));
        weight(format!("{pre}.nb.tconv.w"), vec![hf, 1, cfg.tconv_kernel], cfg.tconv_kernel);
        biases.push((format!("{pre}.nb.tconv.b"), vec![hf]));
        weight(format!("{pre}.nb.ffn2.w"), vec![sc, hf], hf);
        biases.push((format!("{pre}.nb.ffn2.b"), vec![sc]));
    }
    let fin = cfg.classifier_inputs();
    weight("cls.w".into(), vec![cfg.classes, fin], fin);
    biases.push(("cls.b".into(), vec![cfg.classes]));

    out.extend(biases.into_iter().map(|(n, s)| (n, s, Init::Zeros)));
    for n in norms {
        out.push((format!("{n}.g"), vec![sc], Init::Ones));
        out.push((format!("{n}.b"), vec![sc], Init::Zeros));
    }
    Ok(out)
}

/// Exact number of learnable scalars.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    Ok(param_specs(cfg)?.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum())
}

/// Uniform `±1/sqrt(fan_in)` weights, zero biases, unit norm gains.
pub fn init_params<S: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in param_specs(cfg)? {
        store.init(name, &shape, init, &mut rng);
    }
    Ok(store)
}

/// Every expected tensor is present with the expected shape.
pub fn check_compatible<S: Real>(cfg: &ModelConfig, store: &ParamStore<S>) -> Result<()> {
    let specs = param_specs(cfg)?;
    if specs.len() != store.len() {
        return Err(Error::CheckpointMismatch(format!(
            "config expects {} tensors, checkpoint has {}",
            specs.len(),
            store.len()
        )));
    }
    for (name, shape, _) in specs {
        let t = store
            .get(&name)
            .map_err(|_| Error::CheckpointMismatch(format!("missing tensor `{name}`")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::CheckpointMismatch(format!(
                "`{name}` has shape {:?}, config expects {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

fn stage<T>(stage: &str, r: rtsdoa_autograd::Result<T>) -> Result<T> {
    r.map_err(|e| Error::Model(format!("{stage}: {e}")))
}

/// `tanh(x * W1 + b1) ⊙ σ(x * W2 + b2)` with causal time padding and
/// frequency stride 2 (half-kernel frequency padding).
pub fn conv_glu<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, prefix: &str, x: Var) -> Result<Var> {
    let w1 = b.get(g, &format!("{prefix}.w1"))?;
    let w2 = b.get(g, &format!("{prefix}.w2"))?;
    let b1 = b.get(g, &format!("{prefix}.b1"))?;
    let b2 = b.get(g, &format!("{prefix}.b2"))?;
    let ws = g.shape(w1).to_vec();
    let spec = Conv2d {
        stride: (1, 2),
        pad_t: (ws[2] - 1, 0),
        pad_f: (ws[3] / 2, ws[3] / 2),
    };
    let content = stage(prefix, g.conv2d(x, w1, Some(b1), spec))?;
    let gate = stage(prefix, g.conv2d(x, w2, Some(b2), spec))?;
    let t = g.tanh(content);
    let s = g.sigmoid(gate);
    Ok(g.mul(t, s)?)
}

/// Encoder/decoder CRN over the `[B, 2M, T, F]` complex stack.
pub fn crn_enhance<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let freqs = cfg.crn_freqs()?;
    let xs = g.shape(x).to_vec();
    if xs.len() != 4 || xs[1] != cfg.complex_channels() || xs[3] != cfg.freq_bins {
        return Err(Error::Model(format!("crn: input shape {xs:?} does not match config")));
    }
    let (batch, frames) = (xs[0], xs[2]);
    let (kt, _) = cfg.glu_kernel;
    let mut skips = Vec::new();
    let mut h = x;
    for i in 0..cfg.enh_layers {
        let w = b.get(g, &format!("crn.enc{i}.w"))?;
        let bias = b.get(g, &format!("crn.enc{i}.b"))?;
        let spec = Conv2d {
            stride: (1, 2),
            pad_t: (kt - 1, 0),
            pad_f: (0, 0),
        };
        let y = stage("crn encoder", g.conv2d(h, w, Some(bias), spec))?;
        h = g.elu(y);
        skips.push(h);
    }
    let c = cfg.enh_channels;
    let fl = freqs[cfg.enh_layers];
    let p = g.permute(h, &[0, 2, 1, 3])?;
    let mut r = g.reshape(p, &[batch, frames, c * fl])?;
    for j in 0..2 {
        let wih = b.get(g, &format!("crn.lstm{j}.wih"))?;
        let whh = b.get(g, &format!("crn.lstm{j}.whh"))?;
        let bias = b.get(g, &format!("crn.lstm{j}.b"))?;
        r = stage("crn lstm", g.lstm(r, wih, whh, bias))?;
    }
    let r = g.reshape(r, &[batch, frames, c, fl])?;
    h = g.permute(r, &[0, 2, 1, 3])?;
    for j in 0..cfg.enh_layers {
        let level = cfg.enh_layers - 1 - j;
        let cat = g.concat(&[h, skips[level]], 1)?;
        let w = b.get(g, &format!("crn.dec{j}.w"))?;
        let bias = b.get(g, &format!("crn.dec{j}.b"))?;
        let ws = g.shape(w).to_vec();
        let full = (freqs[level + 1] - 1) * 2 + ws[3];
        let spec = ConvT2d {
            stride: (1, 2),
            out_pad: (0, freqs[level] - full),
        };
        let y = stage("crn decoder", g.conv_transpose2d(cat, w, Some(bias), spec))?;
        let y = g.narrow(y, 2, 0, frames)?;
        h = if j + 1 == cfg.enh_layers { y } else { g.elu(y) };
    }
    Ok(h)
}

/// Per-stage speaker vectors `[1, C, 1, 1]` from an anchor magnitude `[1, 1, Ta, F]`.
pub fn speaker_features<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, cfg: &ModelConfig, anchor: Var) -> Result<Vec<Var>> {
    let s = g.shape(anchor).to_vec();
    if s.len() != 4 || s[0] != 1 || s[1] != 1 || s[3] != cfg.freq_bins {
        return Err(Error::Model(format!("speaker: anchor shape {s:?} must be [1, 1, frames, {}]", cfg.freq_bins)));
    }
    if s[2] == 0 {
        return Err(Error::Model("speaker: empty anchor".into()));
    }
    let mut h = anchor;
    let mut out = Vec::with_capacity(cfg.blocks);
    for k in 0..cfg.blocks {
        h = conv_glu(g, b, &format!("spk{k}"), h)?;
        let per_frame = g.mean_axis(h, 3)?;
        out.push(g.mean_axis(per_frame, 2)?);
    }
    Ok(out)
}

fn norm<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, name: &str, x: Var) -> Result<Var> {
    let gamma = b.get(g, &format!("{name}.g"))?;
    let beta = b.get(g, &format!("{name}.b"))?;
    Ok(g.layer_norm(x, gamma, beta)?)
}

fn dense<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, name: &str, x: Var) -> Result<Var> {
    let w = b.get(g, &format!("{name}.w"))?;
    let bias = b.get(g, &format!("{name}.b"))?;
    Ok(g.linear(x, w, Some(bias))?)
}

/// Grouped frequency convolution over `[B, T, F, C]`, returned in that layout.
fn freq_conv<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, name: &str, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (bt, f, c) = (s[0] * s[1], s[2], s[3]);
    let w = b.get(g, &format!("{name}.w"))?;
    let bias = b.get(g, &format!("{name}.b"))?;
    let k = g.shape(w)[2];
    let p = g.permute(x, &[0, 1, 3, 2])?;
    let p = g.reshape(p, &[bt, c, f])?;
    let y = g.conv1d(p, w, Some(bias), Conv1d { pad: (k / 2, k / 2), groups: c })?;
    let y = g.silu(y);
    let y = g.reshape(y, &[s[0], s[1], c, f])?;
    Ok(g.permute(y, &[0, 1, 3, 2])?)
}

/// Per-frame cross-frequency block on `[B, C, T, F]`.
pub fn cross_band<S: Real>(g: &mut Graph<S>, b: &mut Binder<S>, prefix: &str, h: Var) -> Result<Var> {
    let s = g.shape(h).to_vec();
    if s.len() != 4 {
        return Err(Error::Model(format!("{prefix} cross-band: expected 4-D input, got {s:?}")));
    }
    let x = g.permute(h, &[0, 2, 3, 1])?;

    let n = norm(g, b, &format!("{prefix}.cb.ln1"), x)?;
    let y = freq_conv(g, b, &format!("{prefix}.cb.fconv1"), n)?;
    let x = g.add(x, y)?;

    let n = norm(g, b, &format!("{prefix}.cb.ln2"), x)?;
    let sq = dense(g, b, &format!("{prefix}.cb.squeeze"), n)?;
    let sq = g.silu(sq);
    let t = g.permute(sq, &[0, 1, 3, 2])?;
    let w = b.get(g, &format!("{prefix}.cb.flinear.w"))?;
    let bias = b.get(g, &format!("{prefix}.cb.flinear.b"))?;
    let t = stage(prefix, g.group_linear(t, w, Some(bias)))?;
    let t = g.permute(t, &[0, 1, 3, 2])?;
    let un = dense(g, b, &format!("{prefix}.cb.unsqueeze"), t)?;
    let un = g.silu(un);
    let x = g.add(x, un)?;

    let n = norm(g, b, &format!("{prefix}.cb.ln3"), x)?;
    let y = freq_conv(g, b, &format!("{prefix}.cb.fconv2"), n)?;
    let x = g.add(x, y)?;
    Ok(g.permute(x, &[0, 3, 1, 2])?)
}

/// Per-frequency temporal block on `[B, C, T, F]`.
pub fn narrow_band<S: Real>(
    g: &mut Graph<S>,
    b: &mut Binder<S>,
    cfg: &ModelConfig,
    prefix: &str,
    h: Var,
) -> Result<Var> {
    let s = g.shape(h).to_vec();
    if s.len() != 4 {
        return Err(Error::Model(format!("{prefix} narrow-band: expected 4-D input, got {s:?}")));
    }
    let (batch, c, frames, f) = (s[0], s[1], s[2], s[3]);
    let x = g.permute(h, &[0, 3, 2, 1])?;
    let x = g.reshape(x, &[batch * f, frames, c])?;

    let n = norm(g, b, &format!("{prefix}.nb.ln1"), x)?;
    let q = dense(g, b, &format!("{prefix}.nb.q"), n)?;
    let k = dense(g, b, &format!("{prefix}.nb.k"), n)?;
    let v = dense(g, b, &format!("{prefix}.nb.v"), n)?;
    let a = stage(prefix, g.attention(q, k, v, cfg.heads, cfg.causal_attention))?;
    let o = dense(g, b, &format!("{prefix}.nb.o"), a)?;
    let x = g.add(x, o)?;

    let n = norm(g, b, &format!("{prefix}.nb.ln2"), x)?;
    let u = dense(g, b, &format!("{prefix}.nb.ffn1"), n)?;
    let u = g.silu(u);
    let hf = g.shape(u)[2];
    let u = g.permute(u, &[0, 2, 1])?;
    let w = b.get(g, &format!("{prefix}.nb.tconv.w"))?;
    let bias = b.get(g, &format!("{prefix}.nb.tconv.b"))?;
    let kt = g.shape(w)[2];
    let pad = if cfg.causal_ffn { (kt - 1, 0) } else { (kt / 2, kt / 2) };
    let u = g.conv1d(u, w, Some(bias), Conv1d { pad, groups: hf })?;
    let u = g.silu(u);
    let u = g.permute(u, &[0, 2, 1])?;
    let d = dense(g, b, &format!("{prefix}.nb.ffn2"), u)?;
    let x = g.add(x, d)?;

    let x = g.reshape(x, &[batch, f, frames, c])?;
    Ok(g.permute(x, &[0, 3, 2, 1])?)
}

pub fn spatial_layer<S: Real>(
    g: &mut Graph<S>,
    b: &mut Binder<S>,
    cfg: &ModelConfig,
    prefix: &str,
    h: Var,
) -> Result<Var> {
    let h = cross_band(g, b, prefix, h)?;
    narrow_band(g, b, cfg, prefix, h)
}

/// Interleaved ConvGLU / Spatial Layer stack and the frame classifier.
/// Returns logits `[B*T, classes]`.
pub fn spatial_module<S: Real>(
    g: &mut Graph<S>,
    b: &mut Binder<S>,
    cfg: &ModelConfig,
    raw: Var,
    enhanced: Option<Var>,
    anchor_aligned: Var,
    spk: &[Var],
) -> Result<Var> {
    let rs = g.shape(raw).to_vec();
    if rs.len() != 4 || rs[1] != cfg.view_channels() || rs[3] != cfg.freq_bins {
        return Err(Error::Model(format!("spatial input: raw view shape {rs:?} does not match config")));
    }
    let (batch, frames) = (rs[0], rs[2]);
    let mut views = vec![raw];
    match (enhanced, cfg.use_enhancement) {
        (Some(e), true) => {
            if g.shape(e) != rs.as_slice() {
                return Err(Error::Model(format!(
                    "spatial input: enhanced view {:?} differs from raw {rs:?}",
                    g.shape(e)
                )));
            }
            views.push(e);
        }
        (None, false) => {}
        _ => return Err(Error::Model("spatial input: enhanced view presence disagrees with config".into())),
    }
    if g.shape(anchor_aligned) != [batch, 1, frames, cfg.freq_bins] {
        return Err(Error::Model(format!(
            "spatial input: aligned anchor {:?} should be {:?}",
            g.shape(anchor_aligned),
            [batch, 1, frames, cfg.freq_bins]
        )));
    }
    views.push(anchor_aligned);
    let mut h = g.concat(&views, 1)?;
    if cfg.use_speaker && spk.len() != cfg.blocks {
        return Err(Error::Model(format!("spatial: {} speaker vectors for {} blocks", spk.len(), cfg.blocks)));
    }
    for k in 0..cfg.blocks {
        if cfg.use_speaker {
            let s = g.shape(h).to_vec();
            let v = g.expand(spk[k], 0, batch)?;
            let v = g.expand(v, 2, s[2])?;
            let v = g.expand(v, 3, s[3])?;
            h = g.concat(&[h, v], 1)?;
        }
        h = conv_glu(g, b, &format!("glu{k}"), h)?;
        h = spatial_layer(g, b, cfg, &format!("sl{k}"), h)?;
    }
    let s = g.shape(h).to_vec();
    let p = g.permute(h, &[0, 2, 1, 3])?;
    let flat = g.reshape(p, &[batch * frames, s[1] * s[3]])?;
    dense(g, b, "cls", flat)
}

/// Magnitude of a `[B, 2M, T, F]` real/imaginary stack as `[B, M, T, F]`.
pub fn stack_magnitude<S: Real>(g: &mut Graph<S>, x: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let m = s[1] / 2;
    let r = g.reshape(x, &[s[0], m, 2, s[2], s[3]])?;
    let sq = g.mul(r, r)?;
    let mean = g.mean_axis(sq, 2)?;
    let sum = g.scale(mean, S::c(2.0));
    let mag = g.sqrt(sum, S::c(1e-8));
    Ok(g.reshape(mag, &[s[0], m, s[2], s[3]])?)
}

/// Inputs for one forward pass.
#[derive(Debug, Clone)]
pub struct ModelInput<S> {
    /// Complex mixture stack `[B, 2M, T, F]`.
    pub stack: Tensor<S>,
    /// Anchor magnitude `[1, 1, Ta, F]`.
    pub anchor: Tensor<S>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// Enhanced complex stack, same shape as the mixture stack.
    pub enhanced: Option<Var>,
    /// `[B*T, classes]`.
    pub logits: Var,
}

/// Tile the anchor magnitude `[1, 1, Ta, F]` along time to `frames`, per batch.
pub fn align_anchor<S: Real>(anchor: &Tensor<S>, batch: usize, frames: usize) -> Result<Tensor<S>> {
    let s = anchor.shape();
    if s.len() != 4 || s[2] == 0 {
        return Err(Error::Model(format!("anchor shape {s:?} must be [1, 1, frames>0, F]")));
    }
    let (ta, f) = (s[2], s[3]);
    let d = anchor.data();
    Ok(Tensor::from_fn(vec![batch, 1, frames, f], |i| {
        let t = (i / f) % frames;
        d[(t % ta) * f + i % f]
    }))
}

/// Full network: enhancement, speaker features and spatial classification.
pub fn rtsdoa_forward<S: Real>(
    g: &mut Graph<S>,
    b: &mut Binder<S>,
    cfg: &ModelConfig,
    input: &ModelInput<S>,
) -> Result<ForwardOutput> {
    let s = input.stack.shape().to_vec();
    if s.len() != 4 || s[1] != cfg.complex_channels() || s[3] != cfg.freq_bins {
        return Err(Error::Model(format!(
            "mixture stack {s:?} should be [B, {}, T, {}]",
            cfg.complex_channels(),
            cfg.freq_bins
        )));
    }
    let (batch, frames) = (s[0], s[2]);
    let x = g.input(input.stack.clone());
    let enhanced = if cfg.use_enhancement {
        Some(crn_enhance(g, b, cfg, x)?)
    } else {
        None
    };
    let anchor = g.input(input.anchor.clone());
    let spk = if cfg.use_speaker && cfg.blocks > 0 {
        speaker_features(g, b, cfg, anchor)?
    } else {
        Vec::new()
    };
    let aligned = g.input(align_anchor(&input.anchor, batch, frames)?);
    let (raw, enh) = match cfg.input_mode {
        InputMode::Complex => (x, enhanced),
        InputMode::Magnitude => {
            let raw = stack_magnitude(g, x)?;
            let enh = enhanced.map(|e| stack_magnitude(g, e)).transpose()?;
            (raw, enh)
        }
    };
    let logits = spatial_module(g, b, cfg, raw, enh, aligned, &spk)?;
    Ok(ForwardOutput { enhanced, logits })
}
