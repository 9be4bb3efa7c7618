use ndarray::{s, Array1, Array2, Axis};

use super::config::{Activation, AttentionConfig, ConvBlock, ModelConfig, PosEncoding};
use super::layers::{Builder, Conv1d, LayerNorm, Linear, LnCache, MhaCache, MultiHeadAttention};
use super::params::{Grads, ParamGroup, ParamId, Params};

const RMS_FLOOR: f64 = 1e-12;

/// Scales the whole multichannel waveform to unit RMS. Silent input stays
/// silent.
pub(crate) fn rms_normalize(x: &Array2<f64>) -> Array2<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    x / (ms + RMS_FLOOR).sqrt()
}

struct ConvStack {
    convs: Vec<Conv1d>,
    act: Activation,
}

struct ConvTape {
    /// Per layer: input length, unfolded input, activated output.
    layers: Vec<(usize, Array2<f64>, Array2<f64>)>,
}

impl ConvStack {
    fn new(bld: &mut Builder, c_in: usize, blocks: &[ConvBlock], act: Activation) -> Self {
        let mut c = c_in;
        let convs = blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let conv = Conv1d::new(bld, &format!("conv{i}"), c, b.channels, b.kernel, b.stride, act.gain());
                c = b.channels;
                conv
            })
            .collect();
        ConvStack { convs, act }
    }

    fn forward(&self, p: &Params, x: Array2<f64>) -> (Array2<f64>, ConvTape) {
        let mut h = x;
        let mut layers = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let in_len = h.ncols();
            let (mut y, cols) = conv.forward(p, &h);
            self.act.apply(&mut y);
            layers.push((in_len, cols, y.clone()));
            h = y;
        }
        (h, ConvTape { layers })
    }

    fn backward(&self, p: &Params, tape: &ConvTape, dy: Array2<f64>, g: &mut Grads) {
        let mut d = dy;
        for (i, (conv, (in_len, cols, y))) in self.convs.iter().zip(&tape.layers).enumerate().rev() {
            self.act.backward(y, &mut d);
            match conv.backward(p, cols, *in_len, &d, g, i > 0) {
                Some(dx) => d = dx,
                None => break,
            }
        }
    }
}

pub(crate) struct CnnStream {
    stack: ConvStack,
    rms: bool,
}

pub(crate) struct CnnTape {
    conv: ConvTape,
    out_len: usize,
}

impl CnnStream {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        CnnStream {
            stack: bld.scoped("cnn", |b| ConvStack::new(b, cfg.n_channels, &cfg.cnn.blocks, cfg.cnn.activation)),
            rms: cfg.rms_normalize,
        }
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array1<f64>, CnnTape) {
        let x = if self.rms { rms_normalize(x) } else { x.clone() };
        let (h, conv) = self.stack.forward(p, x);
        let out_len = h.ncols();
        let emb = h.mean_axis(Axis(1)).expect("non-empty conv output");
        (emb, CnnTape { conv, out_len })
    }

    pub fn backward(&self, p: &Params, tape: &CnnTape, demb: &Array1<f64>, g: &mut Grads) {
        let t = tape.out_len;
        let dy = Array2::from_shape_fn((demb.len(), t), |(c, _)| demb[c] / t as f64);
        self.stack.backward(p, &tape.conv, dy, g);
    }
}

/// Sinusoidal position code for token `pos` of width `dim`.
pub fn positional_encoding(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 / rate;
            if i % 2 == 0 {
                a.sin()
            } else {
                a.cos()
            }
        })
        .collect()
}

struct TransformerLayer {
    ln1: LayerNorm,
    mha: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
}

struct LayerTape {
    ln1: LnCache,
    mha: MhaCache,
    ln2: LnCache,
    b: Array2<f64>,
    f1: Array2<f64>,
}

impl TransformerLayer {
    fn new(bld: &mut Builder, name: &str, dim: usize, heads: usize, ff: usize) -> Self {
        bld.scoped(name, |b| TransformerLayer {
            ln1: LayerNorm::new(b, "ln1", dim),
            mha: MultiHeadAttention::new(b, "attn", dim, heads),
            ln2: LayerNorm::new(b, "ln2", dim),
            ff1: Linear::new(b, "ff1", dim, ff, Activation::Relu.gain()),
            ff2: Linear::new(b, "ff2", ff, dim, 1.0),
        })
    }

    fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array2<f64>, LayerTape) {
        let (a, ln1) = self.ln1.forward(p, x);
        let (m, mha) = self.mha.forward(p, &a);
        let h = x + &m;
        let (b, ln2) = self.ln2.forward(p, &h);
        let mut f1 = self.ff1.forward(p, &b);
        Activation::Relu.apply(&mut f1);
        let y = &h + &self.ff2.forward(p, &f1);
        (y, LayerTape { ln1, mha, ln2, b, f1 })
    }

    fn backward(&self, p: &Params, t: &LayerTape, dy: &Array2<f64>, g: &mut Grads) -> Array2<f64> {
        let mut df1 = self.ff2.backward(p, &t.f1, dy, g, true).unwrap();
        Activation::Relu.backward(&t.f1, &mut df1);
        let db = self.ff1.backward(p, &t.b, &df1, g, true).unwrap();
        let dh = dy + &self.ln2.backward(p, &t.ln2, &db, g);
        let da = self.mha.backward(p, &t.mha, &dh, g);
        &dh + &self.ln1.backward(p, &t.ln1, &da, g)
    }
}

/// Per-channel token sequences through a pre-norm transformer, mean pooled.
pub(crate) struct AttentionStream {
    cfg: AttentionConfig,
    n_channels: usize,
    tokens_per_channel: usize,
    rms: bool,
    proj: Linear,
    layers: Vec<TransformerLayer>,
    ln_f: LayerNorm,
    /// Position codes for all tokens, `[n_tokens, code width]`.
    pe: Option<Array2<f64>>,
}

pub(crate) struct AttentionTape {
    tokens: Array2<f64>,
    layers: Vec<LayerTape>,
    ln_f: LnCache,
    n_tokens: usize,
}

impl AttentionStream {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        let a = cfg.attention;
        let dim = a.model_width();
        let tpc = a.tokens_per_channel(cfg.input_samples);
        let n_tokens = tpc * cfg.n_channels;
        // Positions are global token indices, so tokens of different
        // channels carry different codes.
        let pe_width = match a.pos_encoding {
            PosEncoding::Concat => Some(a.pos_enc_len),
            PosEncoding::Sum => Some(a.width),
            PosEncoding::None => None,
        };
        let pe = pe_width.map(|w| {
            let mut m = Array2::zeros((n_tokens, w));
            for (t, mut row) in m.rows_mut().into_iter().enumerate() {
                row.assign(&Array1::from(positional_encoding(t, w)));
            }
            m
        });
        bld.scoped("attention", |b| AttentionStream {
            cfg: a,
            n_channels: cfg.n_channels,
            tokens_per_channel: tpc,
            rms: cfg.rms_normalize,
            proj: Linear::new(b, "proj", a.token_len, a.width, 1.0),
            layers: (0..a.depth)
                .map(|i| TransformerLayer::new(b, &format!("layer{i}"), dim, a.heads, a.ff_mult * dim))
                .collect(),
            ln_f: LayerNorm::new(b, "ln_f", dim),
            pe,
        })
    }

    fn tokenize(&self, x: &Array2<f64>) -> Array2<f64> {
        let l = self.cfg.token_len;
        let mut tokens = Array2::zeros((self.n_channels * self.tokens_per_channel, l));
        for (c, ch) in x.rows().into_iter().enumerate() {
            for (i, v) in ch.iter().enumerate() {
                tokens[[c * self.tokens_per_channel + i / l, i % l]] = *v;
            }
        }
        tokens
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array1<f64>, AttentionTape) {
        let x = if self.rms { rms_normalize(x) } else { x.clone() };
        let tokens = self.tokenize(&x);
        let proj = self.proj.forward(p, &tokens);
        let mut h = match (&self.pe, self.cfg.pos_encoding) {
            (Some(pe), PosEncoding::Concat) => ndarray::concatenate(Axis(1), &[proj.view(), pe.view()]).unwrap(),
            (Some(pe), PosEncoding::Sum) => proj + pe,
            _ => proj,
        };
        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, t) = layer.forward(p, &h);
            layers.push(t);
            h = y;
        }
        let (z, ln_f) = self.ln_f.forward(p, &h);
        let n_tokens = z.nrows();
        let emb = z.mean_axis(Axis(0)).unwrap();
        (emb, AttentionTape { tokens, layers, ln_f, n_tokens })
    }

    pub fn backward(&self, p: &Params, t: &AttentionTape, demb: &Array1<f64>, g: &mut Grads) {
        let n = t.n_tokens as f64;
        let dz = Array2::from_shape_fn((t.n_tokens, demb.len()), |(_, j)| demb[j] / n);
        let mut dh = self.ln_f.backward(p, &t.ln_f, &dz, g);
        for (layer, lt) in self.layers.iter().zip(&t.layers).rev() {
            dh = layer.backward(p, lt, &dh, g);
        }
        let dproj = dh.slice(s![.., ..self.cfg.width]).to_owned();
        self.proj.backward(p, &t.tokens, &dproj, g, false);
    }
}

/// Convolutions over the stacked feature matrix, flattened.
pub(crate) struct FeatureStream {
    stack: ConvStack,
    norm: Option<(ParamId, ParamId)>,
}

pub(crate) struct FeatureTape {
    conv: ConvTape,
    shape: (usize, usize),
}

impl FeatureStream {
    pub fn new(bld: &mut Builder, cfg: &ModelConfig) -> Self {
        let rows = cfg.feature_rows();
        bld.scoped("feature", |b| {
            let stack = ConvStack::new(b, rows, &cfg.feature.blocks, cfg.feature.activation);
            let norm = cfg.feature.normalize.then(|| {
                let group = std::mem::replace(&mut b.group, ParamGroup::Buffer);
                let ids = (b.filled("norm_mean", vec![rows], 0.0), b.filled("norm_std", vec![rows], 1.0));
                b.group = group;
                ids
            });
            FeatureStream { stack, norm }
        })
    }

    pub fn normalizer(&self) -> Option<(ParamId, ParamId)> {
        self.norm
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array1<f64>, FeatureTape) {
        let mut x = x.clone();
        if let Some((mean, std)) = self.norm {
            for ((mut row, m), s) in x.rows_mut().into_iter().zip(p.get(mean)).zip(p.get(std)) {
                row.mapv_inplace(|v| (v - m) / s);
            }
        }
        let (h, conv) = self.stack.forward(p, x);
        let shape = h.dim();
        let emb = Array1::from(h.into_raw_vec_and_offset().0);
        (emb, FeatureTape { conv, shape })
    }

    pub fn backward(&self, p: &Params, t: &FeatureTape, demb: &Array1<f64>, g: &mut Grads) {
        let dy = Array2::from_shape_vec(t.shape, demb.to_vec()).unwrap();
        self.stack.backward(p, &t.conv, dy, g);
    }
}

/// Two-layer MLP head.
pub(crate) struct Head {
    l1: Linear,
    l2: Linear,
}

pub(crate) struct HeadTape {
    h: Array2<f64>,
}

impl Head {
    pub fn new(bld: &mut Builder, name: &str, n_in: usize, hidden: usize, n_out: usize) -> Self {
        bld.scoped(name, |b| Head {
            l1: Linear::new(b, "fc1", n_in, hidden, Activation::Relu.gain()),
            l2: Linear::new(b, "fc2", hidden, n_out, 1.0),
        })
    }

    pub fn out_bias(&self) -> ParamId {
        self.l2.b
    }

    pub fn forward(&self, p: &Params, e: &Array2<f64>) -> (Array1<f64>, HeadTape) {
        let mut h = self.l1.forward(p, e);
        Activation::Relu.apply(&mut h);
        let y = self.l2.forward(p, &h);
        (y.row(0).to_owned(), HeadTape { h })
    }

    /// Returns the gradient with respect to the shared embedding.
    pub fn backward(&self, p: &Params, e: &Array2<f64>, t: &HeadTape, dy: &[f64], g: &mut Grads) -> Array2<f64> {
        let dy = Array2::from_shape_vec((1, dy.len()), dy.to_vec()).unwrap();
        let mut dh = self.l2.backward(p, &t.h, &dy, g, true).unwrap();
        Activation::Relu.backward(&t.h, &mut dh);
        self.l1.backward(p, e, &dh, g, true).unwrap()
    }
}
