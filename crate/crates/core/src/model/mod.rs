//! Dual-stream multi-task network with hand-written reverse mode.
//!
//! The waveform stream (CNN or attention) and the spectral-feature stream
//! each produce an embedding; their concatenation feeds three independent
//! MLP heads for is-siren, direction (sin, cos) and distance.

mod checkpoint;
mod config;
mod layers;
mod params;
mod streams;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{Activation, AttentionConfig, CnnConfig, ConvBlock, FeatureStreamConfig, ModelConfig, PosEncoding, WaveformStream};
pub use params::{Grads, ParamGroup, ParamId, Params, Tensor};
pub use streams::positional_encoding;

use crate::dsp::SpectralFeatures;
use crate::error::{Error, Result};
use layers::Builder;
use streams::{AttentionStream, AttentionTape, CnnStream, CnnTape, FeatureStream, FeatureTape, Head, HeadTape};

/// Pairs with a norm below this are treated as carrying no direction.
pub const DEGENERATE_NORM: f64 = 1e-8;

/// Scales `(sin, cos)` onto the unit circle. Returns `(0, 1)` and `true`
/// when the pair is too short to carry a direction.
pub fn normalize_angle_pair(sin_raw: f64, cos_raw: f64) -> (f64, f64, bool) {
    let r = sin_raw.hypot(cos_raw);
    if r < DEGENERATE_NORM || !r.is_finite() {
        (0.0, 1.0, true)
    } else {
        (sin_raw / r, cos_raw / r, false)
    }
}

/// Bearing in `(-pi, pi]` from a unit `(sin, cos)` pair.
pub fn angle_from_pair(sin_n: f64, cos_n: f64) -> f64 {
    let t = sin_n.atan2(cos_n);
    if t == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        t
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Network input for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Band-passed waveform, `[channels, samples]`.
    pub waveform: Array2<f64>,
    /// Stacked MFCC + log-mel, `[channels * feature_dim, frames]`.
    pub features: Array2<f64>,
}

impl ModelInput {
    pub fn new(filtered: &[Vec<f64>], features: &SpectralFeatures) -> Self {
        let n = filtered.first().map_or(0, Vec::len);
        let waveform = Array2::from_shape_fn((filtered.len(), n), |(c, i)| filtered[c][i]);
        ModelInput {
            waveform,
            features: features.stacked(),
        }
    }
}

/// Head outputs before any post-processing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawOutput {
    pub logit: f64,
    pub sin_raw: f64,
    pub cos_raw: f64,
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutput {
    pub p_siren: f64,
    pub logit: f64,
    pub sin_raw: f64,
    pub cos_raw: f64,
    /// Unconstrained distance head output, meters.
    pub distance: f64,
    pub sin_n: f64,
    pub cos_n: f64,
    pub theta_hat: f64,
    /// The direction pair was too short to normalize.
    pub degenerate: bool,
}

impl From<RawOutput> for ModelOutput {
    fn from(r: RawOutput) -> Self {
        let (sin_n, cos_n, degenerate) = normalize_angle_pair(r.sin_raw, r.cos_raw);
        ModelOutput {
            p_siren: sigmoid(r.logit),
            logit: r.logit,
            sin_raw: r.sin_raw,
            cos_raw: r.cos_raw,
            distance: r.distance,
            sin_n,
            cos_n,
            theta_hat: angle_from_pair(sin_n, cos_n),
            degenerate,
        }
    }
}

/// Loss gradient with respect to the raw head outputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OutputGrad {
    pub logit: f64,
    pub sin: f64,
    pub cos: f64,
    pub distance: f64,
}

enum WaveNet {
    Cnn(CnnStream),
    Attention(AttentionStream),
}

enum WaveTape {
    Cnn(CnnTape),
    Attention(AttentionTape),
}

/// Activations kept for the head backward pass.
pub struct HeadsTape {
    e: Array2<f64>,
    siren: HeadTape,
    angle: HeadTape,
    distance: HeadTape,
}

/// Everything recorded by a training forward pass.
pub struct Tape {
    wave: WaveTape,
    feature: FeatureTape,
    heads: HeadsTape,
}

pub struct Model {
    cfg: ModelConfig,
    params: Params,
    wave: WaveNet,
    feature: FeatureStream,
    siren: Head,
    angle: Head,
    distance: Head,
    wave_len: usize,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("cfg", &self.cfg)
            .field("n_params", &self.params.n_scalars())
            .finish()
    }
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::from_params(self.cfg.clone(), self.params.clone()).expect("layout already validated")
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.cfg == other.cfg && self.params == other.params
    }
}

impl Model {
    /// Builds a freshly initialized model; weights are drawn from the
    /// config seed, biases start at zero.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut params = Params::default();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut bld = Builder {
            params: &mut params,
            rng: &mut rng,
            group: ParamGroup::Waveform,
            prefix: String::new(),
        };
        let wave = match cfg.waveform_stream {
            WaveformStream::Cnn => WaveNet::Cnn(CnnStream::new(&mut bld, &cfg)),
            WaveformStream::Attention => WaveNet::Attention(AttentionStream::new(&mut bld, &cfg)),
        };
        bld.group = ParamGroup::Feature;
        let feature = FeatureStream::new(&mut bld, &cfg);
        let (we, fe) = (cfg.waveform_embedding_len(), cfg.feature_embedding_len());
        let h = cfg.head_hidden;
        bld.group = ParamGroup::SirenHead;
        let siren = Head::new(&mut bld, "head_siren", we + fe, h, 1);
        bld.group = ParamGroup::AngleHead;
        let angle = Head::new(&mut bld, "head_angle", we + fe, h, 2);
        bld.group = ParamGroup::DistanceHead;
        let distance = Head::new(&mut bld, "head_distance", we + fe, h, 1);
        Ok(Model {
            cfg,
            params,
            wave,
            feature,
            siren,
            angle,
            distance,
            wave_len: we,
        })
    }

    /// Rebuilds a model around existing parameters, checking the layout.
    pub fn from_params(cfg: ModelConfig, params: Params) -> Result<Self> {
        let mut m = Model::new(cfg)?;
        if !m.params.same_layout(&params) {
            return Err(Error::invalid("parameter layout does not match model config"));
        }
        if !params.is_finite() {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Installs per-row feature statistics used to standardize the
    /// spectral input. No-op when the config disables normalization.
    pub fn set_feature_normalizer(&mut self, mean: &[f64], std: &[f64]) -> Result<()> {
        let Some((m, s)) = self.feature.normalizer() else {
            return Ok(());
        };
        let rows = self.cfg.feature_rows();
        if mean.len() != rows || std.len() != rows {
            return Err(Error::invalid(format!("normalizer needs {rows} rows")));
        }
        if std.iter().any(|v| !(*v > 0.0 && v.is_finite())) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("normalizer statistics must be finite with positive std"));
        }
        self.params.get_mut(m).copy_from_slice(mean);
        self.params.get_mut(s).copy_from_slice(std);
        Ok(())
    }

    /// Sets the output bias of the distance head, e.g. to the mean
    /// training distance.
    pub fn set_distance_bias(&mut self, d: f64) {
        self.params.get_mut(self.distance.out_bias())[0] = d;
    }

    fn check_waveform(&self, w: &Array2<f64>) -> Result<()> {
        let want = (self.cfg.n_channels, self.cfg.input_samples);
        if w.dim() != want {
            return Err(Error::invalid(format!("waveform shape {:?}, expected {want:?}", w.dim())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("waveform contains non-finite samples"));
        }
        Ok(())
    }

    fn check_features(&self, f: &Array2<f64>) -> Result<()> {
        let want = (self.cfg.feature_rows(), self.cfg.n_frames);
        if f.dim() != want {
            return Err(Error::invalid(format!("feature shape {:?}, expected {want:?}", f.dim())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features contain non-finite values"));
        }
        Ok(())
    }

    fn wave_forward(&self, w: &Array2<f64>) -> (Array1<f64>, WaveTape) {
        match &self.wave {
            WaveNet::Cnn(s) => {
                let (e, t) = s.forward(&self.params, w);
                (e, WaveTape::Cnn(t))
            }
            WaveNet::Attention(s) => {
                let (e, t) = s.forward(&self.params, w);
                (e, WaveTape::Attention(t))
            }
        }
    }

    /// Embedding of the waveform stream.
    pub fn waveform_embedding(&self, waveform: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_waveform(waveform)?;
        Ok(self.wave_forward(waveform).0)
    }

    /// Embedding of the spectral-feature stream.
    pub fn feature_embedding(&self, features: &Array2<f64>) -> Result<Array1<f64>> {
        self.check_features(features)?;
        Ok(self.feature.forward(&self.params, features).0)
    }

    /// Concatenated embedding fed to the heads.
    pub fn embed(&self, x: &ModelInput) -> Result<Array1<f64>> {
        let ew = self.waveform_embedding(&x.waveform)?;
        let ef = self.feature_embedding(&x.features)?;
        Ok(concatenate(Axis(0), &[ew.view(), ef.view()]).unwrap())
    }

    /// Runs the three heads on a concatenated embedding.
    pub fn heads_forward(&self, e: &Array1<f64>) -> (RawOutput, HeadsTape) {
        let e = e.view().insert_axis(Axis(0)).to_owned();
        let p = &self.params;
        let (ys, siren) = self.siren.forward(p, &e);
        let (ya, angle) = self.angle.forward(p, &e);
        let (yd, distance) = self.distance.forward(p, &e);
        let raw = RawOutput {
            logit: ys[0],
            sin_raw: ya[0],
            cos_raw: ya[1],
            distance: yd[0],
        };
        (raw, HeadsTape { e, siren, angle, distance })
    }

    /// Head outputs from separate stream embeddings.
    pub fn heads(&self, ew: &Array1<f64>, ef: &Array1<f64>) -> Result<ModelOutput> {
        if ew.len() != self.wave_len || ef.len() != self.cfg.feature_embedding_len() {
            return Err(Error::invalid("embedding length mismatch"));
        }
        let e = concatenate(Axis(0), &[ew.view(), ef.view()]).unwrap();
        Ok(self.heads_forward(&e).0.into())
    }

    pub fn forward(&self, x: &ModelInput) -> Result<ModelOutput> {
        Ok(self.forward_raw(x)?.into())
    }

    pub fn forward_raw(&self, x: &ModelInput) -> Result<RawOutput> {
        Ok(self.heads_forward(&self.embed(x)?).0)
    }

    /// Forward pass that records what [`Model::backward`] needs.
    pub fn forward_tape(&self, x: &ModelInput) -> Result<(RawOutput, Tape)> {
        self.check_waveform(&x.waveform)?;
        self.check_features(&x.features)?;
        let (ew, wave) = self.wave_forward(&x.waveform);
        let (ef, feature) = self.feature.forward(&self.params, &x.features);
        let e = concatenate(Axis(0), &[ew.view(), ef.view()]).unwrap();
        let (raw, heads) = self.heads_forward(&e);
        Ok((raw, Tape { wave, feature, heads }))
    }

    /// Accumulates head gradients and returns the embedding gradient.
    pub fn heads_backward(&self, t: &HeadsTape, d: &OutputGrad, g: &mut Grads) -> Array1<f64> {
        let p = &self.params;
        let mut de = self.siren.backward(p, &t.e, &t.siren, &[d.logit], g);
        de += &self.angle.backward(p, &t.e, &t.angle, &[d.sin, d.cos], g);
        de += &self.distance.backward(p, &t.e, &t.distance, &[d.distance], g);
        de.row(0).to_owned()
    }

    /// Accumulates exact gradients of a loss with upstream gradient `d`
    /// into `g`. Buffers receive nothing.
    pub fn backward(&self, t: &Tape, d: &OutputGrad, g: &mut Grads) {
        let de = self.heads_backward(&t.heads, d, g);
        let dw = de.slice(s![..self.wave_len]).to_owned();
        let df = de.slice(s![self.wave_len..]).to_owned();
        match (&self.wave, &t.wave) {
            (WaveNet::Cnn(s), WaveTape::Cnn(wt)) => s.backward(&self.params, wt, &dw, g),
            (WaveNet::Attention(s), WaveTape::Attention(wt)) => s.backward(&self.params, wt, &dw, g),
            _ => unreachable!("tape from a different stream"),
        }
        self.feature.backward(&self.params, &t.feature, &df, g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn random_input(cfg: &ModelConfig, seed: u64) -> ModelInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ModelInput {
            waveform: Array2::from_shape_fn((cfg.n_channels, cfg.input_samples), |_| rng.gen_range(-1.0..1.0)),
            features: Array2::from_shape_fn((cfg.feature_rows(), cfg.n_frames), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_angle_pair(0.6, 0.8), (0.6, 0.8, false));
        let (s, c, d) = normalize_angle_pair(3.0, 4.0);
        assert!((s - 0.6).abs() < 1e-15 && (c - 0.8).abs() < 1e-15 && !d);
        assert_eq!(normalize_angle_pair(0.0, 0.0), (0.0, 1.0, true));
    }

    #[test]
    fn angle_examples() {
        assert_eq!(angle_from_pair(0.0, 1.0), 0.0);
        assert!((angle_from_pair(1.0, 0.0) - PI / 2.0).abs() < 1e-15);
        let h = 2f64.sqrt() / 2.0;
        assert!((angle_from_pair(-h, -h) + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(angle_from_pair(-0.0, -1.0), PI);
    }

    #[test]
    fn angle_round_trip_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let th = PI - rng.gen_range(0.0..2.0 * PI);
            assert!((angle_from_pair(th.sin(), th.cos()) - th).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in -1e3f64..1e3, c in -1e3f64..1e3) {
            let (s1, c1, _) = normalize_angle_pair(s, c);
            let (s2, c2, _) = normalize_angle_pair(s1, c1);
            prop_assert!((s1 - s2).abs() < 1e-15 && (c1 - c2).abs() < 1e-15);
            prop_assert!((s1 * s1 + c1 * c1 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_embedding() {
        let model = Model::new(ModelConfig::default()).unwrap();
        let x = Array2::zeros((8, 24000));
        let e = model.waveform_embedding(&x).unwrap();
        assert_eq!(e.len(), 64);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_deterministic_and_rejects_shapes() {
        let cfg = ModelConfig::tiny(WaveformStream::Cnn);
        let (a, b) = (Model::new(cfg.clone()).unwrap(), Model::new(cfg.clone()).unwrap());
        let x = random_input(&cfg, 1);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let mut bad = x.clone();
        bad.waveform = Array2::zeros((3, 24));
        assert!(a.forward(&bad).unwrap_err().is_validation());
        let mut bad = x;
        bad.features[[0, 0]] = f64::NAN;
        assert!(a.forward(&bad).is_err());
    }

    #[test]
    fn single_linear_conv_is_homogeneous() {
        let cfg = ModelConfig {
            rms_normalize: false,
            cnn: CnnConfig {
                blocks: vec![ConvBlock::new(4, 9, 4)],
                activation: Activation::Identity,
            },
            ..ModelConfig::tiny(WaveformStream::Cnn)
        };
        let cfg = ModelConfig { input_samples: 64, ..cfg };
        let model = Model::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 5).waveform;
        let e1 = model.waveform_embedding(&x).unwrap();
        let e2 = model.waveform_embedding(&(&x * 2.0)).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn attention_token_layout() {
        let cfg = ModelConfig {
            waveform_stream: WaveformStream::Attention,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.attention.tokens_per_channel(24000), 24);
        assert_eq!(cfg.waveform_embedding_len(), 64 + 100);
        let mut small = ModelConfig::tiny(WaveformStream::Attention);
        small.attention.pos_encoding = PosEncoding::Concat;
        let m = Model::new(small.clone()).unwrap();
        let e = m.waveform_embedding(&random_input(&small, 2).waveform).unwrap();
        assert_eq!(e.len(), small.attention.width + small.attention.pos_enc_len);
    }

    #[test]
    fn attention_without_positions_is_permutation_invariant() {
        let mut cfg = ModelConfig::tiny(WaveformStream::Attention);
        cfg.attention.pos_encoding = PosEncoding::None;
        let model = Model::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 9).waveform;
        // swap tokens 0 and 2 of channel 1 (token_len 8)
        let mut y = x.clone();
        for i in 0..8 {
            y[[1, i]] = x[[1, 16 + i]];
            y[[1, 16 + i]] = x[[1, i]];
        }
        let (a, b) = (model.waveform_embedding(&x).unwrap(), model.waveform_embedding(&y).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
        cfg.attention.pos_encoding = PosEncoding::Concat;
        let model = Model::new(cfg).unwrap();
        assert_ne!(model.waveform_embedding(&x).unwrap(), model.waveform_embedding(&y).unwrap());
    }

    #[test]
    fn feature_stream_is_a_function_of_features() {
        let cfg = ModelConfig::default();
        let model = Model::new(cfg.clone()).unwrap();
        let floor = (1e-10f64).ln();
        let silent = Array2::from_elem((cfg.feature_rows(), cfg.n_frames), floor);
        assert_eq!(model.feature_embedding(&silent).unwrap(), model.feature_embedding(&silent.clone()).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = Array2::from_shape_fn(silent.dim(), |_| rng.gen_range(-5.0..5.0));
        // swap the MFCC and log-mel blocks of channel 0
        let mut g = f.clone();
        for t in 0..cfg.n_frames {
            for j in 0..13 {
                g[[j, t]] = f[[13 + j, t]];
                g[[13 + j, t]] = f[[j, t]];
            }
        }
        assert_ne!(model.feature_embedding(&f).unwrap(), model.feature_embedding(&g).unwrap());
    }

    #[test]
    fn identity_first_layer_passes_single_frame() {
        let cfg = ModelConfig {
            n_frames: 1,
            feature: FeatureStreamConfig {
                blocks: vec![ConvBlock::new(6, 1, 1)],
                activation: Activation::Identity,
                normalize: false,
            },
            ..ModelConfig::tiny(WaveformStream::Cnn)
        };
        let mut model = Model::new(cfg.clone()).unwrap();
        let w = model.params_mut().find_mut("feature.conv0.weight").unwrap();
        w.data.iter_mut().enumerate().for_each(|(i, v)| *v = if i / 6 == i % 6 { 1.0 } else { 0.0 });
        let f = random_input(&cfg, 8).features;
        let e = model.feature_embedding(&f).unwrap();
        assert_eq!(e.to_vec(), f.column(0).to_vec());
    }

    #[test]
    fn heads_share_no_parameters() {
        let cfg = ModelConfig::tiny(WaveformStream::Cnn);
        let mut model = Model::new(cfg.clone()).unwrap();
        let x = random_input(&cfg, 6);
        let before = model.forward(&x).unwrap();
        for t in model.params_mut().tensors_mut() {
            if t.group == ParamGroup::DistanceHead {
                t.data.iter_mut().for_each(|v| *v += 0.37);
            }
        }
        let after = model.forward(&x).unwrap();
        assert_eq!(before.p_siren, after.p_siren);
        assert_eq!((before.sin_raw, before.cos_raw), (after.sin_raw, after.cos_raw));
        assert_ne!(before.distance, after.distance);
    }

    #[test]
    fn zero_logit_is_even_odds() {
        let raw = RawOutput {
            logit: 0.0,
            sin_raw: 0.0,
            cos_raw: 0.0,
            distance: 1.0,
        };
        let out = ModelOutput::from(raw);
        assert_eq!(out.p_siren, 0.5);
        assert!(out.degenerate);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(-800.0) >= 0.0);
    }

    #[test]
    fn embedding_length_independent_of_active_channel() {
        let cfg = ModelConfig::tiny(WaveformStream::Cnn);
        let model = Model::new(cfg.clone()).unwrap();
        for ch in 0..cfg.n_channels {
            let mut x = Array2::zeros((cfg.n_channels, cfg.input_samples));
            x.row_mut(ch).fill(0.5);
            assert_eq!(model.waveform_embedding(&x).unwrap().len(), cfg.waveform_embedding_len());
        }
    }

    #[test]
    fn layout_mismatch_rejected() {
        let a = Model::new(ModelConfig::tiny(WaveformStream::Cnn)).unwrap();
        assert!(Model::from_params(ModelConfig::tiny(WaveformStream::Attention), a.params().clone()).is_err());
        assert_eq!(Model::from_params(a.config().clone(), a.params().clone()).unwrap(), a);
    }
}
