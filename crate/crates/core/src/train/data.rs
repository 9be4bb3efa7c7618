use ndarray::Array2;

use crate::autolabel::{LabeledWindow, WindowAudio};
use crate::dsp::{FeatureExtractor, FeatureParams};
use crate::error::{Error, Result};
use crate::model::{Model, ModelInput};

/// Supervision for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub is_siren: bool,
    /// Bearing in radians; ignored for negatives.
    pub theta: f64,
    /// Meters; ignored for negatives.
    pub distance: f64,
}

impl Target {
    pub const NEGATIVE: Target = Target {
        is_siren: false,
        theta: 0.0,
        distance: 0.0,
    };

    pub fn positive(theta: f64, distance: f64) -> Self {
        Target {
            is_siren: true,
            theta,
            distance,
        }
    }
}

impl From<&LabeledWindow> for Target {
    fn from(w: &LabeledWindow) -> Self {
        match w.source {
            Some(s) => Target::positive(s.theta, s.distance),
            None => Target::NEGATIVE,
        }
    }
}

/// Anything that can hand out model inputs with targets by index.
pub trait InputSource {
    fn len(&self) -> usize;
    fn input(&self, i: usize) -> Result<ModelInput>;
    fn target(&self, i: usize) -> Target;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl InputSource for [(ModelInput, Target)] {
    fn len(&self) -> usize {
        <[_]>::len(self)
    }

    fn input(&self, i: usize) -> Result<ModelInput> {
        Ok(self[i].0.clone())
    }

    fn target(&self, i: usize) -> Target {
        self[i].1
    }
}

impl InputSource for Vec<(ModelInput, Target)> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn input(&self, i: usize) -> Result<ModelInput> {
        self.as_slice().input(i)
    }

    fn target(&self, i: usize) -> Target {
        self[i].1
    }
}

/// A labeled window with its spectral features cached. The band-passed
/// waveform is recomputed on demand, which keeps memory proportional to
/// the feature size rather than the audio size.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub audio: WindowAudio,
    /// Stacked features, stored in single precision.
    pub features: Array2<f32>,
    pub target: Target,
    pub session_tag: String,
    pub t_end: f64,
}

/// Windows ready for training or evaluation.
#[derive(Debug)]
pub struct WindowSet {
    fx: FeatureExtractor,
    samples: Vec<PreparedSample>,
}

impl WindowSet {
    pub fn prepare(windows: &[LabeledWindow], params: FeatureParams) -> Result<Self> {
        let fx = FeatureExtractor::new(params)?;
        let samples = windows
            .iter()
            .map(|w| {
                let (filtered, feats) = fx.featurize_window(w)?;
                drop(filtered);
                Ok(PreparedSample {
                    audio: w.audio.clone(),
                    features: feats.stacked().mapv(|v| v as f32),
                    target: Target::from(w),
                    session_tag: w.session_tag.clone(),
                    t_end: w.t_end,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(WindowSet { fx, samples })
    }

    pub fn samples(&self) -> &[PreparedSample] {
        &self.samples
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.fx
    }
}

impl InputSource for WindowSet {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn input(&self, i: usize) -> Result<ModelInput> {
        let s = &self.samples[i];
        let filtered = self.fx.filter_audio(&s.audio)?;
        let n = filtered.first().map_or(0, Vec::len);
        Ok(ModelInput {
            waveform: Array2::from_shape_fn((filtered.len(), n), |(c, j)| filtered[c][j]),
            features: s.features.mapv(f64::from),
        })
    }

    fn target(&self, i: usize) -> Target {
        self.samples[i].target
    }
}

/// Fits the frozen feature normalizer to the training inputs and starts
/// the distance head at the mean positive distance.
pub fn init_from_data(model: &mut Model, train: &dyn InputSource) -> Result<()> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let rows = model.config().feature_rows();
    let (mut sum, mut sq, mut count) = (vec![0.0; rows], vec![0.0; rows], 0usize);
    let (mut dsum, mut npos) = (0.0, 0usize);
    for i in 0..train.len() {
        let x = train.input(i)?;
        if x.features.nrows() != rows {
            return Err(Error::invalid("feature rows do not match model config"));
        }
        for (r, row) in x.features.rows().into_iter().enumerate() {
            for v in row {
                sum[r] += v;
                sq[r] += v * v;
            }
        }
        count += x.features.ncols();
        let t = train.target(i);
        if t.is_siren {
            dsum += t.distance;
            npos += 1;
        }
    }
    let n = count as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std: Vec<f64> = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let s = (q / n - m * m).max(0.0).sqrt();
            // constant rows (e.g. bands above the signal) pass through centered
            if s > 1e-8 {
                s
            } else {
                1.0
            }
        })
        .collect();
    model.set_feature_normalizer(&mean, &std)?;
    if npos > 0 {
        model.set_distance_bias(dsum / npos as f64);
    }
    Ok(())
}
