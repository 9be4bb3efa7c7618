use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Which part of the network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Waveform,
    Feature,
    SirenHead,
    AngleHead,
    DistanceHead,
    /// Frozen statistics; never touched by the optimizer.
    Buffer,
}

impl ParamGroup {
    pub fn is_trainable(self) -> bool {
        self != ParamGroup::Buffer
    }

    pub fn is_head(self) -> bool {
        matches!(self, ParamGroup::SirenHead | ParamGroup::AngleHead | ParamGroup::DistanceHead)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ParamGroup::Waveform => 0,
            ParamGroup::Feature => 1,
            ParamGroup::SirenHead => 2,
            ParamGroup::AngleHead => 3,
            ParamGroup::DistanceHead => 4,
            ParamGroup::Buffer => 5,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => ParamGroup::Waveform,
            1 => ParamGroup::Feature,
            2 => ParamGroup::SirenHead,
            3 => ParamGroup::AngleHead,
            4 => ParamGroup::DistanceHead,
            5 => ParamGroup::Buffer,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Ordered named tensors. The order is fixed by the model config, so two
/// models built from the same config have the same layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: Vec<Tensor>,
}

impl Params {
    pub(crate) fn from_tensors(tensors: Vec<Tensor>) -> Self {
        Params { tensors }
    }

    pub(crate) fn push(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, data: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(Tensor { name, shape, group, data });
        ParamId(self.tensors.len() - 1)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].data
    }

    pub fn find(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn find_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Same names, shapes and groups in the same order.
    pub fn same_layout(&self, other: &Params) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.group == b.group)
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }
}

/// Gradient buffers laid out like [`Params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub(crate) data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub(crate) fn slot(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().flatten().for_each(|g| *g *= k);
    }

    pub fn zero(&mut self) {
        self.data.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }
}

/// Uniform fan-in initializer: `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`.
pub(crate) fn uniform_fan_in(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, gain: f64) -> Vec<f64> {
    let b = gain * (3.0 / fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-b..=b)).collect()
}
