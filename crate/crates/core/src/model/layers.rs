use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{uniform_fan_in, Grads, ParamGroup, ParamId, Params};

const LN_EPS: f64 = 1e-5;

/// Registers tensors for one sub-network in declaration order.
pub(crate) struct Builder<'a> {
    pub params: &'a mut Params,
    pub rng: &'a mut ChaCha8Rng,
    pub group: ParamGroup,
    pub prefix: String,
}

impl Builder<'_> {
    pub fn scoped<R>(&mut self, name: &str, f: impl FnOnce(&mut Builder) -> R) -> R {
        let saved = self.prefix.clone();
        self.prefix = format!("{saved}{name}.");
        let out = f(self);
        self.prefix = saved;
        out
    }

    pub fn tensor(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        self.params.push(format!("{}{name}", self.prefix), shape, self.group, data)
    }

    pub fn uniform(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, gain: f64) -> ParamId {
        let n = shape.iter().product();
        let data = uniform_fan_in(self.rng, n, fan_in, gain);
        self.tensor(name, shape, data)
    }

    pub fn filled(&mut self, name: &str, shape: Vec<usize>, v: f64) -> ParamId {
        let n = shape.iter().product();
        self.tensor(name, shape, vec![v; n])
    }
}

fn view(p: &Params, id: ParamId, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), p.get(id)).expect("tensor shape")
}

fn view_mut(g: &mut Grads, id: ParamId, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), g.slot(id)).expect("tensor shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    pub(crate) fn gain(self) -> f64 {
        match self {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn apply(self, x: &mut Array2<f64>) {
        if self == Activation::Relu {
            x.mapv_inplace(|v| v.max(0.0));
        }
    }

    /// Gradient through the activation given its output `y`.
    pub(crate) fn backward(self, y: &Array2<f64>, dy: &mut Array2<f64>) {
        if self == Activation::Relu {
            dy.zip_mut_with(y, |d, &v| {
                if v <= 0.0 {
                    *d = 0.0
                }
            });
        }
    }
}

/// Dense layer acting on rows: `y = x W^T + b`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(bld: &mut Builder, name: &str, n_in: usize, n_out: usize, gain: f64) -> Self {
        bld.scoped(name, |bld| Linear {
            w: bld.uniform("weight", vec![n_out, n_in], n_in, gain),
            b: bld.filled("bias", vec![n_out], 0.0),
            n_in,
            n_out,
        })
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> Array2<f64> {
        let w = view(p, self.w, self.n_out, self.n_in);
        let mut y = x.dot(&w.t());
        let b = ArrayView2::from_shape((1, self.n_out), p.get(self.b)).unwrap();
        y += &b;
        y
    }

    /// Accumulates parameter gradients; returns `dL/dx` when asked.
    pub fn backward(
        &self,
        p: &Params,
        x: &Array2<f64>,
        dy: &Array2<f64>,
        g: &mut Grads,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        general_mat_mul(1.0, &dy.t(), x, 1.0, &mut view_mut(g, self.w, self.n_out, self.n_in));
        let gb = g.slot(self.b);
        for row in dy.rows() {
            gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        need_dx.then(|| dy.dot(&view(p, self.w, self.n_out, self.n_in)))
    }
}

/// Valid (unpadded) strided 1-D convolution over `[channels, time]`.
#[derive(Debug, Clone)]
pub(crate) struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Conv1d {
    pub fn new(bld: &mut Builder, name: &str, c_in: usize, c_out: usize, kernel: usize, stride: usize, gain: f64) -> Self {
        let fan_in = c_in * kernel;
        bld.scoped(name, |bld| Conv1d {
            w: bld.uniform("weight", vec![c_out, c_in, kernel], fan_in, gain),
            b: bld.filled("bias", vec![c_out], 0.0),
            c_in,
            c_out,
            kernel,
            stride,
        })
    }

    pub fn out_len(&self, len: usize) -> Option<usize> {
        (len >= self.kernel).then(|| (len - self.kernel) / self.stride + 1)
    }

    fn im2col(&self, x: &Array2<f64>, out_len: usize) -> Array2<f64> {
        let (k, s) = (self.kernel, self.stride);
        let mut cols = Array2::zeros((self.c_in * k, out_len));
        for (ci, xr) in x.rows().into_iter().enumerate() {
            let xr = xr.to_slice().expect("contiguous rows");
            for j in 0..k {
                let mut row = cols.row_mut(ci * k + j);
                let dst = row.as_slice_mut().unwrap();
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = xr[t * s + j];
                }
            }
        }
        cols
    }

    /// Returns the output and the unfolded input needed for backward.
    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let x = x.as_standard_layout();
        let out_len = self.out_len(x.ncols()).expect("input shorter than kernel");
        let cols = self.im2col(&x.to_owned(), out_len);
        let w = view(p, self.w, self.c_out, self.c_in * self.kernel);
        let mut y = w.dot(&cols);
        let b = ArrayView2::from_shape((self.c_out, 1), p.get(self.b)).unwrap();
        y += &b;
        (y, cols)
    }

    pub fn backward(
        &self,
        p: &Params,
        cols: &Array2<f64>,
        in_len: usize,
        dy: &Array2<f64>,
        g: &mut Grads,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let ck = self.c_in * self.kernel;
        general_mat_mul(1.0, dy, &cols.t(), 1.0, &mut view_mut(g, self.w, self.c_out, ck));
        let gb = g.slot(self.b);
        for (a, row) in gb.iter_mut().zip(dy.rows()) {
            *a += row.sum();
        }
        if !need_dx {
            return None;
        }
        let dcols = view(p, self.w, self.c_out, ck).t().dot(dy);
        let (k, s) = (self.kernel, self.stride);
        let mut dx = Array2::zeros((self.c_in, in_len));
        for ci in 0..self.c_in {
            let mut dr = dx.row_mut(ci);
            let dr = dr.as_slice_mut().unwrap();
            for j in 0..k {
                let src = dcols.row(ci * k + j);
                for (t, v) in src.iter().enumerate() {
                    dr[t * s + j] += v;
                }
            }
        }
        Some(dx)
    }
}

/// Layer normalization over the last axis.
#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(bld: &mut Builder, name: &str, dim: usize) -> Self {
        bld.scoped(name, |bld| LayerNorm {
            gamma: bld.filled("gamma", vec![dim], 1.0),
            beta: bld.filled("beta", vec![dim], 0.0),
            dim,
        })
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let n = self.dim as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mu = row.sum() / n;
            row.mapv_inplace(|v| v - mu);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *is = 1.0 / (var + LN_EPS).sqrt();
            let s = *is;
            row.mapv_inplace(|v| v * s);
        }
        let gamma = ArrayView2::from_shape((1, self.dim), p.get(self.gamma)).unwrap();
        let beta = ArrayView2::from_shape((1, self.dim), p.get(self.beta)).unwrap();
        let y = &xhat * &gamma + beta;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &Params, c: &LnCache, dy: &Array2<f64>, g: &mut Grads) -> Array2<f64> {
        let n = self.dim as f64;
        {
            let gg = g.slot(self.gamma);
            for (dr, xr) in dy.rows().into_iter().zip(c.xhat.rows()) {
                for ((a, d), x) in gg.iter_mut().zip(dr).zip(xr) {
                    *a += d * x;
                }
            }
        }
        {
            let gb = g.slot(self.beta);
            for dr in dy.rows() {
                gb.iter_mut().zip(dr).for_each(|(a, d)| *a += d);
            }
        }
        let gamma = ArrayView2::from_shape((1, self.dim), p.get(self.gamma)).unwrap();
        let dxhat = dy * &gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
            let dh = dxhat.row(i);
            let xh = c.xhat.row(i);
            let m1 = dh.sum() / n;
            let m2 = dh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            let is = c.inv_std[i];
            for ((o, a), b) in out.iter_mut().zip(dh).zip(xh) {
                *o = is * (a - m1 - b * m2);
            }
        }
        dx
    }
}

/// Multi-head scaled dot-product self-attention.
#[derive(Debug, Clone)]
pub(crate) struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub(crate) struct MhaCache {
    x: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

impl MultiHeadAttention {
    pub fn new(bld: &mut Builder, name: &str, dim: usize, heads: usize) -> Self {
        bld.scoped(name, |bld| MultiHeadAttention {
            q: Linear::new(bld, "q", dim, dim, 1.0),
            k: Linear::new(bld, "k", dim, dim, 1.0),
            v: Linear::new(bld, "v", dim, dim, 1.0),
            o: Linear::new(bld, "o", dim, dim, 1.0),
            heads,
        })
    }

    fn head_dim(&self) -> usize {
        self.q.n_out / self.heads
    }

    pub fn forward(&self, p: &Params, x: &Array2<f64>) -> (Array2<f64>, MhaCache) {
        let (q, k, v) = (self.q.forward(p, x), self.k.forward(p, x), self.v.forward(p, x));
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut concat = Array2::zeros(q.raw_dim());
        let mut attn = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = ndarray::s![.., h * dh..(h + 1) * dh];
            let mut s = q.slice(cols).dot(&k.slice(cols).t());
            s *= scale;
            softmax_rows(&mut s);
            concat.slice_mut(cols).assign(&s.dot(&v.slice(cols)));
            attn.push(s);
        }
        let y = self.o.forward(p, &concat);
        (y, MhaCache { x: x.clone(), q, k, v, attn, concat })
    }

    pub fn backward(&self, p: &Params, c: &MhaCache, dy: &Array2<f64>, g: &mut Grads) -> Array2<f64> {
        let dconcat = self.o.backward(p, &c.concat, dy, g, true).unwrap();
        let dh = self.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(c.q.raw_dim());
        let mut dk = Array2::zeros(c.k.raw_dim());
        let mut dv = Array2::zeros(c.v.raw_dim());
        for (h, a) in c.attn.iter().enumerate() {
            let cols = ndarray::s![.., h * dh..(h + 1) * dh];
            let dout = dconcat.slice(cols);
            let da = dout.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&dout));
            // softmax backward, row-wise
            let mut ds = a * &da;
            let rs = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
            ds = &ds - &(a * &rs);
            ds *= scale;
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        let mut dx = self.q.backward(p, &c.x, &dq, g, true).unwrap();
        dx += &self.k.backward(p, &c.x, &dk, g, true).unwrap();
        dx += &self.v.backward(p, &c.x, &dv, g, true).unwrap();
        dx
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    pub fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Finite-difference check of a scalar function of the params and input.
    fn check(params: &mut Params, x: &Array2<f64>, f: impl Fn(&Params, &Array2<f64>) -> (f64, Grads, Array2<f64>)) {
        let (_, g, dx) = f(params, x);
        let h = 1e-5;
        for ti in 0..params.len() {
            for i in 0..params.tensors()[ti].data.len() {
                let orig = params.tensors()[ti].data[i];
                params.tensors_mut()[ti].data[i] = orig + h;
                let lp = f(params, x).0;
                params.tensors_mut()[ti].data[i] = orig - h;
                let lm = f(params, x).0;
                params.tensors_mut()[ti].data[i] = orig;
                let num = (lp - lm) / (2.0 * h);
                let ana = g.get(ti)[i];
                assert!((num - ana).abs() <= 1e-6 * num.abs().max(ana.abs()).max(1e-3), "{ti}[{i}]: {ana} vs {num}");
            }
        }
        let mut xp = x.clone();
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let orig = x[[r, c]];
            xp[[r, c]] = orig + h;
            let lp = f(params, &xp).0;
            xp[[r, c]] = orig - h;
            let lm = f(params, &xp).0;
            xp[[r, c]] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - dx[[r, c]]).abs() <= 1e-6 * num.abs().max(1e-3), "dx: {} vs {num}", dx[[r, c]]);
        }
    }

    fn builder<'a>(params: &'a mut Params, rng: &'a mut ChaCha8Rng) -> Builder<'a> {
        Builder {
            params,
            rng,
            group: ParamGroup::Waveform,
            prefix: String::new(),
        }
    }

    /// Weighted sum of outputs, so every output element gets a distinct
    /// upstream gradient.
    fn probe(y: &Array2<f64>) -> (f64, Array2<f64>) {
        let w = Array2::from_shape_fn(y.raw_dim(), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 1.7);
        ((y * &w).sum(), w)
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut params = Params::default();
        let conv = Conv1d::new(&mut builder(&mut params, &mut rng), "c", 3, 4, 5, 2, 1.0);
        for v in params.get_mut(conv.b) {
            *v = 0.3;
        }
        let x = random_matrix(&mut rng, 3, 17);
        check(&mut params, &x, |p, x| {
            let (y, cols) = conv.forward(p, x);
            let (l, dy) = probe(&y);
            let mut g = p.zero_grads();
            let dx = conv.backward(p, &cols, x.ncols(), &dy, &mut g, true).unwrap();
            (l, g, dx)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = Params::default();
        let conv = Conv1d::new(&mut builder(&mut params, &mut rng), "c", 2, 3, 3, 2, 1.0);
        let x = random_matrix(&mut rng, 2, 11);
        let (y, _) = conv.forward(&params, &x);
        assert_eq!(y.dim(), (3, 5));
        let w = params.get(conv.w);
        for o in 0..3 {
            for t in 0..5 {
                let mut acc = 0.0;
                for ci in 0..2 {
                    for j in 0..3 {
                        acc += w[(o * 2 + ci) * 3 + j] * x[[ci, 2 * t + j]];
                    }
                }
                assert!((acc - y[[o, t]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_and_linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = Params::default();
        let (ln, lin) = {
            let mut b = builder(&mut params, &mut rng);
            (LayerNorm::new(&mut b, "ln", 6), Linear::new(&mut b, "lin", 6, 3, 1.0))
        };
        for v in params.get_mut(ln.gamma) {
            *v = 0.5 + rng.gen::<f64>();
        }
        let x = random_matrix(&mut rng, 4, 6);
        check(&mut params, &x, |p, x| {
            let (a, c) = ln.forward(p, x);
            let y = lin.forward(p, &a);
            let (l, dy) = probe(&y);
            let mut g = p.zero_grads();
            let da = lin.backward(p, &a, &dy, &mut g, true).unwrap();
            let dx = ln.backward(p, &c, &da, &mut g);
            (l, g, dx)
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = Params::default();
        let mha = MultiHeadAttention::new(&mut builder(&mut params, &mut rng), "a", 6, 2);
        let x = random_matrix(&mut rng, 5, 6);
        check(&mut params, &x, |p, x| {
            let (y, c) = mha.forward(p, x);
            let (l, dy) = probe(&y);
            let mut g = p.zero_grads();
            let dx = mha.backward(p, &c, &dy, &mut g);
            (l, g, dx)
        });
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut s = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, -1000.0, 0.0, 1000.0]).unwrap();
        softmax_rows(&mut s);
        for r in s.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-15);
        }
        assert_eq!(s[[1, 2]], 1.0);
    }
}
