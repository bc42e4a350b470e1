//! Rotation-equivariant convolution front-end: group convolution, ReLU,
//! average pooling, shape algebra, and backpropagation.
//!
//! "Convolution" here is cross-correlation (no filter flip).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::symmetry::{rotate_index, PixelIndex};

/// Batch of square images in `(N, H, W, C)` row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * h * w * c {
            return Err(Error::Shape(format!(
                "{} values for a ({n},{h},{w},{c}) tensor",
                data.len()
            )));
        }
        Ok(Self { n, h, w, c, data })
    }

    pub fn zeros(n: usize, h: usize, w: usize, c: usize) -> Self {
        Self {
            n,
            h,
            w,
            c,
            data: vec![0.0; n * h * w * c],
        }
    }

    #[inline]
    pub fn idx(&self, s: usize, i: usize, j: usize, ch: usize) -> usize {
        ((s * self.h + i) * self.w + j) * self.c + ch
    }

    pub fn get(&self, s: usize, i: usize, j: usize, ch: usize) -> f64 {
        self.data[self.idx(s, i, j, ch)]
    }

    fn sample_len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn sample(&self, s: usize) -> &[f64] {
        let l = self.sample_len();
        &self.data[s * l..(s + 1) * l]
    }

    /// Quarter-turns every spatial slice `times` times.
    pub fn rotated(&self, times: usize) -> Result<Tensor4> {
        if self.h != self.w {
            return Err(Error::Shape("rotation needs square slices".into()));
        }
        let side = self.h;
        let mut out = self.clone();
        for s in 0..self.n {
            for i in 0..side {
                for j in 0..side {
                    // out[p] = in[rotate^-times(p)], matching rotate_flat
                    let (mut si, mut sj) = (i, j);
                    for _ in 0..times % 4 {
                        (si, sj) = (side - 1 - sj, si);
                    }
                    for ch in 0..self.c {
                        let v = self.get(s, si, sj, ch);
                        let k = out.idx(s, i, j, ch);
                        out.data[k] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Convolution weights in `(h, w, c_in, c_out)` row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub cout: usize,
    pub data: Vec<f64>,
}

impl Filter {
    pub fn new(h: usize, w: usize, cin: usize, cout: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != h * w * cin * cout {
            return Err(Error::Shape(format!(
                "{} values for a ({h},{w},{cin},{cout}) filter",
                data.len()
            )));
        }
        if h != w {
            return Err(Error::Shape(format!("filter {h}x{w} is not square")));
        }
        Ok(Self { h, w, cin, cout, data })
    }

    pub fn zeros(side: usize, cin: usize, cout: usize) -> Self {
        Self {
            h: side,
            w: side,
            cin,
            cout,
            data: vec![0.0; side * side * cin * cout],
        }
    }

    /// Uniform in `[-1/sqrt(h w c_in), 1/sqrt(h w c_in)]`.
    pub fn fan_in_uniform(side: usize, cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let b = 1.0 / ((side * side * cin) as f64).sqrt();
        let mut f = Self::zeros(side, cin, cout);
        for v in &mut f.data {
            *v = rng.random_range(-b..=b);
        }
        f
    }

    #[inline]
    pub fn idx(&self, a: usize, b: usize, ci: usize, co: usize) -> usize {
        ((a * self.w + b) * self.cin + ci) * self.cout + co
    }
}

/// `(n_x + 2p - n_w) / s + 1`, which must be a positive integer.
pub fn conv_output_side(nx: usize, nw: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    let span = nx + 2 * padding;
    if nw == 0 || span < nw || (span - nw) % stride != 0 {
        return Err(Error::Shape(format!(
            "({nx} + 2*{padding} - {nw}) / {stride} + 1 is not a positive integer"
        )));
    }
    Ok((span - nw) / stride + 1)
}

fn conv_check(x: &Tensor4, f: &Filter, stride: usize, padding: usize) -> Result<usize> {
    if x.c != f.cin {
        return Err(Error::Shape(format!(
            "filter expects {} channels, input has {}",
            f.cin, x.c
        )));
    }
    if x.h != x.w {
        return Err(Error::Shape("convolution input must be square".into()));
    }
    conv_output_side(x.h, f.h, stride, padding)
}

fn conv_sample(x: &Tensor4, s: usize, f: &Filter, stride: usize, padding: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * m * f.cout];
    let side = x.h as isize;
    for i in 0..m {
        for j in 0..m {
            let o = (i * m + j) * f.cout;
            for a in 0..f.h {
                let xi = (i * stride + a) as isize - padding as isize;
                if xi < 0 || xi >= side {
                    continue;
                }
                for b in 0..f.w {
                    let xj = (j * stride + b) as isize - padding as isize;
                    if xj < 0 || xj >= side {
                        continue;
                    }
                    let xb = x.idx(s, xi as usize, xj as usize, 0);
                    for ci in 0..f.cin {
                        let xv = x.data[xb + ci];
                        let fb = f.idx(a, b, ci, 0);
                        for co in 0..f.cout {
                            out[o + co] += xv * f.data[fb + co];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Multichannel cross-correlation with the given stride and zero padding.
pub fn conv2d_valid(x: &Tensor4, f: &Filter, stride: usize, padding: usize) -> Result<Tensor4> {
    let m = conv_check(x, f, stride, padding)?;
    let data: Vec<f64> = (0..x.n)
        .into_par_iter()
        .map(|s| conv_sample(x, s, f, stride, padding, m))
        .collect::<Vec<_>>()
        .concat();
    Tensor4::new(x.n, m, m, f.cout, data)
}

/// Gradients of a convolution: `(dL/dfilter, dL/dinput)`.
fn conv2d_backward(
    x: &Tensor4,
    f: &Filter,
    stride: usize,
    padding: usize,
    dy: &Tensor4,
) -> (Filter, Tensor4) {
    let m = dy.h;
    let side = x.h as isize;
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..x.n)
        .into_par_iter()
        .map(|s| {
            let mut df = vec![0.0; f.data.len()];
            let mut dx = vec![0.0; x.sample_len()];
            let base = x.idx(s, 0, 0, 0);
            for i in 0..m {
                for j in 0..m {
                    let g = &dy.data[dy.idx(s, i, j, 0)..dy.idx(s, i, j, 0) + f.cout];
                    for a in 0..f.h {
                        let xi = (i * stride + a) as isize - padding as isize;
                        if xi < 0 || xi >= side {
                            continue;
                        }
                        for b in 0..f.w {
                            let xj = (j * stride + b) as isize - padding as isize;
                            if xj < 0 || xj >= side {
                                continue;
                            }
                            let xb = x.idx(s, xi as usize, xj as usize, 0);
                            for ci in 0..f.cin {
                                let xv = x.data[xb + ci];
                                let fb = f.idx(a, b, ci, 0);
                                let mut acc = 0.0;
                                for co in 0..f.cout {
                                    df[fb + co] += g[co] * xv;
                                    acc += g[co] * f.data[fb + co];
                                }
                                dx[xb - base + ci] += acc;
                            }
                        }
                    }
                }
            }
            (df, dx)
        })
        .collect();
    let mut df = Filter::zeros(f.h, f.cin, f.cout);
    let mut dx = Vec::with_capacity(x.data.len());
    for (g, d) in per {
        for (t, v) in df.data.iter_mut().zip(g) {
            *t += v;
        }
        dx.extend(d);
    }
    (df, Tensor4 { data: dx, ..x.clone() })
}

/// Spatial quarter-turns of every `(c_in, c_out)` slice.
pub fn rotate_filter(f: &Filter, times: usize) -> Filter {
    let mut out = f.clone();
    for a in 0..f.h {
        for b in 0..f.w {
            let (mut sa, mut sb) = (a, b);
            for _ in 0..times % 4 {
                (sa, sb) = (f.h - 1 - sb, sa);
            }
            for ci in 0..f.cin {
                for co in 0..f.cout {
                    let k = out.idx(a, b, ci, co);
                    out.data[k] = f.data[f.idx(sa, sb, ci, co)];
                }
            }
        }
    }
    out
}

/// Mean of the convolutions with the four rotations of `f`.
pub fn gconv(x: &Tensor4, f: &Filter, stride: usize, padding: usize) -> Result<Tensor4> {
    let mut acc: Option<Tensor4> = None;
    for t in 0..4 {
        let y = conv2d_valid(x, &rotate_filter(f, t), stride, padding)?;
        match &mut acc {
            None => acc = Some(y),
            Some(a) => a.data.iter_mut().zip(&y.data).for_each(|(p, q)| *p += q),
        }
    }
    let mut y = acc.expect("four terms");
    y.data.iter_mut().for_each(|v| *v *= 0.25);
    Ok(y)
}

fn gconv_backward(x: &Tensor4, f: &Filter, stride: usize, padding: usize, dy: &Tensor4) -> (Filter, Tensor4) {
    let mut df = Filter::zeros(f.h, f.cin, f.cout);
    let mut dx = Tensor4::zeros(x.n, x.h, x.w, x.c);
    for t in 0..4 {
        let (g, d) = conv2d_backward(x, &rotate_filter(f, t), stride, padding, dy);
        let g = rotate_filter(&g, (4 - t) % 4);
        df.data.iter_mut().zip(&g.data).for_each(|(p, q)| *p += 0.25 * q);
        dx.data.iter_mut().zip(&d.data).for_each(|(p, q)| *p += 0.25 * q);
    }
    (df, dx)
}

/// Non-overlapping window means per channel.
pub fn avg_pool(x: &Tensor4, window: usize) -> Result<Tensor4> {
    if window == 0 || x.h % window != 0 || x.w % window != 0 {
        return Err(Error::Shape(format!(
            "{}x{} is not divisible by pool window {window}",
            x.h, x.w
        )));
    }
    let (h, w) = (x.h / window, x.w / window);
    let mut y = Tensor4::zeros(x.n, h, w, x.c);
    let inv = 1.0 / (window * window) as f64;
    for s in 0..x.n {
        for i in 0..x.h {
            for j in 0..x.w {
                for ch in 0..x.c {
                    let k = y.idx(s, i / window, j / window, ch);
                    y.data[k] += inv * x.get(s, i, j, ch);
                }
            }
        }
    }
    Ok(y)
}

fn avg_pool_backward(x_shape: &Tensor4, window: usize, dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(x_shape.n, x_shape.h, x_shape.w, x_shape.c);
    let inv = 1.0 / (window * window) as f64;
    for s in 0..dx.n {
        for i in 0..dx.h {
            for j in 0..dx.w {
                for ch in 0..dx.c {
                    let k = dx.idx(s, i, j, ch);
                    dx.data[k] = inv * dy.get(s, i / window, j / window, ch);
                }
            }
        }
    }
    dx
}

pub fn relu(x: &Tensor4) -> Tensor4 {
    Tensor4 {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..x.clone()
    }
}

/// One row of a pipeline configuration: filter side `n_w`, output channels
/// `n_c`, optional pool window `n_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub filter: usize,
    pub channels: usize,
    #[serde(default)]
    pub pool: Option<usize>,
    #[serde(default = "default_true")]
    pub relu: bool,
}

fn default_true() -> bool {
    true
}

impl LayerSpec {
    pub fn new(filter: usize, channels: usize, pool: Option<usize>) -> Self {
        Self {
            filter,
            channels,
            pool,
            relu: true,
        }
    }
}

/// Builds layer specs from per-layer filter sizes, channel counts, and
/// (possibly empty) pool windows. A window of 0 means no pooling.
pub fn layer_specs(filters: &[usize], channels: &[usize], pools: &[usize]) -> Result<Vec<LayerSpec>> {
    if filters.len() != channels.len() || (!pools.is_empty() && pools.len() != filters.len()) {
        return Err(Error::Configuration(format!(
            "{} filters, {} channel counts, {} pools",
            filters.len(),
            channels.len(),
            pools.len()
        )));
    }
    Ok(filters
        .iter()
        .zip(channels)
        .enumerate()
        .map(|(k, (&f, &c))| LayerSpec::new(f, c, pools.get(k).copied().filter(|&p| p > 0)))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageShape {
    pub stage: String,
    pub side: usize,
    pub channels: usize,
}

/// Side and channel count after every convolution and pooling stage.
pub fn shape_chain(input_side: usize, input_channels: usize, layers: &[LayerSpec]) -> Result<Vec<StageShape>> {
    let mut out = vec![StageShape {
        stage: "input".into(),
        side: input_side,
        channels: input_channels,
    }];
    let mut side = input_side;
    for (k, l) in layers.iter().enumerate() {
        side = conv_output_side(side, l.filter, 1, 0)
            .map_err(|e| Error::Shape(format!("stage {k} convolution: {e}")))?;
        out.push(StageShape {
            stage: format!("conv{k}"),
            side,
            channels: l.channels,
        });
        if let Some(p) = l.pool {
            if p == 0 || side % p != 0 {
                return Err(Error::Shape(format!(
                    "stage {k} pooling: side {side} not divisible by {p}"
                )));
            }
            side /= p;
            out.push(StageShape {
                stage: format!("pool{k}"),
                side,
                channels: l.channels,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnLayer {
    pub filter: Filter,
    pub pool: Option<usize>,
    pub relu: bool,
}

#[derive(Debug, Clone, Default)]
struct Cache {
    /// Input to each layer.
    inputs: Vec<Tensor4>,
    /// Convolution output before activation, per layer.
    pre: Vec<Tensor4>,
}

/// Stack of group-convolution layers, stride 1 and no padding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CnnPipeline {
    pub input_side: usize,
    pub input_channels: usize,
    pub layers: Vec<CnnLayer>,
    #[serde(skip)]
    cache: Option<Cache>,
}

impl PartialEq for CnnPipeline {
    fn eq(&self, other: &Self) -> bool {
        self.input_side == other.input_side
            && self.input_channels == other.input_channels
            && self.layers == other.layers
    }
}

impl CnnPipeline {
    /// Seeded fan-in uniform filters for the given layer specs.
    pub fn new(input_side: usize, input_channels: usize, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Configuration("pipeline has no layers".into()));
        }
        shape_chain(input_side, input_channels, specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = input_channels;
        let layers = specs
            .iter()
            .map(|l| {
                let f = Filter::fan_in_uniform(l.filter, cin, l.channels, &mut rng);
                cin = l.channels;
                CnnLayer {
                    filter: f,
                    pool: l.pool,
                    relu: l.relu,
                }
            })
            .collect();
        Ok(Self {
            input_side,
            input_channels,
            layers,
            cache: None,
        })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                filter: l.filter.h,
                channels: l.filter.cout,
                pool: l.pool,
                relu: l.relu,
            })
            .collect()
    }

    pub fn output_shape(&self) -> (usize, usize) {
        let chain = shape_chain(self.input_side, self.input_channels, &self.specs()).expect("checked at construction");
        let last = chain.last().expect("nonempty");
        (last.side, last.channels)
    }

    pub fn n_weights(&self) -> usize {
        self.layers.iter().map(|l| l.filter.data.len()).sum()
    }

    /// All filter values, layer by layer.
    pub fn weights(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.filter.data.iter().copied()).collect()
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.n_weights() {
            return Err(Error::Shape(format!(
                "{} weights for a pipeline of {}",
                w.len(),
                self.n_weights()
            )));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let len = l.filter.data.len();
            l.filter.data.copy_from_slice(&w[k..k + len]);
            k += len;
        }
        self.cache = None;
        Ok(())
    }

    fn run(&self, x: &Tensor4, keep: bool) -> Result<(Tensor4, Cache)> {
        if x.h != self.input_side || x.w != self.input_side || x.c != self.input_channels {
            return Err(Error::Shape(format!(
                "pipeline expects ({}, {}, {}) samples, got ({}, {}, {})",
                self.input_side, self.input_side, self.input_channels, x.h, x.w, x.c
            )));
        }
        let mut cache = Cache::default();
        let mut cur = x.clone();
        for (k, l) in self.layers.iter().enumerate() {
            let pre = gconv(&cur, &l.filter, 1, 0).map_err(|e| Error::Shape(format!("stage {k}: {e}")))?;
            let mut y = if l.relu { relu(&pre) } else { pre.clone() };
            if let Some(p) = l.pool {
                y = avg_pool(&y, p).map_err(|e| Error::Shape(format!("stage {k}: {e}")))?;
            }
            if keep {
                cache.inputs.push(cur);
                cache.pre.push(pre);
            }
            cur = y;
        }
        Ok((cur, cache))
    }

    /// Forward pass without touching the backprop cache.
    pub fn apply(&self, x: &Tensor4) -> Result<Tensor4> {
        Ok(self.run(x, false)?.0)
    }

    /// Forward pass that keeps intermediates for [`Self::backward`].
    pub fn forward(&mut self, x: &Tensor4) -> Result<Tensor4> {
        let (y, cache) = self.run(x, true)?;
        self.cache = Some(cache);
        Ok(y)
    }

    /// Filter gradients per layer and the input gradient for `dL/doutput`.
    pub fn backward(&self, upstream: &Tensor4) -> Result<(Vec<Filter>, Tensor4)> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let mut g = upstream.clone();
        let mut grads = vec![None; self.layers.len()];
        for (k, l) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[k];
            if let Some(p) = l.pool {
                g = avg_pool_backward(pre, p, &g);
            }
            if g.data.len() != pre.data.len() {
                return Err(Error::Shape(format!("stage {k}: upstream gradient has the wrong shape")));
            }
            if l.relu {
                for (d, &v) in g.data.iter_mut().zip(&pre.data) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let (df, dx) = gconv_backward(&cache.inputs[k], &l.filter, 1, 0, &g);
            grads[k] = Some(df);
            g = dx;
        }
        Ok((grads.into_iter().map(|f| f.expect("filled")).collect(), g))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Frozen affine map from latent activations to rotation angles.
///
/// Each feature's source range is averaged over its rotation orbit so the
/// map commutes with the image rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub target: [f64; 2],
}

impl FeatureScaler {
    /// Per-feature min and max over `features`, averaged over orbits of the
    /// `side x side` grid.
    pub fn fit(features: &[Vec<f64>], side: usize, target: [f64; 2]) -> Result<Self> {
        let k = side * side;
        if features.is_empty() || features.iter().any(|f| f.len() != k) {
            return Err(Error::Shape(format!("scaler fit needs nonempty {side}x{side} features")));
        }
        let mut lo = vec![f64::INFINITY; k];
        let mut hi = vec![f64::NEG_INFINITY; k];
        for f in features {
            for q in 0..k {
                lo[q] = lo[q].min(f[q]);
                hi[q] = hi[q].max(f[q]);
            }
        }
        let orbit = |q: usize| -> Vec<usize> {
            let (mut i, mut j) = (q / side, q % side);
            let mut members = Vec::new();
            for _ in 0..4 {
                let p = i * side + j;
                if !members.contains(&p) {
                    members.push(p);
                }
                let r = rotate_index(PixelIndex { i, j, n: side });
                (i, j) = (r.i, r.j);
            }
            members
        };
        let avg = |v: &[f64], q: usize| {
            let m = orbit(q);
            m.iter().map(|&p| v[p]).sum::<f64>() / m.len() as f64
        };
        let (mut l2, mut h2) = (vec![0.0; k], vec![0.0; k]);
        for q in 0..k {
            l2[q] = avg(&lo, q);
            h2[q] = avg(&hi, q);
            if h2[q] - l2[q] < 1e-12 {
                h2[q] = l2[q] + 1.0;
            }
        }
        Ok(Self { lo: l2, hi: h2, target })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let [a, b] = self.target;
        x.iter()
            .enumerate()
            .map(|(q, &v)| a + (b - a) * (v - self.lo[q]) / (self.hi[q] - self.lo[q]))
            .collect()
    }

    /// `d angle_q / d x_q`.
    pub fn slope(&self) -> Vec<f64> {
        let [a, b] = self.target;
        self.lo.iter().zip(&self.hi).map(|(l, h)| (b - a) / (h - l)).collect()
    }
}
