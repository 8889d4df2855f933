//! Regression CNN mapping an image to a soft center map, the training
//! objective (data term, shape prior, shape anchor), exact gradients and SGD.
//!
//! Convolutions follow the crate-wide true-convolution convention (see
//! [`crate::numerics`]) with zero SAME padding.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrainingTuple;
use crate::detect_eval::{detect, match_golden, Center, DetectionConfig, EvalConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::numerics::{
    conv2d_full, correlate_valid, max_pool_same, route_gradient, same_dims, valid_range, Grid2D,
    PoolRoute,
};
use crate::shapes::{shape_learning_gradient, shape_learning_loss, Shape, ShapeSet, SsimConfig};

const CHECKPOINT_FORMAT: &str = "nucprior-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Number of convolution layers, input and output layers included.
    pub depth: usize,
    /// Feature channels of every hidden layer.
    pub channels: usize,
    pub first_kernel: usize,
    pub mid_kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            depth: 7,
            channels: 64,
            first_kernel: 5,
            mid_kernel: 3,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::invalid("network depth must be >= 2"));
        }
        if self.channels == 0 {
            return Err(Error::invalid("channels must be >= 1"));
        }
        if self.first_kernel.is_multiple_of(2) || self.mid_kernel.is_multiple_of(2) {
            return Err(Error::invalid("kernel sizes must be odd"));
        }
        Ok(())
    }

    /// `(in_channels, out_channels, kernel)` of each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let cin = if l == 0 { 1 } else { self.channels };
                let cout = if l + 1 == self.depth { 1 } else { self.channels };
                let k = if l == 0 {
                    self.first_kernel
                } else {
                    self.mid_kernel
                };
                (cin, cout, k)
            })
            .collect()
    }
}

/// One convolution layer; `weights` is laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weights: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    #[inline]
    fn widx(&self, o: usize, i: usize, u: usize, v: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + u) * self.kernel + v
    }

    pub fn weight(&self, o: usize, i: usize, u: usize, v: usize) -> f64 {
        self.weights[self.widx(o, i, u, v)]
    }

    pub fn set_weight(&mut self, o: usize, i: usize, u: usize, v: usize, value: f64) {
        let k = self.widx(o, i, u, v);
        self.weights[k] = value;
    }

    fn check(&self) -> Result<()> {
        let n = self.out_channels * self.in_channels * self.kernel * self.kernel;
        if self.weights.len() != n || self.bias.len() != self.out_channels {
            return Err(Error::dim("layer tensor sizes do not match its channel counts"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::invalid("layer parameters must be finite"));
        }
        Ok(())
    }

    fn forward(&self, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let hw = h * w;
        let half = (self.kernel / 2) as isize;
        let mut out = vec![0.0; self.out_channels * hw];
        out.par_chunks_mut(hw).enumerate().for_each(|(o, dst)| {
            dst.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &input[i * hw..(i + 1) * hw];
                for u in 0..self.kernel {
                    let dy = half - u as isize;
                    let (r0, r1) = valid_range(h, dy);
                    for v in 0..self.kernel {
                        let k = self.weight(o, i, u, v);
                        let dx = half - v as isize;
                        let (c0, c1) = valid_range(w, dx);
                        if c0 == c1 {
                            continue;
                        }
                        for r in r0..r1 {
                            let s = (r as isize + dy) as usize * w;
                            let a = &src[(s as isize + c0 as isize + dx) as usize
                                ..(s as isize + c1 as isize + dx) as usize];
                            let d = &mut dst[r * w + c0..r * w + c1];
                            for (d, a) in d.iter_mut().zip(a) {
                                *d += k * a;
                            }
                        }
                    }
                }
            }
        });
        out
    }

    /// Weight and bias gradients given the layer input and the gradient at
    /// its (pre-activation) output; optionally the gradient at its input.
    fn backward(
        &self,
        input: &[f64],
        dz: &[f64],
        h: usize,
        w: usize,
        want_input: bool,
    ) -> (Vec<f64>, Vec<f64>, Option<Vec<f64>>) {
        let hw = h * w;
        let half = (self.kernel / 2) as isize;
        let kk = self.kernel * self.kernel;
        let per_out = self.in_channels * kk;
        let mut dw = vec![0.0; self.weights.len()];
        dw.par_chunks_mut(per_out).enumerate().for_each(|(o, dwo)| {
            let g = &dz[o * hw..(o + 1) * hw];
            for i in 0..self.in_channels {
                let src = &input[i * hw..(i + 1) * hw];
                for u in 0..self.kernel {
                    let dy = half - u as isize;
                    let (r0, r1) = valid_range(h, dy);
                    for v in 0..self.kernel {
                        let dx = half - v as isize;
                        let (c0, c1) = valid_range(w, dx);
                        if c0 == c1 {
                            continue;
                        }
                        let mut acc = 0.0;
                        for r in r0..r1 {
                            let s = (r as isize + dy) as usize * w;
                            let a = &src[(s as isize + c0 as isize + dx) as usize
                                ..(s as isize + c1 as isize + dx) as usize];
                            let gr = &g[r * w + c0..r * w + c1];
                            acc += gr.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
                        }
                        dwo[(i * self.kernel + u) * self.kernel + v] = acc;
                    }
                }
            }
        });
        let db = dz.chunks(hw).map(|g| g.iter().sum()).collect();
        let dinput = want_input.then(|| {
            let mut din = vec![0.0; self.in_channels * hw];
            din.par_chunks_mut(hw).enumerate().for_each(|(i, dst)| {
                for o in 0..self.out_channels {
                    let g = &dz[o * hw..(o + 1) * hw];
                    for u in 0..self.kernel {
                        let dy = half - u as isize;
                        let (r0, r1) = valid_range(h, dy);
                        for v in 0..self.kernel {
                            let k = self.weight(o, i, u, v);
                            let dx = half - v as isize;
                            let (c0, c1) = valid_range(w, dx);
                            if c0 == c1 {
                                continue;
                            }
                            for r in r0..r1 {
                                let s = (r as isize + dy) as usize * w;
                                let d = &mut dst[(s as isize + c0 as isize + dx) as usize
                                    ..(s as isize + c1 as isize + dx) as usize];
                                let gr = &g[r * w + c0..r * w + c1];
                                for (d, x) in d.iter_mut().zip(gr) {
                                    *d += k * x;
                                }
                            }
                        }
                    }
                }
            });
            din
        });
        (dw, db, dinput)
    }
}

/// Network parameters `W_l, b_l` and, for shape learning, the learnable set `S_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub layers: Vec<ConvLayer>,
    pub shapes: Option<ShapeSet>,
}

impl NetworkParams {
    /// All-zero parameters.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o, k)| ConvLayer::zeros(i, o, k))
            .collect();
        Ok(Self {
            config,
            layers,
            shapes: None,
        })
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
            let normal = Normal::new(0.0, 1.0 / fan_in.sqrt())
                .map_err(|e| Error::invalid(e.to_string()))?;
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn with_shapes(mut self, shapes: ShapeSet) -> Self {
        self.shapes = Some(shapes);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.layer_shapes();
        if expected.len() != self.layers.len() {
            return Err(Error::dim(format!(
                "config has {} layers, parameters have {}",
                expected.len(),
                self.layers.len()
            )));
        }
        for (l, (layer, &(i, o, k))) in self.layers.iter().zip(&expected).enumerate() {
            if (layer.in_channels, layer.out_channels, layer.kernel) != (i, o, k) {
                return Err(Error::dim(format!(
                    "layer {} is {}->{} {}x{}, config expects {i}->{o} {k}x{k}",
                    l + 1,
                    layer.in_channels,
                    layer.out_channels,
                    layer.kernel,
                    layer.kernel
                )));
            }
            layer.check()?;
        }
        Ok(())
    }

    /// Number of scalar parameters, shapes included.
    pub fn len(&self) -> usize {
        self.flat().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flattened view: per layer weights then biases, then shape pixels.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        if let Some(s) = &self.shapes {
            for shape in s.shapes() {
                out.extend_from_slice(shape.as_slice());
            }
        }
        out
    }

    /// Inverse of [`NetworkParams::flat`].
    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap_or_default();
            }
        }
        if let Some(s) = &mut self.shapes {
            for shape in s.shapes_mut() {
                for v in shape.grid_mut().as_mut_slice() {
                    *v = it.next().unwrap_or_default();
                }
            }
        }
        Ok(())
    }

    /// JSON checkpoint holding the configuration, all layer tensors and any learned shapes.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointRef {
            format: CHECKPOINT_FORMAT,
            version: CHECKPOINT_VERSION,
            params: self,
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::parse(path, e.to_string()))?;
        io::write_text(path, &text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        let file: CheckpointFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(path, format!("unknown format {:?}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path,
                format!("unsupported checkpoint version {}", file.version),
            ));
        }
        file.params
            .validate()
            .map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(file.params)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    version: u32,
    params: &'a NetworkParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    params: NetworkParams,
}

/// Layer outputs of one forward pass; `activations[0]` is the input and the
/// last entry is the prediction.
struct ForwardTrace {
    h: usize,
    w: usize,
    activations: Vec<Vec<f64>>,
}

fn check_input(x: &Grid2D, params: &NetworkParams) -> Result<()> {
    params.validate()?;
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { layer: 0 });
    }
    Ok(())
}

fn forward_trace(x: &Grid2D, params: &NetworkParams) -> Result<ForwardTrace> {
    let (h, w) = x.dims();
    let mut activations = Vec::with_capacity(params.layers.len() + 1);
    activations.push(x.as_slice().to_vec());
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let mut z = layer.forward(activations.last().map(Vec::as_slice).unwrap_or(&[]), h, w);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: l + 1 });
        }
        if l != last {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        activations.push(z);
    }
    Ok(ForwardTrace { h, w, activations })
}

/// Prediction `ŷ = f(x; Θ)`, same size as `x`. Uses only the image and the
/// layer parameters; the output is not clamped.
pub fn forward(x: &Grid2D, params: &NetworkParams) -> Result<Grid2D> {
    check_input(x, params)?;
    let mut trace = forward_trace(x, params)?;
    let out = trace.activations.pop().unwrap_or_default();
    Grid2D::new(trace.h, trace.w, out)
}

/// Gradients of the loss with respect to every layer tensor, in layer order,
/// plus learnable shapes when present.
fn backward_trace(
    trace: &ForwardTrace,
    params: &NetworkParams,
    d_out: Vec<f64>,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let (h, w) = (trace.h, trace.w);
    let n = params.layers.len();
    let mut grads = vec![(Vec::new(), Vec::new()); n];
    let mut dz = d_out;
    for l in (0..n).rev() {
        let layer = &params.layers[l];
        let input = &trace.activations[l];
        let (dw, db, din) = layer.backward(input, &dz, h, w, l > 0);
        grads[l] = (dw, db);
        if let Some(mut din) = din {
            // ReLU of layer l (1-based); its output is `input`
            for (d, a) in din.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            dz = din;
        }
    }
    grads
}

// ---------------------------------------------------------------------------
// Losses

/// Un-normalized sum of squared differences.
pub fn mse_loss(yhat: &Grid2D, y: &Grid2D) -> Result<f64> {
    same_dims(yhat, y, "mse_loss")?;
    Ok(yhat
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Weights and detection settings of the split (false positive / false negative) data term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightedMseConfig {
    pub w_fp: f64,
    pub w_fn: f64,
    pub detection: DetectionConfig,
    pub eval: EvalConfig,
}

impl Default for WeightedMseConfig {
    fn default() -> Self {
        Self {
            w_fp: 0.7,
            w_fn: 0.3,
            detection: DetectionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl WeightedMseConfig {
    pub fn validate(&self) -> Result<()> {
        check_weights(self.w_fp, self.w_fn)?;
        self.detection.validate()?;
        self.eval.validate()
    }
}

fn check_weights(w_fp: f64, w_fn: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w_fp) || !(0.0..=1.0).contains(&w_fn) {
        return Err(Error::invalid("w_fp and w_fn must lie in [0, 1]"));
    }
    if ((w_fp + w_fn) - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("w_fp + w_fn must equal 1"));
    }
    Ok(())
}

/// Disk masks (inclusive Euclidean radius) around unmatched detections and missed centers.
pub fn error_masks(
    detections: &[Center],
    gt: &[Center],
    eval: &EvalConfig,
    height: usize,
    width: usize,
) -> (Grid2D, Grid2D) {
    let m = match_golden(detections, gt, eval);
    let fp: Vec<Center> = m.unmatched_detections.iter().map(|&k| detections[k]).collect();
    let fn_: Vec<Center> = m.unmatched_centers.iter().map(|&k| gt[k]).collect();
    (
        disk_mask(&fp, eval.golden_radius, height, width),
        disk_mask(&fn_, eval.golden_radius, height, width),
    )
}

fn disk_mask(points: &[Center], radius: f64, h: usize, w: usize) -> Grid2D {
    let mut m = Grid2D::zeros(h, w);
    let reach = radius.floor() as isize;
    for &(pr, pc) in points {
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                let (r, c) = (pr as isize + dr, pc as isize + dc);
                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                    continue;
                }
                if ((dr * dr + dc * dc) as f64) <= radius * radius {
                    m.set(r as usize, c as usize, 1.0);
                }
            }
        }
    }
    m
}

/// `w_fp * sum_{fp}(ŷ - y)^2 + w_fn * sum_{fn}(ŷ - y)^2` over explicit 0/1 masks.
pub fn masked_weighted_mse(
    yhat: &Grid2D,
    y: &Grid2D,
    fp_mask: &Grid2D,
    fn_mask: &Grid2D,
    w_fp: f64,
    w_fn: f64,
) -> Result<f64> {
    check_weights(w_fp, w_fn)?;
    same_dims(yhat, y, "weighted_mse_loss")?;
    same_dims(yhat, fp_mask, "weighted_mse_loss")?;
    same_dims(yhat, fn_mask, "weighted_mse_loss")?;
    let mut total = 0.0;
    for k in 0..yhat.len() {
        let e = yhat.as_slice()[k] - y.as_slice()[k];
        let wk = w_fp * fp_mask.as_slice()[k] + w_fn * fn_mask.as_slice()[k];
        total += wk * e * e;
    }
    Ok(total)
}

/// Weighted data term with masks built from the current detections.
pub fn weighted_mse_loss(
    yhat: &Grid2D,
    y: &Grid2D,
    detections: &[Center],
    gt: &[Center],
    w_fp: f64,
    w_fn: f64,
    eval: &EvalConfig,
) -> Result<f64> {
    let (fp, fn_) = error_masks(detections, gt, eval, yhat.height(), yhat.width());
    masked_weighted_mse(yhat, y, &fp, &fn_, w_fp, w_fn)
}

/// Intermediate values of the shape prior needed by its gradient.
struct PriorTrace {
    kept: Vec<bool>,
    route: PoolRoute,
    masked: Grid2D,
    responses: Vec<Grid2D>,
}

fn check_prior(yhat: &Grid2D, edge: &Grid2D, shapes: &[Shape], lambda: f64, t_p: f64) -> Result<()> {
    same_dims(yhat, edge, "shape prior")?;
    if shapes.is_empty() {
        return Err(Error::invalid("shape prior needs at least one shape"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be >= 0"));
    }
    if !(0.0..1.0).contains(&t_p) {
        return Err(Error::invalid("T_p must lie in [0, 1)"));
    }
    Ok(())
}

fn prior_forward(
    yhat: &Grid2D,
    edge: &Grid2D,
    shapes: &[Shape],
    lambda: f64,
    p: usize,
    t_p: f64,
) -> Result<(f64, PriorTrace)> {
    check_prior(yhat, edge, shapes, lambda, t_p)?;
    let kept: Vec<bool> = yhat.as_slice().iter().map(|&v| v >= t_p).collect();
    let thresholded = Grid2D::from_fn(yhat.height(), yhat.width(), |r, c| {
        let k = r * yhat.width() + c;
        if kept[k] {
            yhat.as_slice()[k]
        } else {
            0.0
        }
    });
    let (pooled, route) = max_pool_same(&thresholded, p)?;
    let masked = crate::numerics::hadamard(&pooled, edge)?;
    let responses: Vec<Grid2D> = shapes.iter().map(|s| conv2d_full(&masked, s)).collect();
    let energy: f64 = responses.iter().map(Grid2D::sum_sq).sum();
    Ok((
        -lambda * energy,
        PriorTrace {
            kept,
            route,
            masked,
            responses,
        },
    ))
}

fn prior_backward(
    trace: &PriorTrace,
    edge: &Grid2D,
    shapes: &[Shape],
    lambda: f64,
    want_shapes: bool,
) -> Result<(Grid2D, Vec<Grid2D>)> {
    let (h, w) = edge.dims();
    let mut d_masked = Grid2D::zeros(h, w);
    let mut d_shapes = Vec::new();
    for (resp, shape) in trace.responses.iter().zip(shapes) {
        let d_resp = resp.map(|v| -2.0 * lambda * v);
        let dm = correlate_valid(&d_resp, shape)?;
        for (a, b) in d_masked.as_mut_slice().iter_mut().zip(dm.as_slice()) {
            *a += b;
        }
        if want_shapes {
            d_shapes.push(correlate_valid(&d_resp, &trace.masked)?);
        }
    }
    let d_pooled = crate::numerics::hadamard(&d_masked, edge)?;
    let mut d_yhat = route_gradient(&d_pooled, &trace.route)?;
    for (d, &k) in d_yhat.as_mut_slice().iter_mut().zip(&trace.kept) {
        if !k {
            *d = 0.0;
        }
    }
    Ok((d_yhat, d_shapes))
}

/// `-lambda * sum_i ||(maxpool_p(ŷ·1[ŷ >= T_p]) ⊙ edge) * S_i||^2`, full convolution.
pub fn shape_prior_loss(
    yhat: &Grid2D,
    edge: &Grid2D,
    shapes: &[Shape],
    lambda: f64,
    p: usize,
    t_p: f64,
) -> Result<f64> {
    prior_forward(yhat, edge, shapes, lambda, p, t_p).map(|(l, _)| l)
}

/// Gradient of [`shape_prior_loss`] with respect to `ŷ` and to each shape.
/// The `T_p` threshold acts as a fixed mask.
pub fn shape_prior_gradient(
    yhat: &Grid2D,
    edge: &Grid2D,
    shapes: &[Shape],
    lambda: f64,
    p: usize,
    t_p: f64,
) -> Result<(Grid2D, Vec<Grid2D>)> {
    let (_, trace) = prior_forward(yhat, edge, shapes, lambda, p, t_p)?;
    prior_backward(&trace, edge, shapes, lambda, true)
}

// ---------------------------------------------------------------------------
// Objective

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataTerm {
    #[default]
    Mse,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Shape-prior weight.
    pub lambda: f64,
    /// Shape-learning weight.
    pub gamma: f64,
    /// Max-pooling window (odd).
    pub pool: usize,
    /// Pre-pool threshold.
    pub t_p: f64,
    pub eta: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub data_term: DataTerm,
    pub weighted: WeightedMseConfig,
    pub ssim: SsimConfig,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            gamma: 0.0,
            pool: 11,
            t_p: 0.2,
            eta: 1e-3,
            weight_decay: 1e-5,
            lr_decay: 0.75,
            decay_every: 10,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            data_term: DataTerm::Mse,
            weighted: WeightedMseConfig::default(),
            ssim: SsimConfig::default(),
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) {
            return Err(Error::invalid("lambda and gamma must be >= 0"));
        }
        if self.pool.is_multiple_of(2) {
            return Err(Error::invalid("pooling window must be odd"));
        }
        if !(0.0..1.0).contains(&self.t_p) {
            return Err(Error::invalid("T_p must lie in [0, 1)"));
        }
        if !(self.eta >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("eta and weight_decay must be >= 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::invalid("decay_every and batch_size must be >= 1"));
        }
        self.weighted.validate()?;
        self.ssim.validate()
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.eta * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// The three objective components and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data: f64,
    pub prior: f64,
    pub shape: f64,
    pub total: f64,
}

/// Shapes the prior is evaluated with: the learnable set when the parameters
/// carry one, otherwise the fixed set.
fn prior_shapes<'a>(
    params: &'a NetworkParams,
    shapes_ref: Option<&'a ShapeSet>,
    hyper: &HyperParams,
) -> Result<Option<&'a [Shape]>> {
    if hyper.gamma > 0.0 && (params.shapes.is_none() || shapes_ref.is_none()) {
        return Err(Error::invalid(
            "gamma > 0 needs learnable shapes in the parameters and a reference set",
        ));
    }
    if hyper.lambda == 0.0 {
        return Ok(None);
    }
    match (&params.shapes, shapes_ref) {
        (Some(s), _) => Ok(Some(s.shapes())),
        (None, Some(s)) => Ok(Some(s.shapes())),
        (None, None) => Err(Error::invalid("lambda > 0 needs a shape set")),
    }
}

fn check_sample(sample: &TrainingTuple) -> Result<()> {
    if sample.x.dims() != sample.y.dims() || sample.x.dims() != sample.edge.grid().dims() {
        return Err(Error::dim("training tuple channels are not aligned"));
    }
    Ok(())
}

/// 0/1 weights per pixel for the data term.
fn data_weights(yhat: &Grid2D, sample: &TrainingTuple, hyper: &HyperParams) -> Option<Vec<f64>> {
    match hyper.data_term {
        DataTerm::Mse => None,
        DataTerm::Weighted => {
            let cfg = &hyper.weighted;
            let dets = detect(yhat, &cfg.detection);
            let (fp, fn_) = error_masks(&dets, &sample.centers, &cfg.eval, yhat.height(), yhat.width());
            Some(
                fp.as_slice()
                    .iter()
                    .zip(fn_.as_slice())
                    .map(|(a, b)| cfg.w_fp * a + cfg.w_fn * b)
                    .collect(),
            )
        }
    }
}

fn data_loss(yhat: &Grid2D, sample: &TrainingTuple, hyper: &HyperParams) -> Result<f64> {
    match hyper.data_term {
        DataTerm::Mse => mse_loss(yhat, &sample.y),
        DataTerm::Weighted => {
            let cfg = &hyper.weighted;
            let dets = detect(yhat, &cfg.detection);
            weighted_mse_loss(yhat, &sample.y, &dets, &sample.centers, cfg.w_fp, cfg.w_fn, &cfg.eval)
        }
    }
}

/// Data term plus shape prior evaluated on a given prediction (no shape anchor).
pub fn prediction_loss(
    yhat: &Grid2D,
    sample: &TrainingTuple,
    shapes: Option<&[Shape]>,
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    check_sample(sample)?;
    same_dims(yhat, &sample.y, "prediction")?;
    let data = data_loss(yhat, sample, hyper)?;
    let prior = match shapes {
        Some(s) if hyper.lambda != 0.0 => {
            shape_prior_loss(yhat, sample.edge.grid(), s, hyper.lambda, hyper.pool, hyper.t_p)?
        }
        _ => 0.0,
    };
    Ok(LossBreakdown {
        data,
        prior,
        shape: 0.0,
        total: data + prior,
    })
}

fn anchor_loss(params: &NetworkParams, shapes_ref: Option<&ShapeSet>, hyper: &HyperParams) -> Result<f64> {
    match (&params.shapes, shapes_ref) {
        (Some(l), Some(r)) if hyper.gamma > 0.0 => shape_learning_loss(l, r, hyper.gamma, &hyper.ssim),
        _ => Ok(0.0),
    }
}

/// Full objective on a single tuple: data term + shape prior + shape anchor.
///
/// With `lambda = gamma = 0` this is exactly the data term. The prior uses
/// `params.shapes` when present, otherwise `shapes_ref`; the anchor (`gamma > 0`)
/// compares `params.shapes` against `shapes_ref`.
pub fn total_loss(
    sample: &TrainingTuple,
    params: &NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
) -> Result<LossBreakdown> {
    let shapes = prior_shapes(params, shapes_ref, hyper)?;
    let yhat = forward(&sample.x, params)?;
    let mut out = prediction_loss(&yhat, sample, shapes, hyper)?;
    out.shape = anchor_loss(params, shapes_ref, hyper)?;
    out.total = out.data + out.prior + out.shape;
    Ok(out)
}

/// Gradients laid out like [`NetworkParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub shapes: Option<Vec<Grid2D>>,
}

impl Gradients {
    fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
            shapes: params.shapes.as_ref().map(|s| {
                s.shapes()
                    .iter()
                    .map(|x| Grid2D::zeros(x.side(), x.side()))
                    .collect()
            }),
        }
    }

    /// Same ordering as [`NetworkParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        if let Some(s) = &self.shapes {
            for g in s {
                out.extend_from_slice(g.as_slice());
            }
        }
        out
    }

    fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            for (a, x) in w.iter_mut().zip(ow).chain(b.iter_mut().zip(ob)) {
                *a += scale * x;
            }
        }
        if let (Some(s), Some(o)) = (&mut self.shapes, &other.shapes) {
            for (a, x) in s.iter_mut().zip(o) {
                for (a, x) in a.as_mut_slice().iter_mut().zip(x.as_slice()) {
                    *a += scale * x;
                }
            }
        }
    }
}

/// Loss and gradient of data term + prior for one tuple.
fn sample_gradient(
    sample: &TrainingTuple,
    params: &NetworkParams,
    shapes: Option<&[Shape]>,
    hyper: &HyperParams,
) -> Result<(LossBreakdown, Gradients)> {
    check_sample(sample)?;
    let trace = forward_trace(&sample.x, params)?;
    let (h, w) = (trace.h, trace.w);
    let yhat = Grid2D::new(h, w, trace.activations[params.layers.len()].clone())?;

    let weights = data_weights(&yhat, sample, hyper);
    let mut d_out: Vec<f64> = yhat
        .as_slice()
        .iter()
        .zip(sample.y.as_slice())
        .enumerate()
        .map(|(k, (a, b))| 2.0 * weights.as_ref().map_or(1.0, |wt| wt[k]) * (a - b))
        .collect();
    let data = data_loss(&yhat, sample, hyper)?;

    let mut grads = Gradients::zeros_like(params);
    let mut prior = 0.0;
    if let Some(s) = shapes {
        let (loss, ptrace) =
            prior_forward(&yhat, sample.edge.grid(), s, hyper.lambda, hyper.pool, hyper.t_p)?;
        prior = loss;
        let learn = params.shapes.is_some();
        let (dy, ds) = prior_backward(&ptrace, sample.edge.grid(), s, hyper.lambda, learn)?;
        for (a, b) in d_out.iter_mut().zip(dy.as_slice()) {
            *a += b;
        }
        if learn {
            grads.shapes = Some(ds);
        }
    }
    grads.layers = backward_trace(&trace, params, d_out);
    Ok((
        LossBreakdown {
            data,
            prior,
            shape: 0.0,
            total: data + prior,
        },
        grads,
    ))
}

/// Minibatch objective `(1/B) sum_s [data_s + prior_s] + anchor` and its
/// gradient. Per-sample work may run in parallel; the reduction order is fixed.
pub fn batch_gradient(
    samples: &[&TrainingTuple],
    params: &NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
) -> Result<(LossBreakdown, Gradients)> {
    if samples.is_empty() {
        return Err(Error::invalid("empty minibatch"));
    }
    params.validate()?;
    let shapes = prior_shapes(params, shapes_ref, hyper)?;
    let per_sample = samples
        .par_iter()
        .map(|s| sample_gradient(s, params, shapes, hyper))
        .collect::<Result<Vec<_>>>()?;
    let scale = 1.0 / samples.len() as f64;
    let mut grads = Gradients::zeros_like(params);
    let mut loss = LossBreakdown::default();
    for (l, g) in &per_sample {
        grads.add_scaled(g, scale);
        loss.data += scale * l.data;
        loss.prior += scale * l.prior;
    }
    if let (Some(learn), Some(reference)) = (&params.shapes, shapes_ref) {
        if hyper.gamma > 0.0 {
            loss.shape = shape_learning_loss(learn, reference, hyper.gamma, &hyper.ssim)?;
            let gs = shape_learning_gradient(learn, reference, hyper.gamma, &hyper.ssim)?;
            if let Some(acc) = &mut grads.shapes {
                for (a, g) in acc.iter_mut().zip(&gs) {
                    for (a, g) in a.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a += g;
                    }
                }
            }
        }
    }
    loss.total = loss.data + loss.prior + loss.shape;
    Ok((loss, grads))
}

/// Loss and exact gradient of [`total_loss`] for one tuple.
pub fn backward(
    sample: &TrainingTuple,
    params: &NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
) -> Result<(LossBreakdown, Gradients)> {
    batch_gradient(&[sample], params, shapes_ref, hyper)
}

/// Non-smooth decisions taken by one evaluation of the objective: ReLU
/// states, the `T_p` mask, pooling winners and weighted-loss masks. Finite
/// differences are only meaningful while this stays fixed.
pub fn kink_signature(
    sample: &TrainingTuple,
    params: &NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
) -> Result<Vec<usize>> {
    let trace = forward_trace(&sample.x, params)?;
    let n = params.layers.len();
    let mut sig: Vec<usize> = trace.activations[1..n]
        .iter()
        .flat_map(|a| a.iter().map(|&v| (v > 0.0) as usize))
        .collect();
    let yhat = Grid2D::new(trace.h, trace.w, trace.activations[n].clone())?;
    if let Some(w) = data_weights(&yhat, sample, hyper) {
        sig.extend(w.iter().map(|&v| (v * 1e6) as usize));
    }
    if prior_shapes(params, shapes_ref, hyper)?.is_some() {
        let kept = yhat.map(|v| if v >= hyper.t_p { v } else { 0.0 });
        sig.extend(yhat.as_slice().iter().map(|&v| (v >= hyper.t_p) as usize));
        let (_, route) = max_pool_same(&kept, hyper.pool)?;
        sig.extend_from_slice(route.as_slice());
    }
    Ok(sig)
}

/// `Θ ← Θ − η(∇ + weight_decay·Θ)` for weights and biases; learnable shapes
/// take a plain gradient step.
pub fn sgd_step(params: &mut NetworkParams, grads: &Gradients, eta: f64, weight_decay: f64) -> Result<()> {
    if grads.layers.len() != params.layers.len()
        || grads
            .layers
            .iter()
            .zip(&params.layers)
            .any(|((w, b), l)| w.len() != l.weights.len() || b.len() != l.bias.len())
    {
        return Err(Error::dim("gradient shapes do not match parameters"));
    }
    match (&mut params.shapes, &grads.shapes) {
        (Some(s), Some(g)) => {
            if s.len() != g.len() || s.shapes().iter().zip(g).any(|(a, b)| a.dims() != b.dims()) {
                return Err(Error::dim("shape gradients do not match learnable shapes"));
            }
            for (shape, g) in s.shapes_mut().iter_mut().zip(g) {
                for (v, d) in shape.grid_mut().as_mut_slice().iter_mut().zip(g.as_slice()) {
                    *v -= eta * d;
                }
            }
        }
        (_, None) => {}
        (None, Some(_)) => return Err(Error::dim("shape gradients given for a network without shapes")),
    }
    for (layer, (gw, gb)) in params.layers.iter_mut().zip(&grads.layers) {
        for (v, d) in layer.weights.iter_mut().zip(gw).chain(layer.bias.iter_mut().zip(gb)) {
            *v -= eta * (d + weight_decay * *v);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub history: Vec<EpochLoss>,
}

/// Minibatch SGD. `params` is the starting point (see [`NetworkParams::init`]);
/// for shape learning it must carry the learnable set and `shapes_ref` the
/// reference set. Per-epoch losses are minibatch averages measured before
/// each update.
pub fn train(
    tuples: &[TrainingTuple],
    params: NetworkParams,
    shapes_ref: Option<&ShapeSet>,
    hyper: &HyperParams,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    params.validate()?;
    if tuples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    prior_shapes(&params, shapes_ref, hyper)?;
    let mut params = params;
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..tuples.len()).collect();
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let eta = hyper.learning_rate(epoch);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<&TrainingTuple> = chunk.iter().map(|&k| &tuples[k]).collect();
            let (loss, grads) = batch_gradient(&batch, &params, shapes_ref, hyper)?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    loss: loss.total,
                });
            }
            sgd_step(&mut params, &grads, eta, hyper.weight_decay)?;
            sum.data += loss.data;
            sum.prior += loss.prior;
            sum.shape += loss.shape;
            sum.total += loss.total;
            batches += 1;
        }
        let n = batches as f64;
        let record = EpochLoss {
            epoch: epoch + 1,
            loss: LossBreakdown {
                data: sum.data / n,
                prior: sum.prior / n,
                shape: sum.shape / n,
                total: sum.total / n,
            },
        };
        if params.flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                loss: record.loss.total,
            });
        }
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainOutcome { params, history })
}

/// CSV with columns `epoch,loss,sp,ssim,total`.
pub fn history_csv(history: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss,sp,ssim,total\n");
    for e in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            e.epoch, e.loss.data, e.loss.prior, e.loss.shape, e.loss.total
        );
    }
    s
}
