//! Per-frame image transform: `k x k` same-padded convolutions, each
//! followed by a ReLU and a 2x2 stride-2 max pool, then flattened.
//!
//! Images are stored row-major as `(height, width, channels)`; a frame of a
//! sequence is one flattened image. Pool ties go to the first maximum in
//! row-major window order.

use ndarray::Array2;
use ndarray::ArrayView2;

use super::ops::check_shape;
use super::{ParamId, ParamSpec, ParamTree, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    kernel: ParamId,
    bias: ParamId,
    input: ImageDims,
    c_out: usize,
}

impl ConvLayer {
    fn pooled(&self) -> ImageDims {
        ImageDims {
            height: self.input.height / 2,
            width: self.input.width / 2,
            channels: self.c_out,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CnnStack {
    layers: Vec<ConvLayer>,
    ksize: usize,
    pub input: ImageDims,
}

/// Cached activations of one layer for one frame.
#[derive(Clone, Debug)]
struct LayerTrace<F> {
    input: Vec<F>,
    /// Post-ReLU conv output, `(h, w, c_out)`.
    activated: Vec<F>,
    /// Flat index into `activated` chosen by each pooled cell.
    argmax: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct CnnTrace<F> {
    frames: Vec<Vec<LayerTrace<F>>>,
    pub output: Array2<F>,
}

/// Spatial size after `layers` halvings, or an error when a pool would see
/// fewer than two rows or columns.
pub fn cnn_output_dims(input: ImageDims, layers: usize, features: usize) -> Result<ImageDims> {
    let (mut h, mut w) = (input.height, input.width);
    for l in 0..layers {
        if h < 2 || w < 2 {
            return Err(Error::Dimension(format!(
                "image {}x{} too small for pooling stage {} of {layers}",
                input.height, input.width, l
            )));
        }
        h /= 2;
        w /= 2;
    }
    if input.channels == 0 {
        return Err(Error::Dimension("image has no channels".into()));
    }
    Ok(ImageDims {
        height: h,
        width: w,
        channels: if layers == 0 { input.channels } else { features },
    })
}

impl CnnStack {
    pub fn param_specs(prefix: &str, input: ImageDims, layers: usize, features: usize, ksize: usize) -> Vec<ParamSpec> {
        let mut c_in = input.channels;
        let mut specs = Vec::new();
        for l in 0..layers {
            specs.push(ParamSpec::kernel(format!("{prefix}.conv{l}.K"), ksize, c_in, features));
            specs.push(ParamSpec::bias(format!("{prefix}.conv{l}.b"), features));
            c_in = features;
        }
        specs
    }

    pub fn param_count(input: ImageDims, layers: usize, features: usize, ksize: usize) -> usize {
        let mut c_in = input.channels;
        let mut total = 0;
        for _ in 0..layers {
            total += ksize * ksize * c_in * features + features;
            c_in = features;
        }
        total
    }

    pub fn bind<F: Real>(tree: &ParamTree<F>, prefix: &str, input: ImageDims, layers: usize) -> Result<Self> {
        let mut dims = input;
        let mut bound = Vec::with_capacity(layers);
        let mut ksize = 0;
        for l in 0..layers {
            let kernel = tree.expect_id(&format!("{prefix}.conv{l}.K"))?;
            let bias = tree.expect_id(&format!("{prefix}.conv{l}.b"))?;
            let shape = tree.get(kernel).shape().to_vec();
            if shape.len() != 4 || shape[0] != shape[1] || shape[2] != dims.channels {
                return Err(Error::Dimension(format!("kernel {prefix}.conv{l}.K has shape {shape:?}")));
            }
            ksize = shape[0];
            let layer = ConvLayer {
                kernel,
                bias,
                input: dims,
                c_out: shape[3],
            };
            cnn_output_dims(dims, 1, layer.c_out)?;
            dims = layer.pooled();
            bound.push(layer);
        }
        Ok(Self {
            layers: bound,
            ksize,
            input,
        })
    }

    pub fn out_dims(&self) -> ImageDims {
        self.layers.last().map_or(self.input, ConvLayer::pooled)
    }

    pub fn out_dim(&self) -> usize {
        self.out_dims().len()
    }

    /// Maps every row of `x` (`T x (h*w*c)`) to a flattened feature vector.
    pub fn forward<F: Real>(&self, p: &ParamTree<F>, x: ArrayView2<F>) -> Result<CnnTrace<F>> {
        check_shape("image frame", &[x.ncols()], &[self.input.len()])?;
        let mut output = Array2::zeros((x.nrows(), self.out_dim()));
        let mut frames = Vec::with_capacity(x.nrows());
        for (t, row) in x.rows().into_iter().enumerate() {
            let mut current: Vec<F> = row.iter().copied().collect();
            let mut traces = Vec::with_capacity(self.layers.len());
            for layer in &self.layers {
                let mut activated = conv_same(
                    &current,
                    p.slice(layer.kernel),
                    p.slice(layer.bias),
                    layer.input,
                    layer.c_out,
                    self.ksize,
                );
                activated.iter_mut().for_each(|v| *v = v.max(F::zero()));
                let (pooled, argmax) = max_pool(&activated, ImageDims { channels: layer.c_out, ..layer.input });
                traces.push(LayerTrace {
                    input: std::mem::replace(&mut current, pooled),
                    activated,
                    argmax,
                });
            }
            output
                .row_mut(t)
                .iter_mut()
                .zip(&current)
                .for_each(|(o, &v)| *o = v);
            frames.push(traces);
        }
        Ok(CnnTrace { frames, output })
    }

    pub fn backward<F: Real>(
        &self,
        p: &ParamTree<F>,
        g: &mut ParamTree<F>,
        trace: &CnnTrace<F>,
        d_out: ArrayView2<F>,
    ) -> Array2<F> {
        let mut dx = Array2::zeros((trace.frames.len(), self.input.len()));
        for (t, traces) in trace.frames.iter().enumerate() {
            let mut d: Vec<F> = d_out.row(t).iter().copied().collect();
            for (layer, lt) in self.layers.iter().zip(traces).rev() {
                let mut d_act = vec![F::zero(); lt.activated.len()];
                for (&idx, &dv) in lt.argmax.iter().zip(&d) {
                    d_act[idx] += dv;
                }
                for (da, &a) in d_act.iter_mut().zip(&lt.activated) {
                    if a <= F::zero() {
                        *da = F::zero();
                    }
                }
                let c_out = layer.c_out;
                let mut d_in = vec![F::zero(); lt.input.len()];
                {
                    let gb = g.slice_mut(layer.bias);
                    for cell in d_act.chunks_exact(c_out) {
                        for (b, &v) in gb.iter_mut().zip(cell) {
                            *b += v;
                        }
                    }
                }
                conv_same_backward(
                    &lt.input,
                    p.slice(layer.kernel),
                    &d_act,
                    layer.input,
                    c_out,
                    self.ksize,
                    g.slice_mut(layer.kernel),
                    &mut d_in,
                );
                d = d_in;
            }
            dx.row_mut(t).iter_mut().zip(&d).for_each(|(o, &v)| *o = v);
        }
        dx
    }
}

fn conv_same<F: Real>(input: &[F], kernel: &[F], bias: &[F], dims: ImageDims, c_out: usize, k: usize) -> Vec<F> {
    let ImageDims {
        height,
        width,
        channels: c_in,
    } = dims;
    let pad = k / 2;
    let mut out = vec![F::zero(); height * width * c_out];
    for y in 0..height {
        for x in 0..width {
            let cell = &mut out[(y * width + x) * c_out..(y * width + x + 1) * c_out];
            cell.copy_from_slice(bias);
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < height) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < width) else {
                        continue;
                    };
                    for ci in 0..c_in {
                        let v = input[(iy * width + ix) * c_in + ci];
                        let krow = &kernel[((ky * k + kx) * c_in + ci) * c_out..][..c_out];
                        for (o, &w) in cell.iter_mut().zip(krow) {
                            *o += v * w;
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_same_backward<F: Real>(
    input: &[F],
    kernel: &[F],
    d_out: &[F],
    dims: ImageDims,
    c_out: usize,
    k: usize,
    d_kernel: &mut [F],
    d_in: &mut [F],
) {
    let ImageDims {
        height,
        width,
        channels: c_in,
    } = dims;
    let pad = k / 2;
    for y in 0..height {
        for x in 0..width {
            let dcell = &d_out[(y * width + x) * c_out..(y * width + x + 1) * c_out];
            for ky in 0..k {
                let Some(iy) = (y + ky).checked_sub(pad).filter(|&v| v < height) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (x + kx).checked_sub(pad).filter(|&v| v < width) else {
                        continue;
                    };
                    for ci in 0..c_in {
                        let at = (iy * width + ix) * c_in + ci;
                        let off = ((ky * k + kx) * c_in + ci) * c_out;
                        let v = input[at];
                        let mut acc = F::zero();
                        for co in 0..c_out {
                            d_kernel[off + co] += v * dcell[co];
                            acc += kernel[off + co] * dcell[co];
                        }
                        d_in[at] += acc;
                    }
                }
            }
        }
    }
}

fn max_pool<F: Real>(input: &[F], dims: ImageDims) -> (Vec<F>, Vec<usize>) {
    let (oh, ow, c) = (dims.height / 2, dims.width / 2, dims.channels);
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut argmax = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                let mut best = (2 * y * dims.width + 2 * x) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * y + dy) * dims.width + 2 * x + dx) * c + ch;
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{grad_check, GradCheckOptions};
    use crate::nn::init_params;
    use crate::rng::Prng;

    fn dims(h: usize, w: usize, c: usize) -> ImageDims {
        ImageDims {
            height: h,
            width: w,
            channels: c,
        }
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let d = dims(12, 12, 1);
        let specs = CnnStack::param_specs("cnn", d, 3, 8, 5);
        let t: ParamTree<f64> = init_params(&specs, &mut Prng::new(0)).unwrap().zeros_like();
        let cnn = CnnStack::bind(&t, "cnn", d, 3).unwrap();
        let mut prng = Prng::new(1);
        let x = Array2::from_shape_fn((3, d.len()), |_| prng.normal());
        let y = cnn.forward(&t, x.view()).unwrap().output;
        assert_eq!(y.shape(), &[3, 8]);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_image_lands_in_the_right_pool_cell() {
        // One layer, one channel, kernel = centered delta: conv is identity.
        let d = dims(8, 8, 1);
        let specs = CnnStack::param_specs("cnn", d, 1, 1, 5);
        let mut t: ParamTree<f64> = init_params(&specs, &mut Prng::new(0)).unwrap().zeros_like();
        let k = t.id("cnn.conv0.K").unwrap();
        t.slice_mut(k)[2 * 5 + 2] = 1.0;
        let cnn = CnnStack::bind(&t, "cnn", d, 1).unwrap();
        let mut x = Array2::zeros((1, 64));
        x[[0, 5 * 8 + 2]] = 1.0; // row 5, column 2
        let y = cnn.forward(&t, x.view()).unwrap().output;
        let hot: Vec<usize> = (0..16).filter(|&i| y[[0, i]] != 0.0).collect();
        assert_eq!(hot, vec![2 * 4 + 1]); // pooled row 2, column 1
        assert_eq!(y[[0, 9]], 1.0);

        // shifted kernel tap moves the response by one column
        t.slice_mut(k).fill(0.0);
        t.slice_mut(k)[2 * 5 + 1] = 1.0;
        let y = cnn.forward(&t, x.view()).unwrap().output;
        let hot: Vec<usize> = (0..16).filter(|&i| y[[0, i]] != 0.0).collect();
        assert_eq!(hot, vec![2 * 4 + 1]);
    }

    #[test]
    fn too_small_images_are_rejected() {
        assert!(cnn_output_dims(dims(4, 4, 1), 3, 8).is_err());
        assert_eq!(cnn_output_dims(dims(12, 12, 1), 3, 8).unwrap(), dims(1, 1, 8));
        assert_eq!(cnn_output_dims(dims(16, 20, 1), 3, 8).unwrap(), dims(2, 2, 8));
        let specs = CnnStack::param_specs("cnn", dims(4, 4, 1), 3, 8, 5);
        let t: ParamTree<f64> = init_params(&specs, &mut Prng::new(0)).unwrap();
        assert!(CnnStack::bind(&t, "cnn", dims(4, 4, 1), 3).is_err());
    }

    #[test]
    fn pool_ties_pick_first() {
        let (v, a) = max_pool(&[1.0f64, 1.0, 1.0, 1.0], dims(2, 2, 1));
        assert_eq!((v, a), (vec![1.0], vec![0]));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = dims(12, 12, 1);
        let specs = CnnStack::param_specs("cnn", d, 3, 8, 5);
        let mut prng = Prng::new(4);
        let mut t: ParamTree<f64> = init_params(&specs, &mut prng).unwrap();
        let ids: Vec<_> = t.ids().collect();
        for id in ids {
            if t.get(id).ndim() == 1 {
                t.slice_mut(id).iter_mut().for_each(|v| *v = 0.1 + 0.05 * prng.normal());
            }
        }
        let cnn = CnnStack::bind(&t, "cnn", d, 3).unwrap();
        let x = Array2::from_shape_fn((2, d.len()), |_| prng.normal());
        let weights = Array2::from_shape_fn((2, cnn.out_dim()), |_| prng.normal());
        let loss = |p: &ParamTree<f64>| (&cnn.forward(p, x.view()).unwrap().output * &weights).sum();
        let tr = cnn.forward(&t, x.view()).unwrap();
        let mut grads = t.zeros_like();
        let dx = cnn.backward(&t, &mut grads, &tr, weights.view());
        let report = grad_check(&t, &grads, loss, &GradCheckOptions::with_tolerance(1e-4));
        assert!(report.passed(), "{report:?}");
        for (r, c) in [(0, 17), (1, 70), (1, 143)] {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[r, c]] += 1e-5;
            xm[[r, c]] -= 1e-5;
            let f = |x: &Array2<f64>| (&cnn.forward(&t, x.view()).unwrap().output * &weights).sum();
            assert!(((f(&xp) - f(&xm)) / 2e-5 - dx[[r, c]]).abs() < 1e-7);
        }
    }
}
