//! Layers, sequential composition, and the activation tape for backward.

use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};

/// Force a standard (row-major contiguous) layout, copying only when the
/// input is laid out otherwise.
fn standard2<F: Float>(a: Array2<F>) -> Array2<F> {
    if a.is_standard_layout() {
        a
    } else {
        let dim = a.dim();
        Array2::from_shape_vec(dim, a.iter().copied().collect()).unwrap()
    }
}

use super::conv::{col2im, im2col, ConvShape};
use super::{conv_init, Feat, Float, ParamId, ParamStore};
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        shape: ConvShape,
        w: ParamId,
        b: ParamId,
    },
    InstanceNorm {
        gamma: ParamId,
        beta: ParamId,
        eps: f64,
    },
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    /// Nearest-neighbor upsampling by an integer factor.
    Upsample {
        factor: usize,
    },
    /// y = x + inner(x); input and output shapes must match.
    Residual(Sequential),
}

/// Per-layer activations saved by the forward pass.
pub enum TapeEntry<F: Float> {
    Conv { cols: Array2<F>, in_hw: (usize, usize) },
    InstanceNorm { xhat: Feat<F>, inv_std: Vec<F> },
    Sign { y: Feat<F> },
    Tanh { y: Feat<F> },
    Upsample,
    Residual(Tape<F>),
}

pub struct Tape<F: Float> {
    entries: Vec<TapeEntry<F>>,
}

/// A plain stack of layers over one parameter store.
#[derive(Debug, Clone, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Sequential { layers }
    }

    pub fn forward<F: Float>(&self, store: &ParamStore<F>, x: Feat<F>) -> Feat<F> {
        self.forward_t(store, x).0
    }

    /// Forward pass recording what backward needs.
    pub fn forward_t<F: Float>(&self, store: &ParamStore<F>, mut x: Feat<F>) -> (Feat<F>, Tape<F>) {
        let mut entries = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, entry) = layer_forward(layer, store, x);
            entries.push(entry);
            x = y;
        }
        (x, Tape { entries })
    }

    /// Backpropagate `gout` through the stack. Parameter gradients are
    /// accumulated into `store` only when `accum` is set; input gradients
    /// are always produced, so a frozen network can still pass gradients
    /// to whatever feeds it.
    pub fn backward<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &Tape<F>,
        gout: Feat<F>,
        accum: bool,
    ) -> Feat<F> {
        self.backward_impl(store, tape, gout, accum, true)
    }

    /// Like [`Sequential::backward`] but skips the first layer's input
    /// gradient (a zero array comes back). Saves the bulkiest col2im when
    /// the caller feeds the network from constants.
    pub fn backward_params_only<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &Tape<F>,
        gout: Feat<F>,
        accum: bool,
    ) {
        let _ = self.backward_impl(store, tape, gout, accum, false);
    }

    fn backward_impl<F: Float>(
        &self,
        store: &mut ParamStore<F>,
        tape: &Tape<F>,
        mut gout: Feat<F>,
        accum: bool,
        need_input_grad: bool,
    ) -> Feat<F> {
        debug_assert_eq!(tape.entries.len(), self.layers.len());
        for (i, (layer, entry)) in self.layers.iter().zip(tape.entries.iter()).enumerate().rev() {
            let need_input = need_input_grad || i > 0;
            gout = layer_backward(layer, store, entry, gout, accum, need_input);
        }
        gout
    }
}

fn layer_forward<F: Float>(
    layer: &Layer,
    store: &ParamStore<F>,
    x: Feat<F>,
) -> (Feat<F>, TapeEntry<F>) {
    match layer {
        Layer::Conv { shape, w, b } => {
            let (_, h, wd) = x.dim();
            let cols = im2col(shape, &x);
            let wmat = store
                .value(*w)
                .view()
                .into_shape_with_order((shape.out_ch, shape.in_ch * shape.k * shape.k))
                .unwrap();
            let mut out_mat = standard2(wmat.dot(&cols));
            let bias = store.value(*b);
            for (mut row, &bv) in out_mat.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
            let (oh, ow) = shape.out_hw(h, wd);
            let out = out_mat
                .into_shape_with_order((shape.out_ch, oh, ow))
                .unwrap();
            (out, TapeEntry::Conv { cols, in_hw: (h, wd) })
        }
        Layer::InstanceNorm { gamma, beta, eps } => {
            let (c, h, w) = x.dim();
            let hw = h * w;
            let n = F::from_f64(hw as f64);
            let mut xhat = x;
            let mut inv_std = Vec::with_capacity(c);
            let g = store.value(*gamma);
            let b = store.value(*beta);
            let mut y = Array3::<F>::zeros((c, h, w));
            let xs = xhat.as_slice_mut().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for ci in 0..c {
                let plane = &mut xs[ci * hw..(ci + 1) * hw];
                let mut mean = F::zero();
                for &v in plane.iter() {
                    mean += v;
                }
                mean = mean / n;
                let mut var = F::zero();
                for &v in plane.iter() {
                    let d = v - mean;
                    var += d * d;
                }
                var = var / n;
                let inv = F::one() / (var + F::from_f64(*eps)).sqrt();
                inv_std.push(inv);
                let (gc, bc) = (g[ci], b[ci]);
                let out = &mut ys[ci * hw..(ci + 1) * hw];
                for (xv, yv) in plane.iter_mut().zip(out.iter_mut()) {
                    let nrm = (*xv - mean) * inv;
                    *xv = nrm;
                    *yv = gc * nrm + bc;
                }
            }
            (y, TapeEntry::InstanceNorm { xhat, inv_std })
        }
        Layer::Relu => {
            let y = x.mapv_into(|v| if v > F::zero() { v } else { F::zero() });
            (y.clone(), TapeEntry::Sign { y })
        }
        Layer::LeakyRelu { slope } => {
            let s = F::from_f64(*slope);
            let y = x.mapv_into(|v| if v > F::zero() { v } else { v * s });
            (y.clone(), TapeEntry::Sign { y })
        }
        Layer::Tanh => {
            let y = x.mapv_into(|v| v.tanh());
            (y.clone(), TapeEntry::Tanh { y })
        }
        Layer::Upsample { factor } => {
            let (c, h, w) = x.dim();
            let r = *factor;
            let (hh, ww) = (h * r, w * r);
            let mut y = Array3::<F>::zeros((c, hh, ww));
            let xs = x.as_slice().unwrap();
            let ys = y.as_slice_mut().unwrap();
            for ci in 0..c {
                for iy in 0..h {
                    let src = &xs[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                    let first_row = (ci * hh + iy * r) * ww;
                    {
                        let dst = &mut ys[first_row..first_row + ww];
                        for (ox, chunk) in dst.chunks_exact_mut(r).enumerate() {
                            chunk.fill(src[ox]);
                        }
                    }
                    for rep in 1..r {
                        let (head, tail) = ys.split_at_mut(first_row + rep * ww);
                        tail[..ww].copy_from_slice(&head[first_row..first_row + ww]);
                    }
                }
            }
            (y, TapeEntry::Upsample)
        }
        Layer::Residual(inner) => {
            let (fy, tape) = inner.forward_t(store, x.clone());
            (x + &fy, TapeEntry::Residual(tape))
        }
    }
}

fn layer_backward<F: Float>(
    layer: &Layer,
    store: &mut ParamStore<F>,
    entry: &TapeEntry<F>,
    gout: Feat<F>,
    accum: bool,
    need_input: bool,
) -> Feat<F> {
    match (layer, entry) {
        (Layer::Conv { shape, w, b }, TapeEntry::Conv { cols, in_hw }) => {
            let (oh, ow) = shape.out_hw(in_hw.0, in_hw.1);
            let n = oh * ow;
            let gmat = gout
                .into_shape_with_order((shape.out_ch, n))
                .unwrap();
            let kk = shape.in_ch * shape.k * shape.k;
            if accum {
                // `dot` may hand back a transposed layout when n == 1, so
                // accumulate through a reshaped view of the grad instead.
                let dw = gmat.dot(&cols.t());
                let mut gw = store
                    .grad_mut(*w)
                    .view_mut()
                    .into_shape_with_order((shape.out_ch, kk))
                    .unwrap();
                gw += &dw;
                let db = gmat.sum_axis(Axis(1));
                *store.grad_mut(*b) += &db.into_dyn();
            }
            if !need_input {
                return Feat::zeros((shape.in_ch, in_hw.0, in_hw.1));
            }
            let wmat = store
                .value(*w)
                .view()
                .into_shape_with_order((shape.out_ch, kk))
                .unwrap();
            let dcols = standard2(wmat.t().dot(&gmat));
            col2im(shape, &dcols.view(), in_hw.0, in_hw.1)
        }
        (Layer::InstanceNorm { gamma, beta, .. }, TapeEntry::InstanceNorm { xhat, inv_std }) => {
            let (c, h, w) = xhat.dim();
            let n = F::from_f64((h * w) as f64);
            let mut dx = Array3::<F>::zeros((c, h, w));
            for ci in 0..c {
                let gy = gout.index_axis(Axis(0), ci);
                let xh = xhat.index_axis(Axis(0), ci);
                let gc = store.value(*gamma)[ci];
                let dgamma: F = gy.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum();
                let dbeta: F = gy.iter().copied().sum();
                if accum {
                    let gg = store.grad_mut(*gamma);
                    gg[ci] = gg[ci] + dgamma;
                    let gb = store.grad_mut(*beta);
                    gb[ci] = gb[ci] + dbeta;
                }
                // dxhat = gy * gamma; dx = inv_std * (dxhat - mean(dxhat)
                //         - xhat * mean(dxhat * xhat))
                let m1 = dgamma * gc / n; // mean(dxhat * xhat)
                let m0 = dbeta * gc / n; // mean(dxhat)
                let inv = inv_std[ci];
                let mut dplane = dx.index_axis_mut(Axis(0), ci);
                for ((d, &g), &xv) in dplane.iter_mut().zip(gy.iter()).zip(xh.iter()) {
                    *d = inv * (g * gc - m0 - xv * m1);
                }
            }
            dx
        }
        (Layer::Relu, TapeEntry::Sign { y }) => {
            let mut dx = gout;
            dx.zip_mut_with(y, |g, &v| {
                if v <= F::zero() {
                    *g = F::zero();
                }
            });
            dx
        }
        (Layer::LeakyRelu { slope }, TapeEntry::Sign { y }) => {
            let s = F::from_f64(*slope);
            let mut dx = gout;
            dx.zip_mut_with(y, |g, &v| {
                if v <= F::zero() {
                    *g = *g * s;
                }
            });
            dx
        }
        (Layer::Tanh, TapeEntry::Tanh { y }) => {
            let mut dx = gout;
            dx.zip_mut_with(y, |g, &v| {
                *g = *g * (F::one() - v * v);
            });
            dx
        }
        (Layer::Upsample { factor }, TapeEntry::Upsample) => {
            let (c, hh, ww) = gout.dim();
            let r = *factor;
            let (h, w) = (hh / r, ww / r);
            let mut dx = Array3::<F>::zeros((c, h, w));
            let gs = gout.as_slice().unwrap();
            let ds = dx.as_slice_mut().unwrap();
            for ci in 0..c {
                for yy in 0..hh {
                    let src = &gs[(ci * hh + yy) * ww..(ci * hh + yy + 1) * ww];
                    let dst = &mut ds[(ci * h + yy / r) * w..(ci * h + yy / r + 1) * w];
                    for (ox, chunk) in src.chunks_exact(r).enumerate() {
                        let mut acc = F::zero();
                        for &v in chunk {
                            acc += v;
                        }
                        dst[ox] += acc;
                    }
                }
            }
            dx
        }
        (Layer::Residual(inner), TapeEntry::Residual(tape)) => {
            let dinner = inner.backward(store, tape, gout.clone(), accum);
            gout + &dinner
        }
        _ => unreachable!("tape entry does not match layer"),
    }
}

/// Add a convolution's parameters to `store` and return the layer.
/// `gain` scales the He init; zero gives an all-zero kernel.
#[allow(clippy::too_many_arguments)]
pub fn conv<F: Float>(
    store: &mut ParamStore<F>,
    rng: &mut StreamRng,
    name: &str,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gain: f64,
) -> Layer {
    let shape = ConvShape {
        in_ch,
        out_ch,
        k,
        stride,
        pad,
    };
    let w = store.add(format!("{name}.w"), conv_init(out_ch, in_ch, k, gain, rng));
    let b = store.add(format!("{name}.b"), ArrayD::zeros(IxDyn(&[out_ch])));
    Layer::Conv { shape, w, b }
}

/// Instance normalization with learnable affine parameters.
pub fn instance_norm<F: Float>(store: &mut ParamStore<F>, name: &str, ch: usize) -> Layer {
    let gamma = store.add(format!("{name}.gamma"), ArrayD::ones(IxDyn(&[ch])));
    let beta = store.add(format!("{name}.beta"), ArrayD::zeros(IxDyn(&[ch])));
    Layer::InstanceNorm {
        gamma,
        beta,
        eps: 1e-5,
    }
}
