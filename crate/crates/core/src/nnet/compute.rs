//! Batched forward pass with cached activations and the matching
//! reverse pass (backprop for dense layers, BPTT for recurrent stacks).
//!
//! Conventions, all row-major with a batch of `B` rows:
//!
//! * dense / head: `y = x·Wᵀ + b`
//! * RNN: `h' = tanh(Wx·x + Wh·h + b)`
//! * GRU: `z = σ(Wz·x + Uz·h + bz)`, `r = σ(Wr·x + Ur·h + br)`,
//!   `h̃ = tanh(Wh·x + Uh·(r⊙h) + bh)`, `h' = (1−z)⊙h + z⊙h̃`
//! * LSTM: `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f⊙c + i⊙g`,
//!   `h' = o⊙tanh(c')`

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};

use super::{sigmoid, Arch, Network, NetworkSpec, Parameters};
use crate::error::{Error, Result};

/// Gradient of the loss with respect to the network output, either after
/// the head activation or before it.
#[derive(Debug, Clone)]
pub enum OutputGrad {
    Activated(Array2<f64>),
    PreActivation(Array2<f64>),
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Array2<f64>,
        pre: Array2<f64>,
        out: Array2<f64>,
    },
    Rnn {
        xs: Vec<Array2<f64>>,
        /// `hs[0]` is the zero initial state.
        hs: Vec<Array2<f64>>,
    },
    Gru {
        xs: Vec<Array2<f64>>,
        hs: Vec<Array2<f64>>,
        zs: Vec<Array2<f64>>,
        rs: Vec<Array2<f64>>,
        cands: Vec<Array2<f64>>,
        rh: Vec<Array2<f64>>,
    },
    Lstm {
        xs: Vec<Array2<f64>>,
        hs: Vec<Array2<f64>>,
        cs: Vec<Array2<f64>>,
        gates: Vec<[Array2<f64>; 4]>,
        tanh_c: Vec<Array2<f64>>,
    },
}

/// Activations recorded by a forward pass, consumed by the reverse pass.
#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<LayerCache>,
    head_in: Array2<f64>,
    head_pre: Array2<f64>,
    pub output: Array2<f64>,
    steps: usize,
}

impl Trace {
    pub fn head_pre(&self) -> &Array2<f64> {
        &self.head_pre
    }

    pub fn batch_size(&self) -> usize {
        self.output.nrows()
    }
}

/// `x·Wᵀ + b` for a batch `x`.
fn affine(x: &ArrayView2<f64>, w: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let mut y = Array2::zeros((x.nrows(), w.nrows()));
    general_mat_mul(1.0, x, &w.t(), 0.0, &mut y);
    y += &b.column(0);
    y
}

/// `y += x·Wᵀ`.
fn add_matmul(y: &mut Array2<f64>, x: &ArrayView2<f64>, w: ArrayView2<f64>) {
    general_mat_mul(1.0, x, &w.t(), 1.0, y);
}

fn grad_view<'a>(
    params: &Parameters,
    grads: &'a mut [f64],
    idx: usize,
) -> ArrayViewMut2<'a, f64> {
    let s = &params.shapes()[idx];
    let o = params.offset(idx);
    ArrayViewMut2::from_shape((s.rows, s.cols), &mut grads[o..o + s.len()])
        .expect("shape table is consistent")
}

/// `dW += daᵀ·x`, `db += Σ_rows da`.
fn accumulate(
    params: &Parameters,
    grads: &mut [f64],
    w_idx: usize,
    b_idx: Option<usize>,
    da: &Array2<f64>,
    x: &ArrayView2<f64>,
) {
    if grads.is_empty() {
        return;
    }
    {
        let mut gw = grad_view(params, grads, w_idx);
        general_mat_mul(1.0, &da.t(), x, 1.0, &mut gw);
    }
    if let Some(bi) = b_idx {
        let mut gb = grad_view(params, grads, bi);
        let col = da.sum_axis(Axis(0));
        gb.column_mut(0).zip_mut_with(&col, |g, v| *g += v);
    }
}

/// `out += da·W` (propagate through `y = x·Wᵀ`).
fn back_into(out: &mut Array2<f64>, da: &Array2<f64>, w: ArrayView2<f64>) {
    general_mat_mul(1.0, da, &w, 1.0, out);
}

fn sig_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(sigmoid);
}

fn tanh_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(f64::tanh);
}

pub(super) fn forward(
    spec: &NetworkSpec,
    params: &Parameters,
    steps: &[Array2<f64>],
) -> Result<Trace> {
    let t_len = steps.len();
    if t_len == 0 {
        return Err(Error::Empty("input sequence"));
    }
    if spec.arch == Arch::Mlp && t_len != 1 {
        return Err(Error::Dimension {
            context: "MLP sequence length".into(),
            expected: 1,
            got: t_len,
        });
    }
    let b = steps[0].nrows();
    for s in steps {
        if s.ncols() != spec.input_dim || s.nrows() != b {
            return Err(Error::Dimension {
                context: format!("{} input width", spec.arch),
                expected: spec.input_dim,
                got: s.ncols(),
            });
        }
    }

    let mut layers = Vec::with_capacity(spec.hidden_dims.len());
    let mut idx = 0usize;
    let mut seq: Vec<Array2<f64>> = steps.to_vec();
    for &h in &spec.hidden_dims {
        match spec.arch {
            Arch::Mlp => {
                let input = seq.pop().expect("one step");
                let pre = affine(&input.view(), params.matrix(idx), params.matrix(idx + 1));
                let act = spec.hidden_activation;
                let out = pre.mapv(|v| act.apply(v));
                seq = vec![out.clone()];
                layers.push(LayerCache::Dense { input, pre, out });
                idx += 2;
            }
            Arch::Rnn => {
                let (wx, wh, bias) = (params.matrix(idx), params.matrix(idx + 1), params.matrix(idx + 2));
                let mut hs = vec![Array2::zeros((b, h))];
                for x in &seq {
                    let mut a = affine(&x.view(), wx, bias);
                    add_matmul(&mut a, &hs.last().unwrap().view(), wh);
                    tanh_inplace(&mut a);
                    hs.push(a);
                }
                let xs = std::mem::replace(&mut seq, hs[1..].to_vec());
                layers.push(LayerCache::Rnn { xs, hs });
                idx += 3;
            }
            Arch::Gru => {
                let m = |k: usize| params.matrix(idx + k);
                let mut hs = vec![Array2::zeros((b, h))];
                let (mut zs, mut rs, mut cands, mut rh_all) = (vec![], vec![], vec![], vec![]);
                for x in &seq {
                    let hp = hs.last().unwrap().view();
                    let mut z = affine(&x.view(), m(0), m(2));
                    add_matmul(&mut z, &hp, m(1));
                    sig_inplace(&mut z);
                    let mut r = affine(&x.view(), m(3), m(5));
                    add_matmul(&mut r, &hp, m(4));
                    sig_inplace(&mut r);
                    let rh = &r * &hp;
                    let mut c = affine(&x.view(), m(6), m(8));
                    add_matmul(&mut c, &rh.view(), m(7));
                    tanh_inplace(&mut c);
                    let mut hn = &hp * &z.mapv(|v| 1.0 - v);
                    hn += &(&z * &c);
                    zs.push(z);
                    rs.push(r);
                    cands.push(c);
                    rh_all.push(rh);
                    hs.push(hn);
                }
                let xs = std::mem::replace(&mut seq, hs[1..].to_vec());
                layers.push(LayerCache::Gru {
                    xs,
                    hs,
                    zs,
                    rs,
                    cands,
                    rh: rh_all,
                });
                idx += 9;
            }
            Arch::Lstm => {
                let m = |k: usize| params.matrix(idx + k);
                let mut hs = vec![Array2::zeros((b, h))];
                let mut cs = vec![Array2::zeros((b, h))];
                let (mut gates, mut tanh_c) = (vec![], vec![]);
                for x in &seq {
                    let hp = hs.last().unwrap().view();
                    let gate = |g: usize, tanh: bool| {
                        let mut a = affine(&x.view(), m(3 * g), m(3 * g + 2));
                        add_matmul(&mut a, &hp, m(3 * g + 1));
                        if tanh {
                            tanh_inplace(&mut a);
                        } else {
                            sig_inplace(&mut a);
                        }
                        a
                    };
                    let (i, f, o, g) = (gate(0, false), gate(1, false), gate(2, false), gate(3, true));
                    let mut c = &f * cs.last().unwrap();
                    c += &(&i * &g);
                    let tc = c.mapv(f64::tanh);
                    let hn = &o * &tc;
                    gates.push([i, f, o, g]);
                    tanh_c.push(tc);
                    cs.push(c);
                    hs.push(hn);
                }
                let xs = std::mem::replace(&mut seq, hs[1..].to_vec());
                layers.push(LayerCache::Lstm {
                    xs,
                    hs,
                    cs,
                    gates,
                    tanh_c,
                });
                idx += 12;
            }
        }
    }

    let head_in = seq.pop().expect("non-empty sequence");
    let head_pre = affine(&head_in.view(), params.matrix(idx), params.matrix(idx + 1));
    let act = spec.output_activation;
    let output = head_pre.mapv(|v| act.apply(v));
    Ok(Trace {
        layers,
        head_in,
        head_pre,
        output,
        steps: t_len,
    })
}

/// Accumulates parameter gradients into `grads` and returns the gradient
/// with respect to every input step.
pub(super) fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    trace: &Trace,
    d_out: OutputGrad,
    grads: &mut [f64],
) -> Result<Vec<Array2<f64>>> {
    // An empty buffer asks for input gradients only.
    if !grads.is_empty() && grads.len() != params.len() {
        return Err(Error::Dimension {
            context: "gradient buffer".into(),
            expected: params.len(),
            got: grads.len(),
        });
    }
    let d_pre = match d_out {
        OutputGrad::PreActivation(g) => g,
        OutputGrad::Activated(g) => {
            if g.dim() != trace.output.dim() {
                return Err(Error::Dimension {
                    context: "output gradient rows".into(),
                    expected: trace.output.nrows(),
                    got: g.nrows(),
                });
            }
            let act = spec.output_activation;
            let mut d = g;
            ndarray::Zip::from(&mut d)
                .and(&trace.head_pre)
                .and(&trace.output)
                .for_each(|d, &x, &y| *d *= act.derivative(x, y));
            d
        }
    };

    let n_shapes = params.shapes().len();
    let head_w = n_shapes - 2;
    accumulate(params, grads, head_w, Some(head_w + 1), &d_pre, &trace.head_in.view());
    let b = d_pre.nrows();
    let mut d_top = Array2::zeros(trace.head_in.dim());
    back_into(&mut d_top, &d_pre, params.matrix(head_w));

    // Gradient w.r.t. each step of the current layer's output sequence.
    // Only the last step receives gradient from the head.
    let mut d_seq: Vec<Array2<f64>> = Vec::new();
    let mut end_idx = head_w;
    for (li, cache) in trace.layers.iter().enumerate().rev() {
        let h = spec.hidden_dims[li];
        let in_dim = if li == 0 {
            spec.input_dim
        } else {
            spec.hidden_dims[li - 1]
        };
        match cache {
            LayerCache::Dense { input, pre, out } => {
                let idx = end_idx - 2;
                let act = spec.hidden_activation;
                let mut da = d_top.clone();
                ndarray::Zip::from(&mut da)
                    .and(pre)
                    .and(out)
                    .for_each(|d, &x, &y| *d *= act.derivative(x, y));
                accumulate(params, grads, idx, Some(idx + 1), &da, &input.view());
                let mut dx = Array2::zeros((b, in_dim));
                back_into(&mut dx, &da, params.matrix(idx));
                d_top = dx;
                end_idx = idx;
            }
            LayerCache::Rnn { xs, hs } => {
                let idx = end_idx - 3;
                let t_len = xs.len();
                let mut d_in = vec![Array2::zeros((b, in_dim)); t_len];
                let mut dh = Array2::<f64>::zeros((b, h));
                for t in (0..t_len).rev() {
                    add_step_grad(&mut dh, &d_seq, &d_top, t, t_len);
                    let mut da = dh.clone();
                    da.zip_mut_with(&hs[t + 1], |d, &y| *d *= 1.0 - y * y);
                    accumulate(params, grads, idx, Some(idx + 2), &da, &xs[t].view());
                    accumulate(params, grads, idx + 1, None, &da, &hs[t].view());
                    back_into(&mut d_in[t], &da, params.matrix(idx));
                    let mut dh_prev = Array2::zeros((b, h));
                    back_into(&mut dh_prev, &da, params.matrix(idx + 1));
                    dh = dh_prev;
                }
                d_seq = d_in;
                end_idx = idx;
            }
            LayerCache::Gru {
                xs,
                hs,
                zs,
                rs,
                cands,
                rh,
            } => {
                let idx = end_idx - 9;
                let t_len = xs.len();
                let mut d_in = vec![Array2::zeros((b, in_dim)); t_len];
                let mut dh = Array2::<f64>::zeros((b, h));
                for t in (0..t_len).rev() {
                    add_step_grad(&mut dh, &d_seq, &d_top, t, t_len);
                    let (hp, z, r, c) = (&hs[t], &zs[t], &rs[t], &cands[t]);
                    let x = xs[t].view();
                    // h' = (1−z)⊙h + z⊙c
                    let mut dh_prev = &dh * &z.mapv(|v| 1.0 - v);
                    let mut da_c = &dh * z;
                    da_c.zip_mut_with(c, |d, &y| *d *= 1.0 - y * y);
                    let mut da_z = &dh * &(c - hp);
                    da_z.zip_mut_with(z, |d, &y| *d *= y * (1.0 - y));

                    accumulate(params, grads, idx + 6, Some(idx + 8), &da_c, &x);
                    accumulate(params, grads, idx + 7, None, &da_c, &rh[t].view());
                    let mut d_rh = Array2::zeros((b, h));
                    back_into(&mut d_rh, &da_c, params.matrix(idx + 7));
                    let mut da_r = &d_rh * hp;
                    da_r.zip_mut_with(r, |d, &y| *d *= y * (1.0 - y));
                    dh_prev += &(&d_rh * r);

                    accumulate(params, grads, idx, Some(idx + 2), &da_z, &x);
                    accumulate(params, grads, idx + 1, None, &da_z, &hp.view());
                    accumulate(params, grads, idx + 3, Some(idx + 5), &da_r, &x);
                    accumulate(params, grads, idx + 4, None, &da_r, &hp.view());

                    back_into(&mut dh_prev, &da_z, params.matrix(idx + 1));
                    back_into(&mut dh_prev, &da_r, params.matrix(idx + 4));
                    back_into(&mut d_in[t], &da_z, params.matrix(idx));
                    back_into(&mut d_in[t], &da_r, params.matrix(idx + 3));
                    back_into(&mut d_in[t], &da_c, params.matrix(idx + 6));
                    dh = dh_prev;
                }
                d_seq = d_in;
                end_idx = idx;
            }
            LayerCache::Lstm {
                xs,
                hs,
                cs,
                gates,
                tanh_c,
            } => {
                let idx = end_idx - 12;
                let t_len = xs.len();
                let mut d_in = vec![Array2::zeros((b, in_dim)); t_len];
                let mut dh = Array2::<f64>::zeros((b, h));
                let mut dc = Array2::<f64>::zeros((b, h));
                for t in (0..t_len).rev() {
                    add_step_grad(&mut dh, &d_seq, &d_top, t, t_len);
                    let [i, f, o, g] = &gates[t];
                    let tc = &tanh_c[t];
                    let x = xs[t].view();
                    let mut da_o = &dh * tc;
                    da_o.zip_mut_with(o, |d, &y| *d *= y * (1.0 - y));
                    let mut dct = &dh * o;
                    dct.zip_mut_with(tc, |d, &y| *d *= 1.0 - y * y);
                    dc += &dct;
                    let mut da_i = &dc * g;
                    da_i.zip_mut_with(i, |d, &y| *d *= y * (1.0 - y));
                    let mut da_f = &dc * &cs[t];
                    da_f.zip_mut_with(f, |d, &y| *d *= y * (1.0 - y));
                    let mut da_g = &dc * i;
                    da_g.zip_mut_with(g, |d, &y| *d *= 1.0 - y * y);
                    let dc_prev = &dc * f;

                    let mut dh_prev = Array2::zeros((b, h));
                    for (k, da) in [&da_i, &da_f, &da_o, &da_g].into_iter().enumerate() {
                        let base = idx + 3 * k;
                        accumulate(params, grads, base, Some(base + 2), da, &x);
                        accumulate(params, grads, base + 1, None, da, &hs[t].view());
                        back_into(&mut d_in[t], da, params.matrix(base));
                        back_into(&mut dh_prev, da, params.matrix(base + 1));
                    }
                    dh = dh_prev;
                    dc = dc_prev;
                }
                d_seq = d_in;
                end_idx = idx;
            }
        }
    }

    if spec.arch == Arch::Mlp || trace.layers.is_empty() {
        Ok(vec![d_top])
    } else {
        debug_assert_eq!(d_seq.len(), trace.steps);
        Ok(d_seq)
    }
}

/// Adds the gradient arriving at output step `t` of a recurrent layer: from
/// the layer above when there is one, otherwise from the head at the last
/// step.
fn add_step_grad(
    dh: &mut Array2<f64>,
    d_seq: &[Array2<f64>],
    d_top: &Array2<f64>,
    t: usize,
    t_len: usize,
) {
    if d_seq.is_empty() {
        if t + 1 == t_len {
            *dh += d_top;
        }
    } else {
        *dh += &d_seq[t];
    }
}

impl Network {
    /// Forward pass keeping the activations needed by [`Network::backward`].
    pub fn forward_batch(&self, steps: &[Array2<f64>]) -> Result<Trace> {
        forward(&self.spec, &self.params, steps)
    }

    /// Reverse pass. Adds parameter gradients into `grads` and returns the
    /// gradient with respect to each input step.
    pub fn backward(
        &self,
        trace: &Trace,
        d_out: OutputGrad,
        grads: &mut [f64],
    ) -> Result<Vec<Array2<f64>>> {
        backward(&self.spec, &self.params, trace, d_out, grads)
    }

    /// Gradient with respect to each input step, skipping parameter
    /// gradients.
    pub fn input_gradients(&self, trace: &Trace, d_out: OutputGrad) -> Result<Vec<Array2<f64>>> {
        backward(&self.spec, &self.params, trace, d_out, &mut [])
    }
}
