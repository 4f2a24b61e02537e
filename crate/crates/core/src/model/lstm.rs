//! Stacked (optionally bidirectional) LSTM with a per-step linear head,
//! including exact backpropagation through time.
//!
//! Gate packing inside each 4h block is [input, forget, candidate,
//! output].

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellParams {
    /// (4h, in_dim)
    pub w_ih: Array2<f64>,
    /// (4h, h)
    pub w_hh: Array2<f64>,
    /// (4h)
    pub b: Array1<f64>,
}

impl CellParams {
    fn zeros(in_dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: Array2::zeros((4 * hidden, in_dim)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            b: Array1::zeros(4 * hidden),
        }
    }

    fn init(in_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let mut cell = Self::zeros(in_dim, hidden);
        cell.w_ih.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        cell.w_hh.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        cell.b.iter_mut().for_each(|v| *v = rng.gen_range(-k..k));
        cell
    }

    fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerParams {
    pub fwd: CellParams,
    pub bwd: Option<CellParams>,
}

/// Full parameter set: stacked layers plus the linear head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LayerParams>,
    pub head_w: Array1<f64>,
    pub head_b: f64,
}

impl LstmParams {
    /// Seeded uniform initialization in the PyTorch style
    /// (U(-1/sqrt(h), 1/sqrt(h))), filled in a fixed order.
    pub fn init(
        input_dim: usize,
        hidden: usize,
        layers: usize,
        bidirectional: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let dirs = if bidirectional { 2 } else { 1 };
        let mut layer_params = Vec::with_capacity(layers);
        for l in 0..layers {
            let in_dim = if l == 0 { input_dim } else { hidden * dirs };
            let fwd = CellParams::init(in_dim, hidden, rng);
            let bwd = bidirectional.then(|| CellParams::init(in_dim, hidden, rng));
            layer_params.push(LayerParams { fwd, bwd });
        }
        let out_dim = hidden * dirs;
        let k = 1.0 / (out_dim as f64).sqrt();
        let head_w = Array1::from_shape_fn(out_dim, |_| rng.gen_range(-k..k));
        let head_b = rng.gen_range(-k..k);
        Self {
            layers: layer_params,
            head_w,
            head_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    fwd: CellParams::zeros(l.fwd.w_ih.ncols(), l.fwd.hidden()),
                    bwd: l
                        .bwd
                        .as_ref()
                        .map(|b| CellParams::zeros(b.w_ih.ncols(), b.hidden())),
                })
                .collect(),
            head_w: Array1::zeros(self.head_w.len()),
            head_b: 0.0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fwd.w_ih.ncols()
    }

    /// Flattens every parameter into one vector, in a fixed order
    /// (layers bottom-up, forward cell then backward, w_ih / w_hh / b,
    /// then the head).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let push_cell = |c: &CellParams, out: &mut Vec<f64>| {
            out.extend(c.w_ih.iter());
            out.extend(c.w_hh.iter());
            out.extend(c.b.iter());
        };
        for l in &self.layers {
            push_cell(&l.fwd, &mut out);
            if let Some(b) = &l.bwd {
                push_cell(b, &mut out);
            }
        }
        out.extend(self.head_w.iter());
        out.push(self.head_b);
        out
    }

    /// Inverse of [`to_flat`].
    pub fn assign_from_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let take_cell = |c: &mut CellParams, pos: &mut usize| {
            for v in c.w_ih.iter_mut().chain(c.w_hh.iter_mut()).chain(c.b.iter_mut()) {
                *v = flat[*pos];
                *pos += 1;
            }
        };
        for l in &mut self.layers {
            take_cell(&mut l.fwd, &mut pos);
            if let Some(b) = &mut l.bwd {
                take_cell(b, &mut pos);
            }
        }
        for v in self.head_w.iter_mut() {
            *v = flat[pos];
            pos += 1;
        }
        self.head_b = flat[pos];
        debug_assert_eq!(pos + 1, flat.len());
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|v| v.is_finite())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-timestep activations retained for the backward pass.
pub struct CellCache {
    xs: Vec<Array1<f64>>,
    i: Vec<Array1<f64>>,
    f: Vec<Array1<f64>>,
    g: Vec<Array1<f64>>,
    o: Vec<Array1<f64>>,
    c: Vec<Array1<f64>>,
    tanh_c: Vec<Array1<f64>>,
    h: Vec<Array1<f64>>,
}

fn cell_forward(p: &CellParams, xs: Vec<Array1<f64>>) -> CellCache {
    let h = p.hidden();
    let t = xs.len();
    let mut cache = CellCache {
        xs,
        i: Vec::with_capacity(t),
        f: Vec::with_capacity(t),
        g: Vec::with_capacity(t),
        o: Vec::with_capacity(t),
        c: Vec::with_capacity(t),
        tanh_c: Vec::with_capacity(t),
        h: Vec::with_capacity(t),
    };
    let mut h_prev = Array1::zeros(h);
    let mut c_prev: Array1<f64> = Array1::zeros(h);
    for x in &cache.xs {
        let z = p.w_ih.dot(x) + p.w_hh.dot(&h_prev) + &p.b;
        let gate_i = z.slice(ndarray::s![0..h]).mapv(sigmoid);
        let gate_f = z.slice(ndarray::s![h..2 * h]).mapv(sigmoid);
        let gate_g = z.slice(ndarray::s![2 * h..3 * h]).mapv(f64::tanh);
        let gate_o = z.slice(ndarray::s![3 * h..4 * h]).mapv(sigmoid);
        let c = &gate_f * &c_prev + &gate_i * &gate_g;
        let tanh_c = c.mapv(f64::tanh);
        let h_t = &gate_o * &tanh_c;
        cache.i.push(gate_i);
        cache.f.push(gate_f);
        cache.g.push(gate_g);
        cache.o.push(gate_o);
        cache.c.push(c.clone());
        cache.tanh_c.push(tanh_c);
        cache.h.push(h_t.clone());
        h_prev = h_t;
        c_prev = c;
    }
    cache
}

/// BPTT through one cell. `dh_out` is the loss gradient on each h output;
/// returns the gradient on each input and accumulates parameter gradients
/// into `grads`.
fn cell_backward(
    p: &CellParams,
    cache: &CellCache,
    dh_out: &[Array1<f64>],
    grads: &mut CellParams,
) -> Vec<Array1<f64>> {
    let h = p.hidden();
    let t = cache.xs.len();
    let mut dxs = vec![Array1::zeros(p.w_ih.ncols()); t];
    let mut dh_next: Array1<f64> = Array1::zeros(h);
    let mut dc_next: Array1<f64> = Array1::zeros(h);
    for step in (0..t).rev() {
        let dh = &dh_out[step] + &dh_next;
        let (i, f, g, o) = (
            &cache.i[step],
            &cache.f[step],
            &cache.g[step],
            &cache.o[step],
        );
        let tanh_c = &cache.tanh_c[step];
        let d_o = &dh * tanh_c;
        let dc = &dh * o * tanh_c.mapv(|v| 1.0 - v * v) + &dc_next;
        let di = &dc * g;
        let dg = &dc * i;
        let zero = Array1::zeros(h);
        let c_prev = if step > 0 { &cache.c[step - 1] } else { &zero };
        let df = &dc * c_prev;

        let mut dz = Array1::zeros(4 * h);
        dz.slice_mut(ndarray::s![0..h])
            .assign(&(&di * i * &i.mapv(|v| 1.0 - v)));
        dz.slice_mut(ndarray::s![h..2 * h])
            .assign(&(&df * f * &f.mapv(|v| 1.0 - v)));
        dz.slice_mut(ndarray::s![2 * h..3 * h])
            .assign(&(&dg * &g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(ndarray::s![3 * h..4 * h])
            .assign(&(&d_o * o * &o.mapv(|v| 1.0 - v)));

        let h_prev = if step > 0 { &cache.h[step - 1] } else { &zero };
        // Outer products accumulated row by row.
        for (r, &dzr) in dz.iter().enumerate() {
            let mut wih_row = grads.w_ih.row_mut(r);
            wih_row.scaled_add(dzr, &cache.xs[step]);
            let mut whh_row = grads.w_hh.row_mut(r);
            whh_row.scaled_add(dzr, h_prev);
        }
        grads.b += &dz;

        dxs[step] = p.w_ih.t().dot(&dz);
        dh_next = p.w_hh.t().dot(&dz);
        dc_next = &dc * f;
    }
    dxs
}

/// Retained activations for a full forward pass over one window.
pub struct ForwardCache {
    layers: Vec<(CellCache, Option<CellCache>)>,
    last_out: Vec<Array1<f64>>,
}

/// Runs the stacked LSTM over a T x D window; returns per-step scalar
/// outputs and the cache for [`backward`].
pub fn forward(
    params: &LstmParams,
    features: &Array2<f64>,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    if features.ncols() != params.input_dim() {
        return Err(ModelError::DimensionMismatch {
            expected: params.input_dim(),
            got: features.ncols(),
        });
    }
    if features.nrows() == 0 {
        return Err(ModelError::EmptyInput);
    }
    let t = features.nrows();
    let mut inputs: Vec<Array1<f64>> = features.rows().into_iter().map(|r| r.to_owned()).collect();
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let fwd_cache = cell_forward(&layer.fwd, inputs.clone());
        let bwd_cache = layer.bwd.as_ref().map(|cell| {
            let mut rev = inputs.clone();
            rev.reverse();
            cell_forward(cell, rev)
        });
        inputs = (0..t)
            .map(|step| match &bwd_cache {
                Some(bc) => {
                    let mut v = fwd_cache.h[step].to_vec();
                    v.extend(bc.h[t - 1 - step].iter());
                    Array1::from_vec(v)
                }
                None => fwd_cache.h[step].clone(),
            })
            .collect();
        caches.push((fwd_cache, bwd_cache));
    }
    let preds = inputs
        .iter()
        .map(|out| params.head_w.dot(out) + params.head_b)
        .collect();
    Ok((
        preds,
        ForwardCache {
            layers: caches,
            last_out: inputs,
        },
    ))
}

/// Exact gradients of a scalar loss with per-step gradient `dpred`,
/// accumulated into `grads`.
pub fn backward(
    params: &LstmParams,
    cache: &ForwardCache,
    dpred: &[f64],
    grads: &mut LstmParams,
) {
    let t = dpred.len();
    debug_assert_eq!(t, cache.last_out.len());
    let hidden = params.layers[0].fwd.hidden();

    let mut dout: Vec<Array1<f64>> = (0..t)
        .map(|step| {
            grads.head_w.scaled_add(dpred[step], &cache.last_out[step]);
            grads.head_b += dpred[step];
            &params.head_w * dpred[step]
        })
        .collect();

    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let (fwd_cache, bwd_cache) = &cache.layers[l];
        let layer_grads = &mut grads.layers[l];

        let dx_total = match (&layer.bwd, bwd_cache) {
            (Some(bwd_cell), Some(bc)) => {
                let dh_fwd: Vec<Array1<f64>> = dout
                    .iter()
                    .map(|d| d.slice(ndarray::s![0..hidden]).to_owned())
                    .collect();
                // The backward cell runs on reversed time; its output at
                // internal step k corresponds to window step t-1-k.
                let dh_bwd: Vec<Array1<f64>> = (0..t)
                    .map(|k| {
                        dout[t - 1 - k]
                            .slice(ndarray::s![hidden..2 * hidden])
                            .to_owned()
                    })
                    .collect();
                let dx_fwd = cell_backward(&layer.fwd, fwd_cache, &dh_fwd, &mut layer_grads.fwd);
                let dx_bwd = cell_backward(
                    bwd_cell,
                    bc,
                    &dh_bwd,
                    layer_grads.bwd.as_mut().expect("matching grads shape"),
                );
                (0..t)
                    .map(|step| &dx_fwd[step] + &dx_bwd[t - 1 - step])
                    .collect()
            }
            _ => cell_backward(&layer.fwd, fwd_cache, &dout, &mut layer_grads.fwd),
        };
        dout = dx_total;
    }
}
