//! Stacked (optionally bidirectional) LSTM with a linear output layer.
//!
//! Standard LSTM cell without peepholes or projection:
//!
//! ```text
//! z_t = W_ih x_t + W_hh h_{t-1} + b        (gate rows: i, f, g, o)
//! c_t = σ(f) ⊙ c_{t-1} + σ(i) ⊙ tanh(g)
//! h_t = σ(o) ⊙ tanh(c_t)
//! ```
//!
//! Backward directions run the same recurrence over reversed time and their
//! outputs are concatenated after the forward direction's.

use super::model::{DirSlots, Geometry};
use super::{ModelParams, Scalar, Tensor};
use crate::{Error, Result};

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<S> {
    steps: usize,
    layer_inputs: Vec<Vec<S>>,
    dirs: Vec<Vec<DirCache<S>>>,
    top: Vec<S>,
    pub logits: Tensor<S>,
}

/// Per-direction activations indexed by time (not processing order).
struct DirCache<S> {
    gates: Vec<S>,
    cells: Vec<S>,
    tanh_c: Vec<S>,
    hidden: Vec<S>,
}

/// Logits for every input frame: a `T x num_outputs` tensor.
pub fn forward<S: Scalar>(model: &ModelParams<S>, features: &Tensor<S>) -> Result<Tensor<S>> {
    forward_cached(model, features).map(|c| c.logits)
}

pub fn forward_cached<S: Scalar>(
    model: &ModelParams<S>,
    features: &Tensor<S>,
) -> Result<ForwardCache<S>> {
    let spec = model.spec();
    let steps = features.rows();
    if features.cols() != spec.input_dim || features.shape().len() != 2 {
        return Err(Error::shape(format!(
            "features are {:?}, model expects T x {}",
            features.shape(),
            spec.input_dim
        )));
    }
    let geo = model.geometry();
    let p = model.params();

    let mut layer_inputs = Vec::with_capacity(geo.layers.len());
    let mut dirs = Vec::with_capacity(geo.layers.len());
    let mut current = features.data().to_vec();
    for layer in &geo.layers {
        let caches: Vec<DirCache<S>> = layer
            .iter()
            .enumerate()
            .map(|(d, slots)| run_direction(p, slots, &current, steps, d == 1))
            .collect();
        let next = concat_directions(&caches, layer[0].hidden, steps);
        layer_inputs.push(std::mem::replace(&mut current, next));
        dirs.push(caches);
    }

    let mut logits = vec![S::zero(); steps * geo.outputs];
    let w = &p[geo.out_w..geo.out_b];
    let b = &p[geo.out_b..geo.total];
    for t in 0..steps {
        let out = &mut logits[t * geo.outputs..(t + 1) * geo.outputs];
        out.copy_from_slice(b);
        gemv_acc(
            w,
            geo.top_width,
            &current[t * geo.top_width..(t + 1) * geo.top_width],
            out,
        );
    }
    let logits = Tensor::from_vec(vec![steps, geo.outputs], logits)?;
    logits.ensure_finite("forward")?;
    Ok(ForwardCache {
        steps,
        layer_inputs,
        dirs,
        top: current,
        logits,
    })
}

fn concat_directions<S: Scalar>(caches: &[DirCache<S>], hidden: usize, steps: usize) -> Vec<S> {
    if caches.len() == 1 {
        return caches[0].hidden.clone();
    }
    let width = hidden * caches.len();
    let mut out = vec![S::zero(); steps * width];
    for t in 0..steps {
        for (d, c) in caches.iter().enumerate() {
            out[t * width + d * hidden..t * width + (d + 1) * hidden]
                .copy_from_slice(&c.hidden[t * hidden..(t + 1) * hidden]);
        }
    }
    out
}

fn time_order(steps: usize, reverse: bool) -> impl Iterator<Item = usize> {
    (0..steps).map(move |i| if reverse { steps - 1 - i } else { i })
}

fn run_direction<S: Scalar>(
    p: &[S],
    s: &DirSlots,
    x: &[S],
    steps: usize,
    reverse: bool,
) -> DirCache<S> {
    let (n_in, h) = (s.input, s.hidden);
    let w_ih = &p[s.w_ih_range()];
    let w_hh = &p[s.w_hh_range()];
    let bias = &p[s.bias_range()];

    let mut cache = DirCache {
        gates: vec![S::zero(); steps * 4 * h],
        cells: vec![S::zero(); steps * h],
        tanh_c: vec![S::zero(); steps * h],
        hidden: vec![S::zero(); steps * h],
    };
    let mut z = vec![S::zero(); 4 * h];
    let mut prev: Option<usize> = None;
    for t in time_order(steps, reverse) {
        z.copy_from_slice(bias);
        gemv_acc(w_ih, n_in, &x[t * n_in..(t + 1) * n_in], &mut z);
        if let Some(tp) = prev {
            gemv_acc(w_hh, h, &cache.hidden[tp * h..(tp + 1) * h], &mut z);
        }
        for j in 0..h {
            let i_g = z[j].sigmoid();
            let f_g = z[h + j].sigmoid();
            let g_g = z[2 * h + j].tanh();
            let o_g = z[3 * h + j].sigmoid();
            let c_prev = prev.map_or(S::zero(), |tp| cache.cells[tp * h + j]);
            let c = f_g * c_prev + i_g * g_g;
            let tc = c.tanh();
            let g = &mut cache.gates[t * 4 * h..(t + 1) * 4 * h];
            g[j] = i_g;
            g[h + j] = f_g;
            g[2 * h + j] = g_g;
            g[3 * h + j] = o_g;
            cache.cells[t * h + j] = c;
            cache.tanh_c[t * h + j] = tc;
            cache.hidden[t * h + j] = o_g * tc;
        }
        prev = Some(t);
    }
    cache
}

/// Accumulates parameter gradients into `grad` given the loss gradient with
/// respect to the logits (`T x num_outputs`).
pub(crate) fn backward_from_logits<S: Scalar>(
    model: &ModelParams<S>,
    cache: &ForwardCache<S>,
    dlogits: &[S],
    grad: &mut [S],
) {
    let geo: &Geometry = model.geometry();
    let p = model.params();
    let steps = cache.steps;
    let width = geo.top_width;
    let outputs = geo.outputs;

    let mut dtop = vec![S::zero(); steps * width];
    {
        let w = &p[geo.out_w..geo.out_b];
        let (gw, gb) = grad[geo.out_w..geo.total].split_at_mut(geo.out_b - geo.out_w);
        for t in 0..steps {
            let dl = &dlogits[t * outputs..(t + 1) * outputs];
            let y = &cache.top[t * width..(t + 1) * width];
            for (b, &d) in gb.iter_mut().zip(dl) {
                *b += d;
            }
            ger_acc(gw, width, dl, y);
            gemv_t_acc(w, width, dl, &mut dtop[t * width..(t + 1) * width]);
        }
    }

    for (l, layer) in geo.layers.iter().enumerate().rev() {
        let x = &cache.layer_inputs[l];
        let n_in = layer[0].input;
        let h = layer[0].hidden;
        let dirs = layer.len();
        let need_dx = l > 0;
        let mut dx = if need_dx {
            vec![S::zero(); steps * n_in]
        } else {
            Vec::new()
        };
        for (d, slots) in layer.iter().enumerate() {
            let mut dh = vec![S::zero(); steps * h];
            for t in 0..steps {
                dh[t * h..(t + 1) * h]
                    .copy_from_slice(&dtop[t * h * dirs + d * h..t * h * dirs + (d + 1) * h]);
            }
            backprop_direction(
                p,
                grad,
                slots,
                x,
                &cache.dirs[l][d],
                &dh,
                need_dx.then_some(dx.as_mut_slice()),
                steps,
                d == 1,
            );
        }
        dtop = dx;
    }
}

#[allow(clippy::too_many_arguments)]
fn backprop_direction<S: Scalar>(
    p: &[S],
    grad: &mut [S],
    s: &DirSlots,
    x: &[S],
    cache: &DirCache<S>,
    dh_out: &[S],
    mut dx: Option<&mut [S]>,
    steps: usize,
    reverse: bool,
) {
    let (n_in, h) = (s.input, s.hidden);
    let w_ih = &p[s.w_ih_range()];
    let w_hh = &p[s.w_hh_range()];

    let mut g_ih = vec![S::zero(); 4 * h * n_in];
    let mut g_hh = vec![S::zero(); 4 * h * h];
    let mut g_b = vec![S::zero(); 4 * h];

    let mut dh_rec = vec![S::zero(); h];
    let mut dc_rec = vec![S::zero(); h];
    let mut dz = vec![S::zero(); 4 * h];
    let order: Vec<usize> = time_order(steps, reverse).collect();
    for (k, &t) in order.iter().enumerate().rev() {
        let prev = k.checked_sub(1).map(|kk| order[kk]);
        let g = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        for j in 0..h {
            let (i_g, f_g, g_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
            let tc = cache.tanh_c[t * h + j];
            let dh = dh_out[t * h + j] + dh_rec[j];
            let dc = dh * o_g * (S::one() - tc * tc) + dc_rec[j];
            let c_prev = prev.map_or(S::zero(), |tp| cache.cells[tp * h + j]);
            dz[j] = dc * g_g * i_g * (S::one() - i_g);
            dz[h + j] = dc * c_prev * f_g * (S::one() - f_g);
            dz[2 * h + j] = dc * i_g * (S::one() - g_g * g_g);
            dz[3 * h + j] = dh * tc * o_g * (S::one() - o_g);
            dc_rec[j] = dc * f_g;
        }
        for (b, &d) in g_b.iter_mut().zip(&dz) {
            *b += d;
        }
        let x_t = &x[t * n_in..(t + 1) * n_in];
        ger_acc(&mut g_ih, n_in, &dz, x_t);
        if let Some(dx) = dx.as_deref_mut() {
            gemv_t_acc(w_ih, n_in, &dz, &mut dx[t * n_in..(t + 1) * n_in]);
        }
        dh_rec.iter_mut().for_each(|v| *v = S::zero());
        if let Some(tp) = prev {
            ger_acc(&mut g_hh, h, &dz, &cache.hidden[tp * h..(tp + 1) * h]);
            gemv_t_acc(w_hh, h, &dz, &mut dh_rec);
        }
    }
    add_into(&mut grad[s.w_ih_range()], &g_ih);
    add_into(&mut grad[s.w_hh_range()], &g_hh);
    add_into(&mut grad[s.bias_range()], &g_b);
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `out[r] += Σ_c w[r, c] v[c]` for a row-major matrix with `cols` columns.
#[inline]
fn gemv_acc<S: Scalar>(w: &[S], cols: usize, v: &[S], out: &mut [S]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = S::zero();
        for (&a, &b) in row.iter().zip(v) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// `out[c] += Σ_r w[r, c] v[r]`.
#[inline]
fn gemv_t_acc<S: Scalar>(w: &[S], cols: usize, v: &[S], out: &mut [S]) {
    for (&vr, row) in v.iter().zip(w.chunks_exact(cols)) {
        if vr == S::zero() {
            continue;
        }
        for (o, &a) in out.iter_mut().zip(row) {
            *o += vr * a;
        }
    }
}

/// `g[r, c] += a[r] b[c]`.
#[inline]
fn ger_acc<S: Scalar>(g: &mut [S], cols: usize, a: &[S], b: &[S]) {
    for (&ar, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        if ar == S::zero() {
            continue;
        }
        for (o, &bc) in row.iter_mut().zip(b) {
            *o += ar * bc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::ModelSpec;
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let spec = ModelSpec {
            input_dim: 4,
            layer_sizes: vec![3, 3],
            num_outputs: 5,
            bidirectional: true,
            lookahead_frames: 0,
        };
        let m = ModelParams::<f64>::zeros(spec).unwrap();
        let x =
            Tensor::from_vec(vec![6, 4], (0..24).map(|v| v as f64 * 0.3 - 2.0).collect()).unwrap();
        let y = forward(&m, &x).unwrap();
        assert_eq!(y.shape(), &[6, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_wrong_input_dim() {
        let spec = ModelSpec {
            input_dim: 4,
            layer_sizes: vec![2],
            num_outputs: 2,
            bidirectional: false,
            lookahead_frames: 0,
        };
        let m = ModelParams::<f32>::init(spec, 0).unwrap();
        let x = Tensor::<f32>::zeros(&[3, 5]);
        assert!(matches!(forward(&m, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let spec = ModelSpec {
            input_dim: 1,
            layer_sizes: vec![],
            num_outputs: 1,
            bidirectional: false,
            lookahead_frames: 0,
        };
        let m = ModelParams::<f32>::from_vec(spec, vec![f32::MAX, f32::MAX]).unwrap();
        let x = Tensor::from_vec(vec![1, 1], vec![10.0f32]).unwrap();
        assert!(matches!(forward(&m, &x), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matches_hand_unrolled_scalar_lstm() {
        // One unit, one input, one output. Gate weights (i, f, g, o).
        let (wi, wh, b) = (
            [0.5, -0.3, 0.8, 0.2],
            [0.1, 0.4, -0.6, 0.7],
            [0.05, 0.3, -0.1, 0.0],
        );
        let (wo, bo) = (1.5, -0.25);
        let mut params = Vec::new();
        params.extend_from_slice(&wi);
        params.extend_from_slice(&wh);
        params.extend_from_slice(&b);
        params.extend_from_slice(&[wo, bo]);
        let spec = ModelSpec {
            input_dim: 1,
            layer_sizes: vec![1],
            num_outputs: 1,
            bidirectional: false,
            lookahead_frames: 0,
        };
        let m = ModelParams::<f64>::from_vec(spec, params).unwrap();
        let xs = [0.7, -1.2];
        let y = forward(&m, &Tensor::from_vec(vec![2, 1], xs.to_vec()).unwrap()).unwrap();

        let (mut h, mut c) = (0.0f64, 0.0f64);
        let mut expect = Vec::new();
        for &x in &xs {
            let i = sig(wi[0] * x + wh[0] * h + b[0]);
            let f = sig(wi[1] * x + wh[1] * h + b[1]);
            let g = (wi[2] * x + wh[2] * h + b[2]).tanh();
            let o = sig(wi[3] * x + wh[3] * h + b[3]);
            c = f * c + i * g;
            h = o * c.tanh();
            expect.push(wo * h + bo);
        }
        for (a, e) in y.data().iter().zip(&expect) {
            assert!((a - e).abs() < 1e-14, "{a} vs {e}");
        }
    }
}
