//! Minimal dense neural-network engine: forward, analytic backprop, ELU
//! activation, Adam, and checkpoint serialization.
//!
//! Weights are stored column-major (by input coordinate), which makes both
//! sparse-input forward passes and input-gradient computation stream over
//! contiguous memory. Inputs are presented as a sparse (index, value) part
//! plus a dense tail occupying the trailing coordinates; a plain dense
//! vector is just an empty sparse part with a full-width tail.
//!
//! First-layer input coordinates can be classed as individually tracked,
//! "shared ones" (always exactly 1.0 in every sample, e.g. a static
//! topology block), or implicitly frozen. Shared-ones columns receive one
//! common Adam moment: their gradients are identical by construction, so
//! one column's worth of state drives them all. The result matches dense
//! Adam up to float summation order, and within one code path runs are
//! exactly reproducible.
#![allow(clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Per-layer (weight m, weight v, bias m, bias v) Adam moments.
type LayerMoments = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>);

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input width {got} does not match layer width {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("checkpoint stream has wrong magic")]
    BadMagic,
    #[error("checkpoint stream truncated")]
    Truncated,
    #[error("checkpoint stream malformed: {0}")]
    Malformed(String),
}

const MAGIC: &[u8; 4] = b"MLP1";

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// ELU derivative expressed through the activation output.
fn elu_deriv_from_out(y: f64) -> f64 {
    if y > 0.0 {
        1.0
    } else {
        y + 1.0
    }
}

/// Public for derivative-continuity checks.
pub fn elu_fn(x: f64) -> f64 {
    elu(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub input: usize,
    pub output: usize,
    /// Column-major: w[i * output + o] is the weight from input i to unit o.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Fully connected net: ELU on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Sparse-plus-tail view of one network input.
#[derive(Debug, Clone, Copy)]
pub struct MixedInput<'a> {
    pub sparse_idx: &'a [u32],
    pub sparse_val: &'a [f64],
    /// Dense values for the trailing input coordinates.
    pub tail: &'a [f64],
}

impl<'a> MixedInput<'a> {
    pub fn dense(x: &'a [f64]) -> MixedInput<'a> {
        MixedInput {
            sparse_idx: &[],
            sparse_val: &[],
            tail: x,
        }
    }
}

/// Forward cache: the input and every hidden activation.
#[derive(Debug, Clone)]
pub struct Tape {
    sparse_idx: Vec<u32>,
    sparse_val: Vec<f64>,
    tail: Vec<f64>,
    /// Post-activation of each hidden layer.
    hidden: Vec<Vec<f64>>,
}

/// First-layer input column classes for gradient tracking.
#[derive(Debug, Clone)]
pub struct FirstLayerCols {
    pub tracked: Vec<u32>,
    /// Coordinates that are exactly 1.0 in every presented sample.
    pub shared_ones: Vec<u32>,
    slot_of: Vec<i32>,
}

impl FirstLayerCols {
    pub fn new(input: usize, tracked: Vec<u32>, shared_ones: Vec<u32>) -> FirstLayerCols {
        let mut slot_of = vec![-1i32; input];
        for (s, &c) in tracked.iter().enumerate() {
            assert_eq!(slot_of[c as usize], -1, "column {} classed twice", c);
            slot_of[c as usize] = s as i32;
        }
        for &c in &shared_ones {
            assert_eq!(slot_of[c as usize], -1, "column {} classed twice", c);
        }
        FirstLayerCols {
            tracked,
            shared_ones,
            slot_of,
        }
    }

    pub fn all_tracked(input: usize) -> FirstLayerCols {
        FirstLayerCols::new(input, (0..input as u32).collect(), Vec::new())
    }

    #[inline]
    fn slot(&self, col: usize) -> i32 {
        self.slot_of[col]
    }
}

/// Accumulated gradients for one net, shaped by a column plan.
#[derive(Debug, Clone)]
pub struct GradBuf {
    /// Layer-0 weight grads for tracked columns, column-major by slot.
    pub l0_w: Vec<f64>,
    /// Sum of layer-0 pre-activation gradients over all accumulated
    /// samples; doubles as the layer-0 bias gradient and as the common
    /// gradient of every shared-ones column.
    pub l0_delta_sum: Vec<f64>,
    /// Dense {w, b} grads for layers 1 and up.
    pub rest: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GradBuf {
    pub fn new(p: &MlpParams, cols: &FirstLayerCols) -> GradBuf {
        let out0 = p.layers[0].output;
        GradBuf {
            l0_w: vec![0.0; cols.tracked.len() * out0],
            l0_delta_sum: vec![0.0; out0],
            rest: p.layers[1..]
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        self.l0_w.iter_mut().for_each(|x| *x = 0.0);
        self.l0_delta_sum.iter_mut().for_each(|x| *x = 0.0);
        for (w, b) in &mut self.rest {
            w.iter_mut().for_each(|x| *x = 0.0);
            b.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    /// Euclidean norm over everything accumulated (shared columns counted
    /// once per column).
    pub fn norm(&self, cols: &FirstLayerCols) -> f64 {
        let mut s: f64 = self.l0_w.iter().map(|x| x * x).sum();
        let shared: f64 = self.l0_delta_sum.iter().map(|x| x * x).sum();
        s += shared * (cols.shared_ones.len() as f64 + 1.0); // columns + bias
        for (w, b) in &self.rest {
            s += w.iter().map(|x| x * x).sum::<f64>();
            s += b.iter().map(|x| x * x).sum::<f64>();
        }
        s.sqrt()
    }
}

impl MlpParams {
    /// Xavier-uniform weights, zero biases.
    pub fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> MlpParams {
        assert!(dims.len() >= 2, "need at least input and output widths");
        let layers = dims
            .windows(2)
            .map(|d| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    input: fan_in,
                    output: fan_out,
                    w: (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-limit..limit))
                        .collect(),
                    b: vec![0.0; fan_out],
                }
            })
            .collect();
        MlpParams { layers }
    }

    pub fn zeros(dims: &[usize]) -> MlpParams {
        let layers = dims
            .windows(2)
            .map(|d| Layer {
                input: d[0],
                output: d[1],
                w: vec![0.0; d[0] * d[1]],
                b: vec![0.0; d[1]],
            })
            .collect();
        MlpParams { layers }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn layer0_pre(&self, inp: MixedInput, boost: Option<&[f64]>) -> Result<Vec<f64>, NnError> {
        let l0 = &self.layers[0];
        let want = l0.input;
        let got_tail = inp.tail.len();
        if got_tail > want {
            return Err(NnError::DimensionMismatch { want, got: got_tail });
        }
        let tail_base = want - got_tail;
        let out = l0.output;
        let mut pre = l0.b.clone();
        if let Some(bst) = boost {
            for (p, &v) in pre.iter_mut().zip(bst.iter()) {
                *p += v;
            }
        }
        for (&i, &x) in inp.sparse_idx.iter().zip(inp.sparse_val.iter()) {
            let i = i as usize;
            if i >= tail_base {
                return Err(NnError::DimensionMismatch { want: tail_base, got: i });
            }
            let col = &l0.w[i * out..i * out + out];
            for o in 0..out {
                pre[o] += col[o] * x;
            }
        }
        for (j, &x) in inp.tail.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let col = &l0.w[(tail_base + j) * out..(tail_base + j) * out + out];
            for o in 0..out {
                pre[o] += col[o] * x;
            }
        }
        Ok(pre)
    }

    fn dense_layer(l: &Layer, a: &[f64], pre: &mut Vec<f64>) {
        pre.clear();
        pre.extend_from_slice(&l.b);
        let out = l.output;
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let col = &l.w[i * out..i * out + out];
            for o in 0..out {
                pre[o] += col[o] * x;
            }
        }
    }

    /// Forward pass recording a tape for backprop.
    pub fn forward_mixed(
        &self,
        inp: MixedInput,
        boost: Option<&[f64]>,
    ) -> Result<(Vec<f64>, Tape), NnError> {
        let depth = self.layers.len();
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(depth.saturating_sub(1));
        let mut act = self.layer0_pre(inp, boost)?;
        if depth > 1 {
            act.iter_mut().for_each(|x| *x = elu(*x));
            hidden.push(act.clone());
        }
        for (li, l) in self.layers.iter().enumerate().skip(1) {
            let mut pre = Vec::new();
            Self::dense_layer(l, &act, &mut pre);
            if li + 1 < depth {
                pre.iter_mut().for_each(|x| *x = elu(*x));
                hidden.push(pre.clone());
            }
            act = pre;
        }
        Ok((
            act,
            Tape {
                sparse_idx: inp.sparse_idx.to_vec(),
                sparse_val: inp.sparse_val.to_vec(),
                tail: inp.tail.to_vec(),
                hidden,
            },
        ))
    }

    /// Forward pass without a tape.
    pub fn infer_mixed(&self, inp: MixedInput, boost: Option<&[f64]>) -> Result<Vec<f64>, NnError> {
        let depth = self.layers.len();
        let mut act = self.layer0_pre(inp, boost)?;
        if depth > 1 {
            act.iter_mut().for_each(|x| *x = elu(*x));
        }
        for (li, l) in self.layers.iter().enumerate().skip(1) {
            let mut pre = Vec::new();
            Self::dense_layer(l, &act, &mut pre);
            if li + 1 < depth {
                pre.iter_mut().for_each(|x| *x = elu(*x));
            }
            act = pre;
        }
        Ok(act)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        if x.len() != self.input_width() {
            return Err(NnError::DimensionMismatch {
                want: self.input_width(),
                got: x.len(),
            });
        }
        self.forward_mixed(MixedInput::dense(x), None)
    }

    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_width() {
            return Err(NnError::DimensionMismatch {
                want: self.input_width(),
                got: x.len(),
            });
        }
        self.infer_mixed(MixedInput::dense(x), None)
    }

    /// Backpropagates `grad_out`, accumulating parameter gradients into
    /// `sink` (scaled exactly as given) and returning the gradient with
    /// respect to the dense tail of the input.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &[f64],
        cols: &FirstLayerCols,
        sink: &mut GradBuf,
    ) -> Vec<f64> {
        let depth = self.layers.len();
        let mut delta = grad_out.to_vec();
        for li in (1..depth).rev() {
            let l = &self.layers[li];
            let a_in = &tape.hidden[li - 1];
            let (gw, gb) = &mut sink.rest[li - 1];
            let out = l.output;
            for (o, &d) in delta.iter().enumerate() {
                gb[o] += d;
            }
            let mut new_delta = vec![0.0; l.input];
            for (i, &x) in a_in.iter().enumerate() {
                let col = &l.w[i * out..i * out + out];
                let gcol = &mut gw[i * out..i * out + out];
                let mut dot = 0.0;
                for o in 0..out {
                    gcol[o] += delta[o] * x;
                    dot += col[o] * delta[o];
                }
                new_delta[i] = dot * elu_deriv_from_out(x);
            }
            delta = new_delta;
        }
        // layer 0
        let l0 = &self.layers[0];
        let out = l0.output;
        for (o, &d) in delta.iter().enumerate() {
            sink.l0_delta_sum[o] += d;
        }
        let tail_base = l0.input - tape.tail.len();
        for (&i, &x) in tape.sparse_idx.iter().zip(tape.sparse_val.iter()) {
            let slot = cols.slot(i as usize);
            if slot >= 0 {
                let g = &mut sink.l0_w[slot as usize * out..slot as usize * out + out];
                for o in 0..out {
                    g[o] += delta[o] * x;
                }
            }
        }
        let mut grad_tail = vec![0.0; tape.tail.len()];
        for (j, &x) in tape.tail.iter().enumerate() {
            let coord = tail_base + j;
            let slot = cols.slot(coord);
            if slot >= 0 && x != 0.0 {
                let g = &mut sink.l0_w[slot as usize * out..slot as usize * out + out];
                for o in 0..out {
                    g[o] += delta[o] * x;
                }
            }
            let col = &l0.w[coord * out..coord * out + out];
            let mut dot = 0.0;
            for o in 0..out {
                dot += col[o] * delta[o];
            }
            grad_tail[j] = dot;
        }
        grad_tail
    }

    /// Serializes to: magic, layer count, per-layer dims, then per-layer
    /// column-major weights and biases as little-endian f64.
    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.input as u32).to_le_bytes());
            out.extend_from_slice(&(l.output as u32).to_le_bytes());
        }
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Reads one serialized net from the front of `bytes`, returning the
    /// net and the number of bytes consumed.
    pub fn load_prefix(bytes: &[u8]) -> Result<(MlpParams, usize), NnError> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], NnError> {
            if *pos + n > bytes.len() {
                return Err(NnError::Truncated);
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(NnError::BadMagic);
        }
        let nlayers = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        if nlayers == 0 || nlayers > 64 {
            return Err(NnError::Malformed(format!("layer count {}", nlayers)));
        }
        let mut dims = Vec::with_capacity(nlayers);
        for _ in 0..nlayers {
            let i = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let o = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            if i == 0 || o == 0 || i * o > 512 * 1024 * 1024 {
                return Err(NnError::Malformed(format!("layer dims {}x{}", i, o)));
            }
            dims.push((i, o));
        }
        for w in dims.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(NnError::Malformed("layer widths do not chain".into()));
            }
        }
        let mut layers = Vec::with_capacity(nlayers);
        for (i, o) in dims {
            let mut w = vec![0.0; i * o];
            for v in w.iter_mut() {
                *v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            }
            let mut b = vec![0.0; o];
            for v in b.iter_mut() {
                *v = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            }
            layers.push(Layer { input: i, output: o, w, b });
        }
        Ok((MlpParams { layers }, pos))
    }

    pub fn load(bytes: &[u8]) -> Result<MlpParams, NnError> {
        let (p, used) = Self::load_prefix(bytes)?;
        if used != bytes.len() {
            return Err(NnError::Malformed("trailing bytes".into()));
        }
        Ok(p)
    }
}

/// Adam with bias correction, shaped by a first-layer column plan.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    l0_m: Vec<f64>,
    l0_v: Vec<f64>,
    shared_m: Vec<f64>,
    shared_v: Vec<f64>,
    b0_m: Vec<f64>,
    b0_v: Vec<f64>,
    rest: Vec<LayerMoments>,
}

impl AdamState {
    pub fn new(p: &MlpParams, cols: &FirstLayerCols) -> AdamState {
        let out0 = p.layers[0].output;
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            l0_m: vec![0.0; cols.tracked.len() * out0],
            l0_v: vec![0.0; cols.tracked.len() * out0],
            shared_m: vec![0.0; out0],
            shared_v: vec![0.0; out0],
            b0_m: vec![0.0; out0],
            b0_v: vec![0.0; out0],
            rest: p.layers[1..]
                .iter()
                .map(|l| {
                    (
                        vec![0.0; l.w.len()],
                        vec![0.0; l.w.len()],
                        vec![0.0; l.b.len()],
                        vec![0.0; l.b.len()],
                    )
                })
                .collect(),
        }
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    m: &mut [f64],
    v: &mut [f64],
    g: &[f64],
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        let gi = g[i];
        let mi = b1 * m[i] + (1.0 - b1) * gi;
        let vi = b2 * v[i] + (1.0 - b2) * gi * gi;
        m[i] = mi;
        v[i] = vi;
        p[i] -= lr * (mi / c1) / ((vi / c2).sqrt() + eps);
    }
}

/// One Adam step over every parameter class. Shared-ones columns each
/// receive the identical update their common gradient implies; columns in
/// neither class are untouched (their gradient is identically zero).
pub fn adam_step(
    p: &mut MlpParams,
    st: &mut AdamState,
    cols: &FirstLayerCols,
    grads: &GradBuf,
    lr: f64,
) {
    st.t += 1;
    let c1 = 1.0 - st.beta1.powi(st.t as i32);
    let c2 = 1.0 - st.beta2.powi(st.t as i32);
    let (b1, b2, eps) = (st.beta1, st.beta2, st.eps);
    let out0 = p.layers[0].output;

    // tracked first-layer columns
    for (slot, &c) in cols.tracked.iter().enumerate() {
        let base = c as usize * out0;
        let sbase = slot * out0;
        adam_update(
            &mut p.layers[0].w[base..base + out0],
            &mut st.l0_m[sbase..sbase + out0],
            &mut st.l0_v[sbase..sbase + out0],
            &grads.l0_w[sbase..sbase + out0],
            lr,
            b1,
            b2,
            eps,
            c1,
            c2,
        );
    }

    // shared-ones columns: identical gradient, one moment, same delta
    if !cols.shared_ones.is_empty() {
        let mut delta = vec![0.0; out0];
        for o in 0..out0 {
            let gi = grads.l0_delta_sum[o];
            let mi = b1 * st.shared_m[o] + (1.0 - b1) * gi;
            let vi = b2 * st.shared_v[o] + (1.0 - b2) * gi * gi;
            st.shared_m[o] = mi;
            st.shared_v[o] = vi;
            delta[o] = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
        }
        for &c in &cols.shared_ones {
            let base = c as usize * out0;
            for o in 0..out0 {
                p.layers[0].w[base + o] -= delta[o];
            }
        }
    }

    // layer-0 bias: gradient is the delta sum
    adam_update(
        &mut p.layers[0].b,
        &mut st.b0_m,
        &mut st.b0_v,
        &grads.l0_delta_sum,
        lr,
        b1,
        b2,
        eps,
        c1,
        c2,
    );

    for (li, l) in p.layers.iter_mut().enumerate().skip(1) {
        let (gw, gb) = &grads.rest[li - 1];
        let (wm, wv, bm, bv) = &mut st.rest[li - 1];
        adam_update(&mut l.w, wm, wv, gw, lr, b1, b2, eps, c1, c2);
        adam_update(&mut l.b, bm, bv, gb, lr, b1, b2, eps, c1, c2);
    }
}

/// Sum of the given first-layer columns, used as a forward boost for
/// always-one input blocks.
pub fn column_sum(p: &MlpParams, cols: &[u32]) -> Vec<f64> {
    let out = p.layers[0].output;
    let mut s = vec![0.0; out];
    for &c in cols {
        let base = c as usize * out;
        for o in 0..out {
            s[o] += p.layers[0].w[base + o];
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_net_outputs_zero() {
        let p = MlpParams::zeros(&[4, 3, 2]);
        let (y, _) = p.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_adds_bias_on_positive_inputs() {
        let mut p = MlpParams::zeros(&[3, 3]);
        for i in 0..3 {
            p.layers[0].w[i * 3 + i] = 1.0;
            p.layers[0].b[i] = 0.25 * (i as f64 + 1.0);
        }
        let (y, _) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![1.25, 2.5, 3.75]);
    }

    #[test]
    fn elu_matches_closed_form() {
        let mut p = MlpParams::zeros(&[1, 1, 1]);
        p.layers[0].w[0] = 1.0;
        p.layers[1].w[0] = 1.0;
        let (y, _) = p.forward(&[-1.0]).unwrap();
        assert!((y[0] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert!((y[0] + 0.6321).abs() < 1e-4);
        let (y, _) = p.forward(&[2.0]).unwrap();
        assert_eq!(y[0], 2.0);
    }

    #[test]
    fn elu_derivative_is_continuous_at_zero() {
        let h = 1e-7;
        let left = (elu_fn(0.0) - elu_fn(-h)) / h;
        let right = (elu_fn(h) - elu_fn(0.0)) / h;
        assert!((left - right).abs() < 1e-6, "left {} right {}", left, right);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = MlpParams::zeros(&[4, 2]);
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(NnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let mut r = rng(1);
        let p = MlpParams::random(&[3, 4, 2], &mut r);
        let cols = FirstLayerCols::all_tracked(3);
        let (_, tape) = p.forward(&[0.3, -0.2, 0.9]).unwrap();
        let mut sink = GradBuf::new(&p, &cols);
        let gt = p.backward(&tape, &[0.0, 0.0], &cols, &mut sink);
        assert!(gt.iter().all(|&x| x == 0.0));
        assert!(sink.l0_w.iter().all(|&x| x == 0.0));
        assert!(sink.rest.iter().all(|(w, b)| w.iter().all(|&x| x == 0.0)
            && b.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn linear_layer_gradient_is_the_input() {
        let mut r = rng(2);
        let p = MlpParams::random(&[3, 1], &mut r);
        let cols = FirstLayerCols::all_tracked(3);
        let x = [0.4, -1.5, 2.0];
        let (_, tape) = p.forward(&x).unwrap();
        let mut sink = GradBuf::new(&p, &cols);
        p.backward(&tape, &[1.0], &cols, &mut sink);
        for i in 0..3 {
            assert!((sink.l0_w[i] - x[i]).abs() < 1e-15);
        }
        assert_eq!(sink.l0_delta_sum, vec![1.0]);
    }

    fn fd_check(dims: &[usize], seed: u64) -> f64 {
        let mut r = rng(seed);
        let p = MlpParams::random(dims, &mut r);
        let cols = FirstLayerCols::all_tracked(dims[0]);
        let x: Vec<f64> = (0..dims[0]).map(|_| r.gen_range(-1.0..1.0)).collect();
        let probe: Vec<f64> = (0..*dims.last().unwrap())
            .map(|_| r.gen_range(-1.0..1.0))
            .collect();
        let loss = |p: &MlpParams| -> f64 {
            let y = p.infer(&x).unwrap();
            y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = p.forward(&x).unwrap();
        let mut sink = GradBuf::new(&p, &cols);
        let grad_in = p.backward(&tape, &probe, &cols, &mut sink);

        let mut max_rel: f64 = 0.0;
        let mut check = |analytic: f64, fd: f64| {
            let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        };
        let h = 1e-5;
        let mut pm = p.clone();
        for li in 0..p.layers.len() {
            for k in 0..p.layers[li].w.len() {
                pm.layers[li].w[k] = p.layers[li].w[k] + h;
                let up = loss(&pm);
                pm.layers[li].w[k] = p.layers[li].w[k] - h;
                let dn = loss(&pm);
                pm.layers[li].w[k] = p.layers[li].w[k];
                let fd = (up - dn) / (2.0 * h);
                let analytic = if li == 0 {
                    sink.l0_w[k] // all-tracked: slots coincide with coords
                } else {
                    sink.rest[li - 1].0[k]
                };
                check(analytic, fd);
            }
            for k in 0..p.layers[li].b.len() {
                pm.layers[li].b[k] = p.layers[li].b[k] + h;
                let up = loss(&pm);
                pm.layers[li].b[k] = p.layers[li].b[k] - h;
                let dn = loss(&pm);
                pm.layers[li].b[k] = p.layers[li].b[k];
                let fd = (up - dn) / (2.0 * h);
                let analytic = if li == 0 {
                    sink.l0_delta_sum[k]
                } else {
                    sink.rest[li - 1].1[k]
                };
                check(analytic, fd);
            }
        }
        // input gradient
        let mut xm = x.clone();
        for j in 0..x.len() {
            xm[j] = x[j] + h;
            let y = p.infer(&xm).unwrap();
            let up: f64 = y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            xm[j] = x[j] - h;
            let y = p.infer(&xm).unwrap();
            let dn: f64 = y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum();
            xm[j] = x[j];
            check(grad_in[j], (up - dn) / (2.0 * h));
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (i, dims) in [
            vec![2, 3],
            vec![3, 4, 2],
            vec![5, 8, 8, 3],
            vec![1, 1, 1],
            vec![6, 2, 5],
            vec![4, 7, 7, 7, 1],
        ]
        .iter()
        .enumerate()
        {
            let rel = fd_check(dims, 100 + i as u64);
            assert!(rel < 1e-4, "dims {:?} rel {}", dims, rel);
        }
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradients() {
        let mut r = rng(3);
        let mut p = MlpParams::random(&[3, 4, 2], &mut r);
        let cols = FirstLayerCols::all_tracked(3);
        let before = p.clone();
        let mut st = AdamState::new(&p, &cols);
        let grads = GradBuf::new(&p, &cols);
        adam_step(&mut p, &mut st, &cols, &grads, 0.001);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let mut p = MlpParams::zeros(&[1, 1]);
        let cols = FirstLayerCols::all_tracked(1);
        let mut st = AdamState::new(&p, &cols);
        let mut grads = GradBuf::new(&p, &cols);
        grads.l0_w[0] = 0.7; // positive gradient
        for _ in 0..100 {
            adam_step(&mut p, &mut st, &cols, &grads, 0.01);
        }
        assert!(p.layers[0].w[0] < -0.5);
    }

    #[test]
    fn first_adam_step_has_learning_rate_magnitude() {
        let mut p = MlpParams::zeros(&[1, 1]);
        let cols = FirstLayerCols::all_tracked(1);
        let mut st = AdamState::new(&p, &cols);
        let mut grads = GradBuf::new(&p, &cols);
        grads.l0_w[0] = 0.5;
        adam_step(&mut p, &mut st, &cols, &grads, 0.001);
        assert!((p.layers[0].w[0] + 0.001).abs() < 1e-9);
    }

    #[test]
    fn shared_ones_adam_matches_dense_adam() {
        // same net trained two ways: columns 2..4 presented densely as 1.0
        // inputs versus classed as shared ones behind a boost vector; the
        // two differ only in float summation order
        let mut r = rng(9);
        let p0 = MlpParams::random(&[4, 3, 2], &mut r);

        let dense_cols = FirstLayerCols::all_tracked(4);
        let split_cols = FirstLayerCols::new(4, vec![0, 1], vec![2, 3]);

        let mut pa = p0.clone();
        let mut pb = p0.clone();
        let mut sta = AdamState::new(&pa, &dense_cols);
        let mut stb = AdamState::new(&pb, &split_cols);
        let mut ga = GradBuf::new(&pa, &dense_cols);
        let mut gb = GradBuf::new(&pb, &split_cols);

        let close = |a: &MlpParams, b: &MlpParams| {
            a.layers.iter().zip(b.layers.iter()).all(|(x, y)| {
                x.w.iter().zip(y.w.iter()).all(|(u, v)| (u - v).abs() < 1e-9)
                    && x.b.iter().zip(y.b.iter()).all(|(u, v)| (u - v).abs() < 1e-9)
            })
        };

        let samples = [[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]];
        for step in 0..20 {
            ga.zero();
            gb.zero();
            for (si, s) in samples.iter().enumerate() {
                let gout = [0.5 + si as f64 * 0.1, -0.3 + step as f64 * 0.01];
                let xa = [s[0], s[1], 1.0, 1.0];
                let (ya, ta) = pa.forward(&xa).unwrap();
                pa.backward(&ta, &gout, &dense_cols, &mut ga);

                let boost = column_sum(&pb, &split_cols.shared_ones);
                let idx = [0u32, 1u32];
                let val = [s[0], s[1]];
                let (yb, tb) = pb
                    .forward_mixed(
                        MixedInput {
                            sparse_idx: &idx,
                            sparse_val: &val,
                            tail: &[],
                        },
                        Some(&boost),
                    )
                    .unwrap();
                for (a, b) in ya.iter().zip(yb.iter()) {
                    assert!((a - b).abs() < 1e-12);
                }
                pb.backward(&tb, &gout, &split_cols, &mut gb);
            }
            adam_step(&mut pa, &mut sta, &dense_cols, &ga, 0.01);
            adam_step(&mut pb, &mut stb, &split_cols, &gb, 0.01);
            assert!(close(&pa, &pb), "diverged at step {}", step);
        }
    }

    #[test]
    fn save_load_round_trips_bitwise() {
        let mut r = rng(4);
        let p = MlpParams::random(&[5, 7, 3], &mut r);
        let bytes = p.save();
        let q = MlpParams::load(&bytes).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn load_rejects_malformed_streams() {
        let mut r = rng(5);
        let p = MlpParams::random(&[3, 2], &mut r);
        let bytes = p.save();
        assert!(matches!(
            MlpParams::load(&bytes[..bytes.len() - 3]),
            Err(NnError::Truncated)
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(MlpParams::load(&bad), Err(NnError::BadMagic)));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(MlpParams::load(&extra), Err(NnError::Malformed(_))));
    }

    #[test]
    fn forward_is_pure() {
        let mut r = rng(6);
        let p = MlpParams::random(&[4, 6, 2], &mut r);
        let x = [0.1, 0.2, -0.3, 0.4];
        let a = p.infer(&x).unwrap();
        let b = p.infer(&x).unwrap();
        assert_eq!(a, b);
    }
}
