//! Entity-aware word embeddings followed by a piecewise CNN.
//!
//! Per token `i` the encoder builds `x^p_i = [w_i; p^h_i; p^t_i]` and
//! `x^e_i = [w_i; w_head; w_tail]`, blends them through a sigmoid gate
//! sharpened by `lambda`, convolves with `m` kernels of width `window`, and
//! max-pools each kernel over the three entity-delimited segments.

use crate::corpus::{EncodedInstance, Vocabulary};
use crate::error::{Error, Result};
use crate::numerics::{axpy_slice, dot, sigmoid, xavier_init, Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEncoderParams {
    pub word_embeddings: Tensor,
    pub head_positions: Tensor,
    pub tail_positions: Tensor,
    /// `W_e`, `3d_w × 3d_w`.
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
    /// `W_p`, `3d_w × (d_w + 2d_p)`.
    pub proj_weight: Tensor,
    pub proj_bias: Tensor,
    /// `m × (window · 3d_w)`; window slot 0 is the oldest token.
    pub kernels: Tensor,
    pub kernel_bias: Tensor,
    pub lambda: f64,
    pub window: usize,
}

impl SentenceEncoderParams {
    pub fn init(vocab: &Vocabulary, filters: usize, window: usize, lambda: f64, rng: &mut Rng) -> Result<Self> {
        if lambda <= 0.0 {
            return Err(Error::config(format!("smoothing coefficient must be > 0, got {lambda}")));
        }
        if filters == 0 || window == 0 {
            return Err(Error::config("filter count and window size must be positive"));
        }
        let d_w = vocab.word_dim();
        let d_p = vocab.position_dim();
        let d_x = 3 * d_w;
        Ok(SentenceEncoderParams {
            word_embeddings: vocab.word_embeddings.clone(),
            head_positions: vocab.head_positions.clone(),
            tail_positions: vocab.tail_positions.clone(),
            gate_weight: xavier_init(&[d_x, 3 * d_w], rng)?,
            gate_bias: Tensor::zeros(&[d_x]),
            proj_weight: xavier_init(&[d_x, d_w + 2 * d_p], rng)?,
            proj_bias: Tensor::zeros(&[d_x]),
            kernels: xavier_init(&[filters, window * d_x], rng)?,
            kernel_bias: Tensor::zeros(&[filters]),
            lambda,
            window,
        })
    }

    pub fn word_dim(&self) -> usize {
        self.word_embeddings.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.gate_weight.rows()
    }

    pub fn filters(&self) -> usize {
        self.kernels.rows()
    }

    /// Sentence vector width `3m`.
    pub fn output_dim(&self) -> usize {
        3 * self.filters()
    }

    pub fn zeros_like(&self) -> Self {
        SentenceEncoderParams {
            word_embeddings: self.word_embeddings.zeros_like(),
            head_positions: self.head_positions.zeros_like(),
            tail_positions: self.tail_positions.zeros_like(),
            gate_weight: self.gate_weight.zeros_like(),
            gate_bias: self.gate_bias.zeros_like(),
            proj_weight: self.proj_weight.zeros_like(),
            proj_bias: self.proj_bias.zeros_like(),
            kernels: self.kernels.zeros_like(),
            kernel_bias: self.kernel_bias.zeros_like(),
            lambda: self.lambda,
            window: self.window,
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("sentence.word_embeddings", &self.word_embeddings),
            ("sentence.head_positions", &self.head_positions),
            ("sentence.tail_positions", &self.tail_positions),
            ("sentence.gate_weight", &self.gate_weight),
            ("sentence.gate_bias", &self.gate_bias),
            ("sentence.proj_weight", &self.proj_weight),
            ("sentence.proj_bias", &self.proj_bias),
            ("sentence.kernels", &self.kernels),
            ("sentence.kernel_bias", &self.kernel_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.word_embeddings,
            &mut self.head_positions,
            &mut self.tail_positions,
            &mut self.gate_weight,
            &mut self.gate_bias,
            &mut self.proj_weight,
            &mut self.proj_bias,
            &mut self.kernels,
            &mut self.kernel_bias,
        ]
    }
}

/// Sentence representation of width `3m`, laid out kernel-major:
/// `[q_1^(1), q_1^(2), q_1^(3), q_2^(1), …]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceVec {
    pub values: Tensor,
}

fn check_indices(enc: &EncodedInstance, p: &SentenceEncoderParams) -> Result<()> {
    let l = enc.len;
    if l == 0 || l > enc.token_ids.len() {
        return Err(Error::domain(format!("encoded length {l} invalid")));
    }
    let vocab = p.word_embeddings.rows();
    let table = p.head_positions.rows();
    if enc.token_ids[..l].iter().any(|&t| t >= vocab)
        || enc.head_pos >= l
        || enc.tail_pos >= l
        || enc.head_offsets[..l].iter().chain(&enc.tail_offsets[..l]).any(|&o| o >= table)
    {
        return Err(Error::domain("encoded index outside embedding tables"));
    }
    Ok(())
}

/// Builds `X^p` (`l × (d_w+2d_p)`) and `X^e` (`l × 3d_w`).
pub fn embed_tokens(enc: &EncodedInstance, params: &SentenceEncoderParams) -> Result<(Tensor, Tensor)> {
    check_indices(enc, params)?;
    let l = enc.len;
    let d_w = params.word_dim();
    let d_p = params.head_positions.cols();
    let w_head = params.word_embeddings.row(enc.token_ids[enc.head_pos]);
    let w_tail = params.word_embeddings.row(enc.token_ids[enc.tail_pos]);
    let mut xp = Vec::with_capacity(l * (d_w + 2 * d_p));
    let mut xe = Vec::with_capacity(l * 3 * d_w);
    for i in 0..l {
        let w = params.word_embeddings.row(enc.token_ids[i]);
        xp.extend_from_slice(w);
        xp.extend_from_slice(params.head_positions.row(enc.head_offsets[i]));
        xp.extend_from_slice(params.tail_positions.row(enc.tail_offsets[i]));
        xe.extend_from_slice(w);
        xe.extend_from_slice(w_head);
        xe.extend_from_slice(w_tail);
    }
    Ok((
        Tensor::matrix(l, d_w + 2 * d_p, xp)?,
        Tensor::matrix(l, 3 * d_w, xe)?,
    ))
}

struct GateOut {
    x: Tensor,
    gate: Tensor,
    proj: Tensor,
}

fn gate_forward(xp: &Tensor, xe: &Tensor, p: &SentenceEncoderParams) -> Result<GateOut> {
    if xe.cols() != p.gate_weight.cols() || xp.cols() != p.proj_weight.cols() || xp.rows() != xe.rows() {
        return Err(Error::shape(format!(
            "gate inputs {:?}/{:?} vs W_e {:?}, W_p {:?}",
            xp.shape(),
            xe.shape(),
            p.gate_weight.shape(),
            p.proj_weight.shape()
        )));
    }
    if p.gate_weight.rows() != xe.cols() {
        return Err(Error::shape("gate output width must equal the entity-embedding width"));
    }
    let mut pre_a = xe.matmul_t(&p.gate_weight)?;
    pre_a.add_row_vector(&p.gate_bias)?;
    let gate = pre_a.map(|v| sigmoid(p.lambda * v));
    let mut pre_u = xp.matmul_t(&p.proj_weight)?;
    pre_u.add_row_vector(&p.proj_bias)?;
    let proj = pre_u.map(f64::tanh);
    let mut x = gate.clone();
    for ((xv, &e), &u) in x.data_mut().iter_mut().zip(xe.data()).zip(proj.data()) {
        let a = *xv;
        *xv = a * e + (1.0 - a) * u;
    }
    Ok(GateOut { x, gate, proj })
}

/// `X = A ⊙ X^e + (1 − A) ⊙ tanh(W_p X^p + b_p)` with
/// `A = sigmoid(λ (W_e X^e + b_e))`.
pub fn entity_aware_gate(xp: &Tensor, xe: &Tensor, params: &SentenceEncoderParams) -> Result<Tensor> {
    Ok(gate_forward(xp, xe, params)?.x)
}

/// Causal convolution with `window − 1` rows of left zero padding, so every
/// position yields a hidden vector. Returns `l × m`.
pub fn convolve(x: &Tensor, params: &SentenceEncoderParams) -> Result<Tensor> {
    let d_x = x.cols();
    let w = params.window;
    if params.kernels.cols() != w * d_x {
        return Err(Error::shape(format!(
            "kernels {:?} do not match window {w} over width {d_x}",
            params.kernels.shape()
        )));
    }
    let l = x.rows();
    let m = params.filters();
    let mut h = vec![0.0; l * m];
    for j in 0..l {
        let out = &mut h[j * m..(j + 1) * m];
        out.copy_from_slice(params.kernel_bias.data());
        for slot in 0..w {
            // slot 0 holds token j - w + 1
            let Some(tok) = (j + slot + 1).checked_sub(w) else { continue };
            let xrow = x.row(tok);
            for (k, o) in out.iter_mut().enumerate() {
                let krow = &params.kernels.row(k)[slot * d_x..(slot + 1) * d_x];
                *o += dot(krow, xrow);
            }
        }
    }
    Tensor::matrix(l, m, h)
}

/// Argmax rows per kernel and segment; `None` marks an empty segment.
pub type PoolIndex = Vec<[Option<usize>; 3]>;

/// Max over rows `[0, l1)`, `[l1, l2)`, `[l2, l)` of each column of `h`,
/// i.e. 1-based ranges `1..=l1`, `l1+1..=l2`, `l2+1..=l`. Empty segments pool
/// to zero. Output is kernel-major, width `3m`.
pub fn piecewise_max_pool(h: &Tensor, l1: usize, l2: usize) -> Result<(Vec<f64>, PoolIndex)> {
    let l = h.rows();
    if l1 > l2 || l2 > l {
        return Err(Error::domain(format!("segment bounds {l1}, {l2} invalid for length {l}")));
    }
    let m = h.cols();
    let bounds = [(0, l1), (l1, l2), (l2, l)];
    let mut q = vec![0.0; 3 * m];
    let mut idx = vec![[None; 3]; m];
    for k in 0..m {
        for (seg, &(lo, hi)) in bounds.iter().enumerate() {
            let mut best: Option<usize> = None;
            for j in lo..hi {
                if best.is_none_or(|b| h.get(j, k) > h.get(b, k)) {
                    best = Some(j);
                }
            }
            if let Some(b) = best {
                q[3 * k + seg] = h.get(b, k);
            }
            idx[k][seg] = best;
        }
    }
    Ok((q, idx))
}

/// Segment boundaries from 0-based entity positions: each entity closes the
/// segment it sits in.
pub fn segment_bounds(e1_pos: usize, e2_pos: usize) -> (usize, usize) {
    (e1_pos.min(e2_pos) + 1, e1_pos.max(e2_pos) + 1)
}

pub fn pcnn_encode(x: &Tensor, e1_pos: usize, e2_pos: usize, params: &SentenceEncoderParams) -> Result<SentenceVec> {
    let l = x.rows();
    if e1_pos >= l || e2_pos >= l {
        return Err(Error::domain(format!(
            "entity positions ({e1_pos}, {e2_pos}) outside sentence of length {l}"
        )));
    }
    let h = convolve(x, params)?;
    let (l1, l2) = segment_bounds(e1_pos, e2_pos);
    let (q, _) = piecewise_max_pool(&h, l1, l2)?;
    Ok(SentenceVec {
        values: Tensor::vector(q.into_iter().map(|v| v.max(0.0)).collect())?,
    })
}

/// Saved activations for the backward pass.
#[derive(Clone, Debug)]
pub struct SentenceTrace {
    token_ids: Vec<usize>,
    head_offsets: Vec<usize>,
    tail_offsets: Vec<usize>,
    head_token: usize,
    tail_token: usize,
    xp: Tensor,
    xe: Tensor,
    gate: Tensor,
    proj: Tensor,
    x: Tensor,
    pooled: Vec<f64>,
    pool_index: PoolIndex,
}

/// Full forward pass for one encoded sentence.
pub fn encode(enc: &EncodedInstance, params: &SentenceEncoderParams) -> Result<(Vec<f64>, SentenceTrace)> {
    let (xp, xe) = embed_tokens(enc, params)?;
    let GateOut { x, gate, proj } = gate_forward(&xp, &xe, params)?;
    let l = x.rows();
    let h = convolve(&x, params)?;
    let (l1, l2) = segment_bounds(enc.head_pos, enc.tail_pos);
    let (pooled, pool_index) = piecewise_max_pool(&h, l1, l2)?;
    let s: Vec<f64> = pooled.iter().map(|v| v.max(0.0)).collect();
    let trace = SentenceTrace {
        token_ids: enc.token_ids[..l].to_vec(),
        head_offsets: enc.head_offsets[..l].to_vec(),
        tail_offsets: enc.tail_offsets[..l].to_vec(),
        head_token: enc.token_ids[enc.head_pos],
        tail_token: enc.token_ids[enc.tail_pos],
        xp,
        xe,
        gate,
        proj,
        x,
        pooled,
        pool_index,
    };
    Ok((s, trace))
}

/// Accumulates parameter gradients given `d loss / d s`.
pub fn backward(trace: &SentenceTrace, ds: &[f64], params: &SentenceEncoderParams, grads: &mut SentenceEncoderParams) -> Result<()> {
    let m = params.filters();
    let l = trace.x.rows();
    let d_x = trace.x.cols();
    let w = params.window;
    if ds.len() != 3 * m {
        return Err(Error::shape(format!("sentence gradient of width {} for 3m = {}", ds.len(), 3 * m)));
    }

    // ReLU and max-pool: route each segment gradient to its argmax row.
    let mut dh = vec![0.0; l * m];
    for k in 0..m {
        for seg in 0..3 {
            let g = ds[3 * k + seg];
            if g == 0.0 || trace.pooled[3 * k + seg] <= 0.0 {
                continue;
            }
            if let Some(j) = trace.pool_index[k][seg] {
                dh[j * m + k] += g;
            }
        }
    }

    // convolution
    let mut dx = Tensor::zeros(&[l, d_x]);
    for j in 0..l {
        let dhj = &dh[j * m..(j + 1) * m];
        if dhj.iter().all(|&v| v == 0.0) {
            continue;
        }
        axpy_slice(grads.kernel_bias.data_mut(), 1.0, dhj);
        for slot in 0..w {
            let Some(tok) = (j + slot + 1).checked_sub(w) else { continue };
            for (k, &g) in dhj.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let range = slot * d_x..(slot + 1) * d_x;
                axpy_slice(&mut grads.kernels.row_mut(k)[range.clone()], g, trace.x.row(tok));
                axpy_slice(dx.row_mut(tok), g, &params.kernels.row(k)[range]);
            }
        }
    }

    // gate
    let lambda = params.lambda;
    let mut dxe = Tensor::zeros(trace.xe.shape());
    let mut dpre_a = Tensor::zeros(trace.gate.shape());
    let mut dpre_u = Tensor::zeros(trace.proj.shape());
    for idx in 0..l * d_x {
        let g = dx.data()[idx];
        if g == 0.0 {
            continue;
        }
        let a = trace.gate.data()[idx];
        let u = trace.proj.data()[idx];
        let e = trace.xe.data()[idx];
        dxe.data_mut()[idx] = g * a;
        dpre_a.data_mut()[idx] = g * (e - u) * a * (1.0 - a) * lambda;
        dpre_u.data_mut()[idx] = g * (1.0 - a) * (1.0 - u * u);
    }
    grads.gate_weight.add_assign(&dpre_a.t_matmul(&trace.xe)?)?;
    grads.proj_weight.add_assign(&dpre_u.t_matmul(&trace.xp)?)?;
    for i in 0..l {
        axpy_slice(grads.gate_bias.data_mut(), 1.0, dpre_a.row(i));
        axpy_slice(grads.proj_bias.data_mut(), 1.0, dpre_u.row(i));
    }
    dxe.add_assign(&dpre_a.matmul(&params.gate_weight)?)?;
    let dxp = dpre_u.matmul(&params.proj_weight)?;

    // scatter into embedding tables
    let d_w = params.word_dim();
    let d_p = params.head_positions.cols();
    for i in 0..l {
        let rp = dxp.row(i);
        let re = dxe.row(i);
        axpy_slice(grads.word_embeddings.row_mut(trace.token_ids[i]), 1.0, &rp[..d_w]);
        axpy_slice(grads.head_positions.row_mut(trace.head_offsets[i]), 1.0, &rp[d_w..d_w + d_p]);
        axpy_slice(grads.tail_positions.row_mut(trace.tail_offsets[i]), 1.0, &rp[d_w + d_p..]);
        axpy_slice(grads.word_embeddings.row_mut(trace.token_ids[i]), 1.0, &re[..d_w]);
        axpy_slice(grads.word_embeddings.row_mut(trace.head_token), 1.0, &re[d_w..2 * d_w]);
        axpy_slice(grads.word_embeddings.row_mut(trace.tail_token), 1.0, &re[2 * d_w..]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, encode_instance, group_bags, BagMode, Instance, Mention};
    use crate::numerics::{finite_diff_check_per_tensor, Rng};

    fn tiny(d_w: usize, d_p: usize, m: usize, window: usize, lambda: f64, seed: u64) -> (SentenceEncoderParams, EncodedInstance) {
        let tokens: Vec<String> = ["the", "acme", "hired", "bob", "in", "may"].iter().map(|s| s.to_string()).collect();
        let inst = Instance {
            tokens,
            head: Mention { text: "acme".into(), start: 1, end: 2, type_id: 0 },
            tail: Mention { text: "bob".into(), start: 3, end: 4, type_id: 1 },
            relation: Some(1),
            valid: None,
        };
        let bags = group_bags(vec![inst.clone()], BagMode::Train).unwrap();
        let mut rng = Rng::new(seed);
        let vocab = build_vocabulary(&bags, None, d_w, d_p, 8, &mut rng).unwrap();
        let mut p = SentenceEncoderParams::init(&vocab, m, window, lambda, &mut rng).unwrap();
        for t in [&mut p.gate_bias, &mut p.proj_bias, &mut p.kernel_bias] {
            for v in t.data_mut() {
                *v = rng.uniform(-0.3, 0.3);
            }
        }
        let enc = encode_instance(&inst, &vocab, 8).unwrap();
        (p, enc)
    }

    #[test]
    fn embedding_widths_follow_word_and_position_sizes() {
        let (p, enc) = tiny(50, 5, 4, 3, 17.0, 1);
        let (xp, xe) = embed_tokens(&enc, &p).unwrap();
        assert_eq!(xp.cols(), 60);
        assert_eq!(xe.cols(), 150);
        // token 1 is the head word: first and second thirds agree
        let row = xe.row(1);
        assert_eq!(&row[..50], &row[50..100]);
    }

    #[test]
    fn pad_token_has_zero_word_part() {
        let (p, mut enc) = tiny(4, 2, 3, 3, 17.0, 1);
        enc.token_ids[0] = crate::corpus::PAD_ID;
        let (xp, _) = embed_tokens(&enc, &p).unwrap();
        assert!(xp.row(0)[..4].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gate_limits() {
        let (mut p, enc) = tiny(4, 2, 3, 3, 17.0, 2);
        let (xp, xe) = embed_tokens(&enc, &p).unwrap();
        p.gate_weight.fill(0.0);
        p.gate_bias.fill(0.0);
        let x = entity_aware_gate(&xp, &xe, &p).unwrap();
        let mut pre = xp.matmul_t(&p.proj_weight).unwrap();
        pre.add_row_vector(&p.proj_bias).unwrap();
        for ((xv, e), u) in x.data().iter().zip(xe.data()).zip(pre.data()) {
            assert!((xv - (0.5 * e + 0.5 * u.tanh())).abs() < 1e-15);
        }
        p.gate_bias.fill(1.0);
        p.lambda = 1e3;
        let x = entity_aware_gate(&xp, &xe, &p).unwrap();
        assert!(x.max_abs_diff(&xe) < 1e-12);
    }

    #[test]
    fn pooling_example_and_empty_segment() {
        let h = Tensor::matrix(4, 1, vec![5.0, 1.0, 7.0, 2.0]).unwrap();
        let (q, _) = piecewise_max_pool(&h, 2, 3).unwrap();
        assert_eq!(q, vec![5.0, 7.0, 2.0]);
        let (q, idx) = piecewise_max_pool(&h, 0, 3).unwrap();
        assert_eq!(q, vec![0.0, 7.0, 2.0]);
        assert_eq!(idx[0][0], None);
        assert!(piecewise_max_pool(&h, 3, 2).is_err());
    }

    #[test]
    fn output_width_is_three_m() {
        let (p, enc) = tiny(4, 2, 230, 3, 17.0, 3);
        let (s, _) = encode(&enc, &p).unwrap();
        assert_eq!(s.len(), 690);
        let x = Tensor::zeros(&[5, 12]);
        assert!(pcnn_encode(&x, 5, 1, &p).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (p, enc) = tiny(4, 2, 3, 3, 2.0, 5);
        let mut rng = Rng::new(99);
        let weights: Vec<f64> = (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let loss = |p: &SentenceEncoderParams| -> f64 {
            let (s, _) = encode(&enc, p).unwrap();
            s.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, trace) = encode(&enc, &p).unwrap();
        let mut grads = p.zeros_like();
        backward(&trace, &weights, &p, &mut grads).unwrap();
        let tensors: Vec<Tensor> = p.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        let analytic: Vec<Tensor> = grads.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        let errs = finite_diff_check_per_tensor(
            |ts| {
                let mut q = p.clone();
                for (dst, src) in q.tensors_mut().into_iter().zip(ts) {
                    *dst = src.clone();
                }
                loss(&q)
            },
            &tensors,
            &analytic,
            1e-6,
        )
        .unwrap();
        for ((name, _), e) in p.tensors().iter().zip(&errs) {
            assert!(*e < 1e-4, "{name}: {e}");
        }
    }
}
