use super::forward::ForwardTrace;
use super::matrix::{dot, Matrix};
use super::{Gradients, ModelError, ModelParams, StepGradient};

/// Backpropagates `F = sum g[n][i] * log o[n][i]` through a trace.
///
/// The log-softmax Jacobian is applied here, so `grad` is expressed directly
/// in terms of output log-probabilities. The result is linear in `grad`.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    grad: &StepGradient,
) -> Result<Gradients, ModelError> {
    let steps = trace.num_steps();
    let vocab = params.target_vocab_size();
    let mut out = params.zeros_like();
    if grad.is_empty() {
        return Ok(out);
    }

    // dense per-row gradients, only up to the last touched row
    let mut last = 0;
    for &(n, i, _) in grad.entries() {
        if n >= steps {
            return Err(ModelError::IndexOutOfRange {
                kind: "trace step",
                index: n,
                size: steps,
            });
        }
        if i >= vocab {
            return Err(ModelError::IndexOutOfRange {
                kind: "target",
                index: i,
                size: vocab,
            });
        }
        last = last.max(n);
    }
    let mut row_grads = Matrix::zeros(last + 1, vocab);
    for &(n, i, g) in grad.entries() {
        row_grads.set(n, i, g);
    }

    let d = params.d;
    let enc = &trace.encoding;
    let t_len = enc.states.rows();
    let mut d_states = Matrix::zeros(t_len, d);
    let mut d_carry_next = vec![0.0; d];
    let mut d_logits = vec![0.0; vocab];
    let mut d_mixed = vec![0.0; d];
    let mut d_hidden = vec![0.0; d];
    let mut d_context = vec![0.0; d];
    let mut d_query = vec![0.0; d];
    let mut tmp = vec![0.0; d];

    for n in (0..=last).rev() {
        let cache = &trace.steps[n];
        let g = row_grads.row(n);
        let g_sum: f64 = g.iter().sum();

        // log-softmax: dz_k = g_k - (sum g) p_k
        d_mixed.iter_mut().for_each(|v| *v = 0.0);
        if g.iter().any(|&v| v != 0.0) {
            let logp = trace.log_probs.row(n);
            for ((dz, &gk), &lp) in d_logits.iter_mut().zip(g).zip(logp) {
                *dz = gk - g_sum * lp.exp();
            }
            let mixed: Vec<f64> = cache
                .hidden
                .iter()
                .zip(&cache.context)
                .map(|(s, c)| s + c)
                .collect();
            out.out_proj.add_outer(&mixed, &d_logits);
            for (b, dz) in out.out_bias.row_mut(0).iter_mut().zip(&d_logits) {
                *b += dz;
            }
            params.out_proj.left_mul_t(&d_logits, &mut d_mixed);
        }

        for k in 0..d {
            d_hidden[k] = d_mixed[k] + d_carry_next[k];
            d_context[k] = d_mixed[k] + d_carry_next[k];
        }

        // attention: context = sum_j a_j h_j, a = softmax(query . h_j)
        let d_attn: Vec<f64> = (0..t_len).map(|j| dot(&d_context, enc.states.row(j))).collect();
        let mean: f64 = cache.attn.iter().zip(&d_attn).map(|(a, da)| a * da).sum();
        d_query.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..t_len {
            let a = cache.attn[j];
            let de = a * (d_attn[j] - mean);
            let h = enc.states.row(j).to_vec();
            let dh = d_states.row_mut(j);
            for k in 0..d {
                dh[k] += a * d_context[k] + de * cache.query[k];
                d_query[k] += de * h[k];
            }
        }
        out.attention.add_outer(&cache.hidden, &d_query);
        params.attention.left_mul_t(&d_query, &mut tmp);
        for k in 0..d {
            d_hidden[k] += tmp[k];
        }

        // hidden = tanh(emb[token] W_in + carry_in W_state)
        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&cache.hidden)
            .map(|(dh, h)| dh * (1.0 - h * h))
            .collect();
        let emb = params.tgt_embed.row(cache.token);
        out.dec_input.add_outer(emb, &d_pre);
        params.dec_input.left_mul_t(&d_pre, &mut tmp);
        for (e, v) in out.tgt_embed.row_mut(cache.token).iter_mut().zip(&tmp) {
            *e += v;
        }
        out.dec_state.add_outer(&cache.carry_in, &d_pre);
        params.dec_state.left_mul_t(&d_pre, &mut d_carry_next);
    }

    // initial carry is the last encoder state (context starts at zero)
    for (dh, c) in d_states.row_mut(t_len - 1).iter_mut().zip(&d_carry_next) {
        *dh += c;
    }

    // encoder: h_j = tanh(src[x_j] + h_{j-1} W_enc)
    let mut d_prev = vec![0.0; d];
    for j in (0..t_len).rev() {
        let h = enc.states.row(j);
        let d_pre: Vec<f64> = d_states
            .row(j)
            .iter()
            .zip(&d_prev)
            .zip(h)
            .map(|((a, b), hv)| (a + b) * (1.0 - hv * hv))
            .collect();
        for (e, v) in out.src_embed.row_mut(enc.input[j]).iter_mut().zip(&d_pre) {
            *e += v;
        }
        if j > 0 {
            out.enc_proj.add_outer(enc.states.row(j - 1), &d_pre);
            params.enc_proj.left_mul_t(&d_pre, &mut d_prev);
        }
    }
    Ok(out)
}
