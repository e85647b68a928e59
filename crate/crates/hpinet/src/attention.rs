//! Patch-level attention built on the tape.
//!
//! Two sublayer shapes are used. The global path pools every patch to a
//! normalized token, scores all token pairs with inner products (diagonal
//! zeroed), picks each patch's best match, and fuses the pair with
//! cross-attention where queries come from the patch and keys/values from
//! its match. The local path is standard pre-LN self-attention within a
//! patch followed by a GELU feed-forward sublayer, with no positional
//! embedding anywhere: the 3x3 convolutions elsewhere in the block carry
//! positional information implicitly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HpiError, Result};
use crate::scalar::Scalar;
use crate::tape::{GradTape, SelectKind, TensorId};
use crate::tensor::Tensor;

/// Epsilon used by every layer-norm site in the network.
pub const LN_EPS: f64 = 1e-5;

/// Weight ids of one attention sublayer: pre-LN parameters and the four
/// projection matrices (no biases). Shared across all patches of a block.
#[derive(Clone, Copy, Debug)]
pub struct AttnIds {
    pub ln_gamma: TensorId,
    pub ln_beta: TensorId,
    pub w_q: TensorId,
    pub w_k: TensorId,
    pub w_v: TensorId,
    pub w_o: TensorId,
}

/// Weight ids of the feed-forward sublayer (its own pre-LN site).
#[derive(Clone, Copy, Debug)]
pub struct FfnIds {
    pub ln_gamma: TensorId,
    pub ln_beta: TensorId,
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
}

/// Partner-selection behavior of the global path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SelectMode {
    /// Deterministic argmax; consumes no randomness. Used for inference.
    Hard,
    /// Straight-through Gumbel selection: hard forward, soft backward.
    /// Logits are `s/tau` plus Gumbel noise, so tau -> 0 recovers Hard.
    Gumbel { tau: f64 },
    /// Fully soft mixture; exists so gradient checks can difference the
    /// same backward rule the straight-through estimator uses.
    Soft { tau: f64 },
}

/// What the global path selected, for reporting.
#[derive(Clone, Debug)]
pub struct SelectionTrace {
    pub partners: Vec<usize>,
    pub similarities: Vec<f64>,
}

/// Pool each patch to one token: spatial mean then parameter-free layer
/// normalization over channels.
pub fn pool_tokens<T: Scalar>(tape: &mut GradTape<T>, patches: TensorId) -> Result<TensorId> {
    let pooled = tape.mean_rows(patches)?;
    let c = *tape.dims(pooled).last().unwrap();
    let gamma = tape.constant(Tensor::full(&[c], T::one()));
    let beta = tape.constant(Tensor::zeros(&[c]));
    tape.layer_norm(pooled, gamma, beta, LN_EPS)
}

/// All pairwise token inner products with the diagonal forced to zero.
pub fn similarity_map<T: Scalar>(tape: &mut GradTape<T>, tokens: TensorId) -> Result<TensorId> {
    let d = tape.dims(tokens).to_vec();
    if d.len() != 2 || d[0] < 2 {
        return Err(HpiError::Shape(format!("similarity_map needs [n>=2, c] tokens, got {d:?}")));
    }
    let t_t = tape.permute(tokens, vec![1, 0])?;
    let raw = tape.matmul(tokens, t_t)?;
    tape.zero_diag(raw)
}

/// Linear projection of the last axis: [.., c] x [c, d] -> [.., d].
fn project<T: Scalar>(tape: &mut GradTape<T>, x: TensorId, w: TensorId) -> Result<TensorId> {
    let dims = tape.dims(x).to_vec();
    let c = *dims.last().unwrap();
    let rows: usize = dims[..dims.len() - 1].iter().product();
    let flat = tape.reshape(x, vec![rows, c])?;
    let y = tape.matmul(flat, w)?;
    let d_out = tape.dims(y)[1];
    let mut out_dims = dims;
    *out_dims.last_mut().unwrap() = d_out;
    tape.reshape(y, out_dims)
}

/// [n, r, d] -> [n*h, r, d/h]
fn split_heads<T: Scalar>(tape: &mut GradTape<T>, x: TensorId, heads: usize) -> Result<TensorId> {
    let d = tape.dims(x).to_vec();
    let (n, r, c) = (d[0], d[1], d[2]);
    if c % heads != 0 {
        return Err(HpiError::Shape(format!("width {c} not divisible by {heads} heads")));
    }
    let s = tape.reshape(x, vec![n, r, heads, c / heads])?;
    let p = tape.permute(s, vec![0, 2, 1, 3])?;
    tape.reshape(p, vec![n * heads, r, c / heads])
}

/// [n*h, r, d/h] -> [n, r, d]
fn merge_heads<T: Scalar>(tape: &mut GradTape<T>, x: TensorId, heads: usize) -> Result<TensorId> {
    let d = tape.dims(x).to_vec();
    let (nh, r, ch) = (d[0], d[1], d[2]);
    let n = nh / heads;
    let s = tape.reshape(x, vec![n, heads, r, ch])?;
    let p = tape.permute(s, vec![0, 2, 1, 3])?;
    tape.reshape(p, vec![n, r, heads * ch])
}

/// Pre-LN residual cross-attention: queries from `x`, keys/values from
/// `kv`; both sides share the sublayer's LN parameters, so `kv == x`
/// reduces exactly to self-attention.
pub fn cross_attention<T: Scalar>(
    tape: &mut GradTape<T>,
    x: TensorId,
    kv: TensorId,
    w: &AttnIds,
    heads: usize,
) -> Result<TensorId> {
    let in_dims = tape.dims(x).to_vec();
    if tape.dims(x) != tape.dims(kv) {
        return Err(HpiError::Shape(format!(
            "cross_attention dims {:?} vs {:?}",
            tape.dims(x),
            tape.dims(kv)
        )));
    }
    let (x3, kv3) = if in_dims.len() == 2 {
        let d3 = vec![1, in_dims[0], in_dims[1]];
        let a = tape.reshape(x, d3.clone())?;
        let b = if kv == x { a } else { tape.reshape(kv, d3)? };
        (a, b)
    } else if in_dims.len() == 3 {
        (x, kv)
    } else {
        return Err(HpiError::Shape(format!("cross_attention expects rank 2 or 3, got {in_dims:?}")));
    };

    let lnx = tape.layer_norm(x3, w.ln_gamma, w.ln_beta, LN_EPS)?;
    let lnkv = if kv3 == x3 { lnx } else { tape.layer_norm(kv3, w.ln_gamma, w.ln_beta, LN_EPS)? };

    let q = project(tape, lnx, w.w_q)?;
    let k = project(tape, lnkv, w.w_k)?;
    let v = project(tape, lnkv, w.w_v)?;

    let d_total = tape.dims(q)[2];
    if d_total % heads != 0 {
        return Err(HpiError::Shape(format!("qk width {d_total} not divisible by {heads} heads")));
    }
    let (qh, kh, vh) = if heads == 1 {
        (q, k, v)
    } else {
        (split_heads(tape, q, heads)?, split_heads(tape, k, heads)?, split_heads(tape, v, heads)?)
    };
    let kt = tape.permute(kh, vec![0, 2, 1])?;
    let scores = tape.bmm(qh, kt)?;
    let scaled = tape.scale(scores, T::from_f64(1.0 / ((d_total / heads) as f64).sqrt()));
    let attn = tape.softmax(scaled, 2)?;
    let ctx = tape.bmm(attn, vh)?;
    let merged = if heads == 1 { ctx } else { merge_heads(tape, ctx, heads)? };
    let proj = project(tape, merged, w.w_o)?;
    let out = tape.add(x3, proj)?;
    if in_dims.len() == 2 {
        tape.reshape(out, in_dims)
    } else {
        Ok(out)
    }
}

/// Pre-LN residual self-attention over the rows of each patch.
pub fn self_attention<T: Scalar>(
    tape: &mut GradTape<T>,
    x: TensorId,
    w: &AttnIds,
    heads: usize,
) -> Result<TensorId> {
    cross_attention(tape, x, x, w, heads)
}

/// Pre-LN residual feed-forward: x + W2·gelu(W1·ln(x) + b1) + b2, row-wise.
pub fn ffn_sublayer<T: Scalar>(tape: &mut GradTape<T>, x: TensorId, w: &FfnIds) -> Result<TensorId> {
    let ln = tape.layer_norm(x, w.ln_gamma, w.ln_beta, LN_EPS)?;
    let h = project(tape, ln, w.w1)?;
    let h = tape.bias_add(h, w.b1)?;
    let h = tape.gelu(h);
    let o = project(tape, h, w.w2)?;
    let o = tape.bias_add(o, w.b2)?;
    tape.add(x, o)
}

/// Draw one Gumbel(0,1) noise value per off-diagonal similarity entry, in
/// row-major order so the sequence is independent of execution schedule.
pub fn gumbel_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut noise = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
            noise[i * n + j] = -(-u.ln()).ln();
        }
    }
    noise
}

/// The global path over a stack of patches [n, p², c]: token pooling,
/// zero-diagonal similarity, partner selection, cross-attention with the
/// selected partner. With fewer than two patches there is no valid partner
/// and the input passes through unchanged.
pub fn global_attention<T: Scalar>(
    tape: &mut GradTape<T>,
    patches: TensorId,
    w: &AttnIds,
    heads: usize,
    mode: SelectMode,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(TensorId, Option<SelectionTrace>)> {
    let dims = tape.dims(patches).to_vec();
    if dims.len() != 3 {
        return Err(HpiError::Shape(format!("global_attention expects [n, p², c], got {dims:?}")));
    }
    let n = dims[0];
    if n < 2 {
        return Ok((patches, None));
    }

    let tokens = pool_tokens(tape, patches)?;
    let sim = similarity_map(tape, tokens)?;

    let (kind, tau, noise) = match mode {
        SelectMode::Hard => (SelectKind::Hard, 1.0, None),
        SelectMode::Gumbel { tau } => (SelectKind::StraightThrough, tau, rng.map(|r| gumbel_noise(n, r))),
        SelectMode::Soft { tau } => (SelectKind::Soft, tau, rng.map(|r| gumbel_noise(n, r))),
    };
    let (matched, partners) = tape.select_partner(sim, patches, kind, tau, noise.as_deref())?;

    let sim_vals = tape.value(sim);
    let similarities: Vec<f64> = partners
        .iter()
        .enumerate()
        .map(|(i, &j)| sim_vals.data()[i * n + j].as_f64())
        .collect();

    let out = cross_attention(tape, patches, matched, w, heads)?;
    Ok((out, Some(SelectionTrace { partners, similarities })))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf<T: Scalar>(tape: &mut GradTape<T>, dims: &[usize], f: impl FnMut(usize) -> T) -> TensorId {
        tape.leaf(Tensor::from_fn(dims, f))
    }

    fn rngish(i: usize) -> f32 {
        let h = (i as u64).wrapping_mul(0x9e3779b97f4a7c15).rotate_left(31);
        (h >> 40) as f32 / (1u64 << 24) as f32 - 0.5
    }

    fn test_attn_ids(tape: &mut GradTape<f32>, c: usize, d: usize, seed: usize) -> AttnIds {
        AttnIds {
            ln_gamma: tape.leaf(Tensor::full(&[c], 1.0)),
            ln_beta: tape.leaf(Tensor::zeros(&[c])),
            w_q: leaf(tape, &[c, d], |i| rngish(i + seed)),
            w_k: leaf(tape, &[c, d], |i| rngish(i + seed + 1000)),
            w_v: leaf(tape, &[c, c], |i| rngish(i + seed + 2000)),
            w_o: leaf(tape, &[c, c], |i| rngish(i + seed + 3000)),
        }
    }

    #[test]
    fn pool_token_constant_patch_is_zero() {
        // constant over channels: variance 0 -> LN collapses to beta = 0
        let mut tape = GradTape::<f32>::new();
        let p = tape.leaf(Tensor::full(&[1, 9, 4], 0.7));
        let t = pool_tokens(&mut tape, p).unwrap();
        for v in tape.value(t).data() {
            assert!(v.abs() < 1e-5);
        }
    }

    #[test]
    fn pool_token_scale_invariance() {
        let mut tape = GradTape::<f32>::new();
        let base = Tensor::from_fn(&[1, 16, 6], |i| rngish(i));
        let mut scaled = base.clone();
        for v in scaled.data_mut() {
            *v *= 37.5;
        }
        let a = tape.leaf(base);
        let b = tape.leaf(scaled);
        let ta = pool_tokens(&mut tape, a).unwrap();
        let tb = pool_tokens(&mut tape, b).unwrap();
        for (x, y) in tape.value(ta).data().iter().zip(tape.value(tb).data()) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn pool_token_matches_mean_plus_ln_oracle() {
        let mut tape = GradTape::<f64>::new();
        let (rows, c) = (16, 8);
        let data: Vec<f64> = (0..rows * c).map(|i| rngish(i) as f64).collect();
        let p = tape.leaf(Tensor::new(vec![1, rows, c], data.clone()).unwrap());
        let t = pool_tokens(&mut tape, p).unwrap();
        // oracle
        let mut mean = vec![0.0f64; c];
        for r in 0..rows {
            for j in 0..c {
                mean[j] += data[r * c + j] / rows as f64;
            }
        }
        let mu: f64 = mean.iter().sum::<f64>() / c as f64;
        let var: f64 = mean.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
        for j in 0..c {
            let want = (mean[j] - mu) / (var + LN_EPS).sqrt();
            assert!((tape.value(t).data()[j] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn similarity_of_identical_tokens() {
        let mut tape = GradTape::<f32>::new();
        let t = tape.leaf(Tensor::new(vec![2, 3], vec![1.0, 2.0, 2.0, 1.0, 2.0, 2.0]).unwrap());
        let s = similarity_map(&mut tape, t).unwrap();
        let norm2 = 1.0 + 4.0 + 4.0;
        assert_eq!(tape.value(s).data(), &[0.0, norm2, norm2, 0.0]);
    }

    #[test]
    fn similarity_of_orthogonal_tokens_is_zero_off_diagonal() {
        let mut tape = GradTape::<f32>::new();
        let t = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let s = similarity_map(&mut tape, t).unwrap();
        assert_eq!(tape.value(s).data(), &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn similarity_matches_pairwise_dot_oracle() {
        let mut tape = GradTape::<f32>::new();
        let (n, c) = (4, 5);
        let data: Vec<f32> = (0..n * c).map(rngish).collect();
        let t = tape.leaf(Tensor::new(vec![n, c], data.clone()).unwrap());
        let s = similarity_map(&mut tape, t).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want: f64 = if i == j {
                    0.0
                } else {
                    (0..c).map(|e| data[i * c + e] as f64 * data[j * c + e] as f64).sum()
                };
                assert!((tape.value(s).data()[i * n + j] as f64 - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn cross_attention_with_self_matches_self_attention() {
        let mut tape = GradTape::<f32>::new();
        let w = test_attn_ids(&mut tape, 8, 8, 0);
        let x = leaf(&mut tape, &[2, 4, 8], |i| rngish(i + 7));
        let a = self_attention(&mut tape, x, &w, 1).unwrap();
        let b = cross_attention(&mut tape, x, x, &w, 1).unwrap();
        assert_eq!(tape.value(a).data(), tape.value(b).data());
    }

    #[test]
    fn zero_value_projection_passes_residual_only() {
        let mut tape = GradTape::<f32>::new();
        let c = 6;
        let w = AttnIds {
            ln_gamma: tape.leaf(Tensor::full(&[c], 1.0)),
            ln_beta: tape.leaf(Tensor::zeros(&[c])),
            w_q: leaf(&mut tape, &[c, c], |i| rngish(i)),
            w_k: leaf(&mut tape, &[c, c], |i| rngish(i + 31)),
            w_v: tape.leaf(Tensor::zeros(&[c, c])),
            w_o: leaf(&mut tape, &[c, c], |i| rngish(i + 77)),
        };
        let x = leaf(&mut tape, &[1, 9, c], |i| rngish(i + 5));
        let out = cross_attention(&mut tape, x, x, &w, 1).unwrap();
        assert_eq!(tape.value(out).data(), tape.value(x).data());
    }

    #[test]
    fn single_row_attention_softmax_is_identity_weight() {
        // p² = 1: softmax over one key is 1, output = x + (ln(x)·w_v)·w_o
        let mut tape = GradTape::<f32>::new();
        let c = 4;
        let w = test_attn_ids(&mut tape, c, c, 3);
        let x = leaf(&mut tape, &[1, 1, c], |i| rngish(i + 11));
        let out = self_attention(&mut tape, x, &w, 1).unwrap();

        let ln = tape.layer_norm(x, w.ln_gamma, w.ln_beta, LN_EPS).unwrap();
        let flat = tape.reshape(ln, vec![1, c]).unwrap();
        let v = tape.matmul(flat, w.w_v).unwrap();
        let o = tape.matmul(v, w.w_o).unwrap();
        let o3 = tape.reshape(o, vec![1, 1, c]).unwrap();
        let want = tape.add(x, o3).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(tape.value(want).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn self_attention_is_permutation_equivariant() {
        let mut tape = GradTape::<f32>::new();
        let (r, c) = (5, 4);
        let w = test_attn_ids(&mut tape, c, c, 9);
        let data: Vec<f32> = (0..r * c).map(|i| rngish(i + 1)).collect();
        let x = tape.leaf(Tensor::new(vec![1, r, c], data.clone()).unwrap());
        let out = self_attention(&mut tape, x, &w, 1).unwrap();

        // rotate rows by 2
        let perm: Vec<usize> = (0..r).map(|i| (i + 2) % r).collect();
        let mut pdata = vec![0.0f32; r * c];
        for i in 0..r {
            pdata[i * c..(i + 1) * c].copy_from_slice(&data[perm[i] * c..(perm[i] + 1) * c]);
        }
        let xp = tape.leaf(Tensor::new(vec![1, r, c], pdata).unwrap());
        let outp = self_attention(&mut tape, xp, &w, 1).unwrap();

        let (ov, opv) = (tape.value(out).data(), tape.value(outp).data());
        for i in 0..r {
            for e in 0..c {
                let diff = (opv[i * c + e] - ov[perm[i] * c + e]).abs();
                assert!(diff < 1e-5, "row {i} elem {e}: {diff}");
            }
        }
    }

    #[test]
    fn attention_matches_loop_oracle() {
        // single patch, rank-2 path, heads=1, against a direct f64 loop
        let mut tape = GradTape::<f32>::new();
        let (r, c) = (4, 8);
        let w = test_attn_ids(&mut tape, c, c, 21);
        let x = leaf(&mut tape, &[r, c], |i| rngish(i + 3));
        let out = self_attention(&mut tape, x, &w, 1).unwrap();

        // oracle
        let xd: Vec<f64> = tape.value(x).data().iter().map(|v| *v as f64).collect();
        let wq: Vec<f64> = tape.value(w.w_q).data().iter().map(|v| *v as f64).collect();
        let wk: Vec<f64> = tape.value(w.w_k).data().iter().map(|v| *v as f64).collect();
        let wv: Vec<f64> = tape.value(w.w_v).data().iter().map(|v| *v as f64).collect();
        let wo: Vec<f64> = tape.value(w.w_o).data().iter().map(|v| *v as f64).collect();
        // ln
        let mut ln = vec![0.0f64; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mu: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            for j in 0..c {
                ln[i * c + j] = (row[j] - mu) / (var + LN_EPS).sqrt();
            }
        }
        let matmul = |a: &[f64], b: &[f64], m: usize, k: usize, n: usize| {
            let mut out = vec![0.0f64; m * n];
            for i in 0..m {
                for j in 0..n {
                    for p in 0..k {
                        out[i * n + j] += a[i * k + p] * b[p * n + j];
                    }
                }
            }
            out
        };
        let q = matmul(&ln, &wq, r, c, c);
        let k = matmul(&ln, &wk, r, c, c);
        let v = matmul(&ln, &wv, r, c, c);
        let mut attn = vec![0.0f64; r * r];
        for i in 0..r {
            for j in 0..r {
                for p in 0..c {
                    attn[i * r + j] += q[i * c + p] * k[j * c + p];
                }
                attn[i * r + j] /= (c as f64).sqrt();
            }
        }
        for i in 0..r {
            let row = &mut attn[i * r..(i + 1) * r];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let ctx = matmul(&attn, &v, r, r, c);
        let proj = matmul(&ctx, &wo, r, c, c);
        for i in 0..r * c {
            let want = xd[i] + proj[i];
            let got = tape.value(out).data()[i] as f64;
            assert!((got - want).abs() < 1e-5, "elem {i}: {got} vs {want}");
        }
    }

    #[test]
    fn multi_head_output_rows_still_sum_attention_to_one() {
        // smoke: 2 heads run, shapes hold, finite outputs
        let mut tape = GradTape::<f32>::new();
        let w = test_attn_ids(&mut tape, 8, 8, 5);
        let x = leaf(&mut tape, &[3, 4, 8], |i| rngish(i + 13));
        let out = self_attention(&mut tape, x, &w, 2).unwrap();
        assert_eq!(tape.dims(out), &[3, 4, 8]);
        assert!(tape.value(out).all_finite());
    }

    #[test]
    fn ffn_zero_second_layer_adds_bias_only() {
        let mut tape = GradTape::<f32>::new();
        let (c, f) = (4, 8);
        let w = FfnIds {
            ln_gamma: tape.leaf(Tensor::full(&[c], 1.0)),
            ln_beta: tape.leaf(Tensor::zeros(&[c])),
            w1: leaf(&mut tape, &[c, f], |i| rngish(i)),
            b1: leaf(&mut tape, &[f], |i| rngish(i + 3)),
            w2: tape.leaf(Tensor::zeros(&[f, c])),
            b2: tape.leaf(Tensor::new(vec![c], vec![0.5, -0.25, 0.0, 1.0]).unwrap()),
        };
        let x = leaf(&mut tape, &[2, 3, c], |i| rngish(i + 17));
        let out = ffn_sublayer(&mut tape, x, &w).unwrap();
        let (xv, ov, b2) = (tape.value(x).data(), tape.value(out).data(), tape.value(w.b2).data());
        for row in 0..6 {
            for j in 0..c {
                assert!((ov[row * c + j] - (xv[row * c + j] + b2[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn ffn_matches_composition_oracle() {
        let mut tape = GradTape::<f64>::new();
        let (c, f) = (3, 6);
        let w = FfnIds {
            ln_gamma: tape.leaf(Tensor::full(&[c], 1.0)),
            ln_beta: tape.leaf(Tensor::zeros(&[c])),
            w1: tape.leaf(Tensor::from_fn(&[c, f], |i| rngish(i) as f64)),
            b1: tape.leaf(Tensor::from_fn(&[f], |i| rngish(i + 3) as f64)),
            w2: tape.leaf(Tensor::from_fn(&[f, c], |i| rngish(i + 6) as f64)),
            b2: tape.leaf(Tensor::from_fn(&[c], |i| rngish(i + 9) as f64)),
        };
        let x = tape.leaf(Tensor::from_fn(&[2, c], |i| rngish(i + 12) as f64));
        let out = ffn_sublayer(&mut tape, x, &w).unwrap();

        let xv = tape.value(x).data().to_vec();
        for row in 0..2 {
            let xr = &xv[row * c..(row + 1) * c];
            let mu: f64 = xr.iter().sum::<f64>() / c as f64;
            let var: f64 = xr.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / c as f64;
            let ln: Vec<f64> = xr.iter().map(|v| (v - mu) / (var + LN_EPS).sqrt()).collect();
            for j in 0..c {
                let mut acc = xr[j];
                for h in 0..f {
                    let mut pre = tape.value(w.b1).data()[h];
                    for e in 0..c {
                        pre += ln[e] * tape.value(w.w1).data()[e * f + h];
                    }
                    let gelu = pre * 0.5 * (1.0 + libm::erf(pre / std::f64::consts::SQRT_2));
                    acc += gelu * tape.value(w.w2).data()[h * c + j];
                }
                acc += tape.value(w.b2).data()[j];
                let got = tape.value(out).data()[row * c + j];
                assert!((got - acc).abs() < 1e-5, "{got} vs {acc}");
            }
        }
    }

    #[test]
    fn global_attention_single_patch_is_identity() {
        let mut tape = GradTape::<f32>::new();
        let w = test_attn_ids(&mut tape, 4, 4, 2);
        let x = leaf(&mut tape, &[1, 9, 4], |i| rngish(i));
        let (out, trace) = global_attention(&mut tape, x, &w, 1, SelectMode::Hard, None).unwrap();
        assert_eq!(out, x);
        assert!(trace.is_none());
    }

    #[test]
    fn global_attention_two_patches_pick_each_other() {
        let mut tape = GradTape::<f32>::new();
        let w = test_attn_ids(&mut tape, 4, 4, 8);
        let x = leaf(&mut tape, &[2, 9, 4], |i| rngish(i + 100));
        let (_, trace) = global_attention(&mut tape, x, &w, 1, SelectMode::Hard, None).unwrap();
        let trace = trace.unwrap();
        assert_eq!(trace.partners, vec![1, 0]);
    }
}
