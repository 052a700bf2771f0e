//! Transformer blocks: temporal and spatial self-attention, cross
//! attention, the MLP and the pre-norm residual compositions built from them.
//!
//! Token tensors are laid out `T×N×D` (frame, spatial index, width).
//! Attention scores are scaled by `1/√(D/heads)`.

use crate::error::{dim_err, usage_err, Result};
use crate::numerics::{concat, Scalar, Tensor};
use crate::params::{ParamId, ParamInit, ParamStore};

pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// `[MHA-T, MHA-S, MLP]` with a layer norm in front of each.
#[derive(Debug, Clone, Copy)]
pub struct FactorizedBlockParams {
    pub norm_t: NormParams,
    pub attn_t: AttentionParams,
    pub norm_s: NormParams,
    pub attn_s: AttentionParams,
    pub norm_mlp: NormParams,
    pub mlp: MlpParams,
}

#[derive(Debug, Clone, Copy)]
pub struct CrossBlockParams {
    pub norm_q: NormParams,
    pub attn: AttentionParams,
    pub norm_mlp: NormParams,
    pub mlp: MlpParams,
}

impl NormParams {
    pub fn init<F: Scalar>(init: &mut ParamInit<'_, F>, name: &str, d: usize) -> Self {
        NormParams { gamma: init.ones(&format!("{name}.gamma"), &[d]), beta: init.zeros(&format!("{name}.beta"), &[d]) }
    }
}

impl AttentionParams {
    pub fn init<F: Scalar>(init: &mut ParamInit<'_, F>, name: &str, d: usize) -> Self {
        let mut lin = |suffix: &str| {
            let w = init.xavier(&format!("{name}.w{suffix}"), d, d);
            let b = init.zeros(&format!("{name}.b{suffix}"), &[d]);
            (w, b)
        };
        let (wq, bq) = lin("q");
        let (wk, bk) = lin("k");
        let (wv, bv) = lin("v");
        let (wo, bo) = lin("o");
        AttentionParams { wq, bq, wk, bk, wv, bv, wo, bo }
    }

    /// Parameters whose zeroing silences the sublayer output.
    pub fn output_projection(&self) -> [ParamId; 2] {
        [self.wo, self.bo]
    }
}

impl MlpParams {
    pub fn init<F: Scalar>(init: &mut ParamInit<'_, F>, name: &str, d: usize, hidden: usize) -> Self {
        MlpParams {
            w1: init.xavier(&format!("{name}.w1"), d, hidden),
            b1: init.zeros(&format!("{name}.b1"), &[hidden]),
            w2: init.xavier(&format!("{name}.w2"), hidden, d),
            b2: init.zeros(&format!("{name}.b2"), &[d]),
        }
    }

    pub fn output_projection(&self) -> [ParamId; 2] {
        [self.w2, self.b2]
    }
}

impl FactorizedBlockParams {
    pub fn init<F: Scalar>(init: &mut ParamInit<'_, F>, name: &str, d: usize, hidden: usize) -> Self {
        FactorizedBlockParams {
            norm_t: NormParams::init(init, &format!("{name}.norm_t"), d),
            attn_t: AttentionParams::init(init, &format!("{name}.attn_t"), d),
            norm_s: NormParams::init(init, &format!("{name}.norm_s"), d),
            attn_s: AttentionParams::init(init, &format!("{name}.attn_s"), d),
            norm_mlp: NormParams::init(init, &format!("{name}.norm_mlp"), d),
            mlp: MlpParams::init(init, &format!("{name}.mlp"), d, hidden),
        }
    }

    pub fn output_projections(&self) -> Vec<ParamId> {
        [self.attn_t.output_projection(), self.attn_s.output_projection(), self.mlp.output_projection()].concat()
    }
}

impl CrossBlockParams {
    pub fn init<F: Scalar>(init: &mut ParamInit<'_, F>, name: &str, d: usize, hidden: usize) -> Self {
        CrossBlockParams {
            norm_q: NormParams::init(init, &format!("{name}.norm_q"), d),
            attn: AttentionParams::init(init, &format!("{name}.attn"), d),
            norm_mlp: NormParams::init(init, &format!("{name}.norm_mlp"), d),
            mlp: MlpParams::init(init, &format!("{name}.mlp"), d, hidden),
        }
    }

    pub fn output_projections(&self) -> Vec<ParamId> {
        [self.attn.output_projection(), self.mlp.output_projection()].concat()
    }
}

pub fn layer_norm<F: Scalar>(ps: &ParamStore<F>, p: &NormParams, x: &Tensor<F>) -> Result<Tensor<F>> {
    x.layer_norm(&ps[p.gamma], &ps[p.beta], F::of(LN_EPS))
}

fn split_heads<F: Scalar>(x: &Tensor<F>, heads: usize) -> Result<Tensor<F>> {
    let &[b, l, d] = x.shape() else { unreachable!() };
    if heads == 1 {
        return Ok(x.clone());
    }
    x.reshape(&[b, l, heads, d / heads])?.permute(&[0, 2, 1, 3])?.reshape(&[b * heads, l, d / heads])
}

fn merge_heads<F: Scalar>(x: &Tensor<F>, batch: usize, heads: usize) -> Result<Tensor<F>> {
    let &[_, l, dh] = x.shape() else { unreachable!() };
    if heads == 1 {
        return Ok(x.clone());
    }
    x.reshape(&[batch, heads, l, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[batch, l, heads * dh])
}

/// Multi-head attention of `B×Lq×D` queries over `B×Lk×D` keys/values,
/// each of the `B` groups independent. Also returns the attention
/// probabilities, `(B·heads)×Lq×Lk`.
pub fn attention<F: Scalar>(
    ps: &ParamStore<F>,
    p: &AttentionParams,
    q_in: &Tensor<F>,
    kv_in: &Tensor<F>,
    heads: usize,
) -> Result<(Tensor<F>, Tensor<F>)> {
    let (&[b, _, d], &[bk, lk, dk]) = (q_in.shape(), kv_in.shape()) else {
        return dim_err(format!("attention expects rank-3 inputs, got {:?} and {:?}", q_in.shape(), kv_in.shape()));
    };
    if b != bk || d != dk {
        return dim_err(format!("attention: queries {:?} vs keys {:?}", q_in.shape(), kv_in.shape()));
    }
    if lk == 0 {
        return usage_err("attention over an empty key set");
    }
    if heads == 0 || d % heads != 0 {
        return dim_err(format!("width {d} is not divisible into {heads} heads"));
    }
    let q = split_heads(&q_in.linear(&ps[p.wq], Some(&ps[p.bq]))?, heads)?;
    let k = split_heads(&kv_in.linear(&ps[p.wk], Some(&ps[p.bk]))?, heads)?;
    let v = split_heads(&kv_in.linear(&ps[p.wv], Some(&ps[p.bv]))?, heads)?;
    let scale = F::of(1.0 / ((d / heads) as f64).sqrt());
    let probs = q.bmm(&k, true)?.scale(scale).softmax_lastdim()?;
    let ctx = merge_heads(&probs.bmm(&v, false)?, b, heads)?;
    Ok((ctx.linear(&ps[p.wo], Some(&ps[p.bo]))?, probs))
}

fn check_grid<F: Scalar>(x: &Tensor<F>) -> Result<[usize; 3]> {
    match *x.shape() {
        [t, n, d] => Ok([t, n, d]),
        _ => dim_err(format!("expected T×N×D tokens, got {:?}", x.shape())),
    }
}

/// Self-attention within each frame.
pub fn mha_spatial<F: Scalar>(ps: &ParamStore<F>, p: &AttentionParams, x: &Tensor<F>, heads: usize) -> Result<Tensor<F>> {
    check_grid(x)?;
    Ok(attention(ps, p, x, x, heads)?.0)
}

/// Self-attention across frames at each spatial index.
pub fn mha_temporal<F: Scalar>(ps: &ParamStore<F>, p: &AttentionParams, x: &Tensor<F>, heads: usize) -> Result<Tensor<F>> {
    check_grid(x)?;
    let xt = x.permute(&[1, 0, 2])?;
    attention(ps, p, &xt, &xt, heads)?.0.permute(&[1, 0, 2])
}

/// `Linear(D→hidden) → GELU → Linear(hidden→D)`.
pub fn mlp<F: Scalar>(ps: &ParamStore<F>, p: &MlpParams, x: &Tensor<F>) -> Result<Tensor<F>> {
    x.linear(&ps[p.w1], Some(&ps[p.b1]))?.gelu().linear(&ps[p.w2], Some(&ps[p.b2]))
}

/// `x + MHA-T(LN x)`, then `+ MHA-S(LN ·)`, then `+ MLP(LN ·)`.
pub fn factorized_block<F: Scalar>(
    ps: &ParamStore<F>,
    p: &FactorizedBlockParams,
    x: &Tensor<F>,
    heads: usize,
) -> Result<Tensor<F>> {
    let x = x.add(&mha_temporal(ps, &p.attn_t, &layer_norm(ps, &p.norm_t, x)?, heads)?)?;
    let x = x.add(&mha_spatial(ps, &p.attn_s, &layer_norm(ps, &p.norm_s, &x)?, heads)?)?;
    x.add(&mlp(ps, &p.mlp, &layer_norm(ps, &p.norm_mlp, &x)?)?)
}

/// Factorized block over `(1+T)×N×D` where row 0 of the time axis is a
/// class token per spatial index: temporal attention covers all `T+1`
/// steps, spatial attention only the `T` frames.
pub fn factorized_block_with_cls<F: Scalar>(
    ps: &ParamStore<F>,
    p: &FactorizedBlockParams,
    x: &Tensor<F>,
    heads: usize,
) -> Result<Tensor<F>> {
    let [t1, _, _] = check_grid(x)?;
    if t1 < 2 {
        return dim_err("class-token block needs at least one frame after the class row");
    }
    let x = x.add(&mha_temporal(ps, &p.attn_t, &layer_norm(ps, &p.norm_t, x)?, heads)?)?;
    let cls = x.narrow(0, 0, 1)?;
    let frames = x.narrow(0, 1, t1 - 1)?;
    let frames = frames.add(&mha_spatial(ps, &p.attn_s, &layer_norm(ps, &p.norm_s, &frames)?, heads)?)?;
    let x = concat(&[cls, frames], 0)?;
    x.add(&mlp(ps, &p.mlp, &layer_norm(ps, &p.norm_mlp, &x)?)?)
}

/// `q + CrossAttn(LN q, kv)`, then `+ MLP(LN ·)`; `queries` is `M×D`,
/// `kv` is `V×D` and every query sees all of `kv`.
pub fn cross_attn_block<F: Scalar>(
    ps: &ParamStore<F>,
    p: &CrossBlockParams,
    queries: &Tensor<F>,
    kv: &Tensor<F>,
    heads: usize,
) -> Result<Tensor<F>> {
    let (&[m, d], &[v, dk]) = (queries.shape(), kv.shape()) else {
        return dim_err(format!("cross attention expects M×D and V×D, got {:?} and {:?}", queries.shape(), kv.shape()));
    };
    if d != dk {
        return dim_err(format!("cross attention widths {d} vs {dk}"));
    }
    if v == 0 {
        return usage_err("cross attention needs at least one key/value token");
    }
    let qn = layer_norm(ps, &p.norm_q, queries)?.reshape(&[1, m, d])?;
    let attended = attention(ps, &p.attn, &qn, &kv.reshape(&[1, v, d])?, heads)?.0.reshape(&[m, d])?;
    let x = queries.add(&attended)?;
    x.add(&mlp(ps, &p.mlp, &layer_norm(ps, &p.norm_mlp, &x)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn store(d: usize) -> (ParamStore<f64>, FactorizedBlockParams, CrossBlockParams) {
        let mut s = ParamStore::default();
        let mut r = rng::stream(3);
        let mut init = ParamInit { store: &mut s, rng: &mut r };
        let f = FactorizedBlockParams::init(&mut init, "f", d, 4 * d);
        let c = CrossBlockParams::init(&mut init, "c", d, 4 * d);
        (s, f, c)
    }

    fn tokens(shape: &[usize], seed: u64) -> Tensor<f64> {
        use rand::Rng as _;
        let mut r = rng::stream(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn singleton_spatial_attention_is_value_path() {
        let (ps, f, _) = store(8);
        let x = tokens(&[3, 1, 8], 1);
        let (out, probs) = attention(&ps, &f.attn_s, &x, &x, 2).unwrap();
        assert!(probs.data().iter().all(|&w| w == 1.0));
        let expect = x
            .linear(&ps[f.attn_s.wv], Some(&ps[f.attn_s.bv]))
            .unwrap()
            .linear(&ps[f.attn_s.wo], Some(&ps[f.attn_s.bo]))
            .unwrap();
        for (a, b) in out.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (ps, f, _) = store(8);
        let x = tokens(&[4, 5, 8], 2);
        let (_, probs) = attention(&ps, &f.attn_t, &x, &x, 2).unwrap();
        for row in probs.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn spatial_attention_is_permutation_equivariant() {
        let (ps, f, _) = store(8);
        let x = tokens(&[2, 4, 8], 3);
        let perm = [2usize, 0, 3, 1];
        let rows: Vec<usize> = (0..2).flat_map(|t| perm.iter().map(move |&j| t * 4 + j)).collect();
        let xp = x.reshape(&[8, 8]).unwrap().index_rows(&rows).unwrap().reshape(&[2, 4, 8]).unwrap();
        let y = mha_spatial(&ps, &f.attn_s, &x, 2).unwrap();
        let yp = mha_spatial(&ps, &f.attn_s, &xp, 2).unwrap();
        let y_then_perm = y.reshape(&[8, 8]).unwrap().index_rows(&rows).unwrap();
        for (a, b) in yp.data().iter().zip(y_then_perm.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn temporal_attention_keeps_columns_independent() {
        let (ps, f, _) = store(8);
        let x = tokens(&[4, 3, 8], 4);
        let mut zeroed = x.to_vec();
        for t in 0..4 {
            zeroed[(t * 3 + 1) * 8..(t * 3 + 2) * 8].fill(0.0);
        }
        let xz = Tensor::new(&[4, 3, 8], zeroed).unwrap();
        let (a, b) = (mha_temporal(&ps, &f.attn_t, &x, 2).unwrap(), mha_temporal(&ps, &f.attn_t, &xz, 2).unwrap());
        for t in 0..4 {
            for j in 0..3 {
                let r = (t * 3 + j) * 8..(t * 3 + j + 1) * 8;
                let same = a.data()[r.clone()] == b.data()[r];
                assert_eq!(same, j != 1, "frame {t} column {j}");
            }
        }
    }

    #[test]
    fn single_frame_temporal_attention_has_unit_weight() {
        let (ps, f, _) = store(8);
        let x = tokens(&[1, 3, 8], 5).permute(&[1, 0, 2]).unwrap();
        let (_, probs) = attention(&ps, &f.attn_t, &x, &x, 1).unwrap();
        assert!(probs.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn zeroed_outputs_make_blocks_identity() {
        let (mut ps, f, c) = store(8);
        for id in f.output_projections().into_iter().chain(c.output_projections()) {
            let n = ps[id].numel();
            ps.set(id, vec![0.0; n]).unwrap();
        }
        let x = tokens(&[3, 4, 8], 6);
        assert_eq!(factorized_block(&ps, &f, &x, 2).unwrap().data(), x.data());
        let q = tokens(&[5, 8], 7);
        let kv = tokens(&[6, 8], 8);
        assert_eq!(cross_attn_block(&ps, &c, &q, &kv, 2).unwrap().data(), q.data());
    }

    #[test]
    fn zero_mlp_gives_zero() {
        let (mut ps, f, _) = store(8);
        for id in [f.mlp.w1, f.mlp.b1, f.mlp.w2, f.mlp.b2] {
            let n = ps[id].numel();
            ps.set(id, vec![0.0; n]).unwrap();
        }
        let y = mlp(&ps, &f.mlp, &tokens(&[2, 3, 8], 9)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_attention_ignores_kv_order_and_singletons() {
        let (ps, _, c) = store(8);
        let q = tokens(&[5, 8], 10);
        let kv = tokens(&[4, 8], 11);
        let kv_perm = kv.index_rows(&[3, 1, 0, 2]).unwrap();
        let (a, b) = (cross_attn_block(&ps, &c, &q, &kv, 2).unwrap(), cross_attn_block(&ps, &c, &q, &kv_perm, 2).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let one = tokens(&[1, 8], 12);
        let qn = layer_norm(&ps, &c.norm_q, &q).unwrap().reshape(&[1, 5, 8]).unwrap();
        let (_, probs) = attention(&ps, &c.attn, &qn, &one.reshape(&[1, 1, 8]).unwrap(), 2).unwrap();
        assert!(probs.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn toy_cross_attention_shape() {
        let (ps, _, c) = store(8);
        let q = tokens(&[735, 8], 13);
        let kv = tokens(&[245, 8], 14);
        assert_eq!(cross_attn_block(&ps, &c, &q, &kv, 2).unwrap().shape(), &[735, 8]);
    }
}
