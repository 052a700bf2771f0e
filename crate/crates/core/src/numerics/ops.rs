//! Differentiable operations. Each forward builds the output eagerly and,
//! when gradients are being recorded, stores an [`Op`] holding the inputs
//! and whatever the backward rule needs.

use std::rc::Rc;

use super::scalar::kernels::gemm;
use super::tensor::numel;
use super::{Scalar, Tensor};
use crate::error::{dim_err, usage_err, Result};

pub(crate) enum Op<F: Scalar> {
    Matmul { a: Tensor<F>, b: Tensor<F> },
    Bmm { a: Tensor<F>, b: Tensor<F>, trans_b: bool },
    Add { a: Tensor<F>, b: Tensor<F> },
    Sub { a: Tensor<F>, b: Tensor<F> },
    Mul { a: Tensor<F>, b: Tensor<F> },
    Scale { x: Tensor<F>, c: F },
    AddBias { x: Tensor<F>, bias: Tensor<F> },
    Reshape { x: Tensor<F> },
    Permute { x: Tensor<F>, axes: Vec<usize> },
    Softmax { x: Tensor<F> },
    LayerNorm { x: Tensor<F>, gamma: Tensor<F>, beta: Tensor<F>, xhat: Vec<F>, rstd: Vec<F> },
    Gelu { x: Tensor<F> },
    CrossEntropy { logits: Tensor<F>, targets: Vec<usize>, probs: Vec<F> },
    IndexRows { x: Tensor<F>, idx: Vec<usize> },
    Concat { parts: Vec<Tensor<F>>, axis: usize },
    Narrow { x: Tensor<F>, axis: usize, start: usize },
    Sum { x: Tensor<F> },
}

impl<F: Scalar> Op<F> {
    pub(crate) fn parents(&self) -> Vec<&Tensor<F>> {
        match self {
            Op::Matmul { a, b } | Op::Bmm { a, b, .. } => vec![a, b],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => vec![a, b],
            Op::AddBias { x, bias } => vec![x, bias],
            Op::LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Op::Concat { parts, .. } => parts.iter().collect(),
            Op::CrossEntropy { logits, .. } => vec![logits],
            Op::Scale { x, .. }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Softmax { x }
            | Op::Gelu { x }
            | Op::IndexRows { x, .. }
            | Op::Narrow { x, .. }
            | Op::Sum { x } => vec![x],
        }
    }

    /// Vector-Jacobian products for each parent that needs a gradient.
    pub(crate) fn backward(&self, out: &Tensor<F>, g: &[F]) -> Vec<(Tensor<F>, Vec<F>)> {
        let mut res = Vec::new();
        let mut emit = |t: &Tensor<F>, f: &dyn Fn() -> Vec<F>| {
            if t.requires_grad() {
                res.push((t.clone(), f()));
            }
        };
        match self {
            Op::Matmul { a, b } => {
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                emit(a, &|| {
                    let mut ga = vec![F::zero(); m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, F::zero());
                    ga
                });
                emit(b, &|| {
                    let mut gb = vec![F::zero(); k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, F::zero());
                    gb
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let (bs, m, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
                let n = out.shape()[2];
                emit(a, &|| {
                    let mut ga = vec![F::zero(); bs * m * k];
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let bi = &b.data()[i * k * n..(i + 1) * k * n];
                        // trans_b: b_i is n×k and dA = G·B; otherwise b_i is k×n and dA = G·Bᵀ
                        gemm(m, n, k, gi, false, bi, !*trans_b, &mut ga[i * m * k..(i + 1) * m * k], F::zero());
                    }
                    ga
                });
                emit(b, &|| {
                    let mut gb = vec![F::zero(); bs * k * n];
                    for i in 0..bs {
                        let gi = &g[i * m * n..(i + 1) * m * n];
                        let ai = &a.data()[i * m * k..(i + 1) * m * k];
                        let dst = &mut gb[i * k * n..(i + 1) * k * n];
                        if *trans_b {
                            gemm(n, m, k, gi, true, ai, false, dst, F::zero());
                        } else {
                            gemm(k, m, n, ai, true, gi, false, dst, F::zero());
                        }
                    }
                    gb
                });
            }
            Op::Add { a, b } => {
                emit(a, &|| g.to_vec());
                emit(b, &|| g.to_vec());
            }
            Op::Sub { a, b } => {
                emit(a, &|| g.to_vec());
                emit(b, &|| g.iter().map(|&v| -v).collect());
            }
            Op::Mul { a, b } => {
                emit(a, &|| g.iter().zip(b.data()).map(|(&gv, &bv)| gv * bv).collect());
                emit(b, &|| g.iter().zip(a.data()).map(|(&gv, &av)| gv * av).collect());
            }
            Op::Scale { x, c } => emit(x, &|| g.iter().map(|&v| v * *c).collect()),
            Op::AddBias { x, bias } => {
                emit(x, &|| g.to_vec());
                emit(bias, &|| {
                    let d = bias.numel();
                    let mut gb = vec![F::zero(); d];
                    for row in g.chunks_exact(d) {
                        gb.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    gb
                });
            }
            Op::Reshape { x } => emit(x, &|| g.to_vec()),
            Op::Permute { x, axes } => emit(x, &|| {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                permute_data(g, out.shape(), &inv)
            }),
            Op::Softmax { x } => emit(x, &|| {
                let d = *x.shape().last().unwrap();
                let y = out.data();
                let mut gx = vec![F::zero(); y.len()];
                for ((gr, yr), dst) in g.chunks_exact(d).zip(y.chunks_exact(d)).zip(gx.chunks_exact_mut(d)) {
                    let dot: F = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                    for ((o, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *o = yv * (gv - dot);
                    }
                }
                gx
            }),
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = gamma.numel();
                emit(x, &|| {
                    let inv_d = F::of(1.0 / d as f64);
                    let mut gx = vec![F::zero(); xhat.len()];
                    for (r, ((gr, hr), dst)) in g
                        .chunks_exact(d)
                        .zip(xhat.chunks_exact(d))
                        .zip(gx.chunks_exact_mut(d))
                        .enumerate()
                    {
                        let mut sum_dh = F::zero();
                        let mut sum_dh_h = F::zero();
                        for i in 0..d {
                            let dh = gr[i] * gamma.data()[i];
                            sum_dh += dh;
                            sum_dh_h += dh * hr[i];
                        }
                        let (mean_dh, mean_dh_h) = (sum_dh * inv_d, sum_dh_h * inv_d);
                        for i in 0..d {
                            let dh = gr[i] * gamma.data()[i];
                            dst[i] = rstd[r] * (dh - mean_dh - hr[i] * mean_dh_h);
                        }
                    }
                    gx
                });
                emit(gamma, &|| {
                    let mut gg = vec![F::zero(); d];
                    for (gr, hr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for i in 0..d {
                            gg[i] += gr[i] * hr[i];
                        }
                    }
                    gg
                });
                emit(beta, &|| {
                    let mut gb = vec![F::zero(); d];
                    for gr in g.chunks_exact(d) {
                        gb.iter_mut().zip(gr).for_each(|(a, &v)| *a += v);
                    }
                    gb
                });
            }
            Op::Gelu { x } => emit(x, &|| {
                let inv_sqrt2 = F::of(std::f64::consts::FRAC_1_SQRT_2);
                let inv_sqrt_2pi = F::of(0.5 * std::f64::consts::FRAC_2_SQRT_PI * std::f64::consts::FRAC_1_SQRT_2);
                let half = F::of(0.5);
                x.data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| {
                        let cdf = half * (F::one() + (v * inv_sqrt2).erf());
                        let pdf = (-(v * v) * half).exp() * inv_sqrt_2pi;
                        gv * (cdf + v * pdf)
                    })
                    .collect()
            }),
            Op::CrossEntropy { logits, targets, probs } => emit(logits, &|| {
                let k = logits.shape()[1];
                let scale = g[0] / F::of(targets.len() as f64);
                let mut gl: Vec<F> = probs.iter().map(|&p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * k + t] -= scale;
                }
                gl
            }),
            Op::IndexRows { x, idx } => emit(x, &|| {
                let row = numel(&x.shape()[1..]);
                let mut gx = vec![F::zero(); x.numel()];
                for (o, &i) in idx.iter().enumerate() {
                    let src = &g[o * row..(o + 1) * row];
                    gx[i * row..(i + 1) * row].iter_mut().zip(src).for_each(|(a, &v)| *a += v);
                }
                gx
            }),
            Op::Concat { parts, axis } => {
                let outer = numel(&out.shape()[..*axis]);
                let inner = numel(&out.shape()[axis + 1..]);
                let total = out.shape()[*axis];
                let mut offset = 0;
                for p in parts {
                    let len = p.shape()[*axis];
                    emit(p, &|| {
                        let mut gp = Vec::with_capacity(p.numel());
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        gp
                    });
                    offset += len;
                }
            }
            Op::Narrow { x, axis, start } => emit(x, &|| {
                let outer = numel(&x.shape()[..*axis]);
                let inner = numel(&x.shape()[axis + 1..]);
                let (total, len) = (x.shape()[*axis], out.shape()[*axis]);
                let mut gx = vec![F::zero(); x.numel()];
                for o in 0..outer {
                    let dst = (o * total + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                gx
            }),
            Op::Sum { x } => emit(x, &|| vec![g[0]; x.numel()]),
        }
        res
    }
}

fn permute_data<F: Scalar>(data: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let rank = shape.len();
    let mut strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let src_strides: Vec<usize> = axes.iter().map(|&a| strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    if data.is_empty() {
        return out;
    }
    // Innermost output axis is copied in a tight loop.
    let last = rank - 1;
    let (inner_len, inner_stride) = (out_shape[last], src_strides[last]);
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner_len]);
        } else {
            out.extend((0..inner_len).map(|i| data[base + i * inner_stride]));
        }
        // increment the outer multi-index
        let mut ax = last;
        loop {
            if ax == 0 {
                return out;
            }
            ax -= 1;
            idx[ax] += 1;
            base += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            base -= src_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

fn same_shape<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()));
    }
    Ok(())
}

impl<F: Scalar> Tensor<F> {
    /// Matrix product of `m×k` and `k×n`.
    pub fn matmul(&self, b: &Tensor<F>) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul: {sa:?} × {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        gemm(m, k, n, self.data(), false, b.data(), false, &mut out, F::zero());
        Ok(Tensor::from_op(vec![m, n], out, self.requires_grad() || b.requires_grad(), || Op::Matmul {
            a: self.clone(),
            b: b.clone(),
        }))
    }

    /// Batched product: `B×m×k` with `B×k×n`, or with `B×n×k` transposed
    /// when `trans_b` is set.
    pub fn bmm(&self, b: &Tensor<F>, trans_b: bool) -> Result<Tensor<F>> {
        let (sa, sb) = (self.shape(), b.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return dim_err(format!("bmm: {sa:?} × {sb:?}"));
        }
        let (bs, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return dim_err(format!("bmm inner dims: {sa:?} × {sb:?} (trans_b={trans_b})"));
        }
        let mut out = vec![F::zero(); bs * m * n];
        for i in 0..bs {
            gemm(
                m,
                k,
                n,
                &self.data()[i * m * k..(i + 1) * m * k],
                false,
                &b.data()[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                F::zero(),
            );
        }
        Ok(Tensor::from_op(vec![bs, m, n], out, self.requires_grad() || b.requires_grad(), || Op::Bmm {
            a: self.clone(),
            b: b.clone(),
            trans_b,
        }))
    }

    fn zip_with(&self, b: &Tensor<F>, what: &str, f: impl Fn(F, F) -> F) -> Result<Vec<F>> {
        same_shape(self, b, what)?;
        Ok(self.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
    }

    pub fn add(&self, b: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(b, "add", |x, y| x + y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, self.requires_grad() || b.requires_grad(), || Op::Add {
            a: self.clone(),
            b: b.clone(),
        }))
    }

    pub fn sub(&self, b: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(b, "sub", |x, y| x - y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, self.requires_grad() || b.requires_grad(), || Op::Sub {
            a: self.clone(),
            b: b.clone(),
        }))
    }

    /// Elementwise product.
    pub fn mul(&self, b: &Tensor<F>) -> Result<Tensor<F>> {
        let out = self.zip_with(b, "mul", |x, y| x * y)?;
        Ok(Tensor::from_op(self.shape().to_vec(), out, self.requires_grad() || b.requires_grad(), || Op::Mul {
            a: self.clone(),
            b: b.clone(),
        }))
    }

    pub fn scale(&self, c: F) -> Tensor<F> {
        let out = self.data().iter().map(|&v| v * c).collect();
        Tensor::from_op(self.shape().to_vec(), out, self.requires_grad(), || Op::Scale { x: self.clone(), c })
    }

    /// Adds a vector along the trailing dimension.
    pub fn add_bias(&self, bias: &Tensor<F>) -> Result<Tensor<F>> {
        let d = bias.numel();
        if bias.rank() != 1 || self.shape().last() != Some(&d) {
            return dim_err(format!("add_bias: {:?} + {:?}", self.shape(), bias.shape()));
        }
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(d) {
            row.iter_mut().zip(bias.data()).for_each(|(a, &b)| *a += b);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, self.requires_grad() || bias.requires_grad(), || {
            Op::AddBias { x: self.clone(), bias: bias.clone() }
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        if numel(shape) != self.numel() || shape.contains(&0) {
            return dim_err(format!("reshape {:?} -> {shape:?}", self.shape()));
        }
        let record = self.requires_grad() && super::tensor::grad_enabled();
        let op = record.then(|| Op::Reshape { x: self.clone() });
        Ok(Tensor::from_parts(shape.to_vec(), Rc::clone(self.data_rc()), record, op))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return dim_err(format!("permute {axes:?} of rank {rank}"));
        }
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return Ok(self.clone());
        }
        let out = permute_data(self.data(), self.shape(), axes);
        let shape = axes.iter().map(|&a| self.shape()[a]).collect();
        Ok(Tensor::from_op(shape, out, self.requires_grad(), || Op::Permute {
            x: self.clone(),
            axes: axes.to_vec(),
        }))
    }

    /// Softmax over the last dimension, computed with a max shift.
    pub fn softmax_lastdim(&self) -> Result<Tensor<F>> {
        let Some(&d) = self.shape().last() else {
            return usage_err("softmax of a scalar");
        };
        let mut out = self.to_vec();
        for row in out.chunks_exact_mut(d) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            let inv = F::one() / total;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, self.requires_grad(), || Op::Softmax { x: self.clone() }))
    }

    /// Normalizes each trailing-dim slice to zero mean and unit variance,
    /// then applies `gamma`/`beta`.
    pub fn layer_norm(&self, gamma: &Tensor<F>, beta: &Tensor<F>, eps: F) -> Result<Tensor<F>> {
        let d = gamma.numel();
        if d < 2 || self.shape().last() != Some(&d) || beta.numel() != d {
            return dim_err(format!(
                "layer_norm: x {:?}, gamma {:?}, beta {:?}",
                self.shape(),
                gamma.shape(),
                beta.shape()
            ));
        }
        let rows = self.numel() / d;
        let inv_d = F::of(1.0 / d as f64);
        let mut xhat = vec![F::zero(); self.numel()];
        let mut rstd = vec![F::zero(); rows];
        let mut out = vec![F::zero(); self.numel()];
        for (r, xr) in self.data().chunks_exact(d).enumerate() {
            let mean = xr.iter().copied().sum::<F>() * inv_d;
            let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let rs = F::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for i in 0..d {
                let h = (xr[i] - mean) * rs;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gamma.data()[i] + beta.data()[i];
            }
        }
        let need = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(Tensor::from_op(self.shape().to_vec(), out, need, || Op::LayerNorm {
            x: self.clone(),
            gamma: gamma.clone(),
            beta: beta.clone(),
            xhat,
            rstd,
        }))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&self) -> Tensor<F> {
        let inv_sqrt2 = F::of(std::f64::consts::FRAC_1_SQRT_2);
        let half = F::of(0.5);
        let out = self
            .data()
            .iter()
            .map(|&v| half * v * (F::one() + (v * inv_sqrt2).erf()))
            .collect();
        Tensor::from_op(self.shape().to_vec(), out, self.requires_grad(), || Op::Gelu { x: self.clone() })
    }

    /// Mean softmax cross-entropy of `M×K` logits against class ids.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor<F>> {
        if self.rank() != 2 || self.shape()[0] != targets.len() {
            return dim_err(format!(
                "cross_entropy: logits {:?} with {} targets",
                self.shape(),
                targets.len()
            ));
        }
        let k = self.shape()[1];
        if let Some(&bad) = targets.iter().find(|&&t| t >= k) {
            return usage_err(format!("target {bad} out of range for {k} classes"));
        }
        let mut probs = self.to_vec();
        let mut loss = 0.0f64;
        for (row, &t) in probs.chunks_exact_mut(k).zip(targets) {
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            // -log p_t = log Σ exp(z - max) - (z_t - max), with row[t] = exp(z_t - max)
            loss += total.ln().as_f64() - row[t].ln().as_f64();
            let inv = F::one() / total;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let value = F::of(loss / targets.len() as f64);
        Ok(Tensor::from_op(Vec::new(), vec![value], self.requires_grad(), || Op::CrossEntropy {
            logits: self.clone(),
            targets: targets.to_vec(),
            probs,
        }))
    }

    /// Gathers slices along axis 0: `out[i] = self[idx[i]]`.
    pub fn index_rows(&self, idx: &[usize]) -> Result<Tensor<F>> {
        if self.rank() == 0 || idx.is_empty() {
            return dim_err(format!("index_rows on {:?} with {} indices", self.shape(), idx.len()));
        }
        let rows = self.shape()[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return dim_err(format!("row index {bad} out of range for {rows} rows"));
        }
        let row = self.numel() / rows;
        let mut out = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            out.extend_from_slice(&self.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = idx.len();
        Ok(Tensor::from_op(shape, out, self.requires_grad(), || Op::IndexRows {
            x: self.clone(),
            idx: idx.to_vec(),
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<F>> {
        if axis >= self.rank() || len == 0 || start + len > self.shape()[axis] {
            return dim_err(format!("narrow axis {axis} [{start}, {start}+{len}) of {:?}", self.shape()));
        }
        let outer = numel(&self.shape()[..axis]);
        let inner = numel(&self.shape()[axis + 1..]);
        let total = self.shape()[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * total + start) * inner;
            out.extend_from_slice(&self.data()[base..base + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(shape, out, self.requires_grad(), || Op::Narrow { x: self.clone(), axis, start }))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor<F> {
        let total: F = self.data().iter().copied().sum();
        Tensor::from_op(Vec::new(), vec![total], self.requires_grad(), || Op::Sum { x: self.clone() })
    }

    pub fn mean(&self) -> Tensor<F> {
        self.sum().scale(F::of(1.0 / self.numel() as f64))
    }

    /// `x · w + b` over the trailing dimension; `w` is `in×out`.
    pub fn linear(&self, w: &Tensor<F>, b: Option<&Tensor<F>>) -> Result<Tensor<F>> {
        if w.rank() != 2 || self.shape().last() != Some(&w.shape()[0]) {
            return dim_err(format!("linear: x {:?}, w {:?}", self.shape(), w.shape()));
        }
        let din = w.shape()[0];
        let rows = self.numel() / din;
        let y = self.reshape(&[rows, din])?.matmul(w)?;
        let y = match b {
            Some(b) => y.add_bias(b)?,
            None => y,
        };
        let mut shape = self.shape().to_vec();
        *shape.last_mut().unwrap() = w.shape()[1];
        y.reshape(&shape)
    }
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat<F: Scalar>(parts: &[Tensor<F>], axis: usize) -> Result<Tensor<F>> {
    let Some(first) = parts.first() else {
        return usage_err("concat of nothing");
    };
    let rank = first.rank();
    if axis >= rank {
        return dim_err(format!("concat axis {axis} for rank {rank}"));
    }
    for p in parts {
        let ok = p.rank() == rank
            && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !ok {
            return dim_err(format!("concat: {:?} vs {:?}", p.shape(), first.shape()));
        }
    }
    let outer = numel(&first.shape()[..axis]);
    let inner = numel(&first.shape()[axis + 1..]);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let len = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    let need = parts.iter().any(Tensor::requires_grad);
    Ok(Tensor::from_op(shape, out, need, || Op::Concat { parts: parts.to_vec(), axis }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let m = t(&[2, 2], &[2., 3., 4., 5.]);
        assert_eq!(eye.matmul(&m).unwrap().data(), &[2., 3., 4., 5.]);
        let a = t(&[1, 2], &[1., 2.]);
        let b = t(&[2, 1], &[3., 4.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let b = t(&[3, 4], &(0..12).map(|i| i as f64 - 3.5).collect::<Vec<_>>());
        let c = z.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[2, 3]).unwrap();
        assert!(matches!(a.matmul(&b), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn softmax_closed_forms() {
        let u = t(&[3], &[0., 0., 0.]).softmax_lastdim().unwrap();
        for &v in u.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = t(&[2], &[0., 2f64.ln()]).softmax_lastdim().unwrap();
        assert!((s.data()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.data()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant() {
        let x = Tensor::<f32>::new(&[2, 3], vec![0.3, -1.2, 2.0, 5.0, 5.5, -0.1]).unwrap();
        let shifted = Tensor::<f32>::new(&[2, 3], x.data().iter().map(|v| v + 7.0).collect()).unwrap();
        let (a, b) = (x.softmax_lastdim().unwrap(), shifted.softmax_lastdim().unwrap());
        for (p, q) in a.data().iter().zip(b.data()) {
            assert!((p - q).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_cases() {
        let g = t(&[2], &[1., 1.]);
        let b = t(&[2], &[0., 0.]);
        let y = t(&[1, 2], &[1., 3.]).layer_norm(&g, &b, 0.0).unwrap();
        assert_eq!(y.data(), &[-1., 1.]);

        let g4 = t(&[4], &[1.; 4]);
        let b4 = t(&[4], &[0.; 4]);
        let c = t(&[4], &[2.5; 4]).layer_norm(&g4, &b4, 1e-5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));

        let beta = t(&[4], &[0.5, -1.0, 2.0, 0.25]);
        let shifted = t(&[4], &[0.1, 0.9, -0.3, 0.4]).layer_norm(&Tensor::zeros(&[4]).unwrap(), &beta, 1e-5).unwrap();
        assert_eq!(shifted.data(), beta.data());
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::<f64>::param(&[], vec![3.0]).unwrap();
        let g = x.mul(&x).unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(crate::Error::Usage(_))));
    }

    #[test]
    fn permute_roundtrip() {
        let x = t(&[2, 3, 4], &(0..24).map(f64::from).collect::<Vec<_>>());
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[k][i][j] = x[i][j][k]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], x.data()[1 * 12 + 2 * 4 + 1]);
        let back = p.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn no_grad_skips_recording() {
        let w = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = super::super::no_grad(|| w.scale(3.0));
        assert!(!y.requires_grad());
        assert!(w.scale(3.0).requires_grad());
    }
}
