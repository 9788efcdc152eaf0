//! Differentiable primitives on [`Var`].

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::kernels;
use crate::tape::{ConvGeometry, Op, Var};
use crate::tensor::{axis_split, Tensor};

/// Lower bound on the standard deviation used in the adjoint of [`Var::std`].
pub const STD_FLOOR: f64 = 1e-8;

fn same_tape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(TensorError::Contract(format!(
            "{op}: operands belong to different tapes"
        )))
    }
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(TensorError::invalid(
            op,
            format!("axis {axis} out of range for shape {shape:?}"),
        ));
    }
    Ok(())
}

fn without_axis(shape: &[usize], axis: usize) -> Vec<usize> {
    let mut out = shape.to_vec();
    out.remove(axis);
    out
}

impl<'t> Var<'t> {
    /// Matrix product of two rank-2 operands.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_tape("matmul", self, other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            self.data(),
            false,
            other.data(),
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![m, n], out)?;
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.record(value, tracked, |_| Op::MatMul {
            a: self.id,
            b: other.id,
            a_val: self.value.clone(),
            b_val: other.value.clone(),
        }))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let s = self.shape();
        if s.len() != 2 {
            return Err(TensorError::invalid(
                "transpose",
                format!("expected rank 2, got {s:?}"),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let x = self.data();
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = x[r * cols + c];
            }
        }
        let value = Tensor::new(vec![cols, rows], out)?;
        Ok(self
            .tape
            .record(value, self.is_tracked(), |_| Op::Transpose {
                a: self.id.unwrap(),
                rows,
                cols,
            }))
    }

    /// Elementwise sum. `other` may have the shape of a trailing suffix of
    /// `self`, in which case it is broadcast over the leading extents.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_tape("add", self, other)?;
        let (sa, sb) = (self.shape(), other.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::shape("add", sa, sb));
        }
        let b = other.data();
        let b_len = b.len();
        let out: Vec<f64> = self
            .data()
            .chunks_exact(b_len)
            .flat_map(|chunk| chunk.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.record(value, tracked, |_| Op::Add {
            a: self.id,
            b: other.id,
            b_len,
        }))
    }

    /// Elementwise product of equal-shape operands.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        same_tape("mul", self, other)?;
        if self.shape() != other.shape() {
            return Err(TensorError::shape("mul", self.shape(), other.shape()));
        }
        let out = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Tensor::new(self.shape().to_vec(), out)?;
        let tracked = self.is_tracked() || other.is_tracked();
        Ok(self.tape.record(value, tracked, |_| Op::Mul {
            a: self.id,
            b: other.id,
            a_val: self.value.clone(),
            b_val: other.value.clone(),
        }))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let out = self.data().iter().map(|x| x * factor).collect();
        let value = Tensor::new(self.shape().to_vec(), out).expect("same shape");
        self.tape.record(value, self.is_tracked(), |_| Op::Scale {
            a: self.id.unwrap(),
            factor,
        })
    }

    pub fn relu(&self) -> Var<'t> {
        let out = self.data().iter().map(|&x| x.max(0.0)).collect();
        let value = Tensor::new(self.shape().to_vec(), out).expect("same shape");
        self.tape.record(value, self.is_tracked(), |v| Op::Relu {
            a: self.id.unwrap(),
            out: v.clone(),
        })
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("softmax", shape, axis)?;
        let x = self.data();
        if x.iter().any(|v| v.is_nan()) {
            return Err(TensorError::Numeric {
                op: "softmax",
                detail: "NaN in input".into(),
            });
        }
        let (outer, len, inner) = axis_split(shape, axis);
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (x[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(shape.to_vec(), out)?;
        Ok(self.tape.record(value, self.is_tracked(), |v| Op::Softmax {
            a: self.id.unwrap(),
            out: v.clone(),
            outer,
            len,
            inner,
        }))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias` (both
    /// shaped like the last axis).
    pub fn layer_norm(&self, gain: &Var<'t>, bias: &Var<'t>, eps: f64) -> Result<Var<'t>> {
        same_tape("layer_norm", self, gain)?;
        same_tape("layer_norm", self, bias)?;
        let shape = self.shape();
        let dim = *shape
            .last()
            .ok_or_else(|| TensorError::invalid("layer_norm", "cannot normalize a scalar"))?;
        if gain.shape() != [dim] {
            return Err(TensorError::shape("layer_norm", shape, gain.shape()));
        }
        if bias.shape() != [dim] {
            return Err(TensorError::shape("layer_norm", shape, bias.shape()));
        }
        let x = self.data();
        let rows = x.len() / dim;
        let mut normalized = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; x.len()];
        let (gv, bv) = (gain.data(), bias.data());
        for r in 0..rows {
            let row = &x[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..dim {
                let h = (row[j] - mean) * inv;
                normalized[r * dim + j] = h;
                out[r * dim + j] = h * gv[j] + bv[j];
            }
        }
        let value = Tensor::new(shape.to_vec(), out)?;
        let tracked = self.is_tracked() || gain.is_tracked() || bias.is_tracked();
        Ok(self.tape.record(value, tracked, |_| Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            gain_val: gain.value.clone(),
            normalized,
            inv_std,
            dim,
        }))
    }

    /// Mean over `axis`; the axis is removed from the shape.
    pub fn mean(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("mean", shape, axis)?;
        let (outer, len, inner) = axis_split(shape, axis);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[o * len * inner + j * inner + i];
                }
            }
        }
        for v in &mut out {
            *v /= len as f64;
        }
        let value = Tensor::new(without_axis(shape, axis), out)?;
        Ok(self.tape.record(value, self.is_tracked(), |_| Op::Mean {
            a: self.id.unwrap(),
            outer,
            len,
            inner,
        }))
    }

    /// Population standard deviation over `axis` (two-pass). The adjoint
    /// divides by `max(std, STD_FLOOR)`.
    pub fn std(&self, axis: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("std", shape, axis)?;
        let (outer, len, inner) = axis_split(shape, axis);
        let x = self.data();
        let mut centered = vec![0.0; x.len()];
        let mut std = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mean = (0..len).map(|j| x[at(j)]).sum::<f64>() / len as f64;
                let mut ss = 0.0;
                for j in 0..len {
                    let c = x[at(j)] - mean;
                    centered[at(j)] = c;
                    ss += c * c;
                }
                std[o * inner + i] = (ss / len as f64).sqrt();
            }
        }
        let value = Tensor::new(without_axis(shape, axis), std.clone())?;
        Ok(self.tape.record(value, self.is_tracked(), |_| Op::Std {
            a: self.id.unwrap(),
            centered,
            std,
            outer,
            len,
            inner,
        }))
    }

    /// 1-D convolution over time.
    ///
    /// `self` is `[time, in_channels]`, `kernels` is
    /// `[kernel, in_channels, out_channels]`; the output is
    /// `[out_time, out_channels]` with
    /// `out[t, o] = sum_{k,c} x[t*stride + k - padding, c] * w[k, c, o]`
    /// (zero padding on both sides).
    pub fn conv1d(&self, kernels: &Var<'t>, stride: usize, padding: usize) -> Result<Var<'t>> {
        same_tape("conv1d", self, kernels)?;
        let (sx, sw) = (self.shape(), kernels.shape());
        if sx.len() != 2 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(TensorError::shape("conv1d", sx, sw));
        }
        if stride == 0 {
            return Err(TensorError::invalid("conv1d", "stride must be positive"));
        }
        let (t_in, c_in) = (sx[0], sx[1]);
        let (kernel, c_out) = (sw[0], sw[2]);
        if t_in + 2 * padding < kernel {
            return Err(TensorError::invalid(
                "conv1d",
                format!("input of length {t_in} is shorter than kernel {kernel}"),
            ));
        }
        let t_out = (t_in + 2 * padding - kernel) / stride + 1;
        let cols = kernels::im2col(self.data(), t_in, c_in, kernel, stride, padding, t_out);
        let width = kernel * c_in;
        let mut out = vec![0.0; t_out * c_out];
        kernels::gemm(
            t_out,
            width,
            c_out,
            &cols,
            false,
            kernels.data(),
            false,
            &mut out,
            0.0,
        );
        let value = Tensor::new(vec![t_out, c_out], out)?;
        let tracked = self.is_tracked() || kernels.is_tracked();
        let geometry = ConvGeometry {
            t_in,
            c_in,
            kernel,
            c_out,
            stride,
            padding,
            t_out,
        };
        Ok(self.tape.record(value, tracked, |_| Op::Conv1d {
            x: self.id,
            w: kernels.id,
            cols,
            w_val: kernels.value.clone(),
            geometry,
        }))
    }

    /// Slice of length `len` starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        check_axis("narrow", shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(TensorError::invalid(
                "narrow",
                format!(
                    "range {start}..{} exceeds extent {}",
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let (outer, len_in, inner) = axis_split(shape, axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * len_in + start) * inner;
            out.extend_from_slice(&x[src..src + len * inner]);
        }
        let mut new_shape = shape.to_vec();
        new_shape[axis] = len;
        let value = Tensor::new(new_shape, out)?;
        Ok(self.tape.record(value, self.is_tracked(), |_| Op::Narrow {
            a: self.id.unwrap(),
            outer,
            len_in,
            start,
            len,
            inner,
        }))
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let value = self.value.reshape(shape)?;
        Ok(self.tape.record(value, self.is_tracked(), |_| Op::Reshape {
            a: self.id.unwrap(),
        }))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var<'t> {
        let value = Tensor::scalar(self.data().iter().sum());
        self.tape.record(value, self.is_tracked(), |_| Op::Sum {
            a: self.id.unwrap(),
        })
    }

    /// Inverted dropout. With `rate == 0` or outside training this is the
    /// identity and records nothing.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::invalid(
                "dropout",
                format!("rate must lie in [0, 1), got {rate}"),
            ));
        }
        if rate == 0.0 || !train {
            return Ok(self.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value.numel())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let out = self.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::new(self.shape().to_vec(), out)?;
        Ok(self.tape.record(value, self.is_tracked(), |_| Op::Dropout {
            a: self.id.unwrap(),
            mask,
        }))
    }

    /// Negative log-likelihood of `target` under `softmax(self)`; `self` must
    /// hold a single row of logits.
    pub fn cross_entropy(&self, target: usize) -> Result<Var<'t>> {
        let x = self.data();
        let classes = x.len();
        if self.shape().iter().filter(|&&d| d > 1).count() > 1 {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("expected a single row of logits, got {:?}", self.shape()),
            ));
        }
        if target >= classes {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("target {target} out of range for {classes} classes"),
            ));
        }
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = x.iter().map(|v| (v - max).exp()).sum();
        let log_norm = max + total.ln();
        let probs: Vec<f64> = x.iter().map(|v| (v - log_norm).exp()).collect();
        let value = Tensor::scalar(log_norm - x[target]);
        Ok(self
            .tape
            .record(value, self.is_tracked(), |_| Op::CrossEntropy {
                a: self.id.unwrap(),
                probs,
                target,
            }))
    }
}

/// Concatenates `parts` along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat", "nothing to concatenate"))?;
    let shape = first.shape();
    check_axis("concat", shape, axis)?;
    for p in &parts[1..] {
        same_tape("concat", first, p)?;
        let s = p.shape();
        let compatible = s.len() == shape.len()
            && s.iter()
                .zip(shape)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(TensorError::shape("concat", shape, s));
        }
    }
    let (outer, _, inner) = axis_split(shape, axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let extent = p.shape()[axis];
            let src = o * extent * inner;
            out.extend_from_slice(&p.data()[src..src + extent * inner]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[axis] = total;
    let value = Tensor::new(new_shape, out)?;
    let tracked = parts.iter().any(Var::is_tracked);
    Ok(first.tape.record(value, tracked, |_| Op::Concat {
        parts: parts.iter().map(|p| (p.id, p.shape()[axis])).collect(),
        outer,
        inner,
    }))
}
