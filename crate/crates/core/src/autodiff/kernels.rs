//! Value-level kernels shared by the forward primitives and the reverse pass.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major `m x k` times `k x n` with arbitrary strides on the inputs.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    debug_assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the debug assertions above spell out the bounds contract; every
    // caller derives m, k, n and the strides from the checked tensor shapes.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `W x` for a vector `x`, or `X W^T` when `x` is a batch with one input per row.
pub(crate) fn matvec(w: &Tensor, x: &Tensor) -> Result<Tensor> {
    if w.rank() != 2 {
        return Err(shape_err("matvec", w, x));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    match x.shape() {
        [n] if *n == inp => Ok(Tensor::from_parts(
            vec![out],
            gemm(out, inp, 1, w.data(), (inp, 1), x.data(), (1, 1)),
        )),
        [rows, n] if *n == inp => Ok(Tensor::from_parts(
            vec![*rows, out],
            gemm(*rows, inp, out, x.data(), (inp, 1), w.data(), (1, inp)),
        )),
        _ => Err(shape_err("matvec", w, x)),
    }
}

/// Adjoints of `matvec` for upstream gradient `g`: returns `(dW, dx)`.
pub(crate) fn matvec_backward(w: &Tensor, x: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    if x.rank() == 1 {
        let dw = gemm(out, 1, inp, g.data(), (1, 1), x.data(), (1, 1));
        let dx = gemm(inp, out, 1, w.data(), (1, inp), g.data(), (1, 1));
        (
            Tensor::from_parts(vec![out, inp], dw),
            Tensor::from_parts(vec![inp], dx),
        )
    } else {
        let rows = x.shape()[0];
        let dw = gemm(out, rows, inp, g.data(), (1, out), x.data(), (inp, 1));
        let dx = gemm(rows, out, inp, g.data(), (out, 1), w.data(), (inp, 1));
        (
            Tensor::from_parts(vec![out, inp], dw),
            Tensor::from_parts(vec![rows, inp], dx),
        )
    }
}

/// True when `b` is a row vector broadcast across the rows of matrix `a`.
pub(crate) fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    a.rank() == 2 && b.rank() == 1 && b.len() == a.cols()
}

/// Elementwise binary op; `b` may be a row vector broadcast over matrix `a`.
pub(crate) fn zip(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    } else if is_row_broadcast(a, b) {
        let mut data = Vec::with_capacity(a.len());
        for row in a.rows_iter() {
            data.extend(row.iter().zip(b.data()).map(|(&x, &y)| f(x, y)));
        }
        Ok(Tensor::from_parts(a.shape().to_vec(), data))
    } else {
        Err(shape_err(op, a, b))
    }
}

/// Sums a matrix over its rows (the adjoint of a row broadcast).
pub(crate) fn sum_rows(g: &Tensor) -> Tensor {
    let cols = g.cols();
    let mut out = vec![0.0; cols];
    for row in g.rows_iter() {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![cols], out)
}

#[cfg(test)]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `(softplus(x), sigmoid(x))` from a single exponential.
pub(crate) fn softplus_with_slope(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let slope = if x >= 0.0 {
        1.0 / (1.0 + e)
    } else {
        e / (1.0 + e)
    };
    (x.max(0.0) + e.ln_1p(), slope)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn dot(op: &'static str, a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum())
}

/// `acc += g`, same shapes.
pub(crate) fn accumulate(acc: &mut Tensor, g: &Tensor) {
    debug_assert_eq!(acc.shape(), g.shape());
    for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
        *a += v;
    }
}
