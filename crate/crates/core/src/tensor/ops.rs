use nalgebra::DMatrix;

use super::DiffTensor;
use crate::error::{shape_err, Error, Result};

/// `c = op(a) * op(b) + beta * c` on row-major buffers, where `op(a)` is
/// `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn same_shape(a: &DiffTensor, b: &DiffTensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

fn needs(p: &DiffTensor) -> bool {
    p.requires_grad()
}

pub fn add(a: &DiffTensor, b: &DiffTensor) -> Result<DiffTensor> {
    same_shape(a, b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(DiffTensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g, ps| {
            ps.iter()
                .map(|p| needs(p).then(|| g.to_vec()))
                .collect()
        },
    ))
}

/// Elementwise product.
pub fn mul(a: &DiffTensor, b: &DiffTensor) -> Result<DiffTensor> {
    same_shape(a, b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Ok(DiffTensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone(), b.clone()],
        |g, ps| {
            let (a, b) = (&ps[0], &ps[1]);
            vec![
                needs(a).then(|| g.iter().zip(b.data()).map(|(g, y)| g * y).collect()),
                needs(b).then(|| g.iter().zip(a.data()).map(|(g, x)| g * x).collect()),
            ]
        },
    ))
}

pub fn scale(a: &DiffTensor, s: f64) -> DiffTensor {
    let data = a.data().iter().map(|x| x * s).collect();
    DiffTensor::from_op(a.shape().to_vec(), data, vec![a.clone()], move |g, _| {
        vec![Some(g.iter().map(|g| g * s).collect())]
    })
}

/// Sum of all entries, as a one-element tensor.
pub fn sum(a: &DiffTensor) -> DiffTensor {
    let total = a.data().iter().sum();
    let n = a.len();
    DiffTensor::from_op(vec![1], vec![total], vec![a.clone()], move |g, _| {
        vec![Some(vec![g[0]; n])]
    })
}

/// Row-major reinterpretation with a new shape.
pub fn reshape(a: &DiffTensor, shape: &[usize]) -> Result<DiffTensor> {
    let n: usize = shape.iter().product();
    if n != a.len() || shape.contains(&0) {
        return shape_err(format!("cannot reshape {:?} into {shape:?}", a.shape()));
    }
    Ok(DiffTensor::from_op(
        shape.to_vec(),
        a.data().to_vec(),
        vec![a.clone()],
        |g, _| vec![Some(g.to_vec())],
    ))
}

/// `x` for `x >= 0`, `e^x - 1` otherwise.
pub fn elu(a: &DiffTensor) -> DiffTensor {
    let data: Vec<f64> = a
        .data()
        .iter()
        .map(|&x| if x >= 0.0 { x } else { x.exp_m1() })
        .collect();
    DiffTensor::from_op(a.shape().to_vec(), data, vec![a.clone()], |g, ps| {
        let x = ps[0].data();
        vec![Some(
            g.iter()
                .zip(x)
                .map(|(g, &x)| if x >= 0.0 { *g } else { g * x.exp() })
                .collect(),
        )]
    })
}

fn axis_layout(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for shape {shape:?}"
        )));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

/// Softmax along `axis`.
pub fn softmax(a: &DiffTensor, axis: usize) -> Result<DiffTensor> {
    let (outer, len, inner) = axis_layout(a.shape(), axis)?;
    let x = a.data();
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * len + k) * inner + i;
            let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for k in 0..len {
                let e = (x[idx(k)] - max).exp();
                y[idx(k)] = e;
                total += e;
            }
            for k in 0..len {
                y[idx(k)] /= total;
            }
        }
    }
    let out = y.clone();
    Ok(DiffTensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone()],
        move |g, _| {
            let mut dx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        dx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            vec![Some(dx)]
        },
    ))
}

/// `-log softmax(logits)[target]` over the flattened logits.
pub fn cross_entropy(logits: &DiffTensor, target: usize) -> Result<DiffTensor> {
    let x = logits.data();
    if target >= x.len() {
        return Err(Error::InvalidArgument(format!(
            "target {target} out of range for {} logits",
            x.len()
        )));
    }
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = x.iter().map(|v| (v - max).exp()).sum();
    let lse = max + total.ln();
    let loss = lse - x[target];
    Ok(DiffTensor::from_op(
        vec![1],
        vec![loss],
        vec![logits.clone()],
        move |g, ps| {
            let x = ps[0].data();
            let mut dx: Vec<f64> = x.iter().map(|v| (v - lse).exp() * g[0]).collect();
            dx[target] -= g[0];
            vec![Some(dx)]
        },
    ))
}

/// Add `bias[c]` to every entry of channel `c` of a `C x ...` tensor.
pub fn add_channel_bias(x: &DiffTensor, bias: &DiffTensor) -> Result<DiffTensor> {
    let c = x.shape()[0];
    if bias.len() != c {
        return shape_err(format!(
            "bias of length {} for {c} channels",
            bias.len()
        ));
    }
    let plane = x.len() / c;
    let mut data = x.data().to_vec();
    for (ch, b) in bias.data().iter().enumerate() {
        data[ch * plane..(ch + 1) * plane]
            .iter_mut()
            .for_each(|v| *v += b);
    }
    Ok(DiffTensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone(), bias.clone()],
        move |g, ps| {
            vec![
                needs(&ps[0]).then(|| g.to_vec()),
                needs(&ps[1]).then(|| g.chunks(plane).map(|c| c.iter().sum()).collect()),
            ]
        },
    ))
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &DiffTensor, b: &DiffTensor) -> Result<DiffTensor> {
    let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
        return shape_err(format!(
            "matmul needs 2-d operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        ));
    };
    if k != k2 {
        return shape_err(format!("matmul inner dims {k} and {k2}"));
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Ok(DiffTensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        move |g, ps| {
            let da = needs(&ps[0]).then(|| {
                let mut d = vec![0.0; m * k];
                gemm(m, n, k, g, false, ps[1].data(), true, 0.0, &mut d);
                d
            });
            let db = needs(&ps[1]).then(|| {
                let mut d = vec![0.0; k * n];
                gemm(k, m, n, ps[0].data(), true, g, false, 0.0, &mut d);
                d
            });
            vec![da, db]
        },
    ))
}

/// Apply a fixed `E x D` matrix to every group of `D` leading channels.
///
/// `x` has shape `[groups * D, ...]`; the result has shape `[groups * E, ...]`.
/// This realizes per-pixel changes of basis such as group discretization.
pub fn mix_channels(x: &DiffTensor, groups: usize, matrix: &DMatrix<f64>) -> Result<DiffTensor> {
    let (e, d) = matrix.shape();
    let shape = x.shape();
    if groups == 0 || shape[0] != groups * d {
        return shape_err(format!(
            "mix_channels: {} channels is not {groups} groups of {d}",
            shape[0]
        ));
    }
    let plane: usize = shape[1..].iter().product();
    let rows: Vec<f64> = (0..e)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| matrix[(i, j)])
        .collect();
    let mut out = vec![0.0; groups * e * plane];
    for gi in 0..groups {
        gemm(
            e,
            d,
            plane,
            &rows,
            false,
            &x.data()[gi * d * plane..(gi + 1) * d * plane],
            false,
            0.0,
            &mut out[gi * e * plane..(gi + 1) * e * plane],
        );
    }
    let mut out_shape = shape.to_vec();
    out_shape[0] = groups * e;
    Ok(DiffTensor::from_op(
        out_shape,
        out,
        vec![x.clone()],
        move |g, _| {
            let mut dx = vec![0.0; groups * d * plane];
            for gi in 0..groups {
                gemm(
                    d,
                    e,
                    plane,
                    &rows,
                    true,
                    &g[gi * e * plane..(gi + 1) * e * plane],
                    false,
                    0.0,
                    &mut dx[gi * d * plane..(gi + 1) * d * plane],
                );
            }
            vec![Some(dx)]
        },
    ))
}

/// Average over all trailing axes: `[C, H, W] -> [C, 1, 1]`.
pub fn spatial_mean(x: &DiffTensor) -> Result<DiffTensor> {
    let shape = x.shape();
    if shape.len() != 3 {
        return shape_err(format!("spatial_mean needs [C, H, W], got {shape:?}"));
    }
    let c = shape[0];
    let plane = shape[1] * shape[2];
    let data = x
        .data()
        .chunks(plane)
        .map(|ch| ch.iter().sum::<f64>() / plane as f64)
        .collect();
    Ok(DiffTensor::from_op(
        vec![c, 1, 1],
        data,
        vec![x.clone()],
        move |g, _| {
            vec![Some(
                g.iter()
                    .flat_map(|&v| std::iter::repeat(v / plane as f64).take(plane))
                    .collect(),
            )]
        },
    ))
}
