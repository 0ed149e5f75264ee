//! Forward and backward kernels for the layer types in the reference
//! architecture. All image tensors are NHWC.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Shape4, Tensor};

/// Valid (unpadded, stride 1) cross-correlation plus bias.
///
/// `kernel` is `(kh, kw, cin, cout)`, `bias` is `(cout,)`; output is
/// `(n, h - kh + 1, w - kw + 1, cout)`.
pub fn conv2d_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (s, kh, kw, cin, cout) = conv_dims(x, kernel, bias)?;
    let (oh, ow) = (s.h - kh + 1, s.w - kw + 1);
    let out_shape = Shape4::new(s.n, oh, ow, cout)?;
    let mut y = vec![0.0; out_shape.len()];
    let xd = x.data();
    let wd = kernel.data();
    let bd = bias.data();
    for b in 0..s.n {
        for i in 0..oh {
            for j in 0..ow {
                let o = out_shape.offset(b, i, j, 0);
                let out = &mut y[o..o + cout];
                out.copy_from_slice(bd);
                for ki in 0..kh {
                    for kj in 0..kw {
                        let xi = s.offset(b, i + ki, j + kj, 0);
                        let px = &xd[xi..xi + cin];
                        let wbase = (ki * kw + kj) * cin * cout;
                        for (ci, &xv) in px.iter().enumerate() {
                            let wrow = &wd[wbase + ci * cout..wbase + (ci + 1) * cout];
                            for (acc, &wv) in out.iter_mut().zip(wrow) {
                                *acc += xv * wv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&out_shape.dims(), y)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
/// Pass `want_dx = false` for the first layer of a network to skip `dx`.
pub fn conv2d_backward(
    dy: &Tensor,
    x: &Tensor,
    kernel: &Tensor,
    want_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::Shape(format!("conv kernel must be rank 4, got {ks:?}")));
    }
    let (kh, kw, cin, cout) = (ks[0], ks[1], ks[2], ks[3]);
    let s = x.shape4()?;
    let d = dy.shape4()?;
    if s.c != cin || d.c != cout || d.n != s.n || d.h + kh - 1 != s.h || d.w + kw - 1 != s.w {
        return Err(Error::StaleCache(format!(
            "conv backward: dy {:?} does not match input {:?} and kernel {ks:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let xd = x.data();
    let wd = kernel.data();
    let dyd = dy.data();
    let mut dx = want_dx.then(|| vec![0.0; s.len()]);
    let mut dw = vec![0.0; kernel.len()];
    let mut db = vec![0.0; cout];
    for b in 0..s.n {
        for i in 0..d.h {
            for j in 0..d.w {
                let o = d.offset(b, i, j, 0);
                let g = &dyd[o..o + cout];
                for (acc, &gv) in db.iter_mut().zip(g) {
                    *acc += gv;
                }
                for ki in 0..kh {
                    for kj in 0..kw {
                        let xi = s.offset(b, i + ki, j + kj, 0);
                        let wbase = (ki * kw + kj) * cin * cout;
                        for ci in 0..cin {
                            let xv = xd[xi + ci];
                            let r = wbase + ci * cout..wbase + (ci + 1) * cout;
                            let mut dot = 0.0;
                            for ((dwv, &wv), &gv) in dw[r.clone()].iter_mut().zip(&wd[r]).zip(g) {
                                *dwv += xv * gv;
                                dot += wv * gv;
                            }
                            if let Some(dx) = dx.as_mut() {
                                dx[xi + ci] += dot;
                            }
                        }
                    }
                }
            }
        }
    }
    let dx = dx.map(|v| Tensor::from_vec(x.shape(), v)).transpose()?;
    Ok((dx, Tensor::from_vec(ks, dw)?, Tensor::from_vec(&[cout], db)?))
}

fn conv_dims(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(Shape4, usize, usize, usize, usize)> {
    let s = x.shape4()?;
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::Shape(format!("conv kernel must be rank 4, got {ks:?}")));
    }
    let (kh, kw, cin, cout) = (ks[0], ks[1], ks[2], ks[3]);
    if cin != s.c {
        return Err(Error::Shape(format!(
            "conv kernel expects {cin} input channels, input has {}",
            s.c
        )));
    }
    if bias.shape() != [cout] {
        return Err(Error::Shape(format!(
            "conv bias should have shape [{cout}], got {:?}",
            bias.shape()
        )));
    }
    if s.h < kh || s.w < kw {
        return Err(Error::Shape(format!(
            "input {}x{} smaller than kernel {kh}x{kw}",
            s.h, s.w
        )));
    }
    Ok((s, kh, kw, cin, cout))
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
///
/// Returns the pooled tensor and, per output element, the flat input index
/// that won. Ties go to the lowest flat index.
pub fn maxpool2x2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let s = x.shape4()?;
    let out = Shape4::new(s.n, s.h / 2, s.w / 2, s.c)
        .map_err(|_| Error::Shape(format!("input {:?} too small to pool", x.shape())))?;
    let xd = x.data();
    let mut y = vec![0.0; out.len()];
    let mut arg = vec![0usize; out.len()];
    for b in 0..s.n {
        for i in 0..out.h {
            for j in 0..out.w {
                for k in 0..s.c {
                    let cands = [
                        s.offset(b, 2 * i, 2 * j, k),
                        s.offset(b, 2 * i, 2 * j + 1, k),
                        s.offset(b, 2 * i + 1, 2 * j, k),
                        s.offset(b, 2 * i + 1, 2 * j + 1, k),
                    ];
                    let mut best = cands[0];
                    for &c in &cands[1..] {
                        if xd[c] > xd[best] {
                            best = c;
                        }
                    }
                    let o = out.offset(b, i, j, k);
                    y[o] = xd[best];
                    arg[o] = best;
                }
            }
        }
    }
    Ok((Tensor::from_vec(&out.dims(), y)?, arg))
}

pub fn maxpool2x2_backward(dy: &Tensor, argmax: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if dy.len() != argmax.len() {
        return Err(Error::StaleCache(format!(
            "pool backward: {} gradients for {} cached windows",
            dy.len(),
            argmax.len()
        )));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &a) in dy.data().iter().zip(argmax) {
        d[a] += g;
    }
    Ok(dx)
}

/// Spatial mean per channel: `(n, h, w, c) -> (n, c)`.
pub fn global_avg_pool_forward(x: &Tensor) -> Result<Tensor> {
    x.reduce_mean_spatial()
}

pub fn global_avg_pool_backward(dy: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let s = Shape4::try_from(input_shape)?;
    if dy.shape() != [s.n, s.c] {
        return Err(Error::StaleCache(format!(
            "average pool backward: dy {:?} vs input {input_shape:?}",
            dy.shape()
        )));
    }
    let scale = 1.0 / (s.h * s.w) as f64;
    let mut dx = vec![0.0; s.len()];
    for b in 0..s.n {
        let g = &dy.data()[b * s.c..(b + 1) * s.c];
        for px in dx[b * s.h * s.w * s.c..(b + 1) * s.h * s.w * s.c].chunks_exact_mut(s.c) {
            for (d, &gv) in px.iter_mut().zip(g) {
                *d = gv * scale;
            }
        }
    }
    Tensor::from_vec(input_shape, dx)
}

/// `y = x W + b` with `x: (n, in)`, `W: (in, out)`, `b: (out,)`.
pub fn dense_forward(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, uin, uout) = dense_dims(x, kernel, bias)?;
    let mut y = vec![0.0; n * uout];
    for (row, out) in x.data().chunks_exact(uin).zip(y.chunks_exact_mut(uout)) {
        out.copy_from_slice(bias.data());
        for (&xv, wrow) in row.iter().zip(kernel.data().chunks_exact(uout)) {
            for (o, &w) in out.iter_mut().zip(wrow) {
                *o += xv * w;
            }
        }
    }
    Tensor::from_vec(&[n, uout], y)
}

/// Returns `(dx, dW, db)`.
pub fn dense_backward(dy: &Tensor, x: &Tensor, kernel: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let ks = kernel.shape();
    if ks.len() != 2 || x.rank() != 2 || x.shape()[1] != ks[0] || dy.shape() != [x.shape()[0], ks[1]] {
        return Err(Error::StaleCache(format!(
            "dense backward: dy {:?}, input {:?}, kernel {ks:?}",
            dy.shape(),
            x.shape()
        )));
    }
    let (uin, uout) = (ks[0], ks[1]);
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; kernel.len()];
    let mut db = vec![0.0; uout];
    for ((row, g), dxr) in x
        .data()
        .chunks_exact(uin)
        .zip(dy.data().chunks_exact(uout))
        .zip(dx.chunks_exact_mut(uin))
    {
        for (acc, &gv) in db.iter_mut().zip(g) {
            *acc += gv;
        }
        for ((&xv, wrow), (dwrow, dxv)) in row
            .iter()
            .zip(kernel.data().chunks_exact(uout))
            .zip(dw.chunks_exact_mut(uout).zip(dxr.iter_mut()))
        {
            let mut dot = 0.0;
            for ((dwv, &w), &gv) in dwrow.iter_mut().zip(wrow).zip(g) {
                *dwv += xv * gv;
                dot += w * gv;
            }
            *dxv = dot;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(ks, dw)?,
        Tensor::from_vec(&[uout], db)?,
    ))
}

fn dense_dims(x: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize)> {
    let ks = kernel.shape();
    if x.rank() != 2 || ks.len() != 2 || x.shape()[1] != ks[0] || bias.shape() != [ks[1]] {
        return Err(Error::Shape(format!(
            "dense: input {:?}, kernel {ks:?}, bias {:?} do not chain",
            x.shape(),
            bias.shape()
        )));
    }
    Ok((x.shape()[0], ks[0], ks[1]))
}

/// Row-wise softmax of an `(n, k)` tensor, stabilised by subtracting the row max.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(Error::Shape(format!(
            "softmax expects (n, k), got {:?}",
            x.shape()
        )));
    }
    let k = x.shape()[1];
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(y)
}

/// Vector-Jacobian product of softmax given its output `y`.
pub fn softmax_backward(dy: &Tensor, y: &Tensor) -> Result<Tensor> {
    y.check_same_shape(dy)?;
    let k = y.shape()[1];
    let mut dx = Tensor::zeros_like(y);
    for ((yr, gr), dr) in y
        .data()
        .chunks_exact(k)
        .zip(dy.data().chunks_exact(k))
        .zip(dx.data_mut().chunks_exact_mut(k))
    {
        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - s);
        }
    }
    Ok(dx)
}

/// Inverted-dropout keep mask: each entry is `0` with probability `p`,
/// otherwise `1 / (1 - p)`.
pub fn dropout_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout p must be in [0, 1), got {p}"
        )));
    }
    let scale = 1.0 / (1.0 - p);
    let mut m = Tensor::zeros(shape);
    if p == 0.0 {
        m.map_inplace(|_| 1.0);
        return Ok(m);
    }
    for v in m.data_mut() {
        *v = if rng.random::<f64>() < p { 0.0 } else { scale };
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Returns the output and, in training mode, the mask that produced it.
pub fn dropout_forward(
    x: &Tensor,
    p: f64,
    mode: DropoutMode,
    rng: &mut Rng,
) -> Result<(Tensor, Option<Tensor>)> {
    match mode {
        DropoutMode::Eval => Ok((x.clone(), None)),
        DropoutMode::Train => {
            let mask = dropout_mask(x.shape(), p, rng)?;
            Ok((apply_mask(x, &mask)?, Some(mask)))
        }
    }
}

pub fn apply_mask(x: &Tensor, mask: &Tensor) -> Result<Tensor> {
    x.check_same_shape(mask)?;
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::SeedableRng;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_vec(shape, data).unwrap()
    }

    fn rand_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        t(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_of_ones_sums_window() {
        let y = conv2d_forward(
            &Tensor::full(&[1, 3, 3, 1], 1.0),
            &Tensor::full(&[3, 3, 1, 1], 1.0),
            &Tensor::zeros(&[1]),
        )
        .unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let mut rng = Rng::seed_from_u64(1);
        let x = rand_tensor(&[2, 6, 5, 3], &mut rng);
        let b = t(&[4], vec![0.5, -1.0, 2.0, 0.0]);
        let y = conv2d_forward(&x, &Tensor::zeros(&[3, 3, 3, 4]), &b).unwrap();
        assert_eq!(y.shape(), &[2, 4, 3, 4]);
        for px in y.data().chunks(4) {
            assert_eq!(px, b.data());
        }
    }

    #[test]
    fn conv_rejects_mismatch() {
        let x = Tensor::zeros(&[1, 5, 5, 2]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[3, 3, 3, 4]), &Tensor::zeros(&[4])).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[3, 3, 2, 4]), &Tensor::zeros(&[3])).is_err());
        assert!(conv2d_forward(
            &Tensor::zeros(&[1, 2, 2, 2]),
            &Tensor::zeros(&[3, 3, 2, 4]),
            &Tensor::zeros(&[4])
        )
        .is_err());
    }

    #[test]
    fn conv_matches_naive_definition() {
        let mut rng = Rng::seed_from_u64(2);
        let x = rand_tensor(&[2, 5, 4, 2], &mut rng);
        let w = rand_tensor(&[3, 3, 2, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for n in 0..2 {
            for i in 0..3 {
                for j in 0..2 {
                    for co in 0..3 {
                        let mut acc = b.data()[co];
                        for ki in 0..3 {
                            for kj in 0..3 {
                                for ci in 0..2 {
                                    acc += x.get(&[n, i + ki, j + kj, ci]).unwrap()
                                        * w.get(&[ki, kj, ci, co]).unwrap();
                                }
                            }
                        }
                        let got = y.get(&[n, i, j, co]).unwrap();
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_backward_zero_upstream() {
        let mut rng = Rng::seed_from_u64(3);
        let x = rand_tensor(&[1, 4, 4, 2], &mut rng);
        let w = rand_tensor(&[3, 3, 2, 2], &mut rng);
        let (dx, dw, db) = conv2d_backward(&Tensor::zeros(&[1, 2, 2, 2]), &x, &w, true).unwrap();
        assert!(dx.unwrap().data().iter().all(|&v| v == 0.0));
        assert!(dw.data().iter().all(|&v| v == 0.0));
        assert!(db.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_single_pixel_is_input_patch() {
        let mut rng = Rng::seed_from_u64(4);
        let x = rand_tensor(&[1, 3, 3, 1], &mut rng);
        let w = rand_tensor(&[3, 3, 1, 1], &mut rng);
        let (_, dw, db) = conv2d_backward(&t(&[1, 1, 1, 1], vec![2.5]), &x, &w, false).unwrap();
        let expect: Vec<f64> = x.data().iter().map(|v| v * 2.5).collect();
        assert_eq!(dw.data(), expect.as_slice());
        assert_eq!(db.data(), &[2.5]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(5);
        let x = rand_tensor(&[1, 5, 5, 2], &mut rng);
        let w = rand_tensor(&[3, 3, 2, 3], &mut rng);
        let b = rand_tensor(&[3], &mut rng);
        let dy = rand_tensor(&[1, 3, 3, 3], &mut rng);
        let obj = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            let y = conv2d_forward(x, w, b).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, g)| a * g).sum()
        };
        let (dx, dw, db) = conv2d_backward(&dy, &x, &w, true).unwrap();
        let dx = dx.unwrap();
        let h = 1e-6;
        let check = |analytic: &Tensor, perturb: &dyn Fn(usize, f64) -> f64| {
            for i in 0..analytic.len() {
                let fd = (perturb(i, h) - perturb(i, -h)) / (2.0 * h);
                let a = analytic.data()[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-6, "index {i}: analytic {a} vs fd {fd}");
            }
        };
        check(&dx, &|i, e| {
            let mut p = x.clone();
            p.data_mut()[i] += e;
            obj(&p, &w, &b)
        });
        check(&dw, &|i, e| {
            let mut p = w.clone();
            p.data_mut()[i] += e;
            obj(&x, &p, &b)
        });
        check(&db, &|i, e| {
            let mut p = b.clone();
            p.data_mut()[i] += e;
            obj(&x, &w, &p)
        });
    }

    #[test]
    fn maxpool_unique_and_tied_windows() {
        let x = t(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let dx = maxpool2x2_backward(&t(&[1, 1, 1, 1], vec![1.0]), &arg, x.shape()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 1.0]);

        let x = Tensor::full(&[1, 2, 2, 1], 0.7);
        let (y, arg) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[0.7]);
        let dx = maxpool2x2_backward(&t(&[1, 1, 1, 1], vec![1.0]), &arg, x.shape()).unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_shapes() {
        let (y, _) = maxpool2x2_forward(&Tensor::zeros(&[2, 30, 30, 16])).unwrap();
        assert_eq!(y.shape(), &[2, 15, 15, 16]);
        let (y, _) = maxpool2x2_forward(&Tensor::zeros(&[1, 5, 7, 2])).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 2]);
        assert!(maxpool2x2_forward(&Tensor::zeros(&[1, 1, 4, 2])).is_err());
    }

    #[test]
    fn dense_examples() {
        let x = t(&[2, 3], vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(dense_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);

        let mut rng = Rng::seed_from_u64(6);
        let w = rand_tensor(&[3, 2], &mut rng);
        let b = rand_tensor(&[2], &mut rng);
        let dy = rand_tensor(&[2, 2], &mut rng);
        let (dx, dw, db) = dense_backward(&dy, &x, &w).unwrap();
        let obj = |x: &Tensor, w: &Tensor, b: &Tensor| -> f64 {
            dense_forward(x, w, b)
                .unwrap()
                .data()
                .iter()
                .zip(dy.data())
                .map(|(a, g)| a * g)
                .sum()
        };
        let h = 1e-6;
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&x, &p, &b) - obj(&x, &m, &b)) / (2.0 * h);
            assert!((fd - dw.data()[i]).abs() < 1e-8);
        }
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (obj(&p, &w, &b) - obj(&m, &w, &b)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-8);
        }
        let sums: Vec<f64> = (0..2).map(|k| dy.data()[k] + dy.data()[2 + k]).collect();
        assert_eq!(db.data(), sums.as_slice());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&t(&[1, 2], vec![0.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let a = softmax(&t(&[1, 3], vec![0.3, -1.2, 2.0])).unwrap();
        let b = softmax(&t(&[1, 3], vec![100.3, 98.8, 102.0])).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
        let y = softmax(&t(&[1, 2], vec![1f64.ln(), 3f64.ln()])).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-15);
        assert!((y.data()[1] - 0.75).abs() < 1e-15);
        let big = softmax(&t(&[1, 2], vec![1000.0, -1000.0])).unwrap();
        assert!(big.all_finite());
    }

    #[test]
    fn softmax_backward_matches_finite_differences() {
        let mut rng = Rng::seed_from_u64(8);
        let x = rand_tensor(&[2, 4], &mut rng);
        let dy = rand_tensor(&[2, 4], &mut rng);
        let y = softmax(&x).unwrap();
        let dx = softmax_backward(&dy, &y).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let f = |t: &Tensor| -> f64 {
                softmax(t)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(a, g)| a * g)
                    .sum()
            };
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - dx.data()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_modes() {
        let mut rng = stream(0, Stream::Dropout);
        let x = rand_tensor(&[4, 64], &mut rng);
        let (y, m) = dropout_forward(&x, 0.5, DropoutMode::Eval, &mut rng).unwrap();
        assert_eq!(y, x);
        assert!(m.is_none());
        let (y, _) = dropout_forward(&x, 0.0, DropoutMode::Train, &mut rng).unwrap();
        assert_eq!(y, x);
        let (y, m) = dropout_forward(&x, 0.5, DropoutMode::Train, &mut rng).unwrap();
        let m = m.unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(apply_mask(&x, &m).unwrap(), y);
        assert!(dropout_mask(&[2], 1.0, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = stream(42, Stream::Dropout);
        let x = Tensor::full(&[1_000_000], 1.5);
        let (y, _) = dropout_forward(&x, 0.5, DropoutMode::Train, &mut rng).unwrap();
        assert!((y.mean() - x.mean()).abs() / x.mean() < 0.01);
    }

    #[test]
    fn global_pool_backward_spreads_evenly() {
        let dy = t(&[1, 2], vec![4.0, -8.0]);
        let dx = global_avg_pool_backward(&dy, &[1, 2, 2, 2]).unwrap();
        assert_eq!(dx.data(), &[1.0, -2.0, 1.0, -2.0, 1.0, -2.0, 1.0, -2.0]);
    }
}
