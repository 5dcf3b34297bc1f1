//! Numeric kernels behind the graph ops.

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, Ix1, Ix3, Ix4};

/// Spatial padding behavior for convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadMode {
    /// Zero padding on all four edges.
    Zeros,
    /// Circular wrap along the width axis (panoramas are 360-degree
    /// periodic), zero padding along the height axis.
    CircularWidth,
}

pub fn sigmoid_stable(x: f32) -> f32 {
    // Evaluate in f64 and round once.
    let x = x as f64;
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y as f32
}

pub fn softplus_stable_f32(x: f32) -> f32 {
    softplus_stable_f64(x as f64) as f32
}

/// f64 softplus used by the scalar loss evaluators.
pub fn softplus_stable_f64(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn softmax_rows(x: &Array2<f32>) -> Array2<f32> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

pub fn layer_norm_rows(
    x: &Array2<f32>,
    gamma: &ArrayD<f32>,
    beta: &ArrayD<f32>,
    eps: f32,
) -> Array2<f32> {
    let n = x.ncols() as f32;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        for (i, v) in row.iter_mut().enumerate() {
            let xhat = (*v - mean) * inv;
            *v = xhat * gamma[i] + beta[i];
        }
    }
    out
}

/// Returns (d_x, d_gamma, d_beta).
pub fn layer_norm_rows_backward(
    x: &Array2<f32>,
    gamma: &ArrayD<f32>,
    g: &Array2<f32>,
    eps: f32,
) -> (Array2<f32>, Array1<f32>, Array1<f32>) {
    let n = x.ncols();
    let nf = n as f32;
    let mut gx = Array2::<f32>::zeros(x.raw_dim());
    let mut ggamma = Array1::<f32>::zeros(n);
    let mut gbeta = Array1::<f32>::zeros(n);
    for (r, xrow) in x.rows().into_iter().enumerate() {
        let grow = g.row(r);
        let mean = xrow.sum() / nf;
        let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / nf;
        let inv = 1.0 / (var + eps).sqrt();
        // xhat and d_xhat
        let mut mean_dxhat = 0.0f32;
        let mut mean_dxhat_xhat = 0.0f32;
        let mut xhat = vec![0.0f32; n];
        let mut dxhat = vec![0.0f32; n];
        for i in 0..n {
            xhat[i] = (xrow[i] - mean) * inv;
            dxhat[i] = grow[i] * gamma[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xhat[i];
            ggamma[i] += grow[i] * xhat[i];
            gbeta[i] += grow[i];
        }
        mean_dxhat /= nf;
        mean_dxhat_xhat /= nf;
        for i in 0..n {
            gx[[r, i]] = inv * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
    (gx, ggamma, gbeta)
}

fn conv_out_len(len: usize, k: usize, stride: usize) -> usize {
    let p = k / 2;
    (len + 2 * p - k) / stride + 1
}

/// Unfold input patches into a [Cin*k*k, Hout*Wout] matrix.
fn im2col(x: &Array3<f32>, k: usize, stride: usize, pad: PadMode) -> Array2<f32> {
    let (cin, h, w) = x.dim();
    let p = (k / 2) as isize;
    let hout = conv_out_len(h, k, stride);
    let wout = conv_out_len(w, k, stride);
    let mut col = Array2::<f32>::zeros((cin * k * k, hout * wout));
    for c in 0..cin {
        for di in 0..k {
            for dj in 0..k {
                let row = (c * k + di) * k + dj;
                for oi in 0..hout {
                    let yi = (oi * stride) as isize - p + di as isize;
                    if yi < 0 || yi >= h as isize {
                        continue; // zero rows in both pad modes
                    }
                    for oj in 0..wout {
                        let xj = (oj * stride) as isize - p + dj as isize;
                        let xj = match pad {
                            PadMode::Zeros => {
                                if xj < 0 || xj >= w as isize {
                                    continue;
                                }
                                xj as usize
                            }
                            PadMode::CircularWidth => xj.rem_euclid(w as isize) as usize,
                        };
                        col[[row, oi * wout + oj]] = x[[c, yi as usize, xj]];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add a column matrix back onto the input grid.
fn col2im(
    gcol: &Array2<f32>,
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: PadMode,
) -> Array3<f32> {
    let p = (k / 2) as isize;
    let hout = conv_out_len(h, k, stride);
    let wout = conv_out_len(w, k, stride);
    let mut gx = Array3::<f32>::zeros((cin, h, w));
    for c in 0..cin {
        for di in 0..k {
            for dj in 0..k {
                let row = (c * k + di) * k + dj;
                for oi in 0..hout {
                    let yi = (oi * stride) as isize - p + di as isize;
                    if yi < 0 || yi >= h as isize {
                        continue;
                    }
                    for oj in 0..wout {
                        let xj = (oj * stride) as isize - p + dj as isize;
                        let xj = match pad {
                            PadMode::Zeros => {
                                if xj < 0 || xj >= w as isize {
                                    continue;
                                }
                                xj as usize
                            }
                            PadMode::CircularWidth => xj.rem_euclid(w as isize) as usize,
                        };
                        gx[[c, yi as usize, xj]] += gcol[[row, oi * wout + oj]];
                    }
                }
            }
        }
    }
    gx
}

pub fn conv2d_forward(
    x: &ArrayD<f32>,
    w: &ArrayD<f32>,
    b: &ArrayD<f32>,
    stride: usize,
    pad: PadMode,
) -> ArrayD<f32> {
    let x = x
        .view()
        .into_dimensionality::<Ix3>()
        .expect("conv input 3-d");
    let w = w
        .view()
        .into_dimensionality::<Ix4>()
        .expect("conv weight 4-d");
    let b = b
        .view()
        .into_dimensionality::<Ix1>()
        .expect("conv bias 1-d");
    let (cout, cin, k, k2) = w.dim();
    assert_eq!(k, k2, "square kernels only");
    assert_eq!(cin, x.dim().0, "conv channel mismatch");
    assert_eq!(cout, b.len(), "conv bias length");
    let (_, h, wd) = x.dim();
    let hout = conv_out_len(h, k, stride);
    let wout = conv_out_len(wd, k, stride);

    let col = im2col(&x.to_owned(), k, stride, pad);
    let w_mat = w
        .to_owned()
        .into_shape_with_order((cout, cin * k * k))
        .expect("weight reshape");
    let mut out_mat = w_mat.dot(&col);
    for (mut row, bias) in out_mat.rows_mut().into_iter().zip(b.iter()) {
        for v in row.iter_mut() {
            *v += *bias;
        }
    }
    out_mat
        .into_shape_with_order((cout, hout, wout))
        .expect("output reshape")
        .into_dyn()
}

/// Returns (d_input, d_weight, d_bias).
pub fn conv2d_backward(
    x: &ArrayD<f32>,
    w: &ArrayD<f32>,
    g: &ArrayD<f32>,
    stride: usize,
    pad: PadMode,
) -> (ArrayD<f32>, ArrayD<f32>, ArrayD<f32>) {
    let x3 = x
        .view()
        .into_dimensionality::<Ix3>()
        .expect("conv input 3-d");
    let w4 = w
        .view()
        .into_dimensionality::<Ix4>()
        .expect("conv weight 4-d");
    let g3 = g
        .view()
        .into_dimensionality::<Ix3>()
        .expect("conv grad 3-d");
    let (cout, cin, k, _) = w4.dim();
    let (_, h, wd) = x3.dim();
    let (gc, gh, gw) = g3.dim();
    assert_eq!(gc, cout);

    let g_mat = g3
        .to_owned()
        .into_shape_with_order((cout, gh * gw))
        .expect("grad reshape");
    let col = im2col(&x3.to_owned(), k, stride, pad);

    let gw_mat = g_mat.dot(&col.t());
    let gweight = gw_mat
        .into_shape_with_order((cout, cin, k, k))
        .expect("weight grad reshape")
        .into_dyn();

    let gbias = g_mat.sum_axis(Axis(1)).into_dyn();

    let w_mat = w4
        .to_owned()
        .into_shape_with_order((cout, cin * k * k))
        .expect("weight reshape");
    let gcol = w_mat.t().dot(&g_mat);
    let gx = col2im(&gcol, cin, h, wd, k, stride, pad).into_dyn();

    (gx, gweight, gbias)
}
