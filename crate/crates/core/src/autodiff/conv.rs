//! 2-D convolution with zero "same" padding, dilation and channel groups,
//! lowered to im2col + GEMM.

use super::gemm::{gemm, gemm_ct, gemm_ld, Mat};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{shape_err, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn infer(x: &[usize], weight: &[usize], dilation: usize, groups: usize) -> Result<Self> {
        let [batch, cin, h, w] = x[..] else {
            return shape_err(format!("conv input must be NCHW, got {x:?}"));
        };
        let [cout, cin_g, kh, kw] = weight[..] else {
            return shape_err(format!(
                "conv weight must be (out, in/groups, k, k), got {weight:?}"
            ));
        };
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return shape_err(format!(
                "channels in={cin} out={cout} not divisible by groups={groups}"
            ));
        }
        if cin_g != cin / groups {
            return shape_err(format!(
                "weight expects {cin_g} input channels per group, input gives {}",
                cin / groups
            ));
        }
        if kh != kw || kh % 2 == 0 {
            return shape_err(format!("kernel must be square and odd, got {kh}x{kw}"));
        }
        if dilation == 0 {
            return shape_err("dilation must be >= 1");
        }
        Ok(Self {
            batch,
            cin,
            cout,
            h,
            w,
            kernel: kh,
            dilation,
            groups,
        })
    }

    fn pad(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of the im2col matrix for one group.
    fn col_rows(&self) -> usize {
        self.cin_g() * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }

    pub fn flops(&self) -> u64 {
        let macs =
            self.batch * self.cout * self.cin_g() * self.kernel * self.kernel * self.h * self.w;
        (2 * macs + self.batch * self.cout * self.h * self.w) as u64
    }
}

/// Upper bound on im2col buffer entries; convolutions are processed in
/// bands of output rows so the buffer stays cache-resident.
const COL_BUDGET: usize = 1 << 16;

fn band_rows(g: &ConvGeom) -> usize {
    (COL_BUDGET / (g.col_rows() * g.w).max(1)).clamp(1, g.h)
}

/// Gathers the receptive fields of output rows `y0..y1` of `x` (`cin_g`
/// planes of `h*w`) into `col` (`cin_g*k*k` rows of `(y1-y0)*w`).
fn im2col(x: &[f64], g: &ConvGeom, y0: usize, y1: usize, col: &mut [f64]) {
    let (h, w, k, d) = (g.h, g.w, g.kernel, g.dilation);
    let pad = g.pad() as isize;
    let (hw, n) = (h * w, (y1 - y0) * w);
    for ci in 0..g.cin_g() {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = (ky * d) as isize - pad;
            for kx in 0..k {
                let dx = (kx * d) as isize - pad;
                let row = &mut col[((ci * k + ky) * k + kx) * n..][..n];
                let (x0, x1) = valid_range(w, dx);
                for oy in y0..y1 {
                    let iy = oy as isize + dy;
                    let out = &mut row[(oy - y0) * w..(oy - y0 + 1) * w];
                    if iy < 0 || iy >= h as isize || x0 >= x1 {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..][..w];
                    out[..x0].fill(0.0);
                    out[x1..].fill(0.0);
                    let s0 = (x0 as isize + dx) as usize;
                    out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                }
            }
        }
    }
}

/// Output columns `[x0, x1)` whose input column `ox + shift` is in bounds.
fn valid_range(w: usize, shift: isize) -> (usize, usize) {
    let x0 = (-shift).max(0) as usize;
    let x1 = (w as isize - shift).clamp(0, w as isize) as usize;
    (x0.min(w), x1)
}

/// Calls `f(oy, iy, x0, x1, sx)` for every in-bounds output row of one
/// kernel tap: output columns `x0..x1` read input columns from `sx`.
fn for_tap(
    g: &ConvGeom,
    ky: usize,
    kx: usize,
    mut f: impl FnMut(usize, usize, usize, usize, usize),
) {
    let pad = g.pad() as isize;
    let dy = (ky * g.dilation) as isize - pad;
    let dx = (kx * g.dilation) as isize - pad;
    let (x0, x1) = valid_range(g.w, dx);
    if x0 >= x1 {
        return;
    }
    let sx = (x0 as isize + dx) as usize;
    for oy in 0..g.h {
        let iy = oy as isize + dy;
        if iy >= 0 && iy < g.h as isize {
            f(oy, iy as usize, x0, x1, sx);
        }
    }
}

/// One input and one output channel per group: direct shifted
/// multiply-adds, no lowering.
fn depthwise_forward(x: &[f64], wt: &[f64], g: &ConvGeom, y: &mut [f64]) {
    let (w, k) = (g.w, g.kernel);
    for ky in 0..k {
        for kx in 0..k {
            let c = wt[ky * k + kx];
            for_tap(g, ky, kx, |oy, iy, x0, x1, sx| {
                let src = &x[iy * w + sx..][..x1 - x0];
                for (o, v) in y[oy * w + x0..oy * w + x1].iter_mut().zip(src) {
                    *o += c * v;
                }
            });
        }
    }
}

fn depthwise_backward(
    x: &[f64],
    wt: &[f64],
    dy: &[f64],
    g: &ConvGeom,
    dw: &mut [f64],
    mut dx: Option<&mut [f64]>,
) {
    let (w, k) = (g.w, g.kernel);
    for ky in 0..k {
        for kx in 0..k {
            let c = wt[ky * k + kx];
            let mut acc = 0.0;
            for_tap(g, ky, kx, |oy, iy, x0, x1, sx| {
                let grad = &dy[oy * w + x0..oy * w + x1];
                let src = &x[iy * w + sx..][..x1 - x0];
                acc += grad.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                if let Some(dx) = dx.as_deref_mut() {
                    for (t, v) in dx[iy * w + sx..][..x1 - x0].iter_mut().zip(grad) {
                        *t += c * v;
                    }
                }
            });
            dw[ky * k + kx] += acc;
        }
    }
}

pub fn conv2d_forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    dilation: usize,
    groups: usize,
) -> Result<Tensor> {
    let g = ConvGeom::infer(x.shape(), weight.shape(), dilation, groups)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return shape_err(format!("bias has {} entries, expected {}", b.len(), g.cout));
        }
    }
    let hw = g.h * g.w;
    let mut out = Tensor::zeros(&[g.batch, g.cout, g.h, g.w]);
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.col_rows());
    let direct = cin_g == 1 && cout_g == 1;
    let band = band_rows(&g);
    let mut col = vec![
        0.0;
        if g.is_pointwise() || direct {
            0
        } else {
            rows * band * g.w
        }
    ];
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x.data()[(b * g.cin + grp * cin_g) * hw..][..cin_g * hw];
            let wg = &weight.data()[grp * cout_g * rows..][..cout_g * rows];
            let ys = &mut out.data_mut()[(b * g.cout + grp * cout_g) * hw..][..cout_g * hw];
            if g.is_pointwise() {
                gemm(Mat::new(wg, cout_g, rows), Mat::new(xs, rows, hw), ys, 0.0);
            } else if direct {
                depthwise_forward(xs, wg, &g, ys);
            } else {
                for y0 in (0..g.h).step_by(band) {
                    let y1 = (y0 + band).min(g.h);
                    let n = (y1 - y0) * g.w;
                    im2col(xs, &g, y0, y1, &mut col);
                    gemm_ld(
                        Mat::new(wg, cout_g, rows),
                        Mat::new(&col[..rows * n], rows, n),
                        &mut ys[y0 * g.w..],
                        hw,
                        0.0,
                    );
                }
            }
        }
        if let Some(bias) = bias {
            for (co, &bv) in bias.data().iter().enumerate() {
                out.data_mut()[(b * g.cout + co) * hw..][..hw]
                    .iter_mut()
                    .for_each(|v| *v += bv);
            }
        }
    }
    Ok(out)
}

/// Returns `(dx, dweight, dbias)` for upstream gradient `dy`.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &Tensor,
    dy: &Tensor,
    dilation: usize,
    groups: usize,
    need_dx: bool,
) -> Result<(Option<Tensor>, Tensor, Tensor)> {
    let g = ConvGeom::infer(x.shape(), weight.shape(), dilation, groups)?;
    let hw = g.h * g.w;
    let (cin_g, cout_g, rows) = (g.cin_g(), g.cout_g(), g.col_rows());
    let direct = cin_g == 1 && cout_g == 1;
    let band = band_rows(&g);
    let mut dw = Tensor::zeros(weight.shape());
    let mut db = Tensor::zeros(&[g.cout]);
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    let lowered = !(g.is_pointwise() || direct);
    let mut col = vec![0.0; if lowered { rows * band * g.w } else { 0 }];
    for b in 0..g.batch {
        for grp in 0..g.groups {
            let xs = &x.data()[(b * g.cin + grp * cin_g) * hw..][..cin_g * hw];
            let dys = &dy.data()[(b * g.cout + grp * cout_g) * hw..][..cout_g * hw];
            let wg = &weight.data()[grp * cout_g * rows..][..cout_g * rows];
            let dwg = &mut dw.data_mut()[grp * cout_g * rows..][..cout_g * rows];
            let dxs = dx
                .as_mut()
                .map(|dx| &mut dx.data_mut()[(b * g.cin + grp * cin_g) * hw..][..cin_g * hw]);
            if g.is_pointwise() {
                gemm_ct(
                    Mat::new(xs, rows, hw),
                    Mat::new(dys, cout_g, hw).t(),
                    dwg,
                    1.0,
                );
                if let Some(dxs) = dxs {
                    gemm(
                        Mat::new(wg, cout_g, rows).t(),
                        Mat::new(dys, cout_g, hw),
                        dxs,
                        1.0,
                    );
                }
            } else if direct {
                depthwise_backward(xs, wg, dys, &g, dwg, dxs);
            } else {
                for y0 in (0..g.h).step_by(band) {
                    let y1 = (y0 + band).min(g.h);
                    let n = (y1 - y0) * g.w;
                    im2col(xs, &g, y0, y1, &mut col);
                    let dyb = Mat::strided(&dys[y0 * g.w..], cout_g, n, hw);
                    gemm_ct(Mat::new(&col[..rows * n], rows, n), dyb.t(), dwg, 1.0);
                }
            }
        }
        for co in 0..g.cout {
            db.data_mut()[co] += dy.data()[(b * g.cout + co) * hw..][..hw]
                .iter()
                .sum::<f64>();
        }
    }
    if need_dx && lowered {
        dx = Some(conv2d_forward(
            dy,
            &flip_weight(weight, &g),
            None,
            dilation,
            groups,
        )?);
    }
    Ok((dx, dw, db))
}

/// Weight of the adjoint convolution: in/out channels swapped within each
/// group and taps rotated by 180 degrees.
fn flip_weight(weight: &Tensor, g: &ConvGeom) -> Tensor {
    let (cin_g, cout_g, k) = (g.cin_g(), g.cout_g(), g.kernel);
    let kk = k * k;
    let mut out = Tensor::zeros(&[g.cin, cout_g, k, k]);
    for grp in 0..g.groups {
        for co in 0..cout_g {
            for ci in 0..cin_g {
                let src = &weight.data()[((grp * cout_g + co) * cin_g + ci) * kk..][..kk];
                let dst = &mut out.data_mut()[((grp * cin_g + ci) * cout_g + co) * kk..][..kk];
                for (t, v) in dst.iter_mut().zip(src.iter().rev()) {
                    *t = *v;
                }
            }
        }
    }
    out
}

impl Tape {
    /// Same-size convolution. Kernel size is read from `weight`
    /// (`(out, in/groups, k, k)`); padding is `(k-1)*dilation/2` per side.
    pub fn conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
        groups: usize,
    ) -> Result<Var> {
        let xv = self.value(x);
        let wv = self.value(weight);
        let bv = bias.map(|b| self.value(b));
        let geom = ConvGeom::infer(xv.shape(), wv.shape(), dilation, groups)?;
        let out = conv2d_forward(&xv, &wv, bv.as_deref(), dilation, groups)?;
        self.add_flops(geom.flops());
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.push(
            "conv2d",
            out,
            &parents,
            Box::new(move |dy, needs| {
                let (dx, dw, db) = conv2d_backward(&xv, &wv, dy, dilation, groups, needs[0])
                    .expect("conv shapes validated in forward");
                let mut g = vec![dx, Some(dw)];
                if has_bias {
                    g.push(Some(db));
                }
                g
            }),
        ))
    }

    /// Depthwise convolution: one `k x k` filter per channel.
    pub fn depthwise_conv2d(
        &self,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        let channels = self.shape(x).get(1).copied().unwrap_or(0);
        self.conv2d(x, weight, bias, dilation, channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(
            shape.to_vec(),
            (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    /// Direct nested-loop convolution.
    fn conv_oracle(x: &Tensor, wt: &Tensor, b: &Tensor, d: usize, groups: usize) -> Tensor {
        let [n, cin, h, w] = x.shape()[..] else {
            unreachable!()
        };
        let [cout, cin_g, k, _] = wt.shape()[..] else {
            unreachable!()
        };
        let pad = ((k - 1) * d / 2) as isize;
        let cout_g = cout / groups;
        let mut out = Tensor::zeros(&[n, cout, h, w]);
        for bi in 0..n {
            for co in 0..cout {
                let grp = co / cout_g;
                for oy in 0..h {
                    for ox in 0..w {
                        let mut acc = b.data()[co];
                        for ci in 0..cin_g {
                            let c = grp * cin_g + ci;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = oy as isize + (ky * d) as isize - pad;
                                    let ix = ox as isize + (kx * d) as isize - pad;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt.data()[((co * cin_g + ci) * k + ky) * k + kx]
                                        * x.data()
                                            [((bi * cin + c) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * h + oy) * w + ox] = acc;
                    }
                }
            }
        }
        assert_eq!(cin_g * groups, cin);
        out
    }

    fn rel(a: &Tensor, b: &Tensor) -> f64 {
        a.max_abs_diff(b) / b.max_abs().max(1e-300)
    }

    #[test]
    fn pointwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 3, 4, 5], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        assert_eq!(conv2d_forward(&x, &w, None, 1, 1).unwrap(), x);
    }

    #[test]
    fn box_sum_on_constant() {
        let x = Tensor::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d_forward(&x, &w, None, 1, 1).unwrap();
        assert_eq!(y.data()[2 * 5 + 2], 9.0);
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[2], 6.0);
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (xs, ws, d, g) in [
            ([1, 2, 4, 4], [3, 2, 3, 3], 2, 1),
            ([2, 4, 6, 5], [4, 2, 3, 3], 1, 2),
            ([1, 3, 7, 7], [3, 1, 3, 3], 3, 3),
            ([2, 5, 4, 4], [2, 5, 1, 1], 1, 1),
            ([1, 2, 9, 8], [2, 2, 5, 5], 2, 1),
        ] {
            let x = random(&xs, &mut rng);
            let w = random(&ws, &mut rng);
            let b = random(&[ws[0]], &mut rng);
            let got = conv2d_forward(&x, &w, Some(&b), d, g).unwrap();
            let want = conv_oracle(&x, &w, &b, d, g);
            assert!(rel(&got, &want) < 1e-10, "{xs:?} {ws:?} d={d} g={g}");
        }
    }

    #[test]
    fn depthwise_equals_grouped() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 3, 5, 5], &mut rng);
        let w = random(&[3, 1, 3, 3], &mut rng);
        let tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let dw = tape.depthwise_conv2d(xv, wv, None, 1).unwrap();
        let grouped = conv2d_forward(&x, &w, None, 1, 3).unwrap();
        assert_eq!(*tape.value(dw), grouped);
        let zero = Tensor::zeros(&[3]);
        assert!(rel(&grouped, &conv_oracle(&x, &w, &zero, 1, 3)) < 1e-10);

        let mut ident = Tensor::zeros(&[3, 1, 3, 3]);
        for c in 0..3 {
            ident.data_mut()[c * 9 + 4] = 1.0;
        }
        assert_eq!(conv2d_forward(&x, &ident, None, 1, 3).unwrap(), x);
    }

    #[test]
    fn backward_is_adjoint() {
        // <conv(x), r> = <x, conv^T(r)> and <dW, ...> via linearity in w
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 4, 5, 6], &mut rng);
        let w = random(&[6, 2, 3, 3], &mut rng);
        let r = random(&[2, 6, 5, 6], &mut rng);
        let y = conv2d_forward(&x, &w, None, 2, 2).unwrap();
        let (dx, dw, _) = conv2d_backward(&x, &w, &r, 2, 2, true).unwrap();
        let lhs = y.dot(&r);
        assert!((lhs - x.dot(&dx.unwrap())).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!((lhs - w.dot(&dw)).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[2, 3, 2, 2]), None, 1, 1).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[2, 1, 3, 3]), None, 1, 2).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[2, 2, 3, 3]), None, 1, 1).is_err());
        assert!(conv2d_forward(
            &x,
            &Tensor::zeros(&[2, 3, 3, 3]),
            Some(&Tensor::zeros(&[3])),
            1,
            1
        )
        .is_err());
    }
}
