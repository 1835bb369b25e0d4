//! Element-wise, structural, matrix and reduction ops.

use super::gemm::{gemm, Mat};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{shape_err, Result};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Row-wise softmax over the last axis of `x` (`rows x n`).
pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (row, o) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (oi, &v) in o.iter_mut().zip(row) {
            *oi = (v - m).exp();
            z += *oi;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

impl Tape {
    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return shape_err(format!("{op}: {sa:?} vs {sb:?}"));
        }
        Ok(sa)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x + y)
            .collect();
        self.add_flops(av.len() as u64);
        Ok(self.push(
            "add",
            Tensor::new(shape, data)?,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(x, y)| x - y)
            .collect();
        self.add_flops(av.len() as u64);
        Ok(self.push(
            "sub",
            Tensor::new(shape, data)?,
            &[a, b],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let av = self.value(a);
        self.add_flops(av.len() as u64);
        self.push(
            "scale",
            av.map(|v| v * s),
            &[a],
            Box::new(move |g, _| vec![Some(g.map(|v| v * s))]),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let av = self.value(a);
        self.add_flops(av.len() as u64);
        let out = av.map(|v| v.max(0.0));
        self.push(
            "relu",
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                for (di, &x) in d.data_mut().iter_mut().zip(av.data()) {
                    if x <= 0.0 {
                        *di = 0.0;
                    }
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn silu(&self, a: Var) -> Var {
        let av = self.value(a);
        self.add_flops(4 * av.len() as u64);
        self.push(
            "silu",
            av.map(silu),
            &[a],
            Box::new(move |g, _| {
                let mut d = g.clone();
                for (di, &x) in d.data_mut().iter_mut().zip(av.data()) {
                    *di *= silu_grad(x);
                }
                vec![Some(d)]
            }),
        )
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Result<Var> {
        let av = self.value(a);
        let old = av.shape().to_vec();
        let out = (*av).clone().reshaped(shape)?;
        Ok(self.push(
            "reshape",
            out,
            &[a],
            Box::new(move |g, _| vec![Some(g.clone().reshaped(&old).expect("same size"))]),
        ))
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(&self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let Some(first) = vals.first() else {
            return shape_err("concat of nothing");
        };
        let (b, _, h, w) = first.dims4()?;
        let mut widths = Vec::with_capacity(vals.len());
        for v in &vals {
            let (vb, vc, vh, vw) = v.dims4()?;
            if (vb, vh, vw) != (b, h, w) {
                return shape_err(format!("concat: {:?} vs {:?}", first.shape(), v.shape()));
            }
            widths.push(vc);
        }
        let total: usize = widths.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (v, &c) in vals.iter().zip(&widths) {
                data.extend_from_slice(&v.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        Ok(self.push(
            "concat",
            Tensor::new(vec![b, total, h, w], data)?,
            parts,
            Box::new(move |g, _| {
                let mut outs: Vec<Vec<f64>> = widths
                    .iter()
                    .map(|&c| Vec::with_capacity(b * c * hw))
                    .collect();
                let mut off = 0;
                for _ in 0..b {
                    for (o, &c) in outs.iter_mut().zip(&widths) {
                        o.extend_from_slice(&g.data()[off..off + c * hw]);
                        off += c * hw;
                    }
                }
                outs.into_iter()
                    .zip(&widths)
                    .map(|(d, &c)| Some(Tensor::new(vec![b, c, h, w], d).expect("sizes")))
                    .collect()
            }),
        ))
    }

    /// Batched `(n, m, k) x (n, k, p) -> (n, m, p)`; with `trans_b` the second
    /// operand is `(n, p, k)` and used transposed.
    pub fn matmul(&self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (&[n, m, k], &[n2, r, c]) = (av.shape(), bv.shape()) else {
            return shape_err(format!(
                "matmul needs 3-D operands: {:?} x {:?}",
                av.shape(),
                bv.shape()
            ));
        };
        if n != n2 {
            return shape_err(format!("matmul batch: {:?} x {:?}", av.shape(), bv.shape()));
        }
        let (kb, p) = if trans_b { (c, r) } else { (r, c) };
        if kb != k {
            return shape_err(format!(
                "matmul inner dims: {:?} x {:?} (trans_b={trans_b})",
                av.shape(),
                bv.shape()
            ));
        }
        let mut out = Tensor::zeros(&[n, m, p]);
        for i in 0..n {
            let am = Mat::new(&av.data()[i * m * k..][..m * k], m, k);
            let bm = Mat::new(&bv.data()[i * r * c..][..r * c], r, c);
            let bm = if trans_b { bm.t() } else { bm };
            gemm(am, bm, &mut out.data_mut()[i * m * p..][..m * p], 0.0);
        }
        self.add_flops((2 * n * m * k * p) as u64);
        Ok(self.push(
            "matmul",
            out,
            &[a, b],
            Box::new(move |g, needs| {
                let mut da = needs[0].then(|| Tensor::zeros(av.shape()));
                let mut db = needs[1].then(|| Tensor::zeros(bv.shape()));
                for i in 0..n {
                    let gm = Mat::new(&g.data()[i * m * p..][..m * p], m, p);
                    let am = Mat::new(&av.data()[i * m * k..][..m * k], m, k);
                    let bm = Mat::new(&bv.data()[i * r * c..][..r * c], r, c);
                    if let Some(da) = da.as_mut() {
                        // dA = G B^T (B is k x p) or G B (B stored p x k)
                        let bt = if trans_b { bm } else { bm.t() };
                        gemm(gm, bt, &mut da.data_mut()[i * m * k..][..m * k], 0.0);
                    }
                    if let Some(db) = db.as_mut() {
                        let dst = &mut db.data_mut()[i * r * c..][..r * c];
                        if trans_b {
                            // dB (p x k) = G^T A
                            gemm(gm.t(), am, dst, 0.0);
                        } else {
                            // dB (k x p) = A^T G
                            gemm(am.t(), gm, dst, 0.0);
                        }
                    }
                }
                vec![da, db]
            }),
        ))
    }

    /// Softmax over the last axis.
    pub fn softmax_last(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let n = *av.shape().last().unwrap_or(&0);
        if n == 0 {
            return shape_err("softmax over an empty axis");
        }
        let y = Tensor::new(av.shape().to_vec(), softmax_rows(av.data(), n))?;
        self.add_flops(4 * av.len() as u64);
        let yc = y.clone();
        Ok(self.push(
            "softmax",
            y,
            &[a],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(yc.shape());
                for ((dr, yr), gr) in d
                    .data_mut()
                    .chunks_exact_mut(n)
                    .zip(yc.data().chunks_exact(n))
                    .zip(g.data().chunks_exact(n))
                {
                    let s: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for ((di, &yi), &gi) in dr.iter_mut().zip(yr).zip(gr) {
                        *di = yi * (gi - s);
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Non-overlapping `s x s` window embedding: every window of every channel
    /// is flattened row-major to a length-`s*s` vector `v` and replaced by
    /// `E v`, with one `(s*s, s*s)` matrix `E` shared across windows and
    /// channels.
    pub fn window_embed(&self, x: Var, embed: Var, s: usize) -> Result<Var> {
        let (xv, ev) = (self.value(x), self.value(embed));
        let (b, c, h, w) = xv.dims4()?;
        let n = s * s;
        if s == 0 || h % s != 0 || w % s != 0 {
            return shape_err(format!("window size {s} does not tile a {h}x{w} plane"));
        }
        if ev.shape() != [n, n] {
            return shape_err(format!(
                "window embedding must be {n}x{n}, got {:?}",
                ev.shape()
            ));
        }
        let windows = b * c * (h / s) * (w / s);
        // gather windows into a (n x windows) matrix so one GEMM applies E
        let gather = move |t: &Tensor| -> Vec<f64> {
            let mut cols = vec![0.0; n * windows];
            let mut wi = 0;
            for plane in t.data().chunks_exact(h * w) {
                for by in 0..h / s {
                    for bx in 0..w / s {
                        for dy in 0..s {
                            for dx in 0..s {
                                cols[(dy * s + dx) * windows + wi] =
                                    plane[(by * s + dy) * w + bx * s + dx];
                            }
                        }
                        wi += 1;
                    }
                }
            }
            cols
        };
        let scatter = move |cols: &[f64]| -> Tensor {
            let mut t = Tensor::zeros(&[b, c, h, w]);
            let mut wi = 0;
            for plane in t.data_mut().chunks_exact_mut(h * w) {
                for by in 0..h / s {
                    for bx in 0..w / s {
                        for dy in 0..s {
                            for dx in 0..s {
                                plane[(by * s + dy) * w + bx * s + dx] =
                                    cols[(dy * s + dx) * windows + wi];
                            }
                        }
                        wi += 1;
                    }
                }
            }
            t
        };
        let xcols = gather(&xv);
        let mut ycols = vec![0.0; n * windows];
        gemm(
            Mat::new(ev.data(), n, n),
            Mat::new(&xcols, n, windows),
            &mut ycols,
            0.0,
        );
        self.add_flops((2 * n * n * windows) as u64);
        Ok(self.push(
            "window_embed",
            scatter(&ycols),
            &[x, embed],
            Box::new(move |g, needs| {
                let gcols = gather(g);
                let dx = needs[0].then(|| {
                    let mut dcols = vec![0.0; n * windows];
                    gemm(
                        Mat::new(ev.data(), n, n).t(),
                        Mat::new(&gcols, n, windows),
                        &mut dcols,
                        0.0,
                    );
                    scatter(&dcols)
                });
                let de = needs[1].then(|| {
                    let mut de = Tensor::zeros(&[n, n]);
                    gemm(
                        Mat::new(&gcols, n, windows),
                        Mat::new(&xcols, n, windows).t(),
                        de.data_mut(),
                        0.0,
                    );
                    de
                });
                vec![dx, de]
            }),
        ))
    }

    /// Per-pixel modulus of `(N, 2, H, W)` real/imag channels, `(N, 1, H, W)`.
    pub fn magnitude(&self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (b, c, h, w) = av.dims4()?;
        if c != 2 {
            return shape_err(format!("magnitude needs 2 channels, got {c}"));
        }
        let hw = h * w;
        let mut out = Tensor::zeros(&[b, 1, h, w]);
        for bi in 0..b {
            let (re, im) = av.data()[bi * 2 * hw..(bi + 1) * 2 * hw].split_at(hw);
            for (o, (r, i)) in out.data_mut()[bi * hw..(bi + 1) * hw]
                .iter_mut()
                .zip(re.iter().zip(im))
            {
                *o = r.hypot(*i);
            }
        }
        self.add_flops(4 * av.len() as u64);
        let mag = out.clone();
        Ok(self.push(
            "magnitude",
            out,
            &[a],
            Box::new(move |g, _| {
                let mut d = Tensor::zeros(av.shape());
                for bi in 0..b {
                    for p in 0..hw {
                        let m = mag.data()[bi * hw + p];
                        if m > 0.0 {
                            let gm = g.data()[bi * hw + p] / m;
                            d.data_mut()[bi * 2 * hw + p] = gm * av.data()[bi * 2 * hw + p];
                            d.data_mut()[bi * 2 * hw + hw + p] =
                                gm * av.data()[bi * 2 * hw + hw + p];
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// `mean(|a - target|)` as a single-element tensor.
    pub fn l1_mean(&self, a: Var, target: &Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != target.shape() {
            return shape_err(format!("l1: {:?} vs {:?}", av.shape(), target.shape()));
        }
        let n = av.len().max(1) as f64;
        let diff: Vec<f64> = av
            .data()
            .iter()
            .zip(target.data())
            .map(|(x, t)| x - t)
            .collect();
        let loss = diff.iter().map(|d| d.abs()).sum::<f64>() / n;
        self.add_flops(3 * av.len() as u64);
        let shape = av.shape().to_vec();
        Ok(self.push(
            "l1_mean",
            Tensor::scalar(loss),
            &[a],
            Box::new(move |g, _| {
                let s = g.data()[0] / n;
                let d = diff
                    .iter()
                    .map(|&d| {
                        if d > 0.0 {
                            s
                        } else if d < 0.0 {
                            -s
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![Some(Tensor::new(shape.clone(), d).expect("shape"))]
            }),
        ))
    }

    /// `sum(a * weights)` as a single-element tensor.
    pub fn weighted_sum(&self, a: Var, weights: &Tensor) -> Result<Var> {
        let av = self.value(a);
        if av.shape() != weights.shape() {
            return shape_err(format!(
                "weighted_sum: {:?} vs {:?}",
                av.shape(),
                weights.shape()
            ));
        }
        let s = av.dot(weights);
        self.add_flops(2 * av.len() as u64);
        let w = weights.clone();
        Ok(self.push(
            "weighted_sum",
            Tensor::scalar(s),
            &[a],
            Box::new(move |g, _| vec![Some(w.map(|v| v * g.data()[0]))]),
        ))
    }
}
