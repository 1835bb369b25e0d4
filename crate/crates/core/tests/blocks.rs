use dualrecon::autodiff::{conv2d_forward, perturb_all, silu, GradCheck, ParamStore, Tape, Tensor};
use dualrecon::blocks::{
    BlockConfig, BlockOptions, ChannelMsa, Conv, ConvSpec, Domain, Drdb, Gff, Gfr, Plde,
    RecurrentBlock, Sfe,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn conv_ref(s: &ParamStore, c: &Conv, x: &Tensor) -> Tensor {
    conv2d_forward(
        x,
        s.value(c.weight),
        Some(s.value(c.bias)),
        c.dilation,
        c.groups,
    )
    .unwrap()
}

fn relu(t: Tensor) -> Tensor {
    t.map(|v| v.max(0.0))
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut a = a.clone();
    a.add_assign(b);
    a
}

fn concat(parts: &[&Tensor]) -> Tensor {
    let (b, _, h, w) = parts[0].dims4().unwrap();
    let total: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut data = Vec::new();
    for bi in 0..b {
        for p in parts {
            let c = p.shape()[1];
            data.extend_from_slice(&p.data()[bi * c * h * w..(bi + 1) * c * h * w]);
        }
    }
    Tensor::new(vec![b, total, h, w], data).unwrap()
}

fn run(f: impl FnOnce(&Tape) -> dualrecon::Result<dualrecon::autodiff::Var>) -> Tensor {
    let t = Tape::new();
    let v = f(&t).unwrap();
    (*t.value(v)).clone()
}

const BLOCK_TOL: f64 = 1e-4;

fn small_cfg() -> BlockConfig {
    BlockConfig {
        channels: 4,
        growth: 2,
        stage_count: 2,
        heads: 2,
        head_dim: 2,
        dilations: vec![1, 2],
        plde_hidden: 3,
        window: 2,
    }
}

/// Literal per-element evaluation of channel self-attention.
fn msa_loop_oracle(s: &ParamStore, m: &ChannelMsa, x: &Tensor) -> (Tensor, Vec<Vec<Vec<f64>>>) {
    let (b, c, h, w) = x.dims4().unwrap();
    let hw = h * w;
    let inner = m.heads * m.head_dim;
    let proj = |conv: &Conv, input: &[f64], cin: usize, cout: usize| -> Vec<f64> {
        let wt = s.value(conv.weight).data();
        let bias = s.value(conv.bias).data();
        let mut out = vec![0.0; cout * hw];
        for o in 0..cout {
            for p in 0..hw {
                let mut acc = bias[o];
                for i in 0..cin {
                    acc += wt[o * cin + i] * input[i * hw + p];
                }
                out[o * hw + p] = acc;
            }
        }
        out
    };
    let mut y = vec![0.0; b * c * hw];
    let mut maps = Vec::new();
    for bi in 0..b {
        let xb = &x.data()[bi * c * hw..(bi + 1) * c * hw];
        let q = proj(&m.q, xb, c, inner);
        let k = proj(&m.k, xb, c, inner);
        let v = proj(&m.v, xb, c, inner);
        let mut z = vec![0.0; inner * hw];
        for head in 0..m.heads {
            let d = m.head_dim;
            let base = head * d;
            let mut attn = vec![vec![0.0; d]; d];
            for i in 0..d {
                let logits: Vec<f64> = (0..d)
                    .map(|j| {
                        (0..hw)
                            .map(|p| q[(base + i) * hw + p] * k[(base + j) * hw + p])
                            .sum::<f64>()
                            / (d as f64).sqrt()
                    })
                    .collect();
                let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
                let sum: f64 = e.iter().sum();
                for j in 0..d {
                    attn[i][j] = e[j] / sum;
                }
            }
            for i in 0..d {
                for p in 0..hw {
                    z[(base + i) * hw + p] =
                        (0..d).map(|j| attn[i][j] * v[(base + j) * hw + p]).sum();
                }
            }
            maps.push(attn);
        }
        let o = proj(&m.out, &z, inner, c);
        for i in 0..c * hw {
            y[bi * c * hw + i] = xb[i] + o[i];
        }
    }
    (Tensor::new(vec![b, c, h, w], y).unwrap(), maps)
}

fn build_msa(channels: usize, heads: usize, seed: u64) -> (ParamStore, ChannelMsa) {
    let mut s = ParamStore::new();
    let m = ChannelMsa::register(
        &mut s,
        "msa",
        channels,
        heads,
        channels / heads,
        &mut rng(seed),
    )
    .unwrap();
    perturb_all(&mut s, 0.5, seed + 100);
    (s, m)
}

#[test]
fn msa_matches_loop_oracle() {
    let (s, m) = build_msa(4, 2, 1);
    let x = random(&[1, 4, 2, 2], 2);
    let t = Tape::new();
    let (y, attn) = m
        .apply_with_attention(&t, &s, t.constant(x.clone()))
        .unwrap();
    let (want, maps) = msa_loop_oracle(&s, &m, &x);
    let got = t.value(y);
    let rel = got.max_abs_diff(&want) / want.max_abs();
    assert!(rel < 1e-10, "relative error {rel}");
    let a = t.value(attn);
    for (hi, map) in maps.iter().enumerate() {
        for (i, row) in map.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((a.data()[(hi * 2 + i) * 2 + j] - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn msa_attention_rows_sum_to_one() {
    let (s, m) = build_msa(8, 2, 3);
    let t = Tape::new();
    let (_, attn) = m
        .apply_with_attention(
            &t,
            &s,
            t.constant(random(&[2, 8, 4, 4], 4).map(|v| 3.0 * v)),
        )
        .unwrap();
    let a = t.value(attn);
    assert_eq!(a.shape(), &[4, 4, 4]);
    for row in a.data().chunks_exact(4) {
        assert!(row.iter().all(|&v| v >= 0.0));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn msa_is_spatially_equivariant() {
    let (s, m) = build_msa(4, 2, 5);
    let x = random(&[1, 4, 4, 4], 6);
    let mut perm: Vec<usize> = (0..16).collect();
    let mut r = rng(7);
    for i in (1..16).rev() {
        perm.swap(i, r.gen_range(0..=i));
    }
    let permute = |t: &Tensor| {
        let mut out = t.clone();
        for c in 0..4 {
            for (p, &src) in perm.iter().enumerate() {
                out.data_mut()[c * 16 + p] = t.data()[c * 16 + src];
            }
        }
        out
    };
    let y = run(|t| m.apply(t, &s, t.constant(x.clone())));
    let yp = run(|t| m.apply(t, &s, t.constant(permute(&x))));
    assert!(yp.max_abs_diff(&permute(&y)) < 1e-12);
}

#[test]
fn msa_flops_linear_in_pixels() {
    let (s, m) = build_msa(8, 2, 8);
    let flops = |h: usize| {
        let t = Tape::new();
        m.apply(&t, &s, t.constant(random(&[1, 8, h, 16], 9)))
            .unwrap();
        t.flops() as f64
    };
    let ratio = flops(32) / flops(16);
    assert!((ratio - 2.0).abs() <= 0.1, "ratio {ratio}");
}

#[test]
fn msa_trivial_cases() {
    // zero output projection: pure passthrough
    let mut s = ParamStore::new();
    let m = ChannelMsa::register(&mut s, "msa", 4, 2, 2, &mut rng(0)).unwrap();
    let x = random(&[1, 4, 2, 2], 1);
    assert_eq!(run(|t| m.apply(t, &s, t.constant(x.clone()))), x);
    // single channel with identity projections: attention is 1, output x + x
    let mut s = ParamStore::new();
    let m = ChannelMsa::register(&mut s, "one", 1, 1, 1, &mut rng(0)).unwrap();
    for conv in [&m.q, &m.k, &m.v, &m.out] {
        s.value_mut(conv.weight).data_mut()[0] = 1.0;
    }
    let x = random(&[1, 1, 3, 3], 2);
    let t = Tape::new();
    let (y, a) = m
        .apply_with_attention(&t, &s, t.constant(x.clone()))
        .unwrap();
    assert_eq!(t.value(a).data(), &[1.0]);
    assert!(t.value(y).max_abs_diff(&x.map(|v| 2.0 * v)) < 1e-15);
    let mut s = ParamStore::new();
    assert!(ChannelMsa::register(&mut s, "bad", 6, 4, 1, &mut rng(0)).is_err());
}

#[test]
fn conv_and_depthwise_gradients() {
    let mut s = ParamStore::new();
    let c = Conv::register(&mut s, "c", ConvSpec::new(2, 3, 3).dilation(2), &mut rng(1)).unwrap();
    let d = Conv::register(&mut s, "d", ConvSpec::new(3, 3, 3).depthwise(), &mut rng(2)).unwrap();
    perturb_all(&mut s, 0.5, 3);
    let r = GradCheck::default()
        .run(&s, &[random(&[2, 2, 5, 5], 4)], |t, s, v| {
            let y = c.apply(t, s, v[0])?;
            d.apply(t, s, y)
        })
        .unwrap();
    assert!(r.max_rel_error < BLOCK_TOL, "{r:?}");
}

#[test]
fn msa_gradients() {
    let (s, m) = build_msa(4, 2, 11);
    let r = GradCheck::default()
        .run(&s, &[random(&[1, 4, 3, 3], 12)], |t, s, v| {
            m.apply(t, s, v[0])
        })
        .unwrap();
    assert!(r.max_rel_error < BLOCK_TOL, "{r:?}");
}

#[test]
fn drdb_gradients_and_widths() {
    let mut s = ParamStore::new();
    let d = Drdb::register(&mut s, "drdb", 4, 2, &[1, 2, 1], &mut rng(13)).unwrap();
    assert_eq!(d.widths(), vec![4, 6, 8, 10]);
    let t = Tape::new();
    let y = d
        .apply(&t, &s, t.constant(random(&[1, 4, 4, 4], 1)))
        .unwrap();
    assert_eq!(t.shape(y), vec![1, 4, 4, 4]);
    let r = GradCheck::default()
        .run(&s, &[random(&[1, 4, 4, 4], 14)], |t, s, v| {
            d.apply(t, s, v[0])
        })
        .unwrap();
    assert!(r.max_rel_error < BLOCK_TOL, "{r:?}");
}

#[test]
fn drdb_residual_identities() {
    let mut s = ParamStore::new();
    let d = Drdb::register(&mut s, "drdb", 4, 2, &[1, 2, 4, 1], &mut rng(15)).unwrap();
    let zero = Tensor::zeros(&[1, 4, 4, 4]);
    assert_eq!(run(|t| d.apply(t, &s, t.constant(zero.clone()))), zero);
    *s.value_mut(d.fusion.weight) = Tensor::zeros(s.value(d.fusion.weight).shape());
    let x = random(&[1, 4, 4, 4], 16);
    assert_eq!(run(|t| d.apply(t, &s, t.constant(x.clone()))), x);
}

fn plde_oracle(s: &ParamStore, p: &Plde, x: &Tensor) -> Tensor {
    let mut y = conv_ref(s, &p.proj, x);
    for dw in &p.depthwise {
        y = conv_ref(s, dw, &y).map(silu);
    }
    let (b, c, h, w) = y.dims4().unwrap();
    let ws = p.window;
    let e = s.value(p.embed).data();
    let mut emb = Tensor::zeros(y.shape());
    for plane in 0..b * c {
        for by in 0..h / ws {
            for bx in 0..w / ws {
                for o in 0..ws * ws {
                    let mut acc = 0.0;
                    for i in 0..ws * ws {
                        let (iy, ix) = (by * ws + i / ws, bx * ws + i % ws);
                        acc += e[o * ws * ws + i] * y.data()[(plane * h + iy) * w + ix];
                    }
                    let (oy, ox) = (by * ws + o / ws, bx * ws + o % ws);
                    emb.data_mut()[(plane * h + oy) * w + ox] = acc;
                }
            }
        }
    }
    conv_ref(s, &p.out, &emb)
}

#[test]
fn plde_matches_layer_composition() {
    let mut s = ParamStore::new();
    let p = Plde::register(&mut s, "plde", 4, 3, 2, &mut rng(17)).unwrap();
    let x = random(&[2, 4, 4, 6], 18);
    // zero output projection: branch contributes nothing
    assert_eq!(
        run(|t| p.apply(t, &s, t.constant(x.clone()))),
        Tensor::zeros(&[2, 4, 4, 6])
    );
    perturb_all(&mut s, 0.7, 19);
    let got = run(|t| p.apply(t, &s, t.constant(x.clone())));
    let want = plde_oracle(&s, &p, &x);
    assert!(got.max_abs_diff(&want) <= 1e-12 * want.max_abs().max(1.0));
    let r = GradCheck::default()
        .run(&s, &[x], |t, s, v| p.apply(t, s, v[0]))
        .unwrap();
    assert!(r.max_rel_error < BLOCK_TOL, "{r:?}");
    // planes must tile into windows
    let t = Tape::new();
    assert!(p
        .apply(&t, &s, t.constant(random(&[1, 4, 3, 4], 1)))
        .is_err());
}

#[test]
fn plde_shape_for_any_hidden_width() {
    for hidden in [1, 5, 9] {
        let mut s = ParamStore::new();
        let p = Plde::register(&mut s, "p", 4, hidden, 4, &mut rng(hidden as u64)).unwrap();
        perturb_all(&mut s, 0.3, 1);
        let y = run(|t| p.apply(t, &s, t.constant(random(&[2, 4, 8, 8], 2))));
        assert_eq!(y.shape(), &[2, 4, 8, 8]);
    }
}

#[test]
fn sfe_is_two_relu_convs() {
    let mut s = ParamStore::new();
    let f = Sfe::register(&mut s, "sfe", 2, 4, &mut rng(20)).unwrap();
    let x = random(&[1, 2, 5, 5], 21);
    let t = Tape::new();
    let (a, b) = f.apply(&t, &s, t.constant(x.clone())).unwrap();
    let want_a = relu(conv_ref(&s, &f.first, &x));
    let want_b = relu(conv_ref(&s, &f.second, &want_a));
    assert_eq!(*t.value(a), want_a);
    assert_eq!(*t.value(b), want_b);
    assert_eq!(t.shape(b), vec![1, 4, 5, 5]);
    let zero = Tensor::zeros(&[1, 2, 5, 5]);
    let t = Tape::new();
    let (a, b) = f.apply(&t, &s, t.constant(zero)).unwrap();
    assert_eq!(t.value(a).max_abs(), 0.0);
    assert_eq!(t.value(b).max_abs(), 0.0);
    let t = Tape::new();
    assert!(f
        .apply(&t, &s, t.constant(Tensor::zeros(&[1, 4, 5, 5])))
        .is_err());
}

#[test]
fn gff_and_gfr_compositions() {
    let mut s = ParamStore::new();
    let g = Gff::register(&mut s, "gff", 3, 4, &mut rng(22)).unwrap();
    let r = Gfr::register(&mut s, "gfr", 3, &mut rng(23)).unwrap();
    perturb_all(&mut s, 0.5, 24);
    let feats: Vec<Tensor> = (0..4).map(|i| random(&[1, 3, 4, 4], 30 + i)).collect();
    let t = Tape::new();
    let vars: Vec<_> = feats.iter().map(|f| t.constant(f.clone())).collect();
    let fused = g.apply(&t, &s, &vars).unwrap();
    let refs: Vec<&Tensor> = feats.iter().collect();
    let want = conv_ref(&s, &g.conv, &conv_ref(&s, &g.fuse, &concat(&refs)));
    assert!(t.value(fused).max_abs_diff(&want) < 1e-12);
    assert_eq!(t.shape(fused), vec![1, 3, 4, 4]);
    assert!(g.apply(&t, &s, &vars[..3]).is_err());

    // with the fused input zeroed the refinement sees exactly F_-1
    let fm1 = random(&[1, 3, 4, 4], 40);
    let y = run(|t| {
        r.apply(
            t,
            &s,
            t.constant(fm1.clone()),
            t.constant(Tensor::zeros(&[1, 3, 4, 4])),
        )
    });
    let want = conv_ref(&s, &r.last, &relu(conv_ref(&s, &r.first, &fm1)));
    assert!(y.max_abs_diff(&want) < 1e-12);
    assert_eq!(y.shape(), &[1, 2, 4, 4]);
    let y = run(|t| r.apply(t, &s, t.constant(fm1.clone()), t.constant(fm1.clone())));
    let want = conv_ref(&s, &r.last, &relu(conv_ref(&s, &r.first, &add(&fm1, &fm1))));
    assert!(y.max_abs_diff(&want) < 1e-12);

    let gr = GradCheck::default()
        .run(&s, &[feats[0].clone(), feats[1].clone()], |t, s, v| {
            let f = g.apply(t, s, &[v[0], v[1], v[0], v[1]])?;
            r.apply(t, s, v[0], f)
        })
        .unwrap();
    assert!(gr.max_rel_error < BLOCK_TOL, "{gr:?}");
}

#[test]
fn gff_zero_stages_give_zero() {
    let mut s = ParamStore::new();
    let g = Gff::register(&mut s, "gff", 2, 3, &mut rng(1)).unwrap();
    let t = Tape::new();
    let z = t.constant(Tensor::zeros(&[1, 2, 3, 3]));
    let y = g.apply(&t, &s, &[z, z, z]).unwrap();
    assert_eq!(t.value(y).max_abs(), 0.0);
}

#[test]
fn glim_delegates_to_channel_attention() {
    let cfg = small_cfg();
    let opts = |glim| BlockOptions {
        in_channels: 2,
        glim,
        plde: false,
    };
    let mut s = ParamStore::new();
    let kb = RecurrentBlock::register(
        &mut s,
        "ksp",
        &cfg,
        Domain::Kspace,
        opts(true),
        &mut rng(50),
    )
    .unwrap();
    let ib = RecurrentBlock::register(
        &mut s,
        "img",
        &cfg,
        Domain::Image,
        opts(false),
        &mut rng(51),
    )
    .unwrap();
    let x = random(&[1, 2, 4, 4], 52);
    // freshly initialised attention is the identity
    let t = Tape::new();
    let m = kb.trace(&t, &s, t.constant(x.clone())).unwrap();
    assert_eq!(t.value(m.f0), t.value(m.f0_c));
    perturb_all(&mut s, 0.5, 53);
    let t = Tape::new();
    let m = kb.trace(&t, &s, t.constant(x.clone())).unwrap();
    let f0c = (*t.value(m.f0_c)).clone();
    let direct = run(|t2| {
        kb.glim
            .as_ref()
            .unwrap()
            .apply(t2, &s, t2.constant(f0c.clone()))
    });
    assert_eq!(*t.value(m.f0), direct);
    let t = Tape::new();
    let m = ib.trace(&t, &s, t.constant(x)).unwrap();
    assert_eq!(m.f0, m.f0_c);
}

#[test]
fn stage_identities() {
    let mut cfg = small_cfg();
    cfg.stage_count = 1;
    let mut s = ParamStore::new();
    let b = RecurrentBlock::register(
        &mut s,
        "img",
        &cfg,
        Domain::Image,
        BlockOptions {
            in_channels: 2,
            glim: false,
            plde: true,
        },
        &mut rng(60),
    )
    .unwrap();
    let stage = &b.stages[0];
    let x = random(&[1, 4, 4, 4], 61);
    let drdb_only = run(|t| stage.drdb.apply(t, &s, t.constant(x.clone())));
    assert_eq!(
        run(|t| stage.apply(t, &s, t.constant(x.clone()))),
        drdb_only
    );
    *s.value_mut(stage.drdb.fusion.weight) =
        Tensor::zeros(s.value(stage.drdb.fusion.weight).shape());
    assert_eq!(run(|t| stage.apply(t, &s, t.constant(x.clone()))), x);
}

#[test]
fn recurrent_block_gradients_and_init() {
    let cfg = small_cfg();
    let mut s = ParamStore::new();
    let b = RecurrentBlock::register(
        &mut s,
        "ksp",
        &cfg,
        Domain::Kspace,
        BlockOptions {
            in_channels: 4,
            glim: true,
            plde: true,
        },
        &mut rng(70),
    )
    .unwrap();
    let input = random(&[1, 4, 4, 4], 71);
    let base = random(&[1, 2, 4, 4], 72);
    // zero-initialised refinement: the block returns its base estimate
    assert_eq!(
        run(|t| b.apply(t, &s, t.constant(input.clone()), t.constant(base.clone()))),
        base
    );
    perturb_all(&mut s, 0.4, 73);
    let r = GradCheck::default()
        .run(&s, &[input, base], |t, s, v| b.apply(t, s, v[0], v[1]))
        .unwrap();
    assert!(r.max_rel_error < BLOCK_TOL, "{r:?}");
}
