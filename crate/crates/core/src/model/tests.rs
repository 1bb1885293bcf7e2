use super::*;
use crate::loss::{hybrid_loss_node, LossConfig};
use crate::numerics::DftBasis;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::vec;
use std::vec::Vec;

fn random_model(cfg: ModelConfig, seed: u64) -> FhrFormer<f64> {
    // non-trivial biases and LN parameters, so the oracle exercises them
    let m = FhrFormer::<f64>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let params = m
        .params()
        .iter()
        .map(|p| {
            let mut t = p.tensor.clone();
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
            NamedTensor { name: p.name.clone(), tensor: t }
        })
        .collect();
    FhrFormer::from_params(cfg, params).unwrap()
}

fn signal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| 0.55 + 0.05 * (i as f64 * 0.3).sin() + rng.random_range(-0.02..0.02)).collect()
}

/// Plain-loop reference implementation of the forward pass.
mod reference {
    use super::*;

    pub type Mat = Vec<Vec<f64>>;

    pub fn param<'a>(m: &'a FhrFormer<f64>, slot: usize) -> &'a [f64] {
        m.params()[slot].tensor.data()
    }

    /// `y = W x + b` for every row, `W` stored `[out × in]`.
    pub fn linear(x: &Mat, w: &[f64], b: &[f64]) -> Mat {
        let out = b.len();
        x.iter()
            .map(|row| (0..out).map(|o| b[o] + row.iter().enumerate().map(|(i, v)| w[o * row.len() + i] * v).sum::<f64>()).collect())
            .collect()
    }

    pub fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
    }

    pub fn layer_norm(x: &Mat, g: &[f64], b: &[f64]) -> Mat {
        x.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mu = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                let s = (var + LN_EPS).sqrt();
                r.iter().enumerate().map(|(j, v)| (v - mu) / s * g[j] + b[j]).collect()
            })
            .collect()
    }

    pub fn attention(m: &FhrFormer<f64>, a: &AttnIdx, q_in: &Mat, kv: &Mat) -> Mat {
        let q = linear(q_in, param(m, a.wq), param(m, a.bq));
        let k = linear(kv, param(m, a.wk), param(m, a.bk));
        let v = linear(kv, param(m, a.wv), param(m, a.bv));
        let h = m.config().heads;
        let dh = m.config().head_dim();
        let mut cat = vec![vec![0.0; h * dh]; q.len()];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for (qi, qrow) in q.iter().enumerate() {
                let scores: Vec<f64> = k
                    .iter()
                    .map(|krow| cols.clone().map(|c| qrow[c] * krow[c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    cat[qi][c] = e.iter().zip(&v).map(|(w, vrow)| w / z * vrow[c]).sum();
                }
            }
        }
        linear(&cat, param(m, a.wo), param(m, a.bo))
    }

    fn gelu(x: f64) -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
    }

    pub fn ffn(m: &FhrFormer<f64>, f: &FfnIdx, x: &Mat) -> Mat {
        let h: Mat = linear(x, param(m, f.w1), param(m, f.b1)).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        linear(&h, param(m, f.w2), param(m, f.b2))
    }

    pub fn pos(d: usize, p: usize) -> Vec<f64> {
        (0..d)
            .map(|j| {
                let a = p as f64 / 10000f64.powf((j / 2 * 2) as f64 / d as f64);
                if j % 2 == 0 {
                    a.sin()
                } else {
                    a.cos()
                }
            })
            .collect()
    }

    pub fn forward(m: &FhrFormer<f64>, x: &[f64], masked: &[usize], first: usize) -> (Mat, Vec<f64>) {
        let c = m.config();
        let (p, d) = (c.patch_size, c.d_model);
        let n = x.len() / p;
        let l = m.layout();
        let visible: Vec<usize> = (0..n).filter(|i| !masked.contains(i)).collect();
        let rows: Mat = visible.iter().map(|&i| x[i * p..(i + 1) * p].to_vec()).collect();
        let posv: Mat = visible.iter().map(|&i| pos(d, i + first)).collect();
        let mut h = add(&linear(&rows, param(m, l.w_in), param(m, l.b_in)), &posv);
        for blk in &l.encoder {
            let a = attention(m, &blk.attn, &h, &h);
            let h1 = layer_norm(&add(&h, &a), param(m, blk.ln1.gain), param(m, blk.ln1.bias));
            let f = ffn(m, &blk.ffn, &h1);
            h = layer_norm(&add(&h1, &f), param(m, blk.ln2.gain), param(m, blk.ln2.bias));
        }
        let z = h;
        let mut dec: Mat = (0..n)
            .map(|i| {
                let base = match visible.iter().position(|&v| v == i) {
                    Some(r) => z[r].clone(),
                    None => param(m, l.mask_token).to_vec(),
                };
                base.iter().zip(pos(d, i + first)).map(|(a, b)| a + b).collect()
            })
            .collect();
        for blk in &l.decoder {
            let a = attention(m, &blk.self_attn, &dec, &dec);
            let d1 = layer_norm(&add(&dec, &a), param(m, blk.ln1.gain), param(m, blk.ln1.bias));
            let cr = attention(m, &blk.cross_attn, &d1, &z);
            let d2 = layer_norm(&add(&d1, &cr), param(m, blk.ln2.gain), param(m, blk.ln2.bias));
            let f = ffn(m, &blk.ffn, &d2);
            dec = layer_norm(&add(&d2, &f), param(m, blk.ln3.gain), param(m, blk.ln3.bias));
        }
        let pred = linear(&dec, param(m, l.w_out), param(m, l.b_out));
        let mut recon = x.to_vec();
        for &i in masked {
            recon[i * p..(i + 1) * p].copy_from_slice(&pred[i]);
        }
        (z, recon)
    }
}

#[test]
fn forward_matches_plain_loop_reference() {
    for (cfg, masked, first) in [
        (ModelConfig::tiny(), vec![1usize, 5], 0usize),
        (ModelConfig { encoder_layers: 2, decoder_layers: 2, ..ModelConfig::tiny() }, vec![0, 7], 3),
        (ModelConfig { signal_length: 12, ..ModelConfig::tiny() }, vec![2], 0),
    ] {
        let m = random_model(cfg, 11);
        let x = signal(cfg.signal_length, 2);
        let layout = PatchLayout::from_masked(cfg.n_patches(), &masked).unwrap();
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let out = m.forward(&mut g, &b, &x, &layout, first, None).unwrap();
        let (z, recon) = reference::forward(&m, &x, &masked, first);
        let flat: Vec<f64> = z.concat();
        assert_eq!(g.shape(out.latent), &[layout.visible.len(), cfg.d_model]);
        assert_eq!(g.shape(out.decoded), &[cfg.n_patches(), cfg.d_model]);
        for (a, e) in g.value(out.latent).iter().zip(&flat) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
        for (a, e) in g.value(out.recon).iter().zip(&recon) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
    }
}

#[test]
fn zero_embedding_yields_positions() {
    let cfg = ModelConfig::tiny();
    let m = FhrFormer::<f64>::new(cfg, 1).unwrap();
    let mut params = m.params().to_vec();
    params[m.layout().w_in].tensor.data_mut().fill(0.0);
    let m = FhrFormer::from_params(cfg, params).unwrap();
    let x = signal(32, 1);
    let layout = PatchLayout::from_masked(8, &[2, 6]).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g);
    let patches = g.constant_slice(&x, &[8, 4]).unwrap();
    let e = m.embed_visible(&mut g, &b, patches, &layout, 0, None).unwrap();
    let expect = m.positions().rows(layout.visible.iter().copied());
    assert_eq!(g.value(e), expect.data());
}

#[test]
fn single_visible_patch_attends_to_itself() {
    let cfg = ModelConfig::tiny();
    let m = random_model(cfg, 5);
    let x = signal(32, 3);
    let masked: Vec<usize> = (0..8).filter(|&i| i != 4).collect();
    let layout = PatchLayout::from_masked(8, &masked).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g);
    let out = m.forward(&mut g, &b, &x, &layout, 0, None).unwrap();
    assert_eq!(g.shape(out.latent), &[1, 8]);
    let (_, recon) = reference::forward(&m, &x, &masked, 0);
    for (a, e) in g.value(out.recon).iter().zip(&recon) {
        assert!((a - e).abs() < 1e-10);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let cfg = ModelConfig::tiny();
    let m = random_model(cfg, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows = 5;
    let e: Vec<f64> = (0..rows * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let perm = [3usize, 0, 4, 1, 2];
    let permuted: Vec<f64> = perm.iter().flat_map(|&r| e[r * 8..(r + 1) * 8].to_vec()).collect();
    let run = |data: Vec<f64>| {
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let v = g.constant(Tensor::new(&[rows, 8], data).unwrap());
        let z = m.encode(&mut g, &b, v, None).unwrap();
        g.value(z).to_vec()
    };
    let z = run(e);
    let zp = run(permuted);
    for (k, &r) in perm.iter().enumerate() {
        for j in 0..8 {
            assert!((zp[k * 8 + j] - z[r * 8 + j]).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_tokens_get_distinct_decoder_inputs() {
    let cfg = ModelConfig::tiny();
    let m = random_model(cfg, 2);
    let x = signal(32, 4);
    let layout = PatchLayout::from_masked(8, &[1, 6]).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g);
    let out = m.forward(&mut g, &b, &x, &layout, 0, None).unwrap();
    let p = g.value(out.predictions);
    assert_ne!(&p[4..8], &p[24..28]);
}

#[test]
fn all_visible_forward_is_identity() {
    let cfg = ModelConfig::tiny();
    let m = random_model(cfg, 2);
    let x = signal(32, 4);
    let layout = PatchLayout::all_visible(8);
    let mut g = Graph::new();
    let b = m.bind(&mut g);
    let out = m.forward(&mut g, &b, &x, &layout, 0, None).unwrap();
    assert_eq!(g.shape(out.decoded), &[8, 8]);
    assert_eq!(g.value(out.recon), &x[..]);
}

#[test]
fn visible_predictions_receive_no_gradient() {
    let cfg = ModelConfig::tiny();
    let m = random_model(cfg, 6);
    let x = signal(32, 5);
    let layout = PatchLayout::from_masked(8, &[0, 3]).unwrap();
    let basis = DftBasis::new(32).unwrap();
    let mut g = Graph::new();
    let b = m.bind(&mut g);
    let out = m.forward(&mut g, &b, &x, &layout, 0, None).unwrap();
    let loss = hybrid_loss_node(&mut g, &basis, &out, &layout, &LossConfig::default()).unwrap();
    let gr = g.backward(loss.total).unwrap();
    let gp = gr.wrt(out.predictions).unwrap();
    for i in 0..8 {
        let row = &gp[i * 4..(i + 1) * 4];
        if layout.masked.contains(&i) {
            assert!(row.iter().any(|&v| v != 0.0));
        } else {
            assert!(row.iter().all(|&v| v == 0.0));
        }
    }
    assert!(gr.wrt(out.patches).is_none());
}

#[test]
fn from_params_rejects_mismatches() {
    let cfg = ModelConfig::tiny();
    let m = FhrFormer::<f32>::new(cfg, 1).unwrap();
    let mut p = m.params().to_vec();
    p.pop();
    assert!(FhrFormer::from_params(cfg, p).is_err());
    let mut p = m.params().to_vec();
    p[0].name = "other".into();
    assert!(FhrFormer::from_params(cfg, p).is_err());
    let mut p = m.params().to_vec();
    p[3].tensor.data_mut()[0] = f32::NAN;
    assert!(FhrFormer::from_params(cfg, p).is_err());
}

#[test]
fn inference_is_deterministic_and_seeded() {
    let cfg = ModelConfig::tiny();
    let a = FhrFormer::<f32>::new(cfg, 4).unwrap();
    let b = FhrFormer::<f32>::new(cfg, 4).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), FhrFormer::<f32>::new(cfg, 5).unwrap().params());
    let x: Vec<f32> = signal(32, 1).iter().map(|&v| v as f32).collect();
    let layout = PatchLayout::from_masked(8, &[2]).unwrap();
    assert_eq!(a.reconstruct(&x, &layout, 0).unwrap(), b.reconstruct(&x, &layout, 0).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn composition_keeps_visible_samples(seed in 0u64..10_000, ratio in 0.05f64..0.9, pad in 0usize..20) {
        let cfg = ModelConfig { dropout: 0.1, ..ModelConfig::tiny() };
        let m = FhrFormer::<f32>::new(cfg, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<f32> = (0..32).map(|_| rng.random_range(0.3..0.8)).collect();
        x[..pad].fill(0.0);
        let eligible = eligible_patches(pad, 4, 8);
        let layout = sample_mask(8, ratio, &eligible, &mut rng).unwrap();
        prop_assert_eq!(layout.masked.len(), mask_count(ratio, eligible.len()));
        let mut drop = stream(seed, Stream::Dropout, 0, 0);
        let mut g = Graph::new();
        let b = m.bind(&mut g);
        let out = m.forward(&mut g, &b, &x, &layout, 0, Some(&mut drop)).unwrap();
        let r = g.value(out.recon);
        for &i in &layout.visible {
            for t in i * 4..(i + 1) * 4 {
                prop_assert_eq!(r[t].to_bits(), x[t].to_bits());
            }
        }
    }
}
