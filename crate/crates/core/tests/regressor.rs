use handmesh::dataio::{bundled_rig, synthesize_dataset, SynthConfig};
use handmesh::hand_model::HandModelAsset;
use handmesh::linalg::Mat3;
use handmesh::losses::{DiscriminatorBank, LossWeights};
use handmesh::regressor::checkpoint::{checkpoint_from_bytes, checkpoint_to_bytes};
use handmesh::regressor::tape::{Tape, Tensor};
use handmesh::regressor::train::batch_gradient;
use handmesh::regressor::{
    load_checkpoint, patchify, save_checkpoint, Regressor, RegressorConfig, RegressorError, RotationRep,
    TrainConfig, TrainSample, Trainer, IMAGE_MEAN, IMAGE_STD,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    (0..size * size * 3).map(|_| rng.gen_range(0.0..1.0)).collect()
}

/// Adds N(0, std) noise to every parameter so no path is trivially zero.
fn perturb(model: &mut Regressor<f64>, rng: &mut ChaCha8Rng, std: f64) {
    let n = Normal::new(0.0, std).unwrap();
    for t in model.params_mut() {
        t.data.iter_mut().for_each(|x| *x += n.sample(rng));
    }
}

fn samples(asset: &HandModelAsset<f64>, n: usize, seed: u64, size: usize) -> Vec<TrainSample<f64>> {
    let cfg = SynthConfig {
        image_size: size,
        ..SynthConfig::default()
    };
    synthesize_dataset(asset, n, seed, &cfg)
        .iter()
        .map(|s| TrainSample::from_synthetic(s).unwrap())
        .collect()
}

// ---- independent loop oracle of the forward pass ----

struct Oracle<'a>(&'a Regressor<f64>);

impl Oracle<'_> {
    fn p(&self, name: &str) -> &Tensor<f64> {
        self.0.param(name).unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn linear(&self, x: &[f64], prefix: &str) -> Vec<f64> {
        let (w, b) = (self.p(&format!("{prefix}.weight")), self.p(&format!("{prefix}.bias")));
        (0..w.cols)
            .map(|o| b.data[o] + (0..w.rows).map(|i| x[i] * w.at(i, o)).sum::<f64>())
            .collect()
    }

    fn norm(&self, x: &[f64], prefix: &str) -> Vec<f64> {
        let (g, b) = (self.p(&format!("{prefix}.gamma")), self.p(&format!("{prefix}.beta")));
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - mean) / (var + 1e-5).sqrt() * g.data[i] + b.data[i])
            .collect()
    }

    fn mlp(&self, x: &[f64], prefix: &str) -> Vec<f64> {
        let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let h: Vec<f64> = self.linear(x, &format!("{prefix}.fc1")).into_iter().map(gelu).collect();
        self.linear(&h, &format!("{prefix}.fc2"))
    }

    fn attention(&self, xq: &[Vec<f64>], xkv: &[Vec<f64>], prefix: &str, heads: usize) -> Vec<Vec<f64>> {
        let q: Vec<_> = xq.iter().map(|x| self.linear(x, &format!("{prefix}.q"))).collect();
        let k: Vec<_> = xkv.iter().map(|x| self.linear(x, &format!("{prefix}.k"))).collect();
        let v: Vec<_> = xkv.iter().map(|x| self.linear(x, &format!("{prefix}.v"))).collect();
        let d = q[0].len();
        let dh = d / heads;
        q.iter()
            .map(|qi| {
                let mut o = vec![0.0; d];
                for h in 0..heads {
                    let r = h * dh..(h + 1) * dh;
                    let s: Vec<f64> = k
                        .iter()
                        .map(|kj| qi[r.clone()].iter().zip(&kj[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt())
                        .collect();
                    let mx = s.iter().cloned().fold(f64::MIN, f64::max);
                    let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
                    let z: f64 = e.iter().sum();
                    for (j, vj) in v.iter().enumerate() {
                        for c in r.clone() {
                            o[c] += e[j] / z * vj[c];
                        }
                    }
                }
                self.linear(&o, &format!("{prefix}.out"))
            })
            .collect()
    }

    fn forward(&self, image: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let cfg = self.0.config();
        let (s, p, g) = (cfg.input_size, cfg.patch_size, cfg.grid());
        let add = |a: &mut Vec<f64>, b: Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        let pos = self.p("pos_embed");
        let mut x: Vec<Vec<f64>> = Vec::new();
        for gy in 0..g {
            for gx in 0..g {
                let mut tok = Vec::new();
                for dy in 0..p {
                    for dx in 0..p {
                        for c in 0..3 {
                            let v = image[((gy * p + dy) * s + gx * p + dx) * 3 + c];
                            tok.push((v - IMAGE_MEAN) / IMAGE_STD);
                        }
                    }
                }
                let mut e = self.linear(&tok, "patch_embed");
                add(&mut e, pos.row(gy * g + gx).to_vec());
                x.push(e);
            }
        }
        for l in 0..cfg.depth {
            let pre = format!("encoder.{l}");
            let h: Vec<_> = x.iter().map(|t| self.norm(t, &format!("{pre}.norm1"))).collect();
            let a = self.attention(&h, &h, &format!("{pre}.attn"), cfg.num_heads);
            for (t, ai) in x.iter_mut().zip(a) {
                add(t, ai);
            }
            for t in x.iter_mut() {
                let m = self.mlp(&self.norm(t, &format!("{pre}.norm2")), &format!("{pre}.mlp"));
                add(t, m);
            }
        }
        let mut q = self.p("decoder.query").data.clone();
        for l in 0..cfg.decoder_depth {
            let pre = format!("decoder.{l}");
            let qn = self.norm(&q, &format!("{pre}.norm_query"));
            let cn: Vec<_> = x.iter().map(|t| self.norm(t, &format!("{pre}.norm_context"))).collect();
            let a = self.attention(&[qn], &cn, &format!("{pre}.cross_attn"), cfg.num_heads);
            add(&mut q, a[0].clone());
            let m = self.mlp(&self.norm(&q, &format!("{pre}.norm2")), &format!("{pre}.mlp"));
            add(&mut q, m);
        }
        let f = self.norm(&q, "decoder.norm");
        (
            self.linear(&f, "head.pose"),
            self.linear(&f, "head.shape"),
            self.linear(&f, "head.camera"),
        )
    }
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn config_invariants_are_enforced() {
    let mut c = RegressorConfig::tiny();
    c.patch_size = 5;
    assert!(matches!(c.validate(), Err(RegressorError::InvalidConfig(m)) if m.contains("divisible by patch")));
    let mut c = RegressorConfig::tiny();
    c.num_heads = 3;
    assert!(matches!(c.validate(), Err(RegressorError::InvalidConfig(m)) if m.contains("head count")));
    for name in ["tiny", "desk", "huge"] {
        RegressorConfig::preset(name).unwrap().validate().unwrap();
    }
    let desk = RegressorConfig::desk();
    assert!((64..=128).contains(&desk.embed_dim) && (2..=4).contains(&desk.depth));
}

#[test]
fn huge_preset_shapes_without_allocating() {
    let c = RegressorConfig::huge();
    assert_eq!(c.num_tokens(), 256);
    assert_eq!(c.token_dim(), 768);
    let shapes = c.param_shapes();
    let get = |n: &str| shapes.iter().find(|s| s.0 == n).map(|s| (s.1, s.2)).unwrap();
    assert_eq!(get("patch_embed.weight"), (768, 1280));
    assert_eq!(get("pos_embed"), (256, 1280));
    assert_eq!(get("encoder.31.mlp.fc1.weight"), (1280, 5120));
    assert_eq!(get("decoder.5.cross_attn.k.weight"), (1280, 1280));
    assert_eq!(get("head.pose.weight"), (1280, 96));
    // 32 blocks of 12 d^2 + 13 d, plus embeddings, decoder and heads
    let d = 1280usize;
    let block = 12 * d * d + 13 * d;
    let dec = 12 * d * d + 15 * d;
    let expected = 768 * d + d + 256 * d + 32 * block + d + 6 * dec + 2 * d + (d + 1) * (96 + 10 + 3);
    assert_eq!(c.num_params(), expected);
}

#[test]
fn patchify_matches_naive_slicing() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (size, p) in [(32, 8), (16, 4), (12, 3), (8, 8)] {
        let img = random_image(&mut rng, size);
        let t = patchify(&img, size, p).unwrap();
        let g = size / p;
        assert_eq!(t.shape(), (g * g, 3 * p * p));
        for token in 0..g * g {
            let (gy, gx) = (token / g, token % g);
            for e in 0..3 * p * p {
                let (dy, dx, c) = (e / (3 * p), (e / 3) % p, e % 3);
                let (y, x) = (gy * p + dy, gx * p + dx);
                assert_eq!(t.at(token, e), img[(y * size + x) * 3 + c]);
            }
        }
    }
    let one = patchify(&random_image(&mut rng, 8), 8, 8).unwrap();
    assert_eq!(one.rows, 1);
    assert!(matches!(
        patchify(&[0.0; 10], 8, 4),
        Err(RegressorError::Shape { expected: 192, got: 10, .. })
    ));
    let mut m = Regressor::<f64>::new(RegressorConfig::tiny(), 0).unwrap();
    assert!(m.forward(&[0.5; 17]).is_err());
    assert!(m.param_mut("no.such").is_none());
}

#[test]
fn constant_image_with_zero_embedding_gives_equal_tokens() {
    let mut m = Regressor::<f64>::new(RegressorConfig::tiny(), 1).unwrap();
    m.param_mut("patch_embed.weight").unwrap().data.fill(0.0);
    m.param_mut("pos_embed").unwrap().data.fill(0.0);
    m.param_mut("patch_embed.bias").unwrap().data.iter_mut().enumerate().for_each(|(i, b)| *b = i as f64);
    let mut tape = Tape::new();
    let p = m.bind(&mut tape);
    let tokens = patchify(&[0.3; 32 * 32 * 3], 32, 8).unwrap();
    let x = m.embed(&mut tape, &p, tokens);
    let v = tape.value(x);
    for r in 1..v.rows {
        assert_eq!(v.row(r), v.row(0));
    }
}

#[test]
fn zero_depth_encoder_is_identity() {
    let m = Regressor::<f64>::new(RegressorConfig { depth: 0, ..RegressorConfig::tiny() }, 2).unwrap();
    let mut tape = Tape::new();
    let p = m.bind(&mut tape);
    let x = m.embed(&mut tape, &p, patchify(&[0.2; 32 * 32 * 3], 32, 8).unwrap());
    let mut probs = Vec::new();
    assert_eq!(m.encode(&mut tape, &p, x, &mut probs), x);
    assert!(probs.is_empty());
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (cfg, seed) in [
        (RegressorConfig::tiny(), 0),
        (RegressorConfig { depth: 2, decoder_depth: 2, num_heads: 4, ..RegressorConfig::tiny() }, 1),
        (RegressorConfig { input_size: 16, patch_size: 4, rotation: RotationRep::AxisAngle, ..RegressorConfig::tiny() }, 2),
    ] {
        let mut m = Regressor::<f64>::new(cfg.clone(), seed).unwrap();
        perturb(&mut m, &mut rng, 0.3);
        let img = random_image(&mut rng, cfg.input_size);
        let raw = m.forward_raw(&img).unwrap();
        let (pose, beta, cam) = Oracle(&m).forward(&img);
        assert!(close(&raw.pose, &pose, 1e-10));
        assert!(close(&raw.beta, &beta, 1e-10));
        assert!(close(&raw.camera, &cam, 1e-10));
    }
}

#[test]
fn single_token_attention_is_the_value_path() {
    // one patch: encoder self-attention and decoder cross-attention both see
    // a single key, so query and key weights cannot matter
    let cfg = RegressorConfig {
        input_size: 8,
        patch_size: 8,
        depth: 2,
        decoder_depth: 2,
        ..RegressorConfig::tiny()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut m = Regressor::<f64>::new(cfg, 0).unwrap();
    perturb(&mut m, &mut rng, 0.3);
    let img = random_image(&mut rng, 8);
    let pass = m.record(&img).unwrap();
    for a in &pass.attention {
        assert_eq!(pass.tape.value(*a).data, vec![1.0]);
    }
    let before = m.forward_raw(&img).unwrap();
    let names: Vec<String> = m.param_names().to_vec();
    for n in names.iter().filter(|n| n.contains(".q.") || n.contains(".k.")) {
        m.param_mut(n).unwrap().data.iter_mut().for_each(|x| *x = rng.gen_range(-5.0..5.0));
    }
    let after = m.forward_raw(&img).unwrap();
    assert!(close(&after.pose, &before.pose, 1e-12));
    assert!(close(&after.camera, &before.camera, 1e-12));

    // closed form of one encoder block on one token with a zero MLP
    let cfg = RegressorConfig {
        input_size: 8,
        patch_size: 8,
        depth: 1,
        ..RegressorConfig::tiny()
    };
    let mut m = Regressor::<f64>::new(cfg, 1).unwrap();
    perturb(&mut m, &mut rng, 0.3);
    m.param_mut("encoder.0.mlp.fc2.weight").unwrap().data.fill(0.0);
    m.param_mut("encoder.0.mlp.fc2.bias").unwrap().data.fill(0.0);
    let mut tape = Tape::new();
    let p = m.bind(&mut tape);
    let x = m.embed(&mut tape, &p, patchify(&img, 8, 8).unwrap());
    let x0 = tape.value(x).data.clone();
    let y = m.encode(&mut tape, &p, x, &mut Vec::new());
    let o = Oracle(&m);
    let h = o.norm(&x0, "encoder.0.norm1");
    let v = o.linear(&h, "encoder.0.attn.v");
    let a = o.linear(&v, "encoder.0.attn.out");
    let expected: Vec<f64> = x0.iter().zip(&a).map(|(p, q)| p + q).collect();
    assert!(close(&tape.value(y).data, &expected, 1e-12));
}

#[test]
fn attention_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = Regressor::<f64>::new(RegressorConfig::desk(), 0).unwrap();
    perturb(&mut m, &mut rng, 0.5);
    let pass = m.record(&random_image(&mut rng, 32)).unwrap();
    let cfg = m.config();
    assert_eq!(pass.attention.len(), cfg.num_heads * (cfg.depth + cfg.decoder_depth));
    for (i, a) in pass.attention.iter().enumerate() {
        let t = pass.tape.value(*a);
        let rows = if i < cfg.num_heads * cfg.depth { cfg.num_tokens() } else { 1 };
        assert_eq!(t.shape(), (rows, cfg.num_tokens()));
        for r in 0..t.rows {
            assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn untrained_model_emits_head_biases() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for rep in [RotationRep::SixD, RotationRep::AxisAngle] {
        let m = Regressor::<f64>::new(RegressorConfig { rotation: rep, ..RegressorConfig::desk() }, 7).unwrap();
        let raw = m.forward_raw(&random_image(&mut rng, 32)).unwrap();
        assert_eq!(raw.pose, m.param("head.pose.bias").unwrap().data);
        assert_eq!(raw.beta, vec![0.0; 10]);
        assert_eq!(raw.camera, [0.0; 3]);
        let out = raw.decode(m.config()).unwrap();
        assert!(out.rotations.iter().all(|r| *r == Mat3::identity()));
        assert_eq!(out.camera, [6.0, 0.0, 0.0]);
    }
}

#[test]
fn rotation_outputs_are_rotations() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 0..20 {
        let mut m = Regressor::<f64>::new(RegressorConfig::tiny(), seed).unwrap();
        perturb(&mut m, &mut rng, 1.0);
        let out = m.forward(&random_image(&mut rng, 32)).unwrap();
        assert_eq!(out.rotations.len(), 16);
        for r in &out.rotations {
            let e = r.transpose().mul_mat(r) - Mat3::identity();
            assert!(e.to_flat().iter().all(|x| x.abs() < 1e-6));
            assert!((r.det() - 1.0).abs() < 1e-6);
        }
        assert!(out.camera[0] > 0.0);
    }
}

#[test]
fn forward_is_deterministic_and_batch_independent() {
    let asset = bundled_rig::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut m = Regressor::<f64>::new(RegressorConfig::tiny(), 0).unwrap();
    perturb(&mut m, &mut rng, 0.1);
    let img = random_image(&mut rng, 32);
    let (a, b) = (m.forward_raw(&img).unwrap(), m.forward_raw(&img).unwrap());
    assert!(a.pose.iter().zip(&b.pose).all(|(x, y)| x.to_bits() == y.to_bits()));
    let s = samples(&asset, 1, 3, 32).remove(0);
    let g = batch_gradient(&m, &asset, &[s.clone(), s.clone()], None, &LossWeights::default()).unwrap();
    assert_eq!(g.fakes[0], g.fakes[1]);
    let g1 = batch_gradient(&m, &asset, &[s], None, &LossWeights::default()).unwrap();
    assert_eq!(g.grads, g1.grads);
    assert_eq!(g.total, g1.total);
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let asset = bundled_rig::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let size = [16, 32][trial % 2];
        let patch = [4, 8, 16][rng.gen_range(0..3)].min(size);
        let cfg = RegressorConfig {
            input_size: size,
            patch_size: patch,
            embed_dim: [8, 16][rng.gen_range(0..2)],
            depth: rng.gen_range(0..3),
            num_heads: [1, 2, 4][rng.gen_range(0..3)],
            decoder_depth: rng.gen_range(1..3),
            rotation: if rng.gen_bool(0.5) { RotationRep::SixD } else { RotationRep::AxisAngle },
            ..RegressorConfig::tiny()
        };
        let mut m = Regressor::<f64>::new(cfg, trial as u64).unwrap();
        perturb(&mut m, &mut rng, 0.05);
        let bank = DiscriminatorBank::<f64>::new(16, 10, 8, &mut rng);
        let batch = samples(&asset, 2, trial as u64, size);
        let w = LossWeights::default();
        let loss = |m: &Regressor<f64>| batch_gradient(m, &asset, &batch, Some(&bank), &w).unwrap().total;
        let g = batch_gradient(&m, &asset, &batch, Some(&bank), &w).unwrap().grads;

        let n = Normal::new(0.0, 1.0).unwrap();
        let dir: Vec<Vec<f64>> = g.iter().map(|t| t.data.iter().map(|_| n.sample(&mut rng)).collect()).collect();
        let analytic: f64 = g.iter().zip(&dir).flat_map(|(t, d)| t.data.iter().zip(d)).map(|(a, b)| a * b).sum();
        let h = 1e-6;
        let shifted = |sign: f64| {
            let mut q = m.clone();
            for (t, d) in q.params_mut().iter_mut().zip(&dir) {
                t.data.iter_mut().zip(d).for_each(|(x, y)| *x += sign * h * y);
            }
            loss(&q)
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
        let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
        worst = worst.max(rel);
        assert!(rel < 1e-3, "trial {trial}: analytic {analytic} vs fd {fd}");

        // the largest single coordinate
        let (ti, ei) = g
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.data.iter().enumerate().map(move |(e, v)| (i, e, v.abs())))
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .map(|(i, e, _)| (i, e))
            .unwrap();
        let coord = |sign: f64| {
            let mut q = m.clone();
            q.params_mut()[ti].data[ei] += sign * h;
            loss(&q)
        };
        let fd = (coord(1.0) - coord(-1.0)) / (2.0 * h);
        let an = g[ti].data[ei];
        assert!((fd - an).abs() / an.abs() < 1e-3, "trial {trial}: {} {an} vs {fd}", m.param_names()[ti]);
    }
    assert!(worst < 1e-3);
}

#[test]
fn loss_decreases_on_a_fixed_batch() {
    let asset = bundled_rig::<f32>();
    let data: Vec<TrainSample<f32>> = synthesize_dataset(&bundled_rig::<f64>(), 8, 21, &SynthConfig::default())
        .iter()
        .map(|s| TrainSample::from_synthetic(s).unwrap())
        .collect();
    let model = Regressor::<f32>::new(RegressorConfig::desk(), 0).unwrap();
    let mut tr = Trainer::new(model, &asset, TrainConfig::default()).unwrap();
    let mut losses = Vec::new();
    let bank_before = tr.bank.clone().unwrap();
    tr.train(&data, 200, 8, |s| {
        assert!(s.disc_loss.is_some());
        losses.push(s.total - s.adversarial * 0.01);
    })
    .unwrap();
    assert_eq!(tr.steps_taken(), 200);
    assert_ne!(tr.bank.as_ref().unwrap(), &bank_before);
    let first: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let last: f64 = losses[190..].iter().sum::<f64>() / 10.0;
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn trainer_rejects_mismatched_asset() {
    let asset = handmesh::hand_model::synthetic::tiny_rig::<f64>();
    let m = Regressor::<f64>::new(RegressorConfig::tiny(), 0).unwrap();
    assert!(matches!(
        Trainer::new(m, &asset, TrainConfig::default()),
        Err(RegressorError::InvalidConfig(_))
    ));
}

#[test]
fn checkpoint_round_trip_is_exact_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut m = Regressor::<f64>::new(RegressorConfig::tiny(), 3).unwrap();
    perturb(&mut m, &mut rng, 0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path).unwrap();
    let back: Regressor<f64> = load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(checkpoint_to_bytes(&back), std::fs::read(&path).unwrap());

    let m32: Regressor<f32> = m.cast();
    let bytes = checkpoint_to_bytes(&m32);
    assert_eq!(checkpoint_from_bytes::<f32>(&bytes).unwrap(), m32);
    // f32 storage widens exactly
    let wide: Regressor<f64> = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(wide, m32.cast::<f64>());

    let good = checkpoint_to_bytes(&m);
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(checkpoint_from_bytes::<f64>(&bad).unwrap_err().to_string().contains("not a regressor checkpoint"));
    let mut bad = good.clone();
    bad[8] = 2;
    assert!(checkpoint_from_bytes::<f64>(&bad).unwrap_err().to_string().contains("unsupported version 2"));
    assert!(checkpoint_from_bytes::<f64>(&good[..good.len() - 3]).unwrap_err().to_string().contains("truncated"));
    let mut extra = good.clone();
    extra.push(0);
    assert!(checkpoint_from_bytes::<f64>(&extra).is_err());
}
