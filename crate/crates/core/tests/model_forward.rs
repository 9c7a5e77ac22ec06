use asd_core::model::{DraftSpec, Model, ModelConfig, ModelError, ResidualTap, Sublayer, Weights};
use asd_core::modelio::make_toy_model;
use asd_core::tensor::cosine_sim;

fn config() -> ModelConfig {
    ModelConfig {
        num_layers: 3,
        hidden_size: 16,
        num_heads: 4,
        mlp_dim: 24,
        vocab_size: 40,
        max_seq_len: 32,
        eos_token: None,
        ..ModelConfig::default()
    }
}

fn model(seed: u64) -> Model {
    let cfg = config();
    Model::new(cfg.clone(), make_toy_model(&cfg, seed)).unwrap()
}

/// Straight-line f64 decoder over a whole sequence, no cache. Returns logits
/// per position and, per layer, the pre-attention rows and attention outputs.
struct Reference {
    logits: Vec<Vec<f64>>,
    attn: Vec<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

fn vecmat(x: &[f64], w: &asd_core::tensor::Matrix) -> Vec<f64> {
    (0..w.cols()).map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j) as f64).sum()).collect()
}

fn norm(x: &[f64], g: &[f32], eps: f32) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let s = 1.0 / (ms + eps as f64).sqrt();
    x.iter().zip(g).map(|(v, g)| v * s * *g as f64).collect()
}

fn rope(v: &mut [f64], pos: usize, cfg: &ModelConfig) {
    let hd = cfg.head_dim();
    for head in v.chunks_mut(hd) {
        for i in 0..hd / 2 {
            let freq = (cfg.rope_theta as f64).powf(-2.0 * i as f64 / hd as f64);
            let (s, c) = (pos as f64 * freq).sin_cos();
            let (a, b) = (head[2 * i], head[2 * i + 1]);
            head[2 * i] = a * c - b * s;
            head[2 * i + 1] = a * s + b * c;
        }
    }
}

fn reference(cfg: &ModelConfig, w: &Weights, tokens: &[u32]) -> Reference {
    let (h, hd) = (cfg.hidden_size, cfg.head_dim());
    let mut hs: Vec<Vec<f64>> =
        tokens.iter().map(|&t| w.tok_embed.row(t as usize).iter().map(|v| *v as f64).collect()).collect();
    let mut attn_record = Vec::new();
    for lw in &w.layers {
        let normed: Vec<Vec<f64>> = hs.iter().map(|x| norm(x, &lw.attn_norm, cfg.norm_eps)).collect();
        let mut q: Vec<Vec<f64>> = normed.iter().map(|x| vecmat(x, &lw.wq)).collect();
        let mut k: Vec<Vec<f64>> = normed.iter().map(|x| vecmat(x, &lw.wk)).collect();
        let v: Vec<Vec<f64>> = normed.iter().map(|x| vecmat(x, &lw.wv)).collect();
        for p in 0..tokens.len() {
            rope(&mut q[p], p, cfg);
            rope(&mut k[p], p, cfg);
        }
        let mut outs = Vec::new();
        for p in 0..tokens.len() {
            let mut o = vec![0.0; h];
            for head in 0..cfg.num_heads {
                let r = head * hd..(head + 1) * hd;
                let scores: Vec<f64> = (0..=p)
                    .map(|t| q[p][r.clone()].iter().zip(&k[t][r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
                let z: f64 = e.iter().sum();
                for t in 0..=p {
                    for d in r.clone() {
                        o[d] += e[t] / z * v[t][d];
                    }
                }
            }
            outs.push(vecmat(&o, &lw.wo));
        }
        attn_record.push((hs.clone(), outs.clone()));
        for (x, o) in hs.iter_mut().zip(&outs) {
            for (a, b) in x.iter_mut().zip(o) {
                *a += b;
            }
        }
        for x in hs.iter_mut() {
            let n = norm(x, &lw.mlp_norm, cfg.norm_eps);
            let g = vecmat(&n, &lw.w_gate);
            let u = vecmat(&n, &lw.w_up);
            let a: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            let d = vecmat(&a, &lw.w_down);
            for (xv, dv) in x.iter_mut().zip(&d) {
                *xv += dv;
            }
        }
    }
    let logits = hs.iter().map(|x| vecmat(&norm(x, &w.final_norm, cfg.norm_eps), &w.lm_head)).collect();
    Reference { logits, attn: attn_record }
}

fn assert_close(a: &[f32], b: &[f64], tol: f64) {
    for (x, y) in a.iter().zip(b) {
        assert!((*x as f64 - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn full_forward_matches_reference() {
    let m = model(1);
    let tokens = [3u32, 17, 5, 39, 0, 12, 8];
    let mut cache = m.new_cache();
    let logits = m.forward(&tokens, &mut cache, &DraftSpec::full(), None).unwrap();
    let r = reference(m.config(), m.weights(), &tokens);
    for (p, row) in r.logits.iter().enumerate() {
        assert_close(logits.row(p), row, 1e-4);
    }
    assert_eq!(cache.len(), tokens.len());
}

#[test]
fn everything_removed_is_embedding_then_head() {
    let m = model(2);
    let cfg = m.config().clone();
    let tokens = [1u32, 2, 30];
    let mut cache = m.new_cache();
    let logits = m.forward(&tokens, &mut cache, &DraftSpec::remove_all(cfg.num_layers), None).unwrap();
    for (p, &t) in tokens.iter().enumerate() {
        let emb: Vec<f64> = m.weights().tok_embed.row(t as usize).iter().map(|v| *v as f64).collect();
        let want = vecmat(&norm(&emb, &m.weights().final_norm, cfg.norm_eps), &m.weights().lm_head);
        assert_close(logits.row(p), &want, 1e-5);
    }
}

#[test]
fn incremental_equals_parallel() {
    let m = model(3);
    let tokens = [4u32, 9, 9, 21, 33, 2, 7, 18];
    for spec in [DraftSpec::full(), DraftSpec::new([2], [2]).unwrap()] {
        let mut parallel = m.new_cache();
        let all = m.forward(&tokens, &mut parallel, &spec, None).unwrap();
        let mut step = m.new_cache();
        let mut last = None;
        for t in tokens {
            last = Some(m.forward(&[t], &mut step, &spec, None).unwrap());
        }
        let last = last.unwrap();
        assert_eq!(last.row(0), all.row(tokens.len() - 1));
        assert_eq!(parallel, step);
    }
}

#[test]
fn truncate_semantics() {
    let m = model(4);
    let tokens: Vec<u32> = (0..10).map(|i| (i * 7 % 40) as u32).collect();
    let spec = DraftSpec::full();

    let mut c = m.new_cache();
    let first = m.forward(&tokens, &mut c, &spec, None).unwrap();
    let before = c.clone();
    c.truncate(c.len()).unwrap();
    assert_eq!(c, before);

    c.truncate(7).unwrap();
    assert_eq!(c.len(), 7);
    let replay = m.forward(&tokens[7..], &mut c, &spec, None).unwrap();
    for r in 0..3 {
        for (a, b) in replay.row(r).iter().zip(first.row(7 + r)) {
            assert!((a - b).abs() <= 1e-5);
        }
    }
    assert_eq!(c.keys(1), before.keys(1));

    c.truncate(0).unwrap();
    let again = m.forward(&tokens, &mut c, &spec, None).unwrap();
    assert_eq!(again, first);

    assert!(matches!(c.truncate(11), Err(ModelError::Truncate { new_len: 11, len: 10 })));
}

#[test]
fn capacity_and_vocab_errors() {
    let m = model(5);
    let mut c = m.new_cache();
    let too_long = vec![1u32; 33];
    assert!(matches!(m.forward(&too_long, &mut c, &DraftSpec::full(), None), Err(ModelError::Capacity { .. })));
    assert!(matches!(
        m.forward(&[40], &mut c, &DraftSpec::full(), None),
        Err(ModelError::TokenOutOfRange { token: 40, vocab: 40 })
    ));
    assert!(matches!(
        m.forward(&[1], &mut c, &DraftSpec::new([4], []).unwrap(), None),
        Err(ModelError::LayerIndex { layer: 4, .. })
    ));
    assert!(c.is_empty());
}

#[test]
fn skipping_a_layer_leaves_earlier_caches_alone() {
    let m = model(6);
    let tokens = [5u32, 6, 7, 8];
    let mut full = m.new_cache();
    m.forward(&tokens, &mut full, &DraftSpec::full(), None).unwrap();
    let mut skip = m.new_cache();
    m.forward(&tokens, &mut skip, &DraftSpec::new([3], [3]).unwrap(), None).unwrap();
    for l in 1..3 {
        assert_eq!(full.keys(l), skip.keys(l));
        assert_eq!(full.values(l), skip.values(l));
    }
}

#[test]
fn prefill_is_deterministic() {
    let m = model(7);
    let tokens = [11u32, 22, 33, 1, 2];
    let mut a = m.new_cache();
    let mut b = m.new_cache();
    m.forward(&tokens, &mut a, &DraftSpec::full(), None).unwrap();
    m.forward(&tokens, &mut b, &DraftSpec::full(), None).unwrap();
    assert_eq!(a, b);
}

#[derive(Default)]
struct Recorder(Vec<(Sublayer, usize, Vec<f32>, Vec<f32>)>);

impl ResidualTap for Recorder {
    fn observe(&mut self, s: Sublayer, l: usize, x: &[f32], y: &[f32]) {
        self.0.push((s, l, x.to_vec(), y.to_vec()));
    }
}

#[test]
fn tap_sees_residual_identity() {
    let m = model(8);
    let tokens = [3u32, 1, 4, 1, 5, 9];
    let mut cache = m.new_cache();
    let mut rec = Recorder::default();
    m.forward(&tokens, &mut cache, &DraftSpec::full(), Some(&mut rec)).unwrap();
    let r = reference(m.config(), m.weights(), &tokens);
    let attn: Vec<_> = rec.0.iter().filter(|o| o.0 == Sublayer::Attention).collect();
    assert_eq!(attn.len(), 3 * tokens.len());
    for (layer_idx, (xs, outs)) in r.attn.iter().enumerate() {
        for p in 0..tokens.len() {
            let (_, l, x, y) = attn[layer_idx * tokens.len() + p];
            assert_eq!(*l, layer_idx + 1);
            assert_close(x, &xs[p], 1e-5);
            let want: Vec<f64> = xs[p].iter().zip(&outs[p]).map(|(a, b)| a + b).collect();
            assert_close(y, &want, 1e-5);
        }
    }
    assert_eq!(rec.0.iter().filter(|o| o.0 == Sublayer::Mlp).count(), 3 * tokens.len());
}

#[test]
fn removed_layers_tap_identical_pairs() {
    let m = model(9);
    let tokens = [2u32, 4, 6];
    let mut cache = m.new_cache();
    let mut rec = Recorder::default();
    let spec = DraftSpec::new([1, 3], [3]).unwrap();
    m.forward(&tokens, &mut cache, &spec, Some(&mut rec)).unwrap();
    assert_eq!(rec.0.len(), 2 * 3 * tokens.len());
    for (s, l, x, y) in &rec.0 {
        let removed = match s {
            Sublayer::Attention => spec.removes_attn(*l),
            Sublayer::Mlp => spec.removes_mlp(*l),
        };
        if removed {
            assert_eq!(x, y);
            assert_eq!(cosine_sim(x, y).unwrap(), 1.0);
        }
    }
}
