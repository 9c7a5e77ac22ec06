use asd_core::model::{DraftSpec, Model, ModelConfig};
use asd_core::modelio::make_toy_model;
use asd_core::specdec::{draft_step, generate, DraftExitPolicy, GenerationConfig, SessionRng, SpecError};
use asd_core::tensor::{argmax, row_softmax};
use asd_core::AdmgParams;

fn model(layers: usize, hidden: usize, vocab: usize, eos: Option<u32>, seed: u64) -> Model {
    let cfg = ModelConfig {
        num_layers: layers,
        hidden_size: hidden,
        num_heads: 4,
        mlp_dim: hidden * 2,
        vocab_size: vocab,
        max_seq_len: 96,
        eos_token: eos,
        ..ModelConfig::default()
    };
    Model::new(cfg.clone(), make_toy_model(&cfg, seed)).unwrap()
}

fn prompt(seed: u64, len: usize, vocab: usize) -> Vec<u32> {
    let mut r = SessionRng::new(seed);
    (0..len).map(|_| (r.next_uniform() * vocab as f64) as u32).collect()
}

fn vanilla(m: &Model, p: &[u32], max_new: usize, t: f32, seed: u64) -> Vec<u32> {
    let cfg = GenerationConfig { speculative: false, max_new_tokens: max_new, temperature: t, seed, ..Default::default() };
    generate(m, p, &cfg).unwrap().tokens
}

#[test]
fn greedy_output_matches_vanilla_for_many_specs() {
    let m = model(6, 32, 64, None, 11);
    let specs = [
        None,
        Some(DraftSpec::full()),
        Some(DraftSpec::remove_all(6)),
        Some(DraftSpec::new([1, 2, 3], [2]).unwrap()),
        Some(DraftSpec::new([6], [6]).unwrap()),
    ];
    for i in 0..20 {
        let p = prompt(i, 1 + i as usize % 9, 64);
        let want = vanilla(&m, &p, 30, 0.0, 0);
        assert_eq!(want.len(), 30);
        for spec in &specs {
            for exit in [DraftExitPolicy::default(), DraftExitPolicy::fixed(1), DraftExitPolicy::fixed(5)] {
                let cfg = GenerationConfig {
                    max_new_tokens: 30,
                    draft_override: spec.clone(),
                    draft_exit: exit,
                    admg: AdmgParams { alpha: 0.5, m: 2, n: 1 },
                    seed: i,
                    ..Default::default()
                };
                let got = generate(&m, &p, &cfg).unwrap();
                assert_eq!(got.tokens, want, "prompt {i} spec {spec:?}");
            }
        }
    }
}

#[test]
fn full_model_draft_is_always_accepted() {
    let m = model(4, 32, 64, None, 2);
    let cfg = GenerationConfig { max_new_tokens: 40, draft_override: Some(DraftSpec::full()), ..Default::default() };
    let out = generate(&m, &prompt(3, 5, 64), &cfg).unwrap();
    assert!(out.metrics.draft_proposed > 0);
    assert_eq!(out.metrics.acceptance_rate, Some(1.0));
    assert!(out.metrics.rounds <= 40);
}

#[test]
fn cache_matches_recomputation() {
    let m = model(4, 32, 64, None, 5);
    for i in 0..5 {
        let p = prompt(100 + i, 6, 64);
        for t in [0.0, 0.9] {
            let cfg = GenerationConfig { max_new_tokens: 25, temperature: t, seed: i, ..Default::default() };
            let out = generate(&m, &p, &cfg).unwrap();
            let mut seq = p.clone();
            seq.extend_from_slice(&out.tokens[..out.tokens.len() - 1]);
            assert_eq!(out.target_cache.len(), seq.len());
            let mut fresh = m.new_cache();
            m.forward(&seq, &mut fresh, &DraftSpec::full(), None).unwrap();
            let diff = fresh.max_abs_diff(&out.target_cache, |_| true).unwrap();
            assert!(diff <= 1e-4, "diff {diff}");
        }
    }
}

#[test]
fn eos_stops_both_paths_identically() {
    // vocab small enough that EOS shows up quickly
    let m = model(4, 32, 8, Some(3), 9);
    let mut saw_early_stop = false;
    for i in 0..30 {
        let p = prompt(i, 4, 8);
        let want = vanilla(&m, &p, 40, 0.0, 0);
        let cfg = GenerationConfig { max_new_tokens: 40, draft_override: Some(DraftSpec::remove_all(4)), ..Default::default() };
        let got = generate(&m, &p, &cfg).unwrap();
        assert_eq!(got.tokens, want);
        if want.len() < 40 {
            saw_early_stop = true;
            assert_eq!(*want.last().unwrap(), 3);
            assert_eq!(got.target_cache.len(), p.len() + want.len() - 1);
        }
    }
    assert!(saw_early_stop);
}

#[test]
fn draft_step_behaviour() {
    let m = model(4, 32, 64, None, 4);
    let p = prompt(1, 5, 64);
    let mut c = m.new_cache();
    let logits = m.forward(&p, &mut c, &DraftSpec::full(), None).unwrap();
    let last = argmax(logits.row(p.len() - 1)).unwrap() as u32;

    let mut rng = SessionRng::new(0);
    let mut dc = c.clone();
    let d = draft_step(&m, &mut dc, &DraftSpec::full(), last, 0.0, &mut rng).unwrap();
    let mut mc = c.clone();
    let full = m.forward(&[last], &mut mc, &DraftSpec::full(), None).unwrap();
    assert_eq!(d.token as usize, argmax(full.row(0)).unwrap());
    assert_eq!(dc.len(), c.len() + 1);
    let p_full = row_softmax(full.row(0), 0.0).unwrap();
    assert_eq!(d.dist, p_full);

    let q = draft_step(&m, &mut c.clone(), &DraftSpec::full(), last, 0.8, &mut SessionRng::new(3)).unwrap();
    let want = row_softmax(full.row(0), 0.8).unwrap();
    for (a, b) in q.dist.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-5);
    }
    let again = draft_step(&m, &mut c.clone(), &DraftSpec::full(), last, 0.8, &mut SessionRng::new(3)).unwrap();
    assert_eq!(q, again);
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let m = model(4, 32, 64, None, 8);
    let p = prompt(5, 5, 64);
    let cfg = GenerationConfig { max_new_tokens: 20, temperature: 1.0, seed: 42, ..Default::default() };
    let a = generate(&m, &p, &cfg).unwrap().tokens;
    let b = generate(&m, &p, &cfg).unwrap().tokens;
    assert_eq!(a, b);
}

#[test]
fn rejects_bad_requests() {
    let m = model(4, 32, 64, None, 1);
    let cfg = GenerationConfig { max_new_tokens: 10, ..Default::default() };
    assert_eq!(generate(&m, &[], &cfg).unwrap_err(), SpecError::EmptyPrompt);
    let long = vec![1u32; 90];
    assert!(matches!(generate(&m, &long, &cfg), Err(SpecError::Capacity { needed: 100, capacity: 96 })));
    let zero = GenerationConfig { max_new_tokens: 0, ..Default::default() };
    assert!(generate(&m, &[1], &zero).is_err());
    let bad_spec = GenerationConfig { draft_override: Some(DraftSpec::remove_all(5)), ..cfg.clone() };
    assert!(generate(&m, &[1], &bad_spec).is_err());
}

#[test]
fn single_token_budget_and_metrics() {
    let m = model(4, 32, 64, None, 1);
    let p = prompt(2, 3, 64);
    let cfg = GenerationConfig { max_new_tokens: 1, ..Default::default() };
    let out = generate(&m, &p, &cfg).unwrap();
    assert_eq!(out.tokens, vanilla(&m, &p, 1, 0.0, 0));
    assert_eq!(out.metrics.draft_proposed, 0);
    assert_eq!(out.metrics.acceptance_rate, None);
    assert_eq!(out.metrics.tokens_generated, 1);

    let cfg = GenerationConfig { max_new_tokens: 17, draft_exit: DraftExitPolicy::fixed(4), ..Default::default() };
    let out = generate(&m, &p, &cfg).unwrap();
    let mm = &out.metrics;
    assert_eq!(mm.tokens_generated, 17);
    assert!(mm.draft_accepted <= mm.draft_proposed);
    // every round yields its accepted drafts plus exactly one token from the full model
    assert_eq!(mm.tokens_generated, 1 + mm.draft_accepted + mm.rounds);
    assert!(mm.tokens_per_sec > 0.0);
    assert_eq!(out.acs.len(), 4);
}
