//! Numerical checks of the tensor tape, transformer stack, optimizer and
//! checkpoints. Gradients are compared against central differences.

use empathia::corpus::EmotionLabel;
use empathia::neural::*;
use empathia::textproc::{assemble_generator_input, EncodedExample, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{grad_check, random_store, tiny_model, toy_example, toy_vocab, REL_TOL};

/// Weighted sum of all outputs through a fixed random projection, turned
/// into a scalar by cross-entropy so every op is exercised by a real loss.
fn reduce(g: &mut Graph, x: NodeId, seed: u64) -> NodeId {
    let (r, c) = g.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..c * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let p = g.input(c, 3, proj);
    let y = g.matmul(x, p);
    let targets: Vec<usize> = (0..r).map(|i| i % 3).collect();
    g.cross_entropy(y, &targets, &vec![true; r], None, Reduction::Mean).unwrap()
}

#[test]
fn gradcheck_each_layer_type() {
    // matmul + add_row + gelu
    let s = random_store(&[("x", 3, 4), ("w", 4, 5), ("b", 1, 5)], 1);
    let e = grad_check(&s, None, |g| {
        let (x, w, b) = (g.param(ParamId::from_index(0)), g.param(ParamId::from_index(1)), g.param(ParamId::from_index(2)));
        let y = g.matmul(x, w);
        let y = g.add_row(y, b);
        let y = g.gelu(y);
        reduce(g, y, 7)
    });
    assert!(e < REL_TOL, "matmul/gelu {e}");

    // matmul_bt + transpose + select_rows + scale + add
    let s = random_store(&[("a", 3, 4), ("b", 5, 4)], 2);
    let e = grad_check(&s, None, |g| {
        let (a, b) = (g.param(ParamId::from_index(0)), g.param(ParamId::from_index(1)));
        let y = g.matmul_bt(a, b);
        let t = g.transpose(y);
        let t = g.select_rows(t, &[4, 0, 2, 2]);
        let u = g.scale(t, 0.5);
        let v = g.add(t, u);
        reduce(g, v, 8)
    });
    assert!(e < REL_TOL, "matmul_bt/transpose {e}");

    // layer norm
    let s = random_store(&[("x", 4, 6), ("g", 1, 6), ("b", 1, 6)], 3);
    let e = grad_check(&s, None, |g| {
        let (x, ga, b) = (g.param(ParamId::from_index(0)), g.param(ParamId::from_index(1)), g.param(ParamId::from_index(2)));
        let y = g.layer_norm(x, ga, b);
        reduce(g, y, 9)
    });
    assert!(e < REL_TOL, "layer norm {e}");

    // gather
    let s = random_store(&[("t", 6, 3)], 4);
    let e = grad_check(&s, None, |g| {
        let t = g.param(ParamId::from_index(0));
        let y = g.gather(t, &[1, 4, 1, 0]);
        reduce(g, y, 10)
    });
    assert!(e < REL_TOL, "gather {e}");

    // attention, both masks
    for causal in [false, true] {
        let s = random_store(&[("qkv", 5, 12)], 5);
        let e = grad_check(&s, None, |g| {
            let q = g.param(ParamId::from_index(0));
            let y = g.attention(q, 2, causal);
            reduce(g, y, 11)
        });
        assert!(e < REL_TOL, "attention causal={causal} {e}");
    }

    // cross-entropy with row and class masks, sum reduction
    let s = random_store(&[("z", 3, 5)], 6);
    let e = grad_check(&s, None, |g| {
        let z = g.param(ParamId::from_index(0));
        g.cross_entropy(z, &[1, 3, 0], &[true, false, true], Some(&[true, true, false, true, true]), Reduction::Sum).unwrap()
    });
    assert!(e < REL_TOL, "cross-entropy {e}");
}

#[test]
fn gradcheck_composed_model() {
    let start = std::time::Instant::now();
    let v = toy_vocab();
    let ex = toy_example(&v);
    let (store, model) = tiny_model(&v, true, 3);
    let e = grad_check(&store, None, |g| {
        let logits = forward_lm(g, &model, &ex).unwrap();
        lm_loss(g, logits, &ex).unwrap()
    });
    println!("composed gradient check: max rel err {e:.3e} in {:?}", start.elapsed());
    assert!(e < REL_TOL, "composed {e}");
}

#[test]
fn unused_embedding_rows_get_zero_gradient() {
    let v = toy_vocab();
    let ex = toy_example(&v);
    let (store, model) = tiny_model(&v, true, 4);
    let mut grads = store.zero_grads();
    let mut g = Graph::new(&store);
    let logits = forward_lm(&mut g, &model, &ex).unwrap();
    let l = lm_loss(&mut g, logits, &ex).unwrap();
    g.backward(l, &mut grads).unwrap();
    let pos = store.id("pos_emb").unwrap();
    let d = store.get(pos).cols;
    assert!(grads.get(pos)[ex.len() * d..].iter().all(|&x| x == 0.0));
}

#[test]
fn gradient_is_linear_in_loss_scale() {
    let v = toy_vocab();
    let ex = toy_example(&v);
    let (store, model) = tiny_model(&v, true, 5);
    let mut g = Graph::new(&store);
    let logits = forward_lm(&mut g, &model, &ex).unwrap();
    let l = lm_loss(&mut g, logits, &ex).unwrap();
    let mut g1 = store.zero_grads();
    let mut g3 = store.zero_grads();
    g.backward(l, &mut g1).unwrap();
    g.backward_scaled(l, 3.0, &mut g3).unwrap();
    for (a, b) in g1.buffers().iter().flatten().zip(g3.buffers().iter().flatten()) {
        assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn backward_without_forward_fails() {
    let store = ParamStore::new();
    let mut other = Graph::new(&store);
    let x = other.input(1, 1, vec![1.0]);
    let empty = Graph::new(&store);
    let mut grads = store.zero_grads();
    assert!(matches!(empty.backward(x, &mut grads), Err(empathia::Error::NoForward)));
}

#[test]
fn embedding_properties() {
    let v = toy_vocab();
    let ex = toy_example(&v);
    let (mut store, model) = tiny_model(&v, true, 6);
    for p in store.iter_mut() {
        p.data.iter_mut().for_each(|x| *x = 0.0);
    }
    let mut g = Graph::new(&store);
    let e = model.embed(&mut g, &ex.token_ids, &ex.speaker_ids).unwrap();
    assert!(g.value(e).iter().all(|&x| x == 0.0));

    // one nonzero token row appears exactly where that token occurs
    let tok = store.id("tok_emb").unwrap();
    let target = ex.token_ids[3] as usize;
    store.get_mut(tok).data[target * 8] = 1.0;
    let mut g = Graph::new(&store);
    let e = model.embed(&mut g, &ex.token_ids, &ex.speaker_ids).unwrap();
    for (t, &id) in ex.token_ids.iter().enumerate() {
        let row = &g.value(e)[t * 8..(t + 1) * 8];
        let want = if id as usize == target { 1.0 } else { 0.0 };
        assert_eq!(row[0], want);
        assert!(row[1..].iter().all(|&x| x == 0.0));
    }

    // speaker ids matter only once the speaker table is nonzero
    let mut flipped = ex.speaker_ids.clone();
    flipped.iter_mut().for_each(|s| *s = (*s + 1) % 3);
    let run = |s: &ParamStore, spk: &[u8]| {
        let mut g = Graph::new(s);
        let e = model.embed(&mut g, &ex.token_ids, spk).unwrap();
        g.value(e).to_vec()
    };
    assert_eq!(run(&store, &ex.speaker_ids), run(&store, &flipped));
    let spk = store.id("spk_emb").unwrap();
    store.get_mut(spk).data[3] = 0.5;
    assert_ne!(run(&store, &ex.speaker_ids), run(&store, &flipped));

    let mut g = Graph::new(&store);
    assert!(model.embed(&mut g, &[9999], &[0]).is_err());
    assert!(model.embed(&mut g, &vec![0; 65], &vec![0; 65]).is_err());
}

#[test]
fn attention_weight_properties() {
    let empty = ParamStore::new();
    let mut g = Graph::new(&empty);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let len = 4;
    let x: Vec<f64> = (0..len * 12).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let qkv = g.input(len, 12, x.clone());
    for causal in [false, true] {
        let a = g.attention(qkv, 2, causal);
        let probs = g.attention_probs(a).unwrap();
        for h in 0..2 {
            for t in 0..len {
                let row = &probs[(h * len + t) * len..(h * len + t + 1) * len];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                if causal {
                    assert!(row[t + 1..].iter().all(|&p| p == 0.0));
                    assert!(row[..=t].iter().all(|&p| p > 0.0));
                }
            }
        }
    }

    // single token: output is its value vector
    let one = g.input(1, 12, x[..12].to_vec());
    let a = g.attention(one, 2, true);
    assert_eq!(g.value(a), &x[8..12]);

    // constant queries and keys: uniform weights over allowed positions
    let mut flat = vec![0.0; 3 * 12];
    for t in 0..3 {
        for j in 0..8 {
            flat[t * 12 + j] = 0.3;
        }
    }
    let c = g.input(3, 12, flat);
    let a = g.attention(c, 2, true);
    let probs = g.attention_probs(a).unwrap();
    for t in 0..3 {
        for s in 0..=t {
            assert!((probs[t * 3 + s] - 1.0 / (t + 1) as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_determinism_and_causality() {
    let v = toy_vocab();
    let ex = toy_example(&v);
    let (store, model) = tiny_model(&v, true, 9);
    let run = |tokens: &[u32]| {
        let mut g = Graph::new(&store);
        let h = model.forward(&mut g, tokens, &ex.speaker_ids).unwrap();
        let l = model.lm_head(&mut g, h);
        g.value(l).to_vec()
    };
    let a = run(&ex.token_ids);
    assert_eq!(a, run(&ex.token_ids));
    let n = ex.len();
    let mut perm = ex.token_ids.clone();
    perm.swap(n - 1, n - 2);
    let b = run(&perm);
    let cut = (n - 2) * v.len();
    assert_eq!(a[..cut], b[..cut]);
    assert_ne!(a[cut..], b[cut..]);

    let (store, enc) = tiny_model(&v, false, 9);
    let run = |tokens: &[u32]| {
        let mut g = Graph::new(&store);
        let h = enc.forward(&mut g, tokens, &ex.speaker_ids).unwrap();
        g.value(h).to_vec()
    };
    let a = run(&ex.token_ids);
    let b = run(&perm);
    let d = 8;
    for t in 0..n {
        assert_ne!(a[t * d..(t + 1) * d], b[t * d..(t + 1) * d], "position {t} unaffected");
    }
}

#[test]
fn cross_entropy_reference_values() {
    let empty = ParamStore::new();
    let mut g = Graph::new(&empty);
    let v = 37;
    let z = g.input(2, v, vec![0.0; 2 * v]);
    let l = g.cross_entropy(z, &[3, 5], &[true, true], None, Reduction::Mean).unwrap();
    assert!((g.scalar(l) - (v as f64).ln()).abs() < 1e-12);

    let mut big = vec![0.0; v];
    big[4] = 100.0;
    let z = g.input(1, v, big);
    let l = g.cross_entropy(z, &[4], &[true], None, Reduction::Mean).unwrap();
    assert!(g.scalar(l) < 1e-12);

    // masking a wrong prediction leaves the loss at the remaining row
    let mut rows = vec![0.0; 2 * v];
    rows[4] = 100.0;
    rows[v + 1] = 100.0;
    let z = g.input(2, v, rows);
    let l = g.cross_entropy(z, &[4, 9], &[true, false], None, Reduction::Mean).unwrap();
    assert!(g.scalar(l) < 1e-12);
    assert!(g.cross_entropy(z, &[4, 9], &[false, false], None, Reduction::Mean).is_err());
}

fn batch(v: &Vocabulary) -> Vec<EncodedExample> {
    let qs = ["i feel sad", "we broke up", "i feel sad today", "oh dear"];
    let rs = ["oh dear .", "that hurts .", "oh dear that hurts", "we broke up"];
    qs.iter()
        .zip(rs)
        .map(|(q, r)| assemble_generator_input(v, &[], q, EmotionLabel::Sad, None, Some(r), 64).unwrap())
        .collect()
}

fn batch_grads(store: &ParamStore, model: &Transformer, exs: &[EncodedExample]) -> (Gradients, f64) {
    let mut grads = store.zero_grads();
    let mut total = 0.0;
    for ex in exs {
        let mut g = Graph::new(store);
        let logits = forward_lm(&mut g, model, ex).unwrap();
        let l = lm_loss(&mut g, logits, ex).unwrap();
        total += g.backward_scaled(l, 1.0 / exs.len() as f64, &mut grads).unwrap();
    }
    (grads, total / exs.len() as f64)
}

#[test]
fn accumulation_matches_union_batch() {
    let v = toy_vocab();
    let exs = batch(&v);
    let (store, model) = tiny_model(&v, true, 10);
    let cfg = AdamWConfig {
        accumulation: 2,
        schedule: LrSchedule::new(0, 1e-2),
        ..AdamWConfig::default()
    };
    let mut acc_store = store.clone();
    let mut opt = AdamW::new(&acc_store, cfg).unwrap();
    let (g1, _) = batch_grads(&acc_store, &model, &exs[..2]);
    let (g2, _) = batch_grads(&acc_store, &model, &exs[2..]);
    assert!(!opt.micro_step(&mut acc_store, &g1).unwrap());
    assert!(opt.micro_step(&mut acc_store, &g2).unwrap());

    let mut union_store = store.clone();
    let mut opt1 = AdamW::new(&union_store, AdamWConfig { accumulation: 1, ..cfg }).unwrap();
    let (g, _) = batch_grads(&union_store, &model, &exs);
    assert!(opt1.micro_step(&mut union_store, &g).unwrap());
    for (a, b) in acc_store.iter().zip(union_store.iter()) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

fn train(store: &mut ParamStore, model: &Transformer, opt: &mut AdamW, exs: &[EncodedExample], steps: usize) -> Vec<f64> {
    let mut losses = Vec::new();
    for _ in 0..steps {
        let (g, l) = batch_grads(store, model, exs);
        losses.push(l);
        opt.micro_step(store, &g).unwrap();
    }
    losses
}

#[test]
fn full_batch_descent_is_monotone() {
    let v = toy_vocab();
    let exs = batch(&v);
    let (mut store, model) = tiny_model(&v, true, 11);
    let cfg = AdamWConfig {
        accumulation: 1,
        weight_decay: 0.0,
        schedule: LrSchedule::new(0, 1e-3),
        ..AdamWConfig::default()
    };
    let mut opt = AdamW::new(&store, cfg).unwrap();
    let losses = train(&mut store, &model, &mut opt, &exs, 50);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
    }
    assert!(losses[49] < losses[0]);
}

#[test]
fn seeded_training_is_bitwise_reproducible() {
    let v = toy_vocab();
    let exs = batch(&v);
    let run = || {
        let (mut store, model) = tiny_model(&v, true, 12);
        let mut opt = AdamW::new(&store, AdamWConfig { accumulation: 1, ..AdamWConfig::default() }).unwrap();
        train(&mut store, &model, &mut opt, &exs, 5);
        store
    };
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(b.iter()) {
        assert!(x.data.iter().zip(&y.data).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn checkpoint_roundtrips() {
    let v = toy_vocab();
    let exs = batch(&v);
    let (mut store, model) = tiny_model(&v, true, 13);
    let cfg = AdamWConfig { accumulation: 1, ..AdamWConfig::default() };
    let mut opt = AdamW::new(&store, cfg).unwrap();
    train(&mut store, &model, &mut opt, &exs, 3);

    for dtype in [DType::F32, DType::F64] {
        let w = CheckpointWriter {
            kind: "test",
            model: model.config(),
            vocab: &v,
            params: &store,
            optimizer: Some(&opt),
            extra: serde_json::json!({"note": 1}),
            dtype,
        };
        let bytes = w.encode();
        assert_eq!(&bytes[..8], MAGIC);
        let ck = decode_checkpoint(&bytes, Some(&v)).unwrap();
        assert_eq!(ck.header.step, 3);
        let again = CheckpointWriter {
            params: &ck.params,
            optimizer: ck.optimizer.as_ref(),
            ..w
        }
        .encode();
        assert_eq!(bytes, again, "{dtype:?}");
        if dtype == DType::F64 {
            assert_eq!(ck.params, store);
            assert_eq!(ck.optimizer.as_ref(), Some(&opt));
        }
    }

    let other = Vocabulary::build(["something else entirely"], 100).unwrap();
    let bytes = CheckpointWriter {
        kind: "test",
        model: model.config(),
        vocab: &v,
        params: &store,
        optimizer: None,
        extra: serde_json::Value::Null,
        dtype: DType::F32,
    }
    .encode();
    assert!(matches!(decode_checkpoint(&bytes, Some(&other)), Err(empathia::Error::Checkpoint(_))));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1], None).is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let v = toy_vocab();
    let exs = batch(&v);
    let cfg = AdamWConfig { accumulation: 2, schedule: LrSchedule::new(3, 5e-3), ..AdamWConfig::default() };

    let (mut straight, model) = tiny_model(&v, true, 14);
    let mut opt = AdamW::new(&straight, cfg).unwrap();
    train(&mut straight, &model, &mut opt, &exs, 9);

    let (mut first, model) = tiny_model(&v, true, 14);
    let mut opt = AdamW::new(&first, cfg).unwrap();
    train(&mut first, &model, &mut opt, &exs, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    CheckpointWriter {
        kind: "test",
        model: model.config(),
        vocab: &v,
        params: &first,
        optimizer: Some(&opt),
        extra: serde_json::Value::Null,
        dtype: DType::F64,
    }
    .save(&path)
    .unwrap();
    let ck = load_checkpoint(&path, Some(&v)).unwrap();
    let mut resumed = ck.params;
    let model = Transformer::bind(ck.header.model, &resumed, "").unwrap();
    let mut opt = ck.optimizer.unwrap();
    assert_eq!(opt.pending_micro_batches(), 1);
    train(&mut resumed, &model, &mut opt, &exs, 4);
    assert_eq!(resumed, straight);
}
