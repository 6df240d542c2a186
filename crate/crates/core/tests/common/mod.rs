//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use empathia::corpus::{EmotionLabel, Speaker, Utterance};
use empathia::neural::*;
use empathia::textproc::{assemble_generator_input, EncodedExample, Vocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Compare analytic gradients of `loss` with central differences on up to
/// `per_param` coordinates of every parameter (all when `None`).
pub fn grad_check(store: &ParamStore, per_param: Option<usize>, loss: impl Fn(&mut Graph) -> NodeId) -> f64 {
    let mut grads = store.zero_grads();
    {
        let mut g = Graph::new(store);
        let l = loss(&mut g);
        g.backward(l, &mut grads).unwrap();
    }
    let eval = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let l = loss(&mut g);
        g.scalar(l)
    };
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).data.len();
        let coords: Vec<usize> = match per_param {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for j in coords {
            let orig = work.get(id).data[j];
            work.get_mut(id).data[j] = orig + H;
            let up = eval(&work);
            work.get_mut(id).data[j] = orig - H;
            let down = eval(&work);
            work.get_mut(id).data[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let analytic = grads.get(id)[j];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    worst
}

pub fn random_store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        s.add(name, r, c, Init::Normal(0.7), true, &mut rng);
    }
    s
}


pub fn toy_vocab() -> Vocabulary {
    Vocabulary::build(["i feel sad today because we broke up . oh dear that hurts"], 100).unwrap()
}

pub fn toy_example(v: &Vocabulary) -> EncodedExample {
    let hist = [Utterance::new(Speaker::User, "i feel sad", 0), Utterance::new(Speaker::Bot, "oh dear", 1)];
    assemble_generator_input(v, &hist, "we broke up", EmotionLabel::Sad, Some("broke up"), Some("that hurts ."), 64).unwrap()
}

pub fn tiny_model(v: &Vocabulary, causal: bool, seed: u64) -> (ParamStore, Transformer) {
    let cfg = ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        vocab_size: v.len(),
        max_len: 64,
        dropout_p: 0.0,
        causal,
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = Transformer::init(cfg, &mut store, "", &mut rng).unwrap();
    // Larger weights than the 0.02 init keep gradients well above the FD noise floor.
    for p in store.iter_mut() {
        for x in p.data.iter_mut() {
            *x += rng.gen_range(-0.3..0.3);
        }
    }
    (store, t)
}

