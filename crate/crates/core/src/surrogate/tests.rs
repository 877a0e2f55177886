use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::dataset::{build_sequences, generate_synthetic, SplitSpec, SyntheticSpec};
use crate::model::mean_loss;
use crate::vecops::{dot, norm};

fn seq(history: Vec<usize>, target: usize) -> UserSequence {
    UserSequence {
        user_id: "u".into(),
        history,
        target,
        timestamp: 0,
        position: 1,
    }
}

fn random_case(rng: &mut ChaCha8Rng, convex: bool) -> (SurrogateParams, UserSequence) {
    let n_items = rng.gen_range(2..8);
    let dim = rng.gen_range(1..5);
    let cfg = SurrogateConfig {
        embed_dim: dim,
        convex_mode: convex,
        init_scale: 0.8,
        seed: rng.gen(),
    };
    let params = SurrogateParams::init(n_items, &cfg).unwrap();
    let len = rng.gen_range(1..5);
    let history = (0..len).map(|_| rng.gen_range(0..n_items)).collect();
    (params, seq(history, rng.gen_range(0..n_items)))
}

/// Central differences of the loss, one coordinate at a time.
fn fd_gradient(p: &SurrogateParams, s: &UserSequence, h: f64) -> Vec<f64> {
    let theta = p.learnable();
    let mut q = p.clone();
    (0..theta.len())
        .map(|k| {
            let mut t = theta.clone();
            t[k] += h;
            q.set_learnable(&t);
            let up = q.loss(s);
            t[k] -= 2.0 * h;
            q.set_learnable(&t);
            let down = q.loss(s);
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[test]
fn zero_output_table_gives_uniform_loss() {
    let mut p = SurrogateParams::init(7, &SurrogateConfig::default()).unwrap();
    let tl = p.table_len();
    p.theta[tl..].iter_mut().for_each(|x| *x = 0.0);
    let l = p.loss(&seq(vec![1, 2], 3));
    assert_eq!(l, (7.0f64).ln());
}

#[test]
fn hand_computed_three_item_loss() {
    // u = (0.5, 0.5); z = (1, 1, -1)
    let p = SurrogateParams {
        theta: vec![1.0, 0.0, 0.0, 1.0, 9.0, 9.0, 1.0, 1.0, 2.0, 0.0, 0.0, -2.0],
        n_items: 3,
        dim: 2,
        convex_mode: false,
    };
    let s = seq(vec![0, 1], 2);
    assert!((p.loss(&s) - 2.7586236756795133).abs() < 1e-12);
    assert!((p.loss(&seq(vec![0, 1], 0)) - 0.7586236756795133).abs() < 1e-12);
    let probs = p.predict(&s);
    assert!((probs[2] - 0.06337893833303763).abs() < 1e-12);
}

#[test]
fn near_perfect_fit_has_small_loss_and_gradient() {
    let mut p = SurrogateParams::init(4, &SurrogateConfig { embed_dim: 2, ..Default::default() }).unwrap();
    let s = seq(vec![0], 1);
    let u = p.user_state(&s.history);
    let tl = p.table_len();
    for j in 0..4 {
        let sign = if j == 1 { 60.0 } else { -60.0 };
        for k in 0..2 {
            p.theta[tl + j * 2 + k] = sign * u[k] / dot(&u, &u);
        }
    }
    assert!(p.loss(&s) < 1e-20);
    assert!(norm(&p.gradient(&s)) < 1e-20);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..40 {
        let (p, s) = random_case(&mut rng, case % 2 == 0);
        let g = p.gradient(&s);
        let fd = fd_gradient(&p, &s, 1e-5);
        let err = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-4, "case {case}: max abs error {err}");
    }
}

#[test]
fn gradient_is_linear_in_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, a) = random_case(&mut rng, false);
    let b = seq(vec![0], p.n_items - 1);
    let mut both = vec![0.0; p.learnable_dim()];
    p.add_gradient(&a, 1.0, &mut both);
    p.add_gradient(&b, 1.0, &mut both);
    let sum: Vec<f64> = p.gradient(&a).iter().zip(p.gradient(&b)).map(|(x, y)| x + y).collect();
    for (x, y) in both.iter().zip(&sum) {
        assert!((x - y).abs() < 1e-14);
    }
}

#[test]
fn softmax_is_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let (p, s) = random_case(&mut rng, false);
        let total: f64 = p.predict(&s).iter().sum();
        assert!((total - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn zero_vector_hvp_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for convex in [true, false] {
        let (p, s) = random_case(&mut rng, convex);
        let out = p.hvp(&s, &vec![0.0; p.learnable_dim()]);
        assert!(out.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn convex_hvp_matches_explicit_hessian() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SurrogateConfig { embed_dim: 6, convex_mode: true, init_scale: 0.7, seed: 9 };
    let p = SurrogateParams::init(40, &cfg).unwrap(); // m = 240
    let m = p.learnable_dim();
    for _ in 0..5 {
        let s = seq((0..3).map(|_| rng.gen_range(0..40)).collect(), rng.gen_range(0..40));
        let h = p.explicit_hessian(&s).unwrap();
        // Columns of the Hessian from finite differences of the analytic
        // gradient; independent of both closed forms.
        let theta = p.learnable();
        let mut q = p.clone();
        for k in (0..m).step_by(17) {
            let mut t = theta.clone();
            t[k] += 1e-5;
            q.set_learnable(&t);
            let gp = q.gradient(&s);
            t[k] -= 2e-5;
            q.set_learnable(&t);
            let gm = q.gradient(&s);
            for r in 0..m {
                let fd = (gp[r] - gm[r]) / 2e-5;
                assert!((fd - h[r * m + k]).abs() < 1e-6);
            }
        }
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let hv = p.hvp(&s, &v);
        for r in 0..m {
            let dense = dot(&h[r * m..(r + 1) * m], &v);
            assert!((dense - hv[r]).abs() <= 1e-8);
        }
    }
}

#[test]
fn convex_hvp_is_homogeneous_and_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SurrogateConfig { embed_dim: 4, convex_mode: true, init_scale: 1.0, seed: 1 };
    let p = SurrogateParams::init(12, &cfg).unwrap();
    let s = seq(vec![1, 5, 7], 3);
    for _ in 0..100 {
        let v: Vec<f64> = (0..p.learnable_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let hv = p.hvp(&s, &v);
        assert!(dot(&v, &hv) >= -1e-8);
        let a = rng.gen_range(-5.0..5.0);
        let av: Vec<f64> = v.iter().map(|x| a * x).collect();
        let hav = p.hvp(&s, &av);
        for (x, y) in hav.iter().zip(&hv) {
            assert!((x - a * y).abs() <= 1e-6 * (a * y).abs().max(1e-12));
        }
    }
}

#[test]
fn full_mode_hvp_agrees_with_convex_block_and_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = SurrogateConfig { embed_dim: 3, convex_mode: false, init_scale: 0.6, seed: 2 };
    let full = SurrogateParams::init(6, &cfg).unwrap();
    let convex = SurrogateParams { convex_mode: true, ..full.clone() };
    let s = seq(vec![0, 4], 2);
    let m = full.learnable_dim();
    let tl = full.table_len();
    // Perturbation confined to B: the B rows of H v coincide with the convex HVP.
    let vb: Vec<f64> = (0..tl).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut v = vec![0.0; m];
    v[tl..].copy_from_slice(&vb);
    let hv_full = full.hvp(&s, &v);
    let hv_convex = convex.hvp(&s, &vb);
    for (a, b) in hv_full[tl..].iter().zip(&hv_convex) {
        assert!((a - b).abs() < 1e-6);
    }
    let a: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let lhs = dot(&a, &full.hvp(&s, &b));
    let rhs = dot(&b, &full.hvp(&s, &a));
    assert!((lhs - rhs).abs() < 1e-6 * lhs.abs().max(1.0));
}

#[test]
fn separable_toy_is_fit() {
    let data = Dataset {
        catalog: {
            let mut c = crate::dataset::Catalog::new();
            c.intern("a");
            c.intern("b");
            c
        },
        train: vec![seq(vec![0], 1)],
        valid: vec![],
        test: vec![],
    };
    let cfg = SurrogateConfig { embed_dim: 2, convex_mode: false, init_scale: 0.5, seed: 1 };
    let tcfg = TrainConfig { epochs: 2000, batch_size: 1, learning_rate: 1.0, weight_decay: 0.0, ..Default::default() };
    let t = train_surrogate(&data, &cfg, &tcfg).unwrap();
    assert!(t.params.predict(&data.train[0])[1] > 0.99);
    assert!(t.trace.final_loss < 0.01);
}

fn synthetic() -> Dataset {
    let log = generate_synthetic(&SyntheticSpec::new(200, 50, 0.1, 0.0, 7)).unwrap();
    build_sequences(&log, &SplitSpec::default(), 1).unwrap()
}

#[test]
fn training_beats_uniform_and_is_deterministic() {
    let data = synthetic();
    let cfg = SurrogateConfig { embed_dim: 8, convex_mode: false, init_scale: 0.3, seed: 3 };
    let tcfg = TrainConfig { epochs: 40, batch_size: 32, learning_rate: 1.0, weight_decay: 1e-4, seed: 5, tolerance: None };
    let a = train_surrogate(&data, &cfg, &tcfg).unwrap();
    let b = train_surrogate(&data, &cfg, &tcfg).unwrap();
    assert_eq!(a.params.theta, b.params.theta);
    assert!(a.trace.final_loss < a.trace.initial_loss);
    assert!(mean_loss(&a.params, &data.train) < (50f64).ln());
}

#[test]
fn convex_training_leaves_input_table_untouched() {
    let data = synthetic();
    let cfg = SurrogateConfig { convex_mode: true, ..Default::default() };
    let init = SurrogateParams::init(data.n_items(), &cfg).unwrap();
    let t = train_surrogate(&data, &cfg, &TrainConfig::default()).unwrap();
    assert_eq!(t.params.input_table(), init.input_table());
    assert_ne!(t.params.output_table(), init.output_table());
    assert_eq!(t.params.learnable_dim(), data.n_items() * 8);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.ckpt");
    let p = SurrogateParams::init(5, &SurrogateConfig::default()).unwrap();
    p.save(&path).unwrap();
    assert_eq!(SurrogateParams::load(&path).unwrap(), p);
}
