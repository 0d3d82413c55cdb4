use abx_core::mlp::{self, AdamState, MlpConfig, MlpParams};
use abx_core::rng::seeded;
use rand::Rng;

fn batch_loss(params: &MlpParams, xs: &[Vec<f64>], labels: &[f64], alpha: f64) -> f64 {
    let logits: Vec<f64> = xs.iter().map(|x| params.forward(x).unwrap().1.logit).collect();
    mlp::loss(&logits, labels, alpha, params)
}

struct Net {
    params: MlpParams,
    xs: Vec<Vec<f64>>,
    labels: Vec<f64>,
    alpha: f64,
}

/// Random small network whose hidden pre-activations all stay at least
/// `margin` away from the ReLU kink, so a finite-difference step cannot cross it.
fn random_net(rng: &mut impl Rng, margin: f64) -> Net {
    loop {
        let dim = rng.random_range(1..=6);
        let hidden = rng.random_range(1..=8);
        let n = rng.random_range(1..=6);
        let mut params = MlpParams::zeros(dim, hidden);
        for w in params.w1.iter_mut().chain(&mut params.b1).chain(&mut params.w2) {
            *w = rng.random_range(-1.0..1.0);
        }
        params.b2 = rng.random_range(-1.0..1.0);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let labels = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let alpha = if rng.random_bool(0.5) { rng.random_range(0.0..0.5) } else { 0.0 };
        let clear_of_kink = xs
            .iter()
            .all(|x| params.forward(x).unwrap().1.z1.iter().all(|z| z.abs() > margin));
        if clear_of_kink {
            return Net { params, xs, labels, alpha };
        }
    }
}

const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error. It only matters for weights of
/// dead hidden units, whose analytic and numeric gradients are both exactly
/// zero; the worst error seen without any floor was about 1.2e-7.
const REL_FLOOR: f64 = 1e-12;

fn max_relative_error(net: &Net) -> f64 {
    let caches: Vec<_> = net.xs.iter().map(|x| net.params.forward(x).unwrap().1).collect();
    let analytic = mlp::backward(&net.params, &caches, &net.labels, net.alpha);
    let flatten = |p: &MlpParams| -> Vec<f64> {
        p.w1.iter().chain(&p.b1).chain(&p.w2).copied().chain([p.b2]).collect()
    };
    let analytic = flatten(&analytic);
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let shifted = |delta: f64| {
            let mut p = net.params.clone();
            let (nw1, nb1, nw2) = (p.w1.len(), p.b1.len(), p.w2.len());
            match k {
                k if k < nw1 => p.w1[k] += delta,
                k if k < nw1 + nb1 => p.b1[k - nw1] += delta,
                k if k < nw1 + nb1 + nw2 => p.w2[k - nw1 - nb1] += delta,
                _ => p.b2 += delta,
            }
            batch_loss(&p, &net.xs, &net.labels, net.alpha)
        };
        let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn analytic_gradients_match_central_differences() {
    let mut rng = seeded(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let net = random_net(&mut rng, 1e-3);
        worst = worst.max(max_relative_error(&net));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn adam_first_step_is_lr_over_one_plus_eps() {
    let config = MlpConfig::default();
    let mut params = MlpParams::zeros(3, 2);
    let mut grads = MlpParams::zeros(3, 2);
    for g in grads.w1.iter_mut().chain(&mut grads.b1).chain(&mut grads.w2) {
        *g = 1.0;
    }
    grads.b2 = 1.0;
    let mut state = AdamState::new(3, 2);
    mlp::adam_update(&mut params, &grads, &mut state, &config);
    let expected = -config.learning_rate / (1.0 + config.epsilon);
    for &p in params.w1.iter().chain(&params.b1).chain(&params.w2).chain([&params.b2]) {
        assert!((p - expected).abs() < 1e-12, "{p} vs {expected}");
    }
}

#[test]
fn adam_two_steps_match_unrolled_recurrence() {
    let config = MlpConfig {
        learning_rate: 0.01,
        ..MlpConfig::default()
    };
    let (b1, b2, lr, eps) = (config.beta1, config.beta2, config.learning_rate, config.epsilon);
    let mut rng = seeded(5);
    let mut params = MlpParams::zeros(2, 3);
    params.w1.iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
    let start = params.clone();
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut g = MlpParams::zeros(2, 3);
        for v in g.w1.iter_mut().chain(&mut g.b1).chain(&mut g.w2) {
            *v = rng.random_range(-2.0..2.0);
        }
        g.b2 = rng.random_range(-2.0..2.0);
        g
    };
    let (g1, g2) = (draw(&mut rng), draw(&mut rng));
    let mut state = AdamState::new(2, 3);
    mlp::adam_update(&mut params, &g1, &mut state, &config);
    mlp::adam_update(&mut params, &g2, &mut state, &config);

    // Written out for one scalar from the definitions.
    let unrolled = |p0: f64, a: f64, b: f64| {
        let m1 = (1.0 - b1) * a;
        let v1 = (1.0 - b2) * a * a;
        let p1 = p0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * b;
        let v2 = b2 * v1 + (1.0 - b2) * b * b;
        p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps)
    };
    let pairs = start
        .w1
        .iter()
        .zip(&params.w1)
        .zip(g1.w1.iter().zip(&g2.w1))
        .chain(start.b1.iter().zip(&params.b1).zip(g1.b1.iter().zip(&g2.b1)))
        .chain(start.w2.iter().zip(&params.w2).zip(g1.w2.iter().zip(&g2.w2)))
        .chain([((&start.b2, &params.b2), (&g1.b2, &g2.b2))]);
    for ((&p0, &p2), (&a, &b)) in pairs {
        let expected = unrolled(p0, a, b);
        assert!((p2 - expected).abs() < 1e-12, "{p2} vs {expected}");
    }
    assert_eq!(state.t, 2);
}

fn separable(n: usize, dim: usize, sep: f64, seed: u64) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seeded(seed);
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let shift = if label == 1 { sep / 2.0 } else { -sep / 2.0 };
        x.push(shift + rng.random_range(-0.4..0.4) * sep);
        x.extend((1..dim).map(|_| rng.random_range(-1.0..1.0)));
        y.push(label);
    }
    (x, y)
}

#[test]
fn learns_separable_data() {
    let (x, y) = separable(500, 16, 3.0, 11);
    let model = mlp::train_matrix(&x, 16, &y, &MlpConfig { max_epochs: 50, ..MlpConfig::default() }).unwrap();
    let p = model.predict_matrix(&x).unwrap();
    let auc = abx_core::eval::roc_auc(&p, &y).unwrap();
    assert!(auc >= 0.99, "training AUC {auc}");
}

#[test]
fn training_is_deterministic_and_seed_sensitive() {
    let (x, y) = separable(120, 5, 1.0, 3);
    let config = MlpConfig { max_epochs: 5, seed: 9, ..MlpConfig::default() };
    let a = mlp::train_matrix(&x, 5, &y, &config).unwrap();
    let b = mlp::train_matrix(&x, 5, &y, &config).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let c = mlp::train_matrix(&x, 5, &y, &MlpConfig { seed: 10, ..config }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn loss_decreases_over_training_on_full_batch() {
    let (x, y) = separable(64, 4, 1.5, 8);
    let labels: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let rows: Vec<Vec<f64>> = x.chunks(4).map(<[f64]>::to_vec).collect();
    let (params, _) = mlp::init(4, &MlpConfig::default());
    let before = batch_loss(&params, &rows, &labels, 1e-4);
    let model = mlp::train_matrix(&x, 4, &y, &MlpConfig { batch_size: Some(64), max_epochs: 100, ..MlpConfig::default() }).unwrap();
    let after = batch_loss(&model.params, &rows, &labels, 1e-4);
    assert!(after < before, "{after} >= {before}");
}
