use abx_core::gbt::{self, GbtConfig, TreeNode};
use abx_core::rng::seeded;
use rand::Rng;

#[derive(Debug, PartialEq)]
enum Root {
    Leaf,
    Split { feature: usize, threshold: f64 },
}

/// Enumerates every (feature, threshold) pair directly from the definition:
/// thresholds are midpoints of consecutive distinct values, rows with
/// `x < threshold` go left, the first strictly best candidate wins (features
/// ascending, then thresholds ascending), and only positive gains split.
fn brute_force_root(x: &[f64], dim: usize, y: &[u8], cfg: &GbtConfig) -> Root {
    let n = y.len();
    let p0 = cfg.base_score;
    let g: Vec<f64> = y.iter().map(|&v| p0 - f64::from(v)).collect();
    let h: Vec<f64> = vec![(p0 * (1.0 - p0)).max(1e-16); n];
    let score = |gs: f64, hs: f64| gs * gs / (hs + cfg.lambda);
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..dim {
        let mut vals: Vec<f64> = (0..n).map(|r| x[r * dim + f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
            for r in 0..n {
                if x[r * dim + f] < thr {
                    gl += g[r];
                    hl += h[r];
                } else {
                    gr += g[r];
                    hr += h[r];
                }
            }
            if hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - cfg.gamma;
            if best.is_none_or(|(b, _, _)| gain > b) {
                best = Some((gain, f, thr));
            }
        }
    }
    match best {
        Some((gain, feature, threshold)) if gain > 0.0 => Root::Split { feature, threshold },
        _ => Root::Leaf,
    }
}

fn root_of(model: &gbt::GbtModel) -> Root {
    match model.trees[0].root() {
        TreeNode::Split { feature_index, threshold, .. } => Root::Split {
            feature: *feature_index,
            threshold: *threshold,
        },
        TreeNode::Leaf { .. } => Root::Leaf,
    }
}

/// Small datasets on a coarse integer grid, so equal gains and duplicated
/// columns (exact ties) are common.
fn tie_heavy_dataset(rng: &mut impl Rng) -> (Vec<f64>, usize, Vec<u8>) {
    let n = rng.random_range(2..=20);
    let dim = rng.random_range(1..=3);
    let levels = rng.random_range(2..=5);
    let mut x = vec![0.0; n * dim];
    for r in 0..n {
        for f in 0..dim {
            x[r * dim + f] = f64::from(rng.random_range(0..levels));
        }
        if dim > 1 && rng.random_bool(0.3) {
            x[r * dim + 1] = x[r * dim];
        }
    }
    let y = (0..n).map(|_| rng.random_range(0..2u8)).collect();
    (x, dim, y)
}

#[test]
fn first_root_split_matches_brute_force() {
    let mut rng = seeded(77);
    let mut splits = 0;
    for case in 0..50 {
        let (x, dim, y) = tie_heavy_dataset(&mut rng);
        let cfg = GbtConfig {
            n_estimators: 1,
            lambda: [0.5, 1.0, 2.0][case % 3],
            gamma: [0.0, 0.05][case % 2],
            min_child_weight: [0.0, 0.5, 1.0][case % 3],
            ..GbtConfig::default()
        };
        let model = gbt::fit_matrix(&x, dim, &y, &cfg).unwrap();
        let expected = brute_force_root(&x, dim, &y, &cfg);
        splits += usize::from(matches!(expected, Root::Split { .. }));
        assert_eq!(root_of(&model), expected, "case {case}: x={x:?} y={y:?}");
    }
    assert!(splits >= 25, "only {splits} of 50 cases split");
}

fn random_problem(seed: u64, n: usize, dim: usize) -> (Vec<f64>, Vec<u8>) {
    let mut rng = seeded(seed);
    let x: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y = (0..n)
        .map(|r| u8::from(x[r * dim] - 0.5 * x[r * dim + 1] + rng.random_range(-1.0..1.0) > 0.0))
        .collect();
    (x, y)
}

#[test]
fn training_loss_never_increases() {
    for seed in 0..5 {
        let (x, y) = random_problem(seed, 150, 4);
        let (_, trace) = gbt::fit_matrix_traced(&x, 4, &y, &GbtConfig { n_estimators: 30, ..GbtConfig::default() }).unwrap();
        assert_eq!(trace.losses.len(), 31);
        for w in trace.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
        }
    }
}

#[test]
fn replaying_the_ensemble_reproduces_training_logits() {
    let (x, y) = random_problem(1, 200, 3);
    let (model, trace) = gbt::fit_matrix_traced(&x, 3, &y, &GbtConfig::default()).unwrap();
    for (row, &logit) in x.chunks(3).zip(&trace.train_logits) {
        assert!((model.score(row) - logit).abs() < 1e-12);
    }
}

#[test]
fn affine_rescaling_of_a_feature_leaves_predictions_unchanged() {
    // Grid values times 2 plus 4 stay exactly representable, so midpoints
    // map exactly and the trees are the same up to thresholds.
    let mut rng = seeded(4);
    let (n, dim) = (120, 3);
    let x: Vec<f64> = (0..n * dim).map(|_| f64::from(rng.random_range(0..16))).collect();
    let y: Vec<u8> = (0..n).map(|r| u8::from(x[r * dim] + x[r * dim + 2] > 15.0 || rng.random_bool(0.1))).collect();
    let shifted: Vec<f64> = x.iter().enumerate().map(|(i, &v)| if i % dim == 1 { 2.0 * v + 4.0 } else { v }).collect();
    let cfg = GbtConfig { n_estimators: 20, ..GbtConfig::default() };
    let a = gbt::fit_matrix(&x, dim, &y, &cfg).unwrap().predict_matrix(&x).unwrap();
    let b = gbt::fit_matrix(&shifted, dim, &y, &cfg).unwrap().predict_matrix(&shifted).unwrap();
    assert_eq!(a, b);
}

#[test]
fn fits_separable_data() {
    let (n, dim) = (400, 8);
    let mut rng = seeded(12);
    let mut x = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    for r in 0..n {
        let label = (r % 2) as u8;
        x.push(if label == 1 { 1.5 } else { -1.5 } + rng.random_range(-1.0..1.0));
        x.extend((1..dim).map(|_| rng.random_range(-1.0..1.0)));
        y.push(label);
    }
    let model = gbt::fit_matrix(&x, dim, &y, &GbtConfig::default()).unwrap();
    let auc = abx_core::eval::roc_auc(&model.predict_matrix(&x).unwrap(), &y).unwrap();
    assert!(auc >= 0.99, "training AUC {auc}");
}

#[test]
fn subsampling_is_seeded() {
    let (x, y) = random_problem(6, 150, 3);
    let cfg = GbtConfig { n_estimators: 10, subsample: 0.7, seed: 3, ..GbtConfig::default() };
    let a = gbt::fit_matrix(&x, 3, &y, &cfg).unwrap();
    let b = gbt::fit_matrix(&x, 3, &y, &cfg).unwrap();
    assert_eq!(a, b);
    let c = gbt::fit_matrix(&x, 3, &y, &GbtConfig { seed: 4, ..cfg.clone() }).unwrap();
    assert_ne!(a.trees, c.trees);
    // With subsample 1 the seed is never consulted.
    let full = GbtConfig { subsample: 1.0, ..cfg };
    let d = gbt::fit_matrix(&x, 3, &y, &full).unwrap();
    let e = gbt::fit_matrix(&x, 3, &y, &GbtConfig { seed: 99, ..full }).unwrap();
    assert_eq!(d.trees, e.trees);
}

#[test]
fn depth_is_bounded_by_config() {
    let (x, y) = random_problem(2, 300, 4);
    for depth in [1, 2, 4] {
        let model = gbt::fit_matrix(&x, 4, &y, &GbtConfig { n_estimators: 5, max_depth: depth, ..GbtConfig::default() }).unwrap();
        assert!(model.trees.iter().all(|t| t.depth() <= depth));
    }
}
