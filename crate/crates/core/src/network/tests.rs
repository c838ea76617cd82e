use super::*;
use crate::sparse_coding::{DenseDictionary, Dictionary, ThresholdRule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lcg(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed ^ 0x2545_f491_4f6c_dd1d;
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    })
}

/// 2-layer, m = 2, k = 4 convolutional toy on 9×9 single-channel inputs.
fn toy_config() -> NetworkConfig {
    NetworkConfig {
        mode: Mode::Conv { padding: Padding::Same },
        input: [1, 9, 9],
        kernel: (3, 3),
        num_basis: 2,
        order: 4,
        solver: SolverConfig {
            lambda: 0.02,
            alpha: 0.5,
            num_layers: 2,
            acceleration: Acceleration::Fista,
            threshold: ThresholdRule::Literal,
        },
        tied: false,
        bn_placement: BnPlacement::InRecurrence,
        bn_eps: 1e-5,
        bn_momentum: 0.1,
        pool_grid: 3,
        num_classes: 3,
        init_gain: 1.0,
        first_layer_gain: 1.0,
    }
}

fn toy_net(cfg: NetworkConfig, seed: u64) -> UnrolledNetwork {
    UnrolledNetwork::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn warm(net: &mut UnrolledNetwork, batch: &Tensor) {
    let f = net.forward(batch, true).unwrap();
    net.update_running_stats(&f.batch_stats).unwrap();
}

#[test]
fn zero_input_zero_head_gives_uniform_logits() {
    let mut net = toy_net(toy_config(), 0);
    *net.head_mut() = ClassifierHead::zeros(3, net.config().feature_dim());
    let f = net.forward(&Tensor::zeros(&[2, 1, 9, 9]), true).unwrap();
    assert!(f.logits.data().iter().all(|&v| v == f.logits.data()[0]));
}

#[test]
fn uniform_logits_give_ln_classes() {
    let mut cfg = toy_config();
    cfg.num_classes = 10;
    let mut net = toy_net(cfg, 1);
    *net.head_mut() = ClassifierHead::zeros(10, net.config().feature_dim());
    let step = net.loss_and_grads(&lcg(&[2, 1, 9, 9], 2), &[3, 7]).unwrap();
    assert!((step.loss - libm::log(10.0)).abs() < 1e-12);
}

#[test]
fn confident_logits_give_small_loss() {
    let mut net = toy_net(toy_config(), 1);
    let n = net.config().feature_dim();
    net.head_mut().weight = Tensor::zeros(&[3, n]);
    net.head_mut().bias = Tensor::new(&[3], alloc::vec![40.0, 0.0, 0.0]).unwrap();
    let step = net.loss_and_grads(&lcg(&[2, 1, 9, 9], 2), &[0, 0]).unwrap();
    assert!(step.loss < 1e-15);
    assert!(net.loss_and_grads(&lcg(&[2, 1, 9, 9], 2), &[0, 3]).is_err());
}

#[test]
fn identical_images_give_identical_rows_in_eval() {
    let mut net = toy_net(toy_config(), 3);
    warm(&mut net, &lcg(&[4, 1, 9, 9], 4));
    let img = lcg(&[1, 1, 9, 9], 5);
    let batch = Tensor::stack(&[img.slice0(0), img.slice0(0), img.slice0(0)]).unwrap();
    let logits = net.forward(&batch, false).unwrap().logits;
    assert_eq!(logits.slice0(0), logits.slice0(1));
    assert_eq!(logits.slice0(0), logits.slice0(2));
}

#[test]
fn eval_requires_running_statistics() {
    let net = toy_net(toy_config(), 6);
    match net.forward(&lcg(&[1, 1, 9, 9], 7), false) {
        Err(Error::UninitializedStatistics { layer: 0 }) => {}
        other => panic!("expected uninitialized statistics, got {other:?}"),
    }
}

#[test]
fn geometry_mismatch_rejected() {
    let net = toy_net(toy_config(), 6);
    assert!(net.forward(&Tensor::zeros(&[1, 1, 8, 8]), true).is_err());
    assert!(net.forward(&Tensor::zeros(&[1, 9, 9]), true).is_err());
}

#[test]
fn single_dense_layer_hand_computed() {
    // W = [[2, 0], [0, 1], [1, 1], [0, 0]] on 2×2 images flattened row-major.
    let cfg = NetworkConfig {
        mode: Mode::Dense,
        input: [1, 2, 2],
        kernel: (2, 2),
        num_basis: 2,
        order: 1,
        solver: SolverConfig {
            lambda: 0.0,
            alpha: 1.0,
            num_layers: 1,
            acceleration: Acceleration::Fista,
            threshold: ThresholdRule::Literal,
        },
        pool_grid: 1,
        num_classes: 2,
        ..toy_config()
    };
    let basis = Tensor::new(&[2, 1, 2, 2], alloc::vec![2.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
    let head = ClassifierHead {
        weight: Tensor::new(&[2, 2], alloc::vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        bias: Tensor::zeros(&[2]),
    };
    let net = UnrolledNetwork::from_parts(cfg, alloc::vec![basis], alloc::vec![], head).unwrap();
    let x = Tensor::new(&[1, 1, 2, 2], alloc::vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let f = net.forward(&x, false).unwrap();
    // Wᵀx = [2·1 + 1·3, 1·2 + 1·3]
    assert_eq!(f.codes[0].data(), &[5.0, 5.0]);
    assert_eq!(f.logits.data(), &[5.0, 5.0]);
}

#[test]
fn gradients_match_finite_differences() {
    let net = toy_net(toy_config(), 8);
    let batch = lcg(&[2, 1, 9, 9], 9).map(|v| v + 0.5);
    let labels = [1, 2];
    let step = net.loss_and_grads(&batch, &labels).unwrap();
    let loss_at = |n: &UnrolledNetwork| n.loss_and_grads(&batch, &labels).unwrap().loss;
    let h = 1e-5;
    let params = net.parameters().iter().map(|t| t.len()).collect::<alloc::vec::Vec<_>>();
    assert_eq!(params.len(), step.grads.len());
    for (p, &len) in params.iter().enumerate() {
        for i in 0..len {
            let shifted = |delta: f64| {
                let mut n = net.clone();
                n.update_parameters(|idx, t| {
                    if idx == p {
                        t.data_mut()[i] += delta;
                    }
                });
                loss_at(&n)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let a = step.grads[p].data()[i];
            let err = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            assert!(err <= 1e-4, "param {p} entry {i}: fd {fd} analytic {a}");
        }
    }
}

#[test]
fn untied_layers_are_independent() {
    let net = toy_net(toy_config(), 10);
    let batch = lcg(&[2, 1, 9, 9], 11);
    let before = net.forward(&batch, true).unwrap();
    let mut perturbed = net.clone();
    perturbed.update_parameters(|idx, t| {
        if idx == 1 {
            *t = t.map(|v| v * 1.7 + 0.1);
        }
    });
    let after = perturbed.forward(&batch, true).unwrap();
    assert_eq!(before.codes[0], after.codes[0]);
    assert_ne!(before.codes[1], after.codes[1]);

    let mut cfg = toy_config();
    cfg.tied = true;
    let tied = toy_net(cfg, 10);
    assert_eq!(tied.banks().len(), 1);
    let mut bumped = tied.clone();
    bumped.update_parameters(|idx, t| {
        if idx == 0 {
            t.data_mut()[0] += 0.3;
        }
    });
    assert_ne!(
        tied.forward(&batch, true).unwrap().codes[0],
        bumped.forward(&batch, true).unwrap().codes[0]
    );
}

#[test]
fn tap_off_recurrence_matches_plain_solver() {
    let mut cfg = toy_config();
    cfg.tied = true;
    cfg.bn_placement = BnPlacement::TapOff;
    cfg.solver.num_layers = 4;
    let net = toy_net(cfg, 12);
    let x = lcg(&[1, 9, 9], 13);
    let f = net.forward(&x.reshape(&[1, 1, 9, 9]).unwrap(), true).unwrap();
    let dict = ConvDictionary {
        filters: net.banks()[0].expanded(),
        padding: Padding::Same,
    };
    let want = fista_unroll(&x, &dict, &net.config().solver).unwrap();
    for (got, want) in f.codes.iter().zip(&want) {
        assert!(got.reshape(want.shape()).unwrap().max_abs_diff(want).unwrap() <= 1e-12);
    }
}

#[test]
fn one_pixel_conv_matches_dense() {
    let dense_cfg = NetworkConfig {
        mode: Mode::Dense,
        input: [2, 5, 5],
        kernel: (5, 5),
        num_basis: 3,
        order: 4,
        pool_grid: 1,
        solver: SolverConfig {
            num_layers: 3,
            ..toy_config().solver
        },
        ..toy_config()
    };
    let conv_cfg = NetworkConfig {
        mode: Mode::Conv {
            padding: Padding::Valid,
        },
        ..dense_cfg.clone()
    };
    let dense = toy_net(dense_cfg, 14);
    let bases = dense.banks().iter().map(|b| b.basis().clone()).collect();
    let conv = UnrolledNetwork::from_parts(conv_cfg, bases, dense.norms().to_vec(), dense.head().clone()).unwrap();
    let batch = lcg(&[3, 2, 5, 5], 15);
    let a = dense.forward(&batch, true).unwrap();
    let b = conv.forward(&batch, true).unwrap();
    assert!(a.logits.max_abs_diff(&b.logits).unwrap() <= 1e-12);
    for (x, y) in a.codes.iter().zip(&b.codes) {
        assert!(x.max_abs_diff(&y.reshape(x.shape()).unwrap()).unwrap() <= 1e-12);
    }
    let ga = dense.loss_and_grads(&batch, &[0, 1, 2]).unwrap().grads;
    let gb = conv.loss_and_grads(&batch, &[0, 1, 2]).unwrap().grads;
    for (x, y) in ga.iter().zip(&gb) {
        assert!(x.max_abs_diff(y).unwrap() <= 1e-12);
    }
}

#[test]
fn dense_mode_uses_flattened_atoms() {
    let cfg = NetworkConfig::preset(Model::DenseR90, Geometry::Mnist);
    let net = toy_net(NetworkConfig { init_gain: 20.0, ..cfg }, 16);
    let x = lcg(&[1, 1, 28, 28], 17).map(|v| v + 0.5);
    let f = net.forward(&x, true).unwrap();
    assert_eq!(f.codes[0].shape(), &[1, 256]);
    let atoms = net.banks()[0].expanded().reshape(&[256, 784]).unwrap();
    let dict = DenseDictionary::new(atoms).unwrap();
    let want = crate::sparse_coding::soft_threshold(
        &dict
            .analysis(&x.reshape(&[784]).unwrap())
            .unwrap()
            .scale(net.config().solver.alpha),
        net.config().solver.shrinkage(),
    )
    .unwrap();
    assert!(f.codes[0].reshape(&[256]).unwrap().max_abs_diff(&want).unwrap() <= 1e-12);
}

#[test]
fn r90_equivariance_examples() {
    let group = Arc::new(CyclicGroup::new(4, (3, 3)).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let bank = FilterBank::random(2, 1, (3, 3), group.clone(), 1.0, &mut rng).unwrap();
    let solver = SolverConfig {
        num_layers: 1,
        lambda: 0.01,
        ..SolverConfig::default()
    };
    assert_eq!(
        check_r90_equivariance(&bank, &Tensor::zeros(&[1, 9, 9]), &solver).unwrap(),
        0.0
    );

    let sym = Tensor::new(&[1, 1, 3, 3], alloc::vec![0.1, 0.5, 0.1, 0.5, 1.0, 0.5, 0.1, 0.5, 0.1]).unwrap();
    let sym_bank = FilterBank::new(sym, group.clone()).unwrap();
    let flat = Tensor::full(&[1, 9, 9], 0.3);
    // exact up to summation order
    assert!(
        check_r90_equivariance(
            &sym_bank,
            &flat,
            &SolverConfig {
                lambda: 0.001,
                ..solver
            }
        )
        .unwrap()
            <= 1e-15
    );

    for seed in 0..5 {
        let x = lcg(&[1, 9, 9], 100 + seed);
        let dev = check_r90_equivariance(
            &bank,
            &x,
            &SolverConfig {
                lambda: 0.001,
                alpha: 0.5,
                ..solver
            },
        )
        .unwrap();
        assert!(dev <= 1e-10, "deviation {dev}");
        let deep = SolverConfig {
            num_layers: 4,
            lambda: 0.001,
            alpha: 0.5,
            ..solver
        };
        assert!(check_r90_equivariance(&bank, &x, &deep).unwrap() <= 1e-10);
    }

    let r60 = FilterBank::random(
        1,
        1,
        (3, 3),
        Arc::new(CyclicGroup::new(6, (3, 3)).unwrap()),
        1.0,
        &mut rng,
    )
    .unwrap();
    assert!(check_r90_equivariance(&r60, &lcg(&[1, 9, 9], 1), &solver).is_err());
    assert!(equivariance_deviation(&r60, &lcg(&[1, 9, 9], 1), &solver)
        .unwrap()
        .is_finite());
}

#[test]
fn parameter_counts() {
    let counts = [Model::Baseline, Model::R90, Model::R60]
        .map(|m| count_parameters_for(&NetworkConfig::preset(m, Geometry::Cifar)));
    assert_eq!(counts[0].filters, 46_080);
    assert_eq!(counts[0].filters, 4 * counts[1].filters);
    assert_eq!(counts[0].filters, 6 * counts[2].filters);
    for c in counts {
        assert_eq!(c.batchnorm, 360);
        assert_eq!(c.total, c.filters + c.batchnorm + c.head);
    }
    let cfg = NetworkConfig::preset(Model::R60, Geometry::Mnist);
    let net = toy_net(cfg.clone(), 19);
    assert_eq!(net.count_parameters(), count_parameters_for(&cfg));
    let mut empty = cfg;
    empty.solver.num_layers = 0;
    assert_eq!(count_parameters_for(&empty).total, 0);
}

#[test]
fn running_stats_use_unbiased_variance() {
    let mut bn = BatchNormState::new(1);
    bn.update(
        &BatchStats {
            mean: alloc::vec![2.0],
            var: alloc::vec![3.0],
            count: 4,
        },
        0.1,
    );
    assert!((bn.running_mean[0] - 0.2).abs() < 1e-15);
    assert!((bn.running_var[0] - (0.9 + 0.1 * 4.0)).abs() < 1e-15);
    assert!(bn.is_initialized());
}

#[test]
fn updates_keep_orbits_consistent() {
    let mut net = toy_net(toy_config(), 20);
    net.update_parameters(|_, t| *t = t.map(|v| v - 0.01));
    assert!(net.orbit_consistent());
}
