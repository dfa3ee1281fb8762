use approx::{assert_abs_diff_eq, assert_relative_eq};
use mifprop::bptt::{
    backward, finite_difference_grad, forward_loss, forward_record, forward_record_mode,
    BpttError, TapeMode,
};
use mifprop::{MifParams, Network, SpikeSchedule};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN_10: f64 = 2.302585092994046;

fn random_inputs(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn small_net(seed: u64) -> Network {
    Network::new(vec![4, 3, 2, 2], MifParams::default(), seed).unwrap()
}

fn drive() -> SpikeSchedule {
    SpikeSchedule::new(vec![(0, 30.0), (20, 30.0)]).unwrap()
}

#[test]
fn gradients_match_central_differences() {
    let sched = drive();
    for seed in 0..5u64 {
        let net = small_net(seed);
        let inputs = random_inputs(2, 4, 1000 + seed);
        let targets = [0usize, 1];
        let (tape, _) = forward_record(&net, &inputs, &targets, &sched, 50).unwrap();
        let grads = backward(&tape, &net).unwrap();
        for (layer, g) in grads.layers.iter().enumerate() {
            for ((row, col), &ad) in g.indexed_iter() {
                let fd = finite_difference_grad(
                    &net, &inputs, &targets, &sched, 50, layer, row, col, 1e-5,
                )
                .unwrap();
                let tol = f64::max(1e-4 * ad.abs().max(fd.abs()), 1e-8);
                assert!(
                    (ad - fd).abs() <= tol,
                    "seed {seed} layer {layer} ({row},{col}): adjoint {ad} vs fd {fd}"
                );
            }
        }
    }
}

#[test]
fn directional_derivative_matches_gradient() {
    let net = small_net(17);
    let inputs = random_inputs(2, 4, 99);
    let targets = [1usize, 0];
    let sched = drive();
    let (tape, _) = forward_record(&net, &inputs, &targets, &sched, 40).unwrap();
    let grads = backward(&tape, &net).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let direction: Vec<Array2<f64>> = net
        .weights()
        .iter()
        .map(|w| Array2::from_shape_fn(w.dim(), |_| rng.random_range(-1.0..1.0)))
        .collect();
    let dot: f64 = grads
        .layers
        .iter()
        .zip(&direction)
        .map(|(g, d)| (g * d).sum())
        .sum();

    let h = 1e-6;
    let shift = |sign: f64| {
        let mut shifted = net.clone();
        for (w, d) in shifted.weights_mut().iter_mut().zip(&direction) {
            *w = &*w + &(d * (sign * h));
        }
        forward_loss(&shifted, &inputs, &targets, &sched, 40).unwrap()
    };
    let fd = (shift(1.0) - shift(-1.0)) / (2.0 * h);
    assert_relative_eq!(dot, fd, max_relative = 1e-4);
}

#[test]
fn backward_is_bit_deterministic()  {
    let net = small_net(3);
    let inputs = random_inputs(2, 4, 42);
    let targets = [0usize, 1];
    let sched = drive();
    let (tape_a, loss_a) = forward_record(&net, &inputs, &targets, &sched, 50).unwrap();
    let (tape_b, loss_b) = forward_record(&net, &inputs, &targets, &sched, 50).unwrap();
    assert_eq!(loss_a.to_bits(), loss_b.to_bits());
    let ga = backward(&tape_a, &net).unwrap();
    let gb = backward(&tape_b, &net).unwrap();
    assert_eq!(ga, gb);
    // Re-running backward on the same tape is also exact.
    assert_eq!(backward(&tape_a, &net).unwrap(), ga);
}

#[test]
fn recompute_mode_reproduces_full_mode_gradients_exactly() {
    let net = small_net(8);
    let inputs = random_inputs(3, 4, 5);
    let targets = [0usize, 1, 1];
    let sched = drive();
    let t_total = 50;
    let (full_tape, full_loss) = forward_record(&net, &inputs, &targets, &sched, t_total).unwrap();
    let full = backward(&full_tape, &net).unwrap();
    for segment in [1, 7, 16, 50, 200] {
        let (tape, loss) = forward_record_mode(
            &net, &inputs, &targets, &sched, t_total,
            TapeMode::Recompute { segment },
        )
        .unwrap();
        assert_eq!(loss.to_bits(), full_loss.to_bits(), "segment {segment}");
        let grads = backward(&tape, &net).unwrap();
        // Replay recomputes the identical arithmetic, so the gradients agree
        // to the last bit, not merely approximately.
        assert_eq!(grads, full, "segment {segment}");
    }
}

#[test]
fn recompute_mode_stores_fewer_records() {
    let net = small_net(4);
    let inputs = random_inputs(2, 4, 11);
    let targets = [0usize, 1];
    let sched = drive();
    let (full, _) = forward_record(&net, &inputs, &targets, &sched, 100).unwrap();
    assert_eq!(full.step_records(), 101);
    let (sparse, _) = forward_record_mode(
        &net, &inputs, &targets, &sched, 100,
        TapeMode::Recompute { segment: 10 },
    )
    .unwrap();
    assert_eq!(sparse.step_records(), 10);
    assert!(sparse.approx_bytes() < full.approx_bytes());
}

#[test]
fn full_tape_memory_grows_linearly_with_steps() {
    let net = small_net(4);
    let inputs = random_inputs(2, 4, 11);
    let targets = [0usize, 1];
    let sched = drive();
    let bytes = |t| {
        let (tape, _) = forward_record(&net, &inputs, &targets, &sched, t).unwrap();
        tape.approx_bytes() as f64
    };
    let (b100, b200, b400) = (bytes(100), bytes(200), bytes(400));
    // Injection records and stored inputs are step-independent, so the
    // increments isolate the per-step cost.
    let ratio = (b400 - b200) / (b200 - b100);
    assert!((1.9..=2.1).contains(&ratio), "ratio {ratio}");
}

#[test]
fn stale_tape_is_rejected_after_weight_edits() {
    let mut net = small_net(2);
    let inputs = random_inputs(2, 4, 3);
    let targets = [0usize, 1];
    let (tape, _) = forward_record(&net, &inputs, &targets, &drive(), 25).unwrap();
    net.weights_mut()[0][[0, 0]] += 1e-9;
    assert_eq!(backward(&tape, &net).unwrap_err(), BpttError::StaleTape);
    // A clone with identical weights is accepted.
    net.weights_mut()[0][[0, 0]] -= 1e-9;
    assert!(backward(&tape, &net).is_ok());
}

#[test]
fn dead_relu_units_receive_exactly_zero_gradient() {
    let p = MifParams::default();
    // Hidden unit 0 sees only negative pre-activations for positive inputs,
    // so it is inactive at every injection and its weights never move.
    let w1 = Array2::from_shape_vec((2, 2), vec![-1.0, -1.0, 1.0, 0.5]).unwrap();
    let w2 = Array2::from_shape_vec((2, 2), vec![0.7, -0.3, 0.2, 0.9]).unwrap();
    let net = Network::from_weights(vec![2, 2, 2], vec![w1, w2], p).unwrap();
    let inputs = Array2::from_shape_vec((2, 2), vec![0.5, 1.0, 1.5, 0.25]).unwrap();
    let targets = [0usize, 1];
    let sched = SpikeSchedule::new(vec![(0, 10.0)]).unwrap();
    let (tape, _) = forward_record(&net, &inputs, &targets, &sched, 30).unwrap();
    let grads = backward(&tape, &net).unwrap();
    assert_eq!(grads.layers[0][[0, 0]], 0.0);
    assert_eq!(grads.layers[0][[0, 1]], 0.0);
    assert_eq!(grads.layers[1][[0, 0]], 0.0);
    assert_eq!(grads.layers[1][[1, 0]], 0.0);
    // The live unit's weights do move.
    assert_ne!(grads.layers[0][[1, 0]], 0.0);
}

#[test]
fn empty_schedule_means_uniform_loss_and_zero_gradients() {
    let net = small_net(6);
    let inputs = random_inputs(2, 4, 1);
    let targets = [0usize, 1];
    let sched = SpikeSchedule::empty();
    let t_total = 25;
    let (tape, loss) = forward_record(&net, &inputs, &targets, &sched, t_total).unwrap();
    // Without injections every class potential follows the same drift, so
    // each step costs ln(10)... here ln(2) for two classes.
    assert_abs_diff_eq!(loss, t_total as f64 * 2.0f64.ln(), epsilon = 1e-9);
    let grads = backward(&tape, &net).unwrap();
    for g in &grads.layers {
        assert!(g.iter().all(|&v| v == 0.0));
    }
    // The loss really is weight-independent: a finite difference agrees.
    let fd = finite_difference_grad(&net, &inputs, &targets, &sched, t_total, 0, 0, 0, 1e-4)
        .unwrap();
    assert_eq!(fd, 0.0);
}

#[test]
fn zero_weight_network_loss_is_log_class_count_per_step() {
    let net = Network::zeros(vec![784, 100, 10, 10], MifParams::default()).unwrap();
    let inputs = random_inputs(4, 784, 33);
    let targets = [3usize, 1, 4, 1];
    let sched = SpikeSchedule::new(vec![(0, 1.0), (40, 1.0), (80, 1.0)]).unwrap();
    let loss = forward_loss(&net, &inputs, &targets, &sched, 100).unwrap();
    assert_abs_diff_eq!(loss, 100.0 * LN_10, epsilon = 1e-9);
}

#[test]
fn duplicating_the_batch_changes_nothing_under_mean_reduction() {
    let net = small_net(12);
    let single = random_inputs(1, 4, 8);
    let mut doubled = Array2::zeros((2, 4));
    doubled.row_mut(0).assign(&single.row(0));
    doubled.row_mut(1).assign(&single.row(0));
    let sched = drive();
    let l1 = forward_loss(&net, &single, &[1], &sched, 30).unwrap();
    let l2 = forward_loss(&net, &doubled, &[1, 1], &sched, 30).unwrap();
    assert_eq!(l1.to_bits(), l2.to_bits());
    let (t1, _) = forward_record(&net, &single, &[1], &sched, 30).unwrap();
    let (t2, _) = forward_record(&net, &doubled, &[1, 1], &sched, 30).unwrap();
    assert_eq!(backward(&t1, &net).unwrap(), backward(&t2, &net).unwrap());
}

#[test]
fn batch_loss_is_the_mean_of_per_sample_losses() {
    let net = small_net(19);
    let inputs = random_inputs(3, 4, 55);
    let targets = [0usize, 1, 0];
    let sched = drive();
    let batch = forward_loss(&net, &inputs, &targets, &sched, 35).unwrap();
    let mut acc = 0.0;
    for (bi, &t) in targets.iter().enumerate() {
        acc += net.total_loss(inputs.row(bi), t, &sched, 35).unwrap();
    }
    assert_relative_eq!(batch, acc / 3.0, max_relative = 1e-12);
}

#[test]
fn single_step_runs_record_and_differentiate() {
    let net = small_net(9);
    let inputs = random_inputs(2, 4, 77);
    let targets = [0usize, 1];
    let sched = SpikeSchedule::new(vec![(0, 30.0)]).unwrap();
    let (tape, loss) = forward_record(&net, &inputs, &targets, &sched, 1).unwrap();
    assert_eq!(tape.step_records(), 2);
    assert!(loss.is_finite());
    let grads = backward(&tape, &net).unwrap();
    let fd = finite_difference_grad(&net, &inputs, &targets, &sched, 1, 0, 0, 0, 1e-5).unwrap();
    assert_abs_diff_eq!(grads.layers[0][[0, 0]], fd, epsilon = 1e-7);
}

#[test]
fn tape_records_injections_with_layer_activations() {
    let net = small_net(1);
    let inputs = random_inputs(2, 4, 2);
    let targets = [0usize, 1];
    let (tape, _) = forward_record(&net, &inputs, &targets, &drive(), 50).unwrap();
    assert_eq!(tape.injections().len(), 2);
    let rec = &tape.injections()[0];
    assert_eq!(rec.step, 0);
    assert_eq!(rec.hidden.len(), 2);
    assert_eq!(rec.hidden[0].dim(), (2, 3));
    assert_eq!(rec.hidden[1].dim(), (2, 2));
    assert_eq!(rec.currents.dim(), (2, 2));
    assert!(rec.hidden.iter().all(|h| h.iter().all(|&z| z >= 0.0)));
    assert!(tape.potentials_at(0).is_some());
    assert!(tape.potentials_at(51).is_none());
}

#[test]
fn shape_and_argument_errors_are_reported() {
    let net = small_net(0);
    let sched = SpikeSchedule::new(vec![(0, 30.0)]).unwrap();
    let empty = Array2::zeros((0, 4));
    assert_eq!(
        forward_loss(&net, &empty, &[], &sched, 10).unwrap_err(),
        BpttError::EmptyBatch
    );
    let inputs = random_inputs(2, 4, 0);
    assert_eq!(
        forward_loss(&net, &inputs, &[0, 1], &sched, 0).unwrap_err(),
        BpttError::ZeroSteps
    );
    let narrow = random_inputs(2, 3, 0);
    assert_eq!(
        forward_loss(&net, &narrow, &[0, 1], &sched, 10).unwrap_err(),
        BpttError::InputWidth { expected: 4, got: 3 }
    );
    assert_eq!(
        forward_loss(&net, &inputs, &[0], &sched, 10).unwrap_err(),
        BpttError::TargetCount { expected: 2, got: 1 }
    );
    assert_eq!(
        forward_loss(&net, &inputs, &[0, 2], &sched, 10).unwrap_err(),
        BpttError::TargetOutOfRange { target: 2, classes: 2 }
    );
    assert_eq!(
        forward_record_mode(&net, &inputs, &[0, 1], &sched, 10, TapeMode::Recompute { segment: 0 })
            .unwrap_err(),
        BpttError::ZeroSegment
    );
    assert_eq!(
        finite_difference_grad(&net, &inputs, &[0, 1], &sched, 10, 3, 0, 0, 1e-5).unwrap_err(),
        BpttError::BadWeightIndex { layer: 3, row: 0, col: 0 }
    );
    assert_eq!(
        finite_difference_grad(&net, &inputs, &[0, 1], &sched, 10, 0, 3, 0, 1e-5).unwrap_err(),
        BpttError::BadWeightIndex { layer: 0, row: 3, col: 0 }
    );
}

#[test]
fn training_step_reduces_the_loss() {
    // One Adam step along the adjoint gradient should lower the loss on the
    // same batch; a sanity link between the gradient and the objective.
    use mifprop::optim::AdamState;
    let mut net = small_net(14);
    let inputs = random_inputs(4, 4, 23);
    let targets = [0usize, 1, 0, 1];
    let sched = drive();
    let before = forward_loss(&net, &inputs, &targets, &sched, 40).unwrap();
    let mut adam = AdamState::new(&net.layer_shapes(), 1e-2, 0.9, 0.999);
    for _ in 0..20 {
        let (tape, _) = forward_record(&net, &inputs, &targets, &sched, 40).unwrap();
        let grads = backward(&tape, &net).unwrap();
        adam.step(net.weights_mut(), &grads.layers).unwrap();
    }
    let after = forward_loss(&net, &inputs, &targets, &sched, 40).unwrap();
    assert!(
        after < before,
        "loss did not improve: {before} -> {after}"
    );
}
