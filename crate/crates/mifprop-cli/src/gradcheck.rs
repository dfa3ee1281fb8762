use anyhow::{bail, Result};
use mifprop::bptt::{backward, finite_difference_grad, forward_record};
use mifprop::seeding::derive_seed;
use mifprop::{MifParams, Network, SpikeSchedule};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest network the checker will touch; finite differences cost two
/// forward passes per weight.
pub const MAX_WEIGHTS: usize = 64;

const INPUT_STREAM: u64 = 0x4743_0000_0000_0000;

#[derive(Debug)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel: f64,
    /// (layer, row, col) of the worst weight.
    pub worst: (usize, usize, usize),
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares the adjoint gradient against central differences on every
/// weight of a tiny network. `inject` adds an artificial error to one
/// adjoint entry, which lets the negative-control test prove the check can
/// actually fail and name the offending weight.
pub fn cmd_gradcheck(
    widths: &[usize],
    params: &MifParams,
    seed: u64,
    tolerance: f64,
    inject: Option<(usize, usize, usize, f64)>,
) -> Result<GradcheckReport> {
    if !(tolerance > 0.0) {
        bail!("tolerance must be positive");
    }
    let total: usize = widths.windows(2).map(|p| p[0] * p[1]).sum();
    if total > MAX_WEIGHTS {
        bail!(
            "gradcheck is restricted to networks with at most {MAX_WEIGHTS} weights, got {total}"
        );
    }

    let net = Network::new(widths.to_vec(), params.clone(), seed)?;
    let t_total = 50;
    let schedule = SpikeSchedule::new(vec![(0, 30.0), (20, 30.0)])?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, INPUT_STREAM));
    let inputs = Array2::from_shape_fn((2, net.n_in()), |_| rng.random_range(-1.0..1.0));
    let targets = [0usize, 1 % net.n_out()];

    let (tape, _) = forward_record(&net, &inputs, &targets, &schedule, t_total)?;
    let mut grads = backward(&tape, &net)?;
    if let Some((layer, row, col, delta)) = inject {
        grads.layers[layer][[row, col]] += delta;
    }

    let mut max_rel = 0.0;
    let mut worst = (0, 0, 0);
    let mut checked = 0;
    for (layer, g) in grads.layers.iter().enumerate() {
        for ((row, col), &ad) in g.indexed_iter() {
            let fd = finite_difference_grad(
                &net, &inputs, &targets, &schedule, t_total, layer, row, col, 1e-5,
            )?;
            let denom = ad.abs().max(fd.abs());
            // Both effectively zero: agreement, not a 0/0 blowup.
            let rel = if denom > 1e-8 { (ad - fd).abs() / denom } else { 0.0 };
            if rel > max_rel {
                max_rel = rel;
                worst = (layer, row, col);
            }
            checked += 1;
        }
    }

    Ok(GradcheckReport {
        checked,
        max_rel,
        worst,
        tolerance,
        pass: max_rel <= tolerance,
    })
}
