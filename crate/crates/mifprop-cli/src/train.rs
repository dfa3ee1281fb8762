use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::eval::evaluate;
use crate::lockfile::LockGuard;
use crate::metrics::MetricsWriter;
use anyhow::{bail, Context, Result};
use mifprop::bptt::{backward, forward_record_mode, TapeMode};
use mifprop::data::{Dataset, Split};
use mifprop::optim::AdamState;
use mifprop::seeding::epoch_seed;
use mifprop::{Network, SpikeSchedule};
use ndarray::{s, Array2};
use rayon::prelude::*;
use std::ops::Range;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct TrainResult {
    pub out_dir: PathBuf,
    pub iterations: u64,
    pub epochs_run: u64,
    /// Test accuracy at the last metrics row, if any row was written.
    pub final_test_acc: Option<f64>,
}

/// Splits `n` items into `k` contiguous ranges whose lengths differ by at
/// most one (the remainder goes to the leading ranges).
pub fn shard_ranges(n: usize, k: usize) -> Vec<Range<usize>> {
    if n == 0 {
        return Vec::new();
    }
    let k = k.clamp(1, n);
    let base = n / k;
    let rem = n % k;
    let mut ranges = Vec::with_capacity(k);
    let mut start = 0;
    for s in 0..k {
        let len = base + usize::from(s < rem);
        ranges.push(start..start + len);
        start += len;
    }
    ranges
}

/// One training step over a batch: forward + backward per contiguous shard
/// in parallel, then a serial shard-order reduction of the batch-weighted
/// losses and gradients. The reduction order is fixed, so the step is
/// deterministic for a given shard count no matter how threads are
/// scheduled.
pub fn sharded_grads(
    network: &Network,
    inputs: &Array2<f64>,
    targets: &[usize],
    schedule: &SpikeSchedule,
    t_total: usize,
    mode: TapeMode,
    shards: usize,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let b = inputs.nrows();
    let ranges = shard_ranges(b, shards);
    let parts: Vec<Result<(usize, f64, Vec<Array2<f64>>)>> = ranges
        .par_iter()
        .map(|r| {
            let rows = inputs.slice(s![r.clone(), ..]).to_owned();
            let shard_targets = &targets[r.clone()];
            let (tape, loss) =
                forward_record_mode(network, &rows, shard_targets, schedule, t_total, mode)?;
            let grads = backward(&tape, network)?;
            Ok((r.len(), loss, grads.layers))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut acc: Vec<Array2<f64>> = network
        .weights()
        .iter()
        .map(|w| Array2::zeros(w.dim()))
        .collect();
    for part in parts {
        let (rows, loss, grads) = part?;
        let weight = rows as f64 / b as f64;
        total_loss += weight * loss;
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.scaled_add(weight, g);
        }
    }
    Ok((total_loss, acc))
}

pub fn load_datasets(config: &Config) -> Result<(Dataset, Dataset)> {
    let dir = config.data_dir();
    let load = |images: &str, labels: &str, split| {
        Dataset::from_idx_files(&dir.join(images), &dir.join(labels), split).with_context(|| {
            format!(
                "loading the {} split from {} (run scripts/fetch_mnist.sh?)",
                if split == Split::Train { "train" } else { "test" },
                dir.display()
            )
        })
    };
    let train = load("train-images-idx3-ubyte", "train-labels-idx1-ubyte", Split::Train)?;
    let test = load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte", Split::Test)?;
    Ok((train, test))
}

fn checkpoint_path(dir: &Path, tag: &str) -> PathBuf {
    dir.join(format!("checkpoint-{tag}.mifp"))
}

fn snapshot(
    net: &Network,
    adam: &AdamState,
    config: &Config,
    epoch: u64,
    iteration: u64,
) -> Checkpoint {
    Checkpoint {
        widths: net.widths().to_vec(),
        seed: config.training.seed,
        lr: adam.lr,
        beta1: adam.beta1,
        beta2: adam.beta2,
        epsilon: adam.epsilon,
        adam_t: adam.t,
        epoch,
        iteration,
        weights: net.weights().to_vec(),
        adam_m: adam.m.clone(),
        adam_u: adam.u.clone(),
    }
}

pub fn cmd_train(config: &Config) -> Result<TrainResult> {
    config.validate()?;
    let t = config.training.clone();
    let params = config.mif_params()?;
    let schedule = config.schedule()?;
    let mode = config.tape_mode()?;

    let out_dir = config.output.dir.clone();
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let _lock = LockGuard::acquire(&out_dir)?;

    let (train, test) = load_datasets(config)?;
    let n_in = *config.model.widths.first().expect("validated widths");
    if train.images().ncols() != n_in {
        bail!(
            "dataset has {} pixels per image but model.widths starts at {n_in}",
            train.images().ncols()
        );
    }

    let resuming = t.resume.is_some();
    let (mut net, mut adam, start_epoch, mut iteration) = match &t.resume {
        None => {
            let net = Network::new(config.model.widths.clone(), params, t.seed)?;
            let adam = AdamState::new(&net.layer_shapes(), t.lr, t.beta1, t.beta2);
            snapshot(&net, &adam, config, 0, 0)
                .save(&checkpoint_path(&out_dir, "initial"))
                .context("writing the initial checkpoint")?;
            (net, adam, 0u64, 0u64)
        }
        Some(path) => {
            let ckpt = Checkpoint::load(path)
                .with_context(|| format!("loading resume checkpoint {}", path.display()))?;
            if ckpt.widths != config.model.widths {
                bail!(
                    "checkpoint architecture {:?} does not match model.widths {:?}",
                    ckpt.widths,
                    config.model.widths
                );
            }
            if ckpt.seed != t.seed {
                bail!("checkpoint was trained with seed {}, config says {}", ckpt.seed, t.seed);
            }
            if ckpt.lr != t.lr || ckpt.beta1 != t.beta1 || ckpt.beta2 != t.beta2 {
                bail!("checkpoint optimizer hyperparameters differ from the config");
            }
            let net = Network::from_weights(ckpt.widths.clone(), ckpt.weights, params)?;
            let mut adam = AdamState::new(&net.layer_shapes(), t.lr, t.beta1, t.beta2);
            adam.m = ckpt.adam_m;
            adam.u = ckpt.adam_u;
            adam.t = ckpt.adam_t;
            (net, adam, ckpt.epoch, ckpt.iteration)
        }
    };

    let mut metrics = MetricsWriter::open(&out_dir.join("metrics.csv"), resuming)?;
    let mut window: Vec<f64> = Vec::new();
    let mut final_test_acc = None;

    for epoch in start_epoch..t.epochs {
        for batch in train.batches(t.batch_size, epoch_seed(t.seed, epoch)) {
            let (inputs, targets) = train.gather(&batch);
            let (loss, grads) = sharded_grads(
                &net, &inputs, &targets, &schedule, t.t_total, mode, t.shards,
            )?;
            adam.step(net.weights_mut(), &grads)?;
            iteration += 1;
            window.push(loss);

            if iteration % config.output.metrics_every == 0 {
                let train_eval = evaluate(&net, &train, &schedule, t.t_total)?;
                let test_eval = evaluate(&net, &test, &schedule, t.t_total)?;
                let mean_loss = window.iter().sum::<f64>() / window.len() as f64;
                window.clear();
                metrics.row(iteration, mean_loss, train_eval.accuracy(), test_eval.accuracy())?;
                println!(
                    "iter {iteration}: loss {mean_loss:.4}, train {:.4}, test {:.4}",
                    train_eval.accuracy(),
                    test_eval.accuracy()
                );
                final_test_acc = Some(test_eval.accuracy());
            }
        }
        snapshot(&net, &adam, config, epoch + 1, iteration)
            .save(&checkpoint_path(&out_dir, &format!("epoch-{epoch:03}")))
            .with_context(|| format!("writing the epoch {epoch} checkpoint"))?;
    }

    snapshot(&net, &adam, config, t.epochs.max(start_epoch), iteration)
        .save(&checkpoint_path(&out_dir, "final"))
        .context("writing the final checkpoint")?;

    Ok(TrainResult {
        out_dir,
        iterations: iteration,
        epochs_run: t.epochs.max(start_epoch),
        final_test_acc,
    })
}
