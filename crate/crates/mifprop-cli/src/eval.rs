use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::train::shard_ranges;
use anyhow::{bail, Context, Result};
use mifprop::data::{Dataset, Split};
use mifprop::{Network, SpikeSchedule};
use ndarray::Array2;
use rayon::prelude::*;
use std::io::Write;
use std::path::PathBuf;

pub struct Evaluation {
    pub correct: usize,
    pub total: usize,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Array2<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// Runs the network over the whole dataset (in parallel chunks; the
/// predictions are order-independent) and tallies accuracy and the
/// confusion matrix.
pub fn evaluate(
    network: &Network,
    dataset: &Dataset,
    schedule: &SpikeSchedule,
    t_total: usize,
) -> Result<Evaluation> {
    let n = dataset.len();
    let classes = network.n_out();
    if let Some(&bad) = dataset.labels().iter().find(|&&l| l as usize >= classes) {
        bail!("dataset label {bad} exceeds the {classes}-class output layer");
    }
    let chunks = shard_ranges(n, n.div_ceil(250).max(1));
    let preds: Vec<Result<Vec<usize>>> = chunks
        .par_iter()
        .map(|r| {
            let indices: Vec<usize> = r.clone().collect();
            let (inputs, _) = dataset.gather(&indices);
            Ok(network.predict_batch(&inputs, schedule, t_total)?)
        })
        .collect();

    let mut confusion = Array2::zeros((classes, classes));
    let mut correct = 0;
    let mut idx = 0;
    for chunk in preds {
        for pred in chunk? {
            let truth = dataset.labels()[idx] as usize;
            confusion[[truth, pred]] += 1;
            correct += usize::from(pred == truth);
            idx += 1;
        }
    }
    Ok(Evaluation { correct, total: n, confusion })
}

pub struct EvalOutcome {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    pub confusion_path: PathBuf,
}

/// Evaluates a checkpoint on one dataset split and writes the confusion
/// matrix CSV next to the other run artifacts.
pub fn cmd_eval(config: &Config, checkpoint: &std::path::Path, split: Split) -> Result<EvalOutcome> {
    let ckpt = Checkpoint::load(checkpoint)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let params = config.mif_params()?;
    let schedule = config.schedule()?;
    let net = Network::from_weights(ckpt.widths, ckpt.weights, params)
        .context("checkpoint weights are inconsistent")?;

    let (train, test) = crate::train::load_datasets(config)?;
    let dataset = match split {
        Split::Train => train,
        Split::Test => test,
    };
    if dataset.images().ncols() != net.n_in() {
        bail!(
            "dataset has {} pixels per image but the checkpoint expects {}",
            dataset.images().ncols(),
            net.n_in()
        );
    }

    let eval = evaluate(&net, &dataset, &schedule, config.training.t_total)?;

    std::fs::create_dir_all(&config.output.dir)?;
    let confusion_path = config.output.dir.join("confusion.csv");
    let mut out = std::io::BufWriter::new(std::fs::File::create(&confusion_path)?);
    write!(out, "class")?;
    for p in 0..net.n_out() {
        write!(out, ",pred_{p}")?;
    }
    writeln!(out)?;
    for (truth, row) in eval.confusion.rows().into_iter().enumerate() {
        write!(out, "{truth}")?;
        for &count in row {
            write!(out, ",{count}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;

    Ok(EvalOutcome {
        accuracy: eval.accuracy(),
        correct: eval.correct,
        total: eval.total,
        confusion_path,
    })
}
