use anyhow::{bail, Context, Result};
use mifprop::bptt::TapeMode;
use mifprop::{MifParams, SpikeSchedule};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything a run needs, resolved from (in order of precedence) built-in
/// defaults, the `--config` TOML file, repeated `--override key=value`
/// flags, and the `--seed`/`--out` shorthands. The defaults reproduce the
/// full-scale training protocol; `configs/desk.toml` holds the quick
/// subset variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Directory holding the four IDX files under their canonical names.
    /// Falls back to $MIFPROP_DATA_DIR, then to `data/mnist`.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Layer widths from input to the MIF output population.
    pub widths: Vec<usize>,
    pub mif: MifSection,
}

/// Optional neuron-parameter overrides. The plain keys (`v_on`, `v_off`,
/// `r_on`, `r_off`) set both memristors at once; the suffixed keys pin one
/// memristor and win over the plain form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MifSection {
    pub e_rest: Option<f64>,
    pub e_reset: Option<f64>,
    pub c: Option<f64>,
    pub k_th: Option<f64>,
    pub v_on: Option<f64>,
    pub v_off: Option<f64>,
    pub r_on: Option<f64>,
    pub r_off: Option<f64>,
    pub v_on1: Option<f64>,
    pub v_on2: Option<f64>,
    pub v_off1: Option<f64>,
    pub v_off2: Option<f64>,
    pub r_on1: Option<f64>,
    pub r_on2: Option<f64>,
    pub r_off1: Option<f64>,
    pub r_off2: Option<f64>,
    pub tau1: Option<f64>,
    pub tau2: Option<f64>,
    pub tau_syn: Option<f64>,
    pub literal_g2: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub t_total: usize,
    /// Steps at which the input image is injected.
    pub injection_steps: Vec<usize>,
    /// Scale multiplied onto the pixel intensities at every injection.
    pub injection_scale: f64,
    pub batch_size: usize,
    pub epochs: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// "full" stores the whole trajectory; "recompute" keeps snapshots
    /// every `segment_len` steps and replays windows during backward.
    pub tape_mode: String,
    pub segment_len: usize,
    /// Contiguous batch shards differentiated in parallel; gradients are
    /// combined serially in shard order, so the result is deterministic
    /// for a given shard count.
    pub shards: usize,
    /// Checkpoint to continue from instead of a fresh initialization.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Metrics row cadence, in training iterations.
    pub metrics_every: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { dir: None }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { widths: vec![784, 100, 10, 10], mif: MifSection::default() }
    }
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            t_total: 1000,
            injection_steps: vec![0, 400, 800],
            injection_scale: 1.0,
            batch_size: 200,
            epochs: 40,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 1,
            tape_mode: "full".to_string(),
            segment_len: 100,
            shards: 8,
            resume: None,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs/default"), metrics_every: 10 }
    }
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: ModelSection::default(),
            training: TrainingSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    /// Applies `key.path=value` overrides by editing the TOML value tree.
    /// The right-hand side is parsed as a TOML literal where possible and
    /// kept as a string otherwise, so `training.lr=5e-3`,
    /// `model.widths=[784,50,10,10]` and `data.dir=data/desk` all work.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut tree = toml::Value::try_from(&*self).context("serializing config")?;
        for entry in overrides {
            let (path, raw) = entry
                .split_once('=')
                .with_context(|| format!("override '{entry}' is not key=value"))?;
            let value = parse_toml_literal(raw.trim());
            set_path(&mut tree, path.trim(), value)
                .with_context(|| format!("applying override '{entry}'"))?;
        }
        *self = tree.try_into().context("config invalid after overrides")?;
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        if let Some(dir) = &self.data.dir {
            return dir.clone();
        }
        if let Ok(env) = std::env::var("MIFPROP_DATA_DIR") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from("data/mnist")
    }

    pub fn mif_params(&self) -> Result<MifParams> {
        let m = &self.model.mif;
        let mut p = MifParams::default();
        if let Some(v) = m.e_rest {
            p.e_rest = v;
        }
        if let Some(v) = m.e_reset {
            p.e_reset = v;
        }
        if let Some(v) = m.c {
            p.c = v;
        }
        if let Some(v) = m.k_th {
            p.k_th = v;
        }
        if let Some(v) = m.v_on {
            p.v_on1 = v;
            p.v_on2 = v;
        }
        if let Some(v) = m.v_off {
            p.v_off1 = v;
            p.v_off2 = v;
        }
        if let Some(v) = m.r_on {
            p.r_on1 = v;
            p.r_on2 = v;
        }
        if let Some(v) = m.r_off {
            p.r_off1 = v;
            p.r_off2 = v;
        }
        if let Some(v) = m.v_on1 {
            p.v_on1 = v;
        }
        if let Some(v) = m.v_on2 {
            p.v_on2 = v;
        }
        if let Some(v) = m.v_off1 {
            p.v_off1 = v;
        }
        if let Some(v) = m.v_off2 {
            p.v_off2 = v;
        }
        if let Some(v) = m.r_on1 {
            p.r_on1 = v;
        }
        if let Some(v) = m.r_on2 {
            p.r_on2 = v;
        }
        if let Some(v) = m.r_off1 {
            p.r_off1 = v;
        }
        if let Some(v) = m.r_off2 {
            p.r_off2 = v;
        }
        if let Some(v) = m.tau1 {
            p.tau1 = v;
        }
        if let Some(v) = m.tau2 {
            p.tau2 = v;
        }
        if let Some(v) = m.tau_syn {
            p.tau_syn = v;
        }
        if let Some(v) = m.literal_g2 {
            p.literal_g2 = v;
        }
        p.validate().context("neuron parameters invalid")?;
        Ok(p)
    }

    pub fn schedule(&self) -> Result<SpikeSchedule> {
        let sched = SpikeSchedule::uniform(
            &self.training.injection_steps,
            self.training.injection_scale,
        )
        .context("injection steps invalid")?;
        sched
            .check_fits(self.training.t_total)
            .context("injection steps must lie inside the run")?;
        Ok(sched)
    }

    pub fn tape_mode(&self) -> Result<TapeMode> {
        match self.training.tape_mode.as_str() {
            "full" => Ok(TapeMode::Full),
            "recompute" => {
                if self.training.segment_len == 0 {
                    bail!("segment_len must be at least 1");
                }
                Ok(TapeMode::Recompute { segment: self.training.segment_len })
            }
            other => bail!("tape_mode must be 'full' or 'recompute', got '{other}'"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.widths.len() < 2 {
            bail!("model.widths needs at least an input and an output width");
        }
        if self.model.widths.iter().any(|&w| w == 0) {
            bail!("model.widths must all be positive");
        }
        if self.training.batch_size == 0 {
            bail!("training.batch_size must be at least 1");
        }
        if self.training.shards == 0 {
            bail!("training.shards must be at least 1");
        }
        if self.training.t_total == 0 {
            bail!("training.t_total must be at least 1");
        }
        if !(self.training.lr > 0.0) {
            bail!("training.lr must be positive");
        }
        for (name, beta) in [("beta1", self.training.beta1), ("beta2", self.training.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                bail!("training.{name} must lie in [0, 1)");
            }
        }
        if self.output.metrics_every == 0 {
            bail!("output.metrics_every must be at least 1");
        }
        self.mif_params()?;
        self.schedule()?;
        self.tape_mode()?;
        Ok(())
    }
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match probe.parse::<toml::Table>() {
        Ok(mut table) => table.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut node = tree;
    let parts: Vec<&str> = path.split('.').collect();
    let (last, parents) = parts.split_last().context("empty override key")?;
    for part in parents {
        node = node
            .as_table_mut()
            .with_context(|| format!("'{part}' is not a table"))?
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .with_context(|| format!("'{last}' has no parent table"))?
        .insert(last.to_string(), value);
    Ok(())
}

/// The documented schema, emitted by `mifprop config init`. Every key is
/// present with its default value; parsing this text yields exactly
/// `Config::default()` (asserted by a test).
pub const CONFIG_TEMPLATE: &str = r#"# mifprop experiment configuration.
# Any key may also be set on the command line: --override section.key=value

[data]
# Directory with train-images-idx3-ubyte, train-labels-idx1-ubyte,
# t10k-images-idx3-ubyte and t10k-labels-idx1-ubyte. When omitted, the
# MIFPROP_DATA_DIR environment variable is consulted, then data/mnist.
#dir = "data/mnist"

[model]
# Layer widths, input first. The last width is the number of MIF output
# neurons (= classes); every other boundary is a bias-free dense layer with
# ReLU on hidden layers.
widths = [784, 100, 10, 10]

[model.mif]
# Neuron circuit parameters; unset keys keep the stock values
# (e_rest=0, e_reset=50, c=100, k_th=15, v_on=110, v_off=5, r_on=1,
# r_off=100, tau1=tau2=tau_syn=100). The plain v_on/v_off/r_on/r_off keys
# set both memristors; add a 1/2 suffix to pin one of them.
#e_rest = 0.0
#e_reset = 50.0
#c = 100.0
#k_th = 15.0
#v_on = 110.0
#v_off = 5.0
#r_on = 1.0
#r_off = 100.0
#tau1 = 100.0
#tau2 = 100.0
#tau_syn = 100.0
# Use x1 instead of x2 in the on-branch of the reset conductance.
#literal_g2 = false

[training]
# Simulated steps per sample.
t_total = 1000
# Steps at which the input pixels are injected, strictly increasing, all
# below t_total.
injection_steps = [0, 400, 800]
# Multiplier applied to the pixel intensities at each injection.
injection_scale = 1.0
batch_size = 200
epochs = 40
lr = 1e-4
beta1 = 0.9
beta2 = 0.999
seed = 1
# "full" stores every step of the trajectory; "recompute" snapshots every
# segment_len steps and replays each window during the backward pass
# (same gradients to the bit, much less memory).
tape_mode = "full"
segment_len = 100
# Parallel batch shards per training step; results are independent of the
# machine but do depend on this count.
shards = 8
# Path of a checkpoint to continue from.
#resume = "runs/default/checkpoint-epoch-019.mifp"

[output]
dir = "runs/default"
# Append a metrics row every this many training iterations.
metrics_every = 10
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_parses_to_the_defaults() {
        let parsed: Config = toml::from_str(CONFIG_TEMPLATE).unwrap();
        assert_eq!(parsed, Config::default());
    }

    #[test]
    fn overrides_replace_nested_keys() {
        let mut cfg = Config::default();
        cfg.apply_overrides(&[
            "training.lr=5e-3".into(),
            "model.widths=[784,50,10,10]".into(),
            "data.dir=data/desk".into(),
            "model.mif.literal_g2=true".into(),
        ])
        .unwrap();
        assert_eq!(cfg.training.lr, 5e-3);
        assert_eq!(cfg.model.widths, vec![784, 50, 10, 10]);
        assert_eq!(cfg.data.dir, Some(PathBuf::from("data/desk")));
        assert_eq!(cfg.model.mif.literal_g2, Some(true));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[training]\nlearning_rate = 0.1\n").is_err());
        let mut cfg = Config::default();
        assert!(cfg.apply_overrides(&["training.learning_rate=0.1".into()]).is_err());
    }

    #[test]
    fn singleton_mif_keys_set_both_memristors() {
        let mut cfg = Config::default();
        cfg.apply_overrides(&["model.mif.r_on=2.0".into(), "model.mif.r_on2=3.0".into()])
            .unwrap();
        let p = cfg.mif_params().unwrap();
        assert_eq!(p.r_on1, 2.0);
        assert_eq!(p.r_on2, 3.0);
    }
}
