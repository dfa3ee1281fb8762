use anyhow::{Context, Result};
use mifprop::mif::simulate_neuron;
use mifprop::{MifParams, SpikeSchedule};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Parses "step:scale,step:scale,..." into a schedule; a bare "step" means
/// scale 1.
pub fn parse_schedule(text: &str) -> Result<SpikeSchedule> {
    let mut entries = Vec::new();
    for part in text.split(',').filter(|p| !p.is_empty()) {
        let (step, scale) = match part.split_once(':') {
            Some((s, v)) => (
                s.trim().parse::<usize>().with_context(|| format!("bad step in '{part}'"))?,
                v.trim().parse::<f64>().with_context(|| format!("bad scale in '{part}'"))?,
            ),
            None => (
                part.trim().parse::<usize>().with_context(|| format!("bad step in '{part}'"))?,
                1.0,
            ),
        };
        entries.push((step, scale));
    }
    Ok(SpikeSchedule::new(entries)?)
}

/// Runs a single neuron and writes the per-step trajectory CSV
/// (`step,v,x1,x2,i,a`, 9 significant digits) into the output directory.
/// Returns the CSV path.
pub fn cmd_simulate(
    params: &MifParams,
    schedule: &SpikeSchedule,
    t_total: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    let traj = simulate_neuron(params, schedule, t_total)?;
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join("waveform.csv");
    let mut out = std::io::BufWriter::new(
        std::fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?,
    );
    writeln!(out, "step,v,x1,x2,i,a")?;
    for (step, st) in traj.iter().enumerate() {
        writeln!(
            out,
            "{step},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
            st.v, st.x1, st.x2, st.i, st.a
        )?;
    }
    out.flush()?;
    Ok(path)
}
