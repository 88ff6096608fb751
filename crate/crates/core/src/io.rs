//! File formats.
//!
//! * MDP / instance: JSON `{"n_states", "n_actions", "discount", "initial_dist",
//!   "transition": [[[f64]]], "reward"?: [[f64]]}`.
//! * Transitions: JSON lines `{"s": int, "a": int, "sp": int}`.
//! * Expert demonstrations: JSON `{"horizon": int, "trajectories": [[[s, a], ...], ...]}`.
//! * Reward checkpoint: JSON `{"kind", "c_r", "theta", "feature_spec"}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data_gen::ExpertDataset;
use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;
use crate::reward::RewardCheckpoint;
use crate::world_model::{Transition, TransitionDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    initial_dist: Vec<f64>,
    transition: Vec<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reward: Option<Vec<Vec<f64>>>,
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        message: e.to_string(),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Parses an MDP, returning the optional ground-truth reward alongside it.
pub fn parse_mdp(text: &str) -> Result<(TabularMdp, Option<Array2<f64>>)> {
    let file: MdpFile = serde_json::from_str(text).map_err(json_error)?;
    let (n_s, n_a) = (file.n_states, file.n_actions);
    if file.transition.len() != n_s
        || file.transition.iter().any(|rows| rows.len() != n_a || rows.iter().any(|r| r.len() != n_s))
    {
        return Err(invalid(format!("transition must have shape [{n_s}][{n_a}][{n_s}]")));
    }
    let flat: Vec<f64> = file.transition.into_iter().flatten().flatten().collect();
    let transition = Array3::from_shape_vec((n_s, n_a, n_s), flat).map_err(|e| invalid(e.to_string()))?;
    if file.initial_dist.len() != n_s {
        return Err(invalid(format!("initial_dist must have {n_s} entries")));
    }
    let mdp = TabularMdp::new(transition, Array1::from(file.initial_dist), file.discount)?;
    let reward = match file.reward {
        None => None,
        Some(rows) => {
            if rows.len() != n_s || rows.iter().any(|r| r.len() != n_a) {
                return Err(invalid(format!("reward must have shape [{n_s}][{n_a}]")));
            }
            let r = Array2::from_shape_vec((n_s, n_a), rows.into_iter().flatten().collect())
                .map_err(|e| invalid(e.to_string()))?;
            if r.iter().any(|x| !x.is_finite()) {
                return Err(invalid("reward contains non-finite values"));
            }
            Some(r)
        }
    };
    Ok((mdp, reward))
}

pub fn mdp_to_json(mdp: &TabularMdp, reward: Option<&Array2<f64>>) -> Result<String> {
    let p = mdp.transition();
    let file = MdpFile {
        n_states: mdp.n_states(),
        n_actions: mdp.n_actions(),
        discount: mdp.discount(),
        initial_dist: mdp.initial_dist().to_vec(),
        transition: p.outer_iter().map(|m| m.outer_iter().map(|r| r.to_vec()).collect()).collect(),
        reward: reward.map(|r| r.outer_iter().map(|row| row.to_vec()).collect()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn read_mdp(path: &Path) -> Result<(TabularMdp, Option<Array2<f64>>)> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    parse_mdp(&text)
}

pub fn write_mdp(path: &Path, mdp: &TabularMdp, reward: Option<&Array2<f64>>) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", mdp_to_json(mdp, reward)?)?;
    w.flush()?;
    Ok(())
}

/// Parses JSON-lines transitions. Blank lines are skipped; errors carry 1-based line numbers.
pub fn parse_transitions<R: BufRead>(reader: R, n_states: usize, n_actions: usize) -> Result<TransitionDataset> {
    let mut data = TransitionDataset::empty(n_states, n_actions);
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        data.push(t).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(data)
}

pub fn read_transitions(path: &Path, n_states: usize, n_actions: usize) -> Result<TransitionDataset> {
    parse_transitions(open(path)?, n_states, n_actions)
}

pub fn write_transitions(path: &Path, data: &TransitionDataset) -> Result<()> {
    let mut w = create(path)?;
    for t in data.triples() {
        writeln!(w, "{}", serde_json::to_string(t)?)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct ExpertFile {
    horizon: usize,
    trajectories: Vec<Vec<(usize, usize)>>,
    #[serde(default)]
    source_seed: u64,
}

pub fn parse_expert_dataset(text: &str) -> Result<ExpertDataset> {
    let file: ExpertFile = serde_json::from_str(text).map_err(json_error)?;
    ExpertDataset::new(file.horizon, file.trajectories, file.source_seed)
}

pub fn read_expert_dataset(path: &Path) -> Result<ExpertDataset> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    parse_expert_dataset(&text)
}

pub fn write_expert_dataset(path: &Path, data: &ExpertDataset) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, data)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<RewardCheckpoint> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    serde_json::from_str(&text).map_err(json_error)
}

pub fn write_checkpoint(path: &Path, ckpt: &RewardCheckpoint) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, ckpt)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
