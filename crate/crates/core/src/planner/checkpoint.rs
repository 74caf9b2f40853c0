//! Versioned JSON checkpoints and line-delimited loss logs.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::autodiff::Mat;
use super::model::{ModelConfig, PlannerModel};
use super::normalize::PlanNormalizer;
use super::schedule::NoiseSchedule;
use super::train::LossRecord;
use super::PlannerError;

pub const CHECKPOINT_FORMAT: &str = "lcsim-planner";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    schedule: NoiseSchedule,
    normalizer: PlanNormalizer,
    params: Vec<NamedTensor>,
}

pub fn checkpoint_to_json(model: &PlannerModel) -> Result<String, PlannerError> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: model.config,
        schedule: model.schedule,
        normalizer: model.normalizer,
        params: model
            .params
            .iter()
            .map(|(_, name, m)| NamedTensor {
                name: name.to_string(),
                rows: m.rows,
                cols: m.cols,
                data: m.data.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&file).map_err(|e| PlannerError::Checkpoint(e.to_string()))
}

pub fn checkpoint_from_json(text: &str) -> Result<PlannerModel, PlannerError> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| PlannerError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(PlannerError::Checkpoint(format!("not a planner checkpoint: {}", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(PlannerError::Checkpoint(format!("unsupported checkpoint version {}", file.version)));
    }
    let mut model = PlannerModel::new(file.config, file.schedule, file.normalizer, 0)?;
    let mut named = Vec::with_capacity(file.params.len());
    for t in file.params {
        if t.data.len() != t.rows * t.cols {
            return Err(PlannerError::Checkpoint(format!("tensor {} has the wrong size", t.name)));
        }
        named.push((t.name, Mat::from_vec(t.rows, t.cols, t.data)));
    }
    model.load_params(named)?;
    Ok(model)
}

pub fn save_checkpoint(model: &PlannerModel, path: &Path) -> Result<(), PlannerError> {
    std::fs::write(path, checkpoint_to_json(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<PlannerModel, PlannerError> {
    checkpoint_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_losses(records: &[LossRecord], mut out: impl Write) -> Result<(), PlannerError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| PlannerError::Checkpoint(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_losses(input: impl BufRead) -> Result<Vec<LossRecord>, PlannerError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PlannerError::Checkpoint(e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PlannerModel {
        let cfg = ModelConfig {
            hidden: 8,
            heads: 2,
            head_dim: 4,
            future_steps: 3,
            freq_bands: 2,
            edge_hidden: 4,
            ..ModelConfig::default()
        };
        PlannerModel::new(cfg, NoiseSchedule::default(), PlanNormalizer::identity(0.1), 11).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = tiny();
        let back = checkpoint_from_json(&checkpoint_to_json(&m).unwrap()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.config, m.config);
        assert_eq!(back.normalizer, m.normalizer);
    }

    #[test]
    fn rejects_tampered_files() {
        let text = checkpoint_to_json(&tiny()).unwrap();
        assert!(checkpoint_from_json(&text.replace("\"version\":1", "\"version\":9")).is_err());
        assert!(checkpoint_from_json(&text.replace("lcsim-planner", "other")).is_err());
        assert!(checkpoint_from_json(&text.replace("\"name\":\"enc.m2m.q.w\"", "\"name\":\"bogus\"")).is_err());
        assert!(checkpoint_from_json("{").is_err());
    }

    #[test]
    fn loss_log_round_trip() {
        let recs = vec![
            LossRecord { step: 0, loss: 0.5, lr: 1e-5 },
            LossRecord { step: 1, loss: 0.25, lr: 2e-5 },
        ];
        let mut buf = Vec::new();
        write_losses(&recs, &mut buf).unwrap();
        assert_eq!(read_losses(buf.as_slice()).unwrap(), recs);
    }
}
