//! Denoising-score training over batched scene graphs, and self-baseline
//! evaluation by sampled minADE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::metrics::{min_ade_fde, AdeFde, Selection};

use super::autodiff::{AdamW, Graph, Mat, OneCycle, ParamStore};
use super::corpus::PlanSample;
use super::guides::GuideSpec;
use super::model::PlannerModel;
use super::rollout::generate_plan;
use super::scene::SceneGraph;
use super::schedule::NoiseSchedule;
use super::PlannerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Weight rows by `1 / c_out²` instead of taking the plain loss.
    pub edm_weighting: bool,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 16,
            learning_rate: 5e-4,
            weight_decay: 0.03,
            seed: 0,
            edm_weighting: false,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
}

impl TrainReport {
    /// Mean loss over records `from..to` (clamped).
    pub fn mean_loss(&self, from: usize, to: usize) -> f64 {
        let to = to.min(self.losses.len());
        let from = from.min(to);
        if from == to {
            return f64::NAN;
        }
        self.losses[from..to].iter().map(|r| r.loss).sum::<f64>() / (to - from) as f64
    }
}

fn check_data(model: &PlannerModel, data: &[PlanSample]) -> Result<(), PlannerError> {
    if data.is_empty() {
        return Err(PlannerError::Config("training data is empty".into()));
    }
    let cols = model.config.plan_width();
    for s in data {
        if s.target.iter().any(|r| r.len() != cols) {
            return Err(PlannerError::Config(format!("plan rows must have {cols} entries")));
        }
        if s.graph.history_steps != model.config.scene.history_steps {
            return Err(PlannerError::Config("history length differs from the model".into()));
        }
    }
    Ok(())
}

/// Trains in place. `on_step` sees every loss record as it is produced. On a
/// non-finite loss the parameters are restored to the last finite step and
/// an error is returned.
pub fn train(
    model: &mut PlannerModel,
    data: &[PlanSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&LossRecord),
) -> Result<TrainReport, PlannerError> {
    if cfg.steps == 0 {
        return Ok(TrainReport::default());
    }
    check_data(model, data)?;
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(PlannerError::Config(format!("invalid training configuration {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(&model.params, cfg.weight_decay);
    let sched = OneCycle::new(cfg.learning_rate, cfg.steps);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut last_good: ParamStore = model.params.clone();
    let mut report = TrainReport::default();
    let targets: Vec<Mat> = data.iter().map(|s| s.normalized_target(&model.normalizer)).collect();

    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size.min(data.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let graphs: Vec<&SceneGraph> = batch.iter().map(|&i| &data[i].graph).collect();
        let scene = SceneGraph::batch(&graphs);
        let rows = scene.agent_count();
        let cols = model.config.plan_width();
        let mut x0 = Mat::zeros(rows, cols);
        let mut mask = Vec::with_capacity(rows);
        let mut sigmas = Vec::with_capacity(rows);
        let mut r = 0;
        for &i in &batch {
            let sigma = model.schedule.sample_training_sigma(&mut rng);
            for a in 0..data[i].graph.agent_count() {
                x0.row_mut(r).copy_from_slice(targets[i].row(a));
                mask.push(data[i].mask[a]);
                sigmas.push(sigma);
                r += 1;
            }
        }
        let eps = Mat::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect(),
        );
        let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (loss, mut grads) = {
            let mut g = Graph::new(&model.params);
            let l = model.loss(&mut g, &scene, &x0, &mask, &sigmas, &eps, cfg.edm_weighting, Some(&mut drop_rng));
            let loss = g.value(l).data[0];
            if !loss.is_finite() {
                model.params = last_good;
                return Err(PlannerError::Diverged { step });
            }
            (loss, g.backward(l))
        };
        if cfg.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > cfg.grad_clip {
                grads.scale(cfg.grad_clip / norm);
            }
        }
        let lr = sched.lr(step);
        last_good = model.params.clone();
        opt.update(&mut model.params, &grads, lr);
        if !model.params.is_finite() {
            model.params = last_good;
            return Err(PlannerError::Diverged { step });
        }
        let rec = LossRecord { step, loss, lr };
        on_step(&rec);
        report.losses.push(rec);
    }
    Ok(report)
}

/// Mean minADE / minFDE over every observed agent, drawing `k` plans per
/// scene with the given sampling schedule.
pub fn evaluate_min_ade(
    model: &PlannerModel,
    data: &[PlanSample],
    k: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<AdeFde, PlannerError> {
    let (mut ade, mut fde, mut n) = (0.0, 0.0, 0usize);
    let none = GuideSpec::default();
    for (si, s) in data.iter().enumerate() {
        let mut per_sample = Vec::with_capacity(k);
        for j in 0..k {
            let seed = seed
                .wrapping_mul(31)
                .wrapping_add((si * 1000 + j) as u64);
            let out = generate_plan(model, &s.graph, &[], &none, schedule, seed)?;
            per_sample.push(out.plan);
        }
        for a in 0..s.graph.agent_count() {
            if !s.mask[a] {
                continue;
            }
            let trajs: Vec<Vec<crate::geometry::Vec2>> = per_sample
                .iter()
                .map(|p| p.trajectory(a, s.graph.agent_states[a])[1..].iter().map(|st| st.position).collect())
                .collect();
            let r = min_ade_fde(&trajs, &s.future[a], Selection::Independent)
                .map_err(|e| PlannerError::Config(e.to_string()))?;
            ade += r.min_ade;
            fde += r.min_fde;
            n += 1;
        }
    }
    if n == 0 {
        return Err(PlannerError::Config("no observed agents to evaluate".into()));
    }
    Ok(AdeFde {
        min_ade: ade / n as f64,
        min_fde: fde / n as f64,
    })
}
