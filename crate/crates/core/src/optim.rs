//! Adam, the full-cohort training loop, and finite-difference gradient checks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::FeatureBag;
use crate::error::{check_dim, Error, Result};
use crate::metrics::c_index;
use crate::numerics::{Mat, Rng};
use crate::survival::{
    cohort_loss, cohort_loss_and_grad, Gradients, MethodKind, Model, ModelConfig, SurvivalLabel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Zero moments shaped like `shapes`, default betas and epsilon.
    pub fn new(shapes: &[usize], lr: f64) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_model(model: &Model, lr: f64) -> Self {
        let shapes: Vec<usize> = model.params().iter().map(|b| b.len()).collect();
        AdamState::new(&shapes, lr)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        check_dim("adam parameter blocks", self.m.len(), params.len())?;
        check_dim("adam gradient blocks", self.m.len(), grads.len())?;
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            check_dim("adam block", m.len(), p.len())?;
            check_dim("adam gradient", m.len(), g.len())?;
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of updates applied so far; 0 is the initialization.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_cindex: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the best validation C-index (earliest on ties), or the
    /// final parameters without a validation set.
    pub model: Model,
    pub selected_epoch: usize,
    pub curve: Vec<CurvePoint>,
}

pub struct Validation<'a> {
    pub bags: &'a [FeatureBag],
    pub labels: &'a [SurvivalLabel],
}

/// Initializes `config` from `cfg.seed` and trains it.
pub fn train(
    config: ModelConfig,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainOutcome> {
    let model = Model::init(config, &mut Rng::new(cfg.seed))?;
    train_model(model, bags, labels, cfg, validation)
}

/// Full-batch Adam on the cohort Cox objective.
pub fn train_model(
    mut model: Model,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
    cfg: &TrainConfig,
    validation: Option<Validation<'_>>,
) -> Result<TrainOutcome> {
    if bags.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "training needs at least 2 patients, got {}",
            bags.len()
        )));
    }
    if !labels.iter().any(|l| l.event) {
        return Err(Error::NoEvents);
    }
    if cfg.epochs == 0 || !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "invalid training schedule {cfg:?}"
        )));
    }
    let mut adam = AdamState::for_model(&model, cfg.lr);
    let mut curve = Vec::with_capacity(cfg.epochs + 1);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 0..=cfg.epochs {
        let (loss, grads) = cohort_loss_and_grad(&model, bags, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "training loss diverged at epoch {epoch}"
            )));
        }
        let val_cindex = match &validation {
            Some(v) => {
                let c = c_index(&model.risks(v.bags)?, v.labels).ok();
                if let Some(c) = c {
                    if best.as_ref().is_none_or(|(b, _, _)| c > *b) {
                        best = Some((c, epoch, model.clone()));
                    }
                }
                c
            }
            None => None,
        };
        curve.push(CurvePoint {
            epoch,
            train_loss: loss,
            val_cindex,
        });
        if epoch < cfg.epochs {
            adam.step(&mut model.params_mut(), &grads)?;
        }
    }
    Ok(match best {
        Some((_, epoch, snapshot)) => TrainOutcome {
            model: snapshot,
            selected_epoch: epoch,
            curve,
        },
        None => TrainOutcome {
            model,
            selected_epoch: cfg.epochs,
            curve,
        },
    })
}

/// Writes `epoch,train_loss,val_cindex`; missing validation values are empty.
pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_cindex"])?;
    for p in curve {
        w.write_record([
            p.epoch.to_string(),
            p.train_loss.to_string(),
            p.val_cindex.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn max_error(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of the cohort objective.
pub fn compare_gradients(
    model: &Model,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
    analytic: &Gradients,
    tolerance: f64,
) -> Result<GradcheckReport> {
    let infos = model.blocks();
    check_dim("gradcheck blocks", infos.len(), analytic.len())?;
    let mut probe = model.clone();
    let mut blocks = Vec::with_capacity(infos.len());
    for (b, info) in infos.iter().enumerate() {
        check_dim("gradcheck block", info.len(), analytic[b].len())?;
        let mut worst = 0.0f64;
        for i in 0..info.len() {
            let original = probe.params()[b][i];
            probe.params_mut()[b][i] = original + GRADCHECK_STEP;
            let up = cohort_loss(&probe, bags, labels)?;
            probe.params_mut()[b][i] = original - GRADCHECK_STEP;
            let down = cohort_loss(&probe, bags, labels)?;
            probe.params_mut()[b][i] = original;
            let numeric = (up - down) / (2.0 * GRADCHECK_STEP);
            let err = relative_error(analytic[b][i], numeric);
            if err.is_nan() {
                worst = f64::INFINITY;
            } else {
                worst = worst.max(err);
            }
        }
        blocks.push(BlockError {
            name: info.name.clone(),
            max_rel_error: worst,
        });
    }
    let passed = blocks.iter().all(|b| b.max_rel_error < tolerance);
    Ok(GradcheckReport {
        blocks,
        tolerance,
        passed,
    })
}

/// End-to-end check of the analytic objective gradient for `model`.
pub fn gradcheck(
    model: &Model,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
    tolerance: f64,
) -> Result<GradcheckReport> {
    let (_, analytic) = cohort_loss_and_grad(model, bags, labels)?;
    compare_gradients(model, bags, labels, &analytic, tolerance)
}

/// A small random cohort and Glorot-initialized model for one method kind:
/// 12 patients, K in 4..=8, F in 3..=8, reduced hidden widths.
pub fn gradcheck_instance(
    kind: MethodKind,
    seed: u64,
) -> Result<(Model, Vec<FeatureBag>, Vec<SurvivalLabel>)> {
    let mut rng = Rng::new(seed);
    let k = 4 + rng.below(5);
    let f = 3 + rng.below(6);
    let n = 12;
    let mut bags = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let data = (0..k * f).map(|_| rng.normal()).collect();
        let mut pos: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut pos);
        bags.push(FeatureBag::new(
            Mat::from_vec(k, f, data)?,
            [pos[0], pos[1], pos[2]],
            format!("g{i}"),
        )?);
        let time = 1.0 + rng.exponential(0.1);
        labels.push(SurvivalLabel::new(time, i == 0 || rng.next_f64() < 0.7)?);
    }
    let config = ModelConfig {
        query_dim: 4,
        info_dim: 3,
        attn_dim: 4,
        hidden_dim: 6,
        ..ModelConfig::new(kind, f)
    };
    Ok((Model::init(config, &mut rng)?, bags, labels))
}

/// Gradient check of every method kind on its [`gradcheck_instance`].
pub fn gradcheck_all(seed: u64, tolerance: f64) -> Result<Vec<(MethodKind, GradcheckReport)>> {
    MethodKind::ALL
        .iter()
        .map(|&kind| {
            let (model, bags, labels) = gradcheck_instance(kind, seed)?;
            Ok((kind, gradcheck(&model, &bags, &labels, tolerance)?))
        })
        .collect()
}
