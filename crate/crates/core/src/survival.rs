//! Cox negative log partial likelihood, risk heads, and the seven trainable
//! method kinds built from an aggregator plus a head.
//!
//! The loss is
//!
//! ```text
//! L(r) = Σ_i δ_i ( -r_i + log Σ_{j: t_j ≥ t_i} exp(r_j) )
//! ```
//!
//! with the risk set inclusive of tied times (Breslow handling).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::aggregation::{
    attnmil_backward, attnmil_forward, daal_backward, daal_forward, pool, AttnMilParams,
    DaalParams, FeatureBag, PoolMode,
};
use crate::error::{check_dim, Error, Result};
use crate::numerics::{glorot_init, Mat, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLabel {
    /// Time to event or censoring, days.
    pub time: f64,
    /// True when death was observed.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::InvalidInput(format!(
                "survival time must be positive, got {time}"
            )));
        }
        Ok(SurvivalLabel { time, event })
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn check_cohort(risks: &[f64], labels: &[SurvivalLabel]) -> Result<()> {
    if risks.is_empty() {
        return Err(Error::EmptyCohort);
    }
    check_dim("cox risks vs labels", labels.len(), risks.len())?;
    if let Some(r) = risks.iter().find(|r| !r.is_finite()) {
        return Err(Error::Numerical(format!("non-finite risk {r}")));
    }
    Ok(())
}

/// Patient indices grouped by equal time, groups in descending time order.
fn tie_groups_desc(labels: &[SurvivalLabel]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[b].time.total_cmp(&labels[a].time).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if labels[g[0]].time == labels[i].time => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// `log Σ_{j: t_j ≥ t_i} exp(r_j)` for every patient, in O(N log N).
fn risk_set_lse(risks: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    let mut out = vec![0.0; risks.len()];
    let mut running = f64::NEG_INFINITY;
    for g in groups {
        for &j in g {
            running = log_add_exp(running, risks[j]);
        }
        for &i in g {
            out[i] = running;
        }
    }
    out
}

/// Negative log partial likelihood.
pub fn cox_loss(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    check_cohort(risks, labels)?;
    let groups = tie_groups_desc(labels);
    let lse = risk_set_lse(risks, &groups);
    Ok(labels
        .iter()
        .zip(risks)
        .zip(&lse)
        .filter(|((l, _), _)| l.event)
        .map(|((_, r), s)| s - r)
        .sum())
}

/// Gradient of [`cox_loss`] with respect to the risks.
pub fn cox_grad(risks: &[f64], labels: &[SurvivalLabel]) -> Result<Vec<f64>> {
    check_cohort(risks, labels)?;
    let groups = tie_groups_desc(labels);
    let lse = risk_set_lse(risks, &groups);
    // Ascending time: log Σ_{i: t_i ≤ t_k, δ_i} exp(-lse_i).
    let mut grad = vec![0.0; risks.len()];
    let mut acc = f64::NEG_INFINITY;
    for g in groups.iter().rev() {
        for &i in g {
            if labels[i].event {
                acc = log_add_exp(acc, -lse[i]);
            }
        }
        for &k in g {
            let share = if acc == f64::NEG_INFINITY {
                0.0
            } else {
                (risks[k] + acc).exp()
            };
            grad[k] = share - if labels[k].event { 1.0 } else { 0.0 };
        }
    }
    Ok(grad)
}

/// Fully connected layer; `bias` absent on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Mat,
    pub bias: Option<Vec<f64>>,
}

/// Fully connected risk head with rectifiers between layers and a scalar,
/// linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskHead {
    pub layers: Vec<Dense>,
}

impl RiskHead {
    /// Single linear layer `in → 1`, no bias.
    pub fn linear(input: usize, rng: &mut Rng) -> Self {
        RiskHead {
            layers: vec![Dense {
                weight: glorot_init(1, input, rng),
                bias: None,
            }],
        }
    }

    /// `in → hidden → 1` with a rectifier; the hidden layer has a zero-initialised bias.
    pub fn mlp(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let first = Dense {
            weight: glorot_init(hidden, input, rng),
            bias: Some(vec![0.0; hidden]),
        };
        let second = Dense {
            weight: glorot_init(1, hidden, rng),
            bias: None,
        };
        RiskHead {
            layers: vec![first, second],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.cols()
    }

    fn validate(&self) -> Result<()> {
        let last = self
            .layers
            .last()
            .ok_or_else(|| Error::InvalidInput("risk head has no layers".into()))?;
        check_dim("risk head output", 1, last.weight.rows())?;
        for pair in self.layers.windows(2) {
            check_dim(
                "risk head layer chain",
                pair[0].weight.rows(),
                pair[1].weight.cols(),
            )?;
        }
        for layer in &self.layers {
            if let Some(b) = &layer.bias {
                check_dim("risk head bias", layer.weight.rows(), b.len())?;
            }
        }
        Ok(())
    }

    /// Activations per layer (post-rectifier for hidden layers).
    fn trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        let mut input = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.weight.rows()];
            layer.weight.matvec_into(&input, &mut out);
            if let Some(b) = &layer.bias {
                out.iter_mut().zip(b).for_each(|(o, bi)| *o += bi);
            }
            if i < last {
                out.iter_mut().for_each(|o| *o = o.max(0.0));
            }
            acts.push(out.clone());
            input = out;
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        check_dim("risk head input", self.input_dim(), x.len())?;
        Ok(self.trace(x).last().map_or(0.0, |a| a[0]))
    }

    /// Adds `d_risk · ∂risk/∂θ` into `grads` (one buffer per block, in
    /// [`RiskHead::blocks`] order) and returns `d_risk · ∂risk/∂x`.
    fn backward(&self, x: &[f64], d_risk: f64, grads: &mut [Vec<f64>]) -> Vec<f64> {
        let acts = self.trace(x);
        let mut delta = vec![d_risk];
        let mut slot = self.block_count();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { x } else { &acts[i - 1] };
            if layer.bias.is_some() {
                slot -= 1;
                grads[slot]
                    .iter_mut()
                    .zip(&delta)
                    .for_each(|(g, d)| *g += d);
            }
            slot -= 1;
            let gw = &mut grads[slot];
            let cols = layer.weight.cols();
            for (r, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (g, &xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(input) {
                        *g += d * xi;
                    }
                }
            }
            let mut dx = vec![0.0; cols];
            layer.weight.matvec_t_acc(&delta, &mut dx);
            if i > 0 {
                // Rectifier derivative from the post-activation value.
                dx.iter_mut().zip(&acts[i - 1]).for_each(|(d, &a)| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = dx;
        }
        delta
    }

    fn block_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 1 + usize::from(l.bias.is_some()))
            .sum()
    }

    fn blocks(&self) -> Vec<BlockInfo> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(BlockInfo::new(
                format!("head.{i}.weight"),
                l.weight.rows(),
                l.weight.cols(),
            ));
            if let Some(b) = &l.bias {
                out.push(BlockInfo::new(format!("head.{i}.bias"), b.len(), 1));
            }
        }
        out
    }

    fn params(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.as_slice());
            if let Some(b) = &l.bias {
                out.push(b.as_slice());
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            if let Some(b) = &mut l.bias {
                out.push(b.as_mut_slice());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "daal-single")]
    DaalSingle,
    #[serde(rename = "daal-multiple")]
    DaalMultiple,
    #[serde(rename = "attn-mil")]
    AttnMil,
    #[serde(rename = "mean-cox")]
    MeanCox,
    #[serde(rename = "max-cox")]
    MaxCox,
    #[serde(rename = "deepsurv-mean")]
    DeepSurvMean,
    #[serde(rename = "deepsurv-max")]
    DeepSurvMax,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::MeanCox,
        MethodKind::MaxCox,
        MethodKind::DeepSurvMean,
        MethodKind::DeepSurvMax,
        MethodKind::AttnMil,
        MethodKind::DaalSingle,
        MethodKind::DaalMultiple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::DaalSingle => "daal-single",
            MethodKind::DaalMultiple => "daal-multiple",
            MethodKind::AttnMil => "attn-mil",
            MethodKind::MeanCox => "mean-cox",
            MethodKind::MaxCox => "max-cox",
            MethodKind::DeepSurvMean => "deepsurv-mean",
            MethodKind::DeepSurvMax => "deepsurv-max",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

/// How DAAL-multiple is trained given that its score is a max over planes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplePlaneTraining {
    /// Loss on `max(r_x, r_y, r_z)`; the subgradient goes to the argmax plane.
    #[default]
    ThroughMax,
    /// Independent Cox losses on each plane's risk, summed; the max is used
    /// only for scoring.
    PerPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: MethodKind,
    pub feature_dim: usize,
    pub query_dim: usize,
    pub info_dim: usize,
    pub attn_dim: usize,
    pub hidden_dim: usize,
    #[serde(default)]
    pub multiple_training: MultiplePlaneTraining,
}

impl ModelConfig {
    pub fn new(kind: MethodKind, feature_dim: usize) -> Self {
        ModelConfig {
            kind,
            feature_dim,
            query_dim: 64,
            info_dim: 64,
            attn_dim: 64,
            hidden_dim: 32,
            multiple_training: MultiplePlaneTraining::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.feature_dim,
            self.query_dim,
            self.info_dim,
            self.attn_dim,
            self.hidden_dim,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Aggregator {
    Daal(DaalParams),
    AttnMil(AttnMilParams),
    Pool(PoolMode),
}

/// Name and shape of one parameter block, in checkpoint order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

impl BlockInfo {
    fn new(name: impl Into<String>, rows: usize, cols: usize) -> Self {
        BlockInfo {
            name: name.into(),
            rows,
            cols,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One gradient buffer per parameter block.
pub type Gradients = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskOutput {
    pub risk: f64,
    /// Per-plane risks `(r_x, r_y, r_z)` for the DAAL kinds.
    pub plane_risks: Option<[f64; 3]>,
}

/// A method kind with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    config: ModelConfig,
    aggregator: Aggregator,
    head: RiskHead,
}

impl Model {
    /// Glorot initialization; aggregator draws precede head draws.
    pub fn init(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let f = config.feature_dim;
        let (aggregator, head) = match config.kind {
            MethodKind::DaalSingle | MethodKind::DaalMultiple => {
                let p = DaalParams::init(f, config.query_dim, config.info_dim, rng);
                (Aggregator::Daal(p), RiskHead::linear(config.info_dim, rng))
            }
            MethodKind::AttnMil => {
                let p = AttnMilParams::init(f, config.attn_dim, rng);
                (Aggregator::AttnMil(p), RiskHead::linear(f, rng))
            }
            MethodKind::MeanCox => (Aggregator::Pool(PoolMode::Mean), RiskHead::linear(f, rng)),
            MethodKind::MaxCox => (Aggregator::Pool(PoolMode::Max), RiskHead::linear(f, rng)),
            MethodKind::DeepSurvMean => (
                Aggregator::Pool(PoolMode::Mean),
                RiskHead::mlp(f, config.hidden_dim, rng),
            ),
            MethodKind::DeepSurvMax => (
                Aggregator::Pool(PoolMode::Max),
                RiskHead::mlp(f, config.hidden_dim, rng),
            ),
        };
        Ok(Model {
            config,
            aggregator,
            head,
        })
    }

    /// Same shapes as [`Model::init`], every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut m = Model::init(config, &mut Rng::new(0))?;
        for block in m.params_mut() {
            block.iter_mut().for_each(|x| *x = 0.0);
        }
        Ok(m)
    }

    /// Assembles a model from explicit parts, checking that they fit `config`.
    pub fn from_parts(config: ModelConfig, aggregator: Aggregator, head: RiskHead) -> Result<Self> {
        config.validate()?;
        head.validate()?;
        let f = config.feature_dim;
        let rep_dim = match (&aggregator, config.kind) {
            (Aggregator::Daal(p), MethodKind::DaalSingle | MethodKind::DaalMultiple) => {
                check_dim("daal W_q columns", f, p.wq.cols())?;
                check_dim("daal W_v columns", f, p.wv.cols())?;
                p.info_dim()
            }
            (Aggregator::AttnMil(p), MethodKind::AttnMil) => {
                check_dim("attention-MIL V columns", f, p.v.cols())?;
                check_dim("attention-MIL w", p.v.rows(), p.w.len())?;
                f
            }
            (Aggregator::Pool(PoolMode::Mean), MethodKind::MeanCox | MethodKind::DeepSurvMean)
            | (Aggregator::Pool(PoolMode::Max), MethodKind::MaxCox | MethodKind::DeepSurvMax) => f,
            _ => {
                return Err(Error::InvalidInput(format!(
                    "aggregator does not match method {}",
                    config.kind
                )))
            }
        };
        check_dim("risk head input", rep_dim, head.input_dim())?;
        Ok(Model {
            config,
            aggregator,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> MethodKind {
        self.config.kind
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn head(&self) -> &RiskHead {
        &self.head
    }

    pub fn blocks(&self) -> Vec<BlockInfo> {
        let mut out = match &self.aggregator {
            Aggregator::Daal(p) => vec![
                BlockInfo::new("daal.w_q", p.wq.rows(), p.wq.cols()),
                BlockInfo::new("daal.w_v", p.wv.rows(), p.wv.cols()),
            ],
            Aggregator::AttnMil(p) => vec![
                BlockInfo::new("attn.v", p.v.rows(), p.v.cols()),
                BlockInfo::new("attn.w", p.w.len(), 1),
            ],
            Aggregator::Pool(_) => Vec::new(),
        };
        out.extend(self.head.blocks());
        out
    }

    pub fn params(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = match &self.aggregator {
            Aggregator::Daal(p) => vec![p.wq.as_slice(), p.wv.as_slice()],
            Aggregator::AttnMil(p) => vec![p.v.as_slice(), &p.w],
            Aggregator::Pool(_) => Vec::new(),
        };
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = match &mut self.aggregator {
            Aggregator::Daal(p) => vec![p.wq.as_mut_slice(), p.wv.as_mut_slice()],
            Aggregator::AttnMil(p) => vec![p.v.as_mut_slice(), &mut p.w],
            Aggregator::Pool(_) => Vec::new(),
        };
        out.extend(self.head.params_mut());
        out
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params().iter().map(|b| vec![0.0; b.len()]).collect()
    }

    fn check_bag(&self, bag: &FeatureBag) -> Result<()> {
        check_dim("bag feature dimension", self.config.feature_dim, bag.dim())
    }

    pub fn forward_risk(&self, bag: &FeatureBag) -> Result<RiskOutput> {
        self.check_bag(bag)?;
        match &self.aggregator {
            Aggregator::Daal(p) => {
                let rep = daal_forward(bag, p)?;
                let mut plane = [0.0; 3];
                for (r, b) in plane.iter_mut().zip(&rep.planes) {
                    *r = self.head.forward(b)?;
                }
                let risk = match self.config.kind {
                    MethodKind::DaalSingle => plane[0],
                    _ => plane[argmax3(&plane)],
                };
                Ok(RiskOutput {
                    risk,
                    plane_risks: Some(plane),
                })
            }
            Aggregator::AttnMil(p) => Ok(RiskOutput {
                risk: self.head.forward(&attnmil_forward(bag, p)?.pooled)?,
                plane_risks: None,
            }),
            Aggregator::Pool(mode) => Ok(RiskOutput {
                risk: self.head.forward(&pool(bag, *mode))?,
                plane_risks: None,
            }),
        }
    }

    pub fn risks(&self, bags: &[FeatureBag]) -> Result<Vec<f64>> {
        bags.iter()
            .map(|b| self.forward_risk(b).map(|r| r.risk))
            .collect()
    }

    /// Adds `d_risk · ∂risk/∂θ` for one patient into `grads`.
    pub fn accumulate_risk_gradient(
        &self,
        bag: &FeatureBag,
        d_risk: f64,
        grads: &mut Gradients,
    ) -> Result<()> {
        match self.config.kind {
            MethodKind::DaalSingle => {
                self.accumulate_plane_gradient(bag, [d_risk, 0.0, 0.0], grads)
            }
            MethodKind::DaalMultiple => {
                let plane = self.forward_risk(bag)?.plane_risks.unwrap_or_default();
                let mut up = [0.0; 3];
                up[argmax3(&plane)] = d_risk;
                self.accumulate_plane_gradient(bag, up, grads)
            }
            _ => {
                self.check_bag(bag)?;
                match &self.aggregator {
                    Aggregator::AttnMil(p) => {
                        let rep = attnmil_forward(bag, p)?;
                        let up = self.head.backward(&rep.pooled, d_risk, &mut grads[2..]);
                        let g = attnmil_backward(bag, p, &up)?;
                        add_into(&mut grads[0], g.v.as_slice());
                        add_into(&mut grads[1], &g.w);
                    }
                    Aggregator::Pool(mode) => {
                        self.head.backward(&pool(bag, *mode), d_risk, grads);
                    }
                    Aggregator::Daal(_) => unreachable!("daal kinds handled above"),
                }
                Ok(())
            }
        }
    }

    /// Adds `Σ_p up[p] · ∂r_p/∂θ` for the three DAAL plane risks.
    pub fn accumulate_plane_gradient(
        &self,
        bag: &FeatureBag,
        up: [f64; 3],
        grads: &mut Gradients,
    ) -> Result<()> {
        self.check_bag(bag)?;
        let Aggregator::Daal(p) = &self.aggregator else {
            return Err(Error::InvalidInput(format!(
                "{} has no plane risks",
                self.config.kind
            )));
        };
        let rep = daal_forward(bag, p)?;
        let mut upstream: [Vec<f64>; 3] = Default::default();
        for (plane, u) in up.iter().enumerate() {
            upstream[plane] = if *u == 0.0 {
                vec![0.0; p.info_dim()]
            } else {
                self.head.backward(&rep.planes[plane], *u, &mut grads[2..])
            };
        }
        let g = daal_backward(bag, p, &upstream)?;
        add_into(&mut grads[0], g.wq.as_slice());
        add_into(&mut grads[1], g.wv.as_slice());
        Ok(())
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax3(v: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

fn check_training_cohort(
    model: &Model,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
) -> Result<()> {
    if bags.is_empty() {
        return Err(Error::EmptyCohort);
    }
    check_dim("bags vs labels", labels.len(), bags.len())?;
    for b in bags {
        model.check_bag(b)?;
    }
    Ok(())
}

/// Training objective over a whole cohort: the Cox loss of the model's risks
/// (or, for per-plane DAAL-multiple training, the sum of the three per-plane
/// Cox losses).
pub fn cohort_loss(model: &Model, bags: &[FeatureBag], labels: &[SurvivalLabel]) -> Result<f64> {
    check_training_cohort(model, bags, labels)?;
    if per_plane(model) {
        let planes = plane_risk_columns(model, bags)?;
        planes.iter().map(|r| cox_loss(r, labels)).sum()
    } else {
        cox_loss(&model.risks(bags)?, labels)
    }
}

/// [`cohort_loss`] and its gradient with respect to every parameter block.
pub fn cohort_loss_and_grad(
    model: &Model,
    bags: &[FeatureBag],
    labels: &[SurvivalLabel],
) -> Result<(f64, Gradients)> {
    check_training_cohort(model, bags, labels)?;
    let mut grads = model.zero_gradients();
    if per_plane(model) {
        let planes = plane_risk_columns(model, bags)?;
        let mut loss = 0.0;
        let mut dr = Vec::with_capacity(3);
        for r in &planes {
            loss += cox_loss(r, labels)?;
            dr.push(cox_grad(r, labels)?);
        }
        for (i, bag) in bags.iter().enumerate() {
            model.accumulate_plane_gradient(bag, [dr[0][i], dr[1][i], dr[2][i]], &mut grads)?;
        }
        Ok((loss, grads))
    } else {
        let risks = model.risks(bags)?;
        let loss = cox_loss(&risks, labels)?;
        let dr = cox_grad(&risks, labels)?;
        for (bag, &d) in bags.iter().zip(&dr) {
            if d != 0.0 {
                model.accumulate_risk_gradient(bag, d, &mut grads)?;
            }
        }
        Ok((loss, grads))
    }
}

fn per_plane(model: &Model) -> bool {
    model.kind() == MethodKind::DaalMultiple
        && model.config.multiple_training == MultiplePlaneTraining::PerPlane
}

fn plane_risk_columns(model: &Model, bags: &[FeatureBag]) -> Result<[Vec<f64>; 3]> {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for bag in bags {
        let p = model.forward_risk(bag)?.plane_risks.unwrap_or_default();
        for (c, r) in cols.iter_mut().zip(p) {
            c.push(r);
        }
    }
    Ok(cols)
}

/// Checkpoint manifest stored as `model.json` beside `params.bin`.
///
/// `params.bin` holds every block of [`CheckpointManifest::blocks`] in order,
/// each row-major, as little-endian f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub method: MethodKind,
    pub config: ModelConfig,
    pub seed: u64,
    /// Median training-set risk, used as the high/low threshold at evaluation.
    pub train_median_risk: Option<f64>,
    pub blocks: Vec<BlockInfo>,
    pub param_file: String,
}

pub const CHECKPOINT_MANIFEST: &str = "model.json";
pub const CHECKPOINT_PARAMS: &str = "params.bin";

pub fn save_checkpoint(
    model: &Model,
    seed: u64,
    train_median_risk: Option<f64>,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        method: model.kind(),
        config: model.config,
        seed,
        train_median_risk,
        blocks: model.blocks(),
        param_file: CHECKPOINT_PARAMS.to_string(),
    };
    let mut blob = Vec::new();
    for block in model.params() {
        for &x in block {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    std::fs::write(dir.join(CHECKPOINT_PARAMS), blob)?;
    std::fs::write(
        dir.join(CHECKPOINT_MANIFEST),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointManifest)> {
    let manifest: CheckpointManifest =
        serde_json::from_slice(&std::fs::read(dir.join(CHECKPOINT_MANIFEST))?)?;
    if manifest.method != manifest.config.kind {
        return Err(Error::format("checkpoint", "method and config disagree"));
    }
    let mut model = Model::zeros(manifest.config)?;
    if model.blocks() != manifest.blocks {
        return Err(Error::format(
            "checkpoint",
            "parameter blocks do not match the method's layout",
        ));
    }
    let blob = std::fs::read(dir.join(&manifest.param_file))?;
    let total: usize = manifest.blocks.iter().map(BlockInfo::len).sum();
    if blob.len() != 4 * total {
        return Err(Error::format(
            "checkpoint",
            format!(
                "expected {} parameter bytes, found {}",
                4 * total,
                blob.len()
            ),
        ));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])));
    for block in model.params_mut() {
        for (x, v) in block.iter_mut().zip(&mut values) {
            *x = v;
        }
    }
    Ok((model, manifest))
}
