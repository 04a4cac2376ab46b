//! Experiment orchestration: cohorts on disk, censoring-stratified splits,
//! synthetic planted-signal cohorts, cross-validation over methods and slice
//! counts, and methods-by-K report tables.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::FeatureBag;
use crate::error::{Error, Result};
use crate::formats::{read_fvec, write_fvec};
use crate::metrics::{c_index, hazard_ratio, majority_vote, median, split_at, Group, RiskGroup};
use crate::numerics::{derive_seed, Mat, Rng};
use crate::optim::{train, TrainConfig, Validation};
use crate::survival::{MethodKind, ModelConfig, SurvivalLabel};

/// One manifest row: `patient_id,time,event,feature_path`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub time: f64,
    pub event: u8,
    pub feature_path: String,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows: Vec<ManifestRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let mut seen = HashSet::new();
    for r in &rows {
        if !seen.insert(r.patient_id.as_str()) {
            return Err(Error::InvalidInput(format!(
                "duplicate patient id '{}'",
                r.patient_id
            )));
        }
        if r.event > 1 {
            return Err(Error::InvalidInput(format!(
                "event for '{}' must be 0 or 1",
                r.patient_id
            )));
        }
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Patients with their feature bags and labels, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub bags: Vec<FeatureBag>,
    pub labels: Vec<SurvivalLabel>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.bags
            .iter()
            .map(|b| b.patient_id().to_string())
            .collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.labels.iter().map(|l| l.event).collect()
    }

    pub fn feature_dim(&self) -> Result<usize> {
        let f = self.bags.first().ok_or(Error::EmptyCohort)?.dim();
        if self.bags.iter().any(|b| b.dim() != f) {
            return Err(Error::InvalidInput(
                "patients have different feature dimensions".into(),
            ));
        }
        Ok(f)
    }

    /// Loads a manifest; feature paths are relative to the manifest's directory.
    pub fn load(manifest: &Path) -> Result<Cohort> {
        let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
        let rows = read_manifest(manifest)?;
        let mut bags = Vec::with_capacity(rows.len());
        let mut labels = Vec::with_capacity(rows.len());
        for r in rows {
            let path = base.join(&r.feature_path);
            let bag = read_fvec(&path, &r.patient_id)
                .map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
            bags.push(bag);
            labels.push(SurvivalLabel::new(r.time, r.event == 1)?);
        }
        Ok(Cohort { bags, labels })
    }

    /// Writes `manifest.csv` and `features/<id>.fvec` under `dir`.
    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let features = dir.join("features");
        std::fs::create_dir_all(&features)?;
        let mut rows = Vec::with_capacity(self.len());
        for (bag, label) in self.bags.iter().zip(&self.labels) {
            let rel = format!("features/{}.fvec", bag.patient_id());
            write_fvec(&dir.join(&rel), bag)?;
            rows.push(ManifestRow {
                patient_id: bag.patient_id().to_string(),
                time: label.time,
                event: u8::from(label.event),
                feature_path: rel,
            });
        }
        let manifest = dir.join("manifest.csv");
        write_manifest(&manifest, &rows)?;
        Ok(manifest)
    }

    fn subset(&self, idx: &[usize]) -> (Vec<FeatureBag>, Vec<SurvivalLabel>) {
        (
            idx.iter().map(|&i| self.bags[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Held-out test ids plus disjoint cross-validation folds over the rest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_ids: Vec<String>,
    pub folds: Vec<Vec<String>>,
    pub seed: u64,
}

impl SplitPlan {
    /// Checks that test and folds partition exactly `ids`.
    pub fn validate(&self, ids: &[String]) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for id in self.test_ids.iter().chain(self.folds.iter().flatten()) {
            if !seen.insert(id) {
                return Err(Error::InvalidInput(format!(
                    "patient '{id}' appears in more than one bucket"
                )));
            }
        }
        let all: HashSet<&str> = ids.iter().map(String::as_str).collect();
        if seen != all {
            return Err(Error::InvalidInput(
                "split plan does not partition the cohort".into(),
            ));
        }
        Ok(())
    }
}

/// Shuffles events and censored patients separately, fills the test set in
/// proportion to the global event ratio, then deals the remaining events and
/// then the remaining censored patients round-robin over the folds.
pub fn stratified_split(
    ids: &[String],
    events: &[bool],
    test_fraction: f64,
    n_folds: usize,
    seed: u64,
) -> Result<SplitPlan> {
    if ids.len() != events.len() {
        return Err(Error::InvalidInput(
            "ids and events differ in length".into(),
        ));
    }
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::InvalidInput(format!(
            "test fraction {test_fraction} not in [0, 1)"
        )));
    }
    if n_folds < 2 {
        return Err(Error::InvalidInput("need at least 2 folds".into()));
    }
    let n = ids.len();
    let mut ev: Vec<usize> = (0..n).filter(|&i| events[i]).collect();
    let mut cens: Vec<usize> = (0..n).filter(|&i| !events[i]).collect();
    let mut rng = Rng::new(seed);
    rng.shuffle(&mut ev);
    rng.shuffle(&mut cens);

    let n_test = (n as f64 * test_fraction).round() as usize;
    let test_events = ((ev.len() * n_test) as f64 / n.max(1) as f64).round() as usize;
    let test_events = test_events.min(ev.len()).min(n_test);
    let test_cens = (n_test - test_events).min(cens.len());
    if ev.len() - test_events < n_folds {
        return Err(Error::InfeasibleSplit(format!(
            "{} events outside the test set cannot give each of {n_folds} folds an event",
            ev.len() - test_events
        )));
    }
    let test_ids = ev[..test_events]
        .iter()
        .chain(&cens[..test_cens])
        .map(|&i| ids[i].clone())
        .collect();
    let mut folds = vec![Vec::new(); n_folds];
    for (c, &i) in ev[test_events..]
        .iter()
        .chain(&cens[test_cens..])
        .enumerate()
    {
        folds[c % n_folds].push(ids[i].clone());
    }
    Ok(SplitPlan {
        test_ids,
        folds,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub k: usize,
    pub f: usize,
    pub signal_dim: usize,
    pub censor_target: f64,
    pub anchor_boost: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 300,
            k: 9,
            f: 16,
            signal_dim: 0,
            censor_target: 0.3,
            anchor_boost: 1.0,
            seed: 0,
        }
    }
}

/// Anchor positions when K slices are laid out as three consecutive plane
/// groups (sizes differ by at most one), each anchored at its middle slice.
pub fn plane_anchor_positions(k: usize) -> [usize; 3] {
    let base = k / 3;
    let rem = k % 3;
    let mut start = 0;
    let mut out = [0; 3];
    for (g, a) in out.iter_mut().enumerate() {
        let size = base + usize::from(g < rem);
        *a = start + size / 2;
        start += size;
    }
    out
}

/// Synthetic cohort plus the latent log-hazards that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub latent_risk: Vec<f64>,
}

/// Planted-signal cohort: latent `ρ ~ N(0,1)` shifts feature `signal_dim` of
/// every slice by `ρ` (anchors by an extra `anchor_boost·ρ`); event times are
/// exponential with rate `exp(ρ)`; uniform censoring is scaled so that the
/// censored fraction is `round(censor_target·N)/N`. Features are rounded to
/// f32 so the in-memory cohort equals its FVEC files.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SyntheticCohort> {
    if cfg.n_patients < 2 || cfg.k < 3 || cfg.f == 0 || cfg.signal_dim >= cfg.f {
        return Err(Error::InvalidInput(format!(
            "invalid synthetic cohort config {cfg:?}"
        )));
    }
    if !(0.0..1.0).contains(&cfg.censor_target)
        || cfg.anchor_boost.is_nan()
        || cfg.anchor_boost < 0.0
    {
        return Err(Error::InvalidInput(format!(
            "invalid synthetic cohort config {cfg:?}"
        )));
    }
    let anchors = plane_anchor_positions(cfg.k);
    let mut rng = Rng::new(cfg.seed);
    let mut bags = Vec::with_capacity(cfg.n_patients);
    let mut latent = Vec::with_capacity(cfg.n_patients);
    let mut event_times = Vec::with_capacity(cfg.n_patients);
    let mut censor_draws = Vec::with_capacity(cfg.n_patients);
    for i in 0..cfg.n_patients {
        let rho = rng.normal();
        let mut data = Vec::with_capacity(cfg.k * cfg.f);
        for s in 0..cfg.k {
            for j in 0..cfg.f {
                let mut x = rng.normal();
                if j == cfg.signal_dim {
                    x += rho;
                    if anchors.contains(&s) {
                        x += cfg.anchor_boost * rho;
                    }
                }
                data.push(f64::from(x as f32));
            }
        }
        let features = Mat::from_vec(cfg.k, cfg.f, data)?;
        bags.push(FeatureBag::new(features, anchors, format!("P{i:04}"))?);
        latent.push(rho);
        event_times.push(365.0 * rng.exponential(rho.exp()));
        censor_draws.push(rng.next_f64());
    }
    // Patient i is censored iff scale < T_i / U_i; pick the scale that censors
    // exactly the target count.
    let n = cfg.n_patients;
    let target = (cfg.censor_target * n as f64).round() as usize;
    let mut ratios: Vec<f64> = event_times
        .iter()
        .zip(&censor_draws)
        .map(|(t, u)| t / u)
        .collect();
    ratios.sort_by(f64::total_cmp);
    let scale = if target == 0 {
        f64::INFINITY
    } else {
        let hi = ratios[n - target];
        let lo = if n - target == 0 {
            0.0
        } else {
            ratios[n - target - 1]
        };
        0.5 * (lo + hi)
    };
    let labels = event_times
        .iter()
        .zip(&censor_draws)
        .map(|(&t, &u)| {
            let c = scale * u;
            if t <= c {
                SurvivalLabel::new(t, true)
            } else {
                SurvivalLabel::new(c, false)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCohort {
        cohort: Cohort { bags, labels },
        latent_risk: latent,
    })
}

/// Null distribution of the C-index of random risk orderings on `labels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NullBaseline {
    pub mean: f64,
    pub std: f64,
    pub permutations: usize,
}

pub fn permutation_null(
    labels: &[SurvivalLabel],
    permutations: usize,
    seed: u64,
) -> Result<NullBaseline> {
    let mut rng = Rng::new(seed);
    let mut ranks: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    let mut values = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        rng.shuffle(&mut ranks);
        values.push(c_index(&ranks, labels)?);
    }
    let (mean, std) = mean_std(&values);
    Ok(NullBaseline {
        mean,
        std,
        permutations,
    })
}

/// Mean and sample standard deviation (zero for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub query_dim: usize,
    pub info_dim: usize,
    pub attn_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        let c = ModelConfig::new(MethodKind::MeanCox, 1);
        ModelDims {
            query_dim: c.query_dim,
            info_dim: c.info_dim,
            attn_dim: c.attn_dim,
            hidden_dim: c.hidden_dim,
        }
    }
}

impl ModelDims {
    pub fn config(&self, kind: MethodKind, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            query_dim: self.query_dim,
            info_dim: self.info_dim,
            attn_dim: self.attn_dim,
            hidden_dim: self.hidden_dim,
            ..ModelConfig::new(kind, feature_dim)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    /// `seed` is the master seed; each cell trains with a derived seed.
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub parallel: bool,
    pub null_permutations: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            train: TrainConfig::default(),
            dims: ModelDims::default(),
            parallel: true,
            null_permutations: 1000,
        }
    }
}

/// One (method, K, fold) run evaluated on the held-out test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: MethodKind,
    pub k: usize,
    pub effective_k: usize,
    pub fold: usize,
    pub seed: u64,
    pub n_test: usize,
    pub c_index: Option<f64>,
    pub threshold: Option<f64>,
    pub hr: Option<f64>,
    pub beta: Option<f64>,
    pub selected_epoch: Option<usize>,
    pub groups: Option<Vec<Group>>,
    pub error: Option<String>,
}

/// Aggregate over the folds of one (method, K).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: MethodKind,
    pub k: usize,
    pub folds_ok: usize,
    pub mean_c_index: Option<f64>,
    pub std_c_index: Option<f64>,
    /// Hazard ratio of the majority-voted risk groups.
    pub hr: Option<f64>,
    pub beta: Option<f64>,
    pub hr_converged: bool,
    pub n_high: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub master_seed: u64,
    pub methods: Vec<MethodKind>,
    pub k_values: Vec<usize>,
    pub n_folds: usize,
    pub test_ids: Vec<String>,
    pub null: Option<NullBaseline>,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<CellSummary>,
}

impl ExperimentResult {
    pub fn summary(&self, method: MethodKind, k: usize) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.method == method && s.k == k)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn method_seed_index(kind: MethodKind) -> u64 {
    MethodKind::ALL.iter().position(|&m| m == kind).unwrap_or(0) as u64
}

/// Seed of one (method, K, fold) cell.
pub fn cell_seed(master: u64, method: MethodKind, k: usize, fold: usize) -> u64 {
    derive_seed(master, &[method_seed_index(method), k as u64, fold as u64])
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

struct CellJob {
    method: MethodKind,
    k: usize,
    fold: usize,
}

struct CvData<'a> {
    cohort: &'a Cohort,
    folds: Vec<Vec<usize>>,
    test: Vec<usize>,
    feature_dim: usize,
    opts: &'a CvOptions,
}

fn run_cell(data: &CvData<'_>, job: &CellJob) -> CellResult {
    let seed = cell_seed(data.opts.train.seed, job.method, job.k, job.fold);
    let mut result = CellResult {
        method: job.method,
        k: job.k,
        effective_k: job.k,
        fold: job.fold,
        seed,
        n_test: data.test.len(),
        c_index: None,
        threshold: None,
        hr: None,
        beta: None,
        selected_epoch: None,
        groups: None,
        error: None,
    };
    if let Err(e) = evaluate_cell(data, job, &mut result) {
        log::warn!("{} K={} fold {}: {e}", job.method, job.k, job.fold);
        result.error = Some(e.to_string());
    }
    result
}

fn evaluate_cell(data: &CvData<'_>, job: &CellJob, out: &mut CellResult) -> Result<()> {
    let restrict = |idx: &[usize]| -> Result<(Vec<FeatureBag>, Vec<SurvivalLabel>)> {
        let (bags, labels) = data.cohort.subset(idx);
        let bags = bags
            .iter()
            .map(|b| b.nearest_to_anchors(job.k))
            .collect::<Result<Vec<_>>>()?;
        Ok((bags, labels))
    };
    let train_idx: Vec<usize> = data
        .folds
        .iter()
        .enumerate()
        .filter(|(f, _)| *f != job.fold)
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    let (train_bags, train_labels) = restrict(&train_idx)?;
    let (val_bags, val_labels) = restrict(&data.folds[job.fold])?;
    let (test_bags, test_labels) = restrict(&data.test)?;
    out.effective_k = train_bags.first().map_or(job.k, FeatureBag::len);

    let cfg = TrainConfig {
        seed: out.seed,
        ..data.opts.train
    };
    let config = data.opts.dims.config(job.method, data.feature_dim);
    let outcome = train(
        config,
        &train_bags,
        &train_labels,
        &cfg,
        Some(Validation {
            bags: &val_bags,
            labels: &val_labels,
        }),
    )?;
    out.selected_epoch = Some(outcome.selected_epoch);
    let model = outcome.model;
    let test_risks = model.risks(&test_bags)?;
    out.c_index = Some(c_index(&test_risks, &test_labels)?);
    let threshold = median(&model.risks(&train_bags)?).ok_or(Error::EmptyCohort)?;
    out.threshold = Some(threshold);
    let groups = split_at(threshold, &test_risks);
    if let Ok(fit) = hazard_ratio(&groups, &test_labels) {
        if fit.converged {
            out.hr = finite(fit.hr);
            out.beta = finite(fit.beta);
        }
    }
    out.groups = Some(groups.assignment);
    Ok(())
}

fn summarize(
    method: MethodKind,
    k: usize,
    cells: &[&CellResult],
    test_labels: &[SurvivalLabel],
) -> CellSummary {
    let ok: Vec<&CellResult> = cells
        .iter()
        .copied()
        .filter(|c| c.c_index.is_some())
        .collect();
    let values: Vec<f64> = ok.iter().filter_map(|c| c.c_index).collect();
    let (mean, std) = if values.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&values);
        (Some(m), Some(s))
    };
    let fold_groups: Vec<RiskGroup> = ok
        .iter()
        .filter_map(|c| {
            Some(RiskGroup {
                assignment: c.groups.clone()?,
                threshold: c.threshold?,
            })
        })
        .collect();
    let mut summary = CellSummary {
        method,
        k,
        folds_ok: ok.len(),
        mean_c_index: mean,
        std_c_index: std,
        hr: None,
        beta: None,
        hr_converged: false,
        n_high: None,
    };
    if let Ok(voted) = majority_vote(&fold_groups) {
        summary.n_high = Some(voted.count(Group::High));
        if let Ok(fit) = hazard_ratio(&voted, test_labels) {
            summary.hr_converged = fit.converged;
            if fit.converged {
                summary.hr = finite(fit.hr);
                summary.beta = finite(fit.beta);
            }
        }
    }
    summary
}

/// Trains and evaluates every (method, K, fold) cell. For fold f the model
/// trains on the other folds, selects its snapshot on fold f, and is scored
/// on the held-out test set. Failed cells are recorded, not propagated.
pub fn run_cv(
    cohort: &Cohort,
    plan: &SplitPlan,
    methods: &[MethodKind],
    k_values: &[usize],
    opts: &CvOptions,
) -> Result<ExperimentResult> {
    let ids = cohort.ids();
    plan.validate(&ids)?;
    if methods.is_empty() || k_values.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one method and one K".into(),
        ));
    }
    if let Some(k) = k_values.iter().find(|&&k| k < 3) {
        return Err(Error::InvalidInput(format!("slice count {k} below 3")));
    }
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let lookup = |v: &[String]| v.iter().map(|id| index[id.as_str()]).collect::<Vec<_>>();
    let data = CvData {
        cohort,
        folds: plan.folds.iter().map(|f| lookup(f)).collect(),
        test: lookup(&plan.test_ids),
        feature_dim: cohort.feature_dim()?,
        opts,
    };
    let test_set: HashSet<usize> = data.test.iter().copied().collect();
    assert!(
        data.folds.iter().flatten().all(|i| !test_set.contains(i)),
        "test patients leaked into training folds"
    );
    let test_labels: Vec<SurvivalLabel> = data.test.iter().map(|&i| cohort.labels[i]).collect();

    let jobs: Vec<CellJob> = methods
        .iter()
        .flat_map(|&method| {
            k_values.iter().flat_map(move |&k| {
                (0..plan.folds.len()).map(move |fold| CellJob { method, k, fold })
            })
        })
        .collect();
    let cells: Vec<CellResult> = if opts.parallel {
        jobs.par_iter().map(|j| run_cell(&data, j)).collect()
    } else {
        jobs.iter().map(|j| run_cell(&data, j)).collect()
    };

    let mut summaries = Vec::new();
    for &method in methods {
        for &k in k_values {
            let group: Vec<&CellResult> = cells
                .iter()
                .filter(|c| c.method == method && c.k == k)
                .collect();
            summaries.push(summarize(method, k, &group, &test_labels));
        }
    }
    let null = if opts.null_permutations > 0 {
        permutation_null(
            &test_labels,
            opts.null_permutations,
            derive_seed(opts.train.seed, &[u64::MAX]),
        )
        .ok()
    } else {
        None
    };
    Ok(ExperimentResult {
        master_seed: opts.train.seed,
        methods: methods.to_vec(),
        k_values: k_values.to_vec(),
        n_folds: plan.folds.len(),
        test_ids: plan.test_ids.clone(),
        null,
        cells,
        summaries,
    })
}

/// Per-fold metrics record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub method: MethodKind,
    pub k: Option<usize>,
    pub fold: Option<usize>,
    pub c_index: Option<f64>,
    pub hr: Option<f64>,
    pub beta: Option<f64>,
    pub n_test: usize,
    pub threshold: Option<f64>,
}

fn table(results: &ExperimentResult, value: impl Fn(&CellSummary) -> Option<f64>) -> String {
    let mut out = String::from("method");
    for k in &results.k_values {
        let _ = write!(out, ",{k}");
    }
    out.push('\n');
    for &m in &results.methods {
        out.push_str(m.name());
        for &k in &results.k_values {
            match results.summary(m, k).and_then(&value) {
                Some(v) => {
                    let _ = write!(out, ",{v:.4}");
                }
                None => out.push_str(",NA"),
            }
        }
        out.push('\n');
    }
    out
}

/// Methods-by-K table of mean test C-index; failed cells read `NA`.
pub fn mean_table(results: &ExperimentResult) -> String {
    table(results, |s| s.mean_c_index)
}

pub fn std_table(results: &ExperimentResult) -> String {
    table(results, |s| s.std_c_index)
}

pub fn hr_table(results: &ExperimentResult) -> String {
    table(results, |s| s.hr)
}

pub fn fold_records(results: &ExperimentResult) -> Vec<MetricsRecord> {
    results
        .cells
        .iter()
        .map(|c| MetricsRecord {
            method: c.method,
            k: Some(c.k),
            fold: Some(c.fold),
            c_index: c.c_index,
            hr: c.hr,
            beta: c.beta,
            n_test: c.n_test,
            threshold: c.threshold,
        })
        .collect()
}

pub const RESULTS_FILE: &str = "results.json";

/// Writes `results.json`, `table_mean.csv`, `table_std.csv`, `table_hr.csv`
/// and `folds.json` into `dir`.
pub fn write_report(results: &ExperimentResult, dir: &Path) -> Result<()> {
    if results.summaries.is_empty() {
        return Err(Error::InvalidInput("no results to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RESULTS_FILE), results.to_json()?)?;
    std::fs::write(dir.join("table_mean.csv"), mean_table(results))?;
    std::fs::write(dir.join("table_std.csv"), std_table(results))?;
    std::fs::write(dir.join("table_hr.csv"), hr_table(results))?;
    std::fs::write(
        dir.join("folds.json"),
        serde_json::to_string_pretty(&fold_records(results))?,
    )?;
    Ok(())
}

pub fn read_results(dir: &Path) -> Result<ExperimentResult> {
    ExperimentResult::from_json(&std::fs::read_to_string(dir.join(RESULTS_FILE))?)
}
