//! Slice-level to patient-level aggregation: anchor attention, gated
//! attention MIL, and mean/max pooling, each with hand-derived gradients.
//!
//! Anchor attention projects every slice `h_s` to a query `q_s = W_q h_s` and
//! an information vector `v_s = W_v h_s`. For each of the three anchors the
//! weights are a softmax over all slices of `<q_s, q_anchor>` (the anchor's
//! own slice included, no temperature), and the plane representation is the
//! weighted sum of the `v_s`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numerics::{dot, glorot_init, softmax, Mat, Rng};

/// K slice feature vectors of one patient plus the positions of the three
/// anchor slices (sagittal, coronal, axial) within the list.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    features: Mat,
    anchor_pos: [usize; 3],
    patient_id: String,
}

impl FeatureBag {
    pub fn new(
        features: Mat,
        anchor_pos: [usize; 3],
        patient_id: impl Into<String>,
    ) -> Result<Self> {
        let k = features.rows();
        if k < 3 {
            return Err(Error::InvalidInput(format!(
                "bag needs at least 3 slices, got {k}"
            )));
        }
        if anchor_pos.iter().any(|&a| a >= k) {
            return Err(Error::InvalidInput(format!(
                "anchor positions {anchor_pos:?} out of range for {k} slices"
            )));
        }
        let [a, b, c] = anchor_pos;
        if a == b || b == c || a == c {
            return Err(Error::InvalidInput(format!(
                "anchor positions {anchor_pos:?} are not distinct"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidInput("non-finite slice features".into()));
        }
        Ok(FeatureBag {
            features,
            anchor_pos,
            patient_id: patient_id.into(),
        })
    }

    /// Number of slices K.
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// Feature dimension F.
    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Mat {
        &self.features
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        self.features.row(s)
    }

    pub fn anchor_pos(&self) -> [usize; 3] {
        self.anchor_pos
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Keeps the `k` slices closest to any anchor (anchors always kept, ties
    /// by lower position), preserving the original order. `k >= len()`
    /// returns the bag unchanged.
    pub fn nearest_to_anchors(&self, k: usize) -> Result<FeatureBag> {
        if k < 3 {
            return Err(Error::InvalidInput(format!("slice count {k} below 3")));
        }
        if k >= self.len() {
            return Ok(self.clone());
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&s| {
            let dist = self
                .anchor_pos
                .iter()
                .map(|&a| a.abs_diff(s))
                .min()
                .unwrap_or(0);
            (dist, s)
        });
        let mut keep = order[..k].to_vec();
        keep.sort_unstable();
        let mut rows = Vec::with_capacity(k);
        for &s in &keep {
            rows.push(self.slice(s).to_vec());
        }
        let remap = |a: usize| keep.iter().position(|&s| s == a).unwrap_or(0);
        FeatureBag::new(
            Mat::from_rows(&rows)?,
            self.anchor_pos.map(remap),
            self.patient_id.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaalParams {
    /// D×F query projection.
    pub wq: Mat,
    /// L×F information projection.
    pub wv: Mat,
}

impl DaalParams {
    pub fn init(feature_dim: usize, query_dim: usize, info_dim: usize, rng: &mut Rng) -> Self {
        DaalParams {
            wq: glorot_init(query_dim, feature_dim, rng),
            wv: glorot_init(info_dim, feature_dim, rng),
        }
    }

    pub fn zeros(feature_dim: usize, query_dim: usize, info_dim: usize) -> Self {
        DaalParams {
            wq: Mat::zeros(query_dim, feature_dim),
            wv: Mat::zeros(info_dim, feature_dim),
        }
    }

    pub fn info_dim(&self) -> usize {
        self.wv.rows()
    }

    fn check(&self, bag: &FeatureBag) -> Result<()> {
        check_dim("daal W_q columns", bag.dim(), self.wq.cols())?;
        check_dim("daal W_v columns", bag.dim(), self.wv.cols())
    }
}

/// Per-anchor patient representations and the attention weights behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRep {
    /// `b_x, b_y, b_z`.
    pub planes: [Vec<f64>; 3],
    /// `U_x, U_y, U_z`, each a K-vector summing to one.
    pub weights: [Vec<f64>; 3],
}

struct DaalTrace {
    q: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    rep: PatientRep,
}

fn daal_trace(bag: &FeatureBag, p: &DaalParams) -> Result<DaalTrace> {
    p.check(bag)?;
    let k = bag.len();
    let mut q = vec![vec![0.0; p.wq.rows()]; k];
    let mut v = vec![vec![0.0; p.wv.rows()]; k];
    for s in 0..k {
        p.wq.matvec_into(bag.slice(s), &mut q[s]);
        p.wv.matvec_into(bag.slice(s), &mut v[s]);
    }
    let plane = |anchor: usize| {
        let logits: Vec<f64> = q.iter().map(|qs| dot(qs, &q[anchor])).collect();
        let weights = softmax(&logits);
        let mut b = vec![0.0; p.wv.rows()];
        for (u, vs) in weights.iter().zip(&v) {
            for (bi, &vi) in b.iter_mut().zip(vs) {
                *bi += u * vi;
            }
        }
        (b, weights)
    };
    let [ax, ay, az] = bag.anchor_pos;
    let (bx, ux) = plane(ax);
    let (by, uy) = plane(ay);
    let (bz, uz) = plane(az);
    Ok(DaalTrace {
        q,
        v,
        rep: PatientRep {
            planes: [bx, by, bz],
            weights: [ux, uy, uz],
        },
    })
}

pub fn daal_forward(bag: &FeatureBag, p: &DaalParams) -> Result<PatientRep> {
    daal_trace(bag, p).map(|t| t.rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaalGrads {
    pub wq: Mat,
    pub wv: Mat,
    /// Gradient with respect to the slice features (K×F).
    pub features: Mat,
}

/// Backpropagates gradients on `b_x, b_y, b_z` to `W_q`, `W_v` and the slice
/// features.
pub fn daal_backward(
    bag: &FeatureBag,
    p: &DaalParams,
    upstream: &[Vec<f64>; 3],
) -> Result<DaalGrads> {
    let trace = daal_trace(bag, p)?;
    for g in upstream {
        check_dim("daal upstream gradient", p.wv.rows(), g.len())?;
    }
    let k = bag.len();
    let mut dq = vec![vec![0.0; p.wq.rows()]; k];
    let mut dv = vec![vec![0.0; p.wv.rows()]; k];
    for (plane, g) in upstream.iter().enumerate() {
        if g.iter().all(|&x| x == 0.0) {
            continue;
        }
        let anchor = bag.anchor_pos[plane];
        let u = &trace.rep.weights[plane];
        // b = Σ u_s v_s
        let du: Vec<f64> = trace.v.iter().map(|vs| dot(g, vs)).collect();
        for (dvs, &us) in dv.iter_mut().zip(u) {
            for (d, &gi) in dvs.iter_mut().zip(g) {
                *d += us * gi;
            }
        }
        // softmax Jacobian
        let mean: f64 = u.iter().zip(&du).map(|(a, b)| a * b).sum();
        let dz: Vec<f64> = u
            .iter()
            .zip(&du)
            .map(|(us, dus)| us * (dus - mean))
            .collect();
        // z_s = <q_s, q_anchor>: q_anchor receives from every s, including itself.
        let qa = trace.q[anchor].clone();
        for s in 0..k {
            for (d, &x) in dq[s].iter_mut().zip(&qa) {
                *d += dz[s] * x;
            }
        }
        for s in 0..k {
            let qs = &trace.q[s];
            for (d, &x) in dq[anchor].iter_mut().zip(qs) {
                *d += dz[s] * x;
            }
        }
    }
    let mut wq = Mat::zeros(p.wq.rows(), p.wq.cols());
    let mut wv = Mat::zeros(p.wv.rows(), p.wv.cols());
    let mut features = Mat::zeros(k, bag.dim());
    for s in 0..k {
        wq.add_outer(&dq[s], bag.slice(s));
        wv.add_outer(&dv[s], bag.slice(s));
        let row = features.row_mut(s);
        p.wq.matvec_t_acc(&dq[s], row);
        p.wv.matvec_t_acc(&dv[s], row);
    }
    Ok(DaalGrads { wq, wv, features })
}

/// Gated attention MIL parameters: `a = softmax_s(wᵀ tanh(V h_s))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnMilParams {
    /// A×F.
    pub v: Mat,
    /// A.
    pub w: Vec<f64>,
}

impl AttnMilParams {
    pub fn init(feature_dim: usize, attn_dim: usize, rng: &mut Rng) -> Self {
        let v = glorot_init(attn_dim, feature_dim, rng);
        let w = glorot_init(attn_dim, 1, rng).as_slice().to_vec();
        AttnMilParams { v, w }
    }

    pub fn zeros(feature_dim: usize, attn_dim: usize) -> Self {
        AttnMilParams {
            v: Mat::zeros(attn_dim, feature_dim),
            w: vec![0.0; attn_dim],
        }
    }

    fn check(&self, bag: &FeatureBag) -> Result<()> {
        check_dim("attention-MIL V columns", bag.dim(), self.v.cols())?;
        check_dim("attention-MIL w", self.v.rows(), self.w.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRep {
    pub pooled: Vec<f64>,
    pub weights: Vec<f64>,
}

struct AttnTrace {
    gates: Vec<Vec<f64>>,
    rep: PooledRep,
}

fn attnmil_trace(bag: &FeatureBag, p: &AttnMilParams) -> Result<AttnTrace> {
    p.check(bag)?;
    let k = bag.len();
    let mut gates = vec![vec![0.0; p.v.rows()]; k];
    let mut scores = Vec::with_capacity(k);
    for (s, g) in gates.iter_mut().enumerate() {
        p.v.matvec_into(bag.slice(s), g);
        g.iter_mut().for_each(|x| *x = x.tanh());
        scores.push(dot(&p.w, g));
    }
    let weights = softmax(&scores);
    let mut pooled = vec![0.0; bag.dim()];
    for (s, &a) in weights.iter().enumerate() {
        for (o, &h) in pooled.iter_mut().zip(bag.slice(s)) {
            *o += a * h;
        }
    }
    Ok(AttnTrace {
        gates,
        rep: PooledRep { pooled, weights },
    })
}

pub fn attnmil_forward(bag: &FeatureBag, p: &AttnMilParams) -> Result<PooledRep> {
    attnmil_trace(bag, p).map(|t| t.rep)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnMilGrads {
    pub v: Mat,
    pub w: Vec<f64>,
    pub features: Mat,
}

pub fn attnmil_backward(
    bag: &FeatureBag,
    p: &AttnMilParams,
    upstream: &[f64],
) -> Result<AttnMilGrads> {
    let trace = attnmil_trace(bag, p)?;
    check_dim("attention-MIL upstream gradient", bag.dim(), upstream.len())?;
    let k = bag.len();
    let a = &trace.rep.weights;
    let mut features = Mat::zeros(k, bag.dim());
    let da: Vec<f64> = (0..k).map(|s| dot(upstream, bag.slice(s))).collect();
    let mean: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
    let mut v = Mat::zeros(p.v.rows(), p.v.cols());
    let mut w = vec![0.0; p.w.len()];
    for s in 0..k {
        let de = a[s] * (da[s] - mean);
        let gate = &trace.gates[s];
        for (wi, &gi) in w.iter_mut().zip(gate) {
            *wi += de * gi;
        }
        let dpre: Vec<f64> =
            p.w.iter()
                .zip(gate)
                .map(|(&wi, &gi)| de * wi * (1.0 - gi * gi))
                .collect();
        v.add_outer(&dpre, bag.slice(s));
        let row = features.row_mut(s);
        for (r, &g) in row.iter_mut().zip(upstream) {
            *r += a[s] * g;
        }
        p.v.matvec_t_acc(&dpre, row);
    }
    Ok(AttnMilGrads { v, w, features })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Mean,
    Max,
}

/// Coordinatewise mean or max over the slices.
pub fn pool(bag: &FeatureBag, mode: PoolMode) -> Vec<f64> {
    let k = bag.len();
    match mode {
        PoolMode::Mean => {
            let mut out = vec![0.0; bag.dim()];
            for s in 0..k {
                for (o, &h) in out.iter_mut().zip(bag.slice(s)) {
                    *o += h;
                }
            }
            out.iter_mut().for_each(|o| *o /= k as f64);
            out
        }
        PoolMode::Max => {
            let mut out = bag.slice(0).to_vec();
            for s in 1..k {
                for (o, &h) in out.iter_mut().zip(bag.slice(s)) {
                    if h > *o {
                        *o = h;
                    }
                }
            }
            out
        }
    }
}

/// Gradient of `pool` with respect to the slice features; max routes to the
/// first maximizing slice.
pub fn pool_backward(bag: &FeatureBag, mode: PoolMode, upstream: &[f64]) -> Result<Mat> {
    check_dim("pool upstream gradient", bag.dim(), upstream.len())?;
    let k = bag.len();
    let mut grad = Mat::zeros(k, bag.dim());
    match mode {
        PoolMode::Mean => {
            for s in 0..k {
                for (g, &u) in grad.row_mut(s).iter_mut().zip(upstream) {
                    *g = u / k as f64;
                }
            }
        }
        PoolMode::Max => {
            for (j, &u) in upstream.iter().enumerate() {
                let mut best = 0;
                for s in 1..k {
                    if bag.features.get(s, j) > bag.features.get(best, j) {
                        best = s;
                    }
                }
                grad.set(best, j, u);
            }
        }
    }
    Ok(grad)
}
