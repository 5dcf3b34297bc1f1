//! Training objectives: the weighted soft-margin triplet loss over the
//! exhaustive set of in-batch pairs, and the counterfactual penalty pushing
//! real embeddings away from randomly-modulated ones.
//!
//! Every loss exists twice: an f64 scalar evaluator (the reference used by
//! logging and tests) and a graph form (the differentiable path used by
//! training). A cross-check test keeps the two within f32 tolerance.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use ndarray::{Array2, ArrayView1};

fn softplus(x: f64) -> f64 {
    crate::graph::softplus_f64(x)
}

/// Loss weights. `alpha` sharpens the triplet margin; the `beta` pair tunes
/// the counterfactual terms per view.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta_ground: f64,
    pub beta_aerial: f64,
    pub cf_enabled: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10.0,
            beta_ground: 5.0,
            beta_aerial: 5.0,
            cf_enabled: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 || !self.alpha.is_finite() {
            return Err(Error::InvalidParam(format!(
                "alpha must be > 0, got {}",
                self.alpha
            )));
        }
        for (name, b) in [
            ("beta_ground", self.beta_ground),
            ("beta_aerial", self.beta_aerial),
        ] {
            if b <= 0.0 || !b.is_finite() {
                return Err(Error::InvalidParam(format!("{name} must be > 0, got {b}")));
            }
        }
        Ok(())
    }
}

/// Row-aligned embedding matrices: row m of each view is a matched pair.
#[derive(Debug, Clone)]
pub struct BatchEmbeddings {
    pub ground: Array2<f32>,
    pub aerial: Array2<f32>,
}

impl BatchEmbeddings {
    pub fn new(ground: Array2<f32>, aerial: Array2<f32>) -> Result<Self> {
        if ground.nrows() != aerial.nrows() || ground.ncols() != aerial.ncols() {
            return Err(Error::Shape(format!(
                "batch embeddings must align: ground {:?} vs aerial {:?}",
                ground.dim(),
                aerial.dim()
            )));
        }
        Ok(Self { ground, aerial })
    }

    pub fn len(&self) -> usize {
        self.ground.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.ground.nrows() == 0
    }
}

fn l2_distance(a: ArrayView1<f32>, b: ArrayView1<f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Weighted soft-margin term: log(1 + exp(alpha * (d(a,p) - d(a,n)))).
pub fn triplet_term(
    anchor: ArrayView1<f32>,
    positive: ArrayView1<f32>,
    negative: ArrayView1<f32>,
    alpha: f64,
) -> Result<f64> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::Shape(format!(
            "triplet dims differ: {} / {} / {}",
            anchor.len(),
            positive.len(),
            negative.len()
        )));
    }
    let d_pos = l2_distance(anchor, positive);
    let d_neg = l2_distance(anchor, negative);
    Ok(softplus(alpha * (d_pos - d_neg)))
}

/// Exhaustive in-batch strategy: every ordered pair (m, n), m != n, in both
/// anchor directions — 2*N*(N-1) terms, averaged.
pub fn exhaustive_triplet_loss(batch: &BatchEmbeddings, alpha: f64) -> Result<f64> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "exhaustive triplet loss needs at least 2 pairs, got {n}"
        )));
    }
    // d[m][k] = d(ground_m, aerial_k); both anchor directions read from it.
    let mut d = vec![0.0f64; n * n];
    for m in 0..n {
        for k in 0..n {
            d[m * n + k] = l2_distance(batch.ground.row(m), batch.aerial.row(k));
        }
    }
    let mut acc = 0.0f64;
    for m in 0..n {
        for k in 0..n {
            if m == k {
                continue;
            }
            // Ground anchor m with aerial negative k.
            acc += softplus(alpha * (d[m * n + m] - d[m * n + k]));
            // Aerial anchor m with ground negative k.
            acc += softplus(alpha * (d[m * n + m] - d[k * n + m]));
        }
    }
    Ok(acc / (2 * n * (n - 1)) as f64)
}

/// Counterfactual penalty: log(1 + exp(-beta * d(f, f_hat))). Maximized
/// distance drives it to 0; coincident inputs give log 2.
pub fn counterfactual_loss(f: ArrayView1<f32>, f_hat: ArrayView1<f32>, beta: f64) -> Result<f64> {
    if f.len() != f_hat.len() {
        return Err(Error::Shape(format!(
            "counterfactual dims differ: {} vs {}",
            f.len(),
            f_hat.len()
        )));
    }
    Ok(softplus(-beta * l2_distance(f, f_hat)))
}

/// Batch counterfactual loss: per-sample values averaged.
pub fn batch_counterfactual_loss(f: &Array2<f32>, f_hat: &Array2<f32>, beta: f64) -> Result<f64> {
    if f.dim() != f_hat.dim() {
        return Err(Error::Shape(format!(
            "counterfactual batch dims differ: {:?} vs {:?}",
            f.dim(),
            f_hat.dim()
        )));
    }
    if f.nrows() == 0 {
        return Err(Error::InvalidParam("empty counterfactual batch".into()));
    }
    let mut acc = 0.0;
    for (fr, hr) in f.rows().into_iter().zip(f_hat.rows()) {
        acc += softplus(-beta * l2_distance(fr, hr));
    }
    Ok(acc / f.nrows() as f64)
}

/// Per-term breakdown of the combined objective, as logged per step.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub triplet: f64,
    pub cf_aerial: f64,
    pub cf_ground: f64,
}

/// Combined objective: triplet + per-view counterfactual terms (zeros when
/// disabled).
pub fn total_loss(
    batch: &BatchEmbeddings,
    cf: Option<(&Array2<f32>, &Array2<f32>)>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let triplet = exhaustive_triplet_loss(batch, cfg.alpha)?;
    let (cf_ground, cf_aerial) = match (cfg.cf_enabled, cf) {
        (true, Some((ground_hat, aerial_hat))) => (
            batch_counterfactual_loss(&batch.ground, ground_hat, cfg.beta_ground)?,
            batch_counterfactual_loss(&batch.aerial, aerial_hat, cfg.beta_aerial)?,
        ),
        _ => (0.0, 0.0),
    };
    Ok(LossBreakdown {
        total: triplet + cf_aerial + cf_ground,
        triplet,
        cf_aerial,
        cf_ground,
    })
}

/// Node handles for the differentiable loss terms of one step.
pub struct GraphLossTerms {
    pub total: NodeId,
    pub triplet: NodeId,
    pub cf_aerial: NodeId,
    pub cf_ground: NodeId,
}

/// Differentiable exhaustive triplet loss over per-sample embedding nodes.
pub fn graph_triplet_loss(
    g: &mut Graph,
    ground: &[NodeId],
    aerial: &[NodeId],
    alpha: f64,
) -> NodeId {
    assert_eq!(ground.len(), aerial.len(), "batch views must align");
    let n = ground.len();
    assert!(n >= 2, "need at least 2 pairs");
    let mut dist = vec![0usize; n * n];
    for m in 0..n {
        for k in 0..n {
            dist[m * n + k] = g.distance(ground[m], aerial[k]);
        }
    }
    let mut terms = Vec::with_capacity(2 * n * (n - 1));
    for m in 0..n {
        for k in 0..n {
            if m == k {
                continue;
            }
            for d_neg in [dist[m * n + k], dist[k * n + m]] {
                let margin = g.sub(dist[m * n + m], d_neg);
                let scaled = g.scale(margin, alpha as f32);
                terms.push(g.softplus(scaled));
            }
        }
    }
    g.mean_many(terms)
}

/// Differentiable batch counterfactual loss.
pub fn graph_cf_loss(g: &mut Graph, real: &[NodeId], imaginary: &[NodeId], beta: f64) -> NodeId {
    assert_eq!(real.len(), imaginary.len(), "cf views must align");
    assert!(!real.is_empty());
    let mut terms = Vec::with_capacity(real.len());
    for (&f, &fh) in real.iter().zip(imaginary.iter()) {
        let d = g.distance(f, fh);
        let scaled = g.scale(d, -beta as f32);
        terms.push(g.softplus(scaled));
    }
    g.mean_many(terms)
}

/// Differentiable combined objective.
pub fn graph_total_loss(
    g: &mut Graph,
    ground: &[NodeId],
    aerial: &[NodeId],
    cf: Option<(&[NodeId], &[NodeId])>,
    cfg: &LossConfig,
) -> GraphLossTerms {
    let triplet = graph_triplet_loss(g, ground, aerial, cfg.alpha);
    let (cf_ground, cf_aerial) = match (cfg.cf_enabled, cf) {
        (true, Some((ground_hat, aerial_hat))) => (
            graph_cf_loss(g, ground, ground_hat, cfg.beta_ground),
            graph_cf_loss(g, aerial, aerial_hat, cfg.beta_aerial),
        ),
        _ => (g.scalar_const(0.0), g.scalar_const(0.0)),
    };
    let total = g.add_many(vec![triplet, cf_aerial, cf_ground]);
    GraphLossTerms {
        total,
        triplet,
        cf_aerial,
        cf_ground,
    }
}
