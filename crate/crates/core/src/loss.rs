//! Ranking losses on squared distances between a text query embedding and
//! image embeddings.
//!
//! With `s_p` the query–positive distance and `s_n[i]` the query–negative
//! distances:
//!
//! - positive-aware triplet ranking: `s_p + Σ_i max(0, η − s_n[i])`
//! - triplet: `max(s_p − s_n + ρ, 0)` (exactly one negative)
//! - l2: `s_p`
//!
//! The positive-aware form keeps the pull on `s_p` independent of the hinge
//! on the negatives, unlike the triplet loss where both sit inside one max.

use std::fmt;
use std::str::FromStr;

use crate::diffcore::{sq_dist, squared_distance_backward, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossVariant {
    #[default]
    Patr,
    Triplet,
    L2,
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Patr => "patr",
            LossVariant::Triplet => "triplet",
            LossVariant::L2 => "l2",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "patr" => Ok(LossVariant::Patr),
            "triplet" => Ok(LossVariant::Triplet),
            "l2" => Ok(LossVariant::L2),
            other => Err(Error::config(format!(
                "unknown loss variant {other:?} (expected patr|triplet|l2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub variant: LossVariant,
    /// Negative margin of the positive-aware loss.
    pub eta: f64,
    /// Triplet margin.
    pub rho: f64,
    /// Negatives mined per positive.
    pub n_negatives: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: LossVariant::Patr,
            eta: 1.2,
            rho: 0.5,
            n_negatives: 3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.rho > 0.0) {
            return Err(Error::config("loss margins eta and rho must be positive"));
        }
        if self.n_negatives == 0 {
            return Err(Error::config("n_negatives must be at least 1"));
        }
        if self.variant == LossVariant::Triplet && self.n_negatives != 1 {
            return Err(Error::config(
                "the triplet loss takes exactly one negative (n_negatives = 1)",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletDistances<T> {
    pub s_p: T,
    pub s_n: Vec<T>,
}

/// Loss value with its (sub)gradient with respect to each distance.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub d_sp: T,
    pub d_sn: Vec<T>,
}

pub fn patr<T: Real>(d: &TripletDistances<T>, eta: T) -> Result<T> {
    patr_grad(d, eta).map(|g| g.value)
}

/// `∂/∂s_n[i]` is −1 while `s_n[i] < η` and 0 from `η` on.
pub fn patr_grad<T: Real>(d: &TripletDistances<T>, eta: T) -> Result<LossGrad<T>> {
    if d.s_n.is_empty() {
        return Err(Error::config("positive-aware loss needs at least one negative"));
    }
    let mut value = d.s_p;
    let mut d_sn = Vec::with_capacity(d.s_n.len());
    for &s in &d.s_n {
        if s < eta {
            value = value + (eta - s);
            d_sn.push(-T::one());
        } else {
            d_sn.push(T::zero());
        }
    }
    Ok(LossGrad {
        value,
        d_sp: T::one(),
        d_sn,
    })
}

pub fn triplet<T: Real>(d: &TripletDistances<T>, rho: T) -> Result<T> {
    triplet_grad(d, rho).map(|g| g.value)
}

pub fn triplet_grad<T: Real>(d: &TripletDistances<T>, rho: T) -> Result<LossGrad<T>> {
    let [s_n] = d.s_n[..] else {
        return Err(Error::config(format!(
            "triplet loss takes exactly one negative, got {}",
            d.s_n.len()
        )));
    };
    let margin = d.s_p - s_n + rho;
    Ok(if margin > T::zero() {
        LossGrad {
            value: margin,
            d_sp: T::one(),
            d_sn: vec![-T::one()],
        }
    } else {
        LossGrad {
            value: T::zero(),
            d_sp: T::zero(),
            d_sn: vec![T::zero()],
        }
    })
}

pub fn l2_baseline<T: Real>(d: &TripletDistances<T>) -> T {
    d.s_p
}

fn l2_grad<T: Real>(d: &TripletDistances<T>) -> LossGrad<T> {
    LossGrad {
        value: d.s_p,
        d_sp: T::one(),
        d_sn: vec![T::zero(); d.s_n.len()],
    }
}

pub fn sample_loss<T: Real>(d: &TripletDistances<T>, cfg: &LossConfig) -> Result<LossGrad<T>> {
    match cfg.variant {
        LossVariant::Patr => patr_grad(d, T::lit(cfg.eta)),
        LossVariant::Triplet => triplet_grad(d, T::lit(cfg.rho)),
        LossVariant::L2 => Ok(l2_grad(d)),
    }
}

/// Mean per-sample loss over a batch and its gradient with respect to the
/// query embeddings. `negatives[i]` lists rows of `positives` used as
/// negatives for query `i`. Image embeddings receive no gradient.
pub fn batch_loss<T: Real>(
    queries: &Tensor<T>,
    positives: &Tensor<T>,
    negatives: &[Vec<usize>],
    cfg: &LossConfig,
) -> Result<(T, Tensor<T>)> {
    let b = queries.rows();
    if queries.is_empty() || b == 0 {
        return Err(Error::config("empty batch"));
    }
    if queries.shape() != positives.shape() || negatives.len() != b {
        return Err(Error::config(format!(
            "batch loss shape mismatch: queries {:?}, positives {:?}, {} negative sets",
            queries.shape(),
            positives.shape(),
            negatives.len()
        )));
    }
    let scale = T::one() / T::lit(b as f64);
    let mut total = T::zero();
    let mut dq = Tensor::zeros(queries.shape());
    for i in 0..b {
        let q = queries.row(i);
        let p = positives.row(i);
        if let Some(&bad) = negatives[i].iter().find(|&&j| j >= b) {
            return Err(Error::config(format!("negative index {bad} outside batch of {b}")));
        }
        let d = TripletDistances {
            s_p: sq_dist(q, p),
            s_n: negatives[i].iter().map(|&j| sq_dist(q, positives.row(j))).collect(),
        };
        let g = sample_loss(&d, cfg).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("batch sample {i}: {m}")),
            other => other,
        })?;
        total = total + g.value;
        let row = dq.row_mut(i);
        squared_distance_backward(q, p, g.d_sp * scale, row);
        for (&j, &dn) in negatives[i].iter().zip(&g.d_sn) {
            if dn != T::zero() {
                squared_distance_backward(q, positives.row(j), dn * scale, row);
            }
        }
    }
    Ok((total * scale, dq))
}

/// Average of the caption-batch and click-batch losses.
pub fn multitask_combine<T: Real>(loss_caption: T, loss_click: T) -> T {
    (loss_caption + loss_click) / T::lit(2.0)
}
