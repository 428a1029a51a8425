//! Distribution-aligned augmented regression loss.
//!
//! Three terms over a batch of predictions:
//! - a distribution term: L1 distance between the differentiably sorted
//!   predictions and evenly spaced quantiles of a truncated-normal prior
//!   built from the training labels (sigma shrunk by 0.8, floored by a
//!   small epsilon per bin, renormalized);
//! - a point term: plain mean absolute error;
//! - a slope regularizer: (beta - 1)^2 where beta is the regression slope
//!   of targets on predictions with population moments.
//!
//! The theoretical distribution is a vector over label bins while the
//! sorted prediction vector has batch length; the two are compared by
//! realizing the prior as the batch-size set of its evenly spaced
//! quantiles, the standard construction for this alignment.

use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, VarId};

pub const SIGMA_SHRINK: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub mu: f64,
    pub sigma: f64,
    pub shrink: f64,
    pub label_min: f64,
    pub label_max: f64,
    pub step: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorVector {
    pub spec: PriorSpec,
    pub bin_centers: Vec<f64>,
    pub probs: Vec<f64>,
    cdf: Vec<f64>,
}

/// Truncated-normal prior over the observed label range.
pub fn build_prior(
    train_labels: &[f64],
    step: f64,
    epsilon: f64,
) -> Result<PriorVector> {
    if train_labels.len() < 2 {
        return Err(Error::Contract("prior needs at least 2 labels".into()));
    }
    if step <= 0.0 || epsilon <= 0.0 {
        return Err(Error::Config("prior step and epsilon must be > 0".into()));
    }
    let n = train_labels.len() as f64;
    let mu = train_labels.iter().sum::<f64>() / n;
    let var = train_labels.iter().map(|l| (l - mu).powi(2)).sum::<f64>() / n;
    let sigma = var.sqrt();
    if sigma == 0.0 {
        return Err(Error::Contract(
            "all labels identical: prior sigma is zero".into(),
        ));
    }
    let label_min = train_labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let label_max = train_labels
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let spec = PriorSpec {
        mu,
        sigma,
        shrink: SIGMA_SHRINK,
        label_min,
        label_max,
        step,
        epsilon,
    };
    build_prior_from_spec(spec)
}

pub fn build_prior_from_spec(spec: PriorSpec) -> Result<PriorVector> {
    if spec.sigma <= 0.0 || spec.label_min >= spec.label_max || spec.step <= 0.0 || spec.epsilon <= 0.0
    {
        return Err(Error::Config(format!("invalid prior spec {spec:?}")));
    }
    let s = spec.sigma * spec.shrink;
    let bins = ((spec.label_max - spec.label_min) / spec.step).floor() as usize + 1;
    let bin_centers: Vec<f64> = (0..bins)
        .map(|i| spec.label_min + i as f64 * spec.step)
        .collect();
    let mut probs: Vec<f64> = bin_centers
        .iter()
        .map(|c| {
            let z = (c - spec.mu) / s;
            (-0.5 * z * z).exp() + spec.epsilon
        })
        .collect();
    let total: f64 = probs.iter().sum();
    for p in probs.iter_mut() {
        *p /= total;
    }
    let mut cdf = Vec::with_capacity(bins);
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cdf.push(acc);
    }
    // guard the tail against rounding so quantile(1.0) is defined
    *cdf.last_mut().unwrap() = 1.0;
    Ok(PriorVector {
        spec,
        bin_centers,
        probs,
        cdf,
    })
}

impl PriorVector {
    /// Inverse CDF by cumulative-sum inversion with linear interpolation
    /// between bin centers. Monotone non-decreasing in u.
    pub fn quantile(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c < u);
        if i == 0 {
            return self.bin_centers[0];
        }
        if i >= self.cdf.len() {
            return *self.bin_centers.last().unwrap();
        }
        let lo_cdf = self.cdf[i - 1];
        let frac = if self.probs[i] > 0.0 {
            (u - lo_cdf) / self.probs[i]
        } else {
            0.0
        };
        self.bin_centers[i - 1] + frac.clamp(0.0, 1.0) * self.spec.step
    }

    /// The batch-size realization of the prior used by the distribution
    /// term: quantiles at (i - 0.5)/n.
    pub fn batch_quantiles(&self, n: usize) -> Vec<f64> {
        (1..=n)
            .map(|i| self.quantile((i as f64 - 0.5) / n as f64))
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "bin_center,prob").map_err(|e| Error::io(path.display().to_string(), e))?;
        for (c, p) in self.bin_centers.iter().zip(&self.probs) {
            writeln!(w, "{c},{p}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_dist: f64,
    pub lambda_point: f64,
    pub lambda_slope: f64,
    pub eps_var: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_dist: 0.5,
            lambda_point: 1.0,
            lambda_slope: 0.1,
            eps_var: 1e-8,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_dist < 0.0 || self.lambda_slope < 0.0 || self.eps_var < 0.0 {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.lambda_point <= 0.0 {
            return Err(Error::Config("lambda_point must be > 0".into()));
        }
        Ok(())
    }
}

fn const_vec(tape: &mut Tape, values: &[f64]) -> VarId {
    tape.leaf(Tensor {
        shape: vec![values.len()],
        data: values.to_vec(),
    })
}

/// L1 distance between sorted predictions and the prior's batch quantiles.
pub fn dist_loss(
    tape: &mut Tape,
    preds: VarId,
    prior: &PriorVector,
    temperature: f64,
) -> Result<VarId> {
    let n = tape.value(preds).len();
    if n == 0 {
        return Err(Error::Contract("dist_loss on empty batch".into()));
    }
    let q = prior.batch_quantiles(n);
    let q = const_vec(tape, &q);
    let sorted = tape.soft_sort(preds, temperature)?;
    let diff = tape.sub(sorted, q)?;
    let a = tape.abs(diff);
    Ok(tape.mean_all(a))
}

/// Mean absolute error against constant targets.
pub fn point_loss(tape: &mut Tape, preds: VarId, targets: &[f64]) -> Result<VarId> {
    if tape.value(preds).len() != targets.len() {
        return Err(Error::Shape(format!(
            "point_loss: {} predictions vs {} targets",
            tape.value(preds).len(),
            targets.len()
        )));
    }
    let t = const_vec(tape, targets);
    let diff = tape.sub(preds, t)?;
    let a = tape.abs(diff);
    Ok(tape.mean_all(a))
}

/// (beta - 1)^2 with beta = Cov(preds, targets) / (Var(preds) + eps),
/// population (1/N) moments, differentiable through both.
pub fn slope_loss(tape: &mut Tape, preds: VarId, targets: &[f64], eps_var: f64) -> Result<VarId> {
    let n = tape.value(preds).len();
    if n < 2 || targets.len() != n {
        return Err(Error::Contract(format!(
            "slope_loss needs N >= 2 equal-length vectors, got {} vs {}",
            n,
            targets.len()
        )));
    }
    let mt = targets.iter().sum::<f64>() / n as f64;
    let t = const_vec(tape, targets);
    let pt = tape.mul(preds, t)?;
    let m_pt = tape.mean_all(pt);
    let mp = tape.mean_all(preds);
    let mp_mt = tape.affine(mp, mt, 0.0);
    let cov = tape.sub(m_pt, mp_mt)?;
    let pp = tape.mul(preds, preds)?;
    let m_pp = tape.mean_all(pp);
    let mp2 = tape.mul(mp, mp)?;
    let var = tape.sub(m_pp, mp2)?;
    let var_eps = tape.affine(var, 1.0, eps_var);
    let beta = tape.div(cov, var_eps)?;
    let beta_m1 = tape.affine(beta, 1.0, -1.0);
    tape.mul(beta_m1, beta_m1)
}

/// The three component values, in days-scale units, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub dist: f64,
    pub point: f64,
    pub slope: f64,
    pub total: f64,
}

/// Weighted sum of the three terms. Returns the scalar node plus the
/// component values.
pub fn total_loss(
    tape: &mut Tape,
    preds: VarId,
    targets: &[f64],
    prior: &PriorVector,
    weights: &LossWeights,
    temperature: f64,
) -> Result<(VarId, LossComponents)> {
    let l_dist = dist_loss(tape, preds, prior, temperature)?;
    let l_point = point_loss(tape, preds, targets)?;
    let l_slope = slope_loss(tape, preds, targets, weights.eps_var)?;
    let wd = tape.affine(l_dist, weights.lambda_dist, 0.0);
    let wp = tape.affine(l_point, weights.lambda_point, 0.0);
    let ws = tape.affine(l_slope, weights.lambda_slope, 0.0);
    let dp = tape.add(wd, wp)?;
    let total = tape.add(dp, ws)?;
    let components = LossComponents {
        dist: tape.value(l_dist).item(),
        point: tape.value(l_point).item(),
        slope: tape.value(l_slope).item(),
        total: tape.value(total).item(),
    };
    Ok((total, components))
}
