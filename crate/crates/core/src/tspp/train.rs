use rayon::prelude::*;

use super::head::TsppHeadParams;
use super::loss::loss_and_grad;
use super::target::probability_target;
use super::{CostMap, ProbabilityGrid, SamplerConfig};
use crate::error::{Error, Result};
use crate::mask::{masks_from_labelmap, LabelMap};
use crate::scalar::Scalar;

/// One training example on the cost-map grid.
#[derive(Clone, Debug)]
pub struct TrainItem<T> {
    pub cost: CostMap<T>,
    pub target: ProbabilityGrid<T>,
    /// Class ids sampled at cell centers.
    pub labels: LabelMap,
}

impl<T: Scalar> TrainItem<T> {
    /// Builds the probability target and grid labels from a full-resolution
    /// class label map, treating each class region as one mask. The prompt
    /// grid is the cost-map grid.
    pub fn from_labels(cost: CostMap<T>, gt: &LabelMap, sampler: &SamplerConfig) -> Result<Self> {
        Self::from_instances(cost, gt, gt, sampler)
    }

    /// Like [`TrainItem::from_labels`] but with one target mask per instance
    /// id of `instances`, while `classes` supplies the class of every pixel.
    pub fn from_instances(
        cost: CostMap<T>,
        instances: &LabelMap,
        classes: &LabelMap,
        sampler: &SamplerConfig,
    ) -> Result<Self> {
        if instances.dims() != classes.dims() {
            return Err(Error::dims(instances.dims(), classes.dims()));
        }
        let cfg = SamplerConfig {
            grid_h: cost.h,
            grid_w: cost.w,
            ..sampler.clone()
        };
        let target = probability_target(&masks_from_labelmap(instances), &cfg)?.grid;
        let labels = classes.sample_at_cell_centers(cost.w, cost.h);
        Ok(TrainItem {
            cost,
            target,
            labels,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub lambda_mse: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            learning_rate: 0.5,
            lambda_mse: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub loss: f64,
    pub ce: f64,
    pub mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: TsppHeadParams<T>,
    /// Dataset-mean loss before each step, followed by the final loss
    /// (`steps + 1` records).
    pub trace: Vec<LossRecord>,
}

impl<T> TrainOutcome<T> {
    pub fn initial(&self) -> LossRecord {
        self.trace[0]
    }

    pub fn last(&self) -> LossRecord {
        *self.trace.last().expect("trace is never empty")
    }
}

fn evaluate<T: Scalar>(
    items: &[TrainItem<T>],
    params: &TsppHeadParams<T>,
    lambda: T,
) -> Result<(LossRecord, TsppHeadParams<T>)> {
    let parts = items
        .par_iter()
        .map(|it| loss_and_grad(&it.cost, params, &it.target, &it.labels, lambda))
        .collect::<Result<Vec<_>>>()?;
    let inv = T::one() / T::of_usize(items.len());
    let mut grad = TsppHeadParams::zeros(params.channels);
    let mut rec = LossRecord {
        loss: 0.0,
        ce: 0.0,
        mse: 0.0,
    };
    // sequential reduction keeps the result independent of thread count
    for (terms, g, _) in &parts {
        grad.axpy(inv, g);
        rec.loss += terms.loss.as_f64();
        rec.ce += terms.ce.as_f64();
        rec.mse += terms.mse.as_f64();
    }
    let n = items.len() as f64;
    rec.loss /= n;
    rec.ce /= n;
    rec.mse /= n;
    Ok((rec, grad))
}

/// Full-batch gradient descent with a fixed step on the dataset-mean loss.
pub fn train_head<T: Scalar>(
    items: &[TrainItem<T>],
    init: TsppHeadParams<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if items.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    init.validate()?;
    let lambda = T::lit(cfg.lambda_mse);
    let lr = T::lit(cfg.learning_rate);
    let mut params = init;
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let (rec, grad) = evaluate(items, &params, lambda)?;
        if !rec.loss.is_finite() || !grad.is_finite() {
            return Err(Error::Diverged(step));
        }
        trace.push(rec);
        if step < cfg.steps {
            params.axpy(-lr, &grad);
        }
    }
    Ok(TrainOutcome { params, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn tiny_item() -> TrainItem<f64> {
        let mut gt = LabelMap::zeros(8, 8);
        for y in 2..6 {
            for x in 2..6 {
                gt.set(x, y, 1);
            }
        }
        let mut cost = CostMap::zeros(2, 4, 4);
        for y in 1..3 {
            for x in 1..3 {
                cost.values[y * 4 + x] = 1.0;
            }
        }
        TrainItem::from_labels(cost, &gt, &SamplerConfig::default()).unwrap()
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let init = TsppHeadParams::init(4, &mut rng::rng(3));
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let out = train_head(&[tiny_item()], init.clone(), &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn loss_decreases_on_tiny_problem() {
        let init = TsppHeadParams::init(4, &mut rng::rng(3));
        let cfg = TrainConfig {
            steps: 50,
            ..TrainConfig::default()
        };
        let out = train_head(&[tiny_item()], init, &cfg).unwrap();
        assert!(out.last().loss < out.initial().loss);
    }

    #[test]
    fn divergence_is_reported() {
        let init = TsppHeadParams::init(4, &mut rng::rng(3));
        let cfg = TrainConfig {
            steps: 50,
            learning_rate: 1e300,
            lambda_mse: 0.5,
        };
        assert!(matches!(
            train_head(&[tiny_item()], init, &cfg),
            Err(Error::Diverged(_))
        ));
    }

    #[test]
    fn empty_dataset_rejected() {
        let init = TsppHeadParams::<f64>::zeros(4);
        assert!(train_head(&[], init, &TrainConfig::default()).is_err());
    }
}
