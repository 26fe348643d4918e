use std::path::Path;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{transform_pose, OverlapMask, SharedView};
use crate::error::{Error, Result};
use crate::fields::{NodeField, Rgb};
use crate::render::{ray_for_pixel, render_ray, CameraPose, RenderConfig};
use crate::transform::{EulerPose7, SimilarityTransform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossNorm {
    /// Sum of absolute channel differences.
    #[default]
    L1,
    /// Squared Euclidean color difference.
    L2,
}

/// Stop once the smoothed loss has not improved by `min_rel_improvement`
/// for `patience` iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_rel_improvement: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineConfig {
    pub lr0: f64,
    /// `lr_i = lr0 · decay_base^(i / decay_every)`.
    pub decay_base: f64,
    pub decay_every: f64,
    pub iterations: usize,
    pub rays_per_iter: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Central-difference step for the gradient, per parameter.
    pub fd_step: f64,
    pub loss: LossNorm,
    pub seed: u64,
    pub early_stop: Option<EarlyStop>,
    /// Size of the fixed ray set used to compare the start and the result.
    pub eval_rays: usize,
    /// Minibatch loss below which the optimization stops.
    pub converged_loss: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            lr0: 5e-5,
            decay_base: 0.8,
            decay_every: 100.0,
            iterations: 5000,
            rays_per_iter: 2048,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            fd_step: 1e-5,
            loss: LossNorm::L1,
            seed: 0,
            early_stop: None,
            eval_rays: 4096,
            converged_loss: 1e-12,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.lr0 > 0.0) {
            return bad("lr0 must be positive");
        }
        if !(self.decay_base > 0.0 && self.decay_every > 0.0) {
            return bad("learning-rate decay must be positive");
        }
        if self.rays_per_iter == 0 || self.eval_rays == 0 {
            return bad("ray counts must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.fd_step > 0.0) {
            return bad("fd_step must be positive");
        }
        Ok(())
    }

    pub fn learning_rate(&self, iteration: usize) -> f64 {
        self.lr0 * self.decay_base.powf(iteration as f64 / self.decay_every)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    /// Minibatch loss at `params`.
    pub loss: f64,
    /// `[yaw, pitch, roll, tx, ty, tz, s]`.
    pub params: [f64; 7],
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub transform: SimilarityTransform,
    /// Loss of the starting transform on the fixed evaluation rays.
    pub initial_loss: f64,
    /// Loss of the returned transform on the same rays.
    pub final_loss: f64,
    pub iterations: usize,
    /// True when the optimized transform did not beat the start and the
    /// start was returned instead.
    pub kept_initial: bool,
    pub trace: Vec<TraceRow>,
}

struct Sample {
    view: usize,
    px: f64,
    py: f64,
    target: Rgb,
}

/// Photometric objective over masked pixels of the shared views.
pub(crate) struct Objective<'a> {
    field: &'a NodeField,
    views: &'a [SharedView],
    samples: Vec<Sample>,
    render: RenderConfig,
    norm: LossNorm,
}

impl<'a> Objective<'a> {
    pub(crate) fn new(
        field_j: &'a NodeField,
        views: &'a [SharedView],
        masks: &[OverlapMask],
        render: &RenderConfig,
        norm: LossNorm,
    ) -> Result<Self> {
        render.validate()?;
        if masks.len() != views.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} masks for {} views",
                masks.len(),
                views.len()
            )));
        }
        let mut coords = Vec::new();
        for (k, (v, m)) in views.iter().zip(masks).enumerate() {
            if m.width != v.intrinsics.width || m.height != v.intrinsics.height {
                return Err(Error::DimensionMismatch(format!("mask {}", m.image_id)));
            }
            coords.extend(m.pixels().map(|(x, y)| (k, x as f64, y as f64)));
        }
        if coords.is_empty() {
            return Err(Error::EmptyMasks);
        }
        // node j at its own poses: the colors node i's alignment should reproduce
        let samples = coords
            .into_par_iter()
            .map(|(view, px, py)| {
                let ray = ray_for_pixel(&views[view].pose_j, &views[view].intrinsics, px, py);
                Sample {
                    view,
                    px,
                    py,
                    target: render_ray(field_j, &ray, render).color,
                }
            })
            .collect();
        Ok(Self {
            field: field_j,
            views,
            samples,
            render: *render,
            norm,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.samples.len()
    }

    /// Mean per-pixel loss with the transform given as seven parameters;
    /// infinite where the parameters are not a valid similarity.
    pub(crate) fn loss(&self, params: &[f64; 7], subset: &[usize]) -> f64 {
        let Ok(t) = EulerPose7::from_array(params).to_transform() else {
            return f64::INFINITY;
        };
        let poses: Vec<CameraPose> = self.views.iter().map(|v| transform_pose(&v.pose_i, &t).0).collect();
        let terms: Vec<f64> = subset
            .par_iter()
            .map(|&k| {
                let s = &self.samples[k];
                let v = &self.views[s.view];
                let ray = ray_for_pixel(&poses[s.view], &v.intrinsics, s.px, s.py);
                let d = render_ray(self.field, &ray, &self.render).color - s.target;
                match self.norm {
                    LossNorm::L1 => d.abs().sum(),
                    LossNorm::L2 => d.norm_squared(),
                }
            })
            .collect();
        neumaier_sum(&terms) / subset.len() as f64
    }

    pub(crate) fn gradient(&self, params: &[f64; 7], subset: &[usize], h: f64) -> [f64; 7] {
        let mut g = [0.0; 7];
        for (k, gk) in g.iter_mut().enumerate() {
            let mut hi = *params;
            let mut lo = *params;
            hi[k] += h;
            lo[k] -= h;
            *gk = (self.loss(&hi, subset) - self.loss(&lo, subset)) / (2.0 * h);
        }
        g
    }
}

/// Compensated summation, independent of how the terms were produced.
pub(crate) fn neumaier_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Photometric refinement of `t0` (node `j` to node `i`).
///
/// Each iteration samples `rays_per_iter` masked pixels, renders node `j`
/// through `P_i · T` and compares against node `j` rendered at `P_j`. The
/// seven Euler parameters move by Adam on central-difference gradients.
/// The result is checked against `t0` on a fixed ray set and `t0` is
/// returned when it is at least as good.
pub fn refine_registration(
    field_j: &NodeField,
    views: &[SharedView],
    masks: &[OverlapMask],
    t0: &SimilarityTransform,
    cfg: &RefineConfig,
    render: &RenderConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    t0.validate()?;
    let objective = Objective::new(field_j, views, masks, render, cfg.loss)?;
    let n = objective.len();
    let start = EulerPose7::from_transform(t0).to_array();

    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let eval_set: Vec<usize> = if n <= cfg.eval_rays {
        (0..n).collect()
    } else {
        (0..cfg.eval_rays).map(|_| eval_rng.random_range(0..n)).collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = start;
    let mut m = [0.0; 7];
    let mut v = [0.0; 7];
    let mut lr_scale = [1.0; 7];
    let mut trace = Vec::new();
    let mut ema: Option<f64> = None;
    let mut best = f64::INFINITY;
    let mut stale = 0usize;
    let mut iterations = 0;

    for it in 0..cfg.iterations {
        let batch: Vec<usize> = (0..cfg.rays_per_iter).map(|_| rng.random_range(0..n)).collect();
        let lr = cfg.learning_rate(it);
        let loss = objective.loss(&params, &batch);
        trace.push(TraceRow {
            iteration: it,
            lr,
            loss,
            params,
        });
        iterations = it + 1;
        if loss < cfg.converged_loss {
            debug!("refinement converged at iteration {it} (loss {loss:.3e})");
            break;
        }
        let g = objective.gradient(&params, &batch, cfg.fd_step);
        let tpow = (it + 1) as i32;
        for k in 0..7 {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
            let mh = m[k] / (1.0 - cfg.beta1.powi(tpow));
            let vh = v[k] / (1.0 - cfg.beta2.powi(tpow));
            let step = lr * lr_scale[k] * mh / (vh.sqrt() + cfg.eps);
            if k == 6 && params[6] - step <= 0.0 {
                lr_scale[6] *= 0.5;
                warn!("iteration {it}: scale step would leave s <= 0; rejected, scale lr halved");
                continue;
            }
            params[k] -= step;
        }

        if let Some(es) = cfg.early_stop {
            let smooth = ema.map_or(loss, |e| 0.9 * e + 0.1 * loss);
            ema = Some(smooth);
            if smooth < best * (1.0 - es.min_rel_improvement) {
                best = smooth;
                stale = 0;
            } else {
                stale += 1;
                if stale >= es.patience {
                    debug!("refinement plateaued at iteration {it}");
                    break;
                }
            }
        }
    }

    let initial_loss = objective.loss(&start, &eval_set);
    let candidate = objective.loss(&params, &eval_set);
    let improved = candidate < initial_loss && params != start;
    let (transform, final_loss) = if improved {
        (EulerPose7::from_array(&params).to_transform()?, candidate)
    } else {
        (*t0, initial_loss)
    };
    Ok(RefineOutcome {
        transform,
        initial_loss,
        final_loss,
        iterations,
        kept_initial: !improved,
        trace,
    })
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TraceRow]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("iteration,lr,loss,yaw,pitch,roll,tx,ty,tz,s\n");
    for r in trace {
        out.push_str(&format!("{},{:e},{:e}", r.iteration, r.lr, r.loss));
        for p in r.params {
            out.push_str(&format!(",{p:e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(Error::io(path))
}
