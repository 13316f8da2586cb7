//! End-to-end finite-difference check of the analytic model gradient.

use rand::seq::index;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{backward, forward, ArchitectureConfig, ModelParams, ParamKind};
use crate::optimizer::loss::{add_weight_decay, loss, regularization};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Maximum tolerated relative error per component.
    pub tolerance: f64,
    /// Central-difference step.
    pub step: f64,
    /// Groups larger than this are checked on a random subsample of this size.
    pub max_components_per_group: usize,
    pub batch: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            step: 1e-5,
            max_components_per_group: 500,
            batch: 1,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

/// `|a - b| / max(|a|, |b|, 1e-6)`: relative error, except that two values
/// below `1e-6` in magnitude are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// A random double-precision instance of the training objective.
pub struct GradCheckProblem {
    pub config: ArchitectureConfig,
    pub params: ModelParams<f64>,
    pub input: Tensor<f64>,
    pub target: Tensor<f64>,
    pub weight_decay: f64,
}

impl GradCheckProblem {
    /// Random parameters (biases included, so every path is exercised) and a
    /// random `[0, 1]` input/target pair.
    pub fn random(config: &ArchitectureConfig, options: &GradCheckOptions) -> Result<Self> {
        let mut r = rng::split(options.seed, rng::stream::GRADCHECK);
        let mut params = ModelParams::<f64>::zeros(config)?;
        for (_, kind, t) in params.groups_mut() {
            let std = match kind {
                ParamKind::Kernel { fan_in } => (2.0 / fan_in as f64).sqrt(),
                ParamKind::LstmWeight => 0.2,
                ParamKind::Bias => 0.1,
            };
            fill_gaussian(t, std, &mut r);
        }
        let (h, w) = config.input_size;
        let shape = [options.batch, 1, h, w, config.tau];
        let input = Tensor::from_fn(&shape, |_| r.random_range(0.0..1.0));
        let target = Tensor::from_fn(&shape, |_| r.random_range(0.0..1.0));
        Ok(Self {
            config: config.clone(),
            params,
            input,
            target,
            weight_decay: options.weight_decay,
        })
    }

    fn batch(&self) -> usize {
        self.input.shape()[0]
    }

    /// Full objective (data term plus weight decay) at `params`.
    pub fn objective(&self, params: &ModelParams<f64>) -> Result<f64> {
        let (out, _) = forward(&self.input, params, &self.config)?;
        let (value, _) = loss(&out, &self.target, &[], 0.0, self.config.tau, self.batch())?;
        Ok(value.data + regularization(params, self.weight_decay))
    }

    pub fn output(&self, params: &ModelParams<f64>) -> Result<Tensor<f64>> {
        Ok(forward(&self.input, params, &self.config)?.0)
    }

    /// Model outputs at `params` and the sign pattern of every leaky-ReLU
    /// input.
    fn probe(&self, params: &ModelParams<f64>) -> Result<(Tensor<f64>, Vec<bool>)> {
        let (out, cache) = forward(&self.input, params, &self.config)?;
        let signs = cache.leaky_inputs().flat_map(|t| t.data().iter().map(|&v| v > 0.0)).collect();
        Ok((out, signs))
    }

    /// `data(up) - data(down)` of the least-squares term for two model
    /// outputs, evaluated as `sum (up - down)(up + down - 2 target)` so the
    /// large common part of both sums cancels exactly rather than in
    /// floating point.
    pub fn data_term_difference(&self, up: &Tensor<f64>, down: &Tensor<f64>) -> f64 {
        let norm = 2.0 * (self.batch() * self.config.tau) as f64;
        let sum: f64 = up
            .data()
            .iter()
            .zip(down.data())
            .zip(self.target.data())
            .map(|((&u, &d), &t)| (u - d) * (u + d - 2.0 * t))
            .sum();
        sum / norm
    }

    /// Analytic gradient of [`objective`](Self::objective) at `self.params`.
    pub fn analytic_gradient(&self) -> Result<ModelParams<f64>> {
        let (out, cache) = forward(&self.input, &self.params, &self.config)?;
        let (_, g_out) = loss(&out, &self.target, &[], 0.0, self.config.tau, self.batch())?;
        let mut grads = backward(&g_out, &cache, &self.params, &self.config)?;
        add_weight_decay(&mut grads, &self.params, self.weight_decay)?;
        Ok(grads)
    }
}

fn fill_gaussian(t: &mut Tensor<f64>, std: f64, r: &mut Rng) {
    let normal = Normal::new(0.0, std).expect("positive std");
    t.data_mut().iter_mut().for_each(|v| *v = normal.sample(r));
}

#[derive(Clone, Debug)]
pub struct GroupCheck {
    pub name: String,
    pub size: usize,
    pub checked: usize,
    /// Components whose difference straddled a leaky-ReLU kink at every
    /// step size tried; they carry no derivative information.
    pub skipped: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_relative_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_relative_error).fold(0.0, f64::max)
    }
}

const KINK_RETRIES: usize = 3;

/// Compares `analytic` against central differences of the problem's
/// objective, group by group. Each difference `f(w + h) - f(w - h)` is
/// assembled term by term from the two forward outputs; see
/// [`GradCheckProblem::data_term_difference`].
pub fn check_gradients(
    problem: &GradCheckProblem,
    analytic: &ModelParams<f64>,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut r = rng::split(options.seed.wrapping_add(1), rng::stream::GRADCHECK);
    let analytic_groups = analytic.groups();
    let mut probe = problem.params.clone();
    let group_count = analytic_groups.len();
    let mut report = Vec::with_capacity(group_count);
    for gi in 0..group_count {
        let (name, kind, grad) = &analytic_groups[gi];
        let decays = kind.decays();
        let size = grad.len();
        let indices: Vec<usize> = if size <= options.max_components_per_group {
            (0..size).collect()
        } else {
            let mut v = index::sample(&mut r, size, options.max_components_per_group).into_vec();
            v.sort_unstable();
            v
        };
        let mut worst = 0.0f64;
        let mut skipped = 0;
        for &i in &indices {
            let orig = probe.groups()[gi].2.data()[i];
            // A difference across a leaky-ReLU kink measures the average of
            // two slopes; shrink the step until no activation changes sign.
            let mut step = options.step;
            let mut numeric = None;
            for _ in 0..KINK_RETRIES {
                set_component(&mut probe, gi, i, orig + step);
                let (up, up_signs) = problem.probe(&probe)?;
                set_component(&mut probe, gi, i, orig - step);
                let (down, down_signs) = problem.probe(&probe)?;
                set_component(&mut probe, gi, i, orig);
                if up_signs == down_signs {
                    let mut n = problem.data_term_difference(&up, &down) / (2.0 * step);
                    if decays {
                        let (a, b) = (orig + step, orig - step);
                        n += 0.5 * problem.weight_decay * (a * a - b * b) / (2.0 * step);
                    }
                    numeric = Some(n);
                    break;
                }
                step *= 0.1;
            }
            match numeric {
                Some(n) => worst = worst.max(relative_error(grad.data()[i], n)),
                None => skipped += 1,
            }
        }
        report.push(GroupCheck {
            name: name.clone(),
            size,
            checked: indices.len() - skipped,
            skipped,
            max_relative_error: worst,
            passed: worst < options.tolerance && skipped < indices.len(),
        });
    }
    Ok(GradCheckReport {
        tolerance: options.tolerance,
        groups: report,
    })
}

fn set_component(params: &mut ModelParams<f64>, group: usize, index: usize, value: f64) {
    let mut groups = params.groups_mut();
    groups[group].2.data_mut()[index] = value;
}

/// Random instance of `config`, analytic backward pass, finite-difference
/// comparison. A failing check is reported, not raised.
pub fn gradient_check(config: &ArchitectureConfig, options: &GradCheckOptions) -> Result<GradCheckReport> {
    let problem = GradCheckProblem::random(config, options)?;
    let analytic = problem.analytic_gradient()?;
    check_gradients(&problem, &analytic, options)
}
