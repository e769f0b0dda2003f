use super::model::ParamShape;
use super::task::{Problem, RunContext};
use crate::error::{Error, Result};
use crate::numkit::{RngKey, Tensor};

/// Separable quadratic `½ Σ λᵢ xᵢ²` with optional additive gradient noise.
/// Useful as a cheap, analytically understood inner problem.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub lambdas: Vec<f64>,
    pub noise: f64,
    pub init_scale: f64,
    shapes: Vec<ParamShape>,
}

impl Quadratic {
    pub fn new(lambdas: Vec<f64>) -> Self {
        let n = lambdas.len();
        Self {
            lambdas,
            noise: 0.0,
            init_scale: 1.0,
            shapes: vec![ParamShape::new("x", vec![n], n)],
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    /// Condition-number-`kappa` spectrum, log-spaced over `[1/kappa, 1]`.
    pub fn log_spaced(n: usize, kappa: f64) -> Self {
        let lambdas = (0..n)
            .map(|i| {
                let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                kappa.powf(-f)
            })
            .collect();
        Self::new(lambdas)
    }

    fn value(&self, x: &[f64]) -> f64 {
        0.5 * x.iter().zip(&self.lambdas).map(|(v, l)| l * v * v).sum::<f64>()
    }
}

impl Problem for Quadratic {
    fn name(&self) -> String {
        format!("quadratic-{}", self.lambdas.len())
    }

    fn param_shapes(&self) -> &[ParamShape] {
        &self.shapes
    }

    fn init_params(&self, key: RngKey) -> Vec<Tensor> {
        let mut g = key.generator();
        let x = (0..self.lambdas.len()).map(|_| self.init_scale * g.normal()).collect();
        vec![Tensor::vector(x)]
    }

    fn loss_and_grad(&self, params: &[Tensor], batch_key: RngKey, ctx: &mut RunContext) -> Result<(f64, Vec<Tensor>)> {
        let x = params[0].data();
        let loss = self.value(x);
        let mut g = batch_key.generator();
        let grad: Vec<f64> = x
            .iter()
            .zip(&self.lambdas)
            .map(|(v, l)| l * v + if self.noise > 0.0 { self.noise * g.normal() } else { 0.0 })
            .collect();
        let step = ctx.step;
        ctx.step += 1;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                context: self.name(),
            });
        }
        Ok((loss, vec![Tensor::vector(grad)]))
    }

    fn loss(&self, params: &[Tensor], _batch_key: RngKey) -> Result<f64> {
        let loss = self.value(params[0].data());
        if loss.is_finite() {
            Ok(loss)
        } else {
            Err(Error::NonFiniteLoss {
                step: 0,
                context: self.name(),
            })
        }
    }
}
