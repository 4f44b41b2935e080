//! Central-difference gradient checking in double precision.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ViTConfig;
use crate::error::Result;
use crate::params::ModelParams;
use crate::se::forward;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Relative error used throughout: `|analytic - numeric| / max(1, |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with step `eps`, returning the largest
/// [`relative_error`] over all coordinates.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let analytic = {
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let y = f(v)?;
        y.backward()?.get_or_zeros(v)
    };
    let eval = |p: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = tape.constant(p.clone());
        Ok(f(v)?.value().sum())
    };
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Per-tensor outcome of [`check_tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub index: usize,
    pub max_relative_error: f64,
}

/// Gradient check over several input tensors at once. `f` receives one
/// [`Var`] per tensor, in order. Returns the worst relative error for each
/// tensor.
pub fn check_tensors<F>(f: F, xs: &mut [Tensor<f64>], eps: f64) -> Result<Vec<GroupError>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let grads = f(&tape, &vars)?.backward()?;
        vars.iter().map(|&v| grads.get_or_zeros(v)).collect()
    };
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(f(&tape, &vars)?.value().sum())
    };
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..xs.len() {
        let mut worst: f64 = 0.0;
        for i in 0..xs[t].len() {
            let orig = xs[t].data()[i];
            xs[t].data_mut()[i] = orig + eps;
            let up = eval(xs)?;
            xs[t].data_mut()[i] = orig - eps;
            let down = eval(xs)?;
            xs[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[t].data()[i], numeric));
        }
        out.push(GroupError {
            index: t,
            max_relative_error: worst,
        });
    }
    Ok(out)
}

/// Worst relative error of one named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroupError {
    pub name: String,
    pub max_relative_error: f64,
}

/// Rewrites a bound parameter before the forward pass. Identity in normal
/// use; tests wrap a parameter in an op with a broken backward rule.
pub type BindHook<'h> = &'h dyn for<'t> Fn(&str, Var<'t, f64>) -> Result<Var<'t, f64>>;

/// Inputs of a model-level gradient check.
#[derive(Debug, Clone)]
pub struct ModelCheck {
    pub params: ModelParams<Tensor<f64>>,
    pub images: Vec<Tensor<f64>>,
    pub targets: Tensor<f64>,
}

impl ModelCheck {
    /// Random parameters, images and soft targets for `cfg`. Parameters
    /// are drawn well away from the tiny training init so every nonlinearity
    /// is exercised: weights uniform in `[-0.5, 0.5]`, layer-norm gains in
    /// `[0.5, 1.5]`, images in `[-2, 2]`.
    pub fn random(cfg: &ViTConfig, se_enabled: bool, batch: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::<Tensor<f64>>::init(cfg, se_enabled, &mut rng)?;
        params.visit_mut(&mut |name, t| {
            let gain = name.ends_with(".gain");
            for v in t.data_mut() {
                let u: f64 = rng.random_range(-0.5..0.5);
                *v = if gain { 1.0 + u } else { u };
            }
        });
        let shape = [cfg.channels, cfg.image_size, cfg.image_size];
        let images = (0..batch)
            .map(|_| Tensor::from_fn(&shape, |_| rng.random_range(-2.0..2.0)))
            .collect();
        let k = cfg.num_classes;
        let mut targets = Tensor::from_fn(&[batch, k], |_| rng.random_range(0.05..1.0));
        for row in targets.data_mut().chunks_mut(k) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(ModelCheck {
            params,
            images,
            targets,
        })
    }

    fn loss<'t>(
        &self,
        bound: &ModelParams<Var<'t, f64>>,
        cfg: &ViTConfig,
    ) -> Result<Var<'t, f64>> {
        let tape = bound.cls_token.tape();
        let rows = self
            .images
            .iter()
            .map(|img| forward(img, bound, cfg, None)?.logits.reshape(&[1, cfg.num_classes]))
            .collect::<Result<Vec<_>>>()?;
        tape.concat_rows(&rows)?.cross_entropy(&self.targets)
    }

    fn bind<'t>(
        &self,
        tape: &'t Tape<f64>,
        trainable: bool,
        hook: BindHook<'_>,
    ) -> Result<ModelParams<Var<'t, f64>>> {
        self.params.try_map(&mut |name, t| {
            let v = if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            };
            hook(name, v)
        })
    }

    /// Cross-entropy of the full model (encoder, gate, head) on the stored
    /// batch, checked against central differences for every parameter
    /// tensor.
    pub fn run(&mut self, cfg: &ViTConfig, eps: f64, hook: BindHook<'_>) -> Result<Vec<ParamGroupError>> {
        cfg.validate()?;
        self.params.check_shapes(cfg)?;
        let analytic: Vec<Tensor<f64>> = {
            let tape = Tape::new();
            // leaves are recorded before the hook so gradients land on them
            let leaves = self.params.map(&mut |_, t| tape.leaf(t.clone()));
            let names = self.params.names();
            let mut i = 0;
            let hooked = leaves.try_map(&mut |_, &v| {
                let out = hook(&names[i], v);
                i += 1;
                out
            })?;
            let grads = self.loss(&hooked, cfg)?.backward()?;
            leaves.leaves().into_iter().map(|&v| grads.get_or_zeros(v)).collect()
        };
        let names = self.params.names();
        let mut out = Vec::with_capacity(names.len());
        for (ti, name) in names.into_iter().enumerate() {
            let len = self.params.leaves()[ti].len();
            let mut worst: f64 = 0.0;
            for i in 0..len {
                let orig = self.params.leaves()[ti].data()[i];
                let up = self.eval_with(cfg, hook, ti, i, orig + eps)?;
                let down = self.eval_with(cfg, hook, ti, i, orig - eps)?;
                self.params.leaves_mut()[ti].data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(relative_error(analytic[ti].data()[i], numeric));
            }
            out.push(ParamGroupError {
                name,
                max_relative_error: worst,
            });
        }
        Ok(out)
    }

    fn eval_with(&mut self, cfg: &ViTConfig, hook: BindHook<'_>, tensor: usize, index: usize, value: f64) -> Result<f64> {
        self.params.leaves_mut()[tensor].data_mut()[index] = value;
        let tape = Tape::new();
        let bound = self.bind(&tape, false, hook)?;
        Ok(self.loss(&bound, cfg)?.value().item())
    }
}

/// Hook that leaves every parameter untouched.
pub fn no_hook<'t>(_: &str, v: Var<'t, f64>) -> Result<Var<'t, f64>> {
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::new(&[4], vec![0.3, -1.0, 2.0, 7.5]).unwrap();
        let err = finite_diff_check(|v| Ok(v.sum()), &x, 1e-6).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sigmoid_at_zero() {
        let x = Tensor::<f64>::new(&[1], vec![0.0]).unwrap();
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let g = v.sigmoid().unwrap().sum().backward().unwrap();
        assert!((g.get(v).unwrap().data()[0] - 0.25).abs() < 1e-12);
        let err = finite_diff_check(|v| Ok(v.sigmoid()?.sum()), &x, 1e-6).unwrap();
        assert!(err < 1e-9);
    }
}
