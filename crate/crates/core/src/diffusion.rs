//! DDPM over a linear beta schedule with ε-prediction and an ancestral
//! sampler. All noise is passed in or drawn from an explicit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_STEPS: usize = 50;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 0.02;

/// Coefficients indexed by step `t` in `1..=T` (stored at `t − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                BETA_START
            } else {
                BETA_START + i as f64 / (steps - 1) as f64 * (BETA_END - BETA_START)
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Posterior variance `β̃_t`; zero at `t = 1`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        if t == 1 {
            return 0.0;
        }
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }
}

/// `sqrt(ᾱ_t)·x0 + sqrt(1 − ᾱ_t)·eps`
pub fn q_sample<T: Scalar>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check_step(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Shape(format!(
            "x0 {:?} and eps {:?} differ",
            x0.shape(),
            eps.shape()
        )));
    }
    let a = T::lit(sched.alpha_bar(t).sqrt());
    let s = T::lit((1.0 - sched.alpha_bar(t)).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + s * e).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// ε-prediction MSE. `model` receives the noisy input as a graph constant
/// and returns its noise estimate.
pub fn training_loss<T, F>(
    g: &mut Graph<T>,
    x0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    sched: &NoiseSchedule,
    model: F,
) -> Result<Var>
where
    T: Scalar,
    F: FnOnce(&mut Graph<T>, Var, usize) -> Result<Var>,
{
    let noisy = q_sample(x0, t, eps, sched)?;
    let noisy = g.constant(noisy);
    let pred = model(g, noisy, t)?;
    if g.shape(pred) != eps.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} does not match noise {:?}",
            g.shape(pred),
            eps.shape()
        )));
    }
    let target = g.constant(eps.clone());
    Ok(g.mse(pred, target))
}

/// Seeded unit Gaussian tensor.
pub fn gaussian<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.sample::<f64, _>(StandardNormal)))
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`. The seeded stream
/// yields `x_T` first, then one noise draw per step `t > 1`.
pub fn sample<T, F>(shape: &[usize], sched: &NoiseSchedule, seed: u64, mut model: F) -> Result<Tensor<T>>
where
    T: Scalar,
    F: FnMut(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian::<T>(shape, &mut rng);
    for t in (1..=sched.steps()).rev() {
        let eps = model(&x, t)?;
        if eps.shape() != shape {
            return Err(Error::Shape(format!(
                "model returned {:?} for state {shape:?}",
                eps.shape()
            )));
        }
        let inv = T::lit(1.0 / sched.alpha(t).sqrt());
        let c = T::lit(sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt());
        for (xi, &ei) in x.data_mut().iter_mut().zip(eps.data()) {
            *xi = inv * (*xi - c * ei);
        }
        if t > 1 {
            let sigma = T::lit(sched.posterior_variance(t).sqrt());
            let z = gaussian::<T>(shape, &mut rng);
            for (xi, &zi) in x.data_mut().iter_mut().zip(z.data()) {
                *xi += sigma * zi;
            }
        }
        if !x.is_finite() {
            return Err(Error::SamplerDiverged { step: t });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotone() {
        let s = make_schedule(50).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(50) - 0.02).abs() < 1e-15);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(50) > 0.0);
        for v in s.betas.iter().chain(&s.alphas).chain(&s.alpha_bars) {
            assert!(*v > 0.0 && *v < 1.0);
        }
        assert_eq!(make_schedule(1).unwrap().betas, vec![1e-4]);
        assert!(make_schedule(0).is_err());
    }

    #[test]
    fn q_sample_limits_and_superposition() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x0 = gaussian::<f64>(&[4000], &mut rng);
        let eps = gaussian::<f64>(&[4000], &mut rng);
        let zero = Tensor::zeros(&[4000]);

        let y = q_sample(&x0, 1, &eps, &s).unwrap();
        let (mx, my) = (x0.data().iter().sum::<f64>() / 4000.0, y.data().iter().sum::<f64>() / 4000.0);
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (a, b) in x0.data().iter().zip(y.data()) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        assert!(sxy / (sxx * syy).sqrt() > 0.999);

        let a = s.alpha_bar(20).sqrt();
        let only_x = q_sample(&x0, 20, &zero, &s).unwrap();
        assert!(only_x.data().iter().zip(x0.data()).all(|(o, x)| *o == a * x));
        let c = (1.0 - s.alpha_bar(20)).sqrt();
        let only_e = q_sample(&zero, 20, &eps, &s).unwrap();
        assert!(only_e.data().iter().zip(eps.data()).all(|(o, e)| *o == c * e));

        let x1 = gaussian::<f64>(&[4000], &mut rng);
        let e1 = gaussian::<f64>(&[4000], &mut rng);
        let sum = |a: &Tensor<f64>, b: &Tensor<f64>| Tensor::new(vec![4000], a.data().iter().zip(b.data()).map(|(p, q)| p + q).collect()).unwrap();
        let lhs = q_sample(&sum(&x0, &x1), 30, &sum(&eps, &e1), &s).unwrap();
        let rhs = sum(&q_sample(&x0, 30, &eps, &s).unwrap(), &q_sample(&x1, 30, &e1, &s).unwrap());
        assert!(lhs.max_abs_diff(&rhs) <= 1e-6);

        assert!(q_sample(&x0, 0, &eps, &s).is_err());
        assert!(q_sample(&x0, 51, &eps, &s).is_err());
    }

    #[test]
    fn loss_of_perfect_and_zero_models() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..100 {
            let x0 = gaussian::<f64>(&[8, 16], &mut rng);
            let eps = gaussian::<f64>(&[8, 16], &mut rng);
            let t = 1 + case % 50;
            let mut g = Graph::new();
            let perfect = training_loss(&mut g, &x0, t, &eps, &s, |g, _, _| Ok(g.constant(eps.clone()))).unwrap();
            assert_eq!(g.scalar_value(perfect), 0.0);
            let zero = training_loss(&mut g, &x0, t, &eps, &s, |g, _, _| Ok(g.constant(Tensor::zeros(&[8, 16])))).unwrap();
            let l = g.scalar_value(zero);
            let ms = eps.data().iter().map(|e| e * e).sum::<f64>() / 128.0;
            assert!(l >= 0.0 && (l - ms).abs() < 1e-12);
        }
        let x0 = gaussian::<f64>(&[8, 16], &mut rng);
        let eps = gaussian::<f64>(&[8, 16], &mut rng);
        let mut g = Graph::new();
        let bad = training_loss(&mut g, &x0, 3, &eps, &s, |g, _, _| Ok(g.constant(Tensor::zeros(&[8, 15]))));
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn zero_model_matches_closed_form() {
        let s = NoiseSchedule::default();
        let shape = [5, 7];
        let out = sample::<f64, _>(&shape, &s, 9, |x, _| Ok(Tensor::zeros(x.shape()))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x: Vec<f64> = (0..35).map(|_| rng.sample(StandardNormal)).collect();
        for t in (1..=50).rev() {
            let a = 1.0 - (1e-4 + (t - 1) as f64 / 49.0 * (0.02 - 1e-4));
            x.iter_mut().for_each(|v| *v /= a.sqrt());
            if t > 1 {
                let abar = |k: usize| (1..=k).map(|i| 1.0 - (1e-4 + (i - 1) as f64 / 49.0 * (0.02 - 1e-4))).product::<f64>();
                let var = (1.0 - abar(t - 1)) / (1.0 - abar(t)) * (1.0 - a);
                for v in x.iter_mut() {
                    *v += var.sqrt() * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let err = out.data().iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn point_mass_oracle_recovers_target() {
        let s = NoiseSchedule::default();
        let target = Tensor::from_fn(&[3, 4], |i| i as f64 * 0.25 - 1.0);
        let out = sample::<f64, _>(&[3, 4], &s, 1, |x, t| {
            let ab = s.alpha_bar(t);
            let d = x.data().iter().zip(target.data()).map(|(xi, x0)| (xi - ab.sqrt() * x0) / (1.0 - ab).sqrt()).collect();
            Tensor::new(vec![3, 4], d)
        })
        .unwrap();
        assert!(out.max_abs_diff(&target) < 1e-9);
    }

    #[test]
    fn sampling_is_bitwise_deterministic_and_shape_preserving() {
        let s = NoiseSchedule::default();
        let m = |x: &Tensor<f32>, _| Ok(x.map(|v| 0.1 * v));
        let a = sample::<f32, _>(&[6, 9], &s, 3, m).unwrap();
        let b = sample::<f32, _>(&[6, 9], &s, 3, m).unwrap();
        assert_eq!(a.shape(), &[6, 9]);
        assert!(a.bit_eq(&b));
        let c = sample::<f32, _>(&[6, 9], &s, 4, m).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn divergence_reports_step() {
        let s = NoiseSchedule::default();
        let r = sample::<f64, _>(&[2], &s, 0, |x, t| Ok(if t == 37 { x.map(|_| f64::NAN) } else { x.clone() }));
        assert!(matches!(r, Err(Error::SamplerDiverged { step: 37 })));
    }
}
