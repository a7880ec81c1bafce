use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, Axis, LinalgScalar, ScalarOperand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Floating-point element type of the network.
pub trait Scalar:
    LinalgScalar + ScalarOperand + PartialOrd + AddAssign + SubAssign + MulAssign + Send + Sync + std::fmt::Debug
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Fully connected network: every hidden layer is affine, batch
/// normalization, rectifier; the output layer is affine.
///
/// Parameters are kept as a flat list of matrices. Hidden layer `l` owns
/// `params[4l..4l+4] = [W, b, gamma, beta]`; the output layer owns the final
/// `[W, b]`. Vectors are stored as `1 x width` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    pub dims: Vec<usize>,
    pub params: Vec<Array2<T>>,
    pub running_mean: Vec<Array1<T>>,
    pub running_var: Vec<Array1<T>>,
}

struct HiddenCache<T> {
    input: Array2<T>,
    xhat: Array2<T>,
    inv_std: Array1<T>,
    active: Array2<bool>,
}

/// Activations kept from a training-mode forward pass.
pub struct ForwardCache<T> {
    hidden: Vec<HiddenCache<T>>,
    last_input: Array2<T>,
}

impl<T: Scalar> Mlp<T> {
    /// He-initialized weights, zero biases, unit scale.
    pub fn new(dims: &[usize], seed: u64) -> Self {
        assert!(dims.len() >= 2, "network needs input and output widths");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut running_mean = Vec::new();
        let mut running_var = Vec::new();
        let layers = dims.len() - 1;
        for l in 0..layers {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
            params.push(Array2::from_shape_simple_fn((fan_in, fan_out), || T::from_f64(normal.sample(&mut rng))));
            params.push(Array2::zeros((1, fan_out)));
            if l + 1 < layers {
                params.push(Array2::from_elem((1, fan_out), T::one()));
                params.push(Array2::zeros((1, fan_out)));
                running_mean.push(Array1::zeros(fan_out));
                running_var.push(Array1::from_elem(fan_out, T::one()));
            }
        }
        Mlp { dims: dims.to_vec(), params, running_mean, running_var }
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_hidden(&self) -> usize {
        self.dims.len() - 2
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    fn check(&self, x: &Array2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    fn affine(&self, x: &Array2<T>, base: usize) -> Array2<T> {
        let mut z = x.dot(&self.params[base]);
        z += &self.params[base + 1].row(0);
        z
    }

    /// Evaluation-mode forward pass using the running statistics.
    pub fn forward(&self, x: &Array2<T>) -> Result<Array2<T>> {
        self.check(x)?;
        let mut a = x.clone();
        for l in 0..self.n_hidden() {
            let base = 4 * l;
            let mut z = self.affine(&a, base);
            let scale: Array1<T> = self.running_var[l]
                .iter()
                .zip(self.params[base + 2].row(0))
                .map(|(v, g)| *g * T::from_f64(1.0 / (v.to_f64() + BN_EPS).sqrt()))
                .collect();
            let shift: Array1<T> = self.running_mean[l]
                .iter()
                .zip(scale.iter())
                .zip(self.params[base + 3].row(0))
                .map(|((m, s), b)| *b - *m * *s)
                .collect();
            z *= &scale;
            z += &shift;
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            a = z;
        }
        Ok(self.affine(&a, 4 * self.n_hidden()))
    }

    /// Training-mode forward pass with batch statistics; updates the
    /// running statistics.
    pub fn forward_train(&mut self, x: &Array2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check(x)?;
        let bsz = x.nrows();
        if bsz < 2 {
            return Err(Error::DegenerateInput("batch normalization needs at least two samples".into()));
        }
        let mut hidden = Vec::with_capacity(self.n_hidden());
        let mut a = x.clone();
        for l in 0..self.n_hidden() {
            let base = 4 * l;
            let z = self.affine(&a, base);
            let mean = z.sum_axis(Axis(0)) * T::from_f64(1.0 / bsz as f64);
            let centered = &z - &mean;
            let var: Array1<f64> =
                centered.axis_iter(Axis(1)).map(|c| c.iter().map(|v| v.to_f64().powi(2)).sum::<f64>() / bsz as f64).collect();
            let inv_std: Array1<T> = var.iter().map(|v| T::from_f64(1.0 / (v + BN_EPS).sqrt())).collect();
            let xhat = centered * &inv_std;
            let mut y = &xhat * &self.params[base + 2].row(0);
            y += &self.params[base + 3].row(0);
            let active = y.mapv(|v| v > T::zero());
            y.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            let m = T::from_f64(BN_MOMENTUM);
            let keep = T::from_f64(1.0 - BN_MOMENTUM);
            let unbias = bsz as f64 / (bsz as f64 - 1.0);
            for k in 0..mean.len() {
                self.running_mean[l][k] = keep * self.running_mean[l][k] + m * mean[k];
                self.running_var[l][k] = keep * self.running_var[l][k] + m * T::from_f64(var[k] * unbias);
            }
            hidden.push(HiddenCache { input: a, xhat, inv_std, active });
            a = y;
        }
        let out = self.affine(&a, 4 * self.n_hidden());
        Ok((out, ForwardCache { hidden, last_input: a }))
    }

    /// Exact gradients of `sum(dy * output)` for the batch of the cache.
    pub fn backward(&self, cache: &ForwardCache<T>, dy: &Array2<T>) -> Vec<Array2<T>> {
        let mut grads: Vec<Array2<T>> = self.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        let base = 4 * self.n_hidden();
        grads[base] = cache.last_input.t().dot(dy);
        grads[base + 1] = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut da = dy.dot(&self.params[base].t());
        for l in (0..self.n_hidden()).rev() {
            let c = &cache.hidden[l];
            let base = 4 * l;
            let bsz = T::from_f64(c.xhat.nrows() as f64);
            let mut dyl = da;
            ndarray::Zip::from(&mut dyl).and(&c.active).for_each(|g, on| {
                if !*on {
                    *g = T::zero();
                }
            });
            grads[base + 2] = (&dyl * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[base + 3] = dyl.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dxhat = dyl * &self.params[base + 2].row(0);
            let sum_d = dxhat.sum_axis(Axis(0));
            let sum_dx = (&dxhat * &c.xhat).sum_axis(Axis(0));
            let mut dz = dxhat * bsz;
            dz -= &sum_d;
            dz -= &(&c.xhat * &sum_dx);
            dz *= &c.inv_std.mapv(|s| s / bsz);
            grads[base] = c.input.t().dot(&dz);
            grads[base + 1] = dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            da = if l > 0 { dz.dot(&self.params[base].t()) } else { Array2::zeros((0, 0)) };
        }
        grads
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            dims: self.dims.clone(),
            params: self.params.iter().map(|p| p.mapv(|v| U::from_f64(v.to_f64()))).collect(),
            running_mean: self.running_mean.iter().map(|p| p.mapv(|v| U::from_f64(v.to_f64()))).collect(),
            running_var: self.running_var.iter().map(|p| p.mapv(|v| U::from_f64(v.to_f64()))).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.iter().all(|v| v.to_f64().is_finite()))
    }
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Array2<T>>,
    v: Vec<Array2<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Mlp<T>) -> Self {
        let zeros = || model.params.iter().map(|p| Array2::zeros(p.raw_dim())).collect::<Vec<_>>();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step(&mut self, model: &mut Mlp<T>, grads: &[Array2<T>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let step = T::from_f64(lr * c2.sqrt() / c1);
        let eps = T::from_f64(self.eps * c2.sqrt());
        let (tb1, tb2) = (T::from_f64(b1), T::from_f64(b2));
        let (ob1, ob2) = (T::from_f64(1.0 - b1), T::from_f64(1.0 - b2));
        for k in 0..grads.len() {
            ndarray::Zip::from(&mut model.params[k])
                .and(&mut self.m[k])
                .and(&mut self.v[k])
                .and(&grads[k])
                .for_each(|p, m, v, g| {
                    *m = tb1 * *m + ob1 * *g;
                    *v = tb2 * *v + ob2 * *g * *g;
                    let denom = T::from_f64(v.to_f64().sqrt()) + eps;
                    *p = *p - step * *m / denom;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut m = Mlp::<f64>::new(&[4, 3, 2], 1);
        for p in m.params.iter_mut() {
            p.fill(0.0);
        }
        let last = m.params.len() - 1;
        m.params[last] = Array2::from_shape_vec((1, 2), vec![1.5, -2.0]).unwrap();
        let x = batch(5, 4, 2);
        for out in [m.forward(&x).unwrap(), m.forward_train(&x).unwrap().0] {
            for r in out.rows() {
                assert_eq!(r.to_vec(), vec![1.5, -2.0]);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut m = Mlp::<f64>::new(&[4, 3, 2], 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in m.params.iter_mut() {
            p.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
        }
        let x = batch(6, 4, 3);
        let r = batch(6, 2, 4);
        let loss = |m: &mut Mlp<f64>| (m.forward_train(&x).unwrap().0 * &r).sum();
        let (_, cache) = m.forward_train(&x).unwrap();
        let grads = m.backward(&cache, &r);
        let h = 1e-6;
        for k in 0..m.params.len() {
            for idx in 0..m.params[k].len() {
                let mut plus = m.clone();
                plus.params[k].as_slice_mut().unwrap()[idx] += h;
                let mut minus = m.clone();
                minus.params[k].as_slice_mut().unwrap()[idx] -= h;
                let fd = (loss(&mut plus) - loss(&mut minus)) / (2.0 * h);
                let an = grads[k].as_slice().unwrap()[idx];
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(err < 1e-4 || (fd - an).abs() < 1e-8, "param {k}[{idx}]: {an} vs {fd}");
            }
        }
    }

    #[test]
    fn duplicates_and_eval_are_consistent() {
        let mut m = Mlp::<f64>::new(&[4, 8, 8, 2], 3);
        let mut x = batch(5, 4, 5);
        let first = x.row(0).to_owned();
        x.row_mut(3).assign(&first);
        let (y, _) = m.forward_train(&x).unwrap();
        assert_eq!(y.row(0), y.row(3));
        let a = m.forward(&x).unwrap();
        let b = m.forward(&x).unwrap();
        assert_eq!(a, b);
        assert!(matches!(m.forward(&batch(2, 3, 1)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn adam_reduces_a_quadratic() {
        let mut m = Mlp::<f64>::new(&[3, 2], 1);
        let mut opt = Adam::new(&m);
        let x = batch(8, 3, 9);
        let target = batch(8, 2, 10);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..300 {
            let (y, cache) = m.forward_train(&x).unwrap();
            let diff = &y - &target;
            last = diff.mapv(|v| v * v).sum();
            first.get_or_insert(last);
            let grads = m.backward(&cache, &(diff * 2.0));
            opt.step(&mut m, &grads, 1e-2);
        }
        assert!(last < 0.5 * first.unwrap());
    }
}
