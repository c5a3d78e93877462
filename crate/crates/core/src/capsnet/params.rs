use num_traits::Float;

use super::CapsNetSpec;
use crate::error::config_err;
use crate::numerics::{RandomStream, Real, Tensor};
use crate::Result;

/// Learnable parameters of a [`CapsNetSpec`] network.
///
/// Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetParams<T: Real = f32> {
    /// `[F, C, k0, k0]`
    pub conv_kernels: Tensor<T>,
    /// `[F]`
    pub conv_bias: Tensor<T>,
    /// `[G * d1, F, k1, k1]`
    pub primary_kernels: Tensor<T>,
    /// `[G * d1]`
    pub primary_bias: Tensor<T>,
    /// `[children, K, d2, d1]`: one matrix per child/parent pair.
    pub weights: Tensor<T>,
}

impl<T: Real> CapsNetParams<T> {
    pub fn zeros(spec: &CapsNetSpec) -> Self {
        let [c, _, _] = spec.input_shape;
        let (f, k0, k1) = (spec.conv_filters, spec.conv_kernel, spec.primary_kernel);
        let pc = spec.primary_channels();
        Self {
            conv_kernels: Tensor::zeros(&[f, c, k0, k0]),
            conv_bias: Tensor::zeros(&[f]),
            primary_kernels: Tensor::zeros(&[pc, f, k1, k1]),
            primary_bias: Tensor::zeros(&[pc]),
            weights: Tensor::zeros(&[spec.child_count(), spec.category_count, spec.category_dim, spec.primary_dim]),
        }
    }

    /// Gaussian initialization scaled by fan-in; biases start at zero.
    pub fn init(spec: &CapsNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut p = Self::zeros(spec);
        let mut stream = RandomStream::new(seed);
        let [c, _, _] = spec.input_shape;
        let conv_std = Float::sqrt(2.0 / (c * spec.conv_kernel * spec.conv_kernel) as f64);
        let prim_std = Float::sqrt(1.0 / (spec.conv_filters * spec.primary_kernel * spec.primary_kernel) as f64);
        let w_std = 0.5 * spec.category_count as f64 / Float::sqrt((spec.child_count() * spec.primary_dim) as f64);
        for (t, std) in [
            (&mut p.conv_kernels, conv_std),
            (&mut p.primary_kernels, prim_std),
            (&mut p.weights, w_std),
        ] {
            t.data_mut().iter_mut().for_each(|v| *v = T::from_f64(std * stream.normal()));
        }
        Ok(p)
    }

    pub fn tensors(&self) -> [&Tensor<T>; 5] {
        [
            &self.conv_kernels,
            &self.conv_bias,
            &self.primary_kernels,
            &self.primary_bias,
            &self.weights,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 5] {
        [
            &mut self.conv_kernels,
            &mut self.conv_bias,
            &mut self.primary_kernels,
            &mut self.primary_bias,
            &mut self.weights,
        ]
    }

    pub const TENSOR_NAMES: [&'static str; 5] =
        ["conv_kernels", "conv_bias", "primary_kernels", "primary_bias", "weights"];

    pub fn cast<U: Real>(&self) -> CapsNetParams<U> {
        CapsNetParams {
            conv_kernels: self.conv_kernels.cast(),
            conv_bias: self.conv_bias.cast(),
            primary_kernels: self.primary_kernels.cast(),
            primary_bias: self.primary_bias.cast(),
            weights: self.weights.cast(),
        }
    }

    pub fn check(&self, spec: &CapsNetSpec) -> Result<()> {
        let want = Self::zeros(spec);
        for ((a, b), name) in self.tensors().iter().zip(want.tensors()).zip(Self::TENSOR_NAMES) {
            if a.shape() != b.shape() {
                return Err(config_err!("{name}: shape {:?}, spec needs {:?}", a.shape(), b.shape()));
            }
            a.ensure_finite(name)?;
        }
        Ok(())
    }

    /// FNV-1a over every parameter's bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for t in self.tensors() {
            for &v in t.data() {
                h ^= v.as_f64().to_bits();
                h = h.wrapping_mul(0x0100_0000_01B3);
            }
        }
        h
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }
}
