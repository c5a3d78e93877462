use alloc::format;
use alloc::string::ToString;

use crate::error::config_err;
use crate::numerics::conv_output_extent;
use crate::{Error, Result};

/// Elementwise nonlinearity after the first convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Capsule network architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapsNetSpec {
    /// `(channels, height, width)`
    pub input_shape: [usize; 3],
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub primary_groups: usize,
    pub primary_dim: usize,
    pub primary_kernel: usize,
    pub primary_stride: usize,
    pub category_count: usize,
    pub category_dim: usize,
    pub routing_iters: usize,
    pub activation: Activation,
}

impl Default for CapsNetSpec {
    fn default() -> Self {
        Self {
            input_shape: [3, 32, 32],
            conv_filters: 12,
            conv_kernel: 5,
            primary_groups: 4,
            primary_dim: 4,
            primary_kernel: 5,
            primary_stride: 2,
            category_count: 5,
            category_dim: 8,
            routing_iters: 3,
            activation: Activation::Relu,
        }
    }
}

fn geometry(keys: &str, detail: impl ToString) -> Error {
    Error::Geometry {
        keys: keys.into(),
        detail: detail.to_string(),
    }
}

impl CapsNetSpec {
    /// 8x8 single-channel geometry small enough for finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            input_shape: [1, 8, 8],
            conv_filters: 4,
            conv_kernel: 3,
            primary_groups: 2,
            primary_dim: 4,
            primary_kernel: 3,
            primary_stride: 1,
            category_count: 3,
            category_dim: 4,
            routing_iters: 2,
            activation: Activation::Relu,
        }
    }

    /// Checks every invariant; errors name the offending fields.
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(geometry("input_shape", format!("extents must be positive, got {:?}", self.input_shape)));
        }
        for (key, v) in [
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("primary_groups", self.primary_groups),
            ("primary_kernel", self.primary_kernel),
            ("primary_stride", self.primary_stride),
        ] {
            if v == 0 {
                return Err(config_err!("{key} must be positive"));
            }
        }
        if self.routing_iters < 1 {
            return Err(config_err!("routing_iters must be at least 1"));
        }
        if self.primary_dim < 2 {
            return Err(config_err!("primary_dim must be at least 2"));
        }
        if self.category_dim < 2 {
            return Err(config_err!("category_dim must be at least 2"));
        }
        if self.category_count < 2 {
            return Err(config_err!("category_count must be at least 2"));
        }
        self.extents().map(|_| ())
    }

    fn extents(&self) -> Result<((usize, usize), (usize, usize))> {
        let [_, h, w] = self.input_shape;
        let conv = match (conv_output_extent(h, self.conv_kernel, 1), conv_output_extent(w, self.conv_kernel, 1)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(geometry(
                    "conv_kernel, input_shape",
                    format!("kernel {} does not fit {h}x{w}", self.conv_kernel),
                ))
            }
        };
        let prim = match (
            conv_output_extent(conv.0, self.primary_kernel, self.primary_stride),
            conv_output_extent(conv.1, self.primary_kernel, self.primary_stride),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(geometry(
                    "primary_kernel, primary_stride",
                    format!("kernel {} does not fit the {}x{} feature map", self.primary_kernel, conv.0, conv.1),
                ))
            }
        };
        Ok((conv, prim))
    }

    /// Feature-map extent after the first convolution.
    pub fn conv_extent(&self) -> (usize, usize) {
        self.extents().expect("validated spec").0
    }

    /// Spatial grid of primary capsules.
    pub fn primary_extent(&self) -> (usize, usize) {
        self.extents().expect("validated spec").1
    }

    pub fn primary_channels(&self) -> usize {
        self.primary_groups * self.primary_dim
    }

    pub fn child_count(&self) -> usize {
        let (h, w) = self.primary_extent();
        self.primary_groups * h * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_geometry() {
        let s = CapsNetSpec::default();
        s.validate().unwrap();
        assert_eq!(s.conv_extent(), (28, 28));
        assert_eq!(s.primary_extent(), (12, 12));
        assert_eq!(s.child_count(), 576);
    }

    #[test]
    fn rejects_bad_specs() {
        let base = CapsNetSpec::default();
        let bad = [
            CapsNetSpec { routing_iters: 0, ..base.clone() },
            CapsNetSpec { primary_dim: 1, ..base.clone() },
            CapsNetSpec { category_dim: 1, ..base.clone() },
            CapsNetSpec { category_count: 1, ..base.clone() },
            CapsNetSpec { conv_kernel: 33, ..base.clone() },
            CapsNetSpec { primary_kernel: 29, ..base.clone() },
        ];
        for s in bad {
            assert!(s.validate().is_err(), "{s:?}");
        }
        match (CapsNetSpec { conv_kernel: 40, ..base }).validate() {
            Err(Error::Geometry { keys, .. }) => assert!(keys.contains("conv_kernel")),
            other => panic!("{other:?}"),
        }
    }
}
