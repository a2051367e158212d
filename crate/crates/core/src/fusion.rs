//! Merging of the two encoders' hidden-state streams into one shared
//! representation.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tensor, TensorError};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FusionMode {
    /// Hadamard product of aligned hidden states.
    Multiplicative,
    /// Pointwise sum of aligned hidden states.
    Additive,
}

impl FusionMode {
    pub const ALL: [FusionMode; 2] = [FusionMode::Multiplicative, FusionMode::Additive];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Multiplicative => "multiplicative",
            FusionMode::Additive => "additive",
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multiplicative" | "mult" => Ok(FusionMode::Multiplicative),
            "additive" | "add" => Ok(FusionMode::Additive),
            other => Err(format!("unknown fusion mode `{other}` (expected multiplicative|additive)")),
        }
    }
}

/// Combines two identically shaped streams. Neither input is modified.
pub fn fuse<T: Real>(h_a: &Tensor<T>, h_b: &Tensor<T>, mode: FusionMode) -> Result<Tensor<T>, TensorError> {
    if h_a.shape() != h_b.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "fuse",
            left: h_a.shape().to_vec(),
            right: h_b.shape().to_vec(),
        });
    }
    match mode {
        FusionMode::Multiplicative => h_a.mul(h_b),
        FusionMode::Additive => h_a.add(h_b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(data: &[f64]) -> Tensor<f64> {
        Tensor::new(&[1, data.len() / 2, 2], data.to_vec()).unwrap()
    }

    #[test]
    fn identities() {
        let h = t(&[0.3, -1.5, 2.0, 7.25]);
        let ones = t(&[1.0; 4]);
        let zeros = t(&[0.0; 4]);
        assert_eq!(fuse(&h, &ones, FusionMode::Multiplicative).unwrap().to_vec(), h.to_vec());
        assert_eq!(fuse(&h, &zeros, FusionMode::Additive).unwrap().to_vec(), h.to_vec());
    }

    #[test]
    fn pointwise_product_example() {
        let a = t(&[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2.0, 0.0, 1.0, 3.0]);
        let out = fuse(&a, &b, FusionMode::Multiplicative).unwrap();
        assert_eq!(out.shape(), &[1, 2, 2]);
        assert_eq!(out.to_vec(), vec![2.0, 0.0, 3.0, 12.0]);
    }

    #[test]
    fn shape_mismatch() {
        let a = t(&[1.0; 4]);
        let b = Tensor::new(&[1, 1, 4], vec![1.0; 4]).unwrap();
        assert!(matches!(fuse(&a, &b, FusionMode::Additive), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn parses_config_values() {
        assert_eq!("multiplicative".parse::<FusionMode>().unwrap(), FusionMode::Multiplicative);
        assert_eq!("additive".parse::<FusionMode>().unwrap(), FusionMode::Additive);
        assert!("concat".parse::<FusionMode>().is_err());
    }

    proptest! {
        #[test]
        fn commutative_and_pure(a in prop::collection::vec(-1e3f64..1e3, 6), b in prop::collection::vec(-1e3f64..1e3, 6)) {
            let ta = Tensor::new(&[1, 3, 2], a.clone()).unwrap();
            let tb = Tensor::new(&[1, 3, 2], b.clone()).unwrap();
            for mode in FusionMode::ALL {
                let ab = fuse(&ta, &tb, mode).unwrap().to_vec();
                let ba = fuse(&tb, &ta, mode).unwrap().to_vec();
                prop_assert_eq!(ab.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), ba.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
            prop_assert_eq!(ta.to_vec(), a);
            prop_assert_eq!(tb.to_vec(), b);
        }

        #[test]
        fn zero_entry_forces_zero_product(a in prop::collection::vec(-1e3f64..1e3, 4), zero_at in 0usize..4) {
            let mut b = vec![1.5; 4];
            b[zero_at] = 0.0;
            let out = fuse(&t(&a), &t(&b), FusionMode::Multiplicative).unwrap().to_vec();
            prop_assert_eq!(out[zero_at], 0.0);
        }
    }
}
