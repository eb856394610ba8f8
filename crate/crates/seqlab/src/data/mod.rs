//! Dataset loading, cleaning, splitting, and synthetic generation.

pub mod air_quality;
pub mod mnist;
pub mod split;
pub mod synth;

use crate::error::{Error, Result};
use crate::ndcore::Matrix2;

/// One supervised sequence: a list of per-timestep input column vectors and a
/// target column vector (one-hot for classification, raw values for regression).
#[derive(Debug, Clone)]
pub struct SeqSample {
    pub inputs: Vec<Matrix2>,
    pub target: Matrix2,
}

impl SeqSample {
    pub fn new(inputs: Vec<Matrix2>, target: Matrix2) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("sequence sample"));
        }
        let dim = inputs[0].rows();
        for (t, x) in inputs.iter().enumerate() {
            if x.cols() != 1 || x.rows() != dim {
                return Err(Error::invalid(format!(
                    "timestep {t} has shape {:?}, expected ({dim}, 1)",
                    x.shape()
                )));
            }
        }
        if target.cols() != 1 {
            return Err(Error::invalid("target must be a column vector"));
        }
        Ok(Self { inputs, target })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].rows()
    }

    /// Index of the target's largest entry; for one-hot targets this is the class label.
    pub fn class_index(&self) -> usize {
        self.target.argmax()
    }
}

/// Builds a one-hot column vector with `num_classes` rows.
pub fn one_hot(label: usize, num_classes: usize) -> Result<Matrix2> {
    if label >= num_classes {
        return Err(Error::invalid(format!(
            "label {label} out of range for {num_classes} classes"
        )));
    }
    let mut v = Matrix2::zeros(num_classes, 1)?;
    v.set(label, 0, 1.0);
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_basics() {
        let v = one_hot(2, 4).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(one_hot(4, 4).is_err());
    }

    #[test]
    fn sample_validation() {
        let xs = vec![Matrix2::zeros(3, 1).unwrap(), Matrix2::zeros(3, 1).unwrap()];
        let s = SeqSample::new(xs, one_hot(1, 2).unwrap()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.input_dim(), 3);
        assert_eq!(s.class_index(), 1);

        let bad = vec![Matrix2::zeros(3, 1).unwrap(), Matrix2::zeros(2, 1).unwrap()];
        assert!(SeqSample::new(bad, one_hot(0, 2).unwrap()).is_err());
        assert!(SeqSample::new(vec![], one_hot(0, 2).unwrap()).is_err());
    }
}
