//! The dummy-class output head: label padding, dummy-prediction counting and
//! the per-sample gradient fraction across dummy classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of real classes `C` and dummy classes `C_d`.
///
/// `num_dummy == 0` is plain ERM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub num_classes: usize,
    pub num_dummy: usize,
}

impl HeadConfig {
    pub fn new(num_classes: usize, num_dummy: usize) -> Result<Self> {
        let head = Self {
            num_classes,
            num_dummy,
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }

    /// Output width `C + C_d`.
    #[inline]
    pub fn width(&self) -> usize {
        self.num_classes + self.num_dummy
    }

    pub fn is_erm(&self) -> bool {
        self.num_dummy == 0
    }

    pub fn mode_name(&self) -> &'static str {
        if self.is_erm() {
            "ERM"
        } else {
            "DuRM"
        }
    }
}

/// One-hot target of length `C + C_d`; dummy entries are always zero.
pub fn pad_label(y: usize, head: &HeadConfig) -> Result<Vec<f64>> {
    if y >= head.num_classes {
        return Err(Error::LabelOutOfRange {
            label: y,
            num_classes: head.num_classes,
        });
    }
    let mut v = vec![0.0; head.width()];
    v[y] = 1.0;
    Ok(v)
}

/// Number of predictions that land on a dummy class (index `>= C`).
pub fn count_dummy_predictions(predictions: &[usize], head: &HeadConfig) -> Result<usize> {
    let mut count = 0;
    for &p in predictions {
        if p >= head.width() {
            return Err(Error::LabelOutOfRange {
                label: p,
                num_classes: head.width(),
            });
        }
        if p >= head.num_classes {
            count += 1;
        }
    }
    Ok(count)
}

/// Share of each dummy class in the total dummy probability mass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFraction {
    pub fractions: Vec<f64>,
    /// Set when the dummy mass was exactly zero and the uniform split was
    /// substituted.
    pub underflow: bool,
}

pub fn gradient_fraction(p_dummy: &[f64]) -> Result<GradientFraction> {
    if p_dummy.is_empty() {
        return Err(Error::Empty("dummy probabilities"));
    }
    if let Some(index) = p_dummy.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::NonFinite {
            what: "dummy probabilities (must be finite and >= 0)",
            index,
        });
    }
    let total: f64 = p_dummy.iter().sum();
    if total == 0.0 {
        let n = p_dummy.len() as f64;
        return Ok(GradientFraction {
            fractions: vec![1.0 / n; p_dummy.len()],
            underflow: true,
        });
    }
    Ok(GradientFraction {
        fractions: p_dummy.iter().map(|v| v / total).collect(),
        underflow: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pad_label_examples() {
        let h = HeadConfig::new(3, 2).unwrap();
        assert_eq!(pad_label(1, &h).unwrap(), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let h = HeadConfig::new(3, 0).unwrap();
        assert_eq!(pad_label(2, &h).unwrap(), vec![0.0, 0.0, 1.0]);
        let h = HeadConfig::new(2, 3).unwrap();
        assert_eq!(pad_label(0, &h).unwrap(), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pad_label_rejects_dummy_index() {
        let h = HeadConfig::new(3, 2).unwrap();
        assert!(matches!(
            pad_label(3, &h),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn head_needs_two_classes() {
        assert!(HeadConfig::new(1, 4).is_err());
        assert_eq!(HeadConfig::new(2, 0).unwrap().mode_name(), "ERM");
    }

    #[test]
    fn counts_dummy_predictions() {
        let h = HeadConfig::new(3, 2).unwrap();
        assert_eq!(count_dummy_predictions(&[0, 1, 2, 1], &h).unwrap(), 0);
        assert_eq!(count_dummy_predictions(&[0, 3, 1], &h).unwrap(), 1);
        assert!(count_dummy_predictions(&[5], &h).is_err());
    }

    #[test]
    fn fraction_examples() {
        let f = gradient_fraction(&[0.1, 0.1]).unwrap();
        assert_eq!(f.fractions, vec![0.5, 0.5]);
        assert!(!f.underflow);
        let f = gradient_fraction(&[0.3, 0.1]).unwrap();
        assert!((f.fractions[0] - 0.75).abs() < 1e-15);
        assert!((f.fractions[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn fraction_underflow_is_uniform() {
        let f = gradient_fraction(&[0.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(f.underflow);
        assert_eq!(f.fractions, vec![0.25; 4]);
        assert!(gradient_fraction(&[-0.1, 0.2]).is_err());
        assert!(gradient_fraction(&[]).is_err());
    }

    proptest! {
        #[test]
        fn pad_label_is_one_hot(c in 2usize..10, d in 0usize..10, y in 0usize..10) {
            let h = HeadConfig::new(c, d).unwrap();
            let y = y % c;
            let v = pad_label(y, &h).unwrap();
            prop_assert_eq!(v.len(), c + d);
            prop_assert_eq!(v.iter().sum::<f64>(), 1.0);
            prop_assert_eq!(v.iter().filter(|x| **x != 0.0).count(), 1);
        }

        #[test]
        fn fraction_is_scale_invariant(
            p in prop::collection::vec(1e-6f64..1.0, 1..6),
            scale in 1e-3f64..1e3,
        ) {
            let a = gradient_fraction(&p).unwrap();
            let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let b = gradient_fraction(&scaled).unwrap();
            for (x, y) in a.fractions.iter().zip(&b.fractions) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
