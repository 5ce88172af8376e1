use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{GicError, Result};

/// Binary blocker placement over substations (`1` = device installed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Placement(pub Vec<u8>);

impl Placement {
    pub fn none(n_substations: usize) -> Self {
        Placement(vec![0; n_substations])
    }

    pub fn all(n_substations: usize) -> Self {
        Placement(vec![1; n_substations])
    }

    pub fn from_indices(n_substations: usize, indices: &[usize]) -> Self {
        let mut z = vec![0; n_substations];
        for &i in indices {
            z[i] = 1;
        }
        Placement(z)
    }

    /// Converts a real vector, failing on anything other than exact 0/1.
    pub fn from_f64(z: &[f64]) -> Result<Self> {
        z.iter()
            .enumerate()
            .map(|(index, &value)| match value {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                _ => Err(GicError::NonBinary { index, value }),
            })
            .collect::<Result<Vec<u8>>>()
            .map(Placement)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i).collect()
    }

    /// `'0'`/`'1'` per substation, in substation order.
    pub fn bitstring(&self) -> String {
        self.0.iter().map(|&v| if v == 1 { '1' } else { '0' }).collect()
    }

    /// Checks the length, that entries are binary and that the budget holds.
    pub fn check(&self, n_substations: usize, budget: usize) -> Result<()> {
        if self.len() != n_substations {
            return Err(GicError::PlacementLength { got: self.len(), expected: n_substations });
        }
        if let Some((index, &v)) = self.0.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(GicError::NonBinary { index, value: v as f64 });
        }
        let used = self.count();
        if used > budget {
            return Err(GicError::BudgetExceeded { used, budget });
        }
        Ok(())
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.bitstring())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_and_binary_checks() {
        let p = Placement(vec![1, 0, 1]);
        assert!(p.check(3, 2).is_ok());
        assert!(matches!(p.check(3, 1), Err(GicError::BudgetExceeded { used: 2, budget: 1 })));
        assert!(matches!(p.check(4, 3), Err(GicError::PlacementLength { .. })));
        assert!(matches!(Placement::from_f64(&[0.0, 0.5]), Err(GicError::NonBinary { index: 1, .. })));
        assert_eq!(Placement::from_f64(&[1.0, 0.0]).unwrap().bitstring(), "10");
        assert_eq!(p.indices(), vec![0, 2]);
    }
}
