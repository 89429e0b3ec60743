use serde::{Deserialize, Serialize};

use super::DcopfError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    Relaxed,
    Binary,
}

/// Line states: relaxed values in `[0, 1]` or binary values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchVector {
    values: Vec<f64>,
    mode: SwitchMode,
}

impl SwitchVector {
    pub fn relaxed(values: &[f64]) -> Result<Self, DcopfError> {
        if let Some((l, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(DcopfError::Switch(format!("line {l}: relaxed state {v} outside [0, 1]")));
        }
        Ok(Self {
            values: values.to_vec(),
            mode: SwitchMode::Relaxed,
        })
    }

    pub fn binary(closed: &[bool]) -> Self {
        Self {
            values: closed.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect(),
            mode: SwitchMode::Binary,
        }
    }

    /// Binary vector from numeric 0/1 entries.
    pub fn binary_from_values(values: &[f64]) -> Result<Self, DcopfError> {
        if let Some((l, v)) = values.iter().enumerate().find(|(_, v)| **v != 0.0 && **v != 1.0) {
            return Err(DcopfError::Switch(format!("line {l}: binary state {v} not in {{0, 1}}")));
        }
        Ok(Self {
            values: values.to_vec(),
            mode: SwitchMode::Binary,
        })
    }

    pub fn all_closed(n_line: usize) -> Self {
        Self::binary(&vec![true; n_line])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> SwitchMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Closed flags; for relaxed vectors a line counts as closed when its
    /// state is positive.
    pub fn closed(&self) -> Vec<bool> {
        self.values.iter().map(|&v| v > 0.0).collect()
    }

    pub fn open_lines(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 0.0)
            .map(|(l, _)| l)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relaxed_range_checked() {
        assert!(SwitchVector::relaxed(&[0.0, 0.5, 1.0]).is_ok());
        assert!(SwitchVector::relaxed(&[1.01]).is_err());
        assert!(SwitchVector::relaxed(&[f64::NAN]).is_err());
        assert!(SwitchVector::binary_from_values(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn open_lines_listed() {
        let z = SwitchVector::binary(&[true, false, true, false]);
        assert_eq!(z.open_lines(), vec![1, 3]);
        assert_eq!(z.mode(), SwitchMode::Binary);
    }
}
