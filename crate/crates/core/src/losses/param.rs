//! Adjustable loss parameters and their invariants.

use serde::{Deserialize, Serialize};

use crate::error::{AlaError, Result};
use crate::losses::bank::DEFAULT_MIXTURE;

pub const FOCAL_MIN: f64 = 0.1;
pub const FOCAL_MAX: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    ClassCorrelation,
    DistanceMixture,
    FocalWeighting,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::ClassCorrelation => "class-correlation",
            LossMode::DistanceMixture => "distance-mixture",
            LossMode::FocalWeighting => "focal-weighting",
        }
    }

    /// Statistics observed per adjustable parameter.
    pub fn stats_per_param(self) -> usize {
        match self {
            LossMode::ClassCorrelation => 2,
            LossMode::DistanceMixture | LossMode::FocalWeighting => 1,
        }
    }
}

/// Symmetric class-correlation matrix with a unit diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCorrelation {
    classes: usize,
    values: Vec<f64>,
}

impl ClassCorrelation {
    pub fn identity(classes: usize) -> Self {
        let mut values = vec![0.0; classes * classes];
        for i in 0..classes {
            values[i * classes + i] = 1.0;
        }
        ClassCorrelation { classes, values }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.len();
        let mut values = Vec::with_capacity(classes * classes);
        for r in rows {
            if r.len() != classes {
                return Err(AlaError::Shape("class-correlation matrix must be square".into()));
            }
            values.extend_from_slice(r);
        }
        let m = ClassCorrelation { classes, values };
        m.check()?;
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.classes..(i + 1) * self.classes]
    }

    /// Off-diagonal pairs `(i, j)` with `i < j`, row-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        pairs_for(self.classes)
    }

    /// Sets both `(i, j)` and `(j, i)` to `v` clipped to `[-1, 1]`.
    pub fn set_pair(&mut self, i: usize, j: usize, v: f64) -> Result<()> {
        if i == j {
            return Err(AlaError::Usage(format!("diagonal entry ({i}, {i}) is fixed at 1")));
        }
        if i >= self.classes || j >= self.classes {
            return Err(AlaError::Usage(format!(
                "pair ({i}, {j}) out of range for {} classes",
                self.classes
            )));
        }
        let v = v.clamp(-1.0, 1.0);
        self.values[i * self.classes + j] = v;
        self.values[j * self.classes + i] = v;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        for i in 0..self.classes {
            if self.get(i, i) != 1.0 {
                return Err(AlaError::Input(format!("diagonal ({i}, {i}) is not 1")));
            }
            for j in 0..self.classes {
                let v = self.get(i, j);
                if !(-1.0..=1.0).contains(&v) || v != self.get(j, i) {
                    return Err(AlaError::Input(format!("entry ({i}, {j}) = {v} breaks bounds or symmetry")));
                }
            }
        }
        Ok(())
    }
}

pub fn pairs_for(classes: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(classes * classes.saturating_sub(1) / 2);
    for i in 0..classes {
        for j in i + 1..classes {
            out.push((i, j));
        }
    }
    out
}

/// The loss parameters Φ in one of the three supported modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum LossParameterization {
    ClassCorrelation(ClassCorrelation),
    DistanceMixture { weights: [f64; 10] },
    FocalWeighting { scales: [f64; 2] },
}

/// Flat, serializable view of Φ at one point in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub mode: LossMode,
    pub values: Vec<f64>,
}

impl LossParameterization {
    /// Initial parameters: identity matrix, default distance selection, or unit scales.
    pub fn initial(mode: LossMode, classes: usize) -> Self {
        match mode {
            LossMode::ClassCorrelation => {
                LossParameterization::ClassCorrelation(ClassCorrelation::identity(classes))
            }
            LossMode::DistanceMixture => LossParameterization::DistanceMixture {
                weights: DEFAULT_MIXTURE,
            },
            LossMode::FocalWeighting => LossParameterization::FocalWeighting { scales: [1.0, 1.0] },
        }
    }

    pub fn mode(&self) -> LossMode {
        match self {
            LossParameterization::ClassCorrelation(_) => LossMode::ClassCorrelation,
            LossParameterization::DistanceMixture { .. } => LossMode::DistanceMixture,
            LossParameterization::FocalWeighting { .. } => LossMode::FocalWeighting,
        }
    }

    /// Number of independently controlled parameters.
    pub fn param_count(&self) -> usize {
        match self {
            LossParameterization::ClassCorrelation(m) => m.classes * (m.classes - 1) / 2,
            LossParameterization::DistanceMixture { .. } => 10,
            LossParameterization::FocalWeighting { .. } => 2,
        }
    }

    /// Value of controlled parameter `id` (pairs are indexed row-major over `i < j`).
    pub fn value(&self, id: usize) -> Result<f64> {
        match self {
            LossParameterization::ClassCorrelation(m) => {
                let (i, j) = pair_of(m.classes, id)?;
                Ok(m.get(i, j))
            }
            LossParameterization::DistanceMixture { weights } => weights
                .get(id)
                .copied()
                .ok_or_else(|| AlaError::Usage(format!("mixture weight {id} out of range"))),
            LossParameterization::FocalWeighting { scales } => scales
                .get(id)
                .copied()
                .ok_or_else(|| AlaError::Usage(format!("focal scale {id} out of range"))),
        }
    }

    /// Sets controlled parameter `id`, clipping to the mode's bounds.
    pub fn set(&mut self, id: usize, v: f64) -> Result<()> {
        match self {
            LossParameterization::ClassCorrelation(m) => {
                let (i, j) = pair_of(m.classes, id)?;
                m.set_pair(i, j, v)
            }
            LossParameterization::DistanceMixture { weights } => {
                let w = weights
                    .get_mut(id)
                    .ok_or_else(|| AlaError::Usage(format!("mixture weight {id} out of range")))?;
                *w = v.clamp(0.0, 1.0);
                Ok(())
            }
            LossParameterization::FocalWeighting { scales } => {
                let s = scales
                    .get_mut(id)
                    .ok_or_else(|| AlaError::Usage(format!("focal scale {id} out of range")))?;
                *s = v.clamp(FOCAL_MIN, FOCAL_MAX);
                Ok(())
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            LossParameterization::ClassCorrelation(m) => m.check(),
            LossParameterization::DistanceMixture { weights } => {
                if weights.iter().all(|w| (0.0..=1.0).contains(w)) {
                    Ok(())
                } else {
                    Err(AlaError::Input(format!("mixture weights out of [0,1]: {weights:?}")))
                }
            }
            LossParameterization::FocalWeighting { scales } => {
                if scales.iter().all(|s| (FOCAL_MIN..=FOCAL_MAX).contains(s)) {
                    Ok(())
                } else {
                    Err(AlaError::Input(format!("focal scales out of range: {scales:?}")))
                }
            }
        }
    }

    /// Controlled values in parameter-id order.
    pub fn snapshot(&self) -> ParamSnapshot {
        let values = (0..self.param_count())
            .map(|id| self.value(id).expect("id in range"))
            .collect();
        ParamSnapshot {
            mode: self.mode(),
            values,
        }
    }

    pub fn class_correlation(&self) -> Option<&ClassCorrelation> {
        match self {
            LossParameterization::ClassCorrelation(m) => Some(m),
            _ => None,
        }
    }
}

/// Maps a pair id to `(i, j)` with `i < j`.
pub fn pair_of(classes: usize, id: usize) -> Result<(usize, usize)> {
    let mut remaining = id;
    for i in 0..classes {
        let row = classes - i - 1;
        if remaining < row {
            return Ok((i, i + 1 + remaining));
        }
        remaining -= row;
    }
    Err(AlaError::Usage(format!("pair id {id} out of range for {classes} classes")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_ids_enumerate_upper_triangle() {
        let pairs = pairs_for(8);
        assert_eq!(pairs.len(), 28);
        for (id, &p) in pairs.iter().enumerate() {
            assert_eq!(pair_of(8, id).unwrap(), p);
        }
        assert!(pair_of(8, 28).is_err());
    }

    #[test]
    fn set_pair_is_symmetric_and_clipped() {
        let mut m = ClassCorrelation::identity(3);
        m.set_pair(0, 2, 1.7).unwrap();
        assert_eq!(m.get(0, 2), 1.0);
        assert_eq!(m.get(2, 0), 1.0);
        assert!(m.set_pair(1, 1, 0.0).is_err());
        m.check().unwrap();
    }

    #[test]
    fn snapshot_round_trips_through_json() {
        let mut phi = LossParameterization::initial(LossMode::DistanceMixture, 0);
        phi.set(3, 0.4).unwrap();
        let s = serde_json::to_string(&phi.snapshot()).unwrap();
        let back: ParamSnapshot = serde_json::from_str(&s).unwrap();
        assert_eq!(back, phi.snapshot());
        assert!(s.contains("distance-mixture"));
    }
}
