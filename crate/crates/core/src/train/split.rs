use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FcrError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Share of control cells held out for counterfactual prediction.
    pub prediction: f64,
    /// Share of the remaining cells held out for testing.
    pub test: f64,
    /// Share of what is left after that used for validation.
    pub validation: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            prediction: 0.2,
            test: 0.2,
            validation: 0.2,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prediction", self.prediction),
            ("test", self.test),
            ("validation", self.validation),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(FcrError::Config(format!(
                    "split fraction {name} must lie in [0, 1), got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Disjoint row sets covering the dataset, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub prediction: Vec<usize>,
}

/// Prediction rows come from controls only; test, validation and train
/// are drawn from everything else. Counts are floored and the remainder
/// goes to train.
pub fn split_dataset(ds: &Dataset, cfg: &SplitConfig, seed: u64) -> Result<Splits> {
    cfg.validate()?;
    if ds.n_controls() == 0 {
        return Err(FcrError::Protocol(
            "the dataset has no control cells to hold out".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls: Vec<usize> = (0..ds.n_cells()).filter(|&r| ds.control_mask[r]).collect();
    controls.shuffle(&mut rng);
    let n_pred = (cfg.prediction * controls.len() as f64).floor() as usize;
    let mut prediction = controls[..n_pred].to_vec();
    let mut rest: Vec<usize> = controls[n_pred..].to_vec();
    rest.extend((0..ds.n_cells()).filter(|&r| !ds.control_mask[r]));
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    let n_test = (cfg.test * rest.len() as f64).floor() as usize;
    let mut test = rest[..n_test].to_vec();
    let remaining = &rest[n_test..];
    let n_val = (cfg.validation * remaining.len() as f64).floor() as usize;
    let mut validation = remaining[..n_val].to_vec();
    let mut train = remaining[n_val..].to_vec();
    for v in [&mut train, &mut validation, &mut test, &mut prediction] {
        v.sort_unstable();
    }
    Ok(Splits {
        train,
        validation,
        test,
        prediction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use ndarray::Array2;

    fn dataset(n: usize, n_controls: usize) -> Dataset {
        let t: Vec<String> = (0..n)
            .map(|i| if i < n_controls { "ctrl" } else { "drug" }.to_string())
            .collect();
        let x: Vec<String> = (0..n).map(|i| format!("c{}", i % 3)).collect();
        let treatments = Labels::from_strings(&t);
        let control = treatments.level_of("ctrl");
        Dataset::new(
            Array2::zeros((n, 2)),
            Labels::from_strings(&x),
            treatments,
            control,
        )
        .unwrap()
    }

    #[test]
    fn thousand_cells_hundred_controls() {
        let ds = dataset(1000, 100);
        let s = split_dataset(&ds, &SplitConfig::default(), 3).unwrap();
        assert_eq!(s.prediction.len(), 20);
        assert_eq!(s.test.len(), 196);
        assert_eq!(s.train.len(), 628);
        assert_eq!(s.validation.len(), 156);
        assert!(s.prediction.iter().all(|&r| ds.control_mask[r]));
        let mut all: Vec<usize> = [s.train, s.validation, s.test, s.prediction].concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn all_controls() {
        let ds = dataset(50, 50);
        let s = split_dataset(&ds, &SplitConfig::default(), 0).unwrap();
        assert_eq!(s.prediction.len(), 10);
    }

    #[test]
    fn no_controls_is_protocol_error() {
        let ds = dataset(20, 0);
        assert!(matches!(
            split_dataset(&ds, &SplitConfig::default(), 0),
            Err(FcrError::Protocol(_))
        ));
    }

    #[test]
    fn seeded_and_deterministic() {
        let ds = dataset(200, 40);
        let a = split_dataset(&ds, &SplitConfig::default(), 9).unwrap();
        assert_eq!(a, split_dataset(&ds, &SplitConfig::default(), 9).unwrap());
        assert_ne!(a, split_dataset(&ds, &SplitConfig::default(), 10).unwrap());
    }
}
