//! Weighting-function specs: `coordinate:<j>`, `poly:<j>^<d>`, or
//! `density@<a0>` (fitted on a held-out slice of the data).

use ivdrf::data::{derive_seed, Dataset};
use ivdrf::error::{Error, Result};
use ivdrf::nuisance::{density_rwf_with_holdout, WeightingFunction};

/// A parsed weighting function plus the rows it may have consumed.
pub struct ResolvedPi {
    pub pi: WeightingFunction,
    /// Estimation rows (the density spec holds out a training slice).
    pub estimation: Dataset,
}

pub fn resolve_pi(
    spec: &str,
    data: &Dataset,
    train_fraction: f64,
    bandwidth_multiplier: f64,
    seed: u64,
) -> Result<ResolvedPi> {
    if let Some(rest) = spec.strip_prefix("density@") {
        let a0: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad density anchor '{rest}'")))?;
        let (pi, estimation) = density_rwf_with_holdout(
            data,
            a0,
            train_fraction,
            bandwidth_multiplier,
            derive_seed(seed, 0xA11C),
        )?;
        return Ok(ResolvedPi { pi, estimation });
    }
    if let Some(rest) = spec.strip_prefix("coordinate:") {
        let j: usize = rest
            .parse()
            .map_err(|_| Error::Config(format!("bad coordinate '{rest}'")))?;
        return Ok(ResolvedPi {
            pi: WeightingFunction::raw_coordinate(j),
            estimation: data.clone(),
        });
    }
    if let Some(rest) = spec.strip_prefix("poly:") {
        let (j, d) = rest
            .split_once('^')
            .ok_or_else(|| Error::Config(format!("bad polynomial spec '{rest}'")))?;
        let j: usize = j
            .parse()
            .map_err(|_| Error::Config(format!("bad coordinate '{j}'")))?;
        let d: u32 = d
            .parse()
            .map_err(|_| Error::Config(format!("bad degree '{d}'")))?;
        return Ok(ResolvedPi {
            pi: WeightingFunction::polynomial(j, d),
            estimation: data.clone(),
        });
    }
    Err(Error::Config(format!(
        "unknown weighting-function spec '{spec}' (expected density@<a0>, coordinate:<j>, or poly:<j>^<d>)"
    )))
}
