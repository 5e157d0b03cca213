use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::FactorPolicy;
use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::rng::SplitMix64;

/// Magnitude written at a covert coordinate. Always positive and finite.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FactorValue(f64);

impl FactorValue {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::DegenerateFactor)
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Draws `count` distinct flat indices by rejection sampling: each SplitMix64
/// word `u` maps to `floor(u · parameter_count / 2^64)` and repeats are
/// skipped. Sender and receiver call this independently with the same
/// arguments and agree on the result.
pub fn select_positions(parameter_count: usize, count: usize, shared_seed: u64) -> Result<Vec<usize>> {
    if count > parameter_count {
        return Err(Error::config(format!(
            "cannot select {count} positions out of {parameter_count} parameters"
        )));
    }
    let mut rng = SplitMix64::new(shared_seed);
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let idx = rng.next_index(parameter_count);
        if seen.insert(idx) {
            out.push(idx);
        }
    }
    Ok(out)
}

pub fn compute_factor(params: &ParamVector, policy: FactorPolicy, seed: u64) -> Result<FactorValue> {
    match policy {
        FactorPolicy::Fixed(v) => FactorValue::new(v).map_err(|_| Error::config("fixed factor must be positive")),
        FactorPolicy::Rms { sample_size } => {
            let values = params.values();
            if sample_size == 0 || sample_size > values.len() {
                return Err(Error::config(format!(
                    "RMS sample_size {sample_size} must be in 1..={}",
                    values.len()
                )));
            }
            let mut rng = SplitMix64::new(seed);
            let sum_sq: f64 = (0..sample_size)
                .map(|_| {
                    let v = values[rng.next_index(values.len())];
                    v * v
                })
                .sum();
            FactorValue::new((sum_sq / sample_size as f64).sqrt())
        }
    }
}

/// Writes `(2b - 1) · factor` at `positions[j]` for each bit `b = bits[j]`
/// and zero at the remaining agreed positions.
pub fn embed_bits(
    params: &ParamVector,
    bits: &[bool],
    positions: &[usize],
    factor: FactorValue,
) -> Result<ParamVector> {
    if bits.len() > positions.len() {
        return Err(Error::config(format!(
            "{} bits do not fit in {} positions",
            bits.len(),
            positions.len()
        )));
    }
    let mut out = params.clone();
    check_positions(&out, positions)?;
    let values = out.values_mut();
    let f = factor.get();
    for (j, &p) in positions.iter().enumerate() {
        values[p] = match bits.get(j) {
            Some(true) => f,
            Some(false) => -f,
            None => 0.0,
        };
    }
    Ok(out)
}

/// Sets every agreed position to zero.
pub fn zero_back(params: &ParamVector, positions: &[usize]) -> Result<ParamVector> {
    let mut out = params.clone();
    check_positions(&out, positions)?;
    let values = out.values_mut();
    for &p in positions {
        values[p] = 0.0;
    }
    Ok(out)
}

fn check_positions(params: &ParamVector, positions: &[usize]) -> Result<()> {
    match positions.iter().find(|&&p| p >= params.len()) {
        Some(p) => Err(Error::config(format!(
            "position {p} outside 0..{}",
            params.len()
        ))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelSpec};
    use crate::rng::SplitMix64;

    /// Wraps `values` (length ≥ 6) in a `(n - 5, 1, 2)` model, whose
    /// parameter count is exactly `n`.
    fn params_from(values: Vec<f64>) -> ParamVector {
        let spec = ModelSpec::new(values.len() - 5, 1, 2).unwrap();
        ParamVector::new(spec, values).unwrap()
    }

    #[test]
    fn reference_positions_for_seed_42() {
        // Frozen from an independent SplitMix64 + rejection script.
        assert_eq!(select_positions(10, 3, 42).unwrap(), vec![7, 1, 2]);
        assert_eq!(
            select_positions(1386, 5, 7).unwrap(),
            vec![540, 23, 1248, 807, 627]
        );
    }

    #[test]
    fn zero_count_and_full_permutation() {
        assert!(select_positions(10, 0, 1).unwrap().is_empty());
        let mut all = select_positions(25, 25, 9).unwrap();
        all.sort();
        assert_eq!(all, (0..25).collect::<Vec<_>>());
        assert!(select_positions(5, 6, 1).is_err());
    }

    #[test]
    fn factor_of_constant_vector_is_its_magnitude() {
        let p = params_from(vec![-0.3; 7]);
        let f = compute_factor(&p, FactorPolicy::Rms { sample_size: 5 }, 1).unwrap();
        assert!((f.get() - 0.3).abs() < 1e-15);
        let fixed = compute_factor(&p, FactorPolicy::Fixed(0.05), 1).unwrap();
        assert_eq!(fixed.get(), 0.05);
    }

    #[test]
    fn factor_of_zero_vector_is_degenerate() {
        let p = params_from(vec![0.0; 7]);
        assert_eq!(
            compute_factor(&p, FactorPolicy::Rms { sample_size: 3 }, 1),
            Err(Error::DegenerateFactor)
        );
        assert!(compute_factor(&p, FactorPolicy::Rms { sample_size: 8 }, 1).is_err());
    }

    #[test]
    fn rms_of_standard_normals_is_near_one() {
        let mut rng = SplitMix64::new(2024);
        let values: Vec<f64> = (0..10_000).map(|_| rng.next_gaussian()).collect();
        let p = params_from(values.clone());
        let f = compute_factor(&p, FactorPolicy::Rms { sample_size: 500 }, 3).unwrap();
        assert!((0.9..=1.1).contains(&f.get()), "factor {}", f.get());

        // Recompute the same sample directly.
        let mut sampler = SplitMix64::new(3);
        let direct = ((0..500)
            .map(|_| values[sampler.next_index(values.len())].powi(2))
            .sum::<f64>()
            / 500.0)
            .sqrt();
        assert_eq!(f.get(), direct);
    }

    #[test]
    fn embed_writes_signed_factor() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let p = init_params(spec, 1);
        let f = FactorValue::new(0.05).unwrap();
        let out = embed_bits(&p, &[true, false, true], &[2, 5, 7], f).unwrap();
        assert_eq!(out.values()[2], 0.05);
        assert_eq!(out.values()[5], -0.05);
        assert_eq!(out.values()[7], 0.05);
        for i in (0..p.len()).filter(|i| ![2, 5, 7].contains(i)) {
            assert_eq!(out.values()[i], p.values()[i]);
        }
    }

    #[test]
    fn embed_zeroes_unused_positions() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let p = init_params(spec, 1);
        let f = FactorValue::new(0.05).unwrap();
        let out = embed_bits(&p, &[], &[0, 1], f).unwrap();
        assert_eq!(out.values()[0], 0.0);
        assert_eq!(out.values()[1], 0.0);
        assert_eq!(&out.values()[2..], &p.values()[2..]);
        assert!(embed_bits(&p, &[true, true, true], &[0, 1], f).is_err());
        assert!(embed_bits(&p, &[true], &[p.len()], f).is_err());
    }

    #[test]
    fn zero_back_clears_only_positions() {
        let spec = ModelSpec::new(3, 2, 2).unwrap();
        let p = init_params(spec, 4);
        assert_eq!(zero_back(&p, &[]).unwrap(), p);
        let all: Vec<usize> = (0..p.len()).collect();
        assert!(zero_back(&p, &all).unwrap().values().iter().all(|&v| v == 0.0));
    }
}
