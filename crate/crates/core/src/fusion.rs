//! Deep-ensemble combination: unweighted per-pixel mean of K learner maps,
//! and the threshold rule that turns a fused map into a hand mask.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{Dims, PredictionMask, ProbabilityMap};

pub const DEFAULT_TAU: f64 = 0.5;

/// K ≥ 1 learner maps sharing one raster size, each with a unique label.
///
/// The architecture mix (e.g. half UNet, half RefineNet) lives only in the labels.
#[derive(Debug, Clone)]
pub struct EnsembleSet {
    learners: Vec<ProbabilityMap>,
    learner_ids: Vec<String>,
}

impl EnsembleSet {
    pub fn new(learners: Vec<ProbabilityMap>, learner_ids: Vec<String>) -> Result<Self> {
        let first = learners
            .first()
            .ok_or_else(|| Error::Parameter("ensemble size K = 0".into()))?
            .dims();
        for map in &learners[1..] {
            first.ensure_same(map.dims())?;
        }
        if learner_ids.len() != learners.len() {
            return Err(Error::Parameter(format!(
                "{} learner ids for {} learners",
                learner_ids.len(),
                learners.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = learner_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Parameter(format!("duplicate learner id {dup:?}")));
        }
        Ok(EnsembleSet {
            learners,
            learner_ids,
        })
    }

    /// Labels learners `learner-0`, `learner-1`, ...
    pub fn unlabeled(learners: Vec<ProbabilityMap>) -> Result<Self> {
        let ids = (0..learners.len())
            .map(|k| format!("learner-{k}"))
            .collect();
        Self::new(learners, ids)
    }

    pub fn k(&self) -> usize {
        self.learners.len()
    }

    pub fn dims(&self) -> Dims {
        self.learners[0].dims()
    }

    pub fn learners(&self) -> &[ProbabilityMap] {
        &self.learners
    }

    pub fn learner_ids(&self) -> &[String] {
        &self.learner_ids
    }

    /// Fused probability at one pixel: sum over learners in order, then divide by K.
    #[inline]
    pub(crate) fn fused_at(&self, slices: &[&[f64]], index: usize) -> f64 {
        let mut sum = 0.0;
        for s in slices {
            sum += s[index];
        }
        // Convex combination of values in [0, 1]; the clamp only absorbs the last ulp.
        (sum / slices.len() as f64).clamp(0.0, 1.0)
    }

    pub(crate) fn slices(&self) -> Vec<&[f64]> {
        self.learners.iter().map(|m| m.values()).collect()
    }
}

/// Averages the learners pixel by pixel.
pub fn fuse(ensemble: &EnsembleSet) -> ProbabilityMap {
    let dims = ensemble.dims();
    let slices = ensemble.slices();
    let mut out = vec![0.0; dims.len()];
    par::fill(&mut out, |start, chunk| {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = ensemble.fused_at(&slices, start + i);
        }
    });
    ProbabilityMap::from_trusted(dims, out)
}

/// Fuses a list of maps without learner labels.
pub fn fuse_maps(maps: Vec<ProbabilityMap>) -> Result<ProbabilityMap> {
    Ok(fuse(&EnsembleSet::unlabeled(maps)?))
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("threshold tau = {tau}")))
    }
}

/// `mask[p] = map[p] >= tau`.
pub fn threshold(map: &ProbabilityMap, tau: f64) -> Result<PredictionMask> {
    check_tau(tau)?;
    let values = map.values();
    let mut out = vec![false; values.len()];
    par::fill(&mut out, |start, chunk| {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = values[start + i] >= tau;
        }
    });
    PredictionMask::new(map.dims(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dims(w: u32, h: u32) -> Dims {
        Dims::new(w, h).unwrap()
    }

    fn constant(v: f64) -> ProbabilityMap {
        ProbabilityMap::constant(dims(3, 2), v).unwrap()
    }

    #[test]
    fn single_learner_is_identity() {
        let m = ProbabilityMap::new(dims(3, 1), vec![0.1, 0.7, 1.0]).unwrap();
        assert_eq!(fuse_maps(vec![m.clone()]).unwrap(), m);
    }

    #[test]
    fn two_constants_average() {
        let fused = fuse_maps(vec![constant(0.2), constant(0.6)]).unwrap();
        assert!(fused.values().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn four_constants_average() {
        let maps = [0.1, 0.2, 0.3, 0.4].map(constant).to_vec();
        let fused = fuse_maps(maps).unwrap();
        assert!(fused.values().iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let a = ProbabilityMap::constant(dims(2, 2), 0.5).unwrap();
        let b = ProbabilityMap::constant(dims(4, 1), 0.5).unwrap();
        assert!(matches!(
            EnsembleSet::unlabeled(vec![a, b]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn ensemble_invariants() {
        assert!(EnsembleSet::unlabeled(vec![]).is_err());
        let dup = EnsembleSet::new(
            vec![constant(0.1), constant(0.2)],
            vec!["unet-s1".into(), "unet-s1".into()],
        );
        assert!(dup.is_err());
        let short = EnsembleSet::new(vec![constant(0.1)], vec![]);
        assert!(short.is_err());
    }

    #[test]
    fn threshold_is_inclusive() {
        let m = ProbabilityMap::new(dims(3, 1), vec![0.49, 0.5, 0.51]).unwrap();
        assert_eq!(threshold(&m, 0.5).unwrap().values(), &[false, true, true]);
    }

    #[test]
    fn threshold_degenerate_bounds() {
        let m = ProbabilityMap::new(dims(4, 1), vec![0.0, 0.3, 0.999_999, 1.0]).unwrap();
        assert!(threshold(&m, 0.0).unwrap().values().iter().all(|&v| v));
        assert_eq!(
            threshold(&m, 1.0).unwrap().values(),
            &[false, false, false, true]
        );
    }

    #[test]
    fn threshold_rejects_bad_tau() {
        let m = constant(0.5);
        assert!(threshold(&m, -0.1).is_err());
        assert!(threshold(&m, 1.5).is_err());
        assert!(threshold(&m, f64::NAN).is_err());
    }

    proptest! {
        #[test]
        fn fuse_matches_scalar_loop(
            w in 1u32..=16, h in 1u32..=16, k in 1usize..=8, seed in any::<u64>()
        ) {
            let d = dims(w, h);
            let mut state = seed | 1;
            let mut next = || {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let maps: Vec<_> = (0..k)
                .map(|_| ProbabilityMap::new(d, (0..d.len()).map(|_| next()).collect()).unwrap())
                .collect();
            let fused = fuse_maps(maps.clone()).unwrap();
            for p in 0..d.len() {
                let mut total = 0.0;
                for m in &maps {
                    total += m.values()[p];
                }
                prop_assert!((fused.values()[p] - total / k as f64).abs() <= 1e-12);
            }
        }
    }
}
