//! Finite-difference verification of the analytic backward pass.

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::UNet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose perturbation crossed a kink (rectifier or L1).
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    /// Blocks with at least one checked coordinate.
    pub blocks_covered: Vec<String>,
}

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
pub const REL_FLOOR: f64 = 1e-7;

/// Compares analytic gradients with central differences of step `h` on at
/// least `samples` coordinates, drawn round-robin over the parameter blocks.
/// Dropout masks, if `dropout_seed` is given, are identical in every pass.
pub fn check_gradients(
    model: &UNet,
    mixture: &Array3<f64>,
    target: &Array3<f64>,
    samples: usize,
    h: f64,
    seed: u64,
    dropout_seed: Option<u64>,
) -> Result<GradCheckReport> {
    let x = model.tensor(mixture)?;
    if target.shape() != mixture.shape() {
        return Err(Error::shape(mixture.shape(), target.shape()));
    }
    let rng_for = || dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let eval = |m: &UNet| -> Result<(f64, Vec<bool>, Vec<f64>)> {
        let mut rng = rng_for();
        let cache = m.forward_cached(&x, rng.as_mut())?;
        let (loss, _) = m.loss_terms(&cache, target);
        Ok((loss, cache.kink_pattern(), m.residual_signs(&cache, target)))
    };

    let mut rng = rng_for();
    let cache = model.forward_cached(&x, rng.as_mut())?;
    let (_, dmask) = model.loss_terms(&cache, target);
    let analytic = model.backward(&cache, &dmask)?;
    let base_kinks = cache.kink_pattern();
    let base_res = model.residual_signs(&cache, target);

    let mut pick = ChaCha8Rng::seed_from_u64(seed);
    let blocks = model.blocks();
    let mut queues: Vec<Vec<usize>> = blocks
        .iter()
        .map(|(_, r)| {
            let mut v: Vec<usize> = r.clone().collect();
            v.shuffle(&mut pick);
            v
        })
        .collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_param: None,
        blocks_covered: Vec::new(),
    };
    let mut covered = vec![false; blocks.len()];
    while report.checked < samples && queues.iter().any(|q| !q.is_empty()) {
        for (b, queue) in queues.iter_mut().enumerate() {
            if report.checked >= samples {
                break;
            }
            let Some(i) = queue.pop() else { continue };
            let orig = probe.params()[i];
            probe.params_mut()[i] = orig + h;
            let (lp, kp, rp) = eval(&probe)?;
            probe.params_mut()[i] = orig - h;
            let (lm, km, rm) = eval(&probe)?;
            probe.params_mut()[i] = orig;
            if kp != base_kinks || km != base_kinks || rp != base_res || rm != base_res {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            covered[b] = true;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(format!("{}[{}]", blocks[b].0, i - blocks[b].1.start));
            }
        }
    }
    report.blocks_covered = blocks
        .iter()
        .zip(covered)
        .filter(|(_, c)| *c)
        .map(|((n, _), _)| n.clone())
        .collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UNetConfig;
    use rand::Rng;

    fn grid(seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((2, 16, 16), |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn tiny_network_gradients() {
        let cfg = UNetConfig { depth: 2, base_channels: 4, frames: 16, bins: 16, ..Default::default() };
        let model = UNet::new(cfg, 1).unwrap();
        let report = check_gradients(&model, &grid(2), &grid(3), 200, 1e-4, 4, None).unwrap();
        assert!(report.checked >= 200);
        assert!(report.max_rel_error < 1e-3, "{report:?}");
        assert_eq!(report.blocks_covered.len(), model.blocks().len());
    }

    #[test]
    fn gradients_with_dropout_masks() {
        let cfg = UNetConfig { depth: 2, base_channels: 4, frames: 16, bins: 16, ..Default::default() };
        let model = UNet::new(cfg, 5).unwrap();
        let report = check_gradients(&model, &grid(6), &grid(7), 100, 1e-4, 8, Some(9)).unwrap();
        assert!(report.checked >= 100);
        assert!(report.max_rel_error < 1e-3, "{report:?}");
    }
}
