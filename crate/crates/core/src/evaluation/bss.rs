//! BSS-eval source metrics via least-squares projections onto delayed
//! references.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::audio::AudioClip;
use crate::error::{Error, Result};
use crate::model::ops::gemm;
use crate::sample::StemName;

/// Error energies at or below this fraction of the numerator count as zero
/// and give a `+inf` ratio.
pub const ZERO_ENERGY: f64 = 1e-12;
/// Tikhonov damping of the normal equations, relative to the mean diagonal.
pub const DAMPING: f64 = 1e-10;
pub const DEFAULT_FILTER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// `10 log10(num / den)`, `+inf` when `den` is negligible against `num`.
pub fn db_ratio(num: f64, den: f64) -> f64 {
    if den <= ZERO_ENERGY * num {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

/// Rows of delayed copies `s(n - tau)`, `tau < filter_len`, zero-filled at
/// the start and truncated at the end of the signal.
fn delayed_basis(signals: &[&[f64]], filter_len: usize) -> Vec<f64> {
    let n = signals[0].len();
    let mut basis = vec![0.0; signals.len() * filter_len * n];
    for (k, s) in signals.iter().enumerate() {
        for tau in 0..filter_len.min(n) {
            let row = &mut basis[(k * filter_len + tau) * n..][..n];
            row[tau..].copy_from_slice(&s[..n - tau]);
        }
    }
    basis
}

/// Solves `G x = b` for symmetric positive `G` by a Cholesky factorization
/// of `G + lambda I`, followed by one step of iterative refinement against
/// the undamped system.
fn solve_spd(g: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mean_diag = (0..m).map(|i| g[i * m + i]).sum::<f64>() / m as f64;
    let lambda = DAMPING * mean_diag.max(f64::MIN_POSITIVE);
    let mut l = g.to_vec();
    for i in 0..m {
        l[i * m + i] += lambda;
    }
    for j in 0..m {
        let mut d = l[j * m + j];
        for k in 0..j {
            d -= l[j * m + k] * l[j * m + k];
        }
        let d = d.max(lambda).sqrt();
        l[j * m + j] = d;
        for i in j + 1..m {
            let mut v = l[i * m + j];
            for k in 0..j {
                v -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = v / d;
        }
    }
    let solve = |mut y: Vec<f64>| {
        for i in 0..m {
            let mut v = y[i];
            for k in 0..i {
                v -= l[i * m + k] * y[k];
            }
            y[i] = v / l[i * m + i];
        }
        for i in (0..m).rev() {
            let mut v = y[i];
            for k in i + 1..m {
                v -= l[k * m + i] * y[k];
            }
            y[i] = v / l[i * m + i];
        }
        y
    };
    let mut x = solve(b.to_vec());
    let residual: Vec<f64> = (0..m)
        .map(|i| b[i] - (0..m).map(|k| g[i * m + k] * x[k]).sum::<f64>())
        .collect();
    x.iter_mut().zip(solve(residual)).for_each(|(v, d)| *v += d);
    x
}

/// Orthogonal projection of `x` onto the row span of `basis` (`m x n`).
fn project(basis: &[f64], m: usize, x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut g = vec![0.0; m * m];
    gemm(m, n, m, basis, false, basis, true, 0.0, &mut g);
    let mut b = vec![0.0; m];
    gemm(m, n, 1, basis, false, x, false, 0.0, &mut b);
    let coef = solve_spd(&g, &b, m);
    let mut out = vec![0.0; n];
    gemm(1, m, n, &coef, false, basis, false, 0.0, &mut out);
    out
}

/// Summed-over-channel energies `[target, interf, artif, interf+artif, target+interf]`.
fn channel_energies(estimate: &AudioClip, refs: &[&AudioClip], j: usize, filter_len: usize) -> [f64; 5] {
    let mut acc = [0.0; 5];
    for c in 0..estimate.num_channels() {
        let r: Vec<&[f64]> = refs.iter().map(|clip| clip.channel(c)).collect();
        let est = estimate.channel(c);
        let own = delayed_basis(&r[j..=j], filter_len);
        let target = project(&own, filter_len, est);
        let all = delayed_basis(&r, filter_len);
        let p_all = project(&all, r.len() * filter_len, est);
        for n in 0..est.len() {
            let i = p_all[n] - target[n];
            let a = est[n] - p_all[n];
            acc[0] += target[n] * target[n];
            acc[1] += i * i;
            acc[2] += a * a;
            acc[3] += (i + a) * (i + a);
            acc[4] += (target[n] + i) * (target[n] + i);
        }
    }
    acc
}

pub(crate) fn check_clips(estimates: &BTreeMap<StemName, AudioClip>, references: &BTreeMap<StemName, AudioClip>) -> Result<()> {
    let first = references
        .values()
        .next()
        .ok_or_else(|| Error::InvalidInput("no reference sources".into()))?;
    let shape = [first.num_channels(), first.len()];
    for (s, clip) in references.iter().chain(estimates.iter()) {
        let got = [clip.num_channels(), clip.len()];
        if got != shape {
            return Err(Error::InvalidInput(format!(
                "{s}: {} channels x {} samples, expected {} x {}",
                got[0], got[1], shape[0], shape[1]
            )));
        }
    }
    for s in estimates.keys() {
        if !references.contains_key(s) {
            return Err(Error::MissingSource(*s));
        }
    }
    Ok(())
}

/// Metrics of one source's estimate given all references (same order of
/// channels and samples). Errors if the source's reference is silent.
pub(crate) fn source_metrics(
    estimate: &AudioClip,
    references: &BTreeMap<StemName, AudioClip>,
    source: StemName,
    filter_len: usize,
) -> Result<FrameMetrics> {
    if filter_len == 0 {
        return Err(Error::InvalidInput("filter_len must be at least 1".into()));
    }
    let refs: Vec<&AudioClip> = references.values().collect();
    let j = references.keys().position(|&s| s == source).ok_or(Error::MissingSource(source))?;
    if refs[j].energy() == 0.0 {
        return Err(Error::UndefinedMetric(format!("reference {source} is silent")));
    }
    if estimate.energy() == 0.0 {
        return Err(Error::UndefinedMetric(format!("estimate {source} is silent")));
    }
    let [target, interf, artif, distortion, signal] = channel_energies(estimate, &refs, j, filter_len);
    Ok(FrameMetrics {
        sdr: db_ratio(target, distortion),
        sir: db_ratio(target, interf),
        sar: db_ratio(signal, artif),
    })
}

/// SDR, SIR and SAR of every estimate against the full reference set.
/// Multichannel energies are summed over channels.
pub fn bss_eval_frame(
    estimates: &BTreeMap<StemName, AudioClip>,
    references: &BTreeMap<StemName, AudioClip>,
    filter_len: usize,
) -> Result<BTreeMap<StemName, FrameMetrics>> {
    check_clips(estimates, references)?;
    estimates
        .iter()
        .map(|(&s, est)| Ok((s, source_metrics(est, references, s, filter_len)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Removes from `x` its components along each vector of `basis`
    /// (assumed orthogonal).
    fn orthogonalize(mut x: Vec<f64>, basis: &[&[f64]]) -> Vec<f64> {
        for b in basis {
            let c = dot(&x, b) / dot(b, b);
            x.iter_mut().zip(b.iter()).for_each(|(v, bv)| *v -= c * bv);
        }
        x
    }

    fn mono(x: Vec<f64>) -> AudioClip {
        AudioClip::mono(x, 8000).unwrap()
    }

    fn orthogonal_refs(n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let s1 = noise(n, rng);
        let s2 = orthogonalize(noise(n, rng), &[&s1]);
        (s1, s2)
    }

    fn refs(s1: &[f64], s2: &[f64]) -> BTreeMap<StemName, AudioClip> {
        [(StemName::Vocals, mono(s1.to_vec())), (StemName::Instrumental, mono(s2.to_vec()))].into()
    }

    #[test]
    fn perfect_estimate_is_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (s1, s2) = orthogonal_refs(4000, &mut rng);
        let r = refs(&s1, &s2);
        let m = bss_eval_frame(&r, &r, 4).unwrap();
        for v in m.values() {
            assert!(v.sdr.is_infinite() && v.sir.is_infinite() && v.sar.is_infinite());
        }
    }

    #[test]
    fn orthogonal_noise_at_minus_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (s1, s2) = orthogonal_refs(8000, &mut rng);
        let n = orthogonalize(noise(8000, &mut rng), &[&s1, &s2]);
        let scale = (dot(&s1, &s1) / 100.0 / dot(&n, &n)).sqrt();
        let est: Vec<f64> = s1.iter().zip(&n).map(|(s, v)| s + scale * v).collect();
        let e: BTreeMap<_, _> = [(StemName::Vocals, mono(est))].into();
        let m = bss_eval_frame(&e, &refs(&s1, &s2), 1).unwrap()[&StemName::Vocals];
        assert!((m.sdr - 20.0).abs() < 1e-6, "{m:?}");
        assert!((m.sar - 20.0).abs() < 1e-6, "{m:?}");
        assert!(m.sir.is_infinite());
    }

    #[test]
    fn interference_at_minus_twenty_db() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (s1, s2) = orthogonal_refs(8000, &mut rng);
        let (u1, u2) = (s1.iter().map(|v| v / dot(&s1, &s1).sqrt()).collect::<Vec<_>>(), s2.iter().map(|v| v / dot(&s2, &s2).sqrt()).collect::<Vec<_>>());
        let est: Vec<f64> = u1.iter().zip(&u2).map(|(a, b)| a + 0.1 * b).collect();
        let e: BTreeMap<_, _> = [(StemName::Vocals, mono(est))].into();
        let m = bss_eval_frame(&e, &refs(&u1, &u2), 1).unwrap()[&StemName::Vocals];
        assert!((m.sir - 20.0).abs() < 1e-6, "{m:?}");
        assert!(m.sar.is_infinite());
    }

    /// Dense least-squares oracle with QR from nalgebra.
    fn oracle(est: &[f64], refs: &[&[f64]], j: usize, l: usize) -> FrameMetrics {
        let n = est.len();
        let build = |sig: &[&[f64]]| {
            DMatrix::from_fn(n, sig.len() * l, |row, col| {
                let (k, tau) = (col / l, col % l);
                if row >= tau { sig[k][row - tau] } else { 0.0 }
            })
        };
        let proj = |a: DMatrix<f64>| {
            let y = DVector::from_column_slice(est);
            let coef = a.clone().svd(true, true).solve(&y, 1e-14).unwrap();
            a * coef
        };
        let target = proj(build(&refs[j..=j]));
        let p_all = proj(build(refs));
        let y = DVector::from_column_slice(est);
        let interf = &p_all - &target;
        let artif = &y - &p_all;
        FrameMetrics {
            sdr: db_ratio(target.norm_squared(), (&interf + &artif).norm_squared()),
            sir: db_ratio(target.norm_squared(), interf.norm_squared()),
            sar: db_ratio((&target + &interf).norm_squared(), artif.norm_squared()),
        }
    }

    #[test]
    fn general_case_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        for l in 1..=4 {
            let s1 = noise(n, &mut rng);
            let s2 = noise(n, &mut rng);
            let mut est = noise(n, &mut rng);
            for i in 3..n {
                est[i] = 0.3 * est[i] + s1[i] + 0.5 * s1[i - 2] + 0.2 * s2[i - 1];
            }
            let e: BTreeMap<_, _> = [(StemName::Vocals, mono(est.clone()))].into();
            let got = bss_eval_frame(&e, &refs(&s1, &s2), l).unwrap()[&StemName::Vocals];
            let want = oracle(&est, &[&s1, &s2], 0, l);
            for (a, b) in [(got.sdr, want.sdr), (got.sir, want.sir), (got.sar, want.sar)] {
                assert!((a - b).abs() < 1e-9, "L={l}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn scaling_leaves_sir_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1 = noise(1000, &mut rng);
        let s2 = noise(1000, &mut rng);
        let est: Vec<f64> = (0..1000).map(|i| s1[i] + 0.2 * s2[i] + 0.1 * rng.random_range(-1.0..1.0)).collect();
        let r = refs(&s1, &s2);
        let base = bss_eval_frame(&[(StemName::Vocals, mono(est.clone()))].into(), &r, 3).unwrap()[&StemName::Vocals];
        let scaled = bss_eval_frame(&[(StemName::Vocals, mono(est.iter().map(|v| 3.7 * v).collect()))].into(), &r, 3).unwrap()[&StemName::Vocals];
        assert!((base.sir - scaled.sir).abs() < 1e-9);
        assert!((base.sdr - scaled.sdr).abs() < 1e-9);
    }

    #[test]
    fn silent_reference_is_undefined() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = noise(500, &mut rng);
        let r: BTreeMap<_, _> = [(StemName::Vocals, mono(vec![0.0; 500])), (StemName::Instrumental, mono(s.clone()))].into();
        let e: BTreeMap<_, _> = [(StemName::Vocals, mono(s))].into();
        assert!(matches!(bss_eval_frame(&e, &r, 2), Err(Error::UndefinedMetric(_))));
    }
}
