//! Rates, the long-timescale sample objective and its gradients.
//!
//! The sample objective is
//! `g(H, c) = Σ_k log2(1 + |c_kᴴ Gᴴ h_k|² / (Σ_{j≠k} |c_kᴴ Gᴴ h_j|² + σ² ‖G c_k‖²))`
//! with `G = blkdiag(Ĝ_1, …, Ĝ_M)`. Because `G` is block diagonal, every
//! inner product splits into per-AP contributions; [`ApTerms`] caches them so
//! that perturbing one AP only costs one AP's worth of work.

use std::f64::consts::LN_2;

use crate::beamform::{local_receiver, local_receivers, BeamformerSet, LongTimescaleParam};
use crate::channel::ChannelMatrix;
use crate::{CMatrix, CVector, Error, Result, C64};

/// Floor applied to SINR denominators so degenerate beamformers evaluate to
/// their limits instead of NaN.
pub const DENOMINATOR_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub per_user_rate: Vec<f64>,
    pub sum_rate: f64,
}

impl RateReport {
    fn from_rates(per_user_rate: Vec<f64>) -> Self {
        let sum_rate = per_user_rate.iter().sum();
        Self {
            per_user_rate,
            sum_rate,
        }
    }
}

fn rate_from_parts(signal: f64, interference: f64) -> f64 {
    (signal / interference.max(DENOMINATOR_FLOOR)).ln_1p() / LN_2
}

/// Instantaneous per-user rates for stacked channel `h` (`MN × K`) and
/// beamformers `w`.
pub fn per_user_rates(h: &CMatrix, w: &BeamformerSet, noise_power: f64) -> Result<RateReport> {
    if h.nrows() != w.w.nrows() || h.ncols() != w.w.ncols() {
        return Err(Error::Shape(format!(
            "channel is {}x{}, beamformers are {}x{}",
            h.nrows(),
            h.ncols(),
            w.w.nrows(),
            w.w.ncols()
        )));
    }
    // projections[(k, j)] = w_kᴴ h_j
    let projections = w.w.adjoint() * h;
    let rates = (0..h.ncols())
        .map(|k| {
            let signal = projections[(k, k)].norm_sqr();
            let leakage: f64 = (0..h.ncols())
                .filter(|&j| j != k)
                .map(|j| projections[(k, j)].norm_sqr())
                .sum();
            let noise = noise_power * w.w.column(k).norm_squared();
            rate_from_parts(signal, leakage + noise)
        })
        .collect();
    Ok(RateReport::from_rates(rates))
}

/// Per-AP contributions to the sample objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ApTerms {
    /// `cross[(k, j)] = c_{k,m}ᴴ Ĝ_mᴴ h_{j,m}`.
    pub cross: CMatrix,
    /// `energy[k] = ‖Ĝ_m c_{k,m}‖²`.
    pub energy: Vec<f64>,
}

/// Combining matrix `[c_{1,m}, …, c_{K,m}]` of AP `m`.
fn combining_matrix(c: &LongTimescaleParam, m: usize) -> CMatrix {
    let k_users = c.num_users();
    CMatrix::from_fn(k_users, k_users, |row, k| c.block(k, m)[row])
}

/// Contributions of AP `m` with local receiver `g_m`.
pub fn ap_terms_with_receiver(
    h_m: &CMatrix,
    g_m: &CMatrix,
    m: usize,
    c: &LongTimescaleParam,
) -> ApTerms {
    let w_m = g_m * combining_matrix(c, m);
    ApTerms {
        cross: w_m.adjoint() * h_m,
        energy: w_m.column_iter().map(|col| col.norm_squared()).collect(),
    }
}

/// Contributions of AP `m`, computing its local receiver from `h_m`.
pub fn ap_terms(
    h_m: &CMatrix,
    m: usize,
    c: &LongTimescaleParam,
    noise_power: f64,
) -> Result<ApTerms> {
    let g = local_receiver(h_m, noise_power)?;
    Ok(ap_terms_with_receiver(h_m, &g, m, c))
}

/// Sample objective from per-AP contributions, optionally with AP
/// `replace.0`'s terms swapped for `replace.1`.
pub fn objective_from_terms(
    terms: &[ApTerms],
    replace: Option<(usize, &ApTerms)>,
    noise_power: f64,
) -> f64 {
    let k_users = terms[0].energy.len();
    let pick = |m: usize| match replace {
        Some((r, t)) if r == m => t,
        _ => &terms[m],
    };
    let mut cross = CMatrix::zeros(k_users, k_users);
    let mut energy = vec![0.0; k_users];
    for m in 0..terms.len() {
        let t = pick(m);
        cross += &t.cross;
        for (e, x) in energy.iter_mut().zip(&t.energy) {
            *e += x;
        }
    }
    (0..k_users)
        .map(|k| {
            let signal = cross[(k, k)].norm_sqr();
            let leakage: f64 = (0..k_users)
                .filter(|&j| j != k)
                .map(|j| cross[(k, j)].norm_sqr())
                .sum();
            rate_from_parts(signal, leakage + noise_power * energy[k])
        })
        .sum()
}

/// `g(H, c)`: the sum rate of the decentralized beamformers `w_k = G c_k`.
pub fn sample_objective(
    h: &ChannelMatrix,
    c: &LongTimescaleParam,
    noise_power: f64,
) -> Result<f64> {
    check_shapes(h, c)?;
    let terms = h
        .blocks
        .iter()
        .enumerate()
        .map(|(m, b)| ap_terms(b, m, c, noise_power))
        .collect::<Result<Vec<_>>>()?;
    Ok(objective_from_terms(&terms, None, noise_power))
}

fn check_shapes(h: &ChannelMatrix, c: &LongTimescaleParam) -> Result<()> {
    if h.num_aps() != c.num_aps() || h.num_users() != c.num_users() {
        return Err(Error::Shape(format!(
            "channel has {} APs and {} users, parameter has {} and {}",
            h.num_aps(),
            h.num_users(),
            c.num_aps(),
            c.num_users()
        )));
    }
    Ok(())
}

/// Wirtinger gradient of `g` with respect to `c*`, laid out like `c`.
///
/// `g(c + ε d) ≈ g(c) + 2 ε Re{gradᴴ d}` for a complex direction `d`.
pub fn grad_c(h: &ChannelMatrix, c: &LongTimescaleParam, noise_power: f64) -> Result<Vec<C64>> {
    check_shapes(h, c)?;
    let receivers = local_receivers(h, noise_power)?;
    Ok(grad_c_with_receivers(h, &receivers, c, noise_power))
}

pub fn grad_c_with_receivers(
    h: &ChannelMatrix,
    receivers: &[CMatrix],
    c: &LongTimescaleParam,
    noise_power: f64,
) -> Vec<C64> {
    let k_users = c.num_users();
    let m_aps = c.num_aps();
    let sigma2 = C64::new(noise_power, 0.0);
    let mut grad = Vec::with_capacity(k_users * k_users * m_aps);
    for k in 0..k_users {
        // u_m = Ĝ_m c_{k,m}; back[j] = h_jᴴ G c_k
        let u: Vec<CVector> = (0..m_aps)
            .map(|m| &receivers[m] * CVector::from_column_slice(c.block(k, m)))
            .collect();
        let mut back = CVector::zeros(k_users);
        for m in 0..m_aps {
            back += h.blocks[m].adjoint() * &u[m];
        }
        let energy: f64 = u.iter().map(|v| v.norm_squared()).sum();
        let total = back.norm_squared() + noise_power * energy;
        let interference = total - back[k].norm_sqr();
        let total = C64::new(total.max(DENOMINATOR_FLOOR), 0.0);
        let interference = C64::new(interference.max(DENOMINATOR_FLOOR), 0.0);
        for m in 0..m_aps {
            // Σ_j h_{j,m} h_jᴴ G c_k + σ² Ĝ_m c_{k,m}, with and without j = k
            let all = &h.blocks[m] * &back + &u[m] * sigma2;
            let others = &all - h.blocks[m].column(k) * back[k];
            let g_adj = receivers[m].adjoint();
            let block = (&g_adj * all) / total - (&g_adj * others) / interference;
            grad.extend(block.iter().map(|v| v / LN_2));
        }
    }
    grad
}

/// Central-difference step used for coordinate `x`.
pub fn fd_step(x: f64, rel_step: f64) -> f64 {
    rel_step * x.abs().max(1.0)
}

/// Finite-difference gradient where `f(i, v)` evaluates the objective with
/// coordinate `i` set to `v` and all others at `x`.
///
/// Interior coordinates use central differences. A coordinate whose probe
/// would leave `[lower, upper]` falls back to a one-sided difference pointing
/// into the box; if neither side fits, its derivative is reported as zero.
pub fn grad_numeric_coordinatewise<F>(
    mut f: F,
    x: &[f64],
    bounds: &[(f64, f64)],
    rel_step: f64,
) -> Vec<f64>
where
    F: FnMut(usize, f64) -> f64,
{
    assert_eq!(x.len(), bounds.len(), "one bound pair per coordinate");
    x.iter()
        .zip(bounds)
        .enumerate()
        .map(|(i, (&xi, &(lo, hi)))| {
            let h = fd_step(xi, rel_step);
            let up_ok = xi + h <= hi;
            let down_ok = xi - h >= lo;
            match (down_ok, up_ok) {
                (true, true) => (f(i, xi + h) - f(i, xi - h)) / (2.0 * h),
                (false, true) => (f(i, xi + h) - f(i, xi)) / h,
                (true, false) => (f(i, xi) - f(i, xi - h)) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

/// Finite-difference gradient of a function of the whole vector.
pub fn grad_numeric<F>(mut f: F, x: &[f64], bounds: &[(f64, f64)], rel_step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    grad_numeric_coordinatewise(
        |i, v| {
            probe[i] = v;
            let out = f(&probe);
            probe[i] = x[i];
            out
        },
        x,
        bounds,
        rel_step,
    )
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl MonteCarloEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n).sqrt(),
            samples: xs.len(),
        }
    }
}

/// UatF bound and the plain ergodic sum-rate estimate computed from the same
/// joint `(H, W(H))` draws. `draw(s)` returns the stacked channel and the
/// beamformers applied to it for sample `s`.
pub fn uatf_and_ergodic<F>(
    mut draw: F,
    noise_power: f64,
    num_samples: usize,
) -> Result<(f64, MonteCarloEstimate)>
where
    F: FnMut(usize) -> Result<(CMatrix, BeamformerSet)>,
{
    if num_samples < 2 {
        return Err(Error::InvalidConfig(
            "UatF bound needs at least two samples".into(),
        ));
    }
    let mut mean_signal: Vec<C64> = Vec::new();
    let mut signal_power: Vec<f64> = Vec::new();
    let mut leakage: Vec<f64> = Vec::new();
    let mut w_energy: Vec<f64> = Vec::new();
    let mut sum_rates = Vec::with_capacity(num_samples);
    for s in 0..num_samples {
        let (h, w) = draw(s)?;
        let k_users = h.ncols();
        if mean_signal.is_empty() {
            mean_signal = vec![C64::new(0.0, 0.0); k_users];
            signal_power = vec![0.0; k_users];
            leakage = vec![0.0; k_users];
            w_energy = vec![0.0; k_users];
        }
        let proj = w.w.adjoint() * &h;
        for k in 0..k_users {
            mean_signal[k] += proj[(k, k)];
            signal_power[k] += proj[(k, k)].norm_sqr();
            leakage[k] += (0..k_users)
                .filter(|&j| j != k)
                .map(|j| proj[(k, j)].norm_sqr())
                .sum::<f64>();
            w_energy[k] += w.w.column(k).norm_squared();
        }
        sum_rates.push(per_user_rates(&h, &w, noise_power)?.sum_rate);
    }
    let n = num_samples as f64;
    let bound = (0..mean_signal.len())
        .map(|k| {
            let mean = mean_signal[k] / n;
            let variance = (signal_power[k] / n - mean.norm_sqr()).max(0.0);
            let denom = leakage[k] / n + variance + noise_power * w_energy[k] / n;
            rate_from_parts(mean.norm_sqr(), denom)
        })
        .sum();
    Ok((bound, MonteCarloEstimate::from_samples(&sum_rates)))
}

/// SAA estimate of the use-and-then-forget lower bound on the ergodic sum
/// rate.
pub fn uatf_bound<F>(draw: F, noise_power: f64, num_samples: usize) -> Result<f64>
where
    F: FnMut(usize) -> Result<(CMatrix, BeamformerSet)>,
{
    Ok(uatf_and_ergodic(draw, noise_power, num_samples)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::local_receivers;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cn(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    fn random_channel(m: usize, n: usize, k: usize, rng: &mut ChaCha8Rng) -> ChannelMatrix {
        ChannelMatrix {
            blocks: (0..m)
                .map(|_| CMatrix::from_fn(n, k, |_, _| cn(rng)))
                .collect(),
        }
    }

    fn random_param(k: usize, m: usize, rng: &mut ChaCha8Rng) -> LongTimescaleParam {
        LongTimescaleParam::from_flat(k, m, (0..k * k * m).map(|_| cn(rng)).collect()).unwrap()
    }

    #[test]
    fn zero_channel_has_zero_rates() {
        let w = BeamformerSet {
            w: CMatrix::from_element(4, 2, C64::new(1.0, 0.0)),
        };
        let r = per_user_rates(&CMatrix::zeros(4, 2), &w, 1.0).unwrap();
        assert_eq!(r.per_user_rate, vec![0.0, 0.0]);
        assert_eq!(r.sum_rate, 0.0);
    }

    #[test]
    fn zero_beamformer_rate_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = CMatrix::from_fn(3, 2, |_, _| cn(&mut rng));
        let w = BeamformerSet {
            w: CMatrix::zeros(3, 2),
        };
        assert_eq!(per_user_rates(&h, &w, 0.1).unwrap().sum_rate, 0.0);
    }

    #[test]
    fn matched_filter_single_user() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = CMatrix::from_fn(5, 1, |_, _| cn(&mut rng));
        let w = BeamformerSet { w: h.clone() };
        let sigma2 = 0.8;
        let r = per_user_rates(&h, &w, sigma2).unwrap();
        let expected = (1.0 + h.norm_squared() / sigma2).log2();
        assert!((r.sum_rate - expected).abs() < 1e-12);
    }

    #[test]
    fn two_user_rates_match_scalar_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = CMatrix::from_fn(3, 2, |_, _| cn(&mut rng));
        let w = CMatrix::from_fn(3, 2, |_, _| cn(&mut rng));
        let sigma2 = 0.5;
        let r = per_user_rates(&h, &BeamformerSet { w: w.clone() }, sigma2).unwrap();
        for k in 0..2 {
            let j = 1 - k;
            let mut s = C64::new(0.0, 0.0);
            let mut i = C64::new(0.0, 0.0);
            let mut e = 0.0;
            for n in 0..3 {
                s += w[(n, k)].conj() * h[(n, k)];
                i += w[(n, k)].conj() * h[(n, j)];
                e += w[(n, k)].norm_sqr();
            }
            let expected = (1.0 + s.norm_sqr() / (i.norm_sqr() + sigma2 * e)).log2();
            assert!((r.per_user_rate[k] - expected).abs() < 1e-12);
        }
        assert!((r.sum_rate - r.per_user_rate.iter().sum::<f64>()).abs() < 1e-12);
    }

    #[test]
    fn objective_equals_rates_of_decentralized_beamformers() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let h = random_channel(3, 2, 3, &mut rng);
            let c = random_param(3, 3, &mut rng);
            let sigma2 = 0.3;
            let g = sample_objective(&h, &c, sigma2).unwrap();
            let w = BeamformerSet::decentralized(&local_receivers(&h, sigma2).unwrap(), &c);
            let r = per_user_rates(&h.stacked(), &w, sigma2).unwrap();
            assert!((g - r.sum_rate).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_of_zero_parameter_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_channel(2, 2, 2, &mut rng);
        let c = LongTimescaleParam::zeros(2, 2);
        assert_eq!(sample_objective(&h, &c, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn single_ap_objective_is_local_mmse_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = random_channel(1, 3, 2, &mut rng);
        let sigma2 = 0.2;
        let c = LongTimescaleParam::interference_free(2, 1);
        let g = sample_objective(&h, &c, sigma2).unwrap();
        let w = BeamformerSet {
            w: local_receiver(&h.blocks[0], sigma2).unwrap(),
        };
        let r = per_user_rates(&h.blocks[0], &w, sigma2).unwrap();
        assert!((g - r.sum_rate).abs() < 1e-12);
    }

    #[test]
    fn grad_c_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma2 = 0.4;
        for _ in 0..10 {
            let h = random_channel(2, 2, 2, &mut rng);
            let c = random_param(2, 2, &mut rng);
            let grad = grad_c(&h, &c, sigma2).unwrap();
            for _ in 0..10 {
                let d: Vec<C64> = (0..c.as_slice().len()).map(|_| cn(&mut rng)).collect();
                let eps = 1e-6;
                let shift = |sign: f64| {
                    let data = c
                        .as_slice()
                        .iter()
                        .zip(&d)
                        .map(|(x, y)| x + y * sign * eps)
                        .collect();
                    let p = LongTimescaleParam::from_flat(2, 2, data).unwrap();
                    sample_objective(&h, &p, sigma2).unwrap()
                };
                let fd = (shift(1.0) - shift(-1.0)) / (2.0 * eps);
                let analytic: f64 = 2.0
                    * grad
                        .iter()
                        .zip(&d)
                        .map(|(g, v)| (g * v.conj()).re)
                        .sum::<f64>();
                assert!(
                    (fd - analytic).abs() <= 1e-5 * analytic.abs().max(1e-3),
                    "{fd} vs {analytic}"
                );
            }
        }
    }

    #[test]
    fn single_user_gradient_reduces_to_noise_only_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = random_channel(2, 3, 1, &mut rng);
        let c = random_param(1, 2, &mut rng);
        let sigma2 = 0.6;
        let grad = grad_c(&h, &c, sigma2).unwrap();
        // K = 1: ∇ = (1/ln2)[(Gᴴ h hᴴ G c + σ² GᴴG c)/(|cᴴGᴴh|² + σ²‖Gc‖²) − GᴴG c/‖Gc‖²]
        let gs = local_receivers(&h, sigma2).unwrap();
        let mut g = CMatrix::zeros(6, 2);
        for m in 0..2 {
            g.view_mut((3 * m, m), (3, 1)).copy_from(&gs[m]);
        }
        let hs = h.stacked();
        let cv = CVector::from_column_slice(c.as_slice());
        let gc = &g * &cv;
        let back = (hs.adjoint() * &gc)[(0, 0)];
        let t = back.norm_sqr() + sigma2 * gc.norm_squared();
        let first = (g.adjoint() * (&hs * back) + g.adjoint() * &gc * C64::new(sigma2, 0.0))
            / C64::new(t, 0.0);
        let second = g.adjoint() * &gc / C64::new(gc.norm_squared(), 0.0);
        let expected = (first - second) / C64::new(LN_2, 0.0);
        for (a, b) in grad.iter().zip(expected.iter()) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
        }
    }

    #[test]
    fn degenerate_parameter_gives_finite_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_channel(2, 2, 2, &mut rng);
        let c = LongTimescaleParam::zeros(2, 2);
        let grad = grad_c(&h, &c, 0.5).unwrap();
        assert!(grad.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn numeric_gradient_basics() {
        let g = grad_numeric(|x| x[0] * x[0], &[3.0], &[(-10.0, 10.0)], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
        let g = grad_numeric(|_| 4.2, &[1.0, -2.0], &[(-5.0, 5.0); 2], 1e-6);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn numeric_gradient_uses_inward_differences_at_bounds() {
        let f = |x: &[f64]| x[0].powi(3) + 2.0 * x[1];
        let g = grad_numeric(f, &[1.0, 0.5], &[(1.0, 2.0), (0.0, 0.5)], 1e-6);
        // forward difference at the lower bound, backward at the upper
        assert!((g[0] - 3.0).abs() < 1e-4);
        assert!((g[1] - 2.0).abs() < 1e-6);
        // collapsed box: nothing to probe
        let g = grad_numeric(f, &[1.0, 0.5], &[(1.0, 1.0), (0.5, 0.5)], 1e-6);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn uatf_is_scale_invariant_and_tight_for_deterministic_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = CMatrix::from_fn(4, 2, |_, _| cn(&mut rng));
        let w = CMatrix::from_fn(4, 2, |_, _| cn(&mut rng));
        let sigma2 = 0.3;
        let fixed = |_| Ok((h.clone(), BeamformerSet { w: w.clone() }));
        let (bound, ergodic) = uatf_and_ergodic(fixed, sigma2, 10).unwrap();
        assert!((bound - ergodic.mean).abs() < 1e-10);
        assert!(ergodic.std_error < 1e-12);

        let alpha = C64::new(-2.0, 0.5);
        let scaled = |_| Ok((h.clone(), BeamformerSet { w: &w * alpha }));
        let b2 = uatf_bound(scaled, sigma2, 10).unwrap();
        assert!((b2 - bound).abs() < 1e-10);
    }
}
