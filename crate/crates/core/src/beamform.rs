//! Short-timescale receive processing.
//!
//! Every AP `m` turns its local channel `H_m` into the regularised receiver
//! `Ĝ_m = (H_m H_mᴴ + σ² I)⁻¹ H_m` and combines its columns with the
//! long-timescale coefficients `c_{k,m}` handed down by the CPU. The
//! coefficients are the unique solution of
//! `c_{k,m} + Σ_{i≠m} V_i c_{k,i} = e_k` with `V_i = E[H_iᴴ Ĝ_i]`.

use nalgebra::SymmetricEigen;
use rand::Rng;

use crate::channel::{assemble_channel, sample_fading, ChannelMatrix, PathSet};
use crate::geometry::{AntennaLayout, Orientation};
use crate::{CMatrix, CVector, Error, Result, C64};

/// Tolerance on the smallest eigenvalue of the Hermitian part of `I - V_m`.
pub const PD_TOLERANCE: f64 = 1e-10;

fn check_finite(m: &CMatrix, what: &'static str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// `(H Hᴴ + σ² I)⁻¹ H` through an LU solve.
fn regularized_solve(h: &CMatrix, noise_power: f64, what: &'static str) -> Result<CMatrix> {
    if !(noise_power > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise power must be positive, got {noise_power}"
        )));
    }
    check_finite(h, what)?;
    let mut gram = h * h.adjoint();
    for i in 0..gram.nrows() {
        gram[(i, i)] += C64::new(noise_power, 0.0);
    }
    gram.lu().solve(h).ok_or(Error::Singular(what))
}

/// Local MMSE receiver `Ĝ_m` of one AP.
pub fn local_receiver(h_m: &CMatrix, noise_power: f64) -> Result<CMatrix> {
    regularized_solve(h_m, noise_power, "local channel")
}

/// Local receivers of all APs.
pub fn local_receivers(h: &ChannelMatrix, noise_power: f64) -> Result<Vec<CMatrix>> {
    h.blocks
        .iter()
        .map(|b| local_receiver(b, noise_power))
        .collect()
}

/// `w̃_{k,m} = Ĝ_m c_{k,m}`.
pub fn lmmse_beamformer(g_m: &CMatrix, c_km: &[C64]) -> CVector {
    g_m * CVector::from_column_slice(c_km)
}

/// Long-timescale combining coefficients `c = [c_1; …; c_K]`, with
/// `c_k = [c_{k,1}; …; c_{k,M}]` and every `c_{k,m} ∈ C^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTimescaleParam {
    num_users: usize,
    num_aps: usize,
    data: Vec<C64>,
}

impl LongTimescaleParam {
    pub fn zeros(num_users: usize, num_aps: usize) -> Self {
        Self {
            num_users,
            num_aps,
            data: vec![C64::new(0.0, 0.0); num_users * num_users * num_aps],
        }
    }

    /// `c_{k,m} = e_k` for every AP: each AP runs plain local MMSE.
    pub fn interference_free(num_users: usize, num_aps: usize) -> Self {
        let mut c = Self::zeros(num_users, num_aps);
        for k in 0..num_users {
            for m in 0..num_aps {
                c.block_mut(k, m)[k] = C64::new(1.0, 0.0);
            }
        }
        c
    }

    pub fn from_flat(num_users: usize, num_aps: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != num_users * num_users * num_aps {
            return Err(Error::Shape(format!(
                "long-timescale parameter needs {} entries, got {}",
                num_users * num_users * num_aps,
                data.len()
            )));
        }
        Ok(Self {
            num_users,
            num_aps,
            data,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    fn offset(&self, k: usize, m: usize) -> usize {
        (k * self.num_aps + m) * self.num_users
    }

    pub fn block(&self, k: usize, m: usize) -> &[C64] {
        let o = self.offset(k, m);
        &self.data[o..o + self.num_users]
    }

    pub fn block_mut(&mut self, k: usize, m: usize) -> &mut [C64] {
        let o = self.offset(k, m);
        let k_users = self.num_users;
        &mut self.data[o..o + k_users]
    }

    /// `c_k` stacked over APs.
    pub fn user(&self, k: usize) -> &[C64] {
        let len = self.num_users * self.num_aps;
        &self.data[k * len..(k + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Receive beamformers as the columns of an `MN × K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w: CMatrix,
}

impl BeamformerSet {
    pub fn num_users(&self) -> usize {
        self.w.ncols()
    }

    pub fn user(&self, k: usize) -> CVector {
        self.w.column(k).into_owned()
    }

    /// `w_{k,m}`, the part of user `k`'s beamformer applied at AP `m`.
    pub fn block(&self, k: usize, m: usize, num_antennas: usize) -> CVector {
        self.w
            .view((m * num_antennas, k), (num_antennas, 1))
            .into_owned()
            .column(0)
            .into_owned()
    }

    /// Stacks `Ĝ_m c_{k,m}` over APs for every user.
    pub fn decentralized(receivers: &[CMatrix], c: &LongTimescaleParam) -> Self {
        let n = receivers[0].nrows();
        let k_users = c.num_users();
        let mut w = CMatrix::zeros(n * receivers.len(), k_users);
        for (m, g) in receivers.iter().enumerate() {
            for k in 0..k_users {
                let wkm = lmmse_beamformer(g, c.block(k, m));
                w.view_mut((m * n, k), (n, 1)).copy_from(&wkm);
            }
        }
        Self { w }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Centralized MMSE `W = (H Hᴴ + σ² I)⁻¹ H` on the stacked channel.
pub fn centralized_mmse(h: &CMatrix, noise_power: f64) -> Result<BeamformerSet> {
    Ok(BeamformerSet {
        w: regularized_solve(h, noise_power, "stacked channel")?,
    })
}

/// SAA estimate of `V = [E[H_1ᴴ Ĝ_1], …, E[H_Mᴴ Ĝ_M]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StatMatrixV {
    /// One `K × K` block per AP.
    pub blocks: Vec<CMatrix>,
    pub num_samples: usize,
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_hermitian_eigenvalue(a: &CMatrix) -> f64 {
    let herm = (a + a.adjoint()) * C64::new(0.5, 0.0);
    SymmetricEigen::new(herm)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl StatMatrixV {
    /// Running sums of `H_mᴴ Ĝ_m` over channel samples.
    pub fn accumulate<'a>(
        channels: impl IntoIterator<Item = &'a ChannelMatrix>,
        noise_power: f64,
    ) -> Result<Self> {
        let mut acc = SaaAccumulator::default();
        for h in channels {
            acc.add(h, noise_power)?;
        }
        acc.finish()
    }

    pub fn num_users(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn num_aps(&self) -> usize {
        self.blocks.len()
    }

    /// Smallest eigenvalue of the Hermitian part of `I - V_m` for every AP.
    pub fn definiteness_margins(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .map(|v| {
                let k = v.nrows();
                min_hermitian_eigenvalue(&(CMatrix::identity(k, k) - v))
            })
            .collect()
    }

    /// Fails if some `I - V_m` is not positive definite.
    pub fn check(&self) -> Result<()> {
        for (ap, margin) in self.definiteness_margins().into_iter().enumerate() {
            if !(margin > PD_TOLERANCE) {
                return Err(Error::NotPositiveDefinite {
                    ap,
                    min_eigenvalue: margin,
                    samples: self.num_samples,
                });
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct SaaAccumulator {
    sums: Vec<CMatrix>,
    count: usize,
}

impl SaaAccumulator {
    fn add(&mut self, h: &ChannelMatrix, noise_power: f64) -> Result<()> {
        if self.sums.is_empty() {
            let k = h.num_users();
            self.sums = vec![CMatrix::zeros(k, k); h.num_aps()];
        }
        for (sum, block) in self.sums.iter_mut().zip(&h.blocks) {
            let g = local_receiver(block, noise_power)?;
            *sum += block.adjoint() * g;
        }
        self.count += 1;
        Ok(())
    }

    fn finish(&self) -> Result<StatMatrixV> {
        if self.count == 0 {
            return Err(Error::InvalidConfig("SAA needs at least one sample".into()));
        }
        let scale = C64::new(1.0 / self.count as f64, 0.0);
        Ok(StatMatrixV {
            blocks: self.sums.iter().map(|s| s * scale).collect(),
            num_samples: self.count,
        })
    }
}

/// Estimates `V` from `num_samples` fading draws at the given array state.
///
/// If some `I - V_m` comes out indefinite, another `num_samples` draws are
/// added once before giving up with [`Error::NotPositiveDefinite`].
pub fn estimate_v<R: Rng + ?Sized>(
    paths: &PathSet,
    layouts: &[AntennaLayout],
    orientations: &[Orientation],
    wavelength: f64,
    noise_power: f64,
    num_samples: usize,
    rng: &mut R,
) -> Result<StatMatrixV> {
    if num_samples == 0 {
        return Err(Error::InvalidConfig("SAA needs at least one sample".into()));
    }
    let mut acc = SaaAccumulator::default();
    for attempt in 0..2 {
        for _ in 0..num_samples {
            let fading = sample_fading(paths, rng);
            let h = assemble_channel(paths, &fading, layouts, orientations, wavelength)?;
            acc.add(&h, noise_power)?;
        }
        let v = acc.finish()?;
        match v.check() {
            Ok(()) => return Ok(v),
            Err(e) if attempt == 1 => return Err(e),
            Err(_) => {}
        }
    }
    unreachable!("loop returns on the second attempt")
}

/// `blkdiag(U − V) + Uᵀ V`: identity diagonal blocks, `V_i` in block column
/// `i` everywhere else.
pub fn long_param_system(v: &StatMatrixV) -> CMatrix {
    let k = v.num_users();
    let m_aps = v.num_aps();
    let mut a = CMatrix::zeros(k * m_aps, k * m_aps);
    for m in 0..m_aps {
        for i in 0..m_aps {
            let block = if i == m {
                CMatrix::identity(k, k)
            } else {
                v.blocks[i].clone()
            };
            a.view_mut((m * k, i * k), (k, k)).copy_from(&block);
        }
    }
    a
}

/// Solves for the long-timescale parameter given the statistics `V`.
pub fn solve_long_param(v: &StatMatrixV) -> Result<LongTimescaleParam> {
    let k = v.num_users();
    let m_aps = v.num_aps();
    let a = long_param_system(v);
    // right-hand sides Uᵀ e_k side by side
    let rhs = CMatrix::from_fn(k * m_aps, k, |row, col| {
        if row % k == col {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("long-timescale system"))?;
    let data = (0..k)
        .flat_map(|user| sol.column(user).iter().copied().collect::<Vec<_>>())
        .collect();
    let c = LongTimescaleParam::from_flat(k, m_aps, data)?;
    if !c.is_finite() {
        return Err(Error::NonFinite("long-timescale parameter"));
    }
    Ok(c)
}

/// Largest relative residual of `c_{k,m} + Σ_{i≠m} V_i c_{k,i} = e_k` over
/// all `(k, m)`.
pub fn long_param_residual(v: &StatMatrixV, c: &LongTimescaleParam) -> f64 {
    let k_users = v.num_users();
    let m_aps = v.num_aps();
    let mut worst = 0.0f64;
    for k in 0..k_users {
        for m in 0..m_aps {
            let mut r = CVector::from_column_slice(c.block(k, m));
            for i in (0..m_aps).filter(|&i| i != m) {
                r += &v.blocks[i] * CVector::from_column_slice(c.block(k, i));
            }
            r[k] -= C64::new(1.0, 0.0);
            worst = worst.max(r.norm());
        }
    }
    worst
}

/// Left-hand side of the per-AP first-order optimality condition for user `k`
/// at AP `m` under local channel `h_m`, with the other APs' contributions
/// `E[H_iᴴ w̃_{k,i}]` taken from the statistics `expectation`. Returns the
/// residual norm relative to `‖h_{k,m}‖`.
pub fn stationarity_residual(
    expectation: &StatMatrixV,
    h_m: &CMatrix,
    m: usize,
    k: usize,
    c: &LongTimescaleParam,
    noise_power: f64,
) -> Result<f64> {
    let g = local_receiver(h_m, noise_power)?;
    let w = lmmse_beamformer(&g, c.block(k, m));
    let mut inner = h_m.adjoint() * &w;
    for i in (0..expectation.num_aps()).filter(|&i| i != m) {
        inner += &expectation.blocks[i] * CVector::from_column_slice(c.block(k, i));
    }
    inner[k] -= C64::new(1.0, 0.0);
    let residual = h_m * inner + w * C64::new(noise_power, 0.0);
    Ok(residual.norm() / h_m.column(k).norm())
}

pub fn smallest_singular_value(a: &CMatrix) -> f64 {
    let s = a.clone().svd(false, false).singular_values;
    s.iter().copied().fold(f64::INFINITY, f64::min)
}
