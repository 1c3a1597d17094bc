//! Scenario construction, quasi-static path statistics and per-realization
//! channel assembly for the field-response multipath model.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    facing_frame, pattern_power, rotated_angles, rotation_matrix, steering, wave_vector,
    AntennaLayout, Orientation, PathAngles,
};
use crate::{CMatrix, Error, Result, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

/// Scenario description as stored on disk. Powers are in dBm, the Rician
/// factor in dB and angles in degrees; [`Scenario::from_config`] converts
/// them to linear units and radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_aps: usize,
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_paths: usize,
    pub carrier_freq_hz: f64,
    pub noise_power_dbm: f64,
    pub tx_power_dbm: f64,
    pub rician_factor_db: f64,
    pub ring_radius_m: f64,
    pub user_area_radius_m: f64,
    pub height_diff_m: f64,
    /// Initial spacing between adjacent antennas, in wavelengths.
    pub antenna_spacing_wavelengths: f64,
    /// Side length of each antenna's square movable region, in wavelengths.
    pub movable_region_wavelengths: f64,
    /// Symmetric pitch/roll/yaw range, in degrees.
    pub rotatable_range_deg: f64,
    pub num_hotspots: usize,
    pub hotspot_radius_m: f64,
    /// Fixed user positions in meters; when absent users are drawn per
    /// realization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_positions_m: Option<Vec<[f64; 3]>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_aps: 10,
            num_antennas: 6,
            num_users: 10,
            num_paths: 6,
            carrier_freq_hz: 20e9,
            noise_power_dbm: -70.0,
            tx_power_dbm: 20.0,
            rician_factor_db: 10.0,
            ring_radius_m: 140.0,
            user_area_radius_m: 120.0,
            height_diff_m: 10.0,
            antenna_spacing_wavelengths: 5.0,
            movable_region_wavelengths: 1.0,
            rotatable_range_deg: 30.0,
            num_hotspots: 3,
            hotspot_radius_m: 10.0,
            user_positions_m: None,
        }
    }
}

impl ScenarioConfig {
    /// Reduced network (4 APs, 4 antennas, 4 users, 4 paths) that keeps the
    /// rest of the default parameters.
    pub fn desk() -> Self {
        Self {
            num_aps: 4,
            num_antennas: 4,
            num_users: 4,
            num_paths: 4,
            ..Self::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Static world description in linear units.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub num_aps: usize,
    pub num_antennas: usize,
    pub num_users: usize,
    pub num_paths: usize,
    pub carrier_freq: f64,
    pub wavelength: f64,
    pub noise_power: f64,
    pub tx_power: f64,
    pub rician_factor: f64,
    pub ap_positions: Vec<Vector3<f64>>,
    /// Columns are each AP's initial local axes in global coordinates.
    pub ap_frames: Vec<Matrix3<f64>>,
    pub user_positions: Vec<Vector3<f64>>,
    pub ring_radius: f64,
    pub user_area_radius: f64,
    pub height_diff: f64,
    pub antenna_spacing: f64,
    pub movable_box_halfwidth: f64,
    pub rotatable_range: f64,
    pub num_hotspots: usize,
    pub hotspot_radius: f64,
}

impl Scenario {
    /// Places the APs uniformly on the ring, each facing the ring centre.
    /// Users come from the config if it lists them, otherwise they stay
    /// empty until [`Scenario::with_users`].
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let positive_counts = [cfg.num_aps, cfg.num_antennas, cfg.num_users, cfg.num_paths];
        if positive_counts.contains(&0) {
            return Err(Error::InvalidConfig(
                "num_aps, num_antennas, num_users and num_paths must be at least 1".into(),
            ));
        }
        let finite_positive = [
            ("carrier_freq_hz", cfg.carrier_freq_hz),
            ("ring_radius_m", cfg.ring_radius_m),
            ("user_area_radius_m", cfg.user_area_radius_m),
            (
                "antenna_spacing_wavelengths",
                cfg.antenna_spacing_wavelengths,
            ),
        ];
        for (name, v) in finite_positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("noise_power_dbm", cfg.noise_power_dbm),
            ("tx_power_dbm", cfg.tx_power_dbm),
            ("rician_factor_db", cfg.rician_factor_db),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        if !(cfg.movable_region_wavelengths >= 0.0) || !(cfg.height_diff_m >= 0.0) {
            return Err(Error::InvalidConfig(
                "movable region and height difference must be non-negative".into(),
            ));
        }
        if !(0.0..=180.0).contains(&cfg.rotatable_range_deg) {
            return Err(Error::InvalidConfig(format!(
                "rotatable range must lie in [0, 180] degrees, got {}",
                cfg.rotatable_range_deg
            )));
        }
        if cfg.hotspot_radius_m < 0.0 || cfg.num_hotspots == 0 {
            return Err(Error::InvalidConfig(
                "hotspot settings must be positive".into(),
            ));
        }

        let wavelength = SPEED_OF_LIGHT / cfg.carrier_freq_hz;
        let m = cfg.num_aps;
        let ap_positions: Vec<_> = (0..m)
            .map(|i| {
                let a = TAU * i as f64 / m as f64;
                Vector3::new(
                    cfg.ring_radius_m * a.cos(),
                    cfg.ring_radius_m * a.sin(),
                    cfg.height_diff_m,
                )
            })
            .collect();
        let ap_frames = ap_positions
            .iter()
            .map(|p| facing_frame(Vector3::new(-p.x, -p.y, 0.0)))
            .collect();

        let mut scenario = Self {
            num_aps: m,
            num_antennas: cfg.num_antennas,
            num_users: cfg.num_users,
            num_paths: cfg.num_paths,
            carrier_freq: cfg.carrier_freq_hz,
            wavelength,
            noise_power: dbm_to_watts(cfg.noise_power_dbm),
            tx_power: dbm_to_watts(cfg.tx_power_dbm),
            rician_factor: db_to_linear(cfg.rician_factor_db),
            ap_positions,
            ap_frames,
            user_positions: Vec::new(),
            ring_radius: cfg.ring_radius_m,
            user_area_radius: cfg.user_area_radius_m,
            height_diff: cfg.height_diff_m,
            antenna_spacing: cfg.antenna_spacing_wavelengths * wavelength,
            movable_box_halfwidth: cfg.movable_region_wavelengths * wavelength / 2.0,
            rotatable_range: cfg.rotatable_range_deg.to_radians(),
            num_hotspots: cfg.num_hotspots,
            hotspot_radius: cfg.hotspot_radius_m,
        };
        // fail early on regions that would let antennas collide
        scenario.initial_layout()?;
        if let Some(users) = &cfg.user_positions_m {
            let users = users
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect();
            scenario = scenario.with_users(users)?;
        }
        Ok(scenario)
    }

    pub fn with_users(mut self, users: Vec<Vector3<f64>>) -> Result<Self> {
        if users.len() != self.num_users {
            return Err(Error::Shape(format!(
                "expected {} user positions, got {}",
                self.num_users,
                users.len()
            )));
        }
        self.user_positions = users;
        Ok(self)
    }

    /// Initial uniform linear array along the local x axis. Antennas move in
    /// the array plane (local x–z), perpendicular to the boresight.
    pub fn initial_layout(&self) -> Result<AntennaLayout> {
        let hw = self.movable_box_halfwidth;
        AntennaLayout::linear(
            self.num_antennas,
            self.antenna_spacing,
            Vector3::new(hw, 0.0, hw),
            self.wavelength,
        )
    }

    pub fn initial_layouts(&self) -> Result<Vec<AntennaLayout>> {
        let layout = self.initial_layout()?;
        Ok(vec![layout; self.num_aps])
    }

    pub fn orientation_bounds(&self) -> (f64, f64) {
        (-self.rotatable_range, self.rotatable_range)
    }

    /// Direction from AP `m` to `point` in the AP's initial local frame.
    pub fn local_direction(&self, m: usize, point: &Vector3<f64>) -> Vector3<f64> {
        self.ap_frames[m].transpose() * (point - self.ap_positions[m])
    }
}

/// 3GPP urban-microcell path loss in dB.
pub fn path_loss_db(distance_m: f64, carrier_freq_hz: f64) -> Result<f64> {
    if !(distance_m > 0.0) {
        return Err(Error::NonPositiveDistance(distance_m));
    }
    if !(carrier_freq_hz > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "carrier frequency must be positive, got {carrier_freq_hz}"
        )));
    }
    Ok(-22.7 - 36.7 * distance_m.log10() - 26.0 * (carrier_freq_hz / 1e9).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UserDistribution {
    Uniform,
    Hotspot,
}

fn uniform_in_disk<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> (f64, f64) {
    let r = radius * rng.gen::<f64>().sqrt();
    let a = TAU * rng.gen::<f64>();
    (r * a.cos(), r * a.sin())
}

/// Draws ground-level user positions inside the serving disk.
pub fn place_users<R: Rng + ?Sized>(
    kind: UserDistribution,
    scenario: &Scenario,
    rng: &mut R,
) -> Vec<Vector3<f64>> {
    let big_r = scenario.user_area_radius;
    let k = scenario.num_users;
    match kind {
        UserDistribution::Uniform => (0..k)
            .map(|_| {
                let (x, y) = uniform_in_disk(big_r, rng);
                Vector3::new(x, y, 0.0)
            })
            .collect(),
        UserDistribution::Hotspot => {
            let centers: Vec<_> = (0..scenario.num_hotspots)
                .map(|_| uniform_in_disk(big_r, rng))
                .collect();
            (0..k)
                .map(|u| {
                    let (cx, cy) = centers[u % centers.len()];
                    let (dx, dy) = uniform_in_disk(scenario.hotspot_radius, rng);
                    let (mut x, mut y) = (cx + dx, cy + dy);
                    let r = x.hypot(y);
                    if r > big_r {
                        x *= big_r / r;
                        y *= big_r / r;
                    }
                    Vector3::new(x, y, 0.0)
                })
                .collect()
        }
    }
}

/// Quasi-static statistics of the paths between one user and one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPaths {
    /// Angles in the AP's initial local frame; path 0 is the LoS path.
    pub angles: Vec<PathAngles>,
    /// Average power of each path's fading coefficient.
    pub variances: Vec<f64>,
    /// Large-scale gain times transmit power; the variances sum to this.
    pub total_gain: f64,
    directions: Vec<Vector3<f64>>,
}

impl LinkPaths {
    pub fn new(angles: Vec<PathAngles>, variances: Vec<f64>) -> Self {
        let directions = angles.iter().map(|a| wave_vector(*a)).collect();
        let total_gain = variances.iter().sum();
        Self {
            angles,
            variances,
            total_gain,
            directions,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.angles.len()
    }
}

/// Statistical CSI for every (user, AP) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    num_users: usize,
    num_aps: usize,
    num_paths: usize,
    links: Vec<LinkPaths>,
}

impl PathSet {
    /// `links` is indexed by `k * num_aps + m`; every link must carry the
    /// same number of paths.
    pub fn new(num_users: usize, num_aps: usize, links: Vec<LinkPaths>) -> Result<Self> {
        if links.len() != num_users * num_aps || links.is_empty() {
            return Err(Error::Shape(format!(
                "expected {} links, got {}",
                num_users * num_aps,
                links.len()
            )));
        }
        let num_paths = links[0].num_paths();
        if links
            .iter()
            .any(|l| l.num_paths() != num_paths || l.variances.len() != num_paths)
        {
            return Err(Error::Shape("links must share one path count".into()));
        }
        Ok(Self {
            num_users,
            num_aps,
            num_paths,
            links,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_aps(&self) -> usize {
        self.num_aps
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn link(&self, k: usize, m: usize) -> &LinkPaths {
        &self.links[k * self.num_aps + m]
    }

    pub fn links(&self) -> &[LinkPaths] {
        &self.links
    }

    /// Copy with every fading variance set to zero except the LoS path of
    /// each link, which keeps the full link gain.
    pub fn los_only(&self) -> Self {
        let links = self
            .links
            .iter()
            .map(|l| {
                let mut v = vec![0.0; l.num_paths()];
                v[0] = l.total_gain;
                LinkPaths::new(l.angles.clone(), v)
            })
            .collect();
        Self {
            links,
            ..self.clone()
        }
    }
}

/// Splits a link gain between the LoS path and `num_paths - 1` equal NLoS
/// paths according to the Rician factor.
pub fn rician_split(total_gain: f64, rician_factor: f64, num_paths: usize) -> Vec<f64> {
    if num_paths == 1 {
        return vec![total_gain];
    }
    let kappa = rician_factor;
    let nlos = total_gain / ((kappa + 1.0) * (num_paths - 1) as f64);
    std::iter::once(kappa * total_gain / (kappa + 1.0))
        .chain(std::iter::repeat_n(nlos, num_paths - 1))
        .collect()
}

/// Draws an NLoS arrival direction with density `sin(theta) / (2π)` over
/// `theta ∈ [0, π]`, `phi ∈ [0, π]`.
pub fn sample_nlos_angles<R: Rng + ?Sized>(rng: &mut R) -> PathAngles {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    PathAngles::new(PI * u2, (1.0 - 2.0 * u1).clamp(-1.0, 1.0).acos())
}

/// LoS geometry, 3GPP path loss, random NLoS directions and the Rician power
/// split for every (user, AP) pair.
pub fn generate_paths<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<PathSet> {
    if scenario.user_positions.len() != scenario.num_users {
        return Err(Error::InvalidConfig("users have not been placed".into()));
    }
    let (k_users, m_aps, l_paths) = (scenario.num_users, scenario.num_aps, scenario.num_paths);
    let mut links = Vec::with_capacity(k_users * m_aps);
    for k in 0..k_users {
        let user = scenario.user_positions[k];
        for m in 0..m_aps {
            let distance = (user - scenario.ap_positions[m]).norm();
            let gain = db_to_linear(path_loss_db(distance, scenario.carrier_freq)?);
            let mut angles = Vec::with_capacity(l_paths);
            angles.push(PathAngles::from_direction(
                &scenario.local_direction(m, &user),
            ));
            angles.extend((1..l_paths).map(|_| sample_nlos_angles(rng)));
            let variances = rician_split(gain * scenario.tx_power, scenario.rician_factor, l_paths);
            links.push(LinkPaths::new(angles, variances));
        }
    }
    PathSet::new(k_users, m_aps, links)
}

/// Small-scale fading coefficients of one realization, indexed
/// `(k * M + m) * L + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct FadingSample {
    pub psi: Vec<C64>,
}

impl FadingSample {
    pub fn coefficient(&self, paths: &PathSet, k: usize, m: usize, l: usize) -> C64 {
        self.psi[(k * paths.num_aps + m) * paths.num_paths + l]
    }

    fn link(&self, paths: &PathSet, k: usize, m: usize) -> &[C64] {
        let start = (k * paths.num_aps + m) * paths.num_paths;
        &self.psi[start..start + paths.num_paths]
    }

    pub fn scaled(&self, alpha: C64) -> Self {
        Self {
            psi: self.psi.iter().map(|p| p * alpha).collect(),
        }
    }
}

/// Independent `CN(0, b)` draw per path. Two standard normals are consumed
/// per path whatever its variance, so streams stay aligned across scenarios
/// that differ only in powers.
pub fn sample_fading<R: Rng + ?Sized>(paths: &PathSet, rng: &mut R) -> FadingSample {
    let psi = paths
        .links
        .iter()
        .flat_map(|link| link.variances.iter())
        .map(|&b| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re, im) * (b / 2.0).sqrt()
        })
        .collect();
    FadingSample { psi }
}

/// One instantaneous channel: an `N × K` block per AP.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub blocks: Vec<CMatrix>,
}

impl ChannelMatrix {
    pub fn num_aps(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_antennas(&self) -> usize {
        self.blocks[0].nrows()
    }

    pub fn num_users(&self) -> usize {
        self.blocks[0].ncols()
    }

    /// Row-stacked `MN × K` matrix.
    pub fn stacked(&self) -> CMatrix {
        let n = self.num_antennas();
        let mut h = CMatrix::zeros(n * self.num_aps(), self.num_users());
        for (m, block) in self.blocks.iter().enumerate() {
            h.rows_mut(m * n, n).copy_from(block);
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.iter().all(|z| z.re.is_finite() && z.im.is_finite()))
    }
}

/// Channel block of AP `m` for antennas at `positions` (local frame) and
/// array orientation `orientation`.
pub fn assemble_ap_block(
    paths: &PathSet,
    fading: &FadingSample,
    m: usize,
    positions: &[Vector3<f64>],
    orientation: Orientation,
    wavelength: f64,
) -> CMatrix {
    let rotation = rotation_matrix(orientation);
    let mut block = CMatrix::zeros(positions.len(), paths.num_users);
    for k in 0..paths.num_users {
        let link = paths.link(k, m);
        let psi = fading.link(paths, k, m);
        let mut column = block.column_mut(k);
        for (l, rho) in link.directions.iter().enumerate() {
            if psi[l] == C64::new(0.0, 0.0) {
                continue;
            }
            let gain = pattern_power(rotated_angles(&rotation, rho)).sqrt();
            if gain == 0.0 {
                continue;
            }
            let a = steering(positions, &rotation, rho, wavelength);
            column.axpy(psi[l] * gain, &a, C64::new(1.0, 0.0));
        }
    }
    block
}

/// Full channel for the given per-AP layouts and orientations.
pub fn assemble_channel(
    paths: &PathSet,
    fading: &FadingSample,
    layouts: &[AntennaLayout],
    orientations: &[Orientation],
    wavelength: f64,
) -> Result<ChannelMatrix> {
    if layouts.len() != paths.num_aps || orientations.len() != paths.num_aps {
        return Err(Error::Shape(format!(
            "need {} layouts and orientations, got {} and {}",
            paths.num_aps,
            layouts.len(),
            orientations.len()
        )));
    }
    if fading.psi.len() != paths.links.len() * paths.num_paths {
        return Err(Error::Shape("fading sample does not match path set".into()));
    }
    let blocks = (0..paths.num_aps)
        .map(|m| {
            assemble_ap_block(
                paths,
                fading,
                m,
                layouts[m].positions(),
                orientations[m],
                wavelength,
            )
        })
        .collect();
    Ok(ChannelMatrix { blocks })
}
