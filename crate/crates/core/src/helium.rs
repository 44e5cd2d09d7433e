//! Superfluid helium filling of the resonator microchannels.
//!
//! Hydrostatic film and channel profiles, the dielectric-loading frequency
//! shift (linear in channel depth between two field-solver anchors) and the
//! four-region condensation trajectory.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::resonator::ResonatorGeometry;

pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Van der Waals constant giving a 30 nm film at 1 cm above the bulk level.
pub const DEFAULT_VDW_GAMMA: f64 = 30e-9 * 30e-9 * 30e-9 * 30e-9 * 146.0 * STANDARD_GRAVITY * 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeliumConstants {
    pub density_kg_m3: f64,
    pub surface_tension_n_m: f64,
    /// In J·m, so that `d = (γ/ρgH)^(1/4)` is in metres.
    pub vdw_gamma: f64,
    pub eps_helium: f64,
    pub gravity_m_s2: f64,
}

impl Default for HeliumConstants {
    fn default() -> Self {
        Self {
            density_kg_m3: 146.0,
            surface_tension_n_m: 3.58e-4,
            vdw_gamma: DEFAULT_VDW_GAMMA,
            eps_helium: 1.057,
            gravity_m_s2: STANDARD_GRAVITY,
        }
    }
}

impl HeliumConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("density_kg_m3", self.density_kg_m3),
            ("surface_tension_n_m", self.surface_tension_n_m),
            ("vdw_gamma", self.vdw_gamma),
            ("gravity_m_s2", self.gravity_m_s2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.eps_helium > 1.0 && self.eps_helium < 1.1) {
            return Err(Error::InvalidParameter(format!(
                "eps_helium must lie in (1, 1.1), got {}",
                self.eps_helium
            )));
        }
        Ok(())
    }
}

/// Condensation regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    /// Helium fills the sinter dead volume; nothing reaches the cell.
    I,
    /// Helium enters the cell; thermal transient then an unsaturated film.
    II,
    /// Bulk below the chip, channels filling by capillary action.
    III,
    /// Chip submerged.
    IV,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
            Region::IV => "IV",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "I" => Ok(Region::I),
            "II" => Ok(Region::II),
            "III" => Ok(Region::III),
            "IV" => Ok(Region::IV),
            other => Err(Error::InvalidParameter(format!("unknown region '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeliumState {
    /// Distance from chip surface down to the bulk level; 0 once submerged.
    pub bulk_depth_m: f64,
    pub channel_depth_m: f64,
    pub film_thickness_m: f64,
    pub region: Region,
}

/// `d = (γ / ρgH)^(1/4)`.
pub fn film_thickness(c: &HeliumConstants, bulk_depth_m: f64) -> Result<f64> {
    if !(bulk_depth_m > 0.0) || !bulk_depth_m.is_finite() {
        return Err(Error::OutOfDomain(format!(
            "film thickness needs a bulk level below the chip, got H = {bulk_depth_m} m"
        )));
    }
    Ok((c.vdw_gamma / (c.density_kg_m3 * c.gravity_m_s2 * bulk_depth_m)).powf(0.25))
}

/// `h = clamp(d_r − ρgHw²/16σ_t, 0, d_r)`.
pub fn channel_depth(c: &HeliumConstants, geom: &ResonatorGeometry, bulk_depth_m: f64) -> Result<f64> {
    if !(bulk_depth_m >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bulk depth must be >= 0, got {bulk_depth_m}"
        )));
    }
    let d_r = geom.film_thickness_m;
    let w = geom.gap_m;
    let sag = c.density_kg_m3 * c.gravity_m_s2 * bulk_depth_m * w * w / (16.0 * c.surface_tension_n_m);
    Ok((d_r - sag).clamp(0.0, d_r))
}

/// Bulk depth at which the channel meniscus touches the channel floor.
pub fn channel_empty_depth(c: &HeliumConstants, geom: &ResonatorGeometry) -> f64 {
    let w = geom.gap_m;
    16.0 * c.surface_tension_n_m * geom.film_thickness_m / (c.density_kg_m3 * c.gravity_m_s2 * w * w)
}

/// Dielectric-loading shift of the resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftModel {
    /// Signed ∂f_r/∂h in the channel regime (negative: helium lowers f_r).
    pub dfr_dh_hz_per_m: f64,
    /// Shift with the channels just full.
    pub channel_full_shift_hz: f64,
    /// Shift with the chip submerged.
    pub bulk_shift_hz: f64,
    /// Shift in regions I and II.
    pub film_shift_hz: f64,
    /// Depth of a full channel, d_r.
    pub full_channel_depth_m: f64,
    /// Optional (h, shift) samples replacing the linear channel model.
    #[serde(default)]
    pub table: Option<Vec<(f64, f64)>>,
}

impl Default for ShiftModel {
    fn default() -> Self {
        Self {
            dfr_dh_hz_per_m: -1.4e3 / 1e-9,
            channel_full_shift_hz: -0.31e6,
            bulk_shift_hz: -3.33e6,
            film_shift_hz: 0.0,
            full_channel_depth_m: 230e-9,
            table: None,
        }
    }
}

/// Allowed mismatch between `dfr_dh` and `channel_full_shift / d_r`.
pub const SENSITIVITY_CONSISTENCY_TOL: f64 = 0.05;

impl ShiftModel {
    /// Magnitude of ∂f_r/∂h, the factor converting frequency noise to displacement.
    pub fn sensitivity(&self) -> f64 {
        self.dfr_dh_hz_per_m.abs()
    }

    /// `channel_full_shift / d_r`, the slope implied by the two anchors.
    pub fn anchor_slope(&self) -> f64 {
        self.channel_full_shift_hz / self.full_channel_depth_m
    }

    /// Relative difference between the configured and anchor-implied slopes.
    pub fn slope_mismatch(&self) -> f64 {
        let anchor = self.anchor_slope();
        ((anchor - self.dfr_dh_hz_per_m) / self.dfr_dh_hz_per_m).abs()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_full_shift_hz > 0.0 || self.bulk_shift_hz > 0.0 {
            return Err(Error::InvalidParameter("frequency shifts must be <= 0".into()));
        }
        if self.bulk_shift_hz.abs() <= self.channel_full_shift_hz.abs() {
            return Err(Error::InvalidParameter(
                "bulk shift must exceed the channel-full shift in magnitude".into(),
            ));
        }
        if !(self.full_channel_depth_m > 0.0) {
            return Err(Error::InvalidParameter("full_channel_depth_m must be > 0".into()));
        }
        match &self.table {
            Some(table) => {
                if table.len() < 2 || table.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::InvalidParameter(
                        "shift table needs >= 2 rows with strictly increasing depth".into(),
                    ));
                }
            }
            None => {
                if self.slope_mismatch() > SENSITIVITY_CONSISTENCY_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "dfr_dh {} Hz/m inconsistent with channel_full_shift/d_r = {} Hz/m",
                        self.dfr_dh_hz_per_m,
                        self.anchor_slope()
                    )));
                }
            }
        }
        Ok(())
    }

    fn channel_shift(&self, h: f64) -> f64 {
        match &self.table {
            Some(table) => interpolate(table, h),
            None => {
                self.dfr_dh_hz_per_m * (h - self.full_channel_depth_m) + self.channel_full_shift_hz
            }
        }
    }
}

fn interpolate(table: &[(f64, f64)], x: f64) -> f64 {
    let first = table[0];
    let last = table[table.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    let i = table.partition_point(|p| p.0 <= x);
    let (x0, y0) = table[i - 1];
    let (x1, y1) = table[i];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

/// Frequency shift for a given filling state.
pub fn frequency_shift(model: &ShiftModel, state: &HeliumState) -> f64 {
    match state.region {
        Region::I | Region::II => model.film_shift_hz,
        Region::III => model.channel_shift(state.channel_depth_m),
        Region::IV => model.bulk_shift_hz,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulePoint {
    pub t_s: f64,
    /// Cumulative condensed liquid volume.
    pub volume_m3: f64,
}

/// Spike-and-recovery of the resonance while warm helium enters the cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transient {
    pub amplitude_hz: f64,
    pub rise_s: f64,
    /// Time until the abrupt recovery starts.
    pub hold_s: f64,
    pub fall_s: f64,
}

impl Transient {
    pub fn shift_at(&self, since_onset_s: f64) -> f64 {
        if since_onset_s < 0.0 {
            return 0.0;
        }
        let rise = 1.0 - (-since_onset_s / self.rise_s).exp();
        let decay = if since_onset_s <= self.hold_s {
            1.0
        } else {
            (-(since_onset_s - self.hold_s) / self.fall_s).exp()
        };
        self.amplitude_hz * rise * decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CondensationScenario {
    pub schedule: Vec<SchedulePoint>,
    /// Volume absorbed by the sinter before helium reaches the cell.
    pub sinter_volume_m3: f64,
    /// Volume at which a bulk pool forms at the cell bottom.
    pub bulk_onset_volume_m3: f64,
    pub cell_area_m2: f64,
    /// Chip height above the cell bottom.
    pub chip_height_m: f64,
    pub transient: Transient,
    pub sample_interval_s: f64,
}

impl CondensationScenario {
    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.schedule.windows(2).enumerate() {
            if !(w[1].t_s > w[0].t_s) {
                return Err(Error::InvalidScenario(format!(
                    "schedule entry {} (t = {} s) is not after entry {} (t = {} s)",
                    i + 1,
                    w[1].t_s,
                    i,
                    w[0].t_s
                )));
            }
            if w[1].volume_m3 < w[0].volume_m3 {
                return Err(Error::InvalidScenario(format!(
                    "schedule entry {} (volume = {} m3) decreases the condensed volume (previous {} m3)",
                    i + 1,
                    w[1].volume_m3,
                    w[0].volume_m3
                )));
            }
        }
        if let Some(p) = self.schedule.iter().find(|p| !(p.volume_m3 >= 0.0) || !p.t_s.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "schedule entry at t = {} s has invalid volume {}",
                p.t_s, p.volume_m3
            )));
        }
        if !(self.sinter_volume_m3 >= 0.0 && self.bulk_onset_volume_m3 >= self.sinter_volume_m3) {
            return Err(Error::InvalidScenario(
                "volume thresholds must satisfy 0 <= sinter <= bulk onset".into(),
            ));
        }
        if !(self.cell_area_m2 > 0.0 && self.chip_height_m > 0.0 && self.sample_interval_s > 0.0) {
            return Err(Error::InvalidScenario(
                "cell_area_m2, chip_height_m and sample_interval_s must be > 0".into(),
            ));
        }
        if !(self.transient.rise_s > 0.0 && self.transient.fall_s > 0.0 && self.transient.hold_s >= 0.0) {
            return Err(Error::InvalidScenario("transient time constants must be > 0".into()));
        }
        Ok(())
    }

    /// Condensed volume at `t`, piecewise linear in the schedule.
    pub fn volume_at(&self, t: f64) -> f64 {
        let pts = &self.schedule;
        match pts.len() {
            0 => 0.0,
            _ if t <= pts[0].t_s => pts[0].volume_m3,
            _ => {
                let i = pts.partition_point(|p| p.t_s <= t);
                if i >= pts.len() {
                    return pts[pts.len() - 1].volume_m3;
                }
                let (a, b) = (pts[i - 1], pts[i]);
                a.volume_m3 + (b.volume_m3 - a.volume_m3) * (t - a.t_s) / (b.t_s - a.t_s)
            }
        }
    }

    /// First time the condensed volume reaches `v`, if ever.
    fn time_reaching(&self, v: f64) -> Option<f64> {
        let pts = &self.schedule;
        let first = pts.first()?;
        if first.volume_m3 >= v {
            return Some(first.t_s);
        }
        pts.windows(2).find(|w| w[1].volume_m3 >= v).map(|w| {
            let (a, b) = (w[0], w[1]);
            a.t_s + (b.t_s - a.t_s) * (v - a.volume_m3) / (b.volume_m3 - a.volume_m3)
        })
    }
}

/// One sample of a condensation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t_s: f64,
    pub state: HeliumState,
    pub shift_hz: f64,
    pub f_r_hz: f64,
}

/// Everything needed to evaluate a condensation run.
#[derive(Debug, Clone)]
pub struct CondensationModel {
    pub scenario: CondensationScenario,
    pub constants: HeliumConstants,
    pub geometry: ResonatorGeometry,
    pub shift: ShiftModel,
    /// Resonance of the empty cell.
    pub base_f_r_hz: f64,
}

impl CondensationModel {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.constants.validate()?;
        self.geometry.validate()?;
        self.shift.validate()
    }

    /// Helium state and resonance at time `t`.
    pub fn state_at(&self, t: f64) -> Result<TrajectoryPoint> {
        let scn = &self.scenario;
        let v = scn.volume_at(t);
        let state = if v < scn.sinter_volume_m3 || (v == 0.0 && scn.sinter_volume_m3 == 0.0) {
            HeliumState {
                bulk_depth_m: scn.chip_height_m,
                channel_depth_m: 0.0,
                film_thickness_m: 0.0,
                region: Region::I,
            }
        } else if v < scn.bulk_onset_volume_m3 {
            HeliumState {
                bulk_depth_m: scn.chip_height_m,
                channel_depth_m: 0.0,
                film_thickness_m: film_thickness(&self.constants, scn.chip_height_m)?,
                region: Region::II,
            }
        } else {
            let level = scn.chip_height_m - (v - scn.bulk_onset_volume_m3) / scn.cell_area_m2;
            if level > 0.0 {
                HeliumState {
                    bulk_depth_m: level,
                    channel_depth_m: channel_depth(&self.constants, &self.geometry, level)?,
                    film_thickness_m: film_thickness(&self.constants, level)?,
                    region: Region::III,
                }
            } else {
                HeliumState {
                    bulk_depth_m: 0.0,
                    channel_depth_m: self.geometry.film_thickness_m,
                    film_thickness_m: 0.0,
                    region: Region::IV,
                }
            }
        };
        let mut shift = frequency_shift(&self.shift, &state);
        if state.region == Region::II {
            if let Some(onset) = scn.time_reaching(scn.sinter_volume_m3) {
                shift += scn.transient.shift_at(t - onset);
            }
        }
        Ok(TrajectoryPoint {
            t_s: t,
            state,
            shift_hz: shift,
            f_r_hz: self.base_f_r_hz + shift,
        })
    }

    /// Samples the run every `sample_interval_s` from the first to the last
    /// schedule time. An empty schedule yields one region-I sample at t = 0.
    pub fn trajectory(&self) -> Result<Vec<TrajectoryPoint>> {
        self.validate()?;
        let sched = &self.scenario.schedule;
        let (t0, t1) = match (sched.first(), sched.last()) {
            (Some(a), Some(b)) => (a.t_s, b.t_s),
            _ => return Ok(vec![self.state_at(0.0)?]),
        };
        let dt = self.scenario.sample_interval_s;
        let steps = ((t1 - t0) / dt).floor() as usize;
        let mut out = Vec::with_capacity(steps + 2);
        for i in 0..=steps {
            out.push(self.state_at(t0 + dt * i as f64)?);
        }
        if out.last().map_or(true, |p| p.t_s < t1) {
            out.push(self.state_at(t1)?);
        }
        Ok(out)
    }
}

/// Free-function form of [`CondensationModel::state_at`].
pub fn condensation_trajectory(model: &CondensationModel, t: f64) -> Result<(HeliumState, f64)> {
    model.validate()?;
    let p = model.state_at(t)?;
    Ok((p.state, p.f_r_hz))
}
