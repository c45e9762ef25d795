//! Procedural runway sensor: a pinhole camera rigidly mounted on the
//! aircraft renders a small grayscale view of the runway surface.
//!
//! The image is produced by casting one ray per pixel onto the ground plane
//! and shading the hit point from the runway profile (asphalt, centerline
//! stripe, optional side-strip markings, off-runway terrain), then applying
//! an affine lighting transform for the environment condition. At night,
//! centerline edge lights are composited at full intensity after the
//! lighting pass. Everything is a pure function of its inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::State;

/// Time-of-day environment parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Morning,
    Evening,
    Night,
}

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 3] = [TimeOfDay::Morning, TimeOfDay::Evening, TimeOfDay::Night];

    pub fn code(self) -> u8 {
        match self {
            TimeOfDay::Morning => 0,
            TimeOfDay::Evening => 1,
            TimeOfDay::Night => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("bad time-of-day code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            TimeOfDay::Morning => "morning",
            TimeOfDay::Evening => "evening",
            TimeOfDay::Night => "night",
        }
    }
}

/// Cloud-cover environment parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cloud {
    Clear,
    Overcast,
}

impl Cloud {
    pub const ALL: [Cloud; 2] = [Cloud::Clear, Cloud::Overcast];

    pub fn code(self) -> u8 {
        match self {
            Cloud::Clear => 0,
            Cloud::Overcast => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("bad cloud code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Cloud::Clear => "clear",
            Cloud::Overcast => "overcast",
        }
    }
}

/// Discrete environment descriptor: lighting conditions plus runway identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EnvParams {
    pub d1: TimeOfDay,
    pub d2: Cloud,
    pub runway_id: u8,
}

impl EnvParams {
    pub fn new(d1: TimeOfDay, d2: Cloud, runway_id: u8) -> Self {
        EnvParams { d1, d2, runway_id }
    }

    pub fn label(&self) -> String {
        format!("r{}-{}-{}", self.runway_id, self.d1.name(), self.d2.name())
    }
}

/// Pinhole camera rigidly attached to the aircraft.
///
/// The mount is displaced `lateral_offset` meters toward the right wing,
/// `height` meters above the ground, and pitched down by `pitch` radians
/// while yawing with the aircraft heading.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraConfig {
    pub lateral_offset: f64,
    pub height: f64,
    pub pitch: f64,
    /// Focal length in pixel units.
    pub focal: f64,
    pub width: usize,
    pub height_px: usize,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            lateral_offset: 2.0,
            height: 3.0,
            pitch: 15f64.to_radians(),
            focal: 16.0,
            width: 32,
            height_px: 24,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.focal <= 0.0 {
            return Err(Error::InvalidArgument(format!("focal must be > 0, got {}", self.focal)));
        }
        if self.width < 8 || self.height_px < 8 {
            return Err(Error::InvalidArgument(format!(
                "image dims must be >= 8, got {}x{}",
                self.width, self.height_px
            )));
        }
        if self.height <= 0.0 {
            return Err(Error::InvalidArgument("camera must sit above the ground".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height_px
    }
}

/// One side-strip marking painted on the runway over a downtrack interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SideStrip {
    pub py_start: f64,
    pub py_end: f64,
    /// Lateral center of the strip, meters (signed, 0 = centerline).
    pub lateral: f64,
    pub width: f64,
    pub albedo: f64,
}

/// Geometry and paint of one runway.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunwayProfile {
    pub id: u8,
    pub half_width: f64,
    pub base_albedo: f64,
    pub centerline_width: f64,
    pub centerline_albedo: f64,
    pub side_strips: Vec<SideStrip>,
    /// Downtrack spacing of centerline edge lights (visible at night only).
    pub edge_light_spacing: f64,
    pub edge_light_radius: f64,
}

impl RunwayProfile {
    pub fn validate(&self) -> Result<()> {
        if self.half_width <= 0.0 {
            return Err(Error::InvalidArgument("runway half_width must be > 0".into()));
        }
        for s in &self.side_strips {
            if s.lateral.abs() + s.width / 2.0 > self.half_width {
                return Err(Error::InvalidArgument(format!(
                    "side strip at lateral {} width {} leaves the runway",
                    s.lateral, s.width
                )));
            }
            if s.py_end <= s.py_start {
                return Err(Error::InvalidArgument("side strip interval is empty".into()));
            }
        }
        Ok(())
    }
}

/// Built-in runway catalog: profiles 0..=2 are the training runways, 3..=4
/// are held-out test runways. Profile 3 carries bright side-strip markings.
pub fn runway_catalog() -> Vec<RunwayProfile> {
    let plain = |id: u8, base: f64, cl_w: f64| RunwayProfile {
        id,
        half_width: 10.0,
        base_albedo: base,
        centerline_width: cl_w,
        centerline_albedo: 0.95,
        side_strips: Vec::new(),
        edge_light_spacing: 12.0,
        edge_light_radius: 0.6,
    };
    vec![
        plain(0, 0.34, 0.9),
        plain(1, 0.40, 1.1),
        plain(2, 0.28, 0.8),
        RunwayProfile {
            side_strips: vec![SideStrip {
                py_start: 120.0,
                py_end: 200.0,
                lateral: 7.5,
                width: 2.4,
                albedo: 1.0,
            }],
            ..plain(3, 0.34, 0.9)
        },
        plain(4, 0.45, 0.7),
    ]
}

pub const TRAIN_RUNWAYS: [u8; 3] = [0, 1, 2];
pub const TEST_RUNWAYS: [u8; 2] = [3, 4];

/// Grayscale observation with optional rendering provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in [0, 1].
    pub pixels: Vec<f64>,
    pub provenance: Option<(State, EnvParams)>,
}

impl Observation {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Observation { width, height, pixels, provenance: None }
    }

    /// Horizontal mirror (left-right pixel flip).
    pub fn mirrored(&self) -> Observation {
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for row in self.pixels.chunks(self.width) {
            pixels.extend(row.iter().rev());
        }
        Observation { width: self.width, height: self.height, pixels, provenance: None }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.pixels.iter().map(|p| (p - m).powi(2)).sum::<f64>() / self.pixels.len() as f64)
            .sqrt()
    }
}

/// Camera basis in the world frame for a given aircraft pose.
struct CameraFrame {
    pos: [f64; 3],
    x_axis: [f64; 3],
    y_axis: [f64; 3],
    z_axis: [f64; 3],
}

fn camera_frame(x: &State, cam: &CameraConfig) -> CameraFrame {
    let (st, ct) = (x.theta.sin(), x.theta.cos());
    let (sp, cp) = (cam.pitch.sin(), cam.pitch.cos());
    // Aircraft right = (cos t, -sin t); forward = (sin t, cos t).
    let pos = [x.px + cam.lateral_offset * ct, x.py - cam.lateral_offset * st, cam.height];
    let x_axis = [ct, -st, 0.0];
    let z_axis = [st * cp, ct * cp, -sp];
    // y = z cross x points image-down.
    let y_axis = [-sp * st, -sp * ct, -cp];
    CameraFrame { pos, x_axis, y_axis, z_axis }
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

const NEAR_PLANE: f64 = 0.1;

/// Project a runway-frame ground point to continuous pixel coordinates.
/// Returns `None` when the point is behind the camera or outside the frame.
pub fn project(ground: (f64, f64), x: &State, cam: &CameraConfig) -> Option<(f64, f64)> {
    let fr = camera_frame(x, cam);
    let rel = [ground.0 - fr.pos[0], ground.1 - fr.pos[1], -fr.pos[2]];
    let zc = dot3(rel, fr.z_axis);
    if zc <= NEAR_PLANE {
        return None;
    }
    let col = (cam.width as f64 - 1.0) / 2.0 + cam.focal * dot3(rel, fr.x_axis) / zc;
    let row = (cam.height_px as f64 - 1.0) / 2.0 + cam.focal * dot3(rel, fr.y_axis) / zc;
    let in_frame = col >= -0.5
        && col <= cam.width as f64 - 0.5
        && row >= -0.5
        && row <= cam.height_px as f64 - 0.5;
    in_frame.then_some((col, row))
}

/// Ground point hit by the ray through pixel (col, row), if any.
pub fn pixel_ground_point(
    x: &State,
    cam: &CameraConfig,
    col: usize,
    row: usize,
) -> Option<(f64, f64)> {
    let fr = camera_frame(x, cam);
    ray_ground(&fr, cam, col, row)
}

fn ray_ground(fr: &CameraFrame, cam: &CameraConfig, col: usize, row: usize) -> Option<(f64, f64)> {
    let u = (col as f64 - (cam.width as f64 - 1.0) / 2.0) / cam.focal;
    let w = (row as f64 - (cam.height_px as f64 - 1.0) / 2.0) / cam.focal;
    let dz = fr.z_axis[2] + u * fr.x_axis[2] + w * fr.y_axis[2];
    if dz >= -1e-12 {
        return None; // at or above the horizon
    }
    let t = -fr.pos[2] / dz;
    let gx = fr.pos[0] + t * (fr.z_axis[0] + u * fr.x_axis[0] + w * fr.y_axis[0]);
    let gy = fr.pos[1] + t * (fr.z_axis[1] + u * fr.x_axis[1] + w * fr.y_axis[1]);
    Some((gx, gy))
}

const SKY_INTENSITY: f64 = 0.75;
const TERRAIN_ALBEDO: f64 = 0.15;

/// Pre-lighting surface intensity at a runway-frame ground point.
fn surface_intensity(gx: f64, gy: f64, profile: &RunwayProfile) -> f64 {
    if gx.abs() > profile.half_width {
        return TERRAIN_ALBEDO;
    }
    for s in &profile.side_strips {
        if gy >= s.py_start && gy <= s.py_end && (gx - s.lateral).abs() <= s.width / 2.0 {
            return s.albedo;
        }
    }
    if gx.abs() <= profile.centerline_width / 2.0 {
        return profile.centerline_albedo;
    }
    profile.base_albedo
}

fn is_edge_light(gx: f64, gy: f64, profile: &RunwayProfile) -> bool {
    let spacing = profile.edge_light_spacing;
    if spacing <= 0.0 {
        return false;
    }
    let nearest = (gy / spacing).round() * spacing;
    gx * gx + (gy - nearest) * (gy - nearest) <= profile.edge_light_radius.powi(2)
}

/// Lighting scale for the time of day (morning is the reference condition).
fn time_of_day_scale(d1: TimeOfDay) -> f64 {
    match d1 {
        TimeOfDay::Morning => 1.0,
        TimeOfDay::Evening => 0.6,
        TimeOfDay::Night => 0.25,
    }
}

/// Affine intensity transform for the environment condition, clipped to
/// [0, 1]. Overcast compresses contrast about mid-gray and lifts the floor;
/// the time-of-day scale is applied on top.
pub fn apply_lighting(raw: &Observation, d: &EnvParams) -> Observation {
    let scale = time_of_day_scale(d.d1);
    let (contrast, ambient) = match d.d2 {
        Cloud::Clear => (1.0, 0.0),
        Cloud::Overcast => (0.7, 0.05),
    };
    let offset = 0.5 * (1.0 - contrast) + ambient;
    let pixels = raw
        .pixels
        .iter()
        .map(|&p| (scale * (contrast * p + offset)).clamp(0.0, 1.0))
        .collect();
    Observation { width: raw.width, height: raw.height, pixels, provenance: raw.provenance }
}

/// Render the observation for a pose and environment.
pub fn render(
    x: &State,
    d: &EnvParams,
    cam: &CameraConfig,
    profile: &RunwayProfile,
) -> Observation {
    let fr = camera_frame(x, cam);
    let n = cam.pixel_count();
    let mut pixels = Vec::with_capacity(n);
    let night = d.d1 == TimeOfDay::Night;
    let mut light_mask = if night { vec![false; n] } else { Vec::new() };
    for row in 0..cam.height_px {
        for col in 0..cam.width {
            let raw = match ray_ground(&fr, cam, col, row) {
                None => SKY_INTENSITY,
                Some((gx, gy)) => {
                    if night && is_edge_light(gx, gy, profile) {
                        light_mask[row * cam.width + col] = true;
                    }
                    surface_intensity(gx, gy, profile)
                }
            };
            pixels.push(raw);
        }
    }
    let raw_obs = Observation { width: cam.width, height: cam.height_px, pixels, provenance: None };
    let mut lit = apply_lighting(&raw_obs, d);
    if night {
        // Edge lights are emissive: composited at full intensity after the
        // lighting transform.
        for (p, &on) in lit.pixels.iter_mut().zip(light_mask.iter()) {
            if on {
                *p = 1.0;
            }
        }
    }
    lit.provenance = Some((*x, *d));
    lit
}
