//! Procedural planar kitting: an asymmetric tool lies on the table and has
//! to be placed into a matching cavity carved into a kit plate.

mod shape;

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use shape::{normalize_shape, random_polyomino, trace_outline, ShapeSpec};

use crate::error::{Error, Result};

pub const BACKGROUND_HEIGHT: f64 = 0.0;
pub const PLATE_HEIGHT: f64 = 0.2;
pub const TOOL_HEIGHT: f64 = 0.4;

/// Supersampling offsets inside a pixel, symmetric under quarter turns.
const SUBSAMPLES: [f64; 4] = [-0.375, -0.125, 0.125, 0.375];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub height: usize,
    pub width: usize,
    /// Observation channels; the heightmap is repeated across them.
    pub channels: usize,
    pub clearance: f64,
    /// Rotations checked by the asymmetry test.
    pub asymmetry_angles: usize,
    pub max_rotation_iou: f64,
    pub min_cells: usize,
    pub max_cells: usize,
    pub min_diameter: f64,
    pub max_diameter: f64,
    pub max_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            height: 64,
            width: 64,
            channels: 1,
            clearance: 1.0,
            asymmetry_angles: 36,
            max_rotation_iou: 0.85,
            min_cells: 4,
            max_cells: 8,
            min_diameter: 10.0,
            max_diameter: 14.0,
            max_attempts: 1000,
        }
    }
}

/// Planar pose; `x` is the column axis and `y` the row axis, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose {
    /// Model-frame point to world frame.
    pub fn apply(&self, qx: f64, qy: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * qx - s * qy + self.x, s * qx + c * qy + self.y)
    }

    /// World-frame point to model frame.
    pub fn invert(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (px - self.x, py - self.y);
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolState {
    OnTable,
    Kitted,
    Misplaced,
}

/// Pixel action: row `u`, column `v` and an orientation bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub u: usize,
    pub v: usize,
    pub theta_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub shape: ShapeSpec,
    pub tool: Pose,
    /// Pose of the cavity; the plate is the axis-aligned square of
    /// half-size `plate_half` centred on it.
    pub kit: Pose,
    pub plate_half: f64,
    pub clearance: f64,
    pub height: usize,
    pub width: usize,
    pub state: ToolState,
}

impl Scene {
    pub fn tool_contains(&self, x: f64, y: f64) -> bool {
        let (qx, qy) = self.tool.invert(x, y);
        self.shape.contains(qx, qy)
    }

    pub fn cavity_contains(&self, x: f64, y: f64) -> bool {
        let (qx, qy) = self.kit.invert(x, y);
        self.shape.contains_dilated(qx, qy, self.clearance)
    }

    pub fn plate_contains(&self, x: f64, y: f64) -> bool {
        (x - self.kit.x).abs() <= self.plate_half && (y - self.kit.y).abs() <= self.plate_half
    }

    /// The same scene rotated by `k` quarter turns about the workspace centre.
    pub fn rotated_quarter(&self, k: usize) -> Scene {
        let (cx, cy) = ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0);
        let turn = |p: Pose| {
            let mut p = p;
            for _ in 0..k % 4 {
                let (dx, dy) = (p.x - cx, p.y - cy);
                p = Pose {
                    x: cx - dy,
                    y: cy + dx,
                    theta: (p.theta + PI / 2.0).rem_euclid(TAU),
                };
            }
            p
        };
        Scene {
            tool: turn(self.tool),
            kit: turn(self.kit),
            ..self.clone()
        }
    }

    /// The same scene with both poses shifted by whole pixels.
    pub fn translated(&self, dx: f64, dy: f64) -> Scene {
        let shift = |p: Pose| Pose { x: p.x + dx, y: p.y + dy, ..p };
        Scene {
            tool: shift(self.tool),
            kit: shift(self.kit),
            ..self.clone()
        }
    }
}

fn draw_shape(cfg: &EnvConfig, rng: &mut ChaCha8Rng) -> Option<ShapeSpec> {
    let n = rng.gen_range(cfg.min_cells..=cfg.max_cells);
    let cells = random_polyomino(n, rng);
    let outline = trace_outline(&cells)?;
    let shape = normalize_shape(&outline, rng.gen_range(cfg.min_diameter..=cfg.max_diameter));
    let asymmetric = (1..cfg.asymmetry_angles)
        .all(|i| shape.rotation_iou(TAU * i as f64 / cfg.asymmetry_angles as f64, 0.25) <= cfg.max_rotation_iou);
    asymmetric.then_some(shape)
}

/// Distance from a point to an axis-aligned square (zero inside).
fn square_distance(px: f64, py: f64, cx: f64, cy: f64, half: f64) -> f64 {
    let dx = ((px - cx).abs() - half).max(0.0);
    let dy = ((py - cy).abs() - half).max(0.0);
    dx.hypot(dy)
}

/// Deterministic scene for a seed: a random asymmetric tool, its kit and
/// non-overlapping uniform poses.
pub fn generate_episode(seed: u64, cfg: &EnvConfig) -> Result<Scene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    for _ in 0..cfg.max_attempts {
        let Some(shape) = draw_shape(cfg, &mut rng) else {
            continue;
        };
        let r = shape.radius();
        let half = (r + cfg.clearance + 2.0).ceil();
        let (tlo, thi_x, thi_y) = (r + 1.0, w - 2.0 - r, h - 2.0 - r);
        let (klo, khi_x, khi_y) = (half, w - 1.0 - half, h - 1.0 - half);
        if thi_x <= tlo || thi_y <= tlo || khi_x <= klo || khi_y <= klo {
            continue;
        }
        let tool = Pose {
            x: rng.gen_range(tlo..thi_x),
            y: rng.gen_range(tlo..thi_y),
            theta: rng.gen_range(0.0..TAU),
        };
        let kit = Pose {
            x: rng.gen_range(klo..khi_x),
            y: rng.gen_range(klo..khi_y),
            theta: rng.gen_range(0.0..TAU),
        };
        if square_distance(tool.x, tool.y, kit.x, kit.y, half) <= r + 1.0 {
            continue;
        }
        return Ok(Scene {
            seed,
            shape,
            tool,
            kit,
            plate_half: half,
            clearance: cfg.clearance,
            height: cfg.height,
            width: cfg.width,
            state: ToolState::OnTable,
        });
    }
    Err(Error::GenerationExhausted(cfg.max_attempts))
}

/// Heightmap `[channels, H, W]` with 4x4 supersampled anti-aliasing.
pub fn render_observation(scene: &Scene, channels: usize) -> Vec<f64> {
    let (h, w) = (scene.height, scene.width);
    let mut plane = vec![0.0; h * w];
    let reach = scene.shape.radius() + 1.0;
    for r in 0..h {
        for c in 0..w {
            let (x, y) = (c as f64, r as f64);
            let near_tool = (x - scene.tool.x).abs() <= reach && (y - scene.tool.y).abs() <= reach;
            let near_plate = (x - scene.kit.x).abs() <= scene.plate_half + 1.0
                && (y - scene.kit.y).abs() <= scene.plate_half + 1.0;
            if !near_tool && !near_plate {
                continue;
            }
            let mut acc = 0.0;
            for oy in SUBSAMPLES {
                for ox in SUBSAMPLES {
                    let (px, py) = (x + ox, y + oy);
                    acc += if near_tool && scene.tool_contains(px, py) {
                        TOOL_HEIGHT
                    } else if scene.plate_contains(px, py) && !scene.cavity_contains(px, py) {
                        PLATE_HEIGHT
                    } else {
                        BACKGROUND_HEIGHT
                    };
                }
            }
            plane[r * w + c] = acc / 16.0;
        }
    }
    let mut out = Vec::with_capacity(channels * h * w);
    for _ in 0..channels {
        out.extend_from_slice(&plane);
    }
    out
}

/// Pixel whose centre lies inside the tool and is closest to the tool's
/// centroid (ties to the lowest row-major index).
fn tool_pick_pixel(scene: &Scene) -> Option<(usize, usize)> {
    let (cu, cv) = (scene.tool.y.round(), scene.tool.x.round());
    if cu >= 0.0 && cv >= 0.0 && scene.tool_contains(cv, cu) {
        return Some((cu as usize, cv as usize));
    }
    let reach = scene.shape.radius().ceil() as i64 + 1;
    let mut best: Option<(f64, usize, usize)> = None;
    for du in -reach..=reach {
        for dv in -reach..=reach {
            let (u, v) = (cu as i64 + du, cv as i64 + dv);
            if u < 0 || v < 0 || u >= scene.height as i64 || v >= scene.width as i64 {
                continue;
            }
            if !scene.tool_contains(v as f64, u as f64) {
                continue;
            }
            let d = (v as f64 - scene.tool.x).hypot(u as f64 - scene.tool.y);
            let better = match best {
                None => true,
                Some((bd, bu, bv)) => d < bd || (d == bd && (u as usize, v as usize) < (bu, bv)),
            };
            if better {
                best = Some((d, u as usize, v as usize));
            }
        }
    }
    best.map(|(_, u, v)| (u, v))
}

/// Bin of the gripper angle on `[0, pi)` with `N / 2` bins.
pub fn pick_angle_index(theta: f64, n: usize) -> usize {
    let step = TAU / n as f64;
    ((theta.rem_euclid(PI) / step).round() as usize) % (n / 2)
}

/// Bin of a rotation on `[0, 2 pi)` with `N` bins.
pub fn place_angle_index(delta: f64, n: usize) -> usize {
    let step = TAU / n as f64;
    ((delta.rem_euclid(TAU) / step).round() as usize) % n
}

/// Expert pick and place for a scene with `N` orientation bins.
pub fn oracle_actions(scene: &Scene, n: usize) -> Result<(Action, Action)> {
    if scene.state != ToolState::OnTable {
        return Err(Error::ToolNotOnTable);
    }
    let (u, v) = tool_pick_pixel(scene)
        .ok_or_else(|| Error::InvalidArgument("tool covers no pixel centre".into()))?;
    let pick = Action {
        u,
        v,
        theta_index: pick_angle_index(scene.tool.theta, n),
    };
    let delta = scene.kit.theta - scene.tool.theta;
    let (qx, qy) = scene.tool.invert(v as f64, u as f64);
    let (px, py) = scene.kit.apply(qx, qy);
    let (pu, pv) = (py.round(), px.round());
    if pu < 0.0 || pv < 0.0 || pu as usize >= scene.height || pv as usize >= scene.width {
        return Err(Error::ActionOutOfBounds(format!("place pixel ({pu}, {pv})")));
    }
    let place = Action {
        u: pu as usize,
        v: pv as usize,
        theta_index: place_angle_index(delta, n),
    };
    Ok((pick, place))
}

/// Grasp at the pick pixel and transport rigidly: rotate by the place bin's
/// angle about the pick point and move it onto the place point. A pick
/// off the tool leaves the scene unchanged.
pub fn apply_action(scene: &Scene, pick: &Action, place: &Action, n: usize) -> Scene {
    let (px, py) = (pick.v as f64, pick.u as f64);
    if scene.state != ToolState::OnTable || !scene.tool_contains(px, py) {
        return scene.clone();
    }
    let d = TAU * place.theta_index as f64 / n as f64;
    let (s, c) = d.sin_cos();
    let (rx, ry) = (scene.tool.x - px, scene.tool.y - py);
    let (qx, qy) = (place.v as f64, place.u as f64);
    let mut out = scene.clone();
    out.tool = Pose {
        x: qx + c * rx - s * ry,
        y: qy + s * rx + c * ry,
        theta: (scene.tool.theta + d).rem_euclid(TAU),
    };
    out.state = if check_success(&out).success {
        ToolState::Kitted
    } else {
        ToolState::Misplaced
    };
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessReport {
    pub success: bool,
    /// Distance between tool and cavity centroids, pixels.
    pub translation_error: f64,
    /// Tool minus cavity angle wrapped to `(-pi, pi]`.
    pub rotation_error: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Whether every 4x-supersampled point of the tool lies in the cavity.
pub fn check_success(scene: &Scene) -> SuccessReport {
    let reach = scene.shape.radius() + 1.0;
    let (r0, r1) = ((scene.tool.y - reach).floor() as i64, (scene.tool.y + reach).ceil() as i64);
    let (c0, c1) = ((scene.tool.x - reach).floor() as i64, (scene.tool.x + reach).ceil() as i64);
    let mut success = true;
    'scan: for r in r0..=r1 {
        for c in c0..=c1 {
            for oy in SUBSAMPLES {
                for ox in SUBSAMPLES {
                    let (x, y) = (c as f64 + ox, r as f64 + oy);
                    if scene.tool_contains(x, y) && !scene.cavity_contains(x, y) {
                        success = false;
                        break 'scan;
                    }
                }
            }
        }
    }
    SuccessReport {
        success,
        translation_error: (scene.tool.x - scene.kit.x).hypot(scene.tool.y - scene.kit.y),
        rotation_error: wrap_angle(scene.tool.theta - scene.kit.theta),
    }
}

/// One observation with its expert actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoStep {
    pub obs: Vec<f64>,
    pub pick: Action,
    pub place: Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub seed: u64,
    pub n: usize,
    pub steps: Vec<DemoStep>,
}

/// Record the expert on the scene of `seed`. Returns `None` when the
/// expert's quantized actions do not kit the tool.
pub fn record_demo(seed: u64, cfg: &EnvConfig, n: usize) -> Result<Option<Demo>> {
    let scene = generate_episode(seed, cfg)?;
    let (pick, place) = oracle_actions(&scene, n)?;
    let after = apply_action(&scene, &pick, &place, n);
    if after.state != ToolState::Kitted {
        return Ok(None);
    }
    Ok(Some(Demo {
        seed,
        n,
        steps: vec![DemoStep {
            obs: render_observation(&scene, cfg.channels),
            pick,
            place,
        }],
    }))
}

/// `count` demos from consecutive seeds starting at `first_seed`, skipping
/// scenes the expert cannot solve.
pub fn collect_demos(count: usize, first_seed: u64, cfg: &EnvConfig, n: usize) -> Result<Vec<Demo>> {
    let mut out = Vec::with_capacity(count);
    let mut seed = first_seed;
    while out.len() < count {
        if let Some(d) = record_demo(seed, cfg, n)? {
            out.push(d);
        }
        seed += 1;
    }
    Ok(out)
}
