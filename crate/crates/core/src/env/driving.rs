//! Pixel-based driving simulator.
//!
//! A straight two-lane road with an actor car under kinematic bicycle
//! dynamics and a handful of constant-speed traffic cars. The sensor image
//! is an actor-centered top-down grayscale render; quantities that affect
//! the dynamics (speed, relative speed, steering angle) are encoded in pixel
//! intensities so a single frame carries the full temporal context.
//!
//! The 35 actions combine 7 steering targets with 5 accelerations:
//! `action = 5 * steer_index + accel_index`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvError, Environment, Sensors, Transition};

/// Number of steering targets (evenly spaced over ±`steer_max`).
pub const STEER_STEPS: usize = 7;
/// Acceleration choices in m/s².
pub const ACCELS: [f64; 5] = [-4.0, -2.0, 0.0, 2.0, 4.0];
/// Total driving actions.
pub const DRIVING_ACTIONS: usize = STEER_STEPS * ACCELS.len();

/// All simulator constants in one record, so experiments can vary them.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingConfig {
    /// Simulation step in seconds.
    pub dt: f64,
    /// Bicycle-model wheelbase in meters.
    pub wheelbase: f64,
    /// Speed ceiling in m/s.
    pub v_max: f64,
    /// Maximum steering angle magnitude in radians.
    pub steer_max: f64,
    /// Lane width in meters (two lanes total).
    pub lane_width: f64,
    /// Constant keep-alive reward rate; guarantees positive step rewards.
    pub keep_alive: f64,
    /// Car body length / width in meters.
    pub car_length: f64,
    pub car_width: f64,
    /// Number of constant-speed traffic cars.
    pub other_cars: usize,
    /// Traffic speed range in m/s.
    pub other_speed_min: f64,
    pub other_speed_max: f64,
    /// Traffic spawn range ahead of the actor, in meters.
    pub spawn_min: f64,
    pub spawn_max: f64,
    /// Actor initial speed range in m/s.
    pub v0_min: f64,
    pub v0_max: f64,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        DrivingConfig {
            dt: 0.1,
            wheelbase: 2.5,
            v_max: 20.0,
            steer_max: 0.3,
            lane_width: 3.5,
            keep_alive: 0.1,
            car_length: 4.5,
            car_width: 2.0,
            other_cars: 4,
            other_speed_min: 5.0,
            other_speed_max: 15.0,
            spawn_min: 20.0,
            spawn_max: 140.0,
            v0_min: 5.0,
            v0_max: 15.0,
        }
    }
}

/// A traffic car: fixed lane, constant speed, position derived from time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtherCar {
    pub lane: usize,
    pub x0: f64,
    pub speed: f64,
}

/// Value-semantic snapshot of the whole scene.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivingState {
    pub x: f64,
    pub y: f64,
    /// Heading in radians; 0 points along the road.
    pub phi: f64,
    /// Speed in m/s, clamped to `[0, v_max]`.
    pub v: f64,
    /// Steering angle in radians.
    pub delta: f64,
    /// Episode time in seconds; traffic positions are derived from it.
    pub time: f64,
    pub others: Vec<OtherCar>,
    pub done: bool,
}

#[derive(Debug, Clone, Default)]
pub struct DrivingEnv {
    cfg: DrivingConfig,
}

/// Render scale: meters per pixel of the 84×84 sensor image.
const M_PER_PX: f64 = 0.5;
const IMG: usize = 84;
/// Image center in pixel coordinates (between the two middle pixels).
const CENTER: f64 = (IMG as f64 - 1.0) / 2.0;
/// Half-width of a painted lane marking, meters.
const MARKING_HALF: f64 = 0.25;

impl DrivingEnv {
    pub fn new(cfg: DrivingConfig) -> Self {
        DrivingEnv { cfg }
    }

    pub fn config(&self) -> &DrivingConfig {
        &self.cfg
    }

    /// Lane center lateral offset: lane 0 at -w/2, lane 1 at +w/2.
    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 - 0.5) * self.cfg.lane_width
    }

    /// Lateral half-extent of the drivable surface.
    pub fn road_half_width(&self) -> f64 {
        self.cfg.lane_width
    }

    fn steer_target(&self, steer_idx: usize) -> f64 {
        let half = (STEER_STEPS / 2) as f64;
        (steer_idx as f64 - half) / half * self.cfg.steer_max
    }

    /// Distance to the nearest lane center.
    fn lane_offset(&self, y: f64) -> f64 {
        let a = (y - self.lane_center(0)).abs();
        let b = (y - self.lane_center(1)).abs();
        a.min(b)
    }

    fn other_x(&self, car: &OtherCar, time: f64) -> f64 {
        car.x0 + car.speed * time
    }

    fn collides(&self, s: &DrivingState) -> bool {
        let half_len = self.cfg.car_length / 2.0;
        let half_wid = self.cfg.car_width / 2.0;
        for car in &s.others {
            let cx = self.other_x(car, s.time);
            let cy = self.lane_center(car.lane);
            if obb_vs_aabb(
                (s.x, s.y),
                (half_len, half_wid),
                s.phi,
                (cx, cy),
                (half_len, half_wid),
            ) {
                return true;
            }
        }
        false
    }

    /// Reward for occupying the post-step state: speed, scaled down by the
    /// distance from the nearest lane center and by heading misalignment,
    /// plus the keep-alive floor. Always positive.
    fn reward(&self, s: &DrivingState) -> f64 {
        let half_lane = self.cfg.lane_width / 2.0;
        let f_center = (1.0 - self.lane_offset(s.y) / half_lane).max(0.0);
        let f_angle = s.phi.cos().max(0.0);
        self.cfg.dt * (s.v * f_center * f_angle + self.cfg.keep_alive)
    }
}

impl Environment for DrivingEnv {
    type State = DrivingState;

    fn action_count(&self) -> usize {
        DRIVING_ACTIONS
    }

    fn reset(&self, seed: u64) -> DrivingState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lane = rng.gen_range(0..2usize);
        let v = rng.gen_range(self.cfg.v0_min..=self.cfg.v0_max);
        let mut others = Vec::with_capacity(self.cfg.other_cars);
        for _ in 0..self.cfg.other_cars {
            others.push(OtherCar {
                lane: rng.gen_range(0..2usize),
                x0: rng.gen_range(self.cfg.spawn_min..=self.cfg.spawn_max),
                speed: rng.gen_range(self.cfg.other_speed_min..=self.cfg.other_speed_max),
            });
        }
        DrivingState {
            x: 0.0,
            y: self.lane_center(lane),
            phi: 0.0,
            v,
            delta: 0.0,
            time: 0.0,
            others,
            done: false,
        }
    }

    fn simulate(
        &self,
        state: &DrivingState,
        action: usize,
    ) -> Result<Transition<DrivingState>, EnvError> {
        if action >= DRIVING_ACTIONS {
            return Err(EnvError::InvalidAction {
                action,
                count: DRIVING_ACTIONS,
            });
        }
        let steer_idx = action / ACCELS.len();
        let accel_idx = action % ACCELS.len();
        let cfg = &self.cfg;

        let mut next = state.clone();
        next.delta = self.steer_target(steer_idx);
        next.v = (state.v + ACCELS[accel_idx] * cfg.dt).clamp(0.0, cfg.v_max);
        next.phi = state.phi + next.v / cfg.wheelbase * next.delta.tan() * cfg.dt;
        next.x = state.x + next.v * next.phi.cos() * cfg.dt;
        next.y = state.y + next.v * next.phi.sin() * cfg.dt;
        next.time = state.time + cfg.dt;

        let off_road = next.y.abs() > self.road_half_width();
        next.done = state.done || off_road || self.collides(&next);
        let reward = self.reward(&next);
        let done = next.done;
        Ok(Transition {
            state: next,
            reward,
            done,
        })
    }

    fn sensors(&self, s: &DrivingState) -> Sensors {
        let cfg = &self.cfg;
        let mut img = Sensors::new(IMG, IMG);
        let background = (0.1 + 0.3 * s.v / cfg.v_max) as f32;
        let actor_intensity = (0.5 + 0.5 * s.v / cfg.v_max) as f32;
        let half_len = cfg.car_length / 2.0;
        let half_wid = cfg.car_width / 2.0;
        let road_half = self.road_half_width();
        let (sin_phi, cos_phi) = s.phi.sin_cos();

        let others: Vec<(f64, f64, f32)> = s
            .others
            .iter()
            .map(|car| {
                let rel = ((car.speed - s.v) / cfg.v_max).clamp(-1.0, 1.0);
                (
                    self.other_x(car, s.time),
                    self.lane_center(car.lane),
                    (0.5 + 0.25 * rel) as f32,
                )
            })
            .collect();

        for row in 0..IMG {
            let fwd = (CENTER - row as f64) * M_PER_PX;
            for col in 0..IMG {
                let left = (CENTER - col as f64) * M_PER_PX;
                // actor body is axis-aligned in its own frame
                if fwd.abs() <= half_len && left.abs() <= half_wid {
                    img.set(row, col, actor_intensity);
                    continue;
                }
                // world position of this pixel (view rotates with heading)
                let wx = s.x + fwd * cos_phi - left * sin_phi;
                let wy = s.y + fwd * sin_phi + left * cos_phi;

                let mut value = background;
                if let Some(&(_, _, intensity)) = others.iter().find(|&&(cx, cy, _)| {
                    (wx - cx).abs() <= half_len && (wy - cy).abs() <= half_wid
                }) {
                    value = intensity;
                } else if wy.abs() <= road_half {
                    value = 0.4;
                    let on_edge_line = (wy.abs() - road_half).abs() <= MARKING_HALF;
                    let on_center_dash =
                        wy.abs() <= MARKING_HALF && wx.rem_euclid(4.0) < 2.0;
                    if on_edge_line || on_center_dash {
                        value = 0.9;
                    }
                }
                img.set(row, col, value);
            }
        }

        // steering angle encoded in the vertical image edges
        let steer = (0.5 + 0.5 * s.delta / cfg.steer_max) as f32;
        for row in 0..IMG {
            for col in [0, 1, IMG - 2, IMG - 1] {
                img.set(row, col, steer);
            }
        }
        img
    }
}

/// Overlap test between an oriented rectangle and an axis-aligned one via
/// the separating axis theorem (4 candidate axes).
fn obb_vs_aabb(
    center_a: (f64, f64),
    half_a: (f64, f64),
    angle_a: f64,
    center_b: (f64, f64),
    half_b: (f64, f64),
) -> bool {
    let (sin, cos) = angle_a.sin_cos();
    let axes = [(cos, sin), (-sin, cos), (1.0, 0.0), (0.0, 1.0)];
    let corners_a = rect_corners(center_a, half_a, sin, cos);
    let corners_b = rect_corners(center_b, half_b, 0.0, 1.0);
    for (ax, ay) in axes {
        let (min_a, max_a) = project(&corners_a, ax, ay);
        let (min_b, max_b) = project(&corners_b, ax, ay);
        if max_a < min_b || max_b < min_a {
            return false;
        }
    }
    true
}

fn rect_corners(center: (f64, f64), half: (f64, f64), sin: f64, cos: f64) -> [(f64, f64); 4] {
    let mut out = [(0.0, 0.0); 4];
    for (i, (sx, sy)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)]
        .iter()
        .enumerate()
    {
        let lx = sx * half.0;
        let ly = sy * half.1;
        out[i] = (
            center.0 + lx * cos - ly * sin,
            center.1 + lx * sin + ly * cos,
        );
    }
    out
}

fn project(corners: &[(f64, f64); 4], ax: f64, ay: f64) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &(x, y) in corners {
        let d = x * ax + y * ay;
        min = min.min(d);
        max = max.max(d);
    }
    (min, max)
}
