//! Pole-cart dynamics, a 32x32 grayscale renderer and scripted controllers.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_from, Rng};

pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;
pub const PIXELS: usize = HEIGHT * WIDTH;

/// |pole_angle| above this ends an episode.
pub const ACTIVITY_ANGLE: f64 = 48.0 * PI / 180.0;
/// |pole_angle| at or below this is safe.
pub const SAFE_ANGLE: f64 = 6.0 * PI / 180.0;

// Renderer geometry. The cart occupies rows CART_TOP..CART_TOP+CART_HEIGHT and
// the pole the POLE_ROWS rows directly above it.
pub const CART_TOP: usize = 27;
pub const CART_HEIGHT: usize = 4;
pub const CART_WIDTH: usize = 6;
pub const POLE_ROWS: usize = 20;
pub const POLE_WIDTH: usize = 2;
const CART_LEFT_CENTERED: i64 = 13;
const PX_PER_METER: f64 = 4.0;
const MAX_CART_SHIFT: i64 = 10;
/// Tip offset (pixels) of the largest safe lean. The horizontal scale is
/// chosen so that a lean of exactly `SAFE_ANGLE` maps to `SAFE_TIP_OFFSET + 0.5`.
pub const SAFE_TIP_OFFSET: i64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length, in meters.
    pub half_length: f64,
    pub force_mag: f64,
    pub dt: f64,
    /// Episodes also end when |cart_pos| exceeds this.
    pub track_limit: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force_mag: 10.0,
            dt: 0.02,
            track_limit: 2.4,
        }
    }
}

impl SimConfig {
    /// Overrides defaults from `key=value` pairs; unknown keys are rejected.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = SimConfig::default();
        for (key, value) in pairs {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one constant by name. Does not validate.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v: f64 = value
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{key}={value}: not a number")))?;
        match key {
            "gravity" => self.gravity = v,
            "cart_mass" => self.cart_mass = v,
            "pole_mass" => self.pole_mass = v,
            "half_length" => self.half_length = v,
            "force_mag" => self.force_mag = v,
            "dt" => self.dt = v,
            "track_limit" => self.track_limit = v,
            _ => return Err(Error::InvalidParameter(format!("unknown sim key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.gravity,
            self.cart_mass,
            self.pole_mass,
            self.half_length,
            self.force_mag,
            self.dt,
            self.track_limit,
        ];
        if all.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::InvalidParameter(
                "sim constants must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub cart_pos: f64,
    pub cart_vel: f64,
    pub pole_angle: f64,
    pub pole_angvel: f64,
}

impl SystemState {
    pub const UPRIGHT: SystemState = SystemState {
        cart_pos: 0.0,
        cart_vel: 0.0,
        pole_angle: 0.0,
        pole_angvel: 0.0,
    };

    pub fn new(cart_pos: f64, cart_vel: f64, pole_angle: f64, pole_angvel: f64) -> Self {
        SystemState {
            cart_pos,
            cart_vel,
            pole_angle,
            pole_angvel,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.cart_pos, self.cart_vel, self.pole_angle, self.pole_angvel]
    }

    pub fn within_activity(&self, cfg: &SimConfig) -> bool {
        self.pole_angle.abs() <= ACTIVITY_ANGLE && self.cart_pos.abs() <= cfg.track_limit
    }
}

/// Discrete push direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Left,
    Right,
}

impl Action {
    pub fn sign(self) -> f64 {
        match self {
            Action::Left => -1.0,
            Action::Right => 1.0,
        }
    }

    pub fn from_sign(s: f64) -> Self {
        if s >= 0.0 {
            Action::Right
        } else {
            Action::Left
        }
    }
}

/// Explicit-Euler step of the classic pole-cart equations under `action`.
pub fn step_dynamics(state: &SystemState, action: Action, cfg: &SimConfig) -> Result<SystemState> {
    step_with_force(state, action.sign() * cfg.force_mag, cfg)
}

/// Same integration with an arbitrary horizontal force.
pub fn step_with_force(state: &SystemState, force: f64, cfg: &SimConfig) -> Result<SystemState> {
    let total_mass = cfg.cart_mass + cfg.pole_mass;
    let polemass_length = cfg.pole_mass * cfg.half_length;
    let (sin, cos) = state.pole_angle.sin_cos();

    let temp = (force + polemass_length * state.pole_angvel * state.pole_angvel * sin) / total_mass;
    let angle_acc = (cfg.gravity * sin - cos * temp)
        / (cfg.half_length * (4.0 / 3.0 - cfg.pole_mass * cos * cos / total_mass));
    let cart_acc = temp - polemass_length * angle_acc * cos / total_mass;

    let next = SystemState {
        cart_pos: state.cart_pos + cfg.dt * state.cart_vel,
        cart_vel: state.cart_vel + cfg.dt * cart_acc,
        pole_angle: state.pole_angle + cfg.dt * state.pole_angvel,
        pole_angvel: state.pole_angvel + cfg.dt * angle_acc,
    };
    if !next.is_finite() {
        return Err(Error::IntegrationBlowup { dt: cfg.dt });
    }
    Ok(next)
}

/// 1 iff |pole_angle| <= 6 degrees (closed interval).
pub fn safety_of_state(state: &SystemState) -> u8 {
    u8::from(state.pole_angle.abs() <= SAFE_ANGLE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pixels: Vec<f32>,
}

impl Observation {
    pub fn from_pixels(pixels: Vec<f32>) -> Result<Self> {
        if pixels.len() != PIXELS {
            return Err(Error::DimensionMismatch {
                expected: PIXELS,
                got: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("pixel outside [0, 1]".into()));
        }
        Ok(Observation { pixels })
    }

    pub fn blank() -> Self {
        Observation {
            pixels: vec![1.0; PIXELS],
        }
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * WIDTH + col]
    }

    fn set(&mut self, row: usize, col: i64, value: f32) {
        if (0..WIDTH as i64).contains(&col) {
            self.pixels[row * WIDTH + col as usize] = value;
        }
    }

    pub fn inverted(&self) -> Self {
        Observation {
            pixels: self.pixels.iter().map(|p| 1.0 - p).collect(),
        }
    }

    /// Pixels as `f64` darkness (`1 - intensity`), the network input encoding.
    pub fn darkness_into(&self, out: &mut Vec<f64>) {
        out.extend(self.pixels.iter().map(|&p| 1.0 - f64::from(p)));
    }
}

fn round_half_away(x: f64) -> i64 {
    x.signum() as i64 * (x.abs() + 0.5).floor() as i64
}

/// Horizontal pixel shift of the cart relative to the centred position.
pub fn cart_shift(cart_pos: f64) -> i64 {
    round_half_away(cart_pos * PX_PER_METER).clamp(-MAX_CART_SHIFT, MAX_CART_SHIFT)
}

/// Quantized horizontal offset of the pole tip. Leans up to and including
/// `SAFE_ANGLE` give at most `SAFE_TIP_OFFSET`.
pub fn pole_tip_offset(pole_angle: f64) -> i64 {
    let t = (SAFE_TIP_OFFSET as f64 + 0.5) * (pole_angle.abs().tan() / SAFE_ANGLE.tan());
    let magnitude = (t - 0.5).ceil().max(0.0) as i64;
    if pole_angle < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// Offset of the pole in its `r`-th row above the cart (1-based), a digital
/// segment from the pivot to the quantized tip.
pub fn pole_row_offset(tip: i64, r: usize) -> i64 {
    let r = r as i64;
    let rows = POLE_ROWS as i64;
    let magnitude = (2 * r * tip.abs() + rows) / (2 * rows);
    tip.signum() * magnitude
}

/// Renders the state: white background, black cart rectangle, black pole.
pub fn render_observation(state: &SystemState) -> Observation {
    let mut obs = Observation::blank();
    let left = CART_LEFT_CENTERED + cart_shift(state.cart_pos);
    for row in CART_TOP..CART_TOP + CART_HEIGHT {
        for c in 0..CART_WIDTH as i64 {
            obs.set(row, left + c, 0.0);
        }
    }
    let base = left + (CART_WIDTH - POLE_WIDTH) as i64 / 2;
    let tip = pole_tip_offset(state.pole_angle);
    for r in 1..=POLE_ROWS {
        let row = CART_TOP - r;
        let off = pole_row_offset(tip, r);
        for w in 0..POLE_WIDTH as i64 {
            obs.set(row, base + off + w, 0.0);
        }
    }
    obs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    /// Push toward the side the pole is falling: sign(theta + g0 * theta_dot).
    BangBang,
    /// sign(gains . state).
    LinearFeedback,
    /// Linear feedback; intended to be used with a nonzero `noise_prob`.
    NoisyFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub gains: Vec<f64>,
    /// Probability of replacing the scripted action with a uniform random one.
    pub noise_prob: f64,
    pub id: u32,
}

impl ControllerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.noise_prob) {
            return Err(Error::InvalidParameter(format!(
                "noise_prob {} outside [0, 1]",
                self.noise_prob
            )));
        }
        let needed = match self.kind {
            ControllerKind::BangBang => 1,
            ControllerKind::LinearFeedback | ControllerKind::NoisyFeedback => 4,
        };
        if self.gains.len() != needed {
            return Err(Error::InvalidParameter(format!(
                "controller {} needs {needed} gains, got {}",
                self.id,
                self.gains.len()
            )));
        }
        Ok(())
    }

    pub fn act(&self, state: &SystemState, rng: &mut Rng) -> Action {
        if self.noise_prob > 0.0 && rng.gen_bool(self.noise_prob) {
            return if rng.gen_bool(0.5) {
                Action::Right
            } else {
                Action::Left
            };
        }
        let drive = match self.kind {
            ControllerKind::BangBang => state.pole_angle + self.gains[0] * state.pole_angvel,
            ControllerKind::LinearFeedback | ControllerKind::NoisyFeedback => self
                .gains
                .iter()
                .zip(state.as_array())
                .map(|(g, s)| g * s)
                .sum(),
        };
        Action::from_sign(drive)
    }

    /// The three controller tiers used by default: a well-tuned full-state
    /// feedback, a noisy one, and a crude bang-bang pusher.
    pub fn default_set() -> Vec<ControllerSpec> {
        vec![
            ControllerSpec {
                kind: ControllerKind::NoisyFeedback,
                gains: vec![0.05, 0.2, 1.0, 0.15],
                noise_prob: 0.3,
                id: 0,
            },
            ControllerSpec {
                kind: ControllerKind::LinearFeedback,
                gains: vec![0.1, 0.3, 1.0, 0.25],
                noise_prob: 0.35,
                id: 1,
            },
            ControllerSpec {
                kind: ControllerKind::BangBang,
                gains: vec![0.0],
                noise_prob: 0.2,
                id: 2,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: SystemState,
    pub observation: Arc<Observation>,
    pub action: Action,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u64,
    pub controller_id: u32,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Uniform perturbation of the upright state, each component in +-0.05.
pub fn sample_initial_state(rng: &mut Rng) -> SystemState {
    let mut draw = || rng.gen_range(-0.05..=0.05);
    SystemState::new(draw(), draw(), draw(), draw())
}

/// Rolls the closed loop from `init` until `max_len` steps are recorded or the
/// state leaves the activity region. The exiting state is not recorded.
pub fn run_episode(
    controller: &ControllerSpec,
    init: SystemState,
    max_len: usize,
    seed: u64,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    controller.validate()?;
    if !init.is_finite() || !init.within_activity(cfg) {
        return Err(Error::OutsideActivityBound(format!("{init:?}")));
    }
    let mut rng = rng_from(seed);
    let mut steps = Vec::with_capacity(max_len);
    let mut state = init;
    while steps.len() < max_len {
        let observation = Arc::new(render_observation(&state));
        let action = controller.act(&state, &mut rng);
        steps.push(Step {
            state,
            observation,
            action,
            label: safety_of_state(&state),
        });
        let next = step_dynamics(&state, action, cfg)?;
        if !next.within_activity(cfg) {
            break;
        }
        state = next;
    }
    Ok(Trajectory {
        id: seed,
        controller_id: controller.id,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn deg(d: f64) -> f64 {
        d * PI / 180.0
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        for dt in [0.001, 0.02, 0.5] {
            let cfg = SimConfig {
                dt,
                ..SimConfig::default()
            };
            let next = step_with_force(&SystemState::UPRIGHT, 0.0, &cfg).unwrap();
            assert_eq!(next, SystemState::UPRIGHT);
        }
    }

    #[test]
    fn one_step_matches_hand_integration() {
        // Equations of motion for a point-inertia pole about its pivot, solved
        // as a 2x2 linear system rather than through the closed form.
        let cfg = SimConfig::default();
        let (mc, mp, l, g) = (cfg.cart_mass, cfg.pole_mass, cfg.half_length, cfg.gravity);
        let (theta, omega, force) = (0.0f64, 0.0f64, 10.0f64);
        // [mc+mp, mp l cos][xdd]   = [F + mp l w^2 sin]
        // [cos,   4l/3    ][thdd]  = [g sin]
        let a = [[mc + mp, mp * l * theta.cos()], [theta.cos(), 4.0 * l / 3.0]];
        let b = [force + mp * l * omega * omega * theta.sin(), g * theta.sin()];
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let xdd = (b[0] * a[1][1] - a[0][1] * b[1]) / det;
        let thdd = (a[0][0] * b[1] - a[1][0] * b[0]) / det;
        let expect = SystemState::new(0.0, 0.02 * xdd, 0.0, 0.02 * thdd);

        let got = step_with_force(&SystemState::UPRIGHT, force, &cfg).unwrap();
        for (g, e) in got.as_array().iter().zip(expect.as_array()) {
            assert!((g - e).abs() < 1e-12, "{got:?} vs {expect:?}");
        }
        // Pushing right tips the pole left.
        assert!(got.pole_angvel < 0.0 && got.cart_vel > 0.0);
        assert!((got.cart_vel - 0.195_121_951).abs() < 1e-6);
        assert!((got.pole_angvel + 0.292_682_927).abs() < 1e-6);
    }

    #[test]
    fn gravity_pulls_pole_further_over() {
        let s = SystemState::new(0.0, 0.0, 0.05, 0.0);
        let next = step_with_force(&s, 0.0, &SimConfig::default()).unwrap();
        assert!(next.pole_angvel > 0.0);
    }

    #[test]
    fn huge_dt_blows_up() {
        let cfg = SimConfig {
            dt: 1e300,
            ..SimConfig::default()
        };
        let s = SystemState::new(0.0, 1.0, 0.3, 1.0);
        let r = step_with_force(&s, 10.0, &cfg).and_then(|s| step_with_force(&s, 10.0, &cfg));
        assert!(matches!(r, Err(Error::IntegrationBlowup { .. })));
    }

    #[test]
    fn step_is_deterministic() {
        let cfg = SimConfig::default();
        let s = SystemState::new(0.3, -0.2, 0.1, 0.4);
        let a = step_dynamics(&s, Action::Left, &cfg).unwrap();
        let b = step_dynamics(&s, Action::Left, &cfg).unwrap();
        assert_eq!(a.as_array().map(f64::to_bits), b.as_array().map(f64::to_bits));
    }

    #[test]
    fn safety_boundary() {
        assert_eq!(safety_of_state(&SystemState::UPRIGHT), 1);
        assert_eq!(safety_of_state(&SystemState::new(0.0, 0.0, deg(10.0), 0.0)), 0);
        assert_eq!(safety_of_state(&SystemState::new(0.0, 0.0, SAFE_ANGLE, 0.0)), 1);
        assert_eq!(safety_of_state(&SystemState::new(0.0, 0.0, -SAFE_ANGLE, 0.0)), 1);
        // Exhaustive sweep over a fine grid.
        for i in -4800..=4800 {
            let theta = deg(i as f64 / 100.0);
            let expect = u8::from(theta.abs() <= 6.0 * PI / 180.0);
            assert_eq!(safety_of_state(&SystemState::new(0.0, 0.0, theta, 0.0)), expect);
        }
    }

    #[test]
    fn upright_centred_render_is_mirror_symmetric() {
        let obs = render_observation(&SystemState::UPRIGHT);
        for r in 0..HEIGHT {
            for c in 0..WIDTH / 2 {
                assert_eq!(obs.get(r, c), obs.get(r, WIDTH - 1 - c), "row {r} col {c}");
            }
        }
    }

    #[test]
    fn opposite_leans_render_mirrored() {
        for d in [1.0, 5.0, 6.0, 7.5, 20.0, 47.0] {
            let a = render_observation(&SystemState::new(0.0, 0.0, deg(d), 0.0));
            let b = render_observation(&SystemState::new(0.0, 0.0, -deg(d), 0.0));
            for r in 0..HEIGHT {
                for c in 0..WIDTH {
                    assert_eq!(a.get(r, c), b.get(r, WIDTH - 1 - c));
                }
            }
        }
    }

    #[test]
    fn golden_render_at_0_1_rad() {
        // 0.1 rad = 5.73 deg: safe lean, tip offset 1, pole rows 1..9 upright,
        // rows 10..20 shifted one column right.
        let obs = render_observation(&SystemState::new(0.0, 0.0, 0.1, 0.0));
        let dark: Vec<String> = (0..HEIGHT)
            .map(|r| {
                (0..WIDTH)
                    .map(|c| if obs.get(r, c) == 0.0 { '#' } else { '.' })
                    .collect()
            })
            .collect();
        let golden = include_str!("../tests/data/render_theta_0.1.txt");
        let golden: Vec<&str> = golden.lines().collect();
        assert_eq!(dark, golden);
    }

    #[test]
    fn tip_offset_boundary_is_closed() {
        assert_eq!(pole_tip_offset(SAFE_ANGLE), SAFE_TIP_OFFSET);
        assert_eq!(pole_tip_offset(-SAFE_ANGLE), -SAFE_TIP_OFFSET);
        assert_eq!(pole_tip_offset(SAFE_ANGLE + 1e-9), SAFE_TIP_OFFSET + 1);
        assert_eq!(pole_tip_offset(0.0), 0);
    }

    #[test]
    fn pole_pixel_count_tracks_length() {
        for i in -480..=480 {
            let theta = deg(i as f64 / 10.0);
            let obs = render_observation(&SystemState::new(0.0, 0.0, theta, 0.0));
            let dark = (CART_TOP - POLE_ROWS..CART_TOP)
                .flat_map(|r| (0..WIDTH).map(move |c| (r, c)))
                .filter(|&(r, c)| obs.get(r, c) == 0.0)
                .count() as f64;
            // A 2-pixel-wide digital segment covers max(|dx|, |dy|) pixels per strand.
            let tip = pole_tip_offset(theta).unsigned_abs() as usize;
            let expected = (POLE_WIDTH * POLE_ROWS.max(tip)) as f64;
            assert!(
                (dark - expected).abs() <= 0.2 * expected,
                "theta {theta}: {dark} vs {expected}"
            );
        }
    }

    #[test]
    fn stabilizing_controller_stays_safe() {
        let c = ControllerSpec {
            kind: ControllerKind::LinearFeedback,
            gains: vec![0.1, 0.3, 1.0, 0.25],
            noise_prob: 0.0,
            id: 9,
        };
        let cfg = SimConfig::default();
        let traj = run_episode(&c, SystemState::UPRIGHT, 500, 1, &cfg).unwrap();
        assert_eq!(traj.len(), 500);
        assert!(traj.steps.iter().all(|s| s.label == 1));
    }

    #[test]
    fn random_pushing_eventually_unsafe() {
        let c = ControllerSpec {
            kind: ControllerKind::BangBang,
            gains: vec![0.0],
            noise_prob: 1.0,
            id: 3,
        };
        let cfg = SimConfig::default();
        let traj = run_episode(&c, SystemState::UPRIGHT, 2000, 5, &cfg).unwrap();
        assert!(traj.steps.iter().any(|s| s.label == 0));
    }

    #[test]
    fn episodes_are_reproducible() {
        let c = &ControllerSpec::default_set()[0];
        let cfg = SimConfig::default();
        let init = SystemState::new(0.01, 0.0, -0.02, 0.03);
        let a = run_episode(c, init, 300, 42, &cfg).unwrap();
        let b = run_episode(c, init, 300, 42, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn retained_states_respect_activity_bound() {
        let c = &ControllerSpec::default_set()[2];
        let cfg = SimConfig::default();
        for seed in 0..20 {
            let mut rng = rng_from(seed);
            let init = sample_initial_state(&mut rng);
            let traj = run_episode(c, init, 400, seed, &cfg).unwrap();
            for s in &traj.steps {
                assert!(s.state.pole_angle.abs() <= ACTIVITY_ANGLE);
                assert_eq!(s.label, safety_of_state(&s.state));
            }
        }
    }

    #[test]
    fn rejects_init_outside_activity() {
        let c = &ControllerSpec::default_set()[0];
        let init = SystemState::new(0.0, 0.0, 1.0, 0.0);
        assert!(matches!(
            run_episode(c, init, 10, 0, &SimConfig::default()),
            Err(Error::OutsideActivityBound(_))
        ));
    }

    #[test]
    fn sim_config_from_pairs() {
        let mut pairs = BTreeMap::new();
        pairs.insert("dt".to_string(), "0.01".to_string());
        let cfg = SimConfig::from_pairs(&pairs).unwrap();
        assert_eq!(cfg.dt, 0.01);
        pairs.insert("bogus".to_string(), "1".to_string());
        assert!(SimConfig::from_pairs(&pairs).is_err());
    }
}
