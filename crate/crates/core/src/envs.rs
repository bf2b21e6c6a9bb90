//! Deterministic toy 2D manipulation environments.
//!
//! Three pick-and-place tasks on the unit square share one set of dynamics:
//! the end effector moves by a clipped velocity command scaled by an action
//! gain, the gripper latches an object within the grasp radius, and success
//! means the object sits within tolerance of the goal with the gripper open
//! for five consecutive steps. On top of that sit the injectable
//! pathologies: per-reset dynamics drift, irreversible resets, noisy success
//! detection, and out-of-distribution initial regions.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Action, EnvParams, StageFlags, FRAME_DIM};

pub const WORKSPACE_MIN: f64 = 0.0;
pub const WORKSPACE_MAX: f64 = 1.0;
pub const HOME_EE: [f64; 2] = [0.5, 0.9];
pub const GRASP_RADIUS: f64 = 0.05;
pub const OPEN_STEPS_FOR_SUCCESS: u32 = 5;
/// Displacement (from the initial object position) at which the "moved"
/// stage latches.
pub const MOVED_THRESHOLD: f64 = 0.1;
/// Stage names in achievement order; later stages imply earlier ones.
pub const STAGES: [&str; 3] = ["grasped", "moved", "placed"];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("step called on a stuck state")]
    SteppedStuckState,
    #[error("step called past the horizon ({0} steps)")]
    HorizonExhausted(u32),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Hang2d,
    Peg2d,
    Bottleneck2d,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Hang2d => "hang2d",
            Task::Peg2d => "peg2d",
            Task::Bottleneck2d => "bottleneck2d",
        }
    }
}

/// Axis-aligned rectangle in object-position space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Self {
        Rect { min, max }
    }

    pub fn area(&self) -> f64 {
        (self.max[0] - self.min[0]).max(0.0) * (self.max[1] - self.min[1]).max(0.0)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    /// Rectangle scaled about its center.
    pub fn scaled(&self, s: f64) -> Rect {
        let c = self.center();
        let hx = 0.5 * (self.max[0] - self.min[0]) * s;
        let hy = 0.5 * (self.max[1] - self.min[1]) * s;
        Rect {
            min: [c[0] - hx, c[1] - hy],
            max: [c[0] + hx, c[1] + hy],
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let x = rng.gen_range(self.min[0]..=self.max[0]);
        let y = rng.gen_range(self.min[1]..=self.max[1]);
        [x, y]
    }
}

/// Where initial object positions are drawn from: the nominal rectangle, or
/// the ring between it and a scaled copy (the OOD position variant).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRegion {
    Rect(Rect),
    Ring { inner: Rect, outer: Rect },
}

impl InitRegion {
    pub fn area(&self) -> f64 {
        match self {
            InitRegion::Rect(r) => r.area(),
            InitRegion::Ring { inner, outer } => outer.area() - inner.area(),
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self {
            InitRegion::Rect(r) => r.contains(p),
            InitRegion::Ring { inner, outer } => outer.contains(p) && !inner.contains(p),
        }
    }

    pub fn bounding(&self) -> Rect {
        match self {
            InitRegion::Rect(r) => *r,
            InitRegion::Ring { outer, .. } => *outer,
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        match self {
            InitRegion::Rect(r) => r.sample(rng),
            InitRegion::Ring { inner, outer } => loop {
                let p = outer.sample(rng);
                if !inner.contains(p) {
                    return p;
                }
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftRecovery {
    None,
    RestResetsToZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftedParam {
    GoalOffset,
    ActionGain,
}

/// Slow per-reset change to a dynamics parameter. `drift_accum` after k
/// resets since the last rest is exactly `k * per_episode_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub per_episode_delta: f64,
    pub recovery: DriftRecovery,
    pub drifted_param: DriftedParam,
}

impl Default for DriftSpec {
    fn default() -> Self {
        DriftSpec {
            per_episode_delta: 0.0,
            recovery: DriftRecovery::None,
            drifted_param: DriftedParam::ActionGain,
        }
    }
}

/// Out-of-distribution collection variants: either an expanded initial
/// boundary (positions drawn from the ring between the nominal region and
/// the scaled one) or an altered object whose dynamics differ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodSpec {
    InitRegionScale(f64),
    ObjectVariant { action_gain_scale: f64 },
}

/// False-positive / false-negative rates of the success detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct DetectorConfig {
    pub fp_rate: f64,
    pub fn_rate: f64,
}

impl DetectorConfig {
    pub fn perfect() -> Self {
        DetectorConfig { fp_rate: 0.0, fn_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for (name, v) in [("fp_rate", self.fp_rate), ("fn_rate", self.fn_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(EnvError::InvalidConfig(format!("{name}={v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub task: Task,
    pub init_region: InitRegion,
    pub goal: [f64; 2],
    pub success_tolerance: f64,
    /// Half-open slot in the wall (bottleneck2d only).
    pub bottleneck_width: f64,
    pub max_horizon: u32,
    pub p_irreversible: f64,
    pub drift: DriftSpec,
    pub ood: Option<OodSpec>,
}

impl EnvConfig {
    pub fn preset(task: Task) -> Self {
        let init_region = InitRegion::Rect(Rect::new([0.15, 0.10], [0.85, 0.40]));
        let goal = match task {
            Task::Hang2d => [0.75, 0.75],
            Task::Peg2d => [0.70, 0.70],
            Task::Bottleneck2d => [0.50, 0.85],
        };
        EnvConfig {
            task,
            init_region,
            goal,
            success_tolerance: 0.03,
            bottleneck_width: 0.10,
            max_horizon: 120,
            p_irreversible: 0.0,
            drift: DriftSpec::default(),
            ood: None,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.success_tolerance <= 0.0 {
            return Err(EnvError::InvalidConfig("success_tolerance must be > 0".into()));
        }
        if self.init_region.area() <= 0.0 {
            return Err(EnvError::InvalidConfig("init_region is empty".into()));
        }
        if self.init_region.contains(self.goal) {
            return Err(EnvError::InvalidConfig("goal lies inside init_region".into()));
        }
        if !(0.0..=1.0).contains(&self.p_irreversible) {
            return Err(EnvError::InvalidConfig("p_irreversible outside [0,1]".into()));
        }
        if self.drift.per_episode_delta < 0.0 {
            return Err(EnvError::InvalidConfig("per_episode_delta must be >= 0".into()));
        }
        if self.task == Task::Bottleneck2d && self.bottleneck_width <= 0.0 {
            return Err(EnvError::InvalidConfig("bottleneck_width must be > 0".into()));
        }
        Ok(())
    }

    /// Wall height for the bottleneck task; the carried object can only
    /// cross this line through the slot centered on the goal's x.
    pub fn wall_y(&self) -> f64 {
        self.goal[1] - 0.13
    }

    /// Reference point below the goal fixture, used to classify which side
    /// a carried path went around.
    pub fn fixture(&self) -> [f64; 2] {
        [self.goal[0], self.goal[1] - 0.10]
    }

    /// Goal position after applying goal-offset drift.
    pub fn effective_goal(&self, drift_accum: f64) -> [f64; 2] {
        match self.drift.drifted_param {
            DriftedParam::GoalOffset => [self.goal[0] + drift_accum, self.goal[1]],
            DriftedParam::ActionGain => self.goal,
        }
    }

    /// Velocity multiplier after drift and any OOD object variant.
    pub fn action_gain(&self, drift_accum: f64) -> f64 {
        let base = match self.drift.drifted_param {
            DriftedParam::ActionGain => (1.0 - drift_accum).max(0.0),
            DriftedParam::GoalOffset => 1.0,
        };
        match self.ood {
            Some(OodSpec::ObjectVariant { action_gain_scale }) => base * action_gain_scale,
            _ => base,
        }
    }
}

/// Returns a config whose initial positions come from the ring between the
/// nominal boundary and the scaled one, or whose object dynamics are
/// altered. The input config is unchanged.
pub fn with_ood(cfg: &EnvConfig, spec: OodSpec) -> Result<EnvConfig, EnvError> {
    let mut out = *cfg;
    match spec {
        OodSpec::InitRegionScale(s) => {
            if s <= 1.0 {
                return Err(EnvError::InvalidConfig(format!(
                    "init_region_scale must be > 1 (got {s}); the ring would be empty"
                )));
            }
            let inner = match cfg.init_region {
                InitRegion::Rect(r) => r,
                InitRegion::Ring { .. } => {
                    return Err(EnvError::InvalidConfig(
                        "init_region is already a ring".into(),
                    ))
                }
            };
            out.init_region = InitRegion::Ring { inner, outer: inner.scaled(s) };
            out.ood = Some(spec);
        }
        OodSpec::ObjectVariant { action_gain_scale } => {
            if action_gain_scale <= 0.0 {
                return Err(EnvError::InvalidConfig(
                    "action_gain_scale must be > 0".into(),
                ));
            }
            out.ood = Some(spec);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetOutcome {
    Ok,
    Stuck,
}

/// Full simulator state. Besides the physical pose it carries the latched
/// stage trackers and the open-gripper streak that the success rule needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee_pos: [f64; 2],
    /// Gripper openness in [0,1]; >= 0.5 counts as open.
    pub gripper: f64,
    pub obj_pos: [f64; 2],
    pub carried: bool,
    pub steps_elapsed: u32,
    pub drift_accum: f64,
    pub stuck: bool,
    pub init_obj_pos: [f64; 2],
    pub open_streak: u32,
    pub ever_carried: bool,
    pub ever_moved: bool,
}

impl SimState {
    /// Fresh state with the object at `obj_pos` and the arm at home.
    pub fn initial(obj_pos: [f64; 2], drift_accum: f64) -> Self {
        SimState {
            ee_pos: HOME_EE,
            gripper: 1.0,
            obj_pos,
            carried: false,
            steps_elapsed: 0,
            drift_accum,
            stuck: false,
            init_obj_pos: obj_pos,
            open_streak: 0,
            ever_carried: false,
            ever_moved: false,
        }
    }

    pub fn is_open(&self) -> bool {
        self.gripper >= 0.5
    }

    /// Flat snapshot stored in episode records.
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.ee_pos[0],
            self.ee_pos[1],
            self.gripper,
            self.obj_pos[0],
            self.obj_pos[1],
            if self.carried { 1.0 } else { 0.0 },
            self.drift_accum,
            if self.stuck { 1.0 } else { 0.0 },
        ]
    }

    /// Observation frame exposed to policies. Drift is deliberately absent:
    /// non-stationarity is unobserved.
    pub fn features(&self, cfg: &EnvConfig) -> Vec<f64> {
        vec![
            self.ee_pos[0],
            self.ee_pos[1],
            self.gripper,
            self.obj_pos[0],
            self.obj_pos[1],
            if self.carried { 1.0 } else { 0.0 },
            cfg.goal[0] - self.ee_pos[0],
            cfg.goal[1] - self.ee_pos[1],
        ]
    }

    pub fn env_params(&self, cfg: &EnvConfig) -> EnvParams {
        let mut p = EnvParams::new();
        p.insert("drift_accum".into(), self.drift_accum);
        p.insert("action_gain".into(), cfg.action_gain(self.drift_accum));
        p.insert(
            "ood".into(),
            match cfg.ood {
                None => 0.0,
                Some(OodSpec::InitRegionScale(_)) => 1.0,
                Some(OodSpec::ObjectVariant { .. }) => 2.0,
            },
        );
        p
    }
}

const _: () = assert!(FRAME_DIM == 8);

/// Samples a fresh initial state. With probability `p_irreversible` the
/// reset jams instead; the caller must discard the episode and charge a
/// human intervention to the effort ledger.
pub fn reset(
    cfg: &EnvConfig,
    episodes_since_rest: u32,
    rng: &mut ChaCha8Rng,
) -> (SimState, ResetOutcome) {
    let jammed = cfg.p_irreversible > 0.0 && rng.gen::<f64>() < cfg.p_irreversible;
    let obj = cfg.init_region.sample(rng);
    let drift_accum = cfg.drift.per_episode_delta * f64::from(episodes_since_rest);
    let mut state = SimState::initial(obj, drift_accum);
    if jammed {
        state.stuck = true;
        (state, ResetOutcome::Stuck)
    } else {
        (state, ResetOutcome::Ok)
    }
}

fn clamp_workspace(p: [f64; 2]) -> [f64; 2] {
    [
        p[0].clamp(WORKSPACE_MIN, WORKSPACE_MAX),
        p[1].clamp(WORKSPACE_MIN, WORKSPACE_MAX),
    ]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Truncates a carried move at the bottleneck wall unless it passes through
/// the slot. Returns the admissible end point.
fn apply_wall(cfg: &EnvConfig, from: [f64; 2], to: [f64; 2]) -> [f64; 2] {
    if cfg.task != Task::Bottleneck2d {
        return to;
    }
    let wall = cfg.wall_y();
    let crosses = (from[1] - wall) * (to[1] - wall) < 0.0;
    if !crosses {
        return to;
    }
    let t = (wall - from[1]) / (to[1] - from[1]);
    let x_hit = from[0] + t * (to[0] - from[0]);
    let half = 0.5 * cfg.bottleneck_width;
    if (x_hit - cfg.goal[0]).abs() < half {
        return to;
    }
    // Stop just short of the wall, keeping the lateral component up to the
    // hit point.
    let eps = 1e-6;
    let stop_t = (t - eps).max(0.0);
    [
        from[0] + stop_t * (to[0] - from[0]),
        from[1] + stop_t * (to[1] - from[1]),
    ]
}

/// Advances the simulation one step.
pub fn step(state: &SimState, action: &Action, cfg: &EnvConfig) -> Result<SimState, EnvError> {
    if state.stuck {
        return Err(EnvError::SteppedStuckState);
    }
    if state.steps_elapsed >= cfg.max_horizon {
        return Err(EnvError::HorizonExhausted(cfg.max_horizon));
    }
    let v = action.values();
    let gain = cfg.action_gain(state.drift_accum);
    let vx = v.first().copied().unwrap_or(0.0).clamp(-1.0, 1.0) * gain;
    let vy = v.get(1).copied().unwrap_or(0.0).clamp(-1.0, 1.0) * gain;
    let grip_cmd = v.get(2).copied().unwrap_or(1.0).clamp(-1.0, 1.0);

    let mut next = state.clone();
    let proposed = clamp_workspace([state.ee_pos[0] + vx, state.ee_pos[1] + vy]);
    next.ee_pos = if state.carried {
        apply_wall(cfg, state.ee_pos, proposed)
    } else {
        proposed
    };
    next.gripper = 0.5 * (grip_cmd + 1.0);

    if next.carried {
        next.obj_pos = next.ee_pos;
    }
    let open = next.gripper >= 0.5;
    if next.carried && open {
        next.carried = false; // released; object stays where it is
    } else if !next.carried && !open && dist(next.ee_pos, next.obj_pos) <= GRASP_RADIUS {
        next.carried = true;
        next.obj_pos = next.ee_pos;
        next.ever_carried = true;
    }
    next.open_streak = if open { state.open_streak + 1 } else { 0 };
    if dist(next.obj_pos, state.init_obj_pos) >= MOVED_THRESHOLD {
        next.ever_moved = true;
    }
    next.steps_elapsed = state.steps_elapsed + 1;
    Ok(next)
}

/// Ground-truth success and latched stage flags.
pub fn oracle_success(state: &SimState, cfg: &EnvConfig) -> (bool, StageFlags) {
    let goal = cfg.effective_goal(state.drift_accum);
    let at_goal = dist(state.obj_pos, goal) <= cfg.success_tolerance;
    let placed = at_goal && !state.carried && state.is_open();
    let success = placed && state.open_streak >= OPEN_STEPS_FOR_SUCCESS;
    let mut flags = StageFlags::new();
    flags.insert("grasped".into(), state.ever_carried || state.carried);
    flags.insert("moved".into(), state.ever_moved);
    flags.insert("placed".into(), placed);
    (success, flags)
}

/// Noisy success detector: flips the oracle verdict with the configured
/// false-negative (when true) or false-positive (when false) rate.
pub fn detect(success: bool, det: &DetectorConfig, rng: &mut ChaCha8Rng) -> bool {
    let flip_rate = if success { det.fn_rate } else { det.fp_rate };
    let flip = flip_rate > 0.0 && rng.gen::<f64>() < flip_rate;
    success != flip
}
