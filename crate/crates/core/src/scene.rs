//! Parametric room scenes: geometry, validation, the scene randomizer, and
//! the plain-text scene file format consumed by the `simulate` command.

use crate::geom::{Aabb, Vec3};
use crate::MIC_BASELINE;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("room dimensions must be positive and finite")]
    BadRoomSize,
    #[error("absorption coefficient {0} outside [0, 1]")]
    BadAbsorption(f64),
    #[error("obstacle {0} extends outside the room")]
    ObstacleOutsideRoom(usize),
    #[error("obstacle {0} has non-positive half extents")]
    BadObstacleExtent(usize),
    #[error("{0} is not inside the room")]
    PointOutsideRoom(&'static str),
    #[error("{0} is inside obstacle {1}")]
    PointInsideObstacle(&'static str, usize),
    #[error("camera axes must be finite unit vectors, got degenerate frame")]
    BadCameraFrame,
    #[error("receiver baseline must be positive")]
    BadBaseline,
    #[error("scene file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// An axis-aligned box obstacle with its own absorption coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub center: Vec3,
    pub half_extent: Vec3,
    pub absorption: f64,
}

impl Obstacle {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_half(self.center, self.half_extent)
    }
}

/// Camera placement: position plus orthonormal forward/up directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub forward: Vec3,
    pub up: Vec3,
}

impl CameraPose {
    /// Right-hand axis of the camera frame (`forward × up`).
    pub fn right(&self) -> Vec3 {
        self.forward.cross(self.up).normalized()
    }

    /// Up axis re-orthogonalized against forward and right.
    pub fn true_up(&self) -> Vec3 {
        self.right().cross(self.forward).normalized()
    }
}

/// A rectangular room with box obstacles and a co-mounted emitter/receiver/
/// camera rig.
///
/// The room occupies `[0, room_size.x] × [0, room_size.y] × [0, room_size.z]`.
/// The two receivers sit `receiver_baseline / 2` either side of the emitter
/// along the camera's right axis, mirroring a two-eared rig.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomScene {
    pub room_size: Vec3,
    pub obstacles: Vec<Obstacle>,
    /// Absorption coefficient shared by all six walls, in [0, 1].
    pub wall_absorption: f64,
    pub emitter_pose: Vec3,
    /// Ear-to-ear spacing in meters.
    pub receiver_baseline: f64,
    pub camera_pose: CameraPose,
    pub rng_seed: u64,
}

/// Which ear a path arrives at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReceiverId {
    Left,
    Right,
}

impl RoomScene {
    pub fn room_aabb(&self) -> Aabb {
        Aabb::new(Vec3::ZERO, self.room_size)
    }

    /// Positions of the left and right receivers.
    pub fn receiver_positions(&self) -> [Vec3; 2] {
        let right = self.camera_pose.right();
        let half = self.receiver_baseline / 2.0;
        [
            self.emitter_pose - right * half,
            self.emitter_pose + right * half,
        ]
    }

    /// Outward ear axis for a receiver (left ear points left, right ear right).
    pub fn ear_axis(&self, id: ReceiverId) -> Vec3 {
        match id {
            ReceiverId::Left => -self.camera_pose.right(),
            ReceiverId::Right => self.camera_pose.right(),
        }
    }

    /// Checks every scene invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.room_size.is_finite()
            || self.room_size.x <= 0.0
            || self.room_size.y <= 0.0
            || self.room_size.z <= 0.0
        {
            return Err(SceneError::BadRoomSize);
        }
        if !(0.0..=1.0).contains(&self.wall_absorption) {
            return Err(SceneError::BadAbsorption(self.wall_absorption));
        }
        if self.receiver_baseline <= 0.0 {
            return Err(SceneError::BadBaseline);
        }
        let room = self.room_aabb();
        for (i, ob) in self.obstacles.iter().enumerate() {
            if ob.half_extent.x <= 0.0 || ob.half_extent.y <= 0.0 || ob.half_extent.z <= 0.0 {
                return Err(SceneError::BadObstacleExtent(i));
            }
            if !(0.0..=1.0).contains(&ob.absorption) {
                return Err(SceneError::BadAbsorption(ob.absorption));
            }
            if !room.encloses(&ob.aabb()) {
                return Err(SceneError::ObstacleOutsideRoom(i));
            }
        }
        let f = self.camera_pose.forward;
        let u = self.camera_pose.up;
        if !f.is_finite() || !u.is_finite() || f.cross(u).norm() < 1e-9 {
            return Err(SceneError::BadCameraFrame);
        }
        let [left, right] = self.receiver_positions();
        let named: [(&'static str, Vec3); 4] = [
            ("emitter", self.emitter_pose),
            ("left receiver", left),
            ("right receiver", right),
            ("camera", self.camera_pose.position),
        ];
        for (name, p) in named {
            if !room.contains_strict(p) {
                return Err(SceneError::PointOutsideRoom(name));
            }
            for (i, ob) in self.obstacles.iter().enumerate() {
                if ob.aabb().contains(p) {
                    return Err(SceneError::PointInsideObstacle(name, i));
                }
            }
        }
        Ok(())
    }
}

/// Draws a random valid scene from the sampling ranges used by `simulate`:
/// room sides U[3,10] m, up to six box obstacles, absorption U[0.1,0.6],
/// camera/emitter co-located on a random horizontal heading.
pub fn random_scene(seed: u64) -> RoomScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let room_size = Vec3::new(
        rng.random_range(3.0..10.0),
        rng.random_range(3.0..10.0),
        rng.random_range(3.0..10.0),
    );
    let wall_absorption = rng.random_range(0.1..0.6);

    // Rig placement: horizontal heading, sensor height within the room.
    let margin = 0.5;
    let position = Vec3::new(
        rng.random_range(margin..room_size.x - margin),
        rng.random_range(margin..room_size.y - margin),
        rng.random_range((0.6f64).min(room_size.z / 3.0)..(1.8f64).min(room_size.z - 0.4)),
    );
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let forward = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let up = Vec3::new(0.0, 0.0, 1.0);
    let camera_pose = CameraPose {
        position,
        forward,
        up,
    };

    let mut scene = RoomScene {
        room_size,
        obstacles: Vec::new(),
        wall_absorption,
        emitter_pose: position,
        receiver_baseline: MIC_BASELINE,
        camera_pose,
        rng_seed: seed,
    };

    let rig_clear = {
        let [l, r] = scene.receiver_positions();
        move |ob: &Obstacle| {
            let grown = Aabb::from_center_half(ob.center, ob.half_extent + Vec3::new(0.1, 0.1, 0.1));
            !grown.contains(position) && !grown.contains(l) && !grown.contains(r)
        }
    };

    let n_obstacles = rng.random_range(0..=6);
    for _ in 0..n_obstacles {
        // Rejection-sample a box that stays inside the room and clears the rig.
        for _attempt in 0..32 {
            let half = Vec3::new(
                rng.random_range(0.1..0.8),
                rng.random_range(0.1..0.8),
                rng.random_range(0.1..0.8),
            );
            let lo_x = half.x + 0.05;
            let lo_y = half.y + 0.05;
            let lo_z = half.z + 0.05;
            if lo_x >= room_size.x - lo_x || lo_y >= room_size.y - lo_y || lo_z >= room_size.z - lo_z
            {
                continue;
            }
            let center = Vec3::new(
                rng.random_range(lo_x..room_size.x - lo_x),
                rng.random_range(lo_y..room_size.y - lo_y),
                rng.random_range(lo_z..room_size.z - lo_z),
            );
            let ob = Obstacle {
                center,
                half_extent: half,
                absorption: rng.random_range(0.1..0.6),
            };
            if rig_clear(&ob) {
                scene.obstacles.push(ob);
                break;
            }
        }
    }

    debug_assert!(scene.validate().is_ok());
    scene
}

fn fmt_v(v: Vec3) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

/// Serializes a scene to the key/value text format.
pub fn write_scene_text(scene: &RoomScene) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "room = {}", fmt_v(scene.room_size));
    let _ = writeln!(s, "wall_absorption = {}", scene.wall_absorption);
    let _ = writeln!(s, "emitter = {}", fmt_v(scene.emitter_pose));
    let _ = writeln!(s, "baseline = {}", scene.receiver_baseline);
    let _ = writeln!(s, "camera_position = {}", fmt_v(scene.camera_pose.position));
    let _ = writeln!(s, "camera_forward = {}", fmt_v(scene.camera_pose.forward));
    let _ = writeln!(s, "camera_up = {}", fmt_v(scene.camera_pose.up));
    let _ = writeln!(s, "seed = {}", scene.rng_seed);
    for ob in &scene.obstacles {
        let _ = writeln!(
            s,
            "obstacle = {} ; {} ; {}",
            fmt_v(ob.center),
            fmt_v(ob.half_extent),
            ob.absorption
        );
    }
    s
}

/// Parses the scene text format produced by [`write_scene_text`].
///
/// Lines are `key = value`; blank lines and `#` comments are ignored.
/// `obstacle` lines hold `center ; half_extent ; absorption`.
pub fn parse_scene_text(text: &str) -> Result<RoomScene, SceneError> {
    let mut room_size = None;
    let mut wall_absorption = None;
    let mut emitter = None;
    let mut baseline = MIC_BASELINE;
    let mut cam_pos = None;
    let mut cam_fwd = Vec3::new(1.0, 0.0, 0.0);
    let mut cam_up = Vec3::new(0.0, 0.0, 1.0);
    let mut seed = 0u64;
    let mut obstacles = Vec::new();

    let err = |line: usize, msg: &str| SceneError::Parse {
        line,
        msg: msg.to_string(),
    };
    let parse_vec = |line: usize, v: &str| -> Result<Vec3, SceneError> {
        let parts: Vec<f64> = v
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(line, "expected three numbers"))?;
        if parts.len() != 3 {
            return Err(err(line, "expected three numbers"));
        }
        Ok(Vec3::new(parts[0], parts[1], parts[2]))
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, "expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "room" => room_size = Some(parse_vec(line_no, value)?),
            "wall_absorption" => {
                wall_absorption = Some(
                    value
                        .parse()
                        .map_err(|_| err(line_no, "expected a number"))?,
                )
            }
            "emitter" => emitter = Some(parse_vec(line_no, value)?),
            "baseline" => {
                baseline = value
                    .parse()
                    .map_err(|_| err(line_no, "expected a number"))?
            }
            "camera_position" => cam_pos = Some(parse_vec(line_no, value)?),
            "camera_forward" => cam_fwd = parse_vec(line_no, value)?,
            "camera_up" => cam_up = parse_vec(line_no, value)?,
            "seed" => {
                seed = value
                    .parse()
                    .map_err(|_| err(line_no, "expected an integer"))?
            }
            "obstacle" => {
                let parts: Vec<&str> = value.split(';').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(err(line_no, "expected `center ; half_extent ; absorption`"));
                }
                obstacles.push(Obstacle {
                    center: parse_vec(line_no, parts[0])?,
                    half_extent: parse_vec(line_no, parts[1])?,
                    absorption: parts[2]
                        .parse()
                        .map_err(|_| err(line_no, "expected a number"))?,
                });
            }
            other => return Err(err(line_no, &format!("unknown key `{other}`"))),
        }
    }

    let room_size = room_size.ok_or_else(|| err(0, "missing `room`"))?;
    let emitter = emitter.ok_or_else(|| err(0, "missing `emitter`"))?;
    let scene = RoomScene {
        room_size,
        obstacles,
        wall_absorption: wall_absorption.ok_or_else(|| err(0, "missing `wall_absorption`"))?,
        emitter_pose: emitter,
        receiver_baseline: baseline,
        camera_pose: CameraPose {
            position: cam_pos.unwrap_or(emitter),
            forward: cam_fwd.normalized(),
            up: cam_up.normalized(),
        },
        rng_seed: seed,
    };
    scene.validate()?;
    Ok(scene)
}
