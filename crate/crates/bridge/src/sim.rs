//! Kinematic stand-in for the robot.
//!
//! Cells move discretely. The heading is continuous: every MOVE turns by the
//! relative angle to the commanded cardinal, picks up a drift of 1 to 2
//! degrees, and is then pulled back by the IMU correction when enabled.

use rand::Rng;
use serde::{Deserialize, Serialize};
use treasure_core::rng::SeededRng;
use treasure_core::{GridPos, MazeConfig, WallEdge};

use crate::codec::{BridgeCommand, Cardinal};

/// Residual heading error the IMU correction guarantees.
pub const CORRECTION_TOLERANCE_DEG: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub cell: GridPos,
    /// Actual heading in `[0, 360)`.
    pub heading_deg: f64,
    /// Cardinal the robot is supposed to face.
    pub ideal_heading_deg: f64,
}

impl Pose {
    pub fn new(cell: GridPos, heading: Cardinal) -> Self {
        Self {
            cell,
            heading_deg: heading.degrees(),
            ideal_heading_deg: heading.degrees(),
        }
    }

    /// Signed difference `heading - ideal`, wrapped to `(-180, 180]`.
    pub fn heading_error(&self) -> f64 {
        signed_angle(self.heading_deg - self.ideal_heading_deg)
    }
}

fn signed_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    if a > 180.0 {
        a - 360.0
    } else {
        a
    }
}

fn wrap_heading(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Per-move heading drift, uniform on `[min_deg, max_deg]`. The direction
/// of the drift is drawn once per model from its seed: a robot veers
/// consistently to one side.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftModel {
    pub min_deg: f64,
    pub max_deg: f64,
    sign: f64,
    rng: SeededRng,
}

impl DriftModel {
    pub fn new(seed: u64) -> Self {
        Self::with_range(seed, 1.0, 2.0)
    }

    pub fn with_range(seed: u64, min_deg: f64, max_deg: f64) -> Self {
        let mut rng = SeededRng::new(seed);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        Self {
            min_deg,
            max_deg,
            sign,
            rng,
        }
    }

    pub fn sign(&self) -> f64 {
        self.sign
    }

    pub fn draw(&mut self) -> f64 {
        self.sign * self.rng.gen_range(self.min_deg..=self.max_deg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ReplyStatus {
    #[serde(rename = "OK")]
    Ok,
    #[serde(rename = "ERR")]
    Err,
}

/// Pose as it appears on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub row: usize,
    pub col: usize,
    pub heading_deg: f64,
}

impl From<&Pose> for WirePose {
    fn from(p: &Pose) -> Self {
        Self {
            row: p.cell.row,
            col: p.cell.col,
            heading_deg: p.heading_deg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeReply {
    pub status: ReplyStatus,
    pub pose: WirePose,
    pub message: String,
}

/// The arena the robot drives in: bounds and walls.
#[derive(Debug, Clone, PartialEq)]
pub struct Arena {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<WallEdge>,
}

impl Arena {
    pub fn from_maze(config: &MazeConfig) -> Self {
        Self {
            width: config.width,
            height: config.height,
            walls: config.walls.clone(),
        }
    }

    fn blocked(&self, from: GridPos, to: GridPos) -> bool {
        self.walls.iter().any(|w| w.blocks(from, to))
    }
}

/// Applies one command. MOVE turns, translates unless blocked, drifts and
/// (with `correct`) gets IMU-corrected; POSE changes nothing; RESET places
/// the robot exactly.
pub fn execute(
    cmd: &BridgeCommand,
    pose: &Pose,
    drift: &mut DriftModel,
    arena: &Arena,
    correct: bool,
) -> (Pose, BridgeReply) {
    let reply = |status, pose: &Pose, message: &str| BridgeReply {
        status,
        pose: pose.into(),
        message: message.to_string(),
    };
    match cmd {
        BridgeCommand::Pose => (*pose, reply(ReplyStatus::Ok, pose, "pose")),
        BridgeCommand::Reset { cell, heading } => {
            if !cell.in_bounds(arena.width, arena.height) {
                return (
                    *pose,
                    reply(ReplyStatus::Err, pose, &format!("cell {cell} out of bounds")),
                );
            }
            let next = Pose::new(*cell, *heading);
            (next, reply(ReplyStatus::Ok, &next, "reset"))
        }
        BridgeCommand::Move(action) => {
            let target = Cardinal::of(*action).degrees();
            let turn = target - pose.ideal_heading_deg;
            let mut next = Pose {
                cell: pose.cell,
                heading_deg: wrap_heading(pose.heading_deg + turn),
                ideal_heading_deg: target,
            };
            let message = match pose.cell.neighbor(*action, arena.width, arena.height) {
                Some(to) if !arena.blocked(pose.cell, to) => {
                    next.cell = to;
                    "moved"
                }
                _ => "blocked",
            };
            next.heading_deg = wrap_heading(next.heading_deg + drift.draw());
            if correct && next.heading_error().abs() > CORRECTION_TOLERANCE_DEG {
                next.heading_deg = next.ideal_heading_deg;
            }
            (next, reply(ReplyStatus::Ok, &next, message))
        }
    }
}

/// A robot with its own pose, drift and arena.
#[derive(Debug, Clone)]
pub struct RobotSim {
    pub arena: Arena,
    pub pose: Pose,
    pub drift: DriftModel,
    pub correction: bool,
}

impl RobotSim {
    pub fn new(arena: Arena, start: GridPos, drift: DriftModel) -> Self {
        Self {
            arena,
            pose: Pose::new(start, Cardinal::South),
            drift,
            correction: true,
        }
    }

    pub fn for_maze(config: &MazeConfig, seed: u64) -> Self {
        Self::new(Arena::from_maze(config), config.start, DriftModel::new(seed))
    }

    pub fn without_correction(mut self) -> Self {
        self.correction = false;
        self
    }

    pub fn execute(&mut self, cmd: &BridgeCommand) -> BridgeReply {
        let (pose, reply) = execute(cmd, &self.pose, &mut self.drift, &self.arena, self.correction);
        self.pose = pose;
        reply
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use treasure_core::Action;

    fn sim() -> RobotSim {
        RobotSim::for_maze(&MazeConfig::default(), 3)
    }

    #[test]
    fn move_into_open_cell_is_corrected() {
        let mut robot = sim();
        robot.execute(&BridgeCommand::Reset {
            cell: GridPos::new(0, 0),
            heading: Cardinal::East,
        });
        let reply = robot.execute(&BridgeCommand::Move(Action::Right));
        assert_eq!(reply.message, "moved");
        assert_eq!(robot.pose.cell, GridPos::new(0, 1));
        assert!(robot.pose.heading_error().abs() <= CORRECTION_TOLERANCE_DEG);
        assert_eq!(robot.pose.ideal_heading_deg, 90.0);
    }

    #[test]
    fn walls_and_edges_block() {
        let mut robot = sim();
        robot.execute(&BridgeCommand::Reset {
            cell: GridPos::new(1, 1),
            heading: Cardinal::North,
        });
        let reply = robot.execute(&BridgeCommand::Move(Action::Right));
        assert_eq!((reply.status, reply.message.as_str()), (ReplyStatus::Ok, "blocked"));
        assert_eq!(robot.pose.cell, GridPos::new(1, 1));
        robot.execute(&BridgeCommand::Reset {
            cell: GridPos::new(0, 0),
            heading: Cardinal::North,
        });
        assert_eq!(robot.execute(&BridgeCommand::Move(Action::Up)).message, "blocked");
    }

    #[test]
    fn reset_out_of_bounds_is_an_error() {
        let mut robot = sim();
        let before = robot.pose;
        let reply = robot.execute(&BridgeCommand::Reset {
            cell: GridPos::new(3, 0),
            heading: Cardinal::North,
        });
        assert_eq!(reply.status, ReplyStatus::Err);
        assert_eq!(robot.pose, before);
    }

    #[test]
    fn pose_query_changes_nothing() {
        let mut robot = sim();
        robot.execute(&BridgeCommand::Move(Action::Down));
        let before = robot.pose;
        let reply = robot.execute(&BridgeCommand::Pose);
        assert_eq!(robot.pose, before);
        assert_eq!(reply.pose, WirePose::from(&before));
    }

    #[test]
    fn uncorrected_drift_accumulates() {
        for seed in 0..20 {
            let mut robot = RobotSim::for_maze(&MazeConfig::default(), seed).without_correction();
            for _ in 0..10 {
                robot.execute(&BridgeCommand::Move(Action::Right));
            }
            let err = robot.pose.heading_error().abs();
            assert!((10.0..=20.0).contains(&err), "seed {seed}: {err}");
        }
    }

    #[test]
    fn turning_preserves_heading_error() {
        let mut robot = sim().without_correction();
        robot.execute(&BridgeCommand::Move(Action::Down));
        let e1 = robot.pose.heading_error();
        robot.execute(&BridgeCommand::Move(Action::Left));
        let e2 = robot.pose.heading_error();
        assert!(e2.abs() > e1.abs());
        assert_eq!(robot.pose.ideal_heading_deg, 270.0);
        assert!((0.0..360.0).contains(&robot.pose.heading_deg));
    }

    #[test]
    fn angles_wrap() {
        assert_eq!(signed_angle(359.0), -1.0);
        assert_eq!(signed_angle(-181.0), 179.0);
        assert_eq!(wrap_heading(-1e-20), 0.0);
        assert_eq!(wrap_heading(361.5), 1.5);
    }
}
