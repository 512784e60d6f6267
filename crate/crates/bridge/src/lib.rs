//! Robot bridge: the serial line protocol, a simulated robot with heading
//! drift and IMU correction, and the HTTP relay in front of it.

pub mod codec;
pub mod http;
pub mod sim;

pub use codec::{decode_command, encode_command, BridgeCommand, Cardinal, DecodeError};
pub use http::{BridgeClient, ClientError};
pub use sim::{Arena, BridgeReply, DriftModel, Pose, ReplyStatus, RobotSim, WirePose};
