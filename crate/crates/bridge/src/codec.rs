//! The serial line protocol spoken to the robot.
//!
//! One command per newline-terminated ASCII line:
//!
//! ```text
//! MOVE U|D|L|R
//! RESET <row> <col> <heading>     heading is 0, 90, 180 or 270
//! POSE
//! ```

use std::fmt;

use thiserror::Error;
use treasure_core::{Action, GridPos};

pub const MAX_LINE_BYTES: usize = 128;

/// A heading the robot can be told to face: 0 is up the grid, angles grow
/// clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cardinal {
    North,
    East,
    South,
    West,
}

impl Cardinal {
    pub fn degrees(self) -> f64 {
        match self {
            Cardinal::North => 0.0,
            Cardinal::East => 90.0,
            Cardinal::South => 180.0,
            Cardinal::West => 270.0,
        }
    }

    pub fn from_degrees(deg: u32) -> Option<Cardinal> {
        match deg {
            0 => Some(Cardinal::North),
            90 => Some(Cardinal::East),
            180 => Some(Cardinal::South),
            270 => Some(Cardinal::West),
            _ => None,
        }
    }

    pub fn of(action: Action) -> Cardinal {
        match action {
            Action::Up => Cardinal::North,
            Action::Right => Cardinal::East,
            Action::Down => Cardinal::South,
            Action::Left => Cardinal::West,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BridgeCommand {
    Move(Action),
    Reset { cell: GridPos, heading: Cardinal },
    Pose,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("empty frame")]
    Empty,
    #[error("frame longer than {MAX_LINE_BYTES} bytes")]
    TooLong,
    #[error("frame is not ASCII")]
    NotAscii,
    #[error("frame holds more than one line")]
    MultipleLines,
    #[error("unknown verb {0}")]
    UnknownVerb(String),
    #[error("{verb} takes {expected} argument(s), got {found}")]
    Arity {
        verb: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("bad direction {0}")]
    Direction(String),
    #[error("bad coordinate {0}")]
    Coordinate(String),
    #[error("bad heading {0}")]
    Heading(String),
}

fn direction_letter(action: Action) -> char {
    match action {
        Action::Up => 'U',
        Action::Down => 'D',
        Action::Left => 'L',
        Action::Right => 'R',
    }
}

impl fmt::Display for BridgeCommand {
    /// The frame without its newline.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BridgeCommand::Move(a) => write!(f, "MOVE {}", direction_letter(*a)),
            BridgeCommand::Reset { cell, heading } => {
                write!(f, "RESET {} {} {}", cell.row, cell.col, heading.degrees() as u32)
            }
            BridgeCommand::Pose => f.write_str("POSE"),
        }
    }
}

pub fn encode_command(cmd: &BridgeCommand) -> String {
    format!("{cmd}\n")
}

/// Parses one frame. The trailing newline (or CRLF) is optional so HTTP
/// bodies can carry a bare line.
pub fn decode_command(frame: &str) -> Result<BridgeCommand, DecodeError> {
    if frame.len() > MAX_LINE_BYTES {
        return Err(DecodeError::TooLong);
    }
    if !frame.is_ascii() {
        return Err(DecodeError::NotAscii);
    }
    let line = frame.strip_suffix('\n').unwrap_or(frame);
    let line = line.strip_suffix('\r').unwrap_or(line);
    if line.contains(['\n', '\r']) {
        return Err(DecodeError::MultipleLines);
    }
    let mut tokens = line.split_ascii_whitespace();
    let verb = tokens.next().ok_or(DecodeError::Empty)?;
    let args: Vec<&str> = tokens.collect();
    let arity = |verb: &'static str, expected: usize| {
        if args.len() == expected {
            Ok(())
        } else {
            Err(DecodeError::Arity {
                verb,
                expected,
                found: args.len(),
            })
        }
    };
    match verb {
        "MOVE" => {
            arity("MOVE", 1)?;
            let action = match args[0] {
                "U" => Action::Up,
                "D" => Action::Down,
                "L" => Action::Left,
                "R" => Action::Right,
                other => return Err(DecodeError::Direction(other.to_string())),
            };
            Ok(BridgeCommand::Move(action))
        }
        "RESET" => {
            arity("RESET", 3)?;
            let coord = |tok: &str| {
                tok.parse::<usize>()
                    .map_err(|_| DecodeError::Coordinate(tok.to_string()))
            };
            let cell = GridPos::new(coord(args[0])?, coord(args[1])?);
            let heading = args[2]
                .parse::<u32>()
                .ok()
                .and_then(Cardinal::from_degrees)
                .ok_or_else(|| DecodeError::Heading(args[2].to_string()))?;
            Ok(BridgeCommand::Reset { cell, heading })
        }
        "POSE" => {
            arity("POSE", 0)?;
            Ok(BridgeCommand::Pose)
        }
        other => Err(DecodeError::UnknownVerb(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodings() {
        assert_eq!(encode_command(&BridgeCommand::Move(Action::Right)), "MOVE R\n");
        assert_eq!(encode_command(&BridgeCommand::Pose), "POSE\n");
        assert_eq!(
            decode_command("RESET 0 0 90\n"),
            Ok(BridgeCommand::Reset {
                cell: GridPos::new(0, 0),
                heading: Cardinal::East
            })
        );
        assert_eq!(decode_command("MOVE L"), Ok(BridgeCommand::Move(Action::Left)));
        assert_eq!(decode_command("POSE\r\n"), Ok(BridgeCommand::Pose));
    }

    #[test]
    fn rejections_name_the_token() {
        let err = decode_command("JUMP X\n").unwrap_err();
        assert_eq!(err.to_string(), "unknown verb JUMP");
        assert_eq!(decode_command("MOVE Q\n"), Err(DecodeError::Direction("Q".into())));
        assert_eq!(
            decode_command("RESET 0 x 90\n"),
            Err(DecodeError::Coordinate("x".into()))
        );
        assert_eq!(decode_command("RESET 0 0 45\n"), Err(DecodeError::Heading("45".into())));
        assert_eq!(
            decode_command("MOVE\n"),
            Err(DecodeError::Arity {
                verb: "MOVE",
                expected: 1,
                found: 0
            })
        );
        assert_eq!(
            decode_command("POSE 1\n").unwrap_err().to_string(),
            "POSE takes 0 argument(s), got 1"
        );
        assert_eq!(decode_command("\n"), Err(DecodeError::Empty));
        assert_eq!(decode_command("MOVE R\nMOVE L\n"), Err(DecodeError::MultipleLines));
        assert_eq!(decode_command("MOVE é"), Err(DecodeError::NotAscii));
        assert_eq!(decode_command(&"POSE ".repeat(30)), Err(DecodeError::TooLong));
        // lowercase verbs are not part of the grammar
        assert_eq!(decode_command("move R"), Err(DecodeError::UnknownVerb("move".into())));
    }
}
