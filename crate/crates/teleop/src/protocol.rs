//! JSON frames exchanged on the `/session` WebSocket.

use serde::{Deserialize, Serialize};

use se3_gic::environment::SceneCase;
use se3_gic::liegroup::Pose;

/// Client to server. `id` is echoed back in the matching ack or error frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    #[serde(flatten)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Command {
    /// Six log-actions in `[-1, 1]`, mapped to gains exactly as the learned policies do.
    SetGains {
        action: [f64; 6],
    },
    StartRecording,
    StopRecording,
    Reset {
        case: SceneCase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Save {
        path: String,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SetGains { .. } => "set_gains",
            Command::StartRecording => "start_recording",
            Command::StopRecording => "stop_recording",
            Command::Reset { .. } => "reset",
            Command::Save { .. } => "save",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub in_contact: bool,
    pub success: bool,
    pub recording: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Telemetry {
    pub tick: u64,
    pub t: f64,
    pub case: SceneCase,
    pub pose: Pose,
    pub hole: Pose,
    pub e_g: [f64; 6],
    pub f_ext: [f64; 6],
    pub action: [f64; 6],
    /// `(kp, kr)` after the action mapping.
    pub gains: [f64; 6],
    pub reward: f64,
    /// Axial and radial offsets of the tip in the hole frame.
    pub depth: f64,
    pub lateral: f64,
    pub flags: Flags,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub command: String,
    /// Tick current when the command arrived.
    pub received_tick: u64,
    /// Control tick whose step first used the command.
    pub tick: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorFrame {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<u64>,
    pub tick: u64,
    pub message: String,
}

/// Server to client.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerFrame {
    Telemetry(Telemetry),
    Ack(Ack),
    Error(ErrorFrame),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_wire_format() {
        let f: CommandFrame = serde_json::from_str(r#"{"type":"set_gains","id":3,"action":[1,1,-1,1,1,1]}"#).unwrap();
        assert_eq!(f.id, Some(3));
        assert_eq!(f.command, Command::SetGains { action: [1.0, 1.0, -1.0, 1.0, 1.0, 1.0] });
        let r: CommandFrame = serde_json::from_str(r#"{"type":"reset","case":"case3"}"#).unwrap();
        assert_eq!(r.command, Command::Reset { case: SceneCase::Case3, seed: None });
        let s = serde_json::to_string(&CommandFrame { id: None, command: Command::StartRecording }).unwrap();
        assert_eq!(s, r#"{"type":"start_recording"}"#);
        assert!(serde_json::from_str::<CommandFrame>(r#"{"type":"fly"}"#).is_err());
    }

    #[test]
    fn server_frames_are_tagged() {
        let ack =
            ServerFrame::Ack(Ack { id: Some(1), command: "save".into(), received_tick: 4, tick: 5, detail: None });
        let v: serde_json::Value = serde_json::to_value(&ack).unwrap();
        assert_eq!(v["type"], "ack");
        assert_eq!(v["tick"], 5);
        let back: ServerFrame = serde_json::from_value(v).unwrap();
        assert_eq!(back, ack);
    }
}
