//! Newline-delimited JSON frames: one header, samples, one terminator.

use gaitlab_core::data::{Activity, Group, ParticipantRecord};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::FrameError;

/// Accepted sampling rates in Hz.
pub const RATE_RANGE: (f64, f64) = (1.0, 200.0);

/// Participant metadata a header may carry so the server can register
/// a subject it has not seen before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantInfo {
    pub group: Group,
    pub age: u32,
    pub weight_kg: f64,
    pub height_m: f64,
    #[serde(default)]
    pub nsaa: Option<u8>,
}

impl ParticipantInfo {
    pub fn record(&self, id: &str) -> ParticipantRecord {
        ParticipantRecord {
            id: id.to_string(),
            group: self.group,
            age: self.age,
            weight_kg: self.weight_kg,
            height_m: self.height_m,
            nsaa: self.nsaa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub participant_id: String,
    pub activity: Activity,
    pub rate_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<ParticipantInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_steps: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_distance_m: Option<f64>,
}

/// Client time in seconds and acceleration in g.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    Header(SessionHeader),
    Sample(Sample),
    Terminator,
}

fn number(obj: &Map<String, Value>, key: &str) -> Result<f64, FrameError> {
    match obj.get(key) {
        None => Err(FrameError::MissingField(key.into())),
        Some(v) => v
            .as_f64()
            .ok_or_else(|| FrameError::Invalid(format!("field {key:?} must be a number, got {v}"))),
    }
}

/// Decodes one line (without or with its trailing newline).
///
/// The frame kind is chosen by key: `end` marks the terminator,
/// `participant_id` a header, anything else must be a sample.
pub fn decode_frame(line: &[u8]) -> Result<Frame, FrameError> {
    let value: Value = serde_json::from_slice(line.trim_ascii()).map_err(|e| FrameError::Json(e.to_string()))?;
    let Value::Object(obj) = value else {
        return Err(FrameError::Invalid("frame must be a JSON object".into()));
    };
    if let Some(end) = obj.get("end") {
        return match end {
            Value::Bool(true) => Ok(Frame::Terminator),
            other => Err(FrameError::Invalid(format!("\"end\" must be true, got {other}"))),
        };
    }
    if obj.contains_key("participant_id") {
        for key in ["activity", "rate_hz"] {
            if !obj.contains_key(key) {
                return Err(FrameError::MissingField(key.into()));
            }
        }
        if let Some(Value::String(a)) = obj.get("activity") {
            if a.parse::<Activity>().is_err() {
                return Err(FrameError::UnknownActivity(a.clone()));
            }
        }
        let header: SessionHeader =
            serde_json::from_value(Value::Object(obj)).map_err(|e| FrameError::Invalid(e.to_string()))?;
        if header.participant_id.is_empty() {
            return Err(FrameError::Invalid("participant_id is empty".into()));
        }
        let (lo, hi) = RATE_RANGE;
        if !(header.rate_hz >= lo && header.rate_hz <= hi) {
            return Err(FrameError::Invalid(format!(
                "rate_hz {} outside [{lo}, {hi}]",
                header.rate_hz
            )));
        }
        return Ok(Frame::Header(header));
    }
    Ok(Frame::Sample(Sample {
        t: number(&obj, "t")?,
        x: number(&obj, "x")?,
        y: number(&obj, "y")?,
        z: number(&obj, "z")?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_frame_kinds() {
        let h = decode_frame(br#"{"participant_id":"p1","activity":"SC-L3","rate_hz":30}"#).unwrap();
        let Frame::Header(h) = h else { panic!("{h:?}") };
        assert_eq!((h.participant_id.as_str(), h.activity, h.rate_hz), ("p1", Activity::ScL3, 30.0));

        let s = decode_frame(b"{\"t\":0.033,\"x\":0.01,\"y\":-0.02,\"z\":0.98}\n").unwrap();
        assert_eq!(s, Frame::Sample(Sample { t: 0.033, x: 0.01, y: -0.02, z: 0.98 }));

        assert_eq!(decode_frame(br#"{"end":true}"#).unwrap(), Frame::Terminator);
    }

    #[test]
    fn header_with_metadata() {
        let line = br#"{"participant_id":"DMD01","activity":"6MWT","rate_hz":30,"started_at":"2026-01-01T00:00:00Z",
                        "participant":{"group":"DMD","age":7,"weight_kg":29.8,"height_m":1.33}}"#;
        let Frame::Header(h) = decode_frame(line).unwrap() else { panic!() };
        let p = h.participant.unwrap().record("DMD01");
        assert_eq!((p.group, p.nsaa), (Group::Dmd, None));
    }

    #[test]
    fn errors() {
        assert!(matches!(decode_frame(b"{not json"), Err(FrameError::Json(_))));
        assert!(matches!(decode_frame(b"[1,2]"), Err(FrameError::Invalid(_))));
        assert!(matches!(decode_frame(br#"{"t":0,"x":0,"y":0}"#), Err(FrameError::MissingField(f)) if f == "z"));
        assert!(matches!(decode_frame(br#"{"t":0,"x":"a","y":0,"z":0}"#), Err(FrameError::Invalid(_))));
        assert!(matches!(decode_frame(br#"{"end":false}"#), Err(FrameError::Invalid(_))));
        assert!(matches!(
            decode_frame(br#"{"participant_id":"p","activity":"SC-L9","rate_hz":30}"#),
            Err(FrameError::UnknownActivity(a)) if a == "SC-L9"
        ));
        assert!(matches!(
            decode_frame(br#"{"participant_id":"p","rate_hz":30}"#),
            Err(FrameError::MissingField(f)) if f == "activity"
        ));
        for rate in ["0.5", "201", "-3"] {
            let line = format!(r#"{{"participant_id":"p","activity":"SC-L1","rate_hz":{rate}}}"#);
            assert!(matches!(decode_frame(line.as_bytes()), Err(FrameError::Invalid(_))), "{rate}");
        }
    }
}
