use std::io::{self, BufRead, Read};
use std::sync::atomic::{AtomicBool, Ordering};

use gaitlab_core::data::SENSOR_RANGE_G;
use serde::Serialize;

use crate::frame::{decode_frame, Frame, Sample, SessionHeader};
use crate::store::Store;
use crate::IngestError;

/// Longest accepted frame line.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

/// Reply sent to the client once a session ends.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SessionReply {
    Ok {
        csv_path: String,
        rows: usize,
        dropped: usize,
        truncated: bool,
    },
    Error {
        error: String,
    },
}

impl SessionReply {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("reply serializes");
        s.push('\n');
        s
    }

    fn error(e: impl ToString) -> Self {
        SessionReply::Error { error: e.to_string() }
    }
}

pub(crate) enum Line {
    Data,
    Eof,
    Shutdown,
}

/// Reads one line into `buf`, retrying read timeouts until a newline, EOF
/// or shutdown. Partial bytes survive a timeout.
pub(crate) fn read_line<R: BufRead>(reader: &mut R, buf: &mut Vec<u8>, shutdown: &AtomicBool) -> io::Result<Line> {
    buf.clear();
    loop {
        let room = (MAX_LINE_BYTES + 1).saturating_sub(buf.len()) as u64;
        match reader.by_ref().take(room).read_until(b'\n', buf) {
            Ok(0) => return Ok(if buf.is_empty() { Line::Eof } else { Line::Data }),
            Ok(_) if buf.last() == Some(&b'\n') => return Ok(Line::Data),
            Ok(_) if buf.len() > MAX_LINE_BYTES => {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "frame line too long"))
            }
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if shutdown.load(Ordering::SeqCst) {
                    return Ok(Line::Shutdown);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
}

struct Collected {
    times: Vec<f64>,
    values: Vec<[f64; 3]>,
    dropped: usize,
}

impl Collected {
    fn push(&mut self, s: Sample, header: &SessionHeader) {
        let in_range = [s.x, s.y, s.z].iter().all(|v| v.is_finite() && v.abs() <= SENSOR_RANGE_G);
        let ordered = s.t.is_finite() && self.times.last().is_none_or(|&prev| s.t >= prev);
        if in_range && ordered {
            self.times.push(s.t);
            self.values.push([s.x, s.y, s.z]);
        } else {
            self.dropped += 1;
            log::warn!(
                "session {}/{}: dropped sample {} at t={} ({})",
                header.participant_id,
                header.activity,
                self.times.len() + self.dropped - 1,
                s.t,
                if in_range { "timestamp out of order" } else { "outside sensor range" }
            );
        }
    }
}

/// Runs one session to completion over `reader` and persists it.
///
/// A stream that ends, or a server that shuts down, before the terminator
/// leaves a truncated session, which is kept if it spans at least 2 s.
pub(crate) fn run_session<R: BufRead>(reader: &mut R, store: &Store, shutdown: &AtomicBool) -> SessionReply {
    let mut line = Vec::new();
    let header = loop {
        match read_line(reader, &mut line, shutdown) {
            Ok(Line::Data) if line.trim_ascii().is_empty() => continue,
            Ok(Line::Data) => break line.clone(),
            Ok(Line::Eof) | Ok(Line::Shutdown) => return SessionReply::error("stream ended before a session header"),
            Err(e) => return SessionReply::error(e),
        }
    };
    let header = match decode_frame(&header) {
        Ok(Frame::Header(h)) => h,
        Ok(_) => return SessionReply::error(IngestError::Protocol("first frame must be a session header".into())),
        Err(e) => return SessionReply::error(e),
    };
    if let Err(e) = store.check_participant(&header) {
        return SessionReply::error(e);
    }

    let mut data = Collected {
        times: Vec::new(),
        values: Vec::new(),
        dropped: 0,
    };
    let truncated = loop {
        match read_line(reader, &mut line, shutdown) {
            Ok(Line::Data) if line.trim_ascii().is_empty() => {}
            Ok(Line::Data) => match decode_frame(&line) {
                Ok(Frame::Sample(s)) => data.push(s, &header),
                Ok(Frame::Terminator) => break false,
                Ok(Frame::Header(_)) => {
                    return SessionReply::error(IngestError::Protocol("second header inside a session".into()))
                }
                Err(e) => {
                    log::warn!("session {}/{} aborted: {e}", header.participant_id, header.activity);
                    return SessionReply::error(e);
                }
            },
            Ok(Line::Eof) | Ok(Line::Shutdown) => break true,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => return SessionReply::error(e),
            Err(e) => {
                log::warn!("session {}/{}: read failed: {e}", header.participant_id, header.activity);
                break true;
            }
        }
    };

    let min_rows = (2.0 * header.rate_hz).ceil() as usize;
    if data.values.len() < min_rows {
        let msg = format!(
            "session {}/{} has {} samples, fewer than 2 s at {} Hz",
            header.participant_id,
            header.activity,
            data.values.len(),
            header.rate_hz
        );
        log::warn!("{msg}; not persisted");
        return SessionReply::error(IngestError::Protocol(msg));
    }
    match store.persist(&header, &data.times, &data.values, truncated) {
        Ok(stored) => {
            log::info!(
                "stored {} ({} rows, {} dropped{})",
                stored.entry.csv_path,
                stored.rows,
                data.dropped,
                if truncated { ", truncated" } else { "" }
            );
            SessionReply::Ok {
                csv_path: stored.entry.csv_path,
                rows: stored.rows,
                dropped: data.dropped,
                truncated,
            }
        }
        Err(e) => {
            log::error!("{e}");
            SessionReply::error(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn header_line() -> String {
        r#"{"participant_id":"p1","activity":"SC-L2","rate_hz":10,"participant":{"group":"TD","age":6,"weight_kg":20,"height_m":1.1}}"#.to_string() + "\n"
    }

    fn samples(n: usize) -> String {
        (0..n).map(|i| format!("{{\"t\":{},\"x\":1.0,\"y\":0.0,\"z\":0.01}}\n", i as f64 / 10.0)).collect()
    }

    fn run(input: String) -> (SessionReply, tempfile::TempDir) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let reply = run_session(&mut Cursor::new(input.into_bytes()), &store, &AtomicBool::new(false));
        (reply, dir)
    }

    #[test]
    fn complete_session() {
        let (reply, _d) = run(header_line() + &samples(25) + "{\"end\":true}\n");
        assert!(matches!(reply, SessionReply::Ok { rows: 25, dropped: 0, truncated: false, .. }), "{reply:?}");
    }

    #[test]
    fn missing_terminator_is_truncated() {
        let (reply, _d) = run(header_line() + &samples(25));
        assert!(matches!(reply, SessionReply::Ok { rows: 25, truncated: true, .. }), "{reply:?}");
    }

    #[test]
    fn out_of_range_and_backwards_samples_are_dropped() {
        let extra = "{\"t\":2.5,\"x\":2.5,\"y\":0,\"z\":0}\n{\"t\":0.1,\"x\":1,\"y\":0,\"z\":0}\n";
        let (reply, _d) = run(header_line() + &samples(25) + extra + "{\"end\":true}\n");
        assert!(matches!(reply, SessionReply::Ok { rows: 25, dropped: 2, .. }), "{reply:?}");
    }

    #[test]
    fn rejections() {
        for input in [
            header_line() + "{\"end\":true}\n",
            samples(3),
            header_line() + &samples(5) + "garbage\n" + &samples(30),
            header_line() + &header_line(),
            r#"{"participant_id":"ghost","activity":"SC-L2","rate_hz":10}"#.to_string() + "\n" + &samples(30),
            String::new(),
            "x".repeat(MAX_LINE_BYTES + 10),
        ] {
            let (reply, dir) = run(input.clone());
            assert!(matches!(reply, SessionReply::Error { .. }), "{input:.80}: {reply:?}");
            let m = Store::open(dir.path()).unwrap().manifest();
            assert!(m.recordings.is_empty());
        }
    }
}
