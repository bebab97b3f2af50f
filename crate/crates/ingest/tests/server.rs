use std::io::{Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::path::Path;
use std::thread;
use std::time::Duration;

use gaitlab_core::data::{load_manifest, quantize_g, read_signal_csv, Activity};
use gaitlab_ingest::{Server, ServerConfig};
use sha2::{Digest, Sha256};

fn start(root: &Path, max_sessions: usize) -> gaitlab_ingest::RunningServer {
    let mut config = ServerConfig::new(root);
    config.bind = "127.0.0.1:0".into();
    config.max_sessions = max_sessions;
    Server::bind(&config).unwrap().spawn()
}

fn header(pid: &str, activity: &str) -> String {
    format!(
        "{{\"participant_id\":\"{pid}\",\"activity\":\"{activity}\",\"rate_hz\":30,\
         \"participant\":{{\"group\":\"TD\",\"age\":8,\"weight_kg\":27.5,\"height_m\":1.3}}}}\n"
    )
}

/// Deterministic gait-like samples, distinct per `phase`.
fn samples(n: usize, phase: f64) -> Vec<[f64; 4]> {
    (0..n)
        .map(|i| {
            let t = i as f64 / 30.0;
            [t, 1.0 + 0.3 * (11.0 * t + phase).sin(), 0.1 * (5.5 * t).cos(), 0.2 * (11.0 * t).sin() + phase / 10.0]
        })
        .collect()
}

fn body(head: &str, s: &[[f64; 4]], end: bool) -> String {
    let mut b = head.to_string();
    for r in s {
        b.push_str(&format!("{{\"t\":{},\"x\":{},\"y\":{},\"z\":{}}}\n", r[0], r[1], r[2], r[3]));
    }
    if end {
        b.push_str("{\"end\":true}\n");
    }
    b
}

fn send_raw(addr: SocketAddr, payload: &str) -> String {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(payload.as_bytes()).unwrap();
    s.shutdown(Shutdown::Write).unwrap();
    let mut reply = String::new();
    s.read_to_string(&mut reply).unwrap();
    reply
}

fn http(addr: SocketAddr, request: &[u8]) -> (u16, String) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.write_all(request).unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    let status = resp[9..12].parse().unwrap();
    let body = resp.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

fn expected_rows(s: &[[f64; 4]]) -> Vec<[f64; 4]> {
    s.iter().map(|r| [r[0], quantize_g(r[1]), quantize_g(r[2]), quantize_g(r[3])]).collect()
}

fn csv_rows(path: &Path) -> Vec<[f64; 4]> {
    let rows = read_signal_csv(path).unwrap();
    rows.times.iter().zip(&rows.values).map(|(t, v)| [*t, v[0], v[1], v[2]]).collect()
}

#[test]
fn raw_tcp_session_round_trips_through_loader() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let s = samples(10_920, 0.0);
    let reply = send_raw(server.addr, &body(&header("TD01", "6MWT"), &s, true));
    assert!(reply.contains("\"status\":\"ok\"") && reply.contains("\"rows\":10920"), "{reply}");
    server.stop().unwrap();

    let ds = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.recordings.len(), 1);
    let rec = &ds.recordings[0];
    assert_eq!((rec.activity(), rec.len()), (Activity::SixMwt, 10_920));
    assert!((rec.duration_s() - 364.0).abs() < 1e-9);
    assert!(!rec.annotations().truncated);
    let expect = expected_rows(&s);
    for (got, want) in rec.samples().iter().zip(&expect) {
        assert_eq!(got[..], want[1..]);
    }
}

#[test]
fn http_chunked_and_length_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let s = samples(90, 1.0);
    let payload = body(&header("TD02", "SC-L3"), &s, true);

    let mut chunked = b"POST /v1/stream HTTP/1.1\r\nHost: x\r\nTransfer-Encoding: chunked\r\n\r\n".to_vec();
    for piece in payload.as_bytes().chunks(777) {
        chunked.extend(format!("{:x}\r\n", piece.len()).as_bytes());
        chunked.extend(piece);
        chunked.extend(b"\r\n");
    }
    chunked.extend(b"0\r\n\r\n");
    let (status, reply) = http(server.addr, &chunked);
    assert_eq!(status, 200, "{reply}");

    let fixed = format!("POST /v1/stream HTTP/1.1\r\nContent-Length: {}\r\n\r\n{payload}", payload.len());
    let (status, reply) = http(server.addr, fixed.as_bytes());
    assert_eq!(status, 200, "{reply}");

    let (status, reply) = http(server.addr, b"POST /v1/stream HTTP/1.1\r\nContent-Length: 13\r\n\r\n{\"end\":true}\n");
    assert_eq!(status, 400, "{reply}");

    let (status, manifest) = http(server.addr, b"GET /v1/sessions HTTP/1.1\r\n\r\n");
    assert_eq!(status, 200);
    let m: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    assert_eq!(m["recordings"].as_array().unwrap().len(), 2);
    assert_eq!(m["participants"].as_array().unwrap().len(), 1);

    assert_eq!(http(server.addr, b"GET /healthz HTTP/1.1\r\n\r\n"), (200, "ok\n".into()));
    assert_eq!(http(server.addr, b"GET /nope HTTP/1.1\r\n\r\n").0, 404);
    assert_eq!(http(server.addr, b"DELETE /healthz HTTP/1.1\r\n\r\n").0, 405);
    server.stop().unwrap();

    let ds = load_manifest(&dir.path().join("manifest.json")).unwrap();
    for rec in &ds.recordings {
        assert_eq!(rec.len(), 90);
    }
}

#[test]
fn concurrent_sessions_never_interleave() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let addr = server.addr;
    let clients: Vec<_> = (0..4)
        .map(|k| {
            thread::spawn(move || {
                let pid = format!("TD1{k}");
                let s = samples(600 + 50 * k, k as f64);
                let mut conn = TcpStream::connect(addr).unwrap();
                // Interleave writes at the byte level across clients.
                for piece in body(&header(&pid, "100MRW"), &s, true).as_bytes().chunks(500) {
                    conn.write_all(piece).unwrap();
                    thread::sleep(Duration::from_micros(200));
                }
                conn.shutdown(Shutdown::Write).unwrap();
                let mut reply = String::new();
                conn.read_to_string(&mut reply).unwrap();
                let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
                (v["csv_path"].as_str().unwrap().to_string(), expected_rows(&s))
            })
        })
        .collect();
    let results: Vec<_> = clients.into_iter().map(|c| c.join().unwrap()).collect();
    server.stop().unwrap();

    let digest = |rows: &[[f64; 4]]| {
        let mut h = Sha256::new();
        for r in rows {
            for v in r {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize()
    };
    for (rel, want) in results {
        let got = csv_rows(&dir.path().join(rel));
        assert_eq!(digest(&got), digest(&want));
    }
    let ds = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!((ds.participants.len(), ds.recordings.len()), (4, 4));
}

#[test]
fn dropped_connection_is_persisted_as_truncated() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let s = samples(120, 0.5);
    let reply = send_raw(server.addr, &body(&header("TD03", "SC-L1"), &s, false));
    assert!(reply.contains("\"truncated\":true"), "{reply}");

    // Shorter than 2 s without a terminator: nothing to keep.
    let reply = send_raw(server.addr, &body(&header("TD03", "SC-L2"), &s[..20], false));
    assert!(reply.contains("\"status\":\"error\""), "{reply}");
    server.stop().unwrap();

    let ds = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.recordings.len(), 1);
    assert!(ds.recordings[0].annotations().truncated);
}

#[test]
fn shutdown_flushes_open_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let mut conn = TcpStream::connect(server.addr).unwrap();
    conn.write_all(body(&header("TD04", "SC-L5"), &samples(75, 0.0), false).as_bytes()).unwrap();
    thread::sleep(Duration::from_millis(200));
    server.stop().unwrap();
    let mut reply = String::new();
    conn.read_to_string(&mut reply).unwrap();
    assert!(reply.contains("\"truncated\":true"), "{reply}");
    let ds = load_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(ds.recordings[0].len(), 75);
}

#[test]
fn busy_server_refuses_extra_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 1);
    let mut first = TcpStream::connect(server.addr).unwrap();
    first.write_all(header("TD05", "SC-L4").as_bytes()).unwrap();
    thread::sleep(Duration::from_millis(200));
    let reply = send_raw(server.addr, &body(&header("TD06", "SC-L4"), &samples(90, 0.0), true));
    assert!(reply.contains("server busy"), "{reply}");
    first.write_all(body("", &samples(90, 0.0), true).as_bytes()).unwrap();
    first.shutdown(Shutdown::Write).unwrap();
    let mut reply = String::new();
    first.read_to_string(&mut reply).unwrap();
    assert!(reply.contains("\"status\":\"ok\""), "{reply}");
    server.stop().unwrap();
}

#[test]
fn existing_participants_need_no_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let server = start(dir.path(), 8);
    let s = samples(90, 0.0);
    assert!(send_raw(server.addr, &body(&header("TD07", "SC-L1"), &s, true)).contains("ok"));
    let bare = "{\"participant_id\":\"TD07\",\"activity\":\"SC-L2\",\"rate_hz\":30}\n";
    assert!(send_raw(server.addr, &body(bare, &s, true)).contains("ok"));
    let stranger = "{\"participant_id\":\"TD08\",\"activity\":\"SC-L2\",\"rate_hz\":30}\n";
    assert!(send_raw(server.addr, &body(stranger, &s, true)).contains("unknown participant"));
    server.stop().unwrap();

    // A restarted server continues the same manifest.
    let server = start(dir.path(), 8);
    assert!(send_raw(server.addr, &body(bare, &s, true)).contains("ok"));
    server.stop().unwrap();
    assert_eq!(load_manifest(&dir.path().join("manifest.json")).unwrap().recordings.len(), 3);
}
