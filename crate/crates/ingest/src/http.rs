//! Minimal HTTP/1.1 request handling: enough for the stream, manifest and
//! health endpoints. Every response closes the connection.

use std::io::{self, BufRead, Read, Write};

/// Largest accepted request head.
const MAX_HEAD_BYTES: usize = 16 * 1024;
const MAX_HEADERS: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum BodyKind {
    None,
    Length(u64),
    Chunked,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct RequestHead {
    pub method: String,
    pub path: String,
    pub body: BodyKind,
}

/// Reads and parses a request head. `read_line` handles read timeouts the
/// same way frame reading does.
pub(crate) fn read_head<R: BufRead>(
    reader: &mut R,
    mut read_line: impl FnMut(&mut R, &mut Vec<u8>) -> io::Result<bool>,
) -> io::Result<RequestHead> {
    let invalid = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
    let mut head = Vec::new();
    let mut line = Vec::new();
    loop {
        if !read_line(reader, &mut line)? {
            return Err(invalid("connection closed inside request head".into()));
        }
        head.extend_from_slice(&line);
        if head.len() > MAX_HEAD_BYTES {
            return Err(invalid("request head too large".into()));
        }
        if line == b"\r\n" || line == b"\n" {
            break;
        }
    }
    let mut headers = [httparse::EMPTY_HEADER; MAX_HEADERS];
    let mut req = httparse::Request::new(&mut headers);
    match req.parse(&head) {
        Ok(httparse::Status::Complete(_)) => {}
        Ok(httparse::Status::Partial) => return Err(invalid("incomplete request head".into())),
        Err(e) => return Err(invalid(format!("malformed request: {e}"))),
    }
    let mut body = BodyKind::None;
    for h in req.headers.iter() {
        let value = String::from_utf8_lossy(h.value);
        if h.name.eq_ignore_ascii_case("transfer-encoding") && value.to_ascii_lowercase().contains("chunked") {
            body = BodyKind::Chunked;
        } else if h.name.eq_ignore_ascii_case("content-length") && body == BodyKind::None {
            let n = value
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad Content-Length {value:?}")))?;
            body = BodyKind::Length(n);
        }
    }
    Ok(RequestHead {
        method: req.method.unwrap_or_default().to_string(),
        path: req.path.unwrap_or_default().split('?').next().unwrap_or_default().to_string(),
        body,
    })
}

/// Decodes a chunked body. A stream that closes mid-body reads as EOF.
pub(crate) struct ChunkedReader<R> {
    inner: R,
    remaining: u64,
    size_line: Vec<u8>,
    done: bool,
}

impl<R: BufRead> ChunkedReader<R> {
    pub fn new(inner: R) -> Self {
        ChunkedReader {
            inner,
            remaining: 0,
            size_line: Vec::new(),
            done: false,
        }
    }

    /// Parses the next chunk-size line, skipping the CRLF that ends the
    /// previous chunk. Partial lines are kept across read timeouts.
    fn next_chunk(&mut self) -> io::Result<()> {
        loop {
            let n = self.inner.read_until(b'\n', &mut self.size_line)?;
            if n == 0 {
                self.done = true;
                return Ok(());
            }
            if self.size_line.last() != Some(&b'\n') {
                continue;
            }
            let text = String::from_utf8_lossy(&self.size_line).trim().to_string();
            self.size_line.clear();
            if text.is_empty() {
                continue;
            }
            let hex = text.split(';').next().unwrap_or_default().trim();
            let size = u64::from_str_radix(hex, 16)
                .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, format!("bad chunk size {hex:?}")))?;
            if size == 0 {
                self.done = true;
            }
            self.remaining = size;
            return Ok(());
        }
    }
}

impl<R: BufRead> Read for ChunkedReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.remaining == 0 {
            if self.done {
                return Ok(0);
            }
            self.next_chunk()?;
        }
        let want = buf.len().min(self.remaining as usize);
        let n = self.inner.read(&mut buf[..want])?;
        if n == 0 {
            self.done = true;
            self.remaining = 0;
        }
        self.remaining -= n as u64;
        Ok(n)
    }
}

pub(crate) fn write_response<W: Write>(out: &mut W, status: u16, content_type: &str, body: &[u8]) -> io::Result<()> {
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        404 => "Not Found",
        405 => "Method Not Allowed",
        503 => "Service Unavailable",
        _ => "Internal Server Error",
    };
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    out.write_all(body)?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn plain_line(r: &mut Cursor<Vec<u8>>, buf: &mut Vec<u8>) -> io::Result<bool> {
        buf.clear();
        Ok(r.read_until(b'\n', buf)? > 0)
    }

    #[test]
    fn parses_head() {
        let mut c = Cursor::new(b"POST /v1/stream?x=1 HTTP/1.1\r\nHost: a\r\nTransfer-Encoding: chunked\r\n\r\nrest".to_vec());
        let head = read_head(&mut c, plain_line).unwrap();
        assert_eq!((head.method.as_str(), head.path.as_str(), head.body), ("POST", "/v1/stream", BodyKind::Chunked));
        let mut rest = String::new();
        c.read_to_string(&mut rest).unwrap();
        assert_eq!(rest, "rest");

        let mut c = Cursor::new(b"GET /healthz HTTP/1.1\r\nContent-Length: 3\r\n\r\n".to_vec());
        assert_eq!(read_head(&mut c, plain_line).unwrap().body, BodyKind::Length(3));

        let mut c = Cursor::new(b"GET /healthz HTTP/1.1\r\nHost".to_vec());
        assert!(read_head(&mut c, plain_line).is_err());
    }

    #[test]
    fn decodes_chunks() {
        let raw = b"5\r\nhello\r\n7;ext=1\r\n, world\r\n0\r\n\r\n".to_vec();
        let mut s = String::new();
        ChunkedReader::new(Cursor::new(raw)).read_to_string(&mut s).unwrap();
        assert_eq!(s, "hello, world");
    }

    #[test]
    fn truncated_chunk_reads_as_eof() {
        let mut s = String::new();
        ChunkedReader::new(Cursor::new(b"a\r\nhell".to_vec())).read_to_string(&mut s).unwrap();
        assert_eq!(s, "hell");
        assert!(ChunkedReader::new(Cursor::new(b"zz\r\n".to_vec())).read_to_string(&mut s).is_err());
    }
}
