//! Software bandwidth throttle for loopback experiments.

use std::io::{self, Write};
use std::thread;
use std::time::{Duration, Instant};

const CHUNK: usize = 4096;

/// Writes `buf` so that its last byte leaves no earlier than
/// `8·len / (mbps·10⁶)` seconds after the call; `None` writes at full speed.
pub fn paced_write<W: Write>(w: &mut W, buf: &[u8], mbps: Option<f64>) -> io::Result<()> {
    let Some(mbps) = mbps.filter(|m| m.is_finite()) else {
        w.write_all(buf)?;
        return w.flush();
    };
    let bytes_per_sec = mbps * 1e6 / 8.0;
    let start = Instant::now();
    let mut sent = 0usize;
    for chunk in buf.chunks(CHUNK) {
        sent += chunk.len();
        let due = start + Duration::from_secs_f64(sent as f64 / bytes_per_sec);
        if let Some(wait) = due.checked_duration_since(Instant::now()) {
            thread::sleep(wait);
        }
        w.write_all(chunk)?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paced_duration_tracks_bandwidth() {
        let buf = vec![7u8; 62_500];
        let mut sink = Vec::new();
        let t = Instant::now();
        paced_write(&mut sink, &buf, Some(50.0)).unwrap();
        let ms = t.elapsed().as_secs_f64() * 1e3;
        assert_eq!(sink, buf);
        // 62.5 kB at 50 Mbps = 10 ms
        assert!((10.0..20.0).contains(&ms), "{ms}");
        let mut sink = Vec::new();
        paced_write(&mut sink, &buf, None).unwrap();
        assert_eq!(sink.len(), buf.len());
    }
}
