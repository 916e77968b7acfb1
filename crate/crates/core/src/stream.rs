//! Streams of points in `R^d` and their on-disk formats.
//!
//! Single streams are CSV with a `t,c1,...,cd` header (the `t` column is
//! optional). Batches are JSON lines, one `{"t": [...], "x": [[...], ...]}`
//! object per stream.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SigError};

/// An ordered sequence of `n` points in `R^d`, optionally with a time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    points: Vec<f64>,
    channels: usize,
    times: Option<Vec<f64>>,
}

impl Stream {
    /// Row-major `n x d` points.
    pub fn new(points: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(SigError::ZeroChannels);
        }
        if points.is_empty() || points.len() % channels != 0 {
            return Err(SigError::shape(format!(
                "{} values do not form a non-empty stream of {channels}-dimensional points",
                points.len()
            )));
        }
        Ok(Self {
            points,
            channels,
            times: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let channels = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != channels) {
            return Err(SigError::shape("rows have differing lengths"));
        }
        Self::new(rows.concat(), channels)
    }

    /// Attach a strictly increasing time grid with one entry per point.
    pub fn with_times(mut self, times: Vec<f64>) -> Result<Self> {
        if times.len() != self.len() {
            return Err(SigError::shape(format!(
                "{} times for a stream of length {}",
                times.len(),
                self.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SigError::InvalidArgument(
                "times must be strictly increasing".into(),
            ));
        }
        self.times = Some(times);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.channels..(i + 1) * self.channels]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn points_mut(&mut self) -> &mut [f64] {
        &mut self.points
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.channels)
    }

    /// Points `start..end` as a new stream (times carried along).
    pub fn slice(&self, start: usize, end: usize) -> Stream {
        Stream {
            points: self.points[start * self.channels..end * self.channels].to_vec(),
            channels: self.channels,
            times: self.times.as_ref().map(|t| t[start..end].to_vec()),
        }
    }

    /// The time grid, or the uniform grid `i / (n - 1)` when none is attached.
    pub fn time_grid(&self) -> Vec<f64> {
        match &self.times {
            Some(t) => t.clone(),
            None => uniform_grid(self.len()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|v| v.is_finite())
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }

    pub fn translate(&self, offset: &[f64]) -> Stream {
        let mut out = self.clone();
        for row in out.points.chunks_exact_mut(self.channels) {
            for (v, o) in row.iter_mut().zip(offset) {
                *v += o;
            }
        }
        out
    }

    /// Increments `x_{i+1} - x_i`, flattened row-major.
    pub fn increments(&self) -> Vec<f64> {
        let d = self.channels;
        (0..self.len().saturating_sub(1))
            .flat_map(|i| (0..d).map(move |c| (i, c)))
            .map(|(i, c)| self.points[(i + 1) * d + c] - self.points[i * d + c])
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let mut header: Vec<String> = Vec::new();
        if self.times.is_some() {
            header.push("t".into());
        }
        header.extend((1..=self.channels).map(|c| format!("c{c}")));
        s.push_str(&header.join(","));
        s.push('\n');
        for (i, row) in self.rows().enumerate() {
            let mut fields: Vec<String> = Vec::with_capacity(row.len() + 1);
            if let Some(t) = &self.times {
                fields.push(format!("{}", t[i]));
            }
            fields.extend(row.iter().map(|v| format!("{v}")));
            let _ = writeln!(s, "{}", fields.join(","));
        }
        s
    }

    /// Parse the single-stream CSV format. Line numbers in errors are 1-based.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(SigError::Parse {
            line: 1,
            msg: "empty input".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let has_t = cols.first() == Some(&"t");
        let channels = cols.len() - usize::from(has_t);
        if channels == 0 {
            return Err(SigError::Parse {
                line: 1,
                msg: "header declares no value channels".into(),
            });
        }
        let mut points = Vec::new();
        let mut times = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(SigError::Parse {
                    line: idx + 1,
                    msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            for (j, f) in fields.iter().enumerate() {
                let v: f64 = f.parse().map_err(|_| SigError::Parse {
                    line: idx + 1,
                    msg: format!("cannot parse {f:?} as a number"),
                })?;
                if has_t && j == 0 {
                    times.push(v);
                } else {
                    points.push(v);
                }
            }
        }
        if points.is_empty() {
            return Err(SigError::Parse {
                line: 2,
                msg: "no data rows".into(),
            });
        }
        let s = Stream::new(points, channels)?;
        if has_t {
            s.with_times(times)
        } else {
            Ok(s)
        }
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    fn to_record(&self) -> StreamRecord {
        StreamRecord {
            t: self.times.clone(),
            x: self.to_rows(),
        }
    }

    fn from_record(rec: StreamRecord) -> Result<Self> {
        let s = Stream::from_rows(&rec.x)?;
        match rec.t {
            Some(t) => s.with_times(t),
            None => Ok(s),
        }
    }
}

/// The grid `i / (n - 1)`, or `[0]` for a single point.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.0; n];
    }
    let denom = (n - 1) as f64;
    (0..n).map(|i| i as f64 / denom).collect()
}

#[derive(Serialize, Deserialize)]
struct StreamRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
    x: Vec<Vec<f64>>,
}

/// Streams sharing one length and channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBatch {
    streams: Vec<Stream>,
}

impl StreamBatch {
    pub fn new(streams: Vec<Stream>) -> Result<Self> {
        if let Some(first) = streams.first() {
            let (n, d) = (first.len(), first.channels());
            if let Some(i) = streams
                .iter()
                .position(|s| s.len() != n || s.channels() != d)
            {
                return Err(SigError::shape(format!(
                    "stream {i} has shape ({}, {}), batch expects ({n}, {d})",
                    streams[i].len(),
                    streams[i].channels()
                )));
            }
        }
        Ok(Self { streams })
    }

    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn into_streams(self) -> Vec<Stream> {
        self.streams
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.streams.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for s in &self.streams {
            out.push_str(&serde_json::to_string(&s.to_record())?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut streams = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: StreamRecord = serde_json::from_str(line).map_err(|e| SigError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            let s = Stream::from_record(rec).map_err(|e| SigError::Parse {
                line: idx + 1,
                msg: e.to_string(),
            })?;
            streams.push(s);
        }
        Self::new(streams)
    }

    pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_with_and_without_time() {
        let s = Stream::from_csv("t,c1,c2\n0,0,0\n0.5,1,2\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.times(), Some(&[0.0, 0.5][..]));
        assert_eq!(s.point(1), &[1.0, 2.0]);
        let back = Stream::from_csv(&s.to_csv()).unwrap();
        assert_eq!(back, s);

        let s = Stream::from_csv("c1\n5\n7\n").unwrap();
        assert_eq!(s.channels(), 1);
        assert!(s.times().is_none());
    }

    #[test]
    fn csv_errors_name_the_line() {
        let err = Stream::from_csv("c1,c2\n0,0\n1,oops\n").unwrap_err();
        match err {
            SigError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let err = Stream::from_csv("c1,c2\n0,0\n1\n").unwrap_err();
        assert!(matches!(err, SigError::Parse { line: 3, .. }));
    }

    #[test]
    fn times_must_increase() {
        let s = Stream::new(vec![1.0, 2.0, 3.0], 1).unwrap();
        assert!(s.clone().with_times(vec![0.0, 0.0, 1.0]).is_err());
        assert!(s.clone().with_times(vec![0.0, 1.0]).is_err());
        assert!(s.with_times(vec![0.0, 0.1, 1.0]).is_ok());
    }

    #[test]
    fn batch_jsonl_roundtrip_and_shape_check() {
        let a = Stream::new(vec![0.0, 1.0, 2.0], 1)
            .unwrap()
            .with_times(vec![0.0, 0.5, 1.0])
            .unwrap();
        let b = Stream::new(vec![3.0, 1.0, 0.0], 1).unwrap();
        let batch = StreamBatch::new(vec![a, b]).unwrap();
        let text = batch.to_jsonl().unwrap();
        assert_eq!(StreamBatch::from_jsonl(&text).unwrap(), batch);

        let c = Stream::new(vec![0.0, 1.0], 1).unwrap();
        assert!(StreamBatch::new(vec![batch.streams()[0].clone(), c]).is_err());
    }
}
