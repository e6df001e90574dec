//! Beat evaluation: ±70 ms F-measure, latency arithmetic, annotation files.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{HOP, SAMPLE_RATE};
use crate::encoder::BlockConfig;

pub const DEFAULT_TOLERANCE_S: f64 = 0.070;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub matched: usize,
    pub n_ref: usize,
    pub n_est: usize,
}

impl EvalResult {
    pub fn from_counts(matched: usize, n_ref: usize, n_est: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (precision, recall) = (ratio(matched, n_est), ratio(matched, n_ref));
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        EvalResult {
            f1,
            precision,
            recall,
            matched,
            n_ref,
            n_est,
        }
    }
}

/// Greedy one-to-one matching in time order: each estimate takes the earliest
/// unmatched reference within `tolerance_s`. Both lists must be sorted.
pub fn f_measure(reference: &[f64], estimated: &[f64], tolerance_s: f64) -> EvalResult {
    let mut next_ref = 0;
    let mut matched = 0;
    for &e in estimated {
        while next_ref < reference.len() && e - reference[next_ref] > tolerance_s {
            next_ref += 1;
        }
        if next_ref < reference.len() && (reference[next_ref] - e).abs() <= tolerance_s {
            matched += 1;
            next_ref += 1;
        }
    }
    EvalResult::from_counts(matched, reference.len(), estimated.len())
}

/// Algorithmic latency of a block layout, rounded to whole milliseconds.
pub fn latency_ms(block: &BlockConfig) -> u64 {
    ((block.n_center + block.n_right) as f64 * HOP as f64 / SAMPLE_RATE as f64 * 1000.0).round()
        as u64
}

/// One line of a beat file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    pub time_s: f64,
    /// Position in the bar (1 = downbeat) when known.
    pub beat_number: Option<usize>,
}

#[derive(Debug, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

/// Parses `<time>[<space|tab><beat number>]` lines; blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ParseError {
            line: i + 1,
            message,
        };
        let mut fields = line.split_whitespace();
        let time_s: f64 = fields
            .next()
            .expect("non-empty line")
            .parse()
            .map_err(|_| err(format!("bad time in {line:?}")))?;
        if !time_s.is_finite() || time_s < 0.0 {
            return Err(err(format!("time {time_s} out of range")));
        }
        let beat_number = match fields.next() {
            None => None,
            Some(f) => Some(
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 1.0)
                    .map(|v| v as usize)
                    .ok_or_else(|| err(format!("bad beat number {f:?}")))?,
            ),
        };
        if fields.next().is_some() {
            return Err(err(format!("too many fields in {line:?}")));
        }
        if out.last().is_some_and(|a: &Annotation| a.time_s > time_s) {
            return Err(err("times must be non-decreasing".into()));
        }
        out.push(Annotation {
            time_s,
            beat_number,
        });
    }
    Ok(out)
}

pub fn format_annotations(beats: &[Annotation]) -> String {
    let mut s = String::new();
    for b in beats {
        match b.beat_number {
            Some(n) => writeln!(s, "{:.3}\t{n}", b.time_s),
            None => writeln!(s, "{:.3}", b.time_s),
        }
        .expect("writing to a String");
    }
    s
}

/// Beat and (when every line carries a beat number) downbeat scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FileScores {
    pub beats: EvalResult,
    pub downbeats: Option<EvalResult>,
}

pub fn score_annotations(
    reference: &[Annotation],
    estimated: &[Annotation],
    tolerance_s: f64,
) -> FileScores {
    let times = |a: &[Annotation]| a.iter().map(|x| x.time_s).collect::<Vec<_>>();
    let downs = |a: &[Annotation]| {
        a.iter()
            .filter(|x| x.beat_number == Some(1))
            .map(|x| x.time_s)
            .collect::<Vec<_>>()
    };
    let numbered = |a: &[Annotation]| a.iter().all(|x| x.beat_number.is_some());
    FileScores {
        beats: f_measure(&times(reference), &times(estimated), tolerance_s),
        downbeats: (numbered(reference) && numbered(estimated))
            .then(|| f_measure(&downs(reference), &downs(estimated), tolerance_s)),
    }
}
