//! Score files: `#` metadata lines, then `original_id<TAB>score` per vertex,
//! sorted by id.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    /// `key=value` pairs from the header, in order.
    pub meta: Vec<(String, String)>,
    pub scores: BTreeMap<u64, f64>,
}

/// 12 significant digits.
pub fn format_score(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.11e}")
}

impl ScoreFile {
    pub fn new(meta: Vec<(String, String)>, ids: &[u64], scores: &[f64]) -> Self {
        assert_eq!(ids.len(), scores.len());
        ScoreFile {
            meta,
            scores: ids.iter().copied().zip(scores.iter().copied()).collect(),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn write<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# adaptive-bc scores")?;
        for (k, v) in &self.meta {
            writeln!(out, "# {k}={v}")?;
        }
        for (id, s) in &self.scores {
            writeln!(out, "{id}\t{}", format_score(*s))?;
        }
        out.flush()
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self, String> {
        let mut meta = Vec::new();
        let mut scores = BTreeMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.push((k.trim().to_string(), v.trim().to_string()));
                }
                continue;
            }
            let bad = || format!("line {}: expected `id<TAB>score`, got {line:?}", i + 1);
            let (id, score) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
            let id: u64 = id.parse().map_err(|_| bad())?;
            let score: f64 = score.trim().parse().map_err(|_| bad())?;
            if scores.insert(id, score).is_some() {
                return Err(format!("line {}: duplicate vertex {id}", i + 1));
            }
        }
        Ok(ScoreFile { meta, scores })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub max_abs_error: f64,
    pub argmax: Option<u64>,
    pub above_eps: usize,
    /// `(k, |top_k(approx) ∩ top_k(exact)|)`.
    pub top_k_overlap: Vec<(usize, usize)>,
}

fn top_k(s: &BTreeMap<u64, f64>, k: usize) -> Vec<u64> {
    let mut v: Vec<(u64, f64)> = s.iter().map(|(&id, &x)| (id, x)).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(id, _)| id).collect()
}

/// `Err` if the vertex sets differ.
pub fn compare(approx: &ScoreFile, exact: &ScoreFile, eps: f64) -> Result<Comparison, String> {
    if approx.scores.len() != exact.scores.len() || approx.scores.keys().ne(exact.scores.keys()) {
        let missing = exact.scores.keys().filter(|k| !approx.scores.contains_key(k)).count();
        let extra = approx.scores.keys().filter(|k| !exact.scores.contains_key(k)).count();
        return Err(format!(
            "vertex sets differ: {missing} missing from the approximation, {extra} not in the reference"
        ));
    }
    let mut max_abs_error = 0.0;
    let mut argmax = None;
    let mut above_eps = 0;
    for ((&id, &a), &b) in approx.scores.iter().zip(exact.scores.values()) {
        let err = (a - b).abs();
        if err > eps {
            above_eps += 1;
        }
        if err > max_abs_error {
            max_abs_error = err;
            argmax = Some(id);
        }
    }
    let top_k_overlap = [10, 100]
        .into_iter()
        .map(|k| {
            let a = top_k(&approx.scores, k);
            let b = top_k(&exact.scores, k);
            (k, a.iter().filter(|x| b.contains(x)).count())
        })
        .collect();
    Ok(Comparison {
        max_abs_error,
        argmax,
        above_eps,
        top_k_overlap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_within_an_ulp() {
        let ids = [3, 1, 2, 10];
        let scores = [1.0 / 3.0, 0.0, 0.123456789012345, 1.0];
        let f = ScoreFile::new(vec![("eps".into(), "0.1".into())], &ids, &scores);
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# adaptive-bc scores\n# eps=0.1\n1\t0\n2\t"));
        let back = ScoreFile::read(&buf[..]).unwrap();
        assert_eq!(back.meta("eps"), Some("0.1"));
        for (id, s) in ids.iter().zip(scores) {
            let got = back.scores[id];
            assert!((got - s).abs() <= s * 1e-11, "{got} vs {s}");
            let again = format_score(got);
            assert_eq!(again, format_score(s));
        }
    }

    #[test]
    fn compare_reports_errors_and_overlap() {
        let ids: Vec<u64> = (0..20).collect();
        let exact: Vec<f64> = (0..20).map(|i| i as f64 / 100.0).collect();
        let mut approx = exact.clone();
        approx[4] += 0.1;
        let a = ScoreFile::new(vec![], &ids, &approx);
        let e = ScoreFile::new(vec![], &ids, &exact);
        let c = compare(&a, &e, 0.05).unwrap();
        assert!((c.max_abs_error - 0.1).abs() < 1e-12);
        assert_eq!(c.argmax, Some(4));
        assert_eq!(c.above_eps, 1);
        assert_eq!(c.top_k_overlap, vec![(10, 9), (100, 20)]);
        let c = compare(&e, &e, 0.05).unwrap();
        assert_eq!((c.max_abs_error, c.above_eps), (0.0, 0));
        let short = ScoreFile::new(vec![], &ids[..19], &exact[..19]);
        assert!(compare(&short, &e, 0.05).is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ScoreFile::read(&b"1\tx\n"[..]).is_err());
        assert!(ScoreFile::read(&b"1 0.5\n1 0.5\n"[..]).is_err());
        assert!(ScoreFile::read(&b"# note\n\n7 0.25\n"[..]).is_ok());
    }
}
