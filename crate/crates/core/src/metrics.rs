//! Permutation-matched state accuracy, Frobenius errors and benchmark
//! records.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tsdata::format_sig15;

/// Largest `K` for which all `K!` label permutations are enumerated.
pub const MAX_PERMUTATION_K: usize = 6;

/// All permutations of `0..k` in lexicographic order.
pub fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    let mut used = vec![false; k];
    fn rec(k: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(k, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    rec(k, &mut cur, &mut used, &mut out);
    out
}

/// Fraction of time points where `perm[est[t]] == truth[t]`, maximized over
/// label permutations. Returns the accuracy and the maximizing `perm`
/// (estimated label -> true label; the first in lexicographic order on
/// ties). Labels are 0-based.
pub fn state_accuracy(est: &[usize], truth: &[usize], k: usize) -> Result<(f64, Vec<usize>)> {
    if est.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "estimated sequence has {} points, truth has {}",
            est.len(),
            truth.len()
        )));
    }
    if est.is_empty() {
        return Err(Error::Empty("state sequences".into()));
    }
    if k == 0 || k > MAX_PERMUTATION_K {
        return Err(Error::InvalidArgument(format!(
            "K={k} outside 1..={MAX_PERMUTATION_K}"
        )));
    }
    if est.iter().chain(truth).any(|&s| s >= k) {
        return Err(Error::InvalidArgument(format!("labels must lie in 0..{k}")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&e, &t) in est.iter().zip(truth) {
        confusion[e][t] += 1;
    }
    let mut best = (0, (0..k).collect::<Vec<_>>());
    for perm in permutations(k) {
        let hits: usize = (0..k).map(|e| confusion[e][perm[e]]).sum();
        if hits > best.0 {
            best = (hits, perm);
        }
    }
    Ok((best.0 as f64 / est.len() as f64, best.1))
}

/// `||est - truth||_F^2`.
pub fn frob_error(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<f64> {
    if est.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "shapes {:?} and {:?} differ",
            est.shape(),
            truth.shape()
        )));
    }
    Ok((est - truth).norm_squared())
}

/// Squared Frobenius error per true regime, summed over lags, after mapping
/// estimated regime `e` to true regime `perm[e]`.
pub fn aligned_frob_errors(
    est: &[Vec<DMatrix<f64>>],
    truth: &[Vec<DMatrix<f64>>],
    perm: &[usize],
) -> Result<Vec<f64>> {
    if est.len() != truth.len() || perm.len() != est.len() {
        return Err(Error::Dimension(format!(
            "{} estimated regimes, {} true regimes, permutation of {}",
            est.len(),
            truth.len(),
            perm.len()
        )));
    }
    let mut out = vec![0.0; truth.len()];
    for (e, lags) in est.iter().enumerate() {
        let target = &truth[perm[e]];
        if lags.len() != target.len() {
            return Err(Error::Dimension("lag counts differ".into()));
        }
        for (a, b) in lags.iter().zip(target) {
            out[perm[e]] += frob_error(a, b)?;
        }
    }
    Ok(out)
}

/// One row of the benchmark table. Failed replications keep their identity
/// with empty metrics and the error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub n: usize,
    pub method: String,
    pub replication: usize,
    /// Number of factors used; `None` for methods without factors.
    pub r: Option<usize>,
    pub state_accuracy: Option<f64>,
    /// Filtered-probability accuracy, for the switching-filter methods.
    pub skf_accuracy: Option<f64>,
    /// Per true regime.
    pub frob_sq_error: Vec<f64>,
    pub runtime_ms: f64,
    pub error: Option<String>,
}

impl BenchmarkRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(format_sig15).unwrap_or_default()
}

/// Writes records without the runtime column, so equal inputs give equal
/// bytes. `k` fixes the number of Frobenius columns.
pub fn write_records_csv<W: Write>(
    w: &mut W,
    records: &[BenchmarkRecord],
    k: usize,
) -> std::io::Result<()> {
    let mut header = vec![
        "n".to_string(),
        "method".into(),
        "replication".into(),
        "r".into(),
        "state_accuracy".into(),
        "skf_accuracy".into(),
    ];
    header.extend((1..=k).map(|j| format!("frob_sq_error_{j}")));
    header.push("error".into());
    writeln!(w, "{}", header.join(","))?;
    for rec in records {
        let mut row = vec![
            rec.n.to_string(),
            rec.method.clone(),
            rec.replication.to_string(),
            rec.r.map(|r| r.to_string()).unwrap_or_default(),
            opt(rec.state_accuracy),
            opt(rec.skf_accuracy),
        ];
        row.extend((0..k).map(|j| opt(rec.frob_sq_error.get(j).copied())));
        let err = rec.error.as_deref().unwrap_or("");
        row.push(csv_escape(err));
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

/// Runtime side table keyed like the records.
pub fn write_timings_csv<W: Write>(w: &mut W, records: &[BenchmarkRecord]) -> std::io::Result<()> {
    writeln!(w, "n,method,replication,runtime_ms")?;
    for rec in records {
        writeln!(
            w,
            "{},{},{},{:.3}",
            rec.n, rec.method, rec.replication, rec.runtime_ms
        )?;
    }
    Ok(())
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

/// Parses a file written by [`write_records_csv`]. Runtimes read back as 0.
pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<BenchmarkRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidArgument(format!("records file lacks column {name:?}")))
    };
    let (c_n, c_method, c_rep, c_r) = (col("n")?, col("method")?, col("replication")?, col("r")?);
    let (c_acc, c_skf, c_err) = (col("state_accuracy")?, col("skf_accuracy")?, col("error")?);
    let frob_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("frob_sq_error_"))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let field = |c: usize| row.get(c).unwrap_or("").trim();
        let num = |c: usize| -> Result<Option<f64>> {
            let s = field(c);
            if s.is_empty() {
                return Ok(None);
            }
            s.parse::<f64>().map(Some).map_err(|_| Error::NonNumeric {
                row: line,
                column: c + 1,
                value: s.to_string(),
            })
        };
        let int = |c: usize| -> Result<usize> {
            field(c).parse::<usize>().map_err(|_| Error::NonNumeric {
                row: line,
                column: c + 1,
                value: field(c).to_string(),
            })
        };
        let r = if field(c_r).is_empty() {
            None
        } else {
            Some(int(c_r)?)
        };
        let mut frob = Vec::new();
        for &c in &frob_cols {
            if let Some(v) = num(c)? {
                frob.push(v);
            }
        }
        let err = field(c_err);
        out.push(BenchmarkRecord {
            n: int(c_n)?,
            method: field(c_method).to_string(),
            replication: int(c_rep)?,
            r,
            state_accuracy: num(c_acc)?,
            skf_accuracy: num(c_skf)?,
            frob_sq_error: frob,
            runtime_ms: 0.0,
            error: (!err.is_empty()).then(|| err.to_string()),
        });
    }
    if out.is_empty() {
        return Err(Error::Empty("benchmark records".into()));
    }
    Ok(out)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Some((mean, var.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_sequences_are_perfect() {
        let s = vec![0, 0, 1, 1, 0];
        assert_eq!(state_accuracy(&s, &s, 2).unwrap(), (1.0, vec![0, 1]));
    }

    #[test]
    fn swapped_labels_are_matched() {
        let t = vec![0, 0, 1, 1, 0];
        let e: Vec<usize> = t.iter().map(|s| 1 - s).collect();
        assert_eq!(state_accuracy(&e, &t, 2).unwrap(), (1.0, vec![1, 0]));
    }

    #[test]
    fn constant_estimate_scores_half() {
        let t = vec![0, 0, 1, 1];
        assert_eq!(state_accuracy(&[0; 4], &t, 2).unwrap().0, 0.5);
    }

    #[test]
    fn accuracy_rejects_bad_input() {
        assert!(state_accuracy(&[0, 1], &[0], 2).is_err());
        assert!(state_accuracy(&[0; 3], &[0; 3], 7).is_err());
        assert!(state_accuracy(&[2], &[0], 2).is_err());
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[0], vec![0, 1, 2]);
        assert_eq!(permutations(6).len(), 720);
    }

    #[test]
    fn frobenius_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(frob_error(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[(0, 1)] += 0.5;
        assert_eq!(frob_error(&b, &a).unwrap(), 0.25);
        assert_eq!(frob_error(&DMatrix::zeros(2, 2), &a).unwrap(), 30.0);
        assert!(frob_error(&a, &DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn aligned_errors_follow_permutation() {
        let z = DMatrix::zeros(1, 1);
        let o = DMatrix::from_element(1, 1, 1.0);
        let est = vec![vec![o.clone()], vec![z.clone()]];
        let truth = vec![vec![z], vec![o]];
        assert_eq!(
            aligned_frob_errors(&est, &truth, &[1, 0]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            aligned_frob_errors(&est, &truth, &[0, 1]).unwrap(),
            vec![1.0, 1.0]
        );
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![
            BenchmarkRecord {
                n: 10,
                method: "kmeans".into(),
                replication: 0,
                r: None,
                state_accuracy: Some(0.75),
                skf_accuracy: None,
                frob_sq_error: vec![1.5, 2.25],
                runtime_ms: 3.0,
                error: None,
            },
            BenchmarkRecord {
                n: 20,
                method: "fsvar-coupled".into(),
                replication: 1,
                r: Some(4),
                state_accuracy: None,
                skf_accuracy: None,
                frob_sq_error: vec![],
                runtime_ms: 0.0,
                error: Some("filter diverged, t=3".into()),
            },
        ];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &recs, 2).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(
            back[0],
            BenchmarkRecord {
                runtime_ms: 0.0,
                ..recs[0].clone()
            }
        );
        assert_eq!(back[1], recs[1]);
    }

    #[test]
    fn mean_sd_of_duplicates_is_zero() {
        assert_eq!(mean_sd(&[2.0, 2.0, 2.0]), Some((2.0, 0.0)));
        assert_eq!(mean_sd(&[]), None);
    }
}
