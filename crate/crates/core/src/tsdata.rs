//! Multivariate time-series container, CSV I/O, centering and concatenation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A `T x N` multivariate time series (rows are time points).
///
/// `segment_boundaries` holds the 0-based index of the first row of every
/// appended segment after a concatenation, so `[197]` marks a join between
/// rows 196 and 197. Regression rows whose lags straddle a boundary are
/// excluded by the VAR fitters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: DMatrix<f64>,
    channel_names: Vec<String>,
    segment_boundaries: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Standardization {
    Demean,
    ZScore,
}

/// Output of [`Dataset::standardize`].
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: Dataset,
    /// Columns that had zero variance in at least one segment. They are
    /// centered but not scaled.
    pub zero_variance: Vec<usize>,
}

impl Dataset {
    pub fn new(values: DMatrix<f64>, channel_names: Vec<String>) -> Result<Self> {
        Self::with_boundaries(values, channel_names, Vec::new())
    }

    /// Channel names default to `ch1..chN`.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let names = default_names(values.ncols());
        Self::new(values, names)
    }

    pub fn with_boundaries(
        values: DMatrix<f64>,
        channel_names: Vec<String>,
        segment_boundaries: Vec<usize>,
    ) -> Result<Self> {
        let (t, n) = values.shape();
        if t == 0 || n == 0 {
            return Err(Error::Empty(format!("dataset of shape {t}x{n}")));
        }
        if channel_names.len() != n {
            return Err(Error::Dimension(format!(
                "{} channel names for {n} columns",
                channel_names.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {}, column {}",
                pos % t + 1,
                pos / t + 1
            )));
        }
        let mut prev = 0;
        for &b in &segment_boundaries {
            if b <= prev || b >= t {
                return Err(Error::InvalidArgument(format!(
                    "segment boundaries must be strictly increasing within 1..{t}, got {segment_boundaries:?}"
                )));
            }
            prev = b;
        }
        Ok(Self {
            values,
            channel_names,
            segment_boundaries,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn segment_boundaries(&self) -> &[usize] {
        &self.segment_boundaries
    }

    pub fn n_times(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.values.ncols()
    }

    /// Contiguous row ranges between boundaries.
    pub fn segments(&self) -> Vec<Range<usize>> {
        segments_of(self.n_times(), &self.segment_boundaries)
    }

    /// Reads a comma-separated file whose rows are time points.
    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, has_header)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, has_header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut names: Option<Vec<String>> = None;
        let mut data: Vec<f64> = Vec::new();
        let mut width: Option<usize> = None;
        let mut n_rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i + 1;
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            match width {
                None => width = Some(rec.len()),
                Some(w) if w != rec.len() => {
                    return Err(Error::RaggedRow {
                        row: line,
                        found: rec.len(),
                        expected: w,
                    })
                }
                _ => {}
            }
            if has_header && names.is_none() {
                names = Some(rec.iter().map(str::to_string).collect());
                continue;
            }
            for (j, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                    row: line,
                    column: j + 1,
                    value: cell.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(Error::NonNumeric {
                        row: line,
                        column: j + 1,
                        value: cell.to_string(),
                    });
                }
                data.push(v);
            }
            n_rows += 1;
        }
        let n = match width {
            Some(w) if n_rows > 0 => w,
            _ => return Err(Error::Empty("csv has no data rows".into())),
        };
        let values = DMatrix::from_row_slice(n_rows, n, &data);
        let names = names.unwrap_or_else(|| default_names(n));
        Self::new(values, names)
    }

    /// Writes a header row followed by one row per time point, each value
    /// with 15 significant digits.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_csv(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{}", self.channel_names.join(","))?;
        write_matrix_rows(w, &self.values)
    }

    /// Centers (and optionally scales) each column within each segment.
    pub fn standardize(&self, mode: Standardization) -> Result<Standardized> {
        let segments = self.segments();
        if mode == Standardization::ZScore {
            if let Some(seg) = segments.iter().find(|s| s.len() < 2) {
                return Err(Error::InvalidArgument(format!(
                    "z-scoring needs at least 2 time points per segment, segment {seg:?} has {}",
                    seg.len()
                )));
            }
        }
        let mut values = self.values.clone();
        let mut zero_variance = Vec::new();
        for j in 0..self.n_channels() {
            let mut flagged = false;
            for seg in &segments {
                let len = seg.len() as f64;
                let mut col = values.view_mut((seg.start, j), (seg.len(), 1));
                let mean = col.sum() / len;
                col.add_scalar_mut(-mean);
                if mode == Standardization::ZScore {
                    let var = col.norm_squared() / (len - 1.0);
                    if var > 0.0 {
                        col /= var.sqrt();
                    } else {
                        col.fill(0.0);
                        flagged = true;
                    }
                }
            }
            if flagged {
                zero_variance.push(j);
            }
        }
        Ok(Standardized {
            data: Self {
                values,
                channel_names: self.channel_names.clone(),
                segment_boundaries: self.segment_boundaries.clone(),
            },
            zero_variance,
        })
    }

    /// Stacks datasets in order, recording a boundary at every join.
    pub fn concatenate(datasets: &[Dataset]) -> Result<Dataset> {
        let first = datasets
            .first()
            .ok_or_else(|| Error::Empty("no datasets to concatenate".into()))?;
        let n = first.n_channels();
        for (i, d) in datasets.iter().enumerate().skip(1) {
            if d.n_channels() != n {
                return Err(Error::Dimension(format!(
                    "dataset {i} has {} channels, expected {n}",
                    d.n_channels()
                )));
            }
            if d.channel_names != first.channel_names {
                return Err(Error::Dimension(format!(
                    "dataset {i} channel names differ from dataset 0"
                )));
            }
        }
        let total: usize = datasets.iter().map(Dataset::n_times).sum();
        let mut values = DMatrix::zeros(total, n);
        let mut boundaries = Vec::new();
        let mut offset = 0;
        for d in datasets {
            if offset > 0 {
                boundaries.push(offset);
            }
            boundaries.extend(d.segment_boundaries.iter().map(|b| b + offset));
            values
                .view_mut((offset, 0), d.values.shape())
                .copy_from(&d.values);
            offset += d.n_times();
        }
        Dataset::with_boundaries(values, first.channel_names.clone(), boundaries)
    }

    /// Rows selected by `rows` (in order), with boundaries inserted wherever
    /// consecutive selected rows are not adjacent or cross an existing
    /// boundary.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::Empty("no rows selected".into()));
        }
        let n = self.n_channels();
        let mut values = DMatrix::zeros(rows.len(), n);
        let mut boundaries = Vec::new();
        for (k, &r) in rows.iter().enumerate() {
            values.set_row(k, &self.values.row(r));
            if k > 0 {
                let prev = rows[k - 1];
                let joined = r == prev + 1 && !self.segment_boundaries.contains(&r);
                if !joined {
                    boundaries.push(k);
                }
            }
        }
        Dataset::with_boundaries(values, self.channel_names.clone(), boundaries)
    }
}

pub(crate) fn default_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("ch{i}")).collect()
}

pub(crate) fn segments_of(t: usize, boundaries: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(boundaries.len() + 1);
    let mut start = 0;
    for &b in boundaries {
        out.push(start..b);
        start = b;
    }
    out.push(start..t);
    out
}

/// Formats a value with 15 significant digits, in plain notation when the
/// exponent is moderate and scientific otherwise (like C's `%.15g`).
pub fn format_sig15(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.14e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        trim_zeros(&s).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub(crate) fn write_matrix_rows<W: Write>(w: &mut W, m: &DMatrix<f64>) -> std::io::Result<()> {
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| format_sig15(v)).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: usize, cols: usize, data: &[f64]) -> Dataset {
        Dataset::from_values(DMatrix::from_row_slice(rows, cols, data)).unwrap()
    }

    #[test]
    fn loads_zero_matrix_without_header() {
        let d = Dataset::read_csv("0,0\n0,0\n0,0\n".as_bytes(), false).unwrap();
        assert_eq!((d.n_times(), d.n_channels()), (3, 2));
        assert!(d.values().iter().all(|&v| v == 0.0));
        assert_eq!(d.channel_names(), &["ch1", "ch2"]);
    }

    #[test]
    fn header_names_are_used() {
        let d = Dataset::read_csv("a,b\n1,2\n3,4\n".as_bytes(), true).unwrap();
        assert_eq!(d.channel_names(), &["a", "b"]);
        assert_eq!(d.n_times(), 2);
        assert_eq!(d.values()[(1, 0)], 3.0);
    }

    #[test]
    fn ragged_row_is_reported() {
        let err = Dataset::read_csv("1,2,3\n4,5\n".as_bytes(), false).unwrap_err();
        assert!(
            matches!(
                err,
                Error::RaggedRow {
                    row: 2,
                    found: 2,
                    expected: 3
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn non_numeric_cell_is_reported() {
        let err = Dataset::read_csv("1,2\n3,x\n".as_bytes(), false).unwrap_err();
        assert!(
            matches!(
                err,
                Error::NonNumeric {
                    row: 2,
                    column: 2,
                    ..
                }
            ),
            "{err}"
        );
        let err = Dataset::read_csv("1,NaN\n".as_bytes(), false).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { .. }));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(
            Dataset::read_csv("".as_bytes(), false),
            Err(Error::Empty(_))
        ));
        assert!(matches!(
            Dataset::read_csv("a,b\n".as_bytes(), true),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn demean_and_zscore() {
        let d = ds(3, 1, &[1.0, 2.0, 3.0]);
        let s = d.standardize(Standardization::Demean).unwrap();
        assert_eq!(s.data.values().as_slice(), &[-1.0, 0.0, 1.0]);

        let d = ds(2, 1, &[2.0, 4.0]);
        let s = d.standardize(Standardization::ZScore).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.data.values()[0] + h).abs() < 1e-12);
        assert!((s.data.values()[1] - h).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_flagged() {
        let d = ds(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 4.0]);
        let s = d.standardize(Standardization::ZScore).unwrap();
        assert_eq!(s.zero_variance, vec![0]);
        assert!(s.data.values().column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zscore_needs_two_points() {
        let d = ds(1, 2, &[1.0, 2.0]);
        assert!(d.standardize(Standardization::ZScore).is_err());
        assert!(d.standardize(Standardization::Demean).is_ok());
    }

    #[test]
    fn standardization_is_per_segment() {
        let a = ds(2, 1, &[1.0, 3.0]);
        let b = ds(2, 1, &[10.0, 14.0]);
        let c = Dataset::concatenate(&[a, b]).unwrap();
        let s = c.standardize(Standardization::Demean).unwrap();
        assert_eq!(s.data.values().as_slice(), &[-1.0, 1.0, -2.0, 2.0]);
    }

    #[test]
    fn concatenation_records_boundaries() {
        let a = Dataset::from_values(DMatrix::zeros(197, 3)).unwrap();
        let c = Dataset::concatenate(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(c.n_times(), 394);
        assert_eq!(c.segment_boundaries(), &[197]);
        assert_eq!(c.segments(), vec![0..197, 197..394]);

        let single = Dataset::concatenate(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn concatenation_rejects_mismatched_channels() {
        let a = Dataset::from_values(DMatrix::zeros(5, 90)).unwrap();
        let b = Dataset::from_values(DMatrix::zeros(5, 89)).unwrap();
        assert!(matches!(
            Dataset::concatenate(&[a, b]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn select_rows_marks_gaps() {
        let d = ds(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let s = d.select_rows(&[0, 1, 3, 4]).unwrap();
        assert_eq!(s.segment_boundaries(), &[2]);
        assert_eq!(s.values().as_slice(), &[0.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn sig15_formatting() {
        assert_eq!(format_sig15(0.0), "0");
        assert_eq!(format_sig15(1.5), "1.5");
        assert_eq!(format_sig15(-0.25), "-0.25");
        assert_eq!(format_sig15(1.0 / 3.0), "0.333333333333333");
        assert_eq!(format_sig15(1e-20), "1e-20");
        assert_eq!(format_sig15(123456.0), "123456");
    }

    fn matrix_strategy() -> impl Strategy<Value = DMatrix<f64>> {
        (1usize..6, 1usize..5).prop_flat_map(|(t, n)| {
            proptest::collection::vec(-1e6f64..1e6, t * n)
                .prop_map(move |v| DMatrix::from_row_slice(t, n, &v))
        })
    }

    proptest! {
        #[test]
        fn csv_round_trip_to_15_digits(m in matrix_strategy()) {
            let d = Dataset::from_values(m).unwrap();
            let mut buf = Vec::new();
            d.write_csv(&mut buf).unwrap();
            let back = Dataset::read_csv(buf.as_slice(), true).unwrap();
            prop_assert_eq!(back.channel_names(), d.channel_names());
            for (a, b) in back.values().iter().zip(d.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-14 * b.abs().max(1e-300));
            }
        }

        #[test]
        fn demean_is_idempotent(m in matrix_strategy()) {
            let d = Dataset::from_values(m).unwrap();
            let once = d.standardize(Standardization::Demean).unwrap().data;
            let twice = once.standardize(Standardization::Demean).unwrap().data;
            for (a, b) in once.values().iter().zip(twice.values().iter()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
        }

        #[test]
        fn concatenation_is_associative(a in matrix_strategy(), b in matrix_strategy(), c in matrix_strategy()) {
            let n = a.ncols();
            let fit = |m: DMatrix<f64>| {
                let cols = m.ncols().min(n);
                let mut out = DMatrix::zeros(m.nrows(), n);
                out.view_mut((0, 0), (m.nrows(), cols)).copy_from(&m.columns(0, cols));
                Dataset::from_values(out).unwrap()
            };
            let (a, b, c) = (fit(a), fit(b), fit(c));
            let left = Dataset::concatenate(&[Dataset::concatenate(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let right = Dataset::concatenate(&[a, Dataset::concatenate(&[b, c]).unwrap()]).unwrap();
            prop_assert_eq!(left, right);
        }
    }
}
