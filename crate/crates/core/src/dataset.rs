//! Uniformly sampled input/output records: CSV ingestion and export,
//! zero-phase low-pass filtering and contiguous train/validation splits.
//!
//! CSV layout: a header `t,u1,…,up,y1,…,yq` followed by one sample per row.
//! Forces are in newtons, angles in radians, time in seconds.

use std::fs::File;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative tolerance on the spacing of the time column.
pub const TIME_GRID_TOL: f64 = 0.01;

/// `m` samples × `c` channels sampled every `sample_time_s` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    sample_time_s: f64,
    values: DMatrix<f64>,
    channel_names: Vec<String>,
}

impl TimeSeries {
    pub fn new(sample_time_s: f64, values: DMatrix<f64>, channel_names: Vec<String>) -> Result<Self> {
        if !(sample_time_s > 0.0) || !sample_time_s.is_finite() {
            return Err(Error::Data(format!("sample time must be positive, got {sample_time_s}")));
        }
        if values.nrows() < 2 {
            return Err(Error::Data(format!("need at least 2 samples, got {}", values.nrows())));
        }
        if channel_names.len() != values.ncols() {
            return Err(Error::Dimension(format!(
                "{} channel names for {} channels",
                channel_names.len(),
                values.ncols()
            )));
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at sample {}",
                idx % values.nrows()
            )));
        }
        Ok(TimeSeries { sample_time_s, values, channel_names })
    }

    /// Builds a series with generated names `{prefix}1..{prefix}c`.
    pub fn with_prefix(sample_time_s: f64, values: DMatrix<f64>, prefix: &str) -> Result<Self> {
        let names = (1..=values.ncols()).map(|k| format!("{prefix}{k}")).collect();
        Self::new(sample_time_s, values, names)
    }

    pub fn sample_time_s(&self) -> f64 {
        self.sample_time_s
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Rows `start..end` as a new series.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.len() || start >= end {
            return Err(Error::Data(format!("invalid slice {start}..{end} of {} samples", self.len())));
        }
        let rows = self.values.rows(start, end - start).clone_owned();
        Self::new(self.sample_time_s, rows, self.channel_names.clone())
    }
}

/// Paired input (tendon forces) and output (joint angles) records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: TimeSeries,
    outputs: TimeSeries,
}

impl Dataset {
    pub fn new(inputs: TimeSeries, outputs: TimeSeries) -> Result<Self> {
        if inputs.len() != outputs.len() {
            return Err(Error::Dimension(format!(
                "inputs have {} samples, outputs {}",
                inputs.len(),
                outputs.len()
            )));
        }
        if (inputs.sample_time_s - outputs.sample_time_s).abs() > 1e-12 * inputs.sample_time_s {
            return Err(Error::Data("inputs and outputs have different sample times".into()));
        }
        if inputs.channels() == 0 || outputs.channels() == 0 {
            return Err(Error::Data("dataset needs at least one input and one output".into()));
        }
        Ok(Dataset { inputs, outputs })
    }

    pub fn from_matrices(sample_time_s: f64, u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        Self::new(
            TimeSeries::with_prefix(sample_time_s, u, "u")?,
            TimeSeries::with_prefix(sample_time_s, y, "y")?,
        )
    }

    pub fn inputs(&self) -> &TimeSeries {
        &self.inputs
    }

    pub fn outputs(&self) -> &TimeSeries {
        &self.outputs
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.inputs.values
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.outputs.values
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_inputs(&self) -> usize {
        self.inputs.channels()
    }

    pub fn num_outputs(&self) -> usize {
        self.outputs.channels()
    }

    pub fn sample_time_s(&self) -> f64 {
        self.inputs.sample_time_s
    }

    pub fn with_outputs(&self, outputs: TimeSeries) -> Result<Self> {
        Dataset::new(self.inputs.clone(), outputs)
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        Dataset::new(self.inputs.slice(start, end)?, self.outputs.slice(start, end)?)
    }
}

fn column_name(names: &[String], k: usize, prefix: char) -> String {
    match names.get(k) {
        Some(n) if n.starts_with(prefix) && !n.contains(',') => n.clone(),
        _ => format!("{prefix}{}", k + 1),
    }
}

/// Reads a dataset from a `t,u*,y*` CSV file.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&shown, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Data(format!("{shown}: {e}")))?
        .clone();

    let mut t_col = None;
    let mut u_cols = Vec::new();
    let mut y_cols = Vec::new();
    for (k, h) in headers.iter().enumerate() {
        if h == "t" {
            t_col = Some(k);
        } else if h.starts_with('u') {
            u_cols.push((k, h.to_string()));
        } else if h.starts_with('y') {
            y_cols.push((k, h.to_string()));
        } else {
            return Err(Error::Data(format!("{shown}: unrecognised column '{h}'")));
        }
    }
    let t_col = t_col.ok_or_else(|| Error::Data(format!("{shown}: missing time column 't'")))?;
    if u_cols.is_empty() || y_cols.is_empty() {
        return Err(Error::Data(format!("{shown}: need at least one u* and one y* column")));
    }

    let mut t = Vec::new();
    let mut u = Vec::new();
    let mut y = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data(format!("{shown}: {e}")))?;
        let cell = |k: usize| -> Result<f64> {
            let s = rec.get(k).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| {
                Error::Data(format!("{shown}: row {}: non-numeric cell '{s}'", row + 2))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!("{shown}: row {}: non-finite cell '{s}'", row + 2)));
            }
            Ok(v)
        };
        t.push(cell(t_col)?);
        for (k, _) in &u_cols {
            u.push(cell(*k)?);
        }
        for (k, _) in &y_cols {
            y.push(cell(*k)?);
        }
    }
    let m = t.len();
    if m < 2 {
        return Err(Error::Data(format!("{shown}: need at least 2 rows, got {m}")));
    }
    let dt = (t[m - 1] - t[0]) / (m - 1) as f64;
    if !(dt > 0.0) {
        return Err(Error::Data(format!("{shown}: time column is not increasing")));
    }
    for k in 1..m {
        let step = t[k] - t[k - 1];
        if step <= 0.0 {
            return Err(Error::Data(format!("{shown}: time not strictly increasing at row {}", k + 2)));
        }
        if (step - dt).abs() > TIME_GRID_TOL * dt {
            return Err(Error::Data(format!(
                "{shown}: non-uniform time grid at row {} (step {step} vs mean {dt})",
                k + 2
            )));
        }
    }
    let inputs = TimeSeries::new(
        dt,
        DMatrix::from_row_slice(m, u_cols.len(), &u),
        u_cols.into_iter().map(|(_, n)| n).collect(),
    )?;
    let outputs = TimeSeries::new(
        dt,
        DMatrix::from_row_slice(m, y_cols.len(), &y),
        y_cols.into_iter().map(|(_, n)| n).collect(),
    )?;
    Dataset::new(inputs, outputs)
}

/// Formats a float with 17 significant digits so that parsing recovers it exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `ds` as CSV; the time column is `k · sample_time_s`.
pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&shown, e))?;
    let mut w = csv::Writer::from_writer(file);
    let map = |e: csv::Error| Error::Data(format!("{shown}: {e}"));

    let mut header = vec!["t".to_string()];
    header.extend((0..ds.num_inputs()).map(|k| column_name(ds.inputs.channel_names(), k, 'u')));
    header.extend((0..ds.num_outputs()).map(|k| column_name(ds.outputs.channel_names(), k, 'y')));
    w.write_record(&header).map_err(map)?;

    let dt = ds.sample_time_s();
    let mut row = Vec::with_capacity(header.len());
    for k in 0..ds.len() {
        row.clear();
        row.push(fmt_f64(k as f64 * dt));
        row.extend(ds.u().row(k).iter().map(|&v| fmt_f64(v)));
        row.extend(ds.y().row(k).iter().map(|&v| fmt_f64(v)));
        w.write_record(&row).map_err(map)?;
    }
    w.flush().map_err(|e| Error::io(&shown, e))
}

/// Pole of the first-order recursion `y_k = (1−β) x_k + β y_{k−1}` whose
/// magnitude response is −3 dB at `cutoff` rad/sample.
pub fn lowpass_pole(cutoff_rad_per_sample: f64) -> Result<f64> {
    let w = cutoff_rad_per_sample;
    if !(w > 0.0 && w < std::f64::consts::PI) {
        return Err(Error::Config(format!("low-pass cutoff must lie in (0, π), got {w}")));
    }
    // |H(e^{jw})|² = ½ with H = (1−β)/(1−βe^{−jw})  ⇔  β² − 2(2−cos w)β + 1 = 0
    let c = 2.0 - w.cos();
    Ok(c - (c * c - 1.0).sqrt())
}

fn first_order_pass(x: &[f64], beta: f64) -> Vec<f64> {
    let alpha = 1.0 - beta;
    let mut out = Vec::with_capacity(x.len());
    let mut state = x[0];
    for &v in x {
        state = alpha * v + beta * state;
        out.push(state);
    }
    out
}

/// Zero-phase low-pass: forward pass, then a pass over the reversed signal.
///
/// Each pass starts from the steady state of its first sample, so constants
/// pass through unchanged.
pub fn lowpass_filter(ts: &TimeSeries, cutoff_rad_per_sample: f64) -> Result<TimeSeries> {
    let beta = lowpass_pole(cutoff_rad_per_sample)?;
    let mut out = ts.values.clone();
    for c in 0..ts.channels() {
        let x: Vec<f64> = ts.values.column(c).iter().copied().collect();
        let mut fwd = first_order_pass(&x, beta);
        fwd.reverse();
        let mut back = first_order_pass(&fwd, beta);
        back.reverse();
        for (k, v) in back.into_iter().enumerate() {
            out[(k, c)] = v;
        }
    }
    TimeSeries::new(ts.sample_time_s, out, ts.channel_names.clone())
}

/// Contiguous split into a `floor(fraction·m)`-sample prefix and the remaining suffix.
pub fn split(ds: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let m = ds.len();
    let cut = (train_fraction * m as f64).floor() as usize;
    if cut < 2 || m - cut < 2 {
        return Err(Error::Data(format!(
            "split of {m} samples at fraction {train_fraction} leaves a part with fewer than 2 samples"
        )));
    }
    Ok((ds.slice(0, cut)?, ds.slice(cut, m)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        let mut f = File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn loads_three_row_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "t,u1,y1\n0,1,2\n0.03,1.5,2.5\n0.06,2,3\n");
        let ds = load_csv(&p).unwrap();
        assert_eq!(ds.len(), 3);
        assert!((ds.sample_time_s() - 0.03).abs() < 1e-15);
        assert_eq!(ds.y()[(2, 0)], 3.0);
    }

    #[test]
    fn rejects_nonuniform_grid() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "t,u1,y1\n0,1,2\n0.03,1,2\n0.10,1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(m)) if m.contains("non-uniform")));
    }

    #[test]
    fn rejects_bad_cells_and_short_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "t,u1,y1\n0,1,abc\n0.03,1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_))));
        let p = write(&dir, "b.csv", "t,u1,y1\n0,1,NaN\n0.03,1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_))));
        let p = write(&dir, "c.csv", "t,u1,y1\n0,1,2\n");
        assert!(matches!(load_csv(&p), Err(Error::Data(_))));
        assert!(matches!(load_csv(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn save_into_missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_matrices(0.1, DMatrix::zeros(3, 1), DMatrix::zeros(3, 1)).unwrap();
        let err = save_csv(&ds, dir.path().join("no/such/dir/x.csv")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        save_csv(&ds, dir.path().join("x.csv")).unwrap();
        assert!(dir.path().join("x.csv").exists());
    }

    #[test]
    fn pole_gives_half_power_at_cutoff() {
        for &w in &[0.001, 0.1, 1.0, 3.0] {
            let b = lowpass_pole(w).unwrap();
            let re = 1.0 - b * w.cos();
            let im = b * w.sin();
            let mag2 = (1.0 - b).powi(2) / (re * re + im * im);
            assert!((mag2 - 0.5).abs() < 1e-9, "w={w} mag2={mag2}");
        }
        assert!(lowpass_pole(0.0).is_err());
        assert!(lowpass_pole(std::f64::consts::PI).is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let u = DMatrix::from_fn(100, 1, |i, _| i as f64);
        let ds = Dataset::from_matrices(0.03, u.clone(), u).unwrap();
        let (a, b) = split(&ds, 0.8).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(b.u()[(0, 0)], 80.0);
        let small = ds.slice(0, 10).unwrap();
        assert!(split(&small, 0.999).is_err());
    }
}
