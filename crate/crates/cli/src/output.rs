//! Deterministic file emission: floats are written in shortest round-trip
//! form, so equal runs give equal bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliError;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// A CSV table of numbers under a header row, buffered in memory.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header.iter().map(AsRef::as_ref))
            .expect("writing to memory");
        Self { writer }
    }

    /// One record; tuples and sequences are flattened into cells.
    pub fn row<R: Serialize>(&mut self, cells: R) {
        self.writer.serialize(cells).expect("writing to memory");
    }

    pub fn into_string(self) -> String {
        let bytes = self.writer.into_inner().expect("writing to memory");
        String::from_utf8(bytes).expect("csv output is utf-8")
    }

    pub fn write(self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.into_string()).map_err(io_err(path))
    }
}

/// The `q`-quantile by the nearest-rank rule; `values` must be nonempty.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// The middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Counts of `values` in `bins` equal bins over `[min, max]`; the last bin
/// is closed.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (lo + k as f64 * width, lo + (k + 1) as f64 * width, c))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_histograms() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.95), 5.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(median(&v), 3.0);
        assert_eq!(median(&[1.0, 2.0]), 1.5);
        let h = histogram(&v, 2);
        assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), vec![2, 3]);
        assert_eq!(h[1].1, 5.0);
        let flat = histogram(&[1.0, 1.0], 3);
        assert_eq!(flat[0].2, 2);
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(&["a", "b"]);
        t.row([1.0, 0.5]);
        let mut u = Table::new(&["k", "x", "y"]);
        u.row((3usize, [0.25, 1.0]));
        assert_eq!(t.into_string(), "a,b\n1.0,0.5\n");
        assert_eq!(u.into_string(), "k,x,y\n3,0.25,1.0\n");
    }
}
