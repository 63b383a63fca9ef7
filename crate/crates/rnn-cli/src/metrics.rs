//! Metric rows and the fixed-schema CSV emission.
//!
//! Schema: `epoch,split,loss,perplexity,accuracy,wallclock_ms` with a header
//! row and `.` decimals. Metric files must be byte-identical across reruns
//! with the same seed, so the wallclock column is pinned to 0 and real
//! timings go to stderr instead.

use std::fmt::Write as _;
use std::path::Path;

use rnn::Result;

pub const CSV_HEADER: &str = "epoch,split,loss,perplexity,accuracy,wallclock_ms";

/// `exp(mean negative log-likelihood)`: the uniform model over `V` symbols
/// scores exactly `V`.
pub fn perplexity(mean_nll: f64) -> f64 {
    mean_nll.exp()
}

#[derive(Clone, Debug)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

impl MetricRow {
    fn to_csv(&self) -> String {
        let mut line = String::new();
        write!(
            line,
            "{},{},{},{},{},0",
            self.epoch,
            self.split,
            self.loss,
            perplexity(self.loss),
            self.accuracy
        )
        .unwrap();
        line
    }
}

/// Collects rows, echoes them to stdout and optionally writes the CSV file.
#[derive(Default)]
pub struct Metrics {
    rows: Vec<MetricRow>,
}

impl Metrics {
    pub fn new() -> Metrics {
        Metrics::default()
    }

    pub fn push(&mut self, row: MetricRow) {
        println!("{}", row.to_csv());
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv());
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
