use std::io::Write;
use std::time::{SystemTime, UNIX_EPOCH};

pub const BENCH_HEADER: [&str; 8] = ["experiment", "n", "backend", "metric", "value", "units", "seed", "timestamp"];

/// Metrics whose values come from a clock.
const TIMING_METRICS: [&str; 3] = ["median_time", "loglog_slope", "solve_time"];

/// One measured quantity.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub experiment: String,
    pub n: Option<usize>,
    pub backend: String,
    pub metric: String,
    pub value: f64,
    pub units: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: f64,
}

impl BenchRecord {
    pub fn new(experiment: &str, n: Option<usize>, backend: &str, metric: &str, value: f64, units: &str, seed: u64) -> Self {
        Self {
            experiment: experiment.into(),
            n,
            backend: backend.into(),
            metric: metric.into(),
            value,
            units: units.into(),
            seed,
            timestamp: now(),
        }
    }

    pub fn is_timing(&self) -> bool {
        TIMING_METRICS.contains(&self.metric.as_str())
    }
}

pub fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

pub fn write_bench<W: Write>(out: W, records: &[BenchRecord]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.n.map(|n| n.to_string()).unwrap_or_default(),
            r.backend.clone(),
            r.metric.clone(),
            r.value.to_string(),
            r.units.clone(),
            r.seed.to_string(),
            format!("{:.3}", r.timestamp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn is_timing_column(name: &str) -> bool {
    name == "timestamp" || name.ends_with("_time_s") || name.ends_with("_time_us")
}

/// Blanks every clock-derived field of a CSV produced by this crate: columns
/// named `timestamp` or `*_time_s`/`*_time_us`, and the `value` of bench
/// rows holding a timing metric.
pub fn mask_timing(text: &str) -> csv::Result<String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let metric = header.iter().position(|h| h == "metric");
    let value = header.iter().position(|h| h == "value");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in rdr.records() {
        let row = row?;
        let timing_row = metric.is_some_and(|m| TIMING_METRICS.contains(&&row[m]));
        let masked: Vec<&str> = row
            .iter()
            .enumerate()
            .map(|(i, f)| {
                if is_timing_column(&header[i]) || (timing_row && Some(i) == value) {
                    ""
                } else {
                    f
                }
            })
            .collect();
        w.write_record(masked)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
