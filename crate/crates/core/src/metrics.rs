//! CSV output: `#`-prefixed `key=value` metadata lines, a header row, then
//! data rows. Floats carry 9 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::marl::EpisodeStats;

pub const TRAIN_HEADER: &str = "episode,mean_global_cost,eval_cost,epsilon,critic_loss,actor_objective";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("trace row {index}: {message}")]
    InvalidTrace { index: usize, message: String },
}

/// 9 significant digits in scientific notation.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.8e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

impl Metadata {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self { config_hash, seed, version: VERSION.to_string() }
    }

    fn render(&self, out: &mut String) {
        let _ = writeln!(out, "# config_hash={}", self.config_hash);
        let _ = writeln!(out, "# seed={}", self.seed);
        let _ = writeln!(out, "# version={}", self.version);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTrace {
    pub metadata: Metadata,
    pub rows: Vec<EpisodeStats>,
}

impl MetricsTrace {
    /// Episodes strictly increasing and every value finite.
    pub fn check(&self) -> Result<(), MetricsError> {
        for (index, row) in self.rows.iter().enumerate() {
            if index > 0 && row.episode <= self.rows[index - 1].episode {
                return Err(MetricsError::InvalidTrace { index, message: "episodes not increasing".into() });
            }
            let values = [row.mean_global_cost, row.eval_cost, row.epsilon, row.critic_loss, row.actor_objective];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(MetricsError::InvalidTrace { index, message: "non-finite value".into() });
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        self.metadata.render(&mut out);
        out.push_str(TRAIN_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.episode,
                fmt_float(r.mean_global_cost),
                fmt_float(r.eval_cost),
                fmt_float(r.epsilon),
                fmt_float(r.critic_loss),
                fmt_float(r.actor_objective)
            );
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Self, MetricsError> {
        let table = Table::parse(text)?;
        if table.header != TRAIN_HEADER {
            return Err(MetricsError::Format { line: table.header_line, message: format!("unexpected header '{}'", table.header) });
        }
        let rows = table
            .rows
            .iter()
            .map(|(line, fields)| {
                let f = |i: usize| -> Result<f64, MetricsError> {
                    fields[i].parse().map_err(|_| MetricsError::Format { line: *line, message: format!("bad number '{}'", fields[i]) })
                };
                if fields.len() != 6 {
                    return Err(MetricsError::Format { line: *line, message: format!("{} fields, expected 6", fields.len()) });
                }
                Ok(EpisodeStats {
                    episode: fields[0]
                        .parse()
                        .map_err(|_| MetricsError::Format { line: *line, message: format!("bad episode '{}'", fields[0]) })?,
                    mean_global_cost: f(1)?,
                    eval_cost: f(2)?,
                    epsilon: f(3)?,
                    critic_loss: f(4)?,
                    actor_objective: f(5)?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { metadata: table.metadata()?, rows })
    }
}

/// A parsed CSV file in this dialect.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: String,
    header_line: usize,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self, MetricsError> {
        let mut meta = Vec::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let number = i + 1;
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest.trim().split_once('=').ok_or_else(|| MetricsError::Format {
                    line: number,
                    message: "metadata line without '='".into(),
                })?;
                meta.push((k.to_string(), v.to_string()));
            } else if header.is_none() {
                header = Some((number, line.to_string()));
            } else if !line.is_empty() {
                rows.push((number, line.split(',').map(str::to_string).collect()));
            }
        }
        let (header_line, header) = header.ok_or(MetricsError::Format { line: 0, message: "missing header".into() })?;
        Ok(Self { meta, header, header_line, rows })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn metadata(&self) -> Result<Metadata, MetricsError> {
        let missing = |k: &str| MetricsError::Format { line: 0, message: format!("missing metadata '{k}'") };
        Ok(Metadata {
            config_hash: self.get("config_hash").ok_or_else(|| missing("config_hash"))?.to_string(),
            seed: self
                .get("seed")
                .ok_or_else(|| missing("seed"))?
                .parse()
                .map_err(|_| MetricsError::Format { line: 0, message: "bad seed".into() })?,
            version: self.get("version").ok_or_else(|| missing("version"))?.to_string(),
        })
    }
}

/// Renders an arbitrary table with the standard metadata block and any
/// extra metadata pairs.
pub fn render_table(metadata: &Metadata, extra: &[(&str, String)], header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    metadata.render(&mut out);
    for (k, v) in extra {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), MetricsError> {
    std::fs::write(path, contents).map_err(|source| MetricsError::Io { path: path.display().to_string(), source })
}

pub fn emit_metrics(trace: &MetricsTrace, path: &Path) -> Result<(), MetricsError> {
    trace.check()?;
    write_file(path, &trace.to_csv())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta() -> Metadata {
        Metadata { config_hash: "abc".into(), seed: 42, version: "0.1.0".into() }
    }

    fn row(episode: u32, x: f64) -> EpisodeStats {
        EpisodeStats {
            episode,
            mean_global_cost: x,
            eval_cost: x * 2.0,
            epsilon: 0.5,
            critic_loss: 1.0 / 3.0,
            actor_objective: -x,
        }
    }

    #[test]
    fn empty_trace_has_metadata_and_header_only() {
        let csv = MetricsTrace { metadata: meta(), rows: vec![] }.to_csv();
        assert_eq!(csv, format!("# config_hash=abc\n# seed=42\n# version=0.1.0\n{TRAIN_HEADER}\n"));
    }

    #[test]
    fn one_row_one_line() {
        let csv = MetricsTrace { metadata: meta(), rows: vec![row(0, 1.5)] }.to_csv();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(data.len(), 1);
        assert_eq!(data[0].split(',').count(), 6);
        assert_eq!(data[0], "0,1.50000000e0,3.00000000e0,5.00000000e-1,3.33333333e-1,-1.50000000e0");
    }

    #[test]
    fn non_increasing_episodes_are_rejected() {
        let trace = MetricsTrace { metadata: meta(), rows: vec![row(1, 1.0), row(1, 2.0)] };
        assert!(trace.check().is_err());
    }

    fn sig9(x: f64) -> f64 {
        fmt_float(x).parse().unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_at_nine_digits(xs in prop::collection::vec(-1e12f64..1e12, 0..20)) {
            let rows: Vec<EpisodeStats> = xs.iter().enumerate().map(|(i, &x)| row(i as u32, x)).collect();
            let trace = MetricsTrace { metadata: meta(), rows };
            let parsed = MetricsTrace::parse_csv(&trace.to_csv()).unwrap();
            prop_assert_eq!(&parsed.metadata, &trace.metadata);
            for (a, b) in parsed.rows.iter().zip(&trace.rows) {
                prop_assert_eq!(a.episode, b.episode);
                prop_assert_eq!(a.mean_global_cost, sig9(b.mean_global_cost));
                prop_assert_eq!(a.actor_objective, sig9(b.actor_objective));
                let rel = ((a.eval_cost - b.eval_cost) / b.eval_cost.abs().max(f64::MIN_POSITIVE)).abs();
                prop_assert!(rel <= 5e-9 || a.eval_cost == b.eval_cost);
            }
            // rendering the parsed trace is a fixed point
            prop_assert_eq!(parsed.to_csv(), trace.to_csv());
        }
    }
}
