use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BatchSampler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Query,
    Pair,
}

/// One row of a sampling-probability trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub kind: TraceKind,
    pub index: usize,
    pub probability: f64,
    /// Steps since the item's score was refreshed; empty for samplers
    /// without scores.
    pub score_age: Option<usize>,
}

/// Appends sampler probabilities to a CSV file.
pub struct TraceWriter {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl TraceWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let writer = csv::WriterBuilder::new()
            .has_headers(true)
            .from_writer(BufWriter::new(file));
        Ok(TraceWriter {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn write_row(&mut self, row: &TraceRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| self.csv_error(e))
    }

    /// Record every query and pair probability of `sampler` at `step`.
    pub fn record(&mut self, step: usize, sampler: &dyn BatchSampler) -> Result<()> {
        let ages = sampler.score_ages(step);
        let (q_ages, p_ages) = match &ages {
            Some((q, p)) => (Some(q), Some(p)),
            None => (None, None),
        };
        let rows = [
            (TraceKind::Query, sampler.query_probabilities(step), q_ages),
            (TraceKind::Pair, sampler.pair_probabilities(step), p_ages),
        ];
        for (kind, probs, ages) in rows {
            for (index, probability) in probs.into_iter().enumerate() {
                self.write_row(&TraceRow {
                    step,
                    kind,
                    index,
                    probability,
                    score_age: ages.map(|a| a[index]),
                })?;
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    fn csv_error(&self, e: csv::Error) -> Error {
        Error::Format {
            path: self.path.clone(),
            message: e.to_string(),
        }
    }
}

/// Read a trace written by [`TraceWriter`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Positive, RetrievalDataset};
    use crate::pruning_dynamic::{DynamicSampler, FtSampler};
    use crate::schedules::ScheduleParams;
    use std::sync::Arc;

    fn ds() -> Arc<RetrievalDataset> {
        Arc::new(
            RetrievalDataset::new(
                vec!["a".into(), "b".into()],
                vec!["x".into(), "y".into(), "z".into()],
                vec![
                    vec![Positive { doc: 0, grade: 4 }, Positive { doc: 1, grade: 4 }],
                    vec![Positive { doc: 2, grade: 4 }],
                ],
            )
            .unwrap(),
        )
    }

    #[test]
    fn trace_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut w = TraceWriter::create(&path).unwrap();
        w.record(0, &FtSampler::new(ds()).unwrap()).unwrap();
        let dp = DynamicSampler::with_flat_scores(ds(), ScheduleParams::default()).unwrap();
        w.record(7, &dp).unwrap();
        w.finish().unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,kind,index,probability,score_age\n"));
        assert!(text.contains("\n0,query,0,0.5,\n"));

        let rows = read_trace(&path).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[2].kind, TraceKind::Pair);
        assert_eq!(rows[2].probability, 0.25);
        assert_eq!(rows[5].score_age, Some(7));
    }
}
