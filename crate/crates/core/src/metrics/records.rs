use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::loss::exact_sum;
use crate::Label;

/// One scored sequence (or, after [`video_level`], one scored video).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub video_id: String,
    pub sequence_index: usize,
    pub score: f64,
    pub label: Label,
}

impl ScoreRecord {
    pub fn new(video_id: impl Into<String>, sequence_index: usize, score: f64, label: Label) -> Self {
        ScoreRecord { video_id: video_id.into(), sequence_index, score, label }
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    video_id: String,
    sequence_index: usize,
    score: f64,
    label: u8,
}

/// Writes `video_id,sequence_index,score,label` rows, label 0 = natural.
pub fn write_scores_csv<W: Write>(out: W, records: &[ScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(CsvRow { video_id: r.video_id.clone(), sequence_index: r.sequence_index, score: r.score, label: r.label.code() })
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(input: R) -> Result<Vec<ScoreRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    ensure!(
        headers.iter().eq(["video_id", "sequence_index", "score", "label"]),
        Format,
        "score CSV header must be video_id,sequence_index,score,label; got {}",
        headers.iter().collect::<Vec<_>>().join(",")
    );
    let mut records = Vec::new();
    for (line, row) in rdr.deserialize::<CsvRow>().enumerate() {
        let row = row.map_err(csv_error)?;
        let label = Label::from_code(row.label)
            .ok_or_else(|| Error::Format(format!("row {}: label must be 0 or 1, got {}", line + 1, row.label)))?;
        ensure!(row.score.is_finite(), Format, "row {}: score is not finite", line + 1);
        records.push(ScoreRecord::new(row.video_id, row.sequence_index, row.score, label));
    }
    Ok(records)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One record per video holding the mean of its sequence scores, sorted by
/// video id. The mean is exactly rounded, so record order cannot change it.
pub fn video_level(records: &[ScoreRecord]) -> Result<Vec<ScoreRecord>> {
    ensure!(!records.is_empty(), InvalidArgument, "no records to aggregate");
    let mut videos: BTreeMap<&str, (Label, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let entry = videos.entry(&r.video_id).or_insert((r.label, Vec::new()));
        ensure!(entry.0 == r.label, InvalidArgument, "video {} carries both labels", r.video_id);
        entry.1.push(r.score);
    }
    Ok(videos
        .into_iter()
        .map(|(id, (label, scores))| {
            let n = scores.len() as f64;
            ScoreRecord::new(id, 0, exact_sum(scores) / n, label)
        })
        .collect())
}
