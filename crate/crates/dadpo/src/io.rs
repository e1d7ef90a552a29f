//! File formats and persistence.
//!
//! - Pairs file: UTF-8 JSONL, one [`PreferenceRecord`] per line with exactly
//!   the fields `id, category, image_embedding, chosen_text_embedding,
//!   rejected_text_embedding, chosen_token_logprobs,
//!   rejected_token_logprobs, raw_scores`; absent fields are `null`.
//!   Log-probabilities are natural logs.
//! - Scores file: JSONL whose first line is a header object carrying the
//!   normalization stats, classification reports, and fusion weights; every
//!   following line is one `DifficultyScore` row in input order.
//! - Trace file: CSV with columns `iteration, loss, reward_bucket_*,
//!   margin_bucket_*`, preceded by comment lines that record the run
//!   metadata and the bucket orientation (the highest bucket index is the
//!   easiest, i.e. largest-gap, bucket).
//!
//! Floats serialize with the shortest round-trip decimal representation, so
//! identical inputs produce byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{ScoreHeader, ScoredDataset};
use crate::synth::{DifficultyLabel, PlantedRecord};
use crate::trainer::{Objective, TraceRow, TrainingTrace};
use crate::types::{DifficultyScore, PreferenceRecord};

fn display_path(path: &Path) -> String {
    path.display().to_string()
}

fn parse_line_error(path: &Path, line: usize, err: impl std::fmt::Display) -> Error {
    Error::ParseLine {
        path: display_path(path),
        line,
        message: err.to_string(),
    }
}

/// Reads a pairs JSONL file. Parsing is strict: unknown fields and
/// malformed lines fail with the 1-based line number.
pub fn read_pairs(path: &Path) -> Result<Vec<PreferenceRecord>> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PreferenceRecord =
            serde_json::from_str(&line).map_err(|e| parse_line_error(path, idx + 1, e))?;
        records.push(record);
    }
    if records.is_empty() {
        return Err(Error::ParseFile {
            path: display_path(path),
            message: "no records found".into(),
        });
    }
    Ok(records)
}

pub fn write_pairs(path: &Path, records: &[PreferenceRecord]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for record in records {
        serde_json::to_writer(&mut writer, record).map_err(io_from_json)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

fn io_from_json(err: serde_json::Error) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::Other, err))
}

#[derive(Serialize, Deserialize)]
struct HeaderLine<'a> {
    header: std::borrow::Cow<'a, ScoreHeader>,
}

pub fn write_scores(path: &Path, scored: &ScoredDataset) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer(
        &mut writer,
        &HeaderLine {
            header: std::borrow::Cow::Borrowed(&scored.header),
        },
    )
    .map_err(io_from_json)?;
    writer.write_all(b"\n")?;
    for score in &scored.scores {
        serde_json::to_writer(&mut writer, score).map_err(io_from_json)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_scores(path: &Path) -> Result<ScoredDataset> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = loop {
        let Some((idx, line)) = lines.next() else {
            return Err(Error::ParseFile {
                path: display_path(path),
                message: "missing header line".into(),
            });
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: HeaderLine =
            serde_json::from_str(&line).map_err(|e| parse_line_error(path, idx + 1, e))?;
        break parsed.header.into_owned();
    };

    let mut scores = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let score: DifficultyScore =
            serde_json::from_str(&line).map_err(|e| parse_line_error(path, idx + 1, e))?;
        scores.push(score);
    }
    Ok(ScoredDataset { header, scores })
}

pub fn write_trace(path: &Path, trace: &TrainingTrace) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    writeln!(
        writer,
        "# objective={} beta={} buckets={} easiest_bucket={} hardest_bucket={}",
        trace.objective,
        trace.beta,
        trace.buckets,
        trace.easiest_bucket(),
        trace.hardest_bucket()
    )?;
    writeln!(
        writer,
        "# bucket {} holds the largest difficulty gaps (easiest samples)",
        trace.easiest_bucket()
    )?;
    let mut columns = vec!["iteration".to_string(), "loss".to_string()];
    columns.extend((0..trace.buckets).map(|b| format!("reward_bucket_{b}")));
    columns.extend((0..trace.buckets).map(|b| format!("margin_bucket_{b}")));
    writeln!(writer, "{}", columns.join(","))?;
    for row in &trace.rows {
        let mut fields = vec![row.iteration.to_string(), row.loss.to_string()];
        fields.extend(row.rewards.iter().map(|v| v.to_string()));
        fields.extend(row.margins.iter().map(|v| v.to_string()));
        writeln!(writer, "{}", fields.join(","))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<TrainingTrace> {
    let file = File::open(path)?;
    let mut objective = None;
    let mut beta = None;
    let mut buckets = None;
    let mut rows = Vec::new();
    let mut saw_column_header = false;

    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            for pair in comment.split_whitespace() {
                let Some((key, value)) = pair.split_once('=') else {
                    continue;
                };
                match key {
                    "objective" => {
                        objective = Some(match value {
                            "dpo" => Objective::Dpo,
                            "dadpo" => Objective::Dadpo,
                            other => {
                                return Err(parse_line_error(
                                    path,
                                    idx + 1,
                                    format!("unknown objective `{other}`"),
                                ))
                            }
                        })
                    }
                    "beta" => {
                        beta = Some(value.parse::<f64>().map_err(|e| {
                            parse_line_error(path, idx + 1, format!("bad beta: {e}"))
                        })?)
                    }
                    "buckets" => {
                        buckets = Some(value.parse::<usize>().map_err(|e| {
                            parse_line_error(path, idx + 1, format!("bad buckets: {e}"))
                        })?)
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !saw_column_header {
            saw_column_header = true;
            let k = buckets.ok_or_else(|| {
                parse_line_error(path, idx + 1, "missing `buckets=` metadata comment")
            })?;
            let expected = trace_columns(k);
            if trimmed != expected {
                return Err(parse_line_error(
                    path,
                    idx + 1,
                    format!("unexpected columns: `{trimmed}` (expected `{expected}`)"),
                ));
            }
            continue;
        }

        let k = buckets.unwrap();
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 + 2 * k {
            return Err(parse_line_error(
                path,
                idx + 1,
                format!("expected {} fields, got {}", 2 + 2 * k, fields.len()),
            ));
        }
        let parse_f64 = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_line_error(path, idx + 1, format!("bad float `{s}`: {e}")))
        };
        let iteration = fields[0]
            .parse::<usize>()
            .map_err(|e| parse_line_error(path, idx + 1, format!("bad iteration: {e}")))?;
        let loss = parse_f64(fields[1])?;
        let rewards = fields[2..2 + k]
            .iter()
            .map(|s| parse_f64(s))
            .collect::<Result<Vec<_>>>()?;
        let margins = fields[2 + k..]
            .iter()
            .map(|s| parse_f64(s))
            .collect::<Result<Vec<_>>>()?;
        rows.push(TraceRow {
            iteration,
            loss,
            rewards,
            margins,
        });
    }

    match (objective, beta, buckets) {
        (Some(objective), Some(beta), Some(buckets)) if saw_column_header => Ok(TrainingTrace {
            objective,
            beta,
            buckets,
            rows,
        }),
        _ => Err(Error::ParseFile {
            path: display_path(path),
            message: "incomplete trace metadata".into(),
        }),
    }
}

fn trace_columns(buckets: usize) -> String {
    let mut columns = vec!["iteration".to_string(), "loss".to_string()];
    columns.extend((0..buckets).map(|b| format!("reward_bucket_{b}")));
    columns.extend((0..buckets).map(|b| format!("margin_bucket_{b}")));
    columns.join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub label: DifficultyLabel,
    pub planted_gap: f64,
}

/// Ground-truth sidecar written next to synthetic pairs; consumed only by
/// tests and diagnostics, never by the scoring pipeline.
pub fn write_labels(path: &Path, records: &[PlantedRecord]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for planted in records {
        let row = LabelRow {
            id: planted.record.id.clone(),
            label: planted.label,
            planted_gap: planted.planted_gap,
        };
        serde_json::to_writer(&mut writer, &row).map_err(io_from_json)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let file = File::open(path)?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line).map_err(|e| parse_line_error(path, idx + 1, e))?,
        );
    }
    Ok(rows)
}

/// Writes retained record ids, one per line.
pub fn write_id_list(path: &Path, ids: &[String]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for id in ids {
        writeln!(writer, "{id}")?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use crate::types::{Category, EstimatorKind, FusionConfig};

    fn temp_path(name: &str) -> tempfile::TempPath {
        tempfile::Builder::new()
            .suffix(name)
            .tempfile()
            .unwrap()
            .into_temp_path()
    }

    #[test]
    fn pairs_round_trip_is_byte_identical() {
        let config = SynthConfig {
            n_samples: 12,
            ..SynthConfig::default()
        };
        let records: Vec<PreferenceRecord> =
            generate(&config).unwrap().into_iter().map(|p| p.record).collect();
        let path = temp_path(".jsonl");
        write_pairs(&path, &records).unwrap();
        let reloaded = read_pairs(&path).unwrap();
        assert_eq!(records, reloaded);

        let rewritten = temp_path(".jsonl");
        write_pairs(&rewritten, &reloaded).unwrap();
        assert_eq!(
            std::fs::read(&path).unwrap(),
            std::fs::read(&rewritten).unwrap()
        );
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let path = temp_path(".jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"category\":\"VQA\",\"image_embedding\":null,\"chosen_text_embedding\":null,\"rejected_text_embedding\":null,\"chosen_token_logprobs\":null,\"rejected_token_logprobs\":null,\"raw_scores\":null}\nnot json\n",
        )
        .unwrap();
        match read_pairs(&path) {
            Err(Error::ParseLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let path = temp_path(".jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"category\":\"VQA\",\"surprise\":1}\n").unwrap();
        assert!(matches!(read_pairs(&path), Err(Error::ParseLine { .. })));
    }

    #[test]
    fn scores_round_trip_preserves_beta_exactly() {
        let mut records = Vec::new();
        for (i, gap) in [0.31, -0.12, 0.77, 0.05].iter().enumerate() {
            let mut r = PreferenceRecord::new(format!("r{i}"), Category::Vqa);
            r.raw_scores = Some(crate::types::RawScores {
                c_c: Some(*gap),
                c_r: Some(0.0),
                ..Default::default()
            });
            records.push(r);
        }
        let scored = crate::fusion::score_dataset(
            &records,
            &[EstimatorKind::Contrastive],
            &FusionConfig::default(),
        )
        .unwrap();
        let path = temp_path(".jsonl");
        write_scores(&path, &scored).unwrap();
        let reloaded = read_scores(&path).unwrap();
        assert_eq!(scored, reloaded);
        // Re-fusion from the cached normalized gaps reproduces beta_hat.
        for (refused, original) in reloaded.refuse().unwrap().iter().zip(&scored.scores) {
            assert!((refused - original.beta_hat).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_round_trips_through_csv() {
        let trace = TrainingTrace {
            objective: Objective::Dadpo,
            beta: 0.2,
            buckets: 2,
            rows: vec![
                TraceRow {
                    iteration: 0,
                    loss: std::f64::consts::LN_2,
                    rewards: vec![0.0, 0.0],
                    margins: vec![0.0, 0.0],
                },
                TraceRow {
                    iteration: 17,
                    loss: 0.512_345_678_901_234_5,
                    rewards: vec![-0.031_25, 0.75],
                    margins: vec![0.001, 0.25],
                },
            ],
        };
        let path = temp_path(".csv");
        write_trace(&path, &trace).unwrap();
        let reloaded = read_trace(&path).unwrap();
        assert_eq!(trace, reloaded);
    }

    #[test]
    fn trace_with_wrong_field_count_is_rejected() {
        let path = temp_path(".csv");
        std::fs::write(
            &path,
            "# objective=dpo beta=0.2 buckets=2 easiest_bucket=1 hardest_bucket=0\niteration,loss,reward_bucket_0,reward_bucket_1,margin_bucket_0,margin_bucket_1\n0,0.5,0.1\n",
        )
        .unwrap();
        assert!(matches!(read_trace(&path), Err(Error::ParseLine { line: 3, .. })));
    }

    #[test]
    fn labels_round_trip() {
        let config = SynthConfig {
            n_samples: 8,
            ..SynthConfig::default()
        };
        let planted = generate(&config).unwrap();
        let path = temp_path(".jsonl");
        write_labels(&path, &planted).unwrap();
        let rows = read_labels(&path).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0].id, "synth-00000");
    }
}
