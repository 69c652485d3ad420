use std::path::{Path, PathBuf};

use clap::Args;
use dart_core::stream_io::{write_stream, FeatureBatch, GroundTruth, Matrix, StreamHeader};

use crate::error::CliError;
use crate::write_file;

#[derive(Args, Debug)]
pub struct ConvertArgs {
    /// Headerless numeric CSV, one sample per row; repeat once per layer, in layer order.
    #[arg(long = "layer", required = true)]
    layers: Vec<PathBuf>,
    /// Headerless logits CSV with the same row count.
    #[arg(long)]
    logits: Option<PathBuf>,
    /// One label per line: `id`/`ood`/`unknown` or the bytes 0/1/255.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Samples per batch; the last batch takes the remainder.
    #[arg(long, default_value_t = 200)]
    batch_size: usize,
    #[arg(short, long)]
    output: PathBuf,
}

fn read_matrix(path: &Path) -> Result<Matrix, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |detail: String| CliError::BadInput {
            path: path.to_path_buf(),
            detail: format!("row {}: {detail}", line + 1),
        };
        if *cols.get_or_insert(rec.len()) != rec.len() {
            return Err(bad(format!("{} fields, expected {}", rec.len(), cols.unwrap_or(0))));
        }
        for field in &rec {
            let v: f32 = field.parse().map_err(|_| bad(format!("not a number: {field:?}")))?;
            if !v.is_finite() {
                return Err(bad(format!("non-finite value {field}")));
            }
            data.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| CliError::BadInput {
        path: path.to_path_buf(),
        detail: "no rows".into(),
    })?;
    Ok(Matrix::new(rows, cols, data))
}

fn read_labels(path: &Path) -> Result<Vec<GroundTruth>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim().to_ascii_lowercase().as_str() {
            "id" | "0" => Ok(GroundTruth::Id),
            "ood" | "1" => Ok(GroundTruth::Ood),
            "unknown" | "255" => Ok(GroundTruth::Unknown),
            other => Err(CliError::BadInput {
                path: path.to_path_buf(),
                detail: format!("line {}: bad label {other:?}", i + 1),
            }),
        })
        .collect()
}

fn slice_rows(m: &Matrix, start: usize, end: usize) -> Matrix {
    let c = m.cols();
    Matrix::new(end - start, c, m.as_slice()[start * c..end * c].to_vec())
}

pub fn run(args: ConvertArgs) -> Result<(), CliError> {
    if args.batch_size == 0 {
        return Err(CliError::Config("batch size must be positive".into()));
    }
    let layers = args.layers.iter().map(|p| read_matrix(p)).collect::<Result<Vec<_>, _>>()?;
    let logits = args.logits.as_deref().map(read_matrix).transpose()?;
    let labels = args.labels.as_deref().map(read_labels).transpose()?;

    let n = layers[0].rows();
    let mut counts: Vec<(&Path, usize)> = args.layers.iter().map(|p| p.as_path()).zip(layers.iter().map(Matrix::rows)).collect();
    if let (Some(p), Some(m)) = (&args.logits, &logits) {
        counts.push((p, m.rows()));
    }
    if let (Some(p), Some(l)) = (&args.labels, &labels) {
        counts.push((p, l.len()));
    }
    if let Some((p, rows)) = counts.iter().find(|(_, r)| *r != n) {
        return Err(CliError::BadInput {
            path: p.to_path_buf(),
            detail: format!("{rows} rows, first layer has {n}"),
        });
    }

    let header = StreamHeader::new(
        layers.iter().map(|m| m.cols() as u32).collect(),
        logits.as_ref().map_or(0, |m| m.cols() as u32),
        labels.is_some(),
    )
    .map_err(|e| CliError::stream(&args.output, e))?;
    let batches: Vec<FeatureBatch> = (0..n)
        .step_by(args.batch_size)
        .enumerate()
        .map(|(t, start)| {
            let end = (start + args.batch_size).min(n);
            FeatureBatch {
                index: t as u32,
                layers: layers.iter().map(|m| slice_rows(m, start, end)).collect(),
                logits: logits.as_ref().map(|m| slice_rows(m, start, end)),
                labels: labels.as_ref().map(|l| l[start..end].to_vec()),
            }
        })
        .collect();
    if let Some(parent) = args.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let manifest = write_stream(&header, &batches, &args.output, "converted from CSV")
        .map_err(|e| CliError::stream(&args.output, e))?;
    write_file(&args.output.with_extension("manifest.json"), &manifest.to_json())?;
    println!("wrote {} ({} batches, {n} samples)", args.output.display(), batches.len());
    Ok(())
}
