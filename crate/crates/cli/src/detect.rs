use std::path::{Path, PathBuf};
use std::thread;

use clap::{Args, ValueEnum};
use dart_core::baselines::BaselineKind;
use dart_core::fusion::PseudoLabel;
use dart_core::runner::{run_stream, Detector, RunOptions, RunOutput};
use dart_core::stream_io::{read_stream, GroundTruth, StreamReader};
use dart_core::synthetic::{OracleAxisAccumulator, ScenarioError};
use dart_core::tracker::TrackerConfig;
use log::{info, warn};

use crate::error::CliError;
use crate::{write_file, Format};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    Dart,
    Msp,
    Maxlogit,
    Energy,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    /// One or more stream files; each runs on its own thread with its own state.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = DetectorKind::Dart)]
    detector: DetectorKind,
    /// EMA weight on the previous prototype.
    #[arg(long, default_value_t = 0.9)]
    alpha: f64,
    /// Run the flip check on every k-th batch.
    #[arg(long, default_value_t = 5)]
    flip_period: u32,
    #[arg(long)]
    no_flip: bool,
    #[arg(long, default_value_t = 1.5)]
    iqr_factor: f64,
    #[arg(long, default_value_t = 256)]
    otsu_bins: usize,
    /// Comma-separated stream layer indices to track (default: all).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Batches pooled for the MSP bootstrap.
    #[arg(long, default_value_t = 1)]
    init_batches: u32,
    /// Energy temperature.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Format::Json, Format::Csv])]
    format: Vec<Format>,
    /// Also report metrics over all batches pooled together.
    #[arg(long)]
    pooled_metrics: bool,
    /// Per-batch cosine between tracker axes and the labeled whole-stream axes (extra pass).
    #[arg(long)]
    axis_alignment: bool,
    /// Write per-sample fused and per-layer scores to scores.csv.
    #[arg(long)]
    layer_scores: bool,
    /// Write the final tracker state to tracker.json.
    #[arg(long)]
    save_state: bool,
}

impl DetectArgs {
    fn detector(&self) -> Detector {
        match self.detector {
            DetectorKind::Dart => Detector::Dart(TrackerConfig {
                alpha: self.alpha,
                flip_period: self.flip_period,
                flip_correction: !self.no_flip,
                iqr_factor: self.iqr_factor,
                otsu_bins: self.otsu_bins,
                layers: self.layers.clone(),
                init_batches: self.init_batches,
                ..TrackerConfig::default()
            }),
            DetectorKind::Msp => Detector::Baseline(BaselineKind::Msp),
            DetectorKind::Maxlogit => Detector::Baseline(BaselineKind::MaxLogit),
            DetectorKind::Energy => Detector::Baseline(BaselineKind::Energy {
                temperature: self.temperature,
            }),
        }
    }
}

pub fn run(args: DetectArgs, out_dir: &Path) -> Result<(), CliError> {
    let detector = args.detector();
    if let Detector::Dart(c) = &detector {
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let single = args.inputs.len() == 1;
    let dirs: Vec<PathBuf> = args
        .inputs
        .iter()
        .map(|p| {
            if single {
                out_dir.to_path_buf()
            } else {
                out_dir.join(p.file_stem().unwrap_or(p.as_os_str()))
            }
        })
        .collect();
    if !single {
        let mut seen = dirs.clone();
        seen.sort();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(CliError::Config("input file stems collide; rename inputs".into()));
        }
    }

    let results: Vec<Result<String, CliError>> = thread::scope(|s| {
        let handles: Vec<_> = args
            .inputs
            .iter()
            .zip(&dirs)
            .map(|(input, dir)| {
                let (args, detector) = (&args, &detector);
                s.spawn(move || detect_one(input, dir, detector, args))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("detector thread panicked")).collect()
    });

    // the first failure decides the exit code and is printed by the caller
    let mut first_err = None;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) if first_err.is_none() => first_err = Some(e),
            Err(e) => eprintln!("error: {e}"),
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn open(path: &Path) -> Result<StreamReader<std::io::BufReader<std::fs::File>>, CliError> {
    read_stream(path).map(|(_, r)| r).map_err(|e| CliError::stream(path, e))
}

fn oracle_axes(path: &Path) -> Result<Option<Vec<Vec<f64>>>, CliError> {
    let reader = open(path)?;
    let mut acc = OracleAxisAccumulator::new(&reader.header().layer_dims);
    for b in reader {
        let b = b.map_err(|e| CliError::stream(path, e))?;
        match acc.add_batch(&b) {
            Ok(()) => {}
            Err(ScenarioError::Unlabeled) => return Ok(None),
            Err(source) => {
                return Err(CliError::Scenario {
                    context: path.display().to_string(),
                    source,
                })
            }
        }
    }
    match acc.axes() {
        Ok(a) => Ok(Some(a)),
        Err(ScenarioError::SingleClass { .. }) => Ok(None),
        Err(source) => Err(CliError::Scenario {
            context: path.display().to_string(),
            source,
        }),
    }
}

fn detect_one(input: &Path, dir: &Path, detector: &Detector, args: &DetectArgs) -> Result<String, CliError> {
    let reader = open(input)?;
    let header = reader.header().clone();
    if !header.has_labels {
        warn!("{}: stream has no labels; metrics skipped, scores still written", input.display());
    }
    let dart = matches!(detector, Detector::Dart(_));
    let oracle = if args.axis_alignment && dart {
        let axes = oracle_axes(input)?;
        if axes.is_none() {
            warn!("{}: axis alignment needs both labeled classes; skipped", input.display());
        }
        axes
    } else {
        None
    };
    if args.layer_scores && !dart {
        warn!("--layer-scores applies to dart only; ignored");
    }
    let options = RunOptions {
        pooled_metrics: args.pooled_metrics,
        oracle_axes: oracle,
        keep_scores: args.layer_scores && dart,
    };
    info!("{}: running {}", input.display(), detector.name());
    let out = run_stream(&header, reader, detector, &options).map_err(|source| CliError::Run {
        path: input.to_path_buf(),
        source,
    })?;

    if args.format.contains(&Format::Json) {
        write_file(&dir.join("report.json"), &out.report.to_json())?;
    }
    if args.format.contains(&Format::Csv) {
        write_file(&dir.join("batches.csv"), &out.report.to_csv())?;
    }
    if options.keep_scores {
        write_scores(input, &dir.join("scores.csv"), &out)?;
    }
    if args.save_state {
        if let Some(t) = &out.tracker {
            write_file(&dir.join("tracker.json"), &t.snapshot())?;
        }
    }

    let s = &out.report.summary;
    let metric = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    Ok(format!(
        "{}: {} AUROC {} FPR95 {} over {} batches, {} flips -> {}",
        input.display(),
        detector.name(),
        metric(s.mean_auroc),
        metric(s.mean_fpr_at_95tpr),
        s.batches_evaluated,
        out.report.flip_log.len(),
        dir.display()
    ))
}

/// One row per sample: `batch,sample,label,pseudo_label,fused,rds_l<k>...`.
fn write_scores(input: &Path, path: &Path, out: &RunOutput) -> Result<(), CliError> {
    let reader = open(input)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["batch".to_string(), "sample".into(), "label".into(), "pseudo_label".into(), "fused".into()];
    head.extend(out.report.layers.iter().map(|l| format!("rds_l{l}")));
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(&head).map_err(csv_err)?;
    for (batch, scores) in reader.zip(&out.scores) {
        let batch = batch.map_err(|e| CliError::stream(input, e))?;
        for i in 0..scores.fused.len() {
            let label = match batch.labels.as_ref().map(|l| l[i]) {
                Some(GroundTruth::Id) => "id",
                Some(GroundTruth::Ood) => "ood",
                _ => "",
            };
            let pseudo = match scores.pseudo_labels.get(i) {
                Some(PseudoLabel::Id) => "id",
                Some(PseudoLabel::Ood) => "ood",
                None => "",
            };
            let mut row = vec![batch.index.to_string(), i.to_string(), label.into(), pseudo.into(), scores.fused[i].to_string()];
            row.extend(scores.rds.iter().map(|r| r[i].to_string()));
            if scores.rds.is_empty() {
                row.extend(out.report.layers.iter().map(|_| String::new()));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(path, e.into_error()))?;
    write_file(path, &String::from_utf8(bytes).expect("csv output is utf-8"))
}
