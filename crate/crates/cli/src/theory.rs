use std::path::{Path, PathBuf};

use clap::Args;
use dart_core::stream_io::{read_stream, GroundTruth};
use dart_core::theory::{bn_decompose, fisher_alignment, separation_report, BnDecomposition, KappaMode, SeparationReport, DEFAULT_BN_EPSILON};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::write_file;

#[derive(Args, Debug)]
#[command(group = clap::ArgGroup::new("source").required(true).multiple(true).args(["input", "bn_stats"]))]
pub struct TheoryArgs {
    /// Labeled stream; every batch is pooled per class.
    input: Option<PathBuf>,
    /// Stream layer to analyze; repeatable. Default: all layers.
    #[arg(long)]
    layer: Vec<usize>,
    /// Use this kappa instead of the smallest one the data satisfies.
    #[arg(long)]
    kappa: Option<f64>,
    /// Skip the Fisher direction solve (quadratic memory in the layer width).
    #[arg(long)]
    no_fisher: bool,
    /// CSV with columns `gamma,sigma_sq,delta`, one row per BN channel.
    #[arg(long)]
    bn_stats: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BN_EPSILON)]
    epsilon: f64,
}

#[derive(Serialize)]
struct LayerTheory {
    layer: usize,
    separation: SeparationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    fisher_cosine: Option<f64>,
}

#[derive(Serialize)]
struct TheoryOutput {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    layers: Vec<LayerTheory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bn: Option<BnDecomposition>,
}

#[derive(Deserialize)]
struct BnRow {
    gamma: f64,
    sigma_sq: f64,
    delta: f64,
}

/// Columns `gamma`, `sigma_sq`, `delta`.
type BnColumns = (Vec<f64>, Vec<f64>, Vec<f64>);
/// All ID rows and all OOD rows of one layer.
type ClassRows = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn read_bn(path: &Path) -> Result<BnColumns, CliError> {
    let csv_err = |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let (mut g, mut s, mut d) = (Vec::new(), Vec::new(), Vec::new());
    for row in r.deserialize() {
        let row: BnRow = row.map_err(csv_err)?;
        g.push(row.gamma);
        s.push(row.sigma_sq);
        d.push(row.delta);
    }
    Ok((g, s, d))
}

fn collect_classes(path: &Path, layers: &[usize]) -> Result<Vec<ClassRows>, CliError> {
    let (header, reader) = read_stream(path).map_err(|e| CliError::stream(path, e))?;
    if !header.has_labels {
        return Err(CliError::Degenerate(format!("{}: theory reports need in-band labels", path.display())));
    }
    if let Some(&l) = layers.iter().find(|&&l| l >= header.num_layers()) {
        return Err(CliError::Config(format!("layer {l} out of range; stream has {}", header.num_layers())));
    }
    let mut out = vec![(Vec::new(), Vec::new()); layers.len()];
    for b in reader {
        let b = b.map_err(|e| CliError::stream(path, e))?;
        let labels = b.labels.as_ref().expect("header says labeled");
        for (slot, &l) in out.iter_mut().zip(layers) {
            for (row, label) in b.layers[l].iter_rows().zip(labels) {
                let v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
                match label {
                    GroundTruth::Id => slot.0.push(v),
                    GroundTruth::Ood => slot.1.push(v),
                    GroundTruth::Unknown => {}
                }
            }
        }
    }
    Ok(out)
}

pub fn run(args: TheoryArgs, out_dir: &Path) -> Result<(), CliError> {
    let kappa = match args.kappa {
        Some(k) if !(k >= 0.0 && k.is_finite()) => return Err(CliError::Config(format!("kappa {k} must be finite and >= 0"))),
        Some(k) => KappaMode::Supplied(k),
        None => KappaMode::Empirical,
    };
    let mut output = TheoryOutput {
        layers: Vec::new(),
        bn: None,
    };
    if let Some(path) = &args.input {
        let layers = if args.layer.is_empty() {
            let (header, _) = read_stream(path).map_err(|e| CliError::stream(path, e))?;
            (0..header.num_layers()).collect()
        } else {
            args.layer.clone()
        };
        for (&layer, (id, ood)) in layers.iter().zip(collect_classes(path, &layers)?) {
            let separation = separation_report(&id, &ood, kappa)?;
            let fisher_cosine = if args.no_fisher { None } else { Some(fisher_alignment(&id, &ood)?) };
            println!(
                "layer {layer}: |d|^2 {:.4} kappa {:.4} bound {:.4} miss ID {:.4} OOD {:.4}{}",
                separation.axis_norm_sq,
                separation.kappa,
                separation.bound,
                separation.empirical_id_miss,
                separation.empirical_ood_miss,
                fisher_cosine.map_or(String::new(), |c| format!(" fisher cos {c:.6}"))
            );
            output.layers.push(LayerTheory {
                layer,
                separation,
                fisher_cosine,
            });
        }
    }
    if let Some(path) = &args.bn_stats {
        let (g, s, d) = read_bn(path)?;
        let bn = bn_decompose(&g, &s, &d, args.epsilon)?;
        println!(
            "bn: {} channels, |d|^2 {:.4}, mean lambda {:.4}, cv {:.4}",
            bn.lambda.len(),
            bn.total,
            bn.mean_lambda,
            bn.cv_lambda
        );
        output.bn = Some(bn);
    }
    let json = serde_json::to_string_pretty(&output).expect("theory output serializes");
    write_file(&out_dir.join("theory.json"), &json)
}
