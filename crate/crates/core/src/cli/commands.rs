use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::args::*;
use crate::ingest::{self, FeatureMatrix, Format, LabeledDataset, LogitMatrix};
use crate::metrics::{self, EvalReport, Orientation};
use crate::prototypes::{PrototypeSet, PrototypeSource};
use crate::scorer::{self, BaselineKind, StreamScores};
use crate::synth::{self, SynthSpec};
use crate::transport::Lambda;
use crate::{Error, Result};

/// Metadata written next to a prototype file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSidecar {
    pub num_classes: usize,
    pub dim: usize,
    pub source: PrototypeSource,
    pub masses: Vec<f64>,
    pub normalized: bool,
}

pub fn sidecar_path(prototypes: &Path) -> PathBuf {
    let mut name = prototypes.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn load_matrix(path: &Path, skip_header: bool) -> Result<FeatureMatrix> {
    Ok(ingest::load_features(
        path,
        Format::from_path(path, skip_header),
    )?)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(io_err(path)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(io_err(Path::new("<stdout>"))),
    }
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report types serialize");
    bytes.push(b'\n');
    bytes
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for row in rows {
        w.write_record(&row).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Resolves the prototype source named on the command line.
pub fn load_prototypes(source: &SourceArgs) -> Result<PrototypeSet> {
    match (&source.train_features, &source.weights, &source.prototypes) {
        (Some(features), None, None) => {
            let labels_path = source
                .train_labels
                .as_ref()
                .ok_or_else(|| Error::Usage("--train-features requires --train-labels".into()))?;
            let features = load_matrix(features, source.skip_header)?;
            let labels = ingest::load_labels(labels_path, source.num_classes)?;
            let train = LabeledDataset::new(features, labels, source.num_classes)?;
            Ok(PrototypeSet::from_data(&train)?)
        }
        (None, Some(weights), None) => {
            let mut w = load_matrix(weights, source.skip_header)?;
            if source.transpose {
                w = w.transpose();
            }
            Ok(PrototypeSet::from_weight_matrix(&w)?)
        }
        (None, None, Some(path)) => {
            let matrix = load_matrix(path, source.skip_header)?;
            let side = sidecar_path(path);
            let text = fs::read_to_string(&side).map_err(io_err(&side))?;
            let meta: PrototypeSidecar = serde_json::from_str(&text).map_err(|source| Error::Json {
                path: side.display().to_string(),
                source,
            })?;
            if meta.num_classes != matrix.rows() || meta.dim != matrix.cols() {
                return Err(Error::Usage(format!(
                    "sidecar describes {}x{} prototypes but the file holds {}x{}",
                    meta.num_classes,
                    meta.dim,
                    matrix.rows(),
                    matrix.cols()
                )));
            }
            Ok(PrototypeSet::new(matrix, meta.masses, meta.source)?)
        }
        (None, None, None) => Err(Error::Usage(
            "one prototype source is required: --train-features/--train-labels, --weights, or --prototypes"
                .into(),
        )),
        _ => Err(Error::Usage(
            "prototype sources are mutually exclusive".into(),
        )),
    }
}

pub fn cmd_prototypes(args: &PrototypesArgs) -> Result<()> {
    let mut protos = load_prototypes(&args.source)?;
    if args.normalize {
        protos = protos.l2_normalized();
    }
    ingest::save_features(protos.prototypes(), &args.out)?;
    let sidecar = PrototypeSidecar {
        num_classes: protos.num_classes(),
        dim: protos.dim(),
        source: protos.source(),
        masses: protos.masses().to_vec(),
        normalized: args.normalize,
    };
    let side = sidecar_path(&args.out);
    fs::write(&side, to_json(&sidecar)).map_err(io_err(&side))
}

/// Scores of the ID and OOD test files under the contrastive transport cost.
#[derive(Debug, Clone)]
pub struct PipelineScores {
    pub n_id: usize,
    pub stream: StreamScores,
}

/// Loads everything, shuffles ID and OOD samples together and scores them.
pub fn run_pipeline(args: &ScoringArgs) -> Result<PipelineScores> {
    if args.batch_size < 2 {
        return Err(scorer::ScoreError::BatchTooSmall(args.batch_size).into());
    }
    if !(args.omega > 1.0) {
        return Err(scorer::ScoreError::OmegaOutOfRange(args.omega).into());
    }
    let solver = args.solver.solver_config();
    solver.validate()?;
    let mut protos = load_prototypes(&args.source)?;
    let test_id = load_matrix(&args.test_id, args.source.skip_header)?;
    let mut test = match &args.test_ood {
        Some(path) => test_id.vstack(&load_matrix(path, args.source.skip_header)?)?,
        None => test_id.clone(),
    };
    if args.normalize {
        protos = protos.l2_normalized();
        test = test.l2_normalized();
    }
    let stream = scorer::score_stream(
        &protos,
        &test,
        args.batch_size,
        args.seed,
        args.omega,
        &solver,
    )?;
    if !stream.all_converged {
        log::warn!("at least one Sinkhorn solve hit the iteration limit");
    }
    Ok(PipelineScores {
        n_id: test_id.rows(),
        stream,
    })
}

pub fn cmd_score(args: &ScoreArgs) -> Result<()> {
    let result = run_pipeline(&args.scoring)?;
    let s = &result.stream;
    let rows = (0..s.scores.len()).map(|j| {
        vec![
            j.to_string(),
            s.scores[j].to_string(),
            s.t_id[j].to_string(),
            s.t_out[j].to_string(),
            s.batch_index[j].to_string(),
        ]
    });
    let bytes = csv_bytes(&["sample_index", "score", "T", "T_star", "batch_index"], rows);
    write_output(args.out.as_deref(), &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSetting {
    pub mode: &'static str,
    pub value: f64,
}

/// Run configuration echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportConfig {
    pub method: &'static str,
    pub lambda: LambdaSetting,
    pub omega: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub stabilization: &'static str,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FullReport {
    #[serde(flatten)]
    pub report: EvalReport,
    pub config: ReportConfig,
}

fn method_name(method: Method) -> &'static str {
    match method {
        Method::Pot => "pot",
        Method::Transport => "transport",
        Method::Msp => "msp",
        Method::Energy => "energy",
    }
}

fn report_config(args: &ScoringArgs, method: Method) -> ReportConfig {
    let solver = args.solver.solver_config();
    ReportConfig {
        method: method_name(method),
        lambda: match solver.lambda {
            Lambda::Fixed(value) => LambdaSetting {
                mode: "fixed",
                value,
            },
            Lambda::MedianRelative(value) => LambdaSetting {
                mode: "relative",
                value,
            },
        },
        omega: args.omega,
        batch_size: args.batch_size,
        seed: args.seed,
        stabilization: match args.solver.stabilization {
            StabilizationArg::Plain => "plain",
            StabilizationArg::LogDomain => "log_domain",
        },
        tolerance: args.solver.tolerance,
        max_iterations: args.solver.max_iters,
        normalize: args.normalize,
    }
}

/// Scores both test sets with `method` and evaluates them.
pub fn evaluate_method(args: &ScoringArgs, method: Method) -> Result<EvalReport> {
    let (id, ood, orientation) = match method {
        Method::Pot | Method::Transport => {
            if args.test_ood.is_none() {
                return Err(Error::Usage("evaluation requires --test-ood".into()));
            }
            let result = run_pipeline(args)?;
            let scores = match method {
                Method::Pot => result.stream.scores,
                _ => result.stream.t_id,
            };
            let (id, ood) = scores.split_at(result.n_id);
            (id.to_vec(), ood.to_vec(), Orientation::HigherIsOod)
        }
        Method::Msp | Method::Energy => {
            let ood_path = args
                .test_ood
                .as_ref()
                .ok_or_else(|| Error::Usage("evaluation requires --test-ood".into()))?;
            let kind = if method == Method::Msp {
                BaselineKind::Msp
            } else {
                BaselineKind::Energy
            };
            let load = |p: &Path| -> Result<Vec<f64>> {
                let logits = LogitMatrix::new(load_matrix(p, args.source.skip_header)?);
                Ok(scorer::baseline_scores(&logits, kind))
            };
            let (id, ood) = (load(&args.test_id)?, load(ood_path)?);
            (id, ood, Orientation::HigherIsId)
        }
    };
    Ok(metrics::evaluate(&id, &ood, orientation)?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let report = evaluate_method(&args.scoring, args.method)?;
    let full = FullReport {
        report,
        config: report_config(&args.scoring, args.method),
    };
    let bytes = match args.format {
        ReportFormat::Json => to_json(&full),
        ReportFormat::Csv => {
            let r = &full.report;
            csv_bytes(
                &["auroc", "fpr95", "threshold", "n_id", "n_ood", "method"],
                [vec![
                    r.auroc.to_string(),
                    r.fpr95.to_string(),
                    r.threshold.to_string(),
                    r.n_id.to_string(),
                    r.n_ood.to_string(),
                    full.config.method.to_string(),
                ]],
            )
        }
    };
    write_output(args.out.as_deref(), &bytes)
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Lambda => "lambda",
        SweepParam::LambdaRelative => "lambda_relative",
        SweepParam::Omega => "omega",
        SweepParam::BatchSize => "batch_size",
    }
}

/// Applies one grid value to a copy of the scoring arguments.
pub fn with_param(args: &ScoringArgs, param: SweepParam, value: f64) -> Result<ScoringArgs> {
    let mut out = args.clone();
    match param {
        SweepParam::Lambda => out.solver.lambda = Some(value),
        SweepParam::LambdaRelative => {
            out.solver.lambda = None;
            out.solver.lambda_relative = value;
        }
        SweepParam::Omega => out.omega = value,
        SweepParam::BatchSize => {
            if value.fract() != 0.0 || value < 0.0 {
                return Err(Error::Usage(format!(
                    "batch size must be a whole number, got {value}"
                )));
            }
            out.batch_size = value as usize;
        }
    }
    Ok(out)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.values.len());
    for &value in &args.values {
        let scoring = with_param(&args.scoring, args.param, value)?;
        let report = evaluate_method(&scoring, args.method)?;
        rows.push(vec![
            param_name(args.param).to_string(),
            value.to_string(),
            report.auroc.to_string(),
            report.fpr95.to_string(),
        ]);
    }
    let bytes = csv_bytes(&["parameter", "value", "auroc", "fpr95"], rows);
    write_output(args.out.as_deref(), &bytes)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str::<SynthSpec>(&text).map_err(|source| Error::Json {
                path: path.display().to_string(),
                source,
            })?
        }
        None => match args.preset {
            Preset::Far => SynthSpec::far_ood(0),
            Preset::Near => SynthSpec::near_ood(0),
        },
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let data = synth::generate(&spec)?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let dir = &args.out;
    ingest::save_features(data.train.features(), &dir.join("train_features.potf"))?;
    ingest::save_labels(data.train.labels(), &dir.join("train_labels.txt"))?;
    ingest::save_features(&data.test_id, &dir.join("test_id.potf"))?;
    ingest::save_labels(&data.test_id_labels, &dir.join("test_id_labels.txt"))?;
    ingest::save_features(&data.test_ood, &dir.join("test_ood.potf"))?;
    let spec_path = dir.join("spec.json");
    fs::write(&spec_path, to_json(&spec)).map_err(io_err(&spec_path))
}
