use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use dctaug::augment::ThresholdSample;
use dctaug::dataset::{self, DatasetHandle, LabeledSet};
use dctaug::distortions::{DatasetProfile, DistortionKind, DistortionSpec, ProfileName};
use dctaug::eval::{evaluate_with, table_csv, Variant};
use dctaug::nn::checkpoint;
use dctaug::nn::NetworkConfig;
use dctaug::train::{train_with_observer, TrainConfig};
use dctaug::{
    compare_reports, distort_seeded, fdct2, AugmentConfig, Augmenter, EvalConfig, EvalReport, Image, Model, Real,
    ThresholdDistribution,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::error::{CliError, CliResult, Context};

const TOOL: &str = concat!("dctaug ", env!("CARGO_PKG_VERSION"));

fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).context(format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).context(format!("cannot create {}", dir.display()))
}

fn output_dir(config: &RunConfig) -> CliResult<PathBuf> {
    config
        .output
        .dir
        .clone()
        .ok_or_else(|| CliError::usage("no output directory; pass --out or set [output] dir"))
}

/// Provenance embedded in `run_config.json` and in the checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub tool: String,
    pub config: RunConfig,
    pub dataset: DatasetHandle,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub trigger_epoch: Option<usize>,
    pub final_train_accuracy: Option<f64>,
}

pub fn train(config: &RunConfig, quiet: bool) -> CliResult<()> {
    let out = output_dir(config)?;
    let train_config = config.train_config()?;
    let (set, handle) = data::load(&config.data.dataset, Split::Train, config.data.format.as_deref())?;
    let network = config.network(set.geometry(), set.num_classes())?;
    if !quiet {
        eprintln!(
            "training on {} images ({} classes) from {}",
            set.len(),
            set.num_classes(),
            handle.path.display()
        );
    }
    let (model, log) = train_with_observer(&set, &network, &train_config, |e| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  loss {:.4}  acc {:.4}  p {:.1}",
                e.epoch, e.loss, e.accuracy, e.dropout_p
            );
        }
    })?;

    let manifest = TrainManifest {
        tool: TOOL.into(),
        config: config.clone(),
        dataset: handle,
        network,
        train: train_config,
        trigger_epoch: log.trigger_epoch,
        final_train_accuracy: log.final_accuracy(),
    };
    let meta = serde_json::to_string(&manifest)?;
    let bytes = checkpoint::to_bytes(&model, &meta)?;
    create_dir(&out)?;
    fs::write(out.join("checkpoint.bin"), bytes).context("cannot write checkpoint")?;
    fs::write(out.join("train_log.jsonl"), log.to_json_lines()?).context("cannot write training log")?;
    write_json(&out.join("run_config.json"), &manifest)?;
    if !quiet {
        eprintln!("wrote {}", out.display());
    }
    Ok(())
}

pub struct EvalRequest {
    pub config: RunConfig,
    /// Whether the dataset came from a flag or config file rather than the
    /// checkpoint's own manifest.
    pub dataset_given: bool,
    pub checkpoint: PathBuf,
    pub name: String,
    pub materialize: Option<PathBuf>,
    pub quiet: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalManifest {
    pub tool: String,
    pub config: RunConfig,
    pub checkpoint: PathBuf,
    pub model: serde_json::Value,
    pub dataset: DatasetHandle,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOutput {
    pub manifest: EvalManifest,
    pub report: EvalReport,
}

pub fn eval(req: &EvalRequest) -> CliResult<()> {
    let mut config = req.config.clone();
    let out = output_dir(&config)?;
    let eval_config = config.eval_config()?;

    let mut file = fs::File::open(&req.checkpoint)
        .map_err(|e| CliError::data(format!("cannot open checkpoint {}: {e}", req.checkpoint.display())))?;
    let (model, meta): (Model, String) = checkpoint::read_checkpoint(&mut file)
        .map_err(|e| CliError::from(e).into_data(&format!("cannot read checkpoint {}", req.checkpoint.display())))?;
    let model_meta: serde_json::Value = serde_json::from_str(&meta).unwrap_or(serde_json::Value::String(meta));
    if !req.dataset_given {
        if let Ok(train) = serde_json::from_value::<TrainManifest>(model_meta.clone()) {
            config.data = train.config.data;
        }
    }

    let (test, handle) = data::load(&config.data.dataset, Split::Test, config.data.format.as_deref())?;
    let net = &model.config;
    if test.geometry() != (net.input_channels, net.input_height, net.input_width)
        || test.num_classes() != net.num_classes
    {
        return Err(CliError::data(format!(
            "checkpoint expects {}x{}x{} inputs and {} classes; test set has {:?} and {} classes",
            net.input_channels,
            net.input_height,
            net.input_width,
            net.num_classes,
            test.geometry(),
            test.num_classes()
        )));
    }

    let quiet = req.quiet;
    let mut materialized: Vec<(DistortionSpec, LabeledSet<Real>)> = Vec::new();
    let report = evaluate_with(&model, &test, &eval_config, |variant, images| {
        if let Variant::Distorted(spec) = variant {
            if !quiet {
                eprintln!("scored {} at level {}", spec.kind, spec.level);
            }
            if req.materialize.is_some() {
                let set = LabeledSet::new(images.to_vec(), test.labels.clone(), test.class_names.clone())?;
                materialized.push((spec, set));
            }
        }
        Ok(())
    })?;

    let output = EvalOutput {
        manifest: EvalManifest {
            tool: TOOL.into(),
            config: config.clone(),
            checkpoint: req.checkpoint.clone(),
            model: model_meta,
            dataset: handle,
            eval: eval_config,
        },
        report,
    };
    create_dir(&out)?;
    write_json(&out.join("report.json"), &output)?;
    fs::write(
        out.join("report.csv"),
        table_csv(&[(req.name.as_str(), &output.report)])?,
    )?;
    fs::write(out.join("levels.csv"), output.report.to_csv())?;
    if let Some(dir) = &req.materialize {
        create_dir(dir)?;
        for (spec, set) in &materialized {
            write_set(set, &dir.join(format!("{}-{}", spec.kind.name(), spec.level)))?;
        }
    }
    if !quiet {
        for (name, value) in output.report.columns() {
            eprintln!("{name:>16}  {:.2}%", 100.0 * value);
        }
    }
    Ok(())
}

/// CIFAR records when the geometry allows it, an image tree otherwise.
fn write_set(set: &LabeledSet<Real>, stem: &Path) -> CliResult<PathBuf> {
    if set.geometry() == (3, dataset::CIFAR_SIDE, dataset::CIFAR_SIDE) && set.num_classes() <= 256 {
        let path = stem.with_extension("bin");
        dataset::write_cifar(set, &path).context(path.display())?;
        Ok(path)
    } else {
        dataset::write_image_dir(set, stem).context(stem.display())?;
        Ok(stem.to_path_buf())
    }
}

fn read_report(path: &Path) -> CliResult<EvalReport> {
    let text = fs::read_to_string(path).context(format!("cannot read {}", path.display()))?;
    #[derive(Deserialize)]
    struct Wrapper {
        report: EvalReport,
    }
    serde_json::from_str::<Wrapper>(&text)
        .map(|w| w.report)
        .or_else(|_| serde_json::from_str::<EvalReport>(&text))
        .map_err(|e| CliError::data(format!("{} is not an eval report: {e}", path.display())))
}

pub fn compare(a: &Path, b: &Path, names: Option<&[String]>, out: Option<&Path>) -> CliResult<()> {
    let (na, nb) = match names {
        None => ("a", "b"),
        Some([x, y]) => (x.as_str(), y.as_str()),
        Some(other) => {
            return Err(CliError::usage(format!(
                "--names expects two labels, got {}",
                other.len()
            )));
        }
    };
    let (ra, rb) = (read_report(a)?, read_report(b)?);
    let table =
        compare_reports(na, &ra, nb, &rb).map_err(|e| CliError::from(e).into_data("reports differ in structure"))?;
    let mut text = format!("{:<16} {:>8} {:>8} {:>8}  winner\n", "column", na, nb, "delta");
    for c in &table.columns {
        let winner = match c.winner {
            dctaug::eval::Winner::A => na,
            dctaug::eval::Winner::B => nb,
            dctaug::eval::Winner::Tie => "tie",
        };
        let _ = writeln!(
            text,
            "{:<16} {:>8.2} {:>8.2} {:>+8.2}  {winner}",
            c.column,
            100.0 * c.a,
            100.0 * c.b,
            100.0 * c.delta
        );
    }
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("comparison.json"), &table)?;
        fs::write(dir.join("table.csv"), table_csv(&[(na, &ra), (nb, &rb)])?)?;
    }
    Ok(())
}

fn default_manifest(output: &Path, single_file: bool) -> PathBuf {
    if single_file {
        let mut s = output.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    } else {
        output.join("manifest.json")
    }
}

/// Writes a processed set in the shape implied by `output`.
fn write_output(images: Vec<Image>, source: &LabeledSet<Real>, single: bool, output: &Path) -> CliResult<bool> {
    if single {
        dataset::write_pnm(&images[0], output).context(output.display())?;
        return Ok(true);
    }
    let set = LabeledSet::new(images, source.labels.clone(), source.class_names.clone())?;
    if output.extension().is_some_and(|e| e == "bin") {
        dataset::write_cifar(&set, output).context(output.display())?;
        Ok(true)
    } else {
        create_dir(output)?;
        dataset::write_image_dir(&set, output).context(output.display())?;
        Ok(false)
    }
}

pub struct AugmentRequest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub format: Option<String>,
    pub threshold_min: u32,
    pub threshold_max: u32,
    pub seed: u64,
    pub epoch: u64,
    pub threads: usize,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AugmentManifest {
    tool: String,
    input: PathBuf,
    output: PathBuf,
    config: AugmentConfig,
    epoch: u64,
    samples: Vec<ThresholdSample>,
}

pub fn augment(req: &AugmentRequest) -> CliResult<()> {
    let config = AugmentConfig {
        distribution: ThresholdDistribution::new(req.threshold_min, req.threshold_max)?,
        seed: req.seed,
        ..AugmentConfig::default()
    };
    let augmenter = Augmenter::new(config)?;
    let (set, single) = data::load_images(&req.input, req.format.as_deref())?;
    let ids: Vec<u64> = (0..set.len() as u64).collect();
    let batch = augmenter.augment_batch_parallel(&set.images, &ids, req.epoch, req.threads.max(1))?;
    let single_file = write_output(batch.images, &set, single, &req.output)?;
    let manifest = AugmentManifest {
        tool: TOOL.into(),
        input: req.input.clone(),
        output: req.output.clone(),
        config,
        epoch: req.epoch,
        samples: batch.samples,
    };
    let path = req
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest(&req.output, single_file));
    write_json(&path, &manifest)
}

pub struct DistortRequest {
    pub input: PathBuf,
    pub output: PathBuf,
    pub format: Option<String>,
    pub kind: String,
    pub level: f64,
    pub profile: String,
    pub seed: u64,
    pub threads: usize,
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DistortManifest {
    tool: String,
    input: PathBuf,
    output: PathBuf,
    spec: DistortionSpec,
    profile: DatasetProfile,
    seed: u64,
    /// Every image's noise comes from the stream keyed by
    /// `(seed, family, level, image_id)`.
    image_ids: std::ops::Range<u64>,
}

pub fn distort(req: &DistortRequest) -> CliResult<()> {
    let kind: DistortionKind = req.kind.parse()?;
    let profile = DatasetProfile::named(req.profile.parse::<ProfileName>()?);
    let spec = DistortionSpec::new(kind, req.level);
    spec.validate(&profile)?;
    let (set, single) = data::load_images(&req.input, req.format.as_deref())?;
    let ids: Vec<usize> = (0..set.len()).collect();
    let images = dctaug::parallel::map_chunks(&ids, req.threads.max(1), |_, chunk| {
        chunk
            .iter()
            .map(|&i| distort_seeded(&set.images[i], spec, &profile, req.seed, i as u64))
            .collect()
    })?;
    let single_file = write_output(images, &set, single, &req.output)?;
    let manifest = DistortManifest {
        tool: TOOL.into(),
        input: req.input.clone(),
        output: req.output.clone(),
        spec,
        profile,
        seed: req.seed,
        image_ids: 0..set.len() as u64,
    };
    let path = req
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest(&req.output, single_file));
    write_json(&path, &manifest)
}

pub fn inspect(image: &Path, channel: usize, csv: bool) -> CliResult<()> {
    let img = dataset::read_pnm::<f64>(image).map_err(|e| CliError::from(e).into_data(&image.display().to_string()))?;
    if channel >= img.channels() {
        return Err(CliError::usage(format!(
            "channel {channel} out of range; image has {} channel(s)",
            img.channels()
        )));
    }
    let coeffs = fdct2(&img.plane(channel))?;
    let (m, n) = (coeffs.height(), coeffs.width());
    let mut out = String::new();
    if csv {
        for p in 0..m {
            let row: Vec<String> = (0..n).map(|q| format!("{}", coeffs.get(p, q).abs())).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
    } else {
        let _ = writeln!(out, "{}: channel {channel}, {m}x{n} coefficients", image.display());
        let _ = writeln!(out, "energy {:.6e}, DC {:.4}", coeffs.energy(), coeffs.get(0, 0));
        for p in 0..m {
            let row: Vec<String> = (0..n).map(|q| format!("{:>9.2}", coeffs.get(p, q).abs())).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    print!("{out}");
    Ok(())
}
