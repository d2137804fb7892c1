//! Accuracy on a clean test set and on five distorted copies per family.
//!
//! The overall score is the plain mean of the clean accuracy and every family
//! mean, so a report with no families has `overall == clean_accuracy`.
//! Distorted images are regenerated from `(seed, family, level, image index)`
//! for every model, so reports that share a seed saw identical inputs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSet;
use crate::distortions::{distort_seeded, level_grid, DatasetProfile, DistortionKind, DistortionSpec};
use crate::error::{invalid, Error, Result};
use crate::image::ImageTensor;
use crate::nn::ModelParams;
use crate::parallel::map_chunks;
use crate::scalar::Scalar;

/// Anything that maps images to top-1 class indices.
pub trait Classifier<T> {
    fn num_classes(&self) -> usize;
    fn predict(&self, images: &[&ImageTensor<T>]) -> Result<Vec<usize>>;
}

impl<T: Scalar> Classifier<T> for ModelParams<T> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn predict(&self, images: &[&ImageTensor<T>]) -> Result<Vec<usize>> {
        ModelParams::predict(self, images)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub profile: DatasetProfile,
    /// Families in report order; empty means clean accuracy only.
    pub families: Vec<DistortionKind>,
    pub seed: u64,
    pub threads: usize,
}

impl EvalConfig {
    pub fn new(profile: DatasetProfile, seed: u64) -> Self {
        Self {
            profile,
            families: DistortionKind::ALL.to_vec(),
            seed,
            threads: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub level: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyResult {
    pub kind: DistortionKind,
    pub levels: Vec<LevelResult>,
    pub mean: f64,
}

impl FamilyResult {
    pub fn new(kind: DistortionKind, levels: Vec<LevelResult>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Empty("family levels"));
        }
        let mean = levels.iter().map(|l| l.accuracy).sum::<f64>() / levels.len() as f64;
        Ok(Self { kind, levels, mean })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_size: usize,
    pub seed: u64,
    pub clean_accuracy: f64,
    pub families: Vec<FamilyResult>,
    pub overall: f64,
}

impl EvalReport {
    pub fn new(test_size: usize, seed: u64, clean_accuracy: f64, families: Vec<FamilyResult>) -> Result<Self> {
        let all =
            std::iter::once(clean_accuracy).chain(families.iter().flat_map(|f| f.levels.iter().map(|l| l.accuracy)));
        for a in all {
            if !(0.0..=1.0).contains(&a) {
                return Err(invalid(format!("accuracy {a} outside [0, 1]")));
            }
        }
        let overall = (clean_accuracy + families.iter().map(|f| f.mean).sum::<f64>()) / (1 + families.len()) as f64;
        Ok(Self {
            test_size,
            seed,
            clean_accuracy,
            families,
            overall,
        })
    }

    pub fn family(&self, kind: DistortionKind) -> Option<&FamilyResult> {
        self.families.iter().find(|f| f.kind == kind)
    }

    /// Mean of the blur family means present in the report.
    pub fn blur_mean(&self) -> Option<f64> {
        let blurs: Vec<f64> = self
            .families
            .iter()
            .filter(|f| f.kind.is_blur())
            .map(|f| f.mean)
            .collect();
        (!blurs.is_empty()).then(|| blurs.iter().sum::<f64>() / blurs.len() as f64)
    }

    /// Column headers and values in table order: clean, families, overall.
    pub fn columns(&self) -> Vec<(String, f64)> {
        let mut cols = vec![("clean".to_string(), self.clean_accuracy)];
        cols.extend(self.families.iter().map(|f| (f.kind.name().to_string(), f.mean)));
        cols.push(("overall".to_string(), self.overall));
        cols
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Long format: one row per (family, level), plus the clean and overall rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,level,accuracy\n");
        let _ = writeln!(out, "clean,,{}", self.clean_accuracy);
        for f in &self.families {
            for l in &f.levels {
                let _ = writeln!(out, "{},{},{}", f.kind.name(), l.level, l.accuracy);
            }
            let _ = writeln!(out, "{},mean,{}", f.kind.name(), f.mean);
        }
        let _ = writeln!(out, "overall,,{}", self.overall);
        out
    }
}

/// One evaluated input set: the clean images or one distortion level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    Clean,
    Distorted(DistortionSpec),
}

pub fn evaluate<T: Scalar, C: Classifier<T> + Sync>(
    model: &C,
    test: &LabeledSet<T>,
    config: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_with(model, test, config, |_, _| Ok(()))
}

/// Like [`evaluate`], handing every distorted set to `sink` (for writing
/// them out) before it is scored.
pub fn evaluate_with<T: Scalar, C: Classifier<T> + Sync>(
    model: &C,
    test: &LabeledSet<T>,
    config: &EvalConfig,
    mut sink: impl FnMut(Variant, &[ImageTensor<T>]) -> Result<()>,
) -> Result<EvalReport> {
    test.validate()?;
    if model.num_classes() != test.num_classes() {
        return Err(invalid(format!(
            "model predicts {} classes but the test set has {}",
            model.num_classes(),
            test.num_classes()
        )));
    }
    let mut seen = Vec::new();
    for &kind in &config.families {
        if seen.contains(&kind) {
            return Err(invalid(format!("family {kind} listed twice")));
        }
        seen.push(kind);
    }
    let threads = config.threads.max(1);
    let clean_refs: Vec<&ImageTensor<T>> = test.images.iter().collect();
    let clean_accuracy = accuracy(model, &clean_refs, &test.labels, threads)?;

    let mut families = Vec::with_capacity(config.families.len());
    for &kind in &config.families {
        let mut levels = Vec::with_capacity(5);
        for spec in level_grid(kind, &config.profile) {
            let ids: Vec<usize> = (0..test.len()).collect();
            let distorted = map_chunks(&ids, threads, |_, chunk| {
                chunk
                    .iter()
                    .map(|&i| distort_seeded(&test.images[i], spec, &config.profile, config.seed, i as u64))
                    .collect()
            })?;
            sink(Variant::Distorted(spec), &distorted)?;
            let refs: Vec<&ImageTensor<T>> = distorted.iter().collect();
            levels.push(LevelResult {
                level: spec.level,
                accuracy: accuracy(model, &refs, &test.labels, threads)?,
            });
        }
        families.push(FamilyResult::new(kind, levels)?);
    }
    EvalReport::new(test.len(), config.seed, clean_accuracy, families)
}

/// Correct-count per chunk, summed: the result does not depend on `threads`.
fn accuracy<T: Scalar, C: Classifier<T> + Sync>(
    model: &C,
    images: &[&ImageTensor<T>],
    labels: &[usize],
    threads: usize,
) -> Result<f64> {
    let indices: Vec<usize> = (0..images.len()).collect();
    let counts = map_chunks(&indices, threads, |_, chunk| {
        let batch: Vec<&ImageTensor<T>> = chunk.iter().map(|&i| images[i]).collect();
        let predicted = model.predict(&batch)?;
        if predicted.len() != batch.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} predictions", batch.len()),
                found: format!("{} predictions", predicted.len()),
            });
        }
        Ok(vec![chunk
            .iter()
            .zip(predicted)
            .filter(|(&i, p)| labels[i] == *p)
            .count()])
    })?;
    Ok(counts.iter().sum::<usize>() as f64 / images.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub column: String,
    /// `None` for per-family means, clean and overall cells.
    pub level: Option<f64>,
    pub a: f64,
    pub b: f64,
    /// `b - a`
    pub delta: f64,
    pub winner: Winner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub a_name: String,
    pub b_name: String,
    /// Table columns (clean, family means, overall).
    pub columns: Vec<Cell>,
    /// Individual distortion levels.
    pub levels: Vec<Cell>,
}

fn cell(column: &str, level: Option<f64>, a: f64, b: f64) -> Cell {
    let winner = if a > b {
        Winner::A
    } else if b > a {
        Winner::B
    } else {
        Winner::Tie
    };
    Cell {
        column: column.to_string(),
        level,
        a,
        b,
        delta: b - a,
        winner,
    }
}

/// Cell-by-cell comparison; both reports must cover the same families and levels.
pub fn compare_reports(a_name: &str, a: &EvalReport, b_name: &str, b: &EvalReport) -> Result<ComparisonTable> {
    let shape = |r: &EvalReport| -> Vec<(DistortionKind, Vec<u64>)> {
        r.families
            .iter()
            .map(|f| (f.kind, f.levels.iter().map(|l| l.level.to_bits()).collect()))
            .collect()
    };
    if shape(a) != shape(b) {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", shape(a)),
            found: format!("{:?}", shape(b)),
        });
    }
    let columns = a
        .columns()
        .into_iter()
        .zip(b.columns())
        .map(|((name, x), (_, y))| cell(&name, None, x, y))
        .collect();
    let levels = a
        .families
        .iter()
        .zip(&b.families)
        .flat_map(|(fa, fb)| {
            fa.levels
                .iter()
                .zip(&fb.levels)
                .map(|(la, lb)| cell(fa.kind.name(), Some(la.level), la.accuracy, lb.accuracy))
        })
        .collect();
    Ok(ComparisonTable {
        a_name: a_name.to_string(),
        b_name: b_name.to_string(),
        columns,
        levels,
    })
}

/// Table with one row per model and columns clean, family means, overall.
/// Values are percentages with two decimals; the best value in each column is
/// suffixed with `*` (all tied values are marked).
pub fn table_csv(rows: &[(&str, &EvalReport)]) -> Result<String> {
    let Some((_, first)) = rows.first() else {
        return Err(Error::Empty("report table"));
    };
    let headers: Vec<String> = first.columns().into_iter().map(|c| c.0).collect();
    let values: Vec<Vec<f64>> = rows
        .iter()
        .map(|(name, r)| {
            let cols = r.columns();
            if cols.len() != headers.len() || cols.iter().zip(&headers).any(|(c, h)| &c.0 != h) {
                return Err(invalid(format!("report '{name}' has different columns")));
            }
            Ok(cols.into_iter().map(|c| c.1).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = format!("model,{}\n", headers.join(","));
    for (row, (name, _)) in rows.iter().enumerate() {
        out.push_str(name);
        for col in 0..headers.len() {
            let best = values.iter().map(|v| v[col]).fold(f64::NEG_INFINITY, f64::max);
            let v = values[row][col];
            let _ = write!(out, ",{:.2}{}", 100.0 * v, if v == best { "*" } else { "" });
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn family(kind: DistortionKind, accs: [f64; 5]) -> FamilyResult {
        FamilyResult::new(
            kind,
            accs.iter()
                .enumerate()
                .map(|(i, &a)| LevelResult {
                    level: i as f64,
                    accuracy: a,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn family_mean_and_overall_arithmetic() {
        let f = family(DistortionKind::GaussianBlur, [0.5, 0.6, 0.7, 0.8, 0.9]);
        assert!((f.mean - 0.7).abs() < 1e-15);

        let means = [0.4, 0.42, 0.45, 0.61, 0.56];
        let fams = DistortionKind::ALL
            .iter()
            .zip(means)
            .map(|(&k, m)| family(k, [m; 5]))
            .collect();
        let r = EvalReport::new(10, 0, 0.88, fams).unwrap();
        let expected = (0.88 + 0.4 + 0.42 + 0.45 + 0.61 + 0.56) / 6.0;
        assert!((r.overall - expected).abs() < 1e-12);
    }

    #[test]
    fn no_families_means_overall_is_clean() {
        let r = EvalReport::new(10, 0, 0.37, vec![]).unwrap();
        assert_eq!(r.overall, 0.37);
        assert!(r.blur_mean().is_none());
    }

    #[test]
    fn rejects_out_of_range_accuracy() {
        assert!(EvalReport::new(1, 0, 1.2, vec![]).is_err());
    }

    #[test]
    fn self_comparison_is_all_ties() {
        let fams = DistortionKind::ALL
            .iter()
            .map(|&k| family(k, [0.3, 0.4, 0.5, 0.6, 0.7]))
            .collect();
        let r = EvalReport::new(10, 0, 0.9, fams).unwrap();
        let t = compare_reports("a", &r, "b", &r).unwrap();
        assert_eq!(t.columns.len(), 7);
        assert_eq!(t.levels.len(), 25);
        assert!(t
            .columns
            .iter()
            .chain(&t.levels)
            .all(|c| c.delta == 0.0 && c.winner == Winner::Tie));
    }

    #[test]
    fn structure_mismatch_is_an_error() {
        let a = EvalReport::new(10, 0, 0.9, vec![family(DistortionKind::Speckle, [0.5; 5])]).unwrap();
        let b = EvalReport::new(10, 0, 0.9, vec![family(DistortionKind::MotionBlur, [0.5; 5])]).unwrap();
        assert!(compare_reports("a", &a, "b", &b).is_err());
    }

    #[test]
    fn table_marks_best_per_column() {
        let a = EvalReport::new(10, 0, 0.9, vec![family(DistortionKind::GaussianBlur, [0.5; 5])]).unwrap();
        let b = EvalReport::new(10, 0, 0.8, vec![family(DistortionKind::GaussianBlur, [0.7; 5])]).unwrap();
        let csv = table_csv(&[("clean", &a), ("dct", &b)]).unwrap();
        assert_eq!(
            csv,
            "model,clean,gaussian-blur,overall\nclean,90.00*,50.00,70.00\ndct,80.00,70.00*,75.00*\n"
        );
    }

    #[test]
    fn json_roundtrip() {
        let fams = DistortionKind::ALL
            .iter()
            .map(|&k| family(k, [0.1, 0.2, 0.3, 0.4, 0.5]))
            .collect();
        let r = EvalReport::new(10, 3, 0.9, fams).unwrap();
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert!(r.to_csv().starts_with("family,level,accuracy\nclean,,0.9\n"));
    }
}
