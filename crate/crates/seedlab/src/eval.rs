//! Reliability evaluation: synthetic class-conditional data, an exact Bayes
//! oracle in place of a pretrained classifier, alignment scoring, top-k
//! accuracy and the full shift-sweep grid.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::denoiser::network::DenoiserParams;
use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;
use crate::numerics::SeededRng;
use crate::sampler::{generate_batch_final, BatchItem, SamplerSpec};
use crate::schedule::NoiseSchedule;
use crate::shifts::SeedShift;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Gmm2d,
    BlobsNd,
}

/// Diagonal-covariance Gaussian component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassSpec {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Known mixture standing in for the real dataset: since the generating
/// density is available in closed form, classification and alignment scores
/// are exact rather than learned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub kind: DatasetKind,
    pub data_shape: Vec<usize>,
    pub classes: Vec<ClassSpec>,
}

impl SyntheticDataset {
    /// K equal-variance modes evenly spaced on a circle of the given radius.
    pub fn gmm2d(num_classes: usize, radius: f64, sigma: f64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("dataset needs at least one class".into()));
        }
        if !(radius > 0.0 && sigma > 0.0) {
            return Err(Error::Config("gmm2d radius and sigma must be positive".into()));
        }
        let classes = (0..num_classes)
            .map(|c| {
                let angle = std::f64::consts::FRAC_PI_2
                    + 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
                ClassSpec {
                    mean: vec![radius * libm::cos(angle), radius * libm::sin(angle)],
                    var: vec![sigma * sigma; 2],
                }
            })
            .collect();
        Ok(Self { kind: DatasetKind::Gmm2d, data_shape: vec![2], classes })
    }

    /// K axis-comb modes in an n-d space shaped `shape` (e.g. [4, 4]); class c
    /// puts `separation` on every coordinate congruent to c modulo K.
    pub fn blobs_nd(shape: Vec<usize>, num_classes: usize, separation: f64, sigma: f64) -> Result<Self> {
        let dim: usize = shape.iter().product();
        if shape.is_empty() || dim == 0 {
            return Err(Error::EmptyShape);
        }
        if num_classes == 0 || num_classes > dim {
            return Err(Error::Config(format!(
                "blobs needs 1..={dim} classes, got {num_classes}"
            )));
        }
        if !(separation > 0.0 && sigma > 0.0) {
            return Err(Error::Config("blobs separation and sigma must be positive".into()));
        }
        let classes = (0..num_classes)
            .map(|c| ClassSpec {
                mean: (0..dim)
                    .map(|d| if d % num_classes == c { separation } else { 0.0 })
                    .collect(),
                var: vec![sigma * sigma; dim],
            })
            .collect();
        Ok(Self { kind: DatasetKind::BlobsNd, data_shape: shape, classes })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.data_shape.iter().product()
    }

    /// Draws (x0, class) with equal class priors.
    pub fn sample(&self, rng: &mut SeededRng) -> (Tensor, usize) {
        let class = rng.uniform_usize(self.num_classes());
        let spec = &self.classes[class];
        let data = spec
            .mean
            .iter()
            .zip(&spec.var)
            .map(|(&m, &v)| m + v.sqrt() * rng.standard_normal())
            .collect();
        (
            Tensor::new(self.data_shape.clone(), data).expect("shape is valid"),
            class,
        )
    }

    /// log p(x | c) under the class-c component.
    pub fn log_likelihood(&self, x: &Tensor, class: usize) -> Result<f64> {
        if class >= self.num_classes() {
            return Err(Error::Condition { class, num_classes: self.num_classes() });
        }
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.data_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        let spec = &self.classes[class];
        let mut ll = 0.0;
        for ((&xi, &m), &v) in x.data().iter().zip(&spec.mean).zip(&spec.var) {
            ll -= 0.5 * (libm::log(2.0 * std::f64::consts::PI * v) + (xi - m) * (xi - m) / v);
        }
        Ok(ll)
    }

    /// Expected log-likelihood and its standard deviation for in-distribution
    /// samples of any class (shared across classes because variances are).
    fn alignment_constants(&self, class: usize) -> (f64, f64) {
        let spec = &self.classes[class];
        let d = self.dim() as f64;
        let mean: f64 = spec
            .var
            .iter()
            .map(|&v| -0.5 * libm::log(2.0 * std::f64::consts::PI * v))
            .sum::<f64>()
            - 0.5 * d;
        // log p = const - Q/2 with Q ~ chi-square(d): Var = d/2.
        (mean, (d / 2.0).sqrt())
    }

    /// Human-readable record of the affine rescale for the manifest.
    pub fn alignment_rescale_note(&self) -> String {
        let (m0, s0) = self.alignment_constants(0);
        format!(
            "alignment = {ALIGNMENT_TARGET_MEAN} + {ALIGNMENT_TARGET_STD} * (logp - ({m0:.6})) / {s0:.6}"
        )
    }
}

/// Cosmetic CLIP-score-like magnitudes for the alignment scale.
pub const ALIGNMENT_TARGET_MEAN: f64 = 30.0;
pub const ALIGNMENT_TARGET_STD: f64 = 2.0;

/// Classes ranked by the exact Bayes posterior under equal priors; ties break
/// toward the lower class index.
pub fn oracle_classify(x: &Tensor, dataset: &SyntheticDataset) -> Result<Vec<usize>> {
    let mut scored: Vec<(usize, f64)> = (0..dataset.num_classes())
        .map(|c| Ok((c, dataset.log_likelihood(x, c)?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().map(|(c, _)| c).collect())
}

/// Class-conditional log-likelihood, affinely rescaled so in-distribution
/// samples average about 30 with spread about 2.
pub fn alignment_score(x: &Tensor, class: usize, dataset: &SyntheticDataset) -> Result<f64> {
    let ll = dataset.log_likelihood(x, class)?;
    let (m0, s0) = dataset.alignment_constants(class);
    Ok(ALIGNMENT_TARGET_MEAN + ALIGNMENT_TARGET_STD * (ll - m0) / s0)
}

/// Fraction of items whose truth appears within the first k ranks.
pub fn topk_accuracy(rankings: &[Vec<usize>], truths: &[usize], k: usize) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::UndefinedMetric("top-k over an empty batch".into()));
    }
    if rankings.len() != truths.len() {
        return Err(Error::UndefinedMetric(format!(
            "rankings ({}) and truths ({}) differ in length",
            rankings.len(),
            truths.len()
        )));
    }
    if k == 0 {
        return Err(Error::UndefinedMetric("k must be at least 1".into()));
    }
    let hits = rankings
        .iter()
        .zip(truths)
        .filter(|(r, &t)| r.iter().take(k).any(|&c| c == t))
        .count();
    Ok(hits as f64 / rankings.len() as f64)
}

/// One model entry of a sweep. `seed_group` keys the per-replicate rng
/// derivation; variants of the same base model (e.g. a guidance-off twin)
/// share the group so their cells are seed-paired.
pub struct SweepModel {
    pub id: String,
    pub seed_group: String,
    pub params: DenoiserParams,
    pub spec: SamplerSpec,
}

/// Aggregated metrics for one (model, shift) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub model: String,
    pub shift: SeedShift,
    pub n: usize,
    pub top1: f64,
    pub top3: f64,
    pub alignment_mean: f64,
    pub alignment_std: f64,
    pub per_class_top1: Vec<f64>,
}

/// Runs every (model, shift) cell: N fresh seeds per class, shifted, sampled,
/// then scored with the Bayes oracle.
///
/// Replicate rng streams are keyed by (master seed, seed group, class,
/// replicate) only, never the cell, so zero-scale cells of every shift kind
/// agree bit-exactly within a model and nonzero scales are seed-paired with
/// the baseline. Cells run in parallel; aggregation order is fixed by cell
/// index.
pub fn run_sweep(
    models: &[SweepModel],
    shifts: &[SeedShift],
    dataset: &SyntheticDataset,
    sched: &NoiseSchedule,
    replicates_per_class: usize,
    master: &SeededRng,
    jobs: usize,
) -> Result<Vec<SweepResult>> {
    if models.is_empty() || shifts.is_empty() {
        return Err(Error::Config("sweep needs at least one model and one shift".into()));
    }
    if replicates_per_class == 0 {
        return Err(Error::Config("replicates_per_class must be positive".into()));
    }
    for m in models {
        m.spec.validate(sched)?;
        if m.params.arch().data_dim != dataset.dim() {
            return Err(Error::Config(format!(
                "model {} expects dim {}, dataset has {}",
                m.id,
                m.params.arch().data_dim,
                dataset.dim()
            )));
        }
        if m.params.arch().num_classes != dataset.num_classes() {
            return Err(Error::Config(format!(
                "model {} expects {} classes, dataset has {}",
                m.id,
                m.params.arch().num_classes,
                dataset.num_classes()
            )));
        }
    }

    let cells: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..shifts.len()).map(move |s| (m, s)))
        .collect();
    let results: Mutex<Vec<Option<SweepResult>>> = Mutex::new(vec![None; cells.len()]);
    let next = AtomicUsize::new(0);
    let workers = jobs.max(1).min(cells.len());

    let run_cell = |cell_idx: usize| -> Result<SweepResult> {
        let (mi, si) = cells[cell_idx];
        let model = &models[mi];
        let shift = &shifts[si];
        sweep_cell(model, shift, dataset, sched, replicates_per_class, master)
    };

    if workers <= 1 {
        let mut out = Vec::with_capacity(cells.len());
        for i in 0..cells.len() {
            out.push(run_cell(i)?);
        }
        return Ok(out);
    }

    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                match run_cell(i) {
                    Ok(r) => results.lock().unwrap()[i] = Some(r),
                    Err(e) => {
                        let mut slot = first_error.lock().unwrap();
                        if slot.is_none() {
                            *slot = Some(e);
                        }
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().unwrap() {
        return Err(e);
    }
    let collected = results.into_inner().unwrap();
    Ok(collected.into_iter().map(|r| r.expect("all cells ran")).collect())
}

fn sweep_cell(
    model: &SweepModel,
    shift: &SeedShift,
    dataset: &SyntheticDataset,
    sched: &NoiseSchedule,
    replicates_per_class: usize,
    master: &SeededRng,
) -> Result<SweepResult> {
    let k = dataset.num_classes();
    let group = master.child(&format!("sweep/{}", model.seed_group));
    let mut items = Vec::with_capacity(k * replicates_per_class);
    let mut truths = Vec::with_capacity(k * replicates_per_class);
    for class in 0..k {
        let class_rng = group.child_indexed("class", class as u64);
        for rep in 0..replicates_per_class {
            let rep_rng = class_rng.child_indexed("rep", rep as u64);
            let seed = rep_rng
                .child("seed")
                .sample_standard_normal(&dataset.data_shape)?;
            items.push(BatchItem {
                seed,
                class: Some(class),
                rng: rep_rng.child("gen"),
            });
            truths.push(class);
        }
    }

    let samples = generate_batch_final(&model.params, &model.spec, sched, shift, items)?;

    let mut rankings = Vec::with_capacity(samples.len());
    let mut alignments = Vec::with_capacity(samples.len());
    for (x, &truth) in samples.iter().zip(&truths) {
        rankings.push(oracle_classify(x, dataset)?);
        alignments.push(alignment_score(x, truth, dataset)?);
    }

    let top1 = topk_accuracy(&rankings, &truths, 1)?;
    let top3 = topk_accuracy(&rankings, &truths, 3.min(k))?;
    let mut per_class_top1 = Vec::with_capacity(k);
    for class in 0..k {
        let idx: Vec<usize> = (0..truths.len()).filter(|&i| truths[i] == class).collect();
        let hits = idx.iter().filter(|&&i| rankings[i][0] == class).count();
        per_class_top1.push(hits as f64 / idx.len() as f64);
    }
    let n = alignments.len();
    let mean = alignments.iter().sum::<f64>() / n as f64;
    let var = alignments.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
        / (n as f64 - 1.0).max(1.0);

    Ok(SweepResult {
        model: model.id.clone(),
        shift: *shift,
        n,
        top1,
        top3,
        alignment_mean: mean,
        alignment_std: var.sqrt(),
        per_class_top1,
    })
}

/// Expands per-kind scale lists into the flat shift grid, model-major order
/// preserved by `run_sweep`.
pub fn expand_grid(
    random: &[f64],
    mean: &[f64],
    std_dev: &[f64],
    mixed: &[(f64, f64)],
    arrangement: &[usize],
) -> Vec<SeedShift> {
    let mut out = Vec::new();
    out.extend(random.iter().map(|&r| SeedShift::random(r)));
    out.extend(mean.iter().map(|&m| SeedShift::mean(m)));
    out.extend(std_dev.iter().map(|&s| SeedShift::std_dev(s)));
    out.extend(mixed.iter().map(|&(s, m)| SeedShift::mixed(s, m)));
    out.extend(arrangement.iter().map(|&a| SeedShift::arrangement(a)));
    out
}
