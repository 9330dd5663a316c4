//! Command implementations behind the `seedlab` binary: train, sweep,
//! overlap, trajectory, report. Every command stamps a manifest with content
//! hashes of whatever it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, RunConfig};
use crate::denoiser::{train, Checkpoint, DenoiserParams, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
use crate::error::{Error, Result};
use crate::eval::{run_sweep, SweepModel, SweepResult, SyntheticDataset};
use crate::manifest::{OutputWriter, RunManifest};
use crate::numerics::{fit_pca2, SeededRng};
use crate::report::{LinePlot, Series};
use crate::sampler::{
    early_steps_discontinuity, generate, trajectory_divergence, Family, SamplerSpec,
    TrajectoryRecord,
};
use crate::schedule::NoiseSchedule;
use crate::shifts::{
    overlap_closed_form, overlap_quadrature, overlap_random_convolved, SeedShift, ShiftKind,
};
use crate::stats::{median, wilson_interval};

fn checkpoint_rel_path(id: &str) -> String {
    format!("checkpoints/{id}.json")
}

fn master_seed(config: &RunConfig, seed_override: Option<u64>) -> u64 {
    seed_override.unwrap_or(config.master_seed)
}

/// Trains every configured model and writes one checkpoint per model.
pub fn cmd_train(
    config: &RunConfig,
    out: &Path,
    seed_override: Option<u64>,
    jobs: usize,
) -> Result<RunManifest> {
    let dataset = config.dataset.build()?;
    let sched = config.schedule.build()?;
    let seed = master_seed(config, seed_override);
    let master = SeededRng::new(seed);
    let mut writer = OutputWriter::new(out, "train", &config.hash(), seed)?;

    let trained = train_all(config, &dataset, &sched, &master, jobs)?;
    for (model_cfg, params) in config.models.iter().zip(&trained) {
        let ckpt = Checkpoint::new(params, &sched, &config.train_config(model_cfg));
        writer.emit(&checkpoint_rel_path(&model_cfg.id), &serde_json::to_vec(&ckpt)?)?;
        writer.note(
            &format!("arch_hash/{}", model_cfg.id),
            params.arch().hash(),
        );
    }
    writer.note(
        "adam",
        format!("beta1={ADAM_BETA1} beta2={ADAM_BETA2} eps={ADAM_EPS}"),
    );
    writer.finalize()
}

fn train_all(
    config: &RunConfig,
    dataset: &SyntheticDataset,
    sched: &NoiseSchedule,
    master: &SeededRng,
    jobs: usize,
) -> Result<Vec<DenoiserParams>> {
    let train_one = |model_cfg: &ModelConfig| -> Result<DenoiserParams> {
        let arch = config.architecture_for(model_cfg, dataset);
        let rng = master.child(&format!("train/{}", model_cfg.id));
        train(
            |r: &mut SeededRng| dataset.sample(r),
            sched,
            arch,
            &config.train_config(model_cfg),
            &rng,
        )
    };

    if jobs <= 1 || config.models.len() <= 1 {
        return config.models.iter().map(train_one).collect();
    }
    let slots: Mutex<Vec<Option<Result<DenoiserParams>>>> =
        Mutex::new((0..config.models.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for (i, model_cfg) in config.models.iter().enumerate() {
            let slots = &slots;
            scope.spawn(move || {
                let result = train_one(model_cfg);
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every model trained"))
        .collect()
}

fn load_models(
    config: &RunConfig,
    out: &Path,
    dataset: &SyntheticDataset,
    sched: &NoiseSchedule,
) -> Result<Vec<(ModelConfig, DenoiserParams)>> {
    let mut models = Vec::new();
    for model_cfg in &config.models {
        let path = out.join(checkpoint_rel_path(&model_cfg.id));
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "checkpoint for model '{}' not found at {}; run `seedlab train` first",
                model_cfg.id,
                path.display()
            )));
        }
        let ckpt = Checkpoint::load(&path)?;
        let want_arch = config.architecture_for(model_cfg, dataset);
        if ckpt.arch != want_arch {
            return Err(Error::CheckpointMismatch(format!(
                "model '{}' was trained with a different architecture",
                model_cfg.id
            )));
        }
        if serde_json::to_string(&ckpt.schedule)? != serde_json::to_string(sched)? {
            return Err(Error::CheckpointMismatch(format!(
                "model '{}' was trained against a different noise schedule",
                model_cfg.id
            )));
        }
        models.push((model_cfg.clone(), ckpt.into_params()?));
    }
    Ok(models)
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn shift_columns(shift: &SeedShift) -> String {
    format!(
        "{},{},{},{},{}",
        shift.kind.as_str(),
        fmt6(shift.eta_r),
        fmt6(shift.eta_m),
        fmt6(shift.eta_s),
        shift.eta_a
    )
}

fn sweep_csv(results: &[SweepResult], num_classes: usize) -> String {
    let mut csv = String::from("model,shift_kind,eta_r,eta_m,eta_s,eta_a,n,top1,top3,alignment_mean,alignment_std");
    for c in 0..num_classes {
        let _ = write!(csv, ",acc_class_{c}");
    }
    csv.push('\n');
    for r in results {
        let _ = write!(
            csv,
            "{},{},{},{},{},{}",
            r.model,
            shift_columns(&r.shift),
            r.n,
            fmt6(r.top1),
            fmt6(r.top3),
            fmt6(r.alignment_mean),
        );
        let _ = write!(csv, ",{}", fmt6(r.alignment_std));
        for a in &r.per_class_top1 {
            let _ = write!(csv, ",{}", fmt6(*a));
        }
        csv.push('\n');
    }
    csv
}

/// Runs the full shift grid for every trained model, plus guidance-off twins
/// on the random grid when configured, and writes one combined CSV.
pub fn cmd_sweep(
    config: &RunConfig,
    out: &Path,
    seed_override: Option<u64>,
    jobs: usize,
) -> Result<RunManifest> {
    let dataset = config.dataset.build()?;
    let sched = config.schedule.build()?;
    let seed = master_seed(config, seed_override);
    let master = SeededRng::new(seed);
    let loaded = load_models(config, out, &dataset, &sched)?;
    let mut writer = OutputWriter::new(out, "sweep", &config.hash(), seed)?;

    let base: Vec<SweepModel> = loaded
        .iter()
        .map(|(cfg, params)| SweepModel {
            id: cfg.id.clone(),
            seed_group: cfg.id.clone(),
            params: params.clone(),
            spec: config.sampler_spec(cfg),
        })
        .collect();
    let mut results = run_sweep(
        &base,
        &config.sweep_shifts(),
        &dataset,
        &sched,
        config.sweep.replicates_per_class,
        &master,
        jobs,
    )?;

    if config.sweep.guidance_comparison && !config.sweep.random.is_empty() {
        let twins: Vec<SweepModel> = loaded
            .iter()
            .map(|(cfg, params)| SweepModel {
                id: format!("{}+noguide", cfg.id),
                seed_group: cfg.id.clone(),
                params: params.clone(),
                spec: SamplerSpec { guidance_scale: 0.0, ..config.sampler_spec(cfg) },
            })
            .collect();
        results.extend(run_sweep(
            &twins,
            &config.random_grid_shifts(),
            &dataset,
            &sched,
            config.sweep.replicates_per_class,
            &master,
            jobs,
        )?);
    }

    writer.emit("sweep.csv", sweep_csv(&results, dataset.num_classes()).as_bytes())?;
    writer.note("alignment_rescale", dataset.alignment_rescale_note());
    writer.note("cells", results.len().to_string());
    writer.finalize()
}

/// Emits the distribution-overlap table for the configured shift grids, via
/// both the closed forms and the quadrature oracle, plus the exact
/// normal-uniform convolution values for the random shift.
pub fn cmd_overlap(
    config: &RunConfig,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<RunManifest> {
    let seed = master_seed(config, seed_override);
    let mut writer = OutputWriter::new(out, "overlap", &config.hash(), seed)?;

    let mut csv = String::from("kind,eta_r,eta_m,eta_s,eta_a,overlap_closed_form,overlap_quadrature\n");
    for shift in config.sweep_shifts() {
        let quad = overlap_quadrature(&shift)?.overlap_fraction;
        let closed = match overlap_closed_form(&shift) {
            Ok(report) => format!("{:.10}", report.overlap_fraction),
            Err(Error::NoClosedForm) => String::new(),
            Err(e) => return Err(e),
        };
        let _ = writeln!(csv, "{},{closed},{quad:.10}", shift_columns(&shift));
    }
    writer.emit("overlap.csv", csv.as_bytes())?;

    let mut conv = String::from("eta_r,overlap_effective_mean,overlap_convolved\n");
    for &r in &config.sweep.random {
        let approx = overlap_closed_form(&SeedShift::random(r))?.overlap_fraction;
        let exact = overlap_random_convolved(r)?;
        let _ = writeln!(conv, "{},{approx:.10},{exact:.10}", fmt6(r));
    }
    writer.emit("random_shift_convolution.csv", conv.as_bytes())?;
    writer.finalize()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelTrajectoryStats {
    pub family: Family,
    pub esd_base: Vec<f64>,
    pub esd_shifted: Vec<f64>,
    pub final_divergence: Vec<f64>,
    pub esd_shifted_median: f64,
    pub final_divergence_median: f64,
}

/// Paired learned-vs-fixed comparison on shared seeds and shared step noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilyContrast {
    pub learned_model: String,
    pub fixed_model: String,
    pub pairs: usize,
    pub esd_learned_higher: usize,
    pub esd_learned_higher_fraction: f64,
    pub esd_ci95: (f64, f64),
    pub divergence_learned_smaller: usize,
    pub divergence_learned_smaller_fraction: f64,
    pub divergence_ci95: (f64, f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub shift: SeedShift,
    pub paired_seeds: usize,
    pub per_model: BTreeMap<String, ModelTrajectoryStats>,
    pub contrast: Option<FamilyContrast>,
}

/// Projects one trajectory into two columns: native coordinates for 2-D
/// states, top-2 PCA of the paired runs otherwise.
fn trajectory_rows(
    csv: &mut String,
    model: &str,
    pair: usize,
    variant: &str,
    traj: &TrajectoryRecord,
    project: &dyn Fn(&[f64]) -> [f64; 2],
) {
    let t_count = traj.states.len() - 1;
    for (i, state) in traj.states.iter().enumerate() {
        let t = t_count - i;
        let p = project(state.data());
        let displacement = if i == 0 { 0.0 } else { traj.displacements[i - 1] };
        let _ = writeln!(
            csv,
            "{model},{pair},{variant},{t},{:.9},{:.9},{:.9}",
            p[0], p[1], displacement
        );
    }
}

/// Runs paired (unshifted, shifted) reverse processes for every model on
/// shared seeds and common step noise; exports all trajectories and a JSON
/// summary with ESD and divergence statistics.
pub fn cmd_trajectory(
    config: &RunConfig,
    out: &Path,
    seed_override: Option<u64>,
) -> Result<RunManifest> {
    let dataset = config.dataset.build()?;
    let sched = config.schedule.build()?;
    let seed = master_seed(config, seed_override);
    let master = SeededRng::new(seed);
    let loaded = load_models(config, out, &dataset, &sched)?;
    let mut writer = OutputWriter::new(out, "trajectory", &config.hash(), seed)?;

    let shift = config.trajectory.shift;
    let identity = SeedShift::mean(0.0);
    let pairs = config.trajectory.paired_seeds;
    let k = dataset.num_classes();

    let mut csv = String::from("model,pair,variant,t,c0,c1,displacement\n");
    let mut stats: BTreeMap<String, ModelTrajectoryStats> = BTreeMap::new();
    for (cfg, _) in &loaded {
        stats.insert(
            cfg.id.clone(),
            ModelTrajectoryStats {
                family: cfg.family,
                esd_base: Vec::new(),
                esd_shifted: Vec::new(),
                final_divergence: Vec::new(),
                esd_shifted_median: 0.0,
                final_divergence_median: 0.0,
            },
        );
    }

    for pair in 0..pairs {
        let pair_rng = master.child("trajectory").child_indexed("pair", pair as u64);
        let seed_z = pair_rng.child("seed").sample_standard_normal(&dataset.data_shape)?;
        let class = Some(pair % k);
        let gen_rng = pair_rng.child("gen");
        for (cfg, params) in &loaded {
            let spec = config.sampler_spec(cfg);
            let (_, base) = generate(params, &spec, &sched, class, &seed_z, &identity, &gen_rng)?;
            let (_, shifted) = generate(params, &spec, &sched, class, &seed_z, &shift, &gen_rng)?;
            let divergence = trajectory_divergence(&base, &shifted)?;

            let project: Box<dyn Fn(&[f64]) -> [f64; 2]> = if dataset.dim() == 2 {
                Box::new(|d: &[f64]| [d[0], d[1]])
            } else {
                let all: Vec<Vec<f64>> = base
                    .states
                    .iter()
                    .chain(shifted.states.iter())
                    .map(|s| s.data().to_vec())
                    .collect();
                let pca = fit_pca2(&all)?;
                Box::new(move |d: &[f64]| pca.project_point(d))
            };
            trajectory_rows(&mut csv, &cfg.id, pair, "base", &base, project.as_ref());
            trajectory_rows(&mut csv, &cfg.id, pair, "shifted", &shifted, project.as_ref());

            let entry = stats.get_mut(&cfg.id).expect("model present");
            entry.esd_base.push(early_steps_discontinuity(&base)?.ratio);
            entry.esd_shifted.push(early_steps_discontinuity(&shifted)?.ratio);
            entry.final_divergence.push(*divergence.last().expect("nonempty"));
        }
    }

    for entry in stats.values_mut() {
        entry.esd_shifted_median = median(&entry.esd_shifted);
        entry.final_divergence_median = median(&entry.final_divergence);
    }

    // Paired family contrast on the first learned and first fixed model.
    let learned = loaded.iter().find(|(c, _)| c.family == Family::LearnedVariance);
    let fixed = loaded.iter().find(|(c, _)| c.family == Family::FixedVariance);
    let contrast = match (learned, fixed) {
        (Some((lc, _)), Some((fc, _))) => {
            let l = &stats[&lc.id];
            let f = &stats[&fc.id];
            let esd_higher = l
                .esd_shifted
                .iter()
                .zip(&f.esd_shifted)
                .filter(|(a, b)| a > b)
                .count();
            let div_smaller = l
                .final_divergence
                .iter()
                .zip(&f.final_divergence)
                .filter(|(a, b)| a < b)
                .count();
            let esd_ci = wilson_interval(esd_higher, pairs);
            let div_ci = wilson_interval(div_smaller, pairs);
            Some(FamilyContrast {
                learned_model: lc.id.clone(),
                fixed_model: fc.id.clone(),
                pairs,
                esd_learned_higher: esd_higher,
                esd_learned_higher_fraction: esd_higher as f64 / pairs as f64,
                esd_ci95: esd_ci,
                divergence_learned_smaller: div_smaller,
                divergence_learned_smaller_fraction: div_smaller as f64 / pairs as f64,
                divergence_ci95: div_ci,
            })
        }
        _ => None,
    };

    let summary = TrajectorySummary { shift, paired_seeds: pairs, per_model: stats, contrast };
    writer.emit("trajectories.csv", csv.as_bytes())?;
    writer.emit("trajectory_summary.json", &serde_json::to_vec_pretty(&summary)?)?;
    writer.finalize()
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone)]
struct SweepRow {
    model: String,
    kind: ShiftKind,
    scale: f64,
    top1: f64,
    top3: f64,
    alignment_mean: f64,
}

fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 11 {
            return Err(Error::Dependency(format!("sweep.csv line {i} malformed")));
        }
        let kind = match f[1] {
            "random" => ShiftKind::Random,
            "mean" => ShiftKind::Mean,
            "std_dev" => ShiftKind::StdDev,
            "mixed" => ShiftKind::Mixed,
            "arrangement" => ShiftKind::Arrangement,
            other => return Err(Error::Dependency(format!("unknown shift kind {other}"))),
        };
        let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Dependency(format!("sweep.csv line {i}: {e}")));
        let scale = match kind {
            ShiftKind::Random => num(f[2])?,
            ShiftKind::Mean => num(f[3])?,
            ShiftKind::StdDev | ShiftKind::Mixed => num(f[4])?,
            ShiftKind::Arrangement => num(f[5])?,
        };
        rows.push(SweepRow {
            model: f[0].to_string(),
            kind,
            scale,
            top1: num(f[7])?,
            top3: num(f[8])?,
            alignment_mean: num(f[9])?,
        });
    }
    Ok(rows)
}

fn kind_title(kind: ShiftKind) -> &'static str {
    match kind {
        ShiftKind::Random => "Random shift",
        ShiftKind::Mean => "Mean shift",
        ShiftKind::StdDev => "Standard-deviation shift",
        ShiftKind::Mixed => "Mixed shift",
        ShiftKind::Arrangement => "Arrangement shift",
    }
}

/// Renders plots and a markdown summary from whatever artifacts the run
/// directory already holds.
pub fn cmd_report(run_dir: &Path) -> Result<RunManifest> {
    let overlap_path = run_dir.join("overlap.csv");
    let sweep_path = run_dir.join("sweep.csv");
    let summary_path = run_dir.join("trajectory_summary.json");
    if !overlap_path.exists() && !sweep_path.exists() && !summary_path.exists() {
        return Err(Error::Dependency(format!(
            "{} holds no sweep.csv, overlap.csv or trajectory_summary.json to report on",
            run_dir.display()
        )));
    }

    // Inherit identity from an existing manifest when one is around.
    let mut config_hash = String::from("unknown");
    let mut seed = 0u64;
    for name in ["manifest_sweep.json", "manifest_overlap.json", "manifest_trajectory.json", "manifest_train.json"] {
        if let Ok(bytes) = std::fs::read(run_dir.join(name)) {
            if let Ok(m) = serde_json::from_slice::<RunManifest>(&bytes) {
                config_hash = m.config_hash;
                seed = m.master_seed;
                break;
            }
        }
    }
    let mut writer = OutputWriter::new(run_dir, "report", &config_hash, seed)?;

    let mut md = String::from("# Seed-shift reliability report\n");

    if let Ok(text) = std::fs::read_to_string(&overlap_path) {
        md.push_str("\n## Distribution overlap of shifted seeds\n\n");
        md.push_str("Overlap coefficient between N(0,1) and the shifted element distribution, closed form vs quadrature.\n\n");
        md.push_str("| kind | eta_r | eta_m | eta_s | eta_a | closed form | quadrature |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for line in text.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() == 7 {
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {} |",
                    f[0], f[1], f[2], f[3], f[4], f[5], f[6]
                );
            }
        }
        if run_dir.join("random_shift_convolution.csv").exists() {
            md.push_str(
                "\nThe random-shift row follows the effective-mean model (shift eta_r/2); \
                 `random_shift_convolution.csv` lists the exact normal-uniform convolution \
                 overlap next to it.\n",
            );
        }
    }

    if let Ok(text) = std::fs::read_to_string(&sweep_path) {
        let rows = parse_sweep_csv(&text)?;
        let mut models: Vec<String> = Vec::new();
        for r in &rows {
            if !models.contains(&r.model) {
                models.push(r.model.clone());
            }
        }
        md.push_str("\n## Reliability sweep\n");
        for kind in [
            ShiftKind::Random,
            ShiftKind::Mean,
            ShiftKind::StdDev,
            ShiftKind::Mixed,
            ShiftKind::Arrangement,
        ] {
            let mut scales: Vec<f64> = rows
                .iter()
                .filter(|r| r.kind == kind)
                .map(|r| r.scale)
                .collect();
            scales.sort_by(|a, b| a.total_cmp(b));
            scales.dedup();
            if scales.is_empty() {
                continue;
            }
            let kind_models: Vec<&String> = models
                .iter()
                .filter(|m| rows.iter().any(|r| r.kind == kind && &r.model == *m))
                .collect();
            let _ = writeln!(md, "\n### {}\n", kind_title(kind));
            md.push_str("| scale |");
            for m in &kind_models {
                let _ = write!(md, " {m} top1/top3/align |");
            }
            md.push('\n');
            md.push_str("|---|");
            md.push_str(&"---|".repeat(kind_models.len()));
            md.push('\n');
            for &s in &scales {
                let _ = write!(md, "| {s:+.2} |");
                for m in &kind_models {
                    match rows
                        .iter()
                        .find(|r| r.kind == kind && &r.model == *m && r.scale == s)
                    {
                        Some(r) => {
                            let _ = write!(md, " {:.3}/{:.3}/{:.1} |", r.top1, r.top3, r.alignment_mean);
                        }
                        None => md.push_str(" - |"),
                    }
                }
                md.push('\n');
            }

            // Accuracy curve per shift kind.
            let series: Vec<Series> = kind_models
                .iter()
                .map(|m| Series {
                    name: (*m).clone(),
                    points: {
                        let mut pts: Vec<(f64, f64)> = rows
                            .iter()
                            .filter(|r| r.kind == kind && &r.model == *m)
                            .map(|r| (r.scale, r.top1))
                            .collect();
                        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                        pts
                    },
                })
                .collect();
            let plot = LinePlot {
                title: format!("top-1 accuracy vs {}", kind_title(kind)),
                x_label: "shift scale".into(),
                y_label: "top-1 accuracy".into(),
                series,
            };
            let name = format!("accuracy_vs_scale_{}.svg", kind.as_str());
            writer.emit(&name, plot.to_svg().as_bytes())?;
            let _ = writeln!(md, "\n![top-1 vs scale]({name})");
        }

        // Guided vs unguided comparison when the twin rows are present.
        let guided_pairs: Vec<(String, String)> = models
            .iter()
            .filter(|m| m.ends_with("+noguide"))
            .map(|ng| (ng.trim_end_matches("+noguide").to_string(), ng.clone()))
            .collect();
        if !guided_pairs.is_empty() {
            md.push_str("\n### Guidance comparison (random shift)\n\n");
            for (base, ng) in &guided_pairs {
                let cells: Vec<(f64, f64, f64)> = rows
                    .iter()
                    .filter(|r| r.kind == ShiftKind::Random && &r.model == base)
                    .filter_map(|r| {
                        rows.iter()
                            .find(|q| {
                                q.kind == ShiftKind::Random && &q.model == ng && q.scale == r.scale
                            })
                            .map(|q| (r.scale, r.top1, q.top1))
                    })
                    .collect();
                let wins = cells.iter().filter(|(_, g, u)| g >= u).count();
                let _ = writeln!(
                    md,
                    "- `{base}` (guided) beats or ties `{ng}` on top-1 in {wins}/{} random-shift cells.",
                    cells.len()
                );
            }
        }
    }

    if let Ok(bytes) = std::fs::read(&summary_path) {
        let summary: TrajectorySummary = serde_json::from_slice(&bytes)?;
        md.push_str("\n## Reverse-process trajectories\n\n");
        let _ = writeln!(
            md,
            "Paired runs per model: {} (shift: {}).\n",
            summary.paired_seeds,
            summary.shift.label()
        );
        md.push_str("| model | median ESD (shifted) | median final divergence |\n|---|---|---|\n");
        for (id, s) in &summary.per_model {
            let _ = writeln!(
                md,
                "| {id} | {:.3} | {:.4} |",
                s.esd_shifted_median, s.final_divergence_median
            );
        }
        if let Some(c) = &summary.contrast {
            let _ = writeln!(
                md,
                "\nOn {} shared seeds, `{}` showed a larger first-step discontinuity than `{}` \
                 in {:.0}% of pairs (95% CI {:.0}%..{:.0}%), and a smaller final divergence in \
                 {:.0}% of pairs (95% CI {:.0}%..{:.0}%).",
                c.pairs,
                c.learned_model,
                c.fixed_model,
                100.0 * c.esd_learned_higher_fraction,
                100.0 * c.esd_ci95.0,
                100.0 * c.esd_ci95.1,
                100.0 * c.divergence_learned_smaller_fraction,
                100.0 * c.divergence_ci95.0,
                100.0 * c.divergence_ci95.1,
            );
        }

        // Trajectory picture for the first pair of each model.
        if let Ok(traj_text) = std::fs::read_to_string(run_dir.join("trajectories.csv")) {
            let model_ids: Vec<String> = summary.per_model.keys().cloned().collect();
            for id in model_ids {
                let mut base_pts = Vec::new();
                let mut shifted_pts = Vec::new();
                for line in traj_text.lines().skip(1) {
                    let f: Vec<&str> = line.split(',').collect();
                    if f.len() == 7 && f[0] == id && f[1] == "0" {
                        let x: f64 = f[4].parse().unwrap_or(0.0);
                        let y: f64 = f[5].parse().unwrap_or(0.0);
                        if f[2] == "base" {
                            base_pts.push((x, y));
                        } else {
                            shifted_pts.push((x, y));
                        }
                    }
                }
                if base_pts.is_empty() {
                    continue;
                }
                let plot = LinePlot {
                    title: format!("reverse trajectory, model {id} (pair 0)"),
                    x_label: "c0".into(),
                    y_label: "c1".into(),
                    series: vec![
                        Series { name: "base seed".into(), points: base_pts },
                        Series { name: "shifted seed".into(), points: shifted_pts },
                    ],
                };
                let name = format!("trajectory_{id}.svg");
                writer.emit(&name, plot.to_svg().as_bytes())?;
                let _ = writeln!(md, "\n![trajectory {id}]({name})");
            }
        }
    }

    writer.emit("report.md", md.as_bytes())?;
    writer.finalize()
}
