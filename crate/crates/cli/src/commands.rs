//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use goldstd_core::dataset::{synth_generate, write_channel_csv, Partition};
use goldstd_core::fusion::{ComboId, GoldStandard};
use goldstd_core::metrics;
use goldstd_core::model::{
    evaluate, grid_search, late_fuse, predict_full, fusion_config, PredictionSet, SubjectData,
    TrainedModel,
};
use goldstd_core::signal::TimeSeries;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{build_gold_all, load_dataset, parse_combos, Dataset};

fn ensure_dir(path: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_file(path: &Path, content: &str) -> anyhow::Result<()> {
    std::fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

/// Provenance sidecar stored next to each gold-standard CSV.
#[derive(Debug, Serialize, Deserialize)]
struct Provenance {
    subject_id: String,
    combo: String,
    weights: Vec<(String, f64)>,
    uniform_fallback: bool,
    scale: goldstd_core::fusion::OutputScale,
    alignment: Option<AlignmentProvenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct AlignmentProvenance {
    iterations: usize,
    converged: bool,
    pre_agreement: f64,
    post_agreement: f64,
    degenerate: Vec<String>,
}

fn provenance(subject_id: &str, gold: &GoldStandard) -> Provenance {
    Provenance {
        subject_id: subject_id.to_string(),
        combo: gold.combo.tag().to_string(),
        weights: gold
            .weights
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect(),
        uniform_fallback: gold.uniform_fallback,
        scale: gold.scale,
        alignment: gold.alignment_meta.as_ref().map(|m| AlignmentProvenance {
            iterations: m.iterations,
            converged: m.converged,
            pre_agreement: m.pre_agreement,
            post_agreement: m.post_agreement,
            degenerate: m.degenerate.clone(),
        }),
    }
}

pub fn cmd_synth(
    config: &RunConfig,
    subjects: Option<usize>,
    duration: Option<f64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut synth = config.synth.clone();
    if let Some(n) = subjects {
        synth.n_subjects = n;
    }
    if let Some(d) = duration {
        synth.duration_s = d;
    }
    synth_generate(&synth, out)?;
    let mut echoed = config.clone();
    echoed.synth = synth.clone();
    echoed.echo(out)?;
    println!(
        "wrote {} subjects x {} s at {} Hz labels to {}",
        synth.n_subjects,
        synth.duration_s,
        config.target_fs,
        out.display()
    );
    Ok(())
}

pub fn cmd_fuse(
    config: &RunConfig,
    data: &Path,
    combo_arg: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let combos = parse_combos(combo_arg)?;
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;
    let raaw = config.raaw();
    let mut failures = Vec::new();
    for combo in &combos {
        let dir = out.join("gold").join(combo.tag());
        ensure_dir(&dir)?;
        for (subject_id, result) in build_gold_all(&dataset, *combo, &raaw) {
            match result {
                Ok(gold) => {
                    write_channel_csv(&dir.join(format!("{subject_id}.csv")), &gold.series)?;
                    let sidecar = serde_json::to_string_pretty(&provenance(&subject_id, &gold))?;
                    write_file(&dir.join(format!("{subject_id}.json")), &(sidecar + "\n"))?;
                }
                Err(msg) => {
                    eprintln!("{}: {subject_id}: {msg}", combo.tag());
                    failures.push((combo.tag(), subject_id));
                }
            }
        }
    }
    println!(
        "fused {} combo(s) x {} subject(s) into {}",
        combos.len(),
        dataset.subjects.len(),
        out.display()
    );
    if !failures.is_empty() {
        bail!("{} gold standard(s) failed", failures.len());
    }
    Ok(())
}

pub fn cmd_agreement(
    config: &RunConfig,
    data: &Path,
    combo_arg: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let combos = parse_combos(combo_arg)?;
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;

    let mut long = String::from("combo,subject_id,agreement\n");
    let mut summary = String::from("combo,mu,sd\n");
    for combo in &combos {
        let members = combo.members();
        if members.len() < 2 {
            continue;
        }
        let mut per_subject = BTreeMap::new();
        for s in &dataset.subjects {
            let cc = metrics::pairwise_agreement(&s.bundle, members)
                .with_context(|| format!("agreement for {} on {}", s.subject_id, combo.tag()))?;
            per_subject.insert(s.subject_id.clone(), cc);
        }
        let report = metrics::aggregate_agreement(combo.tag(), per_subject)?;
        for (subject, cc) in &report.per_subject {
            writeln!(long, "{},{subject},{cc}", combo.tag())?;
        }
        writeln!(summary, "{},{},{}", combo.tag(), report.mu, report.sd)?;
    }
    write_file(&out.join("agreement.csv"), &long)?;
    write_file(&out.join("agreement_summary.csv"), &summary)?;
    println!("wrote agreement tables to {}", out.display());
    Ok(())
}

pub fn cmd_corr(config: &RunConfig, data: &Path, out: &Path) -> anyhow::Result<()> {
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;
    let bundles: Vec<_> = dataset.subjects.iter().map(|s| s.bundle.clone()).collect();
    let names: Vec<&str> = goldstd_core::dataset::CHANNEL_NAMES
        .iter()
        .filter(|n| bundles.iter().all(|b| b.channels.contains_key(**n)))
        .copied()
        .collect();
    if names.len() < 2 {
        bail!("fewer than 2 common channels across subjects");
    }
    let matrix = metrics::correlation_matrix(&bundles, &names)?;
    let mut csv = String::from("row,col,value\n");
    for (i, row_name) in matrix.names.iter().enumerate() {
        for (j, col_name) in matrix.names.iter().enumerate() {
            writeln!(csv, "{row_name},{col_name},{}", matrix.entries[i][j])?;
        }
    }
    write_file(&out.join("corr_matrix.csv"), &csv)?;
    println!(
        "wrote {}x{} mean cross-subject correlation matrix to {}",
        names.len(),
        names.len(),
        out.display()
    );
    Ok(())
}

pub fn cmd_stats(
    config: &RunConfig,
    data: &Path,
    combo_arg: &str,
    out: &Path,
) -> anyhow::Result<()> {
    let combos = parse_combos(combo_arg)?;
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;
    let raaw = config.raaw();

    let mut detail = String::from("combo,subject_id,mac,mean,sd\n");
    let mut summary = String::from("combo,mac_mu,mac_sd,skewness_of_means\n");
    for combo in &combos {
        let mut macs = Vec::new();
        let mut means = Vec::new();
        for (subject_id, result) in build_gold_all(&dataset, *combo, &raaw) {
            let gold = result
                .map_err(|msg| anyhow::anyhow!("{}: {subject_id}: {msg}", combo.tag()))?;
            let v = &gold.series.values;
            let mac = metrics::mean_absolute_change(v)?;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let sd = metrics::variance(v).sqrt();
            writeln!(detail, "{},{subject_id},{mac},{mean},{sd}", combo.tag())?;
            macs.push(mac);
            means.push(mean);
        }
        let mac_mu = macs.iter().sum::<f64>() / macs.len() as f64;
        let mac_sd = metrics::variance(&macs).sqrt();
        let skew = if means.len() >= 3 {
            metrics::skewness(&means)?
        } else {
            f64::NAN
        };
        writeln!(summary, "{},{mac_mu},{mac_sd},{skew}", combo.tag())?;
    }
    write_file(&out.join("stats.csv"), &detail)?;
    write_file(&out.join("stats_summary.csv"), &summary)?;
    println!("wrote distribution statistics to {}", out.display());
    Ok(())
}

/// A trained model plus the context needed to reuse it.
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedModel {
    pub combo: String,
    pub feature_set: String,
    pub model: TrainedModel,
}

impl SavedModel {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading model {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing model {}", path.display()))
    }
}

fn pick_feature_set(dataset: &Dataset, requested: Option<&str>) -> anyhow::Result<String> {
    let first = &dataset.subjects[0];
    match requested {
        Some(name) => {
            if !first.features.contains_key(name) {
                bail!(
                    "feature set {name:?} not found (available: {:?})",
                    first.features.keys().collect::<Vec<_>>()
                );
            }
            Ok(name.to_string())
        }
        None => first
            .features
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| anyhow::anyhow!("dataset has no feature sets")),
    }
}

/// Builds per-subject training data against a combo's gold standard.
fn assemble_subjects(
    dataset: &Dataset,
    combo: ComboId,
    feature_set: &str,
    config: &RunConfig,
) -> anyhow::Result<BTreeMap<Partition, Vec<SubjectData>>> {
    let raaw = config.raaw();
    let mut by_partition: BTreeMap<Partition, Vec<SubjectData>> = BTreeMap::new();
    for (subject_id, result) in build_gold_all(dataset, combo, &raaw) {
        let gold =
            result.map_err(|msg| anyhow::anyhow!("{}: {subject_id}: {msg}", combo.tag()))?;
        let subject = dataset
            .subject(&subject_id)
            .expect("gold built from dataset subjects");
        let features = subject
            .features
            .get(feature_set)
            .ok_or_else(|| anyhow::anyhow!("subject {subject_id} lacks set {feature_set:?}"))?;
        let partition = dataset.partitioning.assignment[&subject_id];
        by_partition.entry(partition).or_default().push(SubjectData {
            subject_id: subject_id.clone(),
            features: features.values.clone(),
            labels: gold.series.values.clone(),
        });
    }
    Ok(by_partition)
}

fn partition_slice<'a>(
    map: &'a BTreeMap<Partition, Vec<SubjectData>>,
    p: Partition,
) -> &'a [SubjectData] {
    map.get(&p).map(|v| v.as_slice()).unwrap_or(&[])
}

fn results_rows(
    rows: &mut String,
    feature_set: &str,
    combo: ComboId,
    model: &TrainedModel,
    by_partition: &BTreeMap<Partition, Vec<SubjectData>>,
) -> anyhow::Result<()> {
    for partition in [Partition::Devel, Partition::Test] {
        let subjects = partition_slice(by_partition, partition);
        if subjects.is_empty() {
            continue;
        }
        let (report, _) = evaluate(model, subjects)?;
        writeln!(
            rows,
            "{feature_set},{},{},{},{}",
            combo.tag(),
            partition.label(),
            report.concatenated_ccc,
            report.mean_subject_ccc
        )?;
    }
    Ok(())
}

pub fn cmd_train(
    config: &RunConfig,
    data: &Path,
    combo_arg: &str,
    feature_set: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    let combos = parse_combos(combo_arg)?;
    if combos.len() != 1 {
        bail!("train expects exactly one --combo");
    }
    let combo = combos[0];
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;
    let feature_set = pick_feature_set(&dataset, feature_set)?;
    let by_partition = assemble_subjects(&dataset, combo, &feature_set, config)?;
    let train_set = partition_slice(&by_partition, Partition::Train);
    let devel_set = partition_slice(&by_partition, Partition::Devel);
    if train_set.is_empty() || devel_set.is_empty() {
        bail!("train and devel partitions must both be non-empty");
    }

    let (best, leaderboard) = grid_search(
        &config.grid,
        &config.model,
        train_set,
        devel_set,
        config.win,
        config.hop,
    )?;

    let mut lb = String::from("rank,grid_index,bidirectional,hidden,layers,lr,devel_ccc,best_epoch\n");
    for (rank, e) in leaderboard.iter().enumerate() {
        writeln!(
            lb,
            "{},{},{},{},{},{},{},{}",
            rank + 1,
            e.grid_index,
            e.config.bidirectional,
            e.config.hidden,
            e.config.layers,
            e.config.lr,
            e.devel_ccc,
            e.best_epoch
        )?;
    }
    write_file(&out.join("leaderboard.csv"), &lb)?;

    let mut hist = String::from("epoch,train_loss,devel_ccc\n");
    for e in &best.history {
        writeln!(hist, "{},{},{}", e.epoch, e.train_loss, e.devel_ccc)?;
    }
    write_file(&out.join("history.csv"), &hist)?;

    let mut rows = String::from("feature_set,combo,partition,ccc,mean_subject_ccc\n");
    results_rows(&mut rows, &feature_set, combo, &best, &by_partition)?;
    write_file(&out.join("results.csv"), &rows)?;

    let saved = SavedModel {
        combo: combo.tag().to_string(),
        feature_set: feature_set.clone(),
        model: best,
    };
    write_file(
        &out.join("model.json"),
        &(serde_json::to_string(&saved)? + "\n"),
    )?;
    let cfg = &saved.model.config;
    println!(
        "trained {}/h{}/n{}/lr{} on {} / combo {} -> {}",
        if cfg.bidirectional { "bi" } else { "uni" },
        cfg.hidden,
        cfg.layers,
        cfg.lr,
        feature_set,
        combo.tag(),
        out.display()
    );
    Ok(())
}

pub fn cmd_eval(
    config: &RunConfig,
    model_path: &Path,
    data: &Path,
    out: &Path,
) -> anyhow::Result<()> {
    let saved = SavedModel::load(model_path)?;
    let combo = ComboId::from_tag(&saved.combo).map_err(|e| anyhow::anyhow!("{e}"))?;
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;
    let by_partition = assemble_subjects(&dataset, combo, &saved.feature_set, config)?;

    let mut rows = String::from("feature_set,combo,partition,ccc,mean_subject_ccc\n");
    let mut per_subject = String::from("partition,subject_id,ccc\n");
    let pred_dir = out.join("predictions");
    ensure_dir(&pred_dir)?;
    for partition in [Partition::Train, Partition::Devel, Partition::Test] {
        let subjects = partition_slice(&by_partition, partition);
        if subjects.is_empty() {
            continue;
        }
        let (report, preds) = evaluate(&saved.model, subjects)?;
        writeln!(
            rows,
            "{},{},{},{},{}",
            saved.feature_set,
            combo.tag(),
            partition.label(),
            report.concatenated_ccc,
            report.mean_subject_ccc
        )?;
        for (subject, ccc) in &report.per_subject {
            writeln!(per_subject, "{},{subject},{ccc}", partition.label())?;
        }
        for (subject, ts) in &preds.per_subject {
            write_channel_csv(&pred_dir.join(format!("{subject}.csv")), ts)?;
        }
    }
    write_file(&out.join("eval.csv"), &rows)?;
    write_file(&out.join("eval_subjects.csv"), &per_subject)?;
    println!("evaluated {} -> {}", model_path.display(), out.display());
    Ok(())
}

pub fn cmd_latefuse(
    config: &RunConfig,
    data: &Path,
    model_paths: &[PathBuf],
    combo_arg: Option<&str>,
    out: &Path,
) -> anyhow::Result<()> {
    if model_paths.len() < 2 {
        bail!("latefuse needs at least 2 --model files");
    }
    let models: Vec<SavedModel> = model_paths
        .iter()
        .map(|p| SavedModel::load(p))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let combo = match combo_arg {
        Some(arg) => {
            let combos = parse_combos(arg)?;
            if combos.len() != 1 {
                bail!("latefuse expects exactly one --combo");
            }
            combos[0]
        }
        None => ComboId::from_tag(&models[0].combo).map_err(|e| anyhow::anyhow!("{e}"))?,
    };
    let dataset = load_dataset(data, config)?;
    ensure_dir(out)?;
    config.echo(out)?;

    // Gold labels for the fusion target.
    let raaw = config.raaw();
    let mut gold = BTreeMap::new();
    for (subject_id, result) in build_gold_all(&dataset, combo, &raaw) {
        let g = result.map_err(|msg| anyhow::anyhow!("{}: {subject_id}: {msg}", combo.tag()))?;
        gold.insert(subject_id, g.series.values.clone());
    }

    // Full-length predictions of every base model on every subject.
    let mut sets = Vec::new();
    for saved in &models {
        let mut per_subject = BTreeMap::new();
        for s in &dataset.subjects {
            let features = s
                .features
                .get(&saved.feature_set)
                .ok_or_else(|| {
                    anyhow::anyhow!(
                        "subject {} lacks set {:?}",
                        s.subject_id,
                        saved.feature_set
                    )
                })?;
            let p = predict_full(
                &saved.model.params,
                &features.values,
                saved.model.win,
                saved.model.hop,
            )?;
            per_subject.insert(
                s.subject_id.clone(),
                TimeSeries::new(&s.subject_id, "PRED", config.target_fs, 0.0, p)
                    .map_err(|e| anyhow::anyhow!("{e}"))?,
            );
        }
        sets.push(PredictionSet { per_subject });
    }

    let fusion_cfg = fusion_config(config.seed, config.fusion_epochs, config.fusion_patience);
    let result = late_fuse(
        &sets,
        &gold,
        &dataset.partitioning,
        &fusion_cfg,
        config.win,
        config.hop,
    )?;

    let mut rows = String::from("combo,partition,ccc,mean_subject_ccc\n");
    for (partition, report) in [("devel", &result.devel), ("test", &result.test)] {
        writeln!(
            rows,
            "{},{partition},{},{}",
            combo.tag(),
            report.concatenated_ccc,
            report.mean_subject_ccc
        )?;
    }
    write_file(&out.join("latefuse.csv"), &rows)?;

    let fused_dir = out.join("fused");
    ensure_dir(&fused_dir)?;
    for (subject, ts) in &result.fused.per_subject {
        write_channel_csv(&fused_dir.join(format!("{subject}.csv")), ts)?;
    }
    write_file(
        &out.join("fusion_model.json"),
        &(serde_json::to_string(&result.model)? + "\n"),
    )?;
    println!(
        "late-fused {} models on combo {} -> {}",
        models.len(),
        combo.tag(),
        out.display()
    );
    Ok(())
}
