//! Subcommand implementations. Each writes under the run directory and
//! returns the files it read and wrote for the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use methylgraph::gnn::PatientBag;
use methylgraph::io::{
    export_heatmap, format_f64, load_checkpoint, load_dm_matrix, load_features_with_dim, load_folds, load_graph,
    load_label_table, load_manifest, load_predictions, save_checkpoint, save_folds, save_graph, save_label_table,
    save_predictions, write_atomic, LabelTable,
};
use methylgraph::labels::{make_labels_with, GmmOptions, Linkage};
use methylgraph::metrics::{auroc, average_precision, bootstrap_compare, Metric};
use methylgraph::spatial::{build_graph, WsiGraph, DEFAULT_MAX_EDGE_PX};
use methylgraph::training::{cohort_of, cross_validate, TrainHistory};
use serde::{Deserialize, Serialize};

use crate::args::{BuildGraphsArgs, CompareArgs, EvalArgs, GroupLabelsArgs, HeatmapArgs, SynthArgs, TrainArgs};
use crate::config::{resolve_synth, resolve_train, Globals, Resolver, RunConfigFile};
use crate::error::{require, CliError, CliResult};
use crate::synth::{group_name, synthesize};

/// Files a command consumed and produced.
#[derive(Debug, Default)]
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config: serde_json::Value,
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        methylgraph::Error::Corruption { path: path.to_path_buf(), message: e.to_string() }.into()
    })
}

pub fn synth(g: &Globals, file: &RunConfigFile, args: &SynthArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let spec = resolve_synth(r, &args.overrides(), &file.synth, g.seed);
    r.echo();
    create_dir(&g.out)?;
    let written = synthesize(&spec, &g.out)?;
    Ok(Outcome {
        inputs: vec![],
        outputs: written.files.iter().map(|f| g.out.join(f)).collect(),
        config: serde_json::to_value(&spec).unwrap_or_default(),
    })
}

#[derive(Serialize)]
struct GroupSummary {
    group: String,
    genes: Vec<String>,
    gmm_means: [f64; 2],
    gmm_variances: [f64; 2],
    gmm_weights: [f64; 2],
    log_likelihood: f64,
    positives: usize,
}

pub fn group_labels(g: &Globals, file: &RunConfigFile, args: &GroupLabelsArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let dm_path = r.pick("dm", args.dm.clone(), None, g.out.join("dm_matrix.csv"));
    let k = r.pick("labels.k", args.k, file.labels.k, 2);
    let linkage_name = r.pick("labels.linkage", args.linkage.clone(), file.labels.linkage.clone(), "ward".to_string());
    r.echo();
    let linkage: Linkage = linkage_name.parse()?;
    require(&dm_path, "DM matrix", "synth")?;
    let dm = load_dm_matrix(&dm_path)?;
    let (labels, grouping) = make_labels_with(&dm, k, linkage, &GmmOptions::default())?;
    let names: Vec<String> = match &file.labels.group_names {
        Some(n) if n.len() == k => n.clone(),
        Some(n) => return Err(CliError::Config(format!("{} group names for k = {k}", n.len()))),
        None => (0..k).map(group_name).collect(),
    };

    let dir = g.out.join("labels");
    create_dir(&dir)?;
    let table = LabelTable { groups: names.clone(), patients: labels.patients.clone(), values: labels.binary.clone() };
    let labels_csv = dir.join("labels.csv");
    save_label_table(&labels_csv, &table)?;

    let mean_csv = dir.join("group_mean_dm.csv");
    let mean_dm = methylgraph::labels::DmMatrix::new(labels.patients.clone(), names.clone(), labels.mean_dm.clone())?;
    methylgraph::io::save_dm_matrix(&mean_csv, &mean_dm)?;

    let newick = dir.join("dendrogram.nwk");
    let mut tree = grouping.dendrogram.to_newick(dm.genes());
    tree.push('\n');
    write_atomic(&newick, tree.as_bytes())?;

    let summary: Vec<GroupSummary> = (0..k)
        .map(|gi| GroupSummary {
            group: names[gi].clone(),
            genes: grouping.members(gi).into_iter().map(|j| dm.genes()[j].clone()).collect(),
            gmm_means: labels.gmms[gi].means,
            gmm_variances: labels.gmms[gi].variances,
            gmm_weights: labels.gmms[gi].weights,
            log_likelihood: labels.gmms[gi].log_likelihood,
            positives: labels.column(gi).iter().filter(|&&v| v == 1).count(),
        })
        .collect();
    let groups_json = dir.join("groups.json");
    write_json(&groups_json, &summary)?;
    Ok(Outcome {
        inputs: vec![dm_path],
        outputs: vec![labels_csv, mean_csv, newick, groups_json],
        config: serde_json::json!({ "k": k, "linkage": linkage_name }),
    })
}

/// Written by build-graphs: where each patient's graphs live.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphIndex {
    pub cohort: String,
    pub feature_dim: usize,
    pub patch_size_px: f64,
    pub max_edge_px: f64,
    pub patients: Vec<IndexedPatient>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexedPatient {
    pub patient_id: String,
    /// Relative to the index file.
    pub graphs: Vec<PathBuf>,
    pub labels: BTreeMap<String, u8>,
}

pub fn build_graphs(g: &Globals, file: &RunConfigFile, args: &BuildGraphsArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let manifest_path = r.pick("manifest", args.manifest.clone(), file.manifest.clone(), g.out.join("manifest.json"));
    let max_edge = r.pick("max_edge_px", args.max_edge_px, file.max_edge_px, DEFAULT_MAX_EDGE_PX);
    r.echo();
    require(&manifest_path, "cohort manifest", "synth")?;
    let manifest = load_manifest(&manifest_path)?;
    let dir = g.out.join("graphs");
    create_dir(&dir)?;

    let mut inputs = vec![manifest_path.clone()];
    let mut outputs = Vec::new();
    let mut patients = Vec::with_capacity(manifest.patients.len());
    for p in &manifest.patients {
        let mut graphs = Vec::new();
        for f in &p.wsi_feature_files {
            let path = manifest.resolve(f);
            let nodes = load_features_with_dim(&path, manifest.feature_dim)?;
            let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let slide_id = format!("{}/{stem}", p.patient_id);
            let graph = build_graph(slide_id, nodes, max_edge)?;
            let name = PathBuf::from(format!("{}__{stem}.json", p.patient_id));
            save_graph(&dir.join(&name), &graph)?;
            inputs.push(path);
            outputs.push(dir.join(&name));
            graphs.push(name);
        }
        patients.push(IndexedPatient { patient_id: p.patient_id.clone(), graphs, labels: p.labels.clone() });
    }
    let index = GraphIndex {
        cohort: manifest.cohort.clone(),
        feature_dim: manifest.feature_dim,
        patch_size_px: manifest.patch_size_px,
        max_edge_px: max_edge,
        patients,
    };
    let index_path = dir.join("index.json");
    write_json(&index_path, &index)?;
    outputs.push(index_path);
    Ok(Outcome { inputs, outputs, config: serde_json::json!({ "max_edge_px": max_edge }) })
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    auroc: Option<f64>,
    ap: Option<f64>,
    held_out: usize,
}

fn history_csv(history: &TrainHistory) -> String {
    let mut s = String::from("epoch,loss,skipped_batches,val_auroc\n");
    for (e, loss) in history.epoch_loss.iter().enumerate() {
        let val = history.val_auroc[e].map(format_f64).unwrap_or_default();
        s.push_str(&format!("{e},{},{},{val}\n", format_f64(*loss), history.skipped_batches[e]));
    }
    s
}

fn load_graph_index(path: &Path) -> CliResult<GraphIndex> {
    require(path, "graph index", "build-graphs")?;
    read_json(path)
}

pub fn train(g: &Globals, file: &RunConfigFile, args: &TrainArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let index_path = r.pick("graphs", args.graphs.clone(), None, g.out.join("graphs/index.json"));
    let default_labels = g.out.join("labels/labels.csv");
    let labels_path = r.pick("labels", args.labels.clone().map(Some), None, default_labels.exists().then_some(default_labels));
    let config = resolve_train(r, &args.overrides(), &file.train, g);
    r.echo();
    config.validate()?;

    let index = load_graph_index(&index_path)?;
    let base = index_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut inputs = vec![index_path.clone()];

    // labels per group: either the label table or the manifest labels
    let mut table: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    let group_order: Vec<String> = if let Some(lp) = &labels_path {
        require(lp, "label table", "group-labels")?;
        inputs.push(lp.clone());
        let t = load_label_table(lp)?;
        for (gi, name) in t.groups.iter().enumerate() {
            table.insert(name.clone(), t.as_map(gi));
        }
        t.groups.clone()
    } else {
        for p in &index.patients {
            for (name, &v) in &p.labels {
                table.entry(name.clone()).or_default().insert(p.patient_id.clone(), v == 1);
            }
        }
        table.keys().cloned().collect()
    };
    let groups: Vec<String> = if args.all_groups {
        group_order
    } else {
        let gname = args.group.clone().or_else(|| group_order.first().cloned()).ok_or_else(|| {
            CliError::Config("no gene groups found; pass --labels or add labels to the manifest".into())
        })?;
        if !table.contains_key(&gname) {
            return Err(CliError::Config(format!("unknown group {gname:?}; available: {}", group_order.join(", "))));
        }
        vec![gname]
    };

    let mut graphs: Vec<(String, Vec<Arc<WsiGraph>>)> = Vec::with_capacity(index.patients.len());
    for p in &index.patients {
        let mut list = Vec::new();
        for f in &p.graphs {
            let path = base.join(f);
            require(&path, "graph file", "build-graphs")?;
            list.push(Arc::new(load_graph(&path)?));
            inputs.push(path);
        }
        graphs.push((p.patient_id.clone(), list));
    }

    let folds_split = match &args.folds_file {
        Some(f) => {
            inputs.push(f.clone());
            Some(load_folds(f)?)
        }
        None => None,
    };

    let mut outputs = Vec::new();
    for group in &groups {
        let labels = &table[group];
        let mut bags = Vec::with_capacity(graphs.len());
        let mut missing = Vec::new();
        for (id, gs) in &graphs {
            match labels.get(id) {
                Some(&l) => bags.push(PatientBag::new(id.clone(), gs.clone(), l)?),
                None => missing.push(id.as_str()),
            }
        }
        if !missing.is_empty() {
            return Err(CliError::Config(format!("group {group}: no label for {}", missing.join(", "))));
        }
        eprintln!("train: group {group}, {} patients", bags.len());
        let started = std::time::Instant::now();
        let cv = cross_validate(&bags, &config, folds_split.clone())?;
        eprintln!("train: group {group} finished in {:.1}s", started.elapsed().as_secs_f64());

        let dir = g.out.join("train").join(group);
        create_dir(&dir)?;
        let folds_csv = dir.join("folds.csv");
        save_folds(&folds_csv, &cv.split)?;
        outputs.push(folds_csv);
        let cfg_json = serde_json::to_value(&config).unwrap_or_default();
        let mut summaries = Vec::new();
        for f in &cv.folds {
            let ckpt = dir.join(format!("fold{}.ckpt", f.fold));
            save_checkpoint(&ckpt, &f.model, config.seed, cfg_json.clone())?;
            let hist = dir.join(format!("history_fold{}.csv", f.fold));
            write_atomic(&hist, history_csv(&f.history).as_bytes())?;
            let cohort = cohort_of(&f.predictions)?;
            let summary = FoldSummary {
                fold: f.fold,
                auroc: auroc(&cohort).ok(),
                ap: average_precision(&cohort).ok(),
                held_out: f.predictions.len(),
            };
            eprintln!("train: group {group} fold {} auroc {:?}", f.fold, summary.auroc);
            summaries.push(summary);
            outputs.extend([ckpt, hist]);
        }
        let pred = dir.join("predictions.csv");
        save_predictions(&pred, &cv.pooled_predictions())?;
        let summary_path = dir.join("summary.json");
        write_json(&summary_path, &serde_json::json!({ "group": group, "folds": summaries }))?;
        outputs.extend([pred, summary_path]);
    }
    Ok(Outcome { inputs, outputs, config: serde_json::to_value(&config).unwrap_or_default() })
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupEval {
    pub group: String,
    pub fold_auroc: Vec<f64>,
    pub fold_ap: Vec<f64>,
    pub mean_auroc: f64,
    pub sd_auroc: f64,
    pub mean_ap: f64,
    pub sd_ap: f64,
    pub pooled_auroc: f64,
    pub pooled_ap: f64,
}

pub fn eval(g: &Globals, _file: &RunConfigFile, args: &EvalArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let train_dir = r.pick("train_dir", args.train_dir.clone(), None, g.out.join("train"));
    r.echo();
    require(&train_dir, "training directory", "train")?;
    let mut groups: Vec<PathBuf> = fs::read_dir(&train_dir)
        .map_err(|e| CliError::io(&train_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("predictions.csv").is_file())
        .collect();
    groups.sort();
    if groups.is_empty() {
        return Err(CliError::MissingArtifact {
            what: "predictions",
            path: train_dir.join("<group>/predictions.csv"),
            producer: "train",
        });
    }

    let mut csv = String::from("group,fold,auroc,ap\n");
    let mut evals = Vec::new();
    let mut inputs = Vec::new();
    for dir in &groups {
        let group = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let path = dir.join("predictions.csv");
        let preds = load_predictions(&path)?;
        inputs.push(path);
        let folds = preds.iter().map(|p| p.fold).max().map_or(0, |m| m + 1);
        let (mut fa, mut fp) = (Vec::new(), Vec::new());
        for k in 0..folds {
            let subset: Vec<_> = preds.iter().filter(|p| p.fold == k).cloned().collect();
            let c = cohort_of(&subset)?;
            let (a, p) = (auroc(&c)?, average_precision(&c)?);
            csv.push_str(&format!("{group},{k},{},{}\n", format_f64(a), format_f64(p)));
            fa.push(a);
            fp.push(p);
        }
        let (ma, sa) = mean_sd(&fa);
        let (mp, sp) = mean_sd(&fp);
        csv.push_str(&format!("{group},mean±sd,{ma:.4}±{sa:.4},{mp:.4}±{sp:.4}\n"));
        let pooled = cohort_of(&preds)?;
        evals.push(GroupEval {
            group,
            fold_auroc: fa,
            fold_ap: fp,
            mean_auroc: ma,
            sd_auroc: sa,
            mean_ap: mp,
            sd_ap: sp,
            pooled_auroc: auroc(&pooled)?,
            pooled_ap: average_precision(&pooled)?,
        });
    }
    let dir = g.out.join("eval");
    create_dir(&dir)?;
    let csv_path = dir.join("eval.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    let json_path = dir.join("eval.json");
    write_json(&json_path, &evals)?;
    for e in &evals {
        eprintln!("eval: {} mean AUROC {:.4} ± {:.4}, AP {:.4} ± {:.4}", e.group, e.mean_auroc, e.sd_auroc, e.mean_ap, e.sd_ap);
    }
    Ok(Outcome { inputs, outputs: vec![csv_path, json_path], config: serde_json::Value::Null })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub metric: Metric,
    pub n_runs: usize,
    pub seed: u64,
    pub patients: usize,
    pub value_a: f64,
    pub value_b: f64,
    pub median_a: f64,
    pub median_b: f64,
    pub redraws: usize,
    pub p_value: f64,
}

pub fn compare(g: &Globals, file: &RunConfigFile, args: &CompareArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let runs = r.pick("bootstrap_runs", args.runs, file.bootstrap_runs, 1000);
    r.echo();
    let predictions = |p: &Path| if p.is_dir() { p.join("predictions.csv") } else { p.to_path_buf() };
    let (a_path, b_path) = (predictions(&args.a), predictions(&args.b));
    require(&a_path, "prediction file", "train")?;
    require(&b_path, "prediction file", "train")?;
    let a = cohort_of(&load_predictions(&a_path)?)?;
    let b = cohort_of(&load_predictions(&b_path)?)?;
    let report = bootstrap_compare(&a, &b, args.metric, runs, g.seed)?;
    let out = CompareReport {
        metric: args.metric,
        n_runs: runs,
        seed: g.seed,
        patients: a.len(),
        value_a: args.metric.compute(&a)?,
        value_b: args.metric.compute(&b)?,
        median_a: report.median_a(),
        median_b: report.median_b(),
        redraws: report.redraws,
        p_value: report.p_value,
    };
    let dir = g.out.join("compare");
    create_dir(&dir)?;
    let json_path = dir.join("compare.json");
    write_json(&json_path, &out)?;
    let mut csv = String::from("run,a,b\n");
    for (i, (x, y)) in report.values_a.iter().zip(&report.values_b).enumerate() {
        csv.push_str(&format!("{i},{},{}\n", format_f64(*x), format_f64(*y)));
    }
    let csv_path = dir.join("bootstrap.csv");
    write_atomic(&csv_path, csv.as_bytes())?;
    eprintln!("compare: {:?} {:.4} vs {:.4}, p = {}", out.metric, out.value_a, out.value_b, out.p_value);
    Ok(Outcome {
        inputs: vec![a_path, b_path],
        outputs: vec![json_path, csv_path],
        config: serde_json::json!({ "metric": args.metric, "runs": runs }),
    })
}

pub fn heatmap(g: &Globals, file: &RunConfigFile, args: &HeatmapArgs, r: &mut Resolver) -> CliResult<Outcome> {
    let downsample = r.pick("downsample", args.downsample, file.downsample, 16.0);
    let patch = r.pick("patch_size_px", args.patch_size_px, None, 1024.0);
    r.echo();
    require(&args.checkpoint, "checkpoint", "train")?;
    require(&args.graph, "graph file", "build-graphs")?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    let graph = load_graph(&args.graph)?;
    let preds = model.node_predictions(&graph)?;
    let dir = g.out.join("heatmaps");
    create_dir(&dir)?;
    let stem = args.graph.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "slide".into());
    let files = export_heatmap(&graph, &preds.total, &dir.join(&stem), downsample, patch)?;
    let score: f64 = preds.total.iter().sum();
    eprintln!("heatmap: {} nodes, graph score {score}", graph.node_count());
    let mut outputs = vec![files.csv];
    outputs.extend(files.png);
    Ok(Outcome {
        inputs: vec![args.checkpoint.clone(), args.graph.clone()],
        outputs,
        config: serde_json::json!({ "downsample": downsample, "patch_size_px": patch }),
    })
}
