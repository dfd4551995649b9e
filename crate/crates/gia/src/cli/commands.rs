//! Command implementations behind the CLI front end.

use crate::cli::config::{apply_config, render_config};
use crate::cli::manifest::RunManifest;
use crate::encoder::PreparedGraph;
use crate::error::{Error, Result};
use crate::graphcore::io::{read_any, write_graph, LoadedGraph};
use crate::graphcore::{generate_corpus, line_graph_transform, parse_corpus_spec};
use crate::inference::{in_context_predict, InferenceConfig, InferenceMode, SupportSet};
use crate::trainer::{
    evaluate_episode, mix_seed, prepare_graph, pretrain, sample_episode, ModelBundle, TrainConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Load either container variant and bring it to the bundle's feature width;
/// knowledge graphs go through the line-graph transform first.
pub fn load_prepared(path: &Path, d_o: usize) -> Result<PreparedGraph> {
    match read_any(path)? {
        LoadedGraph::Node(g) => prepare_graph(&g, d_o),
        LoadedGraph::Knowledge(kg) => prepare_graph(&line_graph_transform(&kg, d_o)?, d_o),
    }
}

fn read_support_file(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut items = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let node: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { offset: lineno as u64, detail: format!("bad support line `{}`", line) })?;
        let class: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse { offset: lineno as u64, detail: format!("bad support line `{}`", line) })?;
        items.push((node, class));
    }
    if items.is_empty() {
        return Err(Error::Input(format!("support file {} is empty", path.display())));
    }
    Ok(items)
}

pub fn cmd_gen_synth(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("gen-synth");
    manifest.record("spec_file", spec_path.display());
    let spec = parse_corpus_spec(&fs::read_to_string(spec_path)?)?;
    let corpus = generate_corpus(&spec)?;
    manifest.stage("generate");

    fs::create_dir_all(out_dir)?;
    for (i, graph) in corpus.graphs.iter().enumerate() {
        let path = out_dir.join(format!("domain_{:02}.gia", i));
        write_graph(graph, &path)?;
        manifest.record(&format!("graph.{}", i), path.display());
    }
    let m = corpus.graphs.len();
    let mut csv = String::new();
    for i in 0..m {
        let row: Vec<String> = (0..m).map(|j| format!("{}", corpus.distances.at(i, j))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    fs::write(out_dir.join("distances.csv"), csv)?;
    manifest.record("domains", m);
    manifest.stage("write");
    manifest.append_to(out_dir)?;
    println!("wrote {} domain graphs and distances.csv to {}", m, out_dir.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_pretrain(
    corpus_dir: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
    seed: Option<u64>,
    episodes: Option<usize>,
    show_config: bool,
) -> Result<()> {
    let mut train = TrainConfig::default();
    let mut infer = InferenceConfig::default();
    if let Some(path) = config_path {
        apply_config(&fs::read_to_string(path)?, &mut train, &mut infer)?;
    }
    if let Some(s) = seed {
        train.seed = s;
    }
    if let Some(e) = episodes {
        train.episodes = e;
    }
    if show_config {
        print!("{}", render_config(&train, &infer));
        return Ok(());
    }
    train.validate()?;

    let mut manifest = RunManifest::new("pretrain");
    manifest.record("corpus_dir", corpus_dir.display());
    let mut paths: Vec<PathBuf> = fs::read_dir(corpus_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "gia"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Input(format!("no .gia graphs found in {}", corpus_dir.display())));
    }
    let mut corpus = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        manifest.record(&format!("corpus.{}", i), p.display());
        match read_any(p)? {
            LoadedGraph::Node(g) => corpus.push(g),
            LoadedGraph::Knowledge(kg) => corpus.push(line_graph_transform(&kg, train.d_o)?),
        }
    }
    manifest.stage("load");

    let report = pretrain(&corpus, &train)?;
    for w in &report.warnings {
        eprintln!("warning: {}", w);
    }
    manifest.stage("train");

    fs::create_dir_all(out_dir)?;
    let bundle_path = out_dir.join("model.bundle");
    report.bundle.save(&bundle_path)?;
    let mut curve = String::from("episode,loss\n");
    for (i, loss) in report.curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", i, loss));
    }
    fs::write(out_dir.join("curve.csv"), curve)?;
    manifest.record("bundle", bundle_path.display());
    manifest.record("bundle_hash", report.bundle.content_hash());
    manifest.record("episodes", report.curve.len());
    manifest.record("seed", train.seed);
    manifest.stage("write");
    manifest.append_to(out_dir)?;
    println!(
        "pretrained on {} graphs for {} episodes; bundle {} (hash {})",
        corpus.len(),
        report.curve.len(),
        bundle_path.display(),
        &report.bundle.content_hash()[..12]
    );
    Ok(())
}

pub fn cmd_embed(bundle_path: &Path, graph_path: &Path, support_path: &Path, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::new("embed");
    let bundle = ModelBundle::load(bundle_path)?;
    let prepared = load_prepared(graph_path, bundle.config.d_o)?;
    let support = read_support_file(support_path)?;
    manifest.stage("load");

    let embedding = crate::embedder::in_context_embedding(
        &prepared,
        &support,
        bundle.theta0.weights(),
        bundle.config.eta,
        &bundle.embedder,
    )?;
    let rendered: Vec<String> = embedding.vector.data().iter().map(|v| format!("{}", v)).collect();
    println!("embedding = {}", rendered.join(","));

    if !bundle.pretrain_embeddings.is_empty() {
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for (i, e) in bundle.pretrain_embeddings.iter().enumerate() {
            let dist = embedding.vector.sub(e)?.frobenius_norm();
            if dist < best_dist {
                best_dist = dist;
                best = i;
            }
        }
        println!("nearest_pretrain_domain = {}", best);
        println!("nearest_distance = {}", best_dist);
        manifest.record("nearest_pretrain_domain", best);
    }
    manifest.record("bundle_hash", bundle.content_hash());
    manifest.record("graph", graph_path.display());
    manifest.record("support", support_path.display());
    manifest.stage("embed");
    manifest.append_to(out_dir)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_infer(
    bundle_path: &Path,
    graph_path: &Path,
    support_path: &Path,
    queries_path: Option<&Path>,
    mode: &str,
    config_path: Option<&Path>,
    out_dir: &Path,
    scores_out: Option<&Path>,
) -> Result<()> {
    let mut manifest = RunManifest::new("infer");
    let mut train = TrainConfig::default();
    let mut infer_cfg = InferenceConfig::default();
    if let Some(path) = config_path {
        apply_config(&fs::read_to_string(path)?, &mut train, &mut infer_cfg)?;
    }
    infer_cfg.mode = InferenceMode::parse(mode)?;

    let bundle = ModelBundle::load(bundle_path)?;
    let prepared = load_prepared(graph_path, bundle.config.d_o)?;
    let items = read_support_file(support_path)?;
    let class_count = items.iter().map(|&(_, c)| c).max().unwrap() + 1;
    let support = SupportSet::new(items, class_count)?;

    let queries: Vec<usize> = match queries_path {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let mut out = Vec::new();
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                out.push(line.parse().map_err(|_| Error::Parse {
                    offset: lineno as u64,
                    detail: format!("bad query node id `{}`", line),
                })?);
            }
            out
        }
        None => {
            let in_support: std::collections::HashSet<usize> =
                support.items.iter().map(|&(v, _)| v).collect();
            (0..prepared.graph().node_count()).filter(|v| !in_support.contains(v)).collect()
        }
    };
    manifest.stage("load");

    let output = in_context_predict(&bundle, &prepared, &support, &queries, &infer_cfg)?;
    manifest.stage("predict");

    fs::create_dir_all(out_dir)?;
    let mut text = String::new();
    let way = support.class_count;
    for (i, &(node, position)) in output.predictions.iter().enumerate() {
        let score = output.scores.data()[i * way + position];
        text.push_str(&format!("{} {} {}\n", node, position, score));
    }
    let pred_path = out_dir.join("predictions.txt");
    fs::write(&pred_path, text)?;
    if let Some(path) = scores_out {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(
            format!("GIASCORES1 rows={} cols={}\n", output.scores.rows(), way).as_bytes(),
        );
        for &v in output.scores.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(path, bytes)?;
    }
    manifest.record("bundle_hash", bundle.content_hash());
    manifest.record("mode", infer_cfg.mode.name());
    manifest.record("queries", queries.len());
    manifest.record("predictions", pred_path.display());
    manifest.stage("write");
    manifest.append_to(out_dir)?;
    println!("wrote {} predictions to {}", queries.len(), pred_path.display());
    Ok(())
}

/// Shared episode protocol for `eval` and `ablate`.
#[allow(clippy::too_many_arguments)]
fn eval_protocol(
    bundle: &ModelBundle,
    prepared: &PreparedGraph,
    way: usize,
    shot: usize,
    queries_per_class: usize,
    episodes: usize,
    seed: u64,
    mode: InferenceMode,
    infer_cfg: &InferenceConfig,
    jobs: usize,
) -> Result<(f64, f64)> {
    let cfg = InferenceConfig { mode, ..infer_cfg.clone() };
    let run_episode = |i: usize| -> Result<f64> {
        let ep_seed = mix_seed(mix_seed(seed, shot as u64), i as u64);
        let mut rng = ChaCha20Rng::seed_from_u64(ep_seed);
        let episode = sample_episode(prepared.graph(), 0, way, shot, queries_per_class, &mut rng)?;
        evaluate_episode(bundle, prepared, &episode, &cfg)
    };
    let accuracies: Vec<f64> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {}", e)))?;
        pool.install(|| (0..episodes).into_par_iter().map(run_episode).collect::<Result<Vec<f64>>>())?
    } else {
        (0..episodes).map(run_episode).collect::<Result<Vec<f64>>>()?
    };
    let mean = accuracies.iter().sum::<f64>() / episodes as f64;
    let std = if episodes > 1 {
        (accuracies.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (episodes as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok((mean, std))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_eval(
    bundle_path: &Path,
    graph_path: &Path,
    way: usize,
    shots: &[usize],
    queries_per_class: usize,
    episodes: usize,
    seed: u64,
    mode: &str,
    config_path: Option<&Path>,
    jobs: usize,
    out_dir: &Path,
) -> Result<()> {
    if episodes == 0 || shots.is_empty() {
        return Err(Error::Config("evaluation needs at least one episode and one shot setting".into()));
    }
    let mut manifest = RunManifest::new("eval");
    let mut train = TrainConfig::default();
    let mut infer_cfg = InferenceConfig::default();
    if let Some(path) = config_path {
        apply_config(&fs::read_to_string(path)?, &mut train, &mut infer_cfg)?;
    }
    let modes: Vec<InferenceMode> = if mode == "all" {
        InferenceMode::ALL.to_vec()
    } else {
        vec![InferenceMode::parse(mode)?]
    };

    let bundle = ModelBundle::load(bundle_path)?;
    let prepared = load_prepared(graph_path, bundle.config.d_o)?;
    manifest.stage("load");

    let mut csv = String::from("shot,mode,mean_accuracy,std,episodes\n");
    for &shot in shots {
        for &m in &modes {
            let (mean, std) =
                eval_protocol(&bundle, &prepared, way, shot, queries_per_class, episodes, seed, m, &infer_cfg, jobs)?;
            csv.push_str(&format!("{},{},{:.6},{:.6},{}\n", shot, m.name(), mean, std, episodes));
            println!("shot={} mode={} accuracy={:.4} ± {:.4} over {} episodes", shot, m.name(), mean, std, episodes);
        }
    }
    manifest.stage("evaluate");

    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("metrics.csv"), csv)?;
    manifest.record("bundle_hash", bundle.content_hash());
    manifest.record("graph", graph_path.display());
    manifest.record("seed", seed);
    manifest.record("episodes", episodes);
    manifest.record("way", way);
    manifest.record("shots", shots.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("+"));
    manifest.stage("write");
    manifest.append_to(out_dir)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    bundle_paths: &[PathBuf],
    graph_path: &Path,
    way: usize,
    shots: &[usize],
    queries_per_class: usize,
    episodes: usize,
    seed: u64,
    jobs: usize,
    out_dir: &Path,
) -> Result<()> {
    if bundle_paths.is_empty() {
        return Err(Error::Input("ablation needs at least one bundle".into()));
    }
    let mut manifest = RunManifest::new("ablate");
    let infer_cfg = InferenceConfig::default();
    let mut csv = String::from("bundle,bundle_hash,shot,mode,mean_accuracy,std,episodes\n");
    println!("{:<28} {:>5} {:<12} {:>9} {:>9}", "bundle", "shot", "mode", "accuracy", "std");
    for (bi, bundle_path) in bundle_paths.iter().enumerate() {
        let bundle = ModelBundle::load(bundle_path)?;
        let prepared = load_prepared(graph_path, bundle.config.d_o)?;
        let hash = bundle.content_hash();
        manifest.record(&format!("bundle.{}", bi), bundle_path.display());
        manifest.record(&format!("bundle.{}.hash", bi), &hash);
        let label = format!(
            "{}-layer/{}-head/{}",
            bundle.config.dpaa_layers,
            bundle.config.dpaa_heads,
            if bundle.config.shared_kv { "shared" } else { "separated" }
        );
        for &shot in shots {
            for mode in InferenceMode::ALL {
                let (mean, std) = eval_protocol(
                    &bundle,
                    &prepared,
                    way,
                    shot,
                    queries_per_class,
                    episodes,
                    seed,
                    mode,
                    &infer_cfg,
                    jobs,
                )?;
                csv.push_str(&format!(
                    "{},{},{},{},{:.6},{:.6},{}\n",
                    label, &hash[..12], shot, mode.name(), mean, std, episodes
                ));
                println!("{:<28} {:>5} {:<12} {:>9.4} {:>9.4}", label, shot, mode.name(), mean, std);
            }
        }
    }
    manifest.stage("evaluate");
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("ablation.csv"), csv)?;
    manifest.record("graph", graph_path.display());
    manifest.record("seed", seed);
    manifest.stage("write");
    manifest.append_to(out_dir)?;
    Ok(())
}

pub fn cmd_selftest() -> Result<()> {
    let outcomes = crate::selftest::run_all()?;
    let mut failed = 0usize;
    for outcome in &outcomes {
        println!("{}", outcome.line());
        if !outcome.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::Numeric(format!("{} of {} self-test checks failed", failed, outcomes.len())));
    }
    println!("all {} checks passed", outcomes.len());
    Ok(())
}

/// Write a support file from explicit items (convenience for examples/tests).
pub fn write_support_file(path: &Path, items: &[(usize, usize)]) -> Result<()> {
    let mut text = String::new();
    for &(node, class) in items {
        text.push_str(&format!("{} {}\n", node, class));
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
