//! Acceptance suite: one test per release criterion, each printing a
//! `[PASS]` line with its measured values (visible with `--nocapture`).
//!
//! The quantitative criteria share one trained fixture: a four-domain
//! synthetic corpus (5 classes × 60 nodes, width 64) pretrained for 2000
//! episodes of 5-way 5-shot, evaluated on a held-out domain whose transform
//! magnitude falls between the pretraining domains. Tests serialize on a
//! global lock so the wall-clock budgets mean something.

use gia::aligners::{align_feature_rows, gen_film, lipschitz_bound};
use gia::embedder::in_context_embedding;
use gia::encoder::PreparedGraph;
use gia::graphcore::{generate_corpus, line_graph_transform, CorpusSpec, DomainSpec, KnowledgeGraph};
use gia::inference::{in_context_predict, InferenceConfig, InferenceMode, SupportSet};
use gia::numkernel::Tensor;
use gia::selftest::{dpaa_invariant_suite, gradient_suite, lemma_oracle_suite};
use gia::trainer::{
    evaluate_episode, mix_seed, prepare_graph, pretrain, sample_episode, Episode, ModelBundle, TrainConfig,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn acceptance_domain(magnitude: f64) -> DomainSpec {
    DomainSpec {
        class_count: 5,
        nodes_per_class: 60,
        feature_dim: 64,
        feature_spread: 2.5,
        transform_magnitude: magnitude,
        p_within: 0.04,
        p_between: 0.01,
        seed: 7,
    }
}

struct Fixture {
    bundle: ModelBundle,
    held_out: PreparedGraph,
    curve: Vec<f64>,
    stage_a_history: Vec<f64>,
    gen_secs: f64,
    pretrain_secs: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(|| {
        let t0 = Instant::now();
        let corpus = generate_corpus(&CorpusSpec {
            domains: vec![
                acceptance_domain(0.1),
                acceptance_domain(0.25),
                acceptance_domain(0.4),
                acceptance_domain(0.55),
            ],
        })
        .unwrap();
        let held = generate_corpus(&CorpusSpec { domains: vec![acceptance_domain(0.325)] }).unwrap();
        let gen_secs = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let cfg = TrainConfig {
            way: 5,
            shots: 5,
            queries_per_class: 5,
            episodes: 2000,
            seed: 42,
            ..TrainConfig::default()
        };
        let report = pretrain(&corpus.graphs, &cfg).unwrap();
        let pretrain_secs = t1.elapsed().as_secs_f64();
        Fixture {
            bundle: report.bundle,
            held_out: prepare_graph(&held.graphs[0], cfg.d_o).unwrap(),
            curve: report.curve,
            stage_a_history: report.stage_a_history,
            gen_secs,
            pretrain_secs,
        }
    })
}

fn held_out_episode(fx: &Fixture, shot: usize, index: u64) -> Episode {
    let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(mix_seed(9, shot as u64), index));
    sample_episode(fx.held_out.graph(), 0, 5, shot, 5, &mut rng).unwrap()
}

/// Cosine nearest-class-mean on the bundle-aligned support features.
fn nearest_mean_accuracy(fx: &Fixture, episode: &Episode) -> f64 {
    let bundle = &fx.bundle;
    let embedding = in_context_embedding(
        &fx.held_out,
        &episode.support,
        bundle.theta0.weights(),
        bundle.config.eta,
        &bundle.embedder,
    )
    .unwrap();
    let film = gen_film(&embedding.vector, &bundle.film_feature).unwrap();
    let encoded = fx.held_out.encode_all(bundle.theta0.weights()).unwrap();
    let aligned = align_feature_rows(&encoded, &film).unwrap();

    let way = episode.classes.len();
    let d = aligned.cols();
    let mut means = vec![vec![0.0f64; d]; way];
    let mut counts = vec![0usize; way];
    for &(node, class) in &episode.support {
        let pos = episode.classes.iter().position(|&c| c == class).unwrap();
        counts[pos] += 1;
        for j in 0..d {
            means[pos][j] += aligned.at(node, j);
        }
    }
    for (pos, mean) in means.iter_mut().enumerate() {
        for v in mean.iter_mut() {
            *v /= counts[pos] as f64;
        }
    }
    let mut correct = 0usize;
    for &(node, class) in &episode.queries {
        let truth = episode.classes.iter().position(|&c| c == class).unwrap();
        let q = aligned.row(node);
        let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut best = 0usize;
        let mut best_cos = f64::NEG_INFINITY;
        for (pos, mean) in means.iter().enumerate() {
            let pn = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(mean).map(|(a, b)| a * b).sum();
            let cos = if qn == 0.0 || pn == 0.0 { 0.0 } else { dot / (qn * pn) };
            if cos > best_cos {
                best_cos = cos;
                best = pos;
            }
        }
        if best == truth {
            correct += 1;
        }
    }
    correct as f64 / episode.queries.len() as f64
}

#[test]
fn acceptance_01_gradient_suite() {
    let _guard = serial();
    let t0 = Instant::now();
    let outcomes = gradient_suite(20).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    for o in &outcomes {
        assert!(o.passed, "{}", o.line());
    }
    assert!(elapsed < 60.0, "gradient suite took {:.1}s", elapsed);
    println!(
        "[PASS] criterion 1: {} finite-difference checks ≤ 1e-4 in {:.1}s",
        outcomes.len(),
        elapsed
    );
}

#[test]
fn acceptance_02_lemma_oracle() {
    let _guard = serial();
    let t0 = Instant::now();
    let outcomes = lemma_oracle_suite(10).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    for o in &outcomes {
        assert!(o.passed, "{}", o.line());
    }
    assert!(elapsed < 10.0, "lemma oracle suite took {:.1}s", elapsed);
    println!(
        "[PASS] criterion 2: closed-form fingerprint matches autodiff within 1e-10 on 10 graphs ({:.2}s, worst {:.2e})",
        elapsed,
        outcomes[0].worst
    );
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let rank = |xs: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..xs.len()).collect();
        order.sort_by(|&i, &j| xs[i].partial_cmp(&xs[j]).unwrap());
        let mut ranks = vec![0.0; xs.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r as f64;
        }
        ranks
    };
    let (ra, rb) = (rank(a), rank(b));
    let mean = (ra.len() as f64 - 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..ra.len() {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean) * (ra[i] - mean);
        db += (rb[i] - mean) * (rb[i] - mean);
    }
    num / (da.sqrt() * db.sqrt())
}

#[test]
fn acceptance_03_embedding_preserves_domain_relationships() {
    let _guard = serial();
    let t0 = Instant::now();
    let magnitudes = [0.0, 0.15, 0.3, 0.45, 0.6, 0.75];
    let corpus = generate_corpus(&CorpusSpec {
        domains: magnitudes
            .iter()
            .map(|&t| DomainSpec {
                class_count: 5,
                nodes_per_class: 30,
                feature_dim: 64,
                feature_spread: 1.0,
                transform_magnitude: t,
                p_within: 0.1,
                p_between: 0.01,
                seed: 13,
            })
            .collect(),
    })
    .unwrap();
    let cfg = TrainConfig { way: 5, shots: 5, queries_per_class: 5, episodes: 1, seed: 21, ..TrainConfig::default() };
    let report = pretrain(&corpus.graphs, &cfg).unwrap();

    let initial = report.stage_a_history.first().copied().unwrap();
    let final_loss = report.stage_a_history.last().copied().unwrap();
    assert!(
        final_loss <= 1e-2 * initial,
        "stage A loss {} vs initial {}",
        final_loss,
        initial
    );

    let m = corpus.graphs.len();
    let mut embed_dists = Vec::new();
    let mut truth = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            embed_dists.push(
                report.bundle.pretrain_embeddings[i]
                    .sub(&report.bundle.pretrain_embeddings[j])
                    .unwrap()
                    .frobenius_norm(),
            );
            truth.push(corpus.distances.at(i, j));
        }
    }
    let rho = spearman(&embed_dists, &truth);
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(rho >= 0.6, "spearman {:.4} < 0.6", rho);
    assert!(elapsed < 300.0, "took {:.1}s", elapsed);
    println!(
        "[PASS] criterion 3: spearman {:.4} ≥ 0.6 over 15 pairs, stage A loss ratio {:.2e} ≤ 1e-2 ({:.1}s)",
        rho,
        final_loss / initial,
        elapsed
    );
}

#[test]
fn acceptance_04_alignment_smoothness_bound() {
    let _guard = serial();
    let fx = fixture();
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xACCE);
    let d_e = fx.bundle.config.d_e;
    let mut violations = 0usize;
    for gen in [&fx.bundle.film_feature, &fx.bundle.film_label] {
        let bound = lipschitz_bound(gen).unwrap();
        for _ in 0..100 {
            let draw = |rng: &mut ChaCha20Rng| {
                Tensor::new(vec![d_e], (0..d_e).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()).unwrap()
            };
            let e1 = draw(&mut rng);
            let e2 = draw(&mut rng);
            let f1 = gen_film(&e1, gen).unwrap();
            let f2 = gen_film(&e2, gen).unwrap();
            let lhs = f1.gamma.sub(&f2.gamma).unwrap().frobenius_norm()
                + f1.beta.sub(&f2.beta).unwrap().frobenius_norm();
            let rhs = 2.0f64.sqrt() * bound * e1.sub(&e2).unwrap().frobenius_norm();
            if lhs > rhs + 1e-9 {
                violations += 1;
            }
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    assert_eq!(violations, 0, "{} violations of the smoothness bound", violations);
    assert!(elapsed < 10.0, "took {:.1}s", elapsed);
    println!(
        "[PASS] criterion 4: 0 violations of ‖Δγ‖+‖Δβ‖ ≤ √2·L̂·‖Δe‖ over 100 pairs × 2 trained generators ({:.2}s)",
        elapsed
    );
}

#[test]
fn acceptance_05_attention_invariants() {
    let _guard = serial();
    let t0 = Instant::now();
    let outcomes = dpaa_invariant_suite().unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    for o in &outcomes {
        assert!(o.passed, "{}", o.line());
    }
    assert!(elapsed < 30.0, "took {:.1}s", elapsed);
    println!("[PASS] criterion 5: {} attention invariants hold ({:.2}s)", outcomes.len(), elapsed);
}

#[test]
fn acceptance_06_end_to_end_few_shot() {
    let _guard = serial();
    let fx = fixture();
    let t0 = Instant::now();
    let cfg = InferenceConfig::default(); // dpaa-only
    let mut means = [0.0f64; 2];
    for (slot, shot) in [1usize, 5].into_iter().enumerate() {
        let mut total = 0.0;
        for i in 0..50 {
            let ep = held_out_episode(fx, shot, i);
            total += evaluate_episode(&fx.bundle, &fx.held_out, &ep, &cfg).unwrap();
        }
        means[slot] = total / 50.0;
    }
    let eval_secs = t0.elapsed().as_secs_f64();
    let total_secs = fx.gen_secs + fx.pretrain_secs + eval_secs;

    // Training made progress on the corpus as well.
    let first: f64 = fx.curve[..100].iter().sum::<f64>() / 100.0;
    let last: f64 = fx.curve[fx.curve.len() - 100..].iter().sum::<f64>() / 100.0;
    assert!(last < 0.5 * first, "loss {:.4} -> {:.4} fell short of 50%", first, last);

    assert!(means[0] >= 0.60, "1-shot accuracy {:.4} < 0.60", means[0]);
    assert!(means[1] >= 0.75, "5-shot accuracy {:.4} < 0.75", means[1]);
    assert!(
        means[1] >= means[0] - 0.02,
        "5-shot {:.4} fell more than 0.02 below 1-shot {:.4}",
        means[1],
        means[0]
    );
    assert!(total_secs < 900.0, "end-to-end took {:.0}s", total_secs);
    println!(
        "[PASS] criterion 6: held-out 1-shot {:.4} ≥ 0.60, 5-shot {:.4} ≥ 0.75, monotone; corpus loss {:.3}→{:.3}; total {:.0}s (gen {:.0}s + pretrain {:.0}s + eval {:.0}s) < 900s",
        means[0], means[1], first, last, total_secs, fx.gen_secs, fx.pretrain_secs, eval_secs
    );
}

#[test]
fn acceptance_07_beats_nearest_mean_baseline() {
    let _guard = serial();
    let fx = fixture();
    let cfg = InferenceConfig::default();
    let mut model = 0.0;
    let mut baseline = 0.0;
    for i in 0..50 {
        let ep = held_out_episode(fx, 1, i);
        model += evaluate_episode(&fx.bundle, &fx.held_out, &ep, &cfg).unwrap();
        baseline += nearest_mean_accuracy(fx, &ep);
    }
    model /= 50.0;
    baseline /= 50.0;
    assert!(
        model >= baseline + 0.03,
        "model {:.4} vs baseline {:.4}: gap {:.4} < 0.03",
        model,
        baseline,
        model - baseline
    );
    println!(
        "[PASS] criterion 7: 1-shot prompt attention {:.4} beats nearest-mean {:.4} by {:.4} ≥ 0.03",
        model,
        baseline,
        model - baseline
    );
}

#[test]
fn acceptance_08_fingerprint_stability() {
    let _guard = serial();
    let fx = fixture();
    let t0 = Instant::now();
    let mut vectors = Vec::new();
    for i in 0..20 {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(5, i));
        let ep = sample_episode(fx.held_out.graph(), 0, 5, 5, 1, &mut rng).unwrap();
        let e = in_context_embedding(
            &fx.held_out,
            &ep.support,
            fx.bundle.theta0.weights(),
            fx.bundle.config.eta,
            &fx.bundle.embedder,
        )
        .unwrap();
        vectors.push(e.vector);
    }
    let mut cosines = Vec::new();
    for i in 0..vectors.len() {
        for j in (i + 1)..vectors.len() {
            let dot = vectors[i].dot(&vectors[j]).unwrap();
            cosines.push(dot / (vectors[i].frobenius_norm() * vectors[j].frobenius_norm()));
        }
    }
    let mean = cosines.iter().sum::<f64>() / cosines.len() as f64;
    let std =
        (cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (cosines.len() as f64 - 1.0)).sqrt();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(mean >= 0.85, "mean pairwise cosine {:.4} < 0.85", mean);
    assert!(std <= 0.05, "cosine std {:.4} > 0.05", std);
    assert!(elapsed < 120.0, "took {:.1}s", elapsed);
    println!(
        "[PASS] criterion 8: 20 five-shot supports give embedding cosine {:.4} ≥ 0.85 (std {:.4} ≤ 0.05) in {:.1}s",
        mean, std, elapsed
    );
}

#[test]
fn acceptance_09_freeze_and_determinism() {
    let _guard = serial();
    let fx = fixture();

    // Bundle bytes identical before/after inference in every mode.
    let before = fx.bundle.to_bytes();
    let support = SupportSet::new(
        (0..5).map(|c| (c * 60, c)).collect::<Vec<_>>(),
        5,
    )
    .unwrap();
    for mode in InferenceMode::ALL {
        let cfg = InferenceConfig { mode, ..InferenceConfig::default() };
        let _ = in_context_predict(&fx.bundle, &fx.held_out, &support, &[7, 61, 130], &cfg).unwrap();
    }
    assert_eq!(before, fx.bundle.to_bytes(), "inference mutated the bundle");

    // Identical seeds reproduce bundles bitwise (scaled-down corpus).
    let corpus = generate_corpus(&CorpusSpec {
        domains: vec![
            DomainSpec { nodes_per_class: 20, ..acceptance_domain(0.1) },
            DomainSpec { nodes_per_class: 20, ..acceptance_domain(0.4) },
        ],
    })
    .unwrap();
    let cfg = TrainConfig {
        way: 5,
        shots: 3,
        queries_per_class: 3,
        episodes: 100,
        seed: 77,
        stage_a_iterations: 150,
        ..TrainConfig::default()
    };
    let a = pretrain(&corpus.graphs, &cfg).unwrap();
    let b = pretrain(&corpus.graphs, &cfg).unwrap();
    assert_eq!(a.bundle.to_bytes(), b.bundle.to_bytes(), "same seed, different bundles");
    assert_eq!(a.curve, b.curve);

    // Save/load round trip is bitwise, and metrics reproduce bitwise.
    let loaded = ModelBundle::from_bytes(&a.bundle.to_bytes()).unwrap();
    assert_eq!(loaded.to_bytes(), a.bundle.to_bytes());
    let eval = |_: ()| -> Vec<f64> {
        (0..10)
            .map(|i| {
                let ep = held_out_episode(fx, 1, 1000 + i);
                evaluate_episode(&fx.bundle, &fx.held_out, &ep, &InferenceConfig::default()).unwrap()
            })
            .collect()
    };
    assert_eq!(eval(()), eval(()));
    println!("[PASS] criterion 9: freeze contract and bitwise determinism hold");
}

#[test]
fn acceptance_10_line_graph_relation_classification() {
    let _guard = serial();
    let fx = fixture();
    // 30-triple toy knowledge graph over 12 entities, 3 relations.
    let mut rng = ChaCha20Rng::seed_from_u64(0x4B47);
    let entities = 12usize;
    let feats = Tensor::new(
        vec![entities, 8],
        (0..entities * 8).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect(),
    )
    .unwrap();
    let mut triples = Vec::new();
    for i in 0..30 {
        let h = rng.gen_range(0..entities);
        let mut t = rng.gen_range(0..entities);
        if t == h {
            t = (t + 1) % entities;
        }
        triples.push((h, i % 3, t));
    }
    let kg = KnowledgeGraph::new(entities, triples.clone(), feats, 3).unwrap();
    let lg = line_graph_transform(&kg, fx.bundle.config.d_o).unwrap();
    assert_eq!(lg.node_count(), 30);

    // Brute-force pairwise intersection oracle.
    let mut expect = Vec::new();
    for i in 0..triples.len() {
        for j in (i + 1)..triples.len() {
            let (h1, _, t1) = triples[i];
            let (h2, _, t2) = triples[j];
            if h1 == h2 || h1 == t2 || t1 == h2 || t1 == t2 {
                expect.push((i, j));
            }
        }
    }
    expect.sort_unstable();
    assert_eq!(lg.edges(), expect.as_slice(), "line-graph edges differ from the oracle");
    for (i, &(_, r, _)) in triples.iter().enumerate() {
        assert_eq!(lg.labels()[i], r as i64);
    }

    // 3-way 1-shot relation classification end to end, no accuracy bar.
    let prepared = prepare_graph(&lg, fx.bundle.config.d_o).unwrap();
    let mut support = Vec::new();
    for c in 0..3 {
        let node = lg.labels().iter().position(|&l| l == c as i64).unwrap();
        support.push((node, c));
    }
    let support_nodes: Vec<usize> = support.iter().map(|&(v, _)| v).collect();
    let queries: Vec<usize> =
        (0..lg.node_count()).filter(|v| !support_nodes.contains(v)).collect();
    let support = SupportSet::new(support, 3).unwrap();
    let out = in_context_predict(&fx.bundle, &prepared, &support, &queries, &InferenceConfig::default())
        .unwrap();
    assert_eq!(out.predictions.len(), queries.len());
    println!(
        "[PASS] criterion 10: line graph matches the intersection oracle; 3-way 1-shot relation classification ran on {} queries",
        queries.len()
    );
}

#[test]
fn acceptance_11_episode_time_scales_linearly() {
    let _guard = serial();
    let time_pretrain = |nodes_per_class: usize, p_scale: f64| -> f64 {
        let corpus = generate_corpus(&CorpusSpec {
            domains: vec![DomainSpec {
                class_count: 5,
                nodes_per_class,
                feature_dim: 64,
                feature_spread: 2.0,
                transform_magnitude: 0.2,
                p_within: 0.04 * p_scale,
                p_between: 0.01 * p_scale,
                seed: 3,
            }],
        })
        .unwrap();
        let cfg = TrainConfig {
            way: 5,
            shots: 5,
            queries_per_class: 5,
            episodes: 50,
            seed: 8,
            stage_a_iterations: 60,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let _ = pretrain(&corpus.graphs, &cfg).unwrap();
        t0.elapsed().as_secs_f64() / 50.0
    };
    // 1K vs 4K nodes at matched expected degree.
    let small = time_pretrain(200, 1.0);
    let large = time_pretrain(800, 0.25);
    let ratio = large / small;
    assert!(
        ratio <= 6.0,
        "per-episode wall time grew {:.2}× from 1K to 4K nodes",
        ratio
    );
    println!(
        "[PASS] criterion 11: per-episode wall time {:.2}ms (1K nodes) vs {:.2}ms (4K nodes), ratio {:.2} ≤ 6",
        small * 1e3,
        large * 1e3,
        ratio
    );
}
