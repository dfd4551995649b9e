//! Domain-embedding geometry: gradient fingerprints of a graded corpus are
//! mapped to embeddings whose pairwise distances track the ground-truth graph
//! distances, and support-subsampled embeddings of one domain stay tightly
//! clustered.
//!
//! Run with `cargo run --release --example domain_embeddings`.

use gia::embedder::in_context_embedding;
use gia::encoder::fingerprint;
use gia::graphcore::{generate_corpus, CorpusSpec, DomainSpec};
use gia::trainer::{mix_seed, prepare_graph, pretrain, sample_episode, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn domain(magnitude: f64) -> DomainSpec {
    DomainSpec {
        class_count: 5,
        nodes_per_class: 30,
        feature_dim: 64,
        feature_spread: 1.0,
        transform_magnitude: magnitude,
        p_within: 0.1,
        p_between: 0.01,
        seed: 13,
    }
}

/// Spearman rank correlation (no tie handling; distances are generic).
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
    let ra = rank(a);
    let rb = rank(b);
    let n = ra.len() as f64;
    let mean = (n - 1.0) / 2.0;
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

fn main() {
    let magnitudes = [0.0, 0.15, 0.3, 0.45, 0.6, 0.75];
    println!("generating 6 domains with transform magnitudes {:?}", magnitudes);
    let corpus = generate_corpus(&CorpusSpec {
        domains: magnitudes.iter().map(|&t| domain(t)).collect(),
    })
    .unwrap();

    // Stage A only: a short Stage B is enough since we only need the embedder.
    let cfg = TrainConfig {
        way: 5,
        shots: 5,
        queries_per_class: 5,
        episodes: 1,
        seed: 21,
        ..TrainConfig::default()
    };
    let report = pretrain(&corpus.graphs, &cfg).unwrap();
    println!(
        "stage A metric fit: {} iterations, loss {:.4} -> {:.2e}",
        report.stage_a_history.len(),
        report.stage_a_history.first().unwrap(),
        report.stage_a_history.last().unwrap()
    );

    let m = corpus.graphs.len();
    let mut embed_dists = Vec::new();
    let mut truth_dists = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let de = report.bundle.pretrain_embeddings[i]
                .sub(&report.bundle.pretrain_embeddings[j])
                .unwrap()
                .frobenius_norm();
            embed_dists.push(de);
            truth_dists.push(corpus.distances.at(i, j));
        }
    }
    println!("pair  embedding-distance  graph-distance");
    let mut k = 0;
    for i in 0..m {
        for j in (i + 1)..m {
            println!("{}–{}   {:>12.4}  {:>12.4}", i, j, embed_dists[k], truth_dists[k]);
            k += 1;
        }
    }
    println!(
        "spearman(embedding distances, graph distances) over {} pairs = {:.4}",
        embed_dists.len(),
        spearman(&embed_dists, &truth_dists)
    );

    // Stability: embeddings from 20 random 5-shot supports of one domain.
    let held = generate_corpus(&CorpusSpec { domains: vec![domain(0.375)] }).unwrap();
    let prepared = prepare_graph(&held.graphs[0], cfg.d_o).unwrap();
    let mut vectors = Vec::new();
    for i in 0..20 {
        let mut rng = ChaCha20Rng::seed_from_u64(mix_seed(5, i));
        let ep = sample_episode(prepared.graph(), 0, 5, 5, 1, &mut rng).unwrap();
        let e = in_context_embedding(
            &prepared,
            &ep.support,
            report.bundle.theta0.weights(),
            report.bundle.config.eta,
            &report.bundle.embedder,
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
    let std = (cosines.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (cosines.len() as f64 - 1.0)).sqrt();
    let min = cosines.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "support-subsampled embedding stability: mean cosine {:.4}, std {:.4}, min {:.4}",
        mean, std, min
    );

    // The full fingerprint of a pretraining graph reproduces its stored
    // stage-A embedding exactly.
    let p0 = prepare_graph(&corpus.graphs[0], cfg.d_o).unwrap();
    let fp = fingerprint(&p0, &p0.graph().labeled_items(), report.bundle.theta0.weights(), cfg.eta).unwrap();
    let e0 = gia::embedder::embed_domain(&fp, &report.bundle.embedder, gia::embedder::EmbeddingSource::InContext)
        .unwrap();
    let same = e0.vector.data() == report.bundle.pretrain_embeddings[0].data();
    println!("full-label fingerprint reproduces the stored stage-A embedding: {}", same);
}
