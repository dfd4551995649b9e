//! m-way k-shot episode sampling.

use crate::error::{Error, Result};
use crate::graphcore::Graph;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// One sampled episode: chosen classes keep their graph-local ids; support
/// and query items are disjoint by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub graph_id: usize,
    pub classes: Vec<usize>,
    pub support: Vec<(usize, usize)>,
    pub queries: Vec<(usize, usize)>,
    /// Set when fewer than the requested classes were eligible.
    pub clamped_way: Option<usize>,
}

/// Uniform class choice without replacement among classes holding at least
/// `k + t` labeled nodes, then uniform item choice without replacement.
pub fn sample_episode(
    graph: &Graph,
    graph_id: usize,
    way: usize,
    shots: usize,
    queries_per_class: usize,
    rng: &mut ChaCha20Rng,
) -> Result<Episode> {
    if way < 1 || shots < 1 || queries_per_class < 1 {
        return Err(Error::Config("episode shape parameters must be positive".into()));
    }
    let need = shots + queries_per_class;
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); graph.class_count()];
    for (node, class) in graph.labeled_items() {
        per_class[class].push(node);
    }
    let eligible: Vec<usize> = (0..graph.class_count()).filter(|&c| per_class[c].len() >= need).collect();
    if eligible.len() < 2 {
        return Err(Error::Episode(format!(
            "only {} classes have ≥ {} labeled nodes; need at least 2",
            eligible.len(),
            need
        )));
    }
    let effective_way = way.min(eligible.len());
    let clamped_way = (effective_way < way).then_some(effective_way);

    let classes = choose_without_replacement(&eligible, effective_way, rng);
    let mut support = Vec::with_capacity(effective_way * shots);
    let mut queries = Vec::with_capacity(effective_way * queries_per_class);
    for &class in &classes {
        let picked = choose_without_replacement(&per_class[class], need, rng);
        for &node in &picked[..shots] {
            support.push((node, class));
        }
        for &node in &picked[shots..] {
            queries.push((node, class));
        }
    }
    Ok(Episode { graph_id, classes, support, queries, clamped_way })
}

/// Partial Fisher–Yates draw of `count` items.
fn choose_without_replacement(pool: &[usize], count: usize, rng: &mut ChaCha20Rng) -> Vec<usize> {
    let mut pool = pool.to_vec();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let idx = rng.gen_range(0..pool.len());
        out.push(pool.swap_remove(idx));
    }
    out
}
