use std::collections::HashSet;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augmentation {
    NodeDrop,
    EdgePerturb,
}

/// A randomly perturbed copy of `g`.
///
/// Node dropping removes `⌊ratio·N⌋` nodes (always keeping one) and
/// renumbers the survivors in their original order. Edge perturbation removes
/// `⌊ratio·|E|⌋` edges and then adds as many pairs that are not edges of the
/// thinned graph, so `|E|` is unchanged.
pub fn augment_graph<R: Rng + ?Sized>(g: &Graph<f64>, kind: Augmentation, ratio: f64, rng: &mut R) -> Result<Graph<f64>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("augmentation ratio {ratio} outside [0, 1]")));
    }
    match kind {
        Augmentation::NodeDrop => node_drop(g, ratio, rng),
        Augmentation::EdgePerturb => edge_perturb(g, ratio, rng),
    }
}

fn node_drop<R: Rng + ?Sized>(g: &Graph<f64>, ratio: f64, rng: &mut R) -> Result<Graph<f64>> {
    let n = g.num_nodes();
    let drop = ((ratio * n as f64).floor() as usize).min(n.saturating_sub(1));
    if drop == 0 {
        return Ok(g.clone());
    }
    let mut keep = vec![true; n];
    for i in sample(rng, n, drop) {
        keep[i] = false;
    }
    let mut new_id = vec![usize::MAX; n];
    let mut kept = Vec::with_capacity(n - drop);
    for i in (0..n).filter(|&i| keep[i]) {
        new_id[i] = kept.len();
        kept.push(i);
    }
    let edges: Vec<_> = g
        .undirected_edges()
        .into_iter()
        .filter(|&(i, j)| keep[i] && keep[j])
        .map(|(i, j)| (new_id[i], new_id[j]))
        .collect();
    let features = g.features().gather_rows(&kept)?;
    Ok(Graph::from_edges(kept.len(), &edges, features)?.0)
}

fn edge_perturb<R: Rng + ?Sized>(g: &Graph<f64>, ratio: f64, rng: &mut R) -> Result<Graph<f64>> {
    let edges = g.undirected_edges();
    let k = (ratio * edges.len() as f64).floor() as usize;
    if k == 0 {
        return Ok(g.clone());
    }
    let n = g.num_nodes();
    let mut removed = vec![false; edges.len()];
    for e in sample(rng, edges.len(), k) {
        removed[e] = true;
    }
    let mut present: HashSet<(usize, usize)> =
        edges.iter().zip(&removed).filter(|(_, &r)| !r).map(|(&e, _)| e).collect();
    let capacity = n * (n - 1) / 2;
    let mut added = 0;
    let mut attempts = 0usize;
    while added < k && attempts < 64 * k + 1024 {
        attempts += 1;
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && present.insert((i.min(j), i.max(j))) {
            added += 1;
        }
    }
    if added < k {
        // Nearly complete graph: draw from the explicit complement instead.
        let free: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|e| !present.contains(e))
            .collect();
        debug_assert!(free.len() >= k - added && present.len() + free.len() == capacity);
        for idx in sample(rng, free.len(), k - added) {
            present.insert(free[idx]);
        }
    }
    let mut out: Vec<_> = present.into_iter().collect();
    out.sort_unstable();
    Ok(Graph::from_edges(n, &out, g.features().clone())?.0)
}
