//! Brute-force reference implementations shared by the oracle tests and the
//! acceptance runner.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wowbench_engine::plan::{DagDocument, PlanNode};
use wowbench_engine::trajectory::{Entity, Point, Trajectory};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_track(rng: &mut ChaCha8Rng, max_len: usize) -> Trajectory {
    let n = rng.gen_range(1..=max_len);
    let points = (0..n)
        .map(|_| Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    Trajectory::new("t", Entity::Object, points)
}

fn dist(p: &Point, q: &Point) -> f64 {
    ((p.x - q.x).powi(2) + (p.y - q.y).powi(2)).sqrt()
}

/// Visits every monotone alignment path from (0,0) to (n-1,m-1) and folds
/// the local distances along it.
fn for_each_path(
    a: &[Point],
    b: &[Point],
    fold: &dyn Fn(f64, f64) -> f64,
    init: f64,
    out: &mut dyn FnMut(f64, usize),
) {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        a: &[Point],
        b: &[Point],
        i: usize,
        j: usize,
        acc: f64,
        steps: usize,
        fold: &dyn Fn(f64, f64) -> f64,
        out: &mut dyn FnMut(f64, usize),
    ) {
        let acc = fold(acc, dist(&a[i], &b[j]));
        let steps = steps + 1;
        if i + 1 == a.len() && j + 1 == b.len() {
            out(acc, steps);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, steps, fold, out);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, steps, fold, out);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, steps, fold, out);
        }
    }
    walk(a, b, 0, 0, init, 0, fold, out);
}

/// Minimum total cost over every alignment.
pub fn brute_dtw(a: &Trajectory, b: &Trajectory) -> f64 {
    brute_dtw_with_steps(a, b).0
}

/// Minimum total cost, and the fewest aligned pairs among paths attaining it.
pub fn brute_dtw_with_steps(a: &Trajectory, b: &Trajectory) -> (f64, usize) {
    let mut paths = Vec::new();
    for_each_path(&a.points, &b.points, &|acc, d| acc + d, 0.0, &mut |c, s| {
        paths.push((c, s))
    });
    let best = paths.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let steps = paths
        .iter()
        .filter(|p| p.0 <= best + 1e-12)
        .map(|p| p.1)
        .min()
        .unwrap();
    (best, steps)
}

/// Minimum over couplings of the maximum pointwise distance.
pub fn brute_frechet(a: &Trajectory, b: &Trajectory) -> f64 {
    let mut best = f64::INFINITY;
    for_each_path(
        &a.points,
        &b.points,
        &|acc: f64, d: f64| acc.max(d),
        0.0,
        &mut |c, _| best = best.min(c),
    );
    best
}

pub struct RandomDag {
    pub doc: DagDocument,
    /// `reach[u][v]`: node u must come before node v.
    pub reach: Vec<Vec<bool>>,
}

pub const ACTIONS: [&str; 4] = ["pick(a)", "place(a)", "open(b)", "push(c)"];

/// Random DAG on up to `max_nodes` nodes, with node order shuffled so index
/// order is not a topological order.
pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> RandomDag {
    let n = rng.gen_range(1..=max_nodes);
    let p = rng.gen_range(0.0..0.7);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let mut adj = vec![vec![false; n]; n];
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                // topological rank i before j, stored under shuffled indices
                adj[perm[i]][perm[j]] = true;
                edges.push((format!("n{}", perm[i]), format!("n{}", perm[j])));
            }
        }
    }
    let nodes = (0..n)
        .map(|i| PlanNode {
            id: format!("n{i}"),
            action: ACTIONS[rng.gen_range(0..ACTIONS.len())].to_string(),
        })
        .collect();
    // Floyd–Warshall closure
    let mut reach = adj;
    for k in 0..n {
        for u in 0..n {
            for v in 0..n {
                if reach[u][k] && reach[k][v] {
                    reach[u][v] = true;
                }
            }
        }
    }
    RandomDag {
        doc: DagDocument { nodes, edges },
        reach,
    }
}

pub fn random_plan(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max_len);
    let pool = ["pick(a)", "place(a)", "open(b)", "push(c)", "wave(d)"];
    (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
        .collect()
}

/// First-unused-node greedy matching, written out directly.
pub fn oracle_matching(doc: &DagDocument, steps: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; doc.nodes.len()];
    steps
        .iter()
        .map(|s| {
            let hit = doc
                .nodes
                .iter()
                .enumerate()
                .position(|(i, n)| !used[i] && &n.action == s);
            if let Some(i) = hit {
                used[i] = true;
            }
            hit
        })
        .collect()
}

/// Longest subsequence with no later element an ancestor of an earlier one,
/// by checking every subset.
pub fn exhaustive_consistent(nodes: &[usize], reach: &[Vec<bool>]) -> usize {
    let k = nodes.len();
    let mut best = 0;
    for mask in 0u32..(1 << k) {
        let chosen: Vec<usize> = (0..k)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| nodes[i])
            .collect();
        let ok =
            (0..chosen.len()).all(|x| (x + 1..chosen.len()).all(|y| !reach[chosen[y]][chosen[x]]));
        if ok {
            best = best.max(chosen.len());
        }
    }
    best
}
