//! Three-level skeletal graphs, the distance-partitioned graph convolution and
//! body-part-preserving pooling.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{BodyPart, Skeleton, N_JOINTS};
use crate::tensor::{Graph, Scalar, Var, VertexMap};

/// Fine-level members of each G2 vertex, in G2 order (two per part, chain order).
pub const G2_GROUPS: [&[usize]; 10] = [
    &[1, 2],
    &[3, 4],
    &[5, 6],
    &[7, 8],
    &[0, 9, 10],
    &[11, 12],
    &[13, 14],
    &[15, 16],
    &[17, 18],
    &[19, 20],
];

/// Maximum neighbor distance per level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reach(pub [usize; 3]);

impl Reach {
    pub const MAIN: Reach = Reach([2, 1, 1]);
    pub const WIDE: Reach = Reach([3, 2, 2]);
}

impl Default for Reach {
    fn default() -> Self {
        Reach::MAIN
    }
}

/// One resolution of the skeletal graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphLevel {
    pub level: usize,
    pub names: Vec<String>,
    pub parts: Vec<BodyPart>,
    /// Undirected spatial edges `(a, b)` with `a < b`.
    pub edges: Vec<(usize, usize)>,
    /// Hop distance; `usize::MAX` for disconnected pairs.
    pub distance: Vec<Vec<usize>>,
    pub k: usize,
    /// For each vertex of the next coarser level, the members it pools from this level.
    pub pool_groups: Option<Vec<Vec<usize>>>,
}

impl GraphLevel {
    fn new(
        level: usize,
        names: Vec<String>,
        parts: Vec<BodyPart>,
        edges: Vec<(usize, usize)>,
        k: usize,
    ) -> Self {
        let n = names.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let distance = (0..n)
            .map(|s| {
                let mut d = vec![usize::MAX; n];
                d[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(u) = q.pop_front() {
                    for &v in &adj[u] {
                        if d[v] == usize::MAX {
                            d[v] = d[u] + 1;
                            q.push_back(v);
                        }
                    }
                }
                d
            })
            .collect();
        GraphLevel {
            level,
            names,
            parts,
            edges,
            distance,
            k,
            pool_groups: None,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.names.len()
    }

    pub fn part_vertices(&self, part: BodyPart) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&v| self.parts[v] == part)
            .collect()
    }

    /// Vertices at exactly distance `d` from `v`.
    pub fn ring(&self, v: usize, d: usize) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&u| self.distance[v][u] == d)
            .collect()
    }

    /// Same-distance averaging map for distance `d`: `out[j] = mean{in[i] : dist(i, j) = d}`.
    /// Vertices with no neighbor at that distance receive zero.
    pub fn ring_mean_map(&self, d: usize) -> VertexMap {
        let rows: Vec<Vec<usize>> = (0..self.n_vertices()).map(|j| self.ring(j, d)).collect();
        VertexMap::means(self.n_vertices(), &rows)
    }
}

fn coarsen(
    fine: &GraphLevel,
    groups: &[Vec<usize>],
    names: Vec<String>,
    k: usize,
) -> Result<GraphLevel> {
    let mut owner = vec![usize::MAX; fine.n_vertices()];
    let mut parts = Vec::with_capacity(groups.len());
    for (g, members) in groups.iter().enumerate() {
        let part = fine.parts[members[0]];
        if members.iter().any(|&m| fine.parts[m] != part) {
            return Err(Error::Contract(format!("pool group {g} mixes body parts")));
        }
        for &m in members {
            owner[m] = g;
        }
        parts.push(part);
    }
    if owner.contains(&usize::MAX) {
        return Err(Error::Contract(format!(
            "level {} pool groups do not cover every vertex",
            fine.level
        )));
    }
    let mut edges: Vec<(usize, usize)> = fine
        .edges
        .iter()
        .filter_map(|&(a, b)| {
            let (x, y) = (owner[a], owner[b]);
            (x != y).then(|| (x.min(y), x.max(y)))
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();
    Ok(GraphLevel::new(fine.level + 1, names, parts, edges, k))
}

/// The three graph levels plus the precomputed vertex maps the network uses.
#[derive(Clone, Debug)]
pub struct SkeletalGraph {
    pub levels: [GraphLevel; 3],
    /// `conv[i][d]`: same-distance averaging at level `i`.
    pub conv: [Vec<Arc<VertexMap>>; 3],
    /// `pool[i]`: level `i` to level `i + 1` group averaging (`i` in 0..2).
    pub pool: [Arc<VertexMap>; 2],
    /// `unpool[i]`: level `i + 1` back onto level `i`.
    pub unpool: [Arc<VertexMap>; 2],
    /// `select[i][p]`: picks part `p`'s vertices at level `i`.
    pub select: [[Arc<VertexMap>; 5]; 3],
    /// `assemble[i]`: puts parts concatenated in part order back into vertex order.
    pub assemble: [Arc<VertexMap>; 3],
    /// Averages every G1 vertex into one (used to collapse root channels).
    pub mean_all: Arc<VertexMap>,
}

pub fn build_graph_levels(skeleton: &Skeleton, reach: Reach) -> Result<SkeletalGraph> {
    if skeleton.joints().len() != N_JOINTS {
        return Err(Error::Contract(format!(
            "graph construction needs {N_JOINTS} joints"
        )));
    }
    let edges1: Vec<(usize, usize)> = (1..N_JOINTS)
        .map(|j| (skeleton.parent(j).unwrap(), j))
        .collect();
    let mut g1 = GraphLevel::new(
        1,
        skeleton.joints().iter().map(|j| j.name.clone()).collect(),
        (0..N_JOINTS).map(|j| skeleton.part_of(j)).collect(),
        edges1,
        reach.0[0],
    );
    let groups2: Vec<Vec<usize>> = G2_GROUPS.iter().map(|g| g.to_vec()).collect();
    let names2 = BodyPart::ALL
        .iter()
        .flat_map(|p| [format!("{p}_a"), format!("{p}_b")])
        .collect();
    let mut g2 = coarsen(&g1, &groups2, names2, reach.0[1])?;
    let groups3: Vec<Vec<usize>> = BodyPart::ALL.iter().map(|&p| g2.part_vertices(p)).collect();
    let names3 = BodyPart::ALL.iter().map(|p| p.to_string()).collect();
    let g3 = coarsen(&g2, &groups3, names3, reach.0[2])?;
    g1.pool_groups = Some(groups2);
    g2.pool_groups = Some(groups3);
    let levels = [g1, g2, g3];

    let conv = std::array::from_fn(|i| {
        let l = &levels[i];
        (0..=l.k).map(|d| Arc::new(l.ring_mean_map(d))).collect()
    });
    let pool_map = |fine: &GraphLevel| {
        let groups = fine.pool_groups.as_ref().unwrap();
        let entries = groups
            .iter()
            .enumerate()
            .flat_map(|(o, g)| g.iter().map(move |&i| (o, i, 1.0 / g.len() as f64)))
            .collect();
        VertexMap::new(groups.len(), fine.n_vertices(), entries)
    };
    let unpool_map = |fine: &GraphLevel| {
        let groups = fine.pool_groups.as_ref().unwrap();
        let entries = groups
            .iter()
            .enumerate()
            .flat_map(|(c, g)| g.iter().map(move |&f| (f, c, 1.0)))
            .collect();
        VertexMap::new(fine.n_vertices(), groups.len(), entries)
    };
    let pool = [
        Arc::new(pool_map(&levels[0])),
        Arc::new(pool_map(&levels[1])),
    ];
    let unpool = [
        Arc::new(unpool_map(&levels[0])),
        Arc::new(unpool_map(&levels[1])),
    ];
    let select = std::array::from_fn(|i| {
        std::array::from_fn(|p| {
            let l = &levels[i];
            Arc::new(VertexMap::select(
                l.n_vertices(),
                &l.part_vertices(BodyPart::ALL[p]),
            ))
        })
    });
    let assemble = std::array::from_fn(|i| {
        let l = &levels[i];
        let order: Vec<usize> = BodyPart::ALL
            .iter()
            .flat_map(|&p| l.part_vertices(p))
            .collect();
        Arc::new(VertexMap::place(l.n_vertices(), &order))
    });
    let mean_all = Arc::new(VertexMap::new(
        N_JOINTS,
        N_JOINTS,
        (0..N_JOINTS)
            .flat_map(|o| (0..N_JOINTS).map(move |i| (o, i, 1.0 / N_JOINTS as f64)))
            .collect(),
    ));
    Ok(SkeletalGraph {
        levels,
        conv,
        pool,
        unpool,
        select,
        assemble,
        mean_all,
    })
}

impl SkeletalGraph {
    pub fn standard() -> Self {
        build_graph_levels(&Skeleton::standard(), Reach::MAIN).expect("stock graph")
    }

    pub fn reach(&self) -> Reach {
        Reach([self.levels[0].k, self.levels[1].k, self.levels[2].k])
    }

    /// Text listing of vertices, edges and pool groups for every level.
    pub fn export_text(&self) -> String {
        let mut s = String::new();
        for l in &self.levels {
            let _ = writeln!(s, "level {} vertices {} K {}", l.level, l.n_vertices(), l.k);
            for v in 0..l.n_vertices() {
                let _ = writeln!(s, "vertex {v} {} {}", l.parts[v], l.names[v]);
            }
            for &(a, b) in &l.edges {
                let _ = writeln!(s, "edge {a} {b}");
            }
            if let Some(groups) = &l.pool_groups {
                for (c, g) in groups.iter().enumerate() {
                    let members: Vec<String> = g.iter().map(|m| m.to_string()).collect();
                    let _ = writeln!(s, "pool {c} <- {}", members.join(" "));
                }
            }
        }
        s
    }
}

/// Weight tensor layout for [`stgcn_layer`]: `(k_t, (K + 1) · C_in, C_out)`, the
/// `d`-th block of input rows acting on the distance-`d` neighbor mean.
pub fn stgcn_weight_shape(k_t: usize, reach: usize, cin: usize, cout: usize) -> [usize; 3] {
    [k_t, (reach + 1) * cin, cout]
}

/// Per-distance neighbor means stacked along channels: `(T, V, C) -> (T, V, (K+1)·C)`.
fn ring_means<F: Scalar>(g: &mut Graph<F>, x: Var, maps: &[Arc<VertexMap>]) -> Result<Var> {
    if maps.len() == 1 && maps[0].entries.len() == maps[0].n_out {
        return Ok(x);
    }
    let rings = maps
        .iter()
        .map(|m| g.gather_weighted_sum(x, m))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&rings, 2)
}

/// Spatial graph convolution: `out(j) = Σ_d w(d) · mean{in(i) : d(i, j) = d} + b`.
///
/// `weights[d]` is `(C_in, C_out)`.
pub fn stgcn_spatial<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    maps: &[Arc<VertexMap>],
    weights: &[Var],
    bias: Option<Var>,
) -> Result<Var> {
    if weights.len() != maps.len() {
        return Err(Error::dim(
            "stgcn_spatial",
            format!(
                "{} weight matrices for {} distance partitions",
                weights.len(),
                maps.len()
            ),
        ));
    }
    let stacked = ring_means(g, x, maps)?;
    let w = g.concat(weights, 0)?;
    g.linear(stacked, w, bias)
}

/// Spatio-temporal graph convolution with replicate temporal padding and stride 1.
pub fn stgcn_layer<F: Scalar>(
    g: &mut Graph<F>,
    x: Var,
    maps: &[Arc<VertexMap>],
    w: Var,
    b: Option<Var>,
) -> Result<Var> {
    let stacked = ring_means(g, x, maps)?;
    g.temporal_conv1d(stacked, w, b)
}

/// Level `i` → `i + 1` (`i` is 0-based).
pub fn part_pool<F: Scalar>(
    g: &mut Graph<F>,
    sg: &SkeletalGraph,
    x: Var,
    level: usize,
) -> Result<Var> {
    g.avg_pool_groups(x, &sg.pool[level])
}

/// Level `i + 1` → `i` (`i` is 0-based).
pub fn part_unpool<F: Scalar>(
    g: &mut Graph<F>,
    sg: &SkeletalGraph,
    x: Var,
    level: usize,
) -> Result<Var> {
    g.broadcast_unpool(x, &sg.unpool[level])
}

pub fn split_parts<F: Scalar>(
    g: &mut Graph<F>,
    sg: &SkeletalGraph,
    x: Var,
    level: usize,
) -> Result<[Var; 5]> {
    let mut out = [x; 5];
    for (p, o) in out.iter_mut().enumerate() {
        *o = g.gather_weighted_sum(x, &sg.select[level][p])?;
    }
    Ok(out)
}

pub fn join_parts<F: Scalar>(
    g: &mut Graph<F>,
    sg: &SkeletalGraph,
    parts: &[Var; 5],
    level: usize,
) -> Result<Var> {
    let cat = g.concat(parts, 1)?;
    g.gather_weighted_sum(cat, &sg.assemble[level])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn level_sizes_and_purity() {
        let sg = SkeletalGraph::standard();
        let n: Vec<usize> = sg.levels.iter().map(|l| l.n_vertices()).collect();
        assert_eq!(n, vec![21, 10, 5]);
        for l in &sg.levels[..2] {
            for grp in l.pool_groups.as_ref().unwrap() {
                assert!(grp.iter().all(|&v| l.parts[v] == l.parts[grp[0]]));
            }
        }
        for (v, p) in sg.levels[2].parts.iter().enumerate() {
            assert_eq!(p.index(), v);
        }
    }

    #[test]
    fn distances_are_metric() {
        let sg = SkeletalGraph::standard();
        for l in &sg.levels {
            let n = l.n_vertices();
            for a in 0..n {
                assert_eq!(l.distance[a][a], 0);
                for b in 0..n {
                    assert_eq!(l.distance[a][b], l.distance[b][a]);
                    for c in 0..n {
                        assert!(l.distance[a][c] <= l.distance[a][b] + l.distance[b][c]);
                    }
                }
            }
        }
        let g1 = &sg.levels[0];
        assert_eq!(g1.distance[2][3], 1);
        assert_eq!(g1.distance[1][3], 2);
    }

    #[test]
    fn coarse_edges() {
        let sg = SkeletalGraph::standard();
        assert_eq!(sg.levels[2].edges, vec![(0, 2), (1, 2), (2, 3), (2, 4)]);
        assert!(sg.levels[1].edges.contains(&(0, 1)));
        assert!(sg.levels[1].edges.contains(&(0, 4)));
        assert!(sg.levels[1].edges.contains(&(4, 6)));
    }

    #[test]
    fn chain_degree_invariance() {
        // three-vertex chain 0-1-2
        let l = GraphLevel::new(
            1,
            vec!["a".into(), "b".into(), "c".into()],
            vec![BodyPart::SP; 3],
            vec![(0, 1), (1, 2)],
            1,
        );
        let maps: Vec<Arc<VertexMap>> = (0..=1).map(|d| Arc::new(l.ring_mean_map(d))).collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 3, 1], 1.0));
        let w0 = g.constant(Tensor::full(&[1, 1], 2.0));
        let w1 = g.constant(Tensor::full(&[1, 1], 3.0));
        let y = stgcn_spatial(&mut g, x, &maps, &[w0, w1], None).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 5.0, 5.0]);
    }

    #[test]
    fn export_lists_everything() {
        let text = SkeletalGraph::standard().export_text();
        assert_eq!(text.lines().filter(|l| l.starts_with("vertex")).count(), 36);
        assert_eq!(text.lines().filter(|l| l.starts_with("pool")).count(), 15);
        assert!(text.contains("vertex 4 SP SP_a"));
    }
}
