//! Shop-floor site graph: workstations, warehouse, carport and junctions
//! connected by undirected paths, with shortest-path routing and an
//! immutable all-pairs distance cache.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a site within its [`Layout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SiteId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Workstation,
    Warehouse,
    Carport,
    Junction,
}

impl fmt::Display for SiteKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SiteKind::Workstation => "workstation",
            SiteKind::Warehouse => "warehouse",
            SiteKind::Carport => "carport",
            SiteKind::Junction => "junction",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct Site {
    pub id: String,
    pub kind: SiteKind,
    pub x: f64,
    pub y: f64,
}

/// Minimal-length route between two sites.
#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub nodes: Vec<SiteId>,
    pub length: f64,
}

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout parse error: {0}")]
    Parse(String),
    #[error("duplicate site id `{0}`")]
    DuplicateSite(String),
    #[error("edge references unknown site `{0}`")]
    DanglingEdge(String),
    #[error("edge {a}-{b} has nonpositive length {length}")]
    NonpositiveEdge { a: String, b: String, length: f64 },
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("sites `{0}` and `{1}` are not connected")]
    Unreachable(String, String),
    #[error("nonpositive velocity {0}")]
    NonpositiveVelocity(f64),
    #[error("layout has no site of kind {0}")]
    MissingKind(SiteKind),
}

#[derive(Serialize, Deserialize)]
struct LayoutDoc {
    version: u32,
    sites: Vec<SiteDoc>,
    edges: Vec<EdgeDoc>,
}

#[derive(Serialize, Deserialize)]
struct SiteDoc {
    id: String,
    kind: SiteKind,
    x: f64,
    y: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    a: String,
    b: String,
    length: f64,
}

/// Immutable site graph with a precomputed all-pairs distance cache.
#[derive(Debug)]
pub struct Layout {
    sites: Vec<Site>,
    index: HashMap<String, SiteId>,
    adjacency: Vec<Vec<(SiteId, f64)>>,
    dist: Vec<Vec<f64>>,
    /// True when every edge length dominates the Euclidean distance of its
    /// endpoints, making the Euclidean heuristic admissible for A*.
    euclidean_admissible: bool,
}

impl Layout {
    /// Builds and validates a layout from sites and undirected edges given
    /// as `(a, b, length)` id triples.
    pub fn new(sites: Vec<Site>, edges: &[(String, String, f64)]) -> Result<Self, LayoutError> {
        let mut index = HashMap::new();
        for (i, s) in sites.iter().enumerate() {
            if index.insert(s.id.clone(), SiteId(i)).is_some() {
                return Err(LayoutError::DuplicateSite(s.id.clone()));
            }
        }
        let mut adjacency = vec![Vec::new(); sites.len()];
        let mut euclidean_admissible = true;
        for (a, b, length) in edges {
            let ia = *index
                .get(a)
                .ok_or_else(|| LayoutError::DanglingEdge(a.clone()))?;
            let ib = *index
                .get(b)
                .ok_or_else(|| LayoutError::DanglingEdge(b.clone()))?;
            if !(*length > 0.0) {
                return Err(LayoutError::NonpositiveEdge {
                    a: a.clone(),
                    b: b.clone(),
                    length: *length,
                });
            }
            let (sa, sb) = (&sites[ia.0], &sites[ib.0]);
            if *length < ((sa.x - sb.x).powi(2) + (sa.y - sb.y).powi(2)).sqrt() - 1e-9 {
                euclidean_admissible = false;
            }
            adjacency[ia.0].push((ib, *length));
            adjacency[ib.0].push((ia, *length));
        }
        let mut layout = Layout {
            sites,
            index,
            adjacency,
            dist: Vec::new(),
            euclidean_admissible,
        };
        layout.dist = (0..layout.sites.len())
            .map(|src| {
                (0..layout.sites.len())
                    .map(|dst| {
                        layout
                            .astar_length(SiteId(src), SiteId(dst))
                            .unwrap_or(f64::INFINITY)
                    })
                    .collect()
            })
            .collect();
        Ok(layout)
    }

    pub fn load(document: &str) -> Result<Self, LayoutError> {
        let doc: LayoutDoc =
            serde_json::from_str(document).map_err(|e| LayoutError::Parse(e.to_string()))?;
        let sites = doc
            .sites
            .into_iter()
            .map(|s| Site {
                id: s.id,
                kind: s.kind,
                x: s.x,
                y: s.y,
            })
            .collect();
        let edges: Vec<_> = doc
            .edges
            .into_iter()
            .map(|e| (e.a, e.b, e.length))
            .collect();
        Self::new(sites, &edges)
    }

    /// The layout bundled with the crate: 8 workstations, a warehouse and a
    /// carport around a central corridor of junctions.
    pub fn bundled_default() -> Self {
        Self::load(include_str!("../data/default_layout.json"))
            .expect("bundled layout must be valid")
    }

    pub fn site(&self, id: SiteId) -> &Site {
        &self.sites[id.0]
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn sites(&self) -> impl Iterator<Item = (SiteId, &Site)> {
        self.sites.iter().enumerate().map(|(i, s)| (SiteId(i), s))
    }

    pub fn resolve(&self, id: &str) -> Result<SiteId, LayoutError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| LayoutError::UnknownSite(id.to_string()))
    }

    pub fn sites_of_kind(&self, kind: SiteKind) -> Vec<SiteId> {
        self.sites()
            .filter(|(_, s)| s.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn neighbors(&self, id: SiteId) -> &[(SiteId, f64)] {
        &self.adjacency[id.0]
    }

    fn euclidean(&self, a: SiteId, b: SiteId) -> f64 {
        let (sa, sb) = (&self.sites[a.0], &self.sites[b.0]);
        ((sa.x - sb.x).powi(2) + (sa.y - sb.y).powi(2)).sqrt()
    }

    /// A* search for the minimal route length. The heuristic is the
    /// Euclidean endpoint distance when admissible for this layout,
    /// otherwise zero.
    fn astar_length(&self, from: SiteId, to: SiteId) -> Option<f64> {
        use std::cmp::Reverse;
        use std::collections::BinaryHeap;

        if from == to {
            return Some(0.0);
        }
        let h = |n: SiteId| {
            if self.euclidean_admissible {
                self.euclidean(n, to)
            } else {
                0.0
            }
        };
        let mut best = vec![f64::INFINITY; self.sites.len()];
        let mut heap: BinaryHeap<Reverse<(OrdF64, SiteId)>> = BinaryHeap::new();
        best[from.0] = 0.0;
        heap.push(Reverse((OrdF64(h(from)), from)));
        while let Some(Reverse((OrdF64(f), node))) = heap.pop() {
            let g = f - h(node);
            if g > best[node.0] + 1e-12 {
                continue;
            }
            if node == to {
                return Some(best[node.0]);
            }
            for &(next, len) in &self.adjacency[node.0] {
                let cand = best[node.0] + len;
                if cand < best[next.0] {
                    best[next.0] = cand;
                    heap.push(Reverse((OrdF64(cand + h(next)), next)));
                }
            }
        }
        None
    }

    /// Minimal-length route, ties broken by the lexicographically smallest
    /// node-id sequence.
    pub fn shortest_path(&self, from: SiteId, to: SiteId) -> Result<PathResult, LayoutError> {
        let total = self.distance(from, to)?;
        let mut nodes = vec![from];
        let mut cur = from;
        let tol = 1e-9 * total.max(1.0);
        while cur != to {
            // Any neighbor on some shortest path satisfies
            // d(from,cur) + len + d(next,to) = d(from,to).
            let walked = self.dist[from.0][cur.0];
            let next = self.adjacency[cur.0]
                .iter()
                .filter(|(next, len)| {
                    (walked + len + self.dist[next.0][to.0] - total).abs() <= tol
                })
                .min_by(|(a, _), (b, _)| self.sites[a.0].id.cmp(&self.sites[b.0].id))
                .map(|&(next, _)| next)
                .expect("cached distance implies a continuing edge");
            nodes.push(next);
            cur = next;
        }
        Ok(PathResult {
            nodes,
            length: total,
        })
    }

    /// Cached shortest-path distance between two sites.
    pub fn distance(&self, p: SiteId, q: SiteId) -> Result<f64, LayoutError> {
        let d = self.dist[p.0][q.0];
        if d.is_finite() {
            Ok(d)
        } else {
            Err(LayoutError::Unreachable(
                self.sites[p.0].id.clone(),
                self.sites[q.0].id.clone(),
            ))
        }
    }

    pub fn travel_time(&self, p: SiteId, q: SiteId, velocity: f64) -> Result<f64, LayoutError> {
        if !(velocity > 0.0) {
            return Err(LayoutError::NonpositiveVelocity(velocity));
        }
        Ok(self.distance(p, q)? / velocity)
    }
}

/// Total order on finite f64 priorities for the A* heap.
#[derive(PartialEq, PartialOrd)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

#[allow(clippy::derive_ord_xor_partial_ord)]
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.partial_cmp(other).expect("priorities are finite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(id: &str, kind: SiteKind, x: f64, y: f64) -> Site {
        Site {
            id: id.into(),
            kind,
            x,
            y,
        }
    }

    fn line_abc() -> Layout {
        // A - B (3) - C (4)
        Layout::new(
            vec![
                site("A", SiteKind::Workstation, 0.0, 0.0),
                site("B", SiteKind::Junction, 3.0, 0.0),
                site("C", SiteKind::Warehouse, 7.0, 0.0),
            ],
            &[
                ("A".into(), "B".into(), 3.0),
                ("B".into(), "C".into(), 4.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn bundled_default_has_expected_sites() {
        let layout = Layout::bundled_default();
        for id in [
            "st1", "st2", "st3", "st4", "st5", "st6", "st7", "st8", "warehouse", "carport",
        ] {
            layout.resolve(id).unwrap();
        }
        assert_eq!(layout.sites_of_kind(SiteKind::Workstation).len(), 8);
        assert_eq!(layout.sites_of_kind(SiteKind::Warehouse).len(), 1);
        assert_eq!(layout.sites_of_kind(SiteKind::Carport).len(), 1);
        // Junctions exist beyond the 10 named sites.
        assert!(layout.site_count() > 10);
    }

    #[test]
    fn zero_length_edge_rejected() {
        let err = Layout::new(
            vec![
                site("A", SiteKind::Workstation, 0.0, 0.0),
                site("B", SiteKind::Warehouse, 1.0, 0.0),
            ],
            &[("A".into(), "B".into(), 0.0)],
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::NonpositiveEdge { .. }));
    }

    #[test]
    fn dangling_edge_rejected() {
        let err = Layout::new(
            vec![site("A", SiteKind::Workstation, 0.0, 0.0)],
            &[("A".into(), "Z".into(), 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, LayoutError::DanglingEdge(_)));
    }

    #[test]
    fn line_layout_total_length() {
        let layout = line_abc();
        let (a, c) = (layout.resolve("A").unwrap(), layout.resolve("C").unwrap());
        let path = layout.shortest_path(a, c).unwrap();
        assert_eq!(path.length, 7.0);
        assert_eq!(path.nodes.len(), 3);
    }

    #[test]
    fn identity_path() {
        let layout = line_abc();
        let a = layout.resolve("A").unwrap();
        let path = layout.shortest_path(a, a).unwrap();
        assert_eq!(path.nodes, vec![a]);
        assert_eq!(path.length, 0.0);
        assert_eq!(layout.distance(a, a).unwrap(), 0.0);
    }

    #[test]
    fn square_prefers_short_side() {
        // A-B(1), B-C(1), A-D(1), D-C(3); A -> C must go through B.
        let layout = Layout::new(
            vec![
                site("A", SiteKind::Workstation, 0.0, 0.0),
                site("B", SiteKind::Junction, 0.0, 0.0),
                site("C", SiteKind::Warehouse, 0.0, 0.0),
                site("D", SiteKind::Junction, 0.0, 0.0),
            ],
            &[
                ("A".into(), "B".into(), 1.0),
                ("B".into(), "C".into(), 1.0),
                ("A".into(), "D".into(), 1.0),
                ("D".into(), "C".into(), 3.0),
            ],
        )
        .unwrap();
        let (a, c) = (layout.resolve("A").unwrap(), layout.resolve("C").unwrap());
        let path = layout.shortest_path(a, c).unwrap();
        assert_eq!(path.length, 2.0);
        let ids: Vec<_> = path
            .nodes
            .iter()
            .map(|&n| layout.site(n).id.clone())
            .collect();
        assert_eq!(ids, vec!["A", "B", "C"]);
    }

    #[test]
    fn lexicographic_tie_break() {
        // Two shortest paths A-B-Z and A-C-Z of equal length; pick A-B-Z.
        let layout = Layout::new(
            vec![
                site("A", SiteKind::Workstation, 0.0, 0.0),
                site("B", SiteKind::Junction, 0.0, 0.0),
                site("C", SiteKind::Junction, 0.0, 0.0),
                site("Z", SiteKind::Warehouse, 0.0, 0.0),
            ],
            &[
                ("A".into(), "B".into(), 1.0),
                ("B".into(), "Z".into(), 1.0),
                ("A".into(), "C".into(), 1.0),
                ("C".into(), "Z".into(), 1.0),
            ],
        )
        .unwrap();
        let (a, z) = (layout.resolve("A").unwrap(), layout.resolve("Z").unwrap());
        let ids: Vec<_> = layout
            .shortest_path(a, z)
            .unwrap()
            .nodes
            .iter()
            .map(|&n| layout.site(n).id.clone())
            .collect();
        assert_eq!(ids, vec!["A", "B", "Z"]);
    }

    #[test]
    fn unreachable_pair_errors() {
        let layout = Layout::new(
            vec![
                site("A", SiteKind::Workstation, 0.0, 0.0),
                site("B", SiteKind::Warehouse, 1.0, 0.0),
                site("X", SiteKind::Carport, 9.0, 9.0),
            ],
            &[("A".into(), "B".into(), 1.0)],
        )
        .unwrap();
        let (a, x) = (layout.resolve("A").unwrap(), layout.resolve("X").unwrap());
        assert!(layout.distance(a, x).is_err());
        assert!(layout.shortest_path(a, x).is_err());
    }

    #[test]
    fn travel_time_divides_distance() {
        let layout = line_abc();
        let (a, c) = (layout.resolve("A").unwrap(), layout.resolve("C").unwrap());
        assert_eq!(layout.travel_time(a, c, 1.0).unwrap(), 7.0);
        assert_eq!(layout.travel_time(a, c, 2.0).unwrap(), 3.5);
        assert_eq!(layout.travel_time(a, a, 5.0).unwrap(), 0.0);
        assert!(layout.travel_time(a, c, 0.0).is_err());
        assert!(layout.travel_time(a, c, -1.0).is_err());
    }

    #[test]
    fn distance_is_symmetric() {
        let layout = Layout::bundled_default();
        for (i, _) in layout.sites() {
            for (j, _) in layout.sites() {
                assert_eq!(
                    layout.distance(i, j).unwrap(),
                    layout.distance(j, i).unwrap()
                );
            }
        }
    }
}
