//! Ambient graph topology and the Boolean lattice of edge configurations.
//!
//! A [`Topology`] is the fixed simple graph `G = (V, E)` whose edges may be
//! switched on or off. Nodes are dense `0..m`; edges are stored as `(i, j)`
//! with `i < j`, sorted lexicographically. That order is canonical: bit `k`
//! of an [`EdgeConfig`] always refers to `edges[k]`.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RggmError};

/// Default cap on the node count so dense `m x m` matrices stay addressable.
pub const DEFAULT_MAX_NODES: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Topology {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Builds a topology from an unordered edge list, capped at [`DEFAULT_MAX_NODES`].
    ///
    /// Pairs may be given in either orientation; they are normalised to
    /// `i < j` and sorted. Loops, duplicates and out-of-range endpoints are
    /// rejected.
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        Self::with_node_cap(m, edges, DEFAULT_MAX_NODES)
    }

    pub fn with_node_cap(
        m: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        max_nodes: usize,
    ) -> Result<Self> {
        if m > max_nodes {
            return Err(RggmError::Size {
                what: "node count",
                requested: m as u64,
                cap: max_nodes as u64,
            });
        }
        let mut list = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(RggmError::Config(format!("self-loop at node {a}")));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if j >= m {
                return Err(RggmError::Config(format!(
                    "edge ({i},{j}) references a node outside 0..{m}"
                )));
            }
            list.push((i, j));
        }
        list.sort_unstable();
        if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
            return Err(RggmError::Config(format!(
                "duplicate edge ({},{})",
                w[0].0, w[0].1
            )));
        }
        Ok(Self { m, edges: list })
    }

    pub fn path(m: usize) -> Self {
        Self::new(m, (1..m).map(|k| (k - 1, k))).expect("path is a simple graph")
    }

    /// Cycle on `m >= 3` nodes.
    pub fn cycle(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(RggmError::Config(format!("cycle needs at least 3 nodes, got {m}")));
        }
        Self::new(m, (0..m).map(|k| (k, (k + 1) % m)))
    }

    /// Star with centre 0 and `m - 1` leaves.
    pub fn star(m: usize) -> Self {
        Self::new(m, (1..m).map(|k| (0, k))).expect("star is a simple graph")
    }

    pub fn complete(m: usize) -> Self {
        let edges = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j)));
        Self::new(m, edges).expect("complete graph is simple")
    }

    /// Erdős–Rényi `G(m, p)` sample.
    pub fn random_gnp<R: Rng + ?Sized>(m: usize, p: f64, rng: &mut R) -> Self {
        let mut edges = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::new(m, edges).expect("sampled pairs are distinct")
    }

    /// Number of nodes `m`.
    pub fn num_nodes(&self) -> usize {
        self.m
    }

    /// Number of ambient edges `n`.
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    /// Canonical index of the edge `{i, j}`, if it belongs to the ambient graph.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.edges.binary_search(&key).ok()
    }

    pub fn empty_config(&self) -> EdgeConfig {
        EdgeConfig::zeros(self.num_edges())
    }

    pub fn full_config(&self) -> EdgeConfig {
        EdgeConfig::ones(self.num_edges())
    }

    /// Errors unless `a` has one bit per ambient edge.
    pub fn check_config(&self, a: &EdgeConfig) -> Result<()> {
        if a.len() != self.num_edges() {
            return Err(RggmError::Config(format!(
                "configuration has {} bits but topology has {} edges",
                a.len(),
                self.num_edges()
            )));
        }
        Ok(())
    }

    /// Whether `self` is a sub-topology of `larger` with the same edges at the same indices.
    pub fn is_prefix_of(&self, larger: &Topology) -> bool {
        self.m <= larger.m
            && self.edges.len() <= larger.edges.len()
            && larger.edges[..self.edges.len()] == self.edges[..]
    }
}

/// One realisation `a` of the random sub-graph: bit `k` is `a_{i_k j_k}`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct EdgeConfig {
    len: usize,
    words: Vec<u64>,
}

impl EdgeConfig {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; len.div_ceil(64)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut c = Self::zeros(len);
        for k in 0..len {
            c.set(k, true);
        }
        c
    }

    /// Config whose bit `k` is bit `k` of `code`. Requires `len <= 64`.
    pub fn from_code(len: usize, code: u64) -> Self {
        assert!(len <= 64, "integer codes address at most 64 edges");
        let mut c = Self::zeros(len);
        if len > 0 {
            let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
            c.words[0] = code & mask;
        }
        c
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut c = Self::zeros(bits.len());
        for (k, &b) in bits.iter().enumerate() {
            c.set(k, b);
        }
        c
    }

    /// Integer code of the configuration, available for up to 64 edges.
    pub fn code(&self) -> Option<u64> {
        match self.words.len() {
            0 => Some(0),
            1 => Some(self.words[0]),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, k: usize) -> bool {
        assert!(k < self.len, "edge index {k} out of range {}", self.len);
        (self.words[k / 64] >> (k % 64)) & 1 == 1
    }

    pub fn set(&mut self, k: usize, on: bool) {
        assert!(k < self.len, "edge index {k} out of range {}", self.len);
        let bit = 1u64 << (k % 64);
        if on {
            self.words[k / 64] |= bit;
        } else {
            self.words[k / 64] &= !bit;
        }
    }

    pub fn flip(&mut self, k: usize) {
        assert!(k < self.len, "edge index {k} out of range {}", self.len);
        self.words[k / 64] ^= 1u64 << (k % 64);
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&k| self.get(k))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|k| self.get(k)).collect()
    }

    /// Lattice join `a ∨ b` (edgewise max).
    pub fn join(&self, other: &Self) -> Result<Self> {
        self.check_same_len(other)?;
        Ok(self.zip_words(other, |x, y| x | y))
    }

    /// Lattice meet `a ∧ b` (edgewise min).
    pub fn meet(&self, other: &Self) -> Result<Self> {
        self.check_same_len(other)?;
        Ok(self.zip_words(other, |x, y| x & y))
    }

    /// Partial order: `a <= b` iff every edge on in `a` is on in `b`.
    pub fn leq(&self, other: &Self) -> Result<bool> {
        self.check_same_len(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(x, y)| x & !y == 0))
    }

    /// Hex rendering: bit `k` is bit `k` of the integer, most significant digit first,
    /// `max(1, ceil(len / 4))` digits.
    pub fn to_hex(&self) -> String {
        let digits = self.len.div_ceil(4).max(1);
        let mut s = String::with_capacity(digits);
        for d in (0..digits).rev() {
            let bit = 4 * d;
            let nibble = self.words.get(bit / 64).map_or(0, |w| (w >> (bit % 64)) & 0xf);
            s.push(char::from_digit(nibble as u32, 16).expect("nibble < 16"));
        }
        s
    }

    /// Inverse of [`EdgeConfig::to_hex`]; accepts an optional `0x` prefix and any
    /// number of leading zeros, rejects bits beyond `len`.
    pub fn from_hex(len: usize, hex: &str) -> Result<Self> {
        let body = hex.trim();
        let body = body
            .strip_prefix("0x")
            .or_else(|| body.strip_prefix("0X"))
            .unwrap_or(body);
        if body.is_empty() {
            return Err(RggmError::Data("empty configuration hex string".into()));
        }
        let mut c = Self::zeros(len);
        for (d, ch) in body.chars().rev().enumerate() {
            let nibble = ch
                .to_digit(16)
                .ok_or_else(|| RggmError::Data(format!("invalid hex digit {ch:?} in {hex:?}")))?;
            for b in 0..4 {
                if (nibble >> b) & 1 == 1 {
                    let k = 4 * d + b;
                    if k >= len {
                        return Err(RggmError::Data(format!(
                            "configuration {hex:?} sets bit {k} beyond {len} edges"
                        )));
                    }
                    c.set(k, true);
                }
            }
        }
        Ok(c)
    }

    fn check_same_len(&self, other: &Self) -> Result<()> {
        if self.len != other.len {
            return Err(RggmError::Config(format!(
                "configuration lengths differ: {} vs {}",
                self.len, other.len
            )));
        }
        Ok(())
    }

    fn zip_words(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        Self {
            len: self.len,
            words: self.words.iter().zip(&other.words).map(|(&x, &y)| f(x, y)).collect(),
        }
    }
}

impl fmt::Debug for EdgeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = (0..self.len).map(|k| if self.get(k) { '1' } else { '0' }).collect();
        write!(f, "EdgeConfig({bits})")
    }
}

/// Families of growing graphs used for nested-sequence (infinite-volume) checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NestedKind {
    Path,
    /// Comb spanning tree of the quarter-plane grid: a spine along the first
    /// row with a vertical tooth at every column, nodes in breadth-first order.
    Grid,
    Star,
}

/// Nested topologies `G_1 ⊂ G_2 ⊂ ...`, one per node count in `sizes`.
///
/// Each family is a tree grown node by node with non-decreasing parents, so
/// every new edge sorts after all earlier ones and edge indices are stable
/// across the sequence.
pub fn nested_sequence(kind: NestedKind, sizes: &[usize]) -> Result<Vec<Topology>> {
    if sizes.is_empty() {
        return Err(RggmError::Config("nested sequence needs at least one size".into()));
    }
    if sizes[0] == 0 {
        return Err(RggmError::Config("nested sequence sizes must be positive".into()));
    }
    if let Some(w) = sizes.windows(2).find(|w| w[0] >= w[1]) {
        return Err(RggmError::Config(format!(
            "nested sequence sizes must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    let largest = *sizes.last().expect("non-empty");
    let parents = tree_parents(kind, largest);
    sizes
        .iter()
        .map(|&size| Topology::new(size, (1..size).map(|k| (parents[k], k))))
        .collect()
}

/// `parents[k]` for nodes `1..count`; `parents[0]` is unused.
fn tree_parents(kind: NestedKind, count: usize) -> Vec<usize> {
    match kind {
        NestedKind::Path => (0..count).map(|k| k.saturating_sub(1)).collect(),
        NestedKind::Star => vec![0; count],
        NestedKind::Grid => {
            // Level d holds grid points (x, d - x), x = 0..=d, numbered by x.
            let mut parents = vec![0];
            let mut prev_level_start = 0;
            let mut level = 1;
            while parents.len() < count {
                let start = parents.len();
                for x in 0..=level {
                    if parents.len() == count {
                        break;
                    }
                    // Tooth nodes hang below (x, y - 1); the spine node (d, 0) extends (d - 1, 0).
                    let parent_offset = if x < level { x } else { level - 1 };
                    parents.push(prev_level_start + parent_offset);
                }
                prev_level_start = start;
                level += 1;
            }
            parents
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(bits: &str) -> EdgeConfig {
        EdgeConfig::from_bits(&bits.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn join_meet_examples() {
        assert_eq!(cfg("101").join(&cfg("011")).unwrap(), cfg("111"));
        assert_eq!(cfg("101").meet(&cfg("011")).unwrap(), cfg("001"));
        let b = cfg("110");
        assert_eq!(cfg("000").join(&b).unwrap(), b);
        assert_eq!(cfg("111").meet(&b).unwrap(), b);
        assert_eq!(b.join(&b).unwrap(), b);
        assert_eq!(b.meet(&b).unwrap(), b);
    }

    #[test]
    fn leq_examples() {
        assert!(cfg("000").leq(&cfg("101")).unwrap());
        assert!(!cfg("101").leq(&cfg("011")).unwrap());
        assert!(!cfg("011").leq(&cfg("101")).unwrap());
    }

    #[test]
    fn length_mismatch_is_config_error() {
        assert!(matches!(cfg("10").join(&cfg("101")), Err(RggmError::Config(_))));
        assert!(matches!(cfg("10").meet(&cfg("101")), Err(RggmError::Config(_))));
        assert!(matches!(cfg("10").leq(&cfg("101")), Err(RggmError::Config(_))));
    }

    #[test]
    fn topology_normalises_and_rejects() {
        let t = Topology::new(3, [(2, 1), (0, 1)]).unwrap();
        assert_eq!(t.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(t.edge_index(2, 1), Some(1));
        assert_eq!(t.edge_index(0, 2), None);
        assert!(Topology::new(3, [(1, 1)]).is_err());
        assert!(Topology::new(3, [(0, 1), (1, 0)]).is_err());
        assert!(Topology::new(3, [(0, 3)]).is_err());
        assert!(matches!(
            Topology::with_node_cap(10, [], 8),
            Err(RggmError::Size { .. })
        ));
    }

    #[test]
    fn hex_layout() {
        // bit 0 is the least significant bit of the rendered integer
        assert_eq!(cfg("10").to_hex(), "1");
        assert_eq!(cfg("01").to_hex(), "2");
        assert_eq!(cfg("00001").to_hex(), "10");
        assert_eq!(EdgeConfig::zeros(0).to_hex(), "0");
        assert_eq!(EdgeConfig::from_hex(5, "0x10").unwrap(), cfg("00001"));
        assert!(EdgeConfig::from_hex(2, "4").is_err());
        assert!(EdgeConfig::from_hex(2, "g").is_err());

        let mut wide = EdgeConfig::zeros(130);
        wide.set(0, true);
        wide.set(64, true);
        wide.set(129, true);
        assert_eq!(EdgeConfig::from_hex(130, &wide.to_hex()).unwrap(), wide);
    }

    #[test]
    fn codes_round_trip() {
        let c = EdgeConfig::from_code(5, 0b10110);
        assert_eq!(c, cfg("01101"));
        assert_eq!(c.code(), Some(0b10110));
        assert_eq!(c.count_ones(), 3);
        assert_eq!(c.iter_ones().collect::<Vec<_>>(), vec![1, 2, 4]);
    }

    #[test]
    fn nested_paths_and_stars() {
        let p = nested_sequence(NestedKind::Path, &[2, 3]).unwrap();
        assert_eq!(p[0].edges(), &[(0, 1)]);
        assert_eq!(p[1].edges(), &[(0, 1), (1, 2)]);

        let s = nested_sequence(NestedKind::Star, &[2, 3, 4]).unwrap();
        assert_eq!(s[2].edges(), &[(0, 1), (0, 2), (0, 3)]);
        assert!(s[0].is_prefix_of(&s[1]) && s[1].is_prefix_of(&s[2]));

        assert!(nested_sequence(NestedKind::Path, &[3, 2]).is_err());
        assert!(nested_sequence(NestedKind::Path, &[3, 3]).is_err());
        assert!(nested_sequence(NestedKind::Path, &[]).is_err());
    }

    #[test]
    fn nested_grid_is_a_comb_tree() {
        let seq = nested_sequence(NestedKind::Grid, &[1, 3, 6, 10, 20]).unwrap();
        for w in seq.windows(2) {
            assert!(w[0].is_prefix_of(&w[1]));
        }
        // Levels: {0} {1,2} {3,4,5}: node 3=(0,2) under 1=(0,1), 4=(1,1) under 2=(1,0), 5=(2,0) under 2.
        assert_eq!(seq[2].edges(), &[(0, 1), (0, 2), (1, 3), (2, 4), (2, 5)]);
        for t in &seq {
            assert_eq!(t.num_edges(), t.num_nodes() - 1);
        }
    }
}
