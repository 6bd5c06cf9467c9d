use std::cell::RefCell;
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{scan, Distance, IndexConfig, IndexError, Neighbor, NeighborIndex, PointId};
use crate::canon::Endpoint;
use crate::scalar::Real;

pub(crate) const MAX_LEVEL: usize = 16;

#[derive(Clone, Copy, Debug)]
struct Cand<F> {
    dist: F,
    node: u32,
}

impl<F: Real> PartialEq for Cand<F> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<F: Real> Eq for Cand<F> {}

impl<F: Real> PartialOrd for Cand<F> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<F: Real> Ord for Cand<F> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .partial_cmp(&other.dist)
            .unwrap_or(Ordering::Equal)
            .then(self.node.cmp(&other.node))
    }
}

/// Epoch-stamped visited marks, reused across searches on the same thread.
#[derive(Default)]
struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let m = &mut self.marks[i as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

/// Per-thread search buffers, kept across calls to avoid reallocation.
struct Scratch<F> {
    visited: Visited,
    frontier: BinaryHeap<Reverse<Cand<F>>>,
    best: BinaryHeap<Cand<F>>,
    fresh: Vec<u32>,
}

thread_local! {
    static SCRATCH32: RefCell<Scratch<f32>> = RefCell::new(Scratch::new());
    static SCRATCH64: RefCell<Scratch<f64>> = RefCell::new(Scratch::new());
}

impl<F> Scratch<F> {
    fn new() -> Self {
        Scratch {
            visited: Visited::default(),
            frontier: BinaryHeap::new(),
            best: BinaryHeap::new(),
            fresh: Vec::new(),
        }
    }
}

/// Hints the cache to load the start of a vector.
#[inline(always)]
fn prefetch<F>(v: &[F]) {
    #[cfg(target_arch = "x86_64")]
    {
        use std::arch::x86_64::{_mm_prefetch, _MM_HINT_T0};
        let p = v.as_ptr() as *const i8;
        let bytes = std::mem::size_of_val(v);
        let mut off = 0;
        while off < bytes {
            // SAFETY: prefetch never faults and the address is inside `v`.
            unsafe { _mm_prefetch::<_MM_HINT_T0>(p.add(off)) };
            off += 64;
        }
    }
    #[cfg(not(target_arch = "x86_64"))]
    let _ = v;
}

/// Runs `f` with this thread's buffers for `F`, or fresh ones for a scalar
/// type without a dedicated slot.
fn with_scratch<F: Real, R>(f: impl FnOnce(&mut Scratch<F>) -> R) -> R {
    use std::any::Any;
    fn cast<A: 'static, B: 'static>(s: &mut Scratch<A>) -> &mut Scratch<B> {
        (s as &mut dyn Any).downcast_mut().expect("scalar type matches")
    }
    if std::any::TypeId::of::<F>() == std::any::TypeId::of::<f32>() {
        SCRATCH32.with(|c| f(cast(&mut c.borrow_mut())))
    } else if std::any::TypeId::of::<F>() == std::any::TypeId::of::<f64>() {
        SCRATCH64.with(|c| f(cast(&mut c.borrow_mut())))
    } else {
        f(&mut Scratch::new())
    }
}

/// One endpoint's HNSW graph. Node numbers are local to the graph.
///
/// Layer-0 lists live in one fixed-stride array (`[count, slots..]` per
/// node); upper layers are rare and kept as nested vectors.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Graph<F> {
    pub(crate) ids: Vec<PointId>,
    /// `len × dim`, prepared for the index distance.
    pub(crate) vectors: Vec<F>,
    levels: Vec<u8>,
    cap0: usize,
    base: Vec<u32>,
    /// `upper[node][layer - 1]`.
    upper: Vec<Vec<Vec<u32>>>,
    pub(crate) entry: Option<u32>,
}

impl<F: Real> Graph<F> {
    /// `m` is the upper-layer degree; layer 0 holds up to `2m`.
    pub(crate) fn new(m: usize) -> Self {
        Graph {
            ids: Vec::new(),
            vectors: Vec::new(),
            levels: Vec::new(),
            cap0: 2 * m,
            base: Vec::new(),
            upper: Vec::new(),
            entry: None,
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.ids.len()
    }

    fn dim(&self) -> usize {
        if self.ids.is_empty() {
            0
        } else {
            self.vectors.len() / self.ids.len()
        }
    }

    #[inline]
    fn vector(&self, node: u32, dim: usize) -> &[F] {
        let i = node as usize * dim;
        &self.vectors[i..i + dim]
    }

    pub(crate) fn level(&self, node: u32) -> usize {
        self.levels[node as usize] as usize
    }

    pub(crate) fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.cap0
        } else {
            self.cap0 / 2
        }
    }

    #[inline]
    pub(crate) fn neighbors(&self, node: u32, layer: usize) -> &[u32] {
        if layer == 0 {
            let at = node as usize * (self.cap0 + 1);
            let n = self.base[at] as usize;
            &self.base[at + 1..at + 1 + n]
        } else {
            &self.upper[node as usize][layer - 1]
        }
    }

    /// Replaces a list; panics if it exceeds the layer's capacity.
    pub(crate) fn set_neighbors(&mut self, node: u32, layer: usize, list: &[u32]) {
        assert!(list.len() <= self.cap(layer), "degree above capacity");
        if layer == 0 {
            let at = node as usize * (self.cap0 + 1);
            self.base[at] = list.len() as u32;
            let slots = &mut self.base[at + 1..at + 1 + self.cap0];
            slots[..list.len()].copy_from_slice(list);
            slots[list.len()..].fill(0);
        } else {
            self.upper[node as usize][layer - 1] = list.to_vec();
        }
    }

    /// Appends an unlinked node and returns its number.
    pub(crate) fn push_node(&mut self, id: PointId, vector: &[F], level: usize) -> u32 {
        let node = self.ids.len() as u32;
        self.ids.push(id);
        self.vectors.extend_from_slice(vector);
        self.levels.push(level as u8);
        self.base.resize(self.base.len() + self.cap0 + 1, 0);
        self.upper.push(vec![Vec::new(); level]);
        node
    }

    pub(crate) fn rows(&self, dim: usize) -> impl Iterator<Item = (PointId, &[F])> {
        self.ids.iter().copied().zip(self.vectors.chunks_exact(dim))
    }

    fn search_layer(
        &self,
        metric: Distance,
        query: &[F],
        entry: &[Cand<F>],
        ef: usize,
        layer: usize,
        dim: usize,
    ) -> Vec<Cand<F>> {
        let run = |sc: &mut Scratch<F>| {
            let Scratch { visited, frontier, best, fresh } = sc;
            visited.reset(self.len());
            frontier.clear();
            best.clear();
            for &c in entry {
                if visited.insert(c.node) {
                    frontier.push(Reverse(c));
                    best.push(c);
                }
            }
            while best.len() > ef {
                best.pop();
            }
            while let Some(Reverse(cur)) = frontier.pop() {
                let worst = best.peek().expect("result set is never empty").dist;
                if cur.dist > worst && best.len() >= ef {
                    break;
                }
                fresh.clear();
                for &n in self.neighbors(cur.node, layer) {
                    if visited.insert(n) {
                        prefetch(self.vector(n, dim));
                        fresh.push(n);
                    }
                }
                for &n in fresh.iter() {
                    let d = metric.eval(query, self.vector(n, dim));
                    let full = best.len() >= ef;
                    if !full || d < best.peek().unwrap().dist {
                        let c = Cand { dist: d, node: n };
                        frontier.push(Reverse(c));
                        best.push(c);
                        if best.len() > ef {
                            best.pop();
                        }
                    }
                }
            }
            let mut out: Vec<Cand<F>> = best.drain().collect();
            out.sort_unstable();
            out
        };
        with_scratch(run)
    }

    /// Keeps a candidate only if it is closer to the base point than to every
    /// neighbor already selected. `sorted` must be ascending.
    fn select_neighbors(&self, metric: Distance, sorted: &[Cand<F>], m: usize, dim: usize) -> Vec<u32> {
        if sorted.len() <= m {
            return sorted.iter().map(|c| c.node).collect();
        }
        let mut picked: Vec<u32> = Vec::with_capacity(m);
        for c in sorted {
            let cv = self.vector(c.node, dim);
            let diverse = picked
                .iter()
                .all(|&p| metric.eval(cv, self.vector(p, dim)) >= c.dist);
            if diverse {
                picked.push(c.node);
                if picked.len() >= m {
                    break;
                }
            }
        }
        picked
    }

    /// Greedy walk from the entry point down to layer 1.
    fn greedy_descend(&self, metric: Distance, query: &[F], dim: usize) -> Cand<F> {
        let entry = self.entry.expect("graph is non-empty");
        let mut cur = Cand {
            dist: metric.eval(query, self.vector(entry, dim)),
            node: entry,
        };
        for layer in (1..=self.level(entry)).rev() {
            cur = self.search_layer(metric, query, &[cur], 1, layer, dim)[0];
        }
        cur
    }

    fn insert(&mut self, cfg: &IndexConfig, id: PointId, vector: Vec<F>, level: usize) {
        let dim = vector.len();
        let node = self.push_node(id, &vector, level);

        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let top = self.level(entry);
        let metric = cfg.distance;
        let mut eps = vec![Cand {
            dist: metric.eval(&vector, self.vector(entry, dim)),
            node: entry,
        }];
        for layer in (level + 1..=top).rev() {
            eps = vec![self.search_layer(metric, &vector, &eps, 1, layer, dim)[0]];
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(metric, &vector, &eps, cfg.ef_construction, layer, dim);
            let chosen = self.select_neighbors(metric, &found, cfg.m, dim);
            for &n in &chosen {
                self.link(metric, n, node, layer, dim);
            }
            self.set_neighbors(node, layer, &chosen);
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    /// Adds `new` to `node`'s list on `layer`, re-pruning if over capacity.
    fn link(&mut self, metric: Distance, node: u32, new: u32, layer: usize, dim: usize) {
        let cap = self.cap(layer);
        let current = self.neighbors(node, layer);
        if current.len() < cap {
            if layer == 0 {
                let at = node as usize * (self.cap0 + 1);
                let n = self.base[at] as usize;
                self.base[at + 1 + n] = new;
                self.base[at] += 1;
            } else {
                self.upper[node as usize][layer - 1].push(new);
            }
            return;
        }
        let base = self.vector(node, dim);
        let mut cands: Vec<Cand<F>> = current
            .iter()
            .chain(std::iter::once(&new))
            .map(|&n| Cand {
                dist: metric.eval(base, self.vector(n, dim)),
                node: n,
            })
            .collect();
        cands.sort();
        let pruned = self.select_neighbors(metric, &cands, cap, dim);
        self.set_neighbors(node, layer, &pruned);
    }

    fn search(&self, metric: Distance, query: &[F], k: usize, ef: usize) -> Vec<Neighbor<F>> {
        let dim = self.dim();
        if self.len() <= ef {
            // The beam would cover the whole namespace.
            return scan(metric, query, self.rows(dim), k);
        }
        let start = self.greedy_descend(metric, query, dim);
        let mut hits: Vec<Neighbor<F>> = self
            .search_layer(metric, query, &[start], ef, 0, dim)
            .into_iter()
            .map(|c| Neighbor {
                id: self.ids[c.node as usize],
                distance: c.dist,
            })
            .collect();
        hits.sort_by(Neighbor::order);
        hits.truncate(k);
        hits
    }
}

/// HNSW index with one graph per endpoint namespace.
///
/// Inserts need `&mut self`; queries take `&self` and may run concurrently.
#[derive(Debug, Clone)]
pub struct HnswIndex<F> {
    pub(crate) config: IndexConfig,
    pub(crate) dim: usize,
    pub(crate) namespaces: Vec<(Endpoint, Graph<F>)>,
    pub(crate) by_endpoint: HashMap<Endpoint, usize>,
    pub(crate) by_id: HashMap<PointId, (u32, u32)>,
    pub(crate) rng: ChaCha8Rng,
}

impl<F: Real> HnswIndex<F> {
    pub fn new(dim: usize, config: IndexConfig) -> Result<Self, IndexError> {
        config.validate()?;
        if dim == 0 {
            return Err(IndexError::InvalidConfig("dim must be positive".into()));
        }
        Ok(HnswIndex {
            config,
            dim,
            namespaces: Vec::new(),
            by_endpoint: HashMap::new(),
            by_id: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn endpoints(&self) -> impl Iterator<Item = &Endpoint> {
        self.namespaces.iter().map(|(e, _)| e)
    }

    pub fn namespace_len(&self, endpoint: &Endpoint) -> Option<usize> {
        self.by_endpoint
            .get(endpoint)
            .map(|&i| self.namespaces[i].1.len())
    }

    pub fn contains(&self, id: PointId) -> bool {
        self.by_id.contains_key(&id)
    }

    /// Stored (prepared) vector for an id.
    pub fn vector(&self, id: PointId) -> Option<&[F]> {
        let &(ns, node) = self.by_id.get(&id)?;
        Some(self.namespaces[ns as usize].1.vector(node, self.dim))
    }

    fn sample_level(&mut self) -> usize {
        let ml = 1.0 / (self.config.m as f64).ln();
        let u: f64 = self.rng.gen();
        ((-(1.0 - u).ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    fn check_dim(&self, v: &[F]) -> Result<(), IndexError> {
        if v.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, endpoint: &Endpoint, vector: &[F], id: PointId) -> Result<(), IndexError> {
        self.check_dim(vector)?;
        if self.by_id.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        let prepared = self.config.distance.prepare(vector)?;
        let level = self.sample_level();
        let ns = match self.by_endpoint.get(endpoint) {
            Some(&i) => i,
            None => {
                self.namespaces.push((endpoint.clone(), Graph::new(self.config.m)));
                let i = self.namespaces.len() - 1;
                self.by_endpoint.insert(endpoint.clone(), i);
                i
            }
        };
        let graph = &mut self.namespaces[ns].1;
        let node = graph.len() as u32;
        graph.insert(&self.config, id, prepared, level);
        self.by_id.insert(id, (ns as u32, node));
        Ok(())
    }

    fn namespace(&self, endpoint: &Endpoint) -> Result<&Graph<F>, IndexError> {
        self.by_endpoint
            .get(endpoint)
            .map(|&i| &self.namespaces[i].1)
            .ok_or_else(|| IndexError::UnknownEndpoint(endpoint.clone()))
    }

    fn prepare_query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<(&Graph<F>, Vec<F>), IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        self.check_dim(vector)?;
        let graph = self.namespace(endpoint)?;
        Ok((graph, self.config.distance.prepare(vector)?))
    }

    /// Approximate k-NN within the endpoint's namespace, searched with
    /// `ef = max(ef_search, k)`.
    pub fn query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<Vec<Neighbor<F>>, IndexError> {
        self.query_with_ef(endpoint, vector, k, self.config.ef_search)
    }

    pub fn query_with_ef(
        &self,
        endpoint: &Endpoint,
        vector: &[F],
        k: usize,
        ef_search: usize,
    ) -> Result<Vec<Neighbor<F>>, IndexError> {
        let (graph, q) = self.prepare_query(endpoint, vector, k)?;
        Ok(graph.search(self.config.distance, &q, k, ef_search.max(k)))
    }

    /// Exact k-NN by full scan of the endpoint's namespace.
    pub fn brute_force_query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<Vec<Neighbor<F>>, IndexError> {
        let (graph, q) = self.prepare_query(endpoint, vector, k)?;
        Ok(scan(self.config.distance, &q, graph.rows(self.dim), k))
    }

    /// Checks degree bounds, link targets, vector normalization and the
    /// namespace partition of ids.
    pub fn validate_structure(&self) -> Result<(), String> {
        let mut seen = 0usize;
        for (ns, (endpoint, g)) in self.namespaces.iter().enumerate() {
            if g.vectors.len() != g.len() * self.dim || g.levels.len() != g.len() {
                return Err(format!("{endpoint}: storage length mismatch"));
            }
            if g.len() > 0 && g.entry.is_none() {
                return Err(format!("{endpoint}: missing entry point"));
            }
            if let Some(e) = g.entry {
                let top = g.level(e);
                if g.levels.iter().any(|&l| l as usize > top) {
                    return Err(format!("{endpoint}: entry point is not on the top layer"));
                }
            }
            for node in 0..g.len() {
                for layer in 0..=g.level(node as u32) {
                    let nbrs = g.neighbors(node as u32, layer);
                    if nbrs.len() > g.cap(layer) {
                        return Err(format!("{endpoint}: node {node} layer {layer} degree {}", nbrs.len()));
                    }
                    for &n in nbrs {
                        if n as usize >= g.len() || g.level(n) < layer || n as usize == node {
                            return Err(format!("{endpoint}: bad link {node} -> {n} on layer {layer}"));
                        }
                    }
                }
                let id = g.ids[node];
                if self.by_id.get(&id) != Some(&(ns as u32, node as u32)) {
                    return Err(format!("id {id} not mapped to its namespace slot"));
                }
            }
            if self.config.distance == Distance::Cosine {
                let tol = F::from_f64_lossy(1e-6);
                for (id, v) in g.rows(self.dim) {
                    let n = crate::scalar::norm(v);
                    if (n - F::one()).abs() > tol {
                        return Err(format!("id {id} has norm {n}"));
                    }
                }
            }
            seen += g.len();
        }
        if seen != self.by_id.len() {
            return Err("id map and namespaces disagree".into());
        }
        Ok(())
    }

    /// Every point id with its namespace, in namespace then insertion order.
    pub fn points(&self) -> impl Iterator<Item = (&Endpoint, PointId)> {
        self.namespaces
            .iter()
            .flat_map(|(e, g)| g.ids.iter().map(move |&id| (e, id)))
    }
}

impl<F: Real> NeighborIndex<F> for HnswIndex<F> {
    fn insert(&mut self, endpoint: &Endpoint, vector: &[F], id: PointId) -> Result<(), IndexError> {
        HnswIndex::insert(self, endpoint, vector, id)
    }

    fn query(&self, endpoint: &Endpoint, vector: &[F], k: usize) -> Result<Vec<Neighbor<F>>, IndexError> {
        HnswIndex::query(self, endpoint, vector, k)
    }

    fn len(&self) -> usize {
        HnswIndex::len(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use support::unit_vectors;

    mod support {
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        pub fn unit_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                    let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        }
    }

    fn ep(path: &str) -> Endpoint {
        Endpoint::new("GET", "h", path)
    }

    fn small_cfg() -> IndexConfig {
        IndexConfig {
            m: 8,
            ef_construction: 64,
            ef_search: 32,
            ..Default::default()
        }
    }

    fn recall(approx: &[Neighbor<f32>], exact: &[Neighbor<f32>]) -> f64 {
        let hits = approx.iter().filter(|a| exact.iter().any(|e| e.id == a.id)).count();
        hits as f64 / exact.len() as f64
    }

    #[test]
    fn self_retrieval_and_duplicates() {
        let mut idx = HnswIndex::<f32>::new(3, small_cfg()).unwrap();
        idx.insert(&ep("/a"), &[1.0, 2.0, 3.0], 7).unwrap();
        idx.insert(&ep("/a"), &[3.0, 2.0, 1.0], 8).unwrap();
        let hits = idx.query(&ep("/a"), &[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!(hits[0].id, 7);
        assert!(hits[0].distance.abs() < 1e-6);
        assert!(matches!(
            idx.insert(&ep("/b"), &[1.0, 0.0, 0.0], 7),
            Err(IndexError::DuplicateId(7))
        ));
        assert!(matches!(
            idx.insert(&ep("/a"), &[1.0, 0.0], 9),
            Err(IndexError::DimensionMismatch { expected: 3, found: 2 })
        ));
        assert!(matches!(
            idx.insert(&ep("/a"), &[0.0, 0.0, 0.0], 9),
            Err(IndexError::ZeroVector)
        ));
    }

    #[test]
    fn truncates_to_namespace_and_isolates() {
        let vs = unit_vectors(20, 8, 1);
        let mut idx = HnswIndex::<f32>::new(8, small_cfg()).unwrap();
        for (i, v) in vs.iter().enumerate() {
            let e = if i < 3 { ep("/small") } else { ep("/big") };
            idx.insert(&e, v, i as u64).unwrap();
        }
        let hits = idx.query(&ep("/small"), &vs[10], 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert!(hits.iter().all(|n| n.id < 3));
        let hits = idx.query(&ep("/big"), &vs[0], 50).unwrap();
        assert_eq!(hits.len(), 17);
        assert!(hits.iter().all(|n| n.id >= 3));
        assert!(matches!(
            idx.query(&ep("/none"), &vs[0], 1),
            Err(IndexError::UnknownEndpoint(_))
        ));
        assert!(matches!(idx.query(&ep("/big"), &vs[0], 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn graph_search_recall_and_structure() {
        let vs = unit_vectors(3000, 16, 2);
        let mut idx = HnswIndex::<f32>::new(16, small_cfg()).unwrap();
        for (i, v) in vs.iter().enumerate() {
            idx.insert(&ep("/x"), v, i as u64).unwrap();
            if i % 500 == 0 {
                idx.validate_structure().unwrap();
            }
        }
        idx.validate_structure().unwrap();
        let queries = unit_vectors(200, 16, 3);
        let mut total = 0.0;
        for q in &queries {
            let a = idx.query(&ep("/x"), q, 10).unwrap();
            let e = idx.brute_force_query(&ep("/x"), q, 10).unwrap();
            assert!(a.windows(2).all(|w| w[0].order(&w[1]) != Ordering::Greater));
            assert!(a.iter().all(|n| n.distance >= 0.0));
            total += recall(&a, &e);
        }
        assert!(total / queries.len() as f64 > 0.9, "recall {}", total / 200.0);
    }

    #[test]
    fn exact_when_namespace_fits_in_beam() {
        let vs = unit_vectors(150, 12, 4);
        let mut idx = HnswIndex::<f32>::new(12, IndexConfig { ef_search: 200, ..small_cfg() }).unwrap();
        for (i, v) in vs.iter().enumerate() {
            idx.insert(&ep("/x"), v, i as u64).unwrap();
        }
        for q in unit_vectors(50, 12, 5) {
            assert_eq!(
                idx.query(&ep("/x"), &q, 10).unwrap(),
                idx.brute_force_query(&ep("/x"), &q, 10).unwrap()
            );
        }
    }

    #[test]
    fn deterministic_build() {
        let vs = unit_vectors(800, 8, 6);
        let build = || {
            let mut idx = HnswIndex::<f32>::new(8, small_cfg()).unwrap();
            for (i, v) in vs.iter().enumerate() {
                idx.insert(&ep("/x"), v, i as u64).unwrap();
            }
            idx
        };
        let (a, b) = (build(), build());
        assert_eq!(a.namespaces, b.namespaces);
    }

    #[test]
    fn larger_beam_does_not_hurt_recall() {
        let vs = unit_vectors(4000, 24, 7);
        let mut idx = HnswIndex::<f32>::new(24, IndexConfig { m: 6, ef_construction: 24, ..small_cfg() }).unwrap();
        for (i, v) in vs.iter().enumerate() {
            idx.insert(&ep("/x"), v, i as u64).unwrap();
        }
        let queries = unit_vectors(150, 24, 8);
        let mean_recall = |ef: usize| {
            queries
                .iter()
                .map(|q| {
                    let a = idx.query_with_ef(&ep("/x"), q, 10, ef).unwrap();
                    let e = idx.brute_force_query(&ep("/x"), q, 10).unwrap();
                    recall(&a, &e)
                })
                .sum::<f64>()
                / queries.len() as f64
        };
        let mut last = 0.0;
        for ef in [10, 20, 40, 80, 160] {
            let r = mean_recall(ef);
            assert!(r >= last, "ef {ef}: {r} < {last}");
            last = r;
        }
    }

    #[test]
    fn f64_index_works() {
        let mut idx = HnswIndex::<f64>::new(2, small_cfg()).unwrap();
        for i in 0..100u64 {
            let a = i as f64 * 0.05;
            idx.insert(&ep("/x"), &[a.cos(), a.sin()], i).unwrap();
        }
        let hits = idx.query(&ep("/x"), &[1.0, 0.0], 3).unwrap();
        assert_eq!(hits.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
