//! Hierarchical navigable small-world graph for approximate maximum inner
//! product search over unit vectors.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{dot, IndexError, Neighbor, NeighborIndex};
use crate::util::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 keeps twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct Hnsw {
    params: HnswParams,
    dim: usize,
    data: Vec<f64>,
    ids: Vec<usize>,
    /// links[node][layer]
    links: Vec<Vec<Vec<u32>>>,
    entry: Option<u32>,
    top: usize,
    rng: ChaCha8Rng,
    level_mult: f64,
}

impl Hnsw {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        let m = params.m.max(2);
        Self {
            rng: seeded_rng(params.seed),
            level_mult: 1.0 / (m as f64).ln(),
            params: HnswParams { m, ..params },
            dim,
            data: Vec::new(),
            ids: Vec::new(),
            links: Vec::new(),
            entry: None,
            top: 0,
        }
    }

    fn vec(&self, node: u32) -> &[f64] {
        let i = node as usize * self.dim;
        &self.data[i..i + self.dim]
    }

    fn sim(&self, q: &[f64], node: u32) -> f64 {
        dot(q, self.vec(node))
    }

    fn cap(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn greedy(&self, q: &[f64], mut cur: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &n in &self.links[cur.node as usize][layer] {
                let s = Scored {
                    sim: self.sim(q, n),
                    node: n,
                };
                if s > cur {
                    cur = s;
                    improved = true;
                }
            }
            if !improved {
                return cur;
            }
        }
    }

    /// Best-first search on one layer; returns up to `ef` results, best first.
    fn search_layer(&self, q: &[f64], entry: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited: HashSet<u32> = entry.iter().map(|s| s.node).collect();
        let mut frontier: BinaryHeap<Scored> = entry.iter().copied().collect();
        let mut best: BinaryHeap<Reverse<Scored>> = entry.iter().copied().map(Reverse).collect();
        while let Some(c) = frontier.pop() {
            let worst = best.peek().map(|r| r.0).expect("non-empty");
            if c < worst && best.len() >= ef {
                break;
            }
            for &n in &self.links[c.node as usize][layer] {
                if !visited.insert(n) {
                    continue;
                }
                let s = Scored {
                    sim: self.sim(q, n),
                    node: n,
                };
                let worst = best.peek().map(|r| r.0).expect("non-empty");
                if best.len() < ef || s > worst {
                    frontier.push(s);
                    best.push(Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Neighbor selection heuristic: keep a candidate only if it is closer to
    /// the query than to every neighbor already kept, then top up with the
    /// best of the rest.
    fn select(&self, candidates: &[Scored], cap: usize) -> Vec<u32> {
        let mut kept: Vec<Scored> = Vec::with_capacity(cap);
        let mut skipped = Vec::new();
        for &c in candidates {
            if kept.len() >= cap {
                break;
            }
            let v = self.vec(c.node);
            if kept.iter().all(|k| dot(v, self.vec(k.node)) < c.sim) {
                kept.push(c);
            } else {
                skipped.push(c);
            }
        }
        for c in skipped {
            if kept.len() >= cap {
                break;
            }
            kept.push(c);
        }
        kept.into_iter().map(|s| s.node).collect()
    }

    fn prune(&mut self, node: u32, layer: usize) {
        let cap = self.cap(layer);
        if self.links[node as usize][layer].len() <= cap {
            return;
        }
        let base = self.vec(node).to_vec();
        let mut cands: Vec<Scored> = self.links[node as usize][layer]
            .iter()
            .map(|&n| Scored {
                sim: self.sim(&base, n),
                node: n,
            })
            .collect();
        cands.sort_by(|a, b| b.cmp(a));
        let chosen = self.select(&cands, cap);
        self.links[node as usize][layer] = chosen;
    }
}

impl NeighborIndex for Hnsw {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn insert(&mut self, id: usize, unit: &[f64]) -> Result<(), IndexError> {
        if unit.len() != self.dim {
            return Err(IndexError::Dimension {
                expected: self.dim,
                found: unit.len(),
            });
        }
        let node = self.ids.len() as u32;
        let u: f64 = self.rng.gen_range(f64::EPSILON..1.0);
        let level = (-u.ln() * self.level_mult).floor() as usize;
        self.data.extend_from_slice(unit);
        self.ids.push(id);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            self.top = level;
            return Ok(());
        };
        let mut cur = Scored {
            sim: self.sim(unit, entry),
            node: entry,
        };
        for layer in (level + 1..=self.top).rev() {
            cur = self.greedy(unit, cur, layer);
        }
        let mut eps = vec![cur];
        for layer in (0..=level.min(self.top)).rev() {
            let found = self.search_layer(unit, &eps, self.params.ef_construction, layer);
            let chosen = self.select(&found, self.params.m);
            for &n in &chosen {
                self.links[n as usize][layer].push(node);
                self.prune(n, layer);
            }
            self.links[node as usize][layer] = chosen;
            eps = found;
        }
        if level > self.top {
            self.top = level;
            self.entry = Some(node);
        }
        Ok(())
    }

    fn nearest(&self, query: &[f64], exclude: Option<usize>) -> Option<Neighbor> {
        let entry = self.entry?;
        if query.len() != self.dim {
            return None;
        }
        let mut cur = Scored {
            sim: self.sim(query, entry),
            node: entry,
        };
        for layer in (1..=self.top).rev() {
            cur = self.greedy(query, cur, layer);
        }
        let ef = self.params.ef_search.max(2);
        self.search_layer(query, &[cur], ef, 0)
            .into_iter()
            .map(|s| Neighbor {
                id: self.ids[s.node as usize],
                similarity: s.sim,
            })
            .filter(|n| Some(n.id) != exclude)
            .max_by(|a, b| {
                a.similarity
                    .total_cmp(&b.similarity)
                    .then_with(|| b.id.cmp(&a.id))
            })
    }
}
