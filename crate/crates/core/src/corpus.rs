//! Deterministic generation of random feasible test instances.
//!
//! Feasibility by construction: sample a connected random digraph, sample a
//! random integral flow within capacities, and read the demands off that
//! flow. The generator is a pure function of (n, m, w, seed).

use crate::prng;
use crate::stream::{EdgeRecord, GraphHeader, MemorySource};

#[derive(Debug, Clone, Copy)]
pub struct CorpusSpec {
    pub n: usize,
    pub m: usize,
    /// Costs and capacities drawn from [1, w].
    pub w: i64,
    pub seed: u64,
}

pub fn generate(spec: CorpusSpec) -> MemorySource {
    let CorpusSpec { n, m, w, seed } = spec;
    assert!(n >= 2 && m >= n - 1);
    let mut edges = Vec::with_capacity(m);
    let rnd = |a: u64, b: u64| prng::hash3(seed, a, b, 0);
    // Spanning-tree backbone for connectivity, random orientation.
    for v in 1..n {
        let parent = (rnd(v as u64, 40) % v as u64) as usize;
        let (tail, head) = if rnd(v as u64, 41) & 1 == 0 {
            (parent, v)
        } else {
            (v, parent)
        };
        edges.push((tail, head));
    }
    for i in (n - 1)..m {
        loop {
            let a = (rnd(i as u64, 42) % n as u64) as usize;
            let mut b = (rnd(i as u64 + 7919 * (a as u64 + 1), 43) % n as u64) as usize;
            if a == b {
                b = (b + 1) % n;
            }
            edges.push((a, b));
            break;
        }
    }
    let mut recs = Vec::with_capacity(m);
    let mut supply = vec![0i64; n];
    for (id, &(tail, head)) in edges.iter().enumerate() {
        let cap = 1 + (rnd(id as u64, 44) % w as u64) as i64;
        let cost = 1 + (rnd(id as u64, 45) % w as u64) as i64;
        // A feasible integral flow the demands are derived from.
        let f = (rnd(id as u64, 46) % (cap as u64 + 1)) as i64;
        supply[tail] += f;
        supply[head] -= f;
        recs.push(EdgeRecord {
            id,
            tail,
            head,
            cost: cost as f64,
            capacity: cap as f64,
        });
    }
    let header = GraphHeader {
        n,
        m,
        demand: supply,
        w,
    };
    MemorySource::new(header, recs)
}

/// Renders an instance in the graph file format (1-indexed vertices).
pub fn to_file_format(header: &GraphHeader, edges: &[EdgeRecord]) -> String {
    let mut out = format!("{} {}\n", header.n, header.m);
    for d in &header.demand {
        out.push_str(&format!("{d}\n"));
    }
    for e in edges {
        out.push_str(&format!(
            "{} {} {} {}\n",
            e.tail + 1,
            e.head + 1,
            e.cost as i64,
            e.capacity as i64
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifecycle::oracle_on_edges;
    use crate::stream::EdgeSource;

    #[test]
    fn generated_instances_are_feasible() {
        for seed in 0..30 {
            let spec = CorpusSpec {
                n: 4 + (seed as usize % 13),
                m: 20,
                w: 8,
                seed,
            };
            let g = generate(spec);
            assert_eq!(g.header().demand.iter().sum::<i64>(), 0);
            let flow = oracle_on_edges(g.header(), g.edges(), None);
            assert!(flow.is_ok(), "seed {seed} infeasible");
        }
    }

    #[test]
    fn file_format_round_trips() {
        use std::io::Write as _;
        let g = generate(CorpusSpec {
            n: 6,
            m: 12,
            w: 8,
            seed: 3,
        });
        let text = to_file_format(g.header(), g.edges());
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        let mut s = crate::stream::open_stream(f.path().to_str().unwrap()).unwrap();
        assert_eq!(s.header().n, 6);
        assert_eq!(s.header().demand, g.header().demand);
        let edges = crate::stream::collect_edges(&mut s).unwrap();
        assert_eq!(edges, g.edges());
    }
}
