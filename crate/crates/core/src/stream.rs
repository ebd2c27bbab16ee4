//! Replayable multi-pass edge streams with pass and word-space metering.
//!
//! A graph file is a text header line `n m`, then `n` demand lines, then `m`
//! edge lines `tail head cost capacity` (1-indexed vertices). Files may be
//! gzip-compressed; the magic bytes decide. Edge ids are assigned by file
//! order and are the only key other modules use for per-edge state.
//!
//! Demand sign convention: a positive file demand is a supply (net outflow).
//! With incidence rows (-1 at tail, +1 at head), `A^T x` at a vertex is
//! inflow minus outflow, so the internal right-hand side is `b = -demand`.
//! `GraphHeader::b` exposes the internal vector.

use crate::error::{Error, Result};
use std::cell::RefCell;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::rc::Rc;

/// One edge of the instance. Costs and capacities are integral in input
/// files but carried as floats so that decorators (cost perturbation,
/// auxiliary star edges) can substitute non-integer values on the fly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRecord {
    pub id: usize,
    pub tail: usize,
    pub head: usize,
    pub cost: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphHeader {
    pub n: usize,
    pub m: usize,
    /// File-order demands; positive means supply (net outflow).
    pub demand: Vec<i64>,
    /// Max absolute value over costs and capacities.
    pub w: i64,
}

impl GraphHeader {
    /// Internal right-hand side of `A^T x = b` (inflow minus outflow).
    pub fn b(&self) -> Vec<f64> {
        self.demand.iter().map(|&d| -(d as f64)).collect()
    }
}

/// Pass and word-space meters. Words count persistent stored 64-bit scalars;
/// O(polylog)-per-edge scratch is exempt by convention.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meters {
    pub passes: usize,
    pub current_words: i64,
    pub peak_words: i64,
}

/// Shared handle so decorators and consumers charge the same meters.
#[derive(Debug, Clone, Default)]
pub struct MeterHandle(Rc<RefCell<Meters>>);

impl MeterHandle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn snapshot(&self) -> Meters {
        self.0.borrow().clone()
    }

    /// A pass is charged on traversal start so aborted passes still count.
    pub fn charge_pass(&self) {
        self.0.borrow_mut().passes += 1;
    }

    pub fn account(&self, delta_words: i64) -> Result<()> {
        let mut m = self.0.borrow_mut();
        let next = m.current_words + delta_words;
        if next < 0 {
            return Err(Error::Accounting {
                current: m.current_words,
                delta: delta_words,
            });
        }
        m.current_words = next;
        m.peak_words = m.peak_words.max(next);
        Ok(())
    }
}

/// Anything that can be traversed edge-by-edge, one full pass at a time.
pub trait EdgeSource {
    fn header(&self) -> &GraphHeader;
    fn meters(&self) -> MeterHandle;
    /// Invokes the visitor once per edge in stable order; charges one pass.
    fn for_each_edge(&mut self, visitor: &mut dyn FnMut(&EdgeRecord) -> Result<()>) -> Result<()>;
}

/// File-backed stream; re-reads the file on every pass so no edge data is
/// retained between traversals.
#[derive(Debug)]
pub struct EdgeStream {
    path: String,
    header: GraphHeader,
    meters: MeterHandle,
}

fn open_reader(path: &str) -> Result<Box<dyn BufRead>> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 2];
    let got = f.read(&mut magic)?;
    let f = File::open(path)?;
    if got == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(flate2::read::GzDecoder::new(f))))
    } else {
        Ok(Box::new(BufReader::new(f)))
    }
}

struct LineParser<R> {
    lines: std::io::Lines<R>,
    path: String,
    lineno: usize,
}

impl<R: BufRead> LineParser<R> {
    fn new(reader: R, path: &str) -> Self {
        Self {
            lines: reader.lines(),
            path: path.to_string(),
            lineno: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line: self.lineno,
            msg: msg.into(),
        }
    }

    /// Next non-empty, non-comment line.
    fn next_line(&mut self) -> Result<String> {
        loop {
            self.lineno += 1;
            match self.lines.next() {
                None => return Err(self.err("unexpected end of file")),
                Some(line) => {
                    let line = line.map_err(Error::Io)?;
                    let t = line.trim();
                    if !t.is_empty() && !t.starts_with('#') {
                        return Ok(t.to_string());
                    }
                }
            }
        }
    }

    fn next_ints(&mut self, count: usize) -> Result<Vec<i64>> {
        let line = self.next_line()?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != count {
            return Err(self.err(format!("expected {count} fields, got {}", fields.len())));
        }
        fields
            .iter()
            .map(|s| {
                s.parse::<i64>()
                    .map_err(|_| self.err(format!("not an integer: {s:?}")))
            })
            .collect()
    }
}

fn parse_header(parser: &mut LineParser<impl BufRead>) -> Result<(usize, usize, Vec<i64>)> {
    let hdr = parser.next_ints(2)?;
    let (n, m) = (hdr[0], hdr[1]);
    if n < 1 || m < 0 {
        return Err(parser.err(format!("bad header n={n} m={m}")));
    }
    let mut demand = Vec::with_capacity(n as usize);
    for _ in 0..n {
        demand.push(parser.next_ints(1)?[0]);
    }
    Ok((n as usize, m as usize, demand))
}

fn parse_edge(parser: &mut LineParser<impl BufRead>, id: usize, n: usize) -> Result<EdgeRecord> {
    let f = parser.next_ints(4)?;
    let (tail, head, cost, cap) = (f[0], f[1], f[2], f[3]);
    if tail < 1 || tail as usize > n || head < 1 || head as usize > n {
        return Err(parser.err(format!("vertex out of range on edge {id}: {tail} {head}")));
    }
    if tail == head {
        return Err(parser.err(format!("self-loop on edge {id}")));
    }
    if cap < 1 {
        return Err(parser.err(format!("capacity {cap} < 1 on edge {id}")));
    }
    Ok(EdgeRecord {
        id,
        tail: (tail - 1) as usize,
        head: (head - 1) as usize,
        cost: cost as f64,
        capacity: cap as f64,
    })
}

/// Opens a graph file: validates the whole file once (not a metered pass),
/// loads the demand vector into accountable memory, and returns a
/// replayable stream.
pub fn open_stream(path: &str) -> Result<EdgeStream> {
    let mut parser = LineParser::new(open_reader(path)?, path);
    let (n, m, demand) = parse_header(&mut parser)?;
    if demand.iter().sum::<i64>() != 0 {
        return Err(Error::Validation(format!(
            "demands must sum to zero, got {}",
            demand.iter().sum::<i64>()
        )));
    }
    let mut w: i64 = 1;
    for id in 0..m {
        let e = parse_edge(&mut parser, id, n)?;
        w = w.max(e.cost.abs() as i64).max(e.capacity as i64);
    }
    let meters = MeterHandle::new();
    meters.account(n as i64)?; // demand vector is persistent state
    Ok(EdgeStream {
        path: path.to_string(),
        header: GraphHeader { n, m, demand, w },
        meters,
    })
}

impl EdgeSource for EdgeStream {
    fn header(&self) -> &GraphHeader {
        &self.header
    }

    fn meters(&self) -> MeterHandle {
        self.meters.clone()
    }

    fn for_each_edge(&mut self, visitor: &mut dyn FnMut(&EdgeRecord) -> Result<()>) -> Result<()> {
        self.meters.charge_pass();
        let mut parser = LineParser::new(open_reader(&self.path)?, &self.path);
        parse_header(&mut parser)?;
        for id in 0..self.header.m {
            let e = parse_edge(&mut parser, id, self.header.n)?;
            visitor(&e)?;
        }
        Ok(())
    }
}

/// In-memory stream with the same contract; used by the communication
/// parties (whose edge sets are local memory by definition) and by tests.
pub struct MemorySource {
    header: GraphHeader,
    edges: Vec<EdgeRecord>,
    meters: MeterHandle,
}

impl MemorySource {
    pub fn new(header: GraphHeader, edges: Vec<EdgeRecord>) -> Self {
        Self {
            header,
            edges,
            meters: MeterHandle::new(),
        }
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }
}

impl EdgeSource for MemorySource {
    fn header(&self) -> &GraphHeader {
        &self.header
    }

    fn meters(&self) -> MeterHandle {
        self.meters.clone()
    }

    fn for_each_edge(&mut self, visitor: &mut dyn FnMut(&EdgeRecord) -> Result<()>) -> Result<()> {
        self.meters.charge_pass();
        for e in &self.edges {
            visitor(e)?;
        }
        Ok(())
    }
}

/// Reads every edge of a source into memory (test/oracle convenience; does
/// not meter words because the result is not part of the streaming state).
pub fn collect_edges(src: &mut dyn EdgeSource) -> Result<Vec<EdgeRecord>> {
    let mut out = Vec::new();
    src.for_each_edge(&mut |e| {
        out.push(*e);
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const TOY: &str = "2 1\n3\n-3\n1 2 1 5\n";

    #[test]
    fn open_minimal_instance() {
        let f = write_file(TOY);
        let s = open_stream(f.path().to_str().unwrap()).unwrap();
        assert_eq!(s.header().n, 2);
        assert_eq!(s.header().m, 1);
        assert_eq!(s.header().w, 5);
        assert_eq!(s.header().demand, vec![3, -3]);
        assert_eq!(s.header().b(), vec![-3.0, 3.0]);
        assert_eq!(s.meters().snapshot().passes, 0);
        assert_eq!(s.meters().snapshot().current_words, 2);
    }

    #[test]
    fn demand_sum_violation() {
        let f = write_file("2 1\n3\n-2\n1 2 1 5\n");
        match open_stream(f.path().to_str().unwrap()) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_edge_line() {
        let f = write_file("2 1\n3\n-3\n1 2 x 5\n");
        match open_stream(f.path().to_str().unwrap()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn replay_determinism_and_pass_meter() {
        let f = write_file("4 4\n2\n-2\n1\n-1\n1 2 1 3\n2 3 -2 4\n3 4 5 2\n1 4 0 7\n");
        let mut s = open_stream(f.path().to_str().unwrap()).unwrap();
        let a = collect_edges(&mut s).unwrap();
        let b = collect_edges(&mut s).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!(a[1].cost, -2.0);
        assert_eq!(a[1].tail, 1);
        assert_eq!(a[1].head, 2);
        assert_eq!(s.meters().snapshot().passes, 2);
    }

    #[test]
    fn visitor_sum_matches_in_memory_load() {
        let f = write_file("4 4\n2\n-2\n1\n-1\n1 2 1 3\n2 3 -2 4\n3 4 5 2\n1 4 0 7\n");
        let mut s = open_stream(f.path().to_str().unwrap()).unwrap();
        let edges = collect_edges(&mut s).unwrap();
        let oracle_sum: f64 = edges.iter().map(|e| e.capacity).sum();
        let mut total = 0.0;
        s.for_each_edge(&mut |e| {
            total += e.capacity;
            Ok(())
        })
        .unwrap();
        assert_eq!(total, oracle_sum);
        assert_eq!(total, 16.0);
    }

    #[test]
    fn aborted_pass_still_charged() {
        let f = write_file(TOY);
        let mut s = open_stream(f.path().to_str().unwrap()).unwrap();
        let r = s.for_each_edge(&mut |_| Err(Error::Other("stop".into())));
        assert!(r.is_err());
        assert_eq!(s.meters().snapshot().passes, 1);
    }

    #[test]
    fn gzip_transparent() {
        let mut raw = Vec::new();
        {
            let mut enc =
                flate2::write::GzEncoder::new(&mut raw, flate2::Compression::default());
            enc.write_all(TOY.as_bytes()).unwrap();
            enc.finish().unwrap();
        }
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&raw).unwrap();
        let mut s = open_stream(f.path().to_str().unwrap()).unwrap();
        let edges = collect_edges(&mut s).unwrap();
        assert_eq!(edges.len(), 1);
        assert_eq!(edges[0].capacity, 5.0);
    }

    #[test]
    fn accounting_peak_and_negative() {
        let h = MeterHandle::new();
        h.account(10).unwrap();
        h.account(-10).unwrap();
        assert_eq!(h.snapshot().current_words, 0);
        assert_eq!(h.snapshot().peak_words, 10);
        h.account(5).unwrap();
        h.account(7).unwrap();
        assert_eq!(h.snapshot().peak_words, 12);
        assert!(h.account(-100).is_err());
    }
}
