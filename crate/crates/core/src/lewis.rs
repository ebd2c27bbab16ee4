//! Implicit regularized l_p Lewis weights.
//!
//! The weights tau(x) = sigma(T^{1/2-1/p} Phi''(x)^{-1/2} A) + n/m are the
//! fixed point of a contracting refinement. We store, per refinement level
//! j, a small sketched matrix P^(j) = R W^{1/2-1/p} Phi''^{-1/2} A M_j^{-1}
//! from which the leverage score of any edge row is recovered as a sketched
//! norm, so a per-edge weight query replays the k-level recursion without
//! ever holding an m-sized vector.
//!
//! The barrier is phi(x) = -log(x) - log(u - x), so
//! phi''(x) = 1/x^2 + 1/(u-x)^2 (both terms positive).

use crate::error::{Error, Result};
use crate::linalg::{build_sparsifier, sketch_project, JLMatrix};
use crate::passes::PassRunner;
use crate::prng;
use crate::stream::EdgeRecord;

/// Second derivative of the log barrier for [0, u].
#[inline]
pub fn phi2(x: f64, u: f64) -> f64 {
    let a = 1.0 / (x * x) + 1.0 / ((u - x) * (u - x));
    // Appendix-B guard: phi'' >= 2/u^2 whenever 0 < x < u.
    debug_assert!(x <= 0.0 || x >= u || a >= 2.0 / (u * u) * (1.0 - 1e-12));
    a
}

/// First derivative of the log barrier for [0, u].
#[inline]
pub fn phi1(x: f64, u: f64) -> f64 {
    -1.0 / x + 1.0 / (u - x)
}

#[derive(Debug, Clone, Copy)]
pub struct LewisParams {
    /// Exponent p = 1 - 1/(4 log(4m/n)) in (0, 1).
    pub p: f64,
    /// Multiplicative target accuracy for tau.
    pub eps_tau: f64,
    /// Refinement depth.
    pub k: usize,
    /// Leverage-score sketch accuracy (<= eps_tau / 10 nominally).
    pub eps_sigma: f64,
    /// Regularization n/m.
    pub n_over_m: f64,
}

impl LewisParams {
    pub fn derive(n: usize, m: usize, eps_tau: f64, eps_sigma: f64) -> Self {
        let (nf, mf) = (n as f64, m as f64);
        let p = 1.0 - 1.0 / (4.0 * (4.0 * mf / nf).ln());
        let contraction = (1.0 - p / 2.0).abs();
        let k = ((mf / nf) * (2.0 / eps_tau))
            .ln()
            .max(1.0)
            / (1.0 / contraction).ln();
        LewisParams {
            p,
            eps_tau,
            k: k.ceil().max(1.0) as usize,
            eps_sigma,
            n_over_m: nf / mf,
        }
    }

    /// Legal range for final weights, with e^{+-eps_tau} slack.
    pub fn range(&self) -> (f64, f64) {
        (
            self.n_over_m * (-self.eps_tau).exp(),
            (1.0 + self.n_over_m) * self.eps_tau.exp(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct SketchLevel {
    /// P^(j), rows x vertex-count; column of the grounded vertex is zero.
    pub p_mat: Vec<Vec<f64>>,
    pub jl_seed: u64,
}

/// Immutable stack of k sketch levels bound to one IPM iterate.
#[derive(Debug, Clone)]
pub struct SketchStack {
    pub levels: Vec<SketchLevel>,
    pub params: LewisParams,
    /// Iteration id these weights describe.
    pub x_binding: usize,
    /// Strict mode surfaces out-of-range weights; production clamps + counts.
    pub strict: bool,
}

impl SketchStack {
    /// Persistent words held by the stack (the P matrices).
    pub fn words(&self) -> i64 {
        self.levels
            .iter()
            .map(|l| l.p_mat.iter().map(|r| r.len() as i64).sum::<i64>())
            .sum()
    }

    /// Sketched leverage norm ||P^(j) (chi_head - chi_tail)||^2.
    #[inline]
    fn sketch_norm(&self, j: usize, tail: usize, head: usize) -> f64 {
        self.levels[j]
            .p_mat
            .iter()
            .map(|row| {
                let d = row[head] - row[tail];
                d * d
            })
            .sum()
    }

    /// Replays the k-level recursion for one edge.
    ///
    /// w_0 = 1;
    /// w_j = (w_{j-1}^{2/p-1} (||P^(j)(chi_h - chi_t)||^2 phi''^-1
    ///        w_{j-1}^{1-2/p} + n/m))^{p/2}.
    pub fn query_tau(&self, edge: &EdgeRecord, x_e: f64) -> Result<f64> {
        if !(x_e > 0.0 && x_e < edge.capacity) {
            return Err(Error::Centrality {
                edge: edge.id,
                msg: format!("x = {x_e} outside (0, {})", edge.capacity),
            });
        }
        let f2 = phi2(x_e, edge.capacity);
        let w = self.query_tau_partial(edge, f2, self.levels.len());
        let (lo, hi) = self.params.range();
        if w < lo || w > hi {
            if self.strict {
                return Err(Error::WeightRange {
                    edge: edge.id,
                    value: w,
                    lo,
                    hi,
                });
            }
            return Ok(w.clamp(lo, hi));
        }
        Ok(w)
    }

    /// The recursion through the first `depth` levels (used during builds,
    /// where level j needs the weights of the partial stack of depth j-1).
    pub fn query_tau_partial(&self, edge: &EdgeRecord, phi2_e: f64, depth: usize) -> f64 {
        let p = self.params.p;
        let mut w: f64 = 1.0;
        for j in 0..depth {
            let sigma = self.sketch_norm(j, edge.tail, edge.head) / phi2_e * w.powf(1.0 - 2.0 / p);
            w = (w.powf(2.0 / p - 1.0) * (sigma + self.params.n_over_m)).powf(p / 2.0);
        }
        w
    }
}

/// Sketch-level knobs for the build (sparsifier accuracy and JL size live in
/// the IPM config; this keeps lewis independent of it).
#[derive(Debug, Clone, Copy)]
pub struct TauBuildConfig {
    pub jl_rows: usize,
    pub spar_epsilon: f64,
    pub spar_c: f64,
    pub spar_exact: bool,
    pub solver_tol: f64,
    pub strict: bool,
}

/// Builds the k-level sketch stack for the iterate given by `x_query`.
///
/// Per level: one pass builds a sparsifier M_j of the Gram matrix
/// A^T Phi''^{-1/2} (W^{(j-1)})^{1-2/p} Phi''^{-1/2} A, one pass sketches
/// P^(j) against it. Seeds are derived per level from `seed` so a rebuild
/// with the same seed is bit-identical.
pub fn build_tau<R: PassRunner>(
    runner: &mut R,
    x_query: &mut dyn FnMut(&EdgeRecord) -> Result<f64>,
    params: LewisParams,
    cfg: TauBuildConfig,
    seed: u64,
    x_binding: usize,
) -> Result<SketchStack> {
    let meters = runner.meters();
    let mut stack = SketchStack {
        levels: Vec::with_capacity(params.k),
        params,
        x_binding,
        strict: cfg.strict,
    };
    let p = params.p;
    for j in 0..params.k {
        let depth = j;
        // Row weight d_e = w^{(j-1)}_e^{1/2 - 1/p} phi''^{-1/2}; the Gram
        // weight is d_e^2.
        let stack_ref = &stack;
        let mut row_weight = |e: &EdgeRecord| -> Result<f64> {
            let x = x_query(e)?;
            if !(x > 0.0 && x < e.capacity) {
                return Err(Error::Centrality {
                    edge: e.id,
                    msg: format!("x = {x} outside (0, {})", e.capacity),
                });
            }
            let f2 = phi2(x, e.capacity);
            let w = stack_ref.query_tau_partial(e, f2, depth);
            Ok(w.powf(0.5 - 1.0 / p) / f2.sqrt())
        };
        let spar_seed = prng::derive_seed(seed, 2 * j as u64);
        let m_j = build_sparsifier(
            runner,
            &mut |e| row_weight(e).map(|d| d * d),
            cfg.spar_epsilon,
            spar_seed,
            cfg.spar_c,
            cfg.spar_exact,
        )?;
        meters.account(m_j.words())?;
        let jl_seed = prng::derive_seed(seed, 2 * j as u64 + 1);
        let jl = JLMatrix::new(cfg.jl_rows, jl_seed);
        let p_mat = sketch_project(&jl, runner, &mut row_weight, &m_j, cfg.solver_tol, &meters)?;
        meters.account(-m_j.words())?;
        stack.levels.push(SketchLevel { p_mat, jl_seed });
    }
    Ok(stack)
}

pub mod oracle {
    //! Dense fixed-point Lewis weights, used only as a test oracle.
    use super::*;
    use crate::dense::{leverage_scores, weighted_incidence};

    /// Damped fixed-point iteration of tau = sigma(T^{1/2-1/p} B') + n/m
    /// with B' = Phi''^{-1/2} A, run densely to 1e-12.
    pub fn dense_lewis_fixed_point(
        n: usize,
        edges: &[EdgeRecord],
        x: &[f64],
        p: f64,
        n_over_m: f64,
    ) -> Vec<f64> {
        let m = edges.len();
        let mut tau: Vec<f64> = vec![1.0; m];
        for _ in 0..10_000 {
            let d: Vec<f64> = edges
                .iter()
                .zip(&tau)
                .enumerate()
                .map(|(i, (e, &t))| t.powf(0.5 - 1.0 / p) / phi2(x[i], e.capacity).sqrt())
                .collect();
            let sigma = leverage_scores(&weighted_incidence(n, edges, &d));
            let mut delta: f64 = 0.0;
            for i in 0..m {
                let next = 0.5 * tau[i] + 0.5 * (sigma[i] + n_over_m);
                delta = delta.max((next - tau[i]).abs());
                tau[i] = next;
            }
            if delta < 1e-12 {
                break;
            }
        }
        tau
    }

    /// Dense sketch-free version of the k-step refinement (for the
    /// contraction property test).
    pub fn dense_refinement(
        n: usize,
        edges: &[EdgeRecord],
        x: &[f64],
        params: &LewisParams,
        k: usize,
    ) -> Vec<f64> {
        let m = edges.len();
        let p = params.p;
        let mut w: Vec<f64> = vec![1.0; m];
        for _ in 0..k {
            let d: Vec<f64> = edges
                .iter()
                .zip(&w)
                .enumerate()
                .map(|(i, (e, &t))| t.powf(0.5 - 1.0 / p) / phi2(x[i], e.capacity).sqrt())
                .collect();
            let sigma = leverage_scores(&weighted_incidence(n, edges, &d));
            for i in 0..m {
                w[i] = (w[i].powf(2.0 / p - 1.0) * (sigma[i] + params.n_over_m)).powf(p / 2.0);
            }
        }
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{EdgeSource, GraphHeader, MemorySource};

    fn mem_graph(n: usize, edges: Vec<EdgeRecord>) -> MemorySource {
        let header = GraphHeader {
            n,
            m: edges.len(),
            demand: vec![0; n],
            w: 8,
        };
        MemorySource::new(header, edges)
    }

    fn edge(id: usize, tail: usize, head: usize, cap: f64) -> EdgeRecord {
        EdgeRecord {
            id,
            tail,
            head,
            cost: 0.0,
            capacity: cap,
        }
    }

    fn build_cfg(jl_rows: usize) -> TauBuildConfig {
        TauBuildConfig {
            jl_rows,
            spar_epsilon: 0.1,
            spar_c: 16.0,
            spar_exact: true,
            solver_tol: 1e-12,
            strict: false,
        }
    }

    #[test]
    fn phi2_guard_and_sign() {
        // phi'' = 1/x^2 + 1/(u-x)^2: positive, and at x = u/2 equals 8/u^2.
        let u = 6.0;
        assert!((phi2(3.0, u) - 8.0 / 36.0).abs() < 1e-15);
        assert!(phi2(1.0, u) >= 2.0 / (u * u));
        assert!((phi1(3.0, u)).abs() < 1e-15); // centered at u/2
    }

    #[test]
    fn params_in_range() {
        let p = LewisParams::derive(8, 32, 0.25, 0.025);
        assert!(p.p > 0.0 && p.p < 1.0);
        assert!(p.k >= 1 && p.k < 40);
        assert!((p.n_over_m - 0.25).abs() < 1e-15);
    }

    #[test]
    fn k_zero_stack_returns_one() {
        let params = LewisParams::derive(2, 2, 0.25, 0.025);
        let stack = SketchStack {
            levels: vec![],
            params,
            x_binding: 0,
            strict: false,
        };
        let e = edge(0, 0, 1, 4.0);
        let w = stack.query_tau_partial(&e, phi2(2.0, 4.0), 0);
        assert_eq!(w, 1.0);
    }

    #[test]
    fn single_edge_matches_fixed_point() {
        // One edge between two vertices: sigma = 1 exactly, so the fixed
        // point is tau = 1 + n/m = 1 + 2/1... regularization n/m with n=2,
        // m=1 gives n/m = 2; range clamp keeps tau <= (1+2)e^eps. Use the
        // oracle as truth.
        let edges = vec![edge(0, 0, 1, 4.0)];
        let x = vec![2.0];
        let params = LewisParams::derive(2, 1, 0.25, 0.025);
        let oracle = oracle::dense_lewis_fixed_point(2, &edges, &x, params.p, params.n_over_m);
        let mut g = mem_graph(2, edges.clone());
        let stack = build_tau(
            &mut crate::passes::StreamRunner::new(&mut g),
            &mut |_| Ok(2.0),
            params,
            build_cfg(512),
            7,
            0,
        )
        .unwrap();
        let got = stack.query_tau(&edges[0], 2.0).unwrap();
        assert!(
            (got.ln() - oracle[0].ln()).abs() < params.eps_tau,
            "got {got}, oracle {}",
            oracle[0]
        );
    }

    #[test]
    fn path_graph_matches_dense_fixed_point() {
        // P_3 with x = u/2 everywhere.
        let edges = vec![edge(0, 0, 1, 4.0), edge(1, 1, 2, 6.0)];
        let x: Vec<f64> = edges.iter().map(|e| e.capacity / 2.0).collect();
        let params = LewisParams::derive(3, 2, 0.25, 0.025);
        let oracle = oracle::dense_lewis_fixed_point(3, &edges, &x, params.p, params.n_over_m);
        let mut g = mem_graph(3, edges.clone());
        let stack = build_tau(
            &mut crate::passes::StreamRunner::new(&mut g),
            &mut |e| Ok(e.capacity / 2.0),
            params,
            build_cfg(1024),
            3,
            0,
        )
        .unwrap();
        for (e, &t_exact) in edges.iter().zip(&oracle) {
            let got = stack.query_tau(e, e.capacity / 2.0).unwrap();
            assert!(
                (got.ln() - t_exact.ln()).abs() < params.eps_tau,
                "edge {}: got {got}, oracle {t_exact}",
                e.id
            );
        }
    }

    #[test]
    fn square_case_weight_sum() {
        // Cycle C_4: m = n = 4, rank n-1 = 3. Sum of regularized weights
        // should be close to rank + n * (n/m) = 3 + 4 = 7 (within e^{+-eps}
        // after full refinement; the refinement returns near-fixed-point).
        let edges = vec![
            edge(0, 0, 1, 4.0),
            edge(1, 1, 2, 4.0),
            edge(2, 2, 3, 4.0),
            edge(3, 3, 0, 4.0),
        ];
        let params = LewisParams::derive(4, 4, 0.25, 0.025);
        let mut g = mem_graph(4, edges.clone());
        let stack = build_tau(
            &mut crate::passes::StreamRunner::new(&mut g),
            &mut |e| Ok(e.capacity / 2.0),
            params,
            build_cfg(1024),
            5,
            0,
        )
        .unwrap();
        let total: f64 = edges
            .iter()
            .map(|e| stack.query_tau(e, 2.0).unwrap())
            .sum();
        let expected = 3.0 + 4.0 * params.n_over_m;
        assert!(
            (total.ln() - expected.ln()).abs() < params.eps_tau,
            "sum {total} vs {expected}"
        );
    }

    #[test]
    fn symmetric_k4_equal_weights() {
        let edges = vec![
            edge(0, 0, 1, 4.0),
            edge(1, 0, 2, 4.0),
            edge(2, 0, 3, 4.0),
            edge(3, 1, 2, 4.0),
            edge(4, 1, 3, 4.0),
            edge(5, 2, 3, 4.0),
        ];
        let params = LewisParams::derive(4, 6, 0.25, 0.025);
        let mut g = mem_graph(4, edges.clone());
        let stack = build_tau(
            &mut crate::passes::StreamRunner::new(&mut g),
            &mut |e| Ok(e.capacity / 2.0),
            params,
            build_cfg(256),
            5,
            0,
        )
        .unwrap();
        let taus: Vec<f64> = edges
            .iter()
            .map(|e| stack.query_tau(e, 2.0).unwrap())
            .collect();
        let (lo, hi) = taus
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &t| (l.min(t), h.max(t)));
        assert!(
            (hi.ln() - lo.ln()).abs() <= params.eps_tau,
            "spread too large: {taus:?}"
        );
    }

    #[test]
    fn parallel_edges_equal_exactly() {
        let e0 = edge(0, 0, 1, 4.0);
        let e1 = edge(1, 0, 1, 4.0);
        let params = LewisParams::derive(2, 2, 0.25, 0.025);
        let mut g = mem_graph(2, vec![e0, e1]);
        let stack = build_tau(&mut crate::passes::StreamRunner::new(&mut g), &mut |_| Ok(2.0), params, build_cfg(64), 9, 0).unwrap();
        // Identical (tail, head, x, u) means identical recursion inputs.
        assert_eq!(
            stack.query_tau(&e0, 2.0).unwrap(),
            stack.query_tau(&e1, 2.0).unwrap()
        );
    }

    #[test]
    fn determinism_same_seed() {
        let edges = vec![edge(0, 0, 1, 4.0), edge(1, 1, 2, 6.0), edge(2, 0, 2, 2.0)];
        let params = LewisParams::derive(3, 3, 0.25, 0.025);
        let mut g = mem_graph(3, edges.clone());
        let a = build_tau(&mut crate::passes::StreamRunner::new(&mut g), &mut |e| Ok(e.capacity / 2.0), params, build_cfg(32), 11, 0)
            .unwrap();
        let b = build_tau(&mut crate::passes::StreamRunner::new(&mut g), &mut |e| Ok(e.capacity / 2.0), params, build_cfg(32), 11, 0)
            .unwrap();
        for e in &edges {
            let (x, u) = (e.capacity / 2.0, e.capacity);
            let _ = u;
            assert_eq!(a.query_tau(e, x).unwrap(), b.query_tau(e, x).unwrap());
        }
    }

    #[test]
    fn pass_count_is_two_per_level() {
        let edges = vec![edge(0, 0, 1, 4.0), edge(1, 1, 2, 6.0)];
        let params = LewisParams::derive(3, 2, 0.25, 0.025);
        let mut g = mem_graph(3, edges);
        build_tau(&mut crate::passes::StreamRunner::new(&mut g), &mut |e| Ok(e.capacity / 2.0), params, build_cfg(8), 1, 0).unwrap();
        assert_eq!(g.meters().snapshot().passes, 2 * params.k);
    }

    #[test]
    fn refinement_contracts_log_error() {
        // Dense sketch-free refinement: log-error to the fixed point shrinks
        // by roughly |1 - p/2| per level.
        let edges = vec![
            edge(0, 0, 1, 4.0),
            edge(1, 1, 2, 6.0),
            edge(2, 2, 3, 2.0),
            edge(3, 3, 0, 8.0),
            edge(4, 0, 2, 3.0),
        ];
        let x: Vec<f64> = edges.iter().map(|e| e.capacity / 2.0).collect();
        let params = LewisParams::derive(4, 5, 0.25, 0.025);
        let exact = oracle::dense_lewis_fixed_point(4, &edges, &x, params.p, params.n_over_m);
        let err_at = |k: usize| -> f64 {
            let w = oracle::dense_refinement(4, &edges, &x, &params, k);
            w.iter()
                .zip(&exact)
                .map(|(a, b)| (a.ln() - b.ln()).abs())
                .fold(0.0f64, f64::max)
        };
        let contraction = (1.0 - params.p / 2.0).abs();
        let (e1, e3) = (err_at(1), err_at(3));
        // Two extra levels should shrink error by ~contraction^2 (slack 2x).
        assert!(
            e3 <= e1 * contraction * contraction * 2.0 + 1e-12,
            "e1 {e1}, e3 {e3}"
        );
    }
}
