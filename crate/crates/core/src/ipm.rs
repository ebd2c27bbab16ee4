//! The interior-point driver.
//!
//! Each short step, run against a stream of the augmented graph, performs:
//! build the Lewis-weight sketch stack for the current implicit iterate,
//! bucket the centralities into the gradient table, sparsify
//! H = A^T (T-bar Phi'')^{-1} A grounded at the star vertex, assemble the
//! two right-hand sides in one pass, solve for delta_y and delta_c, and
//! append an immutable IterationRecord. The iterate x is never stored:
//! any x^t_e is recovered by replaying the per-record recursion
//!   x^l = x^{l-1} + phi''^{-1/2} g - (tau-bar phi'')^{-1} (A(dy+dc))_e
//! from x^0 = u_e/2. A dense mirror mode caches x per edge and updates it
//! with the exact same per-record arithmetic, so mirror and streaming
//! iterates agree bit for bit.

use crate::error::{Error, Result};
use crate::gradient::{build_bucket_table, BucketTable, PotentialParams};
use crate::lewis::{build_tau, phi1, phi2, LewisParams, SketchLevel, SketchStack, TauBuildConfig};
use crate::lifecycle::{AuxGraph, FlowReport, Perturbation};
use crate::linalg::{build_sparsifier, laplacian_solve};
use crate::passes::{self, PassRunner, WireCodec};
use crate::prng;
use crate::stream::EdgeRecord;
use std::cell::Cell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Constants exactly as derived from C = 100; usable only for formula
    /// wiring checks (the step size is far too small to run to completion).
    Strict,
    /// Desk-scale constants: same formula structure, aggressive step size.
    Relaxed,
}

#[derive(Debug, Clone)]
pub struct IpmConfig {
    pub profile: Profile,
    /// Target flow accuracy (drives mu_target).
    pub epsilon: f64,
    pub seed: u64,
    pub solver_tol: f64,
    /// JL constant c_JL (strict rows = ceil(c_JL eps_sigma^-2 log n)).
    pub jl_c: f64,
    /// Sparsifier oversampling constant.
    pub spar_c: f64,
    /// Force keep-every-edge sparsifiers (exact H).
    pub spar_exact: bool,
    /// Error on range/centrality violations instead of clamping.
    pub strict_checks: bool,
    pub mu_target_override: Option<f64>,
    /// Force ln(mu_init / mu_target); used by scaling benchmarks so the
    /// iteration count depends on n only through the step size r.
    pub mu_ratio_override: Option<f64>,
    /// Max extra centering rounds between mu decreases.
    pub max_center_rounds: usize,
    /// Centering continues while measured max |v| > frac * eps_c.
    pub center_threshold_frac: f64,
    /// Hard cap on total records (safety; None = schedule bound only).
    pub max_iters: Option<usize>,
    /// Dense mirror mode: cache x per edge (exempt from the word meter,
    /// used for verification and fast desk-scale solves).
    pub cache_x: bool,
    /// Relaxed-profile tunables (ignored by the strict profile).
    pub relax_eps_c: f64,
    pub relax_lambda: f64,
    pub relax_gamma: f64,
    /// r = relax_r_scale * gamma / sqrt(n).
    pub relax_r_scale: f64,
    /// tau-norm weight constant (strict uses C/p).
    pub relax_c_norm: f64,
}

impl IpmConfig {
    pub fn relaxed(epsilon: f64, seed: u64) -> Self {
        IpmConfig {
            profile: Profile::Relaxed,
            epsilon,
            seed,
            solver_tol: 1e-10,
            jl_c: 8.0,
            spar_c: 16.0,
            spar_exact: false,
            strict_checks: false,
            mu_target_override: None,
            mu_ratio_override: None,
            max_center_rounds: 12,
            center_threshold_frac: 0.8,
            max_iters: None,
            cache_x: false,
            relax_eps_c: 0.25,
            relax_lambda: 10.0,
            relax_gamma: 0.20,
            relax_r_scale: 1.0,
            relax_c_norm: 0.2,
        }
    }

    pub fn strict(epsilon: f64, seed: u64) -> Self {
        IpmConfig {
            profile: Profile::Strict,
            strict_checks: true,
            ..IpmConfig::relaxed(epsilon, seed)
        }
    }
}

/// All scalar constants of one run, derived from (profile, instance shape).
#[derive(Debug, Clone)]
pub struct DerivedParams {
    /// Augmented vertex / edge counts.
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    /// Centering accuracy (the epsilon of "epsilon-centered").
    pub eps_c: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub eps_prime: f64,
    /// Step size: mu^{t+1} = (1 - r) mu^t.
    pub r: f64,
    pub mu_init: f64,
    pub mu_target: f64,
    pub eps_tau: f64,
    pub eps_sigma: f64,
    pub jl_rows: usize,
    /// Lewis refinement depth.
    pub k: usize,
    /// tau-norm weight constant (PotentialParams::c).
    pub c_norm: f64,
    /// Scheduled mu-decrease count ceil(ln(mu_init/mu_target)/-ln(1-r)).
    pub mu_steps: usize,
}

impl DerivedParams {
    pub fn derive(cfg: &IpmConfig, aux: &AuxGraph) -> DerivedParams {
        let n = aux.n_aug();
        let m = aux.m_aug();
        let (nf, mf) = (n as f64, m as f64);
        let w = aux.base.w as f64;
        let alpha = 1.0 / (4.0 * (4.0 * mf / nf).ln());
        let p_lewis = 1.0 - alpha;
        let (eps_c, lambda, gamma, r, mu_init, eps_tau, eps_sigma, jl_rows, k_over, c_norm);
        match cfg.profile {
            Profile::Strict => {
                let c = 100.0;
                eps_c = alpha / c;
                lambda = c * (c * mf / (eps_c * eps_c)).ln() / eps_c;
                gamma = eps_c / (c * lambda);
                r = eps_c * eps_c * gamma / nf.sqrt();
                mu_init = 100.0 * mf * mf * w * w * w / cfg.epsilon;
                eps_tau = eps_c;
                eps_sigma = eps_tau / 10.0;
                jl_rows = (cfg.jl_c * eps_sigma.powi(-2) * nf.ln()).ceil() as usize;
                k_over = None;
                c_norm = c / p_lewis;
            }
            Profile::Relaxed => {
                eps_c = cfg.relax_eps_c;
                lambda = cfg.relax_lambda;
                gamma = cfg.relax_gamma;
                r = cfg.relax_r_scale * gamma / (aux.base.n as f64).sqrt();
                c_norm = cfg.relax_c_norm;
                // Largest |c_e| u_e over augmented edges; star capacities are
                // 2 (1 + |excess|).
                let star_u = aux
                    .excess
                    .iter()
                    .fold(0.0f64, |a, &e| a.max(e.abs()));
                let max_cu = aux.max_cost_cap.max(aux.star_cost * 2.0 * (1.0 + star_u));
                // Keeps the initial point (x = u/2, s = c) eps_c-centered:
                // |v| <= c_e u_e m / (2 sqrt(2) mu n) <= eps_c, with slack 2.
                mu_init = 2.0 * mf * max_cu / (2.0 * 2f64.sqrt() * nf * eps_c);
                eps_tau = 0.25;
                eps_sigma = 0.025;
                jl_rows = 16;
                k_over = Some(4);
            }
        }
        let mut mu_target = cfg
            .mu_target_override
            .unwrap_or(cfg.epsilon / (w * (aux.base.n as f64).powi(2)));
        if let Some(ratio) = cfg.mu_ratio_override {
            mu_target = mu_init * (-ratio).exp();
        }
        let lewis = {
            let mut l = LewisParams::derive(n, m, eps_tau, eps_sigma);
            if let Some(k) = k_over {
                l.k = k;
            }
            l
        };
        let mu_steps = ((mu_init / mu_target).ln() / -(1.0 - r).ln()).ceil().max(0.0) as usize;
        DerivedParams {
            n,
            m,
            alpha,
            eps_c,
            lambda,
            gamma,
            eps_prime: gamma / 60.0,
            r,
            mu_init,
            mu_target,
            eps_tau,
            eps_sigma,
            jl_rows,
            k: lewis.k,
            c_norm,
            mu_steps,
        }
    }

    pub fn lewis_params(&self) -> LewisParams {
        let mut l = LewisParams::derive(self.n, self.m, self.eps_tau, self.eps_sigma);
        l.k = self.k;
        l
    }

    pub fn potential_params(&self) -> PotentialParams {
        let lw = self.lewis_params();
        let (tau_lo, tau_hi) = lw.range();
        PotentialParams {
            lambda: self.lambda,
            gamma: self.gamma,
            eps_prime: self.eps_prime,
            c: self.c_norm,
            n: self.n,
            m: self.m,
            tau_lo,
            tau_hi,
        }
    }
}

/// One short step: everything needed to advance any edge from iterate
/// l-1 to l, immutable once appended.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// mu^l (already decreased when this is a mu step).
    pub mu: f64,
    /// Potentials y^{l-1} the step was computed against (y[z] = 0).
    pub y_prev: Vec<f64>,
    pub delta_y: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub tau_stack: SketchStack,
    pub g_table: BucketTable,
    pub spar_seed: u64,
    /// Largest |v_e| measured by the bucket pass (pre-step, at mu^l).
    pub max_abs_v: f64,
    /// Whether this record decreased mu (false = centering round).
    pub decreased_mu: bool,
}

/// Per-edge evaluation of one record's step.
#[derive(Debug, Clone, Copy)]
pub struct StepEval {
    pub x_next: f64,
    pub v: f64,
    pub tau: f64,
    pub g: f64,
    pub s: f64,
}

impl IterationRecord {
    /// Potentials y^l = y^{l-1} - mu^l delta_y.
    pub fn y_after(&self) -> Vec<f64> {
        self.y_prev
            .iter()
            .zip(&self.delta_y)
            .map(|(&y, &d)| y - self.mu * d)
            .collect()
    }

    /// Advances one edge from its iterate-(l-1) flow through this record.
    pub fn advance_edge(&self, e: &EdgeRecord, x: f64, strict: bool) -> Result<StepEval> {
        let tau = self.tau_stack.query_tau(e, x)?;
        let f2 = phi2(x, e.capacity);
        let f1 = phi1(x, e.capacity);
        let s = e.cost - (self.y_prev[e.head] - self.y_prev[e.tail]);
        let v = (s + self.mu * tau * f1) / (self.mu * tau * f2.sqrt());
        let g = self.g_table.query_g(e.id, v, tau)?;
        let d = (self.delta_y[e.head] + self.delta_c[e.head])
            - (self.delta_y[e.tail] + self.delta_c[e.tail]);
        let mut x_next = x + g / f2.sqrt() - d / (tau * f2);
        if x_next <= 0.0 || x_next >= e.capacity {
            if strict {
                return Err(Error::Centrality {
                    edge: e.id,
                    msg: format!("step left (0, u): x = {x_next}, u = {}", e.capacity),
                });
            }
            let margin = e.capacity * 1e-9;
            x_next = x_next.clamp(margin, e.capacity - margin);
        }
        Ok(StepEval {
            x_next,
            v,
            tau,
            g,
            s,
        })
    }

    /// Persistent words held by this record (the sketch stack is accounted
    /// separately at build time).
    pub fn words(&self) -> i64 {
        3 * self.y_prev.len() as i64 + self.g_table.words() + 4
    }
}

/// Append-only run transcript; answers implicit x/s queries at any iterate.
#[derive(Debug)]
pub struct Transcript {
    pub aux: AuxGraph,
    pub params: DerivedParams,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    /// Cost perturbation the run was computed against, if any; queries must
    /// apply it to edge costs before replay.
    pub perturbation: Option<Perturbation>,
    /// Per-record-level evaluation counter for query-cost assertions.
    pub query_evals: Cell<u64>,
}

impl Transcript {
    pub fn new(aux: AuxGraph, params: DerivedParams, seed: u64) -> Self {
        Transcript {
            aux,
            params,
            seed,
            records: Vec::new(),
            perturbation: None,
            query_evals: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// mu of iterate t (t = 0 is the initial point).
    pub fn mu_at(&self, t: usize) -> f64 {
        if t == 0 {
            self.params.mu_init
        } else {
            self.records[t - 1].mu
        }
    }

    /// Potentials y^t (owned; y^0 = 0).
    pub fn y_at(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            vec![0.0; self.aux.n_aug()]
        } else {
            self.records[t - 1].y_after()
        }
    }

    /// Slack s^t_e = c_e - (y^t_head - y^t_tail).
    pub fn query_s(&self, t: usize, e: &EdgeRecord) -> Result<f64> {
        if t > self.records.len() {
            return Err(Error::Validation(format!(
                "iterate {t} past transcript length {}",
                self.records.len()
            )));
        }
        let y = self.y_at(t);
        Ok(e.cost - (y[e.head] - y[e.tail]))
    }

    /// Flow x^t_e by replaying records 0..t from x^0 = u_e/2.
    pub fn query_x(&self, t: usize, e: &EdgeRecord) -> Result<f64> {
        self.query_x_trace(t, e).map(|(x, _)| x)
    }

    /// Like query_x but also returns the per-level evaluations of the last
    /// record applied (None when t = 0), for mirror comparisons.
    pub fn query_x_trace(&self, t: usize, e: &EdgeRecord) -> Result<(f64, Option<StepEval>)> {
        if t > self.records.len() {
            return Err(Error::Validation(format!(
                "iterate {t} past transcript length {}",
                self.records.len()
            )));
        }
        let mut x = e.capacity / 2.0;
        let mut last = None;
        for rec in &self.records[..t] {
            let ev = rec.advance_edge(e, x, false)?;
            self.query_evals.set(self.query_evals.get() + 1);
            x = ev.x_next;
            last = Some(ev);
        }
        Ok((x, last))
    }
}

fn replay_x(records: &[IterationRecord], e: &EdgeRecord, strict: bool) -> Result<f64> {
    let mut x = e.capacity / 2.0;
    for rec in records {
        x = rec.advance_edge(e, x, strict)?.x_next;
    }
    Ok(x)
}

/// Executes one short step against the stream and appends its record.
///
/// `mu_new` is the mu the step centers against (equal to the previous mu
/// for a pure centering round). `x_cache`, when present, replaces chain
/// replay for reads and is advanced through the new record afterwards.
fn short_step<R: PassRunner>(
    runner: &mut R,
    transcript: &mut Transcript,
    cfg: &IpmConfig,
    x_cache: &mut Option<Vec<f64>>,
    mu_new: f64,
    decreased_mu: bool,
) -> Result<()> {
    let params = transcript.params.clone();
    let iter_idx = transcript.records.len();
    let n = params.n;
    let z = transcript.aux.star_vertex;
    let strict = cfg.strict_checks;
    let meters = runner.meters();

    let records = std::mem::take(&mut transcript.records);
    let result = (|| -> Result<IterationRecord> {
        let cache = x_cache.as_ref();
        let x_of = |e: &EdgeRecord| -> Result<f64> {
            match cache {
                Some(c) => Ok(c[e.id]),
                None => replay_x(&records, e, strict),
            }
        };
        let y_cur = match records.last() {
            Some(r) => r.y_after(),
            None => vec![0.0; n],
        };

        // Lewis-weight sketch stack for x^{l-1}. The seed is fixed across
        // iterations so the per-level sketch noise is a stable bias rather
        // than fresh noise every step.
        let tau_seed = prng::derive_seed(cfg.seed, 1);
        let tau_cfg = TauBuildConfig {
            jl_rows: params.jl_rows,
            spar_epsilon: params.eps_tau / 2.0,
            spar_c: cfg.spar_c,
            spar_exact: cfg.spar_exact,
            solver_tol: cfg.solver_tol,
            strict,
        };
        let tau_stack = build_tau(
            runner,
            &mut |e| x_of(e),
            params.lewis_params(),
            tau_cfg,
            tau_seed,
            iter_idx,
        )?;

        // Bucketed gradient table from (v, tau) at the NEW mu.
        let g_table = build_bucket_table(
            runner,
            &mut |e| {
                let x = x_of(e)?;
                let tau = tau_stack.query_tau(e, x)?;
                let f2 = phi2(x, e.capacity);
                let s = e.cost - (y_cur[e.head] - y_cur[e.tail]);
                let v = (s + mu_new * tau * phi1(x, e.capacity)) / (mu_new * tau * f2.sqrt());
                Ok((v, tau))
            },
            params.potential_params(),
            iter_idx,
            strict,
        )?;

        // H ~ A^T (T-bar Phi'')^{-1} A, grounded at the star vertex.
        let spar_seed = prng::derive_seed(cfg.seed, 2);
        let h = build_sparsifier(
            runner,
            &mut |e| {
                let x = x_of(e)?;
                let tau = tau_stack.query_tau(e, x)?;
                Ok(1.0 / (tau * phi2(x, e.capacity)))
            },
            params.gamma.min(0.5),
            spar_seed,
            cfg.spar_c,
            cfg.spar_exact,
        )?
        .grounded_at(z);
        meters.account(h.words())?;

        // Both right-hand sides in one pass:
        // row 0 = A^T Phi''^{-1/2} g, row 1 = A^T x - b.
        let mut rhs = runner.run_pass(vec![vec![0.0; n]; 2], &mut |rhs, e| {
            let x = x_of(e)?;
            let tau = tau_stack.query_tau(e, x)?;
            let f2 = phi2(x, e.capacity);
            let s = e.cost - (y_cur[e.head] - y_cur[e.tail]);
            let v = (s + mu_new * tau * phi1(x, e.capacity)) / (mu_new * tau * f2.sqrt());
            let g = g_table.query_g(e.id, v, tau)?;
            let gv = g / f2.sqrt();
            rhs[0][e.head] += gv;
            rhs[0][e.tail] -= gv;
            rhs[1][e.head] += x;
            rhs[1][e.tail] -= x;
            Ok(())
        })?;
        let b = runner.header().b();
        for (r1, bv) in rhs[1].iter_mut().zip(&b) {
            *r1 -= bv;
        }

        let delta_y = laplacian_solve(&h, &rhs[0], cfg.solver_tol)?;
        let delta_c = laplacian_solve(&h, &rhs[1], cfg.solver_tol)?;
        meters.account(-h.words())?;

        let rec = IterationRecord {
            mu: mu_new,
            y_prev: y_cur,
            delta_y,
            delta_c,
            tau_stack,
            g_table,
            spar_seed,
            max_abs_v: 0.0,
            decreased_mu,
        };
        Ok(rec)
    })();
    transcript.records = records;
    let mut rec = result?;
    rec.max_abs_v = rec.g_table.max_abs_v;
    meters.account(rec.words())?;

    // Advance the dense mirror cache through the new record (one pass).
    if let Some(cache) = x_cache.as_mut() {
        runner.run_pass(Vec::<f64>::new(), &mut |_, e| {
            cache[e.id] = rec.advance_edge(e, cache[e.id], strict)?.x_next;
            Ok(())
        })?;
    }
    transcript.records.push(rec);
    Ok(())
}

/// Diagnostic centrality / feasibility probe of the current iterate.
#[derive(Debug, Clone, Copy)]
pub struct ProbeReport {
    pub max_abs_v: f64,
    /// sqrt(r^T H^{-1} r) for r = A^T x - b; None in sampled mode.
    pub feas_residual: Option<f64>,
}

/// Probes the final iterate. `sample` restricts |v| evaluation to the given
/// edge ids (still one pass over the stream, but no feasibility solve).
pub fn centrality_probe<R: PassRunner>(
    runner: &mut R,
    transcript: &Transcript,
    sample: Option<&[usize]>,
) -> Result<ProbeReport> {
    let t = transcript.records.len();
    let mu = transcript.mu_at(t);
    let y = transcript.y_at(t);
    let n = transcript.aux.n_aug();
    let z = transcript.aux.star_vertex;
    let stack = transcript.records.last().map(|r| &r.tau_stack);
    let tau_of = |e: &EdgeRecord, x: f64| -> Result<f64> {
        match stack {
            Some(s) => s.query_tau(e, x),
            None => Ok(1.0), // pre-loop probe: unit weights
        }
    };
    let sample_set: Option<std::collections::HashSet<usize>> =
        sample.map(|s| s.iter().copied().collect());
    let full = sample_set.is_none();
    let state = runner.run_pass((0f64, vec![0.0; n]), &mut |st, e| {
        if let Some(set) = &sample_set {
            if !set.contains(&e.id) {
                return Ok(());
            }
        }
        let x = transcript.query_x(transcript.records.len(), e)?;
        let tau = tau_of(e, x)?;
        let f2 = phi2(x, e.capacity);
        let s = e.cost - (y[e.head] - y[e.tail]);
        let v = (s + mu * tau * phi1(x, e.capacity)) / (mu * tau * f2.sqrt());
        st.0 = st.0.max(v.abs());
        if full {
            st.1[e.head] += x;
            st.1[e.tail] -= x;
        }
        Ok(())
    })?;
    let (max_abs_v, mut feas) = state;
    if !full {
        return Ok(ProbeReport {
            max_abs_v,
            feas_residual: None,
        });
    }
    let b = runner.header().b();
    for (f, bv) in feas.iter_mut().zip(&b) {
        *f -= bv;
    }
    // Residual in the H^{-1} norm: rebuild H for the current iterate.
    let cfg_gamma = transcript.params.gamma.min(0.5);
    let h = build_sparsifier(
        runner,
        &mut |e| {
            let x = transcript.query_x(transcript.records.len(), e)?;
            let tau = tau_of(e, x)?;
            Ok(1.0 / (tau * phi2(x, e.capacity)))
        },
        cfg_gamma,
        prng::derive_seed(transcript.seed, 2),
        16.0,
        false,
    )?
    .grounded_at(z);
    let sol = laplacian_solve(&h, &feas, 1e-10)?;
    let res: f64 = feas.iter().zip(&sol).map(|(a, b)| a * b).sum::<f64>().max(0.0);
    Ok(ProbeReport {
        max_abs_v,
        feas_residual: Some(res.sqrt()),
    })
}

/// Runs the mu schedule from mu_init to mu_target with centering rounds
/// decided only from record contents (so any runner that yields the same
/// stream produces the identical transcript).
pub fn run_ipm<R: PassRunner>(runner: &mut R, aux: AuxGraph, cfg: &IpmConfig) -> Result<Transcript> {
    let params = DerivedParams::derive(cfg, &aux);
    let mut transcript = Transcript::new(aux, params.clone(), cfg.seed);
    let mut x_cache = if cfg.cache_x {
        let m = transcript.aux.m_aug();
        let cache = runner.run_pass(vec![0.0f64; m], &mut |c, e| {
            c[e.id] = e.capacity / 2.0;
            Ok(())
        })?;
        Some(cache)
    } else {
        None
    };

    let mut mu = params.mu_init;
    let threshold = cfg.center_threshold_frac * params.eps_c;
    for _step in 0..params.mu_steps {
        if let Some(cap) = cfg.max_iters {
            if transcript.records.len() >= cap {
                return Err(Error::NonConvergence(format!(
                    "iteration cap {cap} reached at mu = {mu:.3e} (target {:.3e})",
                    params.mu_target
                )));
            }
        }
        mu *= 1.0 - params.r;
        short_step(runner, &mut transcript, cfg, &mut x_cache, mu, true)?;
        let mut rounds = 0;
        while transcript.records.last().unwrap().max_abs_v > threshold {
            if rounds >= cfg.max_center_rounds {
                return Err(Error::NonConvergence(format!(
                    "centering stalled at mu = {mu:.3e}: measured max |v| = {:.4} > {threshold:.4} after {rounds} rounds",
                    transcript.records.last().unwrap().max_abs_v
                )));
            }
            short_step(runner, &mut transcript, cfg, &mut x_cache, mu, false)?;
            rounds += 1;
        }
    }
    Ok(transcript)
}

/// A completed solve: the transcript, the extraction report, and the cost
/// perturbation that made the optimum unique (None when rounding was run
/// against the raw costs).
#[derive(Debug)]
pub struct SolveOutcome {
    pub transcript: Transcript,
    pub report: FlowReport,
    pub perturbation: Option<Perturbation>,
    pub trial: usize,
}

/// Full pipeline on a base stream: initial point, IPM on the augmented
/// perturbed stream, extraction, nearest-integer rounding. Each trial draws
/// a fresh cost perturbation (tie-breaking is the only randomness that can
/// make rounding fail); the first trial whose rounded flow verifies wins.
pub fn solve_rounded(
    src: &mut dyn crate::stream::EdgeSource,
    cfg: &IpmConfig,
    trials: usize,
) -> Result<SolveOutcome> {
    let aux = {
        let mut runner = crate::passes::StreamRunner::new(src);
        crate::lifecycle::build_initial_point(&mut runner, cfg.epsilon)?
    };
    let mut last_err: Option<String> = None;
    for trial in 0..trials.max(1) {
        let perturbation = if trials == 0 {
            None
        } else {
            Some(Perturbation {
                seed: prng::derive_seed(cfg.seed, 100 + trial as u64),
                m: aux.base.m,
                w: aux.base.w,
            })
        };
        let mut aux_src = crate::lifecycle::AuxSource {
            base: src,
            aux: &aux,
            perturbation,
        };
        let mut runner = crate::passes::StreamRunner::new(&mut aux_src);
        let transcript = run_ipm(&mut runner, aux.clone(), cfg)?;
        let t = transcript.records.len();
        let report = crate::lifecycle::extract_flow(&mut runner, &aux, &mut |e| {
            transcript.query_x(t, e)
        })?;
        if report.star_infeasible {
            return Err(Error::Infeasible(format!(
                "star edge still carries {:.3} units of flow at mu = {:.3e}",
                report.max_star_flow,
                transcript.mu_at(t)
            )));
        }
        if report.rounded.valid() && report.rounded.max_delta < 0.5 {
            let mut transcript = transcript;
            transcript.perturbation = perturbation;
            return Ok(SolveOutcome {
                transcript,
                report,
                perturbation,
                trial,
            });
        }
        last_err = Some(format!(
            "trial {trial}: rounding failed (max delta {:.3}, conserved {}, in range {})",
            report.rounded.max_delta, report.rounded.conserved, report.rounded.within_capacity
        ));
    }
    Err(Error::NonConvergence(format!(
        "no perturbation produced a verifiable rounding after {} trials: {}",
        trials.max(1),
        last_err.unwrap_or_default()
    )))
}

// --- transcript serialization (versioned binary container) ---

const TRANSCRIPT_MAGIC: &[u8; 8] = b"FLOWTR01";

fn put_usize(out: &mut Vec<u8>, v: usize) {
    passes::put_u64(out, v as u64);
}

fn get_usize(buf: &mut &[u8]) -> Result<usize> {
    Ok(passes::get_u64(buf)? as usize)
}

fn encode_header(out: &mut Vec<u8>, h: &crate::stream::GraphHeader) {
    put_usize(out, h.n);
    put_usize(out, h.m);
    passes::put_i64(out, h.w);
    put_usize(out, h.demand.len());
    for &d in &h.demand {
        passes::put_i64(out, d);
    }
}

fn decode_header(buf: &mut &[u8]) -> Result<crate::stream::GraphHeader> {
    let n = get_usize(buf)?;
    let m = get_usize(buf)?;
    let w = passes::get_i64(buf)?;
    let len = get_usize(buf)?;
    let demand = (0..len).map(|_| passes::get_i64(buf)).collect::<Result<_>>()?;
    Ok(crate::stream::GraphHeader { n, m, demand, w })
}

impl Transcript {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TRANSCRIPT_MAGIC);
        encode_header(&mut out, &self.aux.base);
        self.aux.excess.encode(&mut out);
        passes::put_f64(&mut out, self.aux.star_cost);
        passes::put_f64(&mut out, self.aux.mu_init);
        passes::put_f64(&mut out, self.aux.max_cost_cap);
        // Derived params.
        let p = &self.params;
        put_usize(&mut out, p.n);
        put_usize(&mut out, p.m);
        for v in [
            p.alpha, p.eps_c, p.lambda, p.gamma, p.eps_prime, p.r, p.mu_init, p.mu_target,
            p.eps_tau, p.eps_sigma, p.c_norm,
        ] {
            passes::put_f64(&mut out, v);
        }
        put_usize(&mut out, p.jl_rows);
        put_usize(&mut out, p.k);
        put_usize(&mut out, p.mu_steps);
        passes::put_u64(&mut out, self.seed);
        put_usize(&mut out, self.records.len());
        for rec in &self.records {
            passes::put_f64(&mut out, rec.mu);
            rec.y_prev.encode(&mut out);
            rec.delta_y.encode(&mut out);
            rec.delta_c.encode(&mut out);
            passes::put_u64(&mut out, rec.spar_seed);
            passes::put_f64(&mut out, rec.max_abs_v);
            passes::put_u64(&mut out, rec.decreased_mu as u64);
            // Sketch stack.
            put_usize(&mut out, rec.tau_stack.levels.len());
            for level in &rec.tau_stack.levels {
                passes::put_u64(&mut out, level.jl_seed);
                level.p_mat.encode(&mut out);
            }
            put_usize(&mut out, rec.tau_stack.x_binding);
            passes::put_u64(&mut out, rec.tau_stack.strict as u64);
            // Bucket table.
            put_usize(&mut out, rec.g_table.groups.len());
            for (&(i, j), grp) in &rec.g_table.groups {
                passes::put_i64(&mut out, i);
                passes::put_i64(&mut out, j);
                put_usize(&mut out, grp.count);
                passes::put_f64(&mut out, grp.v_bar);
                passes::put_f64(&mut out, grp.tau_bar);
                passes::put_f64(&mut out, grp.u_bar);
            }
            put_usize(&mut out, rec.g_table.binding);
            passes::put_f64(&mut out, rec.g_table.max_abs_v);
            put_usize(&mut out, rec.g_table.tau_violations);
        }
        match &self.perturbation {
            None => passes::put_u64(&mut out, 0),
            Some(p) => {
                passes::put_u64(&mut out, 1);
                passes::put_u64(&mut out, p.seed);
                put_usize(&mut out, p.m);
                passes::put_i64(&mut out, p.w);
            }
        }
        out
    }

    pub fn decode(data: &[u8]) -> Result<Transcript> {
        let mut buf = data;
        if buf.len() < 8 || &buf[..8] != TRANSCRIPT_MAGIC {
            return Err(Error::Validation("not a transcript file".into()));
        }
        buf = &buf[8..];
        let base = decode_header(&mut buf)?;
        let excess = Vec::<f64>::decode(&mut buf)?;
        let star_cost = passes::get_f64(&mut buf)?;
        let aux_mu_init = passes::get_f64(&mut buf)?;
        let max_cost_cap = passes::get_f64(&mut buf)?;
        let mut demand = base.demand.clone();
        demand.push(0);
        let header = crate::stream::GraphHeader {
            n: base.n + 1,
            m: base.m + 2 * base.n,
            demand,
            w: base.w.max(star_cost as i64),
        };
        let aux = AuxGraph {
            star_vertex: base.n,
            excess,
            star_cost,
            mu_init: aux_mu_init,
            max_cost_cap,
            base,
            header,
        };
        let n = get_usize(&mut buf)?;
        let m = get_usize(&mut buf)?;
        let mut scalars = [0.0; 11];
        for s in scalars.iter_mut() {
            *s = passes::get_f64(&mut buf)?;
        }
        let jl_rows = get_usize(&mut buf)?;
        let k = get_usize(&mut buf)?;
        let mu_steps = get_usize(&mut buf)?;
        let params = DerivedParams {
            n,
            m,
            alpha: scalars[0],
            eps_c: scalars[1],
            lambda: scalars[2],
            gamma: scalars[3],
            eps_prime: scalars[4],
            r: scalars[5],
            mu_init: scalars[6],
            mu_target: scalars[7],
            eps_tau: scalars[8],
            eps_sigma: scalars[9],
            c_norm: scalars[10],
            jl_rows,
            k,
            mu_steps,
        };
        let seed = passes::get_u64(&mut buf)?;
        let nrec = get_usize(&mut buf)?;
        let lewis = params.lewis_params();
        let pot = params.potential_params();
        let mut records = Vec::with_capacity(nrec);
        for _ in 0..nrec {
            let mu = passes::get_f64(&mut buf)?;
            let y_prev = Vec::<f64>::decode(&mut buf)?;
            let delta_y = Vec::<f64>::decode(&mut buf)?;
            let delta_c = Vec::<f64>::decode(&mut buf)?;
            let spar_seed = passes::get_u64(&mut buf)?;
            let max_abs_v = passes::get_f64(&mut buf)?;
            let decreased_mu = passes::get_u64(&mut buf)? != 0;
            let nlev = get_usize(&mut buf)?;
            let mut levels = Vec::with_capacity(nlev);
            for _ in 0..nlev {
                let jl_seed = passes::get_u64(&mut buf)?;
                let p_mat = Vec::<Vec<f64>>::decode(&mut buf)?;
                levels.push(SketchLevel { p_mat, jl_seed });
            }
            let x_binding = get_usize(&mut buf)?;
            let strict = passes::get_u64(&mut buf)? != 0;
            let tau_stack = SketchStack {
                levels,
                params: lewis,
                x_binding,
                strict,
            };
            let ngroups = get_usize(&mut buf)?;
            let mut groups = std::collections::BTreeMap::new();
            for _ in 0..ngroups {
                let i = passes::get_i64(&mut buf)?;
                let j = passes::get_i64(&mut buf)?;
                let count = get_usize(&mut buf)?;
                let v_bar = passes::get_f64(&mut buf)?;
                let tau_bar = passes::get_f64(&mut buf)?;
                let u_bar = passes::get_f64(&mut buf)?;
                groups.insert(
                    (i, j),
                    crate::gradient::Group {
                        count,
                        v_bar,
                        tau_bar,
                        u_bar,
                    },
                );
            }
            let binding = get_usize(&mut buf)?;
            let table_max_v = passes::get_f64(&mut buf)?;
            let tau_violations = get_usize(&mut buf)?;
            let g_table = BucketTable {
                groups,
                params: pot,
                binding,
                max_abs_v: table_max_v,
                tau_violations,
            };
            records.push(IterationRecord {
                mu,
                y_prev,
                delta_y,
                delta_c,
                tau_stack,
                g_table,
                spar_seed,
                max_abs_v,
                decreased_mu,
            });
        }
        let perturbation = if passes::get_u64(&mut buf)? != 0 {
            Some(Perturbation {
                seed: passes::get_u64(&mut buf)?,
                m: get_usize(&mut buf)?,
                w: passes::get_i64(&mut buf)?,
            })
        } else {
            None
        };
        Ok(Transcript {
            aux,
            params,
            seed,
            records,
            perturbation,
            query_evals: Cell::new(0),
        })
    }

    pub fn save(&self, path: &str) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &str) -> Result<Transcript> {
        let data = std::fs::read(path)?;
        Transcript::decode(&data)
    }
}
