//! Command-line surface: solve a min-cost flow instance from an edge-stream
//! file, query per-edge flows out of a saved run transcript, and benchmark
//! pass/space/communication scaling over generated instances.
//!
//! Exit codes: 0 success, 1 usage, 2 infeasible, 3 nonconverged, 4 unknown
//! edge. Reports are deterministic plain-text key-value lines; identical
//! config and seed produce identical report bytes.

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowstream::comm::{exact_flow_protocol, JointRunner, ProtocolOutcome};
use flowstream::corpus::{generate, CorpusSpec};
use flowstream::ipm::{
    centrality_probe, solve_rounded, IpmConfig, Transcript,
};
use flowstream::lifecycle::{oracle_on_edges, AuxSource};
use flowstream::passes::StreamRunner;
use flowstream::stream::{collect_edges, open_stream, EdgeRecord, EdgeSource};
use flowstream::Error;

#[derive(Parser)]
#[command(name = "flowstream", version, about = "semi-streaming min-cost flow")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance and write a run transcript.
    Solve(SolveArgs),
    /// Query the flow on one edge out of a saved transcript.
    Query(QueryArgs),
    /// Benchmark pass/space scaling over generated instances.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    /// File-backed edge stream, implicit iterates (replay on query).
    Stream,
    /// Dense per-edge mirror of the same arithmetic (fast, verification).
    Mirror,
    /// Two-party joint simulation with wire metering.
    Comm,
    /// Exact combinatorial baseline (no IPM).
    Oracle,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Relaxed,
    Strict,
}

#[derive(Clone, Copy, ValueEnum)]
enum Verify {
    Sample,
    Full,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    graph: String,
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    #[arg(long, value_enum, default_value_t = ProfileArg::Relaxed)]
    profile: ProfileArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Mirror)]
    mode: Mode,
    /// Isolation-perturbation attempts for exact rounding.
    #[arg(long, default_value_t = 3)]
    trials: usize,
    /// Post-solve centrality verification.
    #[arg(long, value_enum)]
    verify: Option<Verify>,
    /// Transcript output path.
    #[arg(long)]
    out: Option<String>,
    /// Force ln(mu_init/mu_target) (benchmark knob).
    #[arg(long)]
    mu_ratio: Option<f64>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    transcript: String,
    #[arg(long)]
    graph: String,
    /// Edge spec "tail head cost capacity" (1-indexed, as in the file).
    #[arg(long)]
    edge: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated instance sizes (vertex counts).
    #[arg(long, default_value = "16,32,64")]
    sizes: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Stream)]
    mode: Mode,
    #[arg(long, default_value_t = 0.25)]
    epsilon: f64,
    /// Fixed ln(mu_init/mu_target) so iteration counts scale only with the
    /// step size.
    #[arg(long, default_value_t = 6.0)]
    mu_ratio: f64,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) => 2,
        Error::NonConvergence(_) | Error::SolverNonConvergence { .. } => 3,
        _ => 1,
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap prints its own message; keep exit code 1 for usage.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().ok();
            std::process::exit(if is_help { 0 } else { 1 });
        }
    };
    let result = match cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Query(a) => cmd_query(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn build_config(
    profile: ProfileArg,
    epsilon: f64,
    seed: u64,
    mode: Mode,
    mu_ratio: Option<f64>,
) -> IpmConfig {
    let mut cfg = match profile {
        ProfileArg::Relaxed => IpmConfig::relaxed(epsilon, seed),
        ProfileArg::Strict => IpmConfig::strict(epsilon, seed),
    };
    cfg.cache_x = matches!(mode, Mode::Mirror);
    cfg.mu_ratio_override = mu_ratio;
    cfg
}

fn cmd_solve(a: SolveArgs) -> flowstream::Result<()> {
    println!(
        "command=solve graph={} epsilon={} profile={} seed={} mode={} trials={}",
        a.graph,
        a.epsilon,
        match a.profile {
            ProfileArg::Relaxed => "relaxed",
            ProfileArg::Strict => "strict",
        },
        a.seed,
        match a.mode {
            Mode::Stream => "stream",
            Mode::Mirror => "mirror",
            Mode::Comm => "comm",
            Mode::Oracle => "oracle",
        },
        a.trials
    );
    let mut src = open_stream(&a.graph)?;
    let header = src.header().clone();
    println!("n={} m={} w={}", header.n, header.m, header.w);

    if matches!(a.mode, Mode::Oracle) {
        let edges = collect_edges(&mut src)?;
        return match oracle_on_edges(&header, &edges, None) {
            Ok(flow) => {
                println!("oracle_cost={}", flow.cost_num);
                Ok(())
            }
            Err(cut) => Err(Error::Infeasible(format!(
                "no feasible flow; deficient cut {:?}",
                cut.cut
            ))),
        };
    }

    let cfg = build_config(a.profile, a.epsilon, a.seed, a.mode, a.mu_ratio);

    let (transcript, report) = if matches!(a.mode, Mode::Comm) {
        let edges = collect_edges(&mut src)?;
        let split = edges.len() / 2;
        let mut jr = JointRunner::new(header.clone(), edges, split, a.seed);
        match exact_flow_protocol(&mut jr, &cfg, a.trials)? {
            ProtocolOutcome::Success {
                trial,
                cost_num,
                transcript,
                ..
            } => {
                println!("trial={trial}");
                println!("rounded_cost={cost_num}");
                println!("wire_bits_total={}", jr.wire.bits_total);
                println!("wire_rounds={}", jr.wire.bits_per_round.len());
                let m = flowstream::passes::PassRunner::meters(&jr).snapshot();
                println!("records={}", transcript.records.len());
                println!("passes={} peak_words={}", m.passes, m.peak_words);
                (transcript, None)
            }
            ProtocolOutcome::Infeasible { max_star_flow, cut } => {
                return Err(Error::Infeasible(format!(
                    "star flow {max_star_flow:.3} still routes demand; deficient near {cut:?}"
                )));
            }
            ProtocolOutcome::Failed { trials, last_reason } => {
                return Err(Error::NonConvergence(format!(
                    "rounding failed after {trials} trials: {last_reason}"
                )));
            }
        }
    } else {
        let out = solve_rounded(&mut src, &cfg, a.trials)?;
        println!("trial={}", out.trial);
        println!("fractional_cost={:.6}", out.report.fractional_cost);
        println!("rounded_cost={}", out.report.rounded.cost_num);
        println!("max_round_delta={:.3e}", out.report.rounded.max_delta);
        println!("max_star_flow={:.3e}", out.report.max_star_flow);
        (out.transcript, Some(out.report))
    };
    if report.is_some() {
        println!("records={}", transcript.records.len());
        let meters = src.meters().snapshot();
        println!("passes={} peak_words={}", meters.passes, meters.peak_words);
    }

    if let Some(v) = a.verify {
        let aux = transcript.aux.clone();
        let mut aux_src = AuxSource {
            base: &mut src,
            aux: &aux,
            perturbation: transcript.perturbation,
        };
        let mut runner = StreamRunner::new(&mut aux_src);
        let sample_ids: Vec<usize>;
        let sample = match v {
            Verify::Full => None,
            Verify::Sample => {
                sample_ids = (0..aux.m_aug().min(16)).collect();
                Some(sample_ids.as_slice())
            }
        };
        let probe = centrality_probe(&mut runner, &transcript, sample)?;
        println!("verify_max_abs_v={:.6}", probe.max_abs_v);
        if let Some(f) = probe.feas_residual {
            println!("verify_feas_residual={f:.3e}");
        }
        println!(
            "verify_centered={}",
            probe.max_abs_v <= transcript.params.eps_c
        );
    }

    if let Some(out_path) = &a.out {
        transcript.save(out_path)?;
        println!("transcript={out_path}");
    }
    Ok(())
}

fn cmd_query(a: QueryArgs) -> flowstream::Result<()> {
    let parts: Vec<&str> = a.edge.split_whitespace().collect();
    if parts.len() != 4 {
        return Err(Error::Validation(
            "edge spec must be \"tail head cost capacity\"".into(),
        ));
    }
    let nums: Vec<i64> = parts
        .iter()
        .map(|s| {
            s.parse::<i64>()
                .map_err(|_| Error::Validation(format!("not an integer: {s}")))
        })
        .collect::<flowstream::Result<_>>()?;
    let transcript = Transcript::load(&a.transcript)?;
    let mut src = open_stream(&a.graph)?;
    // Locate the edge by content in the original stream (ids are assigned
    // by file order, which the transcript's replay depends on).
    let mut found: Option<EdgeRecord> = None;
    src.for_each_edge(&mut |e| {
        if found.is_none()
            && e.tail + 1 == nums[0] as usize
            && e.head + 1 == nums[1] as usize
            && e.cost == nums[2] as f64
            && e.capacity == nums[3] as f64
        {
            found = Some(*e);
        }
        Ok(())
    })?;
    let Some(mut e) = found else {
        eprintln!("error: no edge matching \"{}\" in {}", a.edge, a.graph);
        std::process::exit(4);
    };
    if let Some(p) = &transcript.perturbation {
        e.cost = p.perturbed_cost(e.id, e.cost);
    }
    let t = transcript.records.len();
    let x = transcript.query_x(t, &e)?;
    println!("edge_id={}", e.id);
    println!("flow={x:.9}");
    println!("capacity={}", nums[3]);
    Ok(())
}

fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.max(1.0).ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

fn cmd_bench(a: BenchArgs) -> flowstream::Result<()> {
    let sizes: Vec<usize> = a
        .sizes
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Validation(format!("bad size: {s}")))
        })
        .collect::<flowstream::Result<_>>()?;
    let comm = matches!(a.mode, Mode::Comm);
    println!(
        "command=bench sizes={} seed={} mode={} epsilon={} mu_ratio={}",
        a.sizes,
        a.seed,
        if comm { "comm" } else { "stream" },
        a.epsilon,
        a.mu_ratio
    );
    if comm {
        println!("# n m passes peak_words records bits_total wall_ms");
    } else {
        println!("# n m passes peak_words records wall_ms");
    }
    let mut ns = Vec::new();
    let mut passes_v = Vec::new();
    let mut words_v = Vec::new();
    for &n in &sizes {
        let spec = CorpusSpec {
            n,
            m: 3 * n,
            w: 8,
            seed: a.seed,
        };
        let mut cfg = build_config(ProfileArg::Relaxed, a.epsilon, a.seed, a.mode, Some(a.mu_ratio));
        cfg.cache_x = false;
        let start = std::time::Instant::now();
        let row = (|| -> flowstream::Result<(usize, i64, usize, u64)> {
            if comm {
                let g = generate(spec);
                let header = g.header().clone();
                let edges = g.edges().to_vec();
                let split = edges.len() / 2;
                let mut jr = JointRunner::new(header, edges, split, a.seed);
                let tr = flowstream::comm::run_joint_ipm(&mut jr, &cfg)?;
                let m = flowstream::passes::PassRunner::meters(&jr).snapshot();
                Ok((m.passes, m.peak_words, tr.records.len(), jr.wire.bits_total))
            } else {
                let mut g = generate(spec);
                let aux = flowstream::lifecycle::build_initial_point(
                    &mut StreamRunner::new(&mut g),
                    cfg.epsilon,
                )?;
                let mut src = AuxSource {
                    base: &mut g,
                    aux: &aux,
                    perturbation: None,
                };
                let tr = flowstream::ipm::run_ipm(
                    &mut StreamRunner::new(&mut src),
                    aux.clone(),
                    &cfg,
                )?;
                let m = g.meters().snapshot();
                Ok((m.passes, m.peak_words, tr.records.len(), 0))
            }
        })();
        let wall_ms = start.elapsed().as_millis();
        match row {
            Ok((passes, peak_words, records, bits)) => {
                if comm {
                    println!(
                        "{n} {} {passes} {peak_words} {records} {bits} {wall_ms}",
                        spec.m
                    );
                } else {
                    println!("{n} {} {passes} {peak_words} {records} {wall_ms}", spec.m);
                }
                ns.push(n as f64);
                passes_v.push(passes as f64);
                words_v.push(peak_words as f64);
            }
            Err(e) => println!("{n} {} failed \"{e}\"", spec.m),
        }
    }
    if ns.len() >= 2 {
        println!("slope_passes_vs_n={:.3}", log_slope(&ns, &passes_v));
        println!("slope_words_vs_n={:.3}", log_slope(&ns, &words_v));
    }
    Ok(())
}
