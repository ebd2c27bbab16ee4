//! Two-party communication simulator.
//!
//! The edge set is split between party A and party B; every builder pass
//! becomes a joint pass: A folds its private edges into the serializable
//! pass state, ships the state across the wire in a framed message, B
//! continues the fold (appending the shared star edges last), and ships the
//! finished state back. Because every pass state round-trips through the
//! wire codec, a joint run with all edges at A is bit-identical to the
//! single-stream run. The wire meter counts exact post-serialization bits
//! per round and keeps the full frame dump for privacy scans; a SHA-256
//! chain over the frames fingerprints the protocol transcript.
//!
//! Frame layout: round id (u64) | payload kind (u64) | byte length (u64) |
//! payload. Kinds: 0 setup, 1 state A->B, 2 state B->A.

use crate::error::{Error, Result};
use crate::ipm::{run_ipm, IpmConfig, Transcript};
use crate::lifecycle::{build_initial_point, extract_flow, AuxGraph, Perturbation};
use crate::passes::{self, PassRunner, WireCodec};
use crate::prng;
use crate::stream::{EdgeRecord, GraphHeader, MeterHandle};
use sha2::{Digest, Sha256};

pub const KIND_SETUP: u64 = 0;
pub const KIND_STATE_A_TO_B: u64 = 1;
pub const KIND_STATE_B_TO_A: u64 = 2;

/// Exact bit accounting at the codec boundary, plus the raw frame dump.
#[derive(Debug, Default)]
pub struct WireMeter {
    pub bits_total: u64,
    /// (round id, kind, bits) per frame, in wire order.
    pub bits_per_round: Vec<(u64, u64, u64)>,
    /// Complete frames (header + payload) for privacy scanning.
    pub frames: Vec<Vec<u8>>,
    hash: Sha256,
}

impl WireMeter {
    fn log(&mut self, round: u64, kind: u64, frame: Vec<u8>) {
        let bits = 8 * frame.len() as u64;
        self.bits_total += bits;
        self.bits_per_round.push((round, kind, bits));
        self.hash.update(&frame);
        self.frames.push(frame);
    }

    /// SHA-256 over every frame sent so far; equal digests mean bit-equal
    /// protocol transcripts.
    pub fn digest(&self) -> [u8; 32] {
        self.hash.clone().finalize().into()
    }

    /// True if any frame contains the byte pattern (used by the privacy
    /// scan against per-edge data).
    pub fn wire_contains(&self, needle: &[u8]) -> bool {
        self.frames
            .iter()
            .any(|f| f.windows(needle.len()).any(|w| w == needle))
    }
}

fn frame(round: u64, kind: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + payload.len());
    passes::put_u64(&mut out, round);
    passes::put_u64(&mut out, kind);
    passes::put_u64(&mut out, payload.len() as u64);
    out.extend_from_slice(payload);
    out
}

/// Both parties' view of a joint simulation. Party edge sets are private
/// local memory (exempt from the streaming word meter); everything else the
/// parties agree on (header, seeds, aux metadata) was either public input
/// or went over the wire in the setup round.
pub struct JointRunner {
    base_header: GraphHeader,
    pub a_edges: Vec<EdgeRecord>,
    pub b_edges: Vec<EdgeRecord>,
    /// Set after the initial point is built; star edges are synthesized by
    /// party B at the end of each pass.
    pub aux: Option<AuxGraph>,
    /// Isolation perturbation; the shared seed crossed the wire in setup,
    /// the per-edge offsets z_e never do (each party derives its own).
    pub perturbation: Option<Perturbation>,
    pub wire: WireMeter,
    /// Per-frame payload cap; exceeding it is a protocol-budget error.
    pub max_frame_bytes: Option<usize>,
    meters: MeterHandle,
    round: u64,
}

impl JointRunner {
    /// Splits `edges` by id: ids < `split` go to A, the rest to B. Charges
    /// the setup round (seed + per-party demand contributions, O(n) words).
    pub fn new(header: GraphHeader, edges: Vec<EdgeRecord>, split: usize, seed: u64) -> Self {
        let (a_edges, b_edges): (Vec<_>, Vec<_>) = edges.into_iter().partition(|e| e.id < split);
        let mut wire = WireMeter::default();
        let mut setup = Vec::new();
        passes::put_u64(&mut setup, seed);
        passes::put_u64(&mut setup, header.n as u64);
        passes::put_u64(&mut setup, header.m as u64);
        passes::put_i64(&mut setup, header.w);
        for &d in &header.demand {
            passes::put_i64(&mut setup, d);
        }
        wire.log(0, KIND_SETUP, frame(0, KIND_SETUP, &setup));
        JointRunner {
            base_header: header,
            a_edges,
            b_edges,
            aux: None,
            perturbation: None,
            wire,
            max_frame_bytes: None,
            meters: MeterHandle::new(),
            round: 0,
        }
    }

    fn send<S: WireCodec>(&mut self, kind: u64, state: &S) -> Result<S> {
        let mut payload = Vec::new();
        state.encode(&mut payload);
        if let Some(cap) = self.max_frame_bytes {
            if payload.len() > cap {
                return Err(Error::Protocol {
                    round: self.round as usize,
                    msg: format!("pass state of {} bytes exceeds budget {cap}", payload.len()),
                });
            }
        }
        let f = frame(self.round, kind, &payload);
        self.wire.log(self.round, kind, f);
        S::decode(&mut payload.as_slice())
    }

}

impl PassRunner for JointRunner {
    fn header(&self) -> &GraphHeader {
        match &self.aux {
            Some(aux) => &aux.header,
            None => &self.base_header,
        }
    }

    fn meters(&self) -> MeterHandle {
        self.meters.clone()
    }

    fn run_pass<S: WireCodec>(
        &mut self,
        mut state: S,
        fold: &mut dyn FnMut(&mut S, &EdgeRecord) -> Result<()>,
    ) -> Result<S> {
        self.round += 1;
        self.meters.charge_pass();
        let pert = self.perturbation;
        let touch = |e: &EdgeRecord, state: &mut S, fold: &mut dyn FnMut(&mut S, &EdgeRecord) -> Result<()>| {
            let mut e = *e;
            if let Some(p) = &pert {
                e.cost = p.perturbed_cost(e.id, e.cost);
            }
            fold(state, &e)
        };
        // Party A folds its edges and ships the state.
        for i in 0..self.a_edges.len() {
            let e = self.a_edges[i];
            touch(&e, &mut state, fold)?;
        }
        state = self.send(KIND_STATE_A_TO_B, &state)?;
        // Party B continues, then appends the shared star edges.
        for i in 0..self.b_edges.len() {
            let e = self.b_edges[i];
            touch(&e, &mut state, fold)?;
        }
        if let Some(aux) = self.aux.clone() {
            for id in aux.base.m..aux.m_aug() {
                // Star edges are shared knowledge; never perturbed.
                fold(&mut state, &aux.star_edge(id))?;
            }
        }
        state = self.send(KIND_STATE_B_TO_A, &state)?;
        Ok(state)
    }
}

/// Joint initial point + IPM: after this both parties hold the identical
/// transcript (simulated here as one object; the wire digest fingerprints
/// every byte they exchanged).
pub fn run_joint_ipm(runner: &mut JointRunner, cfg: &IpmConfig) -> Result<Transcript> {
    let aux = build_initial_point(runner, cfg.epsilon)?;
    runner.aux = Some(aux.clone());
    run_ipm(runner, aux, cfg)
}

/// Outcome of the exact integral-flow protocol.
#[derive(Debug)]
pub enum ProtocolOutcome {
    Success {
        trial: usize,
        cost_num: i128,
        /// (edge id, integral flow) for each party's private edges.
        flows_a: Vec<(usize, i64)>,
        flows_b: Vec<(usize, i64)>,
        transcript: Transcript,
    },
    /// The base instance cannot route its demand: star edges at these
    /// vertices still carry flow at the end of the path.
    Infeasible { max_star_flow: f64, cut: Vec<usize> },
    /// No trial produced a verifiable rounding.
    Failed { trials: usize, last_reason: String },
}

/// Up to `trials` isolation-perturbed joint solves; rounding is verified by
/// the conservation residual that already crosses the wire inside the
/// extraction pass, and the cheapest verified flow wins. Each party rounds
/// only its own edges, so it ends knowing its half of the flow.
pub fn exact_flow_protocol(
    runner: &mut JointRunner,
    cfg: &IpmConfig,
    trials: usize,
) -> Result<ProtocolOutcome> {
    let aux = build_initial_point(runner, cfg.epsilon)?;
    runner.aux = Some(aux.clone());
    let mut best: Option<(usize, i128, Transcript)> = None;
    let mut last_reason = String::new();
    for trial in 0..trials.max(1) {
        runner.perturbation = Some(Perturbation {
            seed: prng::derive_seed(cfg.seed, 100 + trial as u64),
            m: aux.base.m,
            w: aux.base.w,
        });
        let transcript = run_ipm(runner, aux.clone(), cfg)?;
        let t = transcript.records.len();
        let report = extract_flow(runner, &aux, &mut |e| transcript.query_x(t, e))?;
        if report.star_infeasible {
            // Locate the saturated star attachments as cut evidence.
            let mut cut = Vec::new();
            for v in 0..aux.base.n {
                for dir in 0..2 {
                    let se = aux.star_edge(aux.base.m + 2 * v + dir);
                    if transcript.query_x(t, &se)? > 1.0 / 3.0 && !cut.contains(&v) {
                        cut.push(v);
                    }
                }
            }
            runner.perturbation = None;
            return Ok(ProtocolOutcome::Infeasible {
                max_star_flow: report.max_star_flow,
                cut,
            });
        }
        if report.rounded.valid() && report.rounded.max_delta < 0.5 {
            let better = best
                .as_ref()
                .map_or(true, |(_, c, _)| report.rounded.cost_num < *c);
            if better {
                let mut transcript = transcript;
                transcript.perturbation = runner.perturbation;
                best = Some((trial, report.rounded.cost_num, transcript));
            }
        } else {
            last_reason = format!(
                "trial {trial}: max delta {:.3}, conserved {}, in range {}",
                report.rounded.max_delta, report.rounded.conserved, report.rounded.within_capacity
            );
        }
    }
    let outcome = match best {
        Some((trial, cost_num, transcript)) => {
            let t = transcript.records.len();
            let pert = Perturbation {
                seed: prng::derive_seed(cfg.seed, 100 + trial as u64),
                m: aux.base.m,
                w: aux.base.w,
            };
            // Replay must see the same perturbed costs the run saw; each
            // party re-derives its own z_e locally from the shared seed.
            let round_party = |edges: &[EdgeRecord]| -> Result<Vec<(usize, i64)>> {
                edges
                    .iter()
                    .map(|e| {
                        let mut e = *e;
                        e.cost = pert.perturbed_cost(e.id, e.cost);
                        Ok((e.id, transcript.query_x(t, &e)?.round() as i64))
                    })
                    .collect()
            };
            let flows_a = round_party(&runner.a_edges)?;
            let flows_b = round_party(&runner.b_edges)?;
            ProtocolOutcome::Success {
                trial,
                cost_num,
                flows_a,
                flows_b,
                transcript,
            }
        }
        None => ProtocolOutcome::Failed {
            trials: trials.max(1),
            last_reason,
        },
    };
    runner.perturbation = None;
    Ok(outcome)
}
