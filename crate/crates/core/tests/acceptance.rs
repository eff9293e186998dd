//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ccprobe_core::classifier::{classify_trace, ClassifierConfig, ClassifyError, Label};
use ccprobe_core::netsim::{simulate, Scenario, SimRun, TerminationReason};
use ccprobe_core::prober::ProbeScript;
use ccprobe_core::sender::Variant;
use ccprobe_core::trace_io::{
    emit_plot_points, read_trace, write_trace, Direction, EventKind, Marker, ObservedTrace,
};

const TIMEOUT_GAP_MIN_US: u64 = 900_000;
const FAST_WINDOW_RTTS: u64 = 3;
const MATRIX_WALL_LIMIT: Duration = Duration::from_secs(5);
const SWEEP_RTTS_MS: [u64; 4] = [10, 50, 100, 200];
const BOUNDARY_RTT_MS: u64 = 500;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

fn label_of(v: Variant) -> Label {
    match v {
        Variant::Tahoe => Label::Tahoe,
        Variant::Reno => Label::Reno,
        Variant::NewReno => Label::NewReno,
        Variant::NoFastRetransmit => Label::NoFastRetransmit,
        Variant::RenoPlus => Label::RenoPlus,
    }
}

fn run(v: Variant, rtt_ms: u64) -> (Scenario, SimRun) {
    let sc = Scenario::new(v).with_rtt(Duration::from_millis(rtt_ms));
    let run = simulate(&sc).expect("default scenario is valid");
    (sc, run)
}

/// One data arrival as seen by the prober.
#[derive(Debug, Clone, Copy)]
struct Arrival {
    pos: usize,
    index: u64,
    t_us: u64,
    /// Time since the previous data arrival.
    gap_us: u64,
    /// Earlier arrivals of the same packet.
    repeat: usize,
}

fn arrivals(trace: &ObservedTrace, mss: u64) -> Vec<Arrival> {
    let mut seen: BTreeMap<u64, usize> = BTreeMap::new();
    let mut last = None;
    let mut out = Vec::new();
    for (pos, e) in trace.iter().enumerate() {
        if !(e.dir == Direction::Rx && e.kind == EventKind::Data) {
            continue;
        }
        let index = e.seq / mss + 1;
        let count = seen.entry(index).or_default();
        out.push(Arrival {
            pos,
            index,
            t_us: e.t_us,
            gap_us: last.map_or(0, |t| e.t_us - t),
            repeat: *count,
        });
        *count += 1;
        last = Some(e.t_us);
    }
    out
}

/// Repeat arrivals of packets the prober was prepared to acknowledge.
fn repeats(trace: &ObservedTrace, script: &ProbeScript) -> Vec<Arrival> {
    arrivals(trace, u64::from(script.mss))
        .into_iter()
        .filter(|a| a.repeat > 0 && a.index <= u64::from(script.ack_limit_packet))
        .collect()
}

fn first_repeat(trace: &ObservedTrace, script: &ProbeScript, index: u64) -> Option<Arrival> {
    repeats(trace, script)
        .into_iter()
        .find(|a| a.index == index)
}

fn confusion_matrix() -> Outcome {
    let started = Instant::now();
    let mut wrong = Vec::new();
    let mut deterministic = true;
    for v in Variant::ALL {
        let (sc, a) = run(v, 100);
        let (_, b) = run(v, 100);
        deterministic &= a.trace == b.trace;
        let report = classify_trace(&a.trace, &sc.probe_script, &ClassifierConfig::default());
        if report.label() != Some(label_of(v)) {
            wrong.push(format!("{v}->{:?}", report.verdict));
        }
    }
    let elapsed = started.elapsed();
    Outcome::new(
        wrong.is_empty() && deterministic && elapsed < MATRIX_WALL_LIMIT,
        format!(
            "{}/5 correct, deterministic={deterministic}, {elapsed:.2?} for ten runs {}",
            5 - wrong.len(),
            wrong.join(" ")
        ),
    )
}

fn newreno_signature() -> Outcome {
    let (sc, r) = run(Variant::NewReno, 100);
    let script = &sc.probe_script;
    let reps = repeats(&r.trace, script);
    let indices: Vec<u64> = reps.iter().map(|a| a.index).collect();
    let fast = reps.iter().all(|a| a.gap_us <= FAST_WINDOW_RTTS * 100_000);
    let seventeen = arrivals(&r.trace, 100)
        .iter()
        .filter(|a| a.index == 17)
        .count();
    Outcome::new(
        indices == [13, 16] && fast && seventeen == 1,
        format!("retransmitted {indices:?}, all fast={fast}, arrivals of 17={seventeen}"),
    )
}

fn reno_signature() -> Outcome {
    let (sc, r) = run(Variant::Reno, 100);
    match first_repeat(&r.trace, &sc.probe_script, 16) {
        Some(a) => Outcome::new(
            a.gap_us >= TIMEOUT_GAP_MIN_US,
            format!("16 resent after {} ms of silence", a.gap_us / 1000),
        ),
        None => Outcome::new(false, "16 never resent"),
    }
}

fn tahoe_signature() -> Outcome {
    let (sc, r) = run(Variant::Tahoe, 100);
    let script = &sc.probe_script;
    let seventeen_again = first_repeat(&r.trace, script, 17).is_some();
    let third_dup = r
        .trace
        .iter()
        .filter(|e| e.dir == Direction::Tx && e.kind == EventKind::Ack && e.ack == 1200)
        .nth(3)
        .map(|e| e.t_us);
    let retx13 = first_repeat(&r.trace, script, 13).map(|a| a.t_us);
    let within = match (third_dup, retx13) {
        (Some(d), Some(t)) => t >= d && t - d <= FAST_WINDOW_RTTS * 100_000,
        _ => false,
    };
    Outcome::new(
        seventeen_again && within,
        format!("17 resent={seventeen_again}, third dupack at {third_dup:?} us, 13 resent at {retx13:?} us"),
    )
}

fn nofr_signature() -> Outcome {
    let (sc, r) = run(Variant::NoFastRetransmit, 100);
    match first_repeat(&r.trace, &sc.probe_script, 13) {
        Some(a) => Outcome::new(
            a.gap_us >= TIMEOUT_GAP_MIN_US,
            format!("13 resent after {} ms of silence", a.gap_us / 1000),
        ),
        None => Outcome::new(false, "13 never resent"),
    }
}

fn renoplus_signature() -> Outcome {
    let (sc, r) = run(Variant::RenoPlus, 100);
    let reps = repeats(&r.trace, &sc.probe_script);
    let pos = |k| reps.iter().find(|a| a.index == k).map(|a| a.pos);
    let extra: Vec<u64> = match (pos(13), pos(16)) {
        (Some(a), Some(b)) => reps
            .iter()
            .filter(|x| x.pos > a && x.pos < b && x.index != 13 && x.index != 16)
            .map(|x| x.index)
            .collect(),
        _ => Vec::new(),
    };
    Outcome::new(
        !extra.is_empty(),
        format!("resent between 13 and 16: {extra:?}"),
    )
}

fn timing_invariance() -> (Outcome, String) {
    let mut wrong = Vec::new();
    for rtt in SWEEP_RTTS_MS {
        for v in Variant::ALL {
            let (sc, r) = run(v, rtt);
            let report = classify_trace(&r.trace, &sc.probe_script, &ClassifierConfig::default());
            if report.label() != Some(label_of(v)) {
                wrong.push(format!("{v}@{rtt}ms->{:?}", report.verdict));
            }
        }
    }
    let boundary: Vec<String> = Variant::ALL
        .iter()
        .map(|&v| {
            let (sc, r) = run(v, BOUNDARY_RTT_MS);
            let report = classify_trace(&r.trace, &sc.probe_script, &ClassifierConfig::default());
            format!(
                "{v}->{}",
                report.label().map_or("error".into(), |l| l.to_string())
            )
        })
        .collect();
    (
        Outcome::new(
            wrong.is_empty(),
            format!("{}/20 stable {}", 20 - wrong.len(), wrong.join(" ")),
        ),
        boundary.join(" "),
    )
}

/// Segments arriving per round trip when the window doubles from two.
fn round_table(page_segments: u64) -> Vec<u64> {
    let mut rounds = Vec::new();
    let (mut w, mut left) = (2, page_segments);
    while left > 0 {
        rounds.push(w.min(left));
        left -= w.min(left);
        w *= 2;
    }
    rounds
}

fn sender_dynamics() -> Outcome {
    let mut sc = Scenario::new(Variant::NewReno);
    sc.probe_script.drop_packets.clear();
    let r = simulate(&sc).expect("valid");
    let mut per_round: BTreeMap<u64, u64> = BTreeMap::new();
    for a in arrivals(&r.trace, 100) {
        *per_round.entry(a.t_us).or_default() += 1;
    }
    let rounds: Vec<u64> = per_round.values().copied().collect();
    let expected = round_table(30);
    let flight_ok = r
        .sender_log
        .iter()
        .all(|(_, s)| s.snd_nxt - s.snd_una <= s.effective_window);
    Outcome::new(
        rounds == expected && expected == [2, 4, 8, 16] && flight_ok,
        format!(
            "rounds {rounds:?}, flight within window at all {} events={flight_ok}",
            r.sender_log.len()
        ),
    )
}

fn conservation() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for v in Variant::ALL {
        let (sc, r) = run(v, 100);
        let mut covered = vec![false; sc.page_bytes as usize];
        for e in r
            .trace
            .iter()
            .filter(|e| e.dir == Direction::Rx && e.kind == EventKind::Data)
        {
            for b in e.seq..e.end() {
                covered[b as usize] = true;
            }
        }
        let distinct = covered.iter().filter(|c| **c).count() as u64;
        let acks: Vec<u64> = r
            .trace
            .iter()
            .filter(|e| e.dir == Direction::Tx && matches!(e.kind, EventKind::Ack | EventKind::Rst))
            .map(|e| e.ack)
            .collect();
        let acks_monotone = acks.windows(2).all(|w| w[0] <= w[1]);
        let times_monotone = r.trace.events().windows(2).all(|w| w[0].t_us <= w[1].t_us);
        let ok = distinct == sc.page_bytes
            && r.duplicate_deliveries == 0
            && r.termination == TerminationReason::ProberClosed
            && acks_monotone
            && times_monotone;
        pass &= ok;
        if !ok {
            notes.push(format!(
                "{v}: {distinct}/{} bytes, acks monotone={acks_monotone}, times monotone={times_monotone}",
                sc.page_bytes
            ));
        }
    }
    Outcome::new(
        pass,
        if notes.is_empty() {
            "all five runs".into()
        } else {
            notes.join("; ")
        },
    )
}

fn trace_round_trip() -> Outcome {
    let mut bad = Vec::new();
    let mut runs = 0;
    for rtt in SWEEP_RTTS_MS.iter().copied().chain([BOUNDARY_RTT_MS]) {
        for v in Variant::ALL {
            let (_, r) = run(v, rtt);
            runs += 1;
            let mut buf = Vec::new();
            write_trace(&r.trace, &mut buf).expect("in-memory write");
            let back = read_trace(buf.as_slice()).ok();
            let points = emit_plot_points(&r.trace);
            let data = r
                .trace
                .iter()
                .filter(|e| e.dir == Direction::Rx && e.kind == EventKind::Data)
                .count();
            let acks = r
                .trace
                .iter()
                .filter(|e| e.dir == Direction::Tx && e.kind == EventKind::Ack)
                .count();
            let pk = points.iter().filter(|p| p.marker == Marker::Packet).count();
            let ak = points.iter().filter(|p| p.marker == Marker::Ack).count();
            if back.as_ref() != Some(&r.trace)
                || pk != data
                || ak != acks
                || points.len() != data + acks
            {
                bad.push(format!("{v}@{rtt}ms"));
            }
        }
    }
    Outcome::new(
        bad.is_empty(),
        format!("{}/{runs} traces exact {}", runs - bad.len(), bad.join(" ")),
    )
}

fn error_taxonomy() -> Outcome {
    let cfg = ClassifierConfig::default();
    let (sc, r) = run(Variant::NewReno, 100);
    let script = &sc.probe_script;

    // packets 3 and 4 arrive together; swap their ids
    let mut events = r.trace.clone().into_events();
    let i3 = events
        .iter()
        .position(|e| e.dir == Direction::Rx && e.seq == 200)
        .expect("packet 3");
    let i4 = events
        .iter()
        .position(|e| e.dir == Direction::Rx && e.seq == 300)
        .expect("packet 4");
    let (a, b) = (events[i3].ip_id, events[i4].ip_id);
    events[i3].ip_id = b;
    events[i4].ip_id = a;
    let reordered = ObservedTrace::from_events(events).expect("still sorted");
    let reorder = classify_trace(&reordered, script, &cfg).error_kind();

    let mut truncated = r.trace.clone();
    truncated.truncate(r.trace.len() / 2);
    let incomplete = classify_trace(&truncated, script, &cfg).error_kind();

    let mut capped = sc.clone();
    capped.event_cap = 10;
    let cr = simulate(&capped).expect("valid");
    let overflow = classify_trace(
        &cr.trace,
        script,
        &ClassifierConfig {
            event_cap: 10,
            ..cfg
        },
    )
    .error_kind();

    Outcome::new(
        reorder == Some(ClassifyError::Reordering)
            && incomplete == Some(ClassifyError::Incomplete)
            && overflow == Some(ClassifyError::TraceOverflow)
            && cr.termination == TerminationReason::ProberAborted,
        format!(
            "reordered->{reorder:?}, truncated->{incomplete:?}, cap 10->{overflow:?} ({:?})",
            cr.termination
        ),
    )
}

fn main() -> ExitCode {
    let (timing, boundary) = timing_invariance();
    let results = [
        ("confusion matrix identity", confusion_matrix()),
        ("signature NewReno", newreno_signature()),
        ("signature Reno", reno_signature()),
        ("signature Tahoe", tahoe_signature()),
        ("signature NoFastRetransmit", nofr_signature()),
        ("signature RenoPlus", renoplus_signature()),
        ("timing invariance", timing),
        ("sender dynamics", sender_dynamics()),
        ("conservation and monotonicity", conservation()),
        ("trace round trip", trace_round_trip()),
        ("error taxonomy", error_taxonomy()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("INFO rtt {BOUNDARY_RTT_MS} ms boundary: {boundary}");
    println!(
        "{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
