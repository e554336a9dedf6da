mod support;

use leibniz_link::audit::{exchange_deficit, Audit, AuditError};
use leibniz_link::ids::{NodeId, TxnId};
use leibniz_link::link::{digest, AgreementTag, Digest, Phase};
use leibniz_link::netsim::run;
use leibniz_link::trace::{EventKind, TraceEvent};
use proptest::prelude::*;
use support::{scenario, triangle};

const A: NodeId = NodeId(0);
const B: NodeId = NodeId(1);
const C: NodeId = NodeId(2);

#[allow(clippy::too_many_arguments)]
fn frame(slot: u64, kind: EventKind, txn: TxnId, from: NodeId, to: NodeId, tag: AgreementTag, bits: u64, d: Digest) -> TraceEvent {
    let mut e = TraceEvent::new(slot, kind).txn(txn).bits(bits);
    e.hop = Some((from, to));
    e.src = Some(from);
    e.dst = Some(to);
    e.tag = Some(tag);
    if tag != AgreementTag::Tik {
        e.digest = Some(d);
    }
    e
}

/// Hand-written exchange: four frames, both sides commit.
fn committed(slot: u64, txn: TxnId, i: NodeId, r: NodeId, out: &mut Vec<TraceEvent>) {
    let d = digest(&txn.0.to_le_bytes());
    out.push(TraceEvent::new(slot, EventKind::TxnStart).txn(txn).at(i).peer(r).bits(64).digest(d));
    let legs = [
        (i, r, AgreementTag::Tik, 64),
        (r, i, AgreementTag::Tyk, 0),
        (i, r, AgreementTag::Tik2, 0),
        (r, i, AgreementTag::Tyk2, 0),
    ];
    for (k, (f, t, tag, bits)) in legs.into_iter().enumerate() {
        let s = slot + k as u64;
        out.push(frame(s, EventKind::FrameSent, txn, f, t, tag, bits, d));
        out.push(frame(s + 1, EventKind::FrameDelivered, txn, f, t, tag, bits, d));
        if tag == AgreementTag::Tik2 {
            out.push(TraceEvent::new(s + 1, EventKind::Commit).txn(txn).at(r).bits(64).digest(d));
        }
        if tag == AgreementTag::Tyk2 {
            out.push(TraceEvent::new(s + 1, EventKind::Commit).txn(txn).at(i).bits(64).digest(d));
        }
    }
}

/// Hand-written exchange whose TIK is lost on the edge; the initiator aborts.
fn lost(slot: u64, txn: TxnId, i: NodeId, r: NodeId, out: &mut Vec<TraceEvent>) {
    let d = digest(&txn.0.to_le_bytes());
    out.push(TraceEvent::new(slot, EventKind::TxnStart).txn(txn).at(i).peer(r).bits(64).digest(d));
    out.push(frame(slot, EventKind::FrameSent, txn, i, r, AgreementTag::Tik, 64, d));
    out.push(frame(slot + 1, EventKind::FrameDropped, txn, i, r, AgreementTag::Tik, 64, d));
    out.push(TraceEvent::new(slot + 10, EventKind::Abort).txn(txn).at(i).bits(64).reason("horizon"));
}

fn scripted_triangle(with_loss: bool) -> Vec<TraceEvent> {
    let mut start = TraceEvent::new(0, EventKind::RunStart).reason("oae");
    start.links = Some(vec![(A, B), (A, C), (B, C)]);
    let mut t = vec![start];
    committed(0, TxnId::new(B, 1), B, C, &mut t);
    committed(2, TxnId::new(C, 1), C, A, &mut t);
    if with_loss {
        lost(4, TxnId::new(A, 1), A, B, &mut t);
    } else {
        committed(4, TxnId::new(A, 1), A, B, &mut t);
    }
    t.sort_by_key(|e| e.slot);
    t
}

#[test]
fn scripted_loss_leaves_a_64_bit_loop_residual() {
    let audit = Audit::from_trace(&scripted_triangle(true)).unwrap();
    let cycle = [A, B, C, A];
    assert_eq!(audit.loop_residual(&cycle, 0..100).unwrap(), 64);
    assert_eq!(audit.loop_residual(&cycle, 0..4).unwrap(), 0);
    assert_eq!(audit.loop_residual(&cycle, 50..50).unwrap(), 0);
    assert_eq!(audit.entropy_produced(), 64);
    // one triangle is a cycle basis of the triangle graph
    assert_eq!(audit.entropy_produced(), audit.loop_residual(&cycle, 0..100).unwrap());
    assert_eq!(audit.loop_residual(&[A, B, C], 0..100), Err(AuditError::NotClosed));
    // the drop happened on the edge, so no node is out of balance
    for n in [A, B, C] {
        for s in 0..=audit.ledger().last_slot() {
            assert_eq!(audit.node_residual(n, s).unwrap(), 0);
        }
    }
    assert_eq!(audit.ledger().edge_deficit(A, B), 64);
    let report = audit.check();
    assert!(!report.lossless);
    assert!(report.passed(), "{report}");
}

#[test]
fn scripted_healthy_triangle_has_zero_residuals() {
    let audit = Audit::from_trace(&scripted_triangle(false)).unwrap();
    assert!(audit.is_lossless());
    assert_eq!(audit.loop_residual(&[A, B, C, A], 0..100).unwrap(), 0);
    let report = audit.check();
    assert_eq!(report.triangles_checked, 1);
    assert!(report.passed());
    for o in audit.outcomes().values() {
        assert_eq!(exchange_deficit(o).unwrap(), 0.0);
    }
}

#[test]
fn deficit_of_unfinished_exchange_is_an_error() {
    let mut t = scripted_triangle(false);
    let x = TxnId::new(A, 9);
    t.push(TraceEvent::new(20, EventKind::TxnStart).txn(x).at(A).peer(C).bits(64));
    let audit = Audit::from_trace(&t).unwrap();
    assert_eq!(exchange_deficit(&audit.outcomes()[&x]), Err(AuditError::NonTerminal(x)));
}

#[test]
fn lossy_simulation_keeps_node_law_and_reconciles() {
    let s = triangle("a", "b", 200, "loss = 0.2", "");
    let r = run(&s).unwrap();
    let audit = Audit::from_trace(&r.trace).unwrap();
    let report = audit.check();
    assert!(report.frames_dropped > 0);
    assert!(report.node_violations.is_empty());
    assert!(report.reconciled());
    assert_eq!(report.entropy_produced, r.metrics.entropy_produced);
}

#[test]
fn entropy_is_monotone_in_loss() {
    let mut last = 0;
    for p in [0.0, 0.05, 0.1, 0.2] {
        let mut total = 0;
        for seed in 1..=3 {
            let mut s = triangle("a", "b", 400, &format!("loss = {p}"), "retry = \"none\"\nrelay = false");
            s.seed = seed;
            total += run(&s).unwrap().metrics.entropy_produced;
        }
        if p == 0.0 {
            assert_eq!(total, 0);
        }
        assert!(total >= last, "p={p}: {total} < {last}");
        last = total;
    }
}

fn symmetric(loss: f64, seed: u64) -> Vec<TraceEvent> {
    let s = scenario(&format!(
        r#"
seed = {seed}
duration = 4000
[topology]
kind = "triangle"
[link]
loss = {loss}
[workload]
horizon = 40
relay = false
retry = "agreement-only"
[[workload.flows]]
from = "a"
to = "b"
count = 500
interval = 6
[[workload.flows]]
from = "b"
to = "a"
count = 500
interval = 6
start = 3
"#
    ));
    run(&s).unwrap().trace
}

#[test]
fn pif_doubles_one_way_on_the_confirmed_subset() {
    for loss in [0.0, 0.5] {
        let audit = Audit::from_trace(&symmetric(loss, 4)).unwrap();
        let pif = audit.pif_throughput(A, B);
        assert!(pif.symmetric);
        assert!(pif.one_way > 0.0);
        assert_eq!(pif.bilateral_confirmed, 2.0 * pif.one_way, "loss {loss}");
    }
}

#[test]
fn idle_link_has_zero_throughput() {
    let audit = Audit::from_trace(&scripted_triangle(false)).unwrap();
    let mut start = TraceEvent::new(0, EventKind::RunStart);
    start.links = Some(vec![(A, B)]);
    let idle = Audit::from_trace(&[start]).unwrap().pif_throughput(A, B);
    assert_eq!((idle.one_way, idle.bilateral_confirmed), (0.0, 0.0));
    assert!(audit.pif_throughput(A, B).one_way > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn lossless_runs_conserve_at_every_node_slot_and_triangle(
        seed in any::<u64>(),
        delay in 1u64..4,
        flows in proptest::collection::vec((0u32..4, 1u32..4, 1u32..20), 1..4),
    ) {
        let mut text = format!("seed = {seed}\nduration = 400\n[topology]\nkind = \"complete\"\nn = 4\n[link]\ndelay = {delay}\n[workload]\nhorizon = {}\n", 12 * delay);
        for (from, off, count) in &flows {
            text += &format!("[[workload.flows]]\nfrom = {from}\nto = {}\ncount = {count}\ninterval = 7\n", (from + off) % 4);
        }
        let r = run(&scenario(&text)).unwrap();
        let audit = Audit::from_trace(&r.trace).unwrap();
        prop_assert!(audit.is_lossless());
        for n in audit.ledger().nodes().clone() {
            for s in 0..=audit.ledger().last_slot() {
                prop_assert_eq!(audit.node_residual(n, s).unwrap(), 0);
            }
        }
        prop_assert_eq!(audit.triangles().len(), 4);
        for t in audit.triangles() {
            prop_assert_eq!(audit.loop_residual(&[t[0], t[1], t[2], t[0]], 0..audit.duration() + 1).unwrap(), 0);
        }
        prop_assert_eq!(audit.entropy_produced(), 0);
    }

    #[test]
    fn deficit_is_binary_and_zero_exactly_on_matching_agreement(seed in any::<u64>(), loss in 0.0f64..0.5) {
        let mut s = triangle("a", "c", 30, &format!("loss = {loss}\ncorrupt = 0.05"), "");
        s.seed = seed;
        let r = run(&s).unwrap();
        let audit = Audit::from_trace(&r.trace).unwrap();
        for o in audit.outcomes().values() {
            let l = exchange_deficit(o).unwrap();
            prop_assert!(l == 0.0 || l == 1.0);
            let agreed = o.initiator_phase == Some(Phase::Agreed)
                && o.responder_phase == Some(Phase::Agreed)
                && o.initiator_commit_digest == o.responder_commit_digest;
            prop_assert_eq!(l == 0.0, agreed);
        }
    }
}
