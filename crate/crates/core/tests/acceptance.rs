//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twinsim::chain::{BlockPolicy, SystemConfig, Transaction, TxId, KB};
use twinsim::config::{FaultMode, Faulty, Mode, RunConfig};
use twinsim::consensus::ConsensusParams;
use twinsim::network::StaticNetwork;
use twinsim::runner::{self, RunExtras, RunOutput};
use twinsim::system::{Observation, SimParams, System, SystemOptions};
use twinsim::{NodeId, ProtocolId};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn reference_runs() -> (Vec<RunOutput>, f64) {
    let jobs: Vec<RunConfig> = Mode::ALL
        .into_iter()
        .flat_map(|mode| {
            (1..=5).map(move |seed| RunConfig {
                mode,
                seed,
                ..RunConfig::default()
            })
        })
        .collect();
    let start = Instant::now();
    let outs = runner::run_parallel(&jobs)
        .into_iter()
        .map(|r| r.expect("reference run"))
        .collect();
    (outs, start.elapsed().as_secs_f64())
}

fn criterion_1(outs: &[RunOutput], wall: f64) -> Verdict {
    let by_mode = |m: Mode, f: &dyn Fn(&RunOutput) -> f64| {
        mean(outs.iter().filter(|o| o.config.mode == m).map(f))
    };
    let lat = |o: &RunOutput| o.report.avg_tx_latency.unwrap_or(f64::INFINITY);
    let ibt = |o: &RunOutput| o.report.avg_inter_block_time.unwrap_or(f64::INFINITY);
    let thr = |o: &RunOutput| o.report.throughput;
    let [li, lb, ld] = Mode::ALL.map(|m| by_mode(m, &lat));
    let [ii, ib, id] = Mode::ALL.map(|m| by_mode(m, &ibt));
    let [ti, tb, td] = Mode::ALL.map(|m| by_mode(m, &thr));
    let ok_lat = ld <= li.min(lb) * 1.05;
    let ok_ibt = id <= ii.min(ib) * 1.05;
    let ok_thr = td >= ti.max(tb) * 0.95;
    let ok_wall = wall < 120.0;
    Verdict::new(
        ok_lat && ok_ibt && ok_thr && ok_wall,
        format!(
            "latency ibft={li:.4} bigfoot={lb:.4} dynamic={ld:.4} (ratio {:.4}); \
             inter-block {ii:.4}/{ib:.4}/{id:.4}; throughput {ti:.3}/{tb:.3}/{td:.3}; wall {wall:.1}s",
            ld / li.min(lb)
        ),
    )
}

/// Commit latency of the single block of a 7-producer symmetric system with
/// one-hop delay `d`.
fn one_block_latency(
    protocol: ProtocolId,
    d: f64,
    offline: &[NodeId],
    fastpath: f64,
) -> (f64, usize) {
    let params = SimParams::new(
        SystemConfig::new(7, 7, 2).unwrap(),
        BlockPolicy::default(),
        ConsensusParams::new(2, 7, 10.0, fastpath).unwrap(),
    );
    let net = StaticNetwork::uniform(7, d, f64::INFINITY).with_offline(offline.iter().copied());
    let tx = Transaction {
        id: TxId(1),
        created_at: 0.0,
        size: 5 * KB,
    };
    let mut sys = System::new(
        params,
        Arc::new(net),
        protocol,
        vec![tx],
        SystemOptions::default(),
    );
    sys.run_until(2.0, None);
    let b = sys.ledger().into_iter().next().expect("one block accepted");
    assert!(sys.safety().is_clean());
    (b.accepted_at - b.proposed_at, b.distinct_voters())
}

fn criterion_2() -> Verdict {
    let d = 0.05;
    let fp = RunConfig::default().fastpath_timeout;
    let within = |got: f64, want: f64| (got - want).abs() <= 0.01 * want;
    let (ibft, _) = one_block_latency(ProtocolId::Ibft, d, &[], fp);
    let (fast, _) = one_block_latency(ProtocolId::BigFoot, d, &[], fp);
    // Replicas start the fast-path timer on pre-prepare receipt, so the
    // prepare hop is absorbed by the timer: pre-prepare, timer, commit.
    let (fallback, voters) = one_block_latency(ProtocolId::BigFoot, d, &[5, 6], fp);
    let want_fallback = d + fp + d;
    Verdict::new(
        within(ibft, 3.0 * d)
            && within(fast, 2.0 * d)
            && within(fallback, want_fallback)
            && voters >= 5,
        format!(
            "d={d}: ibft {ibft:.6} (want {:.6}), fast path {fast:.6} (want {:.6}), \
             fallback {fallback:.6} (want {want_fallback:.6} with fastpath_timeout {fp})",
            3.0 * d,
            2.0 * d
        ),
    )
}

/// Small config with random crash windows on at most `f` producers.
fn random_config(rng: &mut ChaCha8Rng, i: u64) -> RunConfig {
    let (m, f) = [(4, 1), (7, 2), (10, 3)][rng.random_range(0..3)];
    let mode = Mode::ALL[rng.random_range(0..3)];
    let faulty: BTreeSet<NodeId> = {
        let k = rng.random_range(0..=f);
        let mut s = BTreeSet::new();
        while s.len() < k {
            s.insert(rng.random_range(0..m as NodeId));
        }
        s
    };
    let duration = 40.0;
    let mut windows = Vec::new();
    for &n in &faulty {
        let mut t = rng.random_range(0.0..10.0);
        while t < duration {
            let len = rng.random_range(1.0..12.0);
            windows.push((n, t, t + len));
            t += len + rng.random_range(1.0..10.0);
        }
    }
    RunConfig {
        mode,
        seed: 1000 + i,
        duration,
        nodes: m + rng.random_range(0..3),
        producers: m,
        f,
        round_timeout: 3.0,
        fastpath_timeout: 0.25,
        state_period: 20.0,
        twin_interval: 10.0,
        tx_rate: rng.random_range(5.0..60.0),
        block_size: [100 * KB, 250 * KB, 1_000 * KB][rng.random_range(0..3)],
        faulty: Faulty::Nodes(faulty),
        fault_pattern: if windows.is_empty() {
            FaultMode::None
        } else {
            FaultMode::Windows(windows)
        },
        ..RunConfig::default()
    }
}

/// Quorum and agreement checked from the raw acceptance stream, independently
/// of the simulator's own safety bookkeeping.
fn safety_violations(o: &RunOutput) -> Vec<String> {
    let quorum = 2 * o.config.f + 1;
    let mut bad = Vec::new();
    if !o.safety.is_clean() {
        bad.push(format!("{} {:?}", o.run_id(), o.safety));
    }
    for b in &o.blocks {
        if b.distinct_voters() < quorum {
            bad.push(format!(
                "{} height {} has {} voters",
                o.run_id(),
                b.height,
                b.distinct_voters()
            ));
        }
    }
    let mut by_height: HashMap<u64, _> = HashMap::new();
    for ob in &o.observations {
        if let Observation::BlockAccepted {
            height,
            block,
            voters,
            node,
            ..
        } = ob
        {
            if *voters < quorum {
                bad.push(format!(
                    "{} node {node} accepted height {height} with {voters} voters",
                    o.run_id()
                ));
            }
            if *by_height.entry(*height).or_insert(*block) != *block {
                bad.push(format!(
                    "{} conflicting blocks at height {height}",
                    o.run_id()
                ));
            }
        }
    }
    bad
}

fn max_concurrent_offline(cfg: &RunConfig) -> usize {
    match &cfg.fault_pattern {
        FaultMode::None => 0,
        FaultMode::OddPeriods => cfg.faults().unwrap().faulty().len(),
        FaultMode::Windows(w) => {
            let mut edges: Vec<(f64, i32)> =
                w.iter().flat_map(|&(_, s, e)| [(s, 1), (e, -1)]).collect();
            edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let (mut cur, mut best) = (0, 0);
            for (_, d) in edges {
                cur += d;
                best = best.max(cur);
            }
            best as usize
        }
    }
}

fn random_runs(n: u64, seed: u64) -> Vec<RunOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfgs: Vec<RunConfig> = (0..n).map(|i| random_config(&mut rng, i)).collect();
    cfgs.iter()
        .map(|c| {
            runner::run_with(
                c,
                RunExtras {
                    trace: false,
                    observations: true,
                },
            )
            .expect("random run")
        })
        .collect()
}

fn criterion_3(reference: &[RunOutput], randomized: &[RunOutput]) -> Verdict {
    let bad: Vec<String> = reference
        .iter()
        .chain(randomized)
        .flat_map(safety_violations)
        .collect();
    let acceptances: usize = reference
        .iter()
        .chain(randomized)
        .map(|o| o.safety.acceptances)
        .sum();
    Verdict::new(
        bad.is_empty(),
        format!(
            "{} runs, {acceptances} acceptances, {} violations{}",
            reference.len() + randomized.len(),
            bad.len(),
            bad.first()
                .map(|b| format!(", first: {b}"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_4(runs: &[&RunOutput]) -> Verdict {
    let mut checked = [0, 0];
    let mut worst = (0.0f64, String::new());
    let mut bad = Vec::new();
    for o in runs {
        let f = o.config.f;
        if max_concurrent_offline(&o.config) > f {
            continue;
        }
        // Round-robin can line up f offline proposers back to back, so the
        // three-timeout window only bounds stalls for f <= 2.
        let windows = 3.max(f + 1);
        checked[usize::from(f > 2)] += 1;
        let limit = windows as f64 * o.config.round_timeout;
        if o.max_block_gap / limit > worst.0 {
            worst = (o.max_block_gap / limit, o.run_id());
        }
        if o.max_block_gap >= limit {
            bad.push(format!(
                "{} gap {:.2}s (f={f})",
                o.run_id(),
                o.max_block_gap
            ));
        }
    }
    Verdict::new(
        bad.is_empty(),
        format!(
            "{} runs within 3x round_timeout, {} f=3 runs within 4x; worst gap {:.1}% of its window ({}){}",
            checked[0],
            checked[1],
            worst.0 * 100.0,
            worst.1,
            bad.first().map(|b| format!(", first failure: {b}")).unwrap_or_default()
        ),
    )
}

fn criterion_5() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;
    let scripts: [(NodeId, NodeId, u64, bool); 4] = [
        (3, 7, 1, true),
        (0, 9, 2, true),
        (4, 5, 3, false),
        (1, 8, 4, false),
    ];
    for (x, y, seed, uniform) in scripts {
        let mut cfg = RunConfig {
            mode: Mode::Dynamic,
            seed,
            duration: 100.0,
            ..RunConfig::default()
        };
        cfg.set("fault_windows", &format!("{x}:50-75, {y}:50-75"))
            .unwrap();
        if uniform {
            cfg.bandwidths = vec![1e6];
        }
        let want_delay =
            cfg.base_latency + cfg.msg_overhead as f64 / mean(cfg.bandwidths.iter().copied());
        let out = runner::run(&cfg).expect("scripted run");
        let d = out
            .decisions
            .iter()
            .find(|d| d.interval == 3)
            .expect("interval 3 logged");
        let offline_ok = d.inferred_offline == BTreeSet::from([x, y]);
        let online_ok = out
            .decisions
            .iter()
            .filter(|d| d.interval != 3 && d.observed_blocks > 0)
            .all(|d| d.inferred_offline.is_empty());
        let worst = out
            .decisions
            .iter()
            .flat_map(|d| d.est_delays.values())
            .map(|v| (v - want_delay).abs() / want_delay)
            .fold(0.0, f64::max);
        let expected_nodes: BTreeSet<NodeId> = (0..cfg.producers as NodeId)
            .filter(|n| *n != x && *n != y)
            .collect();
        let nodes_ok = d.est_delays.keys().all(|n| expected_nodes.contains(n));
        let ok = offline_ok && online_ok && nodes_ok && worst <= 0.10;
        pass &= ok;
        notes.push(format!(
            "{{{x},{y}}} -> {:?} delay err {:.2}%{}",
            d.inferred_offline,
            worst * 100.0,
            if ok { "" } else { " FAIL" }
        ));
    }
    Verdict::new(pass, notes.join("; "))
}

/// Metrics recomputed from the acceptance stream and creation times alone.
fn brute_force(o: &RunOutput) -> (usize, usize, Option<f64>, Option<f64>, f64) {
    let mut created: HashMap<TxId, f64> = HashMap::new();
    let mut first: BTreeMap<u64, (f64, Arc<[TxId]>)> = BTreeMap::new();
    for ob in &o.observations {
        match ob {
            Observation::TxCreated { id, t, .. } => {
                created.insert(*id, *t);
            }
            Observation::BlockAccepted { height, txs, t, .. } => {
                let e = first.entry(*height).or_insert((*t, txs.clone()));
                if *t < e.0 {
                    *e = (*t, txs.clone());
                }
            }
        }
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (t, txs) in first.values() {
        for id in txs.iter() {
            sum += t - created[id];
            n += 1;
        }
    }
    let times: Vec<f64> = first.values().map(|v| v.0).collect();
    let mut gaps = 0.0;
    for i in 1..times.len() {
        gaps += times[i] - times[i - 1];
    }
    let ibt = (times.len() >= 2).then(|| gaps / (times.len() - 1) as f64);
    let lat = (n > 0).then(|| sum / n as f64);
    (first.len(), n, lat, ibt, n as f64 / o.config.duration)
}

fn criterion_6(runs: &[RunOutput]) -> Verdict {
    let rel = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * b.abs().max(1e-12),
        _ => false,
    };
    let mut bad = Vec::new();
    for o in runs {
        let (blocks, txs, lat, ibt, thr) = brute_force(o);
        let r = &o.report;
        let ok = blocks == r.blocks
            && txs == r.committed_txs
            && rel(lat, r.avg_tx_latency)
            && rel(ibt, r.avg_inter_block_time)
            && rel(Some(thr), Some(r.throughput));
        if !ok {
            bad.push(format!(
                "{}: oracle ({blocks},{txs},{lat:?},{ibt:?},{thr}) vs {r:?}",
                o.run_id()
            ));
        }
    }
    let blocks: usize = runs.iter().map(|o| o.report.blocks).sum();
    Verdict::new(
        bad.is_empty(),
        format!(
            "{} runs, {blocks} blocks{}",
            runs.len(),
            bad.first()
                .map(|b| format!(", first mismatch: {b}"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_7() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut pass = true;
    let mut checked = 0;
    for mode in Mode::ALL {
        let cfg = RunConfig {
            mode,
            seed: 3,
            ..RunConfig::default()
        };
        for d in &dirs {
            runner::run(&cfg)
                .unwrap()
                .write_outputs(d.path(), false)
                .unwrap();
        }
        for file in ["metrics.csv", "blocks.csv", "decisions.jsonl"] {
            let a = std::fs::read(dirs[0].path().join(file));
            let b = std::fs::read(dirs[1].path().join(file));
            if mode != Mode::Dynamic && file == "decisions.jsonl" {
                continue;
            }
            checked += 1;
            pass &= matches!((&a, &b), (Ok(a), Ok(b)) if a == b);
        }
    }
    Verdict::new(
        pass,
        format!("{checked} artifact pairs compared byte for byte"),
    )
}

fn criterion_8(outs: &[RunOutput]) -> Verdict {
    let mut pass = true;
    let mut notes = Vec::new();
    for o in outs.iter().filter(|o| o.config.mode == Mode::Dynamic) {
        let ts = o.config.state_period;
        let ti = o.config.twin_interval;
        let faulty_period =
            |start: f64| !o.faulty.is_empty() && (start / ts).floor() as i64 % 2 == 1;
        let (mut to_bigfoot, mut to_ibft, mut mismatched) = (0, 0, 0);
        for d in &o.decisions {
            let Some(p) = d.decision else { continue };
            let start = d.t - ti;
            match p {
                ProtocolId::BigFoot if !faulty_period(start) => to_bigfoot += 1,
                ProtocolId::Ibft if faulty_period(start) => to_ibft += 1,
                _ => {}
            }
            let best = [
                (ProtocolId::Ibft, d.pred_latency_ibft),
                (ProtocolId::BigFoot, d.pred_latency_bigfoot),
            ]
            .into_iter()
            .filter_map(|(p, l)| l.map(|l| (p, l)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|x| x.0);
            if best != Some(p) {
                mismatched += 1;
            }
        }
        let ok = to_bigfoot >= 1 && to_ibft >= 1 && mismatched == 0;
        pass &= ok;
        notes.push(format!(
            "seed{}: ->bigfoot(online) {to_bigfoot}, ->ibft(faulty) {to_ibft}, non-argmin {mismatched}",
            o.config.seed
        ));
    }
    Verdict::new(pass, notes.join("; "))
}

fn main() -> ExitCode {
    let (reference, wall) = reference_runs();
    let randomized = random_runs(100, 7);
    let oracle_runs = random_runs(20, 11);

    let mut all_runs: Vec<&RunOutput> = reference.iter().collect();
    all_runs.extend(randomized.iter());

    let verdicts = [
        ("comparative ordering", criterion_1(&reference, wall)),
        ("message-delay contract", criterion_2()),
        ("quorum safety", criterion_3(&reference, &randomized)),
        ("liveness", criterion_4(&all_runs)),
        ("twin inference", criterion_5()),
        ("metrics oracle", criterion_6(&oracle_runs)),
        ("determinism", criterion_7()),
        ("switch behavior", criterion_8(&reference)),
    ];
    let mut failed = 0;
    for (i, (name, v)) in verdicts.iter().enumerate() {
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", verdicts.len());
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
