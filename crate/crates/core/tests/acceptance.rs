//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints one PASS/FAIL line; exits nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use memedebate_core::agents::ChatRole;
use memedebate_core::agreement::{krippendorff_alpha, masi_distance, SetDistance};
use memedebate_core::corpus::{label_distribution, load_manifest, parse_manifest, LoadMode, Manifest};
use memedebate_core::domain::{AgentId, AgentResponse, AnnotationRecord, Confidence, MemeSample, Split, SymptomLabel};
use memedebate_core::metrics::{confusion, report, LabelSets};
use memedebate_core::prompts::PEER_BLOCK_HEADER;
use memedebate_core::protocol::{resolve_consensus, ConsensusResult, Engine, RunConfig, Threshold, TranscriptStore};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::Value;

use SymptomLabel::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

// ---------------------------------------------------------------------------
// Consensus instances (criteria 1 and 2)

/// One agent's vote with confidences on the 0.05 grid, held as twentieths.
#[derive(Clone, Debug)]
struct GridVote {
    id: String,
    /// `None` marks a failed agent.
    picks: Option<BTreeMap<SymptomLabel, u32>>,
}

#[derive(Clone, Debug)]
struct Instance {
    votes: Vec<GridVote>,
    /// Threshold in twentieths.
    t20: u32,
}

const THRESHOLDS_20: [u32; 3] = [6, 10, 14];

fn random_instance(rng: &mut StdRng) -> Instance {
    let n = rng.gen_range(2..=4);
    let votes = (0..n)
        .map(|i| GridVote {
            id: format!("agent-{i}"),
            picks: (!rng.gen_bool(0.15)).then(|| {
                let mut picks = BTreeMap::new();
                for label in SymptomLabel::ALL {
                    if rng.gen_bool(0.5) {
                        picks.insert(label, rng.gen_range(0..=20));
                    }
                }
                picks
            }),
        })
        .collect();
    Instance {
        votes,
        t20: *THRESHOLDS_20.choose(rng).unwrap(),
    }
}

fn responses(inst: &Instance) -> Vec<Option<AgentResponse>> {
    inst.votes
        .iter()
        .map(|v| {
            v.picks.as_ref().map(|p| AgentResponse {
                agent_id: AgentId::from(v.id.as_str()),
                round: 2,
                predictions: p
                    .iter()
                    .map(|(l, k)| (*l, Confidence::new(*k as f64 / 20.0).unwrap()))
                    .collect(),
                explanation: String::new(),
            })
        })
        .collect()
}

fn threshold(t20: u32) -> Threshold {
    Threshold::new(t20 as f64 / 20.0).unwrap()
}

fn engine_consensus(inst: &Instance, t20: u32) -> ConsensusResult {
    let rs = responses(inst);
    resolve_consensus(rs.iter().map(Option::as_ref), threshold(t20)).unwrap()
}

/// Brute-force oracle: integer sums of twentieths per label.
fn oracle(inst: &Instance, t20: u32) -> (BTreeMap<SymptomLabel, f64>, BTreeSet<SymptomLabel>) {
    let n = inst.votes.len() as u32;
    let mut scores = BTreeMap::new();
    let mut labels = BTreeSet::new();
    for label in SymptomLabel::ALL {
        let mut sum = 0u32;
        for vote in &inst.votes {
            if let Some(picks) = &vote.picks {
                if let Some(k) = picks.get(&label) {
                    sum += k;
                }
            }
        }
        scores.insert(label, sum as f64 / (20 * n) as f64);
        if sum > t20 * n {
            labels.insert(label);
        }
    }
    (scores, labels)
}

fn instances() -> Vec<Instance> {
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    (0..1000).map(|_| random_instance(&mut rng)).collect()
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let all = instances();
    let mut labels_checked = 0;
    for (i, inst) in all.iter().enumerate() {
        let got = engine_consensus(inst, inst.t20);
        let (scores, labels) = oracle(inst, inst.t20);
        check(got.final_labels == labels, || format!("instance {i}: labels {:?} vs oracle {labels:?}", got.final_labels))?;
        check(got.scores == scores, || format!("instance {i}: scores differ from oracle"))?;
        labels_checked += 7;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("1000 instances, {labels_checked} label decisions identical to oracle, {elapsed:.2?}"))
}

fn criterion_2() -> Outcome {
    let all = instances();
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let mut checks = 0usize;
    for (i, inst) in all.iter().enumerate() {
        let base = engine_consensus(inst, inst.t20);

        let mut shuffled = inst.clone();
        shuffled.votes.shuffle(&mut rng);
        for (j, v) in shuffled.votes.iter_mut().enumerate() {
            v.id = format!("renamed-{}", 9 - j);
        }
        check(engine_consensus(&shuffled, inst.t20) == base, || format!("instance {i}: permutation changed result"))?;
        checks += 1;

        for pair in THRESHOLDS_20.windows(2) {
            let low = engine_consensus(inst, pair[0]);
            let high = engine_consensus(inst, pair[1]);
            check(high.final_labels.is_subset(&low.final_labels), || {
                format!("instance {i}: t={} adds labels over t={}", pair[1], pair[0])
            })?;
            checks += 1;
        }

        for k in 0..inst.votes.len() {
            let mut failed = inst.clone();
            failed.votes[k].picks = None;
            let worse = engine_consensus(&failed, inst.t20);
            check(worse.final_labels.is_subset(&base.final_labels), || {
                format!("instance {i}: failing agent {k} added a label")
            })?;
            check(SymptomLabel::ALL.iter().all(|l| worse.score(*l) <= base.score(*l)), || {
                format!("instance {i}: failing agent {k} raised a score")
            })?;
            checks += 1;
        }
        check(base.scores.values().all(|s| (0.0..=1.0).contains(s)), || format!("instance {i}: score out of range"))?;
    }
    Ok(format!("{checks} property checks, 0 violations"))
}

// ---------------------------------------------------------------------------
// Scripted runs (criteria 3, 4 and 9)

struct Run {
    scratch: Scratch,
    manifest: Manifest,
}

impl Run {
    fn new(samples: &[MemeSample], fixtures: &[memedebate_core::agents::FixtureRecord]) -> Self {
        let scratch = Scratch::new(samples, fixtures);
        let manifest = load_manifest(&scratch.path("manifest.jsonl"), None, LoadMode::Inference).unwrap();
        Self { scratch, manifest }
    }

    fn engine(&self, rounds: u32, threshold: f64) -> Engine {
        let run = RunConfig::from_toml(&scripted_config("fixtures.jsonl", rounds, threshold), self.scratch.dir.path())
            .expect("config");
        Engine::from_run_config(&run).expect("engine")
    }

    fn store(&self, name: &str) -> TranscriptStore {
        TranscriptStore::new(self.scratch.path(name))
    }
}

fn criterion_3() -> Outcome {
    let ids = ["s1", "s2", "s3", "s4"];
    let samples: Vec<_> = ids.iter().map(|id| sample(id, &[])).collect();
    let run = Run::new(&samples, &sentinel_fixtures(&ids, 2));
    let engine = run.engine(2, 0.5);
    let (a, b) = (run.store("a"), run.store("b"));
    let first = engine.run_manifest(&run.manifest, &a, false);
    engine.run_manifest(&run.manifest, &b, false);
    check(first.summary.succeeded == ids.len(), || format!("{} samples failed", first.summary.failed))?;

    let mut prompts_checked = 0;
    for t in first.transcripts() {
        check(t.responses().count() == 9, || format!("{}: {} responses", t.sample_id, t.responses().count()))?;
        t.verify().map_err(|e| e.to_string())?;
        for track in &t.agents {
            let rounds: Vec<u32> = track.rounds.iter().map(|r| r.round).collect();
            check(rounds == [0, 1, 2], || format!("{}: rounds {rounds:?}", track.agent_id))?;
            let me = track.agent_id.as_str();
            let discussion: Vec<&str> = track
                .turns
                .iter()
                .filter(|t| t.role == ChatRole::User && t.content.contains(PEER_BLOCK_HEADER))
                .map(|t| t.content.as_str())
                .collect();
            check(discussion.len() == 2, || format!("{me}: {} discussion prompts", discussion.len()))?;
            for (i, prompt) in discussion.iter().enumerate() {
                let prior = i as u32;
                check(prompt.matches(PEER_BLOCK_HEADER).count() == 2, || format!("{me}: peer block count"))?;
                check(!prompt.contains(&sentinel(me, prior)), || format!("{me}: sees its own response"))?;
                let peers_seen = AGENTS
                    .iter()
                    .filter(|(p, _)| *p != me && prompt.contains(&sentinel(p, prior)))
                    .count();
                check(peers_seen == 2, || format!("{me}: saw {peers_seen} peer sentinels"))?;
                prompts_checked += 1;
            }
        }
    }
    for s in &run.manifest.samples {
        let left = fs::read(a.path_for(&s.id)).map_err(|e| e.to_string())?;
        let right = fs::read(b.path_for(&s.id)).map_err(|e| e.to_string())?;
        check(left == right, || format!("{}: transcripts differ between runs", s.id))?;
    }
    Ok(format!(
        "{} transcripts x 9 responses, {prompts_checked} discussion prompts with 2 foreign peer blocks, byte-identical reruns",
        ids.len()
    ))
}

/// One agent alone flags Self-Harm at round 0 and the others follow, or not.
fn persuasion_fixtures(persuaded: bool) -> Vec<memedebate_core::agents::FixtureRecord> {
    let mut out = Vec::new();
    for r in 0..=2u32 {
        out.push(record("fig", "A1", r, reply(&[("SH", 0.9), ("FD", 0.8)], "the caption hints at self-harm")));
        let (a2, a3) = match (persuaded, r) {
            (true, 1) => (reply(&[("FD", 0.7), ("SH", 0.5)], "reconsidering"), reply(&[("FD", 0.6)], "still unsure")),
            (true, 2) => (
                reply(&[("FD", 0.7), ("SH", 0.7)], "agree on self-harm"),
                reply(&[("FD", 0.6), ("SH", 0.6)], "agree on self-harm"),
            ),
            _ => (reply(&[("FD", 0.7)], "only sadness"), reply(&[("FD", 0.6)], "only sadness")),
        };
        out.push(record("fig", "A2", r, a2));
        out.push(record("fig", "A3", r, a3));
    }
    out
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    for (persuaded, expected_score, expect_sh) in [(true, 2.2 / 3.0, true), (false, 0.3, false)] {
        let run = Run::new(&[sample("fig", &[])], &persuasion_fixtures(persuaded));
        let report = run.engine(2, 0.5).run_manifest(&run.manifest, &run.store("out"), false);
        let t = report.transcripts().next().ok_or("no transcript")?;
        let score = t.consensus.score(SelfHarm);
        // Hand computation: (0.9 + 0.7 + 0.6) / 3 = 11/15, and 0.9 / 3 = 3/10.
        let hand = if persuaded { 11.0 / 15.0 } else { 3.0 / 10.0 };
        check(score == hand, || format!("SH score {score} != hand value {hand}"))?;
        check((score - expected_score).abs() < 1e-15, || format!("SH score {score}"))?;
        check(t.consensus.final_labels.contains(&SelfHarm) == expect_sh, || {
            format!("SH membership wrong (persuaded = {persuaded})")
        })?;
        let round0_sh = t
            .agents
            .iter()
            .filter(|a| a.rounds[0].outcome.response().is_some_and(|r| r.predicted_labels().contains(&SelfHarm)))
            .count();
        check(round0_sh == 1, || format!("{round0_sh} agents flag SH at round 0"))?;
        lines.push(format!("{} SH={score:.4}", if persuaded { "persuaded" } else { "unpersuaded" }));
    }
    Ok(lines.join(", "))
}

fn criterion_9() -> Outcome {
    let ids = ["r1", "r2", "r3", "r4", "r5", "r6"];
    let samples: Vec<_> = ids.iter().map(|id| sample(id, &[])).collect();
    let run = Run::new(&samples, &sentinel_fixtures(&ids, 2));
    let store = run.store("out");
    let cold = run.engine(2, 0.3).run_manifest(&run.manifest, &store, true);
    check(cold.summary.agent_invocations == 54, || format!("cold run made {} calls", cold.summary.agent_invocations))?;

    let engine = run.engine(2, 0.3);
    let warm = engine.run_manifest(&run.manifest, &store, true);
    check(warm.summary.agent_invocations == 0 && engine.invocations() == 0, || {
        format!("resumed run made {} calls", warm.summary.agent_invocations)
    })?;
    check(warm.summary.cache_hits == ids.len(), || format!("{} cache hits", warm.summary.cache_hits))?;

    let stricter = run.engine(2, 0.6);
    let recomputed = stricter.run_manifest(&run.manifest, &store, true);
    check(stricter.invocations() == 0, || "threshold change re-invoked agents".into())?;
    check(recomputed.summary.consensus_recomputed == ids.len(), || {
        format!("{} recomputed", recomputed.summary.consensus_recomputed)
    })?;
    let mut shrunk = 0;
    for (old, new) in cold.transcripts().zip(recomputed.transcripts()) {
        check(new.consensus.final_labels.is_subset(&old.consensus.final_labels), || {
            format!("{}: labels grew with a higher threshold", new.sample_id)
        })?;
        new.verify().map_err(|e| e.to_string())?;
        shrunk += old.consensus.final_labels.len() - new.consensus.final_labels.len();
    }
    Ok(format!(
        "resume: 0 calls, {} cache hits; t 0.3 -> 0.6: {} recomputed, 0 calls, {shrunk} labels dropped",
        warm.summary.cache_hits, recomputed.summary.consensus_recomputed
    ))
}

// ---------------------------------------------------------------------------
// Metrics (criterion 5)

/// Exact rational with a positive denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Q(i128, i128);

impl Q {
    fn new(n: i128, d: i128) -> Self {
        if d == 0 {
            return Q(0, 1);
        }
        let g = gcd(n.abs(), d.abs()).max(1);
        Q(n / g, d / g)
    }
    fn add(self, o: Q) -> Q {
        Q::new(self.0 * o.1 + o.0 * self.1, self.1 * o.1)
    }
    fn mul(self, o: Q) -> Q {
        Q::new(self.0 * o.0, self.1 * o.1)
    }
    fn div(self, o: Q) -> Q {
        if o.0 == 0 {
            Q(0, 1)
        } else {
            Q::new(self.0 * o.1, self.1 * o.0)
        }
    }
    fn f64(self) -> f64 {
        self.0 as f64 / self.1 as f64
    }
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

struct RefScores {
    per_label_f1: Vec<Q>,
    macro_f1: Q,
    micro_f1: Q,
    weighted_f1: Q,
}

/// Reference implementation over raw label sets, in exact rationals. F1 uses
/// the 2tp / (2tp + fp + fn) form.
fn reference(gold: &LabelSets, pred: &LabelSets) -> Option<RefScores> {
    let mut f1s = Vec::new();
    let (mut tp_all, mut fp_all, mut fn_all) = (0i128, 0i128, 0i128);
    let mut weighted = Q(0, 1);
    let mut support_all = 0i128;
    for label in SymptomLabel::ALL {
        let (mut tp, mut fp, mut fn_) = (0i128, 0i128, 0i128);
        for (id, g) in gold {
            let p = &pred[id];
            tp += (g.contains(&label) && p.contains(&label)) as i128;
            fp += (!g.contains(&label) && p.contains(&label)) as i128;
            fn_ += (g.contains(&label) && !p.contains(&label)) as i128;
        }
        let f1 = Q::new(2 * tp, 2 * tp + fp + fn_);
        weighted = weighted.add(Q(tp + fn_, 1).mul(f1));
        support_all += tp + fn_;
        tp_all += tp;
        fp_all += fp;
        fn_all += fn_;
        f1s.push(f1);
    }
    if support_all == 0 {
        return None;
    }
    let macro_f1 = f1s.iter().fold(Q(0, 1), |a, b| a.add(*b)).div(Q(7, 1));
    Some(RefScores {
        per_label_f1: f1s,
        macro_f1,
        micro_f1: Q::new(2 * tp_all, 2 * tp_all + fp_all + fn_all),
        weighted_f1: weighted.div(Q(support_all, 1)),
    })
}

fn criterion_5() -> Outcome {
    let sets = |rows: &[(&str, &[SymptomLabel])]| -> LabelSets {
        rows.iter().map(|(k, v)| (k.to_string(), v.iter().copied().collect())).collect()
    };
    let gold = sets(&[("m1", &[FeelingDown, SleepingDisorder]), ("m2", &[FeelingDown])]);
    let pred = sets(&[("m1", &[FeelingDown]), ("m2", &[FeelingDown, LowSelfEsteem])]);
    let r = report(&confusion(&gold, &pred).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let exact = reference(&gold, &pred).ok_or("no support")?;
    check(exact.macro_f1 == Q(1, 7), || format!("reference macro {:?}", exact.macro_f1))?;
    check(exact.micro_f1 == Q(2, 3), || format!("reference micro {:?}", exact.micro_f1))?;
    check(exact.weighted_f1 == Q(2, 3), || format!("reference weighted {:?}", exact.weighted_f1))?;
    check(r.macro_avg.f1 == 1.0 / 7.0, || format!("macro {}", r.macro_avg.f1))?;
    check(r.micro_avg.f1 == 2.0 / 3.0, || format!("micro {}", r.micro_avg.f1))?;
    check(r.weighted_avg.f1 == 2.0 / 3.0, || format!("weighted {}", r.weighted_avg.f1))?;

    let mut rng = StdRng::seed_from_u64(0x5eed_0005);
    let mut compared = 0;
    let mut worst = 0.0f64;
    while compared < 100 {
        let n = rng.gen_range(1..=20);
        let mut gold = LabelSets::new();
        let mut pred = LabelSets::new();
        for s in 0..n {
            let pick = |rng: &mut StdRng| -> BTreeSet<SymptomLabel> {
                SymptomLabel::ALL.into_iter().filter(|_| rng.gen_bool(0.3)).collect()
            };
            gold.insert(format!("s{s}"), pick(&mut rng));
            pred.insert(format!("s{s}"), pick(&mut rng));
        }
        let Some(exact) = reference(&gold, &pred) else { continue };
        let r = report(&confusion(&gold, &pred).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let mut diffs = vec![
            (r.macro_avg.f1 - exact.macro_f1.f64()).abs(),
            (r.micro_avg.f1 - exact.micro_f1.f64()).abs(),
            (r.weighted_avg.f1 - exact.weighted_f1.f64()).abs(),
        ];
        for (l, q) in SymptomLabel::ALL.iter().zip(&exact.per_label_f1) {
            diffs.push((r.f1(*l) - q.f64()).abs());
        }
        let max = diffs.into_iter().fold(0.0, f64::max);
        check(max <= 1e-9, || format!("instance {compared}: deviation {max:e}"))?;
        worst = worst.max(max);
        compared += 1;
    }
    Ok(format!(
        "worked fixture macro 1/7, micro 2/3, weighted 2/3 exact; 100 random instances, max deviation {worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Agreement (criterion 6)

fn set(ls: &[SymptomLabel]) -> BTreeSet<SymptomLabel> {
    ls.iter().copied().collect()
}

fn unit(id: &str, anns: &[&[SymptomLabel]]) -> AnnotationRecord {
    AnnotationRecord {
        unit_id: id.into(),
        annotations: anns.iter().enumerate().map(|(i, ls)| (format!("ann{i}"), set(ls))).collect(),
    }
}

/// MASI straight from the definition: 1 - J * M, in exact rationals.
fn masi_oracle(a: &BTreeSet<SymptomLabel>, b: &BTreeSet<SymptomLabel>) -> Q {
    let inter = a.intersection(b).count() as i128;
    let union = a.union(b).count() as i128;
    let m = if a == b {
        Q(1, 1)
    } else if a.is_subset(b) || b.is_subset(a) {
        Q(2, 3)
    } else if inter > 0 {
        Q(1, 3)
    } else {
        Q(0, 1)
    };
    Q(1, 1).add(Q(-1, 1).mul(Q::new(inter, union).mul(m)))
}

fn criterion_6() -> Outcome {
    let fd = set(&[FeelingDown]);
    let fd_sd = set(&[FeelingDown, SleepingDisorder]);
    let fd_lse = set(&[FeelingDown, LowSelfEsteem]);
    let d1 = masi_distance(&fd, &fd_sd).map_err(|e| e.to_string())?;
    let d2 = masi_distance(&fd_sd, &fd_lse).map_err(|e| e.to_string())?;
    check(masi_oracle(&fd, &fd_sd) == Q(2, 3) && d1 == 2.0 / 3.0, || format!("{{FD}} vs {{FD,SD}} = {d1}"))?;
    check(masi_oracle(&fd_sd, &fd_lse) == Q(8, 9) && d2 == 8.0 / 9.0, || format!("{{FD,SD}} vs {{FD,LSE}} = {d2}"))?;

    let perfect = [
        unit("p1", &[&[FeelingDown], &[FeelingDown]]),
        unit("p2", &[&[SelfHarm, LowSelfEsteem], &[SelfHarm, LowSelfEsteem], &[SelfHarm, LowSelfEsteem]]),
        unit("p3", &[&[SleepingDisorder], &[SleepingDisorder]]),
    ];
    let alpha_perfect = krippendorff_alpha(&perfect, SetDistance::Masi).map_err(|e| e.to_string())?.alpha;
    check(alpha_perfect == 1.0, || format!("perfect agreement alpha = {alpha_perfect}"))?;

    let fixture = [
        unit("u1", &[&[FeelingDown], &[FeelingDown]]),
        unit("u2", &[&[SleepingDisorder], &[SleepingDisorder, FeelingDown]]),
        unit("u3", &[&[SelfHarm], &[SelfHarm]]),
    ];
    // Exhaustive enumeration: 3 within-unit pairs, 15 pooled pairs.
    let values: Vec<BTreeSet<SymptomLabel>> = fixture.iter().flat_map(|u| u.annotations.values().cloned()).collect();
    let mut within = Q(0, 1);
    let mut within_pairs = 0;
    for u in &fixture {
        let vs: Vec<_> = u.annotations.values().collect();
        for i in 0..vs.len() {
            for j in i + 1..vs.len() {
                within = within.add(masi_oracle(vs[i], vs[j]));
                within_pairs += 1;
            }
        }
    }
    let mut pooled = Q(0, 1);
    let mut pooled_pairs = 0;
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            pooled = pooled.add(masi_oracle(&values[i], &values[j]));
            pooled_pairs += 1;
        }
    }
    check(within_pairs == 3 && pooled_pairs == 15, || "pair counts".into())?;
    let d_o = within.div(Q(within_pairs, 1));
    let d_e = pooled.div(Q(pooled_pairs, 1));
    let alpha = Q(1, 1).add(Q(-1, 1).mul(d_o.div(d_e)));
    let got = krippendorff_alpha(&fixture, SetDistance::Masi).map_err(|e| e.to_string())?;
    check((got.alpha - alpha.f64()).abs() <= 1e-12, || format!("alpha {} vs oracle {:?}", got.alpha, alpha))?;
    check((got.observed_disagreement - d_o.f64()).abs() <= 1e-12, || "D_o".into())?;
    check((got.expected_disagreement - d_e.f64()).abs() <= 1e-12, || "D_e".into())?;
    Ok(format!(
        "MASI 2/3 and 8/9 exact; perfect alpha = 1; 3-unit fixture alpha = {:.6} (oracle {}/{})",
        got.alpha, alpha.0, alpha.1
    ))
}

// ---------------------------------------------------------------------------
// Corpus (criterion 7)

/// Published test split: label instance counts and number of samples.
const TABLE1_TEST: [(SymptomLabel, usize); 7] = [
    (LackOfInterest, 66),
    (FeelingDown, 219),
    (EatingDisorder, 85),
    (SleepingDisorder, 78),
    (LowSelfEsteem, 114),
    (ConcentrationProblem, 73),
    (SelfHarm, 82),
];
const TABLE1_TEST_TOTAL: usize = 520;

/// Spreads the label instances over 520 samples: instances in canonical label
/// order, instance k going to sample k mod 520. No label run exceeds 520, so
/// a sample never receives the same label twice.
fn table1_manifest() -> String {
    let mut labels: Vec<BTreeSet<SymptomLabel>> = vec![BTreeSet::new(); TABLE1_TEST_TOTAL];
    let mut k = 0;
    for label in SymptomLabel::ALL {
        let count = TABLE1_TEST.iter().find(|(l, _)| *l == label).unwrap().1;
        for _ in 0..count {
            labels[k % TABLE1_TEST_TOTAL].insert(label);
            k += 1;
        }
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, ls)| {
            let mut s = MemeSample::new(format!("test-{i:03}"), format!("img/{i:03}.jpg"), Split::Test);
            s.labels = Some(ls);
            serde_json::to_string(&s).unwrap() + "\n"
        })
        .collect()
}

fn criterion_7() -> Outcome {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    let invalid = fs::read_to_string(data.join("mini_manifest_invalid.jsonl")).map_err(|e| e.to_string())?;
    let findings = match parse_manifest(&invalid, LoadMode::Evaluation) {
        Ok(_) => return Err("invalid mini-manifest accepted".into()),
        Err(f) => f,
    };
    let text: Vec<String> = findings.iter().map(|f| f.to_string()).collect();
    let has = |needle: &str| text.iter().any(|t| t.contains(needle));
    check(has("duplicate") && has("m01"), || format!("duplicate id not reported: {text:?}"))?;
    check(has("`XYZ`"), || format!("unknown code not reported: {text:?}"))?;
    check(has("`LOE`") && has("Lack of Energy"), || format!("retired code not reported: {text:?}"))?;

    let mini = load_manifest(&data.join("mini_manifest.jsonl"), None, LoadMode::Evaluation).map_err(|e| e.to_string())?;
    let dist = label_distribution(&mini);
    // Hand count of tests/data/mini_manifest.jsonl.
    type Row<'a> = (Split, &'a [(SymptomLabel, usize)], usize);
    let expected: [Row; 3] = [
        (Split::Train, &[(FeelingDown, 2), (SleepingDisorder, 1), (LowSelfEsteem, 1), (SelfHarm, 1)], 3),
        (Split::Test, &[(FeelingDown, 2), (LackOfInterest, 1), (ConcentrationProblem, 1), (EatingDisorder, 1), (SelfHarm, 1)], 3),
        (Split::Validation, &[(SleepingDisorder, 1), (FeelingDown, 1), (LowSelfEsteem, 1)], 2),
    ];
    for (split, counts, total) in expected {
        let row = dist.split(split);
        check(row.total == total, || format!("{split}: total {}", row.total))?;
        for label in SymptomLabel::ALL {
            let want = counts.iter().find(|(l, _)| *l == label).map_or(0, |c| c.1);
            check(row.count(label) == want, || format!("{split} {label}: {} != {want}", row.count(label)))?;
        }
    }

    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = scratch.path().join("table1_test.jsonl");
    fs::write(&path, table1_manifest()).map_err(|e| e.to_string())?;
    let manifest = load_manifest(&path, None, LoadMode::Evaluation).map_err(|e| e.to_string())?;
    let dist = label_distribution(&manifest);
    let row = dist.split(Split::Test);
    for (label, count) in TABLE1_TEST {
        check(row.count(label) == count, || format!("{label}: {} != {count}", row.count(label)))?;
    }
    check(row.total == TABLE1_TEST_TOTAL, || format!("total {}", row.total))?;
    let table = dist.render_table();
    let test_line = table.lines().find(|l| l.starts_with("Test")).unwrap_or_default();
    let numbers: Vec<usize> = test_line.split_whitespace().skip(1).filter_map(|x| x.parse().ok()).collect();
    check(numbers == [66, 219, 85, 78, 114, 73, 82, 520], || format!("rendered test row: {test_line}"))?;
    Ok(format!(
        "{} findings on invalid mini-manifest; mini distribution matches hand count; Test row {}",
        findings.len(),
        test_line.split_whitespace().skip(1).collect::<Vec<_>>().join(" ")
    ))
}

// ---------------------------------------------------------------------------
// Non-reproducibility statement and remote smoke test (criterion 8)

const NON_REPRODUCIBILITY: &str = "The published headline results (macro-F1 72.73, +7.55% over the prior best system, \
and the per-model single-agent rows) depend on proprietary closed-source models and the full private corpus; \
they are not reproducible at desk scale. End-to-end acceptance rests on criteria 1-7 and 9 plus the remote smoke run below.";

fn criterion_8() -> Outcome {
    println!("     note: {NON_REPRODUCIBILITY}");
    let server = MockServer::start(Box::new(|i, body: &Value| {
        // The very first request gets a transient error and is retried.
        if i == 0 {
            return (503, "warming up".into());
        }
        let system = body["messages"][0]["content"].as_str().unwrap_or("");
        let c = if system.contains("cultur") { 0.9 } else { 0.7 };
        (200, completion(&reply(&[("FD", c), ("LSE", 0.2)], "remote explanation")))
    }));
    std::env::set_var("MEMEDEBATE_ACCEPTANCE_KEY", "token");
    let scratch = Scratch::new(&[sample("w1", &[]), sample("w2", &[])], &[]);
    fs::create_dir_all(scratch.path("img")).map_err(|e| e.to_string())?;
    for id in ["w1", "w2"] {
        fs::write(scratch.path(&format!("img/{id}.png")), [137u8, 80, 78, 71]).map_err(|e| e.to_string())?;
    }
    let mut config = String::from("rounds = 1\nthreshold = 0.5\n");
    for (id, aspect) in AGENTS {
        config.push_str(&format!(
            "\n[[agents]]\nid = \"{id}\"\naspect = \"{aspect}\"\nbackend = \"remote\"\nbase_url = \"{}\"\n\
             model = \"any-chat-model\"\napi_key_env = \"MEMEDEBATE_ACCEPTANCE_KEY\"\nbackoff_ms = 1\n",
            server.url
        ));
    }
    let run = RunConfig::from_toml(&config, scratch.dir.path()).map_err(|e| e.to_string())?;
    let engine = Engine::from_run_config(&run).map_err(|e| e.to_string())?;
    let manifest = load_manifest(&scratch.path("manifest.jsonl"), None, LoadMode::Inference).map_err(|e| e.to_string())?;
    let report = engine.run_manifest(&manifest, &TranscriptStore::new(scratch.path("out")), false);
    check(report.summary.succeeded == 2 && report.summary.agent_failures == 0, || {
        format!("{:?}", report.summary)
    })?;
    for t in report.transcripts() {
        check(t.responses().count() == 6, || format!("{}: {} responses", t.sample_id, t.responses().count()))?;
        check(t.consensus.final_labels == set(&[FeelingDown]), || format!("{:?}", t.consensus.final_labels))?;
    }
    Ok(format!(
        "statement recorded; remote 2-sample run against a local chat-completions endpoint: {} requests, 1 retried",
        server.request_count()
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("consensus matches brute-force oracle", criterion_1),
        ("consensus invariants", criterion_2),
        ("protocol structure with scripted agents", criterion_3),
        ("persuasion fixture", criterion_4),
        ("metrics oracle", criterion_5),
        ("agreement fixtures", criterion_6),
        ("corpus validation and distribution", criterion_7),
        ("non-reproducibility statement and remote smoke run", criterion_8),
        ("resumption", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
