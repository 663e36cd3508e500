//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any fails. Expected values come from oracles written
//! here, independent of the library's own formulas.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sbb84::batch::{run_sessions, RunReport};
use sbb84::gf2::{BitMatrix, BitVec};
use sbb84::privacy::{self, CodeSpec};
use sbb84::qsim::{ChannelParams, EveStrategy};
use sbb84::reconcile::{crude_round, PairingPlan};
use sbb84::session::{run_session, ProtocolConfig, SessionResult, Stage};
use sbb84::transcript::{Party, Transcript};
use sbb84::verify::{gen_parity_strings, verify_subset, ParityStringSet, VerifyOutcome};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_limit(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

fn noisy_copy(bits: &BitVec, eps: f64, rng: &mut ChaCha8Rng) -> BitVec {
    let mut out = bits.clone();
    for i in 0..out.len() {
        if rng.random_bool(eps) {
            out.flip(i);
        }
    }
    out
}

fn noiseless_correctness() -> Check {
    let config = ProtocolConfig::default();
    let start = Instant::now();
    let results = run_sessions(&config, 200, 1000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let successes = results.iter().filter(|r| r.keys_match() == Some(true)).count();
    let rejected: usize = results.iter().map(|r| r.stats.rejected).sum();
    ensure(successes == 200, || {
        format!("{successes}/200 sessions produced matching keys")
    })?;
    ensure(rejected == 0, || format!("verification rejected {rejected} subsets"))?;
    within_limit(elapsed, Duration::from_secs(10))?;
    Ok(format!(
        "200/200 matching keys at n = {}, 0 rejections, {elapsed:.2?}",
        config.n
    ))
}

fn crude_residual_law() -> Check {
    let eps = 0.05;
    let len = 200_000;
    // Survivor is wrong iff both bits of an agreeing pair are wrong.
    let oracle = eps * eps / ((1.0 - eps) * (1.0 - eps) + eps * eps);
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alice = BitVec::random(len, &mut rng);
    let bob = noisy_copy(&alice, eps, &mut rng);
    let plan = PairingPlan::random(len, &mut rng);
    let (ka, kb, stats) = crude_round(&alice, &bob, &plan, 0, &mut Transcript::new()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let kept = ka.len();
    let rate = ka.xor(&kb).unwrap().count_ones() as f64 / kept as f64;
    let sigma = binomial_sigma(oracle, kept);
    ensure((oracle - 2.762e-3).abs() < 5e-7, || format!("oracle {oracle}"))?;
    ensure((rate - oracle).abs() <= 3.0 * sigma, || {
        format!("rate {rate:.4e} vs oracle {oracle:.4e} ± {:.2e}", 3.0 * sigma)
    })?;
    ensure(rate > eps * eps, || format!("rate {rate:.4e} not above eps^2"))?;
    ensure(stats.kept == kept, || "stats disagree with output".into())?;
    within_limit(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "kept {kept}, rate {rate:.4e} vs oracle {oracle:.4e} (3σ {:.1e}), > ε² = {:.1e}, {elapsed:.2?}",
        3.0 * sigma,
        eps * eps
    ))
}

/// Miss probability of one verification pass over every possible string
/// draw, for every nonzero error pattern on `n_s` bits.
fn exhaustive_miss(n_s: usize, m: usize) -> f64 {
    let pattern = |value: u64, len: usize| -> BitVec { (0..len).map(|i| value >> i & 1 == 1).collect() };
    let lens: Vec<usize> = (0..m).map(|j| n_s - j).collect();
    let draws: usize = lens.iter().map(|&l| (1usize << l) - 1).product();
    let alice = BitVec::zeros(n_s);
    let mut worst: f64 = 0.0;
    for e in 1..(1u64 << n_s) {
        let bob = pattern(e, n_s);
        let mut misses = 0usize;
        for d in 0..draws {
            let mut rest = d;
            let strings = lens
                .iter()
                .map(|&l| {
                    let count = (1usize << l) - 1;
                    let v = rest % count + 1;
                    rest /= count;
                    pattern(v as u64, l)
                })
                .collect();
            let set = ParityStringSet::new(strings).unwrap();
            if let VerifyOutcome::Accept { alice: a, bob: b } =
                verify_subset(&alice, &bob, &set, 0, &mut Transcript::new()).unwrap()
            {
                misses += (a != b) as usize;
            }
        }
        worst = worst.max(misses as f64 / draws as f64);
    }
    worst
}

fn verification_soundness() -> Check {
    let (n_s, m, subsets) = (40, 8, 100_000);
    let bound = 0.5f64.powi(m as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut accepted = 0usize;
    for s in 0..subsets {
        let alice = BitVec::random(n_s, &mut rng);
        let mut bob = alice.clone();
        bob.flip(rng.random_range(0..n_s));
        let mut t = Transcript::new();
        let strings = gen_parity_strings(n_s, m, s, &mut rng, &mut t).unwrap();
        accepted += verify_subset(&alice, &bob, &strings, s, &mut t).unwrap().is_accept() as usize;
    }
    let frac = accepted as f64 / subsets as f64;
    let sigma = binomial_sigma(bound, subsets);
    ensure(frac <= bound + 3.0 * sigma, || {
        format!("acceptance {frac:.4e} above {bound:.4e} + 3σ")
    })?;
    let worst = exhaustive_miss(6, 3);
    ensure(worst <= 0.125, || format!("exhaustive miss {worst} > 1/8"))?;
    Ok(format!(
        "accepted {accepted}/{subsets} = {frac:.3e} ≤ 2^-8 = {bound:.3e} (+3σ {:.1e}); exhaustive n_s=6, m=3 worst miss {worst:.4}",
        3.0 * sigma
    ))
}

fn phase_update_formula() -> Check {
    let samples = 1_000_000;
    let conditional = |params: ChannelParams, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut kept, mut phase) = (0usize, 0usize);
        for _ in 0..samples {
            let p = params.sample(&mut rng);
            if !p.flips_bit() {
                kept += 1;
                phase += p.flips_phase() as usize;
            }
        }
        (kept, phase)
    };
    let (eps_b, eps_p) = (0.2, 0.2);
    let oracle = eps_p / (1.0 - eps_b);
    let (kept, phase) = conditional(ChannelParams::new(eps_b, eps_p, 0.0).unwrap(), 4);
    let rate = phase as f64 / kept as f64;
    let sigma = binomial_sigma(oracle, kept);
    ensure((rate - oracle).abs() <= 3.0 * sigma, || {
        format!("rate {rate} vs {oracle} ± {}", 3.0 * sigma)
    })?;
    let lib = sbb84::analysis::phase_update(eps_b, eps_p, 0.0).map_err(|e| e.to_string())?;
    ensure((lib.upper_bound - oracle).abs() < 1e-12, || {
        format!("library bound {}", lib.upper_bound)
    })?;

    let (kept0, phase0) = conditional(ChannelParams::new(0.1, 0.1, 0.1).unwrap(), 5);
    ensure(phase0 == 0, || format!("{phase0} phase flips among {kept0} unflipped"))?;
    let exact = sbb84::analysis::phase_update(0.1, 0.1, 0.1)
        .map_err(|e| e.to_string())?
        .exact;
    ensure(exact == 0.0, || format!("exact update {exact}"))?;
    Ok(format!(
        "conditional rate {rate:.4} vs ε_p/(1−ε_b) = {oracle} (3σ {:.1e}); ε_bp = ε_b = ε_p = 0.1 gives 0/{kept0}",
        3.0 * sigma
    ))
}

fn subset_discard_bracket() -> Check {
    let (eps, n_s, m, subsets) = (1e-3, 100, 30, 100_000);
    let lo = n_s as f64 * eps * (1.0 - eps).powi(n_s as i32 - 1);
    let hi = 1.0 - (1.0 - eps).powi(n_s as i32);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut rejected = 0usize;
    for s in 0..subsets {
        let alice = BitVec::random(n_s, &mut rng);
        let bob = noisy_copy(&alice, eps, &mut rng);
        let mut t = Transcript::new();
        let strings = gen_parity_strings(n_s, m, s, &mut rng, &mut t).unwrap();
        rejected += !verify_subset(&alice, &bob, &strings, s, &mut t).unwrap().is_accept() as usize;
    }
    let rate = rejected as f64 / subsets as f64;
    let band = (
        lo - 3.0 * binomial_sigma(lo, subsets),
        hi + 3.0 * binomial_sigma(hi, subsets),
    );
    ensure(rate >= band.0 && rate <= band.1, || {
        format!("rejection {rate:.5} outside [{:.5}, {:.5}]", band.0, band.1)
    })?;
    Ok(format!(
        "rejection {rate:.5} in [{lo:.5}, {hi:.5}] widened by 3σ to [{:.5}, {:.5}]",
        band.0, band.1
    ))
}

fn eavesdropper_detection() -> Check {
    let eve = EveStrategy::intercept_resend(1.0).unwrap();
    let big = ProtocolConfig {
        n: 20_000,
        eve,
        seed: 7,
        ..ProtocolConfig::default()
    };
    let r = run_session(&big).map_err(|e| e.to_string())?;
    let est = r.stats.estimate.ok_or("no check estimate")?;
    ensure(est.x_checks >= 10_000 && est.z_checks >= 10_000, || {
        format!("only {} X and {} Z checks", est.x_checks, est.z_checks)
    })?;
    for (name, v) in [("bit", est.eps_b_hat), ("phase", est.eps_p_hat)] {
        ensure((v - 0.25).abs() <= 0.01, || format!("{name} estimate {v}"))?;
    }
    let config = ProtocolConfig {
        eve,
        ..ProtocolConfig::default()
    };
    let results = run_sessions(&config, 100, 700).map_err(|e| e.to_string())?;
    let at_check = results
        .iter()
        .filter(|r| r.abort_reason().map(|a| a.stage()) == Some(Stage::CheckThreshold))
        .count();
    ensure(at_check == 100, || {
        format!("{at_check}/100 aborted at the check threshold")
    })?;
    Ok(format!(
        "estimates ({:.4}, {:.4}) over {} Z / {} X checks; 100/100 aborted at the check threshold",
        est.eps_b_hat, est.eps_p_hat, est.z_checks, est.x_checks
    ))
}

/// `(1 − g 2^{−m}) (1 − exp(−η² n / (4 ε(1−ε))))`, clamped at 0.
fn bound_oracle(g: usize, m: i32, eta: f64, n: usize, eps_p: f64) -> f64 {
    let correctness = (1.0 - g as f64 / 2f64.powi(m)).max(0.0);
    let var = eps_p * (1.0 - eps_p);
    let confidence = if var == 0.0 {
        1.0
    } else {
        1.0 - (-eta * eta * n as f64 / (4.0 * var)).exp()
    };
    correctness * confidence
}

fn end_to_end_bound() -> Check {
    let config = ProtocolConfig {
        n: 2000,
        n_s: 100,
        m: 20,
        channel: ChannelParams::new(0.03, 0.03, 0.0).unwrap(),
        ..ProtocolConfig::default()
    };
    let start = Instant::now();
    let results = run_sessions(&config, 200, 2000).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let good = results.iter().filter(|r| r.keys_match() == Some(true)).count();
    let successes = results.iter().filter(|r| r.is_success()).count();
    let empirical = good as f64 / results.len() as f64;

    let mut per_trial_max: f64 = 0.0;
    let mut g_max = 0;
    for r in &results {
        let Some(est) = r.stats.estimate else { continue };
        if r.stats.subsets == 0 {
            continue;
        }
        g_max = g_max.max(r.stats.accepted);
        let b = bound_oracle(
            r.stats.accepted,
            config.m as i32,
            config.eta,
            est.x_checks,
            est.eps_p_hat,
        );
        if let Some(lib) = r.stats.success_bound {
            ensure((lib.value - b).abs() < 1e-12, || {
                format!("seed {}: library bound {} vs {b}", r.seed, lib.value)
            })?;
        }
        per_trial_max = per_trial_max.max(b);
    }
    ensure(empirical >= per_trial_max, || {
        format!("success {empirical} below bound {per_trial_max}")
    })?;
    let report = RunReport::from_results(&config, 2000, &results);
    ensure(report.comparison.holds == Some(true), || {
        format!("{:?}", report.comparison)
    })?;

    let mismatched = successes - good;
    let allowed = g_max as f64 * 0.5f64.powi(20);
    let mismatch_frac = if successes == 0 {
        0.0
    } else {
        mismatched as f64 / successes as f64
    };
    ensure(mismatch_frac <= allowed, || {
        format!("{mismatched}/{successes} key mismatches")
    })?;
    within_limit(elapsed, Duration::from_secs(120))?;
    Ok(format!(
        "success {good}/200 = {empirical:.3} ≥ largest per-trial bound {per_trial_max:.4}; {mismatched} mismatches (allowed {allowed:.1e}); {elapsed:.2?}"
    ))
}

fn mask_to_bits(v: u32, k: usize) -> BitVec {
    (0..k).map(|i| v >> i & 1 == 1).collect()
}

fn coset_extractor() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut cases = 0;
    for k in 1..=10usize {
        for key_len in 1..=k {
            let rows = k - key_len;
            let spec =
                CodeSpec::from_generator(privacy::random_full_rank(rows, k, &mut rng)).map_err(|e| e.to_string())?;
            let gen: Vec<u32> = spec
                .generator()
                .rows()
                .iter()
                .map(|r| r.ones_positions().into_iter().fold(0u32, |acc, i| acc | 1 << i))
                .collect();
            let codewords: Vec<u32> = (0..1u32 << rows)
                .map(|c| (0..rows).filter(|&j| c >> j & 1 == 1).fold(0, |acc, j| acc ^ gen[j]))
                .collect();
            let key = |v: u32| {
                privacy::extract_key(&mask_to_bits(v, k), &spec, Party::Alice)
                    .unwrap()
                    .key
            };
            for &w in &codewords {
                ensure(key(w).is_zero(), || format!("k={k}: codeword {w:b} has nonzero key"))?;
            }
            // Coset id: smallest member of v + C_2.
            let coset = |v: u32| codewords.iter().map(|&w| v ^ w).min().unwrap();
            let mut by_key: HashMap<BitVec, u32> = HashMap::new();
            for v in 0..1u32 << k {
                let c = coset(v);
                match by_key.insert(key(v), c) {
                    Some(prev) if prev != c => return Err(format!("k={k}: key collides across cosets")),
                    _ => {}
                }
                ensure(key(v) == key(c), || {
                    format!("k={k}: key not constant on coset of {v:b}")
                })?;
            }
            ensure(by_key.len() == 1 << key_len, || {
                format!("k={k}: {} distinct keys", by_key.len())
            })?;
            for x in 0..1u32 << k.min(8) {
                let x = mask_to_bits(x, k);
                let (v, ann) = privacy::alice_announce(&x, &mut rng, &mut Transcript::new());
                ensure(privacy::bob_recover(&x, &ann).unwrap() == v, || {
                    "recovered pad differs".into()
                })?;
            }
            cases += 1;
        }
    }
    // Hand case: G2 = [1 1] splits F_2^2 into {00, 11} and {01, 10}.
    let spec = CodeSpec::from_generator(BitMatrix::from_rows(2, vec!["11".parse().unwrap()]).unwrap()).unwrap();
    let key = |s: &str| {
        privacy::extract_key(&s.parse().unwrap(), &spec, Party::Bob)
            .unwrap()
            .key
    };
    ensure(
        key("00") == key("11") && key("01") == key("10") && key("00") != key("01"),
        || "two-bit coset labels".into(),
    )?;
    Ok(format!("{cases} (k, key_len) codes with k ≤ 10 checked exhaustively"))
}

fn fingerprint(r: &SessionResult) -> String {
    let report = RunReport::from_results(
        &ProtocolConfig {
            seed: r.seed,
            ..ProtocolConfig::default()
        },
        r.seed,
        std::slice::from_ref(r),
    );
    format!("{}\n{}", r.transcript.to_jsonl(), report.deterministic_json())
}

fn determinism() -> Check {
    let config = ProtocolConfig {
        n: 1000,
        channel: ChannelParams::new(0.03, 0.04, 0.01).unwrap(),
        eve: EveStrategy::intercept_resend(0.05).unwrap(),
        seed: 99,
        ..ProtocolConfig::default()
    };
    let a = fingerprint(&run_session(&config).map_err(|e| e.to_string())?);
    let b = fingerprint(&run_session(&config).map_err(|e| e.to_string())?);
    ensure(a == b, || "two runs of one seed differ".into())?;

    let batch = |threads: usize| -> Result<(String, String), String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| {
            let results = run_sessions(&config, 16, 500).map_err(|e| e.to_string())?;
            let transcripts: String = results.iter().map(|r| r.transcript.to_jsonl()).collect();
            Ok((
                transcripts,
                RunReport::from_results(&config, 500, &results).deterministic_json(),
            ))
        })
    };
    let one = batch(1)?;
    let four = batch(4)?;
    ensure(one == four, || "1-thread and 4-thread batches differ".into())?;
    Ok(format!(
        "repeat run identical ({} bytes); 16-trial batch identical on 1 and 4 threads",
        a.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("noiseless correctness", noiseless_correctness),
        ("crude-round residual law", crude_residual_law),
        ("verification soundness", verification_soundness),
        ("phase-update formula", phase_update_formula),
        ("subset-discard bracket", subset_discard_bracket),
        ("eavesdropper detection", eavesdropper_detection),
        ("end-to-end bound", end_to_end_bound),
        ("coset extractor", coset_extractor),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
