//! Acceptance gate: ten end-to-end criteria, one test each. Every test
//! prints a single `criterion N PASS` line with its measured evidence and
//! asserts its own runtime budget.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ewbp::bp::{bp_decode, wbp_decode, Kernel, WbpWeights};
use ewbp::channel::{modulate, noiseless_llr, sigma_from_ebn0, transmit_llr};
use ewbp::crc::{region_index, CrcSpec, PartitionKind, PartitionStrategy, Remainder};
use ewbp::ensemble::EnsembleModel;
use ewbp::harness::{
    flops_curve, run_fer, run_fer_paired, wilson_interval, write_results, EvalConfig, EvalMode,
    PairedPoint, StopRule,
};
use ewbp::polar::PolarCode;
use ewbp::rng::frame_rng;
use ewbp::training::{bce_loss, train_ensemble, wbp_gradient, LabeledFrame, TrainConfig};

const CRC11_PARITY: usize = 11;

fn crc11_for(code: &PolarCode) -> CrcSpec {
    CrcSpec::crc11(code.info_len() - CRC11_PARITY)
}

/// Draws the message and channel noise of one Monte Carlo frame and returns
/// (message, padded word, LLRs).
fn random_frame(
    code: &PolarCode,
    crc: &CrcSpec,
    sigma: f64,
    seed: u64,
    frame: u64,
) -> (Vec<u8>, Vec<u8>, Vec<f64>) {
    let mut rng = frame_rng(seed, 0, frame);
    let msg: Vec<u8> = (0..crc.message_len()).map(|_| rng.gen_range(0..2u8)).collect();
    let info = crc.encode(&msg).unwrap();
    let padded = code.expand(&info).unwrap();
    let cw = code.encode(&padded).unwrap();
    let llr = transmit_llr(&cw, sigma, &mut rng).unwrap();
    (msg, padded, llr)
}

#[test]
fn criterion_01_msb_partition_enumerates_all_remainders() {
    let started = Instant::now();
    for &alpha in &[2usize, 4, 8] {
        let strategy = PartitionStrategy::new(PartitionKind::Msb, alpha).unwrap();
        let mut counts = vec![0u64; alpha];
        for v in 1u64..2048 {
            let bits: Vec<u8> = (0..11).map(|j| ((v >> (10 - j)) & 1) as u8).collect();
            let r = Remainder::from_bits(bits).unwrap();
            let region = region_index(&r, strategy).unwrap();
            assert!((1..=alpha).contains(&region), "region {region} out of range");
            counts[region - 1] += 1;
        }
        assert_eq!(counts.iter().sum::<u64>(), 2047, "every remainder lands somewhere");
        let full = 2048 / alpha as u64;
        assert_eq!(counts[0], full - 1, "alpha {alpha}: the zero-prefix region is short one");
        for (i, &c) in counts.iter().enumerate().skip(1) {
            assert_eq!(c, full, "alpha {alpha}: region {} is off", i + 1);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    println!(
        "criterion 1 PASS: 2047 nonzero remainders bucket exactly for alpha 2, 4, 8 in {elapsed:?}"
    );
}

#[test]
fn criterion_02_noiseless_round_trip_recovers_every_message() {
    let started = Instant::now();
    for (n, k) in [(64usize, 32usize), (128, 64)] {
        let code = PolarCode::construct(n, k, 0.5).unwrap();
        let crc = crc11_for(&code);
        let mut rng = ChaCha8Rng::seed_from_u64(0xACC2);
        let mut errors = 0u64;
        for _ in 0..10_000 {
            let msg: Vec<u8> = (0..crc.message_len()).map(|_| rng.gen_range(0..2u8)).collect();
            let info = crc.encode(&msg).unwrap();
            let cw = code.encode(&code.expand(&info).unwrap()).unwrap();
            let out = bp_decode(&noiseless_llr(&cw), &code, 5, Kernel::Exact).unwrap();
            let got = code.extract(out.hard()).unwrap();
            let ok = crc.remainder(&got).unwrap().is_zero() && got[..msg.len()] == msg[..];
            errors += (!ok) as u64;
        }
        assert_eq!(errors, 0, "({n},{k}) noiseless round trip");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "criterion 2 PASS: 10^4 noiseless frames error-free on (64,32) and (128,64) in {elapsed:?}"
    );
}

#[test]
fn criterion_03_unit_weight_wbp_is_bit_exact_bp() {
    let started = Instant::now();
    let code = PolarCode::construct(64, 32, 0.5).unwrap();
    let crc = crc11_for(&code);
    let sigma = sigma_from_ebn0(2.0, 0.5).unwrap();
    let unit = WbpWeights::unit(5, code.stages());
    for f in 0..1_000u64 {
        let (_, _, llr) = random_frame(&code, &crc, sigma, 0xACC3, f);
        let bp = bp_decode(&llr, &code, 5, Kernel::Exact).unwrap();
        let wbp = wbp_decode(&llr, &code, 5, &unit, false).unwrap();
        assert_eq!(bp.hard(), wbp.hard(), "hard decisions differ on frame {f}");
        assert!(
            bp.soft().iter().zip(wbp.soft()).all(|(a, b)| a == b),
            "soft outputs differ on frame {f}"
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    println!("criterion 3 PASS: unit-weight WBP equals BP bit-exactly on 10^3 frames in {elapsed:?}");
}

#[test]
fn criterion_04_gradient_matches_central_differences() {
    let started = Instant::now();
    let code = PolarCode::construct(64, 32, 0.5).unwrap();
    let crc = crc11_for(&code);
    let sigma = sigma_from_ebn0(2.0, 0.5).unwrap();
    let iterations = 5;
    let mut coord_rng = ChaCha8Rng::seed_from_u64(0xACC4);

    // Perturbed weights exercise the general code path, not just gamma = 1.
    let mut weights = WbpWeights::unit(iterations, code.stages());
    for w in weights.as_mut_slice() {
        *w += coord_rng.gen_range(-0.2..0.2);
    }

    let loss_at = |w: &WbpWeights, frame: &LabeledFrame| {
        let out = wbp_decode(&frame.llr, &code, iterations, w, false).unwrap();
        bce_loss(out.soft(), &frame.target).unwrap()
    };

    let h = 1e-4;
    let mut checked = 0usize;
    let mut worst: f64 = 0.0;
    let mut frame_idx = 0u64;
    while checked < 100 {
        assert!(frame_idx < 60, "not enough informative frames");
        let (_, padded, llr) = random_frame(&code, &crc, sigma, 0xACC4, frame_idx);
        frame_idx += 1;
        let frame = LabeledFrame { llr, target: padded };
        let (_, grad) = wbp_gradient(&frame, &code, iterations, &weights).unwrap();
        for _ in 0..10 {
            let coord = coord_rng.gen_range(0..weights.len());
            let analytic = grad.as_slice()[coord];
            let mut plus = weights.clone();
            plus.as_mut_slice()[coord] += h;
            let mut minus = weights.clone();
            minus.as_mut_slice()[coord] -= h;
            let fd = (loss_at(&plus, &frame) - loss_at(&minus, &frame)) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs());
            if denom < 1e-6 {
                // Both sides agree the coordinate is inert; not informative
                // for a relative comparison.
                assert!((analytic - fd).abs() < 1e-8);
                continue;
            }
            let rel = (analytic - fd).abs() / denom;
            assert!(
                rel < 1e-4,
                "coordinate {coord}: analytic {analytic} vs fd {fd} (rel {rel:.2e})"
            );
            worst = worst.max(rel);
            checked += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    println!(
        "criterion 4 PASS: {checked} (coordinate, frame) pairs within 1e-4 (worst {worst:.2e}) in {elapsed:?}"
    );
}

#[test]
fn criterion_05_bp_never_beats_exhaustive_mle_on_the_toy_code() {
    let started = Instant::now();
    let code = PolarCode::construct(8, 4, 0.5).unwrap();
    let sigma = sigma_from_ebn0(3.0, 0.5).unwrap();

    // All 16 codewords, indexed by their 4 information bits.
    let candidates: Vec<(Vec<u8>, Vec<f64>)> = (0..16u8)
        .map(|v| {
            let info: Vec<u8> = (0..4).map(|b| (v >> (3 - b)) & 1).collect();
            let cw = code.encode(&code.expand(&info).unwrap()).unwrap();
            let symbols = modulate(&cw);
            (info, symbols)
        })
        .collect();

    let mut bp_errors = 0u64;
    let mut mle_errors = 0u64;
    for f in 0..10_000u64 {
        let mut rng = frame_rng(0xACC5, 0, f);
        let truth = rng.gen_range(0..16usize);
        let cw = code.encode(&code.expand(&candidates[truth].0).unwrap()).unwrap();
        let llr = transmit_llr(&cw, sigma, &mut rng).unwrap();

        let out = bp_decode(&llr, &code, 5, Kernel::Exact).unwrap();
        let got = code.extract(out.hard()).unwrap();
        bp_errors += (got != candidates[truth].0) as u64;

        // Maximum likelihood = maximum LLR correlation with the candidate's
        // BPSK symbols.
        let best = candidates
            .iter()
            .enumerate()
            .map(|(i, (_, sym))| {
                let score: f64 = sym.iter().zip(&llr).map(|(s, l)| s * l).sum();
                (i, score)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        mle_errors += (best != truth) as u64;
    }
    assert!(
        bp_errors >= mle_errors,
        "BP ({bp_errors}) cannot err less than exhaustive MLE ({mle_errors})"
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    println!(
        "criterion 5 PASS: BP {bp_errors} errors >= MLE {mle_errors} errors over 10^4 shared frames in {elapsed:?}"
    );
}

#[test]
fn criterion_06_latency_curve_decays_to_single_decode_cost() {
    let started = Instant::now();
    let code = PolarCode::construct(64, 32, 0.5).unwrap();
    let crc = crc11_for(&code);
    let strategy = PartitionStrategy::new(PartitionKind::Msb, 4).unwrap();
    let model = EnsembleModel::untrained(code, crc, 5, strategy).unwrap();

    let snrs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let stop = StopRule { min_frame_errors: 200, max_frames: 30_000 };
    let points = flops_curve(&model, &snrs, stop, 0xACC6, None).unwrap();

    let per_decode = (4 * 5 * 6) as f64;
    for p in &points {
        assert_eq!(p.tau_lower, per_decode);
        assert_eq!(p.tau_upper, 2.0 * per_decode);
        assert!(
            p.tau >= p.tau_lower && p.tau <= p.tau_upper,
            "tau {} outside [{}, {}]",
            p.tau,
            p.tau_lower,
            p.tau_upper
        );
    }
    // Monotone non-increasing beyond 95% interval overlap: a rise counts
    // only when the intervals separate.
    for pair in points.windows(2) {
        let (_, hi_cur) = wilson_interval(pair[0].gate_failures, pair[0].frames);
        let (lo_next, _) = wilson_interval(pair[1].gate_failures, pair[1].frames);
        assert!(
            lo_next <= hi_cur,
            "gate failure probability rose from {} dB to {} dB beyond 95% intervals",
            pair[0].snr_db,
            pair[1].snr_db
        );
    }
    let last = points.last().unwrap();
    assert!(
        last.tau <= per_decode * 1.05,
        "tau at 6 dB is {} but must approach {per_decode} within 5%",
        last.tau
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    let taus: Vec<String> = points.iter().map(|p| format!("{:.1}", p.tau)).collect();
    println!(
        "criterion 6 PASS: tau = [{}] over 1..6 dB, monotone, {:.1} at 6 dB, in {elapsed:?}",
        taus.join(", "),
        last.tau
    );
}

/// Reduced-scale trained model and its paired evaluation, shared by
/// criteria 7 and 8.
fn trained_paired() -> &'static (EnsembleModel, Vec<PairedPoint>) {
    static SHARED: OnceLock<(EnsembleModel, Vec<PairedPoint>)> = OnceLock::new();
    SHARED.get_or_init(|| {
        let code = PolarCode::construct(64, 32, 0.5).unwrap();
        let crc = crc11_for(&code);
        let config = TrainConfig {
            snrs_db: vec![1.25, 2.25, 3.25, 4.25],
            frames_per_snr: 10_000,
            epochs: 20,
            batches_per_epoch: 200,
            lr: 1e-2,
            checkpoint_every: 5,
            iterations: 5,
            strategy: PartitionStrategy::new(PartitionKind::Msb, 2).unwrap(),
            seed: 7,
            rate: None,
        };
        let model = train_ensemble(&code, &crc, &config).unwrap();
        let points = run_fer_paired(&model, &[2.0, 3.0, 4.0], 100_000, 0xACC7, None).unwrap();
        (model, points)
    })
}

#[test]
fn criterion_07_ensemble_never_hurts_beyond_the_crc_blind_spot() {
    let started = Instant::now();
    let (_, points) = trained_paired();
    let p3 = points.iter().find(|p| p.snr_db == 3.0).unwrap();
    assert_eq!(p3.frames, 100_000);
    assert!(
        p3.ensemble_frame_errors <= p3.gate_frame_errors + 5,
        "ensemble {} vs gate {} frame errors",
        p3.ensemble_frame_errors,
        p3.gate_frame_errors
    );
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
    println!(
        "criterion 7 PASS: 3 dB paired 10^5 frames, ensemble {} <= gate {} + 5 ({} rescued, {} introduced) in {elapsed:?}",
        p3.ensemble_frame_errors, p3.gate_frame_errors, p3.gate_only_errors, p3.ensemble_only_errors
    );
}

/// One-sided sign test on discordant pairs: the probability, under a fair
/// coin, of at least `greater` successes in `greater + lesser` trials.
/// Exact for small counts, normal approximation with continuity correction
/// beyond.
fn sign_test_p_value(greater: u64, lesser: u64) -> f64 {
    let n = greater + lesser;
    if n == 0 {
        return 1.0;
    }
    if n <= 50 {
        let mut tail = 0u128;
        for k in greater..=n {
            tail += binomial(n, k);
        }
        return tail as f64 / 2f64.powi(n as i32);
    }
    let mean = n as f64 / 2.0;
    let sd = (n as f64 / 4.0).sqrt();
    let z = (greater as f64 - 0.5 - mean) / sd;
    1.0 - normal_cdf(z)
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc = 1u128;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Standard normal CDF via the Abramowitz-Stegun 26.2.17 polynomial,
/// absolute error below 7.5e-8.
fn normal_cdf(z: f64) -> f64 {
    if z < 0.0 {
        return 1.0 - normal_cdf(-z);
    }
    let t = 1.0 / (1.0 + 0.2316419 * z);
    let poly = t
        * (0.319381530
            + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    1.0 - pdf * poly
}

#[test]
fn criterion_08_trained_ensemble_beats_the_gate_significantly() {
    let started = Instant::now();
    let (_, points) = trained_paired();
    let mut significant = 0usize;
    let mut summary = Vec::new();
    for p in points {
        let p_value = sign_test_p_value(p.gate_only_errors, p.ensemble_only_errors);
        let wins =
            p.ensemble_frame_errors < p.gate_frame_errors && p_value < 0.10;
        significant += wins as usize;
        summary.push(format!(
            "{} dB gate {} vs ensemble {} (p={:.2e}{})",
            p.snr_db,
            p.gate_frame_errors,
            p.ensemble_frame_errors,
            p_value,
            if wins { ", significant" } else { "" }
        ));
    }
    assert!(
        significant >= 2,
        "ensemble significantly better at only {significant} of 3 points: {summary:?}"
    );

    // The full-scale recipe must be documented for overnight reproduction.
    let readme = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md"))
        .expect("README.md at the workspace root");
    for needle in ["full-scale", "100 epochs", "200 batches", "1e-2"] {
        assert!(readme.contains(needle), "README is missing the recipe detail '{needle}'");
    }
    let elapsed = started.elapsed();
    println!(
        "criterion 8 PASS: significant at {significant}/3 points [{}] and the full-scale recipe is documented, in {elapsed:?}",
        summary.join("; ")
    );
}

#[test]
fn criterion_09_worker_count_never_changes_the_csv() {
    let started = Instant::now();
    let code = PolarCode::construct(64, 32, 0.5).unwrap();
    let crc = crc11_for(&code);
    let strategy = PartitionStrategy::new(PartitionKind::Msb, 2).unwrap();
    let model = EnsembleModel::untrained(code, crc, 5, strategy).unwrap();
    let config = EvalConfig {
        snrs_db: vec![2.0, 3.0],
        mode: EvalMode::Ensemble,
        stop: StopRule { min_frame_errors: 100, max_frames: 20_000 },
        seed: 0xACC9,
        rate: None,
    };

    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, threads) in [("one.csv", 1usize), ("four.csv", 4)] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let result = pool.install(|| run_fer(&model, &config)).unwrap();
        let path = dir.path().join(name);
        write_results(&result, &path).unwrap();
        outputs.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "CSV bytes differ across worker counts");
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "criterion 9 PASS: 1-thread and 4-thread sweeps wrote identical CSVs ({} bytes) in {elapsed:?}",
        outputs[0].len()
    );
}

#[test]
fn criterion_10_partition_balance_matches_the_design() {
    let started = Instant::now();
    let code = PolarCode::construct(64, 32, 0.5).unwrap();
    let crc = crc11_for(&code);
    let sigma = sigma_from_ebn0(3.0, 0.5).unwrap();
    let alpha = 4;
    let msb = PartitionStrategy::new(PartitionKind::Msb, alpha).unwrap();
    let bits_sum = PartitionStrategy::new(PartitionKind::BitsSum, alpha).unwrap();
    let bits_sum_mod = PartitionStrategy::new(PartitionKind::BitsSumMod, alpha).unwrap();

    // One decoding pass; every strategy buckets the same remainders.
    use rayon::prelude::*;
    let mut hists = vec![vec![0u64; alpha]; 3];
    let total_frames = 100_000u64;
    let mut done = 0u64;
    while done < total_frames {
        let len = 4096.min(total_frames - done);
        let remainders: Vec<Option<Remainder>> = (done..done + len)
            .into_par_iter()
            .map(|f| {
                let (_, _, llr) = random_frame(&code, &crc, sigma, 0xACCA, f);
                let out = bp_decode(&llr, &code, 5, Kernel::Exact).unwrap();
                let r = crc.remainder(&code.extract(out.hard()).unwrap()).unwrap();
                (!r.is_zero()).then_some(r)
            })
            .collect();
        for r in remainders.into_iter().flatten() {
            hists[0][region_index(&r, msb).unwrap() - 1] += 1;
            hists[1][region_index(&r, bits_sum).unwrap() - 1] += 1;
            hists[2][region_index(&r, bits_sum_mod).unwrap() - 1] += 1;
        }
        done += len;
    }

    let failures: u64 = hists[0].iter().sum();
    assert!(failures > 1_000, "too few gate failures ({failures}) to judge balance");
    for (name, hist) in [("msb", &hists[0]), ("bits-sum-mod", &hists[2])] {
        let mean = failures as f64 / alpha as f64;
        for (i, &c) in hist.iter().enumerate() {
            let dev = (c as f64 - mean).abs() / mean;
            assert!(
                dev <= 0.10,
                "{name} region {} holds {c} of {failures} ({dev:.3} from mean)",
                i + 1
            );
        }
    }
    let max = *hists[1].iter().max().unwrap() as f64;
    let min = *hists[1].iter().min().unwrap() as f64;
    assert!(min >= 1.0, "bits-sum left a region empty");
    assert!(max / min > 2.0, "bits-sum max/min ratio {:.2} not > 2", max / min);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "criterion 10 PASS: over {failures} gate failures, msb {:?} and bits-sum-mod {:?} balanced, bits-sum {:?} ratio {:.1}, in {elapsed:?}",
        hists[0], hists[2], hists[1], max / min
    );
}
