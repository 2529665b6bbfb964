//! Acceptance criteria, one line of output each.
//!
//! Run with `cargo test -p mstrack --test acceptance`; a substring argument selects criteria
//! by name. Failures are reported but only fail the process when `MSTRACK_ACCEPTANCE_STRICT`
//! is set.

mod common;

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mstrack::config::Config;
use mstrack::dprtf::{build_cross_relations, DprtfEstimator, DprtfParams, RlsState};
use mstrack::eval;
use mstrack::io;
use mstrack::localizer::{eg_update, silent_decay, spatial_smooth, Likelihoods, LocalizerParams, WeightVector};
use mstrack::runner;
use mstrack::simulator::{render, render_ctf_spectrogram, SourceSpec};
use mstrack::tracker::{
    birth_score, e_s_step, vem_frame_observed, AssignmentPosterior, BirthObservation, ObservationSet, StateGaussian,
    Track, TrackerParams,
};

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn cn(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) / 2f64.sqrt()
}

fn rls_matches_batch_solution() -> Outcome {
    let start = Instant::now();
    let (channels, q, bins, frames, lambda) = (4, 3, 4, 30, 0.9);
    let dim = channels * q - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _system in 0..50 {
        for _bin in 0..bins {
            let mut rls = RlsState::new(dim, lambda);
            // P⁰ = I at the first frame contributes λ^{T−1}·I to the weighted normal matrix.
            let mut normal = DMatrix::<Complex64>::identity(dim, dim) * Complex64::from(lambda.powi(frames - 1));
            let mut rhs = DVector::<Complex64>::zeros(dim);
            for t in 0..frames {
                let vectors: Vec<Complex64> = (0..channels * q).map(|_| cn(&mut rng)).collect();
                let rows = build_cross_relations(&vectors, channels, q, 0);
                rls.frame_update(&rows);
                let w = Complex64::from(lambda.powi(frames - 1 - t));
                for row in &rows {
                    let x = DVector::from_column_slice(&row.regressor);
                    normal += x.conjugate() * x.transpose() * w;
                    rhs += x.conjugate() * row.target * w;
                }
            }
            let exact = normal.lu().solve(&rhs).expect("normal equations are nonsingular");
            let est = DVector::from_column_slice(rls.estimate());
            worst = worst.max((&est - &exact).norm() / exact.norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-8 && secs < 5.0, format!("max relative error {worst:.2e} over 200 bins, {secs:.2} s"))
}

fn dprtf_recovers_planted_ctf() -> Outcome {
    let src = white(SourceSpec::fixed(30.0, vec![[0.0, 1.0]]));
    let spec = with_reverb(scene(1.0, 5, vec![src]), 0.3, 5.0);
    let clean = render_ctf_spectrogram(&spec).unwrap();
    let framing = spec.framing().unwrap();
    let bins = framing.bin_count();
    let params = DprtfParams { noise_reduction: false, ..DprtfParams::default() };
    let p = params.rho * (4.0 * params.ctf_length as f64 - 1.0) / 6.0;
    let settle = (3.0 * p).ceil() as usize;
    let mut est = DprtfEstimator::new(params, 4, 1..bins - 1, 125.0);
    for t in 0..settle {
        let frame: Vec<&[Complex64]> = (0..4).map(|ch| clean.mixture.frame(ch, t)).collect();
        est.process_frame(&frame);
    }
    let planted = &clean.ctf[0];
    let mut worst: f64 = 0.0;
    for f in 1..bins - 1 {
        let c = est.dprtf(f, 0).unwrap();
        for i in 1..4 {
            let truth = planted.get(i, f, 0) / planted.get(0, f, 0);
            worst = worst.max((c[i] - truth).norm() / truth.norm());
        }
    }
    let clean_ok = worst <= 0.01;

    let src = white(SourceSpec::fixed(30.0, vec![[0.5, 2.0]]));
    let spec = with_snr(with_reverb(scene(2.0, 6, vec![src]), 0.3, 5.0), 20.0);
    let noisy = render_ctf_spectrogram(&spec).unwrap();
    let mut est = DprtfEstimator::new(DprtfParams::default(), 4, 1..bins - 1, 125.0);
    let frames = noisy.mixture.frame_count();
    let planted = &noisy.ctf[0];
    let mid = (framing.nfft / 16)..=(framing.nfft * 3 / 8);
    let onset = (0.5 * 125.0) as usize;
    let mut good = 0;
    let mut total = 0;
    for t in 0..frames {
        let frame: Vec<&[Complex64]> = (0..4).map(|ch| noisy.mixture.frame(ch, t)).collect();
        est.process_frame(&frame);
        if t < onset + settle {
            continue;
        }
        for f in mid.clone() {
            let Some(c) = est.dprtf(f, 0) else {
                total += 1;
                continue;
            };
            let ok = (1..4).all(|i| {
                let truth = planted.get(i, f, 0) / planted.get(0, f, 0);
                (c[i] - truth).norm() / truth.norm() <= 0.10
            });
            good += ok as usize;
            total += 1;
        }
    }
    let frac = good as f64 / total as f64;
    outcome(
        clean_ok && frac >= 0.8,
        format!(
            "noise-free max error {:.3}% after {settle} frames; 20 dB: {:.1}% of bin-frames {}..={} within 10% after settling",
            worst * 100.0,
            frac * 100.0,
            mid.start(),
            mid.end()
        ),
    )
}

fn localizer_accuracy() -> Outcome {
    let spec = with_snr(with_reverb(scene(4.0, 21, vec![SourceSpec::fixed(45.0, vec![[0.0, 4.0]])]), 0.3, 5.0), 20.0);
    let (audio, truth) = render(&spec).unwrap();
    let run = run_localizer(&audio, &Config::default());
    let frames: Vec<usize> = (0..truth.frame_count()).filter(|&t| truth.frame_times_s[t] >= 0.5 && truth.sources[0].active[t]).collect();
    let hits = frames.iter().filter(|&&t| run.argmax_deg[t] == 45.0).count();
    let acc = hits as f64 / frames.len() as f64;
    let report = eval::aggregate(&peak_scores(&run, &truth, frames.iter().copied()));
    let mae = report.mae_deg.unwrap_or(f64::INFINITY);
    outcome(acc >= 0.9 && mae <= 5.0, format!("argmax on true cell {:.1}% of {} frames, peak MAE {mae:.2} deg", acc * 100.0, frames.len()))
}

fn simplex_and_posterior_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut eg_violations = 0;
    for _ in 0..10_000 {
        let d = rng.random_range(2..=72);
        let k = rng.random_range(1..=40);
        let w = WeightVector::from_unnormalized((0..d).map(|_| rng.random_range(1e-6..1.0)).collect());
        let lik = Likelihoods::from_values(d, (0..k * d).map(|_| rng.random_range(0.0..5.0)).collect());
        let params = LocalizerParams {
            step: rng.random_range(0.001..0.5),
            entropy_weight: rng.random_range(0.0..0.5),
            ..LocalizerParams::default()
        };
        let w = eg_update(&w, &lik, &params);
        let w = silent_decay(&w, rng.random_range(0.001..0.5));
        let w = spatial_smooth(&w, rng.random_range(0.0..0.2));
        let sum: f64 = w.as_slice().iter().sum();
        if !w.as_slice().iter().all(|&v| v > 0.0) || (sum - 1.0).abs() > 1e-9 {
            eg_violations += 1;
        }
    }

    let params = TrackerParams::default();
    let azimuths = mstrack::steering::azimuth_grid(72);
    let mut vem_violations = 0;
    let mut iterations = 0;
    for frame in 0..1000 {
        let tracks: Vec<Track> = (0..rng.random_range(1..=4))
            .map(|id| {
                let a = rng.random_range(-180.0..180.0f64).to_radians();
                let v = rng.random_range(-1.0..1.0);
                let s = rng.random_range(1e-4..0.5);
                let cov = Matrix3::from_diagonal(&Vector3::new(s, s, rng.random_range(1e-4..1.0)));
                Track {
                    id,
                    state: StateGaussian { mean: Vector3::new(a.cos(), a.sin(), v), cov },
                    dynamics: Matrix3::identity() * rng.random_range(1e-6..1e-2),
                    birth_step: 0,
                    activity_scores: Default::default(),
                    active: true,
                    inactive_steps: 0,
                }
            })
            .collect();
        let mut tracks = tracks;
        let weights: Vec<f64> = (0..72).map(|_| if rng.random_bool(0.3) { rng.random_range(0.0..0.5) } else { 0.0 }).collect();
        let obs = ObservationSet::new(frame, &azimuths, weights);
        vem_frame_observed(&mut tracks, &obs, &params, |view| {
            iterations += 1;
            let alpha: &AssignmentPosterior = view.assignments;
            let rows_ok = (0..alpha.observation_count()).all(|d| (alpha.row(d).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            let gamma_ok = view.states.iter().all(|s| {
                (s.cov - s.cov.transpose()).abs().max() < 1e-12 && s.cov.cholesky().is_some()
            });
            let lambda_ok = view.dynamics.iter().all(|l| {
                (l - l.transpose()).abs().max() < 1e-12 && l.symmetric_eigenvalues().iter().all(|&e| e >= 0.0)
            });
            let unit_ok = view.states.iter().all(|s| (Vector2::new(s.mean[0], s.mean[1]).norm() - 1.0).abs() < 1e-12);
            if !(rows_ok && gamma_ok && lambda_ok && unit_ok) {
                vem_violations += 1;
            }
        });
    }
    outcome(
        eg_violations == 0 && vem_violations == 0,
        format!("{eg_violations} EG violations in 10000 steps, {vem_violations} VEM violations in {iterations} iterations"),
    )
}

fn e_s_matches_gaussian_fusion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let azimuths = mstrack::steering::azimuth_grid(72);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let params = TrackerParams {
            observation_cov: {
                let a = rng.random_range(0.01..0.1);
                let c = rng.random_range(0.01..0.1);
                let b = rng.random_range(-0.5..0.5) * (a * c as f64).sqrt();
                [[a, b], [b, c]]
            },
            ..TrackerParams::default()
        };
        let theta = rng.random_range(-180.0..180.0f64).to_radians();
        let l = Matrix3::<f64>::from_fn(|_, _| rng.random_range(-0.3..0.3));
        let prior = StateGaussian {
            mean: Vector3::new(theta.cos(), theta.sin(), rng.random_range(-1.0..1.0)),
            cov: l * l.transpose() + Matrix3::identity() * 0.01,
        };
        let weights: Vec<f64> = (0..72).map(|_| if rng.random_bool(0.2) { rng.random_range(0.01..0.5) } else { 0.0 }).collect();
        let obs = ObservationSet::new(0, &azimuths, weights.clone());
        let alpha = mstrack::tracker::e_z_step(&[prior], &obs, &params);
        let got = e_s_step(&prior, &obs, &alpha, 1, &params);

        // Joint covariance-form update with every weighted observation stacked.
        let used: Vec<usize> = (0..72).filter(|&d| alpha.get(d, 1) * weights[d] > 0.0).collect();
        let m = 2 * used.len();
        let mut h = DMatrix::<f64>::zeros(m, 3);
        let mut r = DMatrix::<f64>::zeros(m, m);
        let mut b = DVector::<f64>::zeros(m);
        let sigma = params.observation_cov();
        for (k, &d) in used.iter().enumerate() {
            h[(2 * k, 0)] = 1.0;
            h[(2 * k + 1, 1)] = 1.0;
            let s = sigma / (alpha.get(d, 1) * weights[d]);
            r.view_mut((2 * k, 2 * k), (2, 2)).copy_from(&s);
            b[2 * k] = obs.directions[d][0];
            b[2 * k + 1] = obs.directions[d][1];
        }
        let p = DMatrix::from_column_slice(3, 3, prior.cov.as_slice());
        let mu = DVector::from_column_slice(prior.mean.as_slice());
        let (mean, cov) = if m == 0 {
            (mu.clone(), p.clone())
        } else {
            let s = &h * &p * h.transpose() + &r;
            let k = &p * h.transpose() * s.try_inverse().unwrap();
            (&mu + &k * (&b - &h * &mu), (DMatrix::identity(3, 3) - &k * &h) * &p)
        };
        let norm = mean[0].hypot(mean[1]);
        let expected_mean = Vector3::new(mean[0] / norm, mean[1] / norm, mean[2]);
        let expected_cov = Matrix3::from_column_slice(cov.as_slice());
        let e_mean = (got.mean - expected_mean).norm() / expected_mean.norm();
        let e_cov = (got.cov - expected_cov).norm() / expected_cov.norm();
        worst = worst.max(e_mean).max(e_cov);
    }
    outcome(worst <= 1e-8, format!("max relative deviation {worst:.2e} over 100 instances"))
}

fn crossing_sources() -> Outcome {
    let a = moving(-60.0, 60.0, 10.0, vec![[0.0, 10.0]]);
    let b = moving(60.0, -60.0, 10.0, vec![[0.0, 10.0]]);
    let spec = with_snr(scene(10.0, 31, vec![a, b]), 20.0);
    let (audio, truth) = render(&spec).unwrap();
    let run = run_tracker(&audio, &Config::default());
    let r = tracker_metrics(&run, &truth);
    let mae = r.mae_deg.unwrap_or(f64::INFINITY);
    outcome(
        mae <= 5.0 && r.id_switches <= 1 && r.md_rate <= 35.0 && r.fa_rate <= 20.0,
        format!("MAE {mae:.2} deg, {} ID switches, MD {:.1}%, FA {:.1}%", r.id_switches, r.md_rate, r.fa_rate),
    )
}

fn birth_discrimination() -> Outcome {
    let params = TrackerParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let len = params.birth_window + 1;
    let mut consistent = Vec::new();
    let mut scattered = Vec::new();
    for trial in 0..200 {
        let weights: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..0.5)).collect();
        let seq: Vec<BirthObservation> = if trial % 2 == 0 {
            let start = rng.random_range(-180.0..180.0);
            let speed = rng.random_range(-20.0..20.0) * params.dt;
            (0..len)
                .map(|k| {
                    let jitter: f64 = rng.sample::<f64, _>(StandardNormal) * 3.0;
                    BirthObservation::from_azimuth(start + speed * k as f64 + jitter, weights[k])
                })
                .collect()
        } else {
            (0..len).map(|k| BirthObservation::from_azimuth(rng.random_range(-180.0..180.0), weights[k])).collect()
        };
        let (score, _) = birth_score(&seq, &params);
        if trial % 2 == 0 { consistent.push(score) } else { scattered.push(score) }
    }
    let mut wins = 0.0;
    for &c in &consistent {
        for &s in &scattered {
            wins += if c > s { 1.0 } else if c == s { 0.5 } else { 0.0 };
        }
    }
    let auc = wins / (consistent.len() * scattered.len()) as f64;
    outcome(auc >= 0.95, format!("AUC {auc:.4} over {} consistent / {} scattered sequences", consistent.len(), scattered.len()))
}

fn activity_detection() -> Outcome {
    let activity: Vec<[f64; 2]> = (0..5).map(|k| [2.0 * k as f64, 2.0 * k as f64 + 1.0]).collect();
    let spec = with_snr(scene(10.0, 41, vec![SourceSpec::fixed(-30.0, activity)]), 20.0);
    let (audio, truth) = render(&spec).unwrap();
    let config = Config::default();
    assert_eq!((config.tracker.activity_window, config.tracker.activity_threshold), (3, 0.15));
    let run = run_tracker(&audio, &config);
    let correct = run
        .steps
        .iter()
        .filter(|(t, det)| truth.sources[0].active[truth.nearest_frame(*t)] == !det.is_empty())
        .count();
    let acc = correct as f64 / run.steps.len() as f64;
    outcome(acc >= 0.8, format!("activity accuracy {:.1}% over {} tracker steps", acc * 100.0, run.steps.len()))
}

fn throughput() -> Outcome {
    let a = moving(-90.0, 0.0, 10.0, vec![[0.0, 10.0]]);
    let b = SourceSpec::fixed(120.0, vec![[1.0, 9.0]]);
    let spec = with_snr(scene(10.0, 51, vec![a, b]), 20.0);
    let (audio, _) = render(&spec).unwrap();
    let run = run_tracker(&audio, &Config::default());
    let rf = run.summary.realtime_factor();
    outcome(rf <= 2.0, format!("real-time factor {rf:.3} ({:.2} s for {:.1} s of audio)", run.summary.wall_time_s, run.summary.signal_duration_s))
}

fn deterministic_outputs() -> Outcome {
    let a = moving(-40.0, 40.0, 3.0, vec![[0.0, 3.0]]);
    let spec = with_snr(with_reverb(scene(3.0, 61, vec![a]), 0.3, 5.0), 20.0);
    let config = Config::default();
    let names = [
        runner::MIXTURE_WAV,
        runner::TRUTH_JSON,
        runner::GEOMETRY_JSON,
        runner::HEATMAP_CSV,
        runner::HEATMAP_PGM,
        runner::PEAKS_JSONL,
        runner::TRACKS_JSONL,
        "features.csv",
    ];
    let run_once = || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path();
        runner::simulate_to_dir(&spec, out).unwrap();
        let wav = out.join(runner::MIXTURE_WAV);
        runner::localize_to_dir(&wav, &spec.geometry, &config, out, Some(io::DumpFormat::Csv)).unwrap();
        runner::track_to_dir(&wav, &spec.geometry, &config, out).unwrap();
        let files: Vec<Vec<u8>> = names.iter().map(|n| std::fs::read(out.join(n)).unwrap()).collect();
        files
    };
    let first = run_once();
    let second = run_once();
    let differing: Vec<&str> = names.iter().zip(first.iter().zip(&second)).filter(|(_, (a, b))| a != b).map(|(n, _)| *n).collect();
    let bytes: usize = first.iter().map(Vec::len).sum();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts ({bytes} bytes) byte-identical across two runs", names.len())
        } else {
            format!("differing artifacts: {}", differing.join(", "))
        },
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("rls_batch_equivalence", rls_matches_batch_solution),
        ("dprtf_recovery", dprtf_recovers_planted_ctf),
        ("localizer_accuracy", localizer_accuracy),
        ("simplex_and_posterior_invariants", simplex_and_posterior_invariants),
        ("gaussian_product_oracle", e_s_matches_gaussian_fusion),
        ("crossing_sources", crossing_sources),
        ("birth_discrimination", birth_discrimination),
        ("activity_detection", activity_detection),
        ("throughput", throughput),
        ("determinism", deterministic_outputs),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        println!(
            "criterion {:>2} {:<34} {}  {} [{:.1} s]",
            k + 1,
            name,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            start.elapsed().as_secs_f64()
        );
        if !result.pass {
            failed.push(k + 1);
        }
    }
    println!("{} of {ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        if std::env::var_os("MSTRACK_ACCEPTANCE_STRICT").is_some() {
            std::process::exit(1);
        }
    }
}
