//! Cross-module checks against the generator's ground truth.

use vtrig_core::align::{denoise_rows, segment_trace_with_width};
use vtrig_core::pipeline::{attack_campaign, vt_profile, AttackPlan, Campaign, Role, Segmenter};
use vtrig_core::pullout::{pullout_with, template_from_segment, PulloutOptions};
use vtrig_core::{denoise_pipeline, generate, segment_trace, AlignmentParams, Error, SynthConfig};

fn device(noise: f64) -> SynthConfig {
    SynthConfig {
        noise_sigma: noise,
        ..SynthConfig::default()
    }
}

#[test]
fn jitter_free_pullout_matches_virtual_trigger_rows() {
    let cfg = SynthConfig {
        n_cps: 30,
        ..device(0.0)
    };
    let (trace, truth) = generate(&cfg).unwrap();
    let params = AlignmentParams::for_width(4350, 230);
    let d = denoise_pipeline(&trace, cfg.period_samples, 29, &params).unwrap();
    let tpl = template_from_segment(&d.segment, "t", None).unwrap();
    let p = pullout_with(&trace, &tpl, &PulloutOptions::default()).unwrap();

    let offsets: Vec<usize> = p.detections.iter().map(|d| d.offset).collect();
    let phase = offsets[0] as isize - truth.cp_start_indices[0] as isize;
    let vt = segment_trace(&trace, cfg.period_samples, offsets.len(), 0).unwrap();
    for (k, &o) in offsets.iter().enumerate() {
        assert_eq!(o as isize - truth.cp_start_indices[k] as isize, phase);
        assert_eq!(p.segments.row(k), vt.row(k));
    }
}

#[test]
fn jittered_detections_hit_every_cp() {
    for seed in 0..5 {
        let clean = SynthConfig {
            n_cps: 60,
            seed: 100 + seed,
            ..device(0.5)
        };
        let (t, _) = generate(&clean).unwrap();
        let params = AlignmentParams::for_width(4350, 230);
        let seg = denoise_pipeline(&t, clean.period_samples, 59, &params)
            .unwrap()
            .segment;
        let tpl = template_from_segment(&seg, "profiling", None).unwrap();

        let jittered = SynthConfig {
            jitter_max: 435,
            lead_in: 1234,
            seed: 200 + seed,
            ..clean
        };
        let (trace, truth) = generate(&jittered).unwrap();
        let p = pullout_with(&trace, &tpl, &PulloutOptions::default()).unwrap();
        let starts: Vec<usize> = truth
            .cp_start_indices
            .iter()
            .copied()
            .filter(|&s| s + tpl.len() <= trace.len())
            .collect();
        assert_eq!(p.detections.len(), starts.len(), "seed {seed}");
        for (d, s) in p.detections.iter().zip(&starts) {
            assert!(
                d.offset.abs_diff(*s) <= 2,
                "seed {seed}: {} vs {s}",
                d.offset
            );
        }
    }
}

#[test]
fn unattainable_threshold_reports_no_cps() {
    let (trace, _) = generate(&SynthConfig {
        n_cps: 12,
        ..device(0.5)
    })
    .unwrap();
    let params = AlignmentParams::for_width(4350, 230);
    let seg = denoise_pipeline(&trace, 4350.09, 11, &params)
        .unwrap()
        .segment;
    let tpl = template_from_segment(&seg, "t", None).unwrap();
    let opts = PulloutOptions {
        threshold: 1.0,
        ..PulloutOptions::default()
    };
    match pullout_with(&trace, &tpl, &opts) {
        Err(Error::NoCpsFound { max_score }) => assert!(max_score < 1.0),
        other => panic!("expected NoCpsFound, got {other:?}"),
    }
}

fn small_campaign() -> Campaign {
    Campaign {
        synth: SynthConfig {
            leak_gain: 0.1,
            ..device(0.5)
        },
        repeats_per_trace: 20,
        seed: 5,
    }
}

#[test]
fn vt_profile_finds_the_planted_points() {
    let c = small_campaign();
    let plan = AttackPlan {
        n_profiling: 150,
        n_attack: 40,
        n_poi: 1,
        steps: vec![10, 20, 40],
        n_repetitions: 5,
    };
    let params = AlignmentParams::for_width(4350, 230);
    let profile = vt_profile(&c, 4350.09, &params, &plan).unwrap();
    let pois = c.synth.poi_offsets();
    for (b, bp) in profile.bytes.iter().enumerate() {
        assert_eq!(bp.poi_indices, vec![pois[b]], "byte {b}");
    }
    let seg = Segmenter::VirtualTrigger {
        l_cp_samples: 4350.09,
        params,
        width: None,
    };
    let report = attack_campaign(&c, &profile, &seg, &plan).unwrap();
    assert!(report.success(), "{:?}", report.pge.last());
    assert_eq!(report.final_mean_pge(), 0.0);
}

fn active_peak_to_mean(samples: &[f64], idle: usize) -> f64 {
    let a = &samples[idle..];
    let peak = a.iter().copied().fold(f64::MIN, f64::max);
    peak / (a.iter().sum::<f64>() / a.len() as f64)
}

#[test]
fn sharpness_falls_with_length_error() {
    let c = Campaign {
        repeats_per_trace: 40,
        ..small_campaign()
    };
    let n_traces = 8;
    let set = c.trace_set(Role::Attack, n_traces);
    let base = c.synth.period_samples;
    let params = AlignmentParams::for_width(4350, 230);
    let offsets = [0.0, 0.06, 0.11, 0.29];
    let mut mean = [0.0; 4];
    for i in 0..n_traces {
        let (trace, _) = c.synth_trace(&set, i).unwrap();
        for (j, pct) in offsets.iter().enumerate() {
            let l = base * (1.0 + pct / 100.0);
            let n = ((trace.len() - 4350) as f64 / l) as usize;
            let rows = segment_trace_with_width(&trace, l, n, 0, 4350).unwrap();
            let seg = denoise_rows(&rows, &params).unwrap().segment;
            mean[j] += active_peak_to_mean(&seg.samples, 230) / n_traces as f64;
        }
    }
    for w in mean.windows(2) {
        assert!(w[1] <= w[0] + 1e-4, "{mean:?}");
    }
    assert!(mean[3] < mean[0] - 0.01, "{mean:?}");
}
