// Scratch calibration harness: timing and convergence probes for the default
// training setup. Not part of the deliverable surface.

use std::sync::Arc;
use std::time::Instant;

use sire::geometry::build_icosphere;
use sire::network::{extract_directions, Orienter, Precision, Variant, EVAL_SEPARATION};
use sire::phantom::{default_training_corpus, generate_corpus};
use sire::sampler::{draw_sample, gt_directions, sample_spherical, Dataset, SamplerConfig, ScaleSet};
use sire::training::{train, TrainConfig};
use sire::metrics::cosine_eval;

fn main() {
    let t0 = Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let n_vols: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);

    let mut specs = default_training_corpus(2024);
    specs.truncate(n_vols);
    let phantoms = generate_corpus(&specs).unwrap();
    eprintln!("[{:?}] corpus generated ({} volumes)", t0.elapsed(), phantoms.len());
    let held_out_spec = default_training_corpus(1234);
    let held_out = generate_corpus(&held_out_spec[..4]).unwrap();
    let dataset = Dataset::from_phantoms(phantoms, 1200.0, 200.0).unwrap();
    let held = Dataset::from_phantoms(held_out, 1200.0, 200.0).unwrap();

    let cfg = TrainConfig {
        epochs,
        samples_per_epoch: 256,
        learning_rate: lr,
        scales: ScaleSet::Uniform { lo_mm: 1.0, hi_mm: 30.0, count: 8 },
        sampler: SamplerConfig::default(),
        seed: 7,
        checkpoint_every: 0,
        precision: Precision::F32,
        variant: Variant::Gem,
        subdivisions: 3,
        architecture: None,
    };

    // Micro-profile: sampling vs forward/backward.
    {
        use sire::network::{Architecture, GemNet};
        use sire::training::profile_step;
        let mesh3 = Arc::new(build_icosphere(3).unwrap());
        let mut prng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(5);
        let net: GemNet<f32> =
            GemNet::init(Architecture::default_gem(32), mesh3.clone(), &mut prng).unwrap();
        let mut t_draw = std::time::Duration::ZERO;
        let mut t_grad = std::time::Duration::ZERO;
        for _ in 0..50 {
            let t = Instant::now();
            let sample = draw_sample(&dataset, &cfg.scales, &mesh3, &cfg.sampler, &mut prng).unwrap();
            t_draw += t.elapsed();
            let t = Instant::now();
            profile_step(&net, &sample);
            t_grad += t.elapsed();
        }
        eprintln!(
            "profile: draw_sample {:.1} ms, loss+grad {:.1} ms per step",
            t_draw.as_secs_f64() * 20.0,
            t_grad.as_secs_f64() * 20.0
        );
    }

    let t1 = Instant::now();
    let outcome = train(&dataset, &cfg, None).unwrap();
    let train_time = t1.elapsed();
    let steps = epochs * 256;
    eprintln!(
        "trained {} steps in {:?} ({:.1} ms/step)",
        steps,
        train_time,
        train_time.as_secs_f64() * 1000.0 / steps as f64
    );
    for h in outcome.history.iter().step_by((epochs / 10).max(1)) {
        eprintln!(
            "epoch {:4}  loss {:9.4}  pos {:9.4}  neg {:9.4}",
            h.epoch, h.mean_loss, h.mean_pos_loss, h.mean_neg_loss
        );
    }

    // Cosine similarity on held-out centerline points.
    let mesh = Arc::new(build_icosphere(3).unwrap());
    let net = sire::network::AnyNet::from_weights(&outcome.weights, mesh.clone(), Precision::F32).unwrap();
    let mut rng = <rand_chacha::ChaCha12Rng as rand::SeedableRng>::seed_from_u64(99);
    let mut cosines = Vec::new();
    let eval_scales = ScaleSet::Uniform { lo_mm: 1.0, hi_mm: 30.0, count: 8 };
    let cfg_s = SamplerConfig::default();
    for _ in 0..100 {
        use rand::Rng;
        let vol = &held.volumes[rng.gen_range(0..held.volumes.len())];
        let line = &vol.centerlines[0];
        let t = rng.gen_range(0.0..line.length());
        let x = line.position(t);
        let (g1, g2) = gt_directions(line, t, cfg_s.eta).unwrap();
        let scales = eval_scales.draw(&mut rng);
        let signals: Vec<_> = scales
            .iter()
            .map(|&r| sample_spherical(&vol.volume, &x, r, &mesh, cfg_s.channels).unwrap())
            .collect();
        let out = net.forward_multiscale(&scales, &signals).unwrap();
        let peaks = extract_directions(&out.max, &mesh, EVAL_SEPARATION).unwrap();
        cosines.push(cosine_eval((&peaks.d1, &peaks.d2), (&g1, &g2)).unwrap());
    }
    cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    eprintln!(
        "cosine similarity on 100 held-out points: median {:.4}  p10 {:.4}  min {:.4}",
        cosines[50], cosines[10], cosines[0]
    );
    let _ = draw_sample(&dataset, &cfg.scales, &mesh, &cfg_s, &mut rng);

    // Tracking probe: straight tube, helix, and a fat tube.
    use sire::metrics::evaluate;
    use sire::phantom::{fit_volume, generate, helix_branch, straight_branch, PhantomSpec, RadiusProfile};
    use sire::tracker::{track, TrackerConfig};

    let mk = |branches: Vec<sire::phantom::BranchSpec>, spacing: f64, margin: f64, seed: u64| {
        let sp = [spacing, spacing, spacing];
        let (dims, origin) = fit_volume(&branches, margin, sp);
        generate(&PhantomSpec {
            dims,
            spacing_mm: sp,
            origin_mm: origin,
            branches,
            foreground: 300.0,
            background: 40.0,
            noise_sigma: 20.0,
            boundary_softness_voxels: 1.0,
            margin_mm: margin,
            seed,
        })
        .unwrap()
    };

    let cases = vec![
        (
            "straight r=2",
            mk(vec![straight_branch([0.0, 0.0, -40.0], [0.0, 0.0, 40.0], 2.0)], 0.6, 12.0, 9001),
            (1..=10).map(f64::from).collect::<Vec<_>>(),
        ),
        (
            "helix r=2.5",
            mk(
                vec![helix_branch([0.0, 0.0, 0.0], 12.0, 24.0, 1.2, RadiusProfile::Constant { radius_mm: 2.5 })],
                0.7,
                12.0,
                9002,
            ),
            (1..=10).map(f64::from).collect::<Vec<_>>(),
        ),
        (
            "taper 6->3",
            mk(
                vec![sire::phantom::BranchSpec {
                    control_points_mm: straight_branch([0.0, -45.0, 0.0], [0.0, 45.0, 0.0], 6.0)
                        .control_points_mm,
                    radius: RadiusProfile::Linear { start_mm: 6.0, end_mm: 3.0 },
                }],
                0.8,
                20.0,
                9003,
            ),
            (1..=10).map(|k| 2.0 * k as f64).collect::<Vec<_>>(),
        ),
        (
            "straight r=12",
            mk(vec![straight_branch([0.0, 0.0, -50.0], [0.0, 0.0, 50.0], 12.0)], 1.2, 30.0, 9004),
            vec![14.0, 18.0, 22.0, 26.0, 30.0],
        ),
        (
            "straight r=18",
            mk(vec![straight_branch([0.0, 0.0, -50.0], [0.0, 0.0, 50.0], 18.0)], 1.6, 30.0, 52),
            vec![20.0, 24.0, 28.0, 32.0, 36.0],
        ),
    ];

    for (name, phantom, scales) in cases {
        let windowed = phantom.volume.rescale_window(1200.0, 200.0).unwrap();
        let line = &phantom.centerlines[0];
        let seed_point = line.position(line.length() / 2.0);
        let tcfg = TrackerConfig {
            scales_mm: scales,
            step_mm: 0.25,
            tau: 0.9,
            channels: 32,
            max_steps: 2000,
        };
        // Diagnostic: entropy and peak of the aggregated output at the seed.
        {
            let signals: Vec<_> = tcfg
                .scales_mm
                .iter()
                .map(|&r| sample_spherical(&windowed, &seed_point, r, &mesh, 32).unwrap())
                .collect();
            let out = net.forward_multiscale(&tcfg.scales_mm, &signals).unwrap();
            let peak = out.max.iter().cloned().fold(f64::MIN, f64::max);
            let floor = out.max.iter().cloned().fold(f64::MAX, f64::min);
            eprintln!(
                "  seed diag {name}: entropy {:.4}, peak {:.2}, floor {:.2}",
                sire::tracker::entropy(&out.max),
                peak,
                floor
            );
        }
        let t = Instant::now();
        match track(&windowed, &net, seed_point, &tcfg) {
            Ok(result) => {
                let r = evaluate(&[result.points()], std::slice::from_ref(line)).unwrap();
                eprintln!(
                    "track {name}: {} pts, term {:?}, recall {:.3}, precision {:.3}, AI {:?} [{:?}]",
                    result.steps.len(),
                    result.termination,
                    r.recall,
                    r.precision,
                    r.average_inside_mm,
                    t.elapsed()
                );
            }
            Err(e) => eprintln!("track {name}: ERROR {e}"),
        }
    }
    eprintln!("total {:?}", t0.elapsed());
}
