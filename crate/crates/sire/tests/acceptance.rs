//! Acceptance suite: every release criterion, one test per criterion, each
//! printing a pass/fail line. The two trained-model fixtures are built once
//! and shared (expect roughly an hour and a half of training on a laptop CPU
//! for the full suite).
//!
//! Run with `cargo test -p sire --test acceptance -- --nocapture`.

use std::sync::{Arc, OnceLock};
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use sire::centerline::Centerline;
use sire::experiments::{median, rotation_equivariance_test};
use sire::geometry::{
    build_icosphere, compute_frames_with_gauge, haversine, icosahedral_rotations,
    vertex_permutation, IcosphereMesh,
};
use sire::metrics::{classify_points, cosine_eval, evaluate, report};
use sire::network::{
    Architecture, AnyNet, GemNet, MeshContext, ModelWeights, Orienter, Precision, Variant,
};
use sire::phantom::{
    default_training_corpus, fit_volume, generate, generate_corpus, helix_branch,
    small_tube_corpus, straight_branch, BranchSpec, PhantomSpec, RadiusProfile,
};
use sire::sampler::{
    draw_sample, sample_spherical, target_heatmap, Dataset, SamplerConfig, ScaleSet,
    SphericalSignal,
};
use sire::tracker::{entropy, track, StopReason, TrackerConfig};
use sire::training::{gradient_check, train, TrainConfig};
use sire::volume::{ImageVolume, DEFAULT_LEVEL, DEFAULT_WINDOW};

const WINDOW: f64 = DEFAULT_WINDOW;
const LEVEL: f64 = DEFAULT_LEVEL;

fn verdict(id: &str, pass: bool, details: &str) {
    // One line per criterion, visible under --nocapture and in failure output.
    println!("[acceptance {id}] {} — {details}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "[acceptance {id}] FAIL — {details}");
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

struct HeldOutCase {
    name: &'static str,
    volume: ImageVolume, // windowed
    line: Centerline,
    scales: Vec<f64>,
    max_spacing: f64,
}

struct DefaultFixture {
    weights: ModelWeights,
    net: AnyNet,
    mesh: Arc<IcosphereMesh>,
    cases: Vec<HeldOutCase>,
    train_seconds: f64,
}

struct SmallTubeFixture {
    net: AnyNet,
    big_tube: HeldOutCase,
}

fn single_tube_phantom(
    branch: BranchSpec,
    spacing: f64,
    margin: f64,
    noise: f32,
    seed: u64,
) -> (ImageVolume, Centerline) {
    let sp = [spacing, spacing, spacing];
    let branches = vec![branch];
    let (dims, origin) = fit_volume(&branches, margin, sp);
    let phantom = generate(&PhantomSpec {
        dims,
        spacing_mm: sp,
        origin_mm: origin,
        branches,
        foreground: 300.0,
        background: 40.0,
        noise_sigma: noise,
        boundary_softness_voxels: 1.0,
        margin_mm: margin,
        seed,
    })
    .expect("held-out phantom generates");
    let windowed = phantom.volume.rescale_window(WINDOW, LEVEL).unwrap();
    (windowed, phantom.centerlines.into_iter().next().unwrap())
}

fn build_held_out_cases() -> Vec<HeldOutCase> {
    let mut cases = Vec::new();

    let (volume, line) = single_tube_phantom(
        straight_branch([0.0, 0.0, -40.0], [0.0, 0.0, 40.0], 2.0),
        0.6,
        12.0,
        20.0,
        9001,
    );
    cases.push(HeldOutCase {
        name: "straight r=2",
        volume,
        line,
        scales: (1..=10).map(f64::from).collect(),
        max_spacing: 0.6,
    });

    let (volume, line) = single_tube_phantom(
        helix_branch(
            [0.0, 0.0, 0.0],
            12.0,
            24.0,
            1.2,
            RadiusProfile::Constant { radius_mm: 2.5 },
        ),
        0.7,
        12.0,
        20.0,
        9002,
    );
    cases.push(HeldOutCase {
        name: "helix r=2.5",
        volume,
        line,
        scales: (1..=10).map(f64::from).collect(),
        max_spacing: 0.7,
    });

    let (volume, line) = single_tube_phantom(
        BranchSpec {
            control_points_mm: straight_branch([0.0, -45.0, 0.0], [0.0, 45.0, 0.0], 6.0)
                .control_points_mm,
            radius: RadiusProfile::Linear {
                start_mm: 6.0,
                end_mm: 3.0,
            },
        },
        0.8,
        20.0,
        20.0,
        9003,
    );
    cases.push(HeldOutCase {
        name: "taper 6->3",
        volume,
        line,
        scales: (1..=10).map(|k| 2.0 * k as f64).collect(),
        max_spacing: 0.8,
    });

    let (volume, line) = single_tube_phantom(
        straight_branch([0.0, 0.0, -50.0], [0.0, 0.0, 50.0], 12.0),
        1.2,
        30.0,
        20.0,
        9004,
    );
    cases.push(HeldOutCase {
        name: "straight r=12",
        volume,
        line,
        scales: vec![14.0, 18.0, 22.0, 26.0, 30.0],
        max_spacing: 1.2,
    });

    cases
}

fn default_fixture() -> &'static DefaultFixture {
    static FIXTURE: OnceLock<DefaultFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        eprintln!("[fixture] generating the default corpus and training 300 epochs...");
        let t0 = Instant::now();
        let specs = default_training_corpus(2024);
        let phantoms = generate_corpus(&specs).expect("corpus generates");
        let dataset = Dataset::from_phantoms(phantoms, WINDOW, LEVEL).unwrap();
        let cfg = TrainConfig {
            epochs: 300,
            samples_per_epoch: 256,
            learning_rate: 3e-3,
            scales: ScaleSet::Uniform {
                lo_mm: 1.0,
                hi_mm: 30.0,
                count: 8,
            },
            sampler: SamplerConfig::default(),
            seed: 42,
            checkpoint_every: 0,
            precision: Precision::F32,
            variant: Variant::Gem,
            subdivisions: 3,
            architecture: None,
        };
        let outcome = train(&dataset, &cfg, None).expect("training converges");
        let train_seconds = t0.elapsed().as_secs_f64();
        eprintln!(
            "[fixture] default model trained in {:.1} min (final loss {:.4})",
            train_seconds / 60.0,
            outcome.history.last().unwrap().mean_loss
        );
        let mesh = Arc::new(build_icosphere(3).unwrap());
        let net = AnyNet::from_weights(&outcome.weights, mesh.clone(), Precision::F32).unwrap();
        DefaultFixture {
            weights: outcome.weights,
            net,
            mesh,
            cases: build_held_out_cases(),
            train_seconds,
        }
    })
}

fn small_tube_fixture() -> &'static SmallTubeFixture {
    static FIXTURE: OnceLock<SmallTubeFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        eprintln!("[fixture] training the small-tube model (radii 1.5-4 mm)...");
        let specs = small_tube_corpus(7331);
        let phantoms = generate_corpus(&specs).expect("small corpus generates");
        let dataset = Dataset::from_phantoms(phantoms, WINDOW, LEVEL).unwrap();
        let cfg = TrainConfig {
            epochs: 150,
            samples_per_epoch: 256,
            learning_rate: 3e-3,
            scales: ScaleSet::Uniform {
                lo_mm: 1.0,
                hi_mm: 10.0,
                count: 8,
            },
            sampler: SamplerConfig::default(),
            seed: 43,
            checkpoint_every: 0,
            precision: Precision::F32,
            variant: Variant::Gem,
            subdivisions: 3,
            architecture: None,
        };
        let outcome = train(&dataset, &cfg, None).expect("training converges");
        let mesh = Arc::new(build_icosphere(3).unwrap());
        let net = AnyNet::from_weights(&outcome.weights, mesh.clone(), Precision::F32).unwrap();

        let (volume, line) = single_tube_phantom(
            straight_branch([0.0, 0.0, -50.0], [0.0, 0.0, 50.0], 20.0),
            1.6,
            50.0,
            20.0,
            9005,
        );
        SmallTubeFixture {
            net,
            big_tube: HeldOutCase {
                name: "straight r=20 (unseen calibre)",
                volume,
                line,
                scales: vec![25.0, 30.0, 35.0, 40.0, 45.0, 50.0],
                max_spacing: 1.6,
            },
        }
    })
}

fn held_out_dataset(cases: &[HeldOutCase]) -> Dataset {
    Dataset {
        volumes: cases
            .iter()
            .map(|c| sire::sampler::DatasetVolume {
                volume: c.volume.clone(),
                centerlines: vec![c.line.clone()],
            })
            .collect(),
    }
}

fn random_signal(mesh: &IcosphereMesh, channels: usize, rng: &mut impl Rng) -> SphericalSignal {
    let data = (0..mesh.vertex_count() * channels)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    SphericalSignal::from_data(mesh, channels, data).unwrap()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    num / den
}

// ---------------------------------------------------------------------------
// 1. Equivariance suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_1a_exact_icosahedral_equivariance() {
    let t0 = Instant::now();
    let mesh = Arc::new(build_icosphere(3).unwrap());
    let rotations = icosahedral_rotations();
    let perms: Vec<Vec<usize>> = rotations
        .iter()
        .map(|r| vertex_permutation(&mesh, r).unwrap())
        .collect();

    let worst = (0..20u64)
        .into_par_iter()
        .map(|model_idx| {
            let mut rng = ChaCha12Rng::seed_from_u64(100 + model_idx);
            let net: GemNet<f32> =
                GemNet::init(Architecture::default_gem(16), mesh.clone(), &mut rng).unwrap();
            let sig = random_signal(&mesh, 16, &mut rng);
            let out = net.forward(&sig).unwrap();
            let mut worst = 0.0f64;
            for perm in &perms {
                let c = sig.channels();
                let mut data = vec![0.0; sig.data().len()];
                for i in 0..perm.len() {
                    data[perm[i] * c..(perm[i] + 1) * c].copy_from_slice(sig.vertex_row(i));
                }
                let sig_p = SphericalSignal::from_data(&mesh, c, data).unwrap();
                let out_p = net.forward(&sig_p).unwrap();
                let mut expected = vec![0.0; out.len()];
                for i in 0..perm.len() {
                    expected[perm[i]] = out[i];
                }
                worst = worst.max(rel_l2(&expected, &out_p));
            }
            worst
        })
        .reduce(|| 0.0, f64::max);

    let elapsed = t0.elapsed();
    verdict(
        "1a",
        worst < 1e-5 && elapsed.as_secs() < 60,
        &format!(
            "60 rotations x 20 random models: max relative L2 {worst:.2e} (< 1e-5), {:.1} s (< 60 s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_1b_gauge_invariance() {
    let mesh = Arc::new(build_icosphere(3).unwrap());
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let net: GemNet<f32> =
        GemNet::init(Architecture::default_gem(16), mesh.clone(), &mut rng).unwrap();
    let sig = random_signal(&mesh, 16, &mut rng);
    let base = net.forward(&sig).unwrap();

    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gauge: Vec<usize> = (0..mesh.vertex_count())
            .map(|i| rng.gen_range(0..mesh.neighbors_of(i).len()))
            .collect();
        let atlas = compute_frames_with_gauge(&mesh, &gauge);
        let ctx = MeshContext::with_atlas(mesh.clone(), atlas, net.arch().max_irrep());
        let regauged = net.with_context(ctx);
        let out = regauged.forward(&sig).unwrap();
        for (a, b) in base.iter().zip(&out) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        "1b",
        worst < 1e-5,
        &format!("100 random re-gaugings: max |scalar output change| {worst:.2e} (< 1e-5)"),
    );
}

#[test]
fn criterion_1c_trained_model_rotation_test() {
    let fixture = default_fixture();
    let dataset = held_out_dataset(&fixture.cases);
    let scales = ScaleSet::Uniform {
        lo_mm: 1.0,
        hi_mm: 30.0,
        count: 8,
    };
    let report =
        rotation_equivariance_test(&fixture.net, &dataset, &scales, 200, 0.25, 0x4d).unwrap();
    let mu = report.median_unrotated();
    let mr = report.median_rotated();
    let pass = mu >= 0.98 && (mu - mr).abs() <= 0.02;
    verdict(
        "1c",
        pass,
        &format!(
            "200 held-out points: median cosine unrotated {mu:.4} (>= 0.98), rotated {mr:.4}, |delta| {:.4} (<= 0.02); CNN baseline not built",
            (mu - mr).abs()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Scale-invariance suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_2a_scale_permutation_and_duplicates() {
    let t0 = Instant::now();
    let mesh = Arc::new(build_icosphere(3).unwrap());
    let failures: usize = (0..10u64)
        .into_par_iter()
        .map(|model_idx| {
            let mut rng = ChaCha12Rng::seed_from_u64(300 + model_idx);
            let net: GemNet<f32> =
                GemNet::init(Architecture::default_gem(8), mesh.clone(), &mut rng).unwrap();
            let mut bad = 0usize;
            for _case in 0..100 {
                let m = rng.gen_range(2..=4usize);
                let scales: Vec<f64> = (0..m).map(|_| rng.gen_range(1.0..30.0)).collect();
                let signals: Vec<SphericalSignal> =
                    (0..m).map(|_| random_signal(&mesh, 8, &mut rng)).collect();
                let base = net.forward_multiscale(&scales, &signals).unwrap();

                // Random permutation.
                let mut order: Vec<usize> = (0..m).collect();
                for i in (1..m).rev() {
                    order.swap(i, rng.gen_range(0..=i));
                }
                let p_scales: Vec<f64> = order.iter().map(|&i| scales[i]).collect();
                let p_signals: Vec<SphericalSignal> =
                    order.iter().map(|&i| signals[i].clone()).collect();
                let permuted = net.forward_multiscale(&p_scales, &p_signals).unwrap();
                if permuted.max != base.max {
                    bad += 1;
                }

                // Duplicate one scale.
                let dup = rng.gen_range(0..m);
                let mut d_scales = scales.clone();
                let mut d_signals = signals.clone();
                d_scales.push(scales[dup]);
                d_signals.push(signals[dup].clone());
                let dup_out = net.forward_multiscale(&d_scales, &d_signals).unwrap();
                if dup_out.max != base.max {
                    bad += 1;
                }
            }
            bad
        })
        .sum();
    let elapsed = t0.elapsed();
    verdict(
        "2a",
        failures == 0 && elapsed.as_secs() < 10,
        &format!(
            "1000 random permutation+duplicate cases: {failures} mismatches (exact equality), {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2b_active_scale_monotonicity() {
    let fixture = default_fixture();
    let radii = [2.0f64, 4.0, 8.0, 16.0];
    let probe_scales: Vec<f64> = (1..=30).map(f64::from).collect();
    let mut mean_active = Vec::new();
    let mut median_min_activating = Vec::new();

    for (i, &radius) in radii.iter().enumerate() {
        let spacing = (radius / 4.0).clamp(0.5, 1.5);
        let (volume, line) = single_tube_phantom(
            straight_branch([0.0, 0.0, -40.0], [0.0, 0.0, 40.0], radius),
            spacing,
            30.0,
            20.0,
            9100 + i as u64,
        );
        let mut actives = Vec::new();
        let mut minimals = Vec::new();
        for k in 0..25 {
            let t = line.length() * (k as f64 + 0.5) / 25.0;
            let x = line.position(t);
            let signals: Vec<SphericalSignal> = probe_scales
                .iter()
                .map(|&r| sample_spherical(&volume, &x, r, &fixture.mesh, 32).unwrap())
                .collect();
            let out = fixture.net.forward_multiscale(&probe_scales, &signals).unwrap();
            // Active scale at the winning vertex.
            let winner = out
                .max
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            actives.push(out.active_scale_mm(winner));
            // Minimal activating scale: smallest scale whose response reaches
            // half of the best scale-wise response at this point.
            let per_scale_peak: Vec<f64> = out
                .per_scale
                .iter()
                .map(|s| s.iter().cloned().fold(f64::MIN, f64::max))
                .collect();
            let best = per_scale_peak.iter().cloned().fold(f64::MIN, f64::max);
            let minimal = probe_scales
                .iter()
                .zip(&per_scale_peak)
                .find(|(_, &p)| p >= 0.5 * best)
                .map(|(&s, _)| s)
                .unwrap();
            minimals.push(minimal);
        }
        mean_active.push(actives.iter().sum::<f64>() / actives.len() as f64);
        median_min_activating.push(median(&minimals));
    }

    let monotone = mean_active.windows(2).all(|w| w[0] < w[1]);
    let above_radius = radii
        .iter()
        .zip(&median_min_activating)
        .all(|(&r, &m)| m > r);
    verdict(
        "2b",
        monotone && above_radius,
        &format!(
            "radii {radii:?}: mean active scale {mean_active:?} (strictly increasing: {monotone}); median minimal activating scale {median_min_activating:?} (> radius: {above_radius})"
        ),
    );
}

// ---------------------------------------------------------------------------
// 3. Gradient correctness
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_gradient_correctness() {
    let t0 = Instant::now();
    let mesh = Arc::new(build_icosphere(2).unwrap());
    let mut rng = ChaCha12Rng::seed_from_u64(31337);
    let net: GemNet<f64> =
        GemNet::init(Architecture::default_gem(32), mesh.clone(), &mut rng).unwrap();
    let weights = net.to_weights();

    let branch = straight_branch([0.0, 0.0, -35.0], [0.0, 0.0, 35.0], 4.0);
    let sp = [1.0, 1.0, 1.0];
    let branches = vec![branch];
    let (dims, origin) = fit_volume(&branches, 12.0, sp);
    let phantom = generate(&PhantomSpec {
        dims,
        spacing_mm: sp,
        origin_mm: origin,
        branches,
        foreground: 300.0,
        background: 40.0,
        noise_sigma: 20.0,
        boundary_softness_voxels: 1.0,
        margin_mm: 12.0,
        seed: 5,
    })
    .unwrap();
    let dataset = Dataset::from_phantoms(vec![phantom], WINDOW, LEVEL).unwrap();
    let scales = ScaleSet::Uniform {
        lo_mm: 2.0,
        hi_mm: 12.0,
        count: 3,
    };
    let sampler = SamplerConfig::default();

    let mut worst = 0.0f64;
    for s in 0..5 {
        let sample = draw_sample(&dataset, &scales, &mesh, &sampler, &mut rng).unwrap();
        let err = gradient_check(&weights, &sample, mesh.clone(), 200, 1000 + s).unwrap();
        worst = worst.max(err);
    }
    let elapsed = t0.elapsed();
    verdict(
        "3",
        worst < 1e-4 && elapsed.as_secs() < 300,
        &format!(
            "200 parameters x 5 samples: max relative error {worst:.2e} (< 1e-4), {:.1} s (< 300 s)",
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// 4. Heatmap unit tests
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_heatmap_values_and_support() {
    let mesh = build_icosphere(3).unwrap();
    let mut ok = true;
    let mut notes = Vec::new();

    // Exact values at D = 0, D = β/2, D ≥ β (α = 3, β = 0.3).
    let d1 = mesh.vertex(77);
    let map = target_heatmap(&mesh, &d1, &(-d1), 3.0, 0.3).unwrap();
    let at_zero = map.get(77, 0);
    ok &= (at_zero - 3.0f64.exp()).abs() < 1e-12;
    notes.push(format!("D=0 -> {at_zero:.4} (e^3 = {:.4})", 3.0f64.exp()));
    let half: f64 = (3.0f64 * (1.0 - 0.5)).exp();
    ok &= (half - 1.5f64.exp()).abs() < 1e-12;
    notes.push(format!("D=β/2 -> {half:.4} (e^1.5 = {:.4})", 1.5f64.exp()));
    for (vi, v) in mesh.vertices().iter().enumerate() {
        let d = haversine(v, &d1).unwrap().min(haversine(v, &(-d1)).unwrap());
        if d >= 0.3 {
            ok &= map.get(vi, 0) == 0.0;
        }
    }
    notes.push("zero outside β".into());

    // Brute-force support count on random direction pairs.
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    for _ in 0..50 {
        let da = sire::phantom::random_unit(&mut rng);
        let db = sire::phantom::random_unit(&mut rng);
        let m = target_heatmap(&mesh, &da, &db, 3.0, 0.3).unwrap();
        let nonzero = m.data().iter().filter(|&&v| v > 0.0).count();
        let va = mesh.vertex(mesh.nearest_vertex(&da).unwrap());
        let vb = mesh.vertex(mesh.nearest_vertex(&db).unwrap());
        let brute = mesh
            .vertices()
            .iter()
            .filter(|v| haversine(v, &va).unwrap().min(haversine(v, &vb).unwrap()) < 0.3)
            .count();
        ok &= nonzero == brute;
    }
    notes.push("support count == brute force on 50 random pairs".into());

    verdict("4", ok, &notes.join("; "));
}

// ---------------------------------------------------------------------------
// 5. Tracking on phantoms
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_tracking_on_held_out_phantoms() {
    let fixture = default_fixture();
    let t0 = Instant::now();
    let mut all_pass = true;
    let mut notes = Vec::new();
    for case in &fixture.cases {
        let config = TrackerConfig {
            scales_mm: case.scales.clone(),
            step_mm: 0.25,
            tau: 0.9,
            channels: 32,
            max_steps: 4000,
        };
        let seed = case.line.position(case.line.length() / 2.0);
        let result = track(&case.volume, &fixture.net, seed, &config).unwrap();
        let r = evaluate(&[result
            .steps
            .iter()
            .map(|s| s.position)
            .collect::<Vec<_>>()], std::slice::from_ref(&case.line))
        .unwrap();
        let ai = r.average_inside_mm.unwrap_or(f64::INFINITY);
        let pass = r.recall >= 0.95 && ai <= case.max_spacing;
        all_pass &= pass;
        notes.push(format!(
            "{}: recall {:.3} (>= 0.95), AI {:.3} mm (<= {:.2})",
            case.name, r.recall, ai, case.max_spacing
        ));
    }
    let eval_seconds = t0.elapsed().as_secs_f64();
    let budget = fixture.train_seconds + eval_seconds;
    let within_budget = budget < 8.0 * 3600.0;
    all_pass &= within_budget;
    notes.push(format!(
        "train+eval {:.1} min (< 8 h CPU)",
        budget / 60.0
    ));
    verdict("5", all_pass, &notes.join("; "));
}

// ---------------------------------------------------------------------------
// 6. Cross-calibre generalisation
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_cross_calibre_generalisation() {
    let fixture = small_tube_fixture();
    let case = &fixture.big_tube;
    let config = TrackerConfig {
        scales_mm: case.scales.clone(),
        step_mm: 0.5,
        tau: 0.9,
        channels: 32,
        max_steps: 4000,
    };
    let seed = case.line.position(case.line.length() / 2.0);
    let result = track(&case.volume, &fixture.net, seed, &config).unwrap();
    let r = evaluate(
        &[result.steps.iter().map(|s| s.position).collect::<Vec<_>>()],
        std::slice::from_ref(&case.line),
    )
    .unwrap();
    verdict(
        "6",
        r.recall >= 0.9,
        &format!(
            "model trained on radii 1.5-4 mm tracks a 20 mm tube at scales {:?}: recall {:.3} (>= 0.9)",
            case.scales, r.recall
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Entropy separation
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_entropy_separation() {
    let fixture = default_fixture();
    let mut rng = ChaCha12Rng::seed_from_u64(777);
    let mut inside = Vec::with_capacity(500);
    let mut outside = Vec::with_capacity(500);

    while inside.len() < 500 || outside.len() < 500 {
        let case = &fixture.cases[rng.gen_range(0..fixture.cases.len())];
        let t = rng.gen_range(0.0..case.line.length());
        let x = case.line.position(t);
        if inside.len() < 500 {
            let signals: Vec<SphericalSignal> = case
                .scales
                .iter()
                .map(|&r| sample_spherical(&case.volume, &x, r, &fixture.mesh, 32).unwrap())
                .collect();
            let out = fixture.net.forward_multiscale(&case.scales, &signals).unwrap();
            inside.push(entropy(&out.max));
        }

        // Matched outside point: perpendicular offset in (1.5, 3)·ρ.
        if outside.len() < 500 {
            let tangent = case.line.tangent(t);
            let radial = sire::sampler::perpendicular_unit(&tangent, &mut rng);
            let x_out = x + radial * (rng.gen_range(1.5..3.0) * case.line.radius(t));
            if !case.volume.contains(&x_out) {
                continue;
            }
            let signals: Vec<SphericalSignal> = case
                .scales
                .iter()
                .map(|&r| sample_spherical(&case.volume, &x_out, r, &fixture.mesh, 32).unwrap())
                .collect();
            let out = fixture.net.forward_multiscale(&case.scales, &signals).unwrap();
            outside.push(entropy(&out.max));
        }
    }
    let m_in = median(&inside);
    let m_out = median(&outside);

    // Background seed: far from the tube in the r=12 volume.
    let case = &fixture.cases[3];
    let seed = case.line.position(case.line.length() / 2.0) + Vector3::new(30.0, 0.0, 0.0);
    assert!(case.volume.contains(&seed), "background seed must be inside the volume");
    let config = TrackerConfig {
        scales_mm: case.scales.clone(),
        step_mm: 0.25,
        tau: 0.9,
        channels: 32,
        max_steps: 4000,
    };
    let result = track(&case.volume, &fixture.net, seed, &config).unwrap();
    let by_entropy = result.termination == (StopReason::Entropy, StopReason::Entropy);
    let few_steps = result.steps.len() <= 10;

    verdict(
        "7",
        m_in < m_out && by_entropy && few_steps,
        &format!(
            "median normalized entropy inside {m_in:.4} < outside {m_out:.4}; background seed terminated by entropy after {} points (<= 10)",
            result.steps.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 8. Metrics oracle tests
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_metrics_oracles() {
    let mut ok = true;
    let mut notes = Vec::new();

    let points: Vec<Point3<f64>> = (0..=400)
        .map(|i| Point3::new(i as f64 * 0.25, 0.0, 0.0))
        .collect();
    let reference = Centerline::new(points, vec![2.0; 401]).unwrap();

    // Half coverage: precision 1, recall 0.5 ± one-point quantisation.
    let half: Vec<Point3<f64>> = reference.points()[..=200].to_vec();
    let r = report(&classify_points(&half, &reference).unwrap());
    ok &= r.precision == 1.0;
    ok &= (r.recall - 0.5).abs() <= 8.0 / 401.0 + 1e-12;
    notes.push(format!("half coverage: precision {:.3}, recall {:.3}", r.precision, r.recall));

    // Constant offset: precision 1, AI exactly the offset.
    let offset: Vec<Point3<f64>> = reference
        .points()
        .iter()
        .map(|p| p + Vector3::new(0.0, 1.0, 0.0))
        .collect();
    let r = report(&classify_points(&offset, &reference).unwrap());
    ok &= r.precision == 1.0 && r.average_inside_mm == Some(1.0);
    notes.push(format!("constant offset: AI {:?} (exact 1.0)", r.average_inside_mm));

    // Swap symmetry.
    let mut spur = half.clone();
    for i in 0..60 {
        spur.push(Point3::new(i as f64, 30.0, 0.0));
    }
    let spur_line = Centerline::new(spur.clone(), vec![2.0; spur.len()]).unwrap();
    let fwd = report(&classify_points(&spur, &reference).unwrap());
    let rev = report(&classify_points(reference.points(), &spur_line).unwrap());
    ok &= (fwd.precision - rev.recall).abs() < 1e-12
        && (fwd.recall - rev.precision).abs() < 1e-12
        && (fwd.overlap - rev.overlap).abs() < 1e-12;
    notes.push("swap symmetry holds".into());

    // Cosine evaluation oracle values.
    let g1: Vector3<f64> = Vector3::x();
    ok &= cosine_eval((&g1, &-g1), (&g1, &-g1)).unwrap() == 1.0;
    ok &= cosine_eval((&-g1, &g1), (&g1, &-g1)).unwrap() == 1.0;
    notes.push("cosine pairing symmetric".into());

    verdict("8", ok, &notes.join("; "));
}
