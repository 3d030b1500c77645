//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a failure status if any criterion failed. Runs without the libtest
//! harness so the lines are always shown:
//! `cargo test -p dexsynth-core --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use dexsynth::contact::{
    count_flicker, dual_threshold, hysteresis, impute_states, interpolate_contact, ContactConfig, ObjectMotion,
};
use dexsynth::hand_model::{Finger, JointVector, KinematicChain, LoadOptions};
use dexsynth::io::{self, RefinedRecord};
use dexsynth::metrics::{chamfer_over_time, CdMode};
use dexsynth::pipeline::{Pipeline, PipelineConfig, RunManifest, REFINE_FILE};
use dexsynth::refine::*;
use dexsynth::retarget::{retarget_sequence, RetargetConfig, RetargetedFrame};
use dexsynth::synth::{frames_from_path, icosphere, smooth_joint_path, synth3_chain};
use nalgebra::{Point3, Unit, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

mod common;

const MM: f64 = 1e-3;
const DT: f64 = 1.0 / 30.0;

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn chain() -> KinematicChain {
    KinematicChain::from_file(synth3_chain(), LoadOptions::default()).unwrap()
}

fn random_pose(c: &KinematicChain, rng: &mut ChaCha8Rng) -> JointVector {
    let (lo, hi) = (c.lower_bounds(), c.upper_bounds());
    let mut q = JointVector::zeros(c.dof());
    for i in c.articulated_dofs() {
        if hi[i] > lo[i] {
            q[i] = rng.random_range(lo[i]..hi[i]);
        }
    }
    q
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn gradient_fidelity() -> Check {
    let c = chain();
    let mesh = icosphere(3, 0.03, Point3::new(0.0, 0.13, 0.02));
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let dofs: Vec<usize> = c.articulated_dofs().filter(|&i| c.upper_bounds()[i] > c.lower_bounds()[i]).collect();
    let central = |f: &dyn Fn(&JointVector) -> f64, q: &JointVector, i: usize, h: f64| {
        let (mut a, mut b) = (q.clone(), q.clone());
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    };
    // The penetration term is only piecewise smooth: the nearest mesh face
    // switches across medial planes inside the object. Where a 1e-5 stencil
    // disagrees, the DoF is re-checked with a 1e-7 stencil, which no longer
    // straddles the switch.
    let mut refined = 0;
    let mut fd = |f: &dyn Fn(&JointVector) -> f64, q: &JointVector, grad: &[f64]| -> Vec<f64> {
        let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        dofs.iter()
            .map(|&i| {
                let d = central(f, q, i, 1e-5);
                if (d - grad[i]).abs() <= 1e-4 * norm {
                    return d;
                }
                refined += 1;
                central(f, q, i, 1e-7)
            })
            .collect()
    };
    let mut worst = [0.0f64; 5];
    let mut active = [0usize; 5];
    for _ in 0..20 {
        let q = random_pose(&c, &mut rng);
        let q_init = random_pose(&c, &mut rng);
        let points = c.surface_points(&q, None);
        let targets: Vec<Target> = (0..6)
            .map(|_| {
                let i = rng.random_range(0..c.sample_count());
                let dir = Vector3::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                Target {
                    point: i,
                    anchor: points[i].position + dir * 0.02,
                    normal: Unit::new_normalize(dir),
                }
            })
            .collect();
        let finger = [Finger::Thumb, Finger::Index, Finger::Middle][rng.random_range(0..3)];
        let terms: [(Vec<f64>, Box<dyn Fn(&JointVector) -> f64>); 5] = [
            (grad_e_dis(&c, &q, &targets), Box::new(|x| e_dis(&c, x, &targets))),
            (grad_e_pen(&c, &q, &mesh, MM), Box::new(|x| e_pen(&c, x, &mesh, MM))),
            (
                grad_e_align(&c, &q, &targets, NormalConvention::Facing),
                Box::new(|x| e_align(&c, x, &targets, NormalConvention::Facing)),
            ),
            (grad_e_spen(&c, &q, finger, 0.01), Box::new(|x| e_spen(&c, x, finger, 0.01))),
            (grad_e_joints(&q, &q_init).unwrap(), Box::new(|x| e_joints(x, &q_init).unwrap())),
        ];
        for (k, (grad, f)) in terms.iter().enumerate() {
            let analytic: Vec<f64> = dofs.iter().map(|&i| grad[i]).collect();
            let numeric = fd(f.as_ref(), &q, grad);
            let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = numeric.iter().chain(&analytic).map(|v| v * v).sum::<f64>().sqrt();
            if scale > 0.0 {
                worst[k] = worst[k].max(diff / scale);
                active[k] += 1;
            }
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    ensure(
        max < 1e-4 && active.iter().all(|&n| n >= 5),
        format!(
            "worst relative error {max:.2e}; dis/pen/align/spen/joints active in {active:?} of 20; {refined} DoF re-checked with a finer step"
        ),
    )
}

fn oracle_equivalence() -> Check {
    let mesh = icosphere(3, 0.04, Point3::new(0.01, -0.02, 0.03));
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = Point3::new(rng.random_range(-0.08..0.1), rng.random_range(-0.1..0.08), rng.random_range(-0.06..0.12));
        worst = worst.max((mesh.nearest_point(&p).distance - common::oracle_distance(&mesh, &p)).abs());
    }
    let cloud = |rng: &mut ChaCha8Rng| -> Vec<Point3<f64>> {
        (0..50)
            .map(|_| Point3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)))
            .collect()
    };
    let r: Vec<_> = (0..10).map(|_| cloud(&mut rng)).collect();
    let g: Vec<_> = (0..10).map(|_| cloud(&mut rng)).collect();
    let nn = |p: &Point3<f64>, set: &[Point3<f64>]| set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
    let mut cd_gap: f64 = 0.0;
    for mode in [CdMode::Literal, CdMode::Bidirectional] {
        let mut total = 0.0;
        for (a, b) in r.iter().zip(&g) {
            total += match mode {
                CdMode::Literal => a.iter().map(|p| nn(p, b)).fold(f64::INFINITY, f64::min),
                CdMode::Bidirectional => {
                    let ab = a.iter().map(|p| nn(p, b)).sum::<f64>() / a.len() as f64;
                    let ba = b.iter().map(|p| nn(p, a)).sum::<f64>() / b.len() as f64;
                    0.5 * (ab + ba)
                }
            };
        }
        cd_gap = cd_gap.max((chamfer_over_time(&r, &g, mode).unwrap() - total / r.len() as f64).abs());
    }
    ensure(
        worst <= 1e-9 && cd_gap <= 1e-9,
        format!("nearest point gap {worst:.1e}, chamfer gap {cd_gap:.1e}"),
    )
}

fn interpolation_truth_table() -> Check {
    let c = ContactConfig::default();
    let constants = (c.alpha_v, c.v_f, c.f_c, c.tau_c) == (0.6, 0.8, 30.0, 0.7);
    let table: Vec<(bool, bool, bool)> = [(true, true), (true, false), (false, true), (false, false)]
        .iter()
        .map(|&(a, b)| (a, b, interpolate_contact(a, b, &c)))
        .collect();
    let expected = [true, false, false, false];
    let ok = constants && table.iter().zip(expected).all(|(t, e)| t.2 == e);
    let rows: Vec<String> = table.iter().map(|(a, b, v)| format!("({},{})->{}", *a as u8, *b as u8, *v as u8)).collect();
    ensure(ok, rows.join(" "))
}

fn mean_second_difference(out: &[RetargetedFrame]) -> f64 {
    let n = out.len();
    let total: f64 = (1..n - 1)
        .map(|t| {
            out[t + 1]
                .q
                .iter()
                .zip(out[t].q.iter())
                .zip(out[t - 1].q.iter())
                .map(|((a, b), c)| (a - 2.0 * b + c).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .sum();
    total / (n - 2) as f64
}

fn temporal_regularisation() -> Check {
    let c = chain();
    let path = smooth_joint_path(&c, 120, DT);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let (lo, hi) = (c.lower_bounds(), c.upper_bounds());
    let jittered: Vec<JointVector> = path
        .iter()
        .map(|q| {
            let mut q = q.clone();
            for i in c.articulated_dofs() {
                q[i] = (q[i] + noise.sample(&mut rng)).clamp(lo[i], hi[i]);
            }
            q
        })
        .collect();
    let frames = frames_from_path(&c, &jittered, DT);
    let run = |lambda: f64, gamma: f64| {
        let cfg = RetargetConfig {
            lambda,
            gamma,
            seed: 1,
            ..RetargetConfig::default()
        };
        mean_second_difference(&retarget_sequence(&c, &frames, &cfg).unwrap())
    };
    let (with, without) = (run(0.1, 0.5), run(0.0, 0.0));
    let reduction = 1.0 - with / without;
    ensure(
        reduction >= 0.3,
        format!("mean |d2q| {with:.4} vs {without:.4} unregularised ({:.0}% lower)", 100.0 * reduction),
    )
}

fn flicker_resolution() -> Check {
    let (header, trace) = io::read_trace(&fixtures().join("noisy_contact.jsonl")).unwrap();
    let cfg = ContactConfig {
        beta1: header.meta["beta1"].as_f64().unwrap(),
        ..ContactConfig::default()
    };
    let raw = dual_threshold(&trace, &cfg);
    let out = impute_states(&raw, &trace, &ObjectMotion::Static, &cfg).unwrap();
    let (before, after) = (count_flicker(&raw), count_flicker(&out.states));
    let removed = 1.0 - after as f64 / before as f64;
    let closed = out
        .changed
        .iter()
        .filter(|&&(t, d)| !out.gates[t][d].is_some_and(|g| g.open))
        .count();
    ensure(
        trace.len() == 200 && removed >= 0.6 && closed == 0,
        format!(
            "{before} -> {after} flickers ({:.0}% removed), {closed} closed-gate frames altered",
            100.0 * removed
        ),
    )
}

struct DemoRun {
    dir: TempDir,
    manifest: RunManifest,
    seconds: f64,
}

fn demo_config(output: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::load(fixtures().join("demo.toml")).unwrap();
    cfg.paths.output = output;
    cfg
}

fn demo_run() -> &'static DemoRun {
    static RUN: OnceLock<DemoRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let start = Instant::now();
        let manifest = Pipeline::open(demo_config(dir.path().to_path_buf())).unwrap().cmd_run_all().unwrap();
        DemoRun {
            dir,
            manifest,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn penetration_reduction() -> Check {
    let run = demo_run();
    let metrics: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run.dir.path().join("metrics.json")).unwrap()).unwrap();
    let get = |k: &str, f: &str| metrics["reports"][k][f].as_f64().unwrap();
    let (pen0, pen1) = (get("retargeted", "max_penetration"), get("refined", "max_penetration"));
    let (acc0, acc1) = (get("retargeted", "rms_acc"), get("refined", "rms_acc"));
    let reduction = 1.0 - pen1 / pen0;
    let growth = acc1 / acc0 - 1.0;
    ensure(
        pen0 > 3.5 * MM && reduction >= 0.9 && pen1 < 0.4 * MM && growth <= 0.13,
        format!(
            "max penetration {:.3} -> {:.3} mm ({:.0}% lower), RMS joint acceleration {:+.1}%, run-all {:.1} s",
            pen0 / MM,
            pen1 / MM,
            100.0 * reduction,
            100.0 * growth,
            run.seconds
        ),
    )
}

fn monotone_descent() -> Check {
    let run = demo_run();
    let (_, records) =
        io::read_records::<RefinedRecord>(&run.dir.path().join(REFINE_FILE), io::REFINED_FORMAT).unwrap();
    let mut iterates = 0;
    let mut violations = 0;
    for r in &records {
        for pass in &r.refined.passes {
            let trace = &pass.result.trace;
            iterates += trace.len().saturating_sub(1);
            violations += trace.windows(2).filter(|w| w[1] > w[0]).count();
        }
    }
    ensure(
        violations == 0 && iterates > 0,
        format!("{violations} violations over {iterates} accepted iterates"),
    )
}

fn determinism() -> Check {
    let first = &demo_run().manifest;
    let dir = TempDir::new().unwrap();
    let second = Pipeline::open(demo_config(dir.path().to_path_buf())).unwrap().cmd_run_all().unwrap();
    let names: Vec<String> = first.outputs.iter().map(|f| f.path.display().to_string()).collect();
    ensure(
        first.outputs == second.outputs && !first.outputs.is_empty(),
        format!("{} output digests compared ({})", first.outputs.len(), names.join(", ")),
    )
}

fn retargeting_recovery() -> Check {
    let c = chain();
    let path = smooth_joint_path(&c, 120, DT);
    let frames = frames_from_path(&c, &path, DT);
    let out = retarget_sequence(&c, &frames, &RetargetConfig::default()).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for (r, f) in out.iter().zip(&frames) {
        for (a, b) in c.keypoints(&r.q).iter().zip(&f.keypoints) {
            sum += (a - b).norm();
            n += 1;
        }
    }
    let err = sum / n as f64;
    let (lo, hi) = (c.lower_bounds(), c.upper_bounds());
    let compliant = out
        .iter()
        .filter(|r| r.q.iter().enumerate().all(|(i, v)| *v >= lo[i] && *v <= hi[i]))
        .count();
    ensure(
        err < 5.0 * MM && compliant == out.len(),
        format!("mean keypoint error {:.3} mm, {compliant}/{} frames within limits", err / MM, out.len()),
    )
}

fn hysteresis_correctness() -> Check {
    let levels = [1.0 * MM, 3.0 * MM, 6.0 * MM];
    let automaton = |trace: &[f64]| -> Vec<bool> {
        let mut on = false;
        trace
            .iter()
            .map(|&d| {
                if d < 2.0 * MM {
                    on = true;
                } else if d > 5.0 * MM {
                    on = false;
                }
                on
            })
            .collect()
    };
    let mut matched = 0;
    for a in levels {
        for b in levels {
            for c in levels {
                let trace = [a, b, c];
                matched += usize::from(hysteresis(&trace, 2.0 * MM, 5.0 * MM) == automaton(&trace));
            }
        }
    }
    ensure(matched == 27, format!("{matched}/27 traces match"))
}

fn main() -> std::process::ExitCode {
    let criteria: [(&str, Option<u64>, fn() -> Check); 10] = [
        ("gradient fidelity", Some(30), gradient_fidelity),
        ("oracle equivalence", Some(10), oracle_equivalence),
        ("interpolation truth table", None, interpolation_truth_table),
        ("temporal regularisation", Some(300), temporal_regularisation),
        ("flicker resolution", Some(5), flicker_resolution),
        ("penetration reduction", Some(180), penetration_reduction),
        ("monotone descent", None, monotone_descent),
        ("determinism", None, determinism),
        ("retargeting recovery", Some(300), retargeting_recovery),
        ("hysteresis correctness", None, hysteresis_correctness),
    ];
    let mut failed = Vec::new();
    for (k, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, limit) {
            (Ok(d), Some(s)) if elapsed > Duration::from_secs(s) => Err(format!("{d}; over the {s} s limit")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} #{:<2} {name}: {detail} [{:.1} s]", k + 1, elapsed.as_secs_f64());
        if outcome.is_err() {
            failed.push(k + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        std::process::ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::ExitCode::FAILURE
    }
}
