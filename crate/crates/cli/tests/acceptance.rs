//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.
#![allow(clippy::needless_range_loop)]

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::HashSet;
use std::f64::consts::{PI, TAU};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use linehue::cluster::{build_dendrogram, set_similarity, DistanceMatrix, Metric};
use linehue::hue::{circular_stress, descend, optimize_hues, stress_gradient, HueOptions, HueProblem};
use linehue::ingest::{fit_grid, LineKind, LineSet, Point};
use linehue::pipeline::{
    derive, prepare, render, render_lines_of, render_options, run, Artifacts, GridSize, PipelineConfig,
};
use linehue::raster::{density_of, extract_feature_sets};
use linehue::render::{density_ramp, fit_to_gamut, HclColor, RampParams};
use linehue::synth::{gen_disconnected, gen_illusory};
use linehue_service::session::{ErrorKind, HueUpdate, ParamsUpdate, PreprocessRequest, TemplateRequest};
use linehue_service::{Action, Dataset, Snapshot, StateView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{brute_feature_sets, naive_upgma, random_lineset, random_sorted_set, stress_oracle};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn linehue(args: &[&str], dir: &Path) -> Result<(), String> {
    let out =
        Command::new(env!("CARGO_BIN_EXE_linehue")).args(args).current_dir(dir).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("linehue {args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn accuracy_via_cli(
    dir: &Path,
    synth: &[&str],
    seed: u64,
    render: &[&str],
    exclude: &[&str],
) -> Result<(f64, Duration), String> {
    let seed = seed.to_string();
    let mut args = vec!["synth"];
    args.extend_from_slice(synth);
    args.extend(["--seed", &seed, "--out", "data.csv"]);
    linehue(&args, dir)?;
    let start = Instant::now();
    let mut args = vec!["render", "data.csv", "--out", "out"];
    args.extend_from_slice(render);
    linehue(&args, dir)?;
    let mut args = vec!["eval", "out/assignment.csv", "data.labels.csv", "--out", "report.json"];
    for e in exclude {
        args.extend(["--exclude", e]);
    }
    linehue(&args, dir)?;
    let elapsed = start.elapsed();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    Ok((report["accuracy"].as_f64().ok_or("report without accuracy")?, elapsed))
}

fn seed_sweep(
    synth: &[&str],
    render: &[&str],
    exclude: &[&str],
    floor: f64,
    need: usize,
    max_time: Option<Duration>,
) -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut passed = 0;
    let mut detail = Vec::new();
    for seed in 1..=5 {
        let (acc, t) = accuracy_via_cli(dir.path(), synth, seed, render, exclude)?;
        let fast = max_time.is_none_or(|m| t <= m);
        if acc >= floor && fast {
            passed += 1;
        }
        detail.push(format!("seed {seed}: {acc:.4} in {:.2}s", t.as_secs_f64()));
    }
    let detail = format!("{passed}/5 seeds >= {floor} [{}]", detail.join(", "));
    if passed >= need {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_illusory() -> Outcome {
    seed_sweep(&["illusory"], &["--k", "2", "--min-density", "3"], &["2"], 0.90, 4, Some(Duration::from_secs(5)))
}

fn c2_disconnected() -> Outcome {
    let sweep = seed_sweep(&["disconnected"], &["--k", "2"], &[], 0.90, 4, None)?;
    // Per-cluster line renders split the dataset along the generator labels.
    for seed in 1..=5 {
        let data = gen_disconnected(200, 0.5, seed).map_err(|e| e.to_string())?;
        let cfg = PipelineConfig { k: 2, ..Default::default() };
        let out = run(&data.lineset, &cfg, None).map_err(|e| e.to_string())?;
        let lines = &out.derived.lines;
        let (a, b) = (lines.lines_in(Some(0)), lines.lines_in(Some(1)));
        ensure(a.len() + b.len() + lines.lines_in(None).len() == data.labels.len(), || "line sets overlap".into())?;
        let majority = |ids: &[u32]| {
            let ones = ids.iter().filter(|&&i| data.labels[i as usize] == 1).count();
            (ones * 2 > ids.len()) as u32
        };
        ensure(!a.is_empty() && !b.is_empty() && majority(&a) != majority(&b), || {
            format!("seed {seed}: both clusters follow the same label")
        })?;
        let opts = render_options(&cfg, &out.view);
        for c in [0, 1] {
            let img = render_lines_of(&data.lineset, &out.prepared, &out.derived, &out.view, Some(c), &opts);
            ensure(img.pixels.iter().any(|&p| p != 255), || format!("seed {seed}: cluster {c} render is blank"))?;
        }
    }
    Ok(format!("{sweep}; per-cluster renders follow distinct labels on all seeds"))
}

fn c3_continuation() -> Outcome {
    let crossing = seed_sweep(&["continuation", "--mode", "crossing"], &["--k", "2"], &[], 0.85, 5, None);
    let touching = seed_sweep(&["continuation", "--mode", "touching"], &["--k", "2"], &[], 0.85, 5, None);
    match (crossing, touching) {
        (Ok(a), Ok(b)) => Ok(format!("crossing {a}; touching {b}")),
        (a, b) => Err(format!("crossing {a:?}; touching {b:?}")),
    }
}

fn c4_raster() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bins = 0;
    for case in 0..20 {
        let (w, h) = (rng.random_range(8..=64), rng.random_range(8..=64));
        let n = rng.random_range(1..=200);
        let ls = random_lineset(&mut rng, n, 8);
        let spec = fit_grid(&ls, w, h, false).map_err(|e| e.to_string())?;
        let fg = extract_feature_sets(&ls, &spec, 1.0).map_err(|e| e.to_string())?;
        let dg = density_of(&fg);
        for (bin, expected) in brute_feature_sets(&ls, &spec, 1.0).iter().enumerate() {
            ensure(fg.set(bin) == &expected[..], || format!("case {case} bin {bin}: set differs"))?;
            ensure(dg.counts[bin] as usize == expected.len(), || format!("case {case} bin {bin}: density differs"))?;
        }
        bins += spec.bin_count();
    }
    Ok(format!("20 instances, {bins} bins equal to brute force"))
}

fn c5_clustering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let n = 30;
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                d[i][j] = rng.random_range(0.0..1.0);
                d[j][i] = d[i][j];
            }
        }
        let dendro = build_dendrogram(&DistanceMatrix::from_fn(n, |i, j| d[i][j])).map_err(|e| e.to_string())?;
        for (m, o) in dendro.merges.iter().zip(naive_upgma(&d)) {
            ensure((m.left.min(m.right), m.left.max(m.right)) == (o.a, o.b), || {
                format!("case {case}: merge order differs")
            })?;
            worst = worst.max((m.height - o.height).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("height error {worst:e}"))?;
    for pair in 0..10_000 {
        let a = random_sorted_set(&mut rng, 64, 24);
        let b = random_sorted_set(&mut rng, 64, 24);
        for metric in [Metric::Overlap, Metric::Jaccard, Metric::Dice] {
            let s = set_similarity(metric, &a, &b);
            ensure((0.0..=1.0).contains(&s), || format!("pair {pair}: {metric} out of bounds"))?;
            ensure(s == set_similarity(metric, &b, &a), || format!("pair {pair}: {metric} asymmetric"))?;
            let disjoint = a.iter().all(|x| b.binary_search(x).is_err());
            ensure(!disjoint || a.is_empty() && b.is_empty() || s == 0.0, || {
                format!("pair {pair}: disjoint {metric} != 0")
            })?;
        }
        let sub: Vec<u32> = a.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        if !sub.is_empty() {
            ensure(set_similarity(Metric::Overlap, &sub, &a) == 1.0, || format!("pair {pair}: subset overlap != 1"))?;
        }
    }
    Ok(format!("20 x 30-leaf merges exact (max height error {worst:e}); 10^4 pairs x 3 metrics"))
}

fn random_delta(rng: &mut ChaCha8Rng, k: usize) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            d[i][j] = rng.random_range(0.0..PI);
            d[j][i] = d[i][j];
        }
    }
    d
}

fn c6_circular_mds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_grad: f64 = 0.0;
    for case in 0..20 {
        let k = 3 + case % 6;
        let delta = random_delta(&mut rng, k);
        // Keep pairwise arcs away from the non-differentiable points 0 and pi.
        let theta = loop {
            let t: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();
            let clear = (0..k).all(|i| {
                (i + 1..k).all(|j| {
                    let d = (t[i] - t[j]).rem_euclid(TAU);
                    let d = d.min(TAU - d);
                    d > 1e-3 && PI - d > 1e-3
                })
            });
            if clear {
                break t;
            }
        };
        let g = stress_gradient(&theta, &delta);
        let h = 1e-6;
        let fd: Vec<f64> = (0..k)
            .map(|m| {
                let (mut up, mut down) = (theta.clone(), theta.clone());
                up[m] += h;
                down[m] -= h;
                (circular_stress(&up, &delta) - circular_stress(&down, &delta)) / (2.0 * h)
            })
            .collect();
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        worst_grad = worst_grad.max(err / norm);
    }
    ensure(worst_grad <= 1e-5, || format!("gradient relative error {worst_grad:e}"))?;

    let equi = vec![vec![0.0, PI, PI], vec![PI, 0.0, PI], vec![PI, PI, 0.0]];
    let (mut best, mut oracle) = (f64::INFINITY, vec![]);
    for a in 0..360 {
        for b in 0..360 {
            let t = vec![0.0, (a as f64).to_radians(), (b as f64).to_radians()];
            let s = stress_oracle(&t, &equi);
            if s < best {
                (best, oracle) = (s, t);
            }
        }
    }
    let gaps = |theta: &[f64]| {
        let mut t: Vec<f64> = theta.iter().map(|x| x.rem_euclid(TAU)).collect();
        t.sort_by(f64::total_cmp);
        let mut g: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        g.push(TAU - (t[t.len() - 1] - t[0]));
        g.sort_by(f64::total_cmp);
        g
    };
    let fit = optimize_hues(&HueProblem::new(equi.clone()).map_err(|e| e.to_string())?, &HueOptions::default());
    let gap_err = gaps(&fit.theta)
        .iter()
        .zip(gaps(&oracle))
        .map(|(a, b)| (a - b).abs().max((a - TAU / 3.0).abs()))
        .fold(0.0, f64::max)
        .to_degrees();
    ensure(gap_err <= 5.0, || format!("k=3 spacing off by {gap_err:.2} deg"))?;

    let mut worst_rot: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..=8);
        let delta = random_delta(&mut rng, k);
        let theta: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();
        let phi = rng.random_range(0.0..TAU);
        let rotated: Vec<f64> = theta.iter().map(|t| t + phi).collect();
        let reflected: Vec<f64> = theta.iter().map(|t| -t).collect();
        let s = circular_stress(&theta, &delta);
        worst_rot = worst_rot.max((s - circular_stress(&rotated, &delta)).abs());
        worst_rot = worst_rot.max((s - circular_stress(&reflected, &delta)).abs());
    }
    ensure(worst_rot <= 1e-12, || format!("rotation variance {worst_rot:e}"))?;

    for run in 0..20 {
        let k = 3 + run % 6;
        let problem = HueProblem::new(random_delta(&mut rng, k)).map_err(|e| e.to_string())?;
        let init: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..TAU)).collect();
        let (_, trace) = descend(&problem, &init, None, 500, 0.0);
        ensure(trace.windows(2).all(|w| w[1] <= w[0]), || format!("run {run}: stress increased"))?;
    }
    Ok(format!(
        "gradient rel err {worst_grad:.1e}; k=3 gaps within {gap_err:.2} deg; rotation {worst_rot:.1e}; 20 monotone runs"
    ))
}

fn c7_colour() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ramp = RampParams::default();
    for pair in 0..1000 {
        let dmax = rng.random_range(1..2000);
        let d = rng.random_range(0..=dmax);
        let log = rng.random_bool(0.5);
        let a = density_ramp(d, dmax, rng.random_range(0.0..360.0), &ramp, log);
        let b = density_ramp(d, dmax, rng.random_range(0.0..360.0), &ramp, log);
        ensure(a.luminance == b.luminance && a.chroma == b.chroma, || format!("pair {pair}: hue changes L/C"))?;
        if d < dmax {
            let c = density_ramp(d + 1, dmax, a.hue, &ramp, log);
            ensure(c.luminance < a.luminance && c.chroma > a.chroma, || format!("pair {pair}: ramp not monotone"))?;
        }
        let wild = HclColor { hue: a.hue, chroma: rng.random_range(0.0..200.0), luminance: a.luminance };
        let fitted = fit_to_gamut(wild);
        ensure(fitted.hue == wild.hue && fitted.luminance == wild.luminance && fitted.chroma <= wild.chroma, || {
            format!("pair {pair}: gamut clamp changed more than chroma")
        })?;
    }
    Ok("10^3 pairs: L/C hue-independent, ramp monotone, clamp touches chroma only".into())
}

/// Random smooth time series drawn around a handful of trends.
fn large_dataset(n_lines: usize, n_vertices: usize) -> LineSet {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let trends: Vec<(f64, f64, f64)> =
        (0..6).map(|_| (rng.random_range(-1.0..1.0), rng.random_range(1.0..6.0), rng.random_range(0.0..TAU))).collect();
    let chains = (0..n_lines)
        .map(|i| {
            let (slope, freq, phase) = trends[i % trends.len()];
            let mut walk = rng.random_range(-0.3..0.3);
            (0..n_vertices)
                .map(|v| {
                    let x = v as f64 / (n_vertices - 1) as f64;
                    walk += rng.random_range(-0.02..0.02);
                    Point::new(x, slope * x + 0.5 * (freq * x * TAU / 4.0 + phase).sin() + walk)
                })
                .collect()
        })
        .collect();
    LineSet::from_vertices(chains, LineKind::Timeseries).expect("valid lines")
}

fn c8_performance() -> Outcome {
    let ls = large_dataset(10_000, 100);
    let points: usize = ls.lines().iter().map(|l| l.vertices.len()).sum();
    let cfg = PipelineConfig::default();
    let start = Instant::now();
    let prepared = prepare(&ls, &cfg, None).map_err(|e| e.to_string())?;
    let t_pre = start.elapsed();
    let view = cfg.view(ls.kind());
    let derived = derive(&prepared, &view, &cfg.hue_options()).map_err(|e| e.to_string())?;
    let snap = Snapshot {
        revision: 1,
        dataset: Arc::new(Dataset { lineset: ls, original_ids: Vec::new() }),
        config: cfg,
        prepared: Arc::new(prepared),
        view,
        derived: Arc::new(derived),
    };
    let start = Instant::now();
    let split = snap.apply(&Action::Split { cluster: 0 }).map_err(|e| format!("{e:?}"))?;
    let t_split = start.elapsed();
    ensure(split.derived.clustering.k == 4, || "split did not add a cluster".into())?;
    let detail = format!(
        "{} lines / {points} points: preprocess {:.2}s (budget 20s), split {:.2}s (budget 4s)",
        snap.dataset.lineset.len(),
        t_pre.as_secs_f64(),
        t_split.as_secs_f64()
    );
    if t_pre.as_secs_f64() > 40.0 || t_split.as_secs_f64() > 8.0 {
        Err(format!("{detail}; above twice the budget"))
    } else if t_pre.as_secs_f64() > 20.0 || t_split.as_secs_f64() > 4.0 {
        Ok(format!("{detail}; over budget but within the 2x tolerance"))
    } else {
        Ok(detail)
    }
}

fn c9_determinism() -> Outcome {
    let data = gen_illusory(400, 100, 1.0, 9).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig { k: 3, seed: 9, ..Default::default() };
    let build = || -> Result<Artifacts, String> {
        let out = run(&data.lineset, &cfg, None).map_err(|e| e.to_string())?;
        Artifacts::build(&out.prepared, &out.derived, &out.view, &render_options(&cfg, &out.view), None)
            .map_err(|e| e.to_string())
    };
    ensure(build()? == build()?, || "library artifacts differ between runs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    linehue(&["synth", "illusory", "--seed", "9", "--out", "data.csv"], dir.path())?;
    let names = ["density.png", "legend.json", "assignment.csv", "dendrogram.json"];
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        linehue(&["render", "data.csv", "--k", "3", "--seed", "7", "--out", out], dir.path())?;
        let files: Vec<Vec<u8>> =
            names.iter().map(|n| std::fs::read(dir.path().join(out).join(n)).unwrap_or_default()).collect();
        runs.push(files);
    }
    for (i, name) in names.iter().enumerate() {
        ensure(!runs[0][i].is_empty() && runs[0][i] == runs[1][i], || format!("{name} differs between CLI runs"))?;
    }
    Ok("library and CLI artifacts byte-identical across runs".into())
}

fn random_action(rng: &mut ChaCha8Rng) -> Action {
    match rng.random_range(0..8) {
        0 => Action::Params(ParamsUpdate { k: Some(rng.random_range(1..8)), ..Default::default() }),
        1 => Action::Params(ParamsUpdate { min_density: Some(rng.random_range(2..6)), ..Default::default() }),
        2 => {
            let metric = [Metric::Overlap, Metric::Jaccard, Metric::Dice][rng.random_range(0..3)];
            Action::Params(ParamsUpdate { metric: Some(metric), ..Default::default() })
        }
        3 => Action::Preprocess(PreprocessRequest {
            min_density: Some(rng.random_range(2..5)),
            seed: Some(rng.random_range(0..4)),
            ..Default::default()
        }),
        4 | 5 => Action::Split { cluster: rng.random_range(0..8) },
        6 => Action::Hue(HueUpdate {
            cluster: rng.random_range(0..6),
            degrees: Some(rng.random_range(-360.0..720.0)),
            pinned: rng.random_bool(0.8),
        }),
        _ => {
            let name = ["", "N", "i", "V", "L", "I", "T", "Y", "X"][rng.random_range(0..9)];
            Action::Template(TemplateRequest { name: name.into() })
        }
    }
}

fn c10_service_replay() -> Outcome {
    let data = gen_illusory(400, 100, 1.0, 10).map_err(|e| e.to_string())?;
    let cfg =
        PipelineConfig { bins: Some(GridSize { width: 128, height: 128 }), max_samples: 800, ..Default::default() };
    let base = Snapshot::create(Dataset { lineset: data.lineset, original_ids: Vec::new() }, cfg)
        .map_err(|e| format!("{e:?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut applied, mut rejected) = (0, 0);
    let mut kinds = HashSet::new();
    for seq in 0..50 {
        let mut snap = base.clone();
        for _ in 0..rng.random_range(3..10) {
            let action = random_action(&mut rng);
            match snap.apply(&action) {
                Ok(next) => {
                    ensure(next.revision >= snap.revision, || format!("sequence {seq}: revision went backwards"))?;
                    kinds.insert(std::mem::discriminant(&action));
                    snap = next;
                    applied += 1;
                }
                Err(e) => {
                    ensure(e.kind != ErrorKind::Internal, || format!("sequence {seq}: {e:?}"))?;
                    rejected += 1;
                }
            }
        }
        let cfg = snap.batch_config();
        let prep = prepare(&snap.dataset.lineset, &cfg, None).map_err(|e| e.to_string())?;
        let derived = derive(&prep, &snap.view, &cfg.hue_options()).map_err(|e| e.to_string())?;
        ensure(prep.sample == snap.prepared.sample && prep.dendrogram == snap.prepared.dendrogram, || {
            format!("sequence {seq}: sample or dendrogram differs")
        })?;
        ensure(&derived == snap.derived.as_ref(), || format!("sequence {seq}: derived state differs"))?;
        ensure(StateView::build(&snap.dataset, &cfg, &prep, &snap.view, &derived) == snap.state(), || {
            format!("sequence {seq}: state view differs")
        })?;
        let opts = render_options(&cfg, &snap.view);
        let png = |p, d| render(p, d, &opts).to_png().map_err(|e| e.to_string());
        ensure(png(&prep, &derived)? == png(&snap.prepared, &snap.derived)?, || {
            format!("sequence {seq}: render differs")
        })?;
        ensure(derived.lines.to_csv(None) == snap.derived.lines.to_csv(None), || {
            format!("sequence {seq}: CSV differs")
        })?;
    }
    Ok(format!(
        "50 sequences ({applied} applied, {rejected} rejected actions, {} action kinds) match batch runs",
        kinds.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("illusory-pattern recovery", c1_illusory),
        ("disconnected-cluster recovery", c2_disconnected),
        ("ambiguous-continuation separation", c3_continuation),
        ("raster oracle", c4_raster),
        ("clustering oracle and metric suite", c5_clustering),
        ("circular MDS", c6_circular_mds),
        ("colour invariants", c7_colour),
        ("performance at paper scale", c8_performance),
        ("determinism", c9_determinism),
        ("service state-machine equivalence", c10_service_replay),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
