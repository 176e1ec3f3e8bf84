//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use reprlink::counterfact::{counterfactual_loss, optimize_counterfactual, trajectory_report, CounterfactualConfig, SHARPNESS_WINDOW};
use reprlink::linklearn::{cycle_eval, fit_linking, LinkingModel, DEFAULT_RIDGE};
use reprlink::par::Execution;
use reprlink::pipeline::{MaskSource, Pipeline};
use reprlink::segquant::{fit_fewshot_segmenter, hoyer_sparsity, mean_iou, segment, segment_metrics, Metric};
use reprlink::seed;
use reprlink::spacecmp::{adjusted_rand_index, compare_spaces, PairedPool, ProtocolConfig};
use reprlink::synthworld::{
    class_names, train_head, ClassifierHead, HeadTraining, PairedSamples, World, WorldConfig,
};
use reprlink::tensorio::{ImageBuffer, LabelMaskBuffer};
use reprlink::tracker::{
    find_correspondences, fit_affine, masked_magnitude, residual_field, AffineTransform, Correspondence,
    CorrespondenceSet, TrackerConfig,
};
use reprlink::unitprobe::{dedicate_unit, sweep_summary, unit_ranges, SweepConfig, SweepSeed};

const ROOT: u64 = 1;
const EAR_UNIT: usize = 0;
const EAR_DIM: usize = 3;
const EAR_LABEL: usize = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = fn() -> Outcome;

struct Fixture {
    world: World,
    train: PairedSamples,
    head: ClassifierHead,
    link: LinkingModel,
}

fn fixture(cfg: WorldConfig, per_class: usize) -> Fixture {
    let world = World::new(cfg).unwrap();
    let train = world.sample_pairs(per_class, "train", Execution::Parallel).unwrap();
    let names = class_names(world.config().n_classes);
    let head = train_head(&train.reps, &train.labels, &names, &HeadTraining::default()).unwrap();
    let link = fit_linking(&train.reps, &train.latents, DEFAULT_RIDGE).unwrap();
    Fixture { world, train, head, link }
}

fn c1_linking() -> Outcome {
    let t = Instant::now();
    let f = fixture(WorldConfig::linear(ROOT), 1000);
    let clipped: usize = f
        .train
        .latents
        .iter()
        .map(|w| f.world.render(w).unwrap().clipped)
        .sum();
    let test = f.world.sample_pairs(200, "test", Execution::Parallel).unwrap();
    let rep = cycle_eval(&f.link, &f.world, &test.latents, seed::derive(ROOT, "shuffle", 0), Execution::Parallel).unwrap();
    let secs = t.elapsed().as_secs_f64();
    check(
        clipped == 0 && rep.mse_w < 1e-6 && rep.mse_w < rep.shuffled_mse_w && secs < 30.0,
        format!(
            "mse_w {:.3e} (< 1e-6), shuffled {:.3e}, clipped {clipped}, {secs:.1}s (< 30s)",
            rep.mse_w, rep.shuffled_mse_w
        ),
    )
}

fn c2_hoyer() -> Outcome {
    let mut one_hot = vec![0.0; 9];
    one_hot[4] = 2.5;
    let s_one = hoyer_sparsity(&one_hot).unwrap().value;
    let s_uni = hoyer_sparsity(&[0.7; 9]).unwrap().value;
    let mut v = vec![0.0; 9];
    v[0] = 3.0;
    v[1] = 4.0;
    let s_34 = hoyer_sparsity(&v).unwrap().value;
    let mut rng = seed::rng(seed::derive(ROOT, "hoyer", 0));
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let k = rng.random_range(2..50);
        let x: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let c = if rng.random::<bool>() { 1.0 } else { -1.0 } * 10f64.powf(rng.random_range(-3.0..3.0));
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let d = (hoyer_sparsity(&x).unwrap().value - hoyer_sparsity(&cx).unwrap().value).abs();
        worst = worst.max(d);
    }
    check(
        s_one == 1.0 && s_uni == 0.0 && (s_34 - 0.8).abs() < 1e-12 && worst < 1e-12,
        format!("one-hot {s_one}, uniform {s_uni}, (3,4,0..) {s_34:.15}, scale worst {worst:.1e}"),
    )
}

fn c3_ari() -> Outcome {
    let truth: Vec<usize> = (0..100).map(|i| i / 20).collect();
    let same = adjusted_rand_index(&truth, &truth).unwrap();
    let single = adjusted_rand_index(&vec![0; 100], &truth).unwrap();
    let mut rng = seed::rng(seed::derive(ROOT, "ari", 0));
    let mut mismatches = 0;
    for _ in 0..100 {
        let n = rng.random_range(10..200);
        let (ka, kb) = (rng.random_range(1..8), rng.random_range(1..8));
        let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..ka)).collect();
        let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..kb)).collect();
        let mut perm: Vec<usize> = (0..kb).collect();
        perm.shuffle(&mut rng);
        let bp: Vec<usize> = b.iter().map(|&l| perm[l]).collect();
        if adjusted_rand_index(&a, &b).unwrap() != adjusted_rand_index(&a, &bp).unwrap() {
            mismatches += 1;
        }
    }
    check(
        same == 1.0 && single == 0.0 && mismatches == 0,
        format!("identical {same}, one-cluster {single}, permutation mismatches {mismatches}/100"),
    )
}

fn c4_spaces() -> Outcome {
    let t = Instant::now();
    let world = World::new(WorldConfig::linear(ROOT)).unwrap();
    let pool = world.sample_pairs(500, "pool", Execution::Parallel).unwrap();
    let lw: Vec<Vec<f64>> = pool.latents.iter().map(|v| v.0.clone()).collect();
    let rr: Vec<Vec<f64>> = pool.reps.iter().map(|v| v.0.clone()).collect();
    let cfg = ProtocolConfig {
        k: 5,
        n_init: 20,
        per_class: 100,
        repetitions: 100,
        seed: seed::derive(ROOT, "protocol", 0),
    };
    let rep = compare_spaces(&PairedPool { latents: &lw, reps: &rr, labels: &pool.labels }, &cfg, Execution::Parallel).unwrap();
    let secs = t.elapsed().as_secs_f64();
    check(
        rep.mean_ari_w >= 0.9 && rep.mean_ari_r >= 0.9 && rep.mean_rsa_euclidean >= 0.8 && secs < 120.0,
        format!(
            "ARI W {:.3}, ARI R {:.3} (>= 0.9), RSA-E {:.3} (>= 0.8), RSA-C {:.3}, {secs:.1}s (< 120s)",
            rep.mean_ari_w, rep.mean_ari_r, rep.mean_rsa_euclidean, rep.mean_rsa_correlation
        ),
    )
}

fn fd_rel_error(f: &Fixture, rng: &mut impl Rng) -> f64 {
    let n = f.train.len();
    let r = &f.train.reps[rng.random_range(0..n)];
    let d = r.len();
    let dr: Vec<f64> = (0..d).map(|_| rng.random_range(-0.5..0.5)).collect();
    let cfg = CounterfactualConfig { target: rng.random_range(0..f.head.n_classes()), ..Default::default() };
    let (_, g) = counterfactual_loss(r, &dr, &f.head, &f.link, &cfg).unwrap();
    let h = 1e-5;
    let mut num = vec![0.0; d];
    for j in 0..d {
        let mut p = dr.clone();
        p[j] += h;
        let mut m = dr.clone();
        m[j] -= h;
        let lp = counterfactual_loss(r, &p, &f.head, &f.link, &cfg).unwrap().0;
        let lm = counterfactual_loss(r, &m, &f.head, &f.link, &cfg).unwrap().0;
        num[j] = (lp - lm) / (2.0 * h);
    }
    let diff: f64 = g.iter().zip(&num).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    diff / scale
}

struct CfRun {
    converged: bool,
    boundary: bool,
    sharp: Option<bool>,
}

fn cf_runs() -> (Fixture, Vec<CfRun>) {
    let f = fixture(WorldConfig::linear(ROOT), 200);
    let seeds = f.world.sample_pairs(8, "counterfactual", Execution::Parallel).unwrap();
    let pipe = Pipeline::new(f.world.clone(), f.link.clone(), f.head.clone(), MaskSource::GroundTruth).unwrap();
    let c = f.head.n_classes();
    let runs = seeds
        .reps
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let orig = f.head.predict_class(r).unwrap();
            let target = (orig + 1 + i % (c - 1)) % c;
            let cfg = CounterfactualConfig { target, ..Default::default() };
            let traj = optimize_counterfactual(r, &cfg, &f.head, &f.link).unwrap();
            let sharp = traj.converged.then(|| {
                let rep = trajectory_report(&traj, &pipe, 20).unwrap();
                rep.boundary_jumps(SHARPNESS_WINDOW).is_some_and(|(p, m)| p > 2.0 * m)
            });
            CfRun { converged: traj.converged, boundary: traj.boundary.is_some(), sharp }
        })
        .collect();
    (f, runs)
}

fn c5_counterfactual() -> Outcome {
    let (f, runs) = cf_runs();
    let mut rng = seed::rng(seed::derive(ROOT, "fd", 0));
    let worst = (0..50).map(|_| fd_rel_error(&f, &mut rng)).fold(0.0, f64::max);
    let conv = runs.iter().filter(|r| r.converged).count();
    let bad_boundary = runs.iter().filter(|r| r.converged && !r.boundary).count();
    check(
        worst < 1e-5 && conv * 100 >= 95 * runs.len() && bad_boundary == 0,
        format!(
            "gradient rel err worst {worst:.2e} (< 1e-5), converged {conv}/{} (>= 95%), undefined boundaries {bad_boundary}",
            runs.len()
        ),
    )
}

fn c6_sharpness() -> Outcome {
    let (_, runs) = cf_runs();
    let judged: Vec<bool> = runs.iter().filter_map(|r| r.sharp).collect();
    let sharp = judged.iter().filter(|&&s| s).count();
    check(
        !judged.is_empty() && sharp * 100 >= 80 * judged.len(),
        format!("prob jump > 2x image-MSE jump in {sharp}/{} converged runs (>= 80%)", judged.len()),
    )
}

fn centered_mask(h: usize, w: usize, f: impl Fn(f64, f64) -> bool) -> LabelMaskBuffer {
    let labels = (0..h * w)
        .map(|p| {
            let x = (p % w) as f64 - (w as f64 - 1.0) / 2.0;
            let y = (h as f64 - 1.0) / 2.0 - (p / w) as f64;
            f(x, y) as u8
        })
        .collect();
    LabelMaskBuffer::new(h, w, 2, labels).unwrap()
}

fn ellipse_mask(a: f64, b: f64, theta_deg: f64) -> LabelMaskBuffer {
    let (s, c) = theta_deg.to_radians().sin_cos();
    centered_mask(128, 128, |x, y| {
        let u = x * c + y * s;
        let v = -x * s + y * c;
        (u / a).powi(2) + (v / b).powi(2) <= 1.0
    })
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn c7_metrics() -> Outcome {
    let gray = ImageBuffer::filled(128, 128, 1, 0.4).unwrap();
    let disk = segment_metrics(&gray, &centered_mask(128, 128, |x, y| x * x + y * y <= 900.0)).unwrap().eccentricity[1];
    let base = segment_metrics(&gray, &ellipse_mask(40.0, 20.0, 0.0)).unwrap();
    let ecc = base.eccentricity[1];
    let mut worst_angle: f64 = 0.0;
    let mut worst_ecc: f64 = 0.0;
    for k in 0..36 {
        let theta = -87.5 + 5.0 * k as f64;
        let m = segment_metrics(&gray, &ellipse_mask(40.0, 20.0, theta)).unwrap();
        worst_angle = worst_angle.max(angle_diff(m.angle[1] - base.angle[1], theta));
        worst_ecc = worst_ecc.max((m.eccentricity[1] - ecc).abs());
    }
    let world = World::new(WorldConfig::shapes(ROOT)).unwrap();
    let mut worst_sum: f64 = 0.0;
    for i in 0..20 {
        let w = world.sample_latent(i % 5, world.latent_seed("metrics", i % 5, i)).unwrap();
        let r = world.render(&w).unwrap();
        let m = segment_metrics(&r.image, &r.mask).unwrap();
        worst_sum = worst_sum.max((m.area.iter().sum::<f64>() - 1.0).abs());
    }
    let target = 3f64.sqrt() / 2.0;
    check(
        disk < 0.05 && (ecc - target).abs() < 0.02 && worst_angle < 2.0 && worst_ecc < 0.02 && worst_sum < 1e-6,
        format!(
            "disk ecc {disk:.4}, 2:1 ecc {ecc:.4} (target {target:.4}), rotation angle err {worst_angle:.2} deg, ecc drift {worst_ecc:.4}, area-sum err {worst_sum:.1e}"
        ),
    )
}

fn c8_fewshot() -> Outcome {
    let world = World::new(WorldConfig::shapes(ROOT)).unwrap();
    let train: Vec<_> = (0..25)
        .map(|i| {
            let w = world.sample_latent(i / 5, world.latent_seed("segment-train", i / 5, i % 5)).unwrap();
            world.render(&w).unwrap()
        })
        .collect();
    let pairs: Vec<_> = train.iter().map(|e| (&e.features, &e.mask)).collect();
    let seg = fit_fewshot_segmenter(&pairs, reprlink::synthworld::LABEL_COUNT).unwrap();
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for i in 0..20 {
        let w = world.sample_latent(i % 5, world.latent_seed("segment-test", i % 5, i / 5)).unwrap();
        let e = world.render(&w).unwrap();
        pred.push(segment(&seg, &e.features).unwrap());
        truth.push(e.mask);
    }
    let iou = mean_iou(&pred, &truth).unwrap();
    check(iou.mean >= 0.8, format!("mean IoU {:.4} on 20 held-out images (>= 0.8), 25 training images", iou.mean))
}

fn c9_sweep() -> Outcome {
    let f = fixture(WorldConfig::shapes(ROOT), 200);
    let ranges = unit_ranges(&f.train.reps).unwrap();
    let (lo, hi) = (ranges.min[EAR_UNIT], ranges.max[EAR_UNIT]);
    let link = dedicate_unit(&f.link, EAR_UNIT, EAR_DIM, 6.0 / (hi - lo), 0.5 * (lo + hi)).unwrap();
    let pipe = Pipeline::new(f.world.clone(), link, f.head.clone(), MaskSource::GroundTruth).unwrap();
    let raw = f.world.sample_pairs(20, "sweep-seed", Execution::Parallel).unwrap();
    let seeds: Vec<SweepSeed> = raw.reps.iter().zip(&raw.labels).map(|(r, &c)| SweepSeed { r: r.clone(), class: c }).collect();
    let units: Vec<usize> = (0..pipe.d_r()).collect();
    let cfg = SweepConfig::default();
    let timed = |exec| {
        let t = Instant::now();
        let s = sweep_summary(&pipe, &seeds, &units, &ranges, &cfg, exec).unwrap();
        (s, t.elapsed())
    };
    let (par, t_par) = timed(Execution::Parallel);
    let (seq, t_seq) = timed(Execution::Sequential);
    let u = &par.units[EAR_UNIT];
    let lc = par.label_count;
    let area = &u.label_vector[Metric::Area.index() * lc..(Metric::Area.index() + 1) * lc];
    let dominant = (0..lc).fold(0, |b, l| if area[l] > area[b] { l } else { b });
    let area_sparsity = u.sparsity[Metric::Area.index()];
    let thresholds_exact = par.units.iter().all(|u| {
        u.relevant == (u.relevance > 0.15)
            && u.class_relevance.iter().zip(&u.relevant_for_class).all(|(&v, &flag)| flag == (v > 0.15))
    });
    let limit = Duration::from_secs(300);
    check(
        dominant == EAR_LABEL
            && area_sparsity > 0.5
            && thresholds_exact
            && par.relevance_threshold == 0.15
            && t_par < limit
            && t_seq < limit
            && par == seq,
        format!(
            "dominant area label {dominant} (ear = {EAR_LABEL}), area sparsity {area_sparsity:.3} (> 0.5), {} seeds, threshold semantics exact {thresholds_exact}, sweep {:.0}s par / {:.0}s seq (< 300s), summaries identical {}",
            par.n_seeds,
            t_par.as_secs_f64(),
            t_seq.as_secs_f64(),
            par == seq
        ),
    )
}

fn texture(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let waves: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| (rng.random_range(0.05..0.4), rng.random_range(0.05..0.4), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    (0..h * w)
        .map(|p| {
            let (x, y) = ((p % w) as f64, (p / w) as f64);
            let s: f64 = waves.iter().map(|(fx, fy, ph)| (fx * x + fy * y + ph).cos()).sum();
            (0.5 + 0.06 * s + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
        })
        .collect()
}

fn c10_tracker() -> Outcome {
    let cfg = TrackerConfig::default();
    let mut rng = seed::rng(seed::derive(ROOT, "affine", 0));
    let mut worst_affine: f64 = 0.0;
    for _ in 0..20 {
        let p: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
        let t = AffineTransform { m: [[1.0 + p[0], p[1], 10.0 * p[2]], [p[3], 1.0 + p[4], 10.0 * p[5]]] };
        let matches = (0..40)
            .map(|_| {
                let (x, y) = (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0));
                let (x1, y1) = t.apply(x, y);
                Correspondence { x0: x, y0: y, x1, y1, score: 1.0 }
            })
            .collect();
        let fit = fit_affine(&CorrespondenceSet { matches }, &cfg).unwrap();
        for (a, b) in fit.params().iter().zip(t.params()) {
            worst_affine = worst_affine.max((a - b).abs());
        }
    }

    let (h, w) = (96, 96);
    let (sx, sy) = (3isize, -4isize);
    let base = texture(h, w, 7);
    let moved = (0..h * w)
        .map(|p| {
            let x = ((p % w) as isize - sx).clamp(0, w as isize - 1) as usize;
            let y = ((p / w) as isize - sy).clamp(0, h as isize - 1) as usize;
            base[y * w + x]
        })
        .collect();
    let a = ImageBuffer::new(h, w, 1, base).unwrap();
    let b = ImageBuffer::new(h, w, 1, moved).unwrap();
    let set = find_correspondences(&a, &b, &cfg, Execution::Parallel).unwrap();
    let interior = CorrespondenceSet {
        matches: set
            .matches
            .iter()
            .filter(|m| m.x0 >= 20.0 && m.y0 >= 20.0 && m.x0 <= 76.0 && m.y0 <= 76.0)
            .copied()
            .collect(),
    };
    let translation_exact = !interior.matches.is_empty()
        && interior.matches.iter().all(|m| m.displacement() == (sx as f64, sy as f64));
    let fit = fit_affine(&interior, &cfg).unwrap();
    let t_err = (fit.m[0][2] - sx as f64).abs().max((fit.m[1][2] - sy as f64).abs());

    let world = World::new(WorldConfig::shapes(ROOT)).unwrap();
    let mut w0 = world.sample_latent(0, world.latent_seed("track", 0, 0)).unwrap();
    let ra = world.render(&w0).unwrap();
    w0.0[EAR_DIM] += 2.0;
    let rb = world.render(&w0).unwrap();
    let set = find_correspondences(&ra.image, &rb.image, &cfg, Execution::Parallel).unwrap();
    let aff = fit_affine(&set, &cfg).unwrap();
    let field = residual_field(&ra.image, &rb.image, &aff, &cfg, Execution::Parallel).unwrap();
    let mm = masked_magnitude(&field, &[&ra.mask, &rb.mask], &[EAR_LABEL as u8]);
    let ratio = mm.inside_mean / mm.outside_mean.max(1e-12);
    check(
        worst_affine < 1e-6 && translation_exact && t_err < 1e-9 && ratio >= 3.0 && mm.inside_count > 0,
        format!(
            "affine worst err {worst_affine:.1e} (< 1e-6), integer shift exact {translation_exact} ({} blocks), ear bump in/out {:.3}/{:.3} = {ratio:.1}x (>= 3x)",
            interior.matches.len(),
            mm.inside_mean,
            mm.outside_mean
        ),
    )
}

fn cli(args: &[&str]) -> bool {
    let argv = std::iter::once("reprlink").chain(args.iter().copied());
    reprlink::cli::dispatch(argv) == 0
}

fn cli_pipeline(root: &Path, threads: &str) -> bool {
    let p = |s: &str| root.join(s).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen".into(), "--mode".into(), "linear".into(), "--per-class".into(), "100".into(), "--out".into(), p("lin")],
        vec!["fit-link".into(), "--data".into(), p("lin"), "--out".into(), p("lin-link")],
        vec!["eval-link".into(), "--data".into(), p("lin"), "--link".into(), p("lin-link"), "--test-per-class".into(), "40".into(), "--out".into(), p("eval")],
        vec!["compare-spaces".into(), "--data".into(), p("lin"), "--per-class".into(), "50".into(), "--repetitions".into(), "10".into(), "--out".into(), p("compare")],
        vec!["counterfactual".into(), "--data".into(), p("lin"), "--link".into(), p("lin-link"), "--seeds-per-class".into(), "1".into(), "--out".into(), p("cf")],
        vec!["gen".into(), "--mode".into(), "shapes".into(), "--per-class".into(), "40".into(), "--out".into(), p("shp")],
        vec!["fit-link".into(), "--data".into(), p("shp"), "--out".into(), p("shp-link")],
        vec!["segment-fit".into(), "--data".into(), p("shp"), "--out".into(), p("seg")],
        vec!["sweep".into(), "--data".into(), p("shp"), "--link".into(), p("shp-link"), "--segmenter".into(), p("seg"), "--seeds-per-class".into(), "2".into(), "--units".into(), "0-7".into(), "--dedicate".into(), "0:3".into(), "--clusters".into(), "3".into(), "--out".into(), p("sweep")],
        vec!["relevance".into(), "--sweep".into(), p("sweep"), "--out".into(), p("relevance")],
        vec!["track".into(), "--data".into(), p("shp"), "--sample".into(), "0".into(), "--out".into(), p("track")],
        vec!["report".into(), p("eval"), p("compare"), p("cf"), p("seg"), p("sweep"), p("relevance"), p("track"), "--out".into(), p("report")],
    ];
    steps.iter().all(|s| {
        let mut args: Vec<&str> = vec!["--seed", "11", "--threads", threads];
        args.extend(s.iter().map(String::as_str));
        cli(&args)
    })
}

fn report_files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")) {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_reproducible() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !cli_pipeline(a.path(), "1") || !cli_pipeline(b.path(), "2") {
        return check(false, "a CLI step failed");
    }
    let (fa, fb) = (report_files(a.path()), report_files(b.path()));
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    check(
        fa == fb && differing.is_empty(),
        format!(
            "{} CSV/JSON files compared across 1-thread and 2-thread runs, {} differ{}",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 11] = [
        ("linking exactness", c1_linking),
        ("hoyer sparsity", c2_hoyer),
        ("adjusted rand index", c3_ari),
        ("space comparison protocol", c4_spaces),
        ("counterfactual gradient and convergence", c5_counterfactual),
        ("boundary sharpness", c6_sharpness),
        ("segment metrics", c7_metrics),
        ("few-shot segmentation", c8_fewshot),
        ("unit sweep pipeline", c9_sweep),
        ("tracker", c10_tracker),
        ("end-to-end reproducibility", c11_reproducible),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        failed += !o.pass as usize;
        println!(
            "[{}] {:>2}. {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            i + 1,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
