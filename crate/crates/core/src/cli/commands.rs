use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::config::RunConfig;
use super::output::Outputs;
use super::Command;
use crate::counterfact::{optimize_counterfactual, trajectory_report, SHARPNESS_WINDOW};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::linklearn::{cycle_eval, fit_linking, LinkingModel, PROXY_METRIC};
use crate::par::{self, Execution};
use crate::pipeline::{MaskSource, Pipeline};
use crate::segquant::{fit_fewshot_segmenter, mean_iou, segment, FewShotSegmenter, Metric};
use crate::seed;
use crate::spacecmp::{compare_spaces, PairedPool, ProtocolConfig};
use crate::synthworld::{
    class_names, latent_mapping, train_head, ClassifierHead, FeatureMaps, HeadTraining, LatentVector, RenderMode,
    RepVector, World, WorldConfig, PART_NAMES,
};
use crate::tensorio::{
    self, read_image, read_manifest, read_mask, read_matrix, DatasetManifest, DatasetMode, HeadFiles, ImageBuffer,
    LabelMaskBuffer, MatrixFile, SampleEntry,
};
use crate::tracker::{find_correspondences, fit_affine, masked_magnitude, residual_field};
use crate::unitprobe::{
    cluster_and_embed, class_similarity, dedicate_unit, sweep_summary, sweep_unit, unit_ranges, Percentiles,
    SweepConfig, SweepSeed, UnitSummary, EMBEDDING_METHOD,
};

const EXEC: Execution = Execution::Parallel;
const LINK_STEM: &str = "link";
const SEGMENTER_STEM: &str = "segmenter";

pub(super) fn execute(cmd: Command, cfg: &RunConfig, out: PathBuf) -> Result<PathBuf> {
    let name = cmd.name();
    let mut o = Outputs::new(out)?;
    match cmd {
        Command::Gen { .. } => gen(cfg, &mut o)?,
        Command::FitLink { data, .. } => fit_link(cfg, &data.data, &mut o)?,
        Command::EvalLink { data, link, .. } => eval_link(cfg, &data.data, &link, &mut o)?,
        Command::CompareSpaces { data, .. } => compare(cfg, &data.data, &mut o)?,
        Command::SegmentFit { data, .. } => segment_fit(cfg, &data.data, &mut o)?,
        Command::Sweep { data, link, segmenter, .. } => sweep(cfg, &data.data, &link, segmenter.as_deref(), &mut o)?,
        Command::Relevance { sweep, .. } => relevance(cfg, &sweep, &mut o)?,
        Command::Counterfactual { data, link, .. } => counterfactual(cfg, &data.data, &link, &mut o)?,
        Command::Track { a, b, data, .. } => track(cfg, a.zip(b), data.as_deref(), &mut o)?,
        Command::Report { runs } => report(&runs, &mut o)?,
    }
    o.finish(name, cfg)
}

fn num(v: f64) -> String {
    format!("{v}")
}

// ---------------------------------------------------------------- datasets

struct Dataset {
    manifest: DatasetManifest,
    manifest_path: PathBuf,
    latents: Vec<LatentVector>,
    reps: Vec<RepVector>,
    labels: Vec<usize>,
}

impl Dataset {
    fn load(path: &Path) -> Result<Self> {
        let manifest_path = if path.is_dir() { path.join("manifest.json") } else { path.to_path_buf() };
        let manifest = read_manifest(&manifest_path)?;
        let row = |rel: &str| -> Result<Vec<f64>> { Ok(read_matrix(&manifest.resolve(rel))?.to_f64()) };
        let mut latents = Vec::new();
        let mut reps = Vec::new();
        for s in &manifest.samples {
            latents.push(LatentVector(row(&s.latent)?));
            reps.push(RepVector(row(&s.representation)?));
        }
        let labels = manifest.samples.iter().map(|s| s.class).collect();
        Ok(Dataset {
            manifest,
            manifest_path,
            latents,
            reps,
            labels,
        })
    }

    fn world(&self) -> Result<World> {
        let cfg = self.manifest.world.clone().ok_or_else(|| {
            Error::Invalid(format!(
                "{} has no world configuration; this command needs a generated dataset",
                self.manifest_path.display()
            ))
        })?;
        World::new(cfg)
    }

    fn head(&self) -> Result<ClassifierHead> {
        let h = self
            .manifest
            .head
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} has no classifier head", self.manifest_path.display())))?;
        let weights = read_matrix(&self.manifest.resolve(&h.weights))?.to_matrix();
        let bias = read_matrix(&self.manifest.resolve(&h.bias))?.to_f64();
        let mut head = ClassifierHead::new(weights, bias, self.manifest.classes.clone())?;
        head.train_accuracy = h.train_accuracy;
        Ok(head)
    }

    fn features(&self, s: &SampleEntry, mask: &LabelMaskBuffer) -> Result<Option<FeatureMaps>> {
        let Some(rel) = &s.features else { return Ok(None) };
        let m = read_matrix(&self.manifest.resolve(rel))?;
        if m.rows != mask.labels.len() {
            return Err(Error::dim("feature map pixels", mask.labels.len(), m.rows));
        }
        Ok(Some(FeatureMaps {
            height: mask.height,
            width: mask.width,
            channels: m.cols,
            data: m.data,
        }))
    }
}

fn gen(cfg: &RunConfig, o: &mut Outputs) -> Result<()> {
    let w = &cfg.world;
    let mut wc = WorldConfig::new(w.mode, seed::derive(cfg.seed, "world", 0));
    wc.n_classes = w.classes;
    wc.d_w = w.d_w;
    wc.d_r = w.d_r;
    wc.noise_std = w.noise_std;
    let world = World::new(wc.clone())?;
    let per = w.per_class;
    if per == 0 {
        return Err(Error::Usage("--per-class must be at least 1".into()));
    }
    let n = w.classes * per;
    let ext = if w.mode == RenderMode::Shapes { "ppm" } else { "pgm" };
    let mut man = DatasetManifest::new(
        match w.mode {
            RenderMode::Linear => DatasetMode::Linear,
            RenderMode::Shapes => DatasetMode::Shapes,
        },
        w.d_w,
        w.d_r,
        class_names(w.classes),
    );
    man.world = Some(wc);
    if w.mode == RenderMode::Shapes {
        man.latent_mapping = latent_mapping();
    }
    let mut reps = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut clipped = 0usize;
    // render in parallel chunks, write in index order
    const CHUNK: usize = 64;
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let batch = par::try_map_range(EXEC, end - start, |j| {
            let i = start + j;
            let (c, k) = (i / per, i % per);
            let lat = world.sample_latent(c, world.latent_seed("dataset", c, k))?;
            let rendered = world.render(&lat)?;
            let r = world.extract(&rendered.image)?;
            Ok::<_, Error>((lat, rendered, r))
        })?;
        for (j, (lat, rendered, r)) in batch.into_iter().enumerate() {
            let i = start + j;
            let (c, k) = (i / per, i % per);
            let stem = format!("samples/{c}/{k:05}");
            let entry = SampleEntry {
                class: c,
                latent: format!("{stem}.latent.rmat"),
                representation: format!("{stem}.rep.rmat"),
                image: format!("{stem}.{ext}"),
                mask: format!("{stem}.mask.pgm"),
                features: (w.mode == RenderMode::Shapes && k < w.features_per_class)
                    .then(|| format!("{stem}.features.rmat")),
            };
            o.matrix(&entry.latent, &MatrixFile::row_vector(&lat)?)?;
            o.matrix(&entry.representation, &MatrixFile::row_vector(&r)?)?;
            o.image(&entry.image, &rendered.image)?;
            o.mask(&entry.mask, &rendered.mask)?;
            if let Some(f) = &entry.features {
                let fm = &rendered.features;
                o.matrix(f, &MatrixFile::new(fm.pixels(), fm.channels, fm.data.clone())?)?;
            }
            clipped += rendered.clipped;
            // the head sees what the files hold
            reps.push(RepVector(MatrixFile::row_vector(&r)?.to_f64()));
            labels.push(c);
            man.samples.push(entry);
        }
    }
    let head = train_head(&reps, &labels, &man.classes, &HeadTraining::default())?;
    o.matrix("head/weights.rmat", &MatrixFile::from_matrix(&head.weights)?)?;
    o.matrix("head/bias.rmat", &MatrixFile::row_vector(&head.bias)?)?;
    man.head = Some(HeadFiles {
        weights: "head/weights.rmat".into(),
        bias: "head/bias.rmat".into(),
        train_accuracy: head.train_accuracy,
    });
    o.json("manifest.json", &man)?;
    #[derive(Serialize)]
    struct GenSummary {
        samples: usize,
        classes: usize,
        clipped_values: usize,
        head_train_accuracy: Option<f64>,
    }
    o.summary(
        "gen.json",
        &GenSummary {
            samples: n,
            classes: w.classes,
            clipped_values: clipped,
            head_train_accuracy: head.train_accuracy,
        },
    )
}

fn fit_link(cfg: &RunConfig, data: &Path, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let model = fit_linking(&ds.reps, &ds.latents, cfg.link.ridge)?;
    let mode = serde_json::to_value(ds.manifest.mode)?;
    model.save(&o.dir, LINK_STEM, mode.as_str())?;
    o.external(&[format!("{LINK_STEM}.rmat"), format!("{LINK_STEM}.json")]);
    #[derive(Serialize)]
    struct FitSummary {
        pairs: usize,
        d_w: usize,
        d_r: usize,
        ridge: f64,
        ridge_effective: f64,
        training_mse_w: f64,
    }
    let resid = crate::linklearn::training_residual(&model, &ds.reps, &ds.latents)?;
    o.summary(
        "fit_link.json",
        &FitSummary {
            pairs: model.n_pairs,
            d_w: model.d_w(),
            d_r: model.d_r(),
            ridge: model.ridge,
            ridge_effective: model.ridge_effective,
            training_mse_w: resid / (ds.reps.len() * model.d_w()) as f64,
        },
    )
}

fn load_link(dir: &Path, o: &mut Outputs) -> Result<LinkingModel> {
    let m = LinkingModel::load(dir, LINK_STEM)?;
    o.input(&dir.join(format!("{LINK_STEM}.rmat")));
    o.input(&dir.join(format!("{LINK_STEM}.json")));
    Ok(m)
}

fn eval_link(cfg: &RunConfig, data: &Path, link: &Path, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let model = load_link(link, o)?;
    let world = ds.world()?;
    let test = world.sample_pairs(cfg.link.test_per_class, "link-test", EXEC)?;
    let rep = cycle_eval(&model, &world, &test.latents, seed::derive(cfg.seed, "eval-link-shuffle", 0), EXEC)?;
    let rows: Vec<Vec<String>> = rep
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), test.labels[i].to_string(), num(s.mse_w), num(s.shuffled_mse_w), num(s.cosine_distance)])
        .collect();
    o.csv("eval_link.csv", &["sample", "class", "mse_w", "shuffled_mse_w", "cosine_distance"], &rows)?;
    #[derive(Serialize)]
    struct EvalSummary<'a> {
        n: usize,
        mse_w: f64,
        shuffled_mse_w: f64,
        perceptual_proxy: f64,
        proxy_metric: &'a str,
    }
    o.summary(
        "eval_link.json",
        &EvalSummary {
            n: rep.n,
            mse_w: rep.mse_w,
            shuffled_mse_w: rep.shuffled_mse_w,
            perceptual_proxy: rep.perceptual_proxy,
            proxy_metric: PROXY_METRIC,
        },
    )
}

fn compare(cfg: &RunConfig, data: &Path, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let latents: Vec<Vec<f64>> = ds.latents.iter().map(|v| v.0.clone()).collect();
    let reps: Vec<Vec<f64>> = ds.reps.iter().map(|v| v.0.clone()).collect();
    let c = &cfg.compare;
    let pc = ProtocolConfig {
        k: c.k,
        n_init: c.n_init,
        per_class: c.per_class,
        repetitions: c.repetitions,
        seed: seed::derive(cfg.seed, "compare-spaces", 0),
    };
    let rep = compare_spaces(
        &PairedPool {
            latents: &latents,
            reps: &reps,
            labels: &ds.labels,
        },
        &pc,
        EXEC,
    )?;
    let rows: Vec<Vec<String>> = rep
        .repetitions
        .iter()
        .enumerate()
        .map(|(i, r)| vec![i.to_string(), num(r.ari_w), num(r.ari_r), num(r.rsa_euclidean), num(r.rsa_correlation)])
        .collect();
    o.csv("compare_spaces.csv", &["repetition", "ari_w", "ari_r", "rsa_euclidean", "rsa_correlation"], &rows)?;
    o.summary("compare_spaces.json", &rep)
}

fn segment_fit(cfg: &RunConfig, data: &Path, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let l = ds.manifest.label_count;
    let mut taken = vec![0usize; ds.manifest.classes.len()];
    let mut train: Vec<(FeatureMaps, LabelMaskBuffer)> = Vec::new();
    for s in &ds.manifest.samples {
        if s.features.is_none() || taken[s.class] >= cfg.segment.per_class {
            continue;
        }
        let mask = read_mask(&ds.manifest.resolve(&s.mask), l)?;
        if let Some(f) = ds.features(s, &mask)? {
            taken[s.class] += 1;
            train.push((f, mask));
        }
    }
    if train.is_empty() {
        return Err(Error::Invalid("dataset has no samples with feature maps".into()));
    }
    let pairs: Vec<(&FeatureMaps, &LabelMaskBuffer)> = train.iter().map(|(f, m)| (f, m)).collect();
    let seg = fit_fewshot_segmenter(&pairs, l)?;
    seg.save(&o.dir, SEGMENTER_STEM)?;
    o.external(&[format!("{SEGMENTER_STEM}.rmat"), format!("{SEGMENTER_STEM}.json")]);
    let world = ds.world()?;
    let n_classes = world.config().n_classes;
    let tests = par::try_map_range(EXEC, cfg.segment.held_out, |i| -> Result<(LabelMaskBuffer, LabelMaskBuffer)> {
        let c = i % n_classes;
        let w = world.sample_latent(c, world.latent_seed("segment-test", c, i / n_classes))?;
        let r = world.render(&w)?;
        Ok((segment(&seg, &r.features)?, r.mask))
    })?;
    let (pred, truth): (Vec<_>, Vec<_>) = tests.into_iter().unzip();
    #[derive(Serialize)]
    struct SegSummary {
        train_images: usize,
        held_out_images: usize,
        mean_iou: Option<f64>,
        per_label_iou: Vec<Option<f64>>,
        labels: Vec<&'static str>,
    }
    let iou = if pred.is_empty() { None } else { Some(mean_iou(&pred, &truth)?) };
    o.summary(
        "segment_fit.json",
        &SegSummary {
            train_images: train.len(),
            held_out_images: pred.len(),
            mean_iou: iou.as_ref().map(|r| r.mean),
            per_label_iou: iou.map(|r| r.per_label).unwrap_or_default(),
            labels: PART_NAMES.to_vec(),
        },
    )
}

fn build_pipeline(ds: &Dataset, link: LinkingModel, segmenter: Option<&Path>, o: &mut Outputs) -> Result<Pipeline> {
    let masks = match segmenter {
        Some(dir) => {
            o.input(&dir.join(format!("{SEGMENTER_STEM}.json")));
            o.input(&dir.join(format!("{SEGMENTER_STEM}.rmat")));
            MaskSource::Segmenter(FewShotSegmenter::load(dir, SEGMENTER_STEM)?)
        }
        None => MaskSource::GroundTruth,
    };
    Pipeline::new(ds.world()?, link, ds.head()?, masks)
}

fn label_name(l: usize) -> String {
    PART_NAMES.get(l).map_or_else(|| l.to_string(), |s| s.to_string())
}

fn sweep(cfg: &RunConfig, data: &Path, link: &Path, segmenter: Option<&Path>, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let mut model = load_link(link, o)?;
    let ranges = unit_ranges(&ds.reps)?;
    let s = &cfg.sweep;
    if let Some(d) = &s.dedicate {
        let (lo, hi) = (ranges.min.get(d.unit), ranges.max.get(d.unit));
        let (lo, hi) = lo.zip(hi).ok_or_else(|| Error::Invalid(format!("unit {} out of range", d.unit)))?;
        if hi <= lo {
            return Err(Error::Degenerate(format!("unit {} has an empty range", d.unit)));
        }
        model = dedicate_unit(&model, d.unit, d.latent_dim, d.span / (hi - lo), 0.5 * (lo + hi))?;
    }
    let pipeline = build_pipeline(&ds, model, segmenter, o)?;
    let units: Vec<usize> = if s.units.is_empty() { (0..pipeline.d_r()).collect() } else { s.units.clone() };
    let seeds_raw = pipeline.world.sample_pairs(s.seeds_per_class, "sweep-seed", EXEC)?;
    let seeds: Vec<SweepSeed> = seeds_raw
        .reps
        .iter()
        .zip(&seeds_raw.labels)
        .map(|(r, &c)| SweepSeed { r: r.clone(), class: c })
        .collect();
    let sc = SweepConfig {
        steps: s.steps,
        relevance_threshold: s.relevance_threshold,
    };
    let summary = sweep_summary(&pipeline, &seeds, &units, &ranges, &sc, EXEC)?;
    let lc = summary.label_count;
    let mut rows = Vec::new();
    for u in &summary.units {
        for (j, v) in u.label_vector.iter().enumerate() {
            let (m, l) = (Metric::ALL[j / lc], j % lc);
            rows.push(vec![
                u.unit.to_string(),
                m.name().to_string(),
                label_name(l),
                num(*v),
                num(u.sparsity[m.index()]),
                num(u.sparsity_all),
                num(u.relevance),
                u.relevant.to_string(),
            ]);
        }
    }
    o.csv(
        "unit_summary.csv",
        &["unit", "metric", "label", "median_delta", "sparsity", "sparsity_all", "relevance", "relevant"],
        &rows,
    )?;
    o.json("unit_summary.json", &summary)?;

    #[derive(Serialize)]
    struct Dist {
        metric: String,
        percentiles: Percentiles,
        long_upper_tail: bool,
    }
    let mut dists = Vec::new();
    for m in Metric::ALL {
        let xs: Vec<f64> = summary.units.iter().map(|u| u.sparsity[m.index()]).collect();
        let p = Percentiles::of(&xs);
        dists.push(Dist { metric: m.name().into(), long_upper_tail: p.long_upper_tail(), percentiles: p });
    }
    let all: Vec<f64> = summary.units.iter().map(|u| u.sparsity_all).collect();
    let p = Percentiles::of(&all);
    dists.push(Dist { metric: "all".into(), long_upper_tail: p.long_upper_tail(), percentiles: p });

    let vectors: Vec<Vec<f64>> = summary.units.iter().map(|u| u.label_vector.clone()).collect();
    let k = s.clusters.min(vectors.len());
    if vectors.len() >= 2 && k >= 1 {
        let (clusters, emb) = cluster_and_embed(&vectors, k)?;
        let rows: Vec<Vec<String>> = summary
            .units
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let (m, l) = summary.dominant_entry(i);
                vec![u.unit.to_string(), clusters[i].to_string(), num(emb[i][0]), num(emb[i][1]), m.name().into(), label_name(l)]
            })
            .collect();
        o.csv("unit_embedding.csv", &["unit", "cluster", "x", "y", "dominant_metric", "dominant_label"], &rows)?;
    }
    let mu = s.montage_unit;
    if mu < pipeline.d_r() && !seeds.is_empty() {
        let sw = sweep_unit(&pipeline, &seeds[0].r, 0, mu, s.steps, &ranges, true)?;
        let frames: Vec<ImageBuffer> = sw.steps.into_iter().filter_map(|st| st.image).collect();
        let ext = if frames[0].channels == 3 { "ppm" } else { "pgm" };
        o.image(&format!("montage_unit{mu}.{ext}"), &ImageBuffer::montage(&frames)?)?;
    }
    #[derive(Serialize)]
    struct SweepOut<'a> {
        units: usize,
        seeds: usize,
        steps: usize,
        relevance_threshold: f64,
        relevant_units: Vec<usize>,
        masks: &'static str,
        sparsity: Vec<Dist>,
        embedding: &'a str,
    }
    o.summary(
        "sweep.json",
        &SweepOut {
            units: summary.units.len(),
            seeds: summary.n_seeds,
            steps: summary.steps,
            relevance_threshold: summary.relevance_threshold,
            relevant_units: summary.units.iter().filter(|u| u.relevant).map(|u| u.unit).collect(),
            masks: if segmenter.is_some() { "few-shot segmenter" } else { "ground truth" },
            sparsity: dists,
            embedding: EMBEDDING_METHOD,
        },
    )
}

fn relevance(cfg: &RunConfig, sweep_dir: &Path, o: &mut Outputs) -> Result<()> {
    let path = sweep_dir.join("unit_summary.json");
    let summary: UnitSummary = tensorio::read_json(&path)?;
    o.input(&path);
    let t = cfg.sweep.relevance_threshold;
    let rel = summary.class_relevance_matrix()?;
    let sim = class_similarity(&rel)?;
    o.matrix("class_similarity.rmat", &MatrixFile::from_matrix(&sim)?)?;
    let c = sim.rows();
    let rows: Vec<Vec<String>> = (0..c)
        .map(|i| std::iter::once(i.to_string()).chain((0..c).map(|j| num(sim[(i, j)]))).collect())
        .collect();
    let header: Vec<String> = std::iter::once("class".to_string()).chain((0..c).map(|j| format!("class_{j}"))).collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    o.csv("class_similarity.csv", &header_refs, &rows)?;
    let mut flagged = Vec::new();
    let mut sets: Vec<Vec<usize>> = vec![Vec::new(); c];
    for u in &summary.units {
        for (k, &v) in u.class_relevance.iter().enumerate() {
            if v > t {
                flagged.push(vec![k.to_string(), u.unit.to_string(), num(v)]);
                sets[k].push(u.unit);
            }
        }
    }
    o.csv("relevant_units.csv", &["class", "unit", "relevance"], &flagged)?;
    let shared: Vec<Vec<usize>> = (0..c)
        .map(|i| (0..c).map(|j| sets[i].iter().filter(|u| sets[j].contains(u)).count()).collect())
        .collect();
    #[derive(Serialize)]
    struct RelOut {
        threshold: f64,
        relevant_per_class: Vec<Vec<usize>>,
        shared_counts: Vec<Vec<usize>>,
        similarity: Matrix,
    }
    o.summary(
        "relevance.json",
        &RelOut {
            threshold: t,
            relevant_per_class: sets,
            shared_counts: shared,
            similarity: sim,
        },
    )
}

fn counterfactual(cfg: &RunConfig, data: &Path, link: &Path, o: &mut Outputs) -> Result<()> {
    let ds = Dataset::load(data)?;
    o.input(&ds.manifest_path);
    let model = load_link(link, o)?;
    let pipeline = build_pipeline(&ds, model, None, o)?;
    let cc = &cfg.counterfactual;
    let seeds = pipeline.world.sample_pairs(cc.seeds_per_class, "counterfactual-seed", EXEC)?;
    let c = pipeline.head.n_classes();
    let runs = par::try_map_range(EXEC, seeds.len(), |i| {
        let r = &seeds.reps[i];
        let orig = pipeline.head.predict_class(r)?;
        let target = (orig + 1 + i % (c - 1)) % c;
        let traj = optimize_counterfactual(r, &cc.optimizer(target), &pipeline.head, &pipeline.link)?;
        let rep = trajectory_report(&traj, &pipeline, cc.resample)?;
        let n = traj.records.len();
        let frames = cc.montage_frames.max(1);
        let imgs = (0..frames)
            .map(|f| {
                let k = if frames == 1 { n - 1 } else { f * (n - 1) / (frames - 1) };
                Ok(pipeline.world.render(&LatentVector(traj.records[k].w.clone()))?.image)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>((traj, rep, ImageBuffer::montage(&imgs)?))
    })?;
    let mut rows = Vec::new();
    #[derive(Serialize)]
    struct RunRow {
        id: String,
        original_class: usize,
        target: usize,
        converged: bool,
        stalled: bool,
        steps: usize,
        boundary_record: Option<usize>,
        boundary_resampled: Option<usize>,
        prob_jump: Option<f64>,
        mse_jump: Option<f64>,
        render_confirms: bool,
        disagreements: usize,
        delta_norm: f64,
    }
    let mut table = Vec::new();
    for (i, (traj, rep, montage)) in runs.iter().enumerate() {
        let id = format!("{i:03}_{}_{}", traj.original_class, traj.target);
        o.json(&format!("trajectories/{id}.json"), traj)?;
        let ext = if montage.channels == 3 { "ppm" } else { "pgm" };
        o.image(&format!("montages/{id}.{ext}"), montage)?;
        let series = [&rep.target_prob, &rep.target_prob_rendered, &rep.image_mse]
            .into_iter()
            .chain(rep.metric_deltas.iter());
        for s in series {
            for (k, (raw, nrm)) in s.raw.iter().zip(&s.normalized).enumerate() {
                rows.push(vec![id.clone(), k.to_string(), s.name.clone(), num(*raw), num(*nrm), (rep.boundary == Some(k)).to_string()]);
            }
        }
        let jumps = rep.boundary_jumps(SHARPNESS_WINDOW);
        table.push(RunRow {
            id,
            original_class: traj.original_class,
            target: traj.target,
            converged: traj.converged,
            stalled: traj.stalled,
            steps: traj.steps_taken,
            boundary_record: traj.boundary,
            boundary_resampled: rep.boundary,
            prob_jump: jumps.map(|j| j.0),
            mse_jump: jumps.map(|j| j.1),
            render_confirms: rep.render_confirms,
            disagreements: rep.disagreements,
            delta_norm: traj.final_delta_norm(),
        });
    }
    o.csv("counterfactual.csv", &["run", "resample_index", "series", "raw", "normalized", "boundary"], &rows)?;
    #[derive(Serialize)]
    struct CfOut<'a> {
        runs: usize,
        converged_fraction: f64,
        sharp_fraction: f64,
        image_metric: &'a str,
        table: Vec<RunRow>,
    }
    let n = table.len().max(1) as f64;
    o.summary(
        "counterfactual.json",
        &CfOut {
            runs: table.len(),
            converged_fraction: table.iter().filter(|r| r.converged).count() as f64 / n,
            sharp_fraction: table
                .iter()
                .filter(|r| matches!((r.prob_jump, r.mse_jump), (Some(p), Some(m)) if p > 2.0 * m))
                .count() as f64
                / n,
            image_metric: crate::counterfact::IMAGE_METRIC,
            table,
        },
    )
}

fn track(cfg: &RunConfig, pair: Option<(PathBuf, PathBuf)>, data: Option<&Path>, o: &mut Outputs) -> Result<()> {
    let t = &cfg.track;
    let (a, b, masks) = match (pair, data) {
        (Some((pa, pb)), _) => {
            o.input(&pa);
            o.input(&pb);
            (read_image(&pa)?, read_image(&pb)?, None)
        }
        (None, Some(data)) => {
            let ds = Dataset::load(data)?;
            o.input(&ds.manifest_path);
            let world = ds.world()?;
            let mut w = ds
                .latents
                .get(t.sample)
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("sample {} out of range", t.sample)))?;
            let ra = world.render(&w)?;
            if t.latent_dim >= w.len() {
                return Err(Error::Invalid(format!("latent dim {} out of range", t.latent_dim)));
            }
            w.0[t.latent_dim] += t.delta;
            let rb = world.render(&w)?;
            let ext = if ra.image.channels == 3 { "ppm" } else { "pgm" };
            o.image(&format!("original.{ext}"), &ra.image)?;
            o.image(&format!("perturbed.{ext}"), &rb.image)?;
            (ra.image, rb.image, Some((ra.mask, rb.mask)))
        }
        (None, None) => return Err(Error::Usage("track needs --a/--b or --data".into())),
    };
    let set = find_correspondences(&a, &b, &t.tracker, EXEC)?;
    let rows: Vec<Vec<String>> = set
        .matches
        .iter()
        .map(|m| vec![num(m.x0), num(m.y0), num(m.x1 - m.x0), num(m.y1 - m.y0), num(m.score)])
        .collect();
    o.csv("correspondences.csv", &["x", "y", "dx", "dy", "score"], &rows)?;
    let affine = fit_affine(&set, &t.tracker)?;
    o.json("affine.json", &affine)?;
    let field = residual_field(&a, &b, &affine, &t.tracker, EXEC)?;
    let rows: Vec<Vec<String>> = field
        .points
        .iter()
        .map(|p| vec![num(p.x), num(p.y), num(p.dx), num(p.dy), num(p.score)])
        .collect();
    o.csv("residuals.csv", &["x", "y", "dx", "dy", "score"], &rows)?;
    #[derive(Serialize)]
    struct LabelMag {
        label: String,
        inside_mean: Option<f64>,
        outside_mean: Option<f64>,
        points: usize,
    }
    let per_label = masks.as_ref().map(|(ma, mb)| {
        (0..ma.label_count)
            .map(|l| {
                let m = masked_magnitude(&field, &[ma, mb], &[l as u8]);
                LabelMag {
                    label: label_name(l),
                    inside_mean: (m.inside_count > 0).then_some(m.inside_mean),
                    outside_mean: (m.outside_count > 0).then_some(m.outside_mean),
                    points: m.inside_count,
                }
            })
            .collect::<Vec<_>>()
    });
    #[derive(Serialize)]
    struct TrackOut<'a> {
        matches: usize,
        affine: crate::tracker::AffineTransform,
        residual_points: usize,
        mean_magnitude: f64,
        max_magnitude: f64,
        per_label: Option<Vec<LabelMag>>,
        method: &'a str,
    }
    o.summary(
        "track.json",
        &TrackOut {
            matches: set.matches.len(),
            affine,
            residual_points: field.points.len(),
            mean_magnitude: field.mean_magnitude,
            max_magnitude: field.max_magnitude,
            per_label,
            method: crate::tracker::METHOD,
        },
    )
}

fn scalars(prefix: &str, v: &Value, out: &mut Vec<(String, Value)>) {
    if let Value::Object(map) = v {
        for (k, x) in map {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match x {
                Value::Number(_) | Value::Bool(_) => out.push((key, x.clone())),
                Value::String(s) if s.len() <= 64 => out.push((key, x.clone())),
                _ => {}
            }
        }
    }
}

fn report(runs: &[PathBuf], o: &mut Outputs) -> Result<()> {
    #[derive(Serialize)]
    struct Entry {
        dir: String,
        command: String,
        outputs: usize,
        images: Vec<String>,
        metrics: serde_json::Map<String, Value>,
    }
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for dir in runs {
        let path = dir.join("run.json");
        let run: Value = tensorio::read_json(&path)?;
        o.input(&path);
        let command = run["command"].as_str().unwrap_or("unknown").to_string();
        let outputs: Vec<String> = run["outputs"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default();
        let mut metrics = Vec::new();
        if let Some(s) = run["summary"].as_str() {
            let sp = dir.join(s);
            let v: Value = tensorio::read_json(&sp)?;
            o.input(&sp);
            scalars("", &v, &mut metrics);
        }
        let label = super::relative_to(dir, &o.dir);
        for (k, v) in &metrics {
            rows.push(vec![label.clone(), command.clone(), k.clone(), v.to_string().trim_matches('"').to_string()]);
        }
        entries.push(Entry {
            dir: label.clone(),
            command,
            images: outputs
                .iter()
                .filter(|f| f.contains("montage") && (f.ends_with(".ppm") || f.ends_with(".pgm")))
                .map(|f| format!("{label}/{f}"))
                .collect(),
            outputs: outputs.len(),
            metrics: metrics.into_iter().collect(),
        });
    }
    o.csv("report.csv", &["run", "command", "key", "value"], &rows)?;
    o.summary("report.json", &entries)
}
