use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use textrich_core::artifact::{read_jsonl, to_jsonl, write_atomic};
use textrich_core::categorization::{build_label_bank, classify_all, expand_prompts, histogram, Taxonomy};
use textrich_core::clustering::{
    assign, cap_per_cluster, export_gallery, kmeans_fit, sample_indices, Assignment, ClusterKeepList, ClusterModel,
    KmeansParams,
};
use textrich_core::datasetgen::OcrText;
use textrich_core::filtering::filter_pool;
use textrich_core::ingest::{normalize_rows, parse_metadata, parse_ocr, read_embeddings, EmbeddingMatrix, OcrWarnings};
use textrich_core::textlayout::{concat_paragraphs, downsample_dims, merge_words, render_text_mask, scale_boxes};
use textrich_core::Error;

use crate::context::{
    print_json, read_id_list, require_path, require_seed, write_file, write_json, Context, InvalidInput,
};
use crate::{CategorizeArgs, ClusterAssignArgs, ClusterFitArgs, FilterArgs, GalleryArgs, OcrMergeArgs};

pub fn filter(ctx: &Context, a: FilterArgs) -> anyhow::Result<()> {
    let path = require_path(a.metadata, &ctx.config.paths.metadata, "metadata file")?;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("filter")?;
    m.input(&path)?;

    let parsed = parse_metadata(&path)?;
    for e in &parsed.errors {
        tracing::warn!(line = e.line, error = %e.message, "skipping malformed metadata line");
    }
    let t = &ctx.config.filter.thresholds;
    let dedup = ctx.config.filter.dedup && !a.no_dedup;
    let (kept, summary) = filter_pool(&parsed.records, t, dedup);

    let mut ids = kept.join("\n");
    if !ids.is_empty() {
        ids.push('\n');
    }
    write_file(out, "kept_ids.txt", ids.as_bytes(), &mut m)?;
    write_json(out, "filter_summary.json", &summary, &mut m)?;
    m.param("thresholds", t)
        .param("dedup", dedup)
        .count("input", summary.input as u64)
        .count("kept", summary.kept as u64)
        .count("malformed_lines", parsed.errors.len() as u64);
    m.write(out)?;
    print_json(&summary)
}

fn load_pool(path: &Path, ids: Option<&Path>) -> anyhow::Result<EmbeddingMatrix> {
    let x = read_embeddings(path)?;
    let Some(ids_path) = ids else {
        return Ok(x);
    };
    let wanted = read_id_list(ids_path)?;
    let keep: HashSet<&str> = wanted.iter().map(String::as_str).collect();
    let sub = x.select(&keep);
    if sub.len() < keep.len() {
        tracing::warn!(missing = keep.len() - sub.len(), "ids without an embedding row");
    }
    Ok(sub)
}

#[derive(Serialize)]
struct FitReport<'a> {
    k: usize,
    pool: usize,
    sample_n: usize,
    iterations_run: usize,
    inertia: f64,
    inertia_trace: &'a [f64],
    cluster_sizes: Vec<usize>,
}

pub fn cluster_fit(ctx: &Context, a: ClusterFitArgs) -> anyhow::Result<()> {
    let c = &ctx.config.clustering;
    let seed = require_seed(a.seed, c.seed, "clustering")?;
    let emb = require_path(a.embeddings, &ctx.config.paths.embeddings, "embeddings file")?;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("cluster-fit")?;
    m.input(&emb)?;
    if let Some(p) = &a.ids {
        m.input(p)?;
    }

    let pool = load_pool(&emb, a.ids.as_deref())?;
    let n = c.sample_n.min(pool.len());
    if n < c.sample_n {
        tracing::warn!(
            pool = pool.len(),
            sample_n = c.sample_n,
            "pool smaller than sample size, using all rows"
        );
    }
    let idx = sample_indices(pool.len(), n, seed)?;
    let sample = normalize_rows(&pool.select_indices(&idx))?;
    let params = KmeansParams {
        k: c.k,
        seed,
        max_iter: c.max_iter,
        tol: c.tol,
    };
    let fit = kmeans_fit(&sample, &params)?;

    let mut sizes = vec![0usize; c.k];
    for &l in &fit.labels {
        sizes[l] += 1;
    }
    write_file(out, "cluster_model.bin", &fit.model.to_bytes(), &mut m)?;
    let mut sampled = sample.ids().join("\n");
    sampled.push('\n');
    write_file(out, "sample_ids.txt", sampled.as_bytes(), &mut m)?;
    let report = FitReport {
        k: c.k,
        pool: pool.len(),
        sample_n: n,
        iterations_run: fit.model.iterations_run,
        inertia: fit.model.inertia,
        inertia_trace: &fit.inertia_trace,
        cluster_sizes: sizes,
    };
    write_json(out, "cluster_fit.json", &report, &mut m)?;
    m.seed("sample_and_init", seed)
        .param("k", c.k)
        .param("max_iter", c.max_iter)
        .param("tol", c.tol)
        .count("pool", pool.len() as u64)
        .count("sample", n as u64)
        .count("iterations", fit.model.iterations_run as u64);
    m.write(out)?;
    Ok(())
}

pub fn cluster_assign(ctx: &Context, a: ClusterAssignArgs) -> anyhow::Result<()> {
    let c = &ctx.config.clustering;
    let emb = require_path(a.embeddings, &ctx.config.paths.embeddings, "embeddings file")?;
    let refit = a.refit || c.refit;
    let needs_seed = refit || a.keep_list.is_some();
    let seed = if needs_seed {
        Some(require_seed(a.seed, c.seed, "clustering")?)
    } else {
        a.seed.or(c.seed)
    };
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("cluster-assign")?;
    m.input(&emb)?.input(&a.model)?;
    if let Some(p) = &a.ids {
        m.input(p)?;
    }

    let pool = normalize_rows(&load_pool(&emb, a.ids.as_deref())?)?;
    let mut model = ClusterModel::load(&a.model)?;
    if refit {
        let seed = seed.expect("checked above");
        let params = KmeansParams {
            k: model.k,
            seed,
            max_iter: c.max_iter,
            tol: c.tol,
        };
        model = kmeans_fit(&pool, &params)?.model;
        write_file(out, "cluster_model.refit.bin", &model.to_bytes(), &mut m)?;
    }
    let assignments = assign(&model, &pool)?;
    let mut sizes = vec![0usize; model.k];
    for x in &assignments {
        sizes[x.cluster] += 1;
    }
    write_file(out, "assignments.jsonl", &to_jsonl(&assignments), &mut m)?;
    write_json(out, "cluster_sizes.json", &sizes, &mut m)?;

    if let Some(kl_path) = &a.keep_list {
        m.input(kl_path)?;
        let keep = ClusterKeepList::load(kl_path)?;
        keep.validate(model.k)?;
        if keep.keep.len() != c.keep_count {
            tracing::warn!(
                listed = keep.keep.len(),
                expected = c.keep_count,
                "keep-list size differs from keep_count"
            );
        }
        let seed = seed.expect("checked above");
        let selected = cap_per_cluster(&assignments, &keep, seed);
        let mut text = selected.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        write_file(out, "selected_ids.txt", text.as_bytes(), &mut m)?;
        m.param("cap_per_cluster", keep.cap_per_cluster)
            .param("kept_clusters", &keep.keep)
            .count("selected", selected.len() as u64);
    }
    if let Some(s) = seed {
        m.seed("cap_and_refit", s);
    }
    m.param("refit", refit).count("assigned", assignments.len() as u64);
    m.write(out)?;
    Ok(())
}

pub fn gallery(ctx: &Context, a: GalleryArgs) -> anyhow::Result<()> {
    let seed = require_seed(a.seed, ctx.config.clustering.seed, "clustering")?;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("gallery")?;
    m.input(&a.assignments)?;
    let assignments: Vec<Assignment> = read_jsonl(&a.assignments)?;
    let k = assignments
        .iter()
        .map(|x| x.cluster + 1)
        .max()
        .unwrap_or(0)
        .max(ctx.config.clustering.k);
    let report = export_gallery(&assignments, k, &a.images, a.per_cluster, seed, &out.join("gallery"))?;
    for p in report.pages.iter().chain([&report.index, &report.keep_list_skeleton]) {
        let name = p.strip_prefix(out).unwrap_or(p).to_string_lossy().into_owned();
        m.output_in(out, &name)?;
    }
    if report.missing_images > 0 {
        tracing::warn!(missing = report.missing_images, "gallery entries without an image file");
    }
    m.seed("gallery_sample", seed)
        .param("per_cluster", a.per_cluster)
        .count("pages", report.pages.len() as u64)
        .count("missing_images", report.missing_images as u64);
    m.write(out)?;
    println!("{}", report.index.display());
    Ok(())
}

pub fn categorize(ctx: &Context, a: CategorizeArgs) -> anyhow::Result<()> {
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest("categorize")?;
    let mut t = match &a.taxonomy {
        Some(p) => {
            m.input(p)?;
            Taxonomy::load(p)?
        }
        None => Taxonomy::builtin(),
    };
    t.threshold = ctx.config.categorization.threshold;
    let prompts = expand_prompts(&t)?;

    if a.emit_prompts {
        write_file(out, "prompts.jsonl", &to_jsonl(&prompts), &mut m)?;
        m.count("prompts", prompts.len() as u64);
        m.write(out)?;
        println!("{} prompts", prompts.len());
        return Ok(());
    }

    let (Some(pe), Some(ie)) = (&a.prompt_embeddings, &a.image_embeddings) else {
        unreachable!("clap requires both embedding files without --emit-prompts");
    };
    m.input(pe)?.input(ie)?;
    let bank = build_label_bank(&t, &read_embeddings(pe)?)?;
    let records = classify_all(&read_embeddings(ie)?, &bank, &t)?;
    let hist = histogram(&records, &t);
    write_file(out, "categories.jsonl", &to_jsonl(&records), &mut m)?;
    write_json(out, "category_histogram.json", &hist, &mut m)?;
    m.param("threshold", t.threshold)
        .param("image_embeddings_normalized", true)
        .count("images", records.len() as u64);
    m.write(out)?;
    print_json(&hist)
}

fn ocr_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry
            .map_err(|e| Error::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .path();
        if p.extension().is_some_and(|e| e == "json") {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Serialize, Default)]
struct MergeSummary {
    files: usize,
    unreadable: usize,
    empty_text: usize,
    warnings: BTreeMap<&'static str, usize>,
}

fn add_warnings(acc: &mut BTreeMap<&'static str, usize>, w: &OcrWarnings) {
    for (k, v) in [
        ("empty_text", w.empty_text),
        ("degenerate_quad", w.degenerate_quad),
        ("out_of_bounds", w.out_of_bounds),
        ("malformed", w.malformed),
    ] {
        *acc.entry(k).or_default() += v;
    }
}

pub fn ocr_merge(ctx: &Context, a: OcrMergeArgs) -> anyhow::Result<()> {
    let dir = require_path(a.ocr_dir, &ctx.config.paths.ocr_dir, "OCR directory")?;
    let layout = &ctx.config.layout;
    let out = ctx.out_dir()?;
    let mut m = ctx.manifest(&format!("ocr-merge.{}", a.engine))?;
    let files = ocr_files(&dir)?;
    if files.is_empty() {
        return Err(InvalidInput(format!("no .json files in {}", dir.display())).into());
    }

    let mut summary = MergeSummary::default();
    let mut texts = Vec::new();
    for path in &files {
        summary.files += 1;
        let parsed = match parse_ocr(path, a.engine) {
            Ok(p) => p,
            Err(e) if e.is_validation() => {
                tracing::warn!(file = %path.display(), error = %e, "skipping unreadable OCR file");
                summary.unreadable += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        m.input(path)?;
        add_warnings(&mut summary.warnings, &parsed.warnings);
        let doc = parsed.doc;
        let (w, h) = downsample_dims(doc.ocr_width_px, doc.ocr_height_px, layout.downsample_target);
        let sx = w as f32 / doc.ocr_width_px.max(1) as f32;
        let sy = h as f32 / doc.ocr_height_px.max(1) as f32;
        let small = scale_boxes(&doc, sx, sy)?;
        let text = concat_paragraphs(&merge_words(&small.words, &layout.params));
        if text.is_empty() {
            summary.empty_text += 1;
        }
        if let Some(mask_dir) = &a.masks {
            let quads: Vec<_> = doc.words.iter().map(|wb| wb.quad).collect();
            let mask = render_text_mask(doc.ocr_width_px, doc.ocr_height_px, &quads, layout.mask_dilation_px);
            write_atomic(&mask_dir.join(format!("{}.pbm", doc.image_id)), &mask.to_pbm())?;
        }
        texts.push(OcrText {
            image_id: doc.image_id,
            text,
        });
    }
    let name = format!("ocr_text.{}.jsonl", a.engine);
    write_file(out, &name, &to_jsonl(&texts), &mut m)?;
    m.param("engine", a.engine.to_string())
        .param("downsample_target", layout.downsample_target)
        .param("layout", layout.params)
        .count("files", summary.files as u64)
        .count("unreadable", summary.unreadable as u64)
        .count("empty_text", summary.empty_text as u64);
    if a.masks.is_some() {
        m.param("mask_dilation_px", layout.mask_dilation_px)
            .count("masks", texts.len() as u64);
    }
    m.write(out)?;
    print_json(&summary)
}
