mod config;
mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use rayon::prelude::*;

use partalign::adaptation::{
    dbscan, estimate_eps, pseudo_label_manifest, symmetrize, DEFAULT_MIN_PTS, DEFAULT_PERCENTILE,
};
use partalign::data::{read_label_map, write_label_map, write_manifest, write_matrix, ManifestEntry};
use partalign::gradcheck::run_all;
use partalign::regions::{PapRegion, RegionConfig};
use partalign::retrieval::{distance_matrix, evaluate, part_similarity_matrix, EvalOptions};
use partalign::seg_labels::{fuse_densepose, fusion_table_text, DENSEPOSE_CLASSES};
use partalign::synth::{generate, SynthSpec};

use config::Settings;
use dataset::{embed_all, load_heads, Manifest, Mode, Pooler};

#[derive(Parser)]
#[command(name = "partalign", version, about = "Part-aligned person re-identification toolkit")]
struct Cli {
    /// Flat key=value settings file; flags override its entries.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct PoolingArgs {
    /// pap, pap6, pcb:P or global
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long = "foot_ratio", alias = "foot-ratio")]
    foot_ratio: Option<f32>,
}

#[derive(Subcommand)]
enum Command {
    /// Pool feature maps into part-feature files.
    Pool {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        pooling: PoolingArgs,
    },
    /// Query/gallery retrieval metrics (Rank-k, mAP).
    Eval {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// Head checkpoint directory; identity embedding if omitted.
        #[arg(long)]
        heads: Option<PathBuf>,
        #[command(flatten)]
        pooling: PoolingArgs,
        #[arg(long = "single_gallery_shot", alias = "single-gallery-shot")]
        single_gallery_shot: Option<bool>,
        #[arg(long = "exclude_same_camera", alias = "exclude-same-camera")]
        exclude_same_camera: Option<bool>,
    },
    /// DBSCAN pseudo labels for an unlabeled manifest.
    Cluster {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        heads: Option<PathBuf>,
        #[command(flatten)]
        pooling: PoolingArgs,
        /// Fixed eps; otherwise estimated from the distance percentile.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        percentile: Option<f64>,
        #[arg(long = "min_pts", alias = "min-pts")]
        min_pts: Option<usize>,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Part-to-part cosine similarity averaged over a manifest.
    Simmatrix {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        pooling: PoolingArgs,
    },
    /// Fuse 15-class Densepose label maps into the 8 segmentation classes.
    FuseLabels {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Print the fusion table.
        #[arg(long)]
        table: bool,
    },
    /// Generate a synthetic dataset with planted identity structure.
    Synth {
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long = "images_per_id", alias = "images-per-id")]
        images_per_id: Option<usize>,
        #[arg(long = "target_identities", alias = "target-identities")]
        target_identities: Option<usize>,
        #[arg(long)]
        cameras: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long = "image_w", alias = "image-w")]
        image_w: Option<u32>,
        #[arg(long = "image_h", alias = "image-h")]
        image_h: Option<u32>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        occlusion: Option<f64>,
    },
}

fn pooling_setup(s: &mut Settings, args: PoolingArgs) -> Result<(Mode, RegionConfig)> {
    s.set("mode", args.mode);
    s.set("tau", args.tau);
    s.set("foot_ratio", args.foot_ratio);
    let mode = s.get_or("mode", Mode::Pap)?;
    let d = RegionConfig::default();
    let cfg = RegionConfig {
        tau: s.get_or("tau", d.tau)?,
        foot_ratio: s.get_or("foot_ratio", d.foot_ratio)?,
    };
    Ok((mode, cfg))
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf> {
    let out = out.context("--out is required for this command")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_pool(s: &mut Settings, out: Option<PathBuf>, manifest: &Path, pooling: PoolingArgs) -> Result<()> {
    let (mode, cfg) = pooling_setup(s, pooling)?;
    let out = require_out(out)?;
    let m = Manifest::load(manifest)?;
    let pooler = Pooler::new(&m, mode, cfg)?;
    let rows: Vec<ManifestEntry> = m
        .entries
        .par_iter()
        .map(|e| {
            let feats = pooler.part_features(&m, e)?;
            let file = format!("{}.etns", e.image_id);
            write(&out.join(&file), feats.to_bytes())?;
            Ok(ManifestEntry {
                feature: Some(file),
                ..m.absolute(e)
            })
        })
        .collect::<Result<_>>()?;
    write(&out.join("manifest.csv"), write_manifest(&rows)?)?;
    info!("pooled {} images with mode {mode}", rows.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    s: &mut Settings,
    out: Option<PathBuf>,
    query: &Path,
    gallery: &Path,
    heads: Option<&Path>,
    pooling: PoolingArgs,
    single_gallery_shot: Option<bool>,
    exclude_same_camera: Option<bool>,
) -> Result<()> {
    let (mode, cfg) = pooling_setup(s, pooling)?;
    s.set("single_gallery_shot", single_gallery_shot);
    s.set("exclude_same_camera", exclude_same_camera);
    let d = EvalOptions::default();
    let opts = EvalOptions {
        exclude_same_camera: s.get_or("exclude_same_camera", d.exclude_same_camera)?,
        single_gallery_shot: s.get_or("single_gallery_shot", d.single_gallery_shot)?,
    };
    let q = Manifest::load(query)?;
    let g = Manifest::load(gallery)?;
    let qf = Pooler::new(&q, mode, cfg)?.pool_all(&q)?;
    let gf = Pooler::new(&g, mode, cfg)?.pool_all(&g)?;
    let stack = load_heads(heads, &qf)?;
    let qe = embed_all(&q, &qf, &stack)?;
    let ge = embed_all(&g, &gf, &stack)?;
    let dists = distance_matrix(&qe, &ge)?;
    let ids = |e: &[partalign::retrieval::EmbeddingSet]| e.iter().map(|x| x.identity()).collect::<Vec<_>>();
    let report = evaluate(&dists, &ids(&qe), &ids(&ge), &opts)?;
    let json = serde_json::to_string_pretty(&report)? + "\n";
    print!("{json}");
    if let Some(out) = out {
        fs::create_dir_all(&out)?;
        write(&out.join("metrics.json"), &json)?;
        write(&out.join("distances.etns"), dists.to_bytes())?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_cluster(
    s: &mut Settings,
    out: Option<PathBuf>,
    manifest: &Path,
    heads: Option<&Path>,
    pooling: PoolingArgs,
    eps: Option<f64>,
    percentile: Option<f64>,
    min_pts: Option<usize>,
) -> Result<()> {
    let (mode, cfg) = pooling_setup(s, pooling)?;
    s.set("eps", eps);
    s.set("percentile", percentile);
    s.set("min_pts", min_pts);
    let out = require_out(out)?;
    let m = Manifest::load(manifest)?;
    let feats = Pooler::new(&m, mode, cfg)?.pool_all(&m)?;
    let stack = load_heads(heads, &feats)?;
    let emb = embed_all(&m, &feats, &stack)?;
    let dists = symmetrize(&distance_matrix(&emb, &emb)?)?;
    let eps = match s.get::<f64>("eps")? {
        Some(e) => e,
        None => estimate_eps(&dists, s.get_or("percentile", DEFAULT_PERCENTILE)?)?,
    };
    let assignment = dbscan(&dists, eps, s.get_or("min_pts", DEFAULT_MIN_PTS)?)?;
    let absolute: Vec<_> = m.entries.iter().map(|e| m.absolute(e)).collect();
    let relabeled = pseudo_label_manifest(&absolute, &assignment)?;
    write(&out.join("pseudo_labels.csv"), write_manifest(&relabeled)?)?;
    let summary = serde_json::to_string_pretty(&assignment.summary())? + "\n";
    write(&out.join("summary.json"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_gradcheck(s: &mut Settings, out: Option<PathBuf>, trials: Option<usize>) -> Result<bool> {
    s.set("trials", trials);
    let trials = s.get_or("trials", 100usize)?;
    let seed = s.get_or("seed", 0u64)?;
    let reports = run_all(seed, trials)?;
    for r in &reports {
        println!(
            "{:<18} trials={:<5} max_rel_err={:.3e} tol={:.0e} {}",
            r.name,
            r.trials,
            r.max_rel_err,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if let Some(out) = out {
        fs::create_dir_all(&out)?;
        write(&out.join("gradcheck.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn part_names(mode: Mode, parts: usize) -> Vec<String> {
    match mode {
        Mode::Pap | Mode::Pap6 if parts <= PapRegion::ALL.len() => {
            PapRegion::ALL[..parts].iter().map(|r| r.name().to_string()).collect()
        }
        _ => (0..parts).map(|p| format!("part{p}")).collect(),
    }
}

fn cmd_simmatrix(s: &mut Settings, out: Option<PathBuf>, manifest: &Path, pooling: PoolingArgs) -> Result<()> {
    let (mode, cfg) = pooling_setup(s, pooling)?;
    let m = Manifest::load(manifest)?;
    let feats = Pooler::new(&m, mode, cfg)?.pool_all(&m)?;
    let sim = part_similarity_matrix(&feats)?;
    let p = feats[0].num_parts();
    let names = part_names(mode, p);
    let width = names.iter().map(String::len).max().unwrap_or(0).max(6);
    print!("{:width$}", "");
    for n in &names {
        print!(" {n:>width$}");
    }
    println!();
    for (i, n) in names.iter().enumerate() {
        print!("{n:width$}");
        for v in &sim[i * p..(i + 1) * p] {
            print!(" {v:>width$.3}");
        }
        println!();
    }
    if let Some(out) = out {
        fs::create_dir_all(&out)?;
        let values: Vec<f32> = sim.iter().map(|&v| v as f32).collect();
        write(&out.join("simmatrix.etns"), write_matrix(p, p, &values))?;
    }
    Ok(())
}

fn cmd_fuse_labels(out: Option<PathBuf>, manifest: Option<&Path>, table: bool) -> Result<()> {
    if table {
        print!("{}", fusion_table_text());
    }
    let Some(manifest) = manifest else {
        if !table {
            bail!("nothing to do: pass --manifest and/or --table");
        }
        return Ok(());
    };
    let out = require_out(out)?;
    let m = Manifest::load(manifest)?;
    let done: Vec<()> = m
        .entries
        .par_iter()
        .filter(|e| e.labelmap.is_some())
        .map(|e| {
            let path = m.resolve(e.labelmap.as_deref().expect("filtered"));
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            let map = read_label_map(&bytes, DENSEPOSE_CLASSES)
                .and_then(|l| fuse_densepose(&l))
                .with_context(|| format!("{}: {}", e.image_id, path.display()))?;
            write(&out.join(format!("{}.etns", e.image_id)), write_label_map(&map))
        })
        .collect::<Result<_>>()?;
    info!("fused {} label maps", done.len());
    Ok(())
}

fn run() -> Result<bool> {
    let cli = Cli::parse();
    let mut s = Settings::load(cli.config.as_deref())?;
    s.set("seed", cli.seed);
    s.set("threads", cli.threads);
    if let Some(n) = s.get::<usize>("threads")? {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    let out = cli.out;
    match cli.command {
        Command::Pool { manifest, pooling } => cmd_pool(&mut s, out, &manifest, pooling)?,
        Command::Eval {
            query,
            gallery,
            heads,
            pooling,
            single_gallery_shot,
            exclude_same_camera,
        } => cmd_eval(
            &mut s,
            out,
            &query,
            &gallery,
            heads.as_deref(),
            pooling,
            single_gallery_shot,
            exclude_same_camera,
        )?,
        Command::Cluster {
            manifest,
            heads,
            pooling,
            eps,
            percentile,
            min_pts,
        } => cmd_cluster(&mut s, out, &manifest, heads.as_deref(), pooling, eps, percentile, min_pts)?,
        Command::Gradcheck { trials } => return cmd_gradcheck(&mut s, out, trials),
        Command::Simmatrix { manifest, pooling } => cmd_simmatrix(&mut s, out, &manifest, pooling)?,
        Command::FuseLabels { manifest, table } => cmd_fuse_labels(out, manifest.as_deref(), table)?,
        Command::Synth {
            identities,
            images_per_id,
            target_identities,
            cameras,
            channels,
            height,
            width,
            image_w,
            image_h,
            noise,
            occlusion,
        } => {
            s.set("identities", identities);
            s.set("images_per_id", images_per_id);
            s.set("target_identities", target_identities);
            s.set("cameras", cameras);
            s.set("channels", channels);
            s.set("height", height);
            s.set("width", width);
            s.set("image_w", image_w);
            s.set("image_h", image_h);
            s.set("noise", noise);
            s.set("occlusion", occlusion);
            let d = SynthSpec::default();
            let spec = SynthSpec {
                identities: s.get_or("identities", d.identities)?,
                images_per_id: s.get_or("images_per_id", d.images_per_id)?,
                target_identities: s.get_or("target_identities", d.target_identities)?,
                cameras: s.get_or("cameras", d.cameras)?,
                channels: s.get_or("channels", d.channels)?,
                height: s.get_or("height", d.height)?,
                width: s.get_or("width", d.width)?,
                image_w: s.get_or("image_w", d.image_w)?,
                image_h: s.get_or("image_h", d.image_h)?,
                noise: s.get_or("noise", d.noise)?,
                occlusion: s.get_or("occlusion", d.occlusion)?,
            };
            let out = require_out(out)?;
            let data = generate(&spec, s.get_or("seed", 0u64)?)?;
            data.write(&out)?;
            info!(
                "wrote {} query, {} gallery, {} target images to {}",
                data.query.len(),
                data.gallery.len(),
                data.target.len(),
                out.display()
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            let mut chain = e.chain().map(|c| c.to_string());
            let report = serde_json::json!({
                "error": chain.next().unwrap_or_default(),
                "causes": chain.collect::<Vec<_>>(),
            });
            eprintln!("{report}");
            ExitCode::from(2)
        }
    }
}
