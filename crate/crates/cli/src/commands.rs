use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;

use idcn_core::autodiff::op_suite;
use idcn_core::codec::{self, color::luma_plane, ChannelClass, QuantTable, TablePair};
use idcn_core::image::{PlanarImage, SampleRange};
use idcn_core::io::{heatmap_ppm, list_images, read_image, read_lines, read_rgb, write_pnm};
use idcn_core::labeling::{estimate_stddev, grid_shape, LabelChannel, StdDevGrid};
use idcn_core::metrics;
use idcn_core::model::{dct_loss_spectrum, network_gradcheck, ChannelMode, ModelConfig, ModelWeights};
use idcn_core::synth::{corpus_image_seed, natural_image};
use idcn_core::trainer::{self, history_csv, parse_run_config, QualitySpec, TrainConfig, Trainer, DEFAULT_SEED};
use idcn_core::translation::TranslationKernel;

use crate::{Cli, Command, TrainArgs};

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Tables { quality } => tables(quality),
        Command::Degrade { input, out, quality } => {
            let q = match quality.spec() {
                Some(QualitySpec::Fixed(q)) => q,
                _ => bail!("degrade needs --quality"),
            };
            degrade(&input, &out, q)
        }
        Command::Stats { input, out, quality } => stats(&input, &out, quality),
        Command::Kernel { quality, out, byte_range } => kernel(quality, &out, byte_range),
        Command::Train(args) => train(args, seed, false),
        Command::TrainFlexible(args) => train(args, seed, true),
        Command::Infer { weights, input, out, quality, manifest } => infer(&weights, &input, &out, quality, manifest.as_deref()),
        Command::Eval { clean, test, quality, out } => eval(&clean, &test, quality, out.as_deref()),
        Command::Spectrum { weights, input, quality, out } => spectrum(&weights, &input, quality, &out),
        Command::Synth { out, count, size } => synth(&out, count, size, seed.unwrap_or(DEFAULT_SEED)),
        Command::Gradcheck => gradcheck(seed.unwrap_or(DEFAULT_SEED)),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn images_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        bail!("no images in {}", dir.display());
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn read_corpus(dir: &Path) -> Result<Vec<PlanarImage>> {
    images_in(dir)?
        .par_iter()
        .map(|p| read_rgb(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

/// Prints every per-file error and fails if there was any.
fn report_failures(failures: &[(String, anyhow::Error)]) -> Result<()> {
    for (name, e) in failures {
        eprintln!("error: {name}: {e:#}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        bail!("{} file(s) failed", failures.len())
    }
}

fn tables(q: u32) -> Result<()> {
    let pair = TablePair::for_quality(q)?;
    let mut s = String::new();
    for class in [ChannelClass::Luma, ChannelClass::Chroma] {
        let t = pair.get(class);
        let _ = writeln!(s, "# {} q={q} crc32={:08x}", class.name(), t.checksum());
        for row in t.entries() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:3}")).collect();
            let _ = writeln!(s, "{}", cells.join(" "));
        }
    }
    let _ = writeln!(s, "# pair crc32={:08x}", pair.checksum());
    print!("{s}");
    Ok(())
}

fn degrade(input: &Path, out: &Path, q: u32) -> Result<()> {
    let files = images_in(input)?;
    create_dir(out)?;
    let checksum = TablePair::for_quality(q)?.checksum();
    let results: Vec<(String, Result<String>)> = files
        .par_iter()
        .map(|path| {
            let run = || -> Result<String> {
                let img = read_rgb(path)?;
                let degraded = codec::degrade(&img, q)?.image;
                let name = format!("{}.ppm", stem(path));
                write_pnm(&out.join(&name), &degraded)?;
                Ok(name)
            };
            (file_name(path), run())
        })
        .collect();
    let mut manifest = String::from("file,q,tables_crc32\n");
    let mut failures = Vec::new();
    for (src, r) in results {
        match r {
            Ok(name) => {
                let _ = writeln!(manifest, "{name},{q},{checksum:08x}");
            }
            Err(e) => failures.push((src, e)),
        }
    }
    write(&out.join("manifest.csv"), manifest)?;
    report_failures(&failures)
}

fn write_grid(out: &Path, name: &str, grid: &StdDevGrid) -> Result<()> {
    write(&out.join(format!("{name}.txt")), grid.to_text())?;
    write(&out.join(format!("{name}.ppm")), heatmap_ppm(&grid.sigma, grid.period, grid.period, 16)?)
}

fn stats(input: &Path, out: &Path, q: u32) -> Result<()> {
    let corpus = read_corpus(input)?;
    create_dir(out)?;
    let jobs = [
        ("grid_r", LabelChannel::R, 16),
        ("grid_g", LabelChannel::G, 16),
        ("grid_b", LabelChannel::B, 16),
        ("grid_luma", LabelChannel::Luma, 8),
        ("grid_luma16", LabelChannel::Luma, 16),
    ];
    let grids: Vec<StdDevGrid> =
        jobs.par_iter().map(|&(_, channel, period)| estimate_stddev(&corpus, q, channel, period)).collect::<Result<_, _>>()?;
    let mut report = format!("# q={q} images={}\n", corpus.len());
    report.push_str("grid,min_quadrant_correlation,corner_mean,center_mean,corners_exceed_center\n");
    for ((name, _, _), grid) in jobs.iter().zip(&grids) {
        write_grid(out, name, grid)?;
        let shape = grid_shape(grid)?;
        let min_corr = if grid.period == 16 { format!("{:.6}", shape.min_quadrant_correlation()) } else { String::new() };
        let _ = writeln!(
            report,
            "{name},{min_corr},{:.6},{:.6},{}",
            shape.corner_mean,
            shape.center_mean,
            shape.corners_exceed_center()
        );
    }
    print!("{report}");
    write(&out.join("report.csv"), report)
}

fn kernel(q: u32, out: &Path, byte_range: bool) -> Result<()> {
    create_dir(out)?;
    let range = if byte_range { SampleRange::Byte } else { SampleRange::Unit };
    for class in [ChannelClass::Luma, ChannelClass::Chroma] {
        let k = TranslationKernel::build(&QuantTable::for_quality(q, class)?, range);
        write(&out.join(format!("kernel_{}_q{q}.txt", class.name())), k.to_string())?;
    }
    Ok(())
}

fn train(args: TrainArgs, seed: Option<u64>, flexible: bool) -> Result<()> {
    let resumed = args.resume.as_deref().map(ModelWeights::load).transpose()?;
    let (model, mut config) = match (&args.config, &resumed) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_run_config(&text)?
        }
        (None, Some(w)) => (w.config, TrainConfig::from_meta(w)?.unwrap_or_default()),
        (None, None) => (ModelConfig::tiny(), TrainConfig::default()),
    };
    if let Some(q) = args.quality.spec() {
        config.quality = q;
    }
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(e) = args.max_epochs {
        config.max_epochs = e;
    }
    config.validate()?;
    let train_set = read_corpus(&args.train)?;
    let val_set = read_corpus(&args.val)?;
    create_dir(&args.out)?;

    let outcome = match &resumed {
        Some(weights) => {
            if weights.config != model {
                bail!("model keys in {} differ from the resumed weights", args.config.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
            }
            let mut t = Trainer::resume(config, weights, &train_set, &val_set)?;
            t.run()?;
            t.into_outcome()?
        }
        None if flexible => trainer::train_flexible(config, model, &train_set, &val_set)?,
        None => trainer::train(config, model, &train_set, &val_set)?,
    };
    outcome.weights.save(&args.out.join("weights.idcn"))?;
    write(&args.out.join("history.csv"), history_csv(&outcome.history))?;
    let last = outcome.history.last().map_or(f64::NAN, |r| r.val_psnr_db);
    println!(
        "baseline {:.4} dB, final {:.4} dB, gain {:+.4} dB after {} epoch(s)",
        outcome.baseline_psnr_db,
        last,
        last - outcome.baseline_psnr_db,
        outcome.history.len()
    );
    Ok(())
}

/// Quality per file stem from a degrade manifest.
fn read_manifest(path: &Path) -> Result<BTreeMap<String, u32>> {
    let mut out = BTreeMap::new();
    for line in read_lines(path)?.iter().skip(1) {
        let mut cols = line.split(',');
        let (Some(file), Some(q)) = (cols.next(), cols.next()) else {
            bail!("malformed manifest line `{line}`");
        };
        out.insert(stem(Path::new(file)), q.trim().parse().with_context(|| format!("quality in `{line}`"))?);
    }
    Ok(out)
}

fn infer(weights: &Path, input: &Path, out: &Path, quality: Option<u32>, manifest: Option<&Path>) -> Result<()> {
    let weights = ModelWeights::load(weights)?;
    let net = weights.network()?;
    let per_file = manifest.map(read_manifest).transpose()?;
    if per_file.is_none() && quality.is_none() {
        bail!("infer needs --quality or --manifest");
    }
    let files = images_in(input)?;
    create_dir(out)?;
    let failures: Vec<(String, anyhow::Error)> = files
        .par_iter()
        .filter_map(|path| {
            let run = || -> Result<()> {
                let q = match &per_file {
                    Some(m) => *m.get(&stem(path)).ok_or_else(|| anyhow!("not listed in the manifest"))?,
                    None => quality.expect("checked above"),
                };
                let img = read_rgb(path)?;
                let img = match weights.config.channels {
                    ChannelMode::Color => img,
                    ChannelMode::LumaOnly => luma_plane(&img)?,
                };
                let restored = trainer::restore_with(&weights, &net, &img, q)?;
                let ext = if restored.channels() == 3 { "ppm" } else { "pgm" };
                write_pnm(&out.join(format!("{}.{ext}", stem(path))), &restored)?;
                Ok(())
            };
            run().err().map(|e| (file_name(path), e))
        })
        .collect();
    report_failures(&failures)
}

fn eval(clean: &Path, test: &Path, quality: Option<u32>, out: Option<&Path>) -> Result<()> {
    let clean_files: BTreeMap<String, PathBuf> = images_in(clean)?.into_iter().map(|p| (stem(&p), p)).collect();
    let test_files = images_in(test)?;
    let results: Vec<(String, Result<metrics::MetricReport>)> = test_files
        .par_iter()
        .map(|path| {
            let run = || -> Result<metrics::MetricReport> {
                let reference = clean_files.get(&stem(path)).ok_or_else(|| anyhow!("no clean counterpart"))?;
                let (a, b) = (read_image(reference)?, read_image(path)?);
                let a = if a.channels() == 3 && b.channels() == 1 { luma_plane(&a)? } else { a };
                Ok(metrics::evaluate(&a, &b)?)
            };
            (file_name(path), run())
        })
        .collect();
    let q = quality.map(|q| q.to_string()).unwrap_or_default();
    let mut csv = String::from("file,q,psnr,ssim,psnr_b\n");
    let (mut sum, mut count) = ([0.0; 3], 0usize);
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok(m) => {
                let _ = writeln!(csv, "{name},{q},{:.6},{:.6},{:.6}", m.psnr_db, m.ssim, m.psnr_b_db);
                sum[0] += m.psnr_db;
                sum[1] += m.ssim;
                sum[2] += m.psnr_b_db;
                count += 1;
            }
            Err(e) => failures.push((name, e)),
        }
    }
    if count > 0 {
        let n = count as f64;
        let _ = writeln!(csv, "mean,{q},{:.6},{:.6},{:.6}", sum[0] / n, sum[1] / n, sum[2] / n);
    }
    match out {
        Some(path) => write(path, &csv)?,
        None => print!("{csv}"),
    }
    report_failures(&failures)
}

fn spectrum(weights: &Path, input: &Path, q: u32, out: &Path) -> Result<()> {
    let weights = ModelWeights::load(weights)?;
    let net = weights.network()?;
    let corpus = read_corpus(input)?;
    create_dir(out)?;
    let spectra = dct_loss_spectrum(&net, weights.prior.as_ref(), &corpus, q)?;
    let mut summary = String::from("kind,low_band_mean,high_band_mean,high_frequency_dominant\n");
    for s in &spectra {
        let name = s.kind.name().trim_start_matches("reu_");
        write(&out.join(format!("spectrum_{name}.txt")), s.to_text())?;
        write(&out.join(format!("spectrum_{name}.ppm")), heatmap_ppm(&s.values, 8, 8, 32)?)?;
        let _ = writeln!(summary, "{name},{:.6},{:.6},{}", s.low_band_mean(), s.high_band_mean(), s.high_frequency_dominant());
    }
    print!("{summary}");
    write(&out.join("summary.csv"), summary)
}

fn synth(out: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    if count == 0 || size < 16 {
        bail!("need a positive count and size >= 16");
    }
    create_dir(out)?;
    (0..count).into_par_iter().try_for_each(|i| {
        let img = natural_image(size, size, corpus_image_seed(seed, i));
        Ok(write_pnm(&out.join(format!("img{i:04}.ppm")), &img)?)
    })
}

fn gradcheck(seed: u64) -> Result<()> {
    let mut worst = 0.0f64;
    println!("check,tensor,max_rel_error");
    for (name, report) in op_suite(seed)? {
        for t in &report.tensors {
            println!("{name},{},{:.3e}", t.name, t.max_rel_error);
            worst = worst.max(t.max_rel_error);
        }
    }
    let micro = ModelConfig { n: 1, k: 4, l: 3, b: 4, ..ModelConfig::default() };
    let report = network_gradcheck(micro, 16, 16, 10, seed, Some(16))?;
    for t in &report.tensors {
        println!("network,{},{:.3e}", t.name, t.max_rel_error);
    }
    println!("# worst op error {worst:.3e}, worst network error {:.3e}", report.max_rel_error());
    if worst >= 1e-4 || report.max_rel_error() >= 1e-3 {
        bail!("gradient check failed");
    }
    Ok(())
}
