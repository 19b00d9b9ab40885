use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use blurfield::blur::{blur_nonuniform, blur_uniform, make_pattern, KernelField, NoiseConfig, Pattern, PatternKind, Quantity};
use blurfield::dataset::{generate_dataset, list_corpus, r_max, DatasetConfig, Manifest, Sampling, Split};
use blurfield::estimator::{overlap_sweep, perpendicular_profile, sliding_predict};
use blurfield::evaluation::{eval_matrix, spearman};
use blurfield::image::Image;
use blurfield::kernel::{make_kernel, unique_params, BlurParams, DEFAULT_UNIQUE_TOLERANCE};
use blurfield::model::{train, ArchitectureConfig, Convergence, InputNorm, ModelCheckpoint, OptimizerConfig, TrainingConfig};
use blurfield::sampler::{PatchSchedule, PatchSource};
use blurfield::synth::generate_corpus;

use crate::args::*;
use crate::{config_error, RunDir};

type Result<T> = anyhow::Result<T>;

pub fn dispatch(cmd: &Command, run: &RunDir) -> Result<()> {
    match cmd {
        Command::Kernels(a) => kernels(a, run),
        Command::Blur(a) => blur(a, run),
        Command::Corpus(a) => corpus(a, run),
        Command::Dataset(a) => dataset(a, run),
        Command::Train(a) => train_cmd(a, run),
        Command::Eval(a) => eval(a, run),
        Command::Field(a) => field(a, run),
        Command::Sweep(a) => sweep(a, run),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| blurfield::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|e| config_error(format!("bad {what} '{s}': {e}")))
        })
        .collect()
}

/// `a:b` (inclusive, step 1) or a comma list.
fn parse_lengths(text: &str) -> Result<Vec<f64>> {
    if let Some((a, b)) = text.split_once(':') {
        let (a, b): (u32, u32) = (
            a.trim().parse().map_err(|e| config_error(format!("bad length range '{text}': {e}")))?,
            b.trim().parse().map_err(|e| config_error(format!("bad length range '{text}': {e}")))?,
        );
        if a > b {
            return Err(config_error(format!("empty length range '{text}'")));
        }
        return Ok((a..=b).map(f64::from).collect());
    }
    parse_list(text, "length")
}

fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (h, w) = text
        .split_once('x')
        .ok_or_else(|| config_error(format!("size '{text}' is not HxW")))?;
    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| config_error(format!("bad size '{text}': {e}")));
    Ok((parse(h)?, parse(w)?))
}

fn parse_params(text: &str) -> Result<BlurParams> {
    let v: Vec<f64> = parse_list(text, "blur parameter")?;
    if v.len() != 2 {
        return Err(config_error(format!("expected 'r,phi', got '{text}'")));
    }
    Ok(BlurParams::new(v[0], v[1])?)
}

fn parse_pattern(kind: &str, first: Option<&str>, second: Option<&str>, split: Option<usize>) -> Result<Pattern> {
    let mut p = Pattern::standard(kind.parse::<PatternKind>()?);
    if let Some(f) = first {
        p.first = parse_params(f)?;
    }
    if let Some(s) = second {
        p.second = parse_params(s)?;
    }
    p.split = split;
    Ok(p)
}

fn kernels(a: &KernelsArgs, run: &RunDir) -> Result<()> {
    match (a.r, a.phi, &a.lengths) {
        (Some(r), Some(phi), None) => {
            let params = BlurParams::new(r, phi)?;
            let k = make_kernel(&params)?;
            let out = run.output(&a.out)?;
            k.write_text(&out)?;
            if let Some(png) = &a.png {
                k.write_png(&run.output(png)?)?;
            }
            log::info!("kernel {params}: {0}x{0} -> {1}", k.size(), out.display());
        }
        (None, None, Some(lengths)) => {
            let set = unique_params(&parse_lengths(lengths)?, a.angle_step, a.tolerance)?;
            let mut csv = String::from("r,phi,size\n");
            for p in &set {
                csv.push_str(&format!("{},{},{}\n", p.r, p.phi, make_kernel(p)?.size()));
            }
            let out = run.output(&a.params_out)?;
            write_file(&out, csv)?;
            log::info!("{} unique kernels -> {}", set.len(), out.display());
        }
        _ => return Err(config_error("give either --r and --phi, or --lengths")),
    }
    Ok(())
}

fn blur(a: &BlurArgs, run: &RunDir) -> Result<()> {
    let image = Image::load(&a.input)?;
    let noise = NoiseConfig::gaussian(a.noise_sigma, a.seed)?;
    let modes = [a.r.is_some() || a.phi.is_some(), a.pattern.is_some(), a.field.is_some()];
    if modes.iter().filter(|m| **m).count() != 1 {
        return Err(config_error("give exactly one of --r/--phi, --pattern, --field"));
    }
    let out_img = if let Some(kind) = &a.pattern {
        let p = parse_pattern(kind, a.first.as_deref(), a.second.as_deref(), a.split)?;
        let field = make_pattern(&p, image.height(), image.width())?;
        blur_nonuniform(&image, &field, &noise)?
    } else if let Some(path) = &a.field {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let field: KernelField = serde_json::from_str(&text).map_err(blurfield::Error::from)?;
        blur_nonuniform(&image, &field, &noise)?
    } else {
        let (r, phi) = a
            .r
            .zip(a.phi)
            .ok_or_else(|| config_error("uniform blur needs both --r and --phi"))?;
        blur_uniform(&image, &make_kernel(&BlurParams::new(r, phi)?)?, &noise)?
    };
    let out = run.output(&a.out)?;
    out_img.save_png(&out)?;
    log::info!("blurred {} -> {}", a.input.display(), out.display());
    Ok(())
}

fn corpus(a: &CorpusArgs, run: &RunDir) -> Result<()> {
    let (h, w) = parse_size(&a.size)?;
    let out = run.output(&a.out)?;
    let files = generate_corpus(&out, a.count, h, w, a.seed)?;
    log::info!("{} images ({h}x{w}) -> {}", files.len(), out.display());
    Ok(())
}

fn dataset(a: &DatasetArgs, run: &RunDir) -> Result<()> {
    let lengths = parse_lengths(&a.lengths)?;
    let params = unique_params(&lengths, a.angle_step, DEFAULT_UNIQUE_TOLERANCE)?;
    let ratios: Vec<f64> = parse_list(&a.split_ratios, "split ratio")?;
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| config_error("--split-ratios needs three values"))?;
    let mut cfg = DatasetConfig::new(a.n_max, a.seed);
    cfg.split_ratios = ratios;
    cfg.sampling = if a.enumerate_all {
        Sampling::EnumerateAll
    } else {
        Sampling::Random { per_image: a.per_image }
    };
    cfg.noise = NoiseConfig::gaussian(a.noise_sigma, a.seed)?;
    cfg.lengths = lengths;
    cfg.angle_step = Some(a.angle_step);
    let out = run.output(&a.out)?;
    log::info!("{} unique parameter pairs, r_max = {}", params.len(), r_max(a.n_max));
    let m = generate_dataset(&a.corpus, &params, &cfg, &out)?;
    for s in [Split::Train, Split::Val, Split::Test] {
        log::info!("{}: {} records", s.name(), m.split(s).count());
    }
    log::info!("manifest -> {}", out.join("manifest.json").display());
    Ok(())
}

fn train_cmd(a: &TrainArgs, run: &RunDir) -> Result<()> {
    let mut arch = ArchitectureConfig::new(!a.no_block5, a.width_divisor);
    if a.raw_input {
        arch.input_norm = InputNorm::None;
    }
    arch.validate()?;
    let schedule = PatchSchedule::parse(&a.patch_schedule, arch.min_input())?;
    let mut cfg = TrainingConfig::new(schedule, a.seed);
    cfg.batch_size = a.batch_size;
    cfg.optimizer = OptimizerConfig {
        learning_rate: a.learning_rate,
        ..OptimizerConfig::default()
    };
    cfg.convergence = Convergence {
        epsilon: a.convergence_epsilon,
        patience: a.patience,
    };
    cfg.max_epochs = a.max_epochs;
    cfg.batches_per_epoch = a.batches_per_epoch;
    cfg.val_batches = a.val_batches;

    let log_path = run.output(&a.log_csv)?;
    let mut log_file = fs::File::create(&log_path).map_err(|e| blurfield::Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    writeln!(log_file, "epoch,patch_size,batches,loss,val_loss")?;
    let mut io_err = None;
    let ck = train(&a.manifest, arch, &cfg, &mut |l| {
        let val = l.val_loss.map_or(String::new(), |v| format!("{v:.9}"));
        log::info!("epoch {} N={} loss={:.6} val={}", l.epoch, l.patch_size, l.loss, val);
        if let Err(e) = writeln!(log_file, "{},{},{},{:.9},{}", l.epoch, l.patch_size, l.batches, l.loss, val) {
            io_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let out = run.output(&a.out)?;
    ck.save(&out)?;
    log::info!(
        "{} epochs, final loss {:.6}, converged = {} -> {}",
        ck.meta.epochs_run,
        ck.meta.final_loss,
        ck.meta.converged,
        out.display()
    );
    Ok(())
}

fn test_source(manifest_path: &Path) -> Result<PatchSource> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    Ok(PatchSource::from_manifest(&manifest, base, Split::Test)?)
}

fn eval(a: &EvalArgs, run: &RunDir) -> Result<()> {
    let ck = ModelCheckpoint::load(&a.ckpt)?;
    let test = test_source(&a.manifest)?;
    let sizes: Vec<usize> = parse_list(&a.patch_sizes, "patch size")?;
    let label = a.label.clone().unwrap_or_else(|| {
        ck.meta
            .schedule
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",")
    });
    let m = eval_matrix(&label, &ck, &test, &sizes, a.seed)?;
    let csv = run.output(&a.out.with_extension("csv"))?;
    m.write_csv(&csv)?;
    let table = m.to_table();
    write_file(&run.output(&a.out.with_extension("txt"))?, &table)?;
    print!("{table}");
    log::info!("evaluation -> {}", csv.display());
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> std::path::PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn field(a: &FieldArgs, run: &RunDir) -> Result<()> {
    use blurfield::model::Predictor;
    let ck = ModelCheckpoint::load(&a.ckpt)?;
    let mut image = Image::load(&a.image)?.to_rgb();
    let pattern = a
        .pattern
        .as_deref()
        .map(|k| parse_pattern(k, None, None, None))
        .transpose()?;
    if let Some(p) = &pattern {
        let field = make_pattern(p, image.height(), image.width())?;
        image = blur_nonuniform(&image, &field, &NoiseConfig::None)?;
        image.save_png(&run.output(&with_suffix(&a.out, "_input.png"))?)?;
    }
    let grid = sliding_predict(&ck, &image, a.n, a.stride)?;
    let top = r_max(ck.n_max());
    for (q, name, lo, hi) in [(Quantity::Length, "r", 1.0, top), (Quantity::Angle, "phi", -90.0, 90.0)] {
        grid.write_csv(q, &run.output(&with_suffix(&a.out, &format!("_{name}.csv")))?)?;
        grid.heatmap(q, lo, hi)?
            .save_png(&run.output(&with_suffix(&a.out, &format!("_{name}.png")))?)?;
    }
    if let Some(p) = &pattern {
        let prof = perpendicular_profile(&grid, p.kind.quantity(), p.kind.axis())?;
        let mut csv = String::from("position,center,mean,std\n");
        for (i, (m, s)) in prof.iter().enumerate() {
            let center = i as f64 * a.stride as f64 + (a.n as f64 - 1.0) / 2.0;
            csv.push_str(&format!("{i},{center},{m:.6},{s:.6}\n"));
        }
        write_file(&run.output(&with_suffix(&a.out, "_profile.csv"))?, csv)?;
    }
    log::info!("{}x{} prediction grid at N={} stride {}", grid.rows, grid.cols, a.n, a.stride);
    Ok(())
}

fn center_crop(image: &Image, h: usize, w: usize) -> Result<Image> {
    if image.height() < h || image.width() < w {
        return Err(config_error(format!(
            "image {}x{} smaller than requested {h}x{w}",
            image.height(),
            image.width()
        )));
    }
    Ok(image.crop((image.height() - h) / 2, (image.width() - w) / 2, h, w)?)
}

fn sweep(a: &SweepArgs, run: &RunDir) -> Result<()> {
    let ck = ModelCheckpoint::load(&a.ckpt)?;
    let pattern = parse_pattern(&a.pattern, None, None, None)?;
    let sources = list_corpus(&a.images)?;
    if a.count == 0 {
        return Err(config_error("--count must be >= 1"));
    }
    let size = a.size.as_deref().map(parse_size).transpose()?;
    let mut blurred = Vec::new();
    for (_, path) in sources.iter().take(a.count) {
        let mut img = Image::load(path)?.to_rgb();
        if let Some((h, w)) = size {
            img = center_crop(&img, h, w)?;
        }
        let field = make_pattern(&pattern, img.height(), img.width())?;
        blurred.push(blur_nonuniform(&img, &field, &NoiseConfig::None)?);
    }
    let curve = overlap_sweep(&ck, &blurred, &pattern, a.n)?;
    let csv = run.output(&a.out.with_extension("csv"))?;
    curve.write_csv(&csv)?;
    curve.write_svg(&run.output(&a.out.with_extension("svg"))?)?;
    let positions: Vec<f64> = (0..curve.points.len()).map(|i| i as f64).collect();
    match spearman(&positions, &curve.means()) {
        Ok(rho) => log::info!("{} images, Spearman(mean, position) = {rho:.3}", blurred.len()),
        Err(e) => log::warn!("Spearman undefined: {e}"),
    }
    log::info!("sweep -> {}", csv.display());
    Ok(())
}
