use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::Context;
use tsvmorph_core::arch::{describe, ArchId};
use tsvmorph_core::augment::{augment_records, AugmentationType, Transform};
use tsvmorph_core::cropper::{crop_mosaic, estimate_grid};
use tsvmorph_core::label::MorphologyLabel;
use tsvmorph_core::nn::load_checkpoint;
use tsvmorph_core::surface::{decode_png, encode_png, parse_wli, render_grayscale, write_wli, GrayImage};
use tsvmorph_core::synthetic::{balanced_labels, generate_mosaic, GenParams};
use tsvmorph_core::train::{
    assign_splits, evaluate, export_crops, load_samples, read_manifest, run_sweep, sweep_cells, synthetic_split, train,
    write_manifest, ManifestRecord, Sample, Split, TrainConfig, TrainingRunner, MANIFEST_FILE,
};

use crate::ranges::{parse_archs, parse_float_list, parse_int_list};
use crate::{
    AugmentArgs, CliError, Command, CropArgs, DataArgs, DescribeArgs, EvalArgs, GenerateArgs, HyperArgs, ImportArgs,
    ServeArgs, SweepArgs, TrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(CliError::Usage(msg.into()))
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Import(a) => import(a),
        Command::Crop(a) => crop(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Describe(a) => describe_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let params = GenParams { seed: a.seed, ..GenParams::default() };
    if let Some(n) = a.vias {
        if n == 0 {
            return usage("--vias must be at least 1");
        }
        let (train_set, test_set) = synthetic_split(n, a.test_vias, &params, a.seed).map_err(anyhow::Error::from)?;
        let mut records = Vec::with_capacity(n + a.test_vias);
        fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
        for (samples, split) in [(&train_set, Split::Train), (&test_set, Split::Test)] {
            for s in samples {
                let path = format!("{}.png", s.source_id);
                write_png(&a.out.join(&path), &s.image)?;
                records.push(ManifestRecord {
                    path,
                    label: s.label,
                    soft_label: None,
                    split,
                    source_id: s.source_id.clone(),
                    transform: Transform::Identity,
                });
            }
        }
        save_manifest(&a.out, &records)?;
        println!("wrote {} labeled vias to {}", records.len(), a.out.display());
        return Ok(());
    }
    if a.rows == 0 || a.cols == 0 {
        return usage("--rows and --cols must be at least 1");
    }
    let labels = balanced_labels((a.rows * a.cols) as usize, a.seed);
    let mosaic = generate_mosaic(a.rows, a.cols, &labels, &params, a.gap).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("mosaic.wli"), write_wli(&mosaic.heightmap)).context("writing mosaic.wli")?;
    write_png(&a.out.join("mosaic.png"), &render_grayscale(&mosaic.heightmap))?;
    let mut gt = BufWriter::new(fs::File::create(a.out.join("ground_truth.jsonl")).context("creating ground truth")?);
    for b in &mosaic.boxes {
        serde_json::to_writer(&mut gt, b).map_err(anyhow::Error::from)?;
        gt.write_all(b"\n").context("writing ground truth")?;
    }
    gt.flush().context("writing ground truth")?;
    println!("wrote {}x{} mosaic to {}", a.rows, a.cols, a.out.display());
    Ok(())
}

fn import(a: ImportArgs) -> Result<()> {
    let label = match &a.label {
        Some(l) => Some(parse_label(l)?),
        None => None,
    };
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return usage(format!("--test-fraction {} outside [0, 1]", a.test_fraction));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for input in &a.inputs {
        let stem = file_stem(input)?;
        if !seen.insert(stem.clone()) {
            return Err(anyhow::anyhow!("two inputs share the name {stem:?}").into());
        }
        let path = format!("{stem}.png");
        write_png(&a.out.join(&path), &read_image(input)?)?;
        records.push(ManifestRecord {
            path,
            label,
            soft_label: None,
            split: Split::Train,
            source_id: stem,
            transform: Transform::Identity,
        });
    }
    assign_splits(&mut records, a.test_fraction, a.seed).map_err(anyhow::Error::from)?;
    save_manifest(&a.out, &records)?;
    println!("imported {} images into {}", records.len(), a.out.display());
    Ok(())
}

fn crop(a: CropArgs) -> Result<()> {
    if a.grid_rows == 0 || a.grid_cols == 0 {
        return usage("--grid-rows and --grid-cols must be at least 1");
    }
    let offsets = a.offsets.as_deref().map(|s| parse_pair::<i32>(s, ',', "--offsets")).transpose()?;
    let cell = a.cell.as_deref().map(|s| parse_pair::<u32>(&s.to_ascii_lowercase(), 'x', "--cell")).transpose()?;
    let name = match a.name {
        Some(n) => n,
        None => file_stem(&a.input)?,
    };
    let image = read_image(&a.input)?;
    let est = estimate_grid(&image, a.grid_rows, a.grid_cols, a.theta).map_err(anyhow::Error::from)?;
    let mut grid = est.grid;
    if let Some((x, y)) = offsets {
        (grid.x_offset, grid.y_offset) = (x, y);
    }
    if let Some((w, h)) = cell {
        (grid.cell_width, grid.cell_height) = (w, h);
    }
    if !est.confident {
        log::warn!("grid estimate fell back to a uniform partition; check grid.json");
    }
    let crops = crop_mosaic(&image, &grid, a.theta).map_err(anyhow::Error::from)?;
    export_crops(&a.out, &name, &crops, Split::Train).map_err(anyhow::Error::from)?;
    let grid_json = serde_json::to_string_pretty(&grid).map_err(anyhow::Error::from)?;
    fs::write(a.out.join("grid.json"), grid_json + "\n").context("writing grid.json")?;
    println!("wrote {} crops to {}", crops.len(), a.out.display());
    Ok(())
}

fn augment(a: AugmentArgs) -> Result<()> {
    let ty = AugmentationType::new(a.aug_type).map_err(|e| CliError::Usage(e.to_string()))?;
    let records = read_manifest(a.data.join(MANIFEST_FILE)).map_err(anyhow::Error::from)?;
    if let Some(r) = records.iter().find(|r| r.transform != Transform::Identity) {
        return Err(anyhow::anyhow!("{} is already augmented ({})", r.path, r.transform).into());
    }
    let (train_recs, test_recs): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.split == Split::Train);
    let (train_set, _) = load_samples(&train_recs, &a.data).map_err(anyhow::Error::from)?;
    let augmented = augment_records(&train_set, ty).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut out = Vec::with_capacity(augmented.len() + test_recs.len());
    for aug in augmented {
        let src = &train_recs[aug.source_index];
        let path = match aug.transform {
            Transform::Identity => src.path.clone(),
            t => format!("{}_{t}.png", src.path.trim_end_matches(".png")),
        };
        write_png(&a.out.join(&path), &aug.record.image)?;
        out.push(ManifestRecord { path, transform: aug.transform, ..src.clone() });
    }
    // the test split is copied untouched
    for r in test_recs {
        fs::copy(a.data.join(&r.path), a.out.join(&r.path)).with_context(|| format!("copying {}", r.path))?;
        out.push(r);
    }
    save_manifest(&a.out, &out)?;
    println!("wrote {} records to {}", out.len(), a.out.display());
    Ok(())
}

fn train_config(arch: &str, aug: u8, dropout: f64, h: &HyperArgs) -> Result<TrainConfig> {
    let arch: ArchId = arch.parse().map_err(|e: tsvmorph_core::arch::UnknownArch| CliError::Usage(e.to_string()))?;
    let config = TrainConfig {
        arch,
        epochs: h.epochs,
        aug_type: AugmentationType::new(aug).map_err(|e| CliError::Usage(e.to_string()))?,
        dropout,
        lr: h.lr,
        momentum: h.momentum,
        batch_size: h.batch_size,
        lr_halve_every: h.lr_halve_every,
        seed: h.seed,
        strict_determinism: h.strict,
        workers: workers(h.workers)?,
        checkpoint: None,
        stop_at_accuracy: h.stop_at_accuracy,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn workers(flag: Option<usize>) -> Result<usize> {
    let n = match flag {
        Some(0) => return usage("--workers must be at least 1"),
        Some(n) => n,
        None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    };
    // fails only if a pool already exists, which is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(n)
}

fn load_data(d: &DataArgs, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match &d.data {
        Some(dir) => {
            let records = read_manifest(dir.join(MANIFEST_FILE)).map_err(anyhow::Error::from)?;
            Ok(load_samples(&records, dir).map_err(anyhow::Error::from)?)
        }
        None => {
            log::info!("no --data given; using {} + {} synthetic vias", d.synthetic_train, d.synthetic_test);
            Ok(synthetic_split(d.synthetic_train, d.synthetic_test, &GenParams::default(), seed)
                .map_err(anyhow::Error::from)?)
        }
    }
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut config = train_config(&a.arch, a.aug, a.dropout, &a.hyper)?;
    let (train_set, test_set) = load_data(&a.data, config.seed)?;
    if test_set.is_empty() {
        return Err(anyhow::anyhow!("no test split; import with --test-fraction or generate with --test-vias").into());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    config.checkpoint = Some(a.out.join("best.ckpt"));
    let (_, history) = train(&config, &train_set, &test_set).map_err(anyhow::Error::from)?;
    write_json(&a.out.join("config.json"), &config)?;
    write_json(&a.out.join("history.json"), &history)?;
    let best = history.best().expect("training ran at least one epoch");
    println!("{}: max test accuracy {:.4} at epoch {}", config.arch, best.total_accuracy, best.epoch);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let (_, test_set) = load_data(&a.data, a.seed)?;
    let (mut model, _) = load_checkpoint::<f32>(&a.checkpoint).map_err(anyhow::Error::from)?;
    let metrics = evaluate(&mut model, &test_set).map_err(anyhow::Error::from)?;
    println!("{}", serde_json::to_string_pretty(&metrics).map_err(anyhow::Error::from)?);
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let archs = parse_archs(&a.archs).map_err(CliError::Usage)?;
    let augs = parse_int_list(&a.aug)
        .map_err(CliError::Usage)?
        .into_iter()
        .map(|t| AugmentationType::new(t).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let dropouts = parse_float_list(&a.dropout, a.dropout_step).map_err(CliError::Usage)?;
    let base = train_config("vgg", 0, 0.0, &a.hyper)?;
    let cells = sweep_cells(&archs, &augs, &dropouts).map_err(|e| CliError::Usage(e.to_string()))?;
    let (train_set, test_set) = load_data(&a.data, base.seed)?;
    log::info!("sweeping {} cells", cells.len());
    let runner = TrainingRunner { base, train: train_set, test: test_set };
    let report = run_sweep(&cells, &runner, a.parallel).map_err(anyhow::Error::from)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("sweep.json"), report.to_json()).context("writing sweep.json")?;
    fs::write(a.out.join("sweep.csv"), report.to_csv()).context("writing sweep.csv")?;
    print!("{}", report.summary());
    Ok(())
}

fn describe_cmd(a: DescribeArgs) -> Result<()> {
    let ids = match &a.arch {
        Some(s) => vec![s.parse::<ArchId>().map_err(|e| CliError::Usage(e.to_string()))?],
        None => ArchId::ALL.to_vec(),
    };
    let text: Vec<String> =
        ids.into_iter().map(|id| describe(id).map_err(anyhow::Error::from)).collect::<anyhow::Result<_>>()?;
    print!("{}", text.join("\n"));
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid --host {:?}", a.host)))?;
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(tsvmorph_server::serve(addr, a.data_dir)).map_err(anyhow::Error::from)?;
    Ok(())
}

fn parse_label(s: &str) -> Result<MorphologyLabel> {
    MorphologyLabel::ALL
        .into_iter()
        .find(|l| l.as_str() == s)
        .map_or_else(|| usage(format!("unknown label {s:?}; expected granular, edge_ring or edge_bulge")), Ok)
}

fn parse_pair<T: std::str::FromStr>(s: &str, sep: char, flag: &str) -> Result<(T, T)> {
    s.split_once(sep)
        .and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)))
        .map_or_else(|| usage(format!("{flag} expects two numbers separated by '{sep}', got {s:?}")), Ok)
}

fn file_stem(path: &Path) -> Result<String> {
    match path.file_stem().and_then(|s| s.to_str()) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => usage(format!("cannot derive a name from {}", path.display())),
    }
}

fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let is_wli = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("wli"));
    let img = if is_wli {
        render_grayscale(&parse_wli(&bytes).with_context(|| format!("parsing {}", path.display()))?)
    } else {
        decode_png(&bytes).with_context(|| format!("decoding {}", path.display()))?
    };
    Ok(img)
}

fn write_png(path: &PathBuf, img: &GrayImage) -> Result<()> {
    let png = encode_png(img).with_context(|| format!("encoding {}", path.display()))?;
    fs::write(path, png).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn save_manifest(dir: &Path, records: &[ManifestRecord]) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let mut w = BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_manifest(&mut w, records).map_err(anyhow::Error::from)?;
    w.flush().context("writing manifest")?;
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
