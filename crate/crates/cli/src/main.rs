use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ntbc::bc_codec::{dds_read, dds_write};
use ntbc::feature_grid::GridConfig;
use ntbc::metrics::{QualityReport, TextureQuality};
use ntbc::model::{Approach, ModelMode, NtbcModel};
use ntbc::texture_io::{load_manifest, load_texture_auto, save_texture, Texture};
use ntbc::trainer::{evaluate, train, Material, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "ntbc", version, about = "Neural block texture compression")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode every texture of a material with the reference BC1/BC4
    /// encoder and report its quality.
    CompressRef {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the model(s) for a material.
    Train(TrainArgs),
    /// Run trained models and write one DDS file per texture.
    Infer {
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint file; repeat for the conservative pair.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a DDS file to PNG.
    Decode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR and SSIM of a test image (PNG, PFM or DDS) against a reference.
    Metrics {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quality and storage of trained models next to the reference encoder.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// CSV destination; the table always goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Conservative,
    Aggressive,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Ntbc,
    Naive,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Aggressive)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = VariantArg::Ntbc)]
    variant: VariantArg,
    #[arg(long, default_value_t = 20_000)]
    iterations: u64,
    #[arg(long, default_value_t = 1024)]
    batch_blocks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed work partition, so results do not depend on --threads.
    #[arg(long)]
    deterministic: bool,
    /// Finest texel-grid resolution; the block grid ends at half of it.
    /// Defaults to half the texture resolution.
    #[arg(long)]
    finest: Option<usize>,
    /// Texel-grid level count; the block grid gets one fewer.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    lr_grids: f64,
    #[arg(long, default_value_t = 0.005)]
    lr_mlps: f64,
    #[arg(long, default_value_t = ntbc::model::DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Update the two networks on alternating steps.
    #[arg(long)]
    alternate: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NTBC_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        ntbc::init_thread_pool(n)?;
    }
    match cli.command {
        Command::CompressRef { manifest, out } => compress_ref(&manifest, &out),
        Command::Train(args) => train_cmd(&args),
        Command::Infer {
            manifest,
            checkpoints,
            out,
        } => infer(&manifest, &checkpoints, &out),
        Command::Decode { input, out } => {
            let surface = dds_read(&input)?;
            save_texture(&surface.decode(), &out)?;
            log::info!("wrote {}", out.display());
            Ok(())
        }
        Command::Metrics { reference, test, out } => metrics(&reference, &test, out.as_deref()),
        Command::Report {
            manifest,
            checkpoints,
            out,
        } => report(&manifest, &checkpoints, out.as_deref()),
    }
}

fn load_material(manifest: &Path) -> Result<Material> {
    let m = load_manifest(manifest)?;
    Ok(Material::from_manifest(&m)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn compress_ref(manifest: &Path, out: &Path) -> Result<()> {
    let material = load_material(manifest)?;
    create_dir(out)?;
    let mut report = QualityReport::default();
    for ((name, tex), surface) in material
        .names()
        .iter()
        .zip(material.textures())
        .zip(material.references())
    {
        let path = out.join(format!("{name}.dds"));
        dds_write(surface, &path)?;
        report
            .textures
            .push(TextureQuality::measure(name, tex, &surface.decode())?);
    }
    report.reference_bc_bytes = Some(material.references().iter().map(|s| s.payload_len() as u64).sum());
    let csv = out.join(format!("{}_reference.csv", material.name()));
    write_file(&csv, &report.to_csv())?;
    print!("{}", report.to_table());
    log::info!("wrote {} DDS files and {}", material.names().len(), csv.display());
    Ok(())
}

fn grid_configs(args: &TrainArgs, material: &Material) -> Result<(GridConfig, GridConfig)> {
    if args.finest.is_none() && args.levels.is_none() {
        return Ok(material.scaled_grids()?);
    }
    let res = material.width().max(material.height()).next_power_of_two();
    let finest = args.finest.unwrap_or((res / 2).max(4));
    let texel = GridConfig::from_finest(finest, args.levels)?;
    let block = GridConfig::from_finest((finest / 2).max(2), args.levels.map(|l| l.saturating_sub(1).max(1)))?;
    Ok((block, texel))
}

fn checkpoint_name(material: &str, mode: &ModelMode) -> String {
    use ntbc::model::Layout;
    match mode.layout {
        Layout::Aggressive => format!("{material}.ntbc"),
        Layout::ConservativeRgb => format!("{material}_rgb.ntbc"),
        Layout::ConservativeSingle => format!("{material}_sc.ntbc"),
    }
}

fn train_cmd(args: &TrainArgs) -> Result<()> {
    let material = load_material(&args.manifest)?;
    let approach = match args.variant {
        VariantArg::Ntbc => Approach::Ntbc,
        VariantArg::Naive => Approach::Naive,
    };
    let aggressive = args.mode == ModeArg::Aggressive;
    let (block, texel) = grid_configs(args, &material)?;
    let base = TrainConfig {
        iterations: args.iterations,
        batch_blocks: args.batch_blocks,
        lr_grids: args.lr_grids,
        lr_mlps: args.lr_mlps,
        seed: args.seed,
        deterministic: args.deterministic,
        alternate: args.alternate,
        temperature: args.temperature,
        ..Default::default()
    };
    base.validate()?;
    let modes = ModelMode::for_material(approach, aggressive, material.n_rgb(), material.n_sc());
    if !aggressive {
        if material.n_rgb() == 0 {
            log::info!("no RGB textures: skipping the RGB model");
        }
        if material.n_sc() == 0 {
            log::info!("no single-channel textures: skipping the single-channel model");
        }
    }
    create_dir(&args.out)?;

    let mut echo = String::new();
    writeln!(echo, "material = {}", material.name())?;
    writeln!(echo, "manifest = {}", args.manifest.display())?;
    writeln!(echo, "mode = {:?}", args.mode)?;
    writeln!(echo, "variant = {:?}", args.variant)?;
    writeln!(echo, "iterations = {}", base.iterations)?;
    writeln!(echo, "qat_steps = {}", base.qat_steps())?;
    writeln!(echo, "batch_blocks = {}", base.batch_blocks)?;
    writeln!(echo, "lr_grids = {}", base.lr_grids)?;
    writeln!(echo, "lr_mlps = {}", base.lr_mlps)?;
    writeln!(echo, "temperature = {}", base.temperature)?;
    writeln!(echo, "seed = {}", base.seed)?;
    writeln!(echo, "deterministic = {}", base.deterministic)?;
    writeln!(echo, "alternate = {}", base.alternate)?;
    writeln!(echo, "texel_grid_finest = {}", texel.finest())?;
    writeln!(echo, "texel_grid_levels = {}", texel.levels)?;
    writeln!(echo, "block_grid_finest = {}", block.finest())?;
    writeln!(echo, "block_grid_levels = {}", block.levels)?;
    for mode in &modes {
        writeln!(echo, "model = {mode} -> {}", checkpoint_name(material.name(), mode))?;
    }
    write_file(&args.out.join(format!("{}_config.txt", material.name())), &echo)?;

    let mut models = Vec::new();
    for mode in modes {
        let file = checkpoint_name(material.name(), &mode);
        let stem = file.trim_end_matches(".ntbc");
        let config = TrainConfig {
            log_path: Some(args.out.join(format!("{stem}_log.csv"))),
            ..base.clone()
        };
        log::info!("training {mode}: {} + {} steps", config.iterations, config.qat_steps());
        let outcome = train(&material, mode, Some((block, texel)), &config)?;
        let path = args.out.join(&file);
        outcome.model.save_checkpoint(&path)?;
        log::info!("wrote {}", path.display());
        models.push(outcome.model);
    }
    let refs: Vec<&NtbcModel<f32>> = models.iter().collect();
    let report = evaluate(&refs, &material)?;
    print!("{}", report.to_table());
    Ok(())
}

fn load_models(checkpoints: &[PathBuf]) -> Result<Vec<NtbcModel<f32>>> {
    checkpoints
        .iter()
        .map(|p| NtbcModel::load_checkpoint(p).with_context(|| format!("cannot load checkpoint {}", p.display())))
        .collect()
}

fn infer(manifest: &Path, checkpoints: &[PathBuf], out: &Path) -> Result<()> {
    let m = load_manifest(manifest)?;
    let models = load_models(checkpoints)?;
    // Only the resolution is needed here; avoid encoding reference surfaces.
    let (w, h) = ntbc::texture_io::image_dimensions(&m.entries[0].path)?;
    let kinds: Vec<_> = m.entries.iter().map(|e| e.kind).collect();
    create_dir(out)?;
    let mut written = 0;
    for (model, path) in models.iter().zip(checkpoints) {
        let heads = model
            .mode
            .head_textures(&kinds)
            .with_context(|| format!("checkpoint {} does not fit {}", path.display(), manifest.display()))?;
        for (t, surface) in heads.into_iter().zip(model.infer_surfaces(w, h)?) {
            dds_write(&surface, &out.join(format!("{}.dds", m.entries[t].name)))?;
            written += 1;
        }
    }
    log::info!("wrote {written} DDS files to {}", out.display());
    Ok(())
}

fn load_any(path: &Path) -> Result<Texture> {
    let is_dds = path.extension().map(|e| e.eq_ignore_ascii_case("dds")).unwrap_or(false);
    if is_dds {
        Ok(dds_read(path)?.decode())
    } else {
        Ok(load_texture_auto(path)?)
    }
}

fn metrics(reference: &Path, test: &Path, out: Option<&Path>) -> Result<()> {
    let a = load_any(reference)?;
    let mut b = load_any(test)?;
    if a.kind() != b.kind() && b.channels() == 3 {
        b = b.to_single();
    }
    let name = reference
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let report = QualityReport {
        textures: vec![TextureQuality::measure(&name, &a, &b)?],
        ..Default::default()
    };
    match out {
        Some(p) => write_file(p, &report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn report(manifest: &Path, checkpoints: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let material = load_material(manifest)?;
    let models = load_models(checkpoints)?;
    let refs: Vec<&NtbcModel<f32>> = models.iter().collect();
    let mut report = evaluate(&refs, &material)?;
    report.model_bytes = Some(
        checkpoints
            .iter()
            .map(|p| fs::metadata(p).map(|m| m.len()))
            .sum::<std::io::Result<u64>>()?,
    );
    print!("{}", report.to_table());
    if let Some(p) = out {
        write_file(p, &report.to_csv())?;
    }
    Ok(())
}
