use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tsit::checkpoint::Checkpoint;
use tsit::data::{one_hot, read_image, read_labels, write_image, ImageRecord};
use tsit::evaluation::{evaluate_run, SoftmaxClassifier};
use tsit::losses::ConvFeatureExtractor;
use tsit::selftest;
use tsit::tensor::fault::set_conv_grad_fault;
use tsit::train::{load_translator, translate, Artifacts, Metrics, RunConfig, RunManifest, TaskMode, Trainer, PRESETS};
use tsit::Error;

/// Two-stream image-to-image translation: train, translate, evaluate.
#[derive(Parser)]
#[command(name = "tsit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a translator; writes manifest.toml, metrics.tsv and checkpoints.
    Train(TrainArgs),
    /// Translate one content image under one style image.
    Infer(InferArgs),
    /// FID and IS of a generated image directory against a reference one.
    Eval(EvalArgs),
    /// Run the gradient-check, oracle and invariant suites.
    Selftest(SelftestArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run config or manifest (TOML with [net], [train], [data], [loss]).
    #[arg(long, conflicts_with = "preset", required_unless_present_any = ["preset", "resume"])]
    config: Option<PathBuf>,
    /// Built-in config by name.
    #[arg(long)]
    preset: Option<String>,
    /// `section.key=value` applied after loading; repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Replaces train.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Run directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Print a metrics line to stderr every this many steps (0: never).
    #[arg(long, default_value_t = 100)]
    log_every: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Content image, or a class-id mask for semantic-synthesis checkpoints.
    #[arg(long)]
    content: PathBuf,
    #[arg(long)]
    style: PathBuf,
    /// Output image (.png or .ppm).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    generated_dir: PathBuf,
    reference_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    extractor_seed: u64,
    /// Tensor file with `extractor.stage{i}.weight|bias` entries.
    #[arg(long)]
    extractor_weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    classifier_seed: u64,
    /// Procedural images the IS classifier is trained on.
    #[arg(long, default_value_t = 160)]
    classifier_samples: usize,
    /// Also write the report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    /// Negative control: corrupt conv2d weight gradients.
    #[arg(long, hide = true)]
    inject_conv_grad_fault: bool,
}

/// Exit status for a library error: 2 config, 3 data, 4 numeric.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Codec(_)
        | Error::Io { .. }
        | Error::Shape { .. }
        | Error::CorruptCheckpoint(_)
        | Error::CheckpointVersion { .. } => 3,
        Error::Numeric(_) | Error::NonFinite { .. } => 4,
        Error::NonScalarLoss(_) => 1,
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn load_config(args: &TrainArgs) -> tsit::Result<RunConfig> {
    let mut config = match (&args.config, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
            RunManifest::parse(&text)?.0
        }
        (None, Some(name)) => RunConfig::preset(name)?,
        (None, None) => {
            return Err(Error::Config(format!("give --config or --preset (one of {})", PRESETS.join(", "))))
        }
    };
    for o in &args.overrides {
        config.apply_override(o)?;
    }
    if let Some(seed) = args.seed {
        config.train.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: TrainArgs) -> tsit::Result<()> {
    let (mut trainer, resumed) = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let expected = if args.config.is_some() || args.preset.is_some() { Some(load_config(&args)?) } else { None };
            let mut tr = Trainer::from_checkpoint(&ckpt, expected.as_ref())?;
            if let Some(e) = expected {
                tr.config.train.steps = e.train.steps;
                tr.config.train.epochs = e.train.epochs;
                tr.config.train.checkpoint_every = e.train.checkpoint_every;
            }
            (tr, true)
        }
        None => (Trainer::new(load_config(&args)?)?, false),
    };
    let config = trainer.config.clone();
    let ds = config.data.load()?;
    let artifacts = Artifacts::default();
    let out = &args.out;
    let ckpt_dir = out.join(&artifacts.checkpoint_dir);
    fs::create_dir_all(&ckpt_dir).map_err(io_err(&ckpt_dir))?;
    let manifest = RunManifest { config: config.clone(), artifacts: artifacts.clone() };
    let manifest_path = out.join("manifest.toml");
    fs::write(&manifest_path, manifest.to_toml()).map_err(io_err(&manifest_path))?;

    let metrics_path = out.join(&artifacts.metrics);
    let file = if resumed {
        OpenOptions::new().create(true).append(true).open(&metrics_path)
    } else {
        File::create(&metrics_path)
    }
    .map_err(io_err(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    if !resumed {
        writeln!(metrics, "{}", Metrics::HEADER).map_err(io_err(&metrics_path))?;
    }

    let total = config.train.total_steps(ds.len());
    let every = config.train.checkpoint_every;
    let started = Instant::now();
    trainer.run(&ds, total, |tr, m| {
        writeln!(metrics, "{m}").and_then(|_| metrics.flush()).map_err(io_err(&metrics_path))?;
        if args.log_every > 0 && m.step % args.log_every == 0 {
            eprintln!("{m}");
        }
        if every > 0 && m.step % every == 0 && m.step < total {
            let p = ckpt_dir.join(format!("step_{:08}.tsit", m.step));
            tr.checkpoint().save(&p)?;
        }
        Ok(())
    })?;
    let final_path = out.join(&artifacts.final_checkpoint);
    trainer.checkpoint().save(&final_path)?;
    println!(
        "trained {} steps in {:.1} s; checkpoint {}",
        trainer.step,
        started.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(())
}

fn cmd_infer(args: InferArgs) -> tsit::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let (config, mut tr) = load_translator(&ckpt)?;
    let content = if config.train.task == TaskMode::SemanticSynthesis {
        one_hot(&read_labels(&args.content)?, config.net.content_channels)?
    } else {
        read_image(&args.content)?.pixels
    };
    let style = read_image(&args.style)?.pixels;
    let out = translate(&mut tr, &content, &style, args.noise_seed)?;
    write_image(&args.out, &ImageRecord::new(out, args.out.display().to_string())?)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> tsit::Result<()> {
    let fx = match &args.extractor_weights {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            ConvFeatureExtractor::from_named(&ckpt.tensor_map("extractor.")?, &format!("weights:{}", path.display()))?
        }
        None => ConvFeatureExtractor::seeded(args.extractor_seed)?,
    };
    let clf = SoftmaxClassifier::train_synthetic(&fx, args.classifier_samples, 32, args.classifier_seed)?;
    let report = evaluate_run(&args.generated_dir, &args.reference_dir, &fx, &clf)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = &args.report {
        fs::write(p, &text).map_err(io_err(p))?;
    }
    Ok(())
}

fn cmd_selftest(args: SelftestArgs) -> ExitCode {
    set_conv_grad_fault(args.inject_conv_grad_fault);
    let started = Instant::now();
    let mut ok = true;
    for suite in [selftest::gradient_suite, selftest::oracle_suite, selftest::invariant_suite] {
        let r = suite();
        print!("{r}");
        ok &= r.all_passed();
    }
    println!("selftest {} in {:.1} s", if ok { "passed" } else { "FAILED" }, started.elapsed().as_secs_f64());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Selftest(a) => return cmd_selftest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
