use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use glade_core::dataset::{
    image_to_rgb8, load_checkpoint, load_dataset, save_checkpoint, train_test_split, write_dataset,
    Dataset,
};
use glade_core::scenegen::SceneSpec;
use glade_core::train::{evaluate, render_blend, render_view, Model, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "glade", version, about = "Gaussian-splat scenes with per-image appearance")]
struct Cli {
    /// Worker thread count. Accepted for interface compatibility; this
    /// build always runs single-threaded.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-appearance scene
    Gen {
        /// Scene description (json); defaults are used when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated scene
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key=value training configuration; defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view under the appearance of a reference view
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long = "ref")]
        reference: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view under a blend of two reference appearances
    Transfer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        view: usize,
        #[arg(long)]
        ref_a: usize,
        #[arg(long)]
        ref_b: usize,
        /// Blend weight in [0,1]; 0 reproduces --ref-a exactly
        #[arg(long, value_parser = parse_alpha)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate held-out metrics and write a report
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Which views to score: "test" or "train"
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: PathBuf,
    },
}

fn parse_alpha(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("alpha must be in [0,1], got {v}"))
    }
}

fn main() -> ExitCode {
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
            ExitCode::from(2)
        }
    }
}

fn load_model(ckpt: &Path) -> Result<Model> {
    let store = load_checkpoint(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    Model::from_store(store).context("rebuilding model from checkpoint")
}

fn check_view(data: &Dataset, what: &str, v: usize) -> Result<()> {
    if v >= data.spec.views {
        bail!("{what} {v} out of range: scene has {} views", data.spec.views);
    }
    Ok(())
}

fn write_render(out: &Path, color: &[f64], w: usize, h: usize) -> Result<()> {
    let bytes = image_to_rgb8(color, w, h);
    image::save_buffer(out, &bytes, w as u32, h as u32, image::ColorType::Rgb8)
        .with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str::<SceneSpec>(&text)
                        .with_context(|| format!("parsing {}", p.display()))?
                }
                None => SceneSpec::default(),
            };
            write_dataset(&spec, &out)?;
            println!("wrote {} views to {}", spec.views, out.display());
        }
        Command::Train { data, config, out } => {
            let dataset = load_dataset(&data)?;
            let config = match config {
                Some(p) => TrainConfig::load(&p)?,
                None => TrainConfig::default(),
            };
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut log = fs::File::create(out.join("metrics.tsv"))
                .with_context(|| format!("creating {}", out.join("metrics.tsv").display()))?;
            let mut trainer = Trainer::new(config, dataset);
            trainer.run(&mut log)?;
            let ckpt = out.join("checkpoint.bin");
            save_checkpoint(&ckpt, &trainer.model.store)?;
            if trainer.faults > 0 {
                eprintln!("note: {} iterations rolled back on numeric faults", trainer.faults);
            }
            println!(
                "trained {} iterations, {} gaussians, checkpoint at {}",
                trainer.model.iters_done(),
                trainer.model.n_gaussians(),
                ckpt.display()
            );
        }
        Command::Render { ckpt, data, view, reference, out } => {
            let dataset = load_dataset(&data)?;
            let model = load_model(&ckpt)?;
            check_view(&dataset, "view", view)?;
            check_view(&dataset, "reference", reference)?;
            let r = render_view(&model, &dataset, view, reference);
            write_render(&out, &r.color, r.width, r.height)?;
            println!("wrote {}", out.display());
        }
        Command::Transfer { ckpt, data, view, ref_a, ref_b, alpha, out } => {
            let dataset = load_dataset(&data)?;
            let model = load_model(&ckpt)?;
            check_view(&dataset, "view", view)?;
            check_view(&dataset, "ref-a", ref_a)?;
            check_view(&dataset, "ref-b", ref_b)?;
            let r = render_blend(&model, &dataset, view, ref_a, ref_b, alpha);
            write_render(&out, &r.color, r.width, r.height)?;
            println!("wrote {}", out.display());
        }
        Command::Eval { ckpt, data, split, report } => {
            let dataset = load_dataset(&data)?;
            let model = load_model(&ckpt)?;
            let (train_views, test_views) = train_test_split(dataset.spec.views);
            let views = match split.as_str() {
                "test" => test_views.clone(),
                "train" => train_views.clone(),
                other => bail!("unknown split {other:?}: expected \"test\" or \"train\""),
            };
            let rep = evaluate(&model, &dataset, &views, &train_views);
            fs::write(&report, rep.to_text())
                .with_context(|| format!("writing {}", report.display()))?;
            println!("mean psnr {} over {} views", rep.mean_psnr, rep.rows.len());
        }
    }
    Ok(())
}
