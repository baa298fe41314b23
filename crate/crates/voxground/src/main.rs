//! Command-line front end: scene generation, training, evaluation,
//! profiling, ablation and gradient checking.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voxground::autodiff::{checkpoint, AdamConfig, AdamMoments};
use voxground::error::{Error, Result};
use voxground::harness::{
    component_configs, evaluate, format_table, generate_dataset, profile, read_dataset,
    run_ablation, write_ablation_csv, write_dataset, write_profile_csv, write_prune_csv,
    SceneSpec,
};
use voxground::pipeline::{
    grad_check_full, init_params, train_step, AdditionMode, FusionMode, ModelConfig,
};
use voxground::text::Vocabulary;

#[derive(Parser)]
#[command(name = "voxground", version, about = "Text-guided sparse-voxel 3D grounding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, default_value_t = 2)]
    objects_min: usize,
    #[arg(long, default_value_t = 5)]
    objects_max: usize,
    #[arg(long, default_value_t = 2.4)]
    extent: f64,
    #[arg(long, default_value_t = 160)]
    points_per_object: usize,
    #[arg(long, default_value_t = 600)]
    floor_points: usize,
}

impl SceneArgs {
    fn spec(&self) -> SceneSpec {
        SceneSpec {
            objects_min: self.objects_min,
            objects_max: self.objects_max,
            extent: self.extent,
            points_per_object: self.points_per_object,
            floor_points: self.floor_points,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Model configuration file (key=value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Vocabulary file (one word per line); defaults to the built-in set.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<(ModelConfig, Vocabulary)> {
        let config = match &self.config {
            Some(p) => ModelConfig::load(p)?,
            None => ModelConfig::default(),
        };
        let vocab = match &self.vocab {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::builtin(),
        };
        Ok((config, vocab))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset of scene files.
    Scenegen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[command(flatten)]
        scene: SceneArgs,
    },
    /// Train on a dataset directory and save a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1500)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        /// Checkpoint output path.
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Profile the fusion modes over a dataset; writes CSV traces.
    Profile {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory for profile.csv and prune_traces.csv.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and compare the component-removal configurations.
    Ablate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 600)]
        steps: u64,
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        /// Optional CSV output path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Verify tape gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::NumericError(_) | Error::DeterminismError(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Scenegen { seed, out, count, scene } => {
            let samples = generate_dataset(seed, count, &scene.spec())?;
            write_dataset(&samples, &out)?;
            println!("wrote {count} scenes to {}", out.display());
            Ok(0)
        }
        Command::Train { dataset, steps, seed, lr, out, model } => {
            let (mut config, vocab) = model.load()?;
            if let Some(s) = seed {
                config.seed = s;
            }
            let data = read_dataset(&dataset)?;
            let mut store = init_params(&config, &vocab)?;
            let mut moments = AdamMoments::default();
            let adam = AdamConfig { lr, ..AdamConfig::default() };
            for t in 1..=steps {
                let sample = &data[(t as usize - 1) % data.len()];
                let report = train_step(
                    std::slice::from_ref(sample),
                    &mut store,
                    &mut moments,
                    &adam,
                    &config,
                    &vocab,
                    t,
                )?;
                if t == 1 || t % 50 == 0 || t == steps {
                    println!(
                        "step {t}: total {:.4} pruning {:.4} completion {:.4} class {:.4} bbox {:.4}",
                        report.total, report.pruning, report.completion, report.class, report.bbox
                    );
                }
            }
            checkpoint::save(&store, &out)?;
            println!("saved checkpoint to {}", out.display());
            Ok(0)
        }
        Command::Eval { dataset, checkpoint: ckpt, model } => {
            let (config, vocab) = model.load()?;
            let data = read_dataset(&dataset)?;
            let store = checkpoint::load(&ckpt)?;
            let report = evaluate(&data, &store, &config, &vocab)?;
            println!(
                "acc@0.25 {:.4}  acc@0.5 {:.4}  mean forward {:.2} ms  ({} scenes)",
                report.acc_at_25,
                report.acc_at_50,
                report.mean_forward_ms,
                report.ious.len()
            );
            Ok(0)
        }
        Command::Profile { dataset, out, checkpoint: ckpt, model } => {
            let (base, vocab) = model.load()?;
            let data = read_dataset(&dataset)?;
            let store = match ckpt {
                Some(p) => checkpoint::load(&p)?,
                None => init_params(&base, &vocab)?,
            };
            let configs = vec![
                (
                    "concat".to_string(),
                    ModelConfig {
                        fusion_mode: FusionMode::Concat,
                        addition_mode: AdditionMode::Full,
                        cba_levels: vec![],
                        ..base.clone()
                    },
                ),
                (
                    "attention".to_string(),
                    ModelConfig {
                        fusion_mode: FusionMode::Attention,
                        addition_mode: AdditionMode::Full,
                        cba_levels: vec![],
                        ..base.clone()
                    },
                ),
                ("tgp".to_string(), ModelConfig { fusion_mode: FusionMode::Tgp, ..base.clone() }),
                (
                    "simplified_tgp".to_string(),
                    ModelConfig { fusion_mode: FusionMode::SimplifiedTgp, ..base.clone() },
                ),
            ];
            let report = profile(&data, &store, &configs, &vocab)?;
            std::fs::create_dir_all(&out)?;
            write_profile_csv(&report, &out.join("profile.csv"))?;
            write_prune_csv(&report.prune_rows, &out.join("prune_traces.csv"))?;
            for (name, times) in &report.per_scene_ms {
                let mut sorted = times.clone();
                sorted.sort_by(f64::total_cmp);
                let flops: f64 =
                    report.per_scene_flops[name].iter().sum::<f64>() / times.len() as f64;
                println!(
                    "{name}: median {:.2} ms, mean voxel-attention flops {flops:.0}",
                    sorted[sorted.len() / 2]
                );
            }
            println!("wrote {}", out.join("profile.csv").display());
            Ok(0)
        }
        Command::Ablate { seed, steps, lr, out, scene, model } => {
            let (base, vocab) = model.load()?;
            let configs = component_configs(&base);
            let rows = run_ablation(&configs, seed, 16, 16, steps, lr, &scene.spec(), &vocab)?;
            print!("{}", format_table(&rows));
            if let Some(path) = out {
                write_ablation_csv(&rows, &path)?;
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Gradcheck { seed, model } => {
            let (mut config, vocab) = model.load()?;
            // original blocks and completion at both levels bind every group
            config.fusion_mode = FusionMode::Tgp;
            config.addition_mode = AdditionMode::Cba;
            config.cba_levels = vec![1, 2];
            config.seed = seed;
            let spec = SceneSpec {
                objects_min: 2,
                objects_max: 2,
                extent: 1.0,
                points_per_object: 48,
                floor_points: 96,
            };
            let sample = voxground::harness::generate_scene(seed, &spec)?;
            let report = grad_check_full(&sample, &config, &vocab, 1e-5, 16, seed)?;
            for t in &report.tensors {
                if t.max_rel_err > 1e-5 {
                    println!(
                        "{}: rel err {:.3e} (analytic {:.6e}, numeric {:.6e})",
                        t.name, t.max_rel_err, t.analytic, t.numeric
                    );
                }
            }
            println!(
                "max rel err {:.3e} in {} ({} tensors checked)",
                report.max_rel_err,
                if report.worst_tensor.is_empty() { "-" } else { &report.worst_tensor },
                report.tensors.len()
            );
            if report.passes(1e-4) {
                println!("gradcheck PASS");
                Ok(0)
            } else {
                println!("gradcheck FAIL");
                Err(Error::NumericError(format!(
                    "max relative error {:.3e} exceeds 1e-4",
                    report.max_rel_err
                )))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own usage text; usage problems exit 1
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
