use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fewshot_tts::adapt::Method;
use fewshot_tts::pipeline::{grad_check_all, Experiment, ExperimentConfig, RunManifest};
use fewshot_tts::{Error, Result};

/// Environment variable that overrides the output directory of the config.
const OUT_ENV: &str = "FEWSHOT_TTS_OUT";

#[derive(Parser)]
#[command(name = "fewshot-tts", version, about = "Few-shot speaker adaptation experiments on a synthetic corpus")]
struct Cli {
    /// JSON experiment config; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Derive the corpus seed and every stage seed from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config and the environment.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus with WAVs, feature sidecars and a manifest.
    GenCorpus,
    /// Train the multi-speaker WaveNet.
    Train {
        /// Continue from the existing checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Train the speaker verifier on the verifier speaker pool.
    TrainVerifier,
    /// Jointly train the table-free WaveNet and the speaker encoder.
    TrainEncoder,
    /// Adapt to one held-out speaker. Without arguments, adapts every
    /// configured method, demo size and held-out speaker.
    Adapt {
        #[arg(long, value_parser = parse_method, requires_all = ["speaker", "demo_seconds"])]
        method: Option<Method>,
        #[arg(long, requires_all = ["method", "demo_seconds"])]
        speaker: Option<u32>,
        #[arg(long, requires_all = ["method", "speaker"])]
        demo_seconds: Option<f64>,
    },
    /// Synthesize speech. Without --voice, renders the evaluation set of
    /// every adapted voice.
    Synth {
        #[arg(long, requires = "utterance")]
        voice: Option<PathBuf>,
        /// Corpus utterance whose features condition the generation.
        #[arg(long, requires = "voice")]
        utterance: Option<String>,
        /// Number of samples; defaults to the conditioning utterance length.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long, default_value = "synth.wav")]
        output: PathBuf,
    },
    /// Score real and generated speech; writes the EER table and curves.
    Eval,
    /// Run the gradient oracle over every op and the full model NLL.
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        #[arg(long, default_value_t = 20)]
        probes: usize,
        /// Length of the utterance used for the full-model check.
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Every stage from corpus generation to evaluation.
    RunAll,
    /// Check every artifact in the run manifest against its checksum.
    Validate,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(dir) = std::env::var_os(OUT_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }
    if let Some(dir) = &cli.out {
        cfg.out_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    if let Command::GradCheck { eps, probes, samples } = cli.command {
        let lines = grad_check_all(&cfg.model, samples, eps, probes, cfg.seeds.train)?;
        let worst = lines.iter().map(|l| l.max_rel_error).fold(0.0, f64::max);
        for l in &lines {
            println!("{:<28} {:.3e}", l.name, l.max_rel_error);
        }
        println!("max relative error {worst:.3e}");
        return Ok(());
    }
    let exp = Experiment::new(cfg)?;
    match cli.command {
        Command::GenCorpus => {
            let m = exp.gen_corpus()?;
            println!("{} utterances written to {}", m.utterances.len(), exp.layout.corpus().display());
        }
        Command::Train { resume } => {
            let s = exp.train(resume)?;
            println!("trained to step {}, last nll {:.4}", s.step, s.trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::TrainVerifier => {
            let r = exp.train_verifier()?;
            println!("verifier held-out accuracy {:.3} on {} utterances", r.heldout_accuracy, r.heldout_utterances);
        }
        Command::TrainEncoder => {
            let t = exp.train_encoder()?;
            println!("encoder trained, last nll {:.4}", t.trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::Adapt {
            method: Some(method),
            speaker: Some(speaker),
            demo_seconds: Some(demo_seconds),
        } => {
            let v = exp.adapt(method, speaker, demo_seconds)?;
            println!(
                "{} speaker {speaker}: {} steps, demo nll {:.4} -> {}",
                method.label(),
                v.provenance.steps,
                v.provenance.demo_nll,
                exp.layout.voice(method, demo_seconds, speaker).display()
            );
        }
        Command::Adapt { .. } => println!("{} voices adapted", exp.adapt_all()?.len()),
        Command::Synth {
            voice,
            utterance,
            samples,
            temperature,
            sample_seed,
            output,
        } => match (voice, utterance) {
            (Some(v), Some(u)) => {
                let w = exp.synth_one(&v, &u, samples, temperature, sample_seed, &output)?;
                println!("{} samples written to {}", w.len(), output.display());
            }
            _ => println!("{} evaluation utterances synthesized", exp.synth_eval()?),
        },
        Command::Eval => {
            let s = exp.eval()?;
            print!("{}", s.table(&exp.config.eval.demo_seconds));
            if !s.missing.is_empty() {
                println!("missing cells: {}", s.missing.join(", "));
            }
        }
        Command::RunAll => {
            let s = exp.run_all()?;
            print!("{}", s.table(&exp.config.eval.demo_seconds));
        }
        Command::Validate => {
            RunManifest::open(&exp.layout, &exp.config)?.validate(&exp.layout)?;
            println!("all artifacts match their checksums");
        }
        Command::GradCheck { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
