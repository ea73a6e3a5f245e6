//! `rare`: one subcommand per pipeline stage. Every stage appends an entry
//! to `<run dir>/manifest.jsonl`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rare_core::pipeline::{ManifestEntry, PipelineConfig, RunManifest};

mod stages;

pub use stages::Outcome;

/// Environment variable naming the experiment root.
pub const RUN_DIR_ENV: &str = "RARE_RUN_DIR";

#[derive(Debug, Parser)]
#[command(name = "rare", version, about = "Revision-aware reward models and RLHF for layout diffusion")]
pub struct Cli {
    /// Pipeline config (JSON); missing sections fall back to defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output file, checkpoint base or directory, depending on the stage.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural layout corpus (JSONL plus prompts.json).
    GenCorpus {
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train the per-element layout codec.
    TrainCodec {
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Train the text-conditioned latent denoiser.
    TrainDiffusion {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        codec: PathBuf,
    },
    /// Synthesize revision sequences from corpus layouts.
    SynthRevisions {
        #[arg(long)]
        corpus: PathBuf,
        /// Logged-style sequences; defaults to `<out stem>.logged.jsonl`.
        #[arg(long)]
        logged_out: Option<PathBuf>,
    },
    /// Pretrain on synthetic revisions, finetune on logged ones.
    TrainReward {
        #[arg(long, value_parser = ["chamfer", "keystroke", "preference"])]
        variant: String,
        #[arg(long)]
        revisions: PathBuf,
        #[arg(long)]
        logged: Option<PathBuf>,
        #[arg(long)]
        codec: PathBuf,
        /// Corpus whose prompt table the reward model is conditioned on.
        #[arg(long)]
        corpus: PathBuf,
        /// Ignore the text condition.
        #[arg(long)]
        unconditional: bool,
    },
    /// DDPO finetuning of a denoiser against a reward model.
    Rlhf {
        #[arg(long)]
        diffusion: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Supervised finetuning on the final layouts of revision sequences.
    Sft {
        #[arg(long)]
        diffusion: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        revisions: PathBuf,
    },
    /// Compare methods against a reference set; writes report.json/report.txt.
    Eval {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        /// `name=checkpoint`, repeatable.
        #[arg(long = "method", value_parser = parse_named, required = true)]
        methods: Vec<(String, PathBuf)>,
        /// `name=checkpoint`, repeatable.
        #[arg(long = "reward", value_parser = parse_named)]
        rewards: Vec<(String, PathBuf)>,
        #[arg(long)]
        n_samples: Option<usize>,
    },
    /// Render layouts from a JSONL file to SVG.
    Render {
        #[arg(long)]
        layouts: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Score layouts with a reward model.
    Score {
        #[arg(long)]
        reward: PathBuf,
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        layouts: PathBuf,
    },
    /// Re-execute a manifest entry and compare its outputs.
    Replay {
        #[arg(long)]
        entry: usize,
    },
}

fn parse_named(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected name=path, got `{s}`")),
    }
}

impl Command {
    pub fn stage(&self) -> &'static str {
        match self {
            Command::GenCorpus { .. } => "gen-corpus",
            Command::TrainCodec { .. } => "train-codec",
            Command::TrainDiffusion { .. } => "train-diffusion",
            Command::SynthRevisions { .. } => "synth-revisions",
            Command::TrainReward { .. } => "train-reward",
            Command::Rlhf { .. } => "rlhf",
            Command::Sft { .. } => "sft",
            Command::Eval { .. } => "eval",
            Command::Render { .. } => "render",
            Command::Score { .. } => "score",
            Command::Replay { .. } => "replay",
        }
    }
}

/// Experiment root from the environment, defaulting to the working directory.
pub fn run_dir() -> PathBuf {
    std::env::var_os(RUN_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."))
}

/// Entry point for the binary.
pub fn run(argv: Vec<String>) -> i32 {
    run_in(&run_dir(), argv)
}

/// Parses and executes `argv` with `root` as the experiment root. Returns the
/// process exit status: 0 on success, 2 on usage errors, 1 on failure.
pub fn run_in(root: &Path, argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(root, &cli, &argv) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

/// Runs a parsed command and records it in the manifest. `Replay` returns
/// the new entry of the re-executed stage.
pub fn execute(root: &Path, cli: &Cli, argv: &[String]) -> Result<Option<ManifestEntry>> {
    std::fs::create_dir_all(root).with_context(|| format!("creating run directory {}", root.display()))?;
    let manifest = RunManifest::new(root);
    if let Command::Replay { entry } = cli.command {
        return replay(root, entry).map(|(_, e)| Some(e));
    }
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    let stage = cli.command.stage();
    let start = Instant::now();
    let ctx = stages::Ctx { root, cfg: &cfg, seed: cli.seed, out: cli.out.as_deref() };
    let outcome = stages::dispatch(&ctx, &cli.command).with_context(|| format!("stage `{stage}` failed"))?;
    let mut rec = outcome.record;
    rec.stage = stage.into();
    rec.argv = manifest_argv(argv);
    rec.seed = cli.seed;
    rec.wall_clock_secs = start.elapsed().as_secs_f64();
    let entry = manifest.append(&rec).with_context(|| format!("recording stage `{stage}` in {}", manifest.path().display()))?;
    if let Some(k) = entry.cache_hit {
        eprintln!("{stage}: cache hit, outputs identical to manifest entry {k}");
    }
    eprintln!("{stage}: {} ({:.1}s)", outcome.summary, rec.wall_clock_secs);
    Ok(Some(entry))
}

/// `argv` with the config path made absolute so the entry replays from anywhere.
fn manifest_argv(argv: &[String]) -> Vec<String> {
    let abs = |p: &str| std::fs::canonicalize(p).map(|c| c.display().to_string()).unwrap_or_else(|_| p.to_string());
    let mut out = Vec::with_capacity(argv.len());
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            out.push(a.clone());
            if let Some(p) = it.next() {
                out.push(abs(p));
            }
        } else if let Some(p) = a.strip_prefix("--config=") {
            out.push(format!("--config={}", abs(p)));
        } else {
            out.push(a.clone());
        }
    }
    out
}

/// Re-executes manifest entry `index` and returns the original and new
/// entries; errors if any output hash differs.
pub fn replay(root: &Path, index: usize) -> Result<(ManifestEntry, ManifestEntry)> {
    let manifest = RunManifest::new(root);
    let entries = manifest.entries()?;
    let Some(old) = entries.get(index).cloned() else {
        bail!("manifest has {} entries, no entry {index}", entries.len());
    };
    let cli = Cli::try_parse_from(&old.argv).with_context(|| format!("entry {index} has an unparsable argv"))?;
    if matches!(cli.command, Command::Replay { .. }) {
        bail!("entry {index} is itself a replay");
    }
    let new = execute(root, &cli, &old.argv)?.expect("stage entries are recorded");
    let differing: Vec<&str> = old.outputs.iter().zip(&new.outputs).filter(|(a, b)| a != b).map(|(a, _)| a.path.as_str()).collect();
    if old.outputs.len() != new.outputs.len() || !differing.is_empty() {
        bail!("replay of entry {index} ({}) diverged: {}", old.stage, differing.join(", "));
    }
    eprintln!("replay: entry {index} ({}) reproduced {} outputs bit-for-bit", old.stage, new.outputs.len());
    Ok((old, new))
}

/// The full pipeline in stage order, as argv vectors (without the program
/// name): corpus and held-out finals, codec, denoiser, revisions, the three
/// reward models, one RLHF run per reward, SFT, evaluation and rendering.
pub fn pipeline_commands(config: &str, heldout_n: usize) -> Vec<Vec<String>> {
    let variants = ["chamfer", "keystroke", "preference"];
    let mut cmds: Vec<String> = vec![
        "gen-corpus --seed 0 --out corpus.jsonl".into(),
        format!("gen-corpus --seed 1 --n {heldout_n} --out heldout/finals.jsonl"),
        "train-codec --corpus corpus.jsonl --out codec".into(),
        "train-diffusion --corpus corpus.jsonl --codec codec --out diffusion".into(),
        "synth-revisions --corpus corpus.jsonl --out revisions.jsonl".into(),
    ];
    for v in variants {
        cmds.push(format!("train-reward --variant {v} --revisions revisions.jsonl --codec codec --corpus corpus.jsonl --out reward_{v}"));
    }
    for v in variants {
        cmds.push(format!("rlhf --diffusion diffusion --codec codec --reward reward_{v} --out rlhf_{v}"));
    }
    cmds.push("sft --diffusion diffusion --codec codec --revisions revisions.logged.jsonl --out sft".into());
    let mut eval = String::from("eval --codec codec --reference heldout/finals.jsonl --method base=diffusion --method sft=sft");
    for v in variants {
        eval.push_str(&format!(" --method rlhf_{v}=rlhf_{v}"));
    }
    for v in variants {
        eval.push_str(&format!(" --reward {v}=reward_{v}"));
    }
    cmds.push(eval + " --out eval");
    cmds.push("render --layouts eval/samples/rlhf_chamfer.jsonl --out render".into());
    cmds.into_iter()
        .map(|c| {
            let mut argv = vec!["--config".to_string(), config.to_string()];
            argv.extend(c.split_whitespace().map(String::from));
            argv
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_paths_parse() {
        assert_eq!(parse_named("base=runs/diffusion").unwrap(), ("base".into(), PathBuf::from("runs/diffusion")));
        assert!(parse_named("noequals").is_err());
        assert!(parse_named("=x").is_err());
    }

    #[test]
    fn config_path_is_made_absolute() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, "{}").unwrap();
        let argv: Vec<String> = ["rare", "--config", cfg.to_str().unwrap(), "gen-corpus"].iter().map(|s| s.to_string()).collect();
        let out = manifest_argv(&argv);
        assert!(Path::new(&out[2]).is_absolute());
        assert_eq!(out[3], "gen-corpus");
    }
}
