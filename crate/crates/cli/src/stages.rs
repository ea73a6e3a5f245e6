use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rare_core::codec::train_codec;
use rare_core::diffusion::{sft_finetune, train_diffusion};
use rare_core::layout::{gen_corpus, read_corpus, read_layouts_jsonl, render_svg, write_corpus, write_layouts_jsonl, ClassRegistry, Layout, Palette};
use rare_core::pipeline::{
    checkpoint_paths, eval_report, load_codec, load_diffusion, load_reward, require_codec, save_codec, save_diffusion, save_reward, train_reward_stage, Judge,
    Method, PipelineConfig, StageRecord,
};
use rare_core::revision::{read_sequences_jsonl, synth_logged_set, synth_revision_set, write_sequences_jsonl};
use rare_core::rewards::{RewardReport, RewardVariant};
use rare_core::rlhf::{run_rlhf, score_layouts};
use serde_json::{json, Value};

use crate::Command;

pub(crate) struct Ctx<'a> {
    pub root: &'a Path,
    pub cfg: &'a PipelineConfig,
    pub seed: u64,
    pub out: Option<&'a Path>,
}

impl Ctx<'_> {
    /// Relative paths live under the experiment root.
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.path(self.out.unwrap_or(Path::new(default)))
    }
}

/// Files a stage read and wrote, plus a one-line summary for the terminal.
pub struct Outcome {
    pub record: StageRecord,
    pub summary: String,
}

fn registry() -> ClassRegistry {
    ClassRegistry::default()
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn write_jsonl(path: &Path, rows: impl IntoIterator<Item = Value>) -> Result<()> {
    ensure_parent(path)?;
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

fn metrics_path(base: &Path) -> PathBuf {
    let (bin, _) = checkpoint_paths(base);
    bin.with_extension("metrics.jsonl")
}

fn loss_rows(losses: &[f64]) -> impl Iterator<Item = Value> + '_ {
    losses.iter().enumerate().map(|(step, loss)| json!({"step": step, "loss": loss}))
}

fn checkpoint_files(base: &Path) -> Vec<PathBuf> {
    let (bin, json) = checkpoint_paths(base);
    vec![bin, json]
}

/// The corpus JSONL and its prompt sidecar when present.
fn corpus_files(path: &Path) -> Vec<PathBuf> {
    let side = path.with_file_name("prompts.json");
    if side.exists() {
        vec![path.to_path_buf(), side]
    } else {
        vec![path.to_path_buf()]
    }
}

fn logged_default(revisions: &Path) -> PathBuf {
    revisions.with_extension("logged.jsonl")
}

pub(crate) fn dispatch(ctx: &Ctx, cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::GenCorpus { n } => gen(ctx, *n),
        Command::TrainCodec { corpus } => codec(ctx, &ctx.path(corpus)),
        Command::TrainDiffusion { corpus, codec } => diffusion(ctx, &ctx.path(corpus), &ctx.path(codec)),
        Command::SynthRevisions { corpus, logged_out } => synth(ctx, &ctx.path(corpus), logged_out.as_deref().map(|p| ctx.path(p))),
        Command::TrainReward { variant, revisions, logged, codec, corpus, unconditional } => {
            let revisions = ctx.path(revisions);
            let logged = logged.as_deref().map(|p| ctx.path(p)).unwrap_or_else(|| logged_default(&revisions));
            reward(ctx, RewardVariant::parse(variant)?, &revisions, &logged, &ctx.path(codec), &ctx.path(corpus), *unconditional)
        }
        Command::Rlhf { diffusion, codec, reward, iterations } => rlhf(ctx, &ctx.path(diffusion), &ctx.path(codec), &ctx.path(reward), *iterations),
        Command::Sft { diffusion, codec, revisions } => sft(ctx, &ctx.path(diffusion), &ctx.path(codec), &ctx.path(revisions)),
        Command::Eval { codec, reference, methods, rewards, n_samples } => {
            let named = |v: &[(String, PathBuf)]| v.iter().map(|(n, p)| (n.clone(), ctx.path(p))).collect::<Vec<_>>();
            eval(ctx, &ctx.path(codec), &ctx.path(reference), &named(methods), &named(rewards), *n_samples)
        }
        Command::Render { layouts, limit } => render(ctx, &ctx.path(layouts), *limit),
        Command::Score { reward, codec, layouts } => score(ctx, &ctx.path(reward), &ctx.path(codec), &ctx.path(layouts)),
        Command::Replay { .. } => unreachable!("replay is handled before dispatch"),
    }
}

fn gen(ctx: &Ctx, n: Option<usize>) -> Result<Outcome> {
    let mut cfg = ctx.cfg.corpus.clone();
    if let Some(n) = n {
        cfg.n_layouts = n;
    }
    let corpus = gen_corpus(&cfg, ctx.seed)?;
    let out = ctx.out_or("corpus.jsonl");
    ensure_parent(&out)?;
    write_corpus(&out, &corpus, &registry())?;
    Ok(Outcome {
        record: StageRecord { config: serde_json::to_value(&cfg)?, outputs: corpus_files(&out), ..Default::default() },
        summary: format!("{} layouts -> {}", corpus.layouts.len(), out.display()),
    })
}

fn codec(ctx: &Ctx, corpus_path: &Path) -> Result<Outcome> {
    let corpus = read_corpus(corpus_path, &registry())?;
    let (codec, report) = train_codec(&corpus.layouts, &ctx.cfg.codec, ctx.seed)?;
    let base = ctx.out_or("codec");
    let info = json!({
        "steps": ctx.cfg.codec.steps,
        "heldout_class_accuracy": report.heldout_class_accuracy,
        "heldout_iou": report.heldout_iou,
        "heldout_bbox_l1": report.heldout_bbox_l1,
        "heldout_elements": report.heldout_elements,
    });
    save_codec(&base, &codec, "train-codec", info)?;
    let metrics = metrics_path(&base);
    write_jsonl(&metrics, loss_rows(&report.losses))?;
    let mut outputs = checkpoint_files(&base);
    outputs.push(metrics.clone());
    Ok(Outcome {
        record: StageRecord {
            config: serde_json::to_value(&ctx.cfg.codec)?,
            inputs: corpus_files(corpus_path),
            outputs,
            metrics: vec![metrics],
            checkpoints: [("codec".to_string(), codec.content_hash())].into(),
            ..Default::default()
        },
        summary: format!("held-out class accuracy {:.4}, IoU {:.4}", report.heldout_class_accuracy, report.heldout_iou),
    })
}

fn diffusion(ctx: &Ctx, corpus_path: &Path, codec_path: &Path) -> Result<Outcome> {
    let corpus = read_corpus(corpus_path, &registry())?;
    let (codec, _) = load_codec(codec_path)?;
    let (model, report) = train_diffusion(&codec, &corpus, &ctx.cfg.diffusion, ctx.seed)?;
    let base = ctx.out_or("diffusion");
    let final_loss = report.losses.last().copied().unwrap_or(f64::NAN);
    save_diffusion(&base, &model, &codec.content_hash(), "train-diffusion", json!({"steps": report.losses.len(), "final_loss": final_loss}))?;
    let metrics = metrics_path(&base);
    write_jsonl(&metrics, loss_rows(&report.losses))?;
    let mut inputs = corpus_files(corpus_path);
    inputs.extend(checkpoint_files(codec_path));
    let mut outputs = checkpoint_files(&base);
    outputs.push(metrics.clone());
    Ok(Outcome {
        record: StageRecord {
            config: serde_json::to_value(&ctx.cfg.diffusion)?,
            inputs,
            outputs,
            metrics: vec![metrics],
            checkpoints: [("diffusion".to_string(), model.content_hash())].into(),
            ..Default::default()
        },
        summary: format!("{} steps, final loss {final_loss:.4}", report.losses.len()),
    })
}

fn synth(ctx: &Ctx, corpus_path: &Path, logged_out: Option<PathBuf>) -> Result<Outcome> {
    let corpus = read_corpus(corpus_path, &registry())?;
    let seqs = synth_revision_set(&corpus.layouts, &ctx.cfg.synth, ctx.seed)?;
    let logged = synth_logged_set(&corpus.layouts, &ctx.cfg.synth, ctx.seed)?;
    let out = ctx.out_or("revisions.jsonl");
    let logged_out = logged_out.unwrap_or_else(|| logged_default(&out));
    ensure_parent(&out)?;
    ensure_parent(&logged_out)?;
    write_sequences_jsonl(&out, &seqs, &registry())?;
    write_sequences_jsonl(&logged_out, &logged, &registry())?;
    Ok(Outcome {
        record: StageRecord {
            config: serde_json::to_value(&ctx.cfg.synth)?,
            inputs: corpus_files(corpus_path),
            outputs: vec![out.clone(), logged_out],
            ..Default::default()
        },
        summary: format!("{} synthetic and {} logged sequences -> {}", seqs.len(), logged.len(), out.display()),
    })
}

fn phase_rows(report: &RewardReport) -> Vec<Value> {
    report.phases.iter().flat_map(|p| p.losses.iter().enumerate().map(move |(step, loss)| json!({"phase": p.name, "step": step, "loss": loss}))).collect()
}

fn reward(
    ctx: &Ctx,
    variant: RewardVariant,
    revisions: &Path,
    logged_path: &Path,
    codec_path: &Path,
    corpus_path: &Path,
    unconditional: bool,
) -> Result<Outcome> {
    let (codec, _) = load_codec(codec_path)?;
    let prompts = read_corpus(corpus_path, &registry())?.prompt_ids();
    let synthetic = read_sequences_jsonl(revisions, &registry())?;
    let logged = read_sequences_jsonl(logged_path, &registry())?;
    let mut cfg = ctx.cfg.rewards.variant(variant).clone();
    cfg.arch.conditional = !unconditional;
    let stage = train_reward_stage(&codec, &prompts, &synthetic, &logged, &cfg, ctx.cfg.rewards.holdout_every, ctx.seed)?;
    let base = ctx.out_or(&format!("reward_{}", variant.name()));
    let phases: Vec<Value> =
        stage.report.phases.iter().map(|p| json!({"name": p.name, "steps": p.steps, "examples": p.examples, "final_loss": p.losses.last().copied()})).collect();
    save_reward(&base, &stage.model, &codec.content_hash(), "train-reward", json!({"eval": stage.eval, "phases": phases}))?;
    let metrics = metrics_path(&base);
    write_jsonl(&metrics, phase_rows(&stage.report))?;
    let mut inputs = vec![revisions.to_path_buf(), logged_path.to_path_buf()];
    inputs.extend(checkpoint_files(codec_path));
    inputs.extend(corpus_files(corpus_path));
    let mut outputs = checkpoint_files(&base);
    outputs.push(metrics.clone());
    let e = &stage.eval;
    let summary = match variant {
        RewardVariant::Preference => {
            format!("held-out accuracy {:.4} (early rejects {:.4})", e.pairwise_accuracy.unwrap_or(f64::NAN), e.early_accuracy.unwrap_or(f64::NAN))
        }
        _ => format!("held-out Spearman {:.4}, MSE {:.4}", e.spearman.unwrap_or(f64::NAN), e.mse.unwrap_or(f64::NAN)),
    };
    Ok(Outcome {
        record: StageRecord {
            config: json!({"reward": cfg, "holdout_every": ctx.cfg.rewards.holdout_every}),
            inputs,
            outputs,
            metrics: vec![metrics],
            checkpoints: [(format!("reward_{}", variant.name()), stage.model.content_hash())].into(),
            ..Default::default()
        },
        summary,
    })
}

fn rlhf(ctx: &Ctx, diffusion_path: &Path, codec_path: &Path, reward_path: &Path, iterations: Option<usize>) -> Result<Outcome> {
    let (codec, _) = load_codec(codec_path)?;
    let hash = codec.content_hash();
    let (policy, pmeta) = load_diffusion(diffusion_path)?;
    require_codec(&pmeta, &hash, "policy")?;
    let (reward, rmeta) = load_reward(reward_path)?;
    require_codec(&rmeta, &hash, "reward model")?;
    let mut cfg = ctx.cfg.rlhf.clone();
    if let Some(n) = iterations {
        cfg.iterations = n;
    }
    let (tuned, report) = run_rlhf(&policy, &codec, &reward, &cfg, ctx.seed)?;
    let base = ctx.out_or(&format!("rlhf_{}", reward.variant().name()));
    let info = json!({
        "reward_model": reward.content_hash(),
        "base_policy": policy.content_hash(),
        "base_reward": report.base_reward,
        "final_reward": report.final_reward,
        "base_diversity": report.base_diversity,
        "final_diversity": report.final_diversity,
    });
    save_diffusion(&base, &tuned, &hash, "rlhf", info)?;
    let metrics = metrics_path(&base);
    write_jsonl(
        &metrics,
        report
            .log
            .iter()
            .map(|l| json!({"iter": l.iter, "mean_reward": l.mean_reward, "clip_frac": l.clip_frac, "diversity": l.diversity, "mean_ratio": l.mean_ratio})),
    )?;
    let mut inputs = checkpoint_files(diffusion_path);
    inputs.extend(checkpoint_files(codec_path));
    inputs.extend(checkpoint_files(reward_path));
    let mut outputs = checkpoint_files(&base);
    outputs.push(metrics.clone());
    Ok(Outcome {
        record: StageRecord {
            config: serde_json::to_value(&cfg)?,
            inputs,
            outputs,
            metrics: vec![metrics],
            checkpoints: [("policy".to_string(), tuned.content_hash())].into(),
            ..Default::default()
        },
        summary: format!(
            "reward {:.4} -> {:.4}, diversity {:.4} -> {:.4}",
            report.base_reward, report.final_reward, report.base_diversity, report.final_diversity
        ),
    })
}

fn sft(ctx: &Ctx, diffusion_path: &Path, codec_path: &Path, revisions: &Path) -> Result<Outcome> {
    let (codec, _) = load_codec(codec_path)?;
    let (model, meta) = load_diffusion(diffusion_path)?;
    require_codec(&meta, &codec.content_hash(), "base model")?;
    let seqs = read_sequences_jsonl(revisions, &registry())?;
    let finals: Vec<Layout> = seqs.iter().map(|s| s.final_layout().clone()).collect();
    let (tuned, report) = sft_finetune(&model, &codec, &finals, &ctx.cfg.sft, ctx.seed)?;
    let base = ctx.out_or("sft");
    save_diffusion(&base, &tuned, &codec.content_hash(), "sft", json!({"finals": finals.len(), "final_loss": report.losses.last().copied()}))?;
    let metrics = metrics_path(&base);
    write_jsonl(&metrics, loss_rows(&report.losses))?;
    let mut inputs = checkpoint_files(diffusion_path);
    inputs.extend(checkpoint_files(codec_path));
    inputs.push(revisions.to_path_buf());
    let mut outputs = checkpoint_files(&base);
    outputs.push(metrics.clone());
    Ok(Outcome {
        record: StageRecord {
            config: serde_json::to_value(&ctx.cfg.sft)?,
            inputs,
            outputs,
            metrics: vec![metrics],
            checkpoints: [("sft".to_string(), tuned.content_hash())].into(),
            ..Default::default()
        },
        summary: format!("{} steps on {} final layouts", report.losses.len(), finals.len()),
    })
}

fn eval(
    ctx: &Ctx,
    codec_path: &Path,
    reference_path: &Path,
    methods: &[(String, PathBuf)],
    rewards: &[(String, PathBuf)],
    n_samples: Option<usize>,
) -> Result<Outcome> {
    let (codec, _) = load_codec(codec_path)?;
    let reference = read_layouts_jsonl(reference_path, &registry())?;
    let mut cfg = ctx.cfg.eval.clone();
    if let Some(n) = n_samples {
        cfg.n_samples = n;
    }
    let mut inputs = checkpoint_files(codec_path);
    inputs.push(reference_path.to_path_buf());
    let mut models = Vec::new();
    for (name, path) in methods {
        let (m, meta) = load_diffusion(path).with_context(|| format!("method `{name}`"))?;
        models.push((name.clone(), m, meta.codec_hash.unwrap_or_default()));
        inputs.extend(checkpoint_files(path));
    }
    let mut judges = Vec::new();
    for (name, path) in rewards {
        let (m, meta) = load_reward(path).with_context(|| format!("reward model `{name}`"))?;
        judges.push((name.clone(), m, meta.codec_hash.unwrap_or_default()));
        inputs.extend(checkpoint_files(path));
    }
    let method_refs: Vec<Method> = models.iter().map(|(n, m, h)| Method { name: n.clone(), model: m, codec_hash: h.clone() }).collect();
    let judge_refs: Vec<Judge> = judges.iter().map(|(n, m, h)| Judge { name: n.clone(), model: m, codec_hash: h.clone() }).collect();
    let (report, samples) = eval_report(&codec, &method_refs, &judge_refs, &reference, &cfg)?;
    let dir = ctx.out_or("eval");
    fs::create_dir_all(dir.join("samples")).with_context(|| format!("creating {}", dir.display()))?;
    let json_path = dir.join("report.json");
    let txt_path = dir.join("report.txt");
    fs::write(&json_path, serde_json::to_vec_pretty(&report)?)?;
    let table = report.to_table();
    fs::write(&txt_path, &table)?;
    let mut outputs = vec![json_path.clone(), txt_path];
    for (name, layouts) in &samples {
        let p = dir.join("samples").join(format!("{name}.jsonl"));
        write_layouts_jsonl(&p, layouts, &registry())?;
        outputs.push(p);
    }
    eprint!("{table}");
    Ok(Outcome {
        record: StageRecord { config: serde_json::to_value(&cfg)?, inputs, outputs, metrics: vec![json_path], ..Default::default() },
        summary: format!("{} methods against {} reference layouts -> {}", methods.len(), reference.len(), dir.display()),
    })
}

fn render(ctx: &Ctx, layouts_path: &Path, limit: Option<usize>) -> Result<Outcome> {
    let layouts = read_layouts_jsonl(layouts_path, &registry())?;
    let limit = limit.unwrap_or(ctx.cfg.render.limit);
    let dir = ctx.out_or("render");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let stem = layouts_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "layout".into());
    let palette = Palette::default();
    let mut outputs = Vec::new();
    for (i, l) in layouts.iter().take(limit).enumerate() {
        let p = dir.join(format!("{stem}_{i:03}.svg"));
        fs::write(&p, render_svg(l, &registry(), &palette)?).with_context(|| format!("writing {}", p.display()))?;
        outputs.push(p);
    }
    Ok(Outcome {
        record: StageRecord { config: json!({"limit": limit}), inputs: vec![layouts_path.to_path_buf()], outputs: outputs.clone(), ..Default::default() },
        summary: format!("{} SVG files -> {}", outputs.len(), dir.display()),
    })
}

fn score(ctx: &Ctx, reward_path: &Path, codec_path: &Path, layouts_path: &Path) -> Result<Outcome> {
    let (codec, _) = load_codec(codec_path)?;
    let (reward, meta) = load_reward(reward_path)?;
    require_codec(&meta, &codec.content_hash(), "reward model")?;
    let layouts = read_layouts_jsonl(layouts_path, &registry())?;
    let conds = layouts
        .iter()
        .map(|l| {
            reward.prompt_index(l.prompt_id.as_deref()).with_context(|| format!("reward model does not know prompt `{}`", l.prompt_id.as_deref().unwrap_or("")))
        })
        .collect::<Result<Vec<_>>>()?;
    let scores = score_layouts(&codec, &reward, &layouts, &conds)?;
    let out = ctx.out_or("scores.jsonl");
    write_jsonl(&out, scores.iter().enumerate().map(|(i, s)| json!({"index": i, "score": s})))?;
    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let mut inputs = checkpoint_files(reward_path);
    inputs.extend(checkpoint_files(codec_path));
    inputs.push(layouts_path.to_path_buf());
    Ok(Outcome {
        record: StageRecord {
            config: json!({"variant": reward.variant().name()}),
            inputs,
            outputs: vec![out.clone()],
            metrics: vec![out],
            ..Default::default()
        },
        summary: format!("{} layouts, mean {} score {mean:.4}", scores.len(), reward.variant().name()),
    })
}
