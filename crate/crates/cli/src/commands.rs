use crate::config::{parse_assignment, parse_config, RunConfig, TransformKind};
use crate::error::CliError;
use crate::plots::{line_chart, plot_training_log};
use crate::VERSION;
use clap::{Parser, Subcommand, ValueEnum};
use ogstyle::corpus::{
    load_corpus, BpeModel, Provenance, Style, StyledCorpus, TokenSeq, Tokenizer, Vocabulary,
};
use ogstyle::evalsuite::{
    accuracy_full, accuracy_half, build_report, content_f1, count_identical, lexical_density, og_like, perplexity,
    train_classifier, ttr, validate_report_json, FunctionWords, MetricSet, StyleClassifier,
};
use ogstyle::net::{greedy_decode, init_lm, init_model, LmParams, ModelParams};
use ogstyle::spe::{precision, write_pairs_tsv};
use ogstyle::synth::{gen_mtr, gen_synthetic, GrammarSize, OracleAlignment, StyleTransform};
use ogstyle::trainer::{
    decode_cap, finetune_lm, mine_pairs, pretrain_dae, train_joint, train_lm, train_selfsup, JsonLog, TrainOutcome,
};
use serde_json::{json, Value};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "ogstyle", version = VERSION, about = "Translationese-to-original style transfer without parallel data")]
pub struct Cli {
    /// JSON config with flat dotted keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one setting, e.g. `--set loss.tau=0.2`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output root (same as `--set out_dir=...`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (same as `--set seed=...`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Selfsup,
    Joint,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Selfsup => "selfsup",
            Mode::Joint => "joint",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic OG/TR corpora, mTR and test sets.
    Synth,
    /// Learn the tokenizer and pretrain the encoder-decoder as a denoiser.
    PretrainDae,
    /// Train (or fine-tune) the OG language model.
    TrainLm {
        #[arg(long)]
        finetune: bool,
    },
    /// Mine pseudo-parallel pairs with a trained model.
    MinePairs {
        /// `dae`, `selfsup`, `joint` or a checkpoint path.
        #[arg(long, default_value = "dae")]
        model: String,
    },
    /// Run the self-supervised baseline or joint training.
    Train {
        #[arg(value_enum)]
        mode: Mode,
    },
    /// Rewrite TR sentences, one output line per input line.
    Transfer {
        #[arg(long, default_value = "joint")]
        model: String,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score transferred outputs for one setup.
    Evaluate {
        #[arg(long)]
        setup: String,
        /// Defaults to the transfer output named after the setup.
        #[arg(long)]
        outputs: Option<PathBuf>,
        /// Source sentences the outputs were produced from.
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Collect evaluated setups into report.json and report.tsv.
    Report,
    /// Print the resolved configuration as flat dotted keys.
    ShowConfig,
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Synth => "synth".into(),
            Command::PretrainDae => "pretrain-dae".into(),
            Command::TrainLm { finetune } => if *finetune { "finetune-lm" } else { "train-lm" }.into(),
            Command::MinePairs { .. } => "mine-pairs".into(),
            Command::Train { mode } => format!("train-{}", mode.name()),
            Command::Transfer { model, .. } => format!("transfer-{}", file_safe(&model_stem(model))),
            Command::Evaluate { setup, .. } => format!("evaluate-{}", file_safe(setup)),
            Command::Report => "report".into(),
            Command::ShowConfig => "show-config".into(),
        }
    }
}

fn model_stem(model: &str) -> String {
    Path::new(model).file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string()
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Artifact layout under the output root.
struct Ctx {
    cfg: RunConfig,
    root: PathBuf,
}

fn or_default(configured: &str, fallback: PathBuf) -> PathBuf {
    if configured.is_empty() {
        fallback
    } else {
        PathBuf::from(configured)
    }
}

fn require(path: &Path, hint: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(format!("{} not found; {hint}", path.display())))
    }
}

fn read_lines(path: &Path, hint: &str) -> Result<Vec<String>, CliError> {
    require(path, hint)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

fn write_lines(path: &Path, lines: &[String]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut body = lines.join("\n");
    if !lines.is_empty() {
        body.push('\n');
    }
    fs::write(path, body)?;
    Ok(())
}

impl Ctx {
    fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    fn og(&self) -> PathBuf {
        or_default(&self.cfg.corpus.og, self.data("og.txt"))
    }
    fn tr(&self) -> PathBuf {
        or_default(&self.cfg.corpus.tr, self.data("tr.txt"))
    }
    fn mtr(&self) -> PathBuf {
        or_default(&self.cfg.corpus.mtr, self.data("mtr.txt"))
    }
    fn og_test(&self) -> PathBuf {
        or_default(&self.cfg.corpus.og_test, self.data("og.test.txt"))
    }
    fn tr_test(&self) -> PathBuf {
        or_default(&self.cfg.corpus.tr_test, self.data("tr.test.txt"))
    }
    fn dae_ckpt(&self) -> PathBuf {
        self.root.join("dae").join("model.ckpt")
    }
    fn lm_ckpt(&self) -> PathBuf {
        self.root.join("lm").join("lm.ckpt")
    }
    fn train_dir(&self, mode: Mode) -> PathBuf {
        self.root.join(format!("train-{}", mode.name()))
    }

    fn corpus(&self, path: &Path, style: Style) -> Result<StyledCorpus, CliError> {
        require(path, "run `ogstyle synth` or set the corpus path")?;
        Ok(load_corpus(path, style)?)
    }

    fn tokenizer(&self) -> Result<Tokenizer, CliError> {
        let dir = self.root.join("tokenizer");
        let hint = "run `ogstyle pretrain-dae` first";
        require(&dir.join("vocab.txt"), hint)?;
        require(&dir.join("bpe.txt"), hint)?;
        Ok(Tokenizer::new(
            Vocabulary::load(&dir.join("vocab.txt"))?,
            BpeModel::load(&dir.join("bpe.txt"))?,
        ))
    }

    fn model_path(&self, name: &str) -> (PathBuf, String) {
        match name {
            "dae" => (self.dae_ckpt(), "run `ogstyle pretrain-dae` first".into()),
            "selfsup" => (self.train_dir(Mode::Selfsup).join("best.ckpt"), "run `ogstyle train selfsup` first".into()),
            "joint" => (self.train_dir(Mode::Joint).join("best.ckpt"), "run `ogstyle train joint` first".into()),
            other => (PathBuf::from(other), "pass an existing checkpoint path".into()),
        }
    }

    fn model(&self, name: &str, tok: &Tokenizer) -> Result<ModelParams, CliError> {
        let (path, hint) = self.model_path(name);
        require(&path, &hint)?;
        Ok(ModelParams::load(&path, &tok.vocab.hash())?)
    }

    fn lm(&self, tok: &Tokenizer) -> Result<LmParams, CliError> {
        let path = self.lm_ckpt();
        require(&path, "run `ogstyle train-lm` first")?;
        Ok(LmParams::load(&path, &tok.vocab.hash())?)
    }

    fn manifest(&self, command: &str, argv: &[String], extra: Value) -> Result<(), CliError> {
        let dir = self.root.join("manifests");
        fs::create_dir_all(&dir)?;
        let m = json!({
            "command": command,
            "argv": argv,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "version": VERSION,
            "config": self.cfg,
            "result": extra,
        });
        fs::write(dir.join(format!("{command}.json")), serde_json::to_vec_pretty(&m)?)?;
        Ok(())
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut sets = Vec::new();
    for s in &cli.sets {
        sets.push(parse_assignment(s)?);
    }
    if let Some(out) = &cli.out {
        sets.push(("out_dir".into(), Value::String(out.display().to_string())));
    }
    if let Some(seed) = cli.seed {
        sets.push(("seed".into(), json!(seed)));
    }
    Ok(parse_config(cli.config.as_deref(), &sets)?)
}

/// Runs one command to completion.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(&cli)?;
    let root = cfg.out_root();
    let ctx = Ctx { cfg, root };
    let name = cli.command.name();
    let argv: Vec<String> = std::env::args().collect();
    let result = match &cli.command {
        Command::ShowConfig => {
            for (k, v) in ctx.cfg.to_flat() {
                println!("{k} = {v}");
            }
            return Ok(());
        }
        Command::Synth => synth(&ctx)?,
        Command::PretrainDae => pretrain(&ctx)?,
        Command::TrainLm { finetune } => lm(&ctx, *finetune)?,
        Command::MinePairs { model } => mine(&ctx, model)?,
        Command::Train { mode } => train(&ctx, *mode)?,
        Command::Transfer { model, input, output } => transfer(&ctx, model, input.as_deref(), output.as_deref())?,
        Command::Evaluate { setup, outputs, inputs } => evaluate(&ctx, setup, outputs.as_deref(), inputs.as_deref())?,
        Command::Report => report(&ctx)?,
    };
    ctx.manifest(&name, &argv, result)
}

fn transform(cfg: &RunConfig, seed: u64) -> StyleTransform {
    match cfg.synth.transform {
        TransformKind::Marker => StyleTransform {
            filler_prob: cfg.synth.filler_prob,
            ..StyleTransform::marker(seed)
        },
        TransformKind::Identity => StyleTransform::identity(seed),
    }
}

fn synth(ctx: &Ctx) -> Result<Value, CliError> {
    let s = &ctx.cfg.synth;
    let t = transform(&ctx.cfg, ctx.cfg.seed);
    let grammar = GrammarSize::default();
    let (og, tr, align) = gen_synthetic(&grammar, s.n_og, s.n_tr, &t)?;
    let test_t = transform(&ctx.cfg, ctx.cfg.seeded(0x7465_7374));
    let (og_test, tr_test, _) = gen_synthetic(&grammar, s.test_size, s.test_size, &test_t)?;
    let mtr = gen_mtr(&og, &t, s.mtr_noise)?;
    fs::create_dir_all(ctx.root.join("data"))?;
    og.save(&ctx.data("og.txt"))?;
    tr.save(&ctx.data("tr.txt"))?;
    mtr.save(&ctx.data("mtr.txt"))?;
    og_test.save(&ctx.data("og.test.txt"))?;
    tr_test.save(&ctx.data("tr.test.txt"))?;
    align.save(&ctx.data("alignment.txt"))?;
    log::info!("synth: {} OG, {} TR, {} mTR, {}+{} test", og.len(), tr.len(), mtr.len(), og_test.len(), tr_test.len());
    Ok(json!({"og": og.len(), "tr": tr.len(), "mtr": mtr.len(), "og_test": og_test.len(), "tr_test": tr_test.len()}))
}

fn write_curve(dir: &Path, name: &str, curve: &[f64]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join(format!("{name}.jsonl")))?);
    for (i, l) in curve.iter().enumerate() {
        writeln!(f, "{}", json!({"step": i + 1, "loss": l}))?;
    }
    f.flush()?;
    let pts: Vec<(f64, f64)> = curve.iter().enumerate().map(|(i, l)| ((i + 1) as f64, *l)).collect();
    line_chart(&dir.join(format!("{name}.svg")), name, "update", &[("loss", pts)]).map_err(CliError::Internal)?;
    Ok(())
}

fn pretrain(ctx: &Ctx) -> Result<Value, CliError> {
    let og = ctx.corpus(&ctx.og(), Style::Og)?;
    let tr = ctx.corpus(&ctx.tr(), Style::Tr)?;
    let tok = Tokenizer::train(&[&og, &tr], ctx.cfg.corpus.bpe_merges)?;
    let tdir = ctx.root.join("tokenizer");
    fs::create_dir_all(&tdir)?;
    tok.vocab.save(&tdir.join("vocab.txt"))?;
    tok.bpe.save(&tdir.join("bpe.txt"))?;
    let mut params = init_model(&ctx.cfg.model_config(tok.vocab_size()))?;
    let seqs: Vec<TokenSeq> = og.encode_all(&tok).into_iter().chain(tr.encode_all(&tok)).collect();
    let curve = pretrain_dae(&mut params, &seqs, &ctx.cfg.dae_config())?;
    let dir = ctx.root.join("dae");
    fs::create_dir_all(&dir)?;
    params.save(&ctx.dae_ckpt(), &tok.vocab.hash())?;
    write_curve(&dir, "loss", &curve)?;
    log::info!("pretrain-dae: vocabulary {}, {} updates", tok.vocab_size(), curve.len());
    Ok(json!({"vocab_size": tok.vocab_size(), "vocab_hash": tok.vocab.hash(), "final_loss": curve.last()}))
}

fn lm(ctx: &Ctx, finetune: bool) -> Result<Value, CliError> {
    let tok = ctx.tokenizer()?;
    let og = ctx.corpus(&ctx.og(), Style::Og)?;
    let cfg = ctx.cfg.lm_config();
    let (lm, curve) = if finetune {
        let mut lm = ctx.lm(&tok)?;
        let c = finetune_lm(&mut lm, &og, &tok, &cfg)?;
        (lm, c)
    } else {
        let mut lm = init_lm(&ctx.cfg.model_config(tok.vocab_size()))?;
        let c = train_lm(&mut lm, &og, &tok, &cfg)?;
        (lm, c)
    };
    let dir = ctx.root.join("lm");
    fs::create_dir_all(&dir)?;
    lm.save(&ctx.lm_ckpt(), &tok.vocab.hash())?;
    write_curve(&dir, if finetune { "finetune_loss" } else { "loss" }, &curve)?;
    Ok(json!({"updates": curve.len(), "final_loss": curve.last()}))
}

fn mine(ctx: &Ctx, model: &str) -> Result<Value, CliError> {
    let tok = ctx.tokenizer()?;
    let params = ctx.model(model, &tok)?;
    let og = ctx.corpus(&ctx.og(), Style::Og)?;
    let tr = ctx.corpus(&ctx.tr(), Style::Tr)?;
    let og_ids = og.encode_all(&tok);
    let tr_ids = tr.encode_all(&tok);
    let pairs = mine_pairs(&params, &og_ids, &tr_ids, &ctx.cfg.spe_config(), ctx.cfg.train.mine_batch)?;
    let dir = ctx.root.join("pairs");
    fs::create_dir_all(&dir)?;
    let mut f = fs::File::create(dir.join("pairs.tsv"))?;
    write_pairs_tsv(&mut f, 0, &pairs)?;
    let text: Vec<String> = pairs
        .iter()
        .map(|p| format!("{}\t{}", tr.sentences[p.tr], og.sentences[p.og]))
        .collect();
    write_lines(&dir.join("pairs.txt"), &text)?;
    let mut result = json!({"accepted": pairs.len(), "tr": tr.len()});
    let align = ctx.data("alignment.txt");
    if ctx.cfg.corpus.og.is_empty() && ctx.cfg.corpus.tr.is_empty() && align.exists() {
        let truth = OracleAlignment::load(&align)?;
        let p = precision(&pairs, &truth.tr_to_og);
        log::info!("mine-pairs: precision against the planted alignment {p:.4}");
        result["precision"] = json!(p);
    }
    log::info!("mine-pairs: accepted {} of {} TR sentences", pairs.len(), tr.len());
    Ok(result)
}

fn finish_training(ctx: &Ctx, mode: Mode, out: &TrainOutcome, log: &JsonLog, hash: &str) -> Result<Value, CliError> {
    let dir = ctx.train_dir(mode);
    out.best.save(&dir.join("best.ckpt"), hash)?;
    plot_training_log(&log.records, &dir.join("plots")).map_err(CliError::Internal)?;
    log::info!(
        "train {}: {} updates, best score {:.4} at update {}{}",
        mode.name(),
        out.steps,
        out.best_score,
        out.best_step,
        if out.stopped_early { " (stopped by patience)" } else { "" }
    );
    Ok(json!({
        "steps": out.steps,
        "best_step": out.best_step,
        "best_score": out.best_score,
        "stopped_early": out.stopped_early,
        "pair_counts": out.pair_counts,
    }))
}

fn train(ctx: &Ctx, mode: Mode) -> Result<Value, CliError> {
    let tok = ctx.tokenizer()?;
    let hash = tok.vocab.hash();
    let dae = ctx.model("dae", &tok)?;
    let og = ctx.corpus(&ctx.og(), Style::Og)?;
    let tr = ctx.corpus(&ctx.tr(), Style::Tr)?;
    let og_ids = og.encode_all(&tok);
    let tr_ids = tr.encode_all(&tok);
    let cfg = ctx.cfg.train_config();
    let mut params = dae.clone();
    let mut log = JsonLog::to_dir(ctx.train_dir(mode), &hash)?;
    let out = match mode {
        Mode::Selfsup => {
            let hint = "run `ogstyle synth` or set corpus.mtr (aligned with corpus.og)";
            let mtr = read_lines(&ctx.mtr(), hint)?;
            let og_lines = read_lines(&ctx.og(), hint)?;
            let val: Vec<(TokenSeq, TokenSeq)> = mtr
                .iter()
                .zip(&og_lines)
                .filter(|(a, b)| !a.trim().is_empty() && !b.trim().is_empty())
                .take(cfg.val_batch)
                .map(|(a, b)| (tok.encode(a), tok.encode(b)))
                .collect();
            train_selfsup(&mut params, &og_ids, &tr_ids, &val, &cfg, &mut log)?
        }
        Mode::Joint => {
            let lm = ctx.lm(&tok)?;
            let val: Vec<TokenSeq> = tr_ids.iter().take(cfg.val_batch).cloned().collect();
            train_joint(&mut params, &lm, &dae, &og_ids, &tr_ids, &val, &cfg, &mut log)?
        }
    };
    finish_training(ctx, mode, &out, &log, &hash)
}

fn transfer(ctx: &Ctx, model: &str, input: Option<&Path>, output: Option<&Path>) -> Result<Value, CliError> {
    let tok = ctx.tokenizer()?;
    let params = ctx.model(model, &tok)?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| ctx.tr_test());
    let lines = read_lines(&input, "run `ogstyle synth` or pass --input")?;
    let stem = model_stem(model);
    let output = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.root.join("transfer").join(format!("{}.txt", file_safe(&stem))));
    let mut outs = Vec::with_capacity(lines.len());
    for line in &lines {
        if line.trim().is_empty() {
            outs.push(String::new());
            continue;
        }
        let mut src = tok.encode(line).0;
        src.truncate(params.cfg.max_len - 1);
        src.push(Vocabulary::EOS_ID);
        let out = greedy_decode(&params, &TokenSeq(src.clone()), decode_cap(&params, src.len()))?;
        outs.push(tok.decode(&out.strip_eos(Vocabulary::EOS_ID)));
    }
    write_lines(&output, &outs)?;
    log::info!("transfer: {} lines -> {}", outs.len(), output.display());
    Ok(json!({"lines": outs.len(), "input": input, "output": output}))
}

fn classifier(ctx: &Ctx) -> Result<StyleClassifier, CliError> {
    let path = ctx.root.join("eval").join("classifier.json");
    if path.exists() {
        return Ok(StyleClassifier::load(&path)?);
    }
    let og = ctx.corpus(&ctx.og(), Style::Og)?;
    let tr = ctx.corpus(&ctx.tr(), Style::Tr)?;
    let clf = train_classifier(&og, &tr, ctx.cfg.seeded(ctx.cfg.eval.classifier_seed))?;
    fs::create_dir_all(path.parent().expect("has parent"))?;
    clf.save(&path)?;
    Ok(clf)
}

fn evaluate(ctx: &Ctx, setup: &str, outputs: Option<&Path>, inputs: Option<&Path>) -> Result<Value, CliError> {
    let tok = ctx.tokenizer()?;
    let outputs_path = outputs
        .map(Path::to_path_buf)
        .unwrap_or_else(|| ctx.root.join("transfer").join(format!("{}.txt", file_safe(setup))));
    let outs = read_lines(&outputs_path, &format!("run `ogstyle transfer --model {setup}` or pass --outputs"))?;
    let inputs_path = inputs.map(Path::to_path_buf).unwrap_or_else(|| ctx.tr_test());
    let ins = read_lines(&inputs_path, "run `ogstyle synth` or pass --inputs")?;
    if ins.len() != outs.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            inputs_path.display(),
            ins.len(),
            outputs_path.display(),
            outs.len()
        )));
    }
    if outs.iter().all(|o| o.trim().is_empty()) {
        return Err(CliError::Data(format!("{} contains no words to score", outputs_path.display())));
    }
    let og_test = StyledCorpus::new(
        read_lines(&ctx.og_test(), "run `ogstyle synth` or set corpus.og_test")?,
        Style::Og,
        Provenance::Natural,
    );
    let reference = ctx.model("dae", &tok)?;
    let lm = ctx.lm(&tok)?;
    let clf = classifier(ctx)?;
    let fw = if ctx.cfg.eval.function_words.is_empty() {
        FunctionWords::default()
    } else {
        let p = PathBuf::from(&ctx.cfg.eval.function_words);
        require(&p, "fix eval.function_words")?;
        FunctionWords::load(&p)?
    };
    let m = MetricSet {
        acc_full: Some(accuracy_full(&clf, &og_test.sentences, &outs)?),
        acc_half: Some(accuracy_half(&clf, &outs)?),
        og_like_count: Some(og_like(&clf, &outs)?),
        content_f1: Some(content_f1(&reference, &tok, &ins, &outs)?),
        ppl_og: Some(perplexity(&lm, &tok, &outs)?),
        ttr: Some(ttr(&outs)?),
        ld: Some(lexical_density(&outs, &fw)?),
        n_identical: Some(count_identical(&ins, &outs)?),
    };
    let dir = ctx.root.join("eval").join("metrics");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{}.json", file_safe(setup))), serde_json::to_vec_pretty(&json!({"setup": setup, "metrics": m}))?)?;
    log::info!("evaluate {setup}: {m:?}");
    Ok(serde_json::to_value(&m)?)
}

fn report(ctx: &Ctx) -> Result<Value, CliError> {
    let dir = ctx.root.join("eval").join("metrics");
    require(&dir, "run `ogstyle evaluate` first")?;
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::MissingArtifact(format!("no metrics in {}; run `ogstyle evaluate` first", dir.display())));
    }
    let mut setups = Vec::new();
    for f in &files {
        let v: Value = serde_json::from_slice(&fs::read(f)?)?;
        let name = v["setup"]
            .as_str()
            .ok_or_else(|| CliError::Data(format!("{}: missing setup name", f.display())))?
            .to_string();
        let m: MetricSet = serde_json::from_value(v["metrics"].clone())?;
        setups.push((name, m));
    }
    let refs: Vec<(&str, MetricSet)> = setups.iter().map(|(n, m)| (n.as_str(), m.clone())).collect();
    let report = build_report(&refs)?;
    let out = ctx.root.join("report");
    fs::create_dir_all(&out)?;
    let text = report.to_json()?;
    validate_report_json(&text)?;
    fs::write(out.join("report.json"), &text)?;
    fs::write(out.join("report.tsv"), report.to_tsv())?;
    print!("{}", report.to_tsv());
    Ok(json!({"setups": report.rows.len()}))
}
