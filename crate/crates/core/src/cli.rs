//! Command-line front end. Every command writes into `--out` and removes
//! the files it created if it fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::attention::AttentionStep;
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Task};
use crate::corpus::Grammar;
use crate::metrics::{write_reports, MetricsReport};
use crate::probes::{bypass_experiment, default_alphas, Generator, ProbeConfig};
use crate::rng::Rng;
use crate::seq2seq::{LatentChoice, Noise};
use crate::train::{load_corpus, write_csv, Dataset, Trainer};

#[derive(Debug, Parser)]
#[command(
    name = "seqvae",
    version,
    about = "Variational sequence models: training, evaluation and latent probes"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Experiment config (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; for `train` it overrides the config seed, for probes it seeds sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Override a config key, e.g. `--set epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Mode {
    Map,
    Sampling,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    Valid,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes checkpoint.bin, train_log.csv, valid_log.csv, config.txt.
    Train {
        /// Continue from a checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes metrics.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "map")]
        mode: Mode,
        /// Samples per input in sampling mode (default: config `eval_samples`).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Also dump MAP attention weights as JSON (attention models only).
        #[arg(long)]
        attention_json: Option<PathBuf>,
    },
    /// Decode codes drawn from the prior; writes samples.txt.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Decode points on the line between two sentences' codes; writes interpolation.txt.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// Grid size minus one (alpha = i / steps).
        #[arg(long, default_value_t = 5)]
        steps: usize,
    },
    /// Decode samples around a sentence's code; writes neighborhood.txt.
    Neighborhood {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: String,
        #[arg(long, default_value_t = 3.0)]
        scale: f64,
        #[arg(long, default_value_t = 10)]
        n: usize,
    },
    /// Train vae twins with and without the bypass per seed; writes bypass.csv and kl_curves.csv.
    BypassExp {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// Train ved_vattn_hbar per attention-KL strength; writes gamma_<value>.csv curves.
    GammaSweep {
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1.0")]
        gammas: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

/// Files created by a command; deleted on drop unless committed.
struct Outputs {
    dir: PathBuf,
    created: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            created: Vec::new(),
            committed: false,
        })
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        self.write_path(&path, bytes)?;
        Ok(path)
    }

    fn write_path(&mut self, path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
        self.created.push(path.to_path_buf());
        fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.created)
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for p in &self.created {
                let _ = fs::remove_file(p);
            }
        }
    }
}

fn base_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(),
    };
    apply_overrides(&mut cfg, common)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, common: &Common) -> anyhow::Result<()> {
    for o in &common.overrides {
        cfg.set_pair(o)?;
    }
    Ok(())
}

fn lines(sentences: &[Vec<String>]) -> String {
    sentences.iter().map(|s| s.join(" ") + "\n").collect()
}

/// A checkpoint with its model and the data its config describes.
struct Loaded {
    ckpt: Checkpoint,
    model: crate::seq2seq::Seq2SeqModel,
}

impl Loaded {
    fn open(path: &Path, common: &Common) -> anyhow::Result<Self> {
        let mut ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        apply_overrides(&mut ckpt.config, common)?;
        let model = ckpt.model()?;
        Ok(Loaded { ckpt, model })
    }

    fn generator(&self) -> anyhow::Result<Generator<'_>> {
        Ok(Generator::new(
            &self.model,
            &self.ckpt.vocab,
            self.ckpt.config.max_len()?,
        ))
    }

    fn task(&self) -> anyhow::Result<Task> {
        Ok(self.ckpt.config.task()?)
    }
}

fn probe_rng(common: &Common) -> Rng {
    Rng::new(common.seed.unwrap_or(0))
}

#[derive(Serialize)]
struct AttentionDump<'a> {
    source: &'a str,
    output: Vec<String>,
    steps: Vec<AttentionStep>,
}

pub fn cmd_train(common: &Common, resume: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let mut trainer = match resume {
        Some(path) => {
            let mut ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            apply_overrides(&mut ckpt.config, common)?;
            let corpus = load_corpus(&ckpt.config)?;
            ckpt.into_trainer(&corpus)?
        }
        None => {
            let mut cfg = base_config(common)?;
            if let Some(s) = common.seed {
                cfg.set("seed", &s.to_string())?;
            }
            cfg.validate()?;
            let corpus = load_corpus(&cfg)?;
            Trainer::new(cfg, &corpus)?
        }
    };
    let mut out = Outputs::new(&common.out)?;
    trainer.train()?;
    let (mut log, mut valid) = (Vec::new(), Vec::new());
    trainer.write_logs(&mut log, &mut valid)?;
    out.write("train_log.csv", log)?;
    out.write("valid_log.csv", valid)?;
    out.write("config.txt", trainer.config.to_text())?;
    out.write("checkpoint.bin", Checkpoint::from_trainer(&trainer).to_bytes())?;
    Ok(out.commit())
}

pub fn cmd_eval(
    common: &Common,
    checkpoint: &Path,
    mode: Mode,
    k: Option<usize>,
    split: Split,
    attention_json: Option<&Path>,
) -> anyhow::Result<Vec<PathBuf>> {
    let loaded = Loaded::open(checkpoint, common)?;
    let task = loaded.task()?;
    if matches!(mode, Mode::Sampling) && !loaded.model.spec.is_stochastic() {
        bail!(
            "sampling mode needs a stochastic model; task {} is deterministic",
            task.name()
        );
    }
    if attention_json.is_some() && loaded.model.spec.attention.is_none() {
        bail!("task {} has no attention to dump", task.name());
    }
    let cfg = &loaded.ckpt.config;
    let corpus = load_corpus(cfg)?;
    let data = Dataset::with_vocab(&corpus, task, loaded.ckpt.vocab.clone(), cfg.max_len()?)?;
    let pairs = match split {
        Split::Valid => &data.valid,
        Split::Test => &data.test,
    };
    let gen = loaded.generator()?;
    let report = match mode {
        Mode::Map => gen.map_report(pairs, task.name())?,
        Mode::Sampling => {
            let k = k.map_or_else(|| cfg.eval_samples(), Ok)?;
            gen.diversity_probe(pairs, k, &mut probe_rng(common), task.name())?
        }
    };
    let mut out = Outputs::new(&common.out)?;
    let mut csv = Vec::new();
    write_reports(&mut csv, std::slice::from_ref(&report))?;
    out.write("metrics.csv", csv)?;
    if let Some(path) = attention_json {
        let sources = match split {
            Split::Valid => &corpus.valid,
            Split::Test => &corpus.test,
        };
        let mut dumps = Vec::new();
        for (p, ex) in pairs.iter().zip(sources) {
            let r = loaded.model.greedy_decode(
                Some(&p.source),
                &LatentChoice::Posterior { scale: 0.0 },
                &mut Noise::Zero,
                gen.max_len,
            )?;
            dumps.push(AttentionDump {
                source: &ex.source,
                output: gen.words(&r.tokens),
                steps: r.attention,
            });
        }
        out.write_path(path, serde_json::to_vec_pretty(&dumps)?)?;
    }
    Ok(out.commit())
}

pub fn cmd_sample(common: &Common, checkpoint: &Path, n: usize) -> anyhow::Result<Vec<PathBuf>> {
    let loaded = Loaded::open(checkpoint, common)?;
    let gen = loaded.generator()?;
    let mut rng = probe_rng(common);
    let samples = (0..n)
        .map(|_| gen.random_sample(&mut rng))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut out = Outputs::new(&common.out)?;
    out.write("samples.txt", lines(&samples))?;
    if let Some(g) = loaded.ckpt.config.corpus().strip_prefix("toy:") {
        let grammar = Grammar::from_id(g)?;
        let ok = samples.iter().filter(|s| grammar.accepts(s)).count();
        eprintln!("{ok}/{n} samples accepted by grammar `{g}`");
    }
    Ok(out.commit())
}

pub fn cmd_interpolate(
    common: &Common,
    checkpoint: &Path,
    a: &str,
    b: &str,
    steps: usize,
) -> anyhow::Result<Vec<PathBuf>> {
    if steps == 0 {
        bail!("steps must be >= 1");
    }
    let loaded = Loaded::open(checkpoint, common)?;
    let alphas: Vec<f64> = if steps == 5 {
        default_alphas()
    } else {
        (0..=steps).map(|i| i as f64 / steps as f64).collect()
    };
    let sentences = loaded.generator()?.interpolate(a, b, &alphas)?;
    let text: String = alphas
        .iter()
        .zip(&sentences)
        .map(|(al, s)| format!("{al:.3}\t{}\n", s.join(" ")))
        .collect();
    let mut out = Outputs::new(&common.out)?;
    out.write("interpolation.txt", text)?;
    Ok(out.commit())
}

pub fn cmd_neighborhood(
    common: &Common,
    checkpoint: &Path,
    input: &str,
    scale: f64,
    n: usize,
) -> anyhow::Result<Vec<PathBuf>> {
    ProbeConfig {
        k: n,
        scale,
        ..Default::default()
    }
    .validate()?;
    let loaded = Loaded::open(checkpoint, common)?;
    let gen = loaded.generator()?;
    let mut rng = probe_rng(common);
    let samples = (0..n)
        .map(|_| gen.neighborhood_sample(input, scale, &mut rng))
        .collect::<crate::Result<Vec<_>>>()?;
    let mut out = Outputs::new(&common.out)?;
    out.write("neighborhood.txt", lines(&samples))?;
    Ok(out.commit())
}

pub fn cmd_bypass_exp(common: &Common, seeds: &[u64], k: usize) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = base_config(common)?;
    cfg.validate()?;
    let corpus = load_corpus(&cfg)?;
    let probe = ProbeConfig {
        k,
        seed: common.seed.unwrap_or(0),
        ..Default::default()
    };
    let report = bypass_experiment(&cfg, &corpus, seeds, &probe)?;
    let mut out = Outputs::new(&common.out)?;
    let (mut table, mut curves) = (Vec::new(), Vec::new());
    report.write_table(&mut table)?;
    report.write_curves(&mut curves)?;
    out.write("bypass.csv", table)?;
    out.write("kl_curves.csv", curves)?;
    Ok(out.commit())
}

pub const GAMMA_CURVE_HEADER: &str = "epoch,bleu_2,bleu_4,entropy,distinct_1";

/// Per-epoch sampling-mode curves on the validation partition for one γ.
pub fn gamma_curve(
    cfg: &ExperimentConfig,
    corpus: &crate::corpus::Corpus,
    k: usize,
    seed: u64,
) -> crate::Result<Vec<(u64, MetricsReport)>> {
    let mut trainer = Trainer::new(cfg.clone(), corpus)?;
    let mut rows = Vec::new();
    while !trainer.finished() {
        trainer.run_epoch()?;
        let gen = Generator::new(&trainer.model, &trainer.data.vocab, trainer.data.max_len);
        let pairs = if trainer.data.valid.is_empty() {
            &trainer.data.train
        } else {
            &trainer.data.valid
        };
        let mut rng = Rng::new(seed).derive(trainer.epoch);
        rows.push((
            trainer.epoch,
            gen.diversity_probe(pairs, k, &mut rng, "ved_vattn_hbar")?,
        ));
    }
    Ok(rows)
}

pub fn cmd_gamma_sweep(common: &Common, gammas: &[f64], k: usize) -> anyhow::Result<Vec<PathBuf>> {
    if gammas.is_empty() {
        bail!("no gamma values given");
    }
    let mut cfg = base_config(common)?;
    if !cfg.is_set("task") {
        cfg.set("task", "ved_vattn_hbar")?;
    }
    if cfg.task()? != Task::VedVattnHbar {
        bail!("the gamma sweep trains ved_vattn_hbar models");
    }
    if !cfg.is_set("corpus") {
        cfg.set("corpus", "toy:qgen")?;
    }
    let corpus = load_corpus(&cfg)?;
    let seed = common.seed.unwrap_or(0);
    let runs: Vec<crate::Result<Vec<(u64, MetricsReport)>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = gammas
            .iter()
            .map(|&g| {
                let cfg = cfg.clone().with("gamma_a", g);
                let corpus = &corpus;
                scope.spawn(move || {
                    let cfg = cfg?;
                    cfg.validate()?;
                    gamma_curve(&cfg, corpus, k, seed)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    });
    let mut out = Outputs::new(&common.out)?;
    for (g, run) in gammas.iter().zip(runs) {
        let rows = run?;
        let mut csv = Vec::new();
        write_csv(
            &mut csv,
            GAMMA_CURVE_HEADER,
            rows.iter().map(|(e, r)| {
                format!(
                    "{e},{:.6},{:.6},{:.6},{:.6}",
                    r.bleu[1],
                    r.bleu[3],
                    r.entropy.unwrap_or(0.0),
                    r.distinct_1.unwrap_or(0.0)
                )
            }),
        )?;
        out.write(&format!("gamma_{g}.csv"), csv)?;
    }
    Ok(out.commit())
}

pub fn execute(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    let c = &cli.common;
    match &cli.command {
        Command::Train { resume } => cmd_train(c, resume.as_deref()),
        Command::Eval {
            checkpoint,
            mode,
            k,
            split,
            attention_json,
        } => cmd_eval(c, checkpoint, *mode, *k, *split, attention_json.as_deref()),
        Command::Sample { checkpoint, n } => cmd_sample(c, checkpoint, *n),
        Command::Interpolate {
            checkpoint,
            a,
            b,
            steps,
        } => cmd_interpolate(c, checkpoint, a, b, *steps),
        Command::Neighborhood {
            checkpoint,
            input,
            scale,
            n,
        } => cmd_neighborhood(c, checkpoint, input, *scale, *n),
        Command::BypassExp { seeds, k } => cmd_bypass_exp(c, seeds, *k),
        Command::GammaSweep { gammas, k } => cmd_gamma_sweep(c, gammas, *k),
    }
}

/// Parse `args` and run. Returns the files written.
pub fn run<I, T>(args: I) -> anyhow::Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    execute(&cli)
}
