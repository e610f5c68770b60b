//! `mapp`: command-line runner for masked pseudoword probing experiments.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use pseudoword::archive::TensorArchive;
use pseudoword::dataset::{self, bundled, import_raw, Lexicons, ProbeItem};
use pseudoword::experiment::{
    emit_plots, run_baseline, run_generalize, run_interpolate, run_perturb, run_specialize, write_toy, Inducer,
    RunConfig, ToySetup,
};
use pseudoword::geometry::MagnitudePolicy;
use pseudoword::induction::InductionConfig;
use pseudoword::manifest::ExportManifest;
use pseudoword::model::ModelBundle;
use pseudoword::report::format_table;
use pseudoword::tokenizer::Vocabulary;

#[derive(Parser)]
#[command(name = "mapp", version, about = "Masked pseudoword probing of masked language models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy corpus, train a small encoder on it and save both.
    TrainToy(Common),
    /// Convert marked-up raw sentences into the item schema.
    ImportDataset {
        /// Raw JSON-lines file.
        input: PathBuf,
        /// Output item file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check an exported archive and vocabulary against their manifest.
    VerifyExport {
        /// JSON manifest written by the exporter.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to `vocab.txt` next to the archive.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Induce pseudowords for every item and store them.
    Induce(Common),
    /// Vanilla vs. MaPP sense-match and word-match tables.
    Specialize(Common),
    /// Accuracy at ε-perturbed pseudowords.
    Perturb(Common),
    /// Interpolation between the pseudowords of minimal pairs.
    Interpolate(Common),
    /// Aggregate-loss vs. post hoc averaged pseudowords on held-out sentences.
    Generalize(Common),
    /// Random-vector baseline.
    Baseline(Common),
    /// Render SVG plots for the reports found in the output directory.
    Plot(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model archive (PWAR).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vocabulary file; defaults to `vocab.txt` next to the archive.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Item file (JSON lines); defaults to the bundled portion for the subcommand.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Sense lexicons (JSON); defaults to the bundled lexicons.
    #[arg(long)]
    lexicons: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Hidden layer holding the reconstruction target (default: last).
    #[arg(long)]
    layer: Option<usize>,
    /// Comma-separated ε grid.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
    /// Comma-separated α grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    /// Comma-separated k cut-offs for sense match.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    /// Comma-separated k cut-offs for word match.
    #[arg(long, value_delimiter = ',')]
    word_k: Option<Vec<usize>>,
    /// Random restarts per induction.
    #[arg(long)]
    inits: Option<usize>,
    /// Fail an induction whose decode check does not pass.
    #[arg(long)]
    strict_decode: bool,
    /// `rescale` or `unit`.
    #[arg(long)]
    magnitude_policy: Option<MagnitudePolicy>,
    /// Directions per ε.
    #[arg(long)]
    directions: Option<usize>,
    /// Random draws per item for the baseline.
    #[arg(long)]
    draws: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// The TOML file: flag names as keys plus `[induction]` and `[toy]` tables.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    model: Option<PathBuf>,
    vocab: Option<PathBuf>,
    dataset: Option<PathBuf>,
    lexicons: Option<PathBuf>,
    seed: Option<u64>,
    layer: Option<usize>,
    epsilons: Option<Vec<f64>>,
    alphas: Option<Vec<f64>>,
    k: Option<Vec<usize>>,
    word_k: Option<Vec<usize>>,
    inits: Option<usize>,
    strict_decode: Option<bool>,
    magnitude_policy: Option<MagnitudePolicy>,
    directions: Option<usize>,
    draws: Option<usize>,
    threads: Option<usize>,
    out: Option<PathBuf>,
    induction: Option<InductionConfig>,
    toy: Option<ToySetup>,
}

/// Flags merged over the config file.
struct Resolved {
    file: FileConfig,
    run: RunConfig,
}

impl Common {
    fn resolve(&self) -> Result<Resolved> {
        let mut file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str::<FileConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => FileConfig::default(),
        };
        macro_rules! over {
            ($($f:ident),*) => { $( if self.$f.is_some() { file.$f = self.$f.clone(); } )* };
        }
        over!(model, vocab, dataset, lexicons, seed, layer, epsilons, alphas, k, word_k, inits, magnitude_policy, directions, draws, threads, out);
        if self.strict_decode {
            file.strict_decode = Some(true);
        }

        let mut run = RunConfig::default();
        let mut ind = file.induction.clone().unwrap_or_default();
        if let Some(v) = file.seed {
            run.seed = v;
        }
        if let Some(v) = file.layer {
            ind.layer = Some(v);
        }
        if let Some(v) = file.inits {
            ind.num_inits = v;
        }
        if let Some(v) = file.strict_decode {
            ind.strict_decode = v;
        }
        run.induction = ind;
        if let Some(v) = &file.epsilons {
            run.epsilons = v.clone();
        }
        if let Some(v) = &file.alphas {
            run.alphas = v.clone();
        }
        if let Some(v) = &file.k {
            run.ks = v.clone();
        }
        if let Some(v) = &file.word_k {
            run.word_ks = v.clone();
        }
        if let Some(v) = file.magnitude_policy {
            run.magnitude_policy = v;
        }
        if let Some(v) = file.directions {
            run.num_directions = v;
        }
        if let Some(v) = file.draws {
            run.random_draws = v;
        }
        if let Some(v) = file.threads {
            run.threads = v;
        }
        if let Some(v) = &file.out {
            run.out = v.clone();
        }
        run.validate()?;
        Ok(Resolved { file, run })
    }
}

impl Resolved {
    fn bundle(&self) -> Result<ModelBundle> {
        let Some(model) = &self.file.model else {
            bail!("--model is required");
        };
        let vocab = self.file.vocab.clone().unwrap_or_else(|| sibling(model, "vocab.txt"));
        ModelBundle::load_archive(model, &vocab)
            .with_context(|| format!("loading {} with {}", model.display(), vocab.display()))
    }

    fn items(&self, default: fn() -> Vec<ProbeItem>) -> Result<Vec<ProbeItem>> {
        let items = match &self.file.dataset {
            Some(p) => {
                let items = dataset::load_items(p).with_context(|| format!("loading {}", p.display()))?;
                if items.is_empty() {
                    bail!("{} contains no items", p.display());
                }
                items
            }
            None => default(),
        };
        for (portion, s) in dataset::summarize(&items) {
            eprintln!("{portion:?}: {} items, {} focus words, {} senses", s.items, s.focus_words, s.senses);
        }
        Ok(items)
    }

    fn lexicons(&self) -> Result<Lexicons> {
        match &self.file.lexicons {
            Some(p) => Lexicons::read(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(bundled::lexicons()),
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map(|d| d.join(name)).unwrap_or_else(|| PathBuf::from(name))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::TrainToy(c) => {
            let r = c.resolve()?;
            let setup = r.file.toy.clone().unwrap_or_default();
            let (toy, bundle, report) = setup.build(r.run.seed)?;
            write_toy(&r.run.out, &toy, &bundle, &report)?;
            println!(
                "trained {} steps: loss {:.4}, held-out masked accuracy {:.3}, converged {}",
                report.steps, report.final_loss, report.heldout_accuracy, report.converged
            );
            println!("wrote {}", r.run.out.display());
        }
        Command::ImportDataset { input, out } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let items = import_raw(&text)?;
            dataset::write_items(&out, &items)?;
            for (portion, s) in dataset::summarize(&items) {
                println!("{portion:?}: {} items, {} focus words, {} senses", s.items, s.focus_words, s.senses);
            }
        }
        Command::VerifyExport { manifest, model, vocab } => {
            let m = ExportManifest::read(&manifest)?;
            let vocab = vocab.unwrap_or_else(|| sibling(&model, "vocab.txt"));
            m.verify(&TensorArchive::read(&model)?, &Vocabulary::read(&vocab)?)
                .with_context(|| format!("{} does not match {}", model.display(), manifest.display()))?;
            println!(
                "{}: {} tensors, {} layers, d={}, vocabulary {} match the manifest",
                m.source,
                m.tensors.len(),
                m.config.num_layers,
                m.config.hidden_dim,
                m.vocab_size
            );
        }
        Command::Induce(c) => {
            let r = c.resolve()?;
            let bundle = r.bundle()?;
            let items = r.items(bundled::basic)?;
            let path = r.run.out.join("pseudowords.jsonl");
            std::fs::create_dir_all(&r.run.out)?;
            let inducer = Inducer::new(&bundle, r.run.induction_config(), Some(&path))?;
            let mut failed = 0;
            for (it, res) in items.iter().zip(inducer.many(&items)) {
                match res {
                    Ok(p) => println!("{}\tloss {:.3e}\tdecode rank {}\tsteps {}", it.id, p.final_loss, p.decode_rank, p.steps_used),
                    Err(e) => {
                        failed += 1;
                        eprintln!("{}\tfailed: {e}", it.id);
                    }
                }
            }
            inducer.save()?;
            println!("wrote {} ({failed} failures)", path.display());
        }
        Command::Specialize(c) => {
            let r = c.resolve()?;
            let rep = run_specialize(&r.bundle()?, &r.items(bundled::basic)?, &r.lexicons()?, &r.run)?;
            println!("sense match\n{}", format_table(&rep.sense));
            println!("word match\n{}", format_table(&rep.word));
            if let Some(d) = &rep.distances {
                println!(
                    "distance to z_t: cosine median {:.3} (min {:.3}, max {:.3}); euclidean median {:.3}",
                    d.cosine.median, d.cosine.min, d.cosine.max, d.euclidean.median
                );
            }
            report_failures(rep.failures.len());
        }
        Command::Perturb(c) => {
            let r = c.resolve()?;
            let rep = run_perturb(&r.bundle()?, &r.items(bundled::basic)?, &r.lexicons()?, &r.run)?;
            println!("{}", format_table(&rep.per_epsilon));
            println!("{}", format_table(&rep.bins));
            report_failures(rep.failures.len());
        }
        Command::Interpolate(c) => {
            let r = c.resolve()?;
            let rep = run_interpolate(&r.bundle()?, &r.items(bundled::minimal_pairs)?, &r.lexicons()?, &r.run)?;
            println!("{:>6} {:>3} {:>7} {:>7} {:>7}", "alpha", "k", "A", "B", "neither");
            for s in &rep.summary {
                println!("{:>6.2} {:>3} {:>7.3} {:>7.3} {:>7.3}", s.alpha, s.k, s.a, s.b, s.neither);
            }
            report_failures(rep.failures.len());
        }
        Command::Generalize(c) => {
            let r = c.resolve()?;
            let rep = run_generalize(&r.bundle()?, &r.items(bundled::generalization)?, &r.lexicons()?, &r.run)?;
            println!("{}", format_table(&rep.metrics));
            report_failures(rep.failures.len());
        }
        Command::Baseline(c) => {
            let r = c.resolve()?;
            let rows = run_baseline(&r.bundle()?, &r.items(bundled::basic)?, &r.lexicons()?, &r.run)?;
            println!("{}", format_table(&rows));
        }
        Command::Plot(c) => {
            let r = c.resolve()?;
            let written = emit_plots(&r.run.out)?;
            if written.is_empty() {
                bail!("no report tables found in {}", r.run.out.display());
            }
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn report_failures(n: usize) {
    if n > 0 {
        eprintln!("{n} induction(s) failed; see the *_failures.csv file");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(config: &str, args: &[&str]) -> Resolved {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, config).unwrap();
        let mut argv = vec!["mapp", "baseline", "--config", path.to_str().unwrap()];
        argv.extend(args);
        let Command::Baseline(c) = Cli::parse_from(argv).command else { unreachable!() };
        c.resolve().unwrap()
    }

    #[test]
    fn config_file_fills_unset_flags() {
        let r = resolve("seed = 9\nk = [1, 3]\nepsilons = [0.0, 0.5]\nmagnitude-policy = \"unit\"\n[induction]\nmax_steps = 7\n", &[]);
        assert_eq!(r.run.seed, 9);
        assert_eq!(r.run.ks, [1, 3]);
        assert_eq!(r.run.epsilons, [0.0, 0.5]);
        assert_eq!(r.run.magnitude_policy, MagnitudePolicy::Unit);
        assert_eq!(r.run.induction.max_steps, 7);
    }

    #[test]
    fn flags_win_over_the_config_file() {
        let r = resolve(
            "seed = 9\nk = [1, 3]\ninits = 2\nlayer = 1\n",
            &["--seed", "4", "--k", "1,5", "--inits", "3", "--strict-decode", "--alphas", "0,1", "--out", "elsewhere"],
        );
        assert_eq!(r.run.seed, 4);
        assert_eq!(r.run.ks, [1, 5]);
        assert_eq!(r.run.induction.num_inits, 3);
        assert_eq!(r.run.induction.layer, Some(1));
        assert!(r.run.induction.strict_decode);
        assert_eq!(r.run.alphas, [0.0, 1.0]);
        assert_eq!(r.run.out, PathBuf::from("elsewhere"));
    }

    #[test]
    fn vocab_defaults_to_the_archive_sibling() {
        assert_eq!(sibling(Path::new("m/model.pwar"), "vocab.txt"), PathBuf::from("m/vocab.txt"));
    }
}
