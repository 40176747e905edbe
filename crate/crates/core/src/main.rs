use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mixinterp::attribution::Method;
use mixinterp::augment::Augmentation;
use mixinterp::config::ExperimentConfig;
use mixinterp::pipeline::{Run, Selection};
use mixinterp::records::ResultRecord;
use mixinterp::{report, Error, Result};

#[derive(Parser)]
#[command(name = "mixinterp", version, about = "Train mixing-augmented classifiers and score their interpretability")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one classifier per augmentation regime.
    Train(Common),
    /// Select evaluation samples and compute attribution maps.
    Attribute(Common),
    /// Score map alignment with ground-truth boxes.
    EvalAlign(Common),
    /// Run the inter-model deletion and insertion comparison.
    EvalFaith(Common),
    /// Count concept detectors in the last convolutional layer.
    Dissect(Common),
    /// Regenerate tables and figures from stored records.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory; defaults to the one derived from the config.
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; runs are stored under OUT/<run id>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Restrict to one attribution method (gradcam or iba).
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated subset of configured regimes.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        Ok(cfg)
    }

    fn open(&self) -> Result<(Run, Selection)> {
        let run = Run::new(self.config()?)?;
        let models = self
            .models
            .as_ref()
            .map(|v| v.iter().map(|m| Augmentation::parse(m.trim())).collect::<Result<Vec<_>>>())
            .transpose()
            .map_err(as_config)?;
        let methods = self
            .method
            .as_deref()
            .map(|m| Method::parse(m).map(|m| vec![m]))
            .transpose()
            .map_err(as_config)?;
        let sel = Selection::narrowed(&run.config, models.as_deref(), methods.as_deref())?;
        Ok((run, sel))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        e => e,
    }
}

fn print_records(records: &[ResultRecord]) {
    for r in records {
        let method = r.method.as_deref().unwrap_or("-");
        match r.se {
            Some(se) => println!("{}\t{}\t{}\t{:.6}\t{:.6}", r.model_id, method, r.metric, r.value, se),
            None => println!("{}\t{}\t{}\t{:.6}", r.model_id, method, r.metric, r.value),
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let (run, sel) = c.open()?;
            run.train(&sel)?;
            eprintln!("run {} in {}", run.run_id, run.paths.dir.display());
            let ids: Vec<&str> = sel.models.iter().map(|m| m.name()).collect();
            print_records(
                &mixinterp::records::latest(&run.results()?)
                    .into_iter()
                    .filter(|r| ids.contains(&r.model_id.as_str()))
                    .collect::<Vec<_>>(),
            );
        }
        Command::Attribute(c) => {
            let (run, sel) = c.open()?;
            let n = run.attribute(&sel)?;
            eprintln!("wrote {n} maps under {}", run.paths.dir.display());
        }
        Command::EvalAlign(c) => {
            let (run, sel) = c.open()?;
            print_records(&run.eval_alignment(&sel)?);
        }
        Command::EvalFaith(c) => {
            let (run, sel) = c.open()?;
            print_records(&run.eval_faithfulness(&sel)?);
        }
        Command::Dissect(c) => {
            let (run, sel) = c.open()?;
            print_records(&run.dissect(&sel)?);
        }
        Command::Report { common, run } => {
            let dir = match run {
                Some(d) => d,
                None => Run::new(common.config()?)?.paths.dir,
            };
            let summary = report::build_report(&dir)?;
            for f in summary.files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
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
