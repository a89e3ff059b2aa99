use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use vistrack::harness::{
    load_checkpoint, read_results, run_ablation, train_to_file, visualize_dataset, write_report, write_results,
    Config,
};
use vistrack::metrics::{evaluate, EvalReport, Protocol};
use vistrack::synthdata::{generate_corpus, read_dataset, write_dataset, CorpusSpec};
use vistrack::Error;

#[derive(Parser)]
#[command(name = "vistrack", version, about = "Online video instance segmentation and tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Vis,
    Uvos,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Vis => Protocol::Vis,
            ProtocolArg::Uvos => Protocol::Uvos,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a JSON corpus spec.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint (plus a loss curve CSV).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print a loss line every N iterations (0 silences progress).
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Run online inference over a dataset and write results JSON.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score results JSON against a dataset.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        protocol: ProtocolArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render track overlays for every clip.
    Viz {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one checkpoint with the fuser and graph toggled on and off.
    Ablate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "vis")]
        protocol: ProtocolArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn gen_data(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    let spec: CorpusSpec =
        serde_json::from_str(&text).map_err(|e| Error::validation("spec", format!("{}: {e}", spec.display())))?;
    let pairs = generate_corpus(&spec)?;
    let (clips, gts): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    write_dataset(&clips, &gts, out)?;
    eprintln!("wrote {} clips to {}", clips.len(), out.display());
    Ok(())
}

fn train(config: &Path, out: &Path, log_every: usize) -> Result<()> {
    let cfg = Config::load(config)?;
    let trained = train_to_file::<f32>(cfg, out, |r| {
        if log_every > 0 && r.iteration % log_every == 0 {
            eprintln!("iter {:>6} lr {:.2e} {}", r.iteration, r.lr, r.breakdown());
        }
    })?;
    if let Some(last) = trained.curve.last() {
        eprintln!("done: {} iterations, final loss {:.4}", trained.curve.len(), last.total);
    }
    Ok(())
}

fn infer(ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(ckpt)?;
    let dataset = read_dataset(data)?;
    let tracks = model.infer_dataset(&dataset)?;
    write_results(&tracks, out)?;
    eprintln!("wrote {} tracks to {}", tracks.len(), out.display());
    Ok(())
}

fn print_report(r: &EvalReport) {
    println!(
        "AP {:.4}  AP50 {:.4}  AP75 {:.4}  AR1 {:.4}  AR10 {:.4}  J {:.4}  F {:.4}  J&F {:.4}",
        r.ap, r.ap50, r.ap75, r.ar1, r.ar10, r.j_mean, r.f_mean, r.jf_mean
    );
}

fn eval(results: &Path, data: &Path, protocol: Protocol, out: &Path) -> Result<()> {
    let preds = read_results(results)?;
    let dataset = read_dataset(data)?;
    let report = evaluate(&preds, &dataset, protocol)?;
    write_report(&report, out)?;
    print_report(&report);
    Ok(())
}

fn viz(results: &Path, data: &Path, out: &Path) -> Result<()> {
    let preds = read_results(results)?;
    let dataset = read_dataset(data)?;
    visualize_dataset(&dataset, &preds, out)?;
    eprintln!("wrote overlays for {} clips to {}", dataset.clips.len(), out.display());
    Ok(())
}

fn ablate(ckpt: &Path, data: &Path, protocol: Protocol, out: &Path) -> Result<()> {
    let (model, _) = load_checkpoint::<f32>(ckpt)?;
    let dataset = read_dataset(data)?;
    for row in run_ablation(&model, &dataset, protocol, out)? {
        print!("{:<9} id_switches {:>3}  ", row.name, row.id_switches);
        print_report(&row.report);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { spec, out } => gen_data(&spec, &out),
        Command::Train { config, out, log_every } => train(&config, &out, log_every),
        Command::Infer { ckpt, data, out } => infer(&ckpt, &data, &out),
        Command::Eval {
            results,
            data,
            protocol,
            out,
        } => eval(&results, &data, protocol.into(), &out),
        Command::Viz { results, data, out } => viz(&results, &data, &out),
        Command::Ablate {
            ckpt,
            data,
            protocol,
            out,
        } => ablate(&ckpt, &data, protocol.into(), &out),
    }
}

/// Bad input (malformed files, unknown keys, ids that do not resolve) exits
/// with 1; everything else that goes wrong at run time exits with 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_validation() => 1,
        Some(Error::NoAnnotations(_) | Error::MissingClipDir(_) | Error::MissingClips(_) | Error::NoClips) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
