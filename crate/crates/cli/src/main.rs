use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tvb_cli::config::KEYS;
use tvb_cli::{run, CliError, Command, RunConfig};

#[derive(Parser)]
#[command(name = "tvb", version, about = "Learn spatially dependent TV denoising weights from training pairs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Flat `key = value` configuration file.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(short = 's', long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Denoise one image with a fixed parameter field.
    Denoise,
    /// Learn the parameter field on a training manifest.
    Train,
    /// Reduced cost over a grid of scalar weights.
    Sweep,
    /// Compare gradients with finite differences.
    Gradcheck,
    /// Check the stationarity certificate at a parameter field.
    Verify,
    /// Train forward-only and multi-scheme models and compare them.
    CompareDiscretizations,
    /// List the accepted configuration keys.
    Keys,
}

fn config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => return Err(CliError::Io(format!("{}: no such config file", p.display()))),
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let command = match cli.command {
        Cmd::Denoise => Command::Denoise,
        Cmd::Train => Command::Train,
        Cmd::Sweep => Command::Sweep,
        Cmd::Gradcheck => Command::Gradcheck,
        Cmd::Verify => Command::Verify,
        Cmd::CompareDiscretizations => Command::CompareDiscretizations,
        Cmd::Keys => {
            for (k, d) in KEYS {
                println!("{k:<28} {d}");
            }
            return ExitCode::SUCCESS;
        }
    };
    let result = config(&cli).and_then(|cfg| {
        for (key, path) in tvb_cli::commands::inputs_of(command, &cfg) {
            if !path.is_file() {
                return Err(CliError::Io(format!("{}: no such file ({key})", path.display())));
            }
        }
        run(command, &cfg, &mut std::io::stdout().lock())
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tvb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
