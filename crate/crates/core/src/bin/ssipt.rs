use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use ssipt::cli::{load_config, resolve_out_dir, CliError, CommandRegistry, Context, OUT_ENV};

#[derive(Parser)]
#[command(name = "ssipt", version, about = "Detuned series-series IPT workbench")]
struct Args {
    /// analyze | simulate | sweep-k | sweep-misalign | coupler | design | calibrate
    command: String,
    /// Workbench configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides SSIPT_OUT and the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: &Args, registry: &CommandRegistry) -> Result<i32, CliError> {
    if registry.get(&args.command).is_none() {
        return Err(CliError::Usage(format!(
            "unknown command `{}`\n\n{}",
            args.command,
            registry.usage()
        )));
    }
    let config = load_config(&args.config)?;
    let env = std::env::var(OUT_ENV).ok();
    let out_dir = resolve_out_dir(args.out.as_deref(), env.as_deref(), &config);
    let outcome = registry.dispatch(&args.command, &Context::new(config, out_dir))?;
    print!("{}", outcome.report);
    for path in &outcome.artifacts {
        println!("wrote {}", path.display());
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let args = Args::parse();
    let registry = CommandRegistry::with_builtins();
    let code = match run(&args, &registry) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
