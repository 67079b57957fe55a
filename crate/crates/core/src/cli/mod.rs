//! Command dispatch for the `ssipt` binary. Each subcommand is a
//! [`Command`] registered by name; the binary only resolves the name, loads
//! the config and maps the outcome to an exit status.

mod commands;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{parse_config, ConfigError, WorkbenchConfig};
use crate::table::{PlotSpec, SweepTable, TableError};

pub use commands::{
    Analyze, Calibrate, Coupler, Design, Simulate, SweepCoupling, SweepMisalignment,
};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "SSIPT_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Domain(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Domain(_) | CliError::Io { .. } => 1,
        }
    }
}

macro_rules! domain_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Domain(e.to_string())
            }
        }
    )*};
}

domain_from!(
    crate::circuit::CircuitError,
    crate::fha::FhaError,
    crate::transient::TransientError,
    crate::magnetics::MagneticsError,
    crate::design::DesignError
);

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        match e {
            TableError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Domain(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// The command ran but the design does not meet its constraints.
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: String,
    pub artifacts: Vec<PathBuf>,
    pub status: Status,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        match self.status {
            Status::Ok => 0,
            Status::Infeasible => 1,
        }
    }
}

/// Everything a command needs: the validated config and where to write.
pub struct Context {
    pub config: WorkbenchConfig,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn new(config: WorkbenchConfig, out_dir: PathBuf) -> Self {
        Self { config, out_dir }
    }
}

pub trait Command: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    fn run(&self, ctx: &Context, out: &mut Artifacts) -> Result<Outcome, CliError>;
}

pub struct CommandRegistry {
    commands: Vec<Box<dyn Command>>,
}

impl CommandRegistry {
    pub fn empty() -> Self {
        Self {
            commands: Vec::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Analyze));
        r.register(Box::new(Simulate));
        r.register(Box::new(SweepCoupling));
        r.register(Box::new(SweepMisalignment));
        r.register(Box::new(Coupler));
        r.register(Box::new(Design));
        r.register(Box::new(Calibrate));
        r
    }

    /// Later registrations replace earlier ones with the same name.
    pub fn register(&mut self, command: Box<dyn Command>) {
        self.commands.retain(|c| c.name() != command.name());
        self.commands.push(command);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Command> {
        self.commands
            .iter()
            .find(|c| c.name() == name)
            .map(|c| c.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.commands.iter().map(|c| c.name()).collect()
    }

    pub fn usage(&self) -> String {
        let mut s =
            String::from("usage: ssipt <COMMAND> --config <PATH> [--out <DIR>]\n\ncommands:\n");
        for c in &self.commands {
            let _ = writeln!(s, "  {:<16}{}", c.name(), c.about());
        }
        s
    }

    pub fn dispatch(&self, name: &str, ctx: &Context) -> Result<Outcome, CliError> {
        let command = self.get(name).ok_or_else(|| {
            CliError::Usage(format!("unknown command `{name}`\n\n{}", self.usage()))
        })?;
        let mut out = Artifacts::new(&ctx.out_dir, ctx.config.output.csv, ctx.config.output.svg);
        let mut outcome = command.run(ctx, &mut out)?;
        outcome.artifacts = out.written;
        Ok(outcome)
    }
}

impl Default for CommandRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Writes CSV/SVG files into the output directory, honouring the config's
/// on/off switches, and records what was written.
pub struct Artifacts {
    dir: PathBuf,
    csv: bool,
    svg: bool,
    written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, csv: bool, svg: bool) -> Self {
        Self {
            dir: dir.to_path_buf(),
            csv,
            svg,
            written: Vec::new(),
        }
    }

    fn ensure_dir(&self) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|source| CliError::Io {
            path: self.dir.display().to_string(),
            source,
        })
    }

    pub fn csv(&mut self, stem: &str, table: &SweepTable) -> Result<(), CliError> {
        if !self.csv {
            return Ok(());
        }
        self.ensure_dir()?;
        let path = self.dir.join(format!("{stem}.csv"));
        table.write_csv(&path)?;
        self.written.push(path);
        Ok(())
    }

    pub fn svg(&mut self, stem: &str, table: &SweepTable, plot: &PlotSpec) -> Result<(), CliError> {
        if !self.svg {
            return Ok(());
        }
        self.ensure_dir()?;
        let path = self.dir.join(format!("{stem}.svg"));
        table.write_svg(plot, &path)?;
        self.written.push(path);
        Ok(())
    }
}

/// Output directory precedence: explicit flag, then the environment, then
/// the config.
pub fn resolve_out_dir(
    flag: Option<&Path>,
    env: Option<&str>,
    config: &WorkbenchConfig,
) -> PathBuf {
    match (flag, env) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(e)) if !e.is_empty() => PathBuf::from(e),
        _ => config.output.directory.clone(),
    }
}

pub fn load_config(path: &Path) -> Result<WorkbenchConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    Ok(parse_config(&text)?)
}

/// Aligned `name = value` lines under a heading.
#[derive(Default)]
pub struct Report {
    text: String,
}

impl Report {
    pub fn heading(&mut self, title: &str) -> &mut Self {
        if !self.text.is_empty() {
            self.text.push('\n');
        }
        let _ = writeln!(self.text, "{title}");
        self
    }

    pub fn line(&mut self, key: &str, value: impl fmt::Display) -> &mut Self {
        let _ = writeln!(self.text, "  {key:<20} = {value}");
        self
    }

    pub fn note(&mut self, text: &str) -> &mut Self {
        let _ = writeln!(self.text, "  {text}");
        self
    }

    pub fn finish(&mut self) -> String {
        std::mem::take(&mut self.text)
    }
}
