//! `artikit` command-line tool.

mod args;
mod commands;
mod config;

use args::{Cli, Command, PipelineCommand, PlanCommand};
use clap::Parser;
use commands::{CliError, Outcome, EXIT_USAGE};
use config::{CliConfig, FileConfig, Overrides};

fn overrides(cli: &Cli) -> Overrides {
    let mut o = Overrides { seed: cli.seed, ..Default::default() };
    match &cli.command {
        Command::Verify { frames, samples, .. } => {
            o.frames_per_dof = *frames;
            o.samples = *samples;
        }
        Command::Animate { frames, .. } => o.frames_per_dof = *frames,
        Command::Export(args::ExportCommand::Urdf { resolution, .. } | args::ExportCommand::Scene { resolution, .. }) => {
            o.resolution = *resolution
        }
        Command::Pipeline(PipelineCommand::Run { fixtures, store, out, sequential, endpoint, model, templates, .. }) => {
            o.fixtures = fixtures.clone();
            o.store_dir = store.clone();
            o.out_dir = out.clone();
            o.sequential = *sequential;
            o.endpoint = endpoint.clone();
            o.model = model.clone();
            o.templates = templates.clone();
        }
        _ => {}
    }
    o
}

fn dispatch(cli: &Cli, cfg: &CliConfig) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Plan(PlanCommand::Validate { plan }) => commands::plan_validate(plan),
        Command::Assemble { plan, programs, output } => commands::assemble(plan, programs, output.as_deref()),
        Command::Fk { model, q } => commands::fk(model, q),
        Command::Animate { model, out, .. } => commands::animate(model, cfg.frames_per_dof, out.as_deref()),
        Command::Verify { model, .. } => commands::verify(model, cfg),
        Command::Export(e) => commands::export(e, cfg),
        Command::Metrics(m) => commands::metrics(m, cfg),
        Command::Pipeline(p) => commands::pipeline(p, cfg, cli.seed),
        Command::Store(s) => commands::store(s, cfg),
    }
}

/// Prints to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).parse_default_env().init();

    let file = match &cli.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("error: config {e}");
                return EXIT_USAGE;
            }
        },
        None => FileConfig::default(),
    };
    let cfg = CliConfig::resolve(cli.config.clone(), file, overrides(&cli), cli.verbose);
    log::debug!("{cfg:?}");

    match dispatch(&cli, &cfg) {
        Ok(out) => {
            if cli.json {
                emit(&serde_json::to_string_pretty(&out.value).expect("json output"));
            } else if !out.text.is_empty() {
                emit(&out.text);
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if cli.json {
                emit(&serde_json::json!({ "error": e.to_string(), "kind": e.kind() }).to_string());
            }
            e.code()
        }
    }
}

fn main() {
    std::process::exit(run());
}
