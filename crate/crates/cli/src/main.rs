use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use scndb_cli::config::KEYS;
use scndb_cli::data::{split_dir, under_kind};
use scndb_cli::eval::{eval, summary_text, EvalArgs};
use scndb_cli::inspect::{inspect, Subject};
use scndb_cli::reconstruct::{default_output, reconstruct, ReconstructArgs};
use scndb_cli::{data, train, CliResult, ExperimentConfig};

const LOG_ENV: &str = "SCNDB_LOG";

fn flag(key: &str) -> String {
    key.replace('_', "-")
}

/// `--config` plus one flag per config key.
fn with_config_flags(cmd: Command) -> Command {
    let cmd = cmd.args_override_self(true).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value file; flags override it"),
    );
    KEYS.iter().fold(cmd, |cmd, (key, doc)| {
        let long = flag(key);
        let mut arg = Arg::new(*key).long(long.clone()).value_name("VALUE").help(*doc).help_heading("Config");
        if long != *key {
            arg = arg.alias(*key);
        }
        cmd.arg(arg)
    })
}

fn path_arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name)
        .long(name)
        .value_name("PATH")
        .value_parser(clap::value_parser!(PathBuf))
        .help(help)
}

fn cli() -> Command {
    Command::new("scndb")
        .about("Nested self-consistent diffusion bridges for accelerated MRI reconstruction")
        .version(env!("CARGO_PKG_VERSION"))
        .after_help(format!("Log verbosity is read from {LOG_ENV} (error, warn, info, debug, trace)."))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_config_flags(
            Command::new("gen-data")
                .about("Generate phantoms and their under-sampled counterparts")
                .arg(Arg::new("force").long("force").action(ArgAction::SetTrue).help("replace a non-empty data_dir")),
        ))
        .subcommand(with_config_flags(
            Command::new("train")
                .about("Train both bridge networks")
                .arg(Arg::new("resume").long("resume").action(ArgAction::SetTrue).help("continue from run_dir/checkpoint.scndb")),
        ))
        .subcommand(with_config_flags(
            Command::new("reconstruct")
                .about("Reconstruct under-sampled images with the trained network")
                .arg(path_arg("checkpoint", "checkpoint file [default: run_dir/checkpoint.scndb]"))
                .arg(path_arg("input", "directory of under-sampled images [default: data_dir/test/r{acceleration}]"))
                .arg(path_arg("reference", "ground truth for error maps [default: data_dir/test/full when present]"))
                .arg(path_arg("output", "output directory [default: run_dir/recon]")),
        ))
        .subcommand(with_config_flags(
            Command::new("eval")
                .about("Score reconstructions against references")
                .arg(path_arg("reference", "reference images [default: data_dir/test/full]"))
                .arg(path_arg("estimate", "images to score [default: run_dir/recon]"))
                .arg(path_arg("baseline", "second method for the paired Wilcoxon test"))
                .arg(path_arg("output", "metric CSV [default: run_dir/metrics.csv]")),
        ))
        .subcommand(with_config_flags(
            Command::new("inspect")
                .about("Print the schedule, render a mask or decompose an image")
                .arg(Arg::new("subject").required(true).value_name("SUBJECT").help("schedule | mask | contourlet"))
                .arg(path_arg("input", "image for contourlet [default: phantom from seed]"))
                .arg(path_arg("output", "output file (schedule, mask) or directory (contourlet)")),
        ))
}

fn load_config(m: &ArgMatches) -> CliResult<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    for (key, _) in KEYS {
        if let Some(value) = m.get_one::<String>(key) {
            cfg.set(key, value)?;
        }
    }
    Ok(cfg)
}

fn path(m: &ArgMatches, name: &str) -> Option<PathBuf> {
    m.get_one::<PathBuf>(name).cloned()
}

fn existing(p: PathBuf) -> Option<PathBuf> {
    Path::exists(&p).then_some(p)
}

fn run(matches: &ArgMatches) -> CliResult<()> {
    let (name, m) = matches.subcommand().expect("subcommand required");
    let cfg = load_config(m)?;
    match name {
        "gen-data" => {
            let summary = data::gen_data(&cfg, m.get_flag("force"))?;
            println!("{} images at R = {:?} in {}", summary.images, summary.accelerations, cfg.data_dir.display());
        }
        "train" => {
            let summary = train::train(&cfg, m.get_flag("resume"))?;
            match summary.last {
                Some(r) => println!("step {}: total loss {:.6}", summary.step, r.total),
                None => println!("already at step {}", summary.step),
            }
        }
        "reconstruct" => {
            let args = ReconstructArgs {
                checkpoint: path(m, "checkpoint").unwrap_or_else(|| cfg.checkpoint_path()),
                input: path(m, "input")
                    .unwrap_or_else(|| split_dir(&cfg.data_dir, "test", &under_kind(cfg.acceleration))),
                reference: path(m, "reference").or_else(|| existing(split_dir(&cfg.data_dir, "test", "full"))),
                output: path(m, "output").unwrap_or_else(|| default_output(&cfg.run_dir)),
            };
            let n = reconstruct(&args)?;
            println!("{n} reconstructions in {}", args.output.display());
        }
        "eval" => {
            let args = EvalArgs {
                reference: path(m, "reference").unwrap_or_else(|| split_dir(&cfg.data_dir, "test", "full")),
                estimate: path(m, "estimate").unwrap_or_else(|| default_output(&cfg.run_dir)),
                baseline: path(m, "baseline"),
                output: path(m, "output").unwrap_or_else(|| cfg.run_dir.join("metrics.csv")),
            };
            let outcome = eval(&args)?;
            print!("{}", summary_text(&outcome));
        }
        "inspect" => {
            let subject: Subject = m.get_one::<String>("subject").expect("required").parse()?;
            let input = path(m, "input");
            let output = path(m, "output");
            let (text, files) = inspect(subject, &cfg, input.as_deref(), output.as_deref())?;
            print!("{text}");
            for f in files {
                log::info!("wrote {}", f.display());
            }
        }
        _ => unreachable!("clap rejects unknown subcommands"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or(LOG_ENV, "info")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
