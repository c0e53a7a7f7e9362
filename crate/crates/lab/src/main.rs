use anyhow::{Context, Result};
use clap::{value_parser, Arg, ArgMatches, Command};
use exitlab::config::{ConfigFile, Overrides};
use exitlab::experiments::Registry;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

fn common_args(cmd: Command) -> Command {
    cmd.arg(Arg::new("config").long("config").value_name("FILE").value_parser(value_parser!(PathBuf)).help("JSON config file"))
        .arg(Arg::new("seed").long("seed").value_parser(value_parser!(u64)).help("Master seed (default 0)"))
        .arg(Arg::new("replicas").long("replicas").value_parser(value_parser!(usize)).help("Replica count"))
        .arg(Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf)).help("Output directory"))
        .arg(Arg::new("dt").long("dt").value_parser(value_parser!(f64)).help("Largest path time step"))
        .arg(Arg::new("eps-mass").long("eps-mass").value_parser(value_parser!(f64)).help("Particle mass"))
        .arg(Arg::new("threads").long("threads").value_parser(value_parser!(usize)).help("Worker threads (default: all cores)"))
}

fn cli(reg: &Registry) -> Command {
    let mut cmd = Command::new("exitlab")
        .about("Runs exit-measure experiments and writes CSV and JSON reports")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for e in reg.iter() {
        cmd = cmd.subcommand(common_args(Command::new(e.name()).about(e.about())));
    }
    cmd
}

fn run(reg: &Registry, name: &str, m: &ArgMatches) -> Result<bool> {
    let exp = reg.get(name).context("unknown subcommand")?;
    let mut cfg = exp.defaults();
    if let Some(path) = m.get_one::<PathBuf>("config") {
        cfg = cfg.merge(ConfigFile::load(path)?);
    }
    let cfg = cfg.apply(&Overrides {
        seed: m.get_one("seed").copied(),
        replicas: m.get_one("replicas").copied(),
        out: m.get_one::<PathBuf>("out").cloned(),
        dt: m.get_one("dt").copied(),
        eps_mass: m.get_one("eps-mass").copied(),
    });
    let start = Instant::now();
    let report = match m.get_one::<usize>("threads") {
        Some(&t) => rayon::ThreadPoolBuilder::new().num_threads(t).build()?.install(|| reg.run(name, &cfg))?,
        None => reg.run(name, &cfg)?,
    };
    let elapsed = start.elapsed().as_secs_f64();
    let written = report.write(&cfg.out, Some(elapsed))?;
    for g in report.gates() {
        println!("{} {} ({} checks)", if g.pass { "PASS" } else { "FAIL" }, g.name, g.rows);
        for f in &g.failed {
            println!("    failed: {f}");
        }
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    println!("{name} finished in {elapsed:.1} s");
    Ok(report.passed())
}

fn main() -> ExitCode {
    let reg = Registry::standard();
    let matches = cli(&reg).get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand required");
    match run(&reg, name, sub) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
