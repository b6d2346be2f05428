use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mutsel::app::{self, Failure, Vary};
use mutsel::certificates::CertificateReport;

#[derive(Parser)]
#[command(
    name = "mutsel",
    version,
    about = "Mutation-selection dynamics under a moving optimum"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run to t_final and write trajectory, snapshots and certificates.
    Simulate { config: PathBuf },
    /// Evaluate the a-priori constants and initial-data checks without stepping.
    Certify { config: PathBuf },
    /// Simulate, then write lag and moving-frame distances to wave.csv.
    Wave { config: PathBuf },
    /// Independent runs over a parameter range, in parallel.
    Sweep {
        config: PathBuf,
        /// `key=lo:hi:n`
        #[arg(long)]
        vary: String,
    },
}

fn print_report(report: &CertificateReport) {
    let k = &report.constants;
    println!("R = {}", k.r_phi0);
    println!("C(T) = {} (ln C = {})", k.c_final, k.ln_c_final);
    println!("dbar budget = {}", k.dbar_budget);
    for r in &report.records {
        let status = if r.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<28} bound {:<14e} observed {:e}",
            r.name, r.bound, r.observed
        );
    }
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { config } => {
            let (_, cfg) = app::load_config(&config)?;
            let out = app::simulate(&cfg)?;
            print_report(&out.report);
        }
        Command::Certify { config } => {
            let (_, cfg) = app::load_config(&config)?;
            print_report(&app::certify(&cfg)?);
        }
        Command::Wave { config } => {
            let (_, cfg) = app::load_config(&config)?;
            let (_, wave) = app::wave(&cfg)?;
            match wave.converged_at {
                Some(t) => println!("profile settled below {} from t = {t}", wave.threshold),
                None => println!("profile did not settle below {}", wave.threshold),
            }
        }
        Command::Sweep { config, vary } => {
            let (raw, _) = app::load_config(&config)?;
            let vary = Vary::parse(&vary)?;
            let points = app::sweep(&raw, &vary)?;
            for p in &points {
                match &p.result {
                    Ok(()) => println!("{} = {}: ok ({})", vary.key, p.value, p.dir.display()),
                    Err(e) => println!("{} = {}: {e}", vary.key, p.value),
                }
            }
            let code = app::sweep_exit_code(&points);
            if code != app::EXIT_OK {
                std::process::exit(code);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
