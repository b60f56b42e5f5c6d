use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod energy;
mod freqsel;
mod ml;
mod output;
mod phy;
mod run;

#[derive(Parser, Debug)]
#[command(name = "lorasim", version, about = "Frequency-agile multi-hop LoRa network simulator and tools")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file and export results.
    Run(run::RunArgs),
    /// Rank frequencies from a link-metrics CSV.
    Freqsel(freqsel::FreqselArgs),
    /// Cluster link intervals from a metrics CSV and label each cluster.
    Cluster(freqsel::ClusterArgs),
    /// Radio arithmetic: data rate, airtime, sensitivity, FCC check.
    Phy(phy::PhyArgs),
    /// Storage sizing or battery state-of-charge simulation.
    Energy(energy::EnergyArgs),
    /// Activation and weight memory of the embedding network.
    Footprint(ml::FootprintArgs),
    /// PCA plus linear-student sweep on an embedding matrix.
    SeaDemo(ml::SeaArgs),
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

/// Short category for the innermost library error in the chain.
fn error_kind(err: &anyhow::Error) -> &'static str {
    use lorasim::{energy, freqsel, harness, mac, mlmodel, netstack, phy};
    for cause in err.chain() {
        if cause.is::<harness::HarnessError>() {
            return "scenario";
        }
        if cause.is::<phy::PhyError>() {
            return "phy";
        }
        if cause.is::<freqsel::FreqselError>() {
            return "freqsel";
        }
        if cause.is::<energy::EnergyError>() {
            return "energy";
        }
        if cause.is::<mlmodel::MlError>() {
            return "mlmodel";
        }
        if cause.is::<mac::MacError>() {
            return "mac";
        }
        if cause.is::<netstack::gateway::GatewayError>() {
            return "gateway";
        }
        if cause.is::<csv::Error>() {
            return "csv";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "invalid_input"
}

/// Downstream closed the pipe (e.g. `| head`); not a failure.
fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io = c.downcast_ref::<std::io::Error>().or_else(|| match c.downcast_ref::<csv::Error>()?.kind() {
            csv::ErrorKind::Io(e) => Some(e),
            _ => None,
        });
        io.is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn report(err: &anyhow::Error) {
    let causes: Vec<String> = err.chain().skip(1).map(|c| c.to_string()).collect();
    let body = serde_json::json!({
        "error": error_kind(err),
        "message": err.to_string(),
        "causes": causes,
    });
    let _ = writeln!(std::io::stderr(), "{body}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Run(a) => run::main(a),
        Command::Freqsel(a) => freqsel::main(a),
        Command::Cluster(a) => freqsel::cluster(a),
        Command::Phy(a) => phy::main(a),
        Command::Energy(a) => energy::main(a),
        Command::Footprint(a) => ml::footprint(a),
        Command::SeaDemo(a) => ml::sea_demo(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
