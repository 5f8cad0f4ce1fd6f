use clap::Parser;

fn main() {
    let cli = beamfusion_cli::Cli::parse();
    if let Err(e) = beamfusion_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
