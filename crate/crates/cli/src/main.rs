use clap::Parser;

fn main() {
    let cli = swsense_cli::Cli::parse();
    match swsense_cli::run(&cli) {
        Ok(res) => {
            for p in &res.artifact_paths {
                eprintln!("wrote {}", p.display());
            }
            std::process::exit(res.exit_code);
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
