use clap::Parser;

fn main() {
    let cli = seqvae::cli::Cli::parse();
    match seqvae::cli::execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
