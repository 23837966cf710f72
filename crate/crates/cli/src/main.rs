use clap::Parser;

fn main() -> anyhow::Result<()> {
    balfmm_cli::run(balfmm_cli::args::Cli::parse())
}
