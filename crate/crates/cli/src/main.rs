use clap::{Parser, Subcommand};
use shardba_cli::{cmd_generate, cmd_solve, exit, GenerateArgs, SolveArgs};

#[derive(Parser)]
#[command(name = "shardba", version, about = "Multi-worker bundle adjustment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a BAL problem and emit a JSON run report
    Solve(SolveArgs),
    /// Write a seeded synthetic scene as a BAL file
    Generate(GenerateArgs),
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::INPUT
            } else {
                exit::OK
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli.command {
        Command::Solve(args) => match cmd_solve(&args) {
            Ok((report, code)) => {
                if let Some(err) = &report.error {
                    log::error!("solver failed: {err}");
                }
                code
            }
            Err(e) => {
                log::error!("{:#}", e.error);
                e.code
            }
        },
        Command::Generate(args) => match cmd_generate(&args) {
            Ok(_) => exit::OK,
            Err(e) => {
                log::error!("{:#}", e.error);
                e.code
            }
        },
    };
    std::process::exit(code);
}
