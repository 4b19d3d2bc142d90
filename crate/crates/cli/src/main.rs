use std::process::ExitCode;

use clap::Parser;
use dsoftki_cli::commands::{cmd_ablate, cmd_eval, cmd_grid, cmd_gradcheck, cmd_train, EvalSource};
use dsoftki_cli::{Cli, CliError, Command, DatasetSource};

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let r = cmd_train(&cfg)?;
            println!(
                "{}: value RMSE {:.6}, gradient RMSE {:.6}, NLL {:.4} ({} fallbacks, {:.1}s); outputs in {}",
                r.mode.name(),
                r.metrics.value_rmse,
                r.metrics.gradient_rmse,
                r.metrics.nll,
                r.fallbacks,
                r.wall_clock_seconds,
                cfg.out.display()
            );
        }
        Command::Eval(args) => {
            let source = EvalSource {
                dataset: DatasetSource::parse(&args.dataset),
                n: args.n,
                seed: args.seed,
            };
            let r = cmd_eval(&args.model, &source, args.out.as_deref())?;
            println!("{}", r.to_json());
        }
        Command::Gradcheck(args) => {
            let r = cmd_gradcheck(&args.resolve()?)?;
            for (group, err) in &r.groups {
                println!("{group:>15}  {err:.3e}");
            }
            if !r.pass {
                return Err(CliError::Numerical(format!(
                    "gradient check failed: max relative error {:.3e} > {:.0e}",
                    r.max_error, r.threshold
                )));
            }
            println!("max relative error {:.3e} (threshold {:.0e})", r.max_error, r.threshold);
        }
        Command::Ablate(args) => {
            let r = cmd_ablate(&args.resolve()?)?;
            println!(
                "per-point RMSE {:.6} NLL {:.4}; shared RMSE {:.6} NLL {:.4}; ΔRMSE {:+.6} ΔNLL {:+.4}",
                r.per_point.metrics.value_rmse,
                r.per_point.metrics.nll,
                r.shared.metrics.value_rmse,
                r.shared.metrics.nll,
                r.delta_rmse,
                r.delta_nll
            );
        }
        Command::Grid(args) => {
            let path = cmd_grid(&args.model, args.x_range, args.y_range, args.steps, &args.out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
