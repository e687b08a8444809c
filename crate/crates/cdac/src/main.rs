//! Experiment runner binary: `cdac run|sweep|compare`.

use std::path::PathBuf;
use std::process::ExitCode;

use cdac::cli;

const USAGE: &str = "\
usage:
  cdac run <config>                 execute one experiment config
  cdac sweep <config> --ablations   run the ablation grid of a config
  cdac compare <metrics.csv...> [--csv <out>]
                                    tabulate final/best accuracy across runs

Relative output directories resolve against $CDAC_OUTPUT_ROOT when set.";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}\n\n{USAGE}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

fn dispatch(args: &[String]) -> Result<(), Failure> {
    match args.first().map(String::as_str) {
        Some("run") => {
            let [config] = &args[1..] else {
                return Err(Failure::Usage("run takes exactly one config path".into()));
            };
            let (artifacts, report) =
                cli::run_from_file(&PathBuf::from(config)).map_err(runtime)?;
            println!(
                "final accuracy {:.4}, best {:.4}",
                report.metrics.final_accuracy, report.metrics.best_accuracy
            );
            println!("artifacts in {}", artifacts.out_dir.display());
            Ok(())
        }
        Some("sweep") => {
            let (configs, flags): (Vec<&String>, Vec<&String>) =
                args[1..].iter().partition(|a| !a.starts_with("--"));
            if !flags.iter().any(|f| *f == "--ablations") {
                return Err(Failure::Usage("sweep requires the --ablations flag".into()));
            }
            let [config] = configs[..] else {
                return Err(Failure::Usage("sweep takes exactly one config path".into()));
            };
            let text = std::fs::read_to_string(config).map_err(runtime)?;
            let parsed = cdac::config::parse_config(&text).map_err(runtime)?;
            let rows = cli::sweep(&parsed).map_err(runtime)?;
            for (name, artifacts) in rows {
                println!("{name}: {}", artifacts.metrics_csv.display());
            }
            Ok(())
        }
        Some("compare") => {
            let mut files = Vec::new();
            let mut csv_out: Option<PathBuf> = None;
            let mut rest = args[1..].iter();
            while let Some(a) = rest.next() {
                if a == "--csv" {
                    let path = rest
                        .next()
                        .ok_or_else(|| Failure::Usage("--csv needs a path".into()))?;
                    csv_out = Some(PathBuf::from(path));
                } else {
                    files.push(PathBuf::from(a));
                }
            }
            let comparison = cli::compare(&files).map_err(runtime)?;
            print!("{}", comparison.to_text());
            if let Some(path) = csv_out {
                std::fs::write(&path, comparison.to_csv()).map_err(runtime)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Some(other) => Err(Failure::Usage(format!("unknown command `{other}`"))),
        None => Err(Failure::Usage("missing command".into())),
    }
}
