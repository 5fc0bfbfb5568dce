//! Experiment CLI.
//!
//! Verbs:
//!   run <config> [--override key=value ...] [--parallel-seeds N]
//!   baseline <config> [--override key=value ...] [--parallel-seeds N]
//!   scatter <checkpoint> <data> <out>
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use triplet_ssl::config::parse_config_file;
use triplet_ssl::data::{dataset_from_csv, load_idx, Dataset};
use triplet_ssl::net::{load_checkpoint, AnyModel};
use triplet_ssl::runner::{run, run_baseline, SummaryRow};
use triplet_ssl::scatter::emit_scatter;
use triplet_ssl::Error;

const USAGE: &str = "\
usage:
  triplet-ssl run <config> [--override key=value ...] [--parallel-seeds N]
  triplet-ssl baseline <config> [--override key=value ...] [--parallel-seeds N]
  triplet-ssl scatter <checkpoint> <data> <out>

<data> for scatter is either `images.idx,labels.idx` or a dataset .csv file.
Relative run output dirs resolve under $TRIPLET_SSL_OUT when set.
";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    match dispatch(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Argument(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}

fn dispatch(args: &[String]) -> Result<(), Error> {
    let Some(verb) = args.first() else {
        eprint!("{USAGE}");
        return Err(Error::Config("missing verb".into()));
    };
    match verb.as_str() {
        "run" => {
            let (config, parallel) = parse_run_args(&args[1..])?;
            let rows = run(&config, parallel)?;
            print_summary(&rows);
            Ok(())
        }
        "baseline" => {
            let (config, parallel) = parse_run_args(&args[1..])?;
            let rows = run_baseline(&config, parallel)?;
            print_summary(&rows);
            Ok(())
        }
        "scatter" => {
            if args.len() != 4 {
                eprint!("{USAGE}");
                return Err(Error::Config("scatter takes <checkpoint> <data> <out>".into()));
            }
            scatter_verb(Path::new(&args[1]), &args[2], Path::new(&args[3]))
        }
        "--help" | "-h" | "help" => {
            print!("{USAGE}");
            Ok(())
        }
        other => {
            eprint!("{USAGE}");
            Err(Error::Config(format!("unknown verb {other:?}")))
        }
    }
}

fn parse_run_args(args: &[String]) -> Result<(triplet_ssl::config::RunConfig, usize), Error> {
    let Some(config_path) = args.first() else {
        eprint!("{USAGE}");
        return Err(Error::Config("missing config path".into()));
    };
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut parallel = 1usize;
    let mut rest = args[1..].iter();
    while let Some(flag) = rest.next() {
        match flag.as_str() {
            "--override" => {
                let pair = rest
                    .next()
                    .ok_or_else(|| Error::Config("--override needs key=value".into()))?;
                let (key, value) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad override {pair:?}")))?;
                overrides.push((key.trim().to_string(), value.trim().to_string()));
            }
            "--parallel-seeds" => {
                let n = rest
                    .next()
                    .ok_or_else(|| Error::Config("--parallel-seeds needs a count".into()))?;
                parallel = n
                    .parse()
                    .map_err(|_| Error::Config(format!("bad seed parallelism {n:?}")))?;
            }
            other => return Err(Error::Config(format!("unknown flag {other:?}"))),
        }
    }
    let config = parse_config_file(Path::new(config_path), &overrides)?;
    Ok((config, parallel))
}

fn print_summary(rows: &[SummaryRow]) {
    for row in rows {
        println!(
            "{}: {:.2} +/- {:.2} % test error over {} seed(s)",
            row.arm, row.mean_test_error_pct, row.std_test_error_pct, row.n_seeds
        );
    }
}

fn load_scatter_dataset(spec: &str) -> Result<Dataset, Error> {
    if let Some((images, labels)) = spec.split_once(',') {
        load_idx(Path::new(images.trim()), Path::new(labels.trim()))
    } else if spec.ends_with(".csv") {
        let file = std::fs::File::open(spec)?;
        dataset_from_csv(file)
    } else {
        Err(Error::Config(format!(
            "scatter data {spec:?} is neither `images,labels` nor a .csv file"
        )))
    }
}

fn scatter_verb(checkpoint: &Path, data: &str, out: &Path) -> Result<(), Error> {
    let dataset = load_scatter_dataset(data)?;
    let (csv_path, svg_path) = scatter_paths(out);
    match load_checkpoint(checkpoint)? {
        AnyModel::F32(model) => emit_scatter(&model, &dataset, &csv_path, &svg_path),
        AnyModel::F64(model) => emit_scatter(&model, &dataset, &csv_path, &svg_path),
    }?;
    println!("wrote {} and {}", csv_path.display(), svg_path.display());
    Ok(())
}

fn scatter_paths(out: &Path) -> (PathBuf, PathBuf) {
    if out.extension().is_some_and(|e| e == "csv") {
        (out.to_path_buf(), out.with_extension("svg"))
    } else {
        let mut csv = out.as_os_str().to_owned();
        csv.push(".csv");
        let mut svg = out.as_os_str().to_owned();
        svg.push(".svg");
        (PathBuf::from(csv), PathBuf::from(svg))
    }
}
