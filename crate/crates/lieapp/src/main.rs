use std::process::ExitCode;

use clap::Parser;
use lieapp::cli::{extract_tolerances, output_path, run, Cli};
use lieapp::io::write_text;

fn main() -> ExitCode {
    if let Some(n) = std::env::var("LIEAPP_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let argv: Vec<String> = std::env::args().collect();
    let (rest, tol) = match extract_tolerances(argv.clone()) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::try_parse_from(&rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (report, err, strict) = run(&cli, &tol, argv);
    let json = report.to_json();
    match output_path(&cli) {
        Some(p) => {
            if let Err(e) = write_text(p, &json) {
                eprintln!("error: {e}");
                return ExitCode::from(e.exit_code() as u8);
            }
            print!("{}", report.summary());
        }
        None => println!("{json}"),
    }
    if let Some(e) = err {
        eprintln!("error: {e}");
        return ExitCode::from(e.exit_code() as u8);
    }
    if strict && !report.all_pass() {
        eprintln!("error: {} check(s) failed", report.checks.iter().filter(|c| !c.pass).count());
        return ExitCode::from(4);
    }
    ExitCode::SUCCESS
}
