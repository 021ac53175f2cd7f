use std::process::ExitCode;

fn main() -> ExitCode {
    match omnidist::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            // One machine-parsable line; usage errors exit 2 via clap.
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
