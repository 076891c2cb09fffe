use std::process::ExitCode;

fn main() -> ExitCode {
    let result =
        tailchain_cli::init_threads().and_then(|_| tailchain_cli::run_cli(std::env::args_os()));
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
                return ExitCode::from(if clap_err.use_stderr() { 2 } else { 0 });
            }
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
