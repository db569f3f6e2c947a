use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ldg_tensor::parallel::init();
    let cli = match ldgnet_train::cli::parse_args(std::env::args().collect()) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match ldgnet_train::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
