fn main() {
    std::process::exit(koopman_enmpc_cli::main_with_args(std::env::args_os()));
}
