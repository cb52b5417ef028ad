fn main() {
    std::process::exit(agentseal_cli::main_with(std::env::args_os()));
}
