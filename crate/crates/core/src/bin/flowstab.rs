fn main() {
    flowstab::cli::init_logging();
    std::process::exit(flowstab::cli::main_with_args(std::env::args_os()));
}
