fn main() {
    std::process::exit(lot_core::cli::main_with_args(std::env::args_os()));
}
