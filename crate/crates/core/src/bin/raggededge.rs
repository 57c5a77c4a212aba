fn main() {
    std::process::exit(raggededge::cli::main_with(std::env::args_os()));
}
