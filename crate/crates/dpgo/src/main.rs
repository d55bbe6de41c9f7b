fn main() {
    std::process::exit(dpgo::cli::main_with(std::env::args_os()));
}
