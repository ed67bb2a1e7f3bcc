fn main() {
    std::process::exit(hycomp::cli::main_with(std::env::args_os()));
}
