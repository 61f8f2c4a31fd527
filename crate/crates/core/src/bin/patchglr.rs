fn main() {
    std::process::exit(patchglr::cli::main_with_args(std::env::args_os()));
}
