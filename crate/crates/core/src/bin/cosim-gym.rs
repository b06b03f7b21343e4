fn main() {
    std::process::exit(cosim_gym::cli::main_with_args(std::env::args_os()));
}
