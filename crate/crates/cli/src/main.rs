fn main() {
    std::process::exit(dyndepth_cli::main_with_args(std::env::args_os()));
}
