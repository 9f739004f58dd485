fn main() {
    std::process::exit(fragsim_cli::main_with(std::env::args_os()));
}
