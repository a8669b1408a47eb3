fn main() {
    std::process::exit(arch_cli::main_with(std::env::args_os()));
}
