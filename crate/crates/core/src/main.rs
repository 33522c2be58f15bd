fn main() {
    std::process::exit(lattice_heavy::cli::main_with(std::env::args_os()));
}
