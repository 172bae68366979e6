fn main() {
    std::process::exit(markov_ldp::cli::main_from(std::env::args_os()));
}
