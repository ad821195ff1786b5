fn main() {
    std::process::exit(eegdecode::cli::main_from(std::env::args_os()));
}
