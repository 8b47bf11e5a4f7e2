fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(demoire_cli::exit_code(demoire_cli::run(&args)));
}
