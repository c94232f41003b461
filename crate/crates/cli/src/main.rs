fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(incompat::cli_io::run_command(&args));
}
