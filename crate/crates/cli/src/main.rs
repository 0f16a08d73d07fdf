fn main() {
    std::process::exit(eventgc_cli::run(std::env::args_os()));
}
