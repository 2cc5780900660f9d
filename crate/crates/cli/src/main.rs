fn main() {
    std::process::exit(manistream_cli::run(std::env::args_os()));
}
