fn main() {
    std::process::exit(vnn::cli::cli_main(std::env::args_os()));
}
