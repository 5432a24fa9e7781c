fn main() {
    std::process::exit(clamc::cli::run(std::env::args_os()));
}
