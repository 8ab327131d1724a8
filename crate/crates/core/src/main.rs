fn main() {
    std::process::exit(flexgcn::cli::run(std::env::args_os()));
}
