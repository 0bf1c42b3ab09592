fn main() {
    std::process::exit(phs_lab::run(std::env::args_os()));
}
