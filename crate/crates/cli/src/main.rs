fn main() {
    std::process::exit(g2t_cli::run(std::env::args_os()));
}
