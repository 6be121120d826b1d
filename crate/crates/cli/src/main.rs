fn main() {
    std::process::exit(methylgraph_cli::run(std::env::args_os()));
}
