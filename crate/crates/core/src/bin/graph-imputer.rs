fn main() {
    std::process::exit(graph_imputer::cli::run(std::env::args_os()));
}
