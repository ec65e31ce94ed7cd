fn main() {
    std::process::exit(tempo_hcl::cli::run(std::env::args()));
}
