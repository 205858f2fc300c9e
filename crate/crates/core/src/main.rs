fn main() {
    std::process::exit(kidney_phenotype::cli::run(std::env::args_os()));
}
