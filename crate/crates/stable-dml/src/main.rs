fn main() { std::process::exit(stable_dml::cli::run()) }
