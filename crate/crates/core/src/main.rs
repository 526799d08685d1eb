fn main() {
    std::process::exit(agpca_core::cli::main_exit_code());
}
