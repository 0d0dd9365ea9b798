fn main() {
    std::process::exit(sparsemix::cli::main_entry());
}
