fn main() {
    std::process::exit(layerscale::cli::main());
}
