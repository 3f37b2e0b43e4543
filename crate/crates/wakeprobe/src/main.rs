use std::collections::HashMap;

fn main() {
    let env: HashMap<String, String> = std::env::vars().collect();
    std::process::exit(wakeprobe::cli::parse_and_dispatch(std::env::args_os(), &env));
}
