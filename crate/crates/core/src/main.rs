// SPDX-License-Identifier: Apache-2.0

fn main() {
    std::process::exit(fwdstate::cli::cli_main(std::env::args_os()));
}
