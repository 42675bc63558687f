// SPDX-License-Identifier: Apache-2.0
#include "peftlab/cli.hpp"

int main(int argc, char** argv) { return peftlab::cli::run(argc, argv); }
