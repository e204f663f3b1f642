// Copyright (C) 2026 avloc authors
// SPDX-License-Identifier: Apache-2.0
//

#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) { return avloc::cli::run(argc, argv, std::cout, std::cerr); }
