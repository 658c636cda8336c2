// Copyright (c) 2026, fplab authors
// SPDX-License-Identifier: Apache-2.0

#include "fplab/cli.hpp"

int main(int argc, char** argv) { return fplab::cli::run(argc, argv); }
