/*
 * SPDX-License-Identifier: Apache-2.0
 */
#include "vdg/cli.hpp"

int main(int argc, char** argv) { return vdg::cli::run(argc, argv); }
