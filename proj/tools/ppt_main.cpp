// SPDX-License-Identifier: Apache-2.0
#include "ppt/evaluation.hpp"

int main(int argc, char** argv) { return ppt::run_cli(argc, argv); }
