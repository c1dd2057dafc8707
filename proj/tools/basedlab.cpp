// Copyright 2026 The basedlab Authors
// SPDX-License-Identifier: Apache-2.0

#include "basedlab/cli.hpp"
#include "basedlab/platform.hpp"

int main(int argc, char** argv) {
  basedlab::tune_allocator();
  return basedlab::cli::run(argc, argv);
}
