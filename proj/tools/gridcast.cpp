#include <malloc.h>

#include <iostream>

#include "gridcast/cli.hpp"

int main(int argc, char** argv) {
  // Keep large activation buffers on the heap instead of fresh mmaps each step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return gridcast::run_cli(argc, argv, std::cout, std::cerr);
}
