#include <malloc.h>

#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  // Training allocates and frees tens of megabytes per layer and batch; keep
  // those blocks on the heap instead of a fresh mmap (and page faults) each time.
  mallopt(M_MMAP_THRESHOLD, 512 << 20);
  mallopt(M_TRIM_THRESHOLD, 1024 << 20);

  std::vector<std::string> args(argv + 1, argv + argc);
  return lmda::cli::run(args, std::cout, std::cerr);
}
