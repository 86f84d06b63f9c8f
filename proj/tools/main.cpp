#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  gnn::cli::Options options;
#ifdef GNN_TEST_HOOKS
  options.test_hooks = true;
#endif
  return gnn::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr, options);
}
