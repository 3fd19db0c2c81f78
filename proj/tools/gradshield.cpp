#include <iostream>

#include "gradshield/cli.hpp"

#ifndef GRADSHIELD_DEFAULT_MNIST_DIR
#define GRADSHIELD_DEFAULT_MNIST_DIR ""
#endif

int main(int argc, char** argv) {
  return gradshield::cli::run(argc, argv, std::cout, std::cerr, GRADSHIELD_DEFAULT_MNIST_DIR);
}
