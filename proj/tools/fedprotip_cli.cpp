#include "fedprotip/cli.hpp"

int main(int argc, char** argv) {
  return fedprotip::harness::run_cli(argc, argv);
}
