#include "metatune/allocator.hpp"
#include "metatune/cli/commands.hpp"

int main(int argc, char** argv) {
  metatune::tune_allocator();
  return metatune::cli::run(argc, argv);
}
