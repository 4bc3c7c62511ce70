// Writes the procedural colored-patch toy dataset as PNG files.
//   make_toy_dataset <root> [per_class=8] [side=120] [seed=0]

#include <cstdlib>
#include <iostream>
#include <string>

#include "leafbench/toy.hpp"

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: make_toy_dataset <root> [per_class] [side] [seed]\n";
    return 2;
  }
  const std::size_t per_class = argc > 2 ? std::stoul(argv[2]) : 8;
  const std::size_t side = argc > 3 ? std::stoul(argv[3]) : 120;
  const std::uint64_t seed = argc > 4 ? std::stoull(argv[4]) : 0;
  try {
    const auto pairs = leafbench::toy::default_pairs();
    leafbench::toy::write_dataset(argv[1], pairs, per_class, side, seed);
    std::cout << pairs.size() * per_class << " images written under " << argv[1] << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
