#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsplit/stack.hpp"
#include "fedsplit/tensor.hpp"

namespace fedsplit::nn {

// Weight blob layout, all integers little-endian:
//   magic "FSW1" | format version u32 | tensor count u32 |
//   per tensor: rank u32, dims u32 x rank, payload f64 (IEEE-754 bits).
// Round-trips are bit-exact.
std::vector<std::uint8_t> serialize_weights(const std::vector<Tensor>& tensors);
std::vector<std::uint8_t> serialize_weights(const LayerStack& stack);  // full state, incl. running stats
std::vector<Tensor> deserialize_weights(const std::vector<std::uint8_t>& blob);

void write_weights_file(const std::string& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_weights_file(const std::string& path);

} // namespace fedsplit::nn
