#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmt/nn.hpp"

namespace dmt {

// Flat binary tensor container.
//
// Layout: magic "DMTW", version u32, then per-tensor records until EOF:
//   name_len u32 | name bytes | ndims u32 | dims u32[ndims] | f64[prod(dims)]
// All integers and floats little-endian. Round trips are bit-exact.

struct NamedTensor {
  std::vector<int> shape;
  std::vector<double> data;
};

using TensorMap = std::map<std::string, NamedTensor>;

void save_weights(const std::string& path, const std::vector<TensorRef>& tensors,
                  const TensorMap& extra = {});
TensorMap load_weights(const std::string& path);

// Copies loaded values into the registered tensors; every ref must be present
// with a matching shape. Returns the names that were consumed.
std::vector<std::string> assign_weights(const TensorMap& loaded, std::vector<TensorRef>& refs);

}  // namespace dmt
