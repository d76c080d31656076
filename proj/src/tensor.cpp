#include "mvfd/tensor.hpp"

#include <sstream>

namespace mvfd::numerics {

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    if (e == 0) fail_invalid(cat("tensor shape has zero extent: ", shape_str(shape)));
    n *= e;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> values)
    : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size())
    fail_invalid(cat("tensor data length ", data.size(), " does not match shape ",
                     shape_str(shape)));
}

}  // namespace mvfd::numerics
