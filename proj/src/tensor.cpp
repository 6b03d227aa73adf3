#include "cgir/tensor.hpp"

#include <cmath>

namespace cgir {

Scalar max_abs(const Tensor& t) {
  Scalar m = 0.0;
  const Scalar* p = t.data();
  for (int64_t i = 0; i < t.numel(); ++i) m = std::max(m, std::abs(p[i]));
  return m;
}

Scalar max_abs_diff(const Tensor& a, const Tensor& b) {
  check_shape(a.shape() == b.shape(), "max_abs_diff: shape mismatch " +
                                          shape_str(a.shape()) + " vs " +
                                          shape_str(b.shape()));
  Scalar m = 0.0;
  const Scalar* pa = a.data();
  const Scalar* pb = b.data();
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(pa[i] - pb[i]));
  return m;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(Scalar) * static_cast<size_t>(a.numel())) == 0;
}

}  // namespace cgir
