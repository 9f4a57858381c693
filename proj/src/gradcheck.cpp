#include "nvsd/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace nvsd {

float finite_diff_check(const std::function<Tensor()>& f,
                        const std::vector<Tensor>& point, float step) {
  if (step == 0.0f) throw std::invalid_argument("finite_diff_check: step must be nonzero");

  for (const Tensor& t : point)
    const_cast<Tensor&>(t).zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) return std::numeric_limits<float>::infinity();
  backward(loss);

  std::vector<std::vector<float>> analytic;
  for (const Tensor& t : point) {
    if (!t.has_grad())
      throw std::runtime_error("finite_diff_check: point tensor has no gradient");
    analytic.push_back(t.grad());
  }

  float max_err = 0.0f;
  for (std::size_t ti = 0; ti < point.size(); ++ti) {
    auto& data = const_cast<Tensor&>(point[ti]).data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      float saved = data[j];
      data[j] = saved + step;
      float fp = f().item();
      data[j] = saved - step;
      float fm = f().item();
      data[j] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        return std::numeric_limits<float>::infinity();
      float fd = (fp - fm) / (2.0f * step);
      float an = analytic[ti][j];
      float err = std::fabs(fd - an) /
                  std::max({std::fabs(fd), std::fabs(an), 1.0f});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace nvsd
