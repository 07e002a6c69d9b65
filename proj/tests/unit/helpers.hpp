// Copyright 2026 The vcmil Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "vcmil/data.hpp"
#include "vcmil/ops.hpp"
#include "vcmil/tensor.hpp"

namespace vcmil::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double sd = 1.0,
                            bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sd);
  std::vector<float> v(shape_numel(shape));
  for (float& x : v) x = static_cast<float>(dist(rng));
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<float> values(const Tensor& t) {
  return {t.data().begin(), t.data().end()};
}

inline std::vector<float> values_of_grad(const Tensor& t) {
  if (!t.has_grad()) return std::vector<float>(t.numel(), 0.0f);
  return {t.grad().begin(), t.grad().end()};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& name)
      : path_(std::filesystem::temp_directory_path() / ("vcmil_unit_" + name)) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

// Central differences of L = sum_i w_i y_i, y = f(inputs), with fixed random
// weights w, against the tape gradient of the same L. Entries pass when
// |a - n| <= max(rel_tol * max(|a|, |n|), abs_floor).
inline void check_gradient(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                           std::vector<Tensor> inputs, double h = 1e-3,
                           double rel_tol = 1e-2, double abs_floor = 1e-4) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  const Tensor y = f(inputs);
  const Tensor w = random_tensor(y.shape(), 99);
  backward(sum(mul(y, w)));

  auto weighted = [&] {
    NoGradGuard guard;
    const Tensor out = f(inputs);
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      acc += static_cast<double>(out.data()[i]) * w.data()[i];
    }
    return acc;
  };
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const std::vector<float> analytic = values_of_grad(inputs[k]);
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float orig = data[i];
      const float up = static_cast<float>(orig + h);
      const float down = static_cast<float>(orig - h);
      data[i] = up;
      const double lp = weighted();
      data[i] = down;
      const double lm = weighted();
      data[i] = orig;
      const double numeric = (lp - lm) / (static_cast<double>(up) - down);
      const double a = analytic[i];
      const double err = std::abs(a - numeric);
      const double bound = std::max(rel_tol * std::max(std::abs(a), std::abs(numeric)), abs_floor);
      INFO("input " << k << " entry " << i << ": analytic " << a << ", numeric " << numeric);
      CHECK(err <= bound);
    }
  }
}

}  // namespace vcmil::testing
