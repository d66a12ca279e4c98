#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "nl2sql/tensor.hpp"

namespace nl2sql::testing {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.at(i, j);
  return m;
}

struct Oracle {
  Mat m, fwd, bwd;
};

// Plain loops over M = S1 W S2^T, the row softmax for the forward part and the
// column-max softmax for the backward part.
inline Oracle scalar_biattention(const Mat& s1, const Mat& s2, const Mat& w) {
  const std::size_t k1 = s1.size(), k2 = s2.size(), h = w.size();
  Oracle o;
  o.m.assign(k1, std::vector<double>(k2, 0.0));
  for (std::size_t i = 0; i < k1; ++i)
    for (std::size_t j = 0; j < k2; ++j)
      for (std::size_t a = 0; a < h; ++a)
        for (std::size_t b = 0; b < h; ++b) o.m[i][j] += s1[i][a] * w[a][b] * s2[j][b];

  o.fwd.assign(k1, std::vector<double>(h, 0.0));
  for (std::size_t i = 0; i < k1; ++i) {
    const double mx = *std::max_element(o.m[i].begin(), o.m[i].end());
    double z = 0.0;
    for (std::size_t j = 0; j < k2; ++j) z += std::exp(o.m[i][j] - mx);
    for (std::size_t j = 0; j < k2; ++j) {
      const double p = std::exp(o.m[i][j] - mx) / z;
      for (std::size_t a = 0; a < h; ++a) o.fwd[i][a] += p * s1[i][a];
    }
  }

  std::vector<double> colmax(k2, -INFINITY);
  for (std::size_t j = 0; j < k2; ++j)
    for (std::size_t i = 0; i < k1; ++i) colmax[j] = std::max(colmax[j], o.m[i][j]);
  const double mx = *std::max_element(colmax.begin(), colmax.end());
  double z = 0.0;
  for (double v : colmax) z += std::exp(v - mx);
  std::vector<double> summary(h, 0.0);
  for (std::size_t j = 0; j < k2; ++j)
    for (std::size_t a = 0; a < h; ++a) summary[a] += std::exp(colmax[j] - mx) / z * s2[j][a];
  o.bwd.assign(k1, std::vector<double>(h));
  for (std::size_t i = 0; i < k1; ++i)
    for (std::size_t a = 0; a < h; ++a) o.bwd[i][a] = summary[a] * s1[i][a];
  return o;
}

inline double max_diff(const Tensor& t, const Mat& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) worst = std::max(worst, std::abs(t.at(i, j) - m[i][j]));
  return worst;
}

}  // namespace nl2sql::testing
