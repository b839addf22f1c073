// Copyright 2026 The KSM Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Reference implementations shared by the model tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ksm/gradcheck.hpp"
#include "ksm/model.hpp"

namespace ksm::testing {

using model::ModelConfig;

inline Mat random_mat(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline ParameterStore store_for(const ModelConfig& c, const std::string& prefix, std::uint64_t seed) {
  ParameterStore p;
  for (const auto& [name, shape] : parameter_layout(c)) {
    if (name.rfind(prefix, 0) == 0) p.add(name, shape);
  }
  gradcheck::randomize(p, seed);
  return p;
}

// Explicit-loop reference for one entity-conditioned block.
inline Mat oracle_block(const ParameterStore& p, const std::string& pre, const Mat& x, const RowVec& e,
                        const ModelConfig& c) {
  const Eigen::Index L = x.rows(), d = c.d, dkb = c.d_kb, dh = c.d_head;
  auto W = [&](const std::string& n) -> const Mat& { return p.at(pre + n).values; };
  Mat concat(L, c.n_heads * dh);
  for (int h = 0; h < c.n_heads; ++h) {
    const std::string tag = ".head" + std::to_string(h);
    const Mat &Wq = W(".Wq" + tag), &Wk = W(".Wk" + tag), &Wv = W(".Wv" + tag);
    std::vector<std::vector<double>> q(L, std::vector<double>(dh, 0.0)), k = q, v = q;
    for (Eigen::Index i = 0; i < L; ++i) {
      for (Eigen::Index a = 0; a < dh; ++a) {
        for (Eigen::Index t = 0; t < d; ++t) {
          q[i][a] += x(i, t) * Wq(t, a);
          k[i][a] += x(i, t) * Wk(t, a);
          v[i][a] += x(i, t) * Wv(t, a);
        }
        for (Eigen::Index t = 0; t < dkb; ++t) q[i][a] += e(t) * Wq(d + t, a);
      }
    }
    for (Eigen::Index i = 0; i < L; ++i) {
      std::vector<double> s(L);
      double mx = -1e300;
      for (Eigen::Index j = 0; j < L; ++j) {
        double dot = 0.0;
        for (Eigen::Index a = 0; a < dh; ++a) dot += q[i][a] * k[j][a];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& sj : s) z += (sj = std::exp(sj - mx));
      for (Eigen::Index a = 0; a < dh; ++a) {
        double acc = 0.0;
        for (Eigen::Index j = 0; j < L; ++j) acc += s[j] / z * v[j][a];
        concat(i, h * dh + a) = acc;
      }
    }
  }
  auto layer_norm = [&](const Mat& in, const Mat& g, const Mat& b) {
    Mat out(in.rows(), in.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
      double mean = 0.0, var = 0.0;
      for (Eigen::Index t = 0; t < in.cols(); ++t) mean += in(i, t);
      mean /= static_cast<double>(in.cols());
      for (Eigen::Index t = 0; t < in.cols(); ++t) var += (in(i, t) - mean) * (in(i, t) - mean);
      var /= static_cast<double>(in.cols());
      for (Eigen::Index t = 0; t < in.cols(); ++t) {
        out(i, t) = g(0, t) * (in(i, t) - mean) / std::sqrt(var + c.layer_norm_eps) + b(0, t);
      }
    }
    return out;
  };
  auto dense = [&](const Mat& in, const Mat& w, const Mat* b, bool relu) {
    Mat out(in.rows(), w.cols());
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
      for (Eigen::Index o = 0; o < w.cols(); ++o) {
        double acc = b ? (*b)(0, o) : 0.0;
        for (Eigen::Index t = 0; t < in.cols(); ++t) acc += in(i, t) * w(t, o);
        out(i, o) = relu ? std::max(acc, 0.0) : acc;
      }
    }
    return out;
  };
  Mat mh = dense(concat, W(".Wh"), nullptr, false);
  Mat sub = layer_norm(x + mh, W(".ln1.gamma"), W(".ln1.beta"));
  Mat hidden = dense(sub, W(".ffn.W1"), &W(".ffn.b1"), true);
  Mat ff = dense(hidden, W(".ffn.W2"), &W(".ffn.b2"), false);
  return layer_norm(sub + ff, W(".ln2.gamma"), W(".ln2.beta"));
}

}  // namespace ksm::testing
