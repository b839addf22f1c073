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

#include "ksm/autodiff.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "ksm/errors.hpp"
#include "ksm/kernels.hpp"

namespace ksm::ad {

const Mat& Var::value() const { return tape_->value(id_); }
const Mat& Var::grad() const { return tape_->grad(id_); }

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw UsageError("scalar() on a non-scalar node");
  return v(0, 0);
}

Var Tape::constant(Mat value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Tensor& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{p.values, Mat(), nullptr, &p, true});
  std::size_t id = nodes_.size() - 1;
  param_nodes_.emplace(&p, id);
  return Var(this, id);
}

Var Tape::record(Mat value, std::initializer_list<Var> inputs, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backprop));
}

Var Tape::record(Mat value, std::span<const Var> inputs, Backprop backprop) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape() != this) throw UsageError("op inputs recorded on a different tape");
    needs = needs || nodes_[v.id()].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs ? std::move(backprop) : nullptr, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Mat& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.rows() != n.value.rows() || n.grad.cols() != n.value.cols()) {
    n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::accumulate(std::size_t id, const Mat& delta) { accumulate_expr(id, delta); }

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw UsageError("loss belongs to a different tape");
  if (nodes_[loss.id()].value.size() != 1) throw UsageError("backward requires a scalar loss");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id()].needs_grad) {
    for (auto& [tensor, _] : param_nodes_) {
      if (!const_cast<Tensor*>(tensor)->has_grad()) const_cast<Tensor*>(tensor)->zero_grad();
    }
    return;
  }
  grad_slot(loss.id())(0, 0) = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backprop || n.grad.size() == 0) continue;
    n.backprop(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.param) continue;
    if (!n.param->has_grad()) n.param->zero_grad();
    if (n.grad.size() != 0) n.param->grad += n.grad;
  }
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (!a.valid() || a.tape() != b.tape()) throw UsageError("op inputs must share a tape");
  return *a.tape();
}

void require_axis(int axis, const char* op) {
  if (axis != 0 && axis != 1) throw UsageError(std::string(op) + ": axis must be 0 or 1");
}

std::string dims(const Mat& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.rows()) throw UsageError("matmul: " + dims(a.value()) + " * " + dims(b.value()));
  std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, g * tp.value(ib).transpose());
    tp.accumulate_expr(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.cols() != b.cols()) throw UsageError("matmul_nt: " + dims(a.value()) + " * (" + dims(b.value()) + ")^T");
  std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, g * tp.value(ib));
    tp.accumulate_expr(ib, g.transpose() * tp.value(ia));
  });
}

Var transpose(const Var& a) {
  std::size_t ia = a.id();
  return a.tape()->record(a.value().transpose(), {a},
                          [ia](Tape& tp, const Mat& g) { tp.accumulate_expr(ia, g.transpose()); });
}

Var add(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  std::size_t ia = a.id(), ib = b.id();
  if (a.rows() == b.rows() && a.cols() == b.cols()) {
    return t.record(a.value() + b.value(), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
      tp.accumulate_expr(ia, g);
      tp.accumulate_expr(ib, g);
    });
  }
  if (b.rows() == 1 && b.cols() == a.cols()) {
    Mat out = a.value().rowwise() + b.value().row(0);
    return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
      tp.accumulate_expr(ia, g);
      tp.accumulate_expr(ib, g.colwise().sum());
    });
  }
  throw UsageError("add: incompatible shapes " + dims(a.value()) + " and " + dims(b.value()));
}

Var sub(const Var& a, const Var& b) { return add(a, scale(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  Tape& t = same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError("mul: shapes differ " + dims(a.value()) + " vs " + dims(b.value()));
  }
  std::size_t ia = a.id(), ib = b.id();
  return t.record(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, g.cwiseProduct(tp.value(ib)));
    tp.accumulate_expr(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var scale(const Var& a, double factor) {
  std::size_t ia = a.id();
  return a.tape()->record(a.value() * factor, {a},
                          [ia, factor](Tape& tp, const Mat& g) { tp.accumulate_expr(ia, g * factor); });
}

Var tanh(const Var& a) {
  std::size_t ia = a.id();
  Mat y = a.value().array().tanh().matrix();
  auto cache = std::make_shared<Mat>(y);
  return a.tape()->record(std::move(y), {a}, [ia, cache](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, (g.array() * (1.0 - cache->array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  std::size_t ia = a.id();
  Mat y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto cache = std::make_shared<Mat>(y);
  return a.tape()->record(std::move(y), {a}, [ia, cache](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, (g.array() * cache->array() * (1.0 - cache->array())).matrix());
  });
}

Var relu(const Var& a) {
  std::size_t ia = a.id();
  return a.tape()->record(a.value().cwiseMax(0.0), {a}, [ia](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, (g.array() * (tp.value(ia).array() > 0.0).cast<double>()).matrix());
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Tape& t = *parts[0].tape();
  Eigen::Index rows = parts[0].rows(), cols = 0;
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw UsageError("concat_cols: row counts differ");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  Mat out(rows, cols);
  Eigen::Index off = 0;
  for (const Var& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  return t.record(std::move(out), parts, [ids, widths](Tape& tp, const Mat& g) {
    Eigen::Index o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      tp.accumulate_expr(ids[k], g.middleCols(o, widths[k]));
      o += widths[k];
    }
  });
}

Var mean(const Var& a, int axis) {
  require_axis(axis, "mean");
  std::size_t ia = a.id();
  Eigen::Index r = a.rows(), c = a.cols();
  if (axis == 0) {
    return a.tape()->record(a.value().colwise().mean(), {a}, [ia, r](Tape& tp, const Mat& g) {
      tp.accumulate_expr(ia, g.replicate(r, 1) / static_cast<double>(r));
    });
  }
  return a.tape()->record(a.value().rowwise().mean(), {a}, [ia, c](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, g.replicate(1, c) / static_cast<double>(c));
  });
}

Var max(const Var& a, int axis) {
  require_axis(axis, "max");
  std::size_t ia = a.id();
  const Mat& v = a.value();
  Eigen::Index n = axis == 0 ? v.cols() : v.rows();
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(n));
  Mat out = axis == 0 ? Mat(1, n) : Mat(n, 1);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index best;
    if (axis == 0) {
      out(0, k) = v.col(k).maxCoeff(&best);
    } else {
      out(k, 0) = v.row(k).maxCoeff(&best);
    }
    arg[static_cast<std::size_t>(k)] = best;
  }
  Eigen::Index r = v.rows(), c = v.cols();
  return a.tape()->record(std::move(out), {a}, [ia, arg, axis, r, c](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    for (std::size_t k = 0; k < arg.size(); ++k) {
      auto kk = static_cast<Eigen::Index>(k);
      if (axis == 0) {
        d(arg[k], kk) = g(0, kk);
      } else {
        d(kk, arg[k]) = g(kk, 0);
      }
    }
    tp.accumulate_expr(ia, d);
  });
}

Var sum(const Var& a) {
  std::size_t ia = a.id();
  Eigen::Index r = a.rows(), c = a.cols();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(std::move(out), {a}, [ia, r, c](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, Mat::Constant(r, c, g(0, 0)));
  });
}

Var softmax(const Var& a, int axis) {
  require_axis(axis, "softmax");
  std::size_t ia = a.id();
  Mat y = kernels::softmax(a.value(), axis);
  auto cache = std::make_shared<Mat>(y);
  return a.tape()->record(std::move(y), {a}, [ia, cache, axis](Tape& tp, const Mat& g) {
    const Mat& s = *cache;
    Mat gy = g.cwiseProduct(s);
    Mat d;
    if (axis == 1) {
      Eigen::VectorXd dots = gy.rowwise().sum();
      d = gy - (s.array().colwise() * dots.array()).matrix();
    } else {
      RowVec dots = gy.colwise().sum();
      d = gy - (s.array().rowwise() * dots.array()).matrix();
    }
    tp.accumulate_expr(ia, d);
  });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Tape& t = same_tape(x, gamma);
  if (beta.tape() != &t) throw UsageError("layer_norm: inputs on different tapes");
  if (gamma.value().size() != x.cols() || beta.value().size() != x.cols()) {
    throw UsageError("layer_norm: gamma/beta must match last axis " + std::to_string(x.cols()));
  }
  auto cache = std::make_shared<kernels::LayerNormCache<double>>(kernels::normalize_rows(x.value(), eps));
  RowVec gam = gamma.value().reshaped<Eigen::RowMajor>().transpose();
  RowVec bet = beta.value().reshaped<Eigen::RowMajor>().transpose();
  Mat y = (cache->normalized.array().rowwise() * gam.array()).rowwise() + bet.array();
  std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  Eigen::Index gr = gamma.rows(), gc = gamma.cols();
  return t.record(std::move(y), {x, gamma, beta}, [=](Tape& tp, const Mat& g) {
    const Mat& xhat = cache->normalized;
    RowVec gvals = tp.value(ig).reshaped<Eigen::RowMajor>().transpose();
    RowVec dgamma = g.cwiseProduct(xhat).colwise().sum();
    RowVec dbeta = g.colwise().sum();
    tp.accumulate_expr(ig, dgamma.reshaped<Eigen::RowMajor>(gr, gc));
    tp.accumulate_expr(ib, dbeta.reshaped<Eigen::RowMajor>(gr, gc));
    if (!tp.needs_grad(ix)) return;
    Mat dxhat = g.array().rowwise() * gvals.array();
    Mat dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index i = 0; i < dxhat.rows(); ++i) {
      double m1 = dxhat.row(i).mean();
      double m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
      dx.row(i) = cache->inv_std(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
    }
    tp.accumulate_expr(ix, dx);
  });
}

Var dropout(const Var& x, double rate, std::mt19937_64& rng, bool active) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout rate must lie in [0, 1)");
  if (!active || rate == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  std::size_t ix = x.id();
  Mat out = x.value().cwiseProduct(mask);
  return x.tape()->record(std::move(out), {x}, [ix, mask](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ix, g.cwiseProduct(mask));
  });
}

Var gather_rows(const Var& a, std::span<const Eigen::Index> index) {
  std::vector<Eigen::Index> idx(index.begin(), index.end());
  Mat out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.rows()) throw UsageError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = a.value().row(idx[k]);
  }
  std::size_t ia = a.id();
  Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {a}, [ia, idx, r, c](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    for (std::size_t k = 0; k < idx.size(); ++k) d.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    tp.accumulate_expr(ia, d);
  });
}

Var gather_cols(const Var& a, std::span<const Eigen::Index> index) {
  std::vector<Eigen::Index> idx(index.begin(), index.end());
  Mat out(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= a.cols()) throw UsageError("gather_cols: index out of range");
    out.col(static_cast<Eigen::Index>(k)) = a.value().col(idx[k]);
  }
  std::size_t ia = a.id();
  Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->record(std::move(out), {a}, [ia, idx, r, c](Tape& tp, const Mat& g) {
    Mat d = Mat::Zero(r, c);
    for (std::size_t k = 0; k < idx.size(); ++k) d.col(idx[k]) += g.col(static_cast<Eigen::Index>(k));
    tp.accumulate_expr(ia, d);
  });
}

Var repeat_rows(const Var& row, Eigen::Index rows) {
  if (row.rows() != 1) throw UsageError("repeat_rows expects a single row");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(rows), 0);
  return gather_rows(row, idx);
}

Var log(const Var& a, double floor) {
  std::size_t ia = a.id();
  Mat out = a.value().cwiseMax(floor).array().log().matrix();
  return a.tape()->record(std::move(out), {a}, [ia, floor](Tape& tp, const Mat& g) {
    const Mat& x = tp.value(ia);
    tp.accumulate_expr(ia, (g.array() * (x.array() > floor).cast<double>() / x.array().max(floor)).matrix());
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw UsageError("reshape: element count changes");
  std::size_t ia = a.id();
  Eigen::Index r = a.rows(), c = a.cols();
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return a.tape()->record(std::move(out), {a}, [ia, r, c](Tape& tp, const Mat& g) {
    tp.accumulate_expr(ia, Eigen::Map<const Mat>(g.data(), r, c));
  });
}

}  // namespace ksm::ad
