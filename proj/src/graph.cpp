// Copyright 2026 The Codistill Authors
// SPDX-License-Identifier: Apache-2.0

#include "codistill/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "codistill/error.hpp"

namespace codistill {
namespace {

// Sum of |x| below which a SWAP unit is treated as all-zero.
constexpr double kSwapDegenerate = 1e-12;

using Inputs = std::vector<const Tensor*>;

std::string describe(Op op, const Inputs& in) {
  std::string out(op_name(op));
  out += "(";
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (i) out += ", ";
    out += to_string(in[i]->shape());
  }
  return out + ")";
}

void require_arity(Op op, const Inputs& in, std::size_t n) {
  if (in.size() != n) {
    throw ShapeError(std::string(op_name(op)) + ": expected " + std::to_string(n) +
                     " inputs, got " + std::to_string(in.size()));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

Shape broadcast_shape(Op op, const Inputs& in) {
  const Shape& a = in[0]->shape();
  const Shape& b = in[1]->shape();
  if (a == b) return a;
  if (a.size() >= b.size() && is_suffix(b, a)) return a;
  if (b.size() > a.size() && is_suffix(a, b)) return b;
  throw ShapeError(describe(op, in) + ": shapes not aligned on trailing axes");
}

std::size_t resolve_axis(Op op, const Shape& shape, int axis) {
  if (axis < 0 || static_cast<std::size_t>(axis) >= shape.size()) {
    throw ShapeError(std::string(op_name(op)) + ": axis " + std::to_string(axis) +
                     " invalid for shape " + to_string(shape));
  }
  return static_cast<std::size_t>(axis);
}

// Splits a shape around `axis` into (outer, extent, inner) element counts.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

double sigmoid_of(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double sign_of(double x) { return (x > 0) - (x < 0); }

template <typename F>
std::vector<double> map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.size());
  auto d = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(d[i]);
  return out;
}

Tensor compute(Op op, const Inputs& in, const OpAttrs& attrs) {
  switch (op) {
    case Op::kConstant:
    case Op::kParameter:
      throw Error("compute: leaf nodes carry their own values");

    case Op::kMatMul: {
      require_arity(op, in, 2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError(describe(op, in) + ": inner dimensions differ");
      }
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      std::vector<double> out(m * n, 0.0);
      auto ad = a.data();
      auto bd = b.data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = ad[i * k + p];
          for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
        }
      }
      return Tensor({m, n}, std::move(out));
    }

    case Op::kAdd:
    case Op::kSubtract:
    case Op::kMultiply:
    case Op::kDivide: {
      require_arity(op, in, 2);
      Shape shape = broadcast_shape(op, in);
      const std::size_t n = element_count(shape);
      auto ad = in[0]->data();
      auto bd = in[1]->data();
      const std::size_t na = ad.size(), nb = bd.size();
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = ad[i % na];
        const double y = bd[i % nb];
        switch (op) {
          case Op::kAdd: out[i] = x + y; break;
          case Op::kSubtract: out[i] = x - y; break;
          case Op::kMultiply: out[i] = x * y; break;
          default:
            if (y == 0.0) throw DomainError(describe(op, in) + ": division by zero");
            out[i] = x / y;
        }
      }
      return Tensor(std::move(shape), std::move(out));
    }

    case Op::kAbs:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], [](double v) { return std::abs(v); }));
    case Op::kSquare:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], [](double v) { return v * v; }));
    case Op::kSqrt:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], [&](double v) {
                      if (v < 0) throw DomainError(describe(op, in) + ": negative input");
                      return std::sqrt(v);
                    }));
    case Op::kExp: {
      require_arity(op, in, 1);
      auto out = map_unary(*in[0], [](double v) { return std::exp(v); });
      require_finite(out, describe(op, in));
      return Tensor(in[0]->shape(), std::move(out));
    }
    case Op::kLog:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], [&](double v) {
                      if (v <= 0) throw DomainError(describe(op, in) + ": non-positive input");
                      return std::log(v);
                    }));
    case Op::kRelu:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], [](double v) { return v > 0 ? v : 0.0; }));
    case Op::kRelu6:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(),
                    map_unary(*in[0], [](double v) { return std::clamp(v, 0.0, 6.0); }));
    case Op::kSigmoid:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(), map_unary(*in[0], sigmoid_of));
    case Op::kClampMin:
      require_arity(op, in, 1);
      return Tensor(in[0]->shape(),
                    map_unary(*in[0], [&](double v) { return std::max(v, attrs.scalar); }));

    case Op::kSoftmax: {
      require_arity(op, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() == 0) throw ShapeError(describe(op, in) + ": needs at least one axis");
      const std::size_t cols = x.shape().back();
      const std::size_t rows = cols ? x.size() / cols : 0;
      auto d = x.data();
      std::vector<double> out(x.size());
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = d.data() + r * cols;
        const double mx = *std::max_element(row, row + cols);
        double total = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          out[r * cols + c] = std::exp(row[c] - mx);
          total += out[r * cols + c];
        }
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= total;
      }
      return Tensor(x.shape(), std::move(out));
    }

    case Op::kReduceSum:
    case Op::kReduceMean: {
      require_arity(op, in, 1);
      const Tensor& x = *in[0];
      auto d = x.data();
      if (attrs.axis < 0) {
        double total = 0.0;
        for (double v : d) total += v;
        if (op == Op::kReduceMean) {
          if (d.empty()) throw ShapeError(describe(op, in) + ": mean of empty tensor");
          total /= static_cast<double>(d.size());
        }
        return Tensor::scalar(total);
      }
      const std::size_t axis = resolve_axis(op, x.shape(), attrs.axis);
      const AxisSplit s = split_at(x.shape(), axis);
      if (op == Op::kReduceMean && s.extent == 0) {
        throw ShapeError(describe(op, in) + ": mean over empty axis");
      }
      std::vector<double> out(s.outer * s.inner, 0.0);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t t = 0; t < s.extent; ++t)
          for (std::size_t j = 0; j < s.inner; ++j)
            out[o * s.inner + j] += d[(o * s.extent + t) * s.inner + j];
      if (op == Op::kReduceMean) {
        for (double& v : out) v /= static_cast<double>(s.extent);
      }
      Shape shape = x.shape();
      shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
      return Tensor(std::move(shape), std::move(out));
    }

    case Op::kBroadcast: {
      require_arity(op, in, 1);
      const Tensor& x = *in[0];
      if (!is_suffix(x.shape(), attrs.shape)) {
        throw ShapeError(describe(op, in) + ": cannot broadcast to " + to_string(attrs.shape));
      }
      const std::size_t n = element_count(attrs.shape);
      auto d = x.data();
      std::vector<double> out(n);
      for (std::size_t i = 0; i < n; ++i) out[i] = d[i % d.size()];
      return Tensor(attrs.shape, std::move(out));
    }

    case Op::kConcat: {
      if (in.empty()) throw ShapeError("concat: no inputs");
      const Shape& first = in[0]->shape();
      const std::size_t axis = resolve_axis(op, first, attrs.axis);
      Shape shape = first;
      shape[axis] = 0;
      for (const Tensor* t : in) {
        Shape probe = t->shape();
        if (probe.size() != first.size()) {
          throw ShapeError(describe(op, in) + ": rank mismatch");
        }
        shape[axis] += probe[axis];
        probe[axis] = first[axis];
        if (probe != first) throw ShapeError(describe(op, in) + ": non-axis dimensions differ");
      }
      const AxisSplit out_split = split_at(shape, axis);
      std::vector<double> out(element_count(shape));
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const AxisSplit s = split_at(t->shape(), axis);
        auto d = t->data();
        for (std::size_t o = 0; o < s.outer; ++o)
          std::copy_n(d.begin() + o * s.extent * s.inner, s.extent * s.inner,
                      out.begin() + (o * out_split.extent + offset) * s.inner);
        offset += s.extent;
      }
      return Tensor(std::move(shape), std::move(out));
    }

    case Op::kSlice: {
      require_arity(op, in, 1);
      const Tensor& x = *in[0];
      const std::size_t axis = resolve_axis(op, x.shape(), attrs.axis);
      if (attrs.begin >= attrs.end || attrs.end > x.dim(axis)) {
        throw ShapeError(describe(op, in) + ": slice [" + std::to_string(attrs.begin) + ", " +
                         std::to_string(attrs.end) + ") out of range");
      }
      const AxisSplit s = split_at(x.shape(), axis);
      const std::size_t width = attrs.end - attrs.begin;
      auto d = x.data();
      std::vector<double> out(s.outer * width * s.inner);
      for (std::size_t o = 0; o < s.outer; ++o)
        std::copy_n(d.begin() + (o * s.extent + attrs.begin) * s.inner, width * s.inner,
                    out.begin() + o * width * s.inner);
      Shape shape = x.shape();
      shape[axis] = width;
      return Tensor(std::move(shape), std::move(out));
    }

    case Op::kReshape: {
      require_arity(op, in, 1);
      if (element_count(attrs.shape) != in[0]->size()) {
        throw ShapeError(describe(op, in) + ": cannot reshape to " + to_string(attrs.shape));
      }
      auto d = in[0]->data();
      return Tensor(attrs.shape, std::vector<double>(d.begin(), d.end()));
    }

    case Op::kStopGradient:
    case Op::kGradientScale:
      require_arity(op, in, 1);
      return *in[0];

    case Op::kSwapPool: {
      require_arity(op, in, 1);
      const Tensor& x = *in[0];
      if (x.rank() != 2) throw ShapeError(describe(op, in) + ": expects [frames, features]");
      std::size_t total = 0;
      for (std::size_t n : attrs.segments) {
        if (n == 0) throw ShapeError(describe(op, in) + ": empty frame segment");
        total += n;
      }
      if (total != x.dim(0) || attrs.segments.empty()) {
        throw ShapeError(describe(op, in) + ": segments cover " + std::to_string(total) +
                         " frames");
      }
      const std::size_t features = x.dim(1);
      auto d = x.data();
      std::vector<double> out(attrs.segments.size() * features, 0.0);
      std::size_t row = 0;
      for (std::size_t b = 0; b < attrs.segments.size(); ++b) {
        for (std::size_t f = 0; f < features; ++f) {
          double num = 0.0, den = 0.0;
          for (std::size_t r = row; r < row + attrs.segments[b]; ++r) {
            const double v = d[r * features + f];
            num += std::abs(v) * v;
            den += std::abs(v);
          }
          out[b * features + f] = den < kSwapDegenerate ? 0.0 : num / den;
        }
        row += attrs.segments[b];
      }
      return Tensor({attrs.segments.size(), features}, std::move(out));
    }
  }
  throw Error("compute: unknown op");
}

// Accumulates the vector-Jacobian product of one node into its inputs'
// gradient buffers. Buffers are sized like the corresponding input.
void accumulate_vjp(Op op, const Inputs& in, const OpAttrs& attrs, const Tensor& out,
                    const std::vector<double>& g, std::vector<std::vector<double>*>& gin) {
  auto y = out.data();
  switch (op) {
    case Op::kConstant:
    case Op::kParameter:
    case Op::kStopGradient:
      return;

    case Op::kMatMul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      auto ad = a.data();
      auto bd = b.data();
      if (gin[0]) {
        auto& ga = *gin[0];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bd[p * n + j];
            ga[i * k + p] += acc;
          }
      }
      if (gin[1]) {
        auto& gb = *gin[1];
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = ad[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
      return;
    }

    case Op::kAdd:
    case Op::kSubtract:
    case Op::kMultiply:
    case Op::kDivide: {
      auto ad = in[0]->data();
      auto bd = in[1]->data();
      const std::size_t na = ad.size(), nb = bd.size();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double x = ad[i % na];
        const double z = bd[i % nb];
        double da = 0.0, db = 0.0;
        switch (op) {
          case Op::kAdd: da = g[i]; db = g[i]; break;
          case Op::kSubtract: da = g[i]; db = -g[i]; break;
          case Op::kMultiply: da = g[i] * z; db = g[i] * x; break;
          default: da = g[i] / z; db = -g[i] * x / (z * z);
        }
        if (gin[0]) (*gin[0])[i % na] += da;
        if (gin[1]) (*gin[1])[i % nb] += db;
      }
      return;
    }

    case Op::kAbs:
    case Op::kSquare:
    case Op::kSqrt:
    case Op::kExp:
    case Op::kLog:
    case Op::kRelu:
    case Op::kRelu6:
    case Op::kSigmoid:
    case Op::kClampMin: {
      if (!gin[0]) return;
      auto x = in[0]->data();
      auto& gx = *gin[0];
      for (std::size_t i = 0; i < g.size(); ++i) {
        double local = 0.0;
        switch (op) {
          case Op::kAbs: local = sign_of(x[i]); break;
          case Op::kSquare: local = 2.0 * x[i]; break;
          case Op::kSqrt: local = 0.5 / y[i]; break;
          case Op::kExp: local = y[i]; break;
          case Op::kLog: local = 1.0 / x[i]; break;
          case Op::kRelu: local = x[i] > 0 ? 1.0 : 0.0; break;
          case Op::kRelu6: local = (x[i] > 0 && x[i] < 6) ? 1.0 : 0.0; break;
          case Op::kSigmoid: local = y[i] * (1.0 - y[i]); break;
          default: local = x[i] > attrs.scalar ? 1.0 : 0.0;
        }
        gx[i] += g[i] * local;
      }
      return;
    }

    case Op::kSoftmax: {
      if (!gin[0]) return;
      const std::size_t cols = out.shape().back();
      const std::size_t rows = cols ? out.size() / cols : 0;
      auto& gx = *gin[0];
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c)
          gx[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
      }
      return;
    }

    case Op::kReduceSum:
    case Op::kReduceMean: {
      if (!gin[0]) return;
      const Tensor& x = *in[0];
      auto& gx = *gin[0];
      if (attrs.axis < 0) {
        const double v = op == Op::kReduceMean ? g[0] / static_cast<double>(x.size()) : g[0];
        for (double& e : gx) e += v;
        return;
      }
      const AxisSplit s = split_at(x.shape(), static_cast<std::size_t>(attrs.axis));
      const double factor = op == Op::kReduceMean ? 1.0 / static_cast<double>(s.extent) : 1.0;
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t t = 0; t < s.extent; ++t)
          for (std::size_t j = 0; j < s.inner; ++j)
            gx[(o * s.extent + t) * s.inner + j] += g[o * s.inner + j] * factor;
      return;
    }

    case Op::kBroadcast: {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i % gx.size()] += g[i];
      return;
    }

    case Op::kConcat: {
      const std::size_t axis = static_cast<std::size_t>(attrs.axis);
      const AxisSplit out_split = split_at(out.shape(), axis);
      std::size_t offset = 0;
      for (std::size_t k = 0; k < in.size(); ++k) {
        const AxisSplit s = split_at(in[k]->shape(), axis);
        if (gin[k]) {
          auto& gk = *gin[k];
          for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t e = 0; e < s.extent * s.inner; ++e)
              gk[o * s.extent * s.inner + e] +=
                  g[(o * out_split.extent + offset) * s.inner + e];
        }
        offset += s.extent;
      }
      return;
    }

    case Op::kSlice: {
      if (!gin[0]) return;
      const AxisSplit s = split_at(in[0]->shape(), static_cast<std::size_t>(attrs.axis));
      const std::size_t width = attrs.end - attrs.begin;
      auto& gx = *gin[0];
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t e = 0; e < width * s.inner; ++e)
          gx[(o * s.extent + attrs.begin) * s.inner + e] += g[o * width * s.inner + e];
      return;
    }

    case Op::kReshape: {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      return;
    }

    case Op::kGradientScale: {
      if (!gin[0]) return;
      auto& gx = *gin[0];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * attrs.scalar;
      return;
    }

    case Op::kSwapPool: {
      if (!gin[0]) return;
      const Tensor& x = *in[0];
      const std::size_t features = x.dim(1);
      auto d = x.data();
      auto& gx = *gin[0];
      std::size_t row = 0;
      for (std::size_t b = 0; b < attrs.segments.size(); ++b) {
        const std::size_t n = attrs.segments[b];
        for (std::size_t f = 0; f < features; ++f) {
          double den = 0.0;
          for (std::size_t r = row; r < row + n; ++r) den += std::abs(d[r * features + f]);
          if (den < kSwapDegenerate) continue;
          const double pooled = y[b * features + f];
          const double go = g[b * features + f];
          for (std::size_t r = row; r < row + n; ++r) {
            const double v = d[r * features + f];
            gx[r * features + f] += go * (2.0 * std::abs(v) - pooled * sign_of(v)) / den;
          }
        }
        row += n;
      }
      return;
    }
  }
}

}  // namespace

std::string_view op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kSubtract: return "subtract";
    case Op::kMultiply: return "multiply";
    case Op::kDivide: return "divide";
    case Op::kAbs: return "abs";
    case Op::kSquare: return "square";
    case Op::kSqrt: return "sqrt";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kRelu: return "relu";
    case Op::kRelu6: return "relu6";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kClampMin: return "clamp_min";
    case Op::kReduceSum: return "reduce_sum";
    case Op::kReduceMean: return "reduce_mean";
    case Op::kBroadcast: return "broadcast";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
    case Op::kStopGradient: return "stop_gradient";
    case Op::kGradientScale: return "gradient_scale";
    case Op::kSwapPool: return "swap_pool";
  }
  return "unknown";
}

const Graph::Node& Graph::at(NodeRef node) const {
  if (node.index >= nodes_.size()) {
    throw Error("node #" + std::to_string(node.index) + " does not belong to this graph");
  }
  return nodes_[node.index];
}

NodeRef Graph::constant(Tensor value) {
  nodes_.push_back(Node{Op::kConstant, {}, {}, std::move(value), {}});
  return NodeRef{nodes_.size() - 1};
}

NodeRef Graph::parameter(Tensor value, std::string label) {
  nodes_.push_back(Node{Op::kParameter, {}, {}, std::move(value), std::move(label)});
  NodeRef ref{nodes_.size() - 1};
  parameters_.push_back(ref);
  return ref;
}

NodeRef Graph::apply(Op op, std::vector<NodeRef> inputs, OpAttrs attrs) {
  if (op == Op::kConstant || op == Op::kParameter) {
    throw Error("apply: use constant() or parameter() for leaf nodes");
  }
  if (op == Op::kGradientScale && !std::isfinite(attrs.scalar)) {
    throw NumericError("gradient_scale: factor must be finite");
  }
  if (op == Op::kClampMin && !std::isfinite(attrs.scalar)) {
    throw NumericError("clamp_min: floor must be finite");
  }
  Inputs in;
  in.reserve(inputs.size());
  for (NodeRef r : inputs) in.push_back(&at(r).value);
  Tensor value;
  try {
    value = compute(op, in, attrs);
  } catch (const NumericError& e) {
    throw NumericError(describe(op, in) + ": " + e.what());
  }
  nodes_.push_back(Node{op, std::move(inputs), std::move(attrs), std::move(value), {}});
  return NodeRef{nodes_.size() - 1};
}

Tensor Graph::replay(NodeRef target,
                     const std::vector<std::pair<NodeRef, Tensor>>& overrides) const {
  at(target);
  // Only nodes downstream of an override are recomputed.
  std::vector<const Tensor*> current(target.index + 1, nullptr);
  std::vector<Tensor> fresh(target.index + 1);
  std::vector<bool> dirty(target.index + 1, false);
  for (const auto& [node, value] : overrides) {
    if (node.index > target.index) continue;
    if (at(node).op != Op::kParameter) throw Error("replay: override of a non-parameter node");
    if (value.shape() != at(node).value.shape()) {
      throw ShapeError("replay: override shape " + to_string(value.shape()) +
                       " differs from " + to_string(at(node).value.shape()));
    }
    fresh[node.index] = value;
    dirty[node.index] = true;
  }
  for (std::size_t i = 0; i <= target.index; ++i) {
    const Node& node = nodes_[i];
    if (node.op != Op::kParameter && node.op != Op::kConstant &&
        node.op != Op::kStopGradient) {
      for (NodeRef r : node.inputs) dirty[i] = dirty[i] || dirty[r.index];
      if (dirty[i]) {
        Inputs in;
        for (NodeRef r : node.inputs) in.push_back(current[r.index]);
        fresh[i] = compute(node.op, in, node.attrs);
      }
    }
    current[i] = dirty[i] ? &fresh[i] : &node.value;
  }
  return *current[target.index];
}

const Tensor& GradientMap::at(NodeRef param) const {
  for (const auto& [node, grad] : entries_) {
    if (node == param) return grad;
  }
  throw Error("gradient map has no entry for node #" + std::to_string(param.index));
}

bool GradientMap::contains(NodeRef param) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == param; });
}

GradientMap backprop(const Graph& graph, NodeRef loss) {
  const Tensor& loss_value = graph.value(loss);
  if (loss_value.size() != 1) {
    throw ShapeError("backprop: loss must be a scalar, got shape " +
                     to_string(loss_value.shape()));
  }
  std::vector<std::vector<double>> grads(loss.index + 1);
  grads[loss.index].assign(1, 1.0);

  for (std::size_t i = loss.index + 1; i-- > 0;) {
    const NodeRef node{i};
    if (grads[i].empty()) continue;
    for (double v : grads[i]) {
      if (!std::isfinite(v)) {
        throw NumericError("backprop: non-finite gradient at node #" + std::to_string(i) +
                           " (" + std::string(op_name(graph.op(node))) + ")");
      }
    }
    const Op op = graph.op(node);
    if (op == Op::kStopGradient || op == Op::kConstant || op == Op::kParameter) continue;

    const auto& inputs = graph.inputs(node);
    Inputs in;
    std::vector<std::vector<double>*> gin;
    for (NodeRef r : inputs) {
      in.push_back(&graph.value(r));
      auto& buf = grads[r.index];
      if (buf.empty()) buf.assign(graph.value(r).size(), 0.0);
      gin.push_back(&buf);
    }
    accumulate_vjp(op, in, graph.attrs(node), graph.value(node), grads[i], gin);
  }

  std::vector<std::pair<NodeRef, Tensor>> entries;
  for (NodeRef p : graph.parameters()) {
    const Shape& shape = graph.value(p).shape();
    if (p.index <= loss.index && !grads[p.index].empty()) {
      entries.emplace_back(p, Tensor(shape, std::move(grads[p.index])));
    } else {
      entries.emplace_back(p, Tensor(shape));
    }
  }
  return GradientMap(std::move(entries));
}

double GradientCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
  return worst;
}

double gradient_relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / scale;
}

GradientCheckReport check_gradients(const Graph& graph, NodeRef loss, double epsilon,
                                    double tolerance) {
  if (!(epsilon > 0)) throw DomainError("check_gradients: epsilon must be positive");
  GradientCheckReport report;
  report.tolerance = tolerance;
  const GradientMap analytic = backprop(graph, loss);

  for (NodeRef p : graph.parameters()) {
    GradientCheckEntry entry{p, graph.label(p)};
    const Tensor& base = graph.value(p);
    const Tensor& grad = analytic.at(p);
    std::vector<double> probe(base.data().begin(), base.data().end());
    for (std::size_t e = 0; e < probe.size(); ++e) {
      const double original = probe[e];
      probe[e] = original + epsilon;
      const double up = graph.replay(loss, {{p, Tensor(base.shape(), probe)}}).item();
      probe[e] = original - epsilon;
      const double down = graph.replay(loss, {{p, Tensor(base.shape(), probe)}}).item();
      probe[e] = original;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double err = gradient_relative_error(grad[e], numeric);
      if (err > entry.max_relative_error || e == 0) {
        entry.max_relative_error = err;
        entry.worst_element = e;
        entry.analytic = grad[e];
        entry.numeric = numeric;
      }
    }
    if (entry.max_relative_error > tolerance) report.failures.push_back(entry);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

NodeRef matmul(Graph& g, NodeRef a, NodeRef b) { return g.apply(Op::kMatMul, {a, b}); }
NodeRef add(Graph& g, NodeRef a, NodeRef b) { return g.apply(Op::kAdd, {a, b}); }
NodeRef subtract(Graph& g, NodeRef a, NodeRef b) { return g.apply(Op::kSubtract, {a, b}); }
NodeRef multiply(Graph& g, NodeRef a, NodeRef b) { return g.apply(Op::kMultiply, {a, b}); }
NodeRef divide(Graph& g, NodeRef a, NodeRef b) { return g.apply(Op::kDivide, {a, b}); }
NodeRef abs(Graph& g, NodeRef x) { return g.apply(Op::kAbs, {x}); }
NodeRef square(Graph& g, NodeRef x) { return g.apply(Op::kSquare, {x}); }
NodeRef sqrt(Graph& g, NodeRef x) { return g.apply(Op::kSqrt, {x}); }
NodeRef exp(Graph& g, NodeRef x) { return g.apply(Op::kExp, {x}); }
NodeRef log(Graph& g, NodeRef x) { return g.apply(Op::kLog, {x}); }
NodeRef relu(Graph& g, NodeRef x) { return g.apply(Op::kRelu, {x}); }
NodeRef relu6(Graph& g, NodeRef x) { return g.apply(Op::kRelu6, {x}); }
NodeRef sigmoid(Graph& g, NodeRef x) { return g.apply(Op::kSigmoid, {x}); }
NodeRef softmax(Graph& g, NodeRef x) { return g.apply(Op::kSoftmax, {x}); }

NodeRef clamp_min(Graph& g, NodeRef x, double floor) {
  OpAttrs a;
  a.scalar = floor;
  return g.apply(Op::kClampMin, {x}, std::move(a));
}

NodeRef reduce_sum(Graph& g, NodeRef x) { return g.apply(Op::kReduceSum, {x}); }
NodeRef reduce_mean(Graph& g, NodeRef x) { return g.apply(Op::kReduceMean, {x}); }

NodeRef reduce_sum(Graph& g, NodeRef x, int axis) {
  OpAttrs a;
  a.axis = axis;
  if (axis < 0) throw ShapeError("reduce_sum: negative axis");
  return g.apply(Op::kReduceSum, {x}, std::move(a));
}

NodeRef reduce_mean(Graph& g, NodeRef x, int axis) {
  OpAttrs a;
  a.axis = axis;
  if (axis < 0) throw ShapeError("reduce_mean: negative axis");
  return g.apply(Op::kReduceMean, {x}, std::move(a));
}

NodeRef broadcast(Graph& g, NodeRef x, Shape shape) {
  OpAttrs a;
  a.shape = std::move(shape);
  return g.apply(Op::kBroadcast, {x}, std::move(a));
}

NodeRef concat(Graph& g, std::vector<NodeRef> parts, int axis) {
  OpAttrs a;
  a.axis = axis;
  return g.apply(Op::kConcat, std::move(parts), std::move(a));
}

NodeRef slice(Graph& g, NodeRef x, int axis, std::size_t begin, std::size_t end) {
  OpAttrs a;
  a.axis = axis;
  a.begin = begin;
  a.end = end;
  return g.apply(Op::kSlice, {x}, std::move(a));
}

NodeRef reshape(Graph& g, NodeRef x, Shape shape) {
  OpAttrs a;
  a.shape = std::move(shape);
  return g.apply(Op::kReshape, {x}, std::move(a));
}

NodeRef stop_gradient(Graph& g, NodeRef x) { return g.apply(Op::kStopGradient, {x}); }

NodeRef gradient_scale(Graph& g, NodeRef x, double factor) {
  OpAttrs a;
  a.scalar = factor;
  return g.apply(Op::kGradientScale, {x}, std::move(a));
}

NodeRef swap_pool(Graph& g, NodeRef frames, std::vector<std::size_t> segments) {
  OpAttrs a;
  a.segments = std::move(segments);
  return g.apply(Op::kSwapPool, {frames}, std::move(a));
}

NodeRef scale(Graph& g, NodeRef x, double c) {
  return multiply(g, x, g.constant(Tensor::scalar(c)));
}

}  // namespace codistill
