#include "cmcm/tape.hpp"

#include <cmath>
#include <cstring>

namespace cmcm::ad {

namespace {

constexpr double kTwoOverSqrtPi = 1.1283791670955126;

bool is_integer(double x) { return x == std::floor(x); }

void check_finite(const Tensor& t, Op op) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i]))
      throw DomainError(std::string("non-finite value produced by ") + op_name(op));
}

// Equal shapes, or a one-element operand on either side.
void check_elementwise(const Tensor& a, const Tensor& b, Op op) {
  if (a.same_shape(b) || a.numel() == 1 || b.numel() == 1) return;
  throw ShapeMismatch(std::string(op_name(op)) + ": incompatible operand shapes");
}

double pick(const Tensor& t, int64_t i) { return t.numel() == 1 ? t[0] : t[i]; }

struct AxisGeom {
  int64_t outer, len, inner;
};

AxisGeom axis_geometry(const Shape& s, int axis) {
  AxisGeom g{1, s[static_cast<size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) g.outer *= s[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) g.inner *= s[i];
  return g;
}

Shape drop_axis(const Shape& s, int axis) {
  Shape out;
  for (int i = 0; i < static_cast<int>(s.size()); ++i)
    if (i != axis) out.push_back(s[static_cast<size_t>(i)]);
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Const: return "const";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::MatMul: return "matmul";
    case Op::Transpose: return "transpose";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Pow: return "pow";
    case Op::Neg: return "neg";
    case Op::Sigmoid: return "sigmoid";
    case Op::Tanh: return "tanh";
    case Op::Softmax: return "softmax";
    case Op::Erf: return "erf";
    case Op::Clamp: return "clamp";
    case Op::Concat: return "concat";
    case Op::Slice: return "slice";
    case Op::Broadcast: return "broadcast";
  }
  return "?";
}

NodeId Tape::push(TapeNode n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(Tensor value) {
  check_finite(value, Op::Leaf);
  return push(TapeNode{Op::Leaf, {}, std::move(value), Tensor{}, {}});
}

NodeId Tape::constant(Tensor value) {
  check_finite(value, Op::Const);
  return push(TapeNode{Op::Const, {}, std::move(value), Tensor{}, {}});
}

NodeId Tape::record(Op op, std::span<const NodeId> inputs, const OpAttrs& attrs) {
  for (NodeId id : inputs)
    if (id < 0 || id >= size()) throw ShapeMismatch("record: input id not on tape");

  auto in = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(inputs[i])].value; };
  auto expect_arity = [&](size_t n) {
    if (inputs.size() != n)
      throw ShapeMismatch(std::string(op_name(op)) + ": wrong number of inputs");
  };

  Tensor out;
  switch (op) {
    case Op::Leaf:
    case Op::Const:
      throw ShapeMismatch("leaf/const must be created via leaf()/constant()");

    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      expect_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      check_elementwise(a, b, op);
      const Tensor& shaped = a.numel() >= b.numel() ? a : b;
      out = Tensor(shaped.shape());
      for (int64_t i = 0; i < out.numel(); ++i) {
        double x = pick(a, i), y = pick(b, i);
        switch (op) {
          case Op::Add: out[i] = x + y; break;
          case Op::Sub: out[i] = x - y; break;
          case Op::Mul: out[i] = x * y; break;
          default: out[i] = x / y; break;
        }
      }
      break;
    }

    case Op::MatMul: {
      expect_arity(2);
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeMismatch("matmul: need (m,k)x(k,n)");
      int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
      out = Tensor(Shape{m, n});
      for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
          double aip = a.at(i, p);
          for (int64_t j = 0; j < n; ++j) out.at(i, j) += aip * b.at(p, j);
        }
      break;
    }

    case Op::Transpose: {
      expect_arity(1);
      const Tensor& a = in(0);
      if (a.rank() != 2) throw ShapeMismatch("transpose: rank-2 only");
      out = Tensor(Shape{a.dim(1), a.dim(0)});
      for (int64_t i = 0; i < a.dim(0); ++i)
        for (int64_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
      break;
    }

    case Op::Sum:
    case Op::Mean: {
      expect_arity(1);
      const Tensor& a = in(0);
      if (attrs.axis < 0) {
        double s = 0;
        for (int64_t i = 0; i < a.numel(); ++i) s += a[i];
        if (op == Op::Mean) s /= static_cast<double>(a.numel());
        out = Tensor::scalar(s);
      } else {
        if (attrs.axis >= a.rank()) throw ShapeMismatch("sum/mean: axis out of range");
        AxisGeom g = axis_geometry(a.shape(), attrs.axis);
        out = Tensor(drop_axis(a.shape(), attrs.axis));
        for (int64_t o = 0; o < g.outer; ++o)
          for (int64_t i = 0; i < g.inner; ++i) {
            double s = 0;
            for (int64_t l = 0; l < g.len; ++l) s += a[(o * g.len + l) * g.inner + i];
            if (op == Op::Mean) s /= static_cast<double>(g.len);
            out[o * g.inner + i] = s;
          }
      }
      break;
    }

    case Op::Exp:
    case Op::Log:
    case Op::Neg:
    case Op::Sigmoid:
    case Op::Tanh:
    case Op::Erf: {
      expect_arity(1);
      const Tensor& a = in(0);
      out = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) {
        double x = a[i];
        switch (op) {
          case Op::Exp: out[i] = std::exp(x); break;
          case Op::Log:
            if (x <= 0) throw DomainError("log of non-positive value");
            out[i] = std::log(x);
            break;
          case Op::Neg: out[i] = -x; break;
          case Op::Sigmoid: out[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                            : std::exp(x) / (1.0 + std::exp(x)); break;
          case Op::Tanh: out[i] = std::tanh(x); break;
          default: out[i] = std::erf(x); break;
        }
      }
      break;
    }

    case Op::Pow: {
      expect_arity(1);
      const Tensor& a = in(0);
      out = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) {
        double x = a[i];
        if (x < 0 && !is_integer(attrs.exponent))
          throw DomainError("pow of negative base with non-integer exponent");
        out[i] = std::pow(x, attrs.exponent);
      }
      break;
    }

    case Op::Softmax: {
      expect_arity(1);
      const Tensor& a = in(0);
      if (a.rank() < 1) throw ShapeMismatch("softmax: needs rank >= 1");
      int64_t k = a.dim(static_cast<int>(a.rank() - 1));
      int64_t rows = a.numel() / k;
      out = Tensor(a.shape());
      for (int64_t r = 0; r < rows; ++r) {
        const double* src = a.data() + r * k;
        double* dst = out.data() + r * k;
        double mx = src[0];
        for (int64_t j = 1; j < k; ++j) mx = std::max(mx, src[j]);
        double z = 0;
        for (int64_t j = 0; j < k; ++j) {
          dst[j] = std::exp(src[j] - mx);
          z += dst[j];
        }
        for (int64_t j = 0; j < k; ++j) dst[j] /= z;
      }
      break;
    }

    case Op::Clamp: {
      expect_arity(1);
      if (!(attrs.lo <= attrs.hi)) throw DomainError("clamp: lo > hi");
      const Tensor& a = in(0);
      out = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i)
        out[i] = std::min(std::max(a[i], attrs.lo), attrs.hi);
      break;
    }

    case Op::Concat: {
      if (inputs.empty()) throw ShapeMismatch("concat: no inputs");
      const Tensor& first = in(0);
      int axis = attrs.axis;
      if (axis < 0 || axis >= first.rank()) throw ShapeMismatch("concat: axis out of range");
      Shape os = first.shape();
      int64_t total = 0;
      for (size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        if (t.rank() != first.rank()) throw ShapeMismatch("concat: rank mismatch");
        for (int d = 0; d < first.rank(); ++d)
          if (d != axis && t.dim(d) != first.dim(d))
            throw ShapeMismatch("concat: off-axis dims must match");
        total += t.dim(axis);
      }
      os[static_cast<size_t>(axis)] = total;
      out = Tensor(os);
      AxisGeom g = axis_geometry(os, axis);
      int64_t offset = 0;
      for (size_t p = 0; p < inputs.size(); ++p) {
        const Tensor& t = in(p);
        int64_t len = t.dim(axis);
        for (int64_t o = 0; o < g.outer; ++o)
          for (int64_t l = 0; l < len; ++l)
            std::memcpy(out.data() + ((o * g.len + offset + l) * g.inner),
                        t.data() + ((o * len + l) * g.inner),
                        static_cast<size_t>(g.inner) * sizeof(double));
        offset += len;
      }
      break;
    }

    case Op::Slice: {
      expect_arity(1);
      const Tensor& a = in(0);
      int axis = attrs.axis;
      if (axis < 0 || axis >= a.rank()) throw ShapeMismatch("slice: axis out of range");
      if (attrs.start < 0 || attrs.length <= 0 || attrs.start + attrs.length > a.dim(axis))
        throw ShapeMismatch("slice: range out of bounds");
      Shape os = a.shape();
      os[static_cast<size_t>(axis)] = attrs.length;
      out = Tensor(os);
      AxisGeom g = axis_geometry(a.shape(), axis);
      for (int64_t o = 0; o < g.outer; ++o)
        for (int64_t l = 0; l < attrs.length; ++l)
          std::memcpy(out.data() + ((o * attrs.length + l) * g.inner),
                      a.data() + ((o * g.len + attrs.start + l) * g.inner),
                      static_cast<size_t>(g.inner) * sizeof(double));
      break;
    }

    case Op::Broadcast: {
      expect_arity(1);
      const Tensor& a = in(0);
      int64_t tn = Tensor::numel_of(attrs.target);
      if (tn == a.numel()) {
        // pure reshape
        out = Tensor(attrs.target, a.vec());
      } else {
        // right-aligned expansion; input dims must be 1 or equal
        Shape ts = attrs.target;
        Shape is = a.shape();
        while (is.size() < ts.size()) is.insert(is.begin(), 1);
        if (is.size() != ts.size()) throw ShapeMismatch("broadcast: rank exceeds target");
        for (size_t d = 0; d < ts.size(); ++d)
          if (is[d] != ts[d] && is[d] != 1)
            throw ShapeMismatch("broadcast: dim neither 1 nor target");
        out = Tensor(ts);
        size_t nd = ts.size();
        std::vector<int64_t> idx(nd, 0);
        for (int64_t flat = 0; flat < out.numel(); ++flat) {
          int64_t src = 0;
          for (size_t d = 0; d < nd; ++d) src = src * is[d] + (is[d] == 1 ? 0 : idx[d]);
          out[flat] = a[src];
          for (size_t d = nd; d-- > 0;) {
            if (++idx[d] < ts[d]) break;
            idx[d] = 0;
          }
        }
      }
      break;
    }
  }

  check_finite(out, op);
  TapeNode n{op, std::vector<NodeId>(inputs.begin(), inputs.end()), std::move(out), Tensor{}, attrs};
  return push(n);
}

void Tape::backward(NodeId root) {
  if (root < 0 || root >= size()) throw NonScalarRoot("root not on tape");
  if (nodes_[static_cast<size_t>(root)].value.numel() != 1)
    throw NonScalarRoot("backward requires a one-element root");

  // Mark ancestors of root so unrelated subgraphs keep zero adjoints.
  std::vector<char> reach(nodes_.size(), 0);
  {
    std::vector<NodeId> stack{root};
    reach[static_cast<size_t>(root)] = 1;
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      for (NodeId in : nodes_[static_cast<size_t>(id)].inputs)
        if (!reach[static_cast<size_t>(in)]) {
          reach[static_cast<size_t>(in)] = 1;
          stack.push_back(in);
        }
    }
  }

  for (auto& n : nodes_) n.adjoint = Tensor(n.value.shape());
  nodes_[static_cast<size_t>(root)].adjoint[0] = 1.0;

  for (NodeId id = root; id >= 0; --id) {
    if (!reach[static_cast<size_t>(id)]) continue;
    TapeNode& n = nodes_[static_cast<size_t>(id)];
    if (n.inputs.empty()) continue;
    const Tensor& g = n.adjoint;
    const Tensor& y = n.value;

    auto input_val = [&](size_t i) -> const Tensor& {
      return nodes_[static_cast<size_t>(n.inputs[i])].value;
    };
    auto input_adj = [&](size_t i) -> Tensor& {
      return nodes_[static_cast<size_t>(n.inputs[i])].adjoint;
    };
    // Accumulate into input i; handles the one-element broadcast of binary ops.
    auto scatter = [&](size_t i, int64_t flat, double v) {
      Tensor& adj = input_adj(i);
      adj[adj.numel() == 1 ? 0 : flat] += v;
    };

    switch (n.op) {
      case Op::Leaf:
      case Op::Const:
        break;

      case Op::Add:
        for (int64_t i = 0; i < g.numel(); ++i) {
          scatter(0, i, g[i]);
          scatter(1, i, g[i]);
        }
        break;
      case Op::Sub:
        for (int64_t i = 0; i < g.numel(); ++i) {
          scatter(0, i, g[i]);
          scatter(1, i, -g[i]);
        }
        break;
      case Op::Mul: {
        const Tensor& a = input_val(0);
        const Tensor& b = input_val(1);
        for (int64_t i = 0; i < g.numel(); ++i) {
          scatter(0, i, g[i] * pick(b, i));
          scatter(1, i, g[i] * pick(a, i));
        }
        break;
      }
      case Op::Div: {
        const Tensor& a = input_val(0);
        const Tensor& b = input_val(1);
        for (int64_t i = 0; i < g.numel(); ++i) {
          double bi = pick(b, i);
          scatter(0, i, g[i] / bi);
          scatter(1, i, -g[i] * pick(a, i) / (bi * bi));
        }
        break;
      }

      case Op::MatMul: {
        const Tensor& a = input_val(0);
        const Tensor& b = input_val(1);
        Tensor& da = input_adj(0);
        Tensor& db = input_adj(1);
        int64_t m = a.dim(0), k = a.dim(1), c = b.dim(1);
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) {
            double gij = g.at(i, j);
            if (gij == 0) continue;
            for (int64_t p = 0; p < k; ++p) {
              da.at(i, p) += gij * b.at(p, j);
              db.at(p, j) += gij * a.at(i, p);
            }
          }
        break;
      }

      case Op::Transpose: {
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.dim(0); ++i)
          for (int64_t j = 0; j < g.dim(1); ++j) da.at(j, i) += g.at(i, j);
        break;
      }

      case Op::Sum:
      case Op::Mean: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        if (n.attrs.axis < 0) {
          double s = g[0];
          if (n.op == Op::Mean) s /= static_cast<double>(a.numel());
          for (int64_t i = 0; i < a.numel(); ++i) da[i] += s;
        } else {
          AxisGeom gm = axis_geometry(a.shape(), n.attrs.axis);
          double scale = n.op == Op::Mean ? 1.0 / static_cast<double>(gm.len) : 1.0;
          for (int64_t o = 0; o < gm.outer; ++o)
            for (int64_t i = 0; i < gm.inner; ++i) {
              double s = g[o * gm.inner + i] * scale;
              for (int64_t l = 0; l < gm.len; ++l)
                da[(o * gm.len + l) * gm.inner + i] += s;
            }
        }
        break;
      }

      case Op::Exp: {
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * y[i];
        break;
      }
      case Op::Log: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] / a[i];
        break;
      }
      case Op::Pow: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        double e = n.attrs.exponent;
        for (int64_t i = 0; i < g.numel(); ++i)
          da[i] += g[i] * e * std::pow(a[i], e - 1.0);
        break;
      }
      case Op::Neg: {
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] -= g[i];
        break;
      }
      case Op::Sigmoid: {
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::Tanh: {
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::Erf: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i)
          da[i] += g[i] * kTwoOverSqrtPi * std::exp(-a[i] * a[i]);
        break;
      }

      case Op::Softmax: {
        Tensor& da = input_adj(0);
        int64_t k = y.dim(static_cast<int>(y.rank() - 1));
        int64_t rows = y.numel() / k;
        for (int64_t r = 0; r < rows; ++r) {
          const double* yr = y.data() + r * k;
          const double* gr = g.data() + r * k;
          double dot = 0;
          for (int64_t j = 0; j < k; ++j) dot += gr[j] * yr[j];
          for (int64_t j = 0; j < k; ++j) da[r * k + j] += yr[j] * (gr[j] - dot);
        }
        break;
      }

      case Op::Clamp: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        for (int64_t i = 0; i < g.numel(); ++i)
          if (a[i] >= n.attrs.lo && a[i] <= n.attrs.hi) da[i] += g[i];
        break;
      }

      case Op::Concat: {
        AxisGeom gm = axis_geometry(y.shape(), n.attrs.axis);
        int64_t offset = 0;
        for (size_t p = 0; p < n.inputs.size(); ++p) {
          const Tensor& t = input_val(p);
          Tensor& dt = input_adj(p);
          int64_t len = t.dim(n.attrs.axis);
          for (int64_t o = 0; o < gm.outer; ++o)
            for (int64_t l = 0; l < len; ++l)
              for (int64_t i = 0; i < gm.inner; ++i)
                dt[(o * len + l) * gm.inner + i] +=
                    g[(o * gm.len + offset + l) * gm.inner + i];
          offset += len;
        }
        break;
      }

      case Op::Slice: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        AxisGeom gm = axis_geometry(a.shape(), n.attrs.axis);
        for (int64_t o = 0; o < gm.outer; ++o)
          for (int64_t l = 0; l < n.attrs.length; ++l)
            for (int64_t i = 0; i < gm.inner; ++i)
              da[(o * gm.len + n.attrs.start + l) * gm.inner + i] +=
                  g[(o * n.attrs.length + l) * gm.inner + i];
        break;
      }

      case Op::Broadcast: {
        const Tensor& a = input_val(0);
        Tensor& da = input_adj(0);
        if (a.numel() == y.numel()) {
          for (int64_t i = 0; i < g.numel(); ++i) da[i] += g[i];
        } else {
          Shape is = a.shape();
          const Shape& ts = y.shape();
          while (is.size() < ts.size()) is.insert(is.begin(), 1);
          size_t nd = ts.size();
          std::vector<int64_t> idx(nd, 0);
          for (int64_t flat = 0; flat < y.numel(); ++flat) {
            int64_t src = 0;
            for (size_t d = 0; d < nd; ++d) src = src * is[d] + (is[d] == 1 ? 0 : idx[d]);
            da[src] += g[flat];
            for (size_t d = nd; d-- > 0;) {
              if (++idx[d] < ts[d]) break;
              idx[d] = 0;
            }
          }
        }
        break;
      }
    }
  }
}

double finite_diff_check(const std::function<double(std::span<const double>)>& fn,
                         std::span<const double> x,
                         std::span<const double> analytic_grad, double eps) {
  if (x.size() != analytic_grad.size())
    throw DimMismatch("finite_diff_check: gradient length mismatch");
  if (!(eps > 0)) throw DomainError("finite_diff_check: eps must be positive");
  std::vector<double> p(x.begin(), x.end());
  double worst = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    double saved = p[i];
    p[i] = saved + eps;
    double fp = fn(p);
    p[i] = saved - eps;
    double fm = fn(p);
    p[i] = saved;
    double numeric = (fp - fm) / (2.0 * eps);
    double err = std::abs(analytic_grad[i] - numeric) /
                 std::max(std::abs(analytic_grad[i]), 1e-8);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace cmcm::ad
