#include "fmtk/ops.hpp"

#include <cmath>
#include <optional>
#include <vector>

#include "fmtk/random.hpp"

namespace fmtk {
namespace {

Tape* tape_of(std::initializer_list<const Var*> inputs) {
  for (const Var* v : inputs) {
    if (v && v->requires_grad()) return v->tape();
  }
  return nullptr;
}

Var make(Tensor value, Tape* tape, std::function<void(const Tensor&)> backward) {
  if (!tape) return Var(std::move(value));
  return tape->record(std::move(value), std::move(backward));
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

using Map = RowMatrix<double>;

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tensor out = kernels::matmul(a.value(), b.value());
  return make(std::move(out), tape_of({&a, &b}), [a, b](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      ga.matrix().noalias() = g.matrix() * b.value().matrix().transpose();
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      gb.matrix().noalias() = a.value().matrix().transpose() * g.matrix();
      accumulate_grad(b, gb);
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var* bias) {
  Tensor out = kernels::linear(x.value(), weight.value(), bias ? &bias->value() : nullptr);
  std::optional<Var> b;
  if (bias) b = *bias;
  return make(std::move(out), tape_of({&x, &weight, bias}), [x, weight, b](const Tensor& g) {
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      gx.matrix().noalias() = g.matrix() * weight.value().matrix();
      accumulate_grad(x, gx);
    }
    if (weight.requires_grad()) {
      Tensor gw(weight.shape());
      gw.matrix().noalias() = g.matrix().transpose() * x.value().matrix();
      accumulate_grad(weight, gw);
    }
    if (b && b->requires_grad()) {
      Tensor gb(b->shape());
      gb.row_vector() = g.matrix().colwise().sum();
      accumulate_grad(*b, gb);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape("add", a, b);
  Tensor out(a.shape());
  out.array() = a.value().array() + b.value().array();
  return make(std::move(out), tape_of({&a, &b}), [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape("sub", a, b);
  Tensor out(a.shape());
  out.array() = a.value().array() - b.value().array();
  return make(std::move(out), tape_of({&a, &b}), [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    if (b.requires_grad()) {
      Tensor neg(g.shape());
      neg.array() = -g.array();
      accumulate_grad(b, neg);
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape("mul", a, b);
  Tensor out(a.shape());
  out.array() = a.value().array() * b.value().array();
  return make(std::move(out), tape_of({&a, &b}), [a, b](const Tensor& g) {
    if (a.requires_grad()) {
      Tensor ga(a.shape());
      ga.array() = g.array() * b.value().array();
      accumulate_grad(a, ga);
    }
    if (b.requires_grad()) {
      Tensor gb(b.shape());
      gb.array() = g.array() * a.value().array();
      accumulate_grad(b, gb);
    }
  });
}

Var scale(const Var& a, double factor) {
  Tensor out(a.shape());
  out.array() = a.value().array() * factor;
  return make(std::move(out), tape_of({&a}), [a, factor](const Tensor& g) {
    Tensor ga(a.shape());
    ga.array() = g.array() * factor;
    accumulate_grad(a, ga);
  });
}

Var sum(const Var& a) {
  Tensor out = Tensor::scalar(a.value().array().sum());
  return make(std::move(out), tape_of({&a}), [a](const Tensor& g) {
    accumulate_grad(a, Tensor(a.shape(), g.item()));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Tensor out = Tensor::scalar(a.value().array().sum() / n);
  return make(std::move(out), tape_of({&a}), [a, n](const Tensor& g) {
    accumulate_grad(a, Tensor(a.shape(), g.item() / n));
  });
}

Var sum_squares(const Var& a) {
  Tensor out = Tensor::scalar(a.value().array().square().sum());
  return make(std::move(out), tape_of({&a}), [a](const Tensor& g) {
    Tensor ga(a.shape());
    ga.array() = 2.0 * g.item() * a.value().array();
    accumulate_grad(a, ga);
  });
}

Var relu(const Var& x) {
  Tensor out(x.shape());
  out.array() = x.value().array().max(0.0);
  return make(std::move(out), tape_of({&x}), [x](const Tensor& g) {
    Tensor gx(x.shape());
    gx.array() = (x.value().array() > 0.0).select(g.array(), 0.0);
    accumulate_grad(x, gx);
  });
}

Var gelu(const Var& x) {
  Tensor out(x.shape());
  out.array() = x.value().array().unaryExpr([](double v) { return kernels::gelu(v); });
  return make(std::move(out), tape_of({&x}), [x](const Tensor& g) {
    Tensor gx(x.shape());
    gx.array() =
        g.array() * x.value().array().unaryExpr([](double v) { return kernels::gelu_derivative(v); });
    accumulate_grad(x, gx);
  });
}

Var softmax(const Var& x) {
  Tensor out = kernels::softmax_rows(x.value());
  Tape* tape = tape_of({&x});
  if (!tape) return Var(std::move(out));
  auto y = std::make_shared<Tensor>(out);
  return tape->record(std::move(out), [x, y](const Tensor& g) {
    // dx = y * (g - <g, y>) per row.
    Tensor gx(x.shape());
    auto ym = y->matrix();
    auto gm = g.matrix();
    auto dx = gx.matrix();
    for (Eigen::Index r = 0; r < ym.rows(); ++r) {
      const double dot = gm.row(r).dot(ym.row(r));
      dx.row(r) = (ym.row(r).array() * (gm.row(r).array() - dot)).matrix();
    }
    accumulate_grad(x, gx);
  });
}

Var layernorm(const Var& x, const Var& gain, const Var& shift, double eps) {
  auto r = kernels::layernorm_rows(x.value(), gain.value(), shift.value(), eps);
  Tape* tape = tape_of({&x, &gain, &shift});
  if (!tape) return Var(std::move(r.out));
  auto saved = std::make_shared<kernels::LayerNormResult<double>>(
      kernels::LayerNormResult<double>{Tensor{}, std::move(r.normalized), std::move(r.inv_std)});
  return tape->record(std::move(r.out), [x, gain, shift, saved](const Tensor& g) {
    const auto xhat = saved->normalized.matrix();
    const auto gm = g.matrix();
    const auto width = xhat.cols();
    if (gain.requires_grad()) {
      Tensor gg(gain.shape());
      gg.row_vector() = (gm.array() * xhat.array()).colwise().sum().matrix();
      accumulate_grad(gain, gg);
    }
    if (shift.requires_grad()) {
      Tensor gs(shift.shape());
      gs.row_vector() = gm.colwise().sum();
      accumulate_grad(shift, gs);
    }
    if (x.requires_grad()) {
      Tensor gx(x.shape());
      auto dx = gx.matrix();
      const auto gamma = gain.value().row_vector().array();
      for (Eigen::Index row = 0; row < xhat.rows(); ++row) {
        const Eigen::RowVectorXd dxhat = (gm.row(row).array() * gamma).matrix();
        const double mean_d = dxhat.mean();
        const double mean_dx = dxhat.dot(xhat.row(row)) / static_cast<double>(width);
        dx.row(row) = saved->inv_std(row) *
                      (dxhat.array() - mean_d - xhat.row(row).array() * mean_dx).matrix();
      }
      accumulate_grad(x, gx);
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return make(std::move(out), tape_of({&x}), [x](const Tensor& g) {
    accumulate_grad(x, g.reshaped(x.shape()));
  });
}

Var add_positional(const Var& x, const Var& table, std::size_t tokens) {
  const Tensor& xv = x.value();
  const Tensor& tv = table.value();
  if (tokens == 0 || xv.rows() % tokens != 0 || tv.cols() != xv.cols() || tv.rows() < tokens) {
    throw ShapeError("add_positional: input " + to_string(xv.shape()) + ", table " +
                     to_string(tv.shape()) + ", tokens " + std::to_string(tokens));
  }
  const auto t = static_cast<Eigen::Index>(tokens);
  const std::size_t seqs = xv.rows() / tokens;
  Tensor out(xv);
  for (std::size_t s = 0; s < seqs; ++s) {
    out.matrix().middleRows(static_cast<Eigen::Index>(s) * t, t) += tv.matrix().topRows(t);
  }
  return make(std::move(out), tape_of({&x, &table}), [x, table, seqs, t](const Tensor& g) {
    accumulate_grad(x, g);
    if (table.requires_grad()) {
      Tensor gt(table.shape());
      for (std::size_t s = 0; s < seqs; ++s) {
        gt.matrix().topRows(t) += g.matrix().middleRows(static_cast<Eigen::Index>(s) * t, t);
      }
      accumulate_grad(table, gt);
    }
  });
}

Var mean_row_groups(const Var& x, std::size_t group) {
  Tensor out = kernels::mean_row_groups(x.value(), group);
  return make(std::move(out), tape_of({&x}), [x, group](const Tensor& g) {
    Tensor gx(x.shape());
    auto dx = gx.matrix();
    const double inv = 1.0 / static_cast<double>(group);
    const auto gm = g.matrix();
    for (Eigen::Index r = 0; r < dx.rows(); ++r) {
      dx.row(r) = gm.row(r / static_cast<Eigen::Index>(group)) * inv;
    }
    accumulate_grad(x, gx);
  });
}

Var attention(const Var& q, const Var& k, const Var& v, std::size_t tokens, std::size_t heads) {
  require_same_shape("attention", q, k);
  require_same_shape("attention", q, v);
  const Tensor& qv = q.value();
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0 || tokens == 0 || qv.rows() % tokens != 0) {
    throw ShapeError("attention: input " + to_string(qv.shape()) + " with " +
                     std::to_string(heads) + " heads over " + std::to_string(tokens) + " tokens");
  }
  const auto T = static_cast<Eigen::Index>(tokens);
  const auto dh = static_cast<Eigen::Index>(width / heads);
  const auto H = static_cast<Eigen::Index>(heads);
  const Eigen::Index seqs = static_cast<Eigen::Index>(qv.rows()) / T;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Tape* tape = tape_of({&q, &k, &v});
  auto probs = std::make_shared<std::vector<Map>>();
  if (tape) probs->reserve(static_cast<std::size_t>(seqs * H));

  Tensor out(qv.shape());
  const auto Q = qv.matrix();
  const auto K = k.value().matrix();
  const auto V = v.value().matrix();
  auto O = out.matrix();
  Map scores(T, T);
  for (Eigen::Index s = 0; s < seqs; ++s) {
    for (Eigen::Index h = 0; h < H; ++h) {
      const auto qs = Q.block(s * T, h * dh, T, dh);
      const auto ks = K.block(s * T, h * dh, T, dh);
      const auto vs = V.block(s * T, h * dh, T, dh);
      scores.noalias() = qs * ks.transpose();
      scores *= inv_sqrt;
      for (Eigen::Index r = 0; r < T; ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp().matrix();
        scores.row(r) /= scores.row(r).sum();
      }
      O.block(s * T, h * dh, T, dh).noalias() = scores * vs;
      if (tape) probs->push_back(scores);
    }
  }
  if (!tape) return Var(std::move(out));

  return tape->record(std::move(out), [q, k, v, probs, T, dh, H, seqs, inv_sqrt](const Tensor& g) {
    Tensor gq(q.shape()), gk(k.shape()), gv(v.shape());
    const auto Q = q.value().matrix();
    const auto K = k.value().matrix();
    const auto V = v.value().matrix();
    const auto G = g.matrix();
    auto dQ = gq.matrix();
    auto dK = gk.matrix();
    auto dV = gv.matrix();
    Map dP(T, T);
    for (Eigen::Index s = 0; s < seqs; ++s) {
      for (Eigen::Index h = 0; h < H; ++h) {
        const Map& P = (*probs)[static_cast<std::size_t>(s * H + h)];
        const auto go = G.block(s * T, h * dh, T, dh);
        dV.block(s * T, h * dh, T, dh).noalias() += P.transpose() * go;
        dP.noalias() = go * V.block(s * T, h * dh, T, dh).transpose();
        for (Eigen::Index r = 0; r < T; ++r) {
          const double dot = dP.row(r).dot(P.row(r));
          dP.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix();
        }
        dP *= inv_sqrt;
        dQ.block(s * T, h * dh, T, dh).noalias() += dP * K.block(s * T, h * dh, T, dh);
        dK.block(s * T, h * dh, T, dh).noalias() += dP.transpose() * Q.block(s * T, h * dh, T, dh);
      }
    }
    accumulate_grad(q, gq);
    accumulate_grad(k, gk);
    accumulate_grad(v, gv);
  });
}

Var channel_mix(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  if (xv.rank() != 3 || w.rank() != 2 || xv.dim(1) != w.dim(1) || bias.value().size() != w.dim(0)) {
    throw ShapeError("channel_mix: input " + to_string(xv.shape()) + " has " +
                     (xv.rank() == 3 ? std::to_string(xv.dim(1)) : std::string("?")) +
                     " channels, weight " + to_string(w.shape()) + ", bias " +
                     to_string(bias.shape()));
  }
  const std::size_t B = xv.dim(0), Cin = xv.dim(1), L = xv.dim(2), Cout = w.dim(0);
  const auto li = static_cast<Eigen::Index>(L);
  Tensor out(Shape{B, Cout, L});
  const auto bcol = bias.value().row_vector().transpose();
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const Map> xb(xv.data() + b * Cin * L, static_cast<Eigen::Index>(Cin), li);
    Eigen::Map<Map> yb(out.data() + b * Cout * L, static_cast<Eigen::Index>(Cout), li);
    yb.noalias() = w.matrix() * xb;
    yb.colwise() += bcol;
  }
  return make(std::move(out), tape_of({&x, &weight, &bias}),
              [x, weight, bias, B, Cin, Cout, li](const Tensor& g) {
                Tensor gx(x.shape()), gw(weight.shape()), gb(bias.shape());
                const auto W = weight.value().matrix();
                const std::size_t L = static_cast<std::size_t>(li);
                for (std::size_t b = 0; b < B; ++b) {
                  Eigen::Map<const Map> xb(x.value().data() + b * Cin * L,
                                           static_cast<Eigen::Index>(Cin), li);
                  Eigen::Map<const Map> gy(g.data() + b * Cout * L,
                                           static_cast<Eigen::Index>(Cout), li);
                  Eigen::Map<Map> dx(gx.data() + b * Cin * L, static_cast<Eigen::Index>(Cin), li);
                  dx.noalias() = W.transpose() * gy;
                  gw.matrix().noalias() += gy * xb.transpose();
                  gb.row_vector() += gy.rowwise().sum().transpose();
                }
                accumulate_grad(x, gx);
                accumulate_grad(weight, gw);
                accumulate_grad(bias, gb);
              });
}

Var dropout(const Var& x, double p, std::uint64_t seed, std::uint64_t stream, std::uint64_t step) {
  if (p <= 0.0) return x;
  if (p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  const CounterRng rng(seed ^ mix64(step), stream);
  auto mask = std::make_shared<Tensor>(x.shape());
  const double keep = 1.0 / (1.0 - p);
  for (std::size_t i = 0; i < mask->size(); ++i) (*mask)[i] = rng.uniform(i) >= p ? keep : 0.0;
  Tensor out(x.shape());
  out.array() = x.value().array() * mask->array();
  return make(std::move(out), tape_of({&x}), [x, mask](const Tensor& g) {
    Tensor gx(x.shape());
    gx.array() = g.array() * mask->array();
    accumulate_grad(x, gx);
  });
}

}  // namespace fmtk
