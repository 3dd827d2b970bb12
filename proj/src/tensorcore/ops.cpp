#include "threatlens/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "threatlens/errors.hpp"

namespace threatlens::ops {

namespace {

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->defined() && t->requires_grad(); });
}

// Marks `out` as part of the graph when the tape will record for it.
bool track(Tape& tape, Tensor& out, std::initializer_list<const Tensor*> inputs) {
  const bool tracked = tape.recording() && any_requires_grad(inputs);
  if (tracked) out.set_requires_grad(true);
  return tracked;
}

Tensor finite(Tensor out, const char* op) {
  for (double v : out.values()) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (!t.defined() || t.rank() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     (t.defined() ? shape_string(t.shape()) : std::string("undefined")));
  }
}

}  // namespace

Tensor embed(Tape& tape, std::span<const int> ids, const Tensor& table) {
  require_rank(table, 2, "embed table");
  const std::size_t vocab = table.dim(0);
  const std::size_t width = table.dim(1);
  Tensor out(Shape{ids.size(), width});
  auto dst = out.values();
  auto src = table.values();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw IndexError("embedding id " + std::to_string(ids[i]) + " out of range [0, " +
                       std::to_string(vocab) + ")");
    }
    std::copy_n(src.begin() + ids[i] * width, width, dst.begin() + i * width);
  }
  if (track(tape, out, {&table})) {
    std::vector<int> rows(ids.begin(), ids.end());
    tape.record([out, table, rows = std::move(rows), width]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto tg = table.grad();
      for (std::size_t i = 0; i < rows.size(); ++i) {
        for (std::size_t c = 0; c < width; ++c) tg[rows[i] * width + c] += g[i * width + c];
      }
    });
  }
  return out;
}

Tensor conv_text(Tape& tape, const Tensor& sentence, const Tensor& filters, const Tensor& bias,
                 Activation activation) {
  require_rank(sentence, 2, "conv_text sentence");
  const bool bank = filters.rank() == 3;
  if (!bank) require_rank(filters, 2, "conv_text filter");
  const std::size_t n = sentence.dim(0);
  const std::size_t d = sentence.dim(1);
  const std::size_t f = bank ? filters.dim(0) : 1;
  const std::size_t h = bank ? filters.dim(1) : filters.dim(0);
  const std::size_t fd = bank ? filters.dim(2) : filters.dim(1);
  if (fd != d) {
    throw ShapeError("conv_text: filter width " + std::to_string(fd) + " != embedding width " +
                     std::to_string(d));
  }
  if (bias.size() != f) {
    throw ShapeError("conv_text: bias has " + std::to_string(bias.size()) + " entries for " +
                     std::to_string(f) + " filters");
  }
  if (h == 0) throw ShapeError("conv_text: filter height must be >= 1");
  if (n < h) {
    throw WindowTooLarge("conv_text: sentence of " + std::to_string(n) +
                         " rows is shorter than filter height " + std::to_string(h));
  }
  const std::size_t len = n - h + 1;
  const std::size_t window = h * d;
  Tensor out(bank ? Shape{len, f} : Shape{len});
  {
    auto s = sentence.values();
    auto w = filters.values();
    auto b = bias.values();
    auto o = out.values();
    for (std::size_t i = 0; i < len; ++i) {
      const double* win = s.data() + i * d;
      for (std::size_t k = 0; k < f; ++k) {
        const double* wk = w.data() + k * window;
        double acc = b[k];
        for (std::size_t j = 0; j < window; ++j) acc += wk[j] * win[j];
        switch (activation) {
          case Activation::relu: acc = acc > 0.0 ? acc : 0.0; break;
          case Activation::tanh: acc = std::tanh(acc); break;
          case Activation::identity: break;
        }
        o[i * f + k] = acc;
      }
    }
  }
  if (track(tape, out, {&sentence, &filters, &bias})) {
    tape.record([out, sentence, filters, bias, activation, len, f, window, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto o = out.values();
      auto s = sentence.values();
      auto w = filters.values();
      double* sg = sentence.requires_grad() ? sentence.grad().data() : nullptr;
      double* wg = filters.requires_grad() ? filters.grad().data() : nullptr;
      double* bg = bias.requires_grad() ? bias.grad().data() : nullptr;
      for (std::size_t i = 0; i < len; ++i) {
        for (std::size_t k = 0; k < f; ++k) {
          double dpre = g[i * f + k];
          const double y = o[i * f + k];
          switch (activation) {
            case Activation::relu: dpre = y > 0.0 ? dpre : 0.0; break;
            case Activation::tanh: dpre *= 1.0 - y * y; break;
            case Activation::identity: break;
          }
          if (dpre == 0.0) continue;
          if (bg) bg[k] += dpre;
          if (wg) {
            double* wgk = wg + k * window;
            const double* win = s.data() + i * d;
            for (std::size_t j = 0; j < window; ++j) wgk[j] += dpre * win[j];
          }
          if (sg) {
            const double* wk = w.data() + k * window;
            double* sgw = sg + i * d;
            for (std::size_t j = 0; j < window; ++j) sgw[j] += dpre * wk[j];
          }
        }
      }
    });
  }
  return finite(out, "conv_text");
}

Tensor max_over_time(Tape& tape, const Tensor& feature_map) {
  if (feature_map.rank() != 1 && feature_map.rank() != 2) {
    throw ShapeError("max_over_time expects [L] or [L x f], got " +
                     shape_string(feature_map.shape()));
  }
  const std::size_t len = feature_map.dim(0);
  if (len == 0) throw EmptyFeatureMap("max_over_time over an empty feature map");
  const bool bank = feature_map.rank() == 2;
  const std::size_t f = bank ? feature_map.dim(1) : 1;
  Tensor out(bank ? Shape{f} : Shape{});
  std::vector<std::size_t> argmax(f, 0);
  auto m = feature_map.values();
  auto o = out.values();
  for (std::size_t k = 0; k < f; ++k) {
    double best = m[k];
    for (std::size_t i = 1; i < len; ++i) {
      if (m[i * f + k] > best) {
        best = m[i * f + k];
        argmax[k] = i;
      }
    }
    o[k] = best;
  }
  if (track(tape, out, {&feature_map})) {
    tape.record([out, feature_map, argmax = std::move(argmax), f]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto mg = feature_map.grad();
      for (std::size_t k = 0; k < f; ++k) mg[argmax[k] * f + k] += g[k];
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw InvalidProbability("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
  if (mode == Mode::infer || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& entry : mask) entry = rng.uniform() < p ? 0.0 : keep_scale;
  Tensor out(x.shape());
  auto xv = x.values();
  auto o = out.values();
  for (std::size_t i = 0; i < mask.size(); ++i) o[i] = xv[i] * mask[i];
  if (track(tape, out, {&x})) {
    tape.record([out, x, mask = std::move(mask)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < mask.size(); ++i) xg[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor concat(Tape& tape, std::span<const Tensor> parts) {
  std::size_t total = 0;
  for (const auto& part : parts) total += part.size();
  Tensor out(Shape{total});
  auto o = out.values();
  std::size_t offset = 0;
  bool tracked = false;
  for (const auto& part : parts) {
    std::copy(part.values().begin(), part.values().end(), o.begin() + offset);
    offset += part.size();
    tracked = tracked || part.requires_grad();
  }
  if (tape.recording() && tracked) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    tape.record([out, inputs = std::move(inputs)]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::size_t off = 0;
      for (auto& part : inputs) {
        if (part.requires_grad()) {
          auto pg = part.grad();
          for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += g[off + i];
        }
        off += part.size();
      }
    });
  }
  return out;
}

Tensor concat_columns(Tape& tape, const Tensor& left, const Tensor& right) {
  require_rank(left, 2, "concat_columns left");
  require_rank(right, 2, "concat_columns right");
  const std::size_t n = left.dim(0);
  if (right.dim(0) != n) throw ShapeError("concat_columns: row counts differ");
  const std::size_t a = left.dim(1);
  const std::size_t b = right.dim(1);
  Tensor out(Shape{n, a + b});
  auto o = out.values();
  auto lv = left.values();
  auto rv = right.values();
  for (std::size_t r = 0; r < n; ++r) {
    std::copy_n(lv.begin() + r * a, a, o.begin() + r * (a + b));
    std::copy_n(rv.begin() + r * b, b, o.begin() + r * (a + b) + a);
  }
  if (track(tape, out, {&left, &right})) {
    tape.record([out, left, right, n, a, b]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (left.requires_grad()) {
        auto lg = left.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < a; ++c) lg[r * a + c] += g[r * (a + b) + c];
      }
      if (right.requires_grad()) {
        auto rg = right.grad();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < b; ++c) rg[r * b + c] += g[r * (a + b) + a + c];
      }
    });
  }
  return out;
}

Tensor stack_rows(Tape& tape, std::span<const Tensor> rows) {
  if (rows.empty()) throw ShapeError("stack_rows of no rows");
  const std::size_t k = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != k) throw ShapeError("stack_rows: rows have different lengths");
  }
  Tensor out(Shape{rows.size(), k});
  auto o = out.values();
  bool tracked = false;
  for (std::size_t t = 0; t < rows.size(); ++t) {
    std::copy(rows[t].values().begin(), rows[t].values().end(), o.begin() + t * k);
    tracked = tracked || rows[t].requires_grad();
  }
  if (tape.recording() && tracked) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(rows.begin(), rows.end());
    tape.record([out, inputs = std::move(inputs), k]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      for (std::size_t t = 0; t < inputs.size(); ++t) {
        if (!inputs[t].requires_grad()) continue;
        auto rg = inputs[t].grad();
        for (std::size_t c = 0; c < k; ++c) rg[c] += g[t * k + c];
      }
    });
  }
  return out;
}

Tensor row(Tape& tape, const Tensor& matrix, std::size_t index) {
  require_rank(matrix, 2, "row");
  if (index >= matrix.dim(0)) throw IndexError("row index out of range");
  const std::size_t k = matrix.dim(1);
  Tensor out(Shape{k});
  std::copy_n(matrix.values().begin() + index * k, k, out.values().begin());
  if (track(tape, out, {&matrix})) {
    tape.record([out, matrix, index, k]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto mg = matrix.grad();
      for (std::size_t c = 0; c < k; ++c) mg[index * k + c] += g[c];
    });
  }
  return out;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weights, const Tensor& bias) {
  require_rank(weights, 2, "linear weights");
  const std::size_t in = weights.dim(0);
  const std::size_t m = weights.dim(1);
  const bool batched = x.rank() == 2;
  if (!batched) require_rank(x, 1, "linear input");
  const std::size_t rows = batched ? x.dim(0) : 1;
  const std::size_t xin = batched ? x.dim(1) : x.dim(0);
  if (xin != in) {
    throw ShapeError("linear: input width " + std::to_string(xin) + " != weight rows " +
                     std::to_string(in));
  }
  if (bias.size() != m) throw ShapeError("linear: bias length mismatch");
  Tensor out(batched ? Shape{rows, m} : Shape{m});
  {
    auto xv = x.values();
    auto w = weights.values();
    auto b = bias.values();
    auto o = out.values();
    for (std::size_t r = 0; r < rows; ++r) {
      double* orow = o.data() + r * m;
      std::copy(b.begin(), b.end(), orow);
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = xv[r * in + i];
        if (xi == 0.0) continue;
        const double* wrow = w.data() + i * m;
        for (std::size_t j = 0; j < m; ++j) orow[j] += xi * wrow[j];
      }
    }
  }
  if (track(tape, out, {&x, &weights, &bias})) {
    tape.record([out, x, weights, bias, rows, in, m]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xv = x.values();
      auto w = weights.values();
      double* xg = x.requires_grad() ? x.grad().data() : nullptr;
      double* wg = weights.requires_grad() ? weights.grad().data() : nullptr;
      double* bg = bias.requires_grad() ? bias.grad().data() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* grow = g.data() + r * m;
        if (bg)
          for (std::size_t j = 0; j < m; ++j) bg[j] += grow[j];
        for (std::size_t i = 0; i < in; ++i) {
          const double xi = xv[r * in + i];
          const double* wrow = w.data() + i * m;
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * wrow[j];
          if (xg) xg[r * in + i] += acc;
          if (wg && xi != 0.0) {
            double* wgrow = wg + i * m;
            for (std::size_t j = 0; j < m; ++j) wgrow[j] += xi * grow[j];
          }
        }
      }
    });
  }
  return finite(out, "linear");
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("add: shapes differ");
  Tensor out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) + b.at(i);
  if (track(tape, out, {&a, &b})) {
    tape.record([out, a, b]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i];
      }
    });
  }
  return finite(out, "add");
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shapes differ");
  Tensor out(a.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.at(i) * b.at(i);
  if (track(tape, out, {&a, &b})) {
    tape.record([out, a, b]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      // a and b may share storage (x * x); read values before accumulating.
      const std::vector<double> av(a.values().begin(), a.values().end());
      const std::vector<double> bv(b.values().begin(), b.values().end());
      if (a.requires_grad()) {
        auto ag = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ag[i] += g[i] * bv[i];
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) bg[i] += g[i] * av[i];
      }
    });
  }
  return finite(out, "mul");
}

Tensor scale(Tape& tape, const Tensor& x, double factor) {
  Tensor out(x.shape());
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.at(i) * factor;
  if (track(tape, out, {&x})) {
    tape.record([out, x, factor]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto xg = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) xg[i] += g[i] * factor;
    });
  }
  return finite(out, "scale");
}

Tensor sum(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) total += v;
  Tensor out = Tensor::scalar(total);
  if (track(tape, out, {&x})) {
    tape.record([out, x]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& xg : x.grad()) xg += g;
    });
  }
  return finite(out, "sum");
}

Tensor mean(Tape& tape, std::span<const Tensor> scalars) {
  if (scalars.empty()) throw ShapeError("mean of no values");
  double total = 0.0;
  bool tracked = false;
  for (const auto& s : scalars) {
    total += s.item();
    tracked = tracked || s.requires_grad();
  }
  const double inv = 1.0 / static_cast<double>(scalars.size());
  Tensor out = Tensor::scalar(total * inv);
  if (tape.recording() && tracked) {
    out.set_requires_grad(true);
    std::vector<Tensor> inputs(scalars.begin(), scalars.end());
    tape.record([out, inputs = std::move(inputs), inv]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0] * inv;
      for (auto& s : inputs) {
        if (s.requires_grad()) s.grad()[0] += g;
      }
    });
  }
  return finite(out, "mean");
}

double logsumexp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double peak = *std::max_element(values.begin(), values.end());
  if (std::isinf(peak)) return peak;
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - peak);
  return peak + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

SoftmaxXent softmax_xent(Tape& tape, const Tensor& logits, std::size_t true_class) {
  require_rank(logits, 1, "softmax_xent logits");
  if (true_class >= logits.size()) {
    throw ShapeError("softmax_xent: class " + std::to_string(true_class) + " out of range");
  }
  auto p = softmax(logits.values());
  const double loss = logsumexp(logits.values()) - logits.at(true_class);
  SoftmaxXent result{Tensor(Shape{p.size()}, p), Tensor::scalar(loss)};
  if (track(tape, result.loss, {&logits})) {
    tape.record([out = result.loss, logits, p = std::move(p), true_class]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      auto lg = logits.grad();
      for (std::size_t i = 0; i < p.size(); ++i) {
        lg[i] += g * (p[i] - (i == true_class ? 1.0 : 0.0));
      }
    });
  }
  finite(result.loss, "softmax_xent");
  return result;
}

SoftmaxXent affine_softmax_xent(Tape& tape, const Tensor& features, const Tensor& weights,
                                const Tensor& bias, std::size_t true_class) {
  return softmax_xent(tape, linear(tape, features, weights, bias), true_class);
}

}  // namespace threatlens::ops
