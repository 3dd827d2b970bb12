#include "threatlens/lstm.hpp"

#include <cmath>
#include <vector>

#include "threatlens/errors.hpp"
#include "threatlens/ops.hpp"

namespace threatlens {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_cell(const LstmCell& cell) {
  const std::size_t hid = cell.hidden_dim;
  if (cell.weights.shape() != Shape{4 * hid, cell.input_dim + hid} ||
      cell.bias.shape() != Shape{4 * hid}) {
    throw ShapeError("lstm cell weights " + shape_string(cell.weights.shape()) +
                     " inconsistent with dims " + std::to_string(cell.input_dim) + "->" +
                     std::to_string(hid));
  }
}

}  // namespace

LstmCell LstmCell::create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  // fan-in/out per gate block: (input + hidden) -> hidden
  cell.weights = glorot_uniform(Shape{4 * hidden_dim, input_dim + hidden_dim},
                                input_dim + hidden_dim, hidden_dim, rng);
  cell.bias = Tensor(Shape{4 * hidden_dim});
  cell.bias.set_requires_grad(true);
  return cell;
}

LstmCell LstmCell::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  LstmCell cell;
  cell.input_dim = input_dim;
  cell.hidden_dim = hidden_dim;
  cell.weights = Tensor(Shape{4 * hidden_dim, input_dim + hidden_dim});
  cell.weights.set_requires_grad(true);
  cell.bias = Tensor(Shape{4 * hidden_dim});
  cell.bias.set_requires_grad(true);
  return cell;
}

LstmState zero_state(const LstmCell& cell) {
  return {Tensor(Shape{cell.hidden_dim}), Tensor(Shape{cell.hidden_dim})};
}

LstmState lstm_step(Tape& tape, const LstmCell& cell, const Tensor& x, const Tensor& h,
                    const Tensor& c) {
  check_cell(cell);
  const std::size_t in = cell.input_dim;
  const std::size_t hid = cell.hidden_dim;
  const std::size_t cols = in + hid;
  if (x.size() != in || h.size() != hid || c.size() != hid) {
    throw ShapeError("lstm_step: got x " + shape_string(x.shape()) + ", h " +
                     shape_string(h.shape()) + ", c " + shape_string(c.shape()) +
                     " for cell " + std::to_string(in) + "->" + std::to_string(hid));
  }

  // concatenated input [x ; h]
  std::vector<double> xh(cols);
  std::copy(x.values().begin(), x.values().end(), xh.begin());
  std::copy(h.values().begin(), h.values().end(), xh.begin() + in);

  // gates: [i | f | o | g] after their nonlinearities
  std::vector<double> gates(4 * hid);
  {
    auto w = cell.weights.values();
    auto b = cell.bias.values();
    for (std::size_t r = 0; r < 4 * hid; ++r) {
      const double* wr = w.data() + r * cols;
      double acc = b[r];
      for (std::size_t j = 0; j < cols; ++j) acc += wr[j] * xh[j];
      gates[r] = r < 3 * hid ? sigmoid(acc) : std::tanh(acc);
    }
  }

  LstmState next{Tensor(Shape{hid}), Tensor(Shape{hid})};
  std::vector<double> tanh_c(hid);
  {
    auto cv = c.values();
    auto hn = next.h.values();
    auto cn = next.c.values();
    for (std::size_t k = 0; k < hid; ++k) {
      const double i = gates[k], f = gates[hid + k], o = gates[2 * hid + k],
                   g = gates[3 * hid + k];
      cn[k] = f * cv[k] + i * g;
      tanh_c[k] = std::tanh(cn[k]);
      hn[k] = o * tanh_c[k];
    }
  }

  const bool tracked = tape.recording() &&
                       (x.requires_grad() || h.requires_grad() || c.requires_grad() ||
                        cell.weights.requires_grad() || cell.bias.requires_grad());
  if (tracked) {
    next.h.set_requires_grad(true);
    next.c.set_requires_grad(true);
    tape.record([hn = next.h, cn = next.c, x, h, c, w = cell.weights, b = cell.bias,
                 xh = std::move(xh), gates = std::move(gates), tanh_c = std::move(tanh_c), in,
                 hid, cols]() mutable {
      if (!hn.has_grad() && !cn.has_grad()) return;
      std::vector<double> dz(4 * hid);
      std::vector<double> dc_prev(hid);
      const double* dh = hn.has_grad() ? hn.grad().data() : nullptr;
      const double* dc = cn.has_grad() ? cn.grad().data() : nullptr;
      auto cv = c.values();
      for (std::size_t k = 0; k < hid; ++k) {
        const double i = gates[k], f = gates[hid + k], o = gates[2 * hid + k],
                     g = gates[3 * hid + k];
        const double dhk = dh ? dh[k] : 0.0;
        const double dct = (dc ? dc[k] : 0.0) + dhk * o * (1.0 - tanh_c[k] * tanh_c[k]);
        dz[k] = dct * g * i * (1.0 - i);
        dz[hid + k] = dct * cv[k] * f * (1.0 - f);
        dz[2 * hid + k] = dhk * tanh_c[k] * o * (1.0 - o);
        dz[3 * hid + k] = dct * i * (1.0 - g * g);
        dc_prev[k] = dct * f;
      }
      if (b.requires_grad()) {
        auto bg = b.grad();
        for (std::size_t r = 0; r < 4 * hid; ++r) bg[r] += dz[r];
      }
      auto wv = w.values();
      double* wg = w.requires_grad() ? w.grad().data() : nullptr;
      const bool need_input = x.requires_grad() || h.requires_grad();
      std::vector<double> dxh(need_input ? cols : 0, 0.0);
      for (std::size_t r = 0; r < 4 * hid; ++r) {
        const double d = dz[r];
        if (d == 0.0) continue;
        if (wg) {
          double* wgr = wg + r * cols;
          for (std::size_t j = 0; j < cols; ++j) wgr[j] += d * xh[j];
        }
        if (need_input) {
          const double* wr = wv.data() + r * cols;
          for (std::size_t j = 0; j < cols; ++j) dxh[j] += d * wr[j];
        }
      }
      if (x.requires_grad()) {
        auto xg = x.grad();
        for (std::size_t j = 0; j < in; ++j) xg[j] += dxh[j];
      }
      if (h.requires_grad()) {
        auto hg = h.grad();
        for (std::size_t j = 0; j < hid; ++j) hg[j] += dxh[in + j];
      }
      if (c.requires_grad()) {
        auto cg = c.grad();
        for (std::size_t k = 0; k < hid; ++k) cg[k] += dc_prev[k];
      }
    });
  }
  return next;
}

namespace {

// Hidden states of one directional read, indexed by input position.
std::vector<Tensor> read_sequence(Tape& tape, const LstmCell& cell, const Tensor& xs,
                                  bool reverse) {
  const std::size_t steps = xs.dim(0);
  std::vector<Tensor> hidden(steps);
  LstmState state = zero_state(cell);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    Tensor x = ops::row(tape, xs, t);
    state = lstm_step(tape, cell, x, state.h, state.c);
    hidden[t] = state.h;
  }
  return hidden;
}

void check_sequence(const LstmCell& fwd, const LstmCell& bwd, const Tensor& xs) {
  if (xs.rank() != 2) throw ShapeError("bilstm expects [T x in], got " + shape_string(xs.shape()));
  if (xs.dim(0) == 0) throw EmptySequence("bilstm over an empty sequence");
  if (xs.dim(1) != fwd.input_dim || xs.dim(1) != bwd.input_dim) {
    throw ShapeError("bilstm input width " + std::to_string(xs.dim(1)) +
                     " does not match cell input dims");
  }
}

}  // namespace

Tensor bilstm_final(Tape& tape, const LstmCell& fwd, const LstmCell& bwd, const Tensor& xs) {
  check_sequence(fwd, bwd, xs);
  auto forward = read_sequence(tape, fwd, xs, false);
  auto backward = read_sequence(tape, bwd, xs, true);
  const Tensor parts[] = {forward.back(), backward.front()};
  return ops::concat(tape, parts);
}

Tensor bilstm_all(Tape& tape, const LstmCell& fwd, const LstmCell& bwd, const Tensor& xs) {
  check_sequence(fwd, bwd, xs);
  auto forward = read_sequence(tape, fwd, xs, false);
  auto backward = read_sequence(tape, bwd, xs, true);
  std::vector<Tensor> rows;
  rows.reserve(forward.size());
  for (std::size_t t = 0; t < forward.size(); ++t) {
    const Tensor parts[] = {forward[t], backward[t]};
    rows.push_back(ops::concat(tape, parts));
  }
  return ops::stack_rows(tape, rows);
}

}  // namespace threatlens
