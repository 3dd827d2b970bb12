#pragma once

#include <cstddef>

#include "threatlens/tensor.hpp"

namespace threatlens {

// Forget-gate LSTM without peepholes. The four gates share one weight matrix
// laid out as row blocks [input; forget; output; candidate], each block
// mapping [x ; h] (input_dim + hidden_dim) to hidden_dim.
struct LstmCell {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  Tensor weights;  // [4*hidden x (input + hidden)]
  Tensor bias;     // [4*hidden]

  static LstmCell create(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  static LstmCell zeros(std::size_t input_dim, std::size_t hidden_dim);
};

struct LstmState {
  Tensor h;
  Tensor c;
};

LstmState zero_state(const LstmCell& cell);

// i, f, o = sigmoid gates, g = tanh candidate,
// c' = f * c + i * g, h' = o * tanh(c').
LstmState lstm_step(Tape& tape, const LstmCell& cell, const Tensor& x, const Tensor& h,
                    const Tensor& c);

// [h_fwd(T) ++ h_bwd(0)] for xs [T x in]: the final hidden states of a
// left-to-right and a right-to-left read. Throws EmptySequence when T == 0.
Tensor bilstm_final(Tape& tape, const LstmCell& fwd, const LstmCell& bwd, const Tensor& xs);

// [T x 2*hidden]; row t = [forward h at t ++ backward h at t], where the
// backward read runs from T-1 down to 0.
Tensor bilstm_all(Tape& tape, const LstmCell& fwd, const LstmCell& bwd, const Tensor& xs);

}  // namespace threatlens
