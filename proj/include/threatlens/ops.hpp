#pragma once

// Differentiable operations used by the classifier and the tagger. Only what
// the two networks need; there is no broadcasting.
//
// Scalars have shape {} (one element). Every op checks shapes and throws
// ShapeError on mismatch; every output is checked for NaN/Inf (NumericError).

#include <cstddef>
#include <span>
#include <vector>

#include "threatlens/tensor.hpp"

namespace threatlens::ops {

enum class Activation { identity, relu, tanh };

// ids -> rows of `table` [V x d]. Gradients scatter-add into the table rows.
Tensor embed(Tape& tape, std::span<const int> ids, const Tensor& table);

// Text convolution over a sentence matrix S [n x d].
//   filter [h x d], bias {}      -> feature map [n-h+1]
//   filters [f x h x d], bias [f] -> feature maps [n-h+1 x f]
// c_i = act(sum(W (*) S[i : i+h-1]) + b). Throws WindowTooLarge when n < h.
Tensor conv_text(Tape& tape, const Tensor& sentence, const Tensor& filters, const Tensor& bias,
                 Activation activation);

// [L] -> {} or [L x f] -> [f]. The gradient goes to the first maximal index.
// Throws EmptyFeatureMap when L == 0.
Tensor max_over_time(Tape& tape, const Tensor& feature_map);

// Inverted dropout: in train mode each element is zeroed with probability p
// and survivors are scaled by 1/(1-p). Infer mode returns `x` itself.
// Throws InvalidProbability unless 0 <= p < 1.
Tensor dropout(Tape& tape, const Tensor& x, double p, Mode mode, Rng& rng);

// Flattened concatenation of the parts into one vector.
Tensor concat(Tape& tape, std::span<const Tensor> parts);
// [n x a] ++ [n x b] -> [n x (a+b)]
Tensor concat_columns(Tape& tape, const Tensor& left, const Tensor& right);
// k-vectors -> [T x k]
Tensor stack_rows(Tape& tape, std::span<const Tensor> rows);
// [T x k] -> [k]
Tensor row(Tape& tape, const Tensor& matrix, std::size_t index);

// x [F] or [n x F], weights [F x m], bias [m] -> [m] or [n x m].
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weights, const Tensor& bias);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor sum(Tape& tape, const Tensor& x);
// Mean of scalar tensors.
Tensor mean(Tape& tape, std::span<const Tensor> scalars);

struct SoftmaxXent {
  Tensor probabilities;  // [m], not differentiable
  Tensor loss;           // {}, -log p[true_class]
};

// Max-subtracted softmax and cross-entropy. d loss / d logits = p - onehot.
SoftmaxXent softmax_xent(Tape& tape, const Tensor& logits, std::size_t true_class);
SoftmaxXent affine_softmax_xent(Tape& tape, const Tensor& features, const Tensor& weights,
                                const Tensor& bias, std::size_t true_class);

std::vector<double> softmax(std::span<const double> logits);
double logsumexp(std::span<const double> values);

}  // namespace threatlens::ops
