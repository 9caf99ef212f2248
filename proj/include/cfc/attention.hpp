#pragma once

#include <vector>

#include "cfc/nn.hpp"
#include "cfc/tensor.hpp"

namespace cfc {

// Dropout request passed into attention ops; inactive by default.
struct DropoutSpec {
    double rate = 0.0;
    bool training = false;
    Rng* rng = nullptr;
    bool active() const { return training && rate > 0.0 && rng != nullptr; }
};

struct CoattnOptions {
    // The affinity softmaxes normalize along the contracted dimension by
    // default, so every attention row is a convex combination of the other
    // sequence's positions. The literal flag instead normalizes each matrix
    // column-wise, for comparison.
    bool literal_columnwise_softmax = false;
    DropoutSpec dropout;  // applied to the coattention context U
};

struct CoattnOutput {
    Tensor context;      // U = [C_a ; S_a], [T_a x (gru_width + d)]
    Tensor affinity;     // A = Ea Eb^T, [T_a x T_b]
    Tensor attn_over_b;  // softmax(A)   used for S_a, [T_a x T_b]
    Tensor attn_over_a;  // softmax(A^T) used for S_b, [T_b x T_a]
};

struct SelfattnOutput {
    Tensor summary;  // [d_in]
    Tensor weights;  // [T], nonnegative, sums to 1 over unmasked positions
    Tensor scores;   // [T] raw MLP scores (zeros under uniform pooling)
};

// A = Ea Eb^T; feature widths must match.
Tensor affinity(const Tensor& ea, const Tensor& eb);

// Codependent encoding of `ea` against `eb`:
//   S_a = softmax(A) Eb,  S_b = softmax(A^T) Ea,
//   C_a = BiGRU(softmax(A) S_b),  U = [C_a ; S_a].
// Masks (true = real token) may mark padded positions; padded rows of U are
// zeroed and padded keys get exactly zero attention weight.
CoattnOutput coattend(const Tensor& ea, const Tensor& eb, const RnnParams& gru,
                      const std::vector<bool>* mask_a = nullptr,
                      const std::vector<bool>* mask_b = nullptr,
                      const CoattnOptions& options = {});

// Position-scored weighted sum: a_t = tanh(W2 tanh(W1 x_t + b1) + b2),
// weights = softmax(a) over unmasked positions, summary = sum_t w_t x_t.
// With uniform_pool the learned scorer is bypassed and unmasked positions
// get weight 1/T (the -selfattn ablation).
SelfattnOutput selfattend(const Tensor& x, const MlpScorerParams& scorer,
                          const std::vector<bool>* mask = nullptr,
                          bool uniform_pool = false,
                          const DropoutSpec& drop = {});

}  // namespace cfc
