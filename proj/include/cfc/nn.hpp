#pragma once

#include <optional>
#include <vector>

#include "cfc/rng.hpp"
#include "cfc/tensor.hpp"

namespace cfc {

// Per-direction GRU weights. Each gate matrix multiplies the concatenation
// [x_t ; h_{t-1}] (for the candidate gate, [x_t ; r_t * h_{t-1}]), so it is
// shaped [hidden x (input + hidden)].
struct GruParams {
    Tensor w_update, w_reset, w_cand;  // [h x (d_in + h)]
    Tensor b_update, b_reset, b_cand;  // [h]
    long input_width = 0;
    long hidden_width = 0;
};

enum class Direction { forward, backward };

// Sequence encoder: bidirectional when `bwd` is present (each direction
// d_hid/2 wide), otherwise a single forward GRU of full width.
struct RnnParams {
    GruParams fwd;
    std::optional<GruParams> bwd;
    long output_width() const {
        return fwd.hidden_width + (bwd ? bwd->hidden_width : 0);
    }
};

// Uniform Xavier/Glorot init in [-sqrt(6/(fan_in+fan_out)), +...], zero biases.
Tensor xavier_init(long rows, long cols, Rng& rng);

GruParams make_gru(long d_in, long hidden, Rng& rng);
RnnParams make_bigru(long d_in, long d_hid, Rng& rng);   // d_hid must be even
RnnParams make_unigru(long d_in, long d_hid, Rng& rng);

// x W^T + b for x of rank 1 ([d_in] -> [d_out]) or rank 2 ([T x d_in] ->
// [T x d_out]); W is [d_out x d_in], b is [d_out].
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Single-direction GRU over seq [T x d_in] -> [T x h]; zero initial state.
// Row t of the output is the hidden state after consuming token t in input
// order for both directions (the backward pass traverses reversed and its
// outputs are un-reversed). Positions with mask false are passed through:
// the state is carried and the output row is zero.
Tensor gru_forward(const Tensor& seq, const GruParams& params, Direction dir,
                   const std::vector<bool>* mask = nullptr);

// Per-position concatenation [forward_t ; backward_t] (or the single
// direction's output when unidirectional).
Tensor bigru(const Tensor& seq, const RnnParams& params,
             const std::vector<bool>* mask = nullptr);
Tensor bigru(const Tensor& seq, const GruParams& fwd, const GruParams& bwd,
             const std::vector<bool>* mask = nullptr);

struct EmbeddingTable {
    Tensor weights;  // [vocab x d_emb]; row 0 = padding (zeros), row 1 = unknown
    bool fixed = true;
    long vocab_size() const { return weights.shape()[0]; }
    long dim() const { return weights.shape()[1]; }
};

// All rows uniform in [-0.1, 0.1] except the zero padding row.
EmbeddingTable random_embeddings(long vocab, long d_emb, Rng& rng);

// Gather rows for `ids`; the table is fixed, so no gradient reaches it.
Tensor embed(const std::vector<int>& ids, const EmbeddingTable& table);

// Inverted dropout: kept entries scaled by 1/(1-rate) in training mode,
// identity in eval mode. rate must be in [0, 1).
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

// Replaces each non-padding token by the unknown id with probability `rate`
// in training mode; identity in eval mode.
std::vector<int> word_dropout(const std::vector<int>& tokens, double rate, bool training,
                              Rng& rng);

// Two-layer MLP position scorer: tanh(W2 tanh(W1 x + b1) + b2).
struct MlpScorerParams {
    Tensor w1, b1;  // [hidden x d_in], [hidden]
    Tensor w2, b2;  // [1 x hidden], [1]
};

MlpScorerParams make_scorer(long d_in, long hidden, Rng& rng);

}  // namespace cfc
