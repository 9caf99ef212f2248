#include "cfc/nn.hpp"

#include <cmath>
#include <string>

#include "cfc/error.hpp"

namespace cfc {

Tensor xavier_init(long rows, long cols, Rng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::vector<real> v(static_cast<std::size_t>(rows * cols));
    for (auto& x : v) x = static_cast<real>(rng.uniform(-bound, bound));
    return Tensor::from(std::move(v), Shape{rows, cols}, true);
}

GruParams make_gru(long d_in, long hidden, Rng& rng) {
    if (d_in <= 0 || hidden <= 0) {
        throw ConfigError("make_gru: widths must be positive");
    }
    GruParams p;
    p.input_width = d_in;
    p.hidden_width = hidden;
    const long cols = d_in + hidden;
    p.w_update = xavier_init(hidden, cols, rng);
    p.w_reset = xavier_init(hidden, cols, rng);
    p.w_cand = xavier_init(hidden, cols, rng);
    p.b_update = Tensor::zeros({hidden}, true);
    p.b_reset = Tensor::zeros({hidden}, true);
    p.b_cand = Tensor::zeros({hidden}, true);
    return p;
}

RnnParams make_bigru(long d_in, long d_hid, Rng& rng) {
    if (d_hid % 2 != 0) {
        throw ConfigError("bigru width " + std::to_string(d_hid) + " must be even");
    }
    RnnParams p;
    p.fwd = make_gru(d_in, d_hid / 2, rng);
    p.bwd = make_gru(d_in, d_hid / 2, rng);
    return p;
}

RnnParams make_unigru(long d_in, long d_hid, Rng& rng) {
    RnnParams p;
    p.fwd = make_gru(d_in, d_hid, rng);
    return p;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    const bool vector_in = x.rank() == 1;
    const Tensor x2 = vector_in ? reshape(x, Shape{1, x.shape()[0]}) : x;
    if (x2.rank() != 2 || w.rank() != 2 || b.rank() != 1) {
        throw ShapeError("linear: expected x [T x d_in], W [d_out x d_in], b [d_out]");
    }
    if (x2.shape()[1] != w.shape()[1] || w.shape()[0] != b.shape()[0]) {
        throw ShapeError("linear: width mismatch: x " + x.shape().str() + ", W " +
                         w.shape().str() + ", b " + b.shape().str());
    }
    Tensor out = add(matmul(x2, transpose(w)), b);
    return vector_in ? reshape(out, Shape{out.shape()[1]}) : out;
}

namespace {

// One GRU step: h' = z*h + (1-z)*htilde, gates over [x ; h].
Tensor gru_step(const Tensor& x_row, const Tensor& h_prev, const GruParams& p) {
    const Tensor xh = concat(x_row, h_prev, 0);  // [d_in + h]
    const Tensor xh2 = reshape(xh, Shape{1, xh.shape()[0]});
    const Tensor z = sigmoid(linear(xh2, p.w_update, p.b_update));  // [1 x h]
    const Tensor r = sigmoid(linear(xh2, p.w_reset, p.b_reset));
    const Tensor rh = mul(reshape(r, Shape{p.hidden_width}), h_prev);
    const Tensor xrh = concat(x_row, rh, 0);
    const Tensor cand =
        tanh(linear(reshape(xrh, Shape{1, xrh.shape()[0]}), p.w_cand, p.b_cand));
    const Tensor z1 = reshape(z, Shape{p.hidden_width});
    const Tensor keep = mul(z1, h_prev);
    const Tensor update = mul(add_scalar(scale(z1, real(-1)), real(1)),
                              reshape(cand, Shape{p.hidden_width}));
    return add(keep, update);
}

}  // namespace

Tensor gru_forward(const Tensor& seq, const GruParams& params, Direction dir,
                   const std::vector<bool>* mask) {
    if (seq.rank() != 2) {
        throw DegenerateInputError("gru_forward: expected a nonempty [T x d_in] sequence");
    }
    const long t_len = seq.shape()[0];
    if (seq.shape()[1] != params.input_width) {
        throw ShapeError("gru_forward: input width " + seq.shape().str() +
                         " does not match params (d_in=" +
                         std::to_string(params.input_width) + ")");
    }
    if (mask && static_cast<long>(mask->size()) != t_len) {
        throw ShapeError("gru_forward: mask length mismatch");
    }
    const long h = params.hidden_width;
    Tensor state = Tensor::zeros({h});
    const Tensor zero_row = Tensor::zeros({h});
    std::vector<Tensor> outputs(static_cast<std::size_t>(t_len));
    for (long i = 0; i < t_len; ++i) {
        const long t = dir == Direction::forward ? i : t_len - 1 - i;
        if (mask && !(*mask)[static_cast<std::size_t>(t)]) {
            outputs[static_cast<std::size_t>(t)] = zero_row;  // state carries through
            continue;
        }
        const Tensor x_row = reshape(slice_rows(seq, t, t + 1), Shape{seq.shape()[1]});
        state = gru_step(x_row, state, params);
        outputs[static_cast<std::size_t>(t)] = state;
    }
    return stack_rows(outputs);
}

Tensor bigru(const Tensor& seq, const RnnParams& params, const std::vector<bool>* mask) {
    const Tensor f = gru_forward(seq, params.fwd, Direction::forward, mask);
    if (!params.bwd) return f;
    const Tensor b = gru_forward(seq, *params.bwd, Direction::backward, mask);
    return concat(f, b, 1);
}

Tensor bigru(const Tensor& seq, const GruParams& fwd, const GruParams& bwd,
             const std::vector<bool>* mask) {
    RnnParams p;
    p.fwd = fwd;
    p.bwd = bwd;
    return bigru(seq, p, mask);
}

EmbeddingTable random_embeddings(long vocab, long d_emb, Rng& rng) {
    if (vocab < 2 || d_emb <= 0) {
        throw ConfigError("random_embeddings: vocab must hold pad+unk and d_emb > 0");
    }
    std::vector<real> v(static_cast<std::size_t>(vocab * d_emb));
    for (long i = d_emb; i < vocab * d_emb; ++i)  // row 0 stays zero
        v[static_cast<std::size_t>(i)] = static_cast<real>(rng.uniform(-0.1, 0.1));
    EmbeddingTable t;
    t.weights = Tensor::from(std::move(v), Shape{vocab, d_emb}, false);
    t.fixed = true;
    return t;
}

Tensor embed(const std::vector<int>& ids, const EmbeddingTable& table) {
    if (!table.fixed) {
        throw ConfigError("embed: trainable embedding tables are not supported");
    }
    if (ids.empty()) throw DegenerateInputError("embed: empty token sequence");
    const long v = table.vocab_size(), d = table.dim();
    std::vector<real> out(ids.size() * static_cast<std::size_t>(d));
    const auto& w = table.weights.data();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= v) {
            throw VocabError("embed: token id " + std::to_string(id) +
                             " outside vocabulary of size " + std::to_string(v));
        }
        std::copy(w.begin() + static_cast<long>(id) * d,
                  w.begin() + (static_cast<long>(id) + 1) * d,
                  out.begin() + static_cast<long>(i) * d);
    }
    return Tensor::from(std::move(out), Shape{static_cast<long>(ids.size()), d});
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate " + std::to_string(rate) + " outside [0, 1)");
    }
    if (!training || rate == 0.0) return x;
    const real keep_scale = static_cast<real>(1.0 / (1.0 - rate));
    std::vector<real> mask(x.data().size());
    for (auto& m : mask) m = rng.uniform() < rate ? real(0) : keep_scale;
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad() && active_tape() != nullptr);
    for (std::size_t i = 0; i < mask.size(); ++i) out.data()[i] = x.data()[i] * mask[i];
    if (out.requires_grad()) {
        auto xn = x.node();
        auto on = out.node();
        active_tape()->record([xn, on, mask = std::move(mask)] {
            if (on->grad.empty()) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < mask.size(); ++i)
                xn->grad[i] += on->grad[i] * mask[i];
        });
    }
    return out;
}

std::vector<int> word_dropout(const std::vector<int>& tokens, double rate, bool training,
                              Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("word_dropout rate " + std::to_string(rate) + " outside [0, 1)");
    }
    if (!training || rate == 0.0) return tokens;
    std::vector<int> out = tokens;
    for (auto& id : out) {
        if (id != 0 && rng.uniform() < rate) id = 1;  // pad stays, others -> unk
    }
    return out;
}

MlpScorerParams make_scorer(long d_in, long hidden, Rng& rng) {
    MlpScorerParams p;
    p.w1 = xavier_init(hidden, d_in, rng);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = xavier_init(1, hidden, rng);
    p.b2 = Tensor::zeros({1}, true);
    return p;
}

}  // namespace cfc
