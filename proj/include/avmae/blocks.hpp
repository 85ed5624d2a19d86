#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avmae/errors.hpp"
#include "avmae/rng.hpp"
#include "avmae/tensor.hpp"

namespace avmae {

struct ParamRef {
    std::string name;
    Tensor tensor;
};
using ParamList = std::vector<ParamRef>;

// Weights: truncated normal, std 0.02; biases zero.
class Linear {
public:
    Linear() = default;
    Linear(size_t in, size_t out, Rng& rng) {
        W_ = Tensor::zeros({in, out});
        for (size_t i = 0; i < W_.size(); ++i) W_.at(i) = rng.truncated_normal(0.02);
        b_ = Tensor::zeros({out});
        W_.set_requires_grad(true);
        b_.set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const { return add_rowvector(matmul(x, W_), b_); }

    size_t in_dim() const { return W_.rows(); }
    size_t out_dim() const { return W_.cols(); }
    Tensor& weight() { return W_; }
    Tensor& bias() { return b_; }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + ".weight", W_});
        out.push_back({prefix + ".bias", b_});
    }

private:
    Tensor W_;  // [in x out]
    Tensor b_;  // [out]
};

class LayerNormLayer {
public:
    LayerNormLayer() = default;
    LayerNormLayer(size_t dim, double eps) : eps_(eps) {
        gamma_ = Tensor::full({dim}, 1.0).set_requires_grad(true);
        beta_ = Tensor::zeros({dim}).set_requires_grad(true);
    }

    Tensor forward(const Tensor& x) const {
        return add_rowvector(mul_rowvector(layernorm(x, eps_), gamma_), beta_);
    }

    void collect(const std::string& prefix, ParamList& out) const {
        out.push_back({prefix + ".gamma", gamma_});
        out.push_back({prefix + ".beta", beta_});
    }

private:
    Tensor gamma_, beta_;
    double eps_ = 1e-6;
};

// Multi-head scaled dot-product attention over a query stream and a
// key/value stream (pass the same tensor twice for self-attention).
class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(size_t dim, size_t heads, Rng& rng)
        : heads_(heads),
          q_(dim, dim, rng),
          k_(dim, dim, rng),
          v_(dim, dim, rng),
          o_(dim, dim, rng) {
        if (heads == 0 || dim % heads != 0) {
            throw ConfigError("attention dim " + std::to_string(dim) +
                              " not divisible by heads " + std::to_string(heads));
        }
    }

    Tensor forward(const Tensor& query, const Tensor& keyval) const {
        const size_t dim = q_.out_dim();
        const size_t dh = dim / heads_;
        Tensor Q = q_.forward(query);
        Tensor K = k_.forward(keyval);
        Tensor V = v_.forward(keyval);
        const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
        std::vector<Tensor> head_outs;
        head_outs.reserve(heads_);
        for (size_t h = 0; h < heads_; ++h) {
            Tensor Qh = slice_cols(Q, h * dh, dh);
            Tensor Kh = slice_cols(K, h * dh, dh);
            Tensor Vh = slice_cols(V, h * dh, dh);
            Tensor scores = scale(matmul_nt(Qh, Kh), inv_sqrt_dh);
            Tensor weights = softmax(scores);
            head_outs.push_back(matmul(weights, Vh));
        }
        return o_.forward(concat_cols(head_outs));
    }

    void collect(const std::string& prefix, ParamList& out) const {
        q_.collect(prefix + ".q", out);
        k_.collect(prefix + ".k", out);
        v_.collect(prefix + ".v", out);
        o_.collect(prefix + ".o", out);
    }

private:
    size_t heads_ = 1;
    Linear q_, k_, v_, o_;
};

class Mlp {
public:
    Mlp() = default;
    Mlp(size_t dim, Rng& rng) : fc1_(dim, 4 * dim, rng), fc2_(4 * dim, dim, rng) {}

    Tensor forward(const Tensor& x) const { return fc2_.forward(gelu(fc1_.forward(x))); }

    void collect(const std::string& prefix, ParamList& out) const {
        fc1_.collect(prefix + ".fc1", out);
        fc2_.collect(prefix + ".fc2", out);
    }

private:
    Linear fc1_, fc2_;
};

enum class AttentionKind { self_attention, cross_attention, local_window };

// Pre-norm transformer block: x + Attn(LN1(x)), then x + MLP(LN2(x)).
// Cross blocks normalize the key/value stream with their own LayerNorm and
// apply the MLP to the query stream only. Local-window blocks restrict
// attention to contiguous windows of the grid-ordered sequence; a trailing
// remainder forms a final shorter window. Shifted blocks rotate the
// sequence cyclically by window/2 before windowing and rotate back after.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(AttentionKind kind, size_t dim, size_t heads, double ln_eps, Rng& rng,
                     size_t window = 0, bool shifted = false)
        : kind_(kind),
          window_(window),
          shifted_(shifted),
          ln1_(dim, ln_eps),
          ln2_(dim, ln_eps),
          attn_(dim, heads, rng),
          mlp_(dim, rng) {
        if (kind == AttentionKind::cross_attention) {
            ln_kv_ = LayerNormLayer(dim, ln_eps);
        }
        if (kind == AttentionKind::local_window && window == 0) {
            throw ConfigError("local_window block needs window >= 1");
        }
    }

    AttentionKind kind() const { return kind_; }

    Tensor forward(const Tensor& x) const {
        if (kind_ == AttentionKind::cross_attention) {
            throw ContractError("cross-attention block needs a key/value stream");
        }
        Tensor normed = ln1_.forward(x);
        Tensor attended;
        if (kind_ == AttentionKind::self_attention) {
            attended = attn_.forward(normed, normed);
        } else {
            attended = windowed_attention(normed);
        }
        Tensor h = add(x, attended);
        return add(h, mlp_.forward(ln2_.forward(h)));
    }

    Tensor forward_cross(const Tensor& queries, const Tensor& keyvals) const {
        if (kind_ != AttentionKind::cross_attention) {
            throw ContractError("forward_cross called on a non-cross block");
        }
        Tensor h = add(queries, attn_.forward(ln1_.forward(queries), ln_kv_.forward(keyvals)));
        return add(h, mlp_.forward(ln2_.forward(h)));
    }

    void collect(const std::string& prefix, ParamList& out) const {
        ln1_.collect(prefix + ".ln1", out);
        if (kind_ == AttentionKind::cross_attention) ln_kv_.collect(prefix + ".ln_kv", out);
        ln2_.collect(prefix + ".ln2", out);
        attn_.collect(prefix + ".attn", out);
        mlp_.collect(prefix + ".mlp", out);
    }

private:
    Tensor windowed_attention(const Tensor& x) const {
        const size_t L = x.rows();
        const size_t w = std::min(window_, L);
        const size_t shift = (shifted_ && w > 1) ? w / 2 : 0;
        Tensor seq = x;
        if (shift > 0) {
            std::vector<size_t> rolled(L);
            for (size_t i = 0; i < L; ++i) rolled[i] = (i + shift) % L;
            seq = gather_rows(seq, rolled);
        }
        std::vector<Tensor> outs;
        for (size_t start = 0; start < L; start += w) {
            const size_t len = std::min(w, L - start);
            Tensor win = slice_rows(seq, start, len);
            outs.push_back(attn_.forward(win, win));
        }
        Tensor joined = outs.size() == 1 ? outs[0] : concat_rows(outs);
        if (shift > 0) {
            std::vector<size_t> unrolled(L);
            for (size_t i = 0; i < L; ++i) unrolled[i] = (i + L - shift) % L;
            joined = gather_rows(joined, unrolled);
        }
        return joined;
    }

    AttentionKind kind_ = AttentionKind::self_attention;
    size_t window_ = 0;
    bool shifted_ = false;
    LayerNormLayer ln1_, ln2_, ln_kv_;
    MultiHeadAttention attn_;
    Mlp mlp_;
};

}  // namespace avmae
