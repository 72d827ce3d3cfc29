#pragma once

#include <string>

#include "pointlang/params.hpp"
#include "pointlang/rng.hpp"

namespace pointlang::nn {

// Default init scale for weight matrices and embeddings.
inline constexpr double kInitStd = 0.02;

// Registers "<prefix>.w" [in,out] and "<prefix>.b" [out].
void init_dense(ParamStore& ps, Rng& rng, const std::string& prefix, int in,
                int out, double w_std = kInitStd);
// Zero-initialized dense (output heads: uniform logits at init).
void init_dense_zero(ParamStore& ps, const std::string& prefix, int in, int out);
// Registers "<prefix>.g" (ones) and "<prefix>.b" (zeros), both [dim].
void init_layernorm(ParamStore& ps, const std::string& prefix, int dim);

Tensor dense(Tape& t, const ParamView& p, const std::string& prefix,
             const Tensor& x);
Tensor layer_norm(Tape& t, const ParamView& p, const std::string& prefix,
                  const Tensor& x);

// Pre-norm transformer block. Layout per block:
//   x += self_attn(LN1(x))          (optional additive [L,L] bias mask)
//   x += cross_attn(LNc(x), mem)    (only when built with cross=true;
//                                    applied to the first cross_rows rows,
//                                    -1 = all rows)
//   x += mlp(LN2(x))                (dense 4x, GELU, dense)
struct BlockConfig {
  int dim = 64;
  int heads = 4;
  int mlp_mult = 4;
  bool cross = false;
};

void init_block(ParamStore& ps, Rng& rng, const std::string& prefix,
                const BlockConfig& cfg);

Tensor block_forward(Tape& t, const ParamView& p, const std::string& prefix,
                     const BlockConfig& cfg, Tensor x,
                     const Tensor* self_bias = nullptr,
                     const Tensor* memory = nullptr, int cross_rows = -1);

// Additive attention masks (0 = attend, -1e9 = blocked), untracked tensors.
inline constexpr double kMaskBlocked = -1e9;
Tensor causal_mask(int n);
// Mask for a [queries || text] sequence. Queries always see all queries.
// causal_text: text position i sees queries and text <= i, queries do not see
// text. Otherwise fully bidirectional.
Tensor query_text_mask(int n_queries, int n_text, bool causal_text);

}  // namespace pointlang::nn
