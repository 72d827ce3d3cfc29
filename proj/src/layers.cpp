#include "pointlang/layers.hpp"

namespace pointlang::nn {

void init_dense(ParamStore& ps, Rng& rng, const std::string& prefix, int in,
                int out, double w_std) {
  Rng r = rng.child(prefix);
  ps.add(prefix + ".w", Tensor::randn({in, out}, r, w_std));
  ps.add(prefix + ".b", Tensor::zeros({out}));
}

void init_dense_zero(ParamStore& ps, const std::string& prefix, int in, int out) {
  ps.add(prefix + ".w", Tensor::zeros({in, out}));
  ps.add(prefix + ".b", Tensor::zeros({out}));
}

void init_layernorm(ParamStore& ps, const std::string& prefix, int dim) {
  ps.add(prefix + ".g", Tensor::full({dim}, 1.0));
  ps.add(prefix + ".b", Tensor::zeros({dim}));
}

Tensor dense(Tape& t, const ParamView& p, const std::string& prefix,
             const Tensor& x) {
  return t.add(t.matmul(x, p[prefix + ".w"]), p[prefix + ".b"]);
}

Tensor layer_norm(Tape& t, const ParamView& p, const std::string& prefix,
                  const Tensor& x) {
  return t.layernorm(x, p[prefix + ".g"], p[prefix + ".b"]);
}

void init_block(ParamStore& ps, Rng& rng, const std::string& prefix,
                const BlockConfig& cfg) {
  init_layernorm(ps, prefix + ".ln1", cfg.dim);
  init_dense(ps, rng, prefix + ".attn.q", cfg.dim, cfg.dim);
  init_dense(ps, rng, prefix + ".attn.k", cfg.dim, cfg.dim);
  init_dense(ps, rng, prefix + ".attn.v", cfg.dim, cfg.dim);
  init_dense(ps, rng, prefix + ".attn.o", cfg.dim, cfg.dim);
  if (cfg.cross) {
    init_layernorm(ps, prefix + ".lnc", cfg.dim);
    init_dense(ps, rng, prefix + ".cross.q", cfg.dim, cfg.dim);
    init_dense(ps, rng, prefix + ".cross.k", cfg.dim, cfg.dim);
    init_dense(ps, rng, prefix + ".cross.v", cfg.dim, cfg.dim);
    init_dense(ps, rng, prefix + ".cross.o", cfg.dim, cfg.dim);
  }
  init_layernorm(ps, prefix + ".ln2", cfg.dim);
  init_dense(ps, rng, prefix + ".mlp.fc1", cfg.dim, cfg.dim * cfg.mlp_mult);
  init_dense(ps, rng, prefix + ".mlp.fc2", cfg.dim * cfg.mlp_mult, cfg.dim);
}

Tensor block_forward(Tape& t, const ParamView& p, const std::string& prefix,
                     const BlockConfig& cfg, Tensor x, const Tensor* self_bias,
                     const Tensor* memory, int cross_rows) {
  // self-attention
  {
    Tensor h = layer_norm(t, p, prefix + ".ln1", x);
    Tensor q = dense(t, p, prefix + ".attn.q", h);
    Tensor k = dense(t, p, prefix + ".attn.k", h);
    Tensor v = dense(t, p, prefix + ".attn.v", h);
    Tensor a = t.attention(q, k, v, cfg.heads, self_bias);
    x = t.add(x, dense(t, p, prefix + ".attn.o", a));
  }
  // cross-attention into memory
  if (memory) {
    if (!cfg.cross) fail("block_forward: memory given but block has no cross weights");
    int rows = cross_rows < 0 ? x.dim(0) : cross_rows;
    Tensor part = rows == x.dim(0) ? x : t.slice(x, 0, 0, rows);
    Tensor h = layer_norm(t, p, prefix + ".lnc", part);
    Tensor q = dense(t, p, prefix + ".cross.q", h);
    Tensor k = dense(t, p, prefix + ".cross.k", *memory);
    Tensor v = dense(t, p, prefix + ".cross.v", *memory);
    Tensor a = t.attention(q, k, v, cfg.heads, nullptr);
    Tensor delta = dense(t, p, prefix + ".cross.o", a);
    Tensor updated = t.add(part, delta);
    x = rows == x.dim(0)
            ? updated
            : t.concat({updated, t.slice(x, 0, rows, x.dim(0))}, 0);
  }
  // mlp
  {
    Tensor h = layer_norm(t, p, prefix + ".ln2", x);
    h = dense(t, p, prefix + ".mlp.fc1", h);
    h = t.gelu(h);
    h = dense(t, p, prefix + ".mlp.fc2", h);
    x = t.add(x, h);
  }
  return x;
}

Tensor causal_mask(int n) {
  std::vector<double> m(size_t(n) * size_t(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) m[size_t(i) * size_t(n) + size_t(j)] = kMaskBlocked;
  return Tensor::from({n, n}, std::move(m));
}

Tensor query_text_mask(int n_queries, int n_text, bool causal_text) {
  int n = n_queries + n_text;
  std::vector<double> m(size_t(n) * size_t(n), 0.0);
  if (causal_text) {
    for (int i = 0; i < n_queries; ++i)
      for (int j = n_queries; j < n; ++j)
        m[size_t(i) * size_t(n) + size_t(j)] = kMaskBlocked;  // queries never see text
    for (int i = n_queries; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        m[size_t(i) * size_t(n) + size_t(j)] = kMaskBlocked;  // causal within text
  }
  return Tensor::from({n, n}, std::move(m));
}

}  // namespace pointlang::nn
