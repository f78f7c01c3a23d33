#include "embfat/model.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>

#include "embfat/graph.hpp"
#include "embfat/rng.hpp"

namespace embfat {

namespace {

std::atomic<std::uint64_t> g_backprops{0};

constexpr char kMagic[4] = {'E', 'F', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

void validate_dims(const ModelDims& d) {
  if (d.vocab < 2 || d.embed_dim == 0 || d.hidden == 0 || d.classes < 2 ||
      d.max_len == 0) {
    throw ConfigError("invalid model dims");
  }
}

struct BatchGraph {
  Graph g;
  NodeId emb = 0, w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  std::vector<NodeId> delta_nodes;  // per example, only when delta given
  std::vector<NodeId> logits;
  NodeId mean_loss = 0;
  bool has_loss = false;
};

BatchGraph build_batch_graph(const ModelParams& params, const Batch& batch,
                             const Tensor* delta, bool params_as_leaves,
                             bool delta_as_leaves, bool with_loss) {
  const ModelDims& dims = params.dims;
  if (batch.max_len != dims.max_len) {
    throw ShapeError("batch max_len " + std::to_string(batch.max_len) +
                     " does not match model max_len " + std::to_string(dims.max_len));
  }
  if (delta) {
    const std::vector<std::size_t> want{batch.size, batch.max_len, dims.embed_dim};
    if (delta->shape != want) {
      throw ShapeError("delta shape " + shape_str(delta->shape) + " does not match " +
                       shape_str(want));
    }
  }

  BatchGraph bg;
  Graph& g = bg.g;
  auto param_node = [&](const Tensor& t) {
    return params_as_leaves ? g.leaf(t) : g.input(t);
  };
  bg.emb = param_node(params.embedding);
  bg.w1 = param_node(params.w1);
  bg.b1 = param_node(params.b1);
  bg.w2 = param_node(params.w2);
  bg.b2 = param_node(params.b2);

  const std::size_t d = dims.embed_dim;
  for (std::size_t i = 0; i < batch.size; ++i) {
    const std::size_t n = batch.lengths[i];
    if (n == 0) throw ConfigError("empty sequence in batch");
    std::vector<std::size_t> rows(n);
    for (std::size_t t = 0; t < n; ++t) {
      rows[t] = static_cast<std::size_t>(batch.id_at(i, t));
    }
    NodeId x = g.gather_rows(bg.emb, rows);
    if (delta) {
      Tensor slice = Tensor::zeros({n, d});
      const std::size_t base = i * batch.max_len * d;
      for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t j = 0; j < d; ++j) {
          slice.at(t, j) = delta->data[base + t * d + j];
        }
      }
      NodeId dn = delta_as_leaves ? g.leaf(std::move(slice)) : g.input(std::move(slice));
      bg.delta_nodes.push_back(dn);
      x = g.add(x, dn);
    }
    NodeId pooled = g.masked_mean_pool(x, std::vector<std::uint8_t>(n, 1));
    NodeId h_pre = g.add(
        g.reshape(g.matmul(g.reshape(pooled, {1, d}), bg.w1), {dims.hidden}), bg.b1);
    NodeId h_act = g.relu(h_pre);
    NodeId logits = g.add(
        g.reshape(g.matmul(g.reshape(h_act, {1, dims.hidden}), bg.w2), {dims.classes}),
        bg.b2);
    bg.logits.push_back(logits);
    if (with_loss) {
      NodeId li = g.softmax_cross_entropy(logits, batch.labels[i]);
      bg.mean_loss = (i == 0) ? li : g.add(bg.mean_loss, li);
    }
  }
  if (with_loss) {
    bg.mean_loss = g.scale(bg.mean_loss, 1.0 / static_cast<double>(batch.size));
    bg.has_loss = true;
  }
  return bg;
}

}  // namespace

ModelParams init_params(const ModelDims& dims, std::uint64_t seed,
                        const EmbeddingTable* pretrained) {
  validate_dims(dims);
  ModelParams p;
  p.dims = dims;

  if (pretrained) {
    if (pretrained->matrix.shape[0] != dims.vocab || pretrained->dim != dims.embed_dim) {
      throw ConfigError("pretrained embedding dims " + shape_str(pretrained->matrix.shape) +
                        " do not match model dims");
    }
    p.embedding = pretrained->matrix;
  } else {
    p.embedding = random_embeddings(dims.vocab, dims.embed_dim, 0.1, seed).matrix;
  }

  Rng rng(derive_seed(seed, "weight-init"));
  auto glorot = [&](std::size_t fan_in, std::size_t fan_out) {
    const double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros({fan_in, fan_out});
    for (double& v : t.data) v = rng.uniform(-s, s);
    return t;
  };
  p.w1 = glorot(dims.embed_dim, dims.hidden);
  p.b1 = Tensor::zeros({dims.hidden});
  p.w2 = glorot(dims.hidden, dims.classes);
  p.b2 = Tensor::zeros({dims.classes});
  return p;
}

Tensor forward(const ModelParams& params, const Batch& batch, const Tensor* delta) {
  BatchGraph bg = build_batch_graph(params, batch, delta, false, false, false);
  Tensor out = Tensor::zeros({batch.size, params.dims.classes});
  for (std::size_t i = 0; i < batch.size; ++i) {
    const Tensor& row = bg.g.value(bg.logits[i]);
    for (std::size_t c = 0; c < params.dims.classes; ++c) out.at(i, c) = row.data[c];
  }
  return out;
}

LossGrads loss_and_grads(const ModelParams& params, const Batch& batch,
                         const Tensor* delta, GradTarget wrt) {
  const bool want_params = wrt != GradTarget::kDelta;
  const bool want_delta = wrt != GradTarget::kParams;
  if (want_delta && !delta) {
    throw ConfigError("loss_and_grads: delta gradients requested without delta");
  }

  BatchGraph bg = build_batch_graph(params, batch, delta, want_params, want_delta, true);
  g_backprops.fetch_add(1, std::memory_order_relaxed);
  auto grads = bg.g.backward(bg.mean_loss);

  LossGrads out;
  out.loss = bg.g.value(bg.mean_loss).data[0];
  if (want_params) {
    ParamGrads pg;
    pg.embedding = std::move(grads.at(bg.emb));
    pg.w1 = std::move(grads.at(bg.w1));
    pg.b1 = std::move(grads.at(bg.b1));
    pg.w2 = std::move(grads.at(bg.w2));
    pg.b2 = std::move(grads.at(bg.b2));
    out.params = std::move(pg);
  }
  if (want_delta) {
    const std::size_t d = params.dims.embed_dim;
    Tensor dg = Tensor::zeros({batch.size, batch.max_len, d});
    for (std::size_t i = 0; i < batch.size; ++i) {
      const Tensor& slice = grads.at(bg.delta_nodes[i]);
      const std::size_t base = i * batch.max_len * d;
      for (std::size_t t = 0; t < batch.lengths[i]; ++t) {
        for (std::size_t j = 0; j < d; ++j) dg.data[base + t * d + j] = slice.at(t, j);
      }
    }
    out.delta = std::move(dg);
  }
  return out;
}

Prediction predict(const ModelParams& params, const std::vector<TokenId>& ids) {
  if (ids.empty()) throw ConfigError("predict: empty token sequence");
  Batch b = encode_single(ids, 0, params.dims.max_len);
  Tensor logits2d = forward(params, b);
  Tensor logits({params.dims.classes}, logits2d.data);
  XentResult x = softmax_cross_entropy(logits, 0);
  std::size_t best = 0;
  for (std::size_t c = 1; c < x.probs.data.size(); ++c) {
    if (x.probs.data[c] > x.probs.data[best]) best = c;
  }
  return {best, std::move(x.probs)};
}

std::uint64_t backprop_count() { return g_backprops.load(std::memory_order_relaxed); }
void reset_backprop_count() { g_backprops.store(0, std::memory_order_relaxed); }

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated checkpoint: " + path);
}

void write_tensor(std::ofstream& out, const Tensor& t) {
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

void read_tensor(std::ifstream& in, Tensor& t, const std::string& path) {
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  if (!in) throw FormatError("truncated checkpoint: " + path);
}

}  // namespace

void save_checkpoint(const ModelParams& params, const CheckpointMeta& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open checkpoint for write: " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  const std::uint64_t dims[5] = {params.dims.vocab, params.dims.embed_dim,
                                 params.dims.hidden, params.dims.classes,
                                 params.dims.max_len};
  for (std::uint64_t d : dims) write_pod(out, d);
  write_tensor(out, params.embedding);
  write_tensor(out, params.w1);
  write_tensor(out, params.b1);
  write_tensor(out, params.w2);
  write_tensor(out, params.b2);
  write_pod(out, meta.epochs_run);
  write_pod(out, meta.trainer_kind);
  write_pod(out, meta.seed);
  if (!out) throw FormatError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("bad checkpoint magic: " + path);
  }
  std::uint32_t version = 0;
  read_pod(in, version, path);
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      ": " + path);
  }
  std::uint64_t dims[5];
  for (std::uint64_t& d : dims) read_pod(in, d, path);

  Checkpoint ck;
  ck.params.dims = {dims[0], dims[1], dims[2], dims[3], dims[4]};
  validate_dims(ck.params.dims);
  ck.params.embedding = Tensor::zeros({dims[0], dims[1]});
  ck.params.w1 = Tensor::zeros({dims[1], dims[2]});
  ck.params.b1 = Tensor::zeros({dims[2]});
  ck.params.w2 = Tensor::zeros({dims[2], dims[3]});
  ck.params.b2 = Tensor::zeros({dims[3]});
  read_tensor(in, ck.params.embedding, path);
  read_tensor(in, ck.params.w1, path);
  read_tensor(in, ck.params.b1, path);
  read_tensor(in, ck.params.w2, path);
  read_tensor(in, ck.params.b2, path);
  read_pod(in, ck.meta.epochs_run, path);
  read_pod(in, ck.meta.trainer_kind, path);
  read_pod(in, ck.meta.seed, path);
  return ck;
}

}  // namespace embfat
