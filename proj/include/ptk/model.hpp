#pragma once

// Desk-scale decoder-only transformer over unified patch/text sequences.
//
// Patch slots are embedded by a bias-free linear projector (M*6 -> d_model),
// every other token by an embedding table. Blocks are pre-norm (RMSNorm, no
// gain) causal multi-head attention followed by a GELU MLP. Loss is the mean
// next-token NLL over masked positions. Gradients are hand-derived; all math
// is double precision and single-threaded.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "ptk/error.hpp"
#include "ptk/io.hpp"
#include "ptk/sequence.hpp"

namespace ptk::model {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Reserved vocabulary ids. Text ids start at kFirstTextId.
inline constexpr std::uint32_t kPcStartId = 0;
inline constexpr std::uint32_t kPcEndId = 1;
inline constexpr std::uint32_t kLayerSepId = 2;
inline constexpr std::uint32_t kRowSepId = 3;
inline constexpr std::uint32_t kPadId = 4;
inline constexpr std::uint32_t kFirstTextId = 5;

inline constexpr double kNormEps = 1e-5;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 64;
  std::size_t max_seq = 64;
  std::size_t m = 8;
  std::size_t d_ff = 256;
  std::uint64_t seed = 1;

  std::size_t patch_dim() const { return m * 6; }
  std::size_t head_dim() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || max_seq == 0 || m == 0 || d_ff == 0) {
      throw Error(ErrorKind::InvalidArgument, "model sizes must be >= 1");
    }
    if (d_model % n_heads != 0) throw Error(ErrorKind::InvalidArgument, "d_model must be divisible by n_heads");
    if (vocab_size < kFirstTextId + 1) throw Error(ErrorKind::InvalidArgument, "vocab_size must be >= 6");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Mat wq, wk, wv, wo;  // d x d
  Mat w1;              // d x d_ff
  Mat w2;              // d_ff x d
};

struct ModelParams {
  ModelConfig config;
  Mat projector;            // (M*6) x d
  Mat token_embeddings;     // vocab x d
  Mat position_embeddings;  // max_seq x d
  std::vector<LayerParams> layers;
  Mat head;  // d x vocab
};

enum class ParamGroup { Projector, TokenEmbeddings, PositionEmbeddings, Attention, FeedForward, Head };

inline std::string_view to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::Projector: return "projector";
    case ParamGroup::TokenEmbeddings: return "token_embeddings";
    case ParamGroup::PositionEmbeddings: return "position_embeddings";
    case ParamGroup::Attention: return "attention";
    case ParamGroup::FeedForward: return "feed_forward";
    case ParamGroup::Head: return "head";
  }
  return "?";
}

inline constexpr std::size_t kNumParamGroups = 6;

template <class M>
struct TensorRefT {
  std::string name;
  ParamGroup group;
  M* tensor;
};
using TensorRef = TensorRefT<Mat>;
using ConstTensorRef = TensorRefT<const Mat>;

// Every tensor in declaration order (the checkpoint order).
template <class P>
auto tensors(P& p) {
  using M = std::conditional_t<std::is_const_v<P>, const Mat, Mat>;
  std::vector<TensorRefT<M>> out;
  out.push_back({"projector", ParamGroup::Projector, &p.projector});
  out.push_back({"token_embeddings", ParamGroup::TokenEmbeddings, &p.token_embeddings});
  out.push_back({"position_embeddings", ParamGroup::PositionEmbeddings, &p.position_embeddings});
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& L = p.layers[l];
    const std::string pre = "layers." + std::to_string(l) + ".";
    out.push_back({pre + "wq", ParamGroup::Attention, &L.wq});
    out.push_back({pre + "wk", ParamGroup::Attention, &L.wk});
    out.push_back({pre + "wv", ParamGroup::Attention, &L.wv});
    out.push_back({pre + "wo", ParamGroup::Attention, &L.wo});
    out.push_back({pre + "w1", ParamGroup::FeedForward, &L.w1});
    out.push_back({pre + "w2", ParamGroup::FeedForward, &L.w2});
  }
  out.push_back({"head", ParamGroup::Head, &p.head});
  return out;
}

inline std::size_t parameter_count(const ModelParams& p) {
  std::size_t n = 0;
  for (const auto& t : tensors(p)) n += static_cast<std::size_t>(t.tensor->size());
  return n;
}

// Same shapes as `like`, all zeros.
inline ModelParams zeros_like(const ModelParams& like) {
  ModelParams z = like;
  for (auto& t : tensors(z)) t.tensor->setZero();
  return z;
}

inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto normal = [&](std::size_t rows, std::size_t cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  const auto d = cfg.d_model;
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double resid_std = proj_std / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

  ModelParams p;
  p.config = cfg;
  p.projector = normal(cfg.patch_dim(), d, 1.0 / std::sqrt(static_cast<double>(cfg.patch_dim())));
  p.token_embeddings = normal(cfg.vocab_size, d, 0.5);
  p.position_embeddings = normal(cfg.max_seq, d, 0.1);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.wq = normal(d, d, proj_std);
    L.wk = normal(d, d, proj_std);
    L.wv = normal(d, d, proj_std);
    L.wo = normal(d, d, resid_std);
    L.w1 = normal(d, cfg.d_ff, proj_std);
    L.w2 = normal(cfg.d_ff, d, resid_std / 2.0);
    p.layers.push_back(std::move(L));
  }
  p.head = normal(d, cfg.vocab_size, proj_std);
  return p;
}

// Vocabulary id of a non-patch token.
inline std::uint32_t vocab_id(const Token& t) {
  switch (t.kind) {
    case TokenKind::PcStart: return kPcStartId;
    case TokenKind::PcEnd: return kPcEndId;
    case TokenKind::LayerSep: return kLayerSepId;
    case TokenKind::RowSep: return kRowSepId;
    case TokenKind::Text: return t.value;
    case TokenKind::PointPatch: break;
  }
  throw Error(ErrorKind::InvalidArgument, "patch tokens have no vocabulary id");
}

// Token rows: projected patch vectors at PointPatch slots, embedding-table
// rows elsewhere. Position embeddings are added later, in the forward pass.
inline Mat embed_sequence(const ModelParams& p, const TokenSequence& seq) {
  const auto& cfg = p.config;
  const auto& mat = seq.patch_matrix;
  if (mat.rows > 0 && mat.cols != cfg.patch_dim()) {
    throw Error(ErrorKind::ShapeMismatch, "patch vector length " + std::to_string(mat.cols) + " != M*6 = " +
                                              std::to_string(cfg.patch_dim()));
  }
  Mat out(seq.tokens.size(), cfg.d_model);
  for (std::size_t t = 0; t < seq.tokens.size(); ++t) {
    const Token& tok = seq.tokens[t];
    if (tok.kind == TokenKind::PointPatch) {
      if (tok.value >= mat.rows) throw Error(ErrorKind::ShapeMismatch, "patch slot without a matrix row");
      Eigen::Map<const Eigen::RowVectorXd> v(mat.data.data() + tok.value * mat.cols,
                                             static_cast<Eigen::Index>(mat.cols));
      out.row(static_cast<Eigen::Index>(t)) = v * p.projector;
    } else {
      auto id = vocab_id(tok);
      if (tok.kind == TokenKind::Text && id < kFirstTextId) {
        throw Error(ErrorKind::IndexOutOfRange, "text id " + std::to_string(id) + " collides with a reserved id");
      }
      if (id >= cfg.vocab_size) throw Error(ErrorKind::IndexOutOfRange, "token id " + std::to_string(id) + " >= vocab");
      out.row(static_cast<Eigen::Index>(t)) = p.token_embeddings.row(id);
    }
  }
  return out;
}

namespace detail {

inline void rms_forward(const Mat& x, Mat& y, Vec& r) {
  const double d = static_cast<double>(x.cols());
  r.resize(x.rows());
  y.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    r(i) = 1.0 / std::sqrt(x.row(i).squaredNorm() / d + kNormEps);
    y.row(i) = x.row(i) * r(i);
  }
}

inline Mat rms_backward(const Mat& x, const Vec& r, const Mat& dy) {
  const double d = static_cast<double>(x.cols());
  Mat dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double dot = x.row(i).dot(dy.row(i));
    dx.row(i) = r(i) * dy.row(i) - (r(i) * r(i) * r(i) * dot / d) * x.row(i);
  }
  return dx;
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;

inline double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

inline double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

struct LayerCache {
  Mat x_in, n1;
  Vec r1;
  Mat q, k, v;
  std::vector<Mat> probs;  // per head, T x T lower-triangular
  Mat attn, x_mid, n2;
  Vec r2;
  Mat h_pre, h_act;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Mat x_last, nf;
  Vec rf;
  Mat logits;
};

inline Mat forward_cached(const ModelParams& p, const Mat& embedded, ForwardCache& cache) {
  const auto& cfg = p.config;
  const Eigen::Index T = embedded.rows();
  const Eigen::Index d = static_cast<Eigen::Index>(cfg.d_model);
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  if (embedded.cols() != d) throw Error(ErrorKind::ShapeMismatch, "embedded width != d_model");
  if (T == 0) throw Error(ErrorKind::ShapeMismatch, "empty sequence");
  if (static_cast<std::size_t>(T) > cfg.max_seq) {
    throw Error(ErrorKind::ShapeMismatch, "sequence length " + std::to_string(T) + " exceeds max_seq");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat x = embedded + p.position_embeddings.topRows(T);
  cache.layers.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& L = p.layers[l];
    auto& c = cache.layers[l];
    c.x_in = x;
    rms_forward(c.x_in, c.n1, c.r1);
    c.q = c.n1 * L.wq;
    c.k = c.n1 * L.wk;
    c.v = c.n1 * L.wv;
    c.attn.setZero(T, d);
    c.probs.resize(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
      auto qh = c.q.middleCols(off, dh);
      auto kh = c.k.middleCols(off, dh);
      auto vh = c.v.middleCols(off, dh);
      Mat& P = c.probs[h];
      P.setZero(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        // Only the prefix 0..i is ever read, which keeps row i causal.
        Eigen::RowVectorXd s = (kh.topRows(i + 1) * qh.row(i).transpose()).transpose() * scale;
        const double mx = s.maxCoeff();
        s = (s.array() - mx).exp();
        s /= s.sum();
        P.row(i).head(i + 1) = s;
        c.attn.row(i).segment(off, dh) = s * vh.topRows(i + 1);
      }
    }
    c.x_mid = c.x_in + c.attn * L.wo;
    rms_forward(c.x_mid, c.n2, c.r2);
    c.h_pre = c.n2 * L.w1;
    c.h_act = c.h_pre.unaryExpr([](double v) { return gelu(v); });
    x = c.x_mid + c.h_act * L.w2;
  }
  cache.x_last = x;
  rms_forward(cache.x_last, cache.nf, cache.rf);
  cache.logits = cache.nf * p.head;
  return cache.logits;
}

// Accumulates parameter gradients into `g`; returns d(loss)/d(embedded).
inline Mat backward(const ModelParams& p, const ForwardCache& cache, const Mat& dlogits, ModelParams& g) {
  const auto& cfg = p.config;
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Eigen::Index T = dlogits.rows();

  g.head.noalias() += cache.nf.transpose() * dlogits;
  Mat dx = rms_backward(cache.x_last, cache.rf, dlogits * p.head.transpose());

  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const auto& L = p.layers[l];
    auto& G = g.layers[l];
    const auto& c = cache.layers[l];

    // x_out = x_mid + gelu(n2 W1) W2
    G.w2.noalias() += c.h_act.transpose() * dx;
    Mat dh_act = dx * L.w2.transpose();
    Mat dh_pre = dh_act.cwiseProduct(c.h_pre.unaryExpr([](double v) { return gelu_grad(v); }));
    G.w1.noalias() += c.n2.transpose() * dh_pre;
    Mat dx_mid = dx + rms_backward(c.x_mid, c.r2, dh_pre * L.w1.transpose());

    // x_mid = x_in + attn Wo
    G.wo.noalias() += c.attn.transpose() * dx_mid;
    Mat dattn = dx_mid * L.wo.transpose();
    Mat dq(T, cfg.d_model), dk(T, cfg.d_model), dv(T, cfg.d_model);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const Eigen::Index off = static_cast<Eigen::Index>(h) * dh;
      const Mat& P = c.probs[h];
      auto da = dattn.middleCols(off, dh);
      Mat dP = da * c.v.middleCols(off, dh).transpose();
      dv.middleCols(off, dh) = P.transpose() * da;
      Vec rowdot = (dP.cwiseProduct(P)).rowwise().sum();
      Mat dS = P.cwiseProduct(dP.colwise() - rowdot) * scale;
      dq.middleCols(off, dh) = dS * c.k.middleCols(off, dh);
      dk.middleCols(off, dh) = dS.transpose() * c.q.middleCols(off, dh);
    }
    G.wq.noalias() += c.n1.transpose() * dq;
    G.wk.noalias() += c.n1.transpose() * dk;
    G.wv.noalias() += c.n1.transpose() * dv;
    Mat dn1 = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dx = dx_mid + rms_backward(c.x_in, c.r1, dn1);
  }
  g.position_embeddings.topRows(T) += dx;
  return dx;
}

}  // namespace detail

// Logits (T x vocab) for already-embedded rows; row t sees rows <= t only.
inline Mat forward(const ModelParams& p, const Mat& embedded) {
  detail::ForwardCache cache;
  return detail::forward_cached(p, embedded, cache);
}

inline Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
    out.row(i) = e / e.sum();
  }
  return out;
}

// One training sequence. `targets[t]` is the id predicted at position t and
// counts toward the loss only where `mask[t]` is set.
struct Example {
  TokenSequence seq;
  std::vector<std::uint32_t> targets;
  std::vector<std::uint8_t> mask;
};

using Batch = std::vector<Example>;

// Next-token targets for `seq`, supervising text tokens at index >=
// `supervise_from` (as prediction targets, i.e. from position
// supervise_from - 1).
inline Example make_example(TokenSequence seq, std::size_t supervise_from) {
  Example ex;
  const std::size_t T = seq.tokens.size();
  ex.targets.assign(T, kPadId);
  ex.mask.assign(T, 0);
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const Token& next = seq.tokens[t + 1];
    if (next.kind == TokenKind::PointPatch) continue;
    ex.targets[t] = vocab_id(next);
    ex.mask[t] = (next.kind == TokenKind::Text && t + 1 >= supervise_from) ? 1 : 0;
  }
  ex.seq = std::move(seq);
  return ex;
}

inline std::size_t masked_count(std::span<const Example> batch) {
  std::size_t n = 0;
  for (const auto& ex : batch) {
    if (ex.mask.size() != ex.seq.tokens.size() || ex.targets.size() != ex.seq.tokens.size()) {
      throw Error(ErrorKind::ShapeMismatch, "mask/target length differs from sequence length");
    }
    n += static_cast<std::size_t>(std::count(ex.mask.begin(), ex.mask.end(), std::uint8_t{1}));
  }
  return n;
}

// Mean masked NLL; fills `grads` (reset to zero first) when non-null.
inline double loss_and_grad(const ModelParams& p, std::span<const Example> batch, ModelParams* grads) {
  const std::size_t total = masked_count(batch);
  if (total == 0) throw Error(ErrorKind::EmptyMask, "no supervised positions in batch");
  if (grads) *grads = zeros_like(p);
  const double inv = 1.0 / static_cast<double>(total);
  double nll = 0.0;
  detail::ForwardCache cache;
  for (const auto& ex : batch) {
    Mat emb = embed_sequence(p, ex.seq);
    const Mat& logits = detail::forward_cached(p, emb, cache);
    Mat dlogits;
    if (grads) dlogits.setZero(logits.rows(), logits.cols());
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
      if (!ex.mask[static_cast<std::size_t>(t)]) continue;
      const auto target = ex.targets[static_cast<std::size_t>(t)];
      if (target >= p.config.vocab_size) throw Error(ErrorKind::IndexOutOfRange, "target id >= vocab");
      const double mx = logits.row(t).maxCoeff();
      Eigen::RowVectorXd e = (logits.row(t).array() - mx).exp();
      const double z = e.sum();
      nll += -(logits(t, target) - mx - std::log(z));
      if (grads) {
        dlogits.row(t) = e * (inv / z);
        dlogits(t, target) -= inv;
      }
    }
    if (!grads) continue;
    Mat demb = detail::backward(p, cache, dlogits, *grads);
    const auto& mat = ex.seq.patch_matrix;
    for (std::size_t t = 0; t < ex.seq.tokens.size(); ++t) {
      const Token& tok = ex.seq.tokens[t];
      auto row = demb.row(static_cast<Eigen::Index>(t));
      if (tok.kind == TokenKind::PointPatch) {
        Eigen::Map<const Eigen::VectorXd> v(mat.data.data() + tok.value * mat.cols, static_cast<Eigen::Index>(mat.cols));
        grads->projector.noalias() += v * row;
      } else {
        grads->token_embeddings.row(vocab_id(tok)) += row;
      }
    }
  }
  return nll * inv;
}

inline double loss(const ModelParams& p, std::span<const Example> batch) { return loss_and_grad(p, batch, nullptr); }

// Argmax prediction at every masked position of one example.
inline std::vector<std::uint32_t> predict_masked(const ModelParams& p, const Example& ex) {
  Mat logits = forward(p, embed_sequence(p, ex.seq));
  std::vector<std::uint32_t> out;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    if (!ex.mask[static_cast<std::size_t>(t)]) continue;
    Eigen::Index arg = 0;
    logits.row(t).maxCoeff(&arg);
    out.push_back(static_cast<std::uint32_t>(arg));
  }
  return out;
}

// True when every masked position is predicted correctly (teacher forced).
inline bool exact_match(const ModelParams& p, const Example& ex) {
  auto pred = predict_masked(p, ex);
  std::size_t j = 0;
  for (std::size_t t = 0; t < ex.mask.size(); ++t) {
    if (!ex.mask[t]) continue;
    if (pred[j++] != ex.targets[t]) return false;
  }
  return true;
}

inline double exact_match_rate(const ModelParams& p, std::span<const Example> examples) {
  if (examples.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& ex : examples) hits += exact_match(p, ex) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double epsilon = 1e-5;
  double rel_tol = 1e-4;
  double abs_tol = 1e-8;
  std::size_t samples_per_group = 40;
  std::uint64_t seed = 0;
};

struct GradMismatchEntry {
  std::string tensor;
  Eigen::Index row = 0, col = 0;
  double analytic = 0.0, numeric = 0.0;
};

struct GroupReport {
  ParamGroup group;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GroupReport> groups;
  std::vector<GradMismatchEntry> mismatches;
  std::size_t checked = 0;

  bool passed() const { return mismatches.empty(); }
};

// Compares `analytic` against central differences on a random sample of
// coordinates from every group. Embedding rows are sampled among the ids
// and positions the batch actually touches. Entries pass when
// |a - n| <= abs_tol or |a - n| / max(|a|, |n|) <= rel_tol.
inline GradCheckReport compare_gradients(const ModelParams& params, std::span<const Example> batch,
                                         const ModelParams& analytic, const GradCheckOptions& opt = {}) {
  if (!(opt.epsilon >= 1e-6 && opt.epsilon <= 1e-3)) {
    throw Error(ErrorKind::InvalidArgument, "grad-check epsilon must lie in [1e-6, 1e-3]");
  }
  std::vector<std::uint32_t> used_ids;
  std::size_t max_len = 0;
  for (const auto& ex : batch) {
    max_len = std::max(max_len, ex.seq.tokens.size());
    for (const auto& t : ex.seq.tokens)
      if (t.kind != TokenKind::PointPatch) used_ids.push_back(vocab_id(t));
  }
  std::sort(used_ids.begin(), used_ids.end());
  used_ids.erase(std::unique(used_ids.begin(), used_ids.end()), used_ids.end());

  ModelParams probe = params;
  auto probe_refs = tensors(probe);
  auto analytic_refs = tensors(analytic);
  std::mt19937_64 rng(opt.seed);

  GradCheckReport rep;
  for (std::size_t gi = 0; gi < kNumParamGroups; ++gi) {
    const auto group = static_cast<ParamGroup>(gi);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < probe_refs.size(); ++i)
      if (probe_refs[i].group == group) members.push_back(i);
    GroupReport gr{group, 0, 0.0, 0.0};
    for (std::size_t s = 0; s < opt.samples_per_group; ++s) {
      const std::size_t ti = members[rng() % members.size()];
      Mat& w = *probe_refs[ti].tensor;
      Eigen::Index r = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(w.rows()));
      const Eigen::Index c = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(w.cols()));
      if (group == ParamGroup::TokenEmbeddings && !used_ids.empty()) {
        r = used_ids[rng() % used_ids.size()];
      } else if (group == ParamGroup::PositionEmbeddings && max_len > 0) {
        r = static_cast<Eigen::Index>(rng() % max_len);
      }
      const double saved = w(r, c);
      w(r, c) = saved + opt.epsilon;
      const double lp = loss(probe, batch);
      w(r, c) = saved - opt.epsilon;
      const double lm = loss(probe, batch);
      w(r, c) = saved;
      const double numeric = (lp - lm) / (2.0 * opt.epsilon);
      const double a = (*analytic_refs[ti].tensor)(r, c);
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max(std::abs(a), std::abs(numeric));
      const double rel_err = denom > 0.0 ? abs_err / denom : 0.0;
      ++gr.checked;
      gr.max_abs_error = std::max(gr.max_abs_error, abs_err);
      if (abs_err > opt.abs_tol) gr.max_rel_error = std::max(gr.max_rel_error, rel_err);
      if (abs_err > opt.abs_tol && rel_err > opt.rel_tol) {
        rep.mismatches.push_back({probe_refs[ti].name, r, c, a, numeric});
      }
    }
    rep.checked += gr.checked;
    rep.groups.push_back(gr);
  }
  return rep;
}

// Throws GradMismatch (listing offending coordinates) when the comparison fails.
inline GradCheckReport verify_gradients(const ModelParams& params, std::span<const Example> batch,
                                        const ModelParams& analytic, const GradCheckOptions& opt = {}) {
  auto rep = compare_gradients(params, batch, analytic, opt);
  if (!rep.passed()) {
    std::string msg = std::to_string(rep.mismatches.size()) + " coordinates disagree:";
    for (std::size_t i = 0; i < std::min<std::size_t>(rep.mismatches.size(), 8); ++i) {
      const auto& m = rep.mismatches[i];
      msg += " " + m.tensor + "[" + std::to_string(m.row) + "," + std::to_string(m.col) +
             "] analytic=" + std::to_string(m.analytic) + " numeric=" + std::to_string(m.numeric);
    }
    throw Error(ErrorKind::GradMismatch, msg);
  }
  return rep;
}

inline GradCheckReport grad_check(const ModelParams& params, std::span<const Example> batch,
                                  const GradCheckOptions& opt = {}) {
  ModelParams g;
  loss_and_grad(params, batch, &g);
  return verify_gradients(params, batch, g, opt);
}

// ---------------------------------------------------------------------------
// Training

enum class OptimizerKind { Sgd, Adam };

struct TrainOptions {
  std::size_t steps = 100;
  std::size_t batch_size = 8;
  double lr = 3e-3;
  // Cosine decay floor as a fraction of `lr`.
  double min_lr_fraction = 0.1;
  std::size_t warmup_steps = 0;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
};

inline double scheduled_lr(const TrainOptions& o, std::size_t step) {
  if (o.warmup_steps > 0 && step < o.warmup_steps) {
    return o.lr * static_cast<double>(step + 1) / static_cast<double>(o.warmup_steps);
  }
  // decays from lr at the first post-warmup step to the floor at the last
  const std::size_t decay_steps = o.steps - std::min(o.steps, o.warmup_steps);
  const double span = static_cast<double>(std::max<std::size_t>(1, decay_steps > 0 ? decay_steps - 1 : 0));
  const double progress = static_cast<double>(step - std::min(step, o.warmup_steps)) / span;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return o.lr * (o.min_lr_fraction + (1.0 - o.min_lr_fraction) * cosine);
}

struct TrainResult {
  ModelParams params;
  std::vector<double> losses;  // per step, before the update
};

// Draws one example per call; the trainer owns the RNG.
using SampleSource = std::function<const Example&(std::mt19937_64&)>;

inline TrainResult train(ModelParams params, const SampleSource& source, const TrainOptions& opt,
                         const std::function<void(std::size_t, double)>& on_step = {}) {
  TrainResult res;
  std::mt19937_64 rng(opt.seed);
  ModelParams grads, m1, m2;
  if (opt.optimizer == OptimizerKind::Adam) {
    m1 = zeros_like(params);
    m2 = zeros_like(params);
  }
  Batch batch;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    batch.clear();
    for (std::size_t b = 0; b < opt.batch_size; ++b) batch.push_back(source(rng));
    const double l = loss_and_grad(params, batch, &grads);
    if (!std::isfinite(l)) {
      throw Error(ErrorKind::DivergenceDetected, "loss became non-finite at step " + std::to_string(step));
    }
    res.losses.push_back(l);
    if (on_step) on_step(step, l);

    const double lr = scheduled_lr(opt, step);
    auto pr = tensors(params);
    auto gr = tensors(grads);
    if (opt.optimizer == OptimizerKind::Sgd) {
      for (std::size_t i = 0; i < pr.size(); ++i) *pr[i].tensor -= lr * *gr[i].tensor;
    } else {
      auto r1 = tensors(m1);
      auto r2 = tensors(m2);
      const double t = static_cast<double>(step + 1);
      const double bc1 = 1.0 - std::pow(opt.beta1, t);
      const double bc2 = 1.0 - std::pow(opt.beta2, t);
      for (std::size_t i = 0; i < pr.size(); ++i) {
        Mat& g = *gr[i].tensor;
        Mat& a = *r1[i].tensor;
        Mat& b = *r2[i].tensor;
        a = opt.beta1 * a + (1.0 - opt.beta1) * g;
        b = opt.beta2 * b + (1.0 - opt.beta2) * g.cwiseProduct(g);
        *pr[i].tensor -= lr * ((a / bc1).array() / ((b / bc2).array().sqrt() + opt.adam_eps)).matrix();
      }
    }
  }
  res.params = std::move(params);
  return res;
}

inline TrainResult train(ModelParams params, std::span<const Example> data, const TrainOptions& opt) {
  if (data.empty()) throw Error(ErrorKind::InvalidArgument, "empty training set");
  SampleSource src = [data](std::mt19937_64& rng) -> const Example& { return data[rng() % data.size()]; };
  return train(std::move(params), src, opt);
}

// ---------------------------------------------------------------------------
// Checkpoints: "PTKC", u32 version, config block (u32 x7, u64 seed),
// u64 parameter count, then every tensor in declaration order as
// little-endian f64, row-major.

inline constexpr std::string_view kCheckpointMagic = "PTKC";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelParams& p) {
  const auto& c = p.config;
  std::string out(kCheckpointMagic);
  io::put_u32(out, kCheckpointVersion);
  for (std::size_t v : {c.d_model, c.n_layers, c.n_heads, c.vocab_size, c.max_seq, c.m, c.d_ff}) {
    io::put_u32(out, static_cast<std::uint32_t>(v));
  }
  io::put_u64(out, c.seed);
  io::put_u64(out, parameter_count(p));
  for (const auto& t : tensors(p)) {
    const Mat& m = *t.tensor;
    for (Eigen::Index i = 0; i < m.size(); ++i) io::put_f64(out, m.data()[i]);
  }
  return out;
}

inline ModelParams decode_checkpoint(std::string_view bytes) {
  if (bytes.substr(0, 4) != kCheckpointMagic) throw Error(ErrorKind::Io, "not a PTKC checkpoint");
  io::ByteReader r(bytes.substr(4));
  if (r.u32() != kCheckpointVersion) throw Error(ErrorKind::Io, "unsupported checkpoint version");
  ModelConfig c;
  c.d_model = r.u32();
  c.n_layers = r.u32();
  c.n_heads = r.u32();
  c.vocab_size = r.u32();
  c.max_seq = r.u32();
  c.m = r.u32();
  c.d_ff = r.u32();
  c.seed = r.u64();
  c.validate();
  ModelParams p = init_params(c);
  if (r.u64() != parameter_count(p)) throw Error(ErrorKind::Io, "checkpoint parameter count mismatch");
  for (auto& t : tensors(p)) {
    Mat& m = *t.tensor;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
  }
  if (r.remaining() != 0) throw Error(ErrorKind::Io, "trailing bytes in checkpoint");
  return p;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(p));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

inline bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config)) return false;
  auto ra = tensors(a);
  auto rb = tensors(b);
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const Mat& x = *ra[i].tensor;
    const Mat& y = *rb[i].tensor;
    if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.size()) * sizeof(double)) != 0) return false;
  }
  return true;
}

}  // namespace ptk::model
