#include "cmcm/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cmcm::model {

void ParamStore::add(const std::string& name, Tensor value) {
  if (index.count(name)) throw DomainError("duplicate parameter name: " + name);
  index[name] = entries.size();
  Tensor m1(value.shape()), m2(value.shape());
  entries.push_back(Entry{name, std::move(value), std::move(m1), std::move(m2)});
}

Tensor& ParamStore::param(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw DomainError("unknown parameter: " + name);
  return entries[it->second].value;
}

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw DomainError("unknown parameter: " + name);
  return entries[it->second].value;
}

namespace {

Tensor uniform_init(Shape shape, double bound, RngStream& rng) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
  return t;
}

double copula_raw_init(copula::Family f, size_t i) {
  // Start near independence so the learned dependence trajectory is informative.
  switch (f) {
    case copula::Family::Gumbel:
    case copula::Family::Clayton: return -3.0;
    case copula::Family::StudentT: return i == 0 ? 0.0 : 0.0;
    default: return 0.0;
  }
}

}  // namespace

ParamStore init_params(const ModelConfig& cfg, uint64_t seed) {
  if (static_cast<int>(cfg.feature_dims.size()) != cfg.modalities)
    throw DimMismatch("feature_dims must list one dimension per modality");
  ParamStore p;
  const int64_t h = cfg.hidden, l = cfg.latent, k = cfg.gmm_components;

  for (int m = 0; m < cfg.modalities; ++m) {
    RngStream rng = RngStream::derive(seed, {0xE7Cu, static_cast<uint64_t>(m)});
    const int64_t d = cfg.feature_dims[static_cast<size_t>(m)];
    std::string pre = "enc" + std::to_string(m + 1) + ".";
    p.add(pre + "w1", uniform_init({d, h}, 1.0 / std::sqrt(static_cast<double>(d)), rng));
    p.add(pre + "b1", Tensor(Shape{1, h}));
    p.add(pre + "w2", uniform_init({h, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    p.add(pre + "b2", Tensor(Shape{1, h}));
    p.add(pre + "proj_w", uniform_init({h, l}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    p.add(pre + "proj_b", Tensor(Shape{1, l}));
  }

  for (int layer = 1; layer <= 2; ++layer) {
    RngStream rng = RngStream::derive(seed, {0x157Du, static_cast<uint64_t>(layer)});
    std::string pre = "lstm" + std::to_string(layer) + ".";
    double bound = 1.0 / std::sqrt(static_cast<double>(l));
    p.add(pre + "wx", uniform_init({l, 4 * l}, bound, rng));
    p.add(pre + "wh", uniform_init({l, 4 * l}, bound, rng));
    Tensor bias(Shape{1, 4 * l});
    for (int64_t i = l; i < 2 * l; ++i) bias[i] = 1.0;  // forget gate
    p.add(pre + "b", std::move(bias));
  }

  {
    RngStream rng = RngStream::derive(seed, {0xC1Fu});
    p.add("clf.w", uniform_init({l, 1}, 1.0 / std::sqrt(static_cast<double>(l)), rng));
    p.add("clf.b", Tensor(Shape{1, 1}));
  }

  for (int m = 0; m < cfg.modalities; ++m) {
    RngStream rng = RngStream::derive(seed, {0x63A1u, static_cast<uint64_t>(m)});
    std::string pre = "gmm" + std::to_string(m + 1) + ".";
    Tensor means(Shape{k, l});
    for (int64_t i = 0; i < means.numel(); ++i) means[i] = 0.1 * rng.normal();
    p.add(pre + "means", std::move(means));
    p.add(pre + "log_stds", Tensor(Shape{k, l}));
    if (cfg.weight_source == gmm::WeightSource::GlobalLogits) {
      p.add(pre + "logits", Tensor(Shape{k}));
    } else {
      p.add(pre + "head_w", Tensor(Shape{l, k}));
      p.add(pre + "head_b", Tensor(Shape{k}));
    }
  }

  {
    size_t arity = copula::param_arity(cfg.family, cfg.modalities);
    Tensor raw(Shape{static_cast<int64_t>(arity)});
    for (size_t i = 0; i < arity; ++i) raw[static_cast<int64_t>(i)] = copula_raw_init(cfg.family, i);
    p.add("copula.raw", std::move(raw));
  }
  return p;
}

ad::NodeId TapeBindings::at(const std::string& name) const {
  auto it = nodes.find(name);
  if (it == nodes.end()) throw DomainError("no tape binding for parameter: " + name);
  return it->second;
}

TapeBindings bind_params(ad::Tape& t, const ParamStore& params) {
  TapeBindings b;
  for (const auto& e : params.entries) b.nodes[e.name] = t.leaf(e.value);
  return b;
}

gmm::GmmNodes gmm_nodes(const ModelConfig& cfg, const TapeBindings& b, int modality) {
  std::string pre = "gmm" + std::to_string(modality + 1) + ".";
  gmm::GmmNodes g;
  g.weight_source = cfg.weight_source;
  g.means = b.at(pre + "means");
  g.log_stds = b.at(pre + "log_stds");
  if (cfg.weight_source == gmm::WeightSource::GlobalLogits) {
    g.logits = b.at(pre + "logits");
    g.head_w = g.logits;
    g.head_b = g.logits;
  } else {
    g.head_w = b.at(pre + "head_w");
    g.head_b = b.at(pre + "head_b");
    g.logits = g.head_b;
  }
  return g;
}

namespace {

using ad::NodeId;
using ad::Tape;

NodeId dropout_node(Tape& t, NodeId x, double rate, RngStream* rng) {
  if (rate <= 0) return x;
  if (!rng) throw DomainError("dropout requires an RNG stream");
  const Tensor& xv = t.value(x);
  Tensor mask(xv.shape());
  double keep = 1.0 - rate;
  for (int64_t i = 0; i < mask.numel(); ++i)
    mask[i] = rng->uniform() < rate ? 0.0 : 1.0 / keep;
  return t.mul(x, t.constant(std::move(mask)));
}

NodeId affine(Tape& t, NodeId x, NodeId w, NodeId bias, int64_t batch) {
  NodeId lin = t.matmul(x, w);
  const Tensor& bv = t.value(bias);
  return t.add(lin, t.broadcast(bias, {batch, bv.dim(1)}));
}

struct LstmState {
  NodeId h;
  NodeId c;
};

LstmState lstm_cell(Tape& t, NodeId x, LstmState s, NodeId wx, NodeId wh, NodeId bias,
                    int64_t batch, int64_t l) {
  NodeId gates = t.add(t.matmul(x, wx), affine(t, s.h, wh, bias, batch));
  NodeId i = t.sigmoid(t.slice(gates, 1, 0, l));
  NodeId f = t.sigmoid(t.slice(gates, 1, l, l));
  NodeId g = t.tanh(t.slice(gates, 1, 2 * l, l));
  NodeId o = t.sigmoid(t.slice(gates, 1, 3 * l, l));
  NodeId c = t.add(t.mul(f, s.c), t.mul(i, g));
  return {t.mul(o, t.tanh(c)), c};
}

}  // namespace

NodeId encode_node(Tape& t, const ModelConfig& cfg, const TapeBindings& b, int modality,
                   NodeId x, Mode mode, RngStream* rng) {
  const Tensor& xv = t.value(x);
  if (xv.rank() != 2 || xv.dim(1) != cfg.feature_dims[static_cast<size_t>(modality)])
    throw DimMismatch("encode: feature width does not match modality config");
  int64_t batch = xv.dim(0);
  std::string pre = "enc" + std::to_string(modality + 1) + ".";
  bool drop = mode == Mode::Train && cfg.dropout > 0;

  NodeId h1 = t.tanh(affine(t, x, b.at(pre + "w1"), b.at(pre + "b1"), batch));
  if (drop) h1 = dropout_node(t, h1, cfg.dropout, rng);
  NodeId h2 = t.tanh(affine(t, h1, b.at(pre + "w2"), b.at(pre + "b2"), batch));
  if (drop) h2 = dropout_node(t, h2, cfg.dropout, rng);
  return affine(t, h2, b.at(pre + "proj_w"), b.at(pre + "proj_b"), batch);
}

NodeId fuse_node(Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                 std::span<const NodeId> embeddings) {
  if (embeddings.empty()) throw DimMismatch("fuse: needs at least one embedding");
  int64_t batch = t.value(embeddings[0]).dim(0);
  int64_t l = cfg.latent;
  for (NodeId e : embeddings)
    if (t.value(e).rank() != 2 || t.value(e).dim(1) != l)
      throw DimMismatch("fuse: embeddings must be [batch, latent]");

  LstmState s1{t.constant(Tensor(Shape{batch, l})), t.constant(Tensor(Shape{batch, l}))};
  LstmState s2 = s1;
  for (NodeId x : embeddings) {
    s1 = lstm_cell(t, x, s1, b.at("lstm1.wx"), b.at("lstm1.wh"), b.at("lstm1.b"), batch, l);
    s2 = lstm_cell(t, s1.h, s2, b.at("lstm2.wx"), b.at("lstm2.wh"), b.at("lstm2.b"), batch, l);
  }
  return s2.h;
}

NodeId classify_node(Tape& t, const ModelConfig& cfg, const TapeBindings& b, NodeId fused) {
  if (t.value(fused).dim(1) != cfg.latent)
    throw DimMismatch("classify: fused width does not match latent dim");
  int64_t batch = t.value(fused).dim(0);
  NodeId logit = affine(t, fused, b.at("clf.w"), b.at("clf.b"), batch);
  NodeId prob = t.sigmoid(logit);
  return t.broadcast(t.clamp(prob, 1e-12, 1.0 - 1e-12), Shape{batch});
}

ForwardNodes model_forward(Tape& t, const ModelConfig& cfg, const TapeBindings& b,
                           const MultimodalBatch& batch, Mode mode, RngStream* rng) {
  if (static_cast<int>(batch.features.size()) != cfg.modalities)
    throw DimMismatch("model_forward: batch modality count mismatch");
  int64_t rows = batch.rows();
  int64_t l = cfg.latent;

  ForwardNodes out;
  for (int m = 0; m < cfg.modalities; ++m) {
    const auto& present = batch.present[static_cast<size_t>(m)];
    int64_t absent = 0;
    for (uint8_t pr : present) absent += pr ? 0 : 1;

    NodeId x = t.constant(batch.features[static_cast<size_t>(m)]);
    NodeId z = encode_node(t, cfg, b, m, x, mode, rng);

    if (absent > 0) {
      gmm::GmmNodes g = gmm_nodes(cfg, b, m);
      if (!rng) throw MissingGmm("absent rows need an RNG stream for sampling");
      NodeId z_sample;
      if (mode == Mode::Train && cfg.gps) {
        z_sample = gmm::gps_sample_node(t, g, rows, cfg.temperature, *rng);
      } else {
        // plain draw, gradient-blocked
        gmm::GmmMarginal marginal;
        marginal.components = cfg.gmm_components;
        marginal.dim = static_cast<int>(l);
        const Tensor& means = t.value(g.means);
        const Tensor& lss = t.value(g.log_stds);
        marginal.means.assign(static_cast<size_t>(cfg.gmm_components), {});
        marginal.log_stds.assign(static_cast<size_t>(cfg.gmm_components), {});
        for (int k = 0; k < cfg.gmm_components; ++k)
          for (int64_t d = 0; d < l; ++d) {
            marginal.means[static_cast<size_t>(k)].push_back(means.at(k, d));
            marginal.log_stds[static_cast<size_t>(k)].push_back(lss.at(k, d));
          }
        std::vector<double> logit_vals(t.value(g.logits).vec());
        logit_vals.resize(static_cast<size_t>(cfg.gmm_components));
        marginal.logits = logit_vals;
        auto pi = gmm::mixture_weights(marginal, {});
        auto draws = gmm::gmm_sample(marginal, pi, rows, rng->next_u64());
        Tensor sample(Shape{rows, l});
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t d = 0; d < l; ++d)
            sample.at(r, d) = draws[static_cast<size_t>(r)][static_cast<size_t>(d)];
        z_sample = t.constant(std::move(sample));
      }
      Tensor mask(Shape{rows, 1});
      for (int64_t r = 0; r < rows; ++r) mask[r] = present[static_cast<size_t>(r)] ? 1.0 : 0.0;
      NodeId mask_b = t.broadcast(t.constant(mask), {rows, l});
      NodeId inv_mask = t.sub(t.constant(1.0), mask_b);
      z = t.add(t.mul(mask_b, z), t.mul(inv_mask, z_sample));
    }
    out.embeddings.push_back(z);
  }

  NodeId fused = fuse_node(t, cfg, b, out.embeddings);
  out.yhat = classify_node(t, cfg, b, fused);
  return out;
}

std::vector<double> encode(const ModelConfig& cfg, const ParamStore& p, int modality,
                           const std::vector<double>& x) {
  ad::Tape t;
  TapeBindings b = bind_params(t, p);
  NodeId xn = t.constant(Tensor::matrix(1, static_cast<int64_t>(x.size()), x));
  NodeId z = encode_node(t, cfg, b, modality, xn, Mode::Eval, nullptr);
  return t.value(z).vec();
}

std::vector<double> fuse(const ModelConfig& cfg, const ParamStore& p,
                         const std::vector<std::vector<double>>& embeddings) {
  ad::Tape t;
  TapeBindings b = bind_params(t, p);
  std::vector<NodeId> nodes;
  for (const auto& e : embeddings)
    nodes.push_back(t.constant(Tensor::matrix(1, static_cast<int64_t>(e.size()), e)));
  return t.value(fuse_node(t, cfg, b, nodes)).vec();
}

double classify(const ModelConfig& cfg, const ParamStore& p, const std::vector<double>& fused) {
  ad::Tape t;
  TapeBindings b = bind_params(t, p);
  NodeId f = t.constant(Tensor::matrix(1, static_cast<int64_t>(fused.size()), fused));
  return t.value(classify_node(t, cfg, b, f))[0];
}

gmm::GmmMarginal extract_gmm(const ModelConfig& cfg, const ParamStore& p, int modality) {
  std::string pre = "gmm" + std::to_string(modality + 1) + ".";
  gmm::GmmMarginal m = gmm::GmmMarginal::make(cfg.gmm_components, cfg.latent);
  m.weight_source = cfg.weight_source;
  const Tensor& means = p.param(pre + "means");
  const Tensor& lss = p.param(pre + "log_stds");
  for (int k = 0; k < cfg.gmm_components; ++k)
    for (int d = 0; d < cfg.latent; ++d) {
      m.means[static_cast<size_t>(k)][static_cast<size_t>(d)] = means.at(k, d);
      m.log_stds[static_cast<size_t>(k)][static_cast<size_t>(d)] = lss.at(k, d);
    }
  if (cfg.weight_source == gmm::WeightSource::GlobalLogits) {
    m.logits = p.param(pre + "logits").vec();
  } else {
    m.head_w = p.param(pre + "head_w").vec();
    m.head_b = p.param(pre + "head_b").vec();
  }
  return m;
}

void save_checkpoint(const std::string& path, const ParamStore& params,
                     const std::string& config_json) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IOError("cannot open checkpoint for writing: " + path);
  os << "CMCM-CKPT-1\n";
  os << "config " << config_json << "\n";
  char buf[40];
  for (const auto& e : params.entries) {
    os << "tensor " << e.name << " " << e.value.rank();
    for (int64_t d : e.value.shape()) os << " " << d;
    os << "\n";
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", e.value[i]);
      os << buf << (i + 1 == e.value.numel() ? "" : " ");
    }
    os << "\n";
  }
  os << "end\n";
  if (!os) throw IOError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open checkpoint: " + path);
  std::string line;
  if (!std::getline(is, line) || line != "CMCM-CKPT-1")
    throw DataFormatError("bad checkpoint magic in " + path);
  Checkpoint ck;
  if (!std::getline(is, line) || line.rfind("config ", 0) != 0)
    throw DataFormatError("missing config line in " + path);
  ck.config_json = line.substr(7);
  while (std::getline(is, line)) {
    if (line == "end") return ck;
    if (line.rfind("tensor ", 0) != 0) throw DataFormatError("unexpected line in " + path);
    std::istringstream hs(line.substr(7));
    std::string name;
    int64_t rank;
    hs >> name >> rank;
    Shape shape(static_cast<size_t>(rank));
    for (auto& d : shape) hs >> d;
    if (!hs) throw DataFormatError("bad tensor header in " + path);
    Tensor v(shape);
    if (!std::getline(is, line)) throw DataFormatError("truncated tensor data in " + path);
    std::istringstream ds(line);
    for (int64_t i = 0; i < v.numel(); ++i)
      if (!(ds >> v[i])) throw DataFormatError("bad tensor data for " + name + " in " + path);
    ck.params.add(name, std::move(v));
  }
  throw DataFormatError("checkpoint missing end marker: " + path);
}

}  // namespace cmcm::model
