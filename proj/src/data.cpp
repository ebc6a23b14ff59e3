#include "cmcm/data.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cmcm/rng.hpp"

namespace cmcm::data {

namespace fs = std::filesystem;
using nlohmann::json;

SynthSpec default_spec() { return SynthSpec{}; }

namespace {

ModalityTransform seeded_transform(int dim, RngStream& rng) {
  ModalityTransform t;
  for (int d = 0; d < dim; ++d) {
    t.scale.push_back(rng.uniform(0.5, 2.0));
    t.shape.push_back(rng.uniform(1.0, 3.0));
    t.center.push_back(rng.uniform(0.3, 0.7));
    t.offset.push_back(rng.uniform(-1.0, 1.0));
  }
  return t;
}

std::vector<ModalityTransform> realized_transforms(const SynthSpec& spec) {
  if (!spec.transforms.empty()) {
    if (spec.transforms.size() != static_cast<size_t>(spec.modalities))
      throw DataFormatError("transforms must list one entry per modality");
    return spec.transforms;
  }
  std::vector<ModalityTransform> out;
  for (int m = 0; m < spec.modalities; ++m) {
    RngStream rng = RngStream::derive(spec.seed, {0x7A41u, static_cast<uint64_t>(m)});
    out.push_back(seeded_transform(spec.dims[static_cast<size_t>(m)], rng));
  }
  return out;
}

void validate(const SynthSpec& spec) {
  if (spec.modalities < 1) throw DataFormatError("modalities must be >= 1");
  if (static_cast<int>(spec.dims.size()) != spec.modalities)
    throw DataFormatError("dims must list one width per modality");
  for (int d : spec.dims)
    if (d < 1) throw DataFormatError("modality dims must be >= 1");
  if (!(spec.missing_rate >= 0.0 && spec.missing_rate < 1.0))
    throw DataFormatError("missing_rate must lie in [0, 1)");
  if (static_cast<int>(spec.label_w.size()) != spec.modalities)
    throw DataFormatError("label_w must list one weight per latent");
  for (double w : spec.label_w)
    if (!std::isfinite(w)) throw DataFormatError("label weights must be finite");
  for (int m : spec.at_risk)
    if (m < 0 || m >= spec.modalities) throw DataFormatError("at_risk index out of range");
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

void write_atomic(const std::string& path, const std::string& content) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IOError("cannot open for writing: " + tmp);
    os << content;
    if (!os) throw IOError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

}  // namespace

Dataset synthesize_split(const SynthSpec& spec, int64_t n, uint64_t split_tag) {
  validate(spec);
  auto transforms = realized_transforms(spec);

  copula::CopulaModel cop =
      copula::CopulaModel::from_constrained(spec.family, spec.modalities, spec.copula_params);
  uint64_t split_seed = RngStream::mix(spec.seed, split_tag);
  auto latents = copula::sample_copula(cop, n, split_seed);

  RngStream noise = RngStream::derive(spec.seed, {0x4015Eu, split_tag});
  RngStream label_rng = RngStream::derive(spec.seed, {0x1AB31u, split_tag});

  Dataset ds;
  ds.ids.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) ds.ids[static_cast<size_t>(i)] = i;
  ds.labels.resize(static_cast<size_t>(n));
  for (int m = 0; m < spec.modalities; ++m) {
    ds.features.emplace_back(Shape{n, spec.dims[static_cast<size_t>(m)]});
    ds.present.emplace_back(static_cast<size_t>(n), uint8_t{1});
  }

  for (int64_t i = 0; i < n; ++i) {
    const auto& u = latents[static_cast<size_t>(i)];
    for (int m = 0; m < spec.modalities; ++m) {
      const auto& tr = transforms[static_cast<size_t>(m)];
      for (int d = 0; d < spec.dims[static_cast<size_t>(m)]; ++d) {
        double x = tr.scale[static_cast<size_t>(d)] *
                       std::tanh(tr.shape[static_cast<size_t>(d)] *
                                 (u[static_cast<size_t>(m)] - tr.center[static_cast<size_t>(d)])) +
                   tr.offset[static_cast<size_t>(d)];
        if (spec.noise_sigma > 0) x += spec.noise_sigma * noise.normal();
        ds.features[static_cast<size_t>(m)].at(i, d) = x;
      }
    }
    double logit = spec.label_b;
    for (int m = 0; m < spec.modalities; ++m)
      logit += spec.label_w[static_cast<size_t>(m)] * u[static_cast<size_t>(m)];
    ds.labels[static_cast<size_t>(i)] = label_rng.uniform() < sigmoid(logit) ? 1.0 : 0.0;
  }

  if (spec.missing_rate > 0 && !spec.at_risk.empty())
    apply_mar_mask(ds, spec.missing_rate, spec.at_risk,
                   RngStream::mix(spec.seed, RngStream::mix(0x3A5Cu, split_tag)));
  return ds;
}

void apply_mar_mask(Dataset& ds, double rate, const std::vector<int>& at_risk,
                    uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("mask rate must lie in [0, 1)");
  const int modalities = static_cast<int>(ds.features.size());
  std::vector<char> risky(static_cast<size_t>(modalities), 0);
  for (int m : at_risk) {
    if (m < 0 || m >= modalities) throw DomainError("at_risk modality out of range");
    risky[static_cast<size_t>(m)] = 1;
  }
  bool anchored = false;
  for (int m = 0; m < modalities; ++m) anchored = anchored || !risky[static_cast<size_t>(m)];
  if (!anchored) throw AllModalitiesAtRisk("at least one modality must always be present");

  RngStream rng = RngStream::derive(seed, {0x3A5Cu});
  for (int m = 0; m < modalities; ++m) {
    if (!risky[static_cast<size_t>(m)]) continue;
    for (int64_t i = 0; i < ds.rows(); ++i)
      if (rng.uniform() < rate) {
        ds.present[static_cast<size_t>(m)][static_cast<size_t>(i)] = 0;
        for (int64_t d = 0; d < ds.features[static_cast<size_t>(m)].dim(1); ++d)
          ds.features[static_cast<size_t>(m)].at(i, d) = 0.0;  // placeholder
      }
  }
}

void write_split(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  char buf[48];
  {
    std::string out = "id,y\n";
    for (int64_t i = 0; i < ds.rows(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%d\n",
                    static_cast<long long>(ds.ids[static_cast<size_t>(i)]),
                    static_cast<int>(ds.labels[static_cast<size_t>(i)]));
      out += buf;
    }
    write_atomic(dir + "/labels.csv", out);
  }
  for (size_t m = 0; m < ds.features.size(); ++m) {
    const Tensor& f = ds.features[m];
    std::string out = "id,present";
    for (int64_t d = 1; d <= f.dim(1); ++d) {
      std::snprintf(buf, sizeof(buf), ",x_%lld", static_cast<long long>(d));
      out += buf;
    }
    out += "\n";
    for (int64_t i = 0; i < ds.rows(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%d",
                    static_cast<long long>(ds.ids[static_cast<size_t>(i)]),
                    static_cast<int>(ds.present[m][static_cast<size_t>(i)]));
      out += buf;
      for (int64_t d = 0; d < f.dim(1); ++d) {
        std::snprintf(buf, sizeof(buf), ",%.9g", f.at(i, d));
        out += buf;
      }
      out += "\n";
    }
    write_atomic(dir + "/modality_" + std::to_string(m + 1) + ".csv", out);
  }
}

void generate_synthetic(const SynthSpec& spec, const std::string& out_dir) {
  validate(spec);
  fs::create_directories(out_dir);
  write_split(synthesize_split(spec, spec.n_train, 1), out_dir + "/train");
  write_split(synthesize_split(spec, spec.n_valid, 2), out_dir + "/valid");
  write_split(synthesize_split(spec, spec.n_test, 3), out_dir + "/test");

  auto transforms = realized_transforms(spec);
  json manifest;
  manifest["spec"] = json::parse(spec_to_json(spec));
  manifest["seed"] = spec.seed;
  json tr = json::array();
  for (const auto& t : transforms)
    tr.push_back({{"scale", t.scale}, {"shape", t.shape}, {"center", t.center}, {"offset", t.offset}});
  manifest["realized_transforms"] = tr;
  write_atomic(out_dir + "/manifest.txt", manifest.dump(2) + "\n");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void format_error(const std::string& file, int64_t line, const std::string& what) {
  throw DataFormatError(file + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Dataset load_dataset(const std::string& dir) {
  Dataset ds;
  {
    std::string path = dir + "/labels.csv";
    std::ifstream is(path);
    if (!is) throw DataFormatError("cannot open " + path);
    std::string line;
    int64_t ln = 1;
    if (!std::getline(is, line) || split_csv_line(line) != std::vector<std::string>{"id", "y"})
      format_error(path, ln, "expected header id,y");
    while (std::getline(is, line)) {
      ++ln;
      if (line.empty()) continue;
      auto cells = split_csv_line(line);
      if (cells.size() != 2) format_error(path, ln, "expected two columns");
      try {
        ds.ids.push_back(std::stoll(cells[0]));
        double y = std::stod(cells[1]);
        if (y != 0.0 && y != 1.0) format_error(path, ln, "labels must be 0 or 1");
        ds.labels.push_back(y);
      } catch (const std::invalid_argument&) {
        format_error(path, ln, "malformed number");
      }
    }
  }

  for (int m = 1;; ++m) {
    std::string path = dir + "/modality_" + std::to_string(m) + ".csv";
    if (!fs::exists(path)) break;
    std::ifstream is(path);
    if (!is) throw DataFormatError("cannot open " + path);
    std::string line;
    int64_t ln = 1;
    if (!std::getline(is, line)) format_error(path, ln, "missing header");
    auto header = split_csv_line(line);
    if (header.size() < 3 || header[0] != "id" || header[1] != "present")
      format_error(path, ln, "expected header id,present,x_1,...");
    int64_t dim = static_cast<int64_t>(header.size()) - 2;
    for (int64_t d = 0; d < dim; ++d)
      if (header[static_cast<size_t>(d + 2)] != "x_" + std::to_string(d + 1))
        format_error(path, ln, "unexpected feature column name");

    Tensor feats(Shape{ds.rows(), dim});
    std::vector<uint8_t> present;
    int64_t row = 0;
    while (std::getline(is, line)) {
      ++ln;
      if (line.empty()) continue;
      if (row >= ds.rows()) format_error(path, ln, "more rows than labels.csv");
      auto cells = split_csv_line(line);
      if (static_cast<int64_t>(cells.size()) != dim + 2)
        format_error(path, ln, "wrong column count");
      try {
        if (std::stoll(cells[0]) != ds.ids[static_cast<size_t>(row)])
          format_error(path, ln, "id does not match labels.csv order");
        int pr = std::stoi(cells[1]);
        if (pr != 0 && pr != 1) format_error(path, ln, "present must be 0 or 1");
        present.push_back(static_cast<uint8_t>(pr));
        for (int64_t d = 0; d < dim; ++d)
          feats.at(row, d) = std::stod(cells[static_cast<size_t>(d + 2)]);
      } catch (const std::invalid_argument&) {
        format_error(path, ln, "malformed number");
      }
      ++row;
    }
    if (row != ds.rows()) format_error(path, ln, "fewer rows than labels.csv");
    ds.features.push_back(std::move(feats));
    ds.present.push_back(std::move(present));
  }
  if (ds.features.empty()) throw DataFormatError("no modality files found in " + dir);
  return ds;
}

std::vector<model::MultimodalBatch> Dataset::batches(int64_t batch_size, uint64_t shuffle_seed,
                                                     bool shuffle) const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  std::vector<int64_t> order(static_cast<size_t>(rows()));
  for (int64_t i = 0; i < rows(); ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    RngStream rng = RngStream::derive(shuffle_seed, {0x0BA7C4u});
    rng.shuffle(order);
  }
  std::vector<model::MultimodalBatch> out;
  for (int64_t start = 0; start < rows(); start += batch_size) {
    int64_t count = std::min(batch_size, rows() - start);
    model::MultimodalBatch b;
    for (size_t m = 0; m < features.size(); ++m) {
      Tensor f(Shape{count, features[m].dim(1)});
      std::vector<uint8_t> pr(static_cast<size_t>(count));
      for (int64_t r = 0; r < count; ++r) {
        int64_t src = order[static_cast<size_t>(start + r)];
        pr[static_cast<size_t>(r)] = present[m][static_cast<size_t>(src)];
        for (int64_t d = 0; d < f.dim(1); ++d) f.at(r, d) = features[m].at(src, d);
      }
      b.features.push_back(std::move(f));
      b.present.push_back(std::move(pr));
    }
    b.labels.resize(static_cast<size_t>(count));
    for (int64_t r = 0; r < count; ++r)
      b.labels[static_cast<size_t>(r)] = labels[static_cast<size_t>(order[static_cast<size_t>(start + r)])];
    out.push_back(std::move(b));
  }
  return out;
}

SynthSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataFormatError(std::string("spec JSON parse failure: ") + e.what());
  }
  SynthSpec s;
  try {
    if (j.contains("modalities")) s.modalities = j["modalities"].get<int>();
    if (j.contains("dims")) s.dims = j["dims"].get<std::vector<int>>();
    if (j.contains("copula")) {
      s.family = copula::family_from_string(j["copula"].at("family").get<std::string>());
      s.copula_params = j["copula"].at("params").get<std::vector<double>>();
    }
    if (j.contains("label_rule")) {
      s.label_w = j["label_rule"].at("w").get<std::vector<double>>();
      s.label_b = j["label_rule"].value("b", 0.0);
    }
    if (j.contains("noise_sigma")) s.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("n_train")) s.n_train = j["n_train"].get<int64_t>();
    if (j.contains("n_valid")) s.n_valid = j["n_valid"].get<int64_t>();
    if (j.contains("n_test")) s.n_test = j["n_test"].get<int64_t>();
    if (j.contains("missing_rate")) s.missing_rate = j["missing_rate"].get<double>();
    if (j.contains("at_risk")) {
      s.at_risk.clear();
      for (int m : j["at_risk"].get<std::vector<int>>()) s.at_risk.push_back(m - 1);
    }
    if (j.contains("seed")) s.seed = j["seed"].get<uint64_t>();
    if (j.contains("transforms")) {
      s.transforms.clear();
      for (const auto& tj : j["transforms"]) {
        ModalityTransform t;
        t.scale = tj.at("scale").get<std::vector<double>>();
        t.shape = tj.at("shape").get<std::vector<double>>();
        t.center = tj.at("center").get<std::vector<double>>();
        t.offset = tj.at("offset").get<std::vector<double>>();
        s.transforms.push_back(std::move(t));
      }
    }
  } catch (const json::exception& e) {
    throw DataFormatError(std::string("spec JSON field error: ") + e.what());
  }
  validate(s);
  return s;
}

std::string spec_to_json(const SynthSpec& s) {
  json j;
  j["modalities"] = s.modalities;
  j["dims"] = s.dims;
  j["copula"] = {{"family", copula::to_string(s.family)}, {"params", s.copula_params}};
  j["label_rule"] = {{"w", s.label_w}, {"b", s.label_b}};
  j["noise_sigma"] = s.noise_sigma;
  j["n_train"] = s.n_train;
  j["n_valid"] = s.n_valid;
  j["n_test"] = s.n_test;
  j["missing_rate"] = s.missing_rate;
  json risk = json::array();
  for (int m : s.at_risk) risk.push_back(m + 1);
  j["at_risk"] = risk;
  j["seed"] = s.seed;
  if (!s.transforms.empty()) {
    json tr = json::array();
    for (const auto& t : s.transforms)
      tr.push_back({{"scale", t.scale}, {"shape", t.shape}, {"center", t.center}, {"offset", t.offset}});
    j["transforms"] = tr;
  }
  return j.dump();
}

}  // namespace cmcm::data
