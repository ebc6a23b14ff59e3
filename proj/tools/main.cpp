#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmcm/copula.hpp"
#include "cmcm/data.hpp"
#include "cmcm/metrics.hpp"
#include "cmcm/model.hpp"
#include "cmcm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cmcm;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitMissingArtifact = 5;

uint64_t default_seed() {
  const char* env = std::getenv("CMCM_SEED");
  if (!env) return 0;
  try {
    return std::stoull(env);
  } catch (...) {
    throw DataFormatError("CMCM_SEED must be an unsigned integer");
  }
}

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

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IOError("cannot open: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// ---- train config ----

json config_defaults() {
  return json{
      {"epochs", 100},
      {"batch_size", 32},
      {"learning_rate", 1e-4},   // grid {1e-4, 5e-5, 1e-5}
      {"patience", 15},
      {"lambda_cop", 1e-5},      // grid {1e-5, 5e-6, 1e-6}
      {"gmm_components", 3},     // grid {1,...,6}
      {"temperature", 0.05},     // grid {0.001, 0.005, 0.01, 0.05, 0.08}
      {"dropout", 0.0},          // grid {0, 0.1, 0.2, 0.3}
      {"alignment", "copula"},
      {"copula_family", "gumbel"},
      {"gps", true},
      {"joint_nll", false},
      {"hidden", 32},
      {"latent", 16},
      {"weight_source", "global"},
  };
}

struct GridPoint {
  trainer::TrainConfig cfg;
  std::string label;
  json echo;
};

trainer::TrainConfig config_from_json(const json& j, const std::vector<int>& feature_dims,
                                      uint64_t seed) try {
  trainer::TrainConfig c;
  c.model.modalities = static_cast<int>(feature_dims.size());
  c.model.feature_dims = feature_dims;
  c.model.hidden = j.at("hidden").get<int>();
  c.model.latent = j.at("latent").get<int>();
  c.model.gmm_components = j.at("gmm_components").get<int>();
  c.model.dropout = j.at("dropout").get<double>();
  c.model.gps = j.at("gps").get<bool>();
  c.model.temperature = j.at("temperature").get<double>();
  c.model.family = copula::family_from_string(j.at("copula_family").get<std::string>());
  std::string ws = j.at("weight_source").get<std::string>();
  if (ws == "global") c.model.weight_source = gmm::WeightSource::GlobalLogits;
  else if (ws == "head") c.model.weight_source = gmm::WeightSource::Head;
  else throw DataFormatError("weight_source must be 'global' or 'head'");

  c.objective.lambda_cop = j.at("lambda_cop").get<double>();
  if (c.objective.lambda_cop < 0) throw DataFormatError("lambda_cop must be nonnegative");
  c.objective.alignment = objective::alignment_from_string(j.at("alignment").get<std::string>());
  c.objective.family = c.model.family;
  c.objective.joint_nll = j.at("joint_nll").get<bool>();

  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.patience = j.at("patience").get<int>();
  c.seed = j.contains("seed") ? j.at("seed").get<uint64_t>() : seed;

  if (c.model.family == copula::Family::StudentT &&
      c.objective.alignment == objective::AlignmentKind::Copula)
    throw DataFormatError("the Student t copula is evaluation-only and cannot be trained");
  return c;
} catch (const json::exception& e) {
  throw DataFormatError(std::string("config field error: ") + e.what());
}

std::vector<GridPoint> expand_grid(const std::string& config_text,
                                   const std::vector<int>& feature_dims) {
  json user;
  try {
    user = json::parse(config_text);
  } catch (const json::parse_error& e) {
    throw DataFormatError(std::string("config JSON parse failure: ") + e.what());
  }
  json base = config_defaults();
  for (auto& [k, v] : user.items()) base[k] = v;

  static const char* grid_keys[] = {"learning_rate", "lambda_cop", "gmm_components",
                                    "temperature",   "dropout",    "alignment",
                                    "copula_family", "gps"};
  std::vector<json> points{base};
  std::vector<std::string> labels{""};
  for (const char* key : grid_keys) {
    if (!base.at(key).is_array()) continue;
    std::vector<json> next;
    std::vector<std::string> next_labels;
    for (size_t i = 0; i < points.size(); ++i)
      for (const auto& value : base.at(key)) {
        json p = points[i];
        p[key] = value;
        next.push_back(p);
        std::string tag = std::string(key) + "=" +
                          (value.is_string() ? value.get<std::string>() : value.dump());
        next_labels.push_back(labels[i].empty() ? tag : labels[i] + "," + tag);
      }
    points = std::move(next);
    labels = std::move(next_labels);
  }

  uint64_t seed = default_seed();
  std::vector<GridPoint> out;
  for (size_t i = 0; i < points.size(); ++i) {
    GridPoint gp;
    gp.cfg = config_from_json(points[i], feature_dims, seed);
    gp.label = labels[i];
    gp.echo = points[i];
    gp.echo["seed"] = gp.cfg.seed;
    out.push_back(std::move(gp));
  }
  return out;
}

std::string history_csv(const std::vector<trainer::EpochStats>& history) {
  std::string out = "epoch,train_loss,valid_auroc,tau\n";
  char buf[128];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", h.epoch, h.train_loss,
                  h.valid_auroc, h.tau);
    out += buf;
  }
  return out;
}

int run_point(const GridPoint& gp, const data::Dataset& train_set,
              const data::Dataset& valid_set, const std::string& dir,
              trainer::TrainResult* result_out) {
  fs::create_directories(dir);
  write_atomic(dir + "/config.json", gp.echo.dump(2) + "\n");
  trainer::TrainResult result = trainer::train(gp.cfg, train_set, valid_set);
  write_atomic(dir + "/history.csv", history_csv(result.history));
  model::save_checkpoint(dir + "/checkpoint.ckpt", result.best_params, gp.echo.dump());

  // fitted-copula density grid for plotting, bivariate runs only
  if (gp.cfg.model.modalities == 2 &&
      gp.cfg.objective.alignment == objective::AlignmentKind::Copula) {
    copula::CopulaModel fitted;
    fitted.family = gp.cfg.model.family;
    fitted.dim = 2;
    fitted.raw_params = result.best_params.param("copula.raw").vec();
    std::ostringstream ss;
    copula::write_density_grid(fitted, ss);
    write_atomic(dir + "/copula_density.csv", ss.str());
  }

  if (result_out) *result_out = std::move(result);
  return result_out && result_out->diverged ? kExitDivergence : kExitOk;
}

// ---- subcommands ----

int cmd_gen_data(const std::string& spec_path, const std::string& out, bool force) {
  std::string text = read_file(spec_path);
  data::SynthSpec spec = data::spec_from_json(text);
  if (!json::parse(text).contains("seed") && std::getenv("CMCM_SEED"))
    spec.seed = default_seed();
  if (fs::exists(out + "/manifest.txt") && !force) {
    std::cerr << "refusing to overwrite existing dataset at " << out
              << " (use --force)\n";
    return kExitIo;
  }
  data::generate_synthetic(spec, out);
  for (const char* split : {"train", "valid", "test"}) {
    auto ds = data::load_dataset(out + "/" + split);
    std::cout << split << ": " << ds.rows() << " rows, " << ds.features.size()
              << " modalities\n";
  }
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out, int jobs) {
  data::Dataset train_set = data::load_dataset(data_dir + "/train");
  data::Dataset valid_set = data::load_dataset(data_dir + "/valid");
  std::vector<int> dims;
  for (const auto& f : train_set.features) dims.push_back(static_cast<int>(f.dim(1)));

  auto points = expand_grid(read_file(config_path), dims);
  if (points.size() == 1) {
    trainer::TrainResult result;
    int rc = run_point(points[0], train_set, valid_set, out, &result);
    std::cout << "best valid AUROC " << result.best_valid_auroc << " at epoch "
              << result.best_epoch << (result.diverged ? " (diverged)" : "") << "\n";
    return rc;
  }

  struct Row {
    std::string dir;
    trainer::TrainResult result;
  };
  std::vector<Row> rows(points.size());
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (size_t i = next.fetch_add(1); i < points.size(); i = next.fetch_add(1)) {
      char tag[32];
      std::snprintf(tag, sizeof(tag), "gp_%03zu", i);
      rows[i].dir = out + "/" + tag;
      run_point(points[i], train_set, valid_set, rows[i].dir, &rows[i].result);
    }
  };
  int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(points.size())));
  std::vector<std::thread> pool;
  for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::string summary = "gridpoint,dir,label,status,best_epoch,best_valid_auroc\n";
  int best = -1;
  int ok_count = 0;
  char buf[512];
  for (size_t i = 0; i < points.size(); ++i) {
    const auto& r = rows[i].result;
    std::snprintf(buf, sizeof(buf), "%zu,%s,\"%s\",%s,%d,%.9g\n", i, rows[i].dir.c_str(),
                  points[i].label.c_str(), r.diverged ? "diverged" : "ok", r.best_epoch,
                  r.best_valid_auroc);
    summary += buf;
    if (!r.diverged) {
      ++ok_count;
      if (best < 0 || r.best_valid_auroc > rows[static_cast<size_t>(best)].result.best_valid_auroc)
        best = static_cast<int>(i);
    }
  }
  fs::create_directories(out);
  write_atomic(out + "/summary.csv", summary);
  if (best >= 0)
    std::cout << "best grid point " << best << " (" << points[static_cast<size_t>(best)].label
              << ") valid AUROC "
              << rows[static_cast<size_t>(best)].result.best_valid_auroc << "\n";
  return ok_count > 0 ? kExitOk : kExitDivergence;
}

int cmd_eval(const std::string& run_dir, const std::string& data_dir,
             const std::string& split, int iters, uint64_t seed) {
  std::string ckpt_path = run_dir + "/checkpoint.ckpt";
  if (!fs::exists(ckpt_path)) {
    std::cerr << "missing checkpoint: " << ckpt_path << "\n";
    return kExitMissingArtifact;
  }
  model::Checkpoint ck = model::load_checkpoint(ckpt_path);
  data::Dataset ds = data::load_dataset(data_dir + "/" + split);
  std::vector<int> dims;
  for (const auto& f : ds.features) dims.push_back(static_cast<int>(f.dim(1)));
  trainer::TrainConfig cfg = config_from_json(json::parse(ck.config_json), dims, seed);

  auto scores = trainer::predict(cfg.model, ck.params, ds, seed);
  metrics::ScoredSet scored{scores, ds.labels};
  auto ci_auroc = metrics::bootstrap_ci(metrics::Metric::Auroc, scored, iters, 0.95, seed);
  auto ci_aupr = metrics::bootstrap_ci(metrics::Metric::Aupr, scored, iters, 0.95, seed);

  char buf[256];
  std::string out = "task,metric,point,lo,hi\n";
  std::snprintf(buf, sizeof(buf), "%s,auroc,%.9g,%.9g,%.9g\n", split.c_str(), ci_auroc.point,
                ci_auroc.lo, ci_auroc.hi);
  out += buf;
  std::snprintf(buf, sizeof(buf), "%s,aupr,%.9g,%.9g,%.9g\n", split.c_str(), ci_aupr.point,
                ci_aupr.lo, ci_aupr.hi);
  out += buf;
  write_atomic(run_dir + "/metrics.csv", out);

  json meta{{"split", split},
            {"iters", iters},
            {"seed", seed},
            {"data", data_dir},
            {"single_class_redraws", ci_auroc.redraws + ci_aupr.redraws}};
  write_atomic(run_dir + "/eval_meta.json", meta.dump(2) + "\n");

  std::cout << "AUROC " << ci_auroc.point << " [" << ci_auroc.lo << ", " << ci_auroc.hi
            << "]\nAUPR  " << ci_aupr.point << " [" << ci_aupr.lo << ", " << ci_aupr.hi
            << "]\n";
  return kExitOk;
}

int cmd_copula_grid(const std::string& family, const std::vector<double>& params,
                    const std::string& out) {
  copula::Family f = copula::family_from_string(family);
  copula::CopulaModel m = copula::CopulaModel::from_constrained(f, 2, params);
  std::ostringstream ss;
  copula::write_density_grid(m, ss);
  write_atomic(out, ss.str());
  std::cout << "wrote 101x101 density grid to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copula-driven multimodal alignment experiments"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, data_dir, config_path, run_dir;
  std::string split = "test";
  std::string family;
  std::vector<double> params;
  bool force = false;
  int jobs = 1;
  int iters = 1000;
  uint64_t seed = 0;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic multimodal dataset");
  gen->add_option("--spec", spec_path, "synthetic spec JSON")->required();
  gen->add_option("--out", out_dir, "output dataset directory")->required();
  gen->add_flag("--force", force, "overwrite an existing dataset");

  auto* train = app.add_subcommand("train", "train a model (grids expand to subruns)");
  train->add_option("--data", data_dir, "dataset directory with train/ and valid/")->required();
  train->add_option("--config", config_path,
                    "train config JSON; array-valued fields form a grid "
                    "(learning_rate {1e-4,5e-5,1e-5}, lambda_cop {1e-5,5e-6,1e-6}, "
                    "gmm_components {1..6}, temperature {0.001,0.005,0.01,0.05,0.08}, "
                    "dropout {0,0.1,0.2,0.3})")
      ->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--jobs", jobs, "concurrent grid-point workers")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "evaluate a trained run on a dataset split");
  eval->add_option("--run", run_dir, "run directory containing checkpoint.ckpt")->required();
  eval->add_option("--data", data_dir, "dataset directory")->required();
  eval->add_option("--split", split, "split subdirectory")->capture_default_str();
  eval->add_option("--iters", iters, "bootstrap iterations")->capture_default_str();
  eval->add_option("--seed", seed, "bootstrap/imputation seed")->capture_default_str();

  auto* grid = app.add_subcommand("copula-grid", "export a bivariate copula density grid");
  grid->add_option("--family", family, "clayton|frank|gumbel|gaussian|studentt|independence")
      ->required();
  grid->add_option("--params", params, "constrained parameter values");
  grid->add_option("--out", out_dir, "output CSV path")->required();

  eval->callback([&] { seed_given = eval->count("--seed") > 0; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen_data(spec_path, out_dir, force);
    if (train->parsed()) return cmd_train(data_dir, config_path, out_dir, jobs);
    if (eval->parsed())
      return cmd_eval(run_dir, data_dir, split, iters, seed_given ? seed : default_seed());
    if (grid->parsed()) return cmd_copula_grid(family, params, out_dir);
  } catch (const DataFormatError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const DomainError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const ArityMismatch& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const UnsupportedDim& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const UnsupportedFamily& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const NotPositiveDefinite& e) {
    std::cerr << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << e.what() << "\n";
    return kExitDivergence;
  } catch (const IOError& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
