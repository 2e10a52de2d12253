#include "grmc/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

#include "grmc/errors.hpp"

namespace grmc::config {

namespace {

// Reads declared keys out of an object and rejects whatever is left over.
class Strict {
 public:
  Strict(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected a JSON object", where_));
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}.{}: ill-typed value {}", where_, key, it->dump()));
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool has(const char* key) const { return j_.contains(key); }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", where_, k));
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

// nlohmann happily converts -1 to a huge unsigned; reject that explicitly.
template <class T>
void get_count(Strict& s, const char* key, T& out, const std::string& where) {
  long long v = static_cast<long long>(out);
  s.get(key, v);
  if (v < 0) throw ConfigError(fmt::format("{}.{}: must be non-negative", where, key));
  out = static_cast<T>(v);
}

}  // namespace

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

json to_json(const nas::SearchSpaceConfig& c) {
  return {{"n_image_features", c.n_image_features},
          {"n_speech_features", c.n_speech_features},
          {"n_cells", c.n_cells},
          {"nodes_per_cell", c.nodes_per_cell},
          {"lambda", c.lambda},
          {"k_samples", c.k_samples},
          {"channels", c.channels},
          {"length", c.length}};
}

nas::SearchSpaceConfig search_space_from_json(const json& j, nas::SearchSpaceConfig c) {
  Strict s(j, "space");
  s.get("n_image_features", c.n_image_features);
  s.get("n_speech_features", c.n_speech_features);
  s.get("n_cells", c.n_cells);
  s.get("nodes_per_cell", c.nodes_per_cell);
  s.get("lambda", c.lambda);
  s.get("k_samples", c.k_samples);
  s.get("channels", c.channels);
  s.get("length", c.length);
  s.finish();
  c.validate();
  return c;
}

json to_json(const nas::TrainSchedule& t) {
  return {{"max_epochs", t.max_epochs},
          {"batch_size", t.batch_size},
          {"weight_lr", t.weight_lr},
          {"arch_lr", t.arch_lr},
          {"weight_decay", t.weight_decay},
          {"arch_weight_decay", t.arch_weight_decay},
          {"arch_beta1", t.arch_beta1},
          {"arch_eps", t.arch_eps},
          {"entropy_tolerance", t.entropy_tolerance},
          {"entropy_patience", t.entropy_patience},
          {"train_omega", t.train_omega},
          {"train_alpha", t.train_alpha},
          {"train_beta", t.train_beta},
          {"train_gamma", t.train_gamma}};
}

nas::TrainSchedule schedule_from_json(const json& j, nas::TrainSchedule t) {
  Strict s(j, "schedule");
  s.get("max_epochs", t.max_epochs);
  s.get("batch_size", t.batch_size);
  s.get("weight_lr", t.weight_lr);
  s.get("arch_lr", t.arch_lr);
  s.get("weight_decay", t.weight_decay);
  s.get("arch_weight_decay", t.arch_weight_decay);
  s.get("arch_beta1", t.arch_beta1);
  s.get("arch_eps", t.arch_eps);
  s.get("entropy_tolerance", t.entropy_tolerance);
  s.get("entropy_patience", t.entropy_patience);
  s.get("train_omega", t.train_omega);
  s.get("train_alpha", t.train_alpha);
  s.get("train_beta", t.train_beta);
  s.get("train_gamma", t.train_gamma);
  s.finish();
  t.validate();
  return t;
}

json to_json(const nas::RetrainSchedule& r) {
  return {{"epochs", r.epochs}, {"batch_size", r.batch_size}, {"lr", r.lr}, {"weight_decay", r.weight_decay}};
}

nas::RetrainSchedule retrain_from_json(const json& j, nas::RetrainSchedule r) {
  Strict s(j, "retrain");
  s.get("epochs", r.epochs);
  s.get("batch_size", r.batch_size);
  s.get("lr", r.lr);
  s.get("weight_decay", r.weight_decay);
  s.finish();
  r.validate();
  return r;
}

json to_json(const SynthTaskConfig& c) {
  return {{"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"n_image_features", c.n_image_features},
          {"n_speech_features", c.n_speech_features},
          {"channels", c.channels},
          {"length", c.length},
          {"separation", c.separation},
          {"sigma", c.sigma},
          {"correlation", c.correlation},
          {"noise", c.noise},
          {"shuffle_labels", c.shuffle_labels},
          {"seed", c.seed}};
}

SynthTaskConfig synth_from_json(const json& j, SynthTaskConfig c) {
  Strict s(j, "data");
  get_count(s, "n_train", c.n_train, "data");
  get_count(s, "n_val", c.n_val, "data");
  get_count(s, "n_test", c.n_test, "data");
  s.get("n_image_features", c.n_image_features);
  s.get("n_speech_features", c.n_speech_features);
  s.get("channels", c.channels);
  s.get("length", c.length);
  s.get("separation", c.separation);
  s.get("sigma", c.sigma);
  s.get("correlation", c.correlation);
  s.get("noise", c.noise);
  s.get("shuffle_labels", c.shuffle_labels);
  get_count(s, "seed", c.seed, "data");
  s.finish();
  c.validate();
  return c;
}

json to_json(const FileDataConfig& c) {
  return {{"train_features", c.train_features}, {"train_labels", c.train_labels},
          {"val_features", c.val_features},     {"val_labels", c.val_labels},
          {"test_features", c.test_features},   {"test_labels", c.test_labels}};
}

FileDataConfig files_from_json(const json& j) {
  FileDataConfig c;
  Strict s(j, "files");
  s.get("train_features", c.train_features);
  s.get("train_labels", c.train_labels);
  s.get("val_features", c.val_features);
  s.get("val_labels", c.val_labels);
  s.get("test_features", c.test_features);
  s.get("test_labels", c.test_labels);
  s.finish();
  if (c.train_features.empty() || c.val_features.empty() || c.test_features.empty() || c.train_labels.empty() ||
      c.val_labels.empty() || c.test_labels.empty()) {
    throw ConfigError("files: all three splits need feature files and a labels CSV");
  }
  return c;
}

json to_json(const EstimatorBenchConfig& c) {
  json objectives = json::array();
  for (const auto& o : c.objectives) objectives.push_back({{"name", o.name}, {"c", o.c}, {"q", o.q}});
  return {{"lambdas", c.lambdas}, {"ks", c.ks},         {"trials", c.trials},
          {"seed", c.seed},       {"logits", c.logits}, {"objectives", objectives},
          {"mean_gap_limit", c.mean_gap_limit}};
}

EstimatorBenchConfig bench_from_json(const json& j, EstimatorBenchConfig c) {
  Strict s(j, "bench");
  s.get("lambdas", c.lambdas);
  s.get("ks", c.ks);
  get_count(s, "trials", c.trials, "bench");
  get_count(s, "seed", c.seed, "bench");
  s.get("logits", c.logits);
  s.get("mean_gap_limit", c.mean_gap_limit);
  if (const json* objs = s.sub("objectives")) {
    if (!objs->is_array()) throw ConfigError("bench.objectives: expected an array");
    c.objectives.clear();
    for (std::size_t i = 0; i < objs->size(); ++i) {
      const std::string where = fmt::format("bench.objectives[{}]", i);
      Strict o((*objs)[i], where);
      ObjectiveSpec spec;
      o.get("name", spec.name);
      o.get("c", spec.c);
      o.get("q", spec.q);
      o.finish();
      if (spec.name.empty()) spec.name = fmt::format("objective{}", i + 1);
      c.objectives.push_back(std::move(spec));
    }
  }
  s.finish();
  c.validate();
  return c;
}

namespace {

void read_search_keys(Strict& s, SearchConfig& c) {
  if (const json* d = s.sub("data")) c.data = synth_from_json(*d, c.data);
  if (const json* f = s.sub("files")) c.files = files_from_json(*f);
  // The topology inherits the data layout unless it says otherwise.
  c.space.n_image_features = c.data.n_image_features;
  c.space.n_speech_features = c.data.n_speech_features;
  c.space.channels = c.data.channels;
  c.space.length = c.data.length;
  if (const json* sp = s.sub("space")) c.space = search_space_from_json(*sp, c.space);
  if (const json* sc = s.sub("schedule")) c.schedule = schedule_from_json(*sc, c.schedule);
  if (const json* r = s.sub("retrain")) c.retrain = retrain_from_json(*r, c.retrain);
  get_count(s, "seed", c.seed, "search");
  if (!c.files && (c.space.n_image_features != c.data.n_image_features ||
                   c.space.n_speech_features != c.data.n_speech_features || c.space.channels != c.data.channels ||
                   c.space.length != c.data.length)) {
    throw ConfigError("space: feature layout disagrees with the synthetic data");
  }
  c.space.validate();
}

}  // namespace

json to_json(const SearchConfig& c) {
  json j = {{"data", to_json(c.data)},
            {"space", to_json(c.space)},
            {"schedule", to_json(c.schedule)},
            {"retrain", to_json(c.retrain)},
            {"seed", c.seed}};
  if (c.files) j["files"] = to_json(*c.files);
  return j;
}

SearchConfig search_from_json(const json& j, SearchConfig c) {
  Strict s(j, "config");
  read_search_keys(s, c);
  s.finish();
  return c;
}

json to_json(const AblationConfig& c) {
  json j = to_json(c.base);
  j["lambdas"] = c.lambdas;
  j["ks"] = c.ks;
  return j;
}

AblationConfig ablation_from_json(const json& j, AblationConfig c) {
  Strict s(j, "config");
  read_search_keys(s, c.base);
  s.get("lambdas", c.lambdas);
  s.get("ks", c.ks);
  s.finish();
  if (c.lambdas.empty() || c.ks.empty()) throw ConfigError("ablation: lambdas and ks must be non-empty");
  for (double l : c.lambdas) {
    if (!(l > 0.0)) throw ConfigError("ablation: every lambda must be > 0");
  }
  for (int k : c.ks) {
    if (k < 1) throw ConfigError("ablation: every K must be >= 1");
  }
  return c;
}

}  // namespace grmc::config
