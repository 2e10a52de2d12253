#include "grmc/synthetic.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Cholesky>
#include <fmt/format.h>

#include "grmc/errors.hpp"
#include "grmc/random.hpp"
#include "grmc/tensor_io.hpp"

namespace grmc {

void SynthTaskConfig::validate() const {
  if (n_train < 2 || n_val < 2 || n_test < 2) throw ConfigError("data: every split needs at least 2 samples");
  if (n_image_features < 1 || n_speech_features < 1) throw ConfigError("data: each modality needs >= 1 stage");
  if (channels < 1 || length < 1) throw ConfigError("data: channels and length must be >= 1");
  if (!(sigma > 0.0)) throw ConfigError("data: sigma must be > 0");
  if (!(separation >= 0.0) || !(noise >= 0.0)) throw ConfigError("data: separation and noise must be >= 0");
  if (!(correlation >= 0.0 && correlation <= 1.0)) throw ConfigError("data: correlation must lie in [0, 1]");
}

namespace {

Dataset draw_split(const SynthTaskConfig& cfg, const std::vector<Eigen::VectorXd>& directions, std::size_t n,
                   std::size_t first_id, std::uint64_t split) {
  Rng rng(cfg.seed, {1, split});
  Dataset d;
  d.n_image = cfg.n_image_features;
  d.n_speech = cfg.n_speech_features;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = i < n - n / 2 ? 0 : 1;
  rng.shuffle(d.labels.begin(), d.labels.end());
  d.ids.resize(n);
  std::iota(d.ids.begin(), d.ids.end(), first_id);

  const int nodes = cfg.n_image_features + cfg.n_speech_features;
  const Eigen::Index c = cfg.channels, l = cfg.length, block = c * l;
  const auto rows = static_cast<Eigen::Index>(n);
  for (int f = 0; f < nodes; ++f) d.features.emplace_back(ad::Shape{rows, c, l});

  const double scale_l = 1.0 / std::sqrt(static_cast<double>(l));
  for (std::size_t i = 0; i < n; ++i) {
    const double centre = (d.labels[i] - 0.5) * cfg.separation * cfg.sigma;
    const double shared = rng.normal();
    const std::array<double, 2> amplitude{
        centre + cfg.sigma * (std::sqrt(cfg.correlation) * shared + std::sqrt(1.0 - cfg.correlation) * rng.normal()),
        centre + cfg.sigma * (std::sqrt(cfg.correlation) * shared + std::sqrt(1.0 - cfg.correlation) * rng.normal())};
    for (int f = 0; f < nodes; ++f) {
      const double a = amplitude[f < cfg.n_image_features ? 0 : 1];
      auto& t = d.features[static_cast<std::size_t>(f)].data();
      const Eigen::Index base = static_cast<Eigen::Index>(i) * block;
      for (Eigen::Index ci = 0; ci < c; ++ci) {
        for (Eigen::Index li = 0; li < l; ++li) {
          t[base + ci * l + li] = a * directions[static_cast<std::size_t>(f)][ci] * scale_l + cfg.noise * rng.normal();
        }
      }
    }
  }
  if (cfg.shuffle_labels) {
    Rng perm(cfg.seed, {2, split});
    perm.shuffle(d.labels.begin(), d.labels.end());
  }
  d.validate();
  return d;
}

}  // namespace

SynthSplits generate_synthetic(const SynthTaskConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, {0});
  std::vector<Eigen::VectorXd> directions;
  for (int f = 0; f < cfg.n_image_features + cfg.n_speech_features; ++f) {
    Eigen::VectorXd v(cfg.channels);
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    directions.push_back(v.normalized());
  }
  SynthSplits s;
  s.train = draw_split(cfg, directions, cfg.n_train, 0, 0);
  s.val = draw_split(cfg, directions, cfg.n_val, cfg.n_train, 1);
  s.test = draw_split(cfg, directions, cfg.n_test, cfg.n_train + cfg.n_val, 2);
  return s;
}

namespace {

Eigen::MatrixXd design(const Dataset& data, const std::vector<int>& nodes) {
  const Eigen::Index block = data.channels() * data.length();
  const auto n = static_cast<Eigen::Index>(data.size());
  Eigen::MatrixXd x(n, block * static_cast<Eigen::Index>(nodes.size()) + 1);
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto& t = data.features.at(static_cast<std::size_t>(nodes[k]));
    for (Eigen::Index i = 0; i < n; ++i) {
      x.row(i).segment(static_cast<Eigen::Index>(k) * block, block) = t.data().segment(i * block, block).matrix().transpose();
    }
  }
  x.col(x.cols() - 1).setOnes();
  return x;
}

}  // namespace

LinearProbe fit_linear_probe(const Dataset& train, std::vector<int> nodes, double ridge) {
  if (nodes.empty()) throw DomainError("fit_linear_probe: no feature streams selected");
  for (int n : nodes) {
    if (n < 0 || n >= static_cast<int>(train.features.size())) throw DomainError(fmt::format("no feature stream {}", n));
  }
  const Eigen::MatrixXd x = design(train, nodes);
  Eigen::VectorXd y(x.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = train.labels[static_cast<std::size_t>(i)];
  Eigen::VectorXd reg = Eigen::VectorXd::Constant(x.cols(), ridge);
  reg[reg.size() - 1] = 0.0;

  // Newton iterations on the penalised log-likelihood.
  Eigen::VectorXd w = Eigen::VectorXd::Zero(x.cols());
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd p = (1.0 + (-(x * w).array()).exp()).inverse().matrix();
    const Eigen::VectorXd g = x.transpose() * (p - y) + reg.cwiseProduct(w);
    const Eigen::VectorXd s = p.array() * (1.0 - p.array());
    Eigen::MatrixXd h = x.transpose() * s.asDiagonal() * x;
    h.diagonal() += reg;
    h.diagonal().array() += 1e-10;
    const Eigen::VectorXd step = h.ldlt().solve(g);
    w -= step;
    if (step.norm() < 1e-10 * (1.0 + w.norm())) break;
  }
  return {std::move(nodes), std::move(w)};
}

std::vector<double> LinearProbe::scores(const Dataset& data) const {
  const Eigen::VectorXd z = design(data, nodes) * weights;
  return {z.data(), z.data() + z.size()};
}

Dataset load_dataset(const std::vector<std::filesystem::path>& feature_files, const std::filesystem::path& labels_csv,
                     int n_image, int n_speech, Eigen::Index channels, Eigen::Index length) {
  if (static_cast<int>(feature_files.size()) != n_image + n_speech) {
    throw ConfigError(fmt::format("expected {} feature files, got {}", n_image + n_speech, feature_files.size()));
  }
  Dataset d;
  d.n_image = n_image;
  d.n_speech = n_speech;

  std::ifstream is(labels_csv);
  if (!is) throw FormatError("cannot open " + labels_csv.string());
  std::string line;
  if (!std::getline(is, line) || line != "sample_id,label") {
    throw FormatError(labels_csv.string() + ": expected header 'sample_id,label'");
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    long long id = -1;
    int label = -1;
    char comma = 0;
    if (!(ls >> id >> comma >> label) || comma != ',' || id < 0 || !(ls >> std::ws).eof()) {
      throw FormatError(fmt::format("{}: malformed row '{}'", labels_csv.string(), line));
    }
    d.ids.push_back(static_cast<std::size_t>(id));
    d.labels.push_back(label);
  }

  for (const auto& f : feature_files) {
    ad::Tensor t = io::load_any(f);
    if (t.rank() == 2 && t.dim(1) == channels * length) t = t.reshaped({t.dim(0), channels, length});
    if (t.rank() != 3 || t.dim(1) != channels || t.dim(2) != length) {
      throw ShapeError(fmt::format("{}: shape {} does not match N×{}×{}", f.string(), ad::to_string(t.shape()),
                                   channels, length));
    }
    d.features.push_back(std::move(t));
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  for (std::size_t f = 0; f < data.features.size(); ++f) {
    io::save_grnt(dir / fmt::format("{}_node{}.grnt", prefix, f + 1), data.features[f]);
  }
  std::ofstream os(dir / (prefix + "_labels.csv"));
  if (!os) throw FormatError("cannot write labels for " + prefix);
  os << "sample_id,label\n";
  for (std::size_t i = 0; i < data.size(); ++i) os << data.ids[i] << ',' << data.labels[i] << '\n';
}

}  // namespace grmc
