#include "grmc/trainer.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "grmc/checkpoint.hpp"
#include "grmc/config.hpp"
#include "grmc/genotype.hpp"

namespace grmc::nas {

void TrainSchedule::validate() const {
  if (max_epochs < 1 || batch_size < 1) throw ConfigError("schedule: epochs and batch size must be >= 1");
  if (weight_lr < 0.0 || arch_lr < 0.0 || weight_decay < 0.0 || arch_weight_decay < 0.0) {
    throw ConfigError("schedule: learning rates and weight decay must be >= 0");
  }
  if (!(arch_beta1 >= 0.0 && arch_beta1 < 1.0) || !(arch_eps > 0.0)) {
    throw ConfigError("schedule: arch_beta1 must lie in [0, 1) and arch_eps must be > 0");
  }
  if (!(entropy_tolerance > 0.0) || entropy_patience < 1) {
    throw ConfigError("schedule: entropy tolerance must be > 0 and patience >= 1");
  }
}

void Adam::step(std::vector<Eigen::Map<Eigen::ArrayXd>>& params, const std::vector<Eigen::ArrayXd>& grads, double lr,
                double weight_decay) {
  if (params.size() != grads.size()) throw ContractError("Adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(Eigen::ArrayXd::Zero(p.size()));
      v_.push_back(Eigen::ArrayXd::Zero(p.size()));
    }
  }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter list changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::ArrayXd g = grads[i] + weight_decay * params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.square();
    params[i] -= lr * (m_[i] / c1) / ((v_[i] / c2).sqrt() + eps_);
  }
}

BilevelTrainer::BilevelTrainer(SearchSpace space, SearchState state, TrainSchedule schedule)
    : space_(std::move(space)),
      state_(std::move(state)),
      schedule_(schedule),
      arch_opt_(schedule.arch_beta1, 0.999, schedule.arch_eps) {
  schedule_.validate();
}

namespace {

Eigen::Map<Eigen::ArrayXd> flat(Eigen::MatrixXd& m) { return {m.data(), m.size()}; }
Eigen::ArrayXd flat_copy(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::ArrayXd>(m.data(), m.size()); }

}  // namespace

StepLosses BilevelTrainer::step(const Batch& train, const Batch& val, SamplingStreams& streams) {
  require_disjoint(train, val);
  const std::size_t step_index = static_cast<std::size_t>(steps_);
  StepLosses losses;

  // ω on the training batch
  {
    StateGradient g = supernet_gradient(space_, state_, train, Mode::Search, &streams);
    if (!std::isfinite(g.loss)) throw TrainingError("non-finite training loss", step_index);
    losses.train_loss = g.loss;
    if (schedule_.train_omega) {
      std::vector<Eigen::Map<Eigen::ArrayXd>> params;
      std::vector<Eigen::ArrayXd> grads;
      for (std::size_t i = 0; i < state_.omega.size(); ++i) {
        auto& t = state_.omega[i].second;
        params.emplace_back(t.data().data(), t.size());
        grads.push_back(g.omega[i].data());
      }
      weight_opt_.step(params, grads, schedule_.weight_lr, schedule_.weight_decay);
    }
  }

  // α, β, γ on the validation batch
  {
    StateGradient g = supernet_gradient(space_, state_, val, Mode::Search, &streams);
    if (!std::isfinite(g.loss)) throw TrainingError("non-finite validation loss", step_index);
    losses.val_loss = g.loss;
    std::vector<Eigen::Map<Eigen::ArrayXd>> params;
    std::vector<Eigen::ArrayXd> grads;
    // Frozen groups still pass through the optimiser so its moment layout
    // stays fixed; their updated copies are simply dropped.
    Eigen::MatrixXd alpha = state_.alpha, beta = state_.beta, gamma = state_.gamma;
    params.push_back(flat(alpha));
    params.push_back(flat(beta));
    params.push_back(flat(gamma));
    grads.push_back(flat_copy(g.alpha));
    grads.push_back(flat_copy(g.beta));
    grads.push_back(flat_copy(g.gamma));
    arch_opt_.step(params, grads, schedule_.arch_lr, schedule_.arch_weight_decay);
    if (schedule_.train_alpha) state_.alpha = alpha;
    if (schedule_.train_beta) state_.beta = beta;
    if (schedule_.train_gamma) state_.gamma = gamma;
  }
  ++steps_;
  return losses;
}

SearchRun::SearchRun(SearchSpaceConfig space, TrainSchedule schedule, std::uint64_t seed, const Dataset& train,
                     const Dataset& val)
    : SearchRun(
          [&] {
            Rng init(seed, {0});
            SearchSpace sp(space);
            SearchState st = SearchState::initialize(sp, init);
            return BilevelTrainer(std::move(sp), std::move(st), schedule);
          }(),
          seed, train, val) {}

SearchRun::SearchRun(BilevelTrainer trainer, std::uint64_t seed, const Dataset& train, const Dataset& val)
    : trainer_(std::move(trainer)), seed_(seed), train_(&train), val_(&val), streams_(seed, 1), shuffle_rng_(seed, {2}) {
  train.validate();
  val.validate();
  const auto& cfg = trainer_.space().config();
  if (train.n_image != cfg.n_image_features || train.n_speech != cfg.n_speech_features ||
      train.channels() != cfg.channels || train.length() != cfg.length) {
    throw ConfigError("dataset layout does not match the search space");
  }
  if (train.features[0].shape().size() != val.features[0].shape().size() || train.channels() != val.channels() ||
      train.length() != val.length() || train.features.size() != val.features.size()) {
    throw ConfigError("training and validation splits differ in layout");
  }
}

bool SearchRun::run_epoch() {
  if (finished_) return false;
  const auto& sched = trainer_.schedule();

  std::vector<std::size_t> train_idx(train_->size()), val_idx(val_->size());
  std::iota(train_idx.begin(), train_idx.end(), std::size_t{0});
  std::iota(val_idx.begin(), val_idx.end(), std::size_t{0});
  shuffle_rng_.shuffle(train_idx.begin(), train_idx.end());
  shuffle_rng_.shuffle(val_idx.begin(), val_idx.end());

  const std::size_t bs = static_cast<std::size_t>(sched.batch_size);
  const std::size_t steps = std::max<std::size_t>(1, std::min(train_idx.size(), val_idx.size()) / bs);
  EpochRecord rec;
  rec.epoch = epochs_done() + 1;
  for (std::size_t s = 0; s < steps; ++s) {
    auto slice = [&](const std::vector<std::size_t>& idx) {
      const std::size_t begin = std::min(idx.size(), s * bs);
      const std::size_t end = std::min(idx.size(), begin + bs);
      return std::span<const std::size_t>(idx.data() + begin, end - begin);
    };
    const Batch tb = make_batch(*train_, slice(train_idx));
    const Batch vb = make_batch(*val_, slice(val_idx));
    const StepLosses l = trainer_.step(tb, vb, streams_);
    rec.train_loss += l.train_loss;
    rec.val_loss += l.val_loss;
    rec.e_alpha += entropy(trainer_.state().alpha);
    rec.e_gamma += entropy(trainer_.state().gamma);
  }
  const double n = static_cast<double>(steps);
  rec.train_loss /= n;
  rec.val_loss /= n;
  rec.e_alpha /= n;
  rec.e_gamma /= n;

  if (!history_.empty()) {
    const auto& prev = history_.back();
    const bool still = std::abs(rec.e_alpha - prev.e_alpha) < sched.entropy_tolerance &&
                       std::abs(rec.e_gamma - prev.e_gamma) < sched.entropy_tolerance;
    stable_epochs_ = still ? stable_epochs_ + 1 : 0;
  }
  history_.push_back(rec);

  try {
    genotype_trace_.push_back(serialize(derive_architecture(trainer_.space(), trainer_.state(), seed_, 0)));
  } catch (const DegenerateGenotypeError&) {
    genotype_trace_.emplace_back();
  }

  if (stable_epochs_ >= sched.entropy_patience) {
    finished_ = true;
    converged_ = true;
  } else if (rec.epoch >= sched.max_epochs) {
    finished_ = true;
  }
  return !finished_;
}

void SearchRun::run(const std::function<void(const SearchRun&)>& on_epoch) {
  while (!finished_) {
    run_epoch();
    if (on_epoch) on_epoch(*this);
  }
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = "epoch,E_alpha,E_gamma,train_loss,val_loss\n";
  for (const auto& r : history) {
    out += fmt::format("{},{},{},{},{}\n", r.epoch, r.e_alpha, r.e_gamma, r.train_loss, r.val_loss);
  }
  return out;
}

std::vector<EpochRecord> parse_history_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "epoch,E_alpha,E_gamma,train_loss,val_loss") {
    throw FormatError("history CSV: unexpected header");
  }
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char c1, c2, c3, c4;
    std::istringstream ls(line);
    ls.precision(17);
    if (!(ls >> r.epoch >> c1 >> r.e_alpha >> c2 >> r.e_gamma >> c3 >> r.train_loss >> c4 >> r.val_loss) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',') {
      throw FormatError("history CSV: malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace grmc::nas

namespace grmc::nas {

namespace {

void put_adam(io::Checkpoint& ck, Adam& opt, const std::string& tag) {
  for (std::size_t i = 0; i < opt.first_moments().size(); ++i) {
    const auto n = opt.first_moments()[i].size();
    ck.tensors.emplace_back(fmt::format("{}.m.{}", tag, i), Tensor({n}, opt.first_moments()[i]));
    ck.tensors.emplace_back(fmt::format("{}.v.{}", tag, i), Tensor({n}, opt.second_moments()[i]));
  }
}

void get_adam(const io::Checkpoint& ck, Adam& opt, const std::string& tag, std::size_t groups, std::int64_t steps) {
  opt.set_steps(steps);
  if (steps == 0) return;
  opt.first_moments().clear();
  opt.second_moments().clear();
  for (std::size_t i = 0; i < groups; ++i) {
    opt.first_moments().push_back(ck.tensor(fmt::format("{}.m.{}", tag, i)).data());
    opt.second_moments().push_back(ck.tensor(fmt::format("{}.v.{}", tag, i)).data());
  }
}

Eigen::MatrixXd as_matrix(const Tensor& t) {
  if (t.rank() != 2) throw FormatError("checkpoint: logits must be 2-D");
  return t.matrix(t.dim(0), t.dim(1));
}

}  // namespace

void SearchRun::save_checkpoint(const std::string& path) const {
  using nlohmann::json;
  io::Checkpoint ck;
  json history = json::array();
  for (const auto& r : history_) history.push_back({r.epoch, r.e_alpha, r.e_gamma, r.train_loss, r.val_loss});
  json names = json::array();
  for (const auto& [name, t] : trainer_.state().omega) names.push_back(name);
  auto& tr = const_cast<BilevelTrainer&>(trainer_);
  ck.manifest = {{"kind", "search"},
                 {"seed", seed_},
                 {"space", config::to_json(trainer_.space().config())},
                 {"schedule", config::to_json(trainer_.schedule())},
                 {"trainer_steps", trainer_.steps_taken()},
                 {"weight_adam_steps", tr.weight_optimizer().steps()},
                 {"arch_adam_steps", tr.arch_optimizer().steps()},
                 {"rng",
                  {{"outcome", streams_.outcome.state()},
                   {"conditional", streams_.conditional.state()},
                   {"shuffle", shuffle_rng_.state()}}},
                 {"history", history},
                 {"genotype_trace", genotype_trace_},
                 {"stable_epochs", stable_epochs_},
                 {"finished", finished_},
                 {"converged", converged_},
                 {"omega", names},
                 {"metadata", metadata_}};
  const auto& st = trainer_.state();
  ck.tensors.emplace_back("alpha", Tensor::from_matrix(st.alpha));
  ck.tensors.emplace_back("gamma", Tensor::from_matrix(st.gamma));
  ck.tensors.emplace_back("beta", Tensor::from_matrix(st.beta));
  for (const auto& [name, t] : st.omega) ck.tensors.emplace_back("omega." + name, t);
  put_adam(ck, tr.weight_optimizer(), "adam.weights");
  put_adam(ck, tr.arch_optimizer(), "adam.arch");
  io::save_checkpoint(path, ck);
}

nlohmann::json SearchRun::checkpoint_metadata(const std::string& path) {
  const io::Checkpoint ck = io::load_checkpoint(path);
  return ck.manifest.value("metadata", nlohmann::json::object());
}

SearchRun SearchRun::resume(const std::string& path, const Dataset& train, const Dataset& val) {
  const io::Checkpoint ck = io::load_checkpoint(path);
  const auto& m = ck.manifest;
  try {
    if (m.at("kind") != "search") throw FormatError("checkpoint is not a search run");
    const SearchSpaceConfig space_cfg = config::search_space_from_json(m.at("space"));
    const TrainSchedule schedule = config::schedule_from_json(m.at("schedule"));
    const SearchSpace space(space_cfg);

    SearchState st;
    st.alpha = as_matrix(ck.tensor("alpha"));
    st.gamma = as_matrix(ck.tensor("gamma"));
    st.beta = as_matrix(ck.tensor("beta"));
    for (const auto& n : m.at("omega")) {
      const std::string name = n.get<std::string>();
      st.omega.emplace_back(name, ck.tensor("omega." + name));
    }

    BilevelTrainer trainer(space, std::move(st), schedule);
    trainer.set_steps_taken(m.at("trainer_steps").get<std::int64_t>());
    get_adam(ck, trainer.weight_optimizer(), "adam.weights", trainer.state().omega.size(),
             m.at("weight_adam_steps").get<std::int64_t>());
    get_adam(ck, trainer.arch_optimizer(), "adam.arch", 3, m.at("arch_adam_steps").get<std::int64_t>());

    SearchRun run(std::move(trainer), m.at("seed").get<std::uint64_t>(), train, val);
    run.streams_.outcome.restore(m.at("rng").at("outcome").get<std::string>());
    run.streams_.conditional.restore(m.at("rng").at("conditional").get<std::string>());
    run.shuffle_rng_.restore(m.at("rng").at("shuffle").get<std::string>());
    for (const auto& r : m.at("history")) {
      run.history_.push_back({r.at(0).get<int>(), r.at(1).get<double>(), r.at(2).get<double>(), r.at(3).get<double>(),
                              r.at(4).get<double>()});
    }
    run.genotype_trace_ = m.at("genotype_trace").get<std::vector<std::string>>();
    run.stable_epochs_ = m.at("stable_epochs").get<int>();
    run.finished_ = m.at("finished").get<bool>();
    run.converged_ = m.at("converged").get<bool>();
    run.metadata_ = m.value("metadata", nlohmann::json::object());
    return run;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

}  // namespace grmc::nas
