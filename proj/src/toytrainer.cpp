#include "splitmetric/toytrainer.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "splitmetric/error.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

constexpr std::array<char, 4> kModelMagic = {'T', 'O', 'Y', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw Error(std::string("model: truncated file while reading ") + what);
  }
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

RowMatrixD gather(const EmbeddingMatrix& features, const std::vector<std::string>& ids) {
  RowMatrixD out(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(features.dim()));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) =
        features.data().row(static_cast<Eigen::Index>(features.row_of(ids[i]))).cast<double>();
  }
  return out;
}

}  // namespace

ToyModel ToyModel::initialize(std::size_t d_in, std::size_t d_out, std::uint64_t seed) {
  if (d_in < 1) throw Error("toy model: d_in must be >= 1");
  if (d_out < 2) throw Error("toy model: d_out must be >= 2");
  SplitMix64 rng(seed);
  ToyModel model;
  model.weight.resize(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(d_in));
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_in));
  for (Eigen::Index r = 0; r < model.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weight.cols(); ++c) model.weight(r, c) = scale * rng.normal();
  }
  model.bias = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d_out));
  return model;
}

RowMatrixD forward(const ToyModel& model, const RowMatrixD& features, ForwardCache* cache) {
  if (features.cols() != model.weight.cols()) {
    throw Error("forward: feature dimension " + std::to_string(features.cols()) +
                " != model d_in " + std::to_string(model.weight.cols()));
  }
  const Eigen::Index b = features.rows();
  const double d = static_cast<double>(features.cols());
  RowMatrixD normalized(b, features.cols());
  Eigen::VectorXd inv_std(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mean = features.row(i).sum() / d;
    const auto centered = (features.row(i).array() - mean).eval();
    const double var = centered.square().sum() / d;
    inv_std(i) = 1.0 / std::sqrt(var + model.layernorm_eps);
    normalized.row(i) = centered * inv_std(i);
  }
  RowMatrixD hidden = normalized * model.weight.transpose();
  hidden.rowwise() += model.bias.transpose();
  Eigen::VectorXd norms(b);
  RowMatrixD output(b, hidden.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    norms(i) = hidden.row(i).norm();
    if (norms(i) == 0.0) {
      output.row(i).setZero();
    } else {
      output.row(i) = hidden.row(i) / norms(i);
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
    cache->hidden = std::move(hidden);
    cache->hidden_norm = std::move(norms);
    cache->output = output;
  }
  return output;
}

HeadGradients backward(const ToyModel& model, const ForwardCache& cache,
                       const RowMatrixD& grad_output) {
  const Eigen::Index b = cache.output.rows();
  RowMatrixD grad_hidden(b, cache.output.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    if (cache.hidden_norm(i) == 0.0) {
      grad_hidden.row(i).setZero();
      continue;
    }
    const double radial = cache.output.row(i).dot(grad_output.row(i));
    grad_hidden.row(i) = (grad_output.row(i) - radial * cache.output.row(i)) / cache.hidden_norm(i);
  }
  HeadGradients g;
  g.weight = grad_hidden.transpose() * cache.normalized;
  g.bias = grad_hidden.colwise().sum().transpose();
  const RowMatrixD grad_norm = grad_hidden * model.weight;
  const double d = static_cast<double>(grad_norm.cols());
  g.features.resize(b, grad_norm.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mean_g = grad_norm.row(i).sum() / d;
    const double mean_gy = grad_norm.row(i).dot(cache.normalized.row(i)) / d;
    g.features.row(i) = cache.inv_std(i) * (grad_norm.row(i).array() - mean_g -
                                            cache.normalized.row(i).array() * mean_gy)
                                               .matrix();
  }
  return g;
}

EmbeddingMatrix embed(const ToyModel& model, const EmbeddingMatrix& features) {
  const RowMatrixD out = forward(model, features.data().cast<double>());
  bool unit = true;
  for (Eigen::Index i = 0; i < out.rows(); ++i) unit = unit && out.row(i).norm() > 0.5;
  return EmbeddingMatrix(features.ids(), out.cast<float>(), unit);
}

void BatchSpec::validate() const {
  if (m < 2 || k < 2) throw Error("batch spec: m and k must both be >= 2");
}

ClassIndex ClassIndex::from_images(const std::vector<std::string>& images, const LinkOracle& oracle) {
  ClassIndex index;
  for (const auto& id : images) index.label.emplace(oracle.label(id), 0);
  int next = 0;
  for (auto& [branch, label] : index.label) {
    label = next++;
    index.branches.push_back(branch);
  }
  return index;
}

BatchSample sample_batch(const std::vector<std::string>& images, const LinkOracle& oracle,
                         const BatchSpec& spec, std::uint64_t seed) {
  spec.validate();
  const ClassIndex classes = ClassIndex::from_images(images, oracle);
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& id : images) members[oracle.label(id)].push_back(id);
  std::vector<std::string> eligible;
  for (auto& [branch, ids] : members) {
    std::sort(ids.begin(), ids.end());
    if (ids.size() >= spec.k) eligible.push_back(branch);
  }
  if (eligible.size() < spec.m) {
    throw Error("sample_batch: need " + std::to_string(spec.m) + " classes with >= " +
                std::to_string(spec.k) + " images, found " + std::to_string(eligible.size()));
  }
  SplitMix64 rng(seed);
  BatchSample batch;
  for (const auto& branch : rng.sample(eligible, spec.m)) {
    for (auto& id : rng.sample(members.at(branch), spec.k)) {
      batch.ids.push_back(std::move(id));
      batch.labels.push_back(classes.label.at(branch));
    }
  }
  return batch;
}

void TrainConfig::validate() const {
  params.validate();
  batch.validate();
  if (!(learning_rate >= 0.0)) throw Error("train config: learning_rate must be >= 0");
  if (!(aux_learning_rate >= 0.0)) throw Error("train config: aux_learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error("train config: momentum must be in [0,1)");
  if (epochs < 1) throw Error("train config: epochs must be >= 1");
  if (d_out < 2) throw Error("train config: d_out must be >= 2");
  if (val_repeats < 1) throw Error("train config: val_repeats must be >= 1");
}

StepResult train_step(ToyModel& model, const RowMatrixD& features, const std::vector<int>& labels,
                      const TrainConfig& config, OptimizerState& state, ClassBank* bank,
                      std::uint64_t view_seed) {
  RowMatrixD inputs = features;
  std::vector<int> batch_labels = labels;
  if (config.loss == LossKind::kSupCon) {
    SplitMix64 rng(view_seed);
    inputs.resize(2 * features.rows(), features.cols());
    for (Eigen::Index v = 0; v < 2; ++v) {
      for (Eigen::Index i = 0; i < features.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) {
          inputs(v * features.rows() + i, j) = features(i, j) + config.augmentation_sigma * rng.normal();
        }
      }
    }
    batch_labels.insert(batch_labels.end(), labels.begin(), labels.end());
  }

  ForwardCache cache;
  Batch batch{forward(model, inputs, &cache), batch_labels};
  const LossResult loss = compute_loss(config.loss, batch, config.params, bank);
  if (!std::isfinite(loss.value) || !loss.grad_embeddings.allFinite() || !batch.embeddings.allFinite()) {
    std::ostringstream msg;
    msg << "train_step: non-finite " << to_string(config.loss) << " loss (value=" << loss.value
        << ", batch rows=" << batch.embeddings.rows() << ", max |embedding|="
        << batch.embeddings.cwiseAbs().maxCoeff() << ")";
    throw Error(msg.str());
  }
  const HeadGradients grads = backward(model, cache, loss.grad_embeddings);

  if (state.weight_velocity.rows() != model.weight.rows() ||
      state.weight_velocity.cols() != model.weight.cols()) {
    state.weight_velocity = RowMatrixD::Zero(model.weight.rows(), model.weight.cols());
    state.bias_velocity = Eigen::VectorXd::Zero(model.bias.size());
  }
  state.weight_velocity = config.momentum * state.weight_velocity + grads.weight;
  state.bias_velocity = config.momentum * state.bias_velocity + grads.bias;
  model.weight -= config.learning_rate * state.weight_velocity;
  model.bias -= config.learning_rate * state.bias_velocity;

  if (bank && loss.grad_aux) {
    if (state.aux_velocity.rows() != bank->vectors.rows() ||
        state.aux_velocity.cols() != bank->vectors.cols()) {
      state.aux_velocity = RowMatrixD::Zero(bank->vectors.rows(), bank->vectors.cols());
    }
    state.aux_velocity = config.momentum * state.aux_velocity + *loss.grad_aux;
    bank->vectors -= config.aux_learning_rate * state.aux_velocity;
    bank->normalize_rows();
  }
  return {loss.value};
}

ClassBank initial_class_bank(const ToyModel& model, const EmbeddingMatrix& features,
                             const std::vector<std::string>& images, const ClassIndex& classes,
                             const LinkOracle& oracle, int per_class, std::uint64_t seed) {
  std::map<std::string, std::vector<std::string>> members;
  for (const auto& id : images) members[oracle.label(id)].push_back(id);
  ClassBank bank;
  bank.per_class = per_class;
  bank.vectors.resize(static_cast<Eigen::Index>(classes.branches.size()) * per_class,
                      static_cast<Eigen::Index>(model.d_out()));
  SplitMix64 rng(seed);
  for (std::size_t c = 0; c < classes.branches.size(); ++c) {
    bank.classes.push_back(static_cast<int>(c));
    const RowMatrixD out = forward(model, gather(features, members.at(classes.branches[c])));
    const Eigen::RowVectorXd mean = out.colwise().mean();
    for (int j = 0; j < per_class; ++j) {
      Eigen::RowVectorXd v = mean;
      if (per_class > 1) {
        for (Eigen::Index t = 0; t < v.size(); ++t) v(t) += 0.05 * rng.normal() / std::sqrt(double(v.size()));
      }
      bank.vectors.row(static_cast<Eigen::Index>(c) * per_class + j) = v;
    }
  }
  bank.normalize_rows();
  return bank;
}

TrainResult train(const Catalog& catalog, const SplitAssignment& splits,
                  const EmbeddingMatrix& features, const TrainConfig& config) {
  config.validate();
  const LinkOracle oracle = LinkOracle::from_catalog(catalog);
  const auto train_images = images_in(splits, SplitName::kTrain);
  if (train_images.empty()) throw Error("train: train split is empty");
  for (const auto& id : train_images) features.row_of(id);
  const ClassIndex classes = ClassIndex::from_images(train_images, oracle);

  ToyModel model = ToyModel::initialize(features.dim(), config.d_out, config.seed);
  std::optional<ClassBank> bank;
  if (config.loss == LossKind::kProxyNCA) {
    bank = initial_class_bank(model, features, train_images, classes, oracle, 1, config.seed);
  } else if (config.loss == LossKind::kSoftTriple) {
    bank = initial_class_bank(model, features, train_images, classes, oracle,
                              config.params.softtriple.centers_per_class, config.seed);
  }

  std::optional<EmbeddingMatrix> val_features;
  {
    const auto val_images = images_in(splits, SplitName::kValSS);
    std::map<std::string, std::size_t> sizes;
    for (const auto& id : val_images) ++sizes[oracle.label(id)];
    const bool eligible = sizes.size() >= 2 && std::any_of(sizes.begin(), sizes.end(),
                                                           [](const auto& kv) { return kv.second >= 2; });
    if (eligible) val_features = features.select(val_images);
  }

  const std::size_t batch_size = config.batch.m * config.batch.k;
  const std::size_t steps =
      config.steps_per_epoch ? config.steps_per_epoch : std::max<std::size_t>(1, train_images.size() / batch_size);

  TrainResult result{model, bank, {}, 0};
  OptimizerState state;
  SplitMix64 seeds(config.seed ^ 0xD1B54A32D192ED03ULL);
  double best_r1 = -1.0;
  double best_auc = -1.0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      const auto sample = sample_batch(train_images, oracle, config.batch, seeds());
      loss_sum += train_step(model, gather(features, sample.ids), sample.labels, config, state,
                             bank ? &*bank : nullptr, seeds())
                      .loss;
    }
    HistoryRow row{epoch, loss_sum / static_cast<double>(steps),
                   std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    if (val_features) {
      const auto report = evaluate(embed(model, *val_features), oracle,
                                   EvalOptions{config.val_repeats, config.seed, false, std::nullopt});
      row.val_r_at_1 = report.r_at_1;
      row.val_auc = report.auc.mean;
    }
    result.history.push_back(row);

    const bool better = !val_features || row.val_r_at_1 > best_r1 ||
                        (row.val_r_at_1 == best_r1 && row.val_auc > best_auc);
    if (better) {
      best_r1 = val_features ? row.val_r_at_1 : best_r1;
      best_auc = val_features ? row.val_auc : best_auc;
      result.model = model;
      result.bank = bank;
      result.best_epoch = epoch;
    }
  }
  return result;
}

void save_model(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("model: cannot write '" + path.string() + "'");
  out.write(kModelMagic.data(), kModelMagic.size());
  put_u32(out, static_cast<std::uint32_t>(model.d_in()));
  put_u32(out, static_cast<std::uint32_t>(model.d_out()));
  for (Eigen::Index r = 0; r < model.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weight.cols(); ++c) {
      put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(model.weight(r, c))));
    }
  }
  for (Eigen::Index r = 0; r < model.bias.size(); ++r) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(model.bias(r))));
  }
  if (!out) throw Error("model: write failed for '" + path.string() + "'");
}

ToyModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("model: cannot open '" + path.string() + "'");
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kModelMagic) throw Error("model: bad magic");
  const auto d_in = get_u32(in, "d_in");
  const auto d_out = get_u32(in, "d_out");
  if (d_in < 1 || d_out < 2) throw Error("model: invalid dimensions");
  ToyModel model;
  model.weight.resize(d_out, d_in);
  model.bias.resize(d_out);
  for (Eigen::Index r = 0; r < model.weight.rows(); ++r) {
    for (Eigen::Index c = 0; c < model.weight.cols(); ++c) {
      model.weight(r, c) = std::bit_cast<float>(get_u32(in, "weights"));
    }
  }
  for (Eigen::Index r = 0; r < model.bias.size(); ++r) {
    model.bias(r) = std::bit_cast<float>(get_u32(in, "bias"));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error("model: trailing bytes");
  return model;
}

void write_history(const std::vector<HistoryRow>& history, std::ostream& out) {
  out << "epoch,train_loss,val_r_at_1,val_auc\n";
  out.precision(17);
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.val_r_at_1 << ',' << r.val_auc << '\n';
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"loss", std::string(to_string(c.loss))},
          {"params", to_json(c.params)},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"augmentation_sigma", c.augmentation_sigma},
          {"aux_learning_rate", c.aux_learning_rate},
          {"batch", {{"m", c.batch.m}, {"k", c.batch.k}}},
          {"d_out", c.d_out},
          {"steps_per_epoch", c.steps_per_epoch},
          {"val_repeats", c.val_repeats}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  if (j.contains("params")) c.params = loss_params_from_json(j.at("params"));
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.augmentation_sigma = j.value("augmentation_sigma", c.augmentation_sigma);
  c.aux_learning_rate = j.value("aux_learning_rate", c.aux_learning_rate);
  if (j.contains("batch")) {
    c.batch.m = j.at("batch").value("m", c.batch.m);
    c.batch.k = j.at("batch").value("k", c.batch.k);
  }
  c.d_out = j.value("d_out", c.d_out);
  c.steps_per_epoch = j.value("steps_per_epoch", c.steps_per_epoch);
  c.val_repeats = j.value("val_repeats", c.val_repeats);
  c.validate();
  return c;
}

}  // namespace splitmetric
