#include "splitmetric/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "splitmetric/error.hpp"
#include "splitmetric/rng.hpp"

namespace splitmetric {
namespace {

constexpr std::array<std::string_view, 6> kLossNames = {"triplet", "circle",   "multisim",
                                                        "supcon",  "proxynca", "softtriple"};

constexpr double kInf = std::numeric_limits<double>::infinity();

double log_sum_exp(const std::vector<double>& v) {
  double hi = -kInf;
  for (double x : v) hi = std::max(hi, x);
  if (hi == -kInf) return -kInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - hi);
  return hi + std::log(s);
}

// softmax weights of v given its log-sum-exp
std::vector<double> softmax(const std::vector<double>& v, double lse) {
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::exp(v[i] - lse);
  return w;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }
double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

RowMatrixD similarities(const RowMatrixD& x) { return x * x.transpose(); }

void check_batch(const Batch& batch) {
  if (batch.embeddings.rows() < 2) throw Error("loss: batch needs at least 2 rows");
  if (static_cast<std::size_t>(batch.embeddings.rows()) != batch.labels.size()) {
    throw Error("loss: " + std::to_string(batch.labels.size()) + " labels for " +
                std::to_string(batch.embeddings.rows()) + " embeddings");
  }
}

LossResult zero_result(const Batch& batch) {
  return {0.0, RowMatrixD::Zero(batch.embeddings.rows(), batch.embeddings.cols()), std::nullopt};
}

// Adds g * d(x_i . x_j) to the gradient.
void add_pair_grad(RowMatrixD& grad, const RowMatrixD& x, Eigen::Index i, Eigen::Index j, double g) {
  grad.row(i) += g * x.row(j);
  grad.row(j) += g * x.row(i);
}

struct AnchorPairs {
  std::vector<Eigen::Index> pos;
  std::vector<Eigen::Index> neg;
};

AnchorPairs pairs_of(const Batch& batch, Eigen::Index i) {
  AnchorPairs p;
  for (Eigen::Index j = 0; j < batch.embeddings.rows(); ++j) {
    if (j == i) continue;
    (batch.labels[j] == batch.labels[i] ? p.pos : p.neg).push_back(j);
  }
  return p;
}

void check_bank(const Batch& batch, const ClassBank& bank, int per_class, const char* who) {
  if (bank.per_class != per_class && per_class > 0) {
    throw Error(std::string(who) + ": expected " + std::to_string(per_class) +
                " vectors per class, bank has " + std::to_string(bank.per_class));
  }
  if (bank.vectors.rows() != static_cast<Eigen::Index>(bank.classes.size()) * bank.per_class) {
    throw Error(std::string(who) + ": bank row count does not match classes x per_class");
  }
  if (bank.vectors.cols() != batch.embeddings.cols()) {
    throw Error(std::string(who) + ": bank dimension does not match embeddings");
  }
  for (int label : batch.labels) {
    if (!std::binary_search(bank.classes.begin(), bank.classes.end(), label)) {
      throw Error(std::string(who) + ": no class vector for label " + std::to_string(label));
    }
  }
}

}  // namespace

std::string_view to_string(LossKind kind) { return kLossNames[static_cast<std::size_t>(kind)]; }

LossKind parse_loss_kind(std::string_view token) {
  for (std::size_t i = 0; i < kLossNames.size(); ++i) {
    if (kLossNames[i] == token) return static_cast<LossKind>(i);
  }
  throw Error("unknown loss '" + std::string(token) +
              "' (expected triplet, circle, multisim, supcon, proxynca or softtriple)");
}

bool uses_class_bank(LossKind kind) {
  return kind == LossKind::kProxyNCA || kind == LossKind::kSoftTriple;
}

void LossParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw Error(std::string("loss params: ") + name + " must be > 0");
  };
  if (!(triplet.margin >= 0.0)) throw Error("loss params: triplet.margin must be >= 0");
  if (!(circle.relaxation >= 0.0)) throw Error("loss params: circle.m must be >= 0");
  positive(circle.scale, "circle.gamma");
  positive(multisim.alpha, "multisim.alpha");
  positive(multisim.beta, "multisim.beta");
  if (!(multisim.epsilon >= 0.0)) throw Error("loss params: multisim.epsilon must be >= 0");
  positive(supcon.temperature, "supcon.temperature");
  positive(proxynca.temperature, "proxynca.temperature");
  positive(softtriple.scale, "softtriple.lambda");
  positive(softtriple.center_temperature, "softtriple.gamma");
  if (!(softtriple.regularization >= 0.0)) throw Error("loss params: softtriple.tau must be >= 0");
  if (softtriple.centers_per_class < 1) throw Error("loss params: softtriple.centers_per_class must be >= 1");
}

nlohmann::json to_json(const LossParams& p) {
  return {
      {"triplet", {{"margin", p.triplet.margin}}},
      {"circle", {{"m", p.circle.relaxation}, {"gamma", p.circle.scale}}},
      {"multisim",
       {{"alpha", p.multisim.alpha},
        {"beta", p.multisim.beta},
        {"lambda", p.multisim.threshold},
        {"epsilon", p.multisim.epsilon}}},
      {"supcon", {{"temperature", p.supcon.temperature}}},
      {"proxynca", {{"temperature", p.proxynca.temperature}}},
      {"softtriple",
       {{"lambda", p.softtriple.scale},
        {"gamma", p.softtriple.center_temperature},
        {"delta", p.softtriple.margin},
        {"tau", p.softtriple.regularization},
        {"centers_per_class", p.softtriple.centers_per_class}}},
  };
}

LossParams loss_params_from_json(const nlohmann::json& j) {
  LossParams p;
  auto section = [&](const char* key) {
    return j.contains(key) ? j.at(key) : nlohmann::json::object();
  };
  const auto t = section("triplet");
  p.triplet.margin = t.value("margin", p.triplet.margin);
  const auto c = section("circle");
  p.circle.relaxation = c.value("m", p.circle.relaxation);
  p.circle.scale = c.value("gamma", p.circle.scale);
  const auto m = section("multisim");
  p.multisim.alpha = m.value("alpha", p.multisim.alpha);
  p.multisim.beta = m.value("beta", p.multisim.beta);
  p.multisim.threshold = m.value("lambda", p.multisim.threshold);
  p.multisim.epsilon = m.value("epsilon", p.multisim.epsilon);
  p.supcon.temperature = section("supcon").value("temperature", p.supcon.temperature);
  p.proxynca.temperature = section("proxynca").value("temperature", p.proxynca.temperature);
  const auto s = section("softtriple");
  p.softtriple.scale = s.value("lambda", p.softtriple.scale);
  p.softtriple.center_temperature = s.value("gamma", p.softtriple.center_temperature);
  p.softtriple.margin = s.value("delta", p.softtriple.margin);
  p.softtriple.regularization = s.value("tau", p.softtriple.regularization);
  p.softtriple.centers_per_class = s.value("centers_per_class", p.softtriple.centers_per_class);
  p.validate();
  return p;
}

std::size_t ClassBank::slot(int label) const {
  auto it = std::lower_bound(classes.begin(), classes.end(), label);
  if (it == classes.end() || *it != label) {
    throw Error("class bank: no vectors for label " + std::to_string(label));
  }
  return static_cast<std::size_t>(it - classes.begin());
}

void ClassBank::normalize_rows() {
  for (Eigen::Index r = 0; r < vectors.rows(); ++r) {
    const double n = vectors.row(r).norm();
    if (n > 0.0) vectors.row(r) /= n;
  }
}

// ---------------------------------------------------------------------------

LossResult triplet_loss(const Batch& batch, const TripletParams& params) {
  check_batch(batch);
  const auto& x = batch.embeddings;
  const RowMatrixD s = similarities(x);
  LossResult out = zero_result(batch);
  std::size_t triplets = 0;
  double total = 0.0;
  for (Eigen::Index a = 0; a < x.rows(); ++a) {
    const auto pairs = pairs_of(batch, a);
    for (Eigen::Index p : pairs.pos) {
      for (Eigen::Index n : pairs.neg) {
        ++triplets;
        const double h = s(a, n) - s(a, p) + params.margin;
        if (h <= 0.0) continue;
        total += h;
        out.grad_embeddings.row(a) += x.row(n) - x.row(p);
        out.grad_embeddings.row(n) += x.row(a);
        out.grad_embeddings.row(p) -= x.row(a);
      }
    }
  }
  if (triplets == 0) return zero_result(batch);
  out.value = total / static_cast<double>(triplets);
  out.grad_embeddings /= static_cast<double>(triplets);
  return out;
}

LossResult circle_loss(const Batch& batch, const CircleParams& params) {
  check_batch(batch);
  const auto& x = batch.embeddings;
  const RowMatrixD s = similarities(x);
  const double m = params.relaxation;
  const double gamma = params.scale;
  const double delta_p = 1.0 - m;
  const double delta_n = m;
  LossResult out = zero_result(batch);
  std::size_t anchors = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto pairs = pairs_of(batch, i);
    if (pairs.pos.empty() || pairs.neg.empty()) continue;
    ++anchors;
    std::vector<double> lp(pairs.pos.size());
    std::vector<double> ln(pairs.neg.size());
    for (std::size_t j = 0; j < lp.size(); ++j) {
      const double sp = s(i, pairs.pos[j]);
      lp[j] = -gamma * std::max(0.0, 1.0 + m - sp) * (sp - delta_p);
    }
    for (std::size_t k = 0; k < ln.size(); ++k) {
      const double sn = s(i, pairs.neg[k]);
      ln[k] = gamma * std::max(0.0, sn + m) * (sn - delta_n);
    }
    const double lse_p = log_sum_exp(lp);
    const double lse_n = log_sum_exp(ln);
    const double z = lse_p + lse_n;
    total += softplus(z);
    const double outer = sigmoid(z);
    const auto wp = softmax(lp, lse_p);
    const auto wn = softmax(ln, lse_n);
    for (std::size_t j = 0; j < lp.size(); ++j) {
      const double sp = s(i, pairs.pos[j]);
      const double alpha = 1.0 + m - sp;
      const double dl = alpha > 0.0 ? -gamma * (alpha - (sp - delta_p)) : 0.0;
      add_pair_grad(out.grad_embeddings, x, i, pairs.pos[j], outer * wp[j] * dl);
    }
    for (std::size_t k = 0; k < ln.size(); ++k) {
      const double sn = s(i, pairs.neg[k]);
      const double alpha = sn + m;
      const double dl = alpha > 0.0 ? gamma * (alpha + (sn - delta_n)) : 0.0;
      add_pair_grad(out.grad_embeddings, x, i, pairs.neg[k], outer * wn[k] * dl);
    }
  }
  if (anchors == 0) return zero_result(batch);
  out.value = total / static_cast<double>(anchors);
  out.grad_embeddings /= static_cast<double>(anchors);
  return out;
}

LossResult multisim_loss(const Batch& batch, const MultiSimParams& params) {
  check_batch(batch);
  const auto& x = batch.embeddings;
  const RowMatrixD s = similarities(x);
  LossResult out = zero_result(batch);
  std::size_t anchors = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto pairs = pairs_of(batch, i);
    if (pairs.pos.empty() || pairs.neg.empty()) continue;
    double min_pos = kInf;
    double max_neg = -kInf;
    for (Eigen::Index p : pairs.pos) min_pos = std::min(min_pos, s(i, p));
    for (Eigen::Index n : pairs.neg) max_neg = std::max(max_neg, s(i, n));

    std::vector<Eigen::Index> keep_pos;
    std::vector<Eigen::Index> keep_neg;
    for (Eigen::Index p : pairs.pos) {
      if (s(i, p) < max_neg + params.epsilon) keep_pos.push_back(p);
    }
    for (Eigen::Index n : pairs.neg) {
      if (s(i, n) > min_pos - params.epsilon) keep_neg.push_back(n);
    }
    if (keep_pos.empty() && keep_neg.empty()) continue;
    ++anchors;

    // log(1 + sum e^a) as a log-sum-exp with a leading zero term
    std::vector<double> ap{0.0};
    for (Eigen::Index p : keep_pos) ap.push_back(-params.alpha * (s(i, p) - params.threshold));
    std::vector<double> an{0.0};
    for (Eigen::Index n : keep_neg) an.push_back(params.beta * (s(i, n) - params.threshold));
    const double lse_p = log_sum_exp(ap);
    const double lse_n = log_sum_exp(an);
    total += lse_p / params.alpha + lse_n / params.beta;
    const auto wp = softmax(ap, lse_p);
    const auto wn = softmax(an, lse_n);
    for (std::size_t j = 0; j < keep_pos.size(); ++j) {
      add_pair_grad(out.grad_embeddings, x, i, keep_pos[j], -wp[j + 1]);
    }
    for (std::size_t k = 0; k < keep_neg.size(); ++k) {
      add_pair_grad(out.grad_embeddings, x, i, keep_neg[k], wn[k + 1]);
    }
  }
  if (anchors == 0) return zero_result(batch);
  out.value = total / static_cast<double>(anchors);
  out.grad_embeddings /= static_cast<double>(anchors);
  return out;
}

LossResult supcon_loss(const Batch& batch, const SupConParams& params) {
  check_batch(batch);
  const auto& x = batch.embeddings;
  const RowMatrixD s = similarities(x);
  const double tau = params.temperature;
  LossResult out = zero_result(batch);
  std::size_t anchors = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto pairs = pairs_of(batch, i);
    if (pairs.pos.empty()) continue;
    ++anchors;
    std::vector<Eigen::Index> others;
    std::vector<double> logits;
    for (Eigen::Index a = 0; a < x.rows(); ++a) {
      if (a == i) continue;
      others.push_back(a);
      logits.push_back(s(i, a) / tau);
    }
    const double lse = log_sum_exp(logits);
    const double inv_p = 1.0 / static_cast<double>(pairs.pos.size());
    double pos_mean = 0.0;
    for (Eigen::Index p : pairs.pos) pos_mean += s(i, p) / tau;
    total += lse - pos_mean * inv_p;
    const auto q = softmax(logits, lse);
    for (std::size_t a = 0; a < others.size(); ++a) {
      const bool positive = batch.labels[others[a]] == batch.labels[i];
      add_pair_grad(out.grad_embeddings, x, i, others[a], (q[a] - (positive ? inv_p : 0.0)) / tau);
    }
  }
  if (anchors == 0) return zero_result(batch);
  out.value = total / static_cast<double>(anchors);
  out.grad_embeddings /= static_cast<double>(anchors);
  return out;
}

LossResult proxynca_loss(const Batch& batch, const ClassBank& proxies, const ProxyNCAParams& params) {
  check_batch(batch);
  check_bank(batch, proxies, 1, "proxynca");
  const auto& x = batch.embeddings;
  const auto& p = proxies.vectors;
  const double t = params.temperature;
  LossResult out = zero_result(batch);
  out.grad_aux = RowMatrixD::Zero(p.rows(), p.cols());
  auto& gp = *out.grad_aux;
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto own = static_cast<Eigen::Index>(proxies.slot(batch.labels[i]));
    std::vector<double> logits(static_cast<std::size_t>(p.rows()));
    for (Eigen::Index c = 0; c < p.rows(); ++c) {
      logits[c] = -(x.row(i) - p.row(c)).squaredNorm() / t;
    }
    const double lse = log_sum_exp(logits);
    total += lse - logits[own];
    const auto q = softmax(logits, lse);
    for (Eigen::Index c = 0; c < p.rows(); ++c) {
      // dL/dlogit_c = q_c - [c == own]; dlogit_c/dx = -2 (x - p_c) / t
      const double g = q[c] - (c == own ? 1.0 : 0.0);
      const auto diff = (x.row(i) - p.row(c)).eval();
      out.grad_embeddings.row(i) += g * (-2.0 / t) * diff;
      gp.row(c) += g * (2.0 / t) * diff;
    }
  }
  const double b = static_cast<double>(x.rows());
  out.value = total / b;
  out.grad_embeddings /= b;
  gp /= b;
  return out;
}

LossResult softtriple_loss(const Batch& batch, const ClassBank& centers,
                           const SoftTripleParams& params) {
  check_batch(batch);
  check_bank(batch, centers, params.centers_per_class, "softtriple");
  const auto& x = batch.embeddings;
  const auto& w = centers.vectors;
  const auto n_classes = static_cast<Eigen::Index>(centers.classes.size());
  const Eigen::Index per = centers.per_class;
  const double gamma = params.center_temperature;
  const double lambda = params.scale;

  LossResult out = zero_result(batch);
  out.grad_aux = RowMatrixD::Zero(w.rows(), w.cols());
  auto& gw = *out.grad_aux;
  const RowMatrixD u = x * w.transpose();  // B x (C*J)
  const double b = static_cast<double>(x.rows());

  double total = 0.0;
  std::vector<double> logits(static_cast<std::size_t>(n_classes));
  std::vector<std::vector<double>> center_weights(static_cast<std::size_t>(n_classes));
  std::vector<double> relaxed(static_cast<std::size_t>(n_classes));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto own = static_cast<Eigen::Index>(centers.slot(batch.labels[i]));
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      std::vector<double> scaled(static_cast<std::size_t>(per));
      for (Eigen::Index j = 0; j < per; ++j) scaled[j] = u(i, c * per + j) / gamma;
      center_weights[c] = softmax(scaled, log_sum_exp(scaled));
      double sc = 0.0;
      for (Eigen::Index j = 0; j < per; ++j) sc += center_weights[c][j] * u(i, c * per + j);
      relaxed[c] = sc;
      logits[c] = lambda * (sc - (c == own ? params.margin : 0.0));
    }
    const double lse = log_sum_exp(logits);
    total += lse - logits[own];
    const auto q = softmax(logits, lse);
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      const double dlogit = q[c] - (c == own ? 1.0 : 0.0);
      for (Eigen::Index j = 0; j < per; ++j) {
        const Eigen::Index r = c * per + j;
        const double pj = center_weights[c][j];
        // d s_c / d u_j = p_j (1 + (u_j - s_c) / gamma)
        const double g = dlogit * lambda * pj * (1.0 + (u(i, r) - relaxed[c]) / gamma) / b;
        out.grad_embeddings.row(i) += g * w.row(r);
        gw.row(r) += g * x.row(i);
      }
    }
  }
  out.value = total / b;

  if (per > 1 && params.regularization > 0.0) {
    const double norm = params.regularization /
                        (static_cast<double>(n_classes) * static_cast<double>(per * (per - 1)));
    double reg = 0.0;
    for (Eigen::Index c = 0; c < n_classes; ++c) {
      for (Eigen::Index j = 0; j < per; ++j) {
        for (Eigen::Index k = j + 1; k < per; ++k) {
          const Eigen::Index rj = c * per + j;
          const Eigen::Index rk = c * per + k;
          const double dist = std::sqrt(std::max(0.0, 2.0 - 2.0 * w.row(rj).dot(w.row(rk))));
          reg += dist;
          if (dist > 0.0) {
            gw.row(rj) -= norm * w.row(rk) / dist;
            gw.row(rk) -= norm * w.row(rj) / dist;
          }
        }
      }
    }
    out.value += norm * reg;
  }
  return out;
}

LossResult compute_loss(LossKind kind, const Batch& batch, const LossParams& params,
                        const ClassBank* bank) {
  if (uses_class_bank(kind) && bank == nullptr) {
    throw Error(std::string(to_string(kind)) + ": class bank required");
  }
  switch (kind) {
    case LossKind::kTriplet: return triplet_loss(batch, params.triplet);
    case LossKind::kCircle: return circle_loss(batch, params.circle);
    case LossKind::kMultiSim: return multisim_loss(batch, params.multisim);
    case LossKind::kSupCon: return supcon_loss(batch, params.supcon);
    case LossKind::kProxyNCA: return proxynca_loss(batch, *bank, params.proxynca);
    case LossKind::kSoftTriple: return softtriple_loss(batch, *bank, params.softtriple);
  }
  throw Error("compute_loss: unhandled loss kind");
}

double kink_distance(LossKind kind, const Batch& batch, const LossParams& params) {
  const RowMatrixD s = similarities(batch.embeddings);
  double best = kInf;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const auto pairs = pairs_of(batch, i);
    switch (kind) {
      case LossKind::kTriplet:
        for (Eigen::Index p : pairs.pos) {
          for (Eigen::Index n : pairs.neg) {
            best = std::min(best, std::abs(s(i, n) - s(i, p) + params.triplet.margin));
          }
        }
        break;
      case LossKind::kCircle: {
        const double m = params.circle.relaxation;
        for (Eigen::Index p : pairs.pos) best = std::min(best, std::abs(1.0 + m - s(i, p)));
        for (Eigen::Index n : pairs.neg) best = std::min(best, std::abs(s(i, n) + m));
        break;
      }
      case LossKind::kMultiSim: {
        if (pairs.pos.empty() || pairs.neg.empty()) break;
        double min_pos = kInf;
        double max_neg = -kInf;
        for (Eigen::Index p : pairs.pos) min_pos = std::min(min_pos, s(i, p));
        for (Eigen::Index n : pairs.neg) max_neg = std::max(max_neg, s(i, n));
        const double eps = params.multisim.epsilon;
        for (Eigen::Index p : pairs.pos) best = std::min(best, std::abs(s(i, p) - (max_neg + eps)));
        for (Eigen::Index n : pairs.neg) best = std::min(best, std::abs(s(i, n) - (min_pos - eps)));
        break;
      }
      default:
        return kInf;
    }
  }
  return best;
}

FiniteDiffResult finite_diff_check(LossKind kind, Batch batch, const LossParams& params,
                                   double eps, std::optional<ClassBank> bank, std::uint64_t seed) {
  if (uses_class_bank(kind) && !bank) throw Error("finite_diff_check: class bank required");
  FiniteDiffResult result;
  SplitMix64 rng(seed);
  const double kink_margin = std::max(1e-6, 4.0 * eps);
  while (kink_distance(kind, batch, params) < kink_margin) {
    if (++result.resamples > 1000) throw Error("finite_diff_check: could not leave kink region");
    for (Eigen::Index r = 0; r < batch.embeddings.rows(); ++r) {
      for (Eigen::Index c = 0; c < batch.embeddings.cols(); ++c) {
        batch.embeddings(r, c) += 1e-3 * rng.normal();
      }
      batch.embeddings.row(r).normalize();
    }
  }

  const ClassBank* bank_ptr = bank ? &*bank : nullptr;
  const LossResult analytic = compute_loss(kind, batch, params, bank_ptr);
  auto rel = [](double a, double n) { return std::abs(a - n) / std::max(1e-12, std::abs(n)); };

  for (Eigen::Index r = 0; r < batch.embeddings.rows(); ++r) {
    for (Eigen::Index c = 0; c < batch.embeddings.cols(); ++c) {
      const double saved = batch.embeddings(r, c);
      batch.embeddings(r, c) = saved + eps;
      const double up = compute_loss(kind, batch, params, bank_ptr).value;
      batch.embeddings(r, c) = saved - eps;
      const double down = compute_loss(kind, batch, params, bank_ptr).value;
      batch.embeddings(r, c) = saved;
      result.max_rel_error =
          std::max(result.max_rel_error, rel(analytic.grad_embeddings(r, c), (up - down) / (2 * eps)));
    }
  }
  if (bank) {
    for (Eigen::Index r = 0; r < bank->vectors.rows(); ++r) {
      for (Eigen::Index c = 0; c < bank->vectors.cols(); ++c) {
        const double saved = bank->vectors(r, c);
        bank->vectors(r, c) = saved + eps;
        const double up = compute_loss(kind, batch, params, bank_ptr).value;
        bank->vectors(r, c) = saved - eps;
        const double down = compute_loss(kind, batch, params, bank_ptr).value;
        bank->vectors(r, c) = saved;
        result.max_rel_error =
            std::max(result.max_rel_error, rel((*analytic.grad_aux)(r, c), (up - down) / (2 * eps)));
      }
    }
  }
  return result;
}

}  // namespace splitmetric
