#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "splitmetric/catalog.hpp"
#include "splitmetric/embedstore.hpp"
#include "splitmetric/error.hpp"
#include "splitmetric/linkeval.hpp"
#include "splitmetric/losses.hpp"
#include "splitmetric/parallel.hpp"
#include "splitmetric/splitgen.hpp"
#include "splitmetric/synthgen.hpp"
#include "splitmetric/toytrainer.hpp"

namespace py = pybind11;
using namespace splitmetric;

namespace {

// JSON crosses the boundary as text; the stdlib json module does the rest.
py::object to_py(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

nlohmann::json from_py(const py::object& o) {
  if (o.is_none()) return nlohmann::json::object();
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

using Assignment = std::map<std::string, std::string>;

SplitAssignment to_assignment(const Assignment& rows) {
  std::vector<SplitRow> v;
  v.reserve(rows.size());
  for (const auto& [id, split] : rows) v.push_back({id, split});
  return assignment_from_rows(v);
}

Assignment from_assignment(const SplitAssignment& a) {
  Assignment out;
  for (const auto& [id, split] : a.assignment) out.emplace(id, std::string(to_string(split)));
  return out;
}

ImageRecord record_from(const py::tuple& t) {
  if (t.size() < 2 || t.size() > 4) throw Error("record tuples are (image_id, branch_id[, chain_id[, content_key]])");
  ImageRecord r;
  r.image_id = t[0].cast<std::string>();
  r.branch_id = t[1].cast<std::string>();
  if (t.size() > 2 && !t[2].is_none()) r.chain_id = t[2].cast<std::string>();
  if (t.size() > 3 && !t[3].is_none()) r.content_key = t[3].cast<std::string>();
  return r;
}

std::optional<ClassBank> bank_from(const std::optional<RowMatrixD>& vectors, const std::vector<int>& labels,
                                   LossKind kind, const LossParams& params) {
  if (!vectors) return std::nullopt;
  ClassBank bank;
  bank.classes = labels;
  std::sort(bank.classes.begin(), bank.classes.end());
  bank.classes.erase(std::unique(bank.classes.begin(), bank.classes.end()), bank.classes.end());
  bank.per_class = kind == LossKind::kSoftTriple ? params.softtriple.centers_per_class : 1;
  bank.vectors = *vectors;
  return bank;
}

}  // namespace

PYBIND11_MODULE(_splitmetric, m) {
  m.doc() = "Split generation, metric-learning losses and link evaluation";
  py::register_exception<Error>(m, "SplitmetricError", PyExc_ValueError);

  m.def("set_thread_limit", &set_thread_limit, py::arg("threads"));

  py::class_<Catalog>(m, "Catalog")
      .def(py::init([](const std::vector<py::tuple>& rows) {
             std::vector<ImageRecord> records;
             for (const auto& t : rows) records.push_back(record_from(t));
             return Catalog(std::move(records));
           }),
           py::arg("records"))
      .def_static("load", &load_catalog, py::arg("path"))
      .def("save", [](const Catalog& c, const std::filesystem::path& p) { save_catalog(c, p); }, py::arg("path"))
      .def("__len__", &Catalog::size)
      .def("records",
           [](const Catalog& c) {
             std::vector<py::tuple> out;
             for (const auto& r : c.records()) {
               out.push_back(py::make_tuple(r.image_id, r.branch_id, r.chain_id, r.content_key));
             }
             return out;
           })
      .def("stats", [](const Catalog& c) { return to_py(to_json(stats(c))); })
      .def("dedup", [](const Catalog& c) {
        auto r = dedup_merge(c);
        return py::make_tuple(std::move(r.catalog), to_py(to_json(r.report)));
      });

  py::class_<EmbeddingMatrix>(m, "Embeddings")
      .def(py::init([](std::vector<std::string> ids, RowMatrixF data) {
             return EmbeddingMatrix(std::move(ids), std::move(data));
           }),
           py::arg("ids"), py::arg("data"))
      .def_static("read", &read_embeddings, py::arg("path"))
      .def("write", [](const EmbeddingMatrix& e, const std::filesystem::path& p) { write_embeddings(e, p); },
           py::arg("path"))
      .def_property_readonly("ids", &EmbeddingMatrix::ids)
      .def_property_readonly("data", [](const EmbeddingMatrix& e) { return RowMatrixF(e.data()); })
      .def("normalized", &l2_normalize)
      .def("select", &EmbeddingMatrix::select, py::arg("ids"))
      .def("__len__", &EmbeddingMatrix::rows);

  m.def(
      "generate_splits",
      [](const Catalog& c, std::uint64_t seed, double uu_frac, double su_frac, std::size_t t1, std::size_t t2,
         std::size_t ss_divisor) {
        SplitConfig cfg{seed, uu_frac, su_frac, t1, t2, ss_divisor};
        return from_assignment(generate_splits(c, cfg));
      },
      py::arg("catalog"), py::arg("seed") = 0, py::arg("uu_frac") = 0.1, py::arg("su_frac") = 0.1,
      py::arg("t1") = 25, py::arg("t2") = 3, py::arg("ss_divisor") = 5);

  m.def(
      "verify_splits",
      [](const Catalog& c, const Assignment& splits, std::size_t t2, std::optional<std::size_t> ss_divisor) {
        std::vector<SplitRow> rows;
        for (const auto& [id, s] : splits) rows.push_back({id, s});
        return to_py(to_json(verify_splits(c, rows, {t2, ss_divisor})));
      },
      py::arg("catalog"), py::arg("splits"), py::arg("t2") = 1, py::arg("ss_divisor") = py::none());

  m.def(
      "split_counts",
      [](const Catalog& c, const Assignment& splits) {
        return to_py(counts_to_json(split_report(c, to_assignment(splits))));
      },
      py::arg("catalog"), py::arg("splits"));

  m.def("auroc", [](const std::vector<double>& pos, const std::vector<double>& neg) { return auroc(pos, neg); },
        py::arg("pos"), py::arg("neg"));

  m.def(
      "cosine_knn",
      [](const EmbeddingMatrix& q, const EmbeddingMatrix& g, std::size_t k, bool exclude_self) {
        std::vector<std::vector<std::pair<std::size_t, double>>> out;
        for (const auto& row : cosine_knn(q, g, k, exclude_self).neighbors) {
          auto& o = out.emplace_back();
          for (const auto& n : row) o.emplace_back(n.index, n.similarity);
        }
        return out;
      },
      py::arg("queries"), py::arg("gallery"), py::arg("k"), py::arg("exclude_self") = false);

  m.def("loss_kinds", [] {
    std::vector<std::string> out;
    for (LossKind k : kAllLosses) out.emplace_back(to_string(k));
    return out;
  });

  m.def(
      "compute_loss",
      [](const std::string& kind_token, RowMatrixD embeddings, std::vector<int> labels, const py::object& params,
         std::optional<RowMatrixD> bank_vectors) {
        const LossKind kind = parse_loss_kind(kind_token);
        const LossParams p = loss_params_from_json(from_py(params));
        const auto bank = bank_from(bank_vectors, labels, kind, p);
        const auto r = compute_loss(kind, {std::move(embeddings), std::move(labels)}, p, bank ? &*bank : nullptr);
        return py::make_tuple(r.value, r.grad_embeddings, r.grad_aux);
      },
      py::arg("kind"), py::arg("embeddings"), py::arg("labels"), py::arg("params") = py::none(),
      py::arg("bank") = py::none(),
      "Returns (value, grad_embeddings, grad_bank or None). Bank rows follow sorted class labels.");

  m.def(
      "finite_diff_check",
      [](const std::string& kind_token, RowMatrixD embeddings, std::vector<int> labels, double eps,
         const py::object& params, std::optional<RowMatrixD> bank_vectors, std::uint64_t seed) {
        const LossKind kind = parse_loss_kind(kind_token);
        const LossParams p = loss_params_from_json(from_py(params));
        auto bank = bank_from(bank_vectors, labels, kind, p);
        return finite_diff_check(kind, {std::move(embeddings), std::move(labels)}, p, eps, std::move(bank), seed)
            .max_rel_error;
      },
      py::arg("kind"), py::arg("embeddings"), py::arg("labels"), py::arg("eps") = 1e-5,
      py::arg("params") = py::none(), py::arg("bank") = py::none(), py::arg("seed") = 0);

  m.def(
      "mine_hard_negatives",
      [](const EmbeddingMatrix& reference, const std::map<std::string, std::string>& labels, std::size_t k) {
        return to_py(to_json(mine_hard_negatives(reference, LinkOracle(labels), k)));
      },
      py::arg("reference"), py::arg("labels"), py::arg("k") = 10);

  m.def(
      "evaluate",
      [](const EmbeddingMatrix& e, const std::map<std::string, std::string>& labels, std::size_t repeats,
         std::uint64_t seed, const py::object& hard_pool) {
        EvalOptions opts;
        opts.repeats = repeats;
        opts.seed = seed;
        if (!hard_pool.is_none()) {
          opts.hard = true;
          opts.hard_pool = hard_pool_from_json(from_py(hard_pool));
        }
        return to_py(to_json(evaluate(e, LinkOracle(labels), opts)));
      },
      py::arg("embeddings"), py::arg("labels"), py::arg("repeats") = 10, py::arg("seed") = 0,
      py::arg("hard_pool") = py::none());

  m.def(
      "synth",
      [](const py::object& config) {
        auto corpus = generate(synth_config_from_json(from_py(config)));
        return py::make_tuple(std::move(corpus.catalog), std::move(corpus.features));
      },
      py::arg("config") = py::none(), "Returns (Catalog, Embeddings).");

  m.def(
      "train",
      [](const Catalog& c, const Assignment& splits, const EmbeddingMatrix& features, const py::object& config) {
        const auto cfg = train_config_from_json(from_py(config));
        const auto a = to_assignment(splits);
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c, a, features, cfg);
        }
        py::list history;
        for (const auto& h : r.history) {
          py::dict row;
          row["epoch"] = h.epoch;
          row["train_loss"] = h.train_loss;
          row["val_r_at_1"] = h.val_r_at_1;
          row["val_auc"] = h.val_auc;
          history.append(row);
        }
        py::dict out;
        out["weight"] = r.model.weight;
        out["bias"] = r.model.bias;
        out["best_epoch"] = r.best_epoch;
        out["history"] = history;
        out["embeddings"] = embed(r.model, features);
        return out;
      },
      py::arg("catalog"), py::arg("splits"), py::arg("features"), py::arg("config") = py::none(),
      "Trains the toy head; returns weights, history and embeddings of `features`.");
}
