// splitmetric command-line driver: synth, stats, dedup, split, verify,
// train, eval and mine. Files are the only state passed between stages;
// every command leaves a <command>.manifest.json next to its outputs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "splitmetric/catalog.hpp"
#include "splitmetric/embedstore.hpp"
#include "splitmetric/error.hpp"
#include "splitmetric/linkeval.hpp"
#include "splitmetric/parallel.hpp"
#include "splitmetric/splitgen.hpp"
#include "splitmetric/synthgen.hpp"
#include "splitmetric/toytrainer.hpp"

#ifndef SPLITMETRIC_VERSION
#define SPLITMETRIC_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace splitmetric;

namespace {

struct Manifest {
  std::string command;
  std::vector<std::string> argv;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  json outputs = json::object();
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void emit_manifest(const fs::path& out_dir, const Manifest& m, double seconds) {
  json j = {{"command", m.command},
            {"argv", m.argv},
            {"config", m.config},
            {"seeds", m.seeds},
            {"inputs", m.inputs},
            {"outputs", m.outputs},
            {"version", SPLITMETRIC_VERSION},
            {"wall_time_seconds", seconds}};
  write_json(out_dir / (m.command + ".manifest.json"), j);
}

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

// Catalog next to the split file, used when --catalog is not given.
fs::path catalog_for(const std::string& catalog, const std::string& splits) {
  if (!catalog.empty()) return catalog;
  return fs::path(splits).parent_path() / "catalog.csv";
}

std::vector<std::string> split_images(const std::string& splits_path, const std::string& split) {
  const auto name = parse_split_name(split);
  if (!name) throw CLI::ValidationError("--split", "unknown split name '" + split + "'");
  const auto assignment = assignment_from_rows(load_split_rows(splits_path));
  return images_in(assignment, *name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Seen/unseen split generation, metric-learning losses and image-linking evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", SPLITMETRIC_VERSION);

  unsigned threads = 0;
  app.add_option("--threads", threads, "worker cap (default: $SPLITMETRIC_THREADS or all cores)");

  Manifest manifest;
  manifest.argv.assign(argv, argv + argc);
  std::string out_dir = ".";
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out-dir", out_dir, "directory for outputs and the manifest");
    cmd->add_option("--seed", seed, "random seed");
  };

  // synth
  SynthConfig synth_cfg;
  auto* synth = app.add_subcommand("synth", "generate a synthetic catalog and input features");
  add_common(synth);
  synth->add_option("--n-chains", synth_cfg.n_chains);
  synth->add_option("--branches-per-chain", synth_cfg.branches_per_chain);
  synth->add_option("--images-per-branch", synth_cfg.images_per_branch);
  synth->add_option("--unknown-frac", synth_cfg.unknown_chain_fraction);
  synth->add_option("--d-in", synth_cfg.d_in);
  synth->add_option("--sigma-chain", synth_cfg.sigma_chain);
  synth->add_option("--sigma-branch", synth_cfg.sigma_branch);
  synth->add_option("--sigma-noise", synth_cfg.sigma_noise);

  // stats / dedup
  std::string catalog_path;
  auto* stats_cmd = app.add_subcommand("stats", "image, branch and chain counts of a catalog");
  add_common(stats_cmd);
  stats_cmd->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);

  auto* dedup = app.add_subcommand("dedup", "merge branches that share duplicate images");
  add_common(dedup);
  dedup->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);

  // split
  SplitConfig split_cfg;
  auto* split = app.add_subcommand("split", "generate train/val/test splits");
  add_common(split);
  split->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  split->add_option("--uu-frac", split_cfg.uu_chain_fraction);
  split->add_option("--su-frac", split_cfg.su_branch_fraction);
  split->add_option("--t1", split_cfg.t1);
  split->add_option("--t2", split_cfg.t2);
  split->add_option("--ss-divisor", split_cfg.ss_divisor);

  // verify
  std::string splits_path;
  VerifyOptions verify_opts;
  std::optional<std::size_t> verify_divisor;
  auto* verify = app.add_subcommand("verify", "check a split file against the split constraints");
  add_common(verify);
  verify->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  verify->add_option("--splits", splits_path)->required()->check(CLI::ExistingFile);
  verify->add_option("--t2", verify_opts.t2, "minimum test_ss/val_ss images per branch");
  verify->add_option("--ss-divisor", verify_divisor, "also bound test_ss draws by N/divisor");

  // train
  std::string features_path, config_path, loss_token;
  std::optional<double> lr;
  std::optional<std::size_t> epochs, d_out;
  auto* train_cmd = app.add_subcommand("train", "train the embedding head");
  add_common(train_cmd);
  train_cmd->add_option("--catalog", catalog_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--splits", splits_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--features", features_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--config", config_path, "TrainConfig JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--loss", loss_token)
      ->check(CLI::IsMember({"triplet", "circle", "multisim", "supcon", "proxynca", "softtriple"}));
  train_cmd->add_option("--lr", lr);
  train_cmd->add_option("--epochs", epochs);
  train_cmd->add_option("--d-out", d_out);

  // eval
  std::string embeddings_path, model_path, split_token, pool_path;
  std::size_t repeats = 10;
  auto* eval = app.add_subcommand("eval", "R@1, AUC and AUC_H on one split");
  add_common(eval);
  auto* emb_opt = eval->add_option("--embeddings", embeddings_path)->check(CLI::ExistingFile);
  auto* model_opt = eval->add_option("--model", model_path, "embed --features with this head")
                        ->check(CLI::ExistingFile);
  eval->add_option("--features", features_path)->check(CLI::ExistingFile);
  emb_opt->excludes(model_opt);
  eval->add_option("--splits", splits_path)->required()->check(CLI::ExistingFile);
  eval->add_option("--split", split_token)->required();
  eval->add_option("--catalog", catalog_path, "default: catalog.csv beside --splits");
  eval->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  eval->add_option("--hard-pool", pool_path, "hard-negative pool JSON from `mine`")
      ->check(CLI::ExistingFile);

  // mine
  std::size_t pool_k = 10;
  auto* mine = app.add_subcommand("mine", "hard-negative pool from reference embeddings");
  add_common(mine);
  mine->add_option("--embeddings", embeddings_path, "reference embeddings")
      ->required()
      ->check(CLI::ExistingFile);
  mine->add_option("--splits", splits_path)->required()->check(CLI::ExistingFile);
  mine->add_option("--split", split_token)->required();
  mine->add_option("--catalog", catalog_path, "default: catalog.csv beside --splits");
  mine->add_option("--k", pool_k)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (threads > 0) set_thread_limit(threads);
    const fs::path dir = prepare_dir(out_dir);
    manifest.seeds["seed"] = seed;
    manifest.config["threads"] = thread_limit();

    if (*synth) {
      manifest.command = "synth";
      synth_cfg.seed = seed;
      const auto corpus = generate(synth_cfg);
      save_catalog(corpus.catalog, dir / "catalog.csv");
      write_embeddings(corpus.features, dir / "features.emb");
      manifest.config["synth"] = to_json(synth_cfg);
      manifest.outputs = {{"catalog", (dir / "catalog.csv").string()},
                          {"features", (dir / "features.emb").string()},
                          {"ids", ids_path_for(dir / "features.emb").string()}};
      std::cout << corpus.catalog.size() << " images written to " << dir.string() << '\n';

    } else if (*stats_cmd) {
      manifest.command = "stats";
      const auto st = to_json(stats(load_catalog(catalog_path)));
      write_json(dir / "stats.json", st);
      manifest.inputs["catalog"] = catalog_path;
      manifest.outputs["stats"] = (dir / "stats.json").string();
      std::cout << json{{"images", st["images"]},
                        {"branches", st["branches"]},
                        {"chains", st["chains"]}}
                       .dump()
                << '\n';

    } else if (*dedup) {
      manifest.command = "dedup";
      const auto result = dedup_merge(load_catalog(catalog_path));
      save_catalog(result.catalog, dir / "catalog.dedup.csv");
      write_json(dir / "dedup_report.json", to_json(result.report));
      manifest.inputs["catalog"] = catalog_path;
      manifest.outputs = {{"catalog", (dir / "catalog.dedup.csv").string()},
                          {"report", (dir / "dedup_report.json").string()}};
      std::cout << result.report.merged_groups.size() << " merged, "
                << result.report.dropped.size() << " dropped, " << result.report.skipped.size()
                << " skipped\n";
      if (!result.report.skipped.empty()) {
        std::cerr << "warning: " << result.report.skipped.size()
                  << " merge(s) skipped due to conflicting chains\n";
      }

    } else if (*split) {
      manifest.command = "split";
      split_cfg.seed = seed;
      const auto catalog = load_catalog(catalog_path);
      const auto assignment = generate_splits(catalog, split_cfg);
      save_splits(catalog, assignment, dir / "splits.csv");
      auto report = to_json(verify_splits(catalog, assignment));
      report["config"] = to_json(split_cfg);
      write_json(dir / "report.json", report);
      manifest.config["split"] = to_json(split_cfg);
      manifest.inputs["catalog"] = catalog_path;
      manifest.outputs = {{"splits", (dir / "splits.csv").string()},
                          {"report", (dir / "report.json").string()}};
      std::cout << report["counts"].dump() << '\n';

    } else if (*verify) {
      manifest.command = "verify";
      verify_opts.ss_divisor = verify_divisor;
      const auto catalog = load_catalog(catalog_path);
      const auto report = verify_splits(catalog, load_split_rows(splits_path), verify_opts);
      write_json(dir / "verify.json", to_json(report));
      manifest.config["t2"] = verify_opts.t2;
      if (verify_divisor) manifest.config["ss_divisor"] = *verify_divisor;
      manifest.inputs = {{"catalog", catalog_path}, {"splits", splits_path}};
      manifest.outputs["report"] = (dir / "verify.json").string();
      for (const auto& c : report.checks) {
        std::cout << (c.passed ? "pass " : "FAIL ") << c.name;
        if (!c.passed) {
          std::cout << ':';
          for (std::size_t i = 0; i < c.offending.size() && i < 10; ++i) {
            std::cout << ' ' << c.offending[i];
          }
          if (c.offending.size() > 10) std::cout << " ...";
        }
        std::cout << '\n';
      }
      if (!report.all_passed()) {
        emit_manifest(dir, manifest, 0.0);
        return 1;
      }

    } else if (*train_cmd) {
      manifest.command = "train";
      TrainConfig cfg = config_path.empty() ? TrainConfig{} : train_config_from_json(read_json(config_path));
      cfg.seed = seed;
      if (!loss_token.empty()) cfg.loss = parse_loss_kind(loss_token);
      if (lr) cfg.learning_rate = *lr;
      if (epochs) cfg.epochs = *epochs;
      if (d_out) cfg.d_out = *d_out;
      cfg.validate();
      const auto catalog = load_catalog(catalog_path);
      const auto assignment = assignment_from_rows(load_split_rows(splits_path));
      const auto features = read_embeddings(features_path);
      const auto result = train(catalog, assignment, features, cfg);
      save_model(result.model, dir / "model.toy");
      std::ofstream hist(dir / "history.csv");
      write_history(result.history, hist);
      write_embeddings(embed(result.model, features), dir / "embeddings.emb");
      write_json(dir / "train_config.json", to_json(cfg));
      manifest.config["train"] = to_json(cfg);
      manifest.inputs = {{"catalog", catalog_path}, {"splits", splits_path}, {"features", features_path}};
      manifest.outputs = {{"model", (dir / "model.toy").string()},
                          {"history", (dir / "history.csv").string()},
                          {"embeddings", (dir / "embeddings.emb").string()},
                          {"config", (dir / "train_config.json").string()}};
      manifest.config["best_epoch"] = result.best_epoch;
      std::cout << "best epoch " << result.best_epoch << ", final loss "
                << result.history.back().train_loss << '\n';

    } else if (*eval) {
      manifest.command = "eval";
      EmbeddingMatrix embeddings;
      if (!embeddings_path.empty()) {
        embeddings = read_embeddings(embeddings_path);
        manifest.inputs["embeddings"] = embeddings_path;
      } else if (!model_path.empty() && !features_path.empty()) {
        embeddings = embed(load_model(model_path), read_embeddings(features_path));
        manifest.inputs["model"] = model_path;
        manifest.inputs["features"] = features_path;
      } else {
        throw CLI::ValidationError("--embeddings", "need --embeddings or --model with --features");
      }
      const auto cat_path = catalog_for(catalog_path, splits_path);
      const auto oracle = LinkOracle::from_catalog(load_catalog(cat_path));
      auto subset = embeddings.select(split_images(splits_path, split_token));
      if (!subset.normalized()) subset = l2_normalize(subset);

      EvalOptions opts;
      opts.repeats = repeats;
      opts.seed = seed;
      if (!pool_path.empty()) {
        opts.hard = true;
        opts.hard_pool = hard_pool_from_json(read_json(pool_path));
        manifest.inputs["hard_pool"] = pool_path;
      }
      const auto report = evaluate(subset, oracle, opts);
      auto out = to_json(report);
      out["split"] = split_token;
      write_json(dir / ("metrics_" + split_token + ".json"), out);
      manifest.config = {{"split", split_token}, {"repeats", repeats}, {"threads", thread_limit()}};
      manifest.inputs["splits"] = splits_path;
      manifest.inputs["catalog"] = cat_path.string();
      manifest.outputs["metrics"] = (dir / ("metrics_" + split_token + ".json")).string();

      std::printf("%-9s R@1 %6.2f  AUC %s", split_token.c_str(), 100.0 * report.r_at_1,
                  format_percent(report.auc).c_str());
      if (report.auc_h) std::printf("  AUC_H %s", format_percent(*report.auc_h).c_str());
      std::printf("\n");

    } else if (*mine) {
      manifest.command = "mine";
      const auto cat_path = catalog_for(catalog_path, splits_path);
      const auto oracle = LinkOracle::from_catalog(load_catalog(cat_path));
      const auto reference = read_embeddings(embeddings_path).select(split_images(splits_path, split_token));
      const auto pool = mine_hard_negatives(reference, oracle, pool_k);
      const auto pool_file = dir / ("hard_pool_" + split_token + ".json");
      write_json(pool_file, to_json(pool));
      manifest.config = {{"split", split_token}, {"k", pool_k}, {"threads", thread_limit()}};
      manifest.inputs = {{"embeddings", embeddings_path}, {"splits", splits_path}, {"catalog", cat_path.string()}};
      manifest.outputs["hard_pool"] = pool_file.string();
      std::cout << pool.negatives.size() << " anchors pooled\n";
    }

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    emit_manifest(dir, manifest, secs);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
