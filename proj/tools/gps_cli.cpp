// gps: command-line front end.
//
//   gps gen       --out DIR [--config F] [--seed N] [--force]
//   gps graph     --data DIR [--out DIR] [--config F]
//   gps gradcheck [--config F] [--seed N] [--tolerance T] [--corrupt TENSOR] [--out DIR]
//   gps train     --out DIR [--data DIR] [--config F] [--seed N] [--force]
//   gps eval      --checkpoint F --out DIR [--data DIR] [--feature bnn|concat|both]
//   gps export    --checkpoint F --out DIR [--data DIR] [--feature bnn|concat]
//
// Exit codes: 0 success, 1 check failure, 2 usage error, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gps/gps.hpp"

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string feature = "concat";
  double tolerance = 1e-5;
  std::string corrupt;
  std::string data;
  std::string checkpoint;
  std::string distance = "euclidean";
};

gps::RunConfig resolve_config(const Flags& f) {
  nlohmann::json j = nlohmann::json::object();
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw gps::IoError("config file not found: " + f.config);
    try {
      j = nlohmann::json::parse(gps::read_file(f.config));
    } catch (const nlohmann::json::parse_error& e) {
      throw gps::ConfigError("config " + f.config + ": " + e.what());
    }
  }
  if (f.seed) j["seed"] = *f.seed;
  return gps::parse_config(j);
}

void write_output(const fs::path& path, const std::string& bytes, bool force) {
  if (fs::exists(path) && !force) throw gps::IoError("output exists (use --force): " + path.string());
  gps::write_file(path, bytes);
}

gps::Dataset resolve_dataset(const Flags& f, const gps::RunConfig& cfg) {
  if (!f.data.empty()) return gps::load_dataset(f.data);
  return gps::dataset_from_synth(gps::generate(cfg.data));
}

int cmd_gen(const Flags& f) {
  if (f.out.empty()) throw gps::ConfigError("gen requires --out");
  const auto cfg = resolve_config(f);
  const auto ds = gps::generate(cfg.data);
  const auto manifest = gps::write_dataset(f.out, ds, f.force);
  std::cout << "wrote " << manifest["files"].size() << " files for " << ds.annotations.size()
            << " images (" << cfg.data.identities << " identities) to " << f.out << "\n";
  return 0;
}

int cmd_graph(const Flags& f) {
  if (f.data.empty()) throw gps::ConfigError("graph requires --data");
  const auto cfg = resolve_config(f);
  const fs::path dir = f.data;
  const auto schema = gps::load_schema(dir / gps::dataset_files::schema);
  const auto ann = gps::load_annotations(dir / gps::dataset_files::annotations, schema.attributes);
  const auto stats = gps::compute_stats(ann);
  const auto graph = gps::build_graph(schema, stats, cfg.model.degree);
  for (Eigen::Index i = 0; i < stats.occurrence.size(); ++i)
    if (stats.occurrence(i) == 0)
      std::cerr << "warning: attribute \"" << schema.attributes[std::size_t(i)]
                << "\" never occurs; its AA row is zero\n";
  std::fprintf(stderr, "N_A=%ld N_P=%ld N_G=%ld images=%zu degree=%s\n", long(graph.num_attributes()),
              long(graph.blocks.num_parts()), long(graph.num_nodes()), ann.size(),
              gps::to_string(graph.degree_mode));
  std::fprintf(stderr, "|AA|=%.6f |PP|=%.6f |PA|=%.6f |AP|=%.6f |M_hat|=%.6f\n", graph.blocks.aa.norm(),
              graph.blocks.pp.norm(), graph.blocks.pa.norm(), graph.blocks.ap.norm(),
              graph.normalized.norm());
  const auto doc = gps::graph_to_json(graph).dump(2) + "\n";
  if (f.out.empty()) {
    std::cout << doc;
  } else {
    write_output(fs::path(f.out) / "graph.json", doc, f.force);
  }
  return 0;
}

int cmd_gradcheck(const Flags& f) {
  const auto cfg = resolve_config(f);
  if (cfg.optim.precision != gps::Precision::f64)
    throw gps::ConfigError("gradcheck requires optim.precision = f64");
  const auto data = gps::dataset_from_synth(gps::generate(cfg.data));
  const auto split = gps::split_dataset(data, cfg.split);
  auto model = gps::build_model<double>(cfg, data, split);
  gps::PkSampler sampler(split.train_class, cfg.optim.batch, gps::substream(cfg.seed, "sampler"));
  std::vector<std::size_t> idx;
  std::vector<int> cls;
  for (auto p : sampler.next()) {
    idx.push_back(split.train[p]);
    cls.push_back(split.train_class[p]);
  }
  const auto batch = gps::make_batch<double>(data, idx, cls);
  gps::GradCheckOptions opt;
  opt.tolerance = f.tolerance;
  opt.corrupt = f.corrupt;
  opt.seed = cfg.seed;
  const auto rep = gps::finite_diff_check(model, batch, cfg.loss.weights, cfg.loss.triplet, opt);

  nlohmann::ordered_json j;
  j["step"] = rep.step;
  j["tolerance"] = rep.tolerance;
  j["passed"] = rep.passed;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& t : rep.tensors) {
    std::printf("%-4s %-22s max_rel_err=%.3e checked=%zu/%zu kinks_skipped=%zu\n",
                t.passed ? "ok" : "FAIL", t.name.c_str(), t.max_rel_error, t.checked, t.entries,
                t.skipped_kinks);
    arr.push_back({{"name", t.name},
                   {"entries", t.entries},
                   {"checked", t.checked},
                   {"skipped_kinks", t.skipped_kinks},
                   {"max_rel_error", t.max_rel_error},
                   {"passed", t.passed}});
  }
  j["tensors"] = arr;
  std::printf("gradcheck %s (tolerance %.1e)\n", rep.passed ? "PASSED" : "FAILED", rep.tolerance);
  if (!f.out.empty()) write_output(fs::path(f.out) / "gradcheck.json", j.dump(2) + "\n", f.force);
  return rep.passed ? 0 : 1;
}

template <typename S>
void train_and_save(const Flags& f, const gps::RunConfig& cfg, const gps::Dataset& data) {
  auto res = gps::train<S>(cfg, data);
  const fs::path out = f.out;
  write_output(out / "checkpoint.gpsc",
               gps::encode_checkpoint(gps::make_checkpoint(res.model, data.schema.hash())), f.force);
  write_output(out / "losses.csv", gps::format_loss_log(res.log), f.force);
  write_output(out / "config.json", gps::config_to_json(cfg).dump(2) + "\n", f.force);
  if (!res.log.empty())
    std::printf("trained %d steps: total loss %.6f -> %.6f\n", cfg.optim.steps, res.log.front().total,
                res.log.back().total);
  else
    std::printf("trained 0 steps: checkpoint holds the initialization\n");
}

int cmd_train(const Flags& f) {
  if (f.out.empty()) throw gps::ConfigError("train requires --out");
  const auto cfg = resolve_config(f);
  const auto data = resolve_dataset(f, cfg);
  if (cfg.optim.precision == gps::Precision::f64)
    train_and_save<double>(f, cfg, data);
  else
    train_and_save<float>(f, cfg, data);
  return 0;
}

template <typename S>
int eval_with(const Flags& f, const gps::RunConfig& cfg, const gps::Dataset& data) {
  const auto ckpt = gps::load_checkpoint(f.checkpoint);
  const auto model = gps::model_from_checkpoint<S>(ckpt, cfg.model, data.schema);
  const auto split = gps::split_dataset(data, cfg.split);
  std::vector<std::string> kinds;
  if (f.feature == "both")
    kinds = {"bnn", "concat"};
  else
    kinds = {f.feature};
  for (const auto& k : kinds) {
    const auto rep = gps::evaluate_model(model, data, split.test, gps::parse_feature(k),
                                         gps::parse_distance(f.distance));
    const fs::path out = f.out;
    write_output(out / ("report_" + k + ".json"), gps::report_to_json(rep).dump(2) + "\n", f.force);
    write_output(out / ("report_" + k + ".csv"), gps::report_csv(rep), f.force);
    std::printf("[%s] mAP=%.4f R1=%.4f R5=%.4f R10=%.4f attr_acc=%.4f (%zu queries, %zu skipped)\n",
                k.c_str(), rep.run.map, rep.run.rank_k(1), rep.run.rank_k(5), rep.run.rank_k(10),
                rep.attribute_accuracy, rep.run.valid_queries, rep.run.skipped_queries);
  }
  return 0;
}

int cmd_eval(const Flags& f) {
  if (f.checkpoint.empty() || f.out.empty()) throw gps::ConfigError("eval requires --checkpoint and --out");
  if (f.feature != "both") gps::parse_feature(f.feature);
  const auto cfg = resolve_config(f);
  const auto data = resolve_dataset(f, cfg);
  return cfg.optim.precision == gps::Precision::f64 ? eval_with<double>(f, cfg, data)
                                                    : eval_with<float>(f, cfg, data);
}

int cmd_export(const Flags& f) {
  if (f.checkpoint.empty() || f.out.empty()) throw gps::ConfigError("export requires --checkpoint and --out");
  const auto kind = gps::parse_feature(f.feature);
  const auto cfg = resolve_config(f);
  const auto data = resolve_dataset(f, cfg);
  const auto model = gps::model_from_checkpoint<double>(gps::load_checkpoint(f.checkpoint), cfg.model,
                                                        data.schema);
  std::vector<gps::Signature> sigs;
  for (std::size_t i = 0; i < data.size(); ++i)
    sigs.push_back(gps::extract_signature(model, data.pooled[i], data.annotations.records[i], kind));
  const auto path = fs::path(f.out) / ("signatures_" + f.feature + ".gpss");
  write_output(path, gps::encode_signatures(sigs), f.force);
  std::printf("wrote %zu signatures of dim %ld to %s\n", sigs.size(),
              long(sigs.empty() ? 0 : sigs[0].vector.size()), path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-based person signature: data, graph, training and retrieval evaluation"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&f](CLI::App* sub) {
    sub->add_option("--config", f.config, "run configuration JSON");
    sub->add_option("--seed", f.seed, "master seed (overrides the config)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("--force", f.force, "overwrite existing outputs");
  };
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset directory");
  common(gen);
  auto* graph = app.add_subcommand("graph", "build and export the correlation graph of a dataset");
  common(graph);
  graph->add_option("--data", f.data, "dataset directory")->required();
  auto* grad = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  common(grad);
  grad->add_option("--tolerance", f.tolerance, "max relative error");
  grad->add_option("--corrupt", f.corrupt, "debug: scale this tensor's analytic gradient by 1.01");
  auto* train = app.add_subcommand("train", "train a model and write checkpoint + loss log");
  common(train);
  train->add_option("--data", f.data, "dataset directory (default: generate from config)");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
  common(eval);
  eval->add_option("--data", f.data, "dataset directory (default: generate from config)");
  eval->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  eval->add_option("--feature", f.feature, "retrieval feature: bnn|concat|both");
  eval->add_option("--distance", f.distance, "euclidean|cosine");
  auto* exp = app.add_subcommand("export", "write retrieval signatures for every image");
  common(exp);
  exp->add_option("--data", f.data, "dataset directory (default: generate from config)");
  exp->add_option("--checkpoint", f.checkpoint, "checkpoint file")->required();
  exp->add_option("--feature", f.feature, "retrieval feature: bnn|concat");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen(f);
    if (*graph) return cmd_graph(f);
    if (*grad) return cmd_gradcheck(f);
    if (*train) return cmd_train(f);
    if (*eval) return cmd_eval(f);
    if (*exp) return cmd_export(f);
  } catch (const gps::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
