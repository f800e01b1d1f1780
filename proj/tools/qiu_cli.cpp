// qiu: build indexes, classify query logs into the cache, serve lookups,
// and run the evaluation harness.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "json.hpp"

#include "qiu/cache_store.hpp"
#include "qiu/config.hpp"
#include "qiu/eval.hpp"
#include "qiu/pipeline.hpp"
#include "qiu/service.hpp"
#include "qiu/stack.hpp"
#include "qiu/synthetic.hpp"

namespace fs = std::filesystem;
using namespace qiu;

namespace {

const std::vector<std::string> kPipelineSections = {"catalog.",  "encoder.",  "retrieval.",     "reasoner.",
                                                    "search.",   "ablation.", "disambiguation."};

// Flag values keyed by config key; only flags actually given are applied.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app, const std::vector<std::string>& prefixes) {
    app->add_option("--config", config_file, "INI config file; flags override its values")->check(CLI::ExistingFile);
    for (const auto& k : config_keys()) {
      const std::string key = k.key;
      bool wanted = false;
      for (const auto& p : prefixes) wanted = wanted || key.rfind(p, 0) == 0;
      if (!wanted) continue;
      std::string help = std::string(k.help) + " [" + key + "]";
      if (*k.fallback) help += " (default: " + std::string(k.fallback) + ")";
      options[key] = app->add_option(k.flag, values[key], help);
    }
  }

  AppConfig resolve() const {
    ConfigTree tree = config_file.empty() ? ConfigTree() : load_config_file(config_file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) set_config_value(tree, key, values.at(key));
    return app_config(tree);
  }
};

std::vector<std::string> with(std::vector<std::string> base, std::initializer_list<std::string> extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

void print_rejected(const std::vector<RecordError>& rejected) {
  for (const auto& r : rejected) std::cerr << "catalog line " << r.line << ": " << r.message << "\n";
}

int cmd_build_index(const ConfigFlags& flags, const std::string& out_path) {
  const AppConfig c = flags.resolve();
  const Taxonomy taxonomy = load_taxonomy_file(c.taxonomy);
  auto loaded = load_catalog_file(c.catalog, taxonomy, c.store_version);
  print_rejected(loaded.rejected);
  auto encoder = make_encoder(c);
  const auto index = build_index(*loaded.store, *encoder);
  std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write index: " + out_path);
  save_index(index, out);
  out.close();
  if (!out) throw Error("failed writing index: " + out_path);
  std::cout << nlohmann::json{{"index", out_path},
                              {"entities", loaded.store->size()},
                              {"entries", index.size()},
                              {"dimension", index.dimension()},
                              {"encoder", index.encoder_identity()},
                              {"store_version", loaded.store->version()},
                              {"rejected", loaded.rejected.size()}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_batch(const ConfigFlags& flags, const std::string& queries_path, bool fresh) {
  const AppConfig c = flags.resolve();
  if (c.cache.empty()) throw ConfigError("batch needs --cache");
  Stack s = build_stack(c);
  print_rejected(s.rejected);
  const std::string pv = pipeline_version(s.deps, s.config);
  auto cache = FileCacheStore::open(c.cache, CacheHeader{pv, s.deps.store->version()}, fresh);

  std::ifstream queries = open_input(queries_path, "queries");
  std::ofstream evidence;
  BatchOptions options;
  options.parallelism = c.parallelism;
  options.resume = c.resume;
  if (!c.evidence_log.empty()) {
    evidence.open(c.evidence_log, std::ios::app);
    if (!evidence) throw Error("cannot open evidence log: " + c.evidence_log.string());
    options.evidence_log = &evidence;
  }
  const BatchReport report = batch_run(queries, s.deps, s.config, *cache, options);
  std::cout << report.to_json().dump(2) << "\n";
  return report.aborted ? 1 : 0;
}

int cmd_classify(const ConfigFlags& flags, const std::vector<std::string>& queries) {
  const AppConfig c = flags.resolve();
  Stack s = build_stack(c);
  print_rejected(s.rejected);
  int rc = 0;
  for (const auto& q : queries) {
    try {
      const auto t = classify_traced(q, s.deps, s.config);
      std::cout << nlohmann::json{{"query_key", t.query.normalized},
                                  {"final_vertical", t.resolved.final_vertical},
                                  {"primary", t.resolved.tuple.primary},
                                  {"secondary", t.resolved.tuple.secondary ? nlohmann::json(*t.resolved.tuple.secondary)
                                                                           : nlohmann::json()},
                                  {"rule_fired", to_string(t.resolved.rule_fired)},
                                  {"whitelist_version", t.resolved.whitelist_version},
                                  {"tool_calls", t.tool_calls},
                                  {"evidence", evidence_to_json(t.evidence)}}
                       .dump()
                << "\n";
    } catch (const ClassificationError& e) {
      std::cerr << q << ": " << e.error_class() << ": " << e.what() << "\n";
      rc = 1;
    }
  }
  return rc;
}

int cmd_serve(const ConfigFlags& flags) {
  const AppConfig c = flags.resolve();
  if (c.cache.empty()) throw ConfigError("serve needs --cache");
  ServeConfig sc;
  sc.host = c.host;
  sc.port = c.port;
  sc.miss_policy = parse_miss_policy(c.miss_policy);
  sc.default_vertical = c.miss_vertical;
  sc.cache_path = c.cache;
  sc.whitelist_path = c.whitelist;
  if (const char* tok = std::getenv(c.admin_token_env.c_str())) sc.admin_token = tok;

  // Block termination signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  IntentService service(sc, load_taxonomy_file(c.taxonomy));
  const int port = service.start();
  auto h = service.healthz();
  h["listening"] = sc.host + ":" + std::to_string(port);
  std::cout << h.dump() << std::endl;
  int sig = 0;
  sigwait(&signals, &sig);
  service.stop();
  return 0;
}

int cmd_eval(const ConfigFlags& flags, const std::string& benchmark_path, const std::string& json_out, bool ablate) {
  const AppConfig c = flags.resolve();
  Stack s = build_stack(c);
  print_rejected(s.rejected);
  auto in = open_input(benchmark_path, "benchmark");
  const auto cases = load_benchmark(in, s.deps.store->taxonomy());
  const EvalReport report = ablate ? run_ablation(cases, s.deps, s.config) : evaluate(cases, s.deps, s.config);
  report.render(std::cout);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw Error("cannot write report: " + json_out);
    out << report.to_json().dump(2) << "\n";
  }
  return 0;
}

int cmd_derive(const std::string& interactions, double threshold, std::size_t min_support,
               const std::string& taxonomy_path, const std::string& out_path) {
  std::optional<Taxonomy> taxonomy;
  if (!taxonomy_path.empty()) taxonomy = load_taxonomy_file(taxonomy_path);
  auto in = open_input(interactions, "interactions");
  const auto d = derive_whitelist(in, threshold, min_support, taxonomy ? &*taxonomy : nullptr);
  for (const auto& r : d.rejected) std::cerr << "interactions line " << r.line << ": " << r.message << "\n";
  const std::string doc = d.whitelist.to_json().dump(2);
  if (out_path.empty()) {
    std::cout << doc << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) throw Error("cannot write whitelist: " + out_path);
    out << doc << "\n";
    std::cout << nlohmann::json{{"whitelist", out_path},
                                {"version", d.whitelist.version()},
                                {"pairs", d.whitelist.size()},
                                {"rejected", d.rejected.size()}}
                     .dump(2)
              << "\n";
  }
  return 0;
}

int cmd_export(const std::string& cache_path, const std::string& out_path, bool timestamps) {
  auto cache = FileCacheStore::open_read_only(cache_path);
  if (out_path.empty()) {
    export_jsonl(*cache, std::cout, !timestamps);
    return 0;
  }
  std::ofstream out(out_path);
  if (!out) throw Error("cannot write export: " + out_path);
  export_jsonl(*cache, out, !timestamps);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded query intent classification: index, batch, serve, evaluate."};
  app.require_subcommand(1);

  ConfigFlags index_flags, batch_flags, classify_flags, serve_flags, eval_flags, ablate_flags;

  auto* build = app.add_subcommand("build-index", "Embed every catalog surface and write the index file");
  index_flags.attach(build, {"catalog.catalog", "catalog.taxonomy", "catalog.store_version", "encoder."});
  std::string index_out;
  build->add_option("--out", index_out, "index file to write")->required();

  auto* batch = app.add_subcommand("batch", "Classify a query log (one query per line) into the cache");
  batch_flags.attach(batch, with(kPipelineSections, {"cache.", "batch."}));
  std::string queries_path;
  bool fresh = false;
  batch->add_option("--queries", queries_path, "query file, one raw query per line")->required();
  batch->add_flag("--fresh", fresh, "start a new cache file instead of appending");

  auto* classify = app.add_subcommand("classify", "Classify queries directly and print each trace");
  classify_flags.attach(classify, kPipelineSections);
  std::vector<std::string> direct_queries;
  classify->add_option("query", direct_queries, "raw query text")->required();

  auto* serve = app.add_subcommand("serve", "Serve cached intents over HTTP");
  serve_flags.attach(serve, {"catalog.taxonomy", "disambiguation.", "cache.", "serve.", "reasoner.default_vertical"});

  auto* eval = app.add_subcommand("eval", "Accuracy of the configured pipeline on a benchmark");
  eval_flags.attach(eval, kPipelineSections);
  std::string eval_bench, eval_json;
  eval->add_option("--benchmark", eval_bench, "benchmark file (JSON lines)")->required();
  eval->add_option("--json-out", eval_json, "also write the report as JSON");

  auto* ablate = app.add_subcommand("ablate", "Four-arm ablation: baseline, +catalog, +agentic, full");
  ablate_flags.attach(ablate, kPipelineSections);
  std::string ablate_bench, ablate_json;
  ablate->add_option("--benchmark", ablate_bench, "benchmark file (JSON lines)")->required();
  ablate->add_option("--json-out", ablate_json, "also write the report as JSON");

  auto* derive = app.add_subcommand("derive-whitelist", "Build override pairs from labeled conflict outcomes");
  std::string interactions, derive_taxonomy, derive_out;
  double threshold = 0.8;
  std::size_t min_support = 20;
  derive->add_option("--interactions", interactions, "outcome file (JSON lines)")->required();
  derive->add_option("--threshold", threshold, "minimum secondary win rate, in (0.5, 1]")->capture_default_str();
  derive->add_option("--min-support", min_support, "minimum observations per pair")->capture_default_str();
  derive->add_option("--taxonomy", derive_taxonomy, "validate verticals against this taxonomy");
  derive->add_option("--out", derive_out, "whitelist file to write; stdout when omitted");

  auto* gen = app.add_subcommand("gen-synthetic", "Write the synthetic ablation benchmark and its fixtures");
  std::uint64_t seed = 7;
  std::size_t per_family = 80;
  std::string gen_dir;
  gen->add_option("--seed", seed, "generator seed")->capture_default_str();
  gen->add_option("--per-family", per_family, "cases per family")->capture_default_str();
  gen->add_option("--out-dir", gen_dir, "output directory")->required();

  auto* exp = app.add_subcommand("export-cache", "Print cache records as sorted JSON lines");
  std::string export_cache, export_out;
  bool timestamps = false;
  exp->add_option("--cache", export_cache, "cache file")->required();
  exp->add_option("--out", export_out, "output file; stdout when omitted");
  exp->add_flag("--with-timestamps", timestamps, "include created_at_ms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*build) return cmd_build_index(index_flags, index_out);
    if (*batch) return cmd_batch(batch_flags, queries_path, fresh);
    if (*classify) return cmd_classify(classify_flags, direct_queries);
    if (*serve) return cmd_serve(serve_flags);
    if (*eval) return cmd_eval(eval_flags, eval_bench, eval_json, false);
    if (*ablate) return cmd_eval(ablate_flags, ablate_bench, ablate_json, true);
    if (*derive) return cmd_derive(interactions, threshold, min_support, derive_taxonomy, derive_out);
    if (*gen) {
      const auto suite = generate_synthetic(seed, per_family);
      suite.write(gen_dir);
      std::cout << nlohmann::json{{"out_dir", gen_dir}, {"seed", seed}, {"cases", suite.cases.size()},
                                  {"entities", suite.catalog.size()}, {"families", suite.family_sizes}}
                       .dump(2)
                << "\n";
      return 0;
    }
    if (*exp) return cmd_export(export_cache, export_out, timestamps);
  } catch (const LoadError& e) {
    for (const auto& d : e.diagnostics()) std::cerr << "error: " << d << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
