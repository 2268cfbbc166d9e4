// Command-line driver: one subcommand per pipeline stage.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "piisteer/analysis.hpp"
#include "piisteer/apps.hpp"
#include "piisteer/checkpoint.hpp"
#include "piisteer/corpus.hpp"
#include "piisteer/directions.hpp"
#include "piisteer/extraction.hpp"
#include "piisteer/rng.hpp"
#include "piisteer/selfgen.hpp"
#include "piisteer/train.hpp"

#ifndef PIISTEER_VERSION
#define PIISTEER_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace piisteer;

namespace {

Json default_config() {
  Json c;
  c["master_seed"] = 1;
  c["class"] = "email";
  c["corpus"] = corpus_config_to_json(CorpusConfig{});
  c["model"] = config_to_json(ModelConfig{});
  c["training"] = training_config_to_json(TrainingConfig{});
  c["training"]["seed"] = nullptr;  // derived from the master seed
  c["selfgen"] = {{"strategy", "bos"}, {"n", 20000}, {"length", 128}, {"top_k", 40}};
  c["prompts"] = {{"candidate_budget", 96}, {"samples_per_candidate", 32}, {"keep", 20}, {"generation_length", 64}};
  c["optimize"] = optim_config_to_json(OptimConfig{});
  c["optimize"]["seed"] = nullptr;
  c["extract"] = {{"n", 20000}, {"length", 128}, {"top_k", 40}};
  c["sweep"] = {{"n", 20000},
                {"length", 128},
                {"layers", Json::array()},
                {"size_fractions", {0.25, 0.5, 0.75, 1.0}},
                {"ground_truth_fractions", {0.0, 0.25, 0.5, 0.75, 1.0}}};
  c["analysis"] = {{"generations", 20000}, {"length", 128}, {"prefixes", 1000}, {"dla_window", 10}};
  c["mitigate"] = {{"n", 20000}, {"length", 128}};
  return c;
}

Json parse_scalar(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::exception&) {
    return Json(text);
  }
}

// "a.b.c=value" overrides; the value is parsed as JSON when possible.
void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like key.path=value: " + assignment);
  std::string path = "/" + assignment.substr(0, eq);
  std::replace(path.begin(), path.end(), '.', '/');
  config[Json::json_pointer(path)] = parse_scalar(assignment.substr(eq + 1));
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  bool force = false;
  Json config;

  void add_to(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file");
    app->add_option("--set", overrides, "Override a config key, e.g. --set optimize.learning_rate=0.01");
    app->add_flag("--force", force, "Overwrite existing outputs");
  }

  void load() {
    config = default_config();
    if (!config_path.empty()) config.merge_patch(Json::parse(read_file(config_path)));
    for (const auto& o : overrides) apply_override(config, o);
  }

  std::uint64_t master() const { return config.at("master_seed").get<std::uint64_t>(); }
  std::uint64_t seed(const std::string& section, const std::string& label) const {
    const auto& s = config.at(section);
    if (s.contains("seed") && !s.at("seed").is_null()) return s.at("seed").get<std::uint64_t>();
    return derive_seed(master(), label);
  }
  PiiClass cls() const { return pii_class_from_string(config.at("class").get<std::string>()); }
};

void guard_output(const fs::path& out, bool force) {
  if (fs::exists(out) && !force) {
    throw Error(out.string() + " already exists; pass --force to overwrite");
  }
}

void require_input(const fs::path& p, const std::string& producer) {
  if (p.empty() || !fs::exists(p)) {
    throw Error("missing input " + (p.empty() ? std::string("(not given)") : p.string()) +
                "; produce it with `piisteer " + producer + "`");
  }
}

template <typename F>
auto load_input(const fs::path& p, const std::string& producer, F&& loader) {
  require_input(p, producer);
  try {
    return loader(p);
  } catch (const FormatError& e) {
    throw Error("input " + p.string() + " is not a valid `piisteer " + producer + "` artifact: " + e.what());
  } catch (const CompatibilityError& e) {
    throw Error("input " + p.string() + " is incompatible: " + e.what());
  }
}

std::string hash_path(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::string all;
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(p)) {
      if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) all += f.filename().string() + ":" + file_sha256(f) + "\n";
    return sha256_hex(all);
  }
  return file_sha256(p);
}

// Manifests name files by basename so that runs in different directories
// produce identical manifests.
struct Manifest {
  std::string command;
  Json sections = Json::object();
  Json seeds = Json::object();
  Json inputs = Json::array();
  Json outputs = Json::array();

  void input(const fs::path& p) { inputs.push_back(Json{{"name", p.filename().string()}, {"sha256", hash_path(p)}}); }
  void output(const fs::path& p) { outputs.push_back(Json{{"name", p.filename().string()}, {"sha256", hash_path(p)}}); }

  void write(const fs::path& path) const {
    Json m{{"command", command},
           {"tool_version", PIISTEER_VERSION},
           {"config", sections},
           {"config_hash", sha256_hex(sections.dump())},
           {"seeds", seeds},
           {"inputs", inputs},
           {"outputs", outputs}};
    write_file(path, m.dump(2) + "\n");
  }
};

fs::path manifest_path(const fs::path& out) {
  return fs::is_directory(out) ? out / "manifest.json" : fs::path(out.string() + ".manifest.json");
}

void write_json(const fs::path& p, const Json& j) { write_file(p, j.dump(2) + "\n"); }

ExtractionStrategy make_strategy(const std::string& kind, const Json& section, std::uint64_t seed,
                                 std::vector<TokenId> prompts) {
  ExtractionStrategy s;
  s.kind = strategy_kind_from_string(kind);
  s.decoding.top_k = section.value("top_k", 40);
  s.decoding.seed = seed;
  if (s.kind == StrategyKind::kSingleTokenSet) s.prompt_tokens = std::move(prompts);
  return s;
}

std::vector<TokenId> read_prompts(const fs::path& p) {
  const Json j = Json::parse(read_file(p));
  return j.is_object() ? j.at("tokens").get<std::vector<TokenId>>() : j.get<std::vector<TokenId>>();
}

// Single-token prompts from a file or, failing that, derived from the
// checkpoint with the master seed's prompt stream.
std::vector<TokenId> resolve_prompts(const Common& common, const Transformer<float>& model, const std::string& file,
                                     Manifest& manifest, Json* details = nullptr) {
  if (!file.empty()) {
    require_input(file, "selfgen --strategy single_token_set");
    manifest.input(file);
    return read_prompts(file);
  }
  PromptSearchConfig pc;
  const auto& ps = common.config.at("prompts");
  pc.candidate_budget = ps.value("candidate_budget", pc.candidate_budget);
  pc.samples_per_candidate = ps.value("samples_per_candidate", pc.samples_per_candidate);
  pc.keep = ps.value("keep", pc.keep);
  pc.generation_length = ps.value("generation_length", pc.generation_length);
  pc.seed = derive_seed(common.master(), "prompts");
  manifest.seeds["prompts"] = pc.seed;
  std::vector<PromptScore> scores;
  auto prompts = derive_single_token_prompts(model, common.cls(), pc, &scores);
  if (details != nullptr) {
    const Tokenizer tok;
    Json sc = Json::array();
    for (const auto& s : scores) sc.push_back(Json{{"token", s.token}, {"char", std::string(1, tok.to_char(s.token))}, {"yield", s.yield}});
    *details = Json{{"tokens", prompts}, {"class", to_string(common.cls())}, {"scores", sc}, {"seed", pc.seed}};
  }
  return prompts;
}

// Config sections keep "seed": null to mean "derive from the master seed".
Json section_without_seed(const Json& section) {
  Json s = section;
  s.erase("seed");
  return s;
}

std::string attack_label(const std::string& strategy) { return "attack/" + strategy; }

// ---------------------------------------------------------------------------

void cmd_corpus(Common& c, const fs::path& out) {
  guard_output(out / "corpus.jsonl", c.force);
  const auto corpus = generate_corpus(corpus_config_from_json(c.config.at("corpus")));
  save_corpus(corpus, out);
  Manifest m{"corpus"};
  m.sections["corpus"] = c.config.at("corpus");
  m.seeds["corpus"] = corpus.config.seed;
  m.output(out / "corpus.jsonl");
  m.output(out / "registry.jsonl");
  m.write(out / "manifest.json");
  std::cout << "wrote " << corpus.documents.size() << " documents, " << corpus.registry.size() << " plants to " << out
            << "\n";
}

void cmd_train(Common& c, const fs::path& corpus_dir, const fs::path& out) {
  guard_output(out, c.force);
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const ModelConfig mc = config_from_json(c.config.at("model"));
  TrainingConfig tc = training_config_from_json(section_without_seed(c.config.at("training")));
  tc.seed = c.seed("training", "train");
  const auto res = train(corpus, mc, tc, [&](int step, double loss) {
    if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  });
  save_checkpoint(res.checkpoint, out);
  std::ostringstream curve;
  curve << "step,loss\n";
  for (std::size_t i = 0; i < res.losses.size(); ++i) curve << i << ',' << res.losses[i] << '\n';
  const fs::path curve_path = out.string() + ".losses.csv";
  write_file(curve_path, curve.str());
  Manifest m{"train"};
  m.sections["model"] = c.config.at("model");
  m.sections["training"] = c.config.at("training");
  m.seeds["training"] = tc.seed;
  m.input(corpus_dir);
  m.output(out);
  m.output(curve_path);
  m.write(manifest_path(out));
  std::vector<std::string> held;
  for (int d : corpus.documents_in(Split::kValidation)) held.push_back(corpus.documents[static_cast<std::size_t>(d)]);
  if (held.empty()) held = corpus.documents;
  std::cout << "initial loss " << res.losses.front() << ", final loss " << res.losses.back()
            << ", held-out perplexity " << perplexity(res.checkpoint.model(), held) << "\n";
}

struct GenOptions {
  std::string strategy;
  int n = -1;
  int length = -1;
  long long seed = -1;
  std::string prompts_file;
};

void cmd_selfgen(Common& c, const fs::path& ckpt_path, const GenOptions& o, const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto model = ckpt.model();
  const auto& sec = c.config.at("selfgen");
  const std::string kind = o.strategy.empty() ? sec.at("strategy").get<std::string>() : o.strategy;
  const int n = o.n >= 0 ? o.n : sec.at("n").get<int>();
  const int length = o.length >= 0 ? o.length : sec.at("length").get<int>();
  const std::uint64_t seed = o.seed >= 0 ? static_cast<std::uint64_t>(o.seed) : derive_seed(c.master(), "selfgen/" + kind);
  Manifest m{"selfgen"};
  m.input(ckpt_path);
  std::vector<TokenId> prompts;
  if (strategy_kind_from_string(kind) == StrategyKind::kSingleTokenSet) {
    Json details;
    prompts = resolve_prompts(c, model, o.prompts_file, m, &details);
    if (o.prompts_file.empty()) {
      const fs::path pf = out.string() + ".prompts.json";
      write_json(pf, details);
      m.output(pf);
    }
  }
  const auto strategy = make_strategy(kind, sec, seed, prompts);
  const auto batch = run_strategy(model, strategy, n, length);
  save_generation_batch(batch, out);
  m.sections["selfgen"] = sec;
  m.sections["strategy"] = strategy_to_json(strategy);
  m.seeds["selfgen"] = seed;
  m.output(out);
  m.write(manifest_path(out));
  std::cout << "generated " << batch.sequences.size() << " sequences with strategy " << kind << "\n";
}

void cmd_annotate(Common& c, const fs::path& batch_path, const fs::path& out) {
  guard_output(out, c.force);
  const auto batch = load_input(batch_path, "selfgen", [](const fs::path& p) { return load_generation_batch(p); });
  const auto ds = build_class_dataset(batch, c.cls());
  save_class_dataset(ds, out);
  Manifest m{"annotate"};
  m.sections["class"] = c.config.at("class");
  m.input(batch_path);
  m.output(out);
  m.write(manifest_path(out));
  long positives = 0;
  for (const auto& ex : ds.examples) positives += ex.positives();
  std::cout << ds.examples.size() << " of " << batch.sequences.size() << " generations contain "
            << to_string(ds.cls) << " PII (" << positives << " labelled tokens)\n";
}

OptimConfig optim_config(const Common& c) {
  OptimConfig oc = optim_config_from_json(section_without_seed(c.config.at("optimize")));
  oc.seed = c.seed("optimize", "optimize");
  return oc;
}

Json direction_summary(const DirectionSet& d) {
  Json norms = Json::object();
  for (const auto& [l, v] : d.vectors) norms[std::to_string(l)] = v.norm();
  return Json{{"class", to_string(d.cls)},
              {"validation_loss", d.validation_loss},
              {"initial_validation_loss", d.validation_curve.empty() ? 0.0 : d.validation_curve.front()},
              {"validation_curve", d.validation_curve},
              {"train_curve", d.train_curve},
              {"norms", norms},
              {"provenance", d.provenance}};
}

void cmd_optimize(Common& c, const fs::path& ckpt_path, const fs::path& ds_path, const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto ds = load_input(ds_path, "annotate", [](const fs::path& p) { return load_class_dataset(p); });
  const auto oc = optim_config(c);
  const auto dirs = optimize_directions(ckpt.model(), ds, oc);
  save_direction_set(dirs, out);
  const fs::path summary = out.string() + ".summary.json";
  write_json(summary, direction_summary(dirs));
  Manifest m{"optimize"};
  m.sections["optimize"] = c.config.at("optimize");
  m.seeds["optimize"] = oc.seed;
  m.input(ckpt_path);
  m.input(ds_path);
  m.output(out);
  m.output(summary);
  m.write(manifest_path(out));
  std::cout << "validation loss " << dirs.validation_curve.front() << " -> " << dirs.validation_loss << " after "
            << dirs.provenance.value("updates", 0) << " updates\n";
}

struct ExtractOptions {
  std::string strategy = "bos";
  std::string directions;
  int sign = 1;
  int n = -1;
  int length = -1;
  std::string prompts_file;
  std::string method;
};

void cmd_extract(Common& c, const fs::path& ckpt_path, const fs::path& corpus_dir, const ExtractOptions& o,
                 const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const auto model = ckpt.model();
  const auto& sec = c.config.at("extract");
  const int n = o.n >= 0 ? o.n : sec.at("n").get<int>();
  const int length = o.length >= 0 ? o.length : sec.at("length").get<int>();
  Manifest m{"extract"};
  m.input(ckpt_path);
  m.input(corpus_dir);
  std::vector<TokenId> prompts;
  if (strategy_kind_from_string(o.strategy) == StrategyKind::kSingleTokenSet) {
    prompts = resolve_prompts(c, model, o.prompts_file, m);
  }
  const std::uint64_t seed = derive_seed(c.master(), attack_label(o.strategy));
  const auto strategy = make_strategy(o.strategy, sec, seed, prompts);
  std::optional<DirectionSet> dirs;
  if (!o.directions.empty()) {
    dirs = load_input(o.directions, "optimize", [](const fs::path& p) { return load_direction_set(p); });
    m.input(o.directions);
    if (dirs->cls != c.cls()) throw Error("directions were trained for class " + std::string(to_string(dirs->cls)));
  }
  std::string method = o.method;
  if (method.empty()) method = o.strategy + (dirs ? (o.sign > 0 ? "+steer" : "-mitigate") : "");
  GenerationBatch batch;
  const auto set = extract(model, strategy, c.cls(), dirs ? &*dirs : nullptr, o.sign, n, length, method, &batch);
  const auto counts = count_train_pii(set, corpus);
  Json report = extraction_report(set, counts);
  report["strategy"] = strategy_to_json(strategy);
  report["steered"] = dirs.has_value();
  report["sign"] = o.sign;
  write_json(out, report);
  const fs::path samples = out.string() + ".samples.txt";
  write_file(samples, qualitative_dump(batch, c.cls(), 20));
  m.sections["extract"] = sec;
  m.sections["class"] = c.config.at("class");
  m.seeds["attack"] = seed;
  m.output(out);
  m.output(samples);
  m.write(manifest_path(out));
  std::cout << method << ": " << set.items.size() << " unique " << to_string(set.cls) << ", " << counts.train_hits
            << " in the training data\n";
}

ExtractedSet read_extracted(const fs::path& p) {
  return load_input(p, "extract", [](const fs::path& path) {
    const Json j = Json::parse(read_file(path));
    ExtractedSet s;
    s.method = j.at("method").get<std::string>();
    s.cls = pii_class_from_string(j.at("class").get<std::string>());
    const auto items = j.at("items").get<std::vector<std::string>>();
    s.items.insert(items.begin(), items.end());
    s.spans = j.value("spans", 0);
    s.generations = j.value("generations", 0);
    return s;
  });
}

void cmd_overlap(Common& c, const std::vector<std::string>& reports, const fs::path& out) {
  guard_output(out, c.force);
  std::vector<ExtractedSet> sets;
  Manifest m{"overlap"};
  for (const auto& r : reports) {
    sets.push_back(read_extracted(r));
    m.input(r);
  }
  const auto rep = overlap(sets);
  Json j = rep.to_json();
  j["inclusion_exclusion_union"] = rep.inclusion_exclusion_union();
  write_json(out, j);
  const fs::path csv = out.string() + ".venn.csv";
  write_file(csv, rep.venn_csv());
  m.output(out);
  m.output(csv);
  m.write(manifest_path(out));
  for (std::size_t i = 0; i < rep.methods.size(); ++i) {
    std::cout << rep.methods[i] << ": " << rep.sizes[i] << " items, " << rep.exclusive[i] << " found by no other method\n";
  }
}

void cmd_transfer(Common& c, const fs::path& ckpt_path, const fs::path& corpus_dir,
                  const std::vector<std::string>& direction_args, const std::vector<std::string>& strategies,
                  const std::string& prompts_file, const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const auto model = ckpt.model();
  Manifest m{"transfer"};
  m.input(ckpt_path);
  m.input(corpus_dir);
  std::map<std::string, DirectionSet> dirs;
  for (const auto& arg : direction_args) {
    const auto eq = arg.find('=');
    if (eq == std::string::npos) throw ConfigError("--directions expects name=path, got " + arg);
    const fs::path p = arg.substr(eq + 1);
    dirs[arg.substr(0, eq)] = load_input(p, "optimize", [](const fs::path& q) { return load_direction_set(q); });
    m.input(p);
  }
  const auto& sec = c.config.at("extract");
  std::vector<std::pair<std::string, ExtractionStrategy>> attacks;
  for (const auto& s : strategies) {
    std::vector<TokenId> prompts;
    if (strategy_kind_from_string(s) == StrategyKind::kSingleTokenSet) prompts = resolve_prompts(c, model, prompts_file, m);
    const auto seed = derive_seed(c.master(), attack_label(s));
    m.seeds[attack_label(s)] = seed;
    attacks.emplace_back(s, make_strategy(s, sec, seed, prompts));
  }
  const auto matrix = transfer_matrix(model, attacks, dirs, c.cls(), sec.at("n").get<int>(), sec.at("length").get<int>(),
                                      corpus.planted_values(c.cls(), Split::kTrain));
  write_json(out, matrix.to_json());
  const fs::path csv = out.string() + ".csv";
  write_file(csv, matrix.csv());
  m.sections["extract"] = sec;
  m.output(out);
  m.output(csv);
  m.write(manifest_path(out));
  std::cout << matrix.csv();
}

void cmd_analyze(Common& c, const fs::path& ckpt_path, const fs::path& corpus_dir, const fs::path& dir_path,
                 const fs::path& out) {
  guard_output(out / "summary.json", c.force);
  fs::create_directories(out);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const auto dirs = load_input(dir_path, "optimize", [](const fs::path& p) { return load_direction_set(p); });
  const auto model = ckpt.model();
  check_compatible(dirs, model.config());
  const auto& sec = c.config.at("analysis");
  const auto seed = derive_seed(c.master(), "analysis");
  const auto strategy = make_strategy("bos", c.config.at("extract"), seed, {});
  const int n = sec.at("generations").get<int>();
  const int length = sec.at("length").get<int>();

  GenerationBatch base_batch, steered_batch;
  const auto base_set = extract(model, strategy, c.cls(), nullptr, 1, n, length, "bos", &base_batch);
  const auto steered_set = extract(model, strategy, c.cls(), &dirs, 1, n, length, "bos+steer", &steered_batch);
  const auto prefixes = select_pii_prefixes(base_batch, c.cls(), sec.at("prefixes").get<int>());
  const auto iv = first_token_intervention(dirs, 1);
  const auto lens_base = logit_lens(model, prefixes);
  const auto lens_steered = logit_lens(model, prefixes, &iv);
  const int window = sec.at("dla_window").get<int>();
  const auto dla_base = direct_logit_attribution(model, prefixes, nullptr, window);
  const auto dla_steered = direct_logit_attribution(model, prefixes, &iv, window);
  write_file(out / "lens.csv", lens_csv(lens_base, lens_steered));
  write_file(out / "dla.csv", attribution_csv(dla_base, dla_steered));

  const auto train_prefixes = training_prefixes(corpus, c.cls(), model.config().context_length);
  Json sim = Json::object();
  for (const auto* set : {&base_set, &steered_set}) {
    std::map<std::string, std::vector<std::vector<TokenId>>> gen;
    for (const auto& [item, prefix] : set->first_prefix) {
      if (!prefix.empty()) gen[item].push_back(prefix);
    }
    const auto s = contextual_similarity(model, gen, train_prefixes);
    sim[set->method] = Json{{"mean", s.mean}, {"median", s.median}, {"pairs", s.values.size()}, {"items", s.items},
                            {"skipped", s.skipped}};
  }
  write_json(out / "similarity.json", sim);
  Json summary{{"prefixes", prefixes.size()},
               {"lens_final_deviation", std::max(lens_base.max_final_deviation, lens_steered.max_final_deviation)},
               {"lens_output_probability", {{"base", lens_base.output_probability}, {"steered", lens_steered.output_probability}}},
               {"dla_max_relative_error", std::max(dla_base.max_relative_error, dla_steered.max_relative_error)},
               {"dla_window", dla_base.window},
               {"similarity", sim}};
  write_json(out / "summary.json", summary);
  Manifest m{"analyze"};
  m.sections["analysis"] = sec;
  m.seeds["analysis"] = seed;
  m.input(ckpt_path);
  m.input(corpus_dir);
  m.input(dir_path);
  for (const char* f : {"lens.csv", "dla.csv", "similarity.json", "summary.json"}) m.output(out / f);
  m.write(out / "manifest.json");
  std::cout << summary.dump(2) << "\n";
}

TokenId parse_token(const std::string& s) {
  const Tokenizer tok;
  if (s.empty() || s == "BOS" || s == "bos") return Tokenizer::kBos;
  if (s.size() == 1) return tok.to_id(s[0]);
  return std::stoi(s);
}

void cmd_poison(Common& c, const fs::path& ckpt_path, const fs::path& dir_path, const std::string& token,
                const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto dirs = load_input(dir_path, "optimize", [](const fs::path& p) { return load_direction_set(p); });
  if (dirs.vectors.count(0) == 0) throw Error("poisoning needs a layer-0 direction; optimize with optimize.layers=[0]");
  const TokenId id = parse_token(token);
  auto poisoned = poison_embedding(ckpt, dirs.vectors.at(0), id);
  poisoned.provenance = Json{{"poisoned_from", ckpt.provenance},
                             {"source_checkpoint", ckpt_path.filename().string()},
                             {"source_sha256", file_sha256(ckpt_path)},
                             {"direction_file", dir_path.filename().string()},
                             {"direction_sha256", file_sha256(dir_path)},
                             {"token_id", id}};
  save_checkpoint(poisoned, out);
  Manifest m{"poison"};
  m.input(ckpt_path);
  m.input(dir_path);
  m.seeds["token_id"] = id;
  m.output(out);
  m.write(manifest_path(out));
  std::cout << "poisoned embedding row " << id << "\n";
}

void cmd_mitigate(Common& c, const fs::path& ckpt_path, const fs::path& corpus_dir, const fs::path& dir_path,
                  const std::string& strategy_kind, const std::string& prompts_file, const fs::path& out) {
  guard_output(out, c.force);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const auto dirs = load_input(dir_path, "optimize", [](const fs::path& p) { return load_direction_set(p); });
  const auto model = ckpt.model();
  Manifest m{"mitigate"};
  m.input(ckpt_path);
  m.input(corpus_dir);
  m.input(dir_path);
  std::vector<TokenId> prompts;
  if (strategy_kind_from_string(strategy_kind) == StrategyKind::kSingleTokenSet) {
    prompts = resolve_prompts(c, model, prompts_file, m);
  }
  const auto& sec = c.config.at("mitigate");
  const auto seed = derive_seed(c.master(), attack_label(strategy_kind));
  const auto strategy = make_strategy(strategy_kind, c.config.at("extract"), seed, prompts);
  MitigationConfig mc;
  mc.cls = c.cls();
  mc.n = sec.at("n").get<int>();
  mc.length = sec.at("length").get<int>();
  std::vector<std::string> held;
  for (int d : corpus.documents_in(Split::kTest)) held.push_back(corpus.documents[static_cast<std::size_t>(d)]);
  if (held.empty()) throw Error("the corpus has no test split to measure perplexity on");
  GenerationBatch batch;
  const auto r = mitigation_run(model, dirs, strategy, mc, held, corpus.planted_values(c.cls(), Split::kTrain), &batch);
  write_json(out, r.to_json());
  const fs::path samples = out.string() + ".samples.txt";
  write_file(samples, qualitative_dump(batch, c.cls(), 20));
  m.sections["mitigate"] = sec;
  m.seeds["attack"] = seed;
  m.output(out);
  m.output(samples);
  m.write(manifest_path(out));
  std::cout << "train hits " << r.baseline_counts.train_hits << " -> " << r.mitigated_counts.train_hits
            << ", perplexity ratio " << r.perplexity_ratio << (r.collapse_flag ? " (repetition collapse)" : "")
            << "\n";
}

void cmd_sweep(Common& c, const fs::path& ckpt_path, const fs::path& corpus_dir, const fs::path& ds_path,
               const std::string& kind, const fs::path& out) {
  guard_output(out / "sweep.json", c.force);
  fs::create_directories(out);
  const auto ckpt = load_input(ckpt_path, "train", [](const fs::path& p) { return load_checkpoint(p); });
  const auto corpus = load_input(corpus_dir / "corpus.jsonl", "corpus", [&](const fs::path&) { return load_corpus(corpus_dir); });
  const auto ds = load_input(ds_path, "annotate", [](const fs::path& p) { return load_class_dataset(p); });
  const auto model = ckpt.model();
  const auto& sec = c.config.at("sweep");
  const int n = sec.at("n").get<int>();
  const int length = sec.at("length").get<int>();
  const auto train_values = corpus.planted_values(ds.cls, Split::kTrain);
  const auto attack_seed = derive_seed(c.master(), attack_label("bos"));
  const auto strategy = make_strategy("bos", c.config.at("extract"), attack_seed, {});
  const OptimConfig base = optim_config(c);

  Manifest m{"sweep"};
  m.sections["sweep"] = sec;
  m.sections["optimize"] = c.config.at("optimize");
  m.seeds["attack"] = attack_seed;
  m.seeds["optimize"] = base.seed;
  m.input(ckpt_path);
  m.input(corpus_dir);
  m.input(ds_path);

  Json rows = Json::array();
  std::vector<std::string> skipped;
  std::ostringstream csv;
  csv << "panel,setting,examples,validation_loss,unique,train_hits\n";
  auto evaluate = [&](const std::string& panel, const std::string& setting, const DirectionSet& d, std::size_t examples,
                      const Json& extra) {
    const auto set = extract(model, strategy, ds.cls, &d, 1, n, length, panel + ":" + setting);
    const auto counts = count_train_pii(set, train_values);
    const fs::path file = out / (panel + "_" + setting + ".dirs");
    save_direction_set(d, file);
    m.output(file);
    Json row{{"panel", panel},           {"setting", setting},          {"examples", examples},
             {"validation_loss", d.validation_loss}, {"unique", set.items.size()}, {"train_hits", counts.train_hits}};
    if (!extra.is_null()) row["selection"] = extra;
    rows.push_back(row);
    csv << panel << ',' << setting << ',' << examples << ',' << d.validation_loss << ',' << set.items.size() << ','
        << counts.train_hits << '\n';
    std::cerr << panel << " " << setting << ": " << counts.train_hits << " train hits\n";
  };

  const auto baseline = extract(model, strategy, ds.cls, nullptr, 1, n, length, "bos");
  const int baseline_hits = count_train_pii(baseline, train_values).train_hits;

  if (kind == "layer" || kind == "all") {
    std::vector<int> layers = sec.at("layers").get<std::vector<int>>();
    for (const auto& [layer, d] : layer_sweep(model, ds, base, layers)) {
      evaluate("layer", std::to_string(layer), d, ds.examples.size(), Json());
    }
  }
  if (kind == "size" || kind == "all") {
    for (double f : sec.at("size_fractions").get<std::vector<double>>()) {
      std::vector<std::size_t> idx;
      const auto sub = subsample_dataset(ds, f, base.seed, &idx);
      if (sub.examples.empty()) continue;
      evaluate("size", std::to_string(static_cast<int>(std::lround(f * 100))), optimize_directions(model, sub, base),
               sub.examples.size(), idx);
    }
  }
  if (kind == "ground_truth" || kind == "all") {
    const auto fractions = sec.at("ground_truth_fractions").get<std::vector<double>>();
    const auto size = max_mixable_size(ds, train_values, fractions);
    if (size == 0 && kind == "ground_truth") throw Error("the dataset cannot support the requested ground-truth mixes");
    if (size == 0) skipped.push_back("ground_truth: too few examples containing training values");
    for (double f : size == 0 ? std::vector<double>{} : fractions) {
      std::vector<std::size_t> idx;
      const auto mix = mix_ground_truth(ds, train_values, f, size, base.seed, &idx);
      evaluate("ground_truth", std::to_string(static_cast<int>(std::lround(f * 100))),
               optimize_directions(model, mix, base), mix.examples.size(), idx);
    }
  }
  if (kind != "layer" && kind != "size" && kind != "ground_truth" && kind != "all") {
    throw ConfigError("unknown sweep kind: " + kind);
  }
  write_json(out / "sweep.json", Json{{"baseline_train_hits", baseline_hits}, {"rows", rows}, {"skipped", skipped}});
  write_file(out / "sweep.csv", csv.str());
  m.output(out / "sweep.json");
  m.output(out / "sweep.csv");
  m.write(out / "manifest.json");
}

// Comparison table: one row per class, one column per method, the
// best method of each row marked.
void cmd_report(Common& c, const std::vector<std::string>& reports, const fs::path& out) {
  guard_output(out / "table.json", c.force);
  fs::create_directories(out);
  Manifest m{"report"};
  std::map<std::string, std::map<std::string, int>> table;  // class -> method -> hits
  std::vector<std::string> methods;
  Json entries = Json::array();
  for (const auto& r : reports) {
    require_input(r, "extract");
    const Json j = Json::parse(read_file(r));
    const auto method = j.at("method").get<std::string>();
    const auto cls = j.at("class").get<std::string>();
    table[cls][method] = j.at("train_hits").get<int>();
    if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
    entries.push_back(Json{{"class", cls}, {"method", method}, {"train_hits", j.at("train_hits")},
                           {"unique", j.at("unique")}, {"novel", j.at("novel")}});
    m.input(r);
  }
  Json rows = Json::array();
  std::ostringstream csv, md;
  csv << "class";
  md << "| class |";
  for (const auto& meth : methods) {
    csv << ',' << meth;
    md << ' ' << meth << " |";
  }
  csv << '\n';
  md << "\n|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& [cls, by_method] : table) {
    int best = -1;
    for (const auto& [meth, hits] : by_method) best = std::max(best, hits);
    Json row{{"class", cls}, {"best", best}};
    csv << cls;
    md << "| " << cls << " |";
    for (const auto& meth : methods) {
      const auto it = by_method.find(meth);
      if (it == by_method.end()) {
        csv << ',';
        md << " - |";
        continue;
      }
      row["train_hits"][meth] = it->second;
      csv << ',' << it->second;
      md << ' ' << (it->second == best ? "**" + std::to_string(it->second) + "**" : std::to_string(it->second)) << " |";
    }
    csv << '\n';
    md << '\n';
    rows.push_back(row);
  }
  write_json(out / "table.json", Json{{"methods", methods}, {"rows", rows}, {"entries", entries}});
  write_file(out / "table.csv", csv.str());
  write_file(out / "table.md", md.str());
  for (const char* f : {"table.json", "table.csv", "table.md"}) m.output(out / f);
  m.write(out / "manifest.json");
  std::cout << md.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PII steering directions on a small character-level language model"};
  app.set_version_flag("--version", std::string(PIISTEER_VERSION));
  app.require_subcommand(1);
  Common common;

  std::string out, corpus_dir, ckpt, batch, dataset, directions, token = "BOS", sweep_kind = "all";
  std::vector<std::string> reports, direction_list, strategies{"bos", "single_token_set"};
  GenOptions gen;
  ExtractOptions ext;

  auto* corpus = app.add_subcommand("corpus", "Generate the synthetic corpus and plant registry");
  corpus->add_option("--out", out, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the language model");
  train_cmd->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  train_cmd->add_option("--out", out, "Checkpoint path")->required();

  auto* selfgen = app.add_subcommand("selfgen", "Sample generations with an extraction strategy");
  selfgen->add_option("--checkpoint", ckpt)->required();
  selfgen->add_option("--strategy", gen.strategy, "bos | empty | single_token_set");
  selfgen->add_option("--n", gen.n, "Number of generations");
  selfgen->add_option("--length", gen.length, "New tokens per generation");
  selfgen->add_option("--seed", gen.seed, "Explicit sampling seed");
  selfgen->add_option("--prompts-file", gen.prompts_file, "JSON list of single-token prompt ids");
  selfgen->add_option("--out", out)->required();

  auto* annotate_cmd = app.add_subcommand("annotate", "Build the per-class labelled dataset");
  annotate_cmd->add_option("--batch", batch)->required();
  annotate_cmd->add_option("--out", out)->required();

  auto* optimize = app.add_subcommand("optimize", "Learn steering directions");
  optimize->add_option("--checkpoint", ckpt)->required();
  optimize->add_option("--dataset", dataset)->required();
  optimize->add_option("--out", out)->required();

  auto* sweep = app.add_subcommand("sweep", "Sensitivity sweeps over layer, dataset size and ground-truth share");
  sweep->add_option("--checkpoint", ckpt)->required();
  sweep->add_option("--corpus", corpus_dir)->required();
  sweep->add_option("--dataset", dataset)->required();
  sweep->add_option("--kind", sweep_kind, "layer | size | ground_truth | all");
  sweep->add_option("--out", out)->required();

  auto* extract_cmd = app.add_subcommand("extract", "Extract PII with or without steering");
  extract_cmd->add_option("--checkpoint", ckpt)->required();
  extract_cmd->add_option("--corpus", corpus_dir)->required();
  extract_cmd->add_option("--strategy", ext.strategy);
  extract_cmd->add_option("--directions", ext.directions);
  extract_cmd->add_option("--sign", ext.sign)->check(CLI::IsMember({1, -1}));
  extract_cmd->add_option("--n", ext.n);
  extract_cmd->add_option("--length", ext.length);
  extract_cmd->add_option("--prompts-file", ext.prompts_file);
  extract_cmd->add_option("--method", ext.method, "Method name used in reports");
  extract_cmd->add_option("--out", out)->required();

  auto* overlap_cmd = app.add_subcommand("overlap", "Overlap statistics across extraction reports");
  overlap_cmd->add_option("--reports", reports)->required();
  overlap_cmd->add_option("--out", out)->required();

  auto* transfer = app.add_subcommand("transfer", "Cross-strategy transfer matrix");
  transfer->add_option("--checkpoint", ckpt)->required();
  transfer->add_option("--corpus", corpus_dir)->required();
  transfer->add_option("--directions", direction_list, "name=path, one per direction source")->required();
  transfer->add_option("--strategies", strategies);
  transfer->add_option("--prompts-file", gen.prompts_file);
  transfer->add_option("--out", out)->required();

  auto* analyze = app.add_subcommand("analyze", "Logit lens, direct logit attribution, contextual similarity");
  analyze->add_option("--checkpoint", ckpt)->required();
  analyze->add_option("--corpus", corpus_dir)->required();
  analyze->add_option("--directions", directions)->required();
  analyze->add_option("--out", out)->required();

  auto* poison = app.add_subcommand("poison", "Fold a layer-0 direction into one embedding row");
  poison->add_option("--checkpoint", ckpt)->required();
  poison->add_option("--directions", directions)->required();
  poison->add_option("--token", token, "BOS, a single character, or a token id");
  poison->add_option("--out", out)->required();

  auto* mitigate = app.add_subcommand("mitigate", "Subtract directions at inference and measure quality");
  mitigate->add_option("--checkpoint", ckpt)->required();
  mitigate->add_option("--corpus", corpus_dir)->required();
  mitigate->add_option("--directions", directions)->required();
  mitigate->add_option("--strategy", ext.strategy);
  mitigate->add_option("--prompts-file", gen.prompts_file);
  mitigate->add_option("--out", out)->required();

  auto* report = app.add_subcommand("report", "Comparison table over extraction reports");
  report->add_option("--reports", reports)->required();
  report->add_option("--out", out)->required();

  for (auto* sub : app.get_subcommands([](CLI::App*) { return true; })) common.add_to(sub);

  CLI11_PARSE(app, argc, argv);
  try {
    common.load();
    if (*corpus) cmd_corpus(common, out);
    if (*train_cmd) cmd_train(common, corpus_dir, out);
    if (*selfgen) cmd_selfgen(common, ckpt, gen, out);
    if (*annotate_cmd) cmd_annotate(common, batch, out);
    if (*optimize) cmd_optimize(common, ckpt, dataset, out);
    if (*sweep) cmd_sweep(common, ckpt, corpus_dir, dataset, sweep_kind, out);
    if (*extract_cmd) cmd_extract(common, ckpt, corpus_dir, ext, out);
    if (*overlap_cmd) cmd_overlap(common, reports, out);
    if (*transfer) cmd_transfer(common, ckpt, corpus_dir, direction_list, strategies, gen.prompts_file, out);
    if (*analyze) cmd_analyze(common, ckpt, corpus_dir, directions, out);
    if (*poison) cmd_poison(common, ckpt, directions, token, out);
    if (*mitigate) cmd_mitigate(common, ckpt, corpus_dir, directions, ext.strategy, gen.prompts_file, out);
    if (*report) cmd_report(common, reports, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
