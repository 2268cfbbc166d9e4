// Acceptance checks: one PASS/FAIL line per criterion.
//
// The toy checkpoint is trained once and cached under --cache; everything
// else is recomputed on every run.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>

#include "piisteer/analysis.hpp"
#include "piisteer/apps.hpp"
#include "piisteer/checkpoint.hpp"
#include "piisteer/corpus.hpp"
#include "piisteer/directions.hpp"
#include "piisteer/extraction.hpp"
#include "piisteer/rng.hpp"
#include "piisteer/selfgen.hpp"
#include "piisteer/train.hpp"

namespace fs = std::filesystem;
using namespace piisteer;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  Json data = Json::object();
};

struct Options {
  fs::path cache = "acceptance_cache";
  fs::path cli;
  fs::path pipeline;
  fs::path pipeline_config;
  fs::path fixtures;
  std::vector<int> only;
  int seeds = 5;
  int generations = 20000;
  int length = 128;
  bool strict = false;
};

class Fixture {
 public:
  explicit Fixture(Options opt) : opt_(std::move(opt)) { fs::create_directories(opt_.cache); }

  const Options& options() const { return opt_; }

  const Corpus& corpus() {
    if (!corpus_) corpus_ = generate_corpus(CorpusConfig{});
    return *corpus_;
  }

  // 4-layer/128-dim model trained on the default corpus.
  const Checkpoint& checkpoint() {
    if (ckpt_) return *ckpt_;
    ModelConfig mc;
    mc.seed = 1;
    TrainingConfig tc;
    tc.seed = 1;
    const Json expected = training_config_to_json(tc);
    const fs::path path = opt_.cache / "toy.ckpt";
    if (fs::exists(path)) {
      auto c = load_checkpoint(path);
      if (c.provenance.value("training", Json()) == expected && config_to_json(c.config) == config_to_json(mc)) {
        ckpt_ = std::move(c);
        return *ckpt_;
      }
    }
    std::cerr << "training the toy checkpoint (" << tc.steps << " steps)\n";
    auto res = train(corpus(), mc, tc, [](int step, double loss) {
      if (step % 250 == 0) std::cerr << "  step " << step << " loss " << loss << "\n";
    });
    save_checkpoint(res.checkpoint, path);
    losses_ = res.losses;
    ckpt_ = std::move(res.checkpoint);
    return *ckpt_;
  }

  const Transformer<float>& model() {
    if (!model_) model_ = checkpoint().model();
    return *model_;
  }

  std::vector<std::string> held_out_documents() {
    std::vector<std::string> out;
    for (int d : corpus().documents_in(Split::kTest)) out.push_back(corpus().documents[static_cast<std::size_t>(d)]);
    return out;
  }

  std::set<std::string> train_emails() { return corpus().planted_values(PiiClass::kEmail, Split::kTrain); }

  // Directions learned on the 200-example fixture, shared by later checks.
  std::optional<DirectionSet> fixture_directions;
  // Generations sampled for the lens and attribution checks.
  std::optional<GenerationBatch> analysis_batch;

 private:
  Options opt_;
  std::optional<Corpus> corpus_;
  std::optional<Checkpoint> ckpt_;
  std::optional<Transformer<float>> model_;
  std::vector<double> losses_;
};

std::vector<TokenId> random_text(Rng& rng, int n) {
  std::uniform_int_distribution<int> pick(Tokenizer::kEos + 1, Tokenizer().vocab_size() - 1);
  std::vector<TokenId> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = pick(rng);
  return out;
}

ExtractionStrategy bos_strategy(std::uint64_t seed) {
  ExtractionStrategy s;
  s.decoding.seed = seed;
  return s;
}

Outcome zero_intervention_identity(Fixture& fx) {
  const auto& model = fx.model();
  const auto& mc = model.config();
  Rng rng(derive_seed(1, "acceptance/zero"));
  std::uniform_int_distribution<int> len(1, mc.context_length);
  int identical = 0;
  for (int i = 0; i < 100; ++i) {
    const int n = len(rng);
    auto tokens = random_text(rng, n);
    InterventionSpec iv;
    for (int l = 0; l <= mc.num_layers; ++l) iv.directions[l] = VectorF::Zero(mc.model_dim);
    for (int p = 0; p < n; ++p) iv.positions.push_back(p);
    const MatrixF plain = model.forward(tokens);
    const MatrixF zero = model.forward(tokens, &iv);
    identical += (plain.array() == zero.array()).all() ? 1 : 0;
  }
  return {identical == 100, std::to_string(identical) + "/100 inputs bit-identical", {{"identical", identical}}};
}

Outcome gradient_correctness(Fixture&) {
  ModelConfig mc;
  mc.num_layers = 2;
  mc.model_dim = 64;
  mc.num_heads = 4;
  mc.context_length = 64;
  mc.seed = 21;
  Transformer<double> model(mc, Parameters<double>::initialize(mc));
  Rng rng(derive_seed(1, "acceptance/gradient"));
  double worst = 0.0;
  for (int trial = 0; trial < 4; ++trial) {
    LabelSequence ex;
    ex.tokens = {Tokenizer::kBos};
    const auto body = random_text(rng, 47);
    ex.tokens.insert(ex.tokens.end(), body.begin(), body.end());
    ex.labels.assign(ex.tokens.size(), 0);
    // A span at the start of the text gives the last layer a nonzero gradient too.
    for (int i = 1; i <= 6; ++i) ex.labels[static_cast<std::size_t>(i)] = 1;
    for (int i = 20 + trial; i < 34 + trial; ++i) ex.labels[static_cast<std::size_t>(i)] = 1;
    Intervention<double> iv;
    iv.positions = {0};
    std::normal_distribution<double> normal(0.0, 0.05);
    for (int l = 0; l <= mc.num_layers; ++l) {
      VectorD v(mc.model_dim);
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng);
      iv.directions[l] = v;
    }
    worst = std::max(worst, gradient_check(model, ex, iv, 1e-4, 32, static_cast<std::uint64_t>(trial)));
  }
  std::ostringstream d;
  d << "max relative error " << worst << " (limit 1e-4)";
  return {worst <= 1e-4, d.str(), {{"max_relative_error", worst}}};
}

Outcome poisoning_equivalence(Fixture& fx) {
  const auto& ckpt = fx.checkpoint();
  const auto& model = fx.model();
  const auto& mc = model.config();
  Rng rng(derive_seed(1, "acceptance/poison"));
  std::normal_distribution<double> normal(0.0, 0.2);
  VectorF v0(mc.model_dim);
  for (Eigen::Index i = 0; i < v0.size(); ++i) v0(i) = static_cast<float>(normal(rng));
  const auto poisoned = poison_embedding(ckpt, v0, Tokenizer::kBos).model();
  InterventionSpec iv;
  iv.directions[0] = v0;
  iv.positions = {0};
  std::uniform_int_distribution<int> len(2, mc.context_length);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    std::vector<TokenId> tokens{Tokenizer::kBos};
    const auto body = random_text(rng, len(rng) - 1);
    tokens.insert(tokens.end(), body.begin(), body.end());
    worst = std::max(worst, static_cast<double>((poisoned.forward(tokens) - model.forward(tokens, &iv)).cwiseAbs().maxCoeff()));
  }
  std::ostringstream d;
  d << "max abs logit diff " << worst << " over 100 inputs (limit 1e-6)";
  return {worst <= 1e-6, d.str(), {{"max_abs_diff", worst}}};
}

Outcome optimization_effectiveness(Fixture& fx) {
  const auto& model = fx.model();
  const auto batch = run_strategy(model, bos_strategy(derive_seed(1, "fixture/selfgen")), 2000, fx.options().length);
  const auto ds = build_class_dataset(batch, PiiClass::kEmail);
  if (ds.examples.size() < 400) return {false, "fixture produced only " + std::to_string(ds.examples.size()) + " examples"};
  ClassDataset train_set = ds;
  train_set.examples.assign(ds.examples.begin(), ds.examples.begin() + 200);
  const std::vector<LabelSequence> held(ds.examples.begin() + 200, ds.examples.begin() + 400);

  OptimConfig oc;
  oc.seed = derive_seed(1, "fixture/optimize");
  const auto dirs = optimize_directions(model, train_set, oc);
  InterventionSpec zero;
  zero.positions = oc.positions;
  for (const auto& [l, v] : dirs.vectors) zero.directions[l] = VectorF::Zero(v.size());
  const double base = mean_pii_loss(model, held, zero, LossVariant::kPiiOnly, oc.pii_weight);
  const auto iv = dirs.intervention(1);
  const double learned = mean_pii_loss(model, held, iv, LossVariant::kPiiOnly, oc.pii_weight);
  const double reduction = (base - learned) / base;
  fx.fixture_directions = dirs;
  std::ostringstream d;
  d << "held-out loss " << base << " -> " << learned << " (" << 100 * reduction << "% lower, need >= 10%); validation "
    << dirs.validation_curve.front() << " -> " << dirs.validation_loss << " in " << dirs.provenance.value("updates", 0)
    << " updates";
  return {reduction >= 0.10, d.str(),
          {{"zero_loss", base}, {"learned_loss", learned}, {"reduction", reduction},
           {"validation_curve", dirs.validation_curve}, {"early_stopped", dirs.provenance.value("early_stopped", false)}}};
}

struct SeedRun {
  std::uint64_t master = 0;
  int base_hits = 0;
  int steered_hits = 0;
  int mitigated_hits = 0;
  std::size_t steered_unique = 0;
  MitigationResult mitigation;
};

std::vector<SeedRun> seed_runs;

Outcome leakage_amplification(Fixture& fx) {
  const auto& model = fx.model();
  const auto train_values = fx.train_emails();
  const auto held = fx.held_out_documents();
  const int n = fx.options().generations;
  const int length = fx.options().length;
  int wins = 0;
  Json rows = Json::array();
  std::ostringstream d;
  for (int s = 1; s <= fx.options().seeds; ++s) {
    const auto master = static_cast<std::uint64_t>(s);
    const auto gen = run_strategy(model, bos_strategy(derive_seed(master, "selfgen/bos")), n, length);
    const auto ds = build_class_dataset(gen, PiiClass::kEmail);
    OptimConfig oc;
    oc.seed = derive_seed(master, "optimize");
    const auto dirs = optimize_directions(model, ds, oc);
    const auto attack = bos_strategy(derive_seed(master, "attack/bos"));
    MitigationConfig mc;
    mc.n = n;
    mc.length = length;
    SeedRun run;
    run.master = master;
    run.mitigation = mitigation_run(model, dirs, attack, mc, held, train_values);
    run.base_hits = run.mitigation.baseline_counts.train_hits;
    run.mitigated_hits = run.mitigation.mitigated_counts.train_hits;
    const auto steered = extract(model, attack, PiiClass::kEmail, &dirs, 1, n, length, "bos+steer");
    run.steered_hits = count_train_pii(steered, train_values).train_hits;
    run.steered_unique = steered.items.size();
    wins += run.steered_hits > run.base_hits ? 1 : 0;
    rows.push_back(Json{{"master_seed", master},
                        {"dataset_examples", ds.examples.size()},
                        {"validation_initial", dirs.validation_curve.front()},
                        {"validation_best", dirs.validation_loss},
                        {"bos_hits", run.base_hits},
                        {"bos_unique", run.mitigation.baseline.items.size()},
                        {"steered_hits", run.steered_hits},
                        {"steered_unique", steered.items.size()},
                        {"mitigated_hits", run.mitigated_hits}});
    d << (s > 1 ? ", " : "") << "seed " << s << ": " << run.base_hits << " -> " << run.steered_hits;
    std::cerr << "  seed " << s << ": bos " << run.base_hits << ", steered " << run.steered_hits << ", mitigated "
              << run.mitigated_hits << "\n";
    seed_runs.push_back(std::move(run));
  }
  d << " (steered wins " << wins << "/" << fx.options().seeds << ", need >= 4)";
  return {wins >= 4, d.str(), {{"wins", wins}, {"seeds", rows}}};
}

Outcome mitigation_trend(Fixture& fx) {
  if (seed_runs.empty()) leakage_amplification(fx);
  const auto& r = seed_runs.front();
  const auto& m = r.mitigation;
  const double drop = r.base_hits > 0 ? 1.0 - static_cast<double>(r.mitigated_hits) / r.base_hits : 0.0;
  std::ostringstream d;
  d << "train hits " << r.base_hits << " -> " << r.mitigated_hits << " (" << 100 * drop
    << "% fewer, need >= 20%); perplexity ratio " << m.perplexity_ratio << "; collapse flag "
    << (m.collapse_flag ? "set" : "clear") << " (" << m.collapsed_generations << "/" << m.scored_generations << ")";
  return {r.base_hits > 0 && drop >= 0.20, d.str(), m.to_json()};
}

const GenerationBatch& analysis_batch(Fixture& fx) {
  if (!fx.analysis_batch) {
    fx.analysis_batch = run_strategy(fx.model(), bos_strategy(derive_seed(1, "acceptance/analysis")), 4000,
                                     fx.options().length);
  }
  return *fx.analysis_batch;
}

InterventionSpec steering(Fixture& fx) {
  if (!fx.fixture_directions) optimization_effectiveness(fx);
  return first_token_intervention(*fx.fixture_directions, 1);
}

Outcome lens_consistency(Fixture& fx) {
  const auto prefixes = select_pii_prefixes(analysis_batch(fx), PiiClass::kEmail, 1000);
  const auto iv = steering(fx);
  const auto base = logit_lens(fx.model(), prefixes);
  const auto steered = logit_lens(fx.model(), prefixes, &iv);
  write_file(fx.options().cache / "lens_profile.csv", lens_csv(base, steered));
  const double worst = std::max(base.max_final_deviation, steered.max_final_deviation);
  std::ostringstream d;
  d << prefixes.size() << " prefixes, max |lens - output| " << worst << " (limit 1e-5); profile CSV written";
  return {prefixes.size() == 1000 && worst <= 1e-5, d.str(),
          {{"prefixes", prefixes.size()}, {"max_deviation", worst}, {"base", base.probability}, {"steered", steered.probability}}};
}

Outcome dla_reconstruction(Fixture& fx) {
  const auto prefixes = select_pii_prefixes(analysis_batch(fx), PiiClass::kEmail, 1000);
  const auto iv = steering(fx);
  const auto base = direct_logit_attribution(fx.model(), prefixes);
  const auto steered = direct_logit_attribution(fx.model(), prefixes, &iv);
  write_file(fx.options().cache / "attribution.csv", attribution_csv(base, steered));
  const double worst = std::max(base.max_relative_error, steered.max_relative_error);
  std::ostringstream d;
  d << prefixes.size() << " prefixes, max relative reconstruction error " << worst << " (limit 1e-4)";
  return {prefixes.size() == 1000 && worst <= 1e-4, d.str(), {{"prefixes", prefixes.size()}, {"max_relative_error", worst}}};
}

Outcome dim_equivalence(Fixture& fx) {
  const auto& model = fx.model();
  Rng rng(derive_seed(1, "acceptance/dim"));
  std::uniform_int_distribution<int> len(1, 40);
  const int layer = 2;
  std::vector<ContrastPair> pairs;
  for (int p = 0; p < 50; ++p) {
    pairs.push_back(ContrastPair{"p" + std::to_string(p), random_text(rng, len(rng)), random_text(rng, len(rng)), layer});
  }
  const VectorF fast = dim_direction(model, pairs, layer);
  // Naive oracle: run each prefix on its own and average the differences.
  VectorD sum = VectorD::Zero(model.config().model_dim);
  for (const auto& pr : pairs) {
    ActivationTrace<float> tp, tn;
    model.forward(pr.positive, nullptr, &tp);
    model.forward(pr.negative, nullptr, &tn);
    sum += (tp.residuals[layer].bottomRows(1).transpose().cast<double>() -
            tn.residuals[layer].bottomRows(1).transpose().cast<double>());
  }
  const VectorD oracle = sum / static_cast<double>(pairs.size());
  const double err = (fast.cast<double>() - oracle).cwiseAbs().maxCoeff();
  auto same = pairs;
  for (auto& pr : same) pr.negative = pr.positive;
  const bool zero = (dim_direction(model, same, layer).array() == 0.0f).all();
  std::ostringstream d;
  d << "max abs diff vs pair averaging " << err << " (limit 1e-7); identical pairs give "
    << (zero ? "exactly zero" : "a nonzero vector");
  return {err <= 1e-7 && zero, d.str(), {{"max_abs_diff", err}, {"identical_pairs_zero", zero}}};
}

Outcome annotation_closure(Fixture& fx) {
  const auto& corpus = fx.corpus();
  std::map<PiiClass, std::pair<int, int>> recall;  // found, total
  for (const auto& plant : corpus.registry) {
    const auto spans = annotate(corpus.documents[static_cast<std::size_t>(plant.doc)], plant.cls);
    const bool found = std::any_of(spans.begin(), spans.end(), [&](const PiiSpan& s) {
      return s.start == plant.start && s.end == plant.end && s.canonical == plant.value;
    });
    auto& r = recall[plant.cls];
    r.first += found ? 1 : 0;
    r.second += 1;
  }
  int stable = 0;
  int checked = 0;
  for (std::size_t i = 0; i < corpus.registry.size() && checked < 1000; ++i) {
    const auto& plant = corpus.registry[i];
    const auto surface = corpus.documents[static_cast<std::size_t>(plant.doc)].substr(
        static_cast<std::size_t>(plant.start), static_cast<std::size_t>(plant.end - plant.start));
    const auto once = canonicalize(surface, plant.cls);
    stable += canonicalize(once, plant.cls) == once ? 1 : 0;
    ++checked;
  }
  Json data = Json::object();
  std::ostringstream d;
  bool pass = stable == checked && checked == 1000;
  for (const auto& [cls, r] : recall) {
    data["recall"][std::string(to_string(cls))] = {r.first, r.second};
    d << to_string(cls) << " " << r.first << "/" << r.second << ", ";
    if (cls != PiiClass::kName) pass = pass && r.first == r.second;
  }
  d << "canonicalization idempotent on " << stable << "/" << checked;
  data["idempotent"] = stable;
  return {pass, d.str(), data};
}

Outcome overlap_arithmetic(Fixture&) {
  Rng rng(derive_seed(1, "acceptance/overlap"));
  std::bernoulli_distribution member(0.45);
  std::vector<ExtractedSet> sets(4);
  const std::vector<std::string> names{"bos", "bos+steer", "single_token_set", "single_token_set+steer"};
  std::vector<std::string> universe;
  for (int i = 0; i < 200; ++i) universe.push_back("user" + std::to_string(i) + "@example.com");
  for (std::size_t m = 0; m < 4; ++m) {
    sets[m].method = names[m];
    for (const auto& u : universe) {
      if (member(rng)) sets[m].items.insert(u);
    }
  }
  const auto rep = overlap(sets);
  // Brute force: one membership mask per item.
  std::map<unsigned, int> regions;
  int union_size = 0;
  for (const auto& u : universe) {
    unsigned mask = 0;
    for (unsigned m = 0; m < 4; ++m) mask |= sets[m].items.count(u) ? (1u << m) : 0u;
    if (mask != 0) {
      ++regions[mask];
      ++union_size;
    }
  }
  bool ok = rep.union_size == union_size && rep.inclusion_exclusion_union() == union_size;
  for (unsigned mask = 1; mask < 16; ++mask) {
    const int region = regions.count(mask) ? regions[mask] : 0;
    const int rep_region = rep.region_counts.count(mask) ? rep.region_counts.at(mask) : 0;
    int inter = 0;
    for (const auto& [m, c] : regions) inter += (m & mask) == mask ? c : 0;
    const int rep_inter = rep.intersection_sizes.count(mask) ? rep.intersection_sizes.at(mask) : 0;
    ok = ok && region == rep_region && inter == rep_inter;
  }
  std::ostringstream d;
  d << "union " << union_size << ", inclusion-exclusion " << rep.inclusion_exclusion_union()
    << ", all 15 regions and intersections " << (ok ? "match" : "differ");
  return {ok, d.str(), rep.to_json()};
}

std::map<std::string, std::string> manifests(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.find("manifest.json") != std::string::npos) {
      out[fs::relative(e.path(), dir).string()] = read_file(e.path());
    }
  }
  return out;
}

std::map<std::string, Json> extracted_sets(const fs::path& dir) {
  std::map<std::string, Json> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() != ".json" || e.path().filename().string().find("manifest") != std::string::npos) continue;
    const Json j = Json::parse(read_file(e.path()));
    if (j.is_object() && j.contains("items") && j.contains("method")) out[e.path().filename().string()] = j.at("items");
  }
  return out;
}

Outcome reproducibility(Fixture& fx) {
  const auto& opt = fx.options();
  if (opt.cli.empty() || opt.pipeline.empty()) return {false, "CLI or pipeline script not given"};
  std::vector<fs::path> runs{opt.cache / "repro_a", opt.cache / "repro_b"};
  for (const auto& dir : runs) {
    fs::remove_all(dir);
    std::string cmd = "bash '" + opt.pipeline.string() + "' '" + opt.cli.string() + "' '" + dir.string() + "'";
    if (!opt.pipeline_config.empty()) cmd += " '" + opt.pipeline_config.string() + "'";
    cmd += " > '" + dir.string() + ".log' 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "pipeline failed; see " + dir.string() + ".log"};
  }
  const auto ma = manifests(runs[0]);
  const auto mb = manifests(runs[1]);
  const auto ea = extracted_sets(runs[0]);
  const auto eb = extracted_sets(runs[1]);
  std::ostringstream d;
  d << ma.size() << " manifests " << (ma == mb ? "identical" : "differ") << ", " << ea.size() << " extracted sets "
    << (ea == eb ? "identical" : "differ");
  return {!ma.empty() && ma == mb && !ea.empty() && ea == eb, d.str(), {{"manifests", ma.size()}, {"sets", ea.size()}}};
}

// Checks against recorded reference runs on the toy model. They are reported
// after the criteria and do not count toward them.
std::vector<std::pair<std::string, Outcome>> reference_checks(Fixture& fx) {
  std::vector<std::pair<std::string, Outcome>> out;
  const auto& opt = fx.options();
  if (!opt.fixtures.empty()) {
    std::vector<double> recorded;
    std::istringstream in(read_file(opt.fixtures / "toy_training_losses.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) recorded.push_back(std::stod(line.substr(line.find(',') + 1)));
    const double final_loss = fx.checkpoint().provenance.value("final_loss", 0.0);
    std::ostringstream d;
    d << "final loss " << final_loss << " vs initial " << recorded.front() << " (recorded final " << recorded.back()
      << ")";
    out.emplace_back("training loss halves", Outcome{final_loss < 0.5 * recorded.front() &&
                                                         std::abs(final_loss - recorded.back()) < 1e-3,
                                                     d.str()});
  }
  {
    const auto& batch = analysis_batch(fx);
    int with_pii = 0;
    for (const auto& text : batch.texts()) with_pii += annotate(text).empty() ? 0 : 1;
    const double share = static_cast<double>(with_pii) / static_cast<double>(batch.sequences.size());
    out.emplace_back("BOS generations contain PII",
                     Outcome{share >= 0.01, std::to_string(with_pii) + "/" + std::to_string(batch.sequences.size()) +
                                                " generations with an annotated span (need >= 1%)"});
  }
  if (fx.fixture_directions) {
    const auto& curve = fx.fixture_directions->validation_curve;
    const std::size_t first = std::min<std::size_t>(curve.size(), 10);
    const bool finite = std::all_of(curve.begin(), curve.begin() + static_cast<long>(first),
                                    [](double v) { return std::isfinite(v); });
    std::ostringstream d;
    d << "validation " << curve.front() << " -> " << fx.fixture_directions->validation_loss << " over " << curve.size()
      << " evaluations";
    out.emplace_back("direction validation loss decreases",
                     Outcome{finite && fx.fixture_directions->validation_loss < curve.front(), d.str()});
  }
  if (!seed_runs.empty()) {
    const auto& r = seed_runs.front();
    const auto& m = r.mitigation;
    out.emplace_back("extracted sets nonempty",
                     Outcome{!m.baseline.items.empty() && r.steered_unique > 0,
                             std::to_string(m.baseline.items.size()) + " baseline items, " +
                                 std::to_string(r.steered_unique) + " steered items"});
    out.emplace_back("mitigation lowers train hits",
                     Outcome{r.mitigated_hits < r.base_hits,
                             std::to_string(r.base_hits) + " -> " + std::to_string(r.mitigated_hits)});
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  Options opt;
  app.add_option("--cache", opt.cache, "Directory for the cached toy checkpoint and artifacts");
  app.add_option("--cli", opt.cli, "piisteer binary used by the reproducibility check");
  app.add_option("--pipeline", opt.pipeline, "Pipeline script used by the reproducibility check");
  app.add_option("--pipeline-config", opt.pipeline_config);
  app.add_option("--fixtures", opt.fixtures, "Directory with recorded reference-run fixtures");
  app.add_option("--only", opt.only, "Run only these criteria");
  app.add_option("--seeds", opt.seeds, "Master seeds for the leakage trend");
  app.add_option("--generations", opt.generations, "Generations per extraction run");
  app.add_flag("--strict", opt.strict, "Exit nonzero when any criterion fails");
  CLI11_PARSE(app, argc, argv);

  Fixture fx(opt);
  const std::vector<std::pair<std::string, std::function<Outcome(Fixture&)>>> criteria{
      {"zero-intervention identity", zero_intervention_identity},
      {"gradient correctness", gradient_correctness},
      {"embedding-poisoning equivalence", poisoning_equivalence},
      {"optimization effectiveness", optimization_effectiveness},
      {"leakage amplification trend", leakage_amplification},
      {"mitigation trend", mitigation_trend},
      {"logit-lens consistency", lens_consistency},
      {"DLA reconstruction", dla_reconstruction},
      {"DIM oracle equivalence", dim_equivalence},
      {"annotation closure", annotation_closure},
      {"overlap arithmetic", overlap_arithmetic},
      {"end-to-end reproducibility", reproducibility},
  };

  Json results = Json::array();
  std::ostringstream summary;
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), id) == opt.only.end()) continue;
    const auto& [name, run] = criteria[i];
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run(fx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += o.pass ? 0 : 1;
    std::ostringstream line;
    line << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << "): " << o.detail << " ["
         << std::fixed << std::setprecision(1) << secs << "s]";
    summary << line.str() << "\n";
    std::cout << line.str() << std::endl;
    results.push_back(Json{{"criterion", id}, {"name", name}, {"pass", o.pass}, {"detail", o.detail},
                           {"seconds", secs}, {"data", o.data}});
  }
  const std::size_t criteria_run = results.size();
  if (opt.only.empty()) {
    for (const auto& [name, o] : reference_checks(fx)) {
      const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " reference (" + name + "): " + o.detail;
      summary << line << "\n";
      std::cout << line << std::endl;
      results.push_back(Json{{"reference", name}, {"pass", o.pass}, {"detail", o.detail}});
    }
  }
  write_file(opt.cache / "acceptance_results.json", results.dump(2) + "\n");
  summary << criteria_run - static_cast<std::size_t>(failures) << "/" << criteria_run << " criteria passed\n";
  write_file(opt.cache / "acceptance_summary.txt", summary.str());
  std::cout << criteria_run - static_cast<std::size_t>(failures) << "/" << criteria_run << " criteria passed\n";
  return opt.strict && failures > 0 ? 1 : 0;
}
