#ifndef PIISTEER_DIRECTIONS_HPP_
#define PIISTEER_DIRECTIONS_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "piisteer/io.hpp"
#include "piisteer/model.hpp"
#include "piisteer/pii.hpp"

namespace piisteer {

enum class LossVariant { kPiiOnly, kAllTokens, kAllTokensWeighted };

std::string_view to_string(LossVariant v);
LossVariant loss_variant_from_string(std::string_view s);

/// How per-example losses combine into one update. kSum adds the gradients
/// of the accumulated examples, so a step moves as far as the same number of
/// per-example updates would; kMean divides by the example count.
enum class Reduction { kSum, kMean };

struct EarlyStopping {
  double val_fraction = 0.05;
  int evals_per_epoch = 10;
  int patience = 3;
};

struct OptimConfig {
  std::vector<int> layers;  // empty: every layer 1..num_layers
  std::vector<int> positions{0};
  double learning_rate = 1e-3;
  int epochs = 5;
  double init_scale = 0.05;
  int batch_size = 8;
  int accumulation_steps = 4;
  LossVariant loss = LossVariant::kPiiOnly;
  double pii_weight = 2.0;
  Reduction reduction = Reduction::kSum;
  EarlyStopping early_stopping;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& model) const;
  std::vector<int> resolved_layers(const ModelConfig& model) const;
};

Json optim_config_to_json(const OptimConfig& c);
OptimConfig optim_config_from_json(const Json& j);

struct DirectionSet {
  PiiClass cls = PiiClass::kEmail;
  std::map<int, VectorF> vectors;
  OptimConfig config;
  Json provenance = Json::object();
  double validation_loss = 0.0;
  std::vector<double> validation_curve;
  std::vector<double> train_curve;

  InterventionSpec intervention(int sign = 1, double scale = 1.0) const;
  int model_dim() const;
};

void save_direction_set(const DirectionSet& d, const std::filesystem::path& path);
DirectionSet load_direction_set(const std::filesystem::path& path);
std::string serialize_direction_set(const DirectionSet& d);
DirectionSet deserialize_direction_set(std::string_view bytes);

/// Per-target weights w_i (i >= 1) of the masked loss for one example.
std::vector<double> loss_weights(const LabelSequence& example, LossVariant variant, double pii_weight = 2.0);

/// -sum_i w_i log p(x_i | x_<i) under the intervention. When `grads` is
/// given it receives d(loss)/d(v_l) for every layer of the intervention.
template <typename Scalar>
double compute_pii_loss(const Transformer<Scalar>& model, const LabelSequence& example,
                        const Intervention<Scalar>& intervention, LossVariant variant = LossVariant::kPiiOnly,
                        std::map<int, Vector<Scalar>>* grads = nullptr, double pii_weight = 2.0);

/// Mean per-example loss over a set of examples.
double mean_pii_loss(const Transformer<float>& model, std::span<const LabelSequence> examples,
                     const InterventionSpec& intervention, LossVariant variant = LossVariant::kPiiOnly,
                     double pii_weight = 2.0);

struct OptimizationError : Error {
  OptimizationError(const std::string& what, std::map<int, VectorF> last_good)
      : Error(what), last_good_vectors(std::move(last_good)) {}
  std::map<int, VectorF> last_good_vectors;
};

/// Minibatch gradient descent on the directions with gradient accumulation,
/// a held-out validation split, and patience-based early stopping. Returns
/// the best-validation vectors. Model weights are never touched.
DirectionSet optimize_directions(const Transformer<float>& model, const ClassDataset& dataset,
                                 const OptimConfig& config);

/// Maximum relative error between analytic and central-difference
/// gradients over `coords_per_layer` sampled coordinates of every layer.
double gradient_check(const Transformer<double>& model, const LabelSequence& example,
                      const Intervention<double>& intervention, double epsilon, int coords_per_layer = 32,
                      std::uint64_t seed = 0, LossVariant variant = LossVariant::kPiiOnly);

struct ContrastPair {
  std::string prompt_id;
  std::vector<TokenId> positive;
  std::vector<TokenId> negative;
  int layer = 0;
};

/// Residual entering `layer` at the last position of `prefix`.
VectorF last_token_residual(const Transformer<float>& model, std::span<const TokenId> prefix, int layer);

/// Mean over pairs of h_l(x+) - h_l(x-) at the last token.
VectorF dim_direction(const Transformer<float>& model, std::span<const ContrastPair> pairs, int layer);

/// One single-layer optimization per probed layer with identical seeds.
/// An empty probe list means {0, L/2, L}.
std::map<int, DirectionSet> layer_sweep(const Transformer<float>& model, const ClassDataset& dataset,
                                        const OptimConfig& base, std::vector<int> layers_to_probe = {});

}  // namespace piisteer

#endif  // PIISTEER_DIRECTIONS_HPP_
