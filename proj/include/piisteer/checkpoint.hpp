#ifndef PIISTEER_CHECKPOINT_HPP_
#define PIISTEER_CHECKPOINT_HPP_

#include <filesystem>
#include <string>

#include "piisteer/io.hpp"
#include "piisteer/model.hpp"
#include "piisteer/tokenizer.hpp"

namespace piisteer {

/// Trained weights plus everything needed to rebuild the model. The
/// tokenizer is fixed, so only its alphabet is recorded for verification.
struct Checkpoint {
  ModelConfig config;
  Parameters<float> params;
  Json provenance = Json::object();

  Transformer<float> model() const { return Transformer<float>(config, params); }
  Transformer<double> model_double() const { return Transformer<double>(config, params.cast<double>()); }
};

Json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const Json& j);

/// SHA-256 over the raw tensor bytes in serialization order.
std::string parameters_digest(const Parameters<float>& params);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws FormatError on a malformed file, CompatibilityError on a tokenizer mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace piisteer

#endif  // PIISTEER_CHECKPOINT_HPP_
