#include "piisteer/checkpoint.hpp"

namespace piisteer {

namespace {
constexpr std::string_view kMagic = "PIISTEER-CKPT\n";
constexpr std::uint32_t kVersion = 1;
}  // namespace

Json config_to_json(const ModelConfig& c) {
  return Json{{"num_layers", c.num_layers},   {"model_dim", c.model_dim},
              {"num_heads", c.num_heads},     {"vocab_size", c.vocab_size},
              {"context_length", c.context_length}, {"seed", c.seed}};
}

ModelConfig config_from_json(const Json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<int>();
  c.model_dim = j.at("model_dim").get<int>();
  c.num_heads = j.at("num_heads").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.context_length = j.at("context_length").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

std::string parameters_digest(const Parameters<float>& params) {
  ByteWriter w;
  params.for_each([&](const std::string&, const MatrixF& m) {
    w.f32s(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  return sha256_hex(w.str());
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Json tensors = Json::array();
  ckpt.params.for_each([&](const std::string& name, const MatrixF& m) {
    tensors.push_back(Json{{"name", name}, {"shape", {m.rows(), m.cols()}}});
  });
  Json header{{"config", config_to_json(ckpt.config)},
              {"tokenizer", {{"kind", "char"}, {"alphabet", Tokenizer().alphabet()}, {"bos", Tokenizer::kBos},
                             {"eos", Tokenizer::kEos}}},
              {"provenance", ckpt.provenance},
              {"dtype", "float32-le"},
              {"tensors", tensors}};
  ByteWriter w;
  write_container_header(w, kMagic, kVersion, header);
  ckpt.params.for_each([&](const std::string&, const MatrixF& m) {
    w.f32s(std::span<const float>(m.data(), static_cast<std::size_t>(m.size())));
  });
  return w.str();
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  ByteReader r(bytes);
  Json header = read_container_header(r, kMagic, kVersion);
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.provenance = header.value("provenance", Json::object());
    const auto& tok = header.at("tokenizer");
    if (tok.at("alphabet").get<std::string>() != Tokenizer().alphabet() ||
        ckpt.config.vocab_size != Tokenizer().vocab_size()) {
      throw CompatibilityError("checkpoint tokenizer does not match this build's tokenizer");
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
  ckpt.params = Parameters<float>::zeros(ckpt.config);
  const auto& tensors = header.at("tensors");
  std::size_t i = 0;
  ckpt.params.for_each([&](const std::string& name, MatrixF& m) {
    if (i >= tensors.size() || tensors[i].at("name") != name || tensors[i].at("shape")[0] != m.rows() ||
        tensors[i].at("shape")[1] != m.cols()) {
      throw FormatError("checkpoint tensor table mismatch at " + name);
    }
    r.f32s(std::span<float>(m.data(), static_cast<std::size_t>(m.size())));
    ++i;
  });
  if (!r.done()) throw FormatError("trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace piisteer
