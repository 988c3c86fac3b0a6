#include "mvgpt/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mvgpt/error.hpp"

namespace mvgpt {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian");

namespace {

constexpr char kMagic[8] = {'M', 'V', 'G', 'P', 'T', 'C', 'K', '1'};

}  // namespace

Vocabulary Checkpoint::model_vocab() const {
  return bins ? DiscreteCodec(vocab, *bins).discrete() : vocab;
}

Transformer<float> Checkpoint::make_model() const {
  const auto mv = model_vocab();
  if (config.d_c != mv.size()) {
    throw ValidationError("checkpoint d_c " + std::to_string(config.d_c) +
                          " does not match vocabulary size " + std::to_string(mv.size()));
  }
  Transformer<float> model(config, mv.numeric_mask());
  if (params.size() != model.num_params()) {
    throw ValidationError("checkpoint holds " + std::to_string(params.size()) +
                          " parameters, model expects " + std::to_string(model.num_params()));
  }
  std::copy(params.begin(), params.end(), model.params().begin());
  return model;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto layout = make_layout(ckpt.config);
  if (layout.total() != ckpt.params.size()) {
    throw ValidationError("parameter count does not match model config");
  }
  nlohmann::ordered_json header;
  header["format_version"] = kCheckpointFormatVersion;
  header["kind"] = ckpt.is_discrete() ? "discrete" : "multivariate";
  header["model"] = ckpt.config.to_json();
  header["vocabulary"] = ckpt.vocab.to_json();
  if (ckpt.bins) header["bins"] = ckpt.bins->to_json();
  header["meta"] = ckpt.meta;
  auto manifest = nlohmann::ordered_json::array();
  for (const auto& t : layout.tensors()) {
    manifest.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", t.offset}});
  }
  header["tensors"] = std::move(manifest);
  const std::string text = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write checkpoint '" + path + "'");
    const auto len = static_cast<std::uint32_t>(text.size());
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(reinterpret_cast<const char*>(ckpt.params.data()),
              static_cast<std::streamsize>(ckpt.params.size() * sizeof(float)));
    if (!out) throw ValidationError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint '" + path + "'");
  char magic[8];
  std::uint32_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw ValidationError("'" + path + "' is not a checkpoint");
  }
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (!in) throw ValidationError("truncated checkpoint header in '" + path + "'");

  Checkpoint ckpt;
  try {
    const auto header = nlohmann::ordered_json::parse(text);
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ValidationError("unsupported checkpoint format version");
    }
    ckpt.config = ModelConfig::from_json(header.at("model"));
    ckpt.vocab = Vocabulary::from_json(header.at("vocabulary"));
    if (header.contains("bins")) ckpt.bins = BinTable::from_json(header.at("bins"));
    ckpt.meta = header.value("meta", nlohmann::ordered_json::object());
    const auto layout = make_layout(ckpt.config);
    const auto& manifest = header.at("tensors");
    if (manifest.size() != layout.tensors().size()) {
      throw ValidationError("checkpoint tensor manifest does not match model config");
    }
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& t = layout.tensors()[i];
      if (manifest[i].at("name").get<std::string>() != t.name ||
          manifest[i].at("offset").get<std::size_t>() != t.offset ||
          manifest[i].at("shape").get<std::vector<std::size_t>>() != t.shape) {
        throw ValidationError("checkpoint tensor '" + t.name + "' does not match model config");
      }
    }
    ckpt.params.resize(layout.total());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint header in '" + path + "': " + e.what());
  }
  in.read(reinterpret_cast<char*>(ckpt.params.data()),
          static_cast<std::streamsize>(ckpt.params.size() * sizeof(float)));
  if (!in) throw ValidationError("truncated checkpoint data in '" + path + "'");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw ValidationError("trailing bytes in checkpoint '" + path + "'");
  }
  return ckpt;
}

}  // namespace mvgpt
