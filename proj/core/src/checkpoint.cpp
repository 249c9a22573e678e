#include "dssl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dssl/errors.hpp"

namespace dssl {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_le(std::vector<unsigned char>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((bits >> (8 * i)) & 0xff));
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

CheckpointError manifest_error(const fs::path& stem, const std::string& what) {
  return CheckpointError(CheckpointError::Kind::kManifest, "corrupt checkpoint manifest " +
                                                               manifest_path(stem).string() + ": " + what);
}

void write_file(const fs::path& path, const void* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + path.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
  if (!out) throw CheckpointError(CheckpointError::Kind::kIo, "write failed for " + path.string());
}

}  // namespace

void Checkpoint::add(const std::string& name, Tensor t) {
  if (find(name)) throw ContractError("duplicate checkpoint tensor '" + name + "'");
  tensors.emplace_back(name, std::move(t));
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(const std::string& name) const {
  const Tensor* t = find(name);
  if (!t) throw CheckpointError(CheckpointError::Kind::kMissing, "checkpoint has no tensor '" + name + "'");
  return *t;
}

fs::path manifest_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }
fs::path blob_path(const fs::path& stem) { return fs::path(stem.string() + ".bin"); }

void save_checkpoint(const Checkpoint& ckpt, const fs::path& stem) {
  json manifest;
  manifest["format"] = "dssl-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["dtype"] = "f64";
  manifest["byte_order"] = "little";
  manifest["meta"] = ckpt.meta;
  json table = json::array();
  std::vector<unsigned char> blob;
  std::size_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    if (!all_finite(t)) throw ContractError("refusing to save non-finite tensor '" + name + "'");
    table.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"length", t.numel()}});
    for (double v : t.data()) put_le(blob, v);
    offset += t.numel();
  }
  manifest["tensors"] = table;
  manifest["blob_values"] = offset;

  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const std::string text = manifest.dump(2) + "\n";
  const fs::path bin_tmp = fs::path(blob_path(stem).string() + ".tmp");
  const fs::path json_tmp = fs::path(manifest_path(stem).string() + ".tmp");
  write_file(bin_tmp, blob.data(), blob.size());
  write_file(json_tmp, text.data(), text.size());
  fs::rename(bin_tmp, blob_path(stem));
  fs::rename(json_tmp, manifest_path(stem));
}

Checkpoint load_checkpoint(const fs::path& stem) {
  std::ifstream mf(manifest_path(stem));
  if (!mf) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + manifest_path(stem).string());
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw manifest_error(stem, e.what());
  }

  Checkpoint ckpt;
  std::vector<std::pair<std::string, Shape>> entries;
  std::size_t blob_values = 0;
  try {
    if (manifest.at("format").get<std::string>() != "dssl-checkpoint") throw manifest_error(stem, "unknown format");
    if (manifest.at("version").get<int>() != kCheckpointVersion) throw manifest_error(stem, "unsupported version");
    if (manifest.at("dtype").get<std::string>() != "f64" || manifest.at("byte_order").get<std::string>() != "little") {
      throw manifest_error(stem, "unsupported dtype or byte order");
    }
    ckpt.meta = manifest.value("meta", json::object());
    blob_values = manifest.at("blob_values").get<std::size_t>();
    std::size_t expected_offset = 0;
    for (const auto& e : manifest.at("tensors")) {
      auto name = e.at("name").get<std::string>();
      auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto length = e.at("length").get<std::size_t>();
      if (length != shape_numel(shape)) throw manifest_error(stem, "length of '" + name + "' disagrees with shape");
      if (offset != expected_offset) throw manifest_error(stem, "tensor '" + name + "' overlaps or leaves a gap");
      expected_offset += length;
      for (const auto& [seen, s] : entries) {
        if (seen == name) throw manifest_error(stem, "duplicate tensor '" + name + "'");
      }
      entries.emplace_back(std::move(name), std::move(shape));
    }
    if (expected_offset != blob_values) throw manifest_error(stem, "tensor lengths do not sum to blob_values");
  } catch (const json::exception& e) {
    throw manifest_error(stem, e.what());
  }

  std::ifstream bf(blob_path(stem), std::ios::binary);
  if (!bf) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open " + blob_path(stem).string());
  const std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
  if (blob.size() < blob_values * 8) {
    throw CheckpointError(CheckpointError::Kind::kTruncated,
                          "checkpoint blob " + blob_path(stem).string() + " truncated: " + std::to_string(blob.size()) +
                              " bytes, expected " + std::to_string(blob_values * 8));
  }
  if (blob.size() != blob_values * 8) {
    throw manifest_error(stem, "blob has " + std::to_string(blob.size()) + " bytes, manifest expects " +
                                   std::to_string(blob_values * 8));
  }

  std::size_t cursor = 0;
  for (auto& [name, shape] : entries) {
    Tensor t(shape);
    for (double& v : t.data()) {
      v = get_le(blob.data() + cursor * 8);
      ++cursor;
    }
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

json encoder_config_to_json(const EncoderConfig& c) {
  return json{{"in_channels", c.in_channels},       {"image_height", c.image_height},
              {"image_width", c.image_width},       {"conv1_channels", c.conv1_channels},
              {"conv2_channels", c.conv2_channels}, {"kernel", c.kernel},
              {"stride", c.stride},                 {"pad", c.pad},
              {"d_backbone", c.d_backbone},         {"d", c.d}};
}

EncoderConfig encoder_config_from_json(const json& j) {
  EncoderConfig c;
  try {
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.image_height = j.at("image_height").get<std::size_t>();
    c.image_width = j.at("image_width").get<std::size_t>();
    c.conv1_channels = j.at("conv1_channels").get<std::size_t>();
    c.conv2_channels = j.at("conv2_channels").get<std::size_t>();
    c.kernel = j.at("kernel").get<std::size_t>();
    c.stride = j.at("stride").get<std::size_t>();
    c.pad = j.at("pad").get<std::size_t>();
    c.d_backbone = j.at("d_backbone").get<std::size_t>();
    c.d = j.at("d").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::kManifest, std::string("bad encoder config: ") + e.what());
  }
  return c;
}

void append_encoder(Checkpoint& ckpt, const std::string& prefix, const EncoderParams& enc) {
  for (const auto& [name, p] : enc.backbone) ckpt.add(prefix + ".backbone." + name, p.value);
  for (const auto& [name, p] : enc.head) ckpt.add(prefix + ".head." + name, p.value);
}

EncoderParams load_encoder(const Checkpoint& ckpt, const std::string& prefix, const EncoderConfig& expected) {
  Rng unused(0);
  EncoderParams enc = init_encoder(expected, unused);
  auto check = [&](ParamSet& set, const std::string& part) {
    for (auto& [name, p] : set) {
      const std::string full = prefix + "." + part + "." + name;
      const Tensor* t = ckpt.find(full);
      if (!t) throw CheckpointError(CheckpointError::Kind::kMissing, "checkpoint is missing tensor '" + full + "'");
      if (t->shape() != p.value.shape()) {
        throw CheckpointError(CheckpointError::Kind::kShape, "tensor '" + full + "' has shape " +
                                                                 shape_to_string(t->shape()) + ", expected " +
                                                                 shape_to_string(p.value.shape()));
      }
    }
  };
  check(enc.backbone, "backbone");
  check(enc.head, "head");
  for (auto& [name, p] : enc.backbone) p.value = ckpt.at(prefix + ".backbone." + name);
  for (auto& [name, p] : enc.head) p.value = ckpt.at(prefix + ".head." + name);
  return enc;
}

Checkpoint moco_checkpoint(const MoCoState& state) {
  Checkpoint ckpt;
  ckpt.meta["encoder"] = encoder_config_to_json(state.encoder);
  ckpt.meta["step_count"] = state.step_count;
  ckpt.meta["queue_ptr"] = state.queue.ptr();
  ckpt.meta["queue_filled"] = state.queue.filled();
  append_encoder(ckpt, "query", state.query);
  append_encoder(ckpt, "key", state.key);
  ckpt.add("queue.keys", state.queue.keys());
  return ckpt;
}

}  // namespace dssl
