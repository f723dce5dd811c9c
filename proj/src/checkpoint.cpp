#include "dosgan/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dosgan {

namespace {

struct Hasher {
  std::uint64_t h = 1469598103934665603ull;
  void add(const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  }
};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

void save_archive(const fs::path& path, const Archive& archive) {
  nlohmann::json header = archive.meta;
  header["format"] = kCheckpointFormat;
  nlohmann::json table = nlohmann::json::array();
  for (const auto& [name, m] : archive.blobs) table.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
  header["blobs"] = table;
  const std::string header_text = header.dump();

  std::string buf = std::string(kCheckpointFormat) + "\n";
  put_u64(buf, header_text.size());
  buf += header_text;
  for (const auto& [name, m] : archive.blobs)
    buf.append(reinterpret_cast<const char*>(m.data()), std::size_t(m.size()) * sizeof(float));
  Hasher hasher;
  hasher.add(buf.data(), buf.size());
  put_u64(buf, hasher.h);

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
    out.write(buf.data(), std::streamsize(buf.size()));
    if (!out) throw Error("cannot write checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

Archive load_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  const std::string tag = std::string(kCheckpointFormat) + "\n";
  if (buf.size() < tag.size() + 16 || buf.compare(0, tag.size(), tag) != 0)
    throw Error("not a " + std::string(kCheckpointFormat) + " checkpoint: " + path.string());
  const std::size_t body = buf.size() - 8;
  Hasher hasher;
  hasher.add(buf.data(), body);
  if (hasher.h != get_u64(buf.data() + body)) throw Error("checkpoint checksum mismatch (corrupt file): " + path.string());

  std::size_t pos = tag.size();
  const std::uint64_t header_len = get_u64(buf.data() + pos);
  pos += 8;
  if (header_len > body - pos) throw Error("checkpoint header truncated: " + path.string());
  Archive a;
  try {
    a.meta = nlohmann::json::parse(buf.substr(pos, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  pos += header_len;
  if (a.meta.value("format", "") != kCheckpointFormat) throw Error("checkpoint format tag mismatch: " + path.string());
  for (const auto& entry : a.meta.at("blobs")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const std::size_t bytes = std::size_t(rows * cols) * sizeof(float);
    if (pos + bytes > body) throw Error("checkpoint blob data truncated: " + path.string());
    Matrix<float> m(rows, cols);
    std::memcpy(m.data(), buf.data() + pos, bytes);
    pos += bytes;
    a.blobs.emplace(entry.at("name").get<std::string>(), std::move(m));
  }
  if (pos != body) throw Error("checkpoint has trailing bytes: " + path.string());
  a.meta.erase("blobs");
  return a;
}

nlohmann::json to_json(const NetConfig& cfg) {
  return {{"image_h", cfg.image_h},         {"image_w", cfg.image_w},
          {"channels", cfg.channels},       {"feature_dim", cfg.feature_dim},
          {"num_domains", cfg.num_domains}, {"base_width", cfg.base_width},
          {"residual_blocks", cfg.residual_blocks}, {"downsample_stages", cfg.downsample_stages}};
}

NetConfig net_config_from_json(const nlohmann::json& j) {
  NetConfig cfg;
  try {
    cfg.image_h = j.at("image_h").get<int>();
    cfg.image_w = j.at("image_w").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.num_domains = j.at("num_domains").get<int>();
    cfg.base_width = j.at("base_width").get<int>();
    cfg.residual_blocks = j.at("residual_blocks").get<int>();
    cfg.downsample_stages = j.at("downsample_stages").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad network config in checkpoint: " + std::string(e.what()));
  }
  cfg.validate();
  return cfg;
}

void store_parameters(Archive& archive, const std::string& prefix, const ConstParameterList<float>& params) {
  for (const auto* p : params) archive.blobs[prefix + "/" + p->name] = p->value;
}

void restore_parameters(const Archive& archive, const std::string& prefix, const ParameterList<float>& params) {
  for (auto* p : params) {
    const std::string key = prefix + "/" + p->name;
    auto it = archive.blobs.find(key);
    if (it == archive.blobs.end()) throw Error("checkpoint is missing " + key);
    if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
      throw Error("checkpoint shape mismatch for " + key);
    p->value = it->second;
  }
}

namespace {

/// Position-qualified key; names repeat across networks sharing one optimizer.
std::string moment_key(const std::string& prefix, const char* tag, std::size_t i, const std::string& name) {
  return prefix + tag + std::to_string(i) + "/" + name;
}

}  // namespace

void store_optimizer(Archive& archive, const std::string& prefix, const Adam<float>& opt,
                     const ConstParameterList<float>& params) {
  if (params.size() != opt.first_moments().size()) throw Error("optimizer does not match parameters for " + prefix);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [tag, store] : {std::pair{"/m/", &opt.first_moments()}, std::pair{"/v/", &opt.second_moments()}}) {
      const std::string key = moment_key(prefix, tag, i, params[i]->name);
      if (!archive.blobs.emplace(key, (*store)[i]).second) throw Error("duplicate checkpoint entry " + key);
    }
  }
  archive.meta["optimizers"][prefix] = opt.steps();
}

void restore_optimizer(const Archive& archive, const std::string& prefix, Adam<float>& opt,
                       const ParameterList<float>& params) {
  opt = Adam<float>(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (auto [tag, store] : {std::pair{"/m/", &opt.first_moments()}, std::pair{"/v/", &opt.second_moments()}}) {
      const std::string key = moment_key(prefix, tag, i, params[i]->name);
      auto it = archive.blobs.find(key);
      if (it == archive.blobs.end()) throw Error("checkpoint is missing optimizer state " + key);
      if (it->second.rows() != (*store)[i].rows() || it->second.cols() != (*store)[i].cols())
        throw Error("optimizer state shape mismatch for " + key);
      (*store)[i] = it->second;
    }
  }
  try {
    opt.set_steps(archive.meta.at("optimizers").at(prefix).get<std::int64_t>());
  } catch (const nlohmann::json::exception&) {
    throw Error("checkpoint is missing optimizer step count for " + prefix);
  }
}

}  // namespace dosgan
