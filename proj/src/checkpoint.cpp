#include "mpnerf/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "mpnerf/errors.hpp"

namespace mpnerf::train {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {
constexpr char kMagic[8] = {'M', 'P', 'N', 'F', 'C', 'K', 'P', 'T'};
}

void save_checkpoint(const std::string& path, const net::ParamStore& store,
                     const CheckpointMeta& meta) {
  json header;
  header["version"] = meta.version;
  header["config_hash"] = meta.config_hash;
  header["config_text"] = meta.config_text;
  header["step"] = meta.step;
  header["epoch"] = meta.epoch;
  header["adam_t"] = meta.adam_t;
  header["params"] = json::array();

  uint64_t offset = 0;  // in floats
  for (const auto& [name, p] : store.params()) {
    uint64_t n = p.value.size();
    header["params"].push_back({{"name", name}, {"shape", p.shape}, {"offset", offset}});
    offset += 3 * n;  // value, m, v
  }

  std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot write " + path);
  out.write(kMagic, 8);
  uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(htext.data(), static_cast<std::streamsize>(hlen));
  std::vector<float> zeros;
  for (const auto& [name, p] : store.params()) {
    auto write_block = [&](const std::vector<float>& block) {
      if (block.empty()) {
        zeros.assign(p.value.size(), 0.f);
        out.write(reinterpret_cast<const char*>(zeros.data()),
                  static_cast<std::streamsize>(zeros.size() * sizeof(float)));
      } else {
        out.write(reinterpret_cast<const char*>(block.data()),
                  static_cast<std::streamsize>(block.size() * sizeof(float)));
      }
    };
    write_block(p.value);
    write_block(p.m);
    write_block(p.v);
  }
  if (!out) throw IoError("checkpoint: short write to " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, net::ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path);
  char magic[8];
  uint64_t hlen = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&hlen), 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("checkpoint: bad magic in " + path);
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("checkpoint: truncated header in " + path);

  json header;
  try {
    header = json::parse(htext);
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint: corrupt header in " + path + ": " + e.what());
  }
  if (header["version"].get<int>() != kCheckpointVersion)
    throw ConfigError("checkpoint: version mismatch in " + path);

  CheckpointMeta meta;
  meta.version = header["version"].get<int>();
  meta.config_hash = header["config_hash"].get<uint64_t>();
  meta.config_text = header.value("config_text", std::string());
  meta.step = header["step"].get<long>();
  meta.epoch = header["epoch"].get<int>();
  meta.adam_t = header["adam_t"].get<long>();

  store.params().clear();
  for (const auto& entry : header["params"]) {
    net::ParamStore::Param p;
    p.shape = entry["shape"].get<ad::Shape>();
    long n = ad::numel(p.shape);
    p.value.resize(n);
    p.m.resize(n);
    p.v.resize(n);
    in.seekg(static_cast<std::streamoff>(16 + hlen +
                                         entry["offset"].get<uint64_t>() * sizeof(float)));
    auto read_block = [&](std::vector<float>& block) {
      in.read(reinterpret_cast<char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(float)));
    };
    read_block(p.value);
    read_block(p.m);
    read_block(p.v);
    if (!in) throw IoError("checkpoint: truncated payload in " + path);
    store.params().emplace(entry["name"].get<std::string>(), std::move(p));
  }
  return meta;
}

}  // namespace mpnerf::train
